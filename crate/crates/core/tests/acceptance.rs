//! Acceptance criteria. Each test prints one `ACn PASS|FAIL` line with
//! the measured values, then asserts. Tests hold a shared lock so timing
//! bounds are measured without contention.

use std::collections::HashMap;
use std::fs;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use qgen_core::corpus::{generate_synthetic, split_three_way};
use qgen_core::evaluator::{EvaluatorConfig, EvaluatorModel, RtdConfig};
use qgen_core::generator::{GeneratorConfig, GeneratorModel};
use qgen_core::metrics::{bleu_sentence, reward, BLEU_MAX_N, SMOOTHING_EPSILON};
use qgen_core::numerics::{finite_diff_check, GradBuffer};
use qgen_core::pipeline::{self, rtd_corpus, IngestSource};
use qgen_core::tokenizer::{build_vocab, Vocab};
use qgen_core::training::{
    batch_gradient, evaluate, gradient_weight, loss_base, loss_rl, loss_total, prepare_examples, teacher_forced_accuracy,
    train, Example, RewardMode, RewardScorer, RewardSource, TrainConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

static SERIAL: Mutex<()> = Mutex::new(());

fn serial() -> std::sync::MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

fn report(id: u32, pass: bool, detail: String) {
    println!("AC{id} {}: {detail}", if pass { "PASS" } else { "FAIL" });
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    v[v.len() / 2]
}

fn synthetic_examples(n: usize, seed: u64, max_src: usize, max_tgt: usize) -> (Vocab, Vec<Example>) {
    let triples = generate_synthetic(n, seed).unwrap();
    let (vocab, _) = build_vocab(&triples, 1, 30_000).unwrap();
    let ex = prepare_examples(&triples, &vocab, max_src, max_tgt).unwrap();
    (vocab, ex)
}

fn small_generator(vocab: &Vocab, layers: usize, max_src: usize, max_tgt: usize) -> GeneratorModel {
    GeneratorModel::init(GeneratorConfig {
        d_model: 16,
        n_heads: 2,
        n_enc_layers: layers,
        n_dec_layers: layers,
        d_ff: 32,
        max_src_len: max_src,
        max_tgt_len: max_tgt,
        vocab_size: vocab.size(),
        dropout: 0.0,
        seed: 21,
        tie_embeddings: true,
    })
    .unwrap()
}

fn small_evaluator(vocab: &Vocab) -> EvaluatorModel {
    EvaluatorModel::random_frozen(EvaluatorConfig {
        d_model: 16,
        n_heads: 2,
        n_layers: 1,
        d_ff: 32,
        max_len: 32,
        vocab_size: vocab.size(),
        seed: 22,
    })
    .unwrap()
}

#[test]
fn ac1_reward_algebra() {
    let _g = serial();
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut bounded = true;
    let mut monotone = true;
    for _ in 0..10_000 {
        let r1: f64 = rng.random_range(0.0..=1.0);
        let r2: f64 = rng.random_range(-1.0..=1.0);
        let alpha: f64 = rng.random_range(0.05..=1.0f64).max(0.050_000_1);
        let r = reward(r1, r2, alpha).unwrap().r;
        bounded &= (0.0..=1.0).contains(&r);
        let up1 = reward((r1 + rng.random_range(0.0..=1.0 - r1)).min(1.0), r2, alpha).unwrap().r;
        let up2 = reward(r1, (r2 + rng.random_range(0.0..=1.0 - r2)).min(1.0), alpha).unwrap().r;
        monotone &= up1 >= r && up2 >= r;
    }
    let mut anchors = Vec::new();
    for alpha in [0.0500001, 0.197, 0.5, 1.0] {
        anchors.push((reward(1.0, 1.0, alpha).unwrap().r, 1.0));
        anchors.push((reward(0.0, -1.0, alpha).unwrap().r, 0.0));
        anchors.push((reward(0.5, 0.0, alpha).unwrap().r, 0.5));
    }
    anchors.push((reward(1.0, 0.0, 0.197).unwrap().r, 1.0 / 1.803));
    let worst = anchors.iter().map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let elapsed = started.elapsed();
    let pass = bounded && monotone && worst <= 1e-12 && elapsed < Duration::from_secs(1);
    report(
        1,
        pass,
        format!("bounded={bounded} monotone={monotone} worst anchor error={worst:.1e} r(1,0,0.197)={:.5} in {elapsed:?}", 1.0 / 1.803),
    );
    assert!(pass);
}

#[test]
fn ac2_loss_identities() {
    let _g = serial();
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let slp = -rng.random_range(0.0..50.0);
        let gamma = rng.random_range(0.0500001..=1.0);
        let base = loss_base(slp).unwrap();
        worst = worst.max((loss_total(base, loss_rl(slp, 0.0).unwrap(), gamma).unwrap() - base).abs());
        let r = rng.random_range(0.0..=1.0);
        worst = worst.max((loss_total(base, loss_rl(slp, r).unwrap(), 1.0).unwrap() - base).abs());
        worst = worst.max((loss_total(base, loss_rl(slp, 1.0).unwrap(), gamma).unwrap() - gamma * base).abs());
    }
    // The same identities on model batches, per example.
    let (vocab, ex) = synthetic_examples(16, 2, 48, 14);
    let model = small_generator(&vocab, 1, 48, 14);
    let ev = small_evaluator(&vocab);
    for (gamma, c) in [(0.3, 0.0), (1.0, 0.42), (0.09, 1.0)] {
        let cfg = TrainConfig {
            gamma,
            batch_size: 16,
            accum_steps: 1,
            reward_mode: RewardMode::BleuPlusSemantic,
            ..TrainConfig::synthetic()
        };
        let mut scorer = RewardScorer::new(Some(&ev), cfg.reward_mode, cfg.alpha).unwrap();
        let (_, loss) = batch_gradient(&model, &mut scorer, &ex, &cfg, RewardSource::Constant(c), None).unwrap();
        for e in &loss.examples {
            let expected = if c == 1.0 { gamma * e.l_base } else { e.l_base };
            worst = worst.max((e.l_total - expected).abs());
        }
    }
    let elapsed = started.elapsed();
    let pass = worst <= 1e-12 && elapsed < Duration::from_secs(1);
    report(2, pass, format!("worst identity error={worst:.1e} in {elapsed:?}"));
    assert!(pass);
}

/// Brute-force BLEU over n-gram lists compared by value. The effective order
/// is `min(4, |cand|, |ref|)`; zero clipped counts become `SMOOTHING_EPSILON`.
fn oracle_bleu(cand: &[u32], refr: &[u32]) -> f64 {
    if cand.is_empty() || refr.is_empty() {
        return 0.0;
    }
    let order = BLEU_MAX_N.min(cand.len()).min(refr.len());
    let mut log_sum = 0.0;
    for n in 1..=order {
        let cgrams: Vec<&[u32]> = cand.windows(n).collect();
        let rgrams: Vec<&[u32]> = refr.windows(n).collect();
        let mut seen: Vec<&[u32]> = Vec::new();
        let mut clipped = 0usize;
        for g in &cgrams {
            if seen.contains(g) {
                continue;
            }
            seen.push(g);
            let in_c = cgrams.iter().filter(|x| *x == g).count();
            let in_r = rgrams.iter().filter(|x| *x == g).count();
            clipped += in_c.min(in_r);
        }
        let num = if clipped == 0 { SMOOTHING_EPSILON } else { clipped as f64 };
        log_sum += (num / cgrams.len() as f64).ln();
    }
    let bp = if cand.len() >= refr.len() {
        1.0
    } else {
        (1.0 - refr.len() as f64 / cand.len() as f64).exp()
    };
    bp * (log_sum / order as f64).exp()
}

#[test]
fn ac3_bleu_oracle() {
    let _g = serial();
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let cl = rng.random_range(1..=20);
        let rl = rng.random_range(1..=20);
        let cand: Vec<u32> = (0..cl).map(|_| rng.random_range(0..10)).collect();
        let refr: Vec<u32> = (0..rl).map(|_| rng.random_range(0..10)).collect();
        worst = worst.max((bleu_sentence(&cand, &refr, BLEU_MAX_N) - oracle_bleu(&cand, &refr)).abs());
    }
    let words = ["the", "cat", "is", "on", "mat"];
    let ids = |s: &str| -> Vec<u32> { s.split(' ').map(|w| words.iter().position(|x| *x == w).unwrap() as u32).collect() };
    let cand = ids("the the the the the the the");
    let refr = ids("the cat is on the mat");
    let (clipped, total) = qgen_core::metrics::modified_precision(&cand, &refr, 1);
    let clip_ok = clipped == 2 && total == 7;
    worst = worst.max((bleu_sentence(&cand, &refr, BLEU_MAX_N) - oracle_bleu(&cand, &refr)).abs());
    let elapsed = started.elapsed();
    let pass = worst <= 1e-9 && clip_ok && elapsed < Duration::from_secs(10);
    report(3, pass, format!("max |bleu - oracle|={worst:.1e}, clipped unigrams {clipped}/{total} in {elapsed:?}"));
    assert!(pass);
}

#[test]
fn ac4_gradient_correctness() {
    let _g = serial();
    let started = Instant::now();
    let (vocab, ex) = synthetic_examples(6, 4, 48, 14);
    let model = small_generator(&vocab, 2, 48, 14);
    let ev = small_evaluator(&vocab);
    let batch = &ex[..2];
    let c = 0.37;
    let gamma = 0.09;
    let weight = gradient_weight(c, gamma);
    let cfg = TrainConfig {
        gamma,
        batch_size: 2,
        accum_steps: 1,
        reward_mode: RewardMode::BleuPlusSemantic,
        ..TrainConfig::synthetic()
    };
    let mut scorer = RewardScorer::new(Some(&ev), cfg.reward_mode, cfg.alpha).unwrap();
    let (analytic, _) = batch_gradient(&model, &mut scorer, batch, &cfg, RewardSource::Constant(c), None).unwrap();
    // Mean over the batch of L = γ·L_base + (1−γ)(1−c)·L_base.
    let objective = |p: &qgen_core::numerics::ParamSet| -> qgen_core::Result<f64> {
        let mut total = 0.0;
        for e in batch {
            let slp = model.teacher_forced_pass(p, e.src.ids(), e.tgt.ids(), None, false)?.sum_log_prob();
            let base = loss_base(slp)?;
            total += loss_total(base, loss_rl(slp, c)?, gamma)?;
        }
        Ok(total / batch.len() as f64)
    };
    let fd = finite_diff_check(objective, model.params(), &analytic, 1e-5, 1).unwrap();
    let mut none = RewardScorer::new(None, RewardMode::None, cfg.alpha).unwrap();
    let (mle, _) = batch_gradient(&model, &mut none, batch, &cfg, RewardSource::FromConfig, None).unwrap();
    let mut scaled = mle.clone();
    scaled.scale(weight);
    let scalar_err = analytic.max_abs_diff(&scaled) / mle.max_abs();
    let elapsed = started.elapsed();
    let pass = fd.max_rel_error < 1e-4 && scalar_err <= 1e-10 && elapsed < Duration::from_secs(120);
    report(
        4,
        pass,
        format!(
            "finite differences over {} scalars: max rel error {:.2e}; scalar-multiple error {:.1e} (weight {weight:.4}) in {elapsed:?}",
            fd.checked, fd.max_rel_error, scalar_err
        ),
    );
    assert!(pass);
}

#[test]
fn ac5_gradient_accumulation() {
    let _g = serial();
    let started = Instant::now();
    let (vocab, ex) = synthetic_examples(32, 5, 48, 14);
    let model = small_generator(&vocab, 2, 48, 14);
    let ev = small_evaluator(&vocab);
    let cfg = |accum| TrainConfig {
        batch_size: 32,
        accum_steps: accum,
        reward_mode: RewardMode::BleuPlusSemantic,
        ..TrainConfig::synthetic()
    };
    let mut scorer = RewardScorer::new(Some(&ev), RewardMode::BleuPlusSemantic, 0.197).unwrap();
    let (accumulated, _) = batch_gradient(&model, &mut scorer, &ex, &cfg(4), RewardSource::FromConfig, None).unwrap();
    let (single, _) = batch_gradient(&model, &mut scorer, &ex, &cfg(1), RewardSource::FromConfig, None).unwrap();
    // Third route: one example at a time.
    let mut per_example = GradBuffer::zeros_like(model.params());
    for e in &ex {
        let (g, _) = batch_gradient(&model, &mut scorer, std::slice::from_ref(e), &cfg(1), RewardSource::FromConfig, None).unwrap();
        per_example.merge(&g).unwrap();
    }
    per_example.scale(1.0 / ex.len() as f64);
    let d1 = accumulated.max_abs_diff(&single);
    let d2 = accumulated.max_abs_diff(&per_example);
    let elapsed = started.elapsed();
    let pass = d1 <= 1e-10 && d2 <= 1e-10 && elapsed < Duration::from_secs(60);
    report(5, pass, format!("4x8 vs 1x32 max diff {d1:.1e}, vs per-example sum {d2:.1e} in {elapsed:?}"));
    assert!(pass);
}

#[test]
fn ac6_frozen_evaluator_invariance() {
    let _g = serial();
    let triples = generate_synthetic(240, 6).unwrap();
    let split = split_three_way(&triples, 0.1, 0.06, 6).unwrap();
    let (vocab, _) = build_vocab(&split.train, 1, 30_000).unwrap();
    let mut ev = EvaluatorModel::init(EvaluatorConfig::desk(vocab.size())).unwrap();
    ev.pretrain_rtd(&rtd_corpus(&split.train, &vocab), &RtdConfig { epochs: 1, ..RtdConfig::default() })
        .unwrap();
    ev.freeze();
    let before = ev.param_hash();
    let tr = prepare_examples(&split.train, &vocab, 64, 16).unwrap();
    let dev = prepare_examples(&split.dev, &vocab, 64, 16).unwrap();
    let mut model = GeneratorModel::init(GeneratorConfig::desk(vocab.size())).unwrap();
    let cfg = TrainConfig {
        batch_size: 8,
        accum_steps: 2,
        epochs: 1000,
        max_steps: 200,
        reward_mode: RewardMode::BleuPlusSemantic,
        ..TrainConfig::synthetic()
    };
    let out = train(&mut model, Some(&ev), &tr, &dev, &cfg, RewardSource::FromConfig, |_, _, _| Ok(())).unwrap();
    let after = ev.param_hash();
    let pass = out.steps == 200 && before == after && ev.verify_frozen().is_ok();
    report(6, pass, format!("{} steps, hash before {} after {}", out.steps, &before[..16], &after[..16]));
    assert!(pass);
}

#[test]
fn ac7_overfit_sanity() {
    let _g = serial();
    let started = Instant::now();
    let (vocab, ex) = synthetic_examples(64, 7, 64, 16);
    let mut model = GeneratorModel::init(GeneratorConfig::desk(vocab.size())).unwrap();
    let cfg = TrainConfig {
        gamma: 1.0,
        lr: 1e-3,
        batch_size: 16,
        accum_steps: 1,
        epochs: 10_000,
        max_steps: 500,
        reward_mode: RewardMode::None,
        ..TrainConfig::synthetic()
    };
    let out = train(&mut model, None, &ex, &ex[..8], &cfg, RewardSource::FromConfig, |_, _, _| Ok(())).unwrap();
    let accuracy = teacher_forced_accuracy(&model, &ex).unwrap();
    let exact = ex
        .iter()
        .filter(|e| model.greedy_decode(&e.src, model.max_question_len()).unwrap() == e.reference())
        .count() as f64
        / ex.len() as f64;
    let elapsed = started.elapsed();
    let pass = out.steps == 500 && accuracy >= 0.95 && exact >= 0.8 && elapsed < Duration::from_secs(600);
    report(
        7,
        pass,
        format!("{} steps: teacher-forced accuracy {accuracy:.4}, exact greedy {exact:.3} in {elapsed:?}", out.steps),
    );
    assert!(pass);
}

#[test]
fn ac8_rtd_signal() {
    let _g = serial();
    let started = Instant::now();
    let baseline = -(0.15f64 * 0.15f64.ln() + 0.85 * 0.85f64.ln());
    let mut losses = Vec::new();
    let mut replaced = Vec::new();
    for seed in 0..3u64 {
        let triples = generate_synthetic(1000, 80 + seed).unwrap();
        let (vocab, _) = build_vocab(&triples, 1, 30_000).unwrap();
        let corpus = rtd_corpus(&triples, &vocab);
        assert!(corpus.len() >= 2000);
        let mut ev = EvaluatorModel::init(EvaluatorConfig {
            seed,
            ..EvaluatorConfig::desk(vocab.size())
        })
        .unwrap();
        let history = ev
            .pretrain_rtd(&corpus, &RtdConfig { seed, ..RtdConfig::default() })
            .unwrap();
        let last = history.last().unwrap();
        losses.push(last.heldout_loss);
        replaced.push(last.heldout_replaced_accuracy);
    }
    let (loss, rep) = (median(losses.clone()), median(replaced.clone()));
    let elapsed = started.elapsed();
    let pass = loss < baseline && rep > 0.30 && elapsed < Duration::from_secs(600);
    report(
        8,
        pass,
        format!(
            "median held-out loss {loss:.4} vs baseline {baseline:.4} (seeds {losses:.4?}); replaced-token accuracy {rep:.3} in {elapsed:?}"
        ),
    );
    assert!(pass);
}

#[test]
fn ac9_directional_trend() {
    let _g = serial();
    let started = Instant::now();
    let mut bleu_of: HashMap<RewardMode, Vec<f64>> = HashMap::new();
    let mut cos_of: HashMap<RewardMode, Vec<f64>> = HashMap::new();
    for seed in 0..3u64 {
        let triples = generate_synthetic(2000, seed).unwrap();
        let split = split_three_way(&triples, 0.1, 0.06, seed).unwrap();
        let (vocab, _) = build_vocab(&split.train, 1, 30_000).unwrap();
        let mut ev = EvaluatorModel::init(EvaluatorConfig {
            seed,
            ..EvaluatorConfig::desk(vocab.size())
        })
        .unwrap();
        ev.pretrain_rtd(
            &rtd_corpus(&split.train, &vocab),
            &RtdConfig {
                epochs: 5,
                seed,
                ..RtdConfig::default()
            },
        )
        .unwrap();
        ev.freeze();
        let tr = prepare_examples(&split.train, &vocab, 64, 16).unwrap();
        let dev = prepare_examples(&split.dev, &vocab, 64, 16).unwrap();
        // shared maximum-likelihood warm start, then reward fine-tuning per mode
        let mut warm = GeneratorModel::init(GeneratorConfig {
            seed,
            ..GeneratorConfig::desk(vocab.size())
        })
        .unwrap();
        let warm_cfg = TrainConfig {
            seed,
            reward_mode: RewardMode::None,
            ..TrainConfig::synthetic()
        };
        let out = train(&mut warm, None, &tr, &dev, &warm_cfg, RewardSource::FromConfig, |_, _, _| Ok(())).unwrap();
        warm.params_mut().load_from(&out.best.unwrap().params).unwrap();
        for mode in [RewardMode::BleuOnly, RewardMode::BleuPlusSemantic] {
            let mut model = warm.clone();
            let cfg = TrainConfig {
                seed,
                reward_mode: mode,
                ..TrainConfig::fine_tune()
            };
            let out = train(&mut model, Some(&ev), &tr, &dev, &cfg, RewardSource::FromConfig, |_, _, _| Ok(())).unwrap();
            model.params_mut().load_from(&out.best.unwrap().params).unwrap();
            let r = evaluate(&model, &ev, &vocab, &dev, cfg.alpha).unwrap();
            bleu_of.entry(mode).or_default().push(r.corpus_bleu);
            cos_of.entry(mode).or_default().push(r.mean_cosine);
        }
    }
    let b = |m| median(bleu_of[&m].clone());
    let c = |m| median(cos_of[&m].clone());
    let (bleu_b, bleu_s) = (b(RewardMode::BleuOnly), b(RewardMode::BleuPlusSemantic));
    let (cos_b, cos_s) = (c(RewardMode::BleuOnly), c(RewardMode::BleuPlusSemantic));
    let bleu_ok = bleu_b >= bleu_s - 0.5;
    let cos_ok = cos_s >= cos_b - 0.01;
    let strict = bleu_b > bleu_s || cos_s > cos_b;
    let elapsed = started.elapsed();
    let pass = bleu_ok && cos_ok && strict && elapsed < Duration::from_secs(3600);
    report(
        9,
        pass,
        format!(
            "median dev BLEU bleu-only {bleu_b:.3} vs bleu+semantic {bleu_s:.3}; median cosine bleu-only {cos_b:.5} vs bleu+semantic {cos_s:.5}; \
             per seed BLEU {:.3?} / {:.3?}, cosine {:.5?} / {:.5?} in {elapsed:?}",
            bleu_of[&RewardMode::BleuOnly],
            bleu_of[&RewardMode::BleuPlusSemantic],
            cos_of[&RewardMode::BleuOnly],
            cos_of[&RewardMode::BleuPlusSemantic],
        ),
    );
    assert!(pass);
}

#[test]
fn ac10_pipeline_determinism() {
    let _g = serial();
    let root = tempfile::tempdir().unwrap();
    let config = root.path().join("run.conf");
    fs::write(
        &config,
        "lr = 3e-4\nlr_range_override = true\nbatch_size = 8\naccum_steps = 2\nepochs = 100\nmax_steps = 50\nseed = 10\nrtd.epochs = 2\n",
    )
    .unwrap();
    let run = |name: &str| {
        let dir = root.path().join(name);
        let data = dir.join("data");
        pipeline::ingest(&IngestSource::Synthetic(300), &data, 10, pipeline::DEFAULT_DEV_FRACTION).unwrap();
        pipeline::pretrain_evaluator(&data, Some(&config), &dir.join("evaluator")).unwrap();
        let summary = pipeline::train(&data, Some(&dir.join("evaluator")), Some(&config), None, &dir.join("run")).unwrap();
        assert_eq!(summary.steps, 50);
        pipeline::evaluate(&dir.join("run").join("best"), &dir.join("evaluator"), &data, &dir.join("report.json")).unwrap();
        dir
    };
    let (a, b) = (run("a"), run("b"));
    let files = [
        "data/train.json",
        "data/dev.json",
        "data/test.json",
        "data/vocab.tsv",
        "evaluator/history.jsonl",
        "evaluator/params.qgf",
        "run/history.jsonl",
        "run/best/params.qgf",
        "run/final/params.qgf",
        "report.json",
    ];
    let differing: Vec<&str> = files
        .iter()
        .copied()
        .filter(|f| fs::read(a.join(f)).unwrap() != fs::read(b.join(f)).unwrap())
        .collect();
    let pass = differing.is_empty();
    report(10, pass, format!("{} artifacts compared, differing: {differing:?}", files.len()));
    assert!(pass);
}
