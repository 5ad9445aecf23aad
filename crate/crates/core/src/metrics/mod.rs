//! BLEU, cosine similarity, reward composition, an embedding-matching
//! semantic score, and WH-question classification.

mod bleu;
mod question_type;
mod reward;

use serde::{Deserialize, Serialize};

pub use bleu::{bleu_corpus, bleu_sentence, modified_precision, BLEU_MAX_N, SMOOTHING_EPSILON};
pub use question_type::{classify_question_type, QuestionClass};
pub use reward::{bleu_reward, cosine, reward, weight_in_range, RewardBreakdown, WEIGHT_RANGE};

use crate::error::{Error, Result};
use crate::evaluator::EvaluatorModel;
use crate::tokenizer::{encode, TokenId, Vocab, CLS};

/// Greedy-matching F1 over evaluator token embeddings (`[CLS]` excluded).
/// Recall averages, over reference tokens, the best cosine to any candidate
/// token; precision is the mirror image. 0 when either is not positive.
pub fn embedding_match_score(candidate: &[TokenId], reference: &[TokenId], evaluator: &EvaluatorModel) -> Result<f64> {
    if candidate.is_empty() || reference.is_empty() {
        return Err(Error::invalid("embedding_match_score needs two non-empty sequences"));
    }
    if !evaluator.is_frozen() {
        return Err(Error::NotFrozen);
    }
    let rows = |ids: &[TokenId]| -> Result<Vec<Vec<f64>>> {
        let mut with_cls = vec![CLS];
        with_cls.extend_from_slice(ids);
        let h = evaluator.token_embeddings(&with_cls)?;
        Ok((1..h.rows()).map(|i| h.row(i).to_vec()).collect())
    };
    let (c, r) = (rows(candidate)?, rows(reference)?);
    let mut sims = vec![vec![0.0; r.len()]; c.len()];
    for (i, ci) in c.iter().enumerate() {
        for (j, rj) in r.iter().enumerate() {
            sims[i][j] = cosine(ci, rj)?;
        }
    }
    let best = |v: &mut dyn Iterator<Item = f64>| v.fold(f64::NEG_INFINITY, f64::max);
    let precision = c.iter().enumerate().map(|(i, _)| best(&mut sims[i].iter().copied())).sum::<f64>() / c.len() as f64;
    let recall = (0..r.len()).map(|j| best(&mut sims.iter().map(|row| row[j]))).sum::<f64>() / r.len() as f64;
    if precision <= 0.0 || recall <= 0.0 {
        return Ok(0.0);
    }
    Ok((2.0 * precision * recall / (precision + recall)).min(1.0))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreRequest {
    pub id: String,
    pub candidate: String,
    pub reference: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub id: String,
    pub candidate: String,
    pub reference: String,
    pub bleu: f64,
    pub cosine: f64,
    pub reward: f64,
    /// 0 when either side encodes to no tokens.
    pub match_score: f64,
    pub class: QuestionClass,
}

/// Scores one candidate/reference pair of question texts.
pub fn score_pair(request: ScoreRequest, vocab: &Vocab, evaluator: &EvaluatorModel, alpha: f64) -> Result<ScoreRecord> {
    let cand = encode(&request.candidate, vocab);
    let refr = encode(&request.reference, vocab);
    if refr.is_empty() {
        return Err(Error::invalid(format!("record {}: empty reference", request.id)));
    }
    let bleu = bleu_sentence(&cand, &refr, BLEU_MAX_N);
    let with_cls = |ids: &[TokenId]| {
        let mut v = vec![CLS];
        v.extend_from_slice(ids);
        v
    };
    let cos = cosine(&evaluator.embed_cls(&with_cls(&cand))?, &evaluator.embed_cls(&with_cls(&refr))?)?;
    let r = reward(bleu, cos, alpha)?;
    let match_score = if cand.is_empty() {
        0.0
    } else {
        embedding_match_score(&cand, &refr, evaluator)?
    };
    let class = classify_question_type(&request.candidate);
    Ok(ScoreRecord {
        id: request.id,
        candidate: request.candidate,
        reference: request.reference,
        bleu,
        cosine: cos,
        reward: r.r,
        match_score,
        class,
    })
}

/// Scores JSON lines of [`ScoreRequest`]; blank lines are skipped.
pub fn score_jsonl(input: &str, vocab: &Vocab, evaluator: &EvaluatorModel, alpha: f64) -> Result<String> {
    if !evaluator.is_frozen() {
        return Err(Error::NotFrozen);
    }
    let mut out = String::new();
    let mut offset = 0;
    for line in input.split_inclusive('\n') {
        let start = offset;
        offset += line.len();
        if line.trim().is_empty() {
            continue;
        }
        let request: ScoreRequest = serde_json::from_str(line).map_err(|e| Error::JsonParse {
            offset: start + e.column().saturating_sub(1),
            message: e.to_string(),
        })?;
        let record = score_pair(request, vocab, evaluator, alpha)?;
        out.push_str(&serde_json::to_string(&record).expect("record serializes"));
        out.push('\n');
    }
    Ok(out)
}
