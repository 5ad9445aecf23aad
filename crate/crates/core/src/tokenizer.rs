//! Word-level vocabulary, text/id conversion, and source/target assembly.

use std::collections::HashMap;
use std::fmt::Write as _;

use crate::corpus::QaTriple;
use crate::error::{Error, Result};

pub type TokenId = usize;

pub const PAD: TokenId = 0;
pub const UNK: TokenId = 1;
pub const CLS: TokenId = 2;
pub const SEP: TokenId = 3;
pub const BOS: TokenId = 4;
pub const EOS: TokenId = 5;
pub const NUM_SPECIALS: usize = 6;

pub const SPECIAL_NAMES: [&str; NUM_SPECIALS] = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[BOS]", "[EOS]"];

pub fn is_special(id: TokenId) -> bool {
    id < NUM_SPECIALS
}

fn is_punct(c: char) -> bool {
    c.is_ascii_punctuation() || matches!(c, '“' | '”' | '‘' | '’' | '–' | '—' | '…' | '«' | '»' | '¿' | '¡')
}

/// Lowercases, splits on whitespace and detaches every punctuation character
/// as its own token.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for chunk in text.split_whitespace() {
        let mut word = String::new();
        for c in chunk.chars() {
            if is_punct(c) {
                if !word.is_empty() {
                    out.push(std::mem::take(&mut word));
                }
                out.push(c.to_string());
            } else {
                word.extend(c.to_lowercase());
            }
        }
        if !word.is_empty() {
            out.push(word);
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    words: Vec<String>,
    index: HashMap<String, TokenId>,
}

impl Vocab {
    /// Vocabulary containing only the six special tokens.
    pub fn specials_only() -> Self {
        let words: Vec<String> = SPECIAL_NAMES.iter().map(|s| s.to_string()).collect();
        let index = words.iter().cloned().enumerate().map(|(i, w)| (w, i)).collect();
        Self { words, index }
    }

    fn push(&mut self, word: String) {
        self.index.insert(word.clone(), self.words.len());
        self.words.push(word);
    }

    pub fn size(&self) -> usize {
        self.words.len()
    }

    pub fn id_of(&self, word: &str) -> Option<TokenId> {
        self.index.get(word).copied()
    }

    pub fn word_of(&self, id: TokenId) -> Option<&str> {
        self.words.get(id).map(String::as_str)
    }

    /// Corpus words (everything after the specials), in id order.
    pub fn words(&self) -> &[String] {
        &self.words[NUM_SPECIALS..]
    }

    /// One `word<TAB>id` line per entry, in id order.
    pub fn to_tsv(&self) -> String {
        let mut s = String::new();
        for (i, w) in self.words.iter().enumerate() {
            let _ = writeln!(s, "{w}\t{i}");
        }
        s
    }

    pub fn from_tsv(text: &str) -> Result<Self> {
        let mut vocab = Vocab {
            words: Vec::new(),
            index: HashMap::new(),
        };
        for (lineno, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let bad = |msg: &str| Error::Schema {
                path: format!("vocab line {}", lineno + 1),
                message: msg.to_string(),
            };
            let (word, id) = line.rsplit_once('\t').ok_or_else(|| bad("expected word<TAB>id"))?;
            let id: usize = id.trim().parse().map_err(|_| bad("id is not an integer"))?;
            if id != vocab.words.len() {
                return Err(bad("ids must be contiguous and sorted"));
            }
            if vocab.index.contains_key(word) {
                return Err(bad("duplicate word"));
            }
            vocab.push(word.to_string());
        }
        if vocab.words.len() < NUM_SPECIALS
            || vocab.words[..NUM_SPECIALS].iter().zip(SPECIAL_NAMES).any(|(a, b)| a != b)
        {
            return Err(Error::Schema {
                path: "vocab".into(),
                message: "the first six entries must be the special tokens".into(),
            });
        }
        Ok(vocab)
    }
}

/// Builds a vocabulary from arbitrary texts. Returns any warnings produced.
pub fn build_vocab_from_texts<'a>(
    texts: impl IntoIterator<Item = &'a str>,
    min_freq: usize,
    max_size: usize,
) -> Result<(Vocab, Vec<String>)> {
    if min_freq < 1 {
        return Err(Error::invalid("min_freq must be at least 1"));
    }
    if max_size < NUM_SPECIALS + 1 {
        return Err(Error::invalid(format!("max_size must be at least {}", NUM_SPECIALS + 1)));
    }
    let mut counts: HashMap<String, usize> = HashMap::new();
    for text in texts {
        for tok in tokenize(text) {
            *counts.entry(tok).or_default() += 1;
        }
    }
    let mut warnings = Vec::new();
    if counts.is_empty() {
        warnings.push("empty corpus: vocabulary contains only special tokens".to_string());
    }
    let mut kept: Vec<(String, usize)> = counts.into_iter().filter(|(_, c)| *c >= min_freq).collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    kept.truncate(max_size - NUM_SPECIALS);
    let mut vocab = Vocab::specials_only();
    for (w, _) in kept {
        vocab.push(w);
    }
    Ok((vocab, warnings))
}

/// Vocabulary over the contexts, answers and questions of `triples`.
pub fn build_vocab(triples: &[QaTriple], min_freq: usize, max_size: usize) -> Result<(Vocab, Vec<String>)> {
    let texts = triples
        .iter()
        .flat_map(|t| [t.context.as_str(), t.answer.as_str(), t.question.as_str()]);
    build_vocab_from_texts(texts, min_freq, max_size)
}

pub fn encode(text: &str, vocab: &Vocab) -> Vec<TokenId> {
    tokenize(text).iter().map(|w| vocab.id_of(w).unwrap_or(UNK)).collect()
}

/// Joins words with single spaces; specials other than UNK are dropped and
/// UNK renders as `[UNK]`.
pub fn decode(ids: &[TokenId], vocab: &Vocab) -> Result<String> {
    let mut words = Vec::with_capacity(ids.len());
    for &id in ids {
        if id >= vocab.size() {
            return Err(Error::TokenOutOfRange { id, size: vocab.size() });
        }
        if id == UNK || !is_special(id) {
            words.push(vocab.words[id].as_str());
        }
    }
    Ok(words.join(" "))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SeqKind {
    Source,
    Target,
}

/// An encoded model input (`[CLS] context [SEP] answer [SEP]`) or target
/// (`[BOS] question [EOS]`), optionally followed by `[PAD]`s.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenSeq {
    ids: Vec<TokenId>,
    kind: SeqKind,
}

impl TokenSeq {
    /// Wraps `ids` after checking the structural invariant for `kind`.
    pub fn new(ids: Vec<TokenId>, kind: SeqKind) -> Result<Self> {
        let seq = Self { ids, kind };
        seq.check_structure()?;
        Ok(seq)
    }

    fn check_structure(&self) -> Result<()> {
        let body = self.unpadded();
        let bad = |msg: &str| Error::invalid(format!("{:?} sequence {msg}: {:?}", self.kind, self.ids));
        if body.iter().any(|&id| id == PAD) {
            return Err(bad("has padding before its end"));
        }
        match self.kind {
            SeqKind::Source => {
                if body.first() != Some(&CLS) {
                    return Err(bad("must begin with [CLS]"));
                }
                if body.iter().filter(|&&id| id == SEP).count() != 2 || body.last() != Some(&SEP) {
                    return Err(bad("must contain exactly two [SEP] and end with one"));
                }
            }
            SeqKind::Target => {
                if body.first() != Some(&BOS) || body.last() != Some(&EOS) || body.len() < 2 {
                    return Err(bad("must begin with [BOS] and end with [EOS]"));
                }
            }
        }
        Ok(())
    }

    pub fn ids(&self) -> &[TokenId] {
        &self.ids
    }

    pub fn kind(&self) -> SeqKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Ids without trailing padding.
    pub fn unpadded(&self) -> &[TokenId] {
        let end = self.ids.iter().rposition(|&id| id != PAD).map_or(0, |p| p + 1);
        &self.ids[..end]
    }

    pub fn padded_to(&self, len: usize) -> TokenSeq {
        let mut ids = self.ids.clone();
        if ids.len() < len {
            ids.resize(len, PAD);
        }
        TokenSeq { ids, kind: self.kind }
    }

    pub fn validate(&self, vocab_size: usize) -> Result<()> {
        if let Some(&id) = self.ids.iter().find(|&&id| id >= vocab_size) {
            return Err(Error::TokenOutOfRange { id, size: vocab_size });
        }
        self.check_structure()
    }

    /// For a target, the question ids between `[BOS]` and `[EOS]`.
    pub fn question_ids(&self) -> &[TokenId] {
        let body = self.unpadded();
        match self.kind {
            SeqKind::Target => &body[1..body.len() - 1],
            SeqKind::Source => body,
        }
    }

    /// For a source, recovers `(context, answer)` from the `[SEP]` layout.
    pub fn split_source(&self) -> Option<(&[TokenId], &[TokenId])> {
        if self.kind != SeqKind::Source {
            return None;
        }
        let body = self.unpadded();
        let first = body.iter().position(|&id| id == SEP)?;
        Some((&body[1..first], &body[first + 1..body.len() - 1]))
    }
}

impl AsRef<[TokenId]> for TokenSeq {
    fn as_ref(&self) -> &[TokenId] {
        &self.ids
    }
}

/// `[CLS] context [SEP] answer [SEP]`, truncating the context from the right
/// until it fits in `max_len`. The answer is never truncated.
pub fn assemble_input(context_ids: &[TokenId], answer_ids: &[TokenId], max_len: usize) -> Result<TokenSeq> {
    if answer_ids.is_empty() {
        return Err(Error::invalid("answer must not be empty"));
    }
    if answer_ids.len() + 3 > max_len {
        return Err(Error::LengthOverflow {
            what: "answer plus special tokens",
            len: answer_ids.len() + 3,
            max: max_len,
        });
    }
    let budget = max_len - answer_ids.len() - 3;
    let ctx = &context_ids[..context_ids.len().min(budget)];
    let mut ids = Vec::with_capacity(ctx.len() + answer_ids.len() + 3);
    ids.push(CLS);
    ids.extend_from_slice(ctx);
    ids.push(SEP);
    ids.extend_from_slice(answer_ids);
    ids.push(SEP);
    TokenSeq::new(ids, SeqKind::Source)
}

/// `[BOS] question [EOS]`, right-truncating the question to fit `max_len`.
pub fn assemble_target(question_ids: &[TokenId], max_len: usize) -> Result<TokenSeq> {
    if max_len < 3 {
        return Err(Error::invalid(format!("target max_len {max_len} is below 3")));
    }
    if question_ids.is_empty() {
        return Err(Error::invalid("question must not be empty"));
    }
    let q = &question_ids[..question_ids.len().min(max_len - 2)];
    let mut ids = Vec::with_capacity(q.len() + 2);
    ids.push(BOS);
    ids.extend_from_slice(q);
    ids.push(EOS);
    TokenSeq::new(ids, SeqKind::Target)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cat_dog() -> Vocab {
        build_vocab_from_texts(["the cat", "the dog"], 1, 100).unwrap().0
    }

    #[test]
    fn vocab_counts_and_filter() {
        let v = cat_dog();
        assert_eq!(v.size(), 9);
        for w in ["the", "cat", "dog"] {
            assert!(v.id_of(w).unwrap() >= NUM_SPECIALS);
        }
        // most frequent first
        assert_eq!(v.id_of("the"), Some(6));
        let (v2, _) = build_vocab_from_texts(["the cat", "the dog"], 2, 100).unwrap();
        assert_eq!(v2.words(), &["the".to_string()]);
    }

    #[test]
    fn vocab_truncation_breaks_ties_lexicographically() {
        let (v, _) = build_vocab_from_texts(["b a c a"], 1, 8).unwrap();
        assert_eq!(v.words(), &["a".to_string(), "b".to_string()]);
    }

    #[test]
    fn empty_corpus_warns() {
        let (v, warnings) = build_vocab_from_texts(std::iter::empty(), 1, 10).unwrap();
        assert_eq!(v.size(), NUM_SPECIALS);
        assert_eq!(warnings.len(), 1);
        assert!(build_vocab_from_texts(["x"], 0, 10).is_err());
        assert!(build_vocab_from_texts(["x"], 1, 6).is_err());
    }

    #[test]
    fn punctuation_detached() {
        assert_eq!(tokenize("Who won?"), vec!["who", "won", "?"]);
        assert_eq!(tokenize("  In 1920, Alice's  "), vec!["in", "1920", ",", "alice", "'", "s"]);
    }

    #[test]
    fn encode_decode_examples() {
        let v = cat_dog();
        let the = v.id_of("the").unwrap();
        let cat = v.id_of("cat").unwrap();
        assert_eq!(encode("the cat", &v), vec![the, cat]);
        assert_eq!(encode("the zebra", &v), vec![the, UNK]);
        assert_eq!(encode("", &v), Vec::<TokenId>::new());
        assert_eq!(decode(&[BOS, the, UNK, EOS, PAD], &v).unwrap(), "the [UNK]");
        assert_eq!(decode(&[], &v).unwrap(), "");
        let err = decode(&[the, 99], &v).unwrap_err();
        assert!(err.to_string().contains("99"));

        let (v, _) = build_vocab_from_texts(["who won?"], 1, 100).unwrap();
        let ids = encode("who won ?", &v);
        assert_eq!(decode(&ids, &v).unwrap(), "who won ?");
    }

    #[test]
    fn vocab_tsv_round_trip() {
        let v = cat_dog();
        let tsv = v.to_tsv();
        assert!(tsv.starts_with("[PAD]\t0\n[UNK]\t1\n"));
        assert_eq!(Vocab::from_tsv(&tsv).unwrap(), v);
        assert!(Vocab::from_tsv("the\t0\n").is_err());
    }

    #[test]
    fn input_assembly() {
        assert_eq!(
            assemble_input(&[7, 8], &[9], 10).unwrap().ids(),
            &[CLS, 7, 8, SEP, 9, SEP]
        );
        let ctx: Vec<TokenId> = (100..200).collect();
        let seq = assemble_input(&ctx, &[9], 10).unwrap();
        assert_eq!(seq.ids(), &[CLS, 100, 101, 102, 103, 104, 105, SEP, 9, SEP]);
        assert_eq!(assemble_input(&[], &[9], 10).unwrap().ids(), &[CLS, SEP, 9, SEP]);
        assert!(assemble_input(&[1], &[9, 9, 9], 5).is_err());
        assert!(assemble_input(&[1], &[], 5).is_err());
    }

    #[test]
    fn target_assembly() {
        assert_eq!(assemble_target(&[7, 8], 8).unwrap().ids(), &[BOS, 7, 8, EOS]);
        assert_eq!(assemble_target(&[7, 8, 9, 10], 4).unwrap().ids(), &[BOS, 7, 8, EOS]);
        assert!(assemble_target(&[7], 2).is_err());
        let v = build_vocab_from_texts(["who won ?"], 1, 100).unwrap().0;
        let t = assemble_target(&encode("Who won?", &v), 16).unwrap();
        assert_eq!(decode(t.ids(), &v).unwrap(), "who won ?");
        assert_eq!(t.question_ids(), encode("who won ?", &v).as_slice());
    }

    #[test]
    fn structure_is_checked() {
        assert!(TokenSeq::new(vec![CLS, 7, SEP, 8], SeqKind::Source).is_err());
        assert!(TokenSeq::new(vec![BOS, 7], SeqKind::Target).is_err());
        let s = TokenSeq::new(vec![CLS, 7, SEP, 8, SEP, PAD, PAD], SeqKind::Source).unwrap();
        assert!(s.validate(9).is_ok());
        assert!(s.validate(8).is_err());
        assert!(TokenSeq::new(vec![CLS, PAD, SEP, 8, SEP], SeqKind::Source).is_err());
    }

    proptest! {
        #[test]
        fn split_source_inverts_assembly(
            ctx in proptest::collection::vec(6usize..50, 0..20),
            ans in proptest::collection::vec(6usize..50, 1..5),
        ) {
            let seq = assemble_input(&ctx, &ans, 64).unwrap();
            let (c, a) = seq.padded_to(40).split_source().map(|(c, a)| (c.to_vec(), a.to_vec())).unwrap();
            prop_assert_eq!(c, ctx);
            prop_assert_eq!(a, ans);
        }

        #[test]
        fn encoding_is_case_insensitive(s in "[A-Za-z ,.?]{0,40}") {
            let v = build_vocab_from_texts([s.as_str()], 1, 1000).unwrap().0;
            prop_assert_eq!(encode(&s, &v), encode(&s.to_lowercase(), &v));
        }

        #[test]
        fn encode_decode_round_trip(words in proptest::collection::vec(6usize..20, 0..12)) {
            let (v, _) = build_vocab_from_texts(
                ["a b c d e f g h i j k l m n ? , ."], 1, 100).unwrap();
            let ids: Vec<TokenId> = words.into_iter().filter(|&i| i < v.size()).collect();
            let text = decode(&ids, &v).unwrap();
            prop_assert_eq!(encode(&text, &v), ids);
        }
    }
}
