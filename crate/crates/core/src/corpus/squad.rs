//! SQuAD v1.1 JSON reading and writing.
//!
//! The reader walks the document by hand so schema violations can be
//! reported with their JSON path. `answer_start` is optional on read (so
//! corpora whose answers are not spans can round-trip); every other key of
//! the v1.1 schema is required.

use std::path::Path;

use serde_json::{json, Map, Value};

use super::{offset_matches, QaTriple};
use crate::error::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct LoadWarnings {
    /// `qas` entries with an empty `answers` list.
    pub skipped_no_answer: usize,
    /// Triples whose `answer_start` did not point at the answer text; the
    /// offset was cleared and the triple kept.
    pub cleared_offsets: usize,
    /// Entries with an empty context, question, or answer after trimming.
    pub skipped_empty_text: usize,
}

impl LoadWarnings {
    pub fn total(&self) -> usize {
        self.skipped_no_answer + self.cleared_offsets + self.skipped_empty_text
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SquadLoad {
    pub triples: Vec<QaTriple>,
    pub warnings: LoadWarnings,
}

pub fn load_squad(path: impl AsRef<Path>) -> Result<SquadLoad> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_squad(&text)
}

fn byte_offset(text: &str, line: usize, column: usize) -> usize {
    let before: usize = text.split_inclusive('\n').take(line.saturating_sub(1)).map(str::len).sum();
    before + column.saturating_sub(1)
}

fn field<'a>(obj: &'a Map<String, Value>, key: &str, path: &str) -> Result<&'a Value> {
    obj.get(key).ok_or_else(|| Error::Schema {
        path: format!("{path}.{key}"),
        message: "missing key".into(),
    })
}

fn as_object<'a>(v: &'a Value, path: &str) -> Result<&'a Map<String, Value>> {
    v.as_object().ok_or_else(|| Error::Schema {
        path: path.to_string(),
        message: "expected an object".into(),
    })
}

fn as_array<'a>(v: &'a Value, path: &str) -> Result<&'a Vec<Value>> {
    v.as_array().ok_or_else(|| Error::Schema {
        path: path.to_string(),
        message: "expected an array".into(),
    })
}

fn as_str<'a>(v: &'a Value, path: &str) -> Result<&'a str> {
    v.as_str().ok_or_else(|| Error::Schema {
        path: path.to_string(),
        message: "expected a string".into(),
    })
}

pub fn parse_squad(text: &str) -> Result<SquadLoad> {
    let root: Value = serde_json::from_str(text).map_err(|e| Error::JsonParse {
        offset: byte_offset(text, e.line(), e.column()),
        message: e.to_string(),
    })?;
    let root = as_object(&root, "$")?;
    let data = as_array(field(root, "data", "$")?, "$.data")?;

    let mut triples = Vec::new();
    let mut warnings = LoadWarnings::default();
    for (ai, article) in data.iter().enumerate() {
        let apath = format!("$.data[{ai}]");
        let article = as_object(article, &apath)?;
        field(article, "title", &apath)?;
        let paragraphs = as_array(field(article, "paragraphs", &apath)?, &format!("{apath}.paragraphs"))?;
        for (pi, para) in paragraphs.iter().enumerate() {
            let ppath = format!("{apath}.paragraphs[{pi}]");
            let para = as_object(para, &ppath)?;
            let context = as_str(field(para, "context", &ppath)?, &format!("{ppath}.context"))?;
            let qas = as_array(field(para, "qas", &ppath)?, &format!("{ppath}.qas"))?;
            for (qi, qa) in qas.iter().enumerate() {
                let qpath = format!("{ppath}.qas[{qi}]");
                let qa = as_object(qa, &qpath)?;
                let id = match field(qa, "id", &qpath)? {
                    Value::String(s) => s.clone(),
                    Value::Number(n) => n.to_string(),
                    _ => {
                        return Err(Error::Schema {
                            path: format!("{qpath}.id"),
                            message: "expected a string".into(),
                        })
                    }
                };
                let question = as_str(field(qa, "question", &qpath)?, &format!("{qpath}.question"))?;
                let answers = as_array(field(qa, "answers", &qpath)?, &format!("{qpath}.answers"))?;
                let Some(first) = answers.first() else {
                    warnings.skipped_no_answer += 1;
                    continue;
                };
                let anpath = format!("{qpath}.answers[0]");
                let first = as_object(first, &anpath)?;
                let answer = as_str(field(first, "text", &anpath)?, &format!("{anpath}.text"))?;
                let mut answer_start = match first.get("answer_start") {
                    None | Some(Value::Null) => None,
                    Some(v) => Some(v.as_u64().ok_or_else(|| Error::Schema {
                        path: format!("{anpath}.answer_start"),
                        message: "expected a non-negative integer".into(),
                    })? as usize),
                };
                if [context, question, answer].iter().any(|s| s.trim().is_empty()) {
                    warnings.skipped_empty_text += 1;
                    continue;
                }
                if let Some(start) = answer_start {
                    if !offset_matches(context, start, answer) {
                        warnings.cleared_offsets += 1;
                        answer_start = None;
                    }
                }
                triples.push(QaTriple {
                    id,
                    context: context.to_string(),
                    answer: answer.to_string(),
                    question: question.to_string(),
                    answer_start,
                });
            }
        }
    }
    Ok(SquadLoad { triples, warnings })
}

/// SQuAD v1.1 document with one article; consecutive triples sharing a
/// context become one paragraph.
pub fn squad_json(triples: &[QaTriple], title: &str) -> Value {
    let mut paragraphs: Vec<Value> = Vec::new();
    let mut current: Option<(&str, Vec<Value>)> = None;
    for t in triples {
        let mut answer = Map::new();
        answer.insert("text".into(), Value::String(t.answer.clone()));
        if let Some(start) = t.answer_start {
            answer.insert("answer_start".into(), json!(start));
        }
        let qa = json!({"id": t.id, "question": t.question, "answers": [Value::Object(answer)]});
        match &mut current {
            Some((ctx, qas)) if *ctx == t.context => qas.push(qa),
            _ => {
                if let Some((ctx, qas)) = current.take() {
                    paragraphs.push(json!({"context": ctx, "qas": qas}));
                }
                current = Some((&t.context, vec![qa]));
            }
        }
    }
    if let Some((ctx, qas)) = current {
        paragraphs.push(json!({"context": ctx, "qas": qas}));
    }
    json!({"version": "1.1", "data": [{"title": title, "paragraphs": paragraphs}]})
}

pub fn write_squad(path: impl AsRef<Path>, triples: &[QaTriple], title: &str) -> Result<()> {
    let path = path.as_ref();
    let mut text = serde_json::to_string_pretty(&squad_json(triples, title)).expect("JSON value serializes");
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
