//! Bidirectional question-answer-context text serialization, casting of
//! classification data into QA form, and QA-corpus ingestion.
//!
//! The serialized form of a triple is exactly three marker-prefixed lines:
//!
//! ```text
//! question: when did battle of plassey happen?
//! answer: 23 june 1757
//! context: the battle of plassey was a decisive victory of the british east
//! ```
//!
//! Fields are lowercased at serialization time (the downstream classifier is
//! uncased) and newlines inside fields are flattened to single spaces so the
//! layout stays line-delimited. Both normalizations can be switched off for
//! case-sensitive backends via [`SerializeOptions`].

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::schema::{
    reserved_marker_at_line_start, FewShotSet, LabeledExample, QATriple, TaskSpec, MARKER_ANSWER,
    MARKER_CONTEXT, MARKER_QUESTION,
};

/// The single-text serialized form of one [`QATriple`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QACDocument {
    text: String,
}

impl QACDocument {
    /// Wraps raw text, validating the three-marker layout by parsing it.
    pub fn new(text: impl Into<String>) -> Result<Self> {
        let doc = Self { text: text.into() };
        parse_qac(&doc)?;
        Ok(doc)
    }

    pub fn as_str(&self) -> &str {
        &self.text
    }
}

/// Serialization switches. `lowercase` is on by default.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SerializeOptions {
    pub lowercase: bool,
}

impl Default for SerializeOptions {
    fn default() -> Self {
        Self { lowercase: true }
    }
}

/// Normalizes one field for the line-delimited layout: optional lowercasing,
/// carriage returns dropped, each newline replaced by a single space, outer
/// whitespace trimmed.
fn normalize_field(field: &str, opts: &SerializeOptions) -> String {
    let lowered;
    let s = if opts.lowercase {
        lowered = field.to_lowercase();
        lowered.as_str()
    } else {
        field
    };
    s.replace('\r', "").replace('\n', " ").trim().to_string()
}

/// Serializes a triple into the three-line marker layout. The document
/// carries no trailing newline; end-of-document markers are the corpus
/// writer's job.
pub fn serialize_qac(triple: &QATriple) -> Result<QACDocument> {
    serialize_qac_with(triple, &SerializeOptions::default())
}

pub fn serialize_qac_with(triple: &QATriple, opts: &SerializeOptions) -> Result<QACDocument> {
    for (name, field) in [
        ("question", &triple.question),
        ("answer", &triple.answer),
        ("context", &triple.context),
    ] {
        if let Some(marker) = reserved_marker_at_line_start(field) {
            return Err(Error::InvalidTriple {
                field: name,
                reason: format!("reserved marker {marker:?} at line start"),
            });
        }
        if field.trim().is_empty() {
            return Err(Error::InvalidTriple {
                field: name,
                reason: "empty".into(),
            });
        }
    }
    let q = normalize_field(&triple.question, opts);
    let a = normalize_field(&triple.answer, opts);
    let c = normalize_field(&triple.context, opts);
    Ok(QACDocument {
        text: format!("{MARKER_QUESTION} {q}\n{MARKER_ANSWER} {a}\n{MARKER_CONTEXT} {c}"),
    })
}

fn strip_marker<'a>(line: &'a str, marker: &str) -> &'a str {
    line.strip_prefix(marker).unwrap_or(line).trim()
}

/// Parses a serialized document back into a triple.
///
/// The document must begin with the question marker and contain exactly one
/// answer-marker line followed by exactly one context-marker line; the
/// context may then span every remaining line. Fields come back trimmed with
/// markers stripped.
pub fn parse_qac(doc: &QACDocument) -> Result<QATriple> {
    parse_qac_str(doc.as_str())
}

pub fn parse_qac_str(text: &str) -> Result<QATriple> {
    let lines: Vec<&str> = text.lines().collect();
    if lines.is_empty() {
        return Err(Error::Parse {
            line: 1,
            reason: "empty document".into(),
        });
    }
    if !lines[0].starts_with(MARKER_QUESTION) {
        return Err(Error::Parse {
            line: 1,
            reason: format!("document must begin with {MARKER_QUESTION:?}"),
        });
    }
    let mut answer_at = None;
    let mut context_at = None;
    for (i, line) in lines.iter().enumerate() {
        if i > 0 && line.starts_with(MARKER_QUESTION) {
            return Err(Error::Parse {
                line: i + 1,
                reason: format!("unexpected second {MARKER_QUESTION:?} marker"),
            });
        }
        if line.starts_with(MARKER_ANSWER) && answer_at.replace(i).is_some() {
            return Err(Error::Parse {
                line: i + 1,
                reason: format!("duplicate {MARKER_ANSWER:?} marker"),
            });
        }
        if line.starts_with(MARKER_CONTEXT) && context_at.replace(i).is_some() {
            return Err(Error::Parse {
                line: i + 1,
                reason: format!("duplicate {MARKER_CONTEXT:?} marker"),
            });
        }
    }
    let a_idx = answer_at.ok_or(Error::Parse {
        line: lines.len(),
        reason: format!("missing {MARKER_ANSWER:?} marker"),
    })?;
    let c_idx = context_at.ok_or(Error::Parse {
        line: lines.len(),
        reason: format!("missing {MARKER_CONTEXT:?} marker"),
    })?;
    if c_idx < a_idx {
        return Err(Error::Parse {
            line: c_idx + 1,
            reason: "context marker precedes answer marker".into(),
        });
    }

    let join = |chunk: &[&str], marker: &str| -> String {
        let mut parts: Vec<&str> = Vec::with_capacity(chunk.len());
        for (i, line) in chunk.iter().enumerate() {
            parts.push(if i == 0 {
                strip_marker(line, marker)
            } else {
                line
            });
        }
        parts.join("\n").trim().to_string()
    };
    let question = join(&lines[..a_idx], MARKER_QUESTION);
    let answer = join(&lines[a_idx..c_idx], MARKER_ANSWER);
    let context = join(&lines[c_idx..], MARKER_CONTEXT);
    QATriple::new(question, answer, context)
}

/// Casts one classification example into a triple: the task question, the
/// verbalized label as answer, the example text as context.
pub fn cast_example(ex: &LabeledExample, spec: &TaskSpec) -> Result<QATriple> {
    let word = spec.verbalize(&ex.label)?;
    QATriple::new(spec.question.clone(), word, ex.text.clone())
}

/// Casts and serializes a whole few-shot set, order preserved. Errors carry
/// the index of the offending example.
pub fn cast_dataset(few_shot: &FewShotSet, spec: &TaskSpec) -> Result<Vec<QACDocument>> {
    cast_dataset_with(few_shot, spec, &SerializeOptions::default())
}

pub fn cast_dataset_with(
    few_shot: &FewShotSet,
    spec: &TaskSpec,
    opts: &SerializeOptions,
) -> Result<Vec<QACDocument>> {
    few_shot
        .examples
        .iter()
        .enumerate()
        .map(|(index, ex)| {
            cast_example(ex, spec)
                .and_then(|t| serialize_qac_with(&t, opts))
                .map_err(|e| Error::Cast {
                    index,
                    source: Box::new(e),
                })
        })
        .collect()
}

/// Ingestion bookkeeping: accepted triples plus skip/reject counts.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct IngestStats {
    pub accepted: usize,
    /// Questions with no listed answer (or flagged impossible), skipped.
    pub skipped_unanswerable: usize,
    /// Records that failed triple validation, with a location and reason.
    pub rejected: Vec<(String, String)>,
}

#[derive(Deserialize)]
struct SquadFile {
    data: Vec<SquadArticle>,
}

#[derive(Deserialize)]
struct SquadArticle {
    #[serde(default)]
    #[allow(dead_code)]
    title: Option<String>,
    paragraphs: Vec<SquadParagraph>,
}

#[derive(Deserialize)]
struct SquadParagraph {
    context: String,
    qas: Vec<SquadQa>,
}

#[derive(Deserialize)]
struct SquadQa {
    question: String,
    #[serde(default)]
    id: Option<String>,
    #[serde(default)]
    answers: Vec<SquadAnswer>,
    #[serde(default)]
    is_impossible: bool,
}

#[derive(Deserialize)]
struct SquadAnswer {
    text: String,
}

/// Ingests a SQuAD v1.1 document tree (`data` → `paragraphs` → `qas`).
///
/// One triple per answerable question, taking the first listed answer; the
/// enclosing paragraph is the context. Unanswerable questions (empty answer
/// list, or `is_impossible` in v2-style files) are skipped and counted.
pub fn ingest_squad(json: &str, origin: &str) -> Result<(Vec<QATriple>, IngestStats)> {
    let file: SquadFile = serde_json::from_str(json).map_err(|e| Error::Ingest {
        path: origin.to_string(),
        reason: e.to_string(),
    })?;
    let mut triples = Vec::new();
    let mut stats = IngestStats::default();
    for (ai, article) in file.data.iter().enumerate() {
        for (pi, para) in article.paragraphs.iter().enumerate() {
            for (qi, qa) in para.qas.iter().enumerate() {
                if qa.is_impossible || qa.answers.is_empty() {
                    stats.skipped_unanswerable += 1;
                    continue;
                }
                let location = qa
                    .id
                    .clone()
                    .unwrap_or_else(|| format!("data[{ai}].paragraphs[{pi}].qas[{qi}]"));
                match QATriple::new(&qa.question, &qa.answers[0].text, &para.context) {
                    Ok(t) => triples.push(t),
                    Err(e) => stats.rejected.push((location, e.to_string())),
                }
            }
        }
    }
    stats.accepted = triples.len();
    Ok((triples, stats))
}

pub fn ingest_squad_file(path: impl AsRef<Path>) -> Result<(Vec<QATriple>, IngestStats)> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    ingest_squad(&text, &path.display().to_string())
}

/// Ingests the canonical JSONL corpus format: one
/// `{"question", "answer", "context"}` object per line. Lines that fail
/// triple validation are rejected with their line number; the rest are kept.
pub fn ingest_canonical(path: impl AsRef<Path>) -> Result<(Vec<QATriple>, IngestStats)> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut triples = Vec::new();
    let mut stats = IngestStats::default();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parsed: std::result::Result<QATriple, _> = serde_json::from_str(line);
        match parsed.map_err(|e| e.to_string()).and_then(|raw| {
            QATriple::new(raw.question, raw.answer, raw.context).map_err(|e| e.to_string())
        }) {
            Ok(t) => triples.push(t),
            Err(reason) => stats.rejected.push((format!("line {}", i + 1), reason)),
        }
    }
    stats.accepted = triples.len();
    Ok((triples, stats))
}

/// Writes triples as canonical JSONL with the fixed field order
/// question, answer, context. Byte-stable for identical inputs.
pub fn write_canonical(path: impl AsRef<Path>, triples: &[QATriple]) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, canonical_jsonl(triples)?).map_err(|e| Error::io(path, e))
}

pub fn canonical_jsonl(triples: &[QATriple]) -> Result<String> {
    let mut out = String::new();
    for t in triples {
        out.push_str(&serde_json::to_string(t)?);
        out.push('\n');
    }
    Ok(out)
}

/// Renders a fine-tuning corpus: each document followed by the backend's
/// end-of-text token (when declared) and a blank separator line.
pub fn render_corpus(docs: &[QACDocument], end_of_text: Option<&str>) -> String {
    let mut out = String::new();
    for doc in docs {
        out.push_str(doc.as_str());
        out.push('\n');
        if let Some(eot) = end_of_text {
            out.push_str(eot);
            out.push('\n');
        }
        out.push('\n');
    }
    out
}

pub fn write_corpus(
    path: impl AsRef<Path>,
    docs: &[QACDocument],
    end_of_text: Option<&str>,
) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, render_corpus(docs, end_of_text)).map_err(|e| Error::io(path, e))
}

/// Reads a fine-tuning corpus back: splits on blank lines, strips end-of-text
/// lines, validates each chunk's layout.
pub fn read_corpus(path: impl AsRef<Path>, end_of_text: Option<&str>) -> Result<Vec<QACDocument>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_corpus(&text, end_of_text)
}

pub fn parse_corpus(text: &str, end_of_text: Option<&str>) -> Result<Vec<QACDocument>> {
    let mut docs = Vec::new();
    for chunk in text.split("\n\n") {
        let mut lines: Vec<&str> = chunk.lines().collect();
        if let Some(eot) = end_of_text {
            lines.retain(|l| l.trim() != eot);
        }
        let body = lines.join("\n");
        if body.trim().is_empty() {
            continue;
        }
        docs.push(QACDocument::new(body)?);
    }
    Ok(docs)
}
