//! Instruction-mix statistics over textual assembly listings.
//!
//! A mnemonic is the opcode with all of its dot-joined qualifiers
//! (`ld.global.v4.b32`); operands are ignored. The rules are token based and
//! deliberately grammar-light so PTX and AMD listings go through the same path.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AsmDoc {
    pub source_id: String,
    pub text: String,
}

impl AsmDoc {
    pub fn new(source_id: impl Into<String>, text: impl Into<String>) -> Self {
        AsmDoc {
            source_id: source_id.into(),
            text: text.into(),
        }
    }

    /// Decodes `bytes` as UTF-8, replacing invalid sequences.
    pub fn from_bytes(source_id: impl Into<String>, bytes: &[u8]) -> Self {
        AsmDoc::new(source_id, String::from_utf8_lossy(bytes).into_owned())
    }

    /// Reads a listing; the id is the file stem.
    pub fn load(path: &Path) -> io::Result<Self> {
        let bytes = fs::read(path)?;
        let id = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| path.display().to_string());
        Ok(AsmDoc::from_bytes(id, &bytes))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Parsed {
    pub mnemonics: Vec<String>,
    /// Fragments that were neither skippable nor an instruction.
    pub diagnostics: usize,
}

/// Replaces comments with whitespace. A block comment spanning lines becomes
/// a line break so it cannot glue two statements together.
fn strip_comments(text: &str, diagnostics: &mut usize) -> String {
    let mut out = String::with_capacity(text.len());
    let mut rest = text;
    while !rest.is_empty() {
        let line = rest.find("//");
        let block = rest.find("/*");
        match (line, block) {
            (Some(l), b) if b.is_none_or(|b| l < b) => {
                out.push_str(&rest[..l]);
                rest = &rest[l..];
                match rest.find('\n') {
                    Some(nl) => rest = &rest[nl..],
                    None => rest = "",
                }
            }
            (_, Some(b)) => {
                out.push_str(&rest[..b]);
                let body = &rest[b + 2..];
                match body.find("*/") {
                    Some(end) => {
                        out.push(if body[..end].contains('\n') {
                            '\n'
                        } else {
                            ' '
                        });
                        rest = &body[end + 2..];
                    }
                    None => {
                        *diagnostics += 1;
                        rest = "";
                    }
                }
            }
            _ => {
                out.push_str(rest);
                rest = "";
            }
        }
    }
    out
}

fn is_mnemonic_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_' || c == '.'
}

fn statement_mnemonic(statement: &str) -> Result<Option<String>, ()> {
    let mut tokens = statement.split_whitespace().peekable();
    let mut guard_seen = false;
    while let Some(&tok) = tokens.peek() {
        if tok == "{" || tok == "}" || tok.ends_with(':') {
            tokens.next();
        } else if tok.starts_with('@') && !guard_seen {
            guard_seen = true;
            tokens.next();
        } else {
            break;
        }
    }
    let Some(first) = tokens.next() else {
        return Ok(None);
    };
    if first.starts_with('.') {
        return Ok(None);
    }
    let end = first
        .char_indices()
        .find(|&(_, c)| !is_mnemonic_char(c))
        .map_or(first.len(), |(i, _)| i);
    let mnemonic = &first[..end];
    match mnemonic.chars().next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' => Ok(Some(mnemonic.to_string())),
        _ => Err(()),
    }
}

/// One mnemonic per instruction statement, in listing order.
pub fn parse_asm(doc: &AsmDoc) -> Parsed {
    let mut parsed = Parsed::default();
    let clean = strip_comments(&doc.text, &mut parsed.diagnostics);
    for statement in clean.split(['\n', ';']) {
        match statement_mnemonic(statement) {
            Ok(Some(m)) => parsed.mnemonics.push(m),
            Ok(None) => {}
            Err(()) => parsed.diagnostics += 1,
        }
    }
    parsed
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AsmStats {
    pub source_id: String,
    pub unique_mnemonics: usize,
    pub total_instructions: usize,
    pub histogram: BTreeMap<String, usize>,
    pub diagnostics: usize,
}

pub fn stats(doc: &AsmDoc) -> AsmStats {
    let parsed = parse_asm(doc);
    let mut histogram = BTreeMap::new();
    for m in &parsed.mnemonics {
        *histogram.entry(m.clone()).or_insert(0) += 1;
    }
    AsmStats {
        source_id: doc.source_id.clone(),
        unique_mnemonics: histogram.len(),
        total_instructions: parsed.mnemonics.len(),
        histogram,
        diagnostics: parsed.diagnostics,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DiversityError {
    #[error("duplicate source id `{0}`")]
    DuplicateSource(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiversityRow {
    pub source_id: String,
    pub unique: usize,
    pub total: usize,
    pub best: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DiversityReport {
    pub rows: Vec<DiversityRow>,
    /// `None` when no best id was given or it names no source.
    pub best_id: Option<String>,
    pub max_unique: usize,
    pub max_total: usize,
}

#[derive(Serialize)]
struct JsonSource<'a> {
    id: &'a str,
    unique: usize,
    total: usize,
}

#[derive(Serialize)]
struct JsonReport<'a> {
    sources: Vec<JsonSource<'a>>,
    best_id: Option<&'a str>,
    max_unique: usize,
    max_total: usize,
}

pub fn diversity_report(
    stats: &[AsmStats],
    best_id: Option<&str>,
) -> Result<DiversityReport, DiversityError> {
    let mut seen = HashSet::new();
    for s in stats {
        if !seen.insert(s.source_id.as_str()) {
            return Err(DiversityError::DuplicateSource(s.source_id.clone()));
        }
    }
    let best_id = best_id.filter(|id| {
        let found = seen.contains(id);
        if !found {
            log::warn!("best id `{id}` is not among the sources; no row is flagged");
        }
        found
    });
    let rows = stats
        .iter()
        .map(|s| DiversityRow {
            source_id: s.source_id.clone(),
            unique: s.unique_mnemonics,
            total: s.total_instructions,
            best: Some(s.source_id.as_str()) == best_id,
        })
        .collect::<Vec<_>>();
    Ok(DiversityReport {
        max_unique: rows.iter().map(|r| r.unique).max().unwrap_or(0),
        max_total: rows.iter().map(|r| r.total).max().unwrap_or(0),
        best_id: best_id.map(str::to_string),
        rows,
    })
}

impl DiversityReport {
    /// Columns `source_id,unique,total,best`.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        if self.rows.is_empty() {
            w.write_record(["source_id", "unique", "total", "best"])
                .expect("in-memory write");
        }
        for r in &self.rows {
            w.serialize(r).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("CSV of UTF-8 fields")
    }

    pub fn to_json(&self) -> serde_json::Value {
        let report = JsonReport {
            sources: self
                .rows
                .iter()
                .map(|r| JsonSource {
                    id: &r.source_id,
                    unique: r.unique,
                    total: r.total,
                })
                .collect(),
            best_id: self.best_id.as_deref(),
            max_unique: self.max_unique,
            max_total: self.max_total,
        };
        serde_json::to_value(report).expect("report serializes")
    }
}
