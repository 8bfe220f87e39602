//! JSON-lines record files, TSV side files and the segment manifest.
//!
//! Monolingual lines are `{"id","lang","text"}`; bitext lines are
//! `{"id","src_lang","src","tgt_lang","tgt"}`. Output is UTF-8 with LF line
//! endings, fields in that order.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::Value;

use crate::error::{Error, Result};
use crate::textclean::{BitextRecord, SentenceRecord};

#[derive(Debug, Clone, PartialEq)]
pub enum Records {
    Mono(Vec<SentenceRecord>),
    Bitext(Vec<BitextRecord>),
}

impl Records {
    pub fn len(&self) -> usize {
        match self {
            Records::Mono(r) => r.len(),
            Records::Bitext(r) => r.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// A record file with unparseable lines kept apart (1-based line numbers).
#[derive(Debug, Clone)]
pub struct RecordFile {
    pub records: Records,
    pub invalid_lines: Vec<(usize, String)>,
}

fn is_bitext(v: &Value) -> bool {
    v.get("src").is_some() || v.get("tgt").is_some()
}

/// Reads a JSON-lines record file. The first parseable line decides whether
/// the file holds monolingual or bitext records; lines of the other kind, or
/// lines that fail to parse, are reported as invalid.
pub fn read_records(path: &Path) -> Result<RecordFile> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut kind: Option<bool> = None;
    let mut mono = Vec::new();
    let mut bitext = Vec::new();
    let mut invalid_lines = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let value: Value = match serde_json::from_str(line) {
            Ok(v) => v,
            Err(e) => {
                invalid_lines.push((lineno, e.to_string()));
                continue;
            }
        };
        let this_bitext = is_bitext(&value);
        let kind = *kind.get_or_insert(this_bitext);
        if kind != this_bitext {
            invalid_lines.push((
                lineno,
                "record kind differs from the rest of the file".into(),
            ));
            continue;
        }
        let parsed = if kind {
            serde_json::from_value::<BitextRecord>(value).map(|r| bitext.push(r))
        } else {
            serde_json::from_value::<SentenceRecord>(value).map(|r| mono.push(r))
        };
        if let Err(e) = parsed {
            invalid_lines.push((lineno, e.to_string()));
        }
    }
    let records = if kind == Some(true) {
        Records::Bitext(bitext)
    } else {
        Records::Mono(mono)
    };
    Ok(RecordFile {
        records,
        invalid_lines,
    })
}

pub fn read_mono(path: &Path) -> Result<Vec<SentenceRecord>> {
    let file = read_records(path)?;
    if let Some((line, msg)) = file.invalid_lines.first() {
        return Err(Error::format(path, format!("line {line}: {msg}")));
    }
    match file.records {
        Records::Mono(r) => Ok(r),
        Records::Bitext(_) => Err(Error::format(path, "expected monolingual records")),
    }
}

pub fn to_jsonl<T: Serialize>(records: &[T]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("records serialize"));
        out.push('\n');
    }
    out
}

pub fn write_records(path: &Path, records: &Records) -> Result<()> {
    let text = match records {
        Records::Mono(r) => to_jsonl(r),
        Records::Bitext(r) => to_jsonl(r),
    };
    write_file(path, text.as_bytes())
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}

/// `id<TAB>value` lines with six decimals.
pub fn format_scores<'a>(rows: impl IntoIterator<Item = (&'a str, f64)>) -> String {
    let mut out = String::new();
    for (id, v) in rows {
        let _ = writeln!(out, "{id}\t{v:.6}");
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestRow {
    pub utt_id: String,
    pub path: PathBuf,
    pub start_s: f64,
    pub end_s: f64,
}

/// Rounds seconds to the 3 decimals written to the manifest.
pub fn round_ms(t: f64) -> f64 {
    (t * 1000.0).round() / 1000.0
}

/// `utt_id<TAB>path<TAB>start<TAB>end`, seconds with 3 decimals, no header.
pub fn format_manifest(rows: &[ManifestRow]) -> String {
    let mut out = String::new();
    for r in rows {
        let _ = writeln!(
            out,
            "{}\t{}\t{:.3}\t{:.3}",
            r.utt_id,
            r.path.display(),
            r.start_s,
            r.end_s
        );
    }
    out
}

pub fn parse_manifest(text: &str) -> std::result::Result<Vec<ManifestRow>, String> {
    let mut rows = Vec::new();
    let mut ids = std::collections::HashSet::new();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        let cols: Vec<&str> = line.split('\t').collect();
        let [id, path, start, end] = cols[..] else {
            return Err(format!("line {lineno}: expected 4 tab-separated columns"));
        };
        let start_s: f64 = start
            .parse()
            .map_err(|_| format!("line {lineno}: bad start {start:?}"))?;
        let end_s: f64 = end
            .parse()
            .map_err(|_| format!("line {lineno}: bad end {end:?}"))?;
        if end_s <= start_s {
            return Err(format!(
                "line {lineno}: end {end_s} is not after start {start_s}"
            ));
        }
        if !ids.insert(id.to_string()) {
            return Err(format!("line {lineno}: duplicate utterance id {id:?}"));
        }
        rows.push(ManifestRow {
            utt_id: id.to_string(),
            path: PathBuf::from(path),
            start_s,
            end_s,
        });
    }
    Ok(rows)
}
