//! Stage runners. Each stage reads its inputs, writes its outputs and
//! returns a serializable report. Work inside a stage runs in parallel, but
//! results are always assembled in input order.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::activation::{energy_activation, read_trace, read_wav};
use crate::align::{align_viterbi, alignment_quality, filter_bottom_fraction, train_model1};
use crate::cli::config::{
    utterance_stem, AlignFilterStage, CleanStage, DedupStage, LangIdStage, ScoredSide,
    SegmentStage, SelectStage,
};
use crate::cli::io::{
    format_manifest, format_scores, read_mono, read_records, round_ms, write_file, write_records,
    ManifestRow, RecordFile, Records,
};
use crate::error::{Error, Result};
use crate::lmselect::{select, tokenize, LmConfig, NGramCounts, NGramModel, SelectPolicy};
use crate::segmenter::{merge_segments, segment_audio, FrameTrace, TimeSpan};
use crate::textclean::{
    check_text, deduplicate_parallel, language_filter, CharNgramClassifier, FilterReport, Lang,
    LanguageIdentifier, RejectReason,
};

const LM_COUNT_CHUNK: usize = 1024;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileFailure {
    pub path: PathBuf,
    pub error: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SegmentReport {
    pub files: usize,
    pub failed: Vec<FileFailure>,
    pub segments: usize,
    pub input_hours: f64,
    pub total_hours: f64,
    pub max_duration_s: f64,
    pub mean_duration_s: f64,
    /// Segments that vanished when rounded to milliseconds.
    pub dropped_subms: usize,
}

fn load_trace(path: &Path, stage: &SegmentStage) -> Result<FrameTrace> {
    let is_wav = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("wav"));
    if is_wav {
        energy_activation(&read_wav(path)?, &stage.energy)
    } else {
        read_trace(path)
    }
}

/// Activation, segmentation and (optionally) merging for one input.
pub fn segment_file(path: &Path, stage: &SegmentStage) -> Result<(Vec<TimeSpan>, f64)> {
    let trace = load_trace(path, stage)?;
    let mut spans = segment_audio(&trace, &stage.segmenter)?;
    if stage.merge_enabled {
        spans = merge_segments(&spans, &stage.merge)?;
    }
    Ok((spans, trace.duration_s()))
}

pub fn run_segment(stage: &SegmentStage) -> Result<SegmentReport> {
    let results: Vec<Result<(Vec<TimeSpan>, f64)>> = stage
        .inputs
        .par_iter()
        .map(|p| segment_file(p, stage))
        .collect();

    let mut report = SegmentReport {
        files: stage.inputs.len(),
        ..Default::default()
    };
    let mut rows = Vec::new();
    for (path, result) in stage.inputs.iter().zip(results) {
        match result {
            Ok((spans, duration)) => {
                report.input_hours += duration / 3600.0;
                let stem = utterance_stem(path);
                let mut n = 0;
                for span in spans {
                    let (start_s, end_s) = (round_ms(span.start_s), round_ms(span.end_s));
                    if end_s <= start_s {
                        report.dropped_subms += 1;
                        continue;
                    }
                    rows.push(ManifestRow {
                        utt_id: format!("{stem}_{n:04}"),
                        path: path.clone(),
                        start_s,
                        end_s,
                    });
                    n += 1;
                }
            }
            Err(e) => {
                warn!("{}: {e}", path.display());
                report.failed.push(FileFailure {
                    path: path.clone(),
                    error: e.to_string(),
                });
            }
        }
    }
    let durations: Vec<f64> = rows.iter().map(|r| r.end_s - r.start_s).collect();
    report.segments = rows.len();
    let total_s: f64 = durations.iter().sum();
    report.total_hours = total_s / 3600.0;
    report.max_duration_s = durations.iter().copied().fold(0.0, f64::max);
    report.mean_duration_s = if rows.is_empty() {
        0.0
    } else {
        total_s / rows.len() as f64
    };
    write_file(&stage.manifest, format_manifest(&rows).as_bytes())?;
    info!(
        "segment: {} files, {} segments, {:.3} h",
        report.files, report.segments, report.total_hours
    );
    Ok(report)
}

/// Report for the text stages: record accounting plus stage-specific extras.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TextReport {
    #[serde(flatten)]
    pub counts: FilterReport,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub warnings: Vec<String>,
}

fn start_report(file: &RecordFile) -> FilterReport {
    let mut report = FilterReport::default();
    for _ in &file.invalid_lines {
        report.reject(RejectReason::Invalid);
    }
    report
}

fn invalid_warnings(path: &Path, file: &RecordFile) -> Vec<String> {
    file.invalid_lines
        .iter()
        .map(|(line, msg)| format!("{}:{line}: {msg}", path.display()))
        .collect()
}

pub fn run_clean(stage: &CleanStage) -> Result<TextReport> {
    let file = read_records(&stage.input)?;
    let mut report = start_report(&file);
    let rules = &stage.rules;
    let kept = match file.records {
        Records::Mono(ref recs) => {
            let checked: Vec<std::result::Result<String, RejectReason>> = recs
                .par_iter()
                .map(|r| {
                    if r.id.is_empty() {
                        Err(RejectReason::Invalid)
                    } else {
                        check_text(&r.text, &r.lang, rules)
                    }
                })
                .collect();
            let mut kept = Vec::new();
            for (rec, res) in recs.iter().zip(checked) {
                match res {
                    Ok(text) => {
                        report.keep();
                        kept.push(crate::textclean::SentenceRecord {
                            text,
                            ..rec.clone()
                        });
                    }
                    Err(reason) => report.reject(reason),
                }
            }
            Records::Mono(kept)
        }
        Records::Bitext(ref recs) => {
            let checked: Vec<_> = recs
                .par_iter()
                .map(|r| {
                    if r.id.is_empty() {
                        return Err(RejectReason::Invalid);
                    }
                    let src = check_text(&r.src_text, &r.src_lang, rules)?;
                    let tgt = check_text(&r.tgt_text, &r.tgt_lang, rules)?;
                    Ok((src, tgt))
                })
                .collect();
            let mut kept = Vec::new();
            for (rec, res) in recs.iter().zip(checked) {
                match res {
                    Ok((src_text, tgt_text)) => {
                        report.keep();
                        kept.push(crate::textclean::BitextRecord {
                            src_text,
                            tgt_text,
                            ..rec.clone()
                        });
                    }
                    Err(reason) => report.reject(reason),
                }
            }
            Records::Bitext(kept)
        }
    };
    write_records(&stage.output, &kept)?;
    Ok(TextReport {
        counts: report,
        warnings: invalid_warnings(&stage.input, &file),
    })
}

pub fn run_dedup(stage: &DedupStage) -> Result<TextReport> {
    let file = read_records(&stage.input)?;
    let mut report = start_report(&file);
    let (kept, dedup) = match file.records.clone() {
        Records::Mono(r) => {
            let (k, rep) = deduplicate_parallel(r);
            (Records::Mono(k), rep)
        }
        Records::Bitext(r) => {
            let (k, rep) = deduplicate_parallel(r);
            (Records::Bitext(k), rep)
        }
    };
    merge_reports(&mut report, &dedup);
    write_records(&stage.output, &kept)?;
    Ok(TextReport {
        counts: report,
        warnings: invalid_warnings(&stage.input, &file),
    })
}

fn merge_reports(into: &mut FilterReport, from: &FilterReport) {
    into.input += from.input;
    into.kept += from.kept;
    for (reason, n) in &from.rejected {
        *into.rejected.entry(*reason).or_default() += n;
    }
}

fn train_langid(stage: &LangIdStage) -> Result<CharNgramClassifier> {
    let mut seeds: BTreeMap<Lang, Vec<String>> = BTreeMap::new();
    for (lang, path) in &stage.seeds {
        let texts = read_mono(path)?.into_iter().map(|r| r.text).collect();
        seeds.insert(lang.clone(), texts);
    }
    CharNgramClassifier::train(&seeds)
}

pub fn run_langid(stage: &LangIdStage) -> Result<TextReport> {
    let classifier = train_langid(stage)?;
    let known = classifier.languages();
    let file = read_records(&stage.input)?;
    let mut report = start_report(&file);
    let mut warnings = invalid_warnings(&stage.input, &file);

    let (kept, rejected) = match file.records.clone() {
        Records::Mono(recs) => {
            if let Some(expected) = &stage.expected_lang {
                let (k, r, rep) = language_filter(recs, expected, &classifier)?;
                merge_reports(&mut report, &rep);
                (Records::Mono(k), Records::Mono(r))
            } else {
                let verdicts: Vec<Option<RejectReason>> = recs
                    .par_iter()
                    .map(|r| match classifier.identify(&r.text) {
                        None => Some(RejectReason::Empty),
                        Some(l) if l == r.lang => None,
                        Some(_) => Some(RejectReason::WrongLanguage),
                    })
                    .collect();
                let (mut k, mut rj) = (Vec::new(), Vec::new());
                for (rec, v) in recs.into_iter().zip(verdicts) {
                    if !known.contains(&rec.lang) {
                        warnings.push(format!("{}: no seed corpus for {}", rec.id, rec.lang));
                    }
                    match v {
                        None => {
                            report.keep();
                            k.push(rec);
                        }
                        Some(reason) => {
                            report.reject(reason);
                            rj.push(rec);
                        }
                    }
                }
                (Records::Mono(k), Records::Mono(rj))
            }
        }
        Records::Bitext(recs) => {
            let verdicts: Vec<Option<RejectReason>> = recs
                .par_iter()
                .map(|r| {
                    let src = classifier.identify(&r.src_text);
                    let tgt = classifier.identify(&r.tgt_text);
                    match (src, tgt) {
                        (None, _) | (_, None) => Some(RejectReason::Empty),
                        (Some(s), Some(t)) if s == r.src_lang && t == r.tgt_lang => None,
                        _ => Some(RejectReason::WrongLanguage),
                    }
                })
                .collect();
            let (mut k, mut rj) = (Vec::new(), Vec::new());
            for (rec, v) in recs.into_iter().zip(verdicts) {
                match v {
                    None => {
                        report.keep();
                        k.push(rec);
                    }
                    Some(reason) => {
                        report.reject(reason);
                        rj.push(rec);
                    }
                }
            }
            (Records::Bitext(k), Records::Bitext(rj))
        }
    };
    write_records(&stage.output, &kept)?;
    if let Some(path) = &stage.rejected {
        write_records(path, &rejected)?;
    }
    Ok(TextReport {
        counts: report,
        warnings,
    })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AlignReport {
    #[serde(flatten)]
    pub text: TextReport,
    /// Corpus log-likelihood per EM iteration.
    pub log_likelihood: Vec<f64>,
    pub mean_quality: f64,
    /// Pairs whose quality could not be computed (empty target); scored 0.
    pub undefined_quality: usize,
}

pub fn run_align_filter(stage: &AlignFilterStage) -> Result<AlignReport> {
    let file = read_records(&stage.input)?;
    if file.records.is_empty() {
        return Err(Error::Config(format!(
            "{}: no bitext pairs to align",
            stage.input.display()
        )));
    }
    let Records::Bitext(pairs) = &file.records else {
        return Err(Error::format(
            &stage.input,
            "align-filter needs bitext records",
        ));
    };
    let mut report = start_report(&file);
    let trained = train_model1(pairs, &stage.model)?;
    let table = &trained.table;
    if let Some(path) = &stage.table {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        table.write(path)?;
    }

    let qualities: Vec<Option<f64>> = pairs
        .par_iter()
        .map(|p| {
            align_viterbi(table, p)
                .and_then(|r| alignment_quality(&r, stage.posterior_floor))
                .ok()
        })
        .collect();
    let undefined = qualities.iter().filter(|q| q.is_none()).count();
    let qualities: Vec<f64> = qualities.into_iter().map(|q| q.unwrap_or(0.0)).collect();
    let kept_idx = filter_bottom_fraction(&qualities, stage.fraction)?;

    let mut keep = vec![false; pairs.len()];
    for &i in &kept_idx {
        keep[i] = true;
    }
    let mut kept = Vec::with_capacity(kept_idx.len());
    for (i, pair) in pairs.iter().enumerate() {
        if keep[i] {
            report.keep();
            kept.push(pair.clone());
        } else {
            report.reject(RejectReason::LowAlignment);
        }
    }
    write_file(
        &stage.qualities,
        format_scores(
            pairs
                .iter()
                .map(|p| p.id.as_str())
                .zip(qualities.iter().copied()),
        )
        .as_bytes(),
    )?;
    write_records(&stage.output, &Records::Bitext(kept))?;
    let mean_quality = qualities.iter().sum::<f64>() / qualities.len() as f64;
    Ok(AlignReport {
        text: TextReport {
            counts: report,
            warnings: invalid_warnings(&stage.input, &file),
        },
        log_likelihood: trained.log_likelihood,
        mean_quality,
        undefined_quality: undefined,
    })
}

/// Counts n-grams over fixed-size chunks in parallel and merges them in
/// chunk order.
pub fn train_lm_parallel(sentences: &[Vec<String>], config: LmConfig) -> Result<NGramModel> {
    if sentences.is_empty() {
        return Err(Error::param(
            "cannot train a language model on an empty corpus",
        ));
    }
    let shards: Vec<Result<NGramCounts>> = sentences
        .par_chunks(LM_COUNT_CHUNK)
        .map(|chunk| {
            let mut c = NGramCounts::new(config)?;
            chunk.iter().for_each(|s| c.add_sentence(s));
            Ok(c)
        })
        .collect();
    let mut total = NGramCounts::new(config)?;
    for shard in shards {
        total.merge(shard?)?;
    }
    NGramModel::from_counts(total)
}

fn seed_sentences(path: &Path) -> Result<Vec<Vec<String>>> {
    Ok(read_mono(path)?
        .iter()
        .map(|r| tokenize(&r.text, &r.lang))
        .collect())
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SelectReport {
    #[serde(flatten)]
    pub text: TextReport,
    pub policy: Option<SelectPolicy>,
}

pub fn run_select(stage: &SelectStage) -> Result<SelectReport> {
    let in_lm = train_lm_parallel(&seed_sentences(&stage.in_domain)?, stage.lm)?;
    let out_lm = train_lm_parallel(&seed_sentences(&stage.out_domain)?, stage.lm)?;
    if let Some(dir) = &stage.model_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        in_lm.write(dir.join("in_domain.lm"))?;
        out_lm.write(dir.join("out_domain.lm"))?;
    }

    let file = read_records(&stage.input)?;
    let mut report = start_report(&file);
    let (ids, sentences): (Vec<String>, Vec<Vec<String>>) = match &file.records {
        Records::Mono(r) => r
            .iter()
            .map(|r| (r.id.clone(), tokenize(&r.text, &r.lang)))
            .unzip(),
        Records::Bitext(r) => r
            .iter()
            .map(|r| {
                let toks = match stage.side {
                    ScoredSide::Src => tokenize(&r.src_text, &r.src_lang),
                    ScoredSide::Tgt => tokenize(&r.tgt_text, &r.tgt_lang),
                };
                (r.id.clone(), toks)
            })
            .unzip(),
    };
    let scores: Vec<f64> = sentences
        .par_iter()
        .map(|s| in_lm.cross_entropy(s) - out_lm.cross_entropy(s))
        .collect();
    let selection = select(&scores, stage.policy);
    let mut keep = vec![false; scores.len()];
    for &i in &selection.indices {
        keep[i] = true;
    }
    for &k in &keep {
        if k {
            report.keep();
        } else {
            report.reject(RejectReason::OutOfDomain);
        }
    }
    let kept = match &file.records {
        Records::Mono(r) => Records::Mono(pick(r, &keep)),
        Records::Bitext(r) => Records::Bitext(pick(r, &keep)),
    };
    write_file(
        &stage.scores,
        format_scores(ids.iter().map(String::as_str).zip(scores.iter().copied())).as_bytes(),
    )?;
    write_records(&stage.output, &kept)?;
    let mut warnings = invalid_warnings(&stage.input, &file);
    warnings.extend(selection.warnings);
    Ok(SelectReport {
        text: TextReport {
            counts: report,
            warnings,
        },
        policy: Some(stage.policy),
    })
}

fn pick<T: Clone>(records: &[T], keep: &[bool]) -> Vec<T> {
    records
        .iter()
        .zip(keep)
        .filter(|(_, &k)| k)
        .map(|(r, _)| r.clone())
        .collect()
}
