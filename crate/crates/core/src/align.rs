//! IBM Model 1 lexical alignment trained with EM, used to score bitext pairs
//! by the share of confidently aligned target words.
//!
//! An optional diagonal prior weights source position `i` (of `I`) for target
//! position `j` (of `J`) by `exp(-lambda * |i/I - j/J|)`. The NULL source
//! word gets the mean of the non-NULL weights, so its share of the prior is
//! always `1 / (I + 1)`. With `lambda = 0` every weight is exactly 1 and the
//! model is plain Model 1.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lmselect::tokenize;
use crate::textclean::BitextRecord;

pub const NULL_TOKEN: &str = "<NULL>";
/// Probability used for (source, target) pairs absent from the table.
pub const PROB_FLOOR: f64 = 1e-12;
/// Pairs per E-step work unit. Chunks are reduced in input order, so counts
/// do not depend on the number of threads.
const E_STEP_CHUNK: usize = 256;
const DUMP_MAGIC: &str = "#speechprep-ttable v1";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Model1Config {
    pub iterations: usize,
    /// Diagonal prior strength; `None` is plain Model 1.
    pub diagonal_lambda: Option<f64>,
}

impl Default for Model1Config {
    fn default() -> Self {
        Self {
            iterations: 5,
            diagonal_lambda: None,
        }
    }
}

impl Model1Config {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::param("EM iterations must be >= 1"));
        }
        if let Some(l) = self.diagonal_lambda {
            if !(l.is_finite() && l >= 0.0) {
                return Err(Error::param(format!(
                    "diagonal lambda must be >= 0, got {l}"
                )));
            }
        }
        Ok(())
    }
}

/// Lexical translation probabilities `t(target | source)`. Source id 0 is NULL.
#[derive(Debug, Clone, PartialEq)]
pub struct TranslationTable {
    src_vocab: Vec<String>,
    tgt_vocab: Vec<String>,
    src_index: HashMap<String, u32>,
    tgt_index: HashMap<String, u32>,
    rows: Vec<HashMap<u32, f64>>,
    diagonal_lambda: Option<f64>,
}

/// Tokenized pair as vocabulary ids. Source ids exclude NULL.
#[derive(Debug, Clone)]
struct IdPair {
    src: Vec<u32>,
    tgt: Vec<u32>,
}

/// Alignment prior over positions `0..=I` (0 = NULL) for target position `j`
/// (1-based) of `tgt_len`. Unnormalized.
fn prior_weights(
    src_len: usize,
    j: usize,
    tgt_len: usize,
    lambda: Option<f64>,
    out: &mut Vec<f64>,
) {
    out.clear();
    match lambda {
        None => out.resize(src_len + 1, 1.0),
        Some(lambda) => {
            out.push(0.0);
            let jr = j as f64 / tgt_len as f64;
            for i in 1..=src_len {
                out.push((-lambda * (i as f64 / src_len as f64 - jr).abs()).exp());
            }
            out[0] = if src_len == 0 {
                1.0
            } else {
                out[1..].iter().sum::<f64>() / src_len as f64
            };
        }
    }
}

/// E-step accumulator: fractional counts `c(f, e)` and the corpus
/// log-likelihood under the table they were collected with.
#[derive(Debug, Clone, Default)]
pub struct ExpectedCounts {
    counts: HashMap<(u32, u32), f64>,
    pub log_likelihood: f64,
}

impl ExpectedCounts {
    pub fn merge(&mut self, other: ExpectedCounts) {
        for (k, v) in other.counts {
            *self.counts.entry(k).or_default() += v;
        }
        self.log_likelihood += other.log_likelihood;
    }
}

impl TranslationTable {
    pub fn diagonal_lambda(&self) -> Option<f64> {
        self.diagonal_lambda
    }

    pub fn source_vocab(&self) -> &[String] {
        &self.src_vocab
    }

    /// `t(target | source)`, floored at [`PROB_FLOOR`] for unseen events.
    pub fn prob(&self, source: &str, target: &str) -> f64 {
        match (self.src_index.get(source), self.tgt_index.get(target)) {
            (Some(&e), Some(&f)) => self.prob_ids(e, f),
            _ => PROB_FLOOR,
        }
    }

    fn prob_ids(&self, e: u32, f: u32) -> f64 {
        self.rows[e as usize].get(&f).copied().unwrap_or(PROB_FLOOR)
    }

    /// Sum of each source row, keyed by source token.
    pub fn row_sums(&self) -> BTreeMap<String, f64> {
        self.src_vocab
            .iter()
            .zip(&self.rows)
            .map(|(e, row)| (e.clone(), row.values().sum()))
            .collect()
    }

    fn ids(&self, pair: &BitextRecord) -> (Vec<Option<u32>>, Vec<Option<u32>>) {
        let src = tokenize(&pair.src_text, &pair.src_lang)
            .iter()
            .map(|t| self.src_index.get(t).copied())
            .collect();
        let tgt = tokenize(&pair.tgt_text, &pair.tgt_lang)
            .iter()
            .map(|t| self.tgt_index.get(t).copied())
            .collect();
        (src, tgt)
    }

    fn e_step(&self, pairs: &[IdPair]) -> ExpectedCounts {
        let mut acc = ExpectedCounts::default();
        let mut weights = Vec::new();
        let mut scores = Vec::new();
        for pair in pairs {
            let (src_len, tgt_len) = (pair.src.len(), pair.tgt.len());
            for (j, &f) in pair.tgt.iter().enumerate() {
                prior_weights(src_len, j + 1, tgt_len, self.diagonal_lambda, &mut weights);
                scores.clear();
                scores.push(weights[0] * self.prob_ids(0, f));
                for (i, &e) in pair.src.iter().enumerate() {
                    scores.push(weights[i + 1] * self.prob_ids(e, f));
                }
                let denom: f64 = scores.iter().sum();
                let prior_mass: f64 = weights.iter().sum();
                acc.log_likelihood += (denom / prior_mass).ln();
                *acc.counts.entry((0, f)).or_default() += scores[0] / denom;
                for (i, &e) in pair.src.iter().enumerate() {
                    *acc.counts.entry((e, f)).or_default() += scores[i + 1] / denom;
                }
            }
        }
        acc
    }

    fn e_step_chunked(&self, pairs: &[IdPair]) -> ExpectedCounts {
        let partials: Vec<ExpectedCounts> = pairs
            .par_chunks(E_STEP_CHUNK)
            .map(|chunk| self.e_step(chunk))
            .collect();
        let mut total = ExpectedCounts::default();
        for p in partials {
            total.merge(p);
        }
        total
    }

    fn m_step(&mut self, counts: &ExpectedCounts) {
        let mut totals = vec![0.0; self.rows.len()];
        // Sorted so every row is summed in the same order on every run.
        let mut entries: Vec<(&(u32, u32), &f64)> = counts.counts.iter().collect();
        entries.sort_unstable_by_key(|(k, _)| **k);
        for ((e, _), &c) in &entries {
            totals[*e as usize] += c;
        }
        for row in &mut self.rows {
            row.clear();
        }
        for ((e, f), &c) in entries {
            let total = totals[*e as usize];
            if total > 0.0 {
                self.rows[*e as usize].insert(*f, c / total);
            }
        }
    }

    /// Expected counts for a batch of pairs under the current table; batches
    /// can be merged with [`ExpectedCounts::merge`].
    pub fn expected_counts(&self, pairs: &[BitextRecord]) -> ExpectedCounts {
        let ids: Vec<IdPair> = pairs
            .iter()
            .map(|p| {
                let (src, tgt) = self.ids(p);
                IdPair {
                    src: src.into_iter().flatten().collect(),
                    tgt: tgt.into_iter().flatten().collect(),
                }
            })
            .collect();
        self.e_step(&ids)
    }

    /// Replaces the table with the maximum-likelihood estimate from `counts`.
    pub fn apply_counts(&mut self, counts: &ExpectedCounts) {
        self.m_step(counts);
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from(DUMP_MAGIC);
        match self.diagonal_lambda {
            Some(l) => {
                let _ = writeln!(out, " lambda={l}");
            }
            None => out.push('\n'),
        }
        for (e, row) in self.src_vocab.iter().zip(&self.rows) {
            let sorted: BTreeMap<&String, f64> = row
                .iter()
                .map(|(&f, &p)| (&self.tgt_vocab[f as usize], p))
                .collect();
            for (f, p) in sorted {
                let _ = writeln!(out, "{e}\t{f}\t{p}");
            }
        }
        out
    }

    pub fn from_text(text: &str) -> std::result::Result<Self, String> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or("line 1: missing header")?;
        let rest = header
            .strip_prefix(DUMP_MAGIC)
            .ok_or(format!("line 1: expected {DUMP_MAGIC:?}"))?
            .trim();
        let diagonal_lambda = if rest.is_empty() {
            None
        } else {
            let v = rest
                .strip_prefix("lambda=")
                .ok_or(format!("line 1: unexpected {rest:?}"))?;
            Some(v.parse().map_err(|_| format!("line 1: bad lambda {v:?}"))?)
        };

        let mut entries: Vec<(String, String, f64)> = Vec::new();
        for (i, line) in lines {
            let mut parts = line.split('\t');
            let (Some(e), Some(f), Some(p), None) =
                (parts.next(), parts.next(), parts.next(), parts.next())
            else {
                return Err(format!(
                    "line {}: expected source<TAB>target<TAB>prob",
                    i + 1
                ));
            };
            let p: f64 = p
                .parse()
                .map_err(|_| format!("line {}: bad probability", i + 1))?;
            if !(0.0..=1.0).contains(&p) {
                return Err(format!("line {}: probability {p} outside [0, 1]", i + 1));
            }
            entries.push((e.to_string(), f.to_string(), p));
        }

        let mut src: Vec<String> = entries.iter().map(|(e, _, _)| e.clone()).collect();
        src.retain(|e| e != NULL_TOKEN);
        let mut tgt: Vec<String> = entries.iter().map(|(_, f, _)| f.clone()).collect();
        let mut table = Self::with_vocab(&mut src, &mut tgt, diagonal_lambda);
        for (e, f, p) in entries {
            let (e, f) = (table.src_index[&e], table.tgt_index[&f]);
            table.rows[e as usize].insert(f, p);
        }
        Ok(table)
    }

    fn with_vocab(src: &mut Vec<String>, tgt: &mut Vec<String>, lambda: Option<f64>) -> Self {
        src.sort_unstable();
        src.dedup();
        tgt.sort_unstable();
        tgt.dedup();
        let mut src_vocab = vec![NULL_TOKEN.to_string()];
        src_vocab.append(src);
        let tgt_vocab = std::mem::take(tgt);
        let src_index = src_vocab
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i as u32))
            .collect();
        let tgt_index = tgt_vocab
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i as u32))
            .collect();
        Self {
            rows: vec![HashMap::new(); src_vocab.len()],
            src_vocab,
            tgt_vocab,
            src_index,
            tgt_index,
            diagonal_lambda: lambda,
        }
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text).map_err(|m| Error::format(path, m))
    }
}

#[derive(Debug, Clone)]
pub struct TrainedModel1 {
    pub table: TranslationTable,
    /// Corpus log-likelihood (natural log) of the initial table and of the
    /// table after each iteration; `iterations + 1` entries.
    pub log_likelihood: Vec<f64>,
}

/// EM training of IBM Model 1 with a NULL source word, starting from a
/// uniform table.
pub fn train_model1(bitext: &[BitextRecord], config: &Model1Config) -> Result<TrainedModel1> {
    config.validate()?;
    if bitext.is_empty() {
        return Err(Error::param(
            "cannot train an alignment model on empty bitext",
        ));
    }
    let tokenized: Vec<(Vec<String>, Vec<String>)> = bitext
        .iter()
        .map(|p| {
            (
                tokenize(&p.src_text, &p.src_lang),
                tokenize(&p.tgt_text, &p.tgt_lang),
            )
        })
        .collect();
    let mut src: Vec<String> = tokenized.iter().flat_map(|(s, _)| s.clone()).collect();
    let mut tgt: Vec<String> = tokenized.iter().flat_map(|(_, t)| t.clone()).collect();
    if tgt.is_empty() {
        return Err(Error::param("bitext has no target tokens"));
    }
    let mut table = TranslationTable::with_vocab(&mut src, &mut tgt, config.diagonal_lambda);

    let pairs: Vec<IdPair> = tokenized
        .iter()
        .map(|(s, t)| IdPair {
            src: s.iter().map(|w| table.src_index[w]).collect(),
            tgt: t.iter().map(|w| table.tgt_index[w]).collect(),
        })
        .collect();

    // Uniform start; only co-occurring pairs are ever looked up.
    let uniform = 1.0 / table.tgt_vocab.len() as f64;
    for pair in &pairs {
        for &f in &pair.tgt {
            table.rows[0].insert(f, uniform);
            for &e in &pair.src {
                table.rows[e as usize].insert(f, uniform);
            }
        }
    }

    let mut history = Vec::with_capacity(config.iterations + 1);
    for _ in 0..config.iterations {
        let counts = table.e_step_chunked(&pairs);
        history.push(counts.log_likelihood);
        table.m_step(&counts);
    }
    history.push(table.e_step_chunked(&pairs).log_likelihood);
    Ok(TrainedModel1 {
        table,
        log_likelihood: history,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Link {
    pub target: usize,
    /// Source token index, or `None` for NULL.
    pub source: Option<usize>,
    pub posterior: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentResult {
    pub links: Vec<Link>,
}

/// Links each target token to the source position with the highest link
/// posterior. Ties go to the smallest source position; NULL wins only when
/// strictly better than every source word.
pub fn align_viterbi(table: &TranslationTable, pair: &BitextRecord) -> Result<AlignmentResult> {
    let (src, tgt) = table.ids(pair);
    if tgt.is_empty() {
        return Err(Error::input(format!("pair {}: empty target side", pair.id)));
    }
    let prob = |e: Option<u32>, f: Option<u32>| match (e, f) {
        (Some(e), Some(f)) => table.prob_ids(e, f),
        _ => PROB_FLOOR,
    };
    let mut weights = Vec::new();
    let mut links = Vec::with_capacity(tgt.len());
    for (j, &f) in tgt.iter().enumerate() {
        prior_weights(
            src.len(),
            j + 1,
            tgt.len(),
            table.diagonal_lambda,
            &mut weights,
        );
        let null_score = weights[0] * prob(Some(0), f);
        let mut total = null_score;
        let mut best: Option<(usize, f64)> = None;
        for (i, &e) in src.iter().enumerate() {
            let s = weights[i + 1] * prob(e, f);
            total += s;
            if best.is_none_or(|(_, b)| s > b) {
                best = Some((i, s));
            }
        }
        let link = match best {
            Some((i, s)) if s >= null_score => Link {
                target: j,
                source: Some(i),
                posterior: s / total,
            },
            _ => Link {
                target: j,
                source: None,
                posterior: null_score / total,
            },
        };
        links.push(link);
    }
    Ok(AlignmentResult { links })
}

pub const DEFAULT_POSTERIOR_FLOOR: f64 = 0.5;

/// Fraction of target tokens linked to a real source word with posterior at
/// least `posterior_floor`.
pub fn alignment_quality(result: &AlignmentResult, posterior_floor: f64) -> Result<f64> {
    if result.links.is_empty() {
        return Err(Error::input("alignment quality is undefined without links"));
    }
    let aligned = result
        .links
        .iter()
        .filter(|l| l.source.is_some() && l.posterior >= posterior_floor)
        .count();
    Ok(aligned as f64 / result.links.len() as f64)
}

/// Indices (ascending) kept after dropping the `floor(fraction * N)` lowest
/// qualities. Among equal qualities the earlier record is dropped first.
pub fn filter_bottom_fraction(qualities: &[f64], fraction: f64) -> Result<Vec<usize>> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(Error::param(format!(
            "fraction must be in [0, 1), got {fraction}"
        )));
    }
    let remove = (fraction * qualities.len() as f64).floor() as usize;
    let mut order: Vec<usize> = (0..qualities.len()).collect();
    order.sort_by(|&a, &b| qualities[a].total_cmp(&qualities[b]).then(a.cmp(&b)));
    let mut kept: Vec<usize> = order[remove..].to_vec();
    kept.sort_unstable();
    Ok(kept)
}
