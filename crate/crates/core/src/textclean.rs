//! Rule-based sentence cleaning, exact deduplication and language filtering.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;

use rayon::prelude::*;
use regex::Regex;
use serde::{Deserialize, Serialize};
use std::sync::OnceLock;
use unicode_general_category::{get_general_category, GeneralCategory};

use crate::error::{Error, Result};

/// Lower-case language tag such as `en`, `de`, `ja` or `zh`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Lang(String);

impl Lang {
    pub fn new(tag: impl AsRef<str>) -> Self {
        Lang(tag.as_ref().trim().to_ascii_lowercase())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// Languages written without spaces between words.
    pub fn is_unsegmented(&self) -> bool {
        matches!(self.0.as_str(), "ja" | "zh")
    }
}

impl fmt::Display for Lang {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for Lang {
    fn from(s: &str) -> Self {
        Lang::new(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentenceRecord {
    pub id: String,
    pub lang: Lang,
    pub text: String,
}

impl SentenceRecord {
    pub fn new(id: impl Into<String>, lang: impl Into<Lang>, text: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            lang: lang.into(),
            text: text.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BitextRecord {
    pub id: String,
    pub src_lang: Lang,
    #[serde(rename = "src")]
    pub src_text: String,
    pub tgt_lang: Lang,
    #[serde(rename = "tgt")]
    pub tgt_text: String,
}

impl BitextRecord {
    pub fn new(
        id: impl Into<String>,
        src_lang: impl Into<Lang>,
        src_text: impl Into<String>,
        tgt_lang: impl Into<Lang>,
        tgt_text: impl Into<String>,
    ) -> Self {
        Self {
            id: id.into(),
            src_lang: src_lang.into(),
            src_text: src_text.into(),
            tgt_lang: tgt_lang.into(),
            tgt_text: tgt_text.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CleanRules {
    /// Longest allowed whitespace-separated token, in Unicode scalar values,
    /// for languages without an entry in `max_token_chars`.
    pub default_max_token_chars: usize,
    pub max_token_chars: BTreeMap<String, usize>,
    pub reject_nonprinting: bool,
    pub reject_urls: bool,
}

impl Default for CleanRules {
    fn default() -> Self {
        Self {
            default_max_token_chars: 50,
            max_token_chars: [("ja".to_string(), 150), ("zh".to_string(), 150)].into(),
            reject_nonprinting: true,
            reject_urls: true,
        }
    }
}

impl CleanRules {
    pub fn validate(&self) -> Result<()> {
        if self.default_max_token_chars == 0 {
            return Err(Error::param("default_max_token_chars must be positive"));
        }
        if let Some((lang, _)) = self.max_token_chars.iter().find(|(_, &v)| v == 0) {
            return Err(Error::param(format!(
                "max_token_chars for {lang} must be positive"
            )));
        }
        Ok(())
    }

    pub fn max_token_chars_for(&self, lang: &Lang) -> usize {
        self.max_token_chars
            .get(lang.as_str())
            .copied()
            .unwrap_or(self.default_max_token_chars)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RejectReason {
    Invalid,
    Empty,
    NonPrinting,
    Url,
    Markup,
    TokenLength,
    WrongLanguage,
    Duplicate,
    LowAlignment,
    OutOfDomain,
}

impl RejectReason {
    pub fn as_str(self) -> &'static str {
        match self {
            RejectReason::Invalid => "invalid",
            RejectReason::Empty => "empty",
            RejectReason::NonPrinting => "non-printing",
            RejectReason::Url => "url",
            RejectReason::Markup => "markup",
            RejectReason::TokenLength => "token-length",
            RejectReason::WrongLanguage => "wrong-language",
            RejectReason::Duplicate => "duplicate",
            RejectReason::LowAlignment => "low-alignment",
            RejectReason::OutOfDomain => "out-of-domain",
        }
    }
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Per-stage accounting: `input == kept + sum(rejected)`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterReport {
    pub input: usize,
    pub kept: usize,
    pub rejected: BTreeMap<RejectReason, usize>,
}

impl FilterReport {
    pub fn keep(&mut self) {
        self.input += 1;
        self.kept += 1;
    }

    pub fn reject(&mut self, reason: RejectReason) {
        self.input += 1;
        *self.rejected.entry(reason).or_default() += 1;
    }

    pub fn rejected_total(&self) -> usize {
        self.rejected.values().sum()
    }

    pub fn count(&self, reason: RejectReason) -> usize {
        self.rejected.get(&reason).copied().unwrap_or(0)
    }
}

/// Collapses whitespace runs to a single space and trims.
pub fn normalize_whitespace(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for token in text.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(token);
    }
    out
}

fn is_nonprinting(c: char) -> bool {
    c != '\t'
        && matches!(
            get_general_category(c),
            GeneralCategory::Control
                | GeneralCategory::Format
                | GeneralCategory::PrivateUse
                | GeneralCategory::Unassigned
        )
}

fn markup_pattern() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"</?[A-Za-z][A-Za-z0-9-]*(?:\s[^<>]*)?/?>").unwrap())
}

fn has_url(text: &str) -> bool {
    let lower = text.to_ascii_lowercase();
    lower.contains("http://") || lower.contains("https://")
}

/// Applies the cleaning rules to one text. Returns the normalized text when
/// it is kept.
pub fn check_text(text: &str, lang: &Lang, rules: &CleanRules) -> Result<String, RejectReason> {
    if rules.reject_nonprinting && text.chars().any(is_nonprinting) {
        return Err(RejectReason::NonPrinting);
    }
    let text = normalize_whitespace(text);
    if text.is_empty() {
        return Err(RejectReason::Empty);
    }
    if rules.reject_urls {
        if has_url(&text) {
            return Err(RejectReason::Url);
        }
        if markup_pattern().is_match(&text) {
            return Err(RejectReason::Markup);
        }
    }
    let limit = rules.max_token_chars_for(lang);
    if text.split(' ').any(|tok| tok.chars().count() > limit) {
        return Err(RejectReason::TokenLength);
    }
    Ok(text)
}

/// Keeps records that pass every rule, with whitespace normalized.
pub fn clean<I>(records: I, rules: &CleanRules) -> (Vec<SentenceRecord>, FilterReport)
where
    I: IntoIterator<Item = SentenceRecord>,
{
    let mut report = FilterReport::default();
    let mut kept = Vec::new();
    for mut rec in records {
        if rec.id.is_empty() {
            report.reject(RejectReason::Invalid);
            continue;
        }
        match check_text(&rec.text, &rec.lang, rules) {
            Ok(text) => {
                rec.text = text;
                report.keep();
                kept.push(rec);
            }
            Err(reason) => report.reject(reason),
        }
    }
    (kept, report)
}

/// Cleans both sides of each pair; a rejection on either side drops the pair
/// (the source side's reason is reported when both fail).
pub fn clean_bitext<I>(records: I, rules: &CleanRules) -> (Vec<BitextRecord>, FilterReport)
where
    I: IntoIterator<Item = BitextRecord>,
{
    let mut report = FilterReport::default();
    let mut kept = Vec::new();
    for mut rec in records {
        if rec.id.is_empty() {
            report.reject(RejectReason::Invalid);
            continue;
        }
        let checked = check_text(&rec.src_text, &rec.src_lang, rules)
            .and_then(|src| check_text(&rec.tgt_text, &rec.tgt_lang, rules).map(|tgt| (src, tgt)));
        match checked {
            Ok((src, tgt)) => {
                rec.src_text = src;
                rec.tgt_text = tgt;
                report.keep();
                kept.push(rec);
            }
            Err(reason) => report.reject(reason),
        }
    }
    (kept, report)
}

/// Streaming exact deduplicator: the first occurrence of each key wins.
#[derive(Debug, Default)]
pub struct Deduplicator {
    seen: HashSet<String>,
}

impl Deduplicator {
    pub fn new() -> Self {
        Self::default()
    }

    /// Returns true the first time `key` is offered.
    pub fn insert(&mut self, key: String) -> bool {
        self.seen.insert(key)
    }

    pub fn len(&self) -> usize {
        self.seen.len()
    }

    pub fn is_empty(&self) -> bool {
        self.seen.is_empty()
    }
}

pub trait DedupKey {
    fn dedup_key(&self) -> String;
}

impl DedupKey for SentenceRecord {
    fn dedup_key(&self) -> String {
        normalize_whitespace(&self.text)
    }
}

impl DedupKey for BitextRecord {
    fn dedup_key(&self) -> String {
        // '\t' never survives whitespace normalization, so it cannot collide.
        format!(
            "{}\t{}",
            normalize_whitespace(&self.src_text),
            normalize_whitespace(&self.tgt_text)
        )
    }
}

/// Drops every record whose whitespace-normalized text was already seen.
/// Case is preserved; order is stable.
pub fn deduplicate<T, I>(records: I) -> (Vec<T>, FilterReport)
where
    T: DedupKey,
    I: IntoIterator<Item = T>,
{
    let mut dedup = Deduplicator::new();
    let mut report = FilterReport::default();
    let mut kept = Vec::new();
    for rec in records {
        if dedup.insert(rec.dedup_key()) {
            report.keep();
            kept.push(rec);
        } else {
            report.reject(RejectReason::Duplicate);
        }
    }
    (kept, report)
}

/// Parallel form of [`deduplicate`]. Each key maps to the lowest input index
/// holding it (merged associatively across shards), so the result is the
/// same as the sequential pass regardless of scheduling.
pub fn deduplicate_parallel<T>(records: Vec<T>) -> (Vec<T>, FilterReport)
where
    T: DedupKey + Send + Sync,
{
    let keys: Vec<String> = records.par_iter().map(DedupKey::dedup_key).collect();
    let first: HashMap<&str, usize> = keys
        .par_iter()
        .enumerate()
        .fold(HashMap::new, |mut map: HashMap<&str, usize>, (i, k)| {
            map.entry(k.as_str())
                .and_modify(|j| *j = (*j).min(i))
                .or_insert(i);
            map
        })
        .reduce(HashMap::new, |mut a, b| {
            for (k, i) in b {
                a.entry(k).and_modify(|j| *j = (*j).min(i)).or_insert(i);
            }
            a
        });

    let mut report = FilterReport::default();
    let mut kept = Vec::new();
    for (i, rec) in records.into_iter().enumerate() {
        if first[keys[i].as_str()] == i {
            report.keep();
            kept.push(rec);
        } else {
            report.reject(RejectReason::Duplicate);
        }
    }
    (kept, report)
}

/// Plug-in point for language identification.
pub trait LanguageIdentifier {
    fn languages(&self) -> Vec<Lang>;

    /// Most likely language of `text`, or `None` for empty text.
    fn identify(&self, text: &str) -> Option<Lang>;
}

pub const LANGID_MAX_ORDER: usize = 3;

/// Character 1..3-gram multinomial naive Bayes with add-one smoothing.
///
/// Text is lower-cased, whitespace-normalized and padded with one space on
/// each side before n-gram extraction. Ties go to the lexicographically
/// smallest language tag.
#[derive(Debug, Clone)]
pub struct CharNgramClassifier {
    models: BTreeMap<Lang, [NgramCounts; LANGID_MAX_ORDER]>,
    /// Distinct n-grams of each order over all languages, plus one for unseen.
    vocab_sizes: [usize; LANGID_MAX_ORDER],
}

#[derive(Debug, Clone, Default)]
struct NgramCounts {
    counts: HashMap<String, u64>,
    total: u64,
}

/// Character n-grams of the padded, normalized text.
pub fn char_ngrams(text: &str, n: usize) -> Vec<String> {
    let norm = normalize_whitespace(&text.to_lowercase());
    if norm.is_empty() {
        return Vec::new();
    }
    let chars: Vec<char> = format!(" {norm} ").chars().collect();
    chars.windows(n).map(|w| w.iter().collect()).collect()
}

impl CharNgramClassifier {
    pub fn train<S: AsRef<str>>(seeds: &BTreeMap<Lang, Vec<S>>) -> Result<Self> {
        if seeds.is_empty() {
            return Err(Error::param(
                "language classifier needs at least one language",
            ));
        }
        let mut models = BTreeMap::new();
        let mut vocab: [HashSet<String>; LANGID_MAX_ORDER] = Default::default();
        for (lang, texts) in seeds {
            let mut per_order: [NgramCounts; LANGID_MAX_ORDER] = Default::default();
            for text in texts {
                for (n, counts) in per_order.iter_mut().enumerate() {
                    for gram in char_ngrams(text.as_ref(), n + 1) {
                        vocab[n].insert(gram.clone());
                        *counts.counts.entry(gram).or_default() += 1;
                        counts.total += 1;
                    }
                }
            }
            if per_order[0].total == 0 {
                return Err(Error::param(format!("seed corpus for {lang} is empty")));
            }
            models.insert(lang.clone(), per_order);
        }
        let vocab_sizes = [vocab[0].len() + 1, vocab[1].len() + 1, vocab[2].len() + 1];
        Ok(Self {
            models,
            vocab_sizes,
        })
    }

    /// Natural-log likelihood of `text` under each language model.
    pub fn log_likelihoods(&self, text: &str) -> BTreeMap<Lang, f64> {
        let grams: Vec<Vec<String>> = (1..=LANGID_MAX_ORDER)
            .map(|n| char_ngrams(text, n))
            .collect();
        self.models
            .iter()
            .map(|(lang, model)| {
                let ll = grams
                    .iter()
                    .enumerate()
                    .map(|(n, grams)| {
                        let counts = &model[n];
                        let denom = (counts.total + self.vocab_sizes[n] as u64) as f64;
                        grams
                            .iter()
                            .map(|g| {
                                let c = counts.counts.get(g).copied().unwrap_or(0);
                                ((c + 1) as f64 / denom).ln()
                            })
                            .sum::<f64>()
                    })
                    .sum();
                (lang.clone(), ll)
            })
            .collect()
    }
}

impl LanguageIdentifier for CharNgramClassifier {
    fn languages(&self) -> Vec<Lang> {
        self.models.keys().cloned().collect()
    }

    fn identify(&self, text: &str) -> Option<Lang> {
        if normalize_whitespace(text).is_empty() {
            return None;
        }
        let mut best: Option<(Lang, f64)> = None;
        for (lang, ll) in self.log_likelihoods(text) {
            match &best {
                Some((_, b)) if ll <= *b => {}
                _ => best = Some((lang, ll)),
            }
        }
        best.map(|(l, _)| l)
    }
}

/// Keeps records identified as `expected`; the rest are returned separately.
pub fn language_filter<I, C>(
    records: I,
    expected: &Lang,
    classifier: &C,
) -> Result<(Vec<SentenceRecord>, Vec<SentenceRecord>, FilterReport)>
where
    I: IntoIterator<Item = SentenceRecord>,
    C: LanguageIdentifier + ?Sized,
{
    if !classifier.languages().contains(expected) {
        return Err(Error::param(format!(
            "classifier does not know language {expected}"
        )));
    }
    let mut report = FilterReport::default();
    let mut kept = Vec::new();
    let mut rejected = Vec::new();
    for rec in records {
        match classifier.identify(&rec.text) {
            None => {
                report.reject(RejectReason::Empty);
                rejected.push(rec);
            }
            Some(lang) if &lang == expected => {
                report.keep();
                kept.push(rec);
            }
            Some(_) => {
                report.reject(RejectReason::WrongLanguage);
                rejected.push(rec);
            }
        }
    }
    Ok((kept, rejected, report))
}
