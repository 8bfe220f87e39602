//! Interpolated Witten–Bell n-gram language models and cross-entropy
//! difference (Moore–Lewis) domain selection.
//!
//! Each sentence is padded with `order - 1` BOS tokens and, when
//! `include_eos` is set, terminated by EOS. Every predicted token contributes
//! one count to each n-gram order ending at it. The order-0 distribution is
//! a point mass on UNK, so at the unigram level
//! `p(w) = (c(w) + T * [w = UNK]) / (N + T)` and all mass reserved for unseen
//! events ends up on UNK.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::textclean::Lang;

pub const BOS: &str = "<s>";
pub const EOS: &str = "</s>";
pub const UNK: &str = "<unk>";

const DUMP_MAGIC: &str = "speechprep-ngram v1";

/// Whitespace tokens, or one token per non-space character for `ja`/`zh`.
pub fn tokenize(text: &str, lang: &Lang) -> Vec<String> {
    if lang.is_unsegmented() {
        text.chars()
            .filter(|c| !c.is_whitespace())
            .map(String::from)
            .collect()
    } else {
        text.split_whitespace().map(String::from).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LmConfig {
    pub order: usize,
    /// Count EOS as a predicted token in training and in the per-token average.
    pub include_eos: bool,
}

impl Default for LmConfig {
    fn default() -> Self {
        Self {
            order: 3,
            include_eos: true,
        }
    }
}

impl LmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.order == 0 {
            return Err(Error::param("n-gram order must be >= 1"));
        }
        Ok(())
    }
}

/// Raw n-gram counts. Counting is additive, so shards can be counted
/// independently and merged in any order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NGramCounts {
    config: LmConfig,
    /// `grams[k - 1]` holds k-gram counts (context tokens followed by the predicted token).
    grams: Vec<HashMap<Vec<String>, u64>>,
    sentences: u64,
}

impl NGramCounts {
    pub fn new(config: LmConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            grams: vec![HashMap::new(); config.order],
            sentences: 0,
        })
    }

    pub fn config(&self) -> LmConfig {
        self.config
    }

    pub fn sentences(&self) -> u64 {
        self.sentences
    }

    pub fn add_sentence<S: AsRef<str>>(&mut self, tokens: &[S]) {
        let order = self.config.order;
        let mut seq: Vec<String> = vec![BOS.to_string(); order - 1];
        seq.extend(tokens.iter().map(|t| t.as_ref().to_string()));
        if self.config.include_eos {
            seq.push(EOS.to_string());
        }
        for i in order - 1..seq.len() {
            for k in 1..=order {
                let gram = seq[i + 1 - k..=i].to_vec();
                *self.grams[k - 1].entry(gram).or_default() += 1;
            }
        }
        self.sentences += 1;
    }

    pub fn merge(&mut self, other: NGramCounts) -> Result<()> {
        if self.config != other.config {
            return Err(Error::param(
                "cannot merge counts with different LM configs",
            ));
        }
        for (mine, theirs) in self.grams.iter_mut().zip(other.grams) {
            for (gram, c) in theirs {
                *mine.entry(gram).or_default() += c;
            }
        }
        self.sentences += other.sentences;
        Ok(())
    }

    /// Versioned text dump; lines are sorted, so equal counts give equal bytes.
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "{DUMP_MAGIC}\norder {}\ninclude_eos {}\nsentences {}\n",
            self.config.order, self.config.include_eos, self.sentences
        );
        for grams in &self.grams {
            let sorted: BTreeMap<&Vec<String>, &u64> = grams.iter().collect();
            for (gram, c) in sorted {
                let _ = writeln!(out, "{c}\t{}", gram.join(" "));
            }
        }
        out
    }

    pub fn from_text(text: &str) -> std::result::Result<Self, String> {
        let mut lines = text.lines().enumerate();
        let mut header = |key: &str| -> std::result::Result<String, String> {
            let (i, line) = lines.next().ok_or(format!("missing {key} line"))?;
            if key.is_empty() {
                return Ok(line.to_string());
            }
            line.strip_prefix(key)
                .and_then(|v| v.strip_prefix(' '))
                .map(str::to_string)
                .ok_or(format!("line {}: expected {key}", i + 1))
        };
        if header("")? != DUMP_MAGIC {
            return Err(format!("line 1: expected header {DUMP_MAGIC:?}"));
        }
        let order: usize = header("order")?.parse().map_err(|_| "line 2: bad order")?;
        let include_eos: bool = header("include_eos")?
            .parse()
            .map_err(|_| "line 3: bad include_eos")?;
        let sentences: u64 = header("sentences")?
            .parse()
            .map_err(|_| "line 4: bad sentence count")?;
        let mut counts =
            NGramCounts::new(LmConfig { order, include_eos }).map_err(|e| e.to_string())?;
        counts.sentences = sentences;
        for (i, line) in lines {
            let (c, gram) = line
                .split_once('\t')
                .ok_or(format!("line {}: expected count<TAB>ngram", i + 1))?;
            let c: u64 = c
                .parse()
                .map_err(|_| format!("line {}: bad count", i + 1))?;
            let gram: Vec<String> = gram.split(' ').map(String::from).collect();
            if gram.is_empty() || gram.len() > order {
                return Err(format!(
                    "line {}: n-gram length {} out of range",
                    i + 1,
                    gram.len()
                ));
            }
            counts.grams[gram.len() - 1].insert(gram, c);
        }
        Ok(counts)
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct ContextStats {
    total: u64,
    types: u64,
}

type TokenId = u32;

/// Interpolated Witten–Bell n-gram model.
#[derive(Debug, Clone)]
pub struct NGramModel {
    counts: NGramCounts,
    vocab: HashMap<String, TokenId>,
    /// Predicted tokens (including EOS when enabled) plus UNK, sorted.
    predictable: Vec<TokenId>,
    unk: TokenId,
    bos: TokenId,
    eos: TokenId,
    grams: Vec<HashMap<Vec<TokenId>, u64>>,
    contexts: Vec<HashMap<Vec<TokenId>, ContextStats>>,
}

impl NGramModel {
    pub fn from_counts(counts: NGramCounts) -> Result<Self> {
        if counts.grams[0].is_empty() {
            return Err(Error::param(
                "cannot build a language model from an empty corpus",
            ));
        }
        let mut names: Vec<&str> = counts.grams[0]
            .keys()
            .map(|g| g[0].as_str())
            .chain([UNK, BOS, EOS])
            .collect();
        names.sort_unstable();
        names.dedup();
        let vocab: HashMap<String, TokenId> = names
            .iter()
            .enumerate()
            .map(|(i, n)| (n.to_string(), i as TokenId))
            .collect();
        let unk = vocab[UNK];
        let bos = vocab[BOS];
        let eos = vocab[EOS];

        let mut predictable: Vec<TokenId> = counts.grams[0].keys().map(|g| vocab[&g[0]]).collect();
        predictable.push(unk);
        predictable.sort_unstable();
        predictable.dedup();

        let mut grams = Vec::with_capacity(counts.config.order);
        let mut contexts = Vec::with_capacity(counts.config.order);
        for table in &counts.grams {
            let mut ids: HashMap<Vec<TokenId>, u64> = HashMap::with_capacity(table.len());
            let mut ctx: HashMap<Vec<TokenId>, ContextStats> = HashMap::new();
            for (gram, &c) in table {
                let key: Vec<TokenId> = gram
                    .iter()
                    .map(|t| vocab.get(t).copied().unwrap_or(unk))
                    .collect();
                let stats = ctx.entry(key[..key.len() - 1].to_vec()).or_default();
                stats.total += c;
                stats.types += 1;
                ids.insert(key, c);
            }
            grams.push(ids);
            contexts.push(ctx);
        }
        Ok(Self {
            counts,
            vocab,
            predictable,
            unk,
            bos,
            eos,
            grams,
            contexts,
        })
    }

    pub fn config(&self) -> LmConfig {
        self.counts.config
    }

    pub fn order(&self) -> usize {
        self.counts.config.order
    }

    pub fn counts(&self) -> &NGramCounts {
        &self.counts
    }

    pub fn vocab_size(&self) -> usize {
        self.predictable.len()
    }

    fn id(&self, token: &str) -> TokenId {
        match self.vocab.get(token) {
            Some(&id) if id != self.bos && (id != self.eos || self.counts.config.include_eos) => id,
            _ => self.unk,
        }
    }

    /// `history` holds the most recent tokens, oldest first; only the last
    /// `order - 1` are used.
    fn prob_ids(&self, history: &[TokenId], word: TokenId) -> f64 {
        let mut p = if word == self.unk { 1.0 } else { 0.0 };
        let order = self.order();
        for k in 1..=order {
            let needed = k - 1;
            if history.len() < needed {
                break;
            }
            let ctx = &history[history.len() - needed..];
            let Some(stats) = self.contexts[k - 1].get(ctx) else {
                continue;
            };
            let mut key = ctx.to_vec();
            key.push(word);
            let c = self.grams[k - 1].get(&key).copied().unwrap_or(0) as f64;
            let (n, t) = (stats.total as f64, stats.types as f64);
            p = (c + t * p) / (n + t);
        }
        p
    }

    /// `p(word | context)`; unknown tokens are scored as UNK and the
    /// context is BOS-padded on the left.
    pub fn prob<S: AsRef<str>>(&self, context: &[S], word: &str) -> f64 {
        let history = self.history(context);
        self.prob_ids(&history, self.id(word))
    }

    fn history<S: AsRef<str>>(&self, context: &[S]) -> Vec<TokenId> {
        let mut h = vec![self.bos; self.order() - 1];
        h.extend(context.iter().map(|t| self.id(t.as_ref())));
        h
    }

    /// Every token that can be predicted, including UNK (and EOS if enabled).
    pub fn predictable_tokens(&self) -> Vec<String> {
        let mut by_id: Vec<(&TokenId, &String)> = self
            .vocab
            .iter()
            .filter(|(_, id)| self.predictable.binary_search(id).is_ok())
            .map(|(n, id)| (id, n))
            .collect();
        by_id.sort();
        by_id.into_iter().map(|(_, n)| n.clone()).collect()
    }

    /// Every context of length `order - 1` seen in training, as tokens.
    pub fn observed_contexts(&self) -> Vec<Vec<String>> {
        let names: HashMap<TokenId, &String> = self.vocab.iter().map(|(n, &i)| (i, n)).collect();
        let mut out: Vec<Vec<String>> = self.contexts[self.order() - 1]
            .keys()
            .map(|ctx| ctx.iter().map(|i| names[i].clone()).collect())
            .collect();
        out.sort();
        out
    }

    /// Sum of `p(w | context)` over all predictable tokens.
    pub fn context_mass<S: AsRef<str>>(&self, context: &[S]) -> f64 {
        let history = self.history(context);
        self.predictable
            .iter()
            .map(|&w| self.prob_ids(&history, w))
            .sum()
    }

    /// Mean `-log2 p` per token, including EOS when the model counts it.
    /// An empty sentence is scored on EOS alone.
    pub fn cross_entropy<S: AsRef<str>>(&self, sentence: &[S]) -> f64 {
        let mut history = vec![self.bos; self.order() - 1];
        let mut bits = 0.0;
        let mut n = 0usize;
        for tok in sentence {
            let id = self.id(tok.as_ref());
            bits -= self.prob_ids(&history, id).log2();
            history.push(id);
            n += 1;
        }
        if self.counts.config.include_eos || n == 0 {
            bits -= self.prob_ids(&history, self.id(EOS)).log2();
            n += 1;
        }
        bits / n as f64
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.counts.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let counts = NGramCounts::from_text(&text).map_err(|m| Error::format(path, m))?;
        Self::from_counts(counts)
    }
}

/// Trains a model on pre-tokenized sentences.
pub fn train_lm<I, S>(corpus: I, config: LmConfig) -> Result<NGramModel>
where
    I: IntoIterator,
    I::Item: AsRef<[S]>,
    S: AsRef<str>,
{
    let mut counts = NGramCounts::new(config)?;
    for sentence in corpus {
        counts.add_sentence(sentence.as_ref());
    }
    if counts.sentences == 0 {
        return Err(Error::param(
            "cannot train a language model on an empty corpus",
        ));
    }
    NGramModel::from_counts(counts)
}

/// In-domain minus out-of-domain cross-entropy, in bits per token. Lower
/// means more in-domain.
pub fn moore_lewis_score<S: AsRef<str>>(
    in_lm: &NGramModel,
    out_lm: &NGramModel,
    sentence: &[S],
) -> Result<f64> {
    if in_lm.config() != out_lm.config() {
        return Err(Error::param(format!(
            "in-domain and out-of-domain models differ: {:?} vs {:?}",
            in_lm.config(),
            out_lm.config()
        )));
    }
    Ok(in_lm.cross_entropy(sentence) - out_lm.cross_entropy(sentence))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectPolicy {
    /// The `k` lowest-scoring records.
    TopK(i64),
    /// Every record scoring strictly below the threshold.
    Threshold(f64),
}

impl Default for SelectPolicy {
    fn default() -> Self {
        SelectPolicy::Threshold(0.0)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    /// Selected input indices, ascending.
    pub indices: Vec<usize>,
    pub warnings: Vec<String>,
}

/// Applies a selection policy to per-record scores. Ties in the top-k
/// policy go to the earlier record.
pub fn select(scores: &[f64], policy: SelectPolicy) -> Selection {
    let n = scores.len();
    let mut warnings = Vec::new();
    let indices = match policy {
        SelectPolicy::TopK(k) => {
            let k = if k <= 0 {
                warnings.push(format!("top-k budget {k} clamped to 0"));
                0
            } else if k as u64 > n as u64 {
                warnings.push(format!("top-k budget {k} clamped to {n}"));
                n
            } else {
                k as usize
            };
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));
            order.truncate(k);
            order.sort_unstable();
            order
        }
        SelectPolicy::Threshold(tau) => (0..n).filter(|&i| scores[i] < tau).collect(),
    };
    Selection { indices, warnings }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    fn no_eos(order: usize) -> LmConfig {
        LmConfig {
            order,
            include_eos: false,
        }
    }

    #[test]
    fn witten_bell_unigram_closed_form() {
        let m = train_lm([toks("a a b")], no_eos(1)).unwrap();
        let empty: [&str; 0] = [];
        assert!((m.prob(&empty, "a") - 0.4).abs() < 1e-15);
        assert!((m.prob(&empty, "b") - 0.2).abs() < 1e-15);
        assert!((m.prob(&empty, "zzz") - 0.4).abs() < 1e-15);
        assert!((m.prob(&empty, UNK) - 0.4).abs() < 1e-15);
        let h = m.cross_entropy(&toks("a a"));
        assert!((h - (-(0.4f64).log2())).abs() < 1e-12);
        assert!((h - 1.3219).abs() < 1e-3);
    }

    #[test]
    fn all_oov_sentence_is_constant() {
        let m = train_lm([toks("a a b")], no_eos(1)).unwrap();
        let h = m.cross_entropy(&toks("x y z w"));
        assert!((h + m.prob(&[] as &[&str], UNK).log2()).abs() < 1e-12);
    }

    #[test]
    fn unigram_is_permutation_invariant() {
        let m = train_lm(
            [toks("a b c a"), toks("c d")],
            LmConfig {
                order: 1,
                include_eos: true,
            },
        )
        .unwrap();
        let a = m.cross_entropy(&toks("a b d q"));
        let b = m.cross_entropy(&toks("q d a b"));
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn single_token_corpus_prefers_that_token() {
        let m = train_lm([toks("z z z z")], no_eos(1)).unwrap();
        let empty: [&str; 0] = [];
        assert!(m.prob(&empty, "z") > m.prob(&empty, UNK));
    }

    #[test]
    fn eos_counts_when_enabled() {
        let m = train_lm(
            [toks("a a b")],
            LmConfig {
                order: 1,
                include_eos: true,
            },
        )
        .unwrap();
        let empty: [&str; 0] = [];
        // N = 4 (a, a, b, EOS), T = 3
        assert!((m.prob(&empty, "a") - 2.0 / 7.0).abs() < 1e-15);
        assert!((m.prob(&empty, EOS) - 1.0 / 7.0).abs() < 1e-15);
        let h = m.cross_entropy::<&str>(&[]);
        assert!((h + (1.0f64 / 7.0).log2()).abs() < 1e-12);
    }

    #[test]
    fn bigram_interpolation_by_hand() {
        // "a b" with EOS: bigrams <s>a, ab, b</s>; unigrams a, b, </s> (N=3, T=3)
        let m = train_lm(
            [toks("a b")],
            LmConfig {
                order: 2,
                include_eos: true,
            },
        )
        .unwrap();
        let p1_b = 1.0 / 6.0;
        // context "a": c=1, T=1 -> (1 + 1 * p1(b)) / 2
        assert!((m.prob(&["a"], "b") - (1.0 + p1_b) / 2.0).abs() < 1e-15);
        // unseen context falls back to the unigram
        assert!((m.prob(&["q"], "b") - p1_b).abs() < 1e-15);
    }

    #[test]
    fn contexts_are_normalized() {
        let corpus = [
            toks("the cat sat"),
            toks("the dog sat down"),
            toks("a cat ran"),
        ];
        let m = train_lm(corpus, LmConfig::default()).unwrap();
        for ctx in m.observed_contexts() {
            assert!((m.context_mass(&ctx) - 1.0).abs() < 1e-9, "{ctx:?}");
        }
    }

    #[test]
    fn empty_corpus_and_bad_order() {
        let empty: Vec<Vec<String>> = vec![];
        assert!(train_lm(empty, LmConfig::default()).is_err());
        assert!(train_lm(
            [toks("a")],
            LmConfig {
                order: 0,
                include_eos: true
            }
        )
        .is_err());
        // sentences without tokens and without EOS leave nothing to count
        assert!(train_lm([toks("")], no_eos(2)).is_err());
    }

    #[test]
    fn moore_lewis_identical_and_mismatch() {
        let corpus = [toks("x y z"), toks("y z")];
        let a = train_lm(corpus.clone(), LmConfig::default()).unwrap();
        let b = train_lm(corpus, LmConfig::default()).unwrap();
        assert_eq!(moore_lewis_score(&a, &b, &toks("x q z")).unwrap(), 0.0);
        let c = train_lm(
            [toks("x")],
            LmConfig {
                order: 2,
                include_eos: true,
            },
        )
        .unwrap();
        assert!(moore_lewis_score(&a, &c, &toks("x")).is_err());
    }

    #[test]
    fn shard_merge_matches_one_shot() {
        let corpus: Vec<Vec<String>> = (0..50)
            .map(|i| toks(&format!("w{} w{} w{}", i % 7, i % 3, i % 5)))
            .collect();
        let cfg = LmConfig::default();
        let mut one = NGramCounts::new(cfg).unwrap();
        corpus.iter().for_each(|s| one.add_sentence(s));
        let mut a = NGramCounts::new(cfg).unwrap();
        let mut b = NGramCounts::new(cfg).unwrap();
        corpus[..20].iter().for_each(|s| a.add_sentence(s));
        corpus[20..].iter().for_each(|s| b.add_sentence(s));
        b.merge(a).unwrap();
        assert_eq!(one, b);
        assert_eq!(one.to_text(), b.to_text());
    }

    #[test]
    fn dump_round_trip() {
        let corpus = [toks("the cat sat"), toks("the dog")];
        let m = train_lm(corpus, LmConfig::default()).unwrap();
        let back = NGramModel::from_counts(NGramCounts::from_text(&m.counts().to_text()).unwrap())
            .unwrap();
        for s in ["the cat", "dog sat the", "", "unknown words here"] {
            assert_eq!(m.cross_entropy(&toks(s)), back.cross_entropy(&toks(s)));
        }
        assert!(NGramCounts::from_text("nope\n").is_err());
    }

    #[test]
    fn select_policies() {
        let scores = [0.5, -1.0, 0.0, -1.0, 2.0];
        assert_eq!(select(&scores, SelectPolicy::TopK(2)).indices, vec![1, 3]);
        assert_eq!(
            select(&scores, SelectPolicy::TopK(3)).indices,
            vec![1, 2, 3]
        );
        let all = select(&scores, SelectPolicy::TopK(10));
        assert_eq!(all.indices, vec![0, 1, 2, 3, 4]);
        assert_eq!(all.warnings.len(), 1);
        let none = select(&scores, SelectPolicy::TopK(0));
        assert!(none.indices.is_empty());
        assert_eq!(none.warnings.len(), 1);
        assert_eq!(
            select(&scores, SelectPolicy::Threshold(0.0)).indices,
            vec![1, 3]
        );
        assert!(select(&[0.0; 4], SelectPolicy::Threshold(0.0))
            .indices
            .is_empty());
        // tie at the cut goes to the earlier record
        assert_eq!(
            select(&[1.0, 1.0, 1.0], SelectPolicy::TopK(1)).indices,
            vec![0]
        );
    }

    #[test]
    fn cjk_is_split_per_character() {
        assert_eq!(tokenize("今日 は", &Lang::new("ja")), ["今", "日", "は"]);
        assert_eq!(tokenize(" a  bc ", &Lang::new("en")), ["a", "bc"]);
    }
}
