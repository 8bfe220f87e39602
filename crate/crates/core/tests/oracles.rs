//! Property tests against independent brute-force oracles.

mod common;

use std::collections::{BTreeMap, HashMap, HashSet};

use proptest::prelude::*;
use rand::Rng;

use common::*;
use speechprep::align::{
    align_viterbi, filter_bottom_fraction, train_model1, Model1Config, TranslationTable,
};
use speechprep::lmselect::{
    moore_lewis_score, select, train_lm, LmConfig, NGramCounts, NGramModel, SelectPolicy,
};
use speechprep::segmenter::{
    equal_segment, hysteresis_regions, merge_segments, segment_audio, MergeParams, SegmenterParams,
    TimeSpan,
};
use speechprep::textclean::{
    char_ngrams, clean, deduplicate, deduplicate_parallel, language_filter, normalize_whitespace,
    CharNgramClassifier, CleanRules, Lang, LanguageIdentifier, RejectReason, SentenceRecord,
};

// ---------------------------------------------------------------- segmenter

proptest! {
    #[test]
    fn hysteresis_matches_state_machine(
        values in prop::collection::vec(0.0f64..=1.0, 0..400),
        p_on in 0.01f64..=1.0,
        p_off in 0.01f64..=1.0,
        rate in prop::sample::select(vec![10.0, 50.0, 100.0]),
    ) {
        let t = trace(rate, 0.0, values.clone());
        let got = hysteresis_regions(&t, p_on, p_off).unwrap();
        let want: Vec<TimeSpan> = brute_force_hysteresis(&values, p_on, p_off)
            .into_iter()
            .map(|(a, b)| span(t.frame_time(a), t.frame_time(b)))
            .collect();
        prop_assert_eq!(got, want);
    }

    #[test]
    fn equal_segment_tiles_the_span(
        start in 0.0f64..1000.0,
        ratio in 1.0001f64..20.0,
        t_dur in 0.5f64..60.0,
    ) {
        // the operation is only defined for spans longer than the cap
        let len = ratio * t_dur;
        let s = span(start, start + len);
        let parts = equal_segment(s, t_dur).unwrap();
        prop_assert_eq!(parts.len(), (len / t_dur).ceil() as usize);
        prop_assert_eq!(parts[0].start_s, s.start_s);
        prop_assert_eq!(parts.last().unwrap().end_s, s.end_s);
        for w in parts.windows(2) {
            prop_assert_eq!(w[0].end_s, w[1].start_s);
        }
        for p in &parts {
            prop_assert!(p.length() <= t_dur + 1e-9);
            prop_assert!((p.length() - len / parts.len() as f64).abs() < 1e-6);
        }
    }

    #[test]
    fn merge_invariants(seed in any::<u64>(), n in 0usize..60, gap in 0.1f64..4.0,
                        m_dur in 5.0f64..60.0, m_int in 0.0f64..3.0) {
        let mut r = rng(seed);
        let spans = random_spans(&mut r, n, gap);
        let params = MergeParams { m_dur_s: m_dur, m_int_s: m_int };
        let merged = merge_segments(&spans, &params).unwrap();

        for w in merged.windows(2) {
            prop_assert!(w[0].end_s <= w[1].start_s);
        }
        // every input lies in exactly one output, boundaries come from inputs
        let starts: HashSet<u64> = spans.iter().map(|s| s.start_s.to_bits()).collect();
        let ends: HashSet<u64> = spans.iter().map(|s| s.end_s.to_bits()).collect();
        for m in &merged {
            prop_assert!(starts.contains(&m.start_s.to_bits()));
            prop_assert!(ends.contains(&m.end_s.to_bits()));
            let members: Vec<_> = spans.iter().filter(|s| m.contains(s)).collect();
            prop_assert!(!members.is_empty());
            if members.len() > 1 {
                prop_assert!(m.length() <= m_dur + 1e-9);
            }
        }
        for s in &spans {
            prop_assert_eq!(merged.iter().filter(|m| m.contains(s)).count(), 1);
        }
        prop_assert_eq!(merge_segments(&merged, &params).unwrap(), merged);
    }
}

#[test]
fn segment_audio_invariants_on_random_traces() {
    let params = SegmenterParams::default();
    let mut r = rng(7);
    for _ in 0..200 {
        let frames = r.gen_range(1..20_000);
        let values = random_values(&mut r, frames);
        let t = trace(100.0, r.gen_range(0.0..10.0), values);
        let spans = segment_audio(&t, &params).unwrap();
        let first = hysteresis_regions(&t, params.p_on, params.p_off).unwrap();
        for s in &spans {
            assert!(s.length() <= params.t_dur_s + 1e-9, "{s:?}");
            assert!(
                first.iter().any(|f| f.contains(s)),
                "{s:?} outside first pass"
            );
        }
        for w in spans.windows(2) {
            assert!(w[0].end_s <= w[1].start_s);
        }
        assert_eq!(segment_audio(&t, &params).unwrap(), spans);
    }
}

#[test]
fn random_threshold_pairs_match_oracle_on_long_traces() {
    let mut r = rng(11);
    for _ in 0..100 {
        let frames = r.gen_range(1..10_000);
        let values = random_values(&mut r, frames);
        let (p_on, p_off) = (random_threshold(&mut r), random_threshold(&mut r));
        let t = trace(100.0, 0.0, values.clone());
        let got: Vec<(f64, f64)> = hysteresis_regions(&t, p_on, p_off)
            .unwrap()
            .iter()
            .map(|s| (s.start_s, s.end_s))
            .collect();
        let want: Vec<(f64, f64)> = brute_force_hysteresis(&values, p_on, p_off)
            .iter()
            .map(|&(a, b)| (t.frame_time(a), t.frame_time(b)))
            .collect();
        assert_eq!(got, want);
    }
}

// ---------------------------------------------------------------- textclean

fn arb_text() -> impl Strategy<Value = String> {
    prop::collection::vec(
        prop_oneof![
            "[a-zA-Z]{1,8}",
            "[ \t\n]{1,3}",
            Just("http://x.io".to_string()),
            Just("<b>".to_string()),
            Just("\u{200b}".to_string()),
            "[a-z]{45,55}",
            Just("日本語".to_string()),
        ],
        0..8,
    )
    .prop_map(|parts| parts.concat())
}

proptest! {
    #[test]
    fn clean_is_idempotent_and_conserves_counts(
        texts in prop::collection::vec((arb_text(), prop::sample::select(vec!["en", "ja", "de"])), 0..30)
    ) {
        let rules = CleanRules::default();
        let records: Vec<SentenceRecord> = texts
            .iter()
            .enumerate()
            .map(|(i, (t, l))| SentenceRecord::new(i.to_string(), *l, t.clone()))
            .collect();
        let (kept, report) = clean(records.clone(), &rules);
        prop_assert_eq!(report.input, records.len());
        prop_assert_eq!(report.kept + report.rejected_total(), report.input);
        prop_assert_eq!(report.kept, kept.len());
        let (again, report2) = clean(kept.clone(), &rules);
        prop_assert_eq!(report2.rejected_total(), 0);
        prop_assert_eq!(again, kept);
    }

    #[test]
    fn dedup_matches_set_oracle(texts in prop::collection::vec("[ab ]{0,6}", 0..40)) {
        let records: Vec<SentenceRecord> = texts
            .iter()
            .enumerate()
            .map(|(i, t)| SentenceRecord::new(i.to_string(), "en", t.clone()))
            .collect();
        let mut seen = HashSet::new();
        let want: Vec<String> = records
            .iter()
            .filter(|r| seen.insert(r.text.split_whitespace().collect::<Vec<_>>().join(" ")))
            .map(|r| r.id.clone())
            .collect();
        let (kept, report) = deduplicate(records.clone());
        let ids: Vec<String> = kept.iter().map(|r| r.id.clone()).collect();
        prop_assert_eq!(&ids, &want);
        prop_assert_eq!(report.count(RejectReason::Duplicate), records.len() - want.len());
        let (par, _) = deduplicate_parallel(records);
        prop_assert_eq!(par, kept);
    }
}

#[test]
fn dedup_million_records_with_planted_duplicates() {
    let mut r = rng(3);
    let unique = 900_000;
    let mut records: Vec<SentenceRecord> = (0..unique)
        .map(|i| SentenceRecord::new(i.to_string(), "en", format!("sentence number {i}")))
        .collect();
    for k in 0..100_000 {
        let src = r.gen_range(0..unique);
        // vary the whitespace so only the normalized key matches
        let text = format!("  sentence   number\t{src} ");
        records.push(SentenceRecord::new(format!("d{k}"), "en", text));
    }
    let (kept, report) = deduplicate_parallel(records);
    assert_eq!(kept.len(), unique);
    assert_eq!(report.count(RejectReason::Duplicate), 100_000);
    assert!(kept.iter().all(|r| !r.id.starts_with('d')));
}

/// Independent add-one character n-gram naive Bayes.
fn langid_oracle(seeds: &BTreeMap<Lang, Vec<&str>>, text: &str) -> BTreeMap<Lang, f64> {
    let grams = |t: &str, n: usize| -> Vec<String> {
        let norm = t
            .to_lowercase()
            .split_whitespace()
            .collect::<Vec<_>>()
            .join(" ");
        if norm.is_empty() {
            return vec![];
        }
        let c: Vec<char> = format!(" {norm} ").chars().collect();
        c.windows(n).map(|w| w.iter().collect()).collect()
    };
    let mut out = BTreeMap::new();
    for n in 1..=3 {
        let vocab: HashSet<String> = seeds.values().flatten().flat_map(|t| grams(t, n)).collect();
        for (lang, texts) in seeds {
            let all: Vec<String> = texts.iter().flat_map(|t| grams(t, n)).collect();
            let ll: f64 = grams(text, n)
                .iter()
                .map(|g| {
                    let c = all.iter().filter(|x| *x == g).count();
                    ((c + 1) as f64 / (all.len() + vocab.len() + 1) as f64).ln()
                })
                .sum();
            *out.entry(lang.clone()).or_insert(0.0) += ll;
        }
    }
    out
}

fn langid_seeds() -> BTreeMap<Lang, Vec<&'static str>> {
    BTreeMap::from([
        (
            Lang::new("en"),
            vec![
                "the quick brown fox jumps over the lazy dog",
                "this is a sentence in english with the usual words",
                "we are going to the park to play with the children",
            ],
        ),
        (
            Lang::new("de"),
            vec![
                "der schnelle braune fuchs springt über den faulen hund",
                "das ist ein satz auf deutsch mit den üblichen wörtern",
                "wir gehen in den park um mit den kindern zu spielen",
            ],
        ),
    ])
}

#[test]
fn langid_log_likelihoods_match_oracle() {
    let seeds = langid_seeds();
    let clf = CharNgramClassifier::train(&seeds).unwrap();
    for text in ["der hund läuft schnell", "The DOG runs  fast", "x", "über"] {
        let got = clf.log_likelihoods(text);
        let want = langid_oracle(&seeds, text);
        for (lang, w) in &want {
            assert!(
                (got[lang] - w).abs() < 1e-9,
                "{text} {lang}: {} vs {w}",
                got[lang]
            );
        }
    }
    assert_eq!(char_ngrams(" A  b ", 2), [" a", "a ", " b", "b "]);
}

#[test]
fn langid_filter_drops_foreign_sentence() {
    let clf = CharNgramClassifier::train(&langid_seeds()).unwrap();
    let records = vec![
        SentenceRecord::new("1", "en", "the dog runs over the park"),
        SentenceRecord::new("2", "en", "der hund läuft schnell"),
        SentenceRecord::new("3", "en", "   "),
    ];
    let (kept, rejected, report) = language_filter(records, &Lang::new("en"), &clf).unwrap();
    assert_eq!(kept.len(), 1);
    assert_eq!(
        rejected.iter().map(|r| r.id.as_str()).collect::<Vec<_>>(),
        ["2", "3"]
    );
    assert_eq!(report.count(RejectReason::WrongLanguage), 1);
    assert_eq!(report.kept + report.rejected_total(), 3);
    assert_eq!(
        clf.identify("der hund läuft schnell"),
        Some(Lang::new("de"))
    );
}

// ---------------------------------------------------------------- lmselect

fn domain_corpus(seed: u64, n: usize, in_domain: bool) -> Vec<Vec<String>> {
    let mut r = rng(seed);
    (0..n)
        .map(|_| toks(&domain_sentence(&mut r, in_domain)))
        .collect()
}

fn assert_normalized(model: &NGramModel) {
    let mut contexts = model.observed_contexts();
    contexts.push(vec!["never-seen".into(), "context".into()]);
    contexts.push(vec![]);
    for ctx in contexts {
        let m = model.context_mass(&ctx);
        assert!((m - 1.0).abs() < 1e-9, "context {ctx:?} sums to {m}");
    }
}

#[test]
fn lm_contexts_are_normalized() {
    for order in 1..=4 {
        for include_eos in [true, false] {
            let corpus = domain_corpus(order as u64, 200, true);
            let model = train_lm(&corpus, LmConfig { order, include_eos }).unwrap();
            assert_normalized(&model);
        }
    }
}

#[test]
fn higher_orders_fit_training_data_better() {
    let corpus = domain_corpus(5, 1000, true);
    let mut last = f64::INFINITY;
    for order in 1..=3 {
        let model = train_lm(
            &corpus,
            LmConfig {
                order,
                include_eos: true,
            },
        )
        .unwrap();
        let total: f64 = corpus.iter().map(|s| model.cross_entropy(s)).sum();
        let mean = total / corpus.len() as f64;
        assert!(mean <= last + 1e-12, "order {order}: {mean} > {last}");
        last = mean;
    }
}

#[test]
fn shard_counts_merge_to_single_pass() {
    let corpus = domain_corpus(9, 300, false);
    let config = LmConfig::default();
    let mut whole = NGramCounts::new(config).unwrap();
    for s in &corpus {
        whole.add_sentence(s);
    }
    let mut merged = NGramCounts::new(config).unwrap();
    for chunk in corpus.chunks(37) {
        let mut part = NGramCounts::new(config).unwrap();
        for s in chunk {
            part.add_sentence(s);
        }
        merged.merge(part).unwrap();
    }
    assert_eq!(merged.to_text(), whole.to_text());
    let back = NGramCounts::from_text(&whole.to_text()).unwrap();
    assert_eq!(back.to_text(), whole.to_text());
}

#[test]
fn moore_lewis_is_antisymmetric() {
    let config = LmConfig::default();
    let a = train_lm(domain_corpus(1, 100, true), config).unwrap();
    let b = train_lm(domain_corpus(2, 100, false), config).unwrap();
    let mut r = rng(4);
    for _ in 0..50 {
        let in_domain = r.gen_bool(0.5);
        let s = toks(&domain_sentence(&mut r, in_domain));
        let ab = moore_lewis_score(&a, &b, &s).unwrap();
        let ba = moore_lewis_score(&b, &a, &s).unwrap();
        assert_eq!(ab, -ba);
    }
}

proptest! {
    #[test]
    fn top_k_oracle(scores in prop::collection::vec(-5i32..5, 0..30), k in -3i64..35) {
        let scores: Vec<f64> = scores.into_iter().map(f64::from).collect();
        let sel = select(&scores, SelectPolicy::TopK(k));
        let kk = k.clamp(0, scores.len() as i64) as usize;
        prop_assert_eq!(sel.indices.len(), kk);
        prop_assert!(sel.indices.windows(2).all(|w| w[0] < w[1]));
        // no unselected record beats a selected one; ties favour earlier ones
        for &i in &sel.indices {
            for j in 0..scores.len() {
                if !sel.indices.contains(&j) {
                    prop_assert!(scores[i] < scores[j] || (scores[i] == scores[j] && i < j));
                }
            }
        }
    }
}

// ---------------------------------------------------------------- align

/// Plain Model 1 EM with string keys, written independently of the library.
fn model1_oracle(
    pairs: &[(Vec<String>, Vec<String>)],
    iterations: usize,
) -> HashMap<(String, String), f64> {
    let null = "<NULL>".to_string();
    let tgt_vocab: HashSet<&String> = pairs.iter().flat_map(|(_, t)| t).collect();
    let mut t: HashMap<(String, String), f64> = HashMap::new();
    for (src, tgt) in pairs {
        for f in tgt {
            for e in std::iter::once(&null).chain(src) {
                t.insert((e.clone(), f.clone()), 1.0 / tgt_vocab.len() as f64);
            }
        }
    }
    for _ in 0..iterations {
        let mut c: HashMap<(String, String), f64> = HashMap::new();
        let mut tot: HashMap<String, f64> = HashMap::new();
        for (src, tgt) in pairs {
            let srcs: Vec<&String> = std::iter::once(&null).chain(src).collect();
            for f in tgt {
                let z: f64 = srcs.iter().map(|e| t[&((*e).clone(), f.clone())]).sum();
                for e in &srcs {
                    let p = t[&((*e).clone(), f.clone())] / z;
                    *c.entry(((*e).clone(), f.clone())).or_default() += p;
                    *tot.entry((*e).clone()).or_default() += p;
                }
            }
        }
        t = c
            .into_iter()
            .map(|((e, f), v)| {
                let d = tot[&e];
                ((e, f), v / d)
            })
            .collect();
    }
    t
}

#[test]
fn model1_matches_oracle() {
    let mut r = rng(21);
    for _ in 0..10 {
        let bitext = random_bitext(&mut r, 30, 8);
        let pairs: Vec<(Vec<String>, Vec<String>)> = bitext
            .iter()
            .map(|p| (toks(&p.src_text), toks(&p.tgt_text)))
            .collect();
        let cfg = Model1Config {
            iterations: 4,
            diagonal_lambda: None,
        };
        let trained = train_model1(&bitext, &cfg).unwrap();
        let want = model1_oracle(&pairs, 4);
        for ((e, f), p) in &want {
            let got = trained.table.prob(e, f);
            assert!((got - p).abs() < 1e-12, "t({f}|{e}) = {got}, oracle {p}");
        }
    }
}

#[test]
fn zero_lambda_prior_is_plain_model1() {
    let mut r = rng(22);
    let bitext = random_bitext(&mut r, 50, 10);
    let plain = train_model1(
        &bitext,
        &Model1Config {
            iterations: 5,
            diagonal_lambda: None,
        },
    )
    .unwrap();
    let zero = train_model1(
        &bitext,
        &Model1Config {
            iterations: 5,
            diagonal_lambda: Some(0.0),
        },
    )
    .unwrap();
    assert_eq!(plain.log_likelihood, zero.log_likelihood);
    for e in plain.table.source_vocab() {
        for p in &bitext {
            for f in toks(&p.tgt_text) {
                assert_eq!(plain.table.prob(e, &f), zero.table.prob(e, &f));
            }
        }
    }
}

#[test]
fn em_is_monotone_and_rows_normalize() {
    let mut r = rng(23);
    for case in 0..50 {
        let lambda = if case % 2 == 0 {
            None
        } else {
            Some(r.gen_range(0.0..8.0))
        };
        let (pairs, vocab) = (r.gen_range(1..40), r.gen_range(2..12));
        let bitext = random_bitext(&mut r, pairs, vocab);
        let cfg = Model1Config {
            iterations: 8,
            diagonal_lambda: lambda,
        };
        let trained = train_model1(&bitext, &cfg).unwrap();
        assert_eq!(trained.log_likelihood.len(), 9);
        for w in trained.log_likelihood.windows(2) {
            assert!(w[1] >= w[0] - 1e-9, "case {case}: {w:?}");
        }
        for (e, s) in trained.table.row_sums() {
            assert!((s - 1.0).abs() < 1e-9, "row {e} sums to {s}");
        }
    }
}

#[test]
fn shard_expected_counts_match_single_pass() {
    let mut r = rng(24);
    let bitext = random_bitext(&mut r, 120, 10);
    let trained = train_model1(
        &bitext,
        &Model1Config {
            iterations: 2,
            diagonal_lambda: None,
        },
    )
    .unwrap();
    let whole = trained.table.expected_counts(&bitext);
    let (a, b) = bitext.split_at(47);
    let mut merged = trained.table.expected_counts(a);
    merged.merge(trained.table.expected_counts(b));
    assert!((whole.log_likelihood - merged.log_likelihood).abs() < 1e-9);

    let mut t1: TranslationTable = trained.table.clone();
    let mut t2 = trained.table.clone();
    t1.apply_counts(&whole);
    t2.apply_counts(&merged);
    for e in t1.source_vocab() {
        for p in &bitext {
            for f in toks(&p.tgt_text) {
                assert!((t1.prob(e, &f) - t2.prob(e, &f)).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn table_text_roundtrip() {
    let mut r = rng(25);
    let bitext = random_bitext(&mut r, 20, 5);
    let trained = train_model1(
        &bitext,
        &Model1Config {
            iterations: 3,
            diagonal_lambda: Some(2.0),
        },
    )
    .unwrap();
    let back = TranslationTable::from_text(&trained.table.to_text()).unwrap();
    assert_eq!(back.to_text(), trained.table.to_text());
    for p in &bitext {
        assert_eq!(
            align_viterbi(&back, p).unwrap(),
            align_viterbi(&trained.table, p).unwrap()
        );
    }
}

proptest! {
    #[test]
    fn bottom_fraction_removes_lowest(q in prop::collection::vec(0u8..5, 0..60), f in 0.0f64..0.99) {
        let q: Vec<f64> = q.into_iter().map(|x| f64::from(x) / 4.0).collect();
        let kept = filter_bottom_fraction(&q, f).unwrap();
        let removed = (f * q.len() as f64).floor() as usize;
        prop_assert_eq!(kept.len(), q.len() - removed);
        let dropped: Vec<usize> = (0..q.len()).filter(|i| !kept.contains(i)).collect();
        for &d in &dropped {
            for &k in &kept {
                prop_assert!(q[d] < q[k] || (q[d] == q[k] && d < k));
            }
        }
    }
}

#[test]
fn whitespace_normalization_is_idempotent() {
    for s in ["", " a ", "a\t\tb\n", "\u{3000}x\u{3000}y"] {
        let n = normalize_whitespace(s);
        assert_eq!(normalize_whitespace(&n), n);
    }
}
