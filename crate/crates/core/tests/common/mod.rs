//! Shared generators and brute-force oracles for the integration suites.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use speechprep::segmenter::{FrameTrace, TimeSpan};
use speechprep::textclean::BitextRecord;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Per-frame activity mask, then maximal runs of active frames.
/// A frame is active if it continues a region (value >= p_off) or starts one
/// (value >= p_on and >= p_off).
pub fn brute_force_hysteresis(values: &[f64], p_on: f64, p_off: f64) -> Vec<(usize, usize)> {
    let mut active = vec![false; values.len()];
    for i in 0..values.len() {
        let prev = i > 0 && active[i - 1];
        active[i] = if prev {
            values[i] >= p_off
        } else {
            values[i] >= p_on && values[i] >= p_off
        };
    }
    let mut runs = Vec::new();
    let mut i = 0;
    while i < active.len() {
        if active[i] {
            let start = i;
            while i < active.len() && active[i] {
                i += 1;
            }
            runs.push((start, i));
        } else {
            i += 1;
        }
    }
    runs
}

/// Speech-like activation: alternating speech and pause stretches with
/// noisy levels and occasional dips.
pub fn speechlike_values(rng: &mut impl Rng, frames: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(frames);
    while out.len() < frames {
        let speech = rng.gen_bool(0.6);
        let len = if speech {
            rng.gen_range(5..10_000)
        } else {
            rng.gen_range(1..300)
        };
        let base: f64 = if speech {
            rng.gen_range(0.75..1.0)
        } else {
            rng.gen_range(0.0..0.5)
        };
        let noise: f64 = rng.gen_range(0.0..0.15);
        for _ in 0..len.min(frames - out.len()) {
            let mut v = base + rng.gen_range(-noise..=noise);
            if speech && rng.gen_bool(0.002) {
                v -= rng.gen_range(0.0..0.3);
            }
            out.push(v.clamp(0.0, 1.0));
        }
    }
    out
}

/// Long stretches of steady speech with brief shallow dips and rare pauses,
/// so first-pass regions routinely exceed the duration cap.
pub fn sustained_values(rng: &mut impl Rng, frames: usize) -> Vec<f64> {
    let base: f64 = rng.gen_range(0.85..1.0);
    let mut out = Vec::with_capacity(frames);
    while out.len() < frames {
        let v = match rng.gen_range(0..1000) {
            0..=2 => rng.gen_range(0.0..0.4),
            3..=20 => rng.gen_range(0.81..0.9),
            _ => (base + rng.gen_range(-0.03..0.03)).clamp(0.0, 1.0),
        };
        let run = rng.gen_range(1..30).min(frames - out.len());
        out.extend(std::iter::repeat_n(v, run));
    }
    out
}

/// Independent values, random walk, speech-like or sustained, chosen at random.
pub fn random_values(rng: &mut impl Rng, frames: usize) -> Vec<f64> {
    match rng.gen_range(0..4) {
        0 => (0..frames).map(|_| rng.gen::<f64>()).collect(),
        1 => {
            let mut v: f64 = rng.gen();
            (0..frames)
                .map(|_| {
                    v = (v + rng.gen_range(-0.1..0.1)).clamp(0.0, 1.0);
                    v
                })
                .collect()
        }
        2 => speechlike_values(rng, frames),
        _ => sustained_values(rng, frames),
    }
}

pub fn random_threshold(rng: &mut impl Rng) -> f64 {
    // (0, 1]
    1.0 - rng.gen::<f64>()
}

pub fn trace(rate: f64, start: f64, values: Vec<f64>) -> FrameTrace {
    FrameTrace::new(rate, start, values).unwrap()
}

pub fn span(a: f64, b: f64) -> TimeSpan {
    TimeSpan::new(a, b).unwrap()
}

/// Sorted, disjoint spans with gaps drawn around `gap_scale`.
pub fn random_spans(rng: &mut impl Rng, n: usize, gap_scale: f64) -> Vec<TimeSpan> {
    let mut t = rng.gen_range(0.0..5.0);
    (0..n)
        .map(|_| {
            let len = rng.gen_range(0.05..20.0);
            let s = span(t, t + len);
            t += len + rng.gen_range(0.0..gap_scale);
            s
        })
        .collect()
}

pub fn random_bitext(rng: &mut impl Rng, pairs: usize, vocab: usize) -> Vec<BitextRecord> {
    (0..pairs)
        .map(|i| {
            let sl = rng.gen_range(1..6);
            let tl = rng.gen_range(1..6);
            let src: Vec<String> = (0..sl)
                .map(|_| format!("s{}", rng.gen_range(0..vocab)))
                .collect();
            let tgt: Vec<String> = (0..tl)
                .map(|_| format!("t{}", rng.gen_range(0..vocab)))
                .collect();
            BitextRecord::new(i.to_string(), "en", src.join(" "), "de", tgt.join(" "))
        })
        .collect()
}

const SHARED: &[&str] = &[
    "the", "a", "and", "of", "to", "is", "that", "in", "we", "it",
];
const TALK: &[&str] = &[
    "today", "want", "talk", "about", "ideas", "story", "people", "world", "imagine", "design",
    "brain", "future", "laugh", "audience", "change", "children", "dream", "music", "feel", "life",
    "share", "thank", "amazing", "planet", "curious", "learn",
];
const LEGAL: &[&str] = &[
    "court",
    "regulation",
    "shall",
    "member",
    "states",
    "pursuant",
    "article",
    "council",
    "directive",
    "commission",
    "party",
    "agreement",
    "provisions",
    "annex",
    "paragraph",
    "tariff",
    "customs",
    "procedure",
    "contract",
    "liability",
    "decision",
    "authority",
    "compliance",
    "committee",
    "amended",
    "implementing",
];

/// Sentence from one of two synthetic domains sharing a set of function words.
pub fn domain_sentence(rng: &mut impl Rng, in_domain: bool) -> String {
    let content = if in_domain { TALK } else { LEGAL };
    let len = rng.gen_range(5..14);
    (0..len)
        .map(|_| {
            if rng.gen_bool(0.4) {
                SHARED[rng.gen_range(0..SHARED.len())]
            } else if rng.gen_bool(0.1) {
                // a little cross-domain leakage
                let other = if in_domain { LEGAL } else { TALK };
                other[rng.gen_range(0..other.len())]
            } else {
                content[rng.gen_range(0..content.len())]
            }
        })
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn toks(s: &str) -> Vec<String> {
    s.split_whitespace().map(String::from).collect()
}

// ---------------------------------------------------------------- CLI helpers

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_speechprep"))
}

/// Runs the binary in `dir` and returns its output.
pub fn run_in(dir: &Path, args: &[&str]) -> Output {
    bin()
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

pub fn golden_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/golden")
}

/// Every regular file under `root`, keyed by its path relative to `root`.
pub fn read_tree(root: &Path) -> BTreeMap<String, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<String, Vec<u8>>) {
        let mut entries: Vec<_> = std::fs::read_dir(dir)
            .unwrap()
            .map(|e| e.unwrap().path())
            .collect();
        entries.sort();
        for p in entries {
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                let rel = p
                    .strip_prefix(root)
                    .unwrap()
                    .to_string_lossy()
                    .replace('\\', "/");
                out.insert(rel, std::fs::read(&p).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    if root.exists() {
        walk(root, root, &mut out);
    }
    out
}

fn copy_tree(from: &Path, to: &Path) {
    for (rel, bytes) in read_tree(from) {
        let dest = to.join(rel);
        std::fs::create_dir_all(dest.parent().unwrap()).unwrap();
        std::fs::write(dest, bytes).unwrap();
    }
}

/// Runs the golden pipeline on a fresh copy of the fixture inputs with the
/// given thread count; returns the exit status and every produced file.
pub fn run_golden(threads: usize) -> (i32, BTreeMap<String, Vec<u8>>) {
    let work = tempfile::tempdir().unwrap();
    copy_tree(&golden_dir().join("inputs"), work.path());
    let threads = format!("threads={threads}");
    let out = run_in(
        work.path(),
        &[
            "run",
            "--config",
            "config.json",
            "--set",
            &threads,
            "--report",
            "out/report.json",
        ],
    );
    assert!(
        out.status.code().is_some(),
        "terminated by signal: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    (
        out.status.code().unwrap(),
        read_tree(&work.path().join("out")),
    )
}
