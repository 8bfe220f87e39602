//! Browser bindings for the segmenter and the domain scorer.
//!
//! Every export returns JSON text so the page needs no extra glue. The
//! `*_json` functions hold the logic and are plain Rust, which keeps them
//! testable off the browser.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use speechprep::activation::{decode_wav, energy_activation, EnergyVadParams};
use speechprep::lmselect::{moore_lewis_score, tokenize, train_lm, LmConfig, NGramModel};
use speechprep::segmenter::{
    hysteresis_regions, merge_segments, segment_audio, FrameTrace, MergeParams, SegmenterParams,
    TimeSpan,
};
use speechprep::textclean::Lang;

#[derive(Debug, Serialize)]
struct Segmentation {
    duration_s: f64,
    first_pass: Vec<[f64; 2]>,
    segments: Vec<[f64; 2]>,
    merged: Vec<[f64; 2]>,
}

fn pairs(spans: &[TimeSpan]) -> Vec<[f64; 2]> {
    spans.iter().map(|s| [s.start_s, s.end_s]).collect()
}

/// First-pass regions, capped segments and merged segments for a trace.
pub fn segment_json(
    values: &[f64],
    frame_rate_hz: f64,
    params: &SegmenterParams,
    merge: &MergeParams,
) -> Result<String, String> {
    let trace = FrameTrace::new(frame_rate_hz, 0.0, values.to_vec()).map_err(|e| e.to_string())?;
    let first = hysteresis_regions(&trace, params.p_on, params.p_off).map_err(|e| e.to_string())?;
    let segments = segment_audio(&trace, params).map_err(|e| e.to_string())?;
    let merged = merge_segments(&segments, merge).map_err(|e| e.to_string())?;
    let out = Segmentation {
        duration_s: trace.duration_s(),
        first_pass: pairs(&first),
        segments: pairs(&segments),
        merged: pairs(&merged),
    };
    Ok(serde_json::to_string(&out).expect("serializable"))
}

#[allow(clippy::too_many_arguments)]
#[wasm_bindgen]
pub fn segment(
    values: &[f64],
    frame_rate_hz: f64,
    p_on: f64,
    p_off: f64,
    t_dur_s: f64,
    m_dur_s: f64,
    m_int_s: f64,
) -> Result<String, JsError> {
    let params = SegmenterParams {
        p_on,
        p_off,
        t_dur_s,
        ..SegmenterParams::default()
    };
    let merge = MergeParams { m_dur_s, m_int_s };
    segment_json(values, frame_rate_hz, &params, &merge).map_err(|e| JsError::new(&e))
}

/// Energy activation of a PCM16 WAV file, at 50 frames per second.
pub fn wav_activation_values(bytes: &[u8]) -> Result<Vec<f64>, String> {
    let audio = decode_wav(bytes)?;
    let trace =
        energy_activation(&audio, &EnergyVadParams::default()).map_err(|e| e.to_string())?;
    Ok(trace.values().to_vec())
}

#[wasm_bindgen]
pub fn wav_activation(bytes: &[u8]) -> Result<Vec<f64>, JsError> {
    wav_activation_values(bytes).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn wav_frame_rate() -> f64 {
    1000.0 / EnergyVadParams::default().hop_ms
}

/// In-domain and general-domain language models trained from pasted text,
/// one sentence per line.
#[wasm_bindgen]
pub struct DomainScorer {
    in_lm: NGramModel,
    out_lm: NGramModel,
}

#[derive(Debug, Serialize)]
struct Scored<'a> {
    text: &'a str,
    score: f64,
}

fn corpus(text: &str, lang: &Lang) -> Vec<Vec<String>> {
    text.lines()
        .map(|l| tokenize(l, lang))
        .filter(|t| !t.is_empty())
        .collect()
}

impl DomainScorer {
    pub fn train(in_domain: &str, out_domain: &str, order: usize) -> Result<Self, String> {
        let lang = Lang::new("en");
        let config = LmConfig {
            order,
            ..LmConfig::default()
        };
        let in_lm =
            train_lm(corpus(in_domain, &lang), config).map_err(|e| format!("in-domain: {e}"))?;
        let out_lm =
            train_lm(corpus(out_domain, &lang), config).map_err(|e| format!("general: {e}"))?;
        Ok(Self { in_lm, out_lm })
    }

    /// Scores each non-empty line; lowest (most in-domain) first.
    pub fn score_json(&self, pool: &str) -> String {
        let lang = Lang::new("en");
        let mut rows: Vec<Scored> = pool
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| Scored {
                text: l.trim(),
                score: moore_lewis_score(&self.in_lm, &self.out_lm, &tokenize(l, &lang))
                    .expect("models share a config"),
            })
            .collect();
        rows.sort_by(|a, b| a.score.total_cmp(&b.score));
        serde_json::to_string(&rows).expect("serializable")
    }
}

#[wasm_bindgen]
impl DomainScorer {
    #[wasm_bindgen(constructor)]
    pub fn new(in_domain: &str, out_domain: &str, order: usize) -> Result<DomainScorer, JsError> {
        Self::train(in_domain, out_domain, order).map_err(|e| JsError::new(&e))
    }

    pub fn score(&self, pool: &str) -> String {
        self.score_json(pool)
    }
}
