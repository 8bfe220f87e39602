//! Sources of [`FrameTrace`]s: PCM16 WAV decoding, a simple energy-based
//! activation, and a plain-text trace format for activations computed
//! elsewhere (e.g. by a neural VAD).
//!
//! Trace file layout (UTF-8, LF):
//!
//! ```text
//! frame_rate_hz=100 start_s=0
//! 0.000000
//! 0.731250
//! ...
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::segmenter::FrameTrace;

/// Mono audio with samples in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioBuffer {
    pub sample_rate_hz: u32,
    pub samples: Vec<f64>,
}

impl AudioBuffer {
    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnergyVadParams {
    pub frame_ms: f64,
    pub hop_ms: f64,
    /// Level mapped to activation 0.
    pub floor_db: f64,
    /// Level mapped to activation 1.
    pub ceil_db: f64,
}

impl Default for EnergyVadParams {
    fn default() -> Self {
        Self {
            frame_ms: 25.0,
            hop_ms: 20.0,
            floor_db: -60.0,
            ceil_db: -20.0,
        }
    }
}

impl EnergyVadParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.frame_ms > 0.0 && self.hop_ms > 0.0) {
            return Err(Error::param("frame_ms and hop_ms must be positive"));
        }
        if self.hop_ms > self.frame_ms {
            return Err(Error::param(format!(
                "hop_ms ({}) must not exceed frame_ms ({})",
                self.hop_ms, self.frame_ms
            )));
        }
        if self.floor_db.partial_cmp(&self.ceil_db) != Some(std::cmp::Ordering::Less) {
            return Err(Error::param(format!(
                "floor_db ({}) must be below ceil_db ({})",
                self.floor_db, self.ceil_db
            )));
        }
        Ok(())
    }
}

pub fn read_wav(path: impl AsRef<Path>) -> Result<AudioBuffer> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_wav(&bytes).map_err(|msg| Error::format(path, msg))
}

struct Fmt {
    channels: u16,
    sample_rate: u32,
}

fn le_u16(b: &[u8]) -> u16 {
    u16::from_le_bytes([b[0], b[1]])
}

fn le_u32(b: &[u8]) -> u32 {
    u32::from_le_bytes([b[0], b[1], b[2], b[3]])
}

/// Decodes an in-memory RIFF/WAVE PCM16 file. Errors name the offending chunk.
pub fn decode_wav(bytes: &[u8]) -> std::result::Result<AudioBuffer, String> {
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err("RIFF: not a RIFF/WAVE file".into());
    }
    let mut pos = 12;
    let mut fmt: Option<Fmt> = None;
    let mut data: Option<&[u8]> = None;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = le_u32(&bytes[pos + 4..pos + 8]) as usize;
        let body_start = pos + 8;
        let name = String::from_utf8_lossy(id).into_owned();
        let body_end = body_start
            .checked_add(size)
            .filter(|&end| end <= bytes.len())
            .ok_or_else(|| format!("{name}: chunk size {size} runs past end of file"))?;
        let body = &bytes[body_start..body_end];
        match id {
            b"fmt " => {
                if body.len() < 16 {
                    return Err(format!("fmt : chunk too short ({} bytes)", body.len()));
                }
                let format_tag = le_u16(&body[0..2]);
                let channels = le_u16(&body[2..4]);
                let sample_rate = le_u32(&body[4..8]);
                let bits = le_u16(&body[14..16]);
                // WAVE_FORMAT_EXTENSIBLE carries the real tag in its sub-format GUID.
                let effective_tag = if format_tag == 0xFFFE && body.len() >= 26 {
                    le_u16(&body[24..26])
                } else {
                    format_tag
                };
                if effective_tag != 1 {
                    return Err(format!(
                        "fmt : unsupported format tag {format_tag:#06x} (only PCM is supported)"
                    ));
                }
                if bits != 16 {
                    return Err(format!(
                        "fmt : unsupported sample width {bits} bits (only 16-bit PCM is supported)"
                    ));
                }
                if !(1..=2).contains(&channels) {
                    return Err(format!("fmt : unsupported channel count {channels}"));
                }
                if !(8000..=48000).contains(&sample_rate) {
                    return Err(format!("fmt : unsupported sample rate {sample_rate} Hz"));
                }
                fmt = Some(Fmt {
                    channels,
                    sample_rate,
                });
            }
            b"data" => data = Some(body),
            _ => {}
        }
        // chunks are word aligned
        pos = body_end + (size & 1);
    }

    let fmt = fmt.ok_or("fmt : missing fmt chunk")?;
    let data = data.ok_or("data: missing data chunk")?;
    let frame_bytes = 2 * fmt.channels as usize;
    if data.len() % frame_bytes != 0 {
        return Err(format!(
            "data: {} bytes is not a whole number of {}-byte frames",
            data.len(),
            frame_bytes
        ));
    }
    let samples = data
        .chunks_exact(frame_bytes)
        .map(|frame| {
            let sum: f64 = frame
                .chunks_exact(2)
                .map(|s| i16::from_le_bytes([s[0], s[1]]) as f64 / 32768.0)
                .sum();
            sum / fmt.channels as f64
        })
        .collect();
    Ok(AudioBuffer {
        sample_rate_hz: fmt.sample_rate,
        samples,
    })
}

/// Encodes interleaved PCM16 samples as a canonical 44-byte-header WAV.
pub fn encode_wav(sample_rate_hz: u32, channels: u16, interleaved: &[i16]) -> Vec<u8> {
    let data_len = (interleaved.len() * 2) as u32;
    let mut out = Vec::with_capacity(44 + data_len as usize);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&channels.to_le_bytes());
    out.extend_from_slice(&sample_rate_hz.to_le_bytes());
    let block_align = channels * 2;
    out.extend_from_slice(&(sample_rate_hz * block_align as u32).to_le_bytes());
    out.extend_from_slice(&block_align.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_len.to_le_bytes());
    for s in interleaved {
        out.extend_from_slice(&s.to_le_bytes());
    }
    out
}

pub fn write_wav(
    path: impl AsRef<Path>,
    sample_rate_hz: u32,
    channels: u16,
    interleaved: &[i16],
) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_wav(sample_rate_hz, channels, interleaved))
        .map_err(|e| Error::io(path, e))
}

/// Frame RMS level in dBFS (full scale = 1.0), mapped linearly onto `[0, 1]`
/// between `floor_db` and `ceil_db`.
///
/// Audio shorter than one analysis frame yields an empty trace.
pub fn energy_activation(audio: &AudioBuffer, params: &EnergyVadParams) -> Result<FrameTrace> {
    params.validate()?;
    let sr = audio.sample_rate_hz as f64;
    let frame = ((params.frame_ms * sr / 1000.0).round() as usize).max(1);
    let hop = ((params.hop_ms * sr / 1000.0).round() as usize).max(1);
    let n = audio.samples.len();
    let frames = if n >= frame { (n - frame) / hop + 1 } else { 0 };

    let span = params.ceil_db - params.floor_db;
    let values = (0..frames)
        .map(|i| {
            let window = &audio.samples[i * hop..i * hop + frame];
            let mean_sq = window.iter().map(|s| s * s).sum::<f64>() / frame as f64;
            let db = if mean_sq > 0.0 {
                10.0 * mean_sq.log10()
            } else {
                params.floor_db
            };
            ((db - params.floor_db) / span).clamp(0.0, 1.0)
        })
        .collect();
    FrameTrace::new(1000.0 / params.hop_ms, 0.0, values)
}

pub fn format_trace(trace: &FrameTrace) -> String {
    let mut out = format!(
        "frame_rate_hz={} start_s={}\n",
        trace.frame_rate_hz(),
        trace.start_s()
    );
    for v in trace.values() {
        let _ = writeln!(out, "{v:.6}");
    }
    out
}

pub fn write_trace(trace: &FrameTrace, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, format_trace(trace)).map_err(|e| Error::io(path, e))
}

pub fn read_trace(path: impl AsRef<Path>) -> Result<FrameTrace> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_trace(&text).map_err(|msg| Error::format(path, msg))
}

pub fn parse_trace(text: &str) -> std::result::Result<FrameTrace, String> {
    let mut lines = text.lines();
    let header = lines.next().ok_or("line 1: missing header")?;
    let mut rate = None;
    let mut start = None;
    for field in header.split_whitespace() {
        let (key, value) = field
            .split_once('=')
            .ok_or_else(|| format!("line 1: malformed header field {field:?}"))?;
        let value: f64 = value
            .parse()
            .map_err(|_| format!("line 1: {key} is not a number: {value:?}"))?;
        match key {
            "frame_rate_hz" => rate = Some(value),
            "start_s" => start = Some(value),
            _ => return Err(format!("line 1: unknown header field {key:?}")),
        }
    }
    let rate = rate.ok_or("line 1: header lacks frame_rate_hz")?;
    let start = start.ok_or("line 1: header lacks start_s")?;

    let mut values = Vec::new();
    for (i, line) in lines.enumerate() {
        let lineno = i + 2;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let v: f64 = line
            .parse()
            .map_err(|_| format!("line {lineno}: not a number: {line:?}"))?;
        if !(0.0..=1.0).contains(&v) {
            return Err(format!("line {lineno}: activation {v} outside [0, 1]"));
        }
        values.push(v);
    }
    FrameTrace::new(rate, start, values).map_err(|e| format!("line 1: {e}"))
}
