//! Long-form audio segmentation driven by a per-frame speech activation trace.
//!
//! The first pass thresholds the trace with onset/offset hysteresis. Any region
//! longer than the duration cap is re-thresholded with both thresholds raised
//! by a fixed step, recursively, until it either splits into short enough
//! pieces or the thresholds reach the escalation cap, at which point the region
//! is cut into equal parts. A region whose escalated pass makes no progress
//! (nothing detected, or the same region again) is cut into equal parts right
//! away, so speech is never dropped by over-escalation.
//!
//! Adjacent short segments can afterwards be joined with [`merge_segments`].

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-frame speech activation in `[0, 1]`.
///
/// Frame `i` covers `[start_s + i / frame_rate_hz, start_s + (i + 1) / frame_rate_hz)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameTrace {
    frame_rate_hz: f64,
    start_s: f64,
    values: Vec<f64>,
}

impl FrameTrace {
    pub fn new(frame_rate_hz: f64, start_s: f64, values: Vec<f64>) -> Result<Self> {
        if !(frame_rate_hz.is_finite() && frame_rate_hz > 0.0) {
            return Err(Error::param(format!(
                "frame rate must be positive, got {frame_rate_hz}"
            )));
        }
        if !(start_s.is_finite() && start_s >= 0.0) {
            return Err(Error::param(format!(
                "trace start must be >= 0, got {start_s}"
            )));
        }
        if let Some((i, v)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !(0.0..=1.0).contains(*v))
        {
            return Err(Error::param(format!(
                "activation {v} at frame {i} is outside [0, 1]"
            )));
        }
        Ok(Self {
            frame_rate_hz,
            start_s,
            values,
        })
    }

    pub fn frame_rate_hz(&self) -> f64 {
        self.frame_rate_hz
    }

    pub fn start_s(&self) -> f64 {
        self.start_s
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Absolute time of the start of frame `index` (or of the trace end when
    /// `index == len()`).
    pub fn frame_time(&self, index: usize) -> f64 {
        self.start_s + index as f64 / self.frame_rate_hz
    }

    pub fn duration_s(&self) -> f64 {
        self.values.len() as f64 / self.frame_rate_hz
    }

    fn span_of(&self, frames: &Range<usize>) -> TimeSpan {
        TimeSpan {
            start_s: self.frame_time(frames.start),
            end_s: self.frame_time(frames.end),
        }
    }

    fn frames_duration(&self, frames: &Range<usize>) -> f64 {
        self.frame_time(frames.end) - self.frame_time(frames.start)
    }
}

/// Half-open interval `[start_s, end_s)` of audio time, in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeSpan {
    pub start_s: f64,
    pub end_s: f64,
}

impl TimeSpan {
    pub fn new(start_s: f64, end_s: f64) -> Result<Self> {
        if !(start_s.is_finite() && end_s.is_finite()) || start_s < 0.0 || end_s <= start_s {
            return Err(Error::param(format!("invalid span [{start_s}, {end_s})")));
        }
        Ok(Self { start_s, end_s })
    }

    pub fn length(&self) -> f64 {
        self.end_s - self.start_s
    }

    pub fn contains(&self, other: &TimeSpan) -> bool {
        self.start_s <= other.start_s && other.end_s <= self.end_s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SegmenterParams {
    /// Onset threshold: a region opens at a frame with activation >= `p_on`.
    pub p_on: f64,
    /// Offset threshold: an open region closes at a frame with activation < `p_off`.
    pub p_off: f64,
    /// Onset threshold step per re-segmentation level.
    pub alpha_on: f64,
    /// Offset threshold step per re-segmentation level.
    pub alpha_off: f64,
    /// Maximum segment duration in seconds.
    pub t_dur_s: f64,
    /// Escalation continues while either threshold is below this value.
    pub escalation_cap: f64,
}

impl Default for SegmenterParams {
    fn default() -> Self {
        Self {
            p_on: 0.481,
            p_off: 0.810,
            alpha_on: 0.1,
            alpha_off: 0.028,
            t_dur_s: 43.75,
            escalation_cap: 0.95,
        }
    }
}

impl SegmenterParams {
    pub fn validate(&self) -> Result<()> {
        check_threshold("p_on", self.p_on)?;
        check_threshold("p_off", self.p_off)?;
        check_threshold("escalation_cap", self.escalation_cap)?;
        if !(self.alpha_on.is_finite() && self.alpha_on > 0.0) {
            return Err(Error::param(format!(
                "alpha_on must be > 0, got {}",
                self.alpha_on
            )));
        }
        if !(self.alpha_off.is_finite() && self.alpha_off > 0.0) {
            return Err(Error::param(format!(
                "alpha_off must be > 0, got {}",
                self.alpha_off
            )));
        }
        if !(self.t_dur_s.is_finite() && self.t_dur_s > 0.0) {
            return Err(Error::param(format!(
                "t_dur_s must be > 0, got {}",
                self.t_dur_s
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MergeParams {
    /// Maximum duration of a merged segment, in seconds.
    pub m_dur_s: f64,
    /// Segments separated by a gap strictly shorter than this are merged.
    pub m_int_s: f64,
}

impl Default for MergeParams {
    fn default() -> Self {
        Self {
            m_dur_s: 30.0,
            m_int_s: 1.0,
        }
    }
}

impl MergeParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.m_dur_s.is_finite() && self.m_dur_s > 0.0) {
            return Err(Error::param(format!(
                "m_dur_s must be > 0, got {}",
                self.m_dur_s
            )));
        }
        if !(self.m_int_s.is_finite() && self.m_int_s >= 0.0) {
            return Err(Error::param(format!(
                "m_int_s must be >= 0, got {}",
                self.m_int_s
            )));
        }
        Ok(())
    }
}

fn check_threshold(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v <= 1.0 {
        Ok(())
    } else {
        Err(Error::param(format!("{name} must be in (0, 1], got {v}")))
    }
}

/// Frame-index hysteresis over a slice of activations. Returned ranges are
/// relative to `values`.
pub(crate) fn hysteresis_frames(values: &[f64], p_on: f64, p_off: f64) -> Vec<Range<usize>> {
    let mut regions = Vec::new();
    let mut open: Option<usize> = None;
    for (i, &v) in values.iter().enumerate() {
        match open {
            Some(start) if v < p_off => {
                regions.push(start..i);
                open = None;
            }
            None if v >= p_on && v >= p_off => open = Some(i),
            _ => {}
        }
    }
    if let Some(start) = open {
        regions.push(start..values.len());
    }
    regions
}

/// Maximal active regions under onset/offset hysteresis.
///
/// A region opens at the first frame with activation `>= p_on` and closes at
/// the first later frame with activation `< p_off`; its end time is that
/// frame's start time. A region still open at the end of the trace closes at
/// the trace end. A frame below `p_off` is never active, so when
/// `p_off > p_on` the effective onset is `p_off`.
pub fn hysteresis_regions(trace: &FrameTrace, p_on: f64, p_off: f64) -> Result<Vec<TimeSpan>> {
    check_threshold("p_on", p_on)?;
    check_threshold("p_off", p_off)?;
    Ok(hysteresis_frames(&trace.values, p_on, p_off)
        .iter()
        .map(|r| trace.span_of(r))
        .collect())
}

/// Splits `span` into `ceil(length / t_dur_s)` contiguous parts of equal length.
pub fn equal_segment(span: TimeSpan, t_dur_s: f64) -> Result<Vec<TimeSpan>> {
    if !(t_dur_s.is_finite() && t_dur_s > 0.0) {
        return Err(Error::param(format!("t_dur_s must be > 0, got {t_dur_s}")));
    }
    let length = span.length();
    if length <= t_dur_s {
        return Err(Error::input(format!(
            "span of {length} s does not exceed the {t_dur_s} s cap"
        )));
    }
    let parts = (length / t_dur_s).ceil() as usize;
    let step = length / parts as f64;
    Ok((0..parts)
        .map(|i| TimeSpan {
            start_s: span.start_s + i as f64 * step,
            end_s: if i + 1 == parts {
                span.end_s
            } else {
                span.start_s + (i + 1) as f64 * step
            },
        })
        .collect())
}

struct Pending {
    frames: Range<usize>,
    p_on: f64,
    p_off: f64,
    escalated: bool,
}

/// Segments a trace so that no returned span exceeds `params.t_dur_s`.
///
/// Spans come back sorted and disjoint, each inside a region of the
/// first-pass hysteresis at `(p_on, p_off)`.
pub fn segment_audio(trace: &FrameTrace, params: &SegmenterParams) -> Result<Vec<TimeSpan>> {
    params.validate()?;

    let mut out = Vec::new();
    let mut stack = vec![Pending {
        frames: 0..trace.len(),
        p_on: params.p_on,
        p_off: params.p_off,
        escalated: false,
    }];

    while let Some(job) = stack.pop() {
        let base = job.frames.start;
        let regions: Vec<Range<usize>> =
            hysteresis_frames(&trace.values[job.frames.clone()], job.p_on, job.p_off)
                .into_iter()
                .map(|r| r.start + base..r.end + base)
                .collect();

        if job.escalated && (regions.is_empty() || (regions.len() == 1 && regions[0] == job.frames))
        {
            out.extend(equal_segment(trace.span_of(&job.frames), params.t_dur_s)?);
            continue;
        }

        // Pushed in reverse so the stack pops them left to right.
        for region in regions.into_iter().rev() {
            if trace.frames_duration(&region) <= params.t_dur_s {
                out.push(trace.span_of(&region));
            } else if job.p_on < params.escalation_cap || job.p_off < params.escalation_cap {
                stack.push(Pending {
                    frames: region,
                    p_on: (job.p_on + params.alpha_on).min(1.0),
                    p_off: (job.p_off + params.alpha_off).min(1.0),
                    escalated: true,
                });
            } else {
                out.extend(equal_segment(trace.span_of(&region), params.t_dur_s)?);
            }
        }
    }

    out.sort_by(|a, b| a.start_s.total_cmp(&b.start_s));
    Ok(out)
}

/// Greedily joins neighbouring spans left to right.
///
/// The accumulated span absorbs the next one when the gap between them is
/// strictly less than `m_int_s` and the joined span is no longer than
/// `m_dur_s`. Input spans that are already longer than `m_dur_s` pass through
/// untouched.
pub fn merge_segments(spans: &[TimeSpan], params: &MergeParams) -> Result<Vec<TimeSpan>> {
    params.validate()?;
    for (i, w) in spans.windows(2).enumerate() {
        if w[1].start_s < w[0].end_s {
            return Err(Error::input(format!(
                "spans {i} and {} are unsorted or overlapping: [{}, {}) then [{}, {})",
                i + 1,
                w[0].start_s,
                w[0].end_s,
                w[1].start_s,
                w[1].end_s
            )));
        }
    }

    let mut out = Vec::with_capacity(spans.len());
    let mut iter = spans.iter().copied();
    let Some(mut acc) = iter.next() else {
        return Ok(out);
    };
    for next in iter {
        let gap = next.start_s - acc.end_s;
        if gap < params.m_int_s && next.end_s - acc.start_s <= params.m_dur_s {
            acc.end_s = next.end_s;
        } else {
            out.push(acc);
            acc = next;
        }
    }
    out.push(acc);
    Ok(out)
}
