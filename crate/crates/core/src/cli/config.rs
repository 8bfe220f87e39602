//! Pipeline configuration: one JSON document, optionally patched with
//! `stage.key=value` overrides, validated before anything runs.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::activation::EnergyVadParams;
use crate::align::{Model1Config, DEFAULT_POSTERIOR_FLOOR};
use crate::error::{Error, Result};
use crate::lmselect::{LmConfig, SelectPolicy};
use crate::segmenter::{MergeParams, SegmenterParams};
use crate::textclean::{CleanRules, Lang};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    /// Worker threads; 0 lets the runtime decide.
    pub threads: usize,
    pub segment: SegmentStage,
    pub clean: CleanStage,
    pub dedup: DedupStage,
    pub langid: LangIdStage,
    pub align_filter: AlignFilterStage,
    pub select: SelectStage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SegmentStage {
    pub enabled: bool,
    /// `.wav` files go through the energy VAD; anything else is read as a trace file.
    pub inputs: Vec<PathBuf>,
    pub manifest: PathBuf,
    pub energy: EnergyVadParams,
    pub segmenter: SegmenterParams,
    pub merge_enabled: bool,
    pub merge: MergeParams,
}

impl Default for SegmentStage {
    fn default() -> Self {
        Self {
            enabled: false,
            inputs: Vec::new(),
            manifest: PathBuf::from("segments.tsv"),
            energy: EnergyVadParams::default(),
            segmenter: SegmenterParams::default(),
            merge_enabled: true,
            merge: MergeParams::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CleanStage {
    pub enabled: bool,
    pub input: PathBuf,
    pub output: PathBuf,
    pub rules: CleanRules,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DedupStage {
    pub enabled: bool,
    pub input: PathBuf,
    pub output: PathBuf,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LangIdStage {
    pub enabled: bool,
    pub input: PathBuf,
    pub output: PathBuf,
    /// Optional JSON-lines file receiving the rejected records.
    pub rejected: Option<PathBuf>,
    /// Expected language for monolingual records; defaults to each record's own tag.
    pub expected_lang: Option<Lang>,
    /// Seed corpora per language, as JSON-lines monolingual records.
    pub seeds: BTreeMap<Lang, PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlignFilterStage {
    pub enabled: bool,
    pub input: PathBuf,
    pub output: PathBuf,
    pub qualities: PathBuf,
    /// Optional path for the trained translation table.
    pub table: Option<PathBuf>,
    pub model: Model1Config,
    pub fraction: f64,
    pub posterior_floor: f64,
}

impl Default for AlignFilterStage {
    fn default() -> Self {
        Self {
            enabled: false,
            input: PathBuf::new(),
            output: PathBuf::new(),
            qualities: PathBuf::from("qualities.tsv"),
            table: None,
            model: Model1Config::default(),
            fraction: 0.2,
            posterior_floor: DEFAULT_POSTERIOR_FLOOR,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoredSide {
    Src,
    #[default]
    Tgt,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectStage {
    pub enabled: bool,
    pub input: PathBuf,
    pub output: PathBuf,
    pub scores: PathBuf,
    pub in_domain: PathBuf,
    pub out_domain: PathBuf,
    pub lm: LmConfig,
    pub policy: SelectPolicy,
    /// Side of bitext records to score.
    pub side: ScoredSide,
    /// Optional directory receiving `in_domain.lm` and `out_domain.lm`.
    pub model_dir: Option<PathBuf>,
}

impl Default for SelectStage {
    fn default() -> Self {
        Self {
            enabled: false,
            input: PathBuf::new(),
            output: PathBuf::new(),
            scores: PathBuf::from("scores.tsv"),
            in_domain: PathBuf::new(),
            out_domain: PathBuf::new(),
            lm: LmConfig::default(),
            policy: SelectPolicy::default(),
            side: ScoredSide::default(),
            model_dir: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Segment,
    Clean,
    Dedup,
    LangId,
    AlignFilter,
    Select,
}

impl Stage {
    pub const ALL: [Stage; 6] = [
        Stage::Segment,
        Stage::Clean,
        Stage::Dedup,
        Stage::LangId,
        Stage::AlignFilter,
        Stage::Select,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Segment => "segment",
            Stage::Clean => "clean",
            Stage::Dedup => "dedup",
            Stage::LangId => "langid",
            Stage::AlignFilter => "align_filter",
            Stage::Select => "select",
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let value: Value = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_value(value)
    }

    pub fn from_value(value: Value) -> Result<Self> {
        serde_json::from_value(value).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_value(&self) -> Value {
        serde_json::to_value(self).expect("config serializes")
    }

    pub fn enabled(&self, stage: Stage) -> bool {
        match stage {
            Stage::Segment => self.segment.enabled,
            Stage::Clean => self.clean.enabled,
            Stage::Dedup => self.dedup.enabled,
            Stage::LangId => self.langid.enabled,
            Stage::AlignFilter => self.align_filter.enabled,
            Stage::Select => self.select.enabled,
        }
    }

    /// Checks parameters and input paths for `stages`. Paths written by an
    /// earlier stage in the list count as resolvable.
    pub fn validate(&self, stages: &[Stage]) -> Result<()> {
        let mut produced: Vec<&Path> = Vec::new();
        let need = |p: &Path, what: &str, produced: &[&Path]| -> Result<()> {
            if p.as_os_str().is_empty() {
                return Err(Error::Config(format!("{what} is not set")));
            }
            if produced.contains(&p) || p.exists() {
                Ok(())
            } else {
                Err(Error::Config(format!(
                    "{what}: no such file: {}",
                    p.display()
                )))
            }
        };
        let out = |p: &Path, what: &str| -> Result<()> {
            if p.as_os_str().is_empty() {
                Err(Error::Config(format!("{what} is not set")))
            } else {
                Ok(())
            }
        };
        let param = |e: Error| Error::Config(e.to_string());

        for &stage in stages {
            match stage {
                Stage::Segment => {
                    let s = &self.segment;
                    s.energy.validate().map_err(param)?;
                    s.segmenter.validate().map_err(param)?;
                    s.merge.validate().map_err(param)?;
                    out(&s.manifest, "segment.manifest")?;
                    let mut stems = BTreeMap::new();
                    for p in &s.inputs {
                        need(p, "segment.inputs", &produced)?;
                        let stem = utterance_stem(p);
                        if let Some(prev) = stems.insert(stem.clone(), p) {
                            return Err(Error::Config(format!(
                                "segment.inputs: {} and {} share the name {stem:?}",
                                prev.display(),
                                p.display()
                            )));
                        }
                    }
                    produced.push(&s.manifest);
                }
                Stage::Clean => {
                    self.clean.rules.validate().map_err(param)?;
                    need(&self.clean.input, "clean.input", &produced)?;
                    out(&self.clean.output, "clean.output")?;
                    produced.push(&self.clean.output);
                }
                Stage::Dedup => {
                    need(&self.dedup.input, "dedup.input", &produced)?;
                    out(&self.dedup.output, "dedup.output")?;
                    produced.push(&self.dedup.output);
                }
                Stage::LangId => {
                    let s = &self.langid;
                    need(&s.input, "langid.input", &produced)?;
                    out(&s.output, "langid.output")?;
                    if s.seeds.is_empty() {
                        return Err(Error::Config("langid.seeds is empty".into()));
                    }
                    for (lang, p) in &s.seeds {
                        need(p, &format!("langid.seeds.{lang}"), &produced)?;
                    }
                    if let Some(lang) = &s.expected_lang {
                        if !s.seeds.contains_key(lang) {
                            return Err(Error::Config(format!(
                                "langid.expected_lang {lang} has no seed corpus"
                            )));
                        }
                    }
                    produced.push(&s.output);
                    if let Some(r) = &s.rejected {
                        produced.push(r);
                    }
                }
                Stage::AlignFilter => {
                    let s = &self.align_filter;
                    s.model.validate().map_err(param)?;
                    if !(0.0..1.0).contains(&s.fraction) {
                        return Err(Error::Config(format!(
                            "align_filter.fraction must be in [0, 1), got {}",
                            s.fraction
                        )));
                    }
                    if !(0.0..=1.0).contains(&s.posterior_floor) {
                        return Err(Error::Config(format!(
                            "align_filter.posterior_floor must be in [0, 1], got {}",
                            s.posterior_floor
                        )));
                    }
                    need(&s.input, "align_filter.input", &produced)?;
                    out(&s.output, "align_filter.output")?;
                    out(&s.qualities, "align_filter.qualities")?;
                    produced.push(&s.output);
                }
                Stage::Select => {
                    let s = &self.select;
                    s.lm.validate().map_err(param)?;
                    if let SelectPolicy::Threshold(t) = s.policy {
                        if t.is_nan() {
                            return Err(Error::Config("select.policy threshold is NaN".into()));
                        }
                    }
                    need(&s.input, "select.input", &produced)?;
                    need(&s.in_domain, "select.in_domain", &produced)?;
                    need(&s.out_domain, "select.out_domain", &produced)?;
                    out(&s.output, "select.output")?;
                    out(&s.scores, "select.scores")?;
                    produced.push(&s.output);
                }
            }
        }
        Ok(())
    }
}

/// Utterance-id prefix for an input file.
pub fn utterance_stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "audio".to_string())
}

/// Applies one `path.to.key=value` override. The value is parsed as JSON
/// when possible and taken as a string otherwise.
pub fn apply_override(config: &mut Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("--set expects key=value, got {assignment:?}")))?;
    let parsed = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    // stage names use '_' in JSON; accept the CLI spelling too
    let mut parts: Vec<String> = key.split('.').map(|p| p.replace('-', "_")).collect();
    if parts.is_empty() || parts.iter().any(String::is_empty) {
        return Err(Error::Config(format!("--set: bad key {key:?}")));
    }
    let last = parts.pop().unwrap();
    let mut node = config;
    for part in &parts {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| Error::Config(format!("--set {key}: {part} is not inside an object")))?;
        node = obj
            .entry(part.clone())
            .or_insert_with(|| Value::Object(Default::default()));
    }
    let obj = node
        .as_object_mut()
        .ok_or_else(|| Error::Config(format!("--set {key}: parent is not an object")))?;
    obj.insert(last, parsed);
    Ok(())
}
