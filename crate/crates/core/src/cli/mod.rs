//! Command-line pipeline: subcommands that wire the library stages to files.
//!
//! Exit status: 0 on success, 1 when some input failed or a stage hit a
//! runtime error, 2 when the configuration is invalid.

pub mod config;
pub mod io;
pub mod stages;

use std::collections::BTreeMap;
use std::path::PathBuf;

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use config::{apply_override, PipelineConfig, Stage};

pub const EXIT_OK: i32 = 0;
pub const EXIT_PARTIAL: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "speechprep",
    version,
    about = "Speech translation corpus preparation"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// Pipeline configuration (JSON). Defaults apply when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Override the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Override a config value, e.g. `--set segment.segmenter.t_dur_s=30`.
    #[arg(long = "set", value_name = "STAGE.KEY=VALUE", global = true)]
    pub overrides: Vec<String>,

    /// Write the JSON report here instead of stdout.
    #[arg(long, global = true)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Segment WAV or activation-trace inputs into a TSV manifest.
    Segment,
    /// Drop records with non-printing characters, URLs/markup or overlong tokens.
    Clean,
    /// Drop exact duplicates after whitespace normalization.
    Dedup,
    /// Keep records whose identified language matches the expected one.
    Langid,
    /// Cross-entropy difference domain selection.
    Select,
    /// Drop the bitext pairs with the lowest alignment quality.
    AlignFilter,
    /// Run every enabled stage in order.
    Run,
}

impl Command {
    fn stage(self) -> Option<Stage> {
        match self {
            Command::Segment => Some(Stage::Segment),
            Command::Clean => Some(Stage::Clean),
            Command::Dedup => Some(Stage::Dedup),
            Command::Langid => Some(Stage::LangId),
            Command::Select => Some(Stage::Select),
            Command::AlignFilter => Some(Stage::AlignFilter),
            Command::Run => None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub seed: u64,
    pub status: String,
    pub stages: BTreeMap<String, Value>,
}

/// Builds the effective configuration from the file, overrides and flags.
pub fn resolve_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut value = match &cli.config {
        Some(path) => PipelineConfig::load(path)?.to_value(),
        None => PipelineConfig::default().to_value(),
    };
    for o in &cli.overrides {
        apply_override(&mut value, o)?;
    }
    let mut config = PipelineConfig::from_value(value)?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    Ok(config)
}

fn to_value<T: Serialize>(report: &T) -> Value {
    serde_json::to_value(report).expect("reports serialize")
}

fn run_stage(config: &PipelineConfig, stage: Stage) -> Result<(Value, bool)> {
    Ok(match stage {
        Stage::Segment => {
            let r = stages::run_segment(&config.segment)?;
            let ok = r.failed.is_empty();
            (to_value(&r), ok)
        }
        Stage::Clean => (to_value(&stages::run_clean(&config.clean)?), true),
        Stage::Dedup => (to_value(&stages::run_dedup(&config.dedup)?), true),
        Stage::LangId => (to_value(&stages::run_langid(&config.langid)?), true),
        Stage::AlignFilter => (
            to_value(&stages::run_align_filter(&config.align_filter)?),
            true,
        ),
        Stage::Select => (to_value(&stages::run_select(&config.select)?), true),
    })
}

/// Validates and runs `stages`, stopping at the first stage error.
pub fn execute(config: &PipelineConfig, stages: &[Stage]) -> Result<(RunReport, i32)> {
    config.validate(stages)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.threads)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;

    let mut report = RunReport {
        seed: config.seed,
        status: "ok".into(),
        stages: BTreeMap::new(),
    };
    let mut code = EXIT_OK;
    pool.install(|| -> Result<()> {
        for &stage in stages {
            log::info!("running {}", stage.name());
            match run_stage(config, stage) {
                Ok((value, ok)) => {
                    if !ok {
                        code = EXIT_PARTIAL;
                    }
                    report.stages.insert(stage.name().into(), value);
                }
                Err(e @ Error::Config(_)) => return Err(e),
                Err(e) => {
                    code = EXIT_PARTIAL;
                    report.stages.insert(
                        stage.name().into(),
                        serde_json::json!({ "error": e.to_string() }),
                    );
                    break;
                }
            }
        }
        Ok(())
    })?;
    if code != EXIT_OK {
        report.status = "partial".into();
    }
    Ok((report, code))
}

/// Entry point shared by the binary and the tests. Returns the exit status.
pub fn run(cli: Cli) -> i32 {
    let config = match resolve_config(&cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_CONFIG;
        }
    };
    let stages: Vec<Stage> = match cli.command.stage() {
        Some(s) => vec![s],
        None => Stage::ALL
            .into_iter()
            .filter(|&s| config.enabled(s))
            .collect(),
    };
    let (report, code) = match execute(&config, &stages) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return if matches!(e, Error::Config(_)) {
                EXIT_CONFIG
            } else {
                EXIT_PARTIAL
            };
        }
    };
    let json = serde_json::to_string_pretty(&report).expect("report serializes") + "\n";
    match &cli.report {
        Some(path) => {
            if let Err(e) = io::write_file(path, json.as_bytes()) {
                eprintln!("error: {e}");
                return EXIT_PARTIAL;
            }
        }
        None => print!("{json}"),
    }
    code
}
