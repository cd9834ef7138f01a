//! Reproducible experiment driver.
//!
//! A run is described by one [`ExperimentConfig`]; [`run`] executes the chosen
//! pipeline and writes `summary.json`, CSV tables and `report.txt` to the
//! output directory. Outputs depend only on the config (timestamps live in
//! `run.log`), so two runs of the same config are byte-identical.

pub mod config;
pub mod output;
pub mod pipelines;
pub mod sweep;

use std::path::PathBuf;

use serde_json::{json, Value};

pub use config::{derive_seed, ExperimentConfig, Pipeline};
pub use output::{Artifacts, Table, MODULE_VERSION};

use crate::error::{LabError, Result};
use pipelines::Context;

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 1;
pub const EXIT_HYPOTHESIS: i32 = 2;
pub const EXIT_NUMERICS: i32 = 3;

/// Exit code for an error: 1 bad input or I/O, 2 mathematical hypothesis not
/// met, 3 numerics failed.
pub fn exit_code(e: &LabError) -> i32 {
    match e {
        LabError::InvalidInput(_)
        | LabError::NotUnimodular(_)
        | LabError::ComplexSpectrum
        | LabError::Io(_)
        | LabError::Json(_) => EXIT_INPUT,
        LabError::HypothesisNotMet(_) => EXIT_HYPOTHESIS,
        LabError::NonConvergence(_)
        | LabError::Overflow { .. }
        | LabError::Tracing(_)
        | LabError::SingularFrame(_)
        | LabError::InsufficientData(_) => EXIT_NUMERICS,
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub exit_code: i32,
    pub output_dir: PathBuf,
    pub summary: Value,
}

type Stage = fn(&mut Context) -> Result<()>;

fn stages(p: Pipeline) -> Vec<(&'static str, Stage)> {
    let all: [(&'static str, Stage); 6] = [
        ("spectrum", pipelines::spectrum),
        ("exponents", pipelines::exponents),
        ("sweep", pipelines::run_sweep),
        ("semiconj", pipelines::semiconj),
        ("disintegrate", pipelines::disintegrate),
        ("mme", pipelines::mme),
    ];
    match p {
        Pipeline::Full => all.to_vec(),
        other => all.into_iter().filter(|(n, _)| *n == other.name()).collect(),
    }
}

/// Execute the configured pipeline and write its artifacts. Stage failures are
/// recorded in the summary and reflected in the exit code; `Err` is returned
/// only for an invalid config or when the artifacts cannot be written.
pub fn run(config: &ExperimentConfig) -> Result<RunOutcome> {
    config.validate()?;
    let digest = config.digest();
    let mut ctx = Context::new(config);
    let mut public = config.clone();
    public.output_dir = PathBuf::new();
    ctx.artifacts.log(format!("start pipeline {} config {digest}", config.pipeline.name()));
    ctx.artifacts.line(format!("pipeline {} seed {}", config.pipeline.name(), config.seed));
    ctx.artifacts.line("");

    let mut exit = EXIT_OK;
    let mut errors = serde_json::Map::new();
    for (name, stage) in stages(config.pipeline) {
        ctx.artifacts.log(format!("stage {name} start"));
        if let Err(e) = stage(&mut ctx) {
            let code = exit_code(&e);
            exit = exit.max(code);
            ctx.artifacts.line(format!("  {name} failed (exit {code}): {e}"));
            errors.insert(name.to_string(), json!({"exit_code": code, "message": e.to_string()}));
            ctx.artifacts.log(format!("stage {name} failed: {e}"));
        } else {
            ctx.artifacts.log(format!("stage {name} done"));
        }
        ctx.artifacts.line("");
    }

    let mut head = serde_json::Map::new();
    head.insert("dalab_version".into(), Value::from(MODULE_VERSION));
    head.insert("config_sha256".into(), Value::from(digest.clone()));
    head.insert("pipeline".into(), Value::from(config.pipeline.name()));
    head.insert("exit_code".into(), Value::from(exit));
    head.insert("errors".into(), Value::Object(errors));
    head.insert("config".into(), serde_json::to_value(&public)?);
    let sections = std::mem::take(&mut ctx.artifacts.summary);
    head.extend(sections);
    ctx.artifacts.summary = head;
    ctx.artifacts.log(format!("finished with exit code {exit}"));
    ctx.artifacts.write(&config.output_dir, &digest)?;
    Ok(RunOutcome { exit_code: exit, output_dir: config.output_dir.clone(), summary: Value::Object(ctx.artifacts.summary) })
}
