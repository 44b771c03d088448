//! Batch orchestration behind the `hetdim` binary: reads a config, runs one
//! experiment, and writes its artifacts, `summary.json`, `manifest.json`
//! and `timing.txt` into the output directory.

pub mod config;
pub mod experiments;

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::info;
use serde::{Deserialize, Serialize};

use crate::cycle_solver::{replay_certificate, CycleCertificate, ReplayReport};
use crate::error::{HetdimError, Result};
use crate::par::with_jobs;
use crate::saddle_model::{check_conditions, ConditionReport};

pub use config::{parse_config, ExperimentConfig, Prepared};
pub use experiments::{Check, ExperimentOutput};

pub const DEFAULT_OUTPUT_DIR: &str = "hetdim_out";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSummary {
    pub experiment: String,
    pub passed: bool,
    pub checks: Vec<Check>,
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    parallel_feature: bool,
    config: &'a ExperimentConfig,
    outputs: Vec<String>,
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path)
        .map_err(|e| HetdimError::validation(format!("cannot read {}: {e}", path.display())))
}

pub fn load_config(path: &Path) -> Result<Prepared> {
    parse_config(&read(path)?).map_err(|e| match e {
        HetdimError::Json(j) => HetdimError::validation(format!("{}: {j}", path.display())),
        HetdimError::Validation(m) => HetdimError::validation(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn default_jobs() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

/// Runs the configured experiment and writes its outputs. Checks that
/// fail are reported in the summary, not as an error.
pub fn run_experiment(config_path: &Path, out_dir: Option<&Path>, jobs: Option<usize>) -> Result<RunSummary> {
    let prepared = load_config(config_path)?;
    let jobs = jobs.or(prepared.config.jobs).unwrap_or_else(default_jobs);
    if jobs == 0 {
        return Err(HetdimError::validation("--jobs must be at least 1"));
    }
    let dir: PathBuf = match (out_dir, &prepared.config.output_dir) {
        (Some(d), _) => d.to_path_buf(),
        (None, Some(d)) => PathBuf::from(d),
        (None, None) => PathBuf::from(DEFAULT_OUTPUT_DIR),
    };
    let name = prepared.config.experiment.name();
    info!("running {name} with {jobs} job(s) into {}", dir.display());
    let start = Instant::now();
    let output = with_jobs(jobs, || experiments::run(&prepared))?;
    let wall = start.elapsed().as_secs_f64();

    let summary = RunSummary {
        experiment: name.to_string(),
        passed: output.checks.iter().all(|c| c.pass),
        checks: output.checks,
    };
    let mut artifacts = output.artifacts;
    artifacts.sort_by(|a, b| a.path.cmp(&b.path));
    let manifest = Manifest {
        tool: "hetdim",
        version: env!("CARGO_PKG_VERSION"),
        parallel_feature: cfg!(feature = "parallel"),
        config: &prepared.config,
        outputs: artifacts.iter().map(|a| a.path.clone()).collect(),
    };
    let io = |e: std::io::Error, p: &Path| HetdimError::validation(format!("cannot write {}: {e}", p.display()));
    for a in &artifacts {
        let path = dir.join(&a.path);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| io(e, parent))?;
        }
        fs::write(&path, &a.bytes).map_err(|e| io(e, &path))?;
    }
    fs::create_dir_all(&dir).map_err(|e| io(e, &dir))?;
    let mut s = serde_json::to_vec_pretty(&summary)?;
    s.push(b'\n');
    fs::write(dir.join("summary.json"), s).map_err(|e| io(e, &dir))?;
    let mut m = serde_json::to_vec_pretty(&manifest)?;
    m.push(b'\n');
    fs::write(dir.join("manifest.json"), m).map_err(|e| io(e, &dir))?;
    fs::write(dir.join("timing.txt"), format!("wall_seconds {wall:.3}\njobs {jobs}\n")).map_err(|e| io(e, &dir))?;
    Ok(summary)
}

pub fn replay_file(path: &Path) -> Result<ReplayReport> {
    let cert: CycleCertificate = serde_json::from_str(&read(path)?)
        .map_err(|e| HetdimError::validation(format!("{}: certificate schema mismatch: {e}", path.display())))?;
    replay_certificate(&cert)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelCheck {
    pub dim: usize,
    pub theta: f64,
    pub k_star: usize,
    pub conditions: ConditionReport,
    pub first_failure: Option<String>,
}

pub fn check_model(config_path: &Path) -> Result<ModelCheck> {
    let p = load_config(config_path)?;
    let conditions = check_conditions(&p.model, &p.coeffs, p.coeffs2.as_ref());
    Ok(ModelCheck {
        dim: p.model.dim(),
        theta: p.model.theta(),
        k_star: p.coeffs.k_star(&p.model),
        first_failure: conditions.first_failure(),
        conditions,
    })
}

/// Process exit code for an error: 2 for input errors, 1 otherwise.
pub fn exit_code(err: &HetdimError) -> i32 {
    if err.is_input_error() {
        2
    } else {
        1
    }
}
