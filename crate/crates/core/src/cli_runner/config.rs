//! Experiment configuration: JSON ingestion and validation.

use serde::{Deserialize, Serialize};

use crate::abs_lorenz::AbsConfig;
use crate::error::{HetdimError, Result};
use crate::global_map::{CoeffSpec, GlobalMapCoeffs};
use crate::saddle_model::{build_model, ModelSpec, SaddleModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    ForgeTangency,
    Period2Sweep,
    HetdimSymmetric,
    HetdimGeneral,
    ConeBattery,
    LeafFit,
    C3primeScan,
    AbsOrbits,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::ForgeTangency => "forge_tangency",
            Experiment::Period2Sweep => "period2_sweep",
            Experiment::HetdimSymmetric => "hetdim_symmetric",
            Experiment::HetdimGeneral => "hetdim_general",
            Experiment::ConeBattery => "cone_battery",
            Experiment::LeafFit => "leaf_fit",
            Experiment::C3primeScan => "c3prime_scan",
            Experiment::AbsOrbits => "abs_orbits",
        }
    }

    fn needs_pairs(self) -> bool {
        matches!(
            self,
            Experiment::Period2Sweep
                | Experiment::HetdimSymmetric
                | Experiment::HetdimGeneral
                | Experiment::ConeBattery
        )
    }

    fn needs_schedule(self) -> bool {
        self.needs_pairs() || matches!(self, Experiment::ForgeTangency | Experiment::LeafFit)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleEntry {
    pub k: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m: Option<usize>,
}

/// `count` evenly spaced values from `start` to `end` inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridAxis {
    pub start: f64,
    pub end: f64,
    pub count: usize,
}

impl GridAxis {
    pub fn values(&self) -> Vec<f64> {
        if self.count == 1 {
            return vec![self.start];
        }
        (0..self.count)
            .map(|i| self.start + (self.end - self.start) * i as f64 / (self.count - 1) as f64)
            .collect()
    }
}

/// Morioka–Shimizu `(alpha, lambda)` grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct C3PrimeGrid {
    pub alpha: GridAxis,
    pub lambda: GridAxis,
}

impl Default for C3PrimeGrid {
    fn default() -> Self {
        C3PrimeGrid {
            alpha: GridAxis {
                start: 0.1,
                end: 1.0,
                count: 10,
            },
            lambda: GridAxis {
                start: 0.5,
                end: 1.5,
                count: 11,
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AbsRun {
    pub map: AbsConfig,
    pub seeds: usize,
    pub steps: usize,
    /// Number of orbits written out as CSV.
    pub export: usize,
    pub export_steps: usize,
}

impl Default for AbsRun {
    fn default() -> Self {
        AbsRun {
            map: AbsConfig::default(),
            seeds: 10_000,
            steps: 200,
            export: 4,
            export_steps: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    #[serde(default = "ModelSpec::default_d3")]
    pub model: ModelSpec,
    /// Defaults to `GlobalMapCoeffs::default_for_dim(model.dim)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coeffs: Option<CoeffSpec>,
    /// Second global map for `hetdim_general`; defaults to the mirror image
    /// of `coeffs` under the model symmetry.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coeffs2: Option<CoeffSpec>,
    #[serde(default)]
    pub schedule: Vec<ScheduleEntry>,
    #[serde(default = "default_s_targets")]
    pub s_targets: Vec<f64>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub jobs: Option<usize>,
    #[serde(default)]
    pub c3prime_grid: C3PrimeGrid,
    #[serde(default)]
    pub abs: AbsRun,
}

fn default_s_targets() -> Vec<f64> {
    vec![0.0]
}

/// Line of the first occurrence of `"key"` in the source, for messages.
fn line_of(text: &str, key: &str) -> Option<usize> {
    let quoted = format!("\"{key}\"");
    text.lines().position(|l| l.contains(&quoted)).map(|i| i + 1)
}

fn at(text: &str, key: &str, msg: String) -> HetdimError {
    match line_of(text, key) {
        Some(line) => HetdimError::validation(format!("line {line}: {msg}")),
        None => HetdimError::validation(msg),
    }
}

/// The validated inputs of a run.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub config: ExperimentConfig,
    pub model: SaddleModel,
    pub coeffs: GlobalMapCoeffs,
    pub coeffs2: Option<GlobalMapCoeffs>,
}

impl Prepared {
    pub fn pairs(&self) -> Vec<(usize, usize)> {
        self.config
            .schedule
            .iter()
            .filter_map(|e| e.m.map(|m| (e.k, m)))
            .collect()
    }

    pub fn ks(&self) -> Vec<usize> {
        self.config.schedule.iter().map(|e| e.k).collect()
    }
}

pub fn parse_config(text: &str) -> Result<Prepared> {
    let config: ExperimentConfig = serde_json::from_str(text)?;
    let exp = config.experiment;
    if exp.needs_schedule() && config.schedule.is_empty() {
        return Err(at(text, "experiment", format!("{} needs a non-empty schedule", exp.name())));
    }
    for e in &config.schedule {
        if e.k % 2 != 0 {
            return Err(at(text, "schedule", format!("itinerary parity: k must be even (k={})", e.k)));
        }
        match e.m {
            Some(m) if m % 2 != 0 => {
                return Err(at(text, "schedule", format!("itinerary parity: m must be even (m={m})")));
            }
            Some(m) if e.k <= m => {
                return Err(at(text, "schedule", format!("itinerary order: k must exceed m (k={}, m={m})", e.k)));
            }
            None if exp.needs_pairs() => {
                return Err(at(text, "schedule", format!("{} needs m in every schedule entry", exp.name())));
            }
            _ => {}
        }
    }
    if let Some(s) = config.s_targets.iter().find(|s| !(s.abs() < 1.0)) {
        return Err(at(text, "s_targets", format!("s_target {s} must lie in (-1, 1)")));
    }
    if config.s_targets.is_empty() {
        return Err(at(text, "s_targets", "s_targets must not be empty".to_string()));
    }
    if config.jobs == Some(0) {
        return Err(at(text, "jobs", "jobs must be at least 1".to_string()));
    }
    for axis in [config.c3prime_grid.alpha, config.c3prime_grid.lambda] {
        if axis.count == 0 || !(axis.start > 0.0 && axis.end > 0.0) {
            return Err(at(text, "c3prime_grid", "grid axes need count >= 1 and positive bounds".to_string()));
        }
    }
    config
        .abs
        .map
        .validate()
        .map_err(|e| at(text, "abs", e.to_string()))?;
    let model = build_model(&config.model).map_err(|e| at(text, "model", e.to_string()))?;
    let coeffs = match &config.coeffs {
        Some(spec) => GlobalMapCoeffs::from_spec(spec, model.dim()).map_err(|e| at(text, "coeffs", e.to_string()))?,
        None => GlobalMapCoeffs::default_for_dim(model.dim()),
    };
    let coeffs2 = match &config.coeffs2 {
        Some(spec) => {
            Some(GlobalMapCoeffs::from_spec_raw(spec, model.dim()).map_err(|e| at(text, "coeffs2", e.to_string()))?)
        }
        None => None,
    };
    if exp == Experiment::HetdimGeneral && coeffs2.is_none() && model.symmetry_signs.is_none() {
        return Err(at(
            text,
            "experiment",
            "hetdim_general needs coeffs2 or a model with symmetry_signs".to_string(),
        ));
    }
    Ok(Prepared {
        config,
        model,
        coeffs,
        coeffs2,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn odd_k_is_rejected_with_its_line() {
        let text = "{\n  \"experiment\": \"hetdim_symmetric\",\n  \"schedule\": [{\"k\": 17, \"m\": 12}]\n}";
        let err = parse_config(text).unwrap_err();
        let msg = err.to_string();
        assert!(err.is_input_error());
        assert!(msg.contains("itinerary parity: k must be even"), "{msg}");
        assert!(msg.contains("line 3"), "{msg}");
    }

    #[test]
    fn order_and_missing_m_are_rejected() {
        let text = r#"{"experiment": "period2_sweep", "schedule": [{"k": 12, "m": 14}]}"#;
        assert!(parse_config(text).unwrap_err().to_string().contains("k must exceed m"));
        let text = r#"{"experiment": "cone_battery", "schedule": [{"k": 12}]}"#;
        assert!(parse_config(text).unwrap_err().to_string().contains("needs m"));
    }

    #[test]
    fn syntax_errors_carry_a_position() {
        let err = parse_config("{\n \"experiment\": \"leaf_fit\",,\n}").unwrap_err();
        assert!(err.is_input_error());
        assert!(err.to_string().contains("line 2"), "{err}");
    }

    #[test]
    fn defaults_fill_model_and_coeffs() {
        let p = parse_config(r#"{"experiment": "c3prime_scan"}"#).unwrap();
        assert_eq!(p.model.dim(), 3);
        assert_eq!(p.coeffs, GlobalMapCoeffs::default_for_dim(3));
        assert_eq!(p.config.c3prime_grid.alpha.values().len(), 10);
        assert_eq!(p.config.abs.seeds, 10_000);
    }

    #[test]
    fn unknown_fields_are_rejected() {
        assert!(parse_config(r#"{"experiment": "leaf_fit", "schedul": []}"#).is_err());
    }
}
