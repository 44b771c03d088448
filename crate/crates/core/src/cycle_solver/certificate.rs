//! Serialized cycle certificates and their replay.

use serde::{Deserialize, Serialize};

use super::hetdim::{quasi_connection, ConnectionCurve, QuasiConnection};
use super::index::{dense_spectrum, fixed_point_index};
use super::period2::{forward_closure, ClosureCheck, IndexScales, PeriodTwoOrbit};
use super::transverse::{verify_transverse_connection, TransverseWitness};
use crate::error::{HetdimError, Result};
use crate::global_map::{CoeffSpec, GlobalMapCoeffs};
use crate::saddle_model::{build_model, ConditionReport, ModelSpec, SaddleModel};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CycleMode {
    Symmetric,
    General,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CycleParameters {
    pub mu: f64,
    pub mu2: Option<f64>,
    pub theta: f64,
    /// `theta` is realized through this `gamma` with `lambda` fixed.
    pub gamma: f64,
    pub mu2_shift_applied: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IndexEvidence {
    /// Multipliers of `DT^2` as `[re, im]`.
    pub eigenvalues: Vec<[f64; 2]>,
    pub moduli: Vec<f64>,
    pub index: usize,
    pub fixed_point_index: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ThetaDecomposition {
    pub m_over_k: f64,
    /// `ln(lambda^k gamma^m)`.
    pub c_star: f64,
    pub theta_predicted: f64,
    pub identity_residual: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RatioCheck {
    pub lambda_k_gamma_m: f64,
    /// `2 y- / (c x+)`, or its absolute value after the `mu2` shift.
    pub target: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Tolerances {
    pub closure: f64,
    pub gap: f64,
    pub theta_identity: f64,
    pub slope_min: f64,
    pub s_value: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            closure: 1e-10,
            gap: 1e-8,
            theta_identity: 1e-10,
            slope_min: 1e-6,
            s_value: 1e-9,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CycleCertificate {
    pub schema_version: u32,
    pub mode: CycleMode,
    pub k: usize,
    pub m: usize,
    pub s_target: f64,
    /// Model with the realized `gamma`.
    pub model: ModelSpec,
    pub coeffs: CoeffSpec,
    pub coeffs_flipped: bool,
    pub coeffs2: Option<CoeffSpec>,
    pub parameters: CycleParameters,
    pub orbit: PeriodTwoOrbit,
    pub index_evidence: IndexEvidence,
    pub quasi_connection: QuasiConnection,
    pub transverse_connection: Option<TransverseWitness>,
    pub theta_decomposition: ThetaDecomposition,
    pub ratio: RatioCheck,
    pub closure: ClosureCheck,
    pub conditions: ConditionReport,
    pub gamma_seed: f64,
    pub outer_iterations: usize,
    pub tolerances: Tolerances,
}

impl CycleCertificate {
    pub fn model_built(&self) -> Result<SaddleModel> {
        build_model(&self.model)
    }

    pub fn coeffs_built(&self) -> Result<GlobalMapCoeffs> {
        let mut c = GlobalMapCoeffs::from_spec_raw(&self.coeffs, self.model.dim)?;
        c.flipped = self.coeffs_flipped;
        Ok(c)
    }

    pub fn coeffs2_built(&self) -> Result<Option<GlobalMapCoeffs>> {
        self.coeffs2
            .as_ref()
            .map(|s| GlobalMapCoeffs::from_spec_raw(s, self.model.dim))
            .transpose()
    }

    pub fn curve(&self, model: &SaddleModel, coeffs: &GlobalMapCoeffs) -> Result<ConnectionCurve> {
        match self.mode {
            CycleMode::Symmetric => Ok(ConnectionCurve::Symmetric {
                signs: model
                    .symmetry_signs
                    .clone()
                    .ok_or_else(|| HetdimError::validation("symmetric certificate without symmetry_signs"))?,
            }),
            CycleMode::General => {
                let coeffs2 = self
                    .coeffs2_built()?
                    .ok_or_else(|| HetdimError::validation("general certificate without coeffs2"))?;
                let shift = if self.parameters.mu2_shift_applied {
                    -2.0 * coeffs.c * model.multipliers.lambda.powi(self.k as i32) * coeffs.x_plus
                } else {
                    0.0
                };
                Ok(ConnectionCurve::General { coeffs2, shift })
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReplayCheck {
    pub name: String,
    pub value: f64,
    pub tolerance: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReplayReport {
    pub k: usize,
    pub m: usize,
    pub checks: Vec<ReplayCheck>,
    pub passed: bool,
}

fn below(name: &str, value: f64, tolerance: f64) -> ReplayCheck {
    ReplayCheck {
        name: name.to_string(),
        value,
        tolerance,
        pass: value.is_finite() && value < tolerance,
    }
}

fn above(name: &str, value: f64, tolerance: f64) -> ReplayCheck {
    ReplayCheck {
        name: name.to_string(),
        value,
        tolerance,
        pass: value.is_finite() && value > tolerance,
    }
}

/// Re-runs every check of a certificate from its serialized data.
pub fn replay_certificate(cert: &CycleCertificate) -> Result<ReplayReport> {
    if cert.schema_version != SCHEMA_VERSION {
        return Err(HetdimError::validation(format!(
            "certificate schema {} is not supported (expected {SCHEMA_VERSION})",
            cert.schema_version
        )));
    }
    let model = cert.model_built()?;
    let coeffs = cert.coeffs_built()?;
    let tol = &cert.tolerances;
    // Every check runs at the recorded parameter, not the orbit's copy of it.
    let mut orbit = cert.orbit.clone();
    orbit.mu = cert.parameters.mu;
    let orbit = &orbit;
    if orbit.points.len() != 4 || orbit.points.iter().any(|p| p.dim() != model.dim()) {
        return Err(HetdimError::validation("certificate orbit must hold four points of the model dimension"));
    }
    let mut checks = vec![below(
        "mu_consistent",
        (cert.orbit.mu - cert.parameters.mu).abs(),
        1e-15 * cert.parameters.mu.abs().max(1.0),
    )];

    let closure = forward_closure(&model, &coeffs, orbit)?;
    checks.push(below("closure", closure.max(), tol.closure));

    let scales = IndexScales::new(&model, &coeffs, orbit.k, orbit.m);
    let s = scales.s_value(orbit.eta.0, orbit.eta.1);
    checks.push(below("s_recomputed", (s - cert.s_target).abs(), tol.s_value));
    checks.push(below("s_in_interval", s.abs(), 1.0));

    let spectrum = dense_spectrum(&orbit.chain(&model, &coeffs)?)?;
    let index = spectrum.all().iter().filter(|e| e.norm() > 1.0).count();
    checks.push(below("index_is_2", (index as f64 - 2.0).abs(), 0.5));
    let o_index = fixed_point_index(&model)?;
    checks.push(below("saddle_index_is_1", (o_index as f64 - 1.0).abs(), 0.5));

    let curve = cert.curve(&model, &coeffs)?;
    let qc = quasi_connection(&model, &coeffs, orbit, &curve)?;
    checks.push(below("gap", qc.gap.abs(), tol.gap));
    checks.push(below(
        "t_param",
        (qc.t_param - cert.quasi_connection.t_param).abs() / cert.quasi_connection.t_param.abs().max(1e-12),
        1e-6,
    ));

    let g = model.multipliers.gamma.abs();
    let theta = model.theta();
    let td = &cert.theta_decomposition;
    let predicted = cert.m as f64 / cert.k as f64 - td.c_star / (cert.k as f64 * g.ln());
    checks.push(below("theta_identity", (predicted - theta).abs(), tol.theta_identity));
    checks.push(below("theta_recorded", (theta - cert.parameters.theta).abs(), tol.theta_identity));

    if cert.mode == CycleMode::General {
        let mu2 = curve.mu2(&coeffs.with_mu(orbit.mu), qc.t_param).unwrap_or(f64::NAN);
        let recorded = cert.parameters.mu2.unwrap_or(f64::NAN);
        checks.push(below("mu2", (mu2 - recorded).abs(), 1e-12));
    }

    if let Some(tw) = &cert.transverse_connection {
        let again = verify_transverse_connection(&model, &coeffs, cert)?;
        checks.push(above("transverse_slope", again.slope, tol.slope_min));
        checks.push(below(
            "transverse_iterations",
            (again.iterations_used as f64 - tw.iterations_used as f64).abs(),
            0.5,
        ));
    }
    let passed = checks.iter().all(|c| c.pass);
    Ok(ReplayReport {
        k: cert.k,
        m: cert.m,
        checks,
        passed,
    })
}
