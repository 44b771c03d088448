//! Heterodimensional cycles: a period-2 orbit of index 2 whose
//! strong-stable leaf meets the unstable manifold of the saddle.
//!
//! `theta` is realized through `gamma` with `lambda` fixed. The outer
//! secant iteration moves `gamma` until the quasi-connection gap vanishes;
//! the inner solve fixes `mu` and the orbit from the index target `s`.

use log::{debug, info};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::certificate::{
    CycleCertificate, CycleMode, CycleParameters, IndexEvidence, RatioCheck, Tolerances,
    ThetaDecomposition, SCHEMA_VERSION,
};
use super::index::{dense_spectrum, fixed_point_index};
use super::period2::{forward_closure, solve_period2, solve_period2_targeted, PeriodTwoOrbit};
use super::transverse::verify_transverse_connection;
use crate::cone_analysis::{frame_slopes, integrate_leaf, pull_back_z_frame, JacobianChain};
use crate::error::{HetdimError, Result};
use crate::global_map::{t1_offset, t1_unchecked, GlobalMapCoeffs};
use crate::local_map::iterate_local;
use crate::saddle_model::{check_conditions, reflect, SaddleModel, SplitVector};

pub const OUTER_MAX_ITER: usize = 40;
pub const GAP_TOL: f64 = 1e-8;

/// Slopes of the strong-stable field at `p` near `Q02`, from the z-frame
/// pulled back along `p`'s own period: `m` local steps, `T1`, `k` local
/// steps, `T1`.
pub fn period_leaf_slopes(
    model: &SaddleModel,
    coeffs: &GlobalMapCoeffs,
    k: usize,
    m: usize,
    p: &SplitVector,
) -> Result<DMatrix<f64>> {
    let first = iterate_local(model, p, m)?;
    let (q, j1) = t1_unchecked(coeffs, &first.end);
    let second = iterate_local(model, &q, k)?;
    let (_, j2) = t1_unchecked(coeffs, &second.end);
    let mut factors = first.step_jacobians;
    factors.push(j1);
    factors.extend(second.step_jacobians);
    factors.push(j2);
    let chain = JacobianChain {
        factors,
        stays: vec![m, k],
    };
    frame_slopes(&pull_back_z_frame(&chain, p.dim())?)
}

/// The image of the local unstable manifold that the leaf must meet.
#[derive(Debug, Clone)]
pub enum ConnectionCurve {
    /// `R T1 R (0, -y- - t, 0)`.
    Symmetric { signs: Vec<f64> },
    /// `T2 (0, y2- + t', 0)` with `t' = b1 t / b2`; the y-component is
    /// pinned to the symmetric form plus `shift`, which fixes `mu2`.
    General { coeffs2: GlobalMapCoeffs, shift: f64 },
}

impl ConnectionCurve {
    pub fn point(&self, coeffs: &GlobalMapCoeffs, t: f64) -> SplitVector {
        let zeros = vec![0.0; coeffs.nz()];
        match self {
            ConnectionCurve::Symmetric { signs } => {
                reflect(signs, &t1_offset(coeffs, 0.0, t, &zeros).0)
            }
            ConnectionCurve::General { coeffs2, shift } => {
                let tp = coeffs.b * t / coeffs2.b;
                let p = t1_offset(coeffs2, 0.0, tp, &zeros).0;
                let y = -coeffs.mu - coeffs.d * t * t - coeffs.e3 * t.powi(3) + shift;
                SplitVector::new(p.x, y, p.z)
            }
        }
    }

    /// `mu2` of the second map as reported, i.e. with the orientation of the
    /// first map: minus the plain constant term that puts `T2`'s curve at
    /// the pinned y.
    pub fn mu2(&self, coeffs: &GlobalMapCoeffs, t: f64) -> Option<f64> {
        match self {
            ConnectionCurve::Symmetric { .. } => None,
            ConnectionCurve::General { coeffs2, .. } => {
                let tp = coeffs.b * t / coeffs2.b;
                let y = self.point(coeffs, t).y;
                let plain = y - coeffs2.d * tp * tp - coeffs2.e3 * tp.powi(3);
                Some(-plain)
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QuasiConnection {
    pub t_param: f64,
    /// `y_leaf - y_curve` at matched `(x, z)`.
    pub gap: f64,
    pub leaf_point: SplitVector,
    pub curve_point: SplitVector,
    pub secant_iterations: usize,
}

/// Intersects the strong-stable leaf through `Q02` with the curve: solves
/// `x_leaf(z_curve(t)) = x_curve(t)` by secant iteration in `t` and reports
/// the remaining y-gap.
pub fn quasi_connection(
    model: &SaddleModel,
    coeffs: &GlobalMapCoeffs,
    orbit: &PeriodTwoOrbit,
    curve: &ConnectionCurve,
) -> Result<QuasiConnection> {
    let c = coeffs.with_mu(orbit.mu);
    let base = orbit.q02().clone();
    let eval = |t: f64| -> Result<(f64, SplitVector, SplitVector)> {
        let cp = curve.point(&c, t);
        let path = integrate_leaf(&base, &cp.z, |p| period_leaf_slopes(model, &c, orbit.k, orbit.m, p))?;
        let lp = path.last().cloned().expect("leaf path is non-empty");
        Ok((lp.x - cp.x, lp, cp))
    };
    let mut t0 = (base.x - c.x_plus) / c.b;
    let mut f0 = eval(t0)?.0;
    let mut t1 = t0 + 1e-6 * t0.abs().max(1e-3);
    let mut last = eval(t1)?;
    let mut iterations = 0;
    while iterations < 30 && last.0 != 0.0 {
        iterations += 1;
        let denom = last.0 - f0;
        if denom == 0.0 {
            break;
        }
        let t2 = t1 - last.0 * (t1 - t0) / denom;
        t0 = t1;
        f0 = last.0;
        t1 = t2;
        last = eval(t1)?;
        if (t1 - t0).abs() <= 1e-16 * t1.abs().max(1e-3) || last.0.abs() < 1e-16 {
            break;
        }
    }
    if last.0.abs() > 1e-12 {
        return Err(HetdimError::NonConvergence {
            solver: "leaf/curve intersection",
            iterations,
            residual: last.0.abs(),
        });
    }
    let (_, lp, cp) = last;
    Ok(QuasiConnection {
        t_param: t1,
        gap: lp.y - cp.y,
        leaf_point: lp,
        curve_point: cp,
        secant_iterations: iterations,
    })
}

struct InnerSolution {
    model: SaddleModel,
    orbit: PeriodTwoOrbit,
    qc: QuasiConnection,
}

fn inner_solve(
    model: &SaddleModel,
    coeffs: &GlobalMapCoeffs,
    curve: &ConnectionCurve,
    k: usize,
    m: usize,
    s_target: f64,
    gamma: f64,
    seed: Option<&PeriodTwoOrbit>,
) -> Result<InnerSolution> {
    let mg = model.with_gamma(gamma)?;
    let orbit = solve_period2_targeted(&mg, coeffs, k, m, s_target, seed)?;
    let qc = quasi_connection(&mg, coeffs, &orbit, curve)?;
    Ok(InnerSolution { model: mg, orbit, qc })
}

/// Secant iteration in `gamma` on the quasi-connection gap.
fn solve_gap(
    model: &SaddleModel,
    coeffs: &GlobalMapCoeffs,
    curve: &ConnectionCurve,
    k: usize,
    m: usize,
    s_target: f64,
    gamma0: f64,
) -> Result<(InnerSolution, usize)> {
    let mut g0 = gamma0;
    let mut a = inner_solve(model, coeffs, curve, k, m, s_target, g0, None)?;
    let mut g1 = gamma0 * (1.0 + 1e-7);
    let mut b = inner_solve(model, coeffs, curve, k, m, s_target, g1, Some(&a.orbit))?;
    let mut iterations = 0;
    while iterations < OUTER_MAX_ITER {
        iterations += 1;
        debug!("(k,m)=({k},{m}) gamma={g1:.15} gap={:e}", b.qc.gap);
        if b.qc.gap.abs() < 1e-16 {
            break;
        }
        let denom = b.qc.gap - a.qc.gap;
        if denom == 0.0 {
            break;
        }
        let g2 = g1 - b.qc.gap * (g1 - g0) / denom;
        if (g2 - g1).abs() <= 4.0 * f64::EPSILON * g1.abs() {
            break;
        }
        let c = inner_solve(model, coeffs, curve, k, m, s_target, g2, Some(&b.orbit))?;
        g0 = g1;
        g1 = g2;
        a = b;
        b = c;
    }
    if b.qc.gap.abs() >= GAP_TOL {
        return Err(HetdimError::NonConvergence {
            solver: "gamma secant on quasi-connection gap",
            iterations,
            residual: b.qc.gap.abs(),
        });
    }
    Ok((b, iterations))
}

fn gamma_seed(model: &SaddleModel, ratio: f64, k: usize, m: usize) -> f64 {
    let l = model.multipliers.lambda.abs();
    (ratio / l.powi(k as i32)).powf(1.0 / m as f64)
}

fn build_certificate(
    mode: CycleMode,
    coeffs: &GlobalMapCoeffs,
    coeffs2: Option<&GlobalMapCoeffs>,
    curve: &ConnectionCurve,
    sol: InnerSolution,
    s_target: f64,
    gamma0: f64,
    outer_iterations: usize,
    target_ratio: f64,
    mu2_shift_applied: bool,
) -> Result<CycleCertificate> {
    let InnerSolution { model, orbit, qc } = sol;
    let (k, m) = (orbit.k, orbit.m);
    let chain = orbit.chain(&model, coeffs)?;
    let spectrum = dense_spectrum(&chain)?;
    let all = spectrum.all();
    let index = all.iter().filter(|e| e.norm() > 1.0).count();
    if all.iter().any(|e| (e.norm() - 1.0).abs() < super::index::UNIT_CIRCLE_GAP) {
        return Err(HetdimError::numeric("orbit multiplier on the unit circle"));
    }
    if index != 2 {
        return Err(HetdimError::numeric(format!(
            "solved orbit has index {index}, expected 2 (s_target={s_target})"
        )));
    }
    let o_index = fixed_point_index(&model)?;
    let mult = &model.multipliers;
    let (l, g) = (mult.lambda.abs(), mult.gamma.abs());
    let c_star = k as f64 * l.ln() + m as f64 * g.ln();
    let theta = model.theta();
    let theta_predicted = m as f64 / k as f64 - c_star / (k as f64 * g.ln());
    let lkgm = l.powi(k as i32) * g.powi(m as i32);
    let c_mu = coeffs.with_mu(orbit.mu);
    let closure = forward_closure(&model, coeffs, &orbit)?;
    let mu2 = curve.mu2(&c_mu, qc.t_param);
    let conditions = check_conditions(&model, coeffs, coeffs2);
    let cert = CycleCertificate {
        schema_version: SCHEMA_VERSION,
        mode,
        k,
        m,
        s_target,
        model: model.spec.clone(),
        coeffs: coeffs.to_spec(),
        coeffs_flipped: coeffs.flipped,
        coeffs2: coeffs2.map(|c| c.to_spec()),
        parameters: CycleParameters {
            mu: orbit.mu,
            mu2,
            theta,
            gamma: mult.gamma,
            mu2_shift_applied,
        },
        index_evidence: IndexEvidence {
            eigenvalues: all.iter().map(|e| [e.re, e.im]).collect(),
            moduli: all.iter().map(|e| e.norm()).collect(),
            index,
            fixed_point_index: o_index,
        },
        quasi_connection: qc,
        transverse_connection: None,
        theta_decomposition: ThetaDecomposition {
            m_over_k: m as f64 / k as f64,
            c_star,
            theta_predicted,
            identity_residual: (theta_predicted - theta).abs(),
        },
        ratio: RatioCheck {
            lambda_k_gamma_m: lkgm,
            target: target_ratio,
            rel_error: ((lkgm - target_ratio) / target_ratio).abs(),
        },
        closure,
        conditions,
        gamma_seed: gamma0,
        outer_iterations,
        tolerances: Tolerances::default(),
        orbit,
    };
    Ok(cert)
}

/// Symmetric cycle for itinerary `(k, m)` with index target `s_target`.
pub fn solve_hetdim_symmetric(
    model: &SaddleModel,
    coeffs: &GlobalMapCoeffs,
    k: usize,
    m: usize,
    s_target: f64,
) -> Result<CycleCertificate> {
    let signs = model
        .symmetry_signs
        .clone()
        .ok_or_else(|| HetdimError::validation("symmetric solve needs symmetry_signs"))?;
    let cxy = coeffs.c * coeffs.x_plus * coeffs.y_minus;
    if cxy <= 0.0 {
        return Err(HetdimError::validation(format!(
            "symmetric solve requires c*x+*y- > 0, got {cxy:e}"
        )));
    }
    if !(s_target > -1.0 && s_target < 1.0) {
        return Err(HetdimError::validation("s_target must lie in (-1, 1)"));
    }
    let ratio = 2.0 * coeffs.y_minus / (coeffs.c * coeffs.x_plus);
    let gamma0 = gamma_seed(model, ratio, k, m);
    let curve = ConnectionCurve::Symmetric { signs };
    let (sol, iters) = solve_gap(model, coeffs, &curve, k, m, s_target, gamma0)?;
    info!(
        "symmetric cycle (k,m)=({k},{m}): mu={:e} gamma={:.12} gap={:e}",
        sol.orbit.mu, sol.model.multipliers.gamma, sol.qc.gap
    );
    let mut cert = build_certificate(
        CycleMode::Symmetric,
        coeffs,
        None,
        &curve,
        sol,
        s_target,
        gamma0,
        iters,
        ratio,
        false,
    )?;
    cert.transverse_connection = Some(verify_transverse_connection(&cert.model_built()?, coeffs, &cert)?);
    Ok(cert)
}

/// General cycle with two independent global maps sharing `x+`.
pub fn solve_hetdim_general(
    model: &SaddleModel,
    coeffs1: &GlobalMapCoeffs,
    coeffs2: &GlobalMapCoeffs,
    k: usize,
    m: usize,
    s_target: f64,
) -> Result<CycleCertificate> {
    let gap = (coeffs1.x_plus - coeffs2.x_plus).abs();
    if gap > 1e-12 {
        return Err(HetdimError::validation(format!(
            "C4 violated: x+ differs between the global maps by {gap:e}"
        )));
    }
    if !(s_target > -1.0 && s_target < 1.0) {
        return Err(HetdimError::validation("s_target must lie in (-1, 1)"));
    }
    let mut ratio = 2.0 * coeffs1.y_minus / (coeffs1.c * coeffs1.x_plus);
    let mut shift = 0.0;
    let shifted = ratio < 0.0;
    if shifted {
        // Move the second curve by -2 c1 lambda^k x+ so the balance reads
        // lambda^k gamma^m = -2 y1- / (c1 x+).
        let lk = model.multipliers.lambda.powi(k as i32);
        shift = -2.0 * coeffs1.c * lk * coeffs1.x_plus;
        ratio = -ratio;
        info!("2y1-/(c1 x+) < 0: applying the mu2 shift {:e}", -shift);
    }
    let gamma0 = gamma_seed(model, ratio, k, m);
    let curve = ConnectionCurve::General {
        coeffs2: coeffs2.clone(),
        shift,
    };
    let (sol, iters) = solve_gap(model, coeffs1, &curve, k, m, s_target, gamma0)?;
    let mut cert = build_certificate(
        CycleMode::General,
        coeffs1,
        Some(coeffs2),
        &curve,
        sol,
        s_target,
        gamma0,
        iters,
        ratio,
        shifted,
    )?;
    cert.transverse_connection = Some(verify_transverse_connection(&cert.model_built()?, coeffs1, &cert)?);
    Ok(cert)
}

/// Gap of the quasi-connection after moving `mu` to `mu + j h` for
/// `j = 0..=steps`, re-solving the period-2 orbit at each fixed `mu`.
pub fn gap_profile(
    model: &SaddleModel,
    coeffs: &GlobalMapCoeffs,
    cert: &CycleCertificate,
    curve: &ConnectionCurve,
    h: f64,
    steps: usize,
) -> Result<Vec<f64>> {
    let mut seed = cert.orbit.clone();
    let mut out = vec![];
    for j in 0..=steps {
        let mu = cert.orbit.mu + j as f64 * h;
        let o = solve_period2(model, coeffs, cert.k, cert.m, mu, Some(&seed))?;
        out.push(quasi_connection(model, coeffs, &o, curve)?.gap);
        seed = o;
    }
    Ok(out)
}
