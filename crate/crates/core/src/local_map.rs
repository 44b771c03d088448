//! Iterates of the local map `T0` near the saddle, in direct form and in
//! the cross (boundary-value) form `(x0, yk, z0) -> (xk, y0, zk)`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{HetdimError, Result};
use crate::saddle_model::{SaddleModel, SplitVector};

/// Half-width of the max-norm box where the local map is defined.
pub const VALIDITY_BOX: f64 = 1.0;

pub const CROSS_FORM_TOL: f64 = 1e-12;
pub const CROSS_FORM_MAX_ITER: usize = 200;

/// One step of `T0` without the domain check, with its exact Jacobian.
pub fn step_unchecked(model: &SaddleModel, p: &SplitVector) -> (SplitVector, DMatrix<f64>) {
    let m = &model.multipliers;
    let (f1, f2, f3) = model.nonlinear_terms(p);
    let image = SplitVector {
        x: m.lambda * p.x + f1,
        y: m.gamma * p.y + f2,
        z: p
            .z
            .iter()
            .zip(&m.strong)
            .zip(&f3)
            .map(|((z, s), f)| s * z + f)
            .collect(),
    };
    let mut jac = model.nonlinear_jacobian(p);
    jac[(0, 0)] += m.lambda;
    jac[(1, 1)] += m.gamma;
    for (i, s) in m.strong.iter().enumerate() {
        jac[(2 + i, 2 + i)] += s;
    }
    (image, jac)
}

fn check_box(p: &SplitVector, step: usize) -> Result<()> {
    if !p.is_finite() || p.max_norm() > VALIDITY_BOX {
        return Err(HetdimError::Domain {
            step,
            detail: format!("max-norm {:.6e} exceeds {}", p.max_norm(), VALIDITY_BOX),
        });
    }
    Ok(())
}

pub fn apply_t0(model: &SaddleModel, p: &SplitVector) -> Result<(SplitVector, DMatrix<f64>)> {
    check_box(p, 0)?;
    Ok(step_unchecked(model, p))
}

/// `max ||R(T0(p)) - T0(R(p))||` over `points`; needs a symmetric model.
pub fn symmetry_commutation_defect(model: &SaddleModel, points: &[SplitVector]) -> Result<f64> {
    let mut worst = 0.0f64;
    for p in points {
        let a = model.apply_symmetry(&step_unchecked(model, p).0)?;
        let b = step_unchecked(model, &model.apply_symmetry(p)?).0;
        worst = worst.max(a.dist_max(&b));
    }
    Ok(worst)
}

#[derive(Debug, Clone)]
pub struct LocalOrbit {
    pub end: SplitVector,
    /// Jacobian of the k-fold composition at the start point.
    pub jacobian: DMatrix<f64>,
    /// Iterates `p_0, ..., p_k`.
    pub trajectory: Vec<SplitVector>,
    /// Step Jacobians `DT0(p_0), ..., DT0(p_{k-1})`.
    pub step_jacobians: Vec<DMatrix<f64>>,
}

/// `k` iterates of `T0`; every iterate must stay in the validity box.
pub fn iterate_local(model: &SaddleModel, p: &SplitVector, k: usize) -> Result<LocalOrbit> {
    check_box(p, 0)?;
    let n = p.dim();
    let mut jacobian = DMatrix::identity(n, n);
    let mut trajectory = Vec::with_capacity(k + 1);
    let mut step_jacobians = Vec::with_capacity(k);
    let mut cur = p.clone();
    trajectory.push(cur.clone());
    for j in 1..=k {
        let (next, jac) = step_unchecked(model, &cur);
        check_box(&next, j)?;
        jacobian = &jac * &jacobian;
        step_jacobians.push(jac);
        trajectory.push(next.clone());
        cur = next;
    }
    Ok(LocalOrbit {
        end: cur,
        jacobian,
        trajectory,
        step_jacobians,
    })
}

/// Forward iteration that only tracks the end point and Jacobian.
pub fn iterate_end(
    model: &SaddleModel,
    p: &SplitVector,
    k: usize,
) -> Result<(SplitVector, DMatrix<f64>)> {
    check_box(p, 0)?;
    let n = p.dim();
    let mut jacobian = DMatrix::identity(n, n);
    let mut cur = p.clone();
    for j in 1..=k {
        let (next, jac) = step_unchecked(model, &cur);
        check_box(&next, j)?;
        jacobian = &jac * &jacobian;
        cur = next;
    }
    Ok((cur, jacobian))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CrossFormResult {
    pub x_k: f64,
    pub y_0: f64,
    pub z_k: Vec<f64>,
    pub residual: f64,
    pub iterations: usize,
    /// Derivative of `(x_k, y_0, z_k)` with respect to `(x0, yk, z0)`.
    #[serde(skip)]
    pub jacobian: Option<DMatrix<f64>>,
}

impl CrossFormResult {
    pub fn start(&self, x0: f64, z0: &[f64]) -> SplitVector {
        SplitVector::new(x0, self.y_0, z0.to_vec())
    }
}

/// Finds `y0` such that `T0^k(x0, y0, z0)` has y-coordinate `yk`, by
/// Newton shooting on the scalar y-equation with step halving whenever a
/// trial orbit leaves the box.
pub fn solve_cross_form(
    model: &SaddleModel,
    x0: f64,
    yk: f64,
    z0: &[f64],
    k: usize,
) -> Result<CrossFormResult> {
    let gamma = model.multipliers.gamma;
    let mut y0 = yk / gamma.powi(k as i32);
    let start = |y: f64| SplitVector::new(x0, y, z0.to_vec());
    let mut best = iterate_end(model, &start(y0), k)?;
    let mut residual = best.0.y - yk;
    let scale = yk.abs().max(1.0);
    let mut iterations = 0;
    let mut polished = false;
    while iterations < CROSS_FORM_MAX_ITER {
        if residual.abs() <= CROSS_FORM_TOL * scale {
            // One extra step usually buys the last few digits.
            if polished || residual == 0.0 {
                break;
            }
            polished = true;
        }
        iterations += 1;
        let slope = best.1[(1, 1)];
        if slope == 0.0 || !slope.is_finite() {
            break;
        }
        let full = -residual / slope;
        let mut damping = 1.0;
        let mut accepted = false;
        while damping > 1e-6 {
            let trial_y = y0 + damping * full;
            if let Ok(trial) = iterate_end(model, &start(trial_y), k) {
                let r = trial.0.y - yk;
                if r.abs() < residual.abs() || (polished && r.abs() <= residual.abs()) {
                    y0 = trial_y;
                    residual = r;
                    best = trial;
                    accepted = true;
                    break;
                }
            }
            damping *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    if residual.abs() > CROSS_FORM_TOL * scale {
        return Err(HetdimError::NonConvergence {
            solver: "cross-form shooting",
            iterations,
            residual: residual.abs(),
        });
    }
    let (end, j) = best;
    Ok(CrossFormResult {
        x_k: end.x,
        y_0: y0,
        z_k: end.z.clone(),
        residual: residual.abs(),
        iterations,
        jacobian: Some(cross_jacobian(&j)),
    })
}

/// Converts the forward Jacobian `d(xk, yk, zk)/d(x0, y0, z0)` into the
/// cross-form Jacobian `d(xk, y0, zk)/d(x0, yk, z0)`.
pub fn cross_jacobian(forward: &DMatrix<f64>) -> DMatrix<f64> {
    let n = forward.nrows();
    let jyy = forward[(1, 1)];
    // dy0/d(x0, yk, z0)
    let mut dy0 = vec![0.0; n];
    for (c, d) in dy0.iter_mut().enumerate() {
        *d = if c == 1 {
            1.0 / jyy
        } else {
            -forward[(1, c)] / jyy
        };
    }
    let mut out = DMatrix::zeros(n, n);
    for c in 0..n {
        out[(1, c)] = dy0[c];
    }
    for r in (0..n).filter(|r| *r != 1) {
        for c in 0..n {
            let direct = if c == 1 { 0.0 } else { forward[(r, c)] };
            out[(r, c)] = direct + forward[(r, 1)] * dy0[c];
        }
    }
    out
}

/// `(||dx_k/dz0|| / lambda0^k, ||dz_k/dz0|| / lambda0^k)` with induced
/// infinity norms.
pub fn strong_derivative_bounds(
    model: &SaddleModel,
    p: &SplitVector,
    k: usize,
) -> Result<(f64, f64)> {
    let (_, j) = iterate_end(model, p, k)?;
    let n = p.dim();
    let scale = model.multipliers.lambda0.powi(k as i32);
    let dx_dz: f64 = (2..n).map(|c| j[(0, c)].abs()).sum();
    let dz_dz = (2..n)
        .map(|r| (2..n).map(|c| j[(r, c)].abs()).sum::<f64>())
        .fold(0.0, f64::max);
    Ok((dx_dz / scale, dz_dz / scale))
}
