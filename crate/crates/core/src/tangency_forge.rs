//! Secondary homoclinic tangencies: the curve `T1(W^u_loc)` is carried once
//! more around the saddle by `T1 T0^k` and made tangent to `W^s_loc = {y=0}`.
//!
//! The leading-order system in `(X, Y, mu)` is solved first; the tangency is
//! then polished on the true composed map in `(tau, mu)`, where `tau` is the
//! offset along `W^u_loc` from `(0, y-, 0)`.

use std::io::Write;

use log::{debug, warn};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{HetdimError, Result};
use crate::global_map::{t1_offset, GlobalMapCoeffs};
use crate::local_map::{iterate_end, solve_cross_form};
use crate::numerics::{newton, NewtonOptions};
use crate::par::par_map;
use crate::saddle_model::{SaddleModel, SplitVector};

pub const MAX_STAGE: usize = 2;
const SCAN_POINTS: usize = 400;

/// One piece of a composed map: `T1` or `T0^k`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Piece {
    Global,
    Local(usize),
}

/// Applies `pieces` to `(0, y- + tau, 0)`; the first piece must be `T1`,
/// which is evaluated with the exact offset `tau`. Returns the image and
/// the derivative of the image with respect to the start point.
fn compose(
    model: &SaddleModel,
    coeffs: &GlobalMapCoeffs,
    start: &SplitVector,
    tau: Option<f64>,
    pieces: &[Piece],
) -> Result<(SplitVector, DMatrix<f64>)> {
    let n = start.dim();
    let mut p = start.clone();
    let mut jac = DMatrix::identity(n, n);
    for (i, piece) in pieces.iter().enumerate() {
        let (q, j) = match piece {
            Piece::Global => {
                let u = match (i, tau) {
                    (0, Some(t)) => t,
                    _ => p.y - coeffs.y_minus,
                };
                t1_offset(coeffs, p.x, u, &p.z)
            }
            Piece::Local(k) => iterate_end(model, &p, *k)?,
        };
        jac = j * jac;
        p = q;
    }
    Ok((p, jac))
}

fn level1(k: usize) -> Vec<Piece> {
    vec![Piece::Global, Piece::Local(k), Piece::Global]
}

fn level2(k: usize, j: usize) -> Vec<Piece> {
    let mut v = level1(k);
    v.push(Piece::Local(j));
    v.extend(level1(k));
    v
}

fn preimage(coeffs: &GlobalMapCoeffs, tau: f64) -> SplitVector {
    SplitVector::new(0.0, coeffs.y_minus + tau, vec![0.0; coeffs.nz()])
}

/// `y` of the composed map at offset `tau` and its `tau`-derivative.
fn g_and_slope(model: &SaddleModel, coeffs: &GlobalMapCoeffs, pieces: &[Piece], tau: f64) -> Result<(f64, f64, SplitVector)> {
    let (img, j) = compose(model, coeffs, &preimage(coeffs, tau), Some(tau), pieces)?;
    Ok((img.y, j[(1, 1)], img))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CdxCase {
    CdxPos,
    CdxNeg,
}

pub fn case_tag(coeffs: &GlobalMapCoeffs) -> (CdxCase, bool) {
    let cdx = if coeffs.c * coeffs.d * coeffs.x_plus > 0.0 {
        CdxCase::CdxPos
    } else {
        CdxCase::CdxNeg
    };
    (cdx, coeffs.d > 0.0)
}

fn case_string(coeffs: &GlobalMapCoeffs) -> String {
    let (cdx, dpos) = case_tag(coeffs);
    format!(
        "{}/{}",
        if cdx == CdxCase::CdxPos { "cdx_pos" } else { "cdx_neg" },
        if dpos { "d_pos" } else { "d_neg" }
    )
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TangencyBranch {
    pub k: usize,
    /// 1 or 2: the sign of the scaled seed `(U, V) = +-(1, 1)`.
    pub branch: u8,
    /// 1 for a tangency of `T1 T0^k T1`, 2 for the second-stage map.
    pub stage: u8,
    pub j: Option<usize>,
    pub mu_k: f64,
    /// Leading-order solution `(X, Y)` and its `mu`.
    pub xy: (f64, f64),
    pub reduced_mu: f64,
    pub reduced_residual: f64,
    pub tau: f64,
    /// `M`: the tangency point on `T1(W^u_loc)`.
    pub tangency_point: SplitVector,
    /// `M-hat`: its preimage on `W^u_loc`.
    pub preimage: SplitVector,
    /// Image of `M-hat` on `W^s_loc`.
    pub homoclinic_image: SplitVector,
    pub tangency_value: f64,
    pub tangency_derivative: f64,
    pub second_derivative: f64,
    pub transverse_points: Vec<TransverseHomoclinic>,
    /// Offsets of the nearest transverse preimages below and above `tau`.
    pub straddle: (Option<f64>, Option<f64>),
    pub straddle_ok: bool,
    pub c_value: f64,
    pub c_closed_form: f64,
    pub c_sign: i8,
    pub case_tag: String,
    /// `(x+, y-)` of the induced global map near the new tangency.
    pub induced_x_plus: f64,
    pub induced_y_minus: f64,
    /// Landing offset of the `T0^j` excursion for a second-stage branch.
    pub landing_offset: Option<f64>,
}

impl TangencyBranch {
    pub fn induced_product(&self) -> f64 {
        self.c_value * self.induced_x_plus * self.induced_y_minus
    }
}

/// Leading-order system in `(X, Y, mu)`.
fn reduced_residual(model: &SaddleModel, coeffs: &GlobalMapCoeffs, k: usize, v: &[f64; 3]) -> [f64; 3] {
    let (x, y, mu) = (v[0], v[1], v[2]);
    let lk = model.multipliers.lambda.powi(k as i32);
    let gk = model.multipliers.gamma.powi(k as i32);
    let (b, c, d) = (coeffs.b, coeffs.c, coeffs.d);
    [
        mu - (coeffs.y_minus + y) / gk + d * x * x / (b * b),
        mu + c * lk * (coeffs.x_plus + x) + d * y * y,
        c * lk + 4.0 * d * d * gk * x * y / (b * b),
    ]
}

fn solve_reduced(model: &SaddleModel, coeffs: &GlobalMapCoeffs, k: usize, sign: f64) -> Result<([f64; 3], f64)> {
    let lk = model.multipliers.lambda.powi(k as i32);
    let gk = model.multipliers.gamma.powi(k as i32);
    let (b, c, d, xp) = (coeffs.b, coeffs.c, coeffs.d, coeffs.x_plus);
    let root = lk.abs().sqrt() * (c * xp / d).abs().sqrt();
    let (x, y) = match case_tag(coeffs).0 {
        CdxCase::CdxNeg => {
            let y = sign * root;
            (-c * lk * b * b / (4.0 * d * d * gk * y), y)
        }
        CdxCase::CdxPos => {
            let x = sign * b * root;
            (x, -c * lk * b * b / (4.0 * d * d * gk * x))
        }
    };
    let mu = (coeffs.y_minus + y) / gk - d * x * x / (b * b);
    // The unknowns differ by many orders of magnitude; Newton runs on
    // multiples of the seed magnitudes.
    let scale = [x.abs(), y.abs(), mu.abs()];
    let system = |v: &DVector<f64>| -> Result<(DVector<f64>, DMatrix<f64>)> {
        let (xv, yv) = (v[0] * scale[0], v[1] * scale[1]);
        let r = reduced_residual(model, coeffs, k, &[xv, yv, v[2] * scale[2]]);
        let mut j = DMatrix::from_row_slice(
            3,
            3,
            &[
                2.0 * d * xv / (b * b),
                -1.0 / gk,
                1.0,
                c * lk,
                2.0 * d * yv,
                1.0,
                4.0 * d * d * gk * yv / (b * b),
                4.0 * d * d * gk * xv / (b * b),
                0.0,
            ],
        );
        for (col, s) in scale.iter().enumerate() {
            j.column_mut(col).scale_mut(*s);
        }
        Ok((DVector::from_row_slice(&r), j))
    };
    let opts = NewtonOptions {
        tol: 1e-12,
        max_iter: 60,
        row_weights: Some(vec![gk.abs(), 1.0 / lk.abs(), 1.0 / lk.abs()]),
    };
    let seed = DVector::from_vec(vec![x.signum(), y.signum(), mu.signum()]);
    let out = newton(seed, system, &opts).map_err(|e| {
        HetdimError::numeric(format!(
            "secondary tangency k={k} from seed (X,Y,mu)=({x:e},{y:e},{mu:e}): {e}"
        ))
    })?;
    let out_x = DVector::from_vec(vec![out.x[0] * scale[0], out.x[1] * scale[1], out.x[2] * scale[2]]);
    let v = [out_x[0], out_x[1], out_x[2]];
    let r = reduced_residual(model, coeffs, k, &v);
    Ok((v, r.iter().fold(0.0f64, |a, b| a.max(b.abs()))))
}

/// Double root of the composed map's `y` in `(tau, mu)`.
fn polish_tangency(
    model: &SaddleModel,
    coeffs: &GlobalMapCoeffs,
    pieces: &[Piece],
    tau0: f64,
    mu0: f64,
    scale: f64,
) -> Result<(f64, f64)> {
    let eval = |tau: f64, mu: f64| -> Result<(f64, f64)> {
        let (g, gt, _) = g_and_slope(model, &coeffs.with_mu(mu), pieces, tau)?;
        Ok((g, gt))
    };
    let system = |v: &DVector<f64>| -> Result<(DVector<f64>, DMatrix<f64>)> {
        let (tau, mu) = (v[0], v[1]);
        let (g, gt) = eval(tau, mu)?;
        let ht = 1e-6 * tau.abs().max(1e-8);
        let hm = 1e-6 * mu.abs().max(1e-14);
        let (gp, gtp) = eval(tau + ht, mu)?;
        let (gm, gtm) = eval(tau - ht, mu)?;
        let (g_mp, gt_mp) = eval(tau, mu + hm)?;
        let (g_mm, gt_mm) = eval(tau, mu - hm)?;
        let _ = (gp, gm);
        let j = DMatrix::from_row_slice(
            2,
            2,
            &[
                gt,
                (g_mp - g_mm) / (2.0 * hm),
                (gtp - gtm) / (2.0 * ht),
                (gt_mp - gt_mm) / (2.0 * hm),
            ],
        );
        Ok((DVector::from_vec(vec![g, gt]), j))
    };
    // The slope row is weighted by the curvature, so it reads as the relative
    // offset of the critical point. It carries the rounding of `y_k - y-`
    // against a small landing offset, which floors it near 1e-10 when
    // cdx+ > 0.
    let curvature = second_derivative(model, &coeffs.with_mu(mu0), pieces, tau0)?.abs();
    let opts = NewtonOptions {
        tol: 1e-9,
        max_iter: 60,
        row_weights: Some(vec![1.0 / scale, 1.0 / (curvature * tau0.abs()).max(1e-300)]),
    };
    let out = newton(DVector::from_vec(vec![tau0, mu0]), system, &opts)?;
    Ok((out.x[0], out.x[1]))
}

/// `dG_y/dx` at the preimage, by central differences through the composed map.
fn c_coefficient(model: &SaddleModel, coeffs: &GlobalMapCoeffs, pieces: &[Piece], tau: f64) -> Result<f64> {
    let base = preimage(coeffs, tau);
    let at = |dx: f64| -> Result<f64> {
        let mut p = base.clone();
        p.x += dx;
        Ok(compose(model, coeffs, &p, Some(tau), pieces)?.0.y)
    };
    // x-steps are amplified by gamma^k on the way round; shrink until the
    // perturbed points stay in the domain.
    let mut h = 1e-6 * coeffs.mu.abs().max(1e-300);
    let value = loop {
        match (at(h), at(-h)) {
            (Ok(up), Ok(down)) => break (up - down) / (2.0 * h),
            _ if h > 1e-30 => h *= 0.1,
            (Err(e), _) | (_, Err(e)) => return Err(e),
        }
    };
    if value.abs() < 1e-14 {
        return Err(HetdimError::numeric(format!(
            "c coefficient {value:e} too small to fix a sign at tau={tau:e}"
        )));
    }
    Ok(value)
}

fn second_derivative(model: &SaddleModel, coeffs: &GlobalMapCoeffs, pieces: &[Piece], tau: f64) -> Result<f64> {
    let h = 1e-6 * tau.abs().max(1e-8);
    let (_, sp, _) = g_and_slope(model, coeffs, pieces, tau + h)?;
    let (_, sm, _) = g_and_slope(model, coeffs, pieces, tau - h)?;
    Ok((sp - sm) / (2.0 * h))
}

fn branch_record(
    model: &SaddleModel,
    coeffs: &GlobalMapCoeffs,
    k: usize,
    branch: u8,
    stage: u8,
    j: Option<usize>,
    reduced: ([f64; 3], f64),
    tau: f64,
    mu: f64,
) -> Result<TangencyBranch> {
    let c = coeffs.with_mu(mu);
    let pieces = match j {
        Some(j) => level2(k, j),
        None => level1(k),
    };
    let (g, gt, img) = g_and_slope(model, &c, &pieces, tau)?;
    let c_value = c_coefficient(model, &c, &pieces, tau)?;
    let lk = model.multipliers.lambda.powi(k as i32);
    let gk = model.multipliers.gamma.powi(k as i32);
    let y = reduced.0[1];
    Ok(TangencyBranch {
        k,
        branch,
        stage,
        j,
        mu_k: mu,
        xy: (reduced.0[0], reduced.0[1]),
        reduced_mu: reduced.0[2],
        reduced_residual: reduced.1,
        tau,
        tangency_point: t1_offset(&c, 0.0, tau, &vec![0.0; c.nz()]).0,
        preimage: preimage(&c, tau),
        homoclinic_image: img.clone(),
        tangency_value: g,
        tangency_derivative: gt,
        second_derivative: second_derivative(model, &c, &pieces, tau)?,
        transverse_points: vec![],
        straddle: (None, None),
        straddle_ok: false,
        c_value,
        c_closed_form: coeffs.a * coeffs.c * lk + 2.0 * coeffs.c * coeffs.d * gk * y,
        c_sign: if c_value > 0.0 { 1 } else { -1 },
        case_tag: case_string(coeffs),
        induced_x_plus: img.x,
        induced_y_minus: coeffs.y_minus + tau,
        landing_offset: None,
    })
}

/// Leading-order splitting of the secondary tangency at stay `k`:
/// `y- gamma^-k` when `c d x+ < 0`, `-c x+ lambda^k` otherwise.
pub fn leading_splitting(model: &SaddleModel, coeffs: &GlobalMapCoeffs, k: usize) -> f64 {
    match case_tag(coeffs).0 {
        CdxCase::CdxNeg => coeffs.y_minus * model.multipliers.gamma.powi(-(k as i32)),
        CdxCase::CdxPos => -coeffs.c * coeffs.x_plus * model.multipliers.lambda.powi(k as i32),
    }
}

/// Both secondary tangencies with stay number `k`.
pub fn solve_secondary_tangency(
    model: &SaddleModel,
    coeffs: &GlobalMapCoeffs,
    k: usize,
) -> Result<[TangencyBranch; 2]> {
    if !k.is_multiple_of(2) || k < coeffs.k_star(model) {
        return Err(HetdimError::validation(format!(
            "k={k} must be even and at least k*={}",
            coeffs.k_star(model)
        )));
    }
    let solve = |branch: u8| -> Result<TangencyBranch> {
        let sign = if branch == 1 { 1.0 } else { -1.0 };
        let reduced = solve_reduced(model, coeffs, k, sign)?;
        let [x, _, mu] = reduced.0;
        let scale = model.multipliers.lambda.powi(k as i32).abs();
        let (tau, mu) = polish_tangency(model, coeffs, &level1(k), x / coeffs.b, mu, scale)?;
        branch_record(model, coeffs, k, branch, 1, None, reduced, tau, mu)
    };
    Ok([solve(1)?, solve(2)?])
}

pub fn secondary_c_coefficient(model: &SaddleModel, coeffs: &GlobalMapCoeffs, branch: &TangencyBranch) -> Result<f64> {
    let pieces = match branch.j {
        Some(j) => level2(branch.k, j),
        None => level1(branch.k),
    };
    c_coefficient(model, &coeffs.with_mu(branch.mu_k), &pieces, branch.tau)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TransverseHomoclinic {
    /// Stay number of the extra excursion; `None` for `T1(W^u_loc) ∩ {y=0}`.
    pub k: Option<usize>,
    pub tau: f64,
    /// The point on `T1(W^u_loc)`.
    pub point: SplitVector,
    /// `|d y_0 / d tau|` at the intersection.
    pub slope: f64,
}

/// Offset `tau` with `y(T1(0, y- + tau, 0)) = target` on the side `sign`.
fn tau_for_height(coeffs: &GlobalMapCoeffs, target: f64, sign: f64) -> Option<f64> {
    let sq = (target - coeffs.mu) / coeffs.d;
    if sq <= 0.0 {
        return None;
    }
    let mut t = sign * sq.sqrt();
    for _ in 0..50 {
        let f = coeffs.mu + coeffs.d * t * t + coeffs.e3 * t.powi(3) - target;
        let df = 2.0 * coeffs.d * t + 3.0 * coeffs.e3 * t * t;
        if df == 0.0 {
            return None;
        }
        let step = f / df;
        t -= step;
        if step.abs() <= 1e-17 * t.abs() {
            break;
        }
    }
    (t * sign > 0.0 && t.abs() < coeffs.delta / 2.0).then_some(t)
}

/// Bisection then Newton on a scalar root of `g` in `[a, b]`.
fn refine_root<F: Fn(f64) -> Result<(f64, f64)>>(g: F, mut a: f64, mut b: f64) -> Result<f64> {
    let (mut ga, _) = g(a)?;
    for _ in 0..200 {
        let mid = 0.5 * (a + b);
        let (gm, _) = g(mid)?;
        if gm == 0.0 {
            return Ok(mid);
        }
        if gm.signum() == ga.signum() {
            a = mid;
            ga = gm;
        } else {
            b = mid;
        }
        if (b - a).abs() <= 1e-16 * a.abs().max(b.abs()) {
            break;
        }
    }
    let mut t = 0.5 * (a + b);
    for _ in 0..3 {
        let (v, d) = g(t)?;
        if d == 0.0 {
            break;
        }
        let next = t - v / d;
        if !(next >= a.min(b) - (b - a).abs() && next <= a.max(b) + (b - a).abs()) {
            break;
        }
        t = next;
    }
    Ok(t)
}

/// Transverse homoclinic points near the tangency region at parameter
/// `mu`: the direct pair `T1(W^u_loc) ∩ {y=0}` when `mu d < 0`, and the
/// points carried once more around by `T1 T0^k'` for each `k'`.
pub fn find_transverse_homoclinics(
    model: &SaddleModel,
    coeffs: &GlobalMapCoeffs,
    mu: f64,
    k_range: &[usize],
) -> Result<Vec<TransverseHomoclinic>> {
    let c = coeffs.with_mu(mu);
    let zeros = vec![0.0; c.nz()];
    let mut out = vec![];
    if mu * c.d < 0.0 {
        for sign in [-1.0, 1.0] {
            if let Some(t) = tau_for_height(&c, 0.0, sign) {
                let slope = (2.0 * c.d * t + 3.0 * c.e3 * t * t).abs();
                out.push(TransverseHomoclinic {
                    k: None,
                    tau: t,
                    point: t1_offset(&c, 0.0, t, &zeros).0,
                    slope,
                });
            }
        }
    }
    let g = model.multipliers.gamma;
    let h = c.delta / 2.0;
    for &kk in k_range {
        let pieces = level1(kk);
        let gk = g.powi(-(kk as i32));
        for sign in [-1.0, 1.0] {
            let ys: Vec<f64> = (1..SCAN_POINTS)
                .map(|i| -h + 2.0 * h * i as f64 / SCAN_POINTS as f64)
                .collect();
            let taus: Vec<Option<f64>> = ys
                .iter()
                .map(|y| tau_for_height(&c, gk * (c.y_minus + y), sign))
                .collect();
            let vals: Vec<Option<f64>> = taus
                .iter()
                .map(|t| t.and_then(|t| g_and_slope(model, &c, &pieces, t).ok().map(|r| r.0)))
                .collect();
            for i in 0..vals.len() - 1 {
                let (Some(a), Some(b)) = (vals[i], vals[i + 1]) else { continue };
                if a.signum() == b.signum() {
                    continue;
                }
                let (ta, tb) = (taus[i].unwrap(), taus[i + 1].unwrap());
                let root = refine_root(
                    |t| g_and_slope(model, &c, &pieces, t).map(|r| (r.0, r.1)),
                    ta,
                    tb,
                );
                match root {
                    Ok(t) => {
                        let (_, slope, _) = g_and_slope(model, &c, &pieces, t)?;
                        if slope.abs() > 1e-6 {
                            out.push(TransverseHomoclinic {
                                k: Some(kk),
                                tau: t,
                                point: t1_offset(&c, 0.0, t, &zeros).0,
                                slope: slope.abs(),
                            });
                        }
                    }
                    Err(e) => warn!("transverse point k'={kk} dropped: {e}"),
                }
            }
        }
    }
    out.sort_by(|a, b| a.tau.partial_cmp(&b.tau).unwrap_or(std::cmp::Ordering::Equal));
    Ok(out)
}

/// Critical point of the composed map's `y` along `W^u_loc` near `tau`.
fn critical_point(model: &SaddleModel, coeffs: &GlobalMapCoeffs, pieces: &[Piece], tau: f64) -> Result<f64> {
    let mut t = tau;
    for _ in 0..50 {
        let (_, s, _) = g_and_slope(model, coeffs, pieces, t)?;
        let curv = second_derivative(model, coeffs, pieces, t)?;
        if curv == 0.0 {
            break;
        }
        let step = s / curv;
        t -= step;
        if step.abs() <= 1e-15 * t.abs() {
            break;
        }
    }
    Ok(t)
}

/// Roots of the level-1 map on either side of its critical point near
/// `tau_crit`; present when the parabola dips below `{y=0}`.
fn near_pair(
    model: &SaddleModel,
    coeffs: &GlobalMapCoeffs,
    k: usize,
    tau_crit: f64,
) -> Result<Vec<TransverseHomoclinic>> {
    let pieces = level1(k);
    let zeros = vec![0.0; coeffs.nz()];
    let f = |t: f64| g_and_slope(model, coeffs, &pieces, t).map(|r| (r.0, r.1));
    let t = critical_point(model, coeffs, &pieces, tau_crit)?;
    let (gmin, _) = f(t)?;
    let mut out = vec![];
    for dir in [-1.0, 1.0] {
        let mut width = 1e-12 * t.abs().max(1e-8);
        let mut found = None;
        for _ in 0..200 {
            let probe = t + dir * width;
            match f(probe) {
                Ok((v, _)) if v.signum() != gmin.signum() => {
                    found = Some(probe);
                    break;
                }
                Ok(_) => width *= 1.5,
                Err(_) => break,
            }
        }
        if let Some(p) = found {
            let root = refine_root(f, t, p)?;
            let (_, slope) = f(root)?;
            if slope.abs() > 1e-6 {
                out.push(TransverseHomoclinic {
                    k: Some(k),
                    tau: root,
                    point: t1_offset(coeffs, 0.0, root, &zeros).0,
                    slope: slope.abs(),
                });
            }
        }
    }
    Ok(out)
}

/// Nearest transverse preimages below and above `tau` (pairing by nearest
/// y-coordinate on `W^u_loc`).
fn straddle(points: &[TransverseHomoclinic], tau: f64) -> (Option<f64>, Option<f64>) {
    let tol = 1e-14 * tau.abs().max(1e-12);
    let below = points
        .iter()
        .map(|p| p.tau)
        .filter(|t| *t < tau - tol)
        .fold(None, |acc: Option<f64>, t| Some(acc.map_or(t, |a| a.max(t))));
    let above = points
        .iter()
        .map(|p| p.tau)
        .filter(|t| *t > tau + tol)
        .fold(None, |acc: Option<f64>, t| Some(acc.map_or(t, |a| a.min(t))));
    (below, above)
}

fn transverse_range(model: &SaddleModel, coeffs: &GlobalMapCoeffs, k: usize) -> Vec<usize> {
    (coeffs.k_star(model)..=k + 8).collect()
}

fn attach_transverse(
    model: &SaddleModel,
    coeffs: &GlobalMapCoeffs,
    branch: &mut TangencyBranch,
    extra: Vec<TransverseHomoclinic>,
) -> Result<()> {
    let mut pts = find_transverse_homoclinics(model, coeffs, branch.mu_k, &transverse_range(model, coeffs, branch.k))?;
    pts.extend(extra);
    pts.sort_by(|a, b| a.tau.partial_cmp(&b.tau).unwrap_or(std::cmp::Ordering::Equal));
    pts.dedup_by(|a, b| (a.tau - b.tau).abs() <= 1e-13 * a.tau.abs().max(1e-12));
    branch.straddle = straddle(&pts, branch.tau);
    branch.straddle_ok = branch.straddle.0.is_some() && branch.straddle.1.is_some();
    branch.transverse_points = pts;
    Ok(())
}

/// The second-stage map `T1 T0^k T1 T0^j T1 T0^k T1`, parametrized by the
/// offset `eta` at which the excursion `T0^j` lands in `Pi_1`. Shooting in
/// `tau` directly would amplify rounding by `gamma^(2k+j)`; here the `T0^j`
/// leg is a cross-form boundary value problem and every piece is well
/// conditioned.
struct StageTwo<'a> {
    model: &'a SaddleModel,
    coeffs: &'a GlobalMapCoeffs,
    k: usize,
    j: usize,
    side: f64,
    /// Vertex of the first-stage parabola, the start of the `tau` bracket.
    vertex: f64,
}

struct StageTwoPoint {
    tau: f64,
    image: SplitVector,
    jacobian: DMatrix<f64>,
}

impl StageTwo<'_> {
    fn eval(&self, eta: f64, mu: f64) -> Result<StageTwoPoint> {
        let c = self.coeffs.with_mu(mu);
        let first = level1(self.k);
        let landing = c.y_minus + eta;
        let mismatch = |t: f64| -> Result<(f64, f64)> {
            let (a, ja) = compose(self.model, &c, &preimage(&c, t), Some(t), &first)?;
            let cf = solve_cross_form(self.model, a.x, landing, &a.z, self.j)?;
            Ok((a.y - cf.y_0, ja[(1, 1)]))
        };
        let (v0, _) = mismatch(self.vertex)?;
        let mut width = 1e-10 * self.vertex.abs().max(1e-8);
        let mut probe = None;
        for _ in 0..400 {
            let t = self.vertex + self.side * width;
            match mismatch(t) {
                Ok((v, _)) if v.signum() != v0.signum() => {
                    probe = Some(t);
                    break;
                }
                Ok(_) => width *= 1.2,
                Err(_) => break,
            }
        }
        let probe = probe.ok_or_else(|| {
            HetdimError::numeric(format!("stage 2: no landing at eta={eta:e} for j={}", self.j))
        })?;
        let tau = refine_root(mismatch, self.vertex, probe)?;
        let (a, ja) = compose(self.model, &c, &preimage(&c, tau), Some(tau), &first)?;
        let cf = solve_cross_form(self.model, a.x, landing, &a.z, self.j)?;
        let start = cf.start(a.x, &a.z);
        let (_, jj) = iterate_end(self.model, &start, self.j)?;
        let b = SplitVector::new(cf.x_k, landing, cf.z_k.clone());
        let (image, jb) = compose(self.model, &c, &b, Some(eta), &first)?;
        Ok(StageTwoPoint {
            tau,
            image,
            jacobian: jb * jj * ja,
        })
    }

    fn value(&self, eta: f64, mu: f64) -> Result<f64> {
        Ok(self.eval(eta, mu)?.image.y)
    }

    fn slope(&self, eta: f64, mu: f64, h: f64) -> Result<f64> {
        Ok((self.value(eta + h, mu)? - self.value(eta - h, mu)?) / (2.0 * h))
    }

    fn curvature(&self, eta: f64, mu: f64, h: f64) -> Result<f64> {
        Ok((self.value(eta + h, mu)? - 2.0 * self.value(eta, mu)? + self.value(eta - h, mu)?) / (h * h))
    }
}

/// Second-stage tangency near a first-stage branch, on the side `side` of
/// the first-stage parabola.
fn second_stage(
    model: &SaddleModel,
    coeffs: &GlobalMapCoeffs,
    first: &TangencyBranch,
    j: usize,
    side: f64,
) -> Result<TangencyBranch> {
    let k = first.k;
    let pieces1 = level1(k);
    // The excursion T0^j returns displaced by lambda^j x_A off W^u_loc; the
    // second pass through the secondary map shifts its value by c_new times
    // that, which mu has to absorb.
    let lj = model.multipliers.lambda.powi(j as i32);
    let hm = 1e-6 * first.mu_k.abs();
    let g_mu = (g_and_slope(model, &coeffs.with_mu(first.mu_k + hm), &pieces1, first.tau)?.0
        - g_and_slope(model, &coeffs.with_mu(first.mu_k - hm), &pieces1, first.tau)?.0)
        / (2.0 * hm);
    let mu_seed = first.mu_k - first.c_value * lj * first.induced_x_plus / g_mu;
    let vertex = critical_point(model, &coeffs.with_mu(mu_seed), &pieces1, first.tau)?;
    let stage = StageTwo {
        model,
        coeffs,
        k,
        j,
        side,
        vertex,
    };
    // Width in eta over which the secondary map is defined.
    let g = model.multipliers.gamma.abs();
    let eta_width = coeffs.delta * g.powi(-(k as i32)) / (2.0 * coeffs.d * first.tau).abs().max(1e-12);
    let h_eta = 1e-6 * eta_width;
    // Changing mu mostly slides the parabola sideways, so (value, slope) is
    // nearly degenerate in (eta, mu). Instead, follow the vertex for each
    // mu and run a secant on its height; by the envelope property the
    // height's mu-derivative is the partial one at the vertex.
    let vertex_height = |mu: f64, eta0: f64| -> Result<(f64, f64)> {
        let mut eta = eta0;
        for _ in 0..40 {
            let step = stage.slope(eta, mu, h_eta)? / stage.curvature(eta, mu, h_eta)?;
            eta -= step;
            if step.abs() <= 1e-13 * eta_width {
                break;
            }
        }
        Ok((eta, stage.value(eta, mu)?))
    };
    let tol = 1e-12 * model.multipliers.lambda.powi(k as i32).abs();
    let (mut eta, mut h1) = vertex_height(mu_seed, vertex)?;
    let mut mu1 = mu_seed;
    let mut mu0 = mu_seed + 0.1 * (mu_seed - first.mu_k);
    let (_, mut h0) = vertex_height(mu0, eta)?;
    let mut converged = h1.abs() <= tol;
    for _ in 0..60 {
        if converged {
            break;
        }
        if h1 == h0 {
            break;
        }
        let next = mu1 - h1 * (mu1 - mu0) / (h1 - h0);
        let (e, h) = vertex_height(next, eta)?;
        mu0 = mu1;
        h0 = h1;
        mu1 = next;
        h1 = h;
        eta = e;
        converged = h1.abs() <= tol;
    }
    if !converged {
        return Err(HetdimError::numeric(format!(
            "stage 2 tangency j={j}: vertex height {h1:e} after secant in mu"
        )));
    }
    let mu = mu1;
    let point = stage.eval(eta, mu)?;
    let c = coeffs.with_mu(mu);
    let c_value = point.jacobian[(1, 0)];
    if c_value.abs() < 1e-14 {
        return Err(HetdimError::numeric(format!(
            "stage 2 c coefficient {c_value:e} too small to fix a sign"
        )));
    }
    let mut rec = TangencyBranch {
        k,
        branch: first.branch,
        stage: 2,
        j: Some(j),
        mu_k: mu,
        xy: first.xy,
        reduced_mu: first.reduced_mu,
        reduced_residual: first.reduced_residual,
        tau: point.tau,
        tangency_point: t1_offset(&c, 0.0, point.tau, &vec![0.0; c.nz()]).0,
        preimage: preimage(&c, point.tau),
        homoclinic_image: point.image.clone(),
        tangency_value: point.image.y,
        tangency_derivative: stage.slope(eta, mu, h_eta)?,
        second_derivative: stage.curvature(eta, mu, h_eta)?,
        transverse_points: vec![],
        straddle: (None, None),
        straddle_ok: false,
        c_value,
        c_closed_form: first.c_closed_form,
        c_sign: if c_value > 0.0 { 1 } else { -1 },
        case_tag: first.case_tag.clone(),
        induced_x_plus: point.image.x,
        induced_y_minus: c.y_minus + point.tau,
        landing_offset: Some(eta),
    };
    let extra = near_pair(model, &c, k, vertex)?;
    attach_transverse(model, coeffs, &mut rec, extra)?;
    Ok(rec)
}

/// Smallest even `j >= k` for which the displacement `c lambda^j x_A`
/// seen by the inner `T1` stays well inside the strip of `T0^k`.
fn stage_two_start(model: &SaddleModel, coeffs: &GlobalMapCoeffs, first: &TangencyBranch) -> usize {
    let (l, g) = (model.multipliers.lambda.abs(), model.multipliers.gamma.abs());
    let mut j = first.k;
    while (coeffs.c * first.induced_x_plus).abs() * l.powi(j as i32) * g.powi(first.k as i32) > coeffs.delta / 8.0 {
        j += 2;
    }
    j
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ForgeDiagnosis {
    pub k: usize,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ForgedTangency {
    pub branch: TangencyBranch,
    pub diagnosis: Vec<ForgeDiagnosis>,
}

/// Runs the schedule until a branch has both the straddle property and
/// `c x+ y- > 0` for its induced global map.
pub fn forge_admissible_tangency(
    model: &SaddleModel,
    coeffs: &GlobalMapCoeffs,
    k_schedule: &[usize],
) -> Result<ForgedTangency> {
    let mut diagnosis = vec![];
    for &k in k_schedule {
        let branches = match solve_secondary_tangency(model, coeffs, k) {
            Ok(b) => b,
            Err(e) => {
                diagnosis.push(ForgeDiagnosis { k, detail: e.to_string() });
                continue;
            }
        };
        for mut b in branches {
            if b.induced_product() <= 0.0 {
                diagnosis.push(ForgeDiagnosis {
                    k,
                    detail: format!("branch {}: c x+ y- = {:e} <= 0", b.branch, b.induced_product()),
                });
                continue;
            }
            attach_transverse(model, coeffs, &mut b, vec![])?;
            if b.straddle_ok {
                return Ok(ForgedTangency { branch: b, diagnosis });
            }
            diagnosis.push(ForgeDiagnosis {
                k,
                detail: format!("branch {}: stage 1 straddle fails {:?}", b.branch, b.straddle),
            });
            for j in (stage_two_start(model, coeffs, &b)..).step_by(2).take(5) {
                for side in [-1.0, 1.0] {
                    match second_stage(model, coeffs, &b, j, side) {
                        Ok(s) if s.straddle_ok && s.induced_product() > 0.0 => {
                            debug!("stage 2 at k={k}, j={j}, side {side}");
                            return Ok(ForgedTangency { branch: s, diagnosis });
                        }
                        Ok(s) => diagnosis.push(ForgeDiagnosis {
                            k,
                            detail: format!(
                                "stage 2 j={j} side {side}: straddle {:?}, c x+ y- = {:e}",
                                s.straddle,
                                s.induced_product()
                            ),
                        }),
                        Err(e) => diagnosis.push(ForgeDiagnosis {
                            k,
                            detail: format!("stage 2 j={j} side {side}: {e}"),
                        }),
                    }
                }
            }
        }
    }
    Err(HetdimError::numeric(format!(
        "forge schedule exhausted: {}",
        diagnosis
            .iter()
            .map(|d| format!("k={}: {}", d.k, d.detail))
            .collect::<Vec<_>>()
            .join("; ")
    )))
}

/// Both branches for every `k` of a schedule, fanned out across threads.
pub fn solve_schedule(
    model: &SaddleModel,
    coeffs: &GlobalMapCoeffs,
    ks: &[usize],
) -> Vec<Result<[TangencyBranch; 2]>> {
    par_map(ks, |&k| solve_secondary_tangency(model, coeffs, k))
}

/// Per-k CSV: `k, branch, mu_k, X, Y, c_sign, straddle_ok, residual`.
pub fn write_tangency_csv<W: Write>(out: W, branches: &[TangencyBranch]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["k", "branch", "mu_k", "X", "Y", "c_sign", "straddle_ok", "residual"])?;
    for b in branches {
        w.write_record([
            b.k.to_string(),
            b.branch.to_string(),
            format!("{:e}", b.mu_k),
            format!("{:e}", b.xy.0),
            format!("{:e}", b.xy.1),
            b.c_sign.to_string(),
            b.straddle_ok.to_string(),
            format!("{:e}", b.reduced_residual),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::saddle_model::{build_model, ModelSpec};
    use proptest::prelude::*;

    fn tier(c: f64, d: f64) -> (SaddleModel, GlobalMapCoeffs) {
        let model = build_model(&ModelSpec::default_d3()).unwrap();
        let mut coeffs = GlobalMapCoeffs::default_for_dim(3);
        coeffs.c = c;
        coeffs.d = d;
        (model, coeffs)
    }

    #[test]
    fn mu_ratio_converges_in_both_cases() {
        for (c, d) in [(1.0, -1.0), (1.0, 1.0), (-1.0, -1.0), (-1.0, 1.0)] {
            let (model, coeffs) = tier(c, d);
            for branch in 0..2 {
                let errs: Vec<f64> = (10..=24)
                    .step_by(2)
                    .map(|k| {
                        let b = &solve_secondary_tangency(&model, &coeffs, k).unwrap()[branch];
                        (b.mu_k / leading_splitting(&model, &coeffs, k) - 1.0).abs()
                    })
                    .collect();
                assert!(errs[1] < 0.2, "c={c} d={d}: {errs:?}");
                assert!(errs.windows(2).all(|w| w[1] < w[0]), "c={c} d={d}: {errs:?}");
            }
        }
    }

    #[test]
    fn tangencies_are_quadratic_on_the_true_map() {
        for (c, d) in [(1.0, -1.0), (1.0, 1.0)] {
            let (model, coeffs) = tier(c, d);
            for k in [12, 18, 24] {
                for b in solve_secondary_tangency(&model, &coeffs, k).unwrap() {
                    assert!(b.reduced_residual < 1e-11);
                    assert!(b.tangency_value.abs() < 1e-10, "{}", b.tangency_value);
                    // One ulp of tau moves the slope by |G''| eps |tau|.
                    let floor = b.second_derivative.abs() * f64::EPSILON * b.tau.abs();
                    let limit = if k <= 20 { 1e-9 } else { 1e-9f64.max(8.0 * floor) };
                    assert!(b.tangency_derivative.abs() < limit, "k={k}: {:e}", b.tangency_derivative);
                    assert!(b.second_derivative.abs() > 1.0);
                    // Preimage on W^u_loc, image on W^s_loc.
                    assert_eq!(b.preimage.x, 0.0);
                    assert!(b.homoclinic_image.y.abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn scaled_solution_tends_to_unit_seed() {
        // The limit system {1 = UV, 1 = V^2} holds at (1, 1) and (-1, -1).
        for (u, v) in [(1.0f64, 1.0f64), (-1.0, -1.0)] {
            assert_eq!(u * v, 1.0);
            assert_eq!(v * v, 1.0);
        }
        let (model, coeffs) = tier(1.0, -1.0);
        let lam = model.multipliers.lambda;
        let mut prev = f64::INFINITY;
        for k in (12..=24).step_by(2) {
            let b = &solve_secondary_tangency(&model, &coeffs, k).unwrap()[0];
            let y_scale = lam.powi(k as i32).abs().sqrt() * (coeffs.c * coeffs.x_plus / coeffs.d).abs().sqrt();
            let dev = (b.xy.1 / y_scale - 1.0).abs();
            assert!(dev < prev, "k={k}: {dev}");
            prev = dev;
        }
        assert!(prev < 0.01);
    }

    #[test]
    fn branch_signs_are_opposite_and_match_closed_form() {
        for (c, d) in [(1.0, -1.0), (1.0, 1.0), (-1.0, -1.0), (-1.0, 1.0)] {
            let (model, coeffs) = tier(c, d);
            for k in (12..=24).step_by(2) {
                let [b1, b2] = solve_secondary_tangency(&model, &coeffs, k).unwrap();
                assert_eq!(b1.c_sign, -b2.c_sign, "c={c} d={d} k={k}");
                for b in [&b1, &b2] {
                    assert_eq!(b.c_value.signum(), b.c_closed_form.signum());
                    let again = secondary_c_coefficient(&model, &coeffs, b).unwrap();
                    assert_eq!(again, b.c_value);
                    // Chain rule through the composed map.
                    let cm = coeffs.with_mu(b.mu_k);
                    let (_, jac) = compose(&model, &cm, &b.preimage, Some(b.tau), &level1(k)).unwrap();
                    assert!((b.c_value / jac[(1, 0)] - 1.0).abs() < 1e-4, "{} vs {}", b.c_value, jac[(1, 0)]);
                }
            }
        }
    }

    #[test]
    fn direct_pair_sits_at_square_root_offsets() {
        let (model, coeffs) = tier(1.0, -1.0);
        let mu = 1e-4;
        let pts = find_transverse_homoclinics(&model, &coeffs, mu, &[]).unwrap();
        assert_eq!(pts.len(), 2);
        let r = coeffs.b * (-mu / coeffs.d).sqrt();
        let mut xs: Vec<f64> = pts.iter().map(|p| p.point.x - coeffs.x_plus).collect();
        xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert!((xs[0] + r).abs() < 1e-14 && (xs[1] - r).abs() < 1e-14, "{xs:?}");
        assert!(pts.iter().all(|p| p.point.y.abs() < 1e-16 && p.slope > 1e-6));
    }

    #[test]
    fn quartet_at_zero_splitting() {
        // With y- > 0 and d > 0 the quartet needs c x+ / d < 0 here.
        let (model, coeffs) = tier(-1.0, 1.0);
        let lam = model.multipliers.lambda;
        let g = model.multipliers.gamma;
        for k in [12, 16, 20] {
            let pts = find_transverse_homoclinics(&model, &coeffs, 0.0, &[k]).unwrap();
            assert_eq!(pts.len(), 4, "k={k}");
            let off = lam.powi(k as i32).abs().sqrt() * (coeffs.c * coeffs.x_plus / coeffs.d).abs().sqrt();
            for p in &pts {
                let landing = p.point.y * g.powi(k as i32) - coeffs.y_minus;
                let err = (landing.abs() / off - 1.0).abs();
                assert!(err < 0.2, "k={k}: landing {landing:e} vs {off:e}");
                assert!(p.slope > 1e-6);
            }
        }
    }

    #[test]
    fn single_stage_forge_when_d_negative() {
        let (model, coeffs) = tier(1.0, -1.0);
        let f = forge_admissible_tangency(&model, &coeffs, &[12, 14]).unwrap();
        let b = &f.branch;
        assert_eq!(b.stage, 1);
        assert!(b.induced_product() > 0.0);
        let (lo, hi) = (b.straddle.0.unwrap(), b.straddle.1.unwrap());
        let y = |t: f64| coeffs.y_minus + t;
        assert!(y(lo) < b.preimage.y && b.preimage.y < y(hi));
    }

    #[test]
    fn two_stage_forge_for_cdx_and_d_positive() {
        let (model, coeffs) = tier(1.0, 1.0);
        let [_, b2] = solve_secondary_tangency(&model, &coeffs, 12).unwrap();
        let mut stage1 = b2.clone();
        attach_transverse(&model, &coeffs, &mut stage1, vec![]).unwrap();
        assert!(!stage1.straddle_ok, "stage 1 already straddles: {:?}", stage1.straddle);

        let f = forge_admissible_tangency(&model, &coeffs, &[12, 14]).unwrap();
        let b = &f.branch;
        assert_eq!(b.stage, 2);
        assert!(b.j.unwrap() > b.k);
        assert!(b.induced_product() > 0.0);
        assert!(b.tangency_value.abs() < 1e-10 && b.tangency_derivative.abs() < 1e-9);
        let (lo, hi) = (b.straddle.0.unwrap(), b.straddle.1.unwrap());
        assert!(lo < b.tau && b.tau < hi);
        // One neighbour comes from a longer excursion than the forged one.
        let neighbours: Vec<_> = b
            .transverse_points
            .iter()
            .filter(|p| p.tau == lo || p.tau == hi)
            .collect();
        assert!(neighbours.iter().any(|p| p.k.is_some_and(|kk| kk > b.k)));
    }

    #[test]
    fn csv_has_one_row_per_branch() {
        let (model, coeffs) = tier(1.0, -1.0);
        let rows: Vec<TangencyBranch> = solve_schedule(&model, &coeffs, &[12, 14])
            .into_iter()
            .flat_map(|r| r.unwrap())
            .collect();
        let mut buf = vec![];
        write_tangency_csv(&mut buf, &rows).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 5);
        assert!(text.starts_with("k,branch,mu_k,X,Y,c_sign,straddle_ok,residual"));
    }

    #[test]
    fn rejects_odd_or_short_k() {
        let (model, coeffs) = tier(1.0, -1.0);
        assert!(solve_secondary_tangency(&model, &coeffs, 13).is_err());
        assert!(solve_secondary_tangency(&model, &coeffs, 2).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn branch_signs_opposite_for_random_coefficients(
            c in prop_oneof![-2.0f64..-0.5, 0.5f64..2.0],
            d in prop_oneof![-2.0f64..-0.5, 0.5f64..2.0],
            k in prop::sample::select(vec![12usize, 14, 16, 18]),
        ) {
            let (model, coeffs) = tier(c, d);
            let [b1, b2] = solve_secondary_tangency(&model, &coeffs, k).unwrap();
            prop_assert_eq!(b1.c_sign, -b2.c_sign);
            for b in [&b1, &b2] {
                prop_assert!(b.tangency_value.abs() < 1e-10);
                prop_assert!(b.tangency_derivative.abs() < 1e-9);
                prop_assert!(b.second_derivative != 0.0);
            }
        }
    }
}
