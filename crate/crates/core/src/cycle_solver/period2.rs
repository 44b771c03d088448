//! Period-2 orbits of the first-return map with itinerary `(k, m)`.
//!
//! Unknowns per leg are the cross-form coordinates `(x0, eta, z0)` with
//! `y_k = y- + eta`, so the small offsets `eta` are carried exactly.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::cone_analysis::JacobianChain;
use crate::error::{HetdimError, Result};
use crate::global_map::{t1_offset, GlobalMapCoeffs};
use crate::local_map::{iterate_local, solve_cross_form};
use crate::numerics::{newton, NewtonOptions};
use crate::saddle_model::{SaddleModel, SplitVector};

pub const CLOSURE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PeriodTwoOrbit {
    pub k: usize,
    pub m: usize,
    pub mu: f64,
    /// `Q01, Q11, Q02, Q12`.
    pub points: Vec<SplitVector>,
    /// `(y11 - y-, y12 - y-)`.
    pub eta: (f64, f64),
    pub s_value: f64,
    /// `DT^2` at `Q01`, row-major.
    pub jacobian_2: Vec<Vec<f64>>,
    /// Weighted Newton residual of the closure system.
    pub newton_residual: f64,
    pub newton_iterations: usize,
}

impl PeriodTwoOrbit {
    pub fn q01(&self) -> &SplitVector {
        &self.points[0]
    }
    pub fn q11(&self) -> &SplitVector {
        &self.points[1]
    }
    pub fn q02(&self) -> &SplitVector {
        &self.points[2]
    }
    pub fn q12(&self) -> &SplitVector {
        &self.points[3]
    }

    pub fn dim(&self) -> usize {
        self.points[0].dim()
    }

    pub fn jacobian(&self) -> DMatrix<f64> {
        let n = self.jacobian_2.len();
        DMatrix::from_fn(n, n, |r, c| self.jacobian_2[r][c])
    }

    fn unknowns(&self) -> DVector<f64> {
        let mut v = leg_unknowns(self.q01(), self.eta.0);
        v.extend(leg_unknowns(self.q02(), self.eta.1));
        DVector::from_vec(v)
    }

    /// Step derivatives along one period starting at `Q01`: `k` local steps,
    /// `T1`, `m` local steps, `T1`.
    pub fn chain(&self, model: &SaddleModel, coeffs: &GlobalMapCoeffs) -> Result<JacobianChain> {
        let c = coeffs.with_mu(self.mu);
        let mut factors = iterate_local(model, self.q01(), self.k)?.step_jacobians;
        let q11 = self.q11();
        factors.push(t1_offset(&c, q11.x, self.eta.0, &q11.z).1);
        factors.extend(iterate_local(model, self.q02(), self.m)?.step_jacobians);
        let q12 = self.q12();
        factors.push(t1_offset(&c, q12.x, self.eta.1, &q12.z).1);
        Ok(JacobianChain {
            factors,
            stays: vec![self.k, self.m],
        })
    }
}

fn leg_unknowns(q0: &SplitVector, eta: f64) -> Vec<f64> {
    let mut v = vec![q0.x, eta];
    v.extend(q0.z.iter().cloned());
    v
}

/// Closed-form quantities of the index criterion for itinerary `(k, m)`.
#[derive(Debug, Clone, Copy)]
pub struct IndexScales {
    /// `gamma^(k+m)`.
    pub gamma_km: f64,
    /// `b^2 c^2 (lambda gamma)^(k+m)`.
    pub det_formula: f64,
    /// `lambda^k gamma^-k + lambda^m gamma^-m`.
    pub ratio_sum: f64,
    pub bc: f64,
    pub d: f64,
}

impl IndexScales {
    pub fn new(model: &SaddleModel, coeffs: &GlobalMapCoeffs, k: usize, m: usize) -> IndexScales {
        let l = model.multipliers.lambda;
        let g = model.multipliers.gamma;
        let (ki, mi) = (k as i32, m as i32);
        let bc = coeffs.b * coeffs.c;
        IndexScales {
            gamma_km: g.powi(ki + mi),
            det_formula: bc * bc * (l * g).powi(ki + mi),
            ratio_sum: (l / g).powi(ki) + (l / g).powi(mi),
            bc,
            d: coeffs.d,
        }
    }

    /// Trace of the two-dimensional reduction at `(eta1, eta2)`.
    pub fn trace_formula(&self, eta1: f64, eta2: f64) -> f64 {
        self.gamma_km * (4.0 * self.d * self.d * eta1 * eta2 + self.bc * self.ratio_sum)
    }

    /// `s = tr / (1 + det)`; index 2 exactly when `|s| < 1` for the reduction.
    pub fn s_value(&self, eta1: f64, eta2: f64) -> f64 {
        self.trace_formula(eta1, eta2) / (1.0 + self.det_formula)
    }

    /// `d s / d(eta1 eta2)`.
    pub fn s_slope(&self) -> f64 {
        self.gamma_km * 4.0 * self.d * self.d / (1.0 + self.det_formula)
    }

    /// The product `eta1 eta2` giving the value `s`.
    pub fn eta_product(&self, s: f64) -> f64 {
        s * (1.0 + self.det_formula) / (4.0 * self.d * self.d * self.gamma_km)
            - self.bc * self.ratio_sum / (4.0 * self.d * self.d)
    }
}

/// Residual and derivative of one leg: `T1(T0^k(x0, y0, z0))` where `y0`
/// solves the cross form for `y_k = y- + eta`.
struct Leg {
    y0: f64,
    dy0: Vec<f64>,
    image: SplitVector,
    dimage: DMatrix<f64>,
}

fn eval_leg(model: &SaddleModel, coeffs: &GlobalMapCoeffs, k: usize, u: &[f64]) -> Result<Leg> {
    let n = u.len();
    let (x0, eta, z0) = (u[0], u[1], &u[2..]);
    let cf = solve_cross_form(model, x0, coeffs.y_minus + eta, z0, k)?;
    let jc = cf.jacobian.clone().expect("cross form returns its Jacobian");
    let (image, dt1) = t1_offset(coeffs, cf.x_k, eta, &cf.z_k);
    let mut dq = DMatrix::zeros(n, n);
    for c in 0..n {
        dq[(0, c)] = jc[(0, c)];
        for r in 2..n {
            dq[(r, c)] = jc[(r, c)];
        }
    }
    dq[(1, 1)] = 1.0;
    Ok(Leg {
        y0: cf.y_0,
        dy0: (0..n).map(|c| jc[(1, c)]).collect(),
        image,
        dimage: dt1 * dq,
    })
}

/// Closure residual `[T1(Q11) - Q02, T1(Q12) - Q01]` with its Jacobian in
/// the unknowns and its derivative in `mu`.
fn closure_system(
    model: &SaddleModel,
    coeffs: &GlobalMapCoeffs,
    k: usize,
    m: usize,
    v: &DVector<f64>,
) -> Result<(DVector<f64>, DMatrix<f64>, DVector<f64>)> {
    let n = model.dim();
    let u1: Vec<f64> = v.rows(0, n).iter().cloned().collect();
    let u2: Vec<f64> = v.rows(n, n).iter().cloned().collect();
    let leg1 = eval_leg(model, coeffs, k, &u1)?;
    let leg2 = eval_leg(model, coeffs, m, &u2)?;
    let mut r = DVector::zeros(2 * n);
    let mut j = DMatrix::zeros(2 * n, 2 * n);
    let start = |u: &[f64], y0: f64| {
        let mut q = u.to_vec();
        q[1] = y0;
        q
    };
    let q02 = start(&u2, leg2.y0);
    let q01 = start(&u1, leg1.y0);
    let img1 = leg1.image.to_dvector();
    let img2 = leg2.image.to_dvector();
    for i in 0..n {
        r[i] = img1[i] - q02[i];
        r[n + i] = img2[i] - q01[i];
    }
    j.view_mut((0, 0), (n, n)).copy_from(&leg1.dimage);
    j.view_mut((n, n), (n, n)).copy_from(&leg2.dimage);
    // Start points of the opposite leg: identity except the solved y0 row.
    for c in 0..n {
        j[(1, n + c)] -= leg2.dy0[c];
        j[(n + 1, c)] -= leg1.dy0[c];
    }
    for i in (0..n).filter(|i| *i != 1) {
        j[(i, n + i)] -= 1.0;
        j[(n + i, i)] -= 1.0;
    }
    let mut dmu = DVector::zeros(2 * n);
    dmu[1] = 1.0;
    dmu[n + 1] = 1.0;
    Ok((r, j, dmu))
}

fn closure_weights(model: &SaddleModel, k: usize, m: usize, extra: bool) -> Vec<f64> {
    let n = model.dim();
    let g = model.multipliers.gamma.abs();
    let mut w = vec![1.0; 2 * n];
    // y-rows compare start points of size gamma^-m and gamma^-k.
    w[1] = g.powi(m as i32);
    w[n + 1] = g.powi(k as i32);
    if extra {
        w.push(1.0);
    }
    w
}

/// Attainable weighted residual of the y-rows. Each subtracts terms of
/// size `|mu| + |c| lambda^j |x| + |d| eta^2` and carries the weight
/// `gamma^k` or `gamma^m`, so rounding floors it at a few ulps of that.
#[allow(clippy::too_many_arguments)]
fn closure_tol(
    model: &SaddleModel,
    coeffs: &GlobalMapCoeffs,
    k: usize,
    m: usize,
    (x01, eta1): (f64, f64),
    (x02, eta2): (f64, f64),
    mu: f64,
) -> f64 {
    let l = model.multipliers.lambda.abs();
    let g = model.multipliers.gamma.abs();
    let size = |j: usize, x: f64, eta: f64| {
        mu.abs() + (coeffs.c * x).abs() * l.powi(j as i32) + (coeffs.d * eta * eta).abs() + (coeffs.e3 * eta.powi(3)).abs()
    };
    let floor = (g.powi(m as i32) * size(k, x01, eta1)).max(g.powi(k as i32) * size(m, x02, eta2));
    CLOSURE_TOL.max(4.0 * f64::EPSILON * floor)
}

/// Seed from the reduced linear system in `(eta1, eta2, mu)`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ReducedSeed {
    pub eta1: f64,
    pub eta2: f64,
    pub mu: f64,
    pub x01: f64,
    pub x02: f64,
    /// `+1` or `-1`: sign of the dominant `eta`.
    pub branch: f64,
}

fn reduced_x(coeffs: &GlobalMapCoeffs, lk: f64, lm: f64, e1: f64, e2: f64) -> (f64, f64, [f64; 4]) {
    let (a, b, xp) = (coeffs.a, coeffs.b, coeffs.x_plus);
    let den = 1.0 - a * a * lk * lm;
    let x01 = (xp * (1.0 + a * lm) + a * lm * b * e1 + b * e2) / den;
    let x02 = xp + a * lk * x01 + b * e1;
    let d01 = [a * lm * b / den, b / den];
    let d02 = [a * lk * d01[0] + b, a * lk * d01[1]];
    (x01, x02, [d01[0], d01[1], d02[0], d02[1]])
}

/// Solves the reduced period-2 system with `s = s_target`; `branch`
/// picks the sign of the dominant `eta`.
pub fn reduced_seed(
    model: &SaddleModel,
    coeffs: &GlobalMapCoeffs,
    k: usize,
    m: usize,
    s_target: f64,
    branch: f64,
) -> Result<ReducedSeed> {
    let l = model.multipliers.lambda;
    let g = model.multipliers.gamma;
    let (lk, lm) = (l.powi(k as i32), l.powi(m as i32));
    let (gk, gm) = (g.powi(-(k as i32)), g.powi(-(m as i32)));
    let (c, d, e3, ym) = (coeffs.c, coeffs.d, coeffs.e3, coeffs.y_minus);
    let scales = IndexScales::new(model, coeffs, k, m);
    let p = scales.eta_product(s_target);
    let rr = (gm - gk) * ym + c * coeffs.x_plus * (lm - lk);
    let (e1, e2) = if rr / d > 0.0 {
        let e1 = branch * (rr / d).sqrt();
        (e1, p / e1)
    } else {
        let e2 = branch * (-rr / d).sqrt();
        (p / e2, e2)
    };
    let (x01, _, _) = reduced_x(coeffs, lk, lm, e1, e2);
    let mu0 = gm * (e2 + ym) - (c * lk * x01 + d * e1 * e1 + e3 * e1.powi(3));
    let system = |v: &DVector<f64>| -> Result<(DVector<f64>, DMatrix<f64>)> {
        let (e1, e2, mu) = (v[0], v[1], v[2]);
        let (x01, x02, dx) = reduced_x(coeffs, lk, lm, e1, e2);
        let r = DVector::from_vec(vec![
            gk * (e1 + ym) - (mu + c * lm * x02 + d * e2 * e2 + e3 * e2.powi(3)),
            gm * (e2 + ym) - (mu + c * lk * x01 + d * e1 * e1 + e3 * e1.powi(3)),
            scales.s_value(e1, e2) - s_target,
        ]);
        let ds = scales.s_slope();
        let j = DMatrix::from_row_slice(
            3,
            3,
            &[
                gk - c * lm * dx[2],
                -c * lm * dx[3] - 2.0 * d * e2 - 3.0 * e3 * e2 * e2,
                -1.0,
                -c * lk * dx[0] - 2.0 * d * e1 - 3.0 * e3 * e1 * e1,
                gm - c * lk * dx[1],
                -1.0,
                ds * e2,
                ds * e1,
                0.0,
            ],
        );
        Ok((r, j))
    };
    let (_, x02, _) = reduced_x(coeffs, lk, lm, e1, e2);
    let opts = NewtonOptions {
        tol: closure_tol(model, coeffs, k, m, (x01, e1), (x02, e2), mu0),
        max_iter: 80,
        row_weights: Some(vec![g.abs().powi(k as i32), g.abs().powi(m as i32), 1.0]),
    };
    let out = newton(DVector::from_vec(vec![e1, e2, mu0]), system, &opts).map_err(|e| {
        HetdimError::numeric(format!(
            "reduced period-2 seed for (k,m)=({k},{m}), s={s_target} failed from eta=({e1:.3e},{e2:.3e}): {e}"
        ))
    })?;
    let (e1, e2, mu) = (out.x[0], out.x[1], out.x[2]);
    let (x01, x02, _) = reduced_x(coeffs, lk, lm, e1, e2);
    Ok(ReducedSeed {
        eta1: e1,
        eta2: e2,
        mu,
        x01,
        x02,
        branch,
    })
}

fn seed_unknowns(model: &SaddleModel, coeffs: &GlobalMapCoeffs, k: usize, m: usize, seed: &ReducedSeed) -> DVector<f64> {
    let l = model.multipliers.lambda;
    let nz = coeffs.nz();
    let z0 = |x_prev: f64, eta: f64| -> Vec<f64> {
        (0..nz)
            .map(|i| coeffs.z_plus[i] + coeffs.a_t[i] * x_prev + coeffs.b_t[i] * eta)
            .collect()
    };
    let mut v = vec![seed.x01, seed.eta1];
    v.extend(z0(l.powi(m as i32) * seed.x02, seed.eta2));
    v.push(seed.x02);
    v.push(seed.eta2);
    v.extend(z0(l.powi(k as i32) * seed.x01, seed.eta1));
    DVector::from_vec(v)
}

fn check_itinerary(model: &SaddleModel, coeffs: &GlobalMapCoeffs, k: usize, m: usize) -> Result<()> {
    if !k.is_multiple_of(2) || !m.is_multiple_of(2) || k <= m {
        return Err(HetdimError::validation(format!(
            "itinerary (k,m)=({k},{m}) must be even with k>m"
        )));
    }
    let ks = coeffs.k_star(model);
    if m < ks {
        return Err(HetdimError::validation(format!("m={m} below k*={ks}")));
    }
    Ok(())
}

/// Builds the orbit record from converged unknowns.
fn assemble(
    model: &SaddleModel,
    coeffs: &GlobalMapCoeffs,
    k: usize,
    m: usize,
    v: &DVector<f64>,
    mu: f64,
    residual: f64,
    iterations: usize,
) -> Result<PeriodTwoOrbit> {
    let n = model.dim();
    let c = coeffs.with_mu(mu);
    let u1: Vec<f64> = v.rows(0, n).iter().cloned().collect();
    let u2: Vec<f64> = v.rows(n, n).iter().cloned().collect();
    let cf1 = solve_cross_form(model, u1[0], c.y_minus + u1[1], &u1[2..], k)?;
    let cf2 = solve_cross_form(model, u2[0], c.y_minus + u2[1], &u2[2..], m)?;
    let q01 = SplitVector::new(u1[0], cf1.y_0, u1[2..].to_vec());
    let q11 = SplitVector::new(cf1.x_k, c.y_minus + u1[1], cf1.z_k.clone());
    let q02 = SplitVector::new(u2[0], cf2.y_0, u2[2..].to_vec());
    let q12 = SplitVector::new(cf2.x_k, c.y_minus + u2[1], cf2.z_k.clone());
    let scales = IndexScales::new(model, coeffs, k, m);
    let mut orbit = PeriodTwoOrbit {
        k,
        m,
        mu,
        points: vec![q01, q11, q02, q12],
        eta: (u1[1], u2[1]),
        s_value: scales.s_value(u1[1], u2[1]),
        jacobian_2: vec![],
        newton_residual: residual,
        newton_iterations: iterations,
    };
    let jac = orbit.chain(model, coeffs)?.product();
    orbit.jacobian_2 = (0..n).map(|r| (0..n).map(|cc| jac[(r, cc)]).collect()).collect();
    Ok(orbit)
}

/// Period-2 orbit at fixed `mu`. Without a seed orbit, the reduced system
/// at `s = 0` provides `eta`, and its `mu` is replaced by the given one.
pub fn solve_period2(
    model: &SaddleModel,
    coeffs: &GlobalMapCoeffs,
    k: usize,
    m: usize,
    mu: f64,
    seed: Option<&PeriodTwoOrbit>,
) -> Result<PeriodTwoOrbit> {
    check_itinerary(model, coeffs, k, m)?;
    let v0 = match seed {
        Some(o) => o.unknowns(),
        None => {
            let rs = reduced_seed(model, coeffs, k, m, 0.0, 1.0)?;
            seed_unknowns(model, coeffs, k, m, &rs)
        }
    };
    let n = model.dim();
    let c = coeffs.with_mu(mu);
    let opts = NewtonOptions {
        tol: closure_tol(model, coeffs, k, m, (v0[0], v0[1]), (v0[n], v0[n + 1]), mu),
        max_iter: 60,
        row_weights: Some(closure_weights(model, k, m, false)),
    };
    let out = newton(
        v0.clone(),
        |v| closure_system(model, &c, k, m, v).map(|(r, j, _)| (r, j)),
        &opts,
    )
    .map_err(|e| {
        HetdimError::numeric(format!(
            "period-2 closure (k,m)=({k},{m}) at mu={mu:e} from eta=({:.3e},{:.3e}): {e}",
            v0[1],
            v0[model.dim() + 1]
        ))
    })?;
    assemble(model, coeffs, k, m, &out.x, mu, out.residual, out.iterations)
}

/// Period-2 orbit whose index quantity `s` equals `s_target`, solving for
/// `mu` as well.
pub fn solve_period2_targeted(
    model: &SaddleModel,
    coeffs: &GlobalMapCoeffs,
    k: usize,
    m: usize,
    s_target: f64,
    seed: Option<&PeriodTwoOrbit>,
) -> Result<PeriodTwoOrbit> {
    check_itinerary(model, coeffs, k, m)?;
    let n = model.dim();
    let (v0, mu0) = match seed {
        Some(o) => (o.unknowns(), o.mu),
        None => {
            let rs = reduced_seed(model, coeffs, k, m, s_target, 1.0)?;
            (seed_unknowns(model, coeffs, k, m, &rs), rs.mu)
        }
    };
    let mut x0 = v0.clone().resize_vertically(2 * n + 1, 0.0);
    x0[2 * n] = mu0;
    let scales = IndexScales::new(model, coeffs, k, m);
    let system = |x: &DVector<f64>| -> Result<(DVector<f64>, DMatrix<f64>)> {
        let mu = x[2 * n];
        let v = x.rows(0, 2 * n).clone_owned();
        let (r, j, dmu) = closure_system(model, &coeffs.with_mu(mu), k, m, &v)?;
        let mut rr = r.resize_vertically(2 * n + 1, 0.0);
        let (e1, e2) = (x[1], x[n + 1]);
        rr[2 * n] = scales.s_value(e1, e2) - s_target;
        let mut jj = DMatrix::zeros(2 * n + 1, 2 * n + 1);
        jj.view_mut((0, 0), (2 * n, 2 * n)).copy_from(&j);
        for i in 0..2 * n {
            jj[(i, 2 * n)] = dmu[i];
        }
        jj[(2 * n, 1)] = scales.s_slope() * e2;
        jj[(2 * n, n + 1)] = scales.s_slope() * e1;
        Ok((rr, jj))
    };
    let opts = NewtonOptions {
        tol: closure_tol(model, coeffs, k, m, (v0[0], v0[1]), (v0[n], v0[n + 1]), mu0),
        max_iter: 60,
        row_weights: Some(closure_weights(model, k, m, true)),
    };
    let out = newton(x0, system, &opts).map_err(|e| {
        HetdimError::numeric(format!(
            "targeted period-2 (k,m)=({k},{m}), s={s_target} from eta=({:.3e},{:.3e}), mu={mu0:e}: {e}",
            v0[1],
            v0[n + 1]
        ))
    })?;
    let v = out.x.rows(0, 2 * n).clone_owned();
    assemble(model, coeffs, k, m, &v, out.x[2 * n], out.residual, out.iterations)
}

/// Per-leg forward checks: `Q11 = T0^k(Q01)`, `Q02 = T1(Q11)`,
/// `Q12 = T0^m(Q02)`, `Q01 = T1(Q12)`, and the full-period closure.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ClosureCheck {
    pub legs: [f64; 4],
    pub closure: f64,
}

impl ClosureCheck {
    pub fn max(&self) -> f64 {
        self.legs.iter().fold(self.closure, |a, b| a.max(*b))
    }
}

pub fn forward_closure(
    model: &SaddleModel,
    coeffs: &GlobalMapCoeffs,
    orbit: &PeriodTwoOrbit,
) -> Result<ClosureCheck> {
    let c = coeffs.with_mu(orbit.mu);
    let t1 = |p: &SplitVector| t1_offset(&c, p.x, p.y - c.y_minus, &p.z).0;
    let a = iterate_local(model, orbit.q01(), orbit.k)?.end;
    let b = t1(orbit.q11());
    let cc = iterate_local(model, orbit.q02(), orbit.m)?.end;
    let d = t1(orbit.q12());
    let legs = [
        a.dist_max(orbit.q11()),
        b.dist_max(orbit.q02()),
        cc.dist_max(orbit.q12()),
        d.dist_max(orbit.q01()),
    ];
    let full = t1(&iterate_local(model, &t1(&iterate_local(model, orbit.q01(), orbit.k)?.end), orbit.m)?.end);
    Ok(ClosureCheck {
        legs,
        closure: full.dist_max(orbit.q01()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::saddle_model::{build_model, ModelSpec};

    #[test]
    fn targeted_orbit_closes() {
        let model = build_model(&ModelSpec::default_d3()).unwrap();
        let c = GlobalMapCoeffs::default_for_dim(3);
        let o = solve_period2_targeted(&model, &c, 16, 12, 0.0, None).unwrap();
        let chk = forward_closure(&model, &c, &o).unwrap();
        assert!(chk.max() < 1e-11, "{chk:?}");
        assert!(o.s_value.abs() < 1e-10);
        let again = solve_period2(&model, &c, 16, 12, o.mu, Some(&o)).unwrap();
        assert!((again.eta.0 - o.eta.0).abs() < 1e-12);
    }

    #[test]
    fn closure_jacobian_matches_differences() {
        let model = build_model(&ModelSpec::default_d3()).unwrap();
        let c = GlobalMapCoeffs::default_for_dim(3).with_mu(-1e-5);
        let rs = reduced_seed(&model, &c, 14, 12, 0.0, 1.0).unwrap();
        let v = seed_unknowns(&model, &c, 14, 12, &rs);
        let (_, j, _) = closure_system(&model, &c, 14, 12, &v).unwrap();
        let steps: Vec<f64> = v.iter().map(|x| 1e-7 * x.abs().max(1e-3)).collect();
        let fd = crate::numerics::fd_jacobian(&v, &steps, |w| {
            closure_system(&model, &c, 14, 12, w).map(|r| r.0)
        })
        .unwrap();
        for r in 0..6 {
            let row_max = (0..6).map(|cc| j[(r, cc)].abs()).fold(0.0, f64::max);
            for cc in 0..6 {
                let scale = j[(r, cc)].abs().max(1e-4 * row_max);
                assert!((j[(r, cc)] - fd[(r, cc)]).abs() / scale < 1e-4, "({r},{cc}) {} vs {}", j[(r, cc)], fd[(r, cc)]);
            }
        }
    }
}
