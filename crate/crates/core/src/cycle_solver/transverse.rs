//! Transverse connection `W^u(Q) ∩ W^s(O)`: a small disk in the
//! centre-unstable plane at `Q01` is iterated by the first-return map until
//! its image crosses `{y = 0}`, which is `W^s_loc(O)`.
//!
//! The disk lives in the cross-form chart `(x0, y_k, z0)`, where the
//! strongly stretched y-direction of phase space is of unit size.

use std::f64::consts::TAU;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::certificate::CycleCertificate;
use crate::cone_analysis::invariant_cu_subspace;
use crate::error::{HetdimError, Result};
use crate::global_map::{first_return, locate_strip, GlobalMapCoeffs};
use crate::local_map::{iterate_end, solve_cross_form};
use crate::numerics::orthonormalize;
use crate::saddle_model::{SaddleModel, SplitVector};

pub const SEED_RADIUS: f64 = 1e-6;
pub const DISK_VERTICES: usize = 64;
pub const ITERATION_CAP: usize = 50;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TransverseWitness {
    pub iterations_used: usize,
    pub crossing_point: SplitVector,
    /// Sine of the angle between the image curve and `{y = 0}`.
    pub slope: f64,
    /// Stay numbers of the returns taken by the crossing arc.
    pub itinerary: Vec<usize>,
    /// Measured `(x, y)`-area ratios per return while the disk stays whole.
    pub area_factors: Vec<f64>,
    /// `|bc| (lambda gamma)^k` for the same returns.
    pub predicted_factors: Vec<f64>,
    pub first_factor_rel_error: f64,
    /// `ceil(ln(delta / r0) / ln(sqrt(first factor))) + 5`.
    pub iteration_bound: usize,
    pub seed_radius: f64,
}

struct Disk<'a> {
    model: &'a SaddleModel,
    coeffs: &'a GlobalMapCoeffs,
    k: usize,
    center: DVector<f64>,
    u: DVector<f64>,
    v: DVector<f64>,
}

impl Disk<'_> {
    fn start(&self, phi: f64) -> Result<SplitVector> {
        let c = &self.center + (&self.u * phi.cos() + &self.v * phi.sin()) * SEED_RADIUS;
        let z: Vec<f64> = c.iter().skip(2).cloned().collect();
        let cf = solve_cross_form(self.model, c[0], c[1], &z, self.k)?;
        Ok(cf.start(c[0], &z))
    }

    fn image(&self, phi: f64, stays: &[usize]) -> Result<SplitVector> {
        let mut p = self.start(phi)?;
        for &s in stays {
            p = first_return(self.model, self.coeffs, &p, s)?.0;
        }
        Ok(p)
    }
}

fn shoelace(points: &[SplitVector]) -> f64 {
    let (x0, y0) = (points[0].x, points[0].y);
    let n = points.len();
    let mut twice = 0.0;
    for i in 0..n {
        let a = &points[i];
        let b = &points[(i + 1) % n];
        twice += (a.x - x0) * (b.y - y0) - (b.x - x0) * (a.y - y0);
    }
    twice.abs() / 2.0
}

pub fn verify_transverse_connection(
    model: &SaddleModel,
    coeffs: &GlobalMapCoeffs,
    cert: &CycleCertificate,
) -> Result<TransverseWitness> {
    let orbit = &cert.orbit;
    let c = coeffs.with_mu(orbit.mu);
    let n = model.dim();
    let cu = invariant_cu_subspace(&orbit.chain(model, coeffs)?)?;
    if cert.index_evidence.index != 2 {
        return Err(HetdimError::validation("transverse connection needs an index-2 orbit"));
    }
    // Phase tangent vectors to chart coordinates: only y is replaced by y_k.
    let (_, jk) = iterate_end(model, orbit.q01(), orbit.k)?;
    let mut to_chart = DMatrix::identity(n, n);
    for col in 0..n {
        to_chart[(1, col)] = jk[(1, col)];
    }
    let basis = orthonormalize(&(to_chart * &cu.subspace));
    let q = orbit.q01();
    let mut center = DVector::zeros(n);
    center[0] = q.x;
    center[1] = c.y_minus + orbit.eta.0;
    for i in 0..n - 2 {
        center[2 + i] = q.z[i];
    }
    let disk = Disk {
        model,
        coeffs: &c,
        k: orbit.k,
        center,
        u: basis.column(0).clone_owned(),
        v: basis.column(1).clone_owned(),
    };
    let phis: Vec<f64> = (0..DISK_VERTICES)
        .map(|i| TAU * i as f64 / DISK_VERTICES as f64)
        .collect();
    let mut points: Vec<Option<SplitVector>> = phis.iter().map(|p| disk.start(*p).ok()).collect();
    if points.iter().any(|p| p.is_none()) {
        return Err(HetdimError::numeric("seed disk leaves the cross-form chart"));
    }
    let mut itineraries: Vec<Vec<usize>> = vec![vec![]; DISK_VERTICES];
    let mut area = shoelace(&points.iter().flatten().cloned().collect::<Vec<_>>());
    let mut whole = true;
    let (mut factors, mut predicted) = (vec![], vec![]);
    let bc = (c.b * c.c).abs();
    let lg = (model.multipliers.lambda * model.multipliers.gamma).abs();

    for step in 1..=ITERATION_CAP {
        for i in 0..DISK_VERTICES {
            let Some(p) = points[i].clone() else { continue };
            let next = locate_strip(model, &c, &p)
                .ok_or_else(|| HetdimError::numeric("no strip"))
                .and_then(|s| first_return(model, &c, &p, s.k).map(|r| (s.k, r.0)));
            match next {
                Ok((s, img)) => {
                    itineraries[i].push(s);
                    points[i] = Some(img);
                }
                Err(_) => points[i] = None,
            }
        }
        if points.iter().all(|p| p.is_none()) {
            return Err(HetdimError::numeric(format!(
                "transverse search inconclusive: every disk vertex lost after {step} returns"
            )));
        }
        let same = points.iter().all(|p| p.is_some())
            && itineraries.iter().all(|it| it == &itineraries[0]);
        if whole && same {
            let imgs: Vec<SplitVector> = points.iter().flatten().cloned().collect();
            let a = shoelace(&imgs);
            let f = a / area;
            let s = *itineraries[0].last().expect("itinerary is non-empty");
            if !(f > 1.0) {
                return Err(HetdimError::numeric(format!(
                    "area growth stalls: factor {f:e} at return {step}"
                )));
            }
            factors.push(f);
            predicted.push(bc * lg.powi(s as i32));
            area = a;
        } else {
            whole = false;
        }
        for i in 0..DISK_VERTICES {
            let j = (i + 1) % DISK_VERTICES;
            let (Some(a), Some(b)) = (&points[i], &points[j]) else { continue };
            if itineraries[i] != itineraries[j] || a.y * b.y >= 0.0 {
                continue;
            }
            let stays = itineraries[i].clone();
            let (mut lo, mut hi) = (phis[i], if j == 0 { TAU } else { phis[j] });
            let ylo = a.y;
            for _ in 0..80 {
                let mid = 0.5 * (lo + hi);
                let ym = disk.image(mid, &stays)?.y;
                if ym * ylo > 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
                if hi - lo < 1e-15 {
                    break;
                }
            }
            let star = 0.5 * (lo + hi);
            let crossing = disk.image(star, &stays)?;
            let h = 1e-7 * (phis[1] - phis[0]);
            let plus = disk.image(star + h, &stays)?;
            let minus = disk.image(star - h, &stays)?;
            let delta = plus.to_dvector() - minus.to_dvector();
            let slope = delta[1].abs() / delta.norm();
            let first = factors.first().copied().ok_or_else(|| {
                HetdimError::numeric("disk split before any area factor was measured")
            })?;
            let bound = ((c.delta / SEED_RADIUS).ln() / first.sqrt().ln()).ceil() as usize + 5;
            return Ok(TransverseWitness {
                iterations_used: step,
                crossing_point: crossing,
                slope,
                itinerary: stays,
                first_factor_rel_error: (factors[0] / predicted[0] - 1.0).abs(),
                area_factors: factors,
                predicted_factors: predicted,
                iteration_bound: bound,
                seed_radius: SEED_RADIUS,
            });
        }
    }
    Err(HetdimError::numeric(format!(
        "transverse search inconclusive after {ITERATION_CAP} returns"
    )))
}
