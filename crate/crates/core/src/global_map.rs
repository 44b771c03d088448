//! The global map `T1` from a neighbourhood of `M- = (0, y-, 0)` to a
//! neighbourhood of `M+ = (x+, 0, z+)`, its mirror `R T1 R`, the first-return
//! map `T1 T0^k` and the strips of points with a given stay number.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{HetdimError, Result};
use crate::local_map::{iterate_end, solve_cross_form};
use crate::saddle_model::{reflect, reflection_matrix, SaddleModel, SplitVector};

pub const DEFAULT_DELTA: f64 = 0.1;
pub const DEFAULT_K_MAX: usize = 80;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct HigherOrder {
    /// Coefficient of the cubic term `e3 (y1 - y-)^3` in the y-component.
    #[serde(default)]
    pub e3: f64,
}

/// JSON form of a coefficient set. `alpha` has `D` rows of length `D - 2`:
/// row 0 is `alpha1`, row 1 is `alpha2`, the remaining rows form `alpha3`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoeffSpec {
    pub mu: f64,
    pub x_plus: f64,
    pub y_minus: f64,
    pub z_plus: Vec<f64>,
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
    pub a_t: Vec<f64>,
    pub b_t: Vec<f64>,
    pub alpha: Vec<Vec<f64>>,
    #[serde(default)]
    pub h: HigherOrder,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalMapCoeffs {
    pub mu: f64,
    pub x_plus: f64,
    pub y_minus: f64,
    pub z_plus: Vec<f64>,
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
    pub a_t: Vec<f64>,
    pub b_t: Vec<f64>,
    pub alpha1: Vec<f64>,
    pub alpha2: Vec<f64>,
    pub alpha3: Vec<Vec<f64>>,
    pub e3: f64,
    pub delta: f64,
    /// Set when the input had `y- < 0` and the y-axis was flipped.
    pub flipped: bool,
}

impl GlobalMapCoeffs {
    /// Validates a coefficient description for dimension `dim`, flipping `y` when `y- < 0`.
    pub fn from_spec(spec: &CoeffSpec, dim: usize) -> Result<GlobalMapCoeffs> {
        let c = Self::from_spec_raw(spec, dim)?;
        Ok(if c.y_minus < 0.0 { c.flip_y() } else { c })
    }

    /// Validates a coefficient description without the `y- < 0` flip. The second map of a
    /// general-mode pair lives near `(0, y2-, 0)` with `y2- < 0` by design.
    pub fn from_spec_raw(spec: &CoeffSpec, dim: usize) -> Result<GlobalMapCoeffs> {
        let nz = dim - 2;
        let scalars = [spec.mu, spec.x_plus, spec.y_minus, spec.a, spec.b, spec.c, spec.d, spec.h.e3];
        let vectors = spec
            .z_plus
            .iter()
            .chain(&spec.a_t)
            .chain(&spec.b_t)
            .chain(spec.alpha.iter().flatten());
        if scalars.iter().chain(vectors).any(|v| !v.is_finite()) {
            return Err(HetdimError::validation("coefficients must be finite"));
        }
        for (name, v) in [("z_plus", &spec.z_plus), ("a_t", &spec.a_t), ("b_t", &spec.b_t)] {
            if v.len() != nz {
                return Err(HetdimError::validation(format!(
                    "{name} has {} entries, dim-2={nz} required",
                    v.len()
                )));
            }
        }
        if spec.alpha.len() != dim || spec.alpha.iter().any(|r| r.len() != nz) {
            return Err(HetdimError::validation(format!(
                "alpha must be a {dim}x{nz} matrix (rows alpha1, alpha2, alpha3)"
            )));
        }
        if spec.d == 0.0 {
            return Err(HetdimError::validation("d=0"));
        }
        if spec.x_plus == 0.0 {
            return Err(HetdimError::validation("x_plus=0"));
        }
        if spec.b * spec.c == 0.0 {
            return Err(HetdimError::validation("b*c=0"));
        }
        if spec.y_minus == 0.0 {
            return Err(HetdimError::validation("y_minus=0"));
        }
        let delta = spec.delta.unwrap_or(DEFAULT_DELTA);
        if !(delta > 0.0 && delta < 1.0) {
            return Err(HetdimError::validation("delta must lie in (0,1)"));
        }
        if spec.y_minus.abs() + delta / 2.0 > 1.0 || spec.x_plus.abs() + delta / 2.0 > 1.0 {
            return Err(HetdimError::validation(
                "Pi0 and Pi1 must lie inside the unit box",
            ));
        }
        if spec.y_minus.abs() <= delta / 2.0 {
            return Err(HetdimError::validation("|y_minus|<=delta/2 (Pi1 meets W^s_loc)"));
        }
        if spec.x_plus.abs() <= delta / 2.0 {
            return Err(HetdimError::validation("|x_plus|<=delta/2 (Pi0 meets W^u_loc)"));
        }
        let zn = spec.z_plus.iter().map(|z| z * z).sum::<f64>().sqrt();
        if zn >= delta {
            return Err(HetdimError::validation("|z_plus|>=delta"));
        }
        let c = GlobalMapCoeffs {
            mu: spec.mu,
            x_plus: spec.x_plus,
            y_minus: spec.y_minus,
            z_plus: spec.z_plus.clone(),
            a: spec.a,
            b: spec.b,
            c: spec.c,
            d: spec.d,
            a_t: spec.a_t.clone(),
            b_t: spec.b_t.clone(),
            alpha1: spec.alpha[0].clone(),
            alpha2: spec.alpha[1].clone(),
            alpha3: spec.alpha[2..].to_vec(),
            e3: spec.h.e3,
            delta,
            flipped: false,
        };
        Ok(c)
    }

    /// Coefficients of `R T1 R` written as a map near `(0, -y-, 0)`, where
    /// `R` reverses `y` and applies `signs` to `z`.
    pub fn conjugate(&self, signs: &[f64]) -> GlobalMapCoeffs {
        let s = signs;
        let nz = self.nz();
        GlobalMapCoeffs {
            mu: -self.mu,
            x_plus: self.x_plus,
            y_minus: -self.y_minus,
            z_plus: (0..nz).map(|i| s[i] * self.z_plus[i]).collect(),
            a: self.a,
            b: -self.b,
            c: -self.c,
            d: -self.d,
            a_t: (0..nz).map(|i| s[i] * self.a_t[i]).collect(),
            b_t: (0..nz).map(|i| -s[i] * self.b_t[i]).collect(),
            alpha1: (0..nz).map(|j| self.alpha1[j] * s[j]).collect(),
            alpha2: (0..nz).map(|j| -self.alpha2[j] * s[j]).collect(),
            alpha3: (0..nz)
                .map(|i| (0..nz).map(|j| s[i] * self.alpha3[i][j] * s[j]).collect())
                .collect(),
            e3: self.e3,
            delta: self.delta,
            flipped: self.flipped,
        }
    }

    /// The same map written in the coordinate `y -> -y` (local map unchanged
    /// for y-odd nonlinearities).
    fn flip_y(&self) -> GlobalMapCoeffs {
        GlobalMapCoeffs {
            mu: -self.mu,
            y_minus: -self.y_minus,
            b: -self.b,
            c: -self.c,
            d: -self.d,
            b_t: self.b_t.iter().map(|v| -v).collect(),
            alpha2: self.alpha2.iter().map(|v| -v).collect(),
            flipped: !self.flipped,
            ..self.clone()
        }
    }

    pub fn to_spec(&self) -> CoeffSpec {
        let mut alpha = vec![self.alpha1.clone(), self.alpha2.clone()];
        alpha.extend(self.alpha3.iter().cloned());
        CoeffSpec {
            mu: self.mu,
            x_plus: self.x_plus,
            y_minus: self.y_minus,
            z_plus: self.z_plus.clone(),
            a: self.a,
            b: self.b,
            c: self.c,
            d: self.d,
            a_t: self.a_t.clone(),
            b_t: self.b_t.clone(),
            alpha,
            h: HigherOrder { e3: self.e3 },
            delta: Some(self.delta),
        }
    }

    pub fn with_mu(&self, mu: f64) -> GlobalMapCoeffs {
        GlobalMapCoeffs {
            mu,
            ..self.clone()
        }
    }

    pub fn nz(&self) -> usize {
        self.z_plus.len()
    }

    /// A generic coefficient set used in tests and defaults.
    pub fn default_for_dim(dim: usize) -> GlobalMapCoeffs {
        let nz = dim - 2;
        let mut alpha3 = vec![vec![0.0; nz]; nz];
        for (i, row) in alpha3.iter_mut().enumerate() {
            row[i] = 0.8 - 0.2 * i as f64;
            if i + 1 < nz {
                row[i + 1] = 0.1;
            }
        }
        GlobalMapCoeffs {
            mu: 0.0,
            x_plus: 0.5,
            y_minus: 0.5,
            z_plus: (0..nz).map(|i| 0.02 / (i + 1) as f64).collect(),
            a: 0.3,
            b: 1.0,
            c: 2.0,
            d: -1.0,
            a_t: (0..nz).map(|i| 0.2 - 0.05 * i as f64).collect(),
            b_t: (0..nz).map(|i| 0.5 - 0.1 * i as f64).collect(),
            alpha1: vec![0.0; nz],
            alpha2: vec![0.0; nz],
            alpha3,
            e3: 0.0,
            delta: DEFAULT_DELTA,
            flipped: false,
        }
    }

    pub fn in_pi1(&self, p: &SplitVector) -> bool {
        p.x.abs() < self.delta
            && (p.y - self.y_minus).abs() < self.delta / 2.0
            && p.z_norm() < self.delta
    }

    pub fn in_pi1_twin(&self, p: &SplitVector) -> bool {
        p.x.abs() < self.delta
            && (p.y + self.y_minus).abs() < self.delta / 2.0
            && p.z_norm() < self.delta
    }

    pub fn in_pi0(&self, p: &SplitVector) -> bool {
        (p.x - self.x_plus).abs() < self.delta / 2.0
            && p.y.abs() < self.delta
            && p.z_norm() < self.delta
    }

    /// Smallest k with `|gamma|^(-k) (y- + delta) < delta`.
    pub fn k_star(&self, model: &SaddleModel) -> usize {
        let g = model.multipliers.gamma.abs();
        let mut k = 0;
        while g.powi(k as i32).recip() * (self.y_minus.abs() + self.delta) >= self.delta {
            k += 1;
        }
        k
    }
}

/// `T1` at `(x1, y- + u, z1)` given the offset `u = y1 - y-` directly,
/// with its Jacobian with respect to `(x1, y1, z1)`.
pub fn t1_offset(
    coeffs: &GlobalMapCoeffs,
    x1: f64,
    u: f64,
    z1: &[f64],
) -> (SplitVector, DMatrix<f64>) {
    let nz = coeffs.nz();
    let n = nz + 2;
    let dot = |row: &[f64]| row.iter().zip(z1).map(|(a, b)| a * b).sum::<f64>();
    let x0 = coeffs.x_plus + coeffs.a * x1 + coeffs.b * u + dot(&coeffs.alpha1);
    let y0 = coeffs.mu + coeffs.c * x1 + coeffs.d * u * u + dot(&coeffs.alpha2) + coeffs.e3 * u * u * u;
    let z0: Vec<f64> = (0..nz)
        .map(|i| coeffs.z_plus[i] + coeffs.a_t[i] * x1 + coeffs.b_t[i] * u + dot(&coeffs.alpha3[i]))
        .collect();
    let mut j = DMatrix::zeros(n, n);
    j[(0, 0)] = coeffs.a;
    j[(0, 1)] = coeffs.b;
    j[(1, 0)] = coeffs.c;
    j[(1, 1)] = 2.0 * coeffs.d * u + 3.0 * coeffs.e3 * u * u;
    for i in 0..nz {
        j[(0, 2 + i)] = coeffs.alpha1[i];
        j[(1, 2 + i)] = coeffs.alpha2[i];
        j[(2 + i, 0)] = coeffs.a_t[i];
        j[(2 + i, 1)] = coeffs.b_t[i];
        for c in 0..nz {
            j[(2 + i, 2 + c)] = coeffs.alpha3[i][c];
        }
    }
    (SplitVector::new(x0, y0, z0), j)
}

/// `T1` without the domain check.
pub fn t1_unchecked(coeffs: &GlobalMapCoeffs, p: &SplitVector) -> (SplitVector, DMatrix<f64>) {
    t1_offset(coeffs, p.x, p.y - coeffs.y_minus, &p.z)
}

pub fn apply_t1(coeffs: &GlobalMapCoeffs, p: &SplitVector) -> Result<(SplitVector, DMatrix<f64>)> {
    if !coeffs.in_pi1(p) {
        return Err(HetdimError::Domain {
            step: 0,
            detail: format!("({:.6e}, {:.6e}) outside Pi1", p.x, p.y),
        });
    }
    Ok(t1_unchecked(coeffs, p))
}

/// `R T1 R` without the domain check.
pub fn t1_twin_unchecked(
    signs: &[f64],
    coeffs: &GlobalMapCoeffs,
    p: &SplitVector,
) -> (SplitVector, DMatrix<f64>) {
    let (img, j) = t1_unchecked(coeffs, &reflect(signs, p));
    let r = reflection_matrix(signs);
    (reflect(signs, &img), &r * j * &r)
}

pub fn apply_t1_symmetric(
    model: &SaddleModel,
    coeffs: &GlobalMapCoeffs,
    p: &SplitVector,
) -> Result<(SplitVector, DMatrix<f64>)> {
    let signs = model
        .symmetry_signs
        .as_ref()
        .ok_or_else(|| HetdimError::validation("model has no symmetry"))?;
    if !coeffs.in_pi1_twin(p) {
        return Err(HetdimError::Domain {
            step: 0,
            detail: format!("({:.6e}, {:.6e}) outside the mirrored Pi1", p.x, p.y),
        });
    }
    Ok(t1_twin_unchecked(signs, coeffs, p))
}

/// `T1 T0^k` with its Jacobian; the itinerary error names the failed step.
pub fn first_return(
    model: &SaddleModel,
    coeffs: &GlobalMapCoeffs,
    p: &SplitVector,
    k: usize,
) -> Result<(SplitVector, DMatrix<f64>)> {
    let (q, j0) = iterate_end(model, p, k).map_err(|e| match e {
        HetdimError::Domain { step, detail } => {
            HetdimError::Itinerary(format!("T0 step {step} of {k} left the box: {detail}"))
        }
        other => other,
    })?;
    if !coeffs.in_pi1(&q) {
        let which = if q.x.abs() >= coeffs.delta {
            "|x|>=delta"
        } else if (q.y - coeffs.y_minus).abs() >= coeffs.delta / 2.0 {
            "|y-y_minus|>=delta/2"
        } else {
            "|z|>=delta"
        };
        return Err(HetdimError::Itinerary(format!(
            "T0^{k}(p) not in Pi1 ({which})"
        )));
    }
    let (img, j1) = t1_unchecked(coeffs, &q);
    Ok((img, j1 * j0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Strip {
    pub k: usize,
    pub x_range: (f64, f64),
    pub y_range: (f64, f64),
    pub z_box: f64,
}

/// Smallest `k >= k*` with `T0^k(p)` in `Pi1`, or `None` up to `k_max`.
pub fn locate_strip(model: &SaddleModel, coeffs: &GlobalMapCoeffs, p: &SplitVector) -> Option<Strip> {
    locate_strip_with(model, coeffs, p, DEFAULT_K_MAX)
}

pub fn locate_strip_with(
    model: &SaddleModel,
    coeffs: &GlobalMapCoeffs,
    p: &SplitVector,
    k_max: usize,
) -> Option<Strip> {
    let k_star = coeffs.k_star(model);
    let mut cur = p.clone();
    for k in 0..=k_max {
        if k >= k_star && coeffs.in_pi1(&cur) {
            return Some(strip_geometry(model, coeffs, k));
        }
        if cur.y == 0.0 {
            return None;
        }
        let (next, _) = crate::local_map::step_unchecked(model, &cur);
        if next.max_norm() > crate::local_map::VALIDITY_BOX {
            return None;
        }
        cur = next;
    }
    None
}

/// Extent of the strip with stay number `k`; the y-range is taken along
/// the line through `(x+, *, z+)`.
pub fn strip_geometry(model: &SaddleModel, coeffs: &GlobalMapCoeffs, k: usize) -> Strip {
    let h = coeffs.delta / 2.0;
    let g = model.multipliers.gamma.abs().powi(k as i32);
    let ends = [coeffs.y_minus - h, coeffs.y_minus + h].map(|yk| {
        solve_cross_form(model, coeffs.x_plus, yk, &coeffs.z_plus, k)
            .map(|r| r.y_0)
            .unwrap_or(yk / g)
    });
    Strip {
        k,
        x_range: (coeffs.x_plus - h, coeffs.x_plus + h),
        y_range: (ends[0].min(ends[1]), ends[0].max(ends[1])),
        z_box: coeffs.delta,
    }
}
