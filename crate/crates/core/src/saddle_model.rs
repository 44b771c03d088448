//! The local saddle: multipliers, the nonlinear terms of the local map,
//! the optional involution `R(x, y, z) = (x, -y, S z)` and the checks on
//! multipliers and global-map data that the cycle construction relies on.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{HetdimError, Result};
use crate::global_map::GlobalMapCoeffs;

/// A point in the split coordinates `(x, y, z)` with `z` of length `D - 2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitVector {
    pub x: f64,
    pub y: f64,
    pub z: Vec<f64>,
}

impl SplitVector {
    pub fn new(x: f64, y: f64, z: Vec<f64>) -> Self {
        SplitVector { x, y, z }
    }

    pub fn dim(&self) -> usize {
        self.z.len() + 2
    }

    pub fn to_dvector(&self) -> DVector<f64> {
        let mut v = DVector::zeros(self.dim());
        v[0] = self.x;
        v[1] = self.y;
        for (i, zi) in self.z.iter().enumerate() {
            v[2 + i] = *zi;
        }
        v
    }

    pub fn from_slice(v: &[f64]) -> Self {
        SplitVector {
            x: v[0],
            y: v[1],
            z: v[2..].to_vec(),
        }
    }

    pub fn z_norm(&self) -> f64 {
        self.z.iter().map(|z| z * z).sum::<f64>().sqrt()
    }

    /// Max-norm over all coordinates.
    pub fn max_norm(&self) -> f64 {
        self.z
            .iter()
            .fold(self.x.abs().max(self.y.abs()), |acc, z| acc.max(z.abs()))
    }

    pub fn dist_max(&self, other: &SplitVector) -> f64 {
        let mut d = (self.x - other.x).abs().max((self.y - other.y).abs());
        for (a, b) in self.z.iter().zip(&other.z) {
            d = d.max((a - b).abs());
        }
        d
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.iter().all(|z| z.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Multipliers {
    pub lambda: f64,
    pub gamma: f64,
    /// Strong-stable multipliers, ordered by decreasing modulus.
    pub strong: Vec<f64>,
    pub lambda_hat: f64,
    pub gamma_hat: f64,
    pub lambda0: f64,
}

impl Multipliers {
    /// `theta = -ln|lambda| / ln|gamma|`.
    pub fn theta(&self) -> f64 {
        -self.lambda.abs().ln() / self.gamma.abs().ln()
    }

    /// Returns a copy with `gamma` replaced and the chain re-validated.
    pub fn with_gamma(&self, gamma: f64) -> Result<Multipliers> {
        let m = Multipliers {
            gamma,
            ..self.clone()
        };
        m.validate()?;
        Ok(m)
    }

    /// Checks the multiplier chain. The error names the first violated
    /// inequality in the form it fails.
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.lambda,
            self.gamma,
            self.lambda_hat,
            self.gamma_hat,
            self.lambda0,
        ];
        if all.iter().chain(self.strong.iter()).any(|v| !v.is_finite()) {
            return Err(HetdimError::validation("multipliers must be finite"));
        }
        if self.strong.is_empty() {
            return Err(HetdimError::validation("strong must be non-empty (dim>=3)"));
        }
        for i in 0..self.strong.len().saturating_sub(1) {
            if self.strong[i + 1].abs() >= self.strong[i].abs() {
                return Err(HetdimError::validation(format!(
                    "|strong[{}]|>=|strong[{}]|",
                    i + 1,
                    i
                )));
            }
        }
        let l = self.lambda.abs();
        let l1 = self.strong[0].abs();
        if self.strong.contains(&0.0) {
            return Err(HetdimError::validation("strong multiplier equal to 0"));
        }
        if l1 >= l {
            return Err(HetdimError::validation("|strong[0]|>=|lambda|"));
        }
        if l >= 1.0 {
            return Err(HetdimError::validation("|lambda|>=1"));
        }
        if self.gamma.abs() <= 1.0 {
            return Err(HetdimError::validation("|gamma|<=1"));
        }
        if self.lambda_hat.abs() >= l {
            return Err(HetdimError::validation("|lambda_hat|>=|lambda|"));
        }
        if self.lambda_hat.abs() <= l * l {
            return Err(HetdimError::validation("|lambda_hat|<=lambda^2"));
        }
        if self.gamma_hat.abs() <= self.gamma.abs() {
            return Err(HetdimError::validation("|gamma_hat|<=|gamma|"));
        }
        if self.lambda0 <= l1 {
            return Err(HetdimError::validation("lambda0<=|strong[0]|"));
        }
        if self.lambda0 >= l * l {
            return Err(HetdimError::validation("lambda0>=lambda^2"));
        }
        if (self.lambda * self.gamma).abs() <= 1.0 {
            return Err(HetdimError::validation("|lambda*gamma|<=1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Nonlinearity {
    Linear,
    /// `f1 = eps*y*z1*x`, `f2 = eps*y^2*(x + z1)`, `f3 = eps*z*x*y`.
    Polynomial { eps: f64 },
    /// R-equivariant variant (needs `S[0] = -1`):
    /// `f1 = eps*y*z1*x`, `f2 = eps*y^2*(x*y + z1)`, `f3 = eps*z*x*y^2`.
    PolynomialSymmetric { eps: f64 },
}

/// JSON form of a model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub dim: usize,
    pub lambda: f64,
    pub gamma: f64,
    pub strong: Vec<f64>,
    /// Comparison rates; when omitted they default to the midpoints of
    /// their admissible intervals (see `ModelSpec::resolved_rates`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda_hat: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma_hat: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda0: Option<f64>,
    #[serde(default = "default_nonlinearity")]
    pub nonlinearity: Nonlinearity,
    #[serde(default)]
    pub symmetry_signs: Option<Vec<f64>>,
}

fn default_nonlinearity() -> Nonlinearity {
    Nonlinearity::Linear
}

impl ModelSpec {
    /// `(lambda_hat, gamma_hat, lambda0)`, filling omitted values with
    /// midpoints: `(lambda^2+|lambda|)/2`, `1.1*|gamma|`, `(|strong0|+lambda^2)/2`.
    pub fn resolved_rates(&self) -> (f64, f64, f64) {
        let l = self.lambda.abs();
        let l1 = self.strong.first().map(|s| s.abs()).unwrap_or(0.0);
        (
            self.lambda_hat.unwrap_or(0.5 * (l * l + l)),
            self.gamma_hat.unwrap_or(1.1 * self.gamma.abs()),
            self.lambda0.unwrap_or(0.5 * (l1 + l * l)),
        )
    }

    pub fn default_d3() -> Self {
        ModelSpec {
            dim: 3,
            lambda: 0.55,
            gamma: 2.2,
            strong: vec![0.25],
            lambda_hat: Some(0.4),
            gamma_hat: Some(2.4),
            lambda0: Some(0.29),
            nonlinearity: Nonlinearity::Linear,
            symmetry_signs: Some(vec![-1.0]),
        }
    }

    pub fn default_d4() -> Self {
        ModelSpec {
            dim: 4,
            lambda: 0.55,
            gamma: 2.2,
            strong: vec![0.25, 0.15],
            lambda_hat: Some(0.4),
            gamma_hat: Some(2.4),
            lambda0: Some(0.29),
            nonlinearity: Nonlinearity::Linear,
            symmetry_signs: Some(vec![-1.0, 1.0]),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SaddleModel {
    pub spec: ModelSpec,
    pub multipliers: Multipliers,
    pub nonlinearity: Nonlinearity,
    pub symmetry_signs: Option<Vec<f64>>,
}

/// Validates a model description and builds the model.
pub fn build_model(spec: &ModelSpec) -> Result<SaddleModel> {
    if spec.dim < 3 {
        return Err(HetdimError::validation("dim>=3 required"));
    }
    if spec.strong.len() != spec.dim - 2 {
        return Err(HetdimError::validation(format!(
            "strong has {} entries, dim-2={} required",
            spec.strong.len(),
            spec.dim - 2
        )));
    }
    let (lambda_hat, gamma_hat, lambda0) = spec.resolved_rates();
    let multipliers = Multipliers {
        lambda: spec.lambda,
        gamma: spec.gamma,
        strong: spec.strong.clone(),
        lambda_hat,
        gamma_hat,
        lambda0,
    };
    multipliers.validate()?;
    match spec.nonlinearity {
        Nonlinearity::Linear => {}
        Nonlinearity::Polynomial { eps } | Nonlinearity::PolynomialSymmetric { eps } => {
            if !eps.is_finite() {
                return Err(HetdimError::validation("nonlinearity eps must be finite"));
            }
        }
    }
    let signs = match &spec.symmetry_signs {
        None => None,
        Some(s) if s.is_empty() => None,
        Some(s) => {
            if s.len() != spec.dim - 2 {
                return Err(HetdimError::validation(format!(
                    "symmetry_signs has {} entries, dim-2={} required",
                    s.len(),
                    spec.dim - 2
                )));
            }
            if s.iter().any(|v| *v != 1.0 && *v != -1.0) {
                return Err(HetdimError::validation("symmetry_signs entries must be +1 or -1"));
            }
            if s.iter().all(|v| *v == 1.0) {
                return Err(HetdimError::validation(
                    "symmetry_signs must contain at least one -1",
                ));
            }
            match spec.nonlinearity {
                Nonlinearity::Polynomial { eps } if eps != 0.0 => {
                    return Err(HetdimError::validation(
                        "polynomial nonlinearity is not R-equivariant; use polynomial_symmetric",
                    ));
                }
                Nonlinearity::PolynomialSymmetric { eps } if eps != 0.0 && s[0] != -1.0 => {
                    return Err(HetdimError::validation(
                        "polynomial_symmetric requires symmetry_signs[0]=-1",
                    ));
                }
                _ => {}
            }
            Some(s.clone())
        }
    };
    Ok(SaddleModel {
        spec: spec.clone(),
        multipliers,
        nonlinearity: spec.nonlinearity,
        symmetry_signs: signs,
    })
}

impl SaddleModel {
    pub fn dim(&self) -> usize {
        self.spec.dim
    }

    pub fn is_symmetric(&self) -> bool {
        self.symmetry_signs.is_some()
    }

    pub fn theta(&self) -> f64 {
        self.multipliers.theta()
    }

    /// Same model with a different `gamma`; used to realize a prescribed theta.
    pub fn with_gamma(&self, gamma: f64) -> Result<SaddleModel> {
        let multipliers = self.multipliers.with_gamma(gamma)?;
        let spec = ModelSpec {
            gamma,
            ..self.spec.clone()
        };
        Ok(SaddleModel {
            spec,
            multipliers,
            ..self.clone()
        })
    }

    /// Nonlinear terms `(f1, f2, f3)` of the local map at `p`.
    pub fn nonlinear_terms(&self, p: &SplitVector) -> (f64, f64, Vec<f64>) {
        let (x, y, z) = (p.x, p.y, &p.z);
        match self.nonlinearity {
            Nonlinearity::Linear => (0.0, 0.0, vec![0.0; z.len()]),
            Nonlinearity::Polynomial { eps } => {
                let f1 = eps * y * z[0] * x;
                let f2 = eps * y * y * (x + z[0]);
                let f3 = z.iter().map(|zi| eps * zi * x * y).collect();
                (f1, f2, f3)
            }
            Nonlinearity::PolynomialSymmetric { eps } => {
                let f1 = eps * y * z[0] * x;
                let f2 = eps * y * y * (x * y + z[0]);
                let f3 = z.iter().map(|zi| eps * zi * x * y * y).collect();
                (f1, f2, f3)
            }
        }
    }

    /// Jacobian of `(f1, f2, f3)` at `p`, as a `D x D` matrix.
    pub fn nonlinear_jacobian(&self, p: &SplitVector) -> DMatrix<f64> {
        let n = p.dim();
        let mut j = DMatrix::zeros(n, n);
        let (x, y, z) = (p.x, p.y, &p.z);
        match self.nonlinearity {
            Nonlinearity::Linear => {}
            Nonlinearity::Polynomial { eps } => {
                j[(0, 0)] = eps * y * z[0];
                j[(0, 1)] = eps * z[0] * x;
                j[(0, 2)] = eps * y * x;
                j[(1, 0)] = eps * y * y;
                j[(1, 1)] = 2.0 * eps * y * (x + z[0]);
                j[(1, 2)] = eps * y * y;
                for (i, zi) in z.iter().enumerate() {
                    j[(2 + i, 0)] = eps * zi * y;
                    j[(2 + i, 1)] = eps * zi * x;
                    j[(2 + i, 2 + i)] = eps * x * y;
                }
            }
            Nonlinearity::PolynomialSymmetric { eps } => {
                j[(0, 0)] = eps * y * z[0];
                j[(0, 1)] = eps * z[0] * x;
                j[(0, 2)] = eps * y * x;
                j[(1, 0)] = eps * y * y * y;
                j[(1, 1)] = eps * (3.0 * x * y * y + 2.0 * y * z[0]);
                j[(1, 2)] = eps * y * y;
                for (i, zi) in z.iter().enumerate() {
                    j[(2 + i, 0)] = eps * zi * y * y;
                    j[(2 + i, 1)] = 2.0 * eps * zi * x * y;
                    j[(2 + i, 2 + i)] = eps * x * y * y;
                }
            }
        }
        j
    }

    /// The involution `R(x, y, z) = (x, -y, S z)`.
    pub fn apply_symmetry(&self, p: &SplitVector) -> Result<SplitVector> {
        let signs = self
            .symmetry_signs
            .as_ref()
            .ok_or_else(|| HetdimError::validation("model has no symmetry"))?;
        Ok(reflect(signs, p))
    }
}

/// `R` for a given sign vector.
pub fn reflect(signs: &[f64], p: &SplitVector) -> SplitVector {
    SplitVector {
        x: p.x,
        y: -p.y,
        z: p.z.iter().zip(signs).map(|(z, s)| z * s).collect(),
    }
}

/// `R` as a diagonal matrix.
pub fn reflection_matrix(signs: &[f64]) -> DMatrix<f64> {
    let n = signs.len() + 2;
    let mut r = DMatrix::identity(n, n);
    r[(1, 1)] = -1.0;
    for (i, s) in signs.iter().enumerate() {
        r[(2 + i, 2 + i)] = *s;
    }
    r
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConditionReport {
    pub theta: f64,
    /// `|lambda*gamma| - 1`; positive when the saddle is area-expanding.
    pub c1_margin: f64,
    pub c1_ok: bool,
    /// Smallest of `|d|`, `|x+|`, `|bc|` over the supplied coefficient sets.
    pub c2_min_proxy: f64,
    pub c2_ok: bool,
    /// `[lambda^2 - |strong[0]|, 1 - |lambda|*|gamma|^(2/3)]`.
    pub c3_margins: [f64; 2],
    pub c3_ok: bool,
    /// `|x+_1 - x+_2|`; zero in symmetric mode.
    pub c4_gap: f64,
    pub c4_ok: bool,
}

impl ConditionReport {
    pub fn all_ok(&self) -> bool {
        self.c1_ok && self.c2_ok && self.c3_ok && self.c4_ok
    }

    /// Name of the first failing condition, if any.
    pub fn first_failure(&self) -> Option<String> {
        if !self.c1_ok {
            return Some(format!("C1: |lambda*gamma|-1={:.6}", self.c1_margin));
        }
        if !self.c2_ok {
            return Some(format!("C2: min(|d|,|x+|,|bc|)={:e}", self.c2_min_proxy));
        }
        if !self.c3_ok {
            if self.c3_margins[0] <= 0.0 {
                return Some(format!("C3: |strong[0]|>=lambda^2 (margin {:.6})", self.c3_margins[0]));
            }
            return Some(format!(
                "C3: |lambda|*|gamma|^(2/3)>=1 (value {:.6})",
                1.0 - self.c3_margins[1]
            ));
        }
        if !self.c4_ok {
            return Some(format!("C4: |x+_1-x+_2|={:e}", self.c4_gap));
        }
        None
    }
}

/// Evaluates the open conditions on the model and one or two global maps.
pub fn check_conditions(
    model: &SaddleModel,
    coeffs: &GlobalMapCoeffs,
    coeffs2: Option<&GlobalMapCoeffs>,
) -> ConditionReport {
    let m = &model.multipliers;
    let c1_margin = (m.lambda * m.gamma).abs() - 1.0;
    let proxy = |c: &GlobalMapCoeffs| c.d.abs().min(c.x_plus.abs()).min((c.b * c.c).abs());
    let mut c2 = proxy(coeffs);
    if let Some(c) = coeffs2 {
        c2 = c2.min(proxy(c));
    }
    let l = m.lambda.abs();
    let c3 = [
        l * l - m.strong[0].abs(),
        1.0 - l * m.gamma.abs().powf(2.0 / 3.0),
    ];
    let c4_gap = match coeffs2 {
        Some(c) => (coeffs.x_plus - c.x_plus).abs(),
        None => 0.0,
    };
    ConditionReport {
        theta: m.theta(),
        c1_margin,
        c1_ok: c1_margin > 0.0,
        c2_min_proxy: c2,
        c2_ok: c2 > 0.0,
        c3_margins: c3,
        c3_ok: c3[0] > 0.0 && c3[1] > 0.0,
        c4_gap,
        c4_ok: c4_gap <= 1e-12,
    }
}

/// Sample points on an `n`-per-axis grid of the unit box in `(x, y, t)`,
/// with `z = t (1, 1/2, ..., 1/(D-2))`.
pub fn box_grid(dim: usize, n: usize) -> Vec<SplitVector> {
    let axis: Vec<f64> = (0..n)
        .map(|i| if n == 1 { 0.0 } else { -1.0 + 2.0 * i as f64 / (n - 1) as f64 })
        .collect();
    let mut pts = Vec::with_capacity(n * n * n);
    for &x in &axis {
        for &y in &axis {
            for &t in &axis {
                let z = (0..dim - 2).map(|i| t / (i + 1) as f64).collect();
                pts.push(SplitVector::new(x, y, z));
            }
        }
    }
    pts
}

/// Largest violation of each normal-form identity over `points`, in the
/// order `f1,3(0,y,0)`, `f2(x,0,z)`, `f1(x,0,z)`, `f2(0,y,0)`,
/// `df1,3/dx(0,y,0)`, `df2/dy(x,0,z)`, `f3(x,y,0)`, `f1(x,y,0)`.
pub fn identity_defects(model: &SaddleModel, points: &[SplitVector]) -> [f64; 8] {
    let nz = model.dim() - 2;
    let zero = vec![0.0; nz];
    let zmax = |v: &[f64]| v.iter().fold(0.0f64, |a, b| a.max(b.abs()));
    let mut d = [0.0f64; 8];
    for p in points {
        let on_wu = SplitVector::new(0.0, p.y, zero.clone());
        let on_ws = SplitVector::new(p.x, 0.0, p.z.clone());
        let on_plane = SplitVector::new(p.x, p.y, zero.clone());
        let (f1u, f2u, f3u) = model.nonlinear_terms(&on_wu);
        let (f1s, f2s, _) = model.nonlinear_terms(&on_ws);
        let (f1p, _, f3p) = model.nonlinear_terms(&on_plane);
        let ju = model.nonlinear_jacobian(&on_wu);
        let js = model.nonlinear_jacobian(&on_ws);
        let dx13 = (0..model.dim()).filter(|r| *r != 1).map(|r| ju[(r, 0)].abs()).fold(0.0, f64::max);
        let vals = [
            f1u.abs().max(zmax(&f3u)),
            f2s.abs(),
            f1s.abs(),
            f2u.abs(),
            dx13,
            js[(1, 1)].abs(),
            zmax(&f3p),
            f1p.abs(),
        ];
        for (acc, v) in d.iter_mut().zip(vals) {
            *acc = acc.max(v);
        }
    }
    d
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_model_theta() {
        let m = build_model(&ModelSpec::default_d3()).unwrap();
        let expected = -(0.55f64.ln()) / 2.2f64.ln();
        assert!((m.theta() - expected).abs() < 1e-15);
        assert!((m.theta() - 0.7582).abs() < 1e-4);
    }

    #[test]
    fn rejects_non_expanding_saddle() {
        let mut spec = ModelSpec::default_d3();
        spec.lambda = 0.4;
        spec.gamma = 2.0;
        spec.lambda_hat = Some(0.3);
        spec.lambda0 = Some(0.15);
        spec.strong = vec![0.1];
        let err = build_model(&spec).unwrap_err().to_string();
        assert!(err.contains("|lambda*gamma|<=1"), "{err}");
    }

    #[test]
    fn rejects_misordered_chain() {
        let mut spec = ModelSpec::default_d4();
        spec.strong = vec![0.15, 0.25];
        let err = build_model(&spec).unwrap_err().to_string();
        assert!(err.contains("|strong[1]|>=|strong[0]|"), "{err}");

        let mut spec = ModelSpec::default_d3();
        spec.gamma_hat = Some(2.0);
        let err = build_model(&spec).unwrap_err().to_string();
        assert!(err.contains("|gamma_hat|<=|gamma|"), "{err}");
    }

    #[test]
    fn rejects_all_plus_signs_and_plain_polynomial_symmetry() {
        let mut spec = ModelSpec::default_d3();
        spec.symmetry_signs = Some(vec![1.0]);
        assert!(build_model(&spec).is_err());
        let mut spec = ModelSpec::default_d3();
        spec.nonlinearity = Nonlinearity::Polynomial { eps: 0.1 };
        let err = build_model(&spec).unwrap_err().to_string();
        assert!(err.contains("not R-equivariant"), "{err}");
        spec.symmetry_signs = None;
        assert!(build_model(&spec).is_ok());
    }

    #[test]
    fn c3_fails_for_weak_contraction() {
        let mut spec = ModelSpec::default_d3();
        spec.lambda = 0.7;
        spec.lambda_hat = Some(0.6);
        spec.lambda0 = Some(0.3);
        let model = build_model(&spec).unwrap();
        let report = check_conditions(&model, &GlobalMapCoeffs::default_for_dim(3), None);
        assert!(!report.c3_ok);
        let value = 0.7 * 2.2f64.powf(2.0 / 3.0);
        assert!((1.0 - report.c3_margins[1] - value).abs() < 1e-12);
        assert!((value - 1.18).abs() < 0.01);
        assert!(report.first_failure().unwrap().starts_with("C3"));
    }

    #[test]
    fn nonlinear_jacobian_matches_finite_differences() {
        for nl in [
            Nonlinearity::Polynomial { eps: 0.3 },
            Nonlinearity::PolynomialSymmetric { eps: 0.3 },
        ] {
            let mut spec = ModelSpec::default_d4();
            spec.nonlinearity = nl;
            spec.symmetry_signs = None;
            let model = build_model(&spec).unwrap();
            let p = SplitVector::new(0.3, -0.2, vec![0.1, 0.4]);
            let j = model.nonlinear_jacobian(&p);
            let h = 1e-6;
            for col in 0..4 {
                let mut plus = p.to_dvector();
                let mut minus = p.to_dvector();
                plus[col] += h;
                minus[col] -= h;
                let fp = flat(&model, &SplitVector::from_slice(plus.as_slice()));
                let fm = flat(&model, &SplitVector::from_slice(minus.as_slice()));
                for row in 0..4 {
                    let fd = (fp[row] - fm[row]) / (2.0 * h);
                    assert!((fd - j[(row, col)]).abs() < 1e-8, "{row},{col}");
                }
            }
        }
    }

    #[test]
    fn identities_hold_on_the_grid_for_every_tier() {
        for nl in [
            Nonlinearity::Linear,
            Nonlinearity::Polynomial { eps: 0.05 },
            Nonlinearity::PolynomialSymmetric { eps: 0.05 },
        ] {
            for mut spec in [ModelSpec::default_d3(), ModelSpec::default_d4()] {
                spec.nonlinearity = nl;
                spec.symmetry_signs = None;
                let model = build_model(&spec).unwrap();
                let grid = box_grid(model.dim(), 10);
                assert_eq!(grid.len(), 1000);
                assert!(identity_defects(&model, &grid).iter().all(|d| *d == 0.0));
            }
        }
    }

    proptest::proptest! {
        #[test]
        fn identities_hold_at_random_points(
            x in -1.0f64..1.0, y in -1.0f64..1.0, z1 in -1.0f64..1.0, z2 in -1.0f64..1.0, eps in -1.0f64..1.0,
        ) {
            for nl in [Nonlinearity::Polynomial { eps }, Nonlinearity::PolynomialSymmetric { eps }] {
                let mut spec = ModelSpec::default_d4();
                spec.nonlinearity = nl;
                spec.symmetry_signs = None;
                let model = build_model(&spec).unwrap();
                let d = identity_defects(&model, &[SplitVector::new(x, y, vec![z1, z2])]);
                proptest::prop_assert!(d.iter().all(|v| *v < 1e-12), "{:?}", d);
            }
        }
    }

    fn flat(model: &SaddleModel, p: &SplitVector) -> Vec<f64> {
        let (f1, f2, f3) = model.nonlinear_terms(p);
        let mut v = vec![f1, f2];
        v.extend(f3);
        v
    }
}
