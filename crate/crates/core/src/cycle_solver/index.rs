//! Index of period-2 orbits: dense eigenvalues as ground truth and the
//! closed-form two-dimensional reduction as a consistency check.

use nalgebra::{Complex, DMatrix};
use serde::{Deserialize, Serialize};

use super::period2::{IndexScales, PeriodTwoOrbit};
use crate::cone_analysis::{invariant_cu_subspace, JacobianChain};
use crate::error::{HetdimError, Result};
use crate::global_map::GlobalMapCoeffs;
use crate::numerics::dense_eigenvalues;
use crate::saddle_model::SaddleModel;

pub const UNIT_CIRCLE_GAP: f64 = 1e-8;

/// Spectrum of a chain product from the dense solver: the two largest
/// eigenvalues of the balanced product, and the `D-2` smallest as inverses
/// of the largest eigenvalues of the inverse product.
#[derive(Debug, Clone)]
pub struct DenseSpectrum {
    pub cu: Vec<Complex<f64>>,
    pub s: Vec<Complex<f64>>,
}

impl DenseSpectrum {
    pub fn all(&self) -> Vec<Complex<f64>> {
        self.cu.iter().chain(&self.s).cloned().collect()
    }
}

pub fn dense_spectrum(chain: &JacobianChain) -> Result<DenseSpectrum> {
    let n = chain.dim();
    let top = dense_eigenvalues(&chain.product());
    let mut inv = DMatrix::identity(n, n);
    for f in &chain.factors {
        let fi = f
            .clone()
            .try_inverse()
            .ok_or_else(|| HetdimError::numeric("singular factor in chain"))?;
        inv *= fi;
    }
    let bottom = dense_eigenvalues(&inv);
    let s = bottom[..n - 2]
        .iter()
        .map(|e| Complex::new(1.0, 0.0) / e)
        .collect();
    Ok(DenseSpectrum {
        cu: top[..2].to_vec(),
        s,
    })
}

fn count_outside(ev: &[Complex<f64>]) -> Result<usize> {
    let mut count = 0;
    for e in ev {
        let r = e.norm();
        if (r - 1.0).abs() < UNIT_CIRCLE_GAP {
            return Err(HetdimError::numeric(format!(
                "multiplier modulus {r} within {UNIT_CIRCLE_GAP:e} of 1; adjust parameters"
            )));
        }
        if r > 1.0 {
            count += 1;
        }
    }
    Ok(count)
}

/// Number of multipliers of `DT^2` outside the unit circle.
pub fn orbit_index(model: &SaddleModel, coeffs: &GlobalMapCoeffs, orbit: &PeriodTwoOrbit) -> Result<usize> {
    let spec = dense_spectrum(&orbit.chain(model, coeffs)?)?;
    count_outside(&spec.all())
}

/// Index of the saddle fixed point from its multipliers.
pub fn fixed_point_index(model: &SaddleModel) -> Result<usize> {
    let m = &model.multipliers;
    let mut ev = vec![Complex::new(m.lambda, 0.0), Complex::new(m.gamma, 0.0)];
    ev.extend(m.strong.iter().map(|s| Complex::new(*s, 0.0)));
    count_outside(&ev)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IndexCheck {
    pub k: usize,
    pub m: usize,
    pub s: f64,
    pub index: usize,
    /// `s in (-1, 1)` agrees with `index == 2`.
    pub matches: bool,
    pub trace_cu: f64,
    pub det_cu: f64,
    pub trace_formula: f64,
    pub det_formula: f64,
    /// `|tr_cu - tr_formula| / (1 + |det_cu|)`.
    pub trace_deviation: f64,
    /// `|det_cu / det_formula - 1|`.
    pub det_deviation: f64,
    /// `det_cu / (lambda gamma)^(k+m)`.
    pub det_constant: f64,
}

pub fn index2_criterion(
    model: &SaddleModel,
    coeffs: &GlobalMapCoeffs,
    orbit: &PeriodTwoOrbit,
) -> Result<IndexCheck> {
    let chain = orbit.chain(model, coeffs)?;
    let cu = invariant_cu_subspace(&chain)?;
    let tr = (cu.eigenvalues[0] + cu.eigenvalues[1]).re;
    let det = (cu.eigenvalues[0] * cu.eigenvalues[1]).re;
    let scales = IndexScales::new(model, coeffs, orbit.k, orbit.m);
    let s = scales.s_value(orbit.eta.0, orbit.eta.1);
    let index = count_outside(&dense_spectrum(&chain)?.all())?;
    let tf = scales.trace_formula(orbit.eta.0, orbit.eta.1);
    let lg = (model.multipliers.lambda * model.multipliers.gamma).powi((orbit.k + orbit.m) as i32);
    Ok(IndexCheck {
        k: orbit.k,
        m: orbit.m,
        s,
        index,
        matches: (s.abs() < 1.0) == (index == 2),
        trace_cu: tr,
        det_cu: det,
        trace_formula: tf,
        det_formula: scales.det_formula,
        trace_deviation: (tr - tf).abs() / (1.0 + det.abs()),
        det_deviation: (det / scales.det_formula - 1.0).abs(),
        det_constant: det / lg,
    })
}
