//! Invariant subspaces `E^cu` and `E^s` of return-map derivatives, found by
//! frame power iteration and certified by cone images, plus strong-stable
//! leaves of the local map.

use nalgebra::{Complex, DMatrix};
use serde::{Deserialize, Serialize};

use crate::error::{HetdimError, Result};
use crate::global_map::GlobalMapCoeffs;
use crate::local_map::iterate_local;
use crate::numerics::{ls_slope, orthonormalize, small_eigenvalues, sort_by_modulus};
use crate::saddle_model::{SaddleModel, SplitVector};

pub const K_MAX: f64 = 1e3;
pub const FRAME_ITER: usize = 30;
pub const FRAME_TOL: f64 = 1e-13;
pub const LEAF_STEP: f64 = 1e-3;

/// Derivatives along an orbit segment, in the order they are applied.
#[derive(Debug, Clone)]
pub struct JacobianChain {
    pub factors: Vec<DMatrix<f64>>,
    /// Stay numbers of the returns covered by the chain.
    pub stays: Vec<usize>,
}

impl JacobianChain {
    pub fn dim(&self) -> usize {
        self.factors[0].nrows()
    }

    pub fn total_stay(&self) -> usize {
        self.stays.iter().sum()
    }

    pub fn apply(&self, v: &DMatrix<f64>) -> DMatrix<f64> {
        self.factors.iter().fold(v.clone(), |acc, f| f * acc)
    }

    /// Applies the inverse product; `None` if a factor is singular.
    pub fn apply_inverse(&self, v: &DMatrix<f64>) -> Option<DMatrix<f64>> {
        let mut acc = v.clone();
        for f in self.factors.iter().rev() {
            acc = f.clone().lu().solve(&acc)?;
        }
        Some(acc)
    }

    pub fn product(&self) -> DMatrix<f64> {
        let n = self.dim();
        self.apply(&DMatrix::identity(n, n))
    }

    pub fn determinant(&self) -> f64 {
        self.factors.iter().map(|f| f.determinant()).product()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConeKind {
    Cu,
    S,
}

#[derive(Debug, Clone)]
pub struct ConeWitness {
    pub kind: ConeKind,
    pub k_const: f64,
    /// Orthonormal basis of the subspace (2 or D-2 columns).
    pub subspace: DMatrix<f64>,
    /// Eigenvalues of the product restricted to the subspace, larger first.
    pub eigenvalues: Vec<Complex<f64>>,
    pub contraction_ratio: f64,
    pub iterations: usize,
    /// `max |eigenvalue| / |lambda_hat|^(total stay)`; s-kind only.
    pub bound_constant: Option<f64>,
}

impl ConeWitness {
    pub fn moduli(&self) -> Vec<f64> {
        self.eigenvalues.iter().map(|e| e.norm()).collect()
    }

    pub fn orthonormality_error(&self) -> f64 {
        let n = self.subspace.ncols();
        (self.subspace.transpose() * &self.subspace - DMatrix::identity(n, n)).amax()
    }
}

fn subspace_increment(old: &DMatrix<f64>, new: &DMatrix<f64>) -> f64 {
    let proj = old * (old.transpose() * new);
    (new - proj).amax()
}

/// Unit direction samples on the sphere of `R^n` (n = 1 or 2 exact, larger
/// n uses coordinate axes and their pairwise diagonals).
fn sphere_samples(n: usize, count: usize) -> Vec<Vec<f64>> {
    match n {
        1 => vec![vec![1.0], vec![-1.0]],
        2 => (0..count)
            .map(|i| {
                let t = std::f64::consts::TAU * i as f64 / count as f64;
                vec![t.cos(), t.sin()]
            })
            .collect(),
        _ => {
            let mut out = vec![];
            for i in 0..n {
                for s in [1.0, -1.0] {
                    let mut v = vec![0.0; n];
                    v[i] = s;
                    out.push(v);
                }
                for j in (i + 1)..n {
                    for (a, b) in [(1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)] {
                        let mut v = vec![0.0; n];
                        v[i] = a / 2f64.sqrt();
                        v[j] = b / 2f64.sqrt();
                        out.push(v);
                    }
                }
            }
            out
        }
    }
}

/// Vectors of the cu-cone `||dz|| <= K (|dx| + |dy|)`, as columns.
fn cu_cone_samples(dim: usize, k: f64) -> DMatrix<f64> {
    let nz = dim - 2;
    let zs = sphere_samples(nz, 16);
    let mut cols = vec![];
    for i in 0..48 {
        let t = std::f64::consts::PI * i as f64 / 48.0;
        let (c, s) = (t.cos(), t.sin());
        let l1 = c.abs() + s.abs();
        for r in [0.0, 0.5, 1.0] {
            for z in &zs {
                let mut v = vec![c, s];
                v.extend(z.iter().map(|zi| r * k * l1 * zi));
                cols.push(v);
                if r == 0.0 {
                    break;
                }
            }
        }
    }
    DMatrix::from_fn(dim, cols.len(), |r, c| cols[c][r])
}

/// Vectors of the s-cone `max(|dx|, |dy|) <= K ||dz||`, as columns.
fn s_cone_samples(dim: usize, k: f64) -> DMatrix<f64> {
    let nz = dim - 2;
    let zs = sphere_samples(nz, 16);
    let mut cols = vec![];
    for z in &zs {
        for i in 0..16 {
            let t = std::f64::consts::TAU * i as f64 / 16.0;
            for r in [0.0, 0.5, 1.0] {
                let mut v = vec![r * k * t.cos().signum() * t.cos().abs().min(1.0), r * k * t.sin()];
                v[0] = r * k * t.cos();
                v.extend(z.iter().cloned());
                cols.push(v);
            }
        }
    }
    DMatrix::from_fn(dim, cols.len(), |r, c| cols[c][r])
}

fn cu_opening(w: &DMatrix<f64>) -> f64 {
    let n = w.nrows();
    (0..w.ncols())
        .map(|c| {
            let zn = (2..n).map(|r| w[(r, c)] * w[(r, c)]).sum::<f64>().sqrt();
            zn / (w[(0, c)].abs() + w[(1, c)].abs())
        })
        .fold(0.0, f64::max)
}

fn s_opening(w: &DMatrix<f64>) -> f64 {
    let n = w.nrows();
    (0..w.ncols())
        .map(|c| {
            let zn = (2..n).map(|r| w[(r, c)] * w[(r, c)]).sum::<f64>().sqrt();
            w[(0, c)].abs().max(w[(1, c)].abs()) / zn
        })
        .fold(0.0, f64::max)
}

fn cone_ladder() -> Vec<f64> {
    let mut ks: Vec<f64> = (0..10).map(|j| 2f64.powi(j)).collect();
    ks.push(K_MAX);
    ks
}

/// Forward-invariant two-dimensional subspace of the chain product.
pub fn invariant_cu_subspace(chain: &JacobianChain) -> Result<ConeWitness> {
    let n = chain.dim();
    let mut frame = DMatrix::zeros(n, 2);
    frame[(0, 0)] = 1.0;
    frame[(1, 1)] = 1.0;
    let mut iterations = 0;
    for it in 1..=FRAME_ITER {
        iterations = it;
        let mut next = frame.clone();
        for f in &chain.factors {
            next = orthonormalize(&(f * next));
        }
        let inc = subspace_increment(&frame, &next);
        frame = next;
        if inc < FRAME_TOL {
            break;
        }
    }
    if frame.iter().any(|v| !v.is_finite()) {
        return Err(HetdimError::numeric("cu frame iteration produced non-finite values"));
    }
    // Graph basis [I; R] of the subspace; the restriction is the top block
    // of the product applied to it.
    let top = frame.rows(0, 2).clone_owned();
    let top_inv = top
        .try_inverse()
        .ok_or_else(|| HetdimError::numeric("cu subspace is not a graph over (x, y)"))?;
    let graph = &frame * top_inv;
    let image = chain.apply(&graph);
    let restricted = image.rows(0, 2).clone_owned();
    let mut eigenvalues = small_eigenvalues(&restricted);
    sort_by_modulus(&mut eigenvalues);

    let mut result = None;
    for k in cone_ladder() {
        let w = chain.apply(&cu_cone_samples(n, k));
        let ratio = cu_opening(&w) / k;
        if ratio < 1.0 {
            result = Some((k, ratio));
            break;
        }
    }
    let (k_const, contraction_ratio) = result.ok_or_else(|| {
        HetdimError::numeric(format!("cu cone not invariant for any K<={K_MAX}"))
    })?;
    Ok(ConeWitness {
        kind: ConeKind::Cu,
        k_const,
        subspace: frame,
        eigenvalues,
        contraction_ratio,
        iterations,
        bound_constant: None,
    })
}

/// Backward-invariant `(D-2)`-dimensional subspace of the chain product;
/// `lambda_hat` sets the scale of the reported bound constant.
pub fn invariant_s_subspace(chain: &JacobianChain, lambda_hat: f64) -> Result<ConeWitness> {
    let n = chain.dim();
    let nz = n - 2;
    let mut frame = DMatrix::zeros(n, nz);
    for i in 0..nz {
        frame[(2 + i, i)] = 1.0;
    }
    let singular = || HetdimError::numeric("singular factor in chain");
    let mut iterations = 0;
    for it in 1..=FRAME_ITER {
        iterations = it;
        let mut next = frame.clone();
        for f in chain.factors.iter().rev() {
            next = orthonormalize(&f.clone().lu().solve(&next).ok_or_else(singular)?);
        }
        let inc = subspace_increment(&frame, &next);
        frame = next;
        if inc < FRAME_TOL {
            break;
        }
    }
    if frame.iter().any(|v| !v.is_finite()) {
        return Err(HetdimError::numeric("s frame iteration produced non-finite values"));
    }
    let bottom = frame.rows(2, nz).clone_owned();
    let bottom_inv = bottom
        .try_inverse()
        .ok_or_else(|| HetdimError::numeric("s subspace is not a graph over z"))?;
    let graph = &frame * bottom_inv;
    let image = chain.apply_inverse(&graph).ok_or_else(singular)?;
    let restricted = image.rows(2, nz).clone_owned();
    let mut eigenvalues: Vec<Complex<f64>> = small_eigenvalues(&restricted)
        .into_iter()
        .map(|e| Complex::new(1.0, 0.0) / e)
        .collect();
    sort_by_modulus(&mut eigenvalues);

    let mut result = None;
    for k in cone_ladder() {
        let w = chain
            .apply_inverse(&s_cone_samples(n, k))
            .ok_or_else(singular)?;
        let ratio = s_opening(&w) / k;
        if ratio < 1.0 {
            result = Some((k, ratio));
            break;
        }
    }
    let (k_const, contraction_ratio) = result.ok_or_else(|| {
        HetdimError::numeric(format!("s cone not invariant for any K<={K_MAX}"))
    })?;
    let max_mod = eigenvalues.iter().map(|e| e.norm()).fold(0.0, f64::max);
    let bound = max_mod / lambda_hat.abs().powi(chain.total_stay() as i32);
    Ok(ConeWitness {
        kind: ConeKind::S,
        k_const,
        subspace: frame,
        eigenvalues,
        contraction_ratio,
        iterations,
        bound_constant: Some(bound),
    })
}

/// Slopes `d(x, y)/dz` of the strong-stable direction field: the columns
/// of a `(D-2)`-frame `E` give `E_xy * E_z^{-1}`.
pub fn frame_slopes(frame: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let nz = frame.ncols();
    let ez = frame.rows(2, nz).clone_owned();
    let inv = ez
        .try_inverse()
        .ok_or_else(|| HetdimError::numeric("strong-stable frame is not a graph over z"))?;
    Ok(frame.rows(0, 2).clone_owned() * inv)
}

/// Strong-stable direction at `p` for the local itinerary of length `k`:
/// the z-frame at `T0^k(p)` pulled back through the step derivatives.
pub fn local_stable_frame(model: &SaddleModel, p: &SplitVector, k: usize) -> Result<DMatrix<f64>> {
    let orbit = iterate_local(model, p, k)?;
    let chain = JacobianChain {
        factors: orbit.step_jacobians,
        stays: vec![k],
    };
    pull_back_z_frame(&chain, p.dim())
}

/// Pulls the coordinate z-frame at the end of a chain back to its start.
pub fn pull_back_z_frame(chain: &JacobianChain, dim: usize) -> Result<DMatrix<f64>> {
    let nz = dim - 2;
    let mut frame = DMatrix::zeros(dim, nz);
    for i in 0..nz {
        frame[(2 + i, i)] = 1.0;
    }
    for f in chain.factors.iter().rev() {
        frame = orthonormalize(
            &f.clone()
                .lu()
                .solve(&frame)
                .ok_or_else(|| HetdimError::numeric("singular factor in chain"))?,
        );
    }
    Ok(frame)
}

/// Integrates the leaf through `base` along the straight z-path to
/// `target_z` with Heun steps of length at most `LEAF_STEP`. `slopes`
/// returns the `2 x (D-2)` slope matrix of the direction field at a point.
pub fn integrate_leaf<F>(base: &SplitVector, target_z: &[f64], mut slopes: F) -> Result<Vec<SplitVector>>
where
    F: FnMut(&SplitVector) -> Result<DMatrix<f64>>,
{
    let nz = base.z.len();
    let dz: Vec<f64> = target_z.iter().zip(&base.z).map(|(t, z)| t - z).collect();
    let len = dz.iter().map(|v| v * v).sum::<f64>().sqrt();
    let steps = ((len / LEAF_STEP).ceil() as usize).max(1);
    let h: Vec<f64> = dz.iter().map(|v| v / steps as f64).collect();
    let advance = |p: &SplitVector, s: &DMatrix<f64>, frac: f64| {
        let mut q = p.clone();
        for j in 0..nz {
            q.x += frac * s[(0, j)] * h[j];
            q.y += frac * s[(1, j)] * h[j];
        }
        q
    };
    let mut out = vec![base.clone()];
    let mut cur = base.clone();
    for i in 1..=steps {
        let s0 = slopes(&cur)?;
        let mut pred = advance(&cur, &s0, 1.0);
        for j in 0..nz {
            pred.z[j] = base.z[j] + h[j] * i as f64;
        }
        let s1 = slopes(&pred)?;
        let avg = (s0 + s1) * 0.5;
        let mut next = advance(&cur, &avg, 1.0);
        next.z = pred.z.clone();
        if i == steps {
            next.z = target_z.to_vec();
        }
        out.push(next.clone());
        cur = next;
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LeafSample {
    pub base: SplitVector,
    pub k: usize,
    /// Leaf points along each z-direction sampled.
    pub points: Vec<SplitVector>,
    /// Secant slopes `(x - x*) / |z - z*|` and `(y - y*) / |z - z*|`, signed
    /// by the direction of travel.
    pub phi1: Vec<f64>,
    pub phi2: Vec<f64>,
    /// `max|phi1| / (lambda0^k |lambda|^-k)` and `max|phi2| / (|lambda_hat|^k |gamma|^-k)`.
    pub c1: f64,
    pub c2: f64,
}

/// Strong-stable leaf of the local map through `base`, sampled along each
/// z-axis direction out to `extent`.
pub fn strong_stable_leaf_with_extent(
    model: &SaddleModel,
    base: &SplitVector,
    k: usize,
    extent: f64,
) -> Result<LeafSample> {
    let nz = base.z.len();
    let mut points = vec![];
    let mut phi1 = vec![];
    let mut phi2 = vec![];
    for axis in 0..nz {
        for sign in [1.0, -1.0] {
            let mut target = base.z.clone();
            target[axis] += sign * extent;
            let path = integrate_leaf(base, &target, |p| {
                frame_slopes(&local_stable_frame(model, p, k)?)
            })?;
            for p in path.iter().skip(1) {
                let dist = p.z[axis] - base.z[axis];
                phi1.push((p.x - base.x) / dist);
                phi2.push((p.y - base.y) / dist);
            }
            points.extend(path.into_iter().skip(1));
        }
    }
    let m = &model.multipliers;
    let kk = k as i32;
    let scale1 = m.lambda0.powi(kk) / m.lambda.abs().powi(kk);
    let scale2 = m.lambda_hat.abs().powi(kk) / m.gamma.abs().powi(kk);
    let c1 = phi1.iter().fold(0.0f64, |a, v| a.max(v.abs())) / scale1;
    let c2 = phi2.iter().fold(0.0f64, |a, v| a.max(v.abs())) / scale2;
    Ok(LeafSample {
        base: base.clone(),
        k,
        points,
        phi1,
        phi2,
        c1,
        c2,
    })
}

pub const LEAF_EXTENT: f64 = 0.02;

pub fn strong_stable_leaf(
    model: &SaddleModel,
    _coeffs: &GlobalMapCoeffs,
    base: &SplitVector,
    k: usize,
) -> Result<LeafSample> {
    strong_stable_leaf_with_extent(model, base, k, LEAF_EXTENT)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LeafFit {
    pub ks: Vec<usize>,
    /// Secant slopes at `z* + extent` along the first z-axis.
    pub phi1: Vec<f64>,
    pub phi2: Vec<f64>,
    pub exponent1: f64,
    pub exponent2: f64,
    /// `ln(lambda0/|lambda|)` and `ln(|lambda_hat|/|gamma|)`.
    pub target1: f64,
    pub target2: f64,
    pub c1: f64,
    pub c2: f64,
}

impl LeafFit {
    pub fn rel_errors(&self) -> (f64, f64) {
        (
            ((self.exponent1 - self.target1) / self.target1).abs(),
            ((self.exponent2 - self.target2) / self.target2).abs(),
        )
    }
}

/// Base point of the strip `sigma_k` on the line `(x+, *, z+)`.
pub fn strip_base(model: &SaddleModel, coeffs: &GlobalMapCoeffs, k: usize) -> Result<SplitVector> {
    let r = crate::local_map::solve_cross_form(model, coeffs.x_plus, coeffs.y_minus, &coeffs.z_plus, k)?;
    Ok(r.start(coeffs.x_plus, &coeffs.z_plus))
}

/// Fits `ln|phi_i|` against `k` over the given stay numbers.
pub fn fit_leaf_exponents(model: &SaddleModel, coeffs: &GlobalMapCoeffs, ks: &[usize]) -> Result<LeafFit> {
    let samples = crate::par::par_map(ks, |&k| {
        let base = strip_base(model, coeffs, k)?;
        let leaf = strong_stable_leaf_with_extent(model, &base, k, LEAF_EXTENT)?;
        // The forward path along axis 0 ends at index steps-1.
        let steps = (LEAF_EXTENT / LEAF_STEP).ceil() as usize;
        Ok((leaf.phi1[steps - 1], leaf.phi2[steps - 1], leaf.c1, leaf.c2))
    });
    let samples: Vec<(f64, f64, f64, f64)> = samples.into_iter().collect::<Result<_>>()?;
    let kf: Vec<f64> = ks.iter().map(|k| *k as f64).collect();
    let l1: Vec<f64> = samples.iter().map(|s| s.0.abs().ln()).collect();
    let l2: Vec<f64> = samples.iter().map(|s| s.1.abs().ln()).collect();
    if l1.iter().chain(&l2).any(|v| !v.is_finite()) {
        return Err(HetdimError::numeric(
            "leaf slopes vanish; exponent fit needs a nonlinear model",
        ));
    }
    let m = &model.multipliers;
    Ok(LeafFit {
        ks: ks.to_vec(),
        phi1: samples.iter().map(|s| s.0).collect(),
        phi2: samples.iter().map(|s| s.1).collect(),
        exponent1: ls_slope(&kf, &l1),
        exponent2: ls_slope(&kf, &l2),
        target1: (m.lambda0 / m.lambda.abs()).ln(),
        target2: (m.lambda_hat.abs() / m.gamma.abs()).ln(),
        c1: samples.iter().map(|s| s.2).fold(0.0, f64::max),
        c2: samples.iter().map(|s| s.3).fold(0.0, f64::max),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::global_map::{first_return, t1_unchecked};
    use crate::local_map::iterate_end;
    use crate::numerics::{dense_eigenvalues, multiset_rel_distance};
    use crate::saddle_model::{build_model, ModelSpec, Nonlinearity};

    fn linear_return_chain(k: usize) -> (JacobianChain, GlobalMapCoeffs) {
        let model = build_model(&ModelSpec::default_d3()).unwrap();
        let c = GlobalMapCoeffs::default_for_dim(3);
        let p = strip_base(&model, &c, k).unwrap();
        let (q, j0) = iterate_end(&model, &p, k).unwrap();
        let (_, j1) = t1_unchecked(&c, &q);
        (
            JacobianChain {
                factors: vec![j0, j1],
                stays: vec![k],
            },
            c,
        )
    }

    #[test]
    fn single_block_cu_subspace_is_xy_plane() {
        let k = 14;
        let (chain, c) = linear_return_chain(k);
        let w = invariant_cu_subspace(&chain).unwrap();
        assert!(w.contraction_ratio < 1.0);
        assert!(w.orthonormality_error() < 1e-12);
        // Product of the two eigenvalues: the (x,y)-block determinant.
        let prod = w.eigenvalues[0] * w.eigenvalues[1];
        let lead = -c.b * c.c * (0.55f64 * 2.2).powi(k as i32);
        assert!((prod.re / lead - 1.0).abs() < 0.05);
        let dense = dense_eigenvalues(&chain.product());
        assert!(multiset_rel_distance(&w.eigenvalues, &dense[..2]) < 1e-8);
    }

    #[test]
    fn linear_s_subspace_is_z_axis() {
        let model = build_model(&ModelSpec::default_d3()).unwrap();
        let p = SplitVector::new(0.5, 1e-6, vec![0.02]);
        let orbit = iterate_local(&model, &p, 12).unwrap();
        let chain = JacobianChain {
            factors: orbit.step_jacobians,
            stays: vec![12],
        };
        let w = invariant_s_subspace(&chain, 0.4).unwrap();
        assert!((w.subspace[(2, 0)].abs() - 1.0).abs() < 1e-15);
        let expected = 0.25f64.powi(12);
        assert!((w.eigenvalues[0].re - expected).abs() < 1e-15 * expected);
        assert!(w.bound_constant.unwrap() <= 1.0);
    }

    #[test]
    fn complementarity_on_return_map() {
        let (chain, _) = linear_return_chain(16);
        let cu = invariant_cu_subspace(&chain).unwrap();
        let s = invariant_s_subspace(&chain, 0.4).unwrap();
        let mut all = cu.eigenvalues.clone();
        all.extend(s.eigenvalues.iter().cloned());
        let det: Complex<f64> = all.iter().product();
        assert!((det.re / chain.determinant() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn linear_leaves_are_z_fibres() {
        let model = build_model(&ModelSpec::default_d3()).unwrap();
        let c = GlobalMapCoeffs::default_for_dim(3);
        let base = strip_base(&model, &c, 12).unwrap();
        let leaf = strong_stable_leaf(&model, &c, &base, 12).unwrap();
        assert!(leaf.phi1.iter().all(|v| *v == 0.0));
        assert!(leaf.phi2.iter().all(|v| *v == 0.0));
        let first = integrate_leaf(&base, &base.z.clone(), |_| Ok(DMatrix::zeros(2, 1))).unwrap();
        assert_eq!(first[0], base);
    }

    #[test]
    fn leaf_commutes_with_symmetry() {
        let mut spec = ModelSpec::default_d3();
        spec.nonlinearity = Nonlinearity::PolynomialSymmetric { eps: 0.05 };
        let model = build_model(&spec).unwrap();
        let c = GlobalMapCoeffs::default_for_dim(3);
        let base = strip_base(&model, &c, 10).unwrap();
        let mirrored = model.apply_symmetry(&base).unwrap();
        let a = strong_stable_leaf_with_extent(&model, &base, 10, 0.01).unwrap();
        let b = strong_stable_leaf_with_extent(&model, &mirrored, 10, 0.01).unwrap();
        // Axis direction +1 at the base maps to direction -1 at the mirror (S = -1).
        let n = a.points.len() / 2;
        for i in 0..n {
            let ra = model.apply_symmetry(&a.points[i]).unwrap();
            assert!(ra.dist_max(&b.points[n + i]) < 1e-10);
        }
    }

    #[test]
    fn first_return_chain_has_invariant_cones_for_d4() {
        let mut spec = ModelSpec::default_d4();
        spec.symmetry_signs = None;
        let model = build_model(&spec).unwrap();
        let c = GlobalMapCoeffs::default_for_dim(4);
        let k = 12;
        let p = strip_base(&model, &c, k).unwrap();
        let (_, j) = first_return(&model, &c, &p, k).unwrap();
        let chain = JacobianChain {
            factors: vec![j],
            stays: vec![k],
        };
        let cu = invariant_cu_subspace(&chain).unwrap();
        let s = invariant_s_subspace(&chain, 0.4).unwrap();
        assert!(cu.contraction_ratio < 1.0 && s.contraction_ratio < 1.0);
        assert_eq!(s.subspace.ncols(), 2);
        assert!(s.orthonormality_error() < 1e-12);
    }
}
