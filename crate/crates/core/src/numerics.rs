//! Small numerical helpers shared by the solvers: a damped Newton method,
//! frame orthonormalization, closed-form small eigenvalues and the
//! balanced dense eigen-solver used as an independent check.

use nalgebra::{Complex, DMatrix, DVector};

use crate::error::{HetdimError, Result};

#[derive(Debug, Clone)]
pub struct NewtonOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Residual rows are multiplied by these weights before norms and solves.
    pub row_weights: Option<Vec<f64>>,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        NewtonOptions {
            tol: 1e-13,
            max_iter: 60,
            row_weights: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct NewtonOutcome {
    pub x: DVector<f64>,
    /// Weighted max-norm of the residual at `x`.
    pub residual: f64,
    pub iterations: usize,
}

fn weighted(r: &DVector<f64>, w: &Option<Vec<f64>>) -> DVector<f64> {
    match w {
        None => r.clone(),
        Some(w) => DVector::from_iterator(r.len(), r.iter().zip(w).map(|(a, b)| a * b)),
    }
}

/// Damped Newton iteration. `system` returns the residual and Jacobian;
/// a failed evaluation at a trial point halves the step. Iteration stops
/// at `tol` or when no step reduces the residual any further.
pub fn newton<F>(x0: DVector<f64>, mut system: F, opts: &NewtonOptions) -> Result<NewtonOutcome>
where
    F: FnMut(&DVector<f64>) -> Result<(DVector<f64>, DMatrix<f64>)>,
{
    let mut x = x0;
    let (r, mut jac) = system(&x)?;
    let mut r = weighted(&r, &opts.row_weights);
    let mut norm = r.amax();
    let mut iterations = 0;
    let mut extra = 0;
    while iterations < opts.max_iter {
        if norm <= opts.tol {
            // A couple of extra steps settle the last bits.
            if extra >= 2 || norm == 0.0 {
                break;
            }
            extra += 1;
        }
        iterations += 1;
        let jw = match &opts.row_weights {
            None => jac.clone(),
            Some(w) => {
                let mut j = jac.clone();
                for (i, wi) in w.iter().enumerate() {
                    j.row_mut(i).scale_mut(*wi);
                }
                j
            }
        };
        let step = match jw.lu().solve(&(-&r)) {
            Some(s) if s.iter().all(|v| v.is_finite()) => s,
            _ => break,
        };
        let mut damping = 1.0;
        let mut accepted = false;
        while damping >= 1.0 / 1024.0 {
            let trial = &x + &step * damping;
            if let Ok((tr, tj)) = system(&trial) {
                let tr = weighted(&tr, &opts.row_weights);
                let tn = tr.amax();
                if tn.is_finite() && (tn < norm || (norm <= opts.tol && tn <= norm)) {
                    x = trial;
                    r = tr;
                    jac = tj;
                    norm = tn;
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
    if norm > opts.tol {
        return Err(HetdimError::NonConvergence {
            solver: "newton",
            iterations,
            residual: norm,
        });
    }
    Ok(NewtonOutcome {
        x,
        residual: norm,
        iterations,
    })
}

/// Central-difference Jacobian with per-coordinate steps.
pub fn fd_jacobian<F>(x: &DVector<f64>, steps: &[f64], mut f: F) -> Result<DMatrix<f64>>
where
    F: FnMut(&DVector<f64>) -> Result<DVector<f64>>,
{
    let n = x.len();
    let mut cols = Vec::with_capacity(n);
    for (i, h) in steps.iter().enumerate() {
        let mut p = x.clone();
        let mut m = x.clone();
        p[i] += h;
        m[i] -= h;
        let fp = f(&p)?;
        let fm = f(&m)?;
        cols.push((fp - fm) / (2.0 * h));
    }
    let rows = cols[0].len();
    Ok(DMatrix::from_fn(rows, n, |r, c| cols[c][r]))
}

/// Modified Gram-Schmidt on the columns of `frame`.
pub fn orthonormalize(frame: &DMatrix<f64>) -> DMatrix<f64> {
    let mut q = frame.clone();
    for j in 0..q.ncols() {
        for i in 0..j {
            let proj = q.column(i).dot(&q.column(j));
            let qi = q.column(i).clone_owned();
            q.column_mut(j).axpy(-proj, &qi, 1.0);
        }
        let n = q.column(j).norm();
        if n > 0.0 {
            q.column_mut(j).scale_mut(1.0 / n);
        }
    }
    q
}

/// Eigenvalues of `[[a, b], [c, d]]`, larger modulus first.
pub fn eig2(a: f64, b: f64, c: f64, d: f64) -> [Complex<f64>; 2] {
    let tr = a + d;
    let det = a * d - b * c;
    let disc = tr * tr / 4.0 - det;
    if disc >= 0.0 {
        let s = disc.sqrt();
        // Avoid cancellation: compute the larger root first.
        let big = tr / 2.0 + s.copysign(tr);
        let small = if big != 0.0 { det / big } else { 0.0 };
        [Complex::new(big, 0.0), Complex::new(small, 0.0)]
    } else {
        let s = (-disc).sqrt();
        [Complex::new(tr / 2.0, s), Complex::new(tr / 2.0, -s)]
    }
}

/// Eigenvalues of a small square matrix: closed forms for 1x1 and 2x2,
/// the balanced dense solver otherwise.
pub fn small_eigenvalues(m: &DMatrix<f64>) -> Vec<Complex<f64>> {
    match m.nrows() {
        1 => vec![Complex::new(m[(0, 0)], 0.0)],
        2 => eig2(m[(0, 0)], m[(0, 1)], m[(1, 0)], m[(1, 1)]).to_vec(),
        _ => dense_eigenvalues(m),
    }
}

/// Eigenvalues from nalgebra's Schur decomposition after Parlett-Reinsch
/// balancing, sorted by decreasing modulus.
pub fn dense_eigenvalues(m: &DMatrix<f64>) -> Vec<Complex<f64>> {
    let mut b = m.clone();
    nalgebra::linalg::balancing::balance_parlett_reinsch(&mut b);
    let mut ev: Vec<Complex<f64>> = b.complex_eigenvalues().iter().cloned().collect();
    sort_by_modulus(&mut ev);
    ev
}

pub fn sort_by_modulus(ev: &mut [Complex<f64>]) {
    ev.sort_by(|a, b| {
        b.norm()
            .partial_cmp(&a.norm())
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(b.im.partial_cmp(&a.im).unwrap_or(std::cmp::Ordering::Equal))
    });
}

/// Greedy multiset distance: max over `a` of the relative distance to the
/// closest unused element of `b`. Infinite when lengths differ.
pub fn multiset_rel_distance(a: &[Complex<f64>], b: &[Complex<f64>]) -> f64 {
    if a.len() != b.len() {
        return f64::INFINITY;
    }
    let mut used = vec![false; b.len()];
    let mut worst = 0.0f64;
    for x in a {
        let mut best = f64::INFINITY;
        let mut idx = 0;
        for (j, y) in b.iter().enumerate() {
            if used[j] {
                continue;
            }
            let d = (x - y).norm() / x.norm().max(y.norm()).max(f64::MIN_POSITIVE);
            if d < best {
                best = d;
                idx = j;
            }
        }
        used[idx] = true;
        worst = worst.max(best);
    }
    worst
}

/// Least-squares slope of `ys` against `xs`.
pub fn ls_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}
