//! Flow-side background: exponents at the origin of the Lorenz and
//! Morioka–Shimizu systems, the (C3') exponent conditions, and a
//! geometric-Lorenz (ABS) Poincaré map as an explicit skew product.

use std::io::Write;

use nalgebra::{Complex, Matrix3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{HetdimError, Result};
use crate::par::par_map;

const HYPERBOLIC_GAP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlowSystem {
    Lorenz { sigma: f64, rho: f64, beta: f64 },
    MoriokaShimizu { alpha: f64, lambda: f64 },
}

impl FlowSystem {
    pub fn classical_lorenz() -> Self {
        FlowSystem::Lorenz {
            sigma: 10.0,
            rho: 28.0,
            beta: 8.0 / 3.0,
        }
    }

    /// Linearization at the origin.
    pub fn jacobian_at_origin(&self) -> Matrix3<f64> {
        match *self {
            FlowSystem::Lorenz { sigma, rho, beta } => {
                Matrix3::new(-sigma, sigma, 0.0, rho, -1.0, 0.0, 0.0, 0.0, -beta)
            }
            FlowSystem::MoriokaShimizu { alpha, lambda } => {
                Matrix3::new(0.0, 1.0, 0.0, 1.0, -lambda, 0.0, 0.0, 0.0, -alpha)
            }
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            FlowSystem::Lorenz { sigma, rho, beta } => sigma > 0.0 && rho > 0.0 && beta > 0.0,
            FlowSystem::MoriokaShimizu { alpha, lambda } => alpha > 0.0 && lambda > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(HetdimError::validation(format!("{self:?}: parameters must be positive")))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowExponents {
    /// Unstable exponent.
    pub beta: f64,
    /// Weak stable exponent, nearest to the imaginary axis.
    pub alpha: f64,
    /// Remaining stable exponents as `[re, im]`, by decreasing real part.
    pub alpha_strong: Vec<[f64; 2]>,
}

/// Roots of `s^3 + a s^2 + b s + c`, by the trigonometric form when all
/// three are real and Cardano's formula otherwise.
pub fn cubic_roots(a: f64, b: f64, c: f64) -> [Complex<f64>; 3] {
    let shift = -a / 3.0;
    let p = b - a * a / 3.0;
    let q = 2.0 * a * a * a / 27.0 - a * b / 3.0 + c;
    let disc = (q / 2.0).powi(2) + (p / 3.0).powi(3);
    if disc <= 0.0 && p < 0.0 {
        let r = 2.0 * (-p / 3.0).sqrt();
        let arg = (3.0 * q / (p * r)).clamp(-1.0, 1.0);
        let phi = arg.acos() / 3.0;
        let t = |k: f64| r * (phi - 2.0 * std::f64::consts::PI * k / 3.0).cos() + shift;
        return [Complex::new(t(0.0), 0.0), Complex::new(t(1.0), 0.0), Complex::new(t(2.0), 0.0)];
    }
    let sq = disc.max(0.0).sqrt();
    let u = (-q / 2.0 + sq).cbrt();
    let v = (-q / 2.0 - sq).cbrt();
    let real = u + v + shift;
    let re = -(u + v) / 2.0 + shift;
    let im = (u - v) * 3f64.sqrt() / 2.0;
    [Complex::new(real, 0.0), Complex::new(re, im), Complex::new(re, -im)]
}

/// Eigenvalues of a 3x3 matrix from its characteristic polynomial.
pub fn eigenvalues3(m: &Matrix3<f64>) -> [Complex<f64>; 3] {
    let tr = m.trace();
    let minors = m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)] + m[(0, 0)] * m[(2, 2)]
        - m[(0, 2)] * m[(2, 0)]
        + m[(1, 1)] * m[(2, 2)]
        - m[(1, 2)] * m[(2, 1)];
    cubic_roots(-tr, minors, -m.determinant())
}

pub fn equilibrium_exponents(system: &FlowSystem) -> Result<FlowExponents> {
    system.validate()?;
    let mut ev = eigenvalues3(&system.jacobian_at_origin()).to_vec();
    if let Some(e) = ev.iter().find(|e| e.re.abs() < HYPERBOLIC_GAP) {
        return Err(HetdimError::numeric(format!(
            "non-hyperbolic origin: eigenvalue {} + {}i",
            e.re, e.im
        )));
    }
    ev.sort_by(|a, b| b.re.partial_cmp(&a.re).unwrap_or(std::cmp::Ordering::Equal));
    let unstable = ev.iter().filter(|e| e.re > 0.0).count();
    if unstable != 1 || ev[0].im != 0.0 {
        return Err(HetdimError::validation(format!(
            "origin needs exactly one real unstable exponent, found {unstable}"
        )));
    }
    if ev[1].im != 0.0 {
        return Err(HetdimError::validation(
            "the leading stable exponent is complex; (C3') needs it real",
        ));
    }
    Ok(FlowExponents {
        beta: ev[0].re,
        alpha: ev[1].re,
        alpha_strong: ev[2..].iter().map(|e| [e.re, e.im]).collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct C3PrimeCheck {
    pub ok: bool,
    /// `Re alpha_1 - 2 alpha`; negative when the first inequality holds.
    pub strong_margin: f64,
    /// `alpha + 2 beta / 3`; negative when the second inequality holds.
    pub weak_margin: f64,
}

pub fn check_c3prime(exp: &FlowExponents) -> C3PrimeCheck {
    let re1 = exp.alpha_strong.first().map_or(f64::NEG_INFINITY, |a| a[0]);
    let strong_margin = re1 - 2.0 * exp.alpha;
    let weak_margin = exp.alpha + 2.0 * exp.beta / 3.0;
    C3PrimeCheck {
        ok: strong_margin < 0.0 && weak_margin < 0.0,
        strong_margin,
        weak_margin,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AbsConfig {
    /// `u -> 0+` lands at `-nu` (the point `M1`), `u -> 0-` at `+nu`.
    pub nu: f64,
    pub amplitude: f64,
    /// Exponent of the cusp, in (1/2, 1).
    pub rho: f64,
    /// Contraction rate of the fibre map in `v`.
    pub contraction: f64,
    /// Fibre offset `sign(u) * fibre_shift`.
    pub fibre_shift: f64,
    pub half_width: f64,
}

impl Default for AbsConfig {
    fn default() -> Self {
        AbsConfig {
            nu: 0.95,
            amplitude: 1.9,
            rho: 0.7,
            contraction: 0.4,
            fibre_shift: 0.5,
            half_width: 1.0,
        }
    }
}

impl AbsConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rho > 0.5 && self.rho < 1.0) {
            return Err(HetdimError::validation(format!("rho={} must lie in (1/2, 1)", self.rho)));
        }
        if !(self.amplitude > 0.0 && self.half_width > 0.0 && self.contraction.abs() < 1.0) {
            return Err(HetdimError::validation(
                "amplitude and half_width must be positive and |contraction| < 1",
            ));
        }
        Ok(())
    }

    /// Lower bound of `|du'/du|` on the domain, attained at its edge.
    pub fn expansion_bound(&self) -> f64 {
        self.amplitude * self.rho * self.half_width.powf(self.rho - 1.0)
    }

    /// `max |u'|` over the domain.
    pub fn image_extent(&self) -> f64 {
        (self.amplitude * self.half_width.powf(self.rho) - self.nu)
            .abs()
            .max(self.nu)
    }

    /// `max |v'|` over the trapping box.
    pub fn fibre_extent(&self) -> f64 {
        self.contraction.abs() * self.half_width + self.fibre_shift.abs()
    }
}

/// Quotient map; `None` on `Pi_0 = {u = 0}`, where orbits tend to the saddle.
pub fn abs_quotient_step(cfg: &AbsConfig, u: f64) -> Option<f64> {
    if u == 0.0 {
        return None;
    }
    Some(u.signum() * (-cfg.nu + cfg.amplitude * u.abs().powf(cfg.rho)))
}

pub fn abs_quotient_derivative(cfg: &AbsConfig, u: f64) -> f64 {
    cfg.amplitude * cfg.rho * u.abs().powf(cfg.rho - 1.0)
}

fn abs_step(cfg: &AbsConfig, (u, v): (f64, f64)) -> Option<(f64, f64)> {
    let next = abs_quotient_step(cfg, u)?;
    Some((next, cfg.contraction * v + u.signum() * cfg.fibre_shift))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbsOrbit {
    pub points: Vec<(f64, f64)>,
    /// `+1` on `Pi_1` (u > 0), `-1` on `Pi_2`, per step taken.
    pub symbols: Vec<i8>,
    /// The orbit hit `Pi_0` and ended at the saddle.
    pub absorbed: bool,
}

pub fn simulate_poincare(cfg: &AbsConfig, start: (f64, f64), n: usize) -> AbsOrbit {
    let mut points = vec![start];
    let mut symbols = vec![];
    let mut cur = start;
    for _ in 0..n {
        let sym = if cur.0 > 0.0 { 1 } else { -1 };
        match abs_step(cfg, cur) {
            Some(next) => {
                symbols.push(sym);
                points.push(next);
                cur = next;
            }
            None => {
                return AbsOrbit {
                    points,
                    symbols,
                    absorbed: true,
                }
            }
        }
    }
    AbsOrbit {
        points,
        symbols,
        absorbed: false,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrappingReport {
    pub seeds: usize,
    pub steps: usize,
    pub escaped: usize,
    pub absorbed: usize,
    pub max_abs_u: f64,
    pub max_abs_v: f64,
    pub min_expansion: f64,
}

/// Runs `seeds` random orbits of `steps` returns and a grid expansion check.
pub fn trapping_check(cfg: &AbsConfig, seeds: usize, steps: usize, rng_seed: u64) -> Result<TrappingReport> {
    cfg.validate()?;
    let w = cfg.half_width;
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let starts: Vec<(f64, f64)> = (0..seeds)
        .map(|_| (rng.gen_range(-w..w), rng.gen_range(-w..w)))
        .collect();
    let orbits = par_map(&starts, |s| simulate_poincare(cfg, *s, steps));
    let (mut escaped, mut absorbed, mut mu, mut mv) = (0, 0, 0.0f64, 0.0f64);
    for o in &orbits {
        let (ou, ov) = o
            .points
            .iter()
            .skip(1)
            .fold((0.0f64, 0.0f64), |(a, b), p| (a.max(p.0.abs()), b.max(p.1.abs())));
        if ou >= w || ov >= w {
            escaped += 1;
        }
        absorbed += o.absorbed as usize;
        mu = mu.max(ou);
        mv = mv.max(ov);
    }
    let grid = 2000;
    let min_expansion = (1..=grid)
        .map(|i| abs_quotient_derivative(cfg, w * i as f64 / grid as f64))
        .fold(f64::INFINITY, f64::min);
    Ok(TrappingReport {
        seeds,
        steps,
        escaped,
        absorbed,
        max_abs_u: mu,
        max_abs_v: mv,
        min_expansion,
    })
}

/// Orbit CSV: `step, u, v, symbol` (symbol empty for the last point).
pub fn write_orbit_csv<W: Write>(out: W, orbit: &AbsOrbit) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["step", "u", "v", "symbol"])?;
    for (i, p) in orbit.points.iter().enumerate() {
        let sym = orbit.symbols.get(i).map_or(String::new(), |s| s.to_string());
        w.write_record([i.to_string(), format!("{:e}", p.0), format!("{:e}", p.1), sym])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::dense_eigenvalues;
    use proptest::prelude::*;

    fn sorted_re(mut v: Vec<Complex<f64>>) -> Vec<Complex<f64>> {
        v.sort_by(|a, b| (b.re, b.im).partial_cmp(&(a.re, a.im)).unwrap());
        v
    }

    #[test]
    fn lorenz_exponents_match_quadratic_block() {
        let e = equilibrium_exponents(&FlowSystem::classical_lorenz()).unwrap();
        let root = 1201f64.sqrt();
        assert!((e.beta - (-11.0 + root) / 2.0).abs() < 1e-12);
        assert!((e.alpha + 8.0 / 3.0).abs() < 1e-12);
        assert!((e.alpha_strong[0][0] - (-11.0 - root) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn morioka_shimizu_exponents_match_quadratic_block() {
        let sys = FlowSystem::MoriokaShimizu { alpha: 0.5, lambda: 1.0 };
        let e = equilibrium_exponents(&sys).unwrap();
        let root = 5f64.sqrt();
        assert!((e.beta - (-1.0 + root) / 2.0).abs() < 1e-12);
        assert!((e.alpha + 0.5).abs() < 1e-12);
        assert!((e.alpha_strong[0][0] - (-1.0 - root) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn c3prime_on_the_two_models() {
        let lorenz = check_c3prime(&equilibrium_exponents(&FlowSystem::classical_lorenz()).unwrap());
        assert!(!lorenz.ok);
        let expected = -8.0 / 3.0 + (-11.0 + 1201f64.sqrt()) / 3.0;
        assert!((lorenz.weak_margin - expected).abs() < 1e-12);
        assert!((lorenz.weak_margin - 5.219).abs() < 1e-3);
        let ms = check_c3prime(
            &equilibrium_exponents(&FlowSystem::MoriokaShimizu { alpha: 0.5, lambda: 1.0 }).unwrap(),
        );
        assert!(ms.ok, "{ms:?}");
        assert!((ms.strong_margin - (-(1.0 + 5f64.sqrt()) / 2.0 + 1.0)).abs() < 1e-12);
        assert!((ms.weak_margin - (-0.5 + (5f64.sqrt() - 1.0) / 3.0)).abs() < 1e-12);
    }

    #[test]
    fn boundary_case_fails_with_zero_margin() {
        let e = FlowExponents {
            beta: 1.5,
            alpha: -1.0,
            alpha_strong: vec![[-3.0, 0.0]],
        };
        let c = check_c3prime(&e);
        assert!(!c.ok);
        assert_eq!(c.weak_margin, 0.0);
    }

    #[test]
    fn non_hyperbolic_origin_is_rejected() {
        // rho = 1 puts a zero eigenvalue in the (x, y) block.
        let sys = FlowSystem::Lorenz {
            sigma: 10.0,
            rho: 1.0,
            beta: 8.0 / 3.0,
        };
        assert!(equilibrium_exponents(&sys).is_err());
    }

    #[test]
    fn exponents_are_even_under_the_symmetry() {
        // (x, y) -> (-x, -y) conjugates the linearization by diag(-1, -1, 1).
        let s = Matrix3::from_diagonal(&nalgebra::Vector3::new(-1.0, -1.0, 1.0));
        for sys in [
            FlowSystem::classical_lorenz(),
            FlowSystem::MoriokaShimizu { alpha: 0.5, lambda: 1.0 },
        ] {
            let j = sys.jacobian_at_origin();
            let a = sorted_re(eigenvalues3(&j).to_vec());
            let b = sorted_re(eigenvalues3(&(s * j * s)).to_vec());
            for (x, y) in a.iter().zip(&b) {
                assert!((x - y).norm() < 1e-12);
            }
        }
    }

    fn paired_distance(a: &[Complex<f64>], b: &[Complex<f64>]) -> f64 {
        let mut used = vec![false; b.len()];
        let mut worst = 0.0f64;
        for x in a {
            let (j, d) = b
                .iter()
                .enumerate()
                .filter(|(j, _)| !used[*j])
                .map(|(j, y)| (j, (x - y).norm()))
                .min_by(|p, q| p.1.partial_cmp(&q.1).unwrap())
                .unwrap();
            used[j] = true;
            worst = worst.max(d);
        }
        worst
    }

    proptest! {
        #[test]
        fn cubic_roots_agree_with_dense_solver(entries in prop::collection::vec(-5.0f64..5.0, 9)) {
            let m = Matrix3::from_row_slice(&entries);
            let ours = eigenvalues3(&m);
            let oracle = dense_eigenvalues(&nalgebra::DMatrix::from_row_slice(3, 3, &entries));
            // Nearly repeated roots lose half the digits in either route.
            let d = paired_distance(&ours, &oracle);
            prop_assert!(d < 1e-6 * m.norm().max(1.0), "{:?} vs {:?}", ours, oracle);
        }
    }

    #[test]
    fn quotient_map_limits_and_expansion() {
        let cfg = AbsConfig::default();
        assert!((abs_quotient_step(&cfg, 1e-300).unwrap() + cfg.nu).abs() < 1e-12);
        assert!((abs_quotient_step(&cfg, -1e-300).unwrap() - cfg.nu).abs() < 1e-12);
        assert_eq!(abs_quotient_step(&cfg, 0.0), None);
        assert!((cfg.expansion_bound() - 1.9 * 0.7).abs() < 1e-15);
        assert!(cfg.expansion_bound() > 1.0);
        assert!(cfg.image_extent() < cfg.half_width);
        assert!(cfg.fibre_extent() < cfg.half_width);
    }

    #[test]
    fn trapping_region_holds_for_ten_thousand_seeds() {
        let cfg = AbsConfig::default();
        let r = trapping_check(&cfg, 10_000, 200, 7).unwrap();
        assert_eq!(r.escaped, 0);
        assert!(r.max_abs_u < cfg.half_width && r.max_abs_v < cfg.half_width);
        assert!(r.min_expansion >= cfg.expansion_bound() - 1e-12);
    }

    #[test]
    fn mirrored_orbits_have_flipped_symbols() {
        let cfg = AbsConfig::default();
        let a = simulate_poincare(&cfg, (0.3, 0.1), 50);
        let b = simulate_poincare(&cfg, (-0.3, -0.1), 50);
        assert_eq!(a.symbols.len(), b.symbols.len());
        assert!(a.symbols.iter().zip(&b.symbols).all(|(x, y)| *x == -*y));
        assert!(a.points.iter().zip(&b.points).all(|(p, q)| p.0 == -q.0 && p.1 == -q.1));
    }

    #[test]
    fn orbit_csv_rows() {
        let cfg = AbsConfig::default();
        let o = simulate_poincare(&cfg, (0.3, 0.1), 3);
        let mut buf = vec![];
        write_orbit_csv(&mut buf, &o).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 5);
        assert!(text.lines().last().unwrap().ends_with(','));
    }
}
