//! One runner per experiment kind. Runners compute in parallel and return
//! their artifacts as bytes; the caller does all file writing.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{Experiment, Prepared};
use crate::abs_lorenz::{
    check_c3prime, equilibrium_exponents, simulate_poincare, trapping_check, write_orbit_csv, FlowSystem,
};
use crate::cone_analysis::{fit_leaf_exponents, invariant_cu_subspace, invariant_s_subspace};
use crate::cycle_solver::{
    dense_spectrum, index2_criterion, replay_certificate, solve_hetdim_general, solve_hetdim_symmetric,
    solve_period2_targeted, CycleCertificate, IndexCheck, PeriodTwoOrbit, ReplayReport,
};
use crate::error::{HetdimError, Result};
use crate::numerics::multiset_rel_distance;
use crate::par::par_map;
use crate::tangency_forge::{forge_admissible_tangency, leading_splitting, solve_schedule, write_tangency_csv};

/// Relative tolerance on the trace/determinant reductions for `k, m >= 16`.
pub const REDUCTION_TOL: f64 = 0.1;
pub const COMPLEMENTARITY_TOL: f64 = 1e-8;
pub const BOUND_CONSTANT_MAX: f64 = 10.0;
pub const LEAF_TOL: f64 = 0.1;
pub const RATIO_TOL: f64 = 0.05;
pub const AREA_TOL: f64 = 0.15;
pub const CROSS_CHECK_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

impl Check {
    fn new(name: impl Into<String>, pass: bool, detail: impl Into<String>) -> Self {
        Check {
            name: name.into(),
            pass,
            detail: detail.into(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Artifact {
    /// Path relative to the output directory.
    pub path: String,
    pub bytes: Vec<u8>,
}

#[derive(Debug, Clone, Default)]
pub struct ExperimentOutput {
    pub artifacts: Vec<Artifact>,
    pub checks: Vec<Check>,
}

impl ExperimentOutput {
    fn json<T: Serialize>(&mut self, path: &str, value: &T) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(value)?;
        bytes.push(b'\n');
        self.artifacts.push(Artifact {
            path: path.to_string(),
            bytes,
        });
        Ok(())
    }

    fn csv(&mut self, path: &str, header: &[&str], rows: Vec<Vec<String>>) -> Result<()> {
        let mut w = csv::Writer::from_writer(vec![]);
        w.write_record(header)?;
        for r in rows {
            w.write_record(r)?;
        }
        let bytes = w.into_inner().map_err(|e| HetdimError::Io(e.into_error()))?;
        self.artifacts.push(Artifact {
            path: path.to_string(),
            bytes,
        });
        Ok(())
    }

    /// Records a failed work item, or passes input errors up.
    fn failure(&mut self, name: String, err: HetdimError) -> Result<()> {
        if err.is_input_error() {
            return Err(err);
        }
        self.checks.push(Check::new(name, false, err.to_string()));
        Ok(())
    }
}

fn e(v: f64) -> String {
    format!("{v:e}")
}

pub fn run(p: &Prepared) -> Result<ExperimentOutput> {
    match p.config.experiment {
        Experiment::ForgeTangency => forge_tangency(p),
        Experiment::Period2Sweep => period2_sweep(p),
        Experiment::HetdimSymmetric | Experiment::HetdimGeneral => hetdim(p),
        Experiment::ConeBattery => cone_battery(p),
        Experiment::LeafFit => leaf_fit(p),
        Experiment::C3primeScan => c3prime_scan(p),
        Experiment::AbsOrbits => abs_orbits(p),
    }
}

fn forge_tangency(p: &Prepared) -> Result<ExperimentOutput> {
    let mut out = ExperimentOutput::default();
    let ks = p.ks();
    let mut branches = vec![];
    let mut ratio_errors: [Vec<(usize, f64)>; 2] = [vec![], vec![]];
    for (&k, res) in ks.iter().zip(solve_schedule(&p.model, &p.coeffs, &ks)) {
        match res {
            Ok(bs) => {
                let opposite = bs[0].c_sign == -bs[1].c_sign;
                let closed = bs.iter().all(|b| b.c_value.signum() == b.c_closed_form.signum());
                out.checks.push(Check::new(
                    format!("branch_signs_k{k}"),
                    opposite && closed,
                    format!(
                        "c = ({:e}, {:e}), closed form ({:e}, {:e})",
                        bs[0].c_value, bs[1].c_value, bs[0].c_closed_form, bs[1].c_closed_form
                    ),
                ));
                let lead = leading_splitting(&p.model, &p.coeffs, k);
                for (i, b) in bs.iter().enumerate() {
                    ratio_errors[i].push((k, (b.mu_k / lead - 1.0).abs()));
                }
                branches.extend(bs);
            }
            Err(err) => out.failure(format!("tangency_k{k}"), err)?,
        }
    }
    for (i, errs) in ratio_errors.iter().enumerate() {
        if errs.is_empty() {
            continue;
        }
        let decreasing = errs.windows(2).all(|w| w[1].1 < w[0].1);
        let detail: Vec<String> = errs.iter().map(|(k, r)| format!("k={k}: {r:.3e}")).collect();
        out.checks.push(Check::new(
            format!("mu_ratio_branch{}", i + 1),
            errs[0].1 < 0.2 && decreasing,
            detail.join(", "),
        ));
    }
    let mut buf = vec![];
    write_tangency_csv(&mut buf, &branches)?;
    out.artifacts.push(Artifact {
        path: "tangency.csv".into(),
        bytes: buf,
    });
    match forge_admissible_tangency(&p.model, &p.coeffs, &ks) {
        Ok(f) => {
            out.checks.push(Check::new(
                "forge_admissible",
                true,
                format!("k={} branch={} stage={}", f.branch.k, f.branch.branch, f.branch.stage),
            ));
            out.json("forge.json", &f)?;
        }
        Err(err) => out.failure("forge_admissible".into(), err)?,
    }
    Ok(out)
}

fn sweep_items(p: &Prepared) -> Vec<(usize, usize, f64)> {
    p.pairs()
        .into_iter()
        .flat_map(|(k, m)| p.config.s_targets.iter().map(move |s| (k, m, *s)))
        .collect()
}

fn solve_sweep(p: &Prepared) -> Vec<((usize, usize, f64), Result<(PeriodTwoOrbit, IndexCheck)>)> {
    let items = sweep_items(p);
    let res = par_map(&items, |&(k, m, s)| {
        let o = solve_period2_targeted(&p.model, &p.coeffs, k, m, s, None)?;
        let ic = index2_criterion(&p.model, &p.coeffs, &o)?;
        Ok((o, ic))
    });
    items.into_iter().zip(res).collect()
}

fn period2_sweep(p: &Prepared) -> Result<ExperimentOutput> {
    let mut out = ExperimentOutput::default();
    let mut rows = vec![];
    let (mut agree, mut total, mut worst) = (0, 0, 0.0f64);
    for ((k, m, s), res) in solve_sweep(p) {
        match res {
            Ok((o, ic)) => {
                total += 1;
                agree += ic.matches as usize;
                if k >= 16 && m >= 16 {
                    worst = worst.max(ic.trace_deviation).max(ic.det_deviation);
                }
                rows.push(vec![
                    k.to_string(),
                    m.to_string(),
                    e(s),
                    e(o.mu),
                    e(ic.s),
                    ic.index.to_string(),
                    ic.matches.to_string(),
                    e(ic.trace_deviation),
                    e(ic.det_deviation),
                    e(o.newton_residual),
                ]);
            }
            Err(err) => out.failure(format!("period2_k{k}_m{m}_s{s}"), err)?,
        }
    }
    out.checks.push(Check::new(
        "index_agreement",
        total > 0 && agree == total,
        format!("{agree}/{total} orbits"),
    ));
    out.checks.push(Check::new(
        "trace_det_reduction",
        worst < REDUCTION_TOL,
        format!("max deviation {worst:.3e} over k, m >= 16"),
    ));
    out.csv(
        "period2.csv",
        &[
            "k",
            "m",
            "s_target",
            "mu",
            "s",
            "index",
            "criterion_matches",
            "trace_deviation",
            "det_deviation",
            "residual",
        ],
        rows,
    )?;
    Ok(out)
}

#[derive(Debug, Clone, Copy)]
struct ConeRow {
    cu_ratio: f64,
    s_ratio: f64,
    complementarity: f64,
    bound: f64,
}

fn cone_row(p: &Prepared, o: &PeriodTwoOrbit) -> Result<ConeRow> {
    let chain = o.chain(&p.model, &p.coeffs)?;
    let cu = invariant_cu_subspace(&chain)?;
    let s = invariant_s_subspace(&chain, p.model.multipliers.lambda_hat)?;
    let dense = dense_spectrum(&chain)?;
    let mut all = cu.eigenvalues.clone();
    all.extend(s.eigenvalues.iter().cloned());
    Ok(ConeRow {
        cu_ratio: cu.contraction_ratio,
        s_ratio: s.contraction_ratio,
        complementarity: multiset_rel_distance(&all, &dense.all()),
        bound: s.bound_constant.unwrap_or(f64::INFINITY),
    })
}

fn cone_battery(p: &Prepared) -> Result<ExperimentOutput> {
    let mut out = ExperimentOutput::default();
    let items = sweep_items(p);
    let cones = par_map(&items, |&(k, m, s)| {
        let o = solve_period2_targeted(&p.model, &p.coeffs, k, m, s, None)?;
        cone_row(p, &o)
    });
    let mut rows = vec![];
    let (mut ratio, mut comp, mut bound, mut n) = (0.0f64, 0.0f64, 0.0f64, 0);
    for ((k, m, s), cone) in items.into_iter().zip(cones) {
        let c = match cone {
            Ok(c) => c,
            Err(err) => {
                out.failure(format!("cones_k{k}_m{m}_s{s}"), err)?;
                continue;
            }
        };
        n += 1;
        ratio = ratio.max(c.cu_ratio).max(c.s_ratio);
        comp = comp.max(c.complementarity);
        bound = bound.max(c.bound);
        rows.push(vec![
            k.to_string(),
            m.to_string(),
            e(s),
            e(c.cu_ratio),
            e(c.s_ratio),
            e(c.complementarity),
            e(c.bound),
        ]);
    }
    out.checks.push(Check::new(
        "cone_contraction",
        n > 0 && ratio < 1.0,
        format!("max contraction ratio {ratio:.3e} over {n} orbits"),
    ));
    out.checks.push(Check::new(
        "spectral_complementarity",
        n > 0 && comp < COMPLEMENTARITY_TOL,
        format!("max relative distance {comp:.3e}"),
    ));
    out.checks.push(Check::new(
        "s_moduli_bound",
        n > 0 && bound <= BOUND_CONSTANT_MAX,
        format!("B = {bound:.4}"),
    ));
    out.csv(
        "cones.csv",
        &["k", "m", "s_target", "cu_contraction", "s_contraction", "complementarity", "bound_constant"],
        rows,
    )?;
    Ok(out)
}

fn cert_row(c: &CycleCertificate) -> Vec<String> {
    let tw = c.transverse_connection.as_ref();
    vec![
        c.k.to_string(),
        c.m.to_string(),
        e(c.parameters.mu),
        c.parameters.mu2.map_or(String::new(), e),
        e(c.parameters.theta),
        e(c.parameters.gamma),
        e(c.quasi_connection.gap),
        e(c.ratio.rel_error),
        c.index_evidence.index.to_string(),
        tw.map_or(String::new(), |t| t.iterations_used.to_string()),
        tw.map_or(String::new(), |t| e(t.first_factor_rel_error)),
    ]
}

fn hetdim(p: &Prepared) -> Result<ExperimentOutput> {
    let mut out = ExperimentOutput::default();
    let s = p.config.s_targets[0];
    let general = p.config.experiment == Experiment::HetdimGeneral;
    let mirrored = general && p.coeffs2.is_none();
    let coeffs2 = match (&p.coeffs2, &p.model.symmetry_signs) {
        (Some(c), _) => Some(c.clone()),
        (None, Some(signs)) if general => Some(p.coeffs.conjugate(signs)),
        _ => None,
    };
    let pairs = p.pairs();
    type Solved = Result<(CycleCertificate, ReplayReport, Option<CycleCertificate>)>;
    let solved: Vec<Solved> = par_map(&pairs, |&(k, m)| {
        let cert = match &coeffs2 {
            Some(c2) => solve_hetdim_general(&p.model, &p.coeffs, c2, k, m, s)?,
            None => solve_hetdim_symmetric(&p.model, &p.coeffs, k, m, s)?,
        };
        let report = replay_certificate(&cert)?;
        let twin = if mirrored {
            Some(solve_hetdim_symmetric(&p.model, &p.coeffs, k, m, s)?)
        } else {
            None
        };
        Ok((cert, report, twin))
    });
    let mut rows = vec![];
    let mut certs = vec![];
    for (&(k, m), res) in pairs.iter().zip(solved) {
        let name = format!("cycle_k{k}_m{m}");
        match res {
            Ok((cert, report, twin)) => {
                let failed: Vec<&str> = report.checks.iter().filter(|c| !c.pass).map(|c| c.name.as_str()).collect();
                out.checks.push(Check::new(
                    format!("{name}_replay"),
                    report.passed && cert.index_evidence.index == 2,
                    if failed.is_empty() {
                        format!("index {}, gap {:e}", cert.index_evidence.index, cert.quasi_connection.gap)
                    } else {
                        format!("failed: {}", failed.join(", "))
                    },
                ));
                if let Some(sym) = twin {
                    let dmu = (cert.parameters.mu - sym.parameters.mu).abs();
                    let dtheta = (cert.parameters.theta - sym.parameters.theta).abs();
                    let d12 = (cert.parameters.mu - cert.parameters.mu2.unwrap_or(f64::NAN)).abs();
                    out.checks.push(Check::new(
                        format!("{name}_matches_symmetric"),
                        dmu < CROSS_CHECK_TOL && dtheta < CROSS_CHECK_TOL && d12 < CROSS_CHECK_TOL,
                        format!("|dmu|={dmu:e} |dtheta|={dtheta:e} |mu1-mu2|={d12:e}"),
                    ));
                }
                rows.push(cert_row(&cert));
                out.json(&format!("certificates/{name}.json"), &cert)?;
                certs.push(cert);
            }
            Err(err) => out.failure(name, err)?,
        }
    }
    if certs.len() >= 2 {
        let mus: Vec<f64> = certs.iter().map(|c| c.parameters.mu.abs()).collect();
        out.checks.push(Check::new(
            "mu_decreasing",
            mus.windows(2).all(|w| w[1] < w[0]),
            mus.iter().map(|v| e(*v)).collect::<Vec<_>>().join(", "),
        ));
    }
    if let Some(last) = certs.iter().max_by_key(|c| c.k) {
        out.checks.push(Check::new(
            "ratio_at_largest_k",
            last.ratio.rel_error < RATIO_TOL,
            format!("k={}: lambda^k gamma^m = {:e}, target {:e}", last.k, last.ratio.lambda_k_gamma_m, last.ratio.target),
        ));
    }
    let area: Vec<f64> = certs
        .iter()
        .filter_map(|c| c.transverse_connection.as_ref().map(|t| t.first_factor_rel_error))
        .collect();
    if !area.is_empty() {
        let worst = area.iter().cloned().fold(0.0, f64::max);
        out.checks.push(Check::new(
            "transverse_area_factor",
            area.len() == certs.len() && worst < AREA_TOL,
            format!("max relative error {worst:.3e}"),
        ));
    }
    out.csv(
        "cycles.csv",
        &[
            "k",
            "m",
            "mu",
            "mu2",
            "theta",
            "gamma",
            "gap",
            "ratio_rel_error",
            "index",
            "transverse_iterations",
            "area_rel_error",
        ],
        rows,
    )?;
    Ok(out)
}

fn leaf_fit(p: &Prepared) -> Result<ExperimentOutput> {
    let mut out = ExperimentOutput::default();
    match fit_leaf_exponents(&p.model, &p.coeffs, &p.ks()) {
        Ok(fit) => {
            let (r1, r2) = fit.rel_errors();
            out.checks.push(Check::new(
                "leaf_exponent_phi1",
                r1 < LEAF_TOL,
                format!("fitted {:.5}, target {:.5}", fit.exponent1, fit.target1),
            ));
            out.checks.push(Check::new(
                "leaf_exponent_phi2",
                r2 < LEAF_TOL,
                format!("fitted {:.5}, target {:.5}", fit.exponent2, fit.target2),
            ));
            out.json("leaf_fit.json", &fit)?;
        }
        Err(err) => out.failure("leaf_fit".into(), err)?,
    }
    Ok(out)
}

#[derive(Serialize)]
struct ExponentReport {
    system: FlowSystem,
    exponents: crate::abs_lorenz::FlowExponents,
    c3prime: crate::abs_lorenz::C3PrimeCheck,
}

fn exponent_report(system: FlowSystem) -> Result<ExponentReport> {
    let exponents = equilibrium_exponents(&system)?;
    let c3prime = check_c3prime(&exponents);
    Ok(ExponentReport {
        system,
        exponents,
        c3prime,
    })
}

fn c3prime_scan(p: &Prepared) -> Result<ExperimentOutput> {
    let mut out = ExperimentOutput::default();
    let grid = &p.config.c3prime_grid;
    let points: Vec<(f64, f64)> = grid
        .alpha
        .values()
        .into_iter()
        .flat_map(|a| grid.lambda.values().into_iter().map(move |l| (a, l)))
        .collect();
    let reports = par_map(&points, |&(alpha, lambda)| {
        exponent_report(FlowSystem::MoriokaShimizu { alpha, lambda })
    });
    let mut rows = vec![];
    for ((alpha, lambda), r) in points.into_iter().zip(reports) {
        let mut row = vec![e(alpha), e(lambda)];
        match r {
            Ok(r) => {
                let a1 = r.exponents.alpha_strong.first().map_or(f64::NAN, |a| a[0]);
                row.extend([
                    e(r.exponents.beta),
                    e(r.exponents.alpha),
                    e(a1),
                    e(r.c3prime.strong_margin),
                    e(r.c3prime.weak_margin),
                    r.c3prime.ok.to_string(),
                    String::new(),
                ]);
            }
            Err(err) => {
                row.extend(std::iter::repeat_n(String::new(), 6));
                row.push(err.to_string());
            }
        }
        rows.push(row);
    }
    out.csv(
        "c3prime.csv",
        &["alpha", "lambda", "beta", "alpha_weak", "alpha1_re", "strong_margin", "weak_margin", "ok", "error"],
        rows,
    )?;
    let lorenz = exponent_report(FlowSystem::classical_lorenz())?;
    let ms = exponent_report(FlowSystem::MoriokaShimizu { alpha: 0.5, lambda: 1.0 })?;
    out.checks.push(Check::new(
        "lorenz_fails_c3prime",
        !lorenz.c3prime.ok,
        format!("alpha + 2 beta / 3 = {:.6}", lorenz.c3prime.weak_margin),
    ));
    out.checks.push(Check::new(
        "morioka_shimizu_passes_c3prime",
        ms.c3prime.ok,
        format!(
            "margins {:.6}, {:.6}",
            ms.c3prime.strong_margin, ms.c3prime.weak_margin
        ),
    ));
    out.json("exponents.json", &[lorenz, ms])?;
    Ok(out)
}

#[derive(Serialize)]
struct AbsReport<'a> {
    run: &'a super::config::AbsRun,
    seed: u64,
    expansion_bound: f64,
    image_extent: f64,
    fibre_extent: f64,
    trapping: crate::abs_lorenz::TrappingReport,
}

fn abs_orbits(p: &Prepared) -> Result<ExperimentOutput> {
    let mut out = ExperimentOutput::default();
    let run = &p.config.abs;
    let cfg = &run.map;
    let trapping = trapping_check(cfg, run.seeds, run.steps, p.config.seed)?;
    out.checks.push(Check::new(
        "abs_expansion",
        trapping.min_expansion > 1.0,
        format!("min |du'/du| on grid = {:.6}", trapping.min_expansion),
    ));
    out.checks.push(Check::new(
        "abs_image_interior",
        cfg.image_extent() < cfg.half_width && cfg.fibre_extent() < cfg.half_width,
        format!("max|u'| = {:.6}, max|v'| = {:.6}", cfg.image_extent(), cfg.fibre_extent()),
    ));
    out.checks.push(Check::new(
        "abs_trapping",
        trapping.escaped == 0,
        format!("{} of {} orbits escaped", trapping.escaped, trapping.seeds),
    ));
    let mut rng = ChaCha8Rng::seed_from_u64(p.config.seed.wrapping_add(1));
    let w = cfg.half_width;
    for i in 0..run.export {
        let start = (rng.gen_range(-w..w), rng.gen_range(-w..w));
        let orbit = simulate_poincare(cfg, start, run.export_steps);
        let mut buf = vec![];
        write_orbit_csv(&mut buf, &orbit)?;
        out.artifacts.push(Artifact {
            path: format!("orbits/orbit_{i}.csv"),
            bytes: buf,
        });
    }
    out.json(
        "abs_report.json",
        &AbsReport {
            run,
            seed: p.config.seed,
            expansion_bound: cfg.expansion_bound(),
            image_extent: cfg.image_extent(),
            fibre_extent: cfg.fibre_extent(),
            trapping,
        },
    )?;
    Ok(out)
}
