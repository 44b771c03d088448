//! Acceptance suite: one line per criterion on stdout, then a single
//! assertion that all of them passed.

use std::collections::BTreeMap;
use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;

use hetdim::abs_lorenz::{check_c3prime, equilibrium_exponents, trapping_check, AbsConfig, FlowSystem};
use hetdim::cone_analysis::{fit_leaf_exponents, invariant_cu_subspace, invariant_s_subspace};
use hetdim::cycle_solver::transverse::ITERATION_CAP;
use hetdim::cycle_solver::{
    dense_spectrum, index2_criterion, replay_certificate, solve_hetdim_general, solve_hetdim_symmetric,
    solve_period2_targeted,
};
use hetdim::global_map::GlobalMapCoeffs;
use hetdim::local_map::{iterate_end, solve_cross_form, symmetry_commutation_defect};
use hetdim::numerics::multiset_rel_distance;
use hetdim::par::par_map;
use hetdim::saddle_model::{box_grid, build_model, identity_defects, ModelSpec, Nonlinearity, SaddleModel};
use hetdim::tangency_forge::{leading_splitting, solve_schedule};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn model(spec: ModelSpec, nl: Nonlinearity, symmetric: bool) -> SaddleModel {
    let symmetry_signs = if symmetric { spec.symmetry_signs.clone() } else { None };
    build_model(&ModelSpec {
        nonlinearity: nl,
        symmetry_signs,
        ..spec
    })
    .unwrap()
}

fn criterion_1() -> Outcome {
    let mut worst_id = 0.0f64;
    let mut worst_comm = 0.0f64;
    for spec in [ModelSpec::default_d3(), ModelSpec::default_d4()] {
        for nl in [
            Nonlinearity::Linear,
            Nonlinearity::Polynomial { eps: 0.05 },
            Nonlinearity::PolynomialSymmetric { eps: 0.05 },
        ] {
            let m = model(spec.clone(), nl, false);
            let grid = box_grid(m.dim(), 10);
            ensure(grid.len() == 1000, || "grid size".into())?;
            worst_id = identity_defects(&m, &grid).iter().fold(worst_id, |a, b| a.max(*b));
        }
        for nl in [Nonlinearity::Linear, Nonlinearity::PolynomialSymmetric { eps: 0.05 }] {
            let m = model(spec.clone(), nl, true);
            let grid = box_grid(m.dim(), 10);
            worst_comm = worst_comm.max(symmetry_commutation_defect(&m, &grid).map_err(|e| e.to_string())?);
        }
    }
    ensure(worst_id < 1e-12 && worst_comm < 1e-12, || {
        format!("identity defect {worst_id:e}, commutation defect {worst_comm:e}")
    })?;
    Ok(format!("max identity defect {worst_id:e}, max commutation defect {worst_comm:e}"))
}

fn criterion_2() -> Outcome {
    let mut worst = [0.0f64; 2];
    let mut worst_closed = 0.0f64;
    for (tier, nl) in [Nonlinearity::Linear, Nonlinearity::Polynomial { eps: 0.05 }].into_iter().enumerate() {
        for spec in [ModelSpec::default_d3(), ModelSpec::default_d4()] {
            let m = model(spec, nl, false);
            let nz = m.dim() - 2;
            for k in 1..=30 {
                for x0 in [-0.5, 0.1, 0.5] {
                    for yk in [0.3, 0.45, 0.6] {
                        for zs in [-0.5, 0.05] {
                            let z0 = vec![zs; nz];
                            let r = solve_cross_form(&m, x0, yk, &z0, k).map_err(|e| e.to_string())?;
                            let end = iterate_end(&m, &r.start(x0, &z0), k).map_err(|e| e.to_string())?.0;
                            let mut err = (end.y - yk).abs().max((end.x - r.x_k).abs());
                            for (a, b) in end.z.iter().zip(&r.z_k) {
                                err = err.max((a - b).abs());
                            }
                            worst[tier] = worst[tier].max(err);
                            if tier == 0 {
                                let mu = &m.multipliers;
                                let mut e = (r.y_0 - yk * mu.gamma.powi(-(k as i32))).abs();
                                e = e.max((r.x_k - x0 * mu.lambda.powi(k as i32)).abs());
                                for (i, z) in r.z_k.iter().enumerate() {
                                    e = e.max((z - zs * mu.strong[i].powi(k as i32)).abs());
                                }
                                worst_closed = worst_closed.max(e);
                            }
                        }
                    }
                }
            }
        }
    }
    ensure(worst[0] < 1e-14 && worst_closed < 1e-14 && worst[1] < 1e-11, || {
        format!("round trip linear {:e}, closed form {worst_closed:e}, polynomial {:e}", worst[0], worst[1])
    })?;
    Ok(format!(
        "round trip linear {:e} (closed form {worst_closed:e}), polynomial {:e}",
        worst[0], worst[1]
    ))
}

fn forge_tiers() -> Vec<(f64, f64, SaddleModel, GlobalMapCoeffs)> {
    [(1.0, -1.0), (1.0, 1.0), (-1.0, -1.0), (-1.0, 1.0)]
        .into_iter()
        .map(|(c, d)| {
            let mut coeffs = GlobalMapCoeffs::default_for_dim(3);
            coeffs.c = c;
            coeffs.d = d;
            (c, d, build_model(&ModelSpec::default_d3()).unwrap(), coeffs)
        })
        .collect()
}

const FORGE_KS: [usize; 7] = [12, 14, 16, 18, 20, 22, 24];

fn criterion_3() -> Outcome {
    let mut details = vec![];
    for (c, d, m, coeffs) in forge_tiers() {
        let solved = solve_schedule(&m, &coeffs, &FORGE_KS);
        for branch in 0..2 {
            let mut errs = vec![];
            for (k, r) in FORGE_KS.iter().zip(&solved) {
                let b = &r.as_ref().map_err(|e| format!("c={c} d={d} k={k}: {e}"))?[branch];
                errs.push((b.mu_k / leading_splitting(&m, &coeffs, *k) - 1.0).abs());
            }
            ensure(errs[0] < 0.2 && errs.windows(2).all(|w| w[1] < w[0]), || {
                let list: Vec<String> = errs.iter().map(|e| format!("{e:.3e}")).collect();
                format!("c={c} d={d} branch {}: {}", branch + 1, list.join(", "))
            })?;
            if branch == 0 {
                details.push(format!("c={c},d={d}: {:.3e}->{:.3e}", errs[0], errs[errs.len() - 1]));
            }
        }
    }
    Ok(format!("ratio errors k=12->24: {}", details.join("; ")))
}

fn criterion_4() -> Outcome {
    let mut count = 0;
    for (c, d, m, coeffs) in forge_tiers() {
        for (k, r) in FORGE_KS.iter().zip(solve_schedule(&m, &coeffs, &FORGE_KS)) {
            let [b1, b2] = r.map_err(|e| format!("c={c} d={d} k={k}: {e}"))?;
            ensure(b1.c_sign == -b2.c_sign, || format!("c={c} d={d} k={k}: equal signs"))?;
            for b in [&b1, &b2] {
                ensure(b.c_value.signum() == b.c_closed_form.signum(), || {
                    format!("c={c} d={d} k={k}: {} vs closed form {}", b.c_value, b.c_closed_form)
                })?;
            }
            count += 1;
        }
    }
    Ok(format!("opposite signs matching the closed form at {count} (tier, k) pairs"))
}

fn sweep_items() -> Vec<(usize, usize, f64)> {
    let mut v = vec![];
    for k in (14..=24).step_by(2) {
        for m in (12..k).step_by(2) {
            for s in [-0.9, 0.0, 0.9] {
                v.push((k, m, s));
            }
        }
    }
    v
}

fn criterion_5() -> Outcome {
    let m = build_model(&ModelSpec::default_d3()).unwrap();
    let c = GlobalMapCoeffs::default_for_dim(3);
    let items = sweep_items();
    let checks = par_map(&items, |&(k, mm, s)| {
        let o = solve_period2_targeted(&m, &c, k, mm, s, None)?;
        index2_criterion(&m, &c, &o)
    });
    let mut worst = 0.0f64;
    for ((k, mm, s), r) in items.iter().zip(&checks) {
        let ic = r.as_ref().map_err(|e| format!("(k,m,s)=({k},{mm},{s}): {e}"))?;
        ensure(ic.matches, || format!("(k,m,s)=({k},{mm},{s}): s={} but index {}", ic.s, ic.index))?;
        if *k >= 16 && *mm >= 16 {
            worst = worst.max(ic.trace_deviation).max(ic.det_deviation);
        }
    }
    ensure(items.len() >= 50, || format!("only {} orbits", items.len()))?;
    ensure(worst < 0.1, || format!("trace/det deviation {worst:e}"))?;
    Ok(format!(
        "{n}/{n} orbits agree; max trace/det deviation {worst:.3e} for k,m >= 16",
        n = items.len()
    ))
}

fn criterion_6() -> Outcome {
    let m = build_model(&ModelSpec::default_d3()).unwrap();
    let c = GlobalMapCoeffs::default_for_dim(3);
    let items = sweep_items();
    let rows = par_map(&items, |&(k, mm, s)| -> hetdim::Result<(f64, f64, f64)> {
        let o = solve_period2_targeted(&m, &c, k, mm, s, None)?;
        let chain = o.chain(&m, &c)?;
        let cu = invariant_cu_subspace(&chain)?;
        let sw = invariant_s_subspace(&chain, m.multipliers.lambda_hat)?;
        let mut all = cu.eigenvalues.clone();
        all.extend(sw.eigenvalues.iter().cloned());
        let comp = multiset_rel_distance(&all, &dense_spectrum(&chain)?.all());
        Ok((
            cu.contraction_ratio.max(sw.contraction_ratio),
            comp,
            sw.bound_constant.unwrap_or(f64::INFINITY),
        ))
    });
    let (mut ratio, mut comp, mut bound) = (0.0f64, 0.0f64, 0.0f64);
    for ((k, mm, s), r) in items.iter().zip(rows) {
        let (a, b, c) = r.map_err(|e| format!("(k,m,s)=({k},{mm},{s}): {e}"))?;
        ratio = ratio.max(a);
        comp = comp.max(b);
        bound = bound.max(c);
    }
    ensure(ratio < 1.0 && comp < 1e-8 && bound <= 10.0, || {
        format!("contraction {ratio:e}, complementarity {comp:e}, B {bound:e}")
    })?;
    Ok(format!(
        "{} orbits: max contraction ratio {ratio:.3e}, complementarity {comp:.3e}, B = {bound:.3e}",
        items.len()
    ))
}

fn criterion_7() -> Outcome {
    let spec = ModelSpec {
        lambda0: Some(0.26),
        nonlinearity: Nonlinearity::PolynomialSymmetric { eps: 0.05 },
        ..ModelSpec::default_d3()
    };
    let m = build_model(&spec).map_err(|e| e.to_string())?;
    let c = GlobalMapCoeffs::default_for_dim(3);
    let ks: Vec<usize> = (8..=20).collect();
    let fit = fit_leaf_exponents(&m, &c, &ks).map_err(|e| e.to_string())?;
    let (r1, r2) = fit.rel_errors();
    let detail = format!(
        "phi1 {:.4} vs {:.4} ({:.1}%), phi2 {:.4} vs {:.4} ({:.1}%)",
        fit.exponent1,
        fit.target1,
        100.0 * r1,
        fit.exponent2,
        fit.target2,
        100.0 * r2
    );
    ensure(r1 < 0.1 && r2 < 0.1, || detail.clone())?;
    Ok(detail)
}

fn criterion_8() -> Outcome {
    let m = build_model(&ModelSpec::default_d3()).unwrap();
    let c = GlobalMapCoeffs::default_for_dim(3);
    let schedule = [(16, 12), (18, 14), (20, 14), (22, 16), (24, 18)];
    let certs = par_map(&schedule, |&(k, mm)| solve_hetdim_symmetric(&m, &c, k, mm, 0.0));
    let mut prev = f64::INFINITY;
    let mut worst_area = 0.0f64;
    let mut last_ratio = f64::NAN;
    for ((k, mm), r) in schedule.iter().zip(certs) {
        let cert = r.map_err(|e| format!("(k,m)=({k},{mm}): {e}"))?;
        let tag = format!("(k,m)=({k},{mm})");
        ensure(cert.closure.max() < 1e-10, || format!("{tag}: closure {:e}", cert.closure.max()))?;
        ensure(cert.quasi_connection.gap.abs() < 1e-8, || format!("{tag}: gap {:e}", cert.quasi_connection.gap))?;
        ensure(cert.index_evidence.index == 2, || format!("{tag}: index {}", cert.index_evidence.index))?;
        ensure(cert.parameters.mu.abs() < prev, || format!("{tag}: |mu| not decreasing"))?;
        prev = cert.parameters.mu.abs();
        let tw = cert
            .transverse_connection
            .as_ref()
            .ok_or_else(|| format!("{tag}: no transverse connection"))?;
        ensure(tw.iterations_used <= ITERATION_CAP, || format!("{tag}: {} returns", tw.iterations_used))?;
        worst_area = worst_area.max(tw.first_factor_rel_error);
        last_ratio = cert.ratio.rel_error;
        let rep = replay_certificate(&cert).map_err(|e| e.to_string())?;
        ensure(rep.passed, || format!("{tag}: replay failed"))?;
    }
    ensure(last_ratio < 0.05, || format!("ratio error at k=24: {last_ratio:e}"))?;
    ensure(worst_area < 0.15, || format!("area factor error {worst_area:e}"))?;
    Ok(format!(
        "{} certificates replay; ratio error at k=24 {last_ratio:.3e}; area factor error {worst_area:.3e}",
        schedule.len()
    ))
}

fn criterion_9() -> Outcome {
    let d4 = {
        let spec = ModelSpec {
            nonlinearity: Nonlinearity::PolynomialSymmetric { eps: 0.05 },
            ..ModelSpec::default_d4()
        };
        let mut c = GlobalMapCoeffs::default_for_dim(4);
        c.alpha1 = vec![0.05, -0.02];
        c.alpha2 = vec![0.03, 0.01];
        c.e3 = 0.2;
        (build_model(&spec).unwrap(), c)
    };
    let d3 = (build_model(&ModelSpec::default_d3()).unwrap(), GlobalMapCoeffs::default_for_dim(3));
    let mut worst = 0.0f64;
    let mut n = 0;
    for (m, c) in [d3, d4] {
        let signs = m.symmetry_signs.clone().unwrap();
        let c2 = c.conjugate(&signs);
        for (k, mm) in [(16, 12), (20, 14)] {
            let tag = format!("D={} (k,m)=({k},{mm})", m.dim());
            let sym = solve_hetdim_symmetric(&m, &c, k, mm, 0.0).map_err(|e| format!("{tag}: {e}"))?;
            let gen = solve_hetdim_general(&m, &c, &c2, k, mm, 0.0).map_err(|e| format!("{tag}: {e}"))?;
            let mu2 = gen.parameters.mu2.ok_or_else(|| format!("{tag}: no mu2"))?;
            let d = (gen.parameters.mu - mu2)
                .abs()
                .max((gen.parameters.mu - sym.parameters.mu).abs())
                .max((gen.parameters.theta - sym.parameters.theta).abs());
            ensure(d < 1e-9, || format!("{tag}: deviation {d:e}"))?;
            worst = worst.max(d);
            n += 1;
        }
    }
    Ok(format!("{n} general solves reproduce (mu, theta); max deviation {worst:e}"))
}

fn criterion_10() -> Outcome {
    let lorenz = check_c3prime(&equilibrium_exponents(&FlowSystem::classical_lorenz()).map_err(|e| e.to_string())?);
    ensure(!lorenz.ok && (lorenz.weak_margin - 5.219).abs() < 1e-3, || format!("{lorenz:?}"))?;
    let ms = check_c3prime(
        &equilibrium_exponents(&FlowSystem::MoriokaShimizu { alpha: 0.5, lambda: 1.0 }).map_err(|e| e.to_string())?,
    );
    ensure(ms.ok, || format!("{ms:?}"))?;
    let cfg = AbsConfig::default();
    let q = cfg.expansion_bound();
    let r = trapping_check(&cfg, 10_000, 200, 11).map_err(|e| e.to_string())?;
    ensure(q > 1.0 && r.min_expansion >= q - 1e-12, || format!("expansion {} vs q {q}", r.min_expansion))?;
    ensure(r.escaped == 0, || format!("{} orbits escaped", r.escaped))?;
    Ok(format!(
        "Lorenz margin {:.4}; Morioka-Shimizu margins ({:.4}, {:.4}); ABS expansion {:.3} >= q = {q:.3}; 0 of {} orbits escaped",
        lorenz.weak_margin, ms.strong_margin, ms.weak_margin, r.min_expansion, r.seeds
    ))
}

fn config_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn collect(dir: &Path, root: &Path, out: &mut BTreeMap<String, Vec<u8>>) {
    for entry in std::fs::read_dir(dir).unwrap() {
        let p = entry.unwrap().path();
        if p.is_dir() {
            collect(&p, root, out);
        } else if matches!(p.extension().and_then(|e| e.to_str()), Some("csv" | "json")) {
            let rel = p.strip_prefix(root).unwrap().to_string_lossy().into_owned();
            out.insert(rel, std::fs::read(&p).unwrap());
        }
    }
}

fn run_suite(out: &Path, jobs: &str) -> Result<BTreeMap<String, Vec<u8>>, String> {
    let mut configs: Vec<PathBuf> = std::fs::read_dir(config_dir())
        .map_err(|e| e.to_string())?
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "json"))
        .collect();
    configs.sort();
    for cfg in &configs {
        let name = cfg.file_stem().unwrap().to_string_lossy().into_owned();
        let status = Command::new(env!("CARGO_BIN_EXE_hetdim"))
            .args(["run", "--config"])
            .arg(cfg)
            .arg("--out")
            .arg(out.join(&name))
            .args(["--jobs", jobs])
            .output()
            .map_err(|e| e.to_string())?;
        ensure(status.status.success(), || {
            format!("{name} exited with {:?}: {}", status.status.code(), String::from_utf8_lossy(&status.stdout))
        })?;
    }
    let mut files = BTreeMap::new();
    collect(out, out, &mut files);
    Ok(files)
}

fn criterion_11() -> Outcome {
    let a = tempfile::tempdir().map_err(|e| e.to_string())?;
    let b = tempfile::tempdir().map_err(|e| e.to_string())?;
    let first = run_suite(a.path(), "1")?;
    let second = run_suite(b.path(), "4")?;
    ensure(first.keys().eq(second.keys()), || "different file sets".into())?;
    let differing: Vec<&String> = first.keys().filter(|k| first[*k] != second[*k]).collect();
    ensure(differing.is_empty(), || format!("differing outputs: {differing:?}"))?;
    Ok(format!(
        "{} CSV/JSON files byte-identical across two runs (--jobs 1 and 4)",
        first.len()
    ))
}

#[test]
fn acceptance_criteria() {
    let criteria: [(&str, fn() -> Outcome); 11] = [
        ("normal-form identities", criterion_1),
        ("cross-form fidelity", criterion_2),
        ("secondary-tangency asymptotics", criterion_3),
        ("branch-sign law", criterion_4),
        ("index-2 criterion equivalence", criterion_5),
        ("cone battery", criterion_6),
        ("leaf exponents", criterion_7),
        ("heterodimensional-cycle certificates", criterion_8),
        ("general-case cross-check", criterion_9),
        ("flow-side checks", criterion_10),
        ("determinism", criterion_11),
    ];
    let mut failed = vec![];
    let stdout = std::io::stdout();
    for (i, (name, f)) in criteria.iter().enumerate() {
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|_| Err("panicked".to_string()));
        let line = match &outcome {
            Ok(d) => format!("criterion {:>2} PASS {name}: {d}", i + 1),
            Err(e) => {
                failed.push(i + 1);
                format!("criterion {:>2} FAIL {name}: {e}", i + 1)
            }
        };
        let mut lock = stdout.lock();
        let _ = writeln!(lock, "{line}");
        let _ = lock.flush();
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
