use criterion::{criterion_group, criterion_main, Criterion};
use hetdim::cone_analysis::invariant_cu_subspace;
use hetdim::cycle_solver::solve_period2_targeted;
use hetdim::global_map::GlobalMapCoeffs;
use hetdim::par::{par_map, seq_map};
use hetdim::saddle_model::{build_model, ModelSpec, SaddleModel};

// Same grid as configs/cone_battery.json.
fn items() -> Vec<(usize, usize, f64)> {
    let mut v = vec![];
    for k in (14..=24).step_by(2) {
        for m in (12..=k - 2).step_by(2) {
            for s in [-0.9, 0.0, 0.9] {
                v.push((k, m, s));
            }
        }
    }
    v
}

fn solve_one(model: &SaddleModel, coeffs: &GlobalMapCoeffs, &(k, m, s): &(usize, usize, f64)) -> Option<f64> {
    let orbit = solve_period2_targeted(model, coeffs, k, m, s, None).ok()?;
    let chain = orbit.chain(model, coeffs).ok()?;
    invariant_cu_subspace(&chain).ok().map(|w| w.contraction_ratio)
}

fn battery(c: &mut Criterion) {
    let model = build_model(&ModelSpec::default_d3()).expect("default model");
    let coeffs = GlobalMapCoeffs::default_for_dim(model.dim());
    let items = items();
    let mut group = c.benchmark_group("period2_cone_battery");
    group.sample_size(10);
    group.bench_function("sequential", |b| b.iter(|| seq_map(&items, |it| solve_one(&model, &coeffs, it))));
    group.bench_function("parallel", |b| b.iter(|| par_map(&items, |it| solve_one(&model, &coeffs, it))));
    group.finish();
}

criterion_group!(benches, battery);
criterion_main!(benches);
