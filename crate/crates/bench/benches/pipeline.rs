use std::hint::black_box;
use std::sync::Arc;

use criterion::{criterion_group, criterion_main, Criterion};
use slowfast::analysis::{find_candidates, scan_chi, Analyzer, CandidateOptions};
use slowfast::heteroclinic::{compute_heteroclinic_through_peak, Parameterization};
use slowfast::models::chemostat::chemostat_reduced;
use slowfast::models::epidemic::{build_center_manifold, epidemic_reduced};
use slowfast::verification::find_periodic_orbit;
use slowfast::{ChemostatParams, CmOptions, EpidemicParams, HeteroclinicSettings, VerifySettings};

fn chemostat(c: &mut Criterion) {
    let m = chemostat_reduced(ChemostatParams::example()).unwrap();
    let settings = HeteroclinicSettings::default();
    c.bench_function("chemostat/orbit", |b| {
        b.iter(|| compute_heteroclinic_through_peak(&m, black_box(6.9), &settings).unwrap())
    });
    let an = Analyzer::new(&m, Parameterization::PeakHeight, settings);
    c.bench_function("chemostat/scan_24", |b| b.iter(|| scan_chi(&an, black_box((5.0, 9.5)), 24).unwrap()));
    let scan = scan_chi(&an, (5.0, 9.5), 24).unwrap();
    let rep = find_candidates(&an, &scan, &CandidateOptions::default()).unwrap();
    let cand = rep.classified().next().unwrap().clone();
    c.bench_function("chemostat/periodic_orbit_eps_0.05", |b| {
        b.iter(|| find_periodic_orbit(&m, black_box(0.05), &cand, &VerifySettings::default()).unwrap())
    });
}

fn epidemic(c: &mut Criterion) {
    let params = EpidemicParams::case2();
    let mut g = c.benchmark_group("epidemic");
    g.sample_size(10);
    g.bench_function("table_build_200", |b| b.iter(|| build_center_manifold(&params, &CmOptions::default()).unwrap()));
    let table = Arc::new(build_center_manifold(&params, &CmOptions::default()).unwrap());
    let m = epidemic_reduced(params, table).unwrap();
    let an = Analyzer::new(&m, Parameterization::AlphaPoint, HeteroclinicSettings::default());
    g.bench_function("orbit", |b| b.iter(|| an.orbit(black_box(342.6)).unwrap()));
    g.finish();
}

criterion_group!(benches, chemostat, epidemic);
criterion_main!(benches);
