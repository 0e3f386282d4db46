use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use spincat::cat_analysis::{detect_peaks, PROMINENCE_FLOOR};
use spincat::classical::{evolve_classical, fig2_initial_state, ClassicalControls, ClassicalParams};
use spincat::observables::{density, hermite_basis, SpatialGrid};
use spincat::quantum::{apply_hamiltonian, EvolveControls, Propagator};
use spincat_bench::{displaced_state, equatorial_state, fig3_model, two_peak_density};

fn hamiltonian(c: &mut Criterion) {
    let model = fig3_model();
    let mut group = c.benchmark_group("apply_hamiltonian");
    for n in [500usize, 2000] {
        let psi = equatorial_state(n);
        let mut out = psi.amplitudes().to_vec();
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| apply_hamiltonian(black_box(psi.amplitudes()), 40.0, &model, &mut out))
        });
    }
    group.finish();
}

fn propagation(c: &mut Criterion) {
    let mut group = c.benchmark_group("propagator");
    group.sample_size(10);
    let state = displaced_state(2000);
    group.bench_function("fig3_one_period", |b| {
        b.iter(|| {
            let mut p = Propagator::new(&state, fig3_model(), EvolveControls::default()).unwrap();
            p.advance_to(std::f64::consts::TAU).unwrap();
            black_box(p.norm_sqr())
        })
    });
    group.finish();
}

fn analysis(c: &mut Criterion) {
    let grid = SpatialGrid::default();
    let basis = hermite_basis(grid, 2000).unwrap();
    let state = equatorial_state(2000);
    c.bench_function("density_n2000", |b| b.iter(|| density(black_box(&state), &basis).unwrap()));

    let snapshot = two_peak_density(1601);
    c.bench_function("detect_peaks_1601", |b| {
        b.iter(|| detect_peaks(black_box(&snapshot), PROMINENCE_FLOOR).unwrap())
    });
}

fn classical(c: &mut Criterion) {
    let params = ClassicalParams::fig2();
    let start = fig2_initial_state();
    let controls = ClassicalControls::default();
    c.bench_function("classical_fig2_tau50", |b| {
        b.iter(|| evolve_classical(&start, &params, 50.0, &controls).unwrap())
    });
}

criterion_group!(benches, hamiltonian, propagation, analysis, classical);
criterion_main!(benches);
