use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};

use nlkpp::fields::{FitnessSpec, FourierMode, FourierTable, PeriodicCell};
use nlkpp::kernel::{Direction, Kernel, TiltedDirection};
use nlkpp::linear::LinearBundle;
use nlkpp::spectrum::{principal_eigen, EigenOptions};
use nlkpp::waves::{build_bounds, residual_check, Candidate, WaveOptions, WaveSpeed};

fn medium(n_t: usize, n_x: usize) -> (Kernel, FitnessSpec) {
    let k = Kernel::builtin("biweight", 1.0).unwrap();
    let cell = PeriodicCell::new(1.0, 2.0, n_t, n_x).unwrap();
    let a0 = FourierTable::constant(1.0)
        .with_mode(FourierMode::cos(0, 1, 0.3))
        .with_mode(FourierMode::sin(1, 0, 0.3));
    let fs = FitnessSpec::from_tables(&a0, &FourierTable::constant(1.0), &cell).unwrap();
    (k, fs)
}

fn operators(c: &mut Criterion) {
    let (k, fs) = medium(512, 256);
    let bundle = LinearBundle::new(&k, TiltedDirection::new(Direction::Plus, 1.0), &fs.a0).unwrap();
    let u: Vec<f64> = (0..256).map(|j| 1.0 + 0.1 * (j as f64 * 0.3).sin()).collect();
    c.bench_function("tilted kernel apply (n_x = 256)", |b| b.iter(|| bundle.apply_kernel(black_box(&u))));
    c.bench_function("RK4 step (n_x = 256)", |b| b.iter(|| bundle.step(black_box(&u), 3).unwrap()));
    c.bench_function("period map (512 steps)", |b| b.iter(|| bundle.monodromy_apply(black_box(&u)).unwrap()));

    let (k, fs) = medium(64, 64);
    let opts = EigenOptions {
        gap: false,
        ..EigenOptions::default()
    };
    c.bench_function("principal eigenvalue (64 × 64)", |b| {
        b.iter(|| principal_eigen(&k, TiltedDirection::new(Direction::Plus, 1.0), &fs.a0, &opts).unwrap().lambda0)
    });

    let wave = WaveOptions {
        n_t: 16,
        n_x: 16,
        ..WaveOptions::default()
    };
    let wb = build_bounds(&k, &fs, Direction::Plus, WaveSpeed::Multiple(1.5), &wave).unwrap();
    c.bench_function("sub-solution residual (16 × 16)", |b| b.iter(|| residual_check(&wb, Candidate::LowerFloor).worst));
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = operators
}
criterion_main!(benches);
