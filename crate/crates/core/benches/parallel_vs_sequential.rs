//! Sequential versus data-parallel execution of the three hot paths:
//! dataset generation, batch gradients and evaluation.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use echodoa::dataset::{generate_dataset, grid, SweepSpec};
use echodoa::eval::{evaluate, Domain, Estimator};
use echodoa::music::MusicOptions;
use echodoa::nn::{prepare_samples, Network, NetworkSpec, Preprocess};
use echodoa::Execution;

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn small_sweep() -> SweepSpec {
    SweepSpec {
        angles_deg: grid(-60.0, 60.0, 20.0),
        snr_db: vec![0.0, 20.0],
        records_per_cell: 4,
        ..SweepSpec::default()
    }
}

fn dataset_generation(c: &mut Criterion) {
    let spec = small_sweep();
    let mut g = c.benchmark_group("generate_dataset");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| generate_dataset(&spec, exec).unwrap())
        });
    }
    g.finish();
}

fn batch_gradient(c: &mut Criterion) {
    let ds = generate_dataset(&small_sweep(), Execution::Parallel).unwrap();
    let spec = NetworkSpec::default();
    let idx: Vec<usize> = (0..32).collect();
    let samples = prepare_samples(&ds.records, &idx, &Preprocess::for_spec(&spec), Execution::Parallel).unwrap();
    let inputs: Vec<&[f32]> = samples.iter().map(|s| s.input.as_slice()).collect();
    let labels: Vec<f32> = samples.iter().map(|s| s.label).collect();
    let net = Network::<f32>::init(spec, 0).unwrap();
    let mut g = c.benchmark_group("loss_and_grad_batch32");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| net.loss_and_grad(&inputs, &labels, exec).unwrap())
        });
    }
    g.finish();
}

fn evaluation(c: &mut Criterion) {
    let ds = generate_dataset(&small_sweep(), Execution::Parallel).unwrap();
    let estimators = [Estimator::music(MusicOptions::default())];
    let mut g = c.benchmark_group("evaluate_music");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| evaluate(&ds, &estimators, &[Domain::Full], exec).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, dataset_generation, batch_gradient, evaluation);
criterion_main!(benches);
