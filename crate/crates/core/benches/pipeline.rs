//! Parallel vs sequential throughput of the main pipeline stages.
//!
//! With the default `parallel` feature each stage runs twice: once on a
//! single-worker rayon pool and once on the full pool. Build with
//! `--no-default-features` to time the plain sequential fallback instead.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use specdiff::classifier::{fit, predict_all, TuningConfig};
use specdiff::dtrace::fit_stack;
use specdiff::simulate::generate_dataset;
use specdiff::spectral::{average_sdm_from_dfts, dft_matrix};
use specdiff::tilde::realify;
use specdiff::{AdamConfig, ClassLabel, DtraceProblem, Method, MultivariateSeries, SimDesign};

fn problems(samples: &[MultivariateSeries], design: &SimDesign) -> Vec<DtraceProblem> {
    let grid = design.grid().unwrap();
    let avg = |c: ClassLabel| {
        let dfts: Vec<_> = samples
            .iter()
            .filter(|s| s.label() == Some(c))
            .map(|s| dft_matrix(s, &grid).unwrap())
            .collect();
        let refs: Vec<_> = dfts.iter().collect();
        average_sdm_from_dfts(&refs, 3).unwrap()
    };
    let (s1, s2) = (avg(ClassLabel::One), avg(ClassLabel::Two));
    s1.iter()
        .zip(&s2)
        .map(|(a, b)| DtraceProblem::new(realify(a), realify(b), 0.1).unwrap())
        .collect()
}

#[cfg(feature = "parallel")]
fn modes() -> Vec<(String, rayon::ThreadPool)> {
    let all = rayon::current_num_threads();
    let mut out = vec![("rayon-1".to_string(), rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap())];
    if all > 1 {
        out.push((format!("rayon-{all}"), rayon::ThreadPoolBuilder::new().num_threads(all).build().unwrap()));
    }
    out
}

#[cfg(feature = "parallel")]
fn run<R>(mode: &(String, rayon::ThreadPool), f: impl FnOnce() -> R + Send) -> R
where
    R: Send,
{
    mode.1.install(f)
}

#[cfg(not(feature = "parallel"))]
fn modes() -> Vec<(String, ())> {
    vec![("sequential".to_string(), ())]
}

#[cfg(not(feature = "parallel"))]
fn run<R>(_mode: &(String, ()), f: impl FnOnce() -> R + Send) -> R
where
    R: Send,
{
    f()
}

fn bench_pipeline(c: &mut Criterion) {
    let design = SimDesign::scaled(1);
    let data = generate_dataset(&design).unwrap();
    let grid = design.grid().unwrap();
    let probs = problems(&data.samples, &design);
    let adam = AdamConfig {
        max_iters: 300,
        ..AdamConfig::default()
    };
    let tuning = TuningConfig {
        lambda_grid: vec![0.1],
        refine: 0,
        adam: adam.clone(),
        ..TuningConfig::default()
    };
    let model = fit(&data.samples, Method::Dtrace, &grid, 3, &tuning).unwrap().model;

    let mut group = c.benchmark_group("pipeline");
    group.sample_size(10);
    for mode in modes() {
        group.bench_function(BenchmarkId::new("simulate", &mode.0), |b| {
            b.iter(|| run(&mode, || generate_dataset(&design).unwrap()))
        });
        group.bench_function(BenchmarkId::new("fit_stack", &mode.0), |b| {
            b.iter(|| run(&mode, || fit_stack(&probs, 0.1, &adam, None).unwrap()))
        });
        group.bench_function(BenchmarkId::new("predict", &mode.0), |b| {
            b.iter(|| run(&mode, || predict_all(&model, &data.samples).unwrap()))
        });
    }
    group.finish();
}

criterion_group!(benches, bench_pipeline);
criterion_main!(benches);
