use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use muygps::meanmodels::MeanModel;
use muygps::neighbors::{Backend, NeighborIndex};
use muygps::predictor::predict_nn_batch;
use muygps::trainer::{BatchObjective, BatchSpec, TrainingSet};
use muygps::{Execution, MaternKernel, Points};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn problem(n: usize) -> (TrainingSet, NeighborIndex, Points) {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = Points::new(2, (0..2 * n).map(|_| rng.random::<f64>()).collect()).unwrap();
    let y = x.rows().map(|p| (5.0 * p[0]).sin() + p[1]).collect();
    let test = Points::new(2, (0..2 * 1000).map(|_| rng.random::<f64>()).collect()).unwrap();
    let index = NeighborIndex::build(x.clone(), Backend::Exact).unwrap();
    (TrainingSet::new(x, y).unwrap(), index, test)
}

fn modes() -> [(&'static str, Execution); 2] {
    [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)]
}

fn objective(c: &mut Criterion) {
    let (train, index, _) = problem(20_000);
    let batch = BatchSpec { size: 500, seed: 0 }.sample(train.len()).unwrap();
    let kernel = MaternKernel::from_values(1.0, 0.05, 0.8, 0.001).unwrap();
    let mut group = c.benchmark_group("batched_loss");
    group.sample_size(10);
    for (name, exec) in modes() {
        let obj = BatchObjective::new(&train, &index, &batch, 50, exec).unwrap();
        group.bench_function(BenchmarkId::new(name, "b500_k50"), |b| b.iter(|| obj.loss(&kernel).unwrap()));
    }
    group.finish();
}

fn prediction(c: &mut Criterion) {
    let (train, index, test) = problem(20_000);
    let kernel = MaternKernel::from_values(1.0, 0.05, 0.8, 0.001).unwrap();
    let mut group = c.benchmark_group("predict_nn_batch");
    group.sample_size(10);
    for (name, exec) in modes() {
        group.bench_function(BenchmarkId::new(name, "1000_points_k50"), |b| {
            b.iter(|| predict_nn_batch(&train, &index, &test, 50, &kernel, &MeanModel::Zero, 0.95, exec).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, objective, prediction);
criterion_main!(benches);
