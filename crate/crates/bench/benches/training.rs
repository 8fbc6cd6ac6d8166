use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use controlvae_core::harness::{ExperimentConfig, Trainer};
use controlvae_core::{generate_mini_shapes, mig, Dataset, Tensor2};
use rand::Rng;
use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;

fn trainer(mode: &str) -> Trainer {
    let text = format!(
        r#"
mode = "{mode}"
seed = 1
steps = 1
batch_size = 64
model = {{ hidden = [64], latent_dim = 10 }}
controller = {{ kp = 0.01, ki = 0.001, beta_min = 0.0, beta_max = 50.0 }}
set_point = {{ value = 0.3 }}
"#
    );
    let cfg = ExperimentConfig::from_toml_str(&text).unwrap();
    let data: Dataset = generate_mini_shapes().into();
    Trainer::new(&cfg, &data).unwrap()
}

fn training_step(c: &mut Criterion) {
    let mut group = c.benchmark_group("train_step_mini_shapes");
    for mode in ["controlvae", "control_factorvae"] {
        let mut t = trainer(mode);
        group.bench_function(mode, |b| b.iter(|| black_box(t.step().unwrap())));
    }
    group.finish();
}

fn mig_score(c: &mut Criterion) {
    let shapes = generate_mini_shapes();
    let n = shapes.factors.len();
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(11);
    let codes: Vec<f64> = (0..n * 10).map(|_| rng.random::<f64>()).collect();
    let latents = Tensor2::from_vec(n, 10, codes).unwrap();
    c.bench_function("mig_384x10", |b| {
        b.iter(|| black_box(mig(&latents, &shapes.factors, 20).unwrap()))
    });
}

criterion_group!(benches, training_step, mig_score);
criterion_main!(benches);
