//! Hot kernels on a single worker versus the default pool. Build with
//! `--no-default-features` to time the sequential fallback instead.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use raysplat::autodiff::{Graph, Tensor};
use raysplat::geometry::Camera;
use raysplat::optim::TrainConfig;
use raysplat::par;
use raysplat::pipeline::{initialize, train_step, TrainState, TrainingData};
use raysplat::raster::{render, RenderSettings};
use raysplat::scene::GaussianCloud;
use raysplat::synth::{synth_scene, SynthConfig};

const POOLS: [(&str, usize); 2] = [("1-thread", 1), ("default", 0)];

fn random_tensor(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn bench_conv(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let input = random_tensor(&mut rng, vec![32, 64, 64]);
    let kernel = random_tensor(&mut rng, vec![32, 32, 3, 3]);
    let bias = random_tensor(&mut rng, vec![32]);
    let mut group = c.benchmark_group("conv2d_fwd_bwd_32x64x64");
    for (name, threads) in POOLS {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| {
                par::with_threads(threads, || {
                    let mut g = Graph::new();
                    let x = g.param(input.clone());
                    let k = g.param(kernel.clone());
                    let bb = g.param(bias.clone());
                    let y = g.conv2d(x, k, bb).unwrap();
                    let l = g.sum(y, None).unwrap();
                    g.backward(l).unwrap();
                })
            })
        });
    }
    group.finish();
}

fn bench_render(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let cam = Camera::looking_forward(96.0, 96.0, 96, 96, [0.0; 3]);
    let mut cloud = GaussianCloud::default();
    for _ in 0..9216 {
        let x = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(1.5..4.0)];
        let s: f64 = rng.gen_range(0.005..0.03);
        cloud.push(x, [s * s, 0.0, 0.0, s * s, 0.0, s * s], 0.8, [0.3, 0.6, 0.9]);
    }
    let settings = RenderSettings::default();
    let mut group = c.benchmark_group("render_96x96_spp4");
    for (name, threads) in POOLS {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| par::with_threads(threads, || render(&cloud.data, &cam, 4, &settings).unwrap()))
        });
    }
    group.finish();
}

fn bench_train_step(c: &mut Criterion) {
    let sc = SynthConfig {
        width: 32,
        height: 32,
        focal: 32.0,
        ..SynthConfig::default()
    };
    let ds = synth_scene(&sc).unwrap().dataset;
    let cfg = TrainConfig {
        align_iters: 50,
        ..TrainConfig::default()
    };
    let bundle = initialize(&ds, &cfg).unwrap().bundle;
    let data = TrainingData::new(&ds, &cfg).unwrap();
    let mut group = c.benchmark_group("train_step_32x32");
    group.sample_size(10);
    for (name, threads) in POOLS {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| {
                let mut bnd = bundle.clone();
                let mut st = TrainState::default();
                par::with_threads(threads, || train_step(&mut bnd, &data, &cfg, &mut st).unwrap())
            })
        });
    }
    group.finish();
}

criterion_group!(benches, bench_conv, bench_render, bench_train_step);
criterion_main!(benches);
