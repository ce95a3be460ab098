//! Central finite-difference checks of every hand-written backward rule.
//!
//! Each trial draws a random point `x` and a random direction `v`, then
//! compares the analytic directional derivative `∇f(x)·v` against
//! `(f(x+hv) - f(x-hv)) / 2h`. Samplers keep points away from kinks
//! (|x| = 0 for `abs`, clamp bounds, leaky-ReLU hinges) so the comparison is
//! between smooth quantities.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::autodiff::{BinaryOp, Graph, Tensor, UnaryOp, Var};
use crate::decoder::{self, DecoderConfig, DecoderVars, Head, KERNEL};
use crate::error::{Error, Result};
use crate::flow::{correspondences, ConsistencyMask, FlowField};
use crate::geometry::{
    covariance_from_rotation_scale, covariance_from_rotation_scale_vjp, quat_to_mat, Camera, SplatGrad, Sym3, Vec3,
    DEFAULT_COV_FLOOR, DEFAULT_Z_NEAR,
};
use crate::losses::{flow_loss, photometric, ssim_var, tv_losses};
use crate::raster::{render_var, RenderSettings};
use crate::scene::{materialize, GaussianCloud, MaterializeInputs, PixelGaussianGrid, SegMask, CLOUD_STRIDE};

pub const FD_STEP: f64 = 1e-5;
pub const DEFAULT_TRIALS: usize = 100;
pub const OP_TOLERANCE: f64 = 1e-4;
pub const RASTER_TOLERANCE: f64 = 1e-3;

pub type EvalFn = Box<dyn Fn(&[f64]) -> Result<(f64, Vec<f64>)> + Send + Sync>;

/// One random evaluation point and the scalar function to differentiate there.
pub struct Trial {
    pub x: Vec<f64>,
    pub eval: EvalFn,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OpReport {
    pub name: String,
    pub trials: usize,
    pub max_rel_err: f64,
    pub tolerance: f64,
    pub passed: bool,
}

/// `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

pub fn check<S>(name: &str, tolerance: f64, trials: usize, seed: u64, mut sample: S) -> Result<OpReport>
where
    S: FnMut(&mut ChaCha8Rng) -> Result<Trial>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let trial = sample(&mut rng)?;
        let (_, grad) = (trial.eval)(&trial.x)?;
        if grad.len() != trial.x.len() {
            return Err(Error::invalid(format!(
                "{name}: gradient has {} entries for {} inputs",
                grad.len(),
                trial.x.len()
            )));
        }
        let dir: Vec<f64> = (0..trial.x.len()).map(|_| rng.sample(StandardNormal)).collect();
        let analytic: f64 = grad.iter().zip(&dir).map(|(g, v)| g * v).sum();
        let shifted = |sign: f64| -> Vec<f64> { trial.x.iter().zip(&dir).map(|(x, v)| x + sign * FD_STEP * v).collect() };
        let fp = (trial.eval)(&shifted(1.0))?.0;
        let fm = (trial.eval)(&shifted(-1.0))?.0;
        let numeric = (fp - fm) / (2.0 * FD_STEP);
        let e = rel_err(analytic, numeric);
        if !e.is_finite() {
            return Err(Error::NonFinite(format!("gradient check of {name}")));
        }
        worst = worst.max(e);
    }
    Ok(OpReport {
        name: name.to_string(),
        trials,
        max_rel_err: worst,
        tolerance,
        passed: worst < tolerance,
    })
}

/// Splits `x` into tensors of the given shapes.
pub fn split_inputs(shapes: &[Vec<usize>], x: &[f64]) -> Result<Vec<Tensor>> {
    let mut out = Vec::with_capacity(shapes.len());
    let mut at = 0;
    for s in shapes {
        let n: usize = s.iter().product();
        if at + n > x.len() {
            return Err(Error::invalid("input vector shorter than declared shapes"));
        }
        out.push(Tensor::new(s.clone(), x[at..at + n].to_vec())?);
        at += n;
    }
    Ok(out)
}

fn projection_weights(seed: u64, n: usize) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_vec((0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
}

/// Builds a trial around a graph computation. Non-scalar outputs are reduced
/// with a fixed random projection so every output element is exercised.
pub fn graph_trial<B>(shapes: Vec<Vec<usize>>, x: Vec<f64>, weights_seed: u64, build: B) -> Trial
where
    B: Fn(&mut Graph, &[Var]) -> Result<Var> + Send + Sync + 'static,
{
    let eval = move |x: &[f64]| -> Result<(f64, Vec<f64>)> {
        let mut g = Graph::new();
        let vars: Vec<Var> = split_inputs(&shapes, x)?.into_iter().map(|t| g.param(t)).collect();
        let out = build(&mut g, &vars)?;
        let loss = if g.value(out).is_scalar() {
            out
        } else {
            let shape = g.shape(out).to_vec();
            let w = projection_weights(weights_seed, g.value(out).numel()).reshape(shape)?;
            let w = g.constant(w);
            let p = g.mul(out, w)?;
            g.sum(p, None)?
        };
        let value = g.value(loss).item();
        g.backward(loss)?;
        let mut grad = Vec::with_capacity(x.len());
        for (v, s) in vars.iter().zip(&shapes) {
            match g.grad(*v) {
                Some(t) => grad.extend_from_slice(t.data()),
                None => grad.extend(std::iter::repeat_n(0.0, s.iter().product())),
            }
        }
        Ok((value, grad))
    };
    Trial { x, eval: Box::new(eval) }
}

pub(crate) fn uniform(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(lo..hi)).collect()
}

/// Uniform values in `±[lo, hi]`: bounded away from zero.
pub(crate) fn away_from_zero(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let m = rng.gen_range(lo..hi);
            if rng.gen_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect()
}


/// One entry of the standard suite.
pub struct SuiteEntry {
    pub name: &'static str,
    pub tolerance: f64,
    pub sample: Box<dyn FnMut(&mut ChaCha8Rng) -> Result<Trial>>,
}

fn entry<S>(name: &'static str, tolerance: f64, sample: S) -> SuiteEntry
where
    S: FnMut(&mut ChaCha8Rng) -> Result<Trial> + 'static,
{
    SuiteEntry {
        name,
        tolerance,
        sample: Box::new(sample),
    }
}

fn binary_entry(name: &'static str, op: BinaryOp, positive_rhs: bool) -> SuiteEntry {
    entry(name, OP_TOLERANCE, move |rng| {
        let mut x = uniform(rng, 12, -2.0, 2.0);
        x.extend(if positive_rhs {
            away_from_zero(rng, 12, 0.5, 2.0)
        } else {
            uniform(rng, 12, -2.0, 2.0)
        });
        Ok(graph_trial(vec![vec![3, 4], vec![3, 4]], x, rng.gen(), move |g, v| g.binary(op, v[0], v[1])))
    })
}

fn unary_entry(name: &'static str, op: UnaryOp, sample: fn(&mut ChaCha8Rng) -> Vec<f64>) -> SuiteEntry {
    entry(name, OP_TOLERANCE, move |rng| {
        let x = sample(rng);
        Ok(graph_trial(vec![vec![2, 5]], x, rng.gen(), move |g, v| Ok(g.unary(op, v[0]))))
    })
}

/// Random proper rotation and pose with the given resolution.
pub fn random_camera(rng: &mut ChaCha8Rng, width: usize, height: usize) -> Camera {
    let q: [f64; 4] = std::array::from_fn(|_| rng.sample(StandardNormal));
    let r = quat_to_mat(&q);
    let t = [rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5)];
    let f = rng.gen_range(20.0..40.0);
    Camera::new(
        f,
        f * rng.gen_range(0.9..1.1),
        width as f64 / 2.0 + rng.gen_range(-1.0..1.0),
        height as f64 / 2.0 + rng.gen_range(-1.0..1.0),
        width,
        height,
        r,
        t,
    )
    .expect("random camera is valid")
}

/// Random symmetric positive definite covariance with entries near `scale²`.
pub fn random_spd(rng: &mut ChaCha8Rng, scale: f64) -> Sym3 {
    let l: [f64; 9] = std::array::from_fn(|i| match i {
        0 | 4 | 8 => scale * rng.gen_range(0.6..1.4),
        3 | 6 | 7 => scale * rng.gen_range(-0.5..0.5),
        _ => 0.0,
    });
    let dot = |a: usize, b: usize| (0..3).map(|k| l[a * 3 + k] * l[b * 3 + k]).sum::<f64>();
    [dot(0, 0), dot(0, 1), dot(0, 2), dot(1, 1), dot(1, 2), dot(2, 2)]
}

fn point_in_front(rng: &mut ChaCha8Rng, cam: &Camera) -> Vec3 {
    let u = rng.gen_range(0.0..cam.width as f64);
    let v = rng.gen_range(0.0..cam.height as f64);
    cam.unproject_unchecked(u, v, rng.gen_range(1.0..4.0))
}

fn weights(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    uniform(rng, n, -1.0, 1.0)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn geometry_entries() -> Vec<SuiteEntry> {
    vec![
        entry("unproject", OP_TOLERANCE, |rng| {
            let cam = random_camera(rng, 16, 12);
            let (u, v) = (rng.gen_range(0.0..16.0), rng.gen_range(0.0..12.0));
            let w = weights(rng, 3);
            let x = vec![rng.gen_range(0.5..5.0)];
            Ok(Trial {
                x,
                eval: Box::new(move |x| {
                    let p = cam.unproject(u, v, x[0])?;
                    let (a, _) = cam.pixel_ray(u, v);
                    Ok((dot(&p, &w), vec![dot(&a, &w)]))
                }),
            })
        }),
        entry("project", OP_TOLERANCE, |rng| {
            let cam = random_camera(rng, 16, 12);
            let x = point_in_front(rng, &cam).to_vec();
            let w = weights(rng, 3);
            Ok(Trial {
                x,
                eval: Box::new(move |x| {
                    let p = [x[0], x[1], x[2]];
                    let sp = cam.splat(&p, &[0.0; 6], 0.0, DEFAULT_Z_NEAR).ok_or_else(|| Error::invalid("culled"))?;
                    let g = SplatGrad {
                        u: w[0],
                        v: w[1],
                        z: w[2],
                        cov: [0.0; 3],
                    };
                    let (dx, _) = cam.splat_vjp(&p, &[0.0; 6], &g);
                    Ok((w[0] * sp.u + w[1] * sp.v + w[2] * sp.z, dx.to_vec()))
                }),
            })
        }),
        entry("project_covariance", OP_TOLERANCE, |rng| {
            let cam = random_camera(rng, 16, 12);
            let mut x = point_in_front(rng, &cam).to_vec();
            x.extend(random_spd(rng, 0.05));
            let w = weights(rng, 3);
            Ok(Trial {
                x,
                eval: Box::new(move |x| {
                    let p = [x[0], x[1], x[2]];
                    let sig: Sym3 = std::array::from_fn(|i| x[3 + i]);
                    let cov = cam.project_covariance(&p, &sig, DEFAULT_COV_FLOOR)?;
                    let g = SplatGrad {
                        cov: [w[0], w[1], w[2]],
                        ..SplatGrad::default()
                    };
                    let (dx, ds) = cam.splat_vjp(&p, &sig, &g);
                    let mut grad = dx.to_vec();
                    grad.extend(ds);
                    Ok((dot(&cov, &w), grad))
                }),
            })
        }),
        entry("rotation_scale_covariance", OP_TOLERANCE, |rng| {
            let mut x: Vec<f64> = (0..4).map(|_| rng.sample(StandardNormal)).collect();
            x.extend(uniform(rng, 3, -2.0, 0.5));
            let w = weights(rng, 6);
            Ok(Trial {
                x,
                eval: Box::new(move |x| {
                    let q = [x[0], x[1], x[2], x[3]];
                    let s = [x[4], x[5], x[6]];
                    let sig = covariance_from_rotation_scale(&q, &s);
                    let ws: Sym3 = std::array::from_fn(|i| w[i]);
                    let (dq, dls) = covariance_from_rotation_scale_vjp(&q, &s, &ws);
                    let mut grad = dq.to_vec();
                    grad.extend(dls);
                    Ok((dot(&sig, &w), grad))
                }),
            })
        }),
    ]
}

fn test_grid(rng: &mut ChaCha8Rng, w: usize, h: usize, frozen: bool) -> (PixelGaussianGrid, Camera) {
    let cam = random_camera(rng, w, h);
    let n = w * h;
    let grid = PixelGaussianGrid {
        view_index: 0,
        width: w,
        height: h,
        depth_init: uniform(rng, n, 1.0, 3.0),
        color: vec![0.5; 3 * n],
        rotation: [1.0, 0.0, 0.0, 0.0].repeat(n),
        log_scale: vec![0.0; 3 * n],
        alpha_init: 0.5,
        frozen_covariance: frozen,
        radius_scale: 1.0,
        segmask: SegMask::single(w, h),
    };
    (grid, cam)
}

fn materialize_entry(name: &'static str, frozen: bool) -> SuiteEntry {
    entry(name, OP_TOLERANCE, move |rng| {
        let (w, h) = (4, 3);
        let n = w * h;
        let (grid, cam) = test_grid(rng, w, h, frozen);
        let mut x = uniform(rng, n, -0.3, 0.3);
        x.extend(uniform(rng, n, -0.3, 0.3));
        x.extend(uniform(rng, 3 * n, 0.0, 1.0));
        let mut shapes = vec![vec![h, w], vec![h, w], vec![n, 3]];
        if !frozen {
            x.extend((0..4 * n).map(|_| rng.sample::<f64, _>(StandardNormal)));
            x.extend(uniform(rng, 3 * n, -3.0, -1.0));
            shapes.push(vec![n, 4]);
            shapes.push(vec![n, 3]);
        }
        Ok(graph_trial(shapes, x, rng.gen(), move |g, v| {
            let inp = MaterializeInputs {
                depth_residual: v[0],
                opacity_residual: v[1],
                color: v[2],
                rotation: v.get(3).copied(),
                log_scale: v.get(4).copied(),
            };
            materialize(g, &grid, &cam, &inp)
        }))
    })
}

/// Random cloud in front of `cam` with depths at least 0.05 apart and
/// footprints of one to a few pixels.
pub fn random_cloud(rng: &mut ChaCha8Rng, cam: &Camera, n: usize) -> Vec<f64> {
    let mut cloud = GaussianCloud::default();
    for i in 0..n {
        let z = 1.5 + 0.1 * i as f64 + rng.gen_range(0.0..0.05);
        let u = rng.gen_range(-1.0..cam.width as f64 + 1.0);
        let v = rng.gen_range(-1.0..cam.height as f64 + 1.0);
        let x = cam.unproject_unchecked(u, v, z);
        let size = z / cam.fx * rng.gen_range(0.8..2.5);
        let cov = random_spd(rng, size);
        let col = [rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)];
        cloud.push(x, cov, rng.gen_range(0.1..0.95), col);
    }
    cloud.data
}

fn render_entry() -> SuiteEntry {
    let mut spp_toggle = 0usize;
    entry("render", RASTER_TOLERANCE, move |rng| {
        let cam = Camera::looking_forward(24.0, 24.0, 12, 10, [0.0; 3]);
        let n = 12;
        let x = random_cloud(rng, &cam, n);
        spp_toggle += 1;
        let spp = if spp_toggle % 2 == 0 { 4 } else { 1 };
        Ok(graph_trial(vec![vec![n, CLOUD_STRIDE]], x, rng.gen(), move |g, v| {
            render_var(g, v[0], &cam, spp, &RenderSettings::reference())
        }))
    })
}

/// Decoder parameter shapes in registration order.
fn decoder_shapes(cfg: &DecoderConfig) -> Vec<Vec<usize>> {
    cfg.layer_channels()
        .into_iter()
        .flat_map(|(cin, cout)| [vec![cout, cin, KERNEL, KERNEL], vec![cout]])
        .collect()
}

fn decoder_vars(v: &[Var]) -> DecoderVars {
    DecoderVars {
        layers: v.chunks(2).map(|c| (c[0], c[1])).collect(),
    }
}

fn decoder_entry() -> SuiteEntry {
    entry("decoder", OP_TOLERANCE, |rng| {
        let cfg = DecoderConfig {
            width: 16,
            height: 16,
            capacity: 1,
            channels: 2,
            head: Head::Depth,
        };
        let shapes = decoder_shapes(&cfg);
        loop {
            let params = decoder::build(cfg, rng)?;
            let mut x: Vec<f64> = params.tensors().flat_map(|t| t.data().to_vec()).collect();
            // random biases so hidden units are not all tied to the inputs
            let mut at = 0;
            for s in &shapes {
                let len: usize = s.iter().product();
                if s.len() == 1 {
                    x[at..at + len].copy_from_slice(&uniform(rng, len, -0.3, 0.3));
                }
                at += len;
            }
            let n_view: f64 = rng.gen_range(0.0..1.0);
            // keep every hidden pre-activation clear of the leaky-ReLU hinge
            let mut g = Graph::new();
            let vars: Vec<Var> = split_inputs(&shapes, &x)?.into_iter().map(|t| g.constant(t)).collect();
            let (_, pre) = decoder::decode_traced(&mut g, &cfg, &decoder_vars(&vars), n_view)?;
            let margin = pre.iter().flat_map(|&p| g.value(p).data().iter().map(|v| v.abs())).fold(f64::INFINITY, f64::min);
            if margin < 1e-3 {
                continue;
            }
            return Ok(graph_trial(shapes.clone(), x, rng.gen(), move |g, v| {
                decoder::decode(g, &cfg, &decoder_vars(v), n_view)
            }));
        }
    })
}

fn random_mask(rng: &mut ChaCha8Rng, channels: usize, w: usize, h: usize) -> SegMask {
    let labels = (0..w * h).map(|_| rng.gen_range(0..channels) as u8).collect();
    SegMask::new(channels, w, h, labels).expect("valid mask")
}

fn loss_entries() -> Vec<SuiteEntry> {
    vec![
        entry("apply_mask", OP_TOLERANCE, |rng| {
            let mask = random_mask(rng, 3, 5, 4);
            let x = uniform(rng, 60, -1.0, 1.0);
            Ok(graph_trial(vec![vec![3, 4, 5]], x, rng.gen(), move |g, v| {
                decoder::apply_mask(g, v[0], &mask)
            }))
        }),
        entry("ssim", OP_TOLERANCE, |rng| {
            let target = Tensor::new(vec![3, 9, 8], uniform(rng, 216, 0.0, 1.0))?;
            let x = uniform(rng, 216, 0.0, 1.0);
            Ok(graph_trial(vec![vec![3, 9, 8]], x, 0, move |g, v| ssim_var(g, v[0], &target)))
        }),
        entry("photometric", OP_TOLERANCE, |rng| loop {
            let t = uniform(rng, 192, 0.0, 1.0);
            let x = uniform(rng, 192, 0.0, 1.0);
            if x.iter().zip(&t).any(|(a, b)| (a - b).abs() < 1e-3) {
                continue;
            }
            let target = Tensor::new(vec![3, 8, 8], t)?;
            return Ok(graph_trial(vec![vec![3, 8, 8]], x, 0, move |g, v| photometric(g, v[0], &target, 0.2)));
        }),
        entry("tv_losses", OP_TOLERANCE, |rng| loop {
            let (w, h) = (7, 6);
            let d = uniform(rng, w * h, 0.5, 3.0);
            let disp: Vec<f64> = d.iter().map(|v| 1.0 / (1.0 + v)).collect();
            let near_kink = (0..h).any(|y| {
                (0..w).any(|x| {
                    let p = y * w + x;
                    (x + 1 < w && (disp[p] - disp[p + 1]).abs() < 1e-4) || (y + 1 < h && (disp[p] - disp[p + w]).abs() < 1e-4)
                })
            });
            if near_kink {
                continue;
            }
            let mask = random_mask(rng, 2, w, h);
            let mix: f64 = rng.gen_range(0.0..1.0);
            return Ok(graph_trial(vec![vec![h, w]], d, 0, move |g, v| {
                let (tv, mtv) = tv_losses(g, v[0], &mask)?;
                let a = g.scale(tv, 1.0 - mix);
                let b = g.scale(mtv, mix);
                g.add(a, b)
            }));
        }),
        entry("flow_loss", OP_TOLERANCE, |rng| loop {
            let (w, h) = (6, 5);
            let cams = [random_camera(rng, w, h), random_camera(rng, w, h)];
            let mut pairs = Vec::new();
            for (i, j) in [(0usize, 1usize), (1, 0)] {
                let f = FlowField::new(w, h, uniform(rng, 2 * w * h, -2.0, 2.0))?;
                let m = ConsistencyMask {
                    width: w,
                    height: h,
                    data: (0..w * h).map(|_| rng.gen_bool(0.7)).collect(),
                };
                pairs.push(correspondences((i, &cams[i]), (j, &cams[j]), &f, &m)?);
            }
            let x = uniform(rng, 2 * w * h, 1.0, 3.0);
            let (d0, d1) = x.split_at(w * h);
            let near_kink = pairs.iter().any(|pr| {
                let (di, dj) = if pr.i == 0 { (d0, d1) } else { (d1, d0) };
                pr.items.iter().any(|c| {
                    let dq = c.q.sample(dj);
                    (0..3).any(|k| ((c.ray_p[k] * di[c.p] + pr.origin_i[k]) - (c.ray_q[k] * dq + pr.origin_j[k])).abs() < 1e-4)
                })
            });
            if near_kink || pairs.iter().all(|p| p.items.is_empty()) {
                continue;
            }
            return Ok(graph_trial(vec![vec![h, w], vec![h, w]], x, 0, move |g, v| flow_loss(g, v, &pairs)));
        }),
    ]
}

/// Every differentiable operation with its sampler and tolerance.
pub fn suite() -> Vec<SuiteEntry> {
    let mut s = vec![
        binary_entry("add", BinaryOp::Add, false),
        binary_entry("sub", BinaryOp::Sub, false),
        binary_entry("mul", BinaryOp::Mul, false),
        binary_entry("div", BinaryOp::Div, true),
        binary_entry("sq_diff", BinaryOp::SqDiff, false),
        unary_entry("abs", UnaryOp::Abs, |r| away_from_zero(r, 10, 0.1, 2.0)),
        unary_entry("exp", UnaryOp::Exp, |r| uniform(r, 10, -2.0, 2.0)),
        unary_entry("reciprocal", UnaryOp::Reciprocal, |r| away_from_zero(r, 10, 0.5, 2.0)),
        unary_entry("sigmoid", UnaryOp::Sigmoid, |r| uniform(r, 10, -3.0, 3.0)),
        unary_entry("clamp", UnaryOp::Clamp { lo: -0.5, hi: 0.5 }, |r| {
            uniform(r, 10, -1.0, 1.0)
                .into_iter()
                .map(|v| if (v.abs() - 0.5).abs() < 1e-3 { v * 0.9 } else { v })
                .collect()
        }),
        unary_entry("leaky_relu", UnaryOp::LeakyRelu(0.2), |r| away_from_zero(r, 10, 0.05, 2.0)),
        unary_entry("scale", UnaryOp::Scale(-1.7), |r| uniform(r, 10, -2.0, 2.0)),
        unary_entry("add_scalar", UnaryOp::AddScalar(0.3), |r| uniform(r, 10, -2.0, 2.0)),
        entry("scalar_broadcast", OP_TOLERANCE, |rng| {
            let x = uniform(rng, 7, -2.0, 2.0);
            Ok(graph_trial(vec![vec![2, 3], vec![]], x, rng.gen(), |g, v| g.mul(v[0], v[1])))
        }),
        entry("sum_axes", OP_TOLERANCE, |rng| {
            let x = uniform(rng, 24, -2.0, 2.0);
            Ok(graph_trial(vec![vec![2, 3, 4]], x, rng.gen(), |g, v| g.sum(v[0], Some(&[1]))))
        }),
        entry("mean_axes", OP_TOLERANCE, |rng| {
            let x = uniform(rng, 24, -2.0, 2.0);
            Ok(graph_trial(vec![vec![2, 3, 4]], x, rng.gen(), |g, v| g.mean(v[0], Some(&[0, 2]))))
        }),
        entry("narrow", OP_TOLERANCE, |rng| {
            let x = uniform(rng, 12, -2.0, 2.0);
            Ok(graph_trial(vec![vec![4, 3]], x, rng.gen(), |g, v| g.narrow(v[0], 1, 2)))
        }),
        entry("concat", OP_TOLERANCE, |rng| {
            let x = uniform(rng, 9, -2.0, 2.0);
            Ok(graph_trial(vec![vec![2, 3], vec![1, 3]], x, rng.gen(), |g, v| g.concat(v)))
        }),
        entry("diff", OP_TOLERANCE, |rng| {
            let x = uniform(rng, 20, -2.0, 2.0);
            let axis = rng.gen_range(0..2);
            Ok(graph_trial(vec![vec![4, 5]], x, rng.gen(), move |g, v| g.diff(v[0], axis)))
        }),
        entry("reshape", OP_TOLERANCE, |rng| {
            let x = uniform(rng, 12, -2.0, 2.0);
            Ok(graph_trial(vec![vec![3, 4]], x, rng.gen(), |g, v| {
                let r = g.reshape(v[0], &[2, 6])?;
                g.mul(r, r)
            }))
        }),
        entry("conv2d", OP_TOLERANCE, |rng| {
            let x = uniform(rng, 60 + 54 + 3, -1.0, 1.0);
            Ok(graph_trial(vec![vec![2, 5, 6], vec![3, 2, 3, 3], vec![3]], x, rng.gen(), |g, v| {
                g.conv2d(v[0], v[1], v[2])
            }))
        }),
        entry("upsample2x", OP_TOLERANCE, |rng| {
            let x = uniform(rng, 24, -1.0, 1.0);
            Ok(graph_trial(vec![vec![2, 3, 4]], x, rng.gen(), |g, v| g.upsample2x(v[0])))
        }),
    ];
    s.extend(geometry_entries());
    s.push(materialize_entry("materialize_frozen", true));
    s.push(materialize_entry("materialize_free", false));
    s.push(render_entry());
    s.push(decoder_entry());
    s.extend(loss_entries());
    s
}

/// Runs [`suite`] with `trials` random points per operation.
pub fn run_suite(trials: usize, seed: u64) -> Result<Vec<OpReport>> {
    suite()
        .into_iter()
        .enumerate()
        .map(|(i, mut e)| check(e.name, e.tolerance, trials, seed.wrapping_add(i as u64), &mut e.sample))
        .collect()
}
