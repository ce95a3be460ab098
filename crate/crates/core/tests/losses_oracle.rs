//! Loss terms, flow correspondences, Adam and the initialization steps
//! against direct scalar re-implementations.

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use raysplat::autodiff::{Graph, Tensor};
use raysplat::flow::{consistency_mask, correspondences, flow_objective, FlowField, DEFAULT_TAU};
use raysplat::geometry::Camera;
use raysplat::init::{align_depths, segment_by_depth, AlignConfig};
use raysplat::losses::{flow_loss, photometric, ssim, tv_losses, SSIM_C1, SSIM_C2};
use raysplat::optim::AdamState;
use raysplat::pipeline::build_pairs;
use raysplat::scene::SegMask;
use raysplat::synth::{synth_scene, SynthConfig};

fn random_vec(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(lo..hi)).collect()
}

/// SSIM with an explicit 11x11 window; taps that fall outside the image
/// contribute zero but the weights are not renormalized.
fn ssim_direct(x: &[f64], y: &[f64], c: usize, h: usize, w: usize) -> f64 {
    let g: Vec<f64> = (0..11).map(|i| (-((i as f64 - 5.0).powi(2)) / (2.0 * 1.5 * 1.5)).exp()).collect();
    let s: f64 = g.iter().sum();
    let g: Vec<f64> = g.iter().map(|v| v / s).collect();
    let mut total = 0.0;
    for ch in 0..c {
        let o = ch * h * w;
        for py in 0..h as isize {
            for px in 0..w as isize {
                let (mut mx, mut my, mut xx, mut yy, mut xy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for (dy, gy) in g.iter().enumerate() {
                    for (dx, gx) in g.iter().enumerate() {
                        let (qy, qx) = (py + dy as isize - 5, px + dx as isize - 5);
                        if qy < 0 || qx < 0 || qy >= h as isize || qx >= w as isize {
                            continue;
                        }
                        let k = gy * gx;
                        let i = o + qy as usize * w + qx as usize;
                        mx += k * x[i];
                        my += k * y[i];
                        xx += k * x[i] * x[i];
                        yy += k * y[i] * y[i];
                        xy += k * x[i] * y[i];
                    }
                }
                let (vx, vy, cxy) = (xx - mx * mx, yy - my * my, xy - mx * my);
                total += (2.0 * mx * my + SSIM_C1) * (2.0 * cxy + SSIM_C2)
                    / ((mx * mx + my * my + SSIM_C1) * (vx + vy + SSIM_C2));
            }
        }
    }
    total / (c * h * w) as f64
}

#[test]
fn ssim_matches_direct_window() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for (c, h, w) in [(1, 7, 9), (3, 16, 16), (3, 13, 24)] {
        let x = random_vec(&mut rng, c * h * w, 0.0, 1.0);
        let y: Vec<f64> = x.iter().map(|v| (v + rng.gen_range(-0.2..0.2)).clamp(0.0, 1.0)).collect();
        let got = ssim(&x, &y, c, h, w).unwrap();
        let want = ssim_direct(&x, &y, c, h, w);
        assert!((got - want).abs() < 1e-10, "{c}x{h}x{w}: {got} vs {want}");
    }
}

#[test]
fn ssim_of_identical_images_is_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = random_vec(&mut rng, 3 * 10 * 10, 0.0, 1.0);
    assert!((ssim(&x, &x, 3, 10, 10).unwrap() - 1.0).abs() < 1e-12);
}

#[test]
fn photometric_matches_scalar_formula() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (c, h, w) = (3, 12, 10);
    for lambda in [0.0, 0.2, 1.0] {
        let x = random_vec(&mut rng, c * h * w, 0.0, 1.0);
        let t = random_vec(&mut rng, c * h * w, 0.0, 1.0);
        let mut g = Graph::new();
        let xv = g.param(Tensor::new(vec![c, h, w], x.clone()).unwrap());
        let target = Tensor::new(vec![c, h, w], t.clone()).unwrap();
        let l = photometric(&mut g, xv, &target, lambda).unwrap();
        let l1 = x.iter().zip(&t).map(|(a, b)| (a - b).abs()).sum::<f64>() / x.len() as f64;
        let want = (1.0 - lambda) * l1 + lambda * (1.0 - ssim_direct(&x, &t, c, h, w));
        assert!((g.value(l).item() - want).abs() < 1e-10);
    }
}

#[test]
fn photometric_rejects_mismatched_shapes() {
    let mut g = Graph::new();
    let x = g.param(Tensor::zeros(vec![3, 4, 4]));
    assert!(photometric(&mut g, x, &Tensor::zeros(vec![3, 4, 5]), 0.2).is_err());
}

fn tv_direct(depth: &[f64], labels: &[u8], w: usize, h: usize) -> (f64, f64) {
    let disp = |i: usize| 1.0 / (1.0 + depth[i]);
    let (mut tv, mut mtv) = (0.0, 0.0);
    for y in 0..h {
        for x in 0..w {
            let p = y * w + x;
            let mut pair = |q: usize| {
                let d = (disp(p) - disp(q)).abs();
                tv += d;
                if labels[p] == labels[q] {
                    mtv += d;
                }
            };
            if x + 1 < w {
                pair(p + 1);
            }
            if y + 1 < h {
                pair(p + w);
            }
        }
    }
    let n = (w * h) as f64;
    (tv / n, mtv / n)
}

fn random_mask(rng: &mut ChaCha8Rng, channels: usize, w: usize, h: usize) -> SegMask {
    let labels = (0..w * h).map(|_| rng.gen_range(0..channels) as u8).collect();
    SegMask::new(channels, w, h, labels).unwrap()
}

#[test]
fn tv_and_masked_tv_match_scalar_loops() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for (w, h) in [(1, 1), (1, 6), (7, 1), (9, 5), (16, 16)] {
        let depth = random_vec(&mut rng, w * h, 0.5, 8.0);
        let mask = random_mask(&mut rng, 3, w, h);
        let mut g = Graph::new();
        let d = g.param(Tensor::new(vec![h, w], depth.clone()).unwrap());
        let (tv, mtv) = tv_losses(&mut g, d, &mask).unwrap();
        let (want_tv, want_mtv) = tv_direct(&depth, &mask.labels, w, h);
        assert!((g.value(tv).item() - want_tv).abs() < 1e-12, "tv {w}x{h}");
        assert!((g.value(mtv).item() - want_mtv).abs() < 1e-12, "mtv {w}x{h}");
    }
}

#[test]
fn single_channel_mask_makes_both_variants_equal() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let depth = random_vec(&mut rng, 64, 1.0, 3.0);
    let mask = SegMask::new(1, 8, 8, vec![0; 64]).unwrap();
    let mut g = Graph::new();
    let d = g.param(Tensor::new(vec![8, 8], depth).unwrap());
    let (tv, mtv) = tv_losses(&mut g, d, &mask).unwrap();
    assert_eq!(g.value(tv).item(), g.value(mtv).item());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn masked_tv_never_exceeds_tv(seed in 0u64..1_000_000, w in 1usize..12, h in 1usize..12, channels in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let depth = random_vec(&mut rng, w * h, 0.1, 20.0);
        let mask = random_mask(&mut rng, channels, w, h);
        let mut g = Graph::new();
        let d = g.param(Tensor::new(vec![h, w], depth).unwrap());
        let (tv, mtv) = tv_losses(&mut g, d, &mask).unwrap();
        prop_assert!(g.value(mtv).item() <= g.value(tv).item());
        prop_assert!(g.value(mtv).item() >= 0.0);
    }

    #[test]
    fn segmentation_is_invariant_under_monotone_depth_maps(seed in 0u64..1_000_000, channels in 1usize..8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (w, h) = (10, 7);
        // quantized so that ties occur
        let depth: Vec<f64> = (0..w * h).map(|_| (rng.gen_range(0.5..6.0) * 4.0f64).round() / 4.0).collect();
        let a = segment_by_depth(&depth, w, h, channels).unwrap();
        let s = rng.gen_range(0.1..5.0);
        let o = rng.gen_range(0.0..3.0);
        let affine: Vec<f64> = depth.iter().map(|d| s * d + o).collect();
        let cubic: Vec<f64> = depth.iter().map(|d| d * d * d + d).collect();
        prop_assert_eq!(&segment_by_depth(&affine, w, h, channels).unwrap(), &a);
        prop_assert_eq!(&segment_by_depth(&cubic, w, h, channels).unwrap(), &a);
        prop_assert!(a.labels.iter().all(|&l| (l as usize) < channels));
    }

    #[test]
    fn consistency_mask_is_symmetric_for_swapped_translations(seed in 0u64..1_000_000, tau in 0.1f64..3.0) {
        // forward flow u_f and backward u_b = -u_f everywhere: pure integer
        // shifts compose exactly, so the masks depend only on bounds
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (w, h) = (9, 8);
        let (du, dv) = (rng.gen_range(-3i32..=3) as f64, rng.gen_range(-3i32..=3) as f64);
        let f = FlowField::new(w, h, [du, dv].repeat(w * h)).unwrap();
        let b = FlowField::new(w, h, [-du, -dv].repeat(w * h)).unwrap();
        let fwd = consistency_mask(&f, &b, tau).unwrap();
        let bwd = consistency_mask(&b, &f, tau).unwrap();
        for y in 0..h {
            for x in 0..w {
                let (qx, qy) = (x as f64 + du, y as f64 + dv);
                let inside = qx >= 0.0 && qy >= 0.0 && qx <= (w - 1) as f64 && qy <= (h - 1) as f64;
                prop_assert_eq!(fwd.data[y * w + x], inside);
                if inside {
                    // the target pixel maps straight back
                    prop_assert!(bwd.data[qy as usize * w + qx as usize]);
                }
            }
        }
        prop_assert_eq!(fwd.count(), bwd.count());
    }
}

/// Bilinear weight of grid point `(x, y)` for a sample at `(qx, qy)`.
fn tent(qx: f64, qy: f64, x: usize, y: usize) -> f64 {
    (1.0 - (qx - x as f64).abs()).max(0.0) * (1.0 - (qy - y as f64).abs()).max(0.0)
}

fn sample_direct(values: &[f64], w: usize, h: usize, qx: f64, qy: f64) -> f64 {
    let mut s = 0.0;
    for y in 0..h {
        for x in 0..w {
            s += tent(qx, qy, x, y) * values[y * w + x];
        }
    }
    s
}

fn mask_direct(f: &FlowField, b: &FlowField, tau: f64) -> Vec<bool> {
    let (w, h) = (f.width, f.height);
    let mut out = vec![false; w * h];
    for y in 0..h {
        for x in 0..w {
            let (du, dv) = f.at(x, y);
            let (qx, qy) = (x as f64 + du, y as f64 + dv);
            if qx < 0.0 || qy < 0.0 || qx > (w - 1) as f64 || qy > (h - 1) as f64 {
                continue;
            }
            let bu = sample_direct(&b.data.iter().step_by(2).cloned().collect::<Vec<_>>(), w, h, qx, qy);
            let bv = sample_direct(&b.data.iter().skip(1).step_by(2).cloned().collect::<Vec<_>>(), w, h, qx, qy);
            out[y * w + x] = ((du + bu).powi(2) + (dv + bv).powi(2)).sqrt() <= tau;
        }
    }
    out
}

fn random_flow(rng: &mut ChaCha8Rng, w: usize, h: usize, spread: f64) -> FlowField {
    let (bu, bv) = (rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
    let data = (0..w * h).flat_map(|_| [bu + rng.gen_range(-spread..spread), bv + rng.gen_range(-spread..spread)]).collect();
    FlowField::new(w, h, data).unwrap()
}

#[test]
fn consistency_mask_matches_direct_lookup() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..20 {
        let (w, h) = (rng.gen_range(2..14), rng.gen_range(2..14));
        let f = random_flow(&mut rng, w, h, 1.0);
        let mut b = random_flow(&mut rng, w, h, 1.0);
        for v in b.data.iter_mut() {
            *v = -*v * 0.5;
        }
        let tau = rng.gen_range(0.2..2.0);
        assert_eq!(consistency_mask(&f, &b, tau).unwrap().data, mask_direct(&f, &b, tau));
    }
}

#[test]
fn consistency_mask_rejects_bad_inputs() {
    let f = FlowField::zeros(4, 4);
    assert!(consistency_mask(&f, &FlowField::zeros(4, 5), 1.0).is_err());
    assert!(consistency_mask(&f, &f, 0.0).is_err());
    assert!(consistency_mask(&f, &f, f64::NAN).is_err());
}

fn two_cameras(w: usize, h: usize) -> (Camera, Camera) {
    (
        Camera::looking_forward(w as f64, w as f64, w, h, [0.0; 3]),
        Camera::looking_forward(w as f64, w as f64, w, h, [0.3, 0.05, 0.0]),
    )
}

/// Mean L1 3-D distance over every consistent, in-bounds correspondence.
fn flow_loss_direct(cams: &[&Camera], flows: &[(usize, usize, &FlowField, Vec<bool>)], depths: &[Vec<f64>]) -> f64 {
    let (mut sum, mut count) = (0.0, 0usize);
    for (i, j, f, mask) in flows {
        let (ci, cj) = (cams[*i], cams[*j]);
        let (w, h) = (ci.width, ci.height);
        for y in 0..h {
            for x in 0..w {
                if !mask[y * w + x] {
                    continue;
                }
                let (du, dv) = f.at(x, y);
                let (qx, qy) = (x as f64 + du, y as f64 + dv);
                let (rp, op) = ci.pixel_ray(x as f64 + 0.5, y as f64 + 0.5);
                let (rq, oq) = cj.pixel_ray(qx + 0.5, qy + 0.5);
                let dp = depths[*i][y * w + x];
                let dq = sample_direct(&depths[*j], w, h, qx, qy);
                for k in 0..3 {
                    sum += ((rp[k] * dp + op[k]) - (rq[k] * dq + oq[k])).abs();
                }
                count += 1;
            }
        }
    }
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}

#[test]
fn flow_loss_matches_scalar_mean_over_correspondences() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (w, h) = (12, 10);
    let (ca, cb) = two_cameras(w, h);
    for _ in 0..10 {
        let f = random_flow(&mut rng, w, h, 0.8);
        let mut b = random_flow(&mut rng, w, h, 0.8);
        for (bv, fv) in b.data.iter_mut().zip(&f.data) {
            *bv = -fv + *bv * 0.3;
        }
        let tau = rng.gen_range(0.5..2.0);
        let mf = consistency_mask(&f, &b, tau).unwrap();
        let mb = consistency_mask(&b, &f, tau).unwrap();
        let pairs = vec![
            correspondences((0, &ca), (1, &cb), &f, &mf).unwrap(),
            correspondences((1, &cb), (0, &ca), &b, &mb).unwrap(),
        ];
        let depths = vec![random_vec(&mut rng, w * h, 1.0, 4.0), random_vec(&mut rng, w * h, 1.0, 4.0)];
        let want = flow_loss_direct(
            &[&ca, &cb],
            &[(0, 1, &f, mask_direct(&f, &b, tau)), (1, 0, &b, mask_direct(&b, &f, tau))],
            &depths,
        );
        let mut g = Graph::new();
        let vars: Vec<_> = depths.iter().map(|d| g.param(Tensor::new(vec![h, w], d.clone()).unwrap())).collect();
        let l = flow_loss(&mut g, &vars, &pairs).unwrap();
        assert!((g.value(l).item() - want).abs() < 1e-10, "{} vs {want}", g.value(l).item());
    }
}

#[test]
fn flow_objective_is_zero_without_correspondences() {
    let (ca, cb) = two_cameras(6, 6);
    let f = FlowField::new(6, 6, [100.0, 0.0].repeat(36)).unwrap();
    let m = consistency_mask(&f, &f, 1.0).unwrap();
    let pair = correspondences((0, &ca), (1, &cb), &f, &m).unwrap();
    assert!(pair.items.is_empty());
    let d = vec![1.0; 36];
    let (v, grads) = flow_objective(&[pair], &[&d, &d]).unwrap();
    assert_eq!(v, 0.0);
    assert!(grads.iter().flatten().all(|&g| g == 0.0));
}

#[test]
fn adam_matches_scalar_reference_for_100_steps() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let n = 17;
    let mut params = random_vec(&mut rng, n, -1.0, 1.0);
    let mut reference = params.clone();
    let mut state = AdamState::new(n);
    let (mut m, mut v) = (vec![0.0; n], vec![0.0; n]);
    for t in 1..=100 {
        let grads = random_vec(&mut rng, n, -3.0, 3.0);
        let lr = 1e-3 * (1.0 + (t % 7) as f64);
        state.step(&mut params, &grads, lr);
        for i in 0..n {
            m[i] = 0.9 * m[i] + 0.1 * grads[i];
            v[i] = 0.999 * v[i] + 0.001 * grads[i] * grads[i];
            let mh = m[i] / (1.0 - 0.9f64.powi(t));
            let vh = v[i] / (1.0 - 0.999f64.powi(t));
            reference[i] -= lr * mh / (vh.sqrt() + 1e-8);
        }
    }
    for (a, b) in params.iter().zip(&reference) {
        assert!((a - b).abs() < 1e-12);
    }
    assert_eq!(state.t, 100);
}

fn noiseless(corruption: Vec<(f64, f64)>) -> SynthConfig {
    SynthConfig {
        depth_noise: 0.0,
        corruption,
        ..SynthConfig::default()
    }
}

fn align(cfg: &SynthConfig) -> raysplat::init::AlignResult {
    let scene = synth_scene(cfg).unwrap();
    let ds = &scene.dataset;
    let (pairs, _) = build_pairs(&ds.cameras(), &ds.flows, DEFAULT_TAU).unwrap();
    let mono: Vec<Vec<f64>> = ds.views.iter().map(|v| v.depth.clone()).collect();
    align_depths(&mono, &pairs, &AlignConfig::default()).unwrap()
}

#[test]
fn alignment_recovers_a_planted_two_view_corruption() {
    let mut cfg = noiseless(vec![(1.0, 0.0), (1.4, -0.3)]);
    cfg.train_centers = vec![[-0.1, 0.0, 0.0], [0.1, 0.0, 0.0]];
    let r = align(&cfg);
    assert_eq!((r.params.scale[0], r.params.offset[0]), (1.0, 0.0));
    assert!((r.params.scale[1] - 1.4).abs() < 1e-3, "{:?}", r.params);
    assert!((r.params.offset[1] + 0.3).abs() < 1e-3, "{:?}", r.params);
}

#[test]
fn alignment_objective_does_not_increase_on_noiseless_data() {
    let r = align(&noiseless(SynthConfig::default().corruption));
    for (k, w) in r.history.windows(2).enumerate() {
        assert!(w[1] <= w[0] + 1e-6, "step {k}: {} -> {}", w[0], w[1]);
    }
}

#[test]
fn consistent_depths_are_a_fixed_point_of_alignment() {
    let r = align(&noiseless(vec![(1.0, 0.0); 3]));
    for (s, o) in r.params.scale.iter().zip(&r.params.offset) {
        assert!((s - 1.0).abs() < 1e-4 && o.abs() < 1e-4, "{:?}", r.params);
    }
}

#[test]
fn synthetic_flows_are_consistent_over_the_shared_interior() {
    let scene = synth_scene(&noiseless(SynthConfig::default().corruption)).unwrap();
    let ds = &scene.dataset;
    for (i, j, f) in &ds.flows {
        let (_, _, b) = ds.flows.iter().find(|(a, c, _)| a == j && c == i).unwrap();
        let m = consistency_mask(f, b, DEFAULT_TAU).unwrap();
        for y in 0..f.height {
            for x in 0..f.width {
                let (du, dv) = f.at(x, y);
                let (qx, qy) = (x as f64 + du, y as f64 + dv);
                let inside = qx >= 0.0 && qy >= 0.0 && qx <= (f.width - 1) as f64 && qy <= (f.height - 1) as f64;
                if !inside {
                    assert!(!m.data[y * f.width + x]);
                }
            }
        }
        assert!(m.count() > f.width * f.height / 2, "flow {i}->{j}: {} consistent", m.count());
    }
}
