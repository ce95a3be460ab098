//! Shared rasterizer oracle: a direct per-pixel compositor with its own
//! projection math, and the random scenes it is checked on.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use raysplat::geometry::Camera;
use raysplat::gradcheck::random_spd;
use raysplat::raster::RenderOutput;
use raysplat::scene::{GaussianCloud, CLOUD_STRIDE};

/// Every Gaussian at every sample, exact depth order, no truncation.
pub fn brute_force(cloud: &[f64], cam: &Camera, spp: usize) -> RenderOutput {
    let (w, h) = (cam.width, cam.height);
    let hw = w * h;
    struct G {
        z: f64,
        idx: usize,
        u: f64,
        v: f64,
        inv: [f64; 3],
        a: f64,
        c: [f64; 3],
    }
    let mut gs = Vec::new();
    for (idx, g) in cloud.chunks(CLOUD_STRIDE).enumerate() {
        let r = cam.rotation;
        let t: Vec<f64> = (0..3).map(|i| (0..3).map(|k| r[i][k] * g[k]).sum::<f64>() + cam.translation[i]).collect();
        if t[2] <= 1e-4 {
            continue;
        }
        let s = [[g[3], g[4], g[5]], [g[4], g[6], g[7]], [g[5], g[7], g[8]]];
        let j = [
            [cam.fx / t[2], 0.0, -cam.fx * t[0] / (t[2] * t[2])],
            [0.0, cam.fy / t[2], -cam.fy * t[1] / (t[2] * t[2])],
        ];
        let mut jw = [[0.0; 3]; 2];
        for a in 0..2 {
            for b in 0..3 {
                jw[a][b] = (0..3).map(|k| j[a][k] * r[k][b]).sum();
            }
        }
        let mut c2 = [[0.0; 2]; 2];
        for a in 0..2 {
            for b in 0..2 {
                for p in 0..3 {
                    for q in 0..3 {
                        c2[a][b] += jw[a][p] * s[p][q] * jw[b][q];
                    }
                }
            }
        }
        c2[0][0] += 0.3;
        c2[1][1] += 0.3;
        let det = c2[0][0] * c2[1][1] - c2[0][1] * c2[1][0];
        gs.push(G {
            z: t[2],
            idx,
            u: cam.fx * t[0] / t[2] + cam.cx,
            v: cam.fy * t[1] / t[2] + cam.cy,
            inv: [c2[1][1] / det, -c2[0][1] / det, c2[0][0] / det],
            a: g[9],
            c: [g[10], g[11], g[12]],
        });
    }
    gs.sort_by(|a, b| a.z.partial_cmp(&b.z).unwrap().then(a.idx.cmp(&b.idx)));
    let offsets: Vec<(f64, f64)> = if spp == 1 {
        vec![(0.5, 0.5)]
    } else {
        vec![(0.25, 0.25), (0.75, 0.25), (0.25, 0.75), (0.75, 0.75)]
    };
    let mut out = RenderOutput {
        width: w,
        height: h,
        color: vec![0.0; 3 * hw],
        depth: vec![0.0; hw],
        accum_opacity: vec![0.0; hw],
    };
    for y in 0..h {
        for x in 0..w {
            let p = y * w + x;
            for &(ox, oy) in &offsets {
                let (sx, sy) = (x as f64 + ox, y as f64 + oy);
                let mut t = 1.0;
                for g in &gs {
                    let (dx, dy) = (sx - g.u, sy - g.v);
                    let m = g.inv[0] * dx * dx + 2.0 * g.inv[1] * dx * dy + g.inv[2] * dy * dy;
                    let gamma = g.a * (-0.5 * m).exp();
                    for c in 0..3 {
                        out.color[c * hw + p] += t * gamma * g.c[c] / offsets.len() as f64;
                    }
                    out.depth[p] += t * gamma * g.z / offsets.len() as f64;
                    t *= 1.0 - gamma;
                }
                out.accum_opacity[p] += (1.0 - t) / offsets.len() as f64;
            }
        }
    }
    out
}

/// Up to 100 Gaussians scattered in front of a 32x32 camera, some partly
/// off-screen and a few behind it.
pub fn scene(seed: u64) -> (Vec<f64>, Camera) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cam = Camera::looking_forward(32.0, 30.0, 32, 32, [rng.gen_range(-0.2..0.2), 0.0, 0.0]);
    let n = rng.gen_range(1..=100);
    let mut cloud = GaussianCloud::default();
    for _ in 0..n {
        let z = rng.gen_range(-0.5..6.0);
        let x = [rng.gen_range(-1.5..1.5), rng.gen_range(-1.5..1.5), z];
        let spread = rng.gen_range(0.01..0.2);
        let cov = random_spd(&mut rng, spread);
        let col = [rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)];
        cloud.push(x, cov, rng.gen_range(0.005..0.995), col);
    }
    (cloud.data, cam)
}

pub fn max_diff(a: &RenderOutput, b: &RenderOutput) -> f64 {
    let planes = |r: &RenderOutput| r.color.iter().chain(&r.depth).chain(&r.accum_opacity).cloned().collect::<Vec<_>>();
    planes(a).iter().zip(planes(b)).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
