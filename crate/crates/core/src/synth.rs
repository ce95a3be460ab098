//! Synthetic two-plane scenes with exact depth, flow and cameras.
//!
//! A textured fronto-parallel plane at `near_depth` covers world `x < edge_x`
//! in front of a second textured plane at `far_depth`. Cameras are
//! axis-aligned and differ by translation only. Images are box-filtered over
//! `supersample²` samples per pixel and quantized to 8 bits; depths and flows
//! are rounded to `f32`, so the in-memory dataset equals what a round trip
//! through the file formats yields.

use std::f64::consts::TAU;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::dataset::{Dataset, HeldoutView, InputView};
use crate::error::{Error, Result};
use crate::flow::FlowField;
use crate::geometry::{Camera, Projection, Vec3};
use crate::io::json::{write_camera, write_json, FlowEntry, HeldoutEntry, Manifest, ViewEntry};
use crate::io::pfm::DepthMap;
use crate::io::{flo, pfm, png};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub width: usize,
    pub height: usize,
    pub focal: f64,
    pub near_depth: f64,
    pub far_depth: f64,
    pub edge_x: f64,
    pub train_centers: Vec<Vec3>,
    pub heldout_centers: Vec<Vec3>,
    /// Relative standard deviation of multiplicative depth noise.
    pub depth_noise: f64,
    /// Planted `(scale, offset)` per training view: stored depth is
    /// `(true_depth - offset) / scale`.
    pub corruption: Vec<(f64, f64)>,
    pub supersample: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            width: 64,
            height: 64,
            focal: 64.0,
            near_depth: 2.0,
            far_depth: 4.0,
            edge_x: 0.0,
            train_centers: vec![[-0.2, 0.0, 0.0], [0.0, 0.0, 0.0], [0.2, 0.0, 0.0]],
            heldout_centers: vec![[-0.1, 0.05, 0.0], [0.1, -0.05, 0.0]],
            depth_noise: 0.01,
            corruption: vec![(1.0, 0.0), (1.6, 0.4), (0.7, -0.6)],
            supersample: 4,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthScene {
    pub config: SynthConfig,
    pub dataset: Dataset,
    /// Noise-free planar depth of every training view.
    pub true_depths: Vec<Vec<f64>>,
}

impl SynthConfig {
    fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 || !(self.focal > 0.0) || self.supersample == 0 {
            return Err(Error::invalid("synthetic resolution, focal length and supersampling must be positive"));
        }
        if self.train_centers.len() < 2 {
            return Err(Error::invalid("a synthetic scene needs at least two training cameras"));
        }
        if self.corruption.len() != self.train_centers.len() {
            return Err(Error::invalid("one depth corruption per training camera is required"));
        }
        if !(self.near_depth < self.far_depth) {
            return Err(Error::invalid("the near plane must be in front of the far plane"));
        }
        for (a, c) in self.train_centers.iter().enumerate() {
            if c[2] >= self.near_depth - 0.1 {
                return Err(Error::invalid(format!("camera {a} is not in front of the scene")));
            }
            for b in &self.train_centers[..a] {
                if (0..3).map(|k| (c[k] - b[k]).powi(2)).sum::<f64>().sqrt() < 1e-6 {
                    return Err(Error::invalid(format!("camera {a} duplicates an earlier camera; no parallax")));
                }
            }
        }
        for &(s, o) in &self.corruption {
            if !(s > 0.0) || self.near_depth * (1.0 - 4.0 * self.depth_noise) - o <= 0.0 {
                return Err(Error::invalid(format!("corruption ({s}, {o}) would make depths non-positive")));
            }
        }
        Ok(())
    }

    fn camera(&self, center: Vec3) -> Camera {
        Camera::looking_forward(self.focal, self.focal, self.width, self.height, center)
    }

    /// World point and color seen along pixel coordinate `(u, v)`.
    fn trace(&self, cam: &Camera, u: f64, v: f64) -> (f64, [f64; 3]) {
        let c = cam.center();
        let near = cam.unproject_unchecked(u, v, self.near_depth - c[2]);
        if near[0] < self.edge_x {
            return (self.near_depth - c[2], near_texture(near[0], near[1]));
        }
        let far = cam.unproject_unchecked(u, v, self.far_depth - c[2]);
        (self.far_depth - c[2], far_texture(far[0], far[1]))
    }

    fn image(&self, cam: &Camera) -> Tensor {
        let (w, h, s) = (self.width, self.height, self.supersample);
        let hw = w * h;
        let mut data = vec![0.0; 3 * hw];
        for y in 0..h {
            for x in 0..w {
                let mut acc = [0.0; 3];
                for sy in 0..s {
                    for sx in 0..s {
                        let u = x as f64 + (sx as f64 + 0.5) / s as f64;
                        let v = y as f64 + (sy as f64 + 0.5) / s as f64;
                        let (_, col) = self.trace(cam, u, v);
                        for c in 0..3 {
                            acc[c] += col[c];
                        }
                    }
                }
                for c in 0..3 {
                    let mean = acc[c] / (s * s) as f64;
                    data[c * hw + y * w + x] = (mean.clamp(0.0, 1.0) * 255.0).round() / 255.0;
                }
            }
        }
        Tensor::new(vec![3, h, w], data).expect("image shape")
    }

    fn depth(&self, cam: &Camera) -> Vec<f64> {
        let mut d = Vec::with_capacity(self.width * self.height);
        for y in 0..self.height {
            for x in 0..self.width {
                d.push(self.trace(cam, x as f64 + 0.5, y as f64 + 0.5).0);
            }
        }
        d
    }
}

fn near_texture(x: f64, y: f64) -> [f64; 3] {
    [
        0.55 + 0.25 * (TAU * x / 0.35).sin() * (TAU * y / 0.45).cos(),
        0.45 + 0.2 * (TAU * (x + y) / 0.5).cos(),
        0.5 + 0.2 * (TAU * y / 0.3 + 1.0).sin(),
    ]
}

fn far_texture(x: f64, y: f64) -> [f64; 3] {
    [
        0.3 + 0.2 * (TAU * x / 0.7 + 0.5).sin(),
        0.6 + 0.2 * (TAU * y / 0.6).sin(),
        0.4 + 0.25 * (TAU * (x - y) / 0.8).cos(),
    ]
}

fn round_f32(v: &mut [f64]) {
    v.iter_mut().for_each(|x| *x = *x as f32 as f64);
}

/// Exact flow from view `i` to view `j` given view `i`'s true depth.
fn exact_flow(ci: &Camera, cj: &Camera, depth: &[f64]) -> FlowField {
    let (w, h) = (ci.width, ci.height);
    let mut data = vec![0.0; 2 * w * h];
    for y in 0..h {
        for x in 0..w {
            let p = y * w + x;
            let (u, v) = (x as f64 + 0.5, y as f64 + 0.5);
            let world = ci.unproject_unchecked(u, v, depth[p]);
            if let Projection::Visible { u: uj, v: vj, .. } = cj.project(&world) {
                data[2 * p] = uj - u;
                data[2 * p + 1] = vj - v;
            }
        }
    }
    round_f32(&mut data);
    FlowField { width: w, height: h, data }
}

pub fn synth_scene(cfg: &SynthConfig) -> Result<SynthScene> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let noise = Normal::new(0.0, cfg.depth_noise.max(0.0)).map_err(|e| Error::invalid(e.to_string()))?;
    let cams: Vec<Camera> = cfg.train_centers.iter().map(|&c| cfg.camera(c)).collect();
    let mut views = Vec::new();
    let mut true_depths = Vec::new();
    for (n, cam) in cams.iter().enumerate() {
        let truth = cfg.depth(cam);
        let (s, o) = cfg.corruption[n];
        let mut mono: Vec<f64> = truth
            .iter()
            .map(|d| {
                let e = if cfg.depth_noise > 0.0 { noise.sample(&mut rng) } else { 0.0 };
                (d * (1.0 + e) - o) / s
            })
            .collect();
        round_f32(&mut mono);
        views.push(InputView {
            image: cfg.image(cam),
            depth: mono,
            camera: cam.clone(),
        });
        true_depths.push(truth);
    }
    let mut flows = Vec::new();
    for i in 0..cams.len() {
        for j in 0..cams.len() {
            if i != j {
                flows.push((i, j, exact_flow(&cams[i], &cams[j], &true_depths[i])));
            }
        }
    }
    let heldout = cfg
        .heldout_centers
        .iter()
        .enumerate()
        .map(|(k, &c)| {
            let cam = cfg.camera(c);
            let mut depth = cfg.depth(&cam);
            round_f32(&mut depth);
            HeldoutView {
                name: format!("heldout{k}"),
                image: cfg.image(&cam),
                camera: cam,
                depth: Some(depth),
            }
        })
        .collect();
    Ok(SynthScene {
        config: cfg.clone(),
        dataset: Dataset {
            views,
            flows,
            heldout,
            output: None,
        },
        true_depths,
    })
}

/// Writes the scene's files and manifest into `dir`; returns the manifest path.
pub fn write_scene(scene: &SynthScene, dir: &Path) -> Result<PathBuf> {
    let ds = &scene.dataset;
    let depth_map = |cam: &Camera, data: &[f64]| DepthMap {
        width: cam.width,
        height: cam.height,
        data: data.to_vec(),
    };
    let mut manifest = Manifest {
        views: Vec::new(),
        flows: Vec::new(),
        heldout: Vec::new(),
        output: Some(PathBuf::from("out")),
    };
    for (n, v) in ds.views.iter().enumerate() {
        let e = ViewEntry {
            image: format!("view{n}.png").into(),
            depth: format!("view{n}_depth.pfm").into(),
            camera: format!("view{n}_camera.json").into(),
        };
        png::write(&dir.join(&e.image), &v.image)?;
        pfm::write(&dir.join(&e.depth), &depth_map(&v.camera, &v.depth))?;
        write_camera(&dir.join(&e.camera), &v.camera)?;
        manifest.views.push(e);
    }
    for (i, j, f) in &ds.flows {
        let e = FlowEntry {
            from: *i,
            to: *j,
            file: format!("flow_{i}_{j}.flo").into(),
        };
        flo::write(&dir.join(&e.file), f)?;
        manifest.flows.push(e);
    }
    for v in &ds.heldout {
        let e = HeldoutEntry {
            image: format!("{}.png", v.name).into(),
            camera: format!("{}_camera.json", v.name).into(),
            depth: v.depth.as_ref().map(|_| format!("{}_depth.pfm", v.name).into()),
        };
        png::write(&dir.join(&e.image), &v.image)?;
        write_camera(&dir.join(&e.camera), &v.camera)?;
        if let (Some(p), Some(d)) = (&e.depth, &v.depth) {
            pfm::write(&dir.join(p), &depth_map(&v.camera, d))?;
        }
        manifest.heldout.push(e);
    }
    write_json(&dir.join("synth_config.json"), &scene.config)?;
    let path = dir.join("manifest.json");
    write_json(&path, &manifest)?;
    Ok(path)
}
