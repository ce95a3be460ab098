//! Per-pixel Gaussian grids and their materialization into a splattable cloud.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Function, Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::geometry::{covariance_from_rotation_scale, covariance_from_rotation_scale_vjp, Camera, Sym3, Vec3};

/// Values per Gaussian in a packed cloud:
/// position (3), packed covariance (6), opacity (1), color (3).
pub const CLOUD_STRIDE: usize = 13;
pub const OFF_POS: usize = 0;
pub const OFF_COV: usize = 3;
pub const OFF_OPACITY: usize = 9;
pub const OFF_COLOR: usize = 10;

pub const OPACITY_MIN: f64 = 0.005;
pub const OPACITY_MAX: f64 = 0.995;
pub const DEPTH_FLOOR: f64 = 1e-3;

/// One-hot channel assignment of every pixel.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegMask {
    pub channels: usize,
    pub width: usize,
    pub height: usize,
    /// Channel index per pixel, row-major.
    pub labels: Vec<u8>,
}

impl SegMask {
    pub fn new(channels: usize, width: usize, height: usize, labels: Vec<u8>) -> Result<Self> {
        if channels == 0 || channels > u8::MAX as usize + 1 {
            return Err(Error::invalid(format!("unsupported channel count {channels}")));
        }
        if labels.len() != width * height {
            return Err(Error::invalid("segmentation label count does not match resolution"));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l as usize >= channels) {
            return Err(Error::invalid(format!("label {bad} exceeds channel count {channels}")));
        }
        Ok(SegMask {
            channels,
            width,
            height,
            labels,
        })
    }

    pub fn single(width: usize, height: usize) -> Self {
        SegMask {
            channels: 1,
            width,
            height,
            labels: vec![0; width * height],
        }
    }

    /// Builds a mask from a dense `[C,H,W]` tensor, rejecting anything that is
    /// not a binary partition.
    pub fn from_dense(t: &Tensor) -> Result<Self> {
        let s = t.shape();
        if s.len() != 3 {
            return Err(Error::invalid(format!("mask must be [C,H,W], got {s:?}")));
        }
        let (c, h, w) = (s[0], s[1], s[2]);
        let hw = h * w;
        let mut labels = vec![0u8; hw];
        for (p, label) in labels.iter_mut().enumerate() {
            let mut found = None;
            for ch in 0..c {
                let v = t.data()[ch * hw + p];
                if v == 1.0 {
                    if found.is_some() {
                        return Err(Error::invalid(format!("pixel {p} belongs to several mask channels")));
                    }
                    found = Some(ch);
                } else if v != 0.0 {
                    return Err(Error::invalid(format!("mask value {v} is not binary")));
                }
            }
            *label = found.ok_or_else(|| Error::invalid(format!("pixel {p} belongs to no mask channel")))? as u8;
        }
        SegMask::new(c, w, h, labels)
    }

    pub fn to_dense(&self) -> Tensor {
        let hw = self.width * self.height;
        let mut t = Tensor::zeros(vec![self.channels, self.height, self.width]);
        for (p, &l) in self.labels.iter().enumerate() {
            t.data_mut()[l as usize * hw + p] = 1.0;
        }
        t
    }
}

/// One Gaussian per pixel of one input view.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PixelGaussianGrid {
    pub view_index: usize,
    pub width: usize,
    pub height: usize,
    pub depth_init: Vec<f64>,
    /// `H*W*3` DC colors.
    pub color: Vec<f64>,
    /// `H*W*4` quaternions `[w, x, y, z]`.
    pub rotation: Vec<f64>,
    /// `H*W*3` per-axis log scales.
    pub log_scale: Vec<f64>,
    pub alpha_init: f64,
    pub frozen_covariance: bool,
    /// Multiplier on the pixel-footprint radius `depth / fy`.
    pub radius_scale: f64,
    pub segmask: SegMask,
}

impl PixelGaussianGrid {
    pub fn pixels(&self) -> usize {
        self.width * self.height
    }

    /// Switches to free covariances, seeding them with the isotropic values the
    /// frozen phase would produce at `depth`.
    pub fn unfreeze(&mut self, camera: &Camera, depth: &[f64]) {
        let r = radius_from_depth(camera, depth, self.radius_scale);
        for (p, &rp) in r.iter().enumerate() {
            self.rotation[p * 4..p * 4 + 4].copy_from_slice(&[1.0, 0.0, 0.0, 0.0]);
            let l = rp.ln();
            self.log_scale[p * 3..p * 3 + 3].copy_from_slice(&[l, l, l]);
        }
        self.frozen_covariance = false;
    }

    pub fn normalize_rotations(&mut self) {
        for q in self.rotation.chunks_mut(4) {
            let n = q.iter().map(|x| x * x).sum::<f64>().sqrt();
            if n > 0.0 && n.is_finite() {
                q.iter_mut().for_each(|x| *x /= n);
            } else {
                q.copy_from_slice(&[1.0, 0.0, 0.0, 0.0]);
            }
        }
    }
}

/// Sphere radius that makes a Gaussian at planar depth `d` cover one pixel:
/// `scale * d / fy`.
pub fn radius_from_depth(camera: &Camera, depth: &[f64], scale: f64) -> Vec<f64> {
    depth.iter().map(|&d| scale * d / camera.fy).collect()
}

/// Flattened, non-differentiable snapshot of Gaussians.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GaussianCloud {
    pub data: Vec<f64>,
    /// `(view, pixel)` each Gaussian came from.
    pub source: Vec<(u32, u32)>,
}

impl GaussianCloud {
    pub fn len(&self) -> usize {
        self.data.len() / CLOUD_STRIDE
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn get(&self, i: usize) -> &[f64] {
        &self.data[i * CLOUD_STRIDE..(i + 1) * CLOUD_STRIDE]
    }

    pub fn push(&mut self, pos: Vec3, cov: Sym3, opacity: f64, color: [f64; 3]) {
        self.data.extend_from_slice(&pos);
        self.data.extend_from_slice(&cov);
        self.data.push(opacity);
        self.data.extend_from_slice(&color);
        self.source.push((u32::MAX, u32::MAX));
    }

    pub fn extend(&mut self, other: GaussianCloud) {
        self.data.extend(other.data);
        self.source.extend(other.source);
    }
}

struct MaterializeState {
    rays: Vec<Vec3>,
    clamped_depth: Vec<bool>,
    depth: Vec<f64>,
    radius_per_depth: f64,
    frozen: bool,
}

struct MaterializeFn {
    state: MaterializeState,
}

/// Graph inputs for [`materialize`]. `rotation`/`log_scale` are only read when
/// the grid's covariance is not frozen.
pub struct MaterializeInputs {
    pub depth_residual: Var,
    pub opacity_residual: Var,
    pub color: Var,
    pub rotation: Option<Var>,
    pub log_scale: Option<Var>,
}

fn pixel_rays(grid: &PixelGaussianGrid, camera: &Camera) -> Vec<Vec3> {
    let mut rays = Vec::with_capacity(grid.pixels());
    for y in 0..grid.height {
        for x in 0..grid.width {
            rays.push(camera.pixel_ray(x as f64 + 0.5, y as f64 + 0.5).0);
        }
    }
    rays
}

fn materialize_forward(
    grid: &PixelGaussianGrid,
    camera: &Camera,
    dd: &[f64],
    da: &[f64],
    color: &[f64],
    rotation: &[f64],
    log_scale: &[f64],
) -> Result<(Vec<f64>, MaterializeState)> {
    let n = grid.pixels();
    if camera.width != grid.width || camera.height != grid.height {
        return Err(Error::invalid(format!(
            "view {}: camera is {}x{}, grid is {}x{}",
            grid.view_index, camera.width, camera.height, grid.width, grid.height
        )));
    }
    if dd.len() != n || da.len() != n || color.len() != 3 * n {
        return Err(Error::invalid(format!("view {}: residual sizes do not match grid", grid.view_index)));
    }
    if dd.iter().chain(da).any(|v| v.is_nan()) {
        return Err(Error::NonFinite(format!("residuals of view {}", grid.view_index)));
    }
    let center = camera.center();
    let rays = pixel_rays(grid, camera);
    let radius_per_depth = grid.radius_scale / camera.fy;
    let mut out = vec![0.0; n * CLOUD_STRIDE];
    let mut clamped = vec![false; n];
    let mut depth = vec![0.0; n];
    for p in 0..n {
        let raw = grid.depth_init[p] + dd[p];
        let d = if raw < DEPTH_FLOOR {
            clamped[p] = true;
            DEPTH_FLOOR
        } else {
            raw
        };
        depth[p] = d;
        let a = rays[p];
        let o = &mut out[p * CLOUD_STRIDE..(p + 1) * CLOUD_STRIDE];
        for k in 0..3 {
            o[OFF_POS + k] = a[k] * d + center[k];
        }
        let cov = if grid.frozen_covariance {
            let r = radius_per_depth * d;
            let r2 = r * r;
            [r2, 0.0, 0.0, r2, 0.0, r2]
        } else {
            let q = [rotation[4 * p], rotation[4 * p + 1], rotation[4 * p + 2], rotation[4 * p + 3]];
            let s = [log_scale[3 * p], log_scale[3 * p + 1], log_scale[3 * p + 2]];
            covariance_from_rotation_scale(&q, &s)
        };
        o[OFF_COV..OFF_COV + 6].copy_from_slice(&cov);
        o[OFF_OPACITY] = (grid.alpha_init + da[p]).clamp(OPACITY_MIN, OPACITY_MAX);
        o[OFF_COLOR..OFF_COLOR + 3].copy_from_slice(&color[3 * p..3 * p + 3]);
    }
    Ok((
        out,
        MaterializeState {
            rays,
            clamped_depth: clamped,
            depth,
            radius_per_depth,
            frozen: grid.frozen_covariance,
        },
    ))
}

impl Function for MaterializeFn {
    fn name(&self) -> &'static str {
        "materialize"
    }

    fn backward(&self, inputs: &[&Tensor], output: &Tensor, g: &Tensor) -> Result<Vec<Option<Tensor>>> {
        let st = &self.state;
        let n = st.rays.len();
        let gd = g.data();
        let od = output.data();
        let mut g_dd = vec![0.0; n];
        let mut g_da = vec![0.0; n];
        let mut g_col = vec![0.0; 3 * n];
        let mut g_rot = if st.frozen { Vec::new() } else { vec![0.0; 4 * n] };
        let mut g_ls = if st.frozen { Vec::new() } else { vec![0.0; 3 * n] };
        for p in 0..n {
            let gp = &gd[p * CLOUD_STRIDE..(p + 1) * CLOUD_STRIDE];
            let a = st.rays[p];
            if !st.clamped_depth[p] {
                let mut dd = gp[0] * a[0] + gp[1] * a[1] + gp[2] * a[2];
                if st.frozen {
                    let r = st.radius_per_depth * st.depth[p];
                    dd += 2.0 * r * st.radius_per_depth * (gp[OFF_COV] + gp[OFF_COV + 3] + gp[OFF_COV + 5]);
                }
                g_dd[p] = dd;
            }
            let op = od[p * CLOUD_STRIDE + OFF_OPACITY];
            let raw_inside = op > OPACITY_MIN && op < OPACITY_MAX;
            if raw_inside {
                g_da[p] = gp[OFF_OPACITY];
            }
            g_col[3 * p..3 * p + 3].copy_from_slice(&gp[OFF_COLOR..OFF_COLOR + 3]);
            if !st.frozen {
                let rot = inputs[3].data();
                let ls = inputs[4].data();
                let q = [rot[4 * p], rot[4 * p + 1], rot[4 * p + 2], rot[4 * p + 3]];
                let s = [ls[3 * p], ls[3 * p + 1], ls[3 * p + 2]];
                let mut dsig = [0.0; 6];
                dsig.copy_from_slice(&gp[OFF_COV..OFF_COV + 6]);
                let (dq, dls) = covariance_from_rotation_scale_vjp(&q, &s, &dsig);
                g_rot[4 * p..4 * p + 4].copy_from_slice(&dq);
                g_ls[3 * p..3 * p + 3].copy_from_slice(&dls);
            }
        }
        let mut out = vec![
            Some(Tensor::new(inputs[0].shape().to_vec(), g_dd)?),
            Some(Tensor::new(inputs[1].shape().to_vec(), g_da)?),
            Some(Tensor::new(inputs[2].shape().to_vec(), g_col)?),
        ];
        if !st.frozen {
            out.push(Some(Tensor::new(inputs[3].shape().to_vec(), g_rot)?));
            out.push(Some(Tensor::new(inputs[4].shape().to_vec(), g_ls)?));
        }
        Ok(out)
    }
}

/// Places the grid's Gaussians on their pixel rays at `D_init + ΔD` and
/// records the op on `g`. Output is `[H*W, CLOUD_STRIDE]`.
pub fn materialize(g: &mut Graph, grid: &PixelGaussianGrid, camera: &Camera, inp: &MaterializeInputs) -> Result<Var> {
    let n = grid.pixels();
    let (rot_v, ls_v) = if grid.frozen_covariance {
        (None, None)
    } else {
        match (inp.rotation, inp.log_scale) {
            (Some(r), Some(s)) => (Some(r), Some(s)),
            _ => return Err(Error::invalid("free covariance needs rotation and log-scale inputs")),
        }
    };
    let (out, state) = {
        let rot = rot_v.map(|v| g.value(v).data()).unwrap_or(&[]);
        let ls = ls_v.map(|v| g.value(v).data()).unwrap_or(&[]);
        if !grid.frozen_covariance && (rot.len() != 4 * n || ls.len() != 3 * n) {
            return Err(Error::invalid("rotation/log-scale sizes do not match grid"));
        }
        materialize_forward(
            grid,
            camera,
            g.value(inp.depth_residual).data(),
            g.value(inp.opacity_residual).data(),
            g.value(inp.color).data(),
            rot,
            ls,
        )?
    };
    let mut vars = vec![inp.depth_residual, inp.opacity_residual, inp.color];
    if let (Some(r), Some(s)) = (rot_v, ls_v) {
        vars.push(r);
        vars.push(s);
    }
    let t = Tensor::new(vec![n, CLOUD_STRIDE], out)?;
    Ok(g.custom(Box::new(MaterializeFn { state }), &vars, t))
}

/// Non-differentiable materialization from the grid's own parameters.
pub fn materialize_values(
    grid: &PixelGaussianGrid,
    camera: &Camera,
    depth_residual: &[f64],
    opacity_residual: &[f64],
) -> Result<GaussianCloud> {
    let (data, _) = materialize_forward(
        grid,
        camera,
        depth_residual,
        opacity_residual,
        &grid.color,
        &grid.rotation,
        &grid.log_scale,
    )?;
    let source = (0..grid.pixels()).map(|p| (grid.view_index as u32, p as u32)).collect();
    Ok(GaussianCloud { data, source })
}

/// Largest distance between a Gaussian and its pixel ray at `depth`.
pub fn ray_constraint_residual(grid: &PixelGaussianGrid, camera: &Camera, cloud: &GaussianCloud, depth: &[f64]) -> f64 {
    let mut worst: f64 = 0.0;
    for y in 0..grid.height {
        for x in 0..grid.width {
            let p = y * grid.width + x;
            let want = camera.unproject_unchecked(x as f64 + 0.5, y as f64 + 0.5, depth[p].max(DEPTH_FLOOR));
            let got = &cloud.get(p)[OFF_POS..OFF_POS + 3];
            let d = ((got[0] - want[0]).powi(2) + (got[1] - want[1]).powi(2) + (got[2] - want[2]).powi(2)).sqrt();
            worst = worst.max(d);
        }
    }
    worst
}
