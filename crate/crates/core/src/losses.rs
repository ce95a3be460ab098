//! Training objectives. Every loss is mean-normalized so weights do not depend
//! on resolution.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Function, Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::flow::{flow_objective, PairCorrespondences};
use crate::par;
use crate::scene::SegMask;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub beta_m: f64,
    pub beta_f: f64,
    pub lambda_ssim: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            beta_m: 5.0,
            beta_f: 0.1,
            lambda_ssim: 0.2,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta_m >= 0.0 && self.beta_f >= 0.0 && (0.0..=1.0).contains(&self.lambda_ssim)) {
            return Err(Error::invalid(format!("invalid loss weights {self:?}")));
        }
        Ok(())
    }
}

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let mut w = [0.0; SSIM_WINDOW];
    let r = (SSIM_WINDOW / 2) as f64;
    for (i, v) in w.iter_mut().enumerate() {
        let d = i as f64 - r;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
    w
}

/// Separable same-size Gaussian blur with zero padding. The operator is
/// symmetric, so it is also its own adjoint.
fn blur(plane: &[f64], w: usize, h: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let r = SSIM_WINDOW as isize / 2;
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (t, kv) in k.iter().enumerate() {
                let xx = x as isize + t as isize - r;
                if xx >= 0 && (xx as usize) < w {
                    acc += kv * plane[y * w + xx as usize];
                }
            }
            tmp[y * w + x] = acc;
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (t, kv) in k.iter().enumerate() {
                let yy = y as isize + t as isize - r;
                if yy >= 0 && (yy as usize) < h {
                    acc += kv * tmp[yy as usize * w + x];
                }
            }
            out[y * w + x] = acc;
        }
    }
    out
}

struct SsimPlane {
    s: Vec<f64>,
    d_mu: Vec<f64>,
    d_var: Vec<f64>,
    d_cov: Vec<f64>,
}

fn ssim_plane(x: &[f64], y: &[f64], w: usize, h: usize) -> SsimPlane {
    let k = gaussian_window();
    let sq = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| p * q).collect::<Vec<_>>();
    let mx = blur(x, w, h, &k);
    let my = blur(y, w, h, &k);
    let exx = blur(&sq(x, x), w, h, &k);
    let eyy = blur(&sq(y, y), w, h, &k);
    let exy = blur(&sq(x, y), w, h, &k);
    let n = w * h;
    let mut out = SsimPlane {
        s: vec![0.0; n],
        d_mu: vec![0.0; n],
        d_var: vec![0.0; n],
        d_cov: vec![0.0; n],
    };
    for i in 0..n {
        let (ux, uy) = (mx[i], my[i]);
        let vx = exx[i] - ux * ux;
        let vy = eyy[i] - uy * uy;
        let cxy = exy[i] - ux * uy;
        let a1 = 2.0 * ux * uy + SSIM_C1;
        let a2 = 2.0 * cxy + SSIM_C2;
        let b1 = ux * ux + uy * uy + SSIM_C1;
        let b2 = vx + vy + SSIM_C2;
        let s = a1 * a2 / (b1 * b2);
        out.s[i] = s;
        out.d_mu[i] = 2.0 * uy * a2 / (b1 * b2) - s * 2.0 * ux / b1;
        out.d_var[i] = -s / b2;
        out.d_cov[i] = 2.0 * a1 / (b1 * b2);
        // total derivative w.r.t. mu_x, folding in the mu terms of var and cov
        out.d_mu[i] += -2.0 * ux * out.d_var[i] - uy * out.d_cov[i];
    }
    out
}

/// Per-pixel SSIM map of two `[C, H, W]` images, channel-major.
pub fn ssim_map(x: &[f64], y: &[f64], channels: usize, h: usize, w: usize) -> Result<Vec<f64>> {
    let n = channels * h * w;
    if x.len() != n || y.len() != n {
        return Err(Error::invalid("ssim inputs do not match the declared shape"));
    }
    let planes = par::map_range(channels, |c| {
        let r = c * h * w..(c + 1) * h * w;
        ssim_plane(&x[r.clone()], &y[r], w, h).s
    });
    Ok(planes.concat())
}

/// Mean SSIM of two `[C, H, W]` images.
pub fn ssim(x: &[f64], y: &[f64], channels: usize, h: usize, w: usize) -> Result<f64> {
    let m = ssim_map(x, y, channels, h, w)?;
    Ok(m.iter().sum::<f64>() / m.len().max(1) as f64)
}

struct SsimFn {
    target: Vec<f64>,
}

impl Function for SsimFn {
    fn name(&self) -> &'static str {
        "ssim"
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, g: &Tensor) -> Result<Vec<Option<Tensor>>> {
        let x = inputs[0];
        let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let hw = h * w;
        let scale = g.item() / (c * hw) as f64;
        let k = gaussian_window();
        let planes = par::map_range(c, |ch| {
            let r = ch * hw..(ch + 1) * hw;
            let (xp, yp) = (&x.data()[r.clone()], &self.target[r]);
            let s = ssim_plane(xp, yp, w, h);
            let a: Vec<f64> = s.d_mu.iter().map(|v| v * scale).collect();
            let b: Vec<f64> = s.d_var.iter().map(|v| v * scale).collect();
            let cc: Vec<f64> = s.d_cov.iter().map(|v| v * scale).collect();
            let (ga, gb, gc) = (blur(&a, w, h, &k), blur(&b, w, h, &k), blur(&cc, w, h, &k));
            (0..hw)
                .map(|i| ga[i] + 2.0 * xp[i] * gb[i] + yp[i] * gc[i])
                .collect::<Vec<f64>>()
        });
        Ok(vec![Some(Tensor::new(x.shape().to_vec(), planes.concat())?)])
    }
}

fn check_image(shape: &[usize], target: &Tensor, op: &'static str) -> Result<()> {
    if shape.len() != 3 || shape != target.shape() {
        return Err(Error::Shape {
            op,
            lhs: shape.to_vec(),
            rhs: target.shape().to_vec(),
        });
    }
    Ok(())
}

/// Mean SSIM between a rendered `[C,H,W]` image and a fixed target.
pub fn ssim_var(g: &mut Graph, image: Var, target: &Tensor) -> Result<Var> {
    let shape = g.shape(image).to_vec();
    check_image(&shape, target, "ssim")?;
    let v = ssim(g.value(image).data(), target.data(), shape[0], shape[1], shape[2])?;
    Ok(g.custom(
        Box::new(SsimFn {
            target: target.data().to_vec(),
        }),
        &[image],
        Tensor::scalar(v),
    ))
}

/// `(1-λ)·mean|x - t| + λ·(1 - SSIM(x, t))`.
pub fn photometric(g: &mut Graph, image: Var, target: &Tensor, lambda_ssim: f64) -> Result<Var> {
    let shape = g.shape(image).to_vec();
    check_image(&shape, target, "photometric")?;
    let t = g.constant(target.clone());
    let d = g.sub(image, t)?;
    let d = g.abs(d);
    let l1 = g.mean(d, None)?;
    let l1 = g.scale(l1, 1.0 - lambda_ssim);
    let s = ssim_var(g, image, target)?;
    let s = g.scale(s, -lambda_ssim);
    let s = g.add_scalar(s, lambda_ssim);
    g.add(l1, s)
}

/// Same-channel indicators for horizontal (`[H, W-1]`) and vertical
/// (`[H-1, W]`) neighbour pairs.
fn same_region_pairs(mask: &SegMask) -> (Tensor, Tensor) {
    let (w, h) = (mask.width, mask.height);
    let l = &mask.labels;
    let mut hx = Vec::with_capacity(h * w.saturating_sub(1));
    for y in 0..h {
        for x in 0..w.saturating_sub(1) {
            hx.push(if l[y * w + x] == l[y * w + x + 1] { 1.0 } else { 0.0 });
        }
    }
    let mut vy = Vec::with_capacity(h.saturating_sub(1) * w);
    for y in 0..h.saturating_sub(1) {
        for x in 0..w {
            vy.push(if l[y * w + x] == l[(y + 1) * w + x] { 1.0 } else { 0.0 });
        }
    }
    (
        Tensor::new(vec![h, w.saturating_sub(1)], hx).expect("pair shape"),
        Tensor::new(vec![h.saturating_sub(1), w], vy).expect("pair shape"),
    )
}

/// `(L_TV, L_MTV)` of the disparity `1/(1+depth)` of an `[H, W]` depth map.
/// Both sum absolute forward differences and divide by `H*W`; the masked
/// variant keeps only differences between pixels of the same mask channel.
pub fn tv_losses(g: &mut Graph, depth: Var, mask: &SegMask) -> Result<(Var, Var)> {
    let shape = g.shape(depth).to_vec();
    if shape != [mask.height, mask.width] {
        return Err(Error::Shape {
            op: "tv_losses",
            lhs: shape,
            rhs: vec![mask.height, mask.width],
        });
    }
    let inv_n = 1.0 / (mask.width * mask.height) as f64;
    let w = g.add_scalar(depth, 1.0);
    let w = g.reciprocal(w);
    let (hx, vy) = same_region_pairs(mask);
    let mut tv_parts = Vec::new();
    let mut mtv_parts = Vec::new();
    for (axis, keep) in [(1, hx), (0, vy)] {
        if keep.numel() == 0 {
            continue;
        }
        let d = g.diff(w, axis)?;
        let d = g.abs(d);
        tv_parts.push(g.sum(d, None)?);
        let k = g.constant(keep);
        let m = g.mul(d, k)?;
        mtv_parts.push(g.sum(m, None)?);
    }
    let mut tv = g.constant(Tensor::scalar(0.0));
    let mut mtv = g.constant(Tensor::scalar(0.0));
    for (a, b) in tv_parts.into_iter().zip(mtv_parts) {
        tv = g.add(tv, a)?;
        mtv = g.add(mtv, b)?;
    }
    Ok((g.scale(tv, inv_n), g.scale(mtv, inv_n)))
}

/// Linear ramp from 0 at the first regularized iteration to 1 at the last.
pub fn schedule_lambda_s(iteration: usize, total: usize) -> f64 {
    if total == 0 {
        return 1.0;
    }
    (iteration as f64 / total as f64).clamp(0.0, 1.0)
}

struct FlowLossFn {
    grads: Vec<Vec<f64>>,
}

impl Function for FlowLossFn {
    fn name(&self) -> &'static str {
        "flow_loss"
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, g: &Tensor) -> Result<Vec<Option<Tensor>>> {
        let s = g.item();
        inputs
            .iter()
            .zip(&self.grads)
            .map(|(t, gr)| Ok(Some(Tensor::new(t.shape().to_vec(), gr.iter().map(|v| v * s).collect())?)))
            .collect()
    }
}

/// Mean L1 distance between the 3-D points of flow-corresponding pixels,
/// over all ordered view pairs. `depths[n]` is view `n`'s current depth map.
pub fn flow_loss(g: &mut Graph, depths: &[Var], pairs: &[PairCorrespondences]) -> Result<Var> {
    let values: Vec<&[f64]> = depths.iter().map(|&d| g.value(d).data()).collect();
    let (v, grads) = flow_objective(pairs, &values)?;
    Ok(g.custom(Box::new(FlowLossFn { grads }), depths, Tensor::scalar(v)))
}

/// `photo + β_m·((1-λ_s)·L_TV + λ_s·L_MTV) + β_f·flow`.
pub fn total_loss(g: &mut Graph, photo: Var, tv: Var, mtv: Var, flow: Var, weights: &LossWeights, lambda_s: f64) -> Result<Var> {
    let a = g.scale(tv, weights.beta_m * (1.0 - lambda_s));
    let b = g.scale(mtv, weights.beta_m * lambda_s);
    let f = g.scale(flow, weights.beta_f);
    let t = g.add(photo, a)?;
    let t = g.add(t, b)?;
    g.add(t, f)
}
