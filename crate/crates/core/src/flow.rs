//! Optical flow fields, forward-backward consistency, and the per-pixel
//! correspondences they induce between two views.
//!
//! Flow vectors are in pixels and act on index coordinates: pixel `(x, y)`
//! maps to `(x + du, y + dv)`, so a warp is in bounds when it lands in
//! `[0, W-1] x [0, H-1]`.

use crate::error::{Error, Result};
use crate::geometry::{Camera, Vec3};

pub const DEFAULT_TAU: f64 = 1.0;

#[derive(Clone, Debug, PartialEq)]
pub struct FlowField {
    pub width: usize,
    pub height: usize,
    /// Interleaved `(du, dv)` per pixel, row-major.
    pub data: Vec<f64>,
}

impl FlowField {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != 2 * width * height {
            return Err(Error::invalid(format!(
                "flow data has {} values, expected {}",
                data.len(),
                2 * width * height
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::data("flow contains non-finite values"));
        }
        Ok(FlowField { width, height, data })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        FlowField {
            width,
            height,
            data: vec![0.0; 2 * width * height],
        }
    }

    pub fn at(&self, x: usize, y: usize) -> (f64, f64) {
        let i = 2 * (y * self.width + x);
        (self.data[i], self.data[i + 1])
    }

    pub fn sample(&self, qx: f64, qy: f64) -> Option<(f64, f64)> {
        let b = Bilinear::new(self.width, self.height, qx, qy)?;
        let mut u = 0.0;
        let mut v = 0.0;
        for k in 0..4 {
            u += b.w[k] * self.data[2 * b.idx[k]];
            v += b.w[k] * self.data[2 * b.idx[k] + 1];
        }
        Some((u, v))
    }
}

/// Bilinear interpolation stencil over a row-major `W x H` grid.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Bilinear {
    pub idx: [usize; 4],
    pub w: [f64; 4],
}

impl Bilinear {
    /// `None` outside `[0, W-1] x [0, H-1]`.
    pub fn new(width: usize, height: usize, qx: f64, qy: f64) -> Option<Self> {
        if width == 0 || height == 0 {
            return None;
        }
        let (wm, hm) = ((width - 1) as f64, (height - 1) as f64);
        if !(qx >= 0.0 && qx <= wm && qy >= 0.0 && qy <= hm) {
            return None;
        }
        let x0 = (qx.floor() as usize).min(width.saturating_sub(2));
        let y0 = (qy.floor() as usize).min(height.saturating_sub(2));
        let x1 = (x0 + 1).min(width - 1);
        let y1 = (y0 + 1).min(height - 1);
        let tx = qx - x0 as f64;
        let ty = qy - y0 as f64;
        Some(Bilinear {
            idx: [y0 * width + x0, y0 * width + x1, y1 * width + x0, y1 * width + x1],
            w: [(1.0 - tx) * (1.0 - ty), tx * (1.0 - ty), (1.0 - tx) * ty, tx * ty],
        })
    }

    pub fn sample(&self, values: &[f64]) -> f64 {
        (0..4).map(|k| self.w[k] * values[self.idx[k]]).sum()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConsistencyMask {
    pub width: usize,
    pub height: usize,
    pub data: Vec<bool>,
}

impl ConsistencyMask {
    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&m| m).count()
    }
}

/// Marks pixels whose forward flow, composed with the backward flow at the
/// warped position, returns within `tau` pixels of the start.
pub fn consistency_mask(forward: &FlowField, backward: &FlowField, tau: f64) -> Result<ConsistencyMask> {
    if (forward.width, forward.height) != (backward.width, backward.height) {
        return Err(Error::Shape {
            op: "consistency_mask",
            lhs: vec![forward.height, forward.width],
            rhs: vec![backward.height, backward.width],
        });
    }
    if !(tau > 0.0) {
        return Err(Error::invalid(format!("consistency threshold must be positive, got {tau}")));
    }
    let (w, h) = (forward.width, forward.height);
    let mut data = vec![false; w * h];
    for y in 0..h {
        for x in 0..w {
            let (du, dv) = forward.at(x, y);
            if let Some((bu, bv)) = backward.sample(x as f64 + du, y as f64 + dv) {
                data[y * w + x] = ((du + bu).powi(2) + (dv + bv).powi(2)).sqrt() <= tau;
            }
        }
    }
    Ok(ConsistencyMask { width: w, height: h, data })
}

/// One consistent pixel `p` of view `i` and its flow target `q` in view `j`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Correspondence {
    pub p: usize,
    pub q: Bilinear,
    /// `g(d, p) = ray_p * d + origin_i`.
    pub ray_p: Vec3,
    pub ray_q: Vec3,
}

/// All consistent correspondences of the ordered pair `(i, j)`.
#[derive(Clone, Debug, PartialEq)]
pub struct PairCorrespondences {
    pub i: usize,
    pub j: usize,
    pub origin_i: Vec3,
    pub origin_j: Vec3,
    pub items: Vec<Correspondence>,
}

pub fn correspondences(
    (i, cam_i): (usize, &Camera),
    (j, cam_j): (usize, &Camera),
    flow: &FlowField,
    mask: &ConsistencyMask,
) -> Result<PairCorrespondences> {
    if (flow.width, flow.height) != (cam_i.width, cam_i.height) || (mask.width, mask.height) != (cam_i.width, cam_i.height) {
        return Err(Error::invalid(format!("flow {i}->{j} does not match the view resolution")));
    }
    let w = cam_i.width;
    let mut items = Vec::new();
    for y in 0..cam_i.height {
        for x in 0..w {
            let p = y * w + x;
            if !mask.data[p] {
                continue;
            }
            let (du, dv) = flow.at(x, y);
            let (qx, qy) = (x as f64 + du, y as f64 + dv);
            let Some(q) = Bilinear::new(cam_j.width, cam_j.height, qx, qy) else {
                continue;
            };
            items.push(Correspondence {
                p,
                q,
                ray_p: cam_i.pixel_ray(x as f64 + 0.5, y as f64 + 0.5).0,
                ray_q: cam_j.pixel_ray(qx + 0.5, qy + 0.5).0,
            });
        }
    }
    Ok(PairCorrespondences {
        i,
        j,
        origin_i: cam_i.center(),
        origin_j: cam_j.center(),
        items,
    })
}

/// Mean over all correspondences of `‖g(D_i[p], p) - g(D_j(q), q)‖₁` and its
/// gradient with respect to every view's depth map. Returns 0 when no pair
/// has any correspondence.
pub fn flow_objective(pairs: &[PairCorrespondences], depths: &[&[f64]]) -> Result<(f64, Vec<Vec<f64>>)> {
    let mut grads: Vec<Vec<f64>> = depths.iter().map(|d| vec![0.0; d.len()]).collect();
    let total: usize = pairs.iter().map(|p| p.items.len()).sum();
    if total == 0 {
        return Ok((0.0, grads));
    }
    let norm = 1.0 / total as f64;
    let mut value = 0.0;
    for pair in pairs {
        let (di, dj) = (
            *depths.get(pair.i).ok_or_else(|| Error::invalid("flow pair view out of range"))?,
            *depths.get(pair.j).ok_or_else(|| Error::invalid("flow pair view out of range"))?,
        );
        let mut gi = vec![0.0; di.len()];
        let mut gj = vec![0.0; dj.len()];
        for c in &pair.items {
            let dp = di[c.p];
            let dq = c.q.sample(dj);
            let mut s_p = 0.0;
            let mut s_q = 0.0;
            for k in 0..3 {
                let diff = (c.ray_p[k] * dp + pair.origin_i[k]) - (c.ray_q[k] * dq + pair.origin_j[k]);
                value += diff.abs();
                let sg = if diff > 0.0 {
                    1.0
                } else if diff < 0.0 {
                    -1.0
                } else {
                    0.0
                };
                s_p += sg * c.ray_p[k];
                s_q -= sg * c.ray_q[k];
            }
            gi[c.p] += s_p * norm;
            for k in 0..4 {
                gj[c.q.idx[k]] += s_q * c.q.w[k] * norm;
            }
        }
        for (a, b) in grads[pair.i].iter_mut().zip(gi) {
            *a += b;
        }
        for (a, b) in grads[pair.j].iter_mut().zip(gj) {
            *a += b;
        }
    }
    Ok((value * norm, grads))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn translation(w: usize, h: usize, du: f64, dv: f64) -> FlowField {
        let mut f = FlowField::zeros(w, h);
        for p in 0..w * h {
            f.data[2 * p] = du;
            f.data[2 * p + 1] = dv;
        }
        f
    }

    #[test]
    fn exact_inverse_translation() {
        let f = translation(8, 6, 2.0, -1.0);
        let b = translation(8, 6, -2.0, 1.0);
        let m = consistency_mask(&f, &b, DEFAULT_TAU).unwrap();
        for y in 0..6 {
            for x in 0..8 {
                let inside = x + 2 <= 7 && y >= 1;
                assert_eq!(m.data[y * 8 + x], inside, "({x},{y})");
            }
        }
    }

    #[test]
    fn violated_inverse() {
        let f = translation(8, 6, 1.0, 0.0);
        let b = translation(8, 6, -1.0 + 2.0 * DEFAULT_TAU, 0.0);
        assert_eq!(consistency_mask(&f, &b, DEFAULT_TAU).unwrap().count(), 0);
    }

    #[test]
    fn bilinear_edges() {
        let b = Bilinear::new(3, 2, 2.0, 1.0).unwrap();
        let vals = [0.0, 1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(b.sample(&vals), 5.0);
        assert!(Bilinear::new(3, 2, 2.0 + 1e-9, 0.0).is_none());
        assert_eq!(Bilinear::new(3, 2, 0.5, 0.5).unwrap().sample(&vals), 2.0);
        assert_eq!(Bilinear::new(1, 1, 0.0, 0.0).unwrap().sample(&[7.0]), 7.0);
    }

    #[test]
    fn non_finite_flow_rejected() {
        assert!(FlowField::new(1, 1, vec![f64::NAN, 0.0]).is_err());
        assert!(FlowField::new(1, 1, vec![0.0]).is_err());
    }
}
