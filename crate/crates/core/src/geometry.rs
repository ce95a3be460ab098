//! Pinhole cameras, the pixel-ray parameterization and EWA-style covariance
//! projection.
//!
//! Conventions: depth is planar (camera-frame z), pixel centers sit at
//! half-integers, the image origin is top-left and `v` grows downward.
//! Symmetric 3×3 matrices are packed as `[xx, xy, xz, yy, yz, zz]` and 2×2 as
//! `[xx, xy, yy]`; gradients with respect to a packed off-diagonal entry count
//! both mirrored positions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = [f64; 3];
pub type Mat3 = [[f64; 3]; 3];
pub type Sym3 = [f64; 6];
pub type Sym2 = [f64; 3];

pub const DEFAULT_Z_NEAR: f64 = 1e-4;
pub const DEFAULT_COV_FLOOR: f64 = 0.3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    /// World-to-camera rotation.
    pub rotation: Mat3,
    /// World-to-camera translation.
    pub translation: Vec3,
}

pub(crate) fn mat_vec(m: &Mat3, v: &Vec3) -> Vec3 {
    [
        m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
        m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
        m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
    ]
}

pub(crate) fn mat_t_vec(m: &Mat3, v: &Vec3) -> Vec3 {
    [
        m[0][0] * v[0] + m[1][0] * v[1] + m[2][0] * v[2],
        m[0][1] * v[0] + m[1][1] * v[1] + m[2][1] * v[2],
        m[0][2] * v[0] + m[1][2] * v[1] + m[2][2] * v[2],
    ]
}

pub(crate) fn mat_mul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut r = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            r[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    r
}

pub(crate) fn transpose(a: &Mat3) -> Mat3 {
    let mut r = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            r[i][j] = a[j][i];
        }
    }
    r
}

pub(crate) fn sym3_to_mat(s: &Sym3) -> Mat3 {
    [[s[0], s[1], s[2]], [s[1], s[3], s[4]], [s[2], s[4], s[5]]]
}

pub(crate) fn mat_to_sym3(m: &Mat3) -> Sym3 {
    [m[0][0], m[0][1], m[0][2], m[1][1], m[1][2], m[2][2]]
}

/// Packed gradient from a full symmetric gradient matrix.
pub(crate) fn grad_mat_to_sym3(g: &Mat3) -> Sym3 {
    [
        g[0][0],
        g[0][1] + g[1][0],
        g[0][2] + g[2][0],
        g[1][1],
        g[1][2] + g[2][1],
        g[2][2],
    ]
}

/// Full symmetric gradient matrix from a packed gradient.
pub(crate) fn grad_sym3_to_mat(g: &Sym3) -> Mat3 {
    [
        [g[0], 0.5 * g[1], 0.5 * g[2]],
        [0.5 * g[1], g[3], 0.5 * g[4]],
        [0.5 * g[2], 0.5 * g[4], g[5]],
    ]
}

fn det3(m: &Mat3) -> f64 {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

/// Result of projecting a world point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Projection {
    Visible { u: f64, v: f64, z: f64 },
    /// At or behind the near plane.
    Culled,
}

/// 2-D footprint of a projected Gaussian.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Splat {
    pub u: f64,
    pub v: f64,
    pub z: f64,
    pub cov: Sym2,
}

/// Upstream gradients for a [`Splat`].
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SplatGrad {
    pub u: f64,
    pub v: f64,
    pub z: f64,
    pub cov: Sym2,
}

impl Camera {
    /// Validated constructor; rotation must be proper orthonormal to 1e-9.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: usize,
        height: usize,
        rotation: Mat3,
        translation: Vec3,
    ) -> Result<Self> {
        let cam = Camera {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
            rotation,
            translation,
        };
        cam.validate()?;
        Ok(cam)
    }

    /// Axis-aligned camera centered at `center` looking down +z.
    pub fn looking_forward(fx: f64, fy: f64, width: usize, height: usize, center: Vec3) -> Self {
        Camera {
            fx,
            fy,
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
            width,
            height,
            rotation: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            translation: [-center[0], -center[1], -center[2]],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let vals = [self.fx, self.fy, self.cx, self.cy];
        if vals.iter().chain(self.translation.iter()).chain(self.rotation.iter().flatten()).any(|v| !v.is_finite()) {
            return Err(Error::data("camera has non-finite entries"));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::data("camera resolution must be positive"));
        }
        if self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(Error::data(format!(
                "focal lengths must be positive, got fx={} fy={}",
                self.fx, self.fy
            )));
        }
        if !(0.0..self.width as f64).contains(&self.cx) || !(0.0..self.height as f64).contains(&self.cy) {
            return Err(Error::data(format!(
                "principal point ({}, {}) outside {}x{} image",
                self.cx, self.cy, self.width, self.height
            )));
        }
        let r = &self.rotation;
        let rtr = mat_mul(&transpose(r), r);
        for (i, row) in rtr.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                let want = if i == j { 1.0 } else { 0.0 };
                if (v - want).abs() > 1e-9 {
                    return Err(Error::data("camera rotation is not orthonormal"));
                }
            }
        }
        if (det3(r) - 1.0).abs() > 1e-9 {
            return Err(Error::data("camera rotation has det != +1"));
        }
        Ok(())
    }

    /// World-space camera center.
    pub fn center(&self) -> Vec3 {
        let c = mat_t_vec(&self.rotation, &self.translation);
        [-c[0], -c[1], -c[2]]
    }

    pub fn to_camera(&self, x: &Vec3) -> Vec3 {
        let r = mat_vec(&self.rotation, x);
        [
            r[0] + self.translation[0],
            r[1] + self.translation[1],
            r[2] + self.translation[2],
        ]
    }

    /// Ray through pixel coordinate `(u, v)` as `x(d) = dir * d + origin`,
    /// with `d` the planar depth.
    pub fn pixel_ray(&self, u: f64, v: f64) -> (Vec3, Vec3) {
        let k = [(u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0];
        (mat_t_vec(&self.rotation, &k), self.center())
    }

    /// The `g(d, p)` map: world point at planar depth `d` on the ray of `(u, v)`.
    pub fn unproject(&self, u: f64, v: f64, d: f64) -> Result<Vec3> {
        if d.is_nan() || d <= 0.0 {
            return Err(Error::invalid(format!("unproject needs depth > 0, got {d}")));
        }
        Ok(self.unproject_unchecked(u, v, d))
    }

    pub(crate) fn unproject_unchecked(&self, u: f64, v: f64, d: f64) -> Vec3 {
        let (a, b) = self.pixel_ray(u, v);
        [a[0] * d + b[0], a[1] * d + b[1], a[2] * d + b[2]]
    }

    pub fn project(&self, x: &Vec3) -> Projection {
        self.project_with_near(x, DEFAULT_Z_NEAR)
    }

    pub fn project_with_near(&self, x: &Vec3, z_near: f64) -> Projection {
        let t = self.to_camera(x);
        if !(t[2] > z_near) {
            return Projection::Culled;
        }
        Projection::Visible {
            u: self.fx * t[0] / t[2] + self.cx,
            v: self.fy * t[1] / t[2] + self.cy,
            z: t[2],
        }
    }

    /// Image-space covariance `J W Σ Wᵀ Jᵀ + floor·I` at world point `x`.
    pub fn project_covariance(&self, x: &Vec3, sigma: &Sym3, floor: f64) -> Result<Sym2> {
        match self.splat(x, sigma, floor, DEFAULT_Z_NEAR) {
            Some(s) => Ok(s.cov),
            None => Err(Error::invalid("point is behind the camera")),
        }
    }

    /// Full projection of a Gaussian; `None` when culled by the near plane.
    pub fn splat(&self, x: &Vec3, sigma: &Sym3, floor: f64, z_near: f64) -> Option<Splat> {
        let t = self.to_camera(x);
        let tz = t[2];
        if !(tz > z_near) {
            return None;
        }
        let j = self.jacobian(&t);
        let sc = mat_mul(&mat_mul(&self.rotation, &sym3_to_mat(sigma)), &transpose(&self.rotation));
        // J Σc Jᵀ for a 2x3 J
        let mut js = [[0.0; 3]; 2];
        for i in 0..2 {
            for k in 0..3 {
                js[i][k] = (0..3).map(|m| j[i][m] * sc[m][k]).sum();
            }
        }
        let c00: f64 = (0..3).map(|m| js[0][m] * j[0][m]).sum();
        let c01: f64 = (0..3).map(|m| js[0][m] * j[1][m]).sum();
        let c11: f64 = (0..3).map(|m| js[1][m] * j[1][m]).sum();
        Some(Splat {
            u: self.fx * t[0] / tz + self.cx,
            v: self.fy * t[1] / tz + self.cy,
            z: tz,
            cov: [c00 + floor, c01, c11 + floor],
        })
    }

    fn jacobian(&self, t: &Vec3) -> [[f64; 3]; 2] {
        let iz = 1.0 / t[2];
        [
            [self.fx * iz, 0.0, -self.fx * t[0] * iz * iz],
            [0.0, self.fy * iz, -self.fy * t[1] * iz * iz],
        ]
    }

    /// Vector-Jacobian product of [`Camera::splat`] with respect to the world
    /// position and the packed world covariance.
    pub fn splat_vjp(&self, x: &Vec3, sigma: &Sym3, g: &SplatGrad) -> (Vec3, Sym3) {
        let t = self.to_camera(x);
        let (tx, ty, tz) = (t[0], t[1], t[2]);
        let iz = 1.0 / tz;
        let iz2 = iz * iz;
        let iz3 = iz2 * iz;
        let j = self.jacobian(&t);
        let w = &self.rotation;
        let sc = mat_mul(&mat_mul(w, &sym3_to_mat(sigma)), &transpose(w));
        let gp = [[g.cov[0], 0.5 * g.cov[1]], [0.5 * g.cov[1], g.cov[2]]];

        // dΣc = Jᵀ G' J
        let mut dsc = [[0.0; 3]; 3];
        for a in 0..3 {
            for b in 0..3 {
                let mut s = 0.0;
                for i in 0..2 {
                    for k in 0..2 {
                        s += j[i][a] * gp[i][k] * j[k][b];
                    }
                }
                dsc[a][b] = s;
            }
        }
        let dsigma_full = mat_mul(&mat_mul(&transpose(w), &dsc), w);
        let dsigma = grad_mat_to_sym3(&dsigma_full);

        // dJ = 2 G' J Σc
        let mut jsc = [[0.0; 3]; 2];
        for i in 0..2 {
            for k in 0..3 {
                jsc[i][k] = (0..3).map(|m| j[i][m] * sc[m][k]).sum();
            }
        }
        let mut dj = [[0.0; 3]; 2];
        for i in 0..2 {
            for k in 0..3 {
                dj[i][k] = 2.0 * (0..2).map(|m| gp[i][m] * jsc[m][k]).sum::<f64>();
            }
        }

        let (fx, fy) = (self.fx, self.fy);
        let mut dt = [0.0; 3];
        dt[0] += dj[0][2] * (-fx * iz2);
        dt[1] += dj[1][2] * (-fy * iz2);
        dt[2] += dj[0][0] * (-fx * iz2)
            + dj[0][2] * (2.0 * fx * tx * iz3)
            + dj[1][1] * (-fy * iz2)
            + dj[1][2] * (2.0 * fy * ty * iz3);

        dt[0] += g.u * fx * iz;
        dt[2] += g.u * (-fx * tx * iz2);
        dt[1] += g.v * fy * iz;
        dt[2] += g.v * (-fy * ty * iz2);
        dt[2] += g.z;

        (mat_t_vec(w, &dt), dsigma)
    }
}

/// Rotation matrix of a (not necessarily unit) quaternion `[w, x, y, z]`.
pub fn quat_to_mat(q: &[f64; 4]) -> Mat3 {
    let n = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
    let (w, x, y, z) = (q[0] / n, q[1] / n, q[2] / n, q[3] / n);
    [
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
        [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
        [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
    ]
}

/// Gradient of a scalar with respect to `q` given its gradient `dr` with
/// respect to `quat_to_mat(q)`. Includes the normalization.
pub fn quat_to_mat_vjp(q: &[f64; 4], dr: &Mat3) -> [f64; 4] {
    let n2 = q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3];
    let n = n2.sqrt();
    let (w, x, y, z) = (q[0] / n, q[1] / n, q[2] / n, q[3] / n);
    // d/d(unit quaternion)
    let dw = 2.0 * (-z * dr[0][1] + y * dr[0][2] + z * dr[1][0] - x * dr[1][2] - y * dr[2][0] + x * dr[2][1]);
    let dx = 2.0
        * (y * dr[0][1] + z * dr[0][2] + y * dr[1][0] - 2.0 * x * dr[1][1] - w * dr[1][2] + z * dr[2][0]
            + w * dr[2][1]
            - 2.0 * x * dr[2][2]);
    let dy = 2.0
        * (-2.0 * y * dr[0][0] + x * dr[0][1] + w * dr[0][2] + x * dr[1][0] + z * dr[1][2] - w * dr[2][0]
            + z * dr[2][1]
            - 2.0 * y * dr[2][2]);
    let dz = 2.0
        * (-2.0 * z * dr[0][0] - w * dr[0][1] + x * dr[0][2] + w * dr[1][0] - 2.0 * z * dr[1][1]
            + y * dr[1][2]
            + x * dr[2][0]
            + y * dr[2][1]);
    let gu = [dw, dx, dy, dz];
    let u = [w, x, y, z];
    let dot: f64 = (0..4).map(|i| gu[i] * u[i]).sum();
    let mut out = [0.0; 4];
    for i in 0..4 {
        out[i] = (gu[i] - u[i] * dot) / n;
    }
    out
}

/// Packed covariance `R diag(exp(2 s)) Rᵀ` from a quaternion and log-scales.
pub fn covariance_from_rotation_scale(q: &[f64; 4], log_scale: &Vec3) -> Sym3 {
    let r = quat_to_mat(q);
    let s2 = [
        (2.0 * log_scale[0]).exp(),
        (2.0 * log_scale[1]).exp(),
        (2.0 * log_scale[2]).exp(),
    ];
    let mut m = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            m[i][j] = (0..3).map(|k| r[i][k] * s2[k] * r[j][k]).sum();
        }
    }
    mat_to_sym3(&m)
}

/// VJP of [`covariance_from_rotation_scale`].
pub fn covariance_from_rotation_scale_vjp(q: &[f64; 4], log_scale: &Vec3, dsigma: &Sym3) -> ([f64; 4], Vec3) {
    let r = quat_to_mat(q);
    let s = [log_scale[0].exp(), log_scale[1].exp(), log_scale[2].exp()];
    let g = grad_sym3_to_mat(dsigma);
    // M = R S, Σ = M Mᵀ, dM = 2 G M
    let mut m = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            m[i][j] = r[i][j] * s[j];
        }
    }
    let dm = {
        let gm = mat_mul(&g, &m);
        let mut d = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                d[i][j] = 2.0 * gm[i][j];
            }
        }
        d
    };
    let mut dr = [[0.0; 3]; 3];
    let mut dls = [0.0; 3];
    for i in 0..3 {
        for j in 0..3 {
            dr[i][j] = dm[i][j] * s[j];
            // ds_j = Σ_i dM_ij R_ij, and ds/dlog = s
            dls[j] += dm[i][j] * r[i][j] * s[j];
        }
    }
    (quat_to_mat_vjp(q, &dr), dls)
}
