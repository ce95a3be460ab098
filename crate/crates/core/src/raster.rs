//! Differentiable front-to-back splatting of a packed Gaussian cloud.
//!
//! Gaussians are sorted globally by view-space depth (stable, ties broken by
//! cloud index) and binned into square tiles. Each tile is composited
//! independently and gradient contributions are merged tile by tile in index
//! order, so results do not depend on how many threads run the tiles.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Function, Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::geometry::{Camera, SplatGrad, Sym3, DEFAULT_COV_FLOOR, DEFAULT_Z_NEAR};
use crate::par;
use crate::scene::{CLOUD_STRIDE, OFF_COLOR, OFF_COV, OFF_OPACITY, OFF_POS};

/// Render output channels, each `H*W`: red, green, blue, depth, accumulated opacity.
pub const RENDER_CHANNELS: usize = 5;
pub const CH_DEPTH: usize = 3;
pub const CH_ACCUM: usize = 4;

pub const DEFAULT_OCCLUSION_THRESHOLD: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RenderSettings {
    /// Gaussians are evaluated only inside this Mahalanobis radius.
    pub sigma_cutoff: f64,
    /// Compositing stops once transmittance drops below this.
    pub min_transmittance: f64,
    pub z_near: f64,
    /// Added to both diagonal entries of every projected covariance (px²).
    pub cov_floor: f64,
    pub tile_size: usize,
}

impl Default for RenderSettings {
    fn default() -> Self {
        RenderSettings {
            sigma_cutoff: 3.0,
            min_transmittance: 1e-4,
            z_near: DEFAULT_Z_NEAR,
            cov_floor: DEFAULT_COV_FLOOR,
            tile_size: 8,
        }
    }
}

impl RenderSettings {
    /// Settings whose truncation error is far below 1e-6 per channel: tails
    /// are kept out to 8σ and compositing never stops early.
    pub fn reference() -> Self {
        RenderSettings {
            sigma_cutoff: 8.0,
            min_transmittance: 0.0,
            ..RenderSettings::default()
        }
    }
}

/// Sub-pixel sample positions relative to the pixel's top-left corner.
pub fn sample_offsets(samples_per_pixel: usize) -> Result<Vec<(f64, f64)>> {
    match samples_per_pixel {
        1 => Ok(vec![(0.5, 0.5)]),
        4 => Ok(vec![(0.25, 0.25), (0.75, 0.25), (0.25, 0.75), (0.75, 0.75)]),
        n => Err(Error::invalid(format!("samples per pixel must be 1 or 4, got {n}"))),
    }
}

/// Planar `[channel, row, col]` render buffers.
#[derive(Clone, Debug, PartialEq)]
pub struct RenderOutput {
    pub width: usize,
    pub height: usize,
    /// `3*H*W`, channel-major.
    pub color: Vec<f64>,
    pub depth: Vec<f64>,
    pub accum_opacity: Vec<f64>,
}

impl RenderOutput {
    fn from_planes(width: usize, height: usize, planes: &[f64]) -> Self {
        let hw = width * height;
        RenderOutput {
            width,
            height,
            color: planes[..3 * hw].to_vec(),
            depth: planes[CH_DEPTH * hw..(CH_DEPTH + 1) * hw].to_vec(),
            accum_opacity: planes[CH_ACCUM * hw..].to_vec(),
        }
    }

    /// Depth divided by accumulated opacity (0 where nothing was drawn).
    pub fn normalized_depth(&self) -> Vec<f64> {
        self.depth
            .iter()
            .zip(&self.accum_opacity)
            .map(|(&d, &a)| if a > 0.0 { d / a } else { 0.0 })
            .collect()
    }
}

/// `1` where accumulated opacity reaches `threshold`, `0` for occluded or empty pixels.
pub fn occlusion_mask(render: &RenderOutput, threshold: f64) -> Vec<bool> {
    render.accum_opacity.iter().map(|&a| a >= threshold).collect()
}

#[derive(Clone, Copy, Debug)]
struct Prepared {
    index: u32,
    u: f64,
    v: f64,
    z: f64,
    conic: [f64; 3],
    opacity: f64,
    color: [f64; 3],
}

struct Binned {
    prepared: Vec<Prepared>,
    /// Per tile: indices into `prepared`, front to back.
    tiles: Vec<Vec<u32>>,
    tiles_x: usize,
}

fn check_cloud(cloud: &[f64]) -> Result<usize> {
    if cloud.len() % CLOUD_STRIDE != 0 {
        return Err(Error::invalid(format!(
            "cloud length {} is not a multiple of {CLOUD_STRIDE}",
            cloud.len()
        )));
    }
    Ok(cloud.len() / CLOUD_STRIDE)
}

fn prepare(cloud: &[f64], camera: &Camera, s: &RenderSettings) -> Binned {
    let n = cloud.len() / CLOUD_STRIDE;
    let (w, h) = (camera.width as f64, camera.height as f64);
    let tile = s.tile_size.max(1);
    let tiles_x = camera.width.div_ceil(tile);
    let tiles_y = camera.height.div_ceil(tile);
    let k = s.sigma_cutoff;

    let projected: Vec<Option<(Prepared, [usize; 4])>> = par::map_range(n, |i| {
        let gs = &cloud[i * CLOUD_STRIDE..(i + 1) * CLOUD_STRIDE];
        let x = [gs[OFF_POS], gs[OFF_POS + 1], gs[OFF_POS + 2]];
        let mut sigma: Sym3 = [0.0; 6];
        sigma.copy_from_slice(&gs[OFF_COV..OFF_COV + 6]);
        let sp = camera.splat(&x, &sigma, s.cov_floor, s.z_near)?;
        let [c00, c01, c11] = sp.cov;
        let det = c00 * c11 - c01 * c01;
        if !(det >= 1e-12) || !sp.u.is_finite() || !sp.v.is_finite() {
            return None;
        }
        let ext_u = k * c00.sqrt();
        let ext_v = k * c11.sqrt();
        let (u0, u1) = (sp.u - ext_u, sp.u + ext_u);
        let (v0, v1) = (sp.v - ext_v, sp.v + ext_v);
        if u1 < 0.0 || v1 < 0.0 || u0 > w || v0 > h {
            return None;
        }
        let tx0 = (u0.max(0.0) / tile as f64).floor() as usize;
        let ty0 = (v0.max(0.0) / tile as f64).floor() as usize;
        let tx1 = ((u1.min(w) / tile as f64).floor() as usize).min(tiles_x - 1);
        let ty1 = ((v1.min(h) / tile as f64).floor() as usize).min(tiles_y - 1);
        Some((
            Prepared {
                index: i as u32,
                u: sp.u,
                v: sp.v,
                z: sp.z,
                conic: [c11 / det, -c01 / det, c00 / det],
                opacity: gs[OFF_OPACITY],
                color: [gs[OFF_COLOR], gs[OFF_COLOR + 1], gs[OFF_COLOR + 2]],
            },
            [tx0, tx1, ty0, ty1],
        ))
    });

    let mut kept: Vec<(Prepared, [usize; 4])> = projected.into_iter().flatten().collect();
    kept.sort_by(|a, b| a.0.z.total_cmp(&b.0.z).then(a.0.index.cmp(&b.0.index)));

    let mut tiles = vec![Vec::new(); tiles_x * tiles_y];
    for (j, (_, [tx0, tx1, ty0, ty1])) in kept.iter().enumerate() {
        for ty in *ty0..=*ty1 {
            for tx in *tx0..=*tx1 {
                tiles[ty * tiles_x + tx].push(j as u32);
            }
        }
    }
    Binned {
        prepared: kept.into_iter().map(|(p, _)| p).collect(),
        tiles,
        tiles_x,
    }
}

impl Binned {
    /// Tile `t`'s Gaussians copied front to back into one contiguous buffer.
    fn gather(&self, t: usize) -> Vec<Prepared> {
        self.tiles[t].iter().map(|&j| self.prepared[j as usize]).collect()
    }
}

fn tile_pixels(t: usize, b: &Binned, camera: &Camera, tile: usize) -> (usize, usize, usize, usize) {
    let tx = t % b.tiles_x;
    let ty = t / b.tiles_x;
    let x0 = tx * tile;
    let y0 = ty * tile;
    (x0, (x0 + tile).min(camera.width), y0, (y0 + tile).min(camera.height))
}

#[inline]
fn eval_gamma(g: &Prepared, sx: f64, sy: f64, k2: f64) -> Option<(f64, f64, f64)> {
    let dx = sx - g.u;
    let dy = sy - g.v;
    let [a, b, c] = g.conic;
    let m = a * dx * dx + 2.0 * b * dx * dy + c * dy * dy;
    if m > k2 {
        return None;
    }
    Some((g.opacity * (-0.5 * m).exp(), dx, dy))
}

fn forward_binned(b: &Binned, camera: &Camera, spp: usize, s: &RenderSettings) -> Result<Vec<f64>> {
    let offsets = sample_offsets(spp)?;
    let (w, h) = (camera.width, camera.height);
    let hw = w * h;
    let tile = s.tile_size.max(1);
    let k2 = s.sigma_cutoff * s.sigma_cutoff;
    let inv_s = 1.0 / offsets.len() as f64;

    let per_tile: Vec<Vec<[f64; RENDER_CHANNELS]>> = par::map_range(b.tiles.len(), |t| {
        let (x0, x1, y0, y1) = tile_pixels(t, b, camera, tile);
        let list = b.gather(t);
        let mut out = Vec::with_capacity((x1 - x0) * (y1 - y0));
        let mut tr = vec![1.0; offsets.len()];
        let mut acc = vec![[0.0; 4]; offsets.len()];
        for y in y0..y1 {
            for x in x0..x1 {
                tr.fill(1.0);
                acc.fill([0.0; 4]);
                let mut active = offsets.len();
                for g in &list {
                    for (k, &(ox, oy)) in offsets.iter().enumerate() {
                        if tr[k] < s.min_transmittance {
                            continue;
                        }
                        let Some((gamma, _, _)) = eval_gamma(g, x as f64 + ox, y as f64 + oy, k2) else {
                            continue;
                        };
                        let wgt = tr[k] * gamma;
                        let a = &mut acc[k];
                        a[0] += wgt * g.color[0];
                        a[1] += wgt * g.color[1];
                        a[2] += wgt * g.color[2];
                        a[3] += wgt * g.z;
                        tr[k] *= 1.0 - gamma;
                        if tr[k] < s.min_transmittance {
                            active -= 1;
                        }
                    }
                    if active == 0 {
                        break;
                    }
                }
                let mut px = [0.0; RENDER_CHANNELS];
                for k in 0..offsets.len() {
                    for c in 0..4 {
                        px[c] += acc[k][c] * inv_s;
                    }
                    px[CH_ACCUM] += (1.0 - tr[k]) * inv_s;
                }
                out.push(px);
            }
        }
        out
    });

    let mut planes = vec![0.0; RENDER_CHANNELS * hw];
    for (t, vals) in per_tile.iter().enumerate() {
        let (x0, x1, y0, y1) = tile_pixels(t, b, camera, tile);
        let mut it = vals.iter();
        for y in y0..y1 {
            for x in x0..x1 {
                let px = it.next().expect("tile pixel count");
                for c in 0..RENDER_CHANNELS {
                    planes[c * hw + y * w + x] = px[c];
                }
            }
        }
    }
    Ok(planes)
}

/// Per-Gaussian screen-space gradient: u, v, conic (a, b, c), opacity, color (3), z.
type ScreenGrad = [f64; 10];

fn backward_binned(
    b: &Binned,
    camera: &Camera,
    spp: usize,
    s: &RenderSettings,
    grad_planes: &[f64],
) -> Result<Vec<ScreenGrad>> {
    let offsets = sample_offsets(spp)?;
    let (w, h) = (camera.width, camera.height);
    let hw = w * h;
    let tile = s.tile_size.max(1);
    let k2 = s.sigma_cutoff * s.sigma_cutoff;
    let inv_s = 1.0 / offsets.len() as f64;

    struct Hit {
        pos: u32,
        gamma: f64,
        t_before: f64,
        dx: f64,
        dy: f64,
    }

    let per_tile: Vec<Vec<ScreenGrad>> = par::map_range(b.tiles.len(), |t| {
        let (x0, x1, y0, y1) = tile_pixels(t, b, camera, tile);
        let list = b.gather(t);
        let mut local = vec![[0.0; 10]; list.len()];
        let mut hits: Vec<Vec<Hit>> = offsets.iter().map(|_| Vec::new()).collect();
        let mut tr = vec![1.0; offsets.len()];
        for y in y0..y1 {
            for x in x0..x1 {
                let p = y * w + x;
                let gc = [
                    grad_planes[p] * inv_s,
                    grad_planes[hw + p] * inv_s,
                    grad_planes[2 * hw + p] * inv_s,
                ];
                let gd = grad_planes[CH_DEPTH * hw + p] * inv_s;
                let ga = grad_planes[CH_ACCUM * hw + p] * inv_s;
                if gc == [0.0; 3] && gd == 0.0 && ga == 0.0 {
                    continue;
                }
                hits.iter_mut().for_each(Vec::clear);
                tr.fill(1.0);
                let mut active = offsets.len();
                for (pos, g) in list.iter().enumerate() {
                    for (k, &(ox, oy)) in offsets.iter().enumerate() {
                        if tr[k] < s.min_transmittance {
                            continue;
                        }
                        let Some((gamma, dx, dy)) = eval_gamma(g, x as f64 + ox, y as f64 + oy, k2) else {
                            continue;
                        };
                        hits[k].push(Hit {
                            pos: pos as u32,
                            gamma,
                            t_before: tr[k],
                            dx,
                            dy,
                        });
                        tr[k] *= 1.0 - gamma;
                        if tr[k] < s.min_transmittance {
                            active -= 1;
                        }
                    }
                    if active == 0 {
                        break;
                    }
                }
                for sample_hits in &hits {
                    // suffix quantities over later hits
                    let mut rest = 0.0;
                    let mut rest_trans = 1.0;
                    for hit in sample_hits.iter().rev() {
                        let g = &list[hit.pos as usize];
                        let wgt = hit.t_before * hit.gamma;
                        let value = gc[0] * g.color[0] + gc[1] * g.color[1] + gc[2] * g.color[2] + gd * g.z;
                        let dgamma = hit.t_before * (value - rest) + ga * hit.t_before * rest_trans;
                        rest = hit.gamma * value + (1.0 - hit.gamma) * rest;
                        rest_trans *= 1.0 - hit.gamma;

                        let e = hit.gamma / g.opacity;
                        let dm = -0.5 * hit.gamma * dgamma;
                        let [ca, cb, cc] = g.conic;
                        let (dx, dy) = (hit.dx, hit.dy);
                        let acc = &mut local[hit.pos as usize];
                        acc[0] -= dm * (2.0 * ca * dx + 2.0 * cb * dy);
                        acc[1] -= dm * (2.0 * cb * dx + 2.0 * cc * dy);
                        acc[2] += dm * dx * dx;
                        acc[3] += dm * 2.0 * dx * dy;
                        acc[4] += dm * dy * dy;
                        acc[5] += dgamma * e;
                        acc[6] += gc[0] * wgt;
                        acc[7] += gc[1] * wgt;
                        acc[8] += gc[2] * wgt;
                        acc[9] += gd * wgt;
                    }
                }
            }
        }
        local
    });

    let mut screen = vec![[0.0; 10]; b.prepared.len()];
    for (t, local) in per_tile.iter().enumerate() {
        for (pos, g) in local.iter().enumerate() {
            let dst = &mut screen[b.tiles[t][pos] as usize];
            for k in 0..10 {
                dst[k] += g[k];
            }
        }
    }
    Ok(screen)
}

fn cloud_gradient(cloud: &[f64], camera: &Camera, b: &Binned, screen: &[ScreenGrad]) -> Vec<f64> {
    let n = cloud.len() / CLOUD_STRIDE;
    let per: Vec<(u32, [f64; CLOUD_STRIDE])> = par::map_range(b.prepared.len(), |j| {
        let p = &b.prepared[j];
        let sg = &screen[j];
        let i = p.index as usize;
        let gs = &cloud[i * CLOUD_STRIDE..(i + 1) * CLOUD_STRIDE];
        // conic -> projected covariance: dΣ' = -Q dQ Q
        let q = [[p.conic[0], p.conic[1]], [p.conic[1], p.conic[2]]];
        let gq = [[sg[2], 0.5 * sg[3]], [0.5 * sg[3], sg[4]]];
        let mut tmp = [[0.0; 2]; 2];
        for r in 0..2 {
            for c in 0..2 {
                tmp[r][c] = (0..2).map(|k| q[r][k] * gq[k][c]).sum();
            }
        }
        let mut gcov = [[0.0; 2]; 2];
        for r in 0..2 {
            for c in 0..2 {
                gcov[r][c] = -(0..2).map(|k| tmp[r][k] * q[k][c]).sum::<f64>();
            }
        }
        let g = SplatGrad {
            u: sg[0],
            v: sg[1],
            z: sg[9],
            cov: [gcov[0][0], gcov[0][1] + gcov[1][0], gcov[1][1]],
        };
        let x = [gs[OFF_POS], gs[OFF_POS + 1], gs[OFF_POS + 2]];
        let mut sigma = [0.0; 6];
        sigma.copy_from_slice(&gs[OFF_COV..OFF_COV + 6]);
        let (dx, dsig) = camera.splat_vjp(&x, &sigma, &g);
        let mut out = [0.0; CLOUD_STRIDE];
        out[OFF_POS..OFF_POS + 3].copy_from_slice(&dx);
        out[OFF_COV..OFF_COV + 6].copy_from_slice(&dsig);
        out[OFF_OPACITY] = sg[5];
        out[OFF_COLOR..OFF_COLOR + 3].copy_from_slice(&sg[6..9]);
        (p.index, out)
    });
    let mut grad = vec![0.0; n * CLOUD_STRIDE];
    for (i, g) in per {
        grad[i as usize * CLOUD_STRIDE..(i as usize + 1) * CLOUD_STRIDE].copy_from_slice(&g);
    }
    grad
}

/// Renders color, depth and accumulated opacity of `cloud` (packed,
/// [`CLOUD_STRIDE`] values per Gaussian) as seen from `camera`.
pub fn render(cloud: &[f64], camera: &Camera, samples_per_pixel: usize, settings: &RenderSettings) -> Result<RenderOutput> {
    check_cloud(cloud)?;
    let b = prepare(cloud, camera, settings);
    let planes = forward_binned(&b, camera, samples_per_pixel, settings)?;
    Ok(RenderOutput::from_planes(camera.width, camera.height, &planes))
}

struct RenderFn {
    binned: Binned,
    camera: Camera,
    spp: usize,
    settings: RenderSettings,
}

impl Function for RenderFn {
    fn name(&self) -> &'static str {
        "render"
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, g: &Tensor) -> Result<Vec<Option<Tensor>>> {
        let screen = backward_binned(&self.binned, &self.camera, self.spp, &self.settings, g.data())?;
        let grad = cloud_gradient(inputs[0].data(), &self.camera, &self.binned, &screen);
        Ok(vec![Some(Tensor::new(inputs[0].shape().to_vec(), grad)?)])
    }
}

/// Differentiable render. `cloud` is `[M, CLOUD_STRIDE]`; the result is
/// `[RENDER_CHANNELS, H, W]`.
pub fn render_var(
    g: &mut Graph,
    cloud: Var,
    camera: &Camera,
    samples_per_pixel: usize,
    settings: &RenderSettings,
) -> Result<Var> {
    let data = g.value(cloud).data();
    check_cloud(data)?;
    let binned = prepare(data, camera, settings);
    let planes = forward_binned(&binned, camera, samples_per_pixel, settings)?;
    let out = Tensor::new(vec![RENDER_CHANNELS, camera.height, camera.width], planes)?;
    Ok(g.custom(
        Box::new(RenderFn {
            binned,
            camera: camera.clone(),
            spp: samples_per_pixel,
            settings: *settings,
        }),
        &[cloud],
        out,
    ))
}

/// View of a render tensor as a [`RenderOutput`].
pub fn output_from_tensor(t: &Tensor) -> Result<RenderOutput> {
    let s = t.shape();
    if s.len() != 3 || s[0] != RENDER_CHANNELS {
        return Err(Error::invalid(format!("not a render tensor: {s:?}")));
    }
    Ok(RenderOutput::from_planes(s[2], s[1], t.data()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::GaussianCloud;

    fn cam(w: usize, h: usize) -> Camera {
        Camera::looking_forward(32.0, 32.0, w, h, [0.0; 3])
    }

    #[test]
    fn offsets() {
        assert_eq!(sample_offsets(1).unwrap(), vec![(0.5, 0.5)]);
        let four = sample_offsets(4).unwrap();
        assert_eq!(four.len(), 4);
        let mx: f64 = four.iter().map(|o| o.0).sum::<f64>() / 4.0;
        let my: f64 = four.iter().map(|o| o.1).sum::<f64>() / 4.0;
        assert_eq!((mx, my), (0.5, 0.5));
        assert!(sample_offsets(2).is_err());
    }

    #[test]
    fn empty_cloud_is_black() {
        let out = render(&[], &cam(8, 8), 1, &RenderSettings::default()).unwrap();
        assert!(out.color.iter().chain(&out.depth).chain(&out.accum_opacity).all(|&v| v == 0.0));
        assert!(occlusion_mask(&out, DEFAULT_OCCLUSION_THRESHOLD).iter().all(|&m| !m));
    }

    #[test]
    fn single_splat_on_pixel_center() {
        let c = cam(8, 8);
        // pixel (3,3) center is (3.5, 3.5); world point projecting there at z=2
        let x = c.unproject(3.5, 3.5, 2.0).unwrap();
        let mut cloud = GaussianCloud::default();
        cloud.push(x, [1e-6, 0.0, 0.0, 1e-6, 0.0, 1e-6], 0.995, [1.0, 0.0, 0.0]);
        let out = render(&cloud.data, &c, 1, &RenderSettings::default()).unwrap();
        let p = 3 * 8 + 3;
        assert!((out.color[p] - 0.995).abs() < 1e-12);
        assert_eq!(out.color[64 + p], 0.0);
        assert!((out.accum_opacity[p] - 0.995).abs() < 1e-12);
        assert!((out.depth[p] - 0.995 * 2.0).abs() < 1e-12);
    }

    #[test]
    fn two_coincident_splats() {
        let c = cam(4, 4);
        let front = c.unproject(1.5, 1.5, 1.0).unwrap();
        let back = c.unproject(1.5, 1.5, 2.0).unwrap();
        let tiny = [1e-8, 0.0, 0.0, 1e-8, 0.0, 1e-8];
        let mut cloud = GaussianCloud::default();
        // pushed back-first to exercise the sort
        cloud.push(back, tiny, 0.5, [0.0; 3]);
        cloud.push(front, tiny, 0.5, [1.0; 3]);
        let s = RenderSettings {
            cov_floor: 1e-6,
            ..RenderSettings::default()
        };
        let out = render(&cloud.data, &c, 1, &s).unwrap();
        let p = 4 + 1;
        assert!((out.color[p] - 0.5).abs() < 1e-12);
        assert!((out.accum_opacity[p] - 0.75).abs() < 1e-12);
    }

    #[test]
    fn full_plane_covers_everything() {
        let c = cam(8, 8);
        let mut cloud = GaussianCloud::default();
        for y in 0..8 {
            for x in 0..8 {
                let p = c.unproject(x as f64 + 0.5, y as f64 + 0.5, 2.0).unwrap();
                let r = 2.0 / 32.0;
                cloud.push(p, [r * r, 0.0, 0.0, r * r, 0.0, r * r], 0.9, [0.3; 3]);
            }
        }
        let out = render(&cloud.data, &c, 1, &RenderSettings::default()).unwrap();
        assert!(occlusion_mask(&out, DEFAULT_OCCLUSION_THRESHOLD).iter().all(|&m| m));
        assert!(out.color.iter().all(|&v| v <= 0.3 + 1e-12));
    }

    fn random_cloud(rng: &mut rand_chacha::ChaCha8Rng, c: &Camera, n: usize) -> Vec<f64> {
        use rand::Rng;
        let mut cloud = GaussianCloud::default();
        for i in 0..n {
            let z = 1.5 + 0.2 * i as f64 + rng.gen_range(0.0..0.1);
            let u = rng.gen_range(2.0..c.width as f64 - 2.0);
            let v = rng.gen_range(2.0..c.height as f64 - 2.0);
            let x = c.unproject(u, v, z).unwrap();
            let s = z / c.fx * rng.gen_range(0.8..2.5);
            let l = [
                s,
                0.0,
                0.0,
                rng.gen_range(-0.5..0.5) * s,
                s * rng.gen_range(0.5..1.5),
                0.0,
                rng.gen_range(-0.5..0.5) * s,
                rng.gen_range(-0.5..0.5) * s,
                s,
            ];
            let m = |r: usize, k: usize| l[r * 3 + k];
            let dot = |a: usize, b: usize| (0..3).map(|k| m(a, k) * m(b, k)).sum::<f64>();
            let cov = [dot(0, 0), dot(0, 1), dot(0, 2), dot(1, 1), dot(1, 2), dot(2, 2)];
            let col = [rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)];
            cloud.push(x, cov, rng.gen_range(0.2..0.9), col);
        }
        cloud.data
    }

    #[test]
    fn gradient_matches_finite_differences() {
        use crate::gradcheck::{check, graph_trial};
        let c = cam(12, 10);
        for spp in [1, 4] {
            let cc = c.clone();
            let r = check("render", 1e-3, 10, 7, |rng| {
                let n = 10;
                let x = random_cloud(rng, &cc, n);
                let cam2 = cc.clone();
                Ok(graph_trial(vec![vec![n, CLOUD_STRIDE]], x, 3, move |g, v| {
                    render_var(g, v[0], &cam2, spp, &RenderSettings::reference())
                }))
            })
            .unwrap();
            assert!(r.passed, "{r:?}");
        }
    }
}
