//! Scene bundle construction and the training loop.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Tensor, Var};
use crate::dataset::Dataset;
use crate::decoder::{self, capacity_for_views, normalized_view_index, DecoderConfig, DecoderParams, DecoderVars, Head};
use crate::error::{Error, Result};
use crate::flow::{consistency_mask, correspondences, FlowField, PairCorrespondences};
use crate::geometry::Camera;
use crate::init::{alpha_for_views, align_depths, segment_by_depth, AlignParams, AlignResult};
use crate::losses::{flow_loss, photometric, schedule_lambda_s, total_loss, tv_losses};
use crate::optim::{AdamState, TrainConfig};
use crate::raster::{self, render_var, RenderOutput, CH_DEPTH};
use crate::scene::{materialize, materialize_values, GaussianCloud, MaterializeInputs, PixelGaussianGrid, SegMask, DEPTH_FLOOR};

/// Every view's Gaussians plus the shared decoders.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneBundle {
    pub cameras: Vec<Camera>,
    pub grids: Vec<PixelGaussianGrid>,
    pub align: AlignParams,
    pub depth_decoder: DecoderParams,
    pub opacity_decoder: DecoderParams,
    /// Multiplier from raw depth residual to scene units.
    pub depth_gain: f64,
    pub use_decoder: bool,
    /// Raw per-pixel residuals, only populated when the decoder is disabled.
    pub direct_depth: Vec<Vec<f64>>,
    pub direct_opacity: Vec<Vec<f64>>,
}

impl SceneBundle {
    pub fn views(&self) -> usize {
        self.grids.len()
    }

    pub fn gaussian_count(&self) -> usize {
        self.grids.iter().map(|g| g.pixels()).sum()
    }

    /// `(ΔD, Δα)` of view `n` in scene units.
    pub fn residuals(&self, n: usize) -> Result<(Vec<f64>, Vec<f64>)> {
        let grid = &self.grids[n];
        if !self.use_decoder {
            let dd = self.direct_depth[n].iter().map(|v| v * self.depth_gain).collect();
            return Ok((dd, self.direct_opacity[n].clone()));
        }
        let t = normalized_view_index(n, self.views());
        let mut g = Graph::new();
        let dv = self.depth_decoder.register_frozen(&mut g);
        let ov = self.opacity_decoder.register_frozen(&mut g);
        let d = decoder::decode(&mut g, &self.depth_decoder.config, &dv, t)?;
        let d = decoder::apply_mask(&mut g, d, &grid.segmask)?;
        let o = decoder::decode(&mut g, &self.opacity_decoder.config, &ov, t)?;
        let o = decoder::apply_mask(&mut g, o, &grid.segmask)?;
        let dd = g.value(d).data().iter().map(|v| v * self.depth_gain).collect();
        Ok((dd, g.value(o).data().to_vec()))
    }

    /// Current per-view depth `D_init + ΔD`.
    pub fn depths(&self) -> Result<Vec<Vec<f64>>> {
        (0..self.views())
            .map(|n| {
                let (dd, _) = self.residuals(n)?;
                Ok(self.grids[n].depth_init.iter().zip(dd).map(|(a, b)| a + b).collect())
            })
            .collect()
    }

    pub fn cloud(&self) -> Result<GaussianCloud> {
        let mut cloud = GaussianCloud::default();
        for n in 0..self.views() {
            let (dd, da) = self.residuals(n)?;
            cloud.extend(materialize_values(&self.grids[n], &self.cameras[n], &dd, &da)?);
        }
        Ok(cloud)
    }

    pub fn render(&self, camera: &Camera, config: &TrainConfig) -> Result<RenderOutput> {
        raster::render(&self.cloud()?.data, camera, config.samples_per_pixel, &config.render)
    }
}

/// Builds the ordered-pair correspondences for every flow whose reverse flow
/// is also present.
pub fn build_pairs(
    cameras: &[Camera],
    flows: &[(usize, usize, FlowField)],
    tau: f64,
) -> Result<(Vec<PairCorrespondences>, Vec<String>)> {
    let mut pairs = Vec::new();
    let mut warnings = Vec::new();
    for (i, j, f) in flows {
        if *i >= cameras.len() || *j >= cameras.len() {
            return Err(Error::data(format!("flow {i}->{j} references a missing view")));
        }
        let Some((_, _, back)) = flows.iter().find(|(a, b, _)| a == j && b == i) else {
            warnings.push(format!("flow {i}->{j} has no reverse flow; skipped"));
            continue;
        };
        let mask = consistency_mask(f, back, tau)?;
        pairs.push(correspondences((*i, &cameras[*i]), (*j, &cameras[*j]), f, &mask)?);
    }
    Ok((pairs, warnings))
}

/// Builds per-view grids and decoders from aligned depths.
pub fn init_scene(
    images: &[Tensor],
    depth_init: &[Vec<f64>],
    cameras: &[Camera],
    segmasks: Vec<SegMask>,
    config: &TrainConfig,
) -> Result<SceneBundle> {
    let n = cameras.len();
    if images.len() != n || depth_init.len() != n || segmasks.len() != n {
        return Err(Error::invalid("init_scene inputs disagree on the number of views"));
    }
    let alpha = alpha_for_views(n)?;
    let (w, h) = (cameras[0].width, cameras[0].height);
    let mut grids = Vec::with_capacity(n);
    for (v, ((img, d), mask)) in images.iter().zip(depth_init).zip(segmasks).enumerate() {
        let cam = &cameras[v];
        if (cam.width, cam.height) != (w, h) || img.shape() != [3, h, w] || d.len() != w * h {
            return Err(Error::data(format!("view {v}: resolution mismatch")));
        }
        if d.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
            return Err(Error::data(format!("view {v}: initial depth must be finite and positive")));
        }
        let hw = w * h;
        let mut color = vec![0.0; 3 * hw];
        for p in 0..hw {
            for c in 0..3 {
                color[3 * p + c] = img.data()[c * hw + p];
            }
        }
        grids.push(PixelGaussianGrid {
            view_index: v,
            width: w,
            height: h,
            depth_init: d.clone(),
            color,
            rotation: [1.0, 0.0, 0.0, 0.0].repeat(hw),
            log_scale: vec![0.0; 3 * hw],
            alpha_init: alpha,
            frozen_covariance: true,
            radius_scale: config.radius_scale,
            segmask: mask,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let dec = |head| DecoderConfig {
        width: w,
        height: h,
        capacity: capacity_for_views(n, head),
        channels: config.channels,
        head,
    };
    let depth_decoder = decoder::build(dec(Head::Depth), &mut rng)?;
    let opacity_decoder = decoder::build(dec(Head::Opacity), &mut rng)?;
    let lo = depth_init.iter().flatten().cloned().fold(f64::INFINITY, f64::min);
    let hi = depth_init.iter().flatten().cloned().fold(f64::NEG_INFINITY, f64::max);
    let range = if hi > lo { hi - lo } else { hi.abs() };
    let (direct_depth, direct_opacity) = if config.use_decoder {
        (Vec::new(), Vec::new())
    } else {
        (vec![vec![0.0; w * h]; n], vec![vec![0.0; w * h]; n])
    };
    Ok(SceneBundle {
        cameras: cameras.to_vec(),
        grids,
        align: AlignParams::identity(n),
        depth_decoder,
        opacity_decoder,
        depth_gain: config.depth_gain_fraction * range,
        use_decoder: config.use_decoder,
        direct_depth,
        direct_opacity,
    })
}

pub struct InitOutput {
    pub bundle: SceneBundle,
    pub alignment: Option<AlignResult>,
    pub warnings: Vec<String>,
}

/// Consistency masks, depth alignment, segmentation and grid construction.
pub fn initialize(dataset: &Dataset, config: &TrainConfig) -> Result<InitOutput> {
    config.validate()?;
    dataset.validate()?;
    let cameras = dataset.cameras();
    let (pairs, mut warnings) = build_pairs(&cameras, &dataset.flows, config.tau)?;
    let mono: Vec<Vec<f64>> = dataset.views.iter().map(|v| v.depth.clone()).collect();
    let alignment = if config.align {
        let r = align_depths(&mono, &pairs, &config.alignment())?;
        warnings.extend(r.warnings.iter().cloned());
        Some(r)
    } else {
        None
    };
    let params = alignment
        .as_ref()
        .map(|r| r.params.clone())
        .unwrap_or_else(|| AlignParams::identity(mono.len()));
    let depth_init: Vec<Vec<f64>> = (0..mono.len()).map(|n| params.apply(n, &mono[n])).collect();
    let (w, h) = dataset.resolution();
    let segmasks = mono
        .iter()
        .map(|d| segment_by_depth(d, w, h, config.channels))
        .collect::<Result<Vec<_>>>()?;
    let images: Vec<Tensor> = dataset.views.iter().map(|v| v.image.clone()).collect();
    let mut bundle = init_scene(&images, &depth_init, &cameras, segmasks, config)?;
    bundle.align = params;
    Ok(InitOutput {
        bundle,
        alignment,
        warnings,
    })
}

/// Per-iteration training inputs derived from the dataset.
pub struct TrainingData {
    pub images: Vec<Tensor>,
    pub pairs: Vec<PairCorrespondences>,
}

impl TrainingData {
    pub fn new(dataset: &Dataset, config: &TrainConfig) -> Result<Self> {
        let (pairs, _) = build_pairs(&dataset.cameras(), &dataset.flows, config.tau)?;
        Ok(TrainingData {
            images: dataset.views.iter().map(|v| v.image.clone()).collect(),
            pairs,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub iteration: usize,
    pub view: usize,
    pub total: f64,
    pub photometric: f64,
    pub tv: f64,
    pub mtv: f64,
    pub flow: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainState {
    pub iteration: usize,
    pub adam: BTreeMap<String, AdamState>,
    pub history: Vec<LossRecord>,
}

/// Graph handles produced by [`build_forward`].
pub struct ForwardGraph {
    pub depth_decoder: Option<DecoderVars>,
    pub opacity_decoder: Option<DecoderVars>,
    pub colors: Vec<Var>,
    pub rotations: Vec<Option<Var>>,
    pub log_scales: Vec<Option<Var>>,
    pub direct_depth: Vec<Var>,
    pub direct_opacity: Vec<Var>,
    /// `[H, W]` current depth per view.
    pub depths: Vec<Var>,
    /// `[M, CLOUD_STRIDE]`, views concatenated in order.
    pub cloud: Var,
}

/// Records decode, mask, and materialize for every view on `g`.
pub fn build_forward(g: &mut Graph, bundle: &SceneBundle) -> Result<ForwardGraph> {
    let n_views = bundle.views();
    let (dvars, ovars) = if bundle.use_decoder {
        (
            Some(bundle.depth_decoder.register(g)),
            Some(bundle.opacity_decoder.register(g)),
        )
    } else {
        (None, None)
    };
    let mut fwd = ForwardGraph {
        depth_decoder: dvars,
        opacity_decoder: ovars,
        colors: Vec::new(),
        rotations: Vec::new(),
        log_scales: Vec::new(),
        direct_depth: Vec::new(),
        direct_opacity: Vec::new(),
        depths: Vec::new(),
        cloud: Var(0),
    };
    let mut clouds = Vec::with_capacity(n_views);
    for n in 0..n_views {
        let grid = &bundle.grids[n];
        let (h, w) = (grid.height, grid.width);
        let (raw_d, da) = match (&fwd.depth_decoder, &fwd.opacity_decoder) {
            (Some(dv), Some(ov)) => {
                let t = normalized_view_index(n, n_views);
                let d = decoder::decode(g, &bundle.depth_decoder.config, dv, t)?;
                let d = decoder::apply_mask(g, d, &grid.segmask)?;
                let o = decoder::decode(g, &bundle.opacity_decoder.config, ov, t)?;
                let o = decoder::apply_mask(g, o, &grid.segmask)?;
                (d, o)
            }
            _ => {
                let d = g.param(Tensor::new(vec![h, w], bundle.direct_depth[n].clone())?);
                let o = g.param(Tensor::new(vec![h, w], bundle.direct_opacity[n].clone())?);
                fwd.direct_depth.push(d);
                fwd.direct_opacity.push(o);
                (d, o)
            }
        };
        let dd = g.scale(raw_d, bundle.depth_gain);
        let color = g.param(Tensor::new(vec![h * w, 3], grid.color.clone())?);
        let (rot, ls) = if grid.frozen_covariance {
            (None, None)
        } else {
            (
                Some(g.param(Tensor::new(vec![h * w, 4], grid.rotation.clone())?)),
                Some(g.param(Tensor::new(vec![h * w, 3], grid.log_scale.clone())?)),
            )
        };
        let cloud = materialize(
            g,
            grid,
            &bundle.cameras[n],
            &MaterializeInputs {
                depth_residual: dd,
                opacity_residual: da,
                color,
                rotation: rot,
                log_scale: ls,
            },
        )?;
        let d0 = g.constant(Tensor::new(vec![h, w], grid.depth_init.clone())?);
        fwd.depths.push(g.add(d0, dd)?);
        fwd.colors.push(color);
        fwd.rotations.push(rot);
        fwd.log_scales.push(ls);
        clouds.push(cloud);
    }
    fwd.cloud = g.concat(&clouds)?;
    Ok(fwd)
}

/// The scalar objective for one training view, with its components.
pub struct Objective {
    pub total: Var,
    pub photometric: Var,
    pub tv: Var,
    pub mtv: Var,
    pub flow: Var,
}

pub fn objective(
    g: &mut Graph,
    bundle: &SceneBundle,
    fwd: &ForwardGraph,
    data: &TrainingData,
    config: &TrainConfig,
    view: usize,
    lambda_s: f64,
) -> Result<Objective> {
    let cam = &bundle.cameras[view];
    let (h, w) = (cam.height, cam.width);
    let r = render_var(g, fwd.cloud, cam, config.samples_per_pixel, &config.render)?;
    let rgb = g.narrow(r, 0, 3)?;
    let depth = g.narrow(r, CH_DEPTH, 1)?;
    let depth = g.reshape(depth, &[h, w])?;
    let photo = photometric(g, rgb, &data.images[view], config.weights.lambda_ssim)?;
    let (tv, mtv) = tv_losses(g, depth, &bundle.grids[view].segmask)?;
    let flow = flow_loss(g, &fwd.depths, &data.pairs)?;
    let total = total_loss(g, photo, tv, mtv, flow, &config.weights, lambda_s)?;
    Ok(Objective {
        total,
        photometric: photo,
        tv,
        mtv,
        flow,
    })
}

fn take_grad(g: &Graph, v: Var, name: &str) -> Result<Vec<f64>> {
    let grad = match g.grad(v) {
        Some(t) => t.data().to_vec(),
        None => vec![0.0; g.value(v).numel()],
    };
    if grad.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite(format!("gradient of parameter group {name}")));
    }
    Ok(grad)
}

fn adam_update(state: &mut TrainState, name: String, params: &mut [f64], grad: &[f64], lr: f64) {
    state
        .adam
        .entry(name)
        .or_insert_with(|| AdamState::new(params.len()))
        .step(params, grad, lr);
}

/// Switches every grid to free covariances at the current depth.
pub fn unfreeze_all(bundle: &mut SceneBundle) -> Result<()> {
    let depths = bundle.depths()?;
    for (n, d) in depths.iter().enumerate() {
        let clamped: Vec<f64> = d.iter().map(|x| x.max(DEPTH_FLOOR)).collect();
        let cam = bundle.cameras[n].clone();
        bundle.grids[n].unfreeze(&cam, &clamped);
    }
    Ok(())
}

/// Runs one regularized iteration on view `iteration mod N`.
pub fn train_step(bundle: &mut SceneBundle, data: &TrainingData, config: &TrainConfig, state: &mut TrainState) -> Result<LossRecord> {
    let total_iters = config.scaled_total();
    let t = state.iteration;
    if t >= total_iters {
        return Err(Error::invalid(format!("training already finished ({t} of {total_iters} iterations)")));
    }
    if t >= config.scaled_phase1() && bundle.grids.iter().any(|g| g.frozen_covariance) {
        unfreeze_all(bundle)?;
    }
    let view = t % bundle.views();
    let lambda_s = schedule_lambda_s(t, total_iters);

    let mut g = Graph::new();
    let fwd = build_forward(&mut g, bundle)?;
    let obj = objective(&mut g, bundle, &fwd, data, config, view, lambda_s)?;
    let record = LossRecord {
        iteration: t,
        view,
        total: g.value(obj.total).item(),
        photometric: g.value(obj.photometric).item(),
        tv: g.value(obj.tv).item(),
        mtv: g.value(obj.mtv).item(),
        flow: g.value(obj.flow).item(),
    };
    if !record.total.is_finite() {
        return Err(Error::NonFinite(format!("training loss at iteration {t}")));
    }
    g.backward(obj.total)?;

    let lr = config.lr;
    for (head, vars, params) in [
        ("depth", &fwd.depth_decoder, &mut bundle.depth_decoder),
        ("opacity", &fwd.opacity_decoder, &mut bundle.opacity_decoder),
    ] {
        let Some(vars) = vars else { continue };
        let handles = vars.layers.iter().flat_map(|&(k, b)| [k, b]);
        for (i, (v, tensor)) in handles.zip(params.tensors_mut()).enumerate() {
            let name = format!("decoder.{head}.{i}");
            let grad = take_grad(&g, v, &name)?;
            adam_update(state, name, tensor.data_mut(), &grad, lr.decoder);
        }
    }
    for n in 0..bundle.views() {
        let name = format!("color.{n}");
        let grad = take_grad(&g, fwd.colors[n], &name)?;
        let grid = &mut bundle.grids[n];
        adam_update(state, name, &mut grid.color, &grad, lr.color);
        grid.color.iter_mut().for_each(|c| *c = c.clamp(0.0, 1.0));
        if let (Some(r), Some(s)) = (fwd.rotations[n], fwd.log_scales[n]) {
            let name = format!("rotation.{n}");
            let grad = take_grad(&g, r, &name)?;
            adam_update(state, name, &mut grid.rotation, &grad, lr.rotation);
            grid.normalize_rotations();
            let name = format!("log_scale.{n}");
            let grad = take_grad(&g, s, &name)?;
            adam_update(state, name, &mut grid.log_scale, &grad, lr.log_scale);
        }
        if !bundle.use_decoder {
            let name = format!("direct.depth.{n}");
            let grad = take_grad(&g, fwd.direct_depth[n], &name)?;
            adam_update(state, name, &mut bundle.direct_depth[n], &grad, lr.direct_residual);
            let name = format!("direct.opacity.{n}");
            let grad = take_grad(&g, fwd.direct_opacity[n], &name)?;
            adam_update(state, name, &mut bundle.direct_opacity[n], &grad, lr.direct_residual);
        }
    }
    state.iteration += 1;
    state.history.push(record);
    Ok(record)
}

/// Trains until the schedule ends or `max_steps` more iterations have run.
pub fn train(
    bundle: &mut SceneBundle,
    data: &TrainingData,
    config: &TrainConfig,
    state: &mut TrainState,
    max_steps: Option<usize>,
    mut progress: impl FnMut(&LossRecord),
) -> Result<()> {
    config.validate()?;
    let end = config.scaled_total();
    let mut steps = 0;
    while state.iteration < end && max_steps.is_none_or(|m| steps < m) {
        let r = train_step(bundle, data, config, state)?;
        progress(&r);
        steps += 1;
    }
    Ok(())
}
