//! Held-out view metrics restricted to reconstructed (non-occluded) pixels.

use serde::Serialize;

use crate::autodiff::Tensor;
use crate::dataset::{Dataset, HeldoutView};
use crate::error::Result;
use crate::init::{alpha_for_views, DEFAULT_CHANNELS};
use crate::losses::ssim_map;
use crate::optim::TrainConfig;
use crate::pipeline::SceneBundle;
use crate::raster::{occlusion_mask, RenderOutput, DEFAULT_OCCLUSION_THRESHOLD};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ViewMetrics {
    pub name: String,
    /// Fraction of pixels whose accumulated opacity reaches the threshold.
    pub coverage: f64,
    /// Absent when no pixel is covered.
    pub psnr: Option<f64>,
    pub ssim: Option<f64>,
    /// Mean accumulated opacity over covered pixels.
    pub mean_accum_opacity: Option<f64>,
    /// Mean absolute error of opacity-normalized depth over covered pixels.
    pub depth_mae: Option<f64>,
}

/// Fixed constants of the method, echoed into every report.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Constants {
    pub beta_m: f64,
    pub beta_f: f64,
    pub default_channels: usize,
    pub opacity_init: [(usize, f64); 3],
    pub occlusion_threshold: f64,
    pub align_iters: usize,
    pub total_iters: usize,
    pub phase1_iters: usize,
    pub phase2_iters: usize,
}

impl Constants {
    pub fn defaults() -> Self {
        let c = TrainConfig::default();
        Constants {
            beta_m: c.weights.beta_m,
            beta_f: c.weights.beta_f,
            default_channels: DEFAULT_CHANNELS,
            opacity_init: [2, 3, 4].map(|v| (v, alpha_for_views(v).unwrap_or(f64::NAN))),
            occlusion_threshold: DEFAULT_OCCLUSION_THRESHOLD,
            align_iters: c.align_iters,
            total_iters: c.total_iters,
            phase1_iters: c.phase1_iters,
            phase2_iters: c.total_iters - c.phase1_iters,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    pub config: TrainConfig,
    pub constants: Constants,
    pub iterations_trained: usize,
    /// Depth range over all held-out ground truth, used to normalize depth errors.
    pub scene_depth_range: Option<f64>,
    pub views: Vec<ViewMetrics>,
    pub mean_psnr: Option<f64>,
    pub mean_ssim: Option<f64>,
    pub mean_coverage: f64,
    pub mean_depth_mae: Option<f64>,
    /// `mean_depth_mae / scene_depth_range`.
    pub depth_mae_fraction: Option<f64>,
}

fn mean(v: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

/// Masked metrics of one rendered view.
pub fn view_metrics(view: &HeldoutView, render: &RenderOutput, threshold: f64) -> Result<ViewMetrics> {
    let (w, h) = (render.width, render.height);
    let hw = w * h;
    let mask = occlusion_mask(render, threshold);
    let covered: Vec<usize> = (0..hw).filter(|&p| mask[p]).collect();
    let coverage = covered.len() as f64 / hw.max(1) as f64;
    let target = view.image.data();
    let psnr = if covered.is_empty() {
        None
    } else {
        let mut se = 0.0;
        for &p in &covered {
            for c in 0..3 {
                se += (render.color[c * hw + p] - target[c * hw + p]).powi(2);
            }
        }
        let mse = se / (3 * covered.len()) as f64;
        Some(-10.0 * mse.log10())
    };
    let ssim = if covered.is_empty() {
        None
    } else {
        let map = ssim_map(&render.color, target, 3, h, w)?;
        mean(covered.iter().flat_map(|&p| (0..3).map(move |c| c * hw + p)).map(|i| map[i]))
    };
    let mean_accum_opacity = mean(covered.iter().map(|&p| render.accum_opacity[p]));
    let depth_mae = view.depth.as_ref().and_then(|gt| {
        let d = render.normalized_depth();
        mean(covered.iter().map(|&p| (d[p] - gt[p]).abs()))
    });
    Ok(ViewMetrics {
        name: view.name.clone(),
        coverage,
        psnr,
        ssim,
        mean_accum_opacity,
        depth_mae,
    })
}

/// Renders every held-out view and summarizes the metrics.
pub fn evaluate(bundle: &SceneBundle, dataset: &Dataset, config: &TrainConfig, iterations_trained: usize) -> Result<(EvalReport, Vec<RenderOutput>)> {
    let cloud = bundle.cloud()?;
    let mut views = Vec::new();
    let mut renders = Vec::new();
    for v in &dataset.heldout {
        let r = crate::raster::render(&cloud.data, &v.camera, config.samples_per_pixel, &config.render)?;
        views.push(view_metrics(v, &r, config.occlusion_threshold)?);
        renders.push(r);
    }
    let gt: Vec<f64> = dataset.heldout.iter().filter_map(|v| v.depth.as_ref()).flatten().cloned().collect();
    let scene_depth_range = if gt.is_empty() {
        None
    } else {
        let lo = gt.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = gt.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        Some(hi - lo)
    };
    let mean_depth_mae = mean(views.iter().filter_map(|m| m.depth_mae));
    let report = EvalReport {
        config: config.clone(),
        constants: Constants::defaults(),
        iterations_trained,
        scene_depth_range,
        mean_psnr: mean(views.iter().filter_map(|m| m.psnr)),
        mean_ssim: mean(views.iter().filter_map(|m| m.ssim)),
        mean_coverage: mean(views.iter().map(|m| m.coverage)).unwrap_or(0.0),
        depth_mae_fraction: match (mean_depth_mae, scene_depth_range) {
            (Some(m), Some(r)) if r > 0.0 => Some(m / r),
            _ => None,
        },
        mean_depth_mae,
        views,
    };
    Ok((report, renders))
}

/// `[3, H, W]` color tensor of a render.
pub fn color_tensor(r: &RenderOutput) -> Tensor {
    Tensor::new(vec![3, r.height, r.width], r.color.clone()).expect("render shape")
}
