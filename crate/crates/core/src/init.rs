//! Optimization starting point: per-view depth scale/offset alignment,
//! depth-based segmentation, and initial opacity.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{flow_objective, PairCorrespondences};
use crate::optim::AdamState;
use crate::scene::SegMask;

pub const DEFAULT_CHANNELS: usize = 5;
pub const MIN_SCALE: f64 = 1e-3;
const MAX_STEP_HALVINGS: usize = 8;
/// Pairs with fewer consistent correspondences than this produce a warning.
pub const MIN_PAIR_CORRESPONDENCES: usize = 100;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlignParams {
    pub scale: Vec<f64>,
    pub offset: Vec<f64>,
}

impl AlignParams {
    pub fn identity(views: usize) -> Self {
        AlignParams {
            scale: vec![1.0; views],
            offset: vec![0.0; views],
        }
    }

    /// `s·D + o` for view `n`.
    pub fn apply(&self, n: usize, depth: &[f64]) -> Vec<f64> {
        depth.iter().map(|d| self.scale[n] * d + self.offset[n]).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlignConfig {
    pub iterations: usize,
    /// Initial step size, decayed geometrically to `lr * final_lr_ratio`.
    pub lr: f64,
    pub final_lr_ratio: f64,
}

impl Default for AlignConfig {
    fn default() -> Self {
        AlignConfig {
            iterations: 1000,
            lr: 1e-2,
            final_lr_ratio: 1e-2,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AlignResult {
    pub params: AlignParams,
    /// Objective before each update.
    pub history: Vec<f64>,
    pub warnings: Vec<String>,
}

fn align_objective(mono: &[Vec<f64>], pairs: &[PairCorrespondences], params: &AlignParams) -> Result<(f64, Vec<Vec<f64>>)> {
    let depths: Vec<Vec<f64>> = (0..mono.len()).map(|v| params.apply(v, &mono[v])).collect();
    let refs: Vec<&[f64]> = depths.iter().map(Vec::as_slice).collect();
    flow_objective(pairs, &refs)
}

/// Fits a scale and offset per view so that flow-corresponding pixels
/// unproject to the same 3-D point. View 0 is held at `s = 1, o = 0`.
pub fn align_depths(mono: &[Vec<f64>], pairs: &[PairCorrespondences], cfg: &AlignConfig) -> Result<AlignResult> {
    let n = mono.len();
    if n < 2 {
        return Err(Error::invalid("depth alignment needs at least two views"));
    }
    if pairs.iter().all(|p| p.items.is_empty()) {
        return Err(Error::data("no consistent flow correspondences between any views"));
    }
    let warnings = pairs
        .iter()
        .filter(|p| p.items.len() < MIN_PAIR_CORRESPONDENCES)
        .map(|p| format!("views {}->{}: only {} consistent correspondences", p.i, p.j, p.items.len()))
        .collect();

    // Adam runs on [s_v, k_v] with depth = s_v·(D - m_v) + k_v·m_v, where
    // m_v is the mean input depth. This decouples scale from offset and
    // makes both steps relative to the depth range; view 0 stays fixed.
    let means: Vec<f64> = mono.iter().map(|d| d.iter().sum::<f64>() / d.len().max(1) as f64).collect();
    let mut params = AlignParams::identity(n);
    let mut flat = vec![1.0; 2 * n];
    let mut adam = AdamState::new(2 * n);
    let mut history = Vec::with_capacity(cfg.iterations);
    let (mut value, mut grads) = align_objective(mono, pairs, &params)?;
    for it in 0..cfg.iterations {
        let lr = cfg.lr * cfg.final_lr_ratio.powf(it as f64 / cfg.iterations.max(2).saturating_sub(1) as f64);
        history.push(value);
        let mut grad = vec![0.0; 2 * n];
        for v in 1..n {
            grad[2 * v] = grads[v].iter().zip(&mono[v]).map(|(g, d)| g * (d - means[v])).sum();
            grad[2 * v + 1] = means[v] * grads[v].iter().sum::<f64>();
        }
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite("depth alignment gradient".into()));
        }
        let mut proposal = flat.clone();
        adam.step(&mut proposal, &grad, lr);
        // Adam's momentum overshoots the kinks of the L1 objective; a step is
        // only taken if it does not increase the objective, shortened if needed.
        let mut fraction = 1.0;
        for _ in 0..MAX_STEP_HALVINGS {
            let mut trial_flat: Vec<f64> = flat.iter().zip(&proposal).map(|(a, b)| a + fraction * (b - a)).collect();
            let mut trial = params.clone();
            for v in 1..n {
                let sv = trial_flat[2 * v].max(MIN_SCALE);
                trial_flat[2 * v] = sv;
                trial.scale[v] = sv;
                trial.offset[v] = (trial_flat[2 * v + 1] - sv) * means[v];
            }
            let (tv, tg) = align_objective(mono, pairs, &trial)?;
            if tv <= value {
                flat = trial_flat;
                params = trial;
                value = tv;
                grads = tg;
                break;
            }
            fraction *= 0.5;
        }
    }
    Ok(AlignResult {
        params,
        history,
        warnings,
    })
}

/// Splits a view into `channels` equal-population bins of disparity
/// `1/(1+D)`. Tied values share their mid-rank, so flat regions never straddle
/// a bin boundary. A constant map puts every pixel in channel 0.
pub fn segment_by_depth(depth: &[f64], width: usize, height: usize, channels: usize) -> Result<SegMask> {
    if channels == 0 {
        return Err(Error::invalid("segmentation needs at least one channel"));
    }
    if depth.len() != width * height {
        return Err(Error::invalid("depth size does not match resolution"));
    }
    if depth.iter().any(|d| !d.is_finite()) {
        return Err(Error::data("depth map contains non-finite values"));
    }
    let n = depth.len();
    let disp: Vec<f64> = depth.iter().map(|d| 1.0 / (1.0 + d)).collect();
    let lo = disp.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = disp.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if n == 0 || lo == hi {
        return SegMask::new(channels, width, height, vec![0; n]);
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| disp[a].total_cmp(&disp[b]));
    let mut labels = vec![0u8; n];
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < n && disp[order[end]] == disp[order[start]] {
            end += 1;
        }
        let midrank = (start + end - 1) as f64 / 2.0;
        let bin = ((channels as f64 * (midrank + 0.5) / n as f64).floor() as usize).min(channels - 1);
        for &p in &order[start..end] {
            labels[p] = bin as u8;
        }
        start = end;
    }
    SegMask::new(channels, width, height, labels)
}

/// Initial opacity by number of input views.
pub fn alpha_for_views(views: usize) -> Result<f64> {
    match views {
        0 | 1 => Err(Error::invalid("at least two input views are required")),
        2 => Ok(0.6),
        3 => Ok(0.5),
        _ => Ok(0.35),
    }
}
