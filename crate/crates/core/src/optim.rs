//! Adam and the training schedule configuration.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::DEFAULT_TAU;
use crate::init::{AlignConfig, DEFAULT_CHANNELS};
use crate::losses::LossWeights;
use crate::raster::{RenderSettings, DEFAULT_OCCLUSION_THRESHOLD};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        AdamState {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    /// One bias-corrected Adam update of `params` in place.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) {
        assert_eq!(params.len(), self.m.len(), "adam state size");
        assert_eq!(grads.len(), self.m.len(), "adam gradient size");
        self.t += 1;
        let c1 = 1.0 - ADAM_BETA1.powi(self.t as i32);
        let c2 = 1.0 - ADAM_BETA2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = ADAM_BETA1 * self.m[i] + (1.0 - ADAM_BETA1) * g;
            self.v[i] = ADAM_BETA2 * self.v[i] + (1.0 - ADAM_BETA2) * g * g;
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= lr * mh / (vh.sqrt() + ADAM_EPS);
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LearningRates {
    pub decoder: f64,
    pub color: f64,
    pub rotation: f64,
    pub log_scale: f64,
    /// Per-pixel residuals used when the decoder is disabled.
    pub direct_residual: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        LearningRates {
            decoder: 1e-4,
            color: 2.5e-3,
            rotation: 1e-3,
            log_scale: 5e-3,
            direct_residual: 1e-3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub align_iters: usize,
    pub align_lr: f64,
    pub total_iters: usize,
    pub phase1_iters: usize,
    /// Uniform divisor applied to `total_iters` and `phase1_iters`.
    pub scale_factor: f64,
    pub lr: LearningRates,
    pub samples_per_pixel: usize,
    pub seed: u64,
    pub weights: LossWeights,
    pub render: RenderSettings,
    pub channels: usize,
    pub tau: f64,
    pub occlusion_threshold: f64,
    /// Residual depth gain as a fraction of the initial scene depth range.
    pub depth_gain_fraction: f64,
    pub radius_scale: f64,
    pub use_decoder: bool,
    pub align: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            align_iters: 1000,
            align_lr: 1e-2,
            total_iters: 13_000,
            phase1_iters: 8_000,
            scale_factor: 1.0,
            lr: LearningRates::default(),
            samples_per_pixel: 4,
            seed: 0,
            weights: LossWeights::default(),
            render: RenderSettings::default(),
            channels: DEFAULT_CHANNELS,
            tau: DEFAULT_TAU,
            occlusion_threshold: DEFAULT_OCCLUSION_THRESHOLD,
            depth_gain_fraction: 0.1,
            radius_scale: 1.0,
            use_decoder: true,
            align: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let lrs = [
            self.lr.decoder,
            self.lr.color,
            self.lr.rotation,
            self.lr.log_scale,
            self.lr.direct_residual,
            self.align_lr,
        ];
        if lrs.iter().any(|&l| !(l > 0.0 && l.is_finite())) {
            return Err(Error::invalid("learning rates must be positive"));
        }
        if self.phase1_iters > self.total_iters {
            return Err(Error::invalid("phase-one iterations exceed the total"));
        }
        if !(self.scale_factor >= 1.0 && self.scale_factor.is_finite()) {
            return Err(Error::invalid(format!("iteration scale must be >= 1, got {}", self.scale_factor)));
        }
        if !matches!(self.samples_per_pixel, 1 | 4) {
            return Err(Error::invalid("samples per pixel must be 1 or 4"));
        }
        if self.channels == 0 || self.channels > 256 {
            return Err(Error::invalid("segmentation channels must be in 1..=256"));
        }
        if !(self.tau > 0.0) {
            return Err(Error::invalid("consistency threshold must be positive"));
        }
        if !(self.occlusion_threshold > 0.0 && self.occlusion_threshold < 1.0) {
            return Err(Error::invalid("occlusion threshold must be in (0, 1)"));
        }
        self.weights.validate()
    }

    pub fn alignment(&self) -> AlignConfig {
        AlignConfig {
            iterations: self.align_iters,
            lr: self.align_lr,
            ..AlignConfig::default()
        }
    }

    /// Regularized iterations after scaling.
    pub fn scaled_total(&self) -> usize {
        (self.total_iters as f64 / self.scale_factor).round() as usize
    }

    /// Frozen-covariance iterations after scaling.
    pub fn scaled_phase1(&self) -> usize {
        ((self.phase1_iters as f64 / self.scale_factor).round() as usize).min(self.scaled_total())
    }

    pub fn phase2_iters(&self) -> usize {
        self.scaled_total() - self.scaled_phase1()
    }
}
