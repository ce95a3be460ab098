//! Convolutional decoder mapping a normalized view index to a C-channel
//! residual map at full image resolution.
//!
//! Layout: a `(H/16, W/16)` base grid with three input channels (x coord,
//! y coord, broadcast view index), then four `conv3x3 -> leaky-ReLU(0.2) ->
//! bilinear x2` stages of width `[8c, 4c, 2c, c]`, then a linear `conv3x3` to
//! `C` channels.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::scene::SegMask;

pub const LEAKY_SLOPE: f64 = 0.2;
pub const BASE_DOWNSAMPLE: usize = 16;
pub const KERNEL: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Head {
    Depth,
    Opacity,
}

/// Capacity factor by number of input views.
pub fn capacity_for_views(views: usize, head: Head) -> usize {
    let table = match head {
        Head::Depth => [10, 15, 18],
        Head::Opacity => [6, 10, 12],
    };
    match views {
        0..=2 => table[0],
        3 => table[1],
        _ => table[2],
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecoderConfig {
    pub width: usize,
    pub height: usize,
    pub capacity: usize,
    pub channels: usize,
    pub head: Head,
}

impl DecoderConfig {
    fn validate(&self) -> Result<()> {
        if self.width % BASE_DOWNSAMPLE != 0 || self.height % BASE_DOWNSAMPLE != 0 || self.width == 0 || self.height == 0 {
            return Err(Error::invalid(format!(
                "decoder resolution {}x{} must be a positive multiple of {BASE_DOWNSAMPLE}; pad the images",
                self.width, self.height
            )));
        }
        if self.channels == 0 || self.capacity == 0 {
            return Err(Error::invalid("decoder channels and capacity must be at least 1"));
        }
        Ok(())
    }

    /// `(in, out)` channels of every conv layer.
    pub fn layer_channels(&self) -> Vec<(usize, usize)> {
        let c = self.capacity;
        let widths = [8 * c, 4 * c, 2 * c, c];
        let mut prev = 3;
        let mut out = Vec::new();
        for w in widths {
            out.push((prev, w));
            prev = w;
        }
        out.push((prev, self.channels));
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvLayer {
    pub kernel: Tensor,
    pub bias: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecoderParams {
    pub config: DecoderConfig,
    pub layers: Vec<ConvLayer>,
}

/// Graph handles for one registration of a decoder's parameters.
#[derive(Clone, Debug)]
pub struct DecoderVars {
    pub layers: Vec<(Var, Var)>,
}

pub fn build(config: DecoderConfig, rng: &mut ChaCha8Rng) -> Result<DecoderParams> {
    config.validate()?;
    let layers = config
        .layer_channels()
        .into_iter()
        .map(|(cin, cout)| {
            let bound = 1.0 / ((cin * KERNEL * KERNEL) as f64).sqrt();
            let n = cout * cin * KERNEL * KERNEL;
            let w: Vec<f64> = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
            ConvLayer {
                kernel: Tensor::new(vec![cout, cin, KERNEL, KERNEL], w).expect("kernel shape"),
                bias: Tensor::zeros(vec![cout]),
            }
        })
        .collect();
    Ok(DecoderParams { config, layers })
}

/// Seeded convenience wrapper around [`build`].
pub fn build_seeded(config: DecoderConfig, seed: u64) -> Result<DecoderParams> {
    build(config, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Normalized view index `i/(N-1)`, or 0 for a single view.
pub fn normalized_view_index(view: usize, views: usize) -> f64 {
    if views <= 1 {
        0.0
    } else {
        view as f64 / (views - 1) as f64
    }
}

impl DecoderParams {
    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.kernel.numel() + l.bias.numel()).sum()
    }

    pub fn tensors(&self) -> impl Iterator<Item = &Tensor> {
        self.layers.iter().flat_map(|l| [&l.kernel, &l.bias])
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.layers.iter_mut().flat_map(|l| [&mut l.kernel, &mut l.bias])
    }

    pub fn register(&self, g: &mut Graph) -> DecoderVars {
        DecoderVars {
            layers: self
                .layers
                .iter()
                .map(|l| (g.param(l.kernel.clone()), g.param(l.bias.clone())))
                .collect(),
        }
    }

    /// Registers the weights as constants (no gradients).
    pub fn register_frozen(&self, g: &mut Graph) -> DecoderVars {
        DecoderVars {
            layers: self
                .layers
                .iter()
                .map(|l| (g.constant(l.kernel.clone()), g.constant(l.bias.clone())))
                .collect(),
        }
    }

    /// Forward pass outside of any training graph.
    pub fn decode_values(&self, n: f64) -> Result<Tensor> {
        let mut g = Graph::new();
        let vars = self.register_frozen(&mut g);
        let out = decode(&mut g, &self.config, &vars, n)?;
        Ok(g.value(out).clone())
    }
}

fn base_input(config: &DecoderConfig, n: f64) -> Tensor {
    let bw = config.width / BASE_DOWNSAMPLE;
    let bh = config.height / BASE_DOWNSAMPLE;
    let mut data = vec![0.0; 3 * bw * bh];
    for y in 0..bh {
        for x in 0..bw {
            let p = y * bw + x;
            data[p] = 2.0 * (x as f64 + 0.5) / bw as f64 - 1.0;
            data[bw * bh + p] = 2.0 * (y as f64 + 0.5) / bh as f64 - 1.0;
            data[2 * bw * bh + p] = n;
        }
    }
    Tensor::new(vec![3, bh, bw], data).expect("base shape")
}

/// Decodes view index `n` into a `[C, H, W]` map.
pub fn decode(g: &mut Graph, config: &DecoderConfig, vars: &DecoderVars, n: f64) -> Result<Var> {
    decode_traced(g, config, vars, n).map(|(v, _)| v)
}

/// Like [`decode`], also returning the pre-activation of every hidden layer.
pub fn decode_traced(g: &mut Graph, config: &DecoderConfig, vars: &DecoderVars, n: f64) -> Result<(Var, Vec<Var>)> {
    config.validate()?;
    if vars.layers.len() != config.layer_channels().len() {
        return Err(Error::invalid("decoder variable count does not match its config"));
    }
    let mut h = g.constant(base_input(config, n));
    let mut pre = Vec::new();
    let last = vars.layers.len() - 1;
    for (i, &(k, b)) in vars.layers.iter().enumerate() {
        h = g.conv2d(h, k, b)?;
        if i < last {
            pre.push(h);
            h = g.leaky_relu(h, LEAKY_SLOPE);
            h = g.upsample2x(h)?;
        }
    }
    Ok((h, pre))
}

/// Collapses a `[C, H, W]` residual to `[H, W]` by selecting each pixel's channel.
pub fn apply_mask(g: &mut Graph, residual: Var, mask: &SegMask) -> Result<Var> {
    let shape = g.shape(residual).to_vec();
    let expected = [mask.channels, mask.height, mask.width];
    if shape != expected {
        return Err(Error::Shape {
            op: "apply_mask",
            lhs: shape,
            rhs: expected.to_vec(),
        });
    }
    let m = g.constant(mask.to_dense());
    let masked = g.mul(residual, m)?;
    g.sum(masked, Some(&[0]))
}
