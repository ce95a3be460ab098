//! Versioned checkpoint: 8-byte magic, `u32` version, a length-prefixed JSON
//! header holding configuration and small metadata, then length-prefixed
//! little-endian arrays in a fixed order.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{read_file, write_file, ByteReader, ByteWriter};
use crate::autodiff::Tensor;
use crate::decoder::{ConvLayer, DecoderConfig, DecoderParams};
use crate::error::{Error, Result};
use crate::geometry::Camera;
use crate::init::AlignParams;
use crate::optim::{AdamState, TrainConfig};
use crate::pipeline::{LossRecord, SceneBundle, TrainState};
use crate::scene::{PixelGaussianGrid, SegMask};

pub const MAGIC: &[u8; 8] = b"RSPLCKPT";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub bundle: SceneBundle,
    pub state: TrainState,
}

#[derive(Serialize, Deserialize)]
struct GridMeta {
    view_index: usize,
    width: usize,
    height: usize,
    alpha_init: f64,
    frozen_covariance: bool,
    radius_scale: f64,
    seg_channels: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: TrainConfig,
    cameras: Vec<Camera>,
    grids: Vec<GridMeta>,
    align: AlignParams,
    depth_decoder: DecoderConfig,
    opacity_decoder: DecoderConfig,
    depth_gain: f64,
    use_decoder: bool,
    direct_views: usize,
    iteration: usize,
    /// Optimizer groups in storage order with their step counts.
    adam: Vec<(String, u64)>,
    history: Vec<LossRecord>,
}

pub fn encode(ck: &Checkpoint) -> Result<Vec<u8>> {
    let b = &ck.bundle;
    let header = Header {
        config: ck.config.clone(),
        cameras: b.cameras.clone(),
        grids: b
            .grids
            .iter()
            .map(|g| GridMeta {
                view_index: g.view_index,
                width: g.width,
                height: g.height,
                alpha_init: g.alpha_init,
                frozen_covariance: g.frozen_covariance,
                radius_scale: g.radius_scale,
                seg_channels: g.segmask.channels,
            })
            .collect(),
        align: b.align.clone(),
        depth_decoder: b.depth_decoder.config,
        opacity_decoder: b.opacity_decoder.config,
        depth_gain: b.depth_gain,
        use_decoder: b.use_decoder,
        direct_views: b.direct_depth.len(),
        iteration: ck.state.iteration,
        adam: ck.state.adam.iter().map(|(k, s)| (k.clone(), s.t)).collect(),
        history: ck.state.history.clone(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::invalid(format!("checkpoint header: {e}")))?;
    let mut w = ByteWriter::default();
    w.buf.extend_from_slice(MAGIC);
    w.u32(VERSION);
    w.bytes(&json);
    for g in &b.grids {
        w.f64_slice(&g.depth_init);
        w.f64_slice(&g.color);
        w.f64_slice(&g.rotation);
        w.f64_slice(&g.log_scale);
        w.bytes(&g.segmask.labels);
    }
    for d in [&b.depth_decoder, &b.opacity_decoder] {
        for t in d.tensors() {
            w.f64_slice(t.data());
        }
    }
    for v in b.direct_depth.iter().chain(&b.direct_opacity) {
        w.f64_slice(v);
    }
    for s in ck.state.adam.values() {
        w.f64_slice(&s.m);
        w.f64_slice(&s.v);
    }
    Ok(w.buf)
}

fn sized(r: &mut ByteReader<'_>, n: usize, what: &str) -> Result<Vec<f64>> {
    let at = r.offset();
    let v = r.f64_vec(what)?;
    if v.len() != n {
        return Err(Error::format(r.path(), at, format!("{what} of {n} values, found {}", v.len())));
    }
    Ok(v)
}

fn decoder_from(r: &mut ByteReader<'_>, config: DecoderConfig) -> Result<DecoderParams> {
    if config.capacity == 0 || config.capacity > 4096 || config.channels == 0 || config.channels > 256 {
        return Err(r.error("decoder capacity in 1..=4096 and channels in 1..=256"));
    }
    let mut layers = Vec::new();
    for (cin, cout) in config.layer_channels() {
        let k = sized(r, cout * cin * 9, "decoder kernel")?;
        let b = sized(r, cout, "decoder bias")?;
        layers.push(ConvLayer {
            kernel: Tensor::new(vec![cout, cin, 3, 3], k)?,
            bias: Tensor::new(vec![cout], b)?,
        });
    }
    Ok(DecoderParams { config, layers })
}

pub fn parse(path: &Path, bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = ByteReader::new(path, bytes);
    if r.take(8, "checkpoint magic")? != MAGIC {
        return Err(Error::format(path, 0, "checkpoint magic RSPLCKPT"));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::format(path, 8, format!("checkpoint version {VERSION}, found {version}")));
    }
    let at = r.offset();
    let json = r.bytes_vec("header")?;
    let h: Header = serde_json::from_slice(&json).map_err(|e| Error::format(path, at + 8, format!("valid header JSON ({e})")))?;
    if h.cameras.len() != h.grids.len() {
        return Err(Error::format(path, at, "one camera per grid"));
    }
    for c in &h.cameras {
        c.validate().map_err(|e| Error::format(path, at, format!("valid camera ({e})")))?;
    }
    let mut grids = Vec::with_capacity(h.grids.len());
    for m in &h.grids {
        let n = m.width.checked_mul(m.height).filter(|&n| n <= r.remaining()).ok_or_else(|| r.error("grid size that fits the file"))?;
        let depth_init = sized(&mut r, n, "initial depth")?;
        let color = sized(&mut r, 3 * n, "colors")?;
        let rotation = sized(&mut r, 4 * n, "rotations")?;
        let log_scale = sized(&mut r, 3 * n, "log scales")?;
        let at = r.offset();
        let labels = r.bytes_vec("segmentation labels")?;
        let segmask = SegMask::new(m.seg_channels, m.width, m.height, labels).map_err(|e| Error::format(path, at, format!("valid segmentation ({e})")))?;
        grids.push(PixelGaussianGrid {
            view_index: m.view_index,
            width: m.width,
            height: m.height,
            depth_init,
            color,
            rotation,
            log_scale,
            alpha_init: m.alpha_init,
            frozen_covariance: m.frozen_covariance,
            radius_scale: m.radius_scale,
            segmask,
        });
    }
    let depth_decoder = decoder_from(&mut r, h.depth_decoder)?;
    let opacity_decoder = decoder_from(&mut r, h.opacity_decoder)?;
    if h.direct_views != 0 && h.direct_views != grids.len() {
        return Err(r.error("direct residuals for every view or none"));
    }
    let mut direct = Vec::with_capacity(2 * h.direct_views);
    for k in 0..2 * h.direct_views {
        let g = &grids[k % h.direct_views];
        direct.push(sized(&mut r, g.width * g.height, "direct residual")?);
    }
    let direct_opacity = direct.split_off(h.direct_views);
    let mut adam = std::collections::BTreeMap::new();
    for (name, t) in &h.adam {
        let m = r.f64_vec("adam first moment")?;
        let v = sized(&mut r, m.len(), "adam second moment")?;
        adam.insert(name.clone(), AdamState { m, v, t: *t });
    }
    r.finish()?;
    Ok(Checkpoint {
        config: h.config,
        bundle: SceneBundle {
            cameras: h.cameras,
            grids,
            align: h.align,
            depth_decoder,
            opacity_decoder,
            depth_gain: h.depth_gain,
            use_decoder: h.use_decoder,
            direct_depth: direct,
            direct_opacity,
        },
        state: TrainState {
            iteration: h.iteration,
            adam,
            history: h.history,
        },
    })
}

pub fn read(path: &Path) -> Result<Checkpoint> {
    parse(path, &read_file(path)?)
}

pub fn write(path: &Path, ck: &Checkpoint) -> Result<()> {
    write_file(path, &encode(ck)?)
}
