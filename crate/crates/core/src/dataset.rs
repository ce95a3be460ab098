//! In-memory dataset loaded from a manifest.

use std::path::{Path, PathBuf};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::flow::FlowField;
use crate::geometry::Camera;
use crate::io::json::{read_camera, read_json, Manifest};
use crate::io::{flo, pfm, png};

#[derive(Clone, Debug, PartialEq)]
pub struct InputView {
    /// `[3, H, W]`.
    pub image: Tensor,
    /// Monocular depth, row-major, up to an unknown scale and offset.
    pub depth: Vec<f64>,
    pub camera: Camera,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HeldoutView {
    pub name: String,
    pub image: Tensor,
    pub camera: Camera,
    pub depth: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub views: Vec<InputView>,
    /// `(from, to, flow)` for ordered view pairs.
    pub flows: Vec<(usize, usize, FlowField)>,
    pub heldout: Vec<HeldoutView>,
    pub output: Option<PathBuf>,
}

impl Dataset {
    pub fn cameras(&self) -> Vec<Camera> {
        self.views.iter().map(|v| v.camera.clone()).collect()
    }

    pub fn resolution(&self) -> (usize, usize) {
        self.views.first().map(|v| (v.camera.width, v.camera.height)).unwrap_or((0, 0))
    }

    /// Checks shapes, index ranges, and depth positivity.
    pub fn validate(&self) -> Result<()> {
        let (w, h) = self.resolution();
        for (n, v) in self.views.iter().enumerate() {
            if (v.camera.width, v.camera.height) != (w, h) {
                return Err(Error::data(format!("view {n}: resolution differs from view 0")));
            }
            if v.image.shape() != [3, h, w] {
                return Err(Error::data(format!("view {n}: image is {:?}, camera is {w}x{h}", v.image.shape())));
            }
            if v.depth.len() != w * h {
                return Err(Error::data(format!("view {n}: depth size does not match the camera")));
            }
            if v.depth.iter().any(|d| !(d.is_finite() && *d > 0.0)) {
                return Err(Error::data(format!("view {n}: depth must be finite and positive")));
            }
        }
        for (i, j, f) in &self.flows {
            if *i >= self.views.len() || *j >= self.views.len() || i == j {
                return Err(Error::data(format!("flow {i}->{j} does not name two distinct views")));
            }
            if (f.width, f.height) != (w, h) {
                return Err(Error::data(format!("flow {i}->{j} is {}x{}, views are {w}x{h}", f.width, f.height)));
            }
        }
        for v in &self.heldout {
            if v.image.shape() != [3, v.camera.height, v.camera.width] {
                return Err(Error::data(format!("held-out view {}: image does not match its camera", v.name)));
            }
            if let Some(d) = &v.depth {
                if d.len() != v.camera.width * v.camera.height {
                    return Err(Error::data(format!("held-out view {}: depth does not match its camera", v.name)));
                }
            }
        }
        Ok(())
    }
}

fn resolve(root: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        root.join(p)
    }
}

fn read_depth(path: &Path, camera: &Camera) -> Result<Vec<f64>> {
    let d = pfm::read(path)?;
    if (d.width, d.height) != (camera.width, camera.height) {
        return Err(Error::data(format!(
            "{}: depth is {}x{}, camera is {}x{}",
            path.display(),
            d.width,
            d.height,
            camera.width,
            camera.height
        )));
    }
    Ok(d.data)
}

pub fn load_dataset(manifest_path: &Path) -> Result<Dataset> {
    let manifest: Manifest = read_json(manifest_path)?;
    let root = manifest_path.parent().unwrap_or(Path::new("."));
    let mut views = Vec::with_capacity(manifest.views.len());
    for e in &manifest.views {
        let camera = read_camera(&resolve(root, &e.camera))?;
        let image = png::read(&resolve(root, &e.image))?;
        let depth = read_depth(&resolve(root, &e.depth), &camera)?;
        views.push(InputView { image, depth, camera });
    }
    let mut flows = Vec::with_capacity(manifest.flows.len());
    for e in &manifest.flows {
        flows.push((e.from, e.to, flo::read(&resolve(root, &e.file))?));
    }
    let mut heldout = Vec::with_capacity(manifest.heldout.len());
    for (k, e) in manifest.heldout.iter().enumerate() {
        let camera = read_camera(&resolve(root, &e.camera))?;
        let depth = match &e.depth {
            Some(p) => Some(read_depth(&resolve(root, p), &camera)?),
            None => None,
        };
        let name = e
            .image
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| format!("heldout{k}"));
        heldout.push(HeldoutView {
            name,
            image: png::read(&resolve(root, &e.image))?,
            camera,
            depth,
        });
    }
    let ds = Dataset {
        views,
        flows,
        heldout,
        output: manifest.output.map(|o| resolve(root, &o)),
    };
    ds.validate()?;
    Ok(ds)
}
