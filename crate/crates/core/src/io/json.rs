//! Camera and dataset manifest JSON.

use std::path::{Path, PathBuf};

use serde::{de::DeserializeOwned, Deserialize, Serialize};

use super::{read_file, write_file};
use crate::error::{Error, Result};
use crate::geometry::Camera;

/// On-disk camera: intrinsics plus a row-major 3x4 world-to-camera matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraJson {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    pub world_to_cam: [f64; 12],
}

impl CameraJson {
    pub fn from_camera(c: &Camera) -> Self {
        let r = &c.rotation;
        let t = &c.translation;
        CameraJson {
            fx: c.fx,
            fy: c.fy,
            cx: c.cx,
            cy: c.cy,
            width: c.width,
            height: c.height,
            world_to_cam: [
                r[0][0], r[0][1], r[0][2], t[0], r[1][0], r[1][1], r[1][2], t[1], r[2][0], r[2][1], r[2][2], t[2],
            ],
        }
    }

    pub fn to_camera(&self) -> Result<Camera> {
        let m = &self.world_to_cam;
        let rotation = [[m[0], m[1], m[2]], [m[4], m[5], m[6]], [m[8], m[9], m[10]]];
        Camera::new(
            self.fx,
            self.fy,
            self.cx,
            self.cy,
            self.width,
            self.height,
            rotation,
            [m[3], m[7], m[11]],
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ViewEntry {
    pub image: PathBuf,
    pub depth: PathBuf,
    pub camera: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowEntry {
    pub from: usize,
    pub to: usize,
    pub file: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeldoutEntry {
    pub image: PathBuf,
    pub camera: PathBuf,
    /// Ground-truth planar depth, when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depth: Option<PathBuf>,
}

/// Dataset description. Relative paths resolve against the manifest's folder.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub views: Vec<ViewEntry>,
    #[serde(default)]
    pub flows: Vec<FlowEntry>,
    #[serde(default)]
    pub heldout: Vec<HeldoutEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = read_file(path)?;
    serde_json::from_slice(&bytes).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })?;
    s.push('\n');
    write_file(path, s.as_bytes())
}

pub fn read_camera(path: &Path) -> Result<Camera> {
    let c: CameraJson = read_json(path)?;
    c.to_camera().map_err(|e| Error::data(format!("{}: {e}", path.display())))
}

pub fn write_camera(path: &Path, camera: &Camera) -> Result<()> {
    write_json(path, &CameraJson::from_camera(camera))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn camera_round_trip() {
        let c = Camera::looking_forward(60.0, 61.0, 32, 16, [0.5, -0.25, 1.0]);
        let j = CameraJson::from_camera(&c);
        let text = serde_json::to_string(&j).unwrap();
        let back: CameraJson = serde_json::from_str(&text).unwrap();
        assert_eq!(back.to_camera().unwrap(), c);
    }

    #[test]
    fn rejects_improper_rotation() {
        let mut j = CameraJson::from_camera(&Camera::looking_forward(10.0, 10.0, 4, 4, [0.0; 3]));
        j.world_to_cam[0] = -1.0;
        assert!(j.to_camera().is_err());
    }
}
