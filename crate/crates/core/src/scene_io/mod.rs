//! Multi-view datasets on disk, edit-box configs, session checkpoints, and
//! procedural test scenes.
//!
//! A dataset directory holds `scene.json` plus one PNG per view:
//!
//! ```json
//! {"role": "background",
//!  "views": [{"id": 0, "file": "view_0000.png", "fx": 48, "fy": 48,
//!             "cx": 32, "cy": 32, "w": 64, "h": 64, "c2w": [16 floats, row-major]}]}
//! ```

mod checkpoint;
mod synthetic;

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::camera::{CameraIntrinsics, CameraPose, ViewId};
use crate::error::{Error, Result};
use crate::geometry::{BoundingBox3D, BoxConfig};
use crate::raster::{load_image, save_image, Image};

pub use checkpoint::{load_session_checkpoint, save_session_checkpoint, SessionCheckpoint};
pub use synthetic::{make_synthetic_scene, presets, trace_primitives, Primitive, SceneSpec, SyntheticScene};

pub const MANIFEST_FILE: &str = "scene.json";

#[derive(Clone, Debug, PartialEq)]
pub struct CameraView {
    pub id: ViewId,
    pub image: Image,
    pub pose: CameraPose,
    pub intrinsics: CameraIntrinsics,
}

impl CameraView {
    pub fn validate(&self) -> Result<()> {
        self.intrinsics.validate().map_err(|r| Error::view(self.id, r))?;
        let dims = (self.intrinsics.width as usize, self.intrinsics.height as usize);
        if self.image.dims() != dims {
            return Err(Error::view(
                self.id,
                format!("image is {:?} but intrinsics say {:?}", self.image.dims(), dims),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetRole {
    #[default]
    Background,
    Object,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneDataset {
    pub views: Vec<CameraView>,
    pub role: DatasetRole,
}

impl SceneDataset {
    pub fn new(views: Vec<CameraView>, role: DatasetRole) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for v in &views {
            v.validate()?;
            if !seen.insert(v.id) {
                return Err(Error::view(v.id, "duplicate view id"));
            }
        }
        Ok(SceneDataset { views, role })
    }

    pub fn empty(role: DatasetRole) -> Self {
        SceneDataset {
            views: Vec::new(),
            role,
        }
    }

    pub fn len(&self) -> usize {
        self.views.len()
    }

    pub fn is_empty(&self) -> bool {
        self.views.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ViewId> + '_ {
        self.views.iter().map(|v| v.id)
    }

    pub fn view(&self, id: ViewId) -> Option<&CameraView> {
        self.views.iter().find(|v| v.id == id)
    }

    pub fn require_training_views(&self) -> Result<()> {
        if self.views.len() < 2 {
            return Err(Error::TooFewViews(self.views.len()));
        }
        Ok(())
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    #[serde(default)]
    role: DatasetRole,
    views: Vec<ManifestView>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestView {
    id: u32,
    file: String,
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    w: u32,
    h: u32,
    c2w: Vec<f64>,
}

/// Loads and validates a dataset directory. Views keep manifest order.
pub fn load_dataset(dir: &Path) -> Result<SceneDataset> {
    let manifest_path = dir.join(MANIFEST_FILE);
    if !manifest_path.is_file() {
        return Err(Error::MissingManifest(manifest_path));
    }
    let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let manifest: Manifest = serde_json::from_str(&text)?;
    if manifest.views.len() < 2 {
        return Err(Error::TooFewViews(manifest.views.len()));
    }
    let mut views = Vec::with_capacity(manifest.views.len());
    for mv in manifest.views {
        let id = ViewId(mv.id);
        let pose = CameraPose::from_row_major(&mv.c2w).map_err(|e| Error::view(id, e.to_string()))?;
        let intrinsics = CameraIntrinsics {
            fx: mv.fx,
            fy: mv.fy,
            cx: mv.cx,
            cy: mv.cy,
            width: mv.w,
            height: mv.h,
        };
        let image = load_image(&dir.join(&mv.file)).map_err(|e| Error::view(id, e.to_string()))?;
        views.push(CameraView {
            id,
            image,
            pose,
            intrinsics,
        });
    }
    SceneDataset::new(views, manifest.role)
}

pub fn view_file_name(id: ViewId) -> String {
    format!("view_{:04}.png", id.0)
}

pub fn save_dataset(dataset: &SceneDataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut views = Vec::with_capacity(dataset.views.len());
    for v in &dataset.views {
        let file = view_file_name(v.id);
        save_image(&v.image, &dir.join(&file))?;
        views.push(ManifestView {
            id: v.id.0,
            file,
            fx: v.intrinsics.fx,
            fy: v.intrinsics.fy,
            cx: v.intrinsics.cx,
            cy: v.intrinsics.cy,
            w: v.intrinsics.width,
            h: v.intrinsics.height,
            c2w: v.pose.to_row_major(),
        });
    }
    let manifest = Manifest {
        role: dataset.role,
        views,
    };
    write_json(&dir.join(MANIFEST_FILE), &manifest)
}

pub fn load_box_config(path: &Path) -> Result<BoundingBox3D> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let cfg: BoxConfig = serde_json::from_str(&text)?;
    BoundingBox3D::try_from(&cfg)
}

pub fn save_box_config(bbox: &BoundingBox3D, path: &Path) -> Result<()> {
    write_json(path, &bbox.to_config())
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub(crate) fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}
