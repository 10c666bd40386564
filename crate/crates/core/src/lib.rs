//! Object insertion and removal in radiance fields by pose-ordered dataset
//! updates.
//!
//! A field is first fit to multi-view photographs of a scene. An edit box
//! marks the region to change; a 2D inpainting synthesizer edits the views
//! one at a time, nearest-pose first, each conditioned on what the field
//! already renders in the box, and the field is retrained on the growing
//! edited set.
//!
//! Modules:
//! - [`scene_io`]: datasets, box configs, checkpoints, procedural scenes
//! - [`geometry`]: edit boxes, image masks, compositing
//! - [`field`]: voxel radiance field, volume rendering, training
//! - [`synth`]: the synthesizer contract and its backends
//! - [`scheduler`]: the dataset-update loop for insertion and removal
//! - [`metrics`]: CLIP-style edit-quality metrics

pub mod camera;
pub mod error;
pub mod field;
pub mod geometry;
pub mod metrics;
pub mod raster;
pub mod scene_io;
pub mod scheduler;
pub mod synth;

pub use camera::{CameraIntrinsics, CameraPose, ViewId};
pub use error::{Error, Result};
pub use field::{GridSpec, RadianceField, RenderOptions, TrainConfig};
pub use geometry::{project_bbox, BoundingBox3D, EditMask};
pub use raster::{Image, Rgb};
pub use scene_io::{CameraView, SceneDataset};
pub use scheduler::{EditSession, Hyperparams, ViewOrder};
pub use synth::{Prompt, SynthError, SynthesisRequest, Synthesizer};
