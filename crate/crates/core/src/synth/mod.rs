//! Image synthesizers: the inpainting model the editing loop calls.
//!
//! Every backend honors the same contract: pixels the mask preserves come
//! back bit-identical, editable pixels are regenerated with a strength
//! `alpha` in `[0, 1]`. At `alpha = 1` the editable content ignores the
//! request's editable pixels; lower strengths keep them as color hints.

mod oracle;
mod remote;
pub mod wire;

use std::collections::BTreeSet;
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::camera::ViewId;
use crate::geometry::{composite, EditMask};
use crate::raster::Image;
use crate::scene_io::SceneDataset;

pub use oracle::{inpaint_rows, OracleContent, OracleSynth};
pub(crate) use remote::HttpClient;
pub use remote::{RemoteConfig, RemoteSynth};

/// Default fine-tuning repetition counts for object and background images.
pub const DEFAULT_N_OBJ: u32 = 5000;
pub const DEFAULT_N_BG: u32 = 500;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synthesis request: {0}")]
    InvalidRequest(String),

    #[error("synthesizer has no camera for view {0}")]
    UnknownView(ViewId),

    #[error("remote synthesizer unreachable: {0}")]
    Unreachable(String),

    #[error("remote synthesizer timed out after {0:?}")]
    Timeout(Duration),

    #[error("remote synthesizer busy (HTTP {status}) after {attempts} attempts; retry in {next_backoff:?}")]
    Retryable {
        status: u16,
        attempts: u32,
        retry_after: Option<Duration>,
        next_backoff: Duration,
    },

    #[error("remote synthesizer rejected request (HTTP {status}): {body}")]
    Rejected { status: u16, body: String },

    #[error("protocol error: {0}")]
    Protocol(String),
}

impl SynthError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, SynthError::Retryable { .. } | SynthError::Timeout(_))
    }
}

/// Text prompt. Tokens starting with `*` are learned identifiers.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prompt {
    text: String,
    identifiers: BTreeSet<String>,
}

impl Prompt {
    pub fn new(text: impl Into<String>) -> Result<Self, SynthError> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(SynthError::InvalidRequest("prompt text is empty".into()));
        }
        let identifiers = text
            .split_whitespace()
            .filter(|t| t.starts_with('*'))
            .map(str::to_string)
            .collect();
        Ok(Prompt { text, identifiers })
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn identifiers(&self) -> &BTreeSet<String> {
        &self.identifiers
    }

    pub fn has_identifiers(&self) -> bool {
        !self.identifiers.is_empty()
    }

    pub fn tokens(&self) -> impl Iterator<Item = &str> {
        self.text.split_whitespace()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthesisRequest {
    /// Composite or source image; its editable pixels are the color hints.
    pub image: Image,
    pub mask: EditMask,
    pub prompt: Prompt,
    /// Denoising strength in `[0, 1]`.
    pub strength: f32,
    pub seed: u64,
    /// Camera the image was taken from, for backends that need geometry.
    pub view_id: Option<ViewId>,
}

impl SynthesisRequest {
    pub fn validate(&self) -> Result<(), SynthError> {
        if !(0.0..=1.0).contains(&self.strength) {
            return Err(SynthError::InvalidRequest(format!(
                "strength {} outside [0, 1]",
                self.strength
            )));
        }
        if self.image.dims() != self.mask.dims() {
            return Err(SynthError::InvalidRequest(format!(
                "image {:?} and mask {:?} differ in size",
                self.image.dims(),
                self.mask.dims()
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FineTuneRequest {
    pub background_views: SceneDataset,
    /// Empty in removal mode.
    pub object_views: SceneDataset,
    pub n_bg: u32,
    pub n_obj: u32,
    pub prompts: Vec<Prompt>,
    /// Per-view inpainted backgrounds used in removal mode.
    pub pseudo_ground_truth: Vec<(ViewId, Image)>,
}

impl FineTuneRequest {
    pub fn validate(&self) -> Result<(), SynthError> {
        if !self.background_views.is_empty() && self.n_bg == 0 {
            return Err(SynthError::InvalidRequest("n_bg must be positive".into()));
        }
        if !self.object_views.is_empty() && self.n_obj == 0 {
            return Err(SynthError::InvalidRequest("n_obj must be positive".into()));
        }
        if self.prompts.is_empty() {
            return Err(SynthError::InvalidRequest(
                "fine-tuning needs at least one prompt".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum FineTuneStatus {
    Ready,
    Pending { job_id: String },
    Running { job_id: String },
    Failed { message: String },
}

pub trait Synthesizer: Send + Sync {
    fn name(&self) -> &str;

    fn synthesize(&self, req: &SynthesisRequest) -> Result<Image, SynthError>;

    /// Local backends accept any well-formed request and are immediately
    /// ready.
    fn request_finetune(&self, req: &FineTuneRequest) -> Result<FineTuneStatus, SynthError> {
        req.validate()?;
        Ok(FineTuneStatus::Ready)
    }

    fn finetune_status(&self, _job_id: &str) -> Result<FineTuneStatus, SynthError> {
        Ok(FineTuneStatus::Ready)
    }
}

/// Resolves a fine-tune status by polling the backend until the job is ready
/// or failed, or `max_wait` elapses.
pub fn wait_for_finetune(
    synth: &dyn Synthesizer,
    status: FineTuneStatus,
    poll: Duration,
    max_wait: Duration,
) -> Result<FineTuneStatus, SynthError> {
    let start = Instant::now();
    let mut status = status;
    loop {
        let job_id = match &status {
            FineTuneStatus::Ready | FineTuneStatus::Failed { .. } => return Ok(status),
            FineTuneStatus::Pending { job_id } | FineTuneStatus::Running { job_id } => job_id.clone(),
        };
        if start.elapsed() >= max_wait {
            return Err(SynthError::Timeout(max_wait));
        }
        thread::sleep(poll);
        status = synth.finetune_status(&job_id)?;
    }
}

/// Copies the preserved pixels of the request back over `output`.
pub(crate) fn restore_preserved(req: &SynthesisRequest, output: &Image) -> Result<Image, SynthError> {
    composite(&req.image, output, &req.mask).map_err(|e| SynthError::Protocol(e.to_string()))
}

/// Returns the request image unchanged.
#[derive(Clone, Copy, Debug, Default)]
pub struct IdentitySynth;

impl Synthesizer for IdentitySynth {
    fn name(&self) -> &str {
        "identity"
    }

    fn synthesize(&self, req: &SynthesisRequest) -> Result<Image, SynthError> {
        req.validate()?;
        Ok(req.image.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prompt_identifiers() {
        let p = Prompt::new("a *ball on a *floor").unwrap();
        assert_eq!(p.identifiers().len(), 2);
        assert!(!Prompt::new("a floor").unwrap().has_identifiers());
        assert!(Prompt::new("   ").is_err());
    }

    #[test]
    fn identity_backend_returns_input() {
        let req = SynthesisRequest {
            image: Image::from_fn(16, 16, |x, y| [x as f32 / 16.0, y as f32 / 16.0, 0.5]),
            mask: EditMask::from_fn(16, 16, |x, _| x < 8),
            prompt: Prompt::new("anything").unwrap(),
            strength: 0.7,
            seed: 4,
            view_id: None,
        };
        assert_eq!(IdentitySynth.synthesize(&req).unwrap(), req.image);
    }

    #[test]
    fn strength_outside_unit_interval_is_invalid() {
        let req = SynthesisRequest {
            image: Image::black(16, 16),
            mask: EditMask::all_editable(16, 16),
            prompt: Prompt::new("x").unwrap(),
            strength: 1.5,
            seed: 0,
            view_id: None,
        };
        assert!(IdentitySynth.synthesize(&req).is_err());
    }

    #[test]
    fn finetune_counts_must_be_positive_for_nonempty_sets() {
        use crate::scene_io::{make_synthetic_scene, presets, DatasetRole};
        let (ds, _) = make_synthetic_scene(&presets::box_room(2, 16, 0)).unwrap();
        let mut req = FineTuneRequest {
            background_views: ds,
            object_views: SceneDataset::empty(DatasetRole::Object),
            n_bg: 0,
            n_obj: 0,
            prompts: vec![Prompt::new("a *room").unwrap()],
            pseudo_ground_truth: Vec::new(),
        };
        assert!(IdentitySynth.request_finetune(&req).is_err());
        req.n_bg = DEFAULT_N_BG;
        assert_eq!(IdentitySynth.request_finetune(&req).unwrap(), FineTuneStatus::Ready);
    }
}
