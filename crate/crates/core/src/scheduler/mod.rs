//! Pose-ordered dataset updates for editing a trained field.
//!
//! The session starts from one randomly chosen view edited at full strength,
//! then repeatedly admits the not-yet-edited views nearest (by camera
//! translation) to those already edited. Each admitted view is synthesized
//! at low strength from a composite: the real photograph outside the edit
//! box and the current field's rendering inside it, so the synthesizer sees
//! the object as the field already knows it. Training runs on the edited set
//! throughout, and old views are periodically re-synthesized so early
//! full-strength outputs are pulled toward the consensus.
//!
//! All randomness is derived statelessly from `(seed, purpose, counter)`, so
//! the session state is just sets and counters and can be checkpointed and
//! resumed without changing the outcome.

mod driver;
mod events;

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::camera::ViewId;
use crate::error::{Error, Result};
use crate::field::{render_view_where, RadianceField, RenderOptions};
use crate::geometry::{composite, pose_translation_distance_sq, project_bbox, BoundingBox3D, EditMask};
use crate::raster::Image;
use crate::scene_io::SceneDataset;
use crate::synth::{Prompt, SynthesisRequest, Synthesizer};

pub use driver::{run_insertion, run_removal, Editor, RemovalConfig, RemovalOutput};
pub use events::{read_event_log, write_event_log, EventKind, ScheduleEvent};

/// Order in which views join the edited set after the first one.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ViewOrder {
    /// Nearest remaining view to the edited set (by camera translation).
    #[default]
    Pose,
    /// Uniformly random remaining view; the ablation baseline.
    Random,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    /// Views admitted per burst.
    pub n_near: usize,
    /// Training steps between bursts.
    pub n_new: u64,
    /// Training steps between replacements.
    pub n_old: u64,
    pub alpha_first: f32,
    pub alpha_refine: f32,
    /// Training steps after the last admission; `None` means `3 * n_new`.
    pub consolidation_steps: Option<u64>,
    pub order: ViewOrder,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            n_near: 3,
            n_new: 500,
            n_old: 10,
            alpha_first: 1.0,
            alpha_refine: 0.35,
            consolidation_steps: None,
            order: ViewOrder::Pose,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        if self.n_near == 0 || self.n_new == 0 || self.n_old == 0 {
            return Err(Error::Config(format!(
                "n_near, n_new and n_old must be at least 1 (got {}, {}, {})",
                self.n_near, self.n_new, self.n_old
            )));
        }
        for (name, a) in [("alpha_first", self.alpha_first), ("alpha_refine", self.alpha_refine)] {
            if !(0.0..=1.0).contains(&a) {
                return Err(Error::Config(format!("{name} must lie in [0, 1], got {a}")));
            }
        }
        Ok(())
    }

    pub fn consolidation(&self) -> u64 {
        self.consolidation_steps.unwrap_or(3 * self.n_new)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
enum Purpose {
    InitialView = 1,
    RandomOrder = 2,
    Batch = 3,
    Synthesis = 4,
    PseudoTruth = 5,
    Pretrain = 6,
}

fn derived_rng(seed: u64, purpose: Purpose, counter: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (purpose as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    rng.set_stream(counter);
    rng
}

/// Counters and sets that fully describe a session's progress.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Progress {
    pub remaining: BTreeSet<ViewId>,
    pub used_order: Vec<ViewId>,
    pub total_steps: u64,
    pub steps_since_admission: u64,
    pub replace_cursor: u64,
    pub synth_calls: u64,
    pub done: bool,
}

#[derive(Clone, Debug)]
pub struct EditSession {
    source: SceneDataset,
    bbox: BoundingBox3D,
    prompt: Prompt,
    hyper: Hyperparams,
    seed: u64,
    masks: BTreeMap<ViewId, EditMask>,
    edited: BTreeMap<ViewId, Image>,
    progress: Progress,
}

impl EditSession {
    pub fn new(
        source: SceneDataset,
        bbox: BoundingBox3D,
        prompt: Prompt,
        hyper: Hyperparams,
        seed: u64,
    ) -> Result<Self> {
        hyper.validate()?;
        if source.is_empty() {
            return Err(Error::TooFewViews(0));
        }
        let masks = source
            .views
            .iter()
            .map(|v| (v.id, project_bbox(&bbox, &v.pose, &v.intrinsics)))
            .collect();
        let progress = Progress {
            remaining: source.ids().collect(),
            used_order: Vec::new(),
            total_steps: 0,
            steps_since_admission: 0,
            replace_cursor: 0,
            synth_calls: 0,
            done: false,
        };
        Ok(EditSession {
            source,
            bbox,
            prompt,
            hyper,
            seed,
            masks,
            edited: BTreeMap::new(),
            progress,
        })
    }

    /// Rebuilds a session from checkpointed progress and edited images.
    pub fn restore(
        source: SceneDataset,
        bbox: BoundingBox3D,
        prompt: Prompt,
        hyper: Hyperparams,
        seed: u64,
        progress: Progress,
        edited: BTreeMap<ViewId, Image>,
    ) -> Result<Self> {
        let mut s = Self::new(source, bbox, prompt, hyper, seed)?;
        s.progress = progress;
        s.edited = edited;
        s.check_invariants().map_err(Error::Checkpoint)?;
        Ok(s)
    }

    pub fn source(&self) -> &SceneDataset {
        &self.source
    }

    pub fn bbox(&self) -> &BoundingBox3D {
        &self.bbox
    }

    pub fn prompt(&self) -> &Prompt {
        &self.prompt
    }

    pub fn hyperparams(&self) -> &Hyperparams {
        &self.hyper
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn progress(&self) -> &Progress {
        &self.progress
    }

    pub fn remaining(&self) -> &BTreeSet<ViewId> {
        &self.progress.remaining
    }

    pub fn edited(&self) -> &BTreeMap<ViewId, Image> {
        &self.edited
    }

    pub fn used_order(&self) -> &[ViewId] {
        &self.progress.used_order
    }

    pub fn is_done(&self) -> bool {
        self.progress.done
    }

    pub fn mask(&self, id: ViewId) -> Result<&EditMask> {
        self.masks.get(&id).ok_or(Error::UnknownView(id))
    }

    fn source_view(&self, id: ViewId) -> Result<&crate::scene_io::CameraView> {
        self.source.view(id).ok_or(Error::UnknownView(id))
    }

    /// Uniformly random view from `remaining`; only valid before the first
    /// admission.
    pub fn select_initial_view(&self) -> Result<ViewId> {
        if !self.edited.is_empty() {
            return Err(Error::Schedule(
                "initial view requested after the first admission".into(),
            ));
        }
        let ids: Vec<ViewId> = self.progress.remaining.iter().copied().collect();
        if ids.is_empty() {
            return Err(Error::Schedule("no views left to admit".into()));
        }
        let mut rng = derived_rng(self.seed, Purpose::InitialView, 0);
        Ok(ids[rng.random_range(0..ids.len())])
    }

    /// Next view to admit. In pose order this is the remaining view whose
    /// nearest edited view is closest, lowest id on ties.
    pub fn select_next_view(&self) -> Result<ViewId> {
        if self.progress.remaining.is_empty() {
            return Err(Error::Schedule("no views left to admit".into()));
        }
        if self.edited.is_empty() {
            return Err(Error::Schedule(
                "next view requested before the initial admission".into(),
            ));
        }
        match self.hyper.order {
            ViewOrder::Random => {
                let ids: Vec<ViewId> = self.progress.remaining.iter().copied().collect();
                let mut rng = derived_rng(self.seed, Purpose::RandomOrder, self.progress.used_order.len() as u64);
                Ok(ids[rng.random_range(0..ids.len())])
            }
            ViewOrder::Pose => {
                let used: Vec<_> = self
                    .progress
                    .used_order
                    .iter()
                    .map(|id| self.source_view(*id).map(|v| v.pose))
                    .collect::<Result<_>>()?;
                let mut best: Option<(f64, ViewId)> = None;
                for &id in &self.progress.remaining {
                    let pose = self.source_view(id)?.pose;
                    let d = used
                        .iter()
                        .map(|u| pose_translation_distance_sq(&pose, u))
                        .fold(f64::INFINITY, f64::min);
                    if best.is_none_or(|(bd, _)| d < bd) {
                        best = Some((d, id));
                    }
                }
                Ok(best.expect("remaining is non-empty").1)
            }
        }
    }

    fn next_synth_seed(&mut self) -> u64 {
        let mut rng = derived_rng(self.seed, Purpose::Synthesis, self.progress.synth_calls);
        self.progress.synth_calls += 1;
        rng.random()
    }

    fn admit(&mut self, id: ViewId, image: Image) -> Result<()> {
        if !self.progress.remaining.remove(&id) {
            return Err(Error::Schedule(format!("view {id} is not awaiting admission")));
        }
        self.edited.insert(id, image);
        self.progress.used_order.push(id);
        Ok(())
    }

    /// Picks the initial view, synthesizes it at `alpha_first` from the
    /// source photograph, and admits it.
    pub fn synthesize_initial(&mut self, synth: &dyn Synthesizer) -> Result<ViewId> {
        let id = self.select_initial_view()?;
        let seed = self.next_synth_seed();
        let req = SynthesisRequest {
            image: self.source_view(id)?.image.clone(),
            mask: self.mask(id)?.clone(),
            prompt: self.prompt.clone(),
            strength: self.hyper.alpha_first,
            seed,
            view_id: Some(id),
        };
        let image = synth.synthesize(&req)?;
        self.admit(id, image)?;
        Ok(id)
    }

    /// Source photograph outside the box, the field's rendering inside it.
    pub fn build_composite(&self, field: &RadianceField, id: ViewId, opts: &RenderOptions) -> Result<Image> {
        let view = self.source_view(id)?;
        let mask = self.mask(id)?;
        let rendered = render_view_where(field, &view.pose, &view.intrinsics, opts, |x, y| {
            !mask.is_preserved(x, y)
        });
        composite(&view.image, &rendered, mask)
    }

    /// Synthesizes `id` at `alpha_refine` from the composite. Admits the view
    /// if it is still remaining, otherwise replaces its edited image.
    pub fn synthesize_refined(
        &mut self,
        field: &RadianceField,
        synth: &dyn Synthesizer,
        id: ViewId,
        opts: &RenderOptions,
    ) -> Result<()> {
        let admitting = self.progress.remaining.contains(&id);
        if !admitting && !self.edited.contains_key(&id) {
            return Err(Error::UnknownView(id));
        }
        let req = SynthesisRequest {
            image: self.build_composite(field, id, opts)?,
            mask: self.mask(id)?.clone(),
            prompt: self.prompt.clone(),
            strength: self.hyper.alpha_refine,
            seed: self.next_synth_seed(),
            view_id: Some(id),
        };
        let image = synth.synthesize(&req)?;
        if admitting {
            self.admit(id, image)
        } else {
            self.edited.insert(id, image);
            Ok(())
        }
    }

    /// Next view to re-synthesize: round-robin over admission order.
    pub fn next_replacement(&self) -> Option<ViewId> {
        let order = &self.progress.used_order;
        if order.is_empty() {
            return None;
        }
        Some(order[(self.progress.replace_cursor % order.len() as u64) as usize])
    }

    pub(crate) fn progress_mut(&mut self) -> &mut Progress {
        &mut self.progress
    }

    pub(crate) fn batch_rng(&self) -> ChaCha8Rng {
        derived_rng(self.seed, Purpose::Batch, self.progress.total_steps)
    }

    /// Structural invariants; returns a description of the first violation.
    pub fn check_invariants(&self) -> std::result::Result<(), String> {
        let all: BTreeSet<ViewId> = self.source.ids().collect();
        let edited: BTreeSet<ViewId> = self.edited.keys().copied().collect();
        if let Some(id) = self.progress.remaining.intersection(&edited).next() {
            return Err(format!("view {id} is both remaining and edited"));
        }
        let union: BTreeSet<ViewId> = self.progress.remaining.union(&edited).copied().collect();
        if union != all {
            return Err("remaining and edited do not partition the source views".into());
        }
        let used: BTreeSet<ViewId> = self.progress.used_order.iter().copied().collect();
        if used.len() != self.progress.used_order.len() {
            return Err("admission order has duplicates".into());
        }
        if used != edited {
            return Err("admission order does not match the edited set".into());
        }
        for (id, img) in &self.edited {
            let v = self.source_view(*id).map_err(|e| e.to_string())?;
            if img.dims() != v.image.dims() {
                return Err(format!("edited view {id} has the wrong size"));
            }
        }
        Ok(())
    }
}

pub(crate) fn pretrain_rng(seed: u64, step: u64) -> ChaCha8Rng {
    derived_rng(seed, Purpose::Pretrain, step)
}

pub(crate) fn pseudo_truth_seed(seed: u64, id: ViewId) -> u64 {
    derived_rng(seed, Purpose::PseudoTruth, id.0 as u64).random()
}
