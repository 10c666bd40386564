use std::path::{Path, PathBuf};
use std::time::Duration;

use super::events::{EventKind, ScheduleEvent};
use super::{pretrain_rng, pseudo_truth_seed, EditSession, Hyperparams};
use crate::camera::ViewId;
use crate::error::{Error, Result};
use crate::field::{RadianceField, RaySampler, RenderOptions, TrainConfig, Trainer};
use crate::geometry::{project_bbox, BoundingBox3D};
use crate::raster::Image;
use crate::scene_io::{save_session_checkpoint, DatasetRole, SceneDataset, SessionCheckpoint};
use crate::synth::{
    wait_for_finetune, FineTuneRequest, FineTuneStatus, Prompt, SynthError, SynthesisRequest, Synthesizer,
    DEFAULT_N_BG, DEFAULT_N_OBJ,
};

/// Step-able driver for the dataset-update loop. Each call to
/// [`Editor::advance`] performs one tick: the initial admission, or one
/// training step followed by any replacement and admission burst it
/// triggers.
pub struct Editor<'s> {
    session: EditSession,
    trainer: Trainer,
    synth: &'s dyn Synthesizer,
    events: Vec<ScheduleEvent>,
    checkpoint_dir: Option<PathBuf>,
}

impl<'s> Editor<'s> {
    pub fn new(
        session: EditSession,
        field: RadianceField,
        train: TrainConfig,
        synth: &'s dyn Synthesizer,
    ) -> Result<Self> {
        Self::with_trainer(session, Trainer::new(field, train)?, synth)
    }

    pub fn with_trainer(session: EditSession, trainer: Trainer, synth: &'s dyn Synthesizer) -> Result<Self> {
        Ok(Editor {
            session,
            trainer,
            synth,
            events: Vec::new(),
            checkpoint_dir: None,
        })
    }

    /// Resumes from a checkpoint. `source` must be the dataset the session
    /// was started on.
    pub fn resume(ckpt: SessionCheckpoint, source: SceneDataset, synth: &'s dyn Synthesizer) -> Result<Self> {
        let ids: Vec<ViewId> = source.ids().collect();
        if ids != ckpt.source_ids {
            return Err(Error::Checkpoint(
                "checkpoint was written for a different set of source views".into(),
            ));
        }
        let bbox = BoundingBox3D::try_from(&ckpt.bbox)?;
        let session = EditSession::restore(
            source,
            bbox,
            ckpt.prompt,
            ckpt.hyper,
            ckpt.seed,
            ckpt.progress,
            ckpt.edited,
        )?;
        let trainer = Trainer::with_state(ckpt.field, ckpt.optimizer, ckpt.train)?;
        Ok(Editor {
            session,
            trainer,
            synth,
            events: ckpt.events,
            checkpoint_dir: None,
        })
    }

    /// Where to dump a checkpoint if training hits a non-finite loss.
    pub fn checkpoint_on_failure(mut self, dir: impl Into<PathBuf>) -> Self {
        self.checkpoint_dir = Some(dir.into());
        self
    }

    pub fn session(&self) -> &EditSession {
        &self.session
    }

    pub fn field(&self) -> &RadianceField {
        self.trainer.field()
    }

    pub fn events(&self) -> &[ScheduleEvent] {
        &self.events
    }

    pub fn is_done(&self) -> bool {
        self.session.is_done()
    }

    fn hint_options(&self) -> RenderOptions {
        self.trainer.render_options()
    }

    pub fn checkpoint(&self) -> SessionCheckpoint {
        SessionCheckpoint {
            source_ids: self.session.source().ids().collect(),
            progress: self.session.progress().clone(),
            hyper: *self.session.hyperparams(),
            bbox: self.session.bbox().to_config(),
            prompt: self.session.prompt().clone(),
            seed: self.session.seed(),
            train: *self.trainer.config(),
            field: self.trainer.field().clone(),
            optimizer: self.trainer.state().clone(),
            edited: self.session.edited().clone(),
            events: self.events.clone(),
        }
    }

    pub fn save_checkpoint(&self, dir: &Path) -> Result<()> {
        save_session_checkpoint(&self.checkpoint(), dir)
    }

    fn admit_refined(&mut self, id: ViewId) -> Result<()> {
        let opts = self.hint_options();
        self.session
            .synthesize_refined(self.trainer.field(), self.synth, id, &opts)
    }

    fn train_once(&mut self) -> Result<f64> {
        let session = &self.session;
        let sampler = RaySampler::new(session.used_order().iter().map(|id| {
            let v = session.source().view(*id).expect("admitted views come from the source");
            (&session.edited()[id], v.pose, v.intrinsics)
        }));
        let cfg = *self.trainer.config();
        let mut rng = session.batch_rng();
        let batch = sampler.sample(&mut rng, cfg.rays_per_batch, self.trainer.field(), cfg.near);
        if batch.is_empty() {
            return Ok(0.0);
        }
        match self.trainer.train_step(&batch) {
            Err(Error::NonFiniteLoss { loss, .. }) => {
                let step = self.session.progress().total_steps;
                if let Some(dir) = &self.checkpoint_dir {
                    self.save_checkpoint(dir)?;
                    log::error!(
                        "non-finite loss at step {step}; checkpoint written to {}",
                        dir.display()
                    );
                }
                Err(Error::NonFiniteLoss { step, loss })
            }
            other => other,
        }
    }

    fn finish_if_complete(&mut self) {
        let p = self.session.progress();
        if !p.done && p.remaining.is_empty() && p.steps_since_admission >= self.session.hyperparams().consolidation() {
            let step = p.total_steps;
            self.session.progress_mut().done = true;
            self.events.push(ScheduleEvent::done(step));
        }
    }

    /// Performs one tick. Returns `true` once the session is done.
    pub fn advance(&mut self) -> Result<bool> {
        if self.session.is_done() {
            return Ok(true);
        }
        if self.session.edited().is_empty() {
            let id = self.session.synthesize_initial(self.synth)?;
            self.events.push(ScheduleEvent::view(0, EventKind::Admit, id));
            self.finish_if_complete();
            return Ok(self.session.is_done());
        }

        let loss = self.train_once()?;
        let hyper = *self.session.hyperparams();
        let p = self.session.progress_mut();
        p.total_steps += 1;
        p.steps_since_admission += 1;
        let step = p.total_steps;
        self.events.push(ScheduleEvent::train(step, EventKind::Train, loss));

        if step % hyper.n_old == 0 {
            let id = self.session.next_replacement().expect("edited set is non-empty");
            self.admit_refined(id)?;
            self.session.progress_mut().replace_cursor += 1;
            self.events.push(ScheduleEvent::view(step, EventKind::Replace, id));
        }

        let p = self.session.progress();
        if !p.remaining.is_empty() && p.steps_since_admission >= hyper.n_new {
            let burst = hyper.n_near.min(p.remaining.len());
            for _ in 0..burst {
                let id = self.session.select_next_view()?;
                self.admit_refined(id)?;
                self.events.push(ScheduleEvent::view(step, EventKind::Admit, id));
            }
            self.session.progress_mut().steps_since_admission = 0;
        }
        self.finish_if_complete();
        Ok(self.session.is_done())
    }

    pub fn run(&mut self) -> Result<()> {
        while !self.advance()? {}
        Ok(())
    }

    pub fn into_parts(self) -> (RadianceField, EditSession, Vec<ScheduleEvent>) {
        (self.trainer.into_field(), self.session, self.events)
    }
}

/// Runs the full insertion loop on a field fit to the session's source
/// views.
pub fn run_insertion(
    field: RadianceField,
    session: EditSession,
    synth: &dyn Synthesizer,
    train: &TrainConfig,
) -> Result<(RadianceField, EditSession, Vec<ScheduleEvent>)> {
    let mut editor = Editor::new(session, field, *train, synth)?;
    editor.run()?;
    Ok(editor.into_parts())
}

#[derive(Clone, Debug)]
pub struct RemovalConfig {
    pub hyper: Hyperparams,
    pub train: TrainConfig,
    pub seed: u64,
    /// Background prompt without identifiers, used for the pseudo ground
    /// truth.
    pub plain_prompt: Prompt,
    /// Background prompt with identifiers, used in the update loop.
    pub identifier_prompt: Prompt,
    /// Skip pseudo ground truth, fine-tuning and warm start.
    pub skip_pseudo_truth: bool,
    /// Warm-start steps on the pseudo ground truth; `None` means
    /// `3 * n_new`.
    pub warm_start_steps: Option<u64>,
    pub n_bg: u32,
    pub finetune_poll: Duration,
    pub finetune_max_wait: Duration,
}

impl RemovalConfig {
    pub fn new(plain_prompt: Prompt, identifier_prompt: Prompt) -> Self {
        RemovalConfig {
            hyper: Hyperparams::default(),
            train: TrainConfig::default(),
            seed: 0,
            plain_prompt,
            identifier_prompt,
            skip_pseudo_truth: false,
            warm_start_steps: None,
            n_bg: DEFAULT_N_BG,
            finetune_poll: Duration::from_secs(10),
            finetune_max_wait: Duration::from_secs(6 * 3600),
        }
    }
}

pub struct RemovalOutput {
    pub field: RadianceField,
    pub session: EditSession,
    pub pseudo_truth: Vec<(ViewId, Image)>,
    pub events: Vec<ScheduleEvent>,
}

/// Removes whatever lies in `bbox`: inpaints every view at full strength to
/// get pseudo ground truth, hands it to the synthesizer's fine-tuning,
/// warm-starts the field on it, then runs the same dataset-update loop as
/// insertion with the identifier background prompt.
pub fn run_removal(
    field: RadianceField,
    background: SceneDataset,
    bbox: BoundingBox3D,
    synth: &dyn Synthesizer,
    config: &RemovalConfig,
) -> Result<RemovalOutput> {
    config.hyper.validate()?;
    background.require_training_views()?;
    let mut trainer = Trainer::new(field, config.train)?;
    let mut events = Vec::new();
    let mut pseudo_truth = Vec::new();

    if !config.skip_pseudo_truth {
        for v in &background.views {
            let req = SynthesisRequest {
                image: v.image.clone(),
                mask: project_bbox(&bbox, &v.pose, &v.intrinsics),
                prompt: config.plain_prompt.clone(),
                strength: 1.0,
                seed: pseudo_truth_seed(config.seed, v.id),
                view_id: Some(v.id),
            };
            pseudo_truth.push((v.id, synth.synthesize(&req)?));
        }

        let status = synth.request_finetune(&FineTuneRequest {
            background_views: background.clone(),
            object_views: SceneDataset::empty(DatasetRole::Object),
            n_bg: config.n_bg,
            n_obj: DEFAULT_N_OBJ,
            prompts: vec![config.identifier_prompt.clone()],
            pseudo_ground_truth: pseudo_truth.clone(),
        })?;
        match wait_for_finetune(synth, status, config.finetune_poll, config.finetune_max_wait)? {
            FineTuneStatus::Failed { message } => {
                return Err(SynthError::Rejected {
                    status: 0,
                    body: format!("fine-tuning failed: {message}"),
                }
                .into())
            }
            _ => log::info!(
                "synthesizer fine-tuned on {} pseudo ground-truth views",
                pseudo_truth.len()
            ),
        }

        let sampler = RaySampler::new(pseudo_truth.iter().map(|(id, img)| {
            let v = background
                .view(*id)
                .expect("pseudo truth comes from the background views");
            (img, v.pose, v.intrinsics)
        }));
        let steps = config.warm_start_steps.unwrap_or(3 * config.hyper.n_new);
        for step in 0..steps {
            let mut rng = pretrain_rng(config.seed, step);
            let batch = sampler.sample(
                &mut rng,
                config.train.rays_per_batch,
                trainer.field(),
                config.train.near,
            );
            if batch.is_empty() {
                continue;
            }
            let loss = trainer.train_step(&batch)?;
            events.push(ScheduleEvent::train(step + 1, EventKind::Pretrain, loss));
        }
    }

    let session = EditSession::new(
        background,
        bbox,
        config.identifier_prompt.clone(),
        config.hyper,
        config.seed,
    )?;
    let mut editor = Editor::with_trainer(session, trainer, synth)?;
    editor.run()?;
    let (field, session, loop_events) = editor.into_parts();
    events.extend(loop_events);
    Ok(RemovalOutput {
        field,
        session,
        pseudo_truth,
        events,
    })
}
