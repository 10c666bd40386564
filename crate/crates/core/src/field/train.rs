use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::grad::{loss_and_gradients_into, Gradient, TrainRay};
use super::render::{Jitter, Ray, RenderOptions};
use super::{GridSpec, RadianceField};
use crate::camera::{CameraIntrinsics, CameraPose};
use crate::error::{Error, Result};
use crate::raster::Image;
use crate::scene_io::SceneDataset;

/// Adam moment decay rates and denominator guard.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.99,
            epsilon: 1e-8,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub n_samples_per_ray: usize,
    pub rays_per_batch: usize,
    pub adam: AdamConfig,
    pub seed: u64,
    pub near: f64,
    pub min_transmittance: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-2,
            n_samples_per_ray: 64,
            rays_per_batch: 1024,
            adam: AdamConfig::default(),
            seed: 0,
            near: 0.01,
            min_transmittance: 1e-4,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate >= 0.0
            && self.learning_rate.is_finite()
            && self.n_samples_per_ray >= 2
            && self.rays_per_batch > 0
            && self.adam.beta1 >= 0.0
            && self.adam.beta1 < 1.0
            && self.adam.beta2 >= 0.0
            && self.adam.beta2 < 1.0
            && self.adam.epsilon > 0.0
            && self.near >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid training config {self:?}")))
        }
    }

    pub fn render_options(&self) -> RenderOptions {
        RenderOptions {
            n_samples: self.n_samples_per_ray,
            near: self.near,
            min_transmittance: self.min_transmittance,
            seed: self.seed,
        }
    }
}

/// Adam first and second moments plus the step count used for bias
/// correction.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub step: u64,
    m: Vec<[f64; 4]>,
    v: Vec<[f64; 4]>,
}

impl OptimizerState {
    pub fn new(len: usize) -> Self {
        OptimizerState {
            step: 0,
            m: vec![[0.0; 4]; len],
            v: vec![[0.0; 4]; len],
        }
    }

    pub fn write(&self, w: &mut impl Write) -> std::io::Result<()> {
        w.write_all(&self.step.to_le_bytes())?;
        w.write_all(&(self.m.len() as u64).to_le_bytes())?;
        let mut buf = Vec::with_capacity(self.m.len() * 64);
        for v in self.m.iter().chain(&self.v).flatten() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)
    }

    pub fn read(r: &mut impl Read) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        if bytes.len() < 16 {
            return Err(Error::Checkpoint("truncated optimizer state".into()));
        }
        let word = |i: usize| u64::from_le_bytes(bytes[i * 8..i * 8 + 8].try_into().unwrap());
        let step = word(0);
        let len = word(1) as usize;
        if bytes.len() != 16 + len * 64 {
            return Err(Error::Checkpoint("optimizer state size mismatch".into()));
        }
        let val = |i: usize| f64::from_bits(word(2 + i));
        let read = |offset: usize| -> Vec<[f64; 4]> {
            (0..len)
                .map(|i| std::array::from_fn(|c| val(offset + 4 * i + c)))
                .collect()
        };
        Ok(OptimizerState {
            step,
            m: read(0),
            v: read(4 * len),
        })
    }
}

/// A field together with its optimizer. Parameter updates take `&mut self`,
/// so no render can observe a half-applied step.
#[derive(Clone, Debug)]
pub struct Trainer {
    field: RadianceField,
    state: OptimizerState,
    config: TrainConfig,
    grad: Gradient,
}

impl Trainer {
    pub fn new(field: RadianceField, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let n = field.vertex_count();
        Ok(Trainer {
            field,
            state: OptimizerState::new(n),
            config,
            grad: Gradient::zeros(n),
        })
    }

    pub fn with_state(field: RadianceField, state: OptimizerState, config: TrainConfig) -> Result<Self> {
        if state.m.len() != field.vertex_count() {
            return Err(Error::Checkpoint("optimizer state does not match field size".into()));
        }
        let mut t = Self::new(field, config)?;
        t.state = state;
        Ok(t)
    }

    pub fn field(&self) -> &RadianceField {
        &self.field
    }

    pub fn into_field(self) -> RadianceField {
        self.field
    }

    pub fn state(&self) -> &OptimizerState {
        &self.state
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn render_options(&self) -> RenderOptions {
        self.config.render_options()
    }

    /// One Adam step on the batch loss. Returns the pre-step loss; a
    /// non-finite loss leaves the field untouched.
    pub fn train_step(&mut self, batch: &[TrainRay]) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::Config("empty training batch".into()));
        }
        let opts = self.config.render_options();
        let loss = loss_and_gradients_into(&self.field, batch, &opts, &mut self.grad);
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                step: self.state.step,
                loss,
            });
        }
        self.apply_gradient();
        Ok(loss)
    }

    fn apply_gradient(&mut self) {
        let AdamConfig { beta1, beta2, epsilon } = self.config.adam;
        let lr = self.config.learning_rate;
        self.state.step += 1;
        let t = self.state.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        let params = self.field.raw_mut();
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(self.grad.values())
            .zip(self.state.m.iter_mut())
            .zip(self.state.v.iter_mut())
        {
            for c in 0..4 {
                m[c] = beta1 * m[c] + (1.0 - beta1) * g[c];
                v[c] = beta2 * v[c] + (1.0 - beta2) * g[c] * g[c];
                let step = lr * (m[c] / c1) / ((v[c] / c2).sqrt() + epsilon);
                // Keep parameters f32-representable; see the module docs.
                p[c] = (p[c] - step) as f32 as f64;
            }
        }
    }
}

/// Draws training rays uniformly over every `(view, pixel)` pair of a set of
/// images.
pub struct RaySampler<'a> {
    views: Vec<(&'a Image, CameraPose, CameraIntrinsics)>,
    cumulative: Vec<usize>,
}

impl<'a> RaySampler<'a> {
    pub fn new(views: impl IntoIterator<Item = (&'a Image, CameraPose, CameraIntrinsics)>) -> Self {
        let views: Vec<_> = views.into_iter().collect();
        let mut cumulative = Vec::with_capacity(views.len());
        let mut total = 0;
        for (img, _, _) in &views {
            total += img.width() * img.height();
            cumulative.push(total);
        }
        RaySampler { views, cumulative }
    }

    pub fn from_dataset(dataset: &'a SceneDataset) -> Self {
        Self::new(dataset.views.iter().map(|v| (&v.image, v.pose, v.intrinsics)))
    }

    pub fn total_pixels(&self) -> usize {
        self.cumulative.last().copied().unwrap_or(0)
    }

    /// Samples `n` rays. Rays that miss the field's bounding box are skipped,
    /// so the batch can come back shorter than `n`.
    pub fn sample(&self, rng: &mut impl Rng, n: usize, field: &RadianceField, near: f64) -> Vec<TrainRay> {
        let total = self.total_pixels();
        if total == 0 {
            return Vec::new();
        }
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            let k = rng.random_range(0..total);
            let jitter_seed: u64 = rng.random();
            let v = self.cumulative.partition_point(|&c| c <= k);
            let start = if v == 0 { 0 } else { self.cumulative[v - 1] };
            let (img, pose, intr) = &self.views[v];
            let local = k - start;
            let (x, y) = (local % img.width(), local / img.width());
            let dir = pose.pixel_ray(intr, x, y);
            if let Some(ray) = Ray::clipped(pose.translation(), dir, field.aabb(), near) {
                let t = img.get(x, y);
                out.push(TrainRay {
                    ray,
                    target: [t[0] as f64, t[1] as f64, t[2] as f64],
                    jitter: Jitter::Seeded {
                        seed: jitter_seed,
                        stream: 0,
                    },
                });
            }
        }
        out
    }
}

/// Fits a fresh field to a set of captured views.
pub fn fit_background(
    dataset: &SceneDataset,
    grid: &GridSpec,
    config: &TrainConfig,
    n_iters: usize,
) -> Result<RadianceField> {
    dataset.require_training_views()?;
    let mut trainer = Trainer::new(RadianceField::new(grid)?, *config)?;
    let sampler = RaySampler::from_dataset(dataset);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    for it in 0..n_iters {
        let batch = sampler.sample(&mut rng, config.rays_per_batch, trainer.field(), config.near);
        if batch.is_empty() {
            continue;
        }
        let loss = trainer.train_step(&batch)?;
        if it % 500 == 0 {
            log::debug!("fit iter {it}: loss {loss:.5}");
        }
    }
    Ok(trainer.into_field())
}
