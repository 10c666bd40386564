//! Procedural stand-in for a fine-tuned inpainting model.
//!
//! The oracle knows the true 3D content of the edit region, so its
//! full-strength output is exactly what a perfect model would paint. Partial
//! strengths blend toward that ideal from the request's hint pixels, and an
//! optional per-call color offset with standard deviation `jitter * alpha`
//! mimics sample-to-sample variation of a diffusion model: full-strength
//! calls wander the most, low-strength calls stay close to their hints.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{restore_preserved, SynthError, SynthesisRequest, Synthesizer};
use crate::camera::{CameraIntrinsics, CameraPose, ViewId};
use crate::geometry::EditMask;
use crate::raster::{Image, Rgb};
use crate::scene_io::{trace_primitives, Primitive, SceneDataset, SyntheticScene};

#[derive(Clone, Debug)]
pub enum OracleContent {
    /// Objects rendered over a border-interpolated fill of the edit region.
    ObjectOverInpaint(Vec<Primitive>),
    /// Ground-truth scene rendered inside the edit region (for example the
    /// empty room, to act as a perfect inpainter).
    Scene(SyntheticScene),
}

#[derive(Clone, Debug)]
pub struct OracleSynth {
    cameras: BTreeMap<ViewId, (CameraPose, CameraIntrinsics)>,
    content: OracleContent,
    jitter: f32,
    name: String,
}

impl OracleSynth {
    pub fn new(
        cameras: impl IntoIterator<Item = (ViewId, CameraPose, CameraIntrinsics)>,
        content: OracleContent,
        jitter: f32,
    ) -> Result<Self, SynthError> {
        if !(jitter >= 0.0 && jitter.is_finite()) {
            return Err(SynthError::InvalidRequest(format!(
                "jitter must be non-negative, got {jitter}"
            )));
        }
        let name = if jitter == 0.0 {
            "oracle-exact".to_string()
        } else {
            format!("oracle-noisy({jitter})")
        };
        Ok(OracleSynth {
            cameras: cameras.into_iter().map(|(id, p, i)| (id, (p, i))).collect(),
            content,
            jitter,
            name,
        })
    }

    pub fn for_dataset(dataset: &SceneDataset, content: OracleContent, jitter: f32) -> Result<Self, SynthError> {
        Self::new(
            dataset.views.iter().map(|v| (v.id, v.pose, v.intrinsics)),
            content,
            jitter,
        )
    }

    pub fn jitter(&self) -> f32 {
        self.jitter
    }

    /// Full-strength, noise-free output for a request: the input outside the
    /// mask and the oracle's content inside it.
    pub fn ideal(&self, req: &SynthesisRequest) -> Result<Image, SynthError> {
        req.validate()?;
        let id = req
            .view_id
            .ok_or_else(|| SynthError::InvalidRequest("oracle synthesis needs a view id".into()))?;
        let (pose, intr) = self.cameras.get(&id).ok_or(SynthError::UnknownView(id))?;
        if (intr.width as usize, intr.height as usize) != req.image.dims() {
            return Err(SynthError::InvalidRequest(format!(
                "view {id} is {}x{} but the request image is {:?}",
                intr.width,
                intr.height,
                req.image.dims()
            )));
        }
        let rot = pose.rotation();
        let origin = pose.translation();
        let mut out = match &self.content {
            OracleContent::ObjectOverInpaint(_) => inpaint_rows(&req.image, &req.mask),
            OracleContent::Scene(_) => req.image.clone(),
        };
        let (w, h) = out.dims();
        for y in 0..h {
            for x in 0..w {
                if req.mask.is_preserved(x, y) {
                    continue;
                }
                let dir = rot * intr.pixel_direction(x, y);
                let rgb = match &self.content {
                    OracleContent::ObjectOverInpaint(prims) => match trace_primitives(prims, &origin, &dir) {
                        Some((_, c)) => c,
                        None => continue,
                    },
                    OracleContent::Scene(scene) => scene.trace(&origin, &dir),
                };
                out.set(x, y, rgb.map(|c| c as f32));
            }
        }
        Ok(out)
    }
}

impl Synthesizer for OracleSynth {
    fn name(&self) -> &str {
        &self.name
    }

    fn synthesize(&self, req: &SynthesisRequest) -> Result<Image, SynthError> {
        let ideal = self.ideal(req)?;
        let alpha = req.strength;
        let offset: [f32; 3] = if self.jitter > 0.0 && alpha > 0.0 {
            let normal =
                Normal::new(0.0f32, self.jitter * alpha).map_err(|e| SynthError::InvalidRequest(e.to_string()))?;
            let mut rng = ChaCha8Rng::seed_from_u64(req.seed);
            std::array::from_fn(|_| normal.sample(&mut rng))
        } else {
            [0.0; 3]
        };
        let mut out = req.image.clone();
        for ((o, hint), ideal) in out
            .pixels_mut()
            .iter_mut()
            .zip(req.image.pixels())
            .zip(ideal.pixels())
            .zip(req.mask.values())
            .filter(|(_, keep)| !**keep)
            .map(|(p, _)| p)
        {
            for c in 0..3 {
                let target = ideal[c] + offset[c];
                // hint + α·(target − hint) is a fixed point when target == hint.
                let v = if alpha >= 1.0 {
                    target
                } else {
                    hint[c] + alpha * (target - hint[c])
                };
                o[c] = v.clamp(0.0, 1.0);
            }
        }
        restore_preserved(req, &out)
    }
}

/// Fills every editable run of each row by linear interpolation between the
/// preserved pixels on either side. Runs touching the image border copy the
/// single neighbor; rows with no preserved pixel take the mean preserved
/// color (mid-gray if nothing is preserved).
pub fn inpaint_rows(image: &Image, mask: &EditMask) -> Image {
    let (w, h) = image.dims();
    let mut out = image.clone();
    let mut fallback = [0.0f64; 3];
    let mut n_keep = 0usize;
    for (p, keep) in image.pixels().iter().zip(mask.values()) {
        if *keep {
            for c in 0..3 {
                fallback[c] += p[c] as f64;
            }
            n_keep += 1;
        }
    }
    let fallback: Rgb = if n_keep == 0 {
        [0.5; 3]
    } else {
        fallback.map(|v| (v / n_keep as f64) as f32)
    };

    for y in 0..h {
        let mut x = 0;
        while x < w {
            if mask.is_preserved(x, y) {
                x += 1;
                continue;
            }
            let start = x;
            while x < w && !mask.is_preserved(x, y) {
                x += 1;
            }
            let end = x; // exclusive
            let left = (start > 0).then(|| image.get(start - 1, y));
            let right = (end < w).then(|| image.get(end, y));
            for xi in start..end {
                let rgb = match (left, right) {
                    (Some(l), Some(r)) => {
                        let t = (xi + 1 - start) as f32 / (end - start + 1) as f32;
                        std::array::from_fn(|c| l[c] + t * (r[c] - l[c]))
                    }
                    (Some(l), None) => l,
                    (None, Some(r)) => r,
                    (None, None) => fallback,
                };
                out.set(xi, y, rgb);
            }
        }
    }
    out
}
