//! Photometric loss and its analytic gradient with respect to every raw
//! grid parameter.

use rayon::prelude::*;

use super::render::{march, Jitter, Ray, RenderOptions, Sample};
use super::{sigmoid, RadianceField};

/// Rays per work unit. Fixed so that the reduction order, and therefore the
/// floating-point result, does not depend on the number of worker threads.
const CHUNK_RAYS: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainRay {
    pub ray: Ray,
    pub target: [f64; 3],
    pub jitter: Jitter,
}

/// Dense gradient laid out like [`RadianceField::raw`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradient {
    data: Vec<[f64; 4]>,
}

impl Gradient {
    pub fn zeros(len: usize) -> Self {
        Gradient {
            data: vec![[0.0; 4]; len],
        }
    }

    pub fn values(&self) -> &[[f64; 4]] {
        &self.data
    }

    pub(crate) fn reset(&mut self, len: usize) {
        if self.data.len() != len {
            self.data = vec![[0.0; 4]; len];
        } else {
            self.data.fill([0.0; 4]);
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

struct SampleGrad {
    base: u32,
    frac: [f64; 3],
    grad: [f64; 4],
}

fn backward_ray(
    field: &RadianceField,
    samples: &[Sample],
    final_trans: f64,
    dl_drgb: [f64; 3],
    out: &mut Vec<SampleGrad>,
) {
    let bg = field.background();
    let dot = |c: &[f64; 3]| dl_drgb[0] * c[0] + dl_drgb[1] * c[1] + dl_drgb[2] * c[2];
    // Radiance (projected on dL/dC) arriving from everything past sample i.
    let mut behind = final_trans * dot(&bg);
    for s in samples.iter().rev() {
        let dl_dsigma = s.delta * (s.trans_after * dot(&s.color) - behind);
        behind += s.weight * dot(&s.color);
        let mut g = [dl_dsigma * sigmoid(s.raw[0]), 0.0, 0.0, 0.0];
        for c in 0..3 {
            g[c + 1] = s.weight * dl_drgb[c] * s.color[c] * (1.0 - s.color[c]);
        }
        if g.iter().all(|v| *v == 0.0) {
            continue;
        }
        out.push(SampleGrad {
            base: s.cell.base as u32,
            frac: s.cell.frac,
            grad: g,
        });
    }
}

/// Mean over the batch of the squared RGB error, and its gradient, written
/// into `grad`.
pub(crate) fn loss_and_gradients_into(
    field: &RadianceField,
    batch: &[TrainRay],
    opts: &RenderOptions,
    grad: &mut Gradient,
) -> f64 {
    grad.reset(field.vertex_count());
    if batch.is_empty() {
        return 0.0;
    }
    let inv_n = 1.0 / batch.len() as f64;
    let partials: Vec<(f64, Vec<SampleGrad>)> = batch
        .par_chunks(CHUNK_RAYS)
        .map(|chunk| {
            let mut samples = Vec::with_capacity(opts.n_samples);
            let mut records = Vec::with_capacity(chunk.len() * opts.n_samples / 2);
            let mut loss = 0.0;
            for tr in chunk {
                let out = march(
                    field,
                    &tr.ray,
                    opts.n_samples,
                    tr.jitter,
                    opts.min_transmittance,
                    &mut samples,
                );
                let mut dl = [0.0; 3];
                for c in 0..3 {
                    let e = out.rgb[c] - tr.target[c];
                    loss += e * e;
                    dl[c] = 2.0 * e * inv_n;
                }
                backward_ray(field, &samples, out.transmittance, dl, &mut records);
            }
            (loss, records)
        })
        .collect();

    let offsets = *field.offsets();
    let mut loss = 0.0;
    for (chunk_loss, records) in partials {
        loss += chunk_loss;
        for r in records {
            let cell = super::Cell {
                base: r.base as usize,
                frac: r.frac,
            };
            for (o, w) in offsets.iter().zip(cell.weights()) {
                let slot = &mut grad.data[cell.base + o];
                for c in 0..4 {
                    slot[c] += w * r.grad[c];
                }
            }
        }
    }
    loss * inv_n
}

/// Mean over the batch of the squared RGB error between rendered and target
/// colors, with its analytic gradient through the quadrature, the
/// activations, and the trilinear weights.
pub fn loss_and_gradients(field: &RadianceField, batch: &[TrainRay], opts: &RenderOptions) -> (f64, Gradient) {
    let mut grad = Gradient::zeros(field.vertex_count());
    let loss = loss_and_gradients_into(field, batch, opts, &mut grad);
    (loss, grad)
}
