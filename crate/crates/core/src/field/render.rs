//! Emission-absorption quadrature along rays.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{sigmoid, softplus, Aabb, Cell, RadianceField};
use crate::camera::{CameraIntrinsics, CameraPose};
use crate::error::{Error, Result};
use crate::raster::Image;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ray {
    pub origin: Vector3<f64>,
    pub direction: Vector3<f64>,
    pub t_near: f64,
    pub t_far: f64,
}

impl Ray {
    pub fn new(origin: Vector3<f64>, direction: Vector3<f64>, t_near: f64, t_far: f64) -> Result<Self> {
        if (direction.norm() - 1.0).abs() > 1e-6 {
            return Err(Error::Config(format!("ray direction not unit length: {direction:?}")));
        }
        if !(t_near < t_far) {
            return Err(Error::Config(format!("empty ray interval [{t_near}, {t_far}]")));
        }
        Ok(Ray {
            origin,
            direction,
            t_near,
            t_far,
        })
    }

    /// The segment of a unit-direction ray that lies inside `aabb` and beyond
    /// `near`, or `None` when that segment is empty.
    pub fn clipped(origin: Vector3<f64>, direction: Vector3<f64>, aabb: &Aabb, near: f64) -> Option<Self> {
        let (t0, t1) = aabb.intersect(&origin, &direction)?;
        let t_near = t0.max(near);
        (t1 > t_near).then_some(Ray {
            origin,
            direction,
            t_near,
            t_far: t1,
        })
    }

    pub fn at(&self, t: f64) -> [f64; 3] {
        [
            self.origin.x + t * self.direction.x,
            self.origin.y + t * self.direction.y,
            self.origin.z + t * self.direction.z,
        ]
    }
}

/// Placement of each sample within its stratum.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Jitter {
    Midpoint,
    /// Uniform offsets drawn from an independent ChaCha stream.
    Seeded {
        seed: u64,
        stream: u64,
    },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RenderOptions {
    pub n_samples: usize,
    /// Rays start no closer than this to the camera.
    pub near: f64,
    /// Marching stops once transmittance falls below this value; 0 disables
    /// early termination.
    pub min_transmittance: f64,
    pub seed: u64,
}

impl Default for RenderOptions {
    fn default() -> Self {
        RenderOptions {
            n_samples: 64,
            near: 0.01,
            min_transmittance: 1e-4,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RayOutput {
    pub rgb: [f64; 3],
    /// Transmittance left after the last evaluated sample.
    pub transmittance: f64,
    /// Sum of the quadrature weights.
    pub weight_sum: f64,
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct Sample {
    pub cell: Cell,
    pub raw: [f64; 4],
    pub color: [f64; 3],
    pub delta: f64,
    /// Transmittance after this sample.
    pub trans_after: f64,
    pub weight: f64,
}

/// Forward pass. Occupied samples (those inside the grid) are appended to
/// `samples` for use by the backward pass.
pub(crate) fn march(
    field: &RadianceField,
    ray: &Ray,
    n_samples: usize,
    jitter: Jitter,
    min_transmittance: f64,
    samples: &mut Vec<Sample>,
) -> RayOutput {
    samples.clear();
    let n = n_samples.max(2);
    let delta = (ray.t_far - ray.t_near) / n as f64;
    let mut rng = match jitter {
        Jitter::Midpoint => None,
        Jitter::Seeded { seed, stream } => {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            r.set_stream(stream);
            Some(r)
        }
    };
    let mut trans = 1.0f64;
    let mut rgb = [0.0; 3];
    let mut weight_sum = 0.0;
    for i in 0..n {
        let u = rng.as_mut().map_or(0.5, |r| r.random::<f64>());
        let t = ray.t_near + (i as f64 + u) * delta;
        let Some(cell) = field.locate(&ray.at(t)) else {
            continue;
        };
        let raw = field.interpolate(&cell);
        let sigma = softplus(raw[0]);
        let color = [sigmoid(raw[1]), sigmoid(raw[2]), sigmoid(raw[3])];
        let trans_after = trans * (-sigma * delta).exp();
        let weight = trans - trans_after;
        for c in 0..3 {
            rgb[c] += weight * color[c];
        }
        weight_sum += weight;
        trans = trans_after;
        samples.push(Sample {
            cell,
            raw,
            color,
            delta,
            trans_after,
            weight,
        });
        if trans < min_transmittance {
            break;
        }
    }
    let bg = field.background();
    for c in 0..3 {
        rgb[c] += trans * bg[c];
    }
    RayOutput {
        rgb,
        transmittance: trans,
        weight_sum,
    }
}

/// Color seen along `ray`: `Σ wᵢcᵢ + T_final·background` with
/// `wᵢ = Tᵢ(1 − exp(−σᵢδᵢ))` over `n_samples` equal strata of the ray
/// interval.
pub fn render_ray(field: &RadianceField, ray: &Ray, opts: &RenderOptions, jitter: Jitter) -> RayOutput {
    let mut samples = Vec::with_capacity(opts.n_samples);
    march(field, ray, opts.n_samples, jitter, opts.min_transmittance, &mut samples)
}

/// Renders one image. Pixel `i` uses jitter stream `i` of `opts.seed`, so the
/// output depends only on the field, camera, and options.
pub fn render_view(field: &RadianceField, pose: &CameraPose, intr: &CameraIntrinsics, opts: &RenderOptions) -> Image {
    render_view_where(field, pose, intr, opts, |_, _| true)
}

/// Like [`render_view`], but only pixels for which `select(x, y)` holds are
/// marched; the rest are set to the field's background color. Selected
/// pixels are identical to the full render.
pub fn render_view_where(
    field: &RadianceField,
    pose: &CameraPose,
    intr: &CameraIntrinsics,
    opts: &RenderOptions,
    select: impl Fn(usize, usize) -> bool + Sync,
) -> Image {
    let (w, h) = (intr.width as usize, intr.height as usize);
    let rotation = pose.rotation();
    let origin = pose.translation();
    let bg = field.background().map(|c| c as f32);
    let rows: Vec<Vec<[f32; 3]>> = (0..h)
        .into_par_iter()
        .map(|y| {
            let mut samples = Vec::with_capacity(opts.n_samples);
            (0..w)
                .map(|x| {
                    if !select(x, y) {
                        return bg;
                    }
                    let dir = rotation * intr.pixel_direction(x, y);
                    match Ray::clipped(origin, dir, field.aabb(), opts.near) {
                        None => bg,
                        Some(ray) => {
                            let jitter = Jitter::Seeded {
                                seed: opts.seed,
                                stream: (y * w + x) as u64,
                            };
                            let out = march(
                                field,
                                &ray,
                                opts.n_samples,
                                jitter,
                                opts.min_transmittance,
                                &mut samples,
                            );
                            out.rgb.map(|c| c as f32)
                        }
                    }
                })
                .collect()
        })
        .collect();
    Image::from_pixels(w, h, rows.into_iter().flatten().collect()).expect("row lengths match width")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{logit, softplus_inverse, GridSpec};

    fn x_ray(len: f64) -> Ray {
        Ray::new(Vector3::new(-len / 2.0, 0.0, 0.0), Vector3::x(), 0.0, len).unwrap()
    }

    #[test]
    fn empty_field_shows_background() {
        let mut spec = GridSpec::cube(4, 1.0).unwrap();
        spec.init_density_raw = -80.0;
        spec.background = [0.1, 0.2, 0.3];
        let field = RadianceField::new(&spec).unwrap();
        let out = render_ray(&field, &x_ray(2.0), &RenderOptions::default(), Jitter::Midpoint);
        assert!(out.transmittance > 1.0 - 1e-12);
        for c in 0..3 {
            assert!((out.rgb[c] - field.background()[c]).abs() < 1e-12);
        }
    }

    #[test]
    fn homogeneous_slab_matches_beer_lambert() {
        let sigma = 1.3;
        let mut spec = GridSpec::cube(5, 0.5).unwrap();
        spec.init_density_raw = softplus_inverse(sigma) as f32;
        spec.init_color_raw = 0.0;
        spec.background = [1.0, 1.0, 1.0];
        let mut field = RadianceField::new(&spec).unwrap();
        for p in field.raw_mut() {
            p[0] = softplus_inverse(sigma);
            p[1] = logit(0.999);
            p[2] = logit(0.001);
            p[3] = logit(0.001);
        }
        let red = [0.999, 0.001, 0.001];
        let ray = Ray::new(Vector3::new(-2.0, 0.1, 0.0), Vector3::x(), 0.0, 4.0).unwrap();
        let opts = RenderOptions {
            n_samples: 256,
            min_transmittance: 0.0,
            ..Default::default()
        };
        let out = render_ray(&field, &ray, &opts, Jitter::Seeded { seed: 3, stream: 0 });
        let t = (-sigma * 1.0f64).exp();
        for c in 0..3 {
            let want = (1.0 - t) * red[c] + t;
            assert!(
                (out.rgb[c] - want).abs() < 1e-3,
                "channel {c}: {} vs {want}",
                out.rgb[c]
            );
        }
    }

    #[test]
    fn opaque_wall_hides_what_is_behind() {
        let mut spec = GridSpec::cube(9, 1.0).unwrap();
        spec.init_density_raw = -60.0;
        let mut field = RadianceField::new(&spec).unwrap();
        for k in 0..9 {
            for j in 0..9 {
                for i in 0..9 {
                    let idx = field.vertex_index(i, j, k);
                    // The wall color extends into the density ramp in front
                    // of it so the interpolated color there is exact too.
                    if i <= 3 {
                        let density = if i >= 2 { 400.0 } else { -60.0 };
                        field.set_vertex(idx, density, [logit(0.2), logit(0.7), logit(0.4)]);
                    } else if i > 5 {
                        field.set_vertex(idx, 5.0, [4.0, -4.0, 4.0]);
                    }
                }
            }
        }
        let out = render_ray(&field, &x_ray(2.0), &RenderOptions::default(), Jitter::Midpoint);
        for (c, want) in [0.2, 0.7, 0.4].into_iter().enumerate() {
            assert!((out.rgb[c] - want).abs() < 1e-3);
        }
    }

    #[test]
    fn ray_validation() {
        assert!(Ray::new(Vector3::zeros(), Vector3::new(2.0, 0.0, 0.0), 0.0, 1.0).is_err());
        assert!(Ray::new(Vector3::zeros(), Vector3::x(), 1.0, 1.0).is_err());
    }
}
