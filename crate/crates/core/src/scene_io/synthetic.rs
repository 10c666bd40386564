//! Procedural box-room scenes with an exact ray-traced renderer.
//!
//! The room is an axis-aligned box seen from the inside; each wall has its
//! own color modulated by a gentle in-plane gradient. Primitives (spheres and
//! cuboids) are Lambertian under a fixed directional light. Cameras sit on an
//! inward-facing orbit, so adjacent views are close together.

use std::f64::consts::TAU;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{CameraView, DatasetRole, SceneDataset};
use crate::camera::{CameraIntrinsics, CameraPose, ViewId};
use crate::error::{Error, Result};
use crate::geometry::BoundingBox3D;
use crate::raster::Image;

const LIGHT_DIR: [f64; 3] = [0.3, 0.9, 0.3];
const AMBIENT: f64 = 0.35;
const ORBIT_WOBBLE: f64 = 0.05;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Primitive {
    Sphere {
        center: [f64; 3],
        radius: f64,
        color: [f64; 3],
    },
    Cuboid {
        center: [f64; 3],
        half_extents: [f64; 3],
        color: [f64; 3],
    },
}

impl Primitive {
    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        match self {
            Primitive::Sphere { center, radius, .. } => (p - Vector3::from(*center)).norm() <= *radius,
            Primitive::Cuboid {
                center, half_extents, ..
            } => (0..3).all(|i| (p[i] - center[i]).abs() <= half_extents[i]),
        }
    }

    pub fn center(&self) -> Vector3<f64> {
        match self {
            Primitive::Sphere { center, .. } | Primitive::Cuboid { center, .. } => Vector3::from(*center),
        }
    }

    /// Nearest positive hit distance and outward normal.
    fn intersect(&self, o: &Vector3<f64>, d: &Vector3<f64>) -> Option<(f64, Vector3<f64>)> {
        match self {
            Primitive::Sphere { center, radius, .. } => {
                let c = Vector3::from(*center);
                let oc = o - c;
                let b = oc.dot(d);
                let disc = b * b - (oc.norm_squared() - radius * radius);
                if disc < 0.0 {
                    return None;
                }
                let s = disc.sqrt();
                let t = if -b - s > 1e-9 { -b - s } else { -b + s };
                (t > 1e-9).then(|| (t, (o + d * t - c) / *radius))
            }
            Primitive::Cuboid {
                center, half_extents, ..
            } => {
                let mut t0 = f64::NEG_INFINITY;
                let mut t1 = f64::INFINITY;
                let mut axis0 = 0;
                let mut axis1 = 0;
                for i in 0..3 {
                    let (lo, hi) = (center[i] - half_extents[i], center[i] + half_extents[i]);
                    if d[i].abs() < 1e-15 {
                        if o[i] < lo || o[i] > hi {
                            return None;
                        }
                        continue;
                    }
                    let (mut a, mut b) = ((lo - o[i]) / d[i], (hi - o[i]) / d[i]);
                    if a > b {
                        std::mem::swap(&mut a, &mut b);
                    }
                    if a > t0 {
                        t0 = a;
                        axis0 = i;
                    }
                    if b < t1 {
                        t1 = b;
                        axis1 = i;
                    }
                }
                if t0 > t1 || t1 <= 1e-9 {
                    return None;
                }
                let (t, axis) = if t0 > 1e-9 { (t0, axis0) } else { (t1, axis1) };
                let mut n = Vector3::zeros();
                let p = o + d * t;
                n[axis] = (p[axis] - center[axis]).signum();
                Some((t, n))
            }
        }
    }

    fn color(&self) -> [f64; 3] {
        match self {
            Primitive::Sphere { color, .. } | Primitive::Cuboid { color, .. } => *color,
        }
    }
}

/// Nearest primitive hit along a unit-direction ray: distance and shaded
/// color.
pub fn trace_primitives(prims: &[Primitive], o: &Vector3<f64>, d: &Vector3<f64>) -> Option<(f64, [f64; 3])> {
    let light = Vector3::from(LIGHT_DIR).normalize();
    let mut best: Option<(f64, [f64; 3])> = None;
    for p in prims {
        if let Some((t, n)) = p.intersect(o, d) {
            if best.is_none_or(|(bt, _)| t < bt) {
                let shade = AMBIENT + (1.0 - AMBIENT) * n.dot(&light).max(0.0);
                best = Some((t, p.color().map(|c| c * shade)));
            }
        }
    }
    best
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub room_half_extents: [f64; 3],
    /// Wall colors in the order -x, +x, -y (floor), +y (ceiling), -z, +z.
    pub wall_colors: [[f64; 3]; 6],
    pub objects: Vec<Primitive>,
    pub n_views: usize,
    pub orbit_radius: f64,
    pub orbit_height: f64,
    pub look_at: [f64; 3],
    pub focal: f64,
    pub width: u32,
    pub height: u32,
    pub seed: u64,
}

/// Ground-truth renderer for a [`SceneSpec`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticScene {
    pub spec: SceneSpec,
    phase: f64,
    wobble_phase: f64,
}

impl SyntheticScene {
    fn new(spec: SceneSpec) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let phase = rng.random::<f64>() * TAU;
        let wobble_phase = rng.random::<f64>() * TAU;
        SyntheticScene {
            spec,
            phase,
            wobble_phase,
        }
    }

    pub fn intrinsics(&self) -> CameraIntrinsics {
        CameraIntrinsics::centered(self.spec.focal, self.spec.width, self.spec.height)
    }

    /// Camera center at fractional orbit position `s` (view `i` sits at
    /// `s = i`).
    pub fn orbit_center(&self, s: f64) -> Vector3<f64> {
        let theta = self.phase + TAU * s / self.spec.n_views as f64;
        Vector3::new(
            self.spec.orbit_radius * theta.cos(),
            self.spec.orbit_height + ORBIT_WOBBLE * (2.0 * theta + self.wobble_phase).sin(),
            self.spec.orbit_radius * theta.sin(),
        )
    }

    pub fn orbit_pose(&self, s: f64) -> Result<CameraPose> {
        CameraPose::look_at(self.orbit_center(s), Vector3::from(self.spec.look_at), Vector3::y())
    }

    fn wall_hit(&self, o: &Vector3<f64>, d: &Vector3<f64>) -> (f64, [f64; 3]) {
        let r = self.spec.room_half_extents;
        let mut best = (f64::INFINITY, 0usize);
        for i in 0..3 {
            if d[i].abs() < 1e-15 {
                continue;
            }
            let (t, face) = if d[i] > 0.0 {
                ((r[i] - o[i]) / d[i], 2 * i + 1)
            } else {
                ((-r[i] - o[i]) / d[i], 2 * i)
            };
            if t < best.0 {
                best = (t, face);
            }
        }
        let (t, face) = best;
        let p = o + d * t;
        // In-plane coordinates of the hit, normalized to the wall size.
        let axis = face / 2;
        let (a, b) = ((axis + 1) % 3, (axis + 2) % 3);
        let (u, v) = (p[a] / r[a], p[b] / r[b]);
        let g = 0.85 + 0.15 * (1.3 * u + 0.9 * v + face as f64).sin();
        (t, self.spec.wall_colors[face].map(|c| (c * g).clamp(0.0, 1.0)))
    }

    /// Color seen along a unit-direction ray starting inside the room.
    pub fn trace(&self, o: &Vector3<f64>, d: &Vector3<f64>) -> [f64; 3] {
        let (tw, wall) = self.wall_hit(o, d);
        match trace_primitives(&self.spec.objects, o, d) {
            Some((t, c)) if t < tw => c,
            _ => wall,
        }
    }

    pub fn render(&self, pose: &CameraPose, intr: &CameraIntrinsics) -> Image {
        let rot = pose.rotation();
        let o = pose.translation();
        Image::from_fn(intr.width as usize, intr.height as usize, |x, y| {
            let d = rot * intr.pixel_direction(x, y);
            self.trace(&o, &d).map(|c| c as f32)
        })
    }

    /// The same room without any primitive whose center lies in `bbox`.
    pub fn without_objects_in(&self, bbox: &BoundingBox3D) -> Self {
        let mut out = self.clone();
        out.spec.objects.retain(|p| !bbox.contains(&p.center()));
        out
    }

    pub fn with_objects(&self, extra: &[Primitive]) -> Self {
        let mut out = self.clone();
        out.spec.objects.extend_from_slice(extra);
        out
    }

    fn check_camera(&self, i: usize, c: &Vector3<f64>) -> Result<()> {
        let r = self.spec.room_half_extents;
        let outside_room = (0..3).any(|a| c[a].abs() >= r[a]);
        if outside_room || self.spec.objects.iter().any(|p| p.contains(c)) {
            return Err(Error::CameraInsideGeometry(i));
        }
        Ok(())
    }
}

/// Renders an orbit dataset of a procedural room. Deterministic in `spec`.
pub fn make_synthetic_scene(spec: &SceneSpec) -> Result<(SceneDataset, SyntheticScene)> {
    if spec.n_views < 2 {
        return Err(Error::TooFewViews(spec.n_views));
    }
    let scene = SyntheticScene::new(spec.clone());
    let intr = scene.intrinsics();
    intr.validate().map_err(Error::Config)?;
    let mut views = Vec::with_capacity(spec.n_views);
    for i in 0..spec.n_views {
        let pose = scene.orbit_pose(i as f64)?;
        scene.check_camera(i, &pose.translation())?;
        views.push(CameraView {
            id: ViewId(i as u32),
            image: scene.render(&pose, &intr),
            pose,
            intrinsics: intr,
        });
    }
    Ok((SceneDataset::new(views, DatasetRole::Background)?, scene))
}

/// Ready-made scenes, boxes, and objects used by the tests and the CLI.
pub mod presets {
    use super::*;

    pub const WALL_COLORS: [[f64; 3]; 6] = [
        [0.78, 0.36, 0.30],
        [0.30, 0.55, 0.78],
        [0.58, 0.52, 0.42],
        [0.90, 0.88, 0.82],
        [0.38, 0.68, 0.40],
        [0.82, 0.74, 0.34],
    ];

    /// Cabinet in a corner; never inside the edit box.
    pub fn furniture() -> Primitive {
        Primitive::Cuboid {
            center: [1.35, -1.6, -1.35],
            half_extents: [0.3, 0.4, 0.3],
            color: [0.35, 0.3, 0.6],
        }
    }

    /// Colored-wall box room of half-size 2 with one cabinet, orbited at
    /// radius 1.5.
    pub fn box_room(n_views: usize, size: u32, seed: u64) -> SceneSpec {
        SceneSpec {
            room_half_extents: [2.0; 3],
            wall_colors: WALL_COLORS,
            objects: vec![furniture()],
            n_views,
            orbit_radius: 1.5,
            orbit_height: 0.2,
            look_at: [0.0, -1.2, 0.0],
            focal: 0.75 * size as f64,
            width: size,
            height: size,
            seed,
        }
    }

    /// Edit region on the floor at the room center.
    pub fn edit_box() -> BoundingBox3D {
        BoundingBox3D::axis_aligned(Vector3::new(0.0, -1.55, 0.0), Vector3::repeat(0.45)).expect("valid preset box")
    }

    /// Red ball resting on the floor inside [`edit_box`].
    pub fn inserted_object() -> Vec<Primitive> {
        vec![Primitive::Sphere {
            center: [0.0, -1.62, 0.0],
            radius: 0.38,
            color: [0.9, 0.15, 0.1],
        }]
    }

    /// Teal crate inside [`edit_box`], present in removal scenes.
    pub fn removable_object() -> Primitive {
        Primitive::Cuboid {
            center: [0.0, -1.72, 0.0],
            half_extents: [0.28, 0.28, 0.28],
            color: [0.1, 0.65, 0.6],
        }
    }

    pub fn box_room_with_object(n_views: usize, size: u32, seed: u64) -> SceneSpec {
        let mut spec = box_room(n_views, size, seed);
        spec.objects.push(removable_object());
        spec
    }
}
