//! Edit boxes, their per-view projection masks, and mask compositing.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use nalgebra::{Matrix3, Rotation3, Vector3};
use serde::{Deserialize, Serialize};

use crate::camera::{CameraIntrinsics, CameraPose};
use crate::error::{Error, Result};
use crate::raster::Image;

/// Near clipping plane (camera-frame depth) used when projecting boxes.
pub const NEAR_PLANE: f64 = 1e-3;

/// Oriented 3D box in world units. `rotation` maps box-local axes to world axes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundingBox3D {
    center: Vector3<f64>,
    half_extents: Vector3<f64>,
    rotation: Matrix3<f64>,
}

impl BoundingBox3D {
    pub fn new(center: Vector3<f64>, half_extents: Vector3<f64>, rotation: Matrix3<f64>) -> Result<Self> {
        if half_extents.iter().any(|h| !(*h > 0.0) || !h.is_finite()) {
            return Err(Error::Config(format!(
                "box half extents must be positive, got {half_extents:?}"
            )));
        }
        let dev = (rotation.transpose() * rotation - Matrix3::identity()).amax();
        if dev > 1e-6 || (rotation.determinant() - 1.0).abs() > 1e-6 {
            return Err(Error::Config("box rotation is not a proper rotation".into()));
        }
        Ok(BoundingBox3D {
            center,
            half_extents,
            rotation,
        })
    }

    pub fn axis_aligned(center: Vector3<f64>, half_extents: Vector3<f64>) -> Result<Self> {
        Self::new(center, half_extents, Matrix3::identity())
    }

    pub fn center(&self) -> Vector3<f64> {
        self.center
    }

    pub fn half_extents(&self) -> Vector3<f64> {
        self.half_extents
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        self.rotation
    }

    pub fn corners(&self) -> [Vector3<f64>; 8] {
        std::array::from_fn(|i| {
            let s = Vector3::new(
                if i & 1 == 0 { -1.0 } else { 1.0 },
                if i & 2 == 0 { -1.0 } else { 1.0 },
                if i & 4 == 0 { -1.0 } else { 1.0 },
            );
            self.center + self.rotation * self.half_extents.component_mul(&s)
        })
    }

    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        let local = self.rotation.transpose() * (p - self.center);
        (0..3).all(|i| local[i].abs() <= self.half_extents[i])
    }

    pub fn to_config(&self) -> BoxConfig {
        let axis_angle = Rotation3::from_matrix_unchecked(self.rotation).scaled_axis();
        BoxConfig {
            center: self.center.into(),
            half_extents: self.half_extents.into(),
            rotation_axis_angle: axis_angle.into(),
        }
    }
}

/// JSON form of an edit box: `{center, half_extents, rotation_axis_angle}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxConfig {
    pub center: [f64; 3],
    pub half_extents: [f64; 3],
    #[serde(default)]
    pub rotation_axis_angle: [f64; 3],
}

impl TryFrom<&BoxConfig> for BoundingBox3D {
    type Error = Error;

    fn try_from(cfg: &BoxConfig) -> Result<Self> {
        let rot = Rotation3::from_scaled_axis(Vector3::from(cfg.rotation_axis_angle));
        BoundingBox3D::new(
            Vector3::from(cfg.center),
            Vector3::from(cfg.half_extents),
            *rot.matrix(),
        )
    }
}

/// Per-pixel edit mask. `true` marks a preserved background pixel, `false`
/// marks an editable pixel inside the projected box.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EditMask {
    width: usize,
    height: usize,
    preserve: Vec<bool>,
}

impl EditMask {
    pub fn all_preserved(width: usize, height: usize) -> Self {
        EditMask {
            width,
            height,
            preserve: vec![true; width * height],
        }
    }

    pub fn all_editable(width: usize, height: usize) -> Self {
        EditMask {
            width,
            height,
            preserve: vec![false; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut preserved: impl FnMut(usize, usize) -> bool) -> Self {
        let mut preserve = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                preserve.push(preserved(x, y));
            }
        }
        EditMask {
            width,
            height,
            preserve,
        }
    }

    pub fn from_values(width: usize, height: usize, preserve: Vec<bool>) -> Result<Self> {
        if preserve.len() != width * height {
            return Err(Error::DimensionMismatch(format!(
                "mask has {} values for {width}x{height}",
                preserve.len()
            )));
        }
        Ok(EditMask {
            width,
            height,
            preserve,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn values(&self) -> &[bool] {
        &self.preserve
    }

    pub fn is_preserved(&self, x: usize, y: usize) -> bool {
        self.preserve[y * self.width + x]
    }

    pub fn is_preserved_index(&self, i: usize) -> bool {
        self.preserve[i]
    }

    pub fn complement(&self) -> Self {
        EditMask {
            width: self.width,
            height: self.height,
            preserve: self.preserve.iter().map(|p| !p).collect(),
        }
    }

    pub fn editable_count(&self) -> usize {
        self.preserve.iter().filter(|p| !**p).count()
    }

    /// Writes a 1-bit grayscale PNG; bit value 1 = preserved.
    pub fn save_png(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut encoder = png::Encoder::new(BufWriter::new(file), self.width as u32, self.height as u32);
        encoder.set_color(png::ColorType::Grayscale);
        encoder.set_depth(png::BitDepth::One);
        let mut writer = encoder
            .write_header()
            .map_err(|e| Error::Checkpoint(format!("mask png: {e}")))?;
        writer
            .write_image_data(&self.packed_rows())
            .map_err(|e| Error::Checkpoint(format!("mask png: {e}")))?;
        Ok(())
    }

    pub(crate) fn packed_rows(&self) -> Vec<u8> {
        let stride = self.width.div_ceil(8);
        let mut data = vec![0u8; stride * self.height];
        for y in 0..self.height {
            for x in 0..self.width {
                if self.is_preserved(x, y) {
                    data[y * stride + x / 8] |= 0x80 >> (x % 8);
                }
            }
        }
        data
    }
}

/// Mask of a box seen from a camera: editable pixels are those whose centers
/// fall inside the convex hull of the box's projection, after clipping the
/// box against the near plane.
pub fn project_bbox(bbox: &BoundingBox3D, pose: &CameraPose, intr: &CameraIntrinsics) -> EditMask {
    let (w, h) = (intr.width as usize, intr.height as usize);
    if bbox.contains(&pose.translation()) {
        return EditMask::all_editable(w, h);
    }

    let cam: Vec<Vector3<f64>> = bbox.corners().iter().map(|c| pose.world_to_camera(c)).collect();
    let mut pts: Vec<(f64, f64)> = Vec::with_capacity(20);
    for c in &cam {
        if c.z >= NEAR_PLANE {
            pts.push(intr.project(c));
        }
    }
    // Edges join corners whose indices differ in exactly one bit.
    for a in 0..8usize {
        for bit in [1usize, 2, 4] {
            let b = a | bit;
            if b == a {
                continue;
            }
            let (pa, pb) = (cam[a], cam[b]);
            if (pa.z < NEAR_PLANE) != (pb.z < NEAR_PLANE) {
                let t = (NEAR_PLANE - pa.z) / (pb.z - pa.z);
                let mut p = pa + (pb - pa) * t;
                p.z = NEAR_PLANE;
                pts.push(intr.project(&p));
            }
        }
    }

    let hull = convex_hull(pts);
    if hull.len() < 3 {
        return EditMask::all_preserved(w, h);
    }

    let (mut xmin, mut xmax, mut ymin, mut ymax) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for &(x, y) in &hull {
        xmin = xmin.min(x);
        xmax = xmax.max(x);
        ymin = ymin.min(y);
        ymax = ymax.max(y);
    }
    let x0 = (xmin - 0.5).floor().clamp(0.0, w as f64) as usize;
    let x1 = (xmax - 0.5).ceil().clamp(0.0, w as f64 - 1.0) as usize;
    let y0 = (ymin - 0.5).floor().clamp(0.0, h as f64) as usize;
    let y1 = (ymax - 0.5).ceil().clamp(0.0, h as f64 - 1.0) as usize;

    let mut mask = EditMask::all_preserved(w, h);
    for y in y0..=y1.min(h.saturating_sub(1)) {
        for x in x0..=x1.min(w.saturating_sub(1)) {
            if point_in_convex(&hull, (x as f64 + 0.5, y as f64 + 0.5)) {
                mask.preserve[y * w + x] = false;
            }
        }
    }
    mask
}

fn cross(o: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
}

/// Andrew's monotone chain; returns the hull counter-clockwise without
/// repeating the first point.
fn convex_hull(mut pts: Vec<(f64, f64)>) -> Vec<(f64, f64)> {
    pts.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let mut hull: Vec<(f64, f64)> = Vec::with_capacity(pts.len() * 2);
    for &p in &pts {
        while hull.len() >= 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
            hull.pop();
        }
        hull.push(p);
    }
    let lower_len = hull.len() + 1;
    for &p in pts.iter().rev().skip(1) {
        while hull.len() >= lower_len && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
            hull.pop();
        }
        hull.push(p);
    }
    hull.pop();
    hull
}

fn point_in_convex(hull: &[(f64, f64)], p: (f64, f64)) -> bool {
    let n = hull.len();
    (0..n).all(|i| cross(hull[i], hull[(i + 1) % n], p) >= 0.0)
}

/// Squared distance between the camera centers of two poses. Rotation does
/// not participate.
pub fn pose_translation_distance_sq(a: &CameraPose, b: &CameraPose) -> f64 {
    (a.translation() - b.translation()).norm_squared()
}

/// Point minimizing the summed squared distance to every camera's optical
/// axis, i.e. where the cameras are looking. `None` if the axes are all
/// parallel.
pub fn focus_point(poses: &[CameraPose]) -> Option<Vector3<f64>> {
    let mut a = Matrix3::zeros();
    let mut b = Vector3::zeros();
    for pose in poses {
        let d = pose.rotation().column(2).into_owned();
        let proj = Matrix3::identity() - d * d.transpose();
        a += proj;
        b += proj * pose.translation();
    }
    // Parallel axes leave `a` singular (rank 2).
    if a.symmetric_eigen().eigenvalues.min() <= 1e-9 * poses.len() as f64 {
        return None;
    }
    Some(a.try_inverse()? * b)
}

/// `n` cameras evenly spaced on a horizontal (world y-up) circle around the
/// focus point of `poses`, at their mean radius and height, all looking at
/// the focus point.
pub fn orbit_around_focus(poses: &[CameraPose], n: usize) -> Result<Vec<CameraPose>> {
    if n == 0 {
        return Err(Error::Config("orbit needs at least one frame".into()));
    }
    let focus = focus_point(poses).ok_or_else(|| Error::Config("camera axes have no common focus".into()))?;
    let offsets: Vec<Vector3<f64>> = poses.iter().map(|p| p.translation() - focus).collect();
    let m = offsets.len() as f64;
    let radius = offsets.iter().map(|o| o.x.hypot(o.z)).sum::<f64>() / m;
    let height = offsets.iter().map(|o| o.y).sum::<f64>() / m;
    if radius <= 1e-9 {
        return Err(Error::Config("cameras have no horizontal spread to orbit".into()));
    }
    let start = offsets[0].z.atan2(offsets[0].x);
    (0..n)
        .map(|i| {
            let a = start + std::f64::consts::TAU * i as f64 / n as f64;
            let eye = focus + Vector3::new(radius * a.cos(), height, radius * a.sin());
            CameraPose::look_at(eye, focus, Vector3::y())
        })
        .collect()
}

/// Takes `background` where the mask preserves and `rendered` where it is
/// editable.
pub fn composite(background: &Image, rendered: &Image, mask: &EditMask) -> Result<Image> {
    if background.dims() != rendered.dims() || background.dims() != mask.dims() {
        return Err(Error::DimensionMismatch(format!(
            "composite of background {:?}, render {:?}, mask {:?}",
            background.dims(),
            rendered.dims(),
            mask.dims()
        )));
    }
    let pixels = background
        .pixels()
        .iter()
        .zip(rendered.pixels())
        .zip(mask.values())
        .map(|((b, r), keep)| if *keep { *b } else { *r })
        .collect();
    Image::from_pixels(background.width(), background.height(), pixels)
}
