//! Dense voxel radiance field with trilinear interpolation.
//!
//! Each grid vertex carries four raw (pre-activation) values: density and
//! RGB. Queries interpolate the raw values and then apply `softplus` to the
//! density and `sigmoid` to the color, so every activated value satisfies its
//! range constraint no matter what the optimizer does to the raw parameters.
//!
//! Raw parameters are always kept exactly representable as `f32` so that the
//! on-disk checkpoint (32-bit floats) round-trips without loss.

mod grad;
mod render;
mod train;

use std::io::{Read, Write};

use nalgebra::Vector3;

use crate::error::{Error, Result};

pub use grad::{loss_and_gradients, Gradient, TrainRay};
pub use render::{render_ray, render_view, render_view_where, Jitter, Ray, RayOutput, RenderOptions};
pub use train::{fit_background, AdamConfig, OptimizerState, RaySampler, TrainConfig, Trainer};

pub(crate) const CHECKPOINT_MAGIC: &[u8; 4] = b"FSRF";
pub(crate) const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Aabb {
    pub min: Vector3<f64>,
    pub max: Vector3<f64>,
}

impl Aabb {
    pub fn new(min: Vector3<f64>, max: Vector3<f64>) -> Result<Self> {
        if (0..3).any(|i| !(max[i] > min[i])) {
            return Err(Error::Config(format!("degenerate aabb {min:?}..{max:?}")));
        }
        Ok(Aabb { min, max })
    }

    pub fn cube(half: f64) -> Result<Self> {
        Self::new(Vector3::repeat(-half), Vector3::repeat(half))
    }

    pub fn size(&self) -> Vector3<f64> {
        self.max - self.min
    }

    /// Slab test; returns the parametric entry and exit distances when the
    /// line intersects the box.
    pub fn intersect(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<(f64, f64)> {
        let mut t0 = f64::NEG_INFINITY;
        let mut t1 = f64::INFINITY;
        for i in 0..3 {
            if dir[i].abs() < 1e-15 {
                if origin[i] < self.min[i] || origin[i] > self.max[i] {
                    return None;
                }
                continue;
            }
            let inv = 1.0 / dir[i];
            let (mut a, mut b) = ((self.min[i] - origin[i]) * inv, (self.max[i] - origin[i]) * inv);
            if a > b {
                std::mem::swap(&mut a, &mut b);
            }
            t0 = t0.max(a);
            t1 = t1.min(b);
        }
        (t0 <= t1).then_some((t0, t1))
    }
}

/// Grid shape and initialization used to create a fresh field.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridSpec {
    pub resolution: [usize; 3],
    pub aabb: Aabb,
    pub init_density_raw: f32,
    pub init_color_raw: f32,
    pub background: [f64; 3],
}

impl GridSpec {
    pub fn cube(res: usize, half: f64) -> Result<Self> {
        Ok(GridSpec {
            resolution: [res; 3],
            aabb: Aabb::cube(half)?,
            init_density_raw: -1.0,
            init_color_raw: 0.0,
            background: [0.0; 3],
        })
    }
}

#[inline]
fn to_f32(x: f64) -> f64 {
    x as f32 as f64
}

#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Raw value whose softplus is `y`.
pub fn softplus_inverse(y: f64) -> f64 {
    if y > 30.0 {
        y
    } else {
        y.exp_m1().ln()
    }
}

pub fn logit(y: f64) -> f64 {
    (y / (1.0 - y)).ln()
}

/// Enclosing cell of a point: index of its lowest vertex and the fractional
/// position inside the cell.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Cell {
    pub base: usize,
    pub frac: [f64; 3],
}

impl Cell {
    #[inline]
    pub fn weights(&self) -> [f64; 8] {
        let [fx, fy, fz] = self.frac;
        let (gx, gy, gz) = (1.0 - fx, 1.0 - fy, 1.0 - fz);
        [
            gx * gy * gz,
            fx * gy * gz,
            gx * fy * gz,
            fx * fy * gz,
            gx * gy * fz,
            fx * gy * fz,
            gx * fy * fz,
            fx * fy * fz,
        ]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RadianceField {
    resolution: [usize; 3],
    aabb: Aabb,
    params: Vec<[f64; 4]>,
    background: [f64; 3],
    offsets: [usize; 8],
}

impl RadianceField {
    pub fn new(spec: &GridSpec) -> Result<Self> {
        if spec.resolution.iter().any(|&n| n < 2) {
            return Err(Error::Config(format!(
                "grid resolution must be at least 2 per axis, got {:?}",
                spec.resolution
            )));
        }
        let n: usize = spec.resolution.iter().product();
        let d = spec.init_density_raw as f64;
        let c = spec.init_color_raw as f64;
        Ok(Self::from_parts(
            spec.resolution,
            spec.aabb,
            vec![[d, c, c, c]; n],
            spec.background,
        ))
    }

    // Everything is kept f32-representable so checkpoints round-trip exactly.
    fn from_parts(resolution: [usize; 3], aabb: Aabb, params: Vec<[f64; 4]>, background: [f64; 3]) -> Self {
        let aabb = Aabb {
            min: aabb.min.map(to_f32),
            max: aabb.max.map(to_f32),
        };
        let background = background.map(to_f32);
        let params = params.into_iter().map(|p| p.map(to_f32)).collect();
        let [nx, ny, _] = resolution;
        let sxy = nx * ny;
        RadianceField {
            resolution,
            aabb,
            params,
            background,
            offsets: [0, 1, nx, nx + 1, sxy, sxy + 1, sxy + nx, sxy + nx + 1],
        }
    }

    pub fn resolution(&self) -> [usize; 3] {
        self.resolution
    }

    pub fn aabb(&self) -> &Aabb {
        &self.aabb
    }

    pub fn background(&self) -> [f64; 3] {
        self.background
    }

    pub fn set_background(&mut self, rgb: [f64; 3]) {
        self.background = rgb.map(to_f32);
    }

    pub fn vertex_count(&self) -> usize {
        self.params.len()
    }

    pub fn vertex_index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.resolution[0] * (j + self.resolution[1] * k)
    }

    pub fn vertex_position(&self, i: usize, j: usize, k: usize) -> Vector3<f64> {
        let s = self.aabb.size();
        let r = self.resolution;
        Vector3::new(
            self.aabb.min.x + s.x * i as f64 / (r[0] - 1) as f64,
            self.aabb.min.y + s.y * j as f64 / (r[1] - 1) as f64,
            self.aabb.min.z + s.z * k as f64 / (r[2] - 1) as f64,
        )
    }

    /// Raw `[density, r, g, b]` of every vertex, x fastest.
    pub fn raw(&self) -> &[[f64; 4]] {
        &self.params
    }

    /// Raw parameters for direct manipulation. Values written here should be
    /// `f32`-representable if the field is going to be checkpointed.
    pub fn raw_mut(&mut self) -> &mut [[f64; 4]] {
        &mut self.params
    }

    pub fn set_vertex(&mut self, index: usize, density_raw: f64, color_raw: [f64; 3]) {
        self.params[index] = [density_raw, color_raw[0], color_raw[1], color_raw[2]].map(to_f32);
    }

    #[inline]
    pub(crate) fn offsets(&self) -> &[usize; 8] {
        &self.offsets
    }

    #[inline]
    pub(crate) fn locate(&self, p: &[f64; 3]) -> Option<Cell> {
        let mut idx = [0usize; 3];
        let mut frac = [0.0; 3];
        for a in 0..3 {
            let n = self.resolution[a];
            let u = (p[a] - self.aabb.min[a]) / (self.aabb.max[a] - self.aabb.min[a]) * (n - 1) as f64;
            if !(u >= 0.0 && u <= (n - 1) as f64) {
                return None;
            }
            let i = (u.floor() as usize).min(n - 2);
            idx[a] = i;
            frac[a] = u - i as f64;
        }
        Some(Cell {
            base: self.vertex_index(idx[0], idx[1], idx[2]),
            frac,
        })
    }

    #[inline]
    pub(crate) fn interpolate(&self, cell: &Cell) -> [f64; 4] {
        let w = cell.weights();
        let mut acc = [0.0; 4];
        for (o, wi) in self.offsets.iter().zip(w) {
            let v = &self.params[cell.base + o];
            acc[0] += wi * v[0];
            acc[1] += wi * v[1];
            acc[2] += wi * v[2];
            acc[3] += wi * v[3];
        }
        acc
    }

    /// Activated density and color at a world point. Points outside the
    /// bounding box are empty and take the background color.
    pub fn query(&self, point: &Vector3<f64>) -> (f64, [f64; 3]) {
        match self.locate(&[point.x, point.y, point.z]) {
            None => (0.0, self.background),
            Some(cell) => {
                let raw = self.interpolate(&cell);
                (softplus(raw[0]), [sigmoid(raw[1]), sigmoid(raw[2]), sigmoid(raw[3])])
            }
        }
    }

    /// Binary checkpoint: magic, version, resolution, aabb, background, then
    /// raw density and raw RGB arrays, all little-endian 32-bit.
    pub fn write_checkpoint(&self, w: &mut impl Write) -> std::io::Result<()> {
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        for n in self.resolution {
            w.write_all(&(n as u32).to_le_bytes())?;
        }
        for v in self
            .aabb
            .min
            .iter()
            .chain(self.aabb.max.iter())
            .chain(self.background.iter())
        {
            w.write_all(&(*v as f32).to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(self.params.len() * 16);
        for p in &self.params {
            buf.extend_from_slice(&(p[0] as f32).to_le_bytes());
        }
        for p in &self.params {
            for c in &p[1..] {
                buf.extend_from_slice(&(*c as f32).to_le_bytes());
            }
        }
        w.write_all(&buf)
    }

    pub fn to_checkpoint_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_checkpoint(&mut out).expect("writing to a Vec cannot fail");
        out
    }

    pub fn read_checkpoint(r: &mut impl Read) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        let mut cur = bytes.as_slice();
        let mut take = |n: usize| -> Result<&[u8]> {
            if cur.len() < n {
                return Err(bad("truncated field checkpoint"));
            }
            let (head, tail) = cur.split_at(n);
            cur = tail;
            Ok(head)
        };
        if take(4)? != CHECKPOINT_MAGIC {
            return Err(bad("not a field checkpoint"));
        }
        let version = u32::from_le_bytes(take(4)?.try_into().unwrap());
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported field checkpoint version {version}"
            )));
        }
        let mut resolution = [0usize; 3];
        for n in &mut resolution {
            *n = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
        }
        if resolution.iter().any(|&n| n < 2) {
            return Err(bad("invalid resolution"));
        }
        let mut header = [0f64; 9];
        for v in &mut header {
            *v = f32::from_le_bytes(take(4)?.try_into().unwrap()) as f64;
        }
        let aabb = Aabb::new(
            Vector3::new(header[0], header[1], header[2]),
            Vector3::new(header[3], header[4], header[5]),
        )?;
        let n: usize = resolution.iter().product();
        let density = take(n * 4)?;
        let color = take(n * 12)?;
        let f = |b: &[u8], i: usize| f32::from_le_bytes(b[i * 4..i * 4 + 4].try_into().unwrap()) as f64;
        let params = (0..n)
            .map(|i| [f(density, i), f(color, 3 * i), f(color, 3 * i + 1), f(color, 3 * i + 2)])
            .collect();
        Ok(Self::from_parts(
            resolution,
            aabb,
            params,
            [header[6], header[7], header[8]],
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_field() -> RadianceField {
        let mut spec = GridSpec::cube(3, 1.0).unwrap();
        spec.background = [0.25, 0.5, 0.75];
        RadianceField::new(&spec).unwrap()
    }

    #[test]
    fn constant_grid_queries_constant() {
        let mut field = small_field();
        for p in field.raw_mut() {
            *p = [0.7, 1.0, -1.0, 0.0];
        }
        for point in [
            Vector3::new(0.1, -0.3, 0.9),
            Vector3::new(-1.0, 1.0, 0.0),
            Vector3::zeros(),
        ] {
            let (sigma, rgb) = field.query(&point);
            assert!((sigma - softplus(0.7)).abs() < 1e-12);
            assert!((rgb[0] - sigmoid(1.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn vertex_query_returns_vertex_values() {
        let mut field = small_field();
        let idx = field.vertex_index(1, 2, 0);
        field.set_vertex(idx, 2.5, [0.3, -0.4, 1.2]);
        let (sigma, rgb) = field.query(&field.vertex_position(1, 2, 0));
        assert!((sigma - softplus(2.5)).abs() < 1e-12);
        assert!((rgb[2] - sigmoid(1.2f32 as f64)).abs() < 1e-12);
    }

    #[test]
    fn edge_midpoint_interpolates_raw_density() {
        let mut field = small_field();
        let (a, b) = (field.vertex_index(0, 1, 1), field.vertex_index(1, 1, 1));
        field.set_vertex(a, -2.0, [0.0; 3]);
        field.set_vertex(b, 3.0, [0.0; 3]);
        let mid = (field.vertex_position(0, 1, 1) + field.vertex_position(1, 1, 1)) / 2.0;
        let (sigma, _) = field.query(&mid);
        assert!((sigma - softplus(0.5)).abs() < 1e-12);
    }

    #[test]
    fn outside_points_are_empty_background() {
        let field = small_field();
        let (sigma, rgb) = field.query(&Vector3::new(1.5, 0.0, 0.0));
        assert_eq!(sigma, 0.0);
        assert_eq!(rgb, [0.25, 0.5, 0.75]);
    }

    #[test]
    fn resolution_below_two_is_rejected() {
        let mut spec = GridSpec::cube(2, 1.0).unwrap();
        spec.resolution = [2, 1, 2];
        assert!(RadianceField::new(&spec).is_err());
    }

    #[test]
    fn checkpoint_round_trip_is_exact_for_f32_values() {
        let mut field = small_field();
        for (i, p) in field.raw_mut().iter_mut().enumerate() {
            let v = (i as f32 * 0.37).sin();
            *p = [v as f64, -v as f64, 0.5, (v * 2.0) as f64];
        }
        let bytes = field.to_checkpoint_bytes();
        assert_eq!(&bytes[..4], b"FSRF");
        let back = RadianceField::read_checkpoint(&mut bytes.as_slice()).unwrap();
        assert_eq!(back, field);
        assert!(RadianceField::read_checkpoint(&mut &bytes[..bytes.len() - 3]).is_err());
    }

    #[test]
    fn aabb_intersection() {
        let aabb = Aabb::cube(1.0).unwrap();
        let (t0, t1) = aabb
            .intersect(&Vector3::new(-3.0, 0.0, 0.0), &Vector3::new(1.0, 0.0, 0.0))
            .unwrap();
        assert!((t0 - 2.0).abs() < 1e-12 && (t1 - 4.0).abs() < 1e-12);
        assert!(aabb
            .intersect(&Vector3::new(-3.0, 2.0, 0.0), &Vector3::new(1.0, 0.0, 0.0))
            .is_none());
    }

    #[test]
    fn activation_inverses() {
        for y in [0.01, 0.5, 3.0, 40.0] {
            assert!((softplus(softplus_inverse(y)) - y).abs() < 1e-9 * y.max(1.0));
        }
        assert!((sigmoid(logit(0.8)) - 0.8).abs() < 1e-12);
    }
}
