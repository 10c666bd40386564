//! Floating-point RGB images and their lossless 8-bit PNG encoding.

use std::path::Path;

use image::{ImageFormat, RgbImage};

use crate::error::{Error, Result};

pub type Rgb = [f32; 3];

/// Row-major RGB image with channel values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    pixels: Vec<Rgb>,
}

impl Image {
    pub fn filled(width: usize, height: usize, rgb: Rgb) -> Self {
        Image {
            width,
            height,
            pixels: vec![rgb; width * height],
        }
    }

    pub fn black(width: usize, height: usize) -> Self {
        Self::filled(width, height, [0.0; 3])
    }

    pub fn from_pixels(width: usize, height: usize, pixels: Vec<Rgb>) -> Result<Self> {
        if pixels.len() != width * height {
            return Err(Error::DimensionMismatch(format!(
                "{} pixels for a {width}x{height} image",
                pixels.len()
            )));
        }
        Ok(Image { width, height, pixels })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> Rgb) -> Self {
        let mut pixels = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                pixels.push(f(x, y));
            }
        }
        Image { width, height, pixels }
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

    pub fn pixels(&self) -> &[Rgb] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [Rgb] {
        &mut self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> Rgb {
        self.pixels[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, rgb: Rgb) {
        self.pixels[y * self.width + x] = rgb;
    }

    pub fn to_rgb8(&self) -> RgbImage {
        let mut out = RgbImage::new(self.width as u32, self.height as u32);
        for (dst, src) in out.pixels_mut().zip(&self.pixels) {
            dst.0 = src.map(quantize);
        }
        out
    }

    pub fn from_rgb8(img: &RgbImage) -> Self {
        let pixels = img.pixels().map(|p| p.0.map(|c| c as f32 / 255.0)).collect();
        Image {
            width: img.width() as usize,
            height: img.height() as usize,
            pixels,
        }
    }

    /// Snap every channel to the nearest 8-bit level.
    pub fn quantized(&self) -> Self {
        Image {
            width: self.width,
            height: self.height,
            pixels: self
                .pixels
                .iter()
                .map(|p| p.map(|c| quantize(c) as f32 / 255.0))
                .collect(),
        }
    }

    /// Per-channel mean over all pixels.
    pub fn mean_rgb(&self) -> [f64; 3] {
        let mut acc = [0.0f64; 3];
        for p in &self.pixels {
            for c in 0..3 {
                acc[c] += p[c] as f64;
            }
        }
        let n = self.pixels.len().max(1) as f64;
        acc.map(|v| v / n)
    }
}

fn quantize(c: f32) -> u8 {
    (c.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn ensure_png(path: &Path) -> Result<()> {
    match ImageFormat::from_path(path) {
        Ok(ImageFormat::Png) => Ok(()),
        _ => Err(Error::UnsupportedFormat(path.to_path_buf())),
    }
}

pub fn save_image(image: &Image, path: &Path) -> Result<()> {
    ensure_png(path)?;
    image
        .to_rgb8()
        .save_with_format(path, ImageFormat::Png)
        .map_err(|e| match e {
            image::ImageError::IoError(io) => Error::io(path, io),
            other => Error::Image(other),
        })
}

pub fn load_image(path: &Path) -> Result<Image> {
    ensure_png(path)?;
    let reader = image::ImageReader::open(path).map_err(|e| Error::io(path, e))?;
    let decoded = reader.with_guessed_format().map_err(|e| Error::io(path, e))?.decode()?;
    Ok(Image::from_rgb8(&decoded.to_rgb8()))
}

/// Mean squared error over every channel of every selected pixel.
pub fn masked_mse(a: &Image, b: &Image, mut select: impl FnMut(usize) -> bool) -> Result<f64> {
    if a.dims() != b.dims() {
        return Err(Error::DimensionMismatch(format!("{:?} vs {:?}", a.dims(), b.dims())));
    }
    let mut sum = 0.0;
    let mut n = 0usize;
    for (i, (pa, pb)) in a.pixels.iter().zip(&b.pixels).enumerate() {
        if !select(i) {
            continue;
        }
        for c in 0..3 {
            let d = pa[c] as f64 - pb[c] as f64;
            sum += d * d;
        }
        n += 3;
    }
    if n == 0 {
        return Ok(0.0);
    }
    Ok(sum / n as f64)
}

pub fn mse(a: &Image, b: &Image) -> Result<f64> {
    masked_mse(a, b, |_| true)
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse <= 0.0 {
        f64::INFINITY
    } else {
        -10.0 * mse.log10()
    }
}

/// PSNR in dB for images with unit peak value.
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    Ok(psnr_from_mse(mse(a, b)?))
}
