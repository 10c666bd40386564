//! JSON bodies of the remote synthesizer protocol.
//!
//! Images travel as base64-encoded 8-bit RGB PNGs; masks as base64 1-bit
//! grayscale PNGs where 1 means "preserve".

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};

use super::SynthError;
use crate::geometry::EditMask;
use crate::raster::Image;
use crate::scene_io::SceneDataset;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthesizeBody {
    pub image: String,
    pub mask: String,
    pub prompt: String,
    pub strength: f32,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthesizeResponse {
    pub image: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WireView {
    pub id: u32,
    pub image: String,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub w: u32,
    pub h: u32,
    pub c2w: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WireImage {
    pub id: u32,
    pub image: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FineTuneBody {
    pub background_views: Vec<WireView>,
    pub object_views: Vec<WireView>,
    pub prompts: Vec<String>,
    pub n_bg: u32,
    pub n_obj: u32,
    pub pseudo_ground_truth: Vec<WireImage>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FineTuneAccepted {
    pub job_id: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FineTuneJob {
    pub status: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
}

pub fn encode_image(image: &Image) -> Result<String, SynthError> {
    let (w, h) = image.dims();
    let mut buf = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut buf, w as u32, h as u32);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc.write_header().map_err(|e| SynthError::Protocol(e.to_string()))?;
        writer
            .write_image_data(&image.to_rgb8())
            .map_err(|e| SynthError::Protocol(e.to_string()))?;
    }
    Ok(STANDARD.encode(buf))
}

pub fn decode_image(data: &str) -> Result<Image, SynthError> {
    let bytes = STANDARD
        .decode(data.trim())
        .map_err(|e| SynthError::Protocol(format!("bad base64 image: {e}")))?;
    let img = image::load_from_memory_with_format(&bytes, image::ImageFormat::Png)
        .map_err(|e| SynthError::Protocol(format!("bad PNG image: {e}")))?
        .to_rgb8();
    Ok(Image::from_rgb8(&img))
}

pub fn encode_mask(mask: &EditMask) -> Result<String, SynthError> {
    let (w, h) = mask.dims();
    let mut buf = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut buf, w as u32, h as u32);
        enc.set_color(png::ColorType::Grayscale);
        enc.set_depth(png::BitDepth::One);
        let mut writer = enc.write_header().map_err(|e| SynthError::Protocol(e.to_string()))?;
        writer
            .write_image_data(&mask.packed_rows())
            .map_err(|e| SynthError::Protocol(e.to_string()))?;
    }
    Ok(STANDARD.encode(buf))
}

/// Any nonzero gray value counts as "preserve".
pub fn decode_mask(data: &str) -> Result<EditMask, SynthError> {
    let bytes = STANDARD
        .decode(data.trim())
        .map_err(|e| SynthError::Protocol(format!("bad base64 mask: {e}")))?;
    let img = image::load_from_memory_with_format(&bytes, image::ImageFormat::Png)
        .map_err(|e| SynthError::Protocol(format!("bad PNG mask: {e}")))?
        .to_luma8();
    let (w, h) = img.dimensions();
    EditMask::from_values(w as usize, h as usize, img.as_raw().iter().map(|&v| v > 0).collect())
        .map_err(|e| SynthError::Protocol(e.to_string()))
}

pub fn encode_views(dataset: &SceneDataset) -> Result<Vec<WireView>, SynthError> {
    dataset
        .views
        .iter()
        .map(|v| {
            Ok(WireView {
                id: v.id.0,
                image: encode_image(&v.image)?,
                fx: v.intrinsics.fx,
                fy: v.intrinsics.fy,
                cx: v.intrinsics.cx,
                cy: v.intrinsics.cy,
                w: v.intrinsics.width,
                h: v.intrinsics.height,
                c2w: v.pose.to_row_major(),
            })
        })
        .collect()
}
