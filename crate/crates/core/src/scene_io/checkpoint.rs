//! Editing-session checkpoints.
//!
//! A checkpoint is a directory:
//!
//! ```text
//! session.json      progress counters, hyperparameters, box, prompt, seeds
//! field.bin         radiance field (f32 little-endian)
//! optimizer.bin     Adam moments (f64 little-endian)
//! edited/NNNN.rgbf  edited images, raw f32 RGB with a small header
//! events.ndjson     event log so far
//! ```
//!
//! Every piece round-trips bit-exactly, so a resumed session continues as if
//! it had never stopped.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{read_json, write_json};
use crate::camera::ViewId;
use crate::error::{Error, Result};
use crate::field::{OptimizerState, RadianceField, TrainConfig};
use crate::geometry::BoxConfig;
use crate::raster::Image;
use crate::scheduler::{read_event_log, write_event_log, Hyperparams, Progress, ScheduleEvent};
use crate::synth::Prompt;

const FORMAT_VERSION: u32 = 1;
const IMAGE_MAGIC: &[u8; 4] = b"FSIM";

#[derive(Clone, Debug, PartialEq)]
pub struct SessionCheckpoint {
    pub source_ids: Vec<ViewId>,
    pub progress: Progress,
    pub hyper: Hyperparams,
    pub bbox: BoxConfig,
    pub prompt: Prompt,
    pub seed: u64,
    pub train: TrainConfig,
    pub field: RadianceField,
    pub optimizer: OptimizerState,
    pub edited: BTreeMap<ViewId, Image>,
    pub events: Vec<ScheduleEvent>,
}

#[derive(Serialize, Deserialize)]
struct SessionMeta {
    version: u32,
    source_ids: Vec<ViewId>,
    progress: Progress,
    hyper: Hyperparams,
    bbox: BoxConfig,
    prompt: Prompt,
    seed: u64,
    train: TrainConfig,
}

fn image_path(dir: &Path, id: ViewId) -> std::path::PathBuf {
    dir.join("edited").join(format!("{:04}.rgbf", id.0))
}

fn write_raw_image(image: &Image, path: &Path) -> Result<()> {
    let mut buf = Vec::with_capacity(12 + image.pixels().len() * 12);
    buf.extend_from_slice(IMAGE_MAGIC);
    buf.extend_from_slice(&(image.width() as u32).to_le_bytes());
    buf.extend_from_slice(&(image.height() as u32).to_le_bytes());
    for v in image.pixels().iter().flatten() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

fn read_raw_image(path: &Path) -> Result<Image> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 12 || &bytes[..4] != IMAGE_MAGIC {
        return Err(Error::Checkpoint(format!("{} is not a raw image", path.display())));
    }
    let w = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let h = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let body = &bytes[12..];
    if body.len() != w * h * 12 {
        return Err(Error::Checkpoint(format!("{} has the wrong size", path.display())));
    }
    let vals: Vec<f32> = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Image::from_pixels(w, h, vals.chunks_exact(3).map(|p| [p[0], p[1], p[2]]).collect())
}

pub fn save_session_checkpoint(ckpt: &SessionCheckpoint, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir.join("edited")).map_err(|e| Error::io(dir, e))?;
    let meta = SessionMeta {
        version: FORMAT_VERSION,
        source_ids: ckpt.source_ids.clone(),
        progress: ckpt.progress.clone(),
        hyper: ckpt.hyper,
        bbox: ckpt.bbox.clone(),
        prompt: ckpt.prompt.clone(),
        seed: ckpt.seed,
        train: ckpt.train,
    };
    write_json(&dir.join("session.json"), &meta)?;

    let path = dir.join("field.bin");
    let mut w = BufWriter::new(fs::File::create(&path).map_err(|e| Error::io(&path, e))?);
    ckpt.field.write_checkpoint(&mut w).map_err(|e| Error::io(&path, e))?;
    w.flush().map_err(|e| Error::io(&path, e))?;

    let path = dir.join("optimizer.bin");
    let mut w = BufWriter::new(fs::File::create(&path).map_err(|e| Error::io(&path, e))?);
    ckpt.optimizer.write(&mut w).map_err(|e| Error::io(&path, e))?;
    w.flush().map_err(|e| Error::io(&path, e))?;

    for (id, img) in &ckpt.edited {
        write_raw_image(img, &image_path(dir, *id))?;
    }
    write_event_log(&ckpt.events, &dir.join("events.ndjson"))
}

pub fn load_session_checkpoint(dir: &Path) -> Result<SessionCheckpoint> {
    let meta: SessionMeta = read_json(&dir.join("session.json"))?;
    if meta.version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {}",
            meta.version
        )));
    }
    let path = dir.join("field.bin");
    let mut r = BufReader::new(fs::File::open(&path).map_err(|e| Error::io(&path, e))?);
    let field = RadianceField::read_checkpoint(&mut r)?;
    let path = dir.join("optimizer.bin");
    let mut r = BufReader::new(fs::File::open(&path).map_err(|e| Error::io(&path, e))?);
    let optimizer = OptimizerState::read(&mut r)?;
    let mut edited = BTreeMap::new();
    for id in &meta.progress.used_order {
        edited.insert(*id, read_raw_image(&image_path(dir, *id))?);
    }
    let events = read_event_log(&dir.join("events.ndjson"))?;
    Ok(SessionCheckpoint {
        source_ids: meta.source_ids,
        progress: meta.progress,
        hyper: meta.hyper,
        bbox: meta.bbox,
        prompt: meta.prompt,
        seed: meta.seed,
        train: meta.train,
        field,
        optimizer,
        edited,
        events,
    })
}
