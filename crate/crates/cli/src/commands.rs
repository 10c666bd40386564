//! One function per subcommand. Each reads its inputs, runs the library,
//! writes outputs plus `run.json` into the output directory and prints a
//! short summary to stdout.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Args, ValueEnum};
use fieldsmith::field::{fit_background, render_view, GridSpec, RadianceField, RenderOptions};
use fieldsmith::geometry::orbit_around_focus;
use fieldsmith::metrics::{evaluate_scene, Embedder, RemoteEmbedder, ToyEmbedder};
use fieldsmith::raster::{load_image, masked_mse, psnr, psnr_from_mse, save_image, Image};
use fieldsmith::scene_io::{
    load_box_config, load_dataset, load_session_checkpoint, make_synthetic_scene, presets, save_box_config,
    save_dataset, view_file_name, Primitive, SceneDataset, SyntheticScene, MANIFEST_FILE,
};
use fieldsmith::scheduler::{run_removal, write_event_log, EditSession, Editor, RemovalConfig};
use fieldsmith::synth::{
    IdentitySynth, OracleContent, OracleSynth, Prompt, RemoteConfig, RemoteSynth, SynthesisRequest, Synthesizer,
};
use fieldsmith::{CameraPose, Error, ViewId};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{
    pick_opt, Backend, EditSettings, FileConfig, FitArgs, InsertArgs, OutArg, RemoteArgs, RemoteSettings, RemoveArgs,
    SceneArg,
};
use crate::CliError;

type Result<T> = std::result::Result<T, CliError>;

const FIELD_FILE: &str = "field.bin";
const SYNTHETIC_FILE: &str = "synthetic.json";
const BOX_FILE: &str = "box.json";
const OBJECT_FILE: &str = "object.json";

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

fn io_err(path: &Path, source: std::io::Error) -> CliError {
    CliError::Core(Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(Error::from)?;
    fs::write(path, text + "\n").map_err(|e| io_err(path, e))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    Ok(serde_json::from_str(&text).map_err(Error::from)?)
}

/// The run manifest every command leaves next to its outputs.
fn write_run(out: &Path, command: &str, seed: u64, config: Value, results: Value) -> Result<()> {
    let run = json!({
        "command": command,
        "version": env!("CARGO_PKG_VERSION"),
        "seed": seed,
        "config": config,
        "results": results,
    });
    write_json(&out.join("run.json"), &run)
}

fn read_field(path: &Path) -> Result<RadianceField> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    Ok(RadianceField::read_checkpoint(&mut BufReader::new(file))?)
}

fn write_field(field: &RadianceField, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(file);
    field
        .write_checkpoint(&mut w)
        .and_then(|_| w.flush())
        .map_err(|e| io_err(path, e))
}

fn load_synthetic(scene: &Path) -> Result<Option<SyntheticScene>> {
    let path = scene.join(SYNTHETIC_FILE);
    if path.is_file() {
        read_json(&path).map(Some)
    } else {
        Ok(None)
    }
}

fn save_images<'a>(dir: &Path, images: impl IntoIterator<Item = (ViewId, &'a Image)>) -> Result<()> {
    create_dir(dir)?;
    for (id, img) in images {
        save_image(img, &dir.join(view_file_name(id)))?;
    }
    Ok(())
}

fn save_frames(dir: &Path, frames: &[Image]) -> Result<()> {
    create_dir(dir)?;
    for (i, img) in frames.iter().enumerate() {
        save_image(img, &dir.join(format!("frame_{i:04}.png")))?;
    }
    Ok(())
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

fn min(v: &[f64]) -> f64 {
    v.iter().cloned().fold(f64::INFINITY, f64::min)
}

fn prompt(text: &str) -> Result<Prompt> {
    Prompt::new(text).map_err(|e| CliError::Config(format!("prompt {text:?}: {e}")))
}

// ---------------------------------------------------------------------------

#[derive(Args, Debug)]
pub struct MakeSceneArgs {
    #[command(flatten)]
    pub out: OutArg,
    /// Number of views on the orbit
    #[arg(long, default_value_t = 40)]
    pub views: usize,
    /// Image width and height in pixels
    #[arg(long, default_value_t = 64)]
    pub size: u32,
    /// Scene seed [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Put a removable crate inside the edit box
    #[arg(long)]
    pub with_object: bool,
}

pub fn make_scene(args: &MakeSceneArgs, file: &FileConfig) -> Result<()> {
    let out = args.out.resolve(file)?;
    let seed = pick_opt(&args.seed, &file.seed).unwrap_or(0);
    let spec = if args.with_object {
        presets::box_room_with_object(args.views, args.size, seed)
    } else {
        presets::box_room(args.views, args.size, seed)
    };
    let (ds, scene) = make_synthetic_scene(&spec)?;
    save_dataset(&ds, &out)?;
    save_box_config(&presets::edit_box(), &out.join(BOX_FILE))?;
    write_json(&out.join(SYNTHETIC_FILE), &scene)?;
    write_json(&out.join(OBJECT_FILE), &presets::inserted_object())?;
    println!(
        "wrote {} views of {}x{} to {}",
        ds.len(),
        args.size,
        args.size,
        out.display()
    );
    write_run(
        &out,
        "make-scene",
        seed,
        json!({ "views": args.views, "size": args.size, "with_object": args.with_object }),
        json!({ "views": ds.len() }),
    )
}

// ---------------------------------------------------------------------------

/// Four held-out cameras halfway between training views.
fn held_out_psnr(field: &RadianceField, scene: &SyntheticScene, opts: &RenderOptions) -> Result<Vec<f64>> {
    let n = scene.spec.n_views;
    let intr = scene.intrinsics();
    (0..4)
        .map(|i| {
            let pose = scene.orbit_pose((i * n / 4) as f64 + 0.5)?;
            Ok(psnr(
                &render_view(field, &pose, &intr, opts),
                &scene.render(&pose, &intr),
            )?)
        })
        .collect()
}

pub fn fit(args: &FitArgs, file: &FileConfig) -> Result<()> {
    let s = args.resolve(file)?;
    let ds = load_dataset(&s.scene)?;
    let synthetic = load_synthetic(&s.scene)?;
    let extent = match (s.extent, &synthetic) {
        (Some(e), _) => e,
        (None, Some(sc)) => sc.spec.room_half_extents.iter().cloned().fold(0.0, f64::max) + 0.05,
        (None, None) => 1.25 * ds.views.iter().map(|v| v.pose.translation().norm()).fold(0.0, f64::max),
    };
    let background = s.background.unwrap_or_else(|| {
        let mut m = [0.0; 3];
        for v in &ds.views {
            let c = v.image.mean_rgb();
            (0..3).for_each(|k| m[k] += c[k] / ds.len() as f64);
        }
        m
    });
    let grid = GridSpec {
        background,
        ..GridSpec::cube(s.grid, extent)?
    };
    s.train.validate()?;
    log::info!(
        "fitting {} views on a {}^3 grid of half size {extent:.3}",
        ds.len(),
        s.grid
    );
    let field = fit_background(&ds, &grid, &s.train, s.iters)?;

    create_dir(&s.out)?;
    write_field(&field, &s.out.join(FIELD_FILE))?;
    let opts = s.train.render_options();
    let train_psnr: Vec<f64> = ds
        .views
        .iter()
        .map(|v| psnr(&render_view(&field, &v.pose, &v.intrinsics, &opts), &v.image))
        .collect::<std::result::Result<_, _>>()?;
    println!("training-view PSNR: mean {:.2} dB", mean(&train_psnr));
    let mut results = json!({ "train_psnr_mean": mean(&train_psnr) });
    if let Some(sc) = &synthetic {
        let ho = held_out_psnr(&field, sc, &opts)?;
        println!("held-out PSNR: min {:.2} dB, mean {:.2} dB", min(&ho), mean(&ho));
        results["held_out_psnr"] = json!(ho);
    }
    write_run(
        &s.out,
        "fit",
        s.train.seed,
        json!({
            "scene": s.scene, "grid": s.grid, "extent": extent, "background": background,
            "iters": s.iters, "train": s.train,
        }),
        results,
    )
}

// ---------------------------------------------------------------------------

/// The synthesizer chosen by `--backend`, kept concrete so oracle runs can
/// report against the oracle's own ideal output.
enum SynthBackend {
    Oracle(OracleSynth),
    Identity(IdentitySynth),
    Remote(RemoteSynth),
}

impl SynthBackend {
    fn build(s: &EditSettings, ds: &SceneDataset, content: impl FnOnce() -> Result<OracleContent>) -> Result<Self> {
        Ok(match s.backend {
            Backend::OracleExact | Backend::OracleNoisy => {
                SynthBackend::Oracle(OracleSynth::for_dataset(ds, content()?, s.jitter)?)
            }
            Backend::Identity => SynthBackend::Identity(IdentitySynth),
            Backend::Remote => SynthBackend::Remote(RemoteSynth::new(remote_config(&s.remote)?)?),
        })
    }

    fn synth(&self) -> &dyn Synthesizer {
        match self {
            SynthBackend::Oracle(o) => o,
            SynthBackend::Identity(i) => i,
            SynthBackend::Remote(r) => r,
        }
    }
}

fn remote_config(r: &RemoteSettings) -> Result<RemoteConfig> {
    let url = r
        .url
        .as_deref()
        .ok_or_else(|| CliError::Config("remote backend needs --remote-url or FIELDSMITH_REMOTE_URL".into()))?;
    let mut cfg = RemoteConfig::new(url);
    cfg.timeout = Duration::from_secs_f64(r.timeout_s);
    cfg.retries = r.retries;
    Ok(cfg)
}

/// PSNR of the final renders against what the exact oracle would produce
/// for every view in one shot.
fn oracle_psnr(oracle: &OracleSynth, session: &EditSession, renders: &[Image]) -> Result<(Vec<f64>, Vec<f64>)> {
    let (mut all, mut kept) = (vec![], vec![]);
    for (v, r) in session.source().views.iter().zip(renders) {
        let mask = session.mask(v.id)?;
        let truth = oracle.ideal(&SynthesisRequest {
            image: v.image.clone(),
            mask: mask.clone(),
            prompt: session.prompt().clone(),
            strength: 1.0,
            seed: 0,
            view_id: Some(v.id),
        })?;
        all.push(psnr(r, &truth)?);
        kept.push(psnr_from_mse(masked_mse(r, &truth, |i| mask.is_preserved_index(i))?));
    }
    Ok((all, kept))
}

fn orbit_frames(field: &RadianceField, ds: &SceneDataset, opts: &RenderOptions) -> Result<Vec<Image>> {
    let poses: Vec<CameraPose> = ds.views.iter().map(|v| v.pose).collect();
    let intr = ds.views[0].intrinsics;
    Ok(orbit_around_focus(&poses, ds.len())?
        .iter()
        .map(|p| render_view(field, p, &intr, opts))
        .collect())
}

pub fn insert(args: &InsertArgs, file: &FileConfig) -> Result<()> {
    let s = args.edit.resolve(file)?;
    let ds = load_dataset(&s.scene)?;
    let object = pick_opt(&args.object, &file.object).unwrap_or_else(|| s.scene.join(OBJECT_FILE));
    let backend = SynthBackend::build(&s, &ds, || {
        let prims: Vec<Primitive> = read_json(&object)?;
        Ok(OracleContent::ObjectOverInpaint(prims))
    })?;
    let synth = backend.synth();
    create_dir(&s.out)?;
    let failure_dir = s.out.join("checkpoint");

    let mut editor = match &args.resume {
        Some(dir) => {
            log::info!("resuming from {}", dir.display());
            Editor::resume(load_session_checkpoint(dir)?, ds.clone(), synth)?
        }
        None => {
            let bbox = load_box_config(&s.bbox)?;
            let text = s.prompt.as_deref().unwrap_or("a *object");
            let session = EditSession::new(ds.clone(), bbox, prompt(text)?, s.hyper, s.seed)?;
            Editor::new(session, read_field(s.field()?)?, s.train, synth)?
        }
    }
    .checkpoint_on_failure(&failure_dir);

    let every = s.hyper.n_new.max(1);
    let mut steps = 0u64;
    loop {
        match editor.advance() {
            Ok(true) => break,
            Ok(false) => {
                steps += 1;
                if steps % every == 0 {
                    log::info!("{steps} steps, {} views left", editor.session().remaining().len());
                }
            }
            Err(e) => {
                if let Err(ce) = editor.save_checkpoint(&failure_dir) {
                    log::warn!("could not save checkpoint: {ce}");
                } else {
                    eprintln!("session saved to {}; continue with --resume", failure_dir.display());
                }
                return Err(e.into());
            }
        }
    }

    editor.save_checkpoint(&s.out.join("session"))?;
    let (field, session, events) = editor.into_parts();
    write_field(&field, &s.out.join(FIELD_FILE))?;
    write_event_log(&events, &s.out.join("events.ndjson"))?;
    save_images(
        &s.out.join("edited"),
        session.edited().iter().map(|(id, img)| (*id, img)),
    )?;
    let opts = s.train.render_options();
    let renders: Vec<Image> = ds
        .views
        .iter()
        .map(|v| render_view(&field, &v.pose, &v.intrinsics, &opts))
        .collect();
    save_images(&s.out.join("renders"), ds.ids().zip(&renders))?;
    save_frames(&s.out.join("orbit"), &orbit_frames(&field, &ds, &opts)?)?;

    let mut results = json!({ "views_edited": session.edited().len(), "events": events.len() });
    if let SynthBackend::Oracle(o) = &backend {
        let (all, kept) = oracle_psnr(o, &session, &renders)?;
        println!(
            "PSNR vs oracle composites: mean {:.2} dB, preserved region {:.2} dB",
            mean(&all),
            mean(&kept)
        );
        results["psnr_vs_oracle"] = json!(all);
        results["preserved_psnr_vs_oracle"] = json!(kept);
    }
    println!(
        "edited {} views; outputs in {}",
        session.edited().len(),
        s.out.display()
    );
    write_run(
        &s.out,
        "insert",
        s.seed,
        json!({ "edit": s, "object": object, "resume": args.resume }),
        results,
    )
}

// ---------------------------------------------------------------------------

pub fn remove(args: &RemoveArgs, file: &FileConfig) -> Result<()> {
    let s = args.edit.resolve(file)?;
    let ds = load_dataset(&s.scene)?;
    let bbox = load_box_config(&s.bbox)?;
    let synthetic = load_synthetic(&s.scene)?;
    let backend = SynthBackend::build(&s, &ds, || match &synthetic {
        Some(sc) => Ok(OracleContent::Scene(sc.without_objects_in(&bbox))),
        None => Err(CliError::Config(format!(
            "oracle backends need the ground-truth scene {}",
            s.scene.join(SYNTHETIC_FILE).display()
        ))),
    })?;
    let plain = s.prompt.clone().unwrap_or_else(|| "a room".into());
    let edited = pick_opt(&args.prompt_edited, &file.prompt_edited).unwrap_or_else(|| plain.clone());
    let mut cfg = RemovalConfig::new(prompt(&plain)?, prompt(&edited)?);
    cfg.hyper = s.hyper;
    cfg.train = s.train;
    cfg.seed = s.seed;
    cfg.skip_pseudo_truth = args.skip_pseudo_gt || file.skip_pseudo_gt.unwrap_or(false);
    cfg.warm_start_steps = pick_opt(&args.warm_start, &file.warm_start);
    let field = read_field(s.field()?)?;

    let out = run_removal(field, ds.clone(), bbox, backend.synth(), &cfg)?;
    create_dir(&s.out)?;
    write_field(&out.field, &s.out.join(FIELD_FILE))?;
    write_event_log(&out.events, &s.out.join("events.ndjson"))?;
    if !out.pseudo_truth.is_empty() {
        save_images(
            &s.out.join("pseudo_gt"),
            out.pseudo_truth.iter().map(|(id, img)| (*id, img)),
        )?;
    }
    save_images(
        &s.out.join("edited"),
        out.session.edited().iter().map(|(id, img)| (*id, img)),
    )?;
    let opts = s.train.render_options();
    let renders: Vec<Image> = ds
        .views
        .iter()
        .map(|v| render_view(&out.field, &v.pose, &v.intrinsics, &opts))
        .collect();
    save_images(&s.out.join("renders"), ds.ids().zip(&renders))?;

    let mut results = json!({
        "views_edited": out.session.edited().len(),
        "pseudo_truth_views": out.pseudo_truth.len(),
    });
    if let Some(sc) = &synthetic {
        let empty = sc.without_objects_in(out.session.bbox());
        let box_psnr = ds
            .views
            .iter()
            .zip(&renders)
            .map(|(v, r)| {
                let mask = out.session.mask(v.id)?;
                let truth = empty.render(&v.pose, &v.intrinsics);
                Ok(psnr_from_mse(masked_mse(r, &truth, |i| !mask.is_preserved_index(i))?))
            })
            .collect::<Result<Vec<f64>>>()?;
        println!(
            "box-region PSNR vs empty background: min {:.2} dB, mean {:.2} dB",
            min(&box_psnr),
            mean(&box_psnr)
        );
        results["box_psnr"] = json!(box_psnr);
    }
    println!("removal finished; outputs in {}", s.out.display());
    write_run(
        &s.out,
        "remove",
        s.seed,
        json!({
            "edit": s, "prompt": plain, "prompt_edited": edited,
            "skip_pseudo_gt": cfg.skip_pseudo_truth, "warm_start": cfg.warm_start_steps,
        }),
        results,
    )
}

// ---------------------------------------------------------------------------

#[derive(Args, Debug)]
#[command(group(clap::ArgGroup::new("poses").required(true).args(["view", "orbit"])))]
pub struct RenderArgs {
    /// Field checkpoint
    #[arg(long)]
    pub field: Option<PathBuf>,
    #[command(flatten)]
    pub scene: SceneArg,
    /// Render the dataset view with this id
    #[arg(long)]
    pub view: Option<u32>,
    /// Render this many frames on an orbit around the views' focus point
    #[arg(long)]
    pub orbit: Option<usize>,
    /// Samples per ray [default: 64]
    #[arg(long)]
    pub samples: Option<usize>,
    /// Seed of the sample jitter [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub out: OutArg,
}

pub fn render(args: &RenderArgs, file: &FileConfig) -> Result<()> {
    let field_path = pick_opt(&args.field, &file.field)
        .ok_or_else(|| CliError::Config("--field is required (flag or config file)".into()))?;
    let scene = args.scene.resolve(file)?;
    let out = args.out.resolve(file)?;
    let seed = pick_opt(&args.seed, &file.seed).unwrap_or(0);
    let opts = RenderOptions {
        n_samples: pick_opt(&args.samples, &file.samples).unwrap_or(RenderOptions::default().n_samples),
        seed,
        ..Default::default()
    };
    if opts.n_samples < 2 {
        return Err(CliError::Config("--samples must be at least 2".into()));
    }
    let field = read_field(&field_path)?;
    let ds = load_dataset(&scene)?;
    create_dir(&out)?;
    let written = if let Some(id) = args.view {
        let v = ds.view(ViewId(id)).ok_or(Error::UnknownView(ViewId(id)))?;
        let img = render_view(&field, &v.pose, &v.intrinsics, &opts);
        save_images(&out, [(v.id, &img)])?;
        1
    } else {
        let n = args.orbit.unwrap_or(0);
        let poses: Vec<CameraPose> = ds.views.iter().map(|v| v.pose).collect();
        let intr = ds.views[0].intrinsics;
        let frames: Vec<Image> = orbit_around_focus(&poses, n)?
            .iter()
            .map(|p| render_view(&field, p, &intr, &opts))
            .collect();
        save_frames(&out, &frames)?;
        frames.len()
    };
    println!("rendered {written} image(s) to {}", out.display());
    write_run(
        &out,
        "render",
        seed,
        json!({
            "field": field_path, "scene": scene, "view": args.view, "orbit": args.orbit,
            "samples": opts.n_samples,
        }),
        json!({ "images": written }),
    )
}

// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbedderKind {
    /// Built-in deterministic color embedder
    Toy,
    /// HTTP embedding service at --remote-url
    Remote,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    /// Original views: a scene directory or a directory of PNGs
    #[arg(long)]
    pub original: PathBuf,
    /// Edited views, in the same order as the originals
    #[arg(long)]
    pub edited: PathBuf,
    /// Prompt describing the original scene
    #[arg(long)]
    pub prompt: Option<String>,
    /// Prompt describing the edited scene
    #[arg(long)]
    pub prompt_edited: Option<String>,
    #[arg(long, value_enum, default_value_t = EmbedderKind::Toy)]
    pub embedder: EmbedderKind,
    #[command(flatten)]
    pub remote: RemoteArgs,
    #[command(flatten)]
    pub out: OutArg,
}

/// Images of a scene directory in manifest order, else every PNG in the
/// directory sorted by name.
fn load_views(dir: &Path) -> Result<Vec<Image>> {
    if dir.join(MANIFEST_FILE).is_file() {
        return Ok(load_dataset(dir)?.views.into_iter().map(|v| v.image).collect());
    }
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| io_err(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
        .collect();
    files.sort();
    files.iter().map(|p| Ok(load_image(p)?)).collect()
}

pub fn evaluate(args: &EvaluateArgs, file: &FileConfig) -> Result<()> {
    let out = args.out.resolve(file)?;
    let p = pick_opt(&args.prompt, &file.prompt).ok_or_else(|| CliError::Config("--prompt is required".into()))?;
    let pe = pick_opt(&args.prompt_edited, &file.prompt_edited)
        .ok_or_else(|| CliError::Config("--prompt-edited is required".into()))?;
    let (p, pe) = (prompt(&p)?, prompt(&pe)?);
    let originals = load_views(&args.original)?;
    let editeds = load_views(&args.edited)?;
    let embedder: Box<dyn Embedder> = match args.embedder {
        EmbedderKind::Toy => Box::new(ToyEmbedder),
        EmbedderKind::Remote => Box::new(RemoteEmbedder::connect(remote_config(&args.remote.resolve(file)?)?)?),
    };
    let report = evaluate_scene(embedder.as_ref(), &originals, &editeds, &p, &pe)?;
    create_dir(&out)?;
    write_json(&out.join("metrics.json"), &report)?;
    println!(
        "CLIPScore mean {:.4}, CLIPDC mean {:.4} over {} views",
        report.mean_clip_score,
        report.mean_clip_dc,
        originals.len()
    );
    write_run(
        &out,
        "evaluate",
        0,
        json!({
            "original": args.original, "edited": args.edited, "prompt": p.text(),
            "prompt_edited": pe.text(), "embedder": args.embedder,
        }),
        json!({ "mean_clip_score": report.mean_clip_score, "mean_clip_dc": report.mean_clip_dc }),
    )
}
