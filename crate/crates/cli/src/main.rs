//! `fieldsmith` command-line front end.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fieldsmith::{Error, SynthError};

use crate::config::{FileConfig, FitArgs, InsertArgs, RemoveArgs};

#[derive(Parser, Debug)]
#[command(name = "fieldsmith", version, about = "Insert and remove objects in radiance fields")]
struct Cli {
    /// TOML file with defaults for any long flag (flags win)
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// More log output (-v info, -vv debug); RUST_LOG overrides
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a procedural box-room scene with box, object and ground truth
    MakeScene(commands::MakeSceneArgs),
    /// Fit a background field to a scene's views
    Fit(FitArgs),
    /// Insert an object into the edit box
    Insert(InsertArgs),
    /// Remove whatever lies in the edit box
    Remove(RemoveArgs),
    /// Render a field at dataset views or along an orbit
    Render(commands::RenderArgs),
    /// CLIP-style scores of edited views against prompts
    Evaluate(commands::EvaluateArgs),
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] Error),
}

impl From<SynthError> for CliError {
    fn from(e: SynthError) -> Self {
        CliError::Core(e.into())
    }
}

impl CliError {
    /// 2 for bad configuration or input, 3 for failures while running.
    fn exit_code(&self) -> u8 {
        let input = match self {
            CliError::Config(_) => true,
            CliError::Core(e) => match e {
                Error::Config(_)
                | Error::InvalidView { .. }
                | Error::TooFewViews(_)
                | Error::MissingManifest(_)
                | Error::DimensionMismatch(_)
                | Error::UnsupportedFormat(_)
                | Error::Json(_)
                | Error::Image(_)
                | Error::UnknownView(_)
                | Error::CameraInsideGeometry(_)
                | Error::Checkpoint(_)
                | Error::Metric(_) => true,
                Error::Io { source, .. } => source.kind() == std::io::ErrorKind::NotFound,
                Error::Synthesis(SynthError::InvalidRequest(_)) => true,
                _ => false,
            },
        };
        if input {
            2
        } else {
            3
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(2)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let result = FileConfig::load(cli.config.as_deref()).and_then(|file| match &cli.command {
        Command::MakeScene(a) => commands::make_scene(a, &file),
        Command::Fit(a) => commands::fit(a, &file),
        Command::Insert(a) => commands::insert(a, &file),
        Command::Remove(a) => commands::remove(a, &file),
        Command::Render(a) => commands::render(a, &file),
        Command::Evaluate(a) => commands::evaluate(a, &file),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
