//! The `avatar` command line: render, fit, eval and profile.
//!
//! Exit codes: 0 on success, 1 for usage and input errors, 2 for failures
//! while computing or writing results.

pub mod commands;
pub mod config;

use std::fmt;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::error::Error;
use commands::Overrides;

pub use config::{read_cameras, CameraRecord, FrameConfig, Scene, SceneConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

/// An error paired with its exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub error: Error,
}

impl Failure {
    pub fn input(error: Error) -> Self {
        Self { code: EXIT_USAGE, error }
    }

    pub fn runtime(error: Error) -> Self {
        Self { code: EXIT_RUNTIME, error }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.error)
    }
}

#[derive(Debug, Parser)]
#[command(name = "avatar", version, about = "Fit and render mesh-anchored gaussian head avatars")]
pub struct Cli {
    /// Worker threads; 1 gives bit-reproducible output.
    #[arg(long, global = true, value_name = "N")]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a snapshot from one camera, or from each camera of an orbit file.
    Render(RenderArgs),
    /// Fit every frame of a scene and write snapshots plus loss history.
    Fit(FitArgs),
    /// Compare rendered images to targets by file name.
    Eval(EvalArgs),
    /// Time each stage of the tiled renderer.
    Profile(ProfileArgs),
}

#[derive(Debug, Args)]
pub struct RenderOptions {
    #[arg(long, value_name = "N")]
    pub tile_size: Option<usize>,
    /// Background color, three values in [0, 1].
    #[arg(long, value_name = "R,G,B", value_parser = parse_background)]
    pub background: Option<[f64; 3]>,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    #[arg(long, value_name = "PATH")]
    pub config: PathBuf,
    #[arg(long, value_name = "PATH")]
    pub snapshot: PathBuf,
    #[arg(long, value_name = "PATH")]
    pub camera: PathBuf,
    /// PNG path for one camera, directory for several.
    #[arg(long, value_name = "PATH")]
    pub out: PathBuf,
    #[command(flatten)]
    pub render: RenderOptions,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long, value_name = "PATH")]
    pub config: PathBuf,
    /// Output directory.
    #[arg(long, value_name = "PATH")]
    pub out: PathBuf,
    #[arg(long, value_name = "N")]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub render: RenderOptions,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, value_name = "DIR")]
    pub rendered: PathBuf,
    #[arg(long, value_name = "DIR")]
    pub targets: PathBuf,
    /// JSON report path; printed to stdout when absent.
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ProfileArgs {
    #[arg(long, value_name = "PATH")]
    pub config: PathBuf,
    #[arg(long, value_name = "PATH")]
    pub snapshot: PathBuf,
    /// Camera file; the first camera is used.
    #[arg(long, value_name = "PATH")]
    pub camera: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub repeats: usize,
    /// JSON report path; printed to stdout when absent.
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub render: RenderOptions,
}

fn parse_background(s: &str) -> Result<[f64; 3], String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if parts.len() != 3 {
        return Err("expected three comma-separated values".into());
    }
    let mut out = [0.0; 3];
    for (o, p) in out.iter_mut().zip(parts) {
        let v: f64 = p.parse().map_err(|_| format!("`{p}` is not a number"))?;
        if !(0.0..=1.0).contains(&v) {
            return Err(format!("{v} is outside [0, 1]"));
        }
        *o = v;
    }
    Ok(out)
}

fn overrides(render: &RenderOptions, seed: Option<u64>) -> Overrides {
    Overrides {
        seed,
        tile_size: render.tile_size,
        background: render.background,
    }
}

pub fn run(cli: Cli) -> Result<(), Failure> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Failure::input(Error::invalid("--threads must be at least 1")));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::runtime(Error::invalid(format!("thread pool: {e}"))))?;
    }
    match &cli.command {
        Command::Render(a) => commands::render(&a.config, &a.snapshot, &a.camera, &a.out, &overrides(&a.render, None)),
        Command::Fit(a) => commands::fit(&a.config, &a.out, &overrides(&a.render, a.seed)),
        Command::Eval(a) => commands::eval(&a.rendered, &a.targets, a.out.as_ref()),
        Command::Profile(a) => commands::profile(
            &a.config,
            &a.snapshot,
            &a.camera,
            a.repeats,
            a.out.as_ref(),
            &overrides(&a.render, None),
        ),
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::new().filter_or("AVATAR_LOG", "warn")).try_init();
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match run(cli) {
        Ok(()) => EXIT_OK,
        Err(f) => {
            eprintln!("error: {f}");
            f.code
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn background_parsing() {
        assert_eq!(parse_background("0, 0.5,1").unwrap(), [0.0, 0.5, 1.0]);
        assert!(parse_background("0,0").is_err());
        assert!(parse_background("0,2,0").is_err());
        assert!(parse_background("a,0,0").is_err());
    }

    #[test]
    fn usage_errors_exit_one() {
        assert_eq!(main_with_args(["avatar", "render"]), EXIT_USAGE);
        assert_eq!(main_with_args(["avatar", "nope"]), EXIT_USAGE);
        assert_eq!(main_with_args(["avatar", "--help"]), EXIT_OK);
    }

    #[test]
    fn missing_config_exits_one() {
        let code = main_with_args([
            "avatar",
            "fit",
            "--config",
            "/nonexistent/scene.json",
            "--out",
            "/nonexistent/out",
        ]);
        assert_eq!(code, EXIT_USAGE);
    }
}
