#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod config;
mod output;
mod plot;
mod run;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use config::{ExperimentConfig, RunKind};
use output::Manifest;
use solitonlab_core::penalty::PRESETS;

/// Exit statuses: 2 for invalid input, 3 for solver failures.
#[derive(Debug, Clone)]
pub enum Failure {
    Validation(String),
    Solver(String),
    Io(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Validation(_) | Failure::Io(_) => 2,
            Failure::Solver(_) => 3,
        }
    }

    fn status(&self) -> &'static str {
        match self {
            Failure::Validation(_) => "validation_error",
            Failure::Io(_) => "io_error",
            Failure::Solver(_) => "solver_error",
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Validation(m) | Failure::Solver(m) | Failure::Io(m) => m,
        }
    }
}

impl From<solitonlab_core::Error> for Failure {
    fn from(e: solitonlab_core::Error) -> Self {
        use solitonlab_core::Error as E;
        match e {
            E::Validation(_) | E::Resolution(_) | E::Domain(_) | E::Inapplicable(_) => {
                Failure::Validation(e.to_string())
            }
            _ => Failure::Solver(e.to_string()),
        }
    }
}

#[derive(Parser)]
#[command(
    name = "solitonlab",
    version,
    about = "Coupled soliton experiments: ground states, thresholds, semiclassical sweeps"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// JSON experiment configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (defaults to the config's output_dir, then ./out).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Scalar ground states of the limit equation.
    #[command(name = "limit_ground")]
    LimitGround(RunArgs),
    /// Coupled ground state of the limit system.
    #[command(name = "coupled_ground")]
    CoupledGround(RunArgs),
    /// Threshold table for (m1, m2, beta).
    Thresholds(RunArgs),
    /// Penalized solves over a decreasing epsilon list.
    Sweep(RunArgs),
    /// Local Pohozaev balance at each epsilon.
    Pohozaev(RunArgs),
    /// Pointwise penalty check of the penalized solutions.
    Verify(RunArgs),
    /// SVG figures from a report directory.
    Plot {
        dir: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// List the potential presets.
    Presets {
        filter: Option<String>,
        #[arg(long)]
        json: bool,
    },
}

fn threads() -> usize {
    let cap = std::env::var("SOLITONLAB_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok());
    if let Some(n) = cap.filter(|n| *n > 0) {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    rayon::current_num_threads()
}

fn run_kind(kind: RunKind, args: &RunArgs) -> ExitCode {
    let start = Instant::now();
    let threads = threads();
    let loaded = ExperimentConfig::load(&args.config);
    let out = args
        .out
        .clone()
        .or_else(|| {
            loaded
                .as_ref()
                .ok()
                .and_then(|c| c.output_dir.clone().map(PathBuf::from))
        })
        .unwrap_or_else(|| PathBuf::from("out"));
    let seed = args
        .seed
        .or_else(|| loaded.as_ref().ok().and_then(|c| c.seed))
        .unwrap_or(0);
    let mut manifest = Manifest {
        subcommand: kind.name().to_string(),
        config_path: Some(args.config.display().to_string()),
        config_hash: None,
        version: env!("CARGO_PKG_VERSION"),
        seed,
        threads,
        status: "ok",
        exit_code: 0,
        error: None,
        files: Vec::new(),
        wall_times_s: BTreeMap::new(),
    };
    let result = loaded.and_then(|cfg| {
        let hash = cfg.hash(seed);
        manifest.config_hash = Some(hash.clone());
        let outcome = run::execute(&cfg, kind, &hash)?;
        fs::create_dir_all(&out).map_err(|e| Failure::Io(format!("{}: {e}", out.display())))?;
        manifest.files = outcome.tables.write(&out)?;
        manifest.wall_times_s = outcome.timings;
        match outcome.error {
            Some(e) => Err(e),
            None => Ok(()),
        }
    });
    manifest
        .wall_times_s
        .insert("total".into(), start.elapsed().as_secs_f64());
    let code = match &result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("solitonlab {}: {}", kind.name(), e.message());
            manifest.status = e.status();
            manifest.error = Some(e.message().to_string());
            e.code()
        }
    };
    manifest.exit_code = code as i32;
    if fs::create_dir_all(&out).is_ok() {
        if let Err(e) = manifest.write(&out) {
            eprintln!("solitonlab: {}", e.message());
        }
    }
    ExitCode::from(code)
}

#[derive(Serialize)]
struct PresetListing<'a> {
    name: &'a str,
    summary: &'a str,
    params: BTreeMap<&'a str, &'a str>,
}

fn presets(filter: Option<&str>, json: bool) -> ExitCode {
    let chosen: Vec<_> = PRESETS
        .iter()
        .filter(|p| filter.is_none_or(|f| p.name.contains(f)))
        .collect();
    if json {
        let listing: Vec<PresetListing> = chosen
            .iter()
            .map(|p| PresetListing {
                name: p.name,
                summary: p.summary,
                params: p.params.iter().copied().collect(),
            })
            .collect();
        println!(
            "{}",
            serde_json::to_string_pretty(&listing).expect("listing serializes")
        );
    } else {
        for p in chosen {
            println!("{}: {}", p.name, p.summary);
            for (k, v) in p.params {
                println!("    {k}: {v}");
            }
        }
    }
    ExitCode::SUCCESS
}

fn plot_dir(dir: &Path, out: Option<&Path>) -> ExitCode {
    match plot::plot(dir, out.unwrap_or(dir)) {
        Ok(files) => {
            for f in files {
                println!("{f}");
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("solitonlab plot: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match &cli.command {
        Command::LimitGround(a) => run_kind(RunKind::LimitGround, a),
        Command::CoupledGround(a) => run_kind(RunKind::CoupledGround, a),
        Command::Thresholds(a) => run_kind(RunKind::Thresholds, a),
        Command::Sweep(a) => run_kind(RunKind::Sweep, a),
        Command::Pohozaev(a) => run_kind(RunKind::Pohozaev, a),
        Command::Verify(a) => run_kind(RunKind::Verify, a),
        Command::Plot { dir, out } => plot_dir(dir, out.as_deref()),
        Command::Presets { filter, json } => presets(filter.as_deref(), *json),
    }
}
