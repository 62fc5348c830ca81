use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use dsqm_cli::config::parse_config;
use dsqm_cli::manifest::{verify, RunManifest};
use dsqm_cli::{plotdata, run_scenario, RunOptions};

/// Default output root when neither `--out` nor `output.dir` is given.
const OUT_ENV: &str = "DSQM_OUT";

const PASS: u8 = 0;
const CHECK_FAILED: u8 = 1;
const CONFIG_ERROR: u8 = 2;
const RUNTIME_ERROR: u8 = 3;

#[derive(Parser)]
#[command(name = "dsqm", version, about = "Run and verify dsqm scenarios")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario file.
    Run {
        config: PathBuf,
        /// Output directory for this run.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Replace the ensemble seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 1)]
        threads: usize,
        /// Write the manifest without running anything.
        #[arg(long)]
        dry_run: bool,
    },
    /// Re-verify checksums and checks recorded in a manifest.
    Check { manifest: PathBuf },
    /// Write gnuplot-ready columns for every snapshot of a run.
    ExportPlotdata { manifest: PathBuf },
}

fn main() -> ExitCode {
    let code = match Cli::parse().command {
        Command::Run { config, out, seed, threads, dry_run } => run(&config, out, seed, threads, dry_run),
        Command::Check { manifest } => check(&manifest),
        Command::ExportPlotdata { manifest } => export(&manifest),
    };
    ExitCode::from(code)
}

fn run(path: &Path, out: Option<PathBuf>, seed: Option<u64>, threads: usize, dry_run: bool) -> u8 {
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("{}: {e}", path.display());
            return CONFIG_ERROR;
        }
    };
    let mut config = match parse_config(&text) {
        Ok(c) => c,
        Err(errors) => {
            for e in errors {
                eprintln!("{}: {e}", path.display());
            }
            return CONFIG_ERROR;
        }
    };
    if let Some(seed) = seed {
        if let Err(e) = config.override_seed(seed) {
            eprintln!("--seed: {e}");
            return CONFIG_ERROR;
        }
    }
    let out_dir = out.or_else(|| config.output_dir.clone()).unwrap_or_else(|| {
        let root = std::env::var_os(OUT_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("runs"));
        root.join(format!("{}-{}", config.kind.name(), &config.hash()[..12]))
    });
    let options = RunOptions { out_dir: out_dir.clone(), threads, dry_run };
    let manifest = match run_scenario(&config, &options) {
        Ok(m) => m,
        Err(e) => {
            eprintln!("{e}");
            return RUNTIME_ERROR;
        }
    };
    for c in &manifest.checks {
        let verdict = if c.passed { "PASS" } else { "FAIL" };
        println!("{verdict} {} = {} (limit {})", c.name, c.value, c.threshold);
    }
    println!("manifest: {}", out_dir.join(dsqm_cli::manifest::MANIFEST_NAME).display());
    if let Some(e) = &manifest.error {
        eprintln!("run failed: {e}");
        return RUNTIME_ERROR;
    }
    if manifest.passed() { PASS } else { CHECK_FAILED }
}

fn load(path: &Path) -> Result<(RunManifest, PathBuf), u8> {
    let manifest = RunManifest::load(path).map_err(|e| {
        eprintln!("{}: {e}", path.display());
        CONFIG_ERROR
    })?;
    let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok((manifest, dir))
}

fn check(path: &Path) -> u8 {
    let (manifest, dir) = match load(path) {
        Ok(v) => v,
        Err(code) => return code,
    };
    match verify(&manifest, &dir) {
        Ok(problems) if problems.is_empty() => {
            println!("ok: {} files, {} checks", manifest.files.len(), manifest.checks.len());
            PASS
        }
        Ok(problems) => {
            for p in problems {
                println!("{p}");
            }
            CHECK_FAILED
        }
        Err(e) => {
            eprintln!("{}: {e}", dir.display());
            RUNTIME_ERROR
        }
    }
}

fn export(path: &Path) -> u8 {
    let (manifest, dir) = match load(path) {
        Ok(v) => v,
        Err(code) => return code,
    };
    match plotdata::export(&manifest, &dir) {
        Ok(paths) => {
            for p in paths {
                println!("{}", p.display());
            }
            PASS
        }
        Err(e) => {
            eprintln!("{e}");
            RUNTIME_ERROR
        }
    }
}
