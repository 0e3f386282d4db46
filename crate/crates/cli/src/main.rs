//! `spincat`: run configs and presets, sweep parameters, replay amplitude
//! streams.
//!
//! Exit codes: 0 success, 2 config error, 3 numerical-health error, 4 I/O
//! error. Failures print a JSON object on stderr. Relative output
//! directories are placed under `$SPINCAT_OUTPUT_ROOT` when it is set.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::json;
use spincat::io::config::{load_config, Mode, RunConfig};
use spincat::io::runner::{replay, run, RunManifest};
use spincat::observables::SpatialGrid;
use spincat::Error;

pub const OUTPUT_ROOT_VAR: &str = "SPINCAT_OUTPUT_ROOT";

#[derive(Parser)]
#[command(name = "spincat", version, about = "Single-spin cantilever measurement simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a config file.
    Run { config: PathBuf },
    /// Run a compiled-in preset (fig2, fig3, fig4).
    Preset {
        name: String,
        #[arg(long)]
        out: PathBuf,
        /// Override the end time.
        #[arg(long)]
        tau_end: Option<f64>,
        /// Override the run mode.
        #[arg(long)]
        mode: Option<String>,
        /// Only write the expanded config.
        #[arg(long)]
        dry_run: bool,
    },
    /// Run the [sweep] section of a config file.
    Sweep { config: PathBuf },
    /// Recompute observables from an amplitude stream.
    Replay {
        stream: PathBuf,
        /// Also redo the peak analysis.
        #[arg(long)]
        analyze: bool,
        /// Output directory (default: `replay` next to the stream).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Density grid as `z_min,z_max,points`.
        #[arg(long, allow_hyphen_values = true)]
        grid: Option<String>,
    },
}

fn exit_code(e: &Error) -> u8 {
    if e.is_numerical() {
        3
    } else if e.is_config() {
        2
    } else {
        4
    }
}

fn kind(e: &Error) -> &'static str {
    match exit_code(e) {
        2 => "config",
        3 => "numerical",
        _ => "io",
    }
}

fn rooted(path: &Path) -> PathBuf {
    match std::env::var_os(OUTPUT_ROOT_VAR) {
        Some(root) if path.is_relative() => Path::new(&root).join(path),
        _ => path.to_path_buf(),
    }
}

fn report(manifest: &RunManifest) {
    let line = json!({
        "status": "ok",
        "output": manifest.config.output,
        "mode": manifest.config.mode,
        "wall_seconds": manifest.wall_seconds,
        "files": manifest.files.len(),
        "health": manifest.health,
    });
    println!("{line}");
}

fn execute(mut config: RunConfig) -> Result<(), Error> {
    config.output = rooted(&config.output);
    let manifest = run(&config)?;
    report(&manifest);
    Ok(())
}

fn parse_grid(text: &str) -> Result<SpatialGrid, Error> {
    let parts: Vec<&str> = text.split(',').map(str::trim).collect();
    let bad = || Error::Config {
        line: 0,
        reason: format!("grid must be `z_min,z_max,points`, got `{text}`"),
    };
    let [lo, hi, n] = parts.as_slice() else {
        return Err(bad());
    };
    SpatialGrid::new(
        lo.parse().map_err(|_| bad())?,
        hi.parse().map_err(|_| bad())?,
        n.parse().map_err(|_| bad())?,
    )
}

fn dispatch(command: Command) -> Result<(), Error> {
    match command {
        Command::Run { config } => execute(load_config(&config)?),
        Command::Preset {
            name,
            out,
            tau_end,
            mode,
            dry_run,
        } => {
            let mut config = RunConfig::preset(&name)?;
            config.output = out;
            if let Some(t) = tau_end {
                config.tau_end = t;
            }
            if let Some(m) = mode {
                config.mode = serde_json::from_value::<Mode>(json!(m)).map_err(|_| Error::Config {
                    line: 0,
                    reason: format!("unknown mode `{m}`"),
                })?;
            }
            config.validate()?;
            if dry_run {
                let dir = rooted(&config.output);
                std::fs::create_dir_all(&dir)?;
                let file = dir.join("config.toml");
                std::fs::write(&file, config.to_text())?;
                println!("{}", json!({"status": "ok", "config": file}));
                return Ok(());
            }
            execute(config)
        }
        Command::Sweep { config } => {
            let mut config = load_config(&config)?;
            if config.sweep.is_none() {
                return Err(Error::Config {
                    line: 0,
                    reason: "sweep needs a [sweep] section".into(),
                });
            }
            config.mode = Mode::Sweep;
            execute(config)
        }
        Command::Replay {
            stream,
            analyze,
            out,
            grid,
        } => {
            let grid = grid.as_deref().map(parse_grid).transpose()?.unwrap_or_default();
            let out = out
                .map(|o| rooted(&o))
                .unwrap_or_else(|| stream.parent().unwrap_or(Path::new(".")).join("replay"));
            let r = replay(&stream, grid, analyze, &out)?;
            let line = json!({
                "status": "ok",
                "records": r.records,
                "first_tau": r.first_tau,
                "last_tau": r.last_tau,
                "max_norm_deviation": r.max_norm_deviation,
                "first_split": r.splits.as_ref().and_then(|s| s.first_split()),
                "files": r.files,
            });
            println!("{line}");
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = exit_code(&e);
            let line = json!({
                "status": "error",
                "kind": kind(&e),
                "exit_code": code,
                "message": e.to_string(),
            });
            eprintln!("{line}");
            ExitCode::from(code)
        }
    }
}
