use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use stokes_bench::config::{parse_config, Mode};
use stokes_bench::presets::{find, PRESETS};
use stokes_bench::runner::{execute, Invocation};
use stokes_bench::{CliError, CliResult};

#[derive(Parser)]
#[command(name = "stokes-bench", version, about = "Convergence experiments for staggered-grid Stokes preconditioners")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Preconditioned GMRES solves; one convergence CSV per sweep point.
    Run(Common),
    /// Pressure and velocity multigrid alone; per-cycle residual CSVs.
    MgBench(Common),
    /// Dense eigenvalue reports (small grids only).
    Spectrum(Common),
    /// Shipped presets.
    Presets {
        #[command(subcommand)]
        action: PresetAction,
    },
}

#[derive(Subcommand)]
enum PresetAction {
    List,
    /// Print a preset's configuration.
    Show {
        name: String,
        #[arg(long)]
        full_scale: bool,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long, value_name = "PATH", required_unless_present = "preset", conflicts_with = "preset")]
    config: Option<PathBuf>,
    #[arg(long, value_name = "NAME")]
    preset: Option<String>,
    /// Output directory [default: config `output.dir`, else stokes-bench-out/<name>]
    #[arg(long, value_name = "DIR", env = "STOKES_BENCH_OUT")]
    out: Option<PathBuf>,
    /// Sweep points run concurrently.
    #[arg(long, value_name = "N", default_value_t = 1)]
    jobs: usize,
    /// Overrides `problem.seed` for every run.
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    /// Use the full problem sizes of a preset.
    #[arg(long)]
    full_scale: bool,
}

fn invocation(mode: Mode, c: Common) -> CliResult<Invocation> {
    let (config, source, stem) = match (&c.config, &c.preset) {
        (Some(path), _) => {
            if c.full_scale {
                return Err(CliError::Config("--full-scale applies to presets only".into()));
            }
            let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
            let stem = path.file_stem().map_or("config".into(), |s| s.to_string_lossy().into_owned());
            (parse_config(&text)?, path.display().to_string(), stem)
        }
        (None, Some(name)) => {
            let p = find(name)?;
            if p.mode != mode {
                return Err(CliError::Config(format!("preset {name} belongs to the {} command", p.mode.name())));
            }
            (p.value(c.full_scale)?, name.clone(), name.clone())
        }
        (None, None) => unreachable!("clap requires an input"),
    };
    let configured = config.get("output").and_then(|o| o.get("dir")).and_then(|d| d.as_str()).map(PathBuf::from);
    let out_dir = c.out.or(configured).unwrap_or_else(|| PathBuf::from("stokes-bench-out").join(stem));
    Ok(Invocation { mode, config, source, out_dir, jobs: c.jobs, seed: c.seed })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (mode, common) = match cli.command {
        Command::Run(c) => (Mode::Run, c),
        Command::MgBench(c) => (Mode::MgBench, c),
        Command::Spectrum(c) => (Mode::Spectrum, c),
        Command::Presets { action: PresetAction::List } => {
            for p in PRESETS {
                println!("{:<26} {:<9} {}", p.name, p.mode.name(), p.description);
            }
            return ExitCode::SUCCESS;
        }
        Command::Presets { action: PresetAction::Show { name, full_scale } } => {
            return match find(&name).and_then(|p| p.source(full_scale)) {
                Ok(text) => {
                    print!("{text}");
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(2)
                }
            };
        }
    };
    let result = invocation(mode, common).and_then(|inv| {
        let code = execute(&inv)?;
        eprintln!("wrote {}", inv.out_dir.display());
        Ok(code)
    });
    match result {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
