//! Command-line front end for the experiment harness.

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use risloc::harness::config::{Config, ConfigError, SweepVariable};
use risloc::harness::localization::run_localization_sweep;
use risloc::harness::peb::run_peb_map;
use risloc::harness::tracking::{calibrate_noise, run_tracking_experiment};
use risloc::harness::HarnessError;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "risloc", version, about = "RIS localization and tracking experiments")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML configuration file; defaults apply to missing keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Base seed, overriding the file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory for CSV files.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    /// Trials per point (localization) or per run (tracking).
    #[arg(long, global = true)]
    trials: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Mean localization error of both methods over a parameter sweep.
    LocalizeSweep {
        /// delta_f | n_subcarriers | power_dbm | n_rx | N_T | T | ris_x | ris_y
        #[arg(long)]
        variable: Option<String>,
        /// Comma-separated sweep values.
        #[arg(long, value_delimiter = ',')]
        values: Option<Vec<f64>>,
    },
    /// Track a RIS along the configured path.
    Track,
    /// Position error bound over the configured grid.
    PebMap,
    /// Monte Carlo estimate of the measurement noise used by the tracker.
    CalibrateNoise,
}

enum Failure {
    Config(anyhow::Error),
    Harness(HarnessError),
    Io(anyhow::Error),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Self::Config(_) => 2,
            Self::Harness(e) => e.exit_code() as u8,
            Self::Io(_) => 1,
        }
    }
}

impl From<HarnessError> for Failure {
    fn from(e: HarnessError) -> Self {
        Self::Harness(e)
    }
}

fn load_config(common: &Common) -> Result<Config, Failure> {
    let mut cfg = match &common.config {
        Some(p) => Config::load(p).map_err(|e| Failure::Config(e.into()))?,
        None => Config::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(t) = common.trials {
        cfg.trials = t;
        cfg.tracking.trials = t;
    }
    Ok(cfg)
}

fn parse_variable(name: &str) -> Result<SweepVariable, Failure> {
    toml::Value::String(name.to_owned())
        .try_into()
        .map_err(|_| Failure::Config(anyhow::anyhow!("unknown sweep variable `{name}`")))
}

fn write(dir: &Path, name: &str, body: &str) -> Result<(), Failure> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display())).map_err(Failure::Io)?;
    let path = dir.join(name);
    std::fs::write(&path, body).with_context(|| format!("writing {}", path.display())).map_err(Failure::Io)?;
    println!("wrote {}", path.display());
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    let mut cfg = load_config(&cli.common)?;
    let out = &cli.common.out;
    match cli.command {
        Command::LocalizeSweep { variable, values } => {
            if let Some(v) = variable {
                cfg.sweep.variable = parse_variable(&v)?;
            }
            if let Some(v) = values {
                cfg.sweep.values = v;
            }
            cfg.validate().map_err(|e: ConfigError| Failure::Config(e.into()))?;
            let r = run_localization_sweep(&cfg)?;
            for p in &r.points {
                println!(
                    "{} = {}: proposed {:.4} m, path-length only {:.4} m",
                    r.variable.name(),
                    p.value,
                    p.mean_proposed,
                    p.mean_toa
                );
            }
            write(out, "localize_sweep.csv", &r.summary_csv)?;
            write(out, "localize_trials.csv", &r.trials_csv)?;
        }
        Command::Track => {
            cfg.validate().map_err(|e| Failure::Config(e.into()))?;
            let r = run_tracking_experiment(&cfg)?;
            let (first, last) = r.quarter_means();
            println!(
                "path mean error: tracking {:.4} m, per-step fix {:.4} m; first quarter {:.4} m, last quarter {:.4} m; skipped updates {}",
                r.path_mean_track(),
                r.path_mean_loc(),
                first,
                last,
                r.skipped_steps()
            );
            write(out, "track.csv", &r.csv)?;
            write(out, "track_summary.csv", &r.summary_csv)?;
        }
        Command::PebMap => {
            cfg.validate().map_err(|e| Failure::Config(e.into()))?;
            let m = run_peb_map(&cfg)?;
            let finite = m.cells.iter().filter(|c| c.peb_db.is_some()).count();
            println!("{finite} of {} cells evaluated", m.cells.len());
            write(out, "peb_map.csv", &m.csv)?;
        }
        Command::CalibrateNoise => {
            cfg.validate().map_err(|e| Failure::Config(e.into()))?;
            let c = calibrate_noise(&cfg)?;
            println!("alpha variance {:.4e}, path-length quantization variance {:.4e} m^2", c.alpha_var(), c.xi_var_quant);
            write(out, "calibrate_noise.csv", &c.csv)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            match &f {
                Failure::Config(e) => eprintln!("error: {e}"),
                Failure::Io(e) => eprintln!("error: {e:#}"),
                Failure::Harness(e) => eprintln!("error: {e}"),
            }
            ExitCode::from(f.code())
        }
    }
}
