mod commands;
mod output;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use jring::config::RunConfig;

/// Josephson-ring circulator toolkit.
#[derive(Debug, Parser)]
#[command(name = "jring", version, about)]
struct Cli {
    /// TOML run configuration; missing sections take their defaults.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Output directory (created if missing).
    #[arg(long, global = true, value_name = "DIR", default_value = ".")]
    out: PathBuf,
    /// Overrides `seed` from the config.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Worker threads; overrides `threads` from the config. 0 = all cores.
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Transition-frequency sweep over flux or a gate charge.
    Spectrum,
    /// Sector-averaged scattering matrices and circulation scores over a drive grid.
    Smatrix,
    /// Fit device parameters to observed dip frequencies.
    Fit {
        /// `axis_value,freq_ghz` CSV; overrides `fit.observed`.
        #[arg(long, value_name = "PATH")]
        observed: Option<PathBuf>,
    },
    /// Solve the line gains from an off-resonant matrix and correct on-resonant data.
    Calibrate {
        /// Overrides `calibrate.m_off`.
        #[arg(long, value_name = "PATH")]
        m_off: Option<PathBuf>,
        /// Overrides `calibrate.m_on`.
        #[arg(long, value_name = "PATH")]
        m_on: Option<PathBuf>,
    },
    /// Train a Gaussian HMM on a time series and decode the state path.
    Hmm {
        /// Time-series CSV; overrides `hmm.input`.
        #[arg(long, value_name = "PATH")]
        input: Option<PathBuf>,
    },
    /// Draw a synthetic switching time series.
    SimulateTimeseries,
}

/// Data paths in a config file are relative to the file's directory.
fn resolve_paths(cfg: &mut RunConfig, dir: &Path) {
    for p in [
        &mut cfg.fit.observed,
        &mut cfg.calibrate.m_off,
        &mut cfg.calibrate.m_on,
        &mut cfg.hmm.input,
    ]
    .into_iter()
    .flatten()
    {
        if p.is_relative() {
            *p = dir.join(&*p);
        }
    }
}

fn run(cli: Cli) -> Result<(), commands::Failure> {
    let (mut cfg, config_input) = match &cli.config {
        Some(path) => {
            let text = output::read_input(path)?;
            let mut cfg = RunConfig::from_toml(&text).map_err(|e| commands::Failure::from_core(e, Some(path)))?;
            resolve_paths(&mut cfg, path.parent().unwrap_or(Path::new("")));
            (cfg, Some(output::Input::new(path, &text)))
        }
        None => (RunConfig::default(), None),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(threads) = cli.threads {
        cfg.threads = threads;
    }
    match &cli.command {
        Command::Fit { observed: Some(p) } => cfg.fit.observed = Some(p.clone()),
        Command::Calibrate { m_off, m_on } => {
            if let Some(p) = m_off {
                cfg.calibrate.m_off = Some(p.clone());
            }
            if let Some(p) = m_on {
                cfg.calibrate.m_on = Some(p.clone());
            }
        }
        Command::Hmm { input: Some(p) } => cfg.hmm.input = Some(p.clone()),
        _ => {}
    }
    cfg.validate().map_err(|e| commands::Failure::from_core(e, None))?;
    if cfg.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.threads)
            .build_global()
            .map_err(|e| commands::Failure::Config(format!("threads: {e}")))?;
    }

    let ctx = commands::Context::new(cfg, cli.out, config_input)?;
    match cli.command {
        Command::Spectrum => commands::spectrum(&ctx),
        Command::Smatrix => commands::smatrix(&ctx),
        Command::Fit { .. } => commands::fit(&ctx),
        Command::Calibrate { .. } => commands::calibrate(&ctx),
        Command::Hmm { .. } => commands::hmm(&ctx),
        Command::SimulateTimeseries => commands::simulate(&ctx),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("jring: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
