use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use log::{info, warn};

use mcv_core::config::ExperimentConfig;
use mcv_core::experiment;
use mcv_core::{McvError, Result};

#[derive(Parser)]
#[command(name = "mcv", version, about = "Conformal prediction benchmarks under missing covariates")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run an experiment and write its reports.
    Run {
        config: PathBuf,
        /// Output directory (overrides output.dir).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads; repetitions are the parallel unit.
        #[arg(long)]
        jobs: Option<usize>,
        /// d = 10, 500 repetitions, 100 test points per mask. Slow.
        #[arg(long)]
        full_scale: bool,
    },
    /// Check a config and print it with every default filled in.
    Validate { config: PathBuf },
}

fn env_seed() -> Result<Option<u64>> {
    match std::env::var("MCV_SEED") {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| McvError::Config(format!("MCV_SEED must be a non-negative integer, got {v:?}"))),
        Err(_) => Ok(None),
    }
}

fn load(path: &Path) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(s) = env_seed()? {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn main_inner(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::Validate { config } => {
            let cfg = load(&config)?;
            cfg.validate()?;
            print!("{cfg}");
        }
        Cmd::Run { config, out, seed, jobs, full_scale } => {
            let mut cfg = load(&config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(j) = jobs {
                cfg.jobs = j;
            }
            if full_scale {
                cfg.full_scale();
            }
            if let Some(dir) = out {
                cfg.output.dir = dir;
            }
            cfg.validate()?;
            let dir = cfg.output.dir.clone();
            std::fs::create_dir_all(&dir)?;
            let t = Instant::now();
            info!("running {} with seed {}", cfg.kind.as_str(), cfg.seed);
            let res = experiment::run(&cfg)?;
            experiment::write_outputs(&cfg, &res, &dir)?;
            info!("finished in {:.1}s", t.elapsed().as_secs_f64());
            print!("{}", experiment::digest(&res));
            if res.table.iter().any(|c| c.inf_frac > 0.0) {
                warn!("some intervals were infinite; see inf_frac in summary.csv");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match main_inner(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
