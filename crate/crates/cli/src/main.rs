//! `regulate`: scenario runner for the time-varying internal-model regulator.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use regulator::scenario::{check_scenario, export_plant, run_scenario, Overrides, ScenarioConfig};

#[derive(Parser)]
#[command(name = "regulate", version, about = "Robust output regulation with online frequency estimation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a scenario and write traces, manifest and summary.
    Run {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Structural checks without simulation.
    Check {
        #[command(flatten)]
        common: Common,
    },
    /// Run several scenarios (and seeds) in parallel, one directory each.
    Sweep {
        /// Scenario files or builtin names.
        #[arg(long = "config", required = true, num_args = 1..)]
        configs: Vec<String>,
        /// Seeds to run every scenario with; the configured seed if omitted.
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
        #[arg(long)]
        grid: Option<usize>,
        #[arg(long)]
        duration_scale: Option<f64>,
        #[arg(long, default_value = "sweep")]
        out: PathBuf,
        /// Worker threads (0: all cores).
        #[arg(long, default_value_t = 0)]
        jobs: usize,
    },
    /// Write the plant matrices of a scenario as a text bundle.
    ExportPlant {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "plant.txt")]
        out: PathBuf,
    },
}

#[derive(Args)]
struct Common {
    /// Scenario TOML file, run manifest, or builtin name.
    #[arg(long, default_value = "drug_delivery_desk")]
    config: String,
    #[arg(long)]
    seed: Option<u64>,
    /// Elements per side of the FEM grid.
    #[arg(long)]
    grid: Option<usize>,
    /// Multiplies the simulation horizon.
    #[arg(long)]
    duration_scale: Option<f64>,
}

impl Common {
    fn load(&self) -> regulator::Result<ScenarioConfig> {
        let mut cfg = ScenarioConfig::load(&self.config)?;
        cfg.apply(&Overrides {
            seed: self.seed,
            grid: self.grid,
            duration_scale: self.duration_scale,
        })?;
        Ok(cfg)
    }
}

fn run_one(cfg: ScenarioConfig, out: &Path) -> regulator::Result<bool> {
    let outcome = run_scenario(cfg, out)?;
    for d in &outcome.diagnostics {
        println!("{d}");
    }
    Ok(outcome.passed())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { common, out } => common.load().and_then(|cfg| {
            let ok = run_one(cfg, &out)?;
            println!("artifacts in {}", out.display());
            Ok(ok)
        }),
        Command::Check { common } => common.load().and_then(|cfg| {
            let report = check_scenario(&cfg)?;
            for d in &report {
                println!("{d}");
            }
            Ok(report.iter().all(|d| d.pass))
        }),
        Command::Sweep {
            configs,
            seeds,
            grid,
            duration_scale,
            out,
            jobs,
        } => sweep(&configs, &seeds, grid, duration_scale, &out, jobs),
        Command::ExportPlant { common, out } => common.load().and_then(|cfg| {
            std::fs::write(&out, export_plant(&cfg)?)?;
            println!("wrote {}", out.display());
            Ok(true)
        }),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn sweep(
    configs: &[String],
    seeds: &[u64],
    grid: Option<usize>,
    duration_scale: Option<f64>,
    out: &Path,
    jobs: usize,
) -> regulator::Result<bool> {
    let mut runs = Vec::new();
    for spec in configs {
        let base = ScenarioConfig::load(spec)?;
        let seed_list: Vec<Option<u64>> = if seeds.is_empty() {
            vec![None]
        } else {
            seeds.iter().map(|s| Some(*s)).collect()
        };
        for seed in seed_list {
            let mut cfg = base.clone();
            cfg.apply(&Overrides {
                seed,
                grid,
                duration_scale,
            })?;
            let dir = out.join(format!("{}-seed{}", cfg.name, cfg.simulation.seed));
            runs.push((cfg, dir));
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| regulator::Error::Argument(e.to_string()))?;
    let results: Vec<(PathBuf, regulator::Result<bool>)> = pool.install(|| {
        runs.into_par_iter()
            .map(|(cfg, dir)| {
                let r = run_scenario(cfg, &dir).map(|o| o.passed());
                (dir, r)
            })
            .collect()
    });
    let mut all = true;
    for (dir, r) in results {
        match r {
            Ok(pass) => {
                all &= pass;
                println!("{} {}", if pass { "PASS" } else { "FAIL" }, dir.display());
            }
            Err(e) => {
                all = false;
                println!("ERROR {}: {e}", dir.display());
            }
        }
    }
    Ok(all)
}
