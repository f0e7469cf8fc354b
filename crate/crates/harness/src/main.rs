use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use napinn::pde::BenchmarkKind;
use napinn::trainer::Method;
use napinn_harness::report::{write_results, write_summary};
use napinn_harness::{
    collect_runs, emit_plot_data, evaluate_checkpoint, generate, run_cell, run_matrix, sweep_rejection_cost,
    Cell, ConfigError, ExperimentConfig, Preset, ReferenceCache, RunError,
};

#[derive(Parser)]
#[command(name = "napinn", version, about = "Gated PINN experiments: data, training, evaluation and figure data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML experiment config; omitted keys come from its preset (desk by default).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory, overriding the config's `out`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Added to every configured seed.
    #[arg(long, default_value_t = 0)]
    seed_offset: u64,
    /// Parallel runs; defaults to the number of cores.
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Solve reference fields and write corrupted sensor datasets.
    Generate(Common),
    /// Train and evaluate a single run.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_parser = parse_benchmark, default_value = "allen_cahn")]
        benchmark: BenchmarkKind,
        /// napinn | vanilla | lad | orpinn:<q>
        #[arg(long, default_value = "napinn")]
        method: Method,
        #[arg(long, default_value_t = 0.1)]
        ratio: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Re-evaluate one checkpointed run, or aggregate every run under the output directory.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// A run directory `<out>/<benchmark>/<method>/<ratio>/<seed>`.
        #[arg(long)]
        run: Option<PathBuf>,
    },
    /// Every benchmark x method x ratio x seed, then results.csv and summary.csv.
    Matrix(Common),
    /// Rejection-cost sweep of the gated method.
    Sweep(Common),
    /// Figure-data CSVs from a results directory.
    Plots(Common),
}

fn parse_benchmark(s: &str) -> Result<BenchmarkKind, String> {
    [
        BenchmarkKind::AllenCahn,
        BenchmarkKind::Burgers,
        BenchmarkKind::LambdaOmega,
    ]
    .into_iter()
    .find(|k| k.name() == s)
    .ok_or_else(|| format!("unknown benchmark {s:?}; expected allen_cahn, burgers or lambda_omega"))
}

impl Common {
    fn config(&self) -> Result<ExperimentConfig, ConfigError> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => {
                // reuse the echo of an earlier run when pointed at its directory
                let echo = self
                    .out
                    .as_ref()
                    .map(|o| o.join("config.toml"))
                    .filter(|p| p.exists());
                match echo {
                    Some(path) => ExperimentConfig::load(&path)?,
                    None => ExperimentConfig::preset(Preset::Desk),
                }
            }
        };
        if let Some(out) = &self.out {
            cfg.out = out.clone();
        }
        Ok(cfg)
    }

    fn jobs(&self) -> usize {
        self.jobs
            .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
            .max(1)
    }
}

fn common(cmd: &Command) -> &Common {
    match cmd {
        Command::Generate(c) | Command::Matrix(c) | Command::Sweep(c) | Command::Plots(c) => c,
        Command::Train { common, .. } | Command::Evaluate { common, .. } => common,
    }
}

fn run(cmd: Command, cfg: ExperimentConfig) -> anyhow::Result<ExitCode> {
    let c = common(&cmd).clone();
    match cmd {
        Command::Generate(_) => {
            let written = generate(&cfg, c.seed_offset)?;
            println!("wrote {} files under {}", written.len(), cfg.out.display());
        }
        Command::Train {
            benchmark,
            method,
            ratio,
            seed,
            ..
        } => {
            let cell = Cell {
                benchmark,
                method,
                staged: cfg.train.staged,
                ratio,
                seed: seed + c.seed_offset,
                lambda_rej: cfg.train.lambda_rej,
            };
            napinn_harness::pipeline::echo_config(&cfg, &cfg.out)?;
            let prepared =
                napinn_harness::prepare(&cfg, &ReferenceCache::new(cfg.out.join("cache")), benchmark)?;
            let dir = cfg.out.join(cell.relative_dir());
            let out = run_cell(&cfg, &prepared, &cell, Some(&dir))?;
            println!("{}", out.report.to_json()?);
            eprintln!("run written to {}", dir.display());
        }
        Command::Evaluate { run: Some(dir), .. } => {
            let report =
                evaluate_checkpoint(&cfg, &dir).with_context(|| format!("evaluating {}", dir.display()))?;
            println!("{}", report.to_json()?);
        }
        Command::Evaluate { run: None, .. } => {
            let runs = collect_runs(&cfg.out)?;
            if runs.is_empty() {
                return Err(RunError::NoResults(cfg.out.clone()).into());
            }
            let reports: Vec<_> = runs.into_iter().map(|(_, r)| r).collect();
            write_results(&cfg.out.join("results.csv"), &reports)?;
            write_summary(&cfg.out.join("summary.csv"), &cfg.scale_label(), &reports)?;
            println!(
                "aggregated {} runs into {}",
                reports.len(),
                cfg.out.join("summary.csv").display()
            );
        }
        Command::Matrix(_) => {
            let outcome = run_matrix(&cfg, c.seed_offset, c.jobs())?;
            println!(
                "{} runs finished, {} failed; summary at {}",
                outcome.reports.len(),
                outcome.failures.len(),
                cfg.out.join("summary.csv").display()
            );
            for f in &outcome.failures {
                eprintln!("failed {}: {}", f.cell.relative_dir().display(), f.cause);
            }
            if !outcome.failures.is_empty() {
                return Ok(ExitCode::from(1));
            }
        }
        Command::Sweep(_) => {
            let rows = sweep_rejection_cost(&cfg, c.seed_offset, c.jobs())?;
            println!("lambda_rej,seed,rmae,rmse,rejected_fraction");
            for r in rows {
                println!(
                    "{},{},{:.4},{:.4},{:.4}",
                    r.lambda_rej, r.seed, r.rmae, r.rmse, r.rejected_fraction
                );
            }
        }
        Command::Plots(_) => {
            let out = emit_plot_data(&cfg.out)?;
            for p in &out.written {
                println!("{}", p.display());
            }
            for m in &out.missing {
                eprintln!("skipped {m}");
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let cfg = match common(&cli.command).config() {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    match run(cli.command, cfg) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            let config_error = matches!(e.downcast_ref::<RunError>(), Some(RunError::Config(_)));
            ExitCode::from(if config_error { 2 } else { 1 })
        }
    }
}
