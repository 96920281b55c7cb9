use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use regpd::verify::{VerifyLevel, VerifyOptions};
use regpd_cli::commands::{self, SweepParam};
use regpd_cli::config::ExperimentConfig;
use regpd_cli::{resolve_output_dir, CliError};

#[derive(Parser)]
#[command(name = "regpd", version, about = "Distributed regularized primal-dual experiments")]
struct Cli {
    /// Worker threads (defaults to the number of cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Flat `key = value` config file, or a run manifest (`.json`).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Output directory (overrides `output_dir`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Record metrics every k iterations (overrides `run.record_every`).
    #[arg(long)]
    record_every: Option<usize>,
}

impl Common {
    fn config(&self) -> Result<ExperimentConfig, CliError> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        for o in &self.overrides {
            cfg.apply_override(o)?;
        }
        if let Some(out) = &self.out {
            cfg.output_dir = out.clone();
        }
        if let Some(k) = self.record_every {
            cfg.run.record_every = k;
        }
        Ok(cfg)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Level {
    Quick,
    Full,
}

#[derive(Subcommand)]
enum Command {
    /// Write the edge list, weight matrix and spectral report of the configured graph.
    GenerateGraph(Common),
    /// Run one experiment and persist its trace and manifest.
    Run(Common),
    /// Run one experiment per value of a parameter and write a summary table.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// eta, n, T, graph, variant, or r (sets eta = T^-r).
        #[arg(long)]
        param: String,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', num_args = 0..)]
        values: Vec<String>,
    },
    /// Check invariants and theoretical bounds outside the test suite.
    Verify {
        #[arg(long, value_enum, default_value = "quick")]
        level: Level,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also write the outcomes as JSON into this directory.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, hide = true, default_value_t = 10_000)]
        iterations: usize,
        #[arg(long, hide = true, default_value_t = 1_000_000)]
        reference_iterations: usize,
        #[arg(long, hide = true)]
        mutate_dual_sign: bool,
    },
}

fn execute(cli: Cli) -> Result<(), CliError> {
    if let Some(k) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build_global()
            .map_err(|e| CliError::Config(format!("--threads: {e}")))?;
    }
    match cli.command {
        Command::GenerateGraph(common) => {
            let cfg = common.config()?;
            let out = resolve_output_dir(&cfg.output_dir);
            let report = commands::generate_graph(&cfg, &out)?;
            println!(
                "{} n={} edges={} sigma2={} gap={} 71n^2 margin={}",
                report.family, report.n, report.edges, report.sigma2, report.spectral_gap, report.bound_margin
            );
            println!("wrote {}", out.display());
            Ok(())
        }
        Command::Run(common) => {
            let cfg = common.config()?;
            let out = resolve_output_dir(&cfg.output_dir);
            let summary = commands::run_experiment(&cfg, &out, &commands::default_cache_dir(&out))?;
            let show = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:.6e}"));
            println!(
                "T={} eps_G={} delta_G={} violation={}",
                summary.iterations_completed,
                show(summary.final_eps),
                show(summary.final_delta),
                show(summary.final_violation)
            );
            println!("wrote {}", out.display());
            Ok(())
        }
        Command::Sweep { common, param, values } => {
            let cfg = common.config()?;
            let param: SweepParam = param.parse().map_err(CliError::Config)?;
            let out = resolve_output_dir(&cfg.output_dir);
            let report = commands::sweep(&cfg, param, &values, &out)?;
            for leg in &report.legs {
                match &leg.result {
                    Ok(s) => println!("{param}={} completed eps_G={:?}", leg.value, s.final_eps),
                    Err(e) => println!("{param}={} failed: {e}", leg.value),
                }
            }
            println!("wrote {}", out.join("summary.csv").display());
            match report.exit_code() {
                0 => Ok(()),
                3 => Err(CliError::Diverged("one or more sweep legs diverged".into())),
                _ => Err(CliError::Config("one or more sweep legs failed".into())),
            }
        }
        Command::Verify { level, seed, out, iterations, reference_iterations, mutate_dual_sign } => {
            let opts = VerifyOptions {
                level: match level {
                    Level::Quick => VerifyLevel::Quick,
                    Level::Full => VerifyLevel::Full,
                },
                seed,
                iterations,
                reference_iterations,
                flip_dual_sign: mutate_dual_sign,
            };
            let results = commands::verify(&opts, out.as_deref())?;
            print!("{}", commands::format_outcomes(&results));
            let failed: Vec<String> =
                results.iter().filter(|r| !r.passed).map(|r| format!("{} ({})", r.name, r.detail)).collect();
            if failed.is_empty() {
                Ok(())
            } else {
                Err(CliError::Verification(failed.join("; ")))
            }
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
