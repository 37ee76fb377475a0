use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use fedrouter::datagen::{build_scenario, Scenario};
use fedrouter::harness::{
    export_embeddings, run_experiment, silhouette_report, ExperimentConfig, Method, SilhouetteScope,
};
use fedrouter::router::EvalMode;

#[derive(Parser)]
#[command(name = "fedrouter", version, about = "Clustered federated learning simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment grid and write metrics files.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        method: Option<Method>,
        #[arg(long)]
        scenario: Option<Scenario>,
        #[arg(long)]
        eval_mode: Option<EvalMode>,
        /// Comma-separated master seeds.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        #[arg(long)]
        auto_k: bool,
        #[arg(long, default_value = "results")]
        out: PathBuf,
    },
    /// Print a silhouette-vs-k table as CSV.
    Silhouette {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        scope: SilhouetteScope,
        #[arg(long, default_value = "all")]
        scenario: Scenario,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 2)]
        k_min: usize,
        #[arg(long, default_value_t = 8)]
        k_max: usize,
        /// Write to this file instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Export per-client embeddings with their local cluster ids.
    ExportEmbeddings {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "all")]
        scenario: Scenario,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value = "embeddings")]
        out: PathBuf,
    },
}

fn load(path: Option<&PathBuf>) -> fedrouter::Result<ExperimentConfig> {
    match path {
        Some(p) => ExperimentConfig::from_path(p),
        None => Ok(ExperimentConfig::default()),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> fedrouter::Result<()> {
    match cli.command {
        Command::Run {
            config,
            method,
            scenario,
            eval_mode,
            seeds,
            auto_k,
            out,
        } => {
            let mut cfg = ExperimentConfig::from_path(&config)?;
            if let Some(m) = method {
                cfg.methods = vec![m];
            }
            if let Some(s) = scenario {
                cfg.scenarios = vec![s];
            }
            if let Some(m) = eval_mode {
                cfg.eval_mode = m;
            }
            if let Some(s) = seeds {
                cfg.seeds = s;
            }
            cfg.auto_k |= auto_k;
            let report = run_experiment(&cfg, &out)?;
            for r in &report.summary {
                let std = r.std.map(|s| format!(" ± {s:.3}")).unwrap_or_default();
                println!("{:<15} {:<7} {:.3}{std}", r.method, r.scenario, r.mean);
            }
            Ok(())
        }
        Command::Silhouette {
            config,
            scope,
            scenario,
            seed,
            k_min,
            k_max,
            out,
        } => {
            let cfg = load(config.as_ref())?;
            let table = silhouette_report(&cfg.scenario_config(scenario, seed), scope, k_min, k_max)?;
            let header = format!("config_hash={} master_seed={seed}", cfg.config_hash());
            match out {
                Some(p) => table.write_csv(std::io::BufWriter::new(std::fs::File::create(p)?), &header)?,
                None => table.write_csv(std::io::stdout().lock(), &header)?,
            }
            if let Some(k) = table.best_k {
                writeln!(std::io::stderr(), "best k = {k}")?;
            }
            Ok(())
        }
        Command::ExportEmbeddings {
            config,
            scenario,
            seed,
            out,
        } => {
            let cfg = load(config.as_ref())?;
            let fed = build_scenario(&cfg.scenario_config(scenario, seed))?;
            let header = format!("config_hash={} master_seed={seed}", cfg.config_hash());
            let paths = export_embeddings(&fed, cfg.local_policy(scenario), &out, &header)?;
            println!("wrote {} files to {}", paths.len(), out.display());
            Ok(())
        }
    }
}
