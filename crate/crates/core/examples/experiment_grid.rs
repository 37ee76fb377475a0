//! Run a small method x scenario x seed grid and write its metrics files.
//!
//! cargo run --example experiment_grid -- [out_dir]

use fedrouter::datagen::Scenario;
use fedrouter::harness::{run_experiment, ExperimentConfig, Method};

fn main() -> fedrouter::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "grid_out".into());
    let mut cfg = ExperimentConfig {
        methods: vec![Method::FedRouter, Method::FedRouterStar, Method::FedAvg],
        scenarios: vec![Scenario::Dual, Scenario::All],
        seeds: vec![1, 2, 3],
        routing_dump: true,
        ..Default::default()
    };
    cfg.federation.rounds = 10;

    let report = run_experiment(&cfg, std::path::Path::new(&out))?;
    println!("config hash {}", report.config_hash);
    for r in &report.summary {
        let std = r.std.map_or(String::new(), |s| format!(" ± {s:.3}"));
        println!("{:<15} {:<6} {:.3}{std}", r.method, r.scenario, r.mean);
    }
    println!("files written to {out}/");
    Ok(())
}
