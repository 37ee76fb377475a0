//! Route test samples to adapters by nearest centroid, with and without
//! access to the global centroids. Clients train on one task but are tested
//! on all of them.
//!
//! cargo run --example evaluation_router

use fedrouter::adapter::TrainConfig;
use fedrouter::datagen::{build_scenario, Scenario, ScenarioConfig};
use fedrouter::router::{batch_evaluate, EvalMode, Router};
use fedrouter::server::{run_federation, FederationConfig, RunOptions};

fn main() -> fedrouter::Result<()> {
    let fed = build_scenario(&ScenarioConfig {
        scenario: Scenario::Single,
        test_all_tasks: true,
        master_seed: 5,
        ..Default::default()
    })?;
    let cfg = FederationConfig {
        master_seed: 5,
        ..Default::default()
    };
    let run = run_federation(&fed, &cfg, &TrainConfig::default(), &RunOptions::default())?;

    for mode in [EvalMode::Local, EvalMode::Global] {
        let router = Router::new(mode, &run.clients[0], &run.model)?;
        let out = batch_evaluate(&fed.clients[0].test, &router, &run.cluster_tasks)?;
        let r = out.tally.to_record(cfg.rounds);
        println!(
            "{:<6} accuracy {:.3}, routing accuracy {:.3}, adapters used {}",
            mode.name(),
            r.accuracy,
            r.routing_accuracy.unwrap_or(0.0),
            r.adapter_activations
        );
        println!("       per task {:?}", r.per_task_accuracy);
        let d = out.decisions[0];
        println!("       sample 0 -> cluster {} at distance {:.3}", d.global_cluster, d.distance);
    }
    Ok(())
}
