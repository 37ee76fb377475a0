//! Run the full protocol: local clustering, global clustering, round-robin
//! training and per-cluster aggregation.
//!
//! cargo run --example federation

use fedrouter::adapter::TrainConfig;
use fedrouter::datagen::{build_scenario, Scenario, ScenarioConfig};
use fedrouter::server::{run_federation, FederationConfig, RunOptions};

fn main() -> fedrouter::Result<()> {
    let fed = build_scenario(&ScenarioConfig {
        scenario: Scenario::Dual,
        master_seed: 2,
        ..Default::default()
    })?;
    let cfg = FederationConfig {
        master_seed: 2,
        ..Default::default()
    };
    let run = run_federation(&fed, &cfg, &TrainConfig::default(), &RunOptions::default())?;

    for (g, members) in run.model.membership.iter().enumerate() {
        println!("global cluster {g} (task {:?}): {members:?}", run.cluster_tasks[g]);
    }
    for client in run.model.clients() {
        println!("client {client} trains {:?} in turn", run.model.matched_clusters(client));
    }
    for r in run.rounds.iter().step_by(4) {
        println!("round {:>2}: accuracy {:.3}, loss {:.4}", r.round, r.accuracy, r.loss);
    }
    for t in run.trace.iter().filter(|t| t.client_id == 0).take(4) {
        println!("round {}: client 0 trained cluster {} on {} rows", t.round, t.global_cluster, t.samples);
    }
    Ok(())
}
