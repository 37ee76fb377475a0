//! Compare the routed protocol with FedAvg, local-only training and client
//! clustering on clients that each hold all (conflicting) tasks.
//!
//! cargo run --example baselines

use fedrouter::adapter::TrainConfig;
use fedrouter::baselines::{run_fedavg, run_fedcluster, run_local_only};
use fedrouter::datagen::{build_scenario, ScenarioConfig};
use fedrouter::server::{run_federation, FederationConfig, GlobalClusterCount, LocalClusterPolicy, RunOptions};

fn main() -> fedrouter::Result<()> {
    let fed = build_scenario(&ScenarioConfig {
        master_seed: 4,
        ..Default::default()
    })?;
    let cfg = FederationConfig {
        master_seed: 4,
        ..Default::default()
    };
    let train = TrainConfig::default();

    let routed = run_federation(&fed, &cfg, &train, &RunOptions::default())?;
    let last = |r: &[fedrouter::metrics::RoundRecord]| r.last().map_or(0.0, |r| r.accuracy);
    println!("fedrouter  {:.3}", last(&routed.rounds));
    println!("fedavg     {:.3}", last(&run_fedavg(&fed, &cfg, &train)?.rounds));
    println!("local      {:.3}", last(&run_local_only(&fed, &cfg, &train)?.rounds));
    let clustered = run_fedcluster(&fed, &cfg, &train)?;
    println!("fedcluster {:.3} (client groups {:?})", last(&clustered.rounds), clustered.groups);

    // One local and one global cluster turn the protocol into FedAvg.
    let one = FederationConfig {
        n_g: GlobalClusterCount::Fixed(1),
        ..cfg.clone()
    };
    let opts = RunOptions {
        local_clusters: LocalClusterPolicy::Fixed(1),
        ..Default::default()
    };
    let reduced = run_federation(&fed, &one, &train, &opts)?;
    let avg = run_fedavg(&fed, &one, &train)?;
    println!(
        "n_l = n_g = 1 vs FedAvg: max parameter difference {:e}",
        reduced.model.adapters[0].max_abs_diff(&avg.adapters[0])?
    );
    Ok(())
}
