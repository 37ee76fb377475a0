//! Cluster one client's embeddings and pick the cluster count by silhouette.
//!
//! cargo run --example kmeans_silhouette

use fedrouter::clustering::{kmeans_fit, select_k_silhouette};
use fedrouter::datagen::{build_scenario, Scenario, ScenarioConfig};

fn main() -> fedrouter::Result<()> {
    let fed = build_scenario(&ScenarioConfig {
        scenario: Scenario::Dual,
        master_seed: 3,
        ..Default::default()
    })?;
    let client = &fed.clients[0];
    let points = client.train.embeddings();

    let sel = select_k_silhouette(&points, 2, 8, 11)?;
    for (k, s) in &sel.scores {
        println!("k = {k}: silhouette {s:.4}");
    }
    println!("selected k = {} (client holds tasks {:?})", sel.best_k, client.tasks);

    let fit = kmeans_fit(&points, sel.best_k, 11)?;
    for c in 0..fit.k() {
        let tasks: std::collections::BTreeSet<usize> =
            fit.members(c).iter().map(|&i| client.train.rows()[i].task_id).collect();
        println!("cluster {c}: {} rows, tasks {tasks:?}", fit.members(c).len());
    }
    println!("inertia {:.2}", fit.inertia);
    Ok(())
}
