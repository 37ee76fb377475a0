//! Bring your own embeddings: write per-client CSV files, read them back and
//! run local clustering on the imported rows.
//!
//! cargo run --example custom_embeddings -- [file.csv ...]

use std::path::PathBuf;

use fedrouter::client::client_setup_auto;
use fedrouter::datagen::{build_scenario, export_embeddings, import_embeddings, Scenario, ScenarioConfig};

fn main() -> fedrouter::Result<()> {
    let mut paths: Vec<PathBuf> = std::env::args().skip(1).map(PathBuf::from).collect();
    if paths.is_empty() {
        let dir = std::env::temp_dir().join("fedrouter_custom_embeddings");
        std::fs::create_dir_all(&dir)?;
        let fed = build_scenario(&ScenarioConfig {
            scenario: Scenario::Dual,
            n_clients: 4,
            train_per_client: 200,
            master_seed: 9,
            ..Default::default()
        })?;
        for c in &fed.clients {
            let p = dir.join(format!("client{}.csv", c.train.client_id()));
            export_embeddings(&p, &c.train, None, "source=synthetic")?;
            paths.push(p);
        }
    }
    for p in &paths {
        let matrix = import_embeddings(p)?;
        let id = matrix.client_id();
        let (rows, dim) = (matrix.len(), matrix.dim());
        let (state, sel) = client_setup_auto(matrix, 2, 6, 1)?;
        println!(
            "{}: client {id}, {rows} rows x {dim}, {} local clusters, sizes {:?}",
            p.display(),
            sel.best_k,
            state.local_clusters().cluster_sizes()
        );
    }
    Ok(())
}
