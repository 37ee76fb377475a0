//! Train one linear softmax adapter on a single task with mini-batch SGD.
//!
//! cargo run --example train_adapter

use fedrouter::adapter::{evaluate, init_adapter, train_sgd, TrainConfig};
use fedrouter::datagen::{build_scenario, Scenario, ScenarioConfig};

fn main() -> fedrouter::Result<()> {
    let fed = build_scenario(&ScenarioConfig {
        scenario: Scenario::Single,
        master_seed: 1,
        ..Default::default()
    })?;
    let data = &fed.clients[0];
    let mut adapter = init_adapter(fed.dim(), fed.class_count(), 0, 0)?;
    let cfg = TrainConfig::default();
    for round in 0..8 {
        adapter = train_sgd(&adapter, data.train.rows(), &cfg.with_seed(round))?;
        let train = evaluate(&adapter, data.train.rows())?;
        let test = evaluate(&adapter, data.test.rows())?;
        println!(
            "after {:>3} steps: train loss {:.4}, test accuracy {:.3}",
            adapter.steps_trained, train.loss, test.accuracy
        );
    }
    Ok(())
}
