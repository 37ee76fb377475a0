//! Build the three federation scenarios and show who holds which task.
//!
//! cargo run --example generate_scenario

use fedrouter::datagen::{build_scenario, Scenario, ScenarioConfig};

fn main() -> fedrouter::Result<()> {
    for scenario in [Scenario::Single, Scenario::Dual, Scenario::All] {
        let fed = build_scenario(&ScenarioConfig {
            scenario,
            master_seed: 7,
            ..Default::default()
        })?;
        println!("{scenario}:");
        for (i, c) in fed.clients.iter().enumerate() {
            let mut per_task = vec![0usize; fed.tasks.len()];
            for r in c.train.rows() {
                per_task[r.task_id] += 1;
            }
            println!("  client {i}: tasks {:?}, train rows per task {per_task:?}", c.tasks);
        }
    }

    let fed = build_scenario(&ScenarioConfig::default())?;
    for t in &fed.tasks {
        println!(
            "task {}: conflict group {}, label shift {}",
            t.task_id, t.conflict_group, t.label_shift
        );
    }
    Ok(())
}
