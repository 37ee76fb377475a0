//! Evaluation tallies and per-round records.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

/// Running counts for one evaluation pass. Merging tallies is exact for the
/// counts; only `loss_sum` depends on accumulation order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EvalTally {
    pub total: usize,
    pub correct: usize,
    pub loss_sum: f64,
    /// task id -> (correct, total)
    pub per_task: BTreeMap<usize, (usize, usize)>,
    /// Samples whose routing was scored, and how many were routed right.
    pub routed: usize,
    pub routed_correct: usize,
    pub activations: usize,
}

impl EvalTally {
    pub fn add_sample(&mut self, task_id: usize, correct: bool, loss: f64) {
        self.total += 1;
        self.correct += usize::from(correct);
        self.loss_sum += loss;
        let e = self.per_task.entry(task_id).or_default();
        e.0 += usize::from(correct);
        e.1 += 1;
    }

    pub fn add_routing(&mut self, correct: bool) {
        self.routed += 1;
        self.routed_correct += usize::from(correct);
    }

    pub fn merge(&mut self, other: &EvalTally) {
        self.total += other.total;
        self.correct += other.correct;
        self.loss_sum += other.loss_sum;
        for (&t, &(c, n)) in &other.per_task {
            let e = self.per_task.entry(t).or_default();
            e.0 += c;
            e.1 += n;
        }
        self.routed += other.routed;
        self.routed_correct += other.routed_correct;
        self.activations += other.activations;
    }

    pub fn accuracy(&self) -> f64 {
        ratio(self.correct, self.total)
    }

    pub fn mean_loss(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.loss_sum / self.total as f64
        }
    }

    pub fn routing_accuracy(&self) -> Option<f64> {
        (self.routed > 0).then(|| ratio(self.routed_correct, self.routed))
    }

    pub fn to_record(&self, round: usize) -> RoundRecord {
        RoundRecord {
            round,
            accuracy: self.accuracy(),
            per_task_accuracy: self
                .per_task
                .iter()
                .map(|(&t, &(c, n))| (t, ratio(c, n)))
                .collect(),
            routing_accuracy: self.routing_accuracy(),
            loss: self.mean_loss(),
            adapter_activations: self.activations,
        }
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// Test metrics after one completed round, pooled over all clients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub accuracy: f64,
    pub per_task_accuracy: BTreeMap<usize, f64>,
    pub routing_accuracy: Option<f64>,
    pub loss: f64,
    pub adapter_activations: usize,
}

/// Mean and sample standard deviation; the deviation needs two values.
pub fn mean_std(values: &[f64]) -> (f64, Option<f64>) {
    if values.is_empty() {
        return (f64::NAN, None);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = (values.len() >= 2).then(|| {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    });
    (mean, std)
}
