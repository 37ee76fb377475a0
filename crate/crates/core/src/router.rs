//! Evaluation router.
//!
//! Every test sample goes to the adapter behind its nearest centroid. In
//! [`EvalMode::Local`] the candidates are the client's own local centroids,
//! each resolved to the aggregated adapter of the global cluster it joined.
//! In [`EvalMode::Global`] the candidates are all global centroids, which
//! lets a client use adapters for tasks it never trained on.
//!
//! [`batch_evaluate`] routes the whole test split first and then runs each
//! chosen adapter once over its group of samples.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::adapter::{score_sample, AdapterParams};
use crate::client::ClientState;
use crate::clustering::assign_nearest;
use crate::datagen::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::metrics::EvalTally;
use crate::server::GlobalClusterModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalMode {
    #[default]
    Local,
    Global,
}

impl EvalMode {
    pub fn name(self) -> &'static str {
        match self {
            EvalMode::Local => "local",
            EvalMode::Global => "global",
        }
    }
}

impl std::str::FromStr for EvalMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "local" => Ok(EvalMode::Local),
            "global" => Ok(EvalMode::Global),
            other => Err(Error::Config(format!("unknown eval mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoutingDecision {
    pub sample: usize,
    /// Index into the candidate centroids of the mode.
    pub centroid_index: usize,
    /// Global cluster whose adapter serves the sample.
    pub global_cluster: usize,
    pub distance: f64,
}

/// Candidate centroids of one client under one mode.
#[derive(Debug, Clone, Copy)]
pub struct Router<'a> {
    mode: EvalMode,
    local_centroids: &'a [Vec<f64>],
    local_to_global: &'a [usize],
    model: &'a GlobalClusterModel,
}

impl<'a> Router<'a> {
    pub fn new(mode: EvalMode, client: &'a ClientState, model: &'a GlobalClusterModel) -> Result<Self> {
        let local_to_global = model.local_to_global(client.client_id()).ok_or_else(|| {
            Error::InvalidArgument(format!("client {} unknown to the server", client.client_id()))
        })?;
        Self::from_parts(mode, &client.local_clusters().centroids, local_to_global, model)
    }

    pub fn from_parts(
        mode: EvalMode,
        local_centroids: &'a [Vec<f64>],
        local_to_global: &'a [usize],
        model: &'a GlobalClusterModel,
    ) -> Result<Self> {
        if local_centroids.len() != local_to_global.len() {
            return Err(Error::DimensionMismatch {
                expected: local_centroids.len(),
                got: local_to_global.len(),
            });
        }
        if local_to_global.iter().any(|&g| g >= model.n_g()) {
            return Err(Error::InvalidArgument("local cluster mapped to unknown global cluster".into()));
        }
        Ok(Self {
            mode,
            local_centroids,
            local_to_global,
            model,
        })
    }

    pub fn mode(&self) -> EvalMode {
        self.mode
    }

    fn candidates(&self) -> &'a [Vec<f64>] {
        match self.mode {
            EvalMode::Local => self.local_centroids,
            EvalMode::Global => self.model.centroids(),
        }
    }

    pub fn route(&self, sample: usize, embedding: &[f64]) -> Result<RoutingDecision> {
        let (idx, distance) = assign_nearest(embedding, self.candidates())?;
        let global_cluster = match self.mode {
            EvalMode::Local => self.local_to_global[idx],
            EvalMode::Global => idx,
        };
        Ok(RoutingDecision {
            sample,
            centroid_index: idx,
            global_cluster,
            distance,
        })
    }

    pub fn adapter(&self, global_cluster: usize) -> &'a AdapterParams {
        &self.model.adapters[global_cluster]
    }
}

/// Route one sample; see [`Router`].
pub fn route(
    sample: &[f64],
    mode: EvalMode,
    local_centroids: &[Vec<f64>],
    local_to_global: &[usize],
    model: &GlobalClusterModel,
) -> Result<RoutingDecision> {
    Router::from_parts(mode, local_centroids, local_to_global, model)?.route(0, sample)
}

/// Ground-truth majority task of each global cluster, counted over the
/// training rows of its member shards. Ties go to the lower task id.
pub fn cluster_majority_tasks(model: &GlobalClusterModel, clients: &[ClientState]) -> Vec<Option<usize>> {
    let by_id: BTreeMap<usize, &ClientState> = clients.iter().map(|c| (c.client_id(), c)).collect();
    model
        .membership
        .iter()
        .map(|members| {
            let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
            for &(client, local) in members {
                let Some(state) = by_id.get(&client) else { continue };
                for &row in &state.shards()[local] {
                    *counts.entry(state.train_data().rows()[row].task_id).or_default() += 1;
                }
            }
            counts
                .into_iter()
                .fold(None, |best: Option<(usize, usize)>, (t, n)| match best {
                    Some((_, bn)) if bn >= n => best,
                    _ => Some((t, n)),
                })
                .map(|(t, _)| t)
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct BatchEvaluation {
    pub tally: EvalTally,
    pub decisions: Vec<RoutingDecision>,
    /// Whether each sample reached a cluster whose majority task is its own.
    pub routed_correctly: Vec<bool>,
}

fn routing_ok(cluster_tasks: &[Option<usize>], d: &RoutingDecision, task: usize) -> bool {
    cluster_tasks.get(d.global_cluster).copied().flatten() == Some(task)
}

/// Route all of `test`, then score each adapter group in one pass.
pub fn batch_evaluate(test: &EmbeddingMatrix, router: &Router<'_>, cluster_tasks: &[Option<usize>]) -> Result<BatchEvaluation> {
    if test.is_empty() {
        return Err(Error::Empty("test data"));
    }
    let decisions = test
        .rows()
        .iter()
        .enumerate()
        .map(|(i, s)| router.route(i, &s.embedding))
        .collect::<Result<Vec<_>>>()?;
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for d in &decisions {
        groups.entry(d.global_cluster).or_default().push(d.sample);
    }
    let mut tally = EvalTally {
        activations: groups.len(),
        ..Default::default()
    };
    for (&g, samples) in &groups {
        let adapter = router.adapter(g);
        for &i in samples {
            let s = &test.rows()[i];
            let (ok, loss) = score_sample(adapter, s)?;
            tally.add_sample(s.task_id, ok, loss);
        }
    }
    let routed_correctly: Vec<bool> = decisions
        .iter()
        .map(|d| routing_ok(cluster_tasks, d, test.rows()[d.sample].task_id))
        .collect();
    for &ok in &routed_correctly {
        tally.add_routing(ok);
    }
    Ok(BatchEvaluation {
        tally,
        decisions,
        routed_correctly,
    })
}

/// Reference path: route and score each sample on its own, in input order.
pub fn per_sample_evaluate(test: &EmbeddingMatrix, router: &Router<'_>, cluster_tasks: &[Option<usize>]) -> Result<EvalTally> {
    if test.is_empty() {
        return Err(Error::Empty("test data"));
    }
    let mut tally = EvalTally::default();
    let mut used = std::collections::BTreeSet::new();
    for (i, s) in test.rows().iter().enumerate() {
        let d = router.route(i, &s.embedding)?;
        used.insert(d.global_cluster);
        let (ok, loss) = score_sample(router.adapter(d.global_cluster), s)?;
        tally.add_sample(s.task_id, ok, loss);
        tally.add_routing(routing_ok(cluster_tasks, &d, s.task_id));
    }
    tally.activations = used.len();
    Ok(tally)
}
