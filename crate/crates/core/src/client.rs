//! Client side of the protocol.
//!
//! A client clusters its training embeddings once, at setup. Each cluster is
//! a shard that gets its own adapter. Afterwards the client only trains what
//! the server sends it: the received global centroid picks the nearest local
//! shard and the received adapter is trained on that shard alone.

use std::collections::hash_map::DefaultHasher;
use std::collections::BTreeMap;
use std::hash::{Hash, Hasher};

use crate::adapter::{batch_schedule, init_adapter, train_sgd, AdapterParams, TrainConfig};
use crate::clustering::{assign_nearest, kmeans_fit, select_k_silhouette, CentroidSet, SilhouetteSelection};
use crate::datagen::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::server::{Assignment, ClientUpdate};

/// How a client picks its number of local clusters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LocalClusterCount {
    Fixed(usize),
    /// Silhouette selection over `k_min..=k_max` (clamped to the data size).
    Auto { k_min: usize, k_max: usize },
}

/// What a client sends in the first round: one centroid and one fresh
/// adapter per local cluster, ordered by local cluster index.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientReport {
    pub client_id: usize,
    pub centroids: Vec<Vec<f64>>,
    pub adapters: Vec<AdapterParams>,
}

#[derive(Debug, Clone)]
pub struct ClientState {
    client_id: usize,
    train_data: EmbeddingMatrix,
    local_clusters: CentroidSet,
    shards: Vec<Vec<usize>>,
    adapters_seen: BTreeMap<usize, AdapterParams>,
}

/// Cluster `data` into `n_l` local shards.
pub fn client_setup(data: EmbeddingMatrix, n_l: usize, seed: u64) -> Result<ClientState> {
    if n_l == 0 || n_l > data.len() {
        return Err(Error::InvalidArgument(format!(
            "n_l = {n_l} must be in 1..={}",
            data.len()
        )));
    }
    let local_clusters = kmeans_fit(&data.embeddings(), n_l, seed)?;
    let shards = (0..n_l).map(|c| local_clusters.members(c)).collect();
    Ok(ClientState {
        client_id: data.client_id(),
        train_data: data,
        local_clusters,
        shards,
        adapters_seen: BTreeMap::new(),
    })
}

/// Choose `n_l` by silhouette, then set up. `k_max` is clamped to `D - 1`.
pub fn client_setup_auto(
    data: EmbeddingMatrix,
    k_min: usize,
    k_max: usize,
    seed: u64,
) -> Result<(ClientState, SilhouetteSelection)> {
    let k_max = k_max.min(data.len().saturating_sub(1));
    let sel = select_k_silhouette(&data.embeddings(), k_min, k_max, seed)?;
    let state = client_setup(data, sel.best_k, seed)?;
    Ok((state, sel))
}

/// Setup with either a fixed or a silhouette-selected cluster count.
pub fn client_setup_with(data: EmbeddingMatrix, count: LocalClusterCount, seed: u64) -> Result<ClientState> {
    match count {
        LocalClusterCount::Fixed(n) => client_setup(data, n, seed),
        LocalClusterCount::Auto { k_min, k_max } => client_setup_auto(data, k_min, k_max, seed).map(|(s, _)| s),
    }
}

impl ClientState {
    pub fn client_id(&self) -> usize {
        self.client_id
    }

    pub fn train_data(&self) -> &EmbeddingMatrix {
        &self.train_data
    }

    pub fn local_clusters(&self) -> &CentroidSet {
        &self.local_clusters
    }

    pub fn n_local(&self) -> usize {
        self.local_clusters.k()
    }

    /// Row indices of each local shard, ascending.
    pub fn shards(&self) -> &[Vec<usize>] {
        &self.shards
    }

    pub fn adapters_seen(&self) -> &BTreeMap<usize, AdapterParams> {
        &self.adapters_seen
    }

    /// Hash of the local clustering; changes iff any centroid bit or
    /// assignment changes.
    pub fn clustering_fingerprint(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for c in &self.local_clusters.centroids {
            c.iter().for_each(|x| x.to_bits().hash(&mut h));
        }
        self.local_clusters.assignments.hash(&mut h);
        self.local_clusters.inertia.to_bits().hash(&mut h);
        h.finish()
    }

    pub fn first_round_report(&self, class_count: usize) -> Result<ClientReport> {
        let adapters = (0..self.n_local())
            .map(|c| init_adapter(self.train_data.dim(), class_count, c, 0))
            .collect::<Result<Vec<_>>>()?;
        Ok(ClientReport {
            client_id: self.client_id,
            centroids: self.local_clusters.centroids.clone(),
            adapters,
        })
    }

    /// Local shard whose centroid is nearest to `global_centroid`.
    pub fn match_global_to_local(&self, global_centroid: &[f64]) -> Result<usize> {
        assign_nearest(global_centroid, &self.local_clusters.centroids).map(|(i, _)| i)
    }

    /// Rows touched by each SGD step if `assignment` were trained with `cfg`.
    pub fn training_trace(&self, assignment: &Assignment, cfg: &TrainConfig) -> Result<Vec<Vec<usize>>> {
        let shard = &self.shards[self.match_global_to_local(&assignment.centroid)?];
        Ok(batch_schedule(shard.len(), cfg)
            .into_iter()
            .map(|b| b.into_iter().map(|i| shard[i]).collect())
            .collect())
    }

    /// Train the received adapter on the matched shard only.
    pub fn train_assignment(&mut self, assignment: &Assignment, cfg: &TrainConfig) -> Result<ClientUpdate> {
        let local = self.match_global_to_local(&assignment.centroid)?;
        self.adapters_seen
            .insert(assignment.global_cluster, assignment.adapter.clone());
        let shard = self.train_data.select(&self.shards[local]);
        let (adapter, sample_count) = if shard.is_empty() {
            (assignment.adapter.clone(), 0)
        } else {
            (train_sgd(&assignment.adapter, &shard, cfg)?, shard.len())
        };
        Ok(ClientUpdate {
            client_id: self.client_id,
            global_cluster: assignment.global_cluster,
            adapter,
            sample_count,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{build_scenario, Scenario, ScenarioConfig};

    fn scenario(s: Scenario) -> crate::datagen::Federation {
        build_scenario(&ScenarioConfig {
            scenario: s,
            train_per_client: 200,
            test_per_client: 40,
            master_seed: 3,
            ..Default::default()
        })
        .unwrap()
    }

    fn assignment(cluster: usize, centroid: Vec<f64>, adapter: AdapterParams) -> Assignment {
        Assignment {
            client_id: 0,
            global_cluster: cluster,
            centroid,
            adapter,
        }
    }

    #[test]
    fn single_client_one_shard() {
        let fed = scenario(Scenario::Single);
        let st = client_setup(fed.clients[0].train.clone(), 1, 1).unwrap();
        assert_eq!(st.shards().len(), 1);
        assert_eq!(st.shards()[0].len(), 200);
        assert_eq!(st.match_global_to_local(&vec![100.0; 32]).unwrap(), 0);
    }

    #[test]
    fn dual_shards_are_task_pure() {
        let fed = scenario(Scenario::Dual);
        for c in &fed.clients {
            let st = client_setup(c.train.clone(), 2, 9).unwrap();
            for shard in st.shards() {
                let tasks: std::collections::BTreeSet<usize> =
                    shard.iter().map(|&i| c.train.rows()[i].task_id).collect();
                assert_eq!(tasks.len(), 1);
            }
        }
    }

    #[test]
    fn setup_rejects_bad_counts() {
        let fed = scenario(Scenario::Single);
        assert!(client_setup(fed.clients[0].train.clone(), 0, 1).is_err());
        assert!(client_setup(fed.clients[0].train.clone(), 201, 1).is_err());
    }

    #[test]
    fn report_pairs_centroids_with_fresh_adapters() {
        let fed = scenario(Scenario::Dual);
        let st = client_setup(fed.clients[2].train.clone(), 2, 9).unwrap();
        let rep = st.first_round_report(4).unwrap();
        assert_eq!(rep.centroids.len(), 2);
        assert_eq!(rep.adapters.len(), 2);
        assert_eq!(rep.centroids, st.local_clusters().centroids);
        assert!(rep.adapters[0].same_parameters(&rep.adapters[1]));
        assert!(rep.adapters[0].flat().all(|x| x == 0.0));
    }

    #[test]
    fn matching_follows_nearest_centroid() {
        let fed = scenario(Scenario::Dual);
        let c = &fed.clients[0];
        let st = client_setup(c.train.clone(), 2, 9).unwrap();
        assert_eq!(st.match_global_to_local(&st.local_clusters().centroids[1]).unwrap(), 1);
        for t in &c.tasks {
            let local = st.match_global_to_local(&fed.tasks[*t].center).unwrap();
            let shard = &st.shards()[local];
            let hits = shard.iter().filter(|&&i| c.train.rows()[i].task_id == *t).count();
            assert!(hits * 2 > shard.len());
        }
        assert!(st.match_global_to_local(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn zero_lr_returns_received_adapter() {
        let fed = scenario(Scenario::Dual);
        let mut st = client_setup(fed.clients[0].train.clone(), 2, 9).unwrap();
        let a = init_adapter(32, 4, 0, 0).unwrap();
        let cfg = TrainConfig {
            learning_rate: 0.0,
            ..Default::default()
        };
        let centroid = st.local_clusters().centroids[0].clone();
        let up = st.train_assignment(&assignment(3, centroid, a.clone()), &cfg).unwrap();
        assert!(up.adapter.same_parameters(&a));
        assert_eq!(up.global_cluster, 3);
        assert_eq!(up.sample_count, st.shards()[0].len());
        assert!(st.adapters_seen().contains_key(&3));
    }

    #[test]
    fn n_l_one_trains_on_everything() {
        let fed = scenario(Scenario::All);
        let st = client_setup(fed.clients[0].train.clone(), 1, 9).unwrap();
        let a = assignment(0, vec![0.0; 32], init_adapter(32, 4, 0, 0).unwrap());
        let cfg = TrainConfig {
            steps_per_round: 40,
            ..Default::default()
        };
        let trace = st.training_trace(&a, &cfg).unwrap();
        let mut seen: Vec<usize> = trace.into_iter().flatten().collect();
        seen.sort_unstable();
        seen.dedup();
        assert_eq!(seen.len(), 200);
    }

    #[test]
    fn training_only_touches_matched_shard() {
        let fed = scenario(Scenario::Dual);
        let c = &fed.clients[4];
        let mut st = client_setup(c.train.clone(), 2, 9).unwrap();
        let cfg = TrainConfig::default().with_seed(17);
        let fresh = init_adapter(32, 4, 0, 0).unwrap();
        for local in 0..2 {
            let a = assignment(local, st.local_clusters().centroids[local].clone(), fresh.clone());
            let shard: std::collections::BTreeSet<usize> = st.shards()[local].iter().copied().collect();
            let trace = st.training_trace(&a, &cfg).unwrap();
            assert!(trace.iter().flatten().all(|i| shard.contains(i)));

            // Reproduce the update from the matched rows alone.
            let rows = c.train.select(&st.shards()[local]);
            let expected = train_sgd(&fresh, &rows, &cfg).unwrap();
            let got = st.train_assignment(&a, &cfg).unwrap();
            assert!(got.adapter.same_parameters(&expected));
        }
    }

    #[test]
    fn auto_setup_finds_two_tasks() {
        let fed = scenario(Scenario::Dual);
        let (st, sel) = client_setup_auto(fed.clients[0].train.clone(), 2, 6, 1).unwrap();
        assert_eq!(sel.best_k, 2);
        assert_eq!(st.n_local(), 2);
    }
}
