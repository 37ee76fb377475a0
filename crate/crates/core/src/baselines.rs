//! Reference methods: FedAvg, local-only training and client-level
//! clustering (FedCluster).
//!
//! All three run on one engine. Clients are partitioned into groups, each
//! group shares one adapter, and every client trains its group's adapter on
//! its full training split every round. FedAvg is one group, LocalOnly is one
//! group per client and FedCluster groups clients by k-means over their mean
//! embeddings. Evaluation uses the group adapter directly, without routing.
//!
//! Seeds and aggregation order match [`run_federation`](crate::server::run_federation),
//! so FedAvg is parameter-for-parameter FedRouter with `n_l = n_g = 1`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::adapter::{init_adapter, score_sample, train_sgd, AdapterParams, TrainConfig};
use crate::clustering::{kmeans_fit, select_k_silhouette};
use crate::datagen::Federation;
use crate::error::{Error, Result};
use crate::metrics::{EvalTally, RoundRecord};
use crate::rng::{derive_seed, stream};
use crate::server::{
    reduce_updates, training_seed, ClientUpdate, FederationConfig, GlobalClusterCount, ScheduleMode, TraceRecord,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaselineKind {
    FedAvg,
    LocalOnly,
    FedCluster,
}

#[derive(Debug, Clone)]
pub struct BaselineRun {
    pub kind: BaselineKind,
    /// One adapter per group, indexed by group id.
    pub adapters: Vec<AdapterParams>,
    /// Group of each client, in dataset order.
    pub groups: Vec<usize>,
    pub rounds: Vec<RoundRecord>,
    pub trace: Vec<TraceRecord>,
}

impl BaselineRun {
    pub fn client_adapter(&self, client_index: usize) -> &AdapterParams {
        &self.adapters[self.groups[client_index]]
    }
}

pub fn run_fedavg(fed: &Federation, cfg: &FederationConfig, train: &TrainConfig) -> Result<BaselineRun> {
    run_grouped(BaselineKind::FedAvg, fed, vec![0; fed.n_clients()], cfg, train)
}

pub fn run_local_only(fed: &Federation, cfg: &FederationConfig, train: &TrainConfig) -> Result<BaselineRun> {
    run_grouped(BaselineKind::LocalOnly, fed, (0..fed.n_clients()).collect(), cfg, train)
}

pub fn run_fedcluster(fed: &Federation, cfg: &FederationConfig, train: &TrainConfig) -> Result<BaselineRun> {
    let groups = client_groups(fed, cfg)?;
    run_grouped(BaselineKind::FedCluster, fed, groups, cfg, train)
}

/// Mean training embedding of every client.
pub fn client_means(fed: &Federation) -> Vec<Vec<f64>> {
    fed.clients
        .iter()
        .map(|c| {
            let mut m = vec![0.0; c.train.dim()];
            for s in c.train.rows() {
                m.iter_mut().zip(&s.embedding).for_each(|(a, x)| *a += x);
            }
            let n = c.train.len() as f64;
            m.iter_mut().for_each(|a| *a /= n);
            m
        })
        .collect()
}

/// FedCluster grouping: k-means over client mean embeddings.
pub fn client_groups(fed: &Federation, cfg: &FederationConfig) -> Result<Vec<usize>> {
    cfg.validate()?;
    let means = client_means(fed);
    let seed = derive_seed(cfg.master_seed, &[stream::CLIENT_CLUSTER]);
    let k = match cfg.n_g {
        GlobalClusterCount::Fixed(n) => n.min(means.len()),
        GlobalClusterCount::Auto => {
            let k_max = cfg.k_max.min(means.len().saturating_sub(1));
            select_k_silhouette(&means, cfg.k_min, k_max, seed)?.best_k
        }
    };
    Ok(kmeans_fit(&means, k, seed)?.assignments)
}

fn run_grouped(
    kind: BaselineKind,
    fed: &Federation,
    groups: Vec<usize>,
    cfg: &FederationConfig,
    train: &TrainConfig,
) -> Result<BaselineRun> {
    cfg.validate()?;
    train.validate()?;
    if fed.clients.is_empty() {
        return Err(Error::Empty("clients"));
    }
    let n_groups = groups.iter().max().map_or(0, |g| g + 1);
    let mut adapters = (0..n_groups)
        .map(|g| init_adapter(fed.dim(), fed.class_count(), g, 0))
        .collect::<Result<Vec<_>>>()?;
    let mut rounds = Vec::with_capacity(cfg.rounds);
    let mut trace = Vec::new();
    for round in 0..cfg.rounds {
        let mut updates: BTreeMap<usize, Vec<ClientUpdate>> = BTreeMap::new();
        for (c, &g) in fed.clients.iter().zip(&groups) {
            let id = c.train.client_id();
            let seed = training_seed(cfg.master_seed, id, round, g);
            let adapter = train_sgd(&adapters[g], c.train.rows(), &train.with_seed(seed))?;
            trace.push(TraceRecord {
                round,
                client_id: id,
                global_cluster: g,
                mode: ScheduleMode::Standard,
                samples: c.train.len(),
            });
            updates.entry(g).or_default().push(ClientUpdate {
                client_id: id,
                global_cluster: g,
                adapter,
                sample_count: c.train.len(),
            });
        }
        for (g, ups) in &updates {
            adapters[*g] = reduce_updates(ups.iter().collect(), cfg.aggregation, *g)?;
        }
        rounds.push(evaluate_groups(fed, &groups, &adapters)?.to_record(round));
    }
    Ok(BaselineRun {
        kind,
        adapters,
        groups,
        rounds,
        trace,
    })
}

/// Every client scores its test split with its group adapter.
pub fn evaluate_groups(fed: &Federation, groups: &[usize], adapters: &[AdapterParams]) -> Result<EvalTally> {
    let mut tally = EvalTally::default();
    for (c, &g) in fed.clients.iter().zip(groups) {
        for s in c.test.rows() {
            let (ok, loss) = score_sample(&adapters[g], s)?;
            tally.add_sample(s.task_id, ok, loss);
        }
        tally.activations += 1;
    }
    Ok(tally)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clustering::euclidean;
    use crate::datagen::{build_scenario, Scenario, ScenarioConfig};
    use crate::server::{run_federation, LocalClusterPolicy, RunOptions};

    fn scenario(s: Scenario, n_clients: usize) -> Federation {
        build_scenario(&ScenarioConfig {
            scenario: s,
            n_clients,
            train_per_client: 120,
            test_per_client: 60,
            master_seed: 13,
            ..Default::default()
        })
        .unwrap()
    }

    fn cfg(rounds: usize, n_g: usize) -> FederationConfig {
        FederationConfig {
            rounds,
            n_g: GlobalClusterCount::Fixed(n_g),
            master_seed: 4,
            ..Default::default()
        }
    }

    #[test]
    fn fedavg_is_fedrouter_with_one_cluster() {
        let fed = scenario(Scenario::All, 8);
        let c = cfg(5, 1);
        let train = TrainConfig::default();
        let avg = run_fedavg(&fed, &c, &train).unwrap();
        let opts = RunOptions {
            local_clusters: LocalClusterPolicy::Fixed(1),
            ..Default::default()
        };
        let fr = run_federation(&fed, &c, &train, &opts).unwrap();
        assert!(avg.adapters[0].same_parameters(&fr.model.adapters[0]));
        assert_eq!(avg.adapters[0].steps_trained, fr.model.adapters[0].steps_trained);
    }

    #[test]
    fn one_client_fedavg_is_local_only() {
        let fed = scenario(Scenario::All, 1);
        let c = cfg(4, 1);
        let a = run_fedavg(&fed, &c, &TrainConfig::default()).unwrap();
        let b = run_local_only(&fed, &c, &TrainConfig::default()).unwrap();
        assert!(a.adapters[0].same_parameters(&b.adapters[0]));
        assert_eq!(a.rounds, b.rounds);
    }

    #[test]
    fn zero_lr_keeps_initialization() {
        let fed = scenario(Scenario::All, 8);
        let train = TrainConfig {
            learning_rate: 0.0,
            ..Default::default()
        };
        let run = run_fedavg(&fed, &cfg(3, 1), &train).unwrap();
        assert!(run.adapters[0].flat().all(|x| x == 0.0));
    }

    #[test]
    fn local_only_trains_all_rounds_in_isolation() {
        let fed = scenario(Scenario::Single, 8);
        let c = cfg(3, 4);
        let train = TrainConfig::default();
        let base = run_local_only(&fed, &c, &train).unwrap();
        assert_eq!(base.client_adapter(0).steps_trained, 30);

        let mut perturbed = fed.clone();
        let other = scenario(Scenario::Single, 8);
        perturbed.clients[1] = other.clients[5].clone();
        let run = run_local_only(&perturbed, &c, &train).unwrap();
        assert!(run.client_adapter(0).same_parameters(base.client_adapter(0)));
        let mine = |r: &BaselineRun| {
            evaluate_groups(&Federation { clients: vec![fed.clients[0].clone()], ..fed.clone() }, &[0], &[r.client_adapter(0).clone()])
                .unwrap()
        };
        assert_eq!(mine(&base), mine(&run));
    }

    #[test]
    fn fedcluster_single_group_is_fedavg() {
        let fed = scenario(Scenario::Dual, 8);
        let c = cfg(3, 1);
        let a = run_fedavg(&fed, &c, &TrainConfig::default()).unwrap();
        let b = run_fedcluster(&fed, &c, &TrainConfig::default()).unwrap();
        assert!(b.groups.iter().all(|&g| g == 0));
        assert!(a.adapters[0].same_parameters(&b.adapters[0]));
    }

    #[test]
    fn fedcluster_groups_single_clients_by_task() {
        let fed = scenario(Scenario::Single, 8);
        let groups = client_groups(&fed, &cfg(1, 4)).unwrap();
        for i in 0..8 {
            for j in 0..8 {
                assert_eq!(groups[i] == groups[j], fed.clients[i].tasks == fed.clients[j].tasks);
            }
        }
    }

    #[test]
    fn all_scenario_client_means_nearly_coincide() {
        let fed = scenario(Scenario::All, 8);
        let means = client_means(&fed);
        let max_between = means
            .iter()
            .flat_map(|a| means.iter().map(move |b| euclidean(a, b)))
            .fold(0.0, f64::max);
        let sep = fed.config.separation;
        assert!(max_between < sep / 2.0, "{max_between}");
    }
}
