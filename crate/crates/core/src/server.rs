//! Server side of the protocol and the federation loop.
//!
//! In the first round every client reports its local centroids. The server
//! clusters the pooled centroids into `n_g` global clusters once and keeps
//! that structure for the whole run. Every round it hands each client one of
//! its matched global clusters (round-robin over the sorted list, or all of
//! them in star mode), then averages the returned adapters per cluster.
//! Clusters nobody trained in a round keep their previous adapter.

use std::collections::hash_map::DefaultHasher;
use std::collections::BTreeMap;
use std::hash::{Hash, Hasher};

use serde::{Deserialize, Serialize};

use crate::adapter::{average_adapters, AdapterParams, TrainConfig};
use crate::client::{client_setup_with, ClientReport, ClientState, LocalClusterCount};
use crate::clustering::{kmeans_fit, select_k_silhouette, CentroidSet};
use crate::datagen::Federation;
use crate::error::{check_dim, Error, Result};
use crate::metrics::{EvalTally, RoundRecord};
use crate::rng::{derive_seed, stream};
use crate::router::{batch_evaluate, cluster_majority_tasks, EvalMode, Router};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleMode {
    /// One matched cluster per client per round.
    #[default]
    Standard,
    /// Every matched cluster every round.
    Star,
}

impl ScheduleMode {
    pub fn name(self) -> &'static str {
        match self {
            ScheduleMode::Standard => "standard",
            ScheduleMode::Star => "star",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    #[default]
    Uniform,
    SampleWeighted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum AutoKeyword {
    Auto,
}

/// Number of global clusters: a number, or `"auto"` for silhouette selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GlobalClusterCount {
    Fixed(usize),
    #[serde(with = "auto_repr")]
    Auto,
}

mod auto_repr {
    use super::AutoKeyword;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(s: S) -> Result<S::Ok, S::Error> {
        AutoKeyword::Auto.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<(), D::Error> {
        AutoKeyword::deserialize(d).map(|_| ())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FederationConfig {
    pub rounds: usize,
    pub n_g: GlobalClusterCount,
    pub mode: ScheduleMode,
    pub aggregation: Aggregation,
    pub master_seed: u64,
    /// Silhouette search range for `auto` cluster counts.
    pub k_min: usize,
    pub k_max: usize,
}

impl Default for FederationConfig {
    fn default() -> Self {
        Self {
            rounds: 25,
            n_g: GlobalClusterCount::Fixed(4),
            mode: ScheduleMode::Standard,
            aggregation: Aggregation::Uniform,
            master_seed: 0,
            k_min: 2,
            k_max: 8,
        }
    }
}

impl FederationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_g == GlobalClusterCount::Fixed(0) {
            return Err(Error::Config("n_g must be positive".into()));
        }
        if self.k_min < 2 || self.k_min > self.k_max {
            return Err(Error::Config(format!(
                "silhouette range {}..={} invalid",
                self.k_min, self.k_max
            )));
        }
        Ok(())
    }
}

/// Server-to-client message: train this global cluster's adapter.
#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    pub client_id: usize,
    pub global_cluster: usize,
    pub centroid: Vec<f64>,
    pub adapter: AdapterParams,
}

/// Client-to-server message: the trained adapter and the shard size.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientUpdate {
    pub client_id: usize,
    pub global_cluster: usize,
    pub adapter: AdapterParams,
    pub sample_count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundPlan {
    pub round: usize,
    pub assignments: Vec<Assignment>,
}

/// Global clusters over the pooled client centroids, with their adapters.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalClusterModel {
    pub global_centroids: CentroidSet,
    /// Global cluster -> (client id, local cluster index), in pooling order.
    pub membership: Vec<Vec<(usize, usize)>>,
    pub adapters: Vec<AdapterParams>,
    /// Client id -> global cluster of each local cluster.
    local_to_global: BTreeMap<usize, Vec<usize>>,
}

impl GlobalClusterModel {
    pub fn n_g(&self) -> usize {
        self.global_centroids.k()
    }

    pub fn centroids(&self) -> &[Vec<f64>] {
        &self.global_centroids.centroids
    }

    pub fn clients(&self) -> impl Iterator<Item = usize> + '_ {
        self.local_to_global.keys().copied()
    }

    pub fn local_to_global(&self, client_id: usize) -> Option<&[usize]> {
        self.local_to_global.get(&client_id).map(Vec::as_slice)
    }

    /// Sorted distinct global clusters a client's local clusters fall into.
    pub fn matched_clusters(&self, client_id: usize) -> Vec<usize> {
        let mut m = self.local_to_global.get(&client_id).cloned().unwrap_or_default();
        m.sort_unstable();
        m.dedup();
        m
    }

    /// Hash of the clustering structure (centroids, membership); adapters
    /// are excluded.
    pub fn structure_fingerprint(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for c in &self.global_centroids.centroids {
            c.iter().for_each(|x| x.to_bits().hash(&mut h));
        }
        self.global_centroids.assignments.hash(&mut h);
        self.membership.hash(&mut h);
        self.local_to_global.hash(&mut h);
        h.finish()
    }
}

fn resolve_n_g(pooled: &[&[f64]], cfg: &FederationConfig) -> Result<usize> {
    match cfg.n_g {
        GlobalClusterCount::Fixed(n) => {
            if n == 0 || n > pooled.len() {
                return Err(Error::InvalidArgument(format!(
                    "n_g = {n} must be in 1..={} (pooled centroids)",
                    pooled.len()
                )));
            }
            Ok(n)
        }
        GlobalClusterCount::Auto => {
            let k_max = cfg.k_max.min(pooled.len().saturating_sub(1));
            let seed = derive_seed(cfg.master_seed, &[stream::GLOBAL_CLUSTER, 1]);
            Ok(select_k_silhouette(pooled, cfg.k_min, k_max, seed)?.best_k)
        }
    }
}

/// Cluster the pooled centroids of all first-round reports.
pub fn server_setup(reports: &[ClientReport], cfg: &FederationConfig) -> Result<GlobalClusterModel> {
    cfg.validate()?;
    if reports.is_empty() {
        return Err(Error::Empty("client reports"));
    }
    let mut reports: Vec<&ClientReport> = reports.iter().collect();
    reports.sort_by_key(|r| r.client_id);
    let mut owners = Vec::new();
    let mut pooled: Vec<&[f64]> = Vec::new();
    let mut reported: Vec<&AdapterParams> = Vec::new();
    for r in &reports {
        check_dim(r.centroids.len(), r.adapters.len())?;
        if r.centroids.is_empty() {
            return Err(Error::InvalidArgument(format!("client {} reported no clusters", r.client_id)));
        }
        for (l, (c, a)) in r.centroids.iter().zip(&r.adapters).enumerate() {
            owners.push((r.client_id, l));
            pooled.push(c);
            reported.push(a);
        }
    }
    let n_g = resolve_n_g(&pooled, cfg)?;
    let global = kmeans_fit(&pooled, n_g, derive_seed(cfg.master_seed, &[stream::GLOBAL_CLUSTER]))?;
    let mut membership = vec![Vec::new(); n_g];
    let mut local_to_global: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (&(client, local), &g) in owners.iter().zip(&global.assignments) {
        membership[g].push((client, local));
        local_to_global.entry(client).or_default().push(g);
    }
    let adapters = (0..n_g)
        .map(|g| {
            let members: Vec<&AdapterParams> = global.members(g).into_iter().map(|i| reported[i]).collect();
            let mut a = average_adapters(&members, None)?;
            a.adapter_id = g;
            Ok(a)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(GlobalClusterModel {
        global_centroids: global,
        membership,
        adapters,
        local_to_global,
    })
}

/// Which clusters each client trains in `round`.
pub fn plan_round(model: &GlobalClusterModel, round: usize, cfg: &FederationConfig) -> Result<RoundPlan> {
    let mut assignments = Vec::new();
    for client in model.clients() {
        let matched = model.matched_clusters(client);
        if matched.is_empty() {
            return Err(Error::InvalidArgument(format!("client {client} has no matched cluster")));
        }
        let chosen: Vec<usize> = match cfg.mode {
            ScheduleMode::Standard => vec![matched[round % matched.len()]],
            ScheduleMode::Star => matched,
        };
        assignments.extend(chosen.into_iter().map(|g| Assignment {
            client_id: client,
            global_cluster: g,
            centroid: model.global_centroids.centroids[g].clone(),
            adapter: model.adapters[g].clone(),
        }));
    }
    Ok(RoundPlan { round, assignments })
}

/// Average the round's updates into their clusters. Updates are reduced in
/// client-id order whatever order they arrive in.
pub fn aggregate_round(
    model: &GlobalClusterModel,
    results: &[ClientUpdate],
    cfg: &FederationConfig,
) -> Result<GlobalClusterModel> {
    let mut by_cluster: BTreeMap<usize, Vec<&ClientUpdate>> = BTreeMap::new();
    for r in results {
        if r.global_cluster >= model.n_g() {
            return Err(Error::InvalidArgument(format!(
                "update for unknown global cluster {}",
                r.global_cluster
            )));
        }
        by_cluster.entry(r.global_cluster).or_default().push(r);
    }
    let mut next = model.clone();
    for (g, updates) in by_cluster {
        next.adapters[g] = reduce_updates(updates, cfg.aggregation, g)?;
    }
    Ok(next)
}

/// Average updates for one adapter in client-id order.
pub(crate) fn reduce_updates(
    mut updates: Vec<&ClientUpdate>,
    aggregation: Aggregation,
    adapter_id: usize,
) -> Result<AdapterParams> {
    updates.sort_by_key(|u| u.client_id);
    let adapters: Vec<&AdapterParams> = updates.iter().map(|u| &u.adapter).collect();
    let total: usize = updates.iter().map(|u| u.sample_count).sum();
    let weights: Option<Vec<f64>> = match aggregation {
        Aggregation::SampleWeighted if total > 0 => Some(
            updates
                .iter()
                .map(|u| u.sample_count as f64 / total as f64)
                .collect(),
        ),
        _ => None,
    };
    let mut avg = average_adapters(&adapters, weights.as_deref())?;
    avg.adapter_id = adapter_id;
    Ok(avg)
}

/// How many local clusters each client uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LocalClusterPolicy {
    /// The number of tasks the scenario gave the client.
    #[default]
    Scripted,
    Fixed(usize),
    /// Silhouette selection over `k_min..=k_max`.
    Auto { k_min: usize, k_max: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RunOptions {
    pub local_clusters: LocalClusterPolicy,
    pub eval_mode: EvalMode,
}

/// One line of the round trace.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceRecord {
    pub round: usize,
    pub client_id: usize,
    pub global_cluster: usize,
    pub mode: ScheduleMode,
    pub samples: usize,
}

#[derive(Debug, Clone)]
pub struct FederationRun {
    pub initial_model: GlobalClusterModel,
    pub model: GlobalClusterModel,
    pub clients: Vec<ClientState>,
    /// Ground-truth majority task of each global cluster.
    pub cluster_tasks: Vec<Option<usize>>,
    pub rounds: Vec<RoundRecord>,
    pub trace: Vec<TraceRecord>,
}

/// Seed of the SGD stream for `(client, round, adapter)`.
pub fn training_seed(master: u64, client: usize, round: usize, adapter: usize) -> u64 {
    derive_seed(master, &[stream::TRAIN, client as u64, round as u64, adapter as u64])
}

/// Set up every client of `fed` with the chosen local cluster policy.
pub fn setup_clients(fed: &Federation, policy: LocalClusterPolicy, master_seed: u64) -> Result<Vec<ClientState>> {
    fed.clients
        .iter()
        .map(|c| {
            let id = c.train.client_id();
            let count = match policy {
                LocalClusterPolicy::Scripted => LocalClusterCount::Fixed(c.tasks.len()),
                LocalClusterPolicy::Fixed(n) => LocalClusterCount::Fixed(n),
                LocalClusterPolicy::Auto { k_min, k_max } => LocalClusterCount::Auto { k_min, k_max },
            };
            client_setup_with(
                c.train.clone(),
                count,
                derive_seed(master_seed, &[stream::LOCAL_CLUSTER, id as u64]),
            )
        })
        .collect()
}

/// Evaluate every client's test split through the router.
pub fn evaluate_round(
    fed: &Federation,
    clients: &[ClientState],
    model: &GlobalClusterModel,
    cluster_tasks: &[Option<usize>],
    mode: EvalMode,
) -> Result<EvalTally> {
    let mut tally = EvalTally::default();
    for (state, data) in clients.iter().zip(&fed.clients) {
        let router = Router::new(mode, state, model)?;
        tally.merge(&batch_evaluate(&data.test, &router, cluster_tasks)?.tally);
    }
    Ok(tally)
}

/// Setup, then `cfg.rounds` rounds of plan, train, aggregate and evaluate.
pub fn run_federation(
    fed: &Federation,
    cfg: &FederationConfig,
    train: &TrainConfig,
    opts: &RunOptions,
) -> Result<FederationRun> {
    cfg.validate()?;
    train.validate()?;
    let mut clients = setup_clients(fed, opts.local_clusters, cfg.master_seed)?;
    let index: BTreeMap<usize, usize> = clients.iter().enumerate().map(|(i, c)| (c.client_id(), i)).collect();
    let reports = clients
        .iter()
        .map(|c| c.first_round_report(fed.class_count()))
        .collect::<Result<Vec<_>>>()?;
    let initial_model = server_setup(&reports, cfg)?;
    let cluster_tasks = cluster_majority_tasks(&initial_model, &clients);
    let mut model = initial_model.clone();
    let mut rounds = Vec::with_capacity(cfg.rounds);
    let mut trace = Vec::new();
    for round in 0..cfg.rounds {
        let plan = plan_round(&model, round, cfg)?;
        let mut updates = Vec::with_capacity(plan.assignments.len());
        for a in &plan.assignments {
            let seed = training_seed(cfg.master_seed, a.client_id, round, a.global_cluster);
            let update = clients[index[&a.client_id]].train_assignment(a, &train.with_seed(seed))?;
            trace.push(TraceRecord {
                round,
                client_id: a.client_id,
                global_cluster: a.global_cluster,
                mode: cfg.mode,
                samples: update.sample_count,
            });
            updates.push(update);
        }
        model = aggregate_round(&model, &updates, cfg)?;
        rounds.push(evaluate_round(fed, &clients, &model, &cluster_tasks, opts.eval_mode)?.to_record(round));
    }
    Ok(FederationRun {
        initial_model,
        model,
        clients,
        cluster_tasks,
        rounds,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adapter::init_adapter;
    use crate::datagen::{build_scenario, Scenario, ScenarioConfig};

    fn small(s: Scenario) -> Federation {
        build_scenario(&ScenarioConfig {
            scenario: s,
            train_per_client: 160,
            test_per_client: 40,
            master_seed: 21,
            ..Default::default()
        })
        .unwrap()
    }

    fn adapter_with(v: f64) -> AdapterParams {
        AdapterParams::from_parts(0, 0, vec![vec![v]], vec![v + 2.0]).unwrap()
    }

    fn fake_model(matched: &[(usize, Vec<usize>)], n_g: usize) -> GlobalClusterModel {
        let mut local_to_global = BTreeMap::new();
        let mut membership = vec![Vec::new(); n_g];
        for (client, gs) in matched {
            for (l, &g) in gs.iter().enumerate() {
                membership[g].push((*client, l));
            }
            local_to_global.insert(*client, gs.clone());
        }
        GlobalClusterModel {
            global_centroids: CentroidSet {
                centroids: (0..n_g).map(|g| vec![g as f64]).collect(),
                assignments: vec![],
                inertia: 0.0,
            },
            membership,
            adapters: (0..n_g).map(|g| adapter_with(g as f64)).collect(),
            local_to_global,
        }
    }

    #[test]
    fn single_clients_pair_up_by_task() {
        let fed = small(Scenario::Single);
        let clients = setup_clients(&fed, LocalClusterPolicy::Scripted, 0).unwrap();
        let reports: Vec<_> = clients.iter().map(|c| c.first_round_report(4).unwrap()).collect();
        let model = server_setup(&reports, &FederationConfig::default()).unwrap();
        assert_eq!(model.n_g(), 4);
        for members in &model.membership {
            assert_eq!(members.len(), 2);
            let tasks: Vec<usize> = members.iter().map(|&(c, _)| fed.clients[c].tasks[0]).collect();
            assert_eq!(tasks[0], tasks[1]);
        }
        assert!(model.adapters.iter().all(|a| a.flat().all(|x| x == 0.0)));
    }

    #[test]
    fn one_global_cluster_takes_everything() {
        let fed = small(Scenario::Dual);
        let clients = setup_clients(&fed, LocalClusterPolicy::Scripted, 0).unwrap();
        let reports: Vec<_> = clients.iter().map(|c| c.first_round_report(4).unwrap()).collect();
        let cfg = FederationConfig {
            n_g: GlobalClusterCount::Fixed(1),
            ..Default::default()
        };
        let model = server_setup(&reports, &cfg).unwrap();
        assert_eq!(model.membership[0].len(), 16);
        let too_many = FederationConfig {
            n_g: GlobalClusterCount::Fixed(17),
            ..Default::default()
        };
        assert!(server_setup(&reports, &too_many).is_err());
        assert!(server_setup(&[], &cfg).is_err());
    }

    #[test]
    fn auto_n_g_finds_four_tasks() {
        let fed = small(Scenario::Single);
        let clients = setup_clients(&fed, LocalClusterPolicy::Scripted, 0).unwrap();
        let reports: Vec<_> = clients.iter().map(|c| c.first_round_report(4).unwrap()).collect();
        let cfg = FederationConfig {
            n_g: GlobalClusterCount::Auto,
            ..Default::default()
        };
        assert_eq!(server_setup(&reports, &cfg).unwrap().n_g(), 4);
    }

    #[test]
    fn round_robin_cycles_sorted_matches() {
        let model = fake_model(&[(0, vec![5, 2]), (1, vec![3])], 6);
        let cfg = FederationConfig::default();
        let picks: Vec<usize> = (0..4)
            .map(|r| plan_round(&model, r, &cfg).unwrap().assignments[0].global_cluster)
            .collect();
        assert_eq!(picks, vec![2, 5, 2, 5]);
        for r in 0..4 {
            let plan = plan_round(&model, r, &cfg).unwrap();
            assert_eq!(plan.assignments.len(), 2);
            assert_eq!(plan.assignments[1].global_cluster, 3);
        }
    }

    #[test]
    fn star_mode_assigns_every_match() {
        let model = fake_model(&[(0, vec![0, 1, 2, 3])], 4);
        let cfg = FederationConfig {
            mode: ScheduleMode::Star,
            ..Default::default()
        };
        let plan = plan_round(&model, 7, &cfg).unwrap();
        let gs: Vec<usize> = plan.assignments.iter().map(|a| a.global_cluster).collect();
        assert_eq!(gs, vec![0, 1, 2, 3]);
    }

    fn update(client: usize, g: usize, a: AdapterParams, n: usize) -> ClientUpdate {
        ClientUpdate {
            client_id: client,
            global_cluster: g,
            adapter: a,
            sample_count: n,
        }
    }

    #[test]
    fn aggregation_examples() {
        let model = fake_model(&[(0, vec![0, 1]), (1, vec![0])], 2);
        let cfg = FederationConfig::default();
        let one = aggregate_round(&model, &[update(0, 0, adapter_with(7.0), 10)], &cfg).unwrap();
        assert!(one.adapters[0].same_parameters(&adapter_with(7.0)));
        assert!(one.adapters[1].same_parameters(&model.adapters[1]));

        let a = AdapterParams::from_parts(0, 0, vec![vec![1.0]], vec![3.0]).unwrap();
        let b = AdapterParams::from_parts(0, 0, vec![vec![3.0]], vec![5.0]).unwrap();
        let two = aggregate_round(&model, &[update(1, 0, b, 1), update(0, 0, a, 3)], &cfg).unwrap();
        assert_eq!(two.adapters[0].weights(), &[2.0]);
        assert_eq!(two.adapters[0].bias(), &[4.0]);
        assert_eq!(two.structure_fingerprint(), model.structure_fingerprint());

        assert!(aggregate_round(&model, &[update(0, 9, adapter_with(0.0), 1)], &cfg).is_err());
        let wrong = init_adapter(3, 2, 0, 0).unwrap();
        assert!(aggregate_round(&model, &[update(0, 0, wrong, 1), update(1, 0, adapter_with(1.0), 1)], &cfg).is_err());
    }

    #[test]
    fn sample_weighted_aggregation() {
        let model = fake_model(&[(0, vec![0]), (1, vec![0])], 1);
        let cfg = FederationConfig {
            aggregation: Aggregation::SampleWeighted,
            ..Default::default()
        };
        let a = adapter_with(0.0);
        let b = adapter_with(4.0);
        let out = aggregate_round(&model, &[update(0, 0, a, 3), update(1, 0, b, 1)], &cfg).unwrap();
        assert!((out.adapters[0].weights()[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_rounds_is_just_setup() {
        let fed = small(Scenario::Dual);
        let cfg = FederationConfig {
            rounds: 0,
            ..Default::default()
        };
        let run = run_federation(&fed, &cfg, &TrainConfig::default(), &RunOptions::default()).unwrap();
        assert_eq!(run.model, run.initial_model);
        assert!(run.rounds.is_empty() && run.trace.is_empty());
    }

    #[test]
    fn single_scenario_trains_its_cluster_every_round() {
        let fed = small(Scenario::Single);
        let cfg = FederationConfig::default();
        let run = run_federation(&fed, &cfg, &TrainConfig::default(), &RunOptions::default()).unwrap();
        assert_eq!(run.rounds.len(), 25);
        for c in 0..8 {
            let mine: Vec<&TraceRecord> = run.trace.iter().filter(|t| t.client_id == c).collect();
            assert_eq!(mine.len(), 25);
            assert!(mine.iter().all(|t| t.global_cluster == mine[0].global_cluster));
        }
        assert_eq!(run.model.structure_fingerprint(), run.initial_model.structure_fingerprint());
        for (st, before) in run.clients.iter().zip(setup_clients(&fed, LocalClusterPolicy::Scripted, 0).unwrap()) {
            assert_eq!(st.clustering_fingerprint(), before.clustering_fingerprint());
        }
    }

    #[test]
    fn standard_mode_trains_once_per_client_per_round() {
        let fed = small(Scenario::All);
        let cfg = FederationConfig {
            rounds: 6,
            ..Default::default()
        };
        let run = run_federation(&fed, &cfg, &TrainConfig::default(), &RunOptions::default()).unwrap();
        for r in 0..6 {
            for c in 0..8 {
                assert_eq!(run.trace.iter().filter(|t| t.round == r && t.client_id == c).count(), 1);
            }
        }
    }

    #[test]
    fn aggregation_ignores_arrival_order() {
        let fed = small(Scenario::All);
        let clients = setup_clients(&fed, LocalClusterPolicy::Scripted, 0).unwrap();
        let reports: Vec<_> = clients.iter().map(|c| c.first_round_report(4).unwrap()).collect();
        let cfg = FederationConfig::default();
        let model = server_setup(&reports, &cfg).unwrap();
        let plan = plan_round(&model, 0, &cfg).unwrap();
        let mut updates: Vec<ClientUpdate> = plan
            .assignments
            .iter()
            .map(|a| {
                let mut st = clients[a.client_id].clone();
                st.train_assignment(a, &TrainConfig::default().with_seed(a.client_id as u64)).unwrap()
            })
            .collect();
        let fwd = aggregate_round(&model, &updates, &cfg).unwrap();
        updates.reverse();
        let rev = aggregate_round(&model, &updates, &cfg).unwrap();
        for (a, b) in fwd.adapters.iter().zip(&rev.adapters) {
            assert!(a.max_abs_diff(b).unwrap() <= 1e-12);
        }
    }

    #[test]
    fn n_g_parses_number_or_auto() {
        let c: FederationConfig = serde_json::from_str(r#"{"n_g": "auto"}"#).unwrap();
        assert_eq!(c.n_g, GlobalClusterCount::Auto);
        let c: FederationConfig = serde_json::from_str(r#"{"n_g": 3, "mode": "star"}"#).unwrap();
        assert_eq!(c.n_g, GlobalClusterCount::Fixed(3));
        assert_eq!(c.mode, ScheduleMode::Star);
        assert!(serde_json::from_str::<FederationConfig>(r#"{"n_g": "many"}"#).is_err());
        assert!(serde_json::from_str::<FederationConfig>(r#"{"bogus": 1}"#).is_err());
        assert_eq!(serde_json::to_string(&GlobalClusterCount::Auto).unwrap(), "\"auto\"");
    }
}
