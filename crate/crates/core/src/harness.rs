//! Experiment grids and their output files.
//!
//! An [`ExperimentConfig`] names methods, scenarios and seeds. Every cell of
//! the grid is run sequentially and its records are appended to the output
//! files as soon as the cell finishes. `summary.csv` is written last.
//!
//! Files written by [`run_experiment`]:
//!
//! - `metrics.jsonl`: a header object, then one record per round per run
//! - `summary.csv`: final-round accuracy per method and scenario, mean and std over seeds
//! - `trace.csv`: which client trained which cluster in which round
//! - `routing.csv`: per-sample routing decisions of the final model (optional)
//! - `embeddings/`: per-client embedding CSVs with cluster columns (optional)
//!
//! CSV files start with a `# config_hash=... master_seeds=...` line.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::adapter::TrainConfig;
use crate::baselines::{run_fedavg, run_fedcluster, run_local_only};
use crate::client::ClientState;
use crate::clustering::{assign_nearest, select_k_silhouette};
use crate::datagen::{build_scenario, export_embeddings as export_matrix, Federation, Scenario, ScenarioConfig};
use crate::error::{Error, Result};
use crate::metrics::{mean_std, RoundRecord};
use crate::rng::{derive_seed, stream};
use crate::router::{batch_evaluate, EvalMode, Router};
use crate::server::{
    run_federation, setup_clients, FederationConfig, FederationRun, GlobalClusterCount, LocalClusterPolicy,
    RunOptions, ScheduleMode, TraceRecord,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "fedrouter")]
    FedRouter,
    #[serde(rename = "fedrouter-star")]
    FedRouterStar,
    #[serde(rename = "fedavg")]
    FedAvg,
    #[serde(rename = "local")]
    Local,
    #[serde(rename = "fedcluster")]
    FedCluster,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::FedRouter,
        Method::FedRouterStar,
        Method::FedAvg,
        Method::Local,
        Method::FedCluster,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::FedRouter => "fedrouter",
            Method::FedRouterStar => "fedrouter-star",
            Method::FedAvg => "fedavg",
            Method::Local => "local",
            Method::FedCluster => "fedcluster",
        }
    }

    pub fn is_routed(self) -> bool {
        matches!(self, Method::FedRouter | Method::FedRouterStar)
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown method `{s}`")))
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.pad(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub methods: Vec<Method>,
    pub scenarios: Vec<Scenario>,
    /// Each seed is the master seed of one run: data, clustering and training.
    pub seeds: Vec<u64>,
    pub data: ScenarioConfig,
    pub federation: FederationConfig,
    pub train: TrainConfig,
    pub eval_mode: EvalMode,
    /// Silhouette-selected local and global cluster counts.
    pub auto_k: bool,
    pub routing_dump: bool,
    pub export_embeddings: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            methods: Method::ALL.to_vec(),
            scenarios: vec![Scenario::Single, Scenario::Dual, Scenario::All],
            seeds: vec![1, 2, 3, 4, 5],
            data: ScenarioConfig::default(),
            federation: FederationConfig::default(),
            train: TrainConfig::default(),
            eval_mode: EvalMode::Local,
            auto_k: false,
            routing_dump: false,
            export_embeddings: false,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() || self.scenarios.is_empty() || self.seeds.is_empty() {
            return Err(Error::Config("methods, scenarios and seeds must be non-empty".into()));
        }
        self.federation.validate()?;
        self.train.validate()?;
        for &s in &self.scenarios {
            let data = self.scenario_config(s, self.seeds[0]);
            data.validate()?;
            crate::datagen::client_task_layout(s, data.n_clients, data.n_tasks)?;
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn config_hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn scenario_config(&self, scenario: Scenario, seed: u64) -> ScenarioConfig {
        ScenarioConfig {
            scenario,
            master_seed: seed,
            ..self.data.clone()
        }
    }

    pub fn federation_config(&self, method: Method, seed: u64) -> FederationConfig {
        FederationConfig {
            master_seed: seed,
            mode: if method == Method::FedRouterStar {
                ScheduleMode::Star
            } else {
                ScheduleMode::Standard
            },
            n_g: if self.auto_k {
                GlobalClusterCount::Auto
            } else {
                self.federation.n_g
            },
            ..self.federation.clone()
        }
    }

    /// Scripted counts by default. With `auto_k`, silhouette selection,
    /// except in the single scenario where every client keeps one cluster.
    pub fn local_policy(&self, scenario: Scenario) -> LocalClusterPolicy {
        match (self.auto_k, scenario) {
            (false, _) => LocalClusterPolicy::Scripted,
            (true, Scenario::Single) => LocalClusterPolicy::Fixed(1),
            (true, _) => LocalClusterPolicy::Auto {
                k_min: self.federation.k_min,
                k_max: self.federation.k_max,
            },
        }
    }

    fn header_line(&self) -> String {
        let seeds: Vec<String> = self.seeds.iter().map(u64::to_string).collect();
        format!("config_hash={} master_seeds={}", self.config_hash(), seeds.join(","))
    }
}

/// One finished grid cell.
#[derive(Debug, Clone)]
pub struct CellRun {
    pub method: Method,
    pub scenario: Scenario,
    pub seed: u64,
    pub rounds: Vec<RoundRecord>,
    pub trace: Vec<TraceRecord>,
    /// Present for the routed methods.
    pub federation: Option<FederationRun>,
}

impl CellRun {
    pub fn final_accuracy(&self) -> f64 {
        self.rounds.last().map_or(0.0, |r| r.accuracy)
    }
}

/// Run one (method, scenario, seed) cell without writing anything.
pub fn run_cell(cfg: &ExperimentConfig, method: Method, scenario: Scenario, seed: u64) -> Result<(Federation, CellRun)> {
    let fed = build_scenario(&cfg.scenario_config(scenario, seed))?;
    let fcfg = cfg.federation_config(method, seed);
    let (rounds, trace, federation) = match method {
        Method::FedRouter | Method::FedRouterStar => {
            let opts = RunOptions {
                local_clusters: cfg.local_policy(scenario),
                eval_mode: cfg.eval_mode,
            };
            let run = run_federation(&fed, &fcfg, &cfg.train, &opts)?;
            (run.rounds.clone(), run.trace.clone(), Some(run))
        }
        Method::FedAvg => {
            let r = run_fedavg(&fed, &fcfg, &cfg.train)?;
            (r.rounds, r.trace, None)
        }
        Method::Local => {
            let r = run_local_only(&fed, &fcfg, &cfg.train)?;
            (r.rounds, r.trace, None)
        }
        Method::FedCluster => {
            let r = run_fedcluster(&fed, &fcfg, &cfg.train)?;
            (r.rounds, r.trace, None)
        }
    };
    Ok((
        fed,
        CellRun {
            method,
            scenario,
            seed,
            rounds,
            trace,
            federation,
        },
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: Method,
    pub scenario: Scenario,
    pub mean: f64,
    pub std: Option<f64>,
    pub n_seeds: usize,
}

#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub config_hash: String,
    pub runs: Vec<CellRun>,
    pub summary: Vec<SummaryRow>,
}

#[derive(Serialize)]
struct MetricsHeader<'a> {
    config_hash: &'a str,
    master_seeds: &'a [u64],
    eval_mode: EvalMode,
}

#[derive(Serialize)]
struct MetricsLine<'a> {
    method: Method,
    scenario: Scenario,
    seed: u64,
    #[serde(flatten)]
    record: &'a RoundRecord,
}

struct Outputs {
    metrics: BufWriter<File>,
    trace: BufWriter<File>,
    routing: Option<BufWriter<File>>,
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

impl Outputs {
    fn open(cfg: &ExperimentConfig, out: &Path) -> Result<Self> {
        fs::create_dir_all(out)?;
        let header = cfg.header_line();
        let mut metrics = create(&out.join("metrics.jsonl"))?;
        let hash = cfg.config_hash();
        serde_json::to_writer(
            &mut metrics,
            &MetricsHeader {
                config_hash: &hash,
                master_seeds: &cfg.seeds,
                eval_mode: cfg.eval_mode,
            },
        )?;
        writeln!(metrics)?;
        let mut trace = create(&out.join("trace.csv"))?;
        writeln!(trace, "# {header}")?;
        writeln!(trace, "method,scenario,seed,round,client_id,global_cluster,mode,samples")?;
        let routing = if cfg.routing_dump {
            let mut w = create(&out.join("routing.csv"))?;
            writeln!(w, "# {header}")?;
            writeln!(
                w,
                "method,scenario,seed,client_id,sample,true_task,mode,chosen_cluster,distance,correct"
            )?;
            Some(w)
        } else {
            None
        };
        Ok(Self { metrics, trace, routing })
    }

    fn append(&mut self, cfg: &ExperimentConfig, fed: &Federation, cell: &CellRun) -> Result<()> {
        for r in &cell.rounds {
            serde_json::to_writer(
                &mut self.metrics,
                &MetricsLine {
                    method: cell.method,
                    scenario: cell.scenario,
                    seed: cell.seed,
                    record: r,
                },
            )?;
            writeln!(self.metrics)?;
        }
        for t in &cell.trace {
            writeln!(
                self.trace,
                "{},{},{},{},{},{},{},{}",
                cell.method,
                cell.scenario,
                cell.seed,
                t.round,
                t.client_id,
                t.global_cluster,
                t.mode.name(),
                t.samples
            )?;
        }
        if let (Some(w), Some(run)) = (self.routing.as_mut(), cell.federation.as_ref()) {
            for (state, data) in run.clients.iter().zip(&fed.clients) {
                let router = Router::new(cfg.eval_mode, state, &run.model)?;
                let out = batch_evaluate(&data.test, &router, &run.cluster_tasks)?;
                for (d, ok) in out.decisions.iter().zip(&out.routed_correctly) {
                    writeln!(
                        w,
                        "{},{},{},{},{},{},{},{},{},{}",
                        cell.method,
                        cell.scenario,
                        cell.seed,
                        state.client_id(),
                        d.sample,
                        data.test.rows()[d.sample].task_id,
                        cfg.eval_mode.name(),
                        d.global_cluster,
                        d.distance,
                        ok
                    )?;
                }
            }
        }
        self.metrics.flush()?;
        self.trace.flush()?;
        if let Some(w) = self.routing.as_mut() {
            w.flush()?;
        }
        Ok(())
    }
}

/// Mean and std of the final-round accuracy per (method, scenario), in
/// configuration order.
pub fn summarize(cfg: &ExperimentConfig, runs: &[CellRun]) -> Vec<SummaryRow> {
    let mut rows = Vec::new();
    for &method in &cfg.methods {
        for &scenario in &cfg.scenarios {
            let finals: Vec<f64> = runs
                .iter()
                .filter(|r| r.method == method && r.scenario == scenario)
                .map(CellRun::final_accuracy)
                .collect();
            if finals.is_empty() {
                continue;
            }
            let (mean, std) = mean_std(&finals);
            rows.push(SummaryRow {
                method,
                scenario,
                mean,
                std,
                n_seeds: finals.len(),
            });
        }
    }
    rows
}

/// Run the whole grid and write its files under `out`. The configuration is
/// validated before any file is created.
pub fn run_experiment(cfg: &ExperimentConfig, out: &Path) -> Result<ExperimentReport> {
    cfg.validate()?;
    let mut outputs = Outputs::open(cfg, out)?;
    let mut runs = Vec::new();
    for &scenario in &cfg.scenarios {
        for &seed in &cfg.seeds {
            if cfg.export_embeddings {
                let fed = build_scenario(&cfg.scenario_config(scenario, seed))?;
                let dir = out.join("embeddings").join(format!("{scenario}_seed{seed}"));
                export_embeddings(&fed, cfg.local_policy(scenario), &dir, &cfg.header_line())?;
            }
            for &method in &cfg.methods {
                let (fed, cell) = run_cell(cfg, method, scenario, seed)?;
                outputs.append(cfg, &fed, &cell)?;
                runs.push(cell);
            }
        }
    }
    let summary = summarize(cfg, &runs);
    let mut w = create(&out.join("summary.csv"))?;
    writeln!(w, "# {}", cfg.header_line())?;
    writeln!(w, "method,scenario,mean,std,n_seeds")?;
    for r in &summary {
        let std = r.std.map(|s| s.to_string()).unwrap_or_default();
        writeln!(w, "{},{},{},{},{}", r.method, r.scenario, r.mean, std, r.n_seeds)?;
    }
    w.flush()?;
    Ok(ExperimentReport {
        config_hash: cfg.config_hash(),
        runs,
        summary,
    })
}

/// Per-client embedding files, written to `dir`.
///
/// `client{i}_train.csv` carries the local cluster of every training row as
/// assigned at setup. `client{i}_test.csv` carries the nearest local centroid
/// of every test row.
pub fn export_embeddings(
    fed: &Federation,
    policy: LocalClusterPolicy,
    dir: &Path,
    comment: &str,
) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let clients = setup_clients(fed, policy, fed.config.master_seed)?;
    let mut paths = Vec::new();
    for (state, data) in clients.iter().zip(&fed.clients) {
        let id = state.client_id();
        let train_path = dir.join(format!("client{id}_train.csv"));
        export_matrix(&train_path, &data.train, Some(&state.local_clusters().assignments), comment)?;
        let test_path = dir.join(format!("client{id}_test.csv"));
        export_matrix(&test_path, &data.test, Some(&nearest_local(state, fed, id)?), comment)?;
        paths.push(train_path);
        paths.push(test_path);
    }
    Ok(paths)
}

fn nearest_local(state: &ClientState, fed: &Federation, index: usize) -> Result<Vec<usize>> {
    fed.clients[index]
        .test
        .rows()
        .iter()
        .map(|s| assign_nearest(&s.embedding, &state.local_clusters().centroids).map(|(i, _)| i))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SilhouetteScope {
    Local,
    Global,
}

impl std::str::FromStr for SilhouetteScope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "local" => Ok(SilhouetteScope::Local),
            "global" => Ok(SilhouetteScope::Global),
            other => Err(Error::Config(format!("unknown silhouette scope `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SilhouetteRow {
    pub k: usize,
    pub mean: f64,
    /// Across clients; `None` for the global scope or a single client.
    pub std: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SilhouetteTable {
    pub scope: SilhouetteScope,
    pub scenario: Scenario,
    pub rows: Vec<SilhouetteRow>,
    /// Argmax of the mean score, smaller k on ties. `None` when skipped.
    pub best_k: Option<usize>,
    pub notice: Option<String>,
}

impl SilhouetteTable {
    pub fn write_csv<W: Write>(&self, mut w: W, header: &str) -> Result<()> {
        writeln!(w, "# {header}")?;
        if let Some(n) = &self.notice {
            writeln!(w, "# {n}")?;
        }
        writeln!(w, "scope,scenario,k,mean,std")?;
        let scope = match self.scope {
            SilhouetteScope::Local => "local",
            SilhouetteScope::Global => "global",
        };
        for r in &self.rows {
            let std = r.std.map(|s| s.to_string()).unwrap_or_default();
            writeln!(w, "{scope},{},{},{},{std}", self.scenario, r.k, r.mean)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Silhouette score against k.
///
/// Global scope clusters the pooled local centroids (clients use their
/// scripted cluster counts). Local scope scores every client's training
/// embeddings and reports mean and std across clients; it is skipped for the
/// single scenario, where each client holds one task. `k_max` is clamped to
/// one less than the number of points.
pub fn silhouette_report(
    data: &ScenarioConfig,
    scope: SilhouetteScope,
    k_min: usize,
    k_max: usize,
) -> Result<SilhouetteTable> {
    if k_min < 2 || k_min > k_max {
        return Err(Error::InvalidArgument(format!("k range {k_min}..={k_max} invalid")));
    }
    let fed = build_scenario(data)?;
    let seed = data.master_seed;
    let per_k: Vec<Vec<(usize, f64)>> = match scope {
        SilhouetteScope::Global => {
            let clients = setup_clients(&fed, LocalClusterPolicy::Scripted, seed)?;
            let pooled: Vec<&[f64]> = clients
                .iter()
                .flat_map(|c| c.local_clusters().centroids.iter().map(Vec::as_slice))
                .collect();
            let hi = k_max.min(pooled.len().saturating_sub(1));
            vec![select_k_silhouette(&pooled, k_min, hi, derive_seed(seed, &[stream::GLOBAL_CLUSTER, 1]))?.scores]
        }
        SilhouetteScope::Local if data.scenario == Scenario::Single => {
            return Ok(SilhouetteTable {
                scope,
                scenario: data.scenario,
                rows: Vec::new(),
                best_k: None,
                notice: Some("local scope skipped: single-task clients".into()),
            });
        }
        SilhouetteScope::Local => fed
            .clients
            .iter()
            .map(|c| {
                let points = c.train.embeddings();
                let hi = k_max.min(points.len().saturating_sub(1));
                let s = derive_seed(seed, &[stream::LOCAL_CLUSTER, c.train.client_id() as u64]);
                select_k_silhouette(&points, k_min, hi, s).map(|sel| sel.scores)
            })
            .collect::<Result<_>>()?,
    };
    let rows: Vec<SilhouetteRow> = per_k[0]
        .iter()
        .enumerate()
        .map(|(i, &(k, _))| {
            let vals: Vec<f64> = per_k.iter().map(|s| s[i].1).collect();
            let (mean, std) = mean_std(&vals);
            SilhouetteRow { k, mean, std }
        })
        .collect();
    let best_k = rows
        .iter()
        .fold(None::<&SilhouetteRow>, |b, r| match b {
            Some(b) if b.mean >= r.mean => Some(b),
            _ => Some(r),
        })
        .map(|r| r.k);
    Ok(SilhouetteTable {
        scope,
        scenario: data.scenario,
        rows,
        best_k,
        notice: None,
    })
}
