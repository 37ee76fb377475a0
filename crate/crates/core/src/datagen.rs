//! Synthetic multi-task embedding scenarios.
//!
//! A task is a Gaussian blob around a task center, split into classes by
//! per-class offsets. Task centers live on the first `n_tasks` coordinate
//! axes and class offsets live in the remaining coordinates, so the task
//! structure (what clustering has to recover) and the class structure (what
//! an adapter has to learn) never interfere with each other geometrically.
//!
//! With `conflict` enabled, tasks are split into two conflict groups by task
//! id parity. Tasks of one group share their class offsets but relabel them
//! with a cyclic shift, so a single linear head cannot fit the whole group.
//!
//! Embedding CSV format: header `task_id,label,e0,...,e{E-1}` with an
//! optional trailing `cluster` column, one sample per row, `#` lines are
//! comments.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::rng::{derive_seed, seeded_rng, stream};

/// One labeled embedding. `task_id` is ground truth used for scoring only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub embedding: Vec<f64>,
    pub task_id: usize,
    pub label: usize,
}

/// A client's samples, all of one embedding dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    client_id: usize,
    dim: usize,
    rows: Vec<Sample>,
}

impl EmbeddingMatrix {
    pub fn new(client_id: usize, rows: Vec<Sample>) -> Result<Self> {
        let first = rows.first().ok_or(Error::Empty("embedding matrix"))?;
        let dim = first.embedding.len();
        if dim == 0 {
            return Err(Error::InvalidArgument("zero-dimensional embeddings".into()));
        }
        for r in &rows {
            check_dim(dim, r.embedding.len())?;
        }
        Ok(Self {
            client_id,
            dim,
            rows,
        })
    }

    pub fn client_id(&self) -> usize {
        self.client_id
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn rows(&self) -> &[Sample] {
        &self.rows
    }

    pub fn embeddings(&self) -> Vec<&[f64]> {
        self.rows.iter().map(|r| r.embedding.as_slice()).collect()
    }

    /// Rows at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Vec<&Sample> {
        indices.iter().map(|&i| &self.rows[i]).collect()
    }

    /// Sorted distinct ground-truth task ids.
    pub fn task_ids(&self) -> Vec<usize> {
        let mut t: Vec<usize> = self.rows.iter().map(|r| r.task_id).collect();
        t.sort_unstable();
        t.dedup();
        t
    }
}

/// Generative description of one task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub task_id: usize,
    pub center: Vec<f64>,
    pub class_count: usize,
    pub class_offsets: Vec<Vec<f64>>,
    pub noise_sigma: f64,
    /// Tasks sharing a group share `class_offsets`.
    pub conflict_group: usize,
    /// Emitted label is `(class + label_shift) % class_count`.
    pub label_shift: usize,
}

impl TaskSpec {
    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.center.is_empty() {
            return Err(Error::InvalidArgument("task center is empty".into()));
        }
        if self.class_count < 2 {
            return Err(Error::InvalidArgument(format!(
                "class_count must be >= 2, got {}",
                self.class_count
            )));
        }
        if self.class_offsets.len() != self.class_count {
            return Err(Error::InvalidArgument(format!(
                "{} class offsets for {} classes",
                self.class_offsets.len(),
                self.class_count
            )));
        }
        for o in &self.class_offsets {
            check_dim(self.dim(), o.len())?;
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "noise_sigma must be finite and >= 0, got {}",
                self.noise_sigma
            )));
        }
        Ok(())
    }

    /// Mean embedding of generative class `class` (before label shifting).
    pub fn class_mean(&self, class: usize) -> Vec<f64> {
        self.center
            .iter()
            .zip(&self.class_offsets[class])
            .map(|(c, o)| c + o)
            .collect()
    }
}

/// Draw `n` samples of one task.
pub fn generate_task(spec: &TaskSpec, n: usize, seed: u64) -> Result<Vec<Sample>> {
    if n == 0 {
        return Err(Error::InvalidArgument("sample count must be positive".into()));
    }
    spec.validate()?;
    let mut rng = seeded_rng(seed);
    let rows = (0..n)
        .map(|_| {
            let class = rng.random_range(0..spec.class_count);
            let embedding = spec
                .class_mean(class)
                .into_iter()
                .map(|m| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    m + spec.noise_sigma * z
                })
                .collect();
            Sample {
                embedding,
                task_id: spec.task_id,
                label: (class + spec.label_shift) % spec.class_count,
            }
        })
        .collect();
    Ok(rows)
}

/// Error unless every pair of task centers is at least `separation` apart.
pub fn check_separation(tasks: &[TaskSpec], separation: f64) -> Result<()> {
    for (i, a) in tasks.iter().enumerate() {
        for b in &tasks[i + 1..] {
            let d = crate::clustering::euclidean(&a.center, &b.center);
            if d + 1e-9 < separation {
                return Err(Error::InvalidArgument(format!(
                    "tasks {} and {} are {d} apart, below separation {separation}",
                    a.task_id, b.task_id
                )));
            }
        }
    }
    Ok(())
}

/// How many tasks each client holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "lowercase")]
pub enum Scenario {
    Single,
    Dual,
    All,
}

impl Scenario {
    pub fn name(self) -> &'static str {
        match self {
            Scenario::Single => "single",
            Scenario::Dual => "dual",
            Scenario::All => "all",
        }
    }

    pub fn tasks_per_client(self, n_tasks: usize) -> usize {
        match self {
            Scenario::Single => 1,
            Scenario::Dual => 2,
            Scenario::All => n_tasks,
        }
    }
}

impl std::str::FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "single" => Ok(Scenario::Single),
            "dual" => Ok(Scenario::Dual),
            "all" => Ok(Scenario::All),
            other => Err(Error::Config(format!("unknown scenario `{other}`"))),
        }
    }
}

impl std::fmt::Display for Scenario {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.pad(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub scenario: Scenario,
    pub n_clients: usize,
    pub n_tasks: usize,
    pub train_per_client: usize,
    pub test_per_client: usize,
    pub dim: usize,
    pub separation: f64,
    pub noise_sigma: f64,
    pub class_count: usize,
    /// Norm of every class offset.
    pub class_spread: f64,
    pub conflict: bool,
    /// Draw each client's test split from every task instead of its own.
    pub test_all_tasks: bool,
    pub master_seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            scenario: Scenario::All,
            n_clients: 8,
            n_tasks: 4,
            train_per_client: 600,
            test_per_client: 300,
            dim: 32,
            separation: 10.0,
            noise_sigma: 1.0,
            class_count: 4,
            class_spread: 4.0,
            conflict: true,
            test_all_tasks: false,
            master_seed: 0,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("n_clients", self.n_clients),
            ("n_tasks", self.n_tasks),
            ("train_per_client", self.train_per_client),
            ("test_per_client", self.test_per_client),
            ("dim", self.dim),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.class_count < 2 {
            return Err(Error::Config("class_count must be >= 2".into()));
        }
        if self.n_tasks + self.class_count > self.dim {
            return Err(Error::Config(format!(
                "dim {} cannot host {} task axes plus {} orthogonal class offsets",
                self.dim, self.n_tasks, self.class_count
            )));
        }
        for (name, v) in [
            ("separation", self.separation),
            ("noise_sigma", self.noise_sigma),
            ("class_spread", self.class_spread),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

/// Task ids held by each client.
///
/// Clients are split into `n_tasks` consecutive blocks of equal size. Single
/// gives block `b` task `b`; Dual gives it the ring pair `{b, b+1 mod n_tasks}`;
/// All gives every client every task. With 8 clients and 4 tasks, Dual yields
/// `{0,1},{0,1},{1,2},{1,2},{2,3},{2,3},{3,0},{3,0}`.
pub fn client_task_layout(
    scenario: Scenario,
    n_clients: usize,
    n_tasks: usize,
) -> Result<Vec<Vec<usize>>> {
    if n_clients == 0 || n_tasks == 0 {
        return Err(Error::Layout("need at least one client and one task".into()));
    }
    if scenario == Scenario::All {
        return Ok(vec![(0..n_tasks).collect(); n_clients]);
    }
    if scenario == Scenario::Dual && n_tasks < 2 {
        return Err(Error::Layout("dual scenario needs at least 2 tasks".into()));
    }
    if !n_clients.is_multiple_of(n_tasks) {
        return Err(Error::Layout(format!(
            "{n_clients} clients cannot be tiled evenly over {n_tasks} tasks"
        )));
    }
    let block = n_clients / n_tasks;
    Ok((0..n_clients)
        .map(|i| {
            let b = i / block;
            match scenario {
                Scenario::Single => vec![b],
                _ => vec![b, (b + 1) % n_tasks],
            }
        })
        .collect())
}

fn orthonormal_offsets<R: Rng>(
    rng: &mut R,
    dim: usize,
    first_axis: usize,
    count: usize,
    norm: f64,
) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(count);
    while basis.len() < count {
        let mut v: Vec<f64> = (0..dim)
            .map(|j| {
                if j < first_axis {
                    0.0
                } else {
                    StandardNormal.sample(rng)
                }
            })
            .collect();
        for b in &basis {
            let dot: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= dot * y);
        }
        let len = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if len > 1e-6 {
            basis.push(v.into_iter().map(|x| x / len).collect());
        }
    }
    basis
        .into_iter()
        .map(|b| b.into_iter().map(|x| x * norm).collect())
        .collect()
}

/// Build the task specs of a scenario. Centers sit at `separation / sqrt(2)`
/// along axis `t`, so every pair is exactly `separation` apart.
pub fn build_tasks(cfg: &ScenarioConfig) -> Result<Vec<TaskSpec>> {
    cfg.validate()?;
    let scale = cfg.separation / std::f64::consts::SQRT_2;
    let n_groups = if cfg.conflict { 2.min(cfg.n_tasks) } else { cfg.n_tasks };
    let group_offsets: Vec<Vec<Vec<f64>>> = (0..n_groups)
        .map(|g| {
            let mut rng = seeded_rng(derive_seed(cfg.master_seed, &[stream::TASKS, g as u64]));
            orthonormal_offsets(&mut rng, cfg.dim, cfg.n_tasks, cfg.class_count, cfg.class_spread)
        })
        .collect();
    let tasks: Vec<TaskSpec> = (0..cfg.n_tasks)
        .map(|t| {
            let mut center = vec![0.0; cfg.dim];
            center[t] = scale;
            let (group, shift) = if cfg.conflict {
                (t % n_groups, t / n_groups)
            } else {
                (t, 0)
            };
            TaskSpec {
                task_id: t,
                center,
                class_count: cfg.class_count,
                class_offsets: group_offsets[group].clone(),
                noise_sigma: cfg.noise_sigma,
                conflict_group: group,
                label_shift: shift % cfg.class_count,
            }
        })
        .collect();
    check_separation(&tasks, cfg.separation)?;
    Ok(tasks)
}

/// Train and test data of one client.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientData {
    pub train: EmbeddingMatrix,
    pub test: EmbeddingMatrix,
    /// Tasks the scenario assigned to this client's training data.
    pub tasks: Vec<usize>,
}

/// A generated federation: configuration, task specs and per-client data.
#[derive(Debug, Clone, PartialEq)]
pub struct Federation {
    pub config: ScenarioConfig,
    pub tasks: Vec<TaskSpec>,
    pub clients: Vec<ClientData>,
}

impl Federation {
    pub fn n_clients(&self) -> usize {
        self.clients.len()
    }

    pub fn dim(&self) -> usize {
        self.config.dim
    }

    pub fn class_count(&self) -> usize {
        self.config.class_count
    }
}

fn split_counts(total: usize, parts: usize) -> impl Iterator<Item = usize> {
    let base = total / parts;
    let extra = total % parts;
    (0..parts).map(move |i| base + usize::from(i < extra))
}

fn draw_split(
    cfg: &ScenarioConfig,
    tasks: &[TaskSpec],
    client: usize,
    task_ids: &[usize],
    total: usize,
    purpose: u64,
) -> Result<EmbeddingMatrix> {
    let mut rows = Vec::with_capacity(total);
    for (&t, n) in task_ids.iter().zip(split_counts(total, task_ids.len())) {
        if n == 0 {
            continue;
        }
        let seed = derive_seed(cfg.master_seed, &[purpose, client as u64, t as u64]);
        rows.extend(generate_task(&tasks[t], n, seed)?);
    }
    let mut rng = seeded_rng(derive_seed(
        cfg.master_seed,
        &[stream::SHUFFLE, purpose, client as u64],
    ));
    rows.shuffle(&mut rng);
    EmbeddingMatrix::new(client, rows)
}

/// Generate every client's train and test split. Task data are iid within a
/// task and split in equal proportion across a client's tasks.
pub fn build_scenario(cfg: &ScenarioConfig) -> Result<Federation> {
    cfg.validate()?;
    let layout = client_task_layout(cfg.scenario, cfg.n_clients, cfg.n_tasks)?;
    let tasks = build_tasks(cfg)?;
    let all_tasks: Vec<usize> = (0..cfg.n_tasks).collect();
    let clients = layout
        .into_iter()
        .enumerate()
        .map(|(i, own)| {
            let train = draw_split(cfg, &tasks, i, &own, cfg.train_per_client, stream::TRAIN_DATA)?;
            let test_tasks = if cfg.test_all_tasks { &all_tasks } else { &own };
            let test = draw_split(cfg, &tasks, i, test_tasks, cfg.test_per_client, stream::TEST_DATA)?;
            Ok(ClientData {
                train,
                test,
                tasks: own,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Federation {
        config: cfg.clone(),
        tasks,
        clients,
    })
}

/// An imported embedding file, with its optional cluster column.
#[derive(Debug, Clone, PartialEq)]
pub struct ImportedEmbeddings {
    pub matrix: EmbeddingMatrix,
    pub clusters: Option<Vec<usize>>,
}

/// Write `matrix` in the embedding CSV format. `comment` lines are written
/// first, each prefixed with `# `.
pub fn write_embeddings<W: Write>(
    mut w: W,
    matrix: &EmbeddingMatrix,
    clusters: Option<&[usize]>,
    comment: &[String],
) -> Result<()> {
    if let Some(c) = clusters {
        check_dim(matrix.len(), c.len())?;
    }
    for line in comment {
        writeln!(w, "# {line}")?;
    }
    write!(w, "task_id,label")?;
    for j in 0..matrix.dim() {
        write!(w, ",e{j}")?;
    }
    if clusters.is_some() {
        write!(w, ",cluster")?;
    }
    writeln!(w)?;
    for (i, r) in matrix.rows().iter().enumerate() {
        write!(w, "{},{}", r.task_id, r.label)?;
        for x in &r.embedding {
            write!(w, ",{x}")?;
        }
        if let Some(c) = clusters {
            write!(w, ",{}", c[i])?;
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

/// Write `matrix` to `path`. The client id is recorded in the first comment
/// line so that import restores it.
pub fn export_embeddings(
    path: &Path,
    matrix: &EmbeddingMatrix,
    clusters: Option<&[usize]>,
    extra_comment: &str,
) -> Result<()> {
    let mut first = format!("client_id={}", matrix.client_id());
    if !extra_comment.is_empty() {
        first.push(' ');
        first.push_str(extra_comment);
    }
    let w = BufWriter::new(File::create(path)?);
    write_embeddings(w, matrix, clusters, &[first])
}

/// Read an embedding CSV, keeping the optional cluster column.
pub fn read_embeddings(path: &Path) -> Result<ImportedEmbeddings> {
    let reader = BufReader::new(File::open(path)?);
    let parse_err = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut client_id = 0usize;
    let mut header: Option<(usize, bool)> = None;
    let mut rows = Vec::new();
    let mut clusters = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = idx + 1;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        if let Some(c) = line.strip_prefix('#') {
            if let Some(v) = c.split_whitespace().find_map(|t| t.strip_prefix("client_id=")) {
                client_id = v
                    .parse()
                    .map_err(|_| parse_err(lineno, format!("bad client_id `{v}`")))?;
            }
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let Some((dim, has_cluster)) = header else {
            if fields.len() < 3 || fields[0] != "task_id" || fields[1] != "label" {
                return Err(parse_err(lineno, "expected header `task_id,label,e0,...`".into()));
            }
            let has_cluster = fields.last() == Some(&"cluster");
            let emb = &fields[2..fields.len() - usize::from(has_cluster)];
            for (j, name) in emb.iter().enumerate() {
                if *name != format!("e{j}") {
                    return Err(parse_err(lineno, format!("expected column e{j}, found `{name}`")));
                }
            }
            if emb.is_empty() {
                return Err(parse_err(lineno, "no embedding columns".into()));
            }
            header = Some((emb.len(), has_cluster));
            continue;
        };
        let expected = 2 + dim + usize::from(has_cluster);
        if fields.len() != expected {
            let got = fields.len().saturating_sub(2 + usize::from(has_cluster));
            return Err(Error::DimensionMismatch { expected: dim, got });
        }
        let int = |s: &str, what: &str| {
            s.parse::<usize>()
                .map_err(|_| parse_err(lineno, format!("non-integer {what} `{s}`")))
        };
        let task_id = int(fields[0], "task_id")?;
        let label = int(fields[1], "label")?;
        let embedding = fields[2..2 + dim]
            .iter()
            .map(|s| {
                s.parse::<f64>()
                    .ok()
                    .filter(|x| x.is_finite())
                    .ok_or_else(|| parse_err(lineno, format!("non-numeric value `{s}`")))
            })
            .collect::<Result<Vec<f64>>>()?;
        if has_cluster {
            clusters.push(int(fields[2 + dim], "cluster")?);
        }
        rows.push(Sample {
            embedding,
            task_id,
            label,
        });
    }
    if header.is_none() || rows.is_empty() {
        return Err(Error::Empty("embedding file has no rows"));
    }
    Ok(ImportedEmbeddings {
        matrix: EmbeddingMatrix::new(client_id, rows)?,
        clusters: header.unwrap().1.then_some(clusters),
    })
}

pub fn import_embeddings(path: &Path) -> Result<EmbeddingMatrix> {
    read_embeddings(path).map(|e| e.matrix)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec2(offsets: Vec<Vec<f64>>, sigma: f64) -> TaskSpec {
        TaskSpec {
            task_id: 0,
            center: vec![0.0, 0.0],
            class_count: offsets.len(),
            class_offsets: offsets,
            noise_sigma: sigma,
            conflict_group: 0,
            label_shift: 0,
        }
    }

    #[test]
    fn zero_noise_rows_sit_on_class_mean() {
        let spec = spec2(vec![vec![1.0, 0.0], vec![1.0, 0.0]], 0.0);
        for r in generate_task(&spec, 20, 3).unwrap() {
            assert_eq!(r.embedding, vec![1.0, 0.0]);
        }
    }

    #[test]
    fn generate_is_deterministic() {
        let spec = spec2(vec![vec![1.0, 0.0], vec![0.0, 1.0]], 1.0);
        assert_eq!(generate_task(&spec, 50, 9).unwrap(), generate_task(&spec, 50, 9).unwrap());
        assert_ne!(generate_task(&spec, 50, 9).unwrap(), generate_task(&spec, 50, 10).unwrap());
    }

    #[test]
    fn empirical_mean_converges() {
        // One class mean shared by both classes so every row has the same mean.
        let mut spec = spec2(vec![vec![3.0, -2.0], vec![3.0, -2.0]], 1.0);
        spec.center = vec![10.0, 0.0];
        let rows = generate_task(&spec, 600, 77).unwrap();
        let tol = 3.0 * 1.0 / (600f64).sqrt();
        for j in 0..2 {
            let mean = rows.iter().map(|r| r.embedding[j]).sum::<f64>() / 600.0;
            assert!((mean - spec.class_mean(0)[j]).abs() <= tol, "coord {j}: {mean}");
        }
    }

    #[test]
    fn generate_rejects_bad_input() {
        let spec = spec2(vec![vec![1.0, 0.0], vec![0.0, 1.0]], 1.0);
        assert!(generate_task(&spec, 0, 1).is_err());
        let bad = spec2(vec![vec![1.0, 0.0], vec![0.0, 1.0, 2.0]], 1.0);
        assert!(matches!(generate_task(&bad, 5, 1), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn label_shift_is_cyclic() {
        let mut spec = spec2(vec![vec![-5.0, 0.0], vec![5.0, 0.0], vec![0.0, 5.0]], 0.0);
        spec.label_shift = 1;
        for r in generate_task(&spec, 30, 4).unwrap() {
            let class = spec.class_offsets.iter().position(|o| *o == r.embedding).unwrap();
            assert_eq!(r.label, (class + 1) % 3);
        }
    }

    #[test]
    fn single_layout_pairs_clients() {
        let l = client_task_layout(Scenario::Single, 8, 4).unwrap();
        assert_eq!(l, vec![vec![0], vec![0], vec![1], vec![1], vec![2], vec![2], vec![3], vec![3]]);
    }

    #[test]
    fn dual_layout_is_a_ring() {
        let l = client_task_layout(Scenario::Dual, 8, 4).unwrap();
        let expected = [[0, 1], [0, 1], [1, 2], [1, 2], [2, 3], [2, 3], [3, 0], [3, 0]];
        for (got, want) in l.iter().zip(expected) {
            assert_eq!(got.as_slice(), want.as_slice());
        }
        for t in 0..4 {
            assert!(l.iter().filter(|ts| ts.contains(&t)).count() >= 2);
        }
    }

    #[test]
    fn indivisible_layout_errors() {
        assert!(matches!(client_task_layout(Scenario::Single, 7, 4), Err(Error::Layout(_))));
        assert!(matches!(client_task_layout(Scenario::Dual, 6, 4), Err(Error::Layout(_))));
        assert_eq!(client_task_layout(Scenario::All, 7, 4).unwrap().len(), 7);
    }

    #[test]
    fn all_scenario_splits_equally() {
        let cfg = ScenarioConfig {
            scenario: Scenario::All,
            ..Default::default()
        };
        let fed = build_scenario(&cfg).unwrap();
        for c in &fed.clients {
            assert_eq!(c.train.len(), 600);
            assert_eq!(c.test.len(), 300);
            for t in 0..4 {
                assert_eq!(c.train.rows().iter().filter(|r| r.task_id == t).count(), 150);
            }
        }
    }

    #[test]
    fn scenario_is_deterministic() {
        let cfg = ScenarioConfig {
            scenario: Scenario::Dual,
            master_seed: 11,
            ..Default::default()
        };
        assert_eq!(build_scenario(&cfg).unwrap(), build_scenario(&cfg).unwrap());
    }

    #[test]
    fn task_centers_respect_separation() {
        for sep in [2.0, 5.0, 10.0] {
            let cfg = ScenarioConfig {
                separation: sep,
                ..Default::default()
            };
            let tasks = build_tasks(&cfg).unwrap();
            check_separation(&tasks, sep).unwrap();
            assert!(check_separation(&tasks, sep * 1.01).is_err());
        }
    }

    #[test]
    fn nearest_task_center_is_exact_at_eight_sigma() {
        let cfg = ScenarioConfig {
            scenario: Scenario::All,
            separation: 8.0,
            n_clients: 2,
            ..Default::default()
        };
        let fed = build_scenario(&cfg).unwrap();
        let centers: Vec<&[f64]> = fed.tasks.iter().map(|t| t.center.as_slice()).collect();
        for c in &fed.clients {
            for r in c.train.rows().iter().chain(c.test.rows()) {
                let (nearest, _) = crate::clustering::assign_nearest(&r.embedding, &centers).unwrap();
                assert_eq!(nearest, r.task_id);
            }
        }
    }

    #[test]
    fn conflict_groups_share_offsets() {
        let tasks = build_tasks(&ScenarioConfig::default()).unwrap();
        assert_eq!(tasks[0].class_offsets, tasks[2].class_offsets);
        assert_eq!(tasks[1].class_offsets, tasks[3].class_offsets);
        assert_ne!(tasks[0].class_offsets, tasks[1].class_offsets);
        assert_ne!(tasks[0].label_shift, tasks[2].label_shift);
        let plain = build_tasks(&ScenarioConfig {
            conflict: false,
            ..Default::default()
        })
        .unwrap();
        assert!(plain.iter().all(|t| t.label_shift == 0));
        assert_ne!(plain[0].class_offsets, plain[2].class_offsets);
    }

    #[test]
    fn parses_minimal_csv() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.csv");
        std::fs::write(&p, "task_id,label,e0,e1\n0,1,0.5,-0.5\n").unwrap();
        let m = import_embeddings(&p).unwrap();
        assert_eq!(m.len(), 1);
        assert_eq!(m.dim(), 2);
        assert_eq!(m.rows()[0].task_id, 0);
        assert_eq!(m.rows()[0].label, 1);
        assert_eq!(m.rows()[0].embedding, vec![0.5, -0.5]);
    }

    #[test]
    fn csv_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.csv");
        std::fs::write(&p, "task_id,label,e0,e1\n0,1,0.5,-0.5,2.0\n").unwrap();
        assert!(matches!(import_embeddings(&p), Err(Error::DimensionMismatch { expected: 2, got: 3 })));
        std::fs::write(&p, "task_id,label,e0,e1\n0,1,abc,-0.5\n").unwrap();
        assert!(matches!(import_embeddings(&p), Err(Error::Parse { line: 2, .. })));
        std::fs::write(&p, "").unwrap();
        assert!(matches!(import_embeddings(&p), Err(Error::Empty(_))));
        std::fs::write(&p, "task_id,label,e0\n").unwrap();
        assert!(matches!(import_embeddings(&p), Err(Error::Empty(_))));
    }

    #[test]
    fn export_import_round_trip() {
        let cfg = ScenarioConfig {
            scenario: Scenario::Dual,
            n_clients: 4,
            train_per_client: 40,
            test_per_client: 20,
            ..Default::default()
        };
        let fed = build_scenario(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        for c in &fed.clients {
            let p = dir.path().join(format!("c{}.csv", c.train.client_id()));
            let clusters: Vec<usize> = (0..c.train.len()).map(|i| i % 3).collect();
            export_embeddings(&p, &c.train, Some(&clusters), "note=x").unwrap();
            let back = read_embeddings(&p).unwrap();
            assert_eq!(back.matrix, c.train);
            assert_eq!(back.clusters.as_deref(), Some(clusters.as_slice()));
        }
    }
}
