//! The per-task trainable head.
//!
//! An adapter is a multinomial linear classifier over embeddings,
//! `softmax(W x + b)`, trained with mini-batch cross-entropy SGD. All fresh
//! adapters are zero, which plays the role of a shared pretrained base.
//!
//! Checkpoint CSV format: a header `adapter_id,steps_trained`, one line with
//! those two values, one line per class with that row of `W`, and a final
//! line with `b`. Lines starting with `#` are comments.

use std::borrow::Borrow;
use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::datagen::Sample;
use crate::error::{check_dim, Error, Result};
use crate::rng::seeded_rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdapterParams {
    pub adapter_id: usize,
    pub steps_trained: u64,
    class_count: usize,
    dim: usize,
    /// Row-major `class_count x dim`.
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl AdapterParams {
    pub fn from_parts(
        adapter_id: usize,
        steps_trained: u64,
        weights: Vec<Vec<f64>>,
        bias: Vec<f64>,
    ) -> Result<Self> {
        let class_count = weights.len();
        let dim = weights.first().map_or(0, Vec::len);
        if class_count == 0 || dim == 0 {
            return Err(Error::InvalidArgument("adapter needs at least one class and one input".into()));
        }
        check_dim(class_count, bias.len())?;
        for row in &weights {
            check_dim(dim, row.len())?;
        }
        Ok(Self {
            adapter_id,
            steps_trained,
            class_count,
            dim,
            weights: weights.into_iter().flatten().collect(),
            bias,
        })
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weight_row(&self, class: usize) -> &[f64] {
        &self.weights[class * self.dim..(class + 1) * self.dim]
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    /// All trainable values, weights then bias.
    pub fn flat(&self) -> impl Iterator<Item = f64> + '_ {
        self.weights.iter().chain(&self.bias).copied()
    }

    pub fn is_finite(&self) -> bool {
        self.flat().all(f64::is_finite)
    }

    /// Weights and bias are bitwise equal (ids and step counts ignored).
    pub fn same_parameters(&self, other: &Self) -> bool {
        self.class_count == other.class_count
            && self.dim == other.dim
            && self.flat().zip(other.flat()).all(|(a, b)| a.to_bits() == b.to_bits())
    }

    /// Largest absolute parameter difference.
    pub fn max_abs_diff(&self, other: &Self) -> Result<f64> {
        self.check_shape(other)?;
        Ok(self
            .flat()
            .zip(other.flat())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    fn check_shape(&self, other: &Self) -> Result<()> {
        check_dim(self.class_count, other.class_count)?;
        check_dim(self.dim, other.dim)
    }

    fn logits_into(&self, x: &[f64], out: &mut [f64]) {
        for (c, o) in out.iter_mut().enumerate() {
            let row = &self.weights[c * self.dim..(c + 1) * self.dim];
            *o = self.bias[c] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
        }
    }

    pub fn logits(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim, x.len())?;
        let mut out = vec![0.0; self.class_count];
        self.logits_into(x, &mut out);
        Ok(out)
    }
}

/// In-place softmax; returns log-sum-exp of the input.
fn softmax_in_place(z: &mut [f64]) -> f64 {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    z.iter_mut().for_each(|v| *v /= sum);
    max + sum.ln()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub steps_per_round: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.05,
            steps_per_round: 10,
            batch_size: 16,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::Config(format!("learning_rate {} must be >= 0", self.learning_rate)));
        }
        if self.steps_per_round == 0 || self.batch_size == 0 {
            return Err(Error::Config("steps_per_round and batch_size must be positive".into()));
        }
        Ok(())
    }

    pub fn with_seed(self, seed: u64) -> Self {
        Self { seed, ..self }
    }
}

/// Zero weights and bias. The seed is accepted for interface symmetry and
/// ignored, so every fresh adapter is identical.
pub fn init_adapter(dim: usize, class_count: usize, adapter_id: usize, _seed: u64) -> Result<AdapterParams> {
    if dim == 0 || class_count == 0 {
        return Err(Error::InvalidArgument(format!(
            "adapter shape {class_count}x{dim} must be positive"
        )));
    }
    Ok(AdapterParams {
        adapter_id,
        steps_trained: 0,
        class_count,
        dim,
        weights: vec![0.0; class_count * dim],
        bias: vec![0.0; class_count],
    })
}

/// Row indices used by each SGD step: one seeded shuffle of `0..n`, read in
/// consecutive batches that wrap around to its start.
pub fn batch_schedule(n: usize, cfg: &TrainConfig) -> Vec<Vec<usize>> {
    if n == 0 {
        return Vec::new();
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut seeded_rng(cfg.seed));
    (0..cfg.steps_per_round)
        .map(|s| {
            (0..cfg.batch_size)
                .map(|t| perm[(s * cfg.batch_size + t) % n])
                .collect()
        })
        .collect()
}

/// Gradient of the mean cross-entropy, same layout as the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

fn check_rows<S: Borrow<Sample>>(adapter: &AdapterParams, rows: &[S]) -> Result<()> {
    if rows.is_empty() {
        return Err(Error::Empty("training data"));
    }
    for r in rows {
        let r = r.borrow();
        check_dim(adapter.dim, r.embedding.len())?;
        if r.label >= adapter.class_count {
            return Err(Error::InvalidArgument(format!(
                "label {} out of range for {} classes",
                r.label, adapter.class_count
            )));
        }
    }
    Ok(())
}

fn accumulate<'a, I>(adapter: &AdapterParams, rows: I, grad: &mut Gradient, probs: &mut [f64]) -> (f64, usize)
where
    I: Iterator<Item = &'a Sample>,
{
    let mut loss = 0.0;
    let mut count = 0;
    for r in rows {
        adapter.logits_into(&r.embedding, probs);
        let lse = {
            let z_y = probs[r.label];
            let lse = softmax_in_place(probs);
            lse - z_y
        };
        loss += lse;
        count += 1;
        for (c, &p) in probs.iter().enumerate() {
            let delta = p - f64::from(u8::from(c == r.label));
            grad.bias[c] += delta;
            let row = &mut grad.weights[c * adapter.dim..(c + 1) * adapter.dim];
            row.iter_mut().zip(&r.embedding).for_each(|(g, x)| *g += delta * x);
        }
    }
    (loss, count)
}

/// Mean cross-entropy over `rows` and its gradient.
pub fn loss_and_gradient<S: Borrow<Sample>>(adapter: &AdapterParams, rows: &[S]) -> Result<(f64, Gradient)> {
    check_rows(adapter, rows)?;
    let mut grad = Gradient {
        weights: vec![0.0; adapter.weights.len()],
        bias: vec![0.0; adapter.class_count],
    };
    let mut probs = vec![0.0; adapter.class_count];
    let (loss, n) = accumulate(adapter, rows.iter().map(Borrow::borrow), &mut grad, &mut probs);
    let inv = 1.0 / n as f64;
    grad.weights.iter_mut().chain(grad.bias.iter_mut()).for_each(|g| *g *= inv);
    Ok((loss * inv, grad))
}

/// Run `cfg.steps_per_round` SGD steps on `data` and return the new adapter.
pub fn train_sgd<S: Borrow<Sample>>(adapter: &AdapterParams, data: &[S], cfg: &TrainConfig) -> Result<AdapterParams> {
    cfg.validate()?;
    check_rows(adapter, data)?;
    let mut out = adapter.clone();
    let mut grad = Gradient {
        weights: vec![0.0; adapter.weights.len()],
        bias: vec![0.0; adapter.class_count],
    };
    let mut probs = vec![0.0; adapter.class_count];
    for batch in batch_schedule(data.len(), cfg) {
        grad.weights.iter_mut().for_each(|g| *g = 0.0);
        grad.bias.iter_mut().for_each(|g| *g = 0.0);
        let (_, n) = accumulate(&out, batch.iter().map(|&i| data[i].borrow()), &mut grad, &mut probs);
        let step = cfg.learning_rate / n as f64;
        out.weights.iter_mut().zip(&grad.weights).for_each(|(w, g)| *w -= step * g);
        out.bias.iter_mut().zip(&grad.bias).for_each(|(b, g)| *b -= step * g);
        out.steps_trained += 1;
    }
    debug_assert!(out.is_finite(), "non-finite adapter after SGD");
    Ok(out)
}

/// Elementwise weighted mean of adapters (uniform when `weights` is `None`).
///
/// Computed as a running mean over the adapters with positive weight, so
/// averaging identical adapters returns them exactly and a one-hot weight
/// vector returns the selected adapter exactly.
pub fn average_adapters<A: Borrow<AdapterParams>>(adapters: &[A], weights: Option<&[f64]>) -> Result<AdapterParams> {
    let first = adapters.first().ok_or(Error::Empty("adapter list"))?.borrow();
    for a in adapters {
        first.check_shape(a.borrow())?;
    }
    let uniform = vec![1.0; adapters.len()];
    let w = match weights {
        None => uniform.as_slice(),
        Some(w) => {
            check_dim(adapters.len(), w.len())?;
            if w.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
                return Err(Error::InvalidArgument("aggregation weights must be finite and >= 0".into()));
            }
            let total: f64 = w.iter().sum();
            if (total - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidArgument(format!("aggregation weights sum to {total}, not 1")));
            }
            w
        }
    };
    let mut selected = adapters.iter().map(Borrow::borrow).zip(w.iter().copied()).filter(|(_, w)| *w > 0.0);
    let (head, head_w) = selected.next().expect("weights sum to one");
    let mut out = head.clone();
    out.adapter_id = first.adapter_id;
    let mut seen = head_w;
    for (a, wi) in selected {
        seen += wi;
        let frac = wi / seen;
        out.weights.iter_mut().zip(&a.weights).for_each(|(m, x)| *m += frac * (x - *m));
        out.bias.iter_mut().zip(&a.bias).for_each(|(m, x)| *m += frac * (x - *m));
        out.steps_trained = out.steps_trained.max(a.steps_trained);
    }
    Ok(out)
}

/// Class probabilities for one embedding.
pub fn predict(adapter: &AdapterParams, embedding: &[f64]) -> Result<Vec<f64>> {
    let mut z = adapter.logits(embedding)?;
    softmax_in_place(&mut z);
    Ok(z)
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Prediction for one sample: whether the argmax class is right and its loss.
pub fn score_sample(adapter: &AdapterParams, sample: &Sample) -> Result<(bool, f64)> {
    check_dim(adapter.dim, sample.embedding.len())?;
    if sample.label >= adapter.class_count {
        return Err(Error::InvalidArgument(format!("label {} out of range", sample.label)));
    }
    let mut z = adapter.logits(&sample.embedding)?;
    let correct = argmax(&z) == sample.label;
    let z_y = z[sample.label];
    let lse = softmax_in_place(&mut z);
    Ok((correct, lse - z_y))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub accuracy: f64,
    pub loss: f64,
}

pub fn evaluate<S: Borrow<Sample>>(adapter: &AdapterParams, data: &[S]) -> Result<Evaluation> {
    if data.is_empty() {
        return Err(Error::Empty("evaluation data"));
    }
    let mut correct = 0usize;
    let mut loss = 0.0;
    for s in data {
        let (ok, l) = score_sample(adapter, s.borrow())?;
        correct += usize::from(ok);
        loss += l;
    }
    let n = data.len() as f64;
    Ok(Evaluation {
        accuracy: correct as f64 / n,
        loss: loss / n,
    })
}

pub fn write_adapter<W: Write>(mut w: W, adapter: &AdapterParams) -> Result<()> {
    writeln!(w, "adapter_id,steps_trained")?;
    writeln!(w, "{},{}", adapter.adapter_id, adapter.steps_trained)?;
    let join = |v: &[f64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
    for c in 0..adapter.class_count {
        writeln!(w, "{}", join(adapter.weight_row(c)))?;
    }
    writeln!(w, "{}", join(&adapter.bias))?;
    w.flush()?;
    Ok(())
}

pub fn read_adapter<R: BufRead>(r: R) -> Result<AdapterParams> {
    let bad = |line: usize, msg: &str| Error::Parse {
        path: "<adapter>".into(),
        line,
        msg: msg.to_string(),
    };
    let lines: Vec<(usize, String)> = r
        .lines()
        .enumerate()
        .map(|(i, l)| l.map(|l| (i + 1, l)))
        .collect::<std::io::Result<Vec<_>>>()?
        .into_iter()
        .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'))
        .collect();
    if lines.len() < 4 {
        return Err(Error::Empty("adapter file"));
    }
    if lines[0].1.trim() != "adapter_id,steps_trained" {
        return Err(bad(lines[0].0, "expected header `adapter_id,steps_trained`"));
    }
    let meta: Vec<&str> = lines[1].1.split(',').map(str::trim).collect();
    if meta.len() != 2 {
        return Err(bad(lines[1].0, "expected `adapter_id,steps_trained` values"));
    }
    let adapter_id = meta[0].parse().map_err(|_| bad(lines[1].0, "bad adapter_id"))?;
    let steps = meta[1].parse().map_err(|_| bad(lines[1].0, "bad steps_trained"))?;
    let floats = |(n, l): &(usize, String)| {
        l.split(',')
            .map(|s| s.trim().parse::<f64>().map_err(|_| bad(*n, "non-numeric value")))
            .collect::<Result<Vec<f64>>>()
    };
    let rows = lines[2..lines.len() - 1].iter().map(floats).collect::<Result<Vec<_>>>()?;
    let bias = floats(lines.last().unwrap())?;
    AdapterParams::from_parts(adapter_id, steps, rows, bias)
}
