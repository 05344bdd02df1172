//! Synthetic datasets, non-iid Dirichlet partitioning across clients, label
//! priors, and the proxy set used for logit distillation.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::TaskMode;
use crate::numerics::{RngStream, StreamPurpose, Tensor};

/// Positive rate per class when generating multilabel data.
pub const MULTILABEL_POSITIVE_RATE: f64 = 0.3;

/// Proxy example ids live in a separate range so they can never collide with
/// client data ids.
pub const PROXY_ID_OFFSET: u64 = 1 << 32;

/// A labelled dataset: features are n x D, labels are n x C (one-hot rows in
/// multiclass mode, independent binary indicators in multilabel mode).
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub ids: Vec<u64>,
    pub features: Tensor,
    pub labels: Tensor,
    pub mode: TaskMode,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn num_classes(&self) -> usize {
        self.labels.cols()
    }

    pub fn validate(&self) -> Result<()> {
        if self.is_empty() {
            return Err(Error::invalid("dataset is empty"));
        }
        if self.features.rows() != self.len() || self.labels.rows() != self.len() {
            return Err(Error::invalid("dataset row counts disagree"));
        }
        let mut seen = self.ids.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != self.ids.len() {
            return Err(Error::invalid("dataset ids are not unique"));
        }
        if self.mode == TaskMode::Multiclass {
            for i in 0..self.len() {
                let ones = self.labels.row(i).iter().filter(|&&v| v == 1.0).count();
                let zeros = self.labels.row(i).iter().filter(|&&v| v == 0.0).count();
                if ones != 1 || ones + zeros != self.num_classes() {
                    return Err(Error::invalid(format!(
                        "multiclass label row {i} is not one-hot"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Rows selected by index, in the given order.
    pub fn subset(&self, idxs: &[usize]) -> Dataset {
        let d = self.feature_dim();
        let c = self.num_classes();
        let mut ids = Vec::with_capacity(idxs.len());
        let mut x = Vec::with_capacity(idxs.len() * d);
        let mut y = Vec::with_capacity(idxs.len() * c);
        for &i in idxs {
            ids.push(self.ids[i]);
            x.extend_from_slice(self.features.row(i));
            y.extend_from_slice(self.labels.row(i));
        }
        Dataset {
            ids,
            features: Tensor::new(vec![idxs.len(), d], x).expect("subset shape"),
            labels: Tensor::new(vec![idxs.len(), c], y).expect("subset shape"),
            mode: self.mode,
        }
    }

    /// The class used to key partitioning: argmax for one-hot rows, the first
    /// positive class for multilabel rows (0 when a row has no positives).
    pub fn dominant_class(&self, i: usize) -> usize {
        let row = self.labels.row(i);
        match self.mode {
            TaskMode::Multiclass | TaskMode::Multilabel => row
                .iter()
                .position(|&v| v == 1.0)
                .unwrap_or(0),
        }
    }

    /// Per-class positive counts — the payload clients share for prior
    /// estimation.
    pub fn label_histogram(&self) -> Vec<u64> {
        let c = self.num_classes();
        let mut counts = vec![0u64; c];
        for i in 0..self.len() {
            for (j, &v) in self.labels.row(i).iter().enumerate() {
                if v == 1.0 {
                    counts[j] += 1;
                }
            }
        }
        counts
    }

    /// Concatenate datasets (used by the centralized baseline).
    pub fn concat(parts: &[&Dataset]) -> Result<Dataset> {
        let first = parts.first().ok_or_else(|| Error::invalid("concat of nothing"))?;
        let mut ids = Vec::new();
        let mut x = Vec::new();
        let mut y = Vec::new();
        for p in parts {
            if p.feature_dim() != first.feature_dim()
                || p.num_classes() != first.num_classes()
                || p.mode != first.mode
            {
                return Err(Error::invalid("concat of incongruent datasets"));
            }
            ids.extend_from_slice(&p.ids);
            x.extend_from_slice(p.features.data());
            y.extend_from_slice(p.labels.data());
        }
        Ok(Dataset {
            features: Tensor::new(vec![ids.len(), first.feature_dim()], x)?,
            labels: Tensor::new(vec![ids.len(), first.num_classes()], y)?,
            ids,
            mode: first.mode,
        })
    }
}

/// How to split a dataset across clients.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PartitionSpec {
    pub num_clients: usize,
    pub alpha: f64,
    pub seed: u64,
}

impl PartitionSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_clients == 0 {
            return Err(Error::invalid("num_clients must be at least 1"));
        }
        if self.alpha.is_nan() || self.alpha <= 0.0 {
            return Err(Error::invalid("alpha must be positive"));
        }
        Ok(())
    }
}

/// Estimated label prior together with the sample count behind it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelPrior {
    /// Multiclass: probabilities summing to 1. Multilabel: per-class marginals.
    pub probs: Vec<f64>,
    pub total: u64,
}

impl LabelPrior {
    /// Draw a batch of label rows from the prior: one-hot rows in multiclass
    /// mode, independent Bernoulli indicators in multilabel mode.
    pub fn sample_batch(&self, mode: TaskMode, batch: usize, rng: &mut RngStream) -> Tensor {
        let c = self.probs.len();
        let mut data = vec![0.0; batch * c];
        match mode {
            TaskMode::Multiclass => {
                for i in 0..batch {
                    let k = rng.categorical(&self.probs);
                    data[i * c + k] = 1.0;
                }
            }
            TaskMode::Multilabel => {
                for i in 0..batch {
                    for (j, &p) in self.probs.iter().enumerate() {
                        if rng.bernoulli(p) {
                            data[i * c + j] = 1.0;
                        }
                    }
                }
            }
        }
        Tensor::new(vec![batch, c], data).expect("sample_batch shape")
    }
}

/// Gaussian-mixture synthetic data. Class c's mean sits at
/// (class_separation / sqrt 2) along coordinate axis c, so any two class
/// means are exactly class_separation apart; noise is standard normal. In
/// multilabel mode each positive class adds its signature direction instead.
pub fn make_synthetic(
    num_classes: usize,
    feature_dim: usize,
    n: usize,
    class_separation: f64,
    mode: TaskMode,
    seed: u64,
) -> Result<Dataset> {
    synthesize(
        num_classes,
        feature_dim,
        n,
        class_separation,
        mode,
        RngStream::for_purpose(seed, StreamPurpose::DataGen, 0, 0),
        0,
    )
}

/// A held-out set from the same synthetic family, drawn on a disjoint seed
/// stream with ids in a reserved range. Its labels are kept for diagnostics
/// only and must never feed a distillation objective.
pub fn make_proxy(
    num_classes: usize,
    feature_dim: usize,
    m: usize,
    class_separation: f64,
    mode: TaskMode,
    seed: u64,
) -> Result<Dataset> {
    synthesize(
        num_classes,
        feature_dim,
        m,
        class_separation,
        mode,
        RngStream::for_purpose(seed, StreamPurpose::Proxy, 0, 0),
        PROXY_ID_OFFSET,
    )
}

fn synthesize(
    num_classes: usize,
    feature_dim: usize,
    n: usize,
    class_separation: f64,
    mode: TaskMode,
    mut rng: RngStream,
    id_offset: u64,
) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::invalid("dataset size must be positive"));
    }
    if num_classes < 2 {
        return Err(Error::invalid("need at least two classes"));
    }
    if feature_dim < num_classes {
        return Err(Error::invalid(format!(
            "feature_dim ({feature_dim}) must be at least num_classes ({num_classes}) \
             so every class gets its own signature axis"
        )));
    }
    if !class_separation.is_finite() || class_separation < 0.0 {
        return Err(Error::invalid("class_separation must be finite and nonnegative"));
    }

    let scale = class_separation / std::f64::consts::SQRT_2;
    let mut x = vec![0.0; n * feature_dim];
    let mut y = vec![0.0; n * num_classes];
    for i in 0..n {
        match mode {
            TaskMode::Multiclass => {
                // round-robin assignment keeps class frequencies balanced
                let c = i % num_classes;
                y[i * num_classes + c] = 1.0;
                for j in 0..feature_dim {
                    let mean = if j == c { scale } else { 0.0 };
                    x[i * feature_dim + j] = mean + rng.normal();
                }
            }
            TaskMode::Multilabel => {
                for c in 0..num_classes {
                    if rng.bernoulli(MULTILABEL_POSITIVE_RATE) {
                        y[i * num_classes + c] = 1.0;
                    }
                }
                for j in 0..feature_dim {
                    let mut mean = 0.0;
                    if j < num_classes && y[i * num_classes + j] == 1.0 {
                        mean = scale;
                    }
                    x[i * feature_dim + j] = mean + rng.normal();
                }
            }
        }
    }
    Ok(Dataset {
        ids: (0..n as u64).map(|i| i + id_offset).collect(),
        features: Tensor::new(vec![n, feature_dim], x)?,
        labels: Tensor::new(vec![n, num_classes], y)?,
        mode,
    })
}

/// A partition plus the raw Dirichlet proportions that produced it, for
/// independent replay.
#[derive(Debug, Clone)]
pub struct PartitionOutcome {
    pub shards: Vec<Dataset>,
    /// draws[class][client]: the accepted proportion matrix.
    pub draws: Vec<Vec<f64>>,
    /// How many full assignment attempts were made (1 = first try accepted).
    pub attempts: usize,
}

/// Split a dataset across clients, one Dirichlet(alpha) draw per class.
pub fn dirichlet_partition(ds: &Dataset, spec: &PartitionSpec) -> Result<Vec<Dataset>> {
    Ok(dirichlet_partition_detailed(ds, spec)?.shards)
}

/// As [`dirichlet_partition`], also exposing the accepted Dirichlet draws.
///
/// Per class, examples are assigned to clients by largest-remainder rounding
/// of the drawn proportions. If any client ends up with zero examples overall,
/// the whole partition is re-drawn (bounded at 100 attempts).
pub fn dirichlet_partition_detailed(
    ds: &Dataset,
    spec: &PartitionSpec,
) -> Result<PartitionOutcome> {
    spec.validate()?;
    ds.validate()?;
    let k = spec.num_clients;
    if k > ds.len() {
        return Err(Error::invalid(format!(
            "cannot give {} clients at least one example each from {} examples",
            k,
            ds.len()
        )));
    }

    // examples of each class, in dataset order
    let c = ds.num_classes();
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); c];
    for i in 0..ds.len() {
        by_class[ds.dominant_class(i)].push(i);
    }

    let mut rng = RngStream::for_purpose(spec.seed, StreamPurpose::Partition, 0, 0);
    const MAX_ATTEMPTS: usize = 100;
    for attempt in 1..=MAX_ATTEMPTS {
        let mut draws = Vec::with_capacity(c);
        let mut per_client: Vec<Vec<usize>> = vec![Vec::new(); k];
        for members in &by_class {
            let props = dirichlet_draw(spec.alpha, k, &mut rng)?;
            let counts = largest_remainder(&props, members.len());
            let mut cursor = 0usize;
            for (client, &take) in counts.iter().enumerate() {
                per_client[client].extend_from_slice(&members[cursor..cursor + take]);
                cursor += take;
            }
            draws.push(props);
        }
        if per_client.iter().all(|m| !m.is_empty()) {
            let shards = per_client
                .iter_mut()
                .map(|m| {
                    m.sort_unstable(); // dataset order within each shard
                    ds.subset(m)
                })
                .collect();
            return Ok(PartitionOutcome {
                shards,
                draws,
                attempts: attempt,
            });
        }
    }
    Err(Error::invalid(format!(
        "partition left a client empty after {MAX_ATTEMPTS} attempts \
         (alpha={}, clients={k}, examples={})",
        spec.alpha,
        ds.len()
    )))
}

/// One Dirichlet(alpha, ..., alpha) sample over `k` cells via normalized
/// Gamma draws.
fn dirichlet_draw(alpha: f64, k: usize, rng: &mut RngStream) -> Result<Vec<f64>> {
    for _ in 0..100 {
        let g: Vec<f64> = (0..k)
            .map(|_| rng.gamma(alpha))
            .collect::<Result<Vec<f64>>>()?;
        let sum: f64 = g.iter().sum();
        if sum.is_finite() && sum > 0.0 {
            return Ok(g.into_iter().map(|v| v / sum).collect());
        }
    }
    Err(Error::NonFinite("dirichlet draw degenerate".into()))
}

/// Apportion `total` items by `props` using largest-remainder rounding;
/// ties broken toward lower index. Output sums to `total` exactly.
pub fn largest_remainder(props: &[f64], total: usize) -> Vec<usize> {
    let mut counts: Vec<usize> = Vec::with_capacity(props.len());
    let mut fracs: Vec<(f64, usize)> = Vec::with_capacity(props.len());
    let mut assigned = 0usize;
    for (i, &p) in props.iter().enumerate() {
        let quota = p * total as f64;
        let base = quota.floor() as usize;
        counts.push(base);
        assigned += base;
        fracs.push((quota - base as f64, i));
    }
    fracs.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut leftover = total - assigned;
    for &(_, i) in &fracs {
        if leftover == 0 {
            break;
        }
        counts[i] += 1;
        leftover -= 1;
    }
    counts
}

/// Pool per-client label-count histograms into a prior.
///
/// Multiclass: counts are summed and normalized into probabilities.
/// Multilabel: counts become per-class marginal rates, which needs the
/// per-client example totals since rows can hold several positives.
pub fn estimate_label_prior(
    histograms: &[Vec<u64>],
    examples_per_client: &[u64],
    mode: TaskMode,
) -> Result<LabelPrior> {
    let first = histograms
        .first()
        .ok_or_else(|| Error::invalid("no histograms to pool"))?;
    if histograms.iter().any(|h| h.len() != first.len()) {
        return Err(Error::invalid("histogram lengths disagree"));
    }
    if histograms.len() != examples_per_client.len() {
        return Err(Error::invalid("one example total per histogram required"));
    }
    let c = first.len();
    let mut pooled = vec![0u64; c];
    for h in histograms {
        for (acc, &v) in pooled.iter_mut().zip(h) {
            *acc += v;
        }
    }
    let total_examples: u64 = examples_per_client.iter().sum();
    let total_positives: u64 = pooled.iter().sum();
    if total_positives == 0 {
        return Err(Error::NotADistribution(
            "all label counts are zero".into(),
        ));
    }
    let probs = match mode {
        TaskMode::Multiclass => pooled
            .iter()
            .map(|&v| v as f64 / total_positives as f64)
            .collect(),
        TaskMode::Multilabel => {
            if total_examples == 0 {
                return Err(Error::invalid("zero examples behind histograms"));
            }
            pooled
                .iter()
                .map(|&v| v as f64 / total_examples as f64)
                .collect()
        }
    };
    Ok(LabelPrior {
        probs,
        total: total_examples,
    })
}

// ---------------------------------------------------------------------------
// CSV import/export: header `id,x0..x{D-1},y0..y{C-1}`, one example per row,
// values printed as shortest round-trip decimals.
// ---------------------------------------------------------------------------

pub fn to_csv_string(ds: &Dataset) -> String {
    let (d, c) = (ds.feature_dim(), ds.num_classes());
    let mut out = String::from("id");
    for j in 0..d {
        let _ = write!(out, ",x{j}");
    }
    for j in 0..c {
        let _ = write!(out, ",y{j}");
    }
    out.push('\n');
    for i in 0..ds.len() {
        let _ = write!(out, "{}", ds.ids[i]);
        for v in ds.features.row(i) {
            let _ = write!(out, ",{v}");
        }
        for v in ds.labels.row(i) {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    out
}

pub fn from_csv_str(text: &str, mode: TaskMode) -> Result<Dataset> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Parse("empty csv".into()))?;
    let cols: Vec<&str> = header.split(',').collect();
    if cols.first() != Some(&"id") {
        return Err(Error::Parse("csv header must start with `id`".into()));
    }
    let d = cols.iter().filter(|c| c.starts_with('x')).count();
    let c = cols.iter().filter(|c| c.starts_with('y')).count();
    if d == 0 || c == 0 || cols.len() != 1 + d + c {
        return Err(Error::Parse("csv header must be id,x0..,y0..".into()));
    }

    let mut ids = Vec::new();
    let mut x = Vec::new();
    let mut y = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 1 + d + c {
            return Err(Error::Parse(format!(
                "csv row {} has {} fields, expected {}",
                lineno + 2,
                fields.len(),
                1 + d + c
            )));
        }
        ids.push(
            fields[0]
                .parse::<u64>()
                .map_err(|e| Error::Parse(format!("csv row {}: bad id: {e}", lineno + 2)))?,
        );
        for (j, f) in fields[1..].iter().enumerate() {
            let v: f64 = f
                .parse()
                .map_err(|e| Error::Parse(format!("csv row {}: bad value: {e}", lineno + 2)))?;
            if j < d {
                x.push(v);
            } else {
                y.push(v);
            }
        }
    }
    let n = ids.len();
    let ds = Dataset {
        ids,
        features: Tensor::new(vec![n, d], x)?,
        labels: Tensor::new(vec![n, c], y)?,
        mode,
    };
    ds.validate()?;
    Ok(ds)
}

pub fn write_csv_file(ds: &Dataset, path: &Path) -> Result<()> {
    std::fs::write(path, to_csv_string(ds))?;
    Ok(())
}

pub fn read_csv_file(path: &Path, mode: TaskMode) -> Result<Dataset> {
    let text = std::fs::read_to_string(path)?;
    from_csv_str(&text, mode)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::roc_auc;
    use crate::models::{activate_graph, task_loss_graph, Mlp, TaskMode};
    use crate::numerics::{sgd_step, Graph};
    use std::collections::BTreeMap;

    fn bits(t: &Tensor) -> Vec<u64> {
        t.data().iter().map(|v| v.to_bits()).collect()
    }

    #[test]
    fn same_seed_identical_dataset() {
        let a = make_synthetic(4, 8, 50, 2.0, TaskMode::Multiclass, 7).unwrap();
        let b = make_synthetic(4, 8, 50, 2.0, TaskMode::Multiclass, 7).unwrap();
        assert_eq!(a.ids, b.ids);
        assert_eq!(bits(&a.features), bits(&b.features));
        assert_eq!(bits(&a.labels), bits(&b.labels));
        let c = make_synthetic(4, 8, 50, 2.0, TaskMode::Multiclass, 8).unwrap();
        assert_ne!(bits(&a.features), bits(&c.features));
    }

    #[test]
    fn zero_separation_means_chance_auc() {
        let ds = make_synthetic(4, 8, 2000, 0.0, TaskMode::Multiclass, 11).unwrap();
        // the Bayes-optimal per-class score is the class's own signature
        // coordinate; with zero separation it carries no information
        for c in 0..4 {
            let scores: Vec<f64> = (0..ds.len()).map(|i| ds.features.row(i)[c]).collect();
            let labels: Vec<bool> = (0..ds.len()).map(|i| ds.labels.row(i)[c] == 1.0).collect();
            let auc = roc_auc(&scores, &labels).unwrap();
            assert!((auc - 0.5).abs() < 0.05, "class {c}: auc {auc}");
        }
    }

    #[test]
    fn wide_separation_linear_probe_auc() {
        let ds = make_synthetic(4, 8, 2000, 10.0, TaskMode::Multiclass, 13).unwrap();
        // train a single-layer softmax probe with full-batch gradient steps
        let mut probe = Mlp::init(&[8, 4], &mut RngStream::new(13, 1));
        for _ in 0..200 {
            let mut g = Graph::new();
            let xid = g.leaf(ds.features.clone());
            let (logits, params) = probe.forward_graph(&mut g, xid).unwrap();
            let proba = activate_graph(&mut g, logits, TaskMode::Multiclass).unwrap();
            let loss = task_loss_graph(&mut g, proba, &ds.labels, TaskMode::Multiclass).unwrap();
            g.backward(loss).unwrap();
            let grads = g.gradients(&params);
            let mut targets = probe.params_mut();
            sgd_step(&mut targets, &grads, 0.5).unwrap();
        }
        let logits = probe.forward(&ds.features).unwrap();
        for c in 0..4 {
            let scores: Vec<f64> = (0..ds.len()).map(|i| logits.row(i)[c]).collect();
            let labels: Vec<bool> = (0..ds.len()).map(|i| ds.labels.row(i)[c] == 1.0).collect();
            let auc = roc_auc(&scores, &labels).unwrap();
            assert!(auc > 0.99, "class {c}: auc {auc}");
        }
    }

    #[test]
    fn multilabel_signatures_lift_their_coordinate() {
        let ds = make_synthetic(3, 6, 3000, 6.0, TaskMode::Multilabel, 17).unwrap();
        for c in 0..3 {
            let mut pos_mean = 0.0;
            let mut neg_mean = 0.0;
            let (mut np, mut nn) = (0usize, 0usize);
            for i in 0..ds.len() {
                if ds.labels.row(i)[c] == 1.0 {
                    pos_mean += ds.features.row(i)[c];
                    np += 1;
                } else {
                    neg_mean += ds.features.row(i)[c];
                    nn += 1;
                }
            }
            assert!(np > 0 && nn > 0);
            assert!(pos_mean / np as f64 > neg_mean / nn as f64 + 2.0);
        }
    }

    #[test]
    fn partition_singleton_returns_input() {
        let ds = make_synthetic(3, 6, 30, 2.0, TaskMode::Multiclass, 19).unwrap();
        let spec = PartitionSpec {
            num_clients: 1,
            alpha: 1.0,
            seed: 5,
        };
        let shards = dirichlet_partition(&ds, &spec).unwrap();
        assert_eq!(shards.len(), 1);
        assert_eq!(shards[0].ids, ds.ids);
        assert_eq!(bits(&shards[0].features), bits(&ds.features));
    }

    #[test]
    fn partition_conserves_every_example() {
        let ds = make_synthetic(5, 10, 501, 2.0, TaskMode::Multiclass, 23).unwrap();
        let spec = PartitionSpec {
            num_clients: 4,
            alpha: 0.5,
            seed: 29,
        };
        let shards = dirichlet_partition(&ds, &spec).unwrap();
        assert_eq!(shards.iter().map(Dataset::len).sum::<usize>(), ds.len());
        let mut seen: Vec<u64> = shards.iter().flat_map(|s| s.ids.clone()).collect();
        seen.sort_unstable();
        let mut want = ds.ids.clone();
        want.sort_unstable();
        assert_eq!(seen, want);
        for s in &shards {
            assert!(!s.is_empty());
        }
    }

    /// Independent largest-remainder re-implementation used by the replay
    /// oracle below; written against the textbook description rather than
    /// the library code.
    fn replay_counts(props: &[f64], total: usize) -> Vec<usize> {
        let quotas: Vec<f64> = props.iter().map(|p| p * total as f64).collect();
        let mut out: Vec<usize> = quotas.iter().map(|q| *q as usize).collect();
        let mut order: Vec<usize> = (0..props.len()).collect();
        order.sort_by(|&a, &b| {
            let fa = quotas[a] - quotas[a].floor();
            let fb = quotas[b] - quotas[b].floor();
            fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
        });
        let mut short = total - out.iter().sum::<usize>();
        for i in order {
            if short == 0 {
                break;
            }
            out[i] += 1;
            short -= 1;
        }
        out
    }

    #[test]
    fn partition_matches_replayed_draws() {
        let ds = make_synthetic(4, 8, 600, 2.0, TaskMode::Multiclass, 31).unwrap();
        let spec = PartitionSpec {
            num_clients: 3,
            alpha: 1.0,
            seed: 37,
        };
        let outcome = dirichlet_partition_detailed(&ds, &spec).unwrap();
        assert_eq!(outcome.attempts, 1);

        // per-class member counts in dataset order
        let mut class_sizes = [0usize; 4];
        for i in 0..ds.len() {
            class_sizes[ds.dominant_class(i)] += 1;
        }

        // replay: recompute each client's per-class count from the draws
        for (c, props) in outcome.draws.iter().enumerate() {
            let replayed = replay_counts(props, class_sizes[c]);
            for (k, shard) in outcome.shards.iter().enumerate() {
                let got = (0..shard.len())
                    .filter(|&i| shard.dominant_class(i) == c)
                    .count();
                assert_eq!(got, replayed[k], "class {c} client {k}");
            }
        }
    }

    #[test]
    fn huge_alpha_concentrates_to_even_shares() {
        let ds = make_synthetic(3, 6, 3000, 2.0, TaskMode::Multiclass, 41).unwrap();
        let spec = PartitionSpec {
            num_clients: 3,
            alpha: 1e6,
            seed: 43,
        };
        let shards = dirichlet_partition(&ds, &spec).unwrap();
        for shard in &shards {
            let mut per_class = [0usize; 3];
            for i in 0..shard.len() {
                per_class[shard.dominant_class(i)] += 1;
            }
            for (c, &count) in per_class.iter().enumerate() {
                let share = count as f64 / 1000.0; // 1000 examples per class
                assert!(
                    (share - 1.0 / 3.0).abs() < 0.05 * (1.0 / 3.0),
                    "class {c}: share {share}"
                );
            }
        }
    }

    #[test]
    fn small_alpha_is_more_skewed_than_large() {
        let ds = make_synthetic(3, 6, 300, 2.0, TaskMode::Multiclass, 47).unwrap();
        let mean_max_share = |alpha: f64| -> f64 {
            let mut acc = 0.0;
            let mut trials = 0usize;
            for seed in 0..100u64 {
                let spec = PartitionSpec {
                    num_clients: 3,
                    alpha,
                    seed: 1000 + seed,
                };
                let shards = dirichlet_partition(&ds, &spec).unwrap();
                for c in 0..3 {
                    let counts: Vec<usize> = shards
                        .iter()
                        .map(|s| (0..s.len()).filter(|&i| s.dominant_class(i) == c).count())
                        .collect();
                    let total: usize = counts.iter().sum();
                    acc += counts.iter().copied().max().unwrap() as f64 / total as f64;
                    trials += 1;
                }
            }
            acc / trials as f64
        };
        let skew_small = mean_max_share(0.1);
        let skew_large = mean_max_share(10.0);
        assert!(
            skew_small > skew_large,
            "alpha=0.1 mean max share {skew_small} should exceed alpha=10 {skew_large}"
        );
    }

    #[test]
    fn partition_rejects_more_clients_than_examples() {
        let ds = make_synthetic(2, 4, 3, 2.0, TaskMode::Multiclass, 53).unwrap();
        let spec = PartitionSpec {
            num_clients: 4,
            alpha: 1.0,
            seed: 59,
        };
        assert!(dirichlet_partition(&ds, &spec).is_err());
    }

    #[test]
    fn prior_arithmetic() {
        let p = estimate_label_prior(&[vec![10, 30]], &[40], TaskMode::Multiclass).unwrap();
        assert_eq!(p.probs, vec![0.25, 0.75]);
        assert_eq!(p.total, 40);

        let p =
            estimate_label_prior(&[vec![5, 0], vec![0, 5]], &[5, 5], TaskMode::Multiclass).unwrap();
        assert_eq!(p.probs, vec![0.5, 0.5]);

        assert!(
            estimate_label_prior(&[vec![0, 0], vec![0, 0]], &[3, 3], TaskMode::Multiclass).is_err()
        );

        // multilabel marginals are per example, not per positive
        let p = estimate_label_prior(&[vec![6, 2]], &[10], TaskMode::Multilabel).unwrap();
        assert_eq!(p.probs, vec![0.6, 0.2]);
    }

    #[test]
    fn balanced_dataset_prior_is_uniform() {
        let ds = make_synthetic(4, 8, 402, 2.0, TaskMode::Multiclass, 61).unwrap();
        let p = estimate_label_prior(&[ds.label_histogram()], &[402], TaskMode::Multiclass)
            .unwrap();
        for &v in &p.probs {
            assert!((v - 0.25).abs() <= 1.0 / 402.0);
        }
    }

    #[test]
    fn prior_sampling_respects_mode() {
        let prior = LabelPrior {
            probs: vec![0.0, 1.0, 0.0],
            total: 10,
        };
        let mut rng = RngStream::new(67, 0);
        let y = prior.sample_batch(TaskMode::Multiclass, 16, &mut rng);
        for i in 0..16 {
            assert_eq!(y.row(i), &[0.0, 1.0, 0.0]);
        }
        let prior = LabelPrior {
            probs: vec![1.0, 0.0],
            total: 10,
        };
        let y = prior.sample_batch(TaskMode::Multilabel, 8, &mut rng);
        for i in 0..8 {
            assert_eq!(y.row(i), &[1.0, 0.0]);
        }
    }

    #[test]
    fn proxy_ids_disjoint_and_deterministic() {
        let train = make_synthetic(3, 6, 100, 2.0, TaskMode::Multiclass, 71).unwrap();
        let proxy = make_proxy(3, 6, 100, 2.0, TaskMode::Multiclass, 71).unwrap();
        let train_ids: std::collections::BTreeSet<u64> = train.ids.iter().copied().collect();
        assert!(proxy.ids.iter().all(|id| !train_ids.contains(id)));
        // same seed, different stream: features differ from training data
        assert_ne!(bits(&train.features), bits(&proxy.features));
        let proxy2 = make_proxy(3, 6, 100, 2.0, TaskMode::Multiclass, 71).unwrap();
        assert_eq!(bits(&proxy.features), bits(&proxy2.features));
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let ds = make_synthetic(3, 5, 40, 2.5, TaskMode::Multiclass, 73).unwrap();
        let text = to_csv_string(&ds);
        let back = from_csv_str(&text, TaskMode::Multiclass).unwrap();
        assert_eq!(back.ids, ds.ids);
        assert_eq!(bits(&back.features), bits(&ds.features));
        assert_eq!(bits(&back.labels), bits(&ds.labels));
        assert!(text.starts_with("id,x0,x1,x2,x3,x4,y0,y1,y2\n"));
    }

    #[test]
    fn csv_extreme_values_round_trip() {
        let ds = Dataset {
            ids: vec![0, 1],
            features: Tensor::from_rows(&[vec![1e-300, -0.0], vec![1.5e300, std::f64::consts::PI]])
                .unwrap(),
            labels: Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap(),
            mode: TaskMode::Multiclass,
        };
        let back = from_csv_str(&to_csv_string(&ds), TaskMode::Multiclass).unwrap();
        assert_eq!(bits(&back.features), bits(&ds.features));
    }

    #[test]
    fn csv_rejects_malformed_input() {
        assert!(from_csv_str("", TaskMode::Multiclass).is_err());
        assert!(from_csv_str("nope,x0,y0\n0,1,1\n", TaskMode::Multiclass).is_err());
        assert!(from_csv_str("id,x0,y0\n0,1.0\n", TaskMode::Multiclass).is_err());
        assert!(from_csv_str("id,x0,y0\n0,abc,1\n", TaskMode::Multiclass).is_err());
    }

    #[test]
    fn subset_and_histogram() {
        let ds = make_synthetic(3, 6, 9, 2.0, TaskMode::Multiclass, 79).unwrap();
        let sub = ds.subset(&[0, 3, 6]); // all class 0 under round-robin labels
        assert_eq!(sub.len(), 3);
        assert_eq!(sub.label_histogram(), vec![3, 0, 0]);
        let hist = ds.label_histogram();
        assert_eq!(hist.iter().sum::<u64>(), 9);

        let mut counts: BTreeMap<u64, usize> = BTreeMap::new();
        for id in &sub.ids {
            *counts.entry(*id).or_default() += 1;
        }
        assert!(counts.values().all(|&v| v == 1));
    }

    #[test]
    fn concat_pools_everything() {
        let a = make_synthetic(3, 6, 10, 2.0, TaskMode::Multiclass, 83).unwrap();
        let shards = dirichlet_partition(
            &a,
            &PartitionSpec {
                num_clients: 2,
                alpha: 1.0,
                seed: 89,
            },
        )
        .unwrap();
        let pooled = Dataset::concat(&shards.iter().collect::<Vec<_>>()).unwrap();
        assert_eq!(pooled.len(), a.len());
        let mut ids = pooled.ids.clone();
        ids.sort_unstable();
        assert_eq!(ids, a.ids);
    }
}
