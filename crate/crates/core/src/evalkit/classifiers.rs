//! Few-shot classifiers over frozen embeddings.
//!
//! All methods consume a task's support (and, for the transductive
//! rectification, its queries) as `f64` vectors and emit one full class
//! ranking per query. Class indices refer to the task's class order
//! (`TaskSpec::class_ids`); ties always break toward the smaller index, which
//! makes every method deterministic without any RNG.

use serde::{Deserialize, Serialize};

use super::{EmbeddingStore, EvalError};
use crate::sampler::TaskSpec;

pub const FINETUNE_DEFAULT_STEPS: u32 = 10;
pub const FINETUNE_DEFAULT_LEARNING_RATE: f64 = 1e-3;
pub const BDCSPN_DEFAULT_TEMPERATURE: f64 = 1.0;
pub const BDCSPN_DEFAULT_SHIFT_WEIGHT: f64 = 0.5;

/// Which classifier to run, with its method-specific hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "lowercase")]
pub enum ClassifierSpec {
    Protonet,
    Finetune { steps: u32, learning_rate: f64 },
    /// Prototype rectification: queries are pseudo-labeled to their nearest
    /// prototype with a softmax confidence over negative squared distances at
    /// `temperature`; each prototype then shifts to the `shift_weight`-blend
    /// of itself and the confidence-weighted mean of its assigned queries.
    Bdcspn { temperature: f64, shift_weight: f64 },
}

impl ClassifierSpec {
    pub fn finetune_defaults() -> Self {
        ClassifierSpec::Finetune {
            steps: FINETUNE_DEFAULT_STEPS,
            learning_rate: FINETUNE_DEFAULT_LEARNING_RATE,
        }
    }

    pub fn bdcspn_defaults() -> Self {
        ClassifierSpec::Bdcspn {
            temperature: BDCSPN_DEFAULT_TEMPERATURE,
            shift_weight: BDCSPN_DEFAULT_SHIFT_WEIGHT,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ClassifierSpec::Protonet => "protonet",
            ClassifierSpec::Finetune { .. } => "finetune",
            ClassifierSpec::Bdcspn { .. } => "bdcspn",
        }
    }

    pub fn validate(&self) -> Result<(), EvalError> {
        match *self {
            ClassifierSpec::Protonet => Ok(()),
            ClassifierSpec::Finetune {
                steps,
                learning_rate,
            } => {
                if steps < 1 {
                    return Err(EvalError::InvalidClassifier("steps must be >= 1".into()));
                }
                if !(learning_rate.is_finite() && learning_rate >= 0.0) {
                    return Err(EvalError::InvalidClassifier(
                        "learning_rate must be finite and >= 0".into(),
                    ));
                }
                Ok(())
            }
            ClassifierSpec::Bdcspn {
                temperature,
                shift_weight,
            } => {
                if !(temperature.is_finite() && temperature > 0.0) {
                    return Err(EvalError::InvalidClassifier(
                        "temperature must be positive".into(),
                    ));
                }
                if !(0.0..=1.0).contains(&shift_weight) {
                    return Err(EvalError::InvalidClassifier(
                        "shift_weight must lie in [0, 1]".into(),
                    ));
                }
                Ok(())
            }
        }
    }
}

/// A task's embeddings in evaluation layout: support vectors per class and a
/// flat query list with labels, both following the task's class order.
pub(crate) struct TaskData {
    pub support: Vec<Vec<Vec<f64>>>,
    pub queries: Vec<Vec<f64>>,
    pub query_labels: Vec<usize>,
}

pub(crate) fn gather_task(store: &EmbeddingStore, task: &TaskSpec) -> Result<TaskData, EvalError> {
    let fetch = |instance: &String| -> Result<Vec<f64>, EvalError> {
        let (_, v) = store
            .vector(instance)
            .ok_or_else(|| EvalError::MissingInstance {
                instance: instance.clone(),
                task_id: Some(task.task_id),
            })?;
        Ok(v.iter().map(|&x| x as f64).collect())
    };
    let mut support = Vec::with_capacity(task.class_ids.len());
    let mut queries = Vec::new();
    let mut query_labels = Vec::new();
    for (label, class) in task.class_ids.iter().enumerate() {
        let shots = task
            .support
            .get(class)
            .ok_or_else(|| EvalError::Parse(format!("task has no support for `{class}`")))?;
        support.push(shots.iter().map(&fetch).collect::<Result<Vec<_>, _>>()?);
        let qs = task
            .query
            .get(class)
            .ok_or_else(|| EvalError::Parse(format!("task has no queries for `{class}`")))?;
        for q in qs {
            queries.push(fetch(q)?);
            query_labels.push(label);
        }
    }
    Ok(TaskData {
        support,
        queries,
        query_labels,
    })
}

/// Per-class arithmetic mean of the support vectors, in task class order.
pub fn compute_prototypes(
    store: &EmbeddingStore,
    task: &TaskSpec,
) -> Result<Vec<(String, Vec<f64>)>, EvalError> {
    let data = gather_task(store, task)?;
    Ok(task
        .class_ids
        .iter()
        .cloned()
        .zip(prototype_means(&data.support))
        .collect())
}

pub(crate) fn prototype_means(support: &[Vec<Vec<f64>>]) -> Vec<Vec<f64>> {
    support
        .iter()
        .map(|shots| {
            let dim = shots[0].len();
            let mut mean = vec![0.0; dim];
            for shot in shots {
                for (m, v) in mean.iter_mut().zip(shot) {
                    *m += v;
                }
            }
            let k = shots.len() as f64;
            mean.iter_mut().for_each(|m| *m /= k);
            mean
        })
        .collect()
}

fn squared_euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn check_dims(prototypes: &[Vec<f64>], queries: &[Vec<f64>]) -> Result<(), EvalError> {
    let dim = prototypes
        .first()
        .ok_or_else(|| EvalError::InvalidClassifier("no prototypes".into()))?
        .len();
    for (i, p) in prototypes.iter().enumerate() {
        if p.len() != dim {
            return Err(EvalError::DimensionMismatch {
                id: format!("prototype {i}"),
                expected: dim,
                got: p.len(),
            });
        }
    }
    for (i, q) in queries.iter().enumerate() {
        if q.len() != dim {
            return Err(EvalError::DimensionMismatch {
                id: format!("query {i}"),
                expected: dim,
                got: q.len(),
            });
        }
    }
    Ok(())
}

/// Rank classes for every query by ascending squared Euclidean distance to
/// the prototypes, ties toward the smaller class index.
pub fn protonet_predict(
    prototypes: &[Vec<f64>],
    queries: &[Vec<f64>],
) -> Result<Vec<Vec<usize>>, EvalError> {
    check_dims(prototypes, queries)?;
    Ok(queries
        .iter()
        .map(|q| {
            let dists: Vec<f64> = prototypes.iter().map(|p| squared_euclidean(q, p)).collect();
            rank_ascending(&dists)
        })
        .collect())
}

/// Transductive prototype rectification (see [`ClassifierSpec::Bdcspn`]).
/// Prototypes with no assigned queries are returned unchanged.
pub fn bdcspn_rectify(
    prototypes: &[Vec<f64>],
    queries: &[Vec<f64>],
    temperature: f64,
    shift_weight: f64,
) -> Result<Vec<Vec<f64>>, EvalError> {
    check_dims(prototypes, queries)?;
    let n = prototypes.len();
    let mut weight_sum = vec![0.0f64; n];
    let mut weighted_mean: Vec<Vec<f64>> = prototypes.iter().map(|p| vec![0.0; p.len()]).collect();
    for q in queries {
        let neg_scaled: Vec<f64> = prototypes
            .iter()
            .map(|p| -squared_euclidean(q, p) / temperature)
            .collect();
        let label = rank_descending(&neg_scaled)[0];
        let max = neg_scaled.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let denom: f64 = neg_scaled.iter().map(|s| (s - max).exp()).sum();
        let confidence = (neg_scaled[label] - max).exp() / denom;
        weight_sum[label] += confidence;
        for (acc, v) in weighted_mean[label].iter_mut().zip(q) {
            *acc += confidence * v;
        }
    }
    Ok(prototypes
        .iter()
        .enumerate()
        .map(|(c, p)| {
            if weight_sum[c] == 0.0 {
                return p.clone();
            }
            p.iter()
                .zip(&weighted_mean[c])
                .map(|(pv, acc)| (1.0 - shift_weight) * pv + shift_weight * acc / weight_sum[c])
                .collect()
        })
        .collect())
}

/// Mean softmax cross-entropy over `(xs, ys)` for a linear head, with its
/// analytic gradient. `weights` is `n_classes x dim` row-major.
pub fn softmax_ce_loss_and_grad(
    weights: &[f64],
    bias: &[f64],
    xs: &[Vec<f64>],
    ys: &[usize],
    n_classes: usize,
) -> (f64, Vec<f64>, Vec<f64>) {
    let dim = xs[0].len();
    debug_assert_eq!(weights.len(), n_classes * dim);
    debug_assert_eq!(bias.len(), n_classes);
    let batch = xs.len() as f64;
    let mut loss = 0.0;
    let mut grad_w = vec![0.0; n_classes * dim];
    let mut grad_b = vec![0.0; n_classes];
    for (x, &y) in xs.iter().zip(ys) {
        let mut logits = vec![0.0f64; n_classes];
        for (c, logit) in logits.iter_mut().enumerate() {
            let row = &weights[c * dim..(c + 1) * dim];
            *logit = bias[c] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
        }
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let denom: f64 = exps.iter().sum();
        loss += -(exps[y] / denom).ln();
        for c in 0..n_classes {
            let delta = exps[c] / denom - if c == y { 1.0 } else { 0.0 };
            grad_b[c] += delta / batch;
            let row = &mut grad_w[c * dim..(c + 1) * dim];
            for (g, v) in row.iter_mut().zip(x) {
                *g += delta / batch * v;
            }
        }
    }
    (loss / batch, grad_w, grad_b)
}

pub(crate) fn fit_linear_head(
    xs: &[Vec<f64>],
    ys: &[usize],
    n_classes: usize,
    steps: u32,
    learning_rate: f64,
) -> (Vec<f64>, Vec<f64>) {
    let dim = xs[0].len();
    // Zero initialization: deterministic, no RNG anywhere in the head.
    let mut weights = vec![0.0; n_classes * dim];
    let mut bias = vec![0.0; n_classes];
    for _ in 0..steps {
        let (_, grad_w, grad_b) = softmax_ce_loss_and_grad(&weights, &bias, xs, ys, n_classes);
        for (w, g) in weights.iter_mut().zip(&grad_w) {
            *w -= learning_rate * g;
        }
        for (b, g) in bias.iter_mut().zip(&grad_b) {
            *b -= learning_rate * g;
        }
    }
    (weights, bias)
}

pub(crate) fn linear_head_rankings(
    weights: &[f64],
    bias: &[f64],
    queries: &[Vec<f64>],
    n_classes: usize,
) -> Vec<Vec<usize>> {
    let dim = if queries.is_empty() {
        0
    } else {
        queries[0].len()
    };
    queries
        .iter()
        .map(|q| {
            let scores: Vec<f64> = (0..n_classes)
                .map(|c| {
                    let row = &weights[c * dim..(c + 1) * dim];
                    bias[c] + row.iter().zip(q).map(|(w, v)| w * v).sum::<f64>()
                })
                .collect();
            rank_descending(&scores)
        })
        .collect()
}

/// Train a linear softmax head on the task's support set by full-batch
/// gradient descent from zero initialization (embeddings frozen), then rank
/// classes per query by descending score.
pub fn finetune_fit_predict(
    store: &EmbeddingStore,
    task: &TaskSpec,
    steps: u32,
    learning_rate: f64,
) -> Result<Vec<Vec<usize>>, EvalError> {
    ClassifierSpec::Finetune {
        steps,
        learning_rate,
    }
    .validate()?;
    let data = gather_task(store, task)?;
    let n_classes = task.class_ids.len();
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (label, shots) in data.support.iter().enumerate() {
        for shot in shots {
            xs.push(shot.clone());
            ys.push(label);
        }
    }
    let (weights, bias) = fit_linear_head(&xs, &ys, n_classes, steps, learning_rate);
    Ok(linear_head_rankings(&weights, &bias, &data.queries, n_classes))
}

fn rank_ascending(keys: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..keys.len()).collect();
    idx.sort_by(|&a, &b| keys[a].total_cmp(&keys[b]).then(a.cmp(&b)));
    idx
}

fn rank_descending(keys: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..keys.len()).collect();
    idx.sort_by(|&a, &b| keys[b].total_cmp(&keys[a]).then(a.cmp(&b)));
    idx
}
