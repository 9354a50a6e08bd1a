//! Per-task results and testbed-level aggregates.
//!
//! Quartiles are formed by a stable sort on (coarsity, task_id) and split
//! into four buckets whose sizes differ by at most one, the first bucket
//! holding the tasks with the smallest coarsity. The 95% confidence interval
//! half-width is `1.96 × sample std (n−1) / sqrt(T)`. The rolling series
//! slides a fixed-size window over the coarsity-sorted tasks with stride 1
//! and emits (mean coarsity, mean top-1) per window.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::classifiers::{
    self, fit_linear_head, gather_task, linear_head_rankings, prototype_means, ClassifierSpec,
};
use super::{EmbeddingStore, EvalError};
use crate::sampler::{TaskSpec, Testbed};

pub const DEFAULT_ROLLING_WINDOW: usize = 200;

/// Scores of one task. `top5` is populated only for tasks with more than
/// five ways.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskResult {
    pub task_id: u64,
    pub coarsity: f64,
    pub ways: usize,
    pub top1: f64,
    pub top5: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuartileSummary {
    /// 1-based; quartile 1 holds the smallest-coarsity tasks.
    pub quartile: usize,
    pub task_count: usize,
    pub mean_coarsity: f64,
    pub mean_top1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RollingPoint {
    pub coarsity: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: String,
    pub num_tasks: usize,
    pub ways: usize,
    pub mean_top1: f64,
    pub ci95_half_width: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub mean_top5: Option<f64>,
    pub quartiles: Vec<QuartileSummary>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub rolling_window: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub rolling: Option<Vec<RollingPoint>>,
    /// Per-task results travel in the CSV, not the aggregate JSON.
    #[serde(skip, default)]
    pub per_task: Vec<TaskResult>,
}

fn evaluate_task(
    store: &EmbeddingStore,
    task: &TaskSpec,
    spec: &ClassifierSpec,
) -> Result<TaskResult, EvalError> {
    let data = gather_task(store, task)?;
    let rankings = match *spec {
        ClassifierSpec::Protonet => {
            let prototypes = prototype_means(&data.support);
            classifiers::protonet_predict(&prototypes, &data.queries)?
        }
        ClassifierSpec::Bdcspn {
            temperature,
            shift_weight,
        } => {
            let prototypes = prototype_means(&data.support);
            let rectified =
                classifiers::bdcspn_rectify(&prototypes, &data.queries, temperature, shift_weight)?;
            classifiers::protonet_predict(&rectified, &data.queries)?
        }
        ClassifierSpec::Finetune {
            steps,
            learning_rate,
        } => {
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
            linear_head_rankings(&weights, &bias, &data.queries, n_classes)
        }
    };

    let ways = task.class_ids.len();
    let total = data.query_labels.len() as f64;
    let mut hit1 = 0usize;
    let mut hit5 = 0usize;
    for (ranking, &label) in rankings.iter().zip(&data.query_labels) {
        if ranking[0] == label {
            hit1 += 1;
        }
        if ranking.iter().take(5).any(|&c| c == label) {
            hit5 += 1;
        }
    }
    Ok(TaskResult {
        task_id: task.task_id,
        coarsity: task.coarsity,
        ways,
        top1: hit1 as f64 / total,
        top5: (ways > 5).then(|| hit5 as f64 / total),
    })
}

/// Evaluate every task of the testbed (in parallel — tasks are independent
/// and the report does not depend on evaluation order) and aggregate.
pub fn evaluate_testbed(
    store: &EmbeddingStore,
    testbed: &Testbed,
    spec: &ClassifierSpec,
) -> Result<EvalReport, EvalError> {
    spec.validate()?;
    if testbed.tasks.is_empty() {
        return Err(EvalError::Parse("testbed has no tasks".into()));
    }
    let per_task: Vec<TaskResult> = testbed
        .tasks
        .par_iter()
        .map(|task| evaluate_task(store, task, spec))
        .collect::<Result<_, _>>()?;

    let n = per_task.len();
    let mean_top1 = per_task.iter().map(|r| r.top1).sum::<f64>() / n as f64;
    let ci95_half_width = if n > 1 {
        let var = per_task
            .iter()
            .map(|r| (r.top1 - mean_top1).powi(2))
            .sum::<f64>()
            / (n - 1) as f64;
        1.96 * var.sqrt() / (n as f64).sqrt()
    } else {
        0.0
    };
    let mean_top5 = per_task
        .iter()
        .map(|r| r.top5)
        .collect::<Option<Vec<f64>>>()
        .map(|v| v.iter().sum::<f64>() / n as f64);

    let order = coarsity_order(&per_task);
    let mut quartiles = Vec::with_capacity(4);
    let base = n / 4;
    let extra = n % 4;
    let mut start = 0usize;
    for q in 0..4 {
        let size = base + usize::from(q < extra);
        let bucket = &order[start..start + size];
        start += size;
        let count = bucket.len().max(1) as f64;
        quartiles.push(QuartileSummary {
            quartile: q + 1,
            task_count: bucket.len(),
            mean_coarsity: bucket.iter().map(|&i| per_task[i].coarsity).sum::<f64>() / count,
            mean_top1: bucket.iter().map(|&i| per_task[i].top1).sum::<f64>() / count,
        });
    }

    Ok(EvalReport {
        method: spec.name().to_string(),
        num_tasks: n,
        ways: testbed.config.ways,
        mean_top1,
        ci95_half_width,
        mean_top5,
        quartiles,
        rolling_window: None,
        rolling: None,
        per_task,
    })
}

fn coarsity_order(results: &[TaskResult]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..results.len()).collect();
    order.sort_by(|&a, &b| {
        results[a]
            .coarsity
            .total_cmp(&results[b].coarsity)
            .then(results[a].task_id.cmp(&results[b].task_id))
    });
    order
}

/// Rolling (mean coarsity, mean top-1) over coarsity-sorted tasks, window of
/// `window` tasks, stride 1; the series has `num_tasks − window + 1` points.
pub fn rolling_correlation(
    report: &EvalReport,
    window: usize,
) -> Result<Vec<RollingPoint>, EvalError> {
    let n = report.per_task.len();
    if window == 0 || window > n {
        return Err(EvalError::WindowTooLarge { window, tasks: n });
    }
    let order = coarsity_order(&report.per_task);
    let coarsities: Vec<f64> = order.iter().map(|&i| report.per_task[i].coarsity).collect();
    let accuracies: Vec<f64> = order.iter().map(|&i| report.per_task[i].top1).collect();
    let mut points = Vec::with_capacity(n - window + 1);
    let mut c_sum: f64 = coarsities[..window].iter().sum();
    let mut a_sum: f64 = accuracies[..window].iter().sum();
    let w = window as f64;
    points.push(RollingPoint {
        coarsity: c_sum / w,
        accuracy: a_sum / w,
    });
    for i in window..n {
        c_sum += coarsities[i] - coarsities[i - window];
        a_sum += accuracies[i] - accuracies[i - window];
        points.push(RollingPoint {
            coarsity: c_sum / w,
            accuracy: a_sum / w,
        });
    }
    Ok(points)
}

impl EvalReport {
    pub fn with_rolling(mut self, window: usize) -> Result<Self, EvalError> {
        self.rolling = Some(rolling_correlation(&self, window)?);
        self.rolling_window = Some(window);
        Ok(self)
    }

    /// Aggregate report as pretty JSON (per-task results excluded; see
    /// [`EvalReport::per_task_csv`]).
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(source: &str) -> Result<Self, EvalError> {
        serde_json::from_str(source).map_err(|e| EvalError::Parse(e.to_string()))
    }

    /// `task_id,coarsity,top1,top5` (top5 empty for ≤ 5-way tasks), floats
    /// printed with round-trip precision.
    pub fn per_task_csv(&self) -> String {
        let mut out = String::from("task_id,coarsity,top1,top5\n");
        for r in &self.per_task {
            let top5 = r.top5.map(|v| v.to_string()).unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{}\n",
                r.task_id, r.coarsity, r.top1, top5
            ));
        }
        out
    }

    /// `coarsity,accuracy` rows of the rolling series (empty series if
    /// rolling was never computed).
    pub fn rolling_csv(&self) -> String {
        let mut out = String::from("coarsity,accuracy\n");
        if let Some(points) = &self.rolling {
            for p in points {
                out.push_str(&format!("{},{}\n", p.coarsity, p.accuracy));
            }
        }
        out
    }
}
