//! Jiang–Conrath pseudo-distances between leaf classes and the coarsity of
//! class sets.
//!
//! The pseudo-distance between classes `c1` and `c2` is
//! `2·ln|lso(c1,c2)| − ln|c1| − ln|c2|`, where `|c|` is the cumulative
//! instance count and `lso` the lowest superordinate. The logarithm base is
//! natural log, fixed in [`jc_distance`] alone: absolute coarsity scales
//! depend on it, everything relational (orderings, sampler behaviour) does
//! not. The measure is symmetric, separated, and non-negative, but does not
//! satisfy the triangle inequality.
//!
//! Coarsity of a class set is the mean squared pseudo-distance over its
//! unordered pairs: low coarsity means a fine-grained task.

use std::collections::HashMap;

use rayon::prelude::*;
use thiserror::Error;

use crate::taxonomy::{TaxonomyError, TaxonomyGraph};

#[derive(Debug, Error)]
pub enum SemanticsError {
    #[error("unknown class `{0}`")]
    UnknownClass(String),
    #[error("coarsity requires at least two distinct classes")]
    SingletonClassSet,
    #[error("invalid distance matrix: {0}")]
    Parse(String),
}

/// Coarsity of a class set, in squared pseudo-distance units.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct Coarsity(pub f64);

impl Coarsity {
    pub fn value(self) -> f64 {
        self.0
    }
}

/// Dense symmetric matrix of pairwise pseudo-distances over the leaf classes,
/// in the taxonomy's canonical class order. Immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    class_ids: Vec<String>,
    index: HashMap<String, usize>,
    values: Vec<f64>,
}

/// Pseudo-distance between two leaf classes:
/// `2·ln(cum(lso)) − ln(cum(c1)) − ln(cum(c2))`.
pub fn jc_distance(g: &TaxonomyGraph, c1: &str, c2: &str) -> Result<f64, TaxonomyError> {
    let lso = g.lowest_superordinate(c1, c2)?;
    let l = g.cumulative_count(lso)? as f64;
    let a = g.cumulative_count(c1)? as f64;
    let b = g.cumulative_count(c2)? as f64;
    // The (ln a + ln b) grouping keeps the value bit-identical under argument
    // swap. cum(lso) >= max(cum(c1), cum(c2)) makes it non-negative; the
    // clamp only absorbs last-bit rounding.
    Ok((2.0 * l.ln() - (a.ln() + b.ln())).max(0.0))
}

/// Full pairwise distance matrix in canonical class order. Rows are computed
/// in parallel; the result does not depend on the parallelization.
pub fn distance_matrix(g: &TaxonomyGraph) -> DistanceMatrix {
    let class_ids: Vec<String> = g.leaf_class_ids().to_vec();
    let n = class_ids.len();
    let mut values = vec![0.0f64; n * n];
    values
        .par_chunks_mut(n)
        .enumerate()
        .for_each(|(i, row)| {
            for j in 0..n {
                row[j] = jc_distance(g, &class_ids[i], &class_ids[j])
                    .expect("leaf ids come from the graph itself");
            }
        });
    DistanceMatrix::new(class_ids, values).expect("distances from a valid graph are valid")
}

/// Mean squared pairwise distance over a set of ≥ 2 distinct classes.
pub fn coarsity(dm: &DistanceMatrix, classes: &[String]) -> Result<Coarsity, SemanticsError> {
    let mut idx = Vec::with_capacity(classes.len());
    for c in classes {
        let i = dm
            .index_of(c)
            .ok_or_else(|| SemanticsError::UnknownClass(c.clone()))?;
        if !idx.contains(&i) {
            idx.push(i);
        }
    }
    if idx.len() < 2 {
        return Err(SemanticsError::SingletonClassSet);
    }
    // Canonical summation order: the value is bit-identical under any
    // permutation of the input.
    idx.sort_unstable();
    let mut sum = 0.0;
    for (k, &i) in idx.iter().enumerate() {
        for &j in &idx[k + 1..] {
            let d = dm.get(i, j);
            sum += d * d;
        }
    }
    let pairs = (idx.len() * (idx.len() - 1) / 2) as f64;
    Ok(Coarsity(sum / pairs))
}

impl DistanceMatrix {
    pub fn new(class_ids: Vec<String>, values: Vec<f64>) -> Result<Self, SemanticsError> {
        let n = class_ids.len();
        if values.len() != n * n {
            return Err(SemanticsError::Parse(format!(
                "expected {n}x{n} values, got {}",
                values.len()
            )));
        }
        let mut index = HashMap::with_capacity(n);
        for (i, id) in class_ids.iter().enumerate() {
            if index.insert(id.clone(), i).is_some() {
                return Err(SemanticsError::Parse(format!("duplicate class id `{id}`")));
            }
        }
        for i in 0..n {
            if values[i * n + i] != 0.0 {
                return Err(SemanticsError::Parse(format!(
                    "nonzero diagonal at `{}`",
                    class_ids[i]
                )));
            }
            for j in 0..n {
                let v = values[i * n + j];
                if !v.is_finite() || v < 0.0 {
                    return Err(SemanticsError::Parse(format!(
                        "entry ({}, {}) is {v}",
                        class_ids[i], class_ids[j]
                    )));
                }
                if values[j * n + i] != v {
                    return Err(SemanticsError::Parse(format!(
                        "asymmetry between ({}, {})",
                        class_ids[i], class_ids[j]
                    )));
                }
            }
        }
        Ok(Self {
            class_ids,
            index,
            values,
        })
    }

    pub fn len(&self) -> usize {
        self.class_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.class_ids.is_empty()
    }

    pub fn class_ids(&self) -> &[String] {
        &self.class_ids
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.class_ids.len() + j]
    }

    pub fn get_by_id(&self, c1: &str, c2: &str) -> Result<f64, SemanticsError> {
        let i = self
            .index_of(c1)
            .ok_or_else(|| SemanticsError::UnknownClass(c1.to_string()))?;
        let j = self
            .index_of(c2)
            .ok_or_else(|| SemanticsError::UnknownClass(c2.to_string()))?;
        Ok(self.get(i, j))
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// CSV export: header row/column of class ids, full symmetric matrix.
    /// Floats are printed with 17 significant digits so parsing the file
    /// reconstructs every entry exactly.
    pub fn to_csv(&self) -> String {
        let n = self.class_ids.len();
        let mut w = csv::WriterBuilder::new().from_writer(Vec::new());
        let mut header = Vec::with_capacity(n + 1);
        header.push("class_id".to_string());
        header.extend(self.class_ids.iter().cloned());
        w.write_record(&header).expect("in-memory write");
        for i in 0..n {
            let mut row = Vec::with_capacity(n + 1);
            row.push(self.class_ids[i].clone());
            for j in 0..n {
                row.push(format!("{:.16e}", self.get(i, j)));
            }
            w.write_record(&row).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf8 csv")
    }

    pub fn from_csv(source: &str) -> Result<Self, SemanticsError> {
        let mut r = csv::ReaderBuilder::new()
            .has_headers(false)
            .from_reader(source.as_bytes());
        let mut records = r.records();
        let header = records
            .next()
            .ok_or_else(|| SemanticsError::Parse("empty file".into()))?
            .map_err(|e| SemanticsError::Parse(e.to_string()))?;
        if header.get(0) != Some("class_id") {
            return Err(SemanticsError::Parse(
                "first header cell must be `class_id`".into(),
            ));
        }
        let class_ids: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
        let n = class_ids.len();
        let mut values = vec![0.0f64; n * n];
        let mut rows = 0usize;
        for (i, rec) in records.enumerate() {
            let rec = rec.map_err(|e| SemanticsError::Parse(e.to_string()))?;
            if i >= n {
                return Err(SemanticsError::Parse("more rows than classes".into()));
            }
            if rec.get(0) != Some(class_ids[i].as_str()) {
                return Err(SemanticsError::Parse(format!(
                    "row {} label does not match header order",
                    i + 1
                )));
            }
            if rec.len() != n + 1 {
                return Err(SemanticsError::Parse(format!(
                    "row {} has {} cells, expected {}",
                    i + 1,
                    rec.len(),
                    n + 1
                )));
            }
            for j in 0..n {
                values[i * n + j] = rec
                    .get(j + 1)
                    .unwrap()
                    .parse::<f64>()
                    .map_err(|e| SemanticsError::Parse(e.to_string()))?;
            }
            rows += 1;
        }
        if rows != n {
            return Err(SemanticsError::Parse(format!(
                "expected {n} rows, got {rows}"
            )));
        }
        Self::new(class_ids, values)
    }
}
