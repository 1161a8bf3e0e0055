//! Ranking metrics, the embedding separation score and CSV export.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::ItemId;
use crate::numcore::{NumError, Scalar, Tensor};

pub const DEFAULT_CUTOFFS: [usize; 2] = [10, 20];
/// Guards the separation score against zero spread.
pub const SPREAD_EPS: f64 = 1e-12;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("no sessions to evaluate")]
    Empty,
    #[error("label {label} is outside a score vector of length {len}")]
    LabelOutOfRange { label: ItemId, len: usize },
    #[error("cutoffs must be positive")]
    BadCutoff,
    #[error("{path}: {message}")]
    Csv { path: String, message: String },
    #[error("i/o error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error(transparent)]
    Num(#[from] NumError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub prec_at: BTreeMap<usize, f64>,
    pub mrr_at: BTreeMap<usize, f64>,
    pub n_sessions: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub disentanglement_score: Option<f64>,
}

impl EvalReport {
    pub fn prec(&self, k: usize) -> f64 {
        self.prec_at.get(&k).copied().unwrap_or(f64::NAN)
    }

    pub fn mrr(&self, k: usize) -> f64 {
        self.mrr_at.get(&k).copied().unwrap_or(f64::NAN)
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<16}{}", "sessions", self.n_sessions)?;
        for (k, v) in &self.prec_at {
            writeln!(f, "{:<16}{v:.4}", format!("Prec@{k}"))?;
        }
        for (k, v) in &self.mrr_at {
            writeln!(f, "{:<16}{v:.4}", format!("MRR@{k}"))?;
        }
        if let Some(s) = self.disentanglement_score {
            writeln!(f, "{:<16}{s:.4}", "separation")?;
        }
        Ok(())
    }
}

/// 1-based rank of `label`: items scoring higher come first, ties go to the
/// lower item id.
pub fn label_rank<T: PartialOrd>(scores: &[T], label: ItemId) -> Result<usize, EvalError> {
    let target = scores.get(label).ok_or(EvalError::LabelOutOfRange {
        label,
        len: scores.len(),
    })?;
    let ahead = scores
        .iter()
        .enumerate()
        .filter(|&(j, y)| y > target || (j < label && y == target))
        .count();
    Ok(ahead + 1)
}

/// Streaming Prec@K / MRR@K over sessions.
#[derive(Debug, Clone)]
pub struct MetricAccumulator {
    cutoffs: Vec<usize>,
    hits: Vec<usize>,
    reciprocal: Vec<f64>,
    n: usize,
}

impl MetricAccumulator {
    pub fn new(cutoffs: &[usize]) -> Result<Self, EvalError> {
        if cutoffs.is_empty() || cutoffs.contains(&0) {
            return Err(EvalError::BadCutoff);
        }
        let mut cutoffs = cutoffs.to_vec();
        cutoffs.sort_unstable();
        cutoffs.dedup();
        Ok(Self {
            hits: vec![0; cutoffs.len()],
            reciprocal: vec![0.0; cutoffs.len()],
            cutoffs,
            n: 0,
        })
    }

    pub fn add_rank(&mut self, rank: usize) {
        self.n += 1;
        for (idx, &k) in self.cutoffs.iter().enumerate() {
            if rank <= k {
                self.hits[idx] += 1;
                self.reciprocal[idx] += 1.0 / rank as f64;
            }
        }
    }

    pub fn add<T: PartialOrd>(&mut self, scores: &[T], label: ItemId) -> Result<usize, EvalError> {
        let rank = label_rank(scores, label)?;
        self.add_rank(rank);
        Ok(rank)
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn finish(&self) -> Result<EvalReport, EvalError> {
        if self.n == 0 {
            return Err(EvalError::Empty);
        }
        let n = self.n as f64;
        let mut prec_at = BTreeMap::new();
        let mut mrr_at = BTreeMap::new();
        for (idx, &k) in self.cutoffs.iter().enumerate() {
            prec_at.insert(k, self.hits[idx] as f64 / n);
            mrr_at.insert(k, self.reciprocal[idx] / n);
        }
        Ok(EvalReport {
            prec_at,
            mrr_at,
            n_sessions: self.n,
            disentanglement_score: None,
        })
    }
}

/// Prec@K and MRR@K over `(scores, label)` pairs; each score vector covers
/// the full catalog.
pub fn rank_metrics<T: PartialOrd>(sessions: &[(Vec<T>, ItemId)], cutoffs: &[usize]) -> Result<EvalReport, EvalError> {
    let mut acc = MetricAccumulator::new(cutoffs)?;
    for (scores, label) in sessions {
        acc.add(scores, *label)?;
    }
    acc.finish()
}

/// Pushes `items` (except `keep`) to the bottom of the ranking.
pub fn mask_items<T: Scalar>(scores: &mut [T], items: &[ItemId], keep: ItemId) {
    for &i in items {
        if i != keep && i < scores.len() {
            scores[i] = T::neg_infinity();
        }
    }
}

fn centroid_and_spread<T: Scalar>(table: &Tensor<T>) -> Result<(Vec<f64>, f64), EvalError> {
    let (n, d) = table.dims2("disentanglement_score")?;
    let mut mean = vec![0.0; d];
    for i in 0..n {
        for (m, x) in mean.iter_mut().zip(table.row(i)) {
            *m += x.as_f64();
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let sq: f64 = (0..n)
        .map(|i| {
            table
                .row(i)
                .iter()
                .zip(&mean)
                .map(|(x, m)| (x.as_f64() - m).powi(2))
                .sum::<f64>()
        })
        .sum();
    Ok((mean, (sq / n as f64).sqrt()))
}

/// Centroid distance between the two tables over their mean RMS spread.
pub fn disentanglement_score<T: Scalar>(ids: &Tensor<T>, modality: &Tensor<T>) -> Result<f64, EvalError> {
    if ids.shape() != modality.shape() {
        return Err(NumError::ShapeMismatch {
            op: "disentanglement_score",
            left: ids.shape().to_vec(),
            right: modality.shape().to_vec(),
        }
        .into());
    }
    let (ca, sa) = centroid_and_spread(ids)?;
    let (cb, sb) = centroid_and_spread(modality)?;
    let dist = ca.iter().zip(&cb).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    Ok(dist / (0.5 * (sa + sb) + SPREAD_EPS))
}

fn csv_err(path: &Path, e: impl fmt::Display) -> EvalError {
    EvalError::Csv {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

/// Writes one row per item: `id,e0,...,e{d-1}`.
pub fn write_embedding_csv<T: Scalar>(path: &Path, table: &Tensor<T>) -> Result<(), EvalError> {
    let (n, d) = table.dims2("write_embedding_csv")?;
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    let header: Vec<String> = std::iter::once("id".to_string())
        .chain((0..d).map(|j| format!("e{j}")))
        .collect();
    w.write_record(&header).map_err(|e| csv_err(path, e))?;
    for i in 0..n {
        let row: Vec<String> = std::iter::once(i.to_string())
            .chain(table.row(i).iter().map(|x| x.as_f64().to_string()))
            .collect();
        w.write_record(&row).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| EvalError::Io {
        path: path.display().to_string(),
        source: e,
    })
}

/// Reads a file written by [`write_embedding_csv`].
pub fn read_embedding_csv(path: &Path) -> Result<(Vec<ItemId>, Tensor<f64>), EvalError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let d = r.headers().map_err(|e| csv_err(path, e))?.len().saturating_sub(1);
    if d == 0 {
        return Err(csv_err(path, "no embedding columns"));
    }
    let mut ids = Vec::new();
    let mut data = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let mut fields = rec.iter();
        let id = fields.next().unwrap_or_default();
        ids.push(id.parse().map_err(|e| csv_err(path, format!("bad id `{id}`: {e}")))?);
        for f in fields {
            data.push(
                f.parse::<f64>()
                    .map_err(|e| csv_err(path, format!("bad value `{f}`: {e}")))?,
            );
        }
    }
    if ids.is_empty() {
        return Err(csv_err(path, "no rows"));
    }
    Ok((ids.clone(), Tensor::matrix(ids.len(), d, data)?))
}

/// `ids.csv` and `modality.csv` inside `dir`.
pub fn export_embeddings<T: Scalar>(dir: &Path, ids: &Tensor<T>, modality: &Tensor<T>) -> Result<(), EvalError> {
    std::fs::create_dir_all(dir).map_err(|e| EvalError::Io {
        path: dir.display().to_string(),
        source: e,
    })?;
    write_embedding_csv(&dir.join("ids.csv"), ids)?;
    write_embedding_csv(&dir.join("modality.csv"), modality)
}
