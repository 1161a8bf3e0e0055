//! Item-level representations: ID embeddings propagated over the
//! co-occurrence graph, the co-occurrence constraint loss, and pooled
//! modality embeddings from a pluggable token encoder.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Deserialize;
use sha2::{Digest, Sha256};

use crate::cooc::ConstraintSets;
use crate::corpus::{Item, ItemId};
use crate::numcore::{cosine, NumError, Scalar, Tape, Tensor, Var};
use crate::ratio::{ratio_term, LossDiagnostics, RatioMode};

pub const DEFAULT_ENCODER_DIM: usize = 64;

#[derive(Debug, thiserror::Error)]
pub enum ReprError {
    #[error("item {0} has no tokens and no precomputed modality vector")]
    NoTokens(ItemId),
    #[error("item {item}: modality vector has length {found}, encoder dimension is {expected}")]
    VectorDim {
        item: ItemId,
        found: usize,
        expected: usize,
    },
    #[error("{path}:{line}: {message}")]
    EncoderFile {
        path: std::path::PathBuf,
        line: usize,
        message: String,
    },
    #[error("catalog is not densely indexed; filter the corpus first")]
    SparseCatalog,
    #[error(transparent)]
    Num(#[from] NumError),
}

/// Maps a token string to a fixed vector.
///
/// Tokens found in the loaded table use their stored vector; all others use
/// the hashed rule: SHA-256 of the token seeds a ChaCha8 stream of
/// standard-normal draws, normalized to unit length.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenEncoder {
    dim: usize,
    table: HashMap<String, Vec<f64>>,
}

#[derive(Deserialize)]
struct EncoderRecord {
    token: String,
    vec: Vec<f64>,
}

impl TokenEncoder {
    pub fn hashed(dim: usize) -> Self {
        assert!(dim > 0, "encoder dimension must be positive");
        Self {
            dim,
            table: HashMap::new(),
        }
    }

    /// Table-backed encoder; the dimension comes from the file.
    pub fn from_table(table: HashMap<String, Vec<f64>>) -> Option<Self> {
        let dim = table.values().next()?.len();
        if dim == 0 || table.values().any(|v| v.len() != dim) {
            return None;
        }
        Some(Self { dim, table })
    }

    /// Reads JSON Lines `{"token": str, "vec": [float, ...]}`.
    pub fn from_file(path: &Path) -> Result<Self, ReprError> {
        let err = |line: usize, message: String| ReprError::EncoderFile {
            path: path.to_path_buf(),
            line,
            message,
        };
        let file = File::open(path).map_err(|e| err(0, e.to_string()))?;
        let mut table = HashMap::new();
        let mut dim = None;
        for (idx, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| err(idx + 1, e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: EncoderRecord = serde_json::from_str(&line).map_err(|e| err(idx + 1, e.to_string()))?;
            let expected = *dim.get_or_insert(rec.vec.len());
            if rec.vec.is_empty() || rec.vec.len() != expected {
                return Err(err(
                    idx + 1,
                    format!("vector length {} (expected {expected})", rec.vec.len()),
                ));
            }
            table.insert(rec.token, rec.vec);
        }
        Self::from_table(table).ok_or_else(|| err(0, "encoder file has no vectors".into()))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_file_backed(&self) -> bool {
        !self.table.is_empty()
    }

    pub fn contains(&self, token: &str) -> bool {
        self.table.contains_key(token)
    }

    pub fn encode(&self, token: &str) -> Vec<f64> {
        match self.table.get(token) {
            Some(v) => v.clone(),
            None => hashed_vector(token, self.dim),
        }
    }

    pub fn similarity(&self, a: &str, b: &str) -> f64 {
        cosine(&self.encode(a), &self.encode(b))
    }
}

fn hashed_vector(token: &str, dim: usize) -> Vec<f64> {
    let digest = Sha256::digest(token.as_bytes());
    let seed = u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    v
}

/// Mean-pooled token vector of an item, or its precomputed vector.
pub fn pooled_vector(item: &Item, encoder: &TokenEncoder) -> Result<Vec<f64>, ReprError> {
    if let Some(v) = &item.modality_vector {
        if v.len() != encoder.dim() {
            return Err(ReprError::VectorDim {
                item: item.item_id,
                found: v.len(),
                expected: encoder.dim(),
            });
        }
        return Ok(v.clone());
    }
    let mut sum = vec![0.0; encoder.dim()];
    let mut count = 0usize;
    for token in item.all_tokens() {
        for (s, x) in sum.iter_mut().zip(encoder.encode(token)) {
            *s += x;
        }
        count += 1;
    }
    if count == 0 {
        return Err(ReprError::NoTokens(item.item_id));
    }
    Ok(sum.into_iter().map(|s| s / count as f64).collect())
}

/// Frozen pooled vectors for the whole catalog (`n x D_enc`).
#[derive(Debug, Clone, PartialEq)]
pub struct ModalityTable<T = f64> {
    pub pooled: Tensor<T>,
    /// Tokens that fell back to hashing under a file-backed encoder.
    pub fallback_tokens: usize,
}

impl<T: Scalar> ModalityTable<T> {
    pub fn build(items: &[Item], encoder: &TokenEncoder) -> Result<Self, ReprError> {
        if items.is_empty() || items.iter().enumerate().any(|(i, it)| it.item_id != i) {
            return Err(ReprError::SparseCatalog);
        }
        let mut data = Vec::with_capacity(items.len() * encoder.dim());
        let mut fallback_tokens = 0;
        for item in items {
            if encoder.is_file_backed() && item.modality_vector.is_none() {
                fallback_tokens += item.all_tokens().filter(|t| !encoder.contains(t)).count();
            }
            data.extend(pooled_vector(item, encoder)?.into_iter().map(T::lit));
        }
        if fallback_tokens > 0 {
            log::info!("{fallback_tokens} tokens missing from the encoder file used the hashed fallback");
        }
        Ok(Self {
            pooled: Tensor::matrix(items.len(), encoder.dim(), data)?,
            fallback_tokens,
        })
    }
}

/// `pooled(item) · P`, a `1 x d` row.
pub fn encode_modality<T: Scalar>(
    item: &Item,
    encoder: &TokenEncoder,
    projection: &Tensor<T>,
) -> Result<Tensor<T>, ReprError> {
    let pooled = pooled_vector(item, encoder)?;
    let row = Tensor::from_f64(vec![1, pooled.len()], &pooled)?;
    Ok(row.matmul(projection)?)
}

/// `E <- (A + I) E`, applied `steps` times on the tape.
pub fn propagate_ids<T: Scalar>(tape: &mut Tape<T>, e_hat: Var, adjacency: Var, steps: usize) -> Result<Var, NumError> {
    let mut e = e_hat;
    for _ in 0..steps {
        let spread = tape.matmul(adjacency, e)?;
        e = tape.add(spread, e)?;
    }
    Ok(e)
}

/// Same as [`propagate_ids`] without recording gradients.
pub fn propagate_plain<T: Scalar>(
    e_hat: &Tensor<T>,
    adjacency: &Tensor<T>,
    steps: usize,
) -> Result<Tensor<T>, NumError> {
    let mut e = e_hat.clone();
    for _ in 0..steps {
        e = adjacency.matmul(&e)?.add(&e)?;
    }
    Ok(e)
}

/// Mean over non-exempt items of the co-occurrence constraint term.
///
/// Per item: the similarity to the mean of its positives over the
/// similarities to each of its negatives.
pub fn cooccurrence_loss<T: Scalar>(
    tape: &mut Tape<T>,
    embeddings: Var,
    sets: &[(ItemId, ConstraintSets)],
    mode: RatioMode,
    diag: &mut LossDiagnostics,
) -> Result<Var, NumError> {
    let mut terms = Vec::new();
    for (item, set) in sets {
        let ConstraintSets::Sets {
            positives, negatives, ..
        } = set
        else {
            continue;
        };
        if positives.is_empty() || negatives.is_empty() {
            continue;
        }
        let anchor = tape.gather_rows(embeddings, &[*item])?;
        let pos = tape.gather_rows(embeddings, positives)?;
        let pos_mean = tape.mean_axis(pos, 0)?;
        let num = tape.cosine(anchor, pos_mean)?;
        let mut den = Vec::with_capacity(negatives.len());
        for &k in negatives {
            let neg = tape.gather_rows(embeddings, &[k])?;
            den.push(tape.cosine(anchor, neg)?);
        }
        if let Some(t) = ratio_term(tape, num, &den, mode, diag)? {
            terms.push(t);
        }
    }
    if terms.is_empty() {
        return Ok(tape.constant(Tensor::scalar(T::zero())));
    }
    tape.mean_of(&terms)
}
