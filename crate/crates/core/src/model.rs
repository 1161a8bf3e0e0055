//! Inference on trained parameters: embedding tables, session scoring,
//! top-K recommendation and split evaluation.

use crate::corpus::{ItemId, Session};
use crate::evaluation::{disentanglement_score, mask_items, EvalReport, MetricAccumulator};
use crate::itemrepr::propagate_plain;
use crate::numcore::{Scalar, Tape, Tensor};
use crate::sessionmodel::{encode_sequence, score_plain, ModelError, ModelParams};
use crate::trainer::TrainConfig;

/// Propagated ID table and projected modality table, both `n x d`.
#[derive(Debug, Clone, PartialEq)]
pub struct Embeddings<T> {
    pub ids: Tensor<T>,
    pub modality: Tensor<T>,
}

impl<T: Scalar> Embeddings<T> {
    pub fn compute(
        params: &ModelParams<T>,
        adjacency: &Tensor<T>,
        modality_pooled: &Tensor<T>,
        steps: usize,
    ) -> Result<Self, ModelError> {
        Ok(Self {
            ids: propagate_plain(&params.id_table, adjacency, steps)?,
            modality: modality_pooled.matmul(&params.projection)?,
        })
    }

    pub fn n(&self) -> usize {
        self.ids.shape()[0]
    }
}

fn check_prefix(prefix: &[ItemId], n: usize) -> Result<(), ModelError> {
    if prefix.is_empty() {
        return Err(ModelError::EmptySession);
    }
    match prefix.iter().find(|&&i| i >= n) {
        Some(&item) => Err(ModelError::UnknownItem { item, n }),
        None => Ok(()),
    }
}

/// `(s_id, s_mo)` for a prefix, each `d x 1`.
pub fn session_vectors<T: Scalar>(
    params: &ModelParams<T>,
    emb: &Embeddings<T>,
    prefix: &[ItemId],
) -> Result<(Tensor<T>, Tensor<T>), ModelError> {
    check_prefix(prefix, emb.n())?;
    let mut tape = Tape::new();
    let id_enc = params.id_encoder.bind(&mut tape, false);
    let mo_enc = params.modality_encoder.bind(&mut tape, false);
    let id_seq = tape.constant(emb.ids.gather_rows(prefix)?);
    let mo_seq = tape.constant(emb.modality.gather_rows(prefix)?);
    let s_id = encode_sequence(&mut tape, id_seq, &id_enc)?;
    let s_mo = encode_sequence(&mut tape, mo_seq, &mo_enc)?;
    Ok((tape.value(s_id).clone(), tape.value(s_mo).clone()))
}

/// Scores for every catalog item.
pub fn score_session<T: Scalar>(
    params: &ModelParams<T>,
    emb: &Embeddings<T>,
    prefix: &[ItemId],
) -> Result<Vec<T>, ModelError> {
    let (s_id, s_mo) = session_vectors(params, emb, prefix)?;
    Ok(score_plain(&s_id, &s_mo, &emb.ids, &emb.modality)?)
}

/// Top-`k` items by score, ties broken by ascending id.
pub fn top_k<T: Scalar>(scores: &[T], k: usize) -> Vec<(ItemId, T)> {
    let mut order: Vec<ItemId> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    order.into_iter().take(k).map(|i| (i, scores[i])).collect()
}

/// Prec@K / MRR@K over sessions with at least two items.
pub fn evaluate_sessions<T: Scalar>(
    params: &ModelParams<T>,
    emb: &Embeddings<T>,
    sessions: &[Session],
    cutoffs: &[usize],
    exclude_prefix: bool,
) -> Result<Option<EvalReport>, ModelError> {
    let mut acc = MetricAccumulator::new(cutoffs).map_err(|e| ModelError::Shape(e.to_string()))?;
    for s in sessions {
        let Some(label) = s.label() else { continue };
        let prefix = s.prefix();
        let mut y = score_session(params, emb, prefix)?;
        if label >= y.len() {
            return Err(ModelError::UnknownItem {
                item: label,
                n: y.len(),
            });
        }
        if exclude_prefix {
            mask_items(&mut y, prefix, label);
        }
        acc.add(&y, label).map_err(|e| ModelError::Shape(e.to_string()))?;
    }
    if acc.is_empty() {
        return Ok(None);
    }
    Ok(Some(acc.finish().map_err(|e| ModelError::Shape(e.to_string()))?))
}

/// Parameters plus the frozen inputs needed to score sessions.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel<T> {
    pub config: TrainConfig,
    pub params: ModelParams<T>,
    /// Row-normalized co-occurrence matrix `n x n`.
    pub adjacency: Tensor<T>,
    /// Pooled token vectors `n x D_enc`.
    pub modality_pooled: Tensor<T>,
    pub epoch: usize,
    pub val_prec20: Option<f64>,
    pub val_mrr20: Option<f64>,
}

impl<T: Scalar> TrainedModel<T> {
    pub fn embeddings(&self) -> Result<Embeddings<T>, ModelError> {
        Embeddings::compute(
            &self.params,
            &self.adjacency,
            &self.modality_pooled,
            self.config.propagation_steps,
        )
    }

    pub fn n_items(&self) -> usize {
        self.params.shape.n_items
    }

    pub fn recommend(&self, emb: &Embeddings<T>, prefix: &[ItemId], k: usize) -> Result<Vec<(ItemId, T)>, ModelError> {
        Ok(top_k(&score_session(&self.params, emb, prefix)?, k))
    }

    /// Split metrics plus the separation score of the two tables.
    pub fn evaluate(
        &self,
        sessions: &[Session],
        cutoffs: &[usize],
        exclude_prefix: bool,
    ) -> Result<Option<EvalReport>, ModelError> {
        let emb = self.embeddings()?;
        let report = evaluate_sessions(&self.params, &emb, sessions, cutoffs, exclude_prefix)?;
        let score = disentanglement_score(&emb.ids, &emb.modality).map_err(|e| ModelError::Shape(e.to_string()))?;
        Ok(report.map(|mut r| {
            r.disentanglement_score = Some(score);
            r
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sessionmodel::ModelShape;
    use crate::testutil::{random_tensor, rng};

    fn setup() -> (ModelParams<f64>, Embeddings<f64>) {
        let shape = ModelShape {
            n_items: 6,
            dim: 4,
            encoder_dim: 3,
            max_len: 5,
            layers: 1,
            heads: 1,
        };
        let mut r = rng(1);
        let p = ModelParams::init(shape, &mut r).unwrap();
        let a = Tensor::zeros(&[6, 6]);
        let m = random_tensor(&mut r, &[6, 3]);
        let emb = Embeddings::compute(&p, &a, &m, 2).unwrap();
        (p, emb)
    }

    #[test]
    fn top_k_descending_with_id_ties() {
        let got = top_k(&[1.0, 3.0, 3.0, 2.0], 3);
        assert_eq!(got, vec![(1, 3.0), (2, 3.0), (3, 2.0)]);
        assert_eq!(top_k(&[1.0], 5).len(), 1);
    }

    #[test]
    fn scoring_matches_tape_forward() {
        let (p, emb) = setup();
        let y = score_session(&p, &emb, &[0, 3]).unwrap();
        let mut tape = Tape::new();
        let bound = p.bind(&mut tape, false);
        let e = tape.constant(emb.ids.clone());
        let m = tape.constant(emb.modality.clone());
        let st = crate::sessionmodel::encode_session(&mut tape, &bound, e, m, &[0, 3]).unwrap();
        let ys = crate::sessionmodel::score_all(&mut tape, st.s_id, st.s_mo, e, m).unwrap();
        assert_eq!(tape.value(ys).data(), y.as_slice());
    }

    #[test]
    fn bad_prefixes_are_rejected() {
        let (p, emb) = setup();
        assert!(matches!(score_session(&p, &emb, &[]), Err(ModelError::EmptySession)));
        assert!(matches!(
            score_session(&p, &emb, &[9]),
            Err(ModelError::UnknownItem { item: 9, .. })
        ));
    }

    #[test]
    fn evaluation_skips_single_item_sessions() {
        let (p, emb) = setup();
        let sessions = vec![
            Session {
                session_id: 1,
                items: vec![2],
                timestamp: 0,
            },
            Session {
                session_id: 2,
                items: vec![2, 4, 1],
                timestamp: 1,
            },
        ];
        let rep = evaluate_sessions(&p, &emb, &sessions, &[10, 20], false)
            .unwrap()
            .unwrap();
        assert_eq!(rep.n_sessions, 1);
        // 6 items, so every label is inside the top 10
        assert_eq!(rep.prec(10), 1.0);
        assert!(evaluate_sessions(&p, &emb, &sessions[..1], &[10], false)
            .unwrap()
            .is_none());
    }
}
