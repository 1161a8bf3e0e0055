//! Mini-batch multi-task training with validation-based model selection.

use std::collections::BTreeSet;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cooc::CoocGraph;
use crate::corpus::{ItemId, Session};
use crate::itemrepr::{cooccurrence_loss, propagate_ids, DEFAULT_ENCODER_DIM};
use crate::model::{evaluate_sessions, Embeddings, TrainedModel};
use crate::numcore::{NumError, Scalar, Tape, Tensor, Var};
use crate::ratio::{LossDiagnostics, RatioMode};
use crate::sessionmodel::{
    counterfactual_loss, encode_session, proxy_loss, rec_loss, score_all, BoundParams, ModelError, ModelParams,
    ModelShape, RecLossMode,
};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;
/// Window for the moving-average loss trend check.
pub const TREND_WINDOW: usize = 10;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    #[default]
    Adam,
    Sgd,
}

impl std::str::FromStr for OptimizerKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "adam" => Ok(Self::Adam),
            "sgd" => Ok(Self::Sgd),
            other => Err(format!("unknown optimizer `{other}` (expected adam|sgd)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Embedding size `d`.
    pub dim: usize,
    /// Propagation repetitions `c`.
    pub propagation_steps: usize,
    /// Positives and negatives per item, `l`.
    pub constraint_size: usize,
    /// Weight of the auxiliary losses.
    pub lambda: f64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub ratio_loss_mode: RatioMode,
    pub rec_loss_mode: RecLossMode,
    pub max_len: usize,
    pub encoder_dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub optimizer: OptimizerKind,
    /// Train on every proper prefix instead of only the full one.
    pub prefix_augmentation: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            dim: 100,
            propagation_steps: 2,
            constraint_size: 10,
            lambda: 0.01,
            batch_size: 50,
            learning_rate: 0.001,
            max_epochs: 300,
            patience: 20,
            seed: 42,
            ratio_loss_mode: RatioMode::Shifted,
            rec_loss_mode: RecLossMode::Bce,
            max_len: 50,
            encoder_dim: DEFAULT_ENCODER_DIM,
            layers: 1,
            heads: 1,
            optimizer: OptimizerKind::Adam,
            prefix_augmentation: false,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("loss diverged (non-finite) at epoch {epoch}, batch {batch}")]
    Divergence { epoch: usize, batch: usize },
    #[error("no training examples")]
    NoExamples,
    #[error("graph has {graph} items, modality table {modality}, expected {expected}")]
    CatalogMismatch {
        graph: usize,
        modality: usize,
        expected: usize,
    },
    #[error("i/o error on {path}: {message}")]
    Io { path: String, message: String },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Num(#[from] NumError),
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let fail = |m: String| Err(TrainError::Config(m));
        if !(1..=5).contains(&self.propagation_steps) {
            return fail(format!(
                "propagation_steps must be in 1..=5, got {}",
                self.propagation_steps
            ));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return fail(format!("lambda must be finite and non-negative, got {}", self.lambda));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if self.batch_size == 0 || self.constraint_size == 0 || self.max_epochs == 0 || self.patience == 0 {
            return fail("batch_size, constraint_size, max_epochs and patience must be positive".into());
        }
        Ok(())
    }

    pub fn shape(&self, n_items: usize) -> ModelShape {
        ModelShape {
            n_items,
            dim: self.dim,
            encoder_dim: self.encoder_dim,
            max_len: self.max_len,
            layers: self.layers,
            heads: self.heads,
        }
    }
}

/// Adam or plain SGD over a fixed list of tensors.
#[derive(Debug, Clone)]
pub struct Optimizer<T> {
    kind: OptimizerKind,
    lr: T,
    step: i32,
    first: Vec<Tensor<T>>,
    second: Vec<Tensor<T>>,
}

impl<T: Scalar> Optimizer<T> {
    pub fn new(kind: OptimizerKind, lr: f64) -> Self {
        Self {
            kind,
            lr: T::lit(lr),
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    /// One update; `grads[i]` belongs to `params[i]`, `None` means zero.
    pub fn step(&mut self, params: Vec<&mut Tensor<T>>, grads: &[Option<&Tensor<T>>]) {
        assert_eq!(params.len(), grads.len());
        self.step += 1;
        if self.first.is_empty() {
            self.first = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
            self.second = self.first.clone();
        }
        let (b1, b2) = (T::lit(ADAM_BETA1), T::lit(ADAM_BETA2));
        let c1 = T::one() - b1.powi(self.step);
        let c2 = T::one() - b2.powi(self.step);
        let eps = T::lit(ADAM_EPS);
        for (idx, (p, g)) in params.into_iter().zip(grads).enumerate() {
            let Some(g) = g else { continue };
            match self.kind {
                OptimizerKind::Sgd => {
                    for (w, &gi) in p.data_mut().iter_mut().zip(g.data()) {
                        *w = *w - self.lr * gi;
                    }
                }
                OptimizerKind::Adam => {
                    let m = self.first[idx].data_mut();
                    let v = self.second[idx].data_mut();
                    for (j, (w, &gi)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                        m[j] = b1 * m[j] + (T::one() - b1) * gi;
                        v[j] = b2 * v[j] + (T::one() - b2) * gi * gi;
                        let mh = m[j] / c1;
                        let vh = v[j] / c2;
                        *w = *w - self.lr * mh / (vh.sqrt() + eps);
                    }
                }
            }
        }
    }
}

/// Per-epoch means of the batch losses and the validation metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub l_rec: f64,
    pub l_co: f64,
    pub l_pro: f64,
    pub l_ct: f64,
    pub total: f64,
    pub val_prec20: Option<f64>,
    pub val_mrr20: Option<f64>,
}

/// Scalar values of one batch's losses.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchLosses {
    pub l_rec: f64,
    pub l_co: f64,
    pub l_pro: f64,
    pub l_ct: f64,
    pub total: f64,
}

/// Frozen inputs shared by every batch.
pub struct TrainInputs<'a, T> {
    pub graph: &'a CoocGraph<T>,
    /// Pooled token vectors `n x D_enc`.
    pub modality_pooled: &'a Tensor<T>,
    pub train: &'a [Session],
    pub validation: &'a [Session],
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    /// Parameters from the best validation epoch.
    pub best: TrainedModel<T>,
    /// Parameters after the final epoch.
    pub last: ModelParams<T>,
    pub epochs_run: usize,
    pub log: Vec<EpochLog>,
    pub diagnostics: LossDiagnostics,
}

impl<T> TrainOutcome<T> {
    /// True when a later moving-average window of the total loss exceeds the
    /// one before it.
    pub fn loss_trend_flagged(&self) -> bool {
        trend_flagged(&self.log.iter().map(|e| e.total).collect::<Vec<_>>())
    }
}

fn trend_flagged(totals: &[f64]) -> bool {
    let w = TREND_WINDOW;
    if totals.len() < 2 * w {
        return false;
    }
    let ma: Vec<f64> = totals.windows(w).map(|x| x.iter().sum::<f64>() / w as f64).collect();
    ma.iter().zip(ma.iter().skip(w)).any(|(a, b)| b > a)
}

/// `(prefix, label)` pairs drawn from sessions of length two or more.
pub fn training_examples(sessions: &[Session], augment: bool) -> Vec<(Vec<ItemId>, ItemId)> {
    let mut out = Vec::new();
    for s in sessions {
        if s.items.len() < 2 {
            continue;
        }
        if augment {
            for end in 1..s.items.len() {
                out.push((s.items[..end].to_vec(), s.items[end]));
            }
        } else {
            out.push((s.prefix().to_vec(), s.items[s.items.len() - 1]));
        }
    }
    out
}

/// Builds the batch objective on `tape`; returns the total-loss node and the
/// individual values.
#[allow(clippy::too_many_arguments)]
pub fn batch_objective<T: Scalar>(
    tape: &mut Tape<T>,
    bound: &BoundParams,
    config: &TrainConfig,
    graph: &CoocGraph<T>,
    modality_pooled: &Tensor<T>,
    batch: &[(Vec<ItemId>, ItemId)],
    rng: &mut ChaCha8Rng,
    diag: &mut LossDiagnostics,
) -> Result<(Var, BatchLosses), TrainError> {
    let adjacency = tape.constant(graph.matrix().clone());
    let pooled = tape.constant(modality_pooled.clone());
    let e = propagate_ids(tape, bound.id_table, adjacency, config.propagation_steps)?;
    let e_mo = tape.matmul(pooled, bound.projection)?;

    let mode = config.ratio_loss_mode;
    let mut recs = Vec::with_capacity(batch.len());
    let mut pros = Vec::with_capacity(batch.len());
    let mut cts = Vec::with_capacity(batch.len());
    for (prefix, label) in batch {
        let st = encode_session(tape, bound, e, e_mo, prefix)?;
        let y = score_all(tape, st.s_id, st.s_mo, e, e_mo)?;
        recs.push(rec_loss(tape, y, *label, config.rec_loss_mode)?);
        pros.push(proxy_loss(tape, &st, &bound.proxy, mode, diag)?);
        let label_id = tape.gather_rows(e, &[*label])?;
        let label_mo = tape.gather_rows(e_mo, &[*label])?;
        let in_ns = graph.label_in_union(prefix, *label);
        cts.push(counterfactual_loss(
            tape, st.s_id, st.s_mo, label_id, label_mo, in_ns, mode, diag,
        )?);
    }
    let items: BTreeSet<ItemId> = batch.iter().flat_map(|(p, l)| p.iter().copied().chain([*l])).collect();
    let sets: Vec<_> = items
        .into_iter()
        .map(|i| (i, graph.sample_constraint_sets(i, config.constraint_size, rng)))
        .collect();
    let l_co = cooccurrence_loss(tape, e, &sets, mode, diag)?;
    let l_rec = tape.mean_of(&recs)?;
    let l_pro = tape.mean_of(&pros)?;
    let l_ct = tape.mean_of(&cts)?;
    let total = if config.lambda == 0.0 {
        l_rec
    } else {
        let aux = tape.add_all(&[l_co, l_pro, l_ct])?;
        let aux = tape.scale(aux, T::lit(config.lambda));
        tape.add(l_rec, aux)?
    };
    let v = |tape: &Tape<T>, x: Var| tape.scalar_value(x).map(|s| s.as_f64());
    let losses = BatchLosses {
        l_rec: v(tape, l_rec)?,
        l_co: v(tape, l_co)?,
        l_pro: v(tape, l_pro)?,
        l_ct: v(tape, l_ct)?,
        total: v(tape, total)?,
    };
    Ok((total, losses))
}

/// Runs one optimizer step on a batch and returns its losses.
#[allow(clippy::too_many_arguments)]
pub fn train_step<T: Scalar>(
    params: &mut ModelParams<T>,
    optimizer: &mut Optimizer<T>,
    config: &TrainConfig,
    graph: &CoocGraph<T>,
    modality_pooled: &Tensor<T>,
    batch: &[(Vec<ItemId>, ItemId)],
    rng: &mut ChaCha8Rng,
    diag: &mut LossDiagnostics,
) -> Result<BatchLosses, TrainError> {
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape, true);
    let (total, losses) = batch_objective(&mut tape, &bound, config, graph, modality_pooled, batch, rng, diag)?;
    if !losses.total.is_finite() {
        return Ok(losses);
    }
    tape.backward(total)?;
    let grads: Vec<Option<&Tensor<T>>> = bound.vars().into_iter().map(|v| tape.grad(v)).collect();
    optimizer.step(params.tensors_mut(), &grads);
    Ok(losses)
}

/// Trains from a fresh seeded initialization.
pub fn train<T: Scalar>(config: &TrainConfig, inputs: &TrainInputs<'_, T>) -> Result<TrainOutcome<T>, TrainError> {
    config.validate()?;
    let n = inputs.graph.n();
    let m_rows = inputs.modality_pooled.shape()[0];
    if m_rows != n || inputs.modality_pooled.shape()[1] != config.encoder_dim {
        return Err(TrainError::CatalogMismatch {
            graph: n,
            modality: m_rows,
            expected: n,
        });
    }
    let mut examples = training_examples(inputs.train, config.prefix_augmentation);
    if examples.is_empty() {
        return Err(TrainError::NoExamples);
    }
    if let Some(&bad) = examples
        .iter()
        .flat_map(|(p, l)| p.iter().chain([l]))
        .find(|&&i| i >= n)
    {
        return Err(ModelError::UnknownItem { item: bad, n }.into());
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params = ModelParams::init(config.shape(n), &mut rng)?;
    let mut optimizer = Optimizer::new(config.optimizer, config.learning_rate);
    let mut diag = LossDiagnostics::default();
    let mut log = Vec::new();
    let mut best: Option<(f64, usize, ModelParams<T>, Option<f64>)> = None;
    let mut since_best = 0;
    log::info!(
        "training on {} examples, {} items, {} validation sessions",
        examples.len(),
        n,
        inputs.validation.len()
    );

    for epoch in 1..=config.max_epochs {
        examples.shuffle(&mut rng);
        let mut sums = [0.0; 5];
        let mut batches = 0;
        for (b, batch) in examples.chunks(config.batch_size).enumerate() {
            let l = train_step(
                &mut params,
                &mut optimizer,
                config,
                inputs.graph,
                inputs.modality_pooled,
                batch,
                &mut rng,
                &mut diag,
            )?;
            if !l.total.is_finite() {
                return Err(TrainError::Divergence { epoch, batch: b + 1 });
            }
            for (s, x) in sums.iter_mut().zip([l.l_rec, l.l_co, l.l_pro, l.l_ct, l.total]) {
                *s += x;
            }
            batches += 1;
        }
        let mean = |k: usize| sums[k] / batches as f64;
        let emb = Embeddings::compute(
            &params,
            inputs.graph.matrix(),
            inputs.modality_pooled,
            config.propagation_steps,
        )?;
        let val = evaluate_sessions(&params, &emb, inputs.validation, &[20], false)?;
        let (vp, vm) = match &val {
            Some(r) => (Some(r.prec(20)), Some(r.mrr(20))),
            None => (None, None),
        };
        let entry = EpochLog {
            epoch,
            l_rec: mean(0),
            l_co: mean(1),
            l_pro: mean(2),
            l_ct: mean(3),
            total: mean(4),
            val_prec20: vp,
            val_mrr20: vm,
        };
        log::debug!("epoch {epoch}: total {:.6} val prec@20 {:?}", entry.total, vp);
        log.push(entry);

        // without validation sessions the latest epoch is always kept
        let score = vp.unwrap_or(f64::INFINITY);
        let improved = match &best {
            None => true,
            Some((b, ..)) => score > *b || vp.is_none(),
        };
        if improved {
            best = Some((score, epoch, params.clone(), vm));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.patience {
                log::info!(
                    "early stop at epoch {epoch}; best epoch {}",
                    best.as_ref().map_or(0, |b| b.1)
                );
                break;
            }
        }
    }

    if diag.skipped_terms > 0 {
        log::warn!(
            "{} literal-mode loss terms skipped on near-zero denominators",
            diag.skipped_terms
        );
    }
    let epochs_run = log.len();
    let (score, best_epoch, best_params, best_mrr) = best.expect("at least one epoch ran");
    let outcome = TrainOutcome {
        best: TrainedModel {
            config: config.clone(),
            params: best_params,
            adjacency: inputs.graph.matrix().clone(),
            modality_pooled: inputs.modality_pooled.clone(),
            epoch: best_epoch,
            val_prec20: score.is_finite().then_some(score),
            val_mrr20: best_mrr,
        },
        last: params,
        epochs_run,
        log,
        diagnostics: diag,
    };
    if outcome.loss_trend_flagged() {
        log::warn!("moving-average training loss increased between {TREND_WINDOW}-epoch windows");
    }
    Ok(outcome)
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

/// One CSV row per epoch.
pub fn write_train_log(path: &Path, log: &[EpochLog]) -> Result<(), TrainError> {
    let io = |e: &dyn std::fmt::Display| TrainError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    };
    let mut w = csv::Writer::from_path(path).map_err(|e| io(&e))?;
    w.write_record([
        "epoch",
        "l_rec",
        "l_co",
        "l_pro",
        "l_ct",
        "total",
        "val_prec20",
        "val_mrr20",
    ])
    .map_err(|e| io(&e))?;
    for e in log {
        w.write_record([
            e.epoch.to_string(),
            e.l_rec.to_string(),
            e.l_co.to_string(),
            e.l_pro.to_string(),
            e.l_ct.to_string(),
            e.total.to_string(),
            fmt_opt(e.val_prec20),
            fmt_opt(e.val_mrr20),
        ])
        .map_err(|e| io(&e))?;
    }
    w.flush().map_err(|e| io(&e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cooc::count_prefix_pairs;
    use crate::testutil::{max_rel_err, numeric_grads, random_tensor, rng};

    fn session(id: u64, items: &[ItemId]) -> Session {
        Session {
            session_id: id,
            items: items.to_vec(),
            timestamp: id as i64,
        }
    }

    fn toy() -> (Vec<Session>, Vec<Session>, CoocGraph<f64>, Tensor<f64>) {
        let train: Vec<Session> = (0..24)
            .map(|k| {
                let a = k % 6;
                session(k as u64, &[a, (a + 1) % 6, (a + 2) % 6])
            })
            .collect();
        let valid = vec![session(100, &[0, 1, 2]), session(101, &[3, 4, 5])];
        let graph = CoocGraph::build(count_prefix_pairs(&train, 6), 6).unwrap();
        let m = random_tensor(&mut rng(3), &[6, 4]);
        (train, valid, graph, m)
    }

    fn small_config() -> TrainConfig {
        TrainConfig {
            dim: 8,
            encoder_dim: 4,
            constraint_size: 2,
            batch_size: 8,
            learning_rate: 0.01,
            max_epochs: 5,
            max_len: 5,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn defaults() {
        let c = TrainConfig::default();
        assert_eq!((c.dim, c.propagation_steps, c.constraint_size), (100, 2, 10));
        assert_eq!((c.batch_size, c.learning_rate, c.lambda), (50, 0.001, 0.01));
        assert_eq!((c.max_epochs, c.patience, c.max_len), (300, 20, 50));
        c.validate().unwrap();
        let parsed: TrainConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(parsed, c);
        assert!(serde_json::from_str::<TrainConfig>(r#"{"dimm": 3}"#).is_err());
    }

    #[test]
    fn config_validation() {
        for bad in [
            TrainConfig {
                propagation_steps: 0,
                ..Default::default()
            },
            TrainConfig {
                propagation_steps: 6,
                ..Default::default()
            },
            TrainConfig {
                lambda: -0.1,
                ..Default::default()
            },
            TrainConfig {
                lambda: f64::NAN,
                ..Default::default()
            },
            TrainConfig {
                batch_size: 0,
                ..Default::default()
            },
        ] {
            assert!(matches!(bad.validate(), Err(TrainError::Config(_))));
        }
    }

    #[test]
    fn examples_full_prefix_and_augmented() {
        let s = [session(1, &[4, 5, 6]), session(2, &[1])];
        assert_eq!(training_examples(&s, false), vec![(vec![4, 5], 6)]);
        assert_eq!(training_examples(&s, true), vec![(vec![4], 5), (vec![4, 5], 6)]);
    }

    fn losses_for(config: &TrainConfig) -> BatchLosses {
        let (train, _, graph, m) = toy();
        let mut r = ChaCha8Rng::seed_from_u64(config.seed);
        let p = ModelParams::init(config.shape(6), &mut r).unwrap();
        let mut tape = Tape::new();
        let bound = p.bind(&mut tape, true);
        let ex = training_examples(&train, false);
        batch_objective(
            &mut tape,
            &bound,
            config,
            &graph,
            &m,
            &ex[..8],
            &mut r,
            &mut LossDiagnostics::default(),
        )
        .unwrap()
        .1
    }

    #[test]
    fn zero_lambda_total_is_rec_loss() {
        let l = losses_for(&TrainConfig {
            lambda: 0.0,
            ..small_config()
        });
        assert_eq!(l.total, l.l_rec);
        assert!(l.l_co != 0.0 && l.l_pro != 0.0 && l.l_ct != 0.0);
        let l = losses_for(&small_config());
        let want = l.l_rec + 0.01 * (l.l_co + l.l_pro + l.l_ct);
        assert!((l.total - want).abs() < 1e-12);
    }

    #[test]
    fn full_objective_gradients_match_finite_differences() {
        let (train, _, graph, m) = toy();
        let config = TrainConfig {
            lambda: 0.5,
            ..small_config()
        };
        let ex = training_examples(&train, false);
        let batch = &ex[..4];
        let p = ModelParams::<f64>::init(config.shape(6), &mut rng(5)).unwrap();
        let tensors: Vec<Tensor<f64>> = p.named().into_iter().map(|(_, t)| t.clone()).collect();
        let eval = |xs: &[Tensor<f64>]| {
            let mut q = p.clone();
            for (slot, x) in q.tensors_mut().into_iter().zip(xs) {
                *slot = x.clone();
            }
            let mut tape = Tape::new();
            let bound = q.bind(&mut tape, true);
            let mut r = rng(77);
            batch_objective(
                &mut tape,
                &bound,
                &config,
                &graph,
                &m,
                batch,
                &mut r,
                &mut LossDiagnostics::default(),
            )
            .unwrap()
            .1
            .total
        };
        let mut tape = Tape::new();
        let bound = p.bind(&mut tape, true);
        let mut r = rng(77);
        let (total, _) = batch_objective(
            &mut tape,
            &bound,
            &config,
            &graph,
            &m,
            batch,
            &mut r,
            &mut LossDiagnostics::default(),
        )
        .unwrap();
        tape.backward(total).unwrap();
        let analytic: Vec<Vec<f64>> = bound
            .vars()
            .into_iter()
            .map(|v| {
                tape.grad(v)
                    .map(|g| g.to_f64_vec())
                    .unwrap_or_else(|| vec![0.0; tape.value(v).numel()])
            })
            .collect();
        let numeric = numeric_grads(&tensors, eval);
        assert!(max_rel_err(&analytic, &numeric) < 1e-6);
    }

    #[test]
    fn one_step_moves_every_block() {
        let (train, _, graph, m) = toy();
        let config = small_config();
        let mut r = ChaCha8Rng::seed_from_u64(1);
        let mut p = ModelParams::<f64>::init(config.shape(6), &mut r).unwrap();
        let before = p.clone();
        let mut opt = Optimizer::new(OptimizerKind::Adam, config.learning_rate);
        let ex = training_examples(&train, false);
        train_step(
            &mut p,
            &mut opt,
            &config,
            &graph,
            &m,
            &ex[..8],
            &mut r,
            &mut LossDiagnostics::default(),
        )
        .unwrap();
        for ((name, a), (_, b)) in before.named().into_iter().zip(p.named()) {
            if name.ends_with("positions") {
                // only rows up to the longest prefix receive gradient
                assert_ne!(a.row(0), b.row(0), "{name}");
                continue;
            }
            let moved: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x - y).powi(2)).sum();
            assert!(moved > 0.0, "{name} did not move");
        }
    }

    #[test]
    fn first_epoch_is_bitwise_reproducible() {
        let (train, valid, graph, m) = toy();
        let config = TrainConfig {
            max_epochs: 1,
            ..small_config()
        };
        let inputs = TrainInputs {
            graph: &graph,
            modality_pooled: &m,
            train: &train,
            validation: &valid,
        };
        let a = super::train(&config, &inputs).unwrap();
        let b = super::train(&config, &inputs).unwrap();
        assert_eq!(a.log[0].total.to_bits(), b.log[0].total.to_bits());
        assert_eq!(a.last, b.last);
    }

    #[test]
    fn best_params_come_from_best_epoch() {
        let (train, valid, graph, m) = toy();
        let config = TrainConfig {
            max_epochs: 30,
            patience: 3,
            ..small_config()
        };
        let inputs = TrainInputs {
            graph: &graph,
            modality_pooled: &m,
            train: &train,
            validation: &valid,
        };
        let out = super::train(&config, &inputs).unwrap();
        let best_epoch = out.best.epoch;
        assert!(best_epoch <= out.epochs_run);
        let best_val = out.log[best_epoch - 1].val_prec20.unwrap();
        assert!(out.log.iter().all(|e| e.val_prec20.unwrap() <= best_val));
        // the first epoch reaching the best score is kept
        assert!(out.log[..best_epoch - 1]
            .iter()
            .all(|e| e.val_prec20.unwrap() < best_val));
        if out.epochs_run < config.max_epochs {
            assert_eq!(out.epochs_run, best_epoch + config.patience);
        }
        let replay = super::train(
            &TrainConfig {
                max_epochs: best_epoch,
                ..config.clone()
            },
            &inputs,
        )
        .unwrap();
        assert_eq!(replay.last, out.best.params);
    }

    #[test]
    fn sgd_step_is_plain_gradient_descent() {
        let mut p = Tensor::<f64>::column(vec![1.0, 2.0]);
        let g = Tensor::column(vec![0.5, -1.0]);
        let mut opt = Optimizer::new(OptimizerKind::Sgd, 0.1);
        opt.step(vec![&mut p], &[Some(&g)]);
        assert_eq!(p.data(), &[1.0 - 0.05, 2.0 + 0.1]);
    }

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        let mut p = Tensor::<f64>::column(vec![1.0, 2.0]);
        let g = Tensor::column(vec![0.5, -3.0]);
        let mut opt = Optimizer::new(OptimizerKind::Adam, 0.01);
        opt.step(vec![&mut p], &[Some(&g)]);
        assert!((p.data()[0] - 0.99).abs() < 1e-9);
        assert!((p.data()[1] - 2.01).abs() < 1e-9);
    }

    #[test]
    fn divergence_is_reported() {
        let (train, valid, graph, m) = toy();
        let nan_m = m.map(|_| f64::NAN);
        let inputs = TrainInputs {
            graph: &graph,
            modality_pooled: &nan_m,
            train: &train,
            validation: &valid,
        };
        let err = super::train(&small_config(), &inputs).unwrap_err();
        assert!(matches!(err, TrainError::Divergence { epoch: 1, batch: 1 }));
    }

    #[test]
    fn trend_check() {
        let falling: Vec<f64> = (0..40).map(|i| 10.0 - i as f64 * 0.1).collect();
        assert!(!trend_flagged(&falling));
        let mut rising = falling.clone();
        rising.extend((0..20).map(|i| 10.0 + i as f64));
        assert!(trend_flagged(&rising));
    }

    #[test]
    fn log_csv_columns() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.csv");
        let e = EpochLog {
            epoch: 1,
            l_rec: 1.5,
            l_co: -0.5,
            l_pro: -1.0,
            l_ct: -0.25,
            total: 1.0,
            val_prec20: Some(0.5),
            val_mrr20: None,
        };
        write_train_log(&path, &[e]).unwrap();
        let text = std::fs::read_to_string(path).unwrap();
        assert_eq!(
            text,
            "epoch,l_rec,l_co,l_pro,l_ct,total,val_prec20,val_mrr20\n1,1.5,-0.5,-1,-0.25,1,0.5,\n"
        );
    }
}
