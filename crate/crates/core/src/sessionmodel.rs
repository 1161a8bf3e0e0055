//! Session encoding into separate co-occurrence and modality cause vectors,
//! the proxy and counterfactual disentanglement losses, additive scoring and
//! the recommendation loss.
//!
//! Session vectors are `d x 1` columns; item tables are `n x d` with one row
//! per item.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::ItemId;
use crate::numcore::{NumError, Scalar, Tape, Tensor, Var};
use crate::ratio::{ratio_term, LossDiagnostics, RatioMode};

/// Probability clamp for the binary cross-entropy.
pub const PROB_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum RecLossMode {
    /// Full-catalog binary cross-entropy on `sigmoid(y)`.
    #[default]
    #[serde(rename = "bce")]
    Bce,
    #[serde(rename = "softmax-ce")]
    SoftmaxCe,
}

impl std::str::FromStr for RecLossMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "bce" => Ok(Self::Bce),
            "softmax-ce" => Ok(Self::SoftmaxCe),
            other => Err(format!("unknown rec loss mode `{other}` (expected bce|softmax-ce)")),
        }
    }
}

/// Architecture sizes shared by every parameter block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelShape {
    pub n_items: usize,
    pub dim: usize,
    pub encoder_dim: usize,
    pub max_len: usize,
    pub layers: usize,
    pub heads: usize,
}

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("invalid model shape: {0}")]
    Shape(String),
    #[error("checkpoint is missing tensor `{0}`")]
    MissingTensor(String),
    #[error("tensor `{name}` has shape {found:?}, expected {expected:?}")]
    TensorShape {
        name: String,
        found: Vec<usize>,
        expected: Vec<usize>,
    },
    #[error("empty session")]
    EmptySession,
    #[error("item {item} is outside the catalog of {n} items")]
    UnknownItem { item: ItemId, n: usize },
    #[error(transparent)]
    Num(#[from] NumError),
}

impl ModelShape {
    pub fn validate(&self) -> Result<(), ModelError> {
        let fail = |m: &str| Err(ModelError::Shape(m.to_string()));
        if self.n_items == 0 || self.dim == 0 || self.encoder_dim == 0 || self.max_len == 0 {
            return fail("n_items, dim, encoder_dim and max_len must be positive");
        }
        if self.layers == 0 || self.heads == 0 {
            return fail("layers and heads must be positive");
        }
        if !self.dim.is_multiple_of(self.heads) {
            return Err(ModelError::Shape(format!(
                "dim {} is not divisible by heads {}",
                self.dim, self.heads
            )));
        }
        Ok(())
    }
}

/// One self-attention layer: query/key/value/output projections, each `d x d`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionLayer<T> {
    pub query: Tensor<T>,
    pub key: Tensor<T>,
    pub value: Tensor<T>,
    pub output: Tensor<T>,
}

/// A self-attention encoder with its own learned position table.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams<T> {
    /// `max_len x d`
    pub positions: Tensor<T>,
    pub layers: Vec<AttentionLayer<T>>,
    pub heads: usize,
}

/// All trainable tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    pub shape: ModelShape,
    /// Raw ID table `n x d`, before propagation.
    pub id_table: Tensor<T>,
    /// Modality projection `D_enc x d`.
    pub projection: Tensor<T>,
    pub id_encoder: AttentionParams<T>,
    pub modality_encoder: AttentionParams<T>,
    /// Proxy projections `W1..W8`, each `d x d`.
    pub proxy: [Tensor<T>; 8],
}

fn uniform<T: Scalar>(rng: &mut impl Rng, shape: &[usize], bound: f64) -> Tensor<T> {
    let n = shape.iter().product();
    let data = (0..n).map(|_| T::lit(rng.random_range(-bound..bound))).collect();
    Tensor::new(shape.to_vec(), data).expect("shape product matches")
}

impl<T: Scalar> AttentionParams<T> {
    fn init(rng: &mut impl Rng, shape: &ModelShape, bound: f64) -> Self {
        let d = shape.dim;
        Self {
            positions: uniform(rng, &[shape.max_len, d], bound),
            layers: (0..shape.layers)
                .map(|_| AttentionLayer {
                    query: uniform(rng, &[d, d], bound),
                    key: uniform(rng, &[d, d], bound),
                    value: uniform(rng, &[d, d], bound),
                    output: uniform(rng, &[d, d], bound),
                })
                .collect(),
            heads: shape.heads,
        }
    }

    fn zeros(shape: &ModelShape) -> Self {
        let d = shape.dim;
        let z = || Tensor::zeros(&[d, d]);
        Self {
            positions: Tensor::zeros(&[shape.max_len, d]),
            layers: (0..shape.layers)
                .map(|_| AttentionLayer {
                    query: z(),
                    key: z(),
                    value: z(),
                    output: z(),
                })
                .collect(),
            heads: shape.heads,
        }
    }

    /// Identity projections and a zero position table.
    pub fn identity(dim: usize, max_len: usize) -> Self {
        let eye = Tensor::identity(dim);
        Self {
            positions: Tensor::zeros(&[max_len, dim]),
            layers: vec![AttentionLayer {
                query: eye.clone(),
                key: eye.clone(),
                value: eye.clone(),
                output: eye,
            }],
            heads: 1,
        }
    }

    fn named<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor<T>)>) {
        out.push((format!("{prefix}.positions"), &self.positions));
        for (i, l) in self.layers.iter().enumerate() {
            out.push((format!("{prefix}.layer{i}.query"), &l.query));
            out.push((format!("{prefix}.layer{i}.key"), &l.key));
            out.push((format!("{prefix}.layer{i}.value"), &l.value));
            out.push((format!("{prefix}.layer{i}.output"), &l.output));
        }
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = vec![&mut self.positions];
        for l in &mut self.layers {
            out.extend([&mut l.query, &mut l.key, &mut l.value, &mut l.output]);
        }
        out
    }

    /// Registers the tensors on a tape.
    pub fn bind(&self, tape: &mut Tape<T>, trainable: bool) -> BoundAttention {
        let mut put = |t: &Tensor<T>| {
            if trainable {
                tape.param(t.clone())
            } else {
                tape.constant(t.clone())
            }
        };
        BoundAttention {
            positions: put(&self.positions),
            layers: self
                .layers
                .iter()
                .map(|l| [put(&l.query), put(&l.key), put(&l.value), put(&l.output)])
                .collect(),
            heads: self.heads,
            max_len: self.positions.shape()[0],
        }
    }
}

/// Tape handles for one attention encoder.
#[derive(Debug, Clone)]
pub struct BoundAttention {
    pub positions: Var,
    /// `[query, key, value, output]` per layer.
    pub layers: Vec<[Var; 4]>,
    pub heads: usize,
    pub max_len: usize,
}

impl BoundAttention {
    fn vars(&self) -> Vec<Var> {
        let mut out = vec![self.positions];
        for l in &self.layers {
            out.extend_from_slice(l);
        }
        out
    }
}

/// Tape handles for every trainable tensor, in [`ModelParams::named`] order.
#[derive(Debug, Clone)]
pub struct BoundParams {
    pub id_table: Var,
    pub projection: Var,
    pub id_encoder: BoundAttention,
    pub modality_encoder: BoundAttention,
    pub proxy: [Var; 8],
}

impl BoundParams {
    pub fn vars(&self) -> Vec<Var> {
        let mut out = vec![self.id_table, self.projection];
        out.extend(self.id_encoder.vars());
        out.extend(self.modality_encoder.vars());
        out.extend_from_slice(&self.proxy);
        out
    }
}

impl<T: Scalar> ModelParams<T> {
    /// Uniform(-1/sqrt(d), 1/sqrt(d)) initialization of every block.
    pub fn init(shape: ModelShape, rng: &mut impl Rng) -> Result<Self, ModelError> {
        shape.validate()?;
        let d = shape.dim;
        let bound = 1.0 / (d as f64).sqrt();
        let id_table = uniform(rng, &[shape.n_items, d], bound);
        let projection = uniform(rng, &[shape.encoder_dim, d], bound);
        let id_encoder = AttentionParams::init(rng, &shape, bound);
        let modality_encoder = AttentionParams::init(rng, &shape, bound);
        let proxy = std::array::from_fn(|_| uniform(rng, &[d, d], bound));
        Ok(Self {
            shape,
            id_table,
            projection,
            id_encoder,
            modality_encoder,
            proxy,
        })
    }

    /// Every trainable tensor with a stable name, in a fixed order.
    pub fn named(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = vec![
            ("id_table".to_string(), &self.id_table),
            ("projection".to_string(), &self.projection),
        ];
        self.id_encoder.named("id_encoder", &mut out);
        self.modality_encoder.named("modality_encoder", &mut out);
        for (k, w) in self.proxy.iter().enumerate() {
            out.push((format!("proxy.w{}", k + 1), w));
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = vec![&mut self.id_table, &mut self.projection];
        out.extend(self.id_encoder.tensors_mut());
        out.extend(self.modality_encoder.tensors_mut());
        out.extend(self.proxy.iter_mut());
        out
    }

    /// Rebuilds parameters from named tensors, checking every shape.
    pub fn from_named(
        shape: ModelShape,
        mut lookup: impl FnMut(&str) -> Option<Tensor<T>>,
    ) -> Result<Self, ModelError> {
        shape.validate()?;
        let mut template = Self {
            shape,
            id_table: Tensor::zeros(&[shape.n_items, shape.dim]),
            projection: Tensor::zeros(&[shape.encoder_dim, shape.dim]),
            id_encoder: AttentionParams::zeros(&shape),
            modality_encoder: AttentionParams::zeros(&shape),
            proxy: std::array::from_fn(|_| Tensor::zeros(&[shape.dim, shape.dim])),
        };
        let names: Vec<String> = template.named().into_iter().map(|(n, _)| n).collect();
        for (name, slot) in names.into_iter().zip(template.tensors_mut()) {
            let t = lookup(&name).ok_or_else(|| ModelError::MissingTensor(name.clone()))?;
            if t.shape() != slot.shape() {
                return Err(ModelError::TensorShape {
                    name,
                    found: t.shape().to_vec(),
                    expected: slot.shape().to_vec(),
                });
            }
            *slot = t;
        }
        Ok(template)
    }

    pub fn bind(&self, tape: &mut Tape<T>, trainable: bool) -> BoundParams {
        let mut put = |t: &Tensor<T>| {
            if trainable {
                tape.param(t.clone())
            } else {
                tape.constant(t.clone())
            }
        };
        let id_table = put(&self.id_table);
        let projection = put(&self.projection);
        let id_encoder = self.id_encoder.bind(tape, trainable);
        let modality_encoder = self.modality_encoder.bind(tape, trainable);
        let proxy = std::array::from_fn(|k| {
            if trainable {
                tape.param(self.proxy[k].clone())
            } else {
                tape.constant(self.proxy[k].clone())
            }
        });
        BoundParams {
            id_table,
            projection,
            id_encoder,
            modality_encoder,
            proxy,
        }
    }
}

/// Self-attention over a `m x d` sequence; returns the last position as `d x 1`.
///
/// Adds learned positions, then per layer applies scaled dot-product
/// attention, the output projection and a residual averaged with the input.
/// Sequences longer than the position table keep their most recent rows.
pub fn encode_sequence<T: Scalar>(tape: &mut Tape<T>, seq: Var, params: &BoundAttention) -> Result<Var, NumError> {
    let (mut m, d) = tape.value(seq).dims2("encode_sequence")?;
    let mut x = seq;
    if m > params.max_len {
        log::debug!("truncating session of length {m} to the last {} items", params.max_len);
        let keep: Vec<usize> = (m - params.max_len..m).collect();
        x = tape.gather_rows(x, &keep)?;
        m = params.max_len;
    }
    let pos_rows: Vec<usize> = (0..m).collect();
    let pos = tape.gather_rows(params.positions, &pos_rows)?;
    x = tape.add(x, pos)?;
    let head_dim = d / params.heads;
    let scale = T::one() / T::lit(head_dim as f64).sqrt();
    let half = T::lit(0.5);
    for &[wq, wk, wv, wo] in &params.layers {
        let q = tape.matmul(x, wq)?;
        let k = tape.matmul(x, wk)?;
        let v = tape.matmul(x, wv)?;
        let mut heads = Vec::with_capacity(params.heads);
        for h in 0..params.heads {
            let (qh, kh, vh) = if params.heads == 1 {
                (q, k, v)
            } else {
                let (a, b) = (h * head_dim, (h + 1) * head_dim);
                (
                    tape.slice_cols(q, a, b)?,
                    tape.slice_cols(k, a, b)?,
                    tape.slice_cols(v, a, b)?,
                )
            };
            let kt = tape.transpose(kh)?;
            let scores = tape.matmul(qh, kt)?;
            let scores = tape.scale(scores, scale);
            let weights = tape.softmax_rows(scores)?;
            heads.push(tape.matmul(weights, vh)?);
        }
        let attended = if heads.len() == 1 {
            heads[0]
        } else {
            tape.concat(&heads, 1)?
        };
        let projected = tape.matmul(attended, wo)?;
        let summed = tape.add(projected, x)?;
        x = tape.scale(summed, half);
    }
    let last = tape.gather_rows(x, &[m - 1])?;
    tape.transpose(last)
}

/// Parameter-free mean of a `m x d` sequence, as `d x 1`.
pub fn proxy<T: Scalar>(tape: &mut Tape<T>, seq: Var) -> Result<Var, NumError> {
    let mean = tape.mean_axis(seq, 0)?;
    tape.transpose(mean)
}

/// `(proxy(id_seq), proxy(mo_seq))`.
pub fn proxies<T: Scalar>(tape: &mut Tape<T>, id_seq: Var, mo_seq: Var) -> Result<(Var, Var), NumError> {
    Ok((proxy(tape, id_seq)?, proxy(tape, mo_seq)?))
}

/// Session-level cause vectors and their proxies.
#[derive(Debug, Clone, Copy)]
pub struct SessionState {
    pub s_id: Var,
    pub s_mo: Var,
    pub proxy_id: Var,
    pub proxy_mo: Var,
}

/// Encodes a session prefix from the propagated ID table and the modality table.
pub fn encode_session<T: Scalar>(
    tape: &mut Tape<T>,
    params: &BoundParams,
    id_embeddings: Var,
    modality_embeddings: Var,
    prefix: &[ItemId],
) -> Result<SessionState, NumError> {
    let id_seq = tape.gather_rows(id_embeddings, prefix)?;
    let mo_seq = tape.gather_rows(modality_embeddings, prefix)?;
    let s_id = encode_sequence(tape, id_seq, &params.id_encoder)?;
    let s_mo = encode_sequence(tape, mo_seq, &params.modality_encoder)?;
    let (proxy_id, proxy_mo) = proxies(tape, id_seq, mo_seq)?;
    Ok(SessionState {
        s_id,
        s_mo,
        proxy_id,
        proxy_mo,
    })
}

fn zero<T: Scalar>(tape: &mut Tape<T>) -> Var {
    tape.constant(Tensor::scalar(T::zero()))
}

/// Two ratio terms: each cause is pulled toward its own proxy and pushed
/// away from the other cause, each side seen through its own projection.
pub fn proxy_loss<T: Scalar>(
    tape: &mut Tape<T>,
    state: &SessionState,
    w: &[Var; 8],
    mode: RatioMode,
    diag: &mut LossDiagnostics,
) -> Result<Var, NumError> {
    let mut side =
        |tape: &mut Tape<T>, own: Var, own_proxy: Var, other: Var, ws: [Var; 4]| -> Result<Option<Var>, NumError> {
            let a = tape.matmul(ws[0], own)?;
            let b = tape.matmul(ws[1], own_proxy)?;
            let c = tape.matmul(ws[2], own)?;
            let e = tape.matmul(ws[3], other)?;
            let attract = tape.cosine(a, b)?;
            let repel = tape.cosine(c, e)?;
            ratio_term(tape, attract, &[attract, repel], mode, diag)
        };
    let id_term = side(tape, state.s_id, state.proxy_id, state.s_mo, [w[0], w[1], w[2], w[3]])?;
    let mo_term = side(tape, state.s_mo, state.proxy_mo, state.s_id, [w[4], w[5], w[6], w[7]])?;
    let terms: Vec<Var> = id_term.into_iter().chain(mo_term).collect();
    if terms.is_empty() {
        return Ok(zero(tape));
    }
    tape.add_all(&terms)
}

/// The counterfactual term: when the label is outside `N_s` the modality
/// path must explain it better than the ID path; otherwise the reverse.
#[allow(clippy::too_many_arguments)]
pub fn counterfactual_loss<T: Scalar>(
    tape: &mut Tape<T>,
    s_id: Var,
    s_mo: Var,
    label_id: Var,
    label_mo: Var,
    label_in_ns: bool,
    mode: RatioMode,
    diag: &mut LossDiagnostics,
) -> Result<Var, NumError> {
    let sim_mo = tape.cosine(s_mo, label_mo)?;
    let sim_id = tape.cosine(s_id, label_id)?;
    let (favored, other) = if label_in_ns {
        (sim_id, sim_mo)
    } else {
        (sim_mo, sim_id)
    };
    match ratio_term(tape, favored, &[favored, other], mode, diag)? {
        Some(t) => Ok(t),
        None => Ok(zero(tape)),
    }
}

/// `y_i = <s_id, e_i^id> + <s_mo, e_i^mo>` for every item, as `n x 1`.
pub fn score_all<T: Scalar>(
    tape: &mut Tape<T>,
    s_id: Var,
    s_mo: Var,
    id_embeddings: Var,
    modality_embeddings: Var,
) -> Result<Var, NumError> {
    let a = tape.matmul(id_embeddings, s_id)?;
    let b = tape.matmul(modality_embeddings, s_mo)?;
    tape.add(a, b)
}

/// [`score_all`] on plain tensors.
pub fn score_plain<T: Scalar>(
    s_id: &Tensor<T>,
    s_mo: &Tensor<T>,
    id_embeddings: &Tensor<T>,
    modality_embeddings: &Tensor<T>,
) -> Result<Vec<T>, NumError> {
    Ok(id_embeddings
        .matmul(s_id)?
        .add(&modality_embeddings.matmul(s_mo)?)?
        .into_data())
}

/// Recommendation loss for one session over the full catalog.
pub fn rec_loss<T: Scalar>(tape: &mut Tape<T>, scores: Var, label: ItemId, mode: RecLossMode) -> Result<Var, NumError> {
    let n = tape.value(scores).numel();
    if label >= n {
        return Err(NumError::IndexOutOfRange { index: label, len: n });
    }
    let y = tape.reshape(scores, &[1, n])?;
    let mut onehot = Tensor::zeros(&[1, n]);
    onehot.data_mut()[label] = T::one();
    match mode {
        RecLossMode::Bce => {
            let complement = onehot.map(|p| T::one() - p);
            let p = tape.sigmoid(y);
            let p = tape.clamp(p, T::lit(PROB_CLAMP), T::one() - T::lit(PROB_CLAMP));
            let log_p = tape.ln(p);
            let neg_p = tape.neg(p);
            let one_minus = tape.add_scalar(neg_p, T::one());
            let log_q = tape.ln(one_minus);
            let pos_w = tape.constant(onehot);
            let neg_w = tape.constant(complement);
            let a = tape.mul(log_p, pos_w)?;
            let b = tape.mul(log_q, neg_w)?;
            let ab = tape.add(a, b)?;
            let total = tape.sum(ab);
            Ok(tape.neg(total))
        }
        RecLossMode::SoftmaxCe => {
            let logp = tape.log_softmax_rows(y)?;
            let w = tape.constant(onehot);
            let picked = tape.mul(logp, w)?;
            let total = tape.sum(picked);
            Ok(tape.neg(total))
        }
    }
}
