//! The target-affinity head: a small MLP mapping a query embedding into
//! object-embedding space, the multi-positive InfoNCE objective with
//! analytic gradients, the MSE regression ablation, and top-k retrieval.

mod io;
mod train;

pub use io::{load_head, save_head};
pub use train::{train_affinity, train_affinity_from_dir, LossKind, TrainConfig, TrainSample};

use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::scene::ObjectEmbedding;

/// The query embedding `z_aff` plus the word-table rows averaged to build
/// it, so loss gradients can flow back into the table. `source_rows` is
/// empty for externally supplied embeddings; such queries simply produce no
/// table gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryState {
    pub vector: DVector<f64>,
    pub source_rows: Vec<usize>,
}

impl QueryState {
    pub fn from_vector(vector: DVector<f64>) -> Self {
        QueryState {
            vector,
            source_rows: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Identity => x,
        }
    }

    /// Derivative at `x`. For ReLU the kink at 0 takes the subgradient 0.
    fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Identity => "identity",
        }
    }

    pub fn from_tag(tag: &str) -> Result<Self> {
        match tag {
            "relu" => Ok(Activation::Relu),
            "identity" => Ok(Activation::Identity),
            other => Err(Error::Config(format!("unknown activation tag `{other}`"))),
        }
    }
}

/// The trainable head: a word-embedding table for the query encoder and a
/// two-layer MLP `q = W2 * act(W1 * z + b1) + b2` mapping the D-dim query
/// embedding into the C-dim object-embedding space.
#[derive(Debug, Clone, PartialEq)]
pub struct AffinityHead {
    /// Sorted, deduplicated query vocabulary; row i of `word_table` is the
    /// embedding of `vocab[i]`.
    pub vocab: Vec<String>,
    /// `V x D` word embeddings.
    pub word_table: DMatrix<f64>,
    /// `H x D` first layer.
    pub w1: DMatrix<f64>,
    pub b1: DVector<f64>,
    /// `C x H` second layer.
    pub w2: DMatrix<f64>,
    pub b2: DVector<f64>,
    pub activation: Activation,
}

impl AffinityHead {
    pub fn input_dim(&self) -> usize {
        self.w1.ncols()
    }

    pub fn hidden_dim(&self) -> usize {
        self.w1.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.w2.nrows()
    }

    pub fn validate(&self) -> Result<()> {
        if self.word_table.ncols() != self.input_dim() && !self.vocab.is_empty() {
            return Err(Error::ShapeMismatch(format!(
                "word table is {}-dim but the MLP expects {}-dim input",
                self.word_table.ncols(),
                self.input_dim()
            )));
        }
        if self.word_table.nrows() != self.vocab.len() {
            return Err(Error::ShapeMismatch(format!(
                "vocab has {} words but the table has {} rows",
                self.vocab.len(),
                self.word_table.nrows()
            )));
        }
        if self.b1.len() != self.hidden_dim() {
            return Err(Error::ShapeMismatch(
                "b1 length must equal hidden dim".into(),
            ));
        }
        if self.w2.ncols() != self.hidden_dim() {
            return Err(Error::ShapeMismatch(
                "W2 column count must equal hidden dim".into(),
            ));
        }
        if self.b2.len() != self.output_dim() {
            return Err(Error::ShapeMismatch(
                "b2 length must equal output dim".into(),
            ));
        }
        let finite = self.word_table.iter().all(|x| x.is_finite())
            && self.w1.iter().all(|x| x.is_finite())
            && self.b1.iter().all(|x| x.is_finite())
            && self.w2.iter().all(|x| x.is_finite())
            && self.b2.iter().all(|x| x.is_finite());
        if !finite {
            return Err(Error::validation("head parameters must be finite"));
        }
        Ok(())
    }

    /// Encode query tokens as the mean of their word-table rows. Tokens
    /// outside the vocabulary are ignored; a query with no known token
    /// cannot be encoded.
    pub fn encode_query<S: AsRef<str>>(&self, tokens: &[S]) -> Result<QueryState> {
        let rows: Vec<usize> = tokens
            .iter()
            .filter_map(|t| {
                self.vocab
                    .binary_search_by(|w| w.as_str().cmp(t.as_ref()))
                    .ok()
            })
            .collect();
        if rows.is_empty() {
            return Err(Error::Config(format!(
                "no query token found in the {}-word vocabulary",
                self.vocab.len()
            )));
        }
        let mut vector = DVector::zeros(self.input_dim());
        for &row in &rows {
            vector += self.word_table.row(row).transpose();
        }
        vector /= rows.len() as f64;
        Ok(QueryState {
            vector,
            source_rows: rows,
        })
    }
}

/// Gradients with the same shapes as the head parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadGradients {
    pub word_table: DMatrix<f64>,
    pub w1: DMatrix<f64>,
    pub b1: DVector<f64>,
    pub w2: DMatrix<f64>,
    pub b2: DVector<f64>,
}

impl HeadGradients {
    pub fn zeros_like(head: &AffinityHead) -> Self {
        HeadGradients {
            word_table: DMatrix::zeros(head.word_table.nrows(), head.word_table.ncols()),
            w1: DMatrix::zeros(head.w1.nrows(), head.w1.ncols()),
            b1: DVector::zeros(head.b1.len()),
            w2: DMatrix::zeros(head.w2.nrows(), head.w2.ncols()),
            b2: DVector::zeros(head.b2.len()),
        }
    }

    pub fn add_scaled(&mut self, other: &HeadGradients, scale: f64) {
        self.word_table
            .zip_apply(&other.word_table, |a, b| *a += scale * b);
        self.w1.zip_apply(&other.w1, |a, b| *a += scale * b);
        self.b1.zip_apply(&other.b1, |a, b| *a += scale * b);
        self.w2.zip_apply(&other.w2, |a, b| *a += scale * b);
        self.b2.zip_apply(&other.b2, |a, b| *a += scale * b);
    }
}

/// A loss value plus its gradients with respect to every head parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct LossReport {
    pub value: f64,
    pub gradients: HeadGradients,
}

/// One training comparison: the query, the candidate set E, the positive
/// ids E+, and the softmax temperature.
#[derive(Debug, Clone, PartialEq)]
pub struct ContrastiveBatch {
    pub query: QueryState,
    pub candidates: Vec<ObjectEmbedding>,
    pub positive_ids: BTreeSet<u32>,
    pub temperature: f64,
}

impl ContrastiveBatch {
    pub fn validate(&self) -> Result<()> {
        if self.candidates.is_empty() {
            return Err(Error::InvalidBatch("candidate set is empty".into()));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::validation(format!(
                "temperature must be positive and finite, got {}",
                self.temperature
            )));
        }
        let dim = self.candidates[0].vector.len();
        let mut ids = BTreeSet::new();
        for candidate in &self.candidates {
            if candidate.vector.len() != dim {
                return Err(Error::ShapeMismatch(
                    "candidate embeddings have mixed dimensions".into(),
                ));
            }
            if candidate.vector.iter().any(|x| !x.is_finite()) {
                return Err(Error::validation(format!(
                    "candidate {} has non-finite entries",
                    candidate.object_id
                )));
            }
            ids.insert(candidate.object_id);
        }
        if let Some(missing) = self.positive_ids.iter().find(|id| !ids.contains(id)) {
            return Err(Error::validation(format!(
                "positive id {missing} is not among the candidates"
            )));
        }
        Ok(())
    }
}

/// `q = W2 * act(W1 * z + b1) + b2`.
pub fn mlp_forward(head: &AffinityHead, z: &QueryState) -> Result<DVector<f64>> {
    let (_, _, q) = forward_parts(head, z)?;
    Ok(q)
}

/// Forward pass keeping the intermediates needed for backprop:
/// pre-activation, hidden activation, and output.
fn forward_parts(
    head: &AffinityHead,
    z: &QueryState,
) -> Result<(DVector<f64>, DVector<f64>, DVector<f64>)> {
    head.validate()?;
    if z.vector.len() != head.input_dim() {
        return Err(Error::ShapeMismatch(format!(
            "query is {}-dim but the head expects {}",
            z.vector.len(),
            head.input_dim()
        )));
    }
    let pre = &head.w1 * &z.vector + &head.b1;
    let hidden = pre.map(|x| head.activation.apply(x));
    let q = &head.w2 * &hidden + &head.b2;
    Ok((pre, hidden, q))
}

/// `-log( Σ_{e+ ∈ E+} exp(qᵀe+/τ) / Σ_{e ∈ E} exp(qᵀe/τ) )`, evaluated in a
/// numerically stable form.
///
/// One max is subtracted from every exponent and the positive/negative
/// sums are accumulated separately, so the loss is computed as
/// `ln(1 + Σneg/Σpos)`: nonnegative by construction and exactly `0.0` when
/// every candidate is positive. If the positive sum underflows to zero the
/// computation falls back to a difference of two independently stabilized
/// log-sum-exps.
pub fn infonce_loss(batch: &ContrastiveBatch, q: &DVector<f64>) -> Result<f64> {
    let sims = batch_similarities(batch, q)?;
    let stats = stable_softmax_stats(&sims, &positivity_mask(batch));
    Ok(stats.loss)
}

fn batch_similarities(batch: &ContrastiveBatch, q: &DVector<f64>) -> Result<Vec<f64>> {
    batch.validate()?;
    if batch.positive_ids.is_empty() {
        return Err(Error::EmptyPositives);
    }
    let dim = batch.candidates[0].vector.len();
    if q.len() != dim {
        return Err(Error::ShapeMismatch(format!(
            "query output is {}-dim but candidates are {dim}-dim",
            q.len()
        )));
    }
    Ok(batch
        .candidates
        .iter()
        .map(|c| q.dot(&c.vector) / batch.temperature)
        .collect())
}

fn positivity_mask(batch: &ContrastiveBatch) -> Vec<bool> {
    batch
        .candidates
        .iter()
        .map(|c| batch.positive_ids.contains(&c.object_id))
        .collect()
}

struct SoftmaxStats {
    loss: f64,
    /// d(loss)/d(sim_i) for the τ-scaled similarities.
    dloss_dsim: Vec<f64>,
}

fn stable_softmax_stats(sims: &[f64], positive: &[bool]) -> SoftmaxStats {
    let max = sims.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = sims.iter().map(|s| (s - max).exp()).collect();
    let mut sum_all = 0.0;
    let mut sum_pos = 0.0;
    let mut sum_neg = 0.0;
    for (e, &pos) in exps.iter().zip(positive) {
        sum_all += e;
        if pos {
            sum_pos += e;
        } else {
            sum_neg += e;
        }
    }

    if sum_pos > 0.0 {
        // When E+ = E the negative sum is an empty accumulation (exact 0.0)
        // and sum_pos accumulates the same terms in the same order as
        // sum_all, so loss and per-similarity gradients are exactly zero.
        let loss = (sum_neg / sum_pos).ln_1p();
        let dloss_dsim = exps
            .iter()
            .zip(positive)
            .map(|(e, &pos)| e / sum_all - if pos { e / sum_pos } else { 0.0 })
            .collect();
        SoftmaxStats { loss, dloss_dsim }
    } else {
        // Every positive underflowed against the global max: stabilize the
        // positive log-sum-exp with its own max.
        let max_pos = sims
            .iter()
            .zip(positive)
            .filter(|(_, &pos)| pos)
            .map(|(s, _)| *s)
            .fold(f64::NEG_INFINITY, f64::max);
        let pos_exps: Vec<f64> = sims
            .iter()
            .zip(positive)
            .map(|(s, &pos)| if pos { (s - max_pos).exp() } else { 0.0 })
            .collect();
        let sum_pos: f64 = pos_exps.iter().sum();
        let loss = (max + sum_all.ln()) - (max_pos + sum_pos.ln());
        let dloss_dsim = exps
            .iter()
            .zip(&pos_exps)
            .map(|(e, ep)| e / sum_all - ep / sum_pos)
            .collect();
        SoftmaxStats { loss, dloss_dsim }
    }
}

/// InfoNCE loss plus exact reverse-mode gradients for every head parameter,
/// including the word-table rows that produced `batch.query`.
pub fn infonce_grad(batch: &ContrastiveBatch, head: &AffinityHead) -> Result<LossReport> {
    let z = &batch.query;
    let (pre, hidden, q) = forward_parts(head, z)?;
    let sims = batch_similarities(batch, &q)?;
    let stats = stable_softmax_stats(&sims, &positivity_mask(batch));

    // dL/dq = Σ_i dL/ds_i * e_i / τ.
    let mut grad_q = DVector::zeros(q.len());
    for (candidate, g) in batch.candidates.iter().zip(&stats.dloss_dsim) {
        grad_q.axpy(g / batch.temperature, &candidate.vector, 1.0);
    }

    Ok(LossReport {
        value: stats.loss,
        gradients: backprop_from_output(head, z, &pre, &hidden, &grad_q),
    })
}

/// Mean squared error between `q` and the mean positive embedding.
pub fn mse_regression_loss(q: &DVector<f64>, positives: &[ObjectEmbedding]) -> Result<f64> {
    let target = mean_positive(positives, q.len())?;
    Ok((q - target).norm_squared() / q.len() as f64)
}

/// MSE loss plus gradients, mirroring [`infonce_grad`] for the regression
/// ablation.
pub fn mse_grad(
    head: &AffinityHead,
    z: &QueryState,
    positives: &[ObjectEmbedding],
) -> Result<LossReport> {
    let (pre, hidden, q) = forward_parts(head, z)?;
    let target = mean_positive(positives, q.len())?;
    let diff = &q - target;
    let value = diff.norm_squared() / q.len() as f64;
    let grad_q = diff * (2.0 / q.len() as f64);
    Ok(LossReport {
        value,
        gradients: backprop_from_output(head, z, &pre, &hidden, &grad_q),
    })
}

fn mean_positive(positives: &[ObjectEmbedding], dim: usize) -> Result<DVector<f64>> {
    if positives.is_empty() {
        return Err(Error::EmptyPositives);
    }
    let mut mean = DVector::zeros(dim);
    for p in positives {
        if p.vector.len() != dim {
            return Err(Error::ShapeMismatch(format!(
                "positive embedding is {}-dim, expected {dim}",
                p.vector.len()
            )));
        }
        mean += &p.vector;
    }
    Ok(mean / positives.len() as f64)
}

/// Shared backward pass from `dL/dq` down to all parameters.
fn backprop_from_output(
    head: &AffinityHead,
    z: &QueryState,
    pre: &DVector<f64>,
    hidden: &DVector<f64>,
    grad_q: &DVector<f64>,
) -> HeadGradients {
    let mut grads = HeadGradients::zeros_like(head);

    grads.b2 = grad_q.clone();
    grads.w2 = grad_q * hidden.transpose();
    let grad_hidden = head.w2.transpose() * grad_q;
    let grad_pre = DVector::from_fn(pre.len(), |i, _| {
        grad_hidden[i] * head.activation.derivative(pre[i])
    });
    grads.b1 = grad_pre.clone();
    grads.w1 = &grad_pre * z.vector.transpose();

    if !z.source_rows.is_empty() {
        let grad_z = head.w1.transpose() * &grad_pre;
        let scale = 1.0 / z.source_rows.len() as f64;
        for &row in &z.source_rows {
            for (col, g) in grad_z.iter().enumerate() {
                grads.word_table[(row, col)] += scale * g;
            }
        }
    }
    grads
}

/// `lm_loss + contrastive_loss` — the combined objective, with the language
/// modeling term supplied externally.
pub fn total_loss(lm_loss: f64, contrastive_loss: f64) -> f64 {
    lm_loss + contrastive_loss
}

/// Rank all embeddings by dot-product similarity to `q`, descending, ties
/// broken by object id ascending; returns the top `min(k, n)` pairs.
pub fn retrieve_topk(
    q: &DVector<f64>,
    embeddings: &[ObjectEmbedding],
    k: usize,
) -> Result<Vec<(u32, f64)>> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    let mut scored: Vec<(u32, f64)> = embeddings
        .iter()
        .map(|e| {
            if e.vector.len() != q.len() {
                return Err(Error::ShapeMismatch(format!(
                    "embedding {} is {}-dim but the query is {}-dim",
                    e.object_id,
                    e.vector.len(),
                    q.len()
                )));
            }
            Ok((e.object_id, q.dot(&e.vector)))
        })
        .collect::<Result<_>>()?;
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    scored.truncate(k);
    Ok(scored)
}
