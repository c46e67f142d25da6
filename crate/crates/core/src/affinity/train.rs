//! Full-batch gradient-descent training of the affinity head.

use std::collections::{BTreeSet, HashMap};

use nalgebra::{DMatrix, DVector};
use rand::prelude::*;
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

use crate::affinity::{
    infonce_grad, mse_grad, Activation, AffinityHead, ContrastiveBatch, HeadGradients, QueryState,
};
use crate::error::{Error, Result};
use crate::geometry::embed_all_objects;
use crate::relevance::{TargetMode, TargetSet};
use crate::scene::{ObjectEmbedding, SceneBundle};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    InfoNce,
    Mse,
}

impl LossKind {
    pub fn tag(self) -> &'static str {
        match self {
            LossKind::InfoNce => "infonce",
            LossKind::Mse => "mse",
        }
    }

    pub fn from_tag(tag: &str) -> Result<Self> {
        match tag {
            "infonce" => Ok(LossKind::InfoNce),
            "mse" => Ok(LossKind::Mse),
            other => Err(Error::Config(format!(
                "unknown loss kind `{other}` (expected infonce or mse)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub steps: usize,
    pub temperature: f64,
    pub seed: u64,
    pub loss_kind: LossKind,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.05,
            steps: 2000,
            temperature: 0.07,
            seed: 0,
            loss_kind: LossKind::InfoNce,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::Config(format!(
                "learning rate must be > 0, got {}",
                self.lr
            )));
        }
        if !(self.temperature.is_finite() && self.temperature > 0.0) {
            return Err(Error::Config(format!(
                "temperature must be > 0, got {}",
                self.temperature
            )));
        }
        Ok(())
    }
}

/// One training sample: tokenized query text, the scene it refers to, and
/// its positive target set.
#[derive(Debug, Clone)]
pub struct TrainSample<'a> {
    pub query_tokens: Vec<String>,
    pub scene: &'a SceneBundle,
    pub target: TargetSet,
}

struct PreparedSample {
    token_rows: Vec<usize>,
    candidates: Vec<ObjectEmbedding>,
    positive_ids: BTreeSet<u32>,
}

/// Train the head with plain full-batch gradient descent.
///
/// Per-object embeddings are pooled once per distinct scene up front.
/// Samples whose target set is `skip`, has no positive among the usable
/// candidates, or refers to a scene with no pooled (non-sentinel) object
/// contribute no gradient; training requires at least one usable sample.
/// Deterministic: identical samples and config yield a bit-identical head.
pub fn train_affinity(samples: &[TrainSample<'_>], config: &TrainConfig) -> Result<AffinityHead> {
    config.validate()?;

    // Pool object embeddings once per distinct scene (keyed by address:
    // callers pass the same bundle reference for samples sharing a scene).
    let mut embedding_cache: HashMap<*const SceneBundle, Vec<ObjectEmbedding>> = HashMap::new();
    let mut feature_dim: Option<usize> = None;
    for sample in samples {
        let key = sample.scene as *const SceneBundle;
        if let std::collections::hash_map::Entry::Vacant(slot) = embedding_cache.entry(key) {
            slot.insert(embed_all_objects(sample.scene)?);
        }
        let dim = sample.scene.feature_dim();
        match feature_dim {
            None => feature_dim = Some(dim),
            Some(existing) if existing != dim => {
                return Err(Error::Config(format!(
                    "samples mix feature dimensions {existing} and {dim}"
                )));
            }
            _ => {}
        }
    }
    let dim = feature_dim.ok_or_else(|| Error::Config("no training samples given".into()))?;
    if dim == 0 {
        return Err(Error::Config(
            "scenes have no views, so embeddings are 0-dim".into(),
        ));
    }

    // Vocabulary: every token seen in any sample, sorted and deduplicated.
    let vocab: Vec<String> = samples
        .iter()
        .flat_map(|s| s.query_tokens.iter().cloned())
        .collect::<BTreeSet<String>>()
        .into_iter()
        .collect();

    let prepared: Vec<PreparedSample> = samples
        .iter()
        .filter_map(|sample| prepare_sample(sample, &embedding_cache, &vocab))
        .collect();
    if prepared.is_empty() {
        return Err(Error::Config(
            "no trainable sample: every sample is skipped or has no usable positives".into(),
        ));
    }

    let mut head = init_head(vocab, dim, dim, dim, config.seed);
    let sample_count = prepared.len() as f64;
    for step in 0..config.steps {
        let mut total = HeadGradients::zeros_like(&head);
        let mut loss_sum = 0.0;
        for sample in &prepared {
            let query = encode_rows(&head, &sample.token_rows);
            let report = match config.loss_kind {
                LossKind::InfoNce => {
                    let batch = ContrastiveBatch {
                        query,
                        candidates: sample.candidates.clone(),
                        positive_ids: sample.positive_ids.clone(),
                        temperature: config.temperature,
                    };
                    infonce_grad(&batch, &head)?
                }
                LossKind::Mse => {
                    let positives: Vec<ObjectEmbedding> = sample
                        .candidates
                        .iter()
                        .filter(|c| sample.positive_ids.contains(&c.object_id))
                        .cloned()
                        .collect();
                    mse_grad(&head, &query, &positives)?
                }
            };
            loss_sum += report.value;
            total.add_scaled(&report.gradients, 1.0);
        }

        let scale = -config.lr / sample_count;
        head.word_table
            .zip_apply(&total.word_table, |p, g| *p += scale * g);
        head.w1.zip_apply(&total.w1, |p, g| *p += scale * g);
        head.b1.zip_apply(&total.b1, |p, g| *p += scale * g);
        head.w2.zip_apply(&total.w2, |p, g| *p += scale * g);
        head.b2.zip_apply(&total.b2, |p, g| *p += scale * g);

        if step % 200 == 0 || step + 1 == config.steps {
            log::debug!(
                "step {step}: mean {} loss {:.6}",
                config.loss_kind.tag(),
                loss_sum / sample_count
            );
        }
    }
    Ok(head)
}

/// Train from an on-disk data directory: `samples.jsonl` next to one scene
/// directory per referenced scene id. Each sample's target set is resolved
/// with `variant` and its question is tokenized into the query.
pub fn train_affinity_from_dir(
    data_dir: &std::path::Path,
    variant: crate::relevance::SupervisionVariant,
    config: &TrainConfig,
) -> Result<AffinityHead> {
    let records = crate::relevance::read_sample_records(&data_dir.join("samples.jsonl"))?;
    let scenes =
        crate::scene::load_scene_map(data_dir, records.iter().map(|r| r.scene_id.as_str()))?;
    let mut samples = Vec::with_capacity(records.len());
    for record in &records {
        let scene = &scenes[&record.scene_id];
        let target = crate::relevance::build_target_set(&record.sample, scene, variant)?;
        samples.push(TrainSample {
            query_tokens: crate::text::tokenize(&record.sample.question),
            scene,
            target,
        });
    }
    train_affinity(&samples, config)
}

fn prepare_sample(
    sample: &TrainSample<'_>,
    cache: &HashMap<*const SceneBundle, Vec<ObjectEmbedding>>,
    vocab: &[String],
) -> Option<PreparedSample> {
    if sample.target.mode == TargetMode::Skip {
        return None;
    }
    let embeddings = &cache[&(sample.scene as *const SceneBundle)];
    // Objects that pooled no points carry the zero sentinel, which encodes
    // "unobserved" rather than a real feature; keep them out of E.
    let candidates: Vec<ObjectEmbedding> = embeddings
        .iter()
        .filter(|e| !e.is_sentinel())
        .cloned()
        .collect();
    if candidates.is_empty() {
        return None;
    }
    let candidate_ids: BTreeSet<u32> = candidates.iter().map(|c| c.object_id).collect();
    let positive_ids: BTreeSet<u32> = sample
        .target
        .ids
        .iter()
        .filter(|id| candidate_ids.contains(id))
        .cloned()
        .collect();
    if positive_ids.is_empty() {
        return None;
    }
    let token_rows: Vec<usize> = sample
        .query_tokens
        .iter()
        .filter_map(|t| vocab.binary_search(t).ok())
        .collect();
    if token_rows.is_empty() {
        return None;
    }
    Some(PreparedSample {
        token_rows,
        candidates,
        positive_ids,
    })
}

fn encode_rows(head: &AffinityHead, rows: &[usize]) -> QueryState {
    let mut vector = DVector::zeros(head.input_dim());
    for &row in rows {
        vector += head.word_table.row(row).transpose();
    }
    vector /= rows.len() as f64;
    QueryState {
        vector,
        source_rows: rows.to_vec(),
    }
}

/// Deterministic initialization: Gaussian word table and Xavier-scaled
/// layers, biases zero. Draw order is fixed (table, W1, W2), so a seed
/// fully determines the head.
fn init_head(vocab: Vec<String>, d: usize, h: usize, c: usize, seed: u64) -> AffinityHead {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let v = vocab.len();
    let table_std = 1.0 / (d as f64).sqrt();
    let mut gauss = |std: f64| -> f64 { std * rng.sample::<f64, _>(StandardNormal) };

    // DMatrix::from_fn fills column-major; draw row-major explicitly so the
    // layout choice of the linear algebra crate cannot change the stream.
    let draw_matrix = |rows: usize, cols: usize, std: f64, g: &mut dyn FnMut(f64) -> f64| {
        let mut m = DMatrix::zeros(rows, cols);
        for r in 0..rows {
            for col in 0..cols {
                m[(r, col)] = g(std);
            }
        }
        m
    };
    let word_table = draw_matrix(v, d, table_std, &mut gauss);
    let w1 = draw_matrix(h, d, (2.0 / (d + h) as f64).sqrt(), &mut gauss);
    let w2 = draw_matrix(c, h, (2.0 / (h + c) as f64).sqrt(), &mut gauss);

    AffinityHead {
        vocab,
        word_table,
        w1,
        b1: DVector::zeros(h),
        w2,
        b2: DVector::zeros(c),
        activation: Activation::Relu,
    }
}
