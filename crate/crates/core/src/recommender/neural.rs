use rand::seq::SliceRandom;
use rand::Rng;

use crate::checkpoint::{Checkpoint, CheckpointHeader};
use crate::error::{invalid, Error, Result};
use crate::model::{check_items, ItemId, Session};
use crate::params::{ParamStore, Tensor};
use crate::seed;

use super::Recommender;

pub(super) const KIND: &str = "neural";
pub(crate) const EMBEDDINGS: &str = "item_embeddings";
pub(crate) const BIAS: &str = "item_bias";

/// Item-embedding model with a recency-weighted mean session encoder.
///
/// `encode(S) = sum_j w_j E[v_j] / sum_j w_j` with `w_j = rho^(|S| - j)`,
/// and `score(S, i) = encode(S) . E[i] + b[i]`.
#[derive(Clone, Debug, PartialEq)]
pub struct NeuralEmbeddingRecommender {
    n: usize,
    d: usize,
    rho: f64,
    params: ParamStore,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RecTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for RecTrainConfig {
    fn default() -> Self {
        RecTrainConfig {
            epochs: 20,
            batch_size: 32,
            learning_rate: 0.5,
            seed: 0,
        }
    }
}

/// Every (prefix, next item) pair of every session.
pub fn next_item_pairs(sessions: &[Session]) -> Vec<(Vec<ItemId>, ItemId)> {
    sessions
        .iter()
        .flat_map(|s| (1..s.items.len()).map(move |t| (s.items[..t].to_vec(), s.items[t])))
        .collect()
}

impl NeuralEmbeddingRecommender {
    pub fn new(n: usize, d: usize, rho: f64, seed: u64) -> Result<Self> {
        if n == 0 || d == 0 {
            return invalid("catalog size and embedding dimension must be positive");
        }
        if !(rho > 0.0 && rho <= 1.0) {
            return invalid(format!("recency decay must lie in (0, 1], got {rho}"));
        }
        let mut rng = seed::rng(seed);
        let embeddings = (0..n * d).map(|_| rng.gen_range(-0.1..0.1)).collect();
        let mut params = ParamStore::new();
        params.insert(EMBEDDINGS, Tensor::from_vec(&[n, d], embeddings)?);
        params.insert(BIAS, Tensor::zeros(&[n]));
        Ok(NeuralEmbeddingRecommender { n, d, rho, params })
    }

    pub fn from_params(n: usize, d: usize, rho: f64, params: ParamStore) -> Result<Self> {
        let mut model = Self::new(n, d, rho, 0)?;
        if !model.params.same_layout(&params) {
            return invalid("parameter layout does not match catalog size and dimension");
        }
        model.params = params;
        Ok(model)
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn apply_grads(&mut self, grads: &ParamStore, learning_rate: f64) -> Result<()> {
        self.params.apply_grads(grads, learning_rate)
    }

    /// Normalised recency weights for a session of length `len`.
    pub(crate) fn recency_weights(&self, len: usize) -> Vec<f64> {
        let raw: Vec<f64> = (1..=len).map(|j| self.rho.powi((len - j) as i32)).collect();
        let total: f64 = raw.iter().sum();
        raw.into_iter().map(|w| w / total).collect()
    }

    /// Scatter `grad_embedding` (dL/d encode(items)) into `grads`.
    pub(crate) fn backprop_encode(&self, items: &[ItemId], grad_embedding: &[f64], grads: &mut ParamStore) {
        let weights = self.recency_weights(items.len());
        let g_e = grads.expect_mut(EMBEDDINGS);
        for (&item, &w) in items.iter().zip(&weights) {
            for (g, &ge) in g_e.row_mut(item).iter_mut().zip(grad_embedding) {
                *g += w * ge;
            }
        }
    }

    /// Adds the gradient of `-ln softmax(scores)[target]` to `grads` and
    /// returns the loss.
    fn accumulate_example(&self, items: &[ItemId], target: ItemId, grads: &mut ParamStore) -> Result<f64> {
        let e = self.encode(items)?;
        let scores = self.scores_from_embedding(&e);
        let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exp: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
        let z: f64 = exp.iter().sum();
        let loss = z.ln() + max - scores[target];

        let emb = self.params.expect(EMBEDDINGS);
        let mut grad_e = vec![0.0; self.d];
        {
            let g_bias = grads.expect_mut(BIAS);
            for i in 0..self.n {
                let gi = exp[i] / z - if i == target { 1.0 } else { 0.0 };
                g_bias.data[i] += gi;
            }
        }
        let g_emb = grads.expect_mut(EMBEDDINGS);
        for i in 0..self.n {
            let gi = exp[i] / z - if i == target { 1.0 } else { 0.0 };
            for ((g, &ek), (ge, &eik)) in g_emb
                .row_mut(i)
                .iter_mut()
                .zip(&e)
                .zip(grad_e.iter_mut().zip(emb.row(i)))
            {
                *g += gi * ek;
                *ge += gi * eik;
            }
        }
        self.backprop_encode(items, &grad_e, grads);
        Ok(loss)
    }

    fn scores_from_embedding(&self, e: &[f64]) -> Vec<f64> {
        let emb = self.params.expect(EMBEDDINGS);
        let bias = self.params.expect(BIAS);
        (0..self.n)
            .map(|i| dot(emb.row(i), e) + bias.data[i])
            .collect()
    }

    pub fn loss_and_grads(&self, batch: &[(Vec<ItemId>, ItemId)]) -> Result<(f64, ParamStore)> {
        if batch.is_empty() {
            return invalid("empty training batch");
        }
        let mut grads = self.params.zeros_like();
        let mut loss = 0.0;
        for (items, target) in batch {
            check_items(std::slice::from_ref(target), self.n)?;
            loss += self.accumulate_example(items, *target, &mut grads)?;
        }
        let scale = 1.0 / batch.len() as f64;
        grads.scale(scale);
        Ok((loss * scale, grads))
    }

    /// Mini-batch gradient descent on next-item cross-entropy. Returns the
    /// per-sample mean loss of each epoch.
    pub fn train(&mut self, pairs: &[(Vec<ItemId>, ItemId)], config: &RecTrainConfig) -> Result<Vec<f64>> {
        if config.batch_size == 0 {
            return invalid("batch size must be positive");
        }
        if pairs.is_empty() {
            return Err(Error::EmptyDataset("no (prefix, next item) pairs to train on".into()));
        }
        let mut rng = seed::rng(config.seed);
        let mut order: Vec<usize> = (0..pairs.len()).collect();
        let mut curve = Vec::with_capacity(config.epochs);
        for _ in 0..config.epochs {
            order.shuffle(&mut rng);
            // per-sample mean, so a short final batch is not over-weighted
            let mut total = 0.0;
            for chunk in order.chunks(config.batch_size) {
                let batch: Vec<_> = chunk.iter().map(|&i| pairs[i].clone()).collect();
                let (loss, grads) = self.loss_and_grads(&batch)?;
                self.apply_grads(&grads, config.learning_rate)?;
                total += loss * chunk.len() as f64;
            }
            curve.push(total / pairs.len() as f64);
        }
        Ok(curve)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            header: CheckpointHeader {
                kind: KIND.into(),
                catalog_size: self.n,
                embed_dim: self.d,
                rho: self.rho,
                alpha: 0.0,
            },
            tensors: self.params.clone(),
        }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let h = &ckpt.header;
        Self::from_params(h.catalog_size, h.embed_dim, h.rho, ckpt.tensors.clone())
            .map_err(|e| Error::Checkpoint(e.to_string()))
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl Recommender for NeuralEmbeddingRecommender {
    fn catalog_size(&self) -> usize {
        self.n
    }

    fn embed_dim(&self) -> usize {
        self.d
    }

    fn encode(&self, items: &[ItemId]) -> Result<Vec<f64>> {
        check_items(items, self.n)?;
        let mut e = vec![0.0; self.d];
        let emb = self.params.expect(EMBEDDINGS);
        for (&item, w) in items.iter().zip(self.recency_weights(items.len())) {
            for (x, &v) in e.iter_mut().zip(emb.row(item)) {
                *x += w * v;
            }
        }
        Ok(e)
    }

    fn scores(&self, items: &[ItemId]) -> Result<Vec<f64>> {
        Ok(self.scores_from_embedding(&self.encode(items)?))
    }

    fn as_trainable(&self) -> Option<&NeuralEmbeddingRecommender> {
        Some(self)
    }

    fn rec_loss_and_grads(&self, batch: &[(Vec<ItemId>, ItemId)]) -> Result<(f64, ParamStore)> {
        self.loss_and_grads(batch)
    }
}
