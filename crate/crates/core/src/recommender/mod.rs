//! The recommender contract and two concrete models.
//!
//! Every model scores the full catalog for a session. Rankings order items
//! by descending score and break ties by ascending item id, so `topk`,
//! `rank_of` and membership checks agree everywhere.

mod markov;
mod neural;

use std::cmp::Ordering;
use std::path::Path;

pub use markov::MarkovCountRecommender;
pub use neural::{next_item_pairs, NeuralEmbeddingRecommender, RecTrainConfig};

use crate::checkpoint::Checkpoint;
use crate::error::{invalid, Error, Result};
use crate::model::{ItemId, RecList};
use crate::params::ParamStore;

pub trait Recommender: Send + Sync {
    fn catalog_size(&self) -> usize;

    fn embed_dim(&self) -> usize;

    /// Session embedding. The empty session maps to the zero vector.
    fn encode(&self, items: &[ItemId]) -> Result<Vec<f64>>;

    /// Scores over the whole catalog, indexed by item id.
    fn scores(&self, items: &[ItemId]) -> Result<Vec<f64>>;

    fn topk(&self, items: &[ItemId], k: usize) -> Result<RecList> {
        check_k(k, self.catalog_size())?;
        Ok(top_k_from_scores(&self.scores(items)?, k))
    }

    /// 1-based position of `item` in the full ranking.
    fn rank_of(&self, items: &[ItemId], item: ItemId) -> Result<usize> {
        if item >= self.catalog_size() {
            return invalid(format!("item id {item} outside catalog"));
        }
        Ok(rank_in_scores(&self.scores(items)?, item))
    }

    fn as_trainable(&self) -> Option<&NeuralEmbeddingRecommender> {
        None
    }

    /// Mean next-item cross-entropy and its gradients.
    fn rec_loss_and_grads(&self, _batch: &[(Vec<ItemId>, ItemId)]) -> Result<(f64, ParamStore)> {
        Err(Error::Unsupported(
            "this recommender has no trainable parameters".into(),
        ))
    }
}

pub(crate) fn check_k(k: usize, catalog_size: usize) -> Result<()> {
    if k == 0 || k > catalog_size {
        return invalid(format!("K must be in 1..={catalog_size}, got {k}"));
    }
    Ok(())
}

/// Ranking order: higher score first, then lower item id.
pub fn ranking_order(scores: &[f64], a: ItemId, b: ItemId) -> Ordering {
    scores[b].total_cmp(&scores[a]).then(a.cmp(&b))
}

pub fn top_k_from_scores(scores: &[f64], k: usize) -> RecList {
    let mut ids: Vec<ItemId> = (0..scores.len()).collect();
    let k = k.min(ids.len());
    if k < ids.len() {
        ids.select_nth_unstable_by(k, |&a, &b| ranking_order(scores, a, b));
        ids.truncate(k);
    }
    ids.sort_by(|&a, &b| ranking_order(scores, a, b));
    RecList {
        k,
        entries: ids.into_iter().map(|i| (i, scores[i])).collect(),
    }
}

pub fn rank_in_scores(scores: &[f64], item: ItemId) -> usize {
    1 + (0..scores.len())
        .filter(|&j| ranking_order(scores, j, item) == Ordering::Less)
        .count()
}

/// Either built-in model, as loaded from a checkpoint.
#[derive(Clone, Debug)]
pub enum AnyRecommender {
    Markov(MarkovCountRecommender),
    Neural(NeuralEmbeddingRecommender),
}

impl AnyRecommender {
    pub fn kind(&self) -> &'static str {
        match self {
            AnyRecommender::Markov(_) => markov::KIND,
            AnyRecommender::Neural(_) => neural::KIND,
        }
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        match self {
            AnyRecommender::Markov(m) => m.to_checkpoint(),
            AnyRecommender::Neural(n) => n.to_checkpoint(),
        }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        match ckpt.header.kind.as_str() {
            markov::KIND => Ok(AnyRecommender::Markov(MarkovCountRecommender::from_checkpoint(ckpt)?)),
            neural::KIND => Ok(AnyRecommender::Neural(NeuralEmbeddingRecommender::from_checkpoint(ckpt)?)),
            other => Err(Error::Checkpoint(format!("not a recommender checkpoint: kind={other}"))),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }

    fn inner(&self) -> &dyn Recommender {
        match self {
            AnyRecommender::Markov(m) => m,
            AnyRecommender::Neural(n) => n,
        }
    }
}

impl Recommender for AnyRecommender {
    fn catalog_size(&self) -> usize {
        self.inner().catalog_size()
    }

    fn embed_dim(&self) -> usize {
        self.inner().embed_dim()
    }

    fn encode(&self, items: &[ItemId]) -> Result<Vec<f64>> {
        self.inner().encode(items)
    }

    fn scores(&self, items: &[ItemId]) -> Result<Vec<f64>> {
        self.inner().scores(items)
    }

    fn as_trainable(&self) -> Option<&NeuralEmbeddingRecommender> {
        self.inner().as_trainable()
    }

    fn rec_loss_and_grads(&self, batch: &[(Vec<ItemId>, ItemId)]) -> Result<(f64, ParamStore)> {
        self.inner().rec_loss_and_grads(batch)
    }
}
