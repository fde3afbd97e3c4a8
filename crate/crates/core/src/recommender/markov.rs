use crate::checkpoint::{Checkpoint, CheckpointHeader};
use crate::error::{invalid, Error, Result};
use crate::model::{check_items, ItemId, Session};
use crate::params::{ParamStore, Tensor};

use super::Recommender;

pub(super) const KIND: &str = "markov";

/// First-order transition counts with an additive popularity prior.
///
/// `score(S, j) = counts[last(S)][j] + alpha * pop[j] / sum(pop)`; the empty
/// session is scored by the prior alone. The session embedding is the
/// row-normalised transition distribution of the last item (dimension
/// `|V|`), zero for the empty session.
#[derive(Clone, Debug, PartialEq)]
pub struct MarkovCountRecommender {
    n: usize,
    transitions: Vec<u64>,
    popularity: Vec<u64>,
    alpha: f64,
}

impl MarkovCountRecommender {
    pub fn new(n: usize, transitions: Vec<u64>, popularity: Vec<u64>, alpha: f64) -> Result<Self> {
        if n == 0 {
            return invalid("catalog must contain at least one item");
        }
        if transitions.len() != n * n || popularity.len() != n {
            return invalid("count tables do not match the catalog size");
        }
        if !(alpha >= 0.0) || !alpha.is_finite() {
            return invalid(format!("smoothing must be finite and >= 0, got {alpha}"));
        }
        Ok(MarkovCountRecommender {
            n,
            transitions,
            popularity,
            alpha,
        })
    }

    pub fn fit(sessions: &[Session], n: usize, alpha: f64) -> Result<Self> {
        let mut transitions = vec![0u64; n * n];
        let mut popularity = vec![0u64; n];
        for session in sessions {
            check_items(&session.items, n)?;
            for &item in &session.items {
                popularity[item] += 1;
            }
            for pair in session.items.windows(2) {
                transitions[pair[0] * n + pair[1]] += 1;
            }
        }
        Self::new(n, transitions, popularity, alpha)
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn transition_count(&self, from: ItemId, to: ItemId) -> u64 {
        self.transitions[from * self.n + to]
    }

    pub fn popularity(&self) -> &[u64] {
        &self.popularity
    }

    fn prior(&self) -> Vec<f64> {
        let total: u64 = self.popularity.iter().sum();
        if total == 0 || self.alpha == 0.0 {
            return vec![0.0; self.n];
        }
        self.popularity
            .iter()
            .map(|&p| self.alpha * p as f64 / total as f64)
            .collect()
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let n = self.n;
        let mut tensors = ParamStore::new();
        tensors.insert(
            "transition_counts",
            Tensor {
                shape: vec![n, n],
                data: self.transitions.iter().map(|&c| c as f64).collect(),
            },
        );
        tensors.insert(
            "popularity_counts",
            Tensor {
                shape: vec![n],
                data: self.popularity.iter().map(|&c| c as f64).collect(),
            },
        );
        Checkpoint {
            header: CheckpointHeader {
                kind: KIND.into(),
                catalog_size: n,
                embed_dim: n,
                rho: 0.0,
                alpha: self.alpha,
            },
            tensors,
        }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let n = ckpt.header.catalog_size;
        let counts = |name: &str, shape: &[usize]| -> Result<Vec<u64>> {
            let t = ckpt
                .tensors
                .get(name)
                .filter(|t| t.shape == shape)
                .ok_or_else(|| Error::Checkpoint(format!("missing or misshapen tensor {name}")))?;
            Ok(t.data.iter().map(|&x| x as u64).collect())
        };
        Self::new(
            n,
            counts("transition_counts", &[n, n])?,
            counts("popularity_counts", &[n])?,
            ckpt.header.alpha,
        )
    }
}

impl Recommender for MarkovCountRecommender {
    fn catalog_size(&self) -> usize {
        self.n
    }

    fn embed_dim(&self) -> usize {
        self.n
    }

    fn encode(&self, items: &[ItemId]) -> Result<Vec<f64>> {
        check_items(items, self.n)?;
        let Some(&last) = items.last() else {
            return Ok(vec![0.0; self.n]);
        };
        let row = &self.transitions[last * self.n..(last + 1) * self.n];
        let total: u64 = row.iter().sum();
        if total == 0 {
            return Ok(vec![0.0; self.n]);
        }
        Ok(row.iter().map(|&c| c as f64 / total as f64).collect())
    }

    fn scores(&self, items: &[ItemId]) -> Result<Vec<f64>> {
        check_items(items, self.n)?;
        let mut scores = self.prior();
        if let Some(&last) = items.last() {
            let row = &self.transitions[last * self.n..(last + 1) * self.n];
            for (s, &c) in scores.iter_mut().zip(row) {
                *s += c as f64;
            }
        }
        Ok(scores)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn planted(a: usize, b: usize, n: usize) -> MarkovCountRecommender {
        let mut t = vec![0; n * n];
        t[a * n + b] = 10;
        MarkovCountRecommender::new(n, t, vec![0; n], 0.0).unwrap()
    }

    #[test]
    fn single_transition_wins_top1() {
        let rec = planted(2, 4, 6);
        let scores = rec.scores(&[0, 2]).unwrap();
        // brute force: the argmax over all items
        let best = (0..6).max_by(|&x, &y| scores[x].partial_cmp(&scores[y]).unwrap().then(y.cmp(&x))).unwrap();
        assert_eq!(best, 4);
        assert_eq!(rec.topk(&[0, 2], 1).unwrap().items(), vec![4]);
        assert_eq!(rec.rank_of(&[0, 2], 4).unwrap(), 1);
    }

    #[test]
    fn empty_session_uses_prior_and_zero_embedding() {
        let rec = MarkovCountRecommender::fit(&[Session::new("s", vec![0, 1, 1, 2])], 3, 0.1).unwrap();
        assert_eq!(rec.encode(&[]).unwrap(), vec![0.0; 3]);
        let s = rec.scores(&[]).unwrap();
        assert!((s[1] - 0.1 * 2.0 / 4.0).abs() < 1e-15);
        assert_eq!(rec.topk(&[], 1).unwrap().items(), vec![1]);
    }

    #[test]
    fn unknown_items_and_bad_k_are_rejected() {
        let rec = planted(0, 1, 3);
        assert!(rec.scores(&[3]).is_err());
        assert!(rec.topk(&[0], 0).is_err());
        assert!(rec.topk(&[0], 4).is_err());
        assert!(rec.rank_of(&[0], 9).is_err());
    }

    #[test]
    fn not_trainable() {
        let rec = planted(0, 1, 3);
        assert!(rec.as_trainable().is_none());
        assert!(matches!(
            rec.rec_loss_and_grads(&[(vec![0], 1)]),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn checkpoint_round_trip() {
        let rec = MarkovCountRecommender::fit(&[Session::new("s", vec![0, 1, 2, 1, 0])], 3, 0.25).unwrap();
        let back = MarkovCountRecommender::from_checkpoint(&rec.to_checkpoint()).unwrap();
        assert_eq!(back, rec);
    }
}
