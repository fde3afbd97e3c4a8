//! Explanation environment: a left-to-right pass over one session in which
//! every item is either included in the explanation or left in the
//! remainder. The reward is computed once, from the final mask.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::model::{apply_mask, ItemId, Mask, RecList, RewardBreakdown, Session};
use crate::recommender::{check_k, Recommender};

/// Number of scalar probe features appended to the embedding blocks.
pub const PROBE_FEATURES: usize = 6;

/// Which reward terms contribute to the total. All on by default; the
/// switches exist for ablations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RewardConfig {
    pub factual: bool,
    pub counterfactual: bool,
    pub sparsity: bool,
    pub rank: bool,
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig {
            factual: true,
            counterfactual: true,
            sparsity: true,
            rank: true,
        }
    }
}

pub fn sparsity_reward(selected_len: usize) -> f64 {
    1.0 / ((selected_len + 2) as f64).ln()
}

pub fn rank_reward(rank: usize) -> f64 {
    1.0 / ((rank + 2) as f64).ln()
}

/// One session to explain against a frozen recommender.
pub struct ExplainTask<'r> {
    session: Session,
    target: ItemId,
    k: usize,
    recommender: &'r dyn Recommender,
    session_embedding: Vec<f64>,
    item_embeddings: Vec<Vec<f64>>,
    original: RecList,
    rewards: RewardConfig,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeState {
    pub t: usize,
    pub mask: Vec<u8>,
    pub selected: Vec<ItemId>,
    pub excluded: Vec<ItemId>,
    pub selected_embedding: Vec<f64>,
    /// Input of the state network at step `t`; empty once terminal.
    pub features: Vec<f64>,
}

impl EpisodeState {
    pub fn is_terminal(&self) -> bool {
        self.features.is_empty()
    }
}

/// Everything a finished episode produced.
#[derive(Clone, Debug, PartialEq)]
pub struct Transcript {
    pub features: Vec<Vec<f64>>,
    pub actions: Vec<u8>,
    pub mask: Mask,
    pub reward: RewardBreakdown,
}

impl<'r> ExplainTask<'r> {
    /// Explain the top-1 item the recommender produces for `session`.
    pub fn new(session: Session, recommender: &'r dyn Recommender, k: usize) -> Result<Self> {
        if session.len() < 2 {
            return invalid(format!(
                "session {} has {} items; at least 2 are required",
                session.id,
                session.len()
            ));
        }
        check_k(k, recommender.catalog_size())?;
        let original = recommender.topk(&session.items, k)?;
        let target = original.top().expect("k >= 1");
        Self::build(session, recommender, k, target, original)
    }

    /// Explain a chosen `target`, which must be in the session's top-K.
    pub fn with_target(
        session: Session,
        recommender: &'r dyn Recommender,
        k: usize,
        target: ItemId,
    ) -> Result<Self> {
        check_k(k, recommender.catalog_size())?;
        let original = recommender.topk(&session.items, k)?;
        if !original.contains(target) {
            return invalid(format!("item {target} is not in the session's top-{k} list"));
        }
        Self::build(session, recommender, k, target, original)
    }

    fn build(
        session: Session,
        recommender: &'r dyn Recommender,
        k: usize,
        target: ItemId,
        original: RecList,
    ) -> Result<Self> {
        let session_embedding = recommender.encode(&session.items)?;
        let item_embeddings = session
            .items
            .iter()
            .map(|&v| recommender.encode(&[v]))
            .collect::<Result<_>>()?;
        Ok(ExplainTask {
            session,
            target,
            k,
            recommender,
            session_embedding,
            item_embeddings,
            original,
            rewards: RewardConfig::default(),
        })
    }

    pub fn with_rewards(mut self, rewards: RewardConfig) -> Self {
        self.rewards = rewards;
        self
    }

    pub fn session(&self) -> &Session {
        &self.session
    }

    pub fn target(&self) -> ItemId {
        self.target
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn recommender(&self) -> &'r dyn Recommender {
        self.recommender
    }

    pub fn original_list(&self) -> &RecList {
        &self.original
    }

    pub fn session_embedding(&self) -> &[f64] {
        &self.session_embedding
    }

    pub fn feature_dim(&self) -> usize {
        feature_dim(self.recommender.embed_dim())
    }

    /// 1-based rank of the target given `items`.
    pub fn target_rank(&self, items: &[ItemId]) -> Result<usize> {
        self.recommender.rank_of(items, self.target)
    }

    pub fn target_in_topk(&self, items: &[ItemId]) -> Result<bool> {
        Ok(self.target_rank(items)? <= self.k)
    }

    /// `(factual_ok, counterfactual_ok)` for `mask`, evaluated directly
    /// against the recommender.
    pub fn verify(&self, mask: &Mask) -> Result<(bool, bool)> {
        let view = apply_mask(&self.session.items, mask)?;
        Ok((
            self.target_in_topk(&view.selected)?,
            !self.target_in_topk(&view.remainder)?,
        ))
    }

    pub fn terminal_reward(&self, mask: &Mask) -> Result<RewardBreakdown> {
        let view = apply_mask(&self.session.items, mask)?;
        let rank = self.target_rank(&view.selected)?;
        let factual = rank <= self.k;
        let counterfactual = !self.target_in_topk(&view.remainder)?;
        let on = |enabled: bool, value: f64| if enabled { value } else { 0.0 };
        let r_fe = on(self.rewards.factual, factual as u8 as f64);
        let r_cfe = on(self.rewards.counterfactual, counterfactual as u8 as f64);
        let r_sp = on(self.rewards.sparsity, sparsity_reward(view.selected.len()));
        let r_rank = on(self.rewards.rank, rank_reward(rank));
        Ok(RewardBreakdown {
            r_fe,
            r_cfe,
            r_sp,
            r_rank,
            total: r_fe + r_cfe + r_sp + r_rank,
        })
    }

    pub fn reset(&self) -> Result<EpisodeState> {
        let selected_embedding = vec![0.0; self.recommender.embed_dim()];
        let features = self.features(0, &[], &[], &selected_embedding)?;
        Ok(EpisodeState {
            t: 0,
            mask: Vec::new(),
            selected: Vec::new(),
            excluded: Vec::new(),
            selected_embedding,
            features,
        })
    }

    /// Decide the item at `state.t`. The reward is `Some` only on the step
    /// that finishes the episode.
    pub fn step(&self, state: &EpisodeState, action: u8) -> Result<(EpisodeState, Option<RewardBreakdown>)> {
        let n = self.session.len();
        if state.t >= n {
            return Err(Error::IllegalState("step called on a finished episode".into()));
        }
        if action > 1 {
            return invalid(format!("action must be 0 or 1, got {action}"));
        }
        let item = self.session.items[state.t];
        let mut next = EpisodeState {
            t: state.t + 1,
            mask: state.mask.clone(),
            selected: state.selected.clone(),
            excluded: state.excluded.clone(),
            selected_embedding: state.selected_embedding.clone(),
            features: Vec::new(),
        };
        next.mask.push(action);
        if action == 1 {
            next.selected.push(item);
            next.selected_embedding = self.recommender.encode(&next.selected)?;
        } else {
            next.excluded.push(item);
        }
        if next.t == n {
            let mask = Mask::from_bits(next.mask.clone())?;
            let reward = self.terminal_reward(&mask)?;
            Ok((next, Some(reward)))
        } else {
            next.features =
                self.features(next.t, &next.selected, &next.excluded, &next.selected_embedding)?;
            Ok((next, None))
        }
    }

    /// State-network input at step `t`:
    /// `e_S ‖ e_S* ‖ encode([v_t]) ‖ probes`, where the probes are
    /// `[i* ∈ top-K(S* + v_t), i* ∉ top-K(R + v_t), i* ∈ top-K(S*),
    /// i* ∉ top-K(R), t / (|S| - 1), [t is the last position]]` and `R` is
    /// the items excluded so far.
    fn features(
        &self,
        t: usize,
        selected: &[ItemId],
        excluded: &[ItemId],
        selected_embedding: &[f64],
    ) -> Result<Vec<f64>> {
        let n = self.session.len();
        let item = self.session.items[t];
        let flag = |b: bool| if b { 1.0 } else { 0.0 };

        let mut with_item = selected.to_vec();
        with_item.push(item);
        let include_ok = self.target_in_topk(&with_item)?;
        with_item.clear();
        with_item.extend_from_slice(excluded);
        with_item.push(item);
        let exclude_ok = !self.target_in_topk(&with_item)?;

        let mut x = Vec::with_capacity(self.feature_dim());
        x.extend_from_slice(&self.session_embedding);
        x.extend_from_slice(selected_embedding);
        x.extend_from_slice(&self.item_embeddings[t]);
        x.push(flag(include_ok));
        x.push(flag(exclude_ok));
        x.push(flag(self.target_in_topk(selected)?));
        x.push(flag(!self.target_in_topk(excluded)?));
        x.push(if n > 1 { t as f64 / (n - 1) as f64 } else { 0.0 });
        x.push(flag(t + 1 == n));
        Ok(x)
    }

    /// Run one episode, asking `decide` for each action.
    pub fn rollout<F>(&self, mut decide: F) -> Result<Transcript>
    where
        F: FnMut(&EpisodeState) -> Result<u8>,
    {
        let mut state = self.reset()?;
        let mut features = Vec::with_capacity(self.session.len());
        let mut actions = Vec::with_capacity(self.session.len());
        loop {
            let action = decide(&state)?;
            let (next, reward) = self.step(&state, action)?;
            features.push(std::mem::take(&mut state.features));
            actions.push(action);
            state = next;
            if let Some(reward) = reward {
                return Ok(Transcript {
                    features,
                    actions,
                    mask: Mask::from_bits(state.mask)?,
                    reward,
                });
            }
        }
    }
}

pub fn feature_dim(embed_dim: usize) -> usize {
    3 * embed_dim + PROBE_FEATURES
}
