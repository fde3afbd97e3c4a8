//! Stochastic include/exclude policy and its REINFORCE trainer.
//!
//! The policy network is `s_t = ReLU(W1 x_t + b1)` followed by a two-row
//! action-score matrix `W`; the include probability is
//! `sigmoid(W[1]·s_t - W[0]·s_t)`.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{Checkpoint, CheckpointHeader};
use crate::env::{feature_dim, ExplainTask, RewardConfig, Transcript};
use crate::error::{invalid, Error, Result};
use crate::model::{ExplanationRecord, Session, TraceStep};
use crate::params::{ParamStore, Tensor};
use crate::recommender::Recommender;
use crate::seed;

const W1: &str = "state.w1";
const B1: &str = "state.b1";
const W: &str = "policy.w";
const KIND: &str = "policy";

#[derive(Clone, Debug, PartialEq)]
pub struct PolicyParams {
    store: ParamStore,
    input_dim: usize,
    hidden: usize,
}

impl PolicyParams {
    pub fn new(input_dim: usize, hidden: usize, seed: u64) -> Result<Self> {
        if input_dim == 0 || hidden == 0 {
            return invalid("policy dimensions must be positive");
        }
        let mut rng = seed::rng(seed);
        let a = 1.0 / (input_dim as f64).sqrt();
        let w1 = (0..hidden * input_dim).map(|_| rng.gen_range(-a..a)).collect();
        let w = (0..2 * hidden).map(|_| rng.gen_range(-0.01..0.01)).collect();
        let mut store = ParamStore::new();
        store.insert(W1, Tensor::from_vec(&[hidden, input_dim], w1)?);
        store.insert(B1, Tensor::zeros(&[hidden]));
        store.insert(W, Tensor::from_vec(&[2, hidden], w)?);
        Ok(PolicyParams {
            store,
            input_dim,
            hidden,
        })
    }

    /// Policy sized for a recommender with embedding dimension `embed_dim`;
    /// the hidden width equals `embed_dim`.
    pub fn for_embedding(embed_dim: usize, seed: u64) -> Result<Self> {
        Self::new(feature_dim(embed_dim), embed_dim, seed)
    }

    pub fn from_store(store: ParamStore) -> Result<Self> {
        let w1 = store
            .get(W1)
            .filter(|t| t.shape.len() == 2)
            .ok_or_else(|| Error::Checkpoint(format!("missing {W1}")))?;
        let (hidden, input_dim) = (w1.shape[0], w1.shape[1]);
        let params = Self::new(input_dim, hidden, 0)?;
        if !params.store.same_layout(&store) {
            return Err(Error::Checkpoint("policy tensors have inconsistent shapes".into()));
        }
        Ok(PolicyParams {
            store,
            input_dim,
            hidden,
        })
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    fn pre_activation(&self, x: &[f64]) -> Vec<f64> {
        let w1 = self.store.expect(W1);
        let b1 = self.store.expect(B1);
        (0..self.hidden)
            .map(|h| dot(w1.row(h), x) + b1.data[h])
            .collect()
    }

    /// Output of the state network for input features `x`.
    pub fn state_vector(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        Ok(self.pre_activation(x).into_iter().map(relu).collect())
    }

    fn logit_from_state(&self, s: &[f64]) -> f64 {
        let w = self.store.expect(W);
        dot(w.row(1), s) - dot(w.row(0), s)
    }

    /// `π(a = 1 | s)` for an already-computed state vector.
    pub fn include_prob_from_state(&self, s: &[f64]) -> Result<f64> {
        if s.len() != self.hidden || s.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("state vector is non-finite or misshapen".into()));
        }
        Ok(sigmoid(self.logit_from_state(s)))
    }

    /// `π(a = 1 | x)` from raw state-network input.
    pub fn include_prob(&self, x: &[f64]) -> Result<f64> {
        let s = self.state_vector(x)?;
        self.include_prob_from_state(&s)
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim {
            return invalid(format!(
                "policy expects {} input features, got {}",
                self.input_dim,
                x.len()
            ));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite policy input".into()));
        }
        Ok(())
    }

    /// `log π(action | x)` and its gradient with respect to every parameter.
    pub fn log_prob_grad(&self, x: &[f64], action: u8) -> Result<(f64, ParamStore)> {
        let mut grads = self.store.zeros_like();
        let logp = self.accumulate_log_prob_grad(x, action, 1.0, &mut grads)?;
        Ok((logp, grads))
    }

    /// Adds `weight * ∇ log π(action | x)` into `grads`.
    fn accumulate_log_prob_grad(&self, x: &[f64], action: u8, weight: f64, grads: &mut ParamStore) -> Result<f64> {
        self.check_input(x)?;
        let pre = self.pre_activation(x);
        let s: Vec<f64> = pre.iter().cloned().map(relu).collect();
        let z = self.logit_from_state(&s);
        let p = sigmoid(z);
        let (logp, dz) = if action == 1 {
            (-softplus(-z), 1.0 - p)
        } else {
            (-softplus(z), -p)
        };
        if weight == 0.0 {
            return Ok(logp);
        }
        let g = weight * dz;
        let w = self.store.expect(W);
        {
            let gw = grads.expect_mut(W);
            for h in 0..self.hidden {
                gw.data[self.hidden + h] += g * s[h];
                gw.data[h] -= g * s[h];
            }
        }
        let dh: Vec<f64> = (0..self.hidden)
            .map(|h| {
                if pre[h] > 0.0 {
                    g * (w.data[self.hidden + h] - w.data[h])
                } else {
                    0.0
                }
            })
            .collect();
        {
            let gb = grads.expect_mut(B1);
            for h in 0..self.hidden {
                gb.data[h] += dh[h];
            }
        }
        let gw1 = grads.expect_mut(W1);
        for (h, &dhh) in dh.iter().enumerate() {
            if dhh != 0.0 {
                for (g, &xi) in gw1.row_mut(h).iter_mut().zip(x) {
                    *g += dhh * xi;
                }
            }
        }
        Ok(logp)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            header: CheckpointHeader {
                kind: KIND.into(),
                catalog_size: 0,
                embed_dim: self.hidden,
                rho: 0.0,
                alpha: 0.0,
            },
            tensors: self.store.clone(),
        }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        if ckpt.header.kind != KIND {
            return Err(Error::Checkpoint(format!(
                "expected a policy checkpoint, found kind={}",
                ckpt.header.kind
            )));
        }
        Self::from_store(ckpt.tensors.clone())
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn relu(x: f64) -> f64 {
    x.max(0.0)
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ActionMode {
    Sample,
    Greedy,
}

/// Greedy includes only when the probability is strictly above one half.
pub fn select_action<R: Rng + ?Sized>(include_prob: f64, mode: ActionMode, rng: &mut R) -> u8 {
    match mode {
        ActionMode::Greedy => (include_prob > 0.5) as u8,
        ActionMode::Sample => (rng.gen::<f64>() < include_prob) as u8,
    }
}

/// `G_t = sum_{k >= t} gamma^(k - t) r_k`.
pub fn discounted_returns(rewards: &[f64], gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for (t, &r) in rewards.iter().enumerate().rev() {
        acc = r + gamma * acc;
        out[t] = acc;
    }
    out
}

/// One sampled episode as the trainer sees it.
#[derive(Clone, Debug, PartialEq)]
pub struct Episode {
    pub features: Vec<Vec<f64>>,
    pub actions: Vec<u8>,
    pub rewards: Vec<f64>,
}

impl From<&Transcript> for Episode {
    fn from(t: &Transcript) -> Self {
        let mut rewards = vec![0.0; t.actions.len()];
        if let Some(last) = rewards.last_mut() {
            *last = t.reward.total;
        }
        Episode {
            features: t.features.clone(),
            actions: t.actions.clone(),
            rewards,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainerConfig {
    pub gamma: f64,
    pub learning_rate: f64,
    /// `None` means 50 passes over the training sessions.
    pub max_episodes: Option<usize>,
    pub batch_size: usize,
    pub reward_window: usize,
    pub reward_tol: f64,
    pub param_tol: f64,
    pub baseline: bool,
    pub seed: u64,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        TrainerConfig {
            gamma: 0.95,
            learning_rate: 1e-3,
            max_episodes: None,
            batch_size: 32,
            reward_window: 100,
            reward_tol: 0.0,
            param_tol: 0.0,
            baseline: true,
            seed: 0,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.gamma) {
            return invalid(format!("gamma must lie in [0, 1], got {}", self.gamma));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return invalid("learning rate must be positive");
        }
        if self.batch_size == 0 || self.reward_window == 0 {
            return invalid("batch size and reward window must be at least 1");
        }
        if !(self.reward_tol >= 0.0) || !(self.param_tol >= 0.0) {
            return invalid("tolerances must be non-negative");
        }
        Ok(())
    }
}

/// Ascent direction of the REINFORCE objective,
/// `mean_episodes sum_t ∇ log π(a_t | s_t) (G_t - b)`, together with the
/// loss `-mean_episodes G_0`.
pub fn policy_gradient(params: &PolicyParams, episodes: &[Episode], config: &TrainerConfig) -> Result<(ParamStore, f64)> {
    if episodes.is_empty() {
        return invalid("REINFORCE update needs at least one episode");
    }
    let returns: Vec<Vec<f64>> = episodes
        .iter()
        .map(|e| discounted_returns(&e.rewards, config.gamma))
        .collect();
    let baseline = if config.baseline {
        let count: usize = returns.iter().map(Vec::len).sum();
        returns.iter().flatten().sum::<f64>() / count.max(1) as f64
    } else {
        0.0
    };
    let per_episode: Vec<ParamStore> = episodes
        .par_iter()
        .zip(returns.par_iter())
        .map(|(episode, g)| {
            let mut grads = params.store.zeros_like();
            for ((x, &a), &ret) in episode.features.iter().zip(&episode.actions).zip(g) {
                params.accumulate_log_prob_grad(x, a, ret - baseline, &mut grads)?;
            }
            Ok(grads)
        })
        .collect::<Result<_>>()?;
    let mut total = params.store.zeros_like();
    for g in &per_episode {
        total.add_scaled(g, 1.0)?;
    }
    total.scale(1.0 / episodes.len() as f64);
    let loss = -returns
        .iter()
        .map(|g| g.first().copied().unwrap_or(0.0))
        .sum::<f64>()
        / episodes.len() as f64;
    Ok((total, loss))
}

pub fn reinforce_update(params: &PolicyParams, episodes: &[Episode], config: &TrainerConfig) -> Result<(PolicyParams, f64)> {
    let (ascent, loss) = policy_gradient(params, episodes, config)?;
    let mut updated = params.clone();
    updated.store.add_scaled(&ascent, config.learning_rate)?;
    if !updated.store.is_finite() {
        return Err(Error::Numeric("policy parameters diverged".into()));
    }
    Ok((updated, loss))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnvConfig {
    pub k: usize,
    pub rewards: RewardConfig,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            k: 10,
            rewards: RewardConfig::default(),
        }
    }
}

/// One row per policy update.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub episode: usize,
    pub mean_reward: f64,
    pub r_fe_rate: f64,
    pub r_cfe_rate: f64,
    pub mean_complexity: f64,
    pub loss: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum StopReason {
    MaxEpisodes,
    RewardConverged,
    ParamsConverged,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainingLog {
    pub rows: Vec<LogRow>,
    pub episode_rewards: Vec<f64>,
    pub stop: StopReason,
}

impl TrainingLog {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for row in &self.rows {
            w.serialize(row)?;
        }
        w.flush()?;
        Ok(())
    }
}

pub(crate) fn thread_pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("cannot start worker pool: {e}")))
}

pub fn build_tasks<'r>(sessions: &[Session], recommender: &'r dyn Recommender, env: &EnvConfig) -> Result<Vec<ExplainTask<'r>>> {
    sessions
        .iter()
        .filter(|s| s.len() >= 2)
        .map(|s| Ok(ExplainTask::new(s.clone(), recommender, env.k)?.with_rewards(env.rewards)))
        .collect()
}

fn sample_episode(params: &PolicyParams, task: &ExplainTask<'_>, episode_seed: u64) -> Result<Transcript> {
    let mut rng = seed::rng(episode_seed);
    task.rollout(|state| {
        let p = params.include_prob(&state.features)?;
        Ok(select_action(p, ActionMode::Sample, &mut rng))
    })
}

/// Train a fresh policy with REINFORCE over `sessions`. Rollouts fan out
/// over `workers` threads; results do not depend on the worker count.
pub fn train_explainer(
    sessions: &[Session],
    recommender: &dyn Recommender,
    env: &EnvConfig,
    config: &TrainerConfig,
    workers: usize,
) -> Result<(PolicyParams, TrainingLog)> {
    config.validate()?;
    let tasks = build_tasks(sessions, recommender, env)?;
    let params = PolicyParams::for_embedding(recommender.embed_dim(), seed::derive_seed(config.seed, "policy-init"))?;
    train_policy(params, &tasks, config, workers)
}

/// REINFORCE loop starting from `params`.
pub fn train_policy(
    mut params: PolicyParams,
    tasks: &[ExplainTask<'_>],
    config: &TrainerConfig,
    workers: usize,
) -> Result<(PolicyParams, TrainingLog)> {
    config.validate()?;
    let budget = config.max_episodes.unwrap_or(50 * tasks.len());
    let mut log = TrainingLog {
        rows: Vec::new(),
        episode_rewards: Vec::new(),
        stop: StopReason::MaxEpisodes,
    };
    if tasks.is_empty() || budget == 0 {
        return Ok((params, log));
    }
    let pool = thread_pool(workers.max(1))?;
    let mut order_rng = seed::rng(seed::derive_seed(config.seed, "episode-order"));
    let rollout_seed = seed::derive_seed(config.seed, "rollouts");
    let mut order: Vec<usize> = (0..tasks.len()).collect();
    let mut done = 0usize;

    'epochs: loop {
        order.shuffle(&mut order_rng);
        for chunk in order.chunks(config.batch_size) {
            let take = chunk.len().min(budget - done);
            let batch = &chunk[..take];
            let transcripts: Vec<Transcript> = pool.install(|| {
                batch
                    .par_iter()
                    .enumerate()
                    .map(|(j, &ti)| {
                        sample_episode(&params, &tasks[ti], seed::indexed_seed(rollout_seed, (done + j) as u64))
                    })
                    .collect::<Result<_>>()
            })?;
            let episodes: Vec<Episode> = transcripts.iter().map(Episode::from).collect();
            let (updated, loss) = pool.install(|| reinforce_update(&params, &episodes, config))?;

            let mut delta = updated.store.clone();
            delta.add_scaled(&params.store, -1.0)?;
            params = updated;
            done += take;

            let n = transcripts.len() as f64;
            let rate = |f: fn(&Transcript) -> f64| transcripts.iter().map(f).sum::<f64>() / n;
            log.rows.push(LogRow {
                episode: done,
                mean_reward: rate(|t| t.reward.total),
                r_fe_rate: rate(|t| t.reward.r_fe),
                r_cfe_rate: rate(|t| t.reward.r_cfe),
                mean_complexity: rate(|t| t.mask.complexity() as f64),
                loss,
            });
            log.episode_rewards
                .extend(transcripts.iter().map(|t| t.reward.total));

            if done >= budget {
                break 'epochs;
            }
            if delta.norm() < config.param_tol {
                log.stop = StopReason::ParamsConverged;
                break 'epochs;
            }
            let w = config.reward_window;
            let history = &log.episode_rewards;
            if history.len() >= 2 * w {
                let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
                let recent = mean(&history[history.len() - w..]);
                let previous = mean(&history[history.len() - 2 * w..history.len() - w]);
                if (recent - previous).abs() < config.reward_tol {
                    log.stop = StopReason::RewardConverged;
                    break 'epochs;
                }
            }
        }
    }
    Ok((params, log))
}

/// Greedy rollout of the trained policy, with verdicts re-derived from the
/// recommender.
pub fn explain(params: &PolicyParams, task: &ExplainTask<'_>) -> Result<ExplanationRecord> {
    let mut probs = Vec::with_capacity(task.session().len());
    let transcript = task.rollout(|state| {
        let p = params.include_prob(&state.features)?;
        probs.push(p);
        Ok(select_action(p, ActionMode::Greedy, &mut rand::rngs::mock::StepRng::new(0, 0)))
    })?;
    record_from_transcript(task, &transcript, Some(&probs))
}

pub(crate) fn record_from_transcript(
    task: &ExplainTask<'_>,
    transcript: &Transcript,
    probs: Option<&[f64]>,
) -> Result<ExplanationRecord> {
    let (factual_ok, counterfactual_ok) = task.verify(&transcript.mask)?;
    let view = crate::model::apply_mask(&task.session().items, &transcript.mask)?;
    let n = transcript.actions.len();
    let trace = probs.map(|probs| {
        transcript
            .actions
            .iter()
            .enumerate()
            .map(|(t, &action)| TraceStep {
                step: t,
                item: task.session().items[t],
                include_prob: probs[t],
                action,
                reward: if t + 1 == n { transcript.reward.total } else { 0.0 },
            })
            .collect()
    });
    Ok(ExplanationRecord {
        session_id: task.session().id.clone(),
        items: task.session().items.clone(),
        target: task.target(),
        mask: transcript.mask.clone(),
        factual_ok,
        counterfactual_ok,
        complexity: transcript.mask.complexity(),
        rank: task.target_rank(&view.selected)?,
        reward: transcript.reward,
        trace,
    })
}

/// Explain every task, in parallel over `workers` threads.
pub fn explain_all(params: &PolicyParams, tasks: &[ExplainTask<'_>], workers: usize) -> Result<Vec<ExplanationRecord>> {
    let pool = thread_pool(workers.max(1))?;
    pool.install(|| tasks.par_iter().map(|t| explain(params, t)).collect())
}
