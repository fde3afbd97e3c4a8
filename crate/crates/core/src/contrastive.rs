//! Contrastive fine-tuning with explanation-derived views: the selected
//! sub-session is the positive view of its session and the remainders of
//! all batch members are negatives.

use std::collections::HashMap;
use std::io::Write;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::model::{apply_mask, ExplanationRecord, ItemId, Session};
use crate::params::ParamStore;
use crate::recommender::{next_item_pairs, NeuralEmbeddingRecommender, Recommender};
use crate::seed;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FinetuneTriple {
    pub anchor: Vec<ItemId>,
    pub positive: Vec<ItemId>,
    pub negative: Vec<ItemId>,
    pub target: ItemId,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TripleSet {
    pub triples: Vec<FinetuneTriple>,
    /// Records with an empty selected sub-session, or whose session is unknown.
    pub dropped: usize,
}

/// One triple per record with a non-empty explanation. The session items
/// come from `sessions` (matched by id).
pub fn build_triples(records: &[ExplanationRecord], sessions: &[Session]) -> TripleSet {
    let by_id: HashMap<&str, &Session> = sessions.iter().map(|s| (s.id.as_str(), s)).collect();
    let mut triples = Vec::with_capacity(records.len());
    let mut dropped = 0;
    for record in records {
        let view = by_id
            .get(record.session_id.as_str())
            .and_then(|s| apply_mask(&s.items, &record.mask).ok().map(|v| (s, v)));
        match view {
            Some((session, view)) if !view.selected.is_empty() => triples.push(FinetuneTriple {
                anchor: session.items.clone(),
                positive: view.selected,
                negative: view.remainder,
                target: record.target,
            }),
            _ => dropped += 1,
        }
    }
    TripleSet { triples, dropped }
}

/// Which views enter the contrastive objective.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContrastiveMode {
    /// `-log(e^{s+} / (e^{s+} + sum_k e^{s-_k}))`
    #[default]
    Both,
    /// `-log(e^{s+} / (e^{s+} + 1))`: only pulls the positive closer.
    PosOnly,
    /// `log(1 + sum_k e^{s-_k})`: only pushes the negatives away.
    NegOnly,
}

impl FromStr for ContrastiveMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "both" => Ok(ContrastiveMode::Both),
            "pos_only" => Ok(ContrastiveMode::PosOnly),
            "neg_only" => Ok(ContrastiveMode::NegOnly),
            _ => invalid(format!("unknown contrastive mode {s:?}")),
        }
    }
}

impl ContrastiveMode {
    pub fn as_str(self) -> &'static str {
        match self {
            ContrastiveMode::Both => "both",
            ContrastiveMode::PosOnly => "pos_only",
            ContrastiveMode::NegOnly => "neg_only",
        }
    }
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Per-anchor loss and its derivatives with respect to the positive and
/// negative similarities (before temperature scaling).
pub fn anchor_term(mode: ContrastiveMode, pos: f64, negs: &[f64], tau: f64) -> (f64, f64, Vec<f64>) {
    let mut logits = Vec::with_capacity(negs.len() + 1);
    match mode {
        ContrastiveMode::Both => {
            logits.push(pos / tau);
            logits.extend(negs.iter().map(|s| s / tau));
        }
        ContrastiveMode::PosOnly => logits.extend([pos / tau, 0.0]),
        ContrastiveMode::NegOnly => {
            logits.push(0.0);
            logits.extend(negs.iter().map(|s| s / tau));
        }
    }
    let lse = log_sum_exp(&logits);
    let soft: Vec<f64> = logits.iter().map(|l| (l - lse).exp()).collect();
    match mode {
        ContrastiveMode::Both => (
            lse - pos / tau,
            (soft[0] - 1.0) / tau,
            soft[1..].iter().map(|p| p / tau).collect(),
        ),
        ContrastiveMode::PosOnly => (lse - pos / tau, (soft[0] - 1.0) / tau, vec![0.0; negs.len()]),
        ContrastiveMode::NegOnly => (lse, 0.0, soft[1..].iter().map(|p| p / tau).collect()),
    }
}

/// Cosine similarity and its gradients; `None` when either vector is zero.
fn cosine_with_grads(u: &[f64], v: &[f64]) -> Option<(f64, Vec<f64>, Vec<f64>)> {
    let nu = u.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if nu == 0.0 || nv == 0.0 {
        return None;
    }
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    let c = dot / (nu * nv);
    let du = u.iter().zip(v).map(|(a, b)| b / (nu * nv) - c * a / (nu * nu)).collect();
    let dv = u.iter().zip(v).map(|(a, b)| a / (nu * nv) - c * b / (nv * nv)).collect();
    Some((c, du, dv))
}

pub fn cosine(u: &[f64], v: &[f64]) -> f64 {
    cosine_with_grads(u, v).map_or(0.0, |(c, _, _)| c)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ContrastiveLoss {
    /// Sum over the batch, not the mean.
    pub loss: f64,
    pub grads: ParamStore,
    /// Similarities that involved a zero embedding and were taken as 0.
    pub degenerate: usize,
}

pub fn contrastive_loss(
    batch: &[FinetuneTriple],
    recommender: &NeuralEmbeddingRecommender,
    temperature: f64,
    mode: ContrastiveMode,
) -> Result<ContrastiveLoss> {
    if batch.len() < 2 {
        return invalid("contrastive batches need at least two triples");
    }
    if !(temperature > 0.0) {
        return invalid("temperature must be positive");
    }
    let encode_all = |f: fn(&FinetuneTriple) -> &Vec<ItemId>| -> Result<Vec<Vec<f64>>> {
        batch.iter().map(|t| recommender.encode(f(t))).collect()
    };
    let anchors = encode_all(|t| &t.anchor)?;
    let positives = encode_all(|t| &t.positive)?;
    let negatives = encode_all(|t| &t.negative)?;
    let d = recommender.embed_dim();

    let mut g_anchor = vec![vec![0.0; d]; batch.len()];
    let mut g_pos = vec![vec![0.0; d]; batch.len()];
    let mut g_neg = vec![vec![0.0; d]; batch.len()];
    let mut degenerate = 0;
    let mut loss = 0.0;

    for i in 0..batch.len() {
        let mut sim = |v: &[f64]| match cosine_with_grads(&anchors[i], v) {
            Some(x) => x,
            None => {
                degenerate += 1;
                (0.0, vec![0.0; d], vec![0.0; d])
            }
        };
        let (pos, pos_da, pos_dv) = sim(&positives[i]);
        let neg: Vec<_> = negatives.iter().map(|n| sim(n)).collect();
        let neg_sims: Vec<f64> = neg.iter().map(|x| x.0).collect();
        let (term, d_pos, d_neg) = anchor_term(mode, pos, &neg_sims, temperature);
        loss += term;
        for j in 0..d {
            g_anchor[i][j] += d_pos * pos_da[j];
            g_pos[i][j] += d_pos * pos_dv[j];
        }
        for (k, ((_, da, dv), &w)) in neg.iter().zip(&d_neg).enumerate() {
            for j in 0..d {
                g_anchor[i][j] += w * da[j];
                g_neg[k][j] += w * dv[j];
            }
        }
    }

    let mut grads = recommender.params().zeros_like();
    for (i, t) in batch.iter().enumerate() {
        recommender.backprop_encode(&t.anchor, &g_anchor[i], &mut grads);
        recommender.backprop_encode(&t.positive, &g_pos[i], &mut grads);
        recommender.backprop_encode(&t.negative, &g_neg[i], &mut grads);
    }
    Ok(ContrastiveLoss {
        loss,
        grads,
        degenerate,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FinetuneConfig {
    pub lambda: f64,
    pub temperature: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub mode: ContrastiveMode,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        FinetuneConfig {
            lambda: 0.5,
            temperature: 1.0,
            batch_size: 32,
            epochs: 10,
            learning_rate: 0.5,
            seed: 0,
            mode: ContrastiveMode::Both,
        }
    }
}

pub const LAMBDA_SWEEP: [f64; 8] = [0.1, 0.3, 0.5, 0.8, 1.0, 5.0, 10.0, 15.0];

impl FinetuneConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return invalid("lambda must be finite and non-negative");
        }
        if !(self.temperature > 0.0) {
            return invalid("temperature must be positive");
        }
        if self.batch_size < 2 {
            return invalid("batch size must be at least 2");
        }
        if !(self.learning_rate > 0.0) {
            return invalid("learning rate must be positive");
        }
        Ok(())
    }

    /// The same configuration restricted to one ablation variant.
    pub fn ablation(&self, mode: ContrastiveMode) -> Self {
        FinetuneConfig {
            mode,
            ..self.clone()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRow {
    pub epoch: usize,
    pub l_rec: f64,
    pub l_c: f64,
    pub total: f64,
}

pub fn write_loss_csv<W: Write>(rows: &[LossRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

/// Minimise `L_rec + lambda * L_c` by mini-batch gradient descent.
///
/// Each step takes one batch of (prefix, next item) pairs from
/// `train_sessions` and the next batch of triples (cycling). `L_c` enters as
/// a per-triple mean. With `lambda = 0` the parameter trajectory is exactly
/// that of [`NeuralEmbeddingRecommender::train`] under the same seed.
/// Fixed in-batch negative groups: one seeded shuffle per run, cut into
/// batches of `batch_size`; a trailing singleton joins the previous group.
fn triple_batches(n: usize, batch_size: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seed::rng(seed));
    let mut groups: Vec<Vec<usize>> = order.chunks(batch_size).map(<[usize]>::to_vec).collect();
    if groups.len() > 1 && groups.last().is_some_and(|g| g.len() < 2) {
        let tail = groups.pop().unwrap();
        groups.last_mut().unwrap().extend(tail);
    }
    groups
}

pub fn finetune(
    recommender: &dyn Recommender,
    triples: &[FinetuneTriple],
    train_sessions: &[Session],
    config: &FinetuneConfig,
) -> Result<(NeuralEmbeddingRecommender, Vec<LossRow>)> {
    let mut model = recommender
        .as_trainable()
        .ok_or_else(|| Error::Unsupported("fine-tuning needs a trainable recommender".into()))?
        .clone();
    config.validate()?;
    if triples.is_empty() {
        return invalid("no explanation triples to fine-tune with");
    }
    let pairs = next_item_pairs(train_sessions);
    if pairs.is_empty() {
        return Err(Error::EmptyDataset("no (prefix, next item) pairs to train on".into()));
    }
    let use_contrastive = config.lambda > 0.0 && triples.len() >= 2;

    let mut rng = seed::rng(config.seed);
    let groups = triple_batches(triples.len(), config.batch_size, seed::derive_seed(config.seed, "triples"));
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut rows = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let (mut sum_rec, mut sum_c, mut anchors) = (0.0, 0.0, 0usize);
        for (step, chunk) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<_> = chunk.iter().map(|&i| pairs[i].clone()).collect();
            let (l_rec, mut grads) = model.loss_and_grads(&batch)?;
            if use_contrastive {
                let group = &groups[step % groups.len()];
                let tb: Vec<FinetuneTriple> = group.iter().map(|&i| triples[i].clone()).collect();
                let c = contrastive_loss(&tb, &model, config.temperature, config.mode)?;
                grads.add_scaled(&c.grads, config.lambda / tb.len() as f64)?;
                sum_c += c.loss;
                anchors += tb.len();
            }
            model.apply_grads(&grads, config.learning_rate)?;
            sum_rec += l_rec * chunk.len() as f64;
        }
        let l_rec = sum_rec / pairs.len() as f64;
        let l_c = if anchors > 0 { sum_c / anchors as f64 } else { 0.0 };
        rows.push(LossRow {
            epoch,
            l_rec,
            l_c,
            total: l_rec + config.lambda * l_c,
        });
    }
    if !model.params().is_finite() {
        return Err(Error::Numeric("fine-tuning diverged".into()));
    }
    Ok((model, rows))
}
