//! Explanation quality (PS, PN, F_ns, average length), next-item ranking
//! quality (HR@K, NDCG@K) and the random-selection explanation baseline.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::{ExplainTask, Transcript};
use crate::error::{invalid, Result};
use crate::model::{ExplanationRecord, Mask, Session};
use crate::policy::{build_tasks, record_from_transcript, EnvConfig};
use crate::recommender::Recommender;
use crate::seed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExplanationReport {
    pub pn: f64,
    pub ps: f64,
    pub f_ns: f64,
    pub avg_len: f64,
    pub n_sessions: usize,
}

/// Harmonic mean of PN and PS; zero when both are zero.
pub fn f_ns(pn: f64, ps: f64) -> f64 {
    if pn + ps > 0.0 {
        2.0 * pn * ps / (pn + ps)
    } else {
        0.0
    }
}

pub fn explanation_metrics(records: &[ExplanationRecord]) -> Result<ExplanationReport> {
    if records.is_empty() {
        return invalid("no explanation records to evaluate");
    }
    let n = records.len() as f64;
    let ps = records.iter().filter(|r| r.factual_ok).count() as f64 / n;
    let pn = records.iter().filter(|r| r.counterfactual_ok).count() as f64 / n;
    Ok(ExplanationReport {
        pn,
        ps,
        f_ns: f_ns(pn, ps),
        avg_len: records.iter().map(|r| r.complexity as f64).sum::<f64>() / n,
        n_sessions: records.len(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankMetrics {
    pub hr: f64,
    pub ndcg: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecReport {
    pub at: BTreeMap<usize, RankMetrics>,
    pub n_sessions: usize,
    /// Test sessions shorter than two items, which have no input prefix.
    pub skipped: usize,
}

/// Gain of a single relevant item at 1-based `rank` under cutoff `k`.
pub fn ndcg_gain(rank: usize, k: usize) -> f64 {
    if rank <= k {
        1.0 / ((rank + 1) as f64).log2()
    } else {
        0.0
    }
}

/// Ranks of each test session's last item given the preceding items.
fn target_ranks(test: &[Session], recommender: &dyn Recommender) -> Result<(Vec<usize>, usize)> {
    let mut ranks = Vec::with_capacity(test.len());
    let mut skipped = 0;
    for session in test {
        match session.items.split_last() {
            Some((&target, prefix)) if !prefix.is_empty() => {
                ranks.push(recommender.rank_of(prefix, target)?);
            }
            _ => skipped += 1,
        }
    }
    if ranks.is_empty() {
        return invalid("no test session has at least two items");
    }
    Ok((ranks, skipped))
}

pub fn rec_metrics(test: &[Session], recommender: &dyn Recommender, ks: &[usize]) -> Result<RecReport> {
    if ks.contains(&0) {
        return invalid("cutoffs must be at least 1");
    }
    let (ranks, skipped) = target_ranks(test, recommender)?;
    let n = ranks.len() as f64;
    let at = ks
        .iter()
        .map(|&k| {
            let hr = ranks.iter().filter(|&&r| r <= k).count() as f64 / n;
            let ndcg = ranks.iter().map(|&r| ndcg_gain(r, k)).sum::<f64>() / n;
            (k, RankMetrics { hr, ndcg })
        })
        .collect();
    Ok(RecReport {
        at,
        n_sessions: ranks.len(),
        skipped,
    })
}

pub fn hr_at_k(test: &[Session], recommender: &dyn Recommender, k: usize) -> Result<f64> {
    Ok(rec_metrics(test, recommender, &[k])?.at[&k].hr)
}

pub fn ndcg_at_k(test: &[Session], recommender: &dyn Recommender, k: usize) -> Result<f64> {
    Ok(rec_metrics(test, recommender, &[k])?.at[&k].ndcg)
}

/// Keep each item independently with probability `keep_prob`; one draw per
/// session, sessions visited in order.
pub fn random_explanations(
    sessions: &[Session],
    recommender: &dyn Recommender,
    env: &EnvConfig,
    keep_prob: f64,
    seed: u64,
) -> Result<Vec<ExplanationRecord>> {
    if !(keep_prob > 0.0 && keep_prob < 1.0) {
        return invalid(format!("keep probability must lie in (0, 1), got {keep_prob}"));
    }
    let tasks = build_tasks(sessions, recommender, env)?;
    let mut rng = seed::rng(seed);
    tasks
        .iter()
        .map(|task| {
            let bits: Vec<u8> = (0..task.session().len())
                .map(|_| (rng.gen::<f64>() < keep_prob) as u8)
                .collect();
            record_for_mask(task, Mask::from_bits(bits)?)
        })
        .collect()
}

/// Explanation record for an externally chosen mask.
pub fn record_for_mask(task: &ExplainTask<'_>, mask: Mask) -> Result<ExplanationRecord> {
    let transcript = Transcript {
        features: Vec::new(),
        actions: mask.bits().to_vec(),
        reward: task.terminal_reward(&mask)?,
        mask,
    };
    record_from_transcript(task, &transcript, None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::recommender::MarkovCountRecommender;

    fn record(factual_ok: bool, counterfactual_ok: bool, complexity: usize) -> ExplanationRecord {
        ExplanationRecord {
            session_id: "s".into(),
            items: vec![0; complexity.max(1)],
            target: 0,
            mask: Mask::ones(complexity),
            factual_ok,
            counterfactual_ok,
            complexity,
            rank: 1,
            reward: Default::default(),
            trace: None,
        }
    }

    #[test]
    fn fractions_and_harmonic_mean() {
        let records: Vec<_> = (0..10).map(|i| record(i < 7, true, 2)).collect();
        let r = explanation_metrics(&records).unwrap();
        assert!((r.ps - 0.7).abs() < 1e-15);
        assert_eq!(r.pn, 1.0);
        assert_eq!(r.avg_len, 2.0);
        assert!((f_ns(1.0, 0.5) - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(f_ns(0.0, 0.0), 0.0);
        assert!(explanation_metrics(&[]).is_err());
    }

    #[test]
    fn ndcg_gains() {
        assert_eq!(ndcg_gain(1, 10), 1.0);
        assert_eq!(ndcg_gain(3, 10), 0.5);
        assert_eq!(ndcg_gain(11, 10), 0.0);
    }

    #[test]
    fn perfect_and_full_catalog_hit_rates() {
        // 0 -> 1 -> 2 -> 0
        let sessions = vec![Session::new("a", vec![0, 1, 2, 0, 1, 2, 0])];
        let rec = MarkovCountRecommender::fit(&sessions, 4, 0.1).unwrap();
        let test = vec![Session::new("t1", vec![0, 1]), Session::new("t2", vec![2, 0]), Session::new("short", vec![1])];
        let report = rec_metrics(&test, &rec, &[1, 4]).unwrap();
        assert_eq!(report.at[&1].hr, 1.0);
        assert_eq!(report.at[&4].hr, 1.0);
        assert_eq!(report.skipped, 1);
        assert_eq!(hr_at_k(&test, &rec, 1).unwrap(), 1.0);
        assert_eq!(ndcg_at_k(&test, &rec, 1).unwrap(), 1.0);
        assert!(rec_metrics(&test[2..], &rec, &[1]).is_err());
    }

    #[test]
    fn random_baseline_is_seeded() {
        let sessions: Vec<_> = (0..20)
            .map(|i| Session::new(format!("s{i}"), vec![i % 4, (i + 1) % 4, (i + 2) % 4]))
            .collect();
        let rec = MarkovCountRecommender::fit(&sessions, 4, 0.1).unwrap();
        let env = EnvConfig { k: 2, ..EnvConfig::default() };
        let a = random_explanations(&sessions, &rec, &env, 0.5, 3).unwrap();
        assert_eq!(a, random_explanations(&sessions, &rec, &env, 0.5, 3).unwrap());
        assert_ne!(a, random_explanations(&sessions, &rec, &env, 0.5, 4).unwrap());
        assert!(random_explanations(&sessions, &rec, &env, 1.0, 3).is_err());
        // near-certain keep behaves like the all-ones mask
        for r in random_explanations(&sessions, &rec, &env, 1.0 - 1e-12, 3).unwrap() {
            assert_eq!(r.complexity, r.items.len());
        }
    }
}
