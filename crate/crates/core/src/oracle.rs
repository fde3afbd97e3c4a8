//! Exhaustive solver for the minimum-size explanation problem: enumerate
//! all `2^|S|` masks, keep the ones that satisfy both conditions, return
//! the smallest.
//!
//! Among optima of equal size the lexicographically smallest bit pattern
//! (read left to right, `0 < 1`) wins, so results are deterministic.

use std::collections::HashMap;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env::ExplainTask;
use crate::error::{Error, Result};
use crate::model::{ExplanationRecord, ItemId, Mask};

pub const DEFAULT_MAX_LEN: usize = 20;
/// Masks per parallel shard.
const SHARD: u64 = 1 << 12;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OracleResult {
    pub feasible: bool,
    pub optimal_mask: Option<Mask>,
    pub optimal_complexity: Option<usize>,
    pub feasible_count: u64,
    pub enumerated: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EnumerationOrder {
    Forward,
    Reverse,
}

/// Ordering key: size first, then the bit pattern with position 0 as the
/// most significant bit.
fn mask_key(code: u64, len: usize) -> (u32, u64) {
    let mut lex = 0u64;
    for i in 0..len {
        lex = (lex << 1) | ((code >> i) & 1);
    }
    (code.count_ones(), lex)
}

struct Shard {
    best: Option<((u32, u64), u64)>,
    feasible: u64,
}

fn target_in_topk_memo(
    task: &ExplainTask<'_>,
    memo: &mut HashMap<Vec<ItemId>, bool>,
    items: Vec<ItemId>,
) -> Result<bool> {
    if let Some(&hit) = memo.get(&items) {
        return Ok(hit);
    }
    let hit = task.target_in_topk(&items)?;
    memo.insert(items, hit);
    Ok(hit)
}

fn scan(task: &ExplainTask<'_>, codes: impl Iterator<Item = u64>) -> Result<Shard> {
    let items = &task.session().items;
    let len = items.len();
    let mut memo = HashMap::new();
    let mut shard = Shard {
        best: None,
        feasible: 0,
    };
    for code in codes {
        let mut selected = Vec::with_capacity(len);
        let mut remainder = Vec::with_capacity(len);
        for (i, &item) in items.iter().enumerate() {
            if (code >> i) & 1 == 1 {
                selected.push(item);
            } else {
                remainder.push(item);
            }
        }
        if !target_in_topk_memo(task, &mut memo, selected)? {
            continue;
        }
        if target_in_topk_memo(task, &mut memo, remainder)? {
            continue;
        }
        shard.feasible += 1;
        let key = mask_key(code, len);
        if shard.best.is_none_or(|(k, _)| key < k) {
            shard.best = Some((key, code));
        }
    }
    Ok(shard)
}

pub fn solve_exact(task: &ExplainTask<'_>, max_len: usize) -> Result<OracleResult> {
    solve_exact_ordered(task, max_len, EnumerationOrder::Forward)
}

/// Same as [`solve_exact`] with an explicit enumeration order. Shards run on
/// the current rayon pool and are merged by minimum key.
pub fn solve_exact_ordered(task: &ExplainTask<'_>, max_len: usize, order: EnumerationOrder) -> Result<OracleResult> {
    let len = task.session().len();
    if len > max_len || len >= 63 {
        return Err(Error::TooLong { len, max: max_len });
    }
    let total = 1u64 << len;
    let shards = total.div_ceil(SHARD);
    let results: Vec<Shard> = (0..shards)
        .into_par_iter()
        .map(|s| {
            let lo = s * SHARD;
            let hi = (lo + SHARD).min(total);
            match order {
                EnumerationOrder::Forward => scan(task, lo..hi),
                EnumerationOrder::Reverse => scan(task, (lo..hi).rev().map(|c| total - 1 - c)),
            }
        })
        .collect::<Result<_>>()?;

    let feasible_count = results.iter().map(|s| s.feasible).sum();
    let best = results.iter().filter_map(|s| s.best).min_by_key(|&(k, _)| k);
    let optimal_mask = best.map(|(_, code)| Mask::from_code(code, len));
    Ok(OracleResult {
        feasible: optimal_mask.is_some(),
        optimal_complexity: optimal_mask.as_ref().map(Mask::complexity),
        optimal_mask,
        feasible_count,
        enumerated: total,
    })
}

/// Solve every task on a pool of `workers` threads. Tasks longer than
/// `max_len` yield `None`; output order follows `tasks`.
pub fn solve_all(tasks: &[ExplainTask<'_>], max_len: usize, workers: usize) -> Result<Vec<Option<OracleResult>>> {
    let pool = crate::policy::thread_pool(workers.max(1))?;
    pool.install(|| {
        tasks
            .par_iter()
            .map(|task| match solve_exact(task, max_len) {
                Ok(r) => Ok(Some(r)),
                Err(Error::TooLong { .. }) => Ok(None),
                Err(e) => Err(e),
            })
            .collect()
    })
}

/// Re-evaluate both conditions for `mask` directly against the recommender.
pub fn verify(task: &ExplainTask<'_>, mask: &Mask) -> Result<(bool, bool)> {
    task.verify(mask)
}

/// One line of the oracle-vs-agent comparison.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleReportRow {
    pub session_id: String,
    pub feasible: bool,
    pub optimal_complexity: Option<usize>,
    pub rl_complexity: usize,
    pub rl_feasible: bool,
    /// Agent complexity minus optimum, when both are feasible.
    pub gap: Option<i64>,
}

impl OracleReportRow {
    pub fn new(result: &OracleResult, record: &ExplanationRecord) -> Self {
        let rl_feasible = record.conditions_met();
        OracleReportRow {
            session_id: record.session_id.clone(),
            feasible: result.feasible,
            optimal_complexity: result.optimal_complexity,
            rl_complexity: record.complexity,
            rl_feasible,
            gap: match (result.optimal_complexity, rl_feasible) {
                (Some(opt), true) => Some(record.complexity as i64 - opt as i64),
                _ => None,
            },
        }
    }
}

pub fn write_report_csv<W: Write>(rows: &[OracleReportRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}
