//! Interaction-log ingestion, preprocessing, splitting, and a planted
//! synthetic generator.

use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::model::{Catalog, ItemId, Session};
use crate::seed;

const SECONDS_PER_DAY: i64 = 86_400;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RawInteraction {
    pub user_id: String,
    pub item_key: String,
    pub timestamp: i64,
}

/// Parse a tab-separated `user_id, item_key, timestamp` log. A first line
/// whose timestamp column is not an integer is treated as a header.
pub fn parse_interactions<R: BufRead>(reader: R) -> Result<Vec<RawInteraction>> {
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(Error::Parse {
                line: idx + 1,
                msg: format!("expected 3 tab-separated fields, found {}", fields.len()),
            });
        }
        let timestamp = match fields[2].trim().parse::<i64>() {
            Ok(ts) => ts,
            Err(_) if idx == 0 => continue,
            Err(_) => {
                return Err(Error::Parse {
                    line: idx + 1,
                    msg: format!("timestamp {:?} is not an integer", fields[2]),
                })
            }
        };
        if timestamp < 0 {
            return Err(Error::Parse {
                line: idx + 1,
                msg: "timestamps must be non-negative".into(),
            });
        }
        out.push(RawInteraction {
            user_id: fields[0].to_string(),
            item_key: fields[1].to_string(),
            timestamp,
        });
    }
    Ok(out)
}

pub fn write_interactions<W: Write>(interactions: &[RawInteraction], mut out: W) -> Result<()> {
    for i in interactions {
        writeln!(out, "{}\t{}\t{}", i.user_id, i.item_key, i.timestamp)?;
    }
    Ok(())
}

/// A session before catalog ids are assigned.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RawSession {
    pub session_id: String,
    pub user_id: String,
    pub items: Vec<String>,
}

/// Group each user's interactions by UTC calendar day. Users are visited in
/// lexicographic order, days in ascending order; equal timestamps keep
/// their input order.
pub fn sessionize(interactions: &[RawInteraction]) -> Vec<RawSession> {
    let mut by_user: BTreeMap<&str, Vec<&RawInteraction>> = BTreeMap::new();
    for i in interactions {
        by_user.entry(&i.user_id).or_default().push(i);
    }
    let mut out = Vec::new();
    for (user, mut events) in by_user {
        events.sort_by_key(|e| e.timestamp);
        let mut current: Option<(i64, RawSession)> = None;
        for e in events {
            let day = e.timestamp.div_euclid(SECONDS_PER_DAY);
            match &mut current {
                Some((d, s)) if *d == day => s.items.push(e.item_key.clone()),
                _ => {
                    out.extend(current.take().map(|(_, s)| s));
                    current = Some((
                        day,
                        RawSession {
                            session_id: format!("{user}:{day}"),
                            user_id: user.to_string(),
                            items: vec![e.item_key.clone()],
                        },
                    ));
                }
            }
        }
        out.extend(current.map(|(_, s)| s));
    }
    out
}

/// A session together with the user it came from.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionRecord {
    pub session_id: String,
    pub user_id: String,
    pub items: Vec<ItemId>,
}

impl SessionRecord {
    pub fn session(&self) -> Session {
        Session::new(self.session_id.clone(), self.items.clone())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FilterConfig {
    pub min_len: usize,
    /// Items with fewer interactions are dropped.
    pub min_item_freq: usize,
    /// Items with more interactions are dropped; `None` disables the bound.
    pub max_item_freq: Option<usize>,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            min_len: 2,
            min_item_freq: 1,
            max_item_freq: Some(100),
        }
    }
}

/// Drop short sessions and out-of-bounds items, repeating until nothing
/// changes, then assign dense ids in lexicographic order of item keys.
pub fn filter_sessions(sessions: &[RawSession], config: &FilterConfig) -> Result<(Vec<SessionRecord>, Catalog)> {
    let mut current: Vec<RawSession> = sessions
        .iter()
        .filter(|s| s.items.len() >= config.min_len)
        .cloned()
        .collect();
    loop {
        let mut freq: HashMap<&str, usize> = HashMap::new();
        for s in &current {
            for item in &s.items {
                *freq.entry(item.as_str()).or_default() += 1;
            }
        }
        let keep = |item: &str| {
            let f = freq[item];
            f >= config.min_item_freq && config.max_item_freq.is_none_or(|m| f <= m)
        };
        let mut changed = false;
        let next: Vec<RawSession> = current
            .iter()
            .filter_map(|s| {
                let items: Vec<String> = s.items.iter().filter(|i| keep(i)).cloned().collect();
                changed |= items.len() != s.items.len();
                (items.len() >= config.min_len).then(|| RawSession {
                    items,
                    ..s.clone()
                })
            })
            .collect();
        changed |= next.len() != current.len();
        current = next;
        if !changed {
            break;
        }
    }
    if current.is_empty() {
        return Err(Error::EmptyDataset("no session survives preprocessing".into()));
    }
    let mut keys: Vec<String> = current.iter().flat_map(|s| s.items.iter().cloned()).collect();
    keys.sort();
    keys.dedup();
    let ids: HashMap<&str, ItemId> = keys.iter().enumerate().map(|(i, k)| (k.as_str(), i)).collect();
    let records = current
        .iter()
        .map(|s| SessionRecord {
            session_id: s.session_id.clone(),
            user_id: s.user_id.clone(),
            items: s.items.iter().map(|k| ids[k.as_str()]).collect(),
        })
        .collect();
    Ok((records, Catalog::with_labels(keys)?))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitScheme {
    /// Each user's final session is held out for testing; 10% of the
    /// remaining sessions become validation.
    LastSessionPerUser,
    /// 75% / 15% / 10% after a seeded shuffle.
    Ratio,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitStats {
    pub n_items: usize,
    pub n_train: usize,
    pub n_valid: usize,
    pub n_test: usize,
    pub n_interactions: usize,
    pub avg_len: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSplit {
    pub train: Vec<SessionRecord>,
    pub valid: Vec<SessionRecord>,
    pub test: Vec<SessionRecord>,
    pub catalog: Catalog,
}

impl DatasetSplit {
    pub fn stats(&self) -> SplitStats {
        let all = || self.train.iter().chain(&self.valid).chain(&self.test);
        let n_interactions: usize = all().map(|s| s.items.len()).sum();
        let n = all().count();
        SplitStats {
            n_items: self.catalog.item_count(),
            n_train: self.train.len(),
            n_valid: self.valid.len(),
            n_test: self.test.len(),
            n_interactions,
            avg_len: if n == 0 { 0.0 } else { n_interactions as f64 / n as f64 },
        }
    }

    pub fn train_sessions(&self) -> Vec<Session> {
        self.train.iter().map(SessionRecord::session).collect()
    }

    pub fn valid_sessions(&self) -> Vec<Session> {
        self.valid.iter().map(SessionRecord::session).collect()
    }

    pub fn test_sessions(&self) -> Vec<Session> {
        self.test.iter().map(SessionRecord::session).collect()
    }

    pub fn all_sessions(&self) -> Vec<Session> {
        self.train
            .iter()
            .chain(&self.valid)
            .chain(&self.test)
            .map(SessionRecord::session)
            .collect()
    }
}

pub fn split(records: &[SessionRecord], catalog: Catalog, scheme: SplitScheme, seed: u64) -> Result<DatasetSplit> {
    if records.is_empty() {
        return Err(Error::EmptyDataset("nothing to split".into()));
    }
    let mut rng = seed::rng(seed);
    let (train, valid, test) = match scheme {
        SplitScheme::Ratio => {
            if records.len() < 10 {
                return invalid(format!(
                    "ratio split needs at least 10 sessions, got {}",
                    records.len()
                ));
            }
            let mut shuffled = records.to_vec();
            shuffled.shuffle(&mut rng);
            let n = shuffled.len() as f64;
            let n_train = (0.75 * n).round() as usize;
            let n_valid = (0.15 * n).round() as usize;
            let test = shuffled.split_off(n_train + n_valid);
            let valid = shuffled.split_off(n_train);
            (shuffled, valid, test)
        }
        SplitScheme::LastSessionPerUser => {
            let mut last: HashMap<&str, usize> = HashMap::new();
            for (i, r) in records.iter().enumerate() {
                last.insert(&r.user_id, i);
            }
            let mut pool = Vec::new();
            let mut test = Vec::new();
            for (i, r) in records.iter().enumerate() {
                if last[r.user_id.as_str()] == i {
                    test.push(r.clone());
                } else {
                    pool.push(r.clone());
                }
            }
            pool.shuffle(&mut rng);
            let n_valid = (0.1 * pool.len() as f64).round() as usize;
            let train = pool.split_off(n_valid);
            (train, pool, test)
        }
    };
    Ok(DatasetSplit {
        train,
        valid,
        test,
        catalog,
    })
}

/// Write sessions as JSON lines.
pub fn write_sessions<W: Write>(records: &[SessionRecord], mut out: W) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_sessions<R: BufRead>(reader: R) -> Result<Vec<SessionRecord>> {
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: idx + 1,
            msg: e.to_string(),
        })?);
    }
    Ok(out)
}

/// Catalog mapping: one `id<TAB>item_key` line per item.
pub fn write_catalog<W: Write>(catalog: &Catalog, mut out: W) -> Result<()> {
    for id in 0..catalog.item_count() {
        let label = catalog.label(id).map_or_else(|| id.to_string(), str::to_string);
        writeln!(out, "{id}\t{label}")?;
    }
    Ok(())
}

pub fn read_catalog<R: BufRead>(reader: R) -> Result<Catalog> {
    let mut labels = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let parse_err = |msg: &str| Error::Parse {
            line: idx + 1,
            msg: msg.to_string(),
        };
        let (id, key) = line.split_once('\t').ok_or_else(|| parse_err("expected id<TAB>key"))?;
        if id.parse::<usize>().ok() != Some(labels.len()) {
            return Err(parse_err("catalog ids must be contiguous from 0"));
        }
        labels.push(key.to_string());
    }
    Catalog::with_labels(labels)
}

/// Planted-structure generator settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub catalog_size: usize,
    pub n_sessions: usize,
    pub min_len: usize,
    pub max_len: usize,
    /// Items `0..n_triggers` trigger successors `n_triggers..2 * n_triggers`.
    pub n_triggers: usize,
    /// Probability that a trigger is followed by its successor.
    pub p_trigger: f64,
    /// Chance of emitting a trigger at a free position.
    pub trigger_rate: f64,
    /// Chance of emitting a uniformly random catalog item instead.
    pub noise: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            catalog_size: 50,
            n_sessions: 200,
            min_len: 5,
            max_len: 10,
            n_triggers: 8,
            p_trigger: 0.9,
            trigger_rate: 0.25,
            noise: 0.05,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn successor(&self, trigger: ItemId) -> Option<ItemId> {
        (trigger < self.n_triggers).then_some(trigger + self.n_triggers)
    }

    fn validate(&self) -> Result<()> {
        if self.n_sessions == 0 {
            return Err(Error::EmptyDataset("synthetic spec asks for zero sessions".into()));
        }
        if !(self.p_trigger > 0.5 && self.p_trigger <= 1.0) {
            return invalid("p_trigger must lie in (0.5, 1]");
        }
        if self.n_triggers == 0 || 2 * self.n_triggers >= self.catalog_size {
            return invalid("catalog must hold triggers, successors and at least one background item");
        }
        if self.min_len < 2 || self.min_len > self.max_len {
            return invalid("session lengths must satisfy 2 <= min_len <= max_len");
        }
        for p in [self.trigger_rate, self.noise] {
            if !(0.0..=1.0).contains(&p) {
                return invalid("rates must lie in [0, 1]");
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthDataset {
    pub split: DatasetSplit,
    /// Positions of triggers that were followed by their successor, per session id.
    pub trigger_positions: BTreeMap<String, Vec<usize>>,
}

/// Sample sessions from background noise with planted trigger→successor
/// rules. Every session contains at least one planted pair. Split with the
/// ratio scheme.
pub fn generate_synthetic(spec: &SynthSpec) -> Result<SynthDataset> {
    spec.validate()?;
    let mut rng = seed::rng(spec.seed);
    let background: Vec<ItemId> = (2 * spec.n_triggers..spec.catalog_size).collect();
    let mut records = Vec::with_capacity(spec.n_sessions);
    let mut trigger_positions = BTreeMap::new();
    for s in 0..spec.n_sessions {
        let len = rng.gen_range(spec.min_len..=spec.max_len);
        let mut items: Vec<ItemId> = Vec::with_capacity(len);
        while items.len() < len {
            let follow = items
                .last()
                .and_then(|&prev| spec.successor(prev))
                .filter(|_| rng.gen::<f64>() < spec.p_trigger);
            let next = match follow {
                Some(succ) => succ,
                None if rng.gen::<f64>() < spec.noise => rng.gen_range(0..spec.catalog_size),
                None if rng.gen::<f64>() < spec.trigger_rate => rng.gen_range(0..spec.n_triggers),
                None => *background.choose(&mut rng).expect("non-empty background"),
            };
            items.push(next);
        }
        let planted = |items: &[ItemId]| -> Vec<usize> {
            items
                .windows(2)
                .enumerate()
                .filter(|(_, w)| spec.successor(w[0]) == Some(w[1]))
                .map(|(i, _)| i)
                .collect()
        };
        if planted(&items).is_empty() {
            let pos = rng.gen_range(0..len - 1);
            let trigger = rng.gen_range(0..spec.n_triggers);
            items[pos] = trigger;
            items[pos + 1] = trigger + spec.n_triggers;
        }
        let id = format!("syn{s:05}");
        trigger_positions.insert(id.clone(), planted(&items));
        records.push(SessionRecord {
            session_id: id,
            user_id: format!("u{s:05}"),
            items,
        });
    }
    let catalog = Catalog::new(spec.catalog_size)?;
    let split = split(&records, catalog, SplitScheme::Ratio, seed::derive_seed(spec.seed, "split"))?;
    Ok(SynthDataset {
        split,
        trigger_positions,
    })
}
