//! Run configuration: TOML file, then `FCESR_*` environment overrides, then
//! command-line flags. Unknown keys are rejected and every value is range
//! checked before any stage runs.

use std::path::{Path, PathBuf};

use fcesr_core::contrastive::ContrastiveMode;
use fcesr_core::data::SplitScheme;
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::error::CliError;

/// Environment variables starting with this prefix override config keys;
/// `__` separates nesting levels, e.g. `FCESR_EXPLAINER__LEARNING_RATE=0.1`.
pub const ENV_PREFIX: &str = "FCESR_";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    /// Worker threads for rollouts and oracle shards; `None` = all cores.
    pub workers: Option<usize>,
    pub out: PathBuf,
    pub data: DataConfig,
    pub synth: SynthConfig,
    pub recommender: RecommenderConfig,
    pub explainer: ExplainerConfig,
    pub oracle: OracleConfig,
    pub eval: EvalConfig,
    pub finetune: FinetuneSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            workers: None,
            out: PathBuf::from("out"),
            data: DataConfig::default(),
            synth: SynthConfig::default(),
            recommender: RecommenderConfig::default(),
            explainer: ExplainerConfig::default(),
            oracle: OracleConfig::default(),
            eval: EvalConfig::default(),
            finetune: FinetuneSection::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Dataset label used in report keys.
    pub name: String,
    /// Raw `user \t item \t unix_seconds` log for `prepare`.
    pub input: Option<PathBuf>,
    pub min_len: usize,
    pub min_item_freq: usize,
    /// Items with more interactions than this are dropped; omit to disable.
    pub max_item_freq: Option<usize>,
    pub split: SplitScheme,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            name: "synthetic".into(),
            input: None,
            min_len: 2,
            min_item_freq: 1,
            max_item_freq: Some(100),
            split: SplitScheme::LastSessionPerUser,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub catalog_size: usize,
    pub n_sessions: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub n_triggers: usize,
    pub p_trigger: f64,
    pub trigger_rate: f64,
    pub noise: f64,
    /// Pin the generator independently of the run seed.
    pub seed: Option<u64>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        let s = fcesr_core::data::SynthSpec::default();
        SynthConfig {
            catalog_size: s.catalog_size,
            n_sessions: s.n_sessions,
            min_len: s.min_len,
            max_len: s.max_len,
            n_triggers: s.n_triggers,
            p_trigger: s.p_trigger,
            trigger_rate: s.trigger_rate,
            noise: s.noise,
            seed: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecommenderKind {
    Markov,
    Neural,
}

impl RecommenderKind {
    pub fn as_str(self) -> &'static str {
        match self {
            RecommenderKind::Markov => "markov",
            RecommenderKind::Neural => "neural",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RecommenderConfig {
    pub kind: RecommenderKind,
    pub alpha: f64,
    pub dim: usize,
    pub rho: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
}

impl Default for RecommenderConfig {
    fn default() -> Self {
        RecommenderConfig {
            kind: RecommenderKind::Markov,
            alpha: 0.1,
            dim: 16,
            rho: 0.8,
            epochs: 20,
            batch_size: 32,
            learning_rate: 0.5,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionSet {
    Train,
    All,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExplainerConfig {
    pub k: usize,
    pub gamma: f64,
    pub learning_rate: f64,
    /// Defaults to 50 passes over the explained sessions.
    pub max_episodes: Option<usize>,
    pub batch_size: usize,
    pub reward_window: usize,
    pub reward_tol: f64,
    pub param_tol: f64,
    pub baseline: bool,
    /// Sessions the agent is trained on and that get explained.
    pub sessions: SessionSet,
    pub reward_factual: bool,
    pub reward_counterfactual: bool,
    pub reward_sparsity: bool,
    pub reward_rank: bool,
}

impl Default for ExplainerConfig {
    fn default() -> Self {
        ExplainerConfig {
            k: 10,
            gamma: 0.95,
            learning_rate: 1e-3,
            max_episodes: None,
            batch_size: 32,
            reward_window: 100,
            reward_tol: 0.0,
            param_tol: 0.0,
            baseline: true,
            sessions: SessionSet::Train,
            reward_factual: true,
            reward_counterfactual: true,
            reward_sparsity: true,
            reward_rank: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OracleConfig {
    pub max_len: usize,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            max_len: fcesr_core::oracle::DEFAULT_MAX_LEN,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub report_ks: Vec<usize>,
    pub keep_prob: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            report_ks: vec![5, 10, 20],
            keep_prob: 0.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FinetuneSection {
    pub lambda: f64,
    pub temperature: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub mode: ContrastiveMode,
    /// Also fine-tune with the two single-sided losses for comparison.
    pub ablations: bool,
}

impl Default for FinetuneSection {
    fn default() -> Self {
        let f = fcesr_core::contrastive::FinetuneConfig::default();
        FinetuneSection {
            lambda: f.lambda,
            temperature: f.temperature,
            batch_size: f.batch_size,
            epochs: f.epochs,
            learning_rate: f.learning_rate,
            mode: f.mode,
            ablations: false,
        }
    }
}

fn check(ok: bool, key: &str, rule: &str) -> Result<(), CliError> {
    if ok {
        Ok(())
    } else {
        Err(CliError::Config(format!("{key}: {rule}")))
    }
}

fn unit_open(x: f64) -> bool {
    x > 0.0 && x < 1.0
}

fn positive(x: f64) -> bool {
    x > 0.0 && x.is_finite()
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        check(self.workers != Some(0), "workers", "must be at least 1")?;
        check(!self.data.name.trim().is_empty(), "data.name", "must not be empty")?;
        check(self.data.min_len >= 2, "data.min_len", "must be at least 2")?;
        check(self.data.min_item_freq >= 1, "data.min_item_freq", "must be at least 1")?;
        check(self.data.max_item_freq != Some(0), "data.max_item_freq", "must be at least 1")?;

        let s = &self.synth;
        check(s.n_sessions >= 10, "synth.n_sessions", "must be at least 10")?;
        check(s.n_triggers >= 1, "synth.n_triggers", "must be at least 1")?;
        check(2 * s.n_triggers < s.catalog_size, "synth.catalog_size", "must exceed 2 * n_triggers")?;
        check(s.min_len >= 2 && s.min_len <= s.max_len, "synth.min_len", "need 2 <= min_len <= max_len")?;
        check(s.p_trigger > 0.5 && s.p_trigger <= 1.0, "synth.p_trigger", "must lie in (0.5, 1]")?;
        check((0.0..=1.0).contains(&s.trigger_rate), "synth.trigger_rate", "must lie in [0, 1]")?;
        check((0.0..=1.0).contains(&s.noise), "synth.noise", "must lie in [0, 1]")?;

        let r = &self.recommender;
        check(r.alpha >= 0.0 && r.alpha.is_finite(), "recommender.alpha", "must be >= 0")?;
        check(r.dim >= 1, "recommender.dim", "must be at least 1")?;
        check(r.rho > 0.0 && r.rho <= 1.0, "recommender.rho", "must lie in (0, 1]")?;
        check(r.batch_size >= 1, "recommender.batch_size", "must be at least 1")?;
        check(positive(r.learning_rate), "recommender.learning_rate", "must be positive")?;

        let e = &self.explainer;
        check(e.k >= 1, "explainer.k", "must be at least 1")?;
        check((0.0..=1.0).contains(&e.gamma), "explainer.gamma", "must lie in [0, 1]")?;
        check(positive(e.learning_rate), "explainer.learning_rate", "must be positive")?;
        check(e.batch_size >= 1, "explainer.batch_size", "must be at least 1")?;
        check(e.reward_window >= 1, "explainer.reward_window", "must be at least 1")?;
        check(e.reward_tol >= 0.0, "explainer.reward_tol", "must be >= 0")?;
        check(e.param_tol >= 0.0, "explainer.param_tol", "must be >= 0")?;

        check((1..=62).contains(&self.oracle.max_len), "oracle.max_len", "must lie in 1..=62")?;

        check(!self.eval.report_ks.is_empty(), "eval.report_ks", "must not be empty")?;
        check(self.eval.report_ks.iter().all(|&k| k >= 1), "eval.report_ks", "cutoffs must be >= 1")?;
        check(unit_open(self.eval.keep_prob), "eval.keep_prob", "must lie in (0, 1)")?;

        let f = &self.finetune;
        check(f.lambda >= 0.0 && f.lambda.is_finite(), "finetune.lambda", "must be >= 0")?;
        check(positive(f.temperature), "finetune.temperature", "must be positive")?;
        check(f.batch_size >= 2, "finetune.batch_size", "must be at least 2")?;
        check(positive(f.learning_rate), "finetune.learning_rate", "must be positive")?;
        Ok(())
    }

    pub fn workers(&self) -> usize {
        self.workers
            .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable as TOML")
    }
}

/// Parse an override value as a TOML literal, falling back to a bare string.
fn parse_literal(raw: &str) -> Value {
    match format!("v = {raw}").parse::<Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| Value::String(raw.into())),
        Err(_) => Value::String(raw.into()),
    }
}

fn apply_override(root: &mut Table, path: &[String], value: Value) -> Result<(), CliError> {
    let (last, parents) = path.split_last().expect("non-empty path");
    let mut table = root;
    for key in parents {
        let entry = table
            .entry(key.clone())
            .or_insert_with(|| Value::Table(Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| CliError::Config(format!("override targets non-table key `{key}`")))?;
    }
    table.insert(last.clone(), value);
    Ok(())
}

/// Build the configuration from an optional TOML file and environment
/// pairs; the caller supplies the environment so tests stay hermetic.
pub fn load<I>(path: Option<&Path>, env: I) -> Result<RunConfig, CliError>
where
    I: IntoIterator<Item = (String, String)>,
{
    let mut table = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", p.display())))?;
            text.parse::<Table>()
                .map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
        }
        None => Table::new(),
    };
    let mut overrides: Vec<(String, String)> = env
        .into_iter()
        .filter(|(k, _)| k.starts_with(ENV_PREFIX))
        .collect();
    overrides.sort();
    for (key, raw) in overrides {
        let path: Vec<String> = key[ENV_PREFIX.len()..]
            .split("__")
            .map(str::to_ascii_lowercase)
            .collect();
        if path.iter().any(String::is_empty) {
            return Err(CliError::Config(format!("malformed override variable {key}")));
        }
        apply_override(&mut table, &path, parse_literal(&raw))?;
    }
    let config: RunConfig = Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?;
    config.validate()?;
    Ok(config)
}
