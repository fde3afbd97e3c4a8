//! One function per subcommand. Every stage reads its inputs from the output
//! directory, writes its artifacts there and echoes the resolved config, so
//! each is a pure function of (files, config, seed).

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use fcesr_core::checkpoint::Checkpoint;
use fcesr_core::contrastive::{build_triples, finetune, write_loss_csv, ContrastiveMode, FinetuneConfig};
use fcesr_core::data::{
    self, filter_sessions, generate_synthetic, parse_interactions, read_catalog, read_sessions, sessionize,
    write_catalog, write_sessions, DatasetSplit, FilterConfig, SynthSpec,
};
use fcesr_core::env::{feature_dim, RewardConfig};
use fcesr_core::metrics::{explanation_metrics, random_explanations, rec_metrics, ExplanationReport, RecReport};
use fcesr_core::oracle::{solve_all, write_report_csv, OracleReportRow};
use fcesr_core::policy::{build_tasks, explain_all, train_explainer, EnvConfig, PolicyParams, TrainerConfig};
use fcesr_core::recommender::{next_item_pairs, RecTrainConfig};
use fcesr_core::seed::derive_seed;
use fcesr_core::{
    AnyRecommender, ExplanationRecord, MarkovCountRecommender, NeuralEmbeddingRecommender, Recommender, Session,
};

use crate::config::{RecommenderKind, RunConfig, SessionSet};
use crate::error::CliError;

pub const TRAIN: &str = "train.jsonl";
pub const VALID: &str = "valid.jsonl";
pub const TEST: &str = "test.jsonl";
pub const CATALOG: &str = "catalog.tsv";
pub const STATS: &str = "stats.json";
pub const TRIGGERS: &str = "triggers.json";
pub const REC_CKPT: &str = "rec.ckpt";
pub const REC_LOSS: &str = "rec_train_loss.csv";
pub const POLICY_CKPT: &str = "policy.ckpt";
pub const TRAINING_LOG: &str = "training_log.csv";
pub const EXPLANATIONS: &str = "explanations.jsonl";
pub const ORACLE: &str = "oracle.csv";
pub const ORACLE_METRICS: &str = "oracle_metrics.csv";
pub const EXPLANATION_METRICS: &str = "explanation_metrics.csv";
pub const REC_METRICS: &str = "rec_metrics.csv";
pub const FINETUNED_CKPT: &str = "rec_finetuned.ckpt";
pub const FINETUNE_LOSS: &str = "finetune_loss.csv";
pub const FINETUNE_METRICS: &str = "finetune_metrics.csv";
pub const REPORT: &str = "report.csv";
pub const CONFIG_ECHO: &str = "config.resolved.toml";

const DATA_HINT: &str = "`fcesr prepare` or `fcesr synth`";

/// Shared state of one invocation.
pub struct Ctx {
    pub config: RunConfig,
    pub workers: usize,
    /// Suppress progress lines on stdout.
    pub quiet: bool,
}

impl Ctx {
    pub fn new(config: RunConfig) -> Self {
        let workers = config.workers();
        Ctx {
            config,
            workers,
            quiet: false,
        }
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.config.out.join(name)
    }

    fn say(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            println!("{}", msg.as_ref());
        }
    }

    fn seed(&self, stage: &str) -> u64 {
        derive_seed(self.config.seed, stage)
    }

    fn dataset(&self) -> &str {
        &self.config.data.name
    }

    fn begin(&self) -> Result<(), CliError> {
        let out = &self.config.out;
        fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
        let path = self.path(CONFIG_ECHO);
        fs::write(&path, self.config.to_toml()).map_err(|e| CliError::io(&path, e))
    }

    fn create(&self, name: &str) -> Result<BufWriter<File>, CliError> {
        let path = self.path(name);
        File::create(&path)
            .map(BufWriter::new)
            .map_err(|e| CliError::io(&path, e))
    }

    /// Open an artifact produced by an earlier stage.
    fn open(&self, name: &str, hint: &str) -> Result<BufReader<File>, CliError> {
        let path = self.path(name);
        if !path.exists() {
            return Err(CliError::missing(&path, hint));
        }
        File::open(&path)
            .map(BufReader::new)
            .map_err(|e| CliError::io(&path, e))
    }
}

fn flush(mut w: BufWriter<File>) -> Result<(), CliError> {
    w.flush().map_err(|e| CliError::Runtime(e.to_string()))
}

// ---- data ------------------------------------------------------------------

fn write_split(ctx: &Ctx, split: &DatasetSplit) -> Result<(), CliError> {
    for (name, records) in [(TRAIN, &split.train), (VALID, &split.valid), (TEST, &split.test)] {
        let mut w = ctx.create(name)?;
        write_sessions(records, &mut w)?;
        flush(w)?;
    }
    let mut w = ctx.create(CATALOG)?;
    write_catalog(&split.catalog, &mut w)?;
    flush(w)?;

    let stats = split.stats();
    let mut w = ctx.create(STATS)?;
    serde_json::to_writer_pretty(&mut w, &stats)?;
    writeln!(w).map_err(|e| CliError::Runtime(e.to_string()))?;
    flush(w)?;
    ctx.say(format!(
        "sessions: {} train / {} valid / {} test, {} items, {} interactions, avg length {:.2}",
        stats.n_train, stats.n_valid, stats.n_test, stats.n_items, stats.n_interactions, stats.avg_len
    ));
    Ok(())
}

pub fn load_split(ctx: &Ctx) -> Result<DatasetSplit, CliError> {
    let read = |name| -> Result<_, CliError> { Ok(read_sessions(ctx.open(name, DATA_HINT)?)?) };
    Ok(DatasetSplit {
        train: read(TRAIN)?,
        valid: read(VALID)?,
        test: read(TEST)?,
        catalog: read_catalog(ctx.open(CATALOG, DATA_HINT)?)?,
    })
}

pub fn prepare(ctx: &Ctx) -> Result<(), CliError> {
    let c = &ctx.config;
    let input = c
        .data
        .input
        .as_ref()
        .ok_or_else(|| CliError::Config("data.input is required for `prepare`".into()))?;
    let file = File::open(input).map_err(|e| CliError::io(input, e))?;
    ctx.begin()?;
    let interactions = parse_interactions(BufReader::new(file))
        .map_err(|e| CliError::Data(format!("{}: {e}", input.display())))?;
    let sessions = sessionize(&interactions);
    let filter = FilterConfig {
        min_len: c.data.min_len,
        min_item_freq: c.data.min_item_freq,
        max_item_freq: c.data.max_item_freq,
    };
    let (records, catalog) = filter_sessions(&sessions, &filter)?;
    let split = data::split(&records, catalog, c.data.split, ctx.seed("split"))?;
    write_split(ctx, &split)
}

pub fn synth(ctx: &Ctx) -> Result<(), CliError> {
    let s = &ctx.config.synth;
    let spec = SynthSpec {
        catalog_size: s.catalog_size,
        n_sessions: s.n_sessions,
        min_len: s.min_len,
        max_len: s.max_len,
        n_triggers: s.n_triggers,
        p_trigger: s.p_trigger,
        trigger_rate: s.trigger_rate,
        noise: s.noise,
        seed: s.seed.unwrap_or_else(|| ctx.seed("synth")),
    };
    ctx.begin()?;
    let dataset = generate_synthetic(&spec)?;
    write_split(ctx, &dataset.split)?;
    let mut w = ctx.create(TRIGGERS)?;
    serde_json::to_writer(&mut w, &dataset.trigger_positions)?;
    writeln!(w).map_err(|e| CliError::Runtime(e.to_string()))?;
    flush(w)
}

// ---- recommender -----------------------------------------------------------

fn load_rec(ctx: &Ctx, name: &str) -> Result<AnyRecommender, CliError> {
    let path = ctx.path(name);
    if !path.exists() {
        return Err(CliError::missing(&path, "`fcesr train-rec`"));
    }
    Ok(AnyRecommender::load(&path)?)
}

fn save(ckpt: &Checkpoint, path: &Path) -> Result<(), CliError> {
    ckpt.save(path)
        .map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

pub fn train_rec(ctx: &Ctx) -> Result<(), CliError> {
    let split = load_split(ctx)?;
    ctx.begin()?;
    let r = &ctx.config.recommender;
    let train = split.train_sessions();
    let n = split.catalog.item_count();
    let model = match r.kind {
        RecommenderKind::Markov => AnyRecommender::Markov(MarkovCountRecommender::fit(&train, n, r.alpha)?),
        RecommenderKind::Neural => {
            let mut m = NeuralEmbeddingRecommender::new(n, r.dim, r.rho, ctx.seed("rec-init"))?;
            let curve = m.train(
                &next_item_pairs(&train),
                &RecTrainConfig {
                    epochs: r.epochs,
                    batch_size: r.batch_size,
                    learning_rate: r.learning_rate,
                    seed: ctx.seed("rec-train"),
                },
            )?;
            let mut w = csv::Writer::from_writer(ctx.create(REC_LOSS)?);
            w.write_record(["epoch", "loss"])?;
            for (epoch, loss) in curve.iter().enumerate() {
                w.write_record([epoch.to_string(), loss.to_string()])?;
            }
            w.flush().map_err(|e| CliError::Runtime(e.to_string()))?;
            if let Some(last) = curve.last() {
                ctx.say(format!("recommender: final epoch loss {last:.4}"));
            }
            AnyRecommender::Neural(m)
        }
    };
    save(&model.to_checkpoint(), &ctx.path(REC_CKPT))?;
    ctx.say(format!("recommender: {} over {n} items -> {}", model.kind(), REC_CKPT));
    Ok(())
}

// ---- explainer -------------------------------------------------------------

fn env_config(ctx: &Ctx) -> EnvConfig {
    let e = &ctx.config.explainer;
    EnvConfig {
        k: e.k,
        rewards: RewardConfig {
            factual: e.reward_factual,
            counterfactual: e.reward_counterfactual,
            sparsity: e.reward_sparsity,
            rank: e.reward_rank,
        },
    }
}

fn explained_sessions(ctx: &Ctx, split: &DatasetSplit) -> Vec<Session> {
    match ctx.config.explainer.sessions {
        SessionSet::Train => split.train_sessions(),
        SessionSet::All => split.all_sessions(),
    }
}

pub fn train_explainer_stage(ctx: &Ctx) -> Result<(), CliError> {
    let split = load_split(ctx)?;
    let rec = load_rec(ctx, REC_CKPT)?;
    ctx.begin()?;
    let e = &ctx.config.explainer;
    let trainer = TrainerConfig {
        gamma: e.gamma,
        learning_rate: e.learning_rate,
        max_episodes: e.max_episodes,
        batch_size: e.batch_size,
        reward_window: e.reward_window,
        reward_tol: e.reward_tol,
        param_tol: e.param_tol,
        baseline: e.baseline,
        seed: ctx.seed("explainer"),
    };
    let sessions = explained_sessions(ctx, &split);
    let (params, log) = train_explainer(&sessions, &rec, &env_config(ctx), &trainer, ctx.workers)?;
    save(&params.to_checkpoint(), &ctx.path(POLICY_CKPT))?;
    let w = ctx.create(TRAINING_LOG)?;
    log.write_csv(w)?;
    if let Some(row) = log.rows.last() {
        ctx.say(format!(
            "explainer: {} episodes ({:?}), last batch reward {:.3}, complexity {:.2}",
            row.episode, log.stop, row.mean_reward, row.mean_complexity
        ));
    }
    Ok(())
}

fn load_policy(ctx: &Ctx, rec: &dyn Recommender) -> Result<PolicyParams, CliError> {
    let path = ctx.path(POLICY_CKPT);
    if !path.exists() {
        return Err(CliError::missing(&path, "`fcesr train-explainer`"));
    }
    let params = PolicyParams::from_checkpoint(&Checkpoint::load(&path)?)?;
    if params.input_dim() != feature_dim(rec.embed_dim()) {
        return Err(CliError::Dependency(format!(
            "{} does not match the current recommender; rerun `fcesr train-explainer`",
            path.display()
        )));
    }
    Ok(params)
}

pub fn explain(ctx: &Ctx) -> Result<(), CliError> {
    let split = load_split(ctx)?;
    let rec = load_rec(ctx, REC_CKPT)?;
    let params = load_policy(ctx, &rec)?;
    ctx.begin()?;
    let sessions = explained_sessions(ctx, &split);
    let tasks = build_tasks(&sessions, &rec, &env_config(ctx))?;
    let records = explain_all(&params, &tasks, ctx.workers)?;
    let mut w = ctx.create(EXPLANATIONS)?;
    for r in &records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n").map_err(|e| CliError::Runtime(e.to_string()))?;
    }
    flush(w)?;
    let m = explanation_metrics(&records)?;
    ctx.say(format!(
        "explained {} sessions: PS {:.3}, PN {:.3}, F_ns {:.3}, avg length {:.2}",
        m.n_sessions, m.ps, m.pn, m.f_ns, m.avg_len
    ));
    Ok(())
}

pub fn load_explanations(ctx: &Ctx) -> Result<Vec<ExplanationRecord>, CliError> {
    let reader = ctx.open(EXPLANATIONS, "`fcesr explain`")?;
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| CliError::io(&ctx.path(EXPLANATIONS), e))?;
        if !line.trim().is_empty() {
            out.push(
                serde_json::from_str(&line)
                    .map_err(|e| CliError::Data(format!("{EXPLANATIONS} line {}: {e}", i + 1)))?,
            );
        }
    }
    if out.is_empty() {
        return Err(CliError::Data(format!("{EXPLANATIONS} is empty")));
    }
    Ok(out)
}

fn record_sessions(records: &[ExplanationRecord]) -> Vec<Session> {
    records
        .iter()
        .map(|r| Session::new(r.session_id.clone(), r.items.clone()))
        .collect()
}

// ---- oracle / evaluation -----------------------------------------------------

/// Agent-vs-oracle aggregate over the sessions the oracle could solve.
#[derive(Clone, Debug, PartialEq)]
pub struct OracleSummary {
    pub solved: usize,
    pub skipped: usize,
    pub feasible: usize,
    pub oracle_mean_complexity: f64,
    /// Share of oracle-feasible sessions whose agent explanation meets both conditions.
    pub agent_success: f64,
    /// Agent complexity averaged over oracle-feasible sessions.
    pub agent_mean_complexity: f64,
}

pub fn summarize_oracle(rows: &[OracleReportRow], skipped: usize) -> OracleSummary {
    let feasible: Vec<_> = rows.iter().filter(|r| r.feasible).collect();
    let n = feasible.len().max(1) as f64;
    OracleSummary {
        solved: rows.len(),
        skipped,
        feasible: feasible.len(),
        oracle_mean_complexity: feasible.iter().filter_map(|r| r.optimal_complexity).sum::<usize>() as f64 / n,
        agent_success: feasible.iter().filter(|r| r.rl_feasible).count() as f64 / n,
        agent_mean_complexity: feasible.iter().map(|r| r.rl_complexity).sum::<usize>() as f64 / n,
    }
}

pub fn read_oracle_rows(ctx: &Ctx) -> Result<Vec<OracleReportRow>, CliError> {
    let mut r = csv::Reader::from_reader(ctx.open(ORACLE, "`fcesr oracle`")?);
    Ok(r.deserialize().collect::<Result<_, _>>()?)
}

const EXPLANATION_COLUMNS: [&str; 4] = ["pn", "ps", "f_ns", "avg_len"];

fn write_explanation_rows(
    ctx: &Ctx,
    name: &str,
    recommender: &str,
    rows: &[(&str, &ExplanationReport)],
) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(ctx.create(name)?);
    w.write_record(["dataset", "recommender", "method", "pn", "ps", "f_ns", "avg_len", "n_sessions"])?;
    for (method, m) in rows {
        w.write_record([
            ctx.dataset().to_string(),
            recommender.to_string(),
            method.to_string(),
            m.pn.to_string(),
            m.ps.to_string(),
            m.f_ns.to_string(),
            m.avg_len.to_string(),
            m.n_sessions.to_string(),
        ])?;
    }
    w.flush().map_err(|e| CliError::Runtime(e.to_string()))
}

fn write_rec_rows(ctx: &Ctx, name: &str, recommender: &str, rows: &[(&str, &RecReport)]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(ctx.create(name)?);
    let ks = &ctx.config.eval.report_ks;
    let mut header = vec!["dataset".to_string(), "recommender".into(), "method".into(), "n_sessions".into()];
    for k in ks {
        header.push(format!("hr@{k}"));
        header.push(format!("ndcg@{k}"));
    }
    w.write_record(&header)?;
    for (method, report) in rows {
        let mut rec = vec![
            ctx.dataset().to_string(),
            recommender.to_string(),
            method.to_string(),
            report.n_sessions.to_string(),
        ];
        for k in ks {
            let m = report.at[k];
            rec.push(m.hr.to_string());
            rec.push(m.ndcg.to_string());
        }
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| CliError::Runtime(e.to_string()))
}

pub fn oracle(ctx: &Ctx) -> Result<(), CliError> {
    let rec = load_rec(ctx, REC_CKPT)?;
    let records = load_explanations(ctx)?;
    ctx.begin()?;
    let tasks = build_tasks(&record_sessions(&records), &rec, &env_config(ctx))?;
    let results = solve_all(&tasks, ctx.config.oracle.max_len, ctx.workers)?;
    let mut rows = Vec::new();
    let mut skipped = 0;
    for (result, record) in results.iter().zip(&records) {
        match result {
            Some(r) => rows.push(OracleReportRow::new(r, record)),
            None => skipped += 1,
        }
    }
    write_report_csv(&rows, ctx.create(ORACLE)?)?;

    let s = summarize_oracle(&rows, skipped);
    let share = if s.solved == 0 { 0.0 } else { s.feasible as f64 / s.solved as f64 };
    let as_report = ExplanationReport {
        pn: share,
        ps: share,
        f_ns: share,
        avg_len: s.oracle_mean_complexity,
        n_sessions: s.solved,
    };
    write_explanation_rows(ctx, ORACLE_METRICS, rec.kind(), &[("oracle", &as_report)])?;
    ctx.say(format!(
        "oracle: {}/{} feasible (skipped {}), optimum {:.3}; agent success {:.3}, complexity {:.3}",
        s.feasible, s.solved, s.skipped, s.oracle_mean_complexity, s.agent_success, s.agent_mean_complexity
    ));
    Ok(())
}

pub fn eval(ctx: &Ctx) -> Result<(), CliError> {
    let split = load_split(ctx)?;
    let rec = load_rec(ctx, REC_CKPT)?;
    let records = load_explanations(ctx)?;
    ctx.begin()?;
    let ours = explanation_metrics(&records)?;
    let random = random_explanations(
        &record_sessions(&records),
        &rec,
        &env_config(ctx),
        ctx.config.eval.keep_prob,
        ctx.seed("random-baseline"),
    )?;
    let baseline = explanation_metrics(&random)?;
    write_explanation_rows(
        ctx,
        EXPLANATION_METRICS,
        rec.kind(),
        &[("fcesr", &ours), ("random", &baseline)],
    )?;
    let ranking = rec_metrics(&split.test_sessions(), &rec, &ctx.config.eval.report_ks)?;
    write_rec_rows(ctx, REC_METRICS, rec.kind(), &[("base", &ranking)])?;
    ctx.say(format!("F_ns: fcesr {:.3}, random {:.3}", ours.f_ns, baseline.f_ns));
    Ok(())
}

// ---- fine-tuning -------------------------------------------------------------

pub fn method_name(mode: ContrastiveMode) -> &'static str {
    match mode {
        ContrastiveMode::Both => "fcesr",
        ContrastiveMode::PosOnly => "fcesr-pos",
        ContrastiveMode::NegOnly => "fcesr-neg",
    }
}

pub fn loss_file(mode: ContrastiveMode, primary: bool) -> String {
    if primary {
        FINETUNE_LOSS.to_string()
    } else {
        format!("finetune_loss_{}.csv", mode.as_str())
    }
}

pub fn finetune_stage(ctx: &Ctx) -> Result<(), CliError> {
    let split = load_split(ctx)?;
    let rec = load_rec(ctx, REC_CKPT)?;
    if rec.as_trainable().is_none() {
        return Err(CliError::Config(format!(
            "fine-tuning needs a trainable recommender, {} holds a {} model",
            REC_CKPT,
            rec.kind()
        )));
    }
    let records = load_explanations(ctx)?;
    ctx.begin()?;
    let train = split.train_sessions();
    let set = build_triples(&records, &train);
    if set.triples.is_empty() {
        return Err(CliError::Data(
            "no explanation of a training session has a non-empty sub-session".into(),
        ));
    }
    let f = &ctx.config.finetune;
    let base = FinetuneConfig {
        lambda: f.lambda,
        temperature: f.temperature,
        batch_size: f.batch_size,
        epochs: f.epochs,
        learning_rate: f.learning_rate,
        seed: ctx.seed("finetune"),
        mode: f.mode,
    };
    let mut modes = vec![f.mode];
    if f.ablations {
        modes.extend(
            [ContrastiveMode::Both, ContrastiveMode::PosOnly, ContrastiveMode::NegOnly]
                .into_iter()
                .filter(|m| *m != f.mode),
        );
    }
    let test = split.test_sessions();
    let ks = &ctx.config.eval.report_ks;
    let before = rec_metrics(&test, &rec, ks)?;
    let mut reports = Vec::new();
    for (i, &mode) in modes.iter().enumerate() {
        let (model, rows) = finetune(&rec, &set.triples, &train, &base.ablation(mode))?;
        write_loss_csv(&rows, ctx.create(&loss_file(mode, i == 0))?)?;
        if i == 0 {
            save(&model.to_checkpoint(), &ctx.path(FINETUNED_CKPT))?;
        }
        reports.push((method_name(mode), rec_metrics(&test, &model, ks)?));
    }
    let mut rows: Vec<(&str, &RecReport)> = vec![("base", &before)];
    rows.extend(reports.iter().map(|(m, r)| (*m, r)));
    write_rec_rows(ctx, FINETUNE_METRICS, rec.kind(), &rows)?;
    let k = ks.iter().copied().find(|&k| k == 10).unwrap_or(ks[0]);
    let line: Vec<String> = rows.iter().map(|(m, r)| format!("{m} {:.3}", r.at[&k].hr)).collect();
    ctx.say(format!(
        "fine-tuned on {} triples ({} dropped); HR@{k}: {}",
        set.triples.len(),
        set.dropped,
        line.join(", ")
    ));
    Ok(())
}

// ---- report ------------------------------------------------------------------

type Key = (String, String, String);

/// Merge every metric file present into one wide CSV keyed by
/// (dataset, recommender, method).
pub fn report(ctx: &Ctx) -> Result<(), CliError> {
    let sources = [EXPLANATION_METRICS, ORACLE_METRICS, REC_METRICS, FINETUNE_METRICS];
    let mut columns: Vec<String> = EXPLANATION_COLUMNS.iter().map(|c| c.to_string()).collect();
    let mut table: BTreeMap<Key, BTreeMap<String, String>> = BTreeMap::new();
    let mut found = 0;
    for name in sources {
        let path = ctx.path(name);
        if !path.exists() {
            continue;
        }
        found += 1;
        let mut r = csv::Reader::from_path(&path)?;
        let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
        if header.len() < 3 || header[..3] != ["dataset", "recommender", "method"] {
            return Err(CliError::Data(format!("{}: unexpected header", path.display())));
        }
        for col in &header[3..] {
            if col != "n_sessions" && !columns.contains(col) {
                columns.push(col.clone());
            }
        }
        for row in r.records() {
            let row = row?;
            let key = (row[0].to_string(), row[1].to_string(), row[2].to_string());
            let cells = table.entry(key.clone()).or_default();
            for (col, value) in header.iter().zip(row.iter()).skip(3) {
                if col == "n_sessions" {
                    continue;
                }
                if let Some(prev) = cells.insert(col.clone(), value.to_string()) {
                    if prev != value {
                        return Err(CliError::Data(format!(
                            "conflicting {col} for {key:?}: {prev} vs {value}"
                        )));
                    }
                }
            }
        }
    }
    if found == 0 {
        return Err(CliError::missing(&ctx.path(EXPLANATION_METRICS), "`fcesr eval`"));
    }
    ctx.begin()?;
    let mut w = csv::Writer::from_writer(ctx.create(REPORT)?);
    let mut header = vec!["dataset".to_string(), "recommender".into(), "method".into()];
    header.extend(columns.iter().cloned());
    w.write_record(&header)?;
    for ((d, r, m), cells) in &table {
        let mut row = vec![d.clone(), r.clone(), m.clone()];
        row.extend(columns.iter().map(|c| cells.get(c).cloned().unwrap_or_default()));
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| CliError::Runtime(e.to_string()))?;
    ctx.say(format!("report: {} rows -> {}", table.len(), REPORT));
    Ok(())
}

/// Every stage in order; data comes from `data.input` when set, otherwise
/// from the synthetic generator. Fine-tuning runs for trainable models only.
pub fn pipeline(ctx: &Ctx) -> Result<(), CliError> {
    if ctx.config.data.input.is_some() {
        prepare(ctx)?;
    } else {
        synth(ctx)?;
    }
    train_rec(ctx)?;
    train_explainer_stage(ctx)?;
    explain(ctx)?;
    oracle(ctx)?;
    eval(ctx)?;
    if ctx.config.recommender.kind == RecommenderKind::Neural {
        finetune_stage(ctx)?;
    }
    report(ctx)
}
