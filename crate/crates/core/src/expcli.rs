//! Experiment runner: config loading, corpus generation, single runs, grid
//! sweeps, aggregate tables and plots.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::datagen::{self, CorpusBundle, GenSpec, HeuristicKind, Subcase, MANIFEST_FILE};
use crate::error::{Error, Result};
use crate::evaluator::{self, summarize, EvalReport, Histogram};
use crate::losses::{LossKind, LossSpec, Reduction, DEFAULT_CLAMP_EPS};
use crate::netmodel::ModelParams;
use crate::optimizer::OptimSpec;
use crate::plot;
use crate::trainer::{self, BiasModelSource, ModelConfig, TrainSpec, ValidationSplit};

/// Bumped whenever the layout or columns of run artifacts change.
pub const ARTIFACT_VERSION: &str = "runs/1";

pub const HISTORY_FILE: &str = "history.csv";
pub const EVAL_FILE: &str = "eval.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const RUN_MANIFEST_FILE: &str = "manifest.toml";
pub const PROB_HIST_FILE: &str = "prob_hist.csv";
pub const LOSS_HIST_FILE: &str = "loss_hist.csv";
pub const NORM_LOSS_HIST_FILE: &str = "loss_hist_normalized.csv";
pub const SHALLOW_MODEL_FILE: &str = "shallow_model.bin";

pub const TABLE_COLUMNS: &str =
    "row_type,loss,gamma,n_inject,seed,status,test_accuracy,hard_accuracy,challenge_accuracy,metric,mean,std,n_runs";
pub const CELL_TABLE_COLUMNS: &str = "loss,gamma,n_inject,heuristic,subcase,mean,std,n_runs";
pub const CONFIDENCE_COLUMNS: &str = "loss,gamma,n_inject,mean,std,n_runs";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    pub name: String,
    pub output_dir: PathBuf,
    pub gamma_grid: Vec<f64>,
    pub injection_grid: Vec<usize>,
    pub seeds: Vec<u64>,
    pub workers: usize,
    pub n_bins: usize,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        ExperimentSection {
            name: "default".into(),
            output_dir: PathBuf::from("out"),
            gamma_grid: vec![0.0, 0.5, 1.0, 2.0, 5.0, 10.0],
            injection_grid: vec![0, 100, 1000],
            seeds: vec![0, 1, 2, 3, 4],
            workers: 1,
            n_bins: evaluator::DEFAULT_BINS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub hidden_dim: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            hidden_dim: ModelConfig::default().hidden_dim,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    /// One of `ce`, `focal`, `dfl`, `poe`.
    pub loss: String,
    pub clamp_eps: f64,
    /// `mean` or `sum`.
    pub reduction: String,
    pub early_stopping: bool,
    /// `matched` or `mismatched`.
    pub validation_split: String,
    pub max_epochs: usize,
    /// Frozen bias model for `dfl`/`poe`; trained per run when absent.
    pub bias_model_checkpoint: Option<PathBuf>,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainSpec::default();
        TrainSection {
            loss: "focal".into(),
            clamp_eps: DEFAULT_CLAMP_EPS,
            reduction: "mean".into(),
            early_stopping: t.early_stopping,
            validation_split: "mismatched".into(),
            max_epochs: t.max_epochs,
            bias_model_checkpoint: None,
        }
    }
}

/// Unset fields take the preset of `kind`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimSection {
    /// `sgd` or `adamw`.
    pub kind: String,
    pub peak_lr: Option<f64>,
    pub adam_eps: Option<f64>,
    pub beta1: Option<f64>,
    pub beta2: Option<f64>,
    pub weight_decay: Option<f64>,
    /// 0 disables clipping.
    pub clip_norm: Option<f64>,
    pub warmup_fraction: Option<f64>,
    pub shrink_factor: Option<f64>,
    pub batch_size: Option<usize>,
}

impl Default for OptimSection {
    fn default() -> Self {
        OptimSection {
            kind: "sgd".into(),
            peak_lr: None,
            adam_eps: None,
            beta1: None,
            beta2: None,
            weight_decay: None,
            clip_norm: None,
            warmup_fraction: None,
            shrink_factor: None,
            batch_size: None,
        }
    }
}

impl OptimSection {
    pub fn resolve(&self) -> Result<OptimSpec> {
        let mut o = match self.kind.as_str() {
            "sgd" => OptimSpec::sgd(),
            "adamw" => OptimSpec::adamw(),
            other => {
                return Err(Error::Config(format!(
                    "optim.kind: unknown optimizer '{other}' (sgd, adamw)"
                )))
            }
        };
        o.peak_lr = self.peak_lr.unwrap_or(o.peak_lr);
        o.adam_eps = self.adam_eps.unwrap_or(o.adam_eps);
        o.beta1 = self.beta1.unwrap_or(o.beta1);
        o.beta2 = self.beta2.unwrap_or(o.beta2);
        o.weight_decay = self.weight_decay.unwrap_or(o.weight_decay);
        if let Some(c) = self.clip_norm {
            o.clip_norm = (c != 0.0).then_some(c);
        }
        o.warmup_fraction = self.warmup_fraction.unwrap_or(o.warmup_fraction);
        o.shrink_factor = self.shrink_factor.unwrap_or(o.shrink_factor);
        o.batch_size = self.batch_size.unwrap_or(o.batch_size);
        o.validate()?;
        Ok(o)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentSection,
    pub gen: GenSpec,
    pub model: ModelSection,
    pub train: TrainSection,
    pub optim: OptimSection,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(one_line(&e.to_string())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the canonical serialization.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml().as_bytes()))
    }

    pub fn validate(&self) -> Result<()> {
        let e = &self.experiment;
        if e.name.is_empty() || e.name.contains(['/', '\\']) {
            return Err(Error::Config(format!(
                "experiment.name '{}' must be a plain directory name",
                e.name
            )));
        }
        if e.gamma_grid.is_empty() || e.injection_grid.is_empty() || e.seeds.is_empty() {
            return Err(Error::Config(
                "gamma_grid, injection_grid and seeds must be nonempty".into(),
            ));
        }
        if e.workers == 0 {
            return Err(Error::Config("experiment.workers must be >= 1".into()));
        }
        for &g in &e.gamma_grid {
            if !(g.is_finite() && g >= 0.0) {
                return Err(Error::Config(format!("gamma_grid: {g} is not a finite value >= 0")));
            }
        }
        let pool = 6 * self.gen.n_pool_per_cell;
        if let Some(&n) = e.injection_grid.iter().find(|&&n| n > pool) {
            return Err(Error::Config(format!("injection_grid: {n} exceeds the pool of {pool}")));
        }
        self.gen.validate()?;
        if self.model.hidden_dim == 0 {
            return Err(Error::Config("model.hidden_dim must be >= 1".into()));
        }
        self.train_spec(e.gamma_grid[0], e.seeds[0])?.validate()
    }

    pub fn loss_kind(&self) -> Result<LossKind> {
        LossKind::from_short_name(&self.train.loss).ok_or_else(|| {
            Error::Config(format!(
                "train.loss: unknown loss '{}' (ce, focal, dfl, poe)",
                self.train.loss
            ))
        })
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            hidden_dim: self.model.hidden_dim,
        }
    }

    pub fn train_spec(&self, gamma: f64, seed: u64) -> Result<TrainSpec> {
        let t = &self.train;
        let kind = self.loss_kind()?;
        let reduction = match t.reduction.as_str() {
            "mean" => Reduction::Mean,
            "sum" => Reduction::Sum,
            other => return Err(Error::Config(format!("train.reduction: unknown '{other}' (mean, sum)"))),
        };
        let validation_split = match t.validation_split.as_str() {
            "matched" => ValidationSplit::Matched,
            "mismatched" => ValidationSplit::Mismatched,
            other => {
                return Err(Error::Config(format!(
                    "train.validation_split: unknown '{other}' (matched, mismatched)"
                )))
            }
        };
        let bias_model_source = match (kind.needs_bias_model(), &t.bias_model_checkpoint) {
            (false, _) => BiasModelSource::None,
            (true, Some(path)) => BiasModelSource::Checkpoint(path.clone()),
            (true, None) => BiasModelSource::TrainShortcutOnlyFirst,
        };
        let loss = LossSpec {
            kind,
            gamma: if kind == LossKind::CrossEntropy { 0.0 } else { gamma },
            clamp_eps: t.clamp_eps,
            reduction,
        };
        Ok(TrainSpec {
            loss,
            optim: self.optim.resolve()?,
            early_stopping: t.early_stopping,
            validation_split,
            max_epochs: t.max_epochs,
            seed,
            bias_model_source,
        })
    }

    pub fn root(&self) -> PathBuf {
        self.experiment.output_dir.join(&self.experiment.name)
    }

    pub fn corpus_dir(&self) -> PathBuf {
        self.root().join("corpus")
    }

    pub fn runs_dir(&self) -> PathBuf {
        self.root().join("runs")
    }

    pub fn run_dir(&self, key: &RunKey) -> PathBuf {
        self.runs_dir().join(key.dir_name())
    }

    /// Grid triples in table order: injection, then gamma, then seed.
    pub fn grid(&self) -> Vec<RunKey> {
        let e = &self.experiment;
        let mut out = Vec::new();
        for &n_inject in &e.injection_grid {
            for &gamma in &e.gamma_grid {
                for &seed in &e.seeds {
                    out.push(RunKey { gamma, n_inject, seed });
                }
            }
        }
        out
    }
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunKey {
    pub gamma: f64,
    pub n_inject: usize,
    pub seed: u64,
}

impl RunKey {
    pub fn dir_name(&self) -> String {
        format!("g{}_i{}_s{}", self.gamma, self.n_inject, self.seed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub status: String,
    pub baseline: bool,
    pub loss: String,
    pub gamma: f64,
    pub n_inject: usize,
    pub seed: u64,
    pub best_epoch: Option<usize>,
    pub error: Option<String>,
    pub config_sha256: String,
    pub generator_version: String,
    pub artifact_version: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum RunStatus {
    Completed(Box<EvalReport>),
    Failed(String),
    Missing,
}

impl RunStatus {
    pub fn name(&self) -> &'static str {
        match self {
            RunStatus::Completed(_) => "completed",
            RunStatus::Failed(_) => "failed",
            RunStatus::Missing => "missing",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub key: RunKey,
    pub status: RunStatus,
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn read_file(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Writes the corpus with hardness labels and the shallow model that
/// produced them.
pub fn cmd_generate(cfg: &ExperimentConfig) -> Result<PathBuf> {
    cfg.validate()?;
    let bundle = datagen::generate_corpus(&cfg.gen)?;
    let template = cfg.train_spec(cfg.experiment.gamma_grid[0], cfg.gen.seed)?;
    let (bundle, shallow) = datagen::label_hardness_with(&bundle, &cfg.model_config(), &template)?;
    let dir = cfg.corpus_dir();
    bundle.save_dir(&dir)?;
    shallow.save(&dir.join(SHALLOW_MODEL_FILE))?;
    Ok(dir)
}

/// Loads the corpus written by [`cmd_generate`] and checks it matches the
/// `[gen]` section.
pub fn load_corpus(cfg: &ExperimentConfig) -> Result<CorpusBundle> {
    let dir = cfg.corpus_dir();
    let manifest = dir.join(MANIFEST_FILE);
    if !manifest.is_file() {
        return Err(Error::Config(format!(
            "corpus not found: expected {} (run `generate` first)",
            manifest.display()
        )));
    }
    let bundle = CorpusBundle::load_dir(&dir)?;
    if bundle.gen_spec != cfg.gen {
        return Err(Error::Config(format!(
            "corpus in {} was generated from a different [gen] section; rerun `generate`",
            dir.display()
        )));
    }
    Ok(bundle)
}

pub fn cmd_run(cfg: &ExperimentConfig, key: RunKey) -> Result<RunResult> {
    cfg.validate()?;
    let bundle = load_corpus(cfg)?;
    let result = run_one(cfg, &bundle, key)?;
    if let RunStatus::Failed(msg) = &result.status {
        return Err(Error::Config(format!("run {} failed: {msg}", key.dir_name())));
    }
    Ok(result)
}

/// Trains and evaluates one grid triple and writes its artifacts. A
/// diverged run is recorded in its manifest and reported as failed.
pub fn run_one(cfg: &ExperimentConfig, bundle: &CorpusBundle, key: RunKey) -> Result<RunResult> {
    let dir = cfg.run_dir(&key);
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let spec = cfg.train_spec(key.gamma, key.seed)?;
    let mut manifest = RunManifest {
        status: String::new(),
        baseline: key.gamma == 0.0,
        loss: spec.loss.kind.short_name().into(),
        gamma: key.gamma,
        n_inject: key.n_inject,
        seed: key.seed,
        best_epoch: None,
        error: None,
        config_sha256: cfg.hash(),
        generator_version: bundle.version.clone(),
        artifact_version: ARTIFACT_VERSION.into(),
    };
    let injected = datagen::inject_challenge_samples(bundle, key.n_inject, key.seed)?;
    let status = match trainer::train_run(&injected, &cfg.model_config(), &spec) {
        Ok((params, history)) => {
            let n_bins = cfg.experiment.n_bins;
            let report = evaluator::evaluate(&params, &injected, &spec.loss, n_bins)?;
            let normalized = evaluator::loss_histogram(&params, &injected.test, &spec.loss, n_bins, true)?;
            write_file(&dir.join(HISTORY_FILE), history.to_csv())?;
            write_file(&dir.join(EVAL_FILE), eval_csv(&report))?;
            write_file(&dir.join(PROB_HIST_FILE), report.prob_histogram.to_csv())?;
            write_file(&dir.join(LOSS_HIST_FILE), report.loss_histogram.to_csv())?;
            write_file(&dir.join(NORM_LOSS_HIST_FILE), normalized.to_csv())?;
            params.save(&dir.join(CHECKPOINT_FILE))?;
            manifest.best_epoch = Some(history.best_epoch);
            RunStatus::Completed(Box::new(report))
        }
        Err(e @ Error::Diverged { .. }) => {
            manifest.error = Some(e.to_string());
            RunStatus::Failed(e.to_string())
        }
        Err(e) => return Err(e),
    };
    manifest.status = status.name().into();
    let text = toml::to_string(&manifest).map_err(|e| Error::Config(e.to_string()))?;
    write_file(&dir.join(RUN_MANIFEST_FILE), text)?;
    Ok(RunResult { key, status })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:?}")).unwrap_or_default()
}

pub fn eval_csv(report: &EvalReport) -> String {
    let mut out = String::from("metric,value\n");
    for (name, v) in report.metrics() {
        let _ = writeln!(out, "{name},{}", fmt_opt(v));
    }
    out
}

/// Scalar metrics of a run as written by [`eval_csv`].
pub fn read_eval_csv(path: &Path) -> Result<BTreeMap<String, Option<f64>>> {
    let text = read_file(path)?;
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        let parse_err = |msg: &str| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg: msg.into(),
        };
        let (name, value) = line.split_once(',').ok_or_else(|| parse_err("expected metric,value"))?;
        let value = if value.is_empty() {
            None
        } else {
            Some(value.parse::<f64>().map_err(|_| parse_err("bad number"))?)
        };
        out.insert(name.to_string(), value);
    }
    Ok(out)
}

/// Per-run metrics recovered from disk.
#[derive(Debug, Clone, PartialEq)]
pub struct StoredRun {
    pub key: RunKey,
    pub status: String,
    pub metrics: BTreeMap<String, Option<f64>>,
}

impl StoredRun {
    fn metric(&self, name: &str) -> Option<f64> {
        self.metrics.get(name).copied().flatten()
    }
}

pub fn read_run(cfg: &ExperimentConfig, key: RunKey) -> Result<StoredRun> {
    let dir = cfg.run_dir(&key);
    let manifest_path = dir.join(RUN_MANIFEST_FILE);
    if !manifest_path.is_file() {
        return Ok(StoredRun {
            key,
            status: "missing".into(),
            metrics: BTreeMap::new(),
        });
    }
    let manifest: RunManifest = toml::from_str(&read_file(&manifest_path)?).map_err(|e| Error::Parse {
        path: manifest_path.clone(),
        line: 0,
        msg: one_line(&e.to_string()),
    })?;
    let metrics = if manifest.status == "completed" {
        read_eval_csv(&dir.join(EVAL_FILE))?
    } else {
        BTreeMap::new()
    };
    Ok(StoredRun {
        key,
        status: manifest.status,
        metrics,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSummary {
    pub completed: usize,
    pub failed: usize,
    pub tables: Vec<PathBuf>,
}

/// Runs the whole grid, then rebuilds the tables from the run directories.
pub fn cmd_sweep(cfg: &ExperimentConfig) -> Result<SweepSummary> {
    cfg.validate()?;
    let bundle = load_corpus(cfg)?;
    let grid = cfg.grid();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.experiment.workers)
        .build()
        .map_err(|e| Error::Config(e.to_string()))?;
    let results: Vec<Result<RunResult>> = pool.install(|| {
        use rayon::prelude::*;
        grid.par_iter().map(|&key| run_one(cfg, &bundle, key)).collect()
    });
    for r in &results {
        if let Err(e) = r {
            return Err(Error::Config(format!("sweep aborted: {e}")));
        }
    }
    cmd_report(cfg)
}

/// Aggregates whatever runs exist under the run directory into the tables.
pub fn cmd_report(cfg: &ExperimentConfig) -> Result<SweepSummary> {
    cfg.validate()?;
    let runs_dir = cfg.runs_dir();
    if !runs_dir.is_dir() {
        return Err(Error::Config(format!(
            "no run artifacts: expected directory {}",
            runs_dir.display()
        )));
    }
    let runs = cfg
        .grid()
        .into_iter()
        .map(|k| read_run(cfg, k))
        .collect::<Result<Vec<_>>>()?;
    let completed = runs.iter().filter(|r| r.status == "completed").count();
    let failed = runs.iter().filter(|r| r.status == "failed").count();
    if completed == 0 {
        return Err(Error::Config(format!("no completed runs under {}", runs_dir.display())));
    }
    let loss = cfg.loss_kind()?.short_name();
    let root = cfg.root();
    let zero_only: Vec<&StoredRun> = runs.iter().filter(|r| r.key.n_inject == 0).collect();
    let all: Vec<&StoredRun> = runs.iter().collect();
    let tables = [
        ("table1.csv", main_table(loss, &zero_only)?),
        ("table2.csv", main_table(loss, &all)?),
        ("table4.csv", cell_table(loss, &all)?),
        ("confidence.csv", confidence_table(loss, &all)?),
    ];
    let mut paths = Vec::new();
    for (name, text) in tables {
        let path = root.join(name);
        write_file(&path, text)?;
        paths.push(path);
    }
    Ok(SweepSummary {
        completed,
        failed,
        tables: paths,
    })
}

/// Groups by (gamma, n_inject) in first-appearance order.
fn groups<'a>(runs: &[&'a StoredRun]) -> Vec<((f64, usize), Vec<&'a StoredRun>)> {
    let mut out: Vec<((f64, usize), Vec<&StoredRun>)> = Vec::new();
    for r in runs {
        let k = (r.key.gamma, r.key.n_inject);
        match out
            .iter_mut()
            .find(|(g, _)| g.0.to_bits() == k.0.to_bits() && g.1 == k.1)
        {
            Some((_, v)) => v.push(r),
            None => out.push((k, vec![r])),
        }
    }
    out
}

fn summary_fields(name: &str, values: &[f64]) -> Result<(String, String, usize)> {
    if values.is_empty() {
        return Ok((String::new(), String::new(), 0));
    }
    let s = summarize(name, values)?;
    Ok((format!("{:?}", s.mean), fmt_opt(s.std), s.n_runs))
}

const TABLE_METRICS: [&str; 3] = ["test_accuracy", "hard_accuracy", "challenge_accuracy"];

fn main_table(loss: &str, runs: &[&StoredRun]) -> Result<String> {
    let mut out = format!("{TABLE_COLUMNS}\n");
    for r in runs {
        let m: Vec<String> = TABLE_METRICS.iter().map(|name| fmt_opt(r.metric(name))).collect();
        let _ = writeln!(
            out,
            "run,{loss},{},{},{},{},{},{},{},,,,",
            r.key.gamma, r.key.n_inject, r.key.seed, r.status, m[0], m[1], m[2]
        );
    }
    for ((gamma, n_inject), members) in groups(runs) {
        for name in TABLE_METRICS {
            let values: Vec<f64> = members.iter().filter_map(|r| r.metric(name)).collect();
            let (mean, std, n) = summary_fields(name, &values)?;
            let _ = writeln!(out, "aggregate,{loss},{gamma},{n_inject},,,,,,{name},{mean},{std},{n}");
        }
    }
    Ok(out)
}

fn cell_table(loss: &str, runs: &[&StoredRun]) -> Result<String> {
    let mut out = format!("{CELL_TABLE_COLUMNS}\n");
    for ((gamma, n_inject), members) in groups(runs) {
        for kind in HeuristicKind::ALL {
            for sub in Subcase::ALL {
                let name = format!("challenge_{}_{}", kind.name(), sub.name());
                let values: Vec<f64> = members.iter().filter_map(|r| r.metric(&name)).collect();
                let (mean, std, n) = summary_fields(&name, &values)?;
                let _ = writeln!(
                    out,
                    "{loss},{gamma},{n_inject},{},{},{mean},{std},{n}",
                    kind.name(),
                    sub.name()
                );
            }
        }
    }
    Ok(out)
}

fn confidence_table(loss: &str, runs: &[&StoredRun]) -> Result<String> {
    let mut out = format!("{CONFIDENCE_COLUMNS}\n");
    for ((gamma, n_inject), members) in groups(runs) {
        let name = "test_mean_abs_p_minus_half";
        let values: Vec<f64> = members.iter().filter_map(|r| r.metric(name)).collect();
        let (mean, std, n) = summary_fields(name, &values)?;
        let _ = writeln!(out, "{loss},{gamma},{n_inject},{mean},{std},{n}");
    }
    Ok(out)
}

/// Focal-loss curve family for the gamma grid plus histograms of every
/// completed run.
pub fn cmd_plot(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    let plots = cfg.root().join("plots");
    fs::create_dir_all(&plots).map_err(|e| Error::io(&plots, e))?;
    let mut written = Vec::new();
    let curves = plots.join("focal_curves.svg");
    write_file(&curves, plot::focal_curves_svg(&cfg.experiment.gamma_grid))?;
    written.push(curves);

    let runs_dir = cfg.runs_dir();
    if !runs_dir.is_dir() {
        return Err(Error::Config(format!(
            "no run artifacts: expected directory {}",
            runs_dir.display()
        )));
    }
    for key in cfg.grid() {
        let dir = cfg.run_dir(&key);
        if read_run(cfg, key)?.status != "completed" {
            continue;
        }
        for (file, title, x_label) in [
            (
                PROB_HIST_FILE,
                "Ground-truth probability",
                "probability of ground-truth class",
            ),
            (LOSS_HIST_FILE, "Per-example loss", "loss"),
            (NORM_LOSS_HIST_FILE, "Per-example cross-entropy", "cross-entropy"),
        ] {
            let path = dir.join(file);
            if !path.is_file() {
                return Err(Error::Config(format!("missing artifact {}", path.display())));
            }
            let h = Histogram::from_csv(&read_file(&path)?).map_err(|msg| Error::Parse {
                path: path.clone(),
                line: 0,
                msg,
            })?;
            let title = format!("{title}, {}", key.dir_name());
            let svg_path = path.with_extension("svg");
            write_file(&svg_path, plot::histogram_svg(&h, &title, x_label))?;
            written.push(svg_path);
        }
    }
    Ok(written)
}

/// Loads a checkpoint written by a run.
pub fn load_run_params(cfg: &ExperimentConfig, key: RunKey) -> Result<ModelParams> {
    ModelParams::load(&cfg.run_dir(&key).join(CHECKPOINT_FILE))
}
