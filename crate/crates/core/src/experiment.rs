//! Experiment configs, single runs with CSV/JSON output, checkpoints and sweeps.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::problems::{Problem, ProblemSpec};
use crate::subspace::{Mode, SubspaceTrainer, TrainerConfig, TrajectoryRecord, UpdaterConfig, TRAJECTORY_COLUMNS};

pub const SCHEMA_VERSION: u32 = 1;
/// Environment variable naming the output directory.
pub const OUTPUT_DIR_ENV: &str = "SUBSPACE_OUTPUT_DIR";
/// Number of trailing steps averaged into the reported final loss.
pub const FINAL_WINDOW: usize = 10;

fn schema_version() -> u32 {
    SCHEMA_VERSION
}

fn default_run_name() -> String {
    "run".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default)]
    pub dir: Option<PathBuf>,
    #[serde(default = "default_run_name")]
    pub name: String,
    /// Write a checkpoint at the end of the run (and every
    /// `checkpoint_every` steps when set).
    #[serde(default)]
    pub checkpoint: bool,
    #[serde(default)]
    pub checkpoint_every: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "schema_version")]
    pub schema_version: u32,
    pub problem: ProblemSpec,
    pub trainer: TrainerConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: None,
            name: default_run_name(),
            checkpoint: false,
            checkpoint_every: None,
        }
    }
}

impl ExperimentConfig {
    pub fn new(problem: ProblemSpec, trainer: TrainerConfig) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            problem,
            trainer,
            output: OutputConfig::default(),
        }
    }

    /// Parses TOML or JSON, chosen by file extension (JSON for `.json`).
    pub fn from_path(path: &Path) -> Result<Self> {
        let c = Self::parse_path(path)?;
        c.validate()?;
        Ok(c)
    }

    /// Like [`Self::from_path`] but without validation, so overrides can be
    /// applied first.
    pub fn parse_path(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let parsed = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| Error::Config(e.to_string()))
        } else {
            toml::from_str(&text).map_err(|e| Error::Config(e.to_string()))
        };
        parsed.map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let c: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let c: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Checks everything that can fail before a run starts, including
    /// building the problem and the trainer.
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if self.trainer.total_steps == 0 {
            return Err(Error::Config("total_steps must be positive".into()));
        }
        if self.output.name.is_empty() || self.output.name.contains(['/', '\\']) {
            return Err(Error::Config(format!("invalid run name {:?}", self.output.name)));
        }
        if self.output.checkpoint_every == Some(0) {
            return Err(Error::Config("checkpoint_every must be positive".into()));
        }
        self.trainer.validate()?;
        let problem = self.problem.build()?;
        SubspaceTrainer::new(self.trainer.clone(), &problem.params(), problem.init_params(self.trainer.seed))?;
        Ok(())
    }

    /// Output directory: explicit override, then the environment variable,
    /// then the config, then the working directory.
    pub fn resolve_output_dir(&self, flag: Option<&Path>) -> PathBuf {
        if let Some(f) = flag {
            return f.to_path_buf();
        }
        if let Some(env) = std::env::var_os(OUTPUT_DIR_ENV).filter(|v| !v.is_empty()) {
            return PathBuf::from(env);
        }
        self.output.dir.clone().unwrap_or_else(|| PathBuf::from("."))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    /// Stopped early on request (checkpoint written).
    Stopped,
    Diverged { step: u64, detail: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub schema_version: u32,
    pub problem: String,
    pub mode: Mode,
    pub optimizer: String,
    pub updater: String,
    pub rank: usize,
    pub seed: u64,
    pub steps_completed: u64,
    /// Mean loss over the last `FINAL_WINDOW` recorded steps.
    pub final_loss: f64,
    pub final_grad_norm: f64,
    /// Weight-optimizer buffer scalars (constant over a run, so also the peak).
    pub state_scalars: usize,
    pub projection_scalars: usize,
    pub wall_time_s: f64,
    #[serde(flatten)]
    pub status: RunStatus,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub summary: RunSummary,
    pub records: Vec<TrajectoryRecord>,
    pub trainer: SubspaceTrainer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub schema_version: u32,
    pub step: u64,
    pub config: ExperimentConfig,
    pub trainer: SubspaceTrainer,
    pub records: Vec<TrajectoryRecord>,
}

impl Checkpoint {
    pub fn load(path: &Path) -> Result<Self> {
        let c: Checkpoint = serde_json::from_str(&fs::read_to_string(path)?)?;
        if c.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!("checkpoint schema_version {} unsupported", c.schema_version)));
        }
        if c.trainer.step != c.step || c.records.len() as u64 != c.step {
            return Err(Error::Config("checkpoint step does not match its contents".into()));
        }
        Ok(c)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, serde_json::to_string(self)?.as_bytes())
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Mean of the last `FINAL_WINDOW` losses.
pub fn final_loss(records: &[TrajectoryRecord]) -> f64 {
    let tail = &records[records.len().saturating_sub(FINAL_WINDOW)..];
    if tail.is_empty() {
        return f64::NAN;
    }
    tail.iter().map(|r| r.loss).sum::<f64>() / tail.len() as f64
}

/// Largest ratio of a loss to the running minimum before it.
pub fn max_spike_ratio(records: &[TrajectoryRecord]) -> f64 {
    let mut best = f64::INFINITY;
    let mut worst: f64 = 1.0;
    for r in records {
        if best.is_finite() && best > 0.0 {
            worst = worst.max(r.loss / best);
        }
        best = best.min(r.loss);
    }
    worst
}

pub fn write_trajectory_csv<W: Write>(records: &[TrajectoryRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| Error::Io(e.into());
    w.write_record(TRAJECTORY_COLUMNS).map_err(io)?;
    for r in records {
        w.write_record([
            r.step.to_string(),
            r.loss.to_string(),
            r.grad_norm.to_string(),
            r.hamiltonian.to_string(),
            r.orthodefect_p.to_string(),
            r.lr.to_string(),
            r.wall_ms_pupdate.to_string(),
        ])
        .map_err(io)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_trajectory_csv(path: &Path) -> Result<Vec<TrajectoryRecord>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::Io(e.into()))?;
    r.deserialize().map(|row| row.map_err(|e| Error::Config(e.to_string()))).collect()
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Stop after this many total steps and write a checkpoint.
    pub stop_after: Option<u64>,
    pub resume: Option<Checkpoint>,
}

/// Paths written by [`run`] for a given directory and run name.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputPaths {
    pub csv: PathBuf,
    pub summary: PathBuf,
    pub checkpoint: PathBuf,
}

impl OutputPaths {
    pub fn new(dir: &Path, name: &str) -> Self {
        Self {
            csv: dir.join(format!("{name}.csv")),
            summary: dir.join(format!("{name}.summary.json")),
            checkpoint: dir.join(format!("{name}.checkpoint.json")),
        }
    }
}

fn summarize(config: &ExperimentConfig, problem: &dyn Problem, trainer: &SubspaceTrainer, records: &[TrajectoryRecord], status: RunStatus, wall: f64) -> RunSummary {
    let t = &config.trainer;
    RunSummary {
        schema_version: SCHEMA_VERSION,
        problem: problem.name(),
        mode: t.mode,
        optimizer: t.optimizer.name().into(),
        updater: match (t.mode, t.updater) {
            (Mode::FullRank, _) => "none".into(),
            (Mode::StaticSubspace, _) => "static".into(),
            (_, UpdaterConfig::OnlinePca { .. }) => "online_pca".into(),
            (_, UpdaterConfig::PeriodicSvd { .. }) => "periodic_svd".into(),
            (_, UpdaterConfig::Static) => "static".into(),
        },
        rank: t.rank,
        seed: t.seed,
        steps_completed: records.len() as u64,
        final_loss: final_loss(records),
        final_grad_norm: records.last().map_or(f64::NAN, |r| r.grad_norm),
        state_scalars: trainer.state_scalar_count(),
        projection_scalars: trainer.projection_scalar_count(),
        wall_time_s: wall,
        status,
    }
}

/// Runs an experiment without touching the filesystem.
pub fn run_in_memory(config: &ExperimentConfig, opts: &RunOptions) -> Result<RunResult> {
    config.validate()?;
    let problem = config.problem.build()?;
    let (mut trainer, mut records) = match &opts.resume {
        Some(cp) => {
            if cp.config.problem != config.problem || cp.config.trainer != config.trainer {
                return Err(Error::Config("checkpoint was written for a different config".into()));
            }
            (cp.trainer.clone(), cp.records.clone())
        }
        None => (
            SubspaceTrainer::new(config.trainer.clone(), &problem.params(), problem.init_params(config.trainer.seed))?,
            Vec::new(),
        ),
    };
    let total = config.trainer.total_steps;
    let stop = opts.stop_after.map_or(total, |s| s.min(total));
    let grad_fn = |p: &[Matrix]| problem.loss_and_grad(p);
    let start = Instant::now();
    let mut status = RunStatus::Completed;
    while trainer.step < stop {
        match trainer.step(&grad_fn) {
            Ok(rec) => records.push(rec),
            Err(e @ (Error::Diverged { .. } | Error::NonFinite(_))) => {
                status = RunStatus::Diverged {
                    step: trainer.step,
                    detail: e.to_string(),
                };
                break;
            }
            Err(e) => return Err(e),
        }
    }
    if status == RunStatus::Completed && trainer.step < total {
        status = RunStatus::Stopped;
    }
    let summary = summarize(config, problem.as_ref(), &trainer, &records, status, start.elapsed().as_secs_f64());
    Ok(RunResult { summary, records, trainer })
}

/// Runs an experiment and writes the trajectory CSV, the summary JSON and,
/// if requested or when stopping early, a checkpoint. Nothing is written when
/// the config is invalid.
pub fn run(config: &ExperimentConfig, dir: &Path, opts: &RunOptions) -> Result<RunResult> {
    config.validate()?;
    let paths = OutputPaths::new(dir, &config.output.name);
    fs::create_dir_all(dir)?;
    let result = match config.output.checkpoint_every {
        Some(every) if config.output.checkpoint => {
            // run in segments, checkpointing between them
            let mut o = opts.clone();
            let target = opts.stop_after.unwrap_or(config.trainer.total_steps).min(config.trainer.total_steps);
            loop {
                let reached = o.resume.as_ref().map_or(0, |c| c.step);
                let next = ((reached / every) + 1) * every;
                o.stop_after = Some(next.min(target));
                let r = run_in_memory(config, &o)?;
                let done = r.trainer.step >= target || matches!(r.summary.status, RunStatus::Diverged { .. });
                write_checkpoint(config, &r, &paths.checkpoint)?;
                if done {
                    break r;
                }
                o.resume = Some(checkpoint_of(config, &r));
            }
        }
        _ => {
            let r = run_in_memory(config, opts)?;
            if config.output.checkpoint || r.summary.status == RunStatus::Stopped {
                write_checkpoint(config, &r, &paths.checkpoint)?;
            }
            r
        }
    };
    let mut csv_bytes = Vec::new();
    write_trajectory_csv(&result.records, &mut csv_bytes)?;
    write_atomic(&paths.csv, &csv_bytes)?;
    write_atomic(&paths.summary, serde_json::to_string_pretty(&result.summary)?.as_bytes())?;
    Ok(result)
}

fn checkpoint_of(config: &ExperimentConfig, r: &RunResult) -> Checkpoint {
    Checkpoint {
        schema_version: SCHEMA_VERSION,
        step: r.trainer.step,
        config: config.clone(),
        trainer: r.trainer.clone(),
        records: r.records.clone(),
    }
}

fn write_checkpoint(config: &ExperimentConfig, r: &RunResult, path: &Path) -> Result<()> {
    checkpoint_of(config, r).save(path)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    Rank,
    Alpha,
    Lambda,
    Lr,
}

impl std::str::FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rank" => Ok(SweepAxis::Rank),
            "alpha" => Ok(SweepAxis::Alpha),
            "lambda" => Ok(SweepAxis::Lambda),
            "lr" => Ok(SweepAxis::Lr),
            other => Err(Error::Config(format!("unknown sweep axis {other:?}"))),
        }
    }
}

impl SweepAxis {
    pub fn name(&self) -> &'static str {
        match self {
            SweepAxis::Rank => "rank",
            SweepAxis::Alpha => "alpha",
            SweepAxis::Lambda => "lambda",
            SweepAxis::Lr => "lr",
        }
    }

    /// Applies one sweep value to a template. For the rank axis, `full`
    /// switches to full-rank training.
    pub fn apply(&self, template: &ExperimentConfig, value: &str) -> Result<ExperimentConfig> {
        let mut c = template.clone();
        let num = |v: &str| -> Result<f64> { v.parse::<f64>().map_err(|_| Error::Config(format!("bad {} value {v:?}", self.name()))) };
        match self {
            SweepAxis::Rank if value == "full" => c.trainer.mode = Mode::FullRank,
            SweepAxis::Rank => {
                c.trainer.rank = value.parse().map_err(|_| Error::Config(format!("bad rank value {value:?}")))?;
                if c.trainer.mode == Mode::FullRank {
                    c.trainer.mode = Mode::Dynamic;
                }
            }
            SweepAxis::Lr => c.trainer.base_lr = num(value)?,
            SweepAxis::Alpha | SweepAxis::Lambda => {
                let UpdaterConfig::OnlinePca { alpha, lambda, .. } = &mut c.trainer.updater else {
                    return Err(Error::Config(format!("{} sweep needs the online_pca updater", self.name())));
                };
                let x = num(value)?;
                match self {
                    SweepAxis::Alpha => *alpha = x,
                    _ => *lambda = x,
                }
            }
        }
        Ok(c)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub axis: SweepAxis,
    pub value: String,
    pub seed: u64,
    pub final_loss: f64,
    pub final_grad_norm: f64,
    pub max_spike_ratio: f64,
    pub state_scalars: usize,
    pub status: String,
    pub error: String,
}

impl SweepRow {
    pub fn ok(&self) -> bool {
        self.status == "completed"
    }

    /// Loss spike above 10× the running minimum, divergence, or failure.
    pub fn unstable(&self) -> bool {
        !self.ok() || self.max_spike_ratio > 10.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub axis: SweepAxis,
    pub values: Vec<String>,
    pub rows: Vec<SweepRow>,
    /// Median final loss per value, in sweep order (NaN when no run completed).
    pub medians: Vec<f64>,
    /// For the rank axis: medians non-increasing within `TREND_TOLERANCE`.
    pub monotone_non_increasing: Option<bool>,
}

/// Relative slack allowed between consecutive medians in the rank trend.
pub const TREND_TOLERANCE: f64 = 0.05;

pub fn median(xs: &mut [f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

/// `medians[i+1] ≤ (1 + tol)·medians[i]` for all i.
pub fn non_increasing_within(medians: &[f64], tol: f64) -> bool {
    medians.windows(2).all(|w| w[1] <= w[0] * (1.0 + tol))
}

/// One in-memory run per (value, seed); failures are recorded and the sweep
/// continues. The seed replaces the template's trainer seed.
pub fn sweep(template: &ExperimentConfig, axis: SweepAxis, values: &[String], seeds: &[u64]) -> Result<SweepResult> {
    if values.is_empty() || seeds.is_empty() {
        return Err(Error::Config("sweep needs at least one value and one seed".into()));
    }
    let mut rows = Vec::new();
    let mut medians = Vec::new();
    for value in values {
        let mut finals = Vec::new();
        for &seed in seeds {
            let outcome = axis.apply(template, value).and_then(|mut c| {
                c.trainer.seed = seed;
                run_in_memory(&c, &RunOptions::default())
            });
            let row = match outcome {
                Ok(r) => {
                    let status = match &r.summary.status {
                        RunStatus::Completed => "completed".to_string(),
                        RunStatus::Stopped => "stopped".to_string(),
                        RunStatus::Diverged { .. } => "diverged".to_string(),
                    };
                    let error = match &r.summary.status {
                        RunStatus::Diverged { detail, .. } => detail.clone(),
                        _ => String::new(),
                    };
                    SweepRow {
                        axis,
                        value: value.clone(),
                        seed,
                        final_loss: r.summary.final_loss,
                        final_grad_norm: r.summary.final_grad_norm,
                        max_spike_ratio: max_spike_ratio(&r.records),
                        state_scalars: r.summary.state_scalars,
                        status,
                        error,
                    }
                }
                Err(e) => SweepRow {
                    axis,
                    value: value.clone(),
                    seed,
                    final_loss: f64::NAN,
                    final_grad_norm: f64::NAN,
                    max_spike_ratio: f64::NAN,
                    state_scalars: 0,
                    status: "failed".into(),
                    error: e.to_string(),
                },
            };
            if row.ok() {
                finals.push(row.final_loss);
            }
            rows.push(row);
        }
        medians.push(median(&mut finals));
    }
    let monotone_non_increasing = (axis == SweepAxis::Rank).then(|| non_increasing_within(&medians, TREND_TOLERANCE));
    Ok(SweepResult {
        axis,
        values: values.to_vec(),
        rows,
        medians,
        monotone_non_increasing,
    })
}

impl SweepResult {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for row in &self.rows {
            w.serialize(row).map_err(|e| Error::Io(e.into()))?;
        }
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optim::OptimizerKind;

    fn quad_config(mode: Mode, steps: u64) -> ExperimentConfig {
        let mut t = TrainerConfig::new(mode, OptimizerKind::adam(), 2, 0.05, steps);
        t.seed = 3;
        ExperimentConfig::new(ProblemSpec::Quadratic { n: 6, m: 3, seed: 1 }, t)
    }

    #[test]
    fn toml_roundtrip_and_defaults() {
        let text = r#"
            [problem]
            name = "quadratic"
            n = 8
            m = 4

            [trainer]
            mode = "dynamic"
            rank = 2
            base_lr = 0.01
            total_steps = 100
            optimizer = { kind = "adam" }
        "#;
        let c = ExperimentConfig::from_toml(text).unwrap();
        assert_eq!(c.schema_version, SCHEMA_VERSION);
        assert_eq!(c.trainer.optimizer, OptimizerKind::adam());
        assert_eq!(c.trainer.updater, UpdaterConfig::default());
        assert_eq!(c.trainer.warmup_frac, 0.1);
        assert_eq!(c.trainer.grad_clip, Some(1.0));
        assert_eq!(c.output.name, "run");
        let back = ExperimentConfig::from_toml(&c.to_toml().unwrap()).unwrap();
        assert_eq!(back, c);
        let json = serde_json::to_string(&c).unwrap();
        assert_eq!(ExperimentConfig::from_json(&json).unwrap(), c);
    }

    #[test]
    fn malformed_configs_rejected() {
        assert!(ExperimentConfig::from_toml("[problem]\nname = \"quadratic\"").is_err());
        let mut c = quad_config(Mode::Dynamic, 10);
        c.trainer.rank = 7;
        assert!(c.validate().is_err());
        let mut c = quad_config(Mode::Dynamic, 10);
        c.schema_version = 99;
        assert!(c.validate().is_err());
        let mut c = quad_config(Mode::Dynamic, 10);
        c.output.name = "../x".into();
        assert!(c.validate().is_err());
        let text = toml::to_string(&quad_config(Mode::Dynamic, 10)).unwrap().replace("base_lr", "base_learning_rate");
        assert!(ExperimentConfig::from_toml(&text).is_err());
    }

    #[test]
    fn summary_matches_records() {
        let r = run_in_memory(&quad_config(Mode::Dynamic, 60), &RunOptions::default()).unwrap();
        assert_eq!(r.records.len(), 60);
        assert_eq!(r.summary.steps_completed, 60);
        let tail: f64 = r.records[50..].iter().map(|x| x.loss).sum::<f64>() / 10.0;
        assert!((r.summary.final_loss - tail).abs() <= 1e-12 * tail.abs().max(1.0));
        assert_eq!(r.summary.status, RunStatus::Completed);
    }

    #[test]
    fn run_writes_reproducible_outputs() {
        let dir = tempfile::tempdir().unwrap();
        let c = quad_config(Mode::Dynamic, 40);
        let a = dir.path().join("a");
        let b = dir.path().join("b");
        run(&c, &a, &RunOptions::default()).unwrap();
        run(&c, &b, &RunOptions::default()).unwrap();
        let ca = fs::read(a.join("run.csv")).unwrap();
        assert_eq!(ca, fs::read(b.join("run.csv")).unwrap());
        let recs = read_trajectory_csv(&a.join("run.csv")).unwrap();
        assert_eq!(recs.len(), 40);
        let summary: RunSummary = serde_json::from_slice(&fs::read(a.join("run.summary.json")).unwrap()).unwrap();
        assert!((summary.final_loss - final_loss(&recs)).abs() <= 1e-12 * summary.final_loss.abs().max(1.0));
        assert!(!a.join("run.checkpoint.json").exists());
    }

    #[test]
    fn invalid_config_writes_nothing() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("out");
        let mut c = quad_config(Mode::Dynamic, 10);
        c.trainer.base_lr = -1.0;
        assert!(run(&c, &out, &RunOptions::default()).is_err());
        assert!(!out.exists());
    }

    #[test]
    fn resume_reproduces_uninterrupted_run() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = quad_config(Mode::Dynamic, 50);
        let full = run(&c, &dir.path().join("full"), &RunOptions::default()).unwrap();

        let part_dir = dir.path().join("part");
        let first = run(&c, &part_dir, &RunOptions { stop_after: Some(20), resume: None }).unwrap();
        assert_eq!(first.summary.status, RunStatus::Stopped);
        let cp = Checkpoint::load(&part_dir.join("run.checkpoint.json")).unwrap();
        assert_eq!(cp.step, 20);
        let resumed = run(&c, &part_dir, &RunOptions { stop_after: None, resume: Some(cp) }).unwrap();
        assert_eq!(resumed.records, full.records);
        assert_eq!(resumed.trainer, full.trainer);
        assert_eq!(
            fs::read(part_dir.join("run.csv")).unwrap(),
            fs::read(dir.path().join("full").join("run.csv")).unwrap()
        );

        // periodic checkpoints land on the same final state
        c.output.checkpoint = true;
        c.output.checkpoint_every = Some(15);
        let seg = run(&c, &dir.path().join("seg"), &RunOptions::default()).unwrap();
        assert_eq!(seg.records, full.records);
        assert_eq!(Checkpoint::load(&dir.path().join("seg").join("run.checkpoint.json")).unwrap().step, 50);
    }

    #[test]
    fn resume_rejects_other_config() {
        let c = quad_config(Mode::Dynamic, 30);
        let r = run_in_memory(&c, &RunOptions { stop_after: Some(10), resume: None }).unwrap();
        let cp = checkpoint_of(&c, &r);
        let mut other = c.clone();
        other.trainer.base_lr = 0.1;
        assert!(run_in_memory(&other, &RunOptions { stop_after: None, resume: Some(cp) }).is_err());
    }

    #[test]
    fn spike_ratio_and_median() {
        let rec = |loss: f64| TrajectoryRecord {
            step: 0,
            loss,
            grad_norm: 0.0,
            hamiltonian: 0.0,
            orthodefect_p: 0.0,
            lr: 0.0,
            wall_ms_pupdate: 0.0,
        };
        let recs: Vec<_> = [5.0, 2.0, 1.0, 30.0, 0.5].into_iter().map(rec).collect();
        assert_eq!(max_spike_ratio(&recs), 30.0);
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&mut [4.0, 1.0]), 2.5);
        assert!(non_increasing_within(&[1.0, 1.04, 0.5], 0.05));
        assert!(!non_increasing_within(&[1.0, 1.06], 0.05));
    }

    #[test]
    fn sweep_records_failures_and_matches_run() {
        let c = quad_config(Mode::Dynamic, 30);
        let values = vec!["2".to_string(), "9".to_string(), "full".to_string()];
        let s = sweep(&c, SweepAxis::Rank, &values, &[3]).unwrap();
        assert_eq!(s.rows.len(), 3);
        assert!(s.rows[0].ok());
        assert_eq!(s.rows[1].status, "failed");
        assert!(s.rows[2].ok());
        assert!(s.monotone_non_increasing.is_some());
        let single = run_in_memory(&c, &RunOptions::default()).unwrap();
        assert_eq!(s.rows[0].final_loss, single.summary.final_loss);
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("axis,value,seed,final_loss"));
        assert_eq!(text.lines().count(), 4);
    }

    #[test]
    fn axis_application() {
        let c = quad_config(Mode::Dynamic, 10);
        assert_eq!(SweepAxis::Alpha.apply(&c, "500").unwrap().trainer.updater, UpdaterConfig::OnlinePca {
            optimizer: OptimizerKind::adam(),
            alpha: 500.0,
            lambda: 0.1
        });
        assert_eq!(SweepAxis::Lr.apply(&c, "0.5").unwrap().trainer.base_lr, 0.5);
        assert!(SweepAxis::Lr.apply(&c, "x").is_err());
        assert!("depth".parse::<SweepAxis>().is_err());
    }
}
