use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use subspace_core::bench::{timing_bench, BenchConfig, DEFAULT_WARMUP};
use subspace_core::experiment::{self, Checkpoint, ExperimentConfig, OutputPaths, RunOptions, RunStatus, SweepAxis};
use subspace_core::subspace::{Mode, Schedule};
use subspace_core::verify;
use subspace_core::Error;

#[derive(Parser, Debug)]
#[command(name = "subspace", version, about = "Subspace-descent experiments: run, sweep, bench, verify")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train once from a config; writes <name>.csv and <name>.summary.json.
    Run(RunArgs),
    /// Repeat a config over one axis and several seeds; writes <name>.sweep.csv.
    Sweep(SweepArgs),
    /// Time an exact SVD refresh against one online PCA step.
    Bench(BenchArgs),
    /// Run the acceptance checks and print one line per criterion.
    Verify(VerifyArgs),
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum ModeArg {
    Dynamic,
    StaticSubspace,
    FullRank,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Mode {
        match m {
            ModeArg::Dynamic => Mode::Dynamic,
            ModeArg::StaticSubspace => Mode::StaticSubspace,
            ModeArg::FullRank => Mode::FullRank,
        }
    }
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum ScheduleArg {
    Constant,
    Cosine,
}

#[derive(clap::Args, Debug)]
struct Overrides {
    /// TOML or JSON experiment config.
    #[arg(long, short)]
    config: PathBuf,
    /// Output directory (beats SUBSPACE_OUTPUT_DIR and the config).
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    name: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    steps: Option<u64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    rank: Option<usize>,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    #[arg(long, value_enum)]
    schedule: Option<ScheduleArg>,
    #[arg(long)]
    warmup_frac: Option<f64>,
}

impl Overrides {
    fn load(&self) -> Result<ExperimentConfig, Error> {
        let mut c = ExperimentConfig::parse_path(&self.config)?;
        let t = &mut c.trainer;
        if let Some(v) = self.seed {
            t.seed = v;
        }
        if let Some(v) = self.steps {
            t.total_steps = v;
        }
        if let Some(v) = self.lr {
            t.base_lr = v;
        }
        if let Some(v) = self.rank {
            t.rank = v;
        }
        if let Some(v) = self.mode {
            t.mode = v.into();
        }
        if let Some(v) = self.schedule {
            t.schedule = match v {
                ScheduleArg::Constant => Schedule::Constant,
                ScheduleArg::Cosine => Schedule::Cosine,
            };
        }
        if let Some(v) = self.warmup_frac {
            t.warmup_frac = v;
        }
        if let Some(v) = &self.name {
            c.output.name = v.clone();
        }
        c.validate()?;
        Ok(c)
    }
}

#[derive(clap::Args, Debug)]
struct RunArgs {
    #[command(flatten)]
    cfg: Overrides,
    /// Stop after this many steps and leave a checkpoint.
    #[arg(long)]
    stop_after: Option<u64>,
    /// Continue from a checkpoint written by an earlier run of the same config.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Write a checkpoint every N steps (and at the end).
    #[arg(long)]
    checkpoint_every: Option<u64>,
}

#[derive(clap::Args, Debug)]
struct SweepArgs {
    #[command(flatten)]
    cfg: Overrides,
    #[arg(long)]
    axis: SweepAxis,
    /// Comma-separated values; `full` is accepted on the rank axis.
    #[arg(long, value_delimiter = ',', required = true)]
    values: Vec<String>,
    #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
    seeds: Vec<u64>,
}

#[derive(clap::Args, Debug)]
struct BenchArgs {
    #[arg(long, default_value_t = 1024)]
    n: usize,
    #[arg(long, default_value_t = 1024)]
    m: usize,
    #[arg(long, default_value_t = 128)]
    k: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = DEFAULT_WARMUP)]
    warmup: usize,
    #[arg(long, default_value_t = 10)]
    repeats: usize,
    #[arg(long, default_value_t = DEFAULT_WARMUP)]
    svd_warmup: usize,
    #[arg(long, default_value_t = 3)]
    svd_repeats: usize,
    /// Print the full report as JSON.
    #[arg(long)]
    json: bool,
}

#[derive(clap::Args, Debug)]
struct VerifyArgs {
    /// Comma-separated criterion numbers (default: all).
    #[arg(long, value_delimiter = ',')]
    only: Vec<u8>,
    /// Also write the results as JSON to this file.
    #[arg(long)]
    json: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Bench(a) => cmd_bench(a),
        Command::Verify(a) => cmd_verify(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn cmd_run(a: RunArgs) -> Result<ExitCode, Error> {
    let mut config = a.cfg.load()?;
    if let Some(every) = a.checkpoint_every {
        config.output.checkpoint = true;
        config.output.checkpoint_every = Some(every);
        config.validate()?;
    }
    let resume = a.resume.as_deref().map(Checkpoint::load).transpose()?;
    let dir = config.resolve_output_dir(a.cfg.output_dir.as_deref());
    let opts = RunOptions {
        stop_after: a.stop_after,
        resume,
    };
    let r = experiment::run(&config, &dir, &opts)?;
    let paths = OutputPaths::new(&dir, &config.output.name);
    let s = &r.summary;
    println!(
        "{} {:?} rank {} seed {}: {} steps, final loss {:.6e}, grad norm {:.3e}",
        s.problem, s.mode, s.rank, s.seed, s.steps_completed, s.final_loss, s.final_grad_norm
    );
    println!("wrote {}", paths.csv.display());
    match &s.status {
        RunStatus::Completed => Ok(ExitCode::SUCCESS),
        RunStatus::Stopped => {
            println!("stopped early; checkpoint at {}", paths.checkpoint.display());
            Ok(ExitCode::SUCCESS)
        }
        RunStatus::Diverged { step, detail } => {
            eprintln!("diverged at step {step}: {detail}");
            Ok(ExitCode::from(1))
        }
    }
}

fn cmd_sweep(a: SweepArgs) -> Result<ExitCode, Error> {
    let config = a.cfg.load()?;
    let dir = config.resolve_output_dir(a.cfg.output_dir.as_deref());
    let result = experiment::sweep(&config, a.axis, &a.values, &a.seeds)?;
    fs::create_dir_all(&dir)?;
    let path = dir.join(format!("{}.sweep.csv", config.output.name));
    let mut buf = Vec::new();
    result.write_csv(&mut buf)?;
    fs::write(&path, buf)?;
    for (v, m) in result.values.iter().zip(&result.medians) {
        let unstable = result.rows.iter().filter(|r| &r.value == v && r.unstable()).count();
        println!("{}={v}: median final loss {m:.6e}, unstable {unstable}/{}", a.axis.name(), a.seeds.len());
    }
    if let Some(mono) = result.monotone_non_increasing {
        println!("non-increasing in rank (5% tolerance): {mono}");
    }
    println!("wrote {}", path.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_bench(a: BenchArgs) -> Result<ExitCode, Error> {
    let r = timing_bench(BenchConfig {
        n: a.n,
        m: a.m,
        k: a.k,
        seed: a.seed,
        warmup: a.warmup,
        repeats: a.repeats,
        svd_warmup: a.svd_warmup,
        svd_repeats: a.svd_repeats,
    })?;
    if a.json {
        println!("{}", serde_json::to_string_pretty(&r)?);
    } else {
        println!(
            "({}, {}, {}): svd {:.3} ms, online PCA step {:.3} ms, ratio {:.1}",
            a.n, a.m, a.k, r.svd_ms, r.pca_step_ms, r.ratio
        );
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_verify(a: VerifyArgs) -> Result<ExitCode, Error> {
    let mut results = Vec::new();
    let ids: Vec<u8> = if a.only.is_empty() { verify::CRITERIA.iter().map(|c| c.0).collect() } else { a.only };
    for id in ids {
        let r = verify::run_criterion(id)?;
        println!("{r}");
        results.push(r);
    }
    if let Some(path) = a.json.as_deref() {
        write_json(path, &results)?;
    }
    let failed = results.iter().filter(|r| !r.passed).count();
    println!("{} passed, {failed} failed", results.len() - failed);
    Ok(if failed == 0 { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn write_json(path: &Path, results: &[verify::CriterionResult]) -> Result<(), Error> {
    fs::write(path, serde_json::to_string_pretty(results)?)?;
    Ok(())
}
