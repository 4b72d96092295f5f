//! The acceptance checks, runnable from the CLI and from the test suite.
//!
//! Each check builds its own problems from fixed seeds and compares against an
//! independent reference (finite differences, the Jacobi SVD, full-rank runs).

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::bench::{timing_bench, BenchConfig};
use crate::error::{Error, Result};
use crate::experiment::{median, non_increasing_within, run_in_memory, sweep, ExperimentConfig, RunOptions, SweepAxis, TREND_TOLERANCE};
use crate::gradcheck::{fd_grad, relative_error};
use crate::hamiltonian::Family;
use crate::matrix::{frobenius_inner, frobenius_norm, Matrix};
use crate::ode::{Gamma, Method, OdeState, OdeSystem};
use crate::optim::{KFunction, OptimizerKind};
use crate::problems::{Problem, ProblemSpec, Quadratic};
use crate::projection::{init_projection, pca_loss, pca_loss_grad, LinearOperator, ProjectionState, DEFAULT_ALPHA, DEFAULT_LAMBDA};
use crate::subspace::{Mode, Schedule, SubspaceTrainer, TrainerConfig, UpdaterConfig};
use crate::svd::{principal_angles, top_k_left};

#[derive(Debug, Clone, Serialize)]
pub struct CriterionResult {
    pub id: u8,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub elapsed_s: f64,
}

impl std::fmt::Display for CriterionResult {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "[{}] {:>2} {:<28} {} ({:.1}s)",
            if self.passed { "PASS" } else { "FAIL" },
            self.id,
            self.name,
            self.detail,
            self.elapsed_s
        )
    }
}

pub const CRITERIA: [(u8, &str); 13] = [
    (1, "pca_gradient_fd"),
    (2, "subspace_recovery"),
    (3, "orthonormality"),
    (4, "adjoint_identities"),
    (5, "lyapunov_descent"),
    (6, "descent_rate_euler"),
    (7, "stationarity"),
    (8, "reduction_identities"),
    (9, "memory_invariant"),
    (10, "training_quality"),
    (11, "rank_trend"),
    (12, "timing_direction"),
    (13, "alpha_instability"),
];

type Check = (bool, String);

/// Runs one criterion. Errors inside a check count as a failure.
pub fn run_criterion(id: u8) -> Result<CriterionResult> {
    let name = CRITERIA
        .iter()
        .find(|(i, _)| *i == id)
        .map(|(_, n)| *n)
        .ok_or_else(|| Error::InvalidArgument(format!("no criterion {id}")))?;
    let start = Instant::now();
    let outcome = match id {
        1 => pca_gradient_fd(),
        2 => subspace_recovery().map(|r| r.recovery),
        3 => subspace_recovery().map(|r| r.orthonormality),
        4 => adjoint_identities(),
        5 => lyapunov_descent(),
        6 => descent_rate_euler(),
        7 => stationarity(),
        8 => reduction_identities(),
        9 => memory_invariant(),
        10 => training_quality(),
        11 => rank_trend(),
        12 => timing_direction(),
        _ => alpha_instability(),
    };
    let elapsed_s = start.elapsed().as_secs_f64();
    let (passed, detail) = outcome.unwrap_or_else(|e| (false, format!("error: {e}")));
    Ok(CriterionResult {
        id,
        name,
        passed,
        detail,
        elapsed_s,
    })
}

/// Runs the given criteria (all when empty), in order.
pub fn run_all(ids: &[u8]) -> Result<Vec<CriterionResult>> {
    let ids: Vec<u8> = if ids.is_empty() { CRITERIA.iter().map(|c| c.0).collect() } else { ids.to_vec() };
    ids.into_iter().map(run_criterion).collect()
}

fn within(elapsed: f64, limit_s: f64) -> bool {
    elapsed < limit_s
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn pca_gradient_fd() -> Result<Check> {
    let start = Instant::now();
    let shapes = [(8, 2), (32, 8), (128, 16)];
    let mut r = rng(101);
    let mut worst: f64 = 0.0;
    for i in 0..50 {
        let (n, k) = shapes[i % shapes.len()];
        let m = r.random_range(k..=2 * k);
        let p = Matrix::randn(n, k, &mut r).map(|x| x / (n as f64).sqrt());
        let g = Matrix::randn(n, m, &mut r);
        let lambda = r.random_range(0.0..1.0);
        let analytic = pca_loss_grad(&p, &g, lambda)?;
        let reference = fd_grad(|x| pca_loss(x, &g, lambda), &p, 1e-6)?;
        worst = worst.max(relative_error(&analytic, &reference)?);
    }
    let elapsed = start.elapsed().as_secs_f64();
    Ok((
        worst <= 1e-5 && within(elapsed, 10.0),
        format!("max relative error {worst:.2e} over 50 samples (tol 1e-5)"),
    ))
}

/// Rank-`k` matrix `U diag(σ) Vᵀ` with random orthonormal factors.
fn planted(n: usize, m: usize, sigma: &[f64], r: &mut ChaCha8Rng) -> Result<Matrix> {
    let k = sigma.len();
    let u = Matrix::randn(n, k, r).orthonormalize_columns(1e-8)?;
    let v = Matrix::randn(m, k, r).orthonormalize_columns(1e-8)?;
    u.matmul(&Matrix::from_diag(sigma))?.matmul_t(&v)
}

struct Recovery {
    recovery: Check,
    orthonormality: Check,
}

fn subspace_recovery() -> Result<Recovery> {
    let start = Instant::now();
    let (n, m, k) = (64, 32, 4);
    let mut worst_angle: f64 = 0.0;
    let mut worst_defect: f64 = 0.0;
    for seed in 0..10u64 {
        let mut r = rng(200 + seed);
        let sigma: Vec<f64> = (0..k).map(|_| r.random_range(1.0..3.0)).collect();
        let g = planted(n, m, &sigma, &mut r)?;
        let target = top_k_left(&g, k)?;
        // plain SGD on P with step α·ε_W = 0.1
        let mut ps = ProjectionState::online_pca(init_projection(n, k, seed)?, OptimizerKind::gd(), DEFAULT_LAMBDA, DEFAULT_ALPHA)?;
        for _ in 0..5000 {
            ps = ps.update(&g, 0.02, 0.0)?;
        }
        let angles = principal_angles(&ps.p, &target)?;
        worst_angle = angles.into_iter().fold(worst_angle, f64::max);
        worst_defect = worst_defect.max(ps.orthonormality_defect());
    }
    let elapsed = start.elapsed().as_secs_f64();
    Ok(Recovery {
        recovery: (
            worst_angle <= 1e-3 && within(elapsed, 30.0),
            format!("max principal angle {worst_angle:.2e} rad over 10 seeds (tol 1e-3)"),
        ),
        orthonormality: (worst_defect <= 1e-3, format!("max ‖PᵀP − I‖ {worst_defect:.2e} (tol 1e-3)")),
    })
}

fn adjoint_identities() -> Result<Check> {
    let mut r = rng(303);
    let mut worst = [0.0f64; 3];
    for _ in 0..100 {
        let n = r.random_range(2..12);
        let m = r.random_range(2..12);
        let k = r.random_range(1..=n);
        let l = r.random_range(1..=m);
        let ops = [
            (LinearOperator::LeftProject { p: Matrix::randn(n, k, &mut r) }, (k, m)),
            (
                LinearOperator::TwoSided {
                    p: Matrix::randn(n, k, &mut r),
                    q: Matrix::randn(l, m, &mut r),
                },
                (k, l),
            ),
            (LinearOperator::sum_sided(Matrix::randn(n, n, &mut r), Matrix::randn(m, m, &mut r))?, (n, m)),
        ];
        for (j, (op, (yr, yc))) in ops.into_iter().enumerate() {
            let x = Matrix::randn(n, m, &mut r);
            let y = Matrix::randn(yr, yc, &mut r);
            let py = op.apply(&y)?;
            let lhs = frobenius_inner(&op.adjoint(&x)?, &y)?;
            let rhs = frobenius_inner(&x, &py)?;
            let scale = frobenius_norm(&x) * frobenius_norm(&py);
            worst[j] = worst[j].max((lhs - rhs).abs() / scale);
        }
    }
    let max = worst.iter().copied().fold(0.0, f64::max);
    Ok((
        max <= 1e-12,
        format!(
            "left {:.1e}, two-sided {:.1e}, sum-sided {:.1e} (tol 1e-12)",
            worst[0], worst[1], worst[2]
        ),
    ))
}

/// The three continuous families as run in the ODE checks.
fn ode_families() -> [Family; 3] {
    [
        Family::Momentum { a: 1.0 },
        Family::Adam { a: 1.0, b: 1.0, e: 1e-2 },
        Family::LionK {
            a: 1.0,
            b: 0.1,
            k: KFunction::SmoothL1 { delta: 0.1 },
        },
    ]
}

/// Speed multiplier on the PCA flow so `P` keeps pace with `W`.
pub const PCA_FLOW_RATE: f64 = 50.0;

fn ode_init(sys: &OdeSystem<'_>, q: &Quadratic, k: usize, seed: u64) -> Result<OdeState> {
    let w0 = q.init_params(seed).remove(0);
    let p = init_projection(w0.rows(), k, seed)?;
    let v0 = if sys.spec.family.needs_v() {
        let (_, g) = q.loss_grad(&w0)?;
        Some(p.t_matmul(&g)?.map(|x| x * x + 1e-2))
    } else {
        None
    };
    sys.initial_state(w0, Some(p), v0)
}

/// Largest one-step increase of `H`, ignoring increases at roundoff level.
fn max_h_increase(sys: &OdeSystem<'_>, init: &OdeState, h: f64, t_end: f64) -> Result<f64> {
    let steps = (t_end / h).round() as usize;
    let traj = sys.integrate(init, h, steps, Method::Rk4)?;
    Ok(traj
        .records
        .windows(2)
        .map(|w| {
            let rise = w[1].hamiltonian - w[0].hamiltonian;
            let floor = 1e-13 * w[0].hamiltonian.abs().max(1.0);
            if rise > floor {
                rise
            } else {
                0.0
            }
        })
        .fold(0.0, f64::max))
}

fn lyapunov_descent() -> Result<Check> {
    let start = Instant::now();
    let (h, t_end, k) = (1e-3, 20.0, 4);
    let mut worst: f64 = 0.0;
    let mut worst_shrink = f64::INFINITY;
    let mut runs = 0;
    for seed in 0..10u64 {
        let q = Quadratic::random(16, 8, seed)?;
        let loss = |w: &Matrix| q.loss_grad(w);
        for family in ode_families() {
            for gamma in [Gamma::PcaGradientFlow { lambda: DEFAULT_LAMBDA, rate: PCA_FLOW_RATE }, Gamma::Frozen] {
                let sys = OdeSystem::new(family, gamma, true, &loss)?;
                let init = ode_init(&sys, &q, k, seed)?;
                let rise = max_h_increase(&sys, &init, h, t_end)?;
                worst = worst.max(rise);
                if rise > 0.0 {
                    let half = max_h_increase(&sys, &init, h / 2.0, t_end)?;
                    worst_shrink = worst_shrink.min(if half > 0.0 { rise / half } else { f64::INFINITY });
                }
                runs += 1;
            }
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    let shrink_ok = worst_shrink >= 3.5;
    Ok((
        worst <= 1e-8 && shrink_ok && within(elapsed, 120.0),
        format!(
            "{runs} runs, max H increase per step {worst:.2e} (tol 1e-8), min shrink on halving {}",
            if worst_shrink.is_finite() { format!("{worst_shrink:.1}x") } else { "n/a".into() }
        ),
    ))
}

/// `max_i |ΔH_i/h − dH/dt_i| / h` along an Euler trajectory.
fn euler_constant(sys: &OdeSystem<'_>, init: &OdeState, h: f64, t_end: f64) -> Result<f64> {
    let traj = sys.integrate(init, h, (t_end / h).round() as usize, Method::Euler)?;
    Ok(traj
        .records
        .windows(2)
        .map(|p| ((p[1].hamiltonian - p[0].hamiltonian) / h - p[0].dhdt_analytic).abs() / h)
        .fold(0.0, f64::max))
}

fn descent_rate_euler() -> Result<Check> {
    let hs = [1e-2, 5e-3, 2.5e-3];
    let mut worst_spread: f64 = 1.0;
    let mut lines = Vec::new();
    for family in ode_families() {
        for seed in 0..3u64 {
            let q = Quadratic::random(16, 8, 40 + seed)?;
            let loss = |w: &Matrix| q.loss_grad(w);
            let sys = OdeSystem::new(family, Gamma::pca(DEFAULT_LAMBDA), true, &loss)?;
            let init = ode_init(&sys, &q, 4, seed)?;
            let cs = hs.iter().map(|&h| euler_constant(&sys, &init, h, 1.0)).collect::<Result<Vec<_>>>()?;
            let hi = cs.iter().copied().fold(0.0, f64::max);
            let lo = cs.iter().copied().fold(f64::INFINITY, f64::min);
            worst_spread = worst_spread.max(hi / lo);
            if seed == 0 {
                lines.push(format!("{} C={:.3}/{:.3}/{:.3}", family.name(), cs[0], cs[1], cs[2]));
            }
        }
    }
    Ok((
        worst_spread <= 1.5,
        format!("{}; max spread {worst_spread:.3} (tol 1.5)", lines.join(", ")),
    ))
}

fn stationarity() -> Result<Check> {
    let mut passed = [0usize; 3];
    let mut worst_grad = [0.0f64; 3];
    for seed in 0..20u64 {
        let q = Quadratic::random(16, 8, 500 + seed)?;
        let loss = |w: &Matrix| q.loss_grad(w);
        for (i, family) in ode_families().into_iter().enumerate() {
            let gamma = Gamma::PcaGradientFlow { lambda: DEFAULT_LAMBDA, rate: PCA_FLOW_RATE };
            let sys = OdeSystem::new(family, gamma, true, &loss)?;
            let report = sys.stationarity_probe(&ode_init(&sys, &q, 4, seed)?, 1e-2, 400.0, 1e-5, 2.0)?;
            passed[i] += usize::from(report.passed);
            worst_grad[i] = worst_grad[i].max(report.final_grad_norm);
        }
    }
    let stall = frozen_degenerate_probe()?;
    let all = passed.iter().all(|&p| p == 20);
    Ok((
        all && stall > 1e-2,
        format!(
            "passed momentum {}/20, adam {}/20, lion_k {}/20 (max ‖∇L‖ {:.1e}); frozen degenerate case stalls at ‖∇L‖ {stall:.2e} (need > 1e-2)",
            passed[0],
            passed[1],
            passed[2],
            worst_grad.iter().copied().fold(0.0, f64::max)
        ),
    ))
}

/// Block-diagonal quadratic whose gradient lives in rows a frozen `P` cannot
/// see. Returns the final gradient norm.
fn frozen_degenerate_probe() -> Result<f64> {
    let (n, m, k) = (16, 8, 4);
    let mut r = rng(77);
    let top = Matrix::randn(k, k, &mut r);
    let bottom = Matrix::randn(n - k, n - k, &mut r);
    let a = Matrix::from_fn(n, n, |i, j| match (i < k, j < k) {
        (true, true) => top[(i, j)] * 0.3 + if i == j { 1.5 } else { 0.0 },
        (false, false) => bottom[(i - k, j - k)] * 0.1 + if i == j { 1.5 } else { 0.0 },
        _ => 0.0,
    });
    let q = Quadratic::new(a, Matrix::zeros(n, m))?;
    let loss = |w: &Matrix| q.loss_grad(w);
    let sys = OdeSystem::new(Family::Momentum { a: 1.0 }, Gamma::Frozen, true, &loss)?;
    let w0 = Matrix::from_fn(n, m, |i, _| if i < k { 0.0 } else { r.random_range(-1.0..1.0) });
    let p = Matrix::identity(n).columns(0, k);
    let report = sys.stationarity_probe(&sys.initial_state(w0, Some(p), None)?, 1e-2, 100.0, 1e-5, 2.0)?;
    Ok(report.final_grad_norm)
}

fn quad_trainer(q: &Quadratic, config: TrainerConfig, seed: u64) -> Result<SubspaceTrainer> {
    SubspaceTrainer::new(config, &q.params(), q.init_params(seed))
}

fn reduction_identities() -> Result<Check> {
    let q = Quadratic::random(8, 5, 11)?;
    let grad_fn = |x: &[Matrix]| q.loss_and_grad(x);
    let kinds = [OptimizerKind::gd(), OptimizerKind::momentum(), OptimizerKind::adam(), OptimizerKind::lion()];
    let mut worst_diff: f64 = 0.0;
    for kind in kinds {
        let mut full = quad_trainer(&q, TrainerConfig::new(Mode::FullRank, kind, 8, 0.01, 100), 1)?;
        let mut dynamic = quad_trainer(&q, TrainerConfig::new(Mode::Dynamic, kind, 8, 0.01, 100), 1)?;
        dynamic.set_projection(0, Matrix::identity(8))?;
        for _ in 0..100 {
            full.step(&grad_fn)?;
            dynamic.step(&grad_fn)?;
            worst_diff = worst_diff.max(full.slots[0].w.sub(&dynamic.slots[0].w)?.max_abs());
        }
    }
    let mut worst_resid: f64 = 0.0;
    for kind in kinds {
        let mut t = quad_trainer(&q, TrainerConfig::new(Mode::StaticSubspace, kind, 3, 0.05, 200), 2)?;
        let w0 = t.slots[0].w.clone();
        let p = t.slots[0].proj.as_ref().map(|s| s.p.clone()).ok_or_else(|| Error::InvalidArgument("no projection".into()))?;
        for _ in 0..200 {
            t.step(&grad_fn)?;
        }
        let d = t.slots[0].w.sub(&w0)?;
        let resid = d.sub(&p.matmul(&p.t_matmul(&d)?)?)?;
        worst_resid = worst_resid.max(frobenius_norm(&resid));
    }
    Ok((
        worst_diff <= 1e-12 && worst_resid <= 1e-10,
        format!("k = n vs full rank max diff {worst_diff:.1e} (tol 1e-12); static residual {worst_resid:.1e} (tol 1e-10)"),
    ))
}

fn memory_invariant() -> Result<Check> {
    let (n, m, k) = (256, 64, 32);
    let q = Quadratic::random(n, m, 0)?;
    let full = quad_trainer(&q, TrainerConfig::new(Mode::FullRank, OptimizerKind::adam(), k, 0.01, 10), 0)?;
    let proj = quad_trainer(&q, TrainerConfig::new(Mode::Dynamic, OptimizerKind::adam(), k, 0.01, 10), 0)?;
    let (f, p) = (full.state_scalar_count(), proj.state_scalar_count());
    Ok((p * n == f * k, format!("projected {p} vs full {f} scalars (k/n = {k}/{n})")))
}

/// Shared setup for the training-quality and rank checks.
fn mlp_config(seed: u64, mode: Mode, updater: UpdaterConfig, rank: usize) -> ExperimentConfig {
    let problem = ProblemSpec::MlpRegression {
        input: 32,
        hidden: 64,
        output: 16,
        n_samples: 512,
        seed,
    };
    let mut t = TrainerConfig::new(mode, OptimizerKind::adam(), rank, 0.01, 4000);
    t.updater = updater;
    t.schedule = Schedule::Cosine;
    t.seed = seed;
    ExperimentConfig::new(problem, t)
}

fn final_losses(configs: impl Fn(u64) -> ExperimentConfig) -> Result<Vec<f64>> {
    (0..3u64)
        .map(|s| run_in_memory(&configs(s), &RunOptions::default()).map(|r| r.summary.final_loss))
        .collect()
}

fn training_quality() -> Result<Check> {
    let start = Instant::now();
    let online = UpdaterConfig::default();
    let svd = UpdaterConfig::PeriodicSvd { period: 200 };
    let full = median(&mut final_losses(|s| mlp_config(s, Mode::FullRank, online, 16))?);
    let pca = median(&mut final_losses(|s| mlp_config(s, Mode::Dynamic, online, 16))?);
    let per = median(&mut final_losses(|s| mlp_config(s, Mode::Dynamic, svd, 16))?);
    let elapsed = start.elapsed().as_secs_f64();
    let ordered = full <= pca && pca <= 1.2 * per;
    Ok((
        ordered && pca <= 2.0 * full && within(elapsed, 300.0),
        format!("median final loss full {full:.3e}, online PCA {pca:.3e} ({:.2}x full), periodic SVD {per:.3e}", pca / full),
    ))
}

fn rank_trend() -> Result<Check> {
    let template = mlp_config(0, Mode::Dynamic, UpdaterConfig::default(), 2);
    let values: Vec<String> = ["2", "8", "32", "full"].iter().map(|s| s.to_string()).collect();
    let result = sweep(&template, SweepAxis::Rank, &values, &[0, 1, 2])?;
    let failed = result.rows.iter().filter(|r| !r.ok()).count();
    let monotone = non_increasing_within(&result.medians, TREND_TOLERANCE);
    Ok((
        failed == 0 && monotone,
        format!(
            "medians {} for ranks 2/8/32/full (5% tolerance)",
            result.medians.iter().map(|m| format!("{m:.3e}")).collect::<Vec<_>>().join(" / ")
        ),
    ))
}

fn timing_direction() -> Result<Check> {
    let mut config = BenchConfig::new(1024, 1024, 128);
    // one SVD of a 1024² matrix takes tens of seconds here
    config.svd_warmup = 0;
    config.svd_repeats = 1;
    config.repeats = 5;
    let r = timing_bench(config)?;
    Ok((
        r.ratio >= 5.0,
        format!("svd {:.1} ms vs online PCA step {:.2} ms: {:.0}x (need >= 5x)", r.svd_ms, r.pca_step_ms, r.ratio),
    ))
}

fn alpha_instability() -> Result<Check> {
    // No warmup: the first P step is α·ε_W at full size.
    let mut t = TrainerConfig::new(Mode::Dynamic, OptimizerKind::adam(), 8, 0.1, 1000);
    t.warmup_frac = 0.0;
    let template = ExperimentConfig::new(ProblemSpec::Quadratic { n: 32, m: 16, seed: 0 }, t);
    let values = vec!["5".to_string(), "500".to_string()];
    let result = sweep(&template, SweepAxis::Alpha, &values, &[0, 1, 2])?;
    let unstable = |v: &str| result.rows.iter().filter(|r| r.value == v && r.unstable()).count();
    let spikes = |v: &str| {
        result
            .rows
            .iter()
            .filter(|r| r.value == v)
            .map(|r| if r.ok() { format!("{:.1}", r.max_spike_ratio) } else { r.status.clone() })
            .collect::<Vec<_>>()
            .join(",")
    };
    let (small, large) = (unstable("5"), unstable("500"));
    Ok((
        small == 0 && large >= 1,
        format!("unstable seeds: alpha 5 -> {small}/3 [{}], alpha 500 -> {large}/3 [{}]", spikes("5"), spikes("500")),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_criterion_rejected() {
        assert!(run_criterion(0).is_err());
        assert!(run_criterion(14).is_err());
    }

    #[test]
    fn cheap_criteria_pass() {
        for id in [4, 8, 9] {
            let r = run_criterion(id).unwrap();
            assert!(r.passed, "{r}");
        }
    }

    #[test]
    fn display_has_status() {
        let r = CriterionResult {
            id: 3,
            name: "x",
            passed: false,
            detail: "d".into(),
            elapsed_s: 0.0,
        };
        assert!(r.to_string().starts_with("[FAIL]  3 x"));
    }
}
