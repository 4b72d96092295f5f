//! Subspace trainer: optimizer state lives in the k×m projected space and
//! weight updates are lifted back through `P`.
//!
//! One step, per 2-D parameter with gradient `G`:
//!
//! ```text
//! Ĝ = PᵀG;  (Δ̂, Ŝ) = opt(Ĝ, Ŝ);  W ← W + lr·(PΔ̂ − λ_W·W);  P ← update(P, G)
//! ```
//!
//! Each 2-D parameter owns its projection. When a parameter has more columns
//! than rows it is projected on its transpose, so `P` always spans the larger
//! dimension. Vector parameters are trained full-rank.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hamiltonian::{hamiltonian_from_buffers, Family};
use crate::matrix::{frobenius_norm, Matrix};
use crate::optim::{OptimizerKind, OptimizerState};
use crate::problems::ParamSpec;
use crate::projection::{init_projection, ProjectionState, DEFAULT_ALPHA, DEFAULT_LAMBDA, DEFAULT_SVD_PERIOD};

pub const DEFAULT_WARMUP_FRAC: f64 = 0.1;
pub const DEFAULT_GRAD_CLIP: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Projected state, `P` updated every step.
    Dynamic,
    /// Projected state, `P` fixed at its initial value.
    StaticSubspace,
    /// Ordinary optimizer on the full parameters.
    FullRank,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum UpdaterConfig {
    OnlinePca {
        #[serde(default = "default_p_optimizer")]
        optimizer: OptimizerKind,
        #[serde(default = "default_alpha")]
        alpha: f64,
        #[serde(default = "default_lambda")]
        lambda: f64,
    },
    PeriodicSvd {
        #[serde(default = "default_period")]
        period: u64,
    },
    Static,
}

fn default_p_optimizer() -> OptimizerKind {
    OptimizerKind::adam()
}

fn default_alpha() -> f64 {
    DEFAULT_ALPHA
}

fn default_lambda() -> f64 {
    DEFAULT_LAMBDA
}

fn default_period() -> u64 {
    DEFAULT_SVD_PERIOD
}

impl Default for UpdaterConfig {
    fn default() -> Self {
        UpdaterConfig::OnlinePca {
            optimizer: default_p_optimizer(),
            alpha: DEFAULT_ALPHA,
            lambda: DEFAULT_LAMBDA,
        }
    }
}

impl UpdaterConfig {
    fn build(&self, p: Matrix) -> Result<ProjectionState> {
        match *self {
            UpdaterConfig::OnlinePca { optimizer, alpha, lambda } => ProjectionState::online_pca(p, optimizer, lambda, alpha),
            UpdaterConfig::PeriodicSvd { period } => ProjectionState::periodic_svd(p, period),
            UpdaterConfig::Static => ProjectionState::fixed(p),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    /// Linear warmup, then constant.
    #[default]
    Constant,
    /// Linear warmup, then cosine decay to zero at `total`.
    Cosine,
}

/// Linear warmup from 0 to `base_lr` over `warmup_frac·total` steps, then constant.
pub fn lr_schedule(step: u64, total: u64, base_lr: f64, warmup_frac: f64) -> f64 {
    lr_schedule_with(Schedule::Constant, step, total, base_lr, warmup_frac)
}

pub fn lr_schedule_with(kind: Schedule, step: u64, total: u64, base_lr: f64, warmup_frac: f64) -> f64 {
    let warmup = warmup_frac * total as f64;
    let s = step as f64;
    if s < warmup {
        return base_lr * s / warmup;
    }
    match kind {
        Schedule::Constant => base_lr,
        Schedule::Cosine => {
            let span = (total as f64 - warmup).max(1.0);
            let frac = ((s - warmup) / span).clamp(0.0, 1.0);
            0.5 * base_lr * (1.0 + (std::f64::consts::PI * frac).cos())
        }
    }
}

/// `G · min(1, max_norm/‖G‖)`.
pub fn grad_clip(g: &Matrix, max_norm: f64) -> Matrix {
    let norm = frobenius_norm(g);
    if norm <= max_norm {
        g.clone()
    } else {
        g.map(|x| x * (max_norm / norm))
    }
}

/// Global-norm clipping across all parameters. Returns the pre-clip norm.
pub fn clip_global(grads: &mut [Matrix], max_norm: f64) -> f64 {
    let norm = grads.iter().map(|g| frobenius_norm(g).powi(2)).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        for g in grads.iter_mut() {
            for x in g.as_mut_slice() {
                *x *= s;
            }
        }
    }
    norm
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainerConfig {
    pub mode: Mode,
    pub optimizer: OptimizerKind,
    #[serde(default)]
    pub updater: UpdaterConfig,
    pub rank: usize,
    pub base_lr: f64,
    pub total_steps: u64,
    #[serde(default = "default_warmup")]
    pub warmup_frac: f64,
    #[serde(default)]
    pub schedule: Schedule,
    #[serde(default)]
    pub weight_decay_w: f64,
    #[serde(default)]
    pub weight_decay_p: f64,
    /// `None` disables clipping.
    #[serde(default = "default_clip")]
    pub grad_clip: Option<f64>,
    #[serde(default)]
    pub seed: u64,
    /// Run each P update on a scoped thread beside the W update.
    #[serde(default)]
    pub parallel_p_update: bool,
    /// Measure P-update wall time. Off by default so trajectories are
    /// byte-reproducible.
    #[serde(default)]
    pub timing: bool,
}

fn default_warmup() -> f64 {
    DEFAULT_WARMUP_FRAC
}

fn default_clip() -> Option<f64> {
    Some(DEFAULT_GRAD_CLIP)
}

impl TrainerConfig {
    /// Defaults: online PCA with Adam on `P`,
    /// α = 5, λ = 0.1, 10% warmup, clipping at 1.
    pub fn new(mode: Mode, optimizer: OptimizerKind, rank: usize, base_lr: f64, total_steps: u64) -> Self {
        Self {
            mode,
            optimizer,
            updater: UpdaterConfig::default(),
            rank,
            base_lr,
            total_steps,
            warmup_frac: DEFAULT_WARMUP_FRAC,
            schedule: Schedule::Constant,
            weight_decay_w: 0.0,
            weight_decay_p: 0.0,
            grad_clip: Some(DEFAULT_GRAD_CLIP),
            seed: 0,
            parallel_p_update: false,
            timing: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        self.optimizer.validate()?;
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return bad(format!("base_lr must be positive, got {}", self.base_lr));
        }
        if !(0.0..1.0).contains(&self.warmup_frac) {
            return bad(format!("warmup_frac must lie in [0, 1), got {}", self.warmup_frac));
        }
        if !(self.weight_decay_w >= 0.0 && self.weight_decay_p >= 0.0) {
            return bad("weight decays must be nonnegative".into());
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return bad(format!("grad_clip must be positive, got {c}"));
            }
        }
        if self.mode != Mode::FullRank && self.rank == 0 {
            return bad("rank must be at least 1".into());
        }
        match self.updater {
            UpdaterConfig::OnlinePca { optimizer, alpha, lambda } => {
                optimizer.validate()?;
                if !(alpha > 0.0 && lambda >= 0.0) {
                    return bad(format!("online PCA needs alpha > 0 and lambda >= 0, got {alpha}, {lambda}"));
                }
            }
            UpdaterConfig::PeriodicSvd { period: 0 } => return bad("svd period must be positive".into()),
            _ => {}
        }
        Ok(())
    }
}

/// One row of the trajectory CSV.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub step: u64,
    pub loss: f64,
    pub grad_norm: f64,
    pub hamiltonian: f64,
    #[serde(rename = "orthodefect_P")]
    pub orthodefect_p: f64,
    pub lr: f64,
    pub wall_ms_pupdate: f64,
}

pub const TRAJECTORY_COLUMNS: [&str; 7] = [
    "step",
    "loss",
    "grad_norm",
    "hamiltonian",
    "orthodefect_P",
    "lr",
    "wall_ms_pupdate",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSlot {
    pub name: String,
    pub w: Matrix,
    /// `P` acts on the transpose of `w`.
    pub transposed: bool,
    pub opt: OptimizerState,
    pub proj: Option<ProjectionState>,
}

impl ParamSlot {
    fn view(&self, g: &Matrix) -> Matrix {
        if self.transposed {
            g.transpose()
        } else {
            g.clone()
        }
    }

    fn unview(&self, x: Matrix) -> Matrix {
        if self.transposed {
            x.transpose()
        } else {
            x
        }
    }

    /// W step with the projection of step `t`; returns the new W and state.
    fn weight_step(&self, g: &Matrix, lr: f64, decay: f64) -> Result<(Matrix, OptimizerState)> {
        let (dir, opt) = match &self.proj {
            None => self.opt.step(g)?,
            Some(ps) => {
                let g_hat = ps.p.t_matmul(&self.view(g))?;
                let (d_hat, opt) = self.opt.step(&g_hat)?;
                (self.unview(ps.p.matmul(&d_hat)?), opt)
            }
        };
        let mut w = self.w.clone();
        w.add_scaled(lr, &Matrix::axpy(-decay, &self.w, &dir)?)?;
        Ok((w, opt))
    }
}

fn timed<T>(enabled: bool, f: impl FnOnce() -> T) -> (T, f64) {
    if !enabled {
        return (f(), 0.0);
    }
    let start = Instant::now();
    let out = f();
    (out, start.elapsed().as_secs_f64() * 1e3)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubspaceTrainer {
    pub config: TrainerConfig,
    pub slots: Vec<ParamSlot>,
    pub step: u64,
}

pub type GradFn<'a> = &'a (dyn Fn(&[Matrix]) -> Result<(f64, Vec<Matrix>)> + Sync);

impl SubspaceTrainer {
    pub fn new(config: TrainerConfig, specs: &[ParamSpec], init: Vec<Matrix>) -> Result<Self> {
        config.validate()?;
        if specs.len() != init.len() {
            return Err(Error::InvalidArgument(format!(
                "{} parameter specs but {} initial values",
                specs.len(),
                init.len()
            )));
        }
        let mut slots = Vec::with_capacity(specs.len());
        for (idx, (spec, w)) in specs.iter().zip(init).enumerate() {
            if w.shape() != spec.shape() {
                return Err(Error::ShapeMismatch {
                    op: "trainer init",
                    left: w.shape(),
                    right: spec.shape(),
                });
            }
            w.check_finite(&spec.name)?;
            let full = config.mode == Mode::FullRank || spec.is_vector;
            let transposed = !full && spec.cols > spec.rows;
            let (n, m) = if transposed { (spec.cols, spec.rows) } else { spec.shape() };
            let (opt, proj) = if full {
                (OptimizerState::new(config.optimizer, spec.rows, spec.cols)?, None)
            } else {
                let k = config.rank;
                if k > n {
                    return Err(Error::Config(format!("rank {k} exceeds dimension {n} of parameter {}", spec.name)));
                }
                if matches!(config.updater, UpdaterConfig::PeriodicSvd { .. }) && k > m {
                    return Err(Error::Config(format!(
                        "periodic SVD needs rank <= {m} for parameter {} (thin SVD has {m} vectors)",
                        spec.name
                    )));
                }
                let p = init_projection(n, k, config.seed.wrapping_mul(0x9E37_79B9).wrapping_add(idx as u64))?;
                (OptimizerState::new(config.optimizer, k, m)?, Some(config.updater.build(p)?))
            };
            slots.push(ParamSlot {
                name: spec.name.clone(),
                w,
                transposed,
                opt,
                proj,
            });
        }
        Ok(Self { config, slots, step: 0 })
    }

    pub fn params(&self) -> Vec<Matrix> {
        self.slots.iter().map(|s| s.w.clone()).collect()
    }

    /// Replaces the projection of a projected slot, e.g. to pin `P = I`.
    pub fn set_projection(&mut self, slot: usize, p: Matrix) -> Result<()> {
        let s = self.slots.get_mut(slot).ok_or_else(|| Error::InvalidArgument(format!("no slot {slot}")))?;
        let ps = s.proj.as_mut().ok_or_else(|| Error::InvalidArgument(format!("slot {} is full-rank", s.name)))?;
        if p.shape() != ps.p.shape() {
            return Err(Error::ShapeMismatch {
                op: "set projection",
                left: p.shape(),
                right: ps.p.shape(),
            });
        }
        ps.p = p;
        ps.validate()
    }

    /// Scalars held by the weight optimizer's buffers.
    pub fn state_scalar_count(&self) -> usize {
        self.slots.iter().map(|s| s.opt.scalar_count()).sum()
    }

    /// Scalars held by the projections and their optimizers.
    pub fn projection_scalar_count(&self) -> usize {
        self.slots
            .iter()
            .filter_map(|s| s.proj.as_ref())
            .map(|ps| {
                ps.p.len()
                    + match &ps.updater {
                        crate::projection::Updater::OnlinePca { optimizer, .. } => optimizer.scalar_count(),
                        _ => 0,
                    }
            })
            .sum()
    }

    pub fn max_orthodefect(&self) -> f64 {
        self.slots
            .iter()
            .filter_map(|s| s.proj.as_ref())
            .map(ProjectionState::orthonormality_defect)
            .fold(0.0, f64::max)
    }

    /// Discrete Hamiltonian of the current state: the continuous-time `H`
    /// with coefficients matched to the optimizer at `lr`.
    pub fn hamiltonian(&self, loss: f64, lr: f64) -> Result<f64> {
        let Some(family) = Family::for_discrete(&self.config.optimizer, lr) else {
            return Ok(loss);
        };
        let mut h = hamiltonian_from_buffers(&family, loss, &Matrix::zeros(1, 1), family.needs_v().then(|| Matrix::zeros(1, 1)).as_ref())?;
        for s in &self.slots {
            let m = s.opt.m.as_ref().expect("non-GD optimizers carry momentum");
            h += hamiltonian_from_buffers(&family, 0.0, m, s.opt.v.as_ref())?;
        }
        Ok(h)
    }

    /// One training step; on error the trainer is left unchanged.
    pub fn step(&mut self, grad_fn: GradFn<'_>) -> Result<TrajectoryRecord> {
        let (loss, mut grads) = grad_fn(&self.params())?;
        if !loss.is_finite() {
            return Err(Error::Diverged {
                step: self.step as usize,
                detail: format!("loss = {loss}"),
            });
        }
        if grads.len() != self.slots.len() {
            return Err(Error::InvalidArgument(format!(
                "gradient function returned {} matrices for {} parameters",
                grads.len(),
                self.slots.len()
            )));
        }
        for (g, s) in grads.iter().zip(&self.slots) {
            if g.shape() != s.w.shape() {
                return Err(Error::ShapeMismatch {
                    op: "gradient",
                    left: g.shape(),
                    right: s.w.shape(),
                });
            }
            g.check_finite(&format!("gradient of {}", s.name))?;
        }
        let grad_norm = match self.config.grad_clip {
            Some(c) => clip_global(&mut grads, c),
            None => grads.iter().map(|g| frobenius_norm(g).powi(2)).sum::<f64>().sqrt(),
        };
        let c = &self.config;
        let lr = lr_schedule_with(c.schedule, self.step, c.total_steps, c.base_lr, c.warmup_frac);
        let hamiltonian = self.hamiltonian(loss, lr)?;
        let orthodefect_p = self.max_orthodefect();
        let update_p = c.mode == Mode::Dynamic;

        let mut next = Vec::with_capacity(self.slots.len());
        let mut wall_ms = 0.0;
        for (slot, g) in self.slots.iter().zip(&grads) {
            let p_job = |slot: &ParamSlot| -> Option<(Result<ProjectionState>, f64)> {
                let ps = slot.proj.as_ref().filter(|_| update_p)?;
                let gv = slot.view(g);
                Some(timed(c.timing, || ps.update(&gv, lr, c.weight_decay_p)))
            };
            let (w_res, p_res) = if c.parallel_p_update && slot.proj.is_some() && update_p {
                std::thread::scope(|scope| {
                    let handle = scope.spawn(|| p_job(slot));
                    let w = slot.weight_step(g, lr, c.weight_decay_w);
                    (w, handle.join().expect("projection update thread panicked"))
                })
            } else {
                (slot.weight_step(g, lr, c.weight_decay_w), p_job(slot))
            };
            let (w, opt) = w_res?;
            w.check_finite(&slot.name).map_err(|_| Error::Diverged {
                step: self.step as usize,
                detail: format!("parameter {} became non-finite", slot.name),
            })?;
            let proj = match p_res {
                Some((ps, ms)) => {
                    wall_ms += ms;
                    Some(ps?)
                }
                None => slot.proj.clone(),
            };
            next.push(ParamSlot {
                name: slot.name.clone(),
                w,
                transposed: slot.transposed,
                opt,
                proj,
            });
        }
        self.slots = next;
        let record = TrajectoryRecord {
            step: self.step,
            loss,
            grad_norm,
            hamiltonian,
            orthodefect_p,
            lr,
            wall_ms_pupdate: wall_ms,
        };
        self.step += 1;
        Ok(record)
    }
}

/// Pure form of [`SubspaceTrainer::step`].
pub fn train_step(state: &SubspaceTrainer, grad_fn: GradFn<'_>) -> Result<(SubspaceTrainer, TrajectoryRecord)> {
    let mut next = state.clone();
    let rec = next.step(grad_fn)?;
    Ok((next, rec))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::{MlpRegression, Problem, Quadratic};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn quad_trainer(q: &Quadratic, mut config: TrainerConfig, seed: u64) -> SubspaceTrainer {
        config.seed = seed;
        SubspaceTrainer::new(config, &q.params(), q.init_params(seed)).unwrap()
    }

    fn run(t: &mut SubspaceTrainer, p: &dyn Problem, steps: usize) -> Vec<TrajectoryRecord> {
        let f = |x: &[Matrix]| p.loss_and_grad(x);
        (0..steps).map(|_| t.step(&f).unwrap()).collect()
    }

    #[test]
    fn schedule_examples() {
        assert_eq!(lr_schedule(0, 1000, 0.1, 0.1), 0.0);
        assert_eq!(lr_schedule(100, 1000, 0.1, 0.1), 0.1);
        assert!((lr_schedule(50, 1000, 0.1, 0.1) - 0.05).abs() < 1e-15);
        assert_eq!(lr_schedule(900, 1000, 0.1, 0.1), 0.1);
        assert_eq!(lr_schedule(0, 1000, 0.1, 0.0), 0.1);
        assert!((lr_schedule_with(Schedule::Cosine, 1000, 1000, 0.1, 0.1)).abs() < 1e-15);
        assert!((lr_schedule_with(Schedule::Cosine, 550, 1000, 0.1, 0.1) - 0.05).abs() < 1e-12);
    }

    #[test]
    fn clip_examples() {
        let g = Matrix::from_rows(&[[0.3, 0.4]]).unwrap();
        assert_eq!(grad_clip(&g, 1.0), g);
        let g = Matrix::from_rows(&[[0.0, 4.0]]).unwrap();
        assert!((frobenius_norm(&grad_clip(&g, 1.0)) - 1.0).abs() < 1e-15);
        let mut gs = vec![Matrix::from_rows(&[[3.0]]).unwrap(), Matrix::from_rows(&[[4.0]]).unwrap()];
        assert_eq!(clip_global(&mut gs, 1.0), 5.0);
        assert!((gs[0][(0, 0)] - 0.6).abs() < 1e-15 && (gs[1][(0, 0)] - 0.8).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn clip_norm_is_min(seed in any::<u64>(), scale in 0.01f64..10.0, max in 0.1f64..5.0) {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            let g = Matrix::randn(4, 3, &mut r).map(|x| x * scale);
            let out = frobenius_norm(&grad_clip(&g, max));
            prop_assert!((out - frobenius_norm(&g).min(max)).abs() <= 1e-12 * out.max(1.0));
        }
    }

    #[test]
    fn identity_projection_reproduces_full_rank() {
        let q = Quadratic::random(6, 4, 1).unwrap();
        for kind in [OptimizerKind::gd(), OptimizerKind::momentum(), OptimizerKind::adam(), OptimizerKind::lion()] {
            let mut full = quad_trainer(&q, TrainerConfig::new(Mode::FullRank, kind, 6, 0.01, 100), 3);
            let mut cfg = TrainerConfig::new(Mode::Dynamic, kind, 6, 0.01, 100);
            cfg.updater = UpdaterConfig::Static;
            let mut proj = quad_trainer(&q, cfg, 3);
            proj.set_projection(0, Matrix::identity(6)).unwrap();
            for _ in 0..100 {
                let f = |x: &[Matrix]| q.loss_and_grad(x);
                full.step(&f).unwrap();
                proj.step(&f).unwrap();
                let diff = full.slots[0].w.sub(&proj.slots[0].w).unwrap().max_abs();
                assert!(diff <= 1e-12, "{kind:?}: {diff}");
            }
        }
    }

    #[test]
    fn static_subspace_confines_increments() {
        let q = Quadratic::random(8, 3, 2).unwrap();
        for kind in [OptimizerKind::momentum(), OptimizerKind::adam(), OptimizerKind::lion()] {
            let mut t = quad_trainer(&q, TrainerConfig::new(Mode::StaticSubspace, kind, 3, 0.05, 200), 1);
            let w0 = t.slots[0].w.clone();
            let p = t.slots[0].proj.as_ref().unwrap().p.clone();
            run(&mut t, &q, 200);
            let d = t.slots[0].w.sub(&w0).unwrap();
            let resid = d.sub(&p.matmul(&p.t_matmul(&d).unwrap()).unwrap()).unwrap();
            assert!(frobenius_norm(&resid) <= 1e-10);
            assert_eq!(t.slots[0].proj.as_ref().unwrap().p, p);
        }
    }

    #[test]
    fn projected_gd_descends_monotonically() {
        let w_star = Matrix::randn(10, 4, &mut ChaCha8Rng::seed_from_u64(5));
        let q = Quadratic::new(Matrix::identity(10), w_star).unwrap();
        let mut cfg = TrainerConfig::new(Mode::Dynamic, OptimizerKind::gd(), 3, 0.05, 500);
        cfg.grad_clip = None;
        let mut t = quad_trainer(&q, cfg, 2);
        let recs = run(&mut t, &q, 500);
        for w in recs.windows(2) {
            assert!(w[1].loss <= w[0].loss * (1.0 + 1e-14), "{} > {}", w[1].loss, w[0].loss);
        }
        assert!(recs.last().unwrap().loss < 1e-3 * recs[0].loss);
    }

    #[test]
    fn projected_adam_state_is_k_over_n() {
        let q = Quadratic::random(32, 8, 0).unwrap();
        let full = quad_trainer(&q, TrainerConfig::new(Mode::FullRank, OptimizerKind::adam(), 8, 0.01, 10), 0);
        let proj = quad_trainer(&q, TrainerConfig::new(Mode::Dynamic, OptimizerKind::adam(), 8, 0.01, 10), 0);
        assert_eq!(full.state_scalar_count(), 2 * 32 * 8);
        assert_eq!(proj.state_scalar_count() * 32, full.state_scalar_count() * 8);
        assert_eq!(proj.projection_scalar_count(), 3 * 32 * 8);
    }

    #[test]
    fn wide_parameters_project_the_long_side() {
        let p = MlpRegression::new(4, 12, 3, 20, 0).unwrap();
        let t = SubspaceTrainer::new(TrainerConfig::new(Mode::Dynamic, OptimizerKind::adam(), 2, 0.01, 10), &p.params(), p.init_params(0)).unwrap();
        // W1 is 12×4, b1 vector, W2 is 3×12 (transposed view 12×3), b2 vector
        assert!(!t.slots[0].transposed && t.slots[0].proj.as_ref().unwrap().p.shape() == (12, 2));
        assert!(t.slots[1].proj.is_none());
        assert!(t.slots[2].transposed && t.slots[2].proj.as_ref().unwrap().p.shape() == (12, 2));
        assert_eq!(t.slots[2].opt.m.as_ref().unwrap().shape(), (2, 3));
        let mut cfg = TrainerConfig::new(Mode::Dynamic, OptimizerKind::adam(), 13, 0.01, 10);
        assert!(SubspaceTrainer::new(cfg.clone(), &p.params(), p.init_params(0)).is_err());
        cfg.rank = 4;
        cfg.updater = UpdaterConfig::PeriodicSvd { period: 10 };
        assert!(SubspaceTrainer::new(cfg, &p.params(), p.init_params(0)).is_err());
    }

    #[test]
    fn deterministic_and_parallel_schedule_identical() {
        let p = MlpRegression::new(6, 10, 3, 40, 4).unwrap();
        let cfg = TrainerConfig::new(Mode::Dynamic, OptimizerKind::adam(), 3, 0.01, 50);
        let mk = |parallel: bool| {
            let mut c = cfg.clone();
            c.parallel_p_update = parallel;
            SubspaceTrainer::new(c, &p.params(), p.init_params(1)).unwrap()
        };
        let (mut a, mut b, mut c) = (mk(false), mk(false), mk(true));
        let ra = run(&mut a, &p, 50);
        let rb = run(&mut b, &p, 50);
        let rc = run(&mut c, &p, 50);
        assert_eq!(ra, rb);
        for (x, y) in ra.iter().zip(&rc) {
            assert_eq!(x.loss.to_bits(), y.loss.to_bits());
            assert_eq!(x.hamiltonian.to_bits(), y.hamiltonian.to_bits());
        }
        assert_eq!(a.slots, c.slots);
    }

    #[test]
    fn premature_stops_only_at_zero_gradient() {
        // Projected GD with online PCA: any stretch of 100 frozen steps must
        // sit at a stationary point.
        for seed in 0..10 {
            let q = Quadratic::random(8, 4, 100 + seed).unwrap();
            let mut cfg = TrainerConfig::new(Mode::Dynamic, OptimizerKind::gd(), 2, 0.1, 3000);
            cfg.grad_clip = None;
            cfg.warmup_frac = 0.0;
            let mut t = quad_trainer(&q, cfg, seed);
            let f = |x: &[Matrix]| q.loss_and_grad(x);
            let mut still = 0;
            for _ in 0..3000 {
                let before = t.slots[0].w.clone();
                t.step(&f).unwrap();
                let moved = frobenius_norm(&t.slots[0].w.sub(&before).unwrap());
                still = if moved <= 1e-12 { still + 1 } else { 0 };
                if still >= 100 {
                    let g = q.loss_and_grad(&t.params()).unwrap().1;
                    assert!(frobenius_norm(&g[0]) <= 1e-6, "seed {seed} stalled at ‖G‖ = {}", frobenius_norm(&g[0]));
                    break;
                }
            }
        }
    }

    #[test]
    fn trajectory_records_fields() {
        let q = Quadratic::random(6, 2, 0).unwrap();
        let mut t = quad_trainer(&q, TrainerConfig::new(Mode::Dynamic, OptimizerKind::momentum(), 2, 0.05, 20), 0);
        let recs = run(&mut t, &q, 20);
        assert_eq!(recs[0].step, 0);
        assert_eq!(recs[0].lr, 0.0);
        assert_eq!(recs[0].hamiltonian, recs[0].loss);
        assert!(recs[5].hamiltonian >= recs[5].loss);
        assert!(recs.iter().all(|r| r.wall_ms_pupdate == 0.0));
        assert!(recs[0].orthodefect_p < 1e-12);
    }

    #[test]
    fn bad_gradients_leave_state_untouched() {
        let q = Quadratic::random(4, 2, 0).unwrap();
        let mut t = quad_trainer(&q, TrainerConfig::new(Mode::Dynamic, OptimizerKind::adam(), 2, 0.05, 20), 0);
        let before = t.clone();
        let nan = |x: &[Matrix]| Ok((0.0, vec![x[0].map(|_| f64::NAN)]));
        assert!(t.step(&nan).is_err());
        let wrong = |_: &[Matrix]| Ok((0.0, vec![Matrix::zeros(2, 2)]));
        assert!(t.step(&wrong).is_err());
        assert_eq!(t, before);
    }

    #[test]
    fn config_validation() {
        let mut c = TrainerConfig::new(Mode::Dynamic, OptimizerKind::adam(), 2, 0.01, 10);
        assert!(c.validate().is_ok());
        c.warmup_frac = 1.0;
        assert!(c.validate().is_err());
        c.warmup_frac = 0.1;
        c.base_lr = 0.0;
        assert!(c.validate().is_err());
        c.base_lr = 0.1;
        c.rank = 0;
        assert!(c.validate().is_err());
        c.rank = 1;
        c.updater = UpdaterConfig::PeriodicSvd { period: 0 };
        assert!(c.validate().is_err());
    }
}
