//! Continuous-time simulation of the projected Hamiltonian descent systems.
//!
//! The state is `(W, m, v, P)`: `m` and the optional `v` live in the reduced
//! k×m space when `P` is present, and in full space otherwise. See
//! [`crate::hamiltonian`] for the vector fields. `P` follows a chosen
//! [`Gamma`].

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hamiltonian::{continuous_descent_rate, hamiltonian_from_buffers, Family, HamiltonianSpec};
use crate::matrix::{frobenius_norm, Matrix};
use crate::projection::pca_loss_grad;

pub const DEFAULT_STEP: f64 = 1e-3;
pub const BLOWUP_NORM: f64 = 1e12;
/// `‖Ẇ‖` threshold below which the probe treats the system as settled.
pub const SETTLE_SPEED: f64 = 1e-8;

/// Vector field driving `P`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Gamma {
    /// `Ṗ = −rate·∇_P L_G(P)` on the online PCA objective; `Ṗ = 0` at `G = 0`.
    PcaGradientFlow {
        lambda: f64,
        #[serde(default = "unit_rate")]
        rate: f64,
    },
    Frozen,
}

fn unit_rate() -> f64 {
    1.0
}

impl Gamma {
    /// PCA gradient flow at unit speed.
    pub fn pca(lambda: f64) -> Self {
        Gamma::PcaGradientFlow { lambda, rate: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Euler,
    Rk4,
}

pub type LossFn<'a> = &'a (dyn Fn(&Matrix) -> Result<(f64, Matrix)> + Sync);

#[derive(Clone, Copy)]
pub struct OdeSystem<'a> {
    pub spec: HamiltonianSpec,
    pub gamma: Gamma,
    /// Momentum only: drop the `−a m` damping so `H` is conserved.
    pub conservative: bool,
    loss: LossFn<'a>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OdeState {
    pub t: f64,
    pub w: Matrix,
    pub m: Matrix,
    pub v: Option<Matrix>,
    pub p: Option<Matrix>,
}

#[derive(Debug, Clone)]
struct Deriv {
    w: Matrix,
    m: Matrix,
    v: Option<Matrix>,
    p: Option<Matrix>,
}

impl Deriv {
    fn is_zero(&self) -> bool {
        let z = |x: &Matrix| x.max_abs() == 0.0;
        z(&self.w) && z(&self.m) && self.v.as_ref().is_none_or(z) && self.p.as_ref().is_none_or(z)
    }
}

/// Quantities at one state, evaluated alongside the derivative.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OdeRecord {
    pub step: usize,
    pub t: f64,
    pub loss: f64,
    pub grad_norm: f64,
    pub hamiltonian: f64,
    pub dhdt_analytic: f64,
    pub w_dot_norm: f64,
    pub orthodefect_p: f64,
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub records: Vec<OdeRecord>,
    pub final_state: OdeState,
    pub step_size: f64,
}

impl Trajectory {
    /// CSV with the trainer's columns plus `dHdt_analytic`; `lr` holds the
    /// step size and the timing column is zero.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let io = |e: csv::Error| Error::Io(e.into());
        w.write_record([
            "step",
            "loss",
            "grad_norm",
            "hamiltonian",
            "orthodefect_P",
            "lr",
            "wall_ms_pupdate",
            "dHdt_analytic",
        ])
        .map_err(io)?;
        for r in &self.records {
            w.write_record([
                r.step.to_string(),
                r.loss.to_string(),
                r.grad_norm.to_string(),
                r.hamiltonian.to_string(),
                r.orthodefect_p.to_string(),
                self.step_size.to_string(),
                "0".to_string(),
                r.dhdt_analytic.to_string(),
            ])
            .map_err(io)?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ProbeReport {
    /// `‖∇L‖` at the end of the run is within `tol_grad`.
    pub passed: bool,
    /// `‖Ẇ‖ ≤ SETTLE_SPEED` held for the whole settle window (or the state
    /// is an exact fixed point).
    pub settled: bool,
    pub t_end: f64,
    pub final_grad_norm: f64,
    pub final_loss: f64,
    pub final_w_dot_norm: f64,
}

impl<'a> OdeSystem<'a> {
    pub fn new(family: Family, gamma: Gamma, projected: bool, loss: LossFn<'a>) -> Result<Self> {
        if let Gamma::PcaGradientFlow { lambda, rate } = gamma {
            if !(lambda >= 0.0 && rate > 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "pca flow needs lambda >= 0 and rate > 0, got lambda={lambda}, rate={rate}"
                )));
            }
        }
        Ok(Self {
            spec: HamiltonianSpec::new(family, projected)?,
            gamma,
            conservative: false,
            loss,
        })
    }

    /// Momentum system without damping (`ṁ = aĜ`).
    pub fn conservative(mut self) -> Result<Self> {
        if !matches!(self.spec.family, Family::Momentum { .. }) {
            return Err(Error::InvalidArgument("conservative variant exists for momentum only".into()));
        }
        self.conservative = true;
        Ok(self)
    }

    /// Zero momentum (and `v = v0` for Adam) at `W = w`.
    pub fn initial_state(&self, w: Matrix, p: Option<Matrix>, v0: Option<Matrix>) -> Result<OdeState> {
        let rows = p.as_ref().map_or(w.rows(), Matrix::cols);
        let s = OdeState {
            t: 0.0,
            m: Matrix::zeros(rows, w.cols()),
            w,
            v: v0,
            p,
        };
        self.check_state(&s)?;
        Ok(s)
    }

    pub fn check_state(&self, s: &OdeState) -> Result<()> {
        let reduced = match (&s.p, self.spec.projected) {
            (Some(p), true) if p.rows() == s.w.rows() && p.cols() <= p.rows() => (p.cols(), s.w.cols()),
            (None, false) => s.w.shape(),
            _ => {
                return Err(Error::InvalidArgument(format!(
                    "state P does not fit W {:?} (projected = {})",
                    s.w.shape(),
                    self.spec.projected
                )))
            }
        };
        if s.m.shape() != reduced {
            return Err(Error::ShapeMismatch {
                op: "ode state m",
                left: s.m.shape(),
                right: reduced,
            });
        }
        match (&s.v, self.spec.family.needs_v()) {
            (Some(v), true) if v.shape() == reduced => Ok(()),
            (None, false) => Ok(()),
            _ => Err(Error::FamilyMismatch(format!(
                "second-moment buffer does not fit the {} system",
                self.spec.family.name()
            ))),
        }
    }

    fn reduce(&self, p: Option<&Matrix>, g: &Matrix) -> Result<Matrix> {
        match p {
            Some(p) => p.t_matmul(g),
            None => Ok(g.clone()),
        }
    }

    fn lift(&self, p: Option<&Matrix>, x: Matrix) -> Result<Matrix> {
        match p {
            Some(p) => p.matmul(&x),
            None => Ok(x),
        }
    }

    /// Derivative at `s` together with the loss and full gradient there.
    fn eval(&self, s: &OdeState) -> Result<(Deriv, f64, Matrix)> {
        let (loss, grad) = (self.loss)(&s.w)?;
        let p = s.p.as_ref();
        let g = self.reduce(p, &grad)?;
        let (w, m, v) = match self.spec.family {
            Family::Momentum { a } => {
                let dm = if self.conservative {
                    g.scale(a)?
                } else {
                    g.sub(&s.m)?.scale(a)?
                };
                (self.lift(p, s.m.scale(-1.0)?)?, dm, None)
            }
            Family::Adam { a, b, e } => {
                let v = s.v.as_ref().expect("checked");
                let vf = v.map(|x| x.max(0.0));
                let dir = s.m.elementwise_div_shifted(&vf, e)?.scale(-1.0)?;
                let dv = Matrix::from_fn(v.rows(), v.cols(), |i, j| b * (g[(i, j)] * g[(i, j)] - vf[(i, j)]));
                (self.lift(p, dir)?, g.sub(&s.m)?.scale(a)?, Some(dv))
            }
            Family::LionK { a, b, k } => {
                let arg = Matrix::axpy(-b, &g, &s.m.scale(1.0 - b)?)?;
                (self.lift(p, k.grad(&arg))?, g.add(&s.m)?.scale(-a)?, None)
            }
        };
        let dp = match (&s.p, self.gamma) {
            (Some(p), Gamma::PcaGradientFlow { lambda, rate }) if frobenius_norm(&grad) > 0.0 => {
                Some(pca_loss_grad(p, &grad, lambda)?.scale(-rate)?)
            }
            (Some(p), _) => Some(Matrix::zeros(p.rows(), p.cols())),
            (None, _) => None,
        };
        Ok((Deriv { w, m, v, p: dp }, loss, grad))
    }

    fn record(&self, step: usize, s: &OdeState, d: &Deriv, loss: f64, grad: &Matrix) -> Result<OdeRecord> {
        let hamiltonian = hamiltonian_from_buffers(&self.spec.family, loss, &s.m, s.v.as_ref())?;
        let dhdt_analytic = if self.conservative {
            0.0
        } else {
            continuous_descent_rate(&self.spec, &s.m, s.v.as_ref(), s.p.as_ref(), grad)?
        };
        Ok(OdeRecord {
            step,
            t: s.t,
            loss,
            grad_norm: frobenius_norm(grad),
            hamiltonian,
            dhdt_analytic,
            w_dot_norm: frobenius_norm(&d.w),
            orthodefect_p: s.p.as_ref().map_or(0.0, Matrix::orthonormality_defect),
        })
    }

    /// Loss, Hamiltonian and analytic rate at a state.
    pub fn observe(&self, s: &OdeState) -> Result<OdeRecord> {
        let (d, loss, grad) = self.eval(s)?;
        self.record(0, s, &d, loss, &grad)
    }

    fn advance(s: &OdeState, d: &Deriv, h: f64) -> Result<OdeState> {
        let opt = |x: &Option<Matrix>, dx: &Option<Matrix>| -> Result<Option<Matrix>> {
            match (x, dx) {
                (Some(x), Some(dx)) => Ok(Some(Matrix::axpy(h, dx, x)?)),
                _ => Ok(None),
            }
        };
        Ok(OdeState {
            t: s.t + h,
            w: Matrix::axpy(h, &d.w, &s.w)?,
            m: Matrix::axpy(h, &d.m, &s.m)?,
            v: opt(&s.v, &d.v)?,
            p: opt(&s.p, &d.p)?,
        })
    }

    fn combine(ds: [&Deriv; 4]) -> Result<Deriv> {
        let mix = |xs: [&Matrix; 4]| -> Result<Matrix> {
            let mut out = xs[0].clone();
            out.add_scaled(2.0, xs[1])?;
            out.add_scaled(2.0, xs[2])?;
            out.add_scaled(1.0, xs[3])?;
            out.scale(1.0 / 6.0)
        };
        let opt = |f: fn(&Deriv) -> &Option<Matrix>| -> Result<Option<Matrix>> {
            match ds.map(f) {
                [Some(a), Some(b), Some(c), Some(d)] => Ok(Some(mix([a, b, c, d])?)),
                _ => Ok(None),
            }
        };
        Ok(Deriv {
            w: mix(ds.map(|d| &d.w))?,
            m: mix(ds.map(|d| &d.m))?,
            v: opt(|d| &d.v)?,
            p: opt(|d| &d.p)?,
        })
    }

    fn step_from(&self, s: &OdeState, k1: &Deriv, h: f64, method: Method) -> Result<OdeState> {
        let mut next = match method {
            Method::Euler => Self::advance(s, k1, h)?,
            Method::Rk4 => {
                let k2 = self.eval(&Self::advance(s, k1, h / 2.0)?)?.0;
                let k3 = self.eval(&Self::advance(s, &k2, h / 2.0)?)?.0;
                let k4 = self.eval(&Self::advance(s, &k3, h)?)?.0;
                let mut n = Self::advance(s, &Self::combine([k1, &k2, &k3, &k4])?, h)?;
                n.t = s.t + h;
                n
            }
        };
        if let Some(v) = next.v.as_mut() {
            for x in v.as_mut_slice() {
                *x = x.max(0.0);
            }
        }
        Ok(next)
    }

    fn check_blowup(step: usize, s: &OdeState) -> Result<()> {
        let parts = [Some(&s.w), Some(&s.m), s.v.as_ref(), s.p.as_ref()];
        for (name, x) in ["W", "m", "v", "P"].iter().zip(parts) {
            if let Some(x) = x {
                let n = frobenius_norm(x);
                if !(n <= BLOWUP_NORM) {
                    return Err(Error::Diverged {
                        step,
                        detail: format!("‖{name}‖ = {n:e} at t = {}", s.t),
                    });
                }
            }
        }
        Ok(())
    }

    /// Runs `steps` steps of size `h`, recording every state including the
    /// initial one.
    pub fn integrate(&self, init: &OdeState, h: f64, steps: usize, method: Method) -> Result<Trajectory> {
        if !(h > 0.0) {
            return Err(Error::InvalidArgument(format!("step size must be positive, got {h}")));
        }
        self.check_state(init)?;
        let mut s = init.clone();
        let mut records = Vec::with_capacity(steps + 1);
        for step in 0..=steps {
            let (d, loss, grad) = self.eval(&s)?;
            records.push(self.record(step, &s, &d, loss, &grad)?);
            if step == steps {
                break;
            }
            s = self.step_from(&s, &d, h, method)?;
            Self::check_blowup(step + 1, &s)?;
        }
        Ok(Trajectory {
            records,
            final_state: s,
            step_size: h,
        })
    }

    /// Integrates with RK4 until `‖Ẇ‖ ≤ SETTLE_SPEED` holds for `settle_time`
    /// or `t_max` is reached, then reports the gradient norm. Running out of
    /// time is reported, not raised.
    pub fn stationarity_probe(&self, init: &OdeState, h: f64, t_max: f64, tol_grad: f64, settle_time: f64) -> Result<ProbeReport> {
        if !(h > 0.0 && t_max >= 0.0) {
            return Err(Error::InvalidArgument("probe needs h > 0 and t_max >= 0".into()));
        }
        self.check_state(init)?;
        let mut s = init.clone();
        let mut slow_since: Option<f64> = None;
        let mut step = 0usize;
        loop {
            let (d, loss, grad) = self.eval(&s)?;
            let speed = frobenius_norm(&d.w);
            let fixed = d.is_zero();
            if speed <= SETTLE_SPEED {
                slow_since.get_or_insert(s.t);
            } else {
                slow_since = None;
            }
            let settled = fixed || slow_since.is_some_and(|t0| s.t - t0 >= settle_time);
            if settled || s.t >= t_max {
                let final_grad_norm = frobenius_norm(&grad);
                return Ok(ProbeReport {
                    passed: final_grad_norm <= tol_grad,
                    settled,
                    t_end: s.t,
                    final_grad_norm,
                    final_loss: loss,
                    final_w_dot_norm: speed,
                });
            }
            s = self.step_from(&s, &d, h, Method::Rk4)?;
            step += 1;
            Self::check_blowup(step, &s)?;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optim::KFunction;
    use crate::problems::{Problem, Quadratic};
    use crate::projection::init_projection;

    fn half_square(w: &Matrix) -> Result<(f64, Matrix)> {
        Ok((0.5 * frobenius_norm(w).powi(2), w.clone()))
    }

    fn scalar(x: f64) -> Matrix {
        Matrix::from_vec(1, 1, vec![x]).unwrap()
    }

    /// ẅ + ẇ + w = 0 with w(0) = 1, ẇ(0) = 0; m = −ẇ.
    fn damped_oscillator(t: f64) -> (f64, f64) {
        let om = 3f64.sqrt() / 2.0;
        let decay = (-t / 2.0).exp();
        let w = decay * ((om * t).cos() + (om * t).sin() / 3f64.sqrt());
        let m = decay * (om * t).sin() * 2.0 / 3f64.sqrt();
        (w, m)
    }

    fn momentum_system<'a>(loss: LossFn<'a>) -> OdeSystem<'a> {
        OdeSystem::new(Family::Momentum { a: 1.0 }, Gamma::Frozen, false, loss).unwrap()
    }

    #[test]
    fn rk4_matches_damped_oscillator() {
        let sys = momentum_system(&half_square);
        let init = sys.initial_state(scalar(1.0), None, None).unwrap();
        let traj = sys.integrate(&init, 1e-3, 1000, Method::Rk4).unwrap();
        let (w, m) = damped_oscillator(1.0);
        let s = &traj.final_state;
        assert!((s.t - 1.0).abs() < 1e-12);
        assert!((s.w[(0, 0)] - w).abs() <= 1e-6);
        assert!((s.m[(0, 0)] - m).abs() <= 1e-6);
    }

    fn endpoint_error(h: f64, method: Method) -> f64 {
        let sys = momentum_system(&half_square);
        let init = sys.initial_state(scalar(1.0), None, None).unwrap();
        let s = sys.integrate(&init, h, (1.0 / h).round() as usize, method).unwrap().final_state;
        (s.w[(0, 0)] - damped_oscillator(1.0).0).abs()
    }

    #[test]
    fn convergence_orders() {
        let euler = endpoint_error(1e-2, Method::Euler) / endpoint_error(5e-3, Method::Euler);
        assert!((1.8..2.2).contains(&euler), "euler ratio {euler}");
        let rk4 = endpoint_error(5e-2, Method::Rk4) / endpoint_error(2.5e-2, Method::Rk4);
        assert!((14.0..18.0).contains(&rk4), "rk4 ratio {rk4}");
    }

    #[test]
    fn fixed_point_stays_put() {
        let sys = OdeSystem::new(Family::Adam { a: 1.0, b: 1.0, e: 1e-8 }, Gamma::pca(0.1), true, &half_square).unwrap();
        let p = init_projection(4, 2, 0).unwrap();
        let init = sys.initial_state(Matrix::zeros(4, 3), Some(p), Some(Matrix::zeros(2, 3))).unwrap();
        let traj = sys.integrate(&init, 1e-2, 50, Method::Rk4).unwrap();
        let end = traj.final_state;
        assert_eq!(end.w, init.w);
        assert_eq!(end.m, init.m);
        assert_eq!(end.p, init.p);
        let report = sys.stationarity_probe(&init, 1e-2, 10.0, 1e-5, 2.0).unwrap();
        assert!(report.passed && report.settled && report.t_end == 0.0);
    }

    #[test]
    fn conservative_momentum_keeps_energy() {
        let drift = |h: f64| {
            let sys = momentum_system(&half_square).conservative().unwrap();
            let init = sys.initial_state(Matrix::from_rows(&[[1.0, -0.5]]).unwrap(), None, None).unwrap();
            let traj = sys.integrate(&init, h, (5.0 / h).round() as usize, Method::Rk4).unwrap();
            let h0 = traj.records[0].hamiltonian;
            traj.records.iter().map(|r| (r.hamiltonian - h0).abs()).fold(0.0, f64::max)
        };
        let (coarse, fine) = (drift(0.1), drift(0.05));
        assert!(coarse < 1e-4, "{coarse}");
        assert!(coarse / fine > 12.0, "{coarse} / {fine}");
        assert!(momentum_system(&half_square).conservative().is_ok());
        let lion = OdeSystem::new(Family::LionK { a: 1.0, b: 0.1, k: KFunction::L1 }, Gamma::Frozen, false, &half_square).unwrap();
        assert!(lion.conservative().is_err());
    }

    #[test]
    fn hamiltonian_decreases_for_every_family() {
        let q = Quadratic::random(6, 3, 1).unwrap();
        let loss = |w: &Matrix| q.loss_grad(w);
        let families = [
            Family::Momentum { a: 1.0 },
            Family::Adam { a: 1.0, b: 1.0, e: 1e-3 },
            Family::LionK { a: 1.0, b: 0.1, k: KFunction::SmoothL1 { delta: 0.1 } },
        ];
        for f in families {
            for gamma in [Gamma::pca(0.1), Gamma::Frozen] {
                let sys = OdeSystem::new(f, gamma, true, &loss).unwrap();
                let w0 = q.init_params(3).remove(0);
                let v0 = f.needs_v().then(|| Matrix::from_fn(2, 3, |_, _| 1.0));
                let init = sys.initial_state(w0, Some(init_projection(6, 2, 4).unwrap()), v0).unwrap();
                let traj = sys.integrate(&init, 1e-3, 2000, Method::Rk4).unwrap();
                for pair in traj.records.windows(2) {
                    let tol = 1e-12 * pair[0].hamiltonian.abs().max(1.0);
                    assert!(pair[1].hamiltonian <= pair[0].hamiltonian + tol, "{f:?} {gamma:?} at {}", pair[0].t);
                    assert!(pair[0].dhdt_analytic <= 0.0);
                }
            }
        }
    }

    #[test]
    fn euler_difference_quotient_tracks_rate() {
        let q = Quadratic::random(5, 2, 2).unwrap();
        let loss = |w: &Matrix| q.loss_grad(w);
        let sys = OdeSystem::new(Family::Momentum { a: 1.0 }, Gamma::pca(0.1), true, &loss).unwrap();
        let init = sys.initial_state(q.init_params(0).remove(0), Some(init_projection(5, 2, 1).unwrap()), None).unwrap();
        let gap = |h: f64| {
            let traj = sys.integrate(&init, h, (1.0 / h).round() as usize, Method::Euler).unwrap();
            traj.records
                .windows(2)
                .map(|p| ((p[1].hamiltonian - p[0].hamiltonian) / h - p[0].dhdt_analytic).abs())
                .fold(0.0, f64::max)
        };
        let ratio = gap(1e-2) / gap(5e-3);
        assert!((1.6..2.4).contains(&ratio), "{ratio}");
    }

    #[test]
    fn blowup_is_detected() {
        let sys = momentum_system(&half_square);
        let init = sys.initial_state(scalar(1.0), None, None).unwrap();
        match sys.integrate(&init, 10.0, 1000, Method::Euler) {
            Err(Error::Diverged { .. }) => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn frozen_orthogonal_projection_stalls() {
        // Block-diagonal A keeps the gradient in the rows P cannot see.
        let a = Matrix::from_rows(&[
            [2.0, 0.5, 0.0, 0.0],
            [0.5, 1.5, 0.0, 0.0],
            [0.0, 0.0, 1.0, 0.3],
            [0.0, 0.0, 0.3, 2.0],
        ])
        .unwrap();
        let q = Quadratic::new(a, Matrix::zeros(4, 2)).unwrap();
        let loss = |w: &Matrix| q.loss_grad(w);
        let sys = OdeSystem::new(Family::Momentum { a: 1.0 }, Gamma::Frozen, true, &loss).unwrap();
        let w0 = Matrix::from_rows(&[[0.0, 0.0], [0.0, 0.0], [1.0, -1.0], [0.5, 2.0]]).unwrap();
        let p = Matrix::identity(4).columns(0, 2);
        let report = sys.stationarity_probe(&sys.initial_state(w0, Some(p), None).unwrap(), 1e-2, 50.0, 1e-5, 2.0).unwrap();
        assert!(report.settled && !report.passed);
        assert!(report.final_grad_norm > 1e-2);
    }

    fn probe_quadratic(rate: f64, seed: u64) -> ProbeReport {
        let q = Quadratic::random(6, 3, seed).unwrap();
        let loss = |w: &Matrix| q.loss_grad(w);
        let gamma = Gamma::PcaGradientFlow { lambda: 0.1, rate };
        let sys = OdeSystem::new(Family::Momentum { a: 1.0 }, gamma, true, &loss).unwrap();
        let init = sys.initial_state(q.init_params(seed).remove(0), Some(init_projection(6, 2, seed).unwrap()), None).unwrap();
        sys.stationarity_probe(&init, 1e-2, 400.0, 1e-5, 2.0).unwrap()
    }

    #[test]
    fn fast_pca_flow_reaches_stationarity() {
        for seed in 0..3 {
            let report = probe_quadratic(50.0, seed);
            assert!(report.passed && report.settled, "{report:?}");
        }
    }

    #[test]
    fn unit_rate_pca_flow_stalls_off_the_gradient() {
        // {P : PᵀG = 0} is invariant under the PCA gradient flow. When P is
        // slower than W, W cancels every gradient component P turns toward
        // and the pair settles with G ≠ 0 in the left null space of P.
        for seed in 0..3 {
            let report = probe_quadratic(1.0, seed);
            assert!(!report.passed && report.final_grad_norm > 1e-2, "{report:?}");
            assert!(report.final_w_dot_norm < 1e-5, "{report:?}");
        }
    }

    #[test]
    fn csv_has_fixed_columns() {
        let sys = momentum_system(&half_square);
        let init = sys.initial_state(scalar(1.0), None, None).unwrap();
        let traj = sys.integrate(&init, 0.1, 3, Method::Rk4).unwrap();
        let mut buf = Vec::new();
        traj.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "step,loss,grad_norm,hamiltonian,orthodefect_P,lr,wall_ms_pupdate,dHdt_analytic"
        );
        assert_eq!(lines.count(), 4);
    }

    #[test]
    fn state_validation() {
        let sys = momentum_system(&half_square);
        assert!(sys.initial_state(scalar(1.0), Some(Matrix::identity(1)), None).is_err());
        let adam = OdeSystem::new(Family::Adam { a: 1.0, b: 1.0, e: 1e-8 }, Gamma::Frozen, false, &half_square).unwrap();
        assert!(adam.initial_state(scalar(1.0), None, None).is_err());
        assert!(sys.integrate(&sys.initial_state(scalar(1.0), None, None).unwrap(), 0.0, 1, Method::Rk4).is_err());
    }
}
