//! Full-space base optimizers in state-update form.
//!
//! Each optimizer maps `(state, grad)` to a direction `delta` and a new state.
//! `delta` already carries the minus sign, so callers apply `W + lr * delta`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Convex potential `K` for Lion-K; all variants satisfy `∇K(0) = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum KFunction {
    /// `K(x) = ‖x‖₁,₁`, `∇K = sign` (the Lion optimizer).
    #[default]
    L1,
    /// `K(x) = Σ (sqrt(x² + δ²) − δ)`, a smooth stand-in for L1.
    SmoothL1 { delta: f64 },
    /// `K(x) = ½‖x‖²`.
    Quadratic,
}

impl KFunction {
    pub fn value(&self, x: &Matrix) -> f64 {
        let s = x.as_slice().iter();
        match *self {
            KFunction::L1 => s.map(|v| v.abs()).sum(),
            KFunction::SmoothL1 { delta } => s.map(|v| (v * v + delta * delta).sqrt() - delta).sum(),
            KFunction::Quadratic => 0.5 * s.map(|v| v * v).sum::<f64>(),
        }
    }

    pub fn grad(&self, x: &Matrix) -> Matrix {
        match *self {
            KFunction::L1 => x.sign(),
            KFunction::SmoothL1 { delta } => x.map(|v| v / (v * v + delta * delta).sqrt()),
            KFunction::Quadratic => x.clone(),
        }
    }

    /// `[X; Y]_{∇K} = ⟨Y, ∇K(X + Y) − ∇K(X)⟩`, nonnegative for convex `K`.
    pub fn bracket(&self, x: &Matrix, y: &Matrix) -> Result<f64> {
        let shifted = self.grad(&x.add(y)?);
        let base = self.grad(x);
        crate::matrix::frobenius_inner(y, &shifted.sub(&base)?)
    }

    fn validate(&self) -> Result<()> {
        if let KFunction::SmoothL1 { delta } = *self {
            if !(delta > 0.0 && delta.is_finite()) {
                return Err(Error::InvalidArgument(format!("smooth_l1 delta must be positive, got {delta}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerKind {
    Gd,
    Momentum {
        #[serde(default = "d_beta")]
        beta: f64,
    },
    Adam {
        #[serde(default = "d_beta")]
        beta1: f64,
        #[serde(default = "d_adam_beta2")]
        beta2: f64,
        #[serde(default = "d_eps")]
        eps: f64,
    },
    LionK {
        #[serde(default = "d_beta")]
        beta1: f64,
        #[serde(default = "d_lion_beta2")]
        beta2: f64,
        #[serde(default)]
        k: KFunction,
    },
}

fn d_beta() -> f64 {
    0.9
}

fn d_adam_beta2() -> f64 {
    0.999
}

fn d_eps() -> f64 {
    1e-8
}

fn d_lion_beta2() -> f64 {
    0.99
}

impl OptimizerKind {
    pub fn gd() -> Self {
        OptimizerKind::Gd
    }

    pub fn momentum() -> Self {
        OptimizerKind::Momentum { beta: d_beta() }
    }

    pub fn adam() -> Self {
        OptimizerKind::Adam {
            beta1: d_beta(),
            beta2: d_adam_beta2(),
            eps: d_eps(),
        }
    }

    pub fn lion() -> Self {
        OptimizerKind::LionK {
            beta1: d_beta(),
            beta2: d_lion_beta2(),
            k: KFunction::L1,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            OptimizerKind::Gd => "gd",
            OptimizerKind::Momentum { .. } => "momentum",
            OptimizerKind::Adam { .. } => "adam",
            OptimizerKind::LionK { .. } => "lion_k",
        }
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, b: f64| {
            if b > 0.0 && b < 1.0 {
                Ok(())
            } else {
                Err(Error::InvalidArgument(format!("{name} must lie in (0, 1), got {b}")))
            }
        };
        match *self {
            OptimizerKind::Gd => Ok(()),
            OptimizerKind::Momentum { beta } => unit("beta", beta),
            OptimizerKind::Adam { beta1, beta2, eps } => {
                unit("beta1", beta1)?;
                unit("beta2", beta2)?;
                if eps > 0.0 {
                    Ok(())
                } else {
                    Err(Error::InvalidArgument(format!("eps must be positive, got {eps}")))
                }
            }
            OptimizerKind::LionK { beta1, beta2, k } => {
                unit("beta1", beta1)?;
                unit("beta2", beta2)?;
                k.validate()
            }
        }
    }

    fn needs_m(&self) -> bool {
        !matches!(self, OptimizerKind::Gd)
    }

    fn needs_v(&self) -> bool {
        matches!(self, OptimizerKind::Adam { .. })
    }
}

/// Bias-corrected Adam coefficient `β_t = (β − β^{t+1}) / (1 − β^{t+1})`.
pub fn adam_beta_t(beta: f64, t: u64) -> f64 {
    let p = beta.powf(t as f64 + 1.0);
    (beta - p) / (1.0 - p)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    #[serde(flatten)]
    pub kind: OptimizerKind,
    pub t: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m: Option<Matrix>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v: Option<Matrix>,
}

impl OptimizerState {
    /// Zero-initialized state for a parameter of the given shape.
    pub fn new(kind: OptimizerKind, rows: usize, cols: usize) -> Result<Self> {
        kind.validate()?;
        Ok(Self {
            kind,
            t: 0,
            m: kind.needs_m().then(|| Matrix::zeros(rows, cols)),
            v: kind.needs_v().then(|| Matrix::zeros(rows, cols)),
        })
    }

    /// Checks hyperparameters and that buffers match the kind and `shape`.
    pub fn validate(&self, shape: (usize, usize)) -> Result<()> {
        self.kind.validate()?;
        let check = |name: &str, buf: &Option<Matrix>, needed: bool| -> Result<()> {
            match (buf, needed) {
                (Some(b), true) if b.shape() == shape => Ok(()),
                (Some(b), true) => Err(Error::ShapeMismatch {
                    op: "optimizer state",
                    left: b.shape(),
                    right: shape,
                }),
                (None, false) => Ok(()),
                (Some(_), false) => Err(Error::InvalidArgument(format!(
                    "{} state must not carry {name}",
                    self.kind.name()
                ))),
                (None, true) => Err(Error::InvalidArgument(format!(
                    "{} state is missing {name}",
                    self.kind.name()
                ))),
            }
        };
        check("m", &self.m, self.kind.needs_m())?;
        check("v", &self.v, self.kind.needs_v())?;
        if let Some(v) = &self.v {
            if v.as_slice().iter().any(|&x| x < 0.0) {
                return Err(Error::InvalidArgument("second moment has negative entries".into()));
            }
        }
        Ok(())
    }

    /// Number of scalars held in the buffers.
    pub fn scalar_count(&self) -> usize {
        self.m.as_ref().map_or(0, Matrix::len) + self.v.as_ref().map_or(0, Matrix::len)
    }

    /// Pure form of [`OptimizerState::step_mut`].
    pub fn step(&self, grad: &Matrix) -> Result<(Matrix, OptimizerState)> {
        let mut next = self.clone();
        let delta = next.step_mut(grad)?;
        Ok((delta, next))
    }

    /// Advances the state with `grad` and returns the direction `delta`.
    /// On error the state is left untouched.
    pub fn step_mut(&mut self, grad: &Matrix) -> Result<Matrix> {
        grad.check_finite("optimizer gradient")?;
        self.validate(grad.shape())?;
        let t = self.t;
        let delta = match self.kind {
            OptimizerKind::Gd => grad.scale(-1.0)?,
            OptimizerKind::Momentum { beta } => {
                let m = self.m.as_ref().expect("validated");
                let m_new = Matrix::axpy(1.0 - beta, grad, &m.scale(beta)?)?;
                let delta = m_new.scale(-1.0)?;
                self.m = Some(m_new);
                delta
            }
            OptimizerKind::Adam { beta1, beta2, eps } => {
                let (b1, b2) = (adam_beta_t(beta1, t), adam_beta_t(beta2, t));
                let m = self.m.as_ref().expect("validated");
                let v = self.v.as_ref().expect("validated");
                let m_new = Matrix::axpy(1.0 - b1, grad, &m.scale(b1)?)?;
                let v_new = Matrix::axpy(1.0 - b2, &grad.hadamard_square()?, &v.scale(b2)?)?;
                let delta = m_new.elementwise_div_shifted(&v_new, eps)?.scale(-1.0)?;
                self.m = Some(m_new);
                self.v = Some(v_new);
                delta
            }
            OptimizerKind::LionK { beta1, beta2, k } => {
                // N uses the momentum from before this step's update.
                let m = self.m.as_ref().expect("validated");
                let n = Matrix::axpy(1.0 - beta1, grad, &m.scale(beta1)?)?;
                let delta = k.grad(&n).scale(-1.0)?;
                let m_new = Matrix::axpy(1.0 - beta2, grad, &m.scale(beta2)?)?;
                self.m = Some(m_new);
                delta
            }
        };
        self.t += 1;
        Ok(delta)
    }
}
