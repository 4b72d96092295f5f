//! Hamiltonian (Lyapunov) functions of the continuous-time optimizers and
//! their analytic descent rates.
//!
//! Continuous systems, with `Ĝ = PᵀG` (and `P = I` in full space):
//!
//! * Momentum: `Ẇ = −Pm`, `ṁ = a(Ĝ − m)`, `H = L + ‖m‖²/(2a)`.
//! * Adam: `Ẇ = −P m/(√v + e)`, `ṁ = a(Ĝ − m)`, `v̇ = b(Ĝ² − v)`,
//!   `H = L + (1/2a)⟨m/(√v + e), m⟩`.
//! * Lion-K: `Ẇ = P∇K((1−b)M − bĜ)`, `Ṁ = −a(Ĝ + M)`,
//!   `H = aL + K((1−b)M)/(1−b)`.
//!
//! None of the rates depend on how `P` evolves; only its current value enters.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{frobenius_inner, frobenius_norm, Matrix};
use crate::optim::{KFunction, OptimizerKind, OptimizerState};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Family {
    Momentum { a: f64 },
    Adam { a: f64, b: f64, e: f64 },
    LionK { a: f64, b: f64, k: KFunction },
}

impl Family {
    pub fn name(&self) -> &'static str {
        match self {
            Family::Momentum { .. } => "momentum",
            Family::Adam { .. } => "adam",
            Family::LionK { .. } => "lion_k",
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        match *self {
            Family::Momentum { a } if !(a > 0.0) => bad(format!("momentum needs a > 0, got {a}")),
            Family::Adam { a, b, e } if !(a > 0.0 && b > 0.0 && e > 0.0) => {
                bad(format!("adam needs a, b, e > 0, got a={a}, b={b}, e={e}"))
            }
            Family::LionK { a, b, .. } if !(a > 0.0 && (0.0..1.0).contains(&b)) => {
                bad(format!("lion-K needs a > 0 and b in [0, 1), got a={a}, b={b}"))
            }
            _ => Ok(()),
        }
    }

    /// Whether the analytic rate is guaranteed nonpositive. For Adam this is
    /// the condition `a ≥ b/4`; the other families always descend.
    pub fn descent_condition_holds(&self) -> bool {
        match *self {
            Family::Adam { a, b, .. } => a >= b / 4.0,
            _ => true,
        }
    }

    pub fn needs_v(&self) -> bool {
        matches!(self, Family::Adam { .. })
    }

    /// Continuous-time coefficients matching a discrete optimizer at step
    /// size `lr`. `None` for plain GD or `lr = 0`, where `H = L` is logged.
    pub fn for_discrete(kind: &OptimizerKind, lr: f64) -> Option<Family> {
        if !(lr > 0.0) {
            return None;
        }
        match *kind {
            OptimizerKind::Gd => None,
            OptimizerKind::Momentum { beta } => Some(Family::Momentum { a: (1.0 - beta) / lr }),
            OptimizerKind::Adam { beta1, beta2, eps } => Some(Family::Adam {
                a: (1.0 - beta1) / lr,
                b: (1.0 - beta2) / lr,
                e: eps,
            }),
            OptimizerKind::LionK { beta1, beta2, k } => Some(Family::LionK {
                a: (1.0 - beta2) / lr,
                b: 1.0 - beta1,
                k,
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HamiltonianSpec {
    pub family: Family,
    /// State lives in the k×m reduced space.
    pub projected: bool,
}

impl HamiltonianSpec {
    pub fn new(family: Family, projected: bool) -> Result<Self> {
        family.validate()?;
        Ok(Self { family, projected })
    }
}

fn sqrt_floor(v: f64) -> f64 {
    v.max(0.0).sqrt()
}

fn check_v<'a>(family: &Family, m: &Matrix, v: Option<&'a Matrix>) -> Result<Option<&'a Matrix>> {
    match (family.needs_v(), v) {
        (true, Some(v)) if v.shape() == m.shape() => Ok(Some(v)),
        (true, Some(v)) => Err(Error::ShapeMismatch {
            op: "hamiltonian state",
            left: m.shape(),
            right: v.shape(),
        }),
        (true, None) => Err(Error::FamilyMismatch("adam needs a second-moment buffer".into())),
        (false, Some(_)) => Err(Error::FamilyMismatch(format!("{} carries no second moment", family.name()))),
        (false, None) => Ok(None),
    }
}

/// `H` from the loss value and raw moment buffers.
pub fn hamiltonian_from_buffers(family: &Family, l_val: f64, m: &Matrix, v: Option<&Matrix>) -> Result<f64> {
    let v = check_v(family, m, v)?;
    Ok(match *family {
        Family::Momentum { a } => l_val + frobenius_norm(m).powi(2) / (2.0 * a),
        Family::Adam { a, e, .. } => {
            let v = v.expect("checked");
            let s: f64 = m
                .as_slice()
                .iter()
                .zip(v.as_slice())
                .map(|(&mi, &vi)| mi * mi / (sqrt_floor(vi) + e))
                .sum();
            l_val + s / (2.0 * a)
        }
        Family::LionK { a, b, k } => a * l_val + k.value(&m.scale(1.0 - b)?) / (1.0 - b),
    })
}

fn family_matches(family: &Family, kind: &OptimizerKind) -> bool {
    matches!(
        (family, kind),
        (Family::Momentum { .. }, OptimizerKind::Momentum { .. })
            | (Family::Adam { .. }, OptimizerKind::Adam { .. })
            | (Family::LionK { .. }, OptimizerKind::LionK { .. })
    )
}

/// `H` evaluated on a discrete optimizer state (projected buffers when the
/// state belongs to a subspace trainer).
pub fn hamiltonian_value(spec: &HamiltonianSpec, l_val: f64, s: &OptimizerState) -> Result<f64> {
    if !family_matches(&spec.family, &s.kind) {
        return Err(Error::FamilyMismatch(format!(
            "{} hamiltonian for a {} state",
            spec.family.name(),
            s.kind.name()
        )));
    }
    let m = s.m.as_ref().ok_or_else(|| Error::FamilyMismatch("state has no momentum".into()))?;
    hamiltonian_from_buffers(&spec.family, l_val, m, s.v.as_ref())
}

/// Reduced gradient `PᵀG`, or `G` itself for full-space systems.
pub fn reduced_gradient(spec: &HamiltonianSpec, p: Option<&Matrix>, grad: &Matrix) -> Result<Matrix> {
    match (spec.projected, p) {
        (true, Some(p)) => p.t_matmul(grad),
        (false, None) => Ok(grad.clone()),
        (true, None) => Err(Error::InvalidArgument("projected system needs P".into())),
        (false, Some(_)) => Err(Error::InvalidArgument("full-space system takes no P".into())),
    }
}

/// Analytic `dH/dt` of the continuous system at `(m, v, P, ∇L(W))`.
///
/// The rate does not take the P-dynamics as input: it holds for every
/// update rule of `P`.
pub fn continuous_descent_rate(
    spec: &HamiltonianSpec,
    m: &Matrix,
    v: Option<&Matrix>,
    p: Option<&Matrix>,
    grad: &Matrix,
) -> Result<f64> {
    let g = reduced_gradient(spec, p, grad)?;
    if g.shape() != m.shape() {
        return Err(Error::ShapeMismatch {
            op: "descent rate",
            left: m.shape(),
            right: g.shape(),
        });
    }
    let v = check_v(&spec.family, m, v)?;
    match spec.family {
        Family::Momentum { .. } => Ok(-frobenius_norm(m).powi(2)),
        Family::Adam { a, b, e } => {
            let c = b / (4.0 * a);
            let mut first = 0.0;
            let mut second = 0.0;
            let v = v.expect("checked");
            for ((&mi, &vi), &gi) in m.as_slice().iter().zip(v.as_slice()).zip(g.as_slice()) {
                let r = sqrt_floor(vi);
                let d = r + e;
                first += (1.0 - c * r / d) * mi * mi / d;
                // zero m or Ĝ kills the term even where √v vanishes
                if mi != 0.0 && gi != 0.0 {
                    second += mi * mi * gi * gi / (r * d * d);
                }
            }
            Ok(-first - c * second)
        }
        Family::LionK { a, b, k } => {
            let x = m.scale(1.0 - b)?;
            let tail = -(a / (1.0 - b)) * k.bracket(&Matrix::zeros(m.rows(), m.cols()), &x)?;
            if b == 0.0 {
                return Ok(tail);
            }
            let head = -(a / b) * k.bracket(&x, &g.scale(-b)?)?;
            Ok(head + tail)
        }
    }
}

/// `⟨G, PX⟩ = ⟨PᵀG, X⟩`, the identity that makes every rate independent of Γ.
pub fn projected_pairing(p: &Matrix, g: &Matrix, x: &Matrix) -> Result<(f64, f64)> {
    Ok((frobenius_inner(g, &p.matmul(x)?)?, frobenius_inner(&p.t_matmul(g)?, x)?))
}
