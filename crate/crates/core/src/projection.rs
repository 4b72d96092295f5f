//! The projection matrix `P` (n×k) and its update rules.
//!
//! Three updaters are provided: one optimizer step per iteration on the online
//! PCA objective, a periodic exact SVD of the gradient, and a frozen `P`.
//! [`LinearOperator`] generalizes left projection to two-sided and sum forms
//! with their adjoints.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{frobenius_norm, Matrix};
use crate::optim::{OptimizerKind, OptimizerState};
use crate::svd;

pub const DEFAULT_ALPHA: f64 = 5.0;
pub const DEFAULT_LAMBDA: f64 = 0.1;
pub const DEFAULT_SVD_PERIOD: u64 = 200;

fn check_pca_args(p: &Matrix, g: &Matrix, lambda: f64) -> Result<f64> {
    if p.rows() != g.rows() {
        return Err(Error::ShapeMismatch {
            op: "pca objective",
            left: p.shape(),
            right: g.shape(),
        });
    }
    if p.cols() > p.rows() {
        return Err(Error::InvalidArgument(format!(
            "rank {} exceeds dimension {}",
            p.cols(),
            p.rows()
        )));
    }
    if !(lambda >= 0.0) {
        return Err(Error::InvalidArgument(format!("lambda must be nonnegative, got {lambda}")));
    }
    g.check_finite("pca gradient input")?;
    let norm = frobenius_norm(g);
    if norm == 0.0 {
        return Err(Error::ZeroGradient);
    }
    Ok(norm)
}

/// Online PCA objective `‖PPᵀG̃ − G̃‖² + λ‖PᵀP − I‖²` with `G̃ = G/‖G‖`.
pub fn pca_loss(p: &Matrix, g: &Matrix, lambda: f64) -> Result<f64> {
    let norm = check_pca_args(p, g, lambda)?;
    let gt = g.scale(1.0 / norm)?;
    let fit = p.matmul(&p.t_matmul(&gt)?)?.sub(&gt)?;
    Ok(frobenius_norm(&fit).powi(2) + lambda * p.orthonormality_defect().powi(2))
}

/// Gradient of [`pca_loss`] with respect to `P`.
///
/// With `A = G̃G̃ᵀ`, `E = PPᵀ − I` and `F = PᵀP − I` the gradient is
/// `2(EA + AE)P + 4λPF`. It is evaluated without forming any n×n matrix:
/// `EAP = P(PᵀX) − X` for `X = G̃(G̃ᵀP)`, and `AEP = G̃(G̃ᵀ(PF))`.
pub fn pca_loss_grad(p: &Matrix, g: &Matrix, lambda: f64) -> Result<Matrix> {
    let norm = check_pca_args(p, g, lambda)?;
    let gt = g.scale(1.0 / norm)?;
    let k = p.cols();

    let x = gt.matmul(&gt.t_matmul(p)?)?;
    let eap = p.matmul(&p.t_matmul(&x)?)?.sub(&x)?;
    let f = p.t_matmul(p)?.sub(&Matrix::identity(k))?;
    let pf = p.matmul(&f)?;
    let aep = gt.matmul(&gt.t_matmul(&pf)?)?;

    let mut grad = eap.add(&aep)?.scale(2.0)?;
    grad.add_scaled(4.0 * lambda, &pf)?;
    Ok(grad)
}

/// Random n×k matrix with orthonormal columns (Gaussian fill, then Gram–Schmidt).
pub fn init_projection(n: usize, k: usize, seed: u64) -> Result<Matrix> {
    if k == 0 || k > n {
        return Err(Error::InvalidArgument(format!("need 1 <= k <= n, got k={k}, n={n}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Matrix::randn(n, k, &mut rng).orthonormalize_columns(1e-8)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Updater {
    /// One step of `optimizer` on the PCA objective per iteration, with
    /// learning rate `alpha` times the current weight learning rate.
    OnlinePca {
        optimizer: OptimizerState,
        lambda: f64,
        alpha: f64,
    },
    /// `P` ← top-k left singular vectors of `G` whenever `step % period == 0`.
    PeriodicSvd { period: u64 },
    Static,
}

impl Updater {
    pub fn name(&self) -> &'static str {
        match self {
            Updater::OnlinePca { .. } => "online_pca",
            Updater::PeriodicSvd { .. } => "periodic_svd",
            Updater::Static => "static",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionState {
    pub p: Matrix,
    pub updater: Updater,
    pub step: u64,
}

impl ProjectionState {
    pub fn online_pca(p: Matrix, optimizer: OptimizerKind, lambda: f64, alpha: f64) -> Result<Self> {
        if !(alpha > 0.0) || !(lambda >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "online PCA needs alpha > 0 and lambda >= 0, got alpha={alpha}, lambda={lambda}"
            )));
        }
        let optimizer = OptimizerState::new(optimizer, p.rows(), p.cols())?;
        Self::new(p, Updater::OnlinePca { optimizer, lambda, alpha })
    }

    pub fn periodic_svd(p: Matrix, period: u64) -> Result<Self> {
        Self::new(p, Updater::PeriodicSvd { period })
    }

    pub fn fixed(p: Matrix) -> Result<Self> {
        Self::new(p, Updater::Static)
    }

    pub fn new(p: Matrix, updater: Updater) -> Result<Self> {
        let st = Self { p, updater, step: 0 };
        st.validate()?;
        Ok(st)
    }

    pub fn validate(&self) -> Result<()> {
        let (n, k) = self.p.shape();
        if k > n {
            return Err(Error::InvalidArgument(format!("rank {k} exceeds dimension {n}")));
        }
        self.p.check_finite("projection")?;
        match &self.updater {
            Updater::OnlinePca { optimizer, .. } => optimizer.validate((n, k)),
            Updater::PeriodicSvd { period: 0 } => {
                Err(Error::InvalidArgument("svd period must be positive".into()))
            }
            _ => Ok(()),
        }
    }

    pub fn rank(&self) -> usize {
        self.p.cols()
    }

    pub fn orthonormality_defect(&self) -> f64 {
        self.p.orthonormality_defect()
    }

    /// Advances `P` with the configured rule. A zero gradient carries no
    /// direction information, so `P` and the updater state are kept as they are.
    pub fn update(&self, g: &Matrix, eps_w: f64, weight_decay_p: f64) -> Result<ProjectionState> {
        if frobenius_norm(g) == 0.0 {
            let mut next = self.clone();
            next.step += 1;
            return Ok(next);
        }
        match self.updater {
            Updater::OnlinePca { .. } => self.update_online_pca(g, eps_w, weight_decay_p),
            Updater::PeriodicSvd { .. } => self.update_periodic_svd(g),
            Updater::Static => {
                let mut next = self.clone();
                next.step += 1;
                Ok(next)
            }
        }
    }

    /// `P ← P + α·eps_w·(Δ − λ_P·P)` where `Δ` is the optimizer's direction on
    /// the PCA gradient.
    pub fn update_online_pca(&self, g: &Matrix, eps_w: f64, weight_decay_p: f64) -> Result<ProjectionState> {
        let Updater::OnlinePca { optimizer, lambda, alpha } = &self.updater else {
            return Err(Error::InvalidArgument(format!(
                "online PCA update on a {} projection",
                self.updater.name()
            )));
        };
        let grad = pca_loss_grad(&self.p, g, *lambda)?;
        let (delta, optimizer) = optimizer.step(&grad)?;
        let mut p = self.p.clone();
        p.add_scaled(alpha * eps_w, &Matrix::axpy(-weight_decay_p, &self.p, &delta)?)?;
        Ok(ProjectionState {
            p,
            updater: Updater::OnlinePca {
                optimizer,
                lambda: *lambda,
                alpha: *alpha,
            },
            step: self.step + 1,
        })
    }

    pub fn update_periodic_svd(&self, g: &Matrix) -> Result<ProjectionState> {
        let Updater::PeriodicSvd { period } = self.updater else {
            return Err(Error::InvalidArgument(format!(
                "periodic SVD update on a {} projection",
                self.updater.name()
            )));
        };
        let mut next = self.clone();
        if self.step % period == 0 {
            next.p = svd::top_k_left(g, self.rank())?;
        }
        next.step += 1;
        Ok(next)
    }
}

/// Linear maps from the reduced space to the full space, with adjoints
/// satisfying `⟨adjoint(X), Y⟩ = ⟨X, apply(Y)⟩`.
#[derive(Debug, Clone, PartialEq)]
pub enum LinearOperator {
    /// `X ↦ PX`, adjoint `Y ↦ PᵀY`.
    LeftProject { p: Matrix },
    /// `X ↦ PXQ`, adjoint `Y ↦ PᵀYQᵀ`.
    TwoSided { p: Matrix, q: Matrix },
    /// `X ↦ PX + XQ`, adjoint `Y ↦ PᵀY + YQᵀ`. Both `P` and `Q` are square.
    SumSided { p: Matrix, q: Matrix },
}

impl LinearOperator {
    pub fn sum_sided(p: Matrix, q: Matrix) -> Result<Self> {
        if p.rows() != p.cols() || q.rows() != q.cols() {
            return Err(Error::InvalidArgument(format!(
                "sum-sided operator needs square P and Q, got {:?} and {:?}",
                p.shape(),
                q.shape()
            )));
        }
        Ok(LinearOperator::SumSided { p, q })
    }

    pub fn apply(&self, x: &Matrix) -> Result<Matrix> {
        match self {
            LinearOperator::LeftProject { p } => p.matmul(x),
            LinearOperator::TwoSided { p, q } => p.matmul(x)?.matmul(q),
            LinearOperator::SumSided { p, q } => p.matmul(x)?.add(&x.matmul(q)?),
        }
    }

    pub fn adjoint(&self, y: &Matrix) -> Result<Matrix> {
        match self {
            LinearOperator::LeftProject { p } => p.t_matmul(y),
            LinearOperator::TwoSided { p, q } => p.t_matmul(y)?.matmul_t(q),
            LinearOperator::SumSided { p, q } => p.t_matmul(y)?.add(&y.matmul_t(q)?),
        }
    }
}
