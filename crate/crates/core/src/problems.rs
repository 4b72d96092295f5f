//! Differentiable test problems with matrix-shaped parameters.
//!
//! Vectors (biases) are stored as n×1 matrices and flagged in [`ParamSpec`]
//! so trainers can keep them out of projection.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{frobenius_norm, Matrix};

/// Noise level of the synthetic regression and classification data.
pub const NOISE_SIGMA: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    /// 1-D parameter stored as a column.
    pub is_vector: bool,
}

impl ParamSpec {
    fn matrix(name: &str, rows: usize, cols: usize) -> Self {
        Self { name: name.into(), rows, cols, is_vector: false }
    }

    fn vector(name: &str, len: usize) -> Self {
        Self { name: name.into(), rows: len, cols: 1, is_vector: true }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }
}

/// Known minimizer and optimal value, where available.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Optimum {
    pub params: Option<Vec<Matrix>>,
    pub value: Option<f64>,
}

pub trait Problem: Send + Sync {
    fn name(&self) -> String;

    fn params(&self) -> Vec<ParamSpec>;

    fn loss_and_grad(&self, params: &[Matrix]) -> Result<(f64, Vec<Matrix>)>;

    fn loss(&self, params: &[Matrix]) -> Result<f64> {
        Ok(self.loss_and_grad(params)?.0)
    }

    /// Deterministic starting point for a given seed.
    fn init_params(&self, seed: u64) -> Vec<Matrix>;

    fn optimum(&self) -> Optimum {
        Optimum::default()
    }

    fn check_params(&self, params: &[Matrix]) -> Result<()> {
        let specs = self.params();
        if specs.len() != params.len() {
            return Err(Error::InvalidArgument(format!(
                "{} expects {} parameters, got {}",
                self.name(),
                specs.len(),
                params.len()
            )));
        }
        for (s, p) in specs.iter().zip(params) {
            if s.shape() != p.shape() {
                return Err(Error::ShapeMismatch {
                    op: "problem parameter",
                    left: p.shape(),
                    right: s.shape(),
                });
            }
            p.check_finite(&s.name)?;
        }
        Ok(())
    }
}

fn positive(dims: &[(&str, usize)]) -> Result<()> {
    for (name, d) in dims {
        if *d == 0 {
            return Err(Error::InvalidArgument(format!("{name} must be positive")));
        }
    }
    Ok(())
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_orthogonal(n: usize, r: &mut ChaCha8Rng) -> Matrix {
    // Gaussian matrices are full rank with probability one.
    Matrix::randn(n, n, r).orthonormalize_columns(1e-10).expect("gaussian matrix is full rank")
}

/// `L(W) = ½‖A(W − W*)‖²`.
#[derive(Debug, Clone)]
pub struct Quadratic {
    a: Matrix,
    w_star: Matrix,
    hessian: Matrix,
    seed: u64,
}

impl Quadratic {
    /// Random `A = Q₁ diag(s) Q₂ᵀ` with `s` uniform in [1, 3], so the
    /// Hessian `AᵀA` has condition number at most 9. `W*` is standard normal.
    pub fn random(n: usize, m: usize, seed: u64) -> Result<Self> {
        positive(&[("n", n), ("m", m)])?;
        let mut r = rng(seed);
        let q1 = random_orthogonal(n, &mut r);
        let q2 = random_orthogonal(n, &mut r);
        let s: Vec<f64> = (0..n).map(|_| r.random_range(1.0..=3.0)).collect();
        let a = q1.matmul(&Matrix::from_diag(&s))?.matmul_t(&q2)?;
        let w_star = Matrix::randn(n, m, &mut r);
        let mut q = Self::new(a, w_star)?;
        q.seed = seed;
        Ok(q)
    }

    pub fn new(a: Matrix, w_star: Matrix) -> Result<Self> {
        if a.rows() != a.cols() || a.cols() != w_star.rows() {
            return Err(Error::ShapeMismatch {
                op: "quadratic",
                left: a.shape(),
                right: w_star.shape(),
            });
        }
        a.check_finite("quadratic A")?;
        w_star.check_finite("quadratic W*")?;
        let hessian = a.t_matmul(&a)?;
        Ok(Self { a, w_star, hessian, seed: 0 })
    }

    pub fn a(&self) -> &Matrix {
        &self.a
    }

    pub fn w_star(&self) -> &Matrix {
        &self.w_star
    }

    /// Single-matrix form used by the ODE simulator.
    pub fn loss_grad(&self, w: &Matrix) -> Result<(f64, Matrix)> {
        let d = w.sub(&self.w_star)?;
        let ad = self.a.matmul(&d)?;
        let loss = 0.5 * frobenius_norm(&ad).powi(2);
        Ok((loss, self.hessian.matmul(&d)?))
    }
}

impl Problem for Quadratic {
    fn name(&self) -> String {
        format!("quadratic({},{})", self.w_star.rows(), self.w_star.cols())
    }

    fn params(&self) -> Vec<ParamSpec> {
        vec![ParamSpec::matrix("W", self.w_star.rows(), self.w_star.cols())]
    }

    fn loss_and_grad(&self, params: &[Matrix]) -> Result<(f64, Vec<Matrix>)> {
        self.check_params(params)?;
        let (l, g) = self.loss_grad(&params[0])?;
        Ok((l, vec![g]))
    }

    fn init_params(&self, seed: u64) -> Vec<Matrix> {
        let mut r = rng(seed ^ self.seed.rotate_left(32) ^ 0x5157);
        vec![Matrix::randn(self.w_star.rows(), self.w_star.cols(), &mut r)]
    }

    fn optimum(&self) -> Optimum {
        Optimum {
            params: Some(vec![self.w_star.clone()]),
            value: Some(0.0),
        }
    }
}

/// `f(x₁, x₂) = (1 − x₁)² + 10(x₂ − x₁²)²` with a 2×1 parameter.
#[derive(Debug, Clone, Copy, Default)]
pub struct Rosenbrock;

impl Problem for Rosenbrock {
    fn name(&self) -> String {
        "rosenbrock".into()
    }

    fn params(&self) -> Vec<ParamSpec> {
        vec![ParamSpec::matrix("x", 2, 1)]
    }

    fn loss_and_grad(&self, params: &[Matrix]) -> Result<(f64, Vec<Matrix>)> {
        self.check_params(params)?;
        let (x1, x2) = (params[0][(0, 0)], params[0][(1, 0)]);
        let r = x2 - x1 * x1;
        let loss = (1.0 - x1).powi(2) + 10.0 * r * r;
        let g = Matrix::from_vec(2, 1, vec![-2.0 * (1.0 - x1) - 40.0 * x1 * r, 20.0 * r])?;
        Ok((loss, vec![g]))
    }

    /// Always `(−1, 1)`; the seed is ignored.
    fn init_params(&self, _seed: u64) -> Vec<Matrix> {
        vec![Matrix::from_vec(2, 1, vec![-1.0, 1.0]).expect("static shape")]
    }

    fn optimum(&self) -> Optimum {
        Optimum {
            params: Some(vec![Matrix::from_vec(2, 1, vec![1.0, 1.0]).expect("static shape")]),
            value: Some(0.0),
        }
    }
}

fn add_column(z: &mut Matrix, b: &Matrix) {
    for i in 0..z.rows() {
        let bi = b[(i, 0)];
        for j in 0..z.cols() {
            z[(i, j)] += bi;
        }
    }
}

fn row_sums(d: &Matrix) -> Matrix {
    Matrix::from_fn(d.rows(), 1, |i, _| d.row(i).iter().sum())
}

/// Softmax cross-entropy with weights `W` (classes×features) and bias `b`.
/// Labels come from a planted linear model plus small logit noise.
#[derive(Debug, Clone)]
pub struct LogisticRegression {
    x: Matrix,
    labels: Vec<usize>,
    planted: Vec<Matrix>,
    n_classes: usize,
    seed: u64,
}

/// Scale of the planted weights; larger margins push the planted loss toward zero.
const PLANTED_SCALE: f64 = 10.0;

impl LogisticRegression {
    pub fn new(n_features: usize, n_classes: usize, n_samples: usize, seed: u64) -> Result<Self> {
        positive(&[("n_features", n_features), ("n_samples", n_samples)])?;
        if n_classes < 2 {
            return Err(Error::InvalidArgument("n_classes must be at least 2".into()));
        }
        let mut r = rng(seed);
        let x = Matrix::randn(n_features, n_samples, &mut r);
        let w = Matrix::randn(n_classes, n_features, &mut r).scale(PLANTED_SCALE / (n_features as f64).sqrt())?;
        let b = Matrix::zeros(n_classes, 1);
        let noise = Matrix::randn(n_classes, n_samples, &mut r).scale(NOISE_SIGMA)?;
        let z = w.matmul(&x)?.add(&noise)?;
        let labels = (0..n_samples)
            .map(|j| (0..n_classes).max_by(|&a, &c| z[(a, j)].total_cmp(&z[(c, j)])).expect("n_classes >= 2"))
            .collect();
        Ok(Self {
            x,
            labels,
            planted: vec![w, b],
            n_classes,
            seed,
        })
    }

    pub fn planted(&self) -> &[Matrix] {
        &self.planted
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }
}

impl Problem for LogisticRegression {
    fn name(&self) -> String {
        format!("logistic_regression({},{},{})", self.x.rows(), self.n_classes, self.x.cols())
    }

    fn params(&self) -> Vec<ParamSpec> {
        vec![
            ParamSpec::matrix("W", self.n_classes, self.x.rows()),
            ParamSpec::vector("b", self.n_classes),
        ]
    }

    fn loss_and_grad(&self, params: &[Matrix]) -> Result<(f64, Vec<Matrix>)> {
        self.check_params(params)?;
        let n = self.x.cols();
        let mut z = params[0].matmul(&self.x)?;
        add_column(&mut z, &params[1]);
        // column-wise softmax; d holds (softmax − onehot) / N
        let mut d = Matrix::zeros(self.n_classes, n);
        let mut loss = 0.0;
        for j in 0..n {
            let max = (0..self.n_classes).map(|c| z[(c, j)]).fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = (0..self.n_classes).map(|c| (z[(c, j)] - max).exp()).sum();
            let lse = max + sum.ln();
            loss += lse - z[(self.labels[j], j)];
            for c in 0..self.n_classes {
                d[(c, j)] = (z[(c, j)] - lse).exp() / n as f64;
            }
            d[(self.labels[j], j)] -= 1.0 / n as f64;
        }
        let gw = d.matmul_t(&self.x)?;
        let gb = row_sums(&d);
        Ok((loss / n as f64, vec![gw, gb]))
    }

    fn init_params(&self, seed: u64) -> Vec<Matrix> {
        let mut r = rng(seed ^ self.seed.rotate_left(32) ^ 0x1061);
        let scale = 0.1 / (self.x.rows() as f64).sqrt();
        vec![
            Matrix::randn(self.n_classes, self.x.rows(), &mut r).map(|v| v * scale),
            Matrix::zeros(self.n_classes, 1),
        ]
    }
}

/// One-hidden-layer tanh network `Ŷ = W₂ tanh(W₁X + b₁) + b₂` with loss
/// `(1/2N)‖Ŷ − Y‖²`. Targets come from a planted network plus noise.
#[derive(Debug, Clone)]
pub struct MlpRegression {
    x: Matrix,
    y: Matrix,
    planted: Vec<Matrix>,
    hidden: usize,
    seed: u64,
}

impl MlpRegression {
    pub fn new(input: usize, hidden: usize, output: usize, n_samples: usize, seed: u64) -> Result<Self> {
        positive(&[("in", input), ("hidden", hidden), ("out", output), ("n_samples", n_samples)])?;
        let mut r = rng(seed);
        let x = Matrix::randn(input, n_samples, &mut r);
        let w1 = Matrix::randn(hidden, input, &mut r).scale(1.0 / (input as f64).sqrt())?;
        let b1 = Matrix::randn(hidden, 1, &mut r).scale(0.1)?;
        let w2 = Matrix::randn(output, hidden, &mut r).scale(1.0 / (hidden as f64).sqrt())?;
        let b2 = Matrix::randn(output, 1, &mut r).scale(0.1)?;
        let planted = vec![w1, b1, w2, b2];
        let clean = Self::forward(&planted, &x)?.1;
        let y = clean.add(&Matrix::randn(output, n_samples, &mut r).scale(NOISE_SIGMA)?)?;
        Ok(Self { x, y, planted, hidden, seed })
    }

    fn forward(params: &[Matrix], x: &Matrix) -> Result<(Matrix, Matrix)> {
        let mut pre = params[0].matmul(x)?;
        add_column(&mut pre, &params[1]);
        let h = pre.map(f64::tanh);
        let mut out = params[2].matmul(&h)?;
        add_column(&mut out, &params[3]);
        Ok((h, out))
    }

    pub fn planted(&self) -> &[Matrix] {
        &self.planted
    }

    /// Expected loss of the planted network: `½ · out · σ²`.
    pub fn noise_floor(&self) -> f64 {
        0.5 * self.y.rows() as f64 * NOISE_SIGMA * NOISE_SIGMA
    }
}

impl Problem for MlpRegression {
    fn name(&self) -> String {
        format!(
            "mlp_regression({},{},{},{})",
            self.x.rows(),
            self.hidden,
            self.y.rows(),
            self.x.cols()
        )
    }

    fn params(&self) -> Vec<ParamSpec> {
        let (i, h, o) = (self.x.rows(), self.hidden, self.y.rows());
        vec![
            ParamSpec::matrix("W1", h, i),
            ParamSpec::vector("b1", h),
            ParamSpec::matrix("W2", o, h),
            ParamSpec::vector("b2", o),
        ]
    }

    fn loss_and_grad(&self, params: &[Matrix]) -> Result<(f64, Vec<Matrix>)> {
        self.check_params(params)?;
        let n = self.x.cols() as f64;
        let (h, out) = Self::forward(params, &self.x)?;
        let resid = out.sub(&self.y)?;
        let loss = 0.5 * frobenius_norm(&resid).powi(2) / n;
        let d = resid.scale(1.0 / n)?;
        let gw2 = d.matmul_t(&h)?;
        let gb2 = row_sums(&d);
        let back = params[2].t_matmul(&d)?;
        let dh = Matrix::from_fn(h.rows(), h.cols(), |i, j| back[(i, j)] * (1.0 - h[(i, j)] * h[(i, j)]));
        let gw1 = dh.matmul_t(&self.x)?;
        let gb1 = row_sums(&dh);
        Ok((loss, vec![gw1, gb1, gw2, gb2]))
    }

    fn init_params(&self, seed: u64) -> Vec<Matrix> {
        let mut r = rng(seed ^ self.seed.rotate_left(32) ^ 0x3170);
        let (i, h, o) = (self.x.rows(), self.hidden, self.y.rows());
        vec![
            Matrix::randn(h, i, &mut r).map(|v| v / (i as f64).sqrt()),
            Matrix::zeros(h, 1),
            Matrix::randn(o, h, &mut r).map(|v| v / (h as f64).sqrt()),
            Matrix::zeros(o, 1),
        ]
    }
}

/// Serializable problem description used by experiment configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProblemSpec {
    Quadratic {
        n: usize,
        m: usize,
        #[serde(default)]
        seed: u64,
    },
    Rosenbrock,
    LogisticRegression {
        n_features: usize,
        n_classes: usize,
        n_samples: usize,
        #[serde(default)]
        seed: u64,
    },
    MlpRegression {
        input: usize,
        hidden: usize,
        output: usize,
        n_samples: usize,
        #[serde(default)]
        seed: u64,
    },
}

impl ProblemSpec {
    pub fn build(&self) -> Result<Box<dyn Problem>> {
        Ok(match *self {
            ProblemSpec::Quadratic { n, m, seed } => Box::new(Quadratic::random(n, m, seed)?),
            ProblemSpec::Rosenbrock => Box::new(Rosenbrock),
            ProblemSpec::LogisticRegression {
                n_features,
                n_classes,
                n_samples,
                seed,
            } => Box::new(LogisticRegression::new(n_features, n_classes, n_samples, seed)?),
            ProblemSpec::MlpRegression {
                input,
                hidden,
                output,
                n_samples,
                seed,
            } => Box::new(MlpRegression::new(input, hidden, output, n_samples, seed)?),
        })
    }
}
