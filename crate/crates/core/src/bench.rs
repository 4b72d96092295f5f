//! Wall-clock comparison of an exact SVD refresh against one online PCA step.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::optim::OptimizerKind;
use crate::projection::{init_projection, ProjectionState, DEFAULT_ALPHA, DEFAULT_LAMBDA};
use crate::svd;

/// Iterations discarded before timing starts.
pub const DEFAULT_WARMUP: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub n: usize,
    pub m: usize,
    pub k: usize,
    pub seed: u64,
    pub warmup: usize,
    pub repeats: usize,
    /// The SVD is orders of magnitude slower, so it gets its own counts.
    pub svd_warmup: usize,
    pub svd_repeats: usize,
}

impl BenchConfig {
    pub fn new(n: usize, m: usize, k: usize) -> Self {
        Self {
            n,
            m,
            k,
            seed: 0,
            warmup: DEFAULT_WARMUP,
            repeats: 10,
            svd_warmup: DEFAULT_WARMUP,
            svd_repeats: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingReport {
    pub config: BenchConfig,
    /// Median milliseconds for the top-k left singular vectors of `G`.
    pub svd_ms: f64,
    /// Median milliseconds for one `P` update (PCA gradient plus Adam step).
    pub pca_step_ms: f64,
    pub ratio: f64,
    pub svd_samples_ms: Vec<f64>,
    pub pca_samples_ms: Vec<f64>,
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

fn time_ms<T>(warmup: usize, repeats: usize, mut f: impl FnMut() -> Result<T>) -> Result<Vec<f64>> {
    for _ in 0..warmup {
        std::hint::black_box(f()?);
    }
    let mut out = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        let start = Instant::now();
        std::hint::black_box(f()?);
        out.push(start.elapsed().as_secs_f64() * 1e3);
    }
    Ok(out)
}

pub fn timing_bench(config: BenchConfig) -> Result<TimingReport> {
    let BenchConfig { n, m, k, seed, .. } = config;
    if n == 0 || m == 0 || k == 0 || k > n.min(m) {
        return Err(Error::InvalidArgument(format!("bench needs 1 <= k <= min(n, m), got ({n}, {m}, {k})")));
    }
    if config.repeats == 0 || config.svd_repeats == 0 {
        return Err(Error::InvalidArgument("bench needs at least one timed repeat".into()));
    }
    let g = Matrix::randn(n, m, &mut ChaCha8Rng::seed_from_u64(seed));
    let ps = ProjectionState::online_pca(init_projection(n, k, seed ^ 1)?, OptimizerKind::adam(), DEFAULT_LAMBDA, DEFAULT_ALPHA)?;
    let pca_samples_ms = time_ms(config.warmup, config.repeats, || ps.update_online_pca(&g, 1e-3, 0.0))?;
    let svd_samples_ms = time_ms(config.svd_warmup, config.svd_repeats, || svd::top_k_left(&g, k))?;
    let svd_ms = median(svd_samples_ms.clone());
    let pca_step_ms = median(pca_samples_ms.clone());
    Ok(TimingReport {
        config,
        svd_ms,
        pca_step_ms,
        ratio: svd_ms / pca_step_ms,
        svd_samples_ms,
        pca_samples_ms,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_bench_reports_medians() {
        let mut c = BenchConfig::new(24, 16, 4);
        c.repeats = 5;
        c.svd_repeats = 3;
        let r = timing_bench(c).unwrap();
        assert_eq!(r.pca_samples_ms.len(), 5);
        assert_eq!(r.svd_samples_ms.len(), 3);
        assert!(r.svd_ms > 0.0 && r.pca_step_ms > 0.0);
        assert!((r.ratio - r.svd_ms / r.pca_step_ms).abs() < 1e-12 * r.ratio);
        let mut sorted = r.pca_samples_ms.clone();
        sorted.sort_by(f64::total_cmp);
        assert_eq!(r.pca_step_ms, sorted[2]);
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(timing_bench(BenchConfig::new(8, 4, 5)).is_err());
        let mut c = BenchConfig::new(8, 4, 2);
        c.repeats = 0;
        assert!(timing_bench(c).is_err());
    }
}
