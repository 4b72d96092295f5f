//! Central finite differences for gradient verification.

use crate::error::Result;
use crate::matrix::{frobenius_norm, Matrix};

/// Central-difference gradient of `f` at `x` with step `h`.
pub fn fd_grad(f: impl Fn(&Matrix) -> Result<f64>, x: &Matrix, h: f64) -> Result<Matrix> {
    let mut out = Matrix::zeros(x.rows(), x.cols());
    let mut probe = x.clone();
    for i in 0..x.rows() {
        for j in 0..x.cols() {
            let orig = probe[(i, j)];
            probe[(i, j)] = orig + h;
            let plus = f(&probe)?;
            probe[(i, j)] = orig - h;
            let minus = f(&probe)?;
            probe[(i, j)] = orig;
            out[(i, j)] = (plus - minus) / (2.0 * h);
        }
    }
    Ok(out)
}

/// Central-difference gradients of a function of several matrices.
pub fn fd_grad_multi(f: impl Fn(&[Matrix]) -> Result<f64>, xs: &[Matrix], h: f64) -> Result<Vec<Matrix>> {
    let mut probe = xs.to_vec();
    let mut out = Vec::with_capacity(xs.len());
    for idx in 0..xs.len() {
        let mut g = Matrix::zeros(xs[idx].rows(), xs[idx].cols());
        for i in 0..xs[idx].rows() {
            for j in 0..xs[idx].cols() {
                let orig = probe[idx][(i, j)];
                probe[idx][(i, j)] = orig + h;
                let plus = f(&probe)?;
                probe[idx][(i, j)] = orig - h;
                let minus = f(&probe)?;
                probe[idx][(i, j)] = orig;
                g[(i, j)] = (plus - minus) / (2.0 * h);
            }
        }
        out.push(g);
    }
    Ok(out)
}

/// `‖a − b‖ / ‖b‖`, falling back to the absolute error when `b` vanishes.
pub fn relative_error(analytic: &Matrix, reference: &Matrix) -> Result<f64> {
    let diff = frobenius_norm(&analytic.sub(reference)?);
    let scale = frobenius_norm(reference);
    Ok(if scale > 0.0 { diff / scale } else { diff })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cubic_gradient() {
        let x = Matrix::from_rows(&[[1.0, -2.0], [0.5, 3.0]]).unwrap();
        let f = |m: &Matrix| Ok(m.as_slice().iter().map(|v| v * v * v).sum());
        let g = fd_grad(f, &x, 1e-5).unwrap();
        let want = x.map(|v| 3.0 * v * v);
        assert!(relative_error(&g, &want).unwrap() < 1e-9);
    }

    #[test]
    fn multi_matches_single() {
        let a = Matrix::from_rows(&[[1.0, 2.0]]).unwrap();
        let b = Matrix::from_rows(&[[3.0], [4.0]]).unwrap();
        let f = |xs: &[Matrix]| Ok(xs[0].matmul(&xs[1])?[(0, 0)].powi(2));
        let gs = fd_grad_multi(f, &[a.clone(), b.clone()], 1e-6).unwrap();
        // d/da (a·b)² = 2(a·b) bᵀ with a·b = 11
        assert!(relative_error(&gs[0], &b.transpose().scale(22.0).unwrap()).unwrap() < 1e-8);
        assert!(relative_error(&gs[1], &a.transpose().scale(22.0).unwrap()).unwrap() < 1e-8);
    }
}
