//! Dense SVD by one-sided (Hestenes) Jacobi rotations, plus subspace utilities.
//!
//! This module is the independent reference for everything projection-related:
//! it serves the periodic-SVD updater and is the oracle that the online PCA
//! path is checked against. It depends on nothing but [`crate::matrix`].

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use crate::error::{Error, Result};
use crate::matrix::{dot, frobenius_norm, Matrix};

pub const MAX_SWEEPS: usize = 100;

#[derive(Debug, Clone)]
pub struct SvdResult {
    /// n×r, orthonormal columns.
    pub u: Matrix,
    /// Non-increasing, length r = min(n, m).
    pub sigma: Vec<f64>,
    /// m×r, orthonormal columns.
    pub v: Matrix,
}

impl SvdResult {
    /// `U Σ Vᵀ` restricted to the leading `k` triplets.
    pub fn reconstruct(&self, k: usize) -> Matrix {
        let k = k.min(self.sigma.len());
        let (n, m) = (self.u.rows(), self.v.rows());
        Matrix::from_fn(n, m, |i, j| {
            (0..k)
                .map(|r| self.u[(i, r)] * self.sigma[r] * self.v[(j, r)])
                .sum()
        })
    }
}

pub fn svd(a: &Matrix) -> Result<SvdResult> {
    a.check_finite("svd input")?;
    let (n, m) = a.shape();
    if m > n {
        let t = jacobi_tall(&a.transpose())?;
        let mut out = SvdResult {
            u: t.v,
            sigma: t.sigma,
            v: t.u,
        };
        fix_signs(&mut out);
        Ok(out)
    } else {
        let mut out = jacobi_tall(a)?;
        fix_signs(&mut out);
        Ok(out)
    }
}

/// Top-`k` left singular vectors of `a` as an n×k matrix.
pub fn top_k_left(a: &Matrix, k: usize) -> Result<Matrix> {
    if k == 0 || k > a.rows().min(a.cols()) {
        return Err(Error::InvalidArgument(format!(
            "rank {k} outside 1..={} for a {}x{} matrix",
            a.rows().min(a.cols()),
            a.rows(),
            a.cols()
        )));
    }
    Ok(svd(a)?.u.columns(0, k))
}

/// Best rank-`k` residual `sqrt(σ_{k+1}² + … + σ_r²)`.
pub fn tail_energy(sigma: &[f64], k: usize) -> f64 {
    sigma.iter().skip(k).map(|s| s * s).sum::<f64>().sqrt()
}

fn input_hash(a: &Matrix) -> u64 {
    let mut h = DefaultHasher::new();
    a.shape().hash(&mut h);
    for x in a.as_slice() {
        x.to_bits().hash(&mut h);
    }
    h.finish()
}

// n ≥ m: orthogonalize the m columns of `a` in place.
fn jacobi_tall(a: &Matrix) -> Result<SvdResult> {
    let (n, m) = a.shape();
    let mut cols: Vec<Vec<f64>> = (0..m).map(|j| a.column(j)).collect();
    let mut vcols: Vec<Vec<f64>> = (0..m)
        .map(|j| {
            let mut e = vec![0.0; m];
            e[j] = 1.0;
            e
        })
        .collect();
    let mut sq: Vec<f64> = cols.iter().map(|c| dot(c, c)).collect();

    let scale = frobenius_norm(a);
    let negligible = (f64::EPSILON * scale).powi(2);
    let tol = (n as f64 * f64::EPSILON).max(1e-13);

    let mut converged = scale == 0.0;
    let mut sweep = 0;
    while !converged && sweep < MAX_SWEEPS {
        sweep += 1;
        let mut rotated = false;
        for p in 0..m {
            for q in p + 1..m {
                let (alpha, beta) = (sq[p], sq[q]);
                if alpha <= negligible || beta <= negligible {
                    continue;
                }
                let gamma = dot(&cols[p], &cols[q]);
                if gamma.abs() <= tol * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;

                let (left, right) = cols.split_at_mut(q);
                let (cp, cq) = (&mut left[p], &mut right[0]);
                let (mut np, mut nq) = (0.0, 0.0);
                for (x, y) in cp.iter_mut().zip(cq.iter_mut()) {
                    let (xp, yq) = (*x, *y);
                    *x = c * xp - s * yq;
                    *y = s * xp + c * yq;
                    np += *x * *x;
                    nq += *y * *y;
                }
                sq[p] = np;
                sq[q] = nq;

                let (left, right) = vcols.split_at_mut(q);
                for (x, y) in left[p].iter_mut().zip(right[0].iter_mut()) {
                    let (xp, yq) = (*x, *y);
                    *x = c * xp - s * yq;
                    *y = s * xp + c * yq;
                }
            }
        }
        converged = !rotated;
    }
    if !converged {
        return Err(Error::SvdNoConvergence {
            sweeps: sweep,
            input_hash: input_hash(a),
        });
    }

    let mut order: Vec<usize> = (0..m).collect();
    let sigma_of: Vec<f64> = sq.iter().map(|s| s.sqrt()).collect();
    order.sort_by(|&i, &j| sigma_of[j].total_cmp(&sigma_of[i]).then(i.cmp(&j)));

    let mut ucols: Vec<Vec<f64>> = Vec::with_capacity(m);
    let mut sigma = Vec::with_capacity(m);
    let mut missing = Vec::new();
    for (slot, &j) in order.iter().enumerate() {
        let s = sigma_of[j];
        sigma.push(s);
        if sq[j] > negligible {
            ucols.push(cols[j].iter().map(|x| x / s).collect());
        } else {
            ucols.push(Vec::new());
            missing.push(slot);
        }
    }
    complete_basis(&mut ucols, &missing, n);

    let u = Matrix::from_fn(n, m, |i, r| ucols[r][i]);
    let v = Matrix::from_fn(m, m, |i, r| vcols[order[r]][i]);
    Ok(SvdResult { u, sigma, v })
}

// Fill the columns listed in `missing` with unit vectors orthogonal to all the
// others, drawn from the standard basis in order.
fn complete_basis(ucols: &mut [Vec<f64>], missing: &[usize], n: usize) {
    let mut candidate = 0;
    for &slot in missing {
        loop {
            assert!(candidate < n, "cannot complete an orthonormal basis");
            let mut e = vec![0.0; n];
            e[candidate] = 1.0;
            candidate += 1;
            for _pass in 0..2 {
                for (idx, u) in ucols.iter().enumerate() {
                    if idx == slot || u.is_empty() {
                        continue;
                    }
                    let proj = dot(u, &e);
                    for (x, &ui) in e.iter_mut().zip(u) {
                        *x -= proj * ui;
                    }
                }
            }
            let nrm = dot(&e, &e).sqrt();
            if nrm > 1e-6 {
                ucols[slot] = e.into_iter().map(|x| x / nrm).collect();
                break;
            }
        }
    }
}

// Largest-magnitude entry of each U column is made positive.
fn fix_signs(res: &mut SvdResult) {
    let (n, r) = res.u.shape();
    let m = res.v.rows();
    for j in 0..r {
        let mut best = 0;
        for i in 1..n {
            if res.u[(i, j)].abs() > res.u[(best, j)].abs() {
                best = i;
            }
        }
        if res.u[(best, j)] < 0.0 {
            for i in 0..n {
                res.u[(i, j)] = -res.u[(i, j)];
            }
            for i in 0..m {
                res.v[(i, j)] = -res.v[(i, j)];
            }
        }
    }
}

/// Principal angles between `span(p1)` and `span(p2)`, ascending, in `[0, π/2]`.
///
/// Small angles come from the sines (singular values of `(I − Q₁Q₁ᵀ)Q₂`) and
/// large ones from the cosines (singular values of `Q₁ᵀQ₂`), which keeps both
/// ends accurate.
pub fn principal_angles(p1: &Matrix, p2: &Matrix) -> Result<Vec<f64>> {
    if p1.shape() != p2.shape() {
        return Err(Error::ShapeMismatch {
            op: "principal_angles",
            left: p1.shape(),
            right: p2.shape(),
        });
    }
    let q1 = p1.orthonormalize_columns(1e-10)?;
    let q2 = p2.orthonormalize_columns(1e-10)?;
    let cosines = svd(&q1.t_matmul(&q2)?)?.sigma;
    let residual = q2.sub(&q1.matmul(&q1.t_matmul(&q2)?)?)?;
    let mut sines = svd(&residual)?.sigma;
    sines.reverse();

    Ok(cosines
        .iter()
        .zip(&sines)
        .map(|(&c, &s)| {
            let c = c.min(1.0);
            if c * c <= 0.5 {
                c.acos()
            } else {
                s.min(1.0).asin()
            }
        })
        .collect())
}
