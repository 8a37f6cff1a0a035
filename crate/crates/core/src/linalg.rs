//! Dense kernels for column-graded matrices.
//!
//! Long products of transfer matrices have singular values spread over
//! thousands of orders of magnitude, far outside the `f64` range. We keep such
//! a matrix as `B · diag(exp(s))`, where the columns of `B` are unit vectors and
//! `s` holds natural-log scales, and orthogonalize it with one-sided (Hestenes)
//! Jacobi rotations whose coefficients are evaluated in log space. One-sided
//! Jacobi on a column-graded matrix with a well-conditioned `B` recovers every
//! singular value to high relative accuracy, including the tiny ones.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

const MAX_SWEEPS: usize = 80;

/// Above this log-gap the rotation tangent is evaluated through its asymptotic form.
const WIDE_GAP: f64 = 20.0;

/// SVD of `basis · diag(exp(log_scale))`, i.e. `left · diag(exp(log_singular)) · rightᵀ`.
#[derive(Clone, Debug)]
pub struct GradedSvd {
    /// `m×k`, orthonormal columns (columns with `-inf` scale are zero).
    pub left: DMatrix<f64>,
    /// Non-increasing natural-log singular values.
    pub log_singular: Vec<f64>,
    /// `k×k` orthogonal.
    pub right: DMatrix<f64>,
}

/// Column-graded SVD. Requires `basis.nrows() >= basis.ncols()`.
pub fn graded_svd(basis: &DMatrix<f64>, log_scale: &[f64]) -> Result<GradedSvd> {
    let (m, k) = basis.shape();
    if log_scale.len() != k {
        return Err(Error::Contract(format!("{} log scales for {k} columns", log_scale.len())));
    }
    if m < k {
        return Err(Error::Contract(format!("graded_svd needs rows >= cols, got {m}x{k}")));
    }
    let mut cols: Vec<f64> = basis.as_slice().to_vec();
    let mut scale = log_scale.to_vec();
    let mut rot = vec![0.0; k * k];
    for j in 0..k {
        rot[j * k + j] = 1.0;
    }
    for j in 0..k {
        normalize_column(&mut cols[j * m..(j + 1) * m], &mut scale[j])?;
    }

    let tol = (m as f64) * f64::EPSILON;
    let mut converged = false;
    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..k {
            for q in (p + 1)..k {
                if scale[p] == f64::NEG_INFINITY || scale[q] == f64::NEG_INFINITY {
                    continue;
                }
                let g = dot(&cols[p * m..(p + 1) * m], &cols[q * m..(q + 1) * m]);
                if g.abs() <= tol {
                    continue;
                }
                rotated = true;
                let (hi, lo) = if scale[p] >= scale[q] { (p, q) } else { (q, p) };
                rotate_pair(&mut cols, &mut scale, &mut rot, m, k, hi, lo, g)?;
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::Numerical(format!("graded Jacobi SVD did not converge in {MAX_SWEEPS} sweeps")));
    }

    let mut order: Vec<usize> = (0..k).collect();
    // stable: exact ties keep column order
    order.sort_by(|&a, &b| scale[b].total_cmp(&scale[a]));
    let left = DMatrix::from_fn(m, k, |i, j| cols[order[j] * m + i]);
    let right = DMatrix::from_fn(k, k, |i, j| rot[order[j] * k + i]);
    let log_singular = order.iter().map(|&j| scale[j]).collect();
    Ok(GradedSvd { left, log_singular, right })
}

/// Applies the rotation zeroing the inner product of columns `hi` and `lo`,
/// where `scale[hi] >= scale[lo]` and `g` is the cosine between their unit bases.
#[allow(clippy::too_many_arguments)]
fn rotate_pair(
    cols: &mut [f64],
    scale: &mut [f64],
    rot: &mut [f64],
    m: usize,
    k: usize,
    hi: usize,
    lo: usize,
    g: f64,
) -> Result<()> {
    let delta = scale[hi] - scale[lo];
    // zeta = (|c_lo|² − |c_hi|²) / (2 c_hi·c_lo) = −sinh(delta)/g
    // t_up = t·e^delta and t_down = t·e^−delta are what the scaled update needs.
    let (t, t_up, t_down) = if delta < WIDE_GAP {
        let zeta = -delta.sinh() / g;
        let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
        (t, t * delta.exp(), t * (-delta).exp())
    } else {
        // |zeta| > 2e8, so t = 1/(2 zeta) to double precision
        let t = -g * (-delta).exp();
        (t, -g, -g * (-2.0 * delta).exp())
    };
    let c = 1.0 / (1.0 + t * t).sqrt();
    let s = c * t;

    let (hi_col, lo_col) = split_pair(cols, m, hi, lo);
    for i in 0..m {
        let bh = hi_col[i];
        let bl = lo_col[i];
        hi_col[i] = c * bh - c * t_down * bl;
        lo_col[i] = c * t_up * bh + c * bl;
    }
    normalize_column(hi_col, &mut scale[hi])?;
    normalize_column(lo_col, &mut scale[lo])?;

    let (rh, rl) = split_pair(rot, k, hi, lo);
    for i in 0..k {
        let a = rh[i];
        let b = rl[i];
        rh[i] = c * a - s * b;
        rl[i] = s * a + c * b;
    }
    Ok(())
}

fn split_pair(buf: &mut [f64], len: usize, a: usize, b: usize) -> (&mut [f64], &mut [f64]) {
    if a < b {
        let (x, y) = buf.split_at_mut(b * len);
        (&mut x[a * len..(a + 1) * len], &mut y[..len])
    } else {
        let (x, y) = buf.split_at_mut(a * len);
        (&mut y[..len], &mut x[b * len..(b + 1) * len])
    }
}

fn normalize_column(col: &mut [f64], scale: &mut f64) -> Result<()> {
    let norm = dot(col, col).sqrt();
    if !norm.is_finite() || scale.is_nan() {
        return Err(Error::Numerical("non-finite column in graded SVD".into()));
    }
    if norm == 0.0 {
        *scale = f64::NEG_INFINITY;
        return Ok(());
    }
    col.iter_mut().for_each(|x| *x /= norm);
    *scale += norm.ln();
    Ok(())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Re-orthonormalizes the rows of a square, nearly orthogonal matrix in place
/// (modified Gram–Schmidt).
pub fn reorthonormalize_rows(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in 0..i {
            let proj = m.row(i).dot(&m.row(j));
            let rj = m.row(j).clone_owned();
            let mut ri = m.row_mut(i);
            ri -= rj * proj;
        }
        let norm = m.row(i).norm();
        m.row_mut(i).scale_mut(1.0 / norm);
    }
}

/// Largest deviation of `AᵀA` from the identity, entrywise.
pub fn orthogonality_defect(a: &DMatrix<f64>) -> f64 {
    let g = a.transpose() * a;
    let n = g.nrows();
    (g - DMatrix::<f64>::identity(n, n)).amax()
}

/// `log(e^a + e^b)` without overflow.
pub fn log_add_exp(a: f64, b: f64) -> f64 {
    let hi = a.max(b);
    if hi == f64::NEG_INFINITY {
        return hi;
    }
    hi + ((a - hi).exp() + (b - hi).exp()).ln()
}
