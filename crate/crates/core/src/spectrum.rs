//! Finite truncations `H_N` on `{0, …, N−1} × {1, …, W}` with a Dirichlet wall
//! at `N`, their eigenpairs in a spectral window, eigenfunction decay fits, and
//! the grid scan for small singular values of the restricted cocycle.
//!
//! Eigenvalues come from inertia counts (block `LDLᵀ` of `H − λ`) and
//! bisection; eigenvectors from inverse iteration on a banded LU. Small
//! operators go through a dense symmetric eigensolver instead. Eigenvector
//! tails are recomputed from the block data at the peak by a QR-stabilized
//! backward transfer recursion, which resolves block norms far below the
//! `1e-16` floor of any direct eigensolver.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::cocycle::restricted_log_spectrum_at;
use crate::error::{contract, Error, Result};
use crate::linalg::log_add_exp;
use crate::model::Potential;

/// Dimension up to which `eigenpairs_in_window` uses the dense solver.
pub const DENSE_LIMIT: usize = 400;

/// Largest accepted `‖Hψ − λψ‖` for a unit eigenvector.
pub const RESIDUAL_LIMIT: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct TruncatedOperator {
    width: usize,
    blocks: Vec<DMatrix<f64>>,
}

/// `H_N` built from the first `n_sites` sites of a realization.
pub fn assemble_truncation(potential: &Potential, n_sites: usize) -> Result<TruncatedOperator> {
    if n_sites < 2 {
        return Err(contract("truncation needs N >= 2"));
    }
    if n_sites > potential.len() {
        return Err(contract(format!("need {n_sites} sites, realization has {}", potential.len())));
    }
    Ok(TruncatedOperator { width: potential.width(), blocks: potential.sites()[..n_sites].to_vec() })
}

impl TruncatedOperator {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn sites(&self) -> usize {
        self.blocks.len()
    }

    pub fn dim(&self) -> usize {
        self.width * self.blocks.len()
    }

    pub fn block(&self, n: usize) -> &DMatrix<f64> {
        &self.blocks[n]
    }

    /// Matrix entry; index `i` is site `i / W`, channel `i % W`.
    pub fn entry(&self, i: usize, j: usize) -> f64 {
        let w = self.width;
        let (n, a) = (i / w, i % w);
        let (m, b) = (j / w, j % w);
        if n == m {
            self.blocks[n][(a, b)]
        } else if n.abs_diff(m) == 1 && a == b {
            1.0
        } else {
            0.0
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let d = self.dim();
        DMatrix::from_fn(d, d, |i, j| self.entry(i, j))
    }

    pub fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        let w = self.width;
        let n_sites = self.sites();
        let mut y = DVector::zeros(self.dim());
        for n in 0..n_sites {
            let xn = x.rows(n * w, w);
            let mut yn = &self.blocks[n] * xn;
            if n > 0 {
                yn += x.rows((n - 1) * w, w);
            }
            if n + 1 < n_sites {
                yn += x.rows((n + 1) * w, w);
            }
            y.rows_mut(n * w, w).copy_from(&yn);
        }
        y
    }

    /// Gershgorin enclosure of the spectrum.
    pub fn spectral_enclosure(&self) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for v in &self.blocks {
            for a in 0..self.width {
                let off: f64 = (0..self.width).filter(|&b| b != a).map(|b| v[(a, b)].abs()).sum::<f64>() + 2.0;
                lo = lo.min(v[(a, a)] - off);
                hi = hi.max(v[(a, a)] + off);
            }
        }
        (lo, hi)
    }

    fn scale(&self) -> f64 {
        let (lo, hi) = self.spectral_enclosure();
        lo.abs().max(hi.abs()).max(1.0)
    }

    /// Number of eigenvalues strictly below `lambda`, by Sylvester inertia of
    /// `H − λ = L D Lᵀ` with `D_n = V(n) − λ − D_{n−1}^{-1}`.
    pub fn count_below(&self, lambda: f64) -> usize {
        let tiny = f64::EPSILON * self.scale().max(lambda.abs());
        match self.width {
            1 => self.count_below_w1(lambda, tiny),
            2 => self.count_below_w2(lambda, tiny),
            _ => self.count_below_general(lambda, tiny),
        }
    }

    fn count_below_w1(&self, lambda: f64, tiny: f64) -> usize {
        let mut inv = 0.0;
        let mut neg = 0;
        for v in &self.blocks {
            let mut d = v[(0, 0)] - lambda - inv;
            if d == 0.0 {
                d = -tiny;
            }
            if d < 0.0 {
                neg += 1;
            }
            inv = 1.0 / d;
        }
        neg
    }

    fn count_below_w2(&self, lambda: f64, tiny: f64) -> usize {
        let (mut ip, mut iq, mut ir) = (0.0, 0.0, 0.0);
        let mut neg = 0;
        for v in &self.blocks {
            let mut p = v[(0, 0)] - lambda - ip;
            let q = v[(0, 1)] - iq;
            let mut r = v[(1, 1)] - lambda - ir;
            let mut det = p * r - q * q;
            if det == 0.0 {
                p -= tiny;
                r -= tiny;
                det = p * r - q * q;
                if det == 0.0 {
                    det = -tiny * tiny;
                }
            }
            neg += if det < 0.0 {
                1
            } else if p + r < 0.0 {
                2
            } else {
                0
            };
            ip = r / det;
            iq = -q / det;
            ir = p / det;
        }
        neg
    }

    fn count_below_general(&self, lambda: f64, tiny: f64) -> usize {
        let w = self.width;
        let mut inv = DMatrix::<f64>::zeros(w, w);
        let mut neg = 0;
        for v in &self.blocks {
            let mut d = v - &inv;
            for a in 0..w {
                d[(a, a)] -= lambda;
            }
            // symmetrize against drift before the eigensolve
            let d = (&d + d.transpose()) * 0.5;
            let eig = d.symmetric_eigen();
            let mut inv_diag = DVector::zeros(w);
            for (k, &e) in eig.eigenvalues.iter().enumerate() {
                let e = if e == 0.0 { -tiny } else { e };
                if e < 0.0 {
                    neg += 1;
                }
                inv_diag[k] = 1.0 / e;
            }
            inv = &eig.eigenvectors * DMatrix::from_diagonal(&inv_diag) * eig.eigenvectors.transpose();
        }
        neg
    }

    fn describe(&self) -> String {
        let (lo, hi) = self.spectral_enclosure();
        format!(
            "W = {}, N = {}, enclosure [{lo:.6}, {hi:.6}], V(0) = {:?}, V(N-1) = {:?}",
            self.width,
            self.sites(),
            self.blocks[0].as_slice(),
            self.blocks[self.sites() - 1].as_slice()
        )
    }
}

/// LU with partial pivoting of a band matrix with `kl = ku = W`.
/// Row `r` stores columns `r − kl ..= r + kl + ku` (room for pivoting fill-in).
struct BandLu {
    m: usize,
    kl: usize,
    span: usize,
    a: Vec<f64>,
    piv: Vec<usize>,
    lmul: Vec<f64>,
}

impl BandLu {
    fn at(&self, r: usize, c: usize) -> usize {
        r * self.span + (c + self.kl - r)
    }

    fn factor(op: &TruncatedOperator, shift: f64) -> Self {
        let m = op.dim();
        let kl = op.width();
        let ku = kl;
        let span = 2 * kl + ku + 1;
        let mut lu = BandLu { m, kl, span, a: vec![0.0; m * span], piv: vec![0; m], lmul: vec![0.0; m * kl] };
        for r in 0..m {
            for c in r.saturating_sub(kl)..=(r + ku).min(m - 1) {
                let idx = lu.at(r, c);
                lu.a[idx] = op.entry(r, c) - if r == c { shift } else { 0.0 };
            }
        }
        let tiny = f64::EPSILON * op.scale();
        for k in 0..m {
            let last = (k + kl).min(m - 1);
            let cmax = (k + kl + ku).min(m - 1);
            let mut p = k;
            for r in k + 1..=last {
                if lu.a[lu.at(r, k)].abs() > lu.a[lu.at(p, k)].abs() {
                    p = r;
                }
            }
            lu.piv[k] = p;
            if p != k {
                for c in k..=cmax {
                    let (i, j) = (lu.at(k, c), lu.at(p, c));
                    lu.a.swap(i, j);
                }
            }
            let kk = lu.at(k, k);
            if lu.a[kk] == 0.0 {
                lu.a[kk] = tiny;
            }
            let pivot = lu.a[kk];
            for r in k + 1..=last {
                let f = lu.a[lu.at(r, k)] / pivot;
                lu.lmul[k * kl + (r - k - 1)] = f;
                if f != 0.0 {
                    for c in k + 1..=cmax {
                        let src = lu.a[lu.at(k, c)];
                        let dst = lu.at(r, c);
                        lu.a[dst] -= f * src;
                    }
                }
            }
        }
        lu
    }

    fn solve(&self, b: &mut DVector<f64>) {
        let (m, kl) = (self.m, self.kl);
        let reach = 2 * kl;
        for k in 0..m {
            b.swap_rows(k, self.piv[k]);
            let bk = b[k];
            for r in k + 1..=(k + kl).min(m - 1) {
                b[r] -= self.lmul[k * kl + (r - k - 1)] * bk;
            }
        }
        for k in (0..m).rev() {
            let mut s = b[k];
            for c in k + 1..=(k + reach).min(m - 1) {
                s -= self.a[self.at(k, c)] * b[c];
            }
            b[k] = s / self.a[self.at(k, k)];
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EigenPair {
    pub lambda: f64,
    /// Row `n` is `ψ(n)`; unit ℓ² norm for solver output.
    #[serde(skip)]
    pub psi: DMatrix<f64>,
    /// Site of the largest block norm.
    pub center: usize,
    /// `‖H ψ − λ ψ‖`, when computed by a solver.
    pub residual: Option<f64>,
    /// `log ‖ψ(n)‖` for every site, tail-accurate right of `center`.
    #[serde(skip)]
    pub log_block_norms: Vec<f64>,
}

impl EigenPair {
    /// Wraps given block data without any solver checks.
    pub fn from_blocks(lambda: f64, psi: DMatrix<f64>) -> Self {
        let log_block_norms: Vec<f64> = psi.row_iter().map(|r| r.norm().ln()).collect();
        let center = argmax(&log_block_norms);
        Self { lambda, psi, center, residual: None, log_block_norms }
    }

    pub fn sites(&self) -> usize {
        self.psi.nrows()
    }

    /// The same eigenfunction scaled to `‖ψ(0)‖ = 1`, if `ψ(0)` is not negligible.
    pub fn left_normalized(&self) -> Option<Self> {
        let l0 = self.log_block_norms[0];
        let peak = self.log_block_norms[self.center];
        if !(l0.is_finite() && l0 > peak + (1e-12f64).ln()) {
            return None;
        }
        let mut out = self.clone();
        out.psi /= l0.exp();
        out.log_block_norms.iter_mut().for_each(|x| *x -= l0);
        Some(out)
    }
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverMethod {
    Auto,
    Dense,
    Banded,
}

/// Eigenpairs with `λ ∈ [a, b]`, sorted by eigenvalue.
pub fn eigenpairs_in_window(op: &TruncatedOperator, window: (f64, f64)) -> Result<Vec<EigenPair>> {
    eigenpairs_in_window_with(op, window, SolverMethod::Auto)
}

pub fn eigenpairs_in_window_with(
    op: &TruncatedOperator,
    window: (f64, f64),
    method: SolverMethod,
) -> Result<Vec<EigenPair>> {
    let (a, b) = window;
    if !(a.is_finite() && b.is_finite() && a < b) {
        return Err(contract(format!("window must satisfy a < b, got [{a}, {b}]")));
    }
    let dense = match method {
        SolverMethod::Auto => op.dim() <= DENSE_LIMIT,
        SolverMethod::Dense => true,
        SolverMethod::Banded => false,
    };
    let raw = if dense { dense_pairs(op, a, b) } else { banded_pairs(op, a, b) };
    raw.into_iter().map(|(lambda, x)| finish_pair(op, lambda, x, window)).collect()
}

fn dense_pairs(op: &TruncatedOperator, a: f64, b: f64) -> Vec<(f64, DVector<f64>)> {
    let eig = op.to_dense().symmetric_eigen();
    let mut out: Vec<(f64, DVector<f64>)> = eig
        .eigenvalues
        .iter()
        .enumerate()
        .filter(|(_, &l)| l >= a && l <= b)
        .map(|(k, &l)| (l, eig.eigenvectors.column(k).clone_owned()))
        .collect();
    out.sort_by(|x, y| x.0.total_cmp(&y.0));
    out
}

fn bisect_eigenvalue(op: &TruncatedOperator, index: usize, mut lo: f64, mut hi: f64) -> f64 {
    // invariant: count_below(lo) <= index < count_below(hi)
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi || hi - lo <= 2.0 * f64::EPSILON * lo.abs().max(hi.abs()) {
            break;
        }
        if op.count_below(mid) <= index {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn banded_pairs(op: &TruncatedOperator, a: f64, b: f64) -> Vec<(f64, DVector<f64>)> {
    // eigenvalues in [a, b]: indices count_below(a) .. count_below(next_up(b))
    let b_up = b + f64::EPSILON * b.abs().max(f64::MIN_POSITIVE);
    let first = op.count_below(a);
    let end = op.count_below(b_up);
    let shifts: Vec<f64> = (first..end).into_par_iter().map(|k| bisect_eigenvalue(op, k, a, b_up)).collect();
    let cluster_tol = 1e-10 * op.scale();
    let mut found: Vec<(f64, DVector<f64>)> = Vec::with_capacity(shifts.len());
    for (k, &sigma) in shifts.iter().enumerate() {
        let neighbours: Vec<&DVector<f64>> =
            found.iter().filter(|(mu, _)| (mu - sigma).abs() < cluster_tol).map(|(_, v)| v).collect();
        let x = inverse_iteration(op, sigma, (first + k) as u64, &neighbours);
        let lambda = x.dot(&op.apply(&x));
        found.push((lambda, x));
    }
    found.sort_by(|x, y| x.0.total_cmp(&y.0));
    found
}

fn inverse_iteration(op: &TruncatedOperator, sigma: f64, seed: u64, against: &[&DVector<f64>]) -> DVector<f64> {
    let lu = BandLu::factor(op, sigma);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = DVector::from_fn(op.dim(), |_, _| rng.random_range(-1.0..1.0));
    x /= x.norm();
    let target = 1e-13 * op.scale();
    for it in 0..8 {
        let mut y = x.clone();
        lu.solve(&mut y);
        for v in against {
            let c = v.dot(&y);
            y.axpy(-c, v, 1.0);
        }
        let norm = y.norm();
        if !(norm.is_finite() && norm > 0.0) {
            break;
        }
        x = y / norm;
        if it >= 1 {
            let hx = op.apply(&x);
            let rq = x.dot(&hx);
            if (hx - &x * rq).norm() <= target {
                break;
            }
        }
    }
    x
}

fn finish_pair(op: &TruncatedOperator, lambda: f64, mut x: DVector<f64>, window: (f64, f64)) -> Result<EigenPair> {
    // sign convention: largest-magnitude entry positive
    let imax = x.iamax();
    if x[imax] < 0.0 {
        x.neg_mut();
    }
    let residual = (op.apply(&x) - &x * lambda).norm();
    if !(residual <= RESIDUAL_LIMIT) {
        return Err(Error::Numerical(format!(
            "eigenpair residual {residual:.3e} > {RESIDUAL_LIMIT:.0e} at lambda = {lambda}, window [{}, {}]; operator: {}",
            window.0,
            window.1,
            op.describe()
        )));
    }
    let w = op.width();
    let psi = DMatrix::from_fn(op.sites(), w, |n, a| x[n * w + a]);
    let direct: Vec<f64> = psi.row_iter().map(|r| r.norm().ln()).collect();
    let center = argmax(&direct);
    let mut log_block_norms = direct;
    let tail = right_tail_log_norms(op, lambda, &psi, center);
    log_block_norms[center..].copy_from_slice(&tail);
    Ok(EigenPair { lambda, psi, center, residual: Some(residual), log_block_norms })
}

/// `log ‖ψ(n)‖` for `n = center, …, N−1`, continuing the block data
/// `(ψ(c), ψ(c+1))` inside the space of solutions that vanish at `N`.
///
/// That space is carried from the wall by `x_{n−1} = S_n x_n`,
/// `S_n = [[λ − V(n), −I], [I, 0]]`, as `S_n Q_n = Q_{n−1} R_{n−1}`; the
/// coordinates then evolve rightward as `a_{n+1} = R_n^{-1} a_n`, a decaying
/// recursion that is computed without cancellation.
pub fn right_tail_log_norms(op: &TruncatedOperator, lambda: f64, psi: &DMatrix<f64>, center: usize) -> Vec<f64> {
    let n_sites = op.sites();
    let w = op.width();
    if center + 1 >= n_sites {
        return (center..n_sites).map(|n| psi.row(n).norm().ln()).collect();
    }
    let mut qs: Vec<DMatrix<f64>> = vec![DMatrix::zeros(0, 0); n_sites];
    let mut rs: Vec<DMatrix<f64>> = vec![DMatrix::zeros(0, 0); n_sites];
    let mut q = DMatrix::zeros(2 * w, w);
    for a in 0..w {
        q[(a, a)] = 1.0;
    }
    qs[n_sites - 1] = q;
    for n in (center + 1..n_sites).rev() {
        let qn = &qs[n];
        let top = qn.rows(0, w);
        let bottom = qn.rows(w, w);
        let mut b = DMatrix::zeros(2 * w, w);
        let new_top = top * lambda - op.block(n) * top - bottom;
        b.rows_mut(0, w).copy_from(&new_top);
        b.rows_mut(w, w).copy_from(&top);
        let qr = b.qr();
        qs[n - 1] = qr.q();
        rs[n - 1] = qr.r();
    }
    let mut xc = DVector::zeros(2 * w);
    for a in 0..w {
        xc[a] = psi[(center, a)];
        xc[w + a] = psi[(center + 1, a)];
    }
    let mut coeff = qs[center].transpose() * xc;
    let mut log_scale = 0.0;
    let s = coeff.norm();
    if s == 0.0 {
        return vec![f64::NEG_INFINITY; n_sites - center];
    }
    coeff /= s;
    log_scale += s.ln();
    let mut out = Vec::with_capacity(n_sites - center);
    for n in center..n_sites {
        let top = qs[n].rows(0, w) * &coeff;
        out.push(log_scale + top.norm().ln());
        if n + 1 < n_sites {
            coeff = match rs[n].solve_upper_triangular(&coeff) {
                Some(c) => c,
                None => {
                    out.resize(n_sites - center, f64::NEG_INFINITY);
                    return out;
                }
            };
            let s = coeff.norm();
            coeff /= s;
            log_scale += s.ln();
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FitPolicy {
    /// Sites skipped right of the center before the fit window starts.
    pub buffer: usize,
    /// Window ends at `floor(max_fraction · N)`.
    pub max_fraction: f64,
    pub min_points: usize,
    /// Pairs centered beyond `center_max_fraction · N` are not left-localized.
    pub center_max_fraction: f64,
    /// Theil–Sen instead of least squares.
    pub robust: bool,
    /// Sites with `log ‖ψ(n)‖` below this end the window.
    pub log_floor: f64,
}

impl Default for FitPolicy {
    fn default() -> Self {
        Self {
            buffer: 20,
            max_fraction: 0.9,
            min_points: 10,
            center_max_fraction: 0.25,
            robust: false,
            log_floor: (1e-300f64).ln(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum FitSkip {
    NotLeftLocalized { center: usize, limit: usize },
    WindowTooShort { points: usize, required: usize },
}

impl std::fmt::Display for FitSkip {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            FitSkip::NotLeftLocalized { center, limit } => {
                write!(f, "center {center} beyond {limit}, not left-localized")
            }
            FitSkip::WindowTooShort { points, required } => {
                write!(f, "fit window has {points} points, need {required}")
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DecayRateFit {
    pub rate: f64,
    pub window: (usize, usize),
    pub points: usize,
    pub r_squared: f64,
    pub robust: bool,
}

/// Decay rate of the right tail: minus the slope of
/// `log(‖ψ(n)‖ + ‖ψ(n+1)‖)` over `[center + buffer, floor(max_fraction · N)]`.
pub fn fit_decay_rate(pair: &EigenPair, policy: &FitPolicy) -> std::result::Result<DecayRateFit, FitSkip> {
    let n_sites = pair.sites();
    let limit = (policy.center_max_fraction * n_sites as f64).floor() as usize;
    if pair.center > limit {
        return Err(FitSkip::NotLeftLocalized { center: pair.center, limit });
    }
    let lo = pair.center + policy.buffer;
    let hi = ((policy.max_fraction * n_sites as f64).floor() as usize).min(n_sites.saturating_sub(2));
    let mut pts = Vec::new();
    let norms = &pair.log_block_norms;
    for n in lo..=hi {
        if !(norms[n] >= policy.log_floor) {
            break;
        }
        pts.push((n as f64, log_add_exp(norms[n], norms[n + 1])));
    }
    if pts.len() < policy.min_points {
        return Err(FitSkip::WindowTooShort { points: pts.len(), required: policy.min_points });
    }
    let (slope, intercept) = if policy.robust { theil_sen(&pts) } else { least_squares(&pts) };
    let my = pts.iter().map(|p| p.1).sum::<f64>() / pts.len() as f64;
    let ss_tot: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    let ss_res: f64 = pts.iter().map(|p| (p.1 - slope * p.0 - intercept).powi(2)).sum();
    let r_squared = if ss_tot > 0.0 { (1.0 - ss_res / ss_tot).clamp(0.0, 1.0) } else { 1.0 };
    Ok(DecayRateFit {
        rate: -slope,
        window: (lo, lo + pts.len() - 1),
        points: pts.len(),
        r_squared,
        robust: policy.robust,
    })
}

fn least_squares(pts: &[(f64, f64)]) -> (f64, f64) {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    let m = v.len();
    if m % 2 == 1 {
        v[m / 2]
    } else {
        0.5 * (v[m / 2 - 1] + v[m / 2])
    }
}

fn theil_sen(pts: &[(f64, f64)]) -> (f64, f64) {
    let mut slopes = Vec::with_capacity(pts.len() * (pts.len() - 1) / 2);
    for i in 0..pts.len() {
        for j in i + 1..pts.len() {
            slopes.push((pts[j].1 - pts[i].1) / (pts[j].0 - pts[i].0));
        }
    }
    let slope = median(&mut slopes);
    let mut offsets: Vec<f64> = pts.iter().map(|p| p.1 - slope * p.0).collect();
    (slope, median(&mut offsets))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FastScanReport {
    pub lambda0: f64,
    pub radius: f64,
    pub n: usize,
    /// Cell centers `λ₀ − r + (i + ½) · 2r/G`.
    pub lambdas: Vec<f64>,
    /// `(1/n) log s_W(Φ_n(λ)|_{F₀})` per grid point.
    pub rates: Vec<f64>,
    pub global_min: f64,
    pub argmin: f64,
    pub spacing: f64,
    /// `log` of the Lipschitz allowance between grid points, once bounds are attached.
    pub log_lipschitz_slack: Option<f64>,
}

impl FastScanReport {
    /// Log of `n · e^{n(γ₁ + 4ε)} · spacing`, the worst-case change of the
    /// smallest singular value between neighbouring grid points.
    pub fn attach_lipschitz_slack(&mut self, gamma1: f64, epsilon: f64) {
        let n = self.n as f64;
        self.log_lipschitz_slack = Some(n.ln() + n * (gamma1 + 4.0 * epsilon) + self.spacing.ln());
    }
}

/// Smallest singular value of the restricted cocycle on a grid around `λ₀`.
pub fn fast_scan(potential: &Potential, lambda0: f64, radius: f64, n: usize, grid_points: usize) -> Result<FastScanReport> {
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(contract("scan radius must be positive"));
    }
    if grid_points == 0 || n == 0 {
        return Err(contract("fast_scan needs n >= 1 and at least one grid point"));
    }
    let spacing = 2.0 * radius / grid_points as f64;
    let lambdas: Vec<f64> = (0..grid_points).map(|i| lambda0 - radius + (i as f64 + 0.5) * spacing).collect();
    let w = potential.width();
    let rates: Vec<f64> = lambdas
        .par_iter()
        .map(|&l| restricted_log_spectrum_at(potential, l, n).map(|s| s[w - 1] / n as f64))
        .collect::<Result<_>>()?;
    let k = argmin(&rates);
    Ok(FastScanReport {
        lambda0,
        radius,
        n,
        global_min: rates[k],
        argmin: lambdas[k],
        lambdas,
        rates,
        spacing,
        log_lipschitz_slack: None,
    })
}

fn argmin(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x < v[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{sample_potential, PotentialModel, SiteLaw};
    use crate::rng::RngStream;

    fn constant_potential(v: DMatrix<f64>, n: usize) -> Potential {
        let w = v.nrows();
        Potential::from_sites(w, vec![v; n]).unwrap()
    }

    fn random_potential(w: usize, n: usize, seed: u64) -> Potential {
        let model = PotentialModel::schrodinger(w, SiteLaw::UniformInterval { lo: -1.0, hi: 1.0 }).unwrap();
        sample_potential(&model, n, &RngStream::new(seed, 0)).unwrap()
    }

    #[test]
    fn two_site_scalar_example() {
        let op = assemble_truncation(&constant_potential(DMatrix::zeros(1, 1), 2), 2).unwrap();
        assert_eq!(op.to_dense(), DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]));
        let pairs = eigenpairs_in_window(&op, (-2.0, 2.0)).unwrap();
        assert_eq!(pairs.len(), 2);
        assert!((pairs[0].lambda + 1.0).abs() < 1e-14 && (pairs[1].lambda - 1.0).abs() < 1e-14);
    }

    #[test]
    fn block_layout() {
        let v = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 3.0]);
        let op = assemble_truncation(&constant_potential(v, 3), 3).unwrap();
        let h = op.to_dense();
        #[rustfmt::skip]
        let expected = DMatrix::from_row_slice(6, 6, &[
            1.0, 2.0, 1.0, 0.0, 0.0, 0.0,
            2.0, 3.0, 0.0, 1.0, 0.0, 0.0,
            1.0, 0.0, 1.0, 2.0, 1.0, 0.0,
            0.0, 1.0, 2.0, 3.0, 0.0, 1.0,
            0.0, 0.0, 1.0, 0.0, 1.0, 2.0,
            0.0, 0.0, 0.0, 1.0, 2.0, 3.0,
        ]);
        assert_eq!(h, expected);
        let x = DVector::from_fn(6, |i, _| (i as f64).sin());
        assert!((op.apply(&x) - &h * &x).norm() < 1e-14);
    }

    #[test]
    fn free_laplacian_spectrum() {
        let n = 50;
        let op = assemble_truncation(&constant_potential(DMatrix::zeros(1, 1), n), n).unwrap();
        for method in [SolverMethod::Dense, SolverMethod::Banded] {
            let pairs = eigenpairs_in_window_with(&op, (-2.5, 2.5), method).unwrap();
            assert_eq!(pairs.len(), n);
            for (k, p) in pairs.iter().enumerate() {
                let exact = -2.0 * (((k + 1) as f64) * std::f64::consts::PI / (n + 1) as f64).cos();
                assert!((p.lambda - exact).abs() < 1e-10, "{method:?} {k}");
            }
        }
    }

    #[test]
    fn counts_match_dense_spectrum() {
        for (w, seed) in [(1, 1), (2, 2), (3, 3), (4, 4)] {
            let pot = random_potential(w, 60, seed);
            let op = assemble_truncation(&pot, 60).unwrap();
            let mut eig: Vec<f64> = op.to_dense().symmetric_eigen().eigenvalues.iter().copied().collect();
            eig.sort_by(|a, b| a.total_cmp(b));
            for k in 0..=40 {
                let lambda = -4.0 + 0.2 * k as f64;
                let expected = eig.iter().filter(|&&e| e < lambda).count();
                assert_eq!(op.count_below(lambda), expected, "w={w} lambda={lambda}");
            }
        }
    }

    #[test]
    fn banded_solver_matches_dense() {
        for (w, seed) in [(1, 11), (2, 12), (3, 13)] {
            let pot = random_potential(w, 120, seed);
            let op = assemble_truncation(&pot, 120).unwrap();
            let dense = eigenpairs_in_window_with(&op, (-0.5, 0.5), SolverMethod::Dense).unwrap();
            let banded = eigenpairs_in_window_with(&op, (-0.5, 0.5), SolverMethod::Banded).unwrap();
            assert_eq!(dense.len(), banded.len());
            for (d, b) in dense.iter().zip(&banded) {
                assert!((d.lambda - b.lambda).abs() < 1e-11);
                assert!(b.residual.unwrap() < 1e-10);
                let overlap: f64 = d.psi.iter().zip(b.psi.iter()).map(|(x, y)| x * y).sum();
                assert!((overlap.abs() - 1.0).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn width_two_window_pairs() {
        let pot = random_potential(2, 100, 21);
        let op = assemble_truncation(&pot, 100).unwrap();
        let pairs = eigenpairs_in_window(&op, (-0.1, 0.1)).unwrap();
        for p in &pairs {
            assert!(p.lambda >= -0.1 && p.lambda <= 0.1);
            assert!(p.residual.unwrap() <= 1e-8);
            assert!((p.psi.norm() - 1.0).abs() < 1e-12);
        }
        let far = eigenpairs_in_window(&op, (50.0, 60.0)).unwrap();
        assert!(far.is_empty());
        assert!(eigenpairs_in_window(&op, (1.0, 0.0)).is_err());
    }

    #[test]
    fn tail_continuation_agrees_with_direct_vector() {
        let pot = random_potential(2, 150, 31);
        let op = assemble_truncation(&pot, 150).unwrap();
        let pairs = eigenpairs_in_window_with(&op, (-3.0, 3.0), SolverMethod::Dense).unwrap();
        for p in pairs.iter().step_by(7) {
            let direct: Vec<f64> = p.psi.row_iter().map(|r| r.norm().ln()).collect();
            for n in p.center..op.sites() {
                if direct[n] > (1e-8f64).ln() {
                    assert!((direct[n] - p.log_block_norms[n]).abs() < 1e-5, "lambda {} site {n}", p.lambda);
                }
            }
        }
    }

    #[test]
    fn tail_goes_below_double_precision_floor() {
        let model = PotentialModel::schrodinger(1, SiteLaw::UniformInterval { lo: -4.0, hi: 4.0 }).unwrap();
        let pot = sample_potential(&model, 400, &RngStream::new(41, 0)).unwrap();
        let op = assemble_truncation(&pot, 400).unwrap();
        let pairs = eigenpairs_in_window_with(&op, (-1.0, 1.0), SolverMethod::Banded).unwrap();
        let deepest = pairs.iter().map(|p| p.log_block_norms.last().copied().unwrap()).fold(0.0, f64::min);
        assert!(deepest < (1e-40f64).ln(), "deepest = {deepest}");
    }

    #[test]
    fn synthetic_exponential_rate() {
        let psi = DMatrix::from_fn(200, 2, |n, a| (-0.5 * n as f64).exp() * [0.6, 0.8][a]);
        let fit = fit_decay_rate(&EigenPair::from_blocks(0.0, psi), &FitPolicy::default()).unwrap();
        assert!((fit.rate - 0.5).abs() < 1e-12);
        assert!(fit.r_squared > 0.999_999);
    }

    #[test]
    fn synthetic_modulated_rate() {
        let psi = DMatrix::from_fn(200, 1, |n, _| (-0.5 * n as f64).exp() * (2.0 + if n % 2 == 0 { 1.0 } else { -1.0 }));
        let pair = EigenPair::from_blocks(0.0, psi);
        let fit = fit_decay_rate(&pair, &FitPolicy::default()).unwrap();
        assert!((fit.rate - 0.5).abs() < 1e-2);
        let robust = fit_decay_rate(&pair, &FitPolicy { robust: true, ..FitPolicy::default() }).unwrap();
        assert!((robust.rate - 0.5).abs() < 1e-2);
    }

    #[test]
    fn fit_skips() {
        let psi = DMatrix::from_fn(200, 1, |n, _| (-0.5 * (n as f64 - 150.0).abs()).exp());
        assert!(matches!(
            fit_decay_rate(&EigenPair::from_blocks(0.0, psi), &FitPolicy::default()),
            Err(FitSkip::NotLeftLocalized { .. })
        ));
        let psi = DMatrix::from_fn(30, 1, |n, _| (-0.5 * n as f64).exp());
        assert!(matches!(
            fit_decay_rate(&EigenPair::from_blocks(0.0, psi), &FitPolicy::default()),
            Err(FitSkip::WindowTooShort { .. })
        ));
    }

    #[test]
    fn left_normalization() {
        let psi = DMatrix::from_fn(50, 1, |n, _| (-0.1 * n as f64).exp() * 3.0);
        let p = EigenPair::from_blocks(0.0, psi).left_normalized().unwrap();
        assert!((p.psi[(0, 0)] - 1.0).abs() < 1e-15 && p.log_block_norms[0].abs() < 1e-15);
        let psi = DMatrix::from_fn(50, 1, |n, _| if n == 0 { 0.0 } else { 1.0 });
        assert!(EigenPair::from_blocks(0.0, psi).left_normalized().is_none());
    }

    #[test]
    fn fast_scan_free_hyperbolic() {
        // V = 0, W = 1: at λ = 3 the restricted product grows like ρ^n, ρ = (3 + √5)/2
        let pot = constant_potential(DMatrix::zeros(1, 1), 10_000);
        let rep = fast_scan(&pot, 3.0, 0.01, 10_000, 11).unwrap();
        let center = rep.rates[5];
        assert!((rep.lambdas[5] - 3.0).abs() < 1e-15);
        assert!((center - (1.5f64).acosh()).abs() < 1e-3);
        for (l, r) in rep.lambdas.iter().zip(&rep.rates) {
            assert!((r - (l / 2.0).acosh()).abs() < 1e-3);
        }
    }

    #[test]
    fn fast_scan_elliptic_is_small() {
        let pot = constant_potential(DMatrix::zeros(1, 1), 200);
        let rep = fast_scan(&pot, 0.0, 0.01, 200, 21).unwrap();
        assert!(rep.global_min.abs() < 0.05);
    }

    #[test]
    fn nested_grids_are_monotone() {
        let pot = random_potential(2, 300, 51);
        let coarse = fast_scan(&pot, 0.3, 0.05, 300, 7).unwrap();
        let fine = fast_scan(&pot, 0.3, 0.05, 300, 21).unwrap();
        for (i, l) in coarse.lambdas.iter().enumerate() {
            assert!((fine.lambdas[3 * i + 1] - l).abs() < 1e-14);
        }
        assert!(fine.global_min <= coarse.global_min);
    }

    #[test]
    fn fast_scan_matches_dense_product() {
        let pot = random_potential(2, 40, 61);
        let rep = fast_scan(&pot, 0.0, 0.5, 40, 5).unwrap();
        for (l, r) in rep.lambdas.iter().zip(&rep.rates) {
            let mut m = DMatrix::<f64>::zeros(4, 2);
            m[(0, 0)] = 1.0;
            m[(1, 1)] = 1.0;
            for v in pot.sites() {
                let top = m.rows(0, 2).clone_owned();
                let bottom = m.rows(2, 2).clone_owned();
                let new_top = &top * *l - v * &top - bottom;
                m.rows_mut(0, 2).copy_from(&new_top);
                m.rows_mut(2, 2).copy_from(&top);
            }
            let s_min = m.singular_values().min();
            assert!((r - s_min.ln() / 40.0).abs() < 1e-8, "{r} vs {}", s_min.ln() / 40.0);
        }
    }

    #[test]
    fn lipschitz_slack_is_logarithmic() {
        let pot = constant_potential(DMatrix::zeros(2, 2), 100);
        let mut rep = fast_scan(&pot, 0.0, 0.1, 100, 10).unwrap();
        rep.attach_lipschitz_slack(0.5, 0.01);
        let expected = 100f64.ln() + 100.0 * 0.54 + 0.02f64.ln();
        assert!((rep.log_lipschitz_slack.unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn truncation_contracts() {
        let pot = random_potential(1, 10, 1);
        assert!(assemble_truncation(&pot, 1).is_err());
        assert!(assemble_truncation(&pot, 11).is_err());
        assert!(fast_scan(&pot, 0.0, 0.0, 5, 3).is_err());
    }
}
