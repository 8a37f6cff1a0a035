//! The transfer-matrix cocycle `Φ_n(λ) = T_{n−1}(λ) ⋯ T_0(λ)`.
//!
//! Products are never formed explicitly. [`CocycleState`] keeps the singular
//! value decomposition `U · diag(exp σ) · Vᵀ` with the log singular values `σ`
//! stored directly, and each step re-factors `T · U · diag(exp σ)` with the
//! graded Jacobi SVD from [`crate::linalg`]. This yields exact finite-`n`
//! singular values (not QR diagonal surrogates) at every step, for products of
//! any length.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{contract, Error, Result};
use crate::linalg::{graded_svd, reorthonormalize_rows};
use crate::model::{validate_richness, Potential, PotentialModel};
use crate::rng::RngStream;

/// Steps between re-orthonormalizations of the accumulated right frame.
const RIGHT_FRAME_REFRESH: usize = 32;

/// The symplectic rotation `J = [[0, −I], [I, 0]]` of size `2W`.
pub fn symplectic_form(width: usize) -> DMatrix<f64> {
    let mut j = DMatrix::zeros(2 * width, 2 * width);
    for a in 0..width {
        j[(a, width + a)] = -1.0;
        j[(width + a, a)] = 1.0;
    }
    j
}

/// `max |MᵀJM − J|` entrywise.
pub fn symplectic_defect(m: &DMatrix<f64>) -> f64 {
    let j = symplectic_form(m.nrows() / 2);
    (m.transpose() * &j * m - j).amax()
}

/// One step `T(λ) = [[λ − V, −I], [I, 0]]` of the cocycle.
#[derive(Clone, Debug, PartialEq)]
pub struct TransferMatrix(DMatrix<f64>);

impl TransferMatrix {
    /// Wraps an arbitrary `2W×2W` symplectic matrix.
    pub fn from_matrix(m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() || m.nrows() % 2 != 0 || m.nrows() == 0 {
            return Err(contract(format!("transfer matrix must be 2W x 2W, got {:?}", m.shape())));
        }
        let defect = symplectic_defect(&m);
        if defect > 1e-12 * m.amax().max(1.0).powi(2) {
            return Err(contract(format!("matrix is not symplectic (defect {defect:e})")));
        }
        Ok(Self(m))
    }

    pub fn width(&self) -> usize {
        self.0.nrows() / 2
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }
}

pub fn transfer_matrix(lambda: f64, v: &DMatrix<f64>) -> Result<TransferMatrix> {
    let w = v.nrows();
    if v.ncols() != w || w == 0 {
        return Err(contract(format!("potential block must be square, got {:?}", v.shape())));
    }
    if v != &v.transpose() {
        return Err(contract("potential block is not symmetric"));
    }
    let mut t = DMatrix::zeros(2 * w, 2 * w);
    for a in 0..w {
        for b in 0..w {
            t[(a, b)] = -v[(a, b)];
        }
        t[(a, a)] += lambda;
        t[(a, w + a)] = -1.0;
        t[(w + a, a)] = 1.0;
    }
    Ok(TransferMatrix(t))
}

/// Factored product `Φ · P = U · diag(exp σ) · Vᵀ`.
///
/// `P` is either the identity (the full cocycle, `k = 2W` columns) or the
/// embedding of the initial-condition space `F₀ = {(v, 0)}` (`k = W`).
#[derive(Clone, Debug)]
pub struct CocycleState {
    width: usize,
    left: DMatrix<f64>,
    log_scales: Vec<f64>,
    right_t: DMatrix<f64>,
    steps: usize,
}

impl CocycleState {
    /// `Φ_0 = I`.
    pub fn identity(width: usize) -> Self {
        let k = 2 * width;
        Self {
            width,
            left: DMatrix::identity(k, k),
            log_scales: vec![0.0; k],
            right_t: DMatrix::identity(k, k),
            steps: 0,
        }
    }

    /// `Φ_0` restricted to `F₀`, the solutions with `ψ(−1) = 0`.
    pub fn initial_conditions(width: usize) -> Self {
        Self {
            width,
            left: DMatrix::identity(2 * width, width),
            log_scales: vec![0.0; width],
            right_t: DMatrix::identity(width, width),
            steps: 0,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn left_frame(&self) -> &DMatrix<f64> {
        &self.left
    }

    pub fn right_frame(&self) -> &DMatrix<f64> {
        &self.right_t
    }

    /// Natural-log singular values, non-increasing.
    pub fn log_scales(&self) -> &[f64] {
        &self.log_scales
    }

    pub fn is_full(&self) -> bool {
        self.log_scales.len() == 2 * self.width
    }

    /// Left-multiplies the product by `t`.
    pub fn propagate(&mut self, t: &TransferMatrix) -> Result<()> {
        if t.width() != self.width {
            return Err(contract(format!("transfer matrix width {} vs state width {}", t.width(), self.width)));
        }
        let b = t.matrix() * &self.left;
        self.absorb(b)
    }

    /// Left-multiplies by `T(λ)` built from `v`, without materializing `T`.
    pub fn step(&mut self, lambda: f64, v: &DMatrix<f64>) -> Result<()> {
        let w = self.width;
        let k = self.log_scales.len();
        let top = self.left.rows(0, w);
        let bottom = self.left.rows(w, w);
        let mut b = DMatrix::zeros(2 * w, k);
        let mut new_top = top * lambda - v * top - bottom;
        b.rows_mut(0, w).copy_from(&new_top);
        // reuse allocation for the lower block
        new_top.copy_from(&top);
        b.rows_mut(w, w).copy_from(&new_top);
        self.absorb(b)
    }

    fn absorb(&mut self, b: DMatrix<f64>) -> Result<()> {
        let svd = graded_svd(&b, &self.log_scales)?;
        self.left = svd.left;
        self.log_scales = svd.log_singular;
        self.right_t = svd.right.transpose() * &self.right_t;
        self.steps += 1;
        if self.steps % RIGHT_FRAME_REFRESH == 0 {
            reorthonormalize_rows(&mut self.right_t);
        }
        Ok(())
    }

    /// `(1/n) · σ_j`, the finite-`n` Lyapunov rates.
    pub fn singular_log_spectrum(&self) -> Result<Vec<f64>> {
        if self.steps == 0 {
            return Err(contract("singular_log_spectrum needs at least one step"));
        }
        let n = self.steps as f64;
        Ok(self.log_scales.iter().map(|s| s / n).collect())
    }

    /// `U · diag(exp σ) · Vᵀ`; only meaningful while the scales fit in `f64`.
    pub fn reconstruct(&self) -> DMatrix<f64> {
        let sig = DVector::from_iterator(self.log_scales.len(), self.log_scales.iter().map(|s| s.exp()));
        &self.left * DMatrix::from_diagonal(&sig) * &self.right_t
    }

    /// `max_j |σ_j + σ_{2W+1−j}| / max(1, σ₁)` for the full cocycle.
    pub fn pairing_residual(&self) -> f64 {
        let k = self.log_scales.len();
        let worst = (0..k / 2)
            .map(|j| (self.log_scales[j] + self.log_scales[k - 1 - j]).abs())
            .fold(0.0, f64::max);
        worst / self.log_scales[0].abs().max(1.0)
    }
}

/// Log singular values of `Φ_n(λ)` for the first `n` sites of the realization.
pub fn log_spectrum_at(potential: &Potential, lambda: f64, n: usize) -> Result<Vec<f64>> {
    let mut state = CocycleState::identity(potential.width());
    run_prefix(&mut state, potential, lambda, n)?;
    Ok(state.log_scales().to_vec())
}

/// Log singular values of `Φ_n(λ)` restricted to `F₀`.
pub fn restricted_log_spectrum_at(potential: &Potential, lambda: f64, n: usize) -> Result<Vec<f64>> {
    let mut state = CocycleState::initial_conditions(potential.width());
    run_prefix(&mut state, potential, lambda, n)?;
    Ok(state.log_scales().to_vec())
}

fn run_prefix(state: &mut CocycleState, potential: &Potential, lambda: f64, n: usize) -> Result<()> {
    if n > potential.len() {
        return Err(contract(format!("need {n} sites, realization has {}", potential.len())));
    }
    for v in &potential.sites()[..n] {
        state.step(lambda, v)?;
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LyapunovEstimate {
    /// `γ̂_1 ≥ … ≥ γ̂_{2W}`.
    pub gammas: Vec<f64>,
    pub std_errors: Vec<f64>,
    pub n: usize,
    pub replicas: usize,
    pub lambda: f64,
    /// Per-replica `(1/n) log s_j`, in replica order.
    #[serde(skip)]
    pub per_replica: Vec<Vec<f64>>,
    pub warnings: Vec<String>,
}

impl LyapunovEstimate {
    /// The positive half `γ̂_1, …, γ̂_W`.
    pub fn positive(&self) -> &[f64] {
        &self.gammas[..self.gammas.len() / 2]
    }

    pub fn pairing_residual(&self) -> f64 {
        let k = self.gammas.len();
        (0..k / 2).map(|j| (self.gammas[j] + self.gammas[k - 1 - j]).abs()).fold(0.0, f64::max)
    }
}

/// Replica estimate of the Lyapunov spectrum at energy `lambda`.
///
/// Replica `r` samples its own realization from `stream.substream(r)`;
/// replicas run in parallel and are reduced in index order.
pub fn lyapunov_estimate(
    model: &PotentialModel,
    lambda: f64,
    n: usize,
    replicas: usize,
    stream: &RngStream,
) -> Result<LyapunovEstimate> {
    if n == 0 {
        return Err(contract("lyapunov_estimate needs n >= 1"));
    }
    if replicas < 2 {
        return Err(contract("lyapunov_estimate needs at least 2 replicas"));
    }
    let per_replica: Vec<Vec<f64>> = (0..replicas)
        .into_par_iter()
        .map(|r| {
            let mut rng = stream.substream(r as u64).rng();
            let mut state = CocycleState::identity(model.width());
            for _ in 0..n {
                let v = model.sample_one(&mut rng);
                state.step(lambda, &v).map_err(|e| match e {
                    Error::Numerical(msg) => Error::Numerical(format!(
                        "replica {r} (stream {}): {msg}",
                        stream.substream(r as u64).stream_id
                    )),
                    other => other,
                })?;
            }
            state.singular_log_spectrum()
        })
        .collect::<Result<_>>()?;

    let (gammas, std_errors) = mean_and_stderr(&per_replica);
    Ok(LyapunovEstimate {
        gammas,
        std_errors,
        n,
        replicas,
        lambda,
        per_replica,
        warnings: validate_richness(model).warnings(),
    })
}

/// Column means and standard errors of equal-length rows, summed in row order.
pub(crate) fn mean_and_stderr(rows: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let k = rows[0].len();
    let r = rows.len() as f64;
    let mut mean = vec![0.0; k];
    for row in rows {
        for (m, x) in mean.iter_mut().zip(row) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= r);
    let mut var = vec![0.0; k];
    for row in rows {
        for ((v, x), m) in var.iter_mut().zip(row).zip(&mean) {
            *v += (x - m) * (x - m);
        }
    }
    let se = var.iter().map(|v| (v / (r - 1.0)).sqrt() / r.sqrt()).collect();
    (mean, se)
}

/// Chebyshev nodes `λ₀ + r cos(π(α + ½)/(d + 1))`, `α = 0, …, d`.
pub fn chebyshev_nodes(center: f64, radius: f64, degree: usize) -> Vec<f64> {
    let m = (degree + 1) as f64;
    (0..=degree)
        .map(|a| center + radius * (std::f64::consts::PI * (a as f64 + 0.5) / m).cos())
        .collect()
}

/// Upper bound on the Lebesgue constant of `d + 1` Chebyshev nodes:
/// `1 + (2/π) log(d + 1)`. Every polynomial of degree `≤ d` satisfies
/// `max_{[−1,1]} |p| ≤ C · max_nodes |p|`.
pub fn bernstein_constant(degree: usize) -> f64 {
    1.0 + 2.0 / std::f64::consts::PI * ((degree + 1) as f64).ln()
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GridSupBound {
    pub nodes: Vec<f64>,
    /// `(1/n) Σ_{i≤j} log s_i(Φ_n(λ_α))` at each node.
    pub values: Vec<f64>,
    pub node_max: f64,
    pub bernstein_constant: f64,
    /// `(1/n) log C`.
    pub slack: f64,
    /// `node_max + slack`.
    pub bound: f64,
    /// `(1/n) log binom(2W, j)`: converts a bound on matrix elements of the
    /// `j`-th exterior power into a bound on its operator norm.
    pub entry_slack: f64,
    /// `bound + entry_slack`.
    pub certified_bound: f64,
}

/// Upper bound for `sup_{|λ−λ₀|<r} (1/n) Σ_{i≤j} log s_i(Φ_n(λ))` from the
/// values at the `Wn + 1` Chebyshev nodes of the window.
///
/// Matrix elements of `Φ_n(λ)^{∧j}` are polynomials of degree `≤ jn ≤ Wn` in
/// `λ`, so their sup over the window is at most the Lebesgue constant times
/// their max over the nodes.
pub fn grid_sup_log_norm(potential: &Potential, lambda0: f64, radius: f64, n: usize, j: usize) -> Result<GridSupBound> {
    let w = potential.width();
    if j == 0 || j > w {
        return Err(contract(format!("block index j = {j} outside 1..={w}")));
    }
    if radius <= 0.0 || !radius.is_finite() {
        return Err(contract("window radius must be positive"));
    }
    if n == 0 {
        return Err(contract("grid_sup_log_norm needs n >= 1"));
    }
    let degree = w * n;
    let nodes = chebyshev_nodes(lambda0, radius, degree);
    let values = partial_sums_at(potential, &nodes, n, j)?;
    let node_max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let c = bernstein_constant(degree);
    let slack = c.ln() / n as f64;
    let entry_slack = binomial(2 * w, j).ln() / n as f64;
    Ok(GridSupBound {
        nodes,
        values,
        node_max,
        bernstein_constant: c,
        slack,
        bound: node_max + slack,
        entry_slack,
        certified_bound: node_max + slack + entry_slack,
    })
}

/// `(1/n) Σ_{i≤j} log s_i(Φ_n(λ))` at each energy, in parallel.
pub fn partial_sums_at(potential: &Potential, lambdas: &[f64], n: usize, j: usize) -> Result<Vec<f64>> {
    lambdas
        .par_iter()
        .map(|&l| {
            let s = log_spectrum_at(potential, l, n)?;
            Ok(s[..j].iter().sum::<f64>() / n as f64)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DeviationStat {
    pub lambda: f64,
    pub n: usize,
    /// `max_j per_j[j]`.
    pub dev: f64,
    /// `|(1/n) log s_j − γ_ref_j|`, `j = 1, …, W`.
    pub per_j: Vec<f64>,
}

impl DeviationStat {
    fn from_rates(lambda: f64, n: usize, rates: &[f64], gamma_ref: &[f64]) -> Self {
        let per_j: Vec<f64> = rates.iter().zip(gamma_ref).map(|(x, g)| (x - g).abs()).collect();
        let dev = per_j.iter().copied().fold(0.0, f64::max);
        Self { lambda, n, dev, per_j }
    }
}

/// `Dev_n(λ) = max_{j≤W} |(1/n) log s_j(Φ_n(λ)) − γ_ref_j|` on one realization.
pub fn deviation_stat(potential: &Potential, lambda: f64, n: usize, gamma_ref: &[f64]) -> Result<DeviationStat> {
    let w = potential.width();
    if gamma_ref.len() != w {
        return Err(contract(format!("gamma_ref has {} entries, expected {w}", gamma_ref.len())));
    }
    if n == 0 {
        return Err(contract("deviation_stat needs n >= 1"));
    }
    let s = log_spectrum_at(potential, lambda, n)?;
    let rates: Vec<f64> = s[..w].iter().map(|x| x / n as f64).collect();
    Ok(DeviationStat::from_rates(lambda, n, &rates, gamma_ref))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MinDevScan {
    pub lambdas: Vec<f64>,
    pub n: usize,
    pub dev_n: Vec<f64>,
    pub dev_n2: Vec<f64>,
    /// `min(Dev_n, Dev_{n²})` per grid energy.
    pub min_dev: Vec<f64>,
    pub grid_sup: f64,
}

/// Uniform grid of `points` energies including both endpoints.
pub fn uniform_grid(a: f64, b: f64, points: usize) -> Vec<f64> {
    (0..points).map(|i| a + (b - a) * i as f64 / (points - 1) as f64).collect()
}

/// Grid sup of `min(Dev_n(λ), Dev_{n²}(λ))` over `[a, b]` on one realization
/// of length `n²` drawn from `stream`.
pub fn min_dev_scan(
    model: &PotentialModel,
    interval: (f64, f64),
    n: usize,
    grid_points: usize,
    gamma_ref_table: &[Vec<f64>],
    stream: &RngStream,
) -> Result<MinDevScan> {
    let (a, b) = interval;
    if grid_points < 2 {
        return Err(contract("min_dev_scan needs at least 2 grid points"));
    }
    if !(a < b) {
        return Err(contract("min_dev_scan needs a < b"));
    }
    if gamma_ref_table.len() != grid_points {
        return Err(contract(format!("{} reference rows for {grid_points} grid points", gamma_ref_table.len())));
    }
    let w = model.width();
    if gamma_ref_table.iter().any(|g| g.len() != w) {
        return Err(contract(format!("every reference row needs {w} entries")));
    }
    if n == 0 {
        return Err(contract("min_dev_scan needs n >= 1"));
    }
    let long = n * n;
    let potential = crate::model::sample_potential(model, long, stream)?;
    let lambdas = uniform_grid(a, b, grid_points);
    let pairs: Vec<(DeviationStat, DeviationStat)> = lambdas
        .par_iter()
        .zip(gamma_ref_table.par_iter())
        .map(|(&l, gref)| {
            let mut state = CocycleState::identity(w);
            let mut short = None;
            for (step, v) in potential.sites().iter().enumerate() {
                state.step(l, v)?;
                if step + 1 == n {
                    short = Some(state.log_scales()[..w].iter().map(|x| x / n as f64).collect::<Vec<_>>());
                }
            }
            let long_rates: Vec<f64> = state.log_scales()[..w].iter().map(|x| x / long as f64).collect();
            let short = short.expect("n <= n^2");
            Ok((DeviationStat::from_rates(l, n, &short, gref), DeviationStat::from_rates(l, long, &long_rates, gref)))
        })
        .collect::<Result<_>>()?;
    let dev_n: Vec<f64> = pairs.iter().map(|p| p.0.dev).collect();
    let dev_n2: Vec<f64> = pairs.iter().map(|p| p.1.dev).collect();
    let min_dev: Vec<f64> = dev_n.iter().zip(&dev_n2).map(|(x, y)| x.min(*y)).collect();
    let grid_sup = min_dev.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(MinDevScan { lambdas, n, dev_n, dev_n2, min_dev, grid_sup })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{sample_potential, SiteLaw};

    fn golden_log() -> f64 {
        ((3.0 + 5f64.sqrt()) / 2.0).ln()
    }

    fn disordered(w: usize) -> PotentialModel {
        PotentialModel::schrodinger(w, SiteLaw::UniformInterval { lo: -1.0, hi: 1.0 }).unwrap()
    }

    #[test]
    fn transfer_matrix_direct_substitution() {
        let t = transfer_matrix(0.0, &DMatrix::zeros(1, 1)).unwrap();
        assert_eq!(t.matrix(), &DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0]));
        let t = transfer_matrix(3.0, &DMatrix::zeros(1, 1)).unwrap();
        assert_eq!(t.matrix(), &DMatrix::from_row_slice(2, 2, &[3.0, -1.0, 1.0, 0.0]));
    }

    #[test]
    fn transfer_matrix_is_symplectic() {
        let p = sample_potential(&disordered(3), 20, &RngStream::new(2, 0)).unwrap();
        for (i, v) in p.sites().iter().enumerate() {
            let t = transfer_matrix(0.3 * i as f64 - 2.0, v).unwrap();
            assert!(symplectic_defect(t.matrix()) <= 1e-12);
        }
    }

    #[test]
    fn non_symmetric_block_is_rejected() {
        let v = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.5, 0.0]);
        assert!(matches!(transfer_matrix(0.0, &v), Err(Error::Contract(_))));
        assert!(TransferMatrix::from_matrix(DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 2.0])).is_err());
    }

    #[test]
    fn single_factor_reconstructs() {
        let v = DMatrix::from_row_slice(2, 2, &[0.4, 1.0, 1.0, -0.7]);
        let t = transfer_matrix(0.9, &v).unwrap();
        let mut state = CocycleState::identity(2);
        state.propagate(&t).unwrap();
        assert!((state.reconstruct() - t.matrix()).amax() < 1e-13);
        let mut via_step = CocycleState::identity(2);
        via_step.step(0.9, &v).unwrap();
        assert!((via_step.reconstruct() - t.matrix()).amax() < 1e-13);
    }

    #[test]
    fn identity_factor_gives_zero_rates() {
        let mut state = CocycleState::identity(2);
        assert!(state.singular_log_spectrum().is_err());
        state.propagate(&TransferMatrix::from_matrix(DMatrix::identity(4, 4)).unwrap()).unwrap();
        assert!(state.singular_log_spectrum().unwrap().iter().all(|x| x.abs() < 1e-15));
    }

    #[test]
    fn short_products_match_direct_multiplication() {
        for w in [1, 2, 3] {
            let p = sample_potential(&disordered(w), 20, &RngStream::new(5, w as u64)).unwrap();
            let mut state = CocycleState::identity(w);
            let mut direct = DMatrix::<f64>::identity(2 * w, 2 * w);
            for (i, v) in p.sites().iter().enumerate() {
                let t = transfer_matrix(0.25, v).unwrap();
                direct = t.matrix() * direct;
                state.propagate(&t).unwrap();
                let rel = (state.reconstruct() - &direct).amax() / direct.amax();
                assert!(rel < 1e-10, "w={w} step={i} rel={rel}");
                let phi = state.reconstruct();
                assert!(symplectic_defect(&phi) / phi.norm_squared() < 1e-8);
            }
            assert!(crate::linalg::orthogonality_defect(state.left_frame()) < 1e-12);
            assert!(crate::linalg::orthogonality_defect(&state.right_frame().transpose()) < 1e-12);
        }
    }

    #[test]
    fn constant_hyperbolic_matrix_rate() {
        let v = DMatrix::zeros(1, 1);
        let mut state = CocycleState::identity(1);
        for _ in 0..10_000 {
            state.step(3.0, &v).unwrap();
        }
        let rates = state.singular_log_spectrum().unwrap();
        // finite-n value from the closed form s_1(T^n) = ρ^n · 3/√5 (1 + O(ρ^{-2n}))
        let exact = golden_log() + (3.0 / 5f64.sqrt()).ln() / 10_000.0;
        assert!((rates[0] - exact).abs() < 1e-12, "{} vs {exact}", rates[0]);
        assert!((rates[0] + rates[1]).abs() < 1e-12);
    }

    #[test]
    fn pairing_holds_over_long_runs() {
        for w in [2, 3] {
            let model = disordered(w);
            let mut rng = RngStream::new(17, w as u64).rng();
            let mut state = CocycleState::identity(w);
            for _ in 0..5_000 {
                state.step(0.1, &model.sample_one(&mut rng)).unwrap();
                assert!(state.pairing_residual() < 1e-8);
                assert!(state.log_scales().windows(2).all(|x| x[0] >= x[1]));
            }
        }
    }

    #[test]
    fn exterior_sums_are_submultiplicative() {
        // Σ_{i≤j} log s_i(AB) ≤ Σ_{i≤j} log s_i(A) + Σ_{i≤j} log s_i(B) exactly.
        let model = disordered(2);
        for seed in 0..20 {
            let p = sample_potential(&model, 300, &RngStream::new(seed, 9)).unwrap();
            let whole = log_spectrum_at(&p, 0.2, 300).unwrap();
            let first = log_spectrum_at(&p, 0.2, 120).unwrap();
            let tail = Potential::from_sites(2, p.sites()[120..].to_vec()).unwrap();
            let second = log_spectrum_at(&tail, 0.2, 180).unwrap();
            for j in 1..=4 {
                let lhs: f64 = whole[..j].iter().sum();
                let rhs: f64 = first[..j].iter().sum::<f64>() + second[..j].iter().sum::<f64>();
                assert!(lhs <= rhs + 1e-9 * rhs.abs().max(1.0), "seed {seed} j {j}: {lhs} > {rhs}");
            }
        }
    }

    #[test]
    fn deterministic_estimate_has_zero_variance() {
        let est = lyapunov_estimate(&PotentialModel::zero(1), 3.0, 2_000, 4, &RngStream::new(0, 0)).unwrap();
        assert!((est.gammas[0] - golden_log()).abs() < 1e-3);
        assert!(est.std_errors.iter().all(|&s| s == 0.0));
        assert!(!est.warnings.is_empty());
    }

    #[test]
    fn estimate_pairing_and_reproducibility() {
        let model = disordered(2);
        let a = lyapunov_estimate(&model, 0.0, 500, 6, &RngStream::new(4, 0)).unwrap();
        let b = lyapunov_estimate(&model, 0.0, 500, 6, &RngStream::new(4, 0)).unwrap();
        assert_eq!(a, b);
        assert!(a.pairing_residual() < 1e-8);
        assert!(a.gammas.windows(2).all(|x| x[0] >= x[1]));
        assert!(lyapunov_estimate(&model, 0.0, 500, 1, &RngStream::new(4, 0)).is_err());
    }

    #[test]
    fn estimate_is_independent_of_thread_count() {
        let model = disordered(2);
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| lyapunov_estimate(&model, 0.5, 300, 8, &RngStream::new(8, 1)).unwrap())
        };
        assert_eq!(run(1), run(4));
    }

    #[test]
    fn chebyshev_nodes_lie_in_window() {
        let nodes = chebyshev_nodes(3.0, 0.1, 50);
        assert_eq!(nodes.len(), 51);
        assert!(nodes.iter().all(|x| (x - 3.0).abs() < 0.1));
        assert!(bernstein_constant(0) == 1.0);
    }

    #[test]
    fn grid_sup_dominates_dense_grid_free_case() {
        let p = sample_potential(&PotentialModel::zero(1), 50, &RngStream::new(0, 0)).unwrap();
        let g = grid_sup_log_norm(&p, 3.0, 0.1, 50, 1).unwrap();
        let dense: Vec<f64> = uniform_grid(2.9, 3.1, 10_000);
        let dense_vals = partial_sums_at(&p, &dense, 50, 1).unwrap();
        let dense_max = dense_vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        assert!(g.bound >= dense_max);
        assert!(dense_max - g.node_max <= g.slack);
    }

    #[test]
    fn grid_sup_single_step() {
        let p = sample_potential(&disordered(1), 1, &RngStream::new(1, 0)).unwrap();
        let g = grid_sup_log_norm(&p, 0.0, 0.5, 1, 1).unwrap();
        assert_eq!(g.nodes.len(), 2);
        let dense_vals = partial_sums_at(&p, &uniform_grid(-0.5, 0.5, 1001), 1, 1).unwrap();
        let dense_max = dense_vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        assert!(g.bound >= dense_max);
        assert!(grid_sup_log_norm(&p, 0.0, 0.5, 1, 2).is_err());
        assert!(grid_sup_log_norm(&p, 0.0, -0.5, 1, 1).is_err());
    }

    #[test]
    fn deviation_self_reference_is_zero() {
        let p = sample_potential(&disordered(2), 200, &RngStream::new(3, 3)).unwrap();
        let s = log_spectrum_at(&p, 0.4, 200).unwrap();
        let own: Vec<f64> = s[..2].iter().map(|x| x / 200.0).collect();
        let d = deviation_stat(&p, 0.4, 200, &own).unwrap();
        assert_eq!(d.dev, 0.0);
        assert!(deviation_stat(&p, 0.4, 200, &[0.1]).is_err());
    }

    #[test]
    fn deviation_deterministic_decays() {
        let p = sample_potential(&PotentialModel::zero(1), 1000, &RngStream::new(0, 0)).unwrap();
        let d = deviation_stat(&p, 3.0, 1000, &[golden_log()]).unwrap();
        assert!(d.dev < 1e-3);
        assert_eq!(d.dev, d.per_j[0]);
    }

    #[test]
    fn min_dev_scan_deterministic_and_degenerate() {
        let grid = uniform_grid(2.9, 3.1, 5);
        let table: Vec<Vec<f64>> = grid.iter().map(|l: &f64| vec![(l / 2.0).acosh()]).collect();
        let scan = min_dev_scan(&PotentialModel::zero(1), (2.9, 3.1), 100, 5, &table, &RngStream::new(0, 0)).unwrap();
        assert!(scan.grid_sup < 1e-2);
        let one = min_dev_scan(&disordered(2), (0.0, 0.5), 1, 2, &[vec![0.1, 0.05], vec![0.1, 0.05]], &RngStream::new(1, 1))
            .unwrap();
        assert!(one.grid_sup.is_finite());
        assert_eq!(one.dev_n, one.dev_n2);
    }
}
