//! Monte Carlo bench for the probabilistic geometry behind the decay bounds:
//! uniform points on spheres, Haar matrices on `Sp(2W, ℝ) ∩ SO(2W)`, the law
//! of a projected uniform point, and the probability that a random frame
//! contains a vector contracted by a diagonal matrix.
//!
//! Sampling is split into fixed-size batches, batch `b` drawing from
//! `stream.substream(b)`, so every report is independent of thread count.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;
use statrs::function::beta::beta_reg;
use statrs::function::gamma::ln_gamma;

use crate::error::{contract, Result};
use crate::rng::RngStream;

const BATCH: usize = 10_000;

/// Asymptotic Kolmogorov–Smirnov critical value `c(α)/√n` at `α = 0.01`.
pub fn ks_critical_1pct(samples: usize) -> f64 {
    1.627_6 / (samples as f64).sqrt()
}

/// Uniform point on `S(ℝ^ℓ)` (normalized standard Gaussian).
pub fn sample_sphere<R: Rng + ?Sized>(ell: usize, rng: &mut R) -> DVector<f64> {
    assert!(ell >= 1, "sphere dimension must be at least 1");
    loop {
        let g = DVector::from_fn(ell, |_, _| -> f64 { StandardNormal.sample(rng) });
        let norm = g.norm();
        if norm > 0.0 {
            return g / norm;
        }
    }
}

/// Haar-distributed element of `SO(ℓ)`: QR of a Gaussian matrix with the
/// signs of `R`'s diagonal moved into `Q`, then the first column flipped if
/// needed to land in the identity component.
pub fn sample_haar_orthogonal<R: Rng + ?Sized>(ell: usize, rng: &mut R) -> DMatrix<f64> {
    let g = DMatrix::from_fn(ell, ell, |_, _| -> f64 { StandardNormal.sample(rng) });
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..ell {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    if q.determinant() < 0.0 {
        q.column_mut(0).neg_mut();
    }
    q
}

/// Haar-distributed element of `Sp(2W, ℝ) ∩ SO(2W)`.
///
/// The compact symplectic group is the image of `U(W)` under
/// `X + iY ↦ [[X, −Y], [Y, X]]`; a Haar unitary comes from the QR of a complex
/// Ginibre matrix with the phases of `R`'s diagonal moved into `Q`.
pub fn sample_haar_symplectic_orthogonal<R: Rng + ?Sized>(width: usize, rng: &mut R) -> DMatrix<f64> {
    assert!(width >= 1, "half-dimension must be at least 1");
    let z = DMatrix::from_fn(width, width, |_, _| {
        let re: f64 = StandardNormal.sample(rng);
        let im: f64 = StandardNormal.sample(rng);
        Complex::new(re, im)
    });
    let qr = z.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..width {
        let d = r[(j, j)];
        let phase = if d.norm() > 0.0 { d / d.norm() } else { Complex::new(1.0, 0.0) };
        for i in 0..width {
            q[(i, j)] *= phase;
        }
    }
    let mut m = DMatrix::zeros(2 * width, 2 * width);
    for i in 0..width {
        for j in 0..width {
            let x = q[(i, j)].re;
            let y = q[(i, j)].im;
            m[(i, j)] = x;
            m[(i, width + j)] = -y;
            m[(width + i, j)] = y;
            m[(width + i, width + j)] = x;
        }
    }
    m
}

/// Runs `per_sample` over `samples` draws in batches, returning outputs in sample order.
fn batched<T: Send>(samples: usize, stream: &RngStream, per_sample: impl Fn(&mut rand_chacha::ChaCha8Rng) -> T + Sync) -> Vec<T> {
    let batches = samples.div_ceil(BATCH);
    let chunks: Vec<Vec<T>> = (0..batches)
        .into_par_iter()
        .map(|b| {
            let mut rng = stream.substream(b as u64).rng();
            let count = BATCH.min(samples - b * BATCH);
            (0..count).map(|_| per_sample(&mut rng)).collect()
        })
        .collect();
    chunks.into_iter().flatten().collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DensityForm {
    /// `(1 − ‖v‖)₊^e`, the stated form without the square.
    Uncorrected,
    /// `(1 − ‖v‖²)₊^e`, the classical projection density.
    Corrected,
}

/// Candidate density `C · (1 − ‖v‖^p)₊^e` of the projection of a uniform point
/// on `S(ℝ^ℓ)` onto a `k`-dimensional subspace, `e = (ℓ − k)/2 − 1`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ProjectionDensitySpec {
    pub ell: usize,
    pub k: usize,
    pub form: DensityForm,
}

impl ProjectionDensitySpec {
    pub fn new(ell: usize, k: usize, form: DensityForm) -> Result<Self> {
        if k == 0 || k >= ell {
            return Err(contract(format!("projection needs 1 <= k <= ell - 1, got ell = {ell}, k = {k}")));
        }
        Ok(Self { ell, k, form })
    }

    pub fn exponent(&self) -> f64 {
        (self.ell - self.k) as f64 / 2.0 - 1.0
    }

    fn sphere_area(&self) -> f64 {
        // |S^{k−1}| = 2π^{k/2} / Γ(k/2)
        let h = self.k as f64 / 2.0;
        2.0 * std::f64::consts::PI.powf(h) / ln_gamma(h).exp()
    }

    /// `C_{ℓ,k}` making the density integrate to one over the unit `k`-ball.
    pub fn normalization(&self) -> f64 {
        let e1 = self.exponent() + 1.0;
        let kf = self.k as f64;
        let radial = match self.form {
            // ∫₀¹ r^{k−1}(1 − r)^e dr = B(k, e + 1)
            DensityForm::Uncorrected => ln_beta(kf, e1).exp(),
            // ∫₀¹ r^{k−1}(1 − r²)^e dr = B(k/2, e + 1)/2
            DensityForm::Corrected => 0.5 * ln_beta(kf / 2.0, e1).exp(),
        };
        1.0 / (self.sphere_area() * radial)
    }

    /// Normalized density at a point with `‖v‖ = r`.
    pub fn density(&self, r: f64) -> f64 {
        if r >= 1.0 {
            return 0.0;
        }
        let base = match self.form {
            DensityForm::Uncorrected => 1.0 - r,
            DensityForm::Corrected => 1.0 - r * r,
        };
        self.normalization() * base.powf(self.exponent())
    }

    /// Law of `‖P_F u‖` implied by the density.
    pub fn radial_cdf(&self, r: f64) -> f64 {
        if r <= 0.0 {
            return 0.0;
        }
        if r >= 1.0 {
            return 1.0;
        }
        let e1 = self.exponent() + 1.0;
        let kf = self.k as f64;
        match self.form {
            DensityForm::Uncorrected => beta_reg(kf, e1, r),
            DensityForm::Corrected => beta_reg(kf / 2.0, e1, r * r),
        }
    }
}

fn ln_beta(a: f64, b: f64) -> f64 {
    ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b)
}

/// One-sample Kolmogorov–Smirnov distance of `values` against `cdf`.
pub fn ks_statistic(values: &mut [f64], cdf: impl Fn(f64) -> f64) -> f64 {
    values.sort_by(|a, b| a.total_cmp(b));
    let n = values.len() as f64;
    values
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).max((i + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ArchimedesReport {
    pub ell: usize,
    pub k: usize,
    pub samples: usize,
    pub exponent: f64,
    pub ks_uncorrected: f64,
    pub ks_corrected: f64,
    pub critical_1pct: f64,
    pub uncorrected_passes: bool,
    pub corrected_passes: bool,
}

/// Compares the empirical law of `‖P_F u‖` (first `k` coordinates of a uniform
/// point on `S(ℝ^ℓ)`) with both density forms.
pub fn archimedes_test(ell: usize, k: usize, samples: usize, stream: &RngStream) -> Result<ArchimedesReport> {
    let uncorrected = ProjectionDensitySpec::new(ell, k, DensityForm::Uncorrected)?;
    let corrected = ProjectionDensitySpec::new(ell, k, DensityForm::Corrected)?;
    if samples < 10_000 {
        return Err(contract("archimedes_test needs at least 10^4 samples"));
    }
    let mut radii = batched(samples, stream, |rng| {
        let u = sample_sphere(ell, rng);
        u.rows(0, k).norm()
    });
    let ks_uncorrected = ks_statistic(&mut radii, |r| uncorrected.radial_cdf(r));
    let ks_corrected = ks_statistic(&mut radii, |r| corrected.radial_cdf(r));
    let critical = ks_critical_1pct(samples);
    Ok(ArchimedesReport {
        ell,
        k,
        samples,
        exponent: uncorrected.exponent(),
        ks_uncorrected,
        ks_corrected,
        critical_1pct: critical,
        uncorrected_passes: ks_uncorrected < critical,
        corrected_passes: ks_corrected < critical,
    })
}

/// Diagonal log scales `a₁ ≥ … ≥ a_ℓ`, frame dimension `k` and threshold `a`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GeomLemmaCase {
    pub a_values: Vec<f64>,
    pub k: usize,
    pub a: f64,
}

impl GeomLemmaCase {
    pub fn new(a_values: Vec<f64>, k: usize, a: f64) -> Result<Self> {
        let ell = a_values.len();
        if ell == 0 || k == 0 || k > ell {
            return Err(contract(format!("need 1 <= k <= ell, got k = {k}, ell = {ell}")));
        }
        if a_values.windows(2).any(|w| w[0] < w[1]) {
            return Err(contract("a_values must be non-increasing"));
        }
        if a > a_values[0] || a < a_values[ell - 1] {
            return Err(contract("threshold must satisfy a_1 >= a >= a_ell"));
        }
        Ok(Self { a_values, k, a })
    }

    pub fn ell(&self) -> usize {
        self.a_values.len()
    }

    /// `Σ_{j=k}^{ℓ} (a_j − a)₊`.
    pub fn exponent_sum(&self) -> f64 {
        self.a_values[self.k - 1..].iter().map(|aj| (aj - self.a).max(0.0)).sum()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GeomLemmaResult {
    pub case: GeomLemmaCase,
    pub samples: usize,
    pub hits: usize,
    pub empirical_p: f64,
    pub exponent_sum: f64,
}

/// Slack on the contraction test, so that `k = ℓ, a = a_ℓ` (where the minimum
/// equals `e^a` exactly) is not lost to rounding.
const HIT_TOLERANCE: f64 = 1e-12;

/// Empirical `P{∃u ∈ S(F): ‖D U u‖ ≤ e^a}` for `U` Haar on `SO(ℓ)` and
/// `F = span(e₁, …, e_k)`. The minimum over the sphere of `F` is the smallest
/// singular value of `D · U|_F`.
pub fn geom_lemma_probability(case: &GeomLemmaCase, samples: usize, stream: &RngStream) -> Result<GeomLemmaResult> {
    if samples < 1_000 {
        return Err(contract("geom_lemma_probability needs at least 10^3 samples"));
    }
    let ell = case.ell();
    let scales = DVector::from_iterator(ell, case.a_values.iter().map(|a| a.exp()));
    let hits_per_sample = batched(samples, stream, |rng| {
        let u = sample_haar_orthogonal(ell, rng);
        let mut frame = u.columns(0, case.k).clone_owned();
        for (i, mut row) in frame.row_iter_mut().enumerate() {
            row *= scales[i];
        }
        let s_min = frame.singular_values().min();
        s_min.ln() <= case.a + HIT_TOLERANCE
    });
    let hits = hits_per_sample.iter().filter(|&&h| h).count();
    Ok(GeomLemmaResult {
        case: case.clone(),
        samples,
        hits,
        empirical_p: hits as f64 / samples as f64,
        exponent_sum: case.exponent_sum(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GeomLemmaGrid {
    pub results: Vec<GeomLemmaResult>,
    /// Smallest `C` with `p ≤ C · exp(−exponent_sum)` on the whole grid.
    pub fitted_c: f64,
    /// `C · exp(−exponent_sum)` per case.
    pub bounds: Vec<f64>,
    /// Least-squares slope of `log p` against `exponent_sum`.
    pub slope: f64,
}

/// Runs every case (case `i` on `stream.substream(i)`) and fits the lemma's constant.
pub fn geom_lemma_grid(cases: &[GeomLemmaCase], samples: usize, stream: &RngStream) -> Result<GeomLemmaGrid> {
    if cases.is_empty() {
        return Err(contract("geom_lemma_grid needs at least one case"));
    }
    let results: Vec<GeomLemmaResult> = cases
        .iter()
        .enumerate()
        .map(|(i, c)| geom_lemma_probability(c, samples, &stream.substream(i as u64)))
        .collect::<Result<_>>()?;
    let fitted_c = results
        .iter()
        .map(|r| r.empirical_p * r.exponent_sum.exp())
        .fold(0.0, f64::max);
    let bounds = results.iter().map(|r| fitted_c * (-r.exponent_sum).exp()).collect();
    let pts: Vec<(f64, f64)> = results
        .iter()
        .filter(|r| r.hits > 0)
        .map(|r| (r.exponent_sum, r.empirical_p.ln()))
        .collect();
    let slope = ols_slope(&pts);
    Ok(GeomLemmaGrid { results, fitted_c, bounds, slope })
}

fn ols_slope(pts: &[(f64, f64)]) -> f64 {
    if pts.len() < 2 {
        return f64::NAN;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}
