//! Decay-rate bounds as functions of the Lyapunov spectrum, and
//! classification of measured rates against the chain
//! `γ_W = γ*⁻ ≤ γ*⁺ < γ₁`.

use serde::Serialize;

use crate::error::{contract, Result};

fn check_spectrum(gammas: &[f64]) -> Result<()> {
    if gammas.len() < 2 {
        return Err(contract("bound formulas need W >= 2 exponents"));
    }
    if gammas.iter().any(|g| !g.is_finite() || *g <= 0.0) {
        return Err(contract("exponents must be finite and positive"));
    }
    if gammas.windows(2).any(|w| w[0] < w[1]) {
        return Err(contract("exponents must be sorted non-increasing"));
    }
    Ok(())
}

/// The map `γ ↦ γ + ((W−1)γ − Σ_{j<W} γ_j)₊ − γ₁`, strictly increasing.
fn star1_residual(gamma: f64, gammas: &[f64]) -> f64 {
    let w = gammas.len();
    let head: f64 = gammas[..w - 1].iter().sum();
    gamma + ((w - 1) as f64 * gamma - head).max(0.0) - gammas[0]
}

/// Root of `((W−1)γ − Σ_{j=1}^{W−1} γ_j)₊ + γ = γ₁`.
///
/// `γ₁` when `(W−1)γ₁ ≤ Σ_{j<W} γ_j` (always the case for `W = 2`), otherwise
/// `(γ₁ + Σ_{j<W} γ_j) / W`.
pub fn gamma_star1(gammas: &[f64]) -> Result<f64> {
    check_spectrum(gammas)?;
    let w = gammas.len();
    let g1 = gammas[0];
    let head: f64 = gammas[..w - 1].iter().sum();
    if (w - 1) as f64 * g1 <= head {
        Ok(g1)
    } else {
        Ok((g1 + head) / w as f64)
    }
}

/// The same root by bisection on `[0, γ₁]`, to absolute tolerance `tol`.
pub fn gamma_star1_bisection(gammas: &[f64], tol: f64) -> Result<f64> {
    check_spectrum(gammas)?;
    let (mut lo, mut hi) = (0.0, gammas[0]);
    // residual(0) = −γ₁ < 0 and residual(γ₁) ≥ 0
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if star1_residual(mid, gammas) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if mid == lo && mid == hi {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// `(2γ₁ + γ₂) / 3`, the `W = 2` upper bound on `γ*⁺`.
pub fn w2_upper_bound(gamma1: f64, gamma2: f64) -> Result<f64> {
    check_spectrum(&[gamma1, gamma2])?;
    Ok((2.0 * gamma1 + gamma2) / 3.0)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BoundSet {
    pub width: usize,
    pub gamma1: f64,
    #[serde(rename = "gammaW")]
    pub gamma_w: f64,
    pub gamma_star1: f64,
    /// Only defined for `W = 2`.
    pub w2_upper_bound: Option<f64>,
    /// `γ*⁻ = γ_W`.
    pub gamma_star_minus: f64,
}

impl BoundSet {
    /// From the positive exponents `γ₁ ≥ … ≥ γ_W > 0`.
    pub fn from_gammas(gammas: &[f64]) -> Result<Self> {
        check_spectrum(gammas)?;
        let w = gammas.len();
        Ok(Self {
            width: w,
            gamma1: gammas[0],
            gamma_w: gammas[w - 1],
            gamma_star1: gamma_star1(gammas)?,
            w2_upper_bound: if w == 2 { Some(w2_upper_bound(gammas[0], gammas[1])?) } else { None },
            gamma_star_minus: gammas[w - 1],
        })
    }

    /// The sharpest available upper bound on `γ*⁺`.
    pub fn upper_bound(&self) -> f64 {
        self.w2_upper_bound.unwrap_or(self.gamma_star1)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RateClass {
    /// Below `γ_W − δ`: faster than the slowest exponent allows.
    BelowGammaW,
    /// In `[γ_W − δ, bound + δ]`.
    Consistent,
    /// In `(bound + δ, γ₁ + δ]`.
    BetweenBoundAndGamma1,
    /// Above `γ₁ + δ`: faster than the fastest exponent.
    AboveGamma1,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SandwichReport {
    pub bounds: BoundSet,
    pub delta: f64,
    pub total: usize,
    pub below_gamma_w: usize,
    pub consistent: usize,
    pub between_bound_and_gamma1: usize,
    pub above_gamma1: usize,
    pub classes: Vec<RateClass>,
}

impl SandwichReport {
    /// Fraction in the two middle bins.
    pub fn inner_fraction(&self) -> f64 {
        if self.total == 0 {
            return 0.0;
        }
        (self.consistent + self.between_bound_and_gamma1) as f64 / self.total as f64
    }
}

pub fn classify_rate(rate: f64, bounds: &BoundSet, delta: f64) -> RateClass {
    if rate < bounds.gamma_w - delta {
        RateClass::BelowGammaW
    } else if rate <= bounds.upper_bound() + delta {
        RateClass::Consistent
    } else if rate <= bounds.gamma1 + delta {
        RateClass::BetweenBoundAndGamma1
    } else {
        RateClass::AboveGamma1
    }
}

/// Bins measured decay rates; `delta` defaults to `0.1 · γ₁`.
pub fn sandwich_report(gammas: &[f64], rates: &[f64], delta: Option<f64>) -> Result<SandwichReport> {
    let bounds = BoundSet::from_gammas(gammas)?;
    let delta = delta.unwrap_or(0.1 * bounds.gamma1);
    let classes: Vec<RateClass> = rates.iter().map(|&r| classify_rate(r, &bounds, delta)).collect();
    let count = |c: RateClass| classes.iter().filter(|&&x| x == c).count();
    Ok(SandwichReport {
        delta,
        total: rates.len(),
        below_gamma_w: count(RateClass::BelowGammaW),
        consistent: count(RateClass::Consistent),
        between_bound_and_gamma1: count(RateClass::BetweenBoundAndGamma1),
        above_gamma1: count(RateClass::AboveGamma1),
        classes,
        bounds,
    })
}
