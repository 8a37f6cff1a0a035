//! Random potentials on the strip.
//!
//! A [`PotentialModel`] describes the law of the i.i.d. symmetric `W×W`
//! matrices `V(0), V(1), …`. The Schrödinger strip puts an i.i.d. scalar on
//! each diagonal entry and the transverse hopping `1` on the first
//! off-diagonals. All bounded site laws have finite moments of every order,
//! which is the only moment condition the transfer-matrix theory needs.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::rng::RngStream;

/// Scalar law of a single potential entry.
#[derive(Clone, Debug, PartialEq)]
pub enum SiteLaw {
    UniformInterval { lo: f64, hi: f64 },
    /// Takes value `a` with probability `p` and `b` otherwise.
    Bernoulli { a: f64, b: f64, p: f64 },
    PointMass { c: f64 },
    /// Unbounded; only accepted by the experiment runner behind an explicit override.
    Gaussian { mean: f64, sd: f64 },
}

impl SiteLaw {
    pub fn validate(&self) -> Result<()> {
        let finite = |xs: &[f64]| xs.iter().all(|x| x.is_finite());
        match *self {
            SiteLaw::UniformInterval { lo, hi } => {
                if !finite(&[lo, hi]) {
                    return Err(Error::Config("uniform law bounds must be finite".into()));
                }
                if lo > hi {
                    return Err(Error::Config(format!("uniform law has lo = {lo} > hi = {hi}")));
                }
            }
            SiteLaw::Bernoulli { a, b, p } => {
                if !finite(&[a, b, p]) {
                    return Err(Error::Config("bernoulli law parameters must be finite".into()));
                }
                if !(0.0..=1.0).contains(&p) {
                    return Err(Error::Config(format!("bernoulli law has p = {p} outside [0, 1]")));
                }
            }
            SiteLaw::PointMass { c } => {
                if !c.is_finite() {
                    return Err(Error::Config("point mass must be finite".into()));
                }
            }
            SiteLaw::Gaussian { mean, sd } => {
                if !finite(&[mean, sd]) || sd < 0.0 {
                    return Err(Error::Config(format!("gaussian law needs finite mean and sd >= 0, got sd = {sd}")));
                }
            }
        }
        Ok(())
    }

    pub fn is_bounded(&self) -> bool {
        !matches!(self, SiteLaw::Gaussian { sd, .. } if *sd > 0.0)
    }

    /// True when the law is concentrated at a single point.
    pub fn is_degenerate(&self) -> bool {
        match *self {
            SiteLaw::UniformInterval { lo, hi } => lo == hi,
            SiteLaw::Bernoulli { a, b, p } => a == b || p == 0.0 || p == 1.0,
            SiteLaw::PointMass { .. } => true,
            SiteLaw::Gaussian { sd, .. } => sd == 0.0,
        }
    }

    /// Closed interval containing the support, when bounded.
    pub fn support_bounds(&self) -> Option<(f64, f64)> {
        match *self {
            SiteLaw::UniformInterval { lo, hi } => Some((lo, hi)),
            SiteLaw::Bernoulli { a, b, .. } => Some((a.min(b), a.max(b))),
            SiteLaw::PointMass { c } => Some((c, c)),
            SiteLaw::Gaussian { mean, sd } if sd == 0.0 => Some((mean, mean)),
            SiteLaw::Gaussian { .. } => None,
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            SiteLaw::UniformInterval { lo, hi } => lo + (hi - lo) * rng.random::<f64>(),
            SiteLaw::Bernoulli { a, b, p } => {
                if rng.random::<f64>() < p {
                    a
                } else {
                    b
                }
            }
            SiteLaw::PointMass { c } => c,
            SiteLaw::Gaussian { mean, sd } => {
                let z: f64 = StandardNormal.sample(rng);
                mean + sd * z
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum ModelKind {
    /// Diagonal entries i.i.d. from the site law, `1` on the first off-diagonals.
    SchrodingerStrip(SiteLaw),
    /// Upper-triangular entries (diagonal included) i.i.d. from the law, mirrored.
    GeneralSymmetric(SiteLaw),
    /// The same fixed symmetric matrix at every site.
    Deterministic(DMatrix<f64>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct PotentialModel {
    width: usize,
    kind: ModelKind,
}

impl PotentialModel {
    pub fn new(width: usize, kind: ModelKind) -> Result<Self> {
        if width == 0 {
            return Err(Error::Config("strip width must be at least 1".into()));
        }
        match &kind {
            ModelKind::SchrodingerStrip(law) | ModelKind::GeneralSymmetric(law) => law.validate()?,
            ModelKind::Deterministic(m) => {
                if m.nrows() != width || m.ncols() != width {
                    return Err(Error::Config(format!(
                        "deterministic matrix is {}x{}, expected {width}x{width}",
                        m.nrows(),
                        m.ncols()
                    )));
                }
                if m.iter().any(|x| !x.is_finite()) {
                    return Err(Error::Config("deterministic matrix has non-finite entries".into()));
                }
                if m != &m.transpose() {
                    return Err(Error::Config("deterministic matrix is not symmetric".into()));
                }
            }
        }
        Ok(Self { width, kind })
    }

    pub fn schrodinger(width: usize, law: SiteLaw) -> Result<Self> {
        Self::new(width, ModelKind::SchrodingerStrip(law))
    }

    pub fn deterministic(matrix: DMatrix<f64>) -> Result<Self> {
        Self::new(matrix.nrows(), ModelKind::Deterministic(matrix))
    }

    /// The free strip: `V ≡ 0`.
    pub fn zero(width: usize) -> Self {
        Self { width, kind: ModelKind::Deterministic(DMatrix::zeros(width, width)) }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn kind(&self) -> &ModelKind {
        &self.kind
    }

    pub fn is_bounded(&self) -> bool {
        match &self.kind {
            ModelKind::SchrodingerStrip(law) | ModelKind::GeneralSymmetric(law) => law.is_bounded(),
            ModelKind::Deterministic(_) => true,
        }
    }

    /// Upper bound on `‖V(n)‖₂` over the support, when the law is bounded.
    pub fn norm_bound(&self) -> Option<f64> {
        let w = self.width as f64;
        match &self.kind {
            ModelKind::SchrodingerStrip(law) => {
                let (lo, hi) = law.support_bounds()?;
                let hop = if self.width > 1 { 2.0 } else { 0.0 };
                Some(lo.abs().max(hi.abs()) + hop)
            }
            ModelKind::GeneralSymmetric(law) => {
                let (lo, hi) = law.support_bounds()?;
                Some(w * lo.abs().max(hi.abs()))
            }
            ModelKind::Deterministic(m) => Some(m.norm()),
        }
    }

    /// Draws one matrix of the i.i.d. sequence.
    pub fn sample_one<R: Rng + ?Sized>(&self, rng: &mut R) -> DMatrix<f64> {
        let w = self.width;
        match &self.kind {
            ModelKind::SchrodingerStrip(law) => {
                let mut v = DMatrix::zeros(w, w);
                for a in 0..w {
                    v[(a, a)] = law.sample(rng);
                    if a + 1 < w {
                        v[(a, a + 1)] = 1.0;
                        v[(a + 1, a)] = 1.0;
                    }
                }
                v
            }
            ModelKind::GeneralSymmetric(law) => {
                let mut v = DMatrix::zeros(w, w);
                for a in 0..w {
                    for b in a..w {
                        let x = law.sample(rng);
                        v[(a, b)] = x;
                        v[(b, a)] = x;
                    }
                }
                v
            }
            ModelKind::Deterministic(m) => m.clone(),
        }
    }
}

/// One sampled realization `V(0), …, V(n−1)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Potential {
    width: usize,
    sites: Vec<DMatrix<f64>>,
}

impl Potential {
    pub fn from_sites(width: usize, sites: Vec<DMatrix<f64>>) -> Result<Self> {
        for (n, v) in sites.iter().enumerate() {
            if v.nrows() != width || v.ncols() != width {
                return Err(Error::Contract(format!("site {n} is not {width}x{width}")));
            }
            if v != &v.transpose() {
                return Err(Error::Contract(format!("site {n} is not symmetric")));
            }
        }
        Ok(Self { width, sites })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.sites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }

    pub fn sites(&self) -> &[DMatrix<f64>] {
        &self.sites
    }

    pub fn site(&self, n: usize) -> &DMatrix<f64> {
        &self.sites[n]
    }

    /// The first `n` sites as a new realization.
    pub fn prefix(&self, n: usize) -> Potential {
        Potential { width: self.width, sites: self.sites[..n.min(self.sites.len())].to_vec() }
    }
}

/// Samples `V(0), …, V(n−1)` from the model on the given stream.
pub fn sample_potential(model: &PotentialModel, n: usize, stream: &RngStream) -> Result<Potential> {
    if n == 0 {
        return Err(Error::Contract("sample_potential needs n >= 1".into()));
    }
    let mut rng = stream.rng();
    let sites = (0..n).map(|_| model.sample_one(&mut rng)).collect();
    Ok(Potential { width: model.width(), sites })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RichnessStatus {
    /// Schrödinger strip with a non-degenerate site law.
    Certified,
    /// General symmetric law; richness cannot be checked and is taken on trust.
    UserAsserted,
    /// Single-point support; distinct Lyapunov exponents are not guaranteed.
    Degenerate,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RichnessReport {
    pub status: RichnessStatus,
    pub notes: Vec<String>,
}

impl RichnessReport {
    pub fn warnings(&self) -> Vec<String> {
        match self.status {
            RichnessStatus::Certified => Vec::new(),
            _ => self.notes.clone(),
        }
    }
}

/// Reports which sufficient richness conditions hold by construction.
pub fn validate_richness(model: &PotentialModel) -> RichnessReport {
    match model.kind() {
        ModelKind::SchrodingerStrip(law) if law.is_degenerate() => RichnessReport {
            status: RichnessStatus::Degenerate,
            notes: vec!["site law is concentrated at one point; Lyapunov simplicity is not guaranteed".into()],
        },
        ModelKind::SchrodingerStrip(_) => RichnessReport {
            status: RichnessStatus::Certified,
            notes: vec!["Schrodinger strip with non-degenerate site law".into()],
        },
        ModelKind::GeneralSymmetric(law) if law.is_degenerate() => RichnessReport {
            status: RichnessStatus::Degenerate,
            notes: vec!["entry law is concentrated at one point".into()],
        },
        ModelKind::GeneralSymmetric(_) => RichnessReport {
            status: RichnessStatus::UserAsserted,
            notes: vec!["irreducibility and the rank-one difference condition are not certified; user-asserted".into()],
        },
        ModelKind::Deterministic(_) => RichnessReport {
            status: RichnessStatus::Degenerate,
            notes: vec!["deterministic potential (point mass); Lyapunov simplicity is not guaranteed".into()],
        },
    }
}
