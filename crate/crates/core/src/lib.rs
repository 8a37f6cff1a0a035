//! Transfer-matrix laboratory for Anderson localization on the strip
//! `ℤ₊ × {1, …, W}`.
//!
//! The crate builds the random operator `(Hψ)(n) = ψ(n+1) + V(n)ψ(n) + ψ(n−1)`,
//! propagates its symplectic transfer-matrix cocycle in a log-scaled factored
//! form, estimates Lyapunov spectra and their deviations, measures eigenfunction
//! decay on finite truncations, and checks the measured rates against the
//! bound chain `γ_W ≤ γ*⁻ ≤ γ*⁺ < γ₁`. A Monte Carlo bench for the projection
//! density and the contraction-probability bound lives in [`geomlab`].

pub mod bounds;
pub mod cocycle;
pub mod error;
pub mod geomlab;
pub mod linalg;
pub mod model;
pub mod rng;
pub mod spectrum;

pub use bounds::{gamma_star1, gamma_star1_bisection, sandwich_report, w2_upper_bound, BoundSet, SandwichReport};
pub use cocycle::{
    deviation_stat, grid_sup_log_norm, lyapunov_estimate, min_dev_scan, transfer_matrix, CocycleState,
    DeviationStat, GridSupBound, LyapunovEstimate, MinDevScan, TransferMatrix,
};
pub use error::{Error, Result};
pub use geomlab::{
    archimedes_test, geom_lemma_grid, geom_lemma_probability, sample_haar_symplectic_orthogonal, sample_sphere,
    ArchimedesReport, DensityForm, GeomLemmaCase, GeomLemmaGrid, GeomLemmaResult, ProjectionDensitySpec,
};
pub use model::{
    sample_potential, validate_richness, ModelKind, Potential, PotentialModel, RichnessReport, RichnessStatus,
    SiteLaw,
};
pub use rng::RngStream;
pub use spectrum::{
    assemble_truncation, eigenpairs_in_window, fast_scan, fit_decay_rate, DecayRateFit, EigenPair, FastScanReport,
    FitPolicy, FitSkip, TruncatedOperator,
};
