//! `strip-lab`: config-driven experiment runner for the `anderson-strip` core.

pub mod config;
pub mod output;
pub mod run;

pub use config::{parse_config, parse_config_for, ConfigErrors, Experiment, ExperimentConfig, Params};
pub use run::{execute, run_experiment, CliError, RunOutput, RunReport};

/// CSV layouts, shown by `--help`.
pub const CSV_SCHEMAS: &str = "\
Output files (all CSVs start with `# config_hash=<sha256> master_seed=<seed>`):
  summary.json              artifact_version, config echo, config_hash, master_seed,
                            richness, bounds, headline statistics, warnings, wall time
  lyapunov:
    lyapunov.csv            j, gamma, std_error
    lyapunov_replicas.csv   replica, rate_1 .. rate_2W
  devscan:
    devscan.csv             n, seed, lambda, dev_n, dev_n2, min_dev
    devscan_sup.csv         n, seed, grid_sup, exceeds
    devscan_reference.csv   lambda, gamma_1 .. gamma_W
  fastscan:
    fastscan.csv            n, seed, global_min, argmin, log_lipschitz_slack, below_threshold
    fastscan_grid.csv       n, seed, lambda, min_log_s
  eigdecay:
    eigdecay.csv            seed, lambda, center, rate, r_squared, window_lo, window_hi, class
    eigdecay_skipped.csv    seed, lambda, center, reason
  geomtest:
    archimedes.csv          ell, k, samples, exponent, ks_uncorrected, ks_corrected,
                            critical_1pct, uncorrected_passes, corrected_passes
    geom_lemma.csv          case, ell, k, a, a_values, exponent_sum, samples, hits,
                            probability, bound
  bounds:
    bounds.csv              quantity, value
    bounds_rates.csv        rate, class

Exit codes: 0 ok, 1 I/O error, 2 configuration error, 3 numerical failure.";
