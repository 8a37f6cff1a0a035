//! Experiment runners. Each returns its tables plus the `bounds` and
//! `headline` blocks of the summary; `run_experiment` adds provenance and
//! writes everything to disk.
//!
//! Stream layout under the master seed: 0 replicas, 1 reference pilots,
//! 2 sampled realizations (`substream(n).substream(seed)` or
//! `substream(seed)`), 3 projection-density samples, 4 contraction-lemma
//! samples.

use std::path::{Path, PathBuf};
use std::time::Instant;

use anderson_strip::bounds::classify_rate;
use anderson_strip::cocycle::uniform_grid;
use anderson_strip::{
    archimedes_test, assemble_truncation, eigenpairs_in_window, fast_scan, fit_decay_rate, geom_lemma_grid,
    lyapunov_estimate, min_dev_scan, sample_potential, sandwich_report, validate_richness, BoundSet,
    LyapunovEstimate, PotentialModel, RngStream,
};
use rayon::prelude::*;
use serde_json::{json, Value};

use crate::config::{
    BoundsParams, DevscanParams, EigdecayParams, ExperimentConfig, FastscanParams, GammaSource, GeomtestParams,
    LyapunovParams, Params,
};
use crate::output::{config_hash, num, write_all, Table, ARTIFACT_VERSION};

const STREAM_REPLICAS: u64 = 0;
const STREAM_REFERENCE: u64 = 1;
const STREAM_REALIZATIONS: u64 = 2;
const STREAM_ARCHIMEDES: u64 = 3;
const STREAM_LEMMA: u64 = 4;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("I/O error: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::Io(_) => 1,
        }
    }
}

impl From<anderson_strip::Error> for CliError {
    fn from(e: anderson_strip::Error) -> Self {
        match e {
            anderson_strip::Error::Numerical(m) => CliError::Numerical(m),
            other => CliError::Config(other.to_string()),
        }
    }
}

/// Tables and summary blocks of one experiment, before provenance is added.
#[derive(Clone, Debug, PartialEq)]
pub struct RunOutput {
    pub tables: Vec<Table>,
    pub bounds: Value,
    pub headline: Value,
    pub warnings: Vec<String>,
}

#[derive(Clone, Debug)]
pub struct RunReport {
    pub files: Vec<PathBuf>,
    pub summary: Value,
}

/// Runs the experiment on a pool of `cfg.workers` threads and writes the artifacts into `out_dir`.
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: &Path) -> Result<RunReport, CliError> {
    let start = Instant::now();
    let output = match cfg.workers {
        Some(k) => rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build()
            .map_err(|e| CliError::Io(format!("cannot start worker pool: {e}")))?
            .install(|| execute(cfg))?,
        None => execute(cfg)?,
    };
    let hash = config_hash(cfg);
    let mut files: Vec<String> = output.tables.iter().map(|t| t.name.clone()).collect();
    files.push("summary.json".into());
    let summary = json!({
        "artifact_version": ARTIFACT_VERSION,
        "experiment": cfg.experiment.as_str(),
        "config_hash": hash,
        "master_seed": cfg.master_seed,
        "workers": cfg.workers,
        "config": cfg.raw,
        "richness": cfg.model.as_ref().map(validate_richness),
        "bounds": output.bounds,
        "headline": output.headline,
        "warnings": output.warnings,
        "files": files,
        "wall_time_seconds": start.elapsed().as_secs_f64(),
    });
    let written = write_all(out_dir, &output.tables, &summary, &hash, cfg.master_seed)
        .map_err(|e| CliError::Io(format!("{}: {e}", out_dir.display())))?;
    Ok(RunReport { files: written, summary })
}

/// Runs the experiment on the current thread pool without touching the disk.
pub fn execute(cfg: &ExperimentConfig) -> Result<RunOutput, CliError> {
    match &cfg.params {
        Params::Lyapunov(p) => run_lyapunov(cfg, p),
        Params::Devscan(p) => run_devscan(cfg, p),
        Params::Fastscan(p) => run_fastscan(cfg, p),
        Params::Eigdecay(p) => run_eigdecay(cfg, p),
        Params::Geomtest(p) => run_geomtest(cfg, p),
        Params::Bounds(p) => run_bounds(cfg, p),
    }
}

/// Bound set from the positive exponents, or `None` with a note when it is undefined.
fn bound_set(positive: &[f64], warnings: &mut Vec<String>) -> Option<BoundSet> {
    match BoundSet::from_gammas(positive) {
        Ok(b) => Some(b),
        Err(e) => {
            warnings.push(format!("bounds not computed: {e}"));
            None
        }
    }
}

fn bounds_json(b: &Option<BoundSet>) -> Value {
    serde_json::to_value(b).expect("bound sets serialize")
}

fn reference(
    model: &PotentialModel,
    lambda: f64,
    n: usize,
    replicas: usize,
    stream: &RngStream,
) -> Result<LyapunovEstimate, CliError> {
    Ok(lyapunov_estimate(model, lambda, n, replicas, stream)?)
}

fn run_lyapunov(cfg: &ExperimentConfig, p: &LyapunovParams) -> Result<RunOutput, CliError> {
    let model = cfg.model();
    let est = lyapunov_estimate(model, p.lambda, p.n, p.replicas, &RngStream::new(cfg.master_seed, STREAM_REPLICAS))?;
    let k = est.gammas.len();
    let mut warnings = est.warnings.clone();

    let mut columns = vec!["replica".to_string()];
    columns.extend((1..=k).map(|j| format!("rate_{j}")));
    let mut per_replica = Table::with_columns("lyapunov_replicas.csv", columns);
    for (r, row) in est.per_replica.iter().enumerate() {
        let mut cells = vec![r.to_string()];
        cells.extend(row.iter().map(|&x| num(x)));
        per_replica.push(cells);
    }
    let mut spectrum = Table::new("lyapunov.csv", &["j", "gamma", "std_error"]);
    for j in 0..k {
        spectrum.push(vec![(j + 1).to_string(), num(est.gammas[j]), num(est.std_errors[j])]);
    }

    let bounds = bound_set(est.positive(), &mut warnings);
    Ok(RunOutput {
        tables: vec![spectrum, per_replica],
        bounds: bounds_json(&bounds),
        headline: json!({
            "lambda": p.lambda,
            "n": p.n,
            "replicas": p.replicas,
            "gamma_1": est.gammas[0],
            "gammas": est.gammas,
            "std_errors": est.std_errors,
            "pairing_residual": est.pairing_residual(),
        }),
        warnings,
    })
}

fn run_devscan(cfg: &ExperimentConfig, p: &DevscanParams) -> Result<RunOutput, CliError> {
    let model = cfg.model();
    let w = model.width();
    let grid = uniform_grid(p.interval.0, p.interval.1, p.grid_points);
    let ref_stream = RngStream::new(cfg.master_seed, STREAM_REFERENCE);
    let pilots: Vec<LyapunovEstimate> = grid
        .par_iter()
        .enumerate()
        .map(|(i, &l)| reference(model, l, p.reference.n, p.reference.replicas, &ref_stream.substream(i as u64)))
        .collect::<Result<_, _>>()?;
    let table: Vec<Vec<f64>> = pilots.iter().map(|e| e.positive().to_vec()).collect();
    let gamma1 = table.iter().map(|g| g[0]).sum::<f64>() / table.len() as f64;
    let threshold = p.threshold_fraction * gamma1;

    let mut columns = vec!["lambda".to_string()];
    columns.extend((1..=w).map(|j| format!("gamma_{j}")));
    let mut ref_table = Table::with_columns("devscan_reference.csv", columns);
    for (l, g) in grid.iter().zip(&table) {
        let mut row = vec![num(*l)];
        row.extend(g.iter().map(|&x| num(x)));
        ref_table.push(row);
    }

    let real = RngStream::new(cfg.master_seed, STREAM_REALIZATIONS);
    let mut detail = Table::new("devscan.csv", &["n", "seed", "lambda", "dev_n", "dev_n2", "min_dev"]);
    let mut sups = Table::new("devscan_sup.csv", &["n", "seed", "grid_sup", "exceeds"]);
    let mut fractions = Vec::new();
    for &n in &p.n_values {
        let scans = (0..p.seeds)
            .into_par_iter()
            .map(|s| {
                let stream = real.substream(n as u64).substream(s as u64);
                min_dev_scan(model, p.interval, n, p.grid_points, &table, &stream)
            })
            .collect::<Result<Vec<_>, _>>()?;
        let mut exceed = 0;
        for (s, scan) in scans.iter().enumerate() {
            for i in 0..scan.lambdas.len() {
                detail.push(vec![
                    n.to_string(),
                    s.to_string(),
                    num(scan.lambdas[i]),
                    num(scan.dev_n[i]),
                    num(scan.dev_n2[i]),
                    num(scan.min_dev[i]),
                ]);
            }
            let over = scan.grid_sup > threshold;
            exceed += over as usize;
            sups.push(vec![n.to_string(), s.to_string(), num(scan.grid_sup), over.to_string()]);
        }
        fractions.push(exceed as f64 / p.seeds as f64);
    }
    let non_increasing = fractions.windows(2).all(|f| f[1] <= f[0]);
    let mut warnings = pilots[0].warnings.clone();
    let bounds = bound_set(&table[table.len() / 2], &mut warnings);
    Ok(RunOutput {
        tables: vec![detail, sups, ref_table],
        bounds: bounds_json(&bounds),
        headline: json!({
            "interval": [p.interval.0, p.interval.1],
            "n": p.n_values,
            "gamma_1_mean": gamma1,
            "threshold": threshold,
            "exceedance_fraction": fractions,
            "non_increasing": non_increasing,
        }),
        warnings,
    })
}

fn run_fastscan(cfg: &ExperimentConfig, p: &FastscanParams) -> Result<RunOutput, CliError> {
    let model = cfg.model();
    let pilot = reference(
        model,
        p.lambda,
        p.reference.n,
        p.reference.replicas,
        &RngStream::new(cfg.master_seed, STREAM_REFERENCE),
    )?;
    let mut warnings = pilot.warnings.clone();
    let positive = pilot.positive().to_vec();
    let gamma1 = positive[0];
    let bounds = if positive.len() >= 2 { bound_set(&positive, &mut warnings) } else { None };
    let upper = bounds.as_ref().map_or(gamma1, BoundSet::upper_bound);
    let threshold = -(upper + p.margin_fraction * gamma1);
    let epsilon = p.epsilon_fraction * gamma1;

    let real = RngStream::new(cfg.master_seed, STREAM_REALIZATIONS);
    let mut runs = Table::new(
        "fastscan.csv",
        &["n", "seed", "global_min", "argmin", "log_lipschitz_slack", "below_threshold"],
    );
    let mut grid = Table::new("fastscan_grid.csv", &["n", "seed", "lambda", "min_log_s"]);
    let mut violations = Vec::new();
    let mut worst = f64::INFINITY;
    for &n in &p.n_values {
        let reports = (0..p.seeds)
            .into_par_iter()
            .map(|s| {
                let pot = sample_potential(model, n, &real.substream(n as u64).substream(s as u64))?;
                let mut rep = fast_scan(&pot, p.lambda, p.radius, n, p.grid_points)?;
                rep.attach_lipschitz_slack(gamma1, epsilon);
                Ok(rep)
            })
            .collect::<Result<Vec<_>, anderson_strip::Error>>()?;
        let mut bad = 0;
        for (s, rep) in reports.iter().enumerate() {
            let below = rep.global_min < threshold;
            bad += below as usize;
            worst = worst.min(rep.global_min);
            runs.push(vec![
                n.to_string(),
                s.to_string(),
                num(rep.global_min),
                num(rep.argmin),
                num(rep.log_lipschitz_slack.unwrap_or(f64::NAN)),
                below.to_string(),
            ]);
            for (l, r) in rep.lambdas.iter().zip(&rep.rates) {
                grid.push(vec![n.to_string(), s.to_string(), num(*l), num(*r)]);
            }
        }
        violations.push(bad);
    }
    Ok(RunOutput {
        tables: vec![runs, grid],
        bounds: bounds_json(&bounds),
        headline: json!({
            "lambda": p.lambda,
            "radius": p.radius,
            "n": p.n_values,
            "reference_gammas": positive,
            "threshold": threshold,
            "violations": violations,
            "worst_global_min": worst,
        }),
        warnings,
    })
}

fn run_eigdecay(cfg: &ExperimentConfig, p: &EigdecayParams) -> Result<RunOutput, CliError> {
    let model = cfg.model();
    let pilot = reference(
        model,
        p.reference_lambda,
        p.reference.n,
        p.reference.replicas,
        &RngStream::new(cfg.master_seed, STREAM_REFERENCE),
    )?;
    let mut warnings = pilot.warnings.clone();
    let positive = pilot.positive().to_vec();
    let delta = p.delta_fraction * positive[0];

    let real = RngStream::new(cfg.master_seed, STREAM_REALIZATIONS);
    let per_seed = (0..p.seeds)
        .into_par_iter()
        .map(|s| {
            let pot = sample_potential(model, p.sites, &real.substream(s as u64))?;
            let op = assemble_truncation(&pot, p.sites)?;
            let pairs = eigenpairs_in_window(&op, p.window)?;
            Ok(pairs.into_iter().map(|pair| (fit_decay_rate(&pair, &p.fit), pair)).collect::<Vec<_>>())
        })
        .collect::<Result<Vec<_>, anderson_strip::Error>>()?;

    let bounds = if positive.len() >= 2 { bound_set(&positive, &mut warnings) } else { None };
    let mut fits = Table::new(
        "eigdecay.csv",
        &["seed", "lambda", "center", "rate", "r_squared", "window_lo", "window_hi", "class"],
    );
    let mut skipped = Table::new("eigdecay_skipped.csv", &["seed", "lambda", "center", "reason"]);
    let mut rates = Vec::new();
    for (s, results) in per_seed.iter().enumerate() {
        for (fit, pair) in results {
            match fit {
                Ok(f) => {
                    let class = bounds.as_ref().map_or(Value::Null, |b| {
                        serde_json::to_value(classify_rate(f.rate, b, delta)).expect("classes serialize")
                    });
                    fits.push(vec![
                        s.to_string(),
                        num(pair.lambda),
                        pair.center.to_string(),
                        num(f.rate),
                        num(f.r_squared),
                        f.window.0.to_string(),
                        f.window.1.to_string(),
                        class.as_str().unwrap_or("").to_string(),
                    ]);
                    rates.push(f.rate);
                }
                Err(reason) => skipped.push(vec![
                    s.to_string(),
                    num(pair.lambda),
                    pair.center.to_string(),
                    format!("\"{reason}\""),
                ]),
            }
        }
    }
    let median = median(&rates);
    let sandwich = match &bounds {
        Some(_) => Some(sandwich_report(&positive, &rates, Some(delta))?),
        None => None,
    };
    let headline = json!({
        "window": [p.window.0, p.window.1],
        "sites": p.sites,
        "seeds": p.seeds,
        "reference_lambda": p.reference_lambda,
        "reference_gammas": positive,
        "delta": delta,
        "fitted": rates.len(),
        "skipped": skipped.rows.len(),
        "median_rate": median,
        "inner_fraction": sandwich.as_ref().map(|r| r.inner_fraction()),
        "median_within_bound": bounds.as_ref().map(|b| median <= b.upper_bound() + delta),
        "counts": sandwich.as_ref().map(|r| json!({
            "below_gamma_w": r.below_gamma_w,
            "consistent": r.consistent,
            "between_bound_and_gamma1": r.between_bound_and_gamma1,
            "above_gamma1": r.above_gamma1,
        })),
    });
    Ok(RunOutput { tables: vec![fits, skipped], bounds: bounds_json(&bounds), headline, warnings })
}

fn median(v: &[f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    let mut s = v.to_vec();
    s.sort_by(|a, b| a.total_cmp(b));
    let m = s.len();
    if m % 2 == 1 {
        s[m / 2]
    } else {
        0.5 * (s[m / 2 - 1] + s[m / 2])
    }
}

fn run_geomtest(cfg: &ExperimentConfig, p: &GeomtestParams) -> Result<RunOutput, CliError> {
    let arch_stream = RngStream::new(cfg.master_seed, STREAM_ARCHIMEDES);
    let mut arch = Table::new(
        "archimedes.csv",
        &["ell", "k", "samples", "exponent", "ks_uncorrected", "ks_corrected", "critical_1pct", "uncorrected_passes", "corrected_passes"],
    );
    let mut arch_json = Vec::new();
    for (i, &(ell, k)) in p.archimedes.iter().enumerate() {
        let r = archimedes_test(ell, k, p.archimedes_samples, &arch_stream.substream(i as u64))?;
        arch.push(vec![
            ell.to_string(),
            k.to_string(),
            r.samples.to_string(),
            num(r.exponent),
            num(r.ks_uncorrected),
            num(r.ks_corrected),
            num(r.critical_1pct),
            r.uncorrected_passes.to_string(),
            r.corrected_passes.to_string(),
        ]);
        arch_json.push(serde_json::to_value(&r).expect("reports serialize"));
    }
    let mut tables = vec![arch];
    let mut lemma_json = Value::Null;
    if !p.lemma_cases.is_empty() {
        let grid = geom_lemma_grid(&p.lemma_cases, p.lemma_samples, &RngStream::new(cfg.master_seed, STREAM_LEMMA))?;
        let mut t = Table::new(
            "geom_lemma.csv",
            &["case", "ell", "k", "a", "a_values", "exponent_sum", "samples", "hits", "probability", "bound"],
        );
        for (i, (r, b)) in grid.results.iter().zip(&grid.bounds).enumerate() {
            let a_values: Vec<String> = r.case.a_values.iter().map(|&x| num(x)).collect();
            t.push(vec![
                i.to_string(),
                r.case.ell().to_string(),
                r.case.k.to_string(),
                num(r.case.a),
                a_values.join(";"),
                num(r.exponent_sum),
                r.samples.to_string(),
                r.hits.to_string(),
                num(r.empirical_p),
                num(*b),
            ]);
        }
        tables.push(t);
        lemma_json = json!({ "fitted_c": grid.fitted_c, "slope": grid.slope, "cases": grid.results.len() });
    }
    Ok(RunOutput {
        tables,
        bounds: Value::Null,
        headline: json!({ "archimedes": arch_json, "lemma": lemma_json }),
        warnings: Vec::new(),
    })
}

fn run_bounds(cfg: &ExperimentConfig, p: &BoundsParams) -> Result<RunOutput, CliError> {
    let mut warnings = Vec::new();
    let gammas = match &p.source {
        GammaSource::Given(g) => g.clone(),
        GammaSource::Estimate(l) => {
            let est = lyapunov_estimate(
                cfg.model(),
                l.lambda,
                l.n,
                l.replicas,
                &RngStream::new(cfg.master_seed, STREAM_REPLICAS),
            )?;
            warnings.extend(est.warnings.clone());
            est.positive().to_vec()
        }
    };
    let set = BoundSet::from_gammas(&gammas)?;
    let mut t = Table::new("bounds.csv", &["quantity", "value"]);
    for (i, g) in gammas.iter().enumerate() {
        t.push(vec![format!("gamma_{}", i + 1), num(*g)]);
    }
    t.push(vec!["gamma_star1".into(), num(set.gamma_star1)]);
    if let Some(b) = set.w2_upper_bound {
        t.push(vec!["w2_upper_bound".into(), num(b)]);
    }
    t.push(vec!["gamma_star_minus".into(), num(set.gamma_star_minus)]);
    let mut tables = vec![t];
    let mut sandwich = Value::Null;
    if !p.rates.is_empty() {
        let rep = sandwich_report(&gammas, &p.rates, p.delta)?;
        let mut rt = Table::new("bounds_rates.csv", &["rate", "class"]);
        for (r, c) in p.rates.iter().zip(&rep.classes) {
            let c = serde_json::to_value(c).expect("classes serialize");
            rt.push(vec![num(*r), c.as_str().unwrap_or("").to_string()]);
        }
        tables.push(rt);
        sandwich = json!({
            "delta": rep.delta,
            "inner_fraction": rep.inner_fraction(),
            "below_gamma_w": rep.below_gamma_w,
            "consistent": rep.consistent,
            "between_bound_and_gamma1": rep.between_bound_and_gamma1,
            "above_gamma1": rep.above_gamma1,
        });
    }
    Ok(RunOutput {
        tables,
        bounds: serde_json::to_value(&set).expect("bound sets serialize"),
        headline: json!({ "gammas": gammas, "upper_bound": set.upper_bound(), "sandwich": sandwich }),
        warnings,
    })
}
