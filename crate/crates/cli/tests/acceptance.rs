//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Two criteria are expected to read FAIL and are listed in `UNATTAINABLE`;
//! the process only fails if some other criterion fails or if a listed one
//! unexpectedly passes.
//!
//! Criterion 1 asks the finite-n estimator `(1/n) log s₁(T^n)` to hit
//! `log ρ` within `1e-9` at `n = 10⁴`. The estimator carries an exact bias of
//! `log(3/√5)/n ≈ 2.9e-5` there.
//!
//! Criterion 8 asks for zero threshold crossings over 20 seeds including
//! `n = 50`. At `n = 50` a single 256-point scan crosses with probability
//! about 0.04 (42 of 1000 independent scans), so 20 clean seeds happen only
//! about 42% of the time; `n = 100, 200` showed no crossing in 1000 and 300
//! scans. The seed is fixed in advance and not tuned.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::{Duration, Instant};

use anderson_strip::cocycle::{grid_sup_log_norm, partial_sums_at, uniform_grid};
use anderson_strip::geomlab::ks_critical_1pct;
use anderson_strip::{
    archimedes_test, fast_scan, gamma_star1, gamma_star1_bisection, geom_lemma_grid, lyapunov_estimate,
    sample_potential, w2_upper_bound, CocycleState, GeomLemmaCase, Potential, PotentialModel, RngStream, SiteLaw,
};
use nalgebra::DMatrix;
use rand::Rng;
use strip_lab::{execute, parse_config, run_experiment};

const UNATTAINABLE: [u32; 2] = [1, 8];

struct Outcome {
    id: u32,
    pass: bool,
}

fn report(out: &mut Vec<Outcome>, id: u32, title: &str, pass: bool, detail: String) {
    let tag = if pass { "PASS" } else { "FAIL" };
    println!("criterion {id:>2} [{tag}] {title}: {detail}");
    out.push(Outcome { id, pass });
}

fn strip(width: usize) -> PotentialModel {
    PotentialModel::schrodinger(width, SiteLaw::UniformInterval { lo: -1.0, hi: 1.0 }).unwrap()
}

fn log_rho() -> f64 {
    ((3.0 + 5f64.sqrt()) / 2.0).ln()
}

fn free_potential(n: usize) -> Potential {
    Potential::from_sites(1, vec![DMatrix::zeros(1, 1); n]).unwrap()
}

fn criterion_1(out: &mut Vec<Outcome>) {
    let model = PotentialModel::deterministic(DMatrix::zeros(1, 1)).unwrap();
    let start = Instant::now();
    let est = lyapunov_estimate(&model, 3.0, 10_000, 2, &RngStream::new(1, 0)).unwrap();
    let elapsed = start.elapsed();
    let err = (est.gammas[0] - log_rho()).abs();
    let finite_n = log_rho() + (3.0 / 5f64.sqrt()).ln() / 10_000.0;
    report(
        out,
        1,
        "deterministic cocycle oracle",
        err < 1e-9 && elapsed < Duration::from_secs(1),
        format!(
            "|gamma_1 - log rho| = {err:.3e} (tol 1e-9), runtime {:.3}s; \
             |gamma_1 - (log rho + log(3/sqrt5)/n)| = {:.3e}",
            elapsed.as_secs_f64(),
            (est.gammas[0] - finite_n).abs()
        ),
    );
}

fn criterion_2(out: &mut Vec<Outcome>) {
    let mut worst = 0.0f64;
    for w in [2, 3] {
        let model = strip(w);
        let mut rng = RngStream::new(2, w as u64).rng();
        let mut state = CocycleState::identity(w);
        for _ in 0..100_000 {
            state.step(0.3, &model.sample_one(&mut rng)).unwrap();
            worst = worst.max(state.pairing_residual());
        }
    }
    report(
        out,
        2,
        "symplectic pairing",
        worst < 1e-8,
        format!("max_j |s_j + s_(2W+1-j)| / max(1, s_1) = {worst:.3e} over 1e5 steps, W in {{2,3}}"),
    );
}

fn criterion_3(out: &mut Vec<Outcome>) -> Vec<f64> {
    let start = Instant::now();
    let est = lyapunov_estimate(&strip(2), 0.0, 100_000, 32, &RngStream::new(3, 0)).unwrap();
    let elapsed = start.elapsed();
    let (g1, g2) = (est.gammas[0], est.gammas[1]);
    let diffs: Vec<f64> = est.per_replica.iter().map(|r| r[0] - r[1]).collect();
    let mean = diffs.iter().sum::<f64>() / diffs.len() as f64;
    let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (diffs.len() - 1) as f64;
    let se_gap = (var / diffs.len() as f64).sqrt().max(est.std_errors[0].hypot(est.std_errors[1]));
    let pass = g1 - g2 > 5.0 * se_gap && g2 > 5.0 * est.std_errors[1] && elapsed < Duration::from_secs(60);
    report(
        out,
        3,
        "simple Lyapunov spectrum",
        pass,
        format!(
            "gamma = ({g1:.5}, {g2:.5}), gap/se = {:.1}, gamma_2/se = {:.1}, runtime {:.1}s",
            (g1 - g2) / se_gap,
            g2 / est.std_errors[1],
            elapsed.as_secs_f64()
        ),
    );
    est.positive().to_vec()
}

fn criterion_4(out: &mut Vec<Outcome>, gamma1: f64) {
    let eps = 0.1 * gamma1;
    let ns = [100usize, 200, 400, 800];
    let freqs: Vec<f64> = ns
        .iter()
        .map(|&n| {
            let est = lyapunov_estimate(&strip(2), 0.0, n, 1000, &RngStream::new(4, n as u64)).unwrap();
            est.per_replica.iter().filter(|r| (r[0] - gamma1).abs() >= eps).count() as f64 / 1000.0
        })
        .collect();
    let decreasing = freqs.windows(2).all(|f| f[1] < f[0]);
    // OLS of log frequency on n with a two-sided 95% t interval (2 dof)
    let xs: Vec<f64> = ns.iter().map(|&n| n as f64).collect();
    let ys: Vec<f64> = freqs.iter().map(|f| f.max(1e-300).ln()).collect();
    let mx = xs.iter().sum::<f64>() / 4.0;
    let my = ys.iter().sum::<f64>() / 4.0;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let slope = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>() / sxx;
    let resid: f64 = xs.iter().zip(&ys).map(|(x, y)| (y - my - slope * (x - mx)).powi(2)).sum();
    let se = (resid / 2.0 / sxx).sqrt();
    let upper = slope + 4.302_652_729_911_275 * se;
    report(
        out,
        4,
        "large deviations",
        decreasing && upper < 0.0,
        format!("freq at n={ns:?}: {freqs:?}; slope {slope:.3e}, 95% upper {upper:.3e}"),
    );
}

fn criterion_5(out: &mut Vec<Outcome>) {
    let mut rng = RngStream::new(5, 0).rng();
    let mut ok = 0;
    let mut min_margin = f64::INFINITY;
    for trial in 0..100 {
        let w = 1 + trial % 2;
        let n = if (trial / 2) % 2 == 0 { 20 } else { 100 };
        let pot = sample_potential(&strip(w), n, &RngStream::new(5, 1).substream(trial as u64)).unwrap();
        let lambda0 = rng.random_range(-2.5..2.5);
        let radius = rng.random_range(0.01..0.5);
        let j = rng.random_range(1..=w);
        let gs = grid_sup_log_norm(&pot, lambda0, radius, n, j).unwrap();
        let dense = uniform_grid(lambda0 - radius, lambda0 + radius, 10 * (w * n + 1));
        let dense_max = partial_sums_at(&pot, &dense, n, j).unwrap().into_iter().fold(f64::NEG_INFINITY, f64::max);
        min_margin = min_margin.min(gs.bound - dense_max);
        ok += (gs.bound >= dense_max) as usize;
    }
    report(
        out,
        5,
        "Chebyshev node sup bound",
        ok == 100,
        format!("{ok}/100 trials bound >= dense max, smallest margin {min_margin:.3e}"),
    );
}

fn criterion_6(out: &mut Vec<Outcome>) {
    let closed = gamma_star1(&[3.0, 2.0, 1.0]).unwrap();
    let bis = gamma_star1_bisection(&[3.0, 2.0, 1.0], 1e-15).unwrap();
    let w2 = gamma_star1(&[0.7, 0.2]).unwrap();
    let t2 = w2_upper_bound(1.0, 0.4).unwrap();
    let pass = (closed - 8.0 / 3.0).abs() < 1e-12 && (bis - 8.0 / 3.0).abs() < 1e-12 && w2 == 0.7 && (t2 - 0.8).abs() <= f64::EPSILON;
    report(
        out,
        6,
        "bound formulas",
        pass,
        format!("gamma_star1(3,2,1) = {closed} (bisection {bis}), W=2 -> {w2}, w2_upper_bound(1,0.4) = {t2}"),
    );
}

const MODEL_W2: &str = r#"{"kind": "schrodinger_strip", "width": 2, "law": {"type": "uniform", "lo": -1, "hi": 1}}"#;

fn run_config(experiment: &str, seed: u64, params: &str) -> strip_lab::RunOutput {
    let text = format!(r#"{{"experiment": "{experiment}", "model": {MODEL_W2}, "master_seed": {seed}, "params": {params}}}"#);
    execute(&parse_config(&text).unwrap()).unwrap()
}

fn criterion_7(out: &mut Vec<Outcome>) {
    let start = Instant::now();
    let res = run_config(
        "eigdecay",
        7,
        r#"{"window": [-0.2, 0.2], "sites": 2000, "seeds": 20, "reference": {"n": 100000, "replicas": 8}}"#,
    );
    let elapsed = start.elapsed();
    let h = &res.headline;
    let inner = h["inner_fraction"].as_f64().unwrap();
    let median_ok = h["median_within_bound"].as_bool().unwrap();
    let pass = inner >= 0.9 && median_ok && elapsed < Duration::from_secs(600);
    report(
        out,
        7,
        "eigenfunction decay window",
        pass,
        format!(
            "{} fits ({} skipped), inner fraction {inner:.3}, median rate {:.5} vs W=2 bound + delta {:.5}, \
             gammas {}, runtime {:.1}s",
            h["fitted"],
            h["skipped"],
            h["median_rate"].as_f64().unwrap(),
            res.bounds["w2_upper_bound"].as_f64().unwrap() + h["delta"].as_f64().unwrap(),
            h["reference_gammas"],
            elapsed.as_secs_f64()
        ),
    );
}

fn criterion_8(out: &mut Vec<Outcome>) {
    let res = run_config(
        "fastscan",
        8,
        r#"{"lambda": 0.0, "radius": 0.05, "n": [50, 100, 200], "grid_points": 256, "seeds": 20,
            "margin_fraction": 0.05, "reference": {"n": 100000, "replicas": 8}}"#,
    );
    let violations: u64 = res.headline["violations"].as_array().unwrap().iter().map(|v| v.as_u64().unwrap()).sum();

    // constant-matrix oracle: W = 1, V = 0, n = 10⁴; odd grid so λ₀ is a grid point
    let pot = free_potential(10_000);
    let hyper = fast_scan(&pot, 3.0, 0.01, 10_000, 257).unwrap();
    let center = hyper.rates[128];
    let per_point = hyper
        .lambdas
        .iter()
        .zip(&hyper.rates)
        .map(|(l, r)| (r - (l / 2.0).acosh()).abs())
        .fold(0.0, f64::max);
    let elliptic = fast_scan(&pot, 0.0, 0.01, 10_000, 257).unwrap();
    let pass = violations == 0 && (center - 0.9624).abs() < 1e-3 && per_point < 1e-3 && elliptic.global_min.abs() < 0.05;
    report(
        out,
        8,
        "fast-scan consistency",
        pass,
        format!(
            "violations {violations} by n = 50, 100, 200: {} (threshold {:.5}, worst {:.5}); hyperbolic min_log_s at 3 = {center:.6}, \
             max |rate - acosh(l/2)| = {per_point:.2e}; elliptic global_min = {:.2e}",
            res.headline["violations"],
            res.headline["threshold"].as_f64().unwrap(),
            res.headline["worst_global_min"].as_f64().unwrap(),
            elliptic.global_min
        ),
    );
}

fn criterion_9(out: &mut Vec<Outcome>) {
    let a = archimedes_test(3, 1, 1_000_000, &RngStream::new(9, 0)).unwrap();
    let b = archimedes_test(2, 1, 100_000, &RngStream::new(9, 1)).unwrap();
    let cases: Vec<GeomLemmaCase> =
        (1..=6).map(|i| 0.5 * i as f64).map(|t| GeomLemmaCase::new(vec![t, -t], 1, 0.0).unwrap()).collect();
    let grid = geom_lemma_grid(&cases, 100_000, &RngStream::new(9, 2)).unwrap();
    let slope_ok = (grid.slope + 1.0).abs() <= 0.15;
    let pass = a.ks_corrected < 0.01 && a.ks_uncorrected < 0.01 && b.corrected_passes && !b.uncorrected_passes && slope_ok;
    report(
        out,
        9,
        "geometry lab",
        pass,
        format!(
            "(3,1) KS {:.2e}; (2,1) KS corrected {:.2e} / uncorrected {:.2e} vs critical {:.2e}; \
             lemma slope {:.3} (target -1 +/- 15%), C = {:.3}",
            a.ks_corrected,
            b.ks_corrected,
            b.ks_uncorrected,
            ks_critical_1pct(100_000),
            grid.slope,
            grid.fitted_c
        ),
    );
}

fn criterion_10(out: &mut Vec<Outcome>) {
    let res = run_config(
        "devscan",
        10,
        r#"{"interval": [-0.5, 0.5], "n": [20, 30, 40], "grid_points": 64, "seeds": 20,
            "threshold_fraction": 0.15, "reference": {"n": 20000, "replicas": 4}}"#,
    );
    let fr: Vec<f64> = res.headline["exceedance_fraction"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    report(
        out,
        10,
        "uniform-convergence statistic",
        fr.windows(2).all(|f| f[1] <= f[0]),
        format!("fraction of seeds above 0.15 gamma_1 at n = 20, 30, 40: {fr:?}"),
    );
}

fn csv_bytes(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect()
}

fn criterion_11(out: &mut Vec<Outcome>) {
    let configs = [
        ("lyapunov", r#"{"lambda": 0.5, "n": 500, "replicas": 6}"#),
        (
            "devscan",
            r#"{"interval": [-0.5, 0.5], "n": [5, 8], "grid_points": 6, "seeds": 3, "reference": {"n": 500, "replicas": 2}}"#,
        ),
        (
            "fastscan",
            r#"{"lambda": 0.0, "radius": 0.05, "n": [20, 40], "grid_points": 16, "seeds": 3, "reference": {"n": 500, "replicas": 2}}"#,
        ),
        ("eigdecay", r#"{"window": [-0.3, 0.3], "sites": 300, "seeds": 3, "reference": {"n": 500, "replicas": 2}}"#),
        (
            "geomtest",
            r#"{"archimedes": [{"ell": 4, "k": 2}], "archimedes_samples": 20000,
                "lemma_cases": [{"a_values": [1, -1], "k": 1, "a": 0}], "lemma_samples": 20000}"#,
        ),
        ("bounds", r#"{"lambda": 0.0, "n": 500, "replicas": 4, "rates": [0.01, 0.05]}"#),
    ];
    let tmp = tempfile::tempdir().unwrap();
    let mut identical = 0;
    let mut files = 0;
    for (name, params) in configs {
        let mut outputs = Vec::new();
        for workers in [1, 8] {
            let text = format!(
                r#"{{"experiment": "{name}", "model": {MODEL_W2}, "master_seed": 11, "workers": {workers}, "params": {params}}}"#
            );
            let cfg = parse_config(&text).unwrap();
            let dir = tmp.path().join(format!("{name}-{workers}"));
            run_experiment(&cfg, &dir).unwrap();
            outputs.push(csv_bytes(&dir));
        }
        files += outputs[0].len();
        identical += (outputs[0] == outputs[1] && !outputs[0].is_empty()) as usize;
    }
    report(
        out,
        11,
        "determinism across worker counts",
        identical == configs.len(),
        format!("{identical}/{} experiments byte-identical with workers 1 vs 8 ({files} CSV files)", configs.len()),
    );
}

fn main() {
    // `cargo test` passes harness flags such as `--nocapture`; a filter argument
    // that matches nothing skips the suite, so `cargo test <name>` stays fast.
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    if !filters.is_empty() && !filters.iter().any(|f| "acceptance".contains(f.as_str())) {
        return;
    }
    let start = Instant::now();
    let mut out = Vec::new();
    criterion_1(&mut out);
    criterion_2(&mut out);
    let gammas = criterion_3(&mut out);
    criterion_4(&mut out, gammas[0]);
    criterion_5(&mut out);
    criterion_6(&mut out);
    criterion_7(&mut out);
    criterion_8(&mut out);
    criterion_9(&mut out);
    criterion_10(&mut out);
    criterion_11(&mut out);

    let passed = out.iter().filter(|o| o.pass).count();
    println!("acceptance: {passed}/{} criteria pass in {:.1}s", out.len(), start.elapsed().as_secs_f64());
    let unexpected: Vec<u32> = out.iter().filter(|o| !o.pass && !UNATTAINABLE.contains(&o.id)).map(|o| o.id).collect();
    let stale: Vec<u32> = out.iter().filter(|o| o.pass && UNATTAINABLE.contains(&o.id)).map(|o| o.id).collect();
    if !unexpected.is_empty() || !stale.is_empty() {
        println!("unexpected failures {unexpected:?}; listed as unattainable but passing {stale:?}");
        std::process::exit(1);
    }
}
