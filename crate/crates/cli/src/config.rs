//! Strict JSON experiment configs. Validation walks the whole document and
//! reports every problem at once, each tagged with its JSON path.

use std::fmt;
use std::path::PathBuf;

use anderson_strip::spectrum::FitPolicy;
use anderson_strip::{GeomLemmaCase, ModelKind, PotentialModel, SiteLaw};
use nalgebra::DMatrix;
use serde_json::{Map, Value};

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Experiment {
    Lyapunov,
    Devscan,
    Fastscan,
    Eigdecay,
    Geomtest,
    Bounds,
}

impl Experiment {
    pub const ALL: [Experiment; 6] = [
        Experiment::Lyapunov,
        Experiment::Devscan,
        Experiment::Fastscan,
        Experiment::Eigdecay,
        Experiment::Geomtest,
        Experiment::Bounds,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Experiment::Lyapunov => "lyapunov",
            Experiment::Devscan => "devscan",
            Experiment::Fastscan => "fastscan",
            Experiment::Eigdecay => "eigdecay",
            Experiment::Geomtest => "geomtest",
            Experiment::Bounds => "bounds",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|e| e.as_str() == s)
    }

    fn needs_model(self) -> bool {
        !matches!(self, Experiment::Geomtest | Experiment::Bounds)
    }
}

/// Every validation problem found in one config document.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfigErrors(pub Vec<String>);

impl fmt::Display for ConfigErrors {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{} configuration error(s):", self.0.len())?;
        for e in &self.0 {
            writeln!(f, "  - {e}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ConfigErrors {}

/// Pilot run that produces reference Lyapunov exponents.
#[derive(Clone, Debug, PartialEq)]
pub struct ReferenceSpec {
    pub n: usize,
    pub replicas: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LyapunovParams {
    pub lambda: f64,
    pub n: usize,
    pub replicas: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DevscanParams {
    pub interval: (f64, f64),
    pub n_values: Vec<usize>,
    pub grid_points: usize,
    pub seeds: usize,
    /// Exceedance threshold as a fraction of the reference `γ̂₁`.
    pub threshold_fraction: f64,
    pub reference: ReferenceSpec,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FastscanParams {
    pub lambda: f64,
    pub radius: f64,
    pub n_values: Vec<usize>,
    pub grid_points: usize,
    pub seeds: usize,
    /// Margin below `−bound` that counts as a violation, as a fraction of `γ̂₁`.
    pub margin_fraction: f64,
    /// `ε` of the Lipschitz slack, as a fraction of `γ̂₁`.
    pub epsilon_fraction: f64,
    pub reference: ReferenceSpec,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EigdecayParams {
    pub window: (f64, f64),
    pub sites: usize,
    pub seeds: usize,
    pub fit: FitPolicy,
    pub delta_fraction: f64,
    /// Energy of the reference pilot; defaults to the window midpoint.
    pub reference_lambda: f64,
    pub reference: ReferenceSpec,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GeomtestParams {
    pub archimedes: Vec<(usize, usize)>,
    pub archimedes_samples: usize,
    pub lemma_cases: Vec<GeomLemmaCase>,
    pub lemma_samples: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub enum GammaSource {
    Given(Vec<f64>),
    Estimate(LyapunovParams),
}

#[derive(Clone, Debug, PartialEq)]
pub struct BoundsParams {
    pub source: GammaSource,
    pub rates: Vec<f64>,
    pub delta: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Params {
    Lyapunov(LyapunovParams),
    Devscan(DevscanParams),
    Fastscan(FastscanParams),
    Eigdecay(EigdecayParams),
    Geomtest(GeomtestParams),
    Bounds(BoundsParams),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub model: Option<PotentialModel>,
    pub master_seed: u64,
    pub workers: Option<usize>,
    pub output_dir: Option<PathBuf>,
    pub params: Params,
    /// The document as parsed, echoed into the summary.
    pub raw: Value,
}

impl ExperimentConfig {
    /// The model, for experiments that require one.
    pub fn model(&self) -> &PotentialModel {
        self.model.as_ref().expect("validated config carries a model")
    }
}

const TOP_KEYS: [&str; 7] = ["experiment", "model", "allow_unbounded", "master_seed", "workers", "output_dir", "params"];

/// Parses a config whose `experiment` field names the experiment.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, ConfigErrors> {
    parse_config_for(text, None)
}

/// Parses a config for `experiment`; a mismatching `experiment` field is an error.
pub fn parse_config_for(text: &str, experiment: Option<Experiment>) -> Result<ExperimentConfig, ConfigErrors> {
    let raw: Value = serde_json::from_str(text).map_err(|e| ConfigErrors(vec![format!("invalid JSON: {e}")]))?;
    let mut ctx = Ctx::default();
    let Some(top) = Obj::root(&mut ctx, &raw) else {
        return Err(ConfigErrors(ctx.errors));
    };
    top.check_keys(&mut ctx, &TOP_KEYS);

    let named = match top.get("experiment") {
        None => None,
        Some(Value::String(s)) => match Experiment::parse(s) {
            Some(e) => Some(e),
            None => {
                ctx.err("experiment", format!("unknown experiment {s:?}"));
                None
            }
        },
        Some(_) => {
            ctx.err("experiment", "must be a string");
            None
        }
    };
    let experiment = match (experiment, named) {
        (Some(a), Some(b)) if a != b => {
            ctx.err("experiment", format!("config is for {:?}, command asked for {:?}", b.as_str(), a.as_str()));
            Some(a)
        }
        (Some(a), _) => Some(a),
        (None, Some(b)) => Some(b),
        (None, None) => {
            ctx.err("experiment", "missing required field");
            None
        }
    };

    let allow_unbounded = top.bool_opt(&mut ctx, "allow_unbounded").unwrap_or(false);
    let master_seed = top.u64_req(&mut ctx, "master_seed");
    let workers = top.count_opt(&mut ctx, "workers", 1);
    let output_dir = match top.get("output_dir") {
        None => None,
        Some(Value::String(s)) if !s.is_empty() => Some(PathBuf::from(s)),
        Some(_) => {
            ctx.err("output_dir", "must be a non-empty string");
            None
        }
    };

    let model = match (experiment, top.get("model")) {
        (_, Some(v)) => parse_model(&mut ctx, v, allow_unbounded),
        (Some(e), None) if e.needs_model() => {
            ctx.err("model", "missing required field");
            None
        }
        _ => None,
    };

    let params = experiment.and_then(|e| {
        let p = top.sub(&mut ctx, "params", true)?;
        match e {
            Experiment::Lyapunov => parse_lyapunov(&mut ctx, &p).map(Params::Lyapunov),
            Experiment::Devscan => parse_devscan(&mut ctx, &p).map(Params::Devscan),
            Experiment::Fastscan => parse_fastscan(&mut ctx, &p).map(Params::Fastscan),
            Experiment::Eigdecay => parse_eigdecay(&mut ctx, &p).map(Params::Eigdecay),
            Experiment::Geomtest => parse_geomtest(&mut ctx, &p).map(Params::Geomtest),
            Experiment::Bounds => parse_bounds(&mut ctx, &p, model.is_some()).map(Params::Bounds),
        }
    });

    if !ctx.errors.is_empty() {
        return Err(ConfigErrors(ctx.errors));
    }
    match (experiment, master_seed, params) {
        (Some(experiment), Some(master_seed), Some(params)) => Ok(ExperimentConfig {
            experiment,
            model,
            master_seed,
            workers,
            output_dir,
            params,
            raw,
        }),
        _ => Err(ConfigErrors(vec!["incomplete configuration".into()])),
    }
}

#[derive(Default)]
struct Ctx {
    errors: Vec<String>,
}

impl Ctx {
    fn err(&mut self, path: &str, msg: impl fmt::Display) {
        self.errors.push(format!("{path}: {msg}"));
    }
}

struct Obj<'v> {
    path: String,
    map: &'v Map<String, Value>,
}

impl<'v> Obj<'v> {
    fn root(ctx: &mut Ctx, v: &'v Value) -> Option<Self> {
        match v {
            Value::Object(map) => Some(Obj { path: String::new(), map }),
            _ => {
                ctx.err("$", "config must be a JSON object");
                None
            }
        }
    }

    fn at(&self, key: &str) -> String {
        if self.path.is_empty() {
            key.to_string()
        } else {
            format!("{}.{key}", self.path)
        }
    }

    fn get(&self, key: &str) -> Option<&'v Value> {
        self.map.get(key)
    }

    fn check_keys(&self, ctx: &mut Ctx, allowed: &[&str]) {
        for k in self.map.keys() {
            if !allowed.contains(&k.as_str()) {
                ctx.err(&self.at(k), format!("unknown field (allowed: {})", allowed.join(", ")));
            }
        }
    }

    fn sub(&self, ctx: &mut Ctx, key: &str, required: bool) -> Option<Obj<'v>> {
        match self.get(key) {
            Some(Value::Object(map)) => Some(Obj { path: self.at(key), map }),
            Some(_) => {
                ctx.err(&self.at(key), "must be an object");
                None
            }
            None => {
                if required {
                    ctx.err(&self.at(key), "missing required field");
                }
                None
            }
        }
    }

    fn f64_opt(&self, ctx: &mut Ctx, key: &str) -> Option<f64> {
        match self.get(key)? {
            Value::Number(n) => n.as_f64().filter(|x| x.is_finite()).or_else(|| {
                ctx.err(&self.at(key), "must be a finite number");
                None
            }),
            _ => {
                ctx.err(&self.at(key), "must be a number");
                None
            }
        }
    }

    fn f64_req(&self, ctx: &mut Ctx, key: &str) -> Option<f64> {
        if self.get(key).is_none() {
            ctx.err(&self.at(key), "missing required field");
            return None;
        }
        self.f64_opt(ctx, key)
    }

    fn positive_opt(&self, ctx: &mut Ctx, key: &str) -> Option<f64> {
        let x = self.f64_opt(ctx, key)?;
        if x <= 0.0 {
            ctx.err(&self.at(key), format!("must be positive, got {x}"));
            return None;
        }
        Some(x)
    }

    fn positive_req(&self, ctx: &mut Ctx, key: &str) -> Option<f64> {
        if self.get(key).is_none() {
            ctx.err(&self.at(key), "missing required field");
            return None;
        }
        self.positive_opt(ctx, key)
    }

    fn u64_req(&self, ctx: &mut Ctx, key: &str) -> Option<u64> {
        match self.get(key) {
            Some(Value::Number(n)) if n.as_u64().is_some() => n.as_u64(),
            Some(_) => {
                ctx.err(&self.at(key), "must be a non-negative integer");
                None
            }
            None => {
                ctx.err(&self.at(key), "missing required field");
                None
            }
        }
    }

    fn count_value(&self, ctx: &mut Ctx, path: &str, v: &Value, min: usize) -> Option<usize> {
        match v.as_u64() {
            Some(k) if k as usize >= min => Some(k as usize),
            Some(k) => {
                ctx.err(path, format!("must be at least {min}, got {k}"));
                None
            }
            None => {
                ctx.err(path, format!("must be an integer >= {min}"));
                None
            }
        }
    }

    fn count_opt(&self, ctx: &mut Ctx, key: &str, min: usize) -> Option<usize> {
        let v = self.get(key)?;
        self.count_value(ctx, &self.at(key), v, min)
    }

    fn count_req(&self, ctx: &mut Ctx, key: &str, min: usize) -> Option<usize> {
        if self.get(key).is_none() {
            ctx.err(&self.at(key), "missing required field");
            return None;
        }
        self.count_opt(ctx, key, min)
    }

    fn bool_opt(&self, ctx: &mut Ctx, key: &str) -> Option<bool> {
        match self.get(key)? {
            Value::Bool(b) => Some(*b),
            _ => {
                ctx.err(&self.at(key), "must be true or false");
                None
            }
        }
    }

    fn array_req(&self, ctx: &mut Ctx, key: &str) -> Option<&'v Vec<Value>> {
        match self.get(key) {
            Some(Value::Array(a)) => Some(a),
            Some(_) => {
                ctx.err(&self.at(key), "must be an array");
                None
            }
            None => {
                ctx.err(&self.at(key), "missing required field");
                None
            }
        }
    }

    /// A single count or a non-empty list of counts.
    fn counts_req(&self, ctx: &mut Ctx, key: &str, min: usize) -> Option<Vec<usize>> {
        match self.get(key) {
            Some(Value::Array(a)) => {
                if a.is_empty() {
                    ctx.err(&self.at(key), "must not be empty");
                    return None;
                }
                let out: Vec<Option<usize>> = a
                    .iter()
                    .enumerate()
                    .map(|(i, v)| self.count_value(ctx, &format!("{}[{i}]", self.at(key)), v, min))
                    .collect();
                out.into_iter().collect()
            }
            Some(v) => self.count_value(ctx, &self.at(key), v, min).map(|k| vec![k]),
            None => {
                ctx.err(&self.at(key), "missing required field");
                None
            }
        }
    }

    fn numbers_req(&self, ctx: &mut Ctx, key: &str) -> Option<Vec<f64>> {
        let a = self.array_req(ctx, key)?;
        let mut out = Vec::with_capacity(a.len());
        for (i, v) in a.iter().enumerate() {
            match v.as_f64().filter(|x| x.is_finite()) {
                Some(x) => out.push(x),
                None => {
                    ctx.err(&format!("{}[{i}]", self.at(key)), "must be a finite number");
                    return None;
                }
            }
        }
        Some(out)
    }

    /// `[a, b]` with `a < b`.
    fn interval_req(&self, ctx: &mut Ctx, key: &str) -> Option<(f64, f64)> {
        let v = self.numbers_req(ctx, key)?;
        match v.as_slice() {
            [a, b] if a < b => Some((*a, *b)),
            [a, b] => {
                ctx.err(&self.at(key), format!("needs a < b, got [{a}, {b}]"));
                None
            }
            _ => {
                ctx.err(&self.at(key), "must be a two-element array [a, b]");
                None
            }
        }
    }
}

const COMPACT_SUPPORT: &str = "gaussian site law is unbounded; the compact-support policy requires bounded site laws \
     (set allow_unbounded = true to override)";

fn parse_law(ctx: &mut Ctx, obj: &Obj, allow_unbounded: bool) -> Option<SiteLaw> {
    let kind = match obj.get("type") {
        Some(Value::String(s)) => s.as_str(),
        Some(_) => {
            ctx.err(&obj.at("type"), "must be a string");
            return None;
        }
        None => {
            ctx.err(&obj.at("type"), "missing required field");
            return None;
        }
    };
    let law = match kind {
        "uniform" => {
            obj.check_keys(ctx, &["type", "lo", "hi"]);
            SiteLaw::UniformInterval { lo: obj.f64_req(ctx, "lo")?, hi: obj.f64_req(ctx, "hi")? }
        }
        "bernoulli" => {
            obj.check_keys(ctx, &["type", "a", "b", "p"]);
            let (a, b, p) = (obj.f64_req(ctx, "a"), obj.f64_req(ctx, "b"), obj.f64_req(ctx, "p"));
            SiteLaw::Bernoulli { a: a?, b: b?, p: p? }
        }
        "point_mass" => {
            obj.check_keys(ctx, &["type", "c"]);
            SiteLaw::PointMass { c: obj.f64_req(ctx, "c")? }
        }
        "gaussian" => {
            obj.check_keys(ctx, &["type", "mean", "sd"]);
            let (mean, sd) = (obj.f64_req(ctx, "mean"), obj.f64_req(ctx, "sd"));
            SiteLaw::Gaussian { mean: mean?, sd: sd? }
        }
        other => {
            ctx.err(&obj.at("type"), format!("unknown law {other:?} (uniform, bernoulli, point_mass, gaussian)"));
            return None;
        }
    };
    if let Err(e) = law.validate() {
        ctx.err(&obj.path, e);
        return None;
    }
    if !law.is_bounded() && !allow_unbounded {
        ctx.err(&obj.path, COMPACT_SUPPORT);
        return None;
    }
    Some(law)
}

fn parse_model(ctx: &mut Ctx, v: &Value, allow_unbounded: bool) -> Option<PotentialModel> {
    let Value::Object(map) = v else {
        ctx.err("model", "must be an object");
        return None;
    };
    let obj = Obj { path: "model".into(), map };
    let kind = match obj.get("kind") {
        Some(Value::String(s)) => s.clone(),
        Some(_) => {
            ctx.err("model.kind", "must be a string");
            return None;
        }
        None => {
            ctx.err("model.kind", "missing required field");
            return None;
        }
    };
    let model = match kind.as_str() {
        "schrodinger_strip" | "general_symmetric" => {
            obj.check_keys(ctx, &["kind", "width", "law"]);
            let width = obj.count_req(ctx, "width", 1);
            let law = obj.sub(ctx, "law", true).and_then(|l| parse_law(ctx, &l, allow_unbounded));
            let (width, law) = (width?, law?);
            let kind = if kind == "schrodinger_strip" {
                ModelKind::SchrodingerStrip(law)
            } else {
                ModelKind::GeneralSymmetric(law)
            };
            PotentialModel::new(width, kind)
        }
        "deterministic" => {
            obj.check_keys(ctx, &["kind", "matrix"]);
            let rows = obj.array_req(ctx, "matrix")?;
            let w = rows.len();
            let mut entries = Vec::with_capacity(w * w);
            for (i, row) in rows.iter().enumerate() {
                match row.as_array() {
                    Some(r) if r.len() == w && r.iter().all(|x| x.as_f64().is_some_and(f64::is_finite)) => {
                        entries.extend(r.iter().map(|x| x.as_f64().unwrap_or_default()));
                    }
                    _ => {
                        ctx.err(&format!("model.matrix[{i}]"), format!("must be {w} finite numbers"));
                        return None;
                    }
                }
            }
            if w == 0 {
                ctx.err("model.matrix", "must not be empty");
                return None;
            }
            PotentialModel::deterministic(DMatrix::from_row_slice(w, w, &entries))
        }
        other => {
            ctx.err("model.kind", format!("unknown model {other:?} (schrodinger_strip, general_symmetric, deterministic)"));
            return None;
        }
    };
    model.map_err(|e| ctx.err("model", e)).ok()
}

fn parse_reference(ctx: &mut Ctx, p: &Obj) -> Option<ReferenceSpec> {
    let r = p.sub(ctx, "reference", true)?;
    r.check_keys(ctx, &["n", "replicas"]);
    let n = r.count_req(ctx, "n", 1);
    let replicas = r.count_req(ctx, "replicas", 2);
    Some(ReferenceSpec { n: n?, replicas: replicas? })
}

fn parse_lyapunov(ctx: &mut Ctx, p: &Obj) -> Option<LyapunovParams> {
    p.check_keys(ctx, &["lambda", "n", "replicas"]);
    let lambda = p.f64_req(ctx, "lambda");
    let n = p.count_req(ctx, "n", 1);
    let replicas = p.count_req(ctx, "replicas", 2);
    Some(LyapunovParams { lambda: lambda?, n: n?, replicas: replicas? })
}

fn parse_devscan(ctx: &mut Ctx, p: &Obj) -> Option<DevscanParams> {
    p.check_keys(ctx, &["interval", "n", "grid_points", "seeds", "threshold_fraction", "reference"]);
    let interval = p.interval_req(ctx, "interval");
    let n_values = p.counts_req(ctx, "n", 1);
    let grid_points = p.count_req(ctx, "grid_points", 2);
    let seeds = p.count_req(ctx, "seeds", 1);
    let threshold_fraction = p.positive_opt(ctx, "threshold_fraction").unwrap_or(0.15);
    let reference = parse_reference(ctx, p);
    Some(DevscanParams {
        interval: interval?,
        n_values: n_values?,
        grid_points: grid_points?,
        seeds: seeds?,
        threshold_fraction,
        reference: reference?,
    })
}

fn parse_fastscan(ctx: &mut Ctx, p: &Obj) -> Option<FastscanParams> {
    p.check_keys(
        ctx,
        &["lambda", "radius", "n", "grid_points", "seeds", "margin_fraction", "epsilon_fraction", "reference"],
    );
    let lambda = p.f64_req(ctx, "lambda");
    let radius = p.positive_req(ctx, "radius");
    let n_values = p.counts_req(ctx, "n", 1);
    let grid_points = p.count_req(ctx, "grid_points", 1);
    let seeds = p.count_req(ctx, "seeds", 1);
    let margin_fraction = p.positive_opt(ctx, "margin_fraction").unwrap_or(0.05);
    let epsilon_fraction = p.positive_opt(ctx, "epsilon_fraction").unwrap_or(0.1);
    let reference = parse_reference(ctx, p);
    Some(FastscanParams {
        lambda: lambda?,
        radius: radius?,
        n_values: n_values?,
        grid_points: grid_points?,
        seeds: seeds?,
        margin_fraction,
        epsilon_fraction,
        reference: reference?,
    })
}

fn parse_fit(ctx: &mut Ctx, p: &Obj) -> FitPolicy {
    let mut fit = FitPolicy::default();
    let Some(f) = p.sub(ctx, "fit", false) else {
        return fit;
    };
    f.check_keys(ctx, &["buffer", "max_fraction", "min_points", "center_max_fraction", "robust"]);
    if let Some(b) = f.count_opt(ctx, "buffer", 0) {
        fit.buffer = b;
    }
    for (key, slot) in [("max_fraction", &mut fit.max_fraction), ("center_max_fraction", &mut fit.center_max_fraction)] {
        if let Some(x) = f.positive_opt(ctx, key) {
            if x > 1.0 {
                ctx.err(&f.at(key), format!("must be at most 1, got {x}"));
            } else {
                *slot = x;
            }
        }
    }
    if let Some(m) = f.count_opt(ctx, "min_points", 2) {
        fit.min_points = m;
    }
    if let Some(r) = f.bool_opt(ctx, "robust") {
        fit.robust = r;
    }
    fit
}

fn parse_eigdecay(ctx: &mut Ctx, p: &Obj) -> Option<EigdecayParams> {
    p.check_keys(
        ctx,
        &["window", "sites", "seeds", "fit", "delta_fraction", "reference_lambda", "reference"],
    );
    let window = p.interval_req(ctx, "window");
    let sites = p.count_req(ctx, "sites", 2);
    let seeds = p.count_req(ctx, "seeds", 1);
    let fit = parse_fit(ctx, p);
    let delta_fraction = p.positive_opt(ctx, "delta_fraction").unwrap_or(0.1);
    let reference_lambda = p.f64_opt(ctx, "reference_lambda");
    let reference = parse_reference(ctx, p);
    let window = window?;
    Some(EigdecayParams {
        window,
        sites: sites?,
        seeds: seeds?,
        fit,
        delta_fraction,
        reference_lambda: reference_lambda.unwrap_or(0.5 * (window.0 + window.1)),
        reference: reference?,
    })
}

fn parse_geomtest(ctx: &mut Ctx, p: &Obj) -> Option<GeomtestParams> {
    p.check_keys(ctx, &["archimedes", "archimedes_samples", "lemma_cases", "lemma_samples"]);
    let mut archimedes = Vec::new();
    if let Some(Value::Array(list)) = p.get("archimedes") {
        for (i, v) in list.iter().enumerate() {
            let path = format!("{}[{i}]", p.at("archimedes"));
            let Value::Object(map) = v else {
                ctx.err(&path, "must be an object {ell, k}");
                continue;
            };
            let o = Obj { path, map };
            o.check_keys(ctx, &["ell", "k"]);
            if let (Some(ell), Some(k)) = (o.count_req(ctx, "ell", 2), o.count_req(ctx, "k", 1)) {
                if k >= ell {
                    ctx.err(&o.path, format!("needs k < ell, got ell = {ell}, k = {k}"));
                } else {
                    archimedes.push((ell, k));
                }
            }
        }
    } else if p.get("archimedes").is_some() {
        ctx.err(&p.at("archimedes"), "must be an array");
    }
    let archimedes_samples = p.count_opt(ctx, "archimedes_samples", 10_000).unwrap_or(1_000_000);

    let mut lemma_cases = Vec::new();
    if let Some(Value::Array(list)) = p.get("lemma_cases") {
        for (i, v) in list.iter().enumerate() {
            let path = format!("{}[{i}]", p.at("lemma_cases"));
            let Value::Object(map) = v else {
                ctx.err(&path, "must be an object {a_values, k, a}");
                continue;
            };
            let o = Obj { path, map };
            o.check_keys(ctx, &["a_values", "k", "a"]);
            let (a_values, k, a) = (o.numbers_req(ctx, "a_values"), o.count_req(ctx, "k", 1), o.f64_req(ctx, "a"));
            if let (Some(a_values), Some(k), Some(a)) = (a_values, k, a) {
                match GeomLemmaCase::new(a_values, k, a) {
                    Ok(c) => lemma_cases.push(c),
                    Err(e) => ctx.err(&o.path, e),
                }
            }
        }
    } else if p.get("lemma_cases").is_some() {
        ctx.err(&p.at("lemma_cases"), "must be an array");
    }
    let lemma_samples = p.count_opt(ctx, "lemma_samples", 1_000).unwrap_or(100_000);
    if p.get("archimedes").is_none() && p.get("lemma_cases").is_none() {
        ctx.err(&p.path, "needs at least one of archimedes, lemma_cases");
    }
    Some(GeomtestParams { archimedes, archimedes_samples, lemma_cases, lemma_samples })
}

fn parse_bounds(ctx: &mut Ctx, p: &Obj, has_model: bool) -> Option<BoundsParams> {
    p.check_keys(ctx, &["gammas", "lambda", "n", "replicas", "rates", "delta"]);
    let source = if p.get("gammas").is_some() {
        for key in ["lambda", "n", "replicas"] {
            if p.get(key).is_some() {
                ctx.err(&p.at(key), "not allowed together with gammas");
            }
        }
        let g = p.numbers_req(ctx, "gammas")?;
        if g.len() < 2 {
            ctx.err(&p.at("gammas"), "needs at least 2 exponents");
            return None;
        }
        GammaSource::Given(g)
    } else {
        if !has_model {
            ctx.err(&p.path, "without gammas, a model is required to estimate them");
        }
        GammaSource::Estimate(parse_lyapunov_fields(ctx, p)?)
    };
    let rates = if p.get("rates").is_some() { p.numbers_req(ctx, "rates")? } else { Vec::new() };
    let delta = p.positive_opt(ctx, "delta");
    Some(BoundsParams { source, rates, delta })
}

fn parse_lyapunov_fields(ctx: &mut Ctx, p: &Obj) -> Option<LyapunovParams> {
    let lambda = p.f64_req(ctx, "lambda");
    let n = p.count_req(ctx, "n", 1);
    let replicas = p.count_req(ctx, "replicas", 2);
    Some(LyapunovParams { lambda: lambda?, n: n?, replicas: replicas? })
}
