//! Expands a config into child runs, executes them and writes the artifacts.

use std::path::PathBuf;
use std::time::Instant;

use noisy_mpo::channels::derive_seed;
use noisy_mpo::experiments::{
    approximate_state, detect_steady_state, fit_contraction, fit_decay, l1_bound_report, l1_bound_report_lindblad, lambda_infinity, norm_decay_experiment,
    nscale_experiment, regression_through_origin, single_step_truncation_experiment, sop_scan, total_error_experiment, CircuitSpec, EnsembleConfig,
    ErrorTrace, ExperimentError, L1BoundReport, RunSpec, TimeSeries, TraceOptions,
};
use noisy_mpo::lindblad::LindbladSpec;
use noisy_mpo::oracle::{pure_damping_l2, pure_depolarizing_l2, rabi_damping_closed_form, rabi_damping_steady_purity, OracleError};
use noisy_mpo::{IsingParams, NoiseKind};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Map, Value};

use crate::config::{Mode, RunConfig};
use crate::output::{write_file, IoError, Table, CSV_SCHEMA, MANIFEST_SCHEMA};

/// Steady state of a Lindblad norm series: the slope of `(1/N) log₂‖ρ‖₂`
/// stays below this for `STEADY_WINDOW` time units.
pub const STEADY_WINDOW: f64 = 2.0;
pub const STEADY_TOL: f64 = 1e-4;
/// R² threshold for contraction fits of single-step errors.
pub const CONTRACTION_R2: f64 = 0.99;

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Experiment(#[from] ExperimentError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Io(#[from] IoError),
    #[error("thread pool: {0}")]
    Pool(String),
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ChildSpec {
    /// One spec evolved in time.
    Run { spec: RunSpec },
    /// One base spec repeated over the system sizes `ns`.
    Scan { spec: RunSpec, ns: Vec<usize> },
    SingleQubit { eta: f64, omega: f64, t_end: f64, dt: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Child {
    pub id: String,
    pub seed: u64,
    pub spec: ChildSpec,
}

/// Child runs in a fixed order; child `i` gets seed `derive_seed(seed, i)`.
pub fn expand(cfg: &RunConfig) -> Vec<Child> {
    let mut specs = Vec::new();
    if let Some(c) = &cfg.circuit {
        let circuit = |n: usize, p: f64| CircuitSpec {
            n,
            depth: c.depth,
            noise: c.noise,
            rate: p,
            seed: 0,
            delta_err: c.delta_err,
            gates: cfg.mode != Mode::PureNoise,
            initial: c.initial,
            truncation: c.truncation,
        };
        match cfg.mode {
            Mode::Nscale | Mode::Sop => {
                for &p in &c.p {
                    specs.push(ChildSpec::Scan { spec: RunSpec::Circuit(circuit(c.n[0], p)), ns: c.n.clone() });
                }
            }
            _ => {
                for &n in &c.n {
                    for &p in &c.p {
                        specs.push(ChildSpec::Run { spec: RunSpec::Circuit(circuit(n, p)) });
                    }
                }
            }
        }
    }
    if let Some(l) = &cfg.lindblad {
        let lindblad = |n: usize, kappa: f64| LindbladSpec {
            n,
            ising: IsingParams { j: l.j, g: l.g, h: l.h },
            noise: l.noise,
            kappa,
            dt: l.dt,
            total_time: l.total_time,
            delta_err: l.delta_err,
            seed: 0,
        };
        if cfg.mode == Mode::Sop {
            for &k in &l.kappa {
                specs.push(ChildSpec::Scan { spec: RunSpec::Lindblad(lindblad(l.n[0], k)), ns: l.n.clone() });
            }
        } else {
            for &n in &l.n {
                for &k in &l.kappa {
                    specs.push(ChildSpec::Run { spec: RunSpec::Lindblad(lindblad(n, k)) });
                }
            }
        }
    }
    if let Some(q) = &cfg.single_qubit {
        for &eta in &q.eta {
            specs.push(ChildSpec::SingleQubit { eta, omega: q.omega, t_end: q.t_end, dt: q.dt });
        }
    }
    specs
        .into_iter()
        .enumerate()
        .map(|(i, spec)| {
            let seed = derive_seed(cfg.seed, i as u64);
            let spec = match spec {
                ChildSpec::Run { spec } => ChildSpec::Run { spec: with_seed(spec, seed) },
                ChildSpec::Scan { spec, ns } => ChildSpec::Scan { spec: with_seed(spec, seed), ns },
                q => q,
            };
            Child { id: format!("child-{i:03}"), seed, spec }
        })
        .collect()
}

fn with_seed(spec: RunSpec, seed: u64) -> RunSpec {
    match spec {
        RunSpec::Circuit(c) => RunSpec::Circuit(CircuitSpec { seed, ..c }),
        RunSpec::Lindblad(l) => RunSpec::Lindblad(LindbladSpec { seed, ..l }),
    }
}

/// What a finished child produced.
#[derive(Clone, Debug, Default)]
struct Outcome {
    files: Vec<(String, String)>,
    results: Map<String, Value>,
}

impl Outcome {
    fn table(&mut self, name: &str, t: &Table) {
        self.files.push((name.to_string(), t.render()));
    }

    fn result(&mut self, key: &str, v: impl Serialize) {
        self.results.insert(key.into(), serde_json::to_value(v).expect("results serialize"));
    }

    /// Records a fit that may legitimately fail on short or flat series.
    fn attempt<T: Serialize>(&mut self, key: &str, r: Result<T, ExperimentError>) -> Option<T> {
        match r {
            Ok(v) => {
                self.result(key, &v);
                Some(v)
            }
            Err(e) => {
                self.result(key, json!({ "error": e.to_string() }));
                None
            }
        }
    }
}

pub struct Summary {
    pub manifest: PathBuf,
    pub children: usize,
}

pub fn run(cfg: &RunConfig) -> Result<Summary, RunError> {
    let start = Instant::now();
    let children = expand(cfg);
    let pool = rayon::ThreadPoolBuilder::new().num_threads(cfg.workers).build().map_err(|e| RunError::Pool(e.to_string()))?;
    let outcomes: Vec<Outcome> = pool.install(|| children.par_iter().map(|c| run_child(cfg, c)).collect::<Result<_, _>>())?;

    let mut entries = Vec::new();
    for (child, outcome) in children.iter().zip(&outcomes) {
        let mut files = Vec::new();
        for (name, text) in &outcome.files {
            let rel = format!("{}/{name}", child.id);
            write_file(&cfg.out.join(&rel), text)?;
            files.push(rel);
        }
        entries.push(json!({
            "id": child.id,
            "seed": child.seed,
            "realizations": cfg.realizations,
            "spec": child.spec,
            "files": files,
            "results": outcome.results,
        }));
    }

    let manifest = json!({
        "tool": "noisy-mpo",
        "version": env!("CARGO_PKG_VERSION"),
        "schema": MANIFEST_SCHEMA,
        "csv_schema": CSV_SCHEMA,
        "mode": cfg.mode.tag(),
        "config": cfg,
        "children": entries,
        "aggregate": aggregate(cfg, &children, &outcomes),
        "runtime_seconds": start.elapsed().as_secs_f64(),
        "timestamp_unix": std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).map_or(0, |d| d.as_secs()),
    });
    let path = cfg.out.join("manifest.json");
    write_file(&path, &(serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n"))?;
    Ok(Summary { manifest: path, children: children.len() })
}

fn run_child(cfg: &RunConfig, child: &Child) -> Result<Outcome, RunError> {
    let ens = EnsembleConfig::new(cfg.realizations, child.seed)?;
    let mut out = Outcome::default();
    match (&child.spec, cfg.mode) {
        (ChildSpec::Run { spec }, Mode::Circuit | Mode::Lindblad) => error_trace(cfg, spec, &ens, &mut out)?,
        (ChildSpec::Run { spec: RunSpec::Circuit(c) }, Mode::PureNoise) => pure_noise(c, &ens, &mut out)?,
        (ChildSpec::Run { spec: spec @ RunSpec::Circuit(c) }, Mode::Fit) => {
            let series = norm_decay_experiment(spec, &ens)?;
            out.table("norm.csv", &series_table(&series, &["t", "log2_norm_per_site"]));
            out.attempt("fit", fit_decay(&series, c.n));
        }
        (ChildSpec::Scan { spec: RunSpec::Circuit(base), ns }, Mode::Nscale) => {
            let r = nscale_experiment(base, ns, &ens)?;
            out.table("nscale.csv", &series_table(&r.series, &["n", "squared_relative_error"]));
            out.result("origin_fit", r.origin_fit);
            out.result("free_fit", r.free_fit);
        }
        (ChildSpec::Scan { spec, ns }, Mode::Sop) => {
            let scans = sop_scan(spec, ns)?;
            let cols: Vec<String> = std::iter::once("t".to_string()).chain(ns.iter().map(|n| format!("s_op_n{n}"))).collect();
            let mut t = Table::new("operator-entanglement", &cols.iter().map(String::as_str).collect::<Vec<_>>());
            for (k, &time) in scans[0].times.iter().enumerate() {
                t.push(std::iter::once(time.into()).chain(scans.iter().map(|s| s.values[k].into())).collect());
            }
            out.table("sop.csv", &t);
            let maxima: Map<String, Value> =
                ns.iter().zip(&scans).map(|(n, s)| (n.to_string(), json!(s.values.iter().fold(0.0f64, |m, v| m.max(*v))))).collect();
            out.result("max_s_op", maxima);
        }
        (&ChildSpec::SingleQubit { eta, omega, t_end, dt }, _) => single_qubit(eta, omega, t_end, dt, &mut out)?,
        (spec, mode) => unreachable!("config resolution pairs mode {mode:?} with {spec:?}"),
    }
    if cfg.dump_state {
        if let ChildSpec::Run { spec } | ChildSpec::Scan { spec, .. } = &child.spec {
            // The trajectory of realization 0.
            let state = approximate_state(&with_seed(spec.clone(), first_seed(spec, &ens)))?;
            out.files.push(("state.json".into(), serde_json::to_string(&state.snapshot()).expect("snapshot serializes") + "\n"));
        }
    }
    Ok(out)
}

fn first_seed(spec: &RunSpec, ens: &EnsembleConfig) -> u64 {
    match spec {
        RunSpec::Circuit(c) if c.gates => ens.seed(0),
        RunSpec::Circuit(c) => c.seed,
        RunSpec::Lindblad(l) => l.seed,
    }
}

fn series_table(s: &TimeSeries, cols: &[&str]) -> Table {
    let mut t = Table::new(&s.quantity, cols);
    for (x, y) in s.times.iter().zip(&s.values) {
        t.push(vec![(*x).into(), (*y).into()]);
    }
    t
}

fn trace_table(trace: &ErrorTrace) -> Table {
    let mut t = Table::new("error-trace", &["t", "norm", "err_l2", "err_l1", "lambda", "bound", "discarded", "max_rank", "trace_rescale"]);
    for r in &trace.rows {
        t.push(vec![
            r.t.into(),
            r.norm.into(),
            r.err_l2.into(),
            r.err_l1.into(),
            r.lambda.into(),
            r.bound.into(),
            r.discarded.into(),
            r.max_rank.into(),
            r.trace_rescale.into(),
        ]);
    }
    t
}

fn l1_table(report: &L1BoundReport) -> Table {
    let mut t = Table::new("l1-bounds", &["t", "measured", "empirical", "naive"]);
    for r in &report.rows {
        t.push(vec![r.t.into(), r.measured.into(), r.empirical.into(), r.naive.into()]);
    }
    t
}

fn l1_summary(r: &L1BoundReport) -> Value {
    json!({
        "steady_start": r.steady_start,
        "lambda_inf": r.lambda_inf,
        "steady_bound": r.steady_bound,
        "steady_tightening": r.steady_tightening,
    })
}

fn error_trace(cfg: &RunConfig, spec: &RunSpec, ens: &EnsembleConfig, out: &mut Outcome) -> Result<(), RunError> {
    let (l1, audit, steps): (bool, bool, Vec<f64>) = match spec {
        RunSpec::Circuit(_) => {
            let c = cfg.circuit.as_ref().expect("circuit section");
            (c.l1, c.audit, c.single_step.iter().map(|&t| t as f64).collect())
        }
        RunSpec::Lindblad(_) => {
            let l = cfg.lindblad.as_ref().expect("lindblad section");
            (l.l1, l.audit, l.single_step.clone())
        }
    };
    let trace = total_error_experiment(spec, ens, TraceOptions { l1, audit })?;
    out.table("errors.csv", &trace_table(&trace));
    if audit {
        out.result("audit", &trace.audit);
    }
    let n = spec.n();

    // Single-step runs first: a Lindblad L1 report needs their contraction rate.
    let mut rates = Vec::new();
    for &t_e in &steps {
        let series = single_step_truncation_experiment(spec, t_e, ens)?;
        let name = format!("single-step-{}.csv", fmt_time(t_e));
        out.table(&name, &series_table(&series, &["t", "err_l2"]));
        if let Some(fit) = out.attempt(&format!("contraction_{}", fmt_time(t_e)), fit_contraction(&series, t_e, n, CONTRACTION_R2)) {
            rates.push(fit.rate);
        }
    }

    match spec {
        RunSpec::Circuit(_) => {
            if let Some(fit) = out.attempt("fit", fit_decay(&trace.norm_series()?, n)) {
                if l1 {
                    match l1_bound_report(&trace, &fit) {
                        Ok(report) => {
                            out.result("l1", l1_summary(&report));
                            out.table("l1-bounds.csv", &l1_table(&report));
                        }
                        Err(e) => out.result("l1", json!({ "error": e.to_string() })),
                    }
                }
            }
        }
        RunSpec::Lindblad(_) => {
            let steady = detect_steady_state(&trace.norm_series()?, STEADY_WINDOW, STEADY_TOL);
            out.result("steady_start", steady);
            if let Some(s) = steady {
                out.result("lambda_inf", lambda_infinity(&trace, s));
                if let (true, Some(&gamma)) = (l1, rates.first()) {
                    let report = l1_bound_report_lindblad(&trace, gamma, s)?;
                    out.result("l1", l1_summary(&report));
                    out.table("l1-bounds.csv", &l1_table(&report));
                }
            }
        }
    }
    Ok(())
}

/// `3` for whole numbers, `0.25` otherwise; used in file and result names.
fn fmt_time(t: f64) -> String {
    if t.fract() == 0.0 {
        format!("{}", t as i64)
    } else {
        format!("{t}")
    }
}

fn pure_noise(c: &CircuitSpec, ens: &EnsembleConfig, out: &mut Outcome) -> Result<(), RunError> {
    let series = norm_decay_experiment(&RunSpec::Circuit(c.clone()), ens)?;
    let closed = |t: u32| match (c.noise, c.initial) {
        (NoiseKind::Depolarizing, _) => pure_depolarizing_l2(c.rate, t),
        (NoiseKind::AmplitudeDamping, noisy_mpo::experiments::InitialState::Ones) => pure_damping_l2(c.rate, t),
        // |0…0⟩ is the fixed point of damping.
        (NoiseKind::AmplitudeDamping, noisy_mpo::experiments::InitialState::Zeros) => 0.0,
    };
    let mut t = Table::new(&series.quantity, &["t", "log2_norm_per_site", "closed_form"]);
    let mut worst = 0.0f64;
    // t = 0 is the pure initial state; rows start at the first noise layer.
    for (time, v) in series.times.iter().zip(&series.values).skip(1) {
        let exact = closed(*time as u32);
        worst = worst.max((v - exact).abs());
        t.push(vec![(*time).into(), (*v).into(), exact.into()]);
    }
    out.table("norm.csv", &t);
    out.result("max_closed_form_deviation", worst);
    Ok(())
}

fn single_qubit(eta: f64, omega: f64, t_end: f64, dt: f64, out: &mut Outcome) -> Result<(), RunError> {
    let steps = (t_end / dt).round() as usize;
    let mut t = Table::new("driven-damped-qubit", &["t", "rho11", "im_rho10", "purity"]);
    let mut last = None;
    for k in 0..=steps {
        let time = (k as f64 * dt).min(t_end);
        let q = rabi_damping_closed_form(omega, eta * omega, time)?;
        t.push(vec![time.into(), q.rho11.re.into(), q.rho10.im.into(), q.purity().into()]);
        last = Some(q.purity());
    }
    out.table("qubit.csv", &t);
    out.result("steady_purity", rabi_damping_steady_purity(eta));
    out.result("final_purity", last);
    Ok(())
}

/// Cross-child results: in fit mode, `γ_p = c·p` through the origin for every N with two or more rates.
fn aggregate(cfg: &RunConfig, children: &[Child], outcomes: &[Outcome]) -> Value {
    if cfg.mode != Mode::Fit {
        return Value::Null;
    }
    let mut by_n: std::collections::BTreeMap<usize, (Vec<f64>, Vec<f64>)> = Default::default();
    for (child, o) in children.iter().zip(outcomes) {
        let (ChildSpec::Run { spec: RunSpec::Circuit(c) }, Some(g)) = (&child.spec, o.results.get("fit").and_then(|f| f.get("gamma")).and_then(Value::as_f64)) else {
            continue;
        };
        let e = by_n.entry(c.n).or_default();
        e.0.push(c.rate);
        e.1.push(g);
    }
    let fits: Map<String, Value> = by_n
        .into_iter()
        .filter(|(_, (ps, _))| ps.len() >= 2)
        .filter_map(|(n, (ps, gs))| regression_through_origin(&ps, &gs).ok().map(|f| (n.to_string(), json!({ "c": f.slope, "fit": f }))))
        .collect();
    json!({ "gamma_vs_rate": fits })
}
