//! Run configuration: a TOML file plus command-line overrides, resolved into a
//! fully specified [`RunConfig`] with every default written out.

use std::path::PathBuf;

use noisy_mpo::experiments::{InitialState, TruncationSchedule};
use noisy_mpo::lindblad::LindbladSpec;
use noisy_mpo::state::DENSE_LIMIT;
use noisy_mpo::NoiseKind;
use serde::{Deserialize, Deserializer, Serialize};
use thiserror::Error;

pub const DEFAULT_REALIZATIONS: usize = 100;
pub const DEFAULT_DELTA_ERR: f64 = 1e-6;
pub const DEFAULT_DEPTH: usize = 30;
pub const DEFAULT_NSCALE_DEPTH: usize = 2;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("{0}")]
    Parse(String),

    #[error("missing `{0}`")]
    Missing(&'static str),

    #[error("`{key}` = {value}: expected {expected}")]
    Range { key: String, value: String, expected: String },

    #[error("{0}")]
    Sections(String),
}

fn range(key: impl Into<String>, value: impl std::fmt::Display, expected: impl Into<String>) -> ConfigError {
    ConfigError::Range { key: key.into(), value: value.to_string(), expected: expected.into() }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Total error trace of truncated circuits against the exact state.
    Circuit,
    /// Total error trace of the Trotterized Lindbladian.
    Lindblad,
    /// Norm decay under noise alone.
    PureNoise,
    /// Driven, damped single qubit from its closed form.
    SingleQubit,
    /// Squared relative error against system size at shallow depth.
    Nscale,
    /// Norm decay with fitted decay rate and steady-state norm.
    Fit,
    /// Half-chain operator entanglement along the run.
    Sop,
}

impl Mode {
    pub fn tag(self) -> &'static str {
        match self {
            Mode::Circuit => "circuit",
            Mode::Lindblad => "lindblad",
            Mode::PureNoise => "pure-noise",
            Mode::SingleQubit => "single-qubit",
            Mode::Nscale => "nscale",
            Mode::Fit => "fit",
            Mode::Sop => "sop",
        }
    }
}

/// A scalar or a list of scalars.
fn one_or_many<'de, D, T>(d: D) -> Result<Option<Vec<T>>, D::Error>
where
    D: Deserializer<'de>,
    T: Deserialize<'de>,
{
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum OneOrMany<T> {
        One(T),
        Many(Vec<T>),
    }
    Ok(Option::<OneOrMany<T>>::deserialize(d)?.map(|v| match v {
        OneOrMany::One(x) => vec![x],
        OneOrMany::Many(xs) => xs,
    }))
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    mode: Option<Mode>,
    out: Option<PathBuf>,
    seed: Option<u64>,
    realizations: Option<usize>,
    workers: Option<usize>,
    dump_state: Option<bool>,
    circuit: Option<RawCircuit>,
    lindblad: Option<RawLindblad>,
    single_qubit: Option<RawSingleQubit>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCircuit {
    #[serde(default, deserialize_with = "one_or_many")]
    n: Option<Vec<usize>>,
    #[serde(default, deserialize_with = "one_or_many")]
    p: Option<Vec<f64>>,
    depth: Option<usize>,
    noise: Option<NoiseKind>,
    delta_err: Option<f64>,
    initial: Option<InitialState>,
    truncation: Option<TruncationSchedule>,
    l1: Option<bool>,
    audit: Option<bool>,
    single_step: Option<Vec<usize>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLindblad {
    #[serde(default, deserialize_with = "one_or_many")]
    n: Option<Vec<usize>>,
    #[serde(default, deserialize_with = "one_or_many")]
    kappa: Option<Vec<f64>>,
    noise: Option<NoiseKind>,
    j: Option<f64>,
    g: Option<f64>,
    h: Option<f64>,
    dt: Option<f64>,
    total_time: Option<f64>,
    delta_err: Option<f64>,
    l1: Option<bool>,
    audit: Option<bool>,
    single_step: Option<Vec<f64>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSingleQubit {
    #[serde(default, deserialize_with = "one_or_many")]
    eta: Option<Vec<f64>>,
    omega: Option<f64>,
    t_end: Option<f64>,
    dt: Option<f64>,
}

/// `n` and `p` are sweeps for `circuit`, `pure-noise` and `fit`; in `nscale`
/// and `sop` the `n` list is the scanned axis instead.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CircuitSection {
    pub n: Vec<usize>,
    pub p: Vec<f64>,
    pub depth: usize,
    pub noise: NoiseKind,
    pub delta_err: f64,
    pub initial: InitialState,
    pub l1: bool,
    pub audit: bool,
    /// Truncation steps `T_e` for single-step error runs (circuit mode).
    pub single_step: Vec<usize>,
    pub truncation: TruncationSchedule,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LindbladSection {
    pub n: Vec<usize>,
    pub kappa: Vec<f64>,
    pub noise: NoiseKind,
    pub j: f64,
    pub g: f64,
    pub h: f64,
    pub dt: f64,
    pub total_time: f64,
    pub delta_err: f64,
    pub l1: bool,
    pub audit: bool,
    pub single_step: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SingleQubitSection {
    pub eta: Vec<f64>,
    pub omega: f64,
    pub t_end: f64,
    /// Sampling interval of the output series.
    pub dt: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunConfig {
    pub mode: Mode,
    pub out: PathBuf,
    pub seed: u64,
    pub realizations: usize,
    /// Worker threads; 0 uses every core.
    pub workers: usize,
    pub dump_state: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub circuit: Option<CircuitSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lindblad: Option<LindbladSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub single_qubit: Option<SingleQubitSection>,
}

/// Command-line values that take precedence over the file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub mode: Option<Mode>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub dump_state: bool,
    pub delta_err: Option<f64>,
    pub realizations: Option<usize>,
}

impl RunConfig {
    /// Canonical TOML form; parsing it gives back the same config.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

pub fn parse_config(text: &str, over: &Overrides) -> Result<RunConfig, ConfigError> {
    let raw: RawConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.message().trim().to_string()))?;
    resolve(raw, over)
}

fn resolve(raw: RawConfig, over: &Overrides) -> Result<RunConfig, ConfigError> {
    let mode = over.mode.or(raw.mode).ok_or(ConfigError::Missing("mode"))?;
    let realizations = over.realizations.or(raw.realizations).unwrap_or(DEFAULT_REALIZATIONS);
    if realizations == 0 {
        return Err(range("realizations", 0, "at least 1"));
    }

    let present = [("circuit", raw.circuit.is_some()), ("lindblad", raw.lindblad.is_some()), ("single_qubit", raw.single_qubit.is_some())];
    let allowed: &[&str] = match mode {
        Mode::Circuit | Mode::PureNoise | Mode::Nscale | Mode::Fit => &["circuit"],
        Mode::Lindblad => &["lindblad"],
        Mode::SingleQubit => &["single_qubit"],
        Mode::Sop => &["circuit", "lindblad"],
    };
    let given: Vec<&str> = present.iter().filter(|(_, p)| *p).map(|(s, _)| *s).collect();
    if let Some(extra) = given.iter().find(|s| !allowed.contains(s)) {
        return Err(ConfigError::Sections(format!("[{extra}] is not used by mode {}", mode.tag())));
    }
    match given.len() {
        0 => return Err(ConfigError::Sections(format!("mode {} needs a [{}] section", mode.tag(), allowed.join("] or [")))),
        1 => {}
        _ => return Err(ConfigError::Sections(format!("mode {} takes exactly one of [{}]", mode.tag(), allowed.join("], [")))),
    }

    let circuit = raw.circuit.map(|c| resolve_circuit(c, mode, over)).transpose()?;
    let lindblad = raw.lindblad.map(|l| resolve_lindblad(l, mode, over)).transpose()?;
    let single_qubit = raw.single_qubit.map(resolve_single_qubit).transpose()?;

    Ok(RunConfig {
        mode,
        out: over.out.clone().or(raw.out).unwrap_or_else(|| PathBuf::from("out")),
        seed: over.seed.or(raw.seed).unwrap_or(0),
        realizations,
        workers: over.workers.or(raw.workers).unwrap_or(0),
        dump_state: over.dump_state || raw.dump_state.unwrap_or(false),
        circuit,
        lindblad,
        single_qubit,
    })
}

fn delta_err(key: &str, file: Option<f64>, over: &Overrides) -> Result<f64, ConfigError> {
    let d = over.delta_err.or(file).unwrap_or(DEFAULT_DELTA_ERR);
    if !(0.0..1.0).contains(&d) {
        return Err(range(key, d, "[0, 1)"));
    }
    Ok(d)
}

fn sizes(key: &str, ns: Option<Vec<usize>>, limit: Option<(usize, &str)>) -> Result<Vec<usize>, ConfigError> {
    let ns = ns.filter(|v| !v.is_empty()).ok_or(ConfigError::Missing(if key.starts_with("circuit") { "circuit.n" } else { "lindblad.n" }))?;
    for &n in &ns {
        if n < 2 {
            return Err(range(key, n, "at least 2"));
        }
        if let Some((max, why)) = limit {
            if n > max {
                return Err(range(key, n, format!("at most {max} ({why})")));
            }
        }
    }
    Ok(ns)
}

fn resolve_circuit(c: RawCircuit, mode: Mode, over: &Overrides) -> Result<CircuitSection, ConfigError> {
    let limit = matches!(mode, Mode::Circuit).then_some((DENSE_LIMIT, "exact reference"));
    let n = sizes("circuit.n", c.n, limit)?;
    let p = c.p.filter(|v| !v.is_empty()).ok_or(ConfigError::Missing("circuit.p"))?;
    if let Some(&bad) = p.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(range("circuit.p", bad, "[0, 1]"));
    }
    let default_depth = if mode == Mode::Nscale { DEFAULT_NSCALE_DEPTH } else { DEFAULT_DEPTH };
    let depth = c.depth.unwrap_or(default_depth);
    if depth == 0 {
        return Err(range("circuit.depth", 0, "at least 1"));
    }
    let noise = c.noise.unwrap_or(NoiseKind::Depolarizing);
    // Damping alone has nothing to do on |0…0⟩.
    let default_initial = if mode == Mode::PureNoise && noise == NoiseKind::AmplitudeDamping { InitialState::Ones } else { InitialState::Zeros };
    let truncation = c.truncation.unwrap_or_default();
    if let TruncationSchedule::Once(t) = truncation {
        if !(1..=depth).contains(&t) {
            return Err(range("circuit.truncation.once", t, format!("a step in 1..={depth}")));
        }
    }
    let single_step = c.single_step.unwrap_or_default();
    if let Some(&bad) = single_step.iter().find(|t| !(1..=depth).contains(*t)) {
        return Err(range("circuit.single_step", bad, format!("steps in 1..={depth}")));
    }
    Ok(CircuitSection {
        n,
        p,
        depth,
        noise,
        delta_err: delta_err("circuit.delta_err", c.delta_err, over)?,
        initial: c.initial.unwrap_or(default_initial),
        l1: c.l1.unwrap_or(true),
        audit: c.audit.unwrap_or(false),
        single_step,
        truncation,
    })
}

fn resolve_lindblad(l: RawLindblad, mode: Mode, over: &Overrides) -> Result<LindbladSection, ConfigError> {
    let limit = matches!(mode, Mode::Lindblad).then_some((DENSE_LIMIT, "exact reference"));
    let n = sizes("lindblad.n", l.n, limit)?;
    let noise = l.noise.unwrap_or(NoiseKind::Depolarizing);
    let base = match noise {
        NoiseKind::Depolarizing => LindbladSpec::standard_depolarizing(2),
        NoiseKind::AmplitudeDamping => LindbladSpec::standard_damping(2),
    };
    let kappa = l.kappa.filter(|v| !v.is_empty()).unwrap_or_else(|| vec![base.kappa]);
    if let Some(&bad) = kappa.iter().find(|k| !(**k >= 0.0 && k.is_finite())) {
        return Err(range("lindblad.kappa", bad, "a finite value >= 0"));
    }
    let j = l.j.unwrap_or(base.ising.j);
    if j == 0.0 || !j.is_finite() {
        return Err(range("lindblad.j", j, "a finite non-zero coupling"));
    }
    let g = l.g.unwrap_or(base.ising.g);
    let h = l.h.unwrap_or(base.ising.h);
    for (key, v) in [("lindblad.g", g), ("lindblad.h", h)] {
        if !v.is_finite() {
            return Err(range(key, v, "a finite field"));
        }
    }
    let dt = l.dt.unwrap_or(base.dt);
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(range("lindblad.dt", dt, "a positive step"));
    }
    let on_grid = |t: f64| t >= 0.0 && ((t / dt) - (t / dt).round()).abs() <= 1e-9 * (t / dt).max(1.0);
    let total_time = l.total_time.unwrap_or(base.total_time);
    if !on_grid(total_time) {
        return Err(range("lindblad.total_time", total_time, format!("a non-negative multiple of dt = {dt}")));
    }
    let single_step = l.single_step.unwrap_or_default();
    if let Some(&bad) = single_step.iter().find(|t| !(on_grid(**t) && **t >= dt && **t <= total_time + 1e-9)) {
        return Err(range("lindblad.single_step", bad, format!("multiples of dt = {dt} in [dt, {total_time}]")));
    }
    Ok(LindbladSection {
        n,
        kappa,
        noise,
        j,
        g,
        h,
        dt,
        total_time,
        delta_err: delta_err("lindblad.delta_err", l.delta_err, over)?,
        l1: l.l1.unwrap_or(true),
        audit: l.audit.unwrap_or(false),
        single_step,
    })
}

fn resolve_single_qubit(s: RawSingleQubit) -> Result<SingleQubitSection, ConfigError> {
    let eta = s.eta.filter(|v| !v.is_empty()).ok_or(ConfigError::Missing("single_qubit.eta"))?;
    if let Some(&bad) = eta.iter().find(|e| !(**e >= 0.0 && e.is_finite())) {
        return Err(range("single_qubit.eta", bad, "a finite value >= 0"));
    }
    let omega = s.omega.unwrap_or(1.0);
    if !(omega > 0.0 && omega.is_finite()) {
        return Err(range("single_qubit.omega", omega, "a positive drive"));
    }
    let t_end = s.t_end.unwrap_or(10.0);
    if !(t_end >= 0.0 && t_end.is_finite()) {
        return Err(range("single_qubit.t_end", t_end, "a finite time >= 0"));
    }
    let dt = s.dt.unwrap_or(0.05);
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(range("single_qubit.dt", dt, "a positive interval"));
    }
    Ok(SingleQubitSection { eta, omega, t_end, dt })
}
