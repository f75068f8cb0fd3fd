use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::fit::{linear_fit, regression_through_origin, LineFit};
use super::{ordered_mean, CircuitSpec, EnsembleConfig, ExperimentError, RunSpec, TimeSeries, TruncationSchedule};
use crate::channels::{apply_to_all_sites, apply_two_site_unitary, random_circuit, GateLayer};
use crate::lindblad::{split_rule, TrotterStep};
use crate::oracle::DenseState;
use crate::state::VectorizedDensityState;
use crate::tensor::DenseTensor;

/// Largest N for which references are dense matrices; above it they are untruncated MPOs.
pub const DENSE_REFERENCE_LIMIT: usize = 10;

enum Track {
    Dense(DenseState),
    Mps(VectorizedDensityState),
}

impl Track {
    fn initial(bits: &[u8], dense: bool) -> Result<Self, ExperimentError> {
        Ok(if dense { Track::Dense(DenseState::from_bits(bits)?) } else { Track::Mps(VectorizedDensityState::from_computational_product(bits)?) })
    }

    fn norm(&self) -> f64 {
        match self {
            Track::Dense(d) => d.l2_norm(),
            Track::Mps(m) => m.l2_norm(),
        }
    }

    fn to_mps(&self) -> Result<VectorizedDensityState, ExperimentError> {
        Ok(match self {
            Track::Dense(d) => VectorizedDensityState::from_dense(d)?,
            Track::Mps(m) => m.clone(),
        })
    }

    fn distance(&self, other: &Track) -> Result<f64, ExperimentError> {
        Ok(match (self, other) {
            (Track::Dense(a), Track::Dense(b)) => a.l2_distance(b)?,
            (Track::Mps(a), Track::Mps(b)) => a.l2_distance(b)?,
            (Track::Dense(a), Track::Mps(b)) | (Track::Mps(b), Track::Dense(a)) => a.l2_distance(&b.to_dense()?)?,
        })
    }
}

enum Kind {
    Circuit { layers: Vec<GateLayer>, noise: DenseTensor, schedule: TruncationSchedule },
    Lindblad(TrotterStep),
}

/// One deterministic trajectory's dynamics, stepped by index `k = 1, 2, …`.
struct Dynamics {
    kind: Kind,
    n: usize,
    steps: usize,
    dt: f64,
    delta_err: f64,
    bits: Vec<u8>,
}

impl Dynamics {
    fn new(spec: &RunSpec) -> Result<Self, ExperimentError> {
        spec.validate()?;
        Ok(match spec {
            RunSpec::Circuit(c) => {
                let layers = if c.gates { random_circuit(c.n, c.depth, c.seed) } else { (1..=c.depth).map(GateLayer::empty).collect() };
                Dynamics {
                    kind: Kind::Circuit { layers, noise: c.noise.channel(c.rate)?.superoperator(), schedule: c.truncation },
                    n: c.n,
                    steps: c.depth,
                    dt: 1.0,
                    delta_err: c.delta_err,
                    bits: c.initial.bits(c.n),
                }
            }
            RunSpec::Lindblad(l) => {
                Dynamics { kind: Kind::Lindblad(TrotterStep::new(l)?), n: l.n, steps: l.steps(), dt: l.dt, delta_err: l.delta_err, bits: vec![0; l.n] }
            }
        })
    }

    fn time(&self, k: usize) -> f64 {
        k as f64 * self.dt
    }

    fn truncates_at(&self, k: usize) -> bool {
        match &self.kind {
            Kind::Circuit { schedule, .. } => schedule.truncates_at(k),
            Kind::Lindblad(_) => true,
        }
    }

    fn apply(&self, k: usize, track: &mut Track) -> Result<(), ExperimentError> {
        match track {
            Track::Dense(d) => self.apply_dense(k, d),
            Track::Mps(m) => self.apply_mps(k, m, false),
        }
    }

    fn apply_dense(&self, k: usize, rho: &mut DenseState) -> Result<(), ExperimentError> {
        match &self.kind {
            Kind::Circuit { layers, noise, .. } => rho.circuit_step(&layers[k - 1], noise)?,
            Kind::Lindblad(step) => step.apply_dense(rho)?,
        }
        Ok(())
    }

    /// `truncated` marks states that are truncated after the step, whose Lindblad
    /// gate splits may then drop weight far below the threshold.
    fn apply_mps(&self, k: usize, s: &mut VectorizedDensityState, truncated: bool) -> Result<(), ExperimentError> {
        match &self.kind {
            Kind::Circuit { layers, noise, .. } => {
                for (left, u) in &layers[k - 1].gates {
                    apply_two_site_unitary(s, *left, u, None)?;
                }
                apply_to_all_sites(s, noise)?;
            }
            Kind::Lindblad(step) if truncated => step.apply_mps_with(s, &split_rule(self.delta_err))?,
            Kind::Lindblad(step) => step.apply_mps(s)?,
        }
        Ok(())
    }

    fn times(&self) -> Vec<f64> {
        (0..=self.steps).map(|k| self.time(k)).collect()
    }
}

/// Specs of the realizations averaged over. Lindblad dynamics and gate-free
/// circuits are deterministic and use a single run.
fn realizations(spec: &RunSpec, ens: &EnsembleConfig) -> Vec<RunSpec> {
    match spec {
        RunSpec::Circuit(c) if c.gates => (0..ens.realizations).map(|r| RunSpec::Circuit(c.with_seed(ens.seed(r)))).collect(),
        _ => vec![spec.clone()],
    }
}

fn dense_reference(spec: &RunSpec) -> bool {
    match spec {
        RunSpec::Circuit(c) => c.gates && c.n <= DENSE_REFERENCE_LIMIT,
        RunSpec::Lindblad(l) => l.n <= DENSE_REFERENCE_LIMIT,
    }
}

fn run_ensemble<T, F>(spec: &RunSpec, ens: &EnsembleConfig, f: F) -> Result<Vec<T>, ExperimentError>
where
    T: Send,
    F: Fn(&RunSpec) -> Result<T, ExperimentError> + Sync + Send,
{
    realizations(spec, ens).par_iter().map(f).collect()
}

/// Ensemble-averaged `(1/N) log₂‖ρ_t‖₂` of the exact dynamics, the norms
/// averaged before the logarithm.
pub fn norm_decay_experiment(spec: &RunSpec, ens: &EnsembleConfig) -> Result<TimeSeries, ExperimentError> {
    let dense = dense_reference(spec);
    let rows = run_ensemble(spec, ens, |s| {
        let dynamics = Dynamics::new(s)?;
        let mut rho = Track::initial(&dynamics.bits, dense)?;
        let mut norms = vec![rho.norm()];
        for k in 1..=dynamics.steps {
            dynamics.apply(k, &mut rho)?;
            norms.push(rho.norm());
        }
        Ok(norms)
    })?;
    let n = spec.n() as f64;
    let values = ordered_mean(&rows).iter().map(|v| v.log2() / n).collect();
    TimeSeries::new(Dynamics::new(spec)?.times(), values, "log2-norm-per-site", Some(spec.clone()))
}

fn step_index(d: &Dynamics, t: f64) -> Result<usize, ExperimentError> {
    let k = (t / d.dt).round();
    if !(k >= 1.0) || k as usize > d.steps || (k * d.dt - t).abs() > 1e-9 * t.abs().max(1.0) {
        return Err(ExperimentError::Spec(format!("truncation time {t} is not a step in 1..={}", d.steps)));
    }
    Ok(k as usize)
}

/// `‖ρ_t − σ_{t,T_e}‖₂` where `σ` is truncated once, right after the step
/// ending at `t_e`, and otherwise follows the exact dynamics. Circuit
/// truncations keep the trace unrestored; Lindblad truncations renormalize.
pub fn single_step_truncation_experiment(spec: &RunSpec, t_e: f64, ens: &EnsembleConfig) -> Result<TimeSeries, ExperimentError> {
    let n = spec.n();
    if n > crate::state::DENSE_LIMIT {
        return Err(ExperimentError::TooLarge { what: "single-step truncation reference", n, limit: crate::state::DENSE_LIMIT });
    }
    let dense = dense_reference(spec);
    let renormalize = matches!(spec, RunSpec::Lindblad(_));
    let delta = spec.delta_err();
    let rows = run_ensemble(spec, ens, |s| {
        let dynamics = Dynamics::new(s)?;
        let k_e = step_index(&dynamics, t_e)?;
        let mut rho = Track::initial(&dynamics.bits, dense)?;
        let mut sigma: Option<Track> = None;
        let mut errors = vec![0.0];
        for k in 1..=dynamics.steps {
            dynamics.apply(k, &mut rho)?;
            if let Some(sg) = sigma.as_mut() {
                dynamics.apply(k, sg)?;
            }
            if k == k_e {
                let mut m = rho.to_mps()?;
                m.truncate(delta)?;
                if renormalize {
                    m.renormalize()?;
                }
                sigma = Some(if dense { Track::Dense(m.to_dense()?) } else { Track::Mps(m) });
            }
            errors.push(match &sigma {
                Some(sg) => rho.distance(sg)?,
                None => 0.0,
            });
        }
        Ok(errors)
    })?;
    TimeSeries::new(Dynamics::new(spec)?.times(), ordered_mean(&rows), "l2-error-single-truncation", Some(spec.clone()))
}

/// Checks of every truncation call against `sqrt(2Σδ_k)‖s‖₂` (before
/// renormalization) and `sqrt(2(N−1)δ_err)‖s‖₂` (after).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TruncationAudit {
    pub calls: usize,
    pub exact_violations: usize,
    pub renormalized_violations: usize,
    /// Largest measured/bound ratio among calls with a nonzero bound.
    pub max_exact_ratio: f64,
    pub max_renormalized_ratio: f64,
    pub max_trace_rescale_deviation: f64,
}

impl TruncationAudit {
    fn merge(&mut self, o: &TruncationAudit) {
        self.calls += o.calls;
        self.exact_violations += o.exact_violations;
        self.renormalized_violations += o.renormalized_violations;
        self.max_exact_ratio = self.max_exact_ratio.max(o.max_exact_ratio);
        self.max_renormalized_ratio = self.max_renormalized_ratio.max(o.max_renormalized_ratio);
        self.max_trace_rescale_deviation = self.max_trace_rescale_deviation.max(o.max_trace_rescale_deviation);
    }

    pub fn renormalized_violation_fraction(&self) -> f64 {
        if self.calls == 0 {
            0.0
        } else {
            self.renormalized_violations as f64 / self.calls as f64
        }
    }
}

/// Ensemble means at one time. `lambda` is formed from the averaged norms.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorRow {
    pub t: f64,
    pub norm: f64,
    pub err_l2: f64,
    pub err_l1: Option<f64>,
    pub lambda: Option<f64>,
    pub bound: Option<f64>,
    pub discarded: f64,
    pub max_rank: usize,
    pub trace_rescale: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorTrace {
    pub spec: RunSpec,
    pub realizations: usize,
    pub rows: Vec<ErrorRow>,
    pub audit: TruncationAudit,
}

impl ErrorTrace {
    pub fn n(&self) -> usize {
        self.spec.n()
    }

    fn series(&self, quantity: &str, f: impl Fn(&ErrorRow) -> f64) -> Result<TimeSeries, ExperimentError> {
        TimeSeries::new(self.rows.iter().map(|r| r.t).collect(), self.rows.iter().map(f).collect(), quantity, Some(self.spec.clone()))
    }

    /// `(1/N) log₂‖ρ_t‖₂` of the exact state.
    pub fn norm_series(&self) -> Result<TimeSeries, ExperimentError> {
        let n = self.n() as f64;
        self.series("log2-norm-per-site", |r| r.norm.log2() / n)
    }

    pub fn error_series(&self) -> Result<TimeSeries, ExperimentError> {
        self.series("l2-error", |r| r.err_l2)
    }

    pub fn norms(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.norm).collect()
    }
}

/// Options for [`total_error_experiment`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceOptions {
    /// Trace-norm errors through the dense bridge; needs a dense reference.
    pub l1: bool,
    /// Measure every truncation against its bound (one extra distance per call).
    pub audit: bool,
}

impl Default for TraceOptions {
    fn default() -> Self {
        Self { l1: true, audit: false }
    }
}

struct RunTrace {
    norm: Vec<f64>,
    err2: Vec<f64>,
    err1: Vec<f64>,
    discarded: Vec<f64>,
    rank: Vec<usize>,
    rescale: Vec<f64>,
    audit: TruncationAudit,
}

fn trace_one(spec: &RunSpec, opts: TraceOptions, dense: bool) -> Result<RunTrace, ExperimentError> {
    let d = Dynamics::new(spec)?;
    let delta = spec.delta_err();
    let bound_factor = (2.0 * (d.n as f64 - 1.0) * delta).sqrt();
    let mut rho = Track::initial(&d.bits, dense)?;
    let mut sigma = VectorizedDensityState::from_computational_product(&d.bits)?;
    let mut out = RunTrace {
        norm: vec![rho.norm()],
        err2: vec![0.0],
        err1: vec![0.0],
        discarded: vec![0.0],
        rank: vec![1],
        rescale: vec![1.0],
        audit: TruncationAudit::default(),
    };
    for k in 1..=d.steps {
        d.apply(k, &mut rho)?;
        d.apply_mps(k, &mut sigma, true)?;
        let (mut discarded, mut rescale) = (0.0, 1.0);
        if d.truncates_at(k) {
            let before = opts.audit.then(|| sigma.clone());
            let mut report = sigma.truncate(delta)?;
            if let Some(b) = &before {
                let measured = b.l2_distance(&sigma)?;
                let bound = report.error_bound();
                if measured > bound + 1e-12 * report.norm_before {
                    out.audit.exact_violations += 1;
                }
                if bound > 0.0 {
                    out.audit.max_exact_ratio = out.audit.max_exact_ratio.max(measured / bound);
                }
            }
            report.trace_rescale = sigma.renormalize()?;
            if let Some(b) = &before {
                let measured = b.l2_distance(&sigma)?;
                let bound = bound_factor * report.norm_before;
                if measured > bound + 1e-12 * report.norm_before {
                    out.audit.renormalized_violations += 1;
                }
                if bound > 0.0 {
                    out.audit.max_renormalized_ratio = out.audit.max_renormalized_ratio.max(measured / bound);
                }
            }
            out.audit.calls += 1;
            out.audit.max_trace_rescale_deviation = out.audit.max_trace_rescale_deviation.max((report.trace_rescale - 1.0).abs());
            discarded = report.total_discarded();
            rescale = report.trace_rescale;
        }
        out.norm.push(rho.norm());
        match &rho {
            Track::Dense(r) => {
                let diff = r.sub(&sigma.to_dense()?)?;
                out.err2.push(diff.l2_norm());
                out.err1.push(if opts.l1 { diff.l1_norm()? } else { 0.0 });
            }
            Track::Mps(r) => {
                out.err2.push(sigma.l2_distance(r)?);
                out.err1.push(0.0);
            }
        }
        out.discarded.push(discarded);
        out.rank.push(sigma.max_bond());
        out.rescale.push(rescale);
    }
    Ok(out)
}

/// Exact state against the truncated-and-renormalized MPO at every step.
pub fn total_error_experiment(spec: &RunSpec, ens: &EnsembleConfig, opts: TraceOptions) -> Result<ErrorTrace, ExperimentError> {
    let n = spec.n();
    if n > crate::state::DENSE_LIMIT {
        return Err(ExperimentError::TooLarge { what: "total error reference", n, limit: crate::state::DENSE_LIMIT });
    }
    let dense = dense_reference(spec) || matches!(spec, RunSpec::Circuit(c) if !c.gates);
    let with_l1 = opts.l1 && dense;
    let runs = run_ensemble(spec, ens, |s| trace_one(s, opts, dense))?;
    let mean = |f: &dyn Fn(&RunTrace) -> &Vec<f64>| ordered_mean(&runs.iter().map(|r| f(r).clone()).collect::<Vec<_>>());
    let norm = mean(&|r| &r.norm);
    let err2 = mean(&|r| &r.err2);
    let err1 = mean(&|r| &r.err1);
    let discarded = mean(&|r| &r.discarded);
    let rescale = mean(&|r| &r.rescale);
    let mut audit = TruncationAudit::default();
    runs.iter().for_each(|r| audit.merge(&r.audit));
    let times = Dynamics::new(spec)?.times();
    let rows = times
        .iter()
        .enumerate()
        .map(|(k, &t)| {
            let l1 = with_l1.then_some(err1[k]);
            ErrorRow {
                t,
                norm: norm[k],
                err_l2: err2[k],
                err_l1: l1,
                lambda: l1.filter(|_| err2[k] > 0.0).map(|l1| l1 / err2[k] * norm[k]),
                bound: None,
                discarded: discarded[k],
                max_rank: runs.iter().map(|r| r.rank[k]).max().unwrap_or(1),
                trace_rescale: rescale[k],
            }
        })
        .collect();
    Ok(ErrorTrace { spec: spec.clone(), realizations: runs.len(), rows, audit })
}

/// Squared relative error against N at a fixed shallow depth.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NScaleResult {
    pub series: TimeSeries,
    pub origin_fit: LineFit,
    pub free_fit: LineFit,
}

/// `(‖ρ_t − σ_t‖₂ / ‖ρ_t‖₂)²` for each N, the reference being the untruncated MPO.
pub fn nscale_experiment(base: &CircuitSpec, ns: &[usize], ens: &EnsembleConfig) -> Result<NScaleResult, ExperimentError> {
    let mut values = Vec::with_capacity(ns.len());
    for &n in ns {
        let spec = RunSpec::Circuit(CircuitSpec { n, truncation: TruncationSchedule::EveryStep, ..base.clone() });
        let rows = run_ensemble(&spec, ens, |s| {
            let d = Dynamics::new(s)?;
            let mut rho = VectorizedDensityState::from_computational_product(&d.bits)?;
            let mut sigma = rho.clone();
            for k in 1..=d.steps {
                d.apply_mps(k, &mut rho, false)?;
                d.apply_mps(k, &mut sigma, true)?;
                sigma.truncate(base.delta_err)?;
                sigma.renormalize()?;
            }
            let r = sigma.l2_distance(&rho)? / rho.l2_norm();
            Ok(vec![r * r])
        })?;
        values.push(ordered_mean(&rows)[0]);
    }
    let xs: Vec<f64> = ns.iter().map(|&n| n as f64).collect();
    let series = TimeSeries::new(xs.clone(), values.clone(), "squared-relative-error-vs-n", Some(RunSpec::Circuit(base.clone())))?;
    Ok(NScaleResult { origin_fit: regression_through_origin(&xs, &values)?, free_fit: linear_fit(&xs, &values)?, series })
}

/// Steps the truncated MPO of `spec` (with its own gate seed) to the end,
/// calling `observer(k, σ)` at every step including `k = 0`.
fn approximate_trajectory<F>(spec: &RunSpec, mut observer: F) -> Result<VectorizedDensityState, ExperimentError>
where
    F: FnMut(usize, &VectorizedDensityState) -> Result<(), ExperimentError>,
{
    let d = Dynamics::new(spec)?;
    let mut s = VectorizedDensityState::from_computational_product(&d.bits)?;
    observer(0, &s)?;
    for k in 1..=d.steps {
        d.apply_mps(k, &mut s, true)?;
        if d.truncates_at(k) {
            s.truncate(d.delta_err)?;
            s.renormalize()?;
        }
        observer(k, &s)?;
    }
    Ok(s)
}

/// Final truncated state of one trajectory, for state dumps.
pub fn approximate_state(spec: &RunSpec) -> Result<VectorizedDensityState, ExperimentError> {
    approximate_trajectory(spec, |_, _| Ok(()))
}

/// Half-chain operator entanglement of the truncated MPO along the run, one series per N.
pub fn sop_scan(spec: &RunSpec, ns: &[usize]) -> Result<Vec<TimeSeries>, ExperimentError> {
    ns.par_iter()
        .map(|&n| {
            let spec = match spec {
                RunSpec::Circuit(c) => RunSpec::Circuit(CircuitSpec { n, ..c.clone() }),
                RunSpec::Lindblad(l) => RunSpec::Lindblad(crate::lindblad::LindbladSpec { n, ..l.clone() }),
            };
            let cut = n / 2;
            let mut values = Vec::new();
            approximate_trajectory(&spec, |_, s| {
                values.push(s.operator_entanglement(cut)?);
                Ok(())
            })?;
            TimeSeries::new(Dynamics::new(&spec)?.times(), values, "operator-entanglement-half-chain", Some(spec))
        })
        .collect()
}
