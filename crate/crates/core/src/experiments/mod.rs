//! Measurement programs: ensemble norm decay, single-truncation and total
//! error traces, empirical bounds and the fits that feed them.

mod bounds;
mod fit;
mod runs;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channels::{ChannelError, NoiseKind};
use crate::lindblad::{LindbladError, LindbladSpec};
use crate::oracle::OracleError;
use crate::state::StateError;
use crate::tensor::TensorError;

pub use bounds::{
    empirical_bound_circuit, empirical_bound_lindblad, l1_bound_report, l1_bound_report_lindblad, lambda_infinity, lindblad_steady_bound, L1BoundReport,
    L1BoundRow,
};
pub use fit::{
    detect_steady_state, fit_contraction, fit_decay, linear_fit, regression_through_origin, ContractionFit, FitResult, FitWindow, LineFit,
};
pub use runs::{
    approximate_state, norm_decay_experiment, nscale_experiment, single_step_truncation_experiment, sop_scan, total_error_experiment, ErrorRow, ErrorTrace,
    NScaleResult, TraceOptions, TruncationAudit, DENSE_REFERENCE_LIMIT,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExperimentError {
    #[error("invalid spec: {0}")]
    Spec(String),

    #[error("{what} needs N <= {limit}, got {n}")]
    TooLarge { what: &'static str, n: usize, limit: usize },

    #[error("{window} fit window has {found} points, needs {needed}")]
    Fit { window: &'static str, found: usize, needed: usize },

    #[error("time series: {0}")]
    Series(String),

    #[error("contraction rate {0} is not positive")]
    NoContraction(f64),

    #[error(transparent)]
    State(#[from] StateError),

    #[error(transparent)]
    Channel(#[from] ChannelError),

    #[error(transparent)]
    Lindblad(#[from] LindbladError),

    #[error(transparent)]
    Oracle(#[from] OracleError),

    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitialState {
    #[default]
    Zeros,
    Ones,
}

impl InitialState {
    pub fn bits(self, n: usize) -> Vec<u8> {
        vec![matches!(self, InitialState::Ones) as u8; n]
    }
}

/// When the approximate state is truncated.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TruncationSchedule {
    #[default]
    EveryStep,
    Never,
    /// Only after step `t`.
    Once(usize),
}

impl TruncationSchedule {
    pub fn truncates_at(self, step: usize) -> bool {
        match self {
            TruncationSchedule::EveryStep => true,
            TruncationSchedule::Never => false,
            TruncationSchedule::Once(t) => t == step,
        }
    }
}

/// One noisy brickwall circuit run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CircuitSpec {
    pub n: usize,
    pub depth: usize,
    pub noise: NoiseKind,
    pub rate: f64,
    pub seed: u64,
    pub delta_err: f64,
    /// Without gates the evolution is pure noise.
    pub gates: bool,
    pub initial: InitialState,
    pub truncation: TruncationSchedule,
}

impl CircuitSpec {
    pub fn new(n: usize, depth: usize, noise: NoiseKind, rate: f64) -> Self {
        Self {
            n,
            depth,
            noise,
            rate,
            seed: 0,
            delta_err: 1e-6,
            gates: true,
            initial: InitialState::Zeros,
            truncation: TruncationSchedule::EveryStep,
        }
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        if self.n < 2 {
            return Err(ExperimentError::Spec(format!("n = {} is below 2", self.n)));
        }
        if !(0.0..=1.0).contains(&self.rate) {
            return Err(ExperimentError::Spec(format!("rate = {} outside [0, 1]", self.rate)));
        }
        if !(0.0..1.0).contains(&self.delta_err) {
            return Err(ExperimentError::Spec(format!("delta_err = {} outside [0, 1)", self.delta_err)));
        }
        Ok(())
    }

    /// The same circuit family with a different gate seed.
    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum RunSpec {
    Circuit(CircuitSpec),
    Lindblad(LindbladSpec),
}

impl RunSpec {
    pub fn n(&self) -> usize {
        match self {
            RunSpec::Circuit(c) => c.n,
            RunSpec::Lindblad(l) => l.n,
        }
    }

    pub fn delta_err(&self) -> f64 {
        match self {
            RunSpec::Circuit(c) => c.delta_err,
            RunSpec::Lindblad(l) => l.delta_err,
        }
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        match self {
            RunSpec::Circuit(c) => c.validate(),
            RunSpec::Lindblad(l) => Ok(l.validate()?),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnsembleConfig {
    pub realizations: usize,
    pub base_seed: u64,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        Self { realizations: 100, base_seed: 0 }
    }
}

impl EnsembleConfig {
    pub fn new(realizations: usize, base_seed: u64) -> Result<Self, ExperimentError> {
        if realizations == 0 {
            return Err(ExperimentError::Spec("realizations must be at least 1".into()));
        }
        Ok(Self { realizations, base_seed })
    }

    /// Gate seed of realization `r`.
    pub fn seed(&self, r: usize) -> u64 {
        crate::channels::derive_seed(self.base_seed, r as u64)
    }
}

/// Values against strictly increasing times.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeSeries {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub quantity: String,
    pub spec: Option<RunSpec>,
}

impl TimeSeries {
    pub fn new(times: Vec<f64>, values: Vec<f64>, quantity: impl Into<String>, spec: Option<RunSpec>) -> Result<Self, ExperimentError> {
        if times.len() != values.len() {
            return Err(ExperimentError::Series(format!("{} times but {} values", times.len(), values.len())));
        }
        if let Some(w) = times.windows(2).find(|w| !(w[1] > w[0])) {
            return Err(ExperimentError::Series(format!("times not increasing at {} -> {}", w[0], w[1])));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(ExperimentError::Series(format!("value at t = {} is not finite", times[i])));
        }
        Ok(Self { times, values, quantity: quantity.into(), spec })
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Value at the time closest to `t`, if within half a step.
    pub fn at(&self, t: f64) -> Option<f64> {
        let i = self.times.iter().enumerate().min_by(|a, b| (a.1 - t).abs().total_cmp(&(b.1 - t).abs()))?.0;
        let tol = if self.len() > 1 { 0.5 * (self.times[1] - self.times[0]).abs() } else { 1e-9 };
        ((self.times[i] - t).abs() <= tol).then(|| self.values[i])
    }
}

/// Ensemble average taken in realization order so sums are reproducible.
pub(crate) fn ordered_mean(rows: &[Vec<f64>]) -> Vec<f64> {
    let len = rows.first().map_or(0, Vec::len);
    let mut out = vec![0.0; len];
    for row in rows {
        for (o, v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
    let k = rows.len().max(1) as f64;
    out.iter_mut().for_each(|o| *o /= k);
    out
}
