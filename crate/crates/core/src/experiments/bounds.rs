use serde::{Deserialize, Serialize};

use super::fit::FitResult;
use super::runs::ErrorTrace;
use super::{ExperimentError, RunSpec, TimeSeries};
use crate::lindblad::LindbladSpec;

fn prefactor(n: usize, delta_err: f64) -> f64 {
    (2.0 * (n as f64 - 1.0) * delta_err).sqrt()
}

/// Predicted total error at integer depth `t` from the per-step bound and
/// contraction `2^{-γN}`; `norms[t]` is `‖ρ_t‖₂`.
pub fn empirical_bound_circuit(n: usize, t: usize, delta_err: f64, gamma: f64, t_s: usize, norms: &[f64]) -> Result<f64, ExperimentError> {
    if t == 0 {
        return Err(ExperimentError::Spec("bound needs t >= 1".into()));
    }
    let norm = *norms.get(t).ok_or_else(|| ExperimentError::Series(format!("no norm at t = {t}")))?;
    let a = prefactor(n, delta_err);
    if t <= t_s {
        return Ok(a * t as f64 * norm);
    }
    let q = (-gamma * n as f64).exp2();
    let x = q.powi((t - t_s) as i32);
    Ok(a * (x * t_s as f64 + (1.0 - x) / (1.0 - q)) * norm)
}

/// Running sum `sqrt(2(N−1)δ) Σ_j 2^{−ΓN(t−jΔt)} ‖ρ_{jΔt}‖₂` over the steps of
/// `spec`; `norms[k]` is the norm after step `k`, with `norms[0]` at t = 0.
pub fn empirical_bound_lindblad(spec: &LindbladSpec, gamma: f64, norms: &[f64]) -> Result<TimeSeries, ExperimentError> {
    if !(gamma > 0.0) {
        return Err(ExperimentError::NoContraction(gamma));
    }
    let steps = spec.steps();
    if norms.len() < steps + 1 {
        return Err(ExperimentError::Series(format!("{} norms for {} steps", norms.len(), steps)));
    }
    let a = prefactor(spec.n, spec.delta_err);
    let q = (-gamma * spec.n as f64 * spec.dt).exp2();
    let mut values = vec![0.0];
    let mut acc = 0.0;
    for norm in &norms[1..=steps] {
        acc = q * acc + a * norm;
        values.push(acc);
    }
    let times = (0..=steps).map(|k| k as f64 * spec.dt).collect();
    TimeSeries::new(times, values, "l2-error-bound", Some(RunSpec::Lindblad(spec.clone())))
}

/// Steady limit of [`empirical_bound_lindblad`] for a constant norm.
pub fn lindblad_steady_bound(n: usize, delta_err: f64, gamma: f64, dt: f64, norm: f64) -> f64 {
    prefactor(n, delta_err) / (1.0 - (-gamma * n as f64 * dt).exp2()) * norm
}

impl ErrorTrace {
    /// Fills `bound` for every row with `t >= 1` from a circuit norm fit.
    pub fn attach_circuit_bound(&mut self, fit: &FitResult) -> Result<(), ExperimentError> {
        let n = self.n();
        let delta = self.spec.delta_err();
        let norms = self.norms();
        for (t, row) in self.rows.iter_mut().enumerate().skip(1) {
            row.bound = Some(empirical_bound_circuit(n, t, delta, fit.gamma, fit.t_s, &norms)?);
        }
        Ok(())
    }

    pub fn attach_lindblad_bound(&mut self, gamma: f64) -> Result<(), ExperimentError> {
        let RunSpec::Lindblad(spec) = &self.spec else {
            return Err(ExperimentError::Spec("Lindblad bound on a circuit trace".into()));
        };
        let bound = empirical_bound_lindblad(spec, gamma, &self.norms())?;
        for (row, b) in self.rows.iter_mut().zip(bound.values).skip(1) {
            row.bound = Some(b);
        }
        Ok(())
    }
}

/// Mean `Λ_t` over the final quarter of the rows at or after `steady_start`.
pub fn lambda_infinity(trace: &ErrorTrace, steady_start: f64) -> Option<f64> {
    let lams: Vec<f64> = trace.rows.iter().filter(|r| r.t >= steady_start - 1e-9).filter_map(|r| r.lambda).collect();
    if lams.is_empty() {
        return None;
    }
    let q = (lams.len() / 4).max(1);
    Some(lams[lams.len() - q..].iter().sum::<f64>() / q as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct L1BoundRow {
    pub t: f64,
    pub measured: f64,
    /// `Λ_t · bound_t / ‖ρ_t‖₂`.
    pub empirical: Option<f64>,
    /// `2^{N/2} ‖ρ_t − σ_t‖₂`.
    pub naive: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct L1BoundReport {
    pub rows: Vec<L1BoundRow>,
    pub steady_start: f64,
    pub lambda_inf: Option<f64>,
    /// Steady-state bound on the trace distance (and so on the TVD of any measurement).
    pub steady_bound: Option<f64>,
    /// Mean of naive / empirical over steady rows.
    pub steady_tightening: Option<f64>,
}

fn report(trace: &ErrorTrace, steady_start: f64, steady_factor: f64) -> Result<L1BoundReport, ExperimentError> {
    let n = trace.n() as f64;
    let rows: Vec<L1BoundRow> = trace
        .rows
        .iter()
        .filter_map(|r| {
            let measured = r.err_l1?;
            let empirical = match (r.lambda, r.bound) {
                (Some(l), Some(b)) if r.norm > 0.0 => Some(l * b / r.norm),
                (None, Some(_)) if r.err_l2 == 0.0 => Some(0.0),
                _ => None,
            };
            Some(L1BoundRow { t: r.t, measured, empirical, naive: n.exp2().sqrt() * r.err_l2 })
        })
        .collect();
    if rows.is_empty() {
        return Err(ExperimentError::Series("trace has no trace-norm column".into()));
    }
    let lambda_inf = lambda_infinity(trace, steady_start);
    let ratios: Vec<f64> = rows
        .iter()
        .filter(|r| r.t >= steady_start - 1e-9)
        .filter_map(|r| r.empirical.filter(|e| *e > 0.0).map(|e| r.naive / e))
        .collect();
    Ok(L1BoundReport {
        steady_start,
        steady_bound: lambda_inf.map(|l| steady_factor * l),
        steady_tightening: (!ratios.is_empty()).then(|| ratios.iter().sum::<f64>() / ratios.len() as f64),
        lambda_inf,
        rows,
    })
}

/// Circuit L1 report; rows without a bound get one from `fit`. The steady
/// window starts at `T_s`.
pub fn l1_bound_report(trace: &ErrorTrace, fit: &FitResult) -> Result<L1BoundReport, ExperimentError> {
    let mut trace = trace.clone();
    if trace.rows.iter().skip(1).any(|r| r.bound.is_none()) {
        trace.attach_circuit_bound(fit)?;
    }
    let n = trace.n();
    let factor = prefactor(n, trace.spec.delta_err()) * (fit.t_s as f64 + 1.0 / (1.0 - (-fit.gamma * n as f64).exp2()));
    report(&trace, fit.t_s as f64, factor)
}

/// Lindblad L1 report with contraction rate `gamma` and a detected steady-state start.
pub fn l1_bound_report_lindblad(trace: &ErrorTrace, gamma: f64, steady_start: f64) -> Result<L1BoundReport, ExperimentError> {
    let RunSpec::Lindblad(spec) = &trace.spec else {
        return Err(ExperimentError::Spec("Lindblad report on a circuit trace".into()));
    };
    let mut trace = trace.clone();
    trace.attach_lindblad_bound(gamma)?;
    let factor = lindblad_steady_bound(spec.n, spec.delta_err, gamma, spec.dt, 1.0);
    report(&trace, steady_start, factor)
}
