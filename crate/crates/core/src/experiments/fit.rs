use serde::{Deserialize, Serialize};

use super::{ExperimentError, TimeSeries};

/// Least-squares line. Standard errors are zero when the fit has no residual degrees of freedom.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_se: f64,
    pub intercept_se: f64,
    pub r2: f64,
    pub residual_rms: f64,
    pub points: usize,
}

pub fn linear_fit(xs: &[f64], ys: &[f64]) -> Result<LineFit, ExperimentError> {
    let n = xs.len().min(ys.len());
    if n < 2 {
        return Err(ExperimentError::Fit { window: "linear", found: n, needed: 2 });
    }
    let nf = n as f64;
    let mx = xs[..n].iter().sum::<f64>() / nf;
    let my = ys[..n].iter().sum::<f64>() / nf;
    let sxx: f64 = xs[..n].iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs[..n].iter().zip(&ys[..n]).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys[..n].iter().map(|y| (y - my).powi(2)).sum();
    if sxx <= 0.0 {
        return Err(ExperimentError::Fit { window: "linear (distinct x)", found: 1, needed: 2 });
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = xs[..n].iter().zip(&ys[..n]).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
    let dof = n.saturating_sub(2).max(1) as f64;
    let sigma2 = if n > 2 { sse / dof } else { 0.0 };
    let r2 = if syy > 0.0 { 1.0 - sse / syy } else { 1.0 };
    Ok(LineFit {
        slope,
        intercept,
        slope_se: (sigma2 / sxx).sqrt(),
        intercept_se: (sigma2 * (1.0 / nf + mx * mx / sxx)).sqrt(),
        r2,
        residual_rms: (sse / nf).sqrt(),
        points: n,
    })
}

/// `y = c x` by least squares. `r2` is the uncentred coefficient of determination.
pub fn regression_through_origin(xs: &[f64], ys: &[f64]) -> Result<LineFit, ExperimentError> {
    let n = xs.len().min(ys.len());
    if n < 1 {
        return Err(ExperimentError::Fit { window: "origin", found: 0, needed: 1 });
    }
    let sxx: f64 = xs[..n].iter().map(|x| x * x).sum();
    if sxx <= 0.0 {
        return Err(ExperimentError::Fit { window: "origin (nonzero x)", found: 0, needed: 1 });
    }
    let sxy: f64 = xs[..n].iter().zip(&ys[..n]).map(|(x, y)| x * y).sum();
    let syy: f64 = ys[..n].iter().map(|y| y * y).sum();
    let slope = sxy / sxx;
    let sse: f64 = xs[..n].iter().zip(&ys[..n]).map(|(x, y)| (y - slope * x).powi(2)).sum();
    let sigma2 = if n > 1 { sse / (n - 1) as f64 } else { 0.0 };
    Ok(LineFit {
        slope,
        intercept: 0.0,
        slope_se: (sigma2 / sxx).sqrt(),
        intercept_se: 0.0,
        r2: if syy > 0.0 { 1.0 - sse / syy } else { 1.0 },
        residual_rms: (sse / n as f64).sqrt(),
        points: n,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitWindow {
    pub start: f64,
    pub end: f64,
    pub points: usize,
}

/// Coefficients of the per-site log-norm curve.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub n: usize,
    pub gamma: f64,
    pub lambda: f64,
    /// Rate of the late approach to `-λ`; absent when the deviation is below resolution.
    pub s: Option<f64>,
    pub t_s: usize,
    pub early: FitWindow,
    pub late: FitWindow,
    pub s_window: Option<FitWindow>,
    pub early_residual_rms: f64,
    pub late_std: f64,
}

fn window(series: &TimeSeries, lo: f64, hi: f64) -> (Vec<f64>, Vec<f64>) {
    series.times.iter().zip(&series.values).filter(|(t, _)| **t >= lo - 1e-9 && **t <= hi + 1e-9).map(|(t, v)| (*t, *v)).unzip()
}

fn early_gamma(series: &TimeSeries, end: f64) -> Result<(f64, LineFit, FitWindow), ExperimentError> {
    let (ts, ys) = window(series, 2.0, end);
    if ts.len() < 2 {
        return Err(ExperimentError::Fit { window: "early", found: ts.len(), needed: 2 });
    }
    let line = linear_fit(&ts, &ys)?;
    Ok((-line.slope, line, FitWindow { start: ts[0], end: ts[ts.len() - 1], points: ts.len() }))
}

fn steady_index(lambda: f64, gamma: f64) -> usize {
    ((lambda / gamma + 1e-9).floor() as usize).max(1)
}

/// Two-pass fit of `(1/N) log₂‖ρ_t‖₂`: a provisional `T_s` from the tail mean
/// and the half-way crossing picks the early window `[2, max(3, ⌊T_s/2⌋)]` and
/// the late window `[⌈1.5 T_s⌉, end]`.
pub fn fit_decay(series: &TimeSeries, n: usize) -> Result<FitResult, ExperimentError> {
    let len = series.len();
    if len < 4 {
        return Err(ExperimentError::Fit { window: "series", found: len, needed: 4 });
    }
    let tail = (len / 4).max(1);
    let lambda0 = -series.values[len - tail..].iter().sum::<f64>() / tail as f64;
    if !(lambda0 > 0.0) {
        return Err(ExperimentError::Spec(format!("series does not decay (tail mean {})", -lambda0)));
    }
    let half = series.times.iter().zip(&series.values).find(|(t, v)| **t >= 2.0 && **v <= -0.5 * lambda0).map_or(3.0, |(t, _)| *t);
    let (gamma0, _, _) = early_gamma(series, half.max(3.0))?;
    if !(gamma0 > 0.0) {
        return Err(ExperimentError::Spec(format!("early slope {} is not a decay", -gamma0)));
    }
    let ts0 = steady_index(lambda0, gamma0);

    let (gamma, line, early) = early_gamma(series, ((ts0 / 2) as f64).max(3.0))?;
    if !(gamma > 0.0) {
        return Err(ExperimentError::Spec(format!("early slope {} is not a decay", -gamma)));
    }
    let late_start = (1.5 * ts0 as f64).ceil();
    let last = series.times[len - 1];
    let (lt, lv) = window(series, late_start, last);
    if lt.is_empty() {
        return Err(ExperimentError::Fit { window: "late", found: 0, needed: 1 });
    }
    let lambda = -lv.iter().sum::<f64>() / lv.len() as f64;
    let late_std = (lv.iter().map(|v| (v + lambda).powi(2)).sum::<f64>() / lv.len() as f64).sqrt();
    let t_s = steady_index(lambda, gamma);

    let (s, s_window) = late_rate(series, t_s as f64);
    Ok(FitResult {
        n,
        gamma,
        lambda,
        s,
        t_s,
        early,
        late: FitWindow { start: lt[0], end: lt[lt.len() - 1], points: lt.len() },
        s_window,
        early_residual_rms: line.residual_rms,
        late_std,
    })
}

/// Rate of the late approach to the plateau from a log-linear fit of the
/// successive differences `|y_t − y_{t+1}|`, which decay like the deviation
/// itself but do not depend on the estimate of `λ`. Uses times from `T_s` on
/// while the differences stay above rounding and keep one sign.
fn late_rate(series: &TimeSeries, from: f64) -> (Option<f64>, Option<FitWindow>) {
    let mut ts = Vec::new();
    let mut ls = Vec::new();
    let mut sign = 0.0;
    let scale = series.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    for k in 0..series.len().saturating_sub(1) {
        let t = series.times[k];
        if t < from - 1e-9 {
            continue;
        }
        let d = series.values[k] - series.values[k + 1];
        if d.abs() <= 1e-13 * scale.max(1e-300) || (sign != 0.0 && d.signum() != sign) {
            break;
        }
        sign = d.signum();
        ts.push(t);
        ls.push(d.abs().ln());
    }
    if ts.len() < 3 {
        return (None, None);
    }
    match linear_fit(&ts, &ls) {
        Ok(line) if line.slope < 0.0 => (Some(-line.slope), Some(FitWindow { start: ts[0], end: ts[ts.len() - 1], points: ts.len() })),
        _ => (None, None),
    }
}

/// Exponential contraction of an error series, `log₂ e ≈ c − rate·N·t`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContractionFit {
    pub rate: f64,
    pub window: FitWindow,
    pub line: LineFit,
}

/// Fits the longest contiguous window after `from` whose `log₂` error is linear
/// with `R² > r2_min`; ties go to the better fit. Values below `1e-14` of the
/// largest one are treated as numerically zero and end the usable range.
pub fn fit_contraction(series: &TimeSeries, from: f64, n: usize, r2_min: f64) -> Result<ContractionFit, ExperimentError> {
    let max = series.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let floor = 1e-14 * max;
    let mut ts = Vec::new();
    let mut ys = Vec::new();
    for (t, v) in series.times.iter().zip(&series.values).filter(|(t, _)| **t > from + 1e-9) {
        if *v <= floor {
            break;
        }
        ts.push(*t);
        ys.push(v.log2());
    }
    let m = ts.len();
    const MIN_POINTS: usize = 3;
    if m < MIN_POINTS {
        return Err(ExperimentError::Fit { window: "contraction", found: m, needed: MIN_POINTS });
    }
    let mut best: Option<(usize, usize, LineFit)> = None;
    for len in (MIN_POINTS..=m).rev() {
        for i in 0..=m - len {
            let line = linear_fit(&ts[i..i + len], &ys[i..i + len])?;
            if line.r2 > r2_min && best.as_ref().map_or(true, |b| line.r2 > b.2.r2) {
                best = Some((i, len, line));
            }
        }
        if best.is_some() {
            break;
        }
    }
    let (i, len, line) = best.ok_or(ExperimentError::Fit { window: "contraction (R² threshold)", found: 0, needed: MIN_POINTS })?;
    Ok(ContractionFit { rate: -line.slope / n as f64, window: FitWindow { start: ts[i], end: ts[i + len - 1], points: len }, line })
}

/// First time after which `|dy/dt| < tol` holds for a full `window` of time.
pub fn detect_steady_state(series: &TimeSeries, window: f64, tol: f64) -> Option<f64> {
    let t = &series.times;
    let y = &series.values;
    if t.len() < 2 {
        return None;
    }
    let deriv: Vec<f64> = (0..t.len() - 1).map(|k| (y[k + 1] - y[k]) / (t[k + 1] - t[k])).collect();
    let last = t[t.len() - 1];
    let mut run_start: Option<usize> = None;
    for k in 0..deriv.len() {
        if deriv[k].abs() < tol {
            let s = *run_start.get_or_insert(k);
            if t[k + 1] - t[s] >= window - 1e-9 {
                return Some(t[s]);
            }
        } else {
            run_start = None;
        }
        if t[k] + window > last + 1e-9 && run_start.is_none() {
            return None;
        }
    }
    None
}
