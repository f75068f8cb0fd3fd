//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.
//!
//! `cargo test -p noisy-mpo-validation --test acceptance -- [name filters]`

use std::cell::OnceCell;
use std::collections::HashMap;
use std::error::Error;
use std::process::ExitCode;
use std::time::Instant;

use noisy_mpo::channels::{noisy_circuit_step, random_circuit, GateLayer};
use noisy_mpo::experiments::*;
use noisy_mpo::lindblad::{evolve_lindblad, exact_evolve_lindblad, LindbladSpec};
use noisy_mpo::oracle::{exact_evolve_circuit, rabi_damping_closed_form, rabi_damping_ode, rabi_damping_steady_purity, QubitState};
use noisy_mpo::{DenseState, NoiseKind, VectorizedDensityState};
use num_complex::Complex64 as C64;

type Res<T> = Result<T, Box<dyn Error>>;

// Tolerances and workloads. The tolerances are the acceptance thresholds;
// workloads are sized for a single core.
const PURE_TOL: f64 = 1e-10;
const ORACLE_TOL: f64 = 1e-9;
const RENORM_VIOLATION_MAX: f64 = 0.10;
const C_DEP: f64 = 2.37;
const C_DAMP: f64 = 1.14;
const C_TOL_N10: f64 = 0.25;
const CONTRACTION_TOL: f64 = 0.20;
const LINDBLAD_R2_MIN: f64 = 0.99;
const GAMMA_WINDOW_R2: f64 = 0.995;
const PLATEAU_RANGE: (f64, f64) = (1.5, 2.5);
const LAMBDA_SPREAD_MAX: f64 = 0.25;
const NSCALE_DOUBLING: (f64, f64) = (1.6, 2.4);
const TROTTER_SLOPE: (f64, f64) = (1.8, 2.2);
const QUBIT_TOL: f64 = 1e-8;
const SOP_SPREAD_MAX: f64 = 0.15;

const CIRCUIT_P: f64 = 0.05;
const CIRCUIT_DEPTH: usize = 30;
const TRACE_REALIZATIONS: usize = 4;
const NORM_DECAY_N: usize = 10;
const NORM_DECAY_REALIZATIONS: usize = 8;
const NORM_DECAY_PS: [f64; 5] = [0.01, 0.02, 0.03, 0.04, 0.05];
const LINDBLAD_STEADY_T: [(NoiseKind, f64); 2] = [(NoiseKind::Depolarizing, 100.0), (NoiseKind::AmplitudeDamping, 30.0)];

struct Check {
    pass: bool,
    detail: String,
}

fn check(pass: bool, detail: String) -> Res<Check> {
    Ok(Check { pass, detail })
}

/// Relative spread `(max − min) / mean`.
fn spread(xs: &[f64]) -> f64 {
    let max = xs.iter().cloned().fold(f64::MIN, f64::max);
    let min = xs.iter().cloned().fold(f64::MAX, f64::min);
    (max - min) / (xs.iter().sum::<f64>() / xs.len() as f64)
}

fn ens(realizations: usize, seed: u64) -> EnsembleConfig {
    EnsembleConfig::new(realizations, seed).expect("positive realizations")
}

fn lindblad_spec(noise: NoiseKind, n: usize) -> LindbladSpec {
    match noise {
        NoiseKind::Depolarizing => LindbladSpec::standard_depolarizing(n),
        NoiseKind::AmplitudeDamping => LindbladSpec::standard_damping(n),
    }
}

/// Expensive runs shared between criteria.
#[derive(Default)]
struct Shared {
    circuit_traces: HashMap<(u8, usize), (ErrorTrace, FitResult)>,
    lindblad_traces: HashMap<(u8, usize), (ErrorTrace, Option<f64>)>,
    lindblad_gamma: OnceCell<[(f64, f64, FitWindow); 2]>,
}

fn tag(noise: NoiseKind) -> u8 {
    matches!(noise, NoiseKind::AmplitudeDamping) as u8
}

impl Shared {
    /// Circuit total-error trace at p = 0.05 with its own norm-decay fit.
    fn circuit(&mut self, noise: NoiseKind, n: usize) -> Res<&(ErrorTrace, FitResult)> {
        if !self.circuit_traces.contains_key(&(tag(noise), n)) {
            let spec = RunSpec::Circuit(CircuitSpec::new(n, CIRCUIT_DEPTH, noise, CIRCUIT_P));
            let trace = total_error_experiment(&spec, &ens(TRACE_REALIZATIONS, 2024), TraceOptions { l1: true, audit: true })?;
            let fit = fit_decay(&trace.norm_series()?, n)?;
            self.circuit_traces.insert((tag(noise), n), (trace, fit));
        }
        Ok(&self.circuit_traces[&(tag(noise), n)])
    }

    /// Long Lindblad trace and the detected steady-state start.
    fn lindblad(&mut self, noise: NoiseKind, n: usize) -> Res<&(ErrorTrace, Option<f64>)> {
        if !self.lindblad_traces.contains_key(&(tag(noise), n)) {
            let total = LINDBLAD_STEADY_T.iter().find(|(k, _)| *k == noise).map(|x| x.1).unwrap_or(10.0);
            let spec = LindbladSpec { total_time: total, ..lindblad_spec(noise, n) };
            let trace = total_error_experiment(&RunSpec::Lindblad(spec), &ens(1, 0), TraceOptions { l1: true, audit: false })?;
            let steady = detect_steady_state(&trace.norm_series()?, 2.0, 1e-4);
            self.lindblad_traces.insert((tag(noise), n), (trace, steady));
        }
        Ok(&self.lindblad_traces[&(tag(noise), n)])
    }

    /// Γ_p, its R² and window from the N = 8 single-truncation runs.
    fn lindblad_gamma(&self) -> Res<&[(f64, f64, FitWindow); 2]> {
        if self.lindblad_gamma.get().is_none() {
            let mut out = Vec::new();
            for noise in [NoiseKind::Depolarizing, NoiseKind::AmplitudeDamping] {
                let spec = RunSpec::Lindblad(lindblad_spec(noise, 8));
                let t_e = 1.0;
                let series = single_step_truncation_experiment(&spec, t_e, &ens(1, 0))?;
                let fit = fit_contraction(&series, t_e, 8, GAMMA_WINDOW_R2)?;
                out.push((fit.rate, fit.line.r2, fit.window));
            }
            let arr: [(f64, f64, FitWindow); 2] = out.try_into().map_err(|_| "two fits")?;
            let _ = self.lindblad_gamma.set(arr);
        }
        Ok(self.lindblad_gamma.get().expect("set above"))
    }
}

// ---------------------------------------------------------------- criteria

fn pure_noise(_: &mut Shared) -> Res<Check> {
    let mut worst = 0.0f64;
    for n in [4usize, 8, 12] {
        for p in [0.1, 0.5, 1.0] {
            for noise in [NoiseKind::Depolarizing, NoiseKind::AmplitudeDamping] {
                let ch = noise.channel(p)?;
                let bit = matches!(noise, NoiseKind::AmplitudeDamping) as u8;
                let mut s = VectorizedDensityState::from_computational_product(&vec![bit; n])?;
                for t in 1..=50u32 {
                    noisy_circuit_step(&mut s, &GateLayer::empty(t as usize), &ch)?;
                    // Per-qubit purity: depolarizing shrinks the Bloch vector by 1 − 4p/3,
                    // damping leaves populations (1 − q, q) with q = (1 − p)^t.
                    let purity = match noise {
                        NoiseKind::Depolarizing => 0.5 * (1.0 + (1.0 - 4.0 * p / 3.0).powi(2 * t as i32)),
                        NoiseKind::AmplitudeDamping => {
                            let q = (1.0 - p).powi(t as i32);
                            (1.0 - q).powi(2) + q * q
                        }
                    };
                    let want = 0.5 * purity.log2();
                    worst = worst.max((s.l2_norm().log2() / n as f64 - want).abs());
                }
            }
        }
    }
    check(worst <= PURE_TOL, format!("max |Δ (1/N)log₂‖ρ‖₂| = {worst:.2e} (tol {PURE_TOL:e}) over N∈{{4,8,12}}, p∈{{0.1,0.5,1}}, t≤50"))
}

fn oracle_equivalence(_: &mut Shared) -> Res<Check> {
    let n = 6;
    let mut circuit = 0.0f64;
    for noise in [NoiseKind::Depolarizing, NoiseKind::AmplitudeDamping] {
        let ch = noise.channel(0.05)?;
        let layers = random_circuit(n, 6, 17);
        let dense = exact_evolve_circuit(&DenseState::from_bits(&[0; 6])?, &layers, &ch)?;
        let mut s = VectorizedDensityState::from_computational_product(&[0; 6])?;
        for (k, layer) in layers.iter().enumerate() {
            noisy_circuit_step(&mut s, layer, &ch)?;
            circuit = circuit.max(s.to_dense()?.l2_distance(&dense[k + 1])?);
        }
    }
    let mut lindblad = 0.0f64;
    for noise in [NoiseKind::Depolarizing, NoiseKind::AmplitudeDamping] {
        let spec = LindbladSpec { total_time: 2.0, delta_err: 0.0, ..lindblad_spec(noise, n) };
        let mut dense = Vec::new();
        let mut rho = DenseState::from_bits(&[0; 6])?;
        exact_evolve_lindblad(&mut rho, &spec, |_, r| dense.push(r.clone()))?;
        let mut s = VectorizedDensityState::from_computational_product(&[0; 6])?;
        let mut k = 0;
        let mut err: Option<Box<dyn Error>> = None;
        evolve_lindblad(&mut s, &spec, |_, st, _| {
            match st.to_dense().map_err(Box::<dyn Error>::from).and_then(|d| Ok(d.l2_distance(&dense[k])?)) {
                Ok(d) => lindblad = lindblad.max(d),
                Err(e) => err = Some(e),
            }
            k += 1;
        })?;
        if let Some(e) = err {
            return Err(e);
        }
    }
    check(
        circuit < ORACLE_TOL && lindblad < ORACLE_TOL,
        format!("N=6 max L2 distance: circuit (depth 6) {circuit:.2e}, Lindblad (T=2) {lindblad:.2e} (tol {ORACLE_TOL:e})"),
    )
}

fn truncation_bound(sh: &mut Shared) -> Res<Check> {
    let (trace, _) = sh.circuit(NoiseKind::Depolarizing, 8)?;
    let a = &trace.audit;
    let frac = a.renormalized_violation_fraction();
    check(
        a.calls > 0 && a.exact_violations == 0 && frac < RENORM_VIOLATION_MAX,
        format!(
            "N=8 p=0.05: {} truncations, exact-bound violations {} (max ratio {:.3}), post-renormalization violations {} = {:.1}% (max {:.0}%)",
            a.calls,
            a.exact_violations,
            a.max_exact_ratio,
            a.renormalized_violations,
            100.0 * frac,
            100.0 * RENORM_VIOLATION_MAX
        ),
    )
}

fn norm_decay_coefficients(_: &mut Shared) -> Res<Check> {
    let mut pass = true;
    let mut parts = Vec::new();
    for (noise, target) in [(NoiseKind::Depolarizing, C_DEP), (NoiseKind::AmplitudeDamping, C_DAMP)] {
        let mut gammas = Vec::new();
        for &p in &NORM_DECAY_PS {
            // The late window starts at 1.5 T_s. T_s is about 0.4/p for
            // depolarizing noise and 0.7/p for damping.
            let cover = if noise == NoiseKind::Depolarizing { 1.0 } else { 2.0 };
            // Doubled if the measured T_s leaves the late window empty.
            let mut depth = (cover / p).ceil() as usize;
            let fit = loop {
                let spec = RunSpec::Circuit(CircuitSpec::new(NORM_DECAY_N, depth, noise, p));
                let series = norm_decay_experiment(&spec, &ens(NORM_DECAY_REALIZATIONS, 7))?;
                match fit_decay(&series, NORM_DECAY_N) {
                    Err(ExperimentError::Fit { window: "late", .. }) if depth < 400 => depth *= 2,
                    r => break r?,
                }
            };
            gammas.push(fit.gamma);
        }
        let c = regression_through_origin(&NORM_DECAY_PS, &gammas)?.slope;
        let ok = (c / target - 1.0).abs() <= C_TOL_N10;
        pass &= ok;
        parts.push(format!(
            "c_{} = {c:.3} (target {target} ± {:.0}%; γ_p = {})",
            noise.tag(),
            100.0 * C_TOL_N10,
            gammas.iter().map(|g| format!("{g:.4}")).collect::<Vec<_>>().join(", ")
        ));
    }
    check(pass, format!("N={NORM_DECAY_N} fallback, {NORM_DECAY_REALIZATIONS} realizations, p∈{NORM_DECAY_PS:?}: {}", parts.join("; ")))
}

fn contraction(sh: &mut Shared) -> Res<Check> {
    let n = 8;
    let t_e = 3usize;
    let mut pass = true;
    let mut parts = Vec::new();
    for p in [0.05, 0.1] {
        let spec = RunSpec::Circuit(CircuitSpec::new(n, CIRCUIT_DEPTH, NoiseKind::Depolarizing, p));
        let e = ens(10, 31);
        let gamma = fit_decay(&norm_decay_experiment(&spec, &e)?, n)?;
        let series = single_step_truncation_experiment(&spec, t_e as f64, &e)?;
        // Decrement over t ∈ [T_e + 3, T_e + 2 + max(T_s, 3)].
        let (a, b) = (t_e + 3, t_e + 2 + gamma.t_s.max(3));
        let ts: Vec<f64> = (a..=b.min(CIRCUIT_DEPTH)).map(|t| t as f64).collect();
        let ys: Vec<f64> = ts.iter().map(|&t| series.at(t).expect("integer step").log2()).collect();
        let dec = -linear_fit(&ts, &ys)?.slope / n as f64;
        let rel = dec / gamma.gamma - 1.0;
        pass &= rel.abs() <= CONTRACTION_TOL;
        parts.push(format!("p={p}: decrement/N {dec:.4} vs γ_p {:.4} ({:+.1}%, t∈[{a},{b}])", gamma.gamma, 100.0 * rel));
    }
    let fits = sh.lindblad_gamma()?;
    for (noise, (rate, r2, w)) in [NoiseKind::Depolarizing, NoiseKind::AmplitudeDamping].iter().zip(fits.iter()) {
        pass &= *rate > 0.0 && *r2 > LINDBLAD_R2_MIN;
        parts.push(format!("Lindblad {}: Γ_p {rate:.4}, R² {r2:.4} on t∈[{:.2},{:.2}]", noise.tag(), w.start, w.end));
    }
    check(pass, format!("N=8, T_e=3 (circuits), T_e=1 (Lindblad), tol {:.0}%: {}", 100.0 * CONTRACTION_TOL, parts.join("; ")))
}

fn error_trace_shape(sh: &mut Shared) -> Res<Check> {
    let (trace, fit) = sh.circuit(NoiseKind::Depolarizing, 8)?;
    let mut trace = trace.clone();
    trace.attach_circuit_bound(fit)?;
    let n = 8.0;
    let e: Vec<f64> = trace.rows.iter().map(|r| r.err_l2).collect();
    let peak = (1..e.len()).max_by(|&i, &j| e[i].total_cmp(&e[j])).expect("non-empty");
    let rises = e[1] < e[peak];
    let turns = peak + 1 < e.len() && e[peak + 1] < e[peak];
    // Plateau onset: first t after the peak from which every step of the next
    // T_s steps changes log₂ error by at most 10% of the contraction γ_p·N.
    let tol = 0.1 * fit.gamma * n;
    let flat = |t: usize| {
        let end = (t + fit.t_s).min(e.len() - 1);
        end > t && (t..end).all(|k| (e[k + 1].log2() - e[k].log2()).abs() <= tol)
    };
    let onset = (peak + 1..e.len()).find(|&t| flat(t));
    // Not judged: the longest run of flat steps after the peak.
    let step_flat = |k: usize| (e[k + 1].log2() - e[k].log2()).abs() <= tol;
    let (mut run, mut best) = (None::<usize>, (0, 0));
    for k in peak + 1..e.len() - 1 {
        if step_flat(k) {
            let a = *run.get_or_insert(k);
            if k + 1 - a > best.1 - best.0 {
                best = (a, k + 1);
            }
        } else {
            run = None;
        }
    }
    let (lo, hi) = (PLATEAU_RANGE.0 * fit.t_s as f64, PLATEAU_RANGE.1 * fit.t_s as f64);
    let in_range = onset.is_some_and(|t| (lo..=hi).contains(&(t as f64)));
    let violations: Vec<usize> =
        trace.rows.iter().skip(1).filter(|r| r.bound.is_some_and(|b| r.err_l2 > b)).map(|r| r.t as usize).collect();
    let bounded = violations.is_empty() && trace.rows.iter().skip(1).all(|r| r.bound.is_some());
    check(
        rises && turns && in_range && bounded,
        format!(
            "N=8 p=0.05: T_s={} (γ_p {:.4}), peak {:.2e} at t={peak}, plateau onset {:?} (window [{lo}, {hi}]), bound violations at t={violations:?}; info: longest flat stretch t∈[{}, {}]",
            fit.t_s,
            fit.gamma,
            e[peak],
            onset,
            best.0,
            best.1
        ),
    )
}

fn lambda_collapse(sh: &mut Shared) -> Res<Check> {
    let mut pass = true;
    let mut parts = Vec::new();
    let noises = [NoiseKind::Depolarizing, NoiseKind::AmplitudeDamping];
    for noise in noises {
        let mut lams = Vec::new();
        for n in [4, 6, 8] {
            let (trace, fit) = sh.circuit(noise, n)?;
            lams.push(lambda_infinity(trace, fit.t_s as f64).ok_or("no Λ in the steady window")?);
        }
        let s = spread(&lams);
        pass &= s < LAMBDA_SPREAD_MAX;
        parts.push(format!("circuit {} Λ_∞ {:.3?} spread {:.1}%", noise.tag(), lams, 100.0 * s));
    }
    for noise in noises {
        let mut lams = Vec::new();
        for n in [4, 6, 8] {
            let (trace, steady) = sh.lindblad(noise, n)?;
            let steady = steady.ok_or_else(|| format!("Lindblad {} N={n} reached no steady state", noise.tag()))?;
            lams.push(lambda_infinity(trace, steady).ok_or("no Λ in the steady window")?);
        }
        let s = spread(&lams);
        pass &= s < LAMBDA_SPREAD_MAX;
        parts.push(format!("Lindblad {} Λ_∞ {:.3?} spread {:.1}%", noise.tag(), lams, 100.0 * s));
    }
    // Steady-state tightening of the empirical L1 bound over the naive one at N = 8.
    let need = 2f64.powf(8.0 / 2.0 - 2.0);
    for noise in noises {
        let (trace, fit) = sh.circuit(noise, 8)?;
        let t = l1_bound_report(trace, fit)?.steady_tightening.ok_or("no steady rows")?;
        pass &= t >= need;
        parts.push(format!("circuit {} tightening {t:.2}", noise.tag()));
    }
    let gammas = sh.lindblad_gamma()?.clone();
    for (noise, (gamma, _, _)) in noises.iter().zip(gammas.iter()) {
        let (trace, steady) = sh.lindblad(*noise, 8)?;
        let steady = steady.ok_or("no steady state")?;
        let t = l1_bound_report_lindblad(trace, *gamma, steady)?.steady_tightening.ok_or("no steady rows")?;
        pass &= t >= need;
        parts.push(format!("Lindblad {} tightening {t:.2}", noise.tag()));
    }
    check(pass, format!("spread < {:.0}%, tightening ≥ {need}: {}", 100.0 * LAMBDA_SPREAD_MAX, parts.join("; ")))
}

fn n_scaling(_: &mut Shared) -> Res<Check> {
    let ns = [4usize, 8, 16, 32, 50, 100, 150, 200];
    let base = CircuitSpec::new(2, 2, NoiseKind::Depolarizing, CIRCUIT_P);
    let r = nscale_experiment(&base, &ns, &ens(10, 5))?;
    let free = &r.free_fit;
    let intercept_ok = free.intercept.abs() <= 2.0 * free.intercept_se;
    let ratio = r.series.at(200.0).ok_or("N=200")? / r.series.at(100.0).ok_or("N=100")?;
    let linear_ok = (NSCALE_DOUBLING.0..=NSCALE_DOUBLING.1).contains(&ratio);
    // Not judged: at strong noise the trace rescale stays small.
    let strong = nscale_experiment(&CircuitSpec::new(2, 2, NoiseKind::Depolarizing, 0.2), &[100, 200], &ens(10, 5))?;
    let strong_ratio = strong.series.at(200.0).ok_or("N=200")? / strong.series.at(100.0).ok_or("N=100")?;
    check(
        intercept_ok && linear_ok,
        format!(
            "t=2, p=0.05, N up to 200: origin slope {:.3e} (R² {:.4}), free intercept {:.2e} ± {:.2e}, ratio²(200)/ratio²(100) = {ratio:.3}; info p=0.2 ratio {strong_ratio:.3}",
            r.origin_fit.slope, r.origin_fit.r2, free.intercept, free.intercept_se
        ),
    )
}

// ---- exact Lindblad propagation for the Trotter-order check

fn kron_site(op: [C64; 4], site: usize, n: usize) -> Vec<C64> {
    let d = 1usize << n;
    let bit = n - 1 - site;
    let mut m = vec![C64::new(0.0, 0.0); d * d];
    for r in 0..d {
        for c in 0..d {
            if (r ^ c) & !(1 << bit) == 0 {
                m[r * d + c] = op[((r >> bit) & 1) * 2 + ((c >> bit) & 1)];
            }
        }
    }
    m
}

fn matmul(a: &[C64], b: &[C64], d: usize) -> Vec<C64> {
    let mut out = vec![C64::new(0.0, 0.0); d * d];
    for i in 0..d {
        for k in 0..d {
            let x = a[i * d + k];
            if x != C64::new(0.0, 0.0) {
                for j in 0..d {
                    out[i * d + j] += x * b[k * d + j];
                }
            }
        }
    }
    out
}

fn adjoint(a: &[C64], d: usize) -> Vec<C64> {
    (0..d * d).map(|k| a[(k % d) * d + k / d].conj()).collect()
}

/// Liouvillian on row-major `vec(ρ)`: `vec(AρB) = (A ⊗ Bᵀ) vec(ρ)`.
fn liouvillian(spec: &LindbladSpec) -> Vec<C64> {
    let n = spec.n;
    let d = 1usize << n;
    let z = C64::new(0.0, 0.0);
    let one = C64::new(1.0, 0.0);
    let x = [z, one, one, z];
    let y = [z, C64::new(0.0, -1.0), C64::new(0.0, 1.0), z];
    let zz = [one, z, z, -one];
    let mut h = vec![z; d * d];
    for i in 0..n {
        for (k, v) in kron_site(x, i, n).iter().enumerate() {
            h[k] -= v * spec.ising.g;
        }
        for (k, v) in kron_site(zz, i, n).iter().enumerate() {
            h[k] -= v * spec.ising.h;
        }
        if i + 1 < n {
            let zizj = matmul(&kron_site(zz, i, n), &kron_site(zz, i + 1, n), d);
            for (k, v) in zizj.iter().enumerate() {
                h[k] -= v * spec.ising.j;
            }
        }
    }
    let mut jumps = Vec::new();
    for i in 0..n {
        match spec.noise {
            NoiseKind::Depolarizing => {
                let w = (spec.kappa / 3.0).sqrt();
                for p in [x, y, zz] {
                    jumps.push(kron_site(p.map(|v| v * w), i, n));
                }
            }
            NoiseKind::AmplitudeDamping => jumps.push(kron_site([z, C64::new(spec.kappa.sqrt(), 0.0), z, z], i, n)),
        }
    }
    let dd = d * d;
    let mut l = vec![z; dd * dd];
    let minus_i = C64::new(0.0, -1.0);
    let mut add = |a: &[C64], b: &[C64], coef: C64| {
        // coef · A ρ B
        for i in 0..d {
            for k in 0..d {
                let aik = a[i * d + k];
                if aik == z {
                    continue;
                }
                for lq in 0..d {
                    for j in 0..d {
                        let blj = b[lq * d + j];
                        if blj != z {
                            l[(i * d + j) * dd + k * d + lq] += coef * aik * blj;
                        }
                    }
                }
            }
        }
    };
    let id: Vec<C64> = (0..d * d).map(|k| if k % (d + 1) == 0 { one } else { z }).collect();
    add(&h, &id, minus_i);
    add(&id, &h, -minus_i);
    for jmp in &jumps {
        let jd = adjoint(jmp, d);
        let jdj = matmul(&jd, jmp, d);
        add(jmp, &jd, one);
        add(&jdj, &id, C64::new(-0.5, 0.0));
        add(&id, &jdj, C64::new(-0.5, 0.0));
    }
    l
}

/// `exp(T·L) v` by Taylor series on short substeps.
fn propagate(l: &[C64], v: &[C64], t: f64) -> Vec<C64> {
    let dd = v.len();
    let steps = 200;
    let h = t / steps as f64;
    let mut v = v.to_vec();
    for _ in 0..steps {
        let mut term = v.clone();
        let mut acc = v.clone();
        for k in 1..40 {
            let mut next = vec![C64::new(0.0, 0.0); dd];
            for (i, row) in l.chunks(dd).enumerate() {
                next[i] = row.iter().zip(&term).map(|(a, b)| a * b).sum::<C64>() * (h / k as f64);
            }
            term = next;
            let size: f64 = term.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
            acc.iter_mut().zip(&term).for_each(|(a, b)| *a += b);
            if size < 1e-18 {
                break;
            }
        }
        v = acc;
    }
    v
}

fn trotter_error_slope(spec: &LindbladSpec, dts: &[f64]) -> Res<(f64, Vec<f64>)> {
    let rho0 = DenseState::from_bits(&vec![0; spec.n])?;
    let exact = propagate(&liouvillian(spec), &rho0.data, spec.total_time);
    let mut errs = Vec::new();
    for &dt in dts {
        let mut rho = rho0.clone();
        exact_evolve_lindblad(&mut rho, &LindbladSpec { dt, ..spec.clone() }, |_, _| {})?;
        errs.push(rho.data.iter().zip(&exact).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>().sqrt());
    }
    let xs: Vec<f64> = dts.iter().map(|d| d.ln()).collect();
    let ys: Vec<f64> = errs.iter().map(|e| e.ln()).collect();
    Ok((linear_fit(&xs, &ys)?.slope, errs))
}

fn fmt_errs(errs: &[f64]) -> String {
    errs.iter().map(|e| format!("{e:.2e}")).collect::<Vec<_>>().join(", ")
}

fn trotter_order(_: &mut Shared) -> Res<Check> {
    let dts = [0.2, 0.1, 0.05, 0.025];
    let mut pass = true;
    let mut parts = Vec::new();
    // Both dissipators with the (g, h) = (1, 1) chain.
    let base = LindbladSpec { total_time: 1.0, delta_err: 0.0, ..LindbladSpec::standard_depolarizing(4) };
    for spec in [base.clone(), LindbladSpec { noise: NoiseKind::AmplitudeDamping, kappa: 0.4, ..base.clone() }] {
        let (slope, errs) = trotter_error_slope(&spec, &dts)?;
        pass &= (TROTTER_SLOPE.0..=TROTTER_SLOPE.1).contains(&slope);
        parts.push(format!("{} κ={} slope {slope:.3} (errors {})", spec.noise.tag(), spec.kappa, fmt_errs(&errs)));
    }
    // g = 8 puts gΔt = 1.6 at the largest step, outside the asymptotic range;
    // reported for reference only.
    let strong = LindbladSpec { total_time: 1.0, delta_err: 0.0, ..LindbladSpec::standard_damping(4) };
    let (slope, errs) = trotter_error_slope(&strong, &dts)?;
    parts.push(format!("[info] g=8 damping slope {slope:.3} (errors {})", fmt_errs(&errs)));
    check(pass, format!("N=4, T=1, Δt∈{dts:?}, slope 2 ± 0.2: {}", parts.join("; ")))
}

fn single_qubit(_: &mut Shared) -> Res<Check> {
    let omega: f64 = 1.0;
    let mut worst = 0.0f64;
    // Underdamped below η = 4, overdamped above, and the critical point.
    for eta in [0.5, 2.0, 3.9, 4.0, 4.1, 8.0, 20.0] {
        let kappa = eta * omega;
        let dt = 1e-3 / kappa.max(omega);
        for t in [0.5, 1.0, 2.0, 5.0, 10.0] {
            let a = rabi_damping_closed_form(omega, kappa, t)?;
            let b = rabi_damping_ode(omega, kappa, t, dt)?;
            let d = |x: &QubitState, y: &QubitState| {
                [(x.rho00 - y.rho00).norm(), (x.rho01 - y.rho01).norm(), (x.rho10 - y.rho10).norm(), (x.rho11 - y.rho11).norm()]
                    .into_iter()
                    .fold(0.0, f64::max)
            };
            worst = worst.max(d(&a, &b));
        }
    }
    // ½[1 + η²(4 + η²)/(2 + η²)²]
    let purity = |eta: f64| 0.5 * (1.0 + eta * eta * (4.0 + eta * eta) / (2.0 + eta * eta).powi(2));
    let mut steady = 0.0f64;
    for eta in [0.3, 1.0, 2.0_f64.sqrt(), 3.0, 6.0] {
        let kappa = eta * omega;
        let late = rabi_damping_closed_form(omega, kappa, 80.0 / kappa)?;
        steady = steady.max((late.purity() - purity(eta)).abs()).max((rabi_damping_steady_purity(eta) - purity(eta)).abs());
    }
    let p0 = rabi_damping_steady_purity(0.0);
    let p_root2 = rabi_damping_steady_purity(2.0_f64.sqrt());
    let p_big = rabi_damping_steady_purity(1e4);
    let monotone = (1..200).all(|k| rabi_damping_steady_purity(k as f64 * 0.05) > rabi_damping_steady_purity((k - 1) as f64 * 0.05));
    let limits = (p0 - 0.5).abs() < 1e-15 && (p_root2 - 0.875).abs() < 1e-14 && (1.0 - p_big) < 1e-7 && monotone;
    check(
        worst <= QUBIT_TOL && steady <= QUBIT_TOL && limits,
        format!("closed form vs RK4 max {worst:.2e}, steady purity max dev {steady:.2e} (tol {QUBIT_TOL:e}); purity(0)={p0}, purity(√2)={p_root2}, purity(1e4)={p_big:.9}, monotone {monotone}"),
    )
}

fn area_law(_: &mut Shared) -> Res<Check> {
    let ns = [4usize, 6, 8, 10];
    let mut pass = true;
    let mut parts = Vec::new();
    for noise in [NoiseKind::Depolarizing, NoiseKind::AmplitudeDamping] {
        let spec = RunSpec::Lindblad(LindbladSpec { total_time: 10.0, ..lindblad_spec(noise, 4) });
        let maxes: Vec<f64> = sop_scan(&spec, &ns)?.iter().map(|s| s.values.iter().cloned().fold(0.0, f64::max)).collect();
        let s = spread(&maxes);
        pass &= s < SOP_SPREAD_MAX;
        parts.push(format!("{} max S_op {:.3?} spread {:.1}% (info: N ≥ 6 only {:.1}%)", noise.tag(), maxes, 100.0 * s, 100.0 * spread(&maxes[1..])));
    }
    check(pass, format!("N∈{ns:?}, T=10, spread < {:.0}%: {}", 100.0 * SOP_SPREAD_MAX, parts.join("; ")))
}

type Criterion = fn(&mut Shared) -> Res<Check>;

fn main() -> ExitCode {
    let criteria: [(&str, Criterion); 11] = [
        ("pure-noise-closed-forms", pure_noise),
        ("oracle-equivalence", oracle_equivalence),
        ("truncation-bound", truncation_bound),
        ("norm-decay-coefficients", norm_decay_coefficients),
        ("contraction", contraction),
        ("error-trace-shape", error_trace_shape),
        ("lambda-collapse", lambda_collapse),
        ("n-scaling", n_scaling),
        ("trotter-order", trotter_order),
        ("single-qubit-model", single_qubit),
        ("area-law", area_law),
    ];
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut shared = Shared::default();
    let mut failed = 0;
    let mut ran = 0;
    for (name, run) in criteria {
        if !filters.is_empty() && !filters.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        ran += 1;
        let start = Instant::now();
        let (pass, detail) = match run(&mut shared) {
            Ok(c) => (c.pass, c.detail),
            Err(e) => (false, format!("error: {e}")),
        };
        failed += usize::from(!pass);
        println!("{} {name} [{:.1} s]: {detail}", if pass { "PASS" } else { "FAIL" }, start.elapsed().as_secs_f64());
    }
    println!("acceptance: {} of {ran} criteria passed", ran - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
