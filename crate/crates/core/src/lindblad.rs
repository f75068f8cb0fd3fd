//! Trotterized Lindblad evolution of the Ising chain with transverse and
//! longitudinal fields under single-site noise.

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channels::{doubled_two_site, ChannelError, NoiseKind};
use crate::oracle::{DenseState, OracleError};
use crate::state::{StateError, TruncationReport, VectorizedDensityState};
use crate::tensor::{self, DenseTensor, TensorError, Truncation};

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };
const ONE: C64 = C64 { re: 1.0, im: 0.0 };

/// Largest chain the dense Trotter reference accepts.
pub const DENSE_LINDBLAD_LIMIT: usize = 10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LindbladError {
    #[error("invalid specification: {0}")]
    Spec(String),

    #[error("at step {step}: {source}")]
    AtStep { step: usize, source: StateError },

    #[error(transparent)]
    Channel(#[from] ChannelError),

    #[error(transparent)]
    State(#[from] StateError),

    #[error(transparent)]
    Oracle(#[from] OracleError),

    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IsingParams {
    pub j: f64,
    pub g: f64,
    pub h: f64,
}

impl IsingParams {
    pub fn new(j: f64, g: f64, h: f64) -> Result<Self, LindbladError> {
        if j == 0.0 || !j.is_finite() || !g.is_finite() || !h.is_finite() {
            return Err(LindbladError::Spec(format!("need finite couplings with J ≠ 0, got ({j}, {g}, {h})")));
        }
        Ok(Self { j, g, h })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LindbladSpec {
    pub n: usize,
    pub ising: IsingParams,
    pub noise: NoiseKind,
    pub kappa: f64,
    pub dt: f64,
    pub total_time: f64,
    pub delta_err: f64,
    pub seed: u64,
}

impl LindbladSpec {
    /// The depolarizing setting `(g, h, κ) = (1, 1, 0.04)`.
    pub fn standard_depolarizing(n: usize) -> Self {
        Self {
            n,
            ising: IsingParams { j: 1.0, g: 1.0, h: 1.0 },
            noise: NoiseKind::Depolarizing,
            kappa: 0.04,
            dt: 0.05,
            total_time: 10.0,
            delta_err: 1e-6,
            seed: 0,
        }
    }

    /// The damping setting `(g, h, κ) = (8, 1, 0.4)`.
    pub fn standard_damping(n: usize) -> Self {
        Self { ising: IsingParams { j: 1.0, g: 8.0, h: 1.0 }, noise: NoiseKind::AmplitudeDamping, kappa: 0.4, ..Self::standard_depolarizing(n) }
    }

    pub fn validate(&self) -> Result<(), LindbladError> {
        if self.n < 2 {
            return Err(LindbladError::Spec(format!("n = {} is below 2", self.n)));
        }
        IsingParams::new(self.ising.j, self.ising.g, self.ising.h)?;
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(LindbladError::Spec(format!("dt = {} must be positive", self.dt)));
        }
        if !(self.kappa >= 0.0) || !self.kappa.is_finite() {
            return Err(LindbladError::Spec(format!("kappa = {} must be non-negative", self.kappa)));
        }
        if !(self.total_time >= 0.0) {
            return Err(LindbladError::Spec(format!("total_time = {} must be non-negative", self.total_time)));
        }
        let steps = self.total_time / self.dt;
        if (steps - steps.round()).abs() > 1e-9 * steps.max(1.0) {
            return Err(LindbladError::Spec(format!("total_time {} is not a multiple of dt {}", self.total_time, self.dt)));
        }
        if !(0.0..1.0).contains(&self.delta_err) {
            return Err(LindbladError::Spec(format!("delta_err = {} outside [0, 1)", self.delta_err)));
        }
        Ok(())
    }

    pub fn steps(&self) -> usize {
        (self.total_time / self.dt).round() as usize
    }
}

/// `1 − exp(−κ Δt)`.
pub fn rate_from_kappa(kappa: f64, dt: f64) -> Result<f64, LindbladError> {
    if kappa < 0.0 || dt < 0.0 || !kappa.is_finite() || !dt.is_finite() {
        return Err(LindbladError::Spec(format!("need κ ≥ 0 and Δt ≥ 0, got ({kappa}, {dt})")));
    }
    Ok(-(-kappa * dt).exp_m1())
}

fn pauli_x() -> [C64; 4] {
    [ZERO, ONE, ONE, ZERO]
}

fn pauli_z() -> [C64; 4] {
    [ONE, ZERO, ZERO, -ONE]
}

fn kron(a: &[C64; 4], b: &[C64; 4]) -> [C64; 16] {
    let mut out = [ZERO; 16];
    for i1 in 0..2 {
        for i2 in 0..2 {
            for j1 in 0..2 {
                for j2 in 0..2 {
                    out[(i1 * 2 + i2) * 4 + j1 * 2 + j2] = a[i1 * 2 + j1] * b[i2 * 2 + j2];
                }
            }
        }
    }
    out
}

fn identity2() -> [C64; 4] {
    [ONE, ZERO, ZERO, ONE]
}

/// Bond terms whose sum is the full Hamiltonian. Each site field is shared
/// equally between the bonds that touch it, so boundary sites put their whole
/// field on their single bond.
pub fn ising_two_site_terms(params: &IsingParams, n: usize) -> Result<Vec<DenseTensor>, LindbladError> {
    if n < 2 {
        return Err(LindbladError::Spec(format!("n = {n} is below 2")));
    }
    let (x, z, id) = (pauli_x(), pauli_z(), identity2());
    let zz = kron(&z, &z);
    let (xi, ix) = (kron(&x, &id), kron(&id, &x));
    let (zi, iz) = (kron(&z, &id), kron(&id, &z));
    let weight = |site: usize| if site == 0 || site == n - 1 { 1.0 } else { 0.5 };
    let terms = (0..n - 1)
        .map(|i| {
            let (wl, wr) = (weight(i), weight(i + 1));
            let data = (0..16)
                .map(|k| {
                    -params.j * zz[k] - params.g * (xi[k] * wl + ix[k] * wr) - params.h * (zi[k] * wl + iz[k] * wr)
                })
                .collect();
            DenseTensor::new(vec![4, 4], data).expect("4×4")
        })
        .collect();
    Ok(terms)
}

/// `exp(−i τ H)` for a Hermitian matrix, through its eigendecomposition.
pub fn hermitian_propagator(h: &DenseTensor, tau: f64) -> Result<DenseTensor, LindbladError> {
    let (vals, vecs) = tensor::hermitian_eigen(h)?;
    let d = vals.len();
    let mut scaled = vecs.clone();
    for i in 0..d {
        for (j, &e) in vals.iter().enumerate() {
            scaled.data_mut()[i * d + j] *= C64::from_polar(1.0, -tau * e);
        }
    }
    Ok(tensor::matmul_tensors(&scaled, &vecs.adjoint()?)?)
}

/// The primitives of one Trotter step, in application order.
#[derive(Clone, Debug)]
pub struct TrotterStep {
    pub n: usize,
    /// Superoperator of the half-step dissipator, applied to every site at both ends.
    pub half_dissipation: DenseTensor,
    /// Half-step unitaries on the bonds starting at sites 0, 2, 4, …
    pub first_half: Vec<(usize, DenseTensor)>,
    /// Full-step unitaries on the bonds starting at sites 1, 3, 5, …
    pub middle: Vec<(usize, DenseTensor)>,
}

impl TrotterStep {
    pub fn new(spec: &LindbladSpec) -> Result<Self, LindbladError> {
        spec.validate()?;
        let p = rate_from_kappa(spec.kappa, spec.dt / 2.0)?;
        let half_dissipation = spec.noise.channel(p)?.superoperator();
        let terms = ising_two_site_terms(&spec.ising, spec.n)?;
        let mut first_half = Vec::new();
        let mut middle = Vec::new();
        for (i, h) in terms.iter().enumerate() {
            if i % 2 == 0 {
                first_half.push((i, hermitian_propagator(h, spec.dt / 2.0)?));
            } else {
                middle.push((i, hermitian_propagator(h, spec.dt)?));
            }
        }
        Ok(Self { n: spec.n, half_dissipation, first_half, middle })
    }

    /// Unitary sublayers in order: half, full, half.
    pub fn unitary_sublayers(&self) -> [&[(usize, DenseTensor)]; 3] {
        [&self.first_half, &self.middle, &self.first_half]
    }

    /// One step keeping every gate split numerically exact.
    pub fn apply_mps(&self, s: &mut VectorizedDensityState) -> Result<(), LindbladError> {
        self.apply_mps_with(s, &Truncation::numerical())
    }

    /// One step with gate splits compressed by `split`, see [`split_rule`].
    pub fn apply_mps_with(&self, s: &mut VectorizedDensityState, split: &Truncation) -> Result<(), LindbladError> {
        for site in 0..s.n() {
            s.apply_site_matrix(site, &self.half_dissipation)?;
        }
        for layer in self.unitary_sublayers() {
            for (left, u) in layer {
                s.apply_two_site_matrix(*left, &doubled_two_site(u), split)?;
            }
        }
        for site in 0..s.n() {
            s.apply_site_matrix(site, &self.half_dissipation)?;
        }
        Ok(())
    }

    pub fn apply_dense(&self, rho: &mut DenseState) -> Result<(), LindbladError> {
        for site in 0..rho.n {
            rho.apply_site_superop(site, &self.half_dissipation)?;
        }
        for layer in self.unitary_sublayers() {
            for (left, u) in layer {
                rho.apply_two_site_unitary(*left, u)?;
            }
        }
        for site in 0..rho.n {
            rho.apply_site_superop(site, &self.half_dissipation)?;
        }
        Ok(())
    }
}

/// Relative weight a gate split inside a truncated step may drop, far below
/// the end-of-step threshold so the step stays exact at that resolution.
pub const SPLIT_FACTOR: f64 = 1e-6;

/// Gate-split rule for a run truncated at `delta_err`: exact when the run is
/// untruncated, otherwise dropping at most `SPLIT_FACTOR · delta_err` per split.
/// Without it bond dimensions grow roughly tenfold within one step.
pub fn split_rule(delta_err: f64) -> Truncation {
    if delta_err > 0.0 {
        Truncation { weight_cutoff: Some(SPLIT_FACTOR * delta_err), ..Truncation::numerical() }
    } else {
        Truncation::numerical()
    }
}

pub fn trotter_step(spec: &LindbladSpec) -> Result<TrotterStep, LindbladError> {
    TrotterStep::new(spec)
}

/// Runs `spec.steps()` Trotter steps, each followed by truncation at
/// `spec.delta_err` and renormalization. The observer sees the time, the
/// state and the truncation report after every full step.
pub fn evolve_lindblad<F>(s: &mut VectorizedDensityState, spec: &LindbladSpec, mut observer: F) -> Result<(), LindbladError>
where
    F: FnMut(f64, &VectorizedDensityState, &TruncationReport),
{
    if s.n() != spec.n {
        return Err(LindbladError::Spec(format!("state has {} sites, spec {}", s.n(), spec.n)));
    }
    let step = TrotterStep::new(spec)?;
    let split = split_rule(spec.delta_err);
    for k in 1..=spec.steps() {
        step.apply_mps_with(s, &split).map_err(|e| match e {
            LindbladError::State(source) => LindbladError::AtStep { step: k, source },
            other => other,
        })?;
        let mut report = s.truncate(spec.delta_err).map_err(|source| LindbladError::AtStep { step: k, source })?;
        report.trace_rescale = s.renormalize().map_err(|source| LindbladError::AtStep { step: k, source })?;
        observer(k as f64 * spec.dt, s, &report);
    }
    Ok(())
}

/// Dense reference applying the identical Trotter schedule. The observer sees
/// every state after a full step.
pub fn exact_evolve_lindblad<F>(rho: &mut DenseState, spec: &LindbladSpec, mut observer: F) -> Result<(), LindbladError>
where
    F: FnMut(f64, &DenseState),
{
    if rho.n > DENSE_LINDBLAD_LIMIT {
        return Err(OracleError::TooLarge { n: rho.n, limit: DENSE_LINDBLAD_LIMIT }.into());
    }
    if rho.n != spec.n {
        return Err(LindbladError::Spec(format!("state has {} sites, spec {}", rho.n, spec.n)));
    }
    let step = TrotterStep::new(spec)?;
    for k in 1..=spec.steps() {
        step.apply_dense(rho)?;
        observer(k as f64 * spec.dt, rho);
    }
    Ok(())
}

/// Dense Hamiltonian `−J Σ ZZ − g Σ X − h Σ Z` built site by site.
pub fn dense_ising_hamiltonian(params: &IsingParams, n: usize) -> Vec<C64> {
    let dim = 1usize << n;
    let mut h = vec![ZERO; dim * dim];
    for s in 0..dim {
        let z = |i: usize| if (s >> (n - 1 - i)) & 1 == 0 { 1.0 } else { -1.0 };
        let mut diag = 0.0;
        for i in 0..n - 1 {
            diag -= params.j * z(i) * z(i + 1);
        }
        for i in 0..n {
            diag -= params.h * z(i);
            let flipped = s ^ (1 << (n - 1 - i));
            h[flipped * dim + s] -= C64::new(params.g, 0.0);
        }
        h[s * dim + s] += C64::new(diag, 0.0);
    }
    h
}
