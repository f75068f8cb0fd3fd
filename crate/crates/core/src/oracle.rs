//! Exact references: dense density matrices, trace and Frobenius norms, and
//! closed-form solutions for pure noise and the driven, damped qubit.

use num_complex::Complex64 as C64;
use thiserror::Error;

use crate::channels::{doubled_two_site, GateLayer, KrausChannel};
use crate::state::DENSE_LIMIT;
use crate::tensor::{self, DenseTensor, TensorError};

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };
const ONE: C64 = C64 { re: 1.0, im: 0.0 };

/// Largest tolerated Frobenius norm of `A − A†` for [`DenseState::l1_norm`].
pub const HERMITIAN_TOL: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("dense evolution is limited to {limit} sites, got {n}")]
    TooLarge { n: usize, limit: usize },

    #[error("operands act on {0} and {1} qubits")]
    SizeMismatch(usize, usize),

    #[error("matrix is not Hermitian (residual {0:e})")]
    NotHermitian(f64),

    #[error("site {site} out of range for {n} qubits")]
    Site { site: usize, n: usize },

    #[error("step {dt} exceeds the limit {limit} for this drive and damping")]
    StepTooLarge { dt: f64, limit: f64 },

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// A `2^N × 2^N` operator in row-major order, qubit 0 as the most significant bit.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseState {
    pub n: usize,
    pub data: Vec<C64>,
}

impl DenseState {
    pub fn from_bits(bits: &[u8]) -> Result<Self, OracleError> {
        let n = bits.len();
        check_size(n)?;
        let dim = 1usize << n;
        let idx = bits.iter().fold(0usize, |acc, &b| (acc << 1) | usize::from(b != 0));
        let mut data = vec![ZERO; dim * dim];
        data[idx * dim + idx] = ONE;
        Ok(Self { n, data })
    }

    pub fn maximally_mixed(n: usize) -> Result<Self, OracleError> {
        check_size(n)?;
        let dim = 1usize << n;
        let mut data = vec![ZERO; dim * dim];
        let w = C64::new(1.0 / dim as f64, 0.0);
        for i in 0..dim {
            data[i * dim + i] = w;
        }
        Ok(Self { n, data })
    }

    pub fn dim(&self) -> usize {
        1 << self.n
    }

    pub fn get(&self, row: usize, col: usize) -> C64 {
        self.data[row * self.dim() + col]
    }

    pub fn trace(&self) -> C64 {
        let d = self.dim();
        (0..d).map(|i| self.data[i * d + i]).sum()
    }

    /// Frobenius norm, `sqrt(Tr[A†A])`.
    pub fn l2_norm(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn sub(&self, other: &Self) -> Result<Self, OracleError> {
        if self.n != other.n {
            return Err(OracleError::SizeMismatch(self.n, other.n));
        }
        Ok(Self { n: self.n, data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect() })
    }

    pub fn l2_distance(&self, other: &Self) -> Result<f64, OracleError> {
        if self.n != other.n {
            return Err(OracleError::SizeMismatch(self.n, other.n));
        }
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>().sqrt())
    }

    /// Frobenius norm of `A − A†`.
    pub fn hermiticity_residual(&self) -> f64 {
        let d = self.dim();
        let mut acc = 0.0;
        for i in 0..d {
            for j in i + 1..d {
                acc += 2.0 * (self.data[i * d + j] - self.data[j * d + i].conj()).norm_sqr();
            }
            acc += (2.0 * self.data[i * d + i].im).powi(2);
        }
        acc.sqrt()
    }

    fn as_tensor(&self) -> DenseTensor {
        DenseTensor::new(vec![self.dim(), self.dim()], self.data.clone()).expect("square buffer")
    }

    /// Eigenvalues of a Hermitian operator, ascending.
    pub fn eigenvalues(&self) -> Result<Vec<f64>, OracleError> {
        let res = self.hermiticity_residual();
        if res > HERMITIAN_TOL {
            return Err(OracleError::NotHermitian(res));
        }
        Ok(tensor::hermitian_eigenvalues(&self.as_tensor())?)
    }

    /// Trace norm. Hermitian input goes through the eigenvalues; anything
    /// else (truncating inside a degenerate Schmidt multiplet can leave a tiny
    /// anti-Hermitian part) through the singular values.
    pub fn l1_norm(&self) -> Result<f64, OracleError> {
        if self.hermiticity_residual() <= HERMITIAN_TOL {
            return Ok(self.eigenvalues()?.iter().map(|x| x.abs()).sum());
        }
        Ok(tensor::singular_values(&self.as_tensor())?.iter().sum())
    }

    fn check_site(&self, site: usize) -> Result<(), OracleError> {
        if site >= self.n {
            return Err(OracleError::Site { site, n: self.n });
        }
        Ok(())
    }

    /// Applies a 4×4 superoperator on the doubled index `a * 2 + b` of `site`.
    pub fn apply_site_superop(&mut self, site: usize, s: &DenseTensor) -> Result<(), OracleError> {
        self.check_site(site)?;
        let d = self.dim();
        let bit = 1usize << (self.n - 1 - site);
        let m = s.data();
        for r in (0..d).filter(|r| r & bit == 0) {
            for c in (0..d).filter(|c| c & bit == 0) {
                let idx = [r * d + c, r * d + c + bit, (r + bit) * d + c, (r + bit) * d + c + bit];
                let v = idx.map(|i| self.data[i]);
                for q in 0..4 {
                    self.data[idx[q]] = m[q * 4] * v[0] + m[q * 4 + 1] * v[1] + m[q * 4 + 2] * v[2] + m[q * 4 + 3] * v[3];
                }
            }
        }
        Ok(())
    }

    pub fn apply_channel(&mut self, site: usize, ch: &KrausChannel) -> Result<(), OracleError> {
        self.apply_site_superop(site, &ch.superoperator())
    }

    /// `ρ → U ρ U†` for a 4×4 `U` on qubits `left, left + 1`.
    pub fn apply_two_site_unitary(&mut self, left: usize, u: &DenseTensor) -> Result<(), OracleError> {
        self.check_site(left + 1)?;
        let d = self.dim();
        let b0 = 1usize << (self.n - 1 - left);
        let b1 = 1usize << (self.n - 2 - left);
        let ud = u.data();
        let offs = [0, b1, b0, b0 + b1];
        let bases: Vec<usize> = (0..d).filter(|i| i & (b0 | b1) == 0).collect();
        // rows: U ρ
        for &base in &bases {
            let rows = offs.map(|o| base + o);
            for c in 0..d {
                let v = rows.map(|r| self.data[r * d + c]);
                for q in 0..4 {
                    self.data[rows[q] * d + c] = ud[q * 4] * v[0] + ud[q * 4 + 1] * v[1] + ud[q * 4 + 2] * v[2] + ud[q * 4 + 3] * v[3];
                }
            }
        }
        // columns: (U ρ) U†
        for r in 0..d {
            let row = &mut self.data[r * d..(r + 1) * d];
            for &base in &bases {
                let cols = offs.map(|o| base + o);
                let v = cols.map(|c| row[c]);
                for q in 0..4 {
                    row[cols[q]] = ud[q * 4].conj() * v[0] + ud[q * 4 + 1].conj() * v[1] + ud[q * 4 + 2].conj() * v[2] + ud[q * 4 + 3].conj() * v[3];
                }
            }
        }
        Ok(())
    }

    /// One composite circuit step: the gate layer, then the noise superoperator on every qubit.
    pub fn circuit_step(&mut self, layer: &GateLayer, noise: &DenseTensor) -> Result<(), OracleError> {
        for (left, u) in &layer.gates {
            self.apply_two_site_unitary(*left, u)?;
        }
        for site in 0..self.n {
            self.apply_site_superop(site, noise)?;
        }
        Ok(())
    }

    /// Vectorized form of a doubled two-site map, used to cross-check [`doubled_two_site`].
    pub fn apply_doubled_two_site(&mut self, left: usize, u: &DenseTensor) -> Result<(), OracleError> {
        self.check_site(left + 1)?;
        let g = doubled_two_site(u);
        let d = self.dim();
        let b0 = 1usize << (self.n - 1 - left);
        let b1 = 1usize << (self.n - 2 - left);
        let gd = g.data();
        let mut out = self.data.clone();
        for r in (0..d).filter(|r| r & (b0 | b1) == 0) {
            for c in (0..d).filter(|c| c & (b0 | b1) == 0) {
                let mut idx = [0usize; 16];
                for (k, slot) in idx.iter_mut().enumerate() {
                    let (a1, b1v, a2, b2v) = ((k >> 3) & 1, (k >> 2) & 1, (k >> 1) & 1, k & 1);
                    let row = r + a1 * b0 + a2 * b1;
                    let col = c + b1v * b0 + b2v * b1;
                    *slot = row * d + col;
                }
                for q in 0..16 {
                    out[idx[q]] = (0..16).map(|p| gd[q * 16 + p] * self.data[idx[p]]).sum();
                }
            }
        }
        self.data = out;
        Ok(())
    }
}

fn check_size(n: usize) -> Result<(), OracleError> {
    if n == 0 || n > DENSE_LIMIT {
        return Err(OracleError::TooLarge { n, limit: DENSE_LIMIT });
    }
    Ok(())
}

/// Dense composite-channel trajectory, including the initial state at index 0.
pub fn exact_evolve_circuit(initial: &DenseState, layers: &[GateLayer], noise: &KrausChannel) -> Result<Vec<DenseState>, OracleError> {
    check_size(initial.n)?;
    let superop = noise.superoperator();
    let mut rho = initial.clone();
    let mut out = Vec::with_capacity(layers.len() + 1);
    out.push(rho.clone());
    for layer in layers {
        rho.circuit_step(layer, &superop)?;
        out.push(rho.clone());
    }
    Ok(out)
}

/// Per-qubit `log₂‖ρ_t‖₂` under depolarizing noise alone from `|0…0⟩`.
pub fn pure_depolarizing_l2(p: f64, t: u32) -> f64 {
    let f = (1.0 - 4.0 * p / 3.0).powi(2 * t as i32);
    0.5 * ((1.0 + f) / 2.0).log2()
}

/// Per-qubit `log₂‖ρ_t‖₂` under amplitude damping alone from `|1…1⟩`.
pub fn pure_damping_l2(p: f64, t: u32) -> f64 {
    let q = (1.0 - p).powi(t as i32);
    0.5 * ((1.0 - q).powi(2) + q * q).log2()
}

/// Elements of a qubit density matrix.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QubitState {
    pub rho00: C64,
    pub rho01: C64,
    pub rho10: C64,
    pub rho11: C64,
}

impl QubitState {
    pub fn ground() -> Self {
        Self { rho00: ONE, rho01: ZERO, rho10: ZERO, rho11: ZERO }
    }

    pub fn excited() -> Self {
        Self { rho00: ZERO, rho01: ZERO, rho10: ZERO, rho11: ONE }
    }

    pub fn purity(&self) -> f64 {
        (self.rho00.norm_sqr() + self.rho01.norm_sqr() + self.rho10.norm_sqr() + self.rho11.norm_sqr()).max(0.0)
    }

    fn as_array(&self) -> [C64; 4] {
        [self.rho00, self.rho01, self.rho10, self.rho11]
    }

    fn from_array(a: [C64; 4]) -> Self {
        Self { rho00: a[0], rho01: a[1], rho10: a[2], rho11: a[3] }
    }
}

/// `cos(√q t)` and `sin(√q t)/√q` for either sign of `q`, continuous through `q = 0`.
fn oscillator(q: f64, t: f64) -> (f64, f64) {
    let x = q * t * t;
    if x.abs() < 1e-6 {
        let c = 1.0 - x / 2.0 + x * x / 24.0;
        let s = t * (1.0 - x / 6.0 + x * x / 120.0);
        return (c, s);
    }
    if q > 0.0 {
        let w = q.sqrt();
        ((w * t).cos(), (w * t).sin() / w)
    } else {
        let w = (-q).sqrt();
        ((w * t).cosh(), (w * t).sinh() / w)
    }
}

/// Closed-form solution of the resonantly driven qubit with amplitude damping,
/// starting from `|0⟩⟨0|`. Both damping regimes and the critical point share
/// one expression through [`oscillator`].
pub fn rabi_damping_closed_form(omega: f64, kappa: f64, t: f64) -> Result<QubitState, OracleError> {
    if omega <= 0.0 || kappa < 0.0 || t < 0.0 {
        return Err(OracleError::Parameter(format!("need Ω > 0, κ ≥ 0, t ≥ 0; got ({omega}, {kappa}, {t})")));
    }
    let eta = kappa / omega;
    let q = omega * omega * (1.0 - eta * eta / 16.0);
    let (c, s) = oscillator(q, t);
    let decay = (-0.75 * kappa * t).exp();
    let norm = 2.0 + eta * eta;
    let rho11 = (1.0 - decay * (c + 0.75 * eta * omega * s)) / norm;
    let im10 = -(eta - decay * (eta * c - (1.0 - eta * eta / 4.0) * omega * s)) / norm;
    let rho10 = C64::new(0.0, im10);
    Ok(QubitState { rho00: C64::new(1.0 - rho11, 0.0), rho01: rho10.conj(), rho10, rho11: C64::new(rho11, 0.0) })
}

/// Right-hand side of `ρ̇ = −i[Ω/2 σₓ, ρ] + κ(σ₋ρσ₊ − ½{σ₊σ₋, ρ})`.
fn rabi_rhs(omega: f64, kappa: f64, r: [C64; 4]) -> [C64; 4] {
    let i = C64::new(0.0, 1.0);
    let h = omega / 2.0;
    let [r00, r01, r10, r11] = r;
    // −i[H, ρ] with H = h σₓ
    let c00 = -i * h * (r10 - r01);
    let c01 = -i * h * (r11 - r00);
    let c10 = -i * h * (r00 - r11);
    let c11 = -i * h * (r01 - r10);
    // σ₋ = |0⟩⟨1|, σ₊σ₋ = |1⟩⟨1|
    let d00 = kappa * r11;
    let d01 = -0.5 * kappa * r01;
    let d10 = -0.5 * kappa * r10;
    let d11 = -kappa * r11;
    [c00 + d00, c01 + d01, c10 + d10, c11 + d11]
}

/// Fixed-step RK4 integration of the driven, damped qubit from `initial` to time `t_end`.
pub fn rabi_damping_ode_from(initial: QubitState, omega: f64, kappa: f64, t_end: f64, dt: f64) -> Result<QubitState, OracleError> {
    let rate = omega.abs().max(kappa).max(f64::MIN_POSITIVE);
    let limit = 1e-3 / rate;
    if !(dt > 0.0) || dt > limit * (1.0 + 1e-12) {
        return Err(OracleError::StepTooLarge { dt, limit });
    }
    let steps = (t_end / dt).round() as usize;
    let h = if steps == 0 { 0.0 } else { t_end / steps as f64 };
    let mut y = initial.as_array();
    let add = |a: [C64; 4], b: [C64; 4], s: f64| -> [C64; 4] { std::array::from_fn(|k| a[k] + b[k] * s) };
    for _ in 0..steps {
        let k1 = rabi_rhs(omega, kappa, y);
        let k2 = rabi_rhs(omega, kappa, add(y, k1, h / 2.0));
        let k3 = rabi_rhs(omega, kappa, add(y, k2, h / 2.0));
        let k4 = rabi_rhs(omega, kappa, add(y, k3, h));
        y = std::array::from_fn(|k| y[k] + (k1[k] + k2[k] * 2.0 + k3[k] * 2.0 + k4[k]) * (h / 6.0));
    }
    Ok(QubitState::from_array(y))
}

/// RK4 integration from `|0⟩⟨0|`.
pub fn rabi_damping_ode(omega: f64, kappa: f64, t_end: f64, dt: f64) -> Result<QubitState, OracleError> {
    rabi_damping_ode_from(QubitState::ground(), omega, kappa, t_end, dt)
}

/// Steady-state purity `½[1 + η²(4+η²)/(2+η²)²]`.
pub fn rabi_damping_steady_purity(eta: f64) -> f64 {
    if eta.is_infinite() {
        return 1.0;
    }
    let e2 = eta * eta;
    0.5 * (1.0 + e2 * (4.0 + e2) / (2.0 + e2).powi(2))
}
