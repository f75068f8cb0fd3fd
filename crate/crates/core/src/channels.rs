//! Kraus channels, Haar-random gates and brickwall circuit layers.

use num_complex::Complex64 as C64;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::state::{StateError, VectorizedDensityState};
use crate::tensor::{self, DenseTensor, Truncation};

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };
const ONE: C64 = C64 { re: 1.0, im: 0.0 };

/// Largest tolerated `‖U†U − I‖` for a gate.
pub const UNITARITY_TOL: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ChannelError {
    #[error("rate {0} outside [0, 1]")]
    Rate(f64),

    #[error("Kraus operators violate completeness by {0:e}")]
    Completeness(f64),

    #[error("gate is not unitary (residual {0:e})")]
    NotUnitary(f64),

    #[error("matrix must be {expected}×{expected}, got {found:?}")]
    Shape { expected: usize, found: Vec<usize> },

    #[error("gate on bond starting at site {left} does not fit {n} sites")]
    GateSite { left: usize, n: usize },

    #[error(transparent)]
    State(#[from] StateError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseKind {
    Depolarizing,
    AmplitudeDamping,
}

impl NoiseKind {
    pub fn channel(self, p: f64) -> Result<KrausChannel, ChannelError> {
        match self {
            NoiseKind::Depolarizing => KrausChannel::depolarizing(p),
            NoiseKind::AmplitudeDamping => KrausChannel::damping(p),
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            NoiseKind::Depolarizing => "depolarizing",
            NoiseKind::AmplitudeDamping => "amplitude-damping",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ChannelKind {
    Depolarizing,
    AmplitudeDamping,
    Unitary,
    Custom,
}

/// A CPTP map in Kraus form. Operators are square matrices stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct KrausChannel {
    kind: ChannelKind,
    rate: Option<f64>,
    dim: usize,
    ops: Vec<Vec<C64>>,
}

fn check_rate(p: f64) -> Result<(), ChannelError> {
    if !(0.0..=1.0).contains(&p) {
        return Err(ChannelError::Rate(p));
    }
    Ok(())
}

fn pauli() -> [[C64; 4]; 3] {
    let i = C64::new(0.0, 1.0);
    [[ZERO, ONE, ONE, ZERO], [ZERO, -i, i, ZERO], [ONE, ZERO, ZERO, -ONE]]
}

impl KrausChannel {
    /// `sqrt(1-p) I` and `sqrt(p/3) {X, Y, Z}`; zero-weight operators are omitted.
    pub fn depolarizing(p: f64) -> Result<Self, ChannelError> {
        check_rate(p)?;
        let mut ops = Vec::new();
        if p < 1.0 {
            let a = C64::new((1.0 - p).sqrt(), 0.0);
            ops.push(vec![a, ZERO, ZERO, a]);
        }
        if p > 0.0 {
            let w = (p / 3.0).sqrt();
            for s in pauli() {
                ops.push(s.iter().map(|z| z * w).collect());
            }
        }
        Ok(Self { kind: ChannelKind::Depolarizing, rate: Some(p), dim: 2, ops })
    }

    /// `diag(1, sqrt(1-p))` and `sqrt(p) |0⟩⟨1|`.
    pub fn damping(p: f64) -> Result<Self, ChannelError> {
        check_rate(p)?;
        let mut ops = vec![vec![ONE, ZERO, ZERO, C64::new((1.0 - p).sqrt(), 0.0)]];
        if p > 0.0 {
            ops.push(vec![ZERO, C64::new(p.sqrt(), 0.0), ZERO, ZERO]);
        }
        Ok(Self { kind: ChannelKind::AmplitudeDamping, rate: Some(p), dim: 2, ops })
    }

    pub fn unitary(u: &DenseTensor) -> Result<Self, ChannelError> {
        let (r, c) = u.matrix_dims().map_err(|_| ChannelError::Shape { expected: 0, found: u.shape().to_vec() })?;
        if r != c {
            return Err(ChannelError::Shape { expected: r, found: u.shape().to_vec() });
        }
        let res = unitarity_residual(u);
        if res > 1e-12 {
            return Err(ChannelError::NotUnitary(res));
        }
        Ok(Self { kind: ChannelKind::Unitary, rate: None, dim: r, ops: vec![u.data().to_vec()] })
    }

    pub fn custom(dim: usize, ops: Vec<Vec<C64>>) -> Result<Self, ChannelError> {
        for op in &ops {
            if op.len() != dim * dim {
                return Err(ChannelError::Shape { expected: dim, found: vec![op.len()] });
            }
        }
        let ch = Self { kind: ChannelKind::Custom, rate: None, dim, ops };
        let res = ch.completeness_residual();
        if res > 1e-12 {
            return Err(ChannelError::Completeness(res));
        }
        Ok(ch)
    }

    pub fn kind(&self) -> ChannelKind {
        self.kind
    }

    pub fn rate(&self) -> Option<f64> {
        self.rate
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn ops(&self) -> &[Vec<C64>] {
        &self.ops
    }

    /// Frobenius norm of `Σ K†K − I`.
    pub fn completeness_residual(&self) -> f64 {
        let d = self.dim;
        let mut acc = 0.0;
        for i in 0..d {
            for j in 0..d {
                let mut s = ZERO;
                for k in &self.ops {
                    for m in 0..d {
                        s += k[m * d + i].conj() * k[m * d + j];
                    }
                }
                if i == j {
                    s -= ONE;
                }
                acc += s.norm_sqr();
            }
        }
        acc.sqrt()
    }

    /// `Σ K ⊗ conj(K)` acting on the doubled index `a * d + b` of `|a⟩⟨b|`.
    pub fn superoperator(&self) -> DenseTensor {
        let d = self.dim;
        let dd = d * d;
        let mut s = DenseTensor::zeros(vec![dd, dd]);
        let data = s.data_mut();
        for k in &self.ops {
            for a2 in 0..d {
                for b2 in 0..d {
                    for a in 0..d {
                        for b in 0..d {
                            data[(a2 * d + b2) * dd + a * d + b] += k[a2 * d + a] * k[b2 * d + b].conj();
                        }
                    }
                }
            }
        }
        s
    }
}

/// Frobenius norm of `U†U − I`.
pub fn unitarity_residual(u: &DenseTensor) -> f64 {
    let (r, _) = u.matrix_dims().unwrap_or((0, 0));
    match u.adjoint().and_then(|ud| tensor::matmul_tensors(&ud, u)) {
        Ok(g) => (0..r * r)
            .map(|x| (g.data()[x] - if x / r == x % r { ONE } else { ZERO }).norm_sqr())
            .sum::<f64>()
            .sqrt(),
        Err(_) => f64::INFINITY,
    }
}

/// splitmix64 finalizer applied to `base` advanced by `index + 1` increments.
pub fn derive_seed(base: u64, index: u64) -> u64 {
    let mut z = base.wrapping_add(0x9E37_79B9_7F4A_7C15u64.wrapping_mul(index.wrapping_add(1)));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// The generator used for every random draw in this crate.
pub fn rng_from_seed(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}

/// A Haar-random element of U(4): QR of a complex Gaussian matrix with the
/// phases of `R`'s diagonal moved into `Q`.
pub fn haar_two_site<R: rand::Rng + ?Sized>(rng: &mut R) -> DenseTensor {
    let scale = std::f64::consts::FRAC_1_SQRT_2;
    let g = DenseTensor::from_fn(vec![4, 4], |_| {
        let re: f64 = StandardNormal.sample(rng);
        let im: f64 = StandardNormal.sample(rng);
        C64::new(re * scale, im * scale)
    });
    let (mut q, r) = tensor::qr(&g).expect("finite Gaussian matrix");
    for j in 0..4 {
        let d = r.get(&[j, j]);
        let phase = if d.norm() > 0.0 { d / d.norm() } else { ONE };
        for i in 0..4 {
            q.data_mut()[i * 4 + j] *= phase;
        }
    }
    q
}

/// Two-site gates acting on disjoint bonds, identified by their left site (0-based).
#[derive(Clone, Debug, PartialEq)]
pub struct GateLayer {
    /// Circuit step this layer belongs to, starting at 1.
    pub step: usize,
    pub gates: Vec<(usize, DenseTensor)>,
}

/// Left sites of the bonds used at step `t`: odd steps start at the first
/// bond, even steps at the second.
pub fn brickwall_sites(n: usize, t: usize) -> Vec<usize> {
    let start = if t % 2 == 1 { 0 } else { 1 };
    (start..n.saturating_sub(1)).step_by(2).collect()
}

impl GateLayer {
    pub fn random<R: rand::Rng + ?Sized>(n: usize, step: usize, rng: &mut R) -> Self {
        let gates = brickwall_sites(n, step).into_iter().map(|s| (s, haar_two_site(rng))).collect();
        Self { step, gates }
    }

    pub fn empty(step: usize) -> Self {
        Self { step, gates: Vec::new() }
    }
}

/// Gate layers for steps `1..=depth` drawn from one seed.
pub fn random_circuit(n: usize, depth: usize, seed: u64) -> Vec<GateLayer> {
    let mut rng = rng_from_seed(seed);
    (1..=depth).map(|t| GateLayer::random(n, t, &mut rng)).collect()
}

/// `U ⊗ conj(U)` on the combined doubled index `(a1 b1)(a2 b2)`.
pub fn doubled_two_site(u: &DenseTensor) -> DenseTensor {
    let mut g = DenseTensor::zeros(vec![16, 16]);
    let ud = u.data();
    let data = g.data_mut();
    for a1 in 0..2 {
        for b1 in 0..2 {
            for a2 in 0..2 {
                for b2 in 0..2 {
                    let row = ((a1 * 2 + b1) * 2 + a2) * 2 + b2;
                    for c1 in 0..2 {
                        for d1 in 0..2 {
                            for c2 in 0..2 {
                                for d2 in 0..2 {
                                    let col = ((c1 * 2 + d1) * 2 + c2) * 2 + d2;
                                    data[row * 16 + col] = ud[(a1 * 2 + a2) * 4 + c1 * 2 + c2] * ud[(b1 * 2 + b2) * 4 + d1 * 2 + d2].conj();
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    g
}

pub fn apply_single_site_channel(s: &mut VectorizedDensityState, site: usize, ch: &KrausChannel) -> Result<(), ChannelError> {
    if ch.dim() != 2 {
        return Err(ChannelError::Shape { expected: 2, found: vec![ch.dim(), ch.dim()] });
    }
    s.apply_site_matrix(site, &ch.superoperator())?;
    Ok(())
}

/// Applies a precomputed single-site superoperator to every site.
pub fn apply_to_all_sites(s: &mut VectorizedDensityState, superop: &DenseTensor) -> Result<(), ChannelError> {
    for site in 0..s.n() {
        s.apply_site_matrix(site, superop)?;
    }
    Ok(())
}

/// Applies `U ⊗ conj(U)` on sites `left, left + 1`. Without `trunc` only
/// numerically vanishing singular values are dropped. Returns the discarded weight.
pub fn apply_two_site_unitary(s: &mut VectorizedDensityState, left: usize, u: &DenseTensor, trunc: Option<f64>) -> Result<f64, ChannelError> {
    if u.shape() != [4, 4] {
        return Err(ChannelError::Shape { expected: 4, found: u.shape().to_vec() });
    }
    if left + 1 >= s.n() {
        return Err(ChannelError::GateSite { left, n: s.n() });
    }
    let res = unitarity_residual(u);
    if res > UNITARITY_TOL {
        return Err(ChannelError::NotUnitary(res));
    }
    let rule = match trunc {
        Some(d) => Truncation { weight_cutoff: Some(d), ..Truncation::numerical() },
        None => Truncation::numerical(),
    };
    Ok(s.apply_two_site_matrix(left, &doubled_two_site(u), &rule)?)
}

/// One step of the composite channel: every gate of the layer, then noise on every site.
pub fn noisy_circuit_step(s: &mut VectorizedDensityState, layer: &GateLayer, noise: &KrausChannel) -> Result<(), ChannelError> {
    for (left, u) in &layer.gates {
        apply_two_site_unitary(s, *left, u, None)?;
    }
    apply_to_all_sites(s, &noise.superoperator())
}
