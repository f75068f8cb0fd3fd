//! Density matrices stored as matrix-product states over doubled sites.
//!
//! Site `i` carries a rank-3 tensor `[left bond, 4, right bond]`. The physical
//! index enumerates `|a⟩⟨b|` as `a * 2 + b`, so indices 0 and 3 are the
//! diagonal entries and the vectorized identity is `(1, 0, 0, 1)` per site.

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::oracle::DenseState;
use crate::tensor::{self, contract, DenseTensor, TensorError, Truncation};

/// Largest chain that can be densified.
pub const DENSE_LIMIT: usize = 12;

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };
const ONE: C64 = C64 { re: 1.0, im: 0.0 };

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StateError {
    #[error("a chain needs at least 2 sites, got {0}")]
    TooFewSites(usize),

    #[error("site {site} out of range for {n} sites")]
    Site { site: usize, n: usize },

    #[error("bond {bond} out of range [1, {max}]")]
    Bond { bond: usize, max: usize },

    #[error("states have {0} and {1} sites")]
    SizeMismatch(usize, usize),

    #[error("densification is limited to {DENSE_LIMIT} sites, got {0}")]
    TooLargeForDense(usize),

    #[error("degenerate trace {0:e}")]
    DegenerateTrace(f64),

    #[error("trace {0} is not real")]
    ComplexTrace(C64),

    #[error("state has zero norm")]
    ZeroNorm,

    #[error("truncation threshold {0} outside [0, 1)")]
    Threshold(f64),

    #[error("operator has shape {found:?}, expected {expected:?}")]
    OperatorShape { expected: Vec<usize>, found: Vec<usize> },

    #[error("malformed site tensor at {site}: {reason}")]
    Malformed { site: usize, reason: String },

    #[error("snapshot: {0}")]
    Snapshot(String),

    #[error("at bond {bond}: {source}")]
    AtBond { bond: usize, source: TensorError },

    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Descending singular values across one bond.
#[derive(Clone, Debug, PartialEq)]
pub struct SchmidtSpectrum {
    pub bond: usize,
    pub values: Vec<f64>,
}

/// What a truncation sweep did. Index `k - 1` of the vectors describes bond `k`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TruncationReport {
    pub discarded: Vec<f64>,
    pub kept_ranks: Vec<usize>,
    pub norm_before: f64,
    pub norm_after: f64,
    /// Factor later applied by [`VectorizedDensityState::renormalize`]; 1 until then.
    pub trace_rescale: f64,
}

impl TruncationReport {
    pub fn total_discarded(&self) -> f64 {
        self.discarded.iter().sum()
    }

    /// Right-hand side of the single-truncation bound, `sqrt(2 Σ δ_k) ‖s‖₂`.
    pub fn error_bound(&self) -> f64 {
        (2.0 * self.total_discarded()).sqrt() * self.norm_before
    }

    pub fn max_rank(&self) -> usize {
        self.kept_ranks.iter().copied().max().unwrap_or(1)
    }
}

pub const SNAPSHOT_FORMAT: &str = "noisy-mpo-state";
pub const SNAPSHOT_VERSION: u32 = 1;

/// File form of a state: the site tensors in order, each with its
/// `[Dl, 4, Dr]` shape and row-major `[re, im]` entries.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateSnapshot {
    pub format: String,
    pub version: u32,
    pub n: usize,
    pub sites: Vec<SiteSnapshot>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SiteSnapshot {
    pub shape: [usize; 3],
    pub data: Vec<[f64; 2]>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VectorizedDensityState {
    tensors: Vec<DenseTensor>,
    center: Option<usize>,
}

impl VectorizedDensityState {
    pub fn from_computational_product(bits: &[u8]) -> Result<Self, StateError> {
        if bits.len() < 2 {
            return Err(StateError::TooFewSites(bits.len()));
        }
        let tensors = bits
            .iter()
            .map(|&b| {
                let mut t = DenseTensor::zeros(vec![1, 4, 1]);
                t.data_mut()[if b == 0 { 0 } else { 3 }] = ONE;
                t
            })
            .collect();
        Ok(Self { tensors, center: None })
    }

    /// `I / 2^N`.
    pub fn maximally_mixed(n: usize) -> Result<Self, StateError> {
        Self::product(&vec![[0.5, 0.0, 0.0, 0.5].map(|x| C64::new(x, 0.0)); n])
    }

    /// Product operator from per-site 2×2 matrices, each given row-major.
    pub fn product(sites: &[[C64; 4]]) -> Result<Self, StateError> {
        if sites.len() < 2 {
            return Err(StateError::TooFewSites(sites.len()));
        }
        let tensors = sites.iter().map(|m| DenseTensor::new(vec![1, 4, 1], m.to_vec()).unwrap()).collect();
        Ok(Self { tensors, center: None })
    }

    /// Builds a state from explicit site tensors after checking bond consistency.
    pub fn from_tensors(tensors: Vec<DenseTensor>) -> Result<Self, StateError> {
        let n = tensors.len();
        if n < 2 {
            return Err(StateError::TooFewSites(n));
        }
        for (i, t) in tensors.iter().enumerate() {
            let bad = |reason: String| StateError::Malformed { site: i, reason };
            if t.rank() != 3 || t.shape()[1] != 4 {
                return Err(bad(format!("shape {:?} is not [Dl, 4, Dr]", t.shape())));
            }
            if i == 0 && t.shape()[0] != 1 {
                return Err(bad("left boundary bond must be 1".into()));
            }
            if i == n - 1 && t.shape()[2] != 1 {
                return Err(bad("right boundary bond must be 1".into()));
            }
            if i + 1 < n && t.shape()[2] != tensors[i + 1].shape()[0] {
                return Err(bad(format!("right bond {} differs from next left bond {}", t.shape()[2], tensors[i + 1].shape()[0])));
            }
            if !t.is_finite() {
                return Err(bad("non-finite entry".into()));
            }
        }
        Ok(Self { tensors, center: None })
    }

    pub fn snapshot(&self) -> StateSnapshot {
        let sites = self
            .tensors
            .iter()
            .map(|t| SiteSnapshot { shape: [t.shape()[0], 4, t.shape()[2]], data: t.data().iter().map(|c| [c.re, c.im]).collect() })
            .collect();
        StateSnapshot { format: SNAPSHOT_FORMAT.into(), version: SNAPSHOT_VERSION, n: self.n(), sites }
    }

    pub fn from_snapshot(snap: &StateSnapshot) -> Result<Self, StateError> {
        if snap.format != SNAPSHOT_FORMAT || snap.version != SNAPSHOT_VERSION {
            return Err(StateError::Snapshot(format!(
                "expected {SNAPSHOT_FORMAT} v{SNAPSHOT_VERSION}, found {} v{}",
                snap.format, snap.version
            )));
        }
        if snap.sites.len() != snap.n {
            return Err(StateError::Snapshot(format!("header says {} sites, found {}", snap.n, snap.sites.len())));
        }
        let tensors = snap
            .sites
            .iter()
            .map(|s| DenseTensor::new(s.shape.to_vec(), s.data.iter().map(|&[re, im]| C64::new(re, im)).collect()))
            .collect::<Result<Vec<_>, _>>()?;
        Self::from_tensors(tensors)
    }

    pub fn n(&self) -> usize {
        self.tensors.len()
    }

    pub fn tensors(&self) -> &[DenseTensor] {
        &self.tensors
    }

    pub fn center(&self) -> Option<usize> {
        self.center
    }

    /// Bond dimensions of bonds `1..N-1`.
    pub fn bond_dims(&self) -> Vec<usize> {
        self.tensors[..self.n() - 1].iter().map(|t| t.shape()[2]).collect()
    }

    pub fn max_bond(&self) -> usize {
        self.bond_dims().into_iter().max().unwrap_or(1)
    }

    pub fn scale(&mut self, factor: f64) {
        let site = self.center.unwrap_or(0);
        self.tensors[site].scale(C64::new(factor, 0.0));
    }

    fn check_site(&self, site: usize) -> Result<(), StateError> {
        if site >= self.n() {
            return Err(StateError::Site { site, n: self.n() });
        }
        Ok(())
    }

    fn check_bond(&self, bond: usize) -> Result<(), StateError> {
        if bond == 0 || bond >= self.n() {
            return Err(StateError::Bond { bond, max: self.n() - 1 });
        }
        Ok(())
    }

    /// `⟨vec(I)|s⟩`, the trace of the represented operator.
    pub fn trace(&self) -> C64 {
        let mut env = vec![ONE];
        for t in &self.tensors {
            let (dl, dr) = (t.shape()[0], t.shape()[2]);
            let data = t.data();
            let mut next = vec![ZERO; dr];
            for (l, &e) in env.iter().enumerate().take(dl) {
                if e == ZERO {
                    continue;
                }
                let base = l * 4 * dr;
                for r in 0..dr {
                    next[r] += e * (data[base + r] + data[base + 3 * dr + r]);
                }
            }
            env = next;
        }
        env[0]
    }

    /// Hilbert–Schmidt inner product `Tr[a† b]`.
    pub fn inner(&self, other: &Self) -> Result<C64, StateError> {
        if self.n() != other.n() {
            return Err(StateError::SizeMismatch(self.n(), other.n()));
        }
        let mut env = DenseTensor::new(vec![1, 1], vec![ONE])?;
        for (a, b) in self.tensors.iter().zip(&other.tensors) {
            // env[a_l, b_l] · b[b_l, p, b_r] → [a_l, p, b_r]
            let tmp = contract(&env, b, &[(1, 0)])?;
            // conj(a)[a_l, p, a_r] · tmp[a_l, p, b_r] → [a_r, b_r]
            env = contract(&a.conj(), &tmp, &[(0, 0), (1, 1)])?;
        }
        Ok(env.data()[0])
    }

    /// `sqrt(Tr[ρ²])` for Hermitian ρ; in general the MPS 2-norm.
    pub fn l2_norm(&self) -> f64 {
        match self.center {
            Some(c) => self.tensors[c].norm(),
            None => {
                let mut s = self.clone();
                s.move_center(0).map(|_| s.tensors[0].norm()).unwrap_or_else(|_| self.inner(self).map(|z| z.re.max(0.0).sqrt()).unwrap_or(f64::NAN))
            }
        }
    }

    /// `‖a − b‖₂`, computed by canonicalizing the difference state so that
    /// small distances between large states keep their relative accuracy.
    pub fn l2_distance(&self, other: &Self) -> Result<f64, StateError> {
        let mut diff = self.direct_difference(other)?;
        diff.move_center(0)?;
        Ok(diff.tensors[0].norm())
    }

    /// The state `a − b` with bond dimensions `D_a + D_b`.
    pub fn direct_difference(&self, other: &Self) -> Result<Self, StateError> {
        let n = self.n();
        if n != other.n() {
            return Err(StateError::SizeMismatch(n, other.n()));
        }
        let mut tensors = Vec::with_capacity(n);
        for i in 0..n {
            let (a, b) = (&self.tensors[i], &other.tensors[i]);
            let (al, ar) = (a.shape()[0], a.shape()[2]);
            let (bl, br) = (b.shape()[0], b.shape()[2]);
            let left_sum = i > 0;
            let right_sum = i + 1 < n;
            let dl = if left_sum { al + bl } else { 1 };
            let dr = if right_sum { ar + br } else { 1 };
            let mut t = DenseTensor::zeros(vec![dl, 4, dr]);
            let out = t.data_mut();
            for l in 0..al {
                for p in 0..4 {
                    for r in 0..ar {
                        out[(l * 4 + p) * dr + r] = a.data()[(l * 4 + p) * ar + r];
                    }
                }
            }
            let (l0, r0) = (if left_sum { al } else { 0 }, if right_sum { ar } else { 0 });
            let sign = if i == 0 { -1.0 } else { 1.0 };
            for l in 0..bl {
                for p in 0..4 {
                    for r in 0..br {
                        out[((l0 + l) * 4 + p) * dr + r0 + r] += b.data()[(l * 4 + p) * br + r] * sign;
                    }
                }
            }
            tensors.push(t);
        }
        Ok(Self { tensors, center: None })
    }

    fn shift_right(&mut self, i: usize) -> Result<(), StateError> {
        let t = &self.tensors[i];
        let (dl, dr) = (t.shape()[0], t.shape()[2]);
        let m = t.clone().into_matrix(2)?;
        let (q, r) = tensor::qr(&m).map_err(|source| StateError::AtBond { bond: i + 1, source })?;
        let k = q.shape()[1];
        self.tensors[i] = q.reshape(vec![dl, 4, k])?;
        let _ = dr;
        self.tensors[i + 1] = contract(&r, &self.tensors[i + 1], &[(1, 0)])?;
        Ok(())
    }

    fn shift_left(&mut self, i: usize) -> Result<(), StateError> {
        let t = &self.tensors[i];
        let dr = t.shape()[2];
        let m = t.clone().into_matrix(1)?.adjoint()?;
        let (q, r) = tensor::qr(&m).map_err(|source| StateError::AtBond { bond: i, source })?;
        let k = q.shape()[1];
        self.tensors[i] = q.adjoint()?.reshape(vec![k, 4, dr])?;
        self.tensors[i - 1] = contract(&self.tensors[i - 1], &r.adjoint()?, &[(2, 0)])?;
        Ok(())
    }

    /// Gauges the state so that every tensor left of `site` is a left isometry
    /// and every tensor right of it a right isometry.
    pub fn move_center(&mut self, site: usize) -> Result<(), StateError> {
        self.check_site(site)?;
        match self.center {
            Some(c) if c == site => {}
            Some(c) if c < site => {
                for i in c..site {
                    self.shift_right(i)?;
                }
            }
            Some(c) => {
                for i in (site + 1..=c).rev() {
                    self.shift_left(i)?;
                }
            }
            None => {
                for i in 0..site {
                    self.shift_right(i)?;
                }
                for i in (site + 1..self.n()).rev() {
                    self.shift_left(i)?;
                }
            }
        }
        self.center = Some(site);
        Ok(())
    }

    /// Marks the gauge as unknown after an external modification of `site`.
    pub(crate) fn touch(&mut self, site: usize) {
        if self.center != Some(site) {
            self.center = None;
        }
    }

    pub fn schmidt_spectrum(&self, bond: usize) -> Result<SchmidtSpectrum, StateError> {
        self.check_bond(bond)?;
        let mut s = self.clone();
        s.move_center(bond - 1)?;
        let m = s.tensors[bond - 1].clone().into_matrix(2)?;
        let values = tensor::singular_values(&m).map_err(|source| StateError::AtBond { bond, source })?;
        Ok(SchmidtSpectrum { bond, values })
    }

    /// One canonical sweep truncating every bond to relative discarded weight
    /// at most `delta_err`. The trace is not restored.
    pub fn truncate(&mut self, delta_err: f64) -> Result<TruncationReport, StateError> {
        if !(0.0..1.0).contains(&delta_err) {
            return Err(StateError::Threshold(delta_err));
        }
        if self.tensors.iter().any(|t| !t.is_finite()) {
            return Err(StateError::Tensor(TensorError::NonFinite("state tensor")));
        }
        self.move_center(0)?;
        let norm_before = self.tensors[0].norm();
        let n = self.n();
        let mut report = TruncationReport { norm_before, trace_rescale: 1.0, ..Default::default() };
        for i in 0..n - 1 {
            let bond = i + 1;
            let dl = self.tensors[i].shape()[0];
            let m = self.tensors[i].clone().into_matrix(2)?;
            if m.norm_sqr() == 0.0 {
                return Err(StateError::DegenerateTrace(0.0));
            }
            let svd = tensor::svd(&m, &Truncation::weight(delta_err)).map_err(|source| StateError::AtBond { bond, source })?;
            let rank = svd.rank();
            report.discarded.push(svd.discarded_weight);
            report.kept_ranks.push(rank);
            self.tensors[i] = svd.u.reshape(vec![dl, 4, rank])?;
            let mut svh = svd.vh;
            let cols = svh.shape()[1];
            for (j, s) in svd.singular_values.iter().enumerate() {
                svh.data_mut()[j * cols..(j + 1) * cols].iter_mut().for_each(|z| *z *= s);
            }
            self.tensors[i + 1] = contract(&svh, &self.tensors[i + 1], &[(1, 0)])?;
            self.center = Some(i + 1);
        }
        report.norm_after = self.tensors[n - 1].norm();
        Ok(report)
    }

    /// Divides by the (real) trace. Returns the factor applied.
    pub fn renormalize(&mut self) -> Result<f64, StateError> {
        let tr = self.trace();
        if tr.norm() <= 1e-12 {
            return Err(StateError::DegenerateTrace(tr.norm()));
        }
        if tr.im.abs() >= 1e-10 * tr.norm() {
            return Err(StateError::ComplexTrace(tr));
        }
        let factor = 1.0 / tr.re;
        self.scale(factor);
        Ok(factor)
    }

    /// Half-open style entropy in bits of the normalized squared Schmidt values at `cut`.
    pub fn operator_entanglement(&self, cut: usize) -> Result<f64, StateError> {
        let spec = self.schmidt_spectrum(cut)?;
        let total: f64 = spec.values.iter().map(|s| s * s).sum();
        if total <= 0.0 {
            return Err(StateError::ZeroNorm);
        }
        Ok(spec
            .values
            .iter()
            .map(|s| s * s / total)
            .filter(|&w| w > 0.0)
            .map(|w| -w * w.log2())
            .sum::<f64>()
            .max(0.0))
    }

    /// Reconstructs the represented operator.
    pub fn to_dense(&self) -> Result<DenseState, StateError> {
        let n = self.n();
        if n > DENSE_LIMIT {
            return Err(StateError::TooLargeForDense(n));
        }
        // vector over (a1 b1)(a2 b2)…(aN bN)
        let mut acc = self.tensors[0].clone().reshape(vec![4, self.tensors[0].shape()[2]])?;
        for t in &self.tensors[1..] {
            let rows = acc.shape()[0];
            acc = contract(&acc, t, &[(1, 0)])?;
            let dr = acc.shape()[2];
            acc = acc.reshape(vec![rows * 4, dr])?;
        }
        let v = acc.into_data();
        let dim = 1usize << n;
        let mut data = vec![ZERO; dim * dim];
        for (idx, z) in v.into_iter().enumerate() {
            let (mut row, mut col) = (0usize, 0usize);
            for site in 0..n {
                let p = (idx >> (2 * (n - 1 - site))) & 3;
                row = (row << 1) | (p >> 1);
                col = (col << 1) | (p & 1);
            }
            data[row * dim + col] = z;
        }
        Ok(DenseState { n, data })
    }

    /// Exact MPS of a dense operator by successive SVDs. Singular values that
    /// vanish to working precision are dropped.
    pub fn from_dense(m: &DenseState) -> Result<Self, StateError> {
        let n = m.n;
        if n < 2 {
            return Err(StateError::TooFewSites(n));
        }
        if n > DENSE_LIMIT {
            return Err(StateError::TooLargeForDense(n));
        }
        let dim = 1usize << n;
        if m.data.len() != dim * dim {
            return Err(StateError::OperatorShape { expected: vec![dim, dim], found: vec![m.data.len()] });
        }
        let mut v = vec![ZERO; dim * dim];
        for row in 0..dim {
            for col in 0..dim {
                let mut idx = 0usize;
                for site in 0..n {
                    let shift = n - 1 - site;
                    let p = (((row >> shift) & 1) << 1) | ((col >> shift) & 1);
                    idx = (idx << 2) | p;
                }
                v[idx] = m.data[row * dim + col];
            }
        }
        let mut rest = DenseTensor::new(vec![1, dim * dim], v)?;
        let mut tensors = Vec::with_capacity(n);
        for site in 0..n - 1 {
            let dl = rest.shape()[0];
            let cols = rest.len() / (dl * 4);
            let mat = rest.reshape(vec![dl * 4, cols])?;
            let svd = tensor::svd(&mat, &Truncation::numerical()).map_err(|source| StateError::AtBond { bond: site + 1, source })?;
            let r = svd.rank();
            tensors.push(svd.u.reshape(vec![dl, 4, r])?);
            let mut svh = svd.vh;
            for (j, s) in svd.singular_values.iter().enumerate() {
                svh.data_mut()[j * cols..(j + 1) * cols].iter_mut().for_each(|z| *z *= s);
            }
            rest = svh;
        }
        let dl = rest.shape()[0];
        tensors.push(rest.reshape(vec![dl, 4, 1])?);
        Ok(Self { tensors, center: Some(n - 1) })
    }

    /// Applies a 4×4 matrix to the physical index of `site`.
    pub fn apply_site_matrix(&mut self, site: usize, op: &DenseTensor) -> Result<(), StateError> {
        self.check_site(site)?;
        if op.shape() != [4, 4] {
            return Err(StateError::OperatorShape { expected: vec![4, 4], found: op.shape().to_vec() });
        }
        let t = &mut self.tensors[site];
        let (dl, dr) = (t.shape()[0], t.shape()[2]);
        let o = op.data();
        let data = t.data_mut();
        let mut col = [ZERO; 4];
        for l in 0..dl {
            for r in 0..dr {
                for (p, c) in col.iter_mut().enumerate() {
                    *c = data[(l * 4 + p) * dr + r];
                }
                for q in 0..4 {
                    data[(l * 4 + q) * dr + r] = o[q * 4] * col[0] + o[q * 4 + 1] * col[1] + o[q * 4 + 2] * col[2] + o[q * 4 + 3] * col[3];
                }
            }
        }
        self.touch(site);
        Ok(())
    }

    /// Applies a 16×16 matrix to the doubled indices of sites `left` and
    /// `left + 1` (combined index `p_left * 4 + p_right`) and splits the
    /// result with one SVD. The center ends on `left + 1`.
    pub fn apply_two_site_matrix(&mut self, left: usize, op: &DenseTensor, trunc: &Truncation) -> Result<f64, StateError> {
        if left + 1 >= self.n() {
            return Err(StateError::Site { site: left + 1, n: self.n() });
        }
        if op.shape() != [16, 16] {
            return Err(StateError::OperatorShape { expected: vec![16, 16], found: op.shape().to_vec() });
        }
        self.move_center(left)?;
        let a = &self.tensors[left];
        let b = &self.tensors[left + 1];
        let (dl, dr) = (a.shape()[0], b.shape()[2]);
        // theta[l, pa, pb, r]
        let theta = contract(a, b, &[(2, 0)])?;
        let th = theta.data();
        let o = op.data();
        let mut out = vec![ZERO; dl * 16 * dr];
        let mut block = vec![ZERO; 16 * dr];
        for l in 0..dl {
            let src = &th[l * 16 * dr..(l + 1) * 16 * dr];
            block.iter_mut().for_each(|z| *z = ZERO);
            for q in 0..16 {
                let dst = &mut block[q * dr..(q + 1) * dr];
                for p in 0..16 {
                    let g = o[q * 16 + p];
                    if g == ZERO {
                        continue;
                    }
                    for (d, s) in dst.iter_mut().zip(&src[p * dr..(p + 1) * dr]) {
                        *d += g * s;
                    }
                }
            }
            out[l * 16 * dr..(l + 1) * 16 * dr].copy_from_slice(&block);
        }
        let mat = DenseTensor::new(vec![dl * 4, 4 * dr], out)?;
        let svd = tensor::svd(&mat, trunc).map_err(|source| StateError::AtBond { bond: left + 1, source })?;
        let r = svd.rank();
        let discarded = svd.discarded_weight;
        self.tensors[left] = svd.u.reshape(vec![dl, 4, r])?;
        let mut svh = svd.vh;
        let cols = 4 * dr;
        for (j, s) in svd.singular_values.iter().enumerate() {
            svh.data_mut()[j * cols..(j + 1) * cols].iter_mut().for_each(|z| *z *= s);
        }
        self.tensors[left + 1] = svh.reshape(vec![r, 4, dr])?;
        self.center = Some(left + 1);
        Ok(discarded)
    }
}
