//! Dense complex tensors and the handful of factorizations the MPS layer needs.
//!
//! Entries are stored row-major: the last axis varies fastest. Serialized
//! tensors use the same order, so a flat data buffer plus its shape is a
//! complete, portable description.

use faer::linalg::matmul::matmul;
use faer::{Accum, MatMut, MatRef, Par};
use num_complex::Complex64 as C64;
use thiserror::Error;

/// Relative tolerance under which two singular values at the truncation
/// boundary are treated as degenerate.
const TIE_RTOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("shape {shape:?} holds {expected} entries but {found} were supplied")]
    DataLength { shape: Vec<usize>, expected: usize, found: usize },

    #[error("tensor dimensions must be positive, got {0:?}")]
    ZeroDimension(Vec<usize>),

    #[error("contract-shape error: {0}")]
    ContractShape(String),

    #[error("cannot reshape {from:?} into {to:?}")]
    Reshape { from: Vec<usize>, to: Vec<usize> },

    #[error("invalid axis permutation {0:?}")]
    Permutation(Vec<usize>),

    #[error("expected a matrix, got a rank-{0} tensor")]
    NotMatrix(usize),

    #[error("non-finite entry in {0}")]
    NonFinite(&'static str),

    #[error("invalid truncation parameter: {0}")]
    Truncation(String),

    #[error("{0} did not converge")]
    Backend(&'static str),
}

/// A dense complex tensor with row-major storage.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseTensor {
    shape: Vec<usize>,
    data: Vec<C64>,
}

impl DenseTensor {
    pub fn new(shape: Vec<usize>, data: Vec<C64>) -> Result<Self, TensorError> {
        if shape.iter().any(|&d| d == 0) {
            return Err(TensorError::ZeroDimension(shape));
        }
        let expected = shape.iter().product::<usize>();
        if expected != data.len() {
            return Err(TensorError::DataLength { shape, expected, found: data.len() });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let len = shape.iter().product();
        Self { shape, data: vec![C64::new(0.0, 0.0); len] }
    }

    /// Builds a tensor by evaluating `f` at every multi-index, in row-major order.
    pub fn from_fn(shape: Vec<usize>, mut f: impl FnMut(&[usize]) -> C64) -> Self {
        let len: usize = shape.iter().product();
        let mut idx = vec![0usize; shape.len()];
        let mut data = Vec::with_capacity(len);
        for _ in 0..len {
            data.push(f(&idx));
            for ax in (0..shape.len()).rev() {
                idx[ax] += 1;
                if idx[ax] < shape[ax] {
                    break;
                }
                idx[ax] = 0;
            }
        }
        Self { shape, data }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_fn(vec![n, n], |i| if i[0] == i[1] { C64::new(1.0, 0.0) } else { C64::new(0.0, 0.0) })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[C64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [C64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<C64> {
        self.data
    }

    pub fn get(&self, idx: &[usize]) -> C64 {
        self.data[self.offset(idx)]
    }

    fn offset(&self, idx: &[usize]) -> usize {
        debug_assert_eq!(idx.len(), self.shape.len());
        idx.iter().zip(&self.shape).fold(0, |acc, (&i, &d)| acc * d + i)
    }

    /// Reinterprets the shape; the data buffer is untouched.
    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self, TensorError> {
        if shape.iter().product::<usize>() != self.data.len() || shape.iter().any(|&d| d == 0) {
            return Err(TensorError::Reshape { from: self.shape, to: shape });
        }
        self.shape = shape;
        Ok(self)
    }

    /// Returns a tensor whose axis `k` is axis `axes[k]` of `self`.
    pub fn permute(&self, axes: &[usize]) -> Result<Self, TensorError> {
        let rank = self.rank();
        let mut seen = vec![false; rank];
        if axes.len() != rank || axes.iter().any(|&a| a >= rank || std::mem::replace(&mut seen[a], true)) {
            return Err(TensorError::Permutation(axes.to_vec()));
        }
        if axes.iter().enumerate().all(|(k, &a)| k == a) {
            return Ok(self.clone());
        }
        let strides = row_major_strides(&self.shape);
        let new_shape: Vec<usize> = axes.iter().map(|&a| self.shape[a]).collect();
        let src_strides: Vec<usize> = axes.iter().map(|&a| strides[a]).collect();
        let mut data = Vec::with_capacity(self.data.len());
        let mut idx = vec![0usize; rank];
        let mut src = 0usize;
        for _ in 0..self.data.len() {
            data.push(self.data[src]);
            for ax in (0..rank).rev() {
                idx[ax] += 1;
                src += src_strides[ax];
                if idx[ax] < new_shape[ax] {
                    break;
                }
                src -= src_strides[ax] * new_shape[ax];
                idx[ax] = 0;
            }
        }
        Ok(Self { shape: new_shape, data })
    }

    pub fn conj(&self) -> Self {
        Self { shape: self.shape.clone(), data: self.data.iter().map(|z| z.conj()).collect() }
    }

    pub fn scale(&mut self, factor: C64) {
        self.data.iter_mut().for_each(|z| *z *= factor);
    }

    pub fn scaled(mut self, factor: C64) -> Self {
        self.scale(factor);
        self
    }

    pub fn norm_sqr(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum()
    }

    /// Frobenius norm.
    pub fn norm(&self) -> f64 {
        self.norm_sqr().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    /// Conjugate transpose of a matrix.
    pub fn adjoint(&self) -> Result<Self, TensorError> {
        let (r, c) = self.matrix_dims()?;
        let mut data = Vec::with_capacity(self.data.len());
        for j in 0..c {
            for i in 0..r {
                data.push(self.data[i * c + j].conj());
            }
        }
        Ok(Self { shape: vec![c, r], data })
    }

    pub fn matrix_dims(&self) -> Result<(usize, usize), TensorError> {
        match self.shape.as_slice() {
            &[r, c] => Ok((r, c)),
            other => Err(TensorError::NotMatrix(other.len())),
        }
    }

    pub(crate) fn as_mat(&self) -> Result<MatRef<'_, C64>, TensorError> {
        let (r, c) = self.matrix_dims()?;
        Ok(MatRef::from_row_major_slice(&self.data, r, c))
    }

    /// Views the tensor as a matrix by grouping the first `split` axes into rows.
    pub fn into_matrix(self, split: usize) -> Result<Self, TensorError> {
        let rows = self.shape[..split].iter().product();
        let cols = self.shape[split..].iter().product();
        self.reshape(vec![rows, cols])
    }
}

fn row_major_strides(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![1usize; shape.len()];
    for ax in (0..shape.len().saturating_sub(1)).rev() {
        strides[ax] = strides[ax + 1] * shape[ax + 1];
    }
    strides
}

/// Matrix product of two rank-2 tensors.
pub fn matmul_tensors(a: &DenseTensor, b: &DenseTensor) -> Result<DenseTensor, TensorError> {
    let (m, k) = a.matrix_dims()?;
    let (k2, n) = b.matrix_dims()?;
    if k != k2 {
        return Err(TensorError::ContractShape(format!("inner dimensions {k} and {k2} differ")));
    }
    let mut out = vec![C64::new(0.0, 0.0); m * n];
    gemm(&mut out, &a.data, &b.data, m, k, n);
    Ok(DenseTensor { shape: vec![m, n], data: out })
}

/// `out (m×n) = a (m×k) · b (k×n)`, all row-major.
pub(crate) fn gemm(out: &mut [C64], a: &[C64], b: &[C64], m: usize, k: usize, n: usize) {
    let lhs = MatRef::from_row_major_slice(a, m, k);
    let rhs = MatRef::from_row_major_slice(b, k, n);
    let dst = MatMut::from_row_major_slice_mut(out, m, n);
    matmul(dst, Accum::Replace, lhs, rhs, C64::new(1.0, 0.0), Par::Seq);
}

/// Sums over the paired axes of `a` and `b`. The result carries the unpaired
/// axes of `a` followed by those of `b`, each in their original order.
pub fn contract(a: &DenseTensor, b: &DenseTensor, paired_axes: &[(usize, usize)]) -> Result<DenseTensor, TensorError> {
    let mut used_a = vec![false; a.rank()];
    let mut used_b = vec![false; b.rank()];
    for &(ia, ib) in paired_axes {
        if ia >= a.rank() || ib >= b.rank() {
            return Err(TensorError::ContractShape(format!("axis pair ({ia}, {ib}) out of range")));
        }
        if used_a[ia] || used_b[ib] {
            return Err(TensorError::ContractShape(format!("axis pair ({ia}, {ib}) repeats an axis")));
        }
        if a.shape[ia] != b.shape[ib] {
            return Err(TensorError::ContractShape(format!(
                "axis {ia} of a has dimension {} but axis {ib} of b has {}",
                a.shape[ia], b.shape[ib]
            )));
        }
        used_a[ia] = true;
        used_b[ib] = true;
    }
    let free_a: Vec<usize> = (0..a.rank()).filter(|&i| !used_a[i]).collect();
    let free_b: Vec<usize> = (0..b.rank()).filter(|&i| !used_b[i]).collect();

    let perm_a: Vec<usize> = free_a.iter().copied().chain(paired_axes.iter().map(|p| p.0)).collect();
    let perm_b: Vec<usize> = paired_axes.iter().map(|p| p.1).chain(free_b.iter().copied()).collect();
    let ap = a.permute(&perm_a)?;
    let bp = b.permute(&perm_b)?;

    let m: usize = free_a.iter().map(|&i| a.shape[i]).product();
    let k: usize = paired_axes.iter().map(|p| a.shape[p.0]).product();
    let n: usize = free_b.iter().map(|&i| b.shape[i]).product();
    let mut data = vec![C64::new(0.0, 0.0); m * n];
    gemm(&mut data, &ap.data, &bp.data, m, k, n);

    let mut shape: Vec<usize> = free_a.iter().map(|&i| a.shape[i]).collect();
    shape.extend(free_b.iter().map(|&i| b.shape[i]));
    if shape.is_empty() {
        shape.push(1);
    }
    Ok(DenseTensor { shape, data })
}

/// Rank-selection rule for [`svd`].
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Truncation {
    /// Hard cap on the number of kept singular values.
    pub max_rank: Option<usize>,
    /// Largest admissible relative discarded weight `Σ_dropped s² / Σ s²`.
    pub weight_cutoff: Option<f64>,
    /// Singular values below `floor · s_max` count as numerical zeros and are
    /// always dropped. Zero disables the floor.
    pub relative_floor: f64,
}

impl Truncation {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn weight(cutoff: f64) -> Self {
        Self { weight_cutoff: Some(cutoff), ..Self::default() }
    }

    /// Drops only singular values that are zero to working precision.
    pub fn numerical() -> Self {
        Self { relative_floor: 1e-14, ..Self::default() }
    }

    fn validate(&self) -> Result<(), TensorError> {
        if self.max_rank == Some(0) {
            return Err(TensorError::Truncation("max_rank must be at least 1".into()));
        }
        if let Some(c) = self.weight_cutoff {
            if !(0.0..1.0).contains(&c) {
                return Err(TensorError::Truncation(format!("weight_cutoff {c} outside [0, 1)")));
            }
        }
        if !(0.0..1.0).contains(&self.relative_floor) {
            return Err(TensorError::Truncation(format!("relative_floor {} outside [0, 1)", self.relative_floor)));
        }
        Ok(())
    }
}

/// Output of a (possibly truncated) singular value decomposition.
#[derive(Clone, Debug)]
pub struct SvdResult {
    /// Left isometry, `rows × rank`.
    pub u: DenseTensor,
    /// Kept singular values, descending.
    pub singular_values: Vec<f64>,
    /// Right isometry, `rank × cols`.
    pub vh: DenseTensor,
    /// Relative squared weight of the dropped singular values.
    pub discarded_weight: f64,
}

impl SvdResult {
    pub fn rank(&self) -> usize {
        self.singular_values.len()
    }
}

/// Chooses how many of the descending values `s` to keep.
///
/// Returns the kept rank and the relative discarded weight. A zero spectrum
/// keeps one value and reports zero discarded weight.
pub fn select_rank(s: &[f64], trunc: &Truncation) -> (usize, f64) {
    let len = s.len();
    let total: f64 = s.iter().rev().map(|x| x * x).sum();
    if len == 0 || total == 0.0 {
        return (len.min(1), 0.0);
    }
    let mut rank = len;
    if trunc.relative_floor > 0.0 {
        let floor = trunc.relative_floor * s[0];
        while rank > 1 && s[rank - 1] < floor {
            rank -= 1;
        }
    }
    if let Some(cutoff) = trunc.weight_cutoff {
        let mut tail: f64 = s[rank..].iter().rev().map(|x| x * x).sum();
        while rank > 1 {
            let next = tail + s[rank - 1] * s[rank - 1];
            if next / total > cutoff {
                break;
            }
            tail = next;
            rank -= 1;
        }
    }
    let cap = trunc.max_rank.unwrap_or(len).min(len);
    rank = rank.min(cap);
    // keep the whole degenerate multiplet that straddles the boundary
    while rank < cap && s[rank] > 0.0 && (s[rank - 1] - s[rank]) <= TIE_RTOL * s[rank - 1] {
        rank += 1;
    }
    let discarded: f64 = s[rank..].iter().rev().map(|x| x * x).sum();
    (rank, discarded / total)
}

/// Thin SVD of a matrix followed by rank selection.
pub fn svd(m: &DenseTensor, trunc: &Truncation) -> Result<SvdResult, TensorError> {
    trunc.validate()?;
    let (rows, cols) = m.matrix_dims()?;
    if !m.is_finite() {
        return Err(TensorError::NonFinite("svd input"));
    }
    let dec = m.as_mat()?.thin_svd().map_err(|_| TensorError::Backend("svd"))?;
    let k = rows.min(cols);
    let s_diag = dec.S().column_vector();
    let s: Vec<f64> = (0..k).map(|i| s_diag[i].re.max(0.0)).collect();
    let (rank, discarded_weight) = select_rank(&s, trunc);

    let u_full = dec.U();
    let v_full = dec.V();
    let mut u = Vec::with_capacity(rows * rank);
    for i in 0..rows {
        for j in 0..rank {
            u.push(u_full[(i, j)]);
        }
    }
    let mut vh = Vec::with_capacity(rank * cols);
    for j in 0..rank {
        for i in 0..cols {
            vh.push(v_full[(i, j)].conj());
        }
    }
    Ok(SvdResult {
        u: DenseTensor { shape: vec![rows, rank], data: u },
        singular_values: s[..rank].to_vec(),
        vh: DenseTensor { shape: vec![rank, cols], data: vh },
        discarded_weight,
    })
}

/// Singular values only, descending.
pub fn singular_values(m: &DenseTensor) -> Result<Vec<f64>, TensorError> {
    if !m.is_finite() {
        return Err(TensorError::NonFinite("svd input"));
    }
    let mut s = m.as_mat()?.singular_values().map_err(|_| TensorError::Backend("svd"))?;
    s.iter_mut().for_each(|x| *x = x.max(0.0));
    s.sort_by(|a, b| b.total_cmp(a));
    Ok(s)
}

/// Thin QR: `m = q · r` with `q` an isometry of shape `rows × min(rows, cols)`.
pub fn qr(m: &DenseTensor) -> Result<(DenseTensor, DenseTensor), TensorError> {
    let (rows, cols) = m.matrix_dims()?;
    if !m.is_finite() {
        return Err(TensorError::NonFinite("qr input"));
    }
    let k = rows.min(cols);
    let dec = m.as_mat()?.qr();
    let q = dec.compute_thin_Q();
    let r = dec.thin_R();
    let mut qd = Vec::with_capacity(rows * k);
    for i in 0..rows {
        for j in 0..k {
            qd.push(q[(i, j)]);
        }
    }
    let mut rd = Vec::with_capacity(k * cols);
    for i in 0..k {
        for j in 0..cols {
            rd.push(if j >= i { r[(i, j)] } else { C64::new(0.0, 0.0) });
        }
    }
    Ok((DenseTensor { shape: vec![rows, k], data: qd }, DenseTensor { shape: vec![k, cols], data: rd }))
}

/// Eigen-decomposition of a Hermitian matrix: ascending eigenvalues and the
/// matrix of eigenvectors (columns), row-major.
pub fn hermitian_eigen(m: &DenseTensor) -> Result<(Vec<f64>, DenseTensor), TensorError> {
    let (n, c) = m.matrix_dims()?;
    if n != c {
        return Err(TensorError::ContractShape(format!("eigen-decomposition needs a square matrix, got {n}×{c}")));
    }
    if !m.is_finite() {
        return Err(TensorError::NonFinite("eigen input"));
    }
    let dec = m.as_mat()?.self_adjoint_eigen(faer::Side::Lower).map_err(|_| TensorError::Backend("eigen-decomposition"))?;
    let s = dec.S().column_vector();
    let vals = (0..n).map(|i| s[i].re).collect();
    let u = dec.U();
    let vecs = DenseTensor::from_fn(vec![n, n], |i| u[(i[0], i[1])]);
    Ok((vals, vecs))
}

/// Eigenvalues of a Hermitian matrix, ascending.
pub fn hermitian_eigenvalues(m: &DenseTensor) -> Result<Vec<f64>, TensorError> {
    if !m.is_finite() {
        return Err(TensorError::NonFinite("eigen input"));
    }
    let mut vals = m
        .as_mat()?
        .self_adjoint_eigenvalues(faer::Side::Lower)
        .map_err(|_| TensorError::Backend("eigen-decomposition"))?;
    vals.sort_by(|a, b| a.total_cmp(b));
    Ok(vals)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64) -> C64 {
        C64::new(re, 0.0)
    }

    fn random_tensor(shape: Vec<usize>, rng: &mut ChaCha8Rng) -> DenseTensor {
        DenseTensor::from_fn(shape, |_| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
    }

    fn max_abs_diff(a: &[C64], b: &[C64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
    }

    #[test]
    fn identity_times_basis_vector() {
        let id = DenseTensor::identity(2);
        let v = DenseTensor::new(vec![2], vec![c(1.0), c(0.0)]).unwrap();
        let out = contract(&id, &v, &[(1, 0)]).unwrap();
        assert_eq!(out.shape(), &[2]);
        assert_eq!(out.data(), &[c(1.0), c(0.0)]);
    }

    #[test]
    fn matrix_product_matches_naive_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_tensor(vec![3, 4], &mut rng);
        let b = random_tensor(vec![4, 2], &mut rng);
        let out = contract(&a, &b, &[(1, 0)]).unwrap();
        for i in 0..3 {
            for j in 0..2 {
                let mut acc = C64::new(0.0, 0.0);
                for k in 0..4 {
                    acc += a.get(&[i, k]) * b.get(&[k, j]);
                }
                assert!((out.get(&[i, j]) - acc).norm() < 1e-14);
            }
        }
    }

    #[test]
    fn full_contraction_with_conjugate_is_norm_squared() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut t = random_tensor(vec![2, 3, 4], &mut rng);
        let n = t.norm();
        t.scale(c(1.0 / n));
        let out = contract(&t.conj(), &t, &[(0, 0), (1, 1), (2, 2)]).unwrap();
        assert_eq!(out.len(), 1);
        assert!((out.data()[0] - c(1.0)).norm() < 1e-14);
    }

    #[test]
    fn contract_rejects_mismatched_axes() {
        let a = DenseTensor::zeros(vec![2, 3]);
        let b = DenseTensor::zeros(vec![2, 3]);
        assert!(matches!(contract(&a, &b, &[(1, 0)]), Err(TensorError::ContractShape(_))));
    }

    #[test]
    fn contract_keeps_free_axis_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = random_tensor(vec![2, 5, 3], &mut rng);
        let b = random_tensor(vec![4, 5], &mut rng);
        let out = contract(&a, &b, &[(1, 1)]).unwrap();
        assert_eq!(out.shape(), &[2, 3, 4]);
        let mut acc = C64::new(0.0, 0.0);
        for k in 0..5 {
            acc += a.get(&[1, k, 2]) * b.get(&[3, k]);
        }
        assert!((out.get(&[1, 2, 3]) - acc).norm() < 1e-14);
    }

    #[test]
    fn permute_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let t = random_tensor(vec![2, 3, 4], &mut rng);
        let p = t.permute(&[2, 0, 1]).unwrap();
        assert_eq!(p.shape(), &[4, 2, 3]);
        assert_eq!(p.get(&[3, 1, 2]), t.get(&[1, 2, 3]));
        let back = p.permute(&[1, 2, 0]).unwrap();
        assert_eq!(back, t);
        assert!(t.permute(&[0, 0, 1]).is_err());
    }

    #[test]
    fn reshape_reinterprets_only() {
        let t = DenseTensor::from_fn(vec![2, 3], |i| c((i[0] * 3 + i[1]) as f64));
        let r = t.clone().reshape(vec![3, 2]).unwrap();
        assert_eq!(r.data(), t.data());
        assert!(t.reshape(vec![4, 2]).is_err());
    }

    #[test]
    fn new_validates_length() {
        assert!(DenseTensor::new(vec![2, 2], vec![c(0.0); 3]).is_err());
        assert!(DenseTensor::new(vec![0, 2], vec![]).is_err());
    }

    fn diag21() -> DenseTensor {
        DenseTensor::new(vec![2, 2], vec![c(2.0), c(0.0), c(0.0), c(1.0)]).unwrap()
    }

    #[test]
    fn svd_cutoff_at_boundary_drops_one() {
        let r = svd(&diag21(), &Truncation::weight(0.2)).unwrap();
        assert_eq!(r.rank(), 1);
        assert!((r.discarded_weight - 0.2).abs() < 1e-15);
    }

    #[test]
    fn svd_cutoff_below_boundary_keeps_both() {
        let r = svd(&diag21(), &Truncation::weight(0.19)).unwrap();
        assert_eq!(r.rank(), 2);
        assert_eq!(r.discarded_weight, 0.0);
    }

    #[test]
    fn svd_full_rank_reconstructs() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let m = random_tensor(vec![8, 8], &mut rng);
        let r = svd(&m, &Truncation::weight(0.0)).unwrap();
        assert_eq!(r.rank(), 8);
        let mut us = r.u.clone();
        for i in 0..8 {
            for j in 0..8 {
                us.data_mut()[i * 8 + j] *= r.singular_values[j];
            }
        }
        let rec = matmul_tensors(&us, &r.vh).unwrap();
        let err: f64 = rec.data().iter().zip(m.data()).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>().sqrt();
        assert!(err / m.norm() < 1e-10);
        let utu = matmul_tensors(&r.u.adjoint().unwrap(), &r.u).unwrap();
        assert!(max_abs_diff(utu.data(), DenseTensor::identity(8).data()) < 1e-12);
    }

    #[test]
    fn svd_rejects_bad_parameters() {
        let m = diag21();
        assert!(svd(&m, &Truncation { max_rank: Some(0), ..Truncation::none() }).is_err());
        assert!(svd(&m, &Truncation::weight(1.0)).is_err());
        let mut bad = diag21();
        bad.data_mut()[0] = C64::new(f64::NAN, 0.0);
        assert!(matches!(svd(&bad, &Truncation::none()), Err(TensorError::NonFinite(_))));
    }

    #[test]
    fn degenerate_boundary_keeps_multiplet() {
        let s = [1.0, 0.5, 0.5, 0.1];
        let (rank, _) = select_rank(&s, &Truncation::weight(0.2));
        // minimal rank is 2 (discarded 0.26/1.51 > 0.2 would force 3); either way ties stay together
        assert!(rank != 2);
        let (rank, _) = select_rank(&s, &Truncation { max_rank: Some(2), ..Truncation::none() });
        assert_eq!(rank, 2);
    }

    #[test]
    fn max_rank_caps() {
        let s = [3.0, 2.0, 1.0];
        let (rank, w) = select_rank(&s, &Truncation { max_rank: Some(1), weight_cutoff: Some(0.0), relative_floor: 0.0 });
        assert_eq!(rank, 1);
        assert!((w - 5.0 / 14.0).abs() < 1e-15);
    }

    #[test]
    fn qr_factorizes() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let m = random_tensor(vec![6, 3], &mut rng);
        let (q, r) = qr(&m).unwrap();
        assert_eq!(q.shape(), &[6, 3]);
        let rec = matmul_tensors(&q, &r).unwrap();
        assert!(max_abs_diff(rec.data(), m.data()) < 1e-13);
    }

    #[test]
    fn hermitian_eigen_reconstructs() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let a = random_tensor(vec![5, 5], &mut rng);
        let h = DenseTensor::from_fn(vec![5, 5], |i| a.get(&[i[0], i[1]]) + a.get(&[i[1], i[0]]).conj());
        let (vals, vecs) = hermitian_eigen(&h).unwrap();
        assert!(vals.windows(2).all(|w| w[0] <= w[1]));
        let mut vd = vecs.clone();
        for i in 0..5 {
            for j in 0..5 {
                vd.data_mut()[i * 5 + j] *= vals[j];
            }
        }
        let rec = matmul_tensors(&vd, &vecs.adjoint().unwrap()).unwrap();
        assert!(max_abs_diff(rec.data(), h.data()) < 1e-12);
        let only = hermitian_eigenvalues(&h).unwrap();
        assert!(only.iter().zip(&vals).all(|(a, b)| (a - b).abs() < 1e-12));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn contraction_is_bilinear(seed in 0u64..1000, re in -2.0f64..2.0, im in -2.0f64..2.0) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let a = random_tensor(vec![3, 4, 2], &mut rng);
                let b = random_tensor(vec![4, 5], &mut rng);
                let alpha = C64::new(re, im);
                let lhs = contract(&a.clone().scaled(alpha), &b, &[(1, 0)]).unwrap();
                let rhs = contract(&a, &b, &[(1, 0)]).unwrap().scaled(alpha);
                prop_assert!(max_abs_diff(lhs.data(), rhs.data()) < 1e-12);
            }

            #[test]
            fn svd_preserves_frobenius_norm(seed in 0u64..1000, rows in 1usize..7, cols in 1usize..7) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let m = random_tensor(vec![rows, cols], &mut rng);
                let r = svd(&m, &Truncation::none()).unwrap();
                let s2: f64 = r.singular_values.iter().map(|s| s * s).sum();
                prop_assert!((s2.sqrt() - m.norm()).abs() < 1e-10 * m.norm().max(1.0));
                prop_assert!(r.singular_values.windows(2).all(|w| w[0] >= w[1]));
                prop_assert!(r.singular_values.iter().all(|&s| s >= 0.0));
            }

            #[test]
            fn kept_rank_is_minimal(seed in 0u64..1000, cutoff in 0.0f64..0.9) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let m = random_tensor(vec![5, 6], &mut rng);
                let r = svd(&m, &Truncation::weight(cutoff)).unwrap();
                let all = singular_values(&m).unwrap();
                let total: f64 = all.iter().map(|s| s * s).sum();
                // exhaustive scan over candidate ranks
                let minimal = (1..=all.len())
                    .find(|&k| all[k..].iter().map(|s| s * s).sum::<f64>() / total <= cutoff)
                    .unwrap();
                prop_assert_eq!(r.rank(), minimal);
                prop_assert!(r.discarded_weight <= cutoff);
            }
        }
    }
}
