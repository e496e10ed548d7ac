//! Dense complex tensors with named-by-position legs.
//!
//! Data is stored row-major (last leg fastest) in complex double precision.
//! All operations are pure: they take references and return fresh tensors,
//! so values can be shared freely across threads.

use crate::error::{Error, Result};
use nalgebra::DMatrix;
use num_complex::Complex64;

/// Dense tensor over `Complex64` with a fixed row-major layout.
///
/// Invariant: `data.len() == shape.iter().product()`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<Complex64>,
}

/// Eigendecomposition of a Hermitian matrix.
///
/// Eigenvalues are sorted descending. Column `k` of `vectors` pairs with
/// `values[k]`, and each column's largest-magnitude entry is phase-fixed to
/// be real and positive so the decomposition is gauge-deterministic.
#[derive(Debug, Clone)]
pub struct SpectralDecomposition {
    pub values: Vec<f64>,
    pub vectors: Tensor,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<Complex64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::ShapeMismatch {
                shape,
                expected,
                got: data.len(),
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n: usize = shape.iter().product();
        Tensor {
            shape,
            data: vec![Complex64::new(0.0, 0.0); n],
        }
    }

    /// Identity matrix as a 2-leg tensor.
    pub fn identity(dim: usize) -> Self {
        let mut t = Tensor::zeros(vec![dim, dim]);
        for i in 0..dim {
            t.data[i * dim + i] = Complex64::new(1.0, 0.0);
        }
        t
    }

    pub fn scalar(value: Complex64) -> Self {
        Tensor {
            shape: vec![],
            data: vec![value],
        }
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

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<Complex64> {
        self.data
    }

    pub fn get(&self, idx: &[usize]) -> Complex64 {
        self.data[self.flat_index(idx)]
    }

    pub fn set(&mut self, idx: &[usize], value: Complex64) {
        let f = self.flat_index(idx);
        self.data[f] = value;
    }

    fn flat_index(&self, idx: &[usize]) -> usize {
        debug_assert_eq!(idx.len(), self.shape.len());
        let mut f = 0;
        for (i, &d) in idx.iter().zip(&self.shape) {
            debug_assert!(*i < d);
            f = f * d + i;
        }
        f
    }

    /// Relabel legs without touching data. The new shape must have the same
    /// total number of elements.
    pub fn reshape(&self, shape: Vec<usize>) -> Result<Tensor> {
        let expected: usize = shape.iter().product();
        if expected != self.data.len() {
            return Err(Error::ShapeMismatch {
                shape,
                expected,
                got: self.data.len(),
            });
        }
        Ok(Tensor {
            shape,
            data: self.data.clone(),
        })
    }

    /// Reorder legs: output leg `i` is input leg `perm[i]`.
    ///
    /// A permute followed by its inverse reproduces the data bit-exactly.
    pub fn permute(&self, perm: &[usize]) -> Result<Tensor> {
        let rank = self.rank();
        if perm.len() != rank {
            return Err(Error::Invalid(format!(
                "permutation of length {} on rank-{} tensor",
                perm.len(),
                rank
            )));
        }
        let mut seen = vec![false; rank];
        for &p in perm {
            if p >= rank || seen[p] {
                return Err(Error::Invalid(format!("bad permutation {:?}", perm)));
            }
            seen[p] = true;
        }
        let out_shape: Vec<usize> = perm.iter().map(|&p| self.shape[p]).collect();
        let mut out = vec![Complex64::new(0.0, 0.0); self.data.len()];

        // strides of the input tensor
        let mut in_strides = vec![1usize; rank];
        for i in (0..rank.saturating_sub(1)).rev() {
            in_strides[i] = in_strides[i + 1] * self.shape[i + 1];
        }
        // walk output indices in row-major order; map to input flat index
        let src_strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
        let mut idx = vec![0usize; rank];
        for slot in out.iter_mut() {
            let mut f = 0;
            for (i, s) in idx.iter().zip(&src_strides) {
                f += i * s;
            }
            *slot = self.data[f];
            for d in (0..rank).rev() {
                idx[d] += 1;
                if idx[d] < out_shape[d] {
                    break;
                }
                idx[d] = 0;
            }
        }
        Ok(Tensor {
            shape: out_shape,
            data: out,
        })
    }

    /// Elementwise complex conjugate.
    pub fn conj(&self) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|z| z.conj()).collect(),
        }
    }

    /// Conjugate transpose of a 2-leg tensor.
    pub fn dagger(&self) -> Result<Tensor> {
        if self.rank() != 2 {
            return Err(Error::Invalid(format!(
                "dagger needs a matrix, got rank {}",
                self.rank()
            )));
        }
        self.permute(&[1, 0]).map(|t| t.conj())
    }

    pub fn scale(&self, c: Complex64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|z| z * c).collect(),
        }
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        if self.shape != other.shape {
            return Err(Error::DimMismatch(format!(
                "add: {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a + b)
                .collect(),
        })
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.add(&other.scale(Complex64::new(-1.0, 0.0)))
    }

    /// Kronecker product of two matrices (2-leg tensors).
    pub fn kron(&self, other: &Tensor) -> Result<Tensor> {
        if self.rank() != 2 || other.rank() != 2 {
            return Err(Error::Invalid("kron needs two matrices".into()));
        }
        let (r1, c1) = (self.shape[0], self.shape[1]);
        let (r2, c2) = (other.shape[0], other.shape[1]);
        let mut out = Tensor::zeros(vec![r1 * r2, c1 * c2]);
        for i1 in 0..r1 {
            for j1 in 0..c1 {
                let a = self.data[i1 * c1 + j1];
                for i2 in 0..r2 {
                    for j2 in 0..c2 {
                        out.data[(i1 * r2 + i2) * (c1 * c2) + (j1 * c2 + j2)] =
                            a * other.data[i2 * c2 + j2];
                    }
                }
            }
        }
        Ok(out)
    }

    /// Trace of a square matrix.
    pub fn trace(&self) -> Result<Complex64> {
        if self.rank() != 2 || self.shape[0] != self.shape[1] {
            return Err(Error::Invalid("trace needs a square matrix".into()));
        }
        let d = self.shape[0];
        Ok((0..d).map(|i| self.data[i * d + i]).sum())
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    /// Inner product `tr(a† b)` for same-shape tensors.
    pub fn inner(&self, other: &Tensor) -> Result<Complex64> {
        if self.shape != other.shape {
            return Err(Error::DimMismatch(format!(
                "inner: {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a.conj() * b)
            .sum())
    }

    /// Matrix product of two 2-leg tensors.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        contract(self, other, &[(1, 0)])
    }

    pub fn is_finite(&self) -> bool {
        self.data
            .iter()
            .all(|z| z.re.is_finite() && z.im.is_finite())
    }

    pub(crate) fn to_dmatrix(&self) -> Result<DMatrix<Complex64>> {
        if self.rank() != 2 {
            return Err(Error::Invalid(format!(
                "matrix view needs rank 2, got {}",
                self.rank()
            )));
        }
        let (r, c) = (self.shape[0], self.shape[1]);
        Ok(DMatrix::from_fn(r, c, |i, j| self.data[i * c + j]))
    }

    pub(crate) fn from_dmatrix(m: &DMatrix<Complex64>) -> Tensor {
        let (r, c) = (m.nrows(), m.ncols());
        let mut data = Vec::with_capacity(r * c);
        for i in 0..r {
            for j in 0..c {
                data.push(m[(i, j)]);
            }
        }
        Tensor {
            shape: vec![r, c],
            data,
        }
    }
}

/// Row-major complex GEMM: `c = a(m,k) * b(k,n)`.
pub(crate) fn gemm(
    a: &[Complex64],
    b: &[Complex64],
    c: &mut [Complex64],
    m: usize,
    k: usize,
    n: usize,
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c.fill(Complex64::new(0.0, 0.0));
        return;
    }
    unsafe {
        matrixmultiply::zgemm(
            matrixmultiply::CGemmOption::Standard,
            matrixmultiply::CGemmOption::Standard,
            m,
            k,
            n,
            [1.0, 0.0],
            a.as_ptr() as *const [f64; 2],
            k as isize,
            1,
            b.as_ptr() as *const [f64; 2],
            n as isize,
            1,
            [0.0, 0.0],
            c.as_mut_ptr() as *mut [f64; 2],
            n as isize,
            1,
        );
    }
}

/// Contract tensors `a` and `b` over the given (a-leg, b-leg) pairs.
///
/// Output legs are `a`'s free legs in order, then `b`'s free legs in order.
pub fn contract(a: &Tensor, b: &Tensor, pairs: &[(usize, usize)]) -> Result<Tensor> {
    for &(la, lb) in pairs {
        if la >= a.rank() {
            return Err(Error::LegOutOfRange {
                index: la,
                rank: a.rank(),
            });
        }
        if lb >= b.rank() {
            return Err(Error::LegOutOfRange {
                index: lb,
                rank: b.rank(),
            });
        }
        if a.shape[la] != b.shape[lb] {
            return Err(Error::ContractMismatch {
                a_leg: la,
                a_dim: a.shape[la],
                b_leg: lb,
                b_dim: b.shape[lb],
            });
        }
    }
    let a_contract: Vec<usize> = pairs.iter().map(|p| p.0).collect();
    let b_contract: Vec<usize> = pairs.iter().map(|p| p.1).collect();
    let a_free: Vec<usize> = (0..a.rank()).filter(|l| !a_contract.contains(l)).collect();
    let b_free: Vec<usize> = (0..b.rank()).filter(|l| !b_contract.contains(l)).collect();

    let mut a_perm = a_free.clone();
    a_perm.extend_from_slice(&a_contract);
    let mut b_perm = b_contract.clone();
    b_perm.extend_from_slice(&b_free);

    let ap = a.permute(&a_perm)?;
    let bp = b.permute(&b_perm)?;

    let m: usize = a_free.iter().map(|&l| a.shape[l]).product();
    let k: usize = a_contract.iter().map(|&l| a.shape[l]).product();
    let n: usize = b_free.iter().map(|&l| b.shape[l]).product();

    let mut out_shape: Vec<usize> = a_free.iter().map(|&l| a.shape[l]).collect();
    out_shape.extend(b_free.iter().map(|&l| b.shape[l]));

    let mut out = vec![Complex64::new(0.0, 0.0); m * n];
    gemm(&ap.data, &bp.data, &mut out, m, k, n);
    Ok(Tensor {
        shape: out_shape,
        data: out,
    })
}

/// Singular value decomposition of a matrix-shaped tensor.
///
/// Returns `(u, s, v)` with `m = u * diag(s) * v†`, `s` real non-negative
/// descending, and `u`, `v` having orthonormal columns.
pub fn svd(m: &Tensor) -> Result<(Tensor, Vec<f64>, Tensor)> {
    if m.rank() != 2 {
        return Err(Error::Invalid(format!(
            "svd needs a matrix, got rank {}",
            m.rank()
        )));
    }
    if !m.is_finite() {
        return Err(Error::NonFinite("svd input"));
    }
    let dm = m.to_dmatrix()?;
    let svd = dm.svd(true, true);
    let u = svd.u.ok_or_else(|| Error::Invalid("svd: missing u".into()))?;
    let vt = svd
        .v_t
        .ok_or_else(|| Error::Invalid("svd: missing v_t".into()))?;
    let s: Vec<f64> = svd.singular_values.iter().cloned().collect();

    // sort descending
    let mut order: Vec<usize> = (0..s.len()).collect();
    order.sort_by(|&i, &j| s[j].partial_cmp(&s[i]).unwrap());
    let s_sorted: Vec<f64> = order.iter().map(|&i| s[i]).collect();

    let (ru, rank) = (u.nrows(), order.len());
    let mut u_t = Tensor::zeros(vec![ru, rank]);
    for (col_out, &col_in) in order.iter().enumerate() {
        for r in 0..ru {
            u_t.data[r * rank + col_out] = u[(r, col_in)];
        }
    }
    let cv = vt.ncols();
    let mut v_t = Tensor::zeros(vec![cv, rank]);
    for (col_out, &row_in) in order.iter().enumerate() {
        for r in 0..cv {
            v_t.data[r * rank + col_out] = vt[(row_in, r)].conj();
        }
    }
    Ok((u_t, s_sorted, v_t))
}

/// Eigendecomposition of a Hermitian matrix-shaped tensor.
///
/// Rejects inputs with `‖m − m†‖ > 1e-10 · ‖m‖`. Eigenvalues come back
/// sorted descending; each eigenvector's largest-magnitude entry is rotated
/// to be real-positive (ties broken by lowest index).
pub fn hermitian_eig(m: &Tensor) -> Result<SpectralDecomposition> {
    if m.rank() != 2 || m.shape[0] != m.shape[1] {
        return Err(Error::Invalid("hermitian_eig needs a square matrix".into()));
    }
    if !m.is_finite() {
        return Err(Error::NonFinite("hermitian_eig input"));
    }
    let norm = m.frobenius_norm();
    let dev = m.sub(&m.dagger()?)?.frobenius_norm();
    let tol = 1e-10 * norm.max(1.0);
    if dev > tol {
        return Err(Error::NotHermitian { dev, tol });
    }
    let d = m.shape[0];
    // symmetrize to suppress roundoff before factorizing
    let herm = m.add(&m.dagger()?)?.scale(Complex64::new(0.5, 0.0));
    let se = herm.to_dmatrix()?.symmetric_eigen();
    let vals: Vec<f64> = se.eigenvalues.iter().cloned().collect();
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&i, &j| vals[j].partial_cmp(&vals[i]).unwrap());

    let mut vectors = Tensor::zeros(vec![d, d]);
    let mut values = Vec::with_capacity(d);
    for (col_out, &col_in) in order.iter().enumerate() {
        values.push(vals[col_in]);
        // phase fix: largest-|entry| real-positive, ties -> lowest index
        let mut best = 0usize;
        let mut best_mag = -1.0f64;
        for r in 0..d {
            let mag = se.eigenvectors[(r, col_in)].norm();
            if mag > best_mag + 1e-14 {
                best_mag = mag;
                best = r;
            }
        }
        let pivot = se.eigenvectors[(best, col_in)];
        let phase = if pivot.norm() > 0.0 {
            pivot.conj() / pivot.norm()
        } else {
            Complex64::new(1.0, 0.0)
        };
        for r in 0..d {
            vectors.data[r * d + col_out] = se.eigenvectors[(r, col_in)] * phase;
        }
    }
    Ok(SpectralDecomposition { values, vectors })
}

/// Partial trace of a density matrix over the complement of `keep`.
///
/// `rho` must be square over the subsystem dimensions in `dims`. Kept
/// subsystems appear in the output in their original order, and the trace is
/// preserved.
pub fn partial_trace(rho: &Tensor, dims: &[usize], keep: &[usize]) -> Result<Tensor> {
    let total: usize = dims.iter().product();
    if rho.rank() != 2 || rho.shape[0] != total || rho.shape[1] != total {
        return Err(Error::DimMismatch(format!(
            "partial_trace: rho shape {:?} vs subsystem dims {:?}",
            rho.shape, dims
        )));
    }
    for &k in keep {
        if k >= dims.len() {
            return Err(Error::LegOutOfRange {
                index: k,
                rank: dims.len(),
            });
        }
    }
    let mut keep_sorted = keep.to_vec();
    keep_sorted.sort_unstable();
    keep_sorted.dedup();
    if keep_sorted.len() != keep.len() {
        return Err(Error::Invalid("partial_trace: duplicate keep index".into()));
    }
    let rest: Vec<usize> = (0..dims.len()).filter(|i| !keep_sorted.contains(i)).collect();
    let dk: usize = keep_sorted.iter().map(|&i| dims[i]).product();
    let dr: usize = rest.iter().map(|&i| dims[i]).product();

    // view rho with one leg per subsystem on each side, permute kept first
    let mut legs: Vec<usize> = dims.to_vec();
    legs.extend_from_slice(dims);
    let t = rho.reshape(legs)?;
    let ns = dims.len();
    let mut perm: Vec<usize> = Vec::with_capacity(2 * ns);
    perm.extend(keep_sorted.iter().copied());
    perm.extend(rest.iter().copied());
    perm.extend(keep_sorted.iter().map(|&i| i + ns));
    perm.extend(rest.iter().map(|&i| i + ns));
    let p = t.permute(&perm)?;
    let p = p.reshape(vec![dk, dr, dk, dr])?;

    let mut out = Tensor::zeros(vec![dk, dk]);
    for a in 0..dk {
        for b in 0..dk {
            let mut acc = Complex64::new(0.0, 0.0);
            for r in 0..dr {
                acc += p.data[((a * dr + r) * dk + b) * dr + r];
            }
            out.data[a * dk + b] = acc;
        }
    }
    Ok(out)
}
