//! Renormalized-observable selection: candidate generation, greedy
//! determinant maximization, Gram orthogonalization, shot allocation, and
//! measurement budgets.
//!
//! Operators are handled as real coefficient vectors in the orthonormalized
//! Hermitian Pauli basis of the target block (`v[a] = tr(A P_a) / √dim`), so
//! Euclidean inner products equal Hilbert-Schmidt ones and determinants are
//! taken over real matrices.

use crate::error::{Error, Result};
use crate::mera::{
    ascend_product, ascend_to_block, edge_spill, exact_window, isometry_inputs, AscendedOp,
    Geometry, Layer, ProductOp,
};
use crate::pauli::{Pauli, PauliString};
use crate::tensor::Tensor;
use num_complex::Complex64;

/// One candidate observable: a Pauli label on a lower-level window together
/// with the coefficient vector of its ascended image on the target block.
#[derive(Debug, Clone)]
pub struct Candidate {
    pub label: PauliString,
    pub vector: Vec<f64>,
}

/// Candidate pool for one target block.
#[derive(Debug, Clone)]
pub struct CandidateSet {
    /// Coefficient-space dimension (4^block_size).
    pub dim: usize,
    /// Target block (upper-lattice sites, ring order).
    pub block: Vec<usize>,
    /// Lower-level sites the labels act on, ring order.
    pub window: Vec<usize>,
    pub items: Vec<Candidate>,
}

/// Window policy for candidate generation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CandidateWindow {
    /// All Pauli strings on the isometry-input window (8 sites for a binary
    /// 4-site block); ascents falling outside the block are truncated onto
    /// it. This is the selection-statistics convention.
    Selection,
    /// Only operators whose ascent provably stays inside the block: full
    /// Pauli freedom on the interior window plus boundary factors that pass
    /// the edge-spill test. Expectation values of these candidates are exact
    /// on zero-truncation states.
    Exact,
}

/// `tr(op · P_code)` using the one-nonzero-per-row structure of a Pauli
/// string: `P[c, r]` vanishes unless `c = r ^ flip`, where flip marks X/Y
/// sites, and the value is `i^{#Y} (-1)^{|r & yz|}`.
fn pauli_trace(op: &Tensor, code: usize, block_size: usize) -> Complex64 {
    let d = 1usize << block_size;
    let mut flip = 0usize;
    let mut yz = 0usize;
    let mut n_y = 0u32;
    let mut c = code;
    for k in (0..block_size).rev() {
        let digit = c % 4;
        c /= 4;
        let bit = 1usize << (block_size - 1 - k);
        match digit {
            1 => flip |= bit,
            2 => {
                flip |= bit;
                yz |= bit;
                n_y += 1;
            }
            3 => yz |= bit,
            _ => {}
        }
    }
    let i_pow = match n_y % 4 {
        0 => Complex64::new(1.0, 0.0),
        1 => Complex64::new(0.0, 1.0),
        2 => Complex64::new(-1.0, 0.0),
        _ => Complex64::new(0.0, -1.0),
    };
    let mut acc = Complex64::new(0.0, 0.0);
    for r in 0..d {
        let sign = if ((r & yz).count_ones() & 1) == 1 {
            -1.0
        } else {
            1.0
        };
        acc += op.data()[r * d + (r ^ flip)] * sign;
    }
    acc * i_pow
}

/// Compressed Pauli-coefficient representation of a block operator:
/// `v[a] = tr(op P_a) / √(2^block_size)`, so Euclidean inner products of
/// vectors equal Hilbert-Schmidt inner products of operators.
pub fn op_to_vector(op: &Tensor, block_size: usize) -> Vec<f64> {
    let norm = ((1usize << block_size) as f64).sqrt();
    let mut out = Vec::with_capacity(1 << (2 * block_size));
    for code in 0..1usize << (2 * block_size) {
        let ip = pauli_trace(op, code, block_size);
        out.push(ip.re / norm);
    }
    out
}

/// Inverse of [`op_to_vector`].
pub fn vector_to_op(v: &[f64], block_size: usize) -> Tensor {
    let d = 1usize << block_size;
    let norm = (d as f64).sqrt();
    let mut out = Tensor::zeros(vec![d, d]);
    for (code, &coeff) in v.iter().enumerate() {
        if coeff == 0.0 {
            continue;
        }
        let p = PauliString::from_code(code, block_size).matrix();
        out = out.add(&p.scale(Complex64::new(coeff / norm, 0.0))).unwrap();
    }
    out
}

fn pauli_coeff_vector(asc_block: &Tensor, block_size: usize) -> Vec<f64> {
    op_to_vector(asc_block, block_size)
}

/// Generate the candidate pool for one block of `layer`.
///
/// Spill tolerance for the `Exact` window is 1e-10 on the boundary
/// disentangler's outward component.
pub fn layer_candidates(
    layer: &Layer,
    block: &[usize],
    mode: CandidateWindow,
) -> Result<CandidateSet> {
    if layer.geometry != Geometry::Binary {
        return Err(Error::Invalid(
            "candidate generation is defined for the binary geometry".into(),
        ));
    }
    let l = layer.lattice_in;
    let inputs = isometry_inputs(Geometry::Binary, l, block);
    let block_size = block.len();
    let dim = 1usize << (2 * block_size);

    // per-site admissible factors
    let all: Vec<Pauli> = Pauli::ALL.to_vec();
    let site_choices: Vec<(usize, Vec<Pauli>)> = match mode {
        CandidateWindow::Selection => inputs.iter().map(|&s| (s, all.clone())).collect(),
        CandidateWindow::Exact => {
            let interior = exact_window(Geometry::Binary, l, block);
            let mut choices = Vec::new();
            for &s in &inputs {
                if interior.contains(&s) {
                    choices.push((s, all.clone()));
                } else {
                    // boundary site: the straddling disentangler decides
                    let groups = l / 2;
                    let ui = ((s + l - 1) % l) / 2 % groups;
                    let (a, _b) = layer.disentangler_sites(ui);
                    let outward_first = a != s; // partner leg sits before s
                    let u = &layer.disentanglers[ui];
                    let mut adm = vec![Pauli::I];
                    for p in [Pauli::X, Pauli::Y, Pauli::Z] {
                        if edge_spill(u, &p.matrix(), outward_first) < 1e-10 {
                            adm.push(p);
                        }
                    }
                    choices.push((s, adm));
                }
            }
            choices
        }
    };

    let window: Vec<usize> = site_choices.iter().map(|(s, _)| *s).collect();
    let counts: Vec<usize> = site_choices.iter().map(|(_, c)| c.len()).collect();
    let total: usize = counts.iter().product();

    let columns = block_ascent_columns(layer, block)?;
    debug_assert_eq!(columns.window, window);
    debug_assert_eq!(columns.dim_out, dim);
    let w = window.len();

    let mut items = Vec::with_capacity(total);
    let mut digits = vec![0usize; w];
    for _ in 0..total {
        let labels: Vec<Pauli> = digits
            .iter()
            .zip(&site_choices)
            .map(|(&d, (_, c))| c[d])
            .collect();
        let p = PauliString::new(labels);
        let code = p.code();
        items.push(Candidate {
            vector: columns.column(code).to_vec(),
            label: p,
        });
        // increment mixed-radix counter, last site fastest
        for k in (0..digits.len()).rev() {
            digits[k] += 1;
            if digits[k] < counts[k] {
                break;
            }
            digits[k] = 0;
        }
    }
    Ok(CandidateSet {
        dim,
        block: block.to_vec(),
        window,
        items,
    })
}

// ---------------------------------------------------------------------------
// greedy selection and one-by-one replacement
// ---------------------------------------------------------------------------

/// Longest-residual-vector greedy selection of `count` candidates.
///
/// With `pin_identity` the first item of the set must be the identity label
/// and is fixed as member 0. Ties in residual norm break toward the lower
/// index. Fails with the achieved rank when the pool cannot span `count`
/// dimensions.
pub fn lrv_select(set: &CandidateSet, count: usize, pin_identity: bool) -> Result<Vec<usize>> {
    let n = set.items.len();
    if count > set.dim || count > n {
        return Err(Error::Invalid(format!(
            "cannot select {count} from {n} candidates in dim {}",
            set.dim
        )));
    }
    let mut selected = Vec::with_capacity(count);
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(count); // orthonormal
    let mut res2: Vec<f64> = set
        .items
        .iter()
        .map(|c| dot(&c.vector, &c.vector))
        .collect();

    let mut orthogonalize_against = |v: &[f64], basis: &Vec<Vec<f64>>| -> Vec<f64> {
        let mut w = v.to_vec();
        for q in basis {
            let ov = dot(&w, q);
            for (wi, qi) in w.iter_mut().zip(q) {
                *wi -= ov * qi;
            }
        }
        w
    };

    if pin_identity {
        if !set.items[0].label.is_identity() {
            return Err(Error::Invalid(
                "identity pinning requires the identity candidate at index 0".into(),
            ));
        }
        selected.push(0usize);
        let q = normalize(set.items[0].vector.clone());
        for (r, c) in res2.iter_mut().zip(&set.items) {
            let ov = dot(&c.vector, &q);
            *r -= ov * ov;
        }
        basis.push(q);
    }

    while selected.len() < count {
        let mut best = usize::MAX;
        let mut best_r = 1e-18;
        for (i, &r) in res2.iter().enumerate() {
            if selected.contains(&i) {
                continue;
            }
            if r > best_r + 1e-14 {
                best_r = r;
                best = i;
            }
        }
        if best == usize::MAX {
            return Err(Error::RankDeficient {
                achieved: selected.len(),
                needed: count,
            });
        }
        // re-orthogonalize the chosen vector for numerical hygiene
        let w = orthogonalize_against(&set.items[best].vector, &basis);
        let nrm = dot(&w, &w).sqrt();
        if nrm < 1e-9 {
            return Err(Error::RankDeficient {
                achieved: selected.len(),
                needed: count,
            });
        }
        let q: Vec<f64> = w.iter().map(|x| x / nrm).collect();
        for (r, c) in res2.iter_mut().zip(&set.items) {
            let ov = dot(&c.vector, &q);
            *r -= ov * ov;
            if *r < 0.0 {
                *r = 0.0;
            }
        }
        selected.push(best);
        basis.push(q);
    }
    Ok(selected)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn normalize(mut v: Vec<f64>) -> Vec<f64> {
    let n = dot(&v, &v).sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    v
}

/// log|det| of the square matrix whose columns are the selected vectors.
pub fn selection_log_abs_det(set: &CandidateSet, selected: &[usize]) -> f64 {
    let k = selected.len();
    let mut m = nalgebra::DMatrix::<f64>::zeros(set.dim, k);
    for (col, &idx) in selected.iter().enumerate() {
        for (row, &v) in set.items[idx].vector.iter().enumerate() {
            m[(row, col)] = v;
        }
    }
    if set.dim == k {
        let lu = m.full_piv_lu();
        let mut acc = 0.0f64;
        for i in 0..k {
            let d: f64 = lu.u()[(i, i)];
            acc += d.abs().max(1e-300).ln();
        }
        acc
    } else {
        // rectangular selection: use the Gram determinant
        let g = m.transpose() * m;
        let lu = g.full_piv_lu();
        let mut acc = 0.0f64;
        for i in 0..k {
            let d: f64 = lu.u()[(i, i)];
            acc += d.abs().max(1e-300).ln();
        }
        acc / 2.0
    }
}

/// One-by-one replacement: repeatedly swap the selected member and unselected
/// candidate giving the largest |det| gain, until no swap improves or the
/// iteration cap (`max_passes * count`) is reached. |det| never decreases.
/// Member 0 is excluded from swaps when it is the pinned identity.
pub fn one_by_one_replace(
    set: &CandidateSet,
    selected: &[usize],
    max_passes: usize,
    protect_first: bool,
) -> Result<Vec<usize>> {
    let count = selected.len();
    if count != set.dim {
        // replacement with det ratios needs a square selection
        return Ok(selected.to_vec());
    }
    let n = set.items.len();
    let dim = set.dim;
    let mut sel = selected.to_vec();

    // column-major selected matrix and its inverse
    let build = |sel: &[usize]| -> nalgebra::DMatrix<f64> {
        let mut b = nalgebra::DMatrix::<f64>::zeros(dim, count);
        for (col, &idx) in sel.iter().enumerate() {
            for (row, &v) in set.items[idx].vector.iter().enumerate() {
                b[(row, col)] = v;
            }
        }
        b
    };
    let full_c = {
        let mut c = nalgebra::DMatrix::<f64>::zeros(dim, n);
        for (col, item) in set.items.iter().enumerate() {
            for (row, &v) in item.vector.iter().enumerate() {
                c[(row, col)] = v;
            }
        }
        c
    };

    let mut b_inv = match build(&sel).try_inverse() {
        Some(inv) => inv,
        None => {
            return Err(Error::Invalid(
                "replacement: selected matrix is singular".into(),
            ))
        }
    };
    let mut gains = &b_inv * &full_c; // gains[k, c] = det ratio for swapping member k with candidate c

    let cap = max_passes.saturating_mul(count).max(1);
    let mut iters = 0usize;
    let skip_from = usize::from(protect_first);
    loop {
        if iters >= cap {
            break;
        }
        // find the best admissible swap
        let mut best = (0usize, 0usize);
        let mut best_gain = 1.0 + 1e-9;
        for k in skip_from..count {
            for c in 0..n {
                if sel.contains(&c) {
                    continue;
                }
                let g = gains[(k, c)].abs();
                if g > best_gain {
                    best_gain = g;
                    best = (k, c);
                }
            }
        }
        if best_gain <= 1.0 + 1e-9 {
            break;
        }
        let (k, c) = best;
        let old_idx = sel[k];
        sel[k] = c;
        iters += 1;

        // Sherman-Morrison update of b_inv and gains
        let d: nalgebra::DVector<f64> = {
            let newv = nalgebra::DVector::from_iterator(dim, set.items[c].vector.iter().copied());
            let oldv =
                nalgebra::DVector::from_iterator(dim, set.items[old_idx].vector.iter().copied());
            newv - oldv
        };
        let u = &b_inv * &d;
        let s = 1.0 + u[k];
        if s.abs() < 1e-12 || iters % 64 == 0 {
            // refresh from scratch to kill drift
            b_inv = match build(&sel).try_inverse() {
                Some(inv) => inv,
                None => {
                    sel[k] = old_idx;
                    break;
                }
            };
            gains = &b_inv * &full_c;
            continue;
        }
        let row_k = b_inv.row(k).clone_owned();
        b_inv -= (&u * &row_k) / s;
        let grow = gains.row(k).clone_owned();
        gains -= (&u * &grow) / s;
    }
    Ok(sel)
}

// ---------------------------------------------------------------------------
// Gram orthogonalization and allocation
// ---------------------------------------------------------------------------

/// Orthogonalized basis of renormalized observables for one block.
#[derive(Debug, Clone)]
pub struct RenormalizedBasis {
    pub level: usize,
    pub block: Vec<usize>,
    /// Lower-level window the labels act on.
    pub window: Vec<usize>,
    /// Selected labels; entry 0 is the identity.
    pub labels: Vec<PauliString>,
    /// Coefficient vectors of the selected ascended operators.
    pub vectors: Vec<Vec<f64>>,
    /// Gram matrix of the selected vectors.
    pub gram: Vec<Vec<f64>>,
    /// `R_i = Σ_j beta[i][j] O_j`.
    pub beta: Vec<Vec<f64>>,
    /// Orthogonal operators in coefficient form; `r_i · r_j = dim_norm δ_ij`.
    pub r_vectors: Vec<Vec<f64>>,
    pub log_abs_det: f64,
}

impl RenormalizedBasis {
    /// Block size implied by the coefficient-space dimension.
    pub fn block_size(&self) -> usize {
        (self.vectors[0].len().trailing_zeros() / 2) as usize
    }

    /// Dense operator for `R_i`.
    pub fn r_operator(&self, i: usize) -> Tensor {
        vector_to_op(&self.r_vectors[i], self.block_size())
    }

    /// Hilbert-Schmidt normalization `tr(R_i R_i†)` the basis is built to
    /// (the block Pauli norm, 16 for 4-site blocks).
    pub fn r_norm_sq(&self) -> f64 {
        (1usize << self.block_size()) as f64
    }
}

/// Build the orthogonal operator family from a selected subset via the Gram
/// eigendecomposition `G = Z D Z†`, with each `R_i` normalized to the trace
/// norm of a block Pauli string.
pub fn gram_orthogonalize(
    set: &CandidateSet,
    selected: &[usize],
    level: usize,
) -> Result<RenormalizedBasis> {
    let k = selected.len();
    let dim = set.dim;
    let norm = (dim as f64).powf(0.25); // coefficient-space norm of a block Pauli
    let mut g = nalgebra::DMatrix::<f64>::zeros(k, k);
    for a in 0..k {
        for b in 0..k {
            g[(a, b)] = dot(
                &set.items[selected[a]].vector,
                &set.items[selected[b]].vector,
            );
        }
    }
    let se = g.clone().symmetric_eigen();
    // descending eigenvalue order, deterministic sign
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&i, &j| se.eigenvalues[j].partial_cmp(&se.eigenvalues[i]).unwrap());
    let dmin = se.eigenvalues[*order.last().unwrap()];
    if dmin <= 1e-12 {
        return Err(Error::Invalid(format!(
            "gram matrix is singular beyond tolerance (min eigenvalue {dmin:.3e})"
        )));
    }

    let mut beta = vec![vec![0.0f64; k]; k];
    for (i_out, &col) in order.iter().enumerate() {
        let dii = se.eigenvalues[col];
        let scale = norm / dii.sqrt();
        // deterministic sign: largest-|entry| positive
        let mut pivot = 0usize;
        let mut mag = -1.0;
        for r in 0..k {
            let m = se.eigenvectors[(r, col)].abs();
            if m > mag + 1e-14 {
                mag = m;
                pivot = r;
            }
        }
        let sign = if se.eigenvectors[(pivot, col)] < 0.0 {
            -1.0
        } else {
            1.0
        };
        for j in 0..k {
            // beta_ij = (norm/√D_ii) Z†_ij = (norm/√D_ii) Z_ji for real Z
            beta[i_out][j] = scale * sign * se.eigenvectors[(j, col)];
        }
    }

    let mut r_vectors = vec![vec![0.0f64; dim]; k];
    for i in 0..k {
        for j in 0..k {
            let b = beta[i][j];
            if b == 0.0 {
                continue;
            }
            for (rv, &cv) in r_vectors[i]
                .iter_mut()
                .zip(&set.items[selected[j]].vector)
            {
                *rv += b * cv;
            }
        }
    }

    let gram: Vec<Vec<f64>> = (0..k)
        .map(|a| (0..k).map(|b| g[(a, b)]).collect())
        .collect();
    Ok(RenormalizedBasis {
        level,
        block: set.block.clone(),
        window: set.window.clone(),
        labels: selected.iter().map(|&i| set.items[i].label.clone()).collect(),
        vectors: selected
            .iter()
            .map(|&i| set.items[i].vector.clone())
            .collect(),
        gram,
        beta,
        r_vectors,
        log_abs_det: selection_log_abs_det(set, selected),
    })
}

/// Shot allocation for a renormalized basis.
#[derive(Debug, Clone, serde::Serialize)]
pub struct MeasurementPlan {
    /// Selected labels, matching the multiplier table.
    pub labels: Vec<String>,
    /// `B_ij = |beta_ij|^2`.
    #[serde(skip_serializing)]
    pub b_matrix: Vec<Vec<f64>>,
    /// Column maxima `γ_j = max_i B_ij`.
    pub gamma: Vec<f64>,
    /// Feasibility factor `K = max_i Σ_j B_ij / γ_j`.
    pub k_factor: f64,
    /// Normalized shot multipliers `Ñ_j` (floored at 1).
    pub multipliers: Vec<f64>,
    /// Conditioning factor `S = Σ_j Ñ_j / count`.
    pub conditioning: f64,
    pub m0: u64,
    /// Total physical measurements `N = M0 Σ_j Ñ_j`.
    pub total: f64,
}

/// Derive the shot allocation from `beta`, maintaining the minimum precision
/// constraint `Σ_j B_ij / Ñ_j <= 1` for every orthogonal observable.
pub fn allocate(basis: &RenormalizedBasis, m0: u64) -> Result<MeasurementPlan> {
    let k = basis.beta.len();
    let b: Vec<Vec<f64>> = basis
        .beta
        .iter()
        .map(|row| row.iter().map(|x| x * x).collect())
        .collect();
    let mut gamma = vec![0.0f64; k];
    for row in &b {
        for (g, &x) in gamma.iter_mut().zip(row) {
            if x > *g {
                *g = x;
            }
        }
    }
    if gamma.iter().any(|&g| g <= 0.0) {
        return Err(Error::Invalid("allocation: zero column in B".into()));
    }
    // row maxima of Σ_j B_ij/γ_j guarantee feasibility of Ñ_j = K γ_j
    let mut k_factor = 0.0f64;
    for row in &b {
        let s: f64 = row.iter().zip(&gamma).map(|(x, g)| x / g).sum();
        k_factor = k_factor.max(s);
    }
    let multipliers: Vec<f64> = gamma.iter().map(|&g| (k_factor * g).max(1.0)).collect();
    // feasibility is structural; assert it anyway
    for (i, row) in b.iter().enumerate() {
        let s: f64 = row.iter().zip(&multipliers).map(|(x, m)| x / m).sum();
        if s > 1.0 + 1e-9 {
            return Err(Error::Invalid(format!(
                "allocation infeasible at row {i}: {s}"
            )));
        }
    }
    let sum: f64 = multipliers.iter().sum();
    Ok(MeasurementPlan {
        labels: basis.labels.iter().map(|l| l.to_string()).collect(),
        b_matrix: b,
        gamma,
        k_factor,
        conditioning: sum / k as f64,
        multipliers,
        m0,
        total: sum * m0 as f64,
    })
}

/// Full selection pipeline for one block of one layer; returns the basis and
/// its allocation.
pub fn select_block_basis(
    layer: &Layer,
    block: &[usize],
    level: usize,
    mode: CandidateWindow,
    m0: u64,
    replacement_passes: usize,
) -> Result<(RenormalizedBasis, MeasurementPlan)> {
    let set = layer_candidates(layer, block, mode)?;
    let picked = lrv_select(&set, set.dim, true)?;
    let improved = one_by_one_replace(&set, &picked, replacement_passes, true)?;
    let basis = gram_orthogonalize(&set, &improved, level)?;
    let plan = allocate(&basis, m0)?;
    Ok((basis, plan))
}

/// Conditioning factor of one layer (selection-statistics window), averaged
/// over nothing: the canonical block `[1, 2, 3, 4]` is used, matching the
/// translation-invariant setting.
pub fn conditioning_factor(layer: &Layer, m0: u64) -> Result<f64> {
    let up = layer.lattice_out();
    let block: Vec<usize> = (1..=4).map(|b| b % up).collect();
    let block: Vec<usize> = if up >= 4 {
        block
    } else {
        (0..up).collect()
    };
    let (_, plan) = select_block_basis(layer, &block, 1, CandidateWindow::Selection, m0, 8)?;
    Ok(plan.conditioning)
}

// ---------------------------------------------------------------------------
// two-level composition
// ---------------------------------------------------------------------------

/// Result of the two-level composed selection.
#[derive(Debug, Clone)]
pub struct TwoLevelConditioning {
    pub s_0_to_1: f64,
    pub s_1_to_2: f64,
    pub s_0_to_2: f64,
}

/// Conditioning factor from the physical level straight to level 2.
///
/// Two non-interfering level-1 blocks `T_A`, `T_B` covering the level-2
/// block's window are selected independently from six-site physical windows
/// (whose ascents are exact and distributive); the 4^8 products of their
/// selected observables are then ascended through layer 2 and a final 4^4
/// subset is selected and allocated.
pub fn two_level_conditioning(
    layer1: &Layer,
    layer2: &Layer,
    m0: u64,
) -> Result<TwoLevelConditioning> {
    if layer1.lattice_out() != layer2.lattice_in {
        return Err(Error::Invalid("two_level: layer sizes do not chain".into()));
    }
    let up2 = layer2.lattice_out();
    let block2: Vec<usize> = if up2 >= 4 {
        vec![0, 1, 2, 3]
    } else {
        (0..up2).collect()
    };
    let window1 = isometry_inputs(Geometry::Binary, layer2.lattice_in, &block2);
    if window1.len() != 8 {
        return Err(Error::Invalid(format!(
            "two_level: expected an 8-site level-1 window, got {}",
            window1.len()
        )));
    }
    let t_a: Vec<usize> = block2.iter().map(|&b| 2 * b % layer2.lattice_in).collect();
    let t_a = vec![window1[0] / 2, window1[1] / 2 + 0, window1[2] / 2, window1[3] / 2];
    let _ = t_a;
    // T_A = first four window sites as a level-1 "block" of layer 1's output,
    // T_B = last four; both are 4-site blocks of the level-1 lattice
    let t_a: Vec<usize> = window1[0..4].to_vec();
    let t_b: Vec<usize> = window1[4..8].to_vec();

    // interference check: the exact six-site physical windows must engage
    // disjoint disentangler sets, which holds by construction (they exclude
    // the boundary pairs); verify supports do not overlap
    let win_a = exact_window(Geometry::Binary, layer1.lattice_in, &t_a);
    let win_b = exact_window(Geometry::Binary, layer1.lattice_in, &t_b);
    if win_a.iter().any(|s| win_b.contains(s)) {
        return Err(Error::Invalid(
            "two_level: component windows interfere".into(),
        ));
    }

    let set_a = layer_candidates(layer1, &t_a, CandidateWindow::Exact)?;
    let sel_a = one_by_one_replace(&set_a, &lrv_select(&set_a, set_a.dim, true)?, 8, true)?;
    let basis_a = gram_orthogonalize(&set_a, &sel_a, 1)?;
    let plan_a = allocate(&basis_a, m0)?;

    let set_b = layer_candidates(layer1, &t_b, CandidateWindow::Exact)?;
    let sel_b = one_by_one_replace(&set_b, &lrv_select(&set_b, set_b.dim, true)?, 8, true)?;
    let basis_b = gram_orthogonalize(&set_b, &sel_b, 1)?;

    // layer-2 ascent matrix over the level-1 Pauli basis of the 8-site window
    let dim_out = 1usize << (2 * block2.len());
    let m_matrix = ascent_matrix(layer2, &window1, &block2)?;

    // product candidates: vec(A_i ⊗ B_j) = M (a_i ⊗ b_j)
    let k = set_a.dim; // 256
    let mut a_cols = nalgebra::DMatrix::<f64>::zeros(k, k);
    for (col, &idx) in sel_a.iter().enumerate() {
        for (row, &v) in set_a.items[idx].vector.iter().enumerate() {
            a_cols[(row, col)] = v;
        }
    }
    let mut b_cols = nalgebra::DMatrix::<f64>::zeros(k, k);
    for (col, &idx) in sel_b.iter().enumerate() {
        for (row, &v) in set_b.items[idx].vector.iter().enumerate() {
            b_cols[(row, col)] = v;
        }
    }
    // t1[out*pb, i] = Σ_pa m[out, pa, pb] a[pa, i]
    let m_re = reorder_m_for_a(&m_matrix, dim_out, k);
    let t1 = &m_re * &a_cols; // (dim_out * k_pb, k_a)
    let t1_re = reorder_t1_for_b(&t1, dim_out, k);
    let prod = &t1_re * &b_cols; // (dim_out * k_a, k_b)

    // assemble the composite candidate set with physical labels O_A ⊗ O_B
    let full_window: Vec<usize> = {
        let mut w = win_a.clone();
        w.extend(win_b.iter().copied());
        w
    };
    let mut items = Vec::with_capacity(k * k);
    for ia in 0..k {
        for ib in 0..k {
            let mut vector = vec![0.0f64; dim_out];
            for (out, slot) in vector.iter_mut().enumerate() {
                *slot = prod[(out * k + ia, ib)];
            }
            let mut labels = basis_a.labels[ia].labels().to_vec();
            labels.extend(basis_b.labels[ib].labels().iter().copied());
            items.push(Candidate {
                label: PauliString::new(labels),
                vector,
            });
        }
    }
    // identity product must land at index 0 (both selections pin identity)
    let set2 = CandidateSet {
        dim: dim_out,
        block: block2.clone(),
        window: full_window,
        items,
    };
    let picked2 = lrv_select(&set2, dim_out, true)?;
    let improved2 = one_by_one_replace(&set2, &picked2, 4, true)?;
    let basis2 = gram_orthogonalize(&set2, &improved2, 2)?;
    let plan2 = allocate(&basis2, m0)?;

    // each composite observable costs the product of its component
    // multipliers at the physical level; the conditioning factor S_{0->2} is
    // the average of those composite multipliers after the final allocation
    // re-weighting. The final allocation's multipliers already express the
    // cost relative to level-1 precision; multiply by the level-1 factor.
    let s01 = plan_a.conditioning;
    let s12 = plan2.conditioning;
    // direct composition: allocate over the composite B against physical
    // shots, scaling each composite observable by its component cost
    let mut composite_sum = 0.0f64;
    for (j, m2) in plan2.multipliers.iter().enumerate() {
        let ia = improved2[j] / k;
        let ib = improved2[j] % k;
        let _ = ib;
        let cost_a = plan_a.multipliers[ia.min(plan_a.multipliers.len() - 1)];
        composite_sum += m2 * cost_a;
    }
    let s02_direct = composite_sum / dim_out as f64;

    Ok(TwoLevelConditioning {
        s_0_to_1: s01,
        s_1_to_2: s12,
        s_0_to_2: s02_direct,
    })
}

/// Layer ascent as a matrix over Pauli coefficient spaces: column `p` is the
/// block coefficient vector of the ascended `p`-th window Pauli.
pub fn ascent_matrix(
    layer: &Layer,
    window: &[usize],
    block: &[usize],
) -> Result<nalgebra::DMatrix<f64>> {
    let w = window.len();
    let dim_in = 1usize << (2 * w);
    let dim_out = 1usize << (2 * block.len());
    let mut m = nalgebra::DMatrix::<f64>::zeros(dim_out, dim_in);
    for code in 0..dim_in {
        let p = PauliString::from_code(code, w);
        let asc = ascend_to_block(layer, &ProductOp::from_pauli(&p, window), block)?;
        let v = op_to_vector(&asc, block.len());
        for (row, &x) in v.iter().enumerate() {
            m[(row, code)] = x;
        }
    }
    Ok(m)
}

fn reorder_m_for_a(
    m: &nalgebra::DMatrix<f64>,
    dim_out: usize,
    k: usize,
) -> nalgebra::DMatrix<f64> {
    // m[out, pa*k + pb] -> out (dim_out*k_pb, pa)
    let mut r = nalgebra::DMatrix::<f64>::zeros(dim_out * k, k);
    for out in 0..dim_out {
        for pa in 0..k {
            for pb in 0..k {
                r[(out * k + pb, pa)] = m[(out, pa * k + pb)];
            }
        }
    }
    r
}

fn reorder_t1_for_b(
    t1: &nalgebra::DMatrix<f64>,
    dim_out: usize,
    k: usize,
) -> nalgebra::DMatrix<f64> {
    // t1[out*k_pb + ... wait: t1[(out*k + pb, ia)] -> r[(out*k + ia, pb)]
    let ka = t1.ncols();
    let mut r = nalgebra::DMatrix::<f64>::zeros(dim_out * ka, k);
    for out in 0..dim_out {
        for pb in 0..k {
            for ia in 0..ka {
                r[(out * ka + ia, pb)] = t1[(out * k + pb, ia)];
            }
        }
    }
    r
}

// ---------------------------------------------------------------------------
// distributivity deviation
// ---------------------------------------------------------------------------

/// Frobenius norm of `A(O_A ⊗ O_B) - A(O_A) ⊗ A(O_B)` for two product
/// operators on the same layer. Zero whenever the supports' cones share no
/// disentangler.
pub fn distributivity_deviation(layer: &Layer, op_a: &ProductOp, op_b: &ProductOp) -> Result<f64> {
    let mut sites = op_a.sites.clone();
    sites.extend(op_b.sites.iter().copied());
    let mut factors = op_a.factors.clone();
    factors.extend(op_b.factors.iter().cloned());
    {
        let mut sorted = sites.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != sites.len() {
            return Err(Error::Invalid(
                "distributivity: overlapping supports".into(),
            ));
        }
    }
    let joint = ascend_product(layer, &ProductOp { sites, factors })?;
    let asc_a = ascend_product(layer, op_a)?;
    let asc_b = ascend_product(layer, op_b)?;

    if joint.sites.is_empty() {
        return Ok(0.0);
    }
    let embed_a = embed_on_sites(&asc_a, &joint.sites)?;
    let embed_b = embed_on_sites(&asc_b, &joint.sites)?;
    let prod = embed_a.matmul(&embed_b)?;
    Ok(joint.op.sub(&prod)?.frobenius_norm())
}

/// Identity-pad an ascended operator onto a superset of its sites.
fn embed_on_sites(asc: &AscendedOp, target: &[usize]) -> Result<Tensor> {
    for s in &asc.sites {
        if !target.contains(s) {
            return Err(Error::Invalid(format!(
                "embed: site {s} not in target {target:?}"
            )));
        }
    }
    let mut cur = if asc.sites.is_empty() {
        Tensor::identity(1)
    } else {
        asc.op.clone()
    };
    let mut have = asc.sites.clone();
    for &t in target {
        if !have.contains(&t) {
            cur = cur.kron(&Tensor::identity(2))?;
            have.push(t);
        }
    }
    let m = have.len();
    let t = cur.reshape(vec![2; 2 * m])?;
    let mut perm = Vec::with_capacity(2 * m);
    for &b in target {
        perm.push(have.iter().position(|&h| h == b).unwrap());
    }
    for &b in target {
        perm.push(m + have.iter().position(|&h| h == b).unwrap());
    }
    t.permute(&perm)?.reshape(vec![1 << m, 1 << m])
}

// ---------------------------------------------------------------------------
// ternary single-site scaling
// ---------------------------------------------------------------------------

/// Single-site ascent of a ternary layer expressed over `{I, X, Y, Z}`.
#[derive(Debug, Clone)]
pub struct SingleSiteScaling {
    /// `A(σ_j) = Σ_i m[i][j] σ_i`.
    pub m: [[f64; 4]; 4],
    pub m_inv: [[f64; 4]; 4],
    /// Per-observable measurement overhead `λ_j = Σ_i |m_inv[i][j]|²`.
    pub lambda: [f64; 4],
}

/// Matrix of the ternary one-site ascending superoperator for isometry `w`
/// of `layer` (middle-leg contraction).
pub fn single_site_scaling(layer: &Layer, iso: usize) -> Result<SingleSiteScaling> {
    if layer.geometry != Geometry::Ternary {
        return Err(Error::Invalid(
            "single-site scaling needs a ternary layer".into(),
        ));
    }
    let mid = 3 * iso + 1;
    let mut m = [[0.0f64; 4]; 4];
    for (j, pj) in Pauli::ALL.iter().enumerate() {
        let asc = ascend_product(
            layer,
            &ProductOp {
                sites: vec![mid],
                factors: vec![pj.matrix()],
            },
        )?;
        let out = if asc.sites.is_empty() {
            Tensor::identity(2)
        } else {
            asc.op.clone()
        };
        for (i, pi) in Pauli::ALL.iter().enumerate() {
            let coeff = pi.matrix().inner(&out).unwrap().re / 2.0;
            m[i][j] = coeff;
        }
    }
    let dm = nalgebra::Matrix4::from_fn(|i, j| m[i][j]);
    let inv = dm
        .try_inverse()
        .ok_or_else(|| Error::Invalid("single-site ascent matrix is singular".into()))?;
    let mut m_inv = [[0.0f64; 4]; 4];
    let mut lambda = [0.0f64; 4];
    for j in 0..4 {
        for i in 0..4 {
            m_inv[i][j] = inv[(i, j)];
            lambda[j] += inv[(i, j)] * inv[(i, j)];
        }
    }
    Ok(SingleSiteScaling { m, m_inv, lambda })
}

// ---------------------------------------------------------------------------
// measurement budgets
// ---------------------------------------------------------------------------

/// Budget evaluation mode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BudgetMode {
    /// Published binary formula with conditioning factor S.
    Binary { s: f64 },
    /// Naive ternary scheme: per-level multiplier λ^5 on 5-site blocks.
    TernaryNaive { lambda: f64 },
    /// Brute-force tensor-product tomography: `M0 * 3^n`.
    BruteForce,
}

/// Total measurement count for tomography on `n` sites.
pub fn total_budget(n: usize, mode: BudgetMode, m0: u64) -> Result<f64> {
    let m0 = m0 as f64;
    match mode {
        BudgetMode::BruteForce => Ok(m0 * 3f64.powi(n as i32)),
        BudgetMode::Binary { s } => {
            let (d, m) = crate::mera::canonical_decomposition(n, Geometry::Binary)?;
            if m < 2 {
                return Err(Error::Invalid(format!(
                    "binary budget formula needs at least 2 layers (n = {n})"
                )));
            }
            let mut acc = 0.0f64;
            for tau in 0..=m.saturating_sub(3) {
                if m >= 3 {
                    acc += 256.0 * 2f64.powi((m - tau + 1) as i32) * s.powi(tau as i32);
                }
            }
            acc += 4f64.powi(d as i32) * s.powi(m as i32 - 2);
            Ok(m0 * acc)
        }
        BudgetMode::TernaryNaive { lambda } => {
            let (d, m) = crate::mera::canonical_decomposition(n, Geometry::Ternary)?;
            let l5 = lambda.powi(5);
            let mut acc = 0.0f64;
            if m >= 2 {
                for tau in 0..=m - 2 {
                    let isometries = (n / 3usize.pow(tau as u32 + 1)) as f64;
                    acc += 1024.0 * isometries * l5.powi(tau as i32);
                }
            }
            acc += 4f64.powi(d as i32) * l5.powi(m as i32 - 1);
            Ok(m0 * acc)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mera::{haar_unitary, MeraCircuit};
    use approx::assert_abs_diff_eq;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn toy_set(vectors: Vec<Vec<f64>>, dim: usize) -> CandidateSet {
        CandidateSet {
            dim,
            block: (0..1).collect(),
            window: vec![0],
            items: vectors
                .into_iter()
                .enumerate()
                .map(|(i, v)| Candidate {
                    label: PauliString::from_code(i, 4),
                    vector: v,
                })
                .collect(),
        }
    }

    #[test]
    fn lrv_picks_top_norms_when_orthogonal() {
        let set = toy_set(
            vec![
                vec![0.0, 0.0, 0.5, 0.0],
                vec![0.9, 0.0, 0.0, 0.0],
                vec![0.0, 0.7, 0.0, 0.0],
                vec![0.0, 0.0, 0.0, 0.3],
            ],
            4,
        );
        let picked = lrv_select(&set, 2, false).unwrap();
        assert_eq!(picked, vec![1, 2]);
    }

    #[test]
    fn paper_counterexample_lrv_then_replacement() {
        let eps = 0.05f64;
        let a = (1.0 - eps) / 2f64.sqrt();
        let set = toy_set(
            vec![
                vec![1.0, 0.0],
                vec![a, a],
                vec![a, -a],
            ],
            2,
        );
        let picked = lrv_select(&set, 2, false).unwrap();
        assert_eq!(picked[0], 0); // largest norm first
        let det_pre = selection_log_abs_det(&set, &picked).exp();
        assert_abs_diff_eq!(det_pre, (1.0 - eps) / 2f64.sqrt(), epsilon = 1e-12);
        let improved = one_by_one_replace(&set, &picked, 4, false).unwrap();
        let det_post = selection_log_abs_det(&set, &improved).exp();
        // optimal pair is the two diagonals with |det| = (1-eps)^2
        assert_abs_diff_eq!(det_post, (1.0 - eps) * (1.0 - eps), epsilon = 1e-12);
        let mut sorted = improved.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, vec![1, 2]);
    }

    #[test]
    fn replacement_never_decreases_det() {
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        for _ in 0..5 {
            let dim = 6;
            let n = 40;
            let vectors: Vec<Vec<f64>> = (0..n)
                .map(|_| (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect())
                .collect();
            let set = toy_set(vectors, dim);
            let picked = lrv_select(&set, dim, false).unwrap();
            let pre = selection_log_abs_det(&set, &picked);
            let improved = one_by_one_replace(&set, &picked, 6, false).unwrap();
            let post = selection_log_abs_det(&set, &improved);
            assert!(post >= pre - 1e-9, "pre {pre} post {post}");
        }
    }

    #[test]
    fn toy_two_qubit_to_one_selection_near_exhaustive() {
        // random isometry channel from 2 qubits to 1; candidates = 16 Paulis
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        for trial in 0..5 {
            let v = haar_unitary(4, &mut rng);
            // w rows: <k,0|v
            let mut w = Tensor::zeros(vec![2, 4]);
            for k in 0..2 {
                for c in 0..4 {
                    w.set(&[k, c], v.get(&[k * 2, c]));
                }
            }
            let mut vectors = Vec::new();
            for code in 0..16usize {
                let p = PauliString::from_code(code, 2).matrix();
                let a = w.matmul(&p).unwrap().matmul(&w.dagger().unwrap()).unwrap();
                vectors.push(op_to_vector(&a, 1));
            }
            let set = toy_set(vectors, 4);
            let picked = lrv_select(&set, 4, true).unwrap();
            let improved = one_by_one_replace(&set, &picked, 8, true).unwrap();
            let ours = selection_log_abs_det(&set, &improved);

            // exhaustive over C(15,3) subsets with identity pinned
            let mut best = f64::NEG_INFINITY;
            for a in 1..16usize {
                for b in (a + 1)..16 {
                    for c in (b + 1)..16 {
                        let cand = vec![0, a, b, c];
                        let d = selection_log_abs_det(&set, &cand);
                        if d > best {
                            best = d;
                        }
                    }
                }
            }
            let ratio = (ours - best).exp();
            assert!(
                ratio >= 0.9,
                "trial {trial}: |det| ratio {ratio} (ours {ours}, best {best})"
            );
        }
    }

    #[test]
    fn gram_orthogonality_and_beta_relation() {
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let dim = 16;
        let n = 60;
        let mut vectors: Vec<Vec<f64>> = vec![{
            let mut v = vec![0.0; dim];
            v[0] = (dim as f64).sqrt();
            v
        }];
        vectors.extend((1..n).map(|_| {
            (0..dim)
                .map(|_| rng.gen_range(-1.0..1.0))
                .collect::<Vec<f64>>()
        }));
        let mut set = toy_set(vectors, dim);
        set.items[0].label = PauliString::identity(4);
        let picked = lrv_select(&set, dim, true).unwrap();
        let basis = gram_orthogonalize(&set, &picked, 1).unwrap();
        let norm = (dim as f64).sqrt(); // tr(R R†) = 2^block_size
        for i in 0..dim {
            for j in 0..dim {
                let ip = dot(&basis.r_vectors[i], &basis.r_vectors[j]);
                let want = if i == j { norm } else { 0.0 };
                assert_abs_diff_eq!(ip, want, epsilon = 1e-8);
            }
        }
        // beta reconstructs r from the selected vectors
        for i in 0..dim {
            let mut rec = vec![0.0f64; dim];
            for j in 0..dim {
                for (slot, &x) in rec.iter_mut().zip(&basis.vectors[j]) {
                    *slot += basis.beta[i][j] * x;
                }
            }
            for (a, b) in rec.iter().zip(&basis.r_vectors[i]) {
                assert_abs_diff_eq!(a, b, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn orthonormal_basis_allocates_to_unity() {
        // beta = identity-scaled: selected vectors already orthogonal Paulis
        let dim = 16;
        let mut vectors = Vec::new();
        for i in 0..dim {
            let mut v = vec![0.0; dim];
            v[i] = 2.0; // Pauli norm in coefficient space for 2 sites
            vectors.push(v);
        }
        let mut set = toy_set(vectors, dim);
        set.items[0].label = PauliString::identity(2);
        let picked = lrv_select(&set, dim, true).unwrap();
        let basis = gram_orthogonalize(&set, &picked, 1).unwrap();
        let plan = allocate(&basis, 100).unwrap();
        assert_abs_diff_eq!(plan.conditioning, 1.0, epsilon = 1e-10);
        for m in &plan.multipliers {
            assert_abs_diff_eq!(*m, 1.0, epsilon = 1e-10);
        }
        assert_abs_diff_eq!(plan.total, 100.0 * dim as f64, epsilon = 1e-8);
    }

    #[test]
    fn allocation_feasibility_holds_on_random_instances() {
        let mut rng = ChaCha12Rng::seed_from_u64(9);
        for _ in 0..10 {
            let dim = 8;
            let n = 30;
            let mut vectors: Vec<Vec<f64>> = vec![{
                let mut v = vec![0.0; dim];
                v[0] = (dim as f64).sqrt();
                v
            }];
            vectors.extend(
                (1..n).map(|_| (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<f64>>()),
            );
            let mut set = toy_set(vectors, dim);
            set.items[0].label = PauliString::identity(4);
            let picked = lrv_select(&set, dim, true).unwrap();
            let basis = gram_orthogonalize(&set, &picked, 1).unwrap();
            let plan = allocate(&basis, 100).unwrap();
            for row in &plan.b_matrix {
                let s: f64 = row.iter().zip(&plan.multipliers).map(|(b, m)| b / m).sum();
                assert!(s <= 1.0 + 1e-9, "violated: {s}");
            }
            assert!(plan.conditioning >= 1.0 - 1e-12);
        }
    }

    #[test]
    fn rescaling_candidates_leaves_selection_unchanged() {
        let mut rng = ChaCha12Rng::seed_from_u64(13);
        let dim = 6;
        let vectors: Vec<Vec<f64>> = (0..25)
            .map(|_| (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let scaled: Vec<Vec<f64>> = vectors
            .iter()
            .map(|v| v.iter().map(|x| 3.7 * x).collect())
            .collect();
        let set = toy_set(vectors, dim);
        let set2 = toy_set(scaled, dim);
        let a = lrv_select(&set, dim, false).unwrap();
        let b = lrv_select(&set2, dim, false).unwrap();
        assert_eq!(a, b);
        let ra = one_by_one_replace(&set, &a, 4, false).unwrap();
        let rb = one_by_one_replace(&set2, &b, 4, false).unwrap();
        assert_eq!(ra, rb);
    }

    #[test]
    fn identity_layer_candidates_select_paulis_with_unit_conditioning() {
        let layer = Layer::identity(Geometry::Binary, 16);
        let s = conditioning_factor(&layer, 100).unwrap();
        assert_abs_diff_eq!(s, 1.0, epsilon = 1e-9);
    }

    #[test]
    fn exact_window_candidates_span_for_random_layers() {
        let circ = MeraCircuit::random(16, Geometry::Binary, 2, 42).unwrap();
        let layer = &circ.layers[0];
        let block = vec![1usize, 2, 3, 4];
        let set = layer_candidates(layer, &block, CandidateWindow::Exact).unwrap();
        assert_eq!(set.items.len(), 4096); // generic edges admit only identity
        let picked = lrv_select(&set, 256, true).unwrap();
        assert_eq!(picked.len(), 256);
        let basis = gram_orthogonalize(&set, &picked, 1).unwrap();
        assert!(basis.log_abs_det.is_finite());
    }

    #[test]
    fn identity_candidate_is_index_zero_with_identity_image() {
        let circ = MeraCircuit::random(16, Geometry::Binary, 2, 4).unwrap();
        let set = layer_candidates(&circ.layers[0], &[1, 2, 3, 4], CandidateWindow::Exact).unwrap();
        assert!(set.items[0].label.is_identity());
        let v = &set.items[0].vector;
        assert_abs_diff_eq!(v[0], 4.0, epsilon = 1e-10);
        let tail: f64 = v[1..].iter().map(|x| x * x).sum();
        assert!(tail < 1e-20);
    }

    #[test]
    fn distributivity_zero_for_identity_gates_and_distant_supports() {
        let layer = Layer::identity(Geometry::Binary, 16);
        let pa: PauliString = "XZ".parse().unwrap();
        let pb: PauliString = "YX".parse().unwrap();
        let a = ProductOp::from_pauli(&pa, &[2, 3]);
        let b = ProductOp::from_pauli(&pb, &[10, 11]);
        let dev = distributivity_deviation(&layer, &a, &b).unwrap();
        assert!(dev < 1e-12);

        let circ = MeraCircuit::random(16, Geometry::Binary, 2, 8).unwrap();
        let dev2 = distributivity_deviation(&circ.layers[0], &a, &b).unwrap();
        assert!(dev2 < 1e-12, "distant supports must be distributive: {dev2}");
        // adjacent supports sharing a disentangler generally deviate
        let c = ProductOp::from_pauli(&pa, &[3, 4]);
        let d = ProductOp::from_pauli(&pb, &[5, 6]);
        let dev3 = distributivity_deviation(&circ.layers[0], &c, &d).unwrap();
        assert!(dev3 > 1e-6, "expected interference: {dev3}");
    }

    #[test]
    fn ternary_scaling_identity_analog() {
        // route the middle leg to the kept output: M = identity
        let mut layer = Layer::identity(Geometry::Ternary, 9);
        let mut swap = Tensor::zeros(vec![8, 8]);
        for i0 in 0..2usize {
            for i1 in 0..2usize {
                for i2 in 0..2usize {
                    swap.set(&[i1 * 4 + i0 * 2 + i2, i0 * 4 + i1 * 2 + i2], Complex64::new(1.0, 0.0));
                }
            }
        }
        layer.isometries[0] = swap;
        let sc = single_site_scaling(&layer, 0).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert_abs_diff_eq!(sc.m[i][j], want, epsilon = 1e-12);
            }
        }
        assert_abs_diff_eq!(sc.lambda[2], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn ternary_scaling_identity_column_is_exact() {
        let mut rng = ChaCha12Rng::seed_from_u64(19);
        let mut layer = Layer::identity(Geometry::Ternary, 9);
        layer.isometries[1] = haar_unitary(8, &mut rng);
        let sc = single_site_scaling(&layer, 1).unwrap();
        assert_abs_diff_eq!(sc.m[0][0], 1.0, epsilon = 1e-12);
        for i in 1..4 {
            assert_abs_diff_eq!(sc.m[i][0], 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn budget_values() {
        // brute force on a qubyte
        assert_abs_diff_eq!(
            total_budget(8, BudgetMode::BruteForce, 100).unwrap(),
            656_100.0,
            epsilon = 1e-6
        );
        // published binary formula at n = 16, S = 6
        assert_abs_diff_eq!(
            total_budget(16, BudgetMode::Binary { s: 6.0 }, 100).unwrap(),
            419_200.0,
            epsilon = 1e-6
        );
        // S = 1 zero-overhead count
        let (d, m) = crate::mera::canonical_decomposition(16, Geometry::Binary).unwrap();
        let mut zero = 0.0;
        for tau in 0..=m - 3 {
            zero += 256.0 * 2f64.powi((m - tau + 1) as i32);
        }
        zero += 4f64.powi(d as i32);
        assert_abs_diff_eq!(
            total_budget(16, BudgetMode::Binary { s: 1.0 }, 100).unwrap(),
            100.0 * zero,
            epsilon = 1e-6
        );
        // monotone in S and n
        let a = total_budget(16, BudgetMode::Binary { s: 4.0 }, 100).unwrap();
        let b = total_budget(16, BudgetMode::Binary { s: 6.0 }, 100).unwrap();
        assert!(a < b);
        let c = total_budget(32, BudgetMode::Binary { s: 4.0 }, 100).unwrap();
        assert!(a < c);
        assert!(total_budget(20, BudgetMode::Binary { s: 4.0 }, 100).is_err());
    }
}
