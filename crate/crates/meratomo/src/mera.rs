//! MERA circuit data model, causal cones, circuit application, and ascending
//! superoperators.
//!
//! Gate placement convention (fixed once per geometry, periodic boundaries):
//!
//! Binary, layer acting on a lattice of `L` sites (L even):
//! - disentangler `u_i` acts on sites `(2i+1, 2i+2 mod L)`, `i = 0..L/2`;
//! - isometry `v_i` acts on sites `(2i, 2i+1)` and coarse-grains the pair to
//!   renormalized site `i`; the kept output is the first leg, the second is
//!   projected onto `|0>`.
//!
//! Ternary, lattice of `L` sites (L divisible by 3):
//! - isometry `v_i` acts on `(3i, 3i+1, 3i+2)` -> site `i`, kept leg first,
//!   other two projected onto `|0>`;
//! - disentangler `u_i` acts on the triple boundary `(3i+2, 3i+3 mod L)`.
//!
//! In the renormalization direction a layer applies all disentanglers, then
//! all isometry unitaries, then the ancilla projections. The generative
//! direction runs the inverse.

use crate::error::{Error, Result};
use crate::tensor::{contract, hermitian_eig, Tensor};
use num_complex::Complex64;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Geometry {
    Binary,
    Ternary,
}

impl Geometry {
    /// Sites merged per isometry.
    pub fn branching(self) -> usize {
        match self {
            Geometry::Binary => 2,
            Geometry::Ternary => 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GateKind {
    Disentangler,
    Isometry,
}

/// One quantum gate of the circuit, as data.
///
/// For isometries `unitary` is the full unitary `v`; the rank-χ projector
/// `P = I_χ ⊗ |0..0><0..0|` is implied by the circuit geometry.
#[derive(Debug, Clone)]
pub struct Gate {
    pub kind: GateKind,
    pub unitary: Tensor,
    pub sites: Vec<usize>,
    pub level: usize,
}

/// One renormalization layer.
#[derive(Debug, Clone)]
pub struct Layer {
    /// Number of sites on the finer lattice this layer consumes.
    pub lattice_in: usize,
    pub geometry: Geometry,
    /// `u_i`, each a 4x4 unitary.
    pub disentanglers: Vec<Tensor>,
    /// `v_i`, each a 2^k x 2^k unitary (k = branching).
    pub isometries: Vec<Tensor>,
}

impl Layer {
    pub fn identity(geometry: Geometry, lattice_in: usize) -> Layer {
        let k = geometry.branching();
        let groups = lattice_in / k;
        Layer {
            lattice_in,
            geometry,
            disentanglers: vec![Tensor::identity(4); groups],
            isometries: vec![Tensor::identity(1 << k); groups],
        }
    }

    pub fn lattice_out(&self) -> usize {
        self.lattice_in / self.geometry.branching()
    }

    /// Sites the i-th disentangler acts on.
    pub fn disentangler_sites(&self, i: usize) -> (usize, usize) {
        disentangler_pair(self.geometry, self.lattice_in, i)
    }

    /// Sites the i-th isometry acts on.
    pub fn isometry_sites(&self, i: usize) -> Vec<usize> {
        match self.geometry {
            Geometry::Binary => vec![2 * i, 2 * i + 1],
            Geometry::Ternary => vec![3 * i, 3 * i + 1, 3 * i + 2],
        }
    }

    /// Unitarity deviation of the worst gate.
    pub fn max_unitarity_deviation(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for g in self.disentanglers.iter().chain(&self.isometries) {
            let d = g.shape()[0];
            let dev = g
                .matmul(&g.dagger().unwrap())
                .unwrap()
                .sub(&Tensor::identity(d))
                .unwrap()
                .frobenius_norm();
            worst = worst.max(dev);
        }
        worst
    }
}

/// Layered MERA circuit. `layers[0]` consumes the physical lattice.
#[derive(Debug, Clone)]
pub struct MeraCircuit {
    pub geometry: Geometry,
    pub n: usize,
    pub chi: usize,
    pub layers: Vec<Layer>,
}

/// Canonical (D, m) with `n = D * k^m`, halting when the lattice can no
/// longer be coarse-grained.
pub fn canonical_decomposition(n: usize, geometry: Geometry) -> Result<(usize, usize)> {
    let k = geometry.branching();
    let mut l = n;
    let mut m = 0;
    while l % k == 0 && l / k >= 2 {
        l /= k;
        m += 1;
    }
    if m == 0 || l > 4 {
        let mut valid: Vec<usize> = Vec::new();
        for mm in 1..16u32 {
            for d in 2..=4usize {
                let size = d * k.pow(mm);
                if size >= 4 && size <= 2 * n + 8 {
                    valid.push(size);
                }
            }
        }
        valid.sort_unstable();
        valid.dedup();
        valid.retain(|&s| s + 8 >= n && s <= n + 8);
        return Err(Error::BadLatticeSize { n, k, valid });
    }
    Ok((l, m))
}

/// Haar-distributed unitary of dimension `d` (QR of a Ginibre matrix with the
/// R-diagonal phase fix).
pub fn haar_unitary(d: usize, rng: &mut ChaCha12Rng) -> Tensor {
    let data: Vec<Complex64> = (0..d * d)
        .map(|_| Complex64::new(gaussian(rng), gaussian(rng)))
        .collect();
    let g = Tensor::new(vec![d, d], data).unwrap();
    let qr = g.to_dmatrix().unwrap().qr();
    let (q, r) = (qr.q(), qr.r());
    let mut out = Tensor::zeros(vec![d, d]);
    for j in 0..d {
        let rjj = r[(j, j)];
        let ph = if rjj.norm() > 0.0 {
            rjj / rjj.norm()
        } else {
            Complex64::new(1.0, 0.0)
        };
        for i in 0..d {
            out.data_mut()[i * d + j] = q[(i, j)] * ph;
        }
    }
    out
}

pub(crate) fn gaussian(rng: &mut ChaCha12Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

impl MeraCircuit {
    /// Circuit with every gate the identity.
    pub fn identity(n: usize, geometry: Geometry, chi: usize) -> Result<MeraCircuit> {
        let (_, m) = canonical_decomposition(n, geometry)?;
        let k = geometry.branching();
        let mut layers = Vec::with_capacity(m);
        let mut l = n;
        for _ in 0..m {
            layers.push(Layer::identity(geometry, l));
            l /= k;
        }
        Ok(MeraCircuit {
            geometry,
            n,
            chi,
            layers,
        })
    }

    /// Circuit with every gate Haar-random; deterministic given `seed`.
    pub fn random(n: usize, geometry: Geometry, chi: usize, seed: u64) -> Result<MeraCircuit> {
        if chi != 2 {
            return Err(Error::Invalid(format!(
                "only chi = 2 is supported on qubit lattices, got {chi}"
            )));
        }
        let mut circuit = MeraCircuit::identity(n, geometry, chi)?;
        let k = geometry.branching();
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        for layer in &mut circuit.layers {
            for u in &mut layer.disentanglers {
                *u = haar_unitary(4, &mut rng);
            }
            for v in &mut layer.isometries {
                *v = haar_unitary(1 << k, &mut rng);
            }
        }
        Ok(circuit)
    }

    /// Number of top-level sites D.
    pub fn top_sites(&self) -> usize {
        self.n / self.geometry.branching().pow(self.layers.len() as u32)
    }

    /// Lattice sizes `[n, n/k, ..., D]`.
    pub fn lattice_sizes(&self) -> Vec<usize> {
        let k = self.geometry.branching();
        let mut l = self.n;
        let mut out = vec![l];
        for _ in &self.layers {
            l /= k;
            out.push(l);
        }
        out
    }

    /// Flat gate listing for serialization and validation.
    pub fn gates(&self) -> Vec<Gate> {
        let mut out = Vec::new();
        for (t, layer) in self.layers.iter().enumerate() {
            for (i, u) in layer.disentanglers.iter().enumerate() {
                let (a, b) = layer.disentangler_sites(i);
                out.push(Gate {
                    kind: GateKind::Disentangler,
                    unitary: u.clone(),
                    sites: vec![a, b],
                    level: t + 1,
                });
            }
            for (i, v) in layer.isometries.iter().enumerate() {
                out.push(Gate {
                    kind: GateKind::Isometry,
                    unitary: v.clone(),
                    sites: layer.isometry_sites(i),
                    level: t + 1,
                });
            }
        }
        out
    }
}

/// Apply a k-site gate to a state vector. Site 0 is the most significant bit.
pub fn apply_gate(state: &mut [Complex64], gate: &Tensor, sites: &[usize], n: usize) {
    let k = sites.len();
    let gd = 1usize << k;
    debug_assert_eq!(gate.shape(), [gd, gd]);
    debug_assert_eq!(state.len(), 1usize << n);
    let strides: Vec<usize> = sites.iter().map(|&s| 1usize << (n - 1 - s)).collect();
    let site_mask: usize = strides.iter().sum();
    let full = state.len();
    let mut scratch = vec![Complex64::new(0.0, 0.0); gd];
    let mut base = 0usize;
    while base < full {
        if base & site_mask != 0 {
            base += 1;
            continue;
        }
        for (g, slot) in scratch.iter_mut().enumerate() {
            let mut idx = base;
            for (bit, stride) in strides.iter().enumerate() {
                if (g >> (k - 1 - bit)) & 1 == 1 {
                    idx += stride;
                }
            }
            *slot = state[idx];
        }
        for go in 0..gd {
            let mut acc = Complex64::new(0.0, 0.0);
            for (gi, amp) in scratch.iter().enumerate() {
                acc += gate.data()[go * gd + gi] * amp;
            }
            let mut idx = base;
            for (bit, stride) in strides.iter().enumerate() {
                if (go >> (k - 1 - bit)) & 1 == 1 {
                    idx += stride;
                }
            }
            state[idx] = acc;
        }
        base += 1;
    }
}

/// Run one layer in the renormalization direction on a pure state and project
/// the ancilla legs onto `|0>`. Returns the coarse state (unnormalized; its
/// squared norm is the retained probability weight).
pub fn renormalize_layer(layer: &Layer, state: &[Complex64]) -> Vec<Complex64> {
    let l = layer.lattice_in;
    debug_assert_eq!(state.len(), 1usize << l);
    let mut psi = state.to_vec();
    for (i, u) in layer.disentanglers.iter().enumerate() {
        let (a, b) = layer.disentangler_sites(i);
        apply_gate(&mut psi, u, &[a, b], l);
    }
    for (i, v) in layer.isometries.iter().enumerate() {
        apply_gate(&mut psi, v, &layer.isometry_sites(i), l);
    }
    let k = layer.geometry.branching();
    let m = l / k;
    let mut out = vec![Complex64::new(0.0, 0.0); 1usize << m];
    for (coarse, slot) in out.iter_mut().enumerate() {
        let mut fine = 0usize;
        for site in 0..m {
            if (coarse >> (m - 1 - site)) & 1 == 1 {
                fine |= 1usize << (l - 1 - k * site);
            }
        }
        *slot = psi[fine];
    }
    out
}

/// Run one layer in the generative direction: embed ancillas, apply `v†` then
/// `u†`.
pub fn generate_layer(layer: &Layer, coarse: &[Complex64]) -> Vec<Complex64> {
    let l = layer.lattice_in;
    let k = layer.geometry.branching();
    let m = l / k;
    debug_assert_eq!(coarse.len(), 1usize << m);
    let mut psi = vec![Complex64::new(0.0, 0.0); 1usize << l];
    for (c, &amp) in coarse.iter().enumerate() {
        let mut fine = 0usize;
        for site in 0..m {
            if (c >> (m - 1 - site)) & 1 == 1 {
                fine |= 1usize << (l - 1 - k * site);
            }
        }
        psi[fine] = amp;
    }
    for (i, v) in layer.isometries.iter().enumerate() {
        let vd = v.dagger().unwrap();
        apply_gate(&mut psi, &vd, &layer.isometry_sites(i), l);
    }
    for (i, u) in layer.disentanglers.iter().enumerate() {
        let ud = u.dagger().unwrap();
        let (a, b) = layer.disentangler_sites(i);
        apply_gate(&mut psi, &ud, &[a, b], l);
    }
    psi
}

/// Run the circuit in the generative direction from a top-block state.
pub fn evaluate_state(circuit: &MeraCircuit, top: &Tensor) -> Result<Tensor> {
    let d = circuit.top_sites();
    if top.rank() != 1 || top.len() != 1usize << d {
        return Err(Error::DimMismatch(format!(
            "top state has dim {}, circuit expects {}",
            top.len(),
            1usize << d
        )));
    }
    let mut psi = top.data().to_vec();
    for layer in circuit.layers.iter().rev() {
        psi = generate_layer(layer, &psi);
    }
    Tensor::new(vec![1usize << circuit.n], psi)
}

/// Renormalize a physical state through the first `levels` layers, projecting
/// ancillas at each step. Returns the (unnormalized) coarse state.
pub fn renormalize_state(circuit: &MeraCircuit, psi: &Tensor, levels: usize) -> Result<Tensor> {
    if psi.rank() != 1 || psi.len() != 1usize << circuit.n {
        return Err(Error::DimMismatch("physical state dimension".into()));
    }
    let mut v = psi.data().to_vec();
    for layer in circuit.layers.iter().take(levels) {
        v = renormalize_layer(layer, &v);
    }
    let d = v.len();
    Tensor::new(vec![d], v)
}

// ---------------------------------------------------------------------------
// causal cones and candidate windows
// ---------------------------------------------------------------------------

/// Sites of the finer lattice feeding the isometries of `block` (upper-level
/// sites, mod arithmetic applied). For a binary 4-site block this is the
/// 8-site candidate window.
pub fn isometry_inputs(geometry: Geometry, lattice_low: usize, block: &[usize]) -> Vec<usize> {
    let k = geometry.branching();
    let upper = lattice_low / k;
    let mut out = Vec::new();
    for &b in block {
        let j = b % upper;
        for t in 0..k {
            out.push((k * j + t) % lattice_low);
        }
    }
    sort_ring(&mut out, lattice_low);
    out
}

/// Past causal cone of `block` one level down: isometry inputs plus every
/// site reachable through a disentangler touching them. For a binary 4-site
/// block this is 10 sites; for a ternary 5-site block, 17.
pub fn cone_one_level(geometry: Geometry, lattice_low: usize, block: &[usize]) -> Vec<usize> {
    let win = isometry_inputs(geometry, lattice_low, block);
    let k = geometry.branching();
    let groups = lattice_low / k;
    let mut set: Vec<usize> = win.clone();
    for i in 0..groups {
        let (a, b) = disentangler_pair(geometry, lattice_low, i);
        if win.contains(&a) || win.contains(&b) {
            set.push(a);
            set.push(b);
        }
    }
    sort_ring(&mut set, lattice_low);
    set
}

/// Sites whose one-layer ascent is guaranteed to stay inside `block`: the
/// union of disentangler pairs lying entirely within the isometry inputs
/// (plus, for ternary, the untouched middle site of each triple). For a
/// binary 4-site block away from wrap-around this is the 6 interior sites;
/// when the cone wraps the whole lattice it is every site.
pub fn exact_window(geometry: Geometry, lattice_low: usize, block: &[usize]) -> Vec<usize> {
    let win = isometry_inputs(geometry, lattice_low, block);
    let k = geometry.branching();
    let groups = lattice_low / k;
    let mut set = Vec::new();
    for i in 0..groups {
        let (a, b) = disentangler_pair(geometry, lattice_low, i);
        if win.contains(&a) && win.contains(&b) {
            set.push(a);
            set.push(b);
        }
    }
    if geometry == Geometry::Ternary {
        for &w in &win {
            if w % 3 == 1 {
                set.push(w);
            }
        }
    }
    sort_ring(&mut set, lattice_low);
    set
}

fn disentangler_pair(geometry: Geometry, lattice: usize, i: usize) -> (usize, usize) {
    match geometry {
        Geometry::Binary => ((2 * i + 1) % lattice, (2 * i + 2) % lattice),
        Geometry::Ternary => ((3 * i + 2) % lattice, (3 * i + 3) % lattice),
    }
}

/// Past causal cone of a block at `level` expressed in physical sites.
pub fn causal_cone(
    geometry: Geometry,
    n: usize,
    level: usize,
    block: &[usize],
) -> Result<Vec<usize>> {
    let k = geometry.branching();
    let mut sizes = vec![n];
    let mut l = n;
    for _ in 0..level {
        if l % k != 0 {
            return Err(Error::Invalid(format!(
                "lattice size {l} not divisible by {k} below level {level}"
            )));
        }
        l /= k;
        sizes.push(l);
    }
    let mut cur: Vec<usize> = block.to_vec();
    for lev in (0..level).rev() {
        cur = cone_one_level(geometry, sizes[lev], &cur);
    }
    Ok(cur)
}

/// Order ring sites so that a (possibly wrapping) contiguous arc is listed in
/// arc order; the full ring stays plainly sorted.
pub(crate) fn sort_ring(sites: &mut Vec<usize>, lattice: usize) {
    sites.sort_unstable();
    sites.dedup();
    if sites.len() >= lattice {
        return;
    }
    let m = sites.len();
    if m <= 1 {
        return;
    }
    let mut gap_at = 0;
    let mut gap_len = 0;
    for i in 0..m {
        let a = sites[i];
        let b = sites[(i + 1) % m];
        let g = (b + lattice - a) % lattice;
        if g > gap_len {
            gap_len = g;
            gap_at = (i + 1) % m;
        }
    }
    sites.rotate_left(gap_at);
}

// ---------------------------------------------------------------------------
// ascending superoperator
// ---------------------------------------------------------------------------

/// A product operator: one 2x2 factor per listed site, identity elsewhere.
#[derive(Debug, Clone)]
pub struct ProductOp {
    pub sites: Vec<usize>,
    pub factors: Vec<Tensor>,
}

impl ProductOp {
    pub fn from_pauli(p: &crate::pauli::PauliString, sites: &[usize]) -> ProductOp {
        ProductOp {
            sites: sites.to_vec(),
            factors: p.labels().iter().map(|l| l.matrix()).collect(),
        }
    }

    fn factor_at(&self, site: usize) -> Tensor {
        match self.sites.iter().position(|&s| s == site) {
            Some(k) => self.factors[k].clone(),
            None => Tensor::identity(2),
        }
    }

    fn support(&self) -> Vec<usize> {
        let id = Tensor::identity(2);
        self.sites
            .iter()
            .zip(&self.factors)
            .filter(|(_, f)| f.sub(&id).unwrap().frobenius_norm() > 1e-14)
            .map(|(s, _)| *s)
            .collect()
    }
}

/// Result of ascending an operator through one layer.
#[derive(Debug, Clone)]
pub struct AscendedOp {
    /// Upper-lattice sites carrying the output, in ring order.
    pub sites: Vec<usize>,
    /// Dense operator over those sites.
    pub op: Tensor,
}

/// Exact one-layer ascent of a product operator.
///
/// Contracts the minimal causal-cone network `P·U·op·U†·P†`: only gates
/// reachable from the operator's support participate; every other gate
/// cancels. The output support is the full set of renormalized sites
/// receiving non-cancelling legs, so for exact (zero-truncation) states
/// expectation values are preserved through the ascent. Identity ascends to
/// identity, and the map is linear and Hermiticity-preserving.
pub fn ascend_product(layer: &Layer, op: &ProductOp) -> Result<AscendedOp> {
    match layer.geometry {
        Geometry::Binary => ascend_product_binary(layer, op),
        Geometry::Ternary => ascend_product_ternary(layer, op),
    }
}

fn ascend_product_binary(layer: &Layer, op: &ProductOp) -> Result<AscendedOp> {
    let l = layer.lattice_in;
    let groups = l / 2;
    let support = op.support();
    if support.is_empty() {
        return Ok(AscendedOp {
            sites: vec![],
            op: Tensor::identity(1),
        });
    }
    for &s in &support {
        if s >= l {
            return Err(Error::LegOutOfRange { index: s, rank: l });
        }
    }

    // spread: union of complete disentangler pairs touching the support;
    // site s belongs to the pair of u_{(s-1)/2 mod groups}
    let mut touched_u = vec![false; groups];
    for &s in &support {
        touched_u[((s + l - 1) % l) / 2] = true;
    }
    let mut in_spread = vec![false; l];
    for (i, &t) in touched_u.iter().enumerate() {
        if t {
            let (a, b) = layer.disentangler_sites(i);
            in_spread[a] = true;
            in_spread[b] = true;
        }
    }

    // engaged isometries: input pair intersects the spread
    let engaged_mask: Vec<bool> = (0..groups)
        .map(|w| layer.isometry_sites(w).iter().any(|&s| in_spread[s]))
        .collect();
    let full_ring = engaged_mask.iter().all(|&e| e);

    // split engaged isometries into maximal consecutive arcs on the ring;
    // unengaged isometries between arcs see only identity factors, so the
    // ascent factorizes across arcs
    let arcs: Vec<Vec<usize>> = if full_ring {
        vec![(0..groups).collect()]
    } else {
        let mut arcs = Vec::new();
        // start scanning just after an unengaged position
        let start = (0..groups)
            .find(|&w| !engaged_mask[w])
            .expect("not full ring");
        let mut cur: Vec<usize> = Vec::new();
        for off in 1..=groups {
            let w = (start + off) % groups;
            if engaged_mask[w] {
                cur.push(w);
            } else if !cur.is_empty() {
                arcs.push(std::mem::take(&mut cur));
            }
        }
        if !cur.is_empty() {
            arcs.push(cur);
        }
        arcs
    };

    let mut combined_sites: Vec<usize> = Vec::new();
    let mut combined = Tensor::identity(1);
    for arc in &arcs {
        let asc = ascend_arc(layer, op, arc, full_ring)?;
        combined = combined.kron(&asc)?;
        combined_sites.extend(arc.iter().copied());
    }

    // ring-order the combined site list and permute the operator to match
    let mut ordered = combined_sites.clone();
    sort_ring(&mut ordered, groups);
    if ordered != combined_sites {
        let m = combined_sites.len();
        let t = combined.reshape(vec![2; 2 * m])?;
        let mut perm = Vec::with_capacity(2 * m);
        for &b in &ordered {
            perm.push(combined_sites.iter().position(|&h| h == b).unwrap());
        }
        for &b in &ordered {
            perm.push(m + combined_sites.iter().position(|&h| h == b).unwrap());
        }
        combined = t.permute(&perm)?.reshape(vec![1 << m, 1 << m])?;
    }
    Ok(AscendedOp {
        sites: ordered,
        op: combined,
    })
}

/// Chain-contract one consecutive arc of engaged isometries.
fn ascend_arc(layer: &Layer, op: &ProductOp, arc: &[usize], full_ring: bool) -> Result<Tensor> {
    let groups = layer.lattice_in / 2;

    // pair block B_i = u_i (f_a ⊗ f_b) u_i† as legs (a_ket, b_ket, a_bra, b_bra)
    let pair_block = |i: usize| -> Result<Tensor> {
        let (a, b) = layer.disentangler_sites(i);
        let f = op.factor_at(a).kron(&op.factor_at(b))?;
        let u = &layer.disentanglers[i];
        u.matmul(&f)?.matmul(&u.dagger()?)?.reshape(vec![2, 2, 2, 2])
    };

    // vk[kept, in_l, in_r] = <kept, 0| v |in_l, in_r>
    let iso_kept = |w: usize| -> Tensor {
        let v = &layer.isometries[w];
        let mut vk = Tensor::zeros(vec![2, 2, 2]);
        for kept in 0..2 {
            for il in 0..2 {
                for ir in 0..2 {
                    vk.set(&[kept, il, ir], v.get(&[kept * 2, il * 2 + ir]));
                }
            }
        }
        vk
    };

    let count = arc.len();
    let first = arc[0];

    // the left input of w_first comes from u_{first-1}; for an open arc that
    // pair block is exactly the identity, entering as an I_2 bond
    let mut c_t: Tensor;
    if full_ring {
        let i_prev = (first + groups - 1) % groups;
        let b = pair_block(i_prev)?;
        // keep left legs open at positions 0 (ket), 1 (bra); bond = right legs
        c_t = b.permute(&[0, 2, 1, 3])?;
    } else {
        c_t = Tensor::identity(2);
    }

    for (step, &w) in arc.iter().enumerate() {
        let vk = iso_kept(w);
        let vkc = vk.conj();
        let rank = c_t.rank();
        // bond legs sit at the tail: (bond_ket, bond_bra)
        let r1 = contract(&c_t, &vk, &[(rank - 2, 1)])?;
        // legs: [prev..., bond_bra, kept_o, y_o]
        let r1rank = r1.rank();
        let r2 = contract(&r1, &vkc, &[(r1rank - 3, 1)])?;
        // legs: [prev..., kept_o, y_o, kept_i, y_i]
        let rr = r2.rank();
        let last = step + 1 == count;
        if !last {
            let b = pair_block(w % groups)?;
            // contract y_o with b.a_ket, y_i with b.a_bra
            c_t = contract(&r2, &b, &[(rr - 3, 0), (rr - 1, 2)])?;
            // legs: [prev..., kept_o, kept_i, b_ket(bond), b_bra(bond)]
        } else if full_ring {
            // final step: y legs meet the open legs of the starting block,
            // which sit at positions 0 (ket) and 1 (bra)
            c_t = trace_pairs(&r2, &[(rr - 3, 0), (rr - 1, 1)])?;
        } else {
            // open arc: the right input carries an identity factor, which
            // contracts the y legs against each other with no normalization
            c_t = trace_pairs(&r2, &[(rr - 3, rr - 1)])?;
        }
    }

    // legs now: [k1_o, k1_i, k2_o, k2_i, ...]
    let mut perm: Vec<usize> = (0..count).map(|i| 2 * i).collect();
    perm.extend((0..count).map(|i| 2 * i + 1));
    c_t.permute(&perm)?.reshape(vec![1 << count, 1 << count])
}

/// Sum over paired legs (no 1/d normalization).
fn trace_pairs(t: &Tensor, pairs: &[(usize, usize)]) -> Result<Tensor> {
    let mut cur = t.clone();
    let mut remaining: Vec<(usize, usize)> = pairs.to_vec();
    while let Some(&(a, b)) = remaining.first() {
        remaining.remove(0);
        let d = cur.shape()[a];
        let id = Tensor::identity(d);
        let (hi, lo) = (a.max(b), a.min(b));
        cur = contract(&cur, &id, &[(hi, 0), (lo, 1)])?;
        // legs above `lo` shifted down by 2 (both hi and lo removed)
        for p in remaining.iter_mut() {
            let shift = |x: usize| {
                let mut v = x;
                if v > hi {
                    v -= 1;
                }
                if v > lo {
                    v -= 1;
                }
                v
            };
            *p = (shift(p.0), shift(p.1));
        }
    }
    Ok(cur)
}

fn ascend_product_ternary(layer: &Layer, op: &ProductOp) -> Result<AscendedOp> {
    // the pipeline only needs the single-site middle-of-triple contraction
    // for the ternary scaling analysis
    let support = op.support();
    if support.is_empty() {
        return Ok(AscendedOp {
            sites: vec![],
            op: Tensor::identity(1),
        });
    }
    if support.len() == 1 && support[0] % 3 == 1 {
        let w = support[0] / 3;
        let v = &layer.isometries[w];
        let f = Tensor::identity(2)
            .kron(&op.factor_at(support[0]))?
            .kron(&Tensor::identity(2))?;
        let m = v.matmul(&f)?.matmul(&v.dagger()?)?;
        let t = m.reshape(vec![2, 4, 2, 4])?;
        let mut out = Tensor::zeros(vec![2, 2]);
        for a in 0..2 {
            for b in 0..2 {
                out.set(&[a, b], t.get(&[a, 0, b, 0]));
            }
        }
        Ok(AscendedOp {
            sites: vec![w],
            op: out,
        })
    } else {
        Err(Error::Invalid(
            "ternary ascent is implemented for single middle-site operators".into(),
        ))
    }
}

/// Ascend a product operator and restrict the result to `block` by partial
/// trace. Lossless whenever the operator's support lies in the exact window
/// of `block`; otherwise off-block components are discarded, which is the
/// candidate-generation convention for selection statistics.
pub fn ascend_to_block(layer: &Layer, op: &ProductOp, block: &[usize]) -> Result<Tensor> {
    let asc = ascend_product(layer, op)?;
    restrict_to_block(&asc, block, layer.lattice_out())
}

/// Restrict an ascended operator onto `block` (ring-ordered upper sites):
/// traces out off-block sites (with 1/2 each) and tensors identity onto
/// block sites the operator does not touch.
pub fn restrict_to_block(asc: &AscendedOp, block: &[usize], lattice_up: usize) -> Result<Tensor> {
    let mut cur = asc.op.clone();
    let mut cur_sites = asc.sites.clone();

    let mut k = 0;
    while k < cur_sites.len() {
        if block.contains(&cur_sites[k]) {
            k += 1;
            continue;
        }
        let m = cur_sites.len();
        let before = 1usize << k;
        let after = 1usize << (m - k - 1);
        let t = cur.reshape(vec![before, 2, after, before, 2, after])?;
        let traced = trace_pairs(&t, &[(1, 4)])?.scale(Complex64::new(0.5, 0.0));
        // traced legs: (before_k, after_k, before_b, after_b)
        cur = traced.reshape(vec![before * after, before * after])?;
        cur_sites.remove(k);
    }

    let block_sites: Vec<usize> = block.iter().map(|&b| b % lattice_up).collect();
    let mut have = cur_sites.clone();
    for &b in &block_sites {
        if !have.contains(&b) {
            cur = cur.kron(&Tensor::identity(2))?;
            have.push(b);
        }
    }
    let m = have.len();
    let t = cur.reshape(vec![2; 2 * m])?;
    // current matrix legs alternate (kets of all sites..., bras of all sites)
    // in `have` order after kron; build permutation to block order
    let mut perm = Vec::with_capacity(2 * m);
    for &b in &block_sites {
        perm.push(have.iter().position(|&h| h == b).unwrap());
    }
    for &b in &block_sites {
        perm.push(m + have.iter().position(|&h| h == b).unwrap());
    }
    t.permute(&perm)?.reshape(vec![1 << m, 1 << m])
}

/// All candidate ascents of one block at once.
///
/// `data` holds, row-major, one `dim_out`-entry coefficient vector per
/// window Pauli code (site `window[0]` is the most significant base-4
/// digit). Produced by contracting the block's cone network a single time
/// with an open dim-4 choice leg per window site.
#[derive(Debug, Clone)]
pub struct AscentColumns {
    pub window: Vec<usize>,
    pub block: Vec<usize>,
    pub dim_out: usize,
    pub data: Vec<f64>,
}

impl AscentColumns {
    pub fn rows(&self) -> usize {
        self.data.len() / self.dim_out
    }

    pub fn column(&self, code: usize) -> &[f64] {
        &self.data[code * self.dim_out..(code + 1) * self.dim_out]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum LegTag {
    Choice(usize),
    Out(usize),
    BondK,
    BondB,
    Scratch(u8),
}

struct TaggedChain {
    t: Tensor,
    tags: Vec<LegTag>,
}

impl TaggedChain {
    fn pos(&self, tag: LegTag) -> usize {
        self.tags.iter().position(|&t| t == tag).unwrap()
    }

    fn contract_with(&mut self, other: &Tensor, pairs: &[(LegTag, usize)], new_tags: &[LegTag]) -> Result<()> {
        let index_pairs: Vec<(usize, usize)> = pairs
            .iter()
            .map(|&(tag, oleg)| (self.pos(tag), oleg))
            .collect();
        let contracted: Vec<usize> = index_pairs.iter().map(|p| p.0).collect();
        let t = contract(&self.t, other, &index_pairs)?;
        let mut tags: Vec<LegTag> = self
            .tags
            .iter()
            .enumerate()
            .filter(|(i, _)| !contracted.contains(i))
            .map(|(_, &t)| t)
            .collect();
        tags.extend_from_slice(new_tags);
        self.t = t;
        self.tags = tags;
        Ok(())
    }

    fn trace_tags(&mut self, a: LegTag, b: LegTag, scale: f64) -> Result<()> {
        let (pa, pb) = (self.pos(a), self.pos(b));
        let t = trace_pairs(&self.t, &[(pa, pb)])?;
        let t = if scale == 1.0 {
            t
        } else {
            t.scale(Complex64::new(scale, 0.0))
        };
        self.tags = self
            .tags
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != pa && *i != pb)
            .map(|(_, &x)| x)
            .collect();
        self.t = t;
        Ok(())
    }
}

/// Batched one-layer ascent: coefficient vectors of `A[P]` restricted to
/// `block`, for every Pauli string `P` on the block's isometry-input window.
pub fn block_ascent_columns(layer: &Layer, block: &[usize]) -> Result<AscentColumns> {
    if layer.geometry != Geometry::Binary {
        return Err(Error::Invalid(
            "batched ascent is defined for the binary geometry".into(),
        ));
    }
    let l = layer.lattice_in;
    let groups = l / 2;
    let window = isometry_inputs(Geometry::Binary, l, block);
    let in_window = {
        let mut f = vec![false; l];
        for &s in &window {
            f[s] = true;
        }
        f
    };
    let block_mod: Vec<usize> = block.iter().map(|&b| b % groups).collect();

    // engaged isometries for full window support
    let mut touched_u = vec![false; groups];
    for &s in &window {
        touched_u[((s + l - 1) % l) / 2] = true;
    }
    let mut in_spread = vec![false; l];
    for (i, &t) in touched_u.iter().enumerate() {
        if t {
            let (a, b) = layer.disentangler_sites(i);
            in_spread[a] = true;
            in_spread[b] = true;
        }
    }
    let engaged_mask: Vec<bool> = (0..groups)
        .map(|w| layer.isometry_sites(w).iter().any(|&s| in_spread[s]))
        .collect();
    let full_ring = engaged_mask.iter().all(|&e| e);
    let arc: Vec<usize> = if full_ring {
        (0..groups).collect()
    } else {
        let start = (0..groups).find(|&w| !engaged_mask[w]).unwrap();
        let mut a = Vec::new();
        for off in 1..=groups {
            let w = (start + off) % groups;
            if engaged_mask[w] {
                a.push(w);
            } else if !a.is_empty() {
                break;
            }
        }
        a
    };
    if !full_ring && arc.len() != engaged_mask.iter().filter(|&&e| e).count() {
        return Err(Error::Invalid(
            "batched ascent expects a contiguous window".into(),
        ));
    }

    // choice-leg pair block for disentangler i: legs
    // [σ_a(4)?, σ_b(4)?, a_k, b_k, a_b, b_b], choice legs only for window sites
    let pair_choice = |i: usize| -> Result<(Tensor, Vec<LegTag>)> {
        let (a, b) = layer.disentangler_sites(i);
        let u = &layer.disentanglers[i];
        let (ca, cb) = (in_window[a], in_window[b]);
        let (na, nb) = (if ca { 4 } else { 1 }, if cb { 4 } else { 1 });
        let mut t = Tensor::zeros(vec![na, nb, 2, 2, 2, 2]);
        for da in 0..na {
            for db in 0..nb {
                let sa = if ca {
                    crate::pauli::Pauli::from_index(da).matrix()
                } else {
                    Tensor::identity(2)
                };
                let sb = if cb {
                    crate::pauli::Pauli::from_index(db).matrix()
                } else {
                    Tensor::identity(2)
                };
                let m = u.matmul(&sa.kron(&sb)?)?.matmul(&u.dagger()?)?;
                for ak in 0..2 {
                    for bk in 0..2 {
                        for ab in 0..2 {
                            for bb in 0..2 {
                                t.set(
                                    &[da, db, ak, bk, ab, bb],
                                    m.get(&[ak * 2 + bk, ab * 2 + bb]),
                                );
                            }
                        }
                    }
                }
            }
        }
        let mut tags = Vec::new();
        tags.push(if ca { LegTag::Choice(a) } else { LegTag::Scratch(0) });
        tags.push(if cb { LegTag::Choice(b) } else { LegTag::Scratch(1) });
        Ok((t, tags))
    };

    let iso_kept = |w: usize| -> Tensor {
        let v = &layer.isometries[w];
        let mut vk = Tensor::zeros(vec![2, 2, 2]);
        for kept in 0..2 {
            for il in 0..2 {
                for ir in 0..2 {
                    vk.set(&[kept, il, ir], v.get(&[kept * 2, il * 2 + ir]));
                }
            }
        }
        vk
    };

    // Pauli conversion tensor: in tr(A·P) the bra index of A meets the row
    // of P, so S[a, k_o, k_i] = σ_a[k_i, k_o] / √2
    let s_tensor = {
        let mut s = Tensor::zeros(vec![4, 2, 2]);
        let f = std::f64::consts::FRAC_1_SQRT_2;
        for (a, p) in crate::pauli::Pauli::ALL.iter().enumerate() {
            let m = p.matrix();
            for ko in 0..2 {
                for ki in 0..2 {
                    s.set(&[a, ko, ki], m.get(&[ki, ko]) * Complex64::new(f, 0.0));
                }
            }
        }
        s
    };

    let squeeze = |chain: &mut TaggedChain| -> Result<()> {
        // drop size-1 scratch legs by reshaping them away
        let keep: Vec<usize> = chain
            .tags
            .iter()
            .enumerate()
            .filter(|(i, t)| !(matches!(t, LegTag::Scratch(_)) && chain.t.shape()[*i] == 1))
            .map(|(i, _)| i)
            .collect();
        if keep.len() == chain.tags.len() {
            return Ok(());
        }
        let shape: Vec<usize> = keep.iter().map(|&i| chain.t.shape()[i]).collect();
        let tags: Vec<LegTag> = keep.iter().map(|&i| chain.tags[i]).collect();
        chain.t = chain.t.reshape(shape)?;
        chain.tags = tags;
        Ok(())
    };

    let count = arc.len();
    let first = arc[0];
    let mut chain = if full_ring {
        let i_prev = (first + groups - 1) % groups;
        let (b, ctags) = pair_choice(i_prev)?;
        let mut tags = ctags;
        tags.extend([
            LegTag::Scratch(10), // a_k held open for ring closure
            LegTag::BondK,       // b_k
            LegTag::Scratch(11), // a_b held open
            LegTag::BondB,       // b_b
        ]);
        let mut c = TaggedChain { t: b, tags };
        squeeze(&mut c)?;
        c
    } else {
        TaggedChain {
            t: Tensor::identity(2),
            tags: vec![LegTag::BondK, LegTag::BondB],
        }
    };

    for (step, &w) in arc.iter().enumerate() {
        let vk = iso_kept(w);
        let vkc = vk.conj();
        chain.contract_with(&vk, &[(LegTag::BondK, 1)], &[LegTag::Scratch(20), LegTag::Scratch(21)])?;
        chain.contract_with(&vkc, &[(LegTag::BondB, 1)], &[LegTag::Scratch(22), LegTag::Scratch(23)])?;
        // Scratch(20)=kept_o, 21=y_o, 22=kept_i, 23=y_i
        if block_mod.contains(&w) {
            chain.contract_with(
                &s_tensor,
                &[(LegTag::Scratch(20), 1), (LegTag::Scratch(22), 2)],
                &[LegTag::Out(w)],
            )?;
        } else {
            chain.trace_tags(LegTag::Scratch(20), LegTag::Scratch(22), 0.5)?;
        }
        let last = step + 1 == count;
        if !last {
            let (b, ctags) = pair_choice(w % groups)?;
            let mut tags = ctags;
            tags.extend([LegTag::Scratch(30), LegTag::BondK, LegTag::Scratch(31), LegTag::BondB]);
            // contract y_o with a_k (leg 2 of b), y_i with a_b (leg 4)
            let y_o = chain.pos(LegTag::Scratch(21));
            let y_i = chain.pos(LegTag::Scratch(23));
            let t = contract(&chain.t, &b, &[(y_o, 2), (y_i, 4)])?;
            let mut new_tags: Vec<LegTag> = chain
                .tags
                .iter()
                .enumerate()
                .filter(|(i, _)| *i != y_o && *i != y_i)
                .map(|(_, &x)| x)
                .collect();
            // b free legs after contracting 2 and 4: σa?, σb?, b_k, b_b
            new_tags.push(tags[0]);
            new_tags.push(tags[1]);
            new_tags.push(LegTag::BondK);
            new_tags.push(LegTag::BondB);
            chain.t = t;
            chain.tags = new_tags;
            squeeze(&mut chain)?;
        } else if full_ring {
            chain.trace_tags(LegTag::Scratch(21), LegTag::Scratch(10), 1.0)?;
            chain.trace_tags(LegTag::Scratch(23), LegTag::Scratch(11), 1.0)?;
        } else {
            chain.trace_tags(LegTag::Scratch(21), LegTag::Scratch(23), 1.0)?;
        }
    }

    // final leg order: window choices (most significant first), block outs
    let mut perm = Vec::with_capacity(chain.tags.len());
    for &s in &window {
        perm.push(chain.pos(LegTag::Choice(s)));
    }
    for &b in &block_mod {
        perm.push(chain.pos(LegTag::Out(b)));
    }
    if perm.len() != chain.tags.len() {
        return Err(Error::Invalid("batched ascent: leg mismatch".into()));
    }
    let t = chain.t.permute(&perm)?;
    let dim_out = 1usize << (2 * block.len());
    let rows = 1usize << (2 * window.len());
    let mut data = Vec::with_capacity(rows * dim_out);
    let mut worst_im: f64 = 0.0;
    for z in t.data() {
        worst_im = worst_im.max(z.im.abs());
        data.push(z.re);
    }
    if worst_im > 1e-9 {
        return Err(Error::Invalid(format!(
            "batched ascent produced non-real coefficients ({worst_im:.3e})"
        )));
    }
    Ok(AscentColumns {
        window,
        block: block.to_vec(),
        dim_out,
        data,
    })
}

/// Per-edge admissibility test for candidate windows: a single-site factor σ
/// on the inner half of a boundary disentangler ascends exactly iff the
/// conjugated pair operator `u (I ⊗ σ) u†` has no non-identity component on
/// the outward leg. Returns that component's Frobenius norm.
pub fn edge_spill(u: &Tensor, sigma: &Tensor, outward_first: bool) -> f64 {
    let f = if outward_first {
        Tensor::identity(2).kron(sigma).unwrap()
    } else {
        sigma.kron(&Tensor::identity(2)).unwrap()
    };
    let m = u.matmul(&f).unwrap().matmul(&u.dagger().unwrap()).unwrap();
    let t = m.reshape(vec![2, 2, 2, 2]).unwrap();
    let (out_k, out_b) = if outward_first { (0, 2) } else { (1, 3) };
    let id_part = trace_pairs(&t, &[(out_k, out_b)])
        .unwrap()
        .scale(Complex64::new(0.5, 0.0));
    let total = m.frobenius_norm().powi(2);
    let idn = 2.0 * id_part.frobenius_norm().powi(2);
    (total - idn).max(0.0).sqrt()
}

/// Extract the isometry unitary from a k-site density matrix: `v` maps the
/// top-χ eigenvectors to `|k>⊗|0..0>`, the rest fill the remaining basis
/// states deterministically. Returns `(v, ε)` with ε the discarded weight.
pub fn extract_isometry(rho: &Tensor, chi: usize) -> Result<(Tensor, f64)> {
    let d = rho.shape()[0];
    if rho.rank() != 2 || rho.shape()[1] != d {
        return Err(Error::Invalid("extract_isometry: need square rho".into()));
    }
    if chi == 0 || d % chi != 0 {
        return Err(Error::Invalid(format!(
            "extract_isometry: chi {chi} incompatible with dim {d}"
        )));
    }
    let eig = hermitian_eig(rho)?;
    let anc = d / chi;
    let mut targets = Vec::with_capacity(d);
    for k in 0..chi {
        targets.push(k * anc);
    }
    for k in 0..chi {
        for a in 1..anc {
            targets.push(k * anc + a);
        }
    }
    let mut v = Tensor::zeros(vec![d, d]);
    for (col, &tgt) in targets.iter().enumerate() {
        for r in 0..d {
            let amp = eig.vectors.get(&[r, col]).conj();
            v.data_mut()[tgt * d + r] = amp;
        }
    }
    let eps: f64 = eig.values.iter().skip(chi).sum::<f64>().max(0.0);
    Ok((v, eps))
}
