//! Pauli-string operators, expectation values, and finite-shot sampling of
//! tensor-product measurement settings.
//!
//! Strings serialize as plain text over the alphabet `IXYZ` with the leftmost
//! character acting on site 0.

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use num_complex::Complex64;
use rand::distributions::{Distribution, WeightedIndex};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use std::fmt;
use std::str::FromStr;

/// Single-site Pauli label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Pauli {
    I,
    X,
    Y,
    Z,
}

impl Pauli {
    pub const ALL: [Pauli; 4] = [Pauli::I, Pauli::X, Pauli::Y, Pauli::Z];

    pub fn index(self) -> usize {
        match self {
            Pauli::I => 0,
            Pauli::X => 1,
            Pauli::Y => 2,
            Pauli::Z => 3,
        }
    }

    pub fn from_index(i: usize) -> Pauli {
        Self::ALL[i % 4]
    }

    pub fn matrix(self) -> Tensor {
        let z = Complex64::new(0.0, 0.0);
        let one = Complex64::new(1.0, 0.0);
        let i = Complex64::new(0.0, 1.0);
        let data = match self {
            Pauli::I => vec![one, z, z, one],
            Pauli::X => vec![z, one, one, z],
            Pauli::Y => vec![z, -i, i, z],
            Pauli::Z => vec![one, z, z, -one],
        };
        Tensor::new(vec![2, 2], data).unwrap()
    }

    pub fn to_char(self) -> char {
        match self {
            Pauli::I => 'I',
            Pauli::X => 'X',
            Pauli::Y => 'Y',
            Pauli::Z => 'Z',
        }
    }
}

/// Multi-site Pauli string.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PauliString {
    labels: Vec<Pauli>,
}

impl PauliString {
    pub fn new(labels: Vec<Pauli>) -> Self {
        PauliString { labels }
    }

    pub fn identity(n: usize) -> Self {
        PauliString {
            labels: vec![Pauli::I; n],
        }
    }

    /// Decode a string from its index in the base-4 enumeration of n-site
    /// strings (site 0 = most significant digit).
    pub fn from_code(code: usize, n: usize) -> Self {
        let mut labels = vec![Pauli::I; n];
        let mut c = code;
        for k in (0..n).rev() {
            labels[k] = Pauli::from_index(c % 4);
            c /= 4;
        }
        PauliString { labels }
    }

    pub fn code(&self) -> usize {
        self.labels.iter().fold(0, |acc, p| acc * 4 + p.index())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[Pauli] {
        &self.labels
    }

    /// Sites carrying a non-identity factor.
    pub fn support(&self) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, p)| **p != Pauli::I)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn is_identity(&self) -> bool {
        self.labels.iter().all(|p| *p == Pauli::I)
    }

    /// Dense matrix realization: Kronecker product in site order.
    pub fn matrix(&self) -> Tensor {
        let mut m = Tensor::identity(1);
        for p in &self.labels {
            m = m.kron(&p.matrix()).unwrap();
        }
        m
    }
}

impl fmt::Display for PauliString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for p in &self.labels {
            write!(f, "{}", p.to_char())?;
        }
        Ok(())
    }
}

impl FromStr for PauliString {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let labels = s
            .chars()
            .map(|c| match c {
                'I' => Ok(Pauli::I),
                'X' => Ok(Pauli::X),
                'Y' => Ok(Pauli::Y),
                'Z' => Ok(Pauli::Z),
                other => Err(Error::Invalid(format!("bad Pauli character '{other}'"))),
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(PauliString { labels })
    }
}

/// Dense matrix for `p` acting on `sites` of an `n`-site register, identity
/// elsewhere. `sites` must be strictly increasing.
pub fn embed(p: &PauliString, sites: &[usize], n: usize) -> Result<Tensor> {
    if sites.len() != p.len() {
        return Err(Error::Invalid("embed: site count != string length".into()));
    }
    let mut labels = vec![Pauli::I; n];
    for (k, &s) in sites.iter().enumerate() {
        if s >= n {
            return Err(Error::LegOutOfRange { index: s, rank: n });
        }
        labels[s] = p.labels[k];
    }
    Ok(PauliString::new(labels).matrix())
}

/// Apply a single-site Pauli to a state vector in place.
fn apply_site_pauli(psi: &mut [Complex64], p: Pauli, site: usize, n: usize) {
    if p == Pauli::I {
        return;
    }
    let stride = 1usize << (n - 1 - site);
    let i = Complex64::new(0.0, 1.0);
    let mut base = 0;
    while base < psi.len() {
        for off in 0..stride {
            let a = base + off;
            let b = a + stride;
            match p {
                Pauli::I => {}
                Pauli::X => psi.swap(a, b),
                Pauli::Y => {
                    let (va, vb) = (psi[a], psi[b]);
                    psi[a] = -i * vb;
                    psi[b] = i * va;
                }
                Pauli::Z => psi[b] = -psi[b],
            }
        }
        base += 2 * stride;
    }
}

/// Apply a Pauli string (on `sites` of an n-qubit state) to a copy of `psi`.
pub fn apply_pauli(
    psi: &[Complex64],
    p: &PauliString,
    sites: &[usize],
    n: usize,
) -> Vec<Complex64> {
    let mut out = psi.to_vec();
    for (k, &s) in sites.iter().enumerate() {
        apply_site_pauli(&mut out, p.labels[k], s, n);
    }
    out
}

/// Observable argument for [`expectation`].
pub enum Observable<'a> {
    Matrix(&'a Tensor),
    String(&'a PauliString),
}

/// Real part of `<obs>` for a pure state vector or density matrix.
///
/// For Hermitian observables the imaginary residue must vanish; values above
/// `1e-10` are rejected.
pub fn expectation(state: &Tensor, obs: Observable<'_>) -> Result<f64> {
    let val = match obs {
        Observable::Matrix(m) => expectation_matrix(state, m)?,
        Observable::String(p) => {
            if state.rank() == 1 {
                let n = log2(state.len())?;
                if p.len() != n {
                    return Err(Error::DimMismatch(format!(
                        "{}-site string on {}-qubit state",
                        p.len(),
                        n
                    )));
                }
                let sites: Vec<usize> = (0..n).collect();
                let phi = apply_pauli(state.data(), p, &sites, n);
                state
                    .data()
                    .iter()
                    .zip(&phi)
                    .map(|(a, b)| a.conj() * b)
                    .sum()
            } else {
                expectation_matrix(state, &p.matrix())?
            }
        }
    };
    if val.im.abs() > 1e-10 {
        return Err(Error::Invalid(format!(
            "expectation has imaginary residue {:.3e}",
            val.im
        )));
    }
    Ok(val.re)
}

fn expectation_matrix(state: &Tensor, m: &Tensor) -> Result<Complex64> {
    match state.rank() {
        1 => {
            let d = state.len();
            if m.shape() != [d, d] {
                return Err(Error::DimMismatch(format!(
                    "observable {:?} on state of dim {}",
                    m.shape(),
                    d
                )));
            }
            let mut acc = Complex64::new(0.0, 0.0);
            for i in 0..d {
                let mut row = Complex64::new(0.0, 0.0);
                for j in 0..d {
                    row += m.data()[i * d + j] * state.data()[j];
                }
                acc += state.data()[i].conj() * row;
            }
            Ok(acc)
        }
        2 => {
            let d = state.shape()[0];
            if m.shape() != [d, d] || state.shape()[1] != d {
                return Err(Error::DimMismatch(format!(
                    "observable {:?} on density matrix {:?}",
                    m.shape(),
                    state.shape()
                )));
            }
            let mut acc = Complex64::new(0.0, 0.0);
            for i in 0..d {
                for j in 0..d {
                    acc += state.data()[i * d + j] * m.data()[j * d + i];
                }
            }
            Ok(acc)
        }
        r => Err(Error::Invalid(format!(
            "state must be a vector or density matrix, got rank {r}"
        ))),
    }
}

fn log2(d: usize) -> Result<usize> {
    if !d.is_power_of_two() {
        return Err(Error::Invalid(format!("dimension {d} is not a power of 2")));
    }
    Ok(d.trailing_zeros() as usize)
}

/// One measurement setting's worth of sampled data.
///
/// `setting` has no identity on the measured window; `counts[b]` is the
/// number of shots that produced the eigenvalue pattern encoded by bitstring
/// `b` (bit k set means window site k measured the -1 eigenvalue).
#[derive(Debug, Clone)]
pub struct MeasurementRecord {
    pub setting: PauliString,
    pub window: Vec<usize>,
    pub shots: u64,
    pub counts: Vec<u64>,
}

impl MeasurementRecord {
    /// Estimated expectation of the sub-string of the setting restricted to
    /// `mask` (bit k = include window site k). The all-identity mask yields
    /// exactly 1.
    pub fn marginal_expectation(&self, mask: usize) -> f64 {
        if self.shots == 0 {
            return 0.0;
        }
        let mut acc: i64 = 0;
        for (b, &cnt) in self.counts.iter().enumerate() {
            let parity = (b & mask).count_ones() & 1;
            let sign = if parity == 0 { 1i64 } else { -1i64 };
            acc += sign * cnt as i64;
        }
        acc as f64 / self.shots as f64
    }

    /// Estimated expectation of an arbitrary sub-string compatible with this
    /// setting (identity where skipped, matching Pauli elsewhere).
    pub fn substring_expectation(&self, sub: &PauliString) -> Result<f64> {
        if sub.len() != self.setting.len() {
            return Err(Error::DimMismatch("substring length".into()));
        }
        let mut mask = 0usize;
        for (k, (s, full)) in sub
            .labels()
            .iter()
            .zip(self.setting.labels())
            .enumerate()
        {
            if *s == Pauli::I {
                continue;
            }
            if s != full {
                return Err(Error::Invalid(format!(
                    "substring {sub} incompatible with setting {}",
                    self.setting
                )));
            }
            mask |= 1 << k;
        }
        Ok(self.marginal_expectation(mask))
    }
}

/// Number of tensor-product settings covering all Pauli observables on an
/// n-site window.
pub fn settings_for_full_coverage(n: usize) -> u64 {
    3u64.pow(n as u32)
}

/// Sample `shots` outcomes of the tensor-product `setting` on `window` sites
/// of the pure state `state`. Outcomes are drawn from the exact joint
/// eigenbasis distribution; deterministic given `seed`.
pub fn sample_setting(
    state: &Tensor,
    setting: &PauliString,
    window: &[usize],
    shots: u64,
    seed: u64,
) -> Result<MeasurementRecord> {
    if shots == 0 {
        return Err(Error::Invalid("sample_setting: shots must be > 0".into()));
    }
    if setting.labels().iter().any(|p| *p == Pauli::I) {
        return Err(Error::Invalid(
            "sample_setting: setting may not contain identity on the window".into(),
        ));
    }
    if setting.len() != window.len() {
        return Err(Error::DimMismatch("setting/window length".into()));
    }
    if state.rank() != 1 {
        return Err(Error::Invalid("sample_setting needs a pure state".into()));
    }
    let n = log2(state.len())?;

    // rotate each window site so the setting's eigenbasis becomes the Z basis
    let mut psi = state.data().to_vec();
    for (k, &s) in window.iter().enumerate() {
        rotate_to_z(&mut psi, setting.labels()[k], s, n);
    }

    // joint outcome distribution over the window bits
    let w = window.len();
    let mut probs = vec![0.0f64; 1 << w];
    for (idx, amp) in psi.iter().enumerate() {
        let mut b = 0usize;
        for (k, &s) in window.iter().enumerate() {
            if (idx >> (n - 1 - s)) & 1 == 1 {
                b |= 1 << k;
            }
        }
        probs[b] += amp.norm_sqr();
    }
    let total: f64 = probs.iter().sum();
    if !(0.999_999..=1.000_001).contains(&total) {
        return Err(Error::Invalid(format!(
            "sample_setting: state not normalized (sum p = {total})"
        )));
    }

    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let dist = WeightedIndex::new(&probs)
        .map_err(|e| Error::Invalid(format!("outcome distribution: {e}")))?;
    let mut counts = vec![0u64; 1 << w];
    for _ in 0..shots {
        counts[dist.sample(&mut rng)] += 1;
    }
    Ok(MeasurementRecord {
        setting: setting.clone(),
        window: window.to_vec(),
        shots,
        counts,
    })
}

/// In-place single-qubit rotation taking the eigenbasis of `p` to the Z basis.
fn rotate_to_z(psi: &mut [Complex64], p: Pauli, site: usize, n: usize) {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let h = [
        Complex64::new(s, 0.0),
        Complex64::new(s, 0.0),
        Complex64::new(s, 0.0),
        Complex64::new(-s, 0.0),
    ];
    // takes Y eigenvectors (|0> ± i|1>)/sqrt2 to |0>, |1>
    let ydag = [
        Complex64::new(s, 0.0),
        Complex64::new(0.0, -s),
        Complex64::new(s, 0.0),
        Complex64::new(0.0, s),
    ];
    let g = match p {
        Pauli::I | Pauli::Z => return,
        Pauli::X => h,
        Pauli::Y => ydag,
    };
    let stride = 1usize << (n - 1 - site);
    let mut base = 0;
    while base < psi.len() {
        for off in 0..stride {
            let a = base + off;
            let b = a + stride;
            let (va, vb) = (psi[a], psi[b]);
            psi[a] = g[0] * va + g[1] * vb;
            psi[b] = g[2] * va + g[3] * vb;
        }
        base += 2 * stride;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn ket0() -> Tensor {
        Tensor::new(vec![2], vec![c(1.0, 0.0), c(0.0, 0.0)]).unwrap()
    }

    fn ket_plus() -> Tensor {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        Tensor::new(vec![2], vec![c(s, 0.0), c(s, 0.0)]).unwrap()
    }

    #[test]
    fn z_matrix_is_diag_1_m1() {
        let z: PauliString = "Z".parse().unwrap();
        let m = z.matrix();
        assert_eq!(m.get(&[0, 0]), c(1.0, 0.0));
        assert_eq!(m.get(&[1, 1]), c(-1.0, 0.0));
        assert_eq!(m.get(&[0, 1]), c(0.0, 0.0));
    }

    #[test]
    fn bell_state_stabilized_by_xx() {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let bell = Tensor::new(
            vec![4],
            vec![c(s, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(s, 0.0)],
        )
        .unwrap();
        let xx: PauliString = "XX".parse().unwrap();
        let e = expectation(&bell, Observable::String(&xx)).unwrap();
        assert_abs_diff_eq!(e, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn random_string_squares_to_identity() {
        let p = PauliString::from_code(0b100111, 3);
        let m = p.matrix();
        let sq = m.matmul(&m).unwrap();
        let dev = sq.sub(&Tensor::identity(8)).unwrap().frobenius_norm();
        assert!(dev < 1e-14);
        let h = m.sub(&m.dagger().unwrap()).unwrap().frobenius_norm();
        assert!(h < 1e-14);
    }

    #[test]
    fn hilbert_schmidt_orthogonality() {
        let n = 2;
        for a in 0..16usize {
            for b in 0..16usize {
                let pa = PauliString::from_code(a, n).matrix();
                let pb = PauliString::from_code(b, n).matrix();
                let ip = pa.inner(&pb).unwrap();
                let want = if a == b { 4.0 } else { 0.0 };
                assert_abs_diff_eq!(ip.re, want, epsilon = 1e-12);
                assert_abs_diff_eq!(ip.im, 0.0, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn expectation_trivial_cases() {
        let z: PauliString = "Z".parse().unwrap();
        assert_abs_diff_eq!(
            expectation(&ket0(), Observable::String(&z)).unwrap(),
            1.0,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            expectation(&ket_plus(), Observable::String(&z)).unwrap(),
            0.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn fast_path_matches_dense_oracle() {
        use rand::Rng;
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        let n = 4;
        let d = 1 << n;
        let mut v: Vec<Complex64> = (0..d)
            .map(|_| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect();
        let norm: f64 = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        v.iter_mut().for_each(|z| *z /= norm);
        let state = Tensor::new(vec![d], v).unwrap();
        for code in [0usize, 7, 133, 255, 102] {
            let p = PauliString::from_code(code, n);
            let fast = expectation(&state, Observable::String(&p)).unwrap();
            let dense = expectation(&state, Observable::Matrix(&p.matrix())).unwrap();
            assert_abs_diff_eq!(fast, dense, epsilon = 1e-12);
        }
    }

    #[test]
    fn sampling_ket0_z_is_deterministic_plus_one() {
        let rec = sample_setting(&ket0(), &"Z".parse().unwrap(), &[0], 500, 42).unwrap();
        assert_eq!(rec.counts[0], 500);
        assert_abs_diff_eq!(rec.marginal_expectation(1), 1.0);
    }

    #[test]
    fn sampling_plus_z_within_binomial_3sigma() {
        let rec = sample_setting(&ket_plus(), &"Z".parse().unwrap(), &[0], 10_000, 7).unwrap();
        let est = rec.marginal_expectation(1);
        assert!(est.abs() < 0.03, "est = {est}");
    }

    #[test]
    fn identity_marginal_is_exactly_one() {
        let rec = sample_setting(&ket_plus(), &"X".parse().unwrap(), &[0], 57, 3).unwrap();
        assert_eq!(rec.marginal_expectation(0), 1.0);
    }

    #[test]
    fn zero_shots_is_an_error() {
        assert!(sample_setting(&ket0(), &"Z".parse().unwrap(), &[0], 0, 1).is_err());
    }

    #[test]
    fn full_coverage_count() {
        assert_eq!(settings_for_full_coverage(8), 6561);
    }

    #[test]
    fn seeded_runs_are_reproducible() {
        let a = sample_setting(&ket_plus(), &"Z".parse().unwrap(), &[0], 1000, 99).unwrap();
        let b = sample_setting(&ket_plus(), &"Z".parse().unwrap(), &[0], 1000, 99).unwrap();
        assert_eq!(a.counts, b.counts);
    }

    #[test]
    fn estimator_converges_within_5_sigma() {
        let psi = Tensor::new(
            vec![4],
            vec![c(0.5, 0.0), c(0.5, 0.0), c(0.5, 0.0), c(-0.5, 0.0)],
        )
        .unwrap();
        let set: PauliString = "XZ".parse().unwrap();
        let exact = expectation(&psi, Observable::String(&set)).unwrap();
        let shots = 400u64;
        let runs = 100;
        let mut mean = 0.0;
        for seed in 0..runs {
            let rec = sample_setting(&psi, &set, &[0, 1], shots, seed).unwrap();
            mean += rec.marginal_expectation(0b11);
        }
        mean /= runs as f64;
        let sigma = ((1.0 - exact * exact) / (shots as f64 * runs as f64)).sqrt();
        assert!(
            (mean - exact).abs() < 5.0 * sigma.max(1e-6),
            "mean {mean} vs exact {exact} (sigma {sigma})"
        );
    }

    #[test]
    fn substring_marginals_match_direct_sampling_distribution() {
        // chi-square sanity at 1 dof: marginal of an XZ record on site 0
        // against the exact single-site distribution; 10.83 <=> p = 1e-3
        let psi = {
            let mut v = vec![c(0.62, 0.1), c(-0.3, 0.22), c(0.4, -0.15), c(0.31, 0.4)];
            let norm: f64 = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
            v.iter_mut().for_each(|z| *z /= norm);
            Tensor::new(vec![4], v).unwrap()
        };
        let shots = 20_000u64;
        let joint = sample_setting(&psi, &"XZ".parse().unwrap(), &[0, 1], shots, 5).unwrap();
        let mut plus_joint = 0u64;
        for (b, &cnt) in joint.counts.iter().enumerate() {
            if b & 1 == 0 {
                plus_joint += cnt;
            }
        }
        let sub: PauliString = "XI".parse().unwrap();
        let exact = expectation(&psi, Observable::String(&sub)).unwrap();
        let p_plus = (1.0 + exact) / 2.0;
        let expect_plus = p_plus * shots as f64;
        let expect_minus = (1.0 - p_plus) * shots as f64;
        let got_minus = shots as f64 - plus_joint as f64;
        let chi2 = (plus_joint as f64 - expect_plus).powi(2) / expect_plus
            + (got_minus - expect_minus).powi(2) / expect_minus;
        assert!(chi2 < 10.83, "chi2 = {chi2}");
        let est = joint.substring_expectation(&sub).unwrap();
        assert_abs_diff_eq!(
            est,
            (2.0 * plus_joint as f64 / shots as f64) - 1.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn roundtrip_text_format() {
        let p: PauliString = "IXYZXX".parse().unwrap();
        assert_eq!(p.to_string(), "IXYZXX");
        assert_eq!(p.support(), vec![1, 2, 3, 4, 5]);
    }
}
