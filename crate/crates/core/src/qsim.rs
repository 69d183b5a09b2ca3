//! Dimension-4 complex linear algebra and projective measurement.
//!
//! Everything in the scheme acts on one 2-qubit register at a time, so the
//! engine is fixed-size: vectors are `[Complex64; 4]` and operators are 4×4
//! Hermitian matrices diagonalized by cyclic complex Jacobi rotations.

#![allow(clippy::needless_range_loop)]

use std::fmt;
use std::ops::{Add, Mul};

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

pub type C64 = Complex64;

/// Register dimension.
pub const DIM: usize = 4;

/// Tolerance on state normalization and orthonormality.
pub const NORM_TOL: f64 = 1e-12;
/// Tolerance on Hermiticity.
pub const HERMITIAN_TOL: f64 = 1e-12;

const ZERO: C64 = C64::new(0.0, 0.0);
const ONE: C64 = C64::new(1.0, 0.0);

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QsimError {
    #[error("state is not unit norm (squared norm {0})")]
    NotNormalized(f64),
    #[error("cannot normalize the zero vector")]
    ZeroVector,
    #[error("operator is not Hermitian (max deviation {0})")]
    NotHermitian(f64),
    #[error("basis vectors {0} and {1} are not orthogonal (|<u|v>| = {2})")]
    NotOrthogonal(usize, usize, f64),
    #[error("non-finite amplitude")]
    NonFinite,
}

/// A unit vector in C^4.
#[derive(Clone, Copy, PartialEq)]
pub struct StateVec([C64; DIM]);

impl StateVec {
    /// Wraps amplitudes that are already unit-norm.
    pub fn new(amplitudes: [C64; DIM]) -> Result<Self, QsimError> {
        if amplitudes.iter().any(|a| !a.re.is_finite() || !a.im.is_finite()) {
            return Err(QsimError::NonFinite);
        }
        let n = norm_sqr(&amplitudes);
        if (n - 1.0).abs() > NORM_TOL {
            return Err(QsimError::NotNormalized(n));
        }
        Ok(StateVec(amplitudes))
    }

    /// Scales arbitrary amplitudes to unit norm.
    pub fn normalized(amplitudes: [C64; DIM]) -> Result<Self, QsimError> {
        if amplitudes.iter().any(|a| !a.re.is_finite() || !a.im.is_finite()) {
            return Err(QsimError::NonFinite);
        }
        let n = norm_sqr(&amplitudes).sqrt();
        if n < 1e-300 {
            return Err(QsimError::ZeroVector);
        }
        Ok(StateVec(amplitudes.map(|a| a / n)))
    }

    pub fn from_real(amplitudes: [f64; DIM]) -> Result<Self, QsimError> {
        Self::new(amplitudes.map(|a| C64::new(a, 0.0)))
    }

    /// Computational basis vector `|i⟩`, zero-indexed.
    pub fn basis(i: usize) -> Self {
        let mut a = [ZERO; DIM];
        a[i] = ONE;
        StateVec(a)
    }

    /// Haar-random unit vector.
    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        loop {
            let a: [C64; DIM] = std::array::from_fn(|_| {
                C64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
            });
            if let Ok(s) = Self::normalized(a) {
                return s;
            }
        }
    }

    pub fn amplitudes(&self) -> &[C64; DIM] {
        &self.0
    }

    /// `⟨self|other⟩`
    pub fn inner(&self, other: &StateVec) -> C64 {
        inner(&self.0, &other.0)
    }

    /// Rotates the global phase so the first nonzero amplitude is positive real.
    pub fn phase_normalized(&self) -> StateVec {
        let lead = self.0.iter().find(|a| a.norm() > 1e-15).copied().unwrap_or(ONE);
        let phase = lead.conj() / lead.norm();
        let mut out = self.0.map(|a| a * phase);
        for a in out.iter_mut() {
            // keep exact zeros exact so collapsed states compare bit-for-bit
            if a.re == 0.0 {
                a.re = 0.0;
            }
            if a.im == 0.0 {
                a.im = 0.0;
            }
        }
        let first = out.iter().position(|a| a.norm() > 1e-15).unwrap_or(0);
        out[first] = C64::new(out[first].norm(), 0.0);
        StateVec(out)
    }
}

impl fmt::Debug for StateVec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.0.iter()).finish()
    }
}

fn norm_sqr(a: &[C64; DIM]) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum()
}

fn inner(a: &[C64; DIM], b: &[C64; DIM]) -> C64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

/// A 4×4 Hermitian operator.
#[derive(Clone, Copy, PartialEq)]
pub struct HermitianOp([[C64; DIM]; DIM]);

impl HermitianOp {
    pub fn new(entries: [[C64; DIM]; DIM]) -> Result<Self, QsimError> {
        let mut dev: f64 = 0.0;
        for i in 0..DIM {
            for j in 0..DIM {
                let e = entries[i][j];
                if !e.re.is_finite() || !e.im.is_finite() {
                    return Err(QsimError::NonFinite);
                }
                dev = dev.max((e - entries[j][i].conj()).norm());
            }
        }
        if dev > HERMITIAN_TOL {
            return Err(QsimError::NotHermitian(dev));
        }
        Ok(HermitianOp(entries))
    }

    /// Symmetrizes `(M + M†)/2`; used where round-off would break exact Hermiticity.
    fn from_raw(m: [[C64; DIM]; DIM]) -> Self {
        let mut out = [[ZERO; DIM]; DIM];
        for i in 0..DIM {
            for j in 0..DIM {
                out[i][j] = (m[i][j] + m[j][i].conj()) * 0.5;
            }
        }
        HermitianOp(out)
    }

    pub fn zero() -> Self {
        HermitianOp([[ZERO; DIM]; DIM])
    }

    pub fn identity() -> Self {
        let mut m = [[ZERO; DIM]; DIM];
        for (i, row) in m.iter_mut().enumerate() {
            row[i] = ONE;
        }
        HermitianOp(m)
    }

    /// `|v⟩⟨v|`
    pub fn projector(v: &StateVec) -> Self {
        let a = v.amplitudes();
        let mut m = [[ZERO; DIM]; DIM];
        for i in 0..DIM {
            for j in 0..DIM {
                m[i][j] = a[i] * a[j].conj();
            }
        }
        HermitianOp(m)
    }

    pub fn entries(&self) -> &[[C64; DIM]; DIM] {
        &self.0
    }

    pub fn scale(&self, c: f64) -> Self {
        HermitianOp(self.0.map(|row| row.map(|e| e * c)))
    }

    pub fn trace(&self) -> f64 {
        (0..DIM).map(|i| self.0[i][i].re).sum()
    }

    /// Raw matrix-vector product (the result is generally not unit norm).
    pub fn apply(&self, v: &StateVec) -> [C64; DIM] {
        let a = v.amplitudes();
        std::array::from_fn(|i| (0..DIM).map(|j| self.0[i][j] * a[j]).sum())
    }

    /// `⟨state|op|state⟩`
    pub fn expectation(&self, state: &StateVec) -> f64 {
        inner(state.amplitudes(), &self.apply(state)).re
    }

    /// Full spectral decomposition, eigenvalues in descending order.
    pub fn eigen(&self) -> Eigen {
        jacobi_eigen(self)
    }

    /// Largest eigenvalue with a unit eigenvector.
    pub fn top_eigenpair(&self) -> (f64, StateVec) {
        let e = self.eigen();
        (e.values[0], e.vectors[0])
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigen().values[DIM - 1]
    }

    /// `U† A U` for a unitary given by its columns.
    pub fn conjugate_by(&self, columns: &[StateVec; DIM]) -> HermitianOp {
        let applied: [[C64; DIM]; DIM] = std::array::from_fn(|j| self.apply(&columns[j]));
        let m = std::array::from_fn(|i| std::array::from_fn(|j| inner(columns[i].amplitudes(), &applied[j])));
        HermitianOp::from_raw(m)
    }
}

impl Add for HermitianOp {
    type Output = HermitianOp;
    fn add(self, rhs: HermitianOp) -> HermitianOp {
        let mut m = self.0;
        for i in 0..DIM {
            for j in 0..DIM {
                m[i][j] += rhs.0[i][j];
            }
        }
        HermitianOp(m)
    }
}

impl Mul<f64> for HermitianOp {
    type Output = HermitianOp;
    fn mul(self, rhs: f64) -> HermitianOp {
        self.scale(rhs)
    }
}

impl std::iter::Sum for HermitianOp {
    fn sum<I: Iterator<Item = HermitianOp>>(iter: I) -> HermitianOp {
        iter.fold(HermitianOp::zero(), |acc, op| acc + op)
    }
}

impl fmt::Debug for HermitianOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.0.iter()).finish()
    }
}

/// Eigenvalues (descending) and matching orthonormal eigenvectors.
#[derive(Debug, Clone)]
pub struct Eigen {
    pub values: [f64; DIM],
    pub vectors: [StateVec; DIM],
}

fn jacobi_eigen(op: &HermitianOp) -> Eigen {
    let mut a = op.0;
    // columns of v accumulate the rotations
    let mut v = HermitianOp::identity().0;
    let scale: f64 = a.iter().flatten().map(|e| e.norm_sqr()).sum::<f64>().sqrt().max(1e-300);

    for _sweep in 0..64 {
        let off: f64 = (0..DIM)
            .flat_map(|i| (0..DIM).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i][j].norm_sqr())
            .sum::<f64>()
            .sqrt();
        if off <= 1e-15 * scale {
            break;
        }
        for p in 0..DIM {
            for q in p + 1..DIM {
                let apq = a[p][q];
                let r = apq.norm();
                if r <= 1e-300 {
                    continue;
                }
                // phase so that the (p,q) entry becomes real positive
                let phase = apq.conj() / r;
                let tau = (a[q][q].re - a[p][p].re) / (2.0 * r);
                let t = if tau >= 0.0 {
                    1.0 / (tau + (1.0 + tau * tau).sqrt())
                } else {
                    -1.0 / (-tau + (1.0 + tau * tau).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                // U = D·G with D = diag(.., phase at q, ..), G the real rotation
                let upp = C64::new(c, 0.0);
                let upq = C64::new(s, 0.0);
                let uqp = phase * (-s);
                let uqq = phase * c;
                // A ← A·U (columns p, q)
                for row in a.iter_mut() {
                    let (ap, aq) = (row[p], row[q]);
                    row[p] = ap * upp + aq * uqp;
                    row[q] = ap * upq + aq * uqq;
                }
                // A ← U†·A (rows p, q)
                for col in 0..DIM {
                    let (ap, aq) = (a[p][col], a[q][col]);
                    a[p][col] = upp.conj() * ap + uqp.conj() * aq;
                    a[q][col] = upq.conj() * ap + uqq.conj() * aq;
                }
                a[p][q] = ZERO;
                a[q][p] = ZERO;
                for row in v.iter_mut() {
                    let (vp, vq) = (row[p], row[q]);
                    row[p] = vp * upp + vq * uqp;
                    row[q] = vp * upq + vq * uqq;
                }
            }
        }
    }

    let mut order: [usize; DIM] = [0, 1, 2, 3];
    order.sort_by(|&i, &j| a[j][j].re.total_cmp(&a[i][i].re));
    let values = order.map(|i| a[i][i].re);
    let vectors = order.map(|i| {
        let col: [C64; DIM] = std::array::from_fn(|r| v[r][i]);
        StateVec::normalized(col).expect("rotation columns are unit vectors").phase_normalized()
    });
    Eigen { values, vectors }
}

/// An ordered orthonormal basis of C^4.
#[derive(Clone, Copy, PartialEq, Debug)]
pub struct ProjectiveBasis([StateVec; DIM]);

impl ProjectiveBasis {
    pub fn new(vectors: [StateVec; DIM]) -> Result<Self, QsimError> {
        for i in 0..DIM {
            for j in i + 1..DIM {
                let ov = vectors[i].inner(&vectors[j]).norm();
                if ov > NORM_TOL {
                    return Err(QsimError::NotOrthogonal(i, j, ov));
                }
            }
        }
        Ok(ProjectiveBasis(vectors))
    }

    pub fn standard() -> Self {
        ProjectiveBasis(std::array::from_fn(StateVec::basis))
    }

    /// Orthonormalizes (modified Gram-Schmidt, two passes) Haar-random vectors.
    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        loop {
            let raw: [StateVec; DIM] = std::array::from_fn(|_| StateVec::random(rng));
            if let Some(b) = Self::orthonormalize(raw.map(|s| s.0)) {
                return b;
            }
        }
    }

    /// Gram-Schmidt on arbitrary columns; `None` when they are (nearly) dependent.
    pub fn orthonormalize(cols: [[C64; DIM]; DIM]) -> Option<Self> {
        let mut out: Vec<[C64; DIM]> = Vec::with_capacity(DIM);
        for col in cols {
            let mut w = col;
            for _ in 0..2 {
                for u in &out {
                    let c = inner(u, &w);
                    for k in 0..DIM {
                        w[k] -= u[k] * c;
                    }
                }
            }
            let n = norm_sqr(&w).sqrt();
            if n < 1e-8 {
                return None;
            }
            out.push(w.map(|z| z / n));
        }
        let vecs: [StateVec; DIM] = std::array::from_fn(|i| StateVec(out[i]));
        ProjectiveBasis::new(vecs).ok()
    }

    pub fn vectors(&self) -> &[StateVec; DIM] {
        &self.0
    }

    pub fn vector(&self, i: usize) -> &StateVec {
        &self.0[i]
    }

    /// Outcome probabilities `|⟨b_i|state⟩|²`.
    pub fn probabilities(&self, state: &StateVec) -> [f64; DIM] {
        self.0.map(|b| b.inner(state).norm_sqr())
    }

    /// Replaces two basis vectors with another orthonormal pair spanning the same plane.
    pub(crate) fn with_pair(&self, j: usize, l: usize, u: StateVec, w: StateVec) -> Self {
        let mut v = self.0;
        v[j] = u;
        v[l] = w;
        ProjectiveBasis(v)
    }
}

/// Projective measurement of `state` in `basis`.
///
/// Consumes exactly one `f64` from `rng`. The collapsed state is the chosen basis
/// vector with its phase normalized.
pub fn measure<R: Rng + ?Sized>(state: &StateVec, basis: &ProjectiveBasis, rng: &mut R) -> (usize, StateVec) {
    let probs = basis.probabilities(state);
    let u: f64 = rng.random::<f64>();
    let total: f64 = probs.iter().sum();
    let mut acc = 0.0;
    let mut outcome = None;
    for (i, p) in probs.iter().enumerate() {
        acc += p / total;
        if u < acc && *p > 0.0 {
            outcome = Some(i);
            break;
        }
    }
    // round-off can leave u just above the final cumulative sum
    let outcome = outcome.unwrap_or_else(|| probs.iter().rposition(|&p| p > 0.0).unwrap_or(DIM - 1));
    (outcome, basis.0[outcome].phase_normalized())
}

/// `op.expectation(state)` as a free function.
pub fn expectation(op: &HermitianOp, state: &StateVec) -> f64 {
    op.expectation(state)
}

/// `op.top_eigenpair()` as a free function.
pub fn top_eigenpair(op: &HermitianOp) -> (f64, StateVec) {
    op.top_eigenpair()
}

/// Top eigenvector of a 2×2 Hermitian matrix `[[a, b], [conj(b), d]]`.
pub(crate) fn top_eigvec_2x2(a: f64, b: C64, d: f64) -> (f64, C64, C64) {
    let mean = 0.5 * (a + d);
    let half = 0.5 * (a - d);
    let rad = (half * half + b.norm_sqr()).sqrt();
    let lambda = mean + rad;
    if b.norm() <= 1e-300 {
        return if a >= d { (a, ONE, ZERO) } else { (d, ZERO, ONE) };
    }
    // (A - λ)x = 0 → x = (b, λ - a) or (λ - d, conj b)
    let (x0, x1) = if half >= 0.0 {
        (C64::new(lambda - d, 0.0), b.conj())
    } else {
        (b, C64::new(lambda - a, 0.0))
    };
    let n = (x0.norm_sqr() + x1.norm_sqr()).sqrt();
    (lambda, x0 / n, x1 / n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const S: f64 = std::f64::consts::FRAC_1_SQRT_2;

    fn half_state() -> StateVec {
        StateVec::from_real([0.5; 4]).unwrap()
    }

    fn m0_basis() -> ProjectiveBasis {
        ProjectiveBasis::new([
            StateVec::from_real([S, S, 0.0, 0.0]).unwrap(),
            StateVec::from_real([S, -S, 0.0, 0.0]).unwrap(),
            StateVec::from_real([0.0, 0.0, S, S]).unwrap(),
            StateVec::from_real([0.0, 0.0, S, -S]).unwrap(),
        ])
        .unwrap()
    }

    #[test]
    fn rejects_unnormalized_state() {
        assert!(matches!(StateVec::from_real([1.0, 1.0, 0.0, 0.0]), Err(QsimError::NotNormalized(_))));
        assert_eq!(StateVec::normalized([ZERO; 4]), Err(QsimError::ZeroVector));
    }

    #[test]
    fn rejects_non_hermitian() {
        let mut m = HermitianOp::identity().0;
        m[0][1] = C64::new(0.0, 1.0);
        assert!(matches!(HermitianOp::new(m), Err(QsimError::NotHermitian(_))));
        m[1][0] = C64::new(0.0, -1.0);
        assert!(HermitianOp::new(m).is_ok());
    }

    #[test]
    fn rejects_non_orthogonal_basis() {
        let b = [StateVec::basis(0), StateVec::basis(0), StateVec::basis(2), StateVec::basis(3)];
        assert!(matches!(ProjectiveBasis::new(b), Err(QsimError::NotOrthogonal(0, 1, _))));
    }

    #[test]
    fn eigenstate_measures_deterministically() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let (o, c) = measure(&StateVec::basis(0), &ProjectiveBasis::standard(), &mut rng);
            assert_eq!(o, 0);
            assert_eq!(c, StateVec::basis(0));
            let (o, _) = measure(&StateVec::basis(3), &ProjectiveBasis::standard(), &mut rng);
            assert_eq!(o, 3);
        }
    }

    #[test]
    fn uniform_state_in_m0_basis() {
        let probs = m0_basis().probabilities(&half_state());
        assert!((probs[0] - 0.5).abs() < 1e-15);
        assert!(probs[1].abs() < 1e-15);
        assert!((probs[2] - 0.5).abs() < 1e-15);
        assert!(probs[3].abs() < 1e-15);

        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut counts = [0usize; 4];
        for _ in 0..20_000 {
            let (o, c) = measure(&half_state(), &m0_basis(), &mut rng);
            counts[o] += 1;
            assert_eq!(c, m0_basis().vector(o).phase_normalized());
        }
        assert_eq!(counts[1] + counts[3], 0);
        let f = counts[0] as f64 / 20_000.0;
        assert!((f - 0.5).abs() < 0.015, "{f}");
    }

    #[test]
    fn measurement_is_reproducible() {
        let basis = ProjectiveBasis::random(&mut ChaCha8Rng::seed_from_u64(3));
        let state = StateVec::random(&mut ChaCha8Rng::seed_from_u64(4));
        let run = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..200).map(|_| measure(&state, &basis, &mut rng).0).collect::<Vec<_>>()
        };
        assert_eq!(run(11), run(11));
    }

    #[test]
    fn collapse_phase_convention() {
        let s = StateVec::new([C64::new(0.0, 0.0), C64::new(0.0, -S), C64::new(S, 0.0), ZERO]).unwrap();
        let p = s.phase_normalized();
        assert_eq!(p.amplitudes()[0], ZERO);
        assert!(p.amplitudes()[1].im == 0.0 && p.amplitudes()[1].re > 0.0);
        assert!((p.amplitudes()[2] - C64::new(0.0, S)).norm() < 1e-15);
    }

    #[test]
    fn identity_and_projector_spectra() {
        let (v, _) = HermitianOp::identity().top_eigenpair();
        assert!((v - 1.0).abs() < 1e-12);
        let s = StateVec::random(&mut ChaCha8Rng::seed_from_u64(5));
        let (v, vec) = HermitianOp::projector(&s).top_eigenpair();
        assert!((v - 1.0).abs() < 1e-10);
        assert!((s.inner(&vec).norm() - 1.0).abs() < 1e-10);
        assert!((HermitianOp::projector(&s).expectation(&s) - 1.0).abs() < 1e-12);
        assert!((HermitianOp::identity().expectation(&s) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn two_by_two_top_vector() {
        for &(a, b, d) in &[(1.0, C64::new(0.3, -0.2), -0.5), (-2.0, C64::new(0.0, 1.0), 0.5), (0.2, ZERO, 0.7)] {
            let (l, x0, x1) = top_eigvec_2x2(a, b, d);
            let r0 = C64::new(a, 0.0) * x0 + b * x1 - x0 * l;
            let r1 = b.conj() * x0 + C64::new(d, 0.0) * x1 - x1 * l;
            assert!(r0.norm() < 1e-12 && r1.norm() < 1e-12);
            assert!(l >= a.max(d) - 1e-15);
        }
    }
}
