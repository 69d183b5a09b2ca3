//! The four-vertex Hidden Matching relation, its states, and the honest answering
//! measurement.
//!
//! Coloring bits are named `x1..x4` (1-indexed) so the parity formulas read the
//! same as on paper; the basis kets `|1⟩..|4⟩` occupy amplitude slots `0..3`.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use thiserror::Error;

use crate::qsim::{measure, ProjectiveBasis, StateVec};

/// A 4-bit coloring `x ∈ {0,1}⁴`.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Coloring([bool; 4]);

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("invalid coloring {0:?}: expected exactly four '0'/'1' characters")]
pub struct ParseColoringError(pub String);

impl Coloring {
    pub const fn new(bits: [bool; 4]) -> Self {
        Coloring(bits)
    }

    /// Index in `0..16` with `x1` as the most significant bit.
    pub fn from_index(index: u8) -> Self {
        assert!(index < 16, "coloring index out of range");
        Coloring(std::array::from_fn(|i| (index >> (3 - i)) & 1 == 1))
    }

    pub fn index(&self) -> u8 {
        self.0.iter().fold(0, |acc, &b| (acc << 1) | b as u8)
    }

    /// All 16 colorings in index order.
    pub fn all() -> impl Iterator<Item = Coloring> {
        (0..16).map(Coloring::from_index)
    }

    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        Coloring::from_index(rng.random_range(0..16))
    }

    /// Bit `x_i` for `i ∈ 1..=4`.
    pub fn x(&self, i: usize) -> bool {
        self.0[i - 1]
    }

    pub fn bits(&self) -> [bool; 4] {
        self.0
    }

    pub fn complement(&self) -> Self {
        Coloring(self.0.map(|b| !b))
    }

    pub fn weight(&self) -> u32 {
        self.0.iter().filter(|&&b| b).count() as u32
    }
}

impl fmt::Display for Coloring {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in self.0 {
            f.write_str(if b { "1" } else { "0" })?;
        }
        Ok(())
    }
}

impl fmt::Debug for Coloring {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Coloring({self})")
    }
}

impl FromStr for Coloring {
    type Err = ParseColoringError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bytes = s.as_bytes();
        if bytes.len() != 4 {
            return Err(ParseColoringError(s.to_string()));
        }
        let mut bits = [false; 4];
        for (slot, &c) in bits.iter_mut().zip(bytes) {
            *slot = match c {
                b'0' => false,
                b'1' => true,
                _ => return Err(ParseColoringError(s.to_string())),
            };
        }
        Ok(Coloring(bits))
    }
}

/// An HMP query bit `m`.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug, PartialOrd, Ord)]
pub struct Query(pub bool);

impl Query {
    pub const ZERO: Query = Query(false);
    pub const ONE: Query = Query(true);

    pub fn flip(self) -> Query {
        Query(!self.0)
    }
}

/// An answer `(a, b)`.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug, PartialOrd, Ord)]
pub struct Answer {
    pub a: bool,
    pub b: bool,
}

impl Answer {
    pub const fn new(a: bool, b: bool) -> Self {
        Answer { a, b }
    }

    /// The four answers in lexicographic order.
    pub const ALL: [Answer; 4] = [
        Answer::new(false, false),
        Answer::new(false, true),
        Answer::new(true, false),
        Answer::new(true, true),
    ];
}

/// `(x, m, a, b) ∈ HMP`: `b` is the parity of the vertex pair picked by `(m, a)`.
///
/// For `a = 0` the pair is `{1, 2+m}`; for `a = 1` it is `{3-m, 4}`.
pub fn hmp_relation(x: Coloring, m: Query, ans: Answer) -> bool {
    let m = m.0 as usize;
    let parity = if ans.a { x.x(3 - m) ^ x.x(4) } else { x.x(1) ^ x.x(2 + m) };
    ans.b == parity
}

/// The unique valid `b` for a given `(x, m, a)`.
pub fn valid_answer(x: Coloring, m: Query, a: bool) -> Answer {
    let b = !hmp_relation(x, m, Answer::new(a, false));
    Answer::new(a, b)
}

/// `α(x) = ½ Σ_i (−1)^{x_i} |i⟩`
pub fn hmp_state(x: Coloring) -> StateVec {
    StateVec::from_real(x.bits().map(|b| if b { -0.5 } else { 0.5 })).expect("HMP states are unit vectors")
}

/// Outcome index → answer, shared by both query bases.
pub const ANSWER_MAP: [Answer; 4] = Answer::ALL;

/// The measurement basis answering query `m`, with its outcome → answer map.
pub fn query_basis(m: Query) -> (ProjectiveBasis, [Answer; 4]) {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    // v1, v2 pair |1⟩ with |2+m⟩; v3, v4 pair |3-m⟩ with |4⟩
    let (p, q) = if m.0 { (2, 1) } else { (1, 2) };
    let pair = |i: usize, j: usize, sign: f64| {
        let mut a = [0.0; 4];
        a[i] = s;
        a[j] = sign * s;
        StateVec::from_real(a).expect("unit by construction")
    };
    let basis = ProjectiveBasis::new([pair(0, p, 1.0), pair(0, p, -1.0), pair(q, 3, 1.0), pair(q, 3, -1.0)])
        .expect("query bases are orthonormal");
    (basis, ANSWER_MAP)
}

/// Honest answering: measure in the `m` basis and read off `(a, b)`.
///
/// Works on any register, not only HMP-states; the collapsed state is returned
/// so callers can keep using the register.
pub fn answer_query<R: Rng + ?Sized>(register: &StateVec, m: Query, rng: &mut R) -> (Answer, StateVec) {
    let (basis, map) = query_basis(m);
    let (outcome, collapsed) = measure(register, &basis, rng);
    (map[outcome], collapsed)
}

/// Answers `first`, then answers the other query on the collapsed register.
///
/// Returns `(answer to m=0, answer to m=1)`.
pub fn answer_both_sequential<R: Rng + ?Sized>(register: &StateVec, first: Query, rng: &mut R) -> (Answer, Answer) {
    let (a1, collapsed) = answer_query(register, first, rng);
    let (a2, _) = answer_query(&collapsed, first.flip(), rng);
    if first.0 {
        (a2, a1)
    } else {
        (a1, a2)
    }
}
