//! Quantum retrieval games: exact selective values, strategy evaluation and a
//! seesaw search over rank-1 projective strategies.

use std::fmt;

use rand::Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::hmp::{hmp_relation, hmp_state, Answer, Coloring, Query};
use crate::qsim::{measure, top_eigvec_2x2, HermitianOp, ProjectiveBasis, StateVec, DIM};
use crate::seed::derive_rng;

pub const PSD_TOL: f64 = 1e-10;
pub const TRACE_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GameError {
    #[error("game needs at least one hypothesis and one answer")]
    Empty,
    #[error("hypothesis {0} is not positive semidefinite (min eigenvalue {1})")]
    NotPsd(usize, f64),
    #[error("sum of hypothesis operators is zero")]
    ZeroTotal,
    #[error("total trace is {0}, expected 1")]
    TraceNotOne(f64),
    #[error("relation pair ({0}, {1}) is out of range")]
    RelationOutOfRange(usize, usize),
}

/// A family of subnormalized states `ρ_a` and a relation `σ` between answers and
/// hypotheses. Answer and hypothesis labels are indices.
#[derive(Debug, Clone)]
pub struct RetrievalGame {
    hypotheses: Vec<HermitianOp>,
    answer_count: usize,
    /// `relation[i][a]` — answer `i` is correct for hypothesis `a`
    relation: Vec<Vec<bool>>,
    /// `Σ_{a:(i,a)∈σ} ρ_a` for each answer `i`
    correctness: Vec<HermitianOp>,
    total: HermitianOp,
}

impl RetrievalGame {
    pub fn new(
        hypotheses: Vec<HermitianOp>,
        answer_count: usize,
        relation: impl IntoIterator<Item = (usize, usize)>,
    ) -> Result<Self, GameError> {
        if hypotheses.is_empty() || answer_count == 0 {
            return Err(GameError::Empty);
        }
        for (a, rho) in hypotheses.iter().enumerate() {
            let min = rho.min_eigenvalue();
            if min < -PSD_TOL {
                return Err(GameError::NotPsd(a, min));
            }
        }
        let total: HermitianOp = hypotheses.iter().copied().sum();
        let tr = total.trace();
        if tr.abs() < 1e-12 {
            return Err(GameError::ZeroTotal);
        }
        if (tr - 1.0).abs() > TRACE_TOL {
            return Err(GameError::TraceNotOne(tr));
        }
        let mut rel = vec![vec![false; hypotheses.len()]; answer_count];
        for (i, a) in relation {
            if i >= answer_count || a >= hypotheses.len() {
                return Err(GameError::RelationOutOfRange(i, a));
            }
            rel[i][a] = true;
        }
        let correctness = rel
            .iter()
            .map(|row| row.iter().zip(&hypotheses).filter(|(r, _)| **r).map(|(_, h)| *h).sum())
            .collect();
        Ok(RetrievalGame { hypotheses, answer_count, relation: rel, correctness, total })
    }

    pub fn hypotheses(&self) -> &[HermitianOp] {
        &self.hypotheses
    }

    pub fn answer_count(&self) -> usize {
        self.answer_count
    }

    pub fn related(&self, answer: usize, hypothesis: usize) -> bool {
        self.relation[answer][hypothesis]
    }

    pub fn relation_size(&self) -> usize {
        self.relation.iter().flatten().filter(|&&r| r).count()
    }

    pub fn correctness_op(&self, answer: usize) -> &HermitianOp {
        &self.correctness[answer]
    }

    pub fn total_op(&self) -> &HermitianOp {
        &self.total
    }
}

/// Answers to both HMP queries from one register: `(a₀, b₀, a₁, b₁)`.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct DoubleAnswer {
    pub m0: Answer,
    pub m1: Answer,
}

impl DoubleAnswer {
    /// Index in `0..16`, lexicographic in `(a₀, b₀, a₁, b₁)`.
    pub fn index(&self) -> usize {
        (self.m0.a as usize) << 3 | (self.m0.b as usize) << 2 | (self.m1.a as usize) << 1 | self.m1.b as usize
    }

    pub fn from_index(i: usize) -> Self {
        assert!(i < 16, "double answer index out of range");
        let bit = |k: usize| (i >> k) & 1 == 1;
        DoubleAnswer { m0: Answer::new(bit(3), bit(2)), m1: Answer::new(bit(1), bit(0)) }
    }

    pub fn for_query(&self, m: Query) -> Answer {
        if m.0 {
            self.m1
        } else {
            self.m0
        }
    }

    pub fn valid_for(&self, x: Coloring) -> bool {
        hmp_relation(x, Query::ZERO, self.m0) && hmp_relation(x, Query::ONE, self.m1)
    }
}

impl fmt::Debug for DoubleAnswer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let b = |v: bool| v as u8;
        write!(f, "({},{},{},{})", b(self.m0.a), b(self.m0.b), b(self.m1.a), b(self.m1.b))
    }
}

/// The double-answer game: uniform `x`, hypotheses `|α(x)⟩⟨α(x)|/16`, answers
/// are [`DoubleAnswer`] indices, correct iff both halves satisfy the relation.
pub fn game_gh() -> RetrievalGame {
    let hypotheses = Coloring::all().map(|x| HermitianOp::projector(&hmp_state(x)).scale(1.0 / 16.0)).collect();
    let relation = (0..16).flat_map(|i| {
        let ans = DoubleAnswer::from_index(i);
        Coloring::all().filter(move |&x| ans.valid_for(x)).map(move |x| (i, x.index() as usize))
    });
    RetrievalGame::new(hypotheses, 16, relation).expect("G_H is a valid game")
}

/// A rank-1 projective measurement with a deterministic answer per outcome.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeasurementStrategy {
    pub basis: ProjectiveBasis,
    pub assignment: [usize; DIM],
}

impl MeasurementStrategy {
    pub fn new(basis: ProjectiveBasis, assignment: [usize; DIM]) -> Self {
        MeasurementStrategy { basis, assignment }
    }

    /// Hadamard-basis strategy for `G_H`: each outcome identifies an even-weight
    /// coloring up to complement and answers its parities with `a₀ = a₁ = 0`.
    pub fn hadamard() -> Self {
        let rows = [[1.0, 1.0, 1.0, 1.0], [1.0, -1.0, 1.0, -1.0], [1.0, 1.0, -1.0, -1.0], [1.0, -1.0, -1.0, 1.0]];
        let vecs = rows.map(|r| StateVec::from_real(r.map(|v: f64| v / 2.0)).expect("unit"));
        let assignment = rows.map(|r| {
            let y = Coloring::new(r.map(|v| v < 0.0));
            DoubleAnswer {
                m0: crate::hmp::valid_answer(y, Query::ZERO, false),
                m1: crate::hmp::valid_answer(y, Query::ONE, false),
            }
            .index()
        });
        MeasurementStrategy::new(ProjectiveBasis::new(vecs).expect("orthonormal"), assignment)
    }

    /// Measure in the `m` query basis, answer that query honestly and guess a
    /// fixed answer for the other one.
    pub fn query_then_guess(m: Query, guess: Answer) -> Self {
        let (basis, map) = crate::hmp::query_basis(m);
        let assignment = map.map(|ans| {
            if m.0 {
                DoubleAnswer { m0: guess, m1: ans }
            } else {
                DoubleAnswer { m0: ans, m1: guess }
            }
            .index()
        });
        MeasurementStrategy::new(basis, assignment)
    }

    /// Measures `state` and returns the answer label with the collapsed state.
    pub fn apply<R: Rng + ?Sized>(&self, state: &StateVec, rng: &mut R) -> (usize, StateVec) {
        let (outcome, collapsed) = measure(state, &self.basis, rng);
        (self.assignment[outcome], collapsed)
    }
}

/// Supremum over selective projections of the conditional success probability.
///
/// The supremum is attained by a single rank-1 outcome `e` answering one label
/// `i`, so it equals `max_i λ_max(S^{-1/2} A_i S^{-1/2})` on the support of
/// `S = Σ_a ρ_a`, where `A_i` is the correctness operator of answer `i`.
pub fn selective_value(game: &RetrievalGame) -> f64 {
    let eig = game.total.eigen();
    let cutoff = eig.values[0] * 1e-12;
    let inv_sqrt: [f64; DIM] = eig.values.map(|v| if v > cutoff { 1.0 / v.sqrt() } else { 0.0 });
    (0..game.answer_count)
        .map(|i| {
            let b = game.correctness[i].conjugate_by(&eig.vectors);
            let m = std::array::from_fn(|r| std::array::from_fn(|c| b.entries()[r][c] * (inv_sqrt[r] * inv_sqrt[c])));
            HermitianOp::new(m).expect("congruence keeps Hermiticity").top_eigenpair().0
        })
        .fold(0.0, f64::max)
}

/// Exact value `Σ_j ⟨e_j| A_{assign(j)} |e_j⟩` of a physical strategy.
pub fn evaluate_strategy(game: &RetrievalGame, strat: &MeasurementStrategy) -> f64 {
    strat
        .basis
        .vectors()
        .iter()
        .zip(strat.assignment)
        .map(|(e, i)| {
            assert!(i < game.answer_count, "strategy answer {i} not in game");
            game.correctness[i].expectation(e)
        })
        .sum()
}

/// Best answer per outcome; ties go to the smallest label.
fn greedy_assignment(game: &RetrievalGame, basis: &ProjectiveBasis) -> [usize; DIM] {
    basis.vectors().map(|e| {
        let mut best = (0, f64::NEG_INFINITY);
        for (i, op) in game.correctness.iter().enumerate() {
            let v = op.expectation(&e);
            if v > best.1 {
                best = (i, v);
            }
        }
        best.0
    })
}

/// One seesaw run from a fixed starting basis.
#[derive(Debug, Clone)]
pub struct AscentRun {
    pub strategy: MeasurementStrategy,
    pub value: f64,
    /// value after every full (assignment, basis) round, starting point first
    pub history: Vec<f64>,
}

const MAX_ROUNDS: usize = 400;

/// Alternating ascent: reassign outcomes greedily, then rotate each pair of basis
/// vectors within their plane onto the top eigenvector of the difference of the
/// two answers' correctness operators.
pub fn ascend(game: &RetrievalGame, start: ProjectiveBasis) -> AscentRun {
    let mut basis = start;
    let mut assignment = greedy_assignment(game, &basis);
    let mut value = evaluate_strategy(game, &MeasurementStrategy::new(basis, assignment));
    let mut history = vec![value];

    for _ in 0..MAX_ROUNDS {
        for j in 0..DIM {
            for l in j + 1..DIM {
                let a = &game.correctness[assignment[j]];
                let b = &game.correctness[assignment[l]];
                let (u, w) = (*basis.vector(j), *basis.vector(l));
                let m00 = a.expectation(&u) - b.expectation(&u);
                let m11 = a.expectation(&w) - b.expectation(&w);
                let m01 = matrix_element(a, &u, &w) - matrix_element(b, &u, &w);
                let (top, c0, c1) = top_eigvec_2x2(m00, m01, m11);
                if top <= m00 {
                    continue;
                }
                let ua = u.amplitudes();
                let wa = w.amplitudes();
                let nu = std::array::from_fn(|k| c0 * ua[k] + c1 * wa[k]);
                let nw = std::array::from_fn(|k| -c1.conj() * ua[k] + c0.conj() * wa[k]);
                if let (Ok(nu), Ok(nw)) = (StateVec::normalized(nu), StateVec::normalized(nw)) {
                    basis = basis.with_pair(j, l, nu, nw);
                }
            }
        }
        // clean up round-off drift before the next round
        if let Some(b) = ProjectiveBasis::orthonormalize(basis.vectors().map(|v| *v.amplitudes())) {
            basis = b;
        }
        assignment = greedy_assignment(game, &basis);
        let next = evaluate_strategy(game, &MeasurementStrategy::new(basis, assignment));
        history.push(next);
        let gain = next - value;
        value = value.max(next);
        if gain < 1e-13 {
            break;
        }
    }
    let strategy = MeasurementStrategy::new(basis, assignment);
    AscentRun { value: evaluate_strategy(game, &strategy), strategy, history }
}

fn matrix_element(op: &HermitianOp, u: &StateVec, w: &StateVec) -> crate::qsim::C64 {
    let aw = op.apply(w);
    u.amplitudes().iter().zip(aw).map(|(x, y)| x.conj() * y).sum()
}

/// Seesaw search from `restarts` random bases; returns the best strategy found.
///
/// Restarts run in parallel on streams derived from one draw of `rng` and are
/// merged by max (earliest restart wins ties), so the result is deterministic.
pub fn physical_value_search<R: Rng + ?Sized>(
    game: &RetrievalGame,
    restarts: usize,
    rng: &mut R,
) -> (f64, MeasurementStrategy) {
    assert!(restarts >= 1, "need at least one restart");
    let base: u64 = rng.random();
    let best = (0..restarts)
        .into_par_iter()
        .map(|r| {
            let mut stream = derive_rng(base, "physical-restart", r as u64);
            (r, ascend(game, ProjectiveBasis::random(&mut stream)))
        })
        .reduce_with(|x, y| {
            if y.1.value > x.1.value || (y.1.value == x.1.value && y.0 < x.0) {
                y
            } else {
                x
            }
        })
        .expect("restarts >= 1");
    let strat = best.1.strategy;
    (evaluate_strategy(game, &strat), strat)
}

/// One round of the `k`-fold product of `G_H`: win iff every instance is won.
pub fn product_game_trial<R: Rng + ?Sized>(k: usize, strat: &MeasurementStrategy, rng: &mut R) -> bool {
    assert!(k >= 1, "product game needs k >= 1");
    let mut won = true;
    for _ in 0..k {
        let x = Coloring::random(rng);
        let (label, _) = strat.apply(&hmp_state(x), rng);
        won &= DoubleAnswer::from_index(label).valid_for(x);
    }
    won
}
