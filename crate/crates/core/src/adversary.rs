//! Counterfeiting strategies and the both-must-pass evaluation harness.
//!
//! Counterfeits are products of per-register response sources. Entangled
//! multi-register attacks are outside this model.

use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use rand::{Rng, RngCore};
use thiserror::Error;

use crate::games::{DoubleAnswer, MeasurementStrategy};
use crate::hmp::{answer_query, hmp_relation, hmp_state, Answer, Coloring, Query};
use crate::money::{BankDb, Coin, CoinId, VerParams};
use crate::montecarlo::{estimate, Estimate};
use crate::protocol::{run_ver, HolderError, InProcessTransport, Responder, Transport, DEFAULT_RETRY_CAP};
use crate::qsim::StateVec;

const TIE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub enum ResponseSource {
    /// Measures on demand and collapses.
    QuantumRegister(StateVec),
    AnswerTable { m0: Answer, m1: Answer },
    RandomAnswer,
}

impl ResponseSource {
    fn respond(&mut self, m: Query, rng: &mut dyn RngCore) -> Answer {
        match self {
            ResponseSource::QuantumRegister(state) => {
                let (ans, collapsed) = answer_query(state, m, rng);
                *state = collapsed;
                ans
            }
            ResponseSource::AnswerTable { m0, m1 } => {
                if m.0 {
                    *m1
                } else {
                    *m0
                }
            }
            ResponseSource::RandomAnswer => Answer::ALL[rng.random_range(0..4)],
        }
    }
}

/// A forged coin: one response source per register, claiming some coin id.
///
/// It ignores usage marks and plays a uniformly random `2t/3`-subset of each
/// challenge.
#[derive(Debug, Clone, PartialEq)]
pub struct Counterfeit {
    pub claimed_id: CoinId,
    pub responders: Vec<ResponseSource>,
}

impl Counterfeit {
    pub fn new(claimed_id: CoinId, responders: Vec<ResponseSource>) -> Self {
        Counterfeit { claimed_id, responders }
    }

    pub fn random(claimed_id: CoinId, k: usize) -> Self {
        Counterfeit::new(claimed_id, vec![ResponseSource::RandomAnswer; k])
    }

    /// Wraps the coin's current registers.
    pub fn from_coin(coin: &Coin) -> Self {
        Counterfeit::new(coin.id, coin.registers.iter().map(|&r| ResponseSource::QuantumRegister(r)).collect())
    }
}

fn random_subset(challenge: &[usize], played: usize, rng: &mut dyn RngCore) -> Vec<usize> {
    let mut chosen: Vec<usize> = index::sample(rng, challenge.len(), played).into_iter().map(|j| challenge[j]).collect();
    chosen.sort_unstable();
    chosen
}

impl Responder for Counterfeit {
    fn coin_id(&self) -> CoinId {
        self.claimed_id
    }

    fn register_count(&self) -> usize {
        self.responders.len()
    }

    fn choose_subset(&mut self, challenge: &[usize], played: usize, rng: &mut dyn RngCore) -> Result<Vec<usize>, HolderError> {
        Ok(random_subset(challenge, played, rng))
    }

    fn answer(&mut self, subset: &[usize], queries: &[bool], rng: &mut dyn RngCore) -> Vec<Answer> {
        subset.iter().zip(queries).map(|(&i, &m)| self.responders[i].respond(Query(m), rng)).collect()
    }
}

/// Caps the number of auxiliary Ver sessions an attack may run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttackBudget {
    pub max_aux_instances: usize,
    pub aux_completed: usize,
    pub aux_won: usize,
}

impl AttackBudget {
    pub fn new(max_aux_instances: usize) -> Self {
        AttackBudget { max_aux_instances, aux_completed: 0, aux_won: 0 }
    }

    pub fn remaining(&self) -> usize {
        self.max_aux_instances - self.aux_completed
    }

    fn record(&mut self, won: bool) {
        assert!(self.aux_completed < self.max_aux_instances, "attack exceeded its budget");
        self.aux_completed += 1;
        self.aux_won += won as usize;
    }
}

/// The real coin paired with pure guesswork.
pub fn attack_clone_split(coin: &Coin) -> (Counterfeit, Counterfeit) {
    (Counterfeit::from_coin(coin), Counterfeit::random(coin.id, coin.k()))
}

/// Measures every register once with `strat` and stores the resulting answer
/// pair; both counterfeits carry the same tables.
pub fn attack_measure_all<R: Rng + ?Sized>(coin: &Coin, strat: &MeasurementStrategy, rng: &mut R) -> (Counterfeit, Counterfeit) {
    let responders: Vec<ResponseSource> = coin
        .registers
        .iter()
        .map(|r| {
            let (label, _) = strat.apply(r, rng);
            let d = DoubleAnswer::from_index(label);
            ResponseSource::AnswerTable { m0: d.m0, m1: d.m1 }
        })
        .collect();
    let c = Counterfeit::new(coin.id, responders);
    (c.clone(), c)
}

/// How a rejected auxiliary session updates the per-register beliefs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BeliefUpdate {
    /// Each of the `n` played registers is blamed with probability `1/n`.
    #[default]
    EqualBlame,
    /// Exact marginal likelihood of a rejection under the current independent beliefs.
    Marginal,
}

/// Posterior over a register's coloring, up to complement.
///
/// Class `c` in `0..8` stands for the coloring with `x₁ = 0` and index `c`;
/// a coloring and its complement answer every query identically.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegisterBelief {
    weights: [f64; 8],
}

impl Default for RegisterBelief {
    fn default() -> Self {
        RegisterBelief { weights: [1.0 / 8.0; 8] }
    }
}

impl RegisterBelief {
    fn class(c: usize) -> Coloring {
        Coloring::from_index(c as u8)
    }

    pub fn weights(&self) -> &[f64; 8] {
        &self.weights
    }

    fn reweight(&mut self, f: impl Fn(Coloring) -> f64) {
        let mut next = self.weights;
        for (c, w) in next.iter_mut().enumerate() {
            *w *= f(Self::class(c));
        }
        let total: f64 = next.iter().sum();
        // an inconsistent observation leaves the belief untouched
        if total > 0.0 {
            self.weights = next.map(|w| w / total);
        }
    }

    /// Conditions on outcome `outcome` of measuring `α(x)` in `strat`'s basis.
    pub fn observe_measurement(&mut self, strat: &MeasurementStrategy, outcome: usize) {
        let v = *strat.basis.vector(outcome);
        self.reweight(|x| v.inner(&hmp_state(x)).norm_sqr());
    }

    pub fn p_valid(&self, m: Query, ans: Answer) -> f64 {
        (0..8).filter(|&c| hmp_relation(Self::class(c), m, ans)).map(|c| self.weights[c]).sum()
    }

    /// Most likely valid answer, ties to the lexicographically smallest.
    pub fn best_answer(&self, m: Query) -> (Answer, f64) {
        let mut best = (Answer::ALL[0], self.p_valid(m, Answer::ALL[0]));
        for ans in &Answer::ALL[1..] {
            let p = self.p_valid(m, *ans);
            if p > best.1 + TIE_TOL {
                best = (*ans, p);
            }
        }
        best
    }

    /// Multiplies classes where `(m, ans)` is valid by `if_valid` and the rest by `if_invalid`.
    pub fn update(&mut self, m: Query, ans: Answer, if_valid: f64, if_invalid: f64) {
        self.reweight(|x| if hmp_relation(x, m, ans) { if_valid } else { if_invalid });
    }
}

/// Measures the coin once, then learns from auxiliary Ver sessions by
/// answering with its current best guesses and watching the verdicts.
pub struct AdaptiveAttacker {
    coin_id: CoinId,
    beliefs: Vec<RegisterBelief>,
    update: BeliefUpdate,
    last_played: Vec<(usize, Query, Answer)>,
}

impl AdaptiveAttacker {
    pub fn measure_coin<R: Rng + ?Sized>(coin: &Coin, strat: &MeasurementStrategy, update: BeliefUpdate, rng: &mut R) -> Self {
        let beliefs = coin
            .registers
            .iter()
            .map(|r| {
                let (outcome, _) = crate::qsim::measure(r, &strat.basis, rng);
                let mut b = RegisterBelief::default();
                b.observe_measurement(strat, outcome);
                b
            })
            .collect();
        AdaptiveAttacker { coin_id: coin.id, beliefs, update, last_played: Vec::new() }
    }

    pub fn beliefs(&self) -> &[RegisterBelief] {
        &self.beliefs
    }

    /// Answer tables from the current beliefs.
    pub fn counterfeit(&self) -> Counterfeit {
        let responders = self
            .beliefs
            .iter()
            .map(|b| ResponseSource::AnswerTable { m0: b.best_answer(Query::ZERO).0, m1: b.best_answer(Query::ONE).0 })
            .collect();
        Counterfeit::new(self.coin_id, responders)
    }
}

impl Responder for AdaptiveAttacker {
    fn coin_id(&self) -> CoinId {
        self.coin_id
    }

    fn register_count(&self) -> usize {
        self.beliefs.len()
    }

    fn choose_subset(&mut self, challenge: &[usize], played: usize, rng: &mut dyn RngCore) -> Result<Vec<usize>, HolderError> {
        Ok(random_subset(challenge, played, rng))
    }

    fn answer(&mut self, subset: &[usize], queries: &[bool], _rng: &mut dyn RngCore) -> Vec<Answer> {
        self.last_played = subset
            .iter()
            .zip(queries)
            .map(|(&i, &m)| (i, Query(m), self.beliefs[i].best_answer(Query(m)).0))
            .collect();
        self.last_played.iter().map(|p| p.2).collect()
    }

    fn observe_verdict(&mut self, valid: bool) {
        let played = std::mem::take(&mut self.last_played);
        if played.is_empty() {
            return;
        }
        if valid {
            for &(i, m, ans) in &played {
                self.beliefs[i].update(m, ans, 1.0, 0.0);
            }
            return;
        }
        let n = played.len() as f64;
        let q: Vec<f64> = played.iter().map(|&(i, m, ans)| self.beliefs[i].p_valid(m, ans)).collect();
        for (j, &(i, m, ans)) in played.iter().enumerate() {
            let if_valid = match self.update {
                BeliefUpdate::EqualBlame => 1.0 - 1.0 / n,
                BeliefUpdate::Marginal => {
                    let others: f64 = q.iter().enumerate().filter(|&(l, _)| l != j).map(|(_, p)| p).product();
                    1.0 - others
                }
            };
            self.beliefs[i].update(m, ans, if_valid, 1.0);
        }
    }
}

/// Spends the budget on auxiliary sessions against `transport`, then emits two
/// identical answer-table counterfeits.
pub fn attack_adaptive_replay<T: Transport + ?Sized>(
    coin: &Coin,
    transport: &mut T,
    budget: &mut AttackBudget,
    strat: &MeasurementStrategy,
    update: BeliefUpdate,
    rng: &mut dyn RngCore,
) -> (Counterfeit, Counterfeit) {
    let mut attacker = AdaptiveAttacker::measure_coin(coin, strat, update, rng);
    while budget.remaining() > 0 {
        let won = match run_ver(transport, &mut attacker, rng, 1) {
            Ok(out) => out.valid,
            Err(_) => {
                let _ = transport.reset();
                false
            }
        };
        budget.record(won);
    }
    let c = attacker.counterfeit();
    (c.clone(), c)
}

/// One final double verification: two independent sessions, fresh bank randomness each.
pub fn both_pass<R: Rng + ?Sized>(db: &BankDb, c1: &Counterfeit, c2: &Counterfeit, rng: &mut R) -> bool {
    let session = |c: &Counterfeit, rng: &mut R| {
        let mut transport = InProcessTransport::new(db, rng.random());
        let mut c = c.clone();
        let mut holder_rng = <crate::seed::StreamRng as rand::SeedableRng>::from_seed(rng.random());
        run_ver(&mut transport, &mut c, &mut holder_rng, DEFAULT_RETRY_CAP).is_ok_and(|o| o.valid)
    };
    let first = session(c1, rng);
    let second = session(c2, rng);
    first && second
}

/// Fraction of trials in which both counterfeits pass. Quantum sources are
/// re-prepared from the given snapshot every trial.
pub fn evaluate_counterfeits(db: &BankDb, c1: &Counterfeit, c2: &Counterfeit, trials: u64, seed: u64) -> Estimate {
    estimate(trials, seed, "evaluate", |rng, _| both_pass(db, c1, c2, rng))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AttackKind {
    CloneSplit,
    MeasureAll,
    AdaptiveReplay,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("unknown attack strategy {0:?}")]
pub struct UnknownAttack(pub String);

impl AttackKind {
    pub const ALL: [AttackKind; 3] = [AttackKind::CloneSplit, AttackKind::MeasureAll, AttackKind::AdaptiveReplay];

    pub fn name(&self) -> &'static str {
        match self {
            AttackKind::CloneSplit => "clone-split",
            AttackKind::MeasureAll => "measure-all",
            AttackKind::AdaptiveReplay => "adaptive-replay",
        }
    }
}

impl fmt::Display for AttackKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AttackKind {
    type Err = UnknownAttack;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        AttackKind::ALL.into_iter().find(|k| k.name() == s).ok_or_else(|| UnknownAttack(s.to_string()))
    }
}

#[derive(Debug, Clone)]
pub struct AttackConfig {
    pub kind: AttackKind,
    pub params: VerParams,
    /// auxiliary sessions; only the adaptive attack uses them
    pub budget: usize,
    pub strategy: MeasurementStrategy,
    pub update: BeliefUpdate,
}

impl AttackConfig {
    pub fn new(kind: AttackKind, params: VerParams, budget: usize) -> Self {
        AttackConfig { kind, params, budget, strategy: MeasurementStrategy::hadamard(), update: BeliefUpdate::default() }
    }
}

/// Fresh bank and coin, run the attack, then one double verification.
pub fn attack_trial<R: Rng + ?Sized>(cfg: &AttackConfig, rng: &mut R) -> bool {
    let mut db = BankDb::new(cfg.params);
    let coin = db.mint(rng).expect("a fresh bank has ids to spare");
    let (c1, c2) = match cfg.kind {
        AttackKind::CloneSplit => attack_clone_split(&coin),
        AttackKind::MeasureAll => attack_measure_all(&coin, &cfg.strategy, rng),
        AttackKind::AdaptiveReplay => {
            let mut transport = InProcessTransport::new(&db, rng.random());
            let mut budget = AttackBudget::new(cfg.budget);
            let mut attack_rng = <crate::seed::StreamRng as rand::SeedableRng>::from_seed(rng.random());
            let pair = attack_adaptive_replay(&coin, &mut transport, &mut budget, &cfg.strategy, cfg.update, &mut attack_rng);
            assert_eq!(budget.aux_completed, cfg.budget);
            pair
        }
    };
    both_pass(&db, &c1, &c2, rng)
}

pub const CSV_HEADER: &str = "strategy,k,t,U,trials,both_pass_rate,stderr,seed";

#[derive(Debug, Clone, PartialEq)]
pub struct AttackReport {
    pub kind: AttackKind,
    pub k: usize,
    pub t: usize,
    pub budget: usize,
    pub estimate: Estimate,
    pub seed: u64,
}

impl AttackReport {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{:.16e},{:.16e},{}",
            self.kind,
            self.k,
            self.t,
            self.budget,
            self.estimate.trials,
            self.estimate.rate(),
            self.estimate.stderr(),
            self.seed
        )
    }
}

pub fn run_attack_experiment(cfg: &AttackConfig, trials: u64, seed: u64) -> AttackReport {
    let domain = format!("attack/{}/{}", cfg.kind, cfg.budget);
    let est = estimate(trials, seed, &domain, |rng, _| attack_trial(cfg, rng));
    let budget = if cfg.kind == AttackKind::AdaptiveReplay { cfg.budget } else { 0 };
    AttackReport { kind: cfg.kind, k: cfg.params.k(), t: cfg.params.t(), budget, estimate: est, seed }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::games::{evaluate_strategy, game_gh};
    use crate::seed::derive_rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn bank(k: usize, t: usize) -> (BankDb, Coin) {
        let mut db = BankDb::new(VerParams::new(k, t).unwrap());
        let coin = db.mint(&mut ChaCha8Rng::seed_from_u64(11)).unwrap();
        (db, coin)
    }

    #[test]
    fn attack_names_roundtrip() {
        for k in AttackKind::ALL {
            assert_eq!(k.name().parse::<AttackKind>().unwrap(), k);
        }
        assert!("mint-more".parse::<AttackKind>().is_err());
    }

    #[test]
    fn true_coin_pair_always_passes() {
        let (db, coin) = bank(24, 6);
        let c = Counterfeit::from_coin(&coin);
        let est = evaluate_counterfeits(&db, &c, &c, 1000, 1);
        assert_eq!(est.successes, 1000);
    }

    #[test]
    fn clone_split_halves() {
        let (db, coin) = bank(24, 6);
        let (a, b) = attack_clone_split(&coin);
        assert!(a.responders.iter().all(|r| matches!(r, ResponseSource::QuantumRegister(_))));
        assert!(b.responders.iter().all(|r| *r == ResponseSource::RandomAnswer));
        let both = evaluate_counterfeits(&db, &a, &b, 20_000, 2);
        assert!((both.rate() - 0.0625).abs() < 4.0 * both.sigma_at(0.0625), "{}", both.rate());
        let junk = evaluate_counterfeits(&db, &b, &b, 40_000, 3);
        let p = 1.0 / 256.0;
        assert!((junk.rate() - p).abs() < 4.0 * junk.sigma_at(p), "{}", junk.rate());
    }

    #[test]
    fn forged_id_fails() {
        let (db, coin) = bank(24, 6);
        let mut c = Counterfeit::from_coin(&coin);
        c.claimed_id = CoinId(77);
        assert_eq!(evaluate_counterfeits(&db, &c, &c, 50, 4).successes, 0);
    }

    #[test]
    fn measure_all_register_rates_match_game_value() {
        let strat = MeasurementStrategy::hadamard();
        let both = estimate(200_000, 5, "reg", |rng, _| {
            let x = Coloring::random(rng);
            let (label, _) = strat.apply(&hmp_state(x), rng);
            DoubleAnswer::from_index(label).valid_for(x)
        });
        let exact = evaluate_strategy(&game_gh(), &strat);
        assert!((both.rate() - exact).abs() < 4.0 * both.sigma_at(exact));
        let m0 = estimate(200_000, 6, "reg0", |rng, _| {
            let x = Coloring::random(rng);
            let (label, _) = strat.apply(&hmp_state(x), rng);
            hmp_relation(x, Query::ZERO, DoubleAnswer::from_index(label).m0)
        });
        assert!((m0.rate() - 0.75).abs() < 4.0 * m0.sigma_at(0.75));
    }

    #[test]
    fn belief_after_hadamard_outcome() {
        let strat = MeasurementStrategy::hadamard();
        for outcome in 0..4 {
            let mut b = RegisterBelief::default();
            b.observe_measurement(&strat, outcome);
            assert!((b.weights().iter().sum::<f64>() - 1.0).abs() < 1e-12);
            let d = DoubleAnswer::from_index(strat.assignment[outcome]);
            for m in [Query::ZERO, Query::ONE] {
                let (ans, p) = b.best_answer(m);
                assert_eq!(ans, d.for_query(m));
                assert!((p - 0.75).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn acceptance_pins_played_answers() {
        let mut b = RegisterBelief::default();
        b.update(Query::ZERO, Answer::new(false, true), 1.0, 0.0);
        assert!((b.p_valid(Query::ZERO, Answer::new(false, true)) - 1.0).abs() < 1e-12);
        // a contradicting certain observation is ignored rather than zeroing the belief
        b.update(Query::ZERO, Answer::new(false, false), 1.0, 0.0);
        assert!((b.weights().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn adaptive_with_zero_budget_equals_measure_all() {
        let (db, coin) = bank(24, 6);
        let strat = MeasurementStrategy::hadamard();
        for i in 0..20 {
            let (m, _) = attack_measure_all(&coin, &strat, &mut derive_rng(9, "x", i));
            let mut transport = InProcessTransport::new(&db, 0);
            let mut budget = AttackBudget::new(0);
            let (a, _) = attack_adaptive_replay(
                &coin,
                &mut transport,
                &mut budget,
                &strat,
                BeliefUpdate::EqualBlame,
                &mut derive_rng(9, "x", i),
            );
            assert_eq!(a, m);
        }
    }

    #[test]
    fn adaptive_respects_budget() {
        let (db, coin) = bank(24, 6);
        let mut transport = InProcessTransport::new(&db, 0);
        let mut budget = AttackBudget::new(10);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        attack_adaptive_replay(&coin, &mut transport, &mut budget, &MeasurementStrategy::hadamard(), BeliefUpdate::Marginal, &mut rng);
        assert_eq!(budget.aux_completed, 10);
        assert!(budget.aux_won <= 10);
    }

    #[test]
    #[should_panic(expected = "budget")]
    fn budget_overrun_panics() {
        let mut b = AttackBudget::new(1);
        b.record(true);
        b.record(true);
    }

    #[test]
    fn csv_row_shape() {
        let cfg = AttackConfig::new(AttackKind::CloneSplit, VerParams::new(24, 6).unwrap(), 0);
        let r = run_attack_experiment(&cfg, 200, 1);
        let row = r.csv_row();
        assert_eq!(row.split(',').count(), CSV_HEADER.split(',').count());
        assert!(row.starts_with("clone-split,24,6,0,200,"));
        assert_eq!(row, run_attack_experiment(&cfg, 200, 1).csv_row());
    }
}
