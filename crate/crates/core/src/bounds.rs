//! Chernoff-type tail bounds, the set-intersection lemma and the
//! mutual-information lemma, each with a randomized checker.

use std::fmt;

use rand::Rng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use thiserror::Error;

use crate::seed::derive_rng;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BoundsError {
    #[error("n must be at least 1")]
    ZeroN,
    #[error("{name} = {value} is outside {range}")]
    OutOfRange { name: &'static str, value: f64, range: &'static str },
    #[error("joint distribution rows have unequal lengths")]
    Ragged,
    #[error("joint distribution is empty")]
    EmptyJoint,
    #[error("joint distribution has a negative or non-finite entry")]
    BadEntry,
    #[error("joint distribution sums to {0}, not 1")]
    NotNormalized(f64),
    #[error("set index {index} is outside a universe of size {n}")]
    IndexOutOfUniverse { index: usize, n: usize },
    #[error("need at least {0} sets")]
    TooFewSets(usize),
    #[error("condition lists {got} sets, joint has {want} values of B")]
    ConditionShape { got: usize, want: usize },
}

fn check_n(n: u64) -> Result<(), BoundsError> {
    if n == 0 {
        return Err(BoundsError::ZeroN);
    }
    Ok(())
}

fn check_range(name: &'static str, value: f64, ok: bool, range: &'static str) -> Result<(), BoundsError> {
    if !ok || !value.is_finite() {
        return Err(BoundsError::OutOfRange { name, value, range });
    }
    Ok(())
}

fn check_unit(name: &'static str, v: f64) -> Result<(), BoundsError> {
    check_range(name, v, v > 0.0 && v <= 1.0, "(0, 1]")
}

/// `P[Σ Xᵢ ≥ (1+λ)μn] ≤ exp(−nλ²μ/(2+λ))` for independent `Xᵢ ∈ [0,1]` with mean `μ`.
pub fn chernoff_upper(n: u64, mu: f64, lambda: f64) -> Result<f64, BoundsError> {
    check_n(n)?;
    check_unit("mu", mu)?;
    check_range("lambda", lambda, lambda > 0.0, "(0, ∞)")?;
    Ok((-(n as f64) * lambda * lambda * mu / (2.0 + lambda)).exp())
}

/// `P[Σ Xᵢ ≤ (1−λ)μn] ≤ exp(−nλ²μ/2)`.
pub fn chernoff_lower(n: u64, mu: f64, lambda: f64) -> Result<f64, BoundsError> {
    check_n(n)?;
    check_unit("mu", mu)?;
    check_unit("lambda", lambda)?;
    Ok((-(n as f64) * lambda * lambda * mu / 2.0).exp())
}

/// `P[Σ Xᵢ ≥ (1+λ)δn] ≤ exp(−2nλ²δ²)` for Booleans whose every conjunction of
/// `|S|` of them holds with probability at most `δ^|S|`.
pub fn generalized_chernoff(n: u64, delta: f64, lambda: f64) -> Result<f64, BoundsError> {
    check_n(n)?;
    check_unit("delta", delta)?;
    check_range("lambda", lambda, lambda >= 0.0, "[0, ∞)")?;
    Ok((-2.0 * n as f64 * lambda * lambda * delta * delta).exp())
}

/// `N` subsets of `[n]`, each stored sorted and deduplicated.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SetFamily {
    n: usize,
    sets: Vec<Vec<usize>>,
}

impl SetFamily {
    pub fn new(n: usize, sets: Vec<Vec<usize>>) -> Result<Self, BoundsError> {
        let sets = sets
            .into_iter()
            .map(|mut s| {
                s.sort_unstable();
                s.dedup();
                match s.iter().find(|&&i| i >= n) {
                    Some(&index) => Err(BoundsError::IndexOutOfUniverse { index, n }),
                    None => Ok(s),
                }
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(SetFamily { n, sets })
    }

    pub fn universe_size(&self) -> usize {
        self.n
    }

    pub fn sets(&self) -> &[Vec<usize>] {
        &self.sets
    }
}

fn intersection_size(a: &[usize], b: &[usize]) -> usize {
    let (mut i, mut j, mut c) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                c += 1;
                i += 1;
                j += 1;
            }
        }
    }
    c
}

#[derive(Debug, Clone, PartialEq)]
pub struct SetLemmaReport {
    pub holds: bool,
    pub n: usize,
    pub count: usize,
    pub total_size: usize,
    pub avg_size: f64,
    pub max_intersection: usize,
}

impl fmt::Display for SetLemmaReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "n={} N={} t={:.6} s={} holds={}",
            self.n, self.count, self.avg_size, self.max_intersection, self.holds
        )
    }
}

/// Either `N < 2n/t` or `s > t²/2n`, with `t` the average set size and `s` the
/// largest pairwise intersection. Decided in exact integer arithmetic.
pub fn check_set_lemma(family: &SetFamily) -> Result<SetLemmaReport, BoundsError> {
    let count = family.sets.len();
    if count < 2 {
        return Err(BoundsError::TooFewSets(2));
    }
    let total: usize = family.sets.iter().map(Vec::len).sum();
    let s = (0..count)
        .flat_map(|i| (i + 1..count).map(move |j| (i, j)))
        .map(|(i, j)| intersection_size(&family.sets[i], &family.sets[j]))
        .max()
        .unwrap_or(0);
    let (n, nn, tot) = (family.n as u128, count as u128, total as u128);
    // N < 2n/t  ⇔  total < 2n;   s > t²/2n  ⇔  2n·s·N² > total²
    let holds = tot < 2 * n || 2 * n * s as u128 * nn * nn > tot * tot;
    Ok(SetLemmaReport {
        holds,
        n: family.n,
        count,
        total_size: total,
        avg_size: total as f64 / count as f64,
        max_intersection: s,
    })
}

pub const PMF_TOL: f64 = 1e-12;

/// Joint distribution of `(A, B)`: `p[x][y] = P[A = x, B = y]`.
#[derive(Debug, Clone, PartialEq)]
pub struct JointPmf {
    p: Vec<Vec<f64>>,
}

impl JointPmf {
    pub fn new(p: Vec<Vec<f64>>) -> Result<Self, BoundsError> {
        let cols = p.first().map(Vec::len).unwrap_or(0);
        if cols == 0 {
            return Err(BoundsError::EmptyJoint);
        }
        if p.iter().any(|r| r.len() != cols) {
            return Err(BoundsError::Ragged);
        }
        if p.iter().flatten().any(|&v| !v.is_finite() || v < 0.0) {
            return Err(BoundsError::BadEntry);
        }
        let total: f64 = p.iter().flatten().sum();
        if (total - 1.0).abs() > PMF_TOL {
            return Err(BoundsError::NotNormalized(total));
        }
        Ok(JointPmf { p })
    }

    /// Normalizes nonnegative weights.
    pub fn from_weights(w: Vec<Vec<f64>>) -> Result<Self, BoundsError> {
        let total: f64 = w.iter().flatten().sum();
        if total.is_nan() || total <= 0.0 {
            return Err(BoundsError::NotNormalized(total));
        }
        JointPmf::new(w.into_iter().map(|r| r.into_iter().map(|v| v / total).collect()).collect())
    }

    pub fn x_count(&self) -> usize {
        self.p.len()
    }

    pub fn y_count(&self) -> usize {
        self.p[0].len()
    }

    pub fn marginal_a(&self) -> Vec<f64> {
        self.p.iter().map(|r| r.iter().sum()).collect()
    }

    pub fn marginal_b(&self) -> Vec<f64> {
        (0..self.y_count()).map(|y| self.p.iter().map(|r| r[y]).sum()).collect()
    }
}

/// `I(A:B) = Σ_b p(b)·KL(μ_b ‖ μ)` in nats.
pub fn mutual_information(joint: &JointPmf) -> f64 {
    let pa = joint.marginal_a();
    let pb = joint.marginal_b();
    let mut info = 0.0;
    for (x, row) in joint.p.iter().enumerate() {
        for (y, &pxy) in row.iter().enumerate() {
            if pxy > 0.0 {
                info += pxy * (pxy / (pa[x] * pb[y])).ln();
            }
        }
    }
    info.max(0.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MutLemmaReport {
    pub holds: bool,
    pub alpha: f64,
    pub beta: f64,
    pub info: f64,
}

impl fmt::Display for MutLemmaReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "alpha={:.12} beta={:.12} info={:.12} holds={}", self.alpha, self.beta, self.info, self.holds)
    }
}

/// `I(A:B) ≥ 2(β−α)²` whenever `β ≥ α`, where `α = max_b μ(X_b)` and
/// `β = Σ_b p(b)·μ_b(X_b)`. `condition[b]` lists the values of `A` in `X_b`.
pub fn check_mut_lemma(joint: &JointPmf, condition: &[Vec<usize>]) -> Result<MutLemmaReport, BoundsError> {
    if condition.len() != joint.y_count() {
        return Err(BoundsError::ConditionShape { got: condition.len(), want: joint.y_count() });
    }
    if let Some(&index) = condition.iter().flatten().find(|&&x| x >= joint.x_count()) {
        return Err(BoundsError::IndexOutOfUniverse { index, n: joint.x_count() });
    }
    let pa = joint.marginal_a();
    let pb = joint.marginal_b();
    let mut alpha: f64 = 0.0;
    let mut beta = 0.0;
    for (y, xs) in condition.iter().enumerate() {
        if pb[y] <= 0.0 {
            continue;
        }
        let mut xs = xs.clone();
        xs.sort_unstable();
        xs.dedup();
        alpha = alpha.max(xs.iter().map(|&x| pa[x]).sum());
        // p(b)·μ_b(X_b) = Σ_{x∈X_b} p(x, b)
        beta += xs.iter().map(|&x| joint.p[x][y]).sum::<f64>();
    }
    let info = mutual_information(joint);
    let holds = beta < alpha || info >= 2.0 * (beta - alpha).powi(2) - 1e-12;
    Ok(MutLemmaReport { holds, alpha, beta, info })
}

/// Outcome of a randomized theorem check.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CheckSummary {
    pub instances: u64,
    /// description of each violating instance
    pub violations: Vec<String>,
}

impl CheckSummary {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

fn collect(instances: u64, violations: impl ParallelIterator<Item = String>) -> CheckSummary {
    let mut violations: Vec<String> = violations.collect();
    violations.sort();
    CheckSummary { instances, violations }
}

/// Universe up to 64, 2 to 64 sets, per-family density.
pub fn random_set_family<R: Rng + ?Sized>(rng: &mut R) -> SetFamily {
    let n = rng.random_range(1..=64);
    let count = rng.random_range(2..=64);
    let density: f64 = rng.random();
    let sets = (0..count).map(|_| (0..n).filter(|_| rng.random_bool(density)).collect()).collect();
    SetFamily::new(n, sets).expect("indices drawn from the universe")
}

pub fn run_set_checks(trials: u64, seed: u64) -> CheckSummary {
    collect(
        trials,
        (0..trials).into_par_iter().filter_map(|i| {
            let family = random_set_family(&mut derive_rng(seed, "bounds/sets", i));
            let report = check_set_lemma(&family).expect("at least two sets");
            (!report.holds).then(|| format!("instance {i}: {report} sets={:?}", family.sets))
        }),
    )
}

/// Random joint on up to 6×6 values (some cells zero) with random condition sets.
pub fn random_joint<R: Rng + ?Sized>(rng: &mut R) -> (JointPmf, Vec<Vec<usize>>) {
    let nx = rng.random_range(1..=6);
    let ny = rng.random_range(1..=6);
    let sparsity: f64 = rng.random_range(0.0..0.5);
    let sharp: i32 = rng.random_range(1..=4);
    loop {
        let w: Vec<Vec<f64>> = (0..nx)
            .map(|_| {
                (0..ny)
                    .map(|_| if rng.random_bool(sparsity) { 0.0 } else { rng.random::<f64>().powi(sharp) })
                    .collect()
            })
            .collect();
        if let Ok(joint) = JointPmf::from_weights(w) {
            let condition = (0..ny).map(|_| (0..nx).filter(|_| rng.random_bool(0.5)).collect()).collect();
            return (joint, condition);
        }
    }
}

pub fn run_mut_checks(trials: u64, seed: u64) -> CheckSummary {
    collect(
        trials,
        (0..trials).into_par_iter().filter_map(|i| {
            let (joint, cond) = random_joint(&mut derive_rng(seed, "bounds/mutinfo", i));
            let report = check_mut_lemma(&joint, &cond).expect("well-formed instance");
            (!report.holds).then(|| format!("instance {i}: {report} joint={:?} condition={cond:?}", joint.p))
        }),
    )
}

/// One parameter point: `n` variables of mean (or cap) `mu`, deviation `lambda`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridPoint {
    pub n: u64,
    pub mu: f64,
    pub lambda: f64,
}

/// Twenty points spanning small and large `n`, rare and common events, and
/// narrow and wide deviations. Every `lambda` is in `(0, 1]`.
pub fn chernoff_grid() -> Vec<GridPoint> {
    let mut grid = Vec::with_capacity(20);
    for &n in &[10, 50, 100, 400, 1000] {
        for &(mu, lambda) in &[(0.5, 0.5), (0.1, 1.0), (0.3, 0.2), (0.8, 0.1)] {
            grid.push(GridPoint { n, mu, lambda });
        }
    }
    grid
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChernoffRow {
    pub point: GridPoint,
    pub upper_tail: f64,
    pub upper_bound: f64,
    pub lower_tail: f64,
    pub lower_bound: f64,
    pub gen_tail: f64,
    pub gen_bound: f64,
}

impl ChernoffRow {
    pub fn holds(&self) -> bool {
        self.upper_tail <= self.upper_bound && self.lower_tail <= self.lower_bound && self.gen_tail <= self.gen_bound
    }
}

impl fmt::Display for ChernoffRow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let p = self.point;
        write!(
            f,
            "n={} mu={} lambda={} upper {:.6e}<={:.6e} lower {:.6e}<={:.6e} generalized {:.6e}<={:.6e}",
            p.n, p.mu, p.lambda, self.upper_tail, self.upper_bound, self.lower_tail, self.lower_bound, self.gen_tail, self.gen_bound
        )
    }
}

// thresholds are compared with a small slack that only ever enlarges the counted tail
const THRESH_EPS: f64 = 1e-9;

/// Success probability of every variable in a run of the correlated generator:
/// with probability ½ all variables share success probability `delta`,
/// otherwise a shared value uniform in `[0, delta]`. Given the latent value the
/// variables are independent, so every conditional success probability is at
/// most `delta` while the sum is strongly correlated.
pub fn correlated_cap_latent<R: Rng + ?Sized>(delta: f64, rng: &mut R) -> f64 {
    if rng.random_bool(0.5) {
        delta
    } else {
        delta * rng.random::<f64>()
    }
}

/// Empirical tails versus the three bounds, `samples` draws per point.
pub fn run_chernoff_checks(samples: u64, seed: u64) -> Vec<ChernoffRow> {
    chernoff_grid()
        .into_par_iter()
        .enumerate()
        .map(|(idx, point)| {
            let mut rng = derive_rng(seed, "bounds/chernoff", idx as u64);
            let GridPoint { n, mu, lambda } = point;
            let nf = n as f64;
            let binom = Binomial::new(n, mu).expect("mu in (0, 1]");
            let hi = (1.0 + lambda) * mu * nf - THRESH_EPS;
            let lo = (1.0 - lambda) * mu * nf + THRESH_EPS;
            let (mut up, mut down, mut gen) = (0u64, 0u64, 0u64);
            for _ in 0..samples {
                let s = binom.sample(&mut rng) as f64;
                up += (s >= hi) as u64;
                down += (s <= lo) as u64;
                let latent = correlated_cap_latent(mu, &mut rng);
                let g = if latent > 0.0 {
                    Binomial::new(n, latent).expect("latent in (0, 1]").sample(&mut rng) as f64
                } else {
                    0.0
                };
                gen += (g >= hi) as u64;
            }
            let frac = |c: u64| c as f64 / samples as f64;
            ChernoffRow {
                point,
                upper_tail: frac(up),
                upper_bound: chernoff_upper(n, mu, lambda).expect("grid is in range"),
                lower_tail: frac(down),
                lower_bound: chernoff_lower(n, mu, lambda).expect("grid is in range"),
                gen_tail: frac(gen),
                gen_bound: generalized_chernoff(n, mu, lambda).expect("grid is in range"),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn formula_examples() {
        assert_relative_eq!(chernoff_upper(100, 0.5, 0.5).unwrap(), (-5.0f64).exp(), max_relative = 1e-14);
        assert_relative_eq!(chernoff_upper(100, 0.5, 0.5).unwrap(), 6.7379e-3, max_relative = 1e-4);
        assert_relative_eq!(chernoff_lower(100, 0.5, 0.5).unwrap(), (-6.25f64).exp(), max_relative = 1e-14);
        assert_relative_eq!(generalized_chernoff(200, 0.5, 0.2).unwrap(), (-4.0f64).exp(), max_relative = 1e-14);
        assert_eq!(generalized_chernoff(10, 0.3, 0.0).unwrap(), 1.0);
        assert!(chernoff_upper(10, 0.3, 1e-12).unwrap() > 1.0 - 1e-12);
        assert!(chernoff_lower(10, 0.3, 1e-12).unwrap() > 1.0 - 1e-12);
    }

    #[test]
    fn domain_errors() {
        assert_eq!(chernoff_upper(0, 0.5, 0.5), Err(BoundsError::ZeroN));
        assert!(chernoff_upper(10, 0.0, 0.5).is_err());
        assert!(chernoff_upper(10, 1.5, 0.5).is_err());
        assert!(chernoff_upper(10, 0.5, 0.0).is_err());
        assert!(chernoff_upper(10, 0.5, f64::NAN).is_err());
        assert!(chernoff_lower(10, 0.5, 1.5).is_err());
        assert!(generalized_chernoff(10, 0.5, -0.1).is_err());
        assert!(generalized_chernoff(10, 0.0, 0.1).is_err());
    }

    #[test]
    fn bounds_decrease_in_n_and_lambda() {
        for &mu in &[0.1, 0.5, 1.0] {
            for n in 1..50u64 {
                for l in 1..10 {
                    let lam = l as f64 / 10.0;
                    let next = lam + 0.1;
                    for f in [chernoff_upper, chernoff_lower, generalized_chernoff] {
                        let here = f(n, mu, lam).unwrap();
                        assert!(f(n + 1, mu, lam).unwrap() < here);
                        if next <= 1.0 {
                            assert!(f(n, mu, next).unwrap() < here);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn set_lemma_examples() {
        let same = SetFamily::new(10, vec![vec![0, 1, 2]; 5]).unwrap();
        let r = check_set_lemma(&same).unwrap();
        assert!(r.holds);
        assert_eq!(r.max_intersection, 3);
        let disjoint = SetFamily::new(12, (0..4).map(|i| vec![3 * i, 3 * i + 1, 3 * i + 2]).collect()).unwrap();
        let r = check_set_lemma(&disjoint).unwrap();
        assert!(r.holds);
        assert_eq!(r.max_intersection, 0);
        assert!(SetFamily::new(3, vec![vec![3]]).is_err());
        assert!(check_set_lemma(&SetFamily::new(3, vec![vec![0]]).unwrap()).is_err());
        let dup = SetFamily::new(4, vec![vec![1, 1, 0], vec![0]]).unwrap();
        assert_eq!(dup.sets()[0], vec![0, 1]);
    }

    #[test]
    fn mutual_information_examples() {
        let product = JointPmf::new(vec![vec![0.12, 0.28], vec![0.18, 0.42]]).unwrap();
        assert!(mutual_information(&product).abs() < 1e-12);
        let copy = JointPmf::new(vec![vec![0.5, 0.0], vec![0.0, 0.5]]).unwrap();
        assert_relative_eq!(mutual_information(&copy), 2f64.ln(), max_relative = 1e-12);
        let noisy = JointPmf::new(vec![vec![0.375, 0.125], vec![0.125, 0.375]]).unwrap();
        let h = -(0.25f64 * 0.25f64.ln() + 0.75 * 0.75f64.ln());
        assert_relative_eq!(mutual_information(&noisy), 2f64.ln() - h, max_relative = 1e-12);
        assert_relative_eq!(mutual_information(&noisy), 0.1308, max_relative = 1e-3);
    }

    #[test]
    fn joint_validation() {
        assert_eq!(JointPmf::new(vec![]), Err(BoundsError::EmptyJoint));
        assert_eq!(JointPmf::new(vec![vec![0.5], vec![0.25, 0.25]]), Err(BoundsError::Ragged));
        assert_eq!(JointPmf::new(vec![vec![1.5, -0.5]]), Err(BoundsError::BadEntry));
        assert!(matches!(JointPmf::new(vec![vec![0.5, 0.4]]), Err(BoundsError::NotNormalized(_))));
    }

    #[test]
    fn mut_lemma_examples() {
        let copy = JointPmf::new(vec![vec![0.5, 0.0], vec![0.0, 0.5]]).unwrap();
        let r = check_mut_lemma(&copy, &[vec![0], vec![1]]).unwrap();
        assert_relative_eq!(r.alpha, 0.5);
        assert_relative_eq!(r.beta, 1.0);
        assert!(r.holds && r.info >= 0.5);
        let product = JointPmf::new(vec![vec![0.25, 0.25], vec![0.25, 0.25]]).unwrap();
        let r = check_mut_lemma(&product, &[vec![0], vec![1]]).unwrap();
        assert!(r.beta <= r.alpha + 1e-15 && r.holds);
        assert!(check_mut_lemma(&product, &[vec![0]]).is_err());
        assert!(check_mut_lemma(&product, &[vec![0], vec![2]]).is_err());
    }

    #[test]
    fn randomized_checks_pass() {
        assert!(run_set_checks(2000, 1).passed());
        assert!(run_mut_checks(2000, 1).passed());
    }

    #[test]
    fn chernoff_grid_shape() {
        let grid = chernoff_grid();
        assert_eq!(grid.len(), 20);
        assert!(grid.iter().all(|p| p.lambda > 0.0 && p.lambda <= 1.0));
        let rows = run_chernoff_checks(2000, 3);
        assert!(rows.iter().all(ChernoffRow::holds), "{}", rows.iter().map(|r| r.to_string()).collect::<Vec<_>>().join("\n"));
    }
}
