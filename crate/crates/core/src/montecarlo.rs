//! Seeded parallel Bernoulli trials.

use rayon::prelude::*;

use crate::seed::{derive_rng, StreamRng};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub successes: u64,
    pub trials: u64,
}

impl Estimate {
    pub fn rate(&self) -> f64 {
        if self.trials == 0 {
            return 0.0;
        }
        self.successes as f64 / self.trials as f64
    }

    /// Binomial standard error at the observed rate.
    pub fn stderr(&self) -> f64 {
        if self.trials == 0 {
            return 0.0;
        }
        let p = self.rate();
        (p * (1.0 - p) / self.trials as f64).sqrt()
    }

    /// Standard deviation of the sample mean if the true rate were `p`.
    pub fn sigma_at(&self, p: f64) -> f64 {
        (p * (1.0 - p) / self.trials.max(1) as f64).sqrt()
    }
}

/// Runs `trials` independent trials; trial `i` gets stream `(seed, domain, i)`.
pub fn estimate<F>(trials: u64, seed: u64, domain: &str, trial: F) -> Estimate
where
    F: Fn(&mut StreamRng, u64) -> bool + Sync,
{
    let successes = (0..trials)
        .into_par_iter()
        .filter(|&i| {
            let mut rng = derive_rng(seed, domain, i);
            trial(&mut rng, i)
        })
        .count() as u64;
    Estimate { successes, trials }
}
