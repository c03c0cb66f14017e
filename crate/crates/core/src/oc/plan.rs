//! Seeds and sample sizes shared by every front end, so the same master seed
//! gives bit-identical reports from the CLI and the service.

use super::design::MvnConfig;
use super::evaluate::{default_grid, Evaluator};
use crate::bart::BartPosterior;
use crate::rng::derive_seed;
use crate::{Error, ModelSpec, ParameterPoint, Result};
use serde::{Deserialize, Serialize};

/// Seed-path components below the master seed.
pub mod stream {
    pub const TRAINING: u64 = 1;
    pub const BART: u64 = 2;
    pub const PRIOR: u64 = 3;
    pub const MVN: u64 = 4;
    pub const ORACLE: u64 = 5;
}

pub const FULL_PRIOR_DRAWS: usize = 100_000;
pub const FULL_MVN_DRAWS: usize = 100_000;
pub const FAST_PRIOR_DRAWS: usize = 10_000;
pub const FAST_MVN_DRAWS: usize = 20_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplingPlan {
    pub seed: u64,
    pub prior_draws: usize,
    pub mvn_draws: usize,
}

impl SamplingPlan {
    pub fn new(seed: u64, prior_draws: usize, mvn_draws: usize) -> Result<Self> {
        let plan = Self {
            seed,
            prior_draws,
            mvn_draws,
        };
        plan.validate()?;
        Ok(plan)
    }

    pub fn full(seed: u64) -> Self {
        Self {
            seed,
            prior_draws: FULL_PRIOR_DRAWS,
            mvn_draws: FULL_MVN_DRAWS,
        }
    }

    /// Interactive sizes.
    pub fn fast(seed: u64) -> Self {
        Self {
            seed,
            prior_draws: FAST_PRIOR_DRAWS,
            mvn_draws: FAST_MVN_DRAWS,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.prior_draws == 0 {
            return Err(Error::Config("prior_draws must be at least 1".into()));
        }
        self.mvn().validate()
    }

    pub fn prior_seed(&self) -> u64 {
        derive_seed(self.seed, &[stream::PRIOR])
    }

    pub fn mvn(&self) -> MvnConfig {
        MvnConfig {
            draws: self.mvn_draws,
            seed: derive_seed(self.seed, &[stream::MVN]),
            antithetic: true,
        }
    }

    pub fn prior_sample(&self, spec: &ModelSpec) -> Result<Vec<ParameterPoint>> {
        spec.design_prior.sample(self.prior_draws, self.prior_seed())
    }

    pub fn evaluator(&self, spec: &ModelSpec, ensemble: &BartPosterior) -> Result<Evaluator> {
        self.validate()?;
        Evaluator::new(&self.prior_sample(spec)?, spec.model.psi_index(), ensemble)
    }
}

/// `n` values over the design-prior mean of psi plus or minus three sds.
pub fn psi_grid(spec: &ModelSpec, n: usize) -> Vec<f64> {
    let m = &spec.design_prior.components()[spec.model.psi_index()].marginal;
    default_grid(m.mean(), 3.0 * m.sd(), n)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn streams_are_distinct() {
        let p = SamplingPlan::fast(7);
        assert_ne!(p.prior_seed(), p.mvn().seed);
        assert_eq!(p.mvn().draws, FAST_MVN_DRAWS);
        assert!(SamplingPlan::new(7, 0, 2000).is_err());
        assert!(SamplingPlan::new(7, 10, 10).is_err());
    }
}
