//! One-parameter models with closed-form Fisher information, used to check the
//! posterior sampler, the scale estimator and the oracle against known answers.
//!
//! For `NormalMeanModel` the asymptotic scale is `sigma`; for
//! `BernoulliModel` (interest parameter `p`) it is `sqrt(p (1 - p))`.

use super::{check_dimension, check_size, shared_names, Dataset, Model, ParameterPoint};
use crate::posterior::AnalysisPrior;
use crate::rng::rng_from_seed;
use crate::stats::{expit, softplus};
use crate::{Error, Result};
use rand::Rng;
use rand_distr::StandardNormal;
use std::io::Write;
use std::sync::Arc;

#[derive(Debug, Clone, PartialEq)]
pub struct Observations(pub Vec<f64>);

impl Dataset for Observations {
    fn len(&self) -> usize {
        self.0.len()
    }

    fn prefix(&self, n: usize) -> Self {
        Observations(self.0[..n.min(self.0.len())].to_vec())
    }

    fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["y"])?;
        for y in &self.0 {
            w.write_record([y.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// (count, sum, sum of squares)
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Moments(pub f64, pub f64, pub f64);

fn moments(data: &Observations) -> Moments {
    data.0.iter().fold(Moments(0.0, 0.0, 0.0), |m, &y| {
        Moments(m.0 + 1.0, m.1 + y, m.2 + y * y)
    })
}

/// `y ~ N(mu, sigma^2)` with known `sigma`; `psi = mu`.
#[derive(Debug, Clone, Copy)]
pub struct NormalMeanModel {
    pub sigma: f64,
    pub prior_sd: f64,
}

impl NormalMeanModel {
    pub fn new(sigma: f64) -> Self {
        Self {
            sigma,
            prior_sd: 10.0,
        }
    }
}

impl Model for NormalMeanModel {
    type Data = Observations;
    type Stats = Moments;

    fn kind_name(&self) -> &'static str {
        "normal-mean"
    }

    fn parameter_names(&self) -> Arc<[String]> {
        shared_names(&["mu"])
    }

    fn psi_index(&self) -> usize {
        0
    }

    fn validate(&self, theta: &ParameterPoint) -> Result<()> {
        check_dimension(theta, 1)
    }

    fn simulate(&self, theta: &ParameterPoint, n: usize, seed: u64) -> Result<Observations> {
        self.validate(theta)?;
        check_size(n)?;
        let mu = theta.values()[0];
        let mut rng = rng_from_seed(seed);
        Ok(Observations(
            (0..n)
                .map(|_| mu + self.sigma * rng.sample::<f64, _>(StandardNormal))
                .collect(),
        ))
    }

    fn log_likelihood(&self, theta: &ParameterPoint, data: &Observations) -> Result<f64> {
        self.validate(theta)?;
        let m = moments(data);
        Ok(self.analysis_log_likelihood(theta.values(), &m))
    }

    fn analysis_names(&self) -> Vec<String> {
        vec!["mu".into()]
    }

    fn default_analysis_prior(&self) -> AnalysisPrior {
        AnalysisPrior::independent_normal(vec![0.0], vec![self.prior_sd])
    }

    fn sufficient_stats(&self, data: &Observations) -> Moments {
        moments(data)
    }

    fn analysis_log_likelihood(&self, phi: &[f64], m: &Moments) -> f64 {
        let mu = phi[0];
        let ss = m.2 - 2.0 * mu * m.1 + m.0 * mu * mu;
        -0.5 * ss / (self.sigma * self.sigma)
            - m.0 * (self.sigma.ln() + 0.5 * (2.0 * std::f64::consts::PI).ln())
    }

    fn analysis_psi(&self, phi: &[f64]) -> f64 {
        phi[0]
    }
}

/// `y ~ Bernoulli(p)`; analysed on the logit scale, `psi = p`.
#[derive(Debug, Clone, Copy)]
pub struct BernoulliModel {
    pub prior_sd: f64,
}

impl Default for BernoulliModel {
    fn default() -> Self {
        Self { prior_sd: 2.5 }
    }
}

impl Model for BernoulliModel {
    type Data = Observations;
    type Stats = Moments;

    fn kind_name(&self) -> &'static str {
        "bernoulli"
    }

    fn parameter_names(&self) -> Arc<[String]> {
        shared_names(&["p"])
    }

    fn psi_index(&self) -> usize {
        0
    }

    fn validate(&self, theta: &ParameterPoint) -> Result<()> {
        check_dimension(theta, 1)?;
        let p = theta.values()[0];
        if p <= 0.0 || p >= 1.0 {
            return Err(Error::InvalidParameter(format!("p must lie in (0, 1), got {p}")));
        }
        Ok(())
    }

    fn simulate(&self, theta: &ParameterPoint, n: usize, seed: u64) -> Result<Observations> {
        self.validate(theta)?;
        check_size(n)?;
        let p = theta.values()[0];
        let mut rng = rng_from_seed(seed);
        Ok(Observations(
            (0..n)
                .map(|_| if rng.random::<f64>() < p { 1.0 } else { 0.0 })
                .collect(),
        ))
    }

    fn log_likelihood(&self, theta: &ParameterPoint, data: &Observations) -> Result<f64> {
        self.validate(theta)?;
        let p = theta.values()[0];
        Ok(data
            .0
            .iter()
            .map(|&y| if y > 0.5 { p.ln() } else { (1.0 - p).ln() })
            .sum())
    }

    fn analysis_names(&self) -> Vec<String> {
        vec!["logit_p".into()]
    }

    fn default_analysis_prior(&self) -> AnalysisPrior {
        AnalysisPrior::independent_normal(vec![0.0], vec![self.prior_sd])
    }

    fn sufficient_stats(&self, data: &Observations) -> Moments {
        moments(data)
    }

    fn analysis_log_likelihood(&self, phi: &[f64], m: &Moments) -> f64 {
        m.1 * phi[0] - m.0 * softplus(phi[0])
    }

    fn analysis_psi(&self, phi: &[f64]) -> f64 {
        expit(phi[0])
    }
}
