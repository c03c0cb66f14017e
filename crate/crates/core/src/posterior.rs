//! Posterior sampling for the analysis models.
//!
//! Adaptive Metropolis-within-Gibbs: each unconstrained analysis parameter is
//! updated in turn by a Gaussian random walk. During burn-in the log proposal
//! scale of every coordinate follows a Robbins-Monro recursion toward 44%
//! acceptance; the scales are frozen once draws are retained. The likelihood is
//! evaluated from the model's sufficient statistics, so one update costs
//! `O(cells)` rather than `O(n)`.

use crate::model::{Dataset, Model};
use crate::rng::derived_rng;
use crate::stats::{mean, quantiles, sample_sd};
use crate::{Error, Result};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::Write;

/// Independent normal priors on the unconstrained analysis parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisPrior {
    pub means: Vec<f64>,
    pub sds: Vec<f64>,
}

impl AnalysisPrior {
    pub fn independent_normal(means: Vec<f64>, sds: Vec<f64>) -> Self {
        Self { means, sds }
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        if self.means.len() != dim || self.sds.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: self.means.len().min(self.sds.len()),
            });
        }
        if self.sds.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::Config("analysis prior sds must be positive".into()));
        }
        Ok(())
    }

    #[inline]
    fn log_density(&self, phi: &[f64]) -> f64 {
        phi.iter()
            .zip(&self.means)
            .zip(&self.sds)
            .map(|((x, m), s)| {
                let z = (x - m) / s;
                -0.5 * z * z
            })
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct McmcConfig {
    /// Total iterations per chain, burn-in included.
    pub n_iterations: usize,
    pub n_burnin: usize,
    pub n_chains: usize,
    pub thin: usize,
    pub initial_scale: f64,
    pub target_acceptance: f64,
    /// Number of burn-in iterations with adaptation switched on (default: all).
    pub adapt_window: Option<usize>,
    pub seed: u64,
}

impl Default for McmcConfig {
    fn default() -> Self {
        Self {
            n_iterations: 3000,
            n_burnin: 1000,
            n_chains: 1,
            thin: 1,
            initial_scale: 0.5,
            target_acceptance: 0.44,
            adapt_window: None,
            seed: 0,
        }
    }
}

impl McmcConfig {
    /// Four-chain configuration for convergence diagnostics.
    pub fn diagnostic() -> Self {
        Self {
            n_chains: 4,
            ..Self::default()
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            seed,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_iterations <= self.n_burnin {
            return Err(Error::Config(format!(
                "n_iterations ({}) must exceed n_burnin ({})",
                self.n_iterations, self.n_burnin
            )));
        }
        if self.n_chains == 0 || self.thin == 0 {
            return Err(Error::Config("n_chains and thin must be positive".into()));
        }
        if !(self.initial_scale.is_finite() && self.initial_scale > 0.0) {
            return Err(Error::Config("initial_scale must be positive".into()));
        }
        if !(self.target_acceptance > 0.0 && self.target_acceptance < 1.0) {
            return Err(Error::Config("target_acceptance must lie in (0, 1)".into()));
        }
        Ok(())
    }

    fn retained_per_chain(&self) -> usize {
        (self.n_iterations - self.n_burnin).div_ceil(self.thin)
    }
}

/// Retained draws from all chains, stored row-major in chain order.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorDraws {
    pub names: Vec<String>,
    draws: Vec<f64>,
    psi: Vec<f64>,
    pub n_chains: usize,
    pub acceptance_rate: f64,
    pub acceptance_by_parameter: Vec<f64>,
    pub rhat: Vec<f64>,
    pub warnings: Vec<String>,
}

impl PosteriorDraws {
    pub fn n_draws(&self) -> usize {
        self.psi.len()
    }

    pub fn n_params(&self) -> usize {
        self.names.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let p = self.n_params();
        &self.draws[i * p..(i + 1) * p]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.n_draws()).map(|i| self.row(i)[j]).collect()
    }

    pub fn psi_draws(&self) -> &[f64] {
        &self.psi
    }

    /// Build from externally supplied `psi` draws (fixtures, imported chains).
    pub fn from_psi(psi: Vec<f64>) -> Self {
        Self {
            names: vec!["psi".into()],
            draws: psi.clone(),
            psi,
            n_chains: 1,
            acceptance_rate: f64::NAN,
            acceptance_by_parameter: vec![f64::NAN],
            rhat: vec![f64::NAN],
            warnings: Vec::new(),
        }
    }

    pub fn converged(&self) -> bool {
        self.rhat.iter().all(|r| !(*r > 1.1))
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header: Vec<String> = vec!["chain".into(), "iteration".into()];
        header.extend(self.names.iter().cloned());
        header.push("psi".into());
        w.write_record(&header)?;
        let per_chain = self.n_draws() / self.n_chains.max(1);
        for i in 0..self.n_draws() {
            let mut rec = vec![(i / per_chain).to_string(), (i % per_chain).to_string()];
            rec.extend(self.row(i).iter().map(|v| v.to_string()));
            rec.push(self.psi[i].to_string());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn diagnostics_json(&self) -> serde_json::Value {
        serde_json::json!({
            "parameters": self.names,
            "n_draws": self.n_draws(),
            "n_chains": self.n_chains,
            "acceptance_rate": self.acceptance_rate,
            "acceptance_by_parameter": self.acceptance_by_parameter,
            "rhat": self.rhat,
            "warnings": self.warnings,
        })
    }
}

struct ChainOutput {
    draws: Vec<f64>,
    psi: Vec<f64>,
    accepted: Vec<usize>,
    proposals: usize,
}

fn run_chain<M: Model>(
    model: &M,
    stats: &M::Stats,
    prior: &AnalysisPrior,
    config: &McmcConfig,
    chain: usize,
) -> Result<ChainOutput> {
    let dim = prior.means.len();
    let mut rng = derived_rng(config.seed, &[chain as u64]);
    let log_post = |phi: &[f64]| model.analysis_log_likelihood(phi, stats) + prior.log_density(phi);

    let mut phi = prior.means.clone();
    let mut current = log_post(&phi);
    if !current.is_finite() {
        return Err(Error::Initialization(format!(
            "log posterior is {current} at the prior mean"
        )));
    }
    let mut log_scale = vec![config.initial_scale.ln(); dim];
    let adapt_until = config.adapt_window.unwrap_or(config.n_burnin).min(config.n_burnin);

    let retained = config.retained_per_chain();
    let mut draws = Vec::with_capacity(retained * dim);
    let mut psi = Vec::with_capacity(retained);
    let mut accepted = vec![0usize; dim];

    for it in 0..config.n_iterations {
        let gain = if it < adapt_until {
            (it as f64 + 1.0).powf(-0.6)
        } else {
            0.0
        };
        for j in 0..dim {
            let old = phi[j];
            let z: f64 = rng.sample(StandardNormal);
            phi[j] = old + log_scale[j].exp() * z;
            let proposed = log_post(&phi);
            let u: f64 = rng.random();
            let accept = proposed.is_finite() && u.ln() < proposed - current;
            if accept {
                current = proposed;
            } else {
                phi[j] = old;
            }
            if gain > 0.0 {
                let hit = if accept { 1.0 } else { 0.0 };
                log_scale[j] = (log_scale[j] + gain * (hit - config.target_acceptance))
                    .clamp(-20.0, 5.0);
            } else if it >= config.n_burnin && accept {
                accepted[j] += 1;
            }
        }
        if it >= config.n_burnin && (it - config.n_burnin) % config.thin == 0 {
            draws.extend_from_slice(&phi);
            psi.push(model.analysis_psi(&phi));
        }
    }
    Ok(ChainOutput {
        draws,
        psi,
        accepted,
        proposals: config.n_iterations - config.n_burnin,
    })
}

/// Split-R-hat of one parameter across chains (each chain split in halves).
pub fn split_rhat(chains: &[Vec<f64>]) -> f64 {
    let mut seqs: Vec<&[f64]> = Vec::new();
    for c in chains {
        let half = c.len() / 2;
        if half < 2 {
            return f64::NAN;
        }
        seqs.push(&c[..half]);
        seqs.push(&c[c.len() - half..]);
    }
    let n = seqs[0].len() as f64;
    let means: Vec<f64> = seqs.iter().map(|s| mean(s)).collect();
    let w = seqs.iter().map(|s| sample_sd(s).powi(2)).sum::<f64>() / seqs.len() as f64;
    let b = n * sample_sd(&means).powi(2);
    if w <= 0.0 {
        return if b <= 0.0 { 1.0 } else { f64::INFINITY };
    }
    let var_plus = (n - 1.0) / n * w + b / n;
    (var_plus / w).sqrt()
}

/// Sample the posterior of `model` given `data`.
pub fn fit_posterior<M: Model>(
    model: &M,
    data: &M::Data,
    prior: &AnalysisPrior,
    config: &McmcConfig,
) -> Result<PosteriorDraws> {
    if data.is_empty() {
        return Err(Error::InsufficientData("dataset is empty".into()));
    }
    fit_posterior_from_stats(model, &model.sufficient_stats(data), prior, config)
}

/// As [`fit_posterior`], from precomputed sufficient statistics.
pub fn fit_posterior_from_stats<M: Model>(
    model: &M,
    stats: &M::Stats,
    prior: &AnalysisPrior,
    config: &McmcConfig,
) -> Result<PosteriorDraws> {
    config.validate()?;
    let names = model.analysis_names();
    prior.validate(names.len())?;
    let dim = names.len();

    let outputs: Vec<ChainOutput> = if config.n_chains == 1 {
        vec![run_chain(model, stats, prior, config, 0)?]
    } else {
        (0..config.n_chains)
            .into_par_iter()
            .map(|c| run_chain(model, stats, prior, config, c))
            .collect::<Result<_>>()?
    };

    let total_props = outputs.iter().map(|o| o.proposals).sum::<usize>() as f64;
    let acceptance_by_parameter: Vec<f64> = (0..dim)
        .map(|j| outputs.iter().map(|o| o.accepted[j]).sum::<usize>() as f64 / total_props)
        .collect();
    let acceptance_rate = mean(&acceptance_by_parameter);

    let rhat: Vec<f64> = (0..dim)
        .map(|j| {
            let chains: Vec<Vec<f64>> = outputs
                .iter()
                .map(|o| o.draws.iter().skip(j).step_by(dim).copied().collect())
                .collect();
            split_rhat(&chains)
        })
        .collect();
    let mut warnings = Vec::new();
    for (name, r) in names.iter().zip(&rhat) {
        if *r > 1.1 {
            warnings.push(format!("split R-hat for {name} is {r:.3} (> 1.1)"));
        }
    }

    let mut draws = Vec::new();
    let mut psi = Vec::new();
    for o in outputs {
        draws.extend(o.draws);
        psi.extend(o.psi);
    }
    if draws.iter().any(|v| !v.is_finite()) {
        return Err(Error::Estimation("non-finite posterior draw".into()));
    }
    Ok(PosteriorDraws {
        names,
        draws,
        psi,
        n_chains: config.n_chains,
        acceptance_rate,
        acceptance_by_parameter,
        rhat,
        warnings,
    })
}

/// Posterior probability `P(psi > psi0 | y)`: the fraction of retained draws
/// strictly above `psi0`.
pub fn tau(draws: &PosteriorDraws, psi0: f64) -> Result<f64> {
    tau_from_draws(draws.psi_draws(), psi0)
}

pub fn tau_from_draws(psi: &[f64], psi0: f64) -> Result<f64> {
    if psi.is_empty() {
        return Err(Error::InsufficientData("no retained draws".into()));
    }
    Ok(psi.iter().filter(|&&v| v > psi0).count() as f64 / psi.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSummary {
    pub mean: f64,
    pub sd: f64,
    pub probabilities: Vec<f64>,
    pub quantiles: Vec<f64>,
}

pub const MIN_SUMMARY_DRAWS: usize = 100;

/// Mean, standard deviation and quantiles of the `psi` draws.
pub fn posterior_summary(draws: &PosteriorDraws, probabilities: &[f64]) -> Result<PosteriorSummary> {
    summarize(draws.psi_draws(), probabilities)
}

pub fn summarize(values: &[f64], probabilities: &[f64]) -> Result<PosteriorSummary> {
    if values.len() < MIN_SUMMARY_DRAWS {
        return Err(Error::InsufficientData(format!(
            "{} draws; at least {MIN_SUMMARY_DRAWS} required",
            values.len()
        )));
    }
    if let Some(p) = probabilities.iter().find(|p| !(**p > 0.0 && **p < 1.0)) {
        return Err(Error::InvalidParameter(format!(
            "quantile probability {p} outside (0, 1)"
        )));
    }
    Ok(PosteriorSummary {
        mean: mean(values),
        sd: sample_sd(values),
        probabilities: probabilities.to_vec(),
        quantiles: quantiles(values, probabilities)?,
    })
}
