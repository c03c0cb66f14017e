//! Monte Carlo ground truth: simulate data, fit the posterior, apply the
//! decision rule, repeat.

use crate::model::{Dataset, DesignPrior, Model, ParameterPoint};
use crate::oc::design::{CostSpec, TrialDesign};
use crate::oc::evaluate::{attach_reference_checks, AnalysisOc, IecBreakdown, OcReport};
use crate::posterior::{fit_posterior, tau, AnalysisPrior, McmcConfig};
use crate::rng::derive_seed;
use crate::{Error, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub const MIN_NSIM: usize = 100;
pub const MAX_FAILURE_FRACTION: f64 = 0.10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OracleConfig {
    pub nsim: usize,
    pub mcmc: McmcConfig,
    pub seed: u64,
    /// Draw a fresh `theta` from the design prior for every replicate.
    pub resample_theta: bool,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            nsim: 400,
            mcmc: McmcConfig::default(),
            seed: 1,
            resample_theta: false,
        }
    }
}

impl OracleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.nsim < MIN_NSIM {
            return Err(Error::InvalidSize(format!(
                "nsim = {}; at least {MIN_NSIM} replicates required",
                self.nsim
            )));
        }
        self.mcmc.validate()
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            seed,
            ..self.clone()
        }
    }
}

/// Where each replicate's parameter comes from.
#[derive(Debug, Clone, Copy)]
pub enum ThetaSource<'a> {
    Fixed(&'a ParameterPoint),
    DesignPrior(&'a DesignPrior),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub estimate: f64,
    pub se: f64,
    pub n_used: usize,
    pub n_failed: usize,
}

/// Per-analysis stopping tallies of the oracle, plus its report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleResult {
    pub efficacy_at: Vec<usize>,
    pub futility_at: Vec<usize>,
    pub no_decision: usize,
    pub n_used: usize,
    pub n_failed: usize,
    pub report: OcReport,
}

impl OracleResult {
    pub fn cumulative_efficacy(&self) -> Vec<McEstimate> {
        let mut acc = 0;
        self.efficacy_at
            .iter()
            .map(|&c| {
                acc += c;
                binomial(acc, self.n_used, self.n_failed)
            })
            .collect()
    }

    pub fn final_efficacy(&self) -> McEstimate {
        *self.cumulative_efficacy().last().expect("at least one analysis")
    }
}

fn binomial(successes: usize, n: usize, failed: usize) -> McEstimate {
    let p = successes as f64 / n as f64;
    McEstimate {
        estimate: p,
        se: (p * (1.0 - p) / n as f64).sqrt(),
        n_used: n,
        n_failed: failed,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Stop {
    Efficacy(usize),
    Futility(usize),
    None,
}

struct Replicate {
    psi: f64,
    stop: Stop,
}

fn replicate<M: Model>(
    model: &M,
    prior: &AnalysisPrior,
    source: ThetaSource<'_>,
    design: &TrialDesign,
    config: &OracleConfig,
    r: u64,
) -> Result<Replicate> {
    let owned;
    let theta = match source {
        ThetaSource::Fixed(t) => t,
        ThetaSource::DesignPrior(p) => {
            owned = p
                .sample(1, derive_seed(config.seed, &[r, 2]))?
                .pop()
                .expect("one draw");
            &owned
        }
    };
    let psi = model.psi(theta)?;
    let full = model.simulate(theta, design.final_n(), derive_seed(config.seed, &[r, 0]))?;
    let t_max = design.n_analyses();
    for (t, &n) in design.schedule.iter().enumerate() {
        let data = if n == full.len() { full.clone() } else { full.prefix(n) };
        let mcmc = config.mcmc.with_seed(derive_seed(config.seed, &[r, 1, t as u64]));
        let draws = fit_posterior(model, &data, prior, &mcmc)?;
        let p = tau(&draws, design.psi0)?;
        if p > design.efficacy[t] {
            return Ok(Replicate { psi, stop: Stop::Efficacy(t) });
        }
        if t + 1 < t_max && p <= design.futility_at(t) {
            return Ok(Replicate { psi, stop: Stop::Futility(t) });
        }
    }
    Ok(Replicate { psi, stop: Stop::None })
}

/// Stopping probabilities of `design` by full simulation.
///
/// Each replicate simulates one dataset of the maximal size and analyzes its
/// nested prefixes in order. With one analysis this is exactly
/// [`mc_power_fixed`] on the same seed stream.
pub fn mc_gsd<M: Model>(
    model: &M,
    prior: &AnalysisPrior,
    source: ThetaSource<'_>,
    design: &TrialDesign,
    config: &OracleConfig,
    cost: Option<&CostSpec>,
) -> Result<OracleResult> {
    config.validate()?;
    design.validate()?;
    if let Some(c) = cost {
        c.validate()?;
    }
    if let ThetaSource::Fixed(t) = source {
        model.validate(t)?;
    }
    let outcomes: Vec<Result<Replicate>> = (0..config.nsim as u64)
        .into_par_iter()
        .map(|r| replicate(model, prior, source, design, config, r))
        .collect();
    let t_max = design.n_analyses();
    let mut efficacy_at = vec![0usize; t_max];
    let mut futility_at = vec![0usize; t_max];
    let mut no_decision = 0;
    let mut failed = 0;
    let mut null_eff = 0usize;
    let mut alt_miss = 0usize;
    let mut size = 0usize;
    let mut first_error = None;
    for o in outcomes {
        match o {
            Ok(rep) => {
                let alt = rep.psi > design.psi0;
                match rep.stop {
                    Stop::Efficacy(t) => {
                        efficacy_at[t] += 1;
                        size += design.schedule[t];
                        null_eff += usize::from(!alt);
                    }
                    Stop::Futility(t) => {
                        futility_at[t] += 1;
                        size += design.schedule[t];
                        alt_miss += usize::from(alt);
                    }
                    Stop::None => {
                        no_decision += 1;
                        size += design.final_n();
                        alt_miss += usize::from(alt);
                    }
                }
            }
            Err(e) if e.is_numerical() => {
                failed += 1;
                first_error.get_or_insert(e);
            }
            Err(e) => return Err(e),
        }
    }
    if failed as f64 > MAX_FAILURE_FRACTION * config.nsim as f64 {
        return Err(Error::Estimation(format!(
            "{failed} of {} oracle replicates failed; first error: {}",
            config.nsim,
            first_error.map(|e| e.to_string()).unwrap_or_default()
        )));
    }
    let n = config.nsim - failed;
    let nf = n as f64;
    let bse = |c: usize| {
        let p = c as f64 / nf;
        (p * (1.0 - p) / nf).sqrt()
    };
    let mut analyses = Vec::with_capacity(t_max);
    let (mut ce, mut cf) = (0, 0);
    for t in 0..t_max {
        ce += efficacy_at[t];
        cf += futility_at[t];
        let ends = efficacy_at[t] + futility_at[t] + if t + 1 == t_max { no_decision } else { 0 };
        analyses.push(AnalysisOc {
            analysis: t + 1,
            n: design.schedule[t],
            efficacy_threshold: design.efficacy[t],
            futility_threshold: design.futility_at(t),
            efficacy_at: efficacy_at[t] as f64 / nf,
            efficacy_cumulative: ce as f64 / nf,
            futility_at: futility_at[t] as f64 / nf,
            futility_cumulative: cf as f64 / nf,
            ends_at: ends as f64 / nf,
            se_efficacy_at: bse(efficacy_at[t]),
            se_efficacy_cumulative: bse(ce),
            se_futility_cumulative: bse(cf),
            interval_efficacy_at: None,
            interval_efficacy_cumulative: None,
        });
    }
    let iess = size as f64 / nf;
    let iess_efficacy_only = efficacy_at
        .iter()
        .zip(&design.schedule)
        .map(|(&c, &m)| c as f64 * m as f64)
        .sum::<f64>()
        / nf;
    let mut warnings = Vec::new();
    if failed > 0 {
        warnings.push(format!("{failed} of {} replicates failed and were dropped", config.nsim));
    }
    let mut report = OcReport {
        source: "mc-oracle".into(),
        design: design.label(),
        schedule: design.schedule.clone(),
        psi0: design.psi0,
        n_prior_draws: n,
        n_mvn_draws: 0,
        analyses,
        no_decision: no_decision as f64 / nf,
        iess,
        iess_efficacy_only,
        se_iess: 0.0,
        interval_iess: None,
        iec: cost.map(|c| {
            let fp = c.c0 * null_eff as f64 / nf;
            let fnr = c.c1 * alt_miss as f64 / nf;
            let ss = c.c2 * iess;
            IecBreakdown {
                total: fp + fnr + ss,
                type_i: fp,
                type_ii: fnr,
                sample_size: ss,
            }
        }),
        interval_iec: None,
        cost: cost.copied(),
        n_extrapolated: 0,
        warnings,
        flags: Vec::new(),
        reference_checks: Vec::new(),
    };
    attach_reference_checks(&mut report, design);
    Ok(OracleResult {
        efficacy_at,
        futility_at,
        no_decision,
        n_used: n,
        n_failed: failed,
        report,
    })
}

/// Fixed-design power `P(tau > u)` at sample size `n` by full simulation.
pub fn mc_power_fixed<M: Model>(
    model: &M,
    prior: &AnalysisPrior,
    source: ThetaSource<'_>,
    n: usize,
    u: f64,
    psi0: f64,
    config: &OracleConfig,
) -> Result<McEstimate> {
    let design = TrialDesign::fixed(n, u)?.with_psi0(psi0);
    Ok(mc_gsd(model, prior, source, &design, config, None)?.final_efficacy())
}
