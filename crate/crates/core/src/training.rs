//! Training data for the lambda surrogate.
//!
//! A maximin Latin hypercube over a design box picks the training points; at
//! each point `R` datasets are simulated, each posterior is fitted, and the
//! spread of the replicate posteriors gives `lambda_hat`, the large-sample
//! scale of the posterior of `psi` (`sd(psi | y) ~ lambda / sqrt(n)`).

use crate::model::{Model, ParameterPoint};
use crate::posterior::{fit_posterior_from_stats, AnalysisPrior, McmcConfig};
use crate::rng::{derive_seed, derived_rng};
use crate::stats::{mean, sample_sd};
use crate::{Error, Result};
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

pub const MIN_REPLICATES: usize = 30;
pub const MIN_SAMPLE_SIZE: usize = 50;
pub const BOOTSTRAP_RESAMPLES: usize = 200;
pub const MAX_FAILURE_FRACTION: f64 = 0.10;
const LHS_CANDIDATES: u64 = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxSide {
    pub name: String,
    pub lo: f64,
    pub hi: f64,
}

/// Axis-aligned box of parameter values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<BoxSide>", into = "Vec<BoxSide>")]
pub struct DesignBox {
    names: Arc<[String]>,
    bounds: Vec<(f64, f64)>,
}

impl TryFrom<Vec<BoxSide>> for DesignBox {
    type Error = Error;
    fn try_from(sides: Vec<BoxSide>) -> Result<Self> {
        let names: Vec<String> = sides.iter().map(|s| s.name.clone()).collect();
        let bounds = sides.iter().map(|s| (s.lo, s.hi)).collect();
        Self::new(&names, bounds)
    }
}

impl From<DesignBox> for Vec<BoxSide> {
    fn from(b: DesignBox) -> Self {
        b.names
            .iter()
            .zip(&b.bounds)
            .map(|(n, &(lo, hi))| BoxSide {
                name: n.clone(),
                lo,
                hi,
            })
            .collect()
    }
}

impl DesignBox {
    pub fn new<S: AsRef<str>>(names: &[S], bounds: Vec<(f64, f64)>) -> Result<Self> {
        if names.len() != bounds.len() {
            return Err(Error::DimensionMismatch {
                expected: names.len(),
                got: bounds.len(),
            });
        }
        if names.is_empty() {
            return Err(Error::Config("design box has no dimensions".into()));
        }
        for (n, (lo, hi)) in names.iter().zip(&bounds) {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::Config(format!(
                    "design box side {}: need lo < hi, got [{lo}, {hi}]",
                    n.as_ref()
                )));
            }
        }
        Ok(Self {
            names: crate::model::shared_names(names),
            bounds,
        })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn bounds(&self) -> &[(f64, f64)] {
        &self.bounds
    }

    pub fn dimension(&self) -> usize {
        self.bounds.len()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dimension()
            && x.iter().zip(&self.bounds).all(|(v, (lo, hi))| v >= lo && v <= hi)
    }

    /// Each side widened by `fraction` of its length at both ends.
    pub fn inflate(&self, fraction: f64) -> Self {
        let bounds = self
            .bounds
            .iter()
            .map(|&(lo, hi)| {
                let pad = fraction * (hi - lo);
                (lo - pad, hi + pad)
            })
            .collect();
        Self {
            names: Arc::clone(&self.names),
            bounds,
        }
    }

    fn check_model<M: Model>(&self, model: &M) -> Result<()> {
        let expected = model.parameter_names();
        if expected.len() != self.dimension()
            || expected.iter().zip(self.names.iter()).any(|(a, b)| a != b)
        {
            return Err(Error::Config(format!(
                "design box sides {:?} do not match model parameters {:?}",
                self.names, expected
            )));
        }
        Ok(())
    }
}

fn min_pairwise_distance(unit: &[Vec<f64>]) -> f64 {
    let mut best = f64::INFINITY;
    for i in 0..unit.len() {
        for j in i + 1..unit.len() {
            let d2: f64 = unit[i]
                .iter()
                .zip(&unit[j])
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            best = best.min(d2);
        }
    }
    best.sqrt()
}

/// Maximin Latin hypercube of `k` points in `design_box`.
pub fn lhs(design_box: &DesignBox, k: usize, seed: u64) -> Result<Vec<ParameterPoint>> {
    if k == 0 {
        return Err(Error::InvalidSize("Latin hypercube needs k >= 1".into()));
    }
    let d = design_box.dimension();
    let mut best: Option<(f64, Vec<Vec<f64>>)> = None;
    for c in 0..LHS_CANDIDATES {
        let mut rng = derived_rng(seed, &[c]);
        let mut unit = vec![vec![0.0; d]; k];
        for j in 0..d {
            let mut strata: Vec<usize> = (0..k).collect();
            strata.shuffle(&mut rng);
            for (i, s) in strata.into_iter().enumerate() {
                let u: f64 = rng.random();
                unit[i][j] = (s as f64 + u) / k as f64;
            }
        }
        let score = min_pairwise_distance(&unit);
        if best.as_ref().is_none_or(|(b, _)| score > *b) {
            best = Some((score, unit));
        }
    }
    let (_, unit) = best.expect("at least one candidate");
    unit.into_iter()
        .map(|u| {
            let values = u
                .iter()
                .zip(design_box.bounds())
                .map(|(t, (lo, hi))| (lo + t * (hi - lo)).clamp(*lo, *hi))
                .collect();
            ParameterPoint::new(Arc::clone(&design_box.names), values)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimatorKind {
    /// `sqrt(n) * sd` of the replicate posterior means.
    #[default]
    SdOfPosteriorMeans,
    /// `sqrt(n) *` mean of the replicate posterior sds.
    MeanOfPosteriorSds,
}

impl EstimatorKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EstimatorKind::SdOfPosteriorMeans => "sd-of-posterior-means",
            EstimatorKind::MeanOfPosteriorSds => "mean-of-posterior-sds",
        }
    }

    fn apply(self, stats: &[f64], n: usize) -> f64 {
        let root_n = (n as f64).sqrt();
        match self {
            EstimatorKind::SdOfPosteriorMeans => root_n * sample_sd(stats),
            EstimatorKind::MeanOfPosteriorSds => root_n * mean(stats),
        }
    }
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EstimatorKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sd-of-posterior-means" => Ok(Self::SdOfPosteriorMeans),
            "mean-of-posterior-sds" => Ok(Self::MeanOfPosteriorSds),
            other => Err(Error::Parse(format!("unknown estimator kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LambdaEstimate {
    pub theta: ParameterPoint,
    pub lambda_hat: f64,
    pub mc_se: f64,
    pub n_used: usize,
    pub r_used: usize,
    pub n_failed: usize,
    pub estimator: EstimatorKind,
}

/// Settings shared by [`estimate_lambda`] and [`build_training_set`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LambdaConfig {
    pub n: usize,
    pub replicates: usize,
    pub estimator: EstimatorKind,
    pub mcmc: McmcConfig,
}

impl Default for LambdaConfig {
    fn default() -> Self {
        Self {
            n: 500,
            replicates: 200,
            estimator: EstimatorKind::default(),
            mcmc: McmcConfig::default(),
        }
    }
}

impl LambdaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.replicates < MIN_REPLICATES {
            return Err(Error::Config(format!(
                "R = {}; at least {MIN_REPLICATES} replicates required",
                self.replicates
            )));
        }
        if self.n < MIN_SAMPLE_SIZE {
            return Err(Error::Config(format!(
                "n = {}; at least {MIN_SAMPLE_SIZE} required for lambda estimation",
                self.n
            )));
        }
        self.mcmc.validate()
    }
}

/// Estimate lambda at `theta` from `R` simulated replicates.
pub fn estimate_lambda<M: Model>(
    model: &M,
    prior: &AnalysisPrior,
    theta: &ParameterPoint,
    config: &LambdaConfig,
    seed: u64,
) -> Result<LambdaEstimate> {
    config.validate()?;
    model.validate(theta)?;
    let n = config.n;
    let kind = config.estimator;

    let outcomes: Vec<Option<f64>> = (0..config.replicates as u64)
        .into_par_iter()
        .map(|r| {
            let data = model.simulate(theta, n, derive_seed(seed, &[r, 0])).ok()?;
            let stats = model.sufficient_stats(&data);
            let mcmc = config.mcmc.with_seed(derive_seed(seed, &[r, 1]));
            let draws = fit_posterior_from_stats(model, &stats, prior, &mcmc).ok()?;
            let psi = draws.psi_draws();
            Some(match kind {
                EstimatorKind::SdOfPosteriorMeans => mean(psi),
                EstimatorKind::MeanOfPosteriorSds => sample_sd(psi),
            })
        })
        .collect();
    let stats: Vec<f64> = outcomes.iter().filter_map(|o| *o).collect();
    let n_failed = outcomes.len() - stats.len();
    if n_failed as f64 > MAX_FAILURE_FRACTION * config.replicates as f64 {
        return Err(Error::Estimation(format!(
            "{n_failed} of {} posterior fits failed",
            config.replicates
        )));
    }
    if n_failed > 0 {
        log::warn!("{n_failed} replicate fits dropped at theta {:?}", theta.values());
    }

    let lambda_hat = kind.apply(&stats, n);
    if !(lambda_hat.is_finite() && lambda_hat > 0.0) {
        return Err(Error::Estimation(format!("lambda estimate {lambda_hat} is not positive")));
    }
    let mut rng = derived_rng(seed, &[u64::MAX]);
    let mut resample = vec![0.0; stats.len()];
    let boot: Vec<f64> = (0..BOOTSTRAP_RESAMPLES)
        .map(|_| {
            for v in resample.iter_mut() {
                *v = stats[rng.random_range(0..stats.len())];
            }
            kind.apply(&resample, n)
        })
        .collect();
    let mc_se = sample_sd(&boot).max(f64::EPSILON * lambda_hat);

    Ok(LambdaEstimate {
        theta: theta.clone(),
        lambda_hat,
        mc_se,
        n_used: n,
        r_used: stats.len(),
        n_failed,
        estimator: kind,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub model: String,
    pub n: usize,
    pub replicates: usize,
    pub estimator: EstimatorKind,
    pub k: usize,
    pub seed: u64,
    pub design_box: DesignBox,
    pub mcmc: McmcConfig,
    pub failed_replicates: Vec<usize>,
    pub created_unix: u64,
}

/// `(theta, lambda_hat)` pairs plus where they came from.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    pub names: Arc<[String]>,
    pub estimates: Vec<LambdaEstimate>,
    pub provenance: Option<Provenance>,
}

impl TrainingSet {
    pub fn len(&self) -> usize {
        self.estimates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.estimates.is_empty()
    }

    /// Predictor matrix (rows are training points).
    pub fn x(&self) -> Vec<Vec<f64>> {
        self.estimates.iter().map(|e| e.theta.values().to_vec()).collect()
    }

    pub fn log_lambda(&self) -> Vec<f64> {
        self.estimates.iter().map(|e| e.lambda_hat.ln()).collect()
    }

    /// Standard error of `log(lambda_hat)` by the delta method.
    pub fn log_lambda_se(&self) -> Vec<f64> {
        self.estimates.iter().map(|e| e.mc_se / e.lambda_hat).collect()
    }

    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header: Vec<&str> = self.names.iter().map(String::as_str).collect();
        header.extend(["lambda_hat", "mc_se", "n", "R", "estimator"]);
        w.write_record(&header)?;
        for e in &self.estimates {
            let mut rec: Vec<String> = e.theta.values().iter().map(|v| v.to_string()).collect();
            rec.push(e.lambda_hat.to_string());
            rec.push(e.mc_se.to_string());
            rec.push(e.n_used.to_string());
            rec.push(e.r_used.to_string());
            rec.push(e.estimator.to_string());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: std::io::Read>(reader: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let header = r.headers()?.clone();
        let fixed = ["lambda_hat", "mc_se", "n", "R", "estimator"];
        let p = header.len().checked_sub(fixed.len()).filter(|p| *p > 0).ok_or_else(|| {
            Error::Parse("training CSV needs parameter columns and lambda_hat,mc_se,n,R,estimator".into())
        })?;
        if header.iter().skip(p).ne(fixed.iter().copied()) {
            return Err(Error::Parse(format!(
                "training CSV trailing columns must be {fixed:?}, got {:?}",
                header.iter().skip(p).collect::<Vec<_>>()
            )));
        }
        let names = crate::model::shared_names(&header.iter().take(p).collect::<Vec<_>>());
        let num = |s: &str, line: usize| -> Result<f64> {
            s.trim()
                .parse::<f64>()
                .map_err(|_| Error::Parse(format!("training CSV row {line}: bad number {s:?}")))
        };
        let mut estimates = Vec::new();
        for (i, rec) in r.records().enumerate() {
            let rec = rec?;
            let line = i + 2;
            if rec.len() != header.len() {
                return Err(Error::Parse(format!("training CSV row {line}: wrong field count")));
            }
            let values = (0..p).map(|j| num(&rec[j], line)).collect::<Result<Vec<_>>>()?;
            let lambda_hat = num(&rec[p], line)?;
            let mc_se = num(&rec[p + 1], line)?;
            if !(lambda_hat > 0.0 && lambda_hat.is_finite()) || !(mc_se >= 0.0) {
                return Err(Error::Parse(format!(
                    "training CSV row {line}: lambda_hat must be positive and mc_se nonnegative"
                )));
            }
            let int = |s: &str| -> Result<usize> {
                s.trim()
                    .parse()
                    .map_err(|_| Error::Parse(format!("training CSV row {line}: bad integer {s:?}")))
            };
            estimates.push(LambdaEstimate {
                theta: ParameterPoint::new(Arc::clone(&names), values)?,
                lambda_hat,
                mc_se,
                n_used: int(&rec[p + 2])?,
                r_used: int(&rec[p + 3])?,
                n_failed: 0,
                estimator: rec[p + 4].parse()?,
            });
        }
        Ok(Self {
            names,
            estimates,
            provenance: None,
        })
    }

    /// Writes `<path>` and the provenance sidecar `<path>.json`.
    pub fn save(&self, path: &Path) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)?;
        if let Some(p) = &self.provenance {
            let side = sidecar_path(path);
            std::fs::write(side, serde_json::to_string_pretty(p)?)?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| {
            Error::Config(format!("cannot read training set {}: {e}", path.display()))
        })?;
        let mut set = Self::read_csv(file)
            .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
        let side = sidecar_path(path);
        if side.exists() {
            set.provenance = Some(serde_json::from_str(&std::fs::read_to_string(side)?)?);
        }
        Ok(set)
    }
}

fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    s.into()
}

/// Latin hypercube over `design_box`, then [`estimate_lambda`] at each point.
pub fn build_training_set<M: Model>(
    model: &M,
    prior: &AnalysisPrior,
    design_box: &DesignBox,
    k: usize,
    config: &LambdaConfig,
    seed: u64,
) -> Result<TrainingSet> {
    design_box.check_model(model)?;
    config.validate()?;
    let points = lhs(design_box, k, derive_seed(seed, &[0]))?;
    let estimates = points
        .par_iter()
        .enumerate()
        .map(|(i, theta)| estimate_lambda(model, prior, theta, config, derive_seed(seed, &[1, i as u64])))
        .collect::<Result<Vec<_>>>()?;
    let created_unix = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    Ok(TrainingSet {
        names: Arc::clone(&design_box.names),
        provenance: Some(Provenance {
            model: model.kind_name().to_string(),
            n: config.n,
            replicates: config.replicates,
            estimator: config.estimator,
            k,
            seed,
            design_box: design_box.clone(),
            mcmc: config.mcmc.clone(),
            failed_replicates: estimates.iter().map(|e| e.n_failed).collect(),
            created_unix,
        }),
        estimates,
    })
}
