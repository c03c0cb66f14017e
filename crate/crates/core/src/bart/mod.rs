//! Bayesian additive regression trees.
//!
//! `y = sum_j g(x; T_j, M_j) + e`, `e ~ N(0, sigma^2)`, fitted by backfitting
//! MCMC with hard axis-aligned splits. The response is rescaled to
//! `[-0.5, 0.5]` before fitting and every prediction is mapped back.

mod sampler;
mod tree;

pub use tree::{Tree, TreeNode};

use crate::rng::{derive_seed, rng_from_seed};
use crate::stats::{mean, quantile_sorted, sample_sd};
use crate::{Error, Result};
use rayon::prelude::*;
use sampler::{Grid, Sampler};
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const FORMAT_VERSION: u32 = 1;
pub const MIN_ROWS: usize = 10;
const N_CUTS: usize = 100;
const SIGMA_HAT_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BartConfig {
    /// Number of trees.
    pub m: usize,
    /// Split probability at depth `d` is `alpha (1 + d)^-beta`.
    pub alpha: f64,
    pub beta: f64,
    /// Leaf prior shrinkage: `sigma_mu = range(y) / (2 k sqrt(m))`.
    pub k: f64,
    pub nu: f64,
    pub q: f64,
    /// Total iterations, burn-in included.
    pub n_iterations: usize,
    pub n_burnin: usize,
    pub thin: usize,
    pub seed: u64,
}

impl Default for BartConfig {
    fn default() -> Self {
        Self {
            m: 50,
            alpha: 0.95,
            beta: 2.0,
            k: 2.0,
            nu: 3.0,
            q: 0.9,
            n_iterations: 2500,
            n_burnin: 500,
            thin: 20,
            seed: 0,
        }
    }
}

impl BartConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("BART config: {m}")));
        if self.m == 0 {
            return bad("m must be at least 1");
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad("alpha must lie in (0, 1)");
        }
        if !(self.beta >= 0.0) || !(self.k > 0.0) || !(self.nu > 0.0) {
            return bad("beta must be >= 0, k and nu > 0");
        }
        if !(self.q > 0.0 && self.q < 1.0) {
            return bad("q must lie in (0, 1)");
        }
        if self.n_iterations <= self.n_burnin || self.thin == 0 {
            return bad("need n_iterations > n_burnin and thin >= 1");
        }
        Ok(())
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            seed,
            ..self.clone()
        }
    }
}

/// One retained posterior state: the trees and the error sd on the original scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BartState {
    pub sigma: f64,
    pub trees: Vec<Tree>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BartPosterior {
    pub version: u32,
    pub names: Vec<String>,
    /// `y = center + scale * y_normalized`
    pub center: f64,
    pub scale: f64,
    /// Observed `[min, max]` of each predictor.
    pub training_box: Vec<(f64, f64)>,
    pub n_train: usize,
    /// Splits on each predictor, summed over retained states.
    pub inclusion_counts: Vec<u64>,
    /// Average tree depth over post-burn-in iterations.
    pub mean_depth: f64,
    pub config: BartConfig,
    pub states: Vec<BartState>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    /// `draws[s][i]`: state `s` at point `i`.
    pub draws: Vec<Vec<f64>>,
    pub mean: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

fn check_rows(x: &[Vec<f64>], y: &[f64], min: usize) -> Result<usize> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            got: y.len(),
        });
    }
    if x.len() < min {
        return Err(Error::InsufficientData(format!(
            "{} rows; BART needs at least {min}",
            x.len()
        )));
    }
    let p = x[0].len();
    if p == 0 {
        return Err(Error::InvalidParameter("no predictor columns".into()));
    }
    if let Some(r) = x.iter().find(|r| r.len() != p) {
        return Err(Error::DimensionMismatch {
            expected: p,
            got: r.len(),
        });
    }
    if x.iter().flatten().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter("non-finite training value".into()));
    }
    Ok(p)
}

/// Fit BART to rows `x` and responses `y` (at least ten rows).
pub fn fit(x: &[Vec<f64>], y: &[f64], config: &BartConfig) -> Result<BartPosterior> {
    check_rows(x, y, MIN_ROWS)?;
    fit_unchecked(x, y, config, default_names(x[0].len()))
}

/// As [`fit`], with predictor names recorded in the posterior.
pub fn fit_named(
    x: &[Vec<f64>],
    y: &[f64],
    names: &[String],
    config: &BartConfig,
) -> Result<BartPosterior> {
    let p = check_rows(x, y, MIN_ROWS)?;
    if names.len() != p {
        return Err(Error::DimensionMismatch {
            expected: p,
            got: names.len(),
        });
    }
    fit_unchecked(x, y, config, names.to_vec())
}

fn default_names(p: usize) -> Vec<String> {
    (1..=p).map(|j| format!("x{j}")).collect()
}

fn fit_unchecked(
    x: &[Vec<f64>],
    y: &[f64],
    config: &BartConfig,
    names: Vec<String>,
) -> Result<BartPosterior> {
    config.validate()?;
    let p = x[0].len();
    let (lo, hi) = y
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let center = 0.5 * (lo + hi);
    let range = hi - lo;
    let scale = if range > 1e-12 * (1.0 + center.abs()) { range } else { 1.0 };
    let y_norm: Vec<f64> = y.iter().map(|v| (v - center) / scale).collect();
    let sigma_hat = sample_sd(&y_norm).max(SIGMA_HAT_FLOOR);

    let mut sampler = Sampler::new(Grid::new(x, N_CUTS), y_norm, config, sigma_hat);
    let mut rng = rng_from_seed(config.seed);
    let mut states = Vec::new();
    let mut depth_sum = 0.0;
    for it in 0..config.n_iterations {
        sampler.step(&mut rng);
        if it >= config.n_burnin {
            depth_sum += sampler.mean_depth();
            if (it - config.n_burnin) % config.thin == 0 {
                states.push(BartState {
                    sigma: sampler.sigma2.sqrt() * scale,
                    trees: sampler.snapshot(),
                });
            }
        }
    }
    let mut inclusion_counts = vec![0u64; p];
    for s in &states {
        for t in &s.trees {
            for v in t.split_vars() {
                inclusion_counts[v] += 1;
            }
        }
    }
    let training_box = (0..p)
        .map(|v| {
            x.iter().map(|r| r[v]).fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), c| {
                (a.min(c), b.max(c))
            })
        })
        .collect();
    Ok(BartPosterior {
        version: FORMAT_VERSION,
        names,
        center,
        scale,
        training_box,
        n_train: x.len(),
        inclusion_counts,
        mean_depth: depth_sum / (config.n_iterations - config.n_burnin) as f64,
        config: config.clone(),
        states,
    })
}

impl BartPosterior {
    pub fn dimension(&self) -> usize {
        self.training_box.len()
    }

    pub fn n_states(&self) -> usize {
        self.states.len()
    }

    fn check_point(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dimension() {
            return Err(Error::DimensionMismatch {
                expected: self.dimension(),
                got: x.len(),
            });
        }
        Ok(())
    }

    #[inline]
    fn eval_state(&self, s: &BartState, x: &[f64]) -> f64 {
        self.center + self.scale * s.trees.iter().map(|t| t.eval(x)).sum::<f64>()
    }

    /// Prediction of every retained state at one point.
    pub fn draws_at(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_point(x)?;
        Ok(self.states.iter().map(|s| self.eval_state(s, x)).collect())
    }

    /// Posterior mean prediction at one point.
    pub fn mean_at(&self, x: &[f64]) -> Result<f64> {
        Ok(mean(&self.draws_at(x)?))
    }

    pub fn predict(&self, xstar: &[Vec<f64>]) -> Result<Prediction> {
        for x in xstar {
            self.check_point(x)?;
        }
        let draws: Vec<Vec<f64>> = self
            .states
            .iter()
            .map(|s| xstar.iter().map(|x| self.eval_state(s, x)).collect())
            .collect();
        let mut out = Prediction {
            draws,
            mean: Vec::with_capacity(xstar.len()),
            lower: Vec::with_capacity(xstar.len()),
            upper: Vec::with_capacity(xstar.len()),
        };
        for i in 0..xstar.len() {
            let mut col: Vec<f64> = out.draws.iter().map(|d| d[i]).collect();
            out.mean.push(mean(&col));
            col.sort_by(f64::total_cmp);
            out.lower.push(quantile_sorted(&col, 0.025));
            out.upper.push(quantile_sorted(&col, 0.975));
        }
        Ok(out)
    }

    /// Fraction of all splits that use each predictor.
    pub fn inclusion_proportions(&self) -> Vec<f64> {
        let total: u64 = self.inclusion_counts.iter().sum();
        self.inclusion_counts
            .iter()
            .map(|&c| if total == 0 { 0.0 } else { c as f64 / total as f64 })
            .collect()
    }

    pub fn mean_sigma(&self) -> f64 {
        mean(&self.states.iter().map(|s| s.sigma).collect::<Vec<_>>())
    }

    /// Average posterior-mean prediction over the rows of `x`, with predictor
    /// `var` set to each value of `grid` in turn.
    pub fn partial_dependence(&self, x: &[Vec<f64>], var: usize, grid: &[f64]) -> Result<Vec<f64>> {
        if var >= self.dimension() {
            return Err(Error::InvalidParameter(format!("predictor {var} out of range")));
        }
        grid.iter()
            .map(|&g| {
                let rows: Vec<Vec<f64>> = x
                    .iter()
                    .map(|r| {
                        let mut r = r.clone();
                        r[var] = g;
                        r
                    })
                    .collect();
                Ok(mean(&self.predict(&rows)?.mean))
            })
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let post: Self = serde_json::from_str(s)?;
        if post.version != FORMAT_VERSION {
            return Err(Error::Parse(format!(
                "ensemble format version {} (expected {FORMAT_VERSION})",
                post.version
            )));
        }
        if post.states.is_empty() || post.states.iter().any(|s| !(s.sigma > 0.0)) {
            return Err(Error::Parse("ensemble has no states or a nonpositive sigma".into()));
        }
        let p = post.dimension();
        let bad_var = post.states.iter().flat_map(|s| &s.trees).any(|t| t.split_vars().any(|v| v >= p));
        if bad_var || post.names.len() != p {
            return Err(Error::Parse("ensemble predictor count is inconsistent".into()));
        }
        Ok(post)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read ensemble {}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoocvPoint {
    pub index: usize,
    pub observed: f64,
    pub mean: f64,
    pub lower: f64,
    pub upper: f64,
}

/// Leave-one-out predictions: refit without row `i`, predict at `x[i]`.
pub fn loocv(x: &[Vec<f64>], y: &[f64], config: &BartConfig) -> Result<Vec<LoocvPoint>> {
    let p = check_rows(x, y, MIN_ROWS)?;
    (0..x.len())
        .into_par_iter()
        .map(|i| {
            let xs: Vec<Vec<f64>> =
                x.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, r)| r.clone()).collect();
            let ys: Vec<f64> =
                y.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, v)| *v).collect();
            let post = fit_unchecked(
                &xs,
                &ys,
                &config.with_seed(derive_seed(config.seed, &[i as u64])),
                default_names(p),
            )?;
            let pred = post.predict(std::slice::from_ref(&x[i]))?;
            Ok(LoocvPoint {
                index: i,
                observed: y[i],
                mean: pred.mean[0],
                lower: pred.lower[0],
                upper: pred.upper[0],
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick() -> BartConfig {
        BartConfig {
            m: 20,
            n_iterations: 600,
            n_burnin: 200,
            thin: 4,
            seed: 9,
            ..BartConfig::default()
        }
    }

    #[test]
    fn config_validation() {
        assert!(BartConfig::default().validate().is_ok());
        for bad in [
            BartConfig { m: 0, ..BartConfig::default() },
            BartConfig { alpha: 1.0, ..BartConfig::default() },
            BartConfig { q: 0.0, ..BartConfig::default() },
            BartConfig { n_burnin: 2500, ..BartConfig::default() },
        ] {
            assert!(bad.validate().is_err());
        }
    }

    #[test]
    fn rejects_too_few_rows_and_ragged_input() {
        let x: Vec<Vec<f64>> = (0..9).map(|i| vec![i as f64]).collect();
        assert!(matches!(fit(&x, &[0.0; 9], &quick()), Err(Error::InsufficientData(_))));
        let mut x: Vec<Vec<f64>> = (0..12).map(|i| vec![i as f64]).collect();
        x[3].push(1.0);
        assert!(fit(&x, &[0.0; 12], &quick()).is_err());
    }

    #[test]
    fn normalization_round_trips() {
        let y = [3.5, -1.25, 0.1, 7.0];
        let (lo, hi) = (-1.25f64, 7.0f64);
        let (c, s) = (0.5 * (lo + hi), hi - lo);
        for v in y {
            assert!((c + s * ((v - c) / s) - v).abs() <= 4.0 * f64::EPSILON * v.abs().max(1.0));
        }
    }

    #[test]
    fn prediction_shapes_and_errors() {
        let x: Vec<Vec<f64>> = (0..15).map(|i| vec![i as f64, 1.0]).collect();
        let y: Vec<f64> = (0..15).map(|i| i as f64).collect();
        let post = fit(&x, &y, &quick()).unwrap();
        let empty = post.predict(&[]).unwrap();
        assert!(empty.mean.is_empty());
        assert!(post.predict(&[vec![1.0]]).is_err());
        assert_eq!(post.inclusion_counts[1], 0);
        let p = post.predict(&x[..3]).unwrap();
        assert_eq!(p.draws.len(), post.n_states());
        assert_eq!(post.n_states(), 100);
        assert!(p.lower.iter().zip(&p.upper).all(|(l, u)| l <= u));
    }

    #[test]
    fn version_mismatch_is_rejected() {
        let x: Vec<Vec<f64>> = (0..12).map(|i| vec![i as f64]).collect();
        let post = fit(&x, &[1.0; 12], &quick()).unwrap();
        let json = post.to_json().unwrap().replacen("\"version\":1", "\"version\":7", 1);
        assert!(BartPosterior::from_json(&json).is_err());
    }
}
