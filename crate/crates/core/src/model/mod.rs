//! Parameter spaces, generative models and design priors.
//!
//! A [`Model`] bundles a data-generating process `f(y | theta)`, the interest
//! functional `psi(theta)`, and an unconstrained analysis parameterization used
//! by the posterior sampler. Two models ship with the crate
//! ([`LogisticSubgroupModel`], [`SurvivalModel`]); [`harness`] holds the small
//! closed-form models used to validate the machinery.

pub mod harness;
mod logistic;
mod prior;
mod survival;

pub use logistic::{LogisticData, LogisticModel as LogisticSubgroupModel, LogisticRecord, LogisticStats};
pub use prior::{DesignPrior, Marginal, PriorComponent};
pub use survival::{SurvivalData, SurvivalModel, SurvivalRecord, SurvivalStats};

use crate::posterior::AnalysisPrior;
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

/// A point in a model's parameter space, on the model's natural scale.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterPoint {
    names: Arc<[String]>,
    values: Vec<f64>,
}

impl ParameterPoint {
    pub fn new(names: Arc<[String]>, values: Vec<f64>) -> Result<Self> {
        if names.len() != values.len() {
            return Err(Error::DimensionMismatch {
                expected: names.len(),
                got: values.len(),
            });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "{} is not finite ({})",
                names[i], values[i]
            )));
        }
        Ok(Self { names, values })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn shared_names(&self) -> Arc<[String]> {
        Arc::clone(&self.names)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.names.iter().position(|n| n == name).map(|i| self.values[i])
    }

    /// Copy of this point with coordinate `index` replaced.
    pub fn with_value(&self, index: usize, value: f64) -> Result<Self> {
        let mut values = self.values.clone();
        *values.get_mut(index).ok_or(Error::DimensionMismatch {
            expected: self.values.len(),
            got: index + 1,
        })? = value;
        Self::new(self.shared_names(), values)
    }
}

pub fn shared_names<S: AsRef<str>>(names: &[S]) -> Arc<[String]> {
    names.iter().map(|s| s.as_ref().to_string()).collect()
}

/// Simulated or observed trial data in accrual order.
pub trait Dataset: Clone + Send + Sync {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// The first `n` records (the data available at an interim analysis).
    fn prefix(&self, n: usize) -> Self;

    fn write_csv<W: Write>(&self, writer: W) -> Result<()>;
}

/// A parametric data model with a scalar interest functional.
pub trait Model: Send + Sync {
    type Data: Dataset;
    /// Sufficient statistics of `Data` for the analysis likelihood.
    type Stats: Send + Sync;

    fn kind_name(&self) -> &'static str;

    fn parameter_names(&self) -> Arc<[String]>;

    fn dimension(&self) -> usize {
        self.parameter_names().len()
    }

    /// Index of the coordinate of `theta` equal to `psi(theta)`.
    fn psi_index(&self) -> usize;

    fn validate(&self, theta: &ParameterPoint) -> Result<()>;

    fn psi(&self, theta: &ParameterPoint) -> Result<f64> {
        self.validate(theta)?;
        Ok(theta.values()[self.psi_index()])
    }

    fn simulate(&self, theta: &ParameterPoint, n: usize, seed: u64) -> Result<Self::Data>;

    /// Log-likelihood at a natural-scale parameter point, evaluated record by record.
    fn log_likelihood(&self, theta: &ParameterPoint, data: &Self::Data) -> Result<f64>;

    /// Names of the unconstrained analysis parameters.
    fn analysis_names(&self) -> Vec<String>;

    fn default_analysis_prior(&self) -> AnalysisPrior;

    fn sufficient_stats(&self, data: &Self::Data) -> Self::Stats;

    /// Log-likelihood in the analysis parameterization, from sufficient statistics.
    fn analysis_log_likelihood(&self, phi: &[f64], stats: &Self::Stats) -> f64;

    /// `psi` as a function of the analysis parameters.
    fn analysis_psi(&self, phi: &[f64]) -> f64;
}

/// Built-in model families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    LogisticSubgroup,
    PiecewiseExpSurvival,
}

impl ModelKind {
    pub fn parameter_names(self) -> Arc<[String]> {
        match self {
            ModelKind::LogisticSubgroup => LogisticSubgroupModel.parameter_names(),
            ModelKind::PiecewiseExpSurvival => SurvivalModel::default().parameter_names(),
        }
    }

    pub fn psi_index(self) -> usize {
        match self {
            ModelKind::LogisticSubgroup => LogisticSubgroupModel.psi_index(),
            ModelKind::PiecewiseExpSurvival => SurvivalModel::default().psi_index(),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::LogisticSubgroup => "logistic-subgroup",
            ModelKind::PiecewiseExpSurvival => "piecewise-exp-survival",
        }
    }
}

/// Callback for code that is generic over the concrete model type.
pub trait ModelVisitor {
    type Output;
    fn visit<M: Model>(self, model: &M) -> Self::Output;
}

/// One-sided hypothesis `H_A: psi > psi0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HypothesisSpec {
    pub psi0: f64,
}

impl HypothesisSpec {
    pub fn is_alternative(&self, psi: f64) -> bool {
        psi > self.psi0
    }
}

/// The model/prior document read by the CLI and the service.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub model: ModelKind,
    pub psi0: f64,
    pub design_prior: DesignPrior,
}

impl ModelSpec {
    pub fn new(model: ModelKind, psi0: f64, design_prior: DesignPrior) -> Result<Self> {
        let spec = Self {
            model,
            psi0,
            design_prior,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.psi0.is_finite() {
            return Err(Error::Config("psi0 must be finite".into()));
        }
        let expected = self.model.parameter_names();
        let got = self.design_prior.names();
        if expected.len() != got.len() || expected.iter().zip(&got).any(|(a, b)| a != b) {
            return Err(Error::Config(format!(
                "design prior components {:?} do not match {} parameters {:?}",
                got,
                self.model.as_str(),
                expected
            )));
        }
        Ok(())
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let spec: Self = serde_json::from_str(s)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::Config(format!("cannot read model file {}: {e}", path.display()))
        })?;
        Self::from_json_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn hypothesis(&self) -> HypothesisSpec {
        HypothesisSpec { psi0: self.psi0 }
    }

    pub fn dispatch<V: ModelVisitor>(&self, visitor: V) -> V::Output {
        match self.model {
            ModelKind::LogisticSubgroup => visitor.visit(&LogisticSubgroupModel),
            ModelKind::PiecewiseExpSurvival => visitor.visit(&SurvivalModel::default()),
        }
    }
}

pub(crate) fn check_size(n: usize) -> Result<()> {
    if n < 2 {
        return Err(Error::InvalidSize(format!("n = {n}; at least 2 records required")));
    }
    Ok(())
}

pub(crate) fn check_dimension(theta: &ParameterPoint, expected: usize) -> Result<()> {
    if theta.len() != expected {
        return Err(Error::DimensionMismatch {
            expected,
            got: theta.len(),
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parameter_point_rejects_mismatch_and_nonfinite() {
        let names = shared_names(&["a", "b"]);
        assert!(ParameterPoint::new(names.clone(), vec![1.0]).is_err());
        assert!(ParameterPoint::new(names.clone(), vec![1.0, f64::NAN]).is_err());
        let p = ParameterPoint::new(names, vec![1.0, 2.0]).unwrap();
        assert_eq!(p.get("b"), Some(2.0));
        assert_eq!(p.with_value(0, 5.0).unwrap().values(), &[5.0, 2.0]);
    }

    #[test]
    fn model_spec_json_roundtrip_and_name_check() {
        let json = r#"{
            "model": "logistic-subgroup",
            "psi0": 0.0,
            "design_prior": [
                {"name": "beta0", "dist": "normal", "params": [0.0, 0.6]},
                {"name": "beta1", "dist": "normal", "params": [0.0, 0.075]},
                {"name": "psi0", "dist": "normal", "params": [0.3, 0.15]},
                {"name": "psi1", "dist": "normal", "params": [0.0, 0.05]}
            ]
        }"#;
        let spec = ModelSpec::from_json_str(json).unwrap();
        assert_eq!(spec.model, ModelKind::LogisticSubgroup);
        let back = serde_json::to_string(&spec).unwrap();
        assert_eq!(ModelSpec::from_json_str(&back).unwrap(), spec);

        let wrong = json.replace("\"beta1\"", "\"gamma\"");
        assert!(ModelSpec::from_json_str(&wrong).is_err());
    }
}
