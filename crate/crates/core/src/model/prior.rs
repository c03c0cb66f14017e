use super::{shared_names, ParameterPoint};
use crate::rng::rng_from_seed;
use crate::{Error, Result};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

/// Marginal design-prior distribution of one parameter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Marginal {
    Normal { mean: f64, sd: f64 },
    /// Normal on the log scale; draws are returned on the natural scale.
    LogNormal { meanlog: f64, sdlog: f64 },
    Uniform { lo: f64, hi: f64 },
}

impl Marginal {
    pub fn normal(mean: f64, sd: f64) -> Result<Self> {
        let m = Marginal::Normal { mean, sd };
        m.validate()?;
        Ok(m)
    }

    pub fn lognormal(meanlog: f64, sdlog: f64) -> Result<Self> {
        let m = Marginal::LogNormal { meanlog, sdlog };
        m.validate()?;
        Ok(m)
    }

    pub fn uniform(lo: f64, hi: f64) -> Result<Self> {
        let m = Marginal::Uniform { lo, hi };
        m.validate()?;
        Ok(m)
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            Marginal::Normal { mean, sd } => mean.is_finite() && sd.is_finite() && sd > 0.0,
            Marginal::LogNormal { meanlog, sdlog } => {
                meanlog.is_finite() && sdlog.is_finite() && sdlog > 0.0
            }
            Marginal::Uniform { lo, hi } => lo.is_finite() && hi.is_finite() && lo < hi,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("invalid marginal {self:?}")))
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            Marginal::Normal { mean, sd } => mean + sd * rng.sample::<f64, _>(StandardNormal),
            Marginal::LogNormal { meanlog, sdlog } => {
                (meanlog + sdlog * rng.sample::<f64, _>(StandardNormal)).exp()
            }
            Marginal::Uniform { lo, hi } => lo + (hi - lo) * rng.random::<f64>(),
        }
    }

    /// Mean on the natural scale.
    pub fn mean(&self) -> f64 {
        match *self {
            Marginal::Normal { mean, .. } => mean,
            Marginal::LogNormal { meanlog, sdlog } => (meanlog + 0.5 * sdlog * sdlog).exp(),
            Marginal::Uniform { lo, hi } => 0.5 * (lo + hi),
        }
    }

    /// Standard deviation on the natural scale.
    pub fn sd(&self) -> f64 {
        match *self {
            Marginal::Normal { sd, .. } => sd,
            Marginal::LogNormal { meanlog, sdlog } => {
                let s2 = sdlog * sdlog;
                ((s2.exp() - 1.0) * (2.0 * meanlog + s2).exp()).sqrt()
            }
            Marginal::Uniform { lo, hi } => (hi - lo) / 12f64.sqrt(),
        }
    }

    fn dist_name(&self) -> &'static str {
        match self {
            Marginal::Normal { .. } => "normal",
            Marginal::LogNormal { .. } => "lognormal",
            Marginal::Uniform { .. } => "uniform",
        }
    }

    fn params(&self) -> Vec<f64> {
        match *self {
            Marginal::Normal { mean, sd } => vec![mean, sd],
            Marginal::LogNormal { meanlog, sdlog } => vec![meanlog, sdlog],
            Marginal::Uniform { lo, hi } => vec![lo, hi],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PriorComponent {
    pub name: String,
    pub marginal: Marginal,
}

#[derive(Serialize, Deserialize)]
struct RawComponent {
    name: String,
    dist: String,
    params: Vec<f64>,
}

impl TryFrom<RawComponent> for PriorComponent {
    type Error = Error;

    fn try_from(raw: RawComponent) -> Result<Self> {
        let p = |i: usize| -> Result<f64> {
            if raw.params.len() != 2 {
                return Err(Error::Config(format!(
                    "prior component {} needs exactly 2 params, got {}",
                    raw.name,
                    raw.params.len()
                )));
            }
            Ok(raw.params[i])
        };
        let marginal = match raw.dist.as_str() {
            "normal" => Marginal::normal(p(0)?, p(1)?),
            "lognormal" => Marginal::lognormal(p(0)?, p(1)?),
            "uniform" => Marginal::uniform(p(0)?, p(1)?),
            other => {
                return Err(Error::Config(format!(
                    "unknown distribution {other:?} for {}",
                    raw.name
                )))
            }
        }
        .map_err(|e| Error::Config(format!("{}: {e}", raw.name)))?;
        Ok(PriorComponent {
            name: raw.name,
            marginal,
        })
    }
}

/// Independent product of per-parameter marginals, in model parameter order.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignPrior {
    components: Vec<PriorComponent>,
    names: Arc<[String]>,
}

impl DesignPrior {
    pub fn new(components: Vec<PriorComponent>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::Config("design prior has no components".into()));
        }
        let names = shared_names(&components.iter().map(|c| c.name.as_str()).collect::<Vec<_>>());
        Ok(Self { components, names })
    }

    pub fn from_marginals<S: AsRef<str>>(parts: &[(S, Marginal)]) -> Result<Self> {
        Self::new(
            parts
                .iter()
                .map(|(n, m)| PriorComponent {
                    name: n.as_ref().to_string(),
                    marginal: *m,
                })
                .collect(),
        )
    }

    pub fn components(&self) -> &[PriorComponent] {
        &self.components
    }

    pub fn names(&self) -> Vec<String> {
        self.names.to_vec()
    }

    pub fn dimension(&self) -> usize {
        self.components.len()
    }

    /// `k` independent draws, deterministic given `seed`.
    pub fn sample(&self, k: usize, seed: u64) -> Result<Vec<ParameterPoint>> {
        if k == 0 {
            return Err(Error::InvalidSize("k must be at least 1".into()));
        }
        let mut rng = rng_from_seed(seed);
        (0..k)
            .map(|_| {
                let values = self
                    .components
                    .iter()
                    .map(|c| c.marginal.sample(&mut rng))
                    .collect();
                ParameterPoint::new(Arc::clone(&self.names), values)
            })
            .collect()
    }

    /// Prior means (natural scale), useful as a representative parameter point.
    pub fn mean_point(&self) -> Result<ParameterPoint> {
        ParameterPoint::new(
            Arc::clone(&self.names),
            self.components.iter().map(|c| c.marginal.mean()).collect(),
        )
    }

    /// Box spanning `mean +/- width` marginal standard deviations, computed on the
    /// scale each marginal is specified on (log scale for log-normal), and the
    /// full support for uniform components.
    pub fn central_box(&self, width: f64) -> Vec<(f64, f64)> {
        self.components
            .iter()
            .map(|c| match c.marginal {
                Marginal::Normal { mean, sd } => (mean - width * sd, mean + width * sd),
                Marginal::LogNormal { meanlog, sdlog } => (
                    (meanlog - width * sdlog).exp(),
                    (meanlog + width * sdlog).exp(),
                ),
                Marginal::Uniform { lo, hi } => (lo, hi),
            })
            .collect()
    }
}

impl Serialize for DesignPrior {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let raw: Vec<RawComponent> = self
            .components
            .iter()
            .map(|c| RawComponent {
                name: c.name.clone(),
                dist: c.marginal.dist_name().to_string(),
                params: c.marginal.params(),
            })
            .collect();
        raw.serialize(s)
    }
}

impl<'de> Deserialize<'de> for DesignPrior {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let raw = Vec::<RawComponent>::deserialize(d)?;
        let components = raw
            .into_iter()
            .map(PriorComponent::try_from)
            .collect::<Result<Vec<_>>>()
            .map_err(serde::de::Error::custom)?;
        DesignPrior::new(components).map_err(serde::de::Error::custom)
    }
}
