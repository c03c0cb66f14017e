//! Logistic regression with a binary treatment and a binary subgroup covariate:
//! `logit p = beta0 + beta1 x + (psi0 + psi1 x) A`. The interest parameter is
//! the treatment main effect `psi0`.

use super::{check_dimension, check_size, shared_names, Dataset, Model, ParameterPoint};
use crate::posterior::AnalysisPrior;
use crate::rng::rng_from_seed;
use crate::stats::{expit, softplus};
use crate::Result;
use rand::Rng;
use std::io::Write;
use std::sync::Arc;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LogisticRecord {
    pub y: u8,
    pub treated: u8,
    pub x: u8,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LogisticData {
    pub records: Vec<LogisticRecord>,
}

impl Dataset for LogisticData {
    fn len(&self) -> usize {
        self.records.len()
    }

    fn prefix(&self, n: usize) -> Self {
        Self {
            records: self.records[..n.min(self.records.len())].to_vec(),
        }
    }

    fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["y", "A", "x"])?;
        for r in &self.records {
            w.write_record([r.y.to_string(), r.treated.to_string(), r.x.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Per-cell counts indexed `[x][A]`: (records, successes).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LogisticStats {
    pub cells: [[(f64, f64); 2]; 2],
}

#[derive(Debug, Clone, Copy, Default)]
pub struct LogisticModel;

const NAMES: [&str; 4] = ["beta0", "beta1", "psi0", "psi1"];

#[inline]
fn linear_predictor(c: &[f64], x: u8, treated: u8) -> f64 {
    let (x, a) = (x as f64, treated as f64);
    c[0] + c[1] * x + (c[2] + c[3] * x) * a
}

impl Model for LogisticModel {
    type Data = LogisticData;
    type Stats = LogisticStats;

    fn kind_name(&self) -> &'static str {
        "logistic-subgroup"
    }

    fn parameter_names(&self) -> Arc<[String]> {
        shared_names(&NAMES)
    }

    fn psi_index(&self) -> usize {
        2
    }

    fn validate(&self, theta: &ParameterPoint) -> Result<()> {
        check_dimension(theta, 4)
    }

    fn simulate(&self, theta: &ParameterPoint, n: usize, seed: u64) -> Result<LogisticData> {
        self.validate(theta)?;
        check_size(n)?;
        let c = theta.values();
        let mut rng = rng_from_seed(seed);
        // 1:1 alternation from a random starting arm keeps every prefix balanced.
        let start: u8 = rng.random_range(0..2);
        let records = (0..n)
            .map(|i| {
                let treated = ((i as u8) & 1) ^ start;
                let x = rng.random_range(0..2u8);
                let p = expit(linear_predictor(c, x, treated));
                let y = u8::from(rng.random::<f64>() < p);
                LogisticRecord { y, treated, x }
            })
            .collect();
        Ok(LogisticData { records })
    }

    fn log_likelihood(&self, theta: &ParameterPoint, data: &LogisticData) -> Result<f64> {
        self.validate(theta)?;
        let c = theta.values();
        Ok(data
            .records
            .iter()
            .map(|r| {
                let eta = linear_predictor(c, r.x, r.treated);
                r.y as f64 * eta - softplus(eta)
            })
            .sum())
    }

    fn analysis_names(&self) -> Vec<String> {
        NAMES.iter().map(|s| s.to_string()).collect()
    }

    fn default_analysis_prior(&self) -> AnalysisPrior {
        AnalysisPrior::independent_normal(vec![0.0; 4], vec![2.5; 4])
    }

    fn sufficient_stats(&self, data: &LogisticData) -> LogisticStats {
        let mut stats = LogisticStats::default();
        for r in &data.records {
            let cell = &mut stats.cells[r.x as usize][r.treated as usize];
            cell.0 += 1.0;
            cell.1 += r.y as f64;
        }
        stats
    }

    fn analysis_log_likelihood(&self, phi: &[f64], stats: &LogisticStats) -> f64 {
        let mut ll = 0.0;
        for x in 0..2u8 {
            for a in 0..2u8 {
                let (n, s) = stats.cells[x as usize][a as usize];
                if n > 0.0 {
                    let eta = linear_predictor(phi, x, a);
                    ll += s * eta - n * softplus(eta);
                }
            }
        }
        ll
    }

    fn analysis_psi(&self, phi: &[f64]) -> f64 {
        phi[2]
    }
}
