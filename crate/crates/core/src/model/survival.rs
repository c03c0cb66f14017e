//! Piecewise-exponential time-to-event model with weekly visits.
//!
//! The baseline hazard is constant within each of four 7-day intervals
//! (`h1` on `[0, 7]`, `h2` on `(7, 14]`, ...), multiplied by `exp(beta)` in the
//! treated arm. At each visit on day `7j` a patient whose event has not yet
//! occurred drops out with probability `kappa` and is censored at the previous
//! visit, day `7(j - 1)`. Follow-up ends at day 28. The interest parameter is
//! `beta`, the log rate ratio.

use super::{check_dimension, check_size, shared_names, Dataset, Model, ParameterPoint};
use crate::posterior::AnalysisPrior;
use crate::rng::rng_from_seed;
use crate::{Error, Result};
use rand::Rng;
use rand_distr::Exp1;
use std::io::Write;
use std::sync::Arc;

pub const N_INTERVALS: usize = 4;
pub const INTERVAL_DAYS: f64 = 7.0;
pub const FOLLOW_UP_DAYS: f64 = 28.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurvivalRecord {
    /// Event or censoring time in days.
    pub time: f64,
    pub event: bool,
    pub treated: u8,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SurvivalData {
    pub records: Vec<SurvivalRecord>,
}

impl Dataset for SurvivalData {
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
        w.write_record(["time", "event", "A"])?;
        for r in &self.records {
            w.write_record([
                r.time.to_string(),
                u8::from(r.event).to_string(),
                r.treated.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Event counts and exposure (person-days) per arm and interval.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SurvivalStats {
    pub events: [[f64; N_INTERVALS]; 2],
    pub exposure: [[f64; N_INTERVALS]; 2],
}

#[derive(Debug, Clone, Copy)]
pub struct SurvivalModel {
    /// Dropout is checked at the visits `1..=dropout_visits`.
    pub dropout_visits: usize,
}

impl Default for SurvivalModel {
    fn default() -> Self {
        Self {
            dropout_visits: N_INTERVALS,
        }
    }
}

const NAMES: [&str; 6] = ["h1", "h2", "h3", "h4", "beta", "kappa"];
const ANALYSIS_NAMES: [&str; 5] = ["log_h1", "log_h2", "log_h3", "log_h4", "beta"];

/// Interval index (0-based) containing time `s`; the boundary day belongs to
/// the earlier interval.
#[inline]
fn interval_of(s: f64) -> usize {
    if s <= 0.0 {
        return 0;
    }
    ((s / INTERVAL_DAYS).ceil() as usize).clamp(1, N_INTERVALS) - 1
}

/// Time at risk within interval `j` for a record observed until `s`.
#[inline]
fn exposure_in(j: usize, s: f64) -> f64 {
    let start = j as f64 * INTERVAL_DAYS;
    let len = if j + 1 == N_INTERVALS {
        f64::INFINITY
    } else {
        INTERVAL_DAYS
    };
    (s - start).clamp(0.0, len)
}

/// Inverse of the piecewise-linear cumulative hazard.
fn event_time(target: f64, rates: &[f64; N_INTERVALS]) -> f64 {
    let mut cum = 0.0;
    for (j, &rate) in rates.iter().enumerate() {
        let start = j as f64 * INTERVAL_DAYS;
        let width = if j + 1 == N_INTERVALS {
            f64::INFINITY
        } else {
            INTERVAL_DAYS
        };
        if cum + rate * width >= target {
            return start + (target - cum) / rate;
        }
        cum += rate * width;
    }
    f64::INFINITY
}

impl SurvivalModel {
    fn hazards(theta: &[f64]) -> [f64; N_INTERVALS] {
        [theta[0], theta[1], theta[2], theta[3]]
    }
}

impl Model for SurvivalModel {
    type Data = SurvivalData;
    type Stats = SurvivalStats;

    fn kind_name(&self) -> &'static str {
        "piecewise-exp-survival"
    }

    fn parameter_names(&self) -> Arc<[String]> {
        shared_names(&NAMES)
    }

    fn psi_index(&self) -> usize {
        4
    }

    fn validate(&self, theta: &ParameterPoint) -> Result<()> {
        check_dimension(theta, 6)?;
        let v = theta.values();
        if let Some(j) = (0..N_INTERVALS).find(|&j| v[j] <= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "hazard h{} must be positive, got {}",
                j + 1,
                v[j]
            )));
        }
        if !(0.0..=1.0).contains(&v[5]) {
            return Err(Error::InvalidParameter(format!(
                "kappa must lie in [0, 1], got {}",
                v[5]
            )));
        }
        Ok(())
    }

    fn simulate(&self, theta: &ParameterPoint, n: usize, seed: u64) -> Result<SurvivalData> {
        self.validate(theta)?;
        check_size(n)?;
        let v = theta.values();
        let base = Self::hazards(v);
        let (beta, kappa) = (v[4], v[5]);
        let ratio = beta.exp();
        let arm_rates = [base, base.map(|h| h * ratio)];
        let mut rng = rng_from_seed(seed);
        let start: u8 = rng.random_range(0..2);
        let records = (0..n)
            .map(|i| {
                let treated = ((i as u8) & 1) ^ start;
                let target: f64 = rng.sample(Exp1);
                let t = event_time(target, &arm_rates[treated as usize]);
                let (mut time, mut event) = if t <= FOLLOW_UP_DAYS {
                    (t, true)
                } else {
                    (FOLLOW_UP_DAYS, false)
                };
                for visit in 1..=self.dropout_visits {
                    let day = visit as f64 * INTERVAL_DAYS;
                    if t <= day {
                        break;
                    }
                    if kappa > 0.0 && rng.random::<f64>() < kappa {
                        time = day - INTERVAL_DAYS;
                        event = false;
                        break;
                    }
                }
                SurvivalRecord {
                    time,
                    event,
                    treated,
                }
            })
            .collect();
        Ok(SurvivalData { records })
    }

    fn log_likelihood(&self, theta: &ParameterPoint, data: &SurvivalData) -> Result<f64> {
        self.validate(theta)?;
        let v = theta.values();
        let base = Self::hazards(v);
        let beta = v[4];
        Ok(data
            .records
            .iter()
            .map(|r| {
                let scale = (beta * r.treated as f64).exp();
                let cumulative: f64 = (0..N_INTERVALS)
                    .map(|j| base[j] * exposure_in(j, r.time))
                    .sum();
                let log_h = if r.event {
                    (base[interval_of(r.time)] * scale).ln()
                } else {
                    0.0
                };
                log_h - scale * cumulative
            })
            .sum())
    }

    fn analysis_names(&self) -> Vec<String> {
        ANALYSIS_NAMES.iter().map(|s| s.to_string()).collect()
    }

    fn default_analysis_prior(&self) -> AnalysisPrior {
        AnalysisPrior::independent_normal(vec![0.0; 5], vec![10.0; 5])
    }

    fn sufficient_stats(&self, data: &SurvivalData) -> SurvivalStats {
        let mut stats = SurvivalStats::default();
        for r in &data.records {
            let a = r.treated as usize;
            for j in 0..N_INTERVALS {
                stats.exposure[a][j] += exposure_in(j, r.time);
            }
            if r.event {
                stats.events[a][interval_of(r.time)] += 1.0;
            }
        }
        stats
    }

    fn analysis_log_likelihood(&self, phi: &[f64], stats: &SurvivalStats) -> f64 {
        let beta = phi[4];
        let mut ll = 0.0;
        for a in 0..2 {
            let shift = beta * a as f64;
            for j in 0..N_INTERVALS {
                let eta = phi[j] + shift;
                ll += stats.events[a][j] * eta - eta.exp() * stats.exposure[a][j];
            }
        }
        ll
    }

    fn analysis_psi(&self, phi: &[f64]) -> f64 {
        phi[4]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn point(v: [f64; 6]) -> ParameterPoint {
        ParameterPoint::new(SurvivalModel::default().parameter_names(), v.to_vec()).unwrap()
    }

    fn data(records: &[(f64, bool, u8)]) -> SurvivalData {
        SurvivalData {
            records: records
                .iter()
                .map(|&(time, event, treated)| SurvivalRecord {
                    time,
                    event,
                    treated,
                })
                .collect(),
        }
    }

    #[test]
    fn psi_is_log_rate_ratio() {
        let m = SurvivalModel::default();
        let psi = m.psi(&point([0.1, 0.1, 0.1, 0.1, 1.3f64.ln(), 0.0])).unwrap();
        assert!((psi - 0.262_364_264_467_491_1).abs() < 1e-15);
        assert_eq!(m.psi(&point([0.1, 0.1, 0.1, 0.1, 0.0, 0.0])).unwrap(), 0.0);
    }

    #[test]
    fn hand_evaluated_likelihoods() {
        let m = SurvivalModel::default();
        let ll = m
            .log_likelihood(&point([0.1, 0.2, 0.3, 0.4, 0.0, 0.0]), &data(&[(7.0, false, 0)]))
            .unwrap();
        assert!((ll + 0.7).abs() < 1e-12);
        let ll = m
            .log_likelihood(&point([0.1, 0.2, 0.3, 0.4, 0.0, 0.0]), &data(&[(10.0, true, 1)]))
            .unwrap();
        assert!((ll - (-2.909_437_912_434_100_4)).abs() < 1e-12);
    }

    #[test]
    fn nonpositive_hazard_is_rejected() {
        let m = SurvivalModel::default();
        let bad = point([0.1, 0.0, 0.1, 0.1, 0.0, 0.0]);
        assert!(matches!(
            m.log_likelihood(&bad, &data(&[(7.0, false, 0)])),
            Err(Error::InvalidParameter(_))
        ));
        assert!(m.simulate(&point([0.1, 0.1, 0.1, 0.1, 0.0, 1.5]), 10, 1).is_err());
    }

    #[test]
    fn boundary_days_belong_to_earlier_interval() {
        assert_eq!(interval_of(0.0), 0);
        assert_eq!(interval_of(7.0), 0);
        assert_eq!(interval_of(7.0001), 1);
        assert_eq!(interval_of(21.0), 2);
        assert_eq!(interval_of(28.0), 3);
        assert_eq!(exposure_in(3, 28.0), 7.0);
        assert_eq!(exposure_in(1, 3.0), 0.0);
    }

    #[test]
    fn censoring_only_at_visits_and_none_without_dropout() {
        let m = SurvivalModel::default();
        let theta = point([0.055, 0.095, 0.040, 0.020, 0.2, 0.3]);
        let d = m.simulate(&theta, 5000, 3).unwrap();
        for r in &d.records {
            if !r.event {
                assert!([0.0, 7.0, 14.0, 21.0, 28.0].contains(&r.time), "{}", r.time);
            } else {
                assert!(r.time > 0.0 && r.time <= 28.0);
            }
        }
        let no_dropout = m
            .simulate(&point([0.055, 0.095, 0.040, 0.020, 0.2, 0.0]), 5000, 3)
            .unwrap();
        assert!(no_dropout
            .records
            .iter()
            .all(|r| r.event || r.time == FOLLOW_UP_DAYS));
    }

    #[test]
    fn sufficient_statistics_reproduce_record_loglik() {
        let m = SurvivalModel::default();
        let theta = point([0.055, 0.095, 0.040, 0.020, 0.26, 0.05]);
        let d = m.simulate(&theta, 700, 8).unwrap();
        let stats = m.sufficient_stats(&d);
        let phi: [f64; 5] = [-2.9, -2.4, -3.2, -3.9, 0.1];
        let natural = point([
            phi[0].exp(),
            phi[1].exp(),
            phi[2].exp(),
            phi[3].exp(),
            phi[4],
            0.05,
        ]);
        let direct = m.log_likelihood(&natural, &d).unwrap();
        let fast = m.analysis_log_likelihood(&phi, &stats);
        assert!((direct - fast).abs() < 1e-9 * direct.abs());
    }
}
