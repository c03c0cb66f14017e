mod common;

use bvmdesign_core::model::{LogisticSubgroupModel, SurvivalModel};
use bvmdesign_core::{Dataset, Model};
use common::*;

#[test]
fn logistic_null_response_rate_is_one_half() {
    let spec = logistic_spec();
    let theta = point(&spec, &[0.0, 0.0, 0.0, 0.0]);
    let data = LogisticSubgroupModel.simulate(&theta, 100_000, 3).unwrap();
    let mean = data.records.iter().map(|r| r.y as f64).sum::<f64>() / 1e5;
    assert!((mean - 0.5).abs() < 0.005, "{mean}");
    let treated: usize = data.records.iter().map(|r| r.treated as usize).sum();
    assert!((2 * treated as i64 - 100_000).abs() <= 1);
}

#[test]
fn psi_projections() {
    let spec = logistic_spec();
    assert_eq!(LogisticSubgroupModel.psi(&point(&spec, &[0.0, 0.0, 0.3, 0.0])).unwrap(), 0.3);
    let s = survival_spec();
    let m = SurvivalModel::default();
    let beta = m.psi(&point(&s, &[0.05, 0.05, 0.05, 0.05, 1.3f64.ln(), 0.0])).unwrap();
    assert!((beta - 0.262364).abs() < 1e-6);
    assert_eq!(m.psi(&point(&s, &[0.05, 0.05, 0.05, 0.05, 0.0, 0.0])).unwrap(), 0.0);
    assert!(m.psi(&point(&spec, &[0.0, 0.0, 0.3, 0.0])).is_err());
}

#[test]
fn survivor_function_matches_cumulative_hazard() {
    let s = survival_spec();
    let m = SurvivalModel::default();
    let h = [0.055, 0.095, 0.040, 0.020];
    let theta = point(&s, &[h[0], h[1], h[2], h[3], 0.0, 0.0]);
    let n = 100_000;
    let data = m.simulate(&theta, n, 11).unwrap();
    assert!(data.records.iter().all(|r| r.event || r.time == 28.0));
    let mut cum = 0.0;
    for (j, &hj) in h.iter().enumerate() {
        cum += 7.0 * hj;
        let day = 7.0 * (j + 1) as f64;
        let surv = (-cum as f64).exp();
        let emp = data.records.iter().filter(|r| r.time > day || (!r.event && r.time >= day)).count() as f64
            / n as f64;
        let se = (surv * (1.0 - surv) / n as f64).sqrt();
        assert!((emp - surv).abs() < 3.0 * se, "day {day}: {emp} vs {surv}");
    }
    let unresolved = data.records.iter().filter(|r| !r.event).count() as f64 / n as f64;
    assert!((unresolved - 0.2299).abs() < 0.005, "{unresolved}");
}

#[test]
fn censoring_happens_only_at_visits() {
    let s = survival_spec();
    let m = SurvivalModel::default();
    let theta = point(&s, &[0.055, 0.095, 0.040, 0.020, 0.2, 0.05]);
    let data = m.simulate(&theta, 20_000, 5).unwrap();
    let censored: Vec<f64> = data.records.iter().filter(|r| !r.event).map(|r| r.time).collect();
    assert!(censored.iter().all(|t| [0.0, 7.0, 14.0, 21.0, 28.0].contains(t)));
    assert!(censored.iter().any(|&t| t < 28.0));
    assert!(data.records.iter().all(|r| r.time > 0.0 || !r.event));
}

#[test]
fn simulation_is_reproducible_and_prefixes_nest() {
    let s = survival_spec();
    let m = SurvivalModel::default();
    let theta = point(&s, &[0.055, 0.095, 0.040, 0.020, 0.2, 0.03]);
    let a = m.simulate(&theta, 700, 42).unwrap();
    let b = m.simulate(&theta, 700, 42).unwrap();
    let mut ca = Vec::new();
    let mut cb = Vec::new();
    a.write_csv(&mut ca).unwrap();
    b.write_csv(&mut cb).unwrap();
    assert_eq!(ca, cb);
    assert_eq!(a.prefix(350).records[..], a.records[..350]);
    assert!(m.simulate(&theta, 1, 42).is_err());
}

#[test]
fn logistic_likelihood_peaks_near_truth() {
    let spec = logistic_spec();
    let truth = [0.2, -0.1, 0.3, 0.05];
    let theta = point(&spec, &truth);
    let n = 10_000;
    let data = LogisticSubgroupModel.simulate(&theta, n, 17).unwrap();
    let ll = |psi: f64| {
        let mut v = truth.to_vec();
        v[2] = psi;
        LogisticSubgroupModel.log_likelihood(&point(&spec, &v), &data).unwrap()
    };
    // Golden-section refinement over the psi coordinate.
    let (mut lo, mut hi) = (-1.0f64, 1.6f64);
    let g = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..80 {
        let a = hi - g * (hi - lo);
        let b = lo + g * (hi - lo);
        if ll(a) > ll(b) {
            hi = b;
        } else {
            lo = a;
        }
    }
    let mle = 0.5 * (lo + hi);
    let lambda = logistic_fisher_lambda(&truth);
    assert!((mle - 0.3).abs() < 5.0 * lambda / (n as f64).sqrt(), "{mle}");
}

#[test]
fn design_prior_moments() {
    let spec = logistic_spec();
    let k = 100_000;
    let draws = spec.design_prior.sample(k, 8).unwrap();
    let means = [0.0, 0.0, 0.3, 0.0];
    let sds = [0.6, 0.075, 0.15, 0.05];
    for j in 0..4 {
        let m = draws.iter().map(|d| d.values()[j]).sum::<f64>() / k as f64;
        assert!((m - means[j]).abs() < 4.0 * sds[j] / (k as f64).sqrt(), "component {j}: {m}");
    }
    let psi0_mean = draws.iter().map(|d| d.values()[2]).sum::<f64>() / k as f64;
    assert!((psi0_mean - 0.3).abs() < 0.002);

    let s = survival_spec();
    let draws = s.design_prior.sample(20_000, 2).unwrap();
    assert!(draws.iter().all(|d| (0.01..=0.05).contains(&d.values()[5])));
    let mean_log_h1 = draws.iter().map(|d| d.values()[0].ln()).sum::<f64>() / 20_000.0;
    assert!((mean_log_h1 - 0.055f64.ln()).abs() < 4.0 * 0.15 / 20_000f64.sqrt());
}
