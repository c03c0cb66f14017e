mod common;

use bvmdesign_core::model::harness::BernoulliModel;
use bvmdesign_core::model::{LogisticSubgroupModel, SurvivalModel};
use bvmdesign_core::oc::{power_fixed, stop_probs, CostSpec, MvnConfig, TrialDesign};
use bvmdesign_core::oracle::*;
use bvmdesign_core::training::{estimate_lambda, LambdaConfig};
use bvmdesign_core::{Model, ParameterPoint};
use common::*;

fn cfg(nsim: usize, seed: u64) -> OracleConfig {
    OracleConfig {
        nsim,
        seed,
        ..Default::default()
    }
}

#[test]
fn logistic_fixed_power_matches_fisher_closed_form() {
    let spec = logistic_spec();
    let truth = [0.0, 0.0, 0.3, 0.0];
    let theta = point(&spec, &truth);
    let m = LogisticSubgroupModel;
    let mc = mc_power_fixed(&m, &m.default_analysis_prior(), ThetaSource::Fixed(&theta), 500, 0.975, 0.0, &cfg(400, 1))
        .unwrap();
    let exact = power_fixed(0.3, 0.0, 500, 0.975, logistic_fisher_lambda(&truth)).unwrap();
    assert!((mc.estimate - exact).abs() <= 3.0 * mc.se, "{mc:?} vs {exact}");
    assert_eq!((mc.n_used, mc.n_failed), (400, 0));
}

#[test]
fn independent_streams_agree_and_small_runs_have_bounded_se() {
    let b = BernoulliModel::default();
    let theta = ParameterPoint::new(b.parameter_names(), vec![0.55]).unwrap();
    let prior = b.default_analysis_prior();
    let a = mc_power_fixed(&b, &prior, ThetaSource::Fixed(&theta), 300, 0.9, 0.5, &cfg(400, 1)).unwrap();
    let c = mc_power_fixed(&b, &prior, ThetaSource::Fixed(&theta), 300, 0.9, 0.5, &cfg(400, 2)).unwrap();
    assert!((a.estimate - c.estimate).abs() <= 3.0 * a.se.hypot(c.se));
    let small = mc_power_fixed(&b, &prior, ThetaSource::Fixed(&theta), 300, 0.9, 0.5, &cfg(100, 3)).unwrap();
    assert!(small.se <= 0.05);
    assert!(mc_power_fixed(&b, &prior, ThetaSource::Fixed(&theta), 300, 0.9, 0.5, &cfg(99, 3)).is_err());
}

#[test]
fn survival_gsd_agrees_with_the_normal_approximation() {
    let spec = survival_spec();
    let m = SurvivalModel::default();
    let prior = m.default_analysis_prior();
    let theta = spec.design_prior.mean_point().unwrap();
    let d1 = design("d1");
    let mc = mc_gsd(&m, &prior, ThetaSource::Fixed(&theta), &d1, &cfg(300, 4), None).unwrap();

    let lambda = estimate_lambda(&m, &prior, &theta, &LambdaConfig { n: 350, ..Default::default() }, 5)
        .unwrap()
        .lambda_hat;
    let bvm = stop_probs(&d1, m.psi(&theta).unwrap(), lambda, &MvnConfig::default())
        .unwrap()
        .cumulative_efficacy();
    for (t, (o, b)) in mc.cumulative_efficacy().iter().zip(&bvm).enumerate() {
        assert!((o.estimate - b).abs() <= (3.0 * o.se).max(0.05), "analysis {t}: {o:?} vs {b}");
    }
    assert_eq!(mc.report.source, "mc-oracle");
    assert_eq!(mc.report.analyses.len(), 3);
    let total: usize = mc.efficacy_at.iter().sum::<usize>() + mc.no_decision;
    assert_eq!(total, mc.n_used);
}

#[test]
fn design_prior_replicates_and_costs() {
    let spec = survival_spec();
    let m = SurvivalModel::default();
    let d = TrialDesign::new(vec![200, 300], vec![0.99, 0.975]).unwrap();
    let cost = CostSpec::new(1000.0, 10.0, 1.0).unwrap();
    let r = mc_gsd(
        &m,
        &m.default_analysis_prior(),
        ThetaSource::DesignPrior(&spec.design_prior),
        &d,
        &cfg(100, 6),
        Some(&cost),
    )
    .unwrap();
    let iec = r.report.iec.unwrap();
    assert!((iec.total - iec.type_i - iec.type_ii - iec.sample_size).abs() < 1e-9);
    assert!(r.report.iess >= 200.0 && r.report.iess <= 300.0);
    assert_eq!(r, mc_gsd(
        &m,
        &m.default_analysis_prior(),
        ThetaSource::DesignPrior(&spec.design_prior),
        &d,
        &cfg(100, 6),
        Some(&cost),
    )
    .unwrap());
}
