mod common;

use bvmdesign_core::oc::*;
use bvmdesign_core::stats::norm_cdf;
use common::*;

fn logistic_box() -> Vec<(f64, f64)> {
    vec![(-1.2, 1.2), (-0.15, 0.15), (0.0, 0.6), (-0.1, 0.1)]
}

fn mvn(seed: u64) -> MvnConfig {
    MvnConfig {
        draws: 20_000,
        seed,
        antithetic: true,
    }
}

#[test]
fn point_mass_prior_equals_stop_probs() {
    let spec = logistic_spec();
    let names = spec.model.parameter_names();
    let ens = flat_ensemble(&names, logistic_box(), 5.7f64.ln(), 0.0);
    let theta = point(&spec, &[0.1, 0.0, 0.35, 0.0]);
    let ev = Evaluator::new(std::slice::from_ref(&theta), 2, &ens).unwrap();
    let d = TrialDesign::new(vec![300, 450, 600], vec![0.995, 0.99, 0.975]).unwrap();
    let rep = ev.assurance(&d, &mvn(4), None, false).unwrap();
    let lambda = ens.mean_at(theta.values()).unwrap().exp();
    let direct = stop_probs(&d, 0.35, lambda, &mvn(4)).unwrap();
    assert_eq!(rep.cumulative_efficacy(), direct.cumulative_efficacy());
    let repeated = Evaluator::new(&vec![theta.clone(); 3], 2, &ens).unwrap();
    let rep3 = repeated.assurance(&d, &mvn(4), None, false).unwrap();
    for (a, b) in rep3.cumulative_efficacy().iter().zip(direct.cumulative_efficacy()) {
        assert!((a - b).abs() < 1e-15);
    }
    let ends: Vec<f64> = rep.analyses.iter().map(|a| a.ends_at).collect();
    assert_eq!(ends, direct.ends_at());
    assert!(rep.warnings.is_empty());
    assert_eq!(rep.source, "bart-bvm");
}

#[test]
fn one_analysis_reduces_to_closed_form() {
    let d = TrialDesign::fixed(500, 0.975).unwrap();
    for &(psi, lambda) in &[(0.3, 5.7), (0.1, 4.0), (0.0, 6.0)] {
        let p = stop_probs(&d, psi, lambda, &mvn(1)).unwrap();
        let exact = power_fixed(psi, 0.0, 500, 0.975, lambda).unwrap();
        let est = p.cumulative_efficacy()[0];
        assert!((est - exact).abs() <= 3.0 * p.se(exact).max(1e-12), "{est} vs {exact}");
    }
    for lambda in [0.1, 3.3, 50.0] {
        let p = power_fixed(0.2, 0.2, 500, 0.975, lambda).unwrap();
        assert!((p - 0.025).abs() <= 1e-13 * 0.025, "{p:e}");
    }
    assert!(power_fixed(0.3, 0.0, 100_000_000, 0.975, 1.0).unwrap() >= 1.0 - 1e-9);
    assert!(power_fixed(0.3, 0.0, 100, 1.0, 1.0).is_err());
    assert!(power_fixed(0.3, 0.0, 100, 0.0, 1.0).is_err());
}

#[test]
fn degenerate_interims_recover_the_final_analysis() {
    let u = 1.0 - 1e-12;
    let d = TrialDesign::new(vec![200, 400, 700], vec![u, u, 0.975]).unwrap();
    let p = stop_probs(&d, 0.25, 5.0, &mvn(2)).unwrap();
    let exact = power_fixed(0.25, 0.0, 700, 0.975, 5.0).unwrap();
    let cum = p.cumulative_efficacy();
    assert!((cum[2] - exact).abs() <= 3.0 * p.se(exact));
    assert!(cum[1] < 1e-3);
}

#[test]
fn joint_distribution_structure() {
    let d1 = design("d1");
    let g = gamma_joint(0.3, 0.0, &d1, 2.0).unwrap();
    let c = &g.correlation;
    assert!((c[(0, 1)] - 0.836660).abs() < 1e-6);
    assert!((c[(0, 2)] - 0.707107).abs() < 1e-6);
    assert!((c[(1, 2)] - 0.845154).abs() < 1e-6);
    assert_eq!(c[(0, 1)], (350f64 / 500.0).sqrt());
    let expect: Vec<f64> = d1.schedule.iter().map(|&n| 0.15 * (n as f64).sqrt()).collect();
    for (a, b) in g.mean.iter().zip(&expect) {
        assert!((a - b).abs() < 1e-12);
    }
    let null = gamma_joint(0.0, 0.0, &d1, 2.0).unwrap();
    assert!(null.mean.iter().all(|&m| m == 0.0));
    let single = gamma_joint(0.1, 0.0, &TrialDesign::fixed(100, 0.9).unwrap(), 1.0).unwrap();
    assert_eq!(single.correlation.shape(), (1, 1));
    assert_eq!(single.correlation[(0, 0)], 1.0);
    let reproduced = &g.cholesky * g.cholesky.transpose();
    assert!((reproduced - c).abs().max() < 1e-14);
}

#[test]
fn partition_is_exact_with_futility() {
    let d = design("d2").with_futility(vec![0.05, 0.1, 0.2]).unwrap();
    for &psi in &[-0.2, 0.0, 0.15, 0.3] {
        let c = stop_counts(&d, psi, 4.0, &mvn(7)).unwrap();
        assert_eq!(c.total(), c.n_draws);
        let p = c.probs();
        let cum = p.cumulative_efficacy();
        assert!(cum.windows(2).all(|w| w[0] <= w[1]));
        assert!(p.cumulative_futility().windows(2).all(|w| w[0] <= w[1]));
        assert_eq!(c.futility_at[3], 0);
    }
}

#[test]
fn common_random_numbers_are_bit_identical() {
    let spec = survival_spec();
    let names = spec.model.parameter_names();
    let bounds = spec.design_prior.central_box(2.0);
    let ens = flat_ensemble(&names, bounds, 2.0f64.ln(), 0.2);
    let sample = spec.design_prior.sample(2000, 1).unwrap();
    let ev = Evaluator::new(&sample, 4, &ens).unwrap();
    let cost = CostSpec::new(1000.0, 10.0, 1.0).unwrap();
    let a = ev.assurance(&design("d1"), &mvn(3), Some(&cost), true).unwrap();
    let b = ev.assurance(&design("d1"), &mvn(3), Some(&cost), true).unwrap();
    assert_eq!(a, b);
    let json = serde_json::to_string(&a).unwrap();
    let back: OcReport = serde_json::from_str(&json).unwrap();
    assert_eq!(back, a);
    let mut csv = Vec::new();
    a.write_csv(&mut csv).unwrap();
    let text = String::from_utf8(csv).unwrap();
    assert!(text.starts_with("source,design,analysis,n,quantity,estimate,se,lower,upper"));
    assert_eq!(text.lines().filter(|l| l.contains(",efficacy_cumulative,")).count(), 3);
    assert!(a.flags.iter().any(|f| f.starts_with("iess-discrepancy")));
    assert_eq!(a.reference_checks.len(), 5);
}

#[test]
fn iess_and_iec_limits() {
    let spec = survival_spec();
    let names = spec.model.parameter_names();
    let bounds = spec.design_prior.central_box(2.0);
    let ens = flat_ensemble(&names, bounds, 2.0f64.ln(), 0.0);
    let sample = spec.design_prior.sample(5000, 2).unwrap();
    let ev = Evaluator::new(&sample, 4, &ens).unwrap();
    let d1 = design("d1");

    let size_only = CostSpec::new(0.0, 0.0, 1.0).unwrap();
    let r = ev.assurance(&d1, &mvn(5), Some(&size_only), false).unwrap();
    assert_eq!(r.iec.unwrap().total, r.iess);
    let ends: Vec<f64> = r.analyses.iter().map(|a| a.ends_at).collect();
    assert!((iess(&d1, &ends).unwrap() - r.iess).abs() < 1e-9);
    assert!(r.iess <= 700.0 && r.iess >= 350.0);
    assert!(r.iess_efficacy_only <= r.iess);

    // Every draw far into the alternative: error terms vanish.
    let strong: Vec<_> = sample
        .iter()
        .map(|t| t.with_value(4, 2.0).unwrap())
        .collect();
    let ev = Evaluator::new(&strong, 4, &ens).unwrap();
    let costs = CostSpec::new(1000.0, 10.0, 1.0).unwrap();
    let r = ev.assurance(&d1, &mvn(5), Some(&costs), false).unwrap();
    let b = r.iec.unwrap();
    assert!(b.type_i == 0.0 && b.type_ii < 1e-9);
    assert!((b.total - r.iess).abs() < 1e-6);
    assert_eq!(r.iess, 350.0);
    assert!(r.n_extrapolated > 0 && !r.warnings.is_empty());
}

#[test]
fn uncertainty_intervals() {
    let spec = logistic_spec();
    let names = spec.model.parameter_names();
    let sample = spec.design_prior.sample(2000, 3).unwrap();
    let d = TrialDesign::fixed(500, 0.975).unwrap();

    let flat = flat_ensemble(&names, logistic_box(), 5.7f64.ln(), 0.0);
    let r = Evaluator::new(&sample, 2, &flat).unwrap().assurance(&d, &mvn(1), None, true).unwrap();
    let i = r.analyses[0].interval_efficacy_cumulative.unwrap();
    assert_eq!(i.lower, i.upper);

    let wide = flat_ensemble(&names, logistic_box(), 5.7f64.ln(), 0.3);
    let r = Evaluator::new(&sample, 2, &wide).unwrap().assurance(&d, &mvn(1), None, true).unwrap();
    let a = &r.analyses[0];
    let i = a.interval_efficacy_cumulative.unwrap();
    assert!(i.lower < a.efficacy_cumulative && a.efficacy_cumulative < i.upper);
    assert!(i.upper - i.lower > 0.01);
}

#[test]
fn curves_are_calibrated_at_the_null_and_monotone() {
    let spec = logistic_spec();
    let names = spec.model.parameter_names();
    let ens = flat_ensemble(&names, logistic_box(), 5.7f64.ln(), 0.1);
    let nuisance = spec.design_prior.sample(3000, 4).unwrap();
    let fixed = TrialDesign::fixed(500, 0.975).unwrap();
    let grid = default_grid(0.3, 3.0 * 0.15, 41);
    let curve = integrated_power_curve(&grid, &fixed, &nuisance, 2, &ens, &mvn(8)).unwrap();
    assert_eq!(curve.points.len(), 41);
    let at_null = integrated_power_curve(&[0.0], &fixed, &nuisance, 2, &ens, &mvn(8)).unwrap();
    let p = &at_null.points[0];
    assert!((p.efficacy_cumulative[0] - 0.025).abs() <= 3.0 * p.se[0]);
    for w in curve.points.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        assert!(b.efficacy_cumulative[0] >= a.efficacy_cumulative[0] - 3.0 * a.se[0].hypot(b.se[0]));
    }
    assert!(integrated_power_curve(&[], &fixed, &nuisance, 2, &ens, &mvn(8)).is_err());
    assert!(integrated_power_curve(&[f64::NAN], &fixed, &nuisance, 2, &ens, &mvn(8)).is_err());

    let gsd = design("d1");
    let c = integrated_power_curve(&[0.1, 0.3], &gsd, &nuisance, 2, &ens, &mvn(8)).unwrap();
    assert!(c.points.iter().all(|p| p.efficacy_cumulative.windows(2).all(|w| w[0] <= w[1])));
    let mut out = Vec::new();
    c.write_csv(&mut out).unwrap();
    assert_eq!(String::from_utf8(out).unwrap().lines().count(), 1 + 2 * 3);
}

#[test]
fn design_search() {
    let spec = survival_spec();
    let names = spec.model.parameter_names();
    let ens = flat_ensemble(&names, spec.design_prior.central_box(2.0), 2.0f64.ln(), 0.0);
    let sample = spec.design_prior.sample(3000, 6).unwrap();
    let ev = Evaluator::new(&sample, 4, &ens).unwrap();
    let cost = CostSpec::new(1000.0, 10.0, 1.0).unwrap();
    let (d1, d2) = (design("d1"), design("d2"));

    let one = optimize_design(&ev, &[d1.clone()], Objective::MinIec, Some(&cost), &mvn(1)).unwrap();
    assert_eq!(one.ranked.len(), 1);
    assert_eq!(one.ranked[0].rank, 1);

    let target = Objective::MinIessSubjectToAssurance { target: 0.99 };
    let none = optimize_design(&ev, &[d1.clone(), d2.clone()], target, Some(&cost), &mvn(1)).unwrap();
    assert!(none.ranked.is_empty());
    assert!(none.diagnostic.is_some());

    let both = optimize_design(&ev, &[d1.clone(), d2.clone()], Objective::MinIec, Some(&cost), &mvn(1)).unwrap();
    assert!(both.ranked[0].score <= both.ranked[1].score);
    assert!(optimize_design(&ev, &[], Objective::MinIec, Some(&cost), &mvn(1)).is_err());
    assert!(optimize_design(&ev, &[d1.clone()], Objective::MinIec, None, &mvn(1)).is_err());

    // Identical scores: the smaller maximal sample size wins, then fewer analyses.
    let u = 1.0 - 1e-12;
    let a = TrialDesign::new(vec![100, 200], vec![u, u]).unwrap();
    let b = TrialDesign::new(vec![100], vec![u]).unwrap();
    let zero = CostSpec::new(1.0, 0.0, 0.0).unwrap();
    let tie = optimize_design(&ev, &[a, b.clone()], Objective::MinIec, Some(&zero), &mvn(1)).unwrap();
    assert_eq!(tie.ranked[0].schedule, b.schedule);
}

#[test]
fn validation_errors_name_fields() {
    let bad = TrialDesign {
        name: None,
        schedule: vec![300, 200],
        efficacy: vec![0.9, 1.2],
        futility: None,
        psi0: 0.0,
        reference: None,
    };
    let fields: Vec<String> = bad.field_errors().into_iter().map(|e| e.field).collect();
    assert!(fields.contains(&"schedule[1]".to_string()));
    assert!(fields.contains(&"efficacy[1]".to_string()));
    assert!(CostSpec::new(0.0, 0.0, 0.0).is_err());
    assert!(MvnConfig { draws: 999, seed: 1, antithetic: true }.validate().is_err());
    let n = norm_cdf(0.0);
    assert_eq!(n, 0.5);
}
