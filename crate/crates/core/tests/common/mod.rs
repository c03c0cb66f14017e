#![allow(dead_code)]

use bvmdesign_core::oc::TrialDesign;
use bvmdesign_core::{ModelSpec, ParameterPoint};
use std::path::PathBuf;

pub fn config_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

pub fn logistic_spec() -> ModelSpec {
    ModelSpec::from_path(&config_dir().join("logistic/model.json")).unwrap()
}

pub fn survival_spec() -> ModelSpec {
    ModelSpec::from_path(&config_dir().join("survival/model.json")).unwrap()
}

pub fn design(name: &str) -> TrialDesign {
    TrialDesign::from_path(&config_dir().join(format!("survival/{name}.json"))).unwrap()
}

pub fn point(spec: &ModelSpec, values: &[f64]) -> ParameterPoint {
    ParameterPoint::new(spec.model.parameter_names(), values.to_vec()).unwrap()
}

/// Logistic scale at `theta` from the Fisher information of `psi0` (the
/// treatment main effect), with `x ~ Bern(1/2)` and 1:1 allocation.
pub fn logistic_fisher_lambda(theta: &[f64]) -> f64 {
    let (b0, b1, p0, p1) = (theta[0], theta[1], theta[2], theta[3]);
    let w = |eta: f64| {
        let p = 1.0 / (1.0 + (-eta).exp());
        p * (1.0 - p)
    };
    // Cell weights w(x, A), each cell with probability 1/4.
    let cells = [
        (0.0, 0.0, w(b0)),
        (0.0, 1.0, w(b0 + p0)),
        (1.0, 0.0, w(b0 + b1)),
        (1.0, 1.0, w(b0 + b1 + p0 + p1)),
    ];
    // Information matrix for (b0, b1, p0, p1) per observation.
    let mut info = nalgebra::Matrix4::<f64>::zeros();
    for &(x, a, wt) in &cells {
        let z = nalgebra::Vector4::new(1.0, x, a, x * a);
        info += 0.25 * wt * z * z.transpose();
    }
    info.try_inverse().unwrap()[(2, 2)].sqrt()
}

/// Ensemble whose state `s` predicts `log_lambda + spread * (s - 49.5) / 49.5`
/// everywhere; 100 states, training box `bounds`.
pub fn flat_ensemble(
    names: &[String],
    bounds: Vec<(f64, f64)>,
    log_lambda: f64,
    spread: f64,
) -> bvmdesign_core::bart::BartPosterior {
    use bvmdesign_core::bart::{BartConfig, BartPosterior, BartState, Tree};
    BartPosterior {
        version: 1,
        names: names.to_vec(),
        center: log_lambda,
        scale: 1.0,
        n_train: 40,
        inclusion_counts: vec![0; bounds.len()],
        training_box: bounds,
        mean_depth: 0.0,
        config: BartConfig::default(),
        states: (0..100)
            .map(|s| BartState {
                sigma: 0.1,
                trees: vec![Tree::stump(spread * (s as f64 - 49.5) / 49.5)],
            })
            .collect(),
    }
}
