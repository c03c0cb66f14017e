//! Operating characteristics of Bayesian experimental designs with nuisance
//! parameters.
//!
//! The pipeline has three expensive-to-cheap stages:
//!
//! 1. [`training`] estimates the posterior scale `lambda(theta)` of the
//!    interest parameter by replicated simulation and MCMC at a space-filling
//!    set of parameter points.
//! 2. [`bart`] learns `log lambda` over the parameter space with Bayesian
//!    additive regression trees.
//! 3. [`oc`] combines the predicted scale with the large-sample normal
//!    approximation of the probit-transformed decision statistic to evaluate
//!    power, stopping probabilities, assurance, expected sample size and
//!    expected cost of fixed and group sequential designs in closed form.
//!
//! [`oracle`] runs the full simulate-fit-decide loop for validation.

pub mod bart;
pub mod error;
pub mod model;
pub mod oc;
pub mod oracle;
pub mod posterior;
pub mod rng;
pub mod stats;
pub mod training;

pub use error::{Error, Result};
pub use model::{
    Dataset, DesignPrior, HypothesisSpec, Marginal, Model, ModelKind, ModelSpec, ModelVisitor,
    ParameterPoint,
};
