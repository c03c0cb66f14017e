//! Operating characteristics from the normal approximation to the decision
//! statistic: fixed-design power, group sequential stopping probabilities,
//! and their integration over a design prior.

pub mod design;
pub mod evaluate;
pub mod gsd;
pub mod plan;

pub use design::{CostSpec, FieldError, MvnConfig, Reference, TrialDesign};
pub use evaluate::{
    attach_reference_checks, default_grid, iess, integrated_power_curve, optimize_design,
    power_uncertainty, AnalysisOc, Curve, CurvePoint, Evaluator, IecBreakdown, Interval,
    Objective, OcReport, RankedDesign, Ranking, ReferenceCheck,
};
pub use gsd::{
    correlation, effect, gamma_joint, noise_draws, power_fixed, stop_counts, stop_probs,
    GsdJointDistribution, Outcome, StopCounts, StopProbs, StoppingTable,
};
pub use plan::{psi_grid, SamplingPlan};
