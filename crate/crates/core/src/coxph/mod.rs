//! Cox proportional-hazards regression.

mod design;
mod fit;
mod formula;
mod likelihood;
mod stepwise;

pub use design::{build_design, build_design_with, Design, DesignColumn, FactorCoding};
pub(crate) use fit::{baseline_from, quadratic_form_inv};
pub use fit::{
    breslow_baseline, cox_fit, cox_fit_design, global_tests, hazard_ratios, BaselineHazard,
    ChiSquareTest, CoxModel, GlobalTests, HazardRatio,
};
pub use formula::{MainTerm, ModelFormula, Term, Transform};
pub use likelihood::{cox_partial_loglik, CoxProblem, EventMoments, PartialLik, TieMethod};
pub use stepwise::{stepwise_backward, Removal, StepwiseResult};
