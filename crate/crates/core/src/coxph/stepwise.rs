use serde::{Deserialize, Serialize};

use super::fit::{cox_fit, CoxModel};
use super::formula::ModelFormula;
use super::likelihood::TieMethod;
use crate::dataset::Cohort;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Removal {
    pub term: String,
    pub wald_statistic: f64,
    pub df: usize,
    pub p_value: f64,
    /// Formula after the removal.
    pub formula: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepwiseResult {
    pub model: CoxModel,
    pub trace: Vec<Removal>,
}

/// Backward elimination by term-wise Wald p-value.
///
/// Each round drops the removable term with the largest p-value above
/// `alpha` (first in formula order on ties) and refits. A main effect is
/// never removable while an interaction containing it remains.
pub fn stepwise_backward(
    cohort: &Cohort,
    initial: &ModelFormula,
    alpha: f64,
    ties: TieMethod,
) -> Result<StepwiseResult> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::domain(format!("alpha {alpha} outside (0, 1)")));
    }
    initial.validate()?;
    let mut trace: Vec<Removal> = Vec::new();
    let abort = |trace: &[Removal], e: Error| Error::Stepwise {
        trace: trace.iter().map(|r| format!("-{} (p={:.4})", r.term, r.p_value)).collect(),
        source: Box::new(e),
    };
    let mut formula = initial.clone();
    loop {
        let model = cox_fit(cohort, &formula, ties).map_err(|e| abort(&trace, e))?;
        let mut worst: Option<(usize, f64, usize, f64)> = None;
        for t in 0..formula.terms.len() {
            if !formula.removable(t) {
                continue;
            }
            let (stat, df, p) = model.term_wald(t).map_err(|e| abort(&trace, e))?;
            if p > alpha && worst.is_none_or(|w| p > w.3) {
                worst = Some((t, stat, df, p));
            }
        }
        let Some((t, stat, df, p)) = worst else {
            return Ok(StepwiseResult { model, trace });
        };
        let term = formula.terms[t].to_string();
        formula = formula.without(t);
        trace.push(Removal {
            term,
            wald_statistic: stat,
            df,
            p_value: p,
            formula: formula.to_string(),
        });
    }
}
