use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::design::{build_design, build_design_with, Design, FactorCoding};
use super::formula::ModelFormula;
use super::likelihood::{CoxProblem, TieMethod};
use crate::dataset::Cohort;
use crate::error::{Error, Result};
use crate::math::{chisq_sf, normal_quantile, phi_upper};

pub const MAX_ITER: usize = 50;
pub const MAX_HALVINGS: usize = 10;
pub const REL_TOL: f64 = 1e-9;
const GRAD_TOL: f64 = 1e-7;
/// Bound on |coef · sd(column)| beyond which the likelihood is treated as
/// monotone.
const DIVERGENCE_BOUND: f64 = 25.0;
/// A per-sd standard error this large means the likelihood is flat or
/// monotone along that coefficient (Newton stops once the gradient vanishes).
const SE_BOUND: f64 = 100.0;

/// A fitted Cox proportional-hazards model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoxModel {
    pub formula: ModelFormula,
    pub columns: Vec<String>,
    /// Formula term index of each column.
    pub column_terms: Vec<usize>,
    pub coding: Vec<FactorCoding>,
    pub coef: Vec<f64>,
    /// Inverse observed information at `coef`, row-major.
    pub covariance: Vec<Vec<f64>>,
    /// Column means of the fitting design.
    pub centers: Vec<f64>,
    pub loglik_null: f64,
    pub loglik_fit: f64,
    /// `U(0)ᵀ I(0)⁻¹ U(0)`; absent when the information at zero is singular.
    pub score_statistic: Option<f64>,
    pub tie_method: TieMethod,
    pub n: usize,
    pub n_events: usize,
    pub iterations: usize,
}

impl CoxModel {
    pub fn n_coef(&self) -> usize {
        self.coef.len()
    }

    pub fn std_errors(&self) -> Vec<f64> {
        (0..self.coef.len())
            .map(|j| self.covariance[j][j].max(0.0).sqrt())
            .collect()
    }

    pub fn covariance_matrix(&self) -> DMatrix<f64> {
        let p = self.coef.len();
        DMatrix::from_fn(p, p, |i, j| self.covariance[i][j])
    }

    pub fn coef_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.coef)
    }

    /// Rebuilds the design for `cohort` with this model's factor coding.
    pub fn design_for(&self, cohort: &Cohort) -> Result<Design> {
        build_design_with(cohort, &self.formula, Some(&self.coding))
    }

    /// Design for `cohort` shifted by the fitting centers.
    pub fn centered_design(&self, cohort: &Cohort) -> Result<DMatrix<f64>> {
        let mut m = self.design_for(cohort)?.matrix;
        for (j, c) in self.centers.iter().enumerate() {
            m.column_mut(j).add_scalar_mut(-c);
        }
        Ok(m)
    }

    /// Wald statistic, df and p-value for the columns of formula term `term`.
    pub fn term_wald(&self, term: usize) -> Result<(f64, usize, f64)> {
        let idx: Vec<usize> = (0..self.columns.len())
            .filter(|&j| self.column_terms[j] == term)
            .collect();
        if idx.is_empty() {
            return Err(Error::domain(format!("term {term} has no columns")));
        }
        let b = DVector::from_iterator(idx.len(), idx.iter().map(|&j| self.coef[j]));
        let v = DMatrix::from_fn(idx.len(), idx.len(), |r, c| self.covariance[idx[r]][idx[c]]);
        let stat = quadratic_form_inv(&v, &b).ok_or_else(|| {
            Error::Singular(format!("covariance block of term {term}"))
        })?;
        let p = chisq_sf(stat.max(0.0), idx.len() as u32)?.value();
        Ok((stat, idx.len(), p))
    }
}

/// `bᵀ A⁻¹ b` for symmetric positive-definite `A`.
pub(crate) fn quadratic_form_inv(a: &DMatrix<f64>, b: &DVector<f64>) -> Option<f64> {
    let chol = a.clone().cholesky()?;
    let x = chol.solve(b);
    Some(b.dot(&x))
}

/// Checks the centered columns for linear dependence by modified
/// Gram–Schmidt, naming the columns involved in the first dependency.
fn check_rank(x: &DMatrix<f64>, names: &[String]) -> Result<()> {
    let p = x.ncols();
    let mut q: Vec<DVector<f64>> = Vec::with_capacity(p);
    for j in 0..p {
        let orig = x.column(j).into_owned();
        let norm0 = orig.norm();
        let mut v = orig.clone();
        let mut involved = Vec::new();
        for (k, qk) in q.iter().enumerate() {
            let r = qk.dot(&v);
            if r.abs() > 1e-12 * norm0.max(1e-300) {
                involved.push(k);
            }
            v.axpy(-r, qk, 1.0);
        }
        let norm = v.norm();
        if !(norm > 1e-9 * norm0) || norm0 == 0.0 {
            let mut cols: Vec<String> = involved.iter().map(|&k| names[k].clone()).collect();
            cols.push(names[j].clone());
            return Err(Error::Collinearity { columns: cols });
        }
        q.push(v / norm);
    }
    Ok(())
}

fn column_sd(x: &DMatrix<f64>, j: usize) -> f64 {
    let n = x.nrows().max(2) as f64;
    (x.column(j).norm_squared() / (n - 1.0)).sqrt()
}

fn divergence_check(x: &DMatrix<f64>, beta: &DVector<f64>, names: &[String]) -> Result<()> {
    for j in 0..beta.len() {
        let scaled = beta[j] * column_sd(x, j);
        if scaled.abs() > DIVERGENCE_BOUND {
            return Err(Error::Divergence(format!(
                "coefficient of `{}` reached {:.3} ({:.1} per sd); check for a covariate that separates events from non-events",
                names[j], beta[j], scaled
            )));
        }
    }
    Ok(())
}

fn information_inverse(h: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let info = -h;
    let inv = info.cholesky()?.inverse();
    Some((&inv + inv.transpose()) * 0.5)
}

/// Fits the model on a prebuilt design.
pub fn cox_fit_design(
    design: &Design,
    formula: &ModelFormula,
    times: &[f64],
    events: &[bool],
    ties: TieMethod,
) -> Result<CoxModel> {
    let n_events = events.iter().filter(|e| **e).count();
    let p = design.n_cols();
    if n_events == 0 {
        return Err(Error::SampleSize {
            required: 1,
            actual: 0,
        });
    }
    if n_events < p {
        return Err(Error::SampleSize {
            required: p,
            actual: n_events,
        });
    }
    let names = design.column_names();
    let x = design.centered();
    check_rank(&x, &names)?;
    let problem = CoxProblem::new(&x, times, events, ties)?;

    let mut beta = DVector::zeros(p);
    let null = problem.evaluate(&beta)?;
    let score_statistic = if p == 0 {
        Some(0.0)
    } else {
        quadratic_form_inv(&(-&null.hessian), &null.gradient)
    };

    let mut current = null.clone();
    let mut iterations = 0;
    let mut converged = p == 0;
    while !converged && iterations < MAX_ITER {
        iterations += 1;
        let info = -&current.hessian;
        let step = match info.clone().cholesky() {
            Some(ch) => ch.solve(&current.gradient),
            None => {
                divergence_check(&x, &beta, &names)?;
                return Err(Error::Singular(format!(
                    "observed information not positive definite at iteration {iterations}"
                )));
            }
        };
        // Near the optimum the predicted gain falls below rounding error.
        let noise = 1e-13 * current.value.abs().max(1.0);
        let mut scale = 1.0;
        let mut accepted = None;
        for _ in 0..=MAX_HALVINGS {
            let trial = &beta + &step * scale;
            match problem.evaluate(&trial) {
                Ok(pl) if pl.value.is_finite() && pl.value >= current.value - noise => {
                    accepted = Some((trial, pl));
                    break;
                }
                Ok(_) | Err(Error::Rescaling(_)) => scale *= 0.5,
                Err(e) => return Err(e),
            }
        }
        let Some((trial, pl)) = accepted else {
            // No ascent along the Newton direction: the current point is the
            // numerical optimum if the gradient is negligible.
            if current.gradient.amax() <= 1e-6 {
                converged = true;
                break;
            }
            return Err(Error::Convergence {
                message: format!("step-halving failed at iteration {iterations}"),
                best: beta.iter().copied().collect(),
            });
        };
        let change = (pl.value - current.value).abs();
        beta = trial;
        current = pl;
        divergence_check(&x, &beta, &names)?;
        if change <= REL_TOL * current.value.abs().max(f64::MIN_POSITIVE)
            && current.gradient.amax() <= GRAD_TOL
        {
            converged = true;
        }
    }
    if !converged {
        if current.gradient.amax() <= 1e-6 {
            converged = true;
        } else {
            return Err(Error::Convergence {
                message: format!("no convergence in {MAX_ITER} Newton iterations"),
                best: beta.iter().copied().collect(),
            });
        }
    }
    debug_assert!(converged);

    let cov = if p == 0 {
        DMatrix::zeros(0, 0)
    } else {
        information_inverse(&current.hessian).ok_or_else(|| {
            Error::Singular("observed information at the optimum".into())
        })?
    };
    for j in 0..p {
        let sd = column_sd(&x, j);
        if cov[(j, j)].sqrt() * sd > SE_BOUND {
            return Err(Error::Divergence(format!(
                "standard error of `{}` is unbounded; the likelihood is flat or monotone in it",
                names[j]
            )));
        }
    }
    Ok(CoxModel {
        formula: formula.clone(),
        columns: names,
        column_terms: design.columns.iter().map(|c| c.term).collect(),
        coding: design.coding.clone(),
        coef: beta.iter().copied().collect(),
        covariance: (0..p).map(|i| (0..p).map(|j| cov[(i, j)]).collect()).collect(),
        centers: design.centers(),
        loglik_null: null.value,
        loglik_fit: current.value.max(null.value),
        score_statistic,
        tie_method: ties,
        n: times.len(),
        n_events,
        iterations,
    })
}

/// Fits `formula` to `cohort` by Newton–Raphson on the partial likelihood.
pub fn cox_fit(cohort: &Cohort, formula: &ModelFormula, ties: TieMethod) -> Result<CoxModel> {
    let design = build_design(cohort, formula)?;
    cox_fit_design(&design, formula, &cohort.times(), &cohort.events(), ties)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HazardRatio {
    pub term: String,
    pub coef: f64,
    pub se_coef: f64,
    pub hr: f64,
    pub ci_lower: f64,
    pub ci_upper: f64,
    pub z: f64,
    pub p_value: f64,
    /// 1 for the largest hazard ratio.
    pub rank: usize,
}

impl HazardRatio {
    pub fn from_coef(term: &str, coef: f64, se: f64, conf_level: f64) -> Result<Self> {
        if !(conf_level > 0.0 && conf_level < 1.0) {
            return Err(Error::domain(format!("confidence level {conf_level} outside (0, 1)")));
        }
        let z = normal_quantile(0.5 + conf_level / 2.0)?;
        let stat = if se > 0.0 { coef / se } else { 0.0 };
        Ok(HazardRatio {
            term: term.to_string(),
            coef,
            se_coef: se,
            hr: coef.exp(),
            ci_lower: (coef - z * se).exp(),
            ci_upper: (coef + z * se).exp(),
            z: stat,
            p_value: (2.0 * phi_upper(stat.abs())).min(1.0),
            rank: 0,
        })
    }
}

/// Hazard ratios in column order, each tagged with its rank by `hr`
/// (descending, ties by column order).
pub fn hazard_ratios(model: &CoxModel, conf_level: f64) -> Result<Vec<HazardRatio>> {
    let se = model.std_errors();
    let mut out = model
        .columns
        .iter()
        .zip(&model.coef)
        .zip(&se)
        .map(|((name, &b), &s)| HazardRatio::from_coef(name, b, s, conf_level))
        .collect::<Result<Vec<_>>>()?;
    let mut order: Vec<usize> = (0..out.len()).collect();
    order.sort_by(|&a, &b| out[b].hr.total_cmp(&out[a].hr).then(a.cmp(&b)));
    for (rank, i) in order.into_iter().enumerate() {
        out[i].rank = rank + 1;
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChiSquareTest {
    pub statistic: f64,
    pub df: usize,
    pub p_value: f64,
}

impl ChiSquareTest {
    fn new(statistic: f64, df: usize) -> Result<Self> {
        let p_value = if df == 0 {
            1.0
        } else {
            chisq_sf(statistic.max(0.0), df as u32)?.value()
        };
        Ok(ChiSquareTest {
            statistic,
            df,
            p_value,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GlobalTests {
    pub likelihood_ratio: ChiSquareTest,
    pub wald: ChiSquareTest,
    pub score: ChiSquareTest,
}

/// Likelihood-ratio, Wald and score tests of all coefficients being zero.
pub fn global_tests(model: &CoxModel) -> Result<GlobalTests> {
    let df = model.n_coef();
    let lr = (2.0 * (model.loglik_fit - model.loglik_null)).max(0.0);
    let wald = if df == 0 {
        0.0
    } else {
        quadratic_form_inv(&model.covariance_matrix(), &model.coef_vector())
            .ok_or_else(|| Error::Singular("coefficient covariance".into()))?
    };
    let score = model
        .score_statistic
        .ok_or_else(|| Error::Singular("information at zero; score test undefined".into()))?;
    Ok(GlobalTests {
        likelihood_ratio: ChiSquareTest::new(lr, df)?,
        wald: ChiSquareTest::new(wald, df)?,
        score: ChiSquareTest::new(score, df)?,
    })
}

/// Cumulative baseline hazard as a right-continuous step function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineHazard {
    /// Distinct event times, increasing.
    pub times: Vec<f64>,
    /// `H₀` just after each time.
    pub cumhaz: Vec<f64>,
}

impl BaselineHazard {
    pub fn at(&self, t: f64) -> f64 {
        match self.times.partition_point(|&s| s <= t) {
            0 => 0.0,
            k => self.cumhaz[k - 1],
        }
    }
}

pub(crate) fn baseline_from(
    x: &DMatrix<f64>,
    times: &[f64],
    events: &[bool],
    coef: &DVector<f64>,
) -> Result<BaselineHazard> {
    let steps = CoxProblem::new(x, times, events, TieMethod::Breslow)?.breslow_increments(coef)?;
    let mut acc = 0.0;
    let mut out = BaselineHazard {
        times: Vec::with_capacity(steps.len()),
        cumhaz: Vec::with_capacity(steps.len()),
    };
    for (t, dh) in steps {
        acc += dh;
        out.times.push(t);
        out.cumhaz.push(acc);
    }
    Ok(out)
}

/// Breslow estimate of `H₀(t)` for the linear predictor `coefᵀx` on the
/// original covariate scale.
pub fn breslow_baseline(model: &CoxModel, cohort: &Cohort) -> Result<BaselineHazard> {
    let design = model.design_for(cohort)?;
    baseline_from(&design.matrix, &cohort.times(), &cohort.events(), &model.coef_vector())
}
