use std::collections::BTreeSet;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::formula::{MainTerm, ModelFormula, Term, Transform};
use crate::dataset::{Cohort, CovariateValue};
use crate::error::{Error, Result};

/// Treatment coding of one categorical variable: one indicator column per
/// non-reference level.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FactorCoding {
    pub variable: String,
    pub reference: String,
    /// All admissible levels, reference included, sorted.
    pub levels: Vec<String>,
}

impl FactorCoding {
    pub fn indicator_levels(&self) -> impl Iterator<Item = &String> {
        self.levels.iter().filter(move |l| **l != self.reference)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignColumn {
    pub name: String,
    /// Index of the formula term that produced the column.
    pub term: usize,
}

/// Subject-by-column covariate matrix for a formula.
#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    pub matrix: DMatrix<f64>,
    pub columns: Vec<DesignColumn>,
    pub coding: Vec<FactorCoding>,
}

impl Design {
    pub fn n_rows(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn n_cols(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn column_names(&self) -> Vec<String> {
        self.columns.iter().map(|c| c.name.clone()).collect()
    }

    /// Column indices belonging to formula term `term`.
    pub fn term_columns(&self, term: usize) -> Vec<usize> {
        self.columns
            .iter()
            .enumerate()
            .filter(|(_, c)| c.term == term)
            .map(|(i, _)| i)
            .collect()
    }

    /// Column means.
    pub fn centers(&self) -> Vec<f64> {
        let n = self.n_rows().max(1) as f64;
        (0..self.n_cols()).map(|j| self.matrix.column(j).sum() / n).collect()
    }

    /// Copy with each column shifted by its mean.
    pub fn centered(&self) -> DMatrix<f64> {
        let centers = self.centers();
        let mut m = self.matrix.clone();
        for (j, c) in centers.iter().enumerate() {
            m.column_mut(j).add_scalar_mut(-c);
        }
        m
    }
}

fn is_builtin_factor(var: &str) -> bool {
    matches!(var, "gender" | "initial_side")
}

fn default_reference(var: &str, levels: &[String]) -> String {
    if var == "initial_side" && levels.iter().any(|l| l == "Left") {
        return "Left".to_string();
    }
    levels[0].clone()
}

/// Decides whether `var` is categorical in this cohort and, if so, derives
/// its coding.
fn factor_coding(cohort: &Cohort, formula: &ModelFormula, var: &str) -> Result<Option<FactorCoding>> {
    let mut levels = BTreeSet::new();
    let mut any_text = is_builtin_factor(var);
    for r in &cohort.records {
        match r.covariate(var)? {
            Some(CovariateValue::Level(l)) => {
                any_text = true;
                levels.insert(l);
            }
            Some(CovariateValue::Numeric(x)) => {
                levels.insert(x.to_string());
            }
            None => {}
        }
    }
    if !any_text {
        return Ok(None);
    }
    let levels: Vec<String> = levels.into_iter().collect();
    if levels.len() < 2 {
        return Err(Error::Coding(format!(
            "factor `{var}` needs at least two observed levels, found {levels:?}"
        )));
    }
    let reference = match formula.reference_levels.get(var) {
        Some(r) if levels.contains(r) => r.clone(),
        Some(r) => {
            return Err(Error::Coding(format!("reference level `{r}` of `{var}` not observed")))
        }
        None => default_reference(var, &levels),
    };
    Ok(Some(FactorCoding {
        variable: var.to_string(),
        reference,
        levels,
    }))
}

fn level_text(v: &CovariateValue) -> String {
    match v {
        CovariateValue::Level(l) => l.clone(),
        CovariateValue::Numeric(x) => x.to_string(),
    }
}

/// Columns (name, values) contributed by one main effect.
fn main_columns(
    cohort: &Cohort,
    main: &MainTerm,
    coding: Option<&FactorCoding>,
) -> Result<Vec<(String, Vec<f64>)>> {
    let var = &main.variable;
    if let Some(coding) = coding {
        if main.transform != Transform::Identity {
            return Err(Error::Formula(format!("cannot transform categorical `{var}`")));
        }
        let mut cols: Vec<(String, Vec<f64>)> = coding
            .indicator_levels()
            .map(|l| (format!("{var}[{l}]"), Vec::with_capacity(cohort.len())))
            .collect();
        for (row, r) in cohort.records.iter().enumerate() {
            let value = r.covariate(var)?.ok_or_else(|| Error::Transform {
                row: Some(row + 1),
                message: format!("missing value for `{var}`"),
            })?;
            let level = level_text(&value);
            if !coding.levels.contains(&level) {
                return Err(Error::Coding(format!("unseen level `{level}` of `{var}` at row {}", row + 1)));
            }
            for ((_, col), l) in cols.iter_mut().zip(coding.indicator_levels()) {
                col.push(if *l == level { 1.0 } else { 0.0 });
            }
        }
        return Ok(cols);
    }
    let mut values = Vec::with_capacity(cohort.len());
    for (row, r) in cohort.records.iter().enumerate() {
        let x = match r.covariate(var)? {
            Some(CovariateValue::Numeric(x)) => x,
            Some(CovariateValue::Level(l)) => {
                return Err(Error::Coding(format!("non-numeric value `{l}` for `{var}`")))
            }
            None => {
                return Err(Error::Transform {
                    row: Some(row + 1),
                    message: format!("missing value for `{var}`"),
                })
            }
        };
        let y = match main.transform {
            Transform::Identity => x,
            Transform::Sqrt if x < 0.0 => {
                return Err(Error::Transform {
                    row: Some(row + 1),
                    message: format!("sqrt of negative {var} = {x}"),
                })
            }
            Transform::Sqrt => x.sqrt(),
            Transform::Log if x <= 0.0 => {
                return Err(Error::Transform {
                    row: Some(row + 1),
                    message: format!("log of nonpositive {var} = {x}"),
                })
            }
            Transform::Log => x.ln(),
        };
        values.push(y);
    }
    Ok(vec![(main.to_string(), values)])
}

/// Builds the design matrix for `formula`, deriving factor codings from the
/// cohort.
pub fn build_design(cohort: &Cohort, formula: &ModelFormula) -> Result<Design> {
    build_design_with(cohort, formula, None)
}

/// Builds the design matrix, reusing `coding` for categorical variables when
/// given (e.g. to apply a fitted model to a new cohort).
pub fn build_design_with(
    cohort: &Cohort,
    formula: &ModelFormula,
    coding: Option<&[FactorCoding]>,
) -> Result<Design> {
    formula.validate()?;
    if cohort.is_empty() {
        return Err(Error::EmptyCohort);
    }
    let mut codings: Vec<FactorCoding> = Vec::new();
    let mut variables: Vec<&str> = Vec::new();
    for t in &formula.terms {
        let mains: Vec<&MainTerm> = match t {
            Term::Main(m) => vec![m],
            Term::Interaction(a, b) => vec![a, b],
        };
        for m in mains {
            if !variables.contains(&m.variable.as_str()) {
                variables.push(&m.variable);
            }
        }
    }
    for var in variables {
        let fc = match coding {
            Some(given) => given.iter().find(|c| c.variable == var).cloned(),
            None => factor_coding(cohort, formula, var)?,
        };
        if let Some(fc) = fc {
            codings.push(fc);
        }
    }
    let coding_of = |var: &str| codings.iter().find(|c| c.variable == var);

    let mut columns = Vec::new();
    let mut data: Vec<Vec<f64>> = Vec::new();
    for (ti, t) in formula.terms.iter().enumerate() {
        let cols = match t {
            Term::Main(m) => main_columns(cohort, m, coding_of(&m.variable))?,
            Term::Interaction(a, b) => {
                let ca = main_columns(cohort, a, coding_of(&a.variable))?;
                let cb = main_columns(cohort, b, coding_of(&b.variable))?;
                let mut out = Vec::new();
                for (na, va) in &ca {
                    for (nb, vb) in &cb {
                        let prod = va.iter().zip(vb).map(|(x, y)| x * y).collect();
                        out.push((format!("{na}:{nb}"), prod));
                    }
                }
                out
            }
        };
        for (name, values) in cols {
            columns.push(DesignColumn { name, term: ti });
            data.push(values);
        }
    }
    let n = cohort.len();
    let matrix = DMatrix::from_fn(n, data.len(), |i, j| data[j][i]);
    Ok(Design {
        matrix,
        columns,
        coding: codings,
    })
}
