use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TieMethod {
    #[default]
    Efron,
    Breslow,
}

impl std::str::FromStr for TieMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "efron" => Ok(TieMethod::Efron),
            "breslow" => Ok(TieMethod::Breslow),
            other => Err(Error::domain(format!("unknown tie method `{other}`"))),
        }
    }
}

/// Log partial likelihood with its analytic gradient and Hessian.
#[derive(Debug, Clone, PartialEq)]
pub struct PartialLik {
    pub value: f64,
    pub gradient: DVector<f64>,
    pub hessian: DMatrix<f64>,
}

/// Risk-set moments attached to one event.
#[derive(Debug, Clone, PartialEq)]
pub struct EventMoments {
    pub subject: usize,
    pub time: f64,
    /// Weighted covariate mean over the risk set.
    pub mean: DVector<f64>,
    /// Weighted covariate covariance over the risk set.
    pub var: DMatrix<f64>,
}

/// Subjects grouped by distinct time, sorted once and reused across
/// likelihood evaluations.
#[derive(Debug, Clone)]
pub struct CoxProblem<'a> {
    x: &'a DMatrix<f64>,
    times: &'a [f64],
    events: &'a [bool],
    /// Distinct times in decreasing order with their subjects.
    groups: Vec<(f64, Vec<usize>)>,
    ties: TieMethod,
}

impl<'a> CoxProblem<'a> {
    pub fn new(x: &'a DMatrix<f64>, times: &'a [f64], events: &'a [bool], ties: TieMethod) -> Result<Self> {
        if x.nrows() != times.len() || times.len() != events.len() {
            return Err(Error::domain(format!(
                "design has {} rows but {} times and {} event flags",
                x.nrows(),
                times.len(),
                events.len()
            )));
        }
        if times.iter().any(|t| !t.is_finite()) {
            return Err(Error::domain("non-finite survival time"));
        }
        if !events.iter().any(|e| *e) {
            return Err(Error::domain("partial likelihood needs at least one event"));
        }
        let mut order: Vec<usize> = (0..times.len()).collect();
        order.sort_by(|&a, &b| times[b].total_cmp(&times[a]));
        let mut groups: Vec<(f64, Vec<usize>)> = Vec::new();
        for i in order {
            match groups.last_mut() {
                Some((t, members)) if *t == times[i] => members.push(i),
                _ => groups.push((times[i], vec![i])),
            }
        }
        Ok(CoxProblem {
            x,
            times,
            events,
            groups,
            ties,
        })
    }

    pub fn n_coef(&self) -> usize {
        self.x.ncols()
    }

    pub fn times(&self) -> &[f64] {
        self.times
    }

    pub fn events(&self) -> &[bool] {
        self.events
    }

    fn linear_predictor(&self, coef: &DVector<f64>) -> Result<(DVector<f64>, f64)> {
        if coef.len() != self.x.ncols() {
            return Err(Error::domain(format!(
                "{} coefficients for {} design columns",
                coef.len(),
                self.x.ncols()
            )));
        }
        if coef.iter().any(|b| !b.is_finite()) {
            return Err(Error::domain("non-finite coefficient"));
        }
        let eta = self.x * coef;
        if eta.iter().any(|e| !e.is_finite()) {
            return Err(Error::Rescaling("non-finite linear predictor".into()));
        }
        let max = eta.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Ok((eta, if self.x.ncols() == 0 { 0.0 } else { max }))
    }

    /// Walks risk sets from the latest time backwards, calling `visit` for
    /// every tied-event fraction `l/d` with the Efron- (or Breslow-) adjusted
    /// sums `(s0, s1, s2)` scaled by `exp(−shift)`.
    fn sweep<F>(&self, coef: &DVector<f64>, mut visit: F) -> Result<(DVector<f64>, f64)>
    where
        F: FnMut(f64, &[usize], usize, f64, &DVector<f64>, &DMatrix<f64>) -> Result<()>,
    {
        let p = self.x.ncols();
        let (eta, shift) = self.linear_predictor(coef)?;
        let mut s0 = 0.0;
        let mut s1 = DVector::zeros(p);
        let mut s2 = DMatrix::zeros(p, p);
        for (time, members) in &self.groups {
            let mut d0 = 0.0;
            let mut d1 = DVector::zeros(p);
            let mut d2 = DMatrix::zeros(p, p);
            let mut dead = Vec::new();
            for &i in members {
                let w = (eta[i] - shift).exp();
                let xi = self.x.row(i).transpose();
                s0 += w;
                s1.axpy(w, &xi, 1.0);
                s2.ger(w, &xi, &xi, 1.0);
                if self.events[i] {
                    d0 += w;
                    d1.axpy(w, &xi, 1.0);
                    d2.ger(w, &xi, &xi, 1.0);
                    dead.push(i);
                }
            }
            if dead.is_empty() {
                continue;
            }
            let d = dead.len();
            for l in 0..d {
                let frac = match self.ties {
                    TieMethod::Efron => l as f64 / d as f64,
                    TieMethod::Breslow => 0.0,
                };
                let a0 = s0 - frac * d0;
                if !(a0 > 0.0) {
                    return Err(Error::Rescaling(format!("risk-set weight underflow at t={time}")));
                }
                let a1 = &s1 - &d1 * frac;
                let a2 = &s2 - &d2 * frac;
                visit(*time, &dead, l, a0, &a1, &a2)?;
            }
        }
        Ok((eta, shift))
    }

    pub fn evaluate(&self, coef: &DVector<f64>) -> Result<PartialLik> {
        let p = self.x.ncols();
        let mut value = 0.0;
        let mut gradient = DVector::zeros(p);
        let mut hessian = DMatrix::zeros(p, p);
        let mut n_terms = 0usize;
        let (eta, shift) = self.sweep(coef, |_, _, _, a0, a1, a2| {
            let mean = a1 / a0;
            value -= a0.ln();
            gradient -= &mean;
            hessian -= a2 / a0 - &mean * mean.transpose();
            n_terms += 1;
            Ok(())
        })?;
        for i in 0..self.times.len() {
            if self.events[i] {
                value += eta[i];
                gradient += self.x.row(i).transpose();
            }
        }
        value -= n_terms as f64 * shift;
        Ok(PartialLik {
            value,
            gradient,
            hessian,
        })
    }

    /// Risk-set mean and covariance for each event, averaged over the tie
    /// fractions of its group so that group sums match the score and
    /// information of the fit.
    pub fn event_moments(&self, coef: &DVector<f64>) -> Result<Vec<EventMoments>> {
        let p = self.x.ncols();
        let mut out: Vec<EventMoments> = Vec::new();
        let mut acc_mean = DVector::zeros(p);
        let mut acc_var = DMatrix::zeros(p, p);
        self.sweep(coef, |time, dead, l, a0, a1, a2| {
            let mean = a1 / a0;
            let var = a2 / a0 - &mean * mean.transpose();
            if l == 0 {
                acc_mean.fill(0.0);
                acc_var.fill(0.0);
            }
            acc_mean += &mean;
            acc_var += &var;
            if l + 1 == dead.len() {
                let d = dead.len() as f64;
                for &i in dead {
                    out.push(EventMoments {
                        subject: i,
                        time,
                        mean: &acc_mean / d,
                        var: &acc_var / d,
                    });
                }
            }
            Ok(())
        })?;
        out.sort_by(|a, b| a.time.total_cmp(&b.time).then(a.subject.cmp(&b.subject)));
        Ok(out)
    }

    /// Breslow increments `d_k / Σ_risk exp(η)` at each distinct event time,
    /// in increasing time order.
    pub fn breslow_increments(&self, coef: &DVector<f64>) -> Result<Vec<(f64, f64)>> {
        let (eta, shift) = self.linear_predictor(coef)?;
        let mut s0 = 0.0;
        let mut out = Vec::new();
        for (time, members) in &self.groups {
            let mut d = 0usize;
            for &i in members {
                s0 += (eta[i] - shift).exp();
                if self.events[i] {
                    d += 1;
                }
            }
            if d > 0 {
                out.push((*time, d as f64 / s0 * (-shift).exp()));
            }
        }
        out.reverse();
        Ok(out)
    }
}

/// Log partial likelihood of `coef` for the given design and data.
///
/// The design is used as given; fitting centers it first.
pub fn cox_partial_loglik(
    design: &DMatrix<f64>,
    times: &[f64],
    events: &[bool],
    coef: &[f64],
    ties: TieMethod,
) -> Result<PartialLik> {
    CoxProblem::new(design, times, events, ties)?.evaluate(&DVector::from_column_slice(coef))
}
