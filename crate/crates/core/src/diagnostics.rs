//! Residual diagnostics for fitted Cox models.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::coxph::{baseline_from, CoxModel, CoxProblem, EventMoments};
use crate::dataset::Cohort;
use crate::error::{Error, Result};
use crate::math::{chisq_sf, midranks, Probability};
use crate::nonparam::km_estimate;
use crate::sample::SurvSample;

/// Screening threshold for |deviance residual|; a convention, not a test.
pub const DEVIANCE_FLAG: f64 = 2.5;
pub const LOWESS_SPAN: f64 = 2.0 / 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResidualKind {
    Schoenfeld,
    ScaledSchoenfeld,
    Martingale,
    Deviance,
    CoxSnell,
}

/// Residuals row by row: one row per event with one column per design column
/// for the Schoenfeld kinds, one single-column row per subject otherwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualSet {
    pub kind: ResidualKind,
    pub columns: Vec<String>,
    pub subjects: Vec<String>,
    pub times: Vec<f64>,
    pub events: Vec<bool>,
    pub values: Vec<Vec<f64>>,
}

impl ResidualSet {
    /// Values of a single-column set.
    pub fn column(&self, j: usize) -> Vec<f64> {
        self.values.iter().map(|r| r[j]).collect()
    }

    pub fn column_sums(&self) -> Vec<f64> {
        let k = self.columns.len();
        let mut sums = vec![0.0; k];
        for row in &self.values {
            for (s, v) in sums.iter_mut().zip(row) {
                *s += v;
            }
        }
        sums
    }
}

/// The model's design for `cohort`, centered as during fitting.
struct Frame {
    x: DMatrix<f64>,
    times: Vec<f64>,
    events: Vec<bool>,
    ids: Vec<String>,
    coef: DVector<f64>,
}

impl Frame {
    fn new(model: &CoxModel, cohort: &Cohort) -> Result<Self> {
        Ok(Frame {
            x: model.centered_design(cohort)?,
            times: cohort.times(),
            events: cohort.events(),
            ids: cohort.records.iter().map(|r| r.id.clone()).collect(),
            coef: model.coef_vector(),
        })
    }

    fn moments(&self, model: &CoxModel) -> Result<Vec<EventMoments>> {
        CoxProblem::new(&self.x, &self.times, &self.events, model.tie_method)?.event_moments(&self.coef)
    }

    /// `H₀(t_i)·exp(η_i)` for every subject.
    fn cumulative_hazards(&self) -> Result<Vec<f64>> {
        let base = baseline_from(&self.x, &self.times, &self.events, &self.coef)?;
        let eta = &self.x * &self.coef;
        Ok(self
            .times
            .iter()
            .zip(eta.iter())
            .map(|(&t, &e)| base.at(t) * e.exp())
            .collect())
    }
}

fn require_events(model: &CoxModel, n_events: usize) -> Result<()> {
    let need = model.n_coef() + 2;
    if n_events < need {
        return Err(Error::SampleSize {
            required: need,
            actual: n_events,
        });
    }
    Ok(())
}

fn schoenfeld_rows(frame: &Frame, moments: &[EventMoments]) -> Vec<DVector<f64>> {
    moments
        .iter()
        .map(|m| frame.x.row(m.subject).transpose() - &m.mean)
        .collect()
}

/// Schoenfeld residuals `x_k − x̄(t_k)`, with tied events sharing the
/// tie-averaged risk-set mean of the fit. The scaled form is
/// `r_k · (d · Cov) + β` for `d` events.
pub fn schoenfeld_residuals(model: &CoxModel, cohort: &Cohort, scaled: bool) -> Result<ResidualSet> {
    let frame = Frame::new(model, cohort)?;
    let moments = frame.moments(model)?;
    require_events(model, moments.len())?;
    let rows = schoenfeld_rows(&frame, &moments);
    let values: Vec<Vec<f64>> = if scaled {
        let scale = model.covariance_matrix() * moments.len() as f64;
        rows.iter()
            .map(|r| (&scale * r + &frame.coef).iter().copied().collect())
            .collect()
    } else {
        rows.iter().map(|r| r.iter().copied().collect()).collect()
    };
    Ok(ResidualSet {
        kind: if scaled {
            ResidualKind::ScaledSchoenfeld
        } else {
            ResidualKind::Schoenfeld
        },
        columns: model.columns.clone(),
        subjects: moments.iter().map(|m| frame.ids[m.subject].clone()).collect(),
        times: moments.iter().map(|m| m.time).collect(),
        events: vec![true; moments.len()],
        values,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TimeTransform {
    /// `1 − S(t−)` from the Kaplan–Meier estimate of the cohort.
    #[default]
    Km,
    Rank,
    Identity,
}

impl std::str::FromStr for TimeTransform {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "km" => Ok(TimeTransform::Km),
            "rank" => Ok(TimeTransform::Rank),
            "identity" | "time" => Ok(TimeTransform::Identity),
            other => Err(Error::domain(format!("unknown time transform `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhTerm {
    pub term: String,
    pub statistic: f64,
    pub p_value: Probability,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhGlobal {
    pub statistic: f64,
    pub df: usize,
    pub p_value: Probability,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhTestReport {
    pub transform: TimeTransform,
    pub terms: Vec<PhTerm>,
    pub global: PhGlobal,
}

fn transformed_times(cohort: &Cohort, moments: &[EventMoments], transform: TimeTransform) -> Result<Vec<f64>> {
    let t: Vec<f64> = moments.iter().map(|m| m.time).collect();
    Ok(match transform {
        TimeTransform::Identity => t,
        TimeTransform::Rank => midranks(&t)?,
        TimeTransform::Km => {
            let km = km_estimate(&SurvSample::from(cohort), 0.95)?;
            t.iter().map(|&s| 1.0 - km.survival_before(s)).collect()
        }
    })
}

/// Score test of adding `γ_j · x_j · g(t)` to the fitted model, per column
/// and jointly, with `g` the chosen time transform.
///
/// The score is `Σ_k g(t_k) r_k` over Schoenfeld residuals; its variance is
/// the information for γ after adjusting for β.
pub fn ph_test(model: &CoxModel, cohort: &Cohort, transform: TimeTransform) -> Result<PhTestReport> {
    let frame = Frame::new(model, cohort)?;
    let moments = frame.moments(model)?;
    require_events(model, moments.len())?;
    let g = transformed_times(cohort, &moments, transform)?;
    let (lo, hi) = g.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if !(hi > lo) {
        return Err(Error::Transform {
            row: None,
            message: "time transform is constant across event times".into(),
        });
    }
    let p = model.n_coef();
    let rows = schoenfeld_rows(&frame, &moments);
    let mut u = DVector::zeros(p);
    let mut i_bb = DMatrix::zeros(p, p);
    let mut i_gb = DMatrix::zeros(p, p);
    let mut i_gg = DMatrix::zeros(p, p);
    for ((m, r), &gk) in moments.iter().zip(&rows).zip(&g) {
        u.axpy(gk, r, 1.0);
        i_bb += &m.var;
        i_gb += &m.var * gk;
        i_gg += &m.var * (gk * gk);
    }
    let i_bb_inv = i_bb
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Singular("information of the fitted coefficients".into()))?
        .inverse();
    let eff = &i_gg - &i_gb * &i_bb_inv * i_gb.transpose();
    let mut terms = Vec::with_capacity(p);
    for j in 0..p {
        let v = eff[(j, j)];
        if !(v > 0.0) {
            return Err(Error::Singular(format!("no information for time trend of `{}`", model.columns[j])));
        }
        let stat = u[j] * u[j] / v;
        terms.push(PhTerm {
            term: model.columns[j].clone(),
            statistic: stat,
            p_value: chisq_sf(stat, 1)?,
        });
    }
    let eff = (&eff + eff.transpose()) * 0.5;
    let global_stat = crate::coxph::quadratic_form_inv(&eff, &u)
        .ok_or_else(|| Error::Singular("joint time-trend information".into()))?;
    Ok(PhTestReport {
        transform,
        terms,
        global: PhGlobal {
            statistic: global_stat,
            df: p,
            p_value: chisq_sf(global_stat.max(0.0), p.max(1) as u32)?,
        },
    })
}

fn per_subject(kind: ResidualKind, frame: &Frame, values: Vec<f64>) -> ResidualSet {
    ResidualSet {
        kind,
        columns: vec![format!("{kind:?}").to_lowercase()],
        subjects: frame.ids.clone(),
        times: frame.times.clone(),
        events: frame.events.clone(),
        values: values.into_iter().map(|v| vec![v]).collect(),
    }
}

/// `m_i = δ_i − H₀(t_i)·exp(η_i)` with the Breslow baseline.
pub fn martingale_residuals(model: &CoxModel, cohort: &Cohort) -> Result<ResidualSet> {
    let frame = Frame::new(model, cohort)?;
    let ch = frame.cumulative_hazards()?;
    let m = frame
        .events
        .iter()
        .zip(&ch)
        .map(|(&d, &h)| if d { 1.0 } else { 0.0 } - h)
        .collect();
    Ok(per_subject(ResidualKind::Martingale, &frame, m))
}

/// `sign(m)·sqrt(−2[m + δ ln(δ − m)])` with `0·ln 0 = 0`.
pub fn deviance_value(m: f64, event: bool) -> f64 {
    let d = if event { 1.0 } else { 0.0 };
    let log_term = if event { d * (d - m).ln() } else { 0.0 };
    let inner = (-2.0 * (m + log_term)).max(0.0);
    if m == 0.0 {
        0.0
    } else {
        m.signum() * inner.sqrt()
    }
}

pub fn deviance_residuals(model: &CoxModel, cohort: &Cohort) -> Result<ResidualSet> {
    let mart = martingale_residuals(model, cohort)?;
    let values = mart
        .values
        .iter()
        .zip(&mart.events)
        .map(|(m, &e)| vec![deviance_value(m[0], e)])
        .collect();
    Ok(ResidualSet {
        kind: ResidualKind::Deviance,
        columns: vec!["deviance".into()],
        values,
        ..mart
    })
}

/// Subjects whose |deviance residual| exceeds `threshold`.
pub fn deviance_outliers(set: &ResidualSet, threshold: f64) -> Vec<String> {
    set.subjects
        .iter()
        .zip(&set.values)
        .filter(|(_, v)| v[0].abs() > threshold)
        .map(|(s, _)| s.clone())
        .collect()
}

/// Nelson–Aalen curve of the Cox–Snell residuals treated as censored Exp(1)
/// data, with the least-squares slope of that curve through the origin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoxSnellCheck {
    /// `(residual, cumulative hazard)` at each distinct event residual.
    pub curve: Vec<(f64, f64)>,
    pub slope: f64,
}

pub fn nelson_aalen(times: &[f64], events: &[bool]) -> Vec<(f64, f64)> {
    let mut order: Vec<usize> = (0..times.len()).collect();
    order.sort_by(|&a, &b| times[a].total_cmp(&times[b]));
    let mut at_risk = times.len();
    let mut h = 0.0;
    let mut out = Vec::new();
    let mut i = 0;
    while i < order.len() {
        let t = times[order[i]];
        let mut j = i;
        let mut d = 0;
        while j < order.len() && times[order[j]] == t {
            d += usize::from(events[order[j]]);
            j += 1;
        }
        if d > 0 {
            h += d as f64 / at_risk as f64;
            out.push((t, h));
        }
        at_risk -= j - i;
        i = j;
    }
    out
}

pub fn coxsnell_residuals(model: &CoxModel, cohort: &Cohort) -> Result<(ResidualSet, CoxSnellCheck)> {
    let frame = Frame::new(model, cohort)?;
    let r = frame.cumulative_hazards()?;
    let curve = nelson_aalen(&r, &frame.events);
    let (sxy, sxx) = curve
        .iter()
        .fold((0.0, 0.0), |(a, b), &(x, y)| (a + x * y, b + x * x));
    let slope = if sxx > 0.0 { sxy / sxx } else { f64::NAN };
    Ok((
        per_subject(ResidualKind::CoxSnell, &frame, r),
        CoxSnellCheck { curve, slope },
    ))
}

/// Locally weighted linear regression (tricube weights, `iterations` robustness
/// passes with bisquare weights). Returns fitted values aligned with `x`.
pub fn lowess(x: &[f64], y: &[f64], span: f64, iterations: usize) -> Result<Vec<f64>> {
    let n = x.len();
    if n != y.len() {
        return Err(Error::domain("lowess inputs differ in length"));
    }
    if !(span > 0.0 && span <= 1.0) {
        return Err(Error::domain(format!("lowess span {span} outside (0, 1]")));
    }
    if n == 0 {
        return Ok(vec![]);
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]).then(a.cmp(&b)));
    let xs: Vec<f64> = order.iter().map(|&i| x[i]).collect();
    let ys: Vec<f64> = order.iter().map(|&i| y[i]).collect();
    let q = ((span * n as f64).ceil() as usize).clamp(2.min(n), n);
    let mut robust = vec![1.0; n];
    let mut fit = vec![0.0; n];
    for pass in 0..=iterations {
        for i in 0..n {
            let mut dist: Vec<f64> = xs.iter().map(|&v| (v - xs[i]).abs()).collect();
            dist.sort_by(f64::total_cmp);
            let h = dist[q - 1].max(1e-12 * xs[i].abs().max(1.0));
            let (mut sw, mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for k in 0..n {
                let u = (xs[k] - xs[i]).abs() / h;
                if u >= 1.0 {
                    continue;
                }
                let w = (1.0 - u * u * u).powi(3) * robust[k];
                sw += w;
                sx += w * xs[k];
                sy += w * ys[k];
                sxx += w * xs[k] * xs[k];
                sxy += w * xs[k] * ys[k];
            }
            fit[i] = if sw <= 0.0 {
                ys[i]
            } else {
                let mx = sx / sw;
                let var = sxx / sw - mx * mx;
                let my = sy / sw;
                if var > 1e-12 * (1.0 + mx * mx) {
                    my + (sxy / sw - mx * my) / var * (xs[i] - mx)
                } else {
                    my
                }
            };
        }
        if pass == iterations {
            break;
        }
        let mut abs_res: Vec<f64> = (0..n).map(|i| (ys[i] - fit[i]).abs()).collect();
        let mut sorted = abs_res.clone();
        sorted.sort_by(f64::total_cmp);
        let med = sorted[n / 2];
        if med <= 0.0 {
            break;
        }
        for (w, r) in robust.iter_mut().zip(abs_res.iter_mut()) {
            let u = *r / (6.0 * med);
            *w = if u < 1.0 { (1.0 - u * u).powi(2) } else { 0.0 };
        }
    }
    let mut out = vec![0.0; n];
    for (k, &i) in order.iter().enumerate() {
        out[i] = fit[k];
    }
    Ok(out)
}

/// Martingale residuals against one continuous covariate with a smoothed
/// trend, sorted by covariate value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MartingaleTrend {
    pub variable: String,
    pub x: Vec<f64>,
    pub residual: Vec<f64>,
    pub smooth: Vec<f64>,
}

/// Smoother-ready export for every numeric variable among the model's main
/// effects, on the raw (untransformed) covariate scale.
pub fn martingale_trends(model: &CoxModel, cohort: &Cohort, residuals: &ResidualSet) -> Result<Vec<MartingaleTrend>> {
    let m = residuals.column(0);
    let mut out = Vec::new();
    let mut seen: Vec<&str> = Vec::new();
    for t in &model.formula.terms {
        let crate::coxph::Term::Main(main) = t else {
            continue;
        };
        let var = main.variable.as_str();
        if seen.contains(&var) || model.coding.iter().any(|c| c.variable == var) {
            continue;
        }
        seen.push(var);
        let mut pts: Vec<(f64, f64)> = Vec::with_capacity(cohort.len());
        for (r, &mi) in cohort.records.iter().zip(&m) {
            if let Some(crate::dataset::CovariateValue::Numeric(x)) = r.covariate(var)? {
                pts.push((x, mi));
            }
        }
        pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
        let x: Vec<f64> = pts.iter().map(|p| p.0).collect();
        let residual: Vec<f64> = pts.iter().map(|p| p.1).collect();
        let smooth = lowess(&x, &residual, LOWESS_SPAN, 3)?;
        out.push(MartingaleTrend {
            variable: var.to_string(),
            x,
            residual,
            smooth,
        });
    }
    Ok(out)
}
