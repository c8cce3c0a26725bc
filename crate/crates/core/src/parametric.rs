//! Three-parameter Weibull and lognormal lifetime models.
//!
//! Parameterization:
//!
//! * `Weibull3P`: `F(t) = 1 − exp(−((t − τ)/θ)^η)` with `shape = η`,
//!   `scale = θ`, `location = τ`. The density is the derivative of this CDF,
//!   `f(t) = (η/θ)((t − τ)/θ)^(η−1) exp(−((t − τ)/θ)^η)`.
//! * `Lognormal3P`: `F(t) = Φ((ln(t − γ) − μ)/σ)` with `shape = σ`,
//!   `scale = μ` (the log-scale location, so it may be any real) and
//!   `location = γ`.
//!
//! Thresholds may be negative. Fitting maximizes the likelihood by profiling
//! over the threshold: for each candidate threshold the remaining two
//! parameters are solved exactly, the best candidate on a log-spaced grid is
//! then refined by golden-section search.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{self, Probability};
use crate::optim;
use crate::par::{self, Execution};
use crate::sample::SurvSample;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Weibull3P,
    Lognormal3P,
}

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Family::Weibull3P => "weibull3p",
            Family::Lognormal3P => "lognormal3p",
        }
    }
}

impl std::str::FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "weibull3p" | "weibull" => Ok(Family::Weibull3P),
            "lognormal3p" | "lognormal" => Ok(Family::Lognormal3P),
            other => Err(Error::domain(format!("unknown distribution family `{other}`"))),
        }
    }
}

/// A profile-likelihood evaluation at one threshold candidate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProfilePoint {
    pub location: f64,
    pub loglik: f64,
    pub shape: f64,
    pub scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileTrace {
    /// Grid evaluations ordered from the threshold closest to the data
    /// outwards. Candidates where the conditional fit failed are omitted.
    pub grid: Vec<ProfilePoint>,
    /// Index into `grid` of the point the refinement started from.
    pub selected: usize,
    /// The refined optimum.
    pub refined: ProfilePoint,
    /// The selected point sits at the far end of the grid; the likelihood
    /// may keep increasing as the threshold moves away.
    pub at_far_edge: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParametricModel {
    pub family: Family,
    pub shape: f64,
    pub scale: f64,
    pub location: f64,
    /// Log-likelihood at the fitted parameters (absent for hand-built models).
    pub loglik: Option<f64>,
    pub n: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub profile: Option<ProfileTrace>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Quantity {
    Pdf,
    Cdf,
    Survival,
    Hazard,
}

/// Number of parameters estimated by [`fit_mle_3p`].
pub const N_PARAMS: usize = 3;

impl ParametricModel {
    pub fn weibull(shape: f64, scale: f64, location: f64) -> Result<Self> {
        if !(shape > 0.0 && scale > 0.0 && shape.is_finite() && scale.is_finite()) {
            return Err(Error::domain("Weibull shape and scale must be positive and finite"));
        }
        if !location.is_finite() {
            return Err(Error::domain("Weibull location must be finite"));
        }
        Ok(ParametricModel {
            family: Family::Weibull3P,
            shape,
            scale,
            location,
            loglik: None,
            n: 0,
            profile: None,
        })
    }

    pub fn lognormal(mu: f64, sigma: f64, location: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::domain("lognormal sigma must be positive and finite"));
        }
        if !mu.is_finite() || !location.is_finite() {
            return Err(Error::domain("lognormal mu and location must be finite"));
        }
        Ok(ParametricModel {
            family: Family::Lognormal3P,
            shape: sigma,
            scale: mu,
            location,
            loglik: None,
            n: 0,
            profile: None,
        })
    }

    /// Copy without fit metadata.
    pub fn parameters_only(&self) -> Self {
        ParametricModel {
            loglik: None,
            n: 0,
            profile: None,
            ..self.clone()
        }
    }

    pub fn eval(&self, t: f64, which: Quantity) -> Result<f64> {
        dist_eval(self, t, which)
    }

    pub fn cdf(&self, t: f64) -> f64 {
        cdf_unchecked(self, t)
    }

    pub fn survival(&self, t: f64) -> f64 {
        survival_unchecked(self, t)
    }

    pub fn quantile(&self, p: f64) -> Result<f64> {
        dist_quantile(self, p)
    }

    /// Log-likelihood of right-censored data: log densities for events, log
    /// survival for censored observations.
    pub fn loglik_of(&self, sample: &SurvSample) -> f64 {
        sample
            .times
            .iter()
            .zip(&sample.events)
            .map(|(&t, &e)| if e { ln_pdf(self, t) } else { survival_unchecked(self, t).ln() })
            .sum()
    }
}

fn cdf_unchecked(m: &ParametricModel, t: f64) -> f64 {
    if t <= m.location {
        return 0.0;
    }
    match m.family {
        Family::Weibull3P => -(-((t - m.location) / m.scale).powf(m.shape)).exp_m1(),
        Family::Lognormal3P => math::phi(((t - m.location).ln() - m.scale) / m.shape),
    }
}

fn survival_unchecked(m: &ParametricModel, t: f64) -> f64 {
    if t <= m.location {
        return 1.0;
    }
    match m.family {
        Family::Weibull3P => (-((t - m.location) / m.scale).powf(m.shape)).exp(),
        Family::Lognormal3P => math::phi_upper(((t - m.location).ln() - m.scale) / m.shape),
    }
}

fn ln_pdf(m: &ParametricModel, t: f64) -> f64 {
    if t <= m.location {
        return f64::NEG_INFINITY;
    }
    let y = t - m.location;
    match m.family {
        Family::Weibull3P => {
            let z = y / m.scale;
            (m.shape / m.scale).ln() + (m.shape - 1.0) * z.ln() - z.powf(m.shape)
        }
        Family::Lognormal3P => {
            let ly = y.ln();
            let w = (ly - m.scale) / m.shape;
            -0.5 * (2.0 * std::f64::consts::PI).ln() - m.shape.ln() - ly - 0.5 * w * w
        }
    }
}

/// Evaluates the density, CDF, survival function or hazard at `t`.
///
/// CDF and survival are defined for every finite `t` (0 and 1 at or below
/// the threshold); density and hazard require `t > location`. The hazard
/// never returns NaN: in the far lognormal tail where both density and
/// survival underflow, the asymptotic Mills ratio is used.
pub fn dist_eval(model: &ParametricModel, t: f64, which: Quantity) -> Result<f64> {
    if !t.is_finite() {
        return Err(Error::domain(format!("evaluation point {t} is not finite")));
    }
    match which {
        Quantity::Cdf => Ok(cdf_unchecked(model, t)),
        Quantity::Survival => Ok(survival_unchecked(model, t)),
        Quantity::Pdf | Quantity::Hazard if t <= model.location => Err(Error::domain(format!(
            "{which:?} undefined at t={t} <= location {}",
            model.location
        ))),
        Quantity::Pdf => Ok(ln_pdf(model, t).exp()),
        Quantity::Hazard => {
            let y = t - model.location;
            match model.family {
                Family::Weibull3P => {
                    let z = y / model.scale;
                    Ok(model.shape / model.scale * z.powf(model.shape - 1.0))
                }
                Family::Lognormal3P => {
                    let w = (y.ln() - model.scale) / model.shape;
                    let s = math::phi_upper(w);
                    let mills = if s > 1e-300 {
                        math::normal_pdf(w) / s
                    } else if w > 0.0 {
                        w + 1.0 / w - 2.0 / (w * w * w)
                    } else {
                        f64::INFINITY
                    };
                    Ok(mills / (model.shape * y))
                }
            }
        }
    }
}

/// `F(b) − F(a)`.
pub fn dist_interval_prob(model: &ParametricModel, a: f64, b: f64) -> Result<Probability> {
    if !a.is_finite() || !b.is_finite() {
        return Err(Error::domain("interval bounds must be finite"));
    }
    if a > b {
        return Err(Error::domain(format!("interval [{a}, {b}] is reversed")));
    }
    // Difference of survival values keeps precision in the upper tail.
    let p = if a > model.location && survival_unchecked(model, a) < 0.5 {
        survival_unchecked(model, a) - survival_unchecked(model, b)
    } else {
        cdf_unchecked(model, b) - cdf_unchecked(model, a)
    };
    Ok(Probability::clamped(p))
}

/// Closed-form inverse CDF.
pub fn dist_quantile(model: &ParametricModel, p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::domain(format!("quantile needs p in (0,1), got {p}")));
    }
    Ok(match model.family {
        Family::Weibull3P => {
            model.location + model.scale * (-(-p).ln_1p()).powf(1.0 / model.shape)
        }
        Family::Lognormal3P => {
            model.location + (model.scale + model.shape * math::normal_quantile(p)?).exp()
        }
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    /// Number of threshold candidates on the log-spaced grid.
    pub grid_size: usize,
    /// The grid spans `[min − span·range, min − ε]`.
    pub span: f64,
    /// `ε` as a fraction of the data range.
    pub epsilon: f64,
    /// Iteration budget of the golden-section refinement.
    pub refine_budget: usize,
    pub exec: Execution,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            grid_size: 256,
            span: 20.0,
            epsilon: 1e-6,
            refine_budget: 200,
            exec: Execution::default(),
        }
    }
}

/// Minimum number of distinct observations for a threshold fit.
pub const MIN_FIT_SIZE: usize = 8;

/// Maximum-likelihood fit of a three-parameter model to complete data.
pub fn fit_mle_3p(data: &[f64], family: Family) -> Result<ParametricModel> {
    fit_mle_3p_with(&SurvSample::complete(data.to_vec())?, family, &FitOptions::default())
}

/// Maximum-likelihood fit to right-censored data.
pub fn fit_mle_3p_with(
    sample: &SurvSample,
    family: Family,
    opts: &FitOptions,
) -> Result<ParametricModel> {
    let (min, max) = sample
        .times
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &t| (lo.min(t), hi.max(t)));
    if sample.is_empty() {
        return Err(Error::SampleSize {
            required: MIN_FIT_SIZE,
            actual: 0,
        });
    }
    let range = max - min;
    if range <= 0.0 {
        return Err(Error::Degenerate("all observations are equal".into()));
    }
    let mut distinct = sample.times.clone();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() < MIN_FIT_SIZE {
        return Err(Error::SampleSize {
            required: MIN_FIT_SIZE,
            actual: distinct.len(),
        });
    }
    if sample.n_events() < 2 {
        return Err(Error::SampleSize {
            required: 2,
            actual: sample.n_events(),
        });
    }
    if opts.grid_size < 3 {
        return Err(Error::domain("profile grid needs at least 3 candidates"));
    }

    let eps = opts.epsilon * range;
    let far = opts.span * range;
    let ln_eps = eps.ln();
    let ln_span = (far / eps).ln();
    let m = opts.grid_size;
    let offset_at = |j: usize| (ln_eps + ln_span * j as f64 / (m - 1) as f64).exp();

    let profile = Profile::new(sample, family);
    let grid: Vec<Option<ProfilePoint>> =
        par::map_indices(opts.exec, m, |j| profile.at(min - offset_at(j)));

    let valid: Vec<(usize, ProfilePoint)> = grid
        .iter()
        .enumerate()
        .filter_map(|(j, p)| p.map(|p| (j, p)))
        .collect();
    if valid.is_empty() {
        return Err(Error::Convergence {
            message: "conditional fit failed at every threshold candidate".into(),
            best: vec![],
        });
    }
    let better = |a: &ProfilePoint, b: &ProfilePoint| {
        a.loglik > b.loglik || (a.loglik == b.loglik && a.location < b.location)
    };
    let mut best_k = 0;
    for k in 1..valid.len() {
        if better(&valid[k].1, &valid[best_k].1) {
            best_k = k;
        }
    }

    // The likelihood is unbounded as the threshold approaches the smallest
    // observation (lognormal always, Weibull when shape < 1). A maximum on
    // that boundary is replaced by the best interior local maximum.
    if valid[best_k].0 == 0 && boundary_is_spurious(family, &valid[best_k].1) {
        let interior = (1..valid.len().saturating_sub(1)).filter(|&k| {
            valid[k].1.loglik >= valid[k - 1].1.loglik && valid[k].1.loglik >= valid[k + 1].1.loglik
        });
        let mut chosen: Option<usize> = None;
        for k in interior {
            if chosen.is_none_or(|c| better(&valid[k].1, &valid[c].1)) {
                chosen = Some(k);
            }
        }
        match chosen {
            Some(k) => best_k = k,
            None => {
                let b = valid[best_k].1;
                return Err(Error::Convergence {
                    message: "profile likelihood maximal only at the support boundary".into(),
                    best: vec![b.shape, b.scale, b.location],
                });
            }
        }
    }

    let (grid_idx, start) = valid[best_k];
    let lo_u = offset_at(grid_idx.saturating_sub(1)).ln();
    let hi_u = offset_at((grid_idx + 1).min(m - 1)).ln();
    let (u, _, converged) = optim::golden_section_max(
        |u| profile.at(min - u.exp()).map_or(f64::NEG_INFINITY, |p| p.loglik),
        lo_u,
        hi_u,
        1e-10,
        opts.refine_budget,
    );
    let candidate = profile.at(min - u.exp());
    let refined = match candidate {
        Some(p) if p.loglik >= start.loglik => p,
        _ => start,
    };
    if !converged {
        return Err(Error::Convergence {
            message: format!("threshold refinement exceeded {} iterations", opts.refine_budget),
            best: vec![refined.shape, refined.scale, refined.location],
        });
    }

    Ok(ParametricModel {
        family,
        shape: refined.shape,
        scale: refined.scale,
        location: refined.location,
        loglik: Some(refined.loglik),
        n: sample.len(),
        profile: Some(ProfileTrace {
            grid: valid.iter().map(|(_, p)| *p).collect(),
            selected: best_k,
            refined,
            at_far_edge: grid_idx == m - 1,
        }),
    })
}

fn boundary_is_spurious(family: Family, p: &ProfilePoint) -> bool {
    match family {
        Family::Weibull3P => p.shape < 1.0,
        Family::Lognormal3P => true,
    }
}

/// Conditional two-parameter solver given a threshold.
struct Profile<'a> {
    sample: &'a SurvSample,
    family: Family,
    n_events: usize,
}

impl<'a> Profile<'a> {
    fn new(sample: &'a SurvSample, family: Family) -> Self {
        Profile {
            sample,
            family,
            n_events: sample.n_events(),
        }
    }

    fn at(&self, location: f64) -> Option<ProfilePoint> {
        let ly: Vec<f64> = self.sample.times.iter().map(|t| (t - location).ln()).collect();
        if ly.iter().any(|v| !v.is_finite()) {
            return None;
        }
        let fit = match self.family {
            Family::Weibull3P => weibull_given_threshold(&ly, &self.sample.events, self.n_events),
            Family::Lognormal3P => lognormal_given_threshold(&ly, &self.sample.events, self.n_events),
        }?;
        let (loglik, shape, scale) = fit;
        loglik.is_finite().then_some(ProfilePoint {
            location,
            loglik,
            shape,
            scale,
        })
    }
}

/// Weibull MLE of (shape, scale) for `y = t − τ`, given `ly = ln y`.
///
/// The shape solves `Σ yᵏ ln y / Σ yᵏ − 1/k − mean_events(ln y) = 0`, which is
/// increasing in `k`; the scale then follows in closed form. Powers are
/// computed relative to `max ln y` so large shapes cannot overflow.
fn weibull_given_threshold(ly: &[f64], events: &[bool], r: usize) -> Option<(f64, f64, f64)> {
    let r_f = r as f64;
    let ly_max = ly.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum_ev: f64 = ly.iter().zip(events).filter(|(_, e)| **e).map(|(v, _)| v).sum();
    let mean_ev = sum_ev / r_f;

    // (h, h', ln Σ w) at shape k
    let eval = |k: f64| {
        let (mut s0, mut s1, mut s2) = (0.0, 0.0, 0.0);
        for &v in ly {
            let w = (k * (v - ly_max)).exp();
            s0 += w;
            s1 += w * v;
            s2 += w * v * v;
        }
        let m1 = s1 / s0;
        let h = m1 - 1.0 / k - mean_ev;
        let dh = (s2 / s0 - m1 * m1).max(0.0) + 1.0 / (k * k);
        (h, dh, s0.ln())
    };

    let mut lo = 1e-3;
    let mut hi = 1.0;
    while eval(hi).0 < 0.0 {
        lo = hi;
        hi *= 4.0;
        if hi > 1e8 {
            return None;
        }
    }
    if eval(lo).0 > 0.0 {
        return None;
    }
    let mut k = (lo * hi).sqrt();
    let mut found = false;
    for _ in 0..200 {
        let (h, dh, _) = eval(k);
        if h == 0.0 {
            found = true;
            break;
        }
        if h < 0.0 {
            lo = k;
        } else {
            hi = k;
        }
        let mut next = k - h / dh;
        if !(next > lo && next < hi) {
            next = (lo * hi).sqrt();
        }
        if (next - k).abs() <= 1e-13 * k || hi - lo <= 1e-13 * k {
            k = next;
            found = true;
            break;
        }
        k = next;
    }
    if !found {
        return None;
    }
    let (_, _, ln_s0) = eval(k);
    // k·ln(scale) = k·ly_max + ln Σ w − ln r
    let k_ln_scale = k * ly_max + ln_s0 - r_f.ln();
    let scale = (k_ln_scale / k).exp();
    let loglik = r_f * k.ln() - r_f * k_ln_scale + (k - 1.0) * sum_ev - r_f;
    Some((loglik, k, scale))
}

/// Lognormal MLE of (σ, μ) given `ly = ln(t − γ)`: closed form for complete
/// data, Nelder-Mead on `(μ, ln σ)` when some observations are censored.
fn lognormal_given_threshold(ly: &[f64], events: &[bool], r: usize) -> Option<(f64, f64, f64)> {
    let ln_2pi = (2.0 * std::f64::consts::PI).ln();
    let ev = || ly.iter().zip(events).filter(|(_, e)| **e).map(|(v, _)| *v);
    let r_f = r as f64;
    let mu0 = ev().sum::<f64>() / r_f;
    let var0 = ev().map(|v| (v - mu0).powi(2)).sum::<f64>() / r_f;
    if !(var0 > 0.0) {
        return None;
    }
    let sigma0 = var0.sqrt();
    if r == ly.len() {
        let sum_ly: f64 = ly.iter().sum();
        let loglik = -0.5 * r_f * ln_2pi - r_f * sigma0.ln() - sum_ly - 0.5 * r_f;
        return Some((loglik, sigma0, mu0));
    }
    let negll = |p: &[f64]| {
        let (mu, sigma) = (p[0], p[1].exp());
        let mut ll = 0.0;
        for (&v, &e) in ly.iter().zip(events) {
            let w = (v - mu) / sigma;
            ll += if e {
                -0.5 * ln_2pi - sigma.ln() - v - 0.5 * w * w
            } else {
                math::phi_upper(w).ln()
            };
        }
        -ll
    };
    let (p, f, _) = optim::nelder_mead(negll, &[mu0, sigma0.ln()], &[0.1 * sigma0, 0.1], 1e-13, 2000);
    Some((-f, p[1].exp(), p[0]))
}
