//! Goodness-of-fit tests of a fitted parametric model against complete data.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{anderson_darling_sf, chisq_sf, kolmogorov_sf, Probability};
use crate::par::{self, Execution};
use crate::parametric::{fit_mle_3p_with, Family, FitOptions, ParametricModel, N_PARAMS};
use crate::sample::SurvSample;
use crate::simulate::{replicate_rng, sample_model};

pub const MIN_GOF_SIZE: usize = 5;
/// Expected count per bin required by the chi-square test.
pub const MIN_EXPECTED: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GofMethod {
    Ks,
    Ad,
    #[serde(rename = "chisq")]
    ChiSquare,
}

impl GofMethod {
    pub const ALL: [GofMethod; 3] = [GofMethod::Ks, GofMethod::Ad, GofMethod::ChiSquare];
}

impl std::str::FromStr for GofMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ks" => Ok(GofMethod::Ks),
            "ad" => Ok(GofMethod::Ad),
            "chisq" | "chisquare" | "chi-square" => Ok(GofMethod::ChiSquare),
            other => Err(Error::domain(format!("unknown GOF method `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PMode {
    #[default]
    Asymptotic,
    Bootstrap,
}

impl std::str::FromStr for PMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "asymptotic" => Ok(PMode::Asymptotic),
            "bootstrap" => Ok(PMode::Bootstrap),
            other => Err(Error::domain(format!("unknown p-value mode `{other}`"))),
        }
    }
}

/// Parametric bootstrap: resample from the fitted model, refit, recompute.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BootstrapOptions {
    pub replicates: usize,
    pub seed: u64,
    pub exec: Execution,
    /// Options for the refits. The grid is coarser than for the primary fit;
    /// golden-section refinement recovers the optimum.
    pub fit: FitOptions,
}

impl Default for BootstrapOptions {
    fn default() -> Self {
        BootstrapOptions {
            replicates: 1000,
            seed: 0,
            exec: Execution::default(),
            fit: FitOptions {
                grid_size: 64,
                exec: Execution::Sequential,
                ..FitOptions::default()
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum PValue {
    Asymptotic,
    Bootstrap(BootstrapOptions),
}

impl PValue {
    pub fn mode(&self) -> PMode {
        match self {
            PValue::Asymptotic => PMode::Asymptotic,
            PValue::Bootstrap(_) => PMode::Bootstrap,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GofReport {
    pub method: GofMethod,
    pub statistic: f64,
    pub p_value: Probability,
    pub p_mode: PMode,
    pub n: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bins: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub df: Option<usize>,
    /// Bootstrap replicates whose refit succeeded and entered the p-value.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub replicates: Option<usize>,
}

fn sorted_checked(data: &[f64], model: &ParametricModel) -> Result<Vec<f64>> {
    if data.len() < MIN_GOF_SIZE {
        return Err(Error::SampleSize {
            required: MIN_GOF_SIZE,
            actual: data.len(),
        });
    }
    sorted_checked_any(data, model)
}

/// `D = max_i max(i/n − F(x_(i)), F(x_(i)) − (i−1)/n)` over sorted data.
pub fn ks_statistic(data: &[f64], model: &ParametricModel) -> Result<f64> {
    ks_sorted(&sorted_checked_any(data, model)?, model)
}

/// Support check without the minimum sample size, for the statistic alone.
fn sorted_checked_any(data: &[f64], model: &ParametricModel) -> Result<Vec<f64>> {
    if data.is_empty() {
        return Err(Error::SampleSize {
            required: 1,
            actual: 0,
        });
    }
    if data.iter().any(|x| !x.is_finite()) {
        return Err(Error::domain("non-finite observation"));
    }
    let mut xs = data.to_vec();
    xs.sort_by(f64::total_cmp);
    if xs[0] <= model.location {
        return Err(Error::Support(format!(
            "observation {} at or below model location {}",
            xs[0], model.location
        )));
    }
    Ok(xs)
}

fn ks_sorted(xs: &[f64], model: &ParametricModel) -> Result<f64> {
    let n = xs.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in xs.iter().enumerate() {
        let f = model.cdf(x);
        d = d.max((i + 1) as f64 / n - f).max(f - i as f64 / n);
    }
    Ok(d)
}

/// `A² = −n − (1/n) Σ (2i−1)[ln F(x_(i)) + ln(1 − F(x_(n+1−i)))]`.
pub fn ad_statistic(data: &[f64], model: &ParametricModel) -> Result<f64> {
    ad_sorted(&sorted_checked_any(data, model)?, model)
}

fn ad_sorted(xs: &[f64], model: &ParametricModel) -> Result<f64> {
    let n = xs.len();
    let mut ln_f = Vec::with_capacity(n);
    let mut ln_s = Vec::with_capacity(n);
    for &x in xs {
        let f = model.cdf(x);
        let s = model.survival(x);
        if !(f > 0.0 && s > 0.0) {
            return Err(Error::Support(format!(
                "model CDF is {f} at {x}; Anderson-Darling needs it strictly inside (0, 1)"
            )));
        }
        ln_f.push(f.ln());
        ln_s.push(s.ln());
    }
    let mut sum = 0.0;
    for i in 0..n {
        sum += (2 * i + 1) as f64 * (ln_f[i] + ln_s[n - 1 - i]);
    }
    Ok(-(n as f64) - sum / n as f64)
}

/// Default bin count `max(4, ⌈1 + log₂ n⌉)`.
pub fn auto_bins(n: usize) -> usize {
    let k = (1.0 + (n.max(1) as f64).log2()).ceil() as usize;
    k.max(4)
}

/// Counts per equal-probability bin of `model`.
pub fn bin_counts(data: &[f64], model: &ParametricModel, k: usize) -> Result<Vec<usize>> {
    if k < 2 {
        return Err(Error::Binning(format!("{k} bins")));
    }
    let edges: Vec<f64> = (1..k)
        .map(|j| model.quantile(j as f64 / k as f64))
        .collect::<Result<_>>()?;
    let mut counts = vec![0usize; k];
    for &x in data {
        counts[edges.partition_point(|&e| e < x)] += 1;
    }
    Ok(counts)
}

/// `Σ (O_j − E)² / E` with equal expected counts `E = n/k`.
pub fn chisq_from_counts(counts: &[usize]) -> Result<f64> {
    let k = counts.len();
    let n: usize = counts.iter().sum();
    if k == 0 {
        return Err(Error::Binning("no bins".into()));
    }
    let e = n as f64 / k as f64;
    if e < 1.0 {
        return Err(Error::Binning(format!("expected count {e:.3} per bin is below 1")));
    }
    // Σ(O − n/k)² / (n/k) = Σ(kO − n)² / (kn): exact in integers, one rounding at the end
    let num: u128 = counts
        .iter()
        .map(|&o| {
            let d = (k as i128 * o as i128 - n as i128).unsigned_abs();
            d * d
        })
        .sum();
    Ok(num as f64 / (k as f64 * n as f64))
}

fn fitted_params(model: &ParametricModel) -> usize {
    if model.loglik.is_some() {
        N_PARAMS
    } else {
        0
    }
}

/// Bin count and degrees of freedom for a chi-square test of `n` points.
fn chisq_layout(n: usize, model: &ParametricModel, k_bins: Option<usize>) -> Result<(usize, usize)> {
    let k = k_bins.unwrap_or_else(|| auto_bins(n));
    if (n as f64) < MIN_EXPECTED * k as f64 {
        return Err(Error::Binning(format!(
            "{n} observations cannot fill {k} bins with at least {MIN_EXPECTED} expected each"
        )));
    }
    let fitted = fitted_params(model);
    if k <= 1 + fitted {
        return Err(Error::Binning(format!(
            "{k} bins leave no degrees of freedom after {fitted} fitted parameters"
        )));
    }
    Ok((k, k - 1 - fitted))
}

fn statistic_of(method: GofMethod, xs: &[f64], model: &ParametricModel, k: usize) -> Result<f64> {
    match method {
        GofMethod::Ks => ks_sorted(xs, model),
        GofMethod::Ad => ad_sorted(xs, model),
        GofMethod::ChiSquare => chisq_from_counts(&bin_counts(xs, model, k)?),
    }
}

fn asymptotic_p(method: GofMethod, stat: f64, n: usize, df: usize) -> Result<f64> {
    let rn = (n as f64).sqrt();
    Ok(match method {
        // Stephens' finite-n scaling of the Kolmogorov limit.
        GofMethod::Ks => kolmogorov_sf((rn + 0.12 + 0.11 / rn) * stat),
        GofMethod::Ad => anderson_darling_sf(stat, n),
        GofMethod::ChiSquare => chisq_sf(stat, df as u32)?.value(),
    })
}

/// Bootstrap statistics for `methods` with one refit per replicate.
/// Replicates whose refit fails are dropped.
fn bootstrap_statistics(
    model: &ParametricModel,
    n: usize,
    methods: &[GofMethod],
    k: usize,
    opts: &BootstrapOptions,
) -> Result<Vec<Vec<f64>>> {
    if opts.replicates == 0 {
        return Err(Error::domain("bootstrap needs at least one replicate"));
    }
    let family: Family = model.family;
    let template = model.parameters_only();
    let rows: Vec<Option<Vec<f64>>> = par::map_indices(opts.exec, opts.replicates, |b| {
        let mut rng = replicate_rng(opts.seed, b as u64);
        let mut xs = sample_model(&template, n, &mut rng).ok()?;
        let refit = fit_mle_3p_with(&SurvSample::complete(xs.clone()).ok()?, family, &opts.fit).ok()?;
        xs.sort_by(f64::total_cmp);
        if xs[0] <= refit.location {
            return None;
        }
        methods.iter().map(|&m| statistic_of(m, &xs, &refit, k).ok()).collect()
    });
    let ok: Vec<Vec<f64>> = rows.into_iter().flatten().collect();
    if ok.len() * 2 < opts.replicates {
        return Err(Error::Convergence {
            message: format!(
                "only {} of {} bootstrap refits succeeded",
                ok.len(),
                opts.replicates
            ),
            best: vec![],
        });
    }
    Ok(ok)
}

/// Runs `methods` against `data`, sharing bootstrap refits between them.
pub fn gof_tests(
    data: &[f64],
    model: &ParametricModel,
    methods: &[GofMethod],
    pvalue: &PValue,
    k_bins: Option<usize>,
) -> Result<Vec<GofReport>> {
    let xs = sorted_checked(data, model)?;
    let n = xs.len();
    let chisq = if methods.contains(&GofMethod::ChiSquare) {
        Some(chisq_layout(n, model, k_bins)?)
    } else {
        None
    };
    let (k, df) = chisq.unwrap_or((0, 0));
    let stats: Vec<f64> = methods
        .iter()
        .map(|&m| statistic_of(m, &xs, model, k))
        .collect::<Result<_>>()?;
    let boot = match pvalue {
        PValue::Asymptotic => None,
        PValue::Bootstrap(opts) => Some(bootstrap_statistics(model, n, methods, k, opts)?),
    };
    methods
        .iter()
        .enumerate()
        .map(|(j, &method)| {
            let stat = stats[j];
            let (p, replicates) = match &boot {
                None => (asymptotic_p(method, stat, n, df)?, None),
                Some(rows) => {
                    let exceed = rows.iter().filter(|r| r[j] >= stat).count();
                    ((1 + exceed) as f64 / (rows.len() + 1) as f64, Some(rows.len()))
                }
            };
            let is_chisq = method == GofMethod::ChiSquare;
            Ok(GofReport {
                method,
                statistic: stat,
                p_value: Probability::new(p.clamp(0.0, 1.0))?,
                p_mode: pvalue.mode(),
                n,
                bins: is_chisq.then_some(k),
                df: is_chisq.then_some(df),
                replicates,
            })
        })
        .collect()
}

pub fn ks_test(data: &[f64], model: &ParametricModel, pvalue: &PValue) -> Result<GofReport> {
    Ok(gof_tests(data, model, &[GofMethod::Ks], pvalue, None)?.remove(0))
}

pub fn ad_test(data: &[f64], model: &ParametricModel, pvalue: &PValue) -> Result<GofReport> {
    Ok(gof_tests(data, model, &[GofMethod::Ad], pvalue, None)?.remove(0))
}

/// Chi-square test on `k_bins` equal-probability bins (auto when `None`);
/// the p-value is from the chi-square distribution with
/// `k − 1 − fitted parameters` degrees of freedom.
pub fn chisq_gof_test(data: &[f64], model: &ParametricModel, k_bins: Option<usize>) -> Result<GofReport> {
    Ok(gof_tests(data, model, &[GofMethod::ChiSquare], &PValue::Asymptotic, k_bins)?.remove(0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilyAssessment {
    pub model: ParametricModel,
    pub reports: Vec<GofReport>,
}

/// Fits both families and runs all three tests on each, ranked by the
/// Anderson–Darling statistic (smallest first). Families whose fit or tests
/// fail are omitted; an error is returned only if both fail.
pub fn select_family(data: &[f64], pvalue: &PValue) -> Result<Vec<FamilyAssessment>> {
    let mut out = Vec::new();
    let mut last_err = None;
    for family in [Family::Weibull3P, Family::Lognormal3P] {
        let assessed = crate::parametric::fit_mle_3p(data, family).and_then(|model| {
            let reports = gof_tests(data, &model, &GofMethod::ALL, pvalue, None)?;
            Ok(FamilyAssessment { model, reports })
        });
        match assessed {
            Ok(a) => out.push(a),
            Err(e) => last_err = Some(e),
        }
    }
    if out.is_empty() {
        return Err(last_err.unwrap_or(Error::EmptyCohort));
    }
    let ad = |a: &FamilyAssessment| {
        a.reports
            .iter()
            .find(|r| r.method == GofMethod::Ad)
            .map_or(f64::INFINITY, |r| r.statistic)
    };
    out.sort_by(|a, b| ad(a).total_cmp(&ad(b)));
    Ok(out)
}
