//! Kaplan-Meier estimation and two-group rank tests.

use serde::{Deserialize, Serialize};

use crate::dataset::Cohort;
use crate::error::{Error, Result};
use crate::math::{self, Probability};
use crate::sample::SurvSample;

/// One row per distinct event time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KmRow {
    pub time: f64,
    pub n_risk: usize,
    pub n_event: usize,
    pub survival: Probability,
    /// Greenwood standard error of the survival estimate.
    pub std_err: f64,
    pub ci_lower: Probability,
    pub ci_upper: Probability,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KmCurve {
    pub rows: Vec<KmRow>,
    pub n_start: usize,
    pub conf_level: f64,
}

impl KmCurve {
    /// Right-continuous step value `S(t)`.
    pub fn survival_at(&self, t: f64) -> f64 {
        self.rows
            .iter()
            .take_while(|r| r.time <= t)
            .last()
            .map_or(1.0, |r| r.survival.value())
    }

    /// Left limit `S(t-)`.
    pub fn survival_before(&self, t: f64) -> f64 {
        self.rows
            .iter()
            .take_while(|r| r.time < t)
            .last()
            .map_or(1.0, |r| r.survival.value())
    }

    /// First event time at which the estimate is at or below one half.
    pub fn median(&self) -> Option<f64> {
        km_median(self)
    }
}

/// Product-limit estimate with Greenwood errors and log-scale intervals.
///
/// Censored subjects stay in the risk set at their own time. Interval bounds
/// are `S·exp(±z·σ)` with `σ² = Σ d/(n(n−d))`, clipped to `[0, 1]`. Once the
/// estimate reaches zero the error and both bounds are reported as zero.
pub fn km_estimate(sample: &SurvSample, conf_level: f64) -> Result<KmCurve> {
    if sample.is_empty() {
        return Err(Error::domain("Kaplan-Meier of an empty sample"));
    }
    if !(conf_level > 0.0 && conf_level < 1.0) {
        return Err(Error::domain(format!("confidence level {conf_level} not in (0,1)")));
    }
    if let Some(t) = sample.times.iter().find(|t| **t <= 0.0) {
        return Err(Error::domain(format!("nonpositive survival time {t}")));
    }
    let z = math::normal_quantile(0.5 + conf_level / 2.0)?;

    let mut order: Vec<usize> = (0..sample.len()).collect();
    order.sort_by(|&a, &b| sample.times[a].total_cmp(&sample.times[b]));

    let mut rows = Vec::new();
    let mut at_risk = sample.len();
    let mut surv = 1.0;
    let mut greenwood = 0.0;
    let mut i = 0;
    while i < order.len() {
        let t = sample.times[order[i]];
        let mut j = i;
        let mut d = 0;
        while j < order.len() && sample.times[order[j]] == t {
            if sample.events[order[j]] {
                d += 1;
            }
            j += 1;
        }
        if d > 0 {
            let n = at_risk as f64;
            let df = d as f64;
            surv *= 1.0 - df / n;
            let (std_err, lo, hi) = if d < at_risk {
                greenwood += df / (n * (n - df));
                let sigma = greenwood.sqrt();
                (
                    surv * sigma,
                    surv * (-z * sigma).exp(),
                    (surv * (z * sigma).exp()).min(1.0),
                )
            } else {
                surv = 0.0;
                (0.0, 0.0, 0.0)
            };
            rows.push(KmRow {
                time: t,
                n_risk: at_risk,
                n_event: d,
                survival: Probability::clamped(surv),
                std_err,
                ci_lower: Probability::clamped(lo),
                ci_upper: Probability::clamped(hi),
            });
        }
        at_risk -= j - i;
        i = j;
    }
    Ok(KmCurve {
        rows,
        n_start: sample.len(),
        conf_level,
    })
}

pub fn km_fit(cohort: &Cohort, conf_level: f64) -> Result<KmCurve> {
    if cohort.is_empty() {
        return Err(Error::EmptyCohort);
    }
    km_estimate(&SurvSample::from(cohort), conf_level)
}

pub fn km_median(curve: &KmCurve) -> Option<f64> {
    curve
        .rows
        .iter()
        .find(|r| r.survival.value() <= 0.5)
        .map(|r| r.time)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RankMethod {
    LogRank,
    WilcoxonRankSum,
    GehanWilcoxon,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankTestResult {
    pub method: RankMethod,
    /// Chi-square statistic for `LogRank`/`GehanWilcoxon`; the Mann-Whitney
    /// U of the first group for `WilcoxonRankSum`.
    pub statistic: f64,
    /// Degrees of freedom of the chi-square reference; 0 for Mann-Whitney.
    pub df: u32,
    pub p_value: Probability,
    /// Whether the p-value comes from exact enumeration.
    pub exact: bool,
}

/// Weighted two-sample log-rank family: weight 1 gives the log-rank test,
/// weight `n` (pooled number at risk) the Gehan-Breslow generalized Wilcoxon.
fn weighted_logrank(a: &SurvSample, b: &SurvSample, gehan: bool) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::UndefinedTest("both groups must be nonempty".into()));
    }
    let mut times: Vec<f64> = a.event_times();
    times.extend(b.event_times());
    times.sort_by(f64::total_cmp);
    times.dedup();
    if times.is_empty() {
        return Err(Error::UndefinedTest("no events in either group".into()));
    }
    let mut num = 0.0;
    let mut var = 0.0;
    for &t in &times {
        let (na, da) = a.risk_and_events(t);
        let (nb, db) = b.risk_and_events(t);
        let (na, nb, da, db) = (na as f64, nb as f64, da as f64, db as f64);
        let n = na + nb;
        let d = da + db;
        let w = if gehan { n } else { 1.0 };
        num += w * (da - d * na / n);
        if n > 1.0 {
            var += w * w * d * (n - d) * na * nb / (n * n * (n - 1.0));
        }
    }
    if var <= 0.0 {
        return Err(Error::UndefinedTest("zero variance of the rank statistic".into()));
    }
    Ok(num * num / var)
}

pub fn logrank(a: &SurvSample, b: &SurvSample) -> Result<RankTestResult> {
    let stat = weighted_logrank(a, b, false)?;
    Ok(RankTestResult {
        method: RankMethod::LogRank,
        statistic: stat,
        df: 1,
        p_value: math::chisq_sf(stat, 1)?,
        exact: false,
    })
}

pub fn logrank_test(group_a: &Cohort, group_b: &Cohort) -> Result<RankTestResult> {
    logrank(&group_a.into(), &group_b.into())
}

pub fn gehan(a: &SurvSample, b: &SurvSample) -> Result<RankTestResult> {
    let stat = weighted_logrank(a, b, true)?;
    Ok(RankTestResult {
        method: RankMethod::GehanWilcoxon,
        statistic: stat,
        df: 1,
        p_value: math::chisq_sf(stat, 1)?,
        exact: false,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum WilcoxonVariant {
    /// Rank-sum test on complete data.
    #[default]
    MannWhitney,
    /// Censoring-aware generalized Wilcoxon.
    Gehan,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum MannWhitneyMode {
    /// Exact below `EXACT_LIMIT` pooled observations, normal approximation above.
    #[default]
    Auto,
    Exact,
    Normal,
}

/// Largest pooled sample size for which `Auto` enumerates exactly.
pub const EXACT_LIMIT: usize = 20;

/// Two-sided Mann-Whitney test of `a` against `b`.
///
/// The exact mode enumerates the null distribution of the rank sum over all
/// `C(n, n_a)` assignments of the (mid)ranks, counting assignments at least as
/// far from the null mean as the observed one. The normal mode applies tie
/// and continuity corrections.
pub fn mann_whitney(a: &[f64], b: &[f64], mode: MannWhitneyMode) -> Result<RankTestResult> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::UndefinedTest("both groups must be nonempty".into()));
    }
    let mut pooled = a.to_vec();
    pooled.extend_from_slice(b);
    let ranks = math::midranks(&pooled)?;
    let na = a.len();
    let nb = b.len();
    let n = na + nb;
    let w_a: f64 = ranks[..na].iter().sum();
    let u_a = w_a - (na * (na + 1)) as f64 / 2.0;

    let exact = match mode {
        MannWhitneyMode::Exact => true,
        MannWhitneyMode::Normal => false,
        MannWhitneyMode::Auto => n <= EXACT_LIMIT,
    };
    let p = if exact {
        exact_rank_sum_p(&ranks, na)
    } else {
        let mean = (na * nb) as f64 / 2.0;
        let nf = n as f64;
        let ties: f64 = math::tie_groups(&pooled)
            .iter()
            .map(|&t| {
                let t = t as f64;
                t * t * t - t
            })
            .sum();
        let var = (na * nb) as f64 / 12.0 * ((nf + 1.0) - ties / (nf * (nf - 1.0)));
        if var <= 0.0 {
            1.0
        } else {
            let z = ((u_a - mean).abs() - 0.5).max(0.0) / var.sqrt();
            (2.0 * math::phi_upper(z)).min(1.0)
        }
    };
    Ok(RankTestResult {
        method: RankMethod::WilcoxonRankSum,
        statistic: u_a,
        df: 0,
        p_value: Probability::clamped(p),
        exact,
    })
}

/// Dynamic program over doubled ranks (integers even with midranks).
fn exact_rank_sum_p(ranks: &[f64], na: usize) -> f64 {
    let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
    let n = ranks.len();
    let max_sum: usize = doubled.iter().sum();
    // counts[k][s]: number of k-subsets with doubled-rank sum s
    let mut counts = vec![vec![0.0f64; max_sum + 1]; na + 1];
    counts[0][0] = 1.0;
    for &r in &doubled {
        for k in (1..=na).rev() {
            let (lo, hi) = counts.split_at_mut(k);
            let prev = &lo[k - 1];
            let cur = &mut hi[0];
            for s in (r..=max_sum).rev() {
                cur[s] += prev[s - r];
            }
        }
    }
    let observed: usize = doubled[..na].iter().sum();
    let center = (na * (n + 1)) as i64; // twice the null mean
    let dev_obs = (observed as i64 - center).abs();
    let total: f64 = counts[na].iter().sum();
    let extreme: f64 = counts[na]
        .iter()
        .enumerate()
        .filter(|(s, _)| (*s as i64 - center).abs() >= dev_obs)
        .map(|(_, c)| c)
        .sum();
    (extreme / total).min(1.0)
}

/// Wilcoxon-type comparison of survival times between two cohorts.
pub fn wilcoxon_test(
    group_a: &Cohort,
    group_b: &Cohort,
    variant: WilcoxonVariant,
) -> Result<RankTestResult> {
    let a = SurvSample::from(group_a);
    let b = SurvSample::from(group_b);
    match variant {
        WilcoxonVariant::MannWhitney => {
            if !a.is_complete() || !b.is_complete() {
                return Err(Error::Variant(
                    "Mann-Whitney requires uncensored data; use the Gehan variant".into(),
                ));
            }
            mann_whitney(&a.times, &b.times, MannWhitneyMode::Auto)
        }
        WilcoxonVariant::Gehan => gehan(&a, &b),
    }
}
