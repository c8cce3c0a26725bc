//! End-to-end analysis runs: configuration, the JSON report and its plots.

mod config;
mod plots;
mod svg;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use config::{
    CoxConfig, DiagnosticsConfig, GofConfig, KmConfig, ParametricConfig, RankTestConfig, RunConfig,
    DEFAULT_FORMULA,
};
pub use plots::{report_plots, Plot};
pub use svg::{
    frame_for, render_panels, render_survival_svg, Axes, Curve, CurveKind, Frame, Margins, Panel,
    SMOOTH_POINTS, VIEW_HEIGHT, VIEW_WIDTH,
};

use crate::coxph::{
    cox_fit, global_tests, hazard_ratios, stepwise_backward, CoxModel, GlobalTests, HazardRatio, Removal,
};
use crate::dataset::{parse_cohort_csv, summarize, Cohort, CohortSummary, CovariateValue, LoadedCohort};
use crate::diagnostics::{
    coxsnell_residuals, deviance_outliers, deviance_residuals, martingale_residuals, martingale_trends,
    ph_test, schoenfeld_residuals, CoxSnellCheck, MartingaleTrend, PhTestReport, ResidualSet,
};
use crate::error::{Error, ErrorKind, Result};
use crate::gof::{gof_tests, BootstrapOptions, GofMethod, GofReport, PMode, PValue};
use crate::nonparam::{km_fit, logrank_test, wilcoxon_test, KmCurve, RankTestResult, WilcoxonVariant};
use crate::parametric::{fit_mle_3p_with, Family, FitOptions, ParametricModel};
use crate::sample::SurvSample;

pub const SCHEMA_VERSION: u32 = 1;
pub const TOOL_NAME: &str = "survivalkit";

/// A captured error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub kind: ErrorKind,
    pub message: String,
}

impl From<&Error> for Failure {
    fn from(e: &Error) -> Self {
        Failure {
            kind: e.kind(),
            message: e.to_string(),
        }
    }
}

/// State of one section or sub-result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", content = "value", rename_all = "lowercase")]
pub enum Outcome<T> {
    Ok(T),
    Skipped(String),
    Failed(Failure),
}

impl<T> Outcome<T> {
    pub fn ok(&self) -> Option<&T> {
        match self {
            Outcome::Ok(v) => Some(v),
            _ => None,
        }
    }

    pub fn is_ok(&self) -> bool {
        matches!(self, Outcome::Ok(_))
    }
}

/// A labelled outcome: one group, one test or one family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Entry<T> {
    pub label: String,
    pub outcome: Outcome<T>,
}

/// Where a failure happened, for the report-level index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureRecord {
    pub section: String,
    pub label: String,
    pub error: Failure,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool: String,
    pub version: String,
    pub seed: u64,
    /// SHA-256 of the canonical JSON configuration.
    pub config_hash: String,
    /// SHA-256 of the input file, when the cohort was read from disk.
    pub input_hash: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupInfo {
    pub label: String,
    pub n: usize,
    pub n_events: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KmGroup {
    pub curve: KmCurve,
    pub median: Option<f64>,
    /// Largest observed time, censored or not.
    pub max_time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParametricGroup {
    pub n: usize,
    /// Uncensored observations; the fits use the censored ones too.
    pub n_events: usize,
    pub fits: Vec<Entry<ParametricModel>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodFailure {
    pub method: GofMethod,
    pub error: Failure,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilyGof {
    pub family: Family,
    pub reports: Vec<GofReport>,
    pub failures: Vec<MethodFailure>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GofGroup {
    pub p_mode: PMode,
    /// Families ordered by Anderson–Darling statistic, best first.
    pub families: Vec<FamilyGof>,
    pub selected: Option<Family>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoxGroup {
    /// Formula as requested, before any stepwise removal.
    pub formula: String,
    pub model: CoxModel,
    pub hazard_ratios: Vec<HazardRatio>,
    pub global_tests: Outcome<GlobalTests>,
    pub stepwise: Option<Vec<Removal>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnSummary {
    pub column: String,
    pub sum: f64,
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualReport {
    pub summary: Vec<ColumnSummary>,
    pub residuals: ResidualSet,
}

impl ResidualReport {
    fn new(residuals: ResidualSet) -> Self {
        let summary = residuals
            .columns
            .iter()
            .enumerate()
            .map(|(j, name)| {
                let col = residuals.column(j);
                ColumnSummary {
                    column: name.clone(),
                    sum: col.iter().sum(),
                    min: col.iter().copied().fold(f64::INFINITY, f64::min),
                    max: col.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                }
            })
            .collect();
        ResidualReport { summary, residuals }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DevianceReport {
    pub threshold: f64,
    pub outliers: Vec<String>,
    pub residuals: ResidualReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoxSnellReport {
    pub check: CoxSnellCheck,
    pub residuals: ResidualReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsGroup {
    pub ph_test: Outcome<PhTestReport>,
    pub scaled_schoenfeld: Outcome<ResidualReport>,
    pub martingale: Outcome<ResidualReport>,
    pub martingale_trends: Outcome<Vec<MartingaleTrend>>,
    pub deviance: Outcome<DevianceReport>,
    pub cox_snell: Outcome<CoxSnellReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub schema_version: u32,
    pub provenance: Provenance,
    pub config: RunConfig,
    pub summary: CohortSummary,
    pub group_by: String,
    pub groups: Vec<GroupInfo>,
    /// Subjects without a value for the grouping variable.
    pub ungrouped: usize,
    pub km: Outcome<Vec<Entry<KmGroup>>>,
    pub rank_tests: Outcome<Vec<Entry<RankTestResult>>>,
    pub parametric: Outcome<Vec<Entry<ParametricGroup>>>,
    pub gof: Outcome<Vec<Entry<GofGroup>>>,
    pub cox: Outcome<Vec<Entry<CoxGroup>>>,
    pub diagnostics: Outcome<Vec<Entry<DiagnosticsGroup>>>,
    /// Every failed section or sub-result, in pipeline order.
    pub failures: Vec<FailureRecord>,
}

impl AnalysisReport {
    /// Some section or sub-result failed.
    pub fn is_partial(&self) -> bool {
        !self.failures.is_empty()
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }
}

#[derive(Default)]
struct Recorder {
    failures: Vec<FailureRecord>,
}

impl Recorder {
    fn fail<T>(&mut self, section: &str, label: &str, e: &Error) -> Outcome<T> {
        let f = Failure::from(e);
        self.failures.push(FailureRecord {
            section: section.to_string(),
            label: label.to_string(),
            error: f.clone(),
        });
        Outcome::Failed(f)
    }

    fn capture<T>(&mut self, section: &str, label: &str, r: Result<T>) -> Outcome<T> {
        match r {
            Ok(v) => Outcome::Ok(v),
            Err(e) => self.fail(section, label, &e),
        }
    }

    fn entry<T>(&mut self, section: &str, label: &str, r: Result<T>) -> Entry<T> {
        Entry {
            label: label.to_string(),
            outcome: self.capture(section, label, r),
        }
    }
}

/// Splits by the levels of `variable`, sorted by level name. Numeric values
/// are used verbatim as labels.
pub fn split_groups(cohort: &Cohort, variable: &str) -> Result<(Vec<Cohort>, usize)> {
    let mut map: BTreeMap<String, Vec<_>> = BTreeMap::new();
    let mut missing = 0;
    for r in &cohort.records {
        let key = match r.covariate(variable)? {
            Some(CovariateValue::Level(s)) => s,
            Some(CovariateValue::Numeric(x)) => format!("{x}"),
            None => {
                missing += 1;
                continue;
            }
        };
        map.entry(key).or_default().push(r.clone());
    }
    if map.is_empty() {
        return Err(Error::EmptyCohort);
    }
    let groups = map
        .into_iter()
        .map(|(label, records)| Cohort { label, records })
        .collect();
    Ok((groups, missing))
}

fn disabled<T>() -> Outcome<T> {
    Outcome::Skipped("disabled in configuration".into())
}

/// Reads `config.input` and runs the full analysis.
pub fn run_pipeline(config: &RunConfig) -> Result<AnalysisReport> {
    let path = config
        .input
        .as_deref()
        .ok_or_else(|| Error::Config("no input file configured".into()))?;
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let loaded = parse_cohort_csv(path, &config.schema)?;
    let mut report = run_pipeline_on(&loaded, config)?;
    report.provenance.input_hash = Some(config::hex(&Sha256::digest(&bytes)));
    Ok(report)
}

/// Runs the analysis on an already loaded cohort. Configuration and
/// grouping errors abort; everything later is captured per section.
pub fn run_pipeline_on(loaded: &LoadedCohort, config: &RunConfig) -> Result<AnalysisReport> {
    config.validate()?;
    let cohort = &loaded.cohort;
    if cohort.is_empty() {
        return Err(Error::EmptyCohort);
    }
    let (groups, ungrouped) = split_groups(cohort, &config.group_by)?;
    let mut rec = Recorder::default();

    let km = if config.km.enabled {
        Outcome::Ok(
            groups
                .iter()
                .map(|g| {
                    let r = km_fit(g, config.conf_level).map(|curve| KmGroup {
                        median: curve.median(),
                        max_time: g.times().into_iter().fold(0.0, f64::max),
                        curve,
                    });
                    rec.entry("km", &g.label, r)
                })
                .collect(),
        )
    } else {
        disabled()
    };

    let rank_tests = if !config.rank_tests.enabled {
        disabled()
    } else if groups.len() != 2 {
        Outcome::Skipped(format!("rank tests compare two groups; found {}", groups.len()))
    } else {
        let (a, b) = (&groups[0], &groups[1]);
        let variant = config.rank_tests.wilcoxon.unwrap_or_else(|| {
            if a.n_events() == a.len() && b.n_events() == b.len() {
                WilcoxonVariant::MannWhitney
            } else {
                WilcoxonVariant::Gehan
            }
        });
        let wname = match variant {
            WilcoxonVariant::MannWhitney => "wilcoxon_rank_sum",
            WilcoxonVariant::Gehan => "gehan_wilcoxon",
        };
        Outcome::Ok(vec![
            rec.entry("rank_tests", "logrank", logrank_test(a, b)),
            rec.entry("rank_tests", wname, wilcoxon_test(a, b, variant)),
        ])
    };

    let samples: Vec<Result<SurvSample>> = groups
        .iter()
        .map(|g| SurvSample::new(g.times(), g.events()))
        .collect();

    let parametric: Outcome<Vec<Entry<ParametricGroup>>> = if config.parametric.enabled {
        let opts = FitOptions {
            grid_size: config.parametric.grid_size,
            ..FitOptions::default()
        };
        Outcome::Ok(
            groups
                .iter()
                .zip(&samples)
                .map(|(g, sample)| {
                    let outcome = match sample {
                        Err(e) => rec.fail("parametric", &g.label, e),
                        Ok(s) => {
                            let fits = config
                                .parametric
                                .families
                                .iter()
                                .map(|&family| {
                                    let label = format!("{}/{}", g.label, family.name());
                                    let fit = fit_mle_3p_with(s, family, &opts).map(|m| ParametricModel {
                                        profile: None,
                                        ..m
                                    });
                                    Entry {
                                        label: family.name().to_string(),
                                        outcome: rec.capture("parametric", &label, fit),
                                    }
                                })
                                .collect();
                            Outcome::Ok(ParametricGroup {
                                n: s.len(),
                                n_events: s.n_events(),
                                fits,
                            })
                        }
                    };
                    Entry {
                        label: g.label.clone(),
                        outcome,
                    }
                })
                .collect(),
        )
    } else {
        disabled()
    };

    let gof = match (&parametric, config.gof.enabled) {
        (_, false) => disabled(),
        (Outcome::Ok(fits), true) => {
            let pvalue = match config.gof.p_mode {
                PMode::Asymptotic => PValue::Asymptotic,
                PMode::Bootstrap => PValue::Bootstrap(BootstrapOptions {
                    replicates: config.gof.replicates,
                    seed: config.seed,
                    ..BootstrapOptions::default()
                }),
            };
            Outcome::Ok(
                fits.iter()
                    .zip(&samples)
                    .map(|(entry, sample)| {
                        let outcome = match (&entry.outcome, sample) {
                            (Outcome::Ok(_), Ok(s)) if !s.is_complete() => Outcome::Skipped(format!(
                                "goodness-of-fit tests need uncensored data; {} of {} observations are censored",
                                s.len() - s.n_events(),
                                s.len()
                            )),
                            (Outcome::Ok(pg), Ok(s)) => {
                                Outcome::Ok(gof_group(&mut rec, &entry.label, pg, &s.times, &pvalue, config))
                            }
                            _ => Outcome::Skipped("no parametric fit for this group".into()),
                        };
                        Entry {
                            label: entry.label.clone(),
                            outcome,
                        }
                    })
                    .collect(),
            )
        }
        (_, true) => Outcome::Skipped("requires the parametric section".into()),
    };

    let cox: Outcome<Vec<Entry<CoxGroup>>> = if config.cox.enabled {
        Outcome::Ok(
            groups
                .iter()
                .map(|g| {
                    let r = cox_group(g, config);
                    rec.entry("cox", &g.label, r)
                })
                .collect(),
        )
    } else {
        disabled()
    };

    let diagnostics = match (&cox, config.diagnostics.enabled) {
        (_, false) => disabled(),
        (Outcome::Ok(fits), true) => Outcome::Ok(
            fits.iter()
                .zip(&groups)
                .map(|(entry, g)| {
                    let outcome = match &entry.outcome {
                        Outcome::Ok(cg) => Outcome::Ok(diagnostics_group(&mut rec, &g.label, &cg.model, g, config)),
                        _ => Outcome::Skipped("no Cox model for this group".into()),
                    };
                    Entry {
                        label: g.label.clone(),
                        outcome,
                    }
                })
                .collect(),
        ),
        (_, true) => Outcome::Skipped("requires the cox section".into()),
    };

    Ok(AnalysisReport {
        schema_version: SCHEMA_VERSION,
        provenance: Provenance {
            tool: TOOL_NAME.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed: config.seed,
            config_hash: config.hash(),
            input_hash: None,
        },
        config: config.clone(),
        summary: summarize(loaded),
        group_by: config.group_by.clone(),
        groups: groups
            .iter()
            .map(|g| GroupInfo {
                label: g.label.clone(),
                n: g.len(),
                n_events: g.n_events(),
            })
            .collect(),
        ungrouped,
        km,
        rank_tests,
        parametric,
        gof,
        cox,
        diagnostics,
        failures: rec.failures,
    })
}

fn gof_group(
    rec: &mut Recorder,
    group: &str,
    pg: &ParametricGroup,
    data: &[f64],
    pvalue: &PValue,
    config: &RunConfig,
) -> GofGroup {
    let mut families = Vec::new();
    for fit in &pg.fits {
        let Outcome::Ok(model) = &fit.outcome else { continue };
        let mut reports = Vec::new();
        let mut failures = Vec::new();
        match gof_tests(data, model, &GofMethod::ALL, pvalue, config.gof.bins) {
            Ok(r) => reports = r,
            Err(_) => {
                // Run the methods one by one so a single failure (typically
                // chi-square binning) does not hide the others.
                for method in GofMethod::ALL {
                    match gof_tests(data, model, &[method], pvalue, config.gof.bins) {
                        Ok(mut r) => reports.append(&mut r),
                        Err(e) => {
                            let label = format!("{group}/{}/{}", model.family.name(), method_name(method));
                            rec.fail::<()>("gof", &label, &e);
                            failures.push(MethodFailure {
                                method,
                                error: Failure::from(&e),
                            });
                        }
                    }
                }
            }
        }
        families.push(FamilyGof {
            family: model.family,
            reports,
            failures,
        });
    }
    let ad = |f: &FamilyGof| {
        f.reports
            .iter()
            .find(|r| r.method == GofMethod::Ad)
            .map_or(f64::INFINITY, |r| r.statistic)
    };
    families.sort_by(|a, b| ad(a).total_cmp(&ad(b)));
    let selected = families.first().filter(|f| ad(f).is_finite()).map(|f| f.family);
    GofGroup {
        p_mode: pvalue.mode(),
        families,
        selected,
    }
}

fn method_name(m: GofMethod) -> &'static str {
    match m {
        GofMethod::Ks => "ks",
        GofMethod::Ad => "ad",
        GofMethod::ChiSquare => "chisq",
    }
}

fn cox_group(cohort: &Cohort, config: &RunConfig) -> Result<CoxGroup> {
    let formula = config.cox.formula_for(&cohort.label)?;
    let (model, stepwise) = if config.cox.stepwise {
        let r = stepwise_backward(cohort, &formula, config.cox.alpha, config.cox.ties)?;
        (r.model, Some(r.trace))
    } else {
        (cox_fit(cohort, &formula, config.cox.ties)?, None)
    };
    let hazard_ratios = hazard_ratios(&model, config.conf_level)?;
    let global_tests = match global_tests(&model) {
        Ok(g) => Outcome::Ok(g),
        Err(e) => Outcome::Skipped(e.to_string()),
    };
    Ok(CoxGroup {
        formula: formula.to_string(),
        model,
        hazard_ratios,
        global_tests,
        stepwise,
    })
}

fn diagnostics_group(
    rec: &mut Recorder,
    group: &str,
    model: &CoxModel,
    cohort: &Cohort,
    config: &RunConfig,
) -> DiagnosticsGroup {
    let dc = &config.diagnostics;
    let ph = ph_test(model, cohort, dc.transform);
    let schoenfeld = schoenfeld_residuals(model, cohort, true).map(ResidualReport::new);
    let martingale = martingale_residuals(model, cohort);
    let trends = martingale
        .as_ref()
        .ok()
        .map(|m| martingale_trends(model, cohort, m));
    let deviance = deviance_residuals(model, cohort).map(|set| DevianceReport {
        threshold: dc.deviance_threshold,
        outliers: deviance_outliers(&set, dc.deviance_threshold),
        residuals: ResidualReport::new(set),
    });
    let cox_snell = coxsnell_residuals(model, cohort).map(|(set, check)| CoxSnellReport {
        check,
        residuals: ResidualReport::new(set),
    });
    let label = |what: &str| format!("{group}/{what}");
    DiagnosticsGroup {
        ph_test: rec.capture("diagnostics", &label("ph_test"), ph),
        scaled_schoenfeld: rec.capture("diagnostics", &label("scaled_schoenfeld"), schoenfeld),
        martingale: rec.capture("diagnostics", &label("martingale"), martingale.map(ResidualReport::new)),
        martingale_trends: match trends {
            Some(r) => rec.capture("diagnostics", &label("martingale_trends"), r),
            None => Outcome::Skipped("martingale residuals unavailable".into()),
        },
        deviance: rec.capture("diagnostics", &label("deviance"), deviance),
        cox_snell: rec.capture("diagnostics", &label("cox_snell"), cox_snell),
    }
}
