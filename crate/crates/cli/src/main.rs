use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use survivalkit::coxph::{
    breslow_baseline, cox_fit, global_tests, hazard_ratios, stepwise_backward, ModelFormula, TieMethod,
};
use survivalkit::dataset::{parse_cohort_csv, Cohort, CovariateValue, LoadedCohort};
use survivalkit::diagnostics::{
    coxsnell_residuals, deviance_outliers, deviance_residuals, martingale_residuals, martingale_trends,
    ph_test, schoenfeld_residuals, TimeTransform, DEVIANCE_FLAG,
};
use survivalkit::error::{Error, ErrorKind, Result};
use survivalkit::gof::{gof_tests, BootstrapOptions, GofMethod, PMode, PValue};
use survivalkit::nonparam::{km_fit, logrank_test, wilcoxon_test, WilcoxonVariant};
use survivalkit::parametric::{fit_mle_3p_with, Family, FitOptions};
use survivalkit::report::{report_plots, run_pipeline, split_groups, RunConfig};
use survivalkit::sample::SurvSample;

const EXIT_INPUT: u8 = 1;
const EXIT_NUMERICAL: u8 = 2;
const EXIT_PARTIAL: u8 = 3;

#[derive(Parser)]
#[command(
    name = "survivalkit",
    version,
    about = "Survival analysis of cohort CSV files: Kaplan-Meier, rank tests, \
             three-parameter lifetime models, Cox regression and residual diagnostics",
    after_help = "\
Exit codes: 0 success, 1 input or schema error, 2 numerical or convergence error,
3 report finished with failed sections.

Examples:
  survivalkit km --input cohort.csv --group gender --out km.json
  survivalkit ranktest --input cohort.csv --method logrank
  survivalkit fitdist --input cohort.csv --group gender --family weibull
  survivalkit cox --input cohort.csv --subset gender=Male \\
      --formula 'age_at_implant + initial_side + sqrt(n_revisions)'
  survivalkit report --config run.toml --out report.json --plots plots/"
)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Cohort CSV file (overrides the configuration's `input`)
    #[arg(long, global = true)]
    input: Option<PathBuf>,
    /// Write JSON here instead of standard output
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Seed for bootstrap resampling (overrides the configuration's `seed`)
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Run configuration, TOML or JSON (by extension)
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Suppress notes on standard error
    #[arg(long, short, global = true)]
    quiet: bool,
}

#[derive(Args, Clone)]
struct Selection {
    /// Split by this variable and analyse each level separately
    #[arg(long)]
    group: Option<String>,
    /// Keep only subjects with VAR equal to LEVEL, e.g. gender=Male
    #[arg(long, value_name = "VAR=LEVEL")]
    subset: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Kaplan-Meier curves with Greenwood errors and log-scale intervals
    Km {
        #[command(flatten)]
        sel: Selection,
        /// Confidence level of the pointwise intervals
        #[arg(long, default_value_t = 0.95)]
        conf: f64,
    },
    /// Two-group comparison: log-rank, Mann-Whitney rank sum or Gehan
    Ranktest {
        /// Variable with exactly two levels
        #[arg(long, default_value = "gender")]
        group: String,
        /// logrank, wilcoxon (Mann-Whitney, uncensored data only) or gehan
        #[arg(long, default_value = "logrank")]
        method: String,
    },
    /// Maximum-likelihood fit of a three-parameter Weibull or lognormal model
    Fitdist {
        #[command(flatten)]
        sel: Selection,
        /// weibull or lognormal
        #[arg(long, default_value = "weibull")]
        family: Family,
        /// Threshold candidates on the profile grid
        #[arg(long, default_value_t = 256)]
        grid: usize,
    },
    /// Goodness-of-fit tests of fitted models on uncensored data
    Gof {
        #[command(flatten)]
        sel: Selection,
        /// weibull or lognormal
        #[arg(long, default_value = "weibull")]
        family: Family,
        /// Comma-separated subset of ks, ad, chisq
        #[arg(long, default_value = "ks,ad,chisq", value_delimiter = ',')]
        methods: Vec<GofMethod>,
        /// asymptotic or bootstrap
        #[arg(long, default_value = "asymptotic")]
        p_mode: PMode,
        #[arg(long, default_value_t = 1000)]
        replicates: usize,
        /// Chi-square bins (automatic when omitted)
        #[arg(long)]
        bins: Option<usize>,
    },
    /// Cox proportional-hazards regression
    Cox {
        #[command(flatten)]
        model: ModelArgs,
        /// Backward elimination by term-wise Wald p-value
        #[arg(long)]
        stepwise: bool,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        #[arg(long, default_value_t = 0.95)]
        conf: f64,
    },
    /// Proportional-hazards test and residuals of a Cox fit
    Diagnose {
        #[command(flatten)]
        model: ModelArgs,
        /// Time transform of the proportional-hazards test: km, rank or identity
        #[arg(long, default_value = "km")]
        transform: TimeTransform,
        /// |deviance residual| above which subjects are flagged
        #[arg(long, default_value_t = DEVIANCE_FLAG)]
        deviance_threshold: f64,
    },
    /// Full pipeline from a run configuration, with optional SVG plots
    Report {
        /// Directory for SVG charts
        #[arg(long)]
        plots: Option<PathBuf>,
    },
}

#[derive(Args)]
struct ModelArgs {
    /// Model formula, e.g. 'age_at_implant + initial_side + sqrt(n_revisions)'
    #[arg(long)]
    formula: String,
    /// efron or breslow
    #[arg(long, default_value = "efron")]
    ties: TieMethod,
    /// Keep only subjects with VAR equal to LEVEL, e.g. gender=Male
    #[arg(long, value_name = "VAR=LEVEL")]
    subset: Option<String>,
    /// Reference level of a factor, VAR=LEVEL; repeatable
    #[arg(long = "reference", value_name = "VAR=LEVEL")]
    references: Vec<String>,
}

struct Context {
    config: RunConfig,
    out: Option<PathBuf>,
    quiet: bool,
}

impl Context {
    fn note(&self, msg: &str) {
        if !self.quiet {
            eprintln!("{msg}");
        }
    }

    fn load(&self) -> Result<LoadedCohort> {
        let path = self
            .config
            .input
            .as_deref()
            .ok_or_else(|| Error::Config("no input file; pass --input or set `input` in --config".into()))?;
        let loaded = parse_cohort_csv(path, &self.config.schema)?;
        if loaded.dropped_rows > 0 {
            self.note(&format!("dropped {} incomplete row(s)", loaded.dropped_rows));
        }
        Ok(loaded)
    }

    fn emit<T: Serialize>(&self, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        match &self.out {
            Some(path) => write_file(path, text.as_bytes()),
            None => {
                print!("{text}");
                Ok(())
            }
        }
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn parse_pair(s: &str) -> Result<(String, String)> {
    s.split_once('=')
        .map(|(a, b)| (a.trim().to_string(), b.trim().to_string()))
        .filter(|(a, b)| !a.is_empty() && !b.is_empty())
        .ok_or_else(|| Error::Config(format!("expected VAR=LEVEL, got `{s}`")))
}

fn level_of(value: Option<CovariateValue>) -> Option<String> {
    match value? {
        CovariateValue::Level(s) => Some(s),
        CovariateValue::Numeric(x) => Some(format!("{x}")),
    }
}

fn subset(cohort: &Cohort, spec: Option<&str>) -> Result<Cohort> {
    let Some(spec) = spec else {
        return Ok(cohort.clone());
    };
    let (var, level) = parse_pair(spec)?;
    let mut records = Vec::new();
    for r in &cohort.records {
        if level_of(r.covariate(&var)?).is_some_and(|l| l.eq_ignore_ascii_case(&level)) {
            records.push(r.clone());
        }
    }
    if records.is_empty() {
        return Err(Error::EmptyCohort);
    }
    Ok(Cohort {
        label: format!("{var}={level}"),
        records,
    })
}

/// Cohorts selected by `--subset` and split by `--group`.
fn select(cohort: &Cohort, sel: &Selection) -> Result<Vec<Cohort>> {
    let base = subset(cohort, sel.subset.as_deref())?;
    match &sel.group {
        Some(var) => Ok(split_groups(&base, var)?.0),
        None => Ok(vec![base]),
    }
}

fn model_formula(args: &ModelArgs) -> Result<ModelFormula> {
    let mut f: ModelFormula = args.formula.parse()?;
    for r in &args.references {
        let (var, level) = parse_pair(r)?;
        f.reference_levels.insert(var, level);
    }
    Ok(f)
}

fn run(cli: Cli) -> Result<u8> {
    let mut config = match &cli.global.config {
        Some(path) => RunConfig::from_path(path)?,
        None => RunConfig::default(),
    };
    if let Some(input) = cli.global.input {
        config.input = Some(input);
    }
    if let Some(seed) = cli.global.seed {
        config.seed = seed;
    }
    let ctx = Context {
        config,
        out: cli.global.out,
        quiet: cli.global.quiet,
    };

    match cli.command {
        Command::Km { sel, conf } => {
            let loaded = ctx.load()?;
            let mut groups = Vec::new();
            for g in select(&loaded.cohort, &sel)? {
                let curve = km_fit(&g, conf)?;
                groups.push(json!({ "group": g.label, "n": g.len(), "median": curve.median(), "curve": curve }));
            }
            ctx.emit(&json!({ "groups": groups }))?;
        }
        Command::Ranktest { group, method } => {
            let loaded = ctx.load()?;
            let (groups, _) = split_groups(&loaded.cohort, &group)?;
            let [a, b] = groups.as_slice() else {
                return Err(Error::UndefinedTest(format!(
                    "`{group}` has {} levels; rank tests compare two",
                    groups.len()
                )));
            };
            let result = match method.to_ascii_lowercase().as_str() {
                "logrank" | "log-rank" => logrank_test(a, b)?,
                "wilcoxon" | "mannwhitney" | "mann-whitney" => wilcoxon_test(a, b, WilcoxonVariant::MannWhitney)?,
                "gehan" => wilcoxon_test(a, b, WilcoxonVariant::Gehan)?,
                other => return Err(Error::Config(format!("unknown rank test `{other}`"))),
            };
            ctx.emit(&json!({ "groups": [a.label, b.label], "result": result }))?;
        }
        Command::Fitdist { sel, family, grid } => {
            let loaded = ctx.load()?;
            let opts = FitOptions {
                grid_size: grid,
                ..FitOptions::default()
            };
            let mut fits = Vec::new();
            for g in select(&loaded.cohort, &sel)? {
                let model = fit_mle_3p_with(&SurvSample::from(&g), family, &opts)?;
                fits.push(json!({ "group": g.label, "model": model }));
            }
            ctx.emit(&json!({ "fits": fits }))?;
        }
        Command::Gof {
            sel,
            family,
            methods,
            p_mode,
            replicates,
            bins,
        } => {
            let loaded = ctx.load()?;
            let pvalue = match p_mode {
                PMode::Asymptotic => PValue::Asymptotic,
                PMode::Bootstrap => PValue::Bootstrap(BootstrapOptions {
                    replicates,
                    seed: ctx.config.seed,
                    ..BootstrapOptions::default()
                }),
            };
            let mut out = Vec::new();
            for g in select(&loaded.cohort, &sel)? {
                let sample = SurvSample::from(&g);
                if !sample.is_complete() {
                    return Err(Error::Variant(format!(
                        "group `{}` has censored observations; goodness-of-fit tests need complete data",
                        g.label
                    )));
                }
                let model = fit_mle_3p_with(&sample, family, &FitOptions::default())?;
                let reports = gof_tests(&sample.times, &model, &methods, &pvalue, bins)?;
                out.push(json!({ "group": g.label, "model": model.parameters_only(), "tests": reports }));
            }
            ctx.emit(&json!({ "groups": out, "seed": ctx.config.seed }))?;
        }
        Command::Cox {
            model,
            stepwise,
            alpha,
            conf,
        } => {
            let loaded = ctx.load()?;
            let cohort = subset(&loaded.cohort, model.subset.as_deref())?;
            let formula = model_formula(&model)?;
            let (fit, trace) = if stepwise {
                let r = stepwise_backward(&cohort, &formula, alpha, model.ties)?;
                (r.model, Some(r.trace))
            } else {
                (cox_fit(&cohort, &formula, model.ties)?, None)
            };
            let tests = match global_tests(&fit) {
                Ok(t) => Some(t),
                Err(e) => {
                    ctx.note(&format!("global tests unavailable: {e}"));
                    None
                }
            };
            ctx.emit(&json!({
                "cohort": cohort.label,
                "hazard_ratios": hazard_ratios(&fit, conf)?,
                "global_tests": tests,
                "stepwise": trace,
                "baseline": breslow_baseline(&fit, &cohort)?,
                "model": fit,
            }))?;
        }
        Command::Diagnose {
            model,
            transform,
            deviance_threshold,
        } => {
            let loaded = ctx.load()?;
            let cohort = subset(&loaded.cohort, model.subset.as_deref())?;
            let fit = cox_fit(&cohort, &model_formula(&model)?, model.ties)?;
            let martingale = martingale_residuals(&fit, &cohort)?;
            let deviance = deviance_residuals(&fit, &cohort)?;
            let (cox_snell, check) = coxsnell_residuals(&fit, &cohort)?;
            ctx.emit(&json!({
                "ph_test": ph_test(&fit, &cohort, transform)?,
                "scaled_schoenfeld": schoenfeld_residuals(&fit, &cohort, true)?,
                "martingale_trends": martingale_trends(&fit, &cohort, &martingale)?,
                "deviance_outliers": deviance_outliers(&deviance, deviance_threshold),
                "cox_snell_slope": check.slope,
                "martingale": martingale,
                "deviance": deviance,
                "cox_snell": cox_snell,
            }))?;
        }
        Command::Report { plots } => {
            let report = run_pipeline(&ctx.config)?;
            match &ctx.out {
                Some(path) => write_file(path, report.to_json()?.as_bytes())?,
                None => print!("{}", report.to_json()?),
            }
            if let Some(dir) = plots {
                std::fs::create_dir_all(&dir).map_err(|e| Error::Io {
                    path: dir.clone(),
                    source: e,
                })?;
                for p in report_plots(&report)? {
                    write_file(&dir.join(&p.file_name), p.svg.as_bytes())?;
                }
            }
            for f in &report.failures {
                ctx.note(&format!("{} [{}]: {}", f.section, f.label, f.error.message));
            }
            if report.is_partial() {
                return Ok(EXIT_PARTIAL);
            }
        }
    }
    Ok(0)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_INPUT)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e.kind() {
                ErrorKind::Input => EXIT_INPUT,
                ErrorKind::Numerical => EXIT_NUMERICAL,
            })
        }
    }
}
