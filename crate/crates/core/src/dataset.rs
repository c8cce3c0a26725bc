//! Cohort ingestion, gender split and descriptive statistics.
//!
//! Canonical column names (case-insensitive):
//!
//! | column            | type                          | required |
//! |-------------------|-------------------------------|----------|
//! | `id`              | string                        | no (row number used) |
//! | `age`             | years                         | yes (cells may be empty) |
//! | `age_at_implant`  | years in `[18, 120]`          | yes |
//! | `gender`          | `Male`/`M`, `Female`/`F`      | yes |
//! | `survival_months` | months, `> 0`                 | yes |
//! | `event`           | `1`/`0`, `true`/`false`, `yes`/`no` | yes |
//! | `initial_side`    | `Left`/`L`, `Right`/`R`, `Bilateral`/`B` | yes |
//! | `n_revisions`     | integer `>= 0`                | yes |
//!
//! Any further columns are kept verbatim and can be referenced by name from
//! Cox formulas. Rows whose survival time is empty, or which lack any other
//! mandatory value, are dropped (never imputed) and counted.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Gender {
    Male,
    Female,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Side {
    Left,
    Right,
    Bilateral,
}

impl fmt::Display for Gender {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Gender::Male => "Male",
            Gender::Female => "Female",
        })
    }
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Side::Left => "Left",
            Side::Right => "Right",
            Side::Bilateral => "Bilateral",
        })
    }
}

impl Gender {
    fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "m" | "male" => Some(Gender::Male),
            "f" | "female" => Some(Gender::Female),
            _ => None,
        }
    }
}

impl Side {
    fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "l" | "left" => Some(Side::Left),
            "r" | "right" => Some(Side::Right),
            "b" | "bilateral" | "both" => Some(Side::Bilateral),
            _ => None,
        }
    }
}

/// One subject.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvivalRecord {
    pub id: String,
    pub age: Option<f64>,
    pub age_at_implant: f64,
    pub gender: Gender,
    pub survival_months: f64,
    /// `true` when death was observed, `false` when right-censored.
    pub event: bool,
    pub initial_side: Side,
    pub n_revisions: u32,
    /// Non-canonical columns, raw cell text.
    #[serde(default)]
    pub extra: BTreeMap<String, String>,
}

/// A covariate value as seen by design-matrix construction.
#[derive(Debug, Clone, PartialEq)]
pub enum CovariateValue {
    Numeric(f64),
    Level(String),
}

impl SurvivalRecord {
    /// Looks up a variable by canonical name or extra-column name.
    /// `Ok(None)` means the cell is missing.
    pub fn covariate(&self, name: &str) -> Result<Option<CovariateValue>> {
        use CovariateValue::*;
        let v = match canonical_name(name).as_deref() {
            Some("age") => self.age.map(Numeric),
            Some("age_at_implant") => Some(Numeric(self.age_at_implant)),
            Some("survival_months") => Some(Numeric(self.survival_months)),
            Some("n_revisions") => Some(Numeric(self.n_revisions as f64)),
            Some("gender") => Some(Level(self.gender.to_string())),
            Some("initial_side") => Some(Level(self.initial_side.to_string())),
            Some("event") => Some(Numeric(if self.event { 1.0 } else { 0.0 })),
            Some("id") => Some(Level(self.id.clone())),
            _ => {
                let key = name.trim().to_ascii_lowercase();
                let cell = self
                    .extra
                    .get(&key)
                    .ok_or_else(|| Error::UnknownVariable(name.to_string()))?;
                let cell = cell.trim();
                if cell.is_empty() {
                    None
                } else {
                    Some(match cell.parse::<f64>() {
                        Ok(x) if x.is_finite() => Numeric(x),
                        _ => Level(cell.to_string()),
                    })
                }
            }
        };
        Ok(v)
    }
}

const CANONICAL: [&str; 8] = [
    "id",
    "age",
    "age_at_implant",
    "gender",
    "survival_months",
    "event",
    "initial_side",
    "n_revisions",
];

const MANDATORY: [&str; 7] = [
    "age",
    "age_at_implant",
    "gender",
    "survival_months",
    "event",
    "initial_side",
    "n_revisions",
];

fn default_alias(name: &str) -> Option<&'static str> {
    Some(match name {
        "side" | "implant_side" => "initial_side",
        "sex" => "gender",
        "time" | "survival_time" | "months" => "survival_months",
        "status" | "death" | "dead" | "died" => "event",
        "revisions" | "number_of_revisions" => "n_revisions",
        "age_implant" | "implant_age" => "age_at_implant",
        _ => return None,
    })
}

pub(crate) fn canonical_name(name: &str) -> Option<String> {
    let lower = name.trim().to_ascii_lowercase().replace([' ', '-', '.'], "_");
    if CANONICAL.contains(&lower.as_str()) {
        return Some(lower);
    }
    default_alias(&lower).map(str::to_string)
}

/// Options controlling CSV ingestion.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SchemaOptions {
    /// Extra header aliases, `alias -> canonical name`. Keys are matched
    /// case-insensitively.
    #[serde(default)]
    pub aliases: BTreeMap<String, String>,
    /// Keep only subjects with an observed event.
    #[serde(default)]
    pub complete_only: bool,
}

impl SchemaOptions {
    /// Loads an alias mapping from a TOML or JSON file (`{ alias = "canonical" }`).
    pub fn with_alias_file(mut self, path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let map: BTreeMap<String, String> = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text)?
        } else {
            toml::from_str(&text).map_err(|e| Error::Config(e.to_string()))?
        };
        self.aliases.extend(map);
        Ok(self)
    }

    fn resolve(&self, header: &str) -> String {
        let lower = header.trim().to_ascii_lowercase();
        if let Some(target) = self
            .aliases
            .iter()
            .find(|(k, _)| k.trim().to_ascii_lowercase() == lower)
            .map(|(_, v)| v)
        {
            return canonical_name(target).unwrap_or_else(|| target.to_ascii_lowercase());
        }
        canonical_name(&lower).unwrap_or(lower)
    }
}

/// An ordered, labelled set of subjects with unique ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cohort {
    pub label: String,
    pub records: Vec<SurvivalRecord>,
}

impl Cohort {
    pub fn new(label: impl Into<String>, records: Vec<SurvivalRecord>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for r in &records {
            if !seen.insert(r.id.as_str()) {
                return Err(Error::domain(format!("duplicate record id `{}`", r.id)));
            }
        }
        Ok(Cohort {
            label: label.into(),
            records,
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn times(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.survival_months).collect()
    }

    pub fn events(&self) -> Vec<bool> {
        self.records.iter().map(|r| r.event).collect()
    }

    pub fn n_events(&self) -> usize {
        self.records.iter().filter(|r| r.event).count()
    }

    /// Names of the extra columns present on every record.
    pub fn extra_columns(&self) -> Vec<String> {
        let mut cols: BTreeSet<String> = BTreeSet::new();
        for r in &self.records {
            cols.extend(r.extra.keys().cloned());
        }
        cols.into_iter().collect()
    }
}

/// Result of reading a cohort file.
#[derive(Debug, Clone)]
pub struct LoadedCohort {
    pub cohort: Cohort,
    /// Rows dropped for a missing survival time or other mandatory value.
    pub dropped_rows: usize,
    /// Rows removed by `complete_only`.
    pub censored_excluded: usize,
}

pub fn parse_cohort_csv(path: &Path, options: &SchemaOptions) -> Result<LoadedCohort> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let label = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "cohort".to_string());
    read_cohort_csv(file, &label, options)
}

fn parse_event(s: &str) -> Option<bool> {
    match s.trim().to_ascii_lowercase().as_str() {
        "1" | "true" | "yes" | "y" | "dead" | "deceased" => Some(true),
        "0" | "false" | "no" | "n" | "alive" | "censored" => Some(false),
        _ => None,
    }
}

/// Reads a cohort from any CSV source.
pub fn read_cohort_csv<R: Read>(
    reader: R,
    label: &str,
    options: &SchemaOptions,
) -> Result<LoadedCohort> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers: Vec<String> = rdr.headers()?.iter().map(|h| options.resolve(h)).collect();
    let position = |name: &str| headers.iter().position(|h| h == name);
    for col in MANDATORY {
        if position(col).is_none() {
            return Err(Error::Schema {
                column: col.to_string(),
            });
        }
    }
    let col = |name: &str| position(name).expect("checked above");
    let id_col = position("id");
    let extra_cols: Vec<(usize, String)> = headers
        .iter()
        .enumerate()
        .filter(|(_, h)| !CANONICAL.contains(&h.as_str()))
        .map(|(i, h)| (i, h.clone()))
        .collect();

    let mut records = Vec::new();
    let mut dropped = 0;
    let mut censored_excluded = 0;
    let mut seen_ids = BTreeSet::new();

    for (row_idx, row) in rdr.records().enumerate() {
        let row = row?;
        // header is line 1
        let line = row.position().map(|p| p.line() as usize).unwrap_or(row_idx + 2);
        let cell = |name: &str| row.get(col(name)).unwrap_or("").trim();
        let row_err = |message: String| Error::Row { line, message };

        if MANDATORY
            .iter()
            .filter(|c| **c != "age")
            .any(|c| cell(c).is_empty())
        {
            dropped += 1;
            continue;
        }

        let num = |name: &str| -> Result<f64> {
            let raw = cell(name);
            raw.parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| row_err(format!("cannot parse {name} `{raw}`")))
        };

        let survival_months = num("survival_months")?;
        if survival_months <= 0.0 {
            return Err(row_err(format!("survival_months must be > 0, got {survival_months}")));
        }
        let age_at_implant = num("age_at_implant")?;
        if !(18.0..=120.0).contains(&age_at_implant) {
            return Err(row_err(format!("age_at_implant {age_at_implant} outside [18, 120]")));
        }
        let age = if cell("age").is_empty() {
            None
        } else {
            let a = num("age")?;
            if a <= 0.0 {
                return Err(row_err(format!("age must be > 0, got {a}")));
            }
            Some(a)
        };
        let gender = Gender::parse(cell("gender"))
            .ok_or_else(|| row_err(format!("unknown gender `{}`", cell("gender"))))?;
        let initial_side = Side::parse(cell("initial_side"))
            .ok_or_else(|| row_err(format!("unknown initial_side `{}`", cell("initial_side"))))?;
        let event = parse_event(cell("event"))
            .ok_or_else(|| row_err(format!("cannot parse event `{}`", cell("event"))))?;
        let n_revisions = {
            let raw = cell("n_revisions");
            let x: f64 = raw
                .parse()
                .map_err(|_| row_err(format!("cannot parse n_revisions `{raw}`")))?;
            if x < 0.0 || x.fract() != 0.0 || x > u32::MAX as f64 {
                return Err(row_err(format!("n_revisions must be a nonnegative integer, got {raw}")));
            }
            x as u32
        };
        let id = match id_col.map(|c| row.get(c).unwrap_or("").trim()) {
            Some(s) if !s.is_empty() => s.to_string(),
            _ => format!("row{line}"),
        };
        if !seen_ids.insert(id.clone()) {
            return Err(row_err(format!("duplicate id `{id}`")));
        }
        if options.complete_only && !event {
            censored_excluded += 1;
            continue;
        }
        let extra = extra_cols
            .iter()
            .map(|(i, name)| (name.clone(), row.get(*i).unwrap_or("").trim().to_string()))
            .collect();
        records.push(SurvivalRecord {
            id,
            age,
            age_at_implant,
            gender,
            survival_months,
            event,
            initial_side,
            n_revisions,
            extra,
        });
    }

    if records.is_empty() {
        return Err(Error::EmptyCohort);
    }
    Ok(LoadedCohort {
        cohort: Cohort {
            label: label.to_string(),
            records,
        },
        dropped_rows: dropped,
        censored_excluded,
    })
}

/// Writes a cohort in canonical column order, extra columns last.
pub fn write_cohort_csv<W: Write>(cohort: &Cohort, writer: W) -> Result<()> {
    let extras = cohort.extra_columns();
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<String> = CANONICAL.iter().map(|s| s.to_string()).collect();
    header.extend(extras.iter().cloned());
    w.write_record(&header)?;
    for r in &cohort.records {
        let mut row = vec![
            r.id.clone(),
            r.age.map(|a| a.to_string()).unwrap_or_default(),
            r.age_at_implant.to_string(),
            r.gender.to_string(),
            r.survival_months.to_string(),
            if r.event { "1" } else { "0" }.to_string(),
            r.initial_side.to_string(),
            r.n_revisions.to_string(),
        ];
        row.extend(extras.iter().map(|c| r.extra.get(c).cloned().unwrap_or_default()));
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

/// Splits into `(Male, Female)` cohorts, preserving record order.
pub fn split_by_gender(cohort: &Cohort) -> (Cohort, Cohort) {
    let (male, female): (Vec<_>, Vec<_>) = cohort
        .records
        .iter()
        .cloned()
        .partition(|r| r.gender == Gender::Male);
    (
        Cohort {
            label: "Male".to_string(),
            records: male,
        },
        Cohort {
            label: "Female".to_string(),
            records: female,
        },
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DescriptiveStats {
    pub variable: String,
    pub n: usize,
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    /// Sample standard deviation (n − 1 denominator; 0 when n = 1).
    pub sd: f64,
}

impl DescriptiveStats {
    pub fn from_values(variable: &str, values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::domain(format!("no non-missing values for `{variable}`")));
        }
        let n = values.len();
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mean = (values.iter().sum::<f64>() / n as f64).clamp(min, max);
        let sd = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Ok(DescriptiveStats {
            variable: variable.to_string(),
            n,
            min,
            max,
            mean,
            sd,
        })
    }
}

/// Descriptive statistics of a numeric variable over non-missing values.
pub fn describe(cohort: &Cohort, variable: &str) -> Result<DescriptiveStats> {
    let mut values = Vec::with_capacity(cohort.len());
    for r in &cohort.records {
        match r.covariate(variable)? {
            Some(CovariateValue::Numeric(x)) => values.push(x),
            Some(CovariateValue::Level(_)) => {
                return Err(Error::UnknownVariable(format!("{variable} (not numeric)")))
            }
            None => {}
        }
    }
    DescriptiveStats::from_values(variable, &values)
}

/// Summary written by `survivalkit` alongside analyses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortSummary {
    pub label: String,
    pub n_records: usize,
    pub n_events: usize,
    pub dropped_rows: usize,
    pub censored_excluded: usize,
    pub n_male: usize,
    pub n_female: usize,
    pub variables: Vec<DescriptiveStats>,
}

pub fn summarize(loaded: &LoadedCohort) -> CohortSummary {
    let c = &loaded.cohort;
    let (m, f) = split_by_gender(c);
    let variables = ["age", "age_at_implant", "survival_months", "n_revisions"]
        .iter()
        .filter_map(|v| describe(c, v).ok())
        .collect();
    CohortSummary {
        label: c.label.clone(),
        n_records: c.len(),
        n_events: c.n_events(),
        dropped_rows: loaded.dropped_rows,
        censored_excluded: loaded.censored_excluded,
        n_male: m.len(),
        n_female: f.len(),
        variables,
    }
}
