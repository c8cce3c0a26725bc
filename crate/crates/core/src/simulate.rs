//! Seeded generators for parametric samples and synthetic cohorts.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Bernoulli, Distribution, Exp, LogNormal, Normal, Poisson, Weibull};
use serde::{Deserialize, Serialize};

use crate::dataset::{Cohort, Gender, Side, SurvivalRecord};
use crate::error::{Error, Result};
use crate::parametric::{Family, ParametricModel};

/// Generator for replicate `index` of a run seeded with `seed`. Replicates
/// use disjoint ChaCha streams, so their draws do not depend on scheduling.
pub fn replicate_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// `n` independent draws from `model`.
pub fn sample_model<R: Rng + ?Sized>(model: &ParametricModel, n: usize, rng: &mut R) -> Result<Vec<f64>> {
    let bad = |e: &dyn std::fmt::Display| Error::domain(format!("sampler: {e}"));
    Ok(match model.family {
        Family::Weibull3P => {
            let d = Weibull::new(model.scale, model.shape).map_err(|e| bad(&e))?;
            (0..n).map(|_| model.location + d.sample(rng)).collect()
        }
        Family::Lognormal3P => {
            let d = LogNormal::new(model.scale, model.shape).map_err(|e| bad(&e))?;
            (0..n).map(|_| model.location + d.sample(rng)).collect()
        }
    })
}

/// Survival times from a Cox model with exponential baseline hazard
/// `baseline_rate` and independent exponential censoring at `censor_rate`
/// (zero disables censoring).
pub fn cox_exponential<R: Rng + ?Sized>(
    x: &DMatrix<f64>,
    coef: &[f64],
    baseline_rate: f64,
    censor_rate: f64,
    rng: &mut R,
) -> Result<(Vec<f64>, Vec<bool>)> {
    if coef.len() != x.ncols() {
        return Err(Error::domain("coefficient count differs from design width"));
    }
    if !(baseline_rate > 0.0) || !(censor_rate >= 0.0) {
        return Err(Error::domain("rates must be positive (censoring may be zero)"));
    }
    let eta = x * DVector::from_column_slice(coef);
    let unit = Exp::new(1.0).map_err(|e| Error::domain(e.to_string()))?;
    let mut times = Vec::with_capacity(x.nrows());
    let mut events = Vec::with_capacity(x.nrows());
    for e in eta.iter() {
        let t = unit.sample(rng) / (baseline_rate * e.exp());
        let c = if censor_rate > 0.0 {
            unit.sample(rng) / censor_rate
        } else {
            f64::INFINITY
        };
        times.push(t.min(c));
        events.push(t <= c);
    }
    Ok((times, events))
}

/// Parameters of the synthetic implant cohort.
///
/// Cumulative hazard: `(t/baseline_scale)^baseline_shape · exp(age·(a−65) +
/// female·g + right·r + sqrt_revisions·√v + right_sqrt_revisions·r·√v)`,
/// with exponential and administrative censoring.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub n: usize,
    pub baseline_scale: f64,
    pub baseline_shape: f64,
    pub censor_rate: f64,
    pub max_follow_up: f64,
    pub female_fraction: f64,
    pub age: f64,
    pub female: f64,
    pub right: f64,
    pub sqrt_revisions: f64,
    pub right_sqrt_revisions: f64,
    /// Round times up to whole months, producing ties.
    pub whole_months: bool,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            n: 240,
            baseline_scale: 150.0,
            baseline_shape: 1.8,
            censor_rate: 1.0 / 400.0,
            max_follow_up: 240.0,
            female_fraction: 0.3,
            age: 0.04,
            female: 0.3,
            right: -0.5,
            sqrt_revisions: -0.6,
            right_sqrt_revisions: 0.5,
            whole_months: true,
        }
    }
}

pub fn synthetic_cohort(spec: &SyntheticSpec, seed: u64) -> Result<Cohort> {
    if spec.n == 0 {
        return Err(Error::EmptyCohort);
    }
    if !(spec.baseline_scale > 0.0 && spec.baseline_shape > 0.0) {
        return Err(Error::domain("baseline scale and shape must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let derr = |e: &dyn std::fmt::Display| Error::domain(format!("synthetic cohort: {e}"));
    let age = Normal::new(64.0, 8.6).map_err(|e| derr(&e))?;
    let female = Bernoulli::new(spec.female_fraction).map_err(|e| derr(&e))?;
    let revisions = Poisson::new(1.2).map_err(|e| derr(&e))?;
    let unit = Exp::new(1.0).map_err(|e| derr(&e))?;
    let mut records = Vec::with_capacity(spec.n);
    for i in 0..spec.n {
        let a: f64 = Distribution::<f64>::sample(&age, &mut rng).clamp(40.0, 93.0);
        let is_female = female.sample(&mut rng);
        let side = match rng.random_range(0..10) {
            0..=6 => Side::Bilateral,
            7 | 8 => Side::Right,
            _ => Side::Left,
        };
        let v = revisions.sample(&mut rng) as u32;
        let right = if side == Side::Right { 1.0 } else { 0.0 };
        let sv = f64::from(v).sqrt();
        let eta = spec.age * (a - 65.0)
            + if is_female { spec.female } else { 0.0 }
            + spec.right * right
            + spec.sqrt_revisions * sv
            + spec.right_sqrt_revisions * right * sv;
        let t = spec.baseline_scale * (unit.sample(&mut rng) / eta.exp()).powf(1.0 / spec.baseline_shape);
        let c = if spec.censor_rate > 0.0 {
            (unit.sample(&mut rng) / spec.censor_rate).min(spec.max_follow_up)
        } else {
            spec.max_follow_up
        };
        let (mut time, event) = if t <= c { (t, true) } else { (c, false) };
        if spec.whole_months {
            time = time.ceil().max(1.0);
        }
        let implant_age = a.floor();
        let years_since = time / 12.0;
        records.push(SurvivalRecord {
            id: format!("S{:04}", i + 1),
            age: Some((implant_age + years_since).floor()),
            age_at_implant: implant_age,
            gender: if is_female { Gender::Female } else { Gender::Male },
            survival_months: time,
            event,
            initial_side: side,
            n_revisions: v,
            extra: Default::default(),
        });
    }
    Cohort::new("synthetic", records)
}
