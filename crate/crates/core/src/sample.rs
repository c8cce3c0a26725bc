use serde::{Deserialize, Serialize};

use crate::dataset::Cohort;
use crate::error::{Error, Result};

/// Right-censored observations: a time per subject and whether the event
/// was observed at that time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvSample {
    pub times: Vec<f64>,
    pub events: Vec<bool>,
}

impl SurvSample {
    pub fn new(times: Vec<f64>, events: Vec<bool>) -> Result<Self> {
        if times.len() != events.len() {
            return Err(Error::domain(format!(
                "times/events length mismatch: {} vs {}",
                times.len(),
                events.len()
            )));
        }
        if let Some(t) = times.iter().find(|t| !t.is_finite()) {
            return Err(Error::domain(format!("non-finite time {t}")));
        }
        Ok(SurvSample { times, events })
    }

    /// All subjects observed to fail.
    pub fn complete(times: Vec<f64>) -> Result<Self> {
        let n = times.len();
        Self::new(times, vec![true; n])
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn n_events(&self) -> usize {
        self.events.iter().filter(|e| **e).count()
    }

    pub fn is_complete(&self) -> bool {
        self.events.iter().all(|e| *e)
    }

    /// Distinct event times in increasing order.
    pub fn event_times(&self) -> Vec<f64> {
        let mut ts: Vec<f64> = self
            .times
            .iter()
            .zip(&self.events)
            .filter(|(_, e)| **e)
            .map(|(t, _)| *t)
            .collect();
        ts.sort_by(f64::total_cmp);
        ts.dedup();
        ts
    }

    /// Number at risk (time >= t) and number of events at exactly t.
    pub fn risk_and_events(&self, t: f64) -> (usize, usize) {
        let mut n = 0;
        let mut d = 0;
        for (&ti, &ei) in self.times.iter().zip(&self.events) {
            if ti >= t {
                n += 1;
                if ti == t && ei {
                    d += 1;
                }
            }
        }
        (n, d)
    }
}

impl From<&Cohort> for SurvSample {
    fn from(c: &Cohort) -> Self {
        SurvSample {
            times: c.times(),
            events: c.events(),
        }
    }
}
