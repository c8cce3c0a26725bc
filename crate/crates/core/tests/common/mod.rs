#![allow(dead_code)]

use std::collections::BTreeMap;

use survivalkit::dataset::{Cohort, Gender, Side, SurvivalRecord};

/// Cohort whose covariates live in extra numeric columns.
pub fn cohort_with(times: &[f64], events: &[bool], covariates: &[(&str, &[f64])]) -> Cohort {
    let records = times
        .iter()
        .zip(events)
        .enumerate()
        .map(|(i, (&t, &e))| {
            let extra: BTreeMap<String, String> = covariates
                .iter()
                .map(|(name, xs)| (name.to_string(), format!("{:?}", xs[i])))
                .collect();
            SurvivalRecord {
                id: format!("s{i}"),
                age: Some(60.0),
                age_at_implant: 60.0,
                gender: Gender::Male,
                survival_months: t,
                event: e,
                initial_side: Side::Bilateral,
                n_revisions: 0,
                extra,
            }
        })
        .collect();
    Cohort::new("test", records).unwrap()
}

/// Partial log-likelihood by direct summation over risk sets, one
/// covariate vector per subject. Independent of the library's sweep.
pub fn naive_partial_loglik(x: &[Vec<f64>], times: &[f64], events: &[bool], beta: &[f64], efron: bool) -> f64 {
    let eta: Vec<f64> = x
        .iter()
        .map(|xi| xi.iter().zip(beta).map(|(a, b)| a * b).sum())
        .collect();
    let mut distinct: Vec<f64> = times
        .iter()
        .zip(events)
        .filter(|(_, e)| **e)
        .map(|(t, _)| *t)
        .collect();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    let mut ll = 0.0;
    for t in distinct {
        let dead: Vec<usize> = (0..times.len()).filter(|&i| times[i] == t && events[i]).collect();
        let risk: f64 = (0..times.len()).filter(|&i| times[i] >= t).map(|i| eta[i].exp()).sum();
        let tied: f64 = dead.iter().map(|&i| eta[i].exp()).sum();
        let d = dead.len() as f64;
        for (l, &i) in dead.iter().enumerate() {
            ll += eta[i];
            let frac = if efron { l as f64 / d } else { 0.0 };
            ll -= (risk - frac * tied).ln();
        }
    }
    ll
}

/// Log-rank chi-square with hypergeometric variance, written out directly.
pub fn naive_logrank(times: &[f64], events: &[bool], group: &[bool]) -> f64 {
    let mut distinct: Vec<f64> = times
        .iter()
        .zip(events)
        .filter(|(_, e)| **e)
        .map(|(t, _)| *t)
        .collect();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    let (mut o_minus_e, mut var) = (0.0, 0.0);
    for t in distinct {
        let at_risk: Vec<usize> = (0..times.len()).filter(|&i| times[i] >= t).collect();
        let n = at_risk.len() as f64;
        let n1 = at_risk.iter().filter(|&&i| group[i]).count() as f64;
        let d = at_risk.iter().filter(|&&i| times[i] == t && events[i]).count() as f64;
        let d1 = at_risk.iter().filter(|&&i| times[i] == t && events[i] && group[i]).count() as f64;
        o_minus_e += d1 - d * n1 / n;
        if n > 1.0 {
            var += d * (n1 / n) * (1.0 - n1 / n) * (n - d) / (n - 1.0);
        }
    }
    o_minus_e * o_minus_e / var
}

/// One reference Kaplan–Meier row:
/// `(time, n_risk, n_event, survival, std_err, lower, upper)`.
pub type KmRowFixture = (f64, usize, usize, f64, f64, f64, f64);

pub const MALE_KM: [KmRowFixture; 15] = [
    (3.0, 109, 1, 0.99083, 0.00913, 0.97309, 1.0000),
    (4.0, 108, 2, 0.97248, 0.01567, 0.94224, 1.0000),
    (7.0, 106, 1, 0.96330, 0.01801, 0.92864, 0.9993),
    (13.0, 105, 1, 0.95413, 0.02004, 0.91565, 0.9942),
    (16.0, 104, 1, 0.94495, 0.02185, 0.90309, 0.9888),
    (19.0, 103, 1, 0.93578, 0.02348, 0.89087, 0.9830),
    (22.0, 102, 1, 0.92661, 0.02498, 0.87892, 0.9769),
    (33.0, 101, 1, 0.91743, 0.02636, 0.86719, 0.9706),
    (36.0, 100, 1, 0.90826, 0.02765, 0.85565, 0.9641),
    (39.0, 99, 1, 0.89908, 0.02885, 0.84428, 0.9574),
    (44.0, 98, 1, 0.88991, 0.02998, 0.83305, 0.9507),
    (46.0, 97, 1, 0.88073, 0.03104, 0.82194, 0.9437),
    (47.0, 96, 3, 0.85321, 0.03390, 0.78929, 0.9223),
    (48.0, 93, 1, 0.84404, 0.03475, 0.77860, 0.9150),
    (50.0, 92, 1, 0.83486, 0.03556, 0.76799, 0.9076),
];

pub const FEMALE_KM: [KmRowFixture; 15] = [
    (6.0, 39, 1, 0.9744, 0.0253, 0.9260, 1.000),
    (12.0, 38, 1, 0.9487, 0.0353, 0.8820, 1.000),
    (40.0, 37, 2, 0.8974, 0.0486, 0.8071, 0.998),
    (47.0, 35, 1, 0.8718, 0.0535, 0.7729, 0.983),
    (57.0, 34, 1, 0.8462, 0.0578, 0.7402, 0.967),
    (67.0, 33, 1, 0.8205, 0.0615, 0.7085, 0.950),
    (74.0, 32, 1, 0.7949, 0.0647, 0.6777, 0.932),
    (76.0, 31, 2, 0.7692, 0.0675, 0.6477, 0.914),
    (77.0, 30, 1, 0.7436, 0.0699, 0.6184, 0.894),
    (80.0, 29, 2, 0.6923, 0.0739, 0.5616, 0.853),
    (93.0, 27, 1, 0.6667, 0.0755, 0.5340, 0.832),
    (96.0, 26, 2, 0.6154, 0.0779, 0.4802, 0.789),
    (106.0, 24, 1, 0.5897, 0.0788, 0.4539, 0.766),
    (111.0, 23, 1, 0.5641, 0.0794, 0.4281, 0.743),
    (118.0, 22, 1, 0.5385, 0.0798, 0.4027, 0.720),
];

/// Times and event flags replaying a reference risk stream: events at each
/// row's time equal to the drop in the number at risk (the printed count on
/// the last row), and everyone still at risk afterwards censored at `tail`.
///
/// The female row at t = 76 prints 2 events, but both its survival value and
/// the next row's risk set imply 1.
pub fn km_fixture(rows: &[KmRowFixture], tail: f64) -> (Vec<f64>, Vec<bool>) {
    let mut times = Vec::new();
    let mut events = Vec::new();
    for (i, &(t, n, d, ..)) in rows.iter().enumerate() {
        let d = rows.get(i + 1).map_or(d, |next| n - next.1);
        times.extend(std::iter::repeat(t).take(d));
        events.extend(std::iter::repeat(true).take(d));
    }
    let (_, n_last, d_last, ..) = rows[rows.len() - 1];
    let rest = n_last - d_last;
    times.extend(std::iter::repeat(tail).take(rest));
    events.extend(std::iter::repeat(false).take(rest));
    (times, events)
}
