mod common;

use approx::assert_abs_diff_eq;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use survivalkit::nonparam::*;
use survivalkit::sample::SurvSample;

use common::{km_fixture, naive_logrank, KmRowFixture, FEMALE_KM, MALE_KM};

fn check_reference_rows(rows: &[KmRowFixture], tail: f64, s_tol: f64, se_tol: f64) {
    let (t, e) = km_fixture(rows, tail);
    let curve = km_estimate(&SurvSample::new(t, e).unwrap(), 0.95).unwrap();
    assert_eq!(curve.rows.len(), rows.len());
    for (got, &(time, n, _, s, se, lo, hi)) in curve.rows.iter().zip(rows) {
        assert_eq!(got.time, time);
        assert_eq!(got.n_risk, n);
        assert_abs_diff_eq!(got.survival.value(), s, epsilon = s_tol);
        assert_abs_diff_eq!(got.std_err, se, epsilon = se_tol);
        assert_abs_diff_eq!(got.ci_lower.value(), lo, epsilon = 1e-3);
        assert_abs_diff_eq!(got.ci_upper.value(), hi, epsilon = 1e-3);
    }
}

#[test]
fn male_reference_table() {
    check_reference_rows(&MALE_KM, 60.0, 5e-6, 5e-6);
}

#[test]
fn female_reference_table() {
    // printed to four digits
    check_reference_rows(&FEMALE_KM, 130.0, 5e-5, 5e-5);
}

/// Product-limit estimate and Greenwood sum evaluated separately at `t` by
/// counting the risk set from scratch at every earlier event time.
fn naive_km(times: &[f64], events: &[bool], t: f64) -> (f64, f64) {
    let mut ev: Vec<f64> = times.iter().zip(events).filter(|(x, e)| **e && **x <= t).map(|(x, _)| *x).collect();
    ev.sort_by(f64::total_cmp);
    ev.dedup();
    let (mut s, mut g) = (1.0, 0.0);
    for u in ev {
        let n = times.iter().filter(|&&x| x >= u).count() as f64;
        let d = times.iter().zip(events).filter(|(x, e)| **e && **x == u).count() as f64;
        s *= 1.0 - d / n;
        if d < n {
            g += d / (n * (n - d));
        }
    }
    (s, g)
}

#[test]
fn km_matches_direct_product() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..20 {
        let n = rng.random_range(5..80);
        let times: Vec<f64> = (0..n).map(|_| rng.random_range(1..40) as f64).collect();
        let events: Vec<bool> = (0..n).map(|_| rng.random_bool(0.6)).collect();
        let curve = km_estimate(&SurvSample::new(times.clone(), events.clone()).unwrap(), 0.9).unwrap();
        for row in &curve.rows {
            let (s, g) = naive_km(&times, &events, row.time);
            assert_abs_diff_eq!(row.survival.value(), s, epsilon = 1e-12);
            if s > 0.0 {
                assert_abs_diff_eq!(row.std_err, s * g.sqrt(), epsilon = 1e-12);
            }
            assert_eq!(curve.survival_at(row.time), row.survival.value());
        }
    }
}

#[test]
fn median_is_first_time_at_or_below_half() {
    let s = SurvSample::new(vec![1.0, 2.0, 3.0, 4.0], vec![true; 4]).unwrap();
    let c = km_estimate(&s, 0.95).unwrap();
    assert_eq!(c.median(), Some(2.0));
    let s = SurvSample::new(vec![1.0, 2.0, 3.0], vec![true, false, false]).unwrap();
    assert_eq!(km_estimate(&s, 0.95).unwrap().median(), None);
}

#[test]
fn logrank_matches_direct_sum() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..20 {
        let n = 60;
        let times: Vec<f64> = (0..n).map(|_| rng.random_range(1..25) as f64).collect();
        let events: Vec<bool> = (0..n).map(|_| rng.random_bool(0.7)).collect();
        let group: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
        let (a, b) = split(&times, &events, &group);
        let r = logrank(&a, &b).unwrap();
        assert_abs_diff_eq!(r.statistic, naive_logrank(&times, &events, &group), epsilon = 1e-9);
        assert_eq!(r.df, 1);
    }
}

fn split(times: &[f64], events: &[bool], group: &[bool]) -> (SurvSample, SurvSample) {
    let pick = |want: bool| {
        let (t, e): (Vec<f64>, Vec<bool>) = (0..times.len())
            .filter(|&i| group[i] == want)
            .map(|i| (times[i], events[i]))
            .unzip();
        SurvSample::new(t, e).unwrap()
    };
    (pick(true), pick(false))
}

/// Gehan's statistic with the numerator counted pairwise: a pair scores +1
/// when the first-group subject is observed to fail while the other is still
/// at risk, and −1 in the opposite case. The hypergeometric variance is
/// accumulated by recounting the risk set at each event time.
fn naive_gehan(a: &SurvSample, b: &SurvSample) -> f64 {
    let mut num = 0.0;
    for (&ti, &ei) in a.times.iter().zip(&a.events) {
        for (&tj, &ej) in b.times.iter().zip(&b.events) {
            if ei && tj >= ti {
                num += 1.0;
            }
            if ej && ti >= tj {
                num -= 1.0;
            }
        }
    }
    let mut ev: Vec<f64> = a.event_times();
    ev.extend(b.event_times());
    ev.sort_by(f64::total_cmp);
    ev.dedup();
    let mut var = 0.0;
    for t in ev {
        let na = a.times.iter().filter(|&&x| x >= t).count() as f64;
        let nb = b.times.iter().filter(|&&x| x >= t).count() as f64;
        let d = a.times.iter().chain(&b.times).zip(a.events.iter().chain(&b.events))
            .filter(|(x, e)| **e && **x == t)
            .count() as f64;
        let n = na + nb;
        if n > 1.0 {
            var += d * (n - d) * na * nb / (n - 1.0);
        }
    }
    num * num / var
}

#[test]
fn gehan_matches_pairwise_form() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..20 {
        let n = 40;
        let times: Vec<f64> = (0..n).map(|_| rng.random_range(1..15) as f64).collect();
        let events: Vec<bool> = (0..n).map(|_| rng.random_bool(0.7)).collect();
        let group: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
        let (a, b) = split(&times, &events, &group);
        let g = gehan(&a, &b).unwrap();
        assert_abs_diff_eq!(g.statistic, naive_gehan(&a, &b), epsilon = 1e-9 * g.statistic.max(1.0));
    }
}

#[test]
fn gehan_equals_mann_whitney_direction_without_censoring() {
    let a = SurvSample::complete(vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    let b = SurvSample::complete(vec![5.0, 6.0, 7.0, 8.0]).unwrap();
    let g = gehan(&a, &b).unwrap();
    let w = mann_whitney(&a.times, &b.times, MannWhitneyMode::Normal).unwrap();
    assert!(g.p_value.value() < 0.05);
    assert!(w.p_value.value() < 0.05);
    assert_eq!(w.statistic, 0.0);
}

/// Two-sided exact p-value by listing every subset of positions.
fn brute_force_rank_sum(a: &[f64], b: &[f64]) -> f64 {
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let n = pooled.len();
    let rank = |x: f64| {
        let below = pooled.iter().filter(|&&y| y < x).count() as f64;
        let equal = pooled.iter().filter(|&&y| y == x).count() as f64;
        below + (equal + 1.0) / 2.0
    };
    let ranks: Vec<f64> = pooled.iter().map(|&x| rank(x)).collect();
    let na = a.len();
    let center = na as f64 * (n as f64 + 1.0) / 2.0;
    let obs = (ranks[..na].iter().sum::<f64>() - center).abs();
    let (mut hit, mut total) = (0u64, 0u64);
    for mask in 0u32..(1 << n) {
        if mask.count_ones() as usize != na {
            continue;
        }
        total += 1;
        let s: f64 = (0..n).filter(|i| mask & (1 << i) != 0).map(|i| ranks[i]).sum();
        if (s - center).abs() >= obs - 1e-9 {
            hit += 1;
        }
    }
    hit as f64 / total as f64
}

#[test]
fn exact_mann_whitney_matches_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..25 {
        let na = rng.random_range(1..8);
        let nb = rng.random_range(1..8);
        let a: Vec<f64> = (0..na).map(|_| rng.random_range(0..6) as f64).collect();
        let b: Vec<f64> = (0..nb).map(|_| rng.random_range(0..6) as f64).collect();
        let r = mann_whitney(&a, &b, MannWhitneyMode::Exact).unwrap();
        assert!(r.exact);
        assert_abs_diff_eq!(r.p_value.value(), brute_force_rank_sum(&a, &b), epsilon = 1e-12);
        let u: f64 = a
            .iter()
            .flat_map(|x| b.iter().map(move |y| if x > y { 1.0 } else if x == y { 0.5 } else { 0.0 }))
            .sum();
        assert_abs_diff_eq!(r.statistic, u, epsilon = 1e-12);
    }
}

#[test]
fn auto_mode_switches_at_limit() {
    let a: Vec<f64> = (0..10).map(f64::from).collect();
    let b: Vec<f64> = (0..10).map(|i| f64::from(i) + 0.5).collect();
    assert!(mann_whitney(&a, &b, MannWhitneyMode::Auto).unwrap().exact);
    let b: Vec<f64> = (0..11).map(|i| f64::from(i) + 0.5).collect();
    let r = mann_whitney(&a, &b, MannWhitneyMode::Auto).unwrap();
    assert!(!r.exact);
    let exact = mann_whitney(&a, &b, MannWhitneyMode::Exact).unwrap();
    assert_abs_diff_eq!(r.p_value.value(), exact.p_value.value(), epsilon = 0.02);
}

fn arb_sample() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
    (1usize..60).prop_flat_map(|n| (prop::collection::vec(1u32..50, n), prop::collection::vec(any::<bool>(), n)))
        .prop_map(|(t, e)| (t.into_iter().map(f64::from).collect(), e))
}

proptest! {
    #[test]
    fn km_is_a_monotone_survival_curve((t, e) in arb_sample(), conf in 0.5f64..0.99) {
        let c = km_estimate(&SurvSample::new(t, e).unwrap(), conf).unwrap();
        let mut prev = 1.0;
        for r in &c.rows {
            let s = r.survival.value();
            prop_assert!(s <= prev + 1e-15);
            prop_assert!(r.ci_lower.value() <= s + 1e-15 && s <= r.ci_upper.value() + 1e-15);
            prop_assert!(r.n_event >= 1 && r.n_event <= r.n_risk);
            prev = s;
        }
    }

    #[test]
    fn logrank_is_symmetric((t, e) in arb_sample(), cut in 0.1f64..0.9) {
        let k = ((t.len() as f64) * cut) as usize;
        prop_assume!(k > 0 && k < t.len());
        let a = SurvSample::new(t[..k].to_vec(), e[..k].to_vec()).unwrap();
        let b = SurvSample::new(t[k..].to_vec(), e[k..].to_vec()).unwrap();
        if let (Ok(x), Ok(y)) = (logrank(&a, &b), logrank(&b, &a)) {
            prop_assert!((x.statistic - y.statistic).abs() <= 1e-9 * x.statistic.max(1.0));
        }
        if let (Ok(x), Ok(y)) = (gehan(&a, &b), gehan(&b, &a)) {
            prop_assert!((x.statistic - y.statistic).abs() <= 1e-9 * x.statistic.max(1.0));
        }
    }

    #[test]
    fn mann_whitney_u_statistics_add_up(
        a in prop::collection::vec(0u8..20, 1..15),
        b in prop::collection::vec(0u8..20, 1..15),
    ) {
        let a: Vec<f64> = a.into_iter().map(f64::from).collect();
        let b: Vec<f64> = b.into_iter().map(f64::from).collect();
        let x = mann_whitney(&a, &b, MannWhitneyMode::Auto).unwrap();
        let y = mann_whitney(&b, &a, MannWhitneyMode::Auto).unwrap();
        prop_assert!((x.statistic + y.statistic - (a.len() * b.len()) as f64).abs() < 1e-9);
        prop_assert!((x.p_value.value() - y.p_value.value()).abs() < 1e-12);
        prop_assert!(x.p_value.value() > 0.0);
    }
}
