//! Special functions and rank utilities shared by the statistical modules.
//!
//! The error function and the regularized incomplete gamma function come from
//! `statrs`; everything built on top of them (normal CDF and quantile,
//! chi-square tail, Kolmogorov and Anderson-Darling limiting laws, midranks)
//! lives here.

use std::cmp::Ordering;
use std::f64::consts::{PI, SQRT_2};

use serde::{Deserialize, Serialize};
use statrs::function::{erf, gamma};

use crate::error::{Error, Result};

/// A probability in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Probability(f64);

impl Probability {
    pub const ZERO: Probability = Probability(0.0);
    pub const ONE: Probability = Probability(1.0);

    pub fn new(value: f64) -> Result<Self> {
        if (0.0..=1.0).contains(&value) {
            Ok(Probability(value))
        } else {
            Err(Error::domain(format!("{value} is not a probability")))
        }
    }

    /// Clamps rounding spill-over (e.g. `1 + 1e-16`) back into `[0, 1]`.
    pub(crate) fn clamped(value: f64) -> Self {
        debug_assert!(!value.is_nan());
        Probability(value.clamp(0.0, 1.0))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for Probability {
    type Error = Error;

    fn try_from(value: f64) -> Result<Self> {
        Probability::new(value)
    }
}

impl From<Probability> for f64 {
    fn from(p: Probability) -> f64 {
        p.0
    }
}

/// Standard normal density.
pub fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * PI).sqrt()
}

/// Standard normal CDF `Φ(z)`.
pub fn normal_cdf(z: f64) -> Result<Probability> {
    if !z.is_finite() {
        return Err(Error::domain(format!("normal_cdf argument {z} is not finite")));
    }
    Ok(Probability::clamped(phi(z)))
}

// erfc on the side of the tail keeps relative accuracy far from zero.
pub(crate) fn phi(z: f64) -> f64 {
    0.5 * erf::erfc(-z / SQRT_2)
}

/// Upper tail `1 - Φ(z)` without cancellation.
pub(crate) fn phi_upper(z: f64) -> f64 {
    0.5 * erf::erfc(z / SQRT_2)
}

/// Inverse of the standard normal CDF, for `p` in `(0, 1)`.
pub fn normal_quantile(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::domain(format!("normal quantile needs p in (0,1), got {p}")));
    }
    let mut z = -SQRT_2 * erf::erfc_inv(2.0 * p);
    // One Newton polish against our own CDF.
    let d = normal_pdf(z);
    if d > 1e-300 {
        let err = if p < 0.5 { phi(z) - p } else { (1.0 - p) - phi_upper(z) };
        z -= err / d;
    }
    Ok(z)
}

/// Chi-square survival function `P(χ²_df > x)`.
pub fn chisq_sf(x: f64, df: u32) -> Result<Probability> {
    if df < 1 {
        return Err(Error::domain("chi-square degrees of freedom must be >= 1"));
    }
    if !(x >= 0.0) || !x.is_finite() {
        return Err(Error::domain(format!("chi-square statistic {x} must be finite and >= 0")));
    }
    if x == 0.0 {
        return Ok(Probability::ONE);
    }
    let q = gamma::checked_gamma_ur(df as f64 / 2.0, x / 2.0)
        .map_err(|e| Error::domain(format!("incomplete gamma: {e}")))?;
    Ok(Probability::clamped(q))
}

/// Average ranks (1-based), ties sharing the mean of the ranks they span.
pub fn midranks(values: &[f64]) -> Result<Vec<f64>> {
    if values.is_empty() {
        return Err(Error::domain("midranks of an empty list"));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::domain("midranks requires finite values"));
    }
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap_or(Ordering::Equal));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && values[order[j]] == values[order[i]] {
            j += 1;
        }
        // positions i..j (0-based) hold ranks i+1..=j
        let avg = (i + 1 + j) as f64 / 2.0;
        for &k in &order[i..j] {
            ranks[k] = avg;
        }
        i = j;
    }
    Ok(ranks)
}

/// Sizes of the tie groups in `values` (only groups of size > 1 matter to
/// tie corrections, but all are returned).
pub(crate) fn tie_groups(values: &[f64]) -> Vec<usize> {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap_or(Ordering::Equal));
    let mut out = Vec::new();
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i + 1;
        while j < sorted.len() && sorted[j] == sorted[i] {
            j += 1;
        }
        out.push(j - i);
        i = j;
    }
    out
}

/// Survival function of the Kolmogorov limiting distribution,
/// `P(K > lambda)`.
pub fn kolmogorov_sf(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    if lambda < 1.18 {
        // Theta-function form converges fast for small arguments.
        let y = -PI * PI / (8.0 * lambda * lambda);
        let mut s = 0.0;
        for k in 0..20 {
            let m = (2 * k + 1) as f64;
            let term = (y * m * m).exp();
            s += term;
            if term < 1e-17 * s {
                break;
            }
        }
        (1.0 - (2.0 * PI).sqrt() / lambda * s).clamp(0.0, 1.0)
    } else {
        let mut s = 0.0;
        for k in 1..=100 {
            let kf = k as f64;
            let term = (-2.0 * kf * kf * lambda * lambda).exp();
            s += if k % 2 == 1 { term } else { -term };
            if term < 1e-17 {
                break;
            }
        }
        (2.0 * s).clamp(0.0, 1.0)
    }
}

/// Asymptotic CDF of the Anderson-Darling statistic with fully specified
/// null distribution, `P(A² <= z)` as n → ∞ (Marsaglia & Marsaglia 2004).
fn ad_inf_cdf(z: f64) -> f64 {
    if z <= 0.0 {
        return 0.0;
    }
    if z < 2.0 {
        (-1.2337141 / z).exp() / z.sqrt()
            * (2.00012
                + (0.247105
                    - (0.0649821 - (0.0347962 - (0.011672 - 0.00168691 * z) * z) * z) * z)
                    * z)
    } else {
        (-(1.0776
            - (2.30695 - (0.43424 - (0.082433 - (0.008056 - 0.0003146 * z) * z) * z) * z) * z)
            .exp())
        .exp()
    }
}

/// Finite-sample correction to the asymptotic AD CDF.
fn ad_errfix(n: f64, x: f64) -> f64 {
    if x > 0.8 {
        return (-130.2137
            + (745.2337 - (1705.091 - (1950.646 - (1116.360 - 255.7844 * x) * x) * x) * x) * x)
            / n;
    }
    let c = 0.01265 + 0.1757 / n;
    if x < c {
        let t = x / c;
        let t = t.sqrt() * (1.0 - t) * (49.0 * t - 102.0);
        return t * (0.0037 / (n * n) + 0.00078 / n + 0.00006) / n;
    }
    let t = (x - c) / (0.8 - c);
    let t = -0.00022633
        + (6.54034 - (14.6538 - (14.458 - (8.259 - 1.91864 * t) * t) * t) * t) * t;
    t * (0.04213 + 0.01365 / n) / n
}

/// Upper-tail probability of the Anderson-Darling statistic for sample size
/// `n` when the null distribution is fully specified.
pub fn anderson_darling_sf(a2: f64, n: usize) -> f64 {
    let x = ad_inf_cdf(a2);
    let cdf = (x + ad_errfix(n.max(1) as f64, x)).clamp(0.0, 1.0);
    1.0 - cdf
}

/// Adaptive Simpson quadrature; used by tests and by the integration-based
/// checks exposed to callers.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> f64 {
    fn simpson<F: Fn(f64) -> f64>(f: &F, a: f64, fa: f64, b: f64, fb: f64) -> (f64, f64, f64) {
        let m = 0.5 * (a + b);
        let fm = f(m);
        (m, fm, (b - a) / 6.0 * (fa + 4.0 * fm + fb))
    }
    #[allow(clippy::too_many_arguments)]
    fn recurse<F: Fn(f64) -> f64>(
        f: &F,
        a: f64,
        fa: f64,
        b: f64,
        fb: f64,
        m: f64,
        fm: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let (lm, flm, left) = simpson(f, a, fa, m, fm);
        let (rm, frm, right) = simpson(f, m, fm, b, fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            return left + right + delta / 15.0;
        }
        recurse(f, a, fa, m, fm, lm, flm, left, tol / 2.0, depth - 1)
            + recurse(f, m, fm, b, fb, rm, frm, right, tol / 2.0, depth - 1)
    }
    let fa = f(a);
    let fb = f(b);
    let (m, fm, whole) = simpson(&f, a, fa, b, fb);
    recurse(&f, a, fa, b, fb, m, fm, whole, tol, 50)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn normal_cdf_anchors() {
        assert_eq!(normal_cdf(0.0).unwrap().value(), 0.5);
        assert_abs_diff_eq!(normal_cdf(1.959964).unwrap().value(), 0.975, epsilon = 1e-6);
        assert!(normal_cdf(f64::NAN).is_err());
        assert!(normal_cdf(f64::INFINITY).is_err());
    }

    #[test]
    fn chisq_sf_edges() {
        assert_eq!(chisq_sf(0.0, 1).unwrap().value(), 1.0);
        assert!(chisq_sf(-1.0, 1).is_err());
        assert!(chisq_sf(1.0, 0).is_err());
        // df = 2 has the closed form exp(-x/2)
        for x in [0.1, 1.0, 5.991465, 30.0, 200.0] {
            let exact = (-x / 2.0f64).exp();
            let got = chisq_sf(x, 2).unwrap().value();
            assert!(((got - exact) / exact).abs() < 1e-10, "x={x}");
        }
    }

    #[test]
    fn midranks_examples() {
        assert_eq!(midranks(&[5.0]).unwrap(), vec![1.0]);
        assert_eq!(midranks(&[3.0, 1.0, 3.0]).unwrap(), vec![2.5, 1.0, 2.5]);
        assert_eq!(midranks(&[1.0, 2.0, 3.0, 4.0]).unwrap(), vec![1.0, 2.0, 3.0, 4.0]);
        assert!(midranks(&[]).is_err());
    }

    #[test]
    fn quantile_inverts_cdf() {
        for &p in &[1e-10, 0.001, 0.025, 0.3, 0.5, 0.7, 0.975, 0.999999] {
            let z = normal_quantile(p).unwrap();
            assert_abs_diff_eq!(phi(z), p, epsilon = 1e-14_f64.max(p * 1e-12));
        }
        assert!(normal_quantile(0.0).is_err());
        assert!(normal_quantile(1.0).is_err());
    }

    #[test]
    fn kolmogorov_branches_agree() {
        // both series are valid around the switch point
        let lam: f64 = 1.18;
        let mut alt = 0.0;
        for k in 1..=100 {
            let kf = k as f64;
            let t = (-2.0 * kf * kf * lam * lam).exp();
            alt += if k % 2 == 1 { t } else { -t };
        }
        assert_abs_diff_eq!(kolmogorov_sf(lam - 1e-12), 2.0 * alt, epsilon = 1e-10);
        // classic critical value: P(K > 1.358) ≈ 0.05
        assert_abs_diff_eq!(kolmogorov_sf(1.3581), 0.05, epsilon = 1e-4);
    }

    #[test]
    fn anderson_darling_critical_value() {
        // 2.492 is the 5% point of the case-0 limiting distribution
        assert_abs_diff_eq!(anderson_darling_sf(2.492, 1000), 0.05, epsilon = 1e-3);
        assert_abs_diff_eq!(anderson_darling_sf(3.857, 1000), 0.01, epsilon = 5e-4);
    }

    #[test]
    fn simpson_integrates_polynomials() {
        assert_abs_diff_eq!(integrate(|x| x * x, 0.0, 3.0, 1e-12), 9.0, epsilon = 1e-10);
    }
}
