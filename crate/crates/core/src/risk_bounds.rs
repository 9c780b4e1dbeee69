//! Hoeffding–Bentkus machinery for bounded risks.
//!
//! A calibration set of `n` i.i.d. risks in `[0, 1]` with empirical mean `r̂`
//! certifies, with probability at least `1 − δ`, that the true risk does not
//! exceed
//!
//! ```text
//! α̂ = min{ h⁻¹(ln(1/δ)/n; r̂), Φ⁻¹_bin(δ/e; n, r̂) }
//! ```
//!
//! where `h` is the Bernoulli KL divergence and `Φ⁻¹_bin` inverts the
//! binomial CDF in its success probability. The same two tails give the
//! p-values used for configuration search.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Absolute tolerance of every bisection in this crate.
pub const BISECTION_TOL: f64 = 1e-10;
/// Iteration cap of every bisection in this crate.
pub const BISECTION_MAX_ITER: usize = 200;

/// Slack for the Bernoulli-feasibility sanity check on `v_hat`.
const VARIANCE_FEASIBILITY_SLACK: f64 = 1e-9;

/// Per-configuration calibration statistics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSummary {
    pub n_cal: usize,
    pub r_hat: f64,
    pub v_hat: f64,
    pub delta: f64,
}

impl CalibrationSummary {
    pub fn new(n_cal: usize, r_hat: f64, v_hat: f64, delta: f64) -> Result<Self> {
        if n_cal == 0 {
            return Err(Error::domain("n_cal must be at least 1"));
        }
        if !(0.0..=1.0).contains(&r_hat) {
            return Err(Error::domain(format!("r_hat {r_hat} outside [0, 1]")));
        }
        if !(0.0..=1.0).contains(&v_hat) {
            return Err(Error::domain(format!("v_hat {v_hat} outside [0, 1]")));
        }
        check_open_unit("delta", delta)?;
        Ok(Self {
            n_cal,
            r_hat,
            v_hat,
            delta,
        })
    }

    /// Summary without variance information (`v_hat = 0`).
    pub fn from_mean(n_cal: usize, r_hat: f64, delta: f64) -> Result<Self> {
        Self::new(n_cal, r_hat, 0.0, delta)
    }

    /// Whether `v_hat` is attainable by risks in `[0, 1]` with mean `r_hat`.
    ///
    /// The largest unbiased variance of `n` values in `[0, 1]` with mean `r`
    /// is `r(1 − r)·n/(n − 1)`. Exceeding it signals inconsistent inputs; this
    /// is reported as a warning by callers, not an error.
    pub fn variance_is_feasible(&self) -> bool {
        if self.n_cal < 2 {
            return self.v_hat == 0.0;
        }
        let n = self.n_cal as f64;
        self.v_hat <= self.r_hat * (1.0 - self.r_hat) * n / (n - 1.0) + VARIANCE_FEASIBILITY_SLACK
    }

    pub(crate) fn require_variance(&self) -> Result<()> {
        if self.n_cal < 2 {
            return Err(Error::domain(
                "at least two calibration samples are needed for variance terms",
            ));
        }
        Ok(())
    }
}

/// Which inequality produced the smaller bound.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundBranch {
    Hoeffding,
    Binomial,
}

/// A Hoeffding–Bentkus upper bound together with both of its branches.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HbBound {
    pub alpha: f64,
    pub hoeffding: f64,
    pub binomial: f64,
    pub branch: BoundBranch,
}

/// Bernoulli KL divergence `h(a, b) = a ln(a/b) + (1 − a) ln((1 − a)/(1 − b))`.
pub fn bernoulli_kl(a: f64, b: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&a) {
        return Err(Error::domain(format!("a = {a} outside [0, 1]")));
    }
    if !(b > 0.0 && b < 1.0) {
        return Err(Error::domain(format!("b = {b} outside (0, 1)")));
    }
    Ok(kl_unchecked(a, b))
}

// 0·ln 0 := 0 at both endpoints.
fn kl_unchecked(a: f64, b: f64) -> f64 {
    let upper = if a > 0.0 { a * (a / b).ln() } else { 0.0 };
    let lower = if a < 1.0 {
        (1.0 - a) * ((1.0 - a) / (1.0 - b)).ln()
    } else {
        0.0
    };
    (upper + lower).max(0.0)
}

/// Partial inverse of `h` on its increasing branch: the `b ∈ [a, 1]` with
/// `h(a, b) = t`.
///
/// Returns the upper end of the final bisection bracket, so the result never
/// undershoots the exact root by more than [`BISECTION_TOL`].
pub fn h_partial_inverse(t: f64, a: f64) -> Result<f64> {
    if t.is_nan() || t < 0.0 {
        return Err(Error::domain(format!("t = {t} must be nonnegative")));
    }
    if !(0.0..=1.0).contains(&a) {
        return Err(Error::domain(format!("a = {a} outside [0, 1]")));
    }
    if a >= 1.0 {
        return Ok(1.0);
    }
    if t == 0.0 {
        return Ok(a);
    }
    let (mut lo, mut hi) = (a, 1.0);
    for _ in 0..BISECTION_MAX_ITER {
        if hi - lo <= BISECTION_TOL {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if mid >= 1.0 || kl_unchecked(a, mid) >= t {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// `P[Bin(n, p) ≤ k]`, summed exactly in log space.
///
/// `k < 0` gives 0 and `k ≥ n` gives 1.
pub fn binomial_cdf(k: i64, n: u64, p: f64) -> Result<f64> {
    if n == 0 {
        return Err(Error::domain("n must be positive"));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::domain(format!("p = {p} outside [0, 1]")));
    }
    Ok(binomial_cdf_unchecked(k, n, p))
}

pub(crate) fn binomial_cdf_unchecked(k: i64, n: u64, p: f64) -> f64 {
    if k < 0 {
        return 0.0;
    }
    if k as u64 >= n {
        return 1.0;
    }
    if p <= 0.0 {
        return 1.0;
    }
    if p >= 1.0 {
        return 0.0;
    }
    let k = k as u64;
    let nf = n as f64;
    let log_odds = p.ln() - (-p).ln_1p();
    // Walk the log-pmf recurrence and accumulate with a running maximum.
    let mut log_term = nf * (-p).ln_1p();
    let mut max = log_term;
    let mut scaled_sum = 1.0;
    for i in 0..k {
        let fi = i as f64;
        log_term += ((nf - fi) / (fi + 1.0)).ln() + log_odds;
        if log_term > max {
            scaled_sum = scaled_sum * (max - log_term).exp() + 1.0;
            max = log_term;
        } else {
            scaled_sum += (log_term - max).exp();
        }
    }
    (max + scaled_sum.ln()).exp().clamp(0.0, 1.0)
}

/// `⌈n·r̂⌉`, snapping products within 1e−9 of an integer to that integer so
/// that means computed as `count / n` recover their count.
pub fn ceil_count(n: u64, r_hat: f64) -> i64 {
    let x = n as f64 * r_hat;
    let nearest = x.round();
    if (x - nearest).abs() <= 1e-9 * nearest.abs().max(1.0) {
        nearest as i64
    } else {
        x.ceil() as i64
    }
}

/// The `p` with `P[Bin(n, p) ≤ ⌈n·r̂⌉] = target`.
///
/// Returns 1 when `⌈n·r̂⌉ = n`, where the CDF is identically 1.
pub fn binomial_cdf_inverse_p(target: f64, n: u64, r_hat: f64) -> Result<f64> {
    check_open_unit("target", target)?;
    if n == 0 {
        return Err(Error::domain("n must be positive"));
    }
    if !(0.0..=1.0).contains(&r_hat) {
        return Err(Error::domain(format!("r_hat = {r_hat} outside [0, 1]")));
    }
    let k = ceil_count(n, r_hat);
    if k as u64 >= n {
        return Ok(1.0);
    }
    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    for _ in 0..BISECTION_MAX_ITER {
        if hi - lo <= BISECTION_TOL {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if binomial_cdf_unchecked(k, n, mid) <= target {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// Hoeffding–Bentkus upper bound with an explicit KL budget and binomial tail
/// target: `min{h⁻¹(kl_budget; r̂), Φ⁻¹_bin(tail_target; n, r̂)}`.
///
/// The unshifted bound uses `(ln(1/δ)/n, δ/e)`; the shifted bound uses
/// `(ln(8/δ)/n, δ/(8e))`.
pub fn hb_upper_bound(n: usize, r_hat: f64, kl_budget: f64, tail_target: f64) -> Result<HbBound> {
    if n == 0 {
        return Err(Error::domain("n must be positive"));
    }
    let hoeffding = h_partial_inverse(kl_budget, r_hat)?;
    let binomial = binomial_cdf_inverse_p(tail_target, n as u64, r_hat)?;
    let (raw, branch) = if hoeffding <= binomial {
        (hoeffding, BoundBranch::Hoeffding)
    } else {
        (binomial, BoundBranch::Binomial)
    };
    Ok(HbBound {
        alpha: raw.clamp(r_hat, 1.0),
        hoeffding,
        binomial,
        branch,
    })
}

/// Conformal generation risk `α̂` of a calibration summary.
pub fn conformal_risk(summary: &CalibrationSummary) -> Result<f64> {
    Ok(conformal_risk_detailed(summary)?.alpha)
}

/// [`conformal_risk`] with both branches exposed.
pub fn conformal_risk_detailed(summary: &CalibrationSummary) -> Result<HbBound> {
    let CalibrationSummary {
        n_cal, r_hat, delta, ..
    } = *summary;
    check_open_unit("delta", delta)?;
    let kl_budget = (1.0 / delta).ln() / n_cal as f64;
    hb_upper_bound(n_cal, r_hat, kl_budget, delta / std::f64::consts::E)
}

/// Hoeffding–Bentkus p-value for the null hypothesis "true risk > alpha".
///
/// `min{exp(−n·h(r̂, α)), e·P[Bin(n, α) ≤ ⌈n·r̂⌉]}`, where the exponential
/// branch is 1 when `r̂ > α`.
pub fn hb_p_value(n: usize, r_hat: f64, alpha: f64) -> Result<f64> {
    if n == 0 {
        return Err(Error::domain("n must be positive"));
    }
    check_open_unit("alpha", alpha)?;
    if !(0.0..=1.0).contains(&r_hat) {
        return Err(Error::domain(format!("r_hat = {r_hat} outside [0, 1]")));
    }
    let hoeffding = if r_hat <= alpha {
        (-(n as f64) * kl_unchecked(r_hat, alpha)).exp()
    } else {
        1.0
    };
    let k = ceil_count(n as u64, r_hat);
    let bentkus = std::f64::consts::E * binomial_cdf_unchecked(k, n as u64, alpha);
    Ok(hoeffding.min(bentkus).clamp(0.0, 1.0))
}

pub(crate) fn check_open_unit(name: &str, x: f64) -> Result<()> {
    if x > 0.0 && x < 1.0 {
        Ok(())
    } else {
        Err(Error::domain(format!("{name} = {x} outside (0, 1)")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{E, LN_2};

    fn summary(n: usize, r: f64, delta: f64) -> CalibrationSummary {
        CalibrationSummary::from_mean(n, r, delta).unwrap()
    }

    #[test]
    fn kl_examples() {
        assert_eq!(bernoulli_kl(0.2, 0.2).unwrap(), 0.0);
        assert!((bernoulli_kl(0.0, 0.5).unwrap() - LN_2).abs() < 1e-15);
        // 40-digit evaluation of the formula.
        assert!((bernoulli_kl(0.1, 0.3).unwrap() - 0.116_321_756_586_004_5).abs() < 1e-14);
        assert!((bernoulli_kl(1.0, 0.25).unwrap() - 4f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn kl_rejects_boundary_b() {
        assert!(matches!(bernoulli_kl(0.1, 0.0), Err(Error::Domain(_))));
        assert!(matches!(bernoulli_kl(0.1, 1.0), Err(Error::Domain(_))));
        assert!(bernoulli_kl(1.5, 0.5).is_err());
    }

    #[test]
    fn inverse_examples() {
        assert_eq!(h_partial_inverse(0.0, 0.3).unwrap(), 0.3);
        assert!((h_partial_inverse(LN_2, 0.0).unwrap() - 0.5).abs() < 1e-10);
        for t in [0.01f64, 0.3, 2.0, 10.0] {
            let closed = 1.0 - (-t).exp();
            assert!((h_partial_inverse(t, 0.0).unwrap() - closed).abs() <= 1.1e-10);
        }
        let b = h_partial_inverse(0.116_321_756_586_004_5, 0.1).unwrap();
        assert!((b - 0.3).abs() < 1e-9);
        assert_eq!(h_partial_inverse(5.0, 1.0).unwrap(), 1.0);
        assert!(h_partial_inverse(-1e-3, 0.2).is_err());
    }

    #[test]
    fn inverse_is_increasing_in_t() {
        let mut prev = 0.2;
        for i in 1..200 {
            let b = h_partial_inverse(i as f64 * 0.01, 0.2).unwrap();
            assert!(b > prev);
            prev = b;
        }
    }

    #[test]
    fn cdf_examples() {
        assert_eq!(binomial_cdf(3, 10, 0.0).unwrap(), 1.0);
        assert_eq!(binomial_cdf(4, 5, 1.0).unwrap(), 0.0);
        assert!((binomial_cdf(3, 10, 0.3).unwrap() - 0.649_610_718_4).abs() < 1e-12);
        assert_eq!(binomial_cdf(-1, 10, 0.3).unwrap(), 0.0);
        assert_eq!(binomial_cdf(10, 10, 0.3).unwrap(), 1.0);
        assert_eq!(binomial_cdf(12, 10, 0.3).unwrap(), 1.0);
        assert!(binomial_cdf(1, 0, 0.3).is_err());
    }

    #[test]
    fn cdf_large_n_does_not_underflow() {
        // Mean 5e5, sd ~500: the CDF one sd below the mean is ~0.159.
        let c = binomial_cdf(499_500, 1_000_000, 0.5).unwrap();
        assert!((c - 0.158_9).abs() < 2e-3, "{c}");
        let tiny = binomial_cdf(10, 1_000_000, 0.5).unwrap();
        assert!((0.0..1e-300).contains(&tiny));
    }

    #[test]
    fn cdf_inverse_examples() {
        assert_eq!(binomial_cdf_inverse_p(0.3, 50, 1.0).unwrap(), 1.0);
        // Bisection cross-checked against a 40-digit oracle.
        let p = binomial_cdf_inverse_p(0.5, 10, 0.3).unwrap();
        assert!((p - 0.355_099_967_912_488_6).abs() < 2e-10);
        assert!((binomial_cdf(3, 10, p).unwrap() - 0.5).abs() < 1e-9);
        let p = binomial_cdf_inverse_p(0.9, 1, 0.0).unwrap();
        assert!((p - 0.1).abs() < 1e-9);
        assert!(binomial_cdf_inverse_p(0.0, 10, 0.3).is_err());
        assert!(binomial_cdf_inverse_p(1.0, 10, 0.3).is_err());
    }

    #[test]
    fn cdf_inverse_matches_fine_grid_scan() {
        // Scan the exact CDF at step 1e-6 around the bisection root.
        let p = binomial_cdf_inverse_p(0.5, 10, 0.3).unwrap();
        let start = ((p - 1e-3) * 1e6).floor() as i64;
        let first = (start..start + 2_000)
            .map(|i| i as f64 * 1e-6)
            .find(|&q| binomial_cdf(3, 10, q).unwrap() <= 0.5)
            .unwrap();
        assert!((first - p).abs() <= 1e-6 + 1e-9);
    }

    #[test]
    fn ceil_count_snaps_float_noise() {
        assert_eq!(ceil_count(10, 0.3), 3);
        assert_eq!(ceil_count(10, 3.0000000000000004 / 10.0), 3);
        assert_eq!(ceil_count(10, 0.31), 4);
        assert_eq!(ceil_count(1000, 0.0), 0);
    }

    #[test]
    fn conformal_risk_examples() {
        assert_eq!(conformal_risk(&summary(100, 1.0, 0.1)).unwrap(), 1.0);

        let d = conformal_risk_detailed(&summary(1000, 0.0, 0.1)).unwrap();
        let h_branch = 1.0 - 10f64.powf(-1.0 / 1000.0);
        assert!((d.hoeffding - h_branch).abs() < 2e-10);
        assert!((d.binomial - 0.003_297_137_557_479_106).abs() < 2e-10);
        assert_eq!(d.branch, BoundBranch::Hoeffding);
        assert!((d.alpha - 0.002_299_936_177_446_683).abs() < 2e-10);

        let d = conformal_risk_detailed(&summary(100, 0.2, 0.1)).unwrap();
        assert!((d.hoeffding - 0.294_179_026_507_334_8).abs() < 2e-10);
        assert!((d.binomial - 0.283_874_410_521_938).abs() < 2e-10);
        assert_eq!(d.branch, BoundBranch::Binomial);
    }

    #[test]
    fn p_value_examples() {
        let p = hb_p_value(10, 0.0, 0.5).unwrap();
        assert!((p - 0.5f64.powi(10)).abs() < 1e-15);
        let p = hb_p_value(50, 0.1, 0.3).unwrap();
        assert!((p - 0.001_964_941_881_124_316_7).abs() < 1e-14);
        // Zero divergence saturates at 1.
        assert_eq!(hb_p_value(40, 0.25, 0.25).unwrap(), 1.0);
        assert!((hb_p_value(40, 0.25, 0.25 + 1e-9).unwrap() - 1.0).abs() < 1e-12);
        // Empirical risk above alpha: only the Bentkus branch is active.
        let p = hb_p_value(20, 0.5, 0.3).unwrap();
        assert_eq!(p, 1.0f64.min(E * binomial_cdf(10, 20, 0.3).unwrap()));
        assert!(hb_p_value(10, 0.1, 1.0).is_err());
        assert!(hb_p_value(10, 0.1, 0.0).is_err());
    }

    #[test]
    fn summary_validation() {
        assert!(CalibrationSummary::new(0, 0.1, 0.0, 0.1).is_err());
        assert!(CalibrationSummary::new(10, 1.1, 0.0, 0.1).is_err());
        assert!(CalibrationSummary::new(10, 0.1, 0.0, 1.0).is_err());
        let s = CalibrationSummary::new(10, 0.5, 0.3, 0.1).unwrap();
        assert!(!s.variance_is_feasible());
        let s = CalibrationSummary::new(2, 0.5, 0.5, 0.1).unwrap();
        assert!(s.variance_is_feasible());
    }
}
