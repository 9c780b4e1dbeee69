//! Conformal risk under bounded Hellinger shift.
//!
//! For a test distribution within Hellinger distance `ρ` of the calibration
//! distribution, the empirical risk is first inflated to a worst-case value
//! `R̄_ρ` built from the Gramian expectation bound plus finite-sample terms for
//! the mean and variance estimates, and the Hoeffding–Bentkus bound is then
//! evaluated at `R̄_ρ` with the tighter budgets `ln(8/δ)/N` and `δ/(8e)`.
//!
//! Hellinger distance here is `H(P, Q) = √(1 − Σ √(p_i q_i))`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::risk_bounds::{hb_upper_bound, BoundBranch, CalibrationSummary};

/// Exponent used in the feasible-radius condition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RadiusVariant {
    /// Exponent −1/2, the condition under which the Gramian bound holds.
    #[default]
    Lemma,
    /// Exponent −2, a looser radius.
    Theorem,
}

impl RadiusVariant {
    fn exponent(self) -> f64 {
        match self {
            RadiusVariant::Lemma => -0.5,
            RadiusVariant::Theorem => -2.0,
        }
    }
}

impl std::str::FromStr for RadiusVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lemma" => Ok(RadiusVariant::Lemma),
            "theorem" => Ok(RadiusVariant::Theorem),
            other => Err(Error::domain(format!(
                "unknown radius variant '{other}' (expected 'lemma' or 'theorem')"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShiftedBoundReport {
    pub rho: f64,
    pub r_bar_rho: f64,
    pub alpha_rho: f64,
    pub rho_max: f64,
    pub feasible: bool,
    pub branch: BoundBranch,
}

/// Coefficient `C_ρ = √(ρ²(1 − ρ²)²(2 − ρ²))`.
fn c_rho(rho: f64) -> f64 {
    let r2 = rho * rho;
    (r2 * (1.0 - r2) * (1.0 - r2) * (2.0 - r2)).sqrt()
}

/// Largest `ρ` allowed by the Gramian bound for a source with the given
/// mean and variance of a loss bounded by `upper`.
pub fn gramian_radius(mean: f64, variance: f64, upper: f64) -> f64 {
    let gap = upper - mean;
    if variance == 0.0 {
        return if gap > 0.0 { 1.0 } else { 0.0 };
    }
    let bracket = (1.0 + gap * gap / variance).powf(-0.5);
    (1.0 - bracket).max(0.0).sqrt()
}

/// Upper bound on `E_Q[ℓ]` over all `Q` with `H(D, Q) ≤ ρ`, given the mean
/// and variance of `ℓ ∈ [0, upper]` under `D`. Capped at `upper`.
pub fn gramian_expectation_bound(mean: f64, variance: f64, upper: f64, rho: f64) -> Result<f64> {
    if !(upper > 0.0 && upper.is_finite()) {
        return Err(Error::domain(format!("upper = {upper} must be positive")));
    }
    if !(0.0..=upper).contains(&mean) {
        return Err(Error::domain(format!("mean {mean} outside [0, {upper}]")));
    }
    if !(variance >= 0.0) {
        return Err(Error::domain(format!("variance {variance} is negative")));
    }
    if !(0.0..1.0).contains(&rho) {
        return Err(Error::domain(format!("rho {rho} outside [0, 1)")));
    }
    if rho == 0.0 {
        return Ok(mean);
    }
    let rho_max = gramian_radius(mean, variance, upper);
    if rho > rho_max {
        return Err(Error::Infeasible { rho, rho_max });
    }
    let gap = upper - mean;
    let r2 = rho * rho;
    let variance_over_gap = if variance == 0.0 { 0.0 } else { variance / gap };
    let bound = mean + 2.0 * c_rho(rho) * variance.sqrt() + r2 * (2.0 - r2) * (gap - variance_over_gap);
    Ok(bound.min(upper))
}

/// Largest feasible radius for the shifted bound of `summary`.
///
/// `ρ_max² = 1 − [1 + x²]^e` with
/// `x = (r̂ − 1 + √(ln(4/δ)/2N)) / (√v̂ + √(2 ln(2/δ)/(N − 1)))`
/// and `e = −1/2` ([`RadiusVariant::Lemma`]) or `−2` ([`RadiusVariant::Theorem`]).
pub fn max_feasible_radius(summary: &CalibrationSummary, variant: RadiusVariant) -> Result<f64> {
    summary.require_variance()?;
    let CalibrationSummary {
        n_cal,
        r_hat,
        v_hat,
        delta,
    } = *summary;
    let n = n_cal as f64;
    let mean_gap = r_hat - 1.0 + ((4.0 / delta).ln() / (2.0 * n)).sqrt();
    let sd_upper = v_hat.sqrt() + (2.0 * (2.0 / delta).ln() / (n - 1.0)).sqrt();
    let x = mean_gap / sd_upper;
    let bracket = (1.0 + x * x).powf(variant.exponent());
    Ok((1.0 - bracket).clamp(0.0, 1.0).sqrt())
}

/// Worst-case empirical risk `R̄_ρ` on a shifted test distribution, clamped
/// to `[0, 1]`. Feasibility is checked against the default radius variant.
pub fn shifted_empirical_risk_bound(summary: &CalibrationSummary, rho: f64) -> Result<f64> {
    shifted_empirical_risk_bound_with(summary, rho, RadiusVariant::default())
}

pub fn shifted_empirical_risk_bound_with(
    summary: &CalibrationSummary,
    rho: f64,
    variant: RadiusVariant,
) -> Result<f64> {
    check_feasible(summary, rho, variant)?;
    Ok(r_bar_unclamped(summary, rho).clamp(0.0, 1.0))
}

fn check_feasible(summary: &CalibrationSummary, rho: f64, variant: RadiusVariant) -> Result<f64> {
    if !(rho >= 0.0) {
        return Err(Error::domain(format!("rho {rho} must be nonnegative")));
    }
    let rho_max = max_feasible_radius(summary, variant)?;
    if rho > rho_max {
        return Err(Error::Infeasible { rho, rho_max });
    }
    Ok(rho_max)
}

// Term order keeps ρ = 0 bit-identical to r̂ + √(ln(4/δ)/2N) + √(ln(8/δ)/2N).
fn r_bar_unclamped(summary: &CalibrationSummary, rho: f64) -> f64 {
    let CalibrationSummary {
        n_cal,
        r_hat,
        v_hat,
        delta,
    } = *summary;
    let n = n_cal as f64;
    let r2 = rho * rho;
    let shrink = 1.0 - r2;
    let mean_term = r2 * (2.0 - r2) * (1.0 - r_hat);
    let variance_term = 2.0 * rho * shrink * (2.0 - r2).sqrt() * v_hat.sqrt();
    let log4 = (4.0 / delta).ln();
    let mean_error = shrink * shrink * (log4 / (2.0 * n)).sqrt();
    let variance_error = shrink * 2.0 * std::f64::consts::SQRT_2 * rho * (2.0 - r2).sqrt() * (log4 / (n - 1.0)).sqrt();
    let test_error = ((8.0 / delta).ln() / (2.0 * n)).sqrt();
    r_hat + mean_term + variance_term + mean_error + variance_error + test_error
}

/// Shifted conformal generation risk `α̂(ρ)` with the default radius variant.
pub fn shifted_conformal_risk(summary: &CalibrationSummary, rho: f64) -> Result<ShiftedBoundReport> {
    shifted_conformal_risk_with(summary, rho, RadiusVariant::default())
}

pub fn shifted_conformal_risk_with(
    summary: &CalibrationSummary,
    rho: f64,
    variant: RadiusVariant,
) -> Result<ShiftedBoundReport> {
    let rho_max = check_feasible(summary, rho, variant)?;
    let r_bar_rho = r_bar_unclamped(summary, rho).clamp(0.0, 1.0);
    let delta = summary.delta;
    let n = summary.n_cal;
    let hb = hb_upper_bound(
        n,
        r_bar_rho,
        (8.0 / delta).ln() / n as f64,
        delta / (8.0 * std::f64::consts::E),
    )?;
    Ok(ShiftedBoundReport {
        rho,
        r_bar_rho,
        alpha_rho: hb.alpha,
        rho_max,
        feasible: true,
        branch: hb.branch,
    })
}
