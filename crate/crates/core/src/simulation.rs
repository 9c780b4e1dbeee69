//! Risk tables, sampling protocols and Monte Carlo harnesses.
//!
//! Every experiment derives one ChaCha8 stream per trial from the master seed
//! and the trial index, so results are identical whatever the thread count.

use std::collections::{BTreeMap, HashMap};
use std::io::Read;
use std::path::Path;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Binomial, Distribution, Gamma};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config_search::{valid_set, HypothesisEntry, HypothesisGrid, SearchMethod};
use crate::error::{Error, Result};
use crate::risk_bounds::{check_open_unit, conformal_risk, CalibrationSummary};
use crate::shift_bounds::{max_feasible_radius, shifted_conformal_risk_with, RadiusVariant};

const WEIGHT_SUM_TOL: f64 = 1e-9;
/// Weight draws attempted per trial before giving up on the radius cap.
const MAX_WEIGHT_DRAWS: usize = 10_000;

pub const CSV_HEADER: [&str; 3] = ["config_id", "sample_id", "risk"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskRow {
    pub config_id: String,
    pub sample_id: String,
    pub risk: f64,
}

/// Per-sample risks grouped by configuration, in first-appearance order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RiskTable {
    rows: Vec<RiskRow>,
    order: Vec<String>,
    by_config: HashMap<String, Vec<f64>>,
}

impl RiskTable {
    pub fn from_rows(rows: Vec<RiskRow>) -> Result<Self> {
        let mut table = RiskTable::default();
        let mut seen = HashMap::new();
        for (i, row) in rows.into_iter().enumerate() {
            table.push(row, i + 1, &mut seen)?;
        }
        Ok(table)
    }

    fn push(&mut self, row: RiskRow, line: usize, seen: &mut HashMap<(String, String), usize>) -> Result<()> {
        if !(0.0..=1.0).contains(&row.risk) {
            return Err(Error::Parse {
                line,
                message: format!("risk {} outside [0, 1]", row.risk),
            });
        }
        let key = (row.config_id.clone(), row.sample_id.clone());
        if let Some(first) = seen.insert(key, line) {
            return Err(Error::Parse {
                line,
                message: format!(
                    "duplicate (config_id, sample_id) = ({}, {}), first seen on line {first}",
                    row.config_id, row.sample_id
                ),
            });
        }
        match self.by_config.get_mut(&row.config_id) {
            Some(v) => v.push(row.risk),
            None => {
                self.order.push(row.config_id.clone());
                self.by_config.insert(row.config_id.clone(), vec![row.risk]);
            }
        }
        self.rows.push(row);
        Ok(())
    }

    /// Parse CSV with header `config_id,sample_id,risk`. Line numbers in
    /// errors count the header as line 1. With `lenient`, extra columns are
    /// ignored and the three required columns may appear in any order.
    pub fn from_csv_reader<R: Read>(reader: R, lenient: bool) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .flexible(false)
            .from_reader(reader);
        let header = rdr.headers().map_err(|e| csv_error(e, 1))?.clone();
        let cols: Vec<&str> = header.iter().collect();
        let idx = if cols == CSV_HEADER {
            [0, 1, 2]
        } else if lenient {
            let find = |name: &str| {
                cols.iter().position(|c| *c == name).ok_or_else(|| Error::Parse {
                    line: 1,
                    message: format!("missing column '{name}'"),
                })
            };
            [find(CSV_HEADER[0])?, find(CSV_HEADER[1])?, find(CSV_HEADER[2])?]
        } else {
            return Err(Error::Parse {
                line: 1,
                message: format!(
                    "header must be exactly '{}', found '{}'",
                    CSV_HEADER.join(","),
                    cols.join(",")
                ),
            });
        };

        let mut table = RiskTable::default();
        let mut seen = HashMap::new();
        for record in rdr.records() {
            let record = record.map_err(|e| csv_error(e, 0))?;
            let line = record.position().map_or(0, |p| p.line() as usize);
            let field = |i: usize| record.get(i).unwrap_or_default();
            let risk: f64 = field(idx[2]).parse().map_err(|_| Error::Parse {
                line,
                message: format!("risk '{}' is not a number", field(idx[2])),
            })?;
            if field(idx[0]).is_empty() || field(idx[1]).is_empty() {
                return Err(Error::Parse {
                    line,
                    message: "empty config_id or sample_id".into(),
                });
            }
            let row = RiskRow {
                config_id: field(idx[0]).to_string(),
                sample_id: field(idx[1]).to_string(),
                risk,
            };
            table.push(row, line, &mut seen)?;
        }
        Ok(table)
    }

    pub fn from_csv_path(path: impl AsRef<Path>, lenient: bool) -> Result<Self> {
        Self::from_csv_reader(std::fs::File::open(path)?, lenient)
    }

    pub fn rows(&self) -> &[RiskRow] {
        &self.rows
    }

    /// Configuration ids in first-appearance order.
    pub fn config_ids(&self) -> &[String] {
        &self.order
    }

    pub fn risks(&self, config_id: &str) -> Option<&[f64]> {
        self.by_config.get(config_id).map(Vec::as_slice)
    }

    pub fn sample_counts(&self) -> BTreeMap<&str, usize> {
        self.order
            .iter()
            .map(|id| (id.as_str(), self.by_config[id].len()))
            .collect()
    }

    /// One hypothesis per configuration, calibrated at `delta`.
    pub fn to_grid(&self, alpha: f64, delta: f64) -> Result<HypothesisGrid> {
        let entries = self
            .order
            .iter()
            .map(|id| {
                Ok(HypothesisEntry {
                    id: id.clone(),
                    config: None,
                    summary: calibrate(self, id, delta)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        HypothesisGrid::new(entries, alpha, delta)
    }
}

fn csv_error(e: csv::Error, fallback_line: usize) -> Error {
    let line = e.position().map_or(fallback_line, |p| p.line() as usize);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        kind => Error::Parse {
            line,
            message: format!("{kind:?}"),
        },
    }
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Unbiased sample variance, two-pass.
pub fn sample_variance(values: &[f64]) -> Result<f64> {
    if values.len() < 2 {
        return Err(Error::domain("variance needs at least two values"));
    }
    let m = mean(values);
    let ss: f64 = values.iter().map(|x| (x - m) * (x - m)).sum();
    Ok(ss / (values.len() - 1) as f64)
}

/// `1/(N(N−1)) Σ_{i<j} (R_i − R_j)²`, quadratic time.
pub fn pairwise_variance(values: &[f64]) -> Result<f64> {
    let n = values.len();
    if n < 2 {
        return Err(Error::domain("variance needs at least two values"));
    }
    let mut acc = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            let d = values[i] - values[j];
            acc += d * d;
        }
    }
    Ok(acc / (n * (n - 1)) as f64)
}

pub fn calibrate(table: &RiskTable, config_id: &str, delta: f64) -> Result<CalibrationSummary> {
    let risks = table
        .risks(config_id)
        .ok_or_else(|| Error::domain(format!("unknown config '{config_id}'")))?;
    calibrate_risks(risks, delta).map_err(|e| Error::domain(format!("config '{config_id}': {e}")))
}

pub fn calibrate_risks(risks: &[f64], delta: f64) -> Result<CalibrationSummary> {
    let v_hat = sample_variance(risks)?;
    CalibrationSummary::new(risks.len(), mean(risks).clamp(0.0, 1.0), v_hat.min(1.0), delta)
}

/// Mean risk of a uniform sample of `size` pool entries, without replacement.
pub fn sample_test_set(pool: &[f64], size: usize, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_test_set_with(pool, size, &mut rng)
}

pub fn sample_test_set_with<R: Rng + ?Sized>(pool: &[f64], size: usize, rng: &mut R) -> Result<f64> {
    if size == 0 || size > pool.len() {
        return Err(Error::domain(format!("test size {size} must be in 1..={}", pool.len())));
    }
    let picked = index::sample(rng, pool.len(), size);
    Ok(picked.iter().map(|i| pool[i]).sum::<f64>() / size as f64)
}

/// Probability vector over a sampled test set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightVector {
    weights: Vec<f64>,
}

impl WeightVector {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::domain("empty weight vector"));
        }
        if weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::domain("weights must be nonnegative"));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::domain(format!("weights sum to {sum}, expected 1")));
        }
        Ok(Self { weights })
    }

    pub fn uniform(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::domain("empty weight vector"));
        }
        Ok(Self {
            weights: vec![1.0 / n as f64; n],
        })
    }

    /// Symmetric Dirichlet draw; `concentration = 1` is the flat simplex.
    pub fn dirichlet<R: Rng + ?Sized>(n: usize, concentration: f64, rng: &mut R) -> Result<Self> {
        if n == 0 {
            return Err(Error::domain("empty weight vector"));
        }
        let gamma =
            Gamma::new(concentration, 1.0).map_err(|e| Error::domain(format!("concentration {concentration}: {e}")))?;
        loop {
            let mut w: Vec<f64> = (0..n).map(|_| gamma.sample(rng)).collect();
            let total: f64 = w.iter().sum();
            if total > 0.0 && total.is_finite() {
                w.iter_mut().for_each(|x| *x /= total);
                return Ok(Self { weights: w });
            }
        }
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Hellinger distance to the uniform vector,
    /// `√(1 − Σ √(w_i/n)) = √(½ Σ (√w_i − √(1/n))²)`; the second form is used.
    pub fn hellinger(&self) -> f64 {
        let u = (1.0 / self.weights.len() as f64).sqrt();
        let s: f64 = self
            .weights
            .iter()
            .map(|w| {
                let d = w.sqrt() - u;
                d * d
            })
            .sum();
        (0.5 * s).sqrt().min(1.0)
    }

    /// `wᵀ risks`.
    pub fn weighted_risk(&self, risks: &[f64]) -> Result<f64> {
        if risks.len() != self.weights.len() {
            return Err(Error::domain(format!(
                "{} risks for {} weights",
                risks.len(),
                self.weights.len()
            )));
        }
        Ok(self.weights.iter().zip(risks).map(|(w, r)| w * r).sum())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShiftedSample {
    pub weighted_risk: f64,
    pub hellinger: f64,
}

/// Flat-simplex weights over the whole pool.
pub fn sample_shifted_test_set(pool: &[f64], seed: u64) -> Result<ShiftedSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_shifted_test_set_with(pool, 1.0, &mut rng)
}

pub fn sample_shifted_test_set_with<R: Rng + ?Sized>(
    pool: &[f64],
    concentration: f64,
    rng: &mut R,
) -> Result<ShiftedSample> {
    if pool.is_empty() {
        return Err(Error::domain("empty pool"));
    }
    let w = WeightVector::dirichlet(pool.len(), concentration, rng)?;
    shifted_sample(&w, pool)
}

pub fn shifted_sample(w: &WeightVector, risks: &[f64]) -> Result<ShiftedSample> {
    Ok(ShiftedSample {
        weighted_risk: w.weighted_risk(risks)?,
        hellinger: w.hellinger(),
    })
}

/// Distribution of a single per-sample risk, serialised externally tagged, e.g. `{"bernoulli": {"p": 0.2}}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RiskDistribution {
    Bernoulli { p: f64 },
    Constant { value: f64 },
    Beta { a: f64, b: f64 },
    Empirical { values: Vec<f64> },
}

impl RiskDistribution {
    pub fn validate(&self) -> Result<()> {
        match self {
            RiskDistribution::Bernoulli { p } if (0.0..=1.0).contains(p) => Ok(()),
            RiskDistribution::Constant { value } if (0.0..=1.0).contains(value) => Ok(()),
            RiskDistribution::Beta { a, b } if *a > 0.0 && *b > 0.0 && a.is_finite() && b.is_finite() => Ok(()),
            RiskDistribution::Empirical { values }
                if !values.is_empty() && values.iter().all(|v| (0.0..=1.0).contains(v)) =>
            {
                Ok(())
            }
            other => Err(Error::domain(format!("invalid risk distribution {other:?}"))),
        }
    }

    pub fn mean(&self) -> f64 {
        match self {
            RiskDistribution::Bernoulli { p } => *p,
            RiskDistribution::Constant { value } => *value,
            RiskDistribution::Beta { a, b } => a / (a + b),
            RiskDistribution::Empirical { values } => mean(values),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            RiskDistribution::Bernoulli { p } => f64::from(u8::from(rng.random_bool(*p))),
            RiskDistribution::Constant { value } => *value,
            RiskDistribution::Beta { a, b } => Beta::new(*a, *b).expect("validated").sample(rng),
            RiskDistribution::Empirical { values } => values[rng.random_range(0..values.len())],
        }
    }

    /// Mean of `n` independent draws; Bernoulli risks use one binomial draw.
    pub fn sample_mean<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> f64 {
        match self {
            RiskDistribution::Bernoulli { p } => {
                let k = Binomial::new(n as u64, *p).expect("validated").sample(rng);
                k as f64 / n as f64
            }
            RiskDistribution::Constant { value } => *value,
            _ => ((0..n).map(|_| self.sample(rng)).sum::<f64>() / n as f64).clamp(0.0, 1.0),
        }
    }
}

fn trial_rng(seed: u64, trial: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial as u64);
    rng
}

fn check_trials(trials: usize) -> Result<()> {
    if trials == 0 {
        return Err(Error::domain("trials must be at least 1"));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub trials: usize,
    pub violations: usize,
    pub rate: f64,
    pub true_risk: f64,
    pub mean_bound: f64,
}

/// Fraction of trials where the true mean risk exceeds `α̂` from a fresh
/// calibration draw of size `n_cal`.
pub fn coverage_experiment(
    dist: &RiskDistribution,
    n_cal: usize,
    delta: f64,
    trials: usize,
    seed: u64,
) -> Result<CoverageReport> {
    dist.validate()?;
    check_open_unit("delta", delta)?;
    check_trials(trials)?;
    if n_cal == 0 {
        return Err(Error::domain("n_cal must be positive"));
    }
    let true_risk = dist.mean();
    let bounds = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = trial_rng(seed, t);
            let r_hat = dist.sample_mean(n_cal, &mut rng);
            conformal_risk(&CalibrationSummary::from_mean(n_cal, r_hat, delta)?)
        })
        .collect::<Result<Vec<f64>>>()?;
    let violations = bounds.iter().filter(|&&a| true_risk > a).count();
    Ok(CoverageReport {
        trials,
        violations,
        rate: violations as f64 / trials as f64,
        true_risk,
        mean_bound: mean(&bounds),
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ShiftedCoverageOptions {
    /// Dirichlet concentration; `None` selects `1/(4 ρ_cap²)`.
    pub concentration: Option<f64>,
    /// Size of the test subset; `None` uses every pool entry not drawn for
    /// calibration.
    pub test_size: Option<usize>,
    pub variant: RadiusVariant,
}

/// Default Dirichlet concentration for radius cap `rho_cap`. Symmetric
/// Dirichlet weights with concentration `β` over many points have Hellinger
/// distance close to `1/√(8β)`, so this centres draws near `0.71 ρ_cap`.
pub fn default_concentration(rho_cap: f64) -> f64 {
    1.0 / (4.0 * rho_cap * rho_cap)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftedCoverageReport {
    pub trials: usize,
    pub violations: usize,
    pub rate: f64,
    pub rho_cap: f64,
    /// `ρ_max` of the pool-level summary.
    pub rho_max: f64,
    pub concentration: f64,
    pub test_size: usize,
    /// Trials whose own calibration summary could not certify `ρ_cap`; the
    /// bound there is taken as the vacuous value 1.
    pub infeasible_trials: usize,
    /// Weight draws discarded for exceeding `ρ_cap`, summed over trials.
    pub rejected_weight_draws: usize,
    pub mean_bound: f64,
    pub mean_hellinger: f64,
}

struct ShiftedTrial {
    violated: bool,
    infeasible: bool,
    rejected: usize,
    bound: f64,
    hellinger: f64,
}

/// Shifted test sets versus `α̂(ρ_cap)`.
///
/// Each trial splits a random permutation of `pool` into `n_cal` calibration
/// risks and a test subset, draws Dirichlet weights on the subset until their
/// Hellinger distance to uniform is at most `ρ_cap`, and flags a violation
/// when the weighted risk exceeds `α̂(ρ_cap)`.
pub fn shifted_coverage_experiment(
    pool: &[f64],
    n_cal: usize,
    delta: f64,
    rho_cap: f64,
    trials: usize,
    seed: u64,
    options: ShiftedCoverageOptions,
) -> Result<ShiftedCoverageReport> {
    check_trials(trials)?;
    check_open_unit("delta", delta)?;
    if !(0.0..1.0).contains(&rho_cap) {
        return Err(Error::domain(format!("rho_cap {rho_cap} outside [0, 1)")));
    }
    if pool.iter().any(|r| !(0.0..=1.0).contains(r)) {
        return Err(Error::domain("pool risks must lie in [0, 1]"));
    }
    if n_cal < 2 || n_cal >= pool.len() {
        return Err(Error::domain(format!(
            "n_cal {n_cal} must be in 2..{} (the pool size)",
            pool.len()
        )));
    }
    let remaining = pool.len() - n_cal;
    let test_size = options.test_size.unwrap_or(remaining);
    if test_size == 0 || test_size > remaining {
        return Err(Error::domain(format!(
            "test size {test_size} must be in 1..={remaining}"
        )));
    }
    let pool_summary = CalibrationSummary::new(n_cal, mean(pool), sample_variance(pool)?.min(1.0), delta)?;
    let rho_max = max_feasible_radius(&pool_summary, options.variant)?;
    if rho_cap > rho_max {
        return Err(Error::Infeasible { rho: rho_cap, rho_max });
    }
    let concentration = match options.concentration {
        Some(c) => c,
        None if rho_cap > 0.0 => default_concentration(rho_cap),
        None => f64::INFINITY,
    };
    if !(concentration > 0.0) {
        return Err(Error::domain(format!("concentration {concentration} must be positive")));
    }

    let results = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = trial_rng(seed, t);
            let picked = index::sample(&mut rng, pool.len(), n_cal + test_size);
            let drawn: Vec<f64> = picked.iter().map(|i| pool[i]).collect();
            let (cal, test) = drawn.split_at(n_cal);
            let summary = calibrate_risks(cal, delta)?;
            let (bound, infeasible) =
                match shifted_conformal_risk_with(&summary, rho_cap, options.variant) {
                    Ok(report) => (report.alpha_rho, false),
                    Err(Error::Infeasible { .. }) => (1.0, true),
                    Err(e) => return Err(e),
                };
            let mut rejected = 0;
            let w = loop {
                let w = if concentration.is_infinite() {
                    WeightVector::uniform(test.len())?
                } else {
                    WeightVector::dirichlet(test.len(), concentration, &mut rng)?
                };
                if w.hellinger() <= rho_cap {
                    break w;
                }
                rejected += 1;
                if rejected == MAX_WEIGHT_DRAWS {
                    return Err(Error::domain(format!(
                        "no weight draw within radius {rho_cap} after {MAX_WEIGHT_DRAWS} attempts; raise the concentration"
                    )));
                }
            };
            let sample = shifted_sample(&w, test)?;
            Ok(ShiftedTrial {
                violated: sample.weighted_risk > bound,
                infeasible,
                rejected,
                bound,
                hellinger: sample.hellinger,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let violations = results.iter().filter(|r| r.violated).count();
    let n = trials as f64;
    Ok(ShiftedCoverageReport {
        trials,
        violations,
        rate: violations as f64 / n,
        rho_cap,
        rho_max,
        concentration,
        test_size,
        infeasible_trials: results.iter().filter(|r| r.infeasible).count(),
        rejected_weight_draws: results.iter().map(|r| r.rejected).sum(),
        mean_bound: results.iter().map(|r| r.bound).sum::<f64>() / n,
        mean_hellinger: results.iter().map(|r| r.hellinger).sum::<f64>() / n,
    })
}

/// A configuration with a known per-sample risk distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridConfig {
    pub id: String,
    pub distribution: RiskDistribution,
}

/// `n_configs` Bernoulli configurations, the first `n_above` with true risk
/// above `alpha` and the rest below it.
///
/// Risks above `alpha` are spread evenly over `(alpha, min(1, alpha + 0.1)]`;
/// the others over `[max(0, alpha − 0.2), alpha − 0.01]`, with `alpha`
/// itself excluded.
pub fn synthesize_grid(n_configs: usize, n_above: usize, alpha: f64) -> Result<Vec<GridConfig>> {
    check_open_unit("alpha", alpha)?;
    if n_above > n_configs {
        return Err(Error::domain("n_above exceeds n_configs"));
    }
    let spread = |k: usize, count: usize, lo: f64, hi: f64| {
        if count == 1 {
            hi
        } else {
            lo + (hi - lo) * k as f64 / (count - 1) as f64
        }
    };
    let hi_top = (alpha + 0.1).min(1.0);
    let hi_bottom = alpha + (hi_top - alpha) / n_above.max(1) as f64;
    let lo_top = (alpha - 0.01).max(0.0);
    let lo_bottom = (alpha - 0.2).max(0.0);
    let n_below = n_configs - n_above;
    let mut grid = Vec::with_capacity(n_configs);
    for k in 0..n_above {
        grid.push(GridConfig {
            id: format!("cfg{:03}", grid.len()),
            distribution: RiskDistribution::Bernoulli {
                p: spread(k, n_above, hi_bottom, hi_top),
            },
        });
    }
    for k in 0..n_below {
        grid.push(GridConfig {
            id: format!("cfg{:03}", grid.len()),
            distribution: RiskDistribution::Bernoulli {
                p: spread(k, n_below, lo_bottom, lo_top),
            },
        });
    }
    Ok(grid)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FwerReport {
    pub method: SearchMethod,
    pub trials: usize,
    /// Trials accepting at least one configuration with true risk above `alpha`.
    pub errors: usize,
    pub rate: f64,
    pub mean_accepted: f64,
    pub n_truly_valid: usize,
}

/// Family-wise error rate of `method` on synthetic calibration draws.
#[allow(clippy::too_many_arguments)]
pub fn fwer_experiment(
    grid: &[GridConfig],
    n_cal: usize,
    alpha: f64,
    delta: f64,
    method: SearchMethod,
    trials: usize,
    seed: u64,
) -> Result<FwerReport> {
    check_trials(trials)?;
    check_open_unit("alpha", alpha)?;
    check_open_unit("delta", delta)?;
    if grid.is_empty() {
        return Err(Error::domain("empty grid"));
    }
    if n_cal == 0 {
        return Err(Error::domain("n_cal must be positive"));
    }
    for c in grid {
        c.distribution.validate()?;
    }
    let bad: Vec<bool> = grid.iter().map(|c| c.distribution.mean() > alpha).collect();
    let index_of: HashMap<&str, usize> = grid.iter().enumerate().map(|(i, c)| (c.id.as_str(), i)).collect();

    let outcomes = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = trial_rng(seed, t);
            let entries = grid
                .iter()
                .map(|c| {
                    let r_hat = c.distribution.sample_mean(n_cal, &mut rng);
                    Ok(HypothesisEntry {
                        id: c.id.clone(),
                        config: None,
                        summary: CalibrationSummary::from_mean(n_cal, r_hat, delta)?,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let report = valid_set(&HypothesisGrid::new(entries, alpha, delta)?, method)?;
            let error = report.accepted.iter().any(|id| bad[index_of[id.as_str()]]);
            Ok((error, report.accepted.len()))
        })
        .collect::<Result<Vec<_>>>()?;

    let errors = outcomes.iter().filter(|o| o.0).count();
    Ok(FwerReport {
        method,
        trials,
        errors,
        rate: errors as f64 / trials as f64,
        mean_accepted: outcomes.iter().map(|o| o.1 as f64).sum::<f64>() / trials as f64,
        n_truly_valid: bad.iter().filter(|b| !**b).count(),
    })
}
