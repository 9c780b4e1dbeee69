//! Valid configuration sets at a target risk level.
//!
//! Each configuration `λ_j` carries the null hypothesis "true risk of `λ_j`
//! exceeds `α`", tested with the Hoeffding–Bentkus p-value of its calibration
//! summary. A family-wise error rate (FWER) controlling procedure then picks
//! the configurations whose nulls are rejected: plain Bonferroni, or the
//! sequential graph procedure that hands the budget of each rejected
//! hypothesis on to the remaining ones along weighted edges.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::risk_bounds::{check_open_unit, hb_p_value, CalibrationSummary};

const BUDGET_SUM_TOL: f64 = 1e-12;
const ROW_SUM_TOL: f64 = 1e-12;

/// Generation protocol configuration `λ = (N_rag, λ_g, λ_s)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RagConfiguration {
    /// Number of retrieved in-context examples.
    pub n_rag: u32,
    /// Generation set size.
    pub lambda_g: u32,
    /// Pairwise-similarity threshold for accepting a new generation.
    pub lambda_s: f64,
}

impl RagConfiguration {
    pub fn new(n_rag: u32, lambda_g: u32, lambda_s: f64) -> Result<Self> {
        let config = Self {
            n_rag,
            lambda_g,
            lambda_s,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.lambda_g == 0 {
            return Err(Error::domain("lambda_g must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.lambda_s) {
            return Err(Error::domain(format!("lambda_s = {} outside [0, 1]", self.lambda_s)));
        }
        Ok(())
    }
}

impl fmt::Display for RagConfiguration {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "n_rag={} lambda_g={} lambda_s={}",
            self.n_rag, self.lambda_g, self.lambda_s
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypothesisEntry {
    /// Identifier used in reports and for deterministic tie-breaking.
    pub id: String,
    /// The configuration behind `id`, when known.
    pub config: Option<RagConfiguration>,
    pub summary: CalibrationSummary,
}

/// The family of hypotheses `H_j: R(λ_j) > α` tested at level `δ`.
#[derive(Debug, Clone, PartialEq)]
pub struct HypothesisGrid {
    entries: Vec<HypothesisEntry>,
    alpha: f64,
    delta: f64,
}

impl HypothesisGrid {
    pub fn new(entries: Vec<HypothesisEntry>, alpha: f64, delta: f64) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::domain("hypothesis grid is empty"));
        }
        check_open_unit("alpha", alpha)?;
        check_open_unit("delta", delta)?;
        let mut seen = BTreeSet::new();
        let n_cal = entries[0].summary.n_cal;
        for entry in &entries {
            if !seen.insert(entry.id.as_str()) {
                return Err(Error::domain(format!("duplicate configuration id '{}'", entry.id)));
            }
            if let Some(config) = &entry.config {
                config.validate()?;
            }
            if entry.summary.n_cal != n_cal {
                return Err(Error::domain(format!(
                    "configuration '{}' has n_cal {} but the grid uses {n_cal}",
                    entry.id, entry.summary.n_cal
                )));
            }
            if entry.summary.delta != delta {
                return Err(Error::domain(format!(
                    "configuration '{}' was summarised at delta {} but the grid uses {delta}",
                    entry.id, entry.summary.delta
                )));
            }
        }
        Ok(Self { entries, alpha, delta })
    }

    pub fn entries(&self) -> &[HypothesisEntry] {
        &self.entries
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Hoeffding–Bentkus p-values in entry order.
    pub fn p_values(&self) -> Result<Vec<f64>> {
        self.entries
            .iter()
            .map(|e| hb_p_value(e.summary.n_cal, e.summary.r_hat, self.alpha))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchMethod {
    Bonferroni,
    Graph,
}

impl std::str::FromStr for SearchMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bonferroni" => Ok(SearchMethod::Bonferroni),
            "graph" => Ok(SearchMethod::Graph),
            other => Err(Error::domain(format!(
                "unknown search method '{other}' (expected 'bonferroni' or 'graph')"
            ))),
        }
    }
}

/// One rejection: the p-value and the budget it was compared against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcceptanceStep {
    pub id: String,
    pub p_value: f64,
    pub budget: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidConfigReport {
    pub method: SearchMethod,
    /// Accepted configuration ids, in acceptance order.
    pub accepted: Vec<String>,
    pub p_values: BTreeMap<String, f64>,
    pub final_budgets: BTreeMap<String, f64>,
    pub steps: Vec<AcceptanceStep>,
}

impl ValidConfigReport {
    pub fn accepted_set(&self) -> BTreeSet<&str> {
        self.accepted.iter().map(String::as_str).collect()
    }
}

/// Bonferroni: accept `λ_j` iff `p_j ≤ δ/|Λ|`.
pub fn bonferroni_valid_set(grid: &HypothesisGrid) -> Result<ValidConfigReport> {
    let p_values = grid.p_values()?;
    Ok(bonferroni_from_p_values(grid, &p_values))
}

fn bonferroni_from_p_values(grid: &HypothesisGrid, p_values: &[f64]) -> ValidConfigReport {
    let level = grid.delta / grid.len() as f64;
    let mut order: Vec<usize> = (0..grid.len()).collect();
    sort_by_p_then_id(&mut order, p_values, grid);
    let steps: Vec<AcceptanceStep> = order
        .into_iter()
        .filter(|&j| p_values[j] <= level)
        .map(|j| AcceptanceStep {
            id: grid.entries[j].id.clone(),
            p_value: p_values[j],
            budget: level,
        })
        .collect();
    ValidConfigReport {
        method: SearchMethod::Bonferroni,
        accepted: steps.iter().map(|s| s.id.clone()).collect(),
        p_values: id_map(grid, p_values),
        final_budgets: grid.entries.iter().map(|e| (e.id.clone(), level)).collect(),
        steps,
    }
}

fn sort_by_p_then_id(order: &mut [usize], p_values: &[f64], grid: &HypothesisGrid) {
    order.sort_by(|&a, &b| {
        p_values[a]
            .total_cmp(&p_values[b])
            .then_with(|| grid.entries[a].id.cmp(&grid.entries[b].id))
    });
}

fn id_map(grid: &HypothesisGrid, values: &[f64]) -> BTreeMap<String, f64> {
    grid.entries
        .iter()
        .zip(values)
        .map(|(e, &v)| (e.id.clone(), v))
        .collect()
}

/// Uniform budgets `δ/|Λ|`.
pub fn uniform_budgets(n: usize, delta: f64) -> Vec<f64> {
    vec![delta / n as f64; n]
}

/// Weights `1/(|Λ| − 1)` off the diagonal, zero on it.
pub fn uniform_weights(n: usize) -> Vec<Vec<f64>> {
    let w = if n > 1 { 1.0 / (n - 1) as f64 } else { 0.0 };
    (0..n)
        .map(|i| (0..n).map(|j| if i == j { 0.0 } else { w }).collect())
        .collect()
}

/// Sequential graph procedure over a fixed set of p-values.
///
/// Owns private copies of the budgets and the weight matrix; each call to
/// [`GraphSearch::step`] rejects at most one hypothesis.
#[derive(Debug, Clone)]
pub struct GraphSearch {
    ids: Vec<String>,
    p_values: Vec<f64>,
    budgets: Vec<f64>,
    weights: Vec<Vec<f64>>,
    active: Vec<bool>,
}

impl GraphSearch {
    pub fn new(
        ids: Vec<String>,
        p_values: Vec<f64>,
        budgets: Vec<f64>,
        weights: Vec<Vec<f64>>,
        delta: f64,
    ) -> Result<Self> {
        let n = ids.len();
        if n == 0 {
            return Err(Error::domain("graph search needs at least one hypothesis"));
        }
        if p_values.len() != n || budgets.len() != n {
            return Err(Error::domain(format!(
                "expected {n} p-values and budgets, got {} and {}",
                p_values.len(),
                budgets.len()
            )));
        }
        if budgets.iter().any(|b| !(*b >= 0.0) || !b.is_finite()) {
            return Err(Error::domain("initial budgets must be finite and nonnegative"));
        }
        let total: f64 = budgets.iter().sum();
        if (total - delta).abs() > BUDGET_SUM_TOL {
            return Err(Error::domain(format!(
                "initial budgets sum to {total}, expected delta = {delta}"
            )));
        }
        if weights.len() != n || weights.iter().any(|row| row.len() != n) {
            return Err(Error::domain(format!("weight matrix must be {n}x{n}")));
        }
        for (i, row) in weights.iter().enumerate() {
            if row.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
                return Err(Error::domain(format!("row {i} has a negative or non-finite weight")));
            }
            if row[i] != 0.0 {
                return Err(Error::domain(format!("diagonal weight g[{i}][{i}] must be 0")));
            }
            let sum: f64 = row.iter().sum();
            if sum > 1.0 + ROW_SUM_TOL {
                return Err(Error::domain(format!("row {i} sums to {sum} > 1")));
            }
        }
        Ok(Self {
            ids,
            p_values,
            budgets,
            weights,
            active: vec![true; n],
        })
    }

    pub fn budgets(&self) -> &[f64] {
        &self.budgets
    }

    pub fn weights(&self) -> &[Vec<f64>] {
        &self.weights
    }

    /// Sum of the budgets of hypotheses not yet rejected.
    pub fn remaining_budget(&self) -> f64 {
        self.budgets
            .iter()
            .zip(&self.active)
            .filter(|(_, &a)| a)
            .map(|(b, _)| b)
            .sum()
    }

    /// Rejects the eligible hypothesis with the smallest p-value (ties by id)
    /// and propagates its budget. Returns `None` once nothing is eligible.
    pub fn step(&mut self) -> Result<Option<AcceptanceStep>> {
        let n = self.ids.len();
        let pick = (0..n)
            .filter(|&j| self.active[j] && self.p_values[j] <= self.budgets[j])
            .min_by(|&a, &b| {
                self.p_values[a]
                    .total_cmp(&self.p_values[b])
                    .then_with(|| self.ids[a].cmp(&self.ids[b]))
            });
        let Some(i) = pick else {
            return Ok(None);
        };
        let step = AcceptanceStep {
            id: self.ids[i].clone(),
            p_value: self.p_values[i],
            budget: self.budgets[i],
        };
        self.active[i] = false;

        let spent = self.budgets[i];
        let mut budgets = vec![0.0; n];
        let mut weights = vec![vec![0.0; n]; n];
        for j in 0..n {
            if self.active[j] {
                budgets[j] = self.budgets[j] + spent * self.weights[i][j];
            }
        }
        for k in 0..n {
            if !self.active[k] {
                continue;
            }
            let g_ki = self.weights[k][i];
            let denom = 1.0 - g_ki * self.weights[i][k];
            for j in 0..n {
                if j == k || !self.active[j] {
                    continue;
                }
                if denom == 0.0 {
                    return Err(Error::DegenerateGraph { k, i });
                }
                weights[k][j] = (self.weights[k][j] + g_ki * self.weights[i][j]) / denom;
            }
        }
        self.budgets = budgets;
        self.weights = weights;
        Ok(Some(step))
    }

    /// Runs to completion and returns the rejections in order.
    pub fn run(&mut self) -> Result<Vec<AcceptanceStep>> {
        let mut steps = Vec::new();
        while let Some(step) = self.step()? {
            steps.push(step);
        }
        Ok(steps)
    }
}

/// Graph-based search with explicit initial budgets (summing to `δ`) and a
/// weight matrix (nonnegative, zero diagonal, row sums at most 1).
pub fn graph_valid_set(
    grid: &HypothesisGrid,
    initial_budgets: &[f64],
    weights: &[Vec<f64>],
) -> Result<ValidConfigReport> {
    let p_values = grid.p_values()?;
    graph_from_p_values(grid, &p_values, initial_budgets, weights)
}

/// Graph-based search with uniform budgets and uniform off-diagonal weights.
pub fn graph_valid_set_default(grid: &HypothesisGrid) -> Result<ValidConfigReport> {
    let n = grid.len();
    graph_valid_set(grid, &uniform_budgets(n, grid.delta), &uniform_weights(n))
}

fn graph_from_p_values(
    grid: &HypothesisGrid,
    p_values: &[f64],
    initial_budgets: &[f64],
    weights: &[Vec<f64>],
) -> Result<ValidConfigReport> {
    let ids: Vec<String> = grid.entries.iter().map(|e| e.id.clone()).collect();
    let mut search = GraphSearch::new(
        ids,
        p_values.to_vec(),
        initial_budgets.to_vec(),
        weights.to_vec(),
        grid.delta,
    )?;
    let steps = search.run()?;
    Ok(ValidConfigReport {
        method: SearchMethod::Graph,
        accepted: steps.iter().map(|s| s.id.clone()).collect(),
        p_values: id_map(grid, p_values),
        final_budgets: id_map(grid, search.budgets()),
        steps,
    })
}

/// Runs `method` with its default budgets and weights.
pub fn valid_set(grid: &HypothesisGrid, method: SearchMethod) -> Result<ValidConfigReport> {
    match method {
        SearchMethod::Bonferroni => bonferroni_valid_set(grid),
        SearchMethod::Graph => graph_valid_set_default(grid),
    }
}

/// Test-facing entry points that skip p-value computation.
pub mod from_p_values {
    use super::*;

    pub fn bonferroni(grid: &HypothesisGrid, p_values: &[f64]) -> Result<ValidConfigReport> {
        check_len(grid, p_values)?;
        Ok(bonferroni_from_p_values(grid, p_values))
    }

    pub fn graph(
        grid: &HypothesisGrid,
        p_values: &[f64],
        initial_budgets: &[f64],
        weights: &[Vec<f64>],
    ) -> Result<ValidConfigReport> {
        check_len(grid, p_values)?;
        graph_from_p_values(grid, p_values, initial_budgets, weights)
    }

    fn check_len(grid: &HypothesisGrid, p_values: &[f64]) -> Result<()> {
        if p_values.len() != grid.len() {
            return Err(Error::domain(format!(
                "expected {} p-values, got {}",
                grid.len(),
                p_values.len()
            )));
        }
        Ok(())
    }
}
