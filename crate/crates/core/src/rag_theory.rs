//! Closed-form bounds on the benefit of retrieval.
//!
//! A retrieval model is summarised by its quality ratio `V_rag` (smaller is
//! better, below 1 is required), the knowledge base by its size and class
//! composition, and the generator by `d⁺` (minimum attention score on positive
//! pairs) together with the CDF `Φ_M` of its negative prediction margin on
//! `[−1, 1]`. From these the module evaluates lower bounds on the expected
//! number of retrieved positive examples and on the probability that RAG
//! lowers the conformal generation risk, with and without Hellinger shift.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `√(2 ln 10)`, the categorical finite-sample slack.
pub fn categorical_slack() -> f64 {
    (2.0 * 10f64.ln()).sqrt()
}

/// Squared first positive root of `1 − 16ρ² + 8ρ⁴`.
fn rho_sing_squared() -> f64 {
    (16.0 - 224f64.sqrt()) / 16.0
}

/// Radius at which the printed decay factor becomes `0/0`.
pub fn rho_singular() -> f64 {
    rho_sing_squared().sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContrastiveStats {
    /// Variance of `s(x, x⁺) − s(x, x⁻)`.
    pub similarity_diff_variance: f64,
    /// Contrastive loss `L_τ`.
    pub contrastive_loss: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetrievalModelSpec {
    pub v_rag: f64,
    pub contrastive: Option<ContrastiveStats>,
}

impl RetrievalModelSpec {
    pub fn new(v_rag: f64) -> Result<Self> {
        if !(v_rag >= 0.0) || !v_rag.is_finite() {
            return Err(Error::domain(format!("v_rag = {v_rag} must be finite and nonnegative")));
        }
        Ok(Self {
            v_rag,
            contrastive: None,
        })
    }

    pub fn from_contrastive(stats: ContrastiveStats) -> Result<Self> {
        let v_rag = v_rag_from_contrastive_stats(stats.similarity_diff_variance, stats.contrastive_loss)?;
        Ok(Self {
            v_rag,
            contrastive: Some(stats),
        })
    }

    fn require_quality(&self) -> Result<()> {
        if self.v_rag >= 1.0 {
            return Err(Error::Precondition(format!("v_rag = {} must be below 1", self.v_rag)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnowledgeComposition {
    pub n_ext: u64,
    pub r_ext: Vec<f64>,
    pub r_cal: Vec<f64>,
}

impl KnowledgeComposition {
    pub fn new(n_ext: u64, r_ext: Vec<f64>, r_cal: Vec<f64>) -> Result<Self> {
        if n_ext == 0 {
            return Err(Error::domain("n_ext must be positive"));
        }
        if r_ext.is_empty() || r_ext.len() != r_cal.len() {
            return Err(Error::domain(format!(
                "class portions must be nonempty and of equal length (got {} and {})",
                r_ext.len(),
                r_cal.len()
            )));
        }
        for (name, v) in [("r_ext", &r_ext), ("r_cal", &r_cal)] {
            if v.iter().any(|x| !(*x >= 0.0)) {
                return Err(Error::domain(format!("{name} has a negative entry")));
            }
            let sum: f64 = v.iter().sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(Error::domain(format!("{name} sums to {sum}, expected 1")));
            }
        }
        Ok(Self { n_ext, r_ext, r_cal })
    }

    /// `min_c r_ext^(c)`.
    pub fn r_ext_min(&self) -> f64 {
        self.r_ext.iter().copied().fold(f64::INFINITY, f64::min)
    }

    fn class_sum(&self, v_rag: f64) -> f64 {
        let n = self.n_ext as f64;
        let slack = categorical_slack();
        self.r_ext
            .iter()
            .zip(&self.r_cal)
            .map(|(&re, &rc)| rc * (n - re * n + slack) * v_rag.powf(0.5 * (re * n - slack)))
            .sum()
    }

    fn class_sum_simplified(&self, v_rag: f64) -> f64 {
        let n = self.n_ext as f64;
        self.r_ext
            .iter()
            .zip(&self.r_cal)
            .map(|(&re, &rc)| rc * (1.5 * n - re * n) * v_rag.powf(0.25 * re * n))
            .sum()
    }

    /// `N_ext · V^{0.25 · min_c r_ext^(c) · N_ext}`.
    fn negative_mass(&self, v: f64) -> f64 {
        let n = self.n_ext as f64;
        n * v.powf(0.25 * self.r_ext_min() * n)
    }
}

/// Piecewise-linear CDF on `[−1, 1]`, clamped outside.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<(f64, f64)>", into = "Vec<(f64, f64)>")]
pub struct MarginCdf {
    knots: Vec<(f64, f64)>,
}

impl TryFrom<Vec<(f64, f64)>> for MarginCdf {
    type Error = Error;

    fn try_from(knots: Vec<(f64, f64)>) -> Result<Self> {
        MarginCdf::new(knots)
    }
}

impl From<MarginCdf> for Vec<(f64, f64)> {
    fn from(cdf: MarginCdf) -> Self {
        cdf.knots
    }
}

impl MarginCdf {
    pub fn new(knots: Vec<(f64, f64)>) -> Result<Self> {
        if knots.len() < 2 {
            return Err(Error::domain("a margin CDF needs at least two knots"));
        }
        if knots[0].0 != -1.0 || knots[knots.len() - 1].0 != 1.0 {
            return Err(Error::domain("margin CDF knots must start at -1 and end at 1"));
        }
        for w in knots.windows(2) {
            if !(w[1].0 > w[0].0) {
                return Err(Error::domain("knot positions must be strictly increasing"));
            }
            if w[1].1 < w[0].1 {
                return Err(Error::domain("CDF values must be nondecreasing"));
            }
        }
        if knots.iter().any(|&(_, y)| !(0.0..=1.0).contains(&y)) {
            return Err(Error::domain("CDF values must lie in [0, 1]"));
        }
        Ok(Self { knots })
    }

    /// CDF of the uniform distribution on `[−1, 1]` (a random predictor).
    pub fn uniform() -> Self {
        Self {
            knots: vec![(-1.0, 0.0), (1.0, 1.0)],
        }
    }

    /// Piecewise-linear version of the empirical CDF of `samples`.
    ///
    /// Each jump of the step CDF at `v` becomes a knot pair `(v, F(v⁻))`,
    /// `(v + ε, F(v))` with `ε = 1e−9`, so the integral differs from the
    /// step CDF's by at most `ε` per distinct sample.
    pub fn from_samples(samples: &[f64]) -> Result<Self> {
        const EPS: f64 = 1e-9;
        if samples.is_empty() {
            return Err(Error::domain("no margin samples"));
        }
        if samples.iter().any(|v| !(-1.0..=1.0).contains(v)) {
            return Err(Error::domain("margin samples must lie in [-1, 1]"));
        }
        let mut sorted = samples.to_vec();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len() as f64;
        let mut knots: Vec<(f64, f64)> = Vec::new();
        let mut below = 0.0;
        let mut i = 0;
        while i < sorted.len() {
            let v = sorted[i];
            let mut j = i;
            while j < sorted.len() && sorted[j] == v {
                j += 1;
            }
            let after = j as f64 / n;
            if v == -1.0 {
                knots.push((-1.0, after));
            } else if v >= 1.0 - EPS {
                if knots.is_empty() {
                    knots.push((-1.0, below));
                }
                knots.push((1.0 - EPS, below));
                knots.push((1.0, after));
            } else {
                if knots.is_empty() {
                    knots.push((-1.0, below));
                }
                knots.push((v, below));
                knots.push((v + EPS, after));
            }
            below = after;
            i = j;
        }
        if knots.last().map(|k| k.0) != Some(1.0) {
            knots.push((1.0, 1.0));
        }
        knots.dedup_by(|b, a| a.0 == b.0 && a.1 == b.1);
        Self::new(knots)
    }

    pub fn knots(&self) -> &[(f64, f64)] {
        &self.knots
    }

    pub fn eval(&self, v: f64) -> f64 {
        let first = self.knots[0];
        let last = self.knots[self.knots.len() - 1];
        if v <= first.0 {
            return first.1;
        }
        if v >= last.0 {
            return last.1;
        }
        let idx = self.knots.partition_point(|k| k.0 <= v);
        let (x0, y0) = self.knots[idx - 1];
        let (x1, y1) = self.knots[idx];
        y0 + (y1 - y0) * (v - x0) / (x1 - x0)
    }
}

/// `∫_{−1}^{1} Φ_M(v) dv`, exact for a piecewise-linear CDF.
pub fn margin_cdf_integral(cdf: &MarginCdf) -> f64 {
    cdf.knots
        .windows(2)
        .map(|w| 0.5 * (w[1].0 - w[0].0) * (w[0].1 + w[1].1))
        .sum()
}

/// `V_rag = √Var[s(x,x⁺) − s(x,x⁻)] / ln(e^{−L}/(1 − e^{−L}))`.
pub fn v_rag_from_contrastive_stats(variance: f64, loss: f64) -> Result<f64> {
    if !(variance >= 0.0) {
        return Err(Error::domain(format!("variance {variance} must be nonnegative")));
    }
    if !(loss > 0.0) {
        return Err(Error::domain(format!("contrastive loss {loss} must be positive")));
    }
    if loss >= std::f64::consts::LN_2 {
        return Err(Error::Precondition(format!(
            "contrastive loss {loss} is not better than random (must be below ln 2)"
        )));
    }
    let denom = -loss - (-(-loss).exp()).ln_1p();
    Ok(variance.sqrt() / denom)
}

/// Retrieval-quality decay factor `m(ρ)` under Hellinger shift `ρ`.
///
/// Evaluated in the rationalised form
/// `((√(1 + 12u − 6u²) + 4ρ(1 − u)√(2 − u)) / (2u² − 4u + 1))²` with `u = ρ²`,
/// which equals the quotient form wherever the latter is defined and does not
/// cancel catastrophically near the singular radius.
pub fn retrieval_decay(rho: f64) -> Result<f64> {
    if !(rho >= 0.0) {
        return Err(Error::domain(format!("rho {rho} must be nonnegative")));
    }
    let rho_sing = rho_singular();
    if rho >= rho_sing {
        return Err(Error::Singular { rho, rho_sing });
    }
    let u = rho * rho;
    let root = (-6.0 * u * u + 12.0 * u + 1.0).sqrt();
    let cross = 4.0 * rho * (1.0 - u) * (2.0 - u).sqrt();
    let ratio = (root + cross) / (2.0 * u * u - 4.0 * u + 1.0);
    Ok(ratio * ratio)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PositiveBound {
    /// The formula as written; may be negative.
    pub raw: f64,
    /// `raw` clamped to `[0, 0.9·N_rag]`.
    pub clamped: f64,
}

impl PositiveBound {
    fn new(raw: f64, n_rag: u64) -> Self {
        Self {
            raw,
            clamped: raw.clamp(0.0, 0.9 * n_rag as f64),
        }
    }
}

/// Lower bound on `E[N_pos]` among `n_rag` retrieved examples.
pub fn expected_positive_lower_bound(
    spec: &RetrievalModelSpec,
    comp: &KnowledgeComposition,
    n_rag: u64,
) -> Result<PositiveBound> {
    spec.require_quality()?;
    let raw = 0.9 * n_rag as f64 * (1.0 - comp.class_sum(spec.v_rag));
    Ok(PositiveBound::new(raw, n_rag))
}

fn ext_size_condition(comp: &KnowledgeComposition) -> Condition {
    Condition::greater(
        "n_ext > 2*sqrt(2 ln 10)/min_c r_ext",
        comp.n_ext as f64,
        2.0 * categorical_slack() / comp.r_ext_min(),
    )
}

/// Lower bound on `E[N_pos]` under Hellinger shift `rho`, with
/// `V_rag(ρ) = m(ρ)·V_rag`.
pub fn expected_positive_lower_bound_shifted(
    spec: &RetrievalModelSpec,
    comp: &KnowledgeComposition,
    n_rag: u64,
    rho: f64,
) -> Result<PositiveBound> {
    let size = ext_size_condition(comp);
    if !size.satisfied {
        return Err(Error::Precondition(size.describe()));
    }
    let v_shift = shifted_quality(spec, rho)?;
    let raw = 0.9 * n_rag as f64 * (1.0 - 1.5 * comp.negative_mass(v_shift));
    Ok(PositiveBound::new(raw, n_rag))
}

fn shifted_quality(spec: &RetrievalModelSpec, rho: f64) -> Result<f64> {
    let v_shift = retrieval_decay(rho)? * spec.v_rag;
    if v_shift >= 1.0 {
        return Err(Error::Precondition(format!(
            "shifted retrieval quality m(rho)*v_rag = {v_shift} must be below 1"
        )));
    }
    Ok(v_shift)
}

/// One checked precondition of a benefit bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Condition {
    pub name: String,
    pub lhs: f64,
    pub rhs: f64,
    pub satisfied: bool,
}

impl Condition {
    fn greater(name: &str, lhs: f64, rhs: f64) -> Self {
        Self {
            name: name.to_string(),
            lhs,
            rhs,
            satisfied: lhs > rhs,
        }
    }

    fn less(name: &str, lhs: f64, rhs: f64) -> Self {
        Self {
            name: name.to_string(),
            lhs,
            rhs,
            satisfied: lhs < rhs,
        }
    }

    fn describe(&self) -> String {
        format!("{} (lhs = {}, rhs = {})", self.name, self.lhs, self.rhs)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenefitBound {
    /// `1 − p_t − p_r` as written; may be negative.
    pub raw: f64,
    /// `max(0, raw)`.
    pub probability: f64,
    pub p_t: f64,
    pub p_r: f64,
    pub conditions: Vec<Condition>,
}

impl BenefitBound {
    pub fn all_conditions_hold(&self) -> bool {
        self.conditions.iter().all(|c| c.satisfied)
    }

    pub fn violated(&self) -> impl Iterator<Item = &Condition> {
        self.conditions.iter().filter(|c| !c.satisfied)
    }
}

/// Which retrieval-uncertainty expression to evaluate in the unshifted bound.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RetrievalTerm {
    /// Per-class sum with `√(2 ln 10)` slack and exponent `0.5(r N − slack)`.
    #[default]
    Exact,
    /// Display form with coefficient `1.5 N_ext` and exponent `0.25 r N`.
    Simplified,
}

fn transformer_uncertainty(cdf: &MarginCdf, d_plus: f64, n_cal: u64, n_rag: u64) -> Result<(f64, f64)> {
    if !(d_plus > 0.0) {
        return Err(Error::domain(format!("d_plus = {d_plus} must be positive")));
    }
    if n_cal == 0 {
        return Err(Error::domain("n_cal must be positive"));
    }
    if n_rag == 0 {
        return Err(Error::domain("n_rag must be positive"));
    }
    let integral = margin_cdf_integral(cdf);
    if integral <= 1.0 {
        return Err(Error::Precondition(format!(
            "margin CDF integral {integral} must exceed 1 (better than random)"
        )));
    }
    let gap = cdf.eval(d_plus * (integral - 1.0) * n_rag as f64 / 2.0) - cdf.eval(0.0);
    let p_t = (-2.0 * n_cal as f64 * gap * gap).exp();
    Ok((p_t, integral))
}

fn shared_conditions(integral: f64, d_plus: f64, n_rag: u64, comp: &KnowledgeComposition) -> Vec<Condition> {
    vec![
        ext_size_condition(comp),
        Condition::greater("n_rag > 2/d_plus", n_rag as f64, 2.0 / d_plus),
        Condition::greater("integral of margin CDF > 1", integral, 1.0),
    ]
}

/// Lower bound on `P[α̂_rag < α̂]`, the probability that retrieval lowers
/// the conformal generation risk.
pub fn rag_benefit_probability(
    cdf: &MarginCdf,
    d_plus: f64,
    n_cal: u64,
    n_rag: u64,
    spec: &RetrievalModelSpec,
    comp: &KnowledgeComposition,
) -> Result<BenefitBound> {
    rag_benefit_probability_with(cdf, d_plus, n_cal, n_rag, spec, comp, RetrievalTerm::Exact)
}

pub fn rag_benefit_probability_with(
    cdf: &MarginCdf,
    d_plus: f64,
    n_cal: u64,
    n_rag: u64,
    spec: &RetrievalModelSpec,
    comp: &KnowledgeComposition,
    term: RetrievalTerm,
) -> Result<BenefitBound> {
    spec.require_quality()?;
    let (p_t, integral) = transformer_uncertainty(cdf, d_plus, n_cal, n_rag)?;
    let sum = match term {
        RetrievalTerm::Exact => comp.class_sum(spec.v_rag),
        RetrievalTerm::Simplified => comp.class_sum_simplified(spec.v_rag),
    };
    let p_r = 25.0 / n_rag as f64 * (4.0 - 9.0 * sum).powi(-2);
    let mut conditions = shared_conditions(integral, d_plus, n_rag, comp);
    conditions.insert(
        1,
        Condition::less(
            "n_ext * v_rag^(0.25 min_c r_ext n_ext) < 4/9",
            comp.negative_mass(spec.v_rag),
            4.0 / 9.0,
        ),
    );
    Ok(finish(p_t, p_r, conditions))
}

/// [`rag_benefit_probability`] under Hellinger shift `rho`.
pub fn rag_benefit_probability_shifted(
    cdf: &MarginCdf,
    d_plus: f64,
    n_cal: u64,
    n_rag: u64,
    spec: &RetrievalModelSpec,
    comp: &KnowledgeComposition,
    rho: f64,
) -> Result<BenefitBound> {
    spec.require_quality()?;
    let v_shift = shifted_quality(spec, rho)?;
    let (p_t, integral) = transformer_uncertainty(cdf, d_plus, n_cal, n_rag)?;
    let mass = comp.negative_mass(v_shift);
    let p_r = 100.0 / n_rag as f64 * (8.0 - 17.0 * mass).powi(-2);
    let mut conditions = shared_conditions(integral, d_plus, n_rag, comp);
    conditions.insert(
        1,
        Condition::less("n_ext * v_rag(rho)^(0.25 min_c r_ext n_ext) < 8/17", mass, 8.0 / 17.0),
    );
    Ok(finish(p_t, p_r, conditions))
}

fn finish(p_t: f64, p_r: f64, conditions: Vec<Condition>) -> BenefitBound {
    let raw = 1.0 - p_t - p_r;
    BenefitBound {
        raw,
        probability: raw.max(0.0),
        p_t,
        p_r,
        conditions,
    }
}
