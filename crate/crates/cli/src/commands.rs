use std::io::BufRead;
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use genrisk::config_search::{self, GraphSearch, RagConfiguration, SearchMethod};
use genrisk::rag_protocol::{
    constrained_generate, jaccard_similarity, rouge_l_risk_text, rouge_l_similarity, KbEntry, KnowledgeBase,
    MockGenerator, MockGeneratorSpec, SamplingMode,
};
use genrisk::rag_theory::{self, ContrastiveStats, KnowledgeComposition, MarginCdf, RetrievalModelSpec, RetrievalTerm};
use genrisk::risk_bounds::{conformal_risk_detailed, CalibrationSummary};
use genrisk::shift_bounds::{shifted_conformal_risk_with, RadiusVariant};
use genrisk::simulation::{self, GridConfig, RiskDistribution, RiskTable, ShiftedCoverageOptions};
use genrisk::Error;
use serde::Deserialize;
use serde_json::{json, Value};

use crate::input::{check_schema, Inputs};
use crate::{BoundArgs, ProtocolArgs, ShiftBoundArgs, SpecArgs, ValidConfigsArgs};

pub struct CommandOutput {
    pub parameters: Value,
    pub results: Value,
    pub warnings: Vec<String>,
}

fn load_table(inputs: &mut Inputs, path: &std::path::Path) -> Result<RiskTable> {
    let bytes = inputs.read("risk_table", path)?;
    let table = RiskTable::from_csv_reader(bytes.as_slice(), inputs.lenient)
        .with_context(|| format!("reading risk table {}", path.display()))?;
    if inputs.lenient {
        let header = bytes.split(|b| *b == b'\n').next().unwrap_or_default();
        let header = String::from_utf8_lossy(header);
        let extra: Vec<String> = header
            .trim()
            .split(',')
            .map(str::trim)
            .filter(|c| !simulation::CSV_HEADER.contains(c))
            .map(str::to_string)
            .collect();
        inputs.unknown_fields("risk_table", extra)?;
    }
    Ok(table)
}

fn summary_json(s: &CalibrationSummary) -> Value {
    json!({"n_cal": s.n_cal, "r_hat": s.r_hat, "v_hat": s.v_hat})
}

fn variance_warning(id: &str, s: &CalibrationSummary) -> Option<String> {
    (!s.variance_is_feasible()).then(|| {
        format!(
            "config {id}: v_hat = {} exceeds the largest variance attainable with mean {}",
            s.v_hat, s.r_hat
        )
    })
}

pub fn bound(args: &BoundArgs, inputs: &mut Inputs) -> Result<CommandOutput> {
    let table = load_table(inputs, &args.risk_table)?;
    let summary = simulation::calibrate(&table, &args.config, args.delta)?;
    let hb = conformal_risk_detailed(&summary)?;
    Ok(CommandOutput {
        parameters: json!({"config_id": args.config, "delta": args.delta}),
        results: json!({
            "calibration": summary_json(&summary),
            "alpha_hat": hb.alpha,
            "branch": hb.branch,
            "hoeffding_bound": hb.hoeffding,
            "binomial_bound": hb.binomial,
        }),
        warnings: variance_warning(&args.config, &summary).into_iter().collect(),
    })
}

pub fn shift_bound(args: &ShiftBoundArgs, inputs: &mut Inputs) -> Result<CommandOutput> {
    let table = load_table(inputs, &args.risk_table)?;
    let summary = simulation::calibrate(&table, &args.config, args.delta)?;
    let report = shifted_conformal_risk_with(&summary, args.rho, args.exponent_variant)?;
    let plain = conformal_risk_detailed(&summary)?;
    Ok(CommandOutput {
        parameters: json!({
            "config_id": args.config,
            "delta": args.delta,
            "rho": args.rho,
            "exponent_variant": args.exponent_variant,
        }),
        results: json!({
            "calibration": summary_json(&summary),
            "r_bar_rho": report.r_bar_rho,
            "alpha_hat_rho": report.alpha_rho,
            "branch": report.branch,
            "rho_max": report.rho_max,
            "alpha_hat_unshifted": plain.alpha,
        }),
        warnings: variance_warning(&args.config, &summary).into_iter().collect(),
    })
}

#[derive(Debug, Deserialize)]
struct GraphSpec {
    schema_version: Option<u32>,
    ids: Vec<String>,
    #[serde(default)]
    budgets: Option<Vec<f64>>,
    weights: Vec<Vec<f64>>,
}

pub fn valid_configs(args: &ValidConfigsArgs, inputs: &mut Inputs) -> Result<CommandOutput> {
    let table = load_table(inputs, &args.risk_table)?;
    let grid = table.to_grid(args.alpha, args.delta)?;
    let mut warnings: Vec<String> = grid
        .entries()
        .iter()
        .filter_map(|e| variance_warning(&e.id, &e.summary))
        .collect();
    let report = match (&args.graph_spec, args.method) {
        (Some(_), SearchMethod::Bonferroni) => bail!("--graph-spec requires --method graph"),
        (None, method) => config_search::valid_set(&grid, method)?,
        (Some(path), SearchMethod::Graph) => {
            let spec: GraphSpec = inputs.read_json("graph_spec", path)?;
            check_schema("graph_spec", spec.schema_version)?;
            let (budgets, weights) = align_graph(&grid, spec)?;
            config_search::graph_valid_set(&grid, &budgets, &weights)?
        }
    };
    if report.accepted.is_empty() {
        warnings.push(format!("no configuration is certified at alpha = {}", args.alpha));
    }
    Ok(CommandOutput {
        parameters: json!({
            "alpha": args.alpha,
            "delta": args.delta,
            "method": args.method,
            "n_configs": grid.len(),
            "n_cal": grid.entries()[0].summary.n_cal,
        }),
        results: json!({
            "accepted": report.accepted,
            "p_values": report.p_values,
            "final_budgets": report.final_budgets,
            "steps": report.steps,
        }),
        warnings,
    })
}

/// Reorders a graph spec given by id into the grid's entry order.
fn align_graph(grid: &config_search::HypothesisGrid, spec: GraphSpec) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let n = grid.len();
    if spec.ids.len() != n {
        bail!(
            "graph_spec lists {} ids but the risk table has {n} configs",
            spec.ids.len()
        );
    }
    let pos: Vec<usize> = grid
        .entries()
        .iter()
        .map(|e| {
            spec.ids
                .iter()
                .position(|id| *id == e.id)
                .ok_or_else(|| anyhow!("graph_spec has no id '{}'", e.id))
        })
        .collect::<Result<_>>()?;
    if spec.weights.len() != n || spec.weights.iter().any(|r| r.len() != n) {
        bail!("graph_spec weights must be {n}x{n}");
    }
    let budgets = match spec.budgets {
        Some(b) if b.len() == n => pos.iter().map(|&p| b[p]).collect(),
        Some(b) => bail!("graph_spec has {} budgets for {n} configs", b.len()),
        None => config_search::uniform_budgets(n, grid.delta()),
    };
    let weights = pos
        .iter()
        .map(|&pi| pos.iter().map(|&pj| spec.weights[pi][pj]).collect())
        .collect::<Vec<Vec<f64>>>();
    // Validate early for a message that names the spec.
    GraphSearch::new(
        grid.entries().iter().map(|e| e.id.clone()).collect(),
        vec![1.0; n],
        budgets.clone(),
        weights.clone(),
        grid.delta(),
    )
    .context("graph_spec")?;
    Ok((budgets, weights))
}

#[derive(Debug, Deserialize)]
struct TheorySpec {
    schema_version: Option<u32>,
    retrieval: RetrievalInput,
    knowledge: KnowledgeComposition,
    transformer: TransformerInput,
    n_cal: u64,
    n_rag: u64,
    #[serde(default)]
    rho: Option<f64>,
    #[serde(default)]
    retrieval_term: RetrievalTerm,
}

#[derive(Debug, Deserialize)]
struct RetrievalInput {
    #[serde(default)]
    v_rag: Option<f64>,
    #[serde(default)]
    contrastive: Option<ContrastiveStats>,
}

#[derive(Debug, Deserialize)]
struct TransformerInput {
    d_plus: f64,
    #[serde(default)]
    margin_cdf: Option<MarginCdf>,
    #[serde(default)]
    margin_samples: Option<Vec<f64>>,
}

pub fn theory(args: &SpecArgs, inputs: &mut Inputs) -> Result<CommandOutput> {
    let spec: TheorySpec = inputs.read_json("theory_spec", &args.spec)?;
    check_schema("theory_spec", spec.schema_version)?;
    let retrieval = match (spec.retrieval.v_rag, spec.retrieval.contrastive) {
        (Some(v), None) => RetrievalModelSpec::new(v)?,
        (None, Some(stats)) => RetrievalModelSpec::from_contrastive(stats)?,
        _ => bail!("retrieval needs exactly one of v_rag or contrastive"),
    };
    let knowledge = KnowledgeComposition::new(spec.knowledge.n_ext, spec.knowledge.r_ext, spec.knowledge.r_cal)?;
    let cdf = match (spec.transformer.margin_cdf, spec.transformer.margin_samples) {
        (Some(c), None) => c,
        (None, Some(samples)) => MarginCdf::from_samples(&samples)?,
        _ => bail!("transformer needs exactly one of margin_cdf or margin_samples"),
    };
    let d_plus = spec.transformer.d_plus;

    let positives = rag_theory::expected_positive_lower_bound(&retrieval, &knowledge, spec.n_rag)?;
    let benefit = rag_theory::rag_benefit_probability_with(
        &cdf,
        d_plus,
        spec.n_cal,
        spec.n_rag,
        &retrieval,
        &knowledge,
        spec.retrieval_term,
    )?;
    let mut warnings: Vec<String> = benefit
        .violated()
        .map(|c| format!("condition not met: {} (lhs = {}, rhs = {})", c.name, c.lhs, c.rhs))
        .collect();
    let mut results = json!({
        "v_rag": retrieval.v_rag,
        "margin_cdf_integral": rag_theory::margin_cdf_integral(&cdf),
        "expected_positives": positives,
        "benefit": benefit,
    });
    if let Some(rho) = spec.rho {
        let shifted_pos = rag_theory::expected_positive_lower_bound_shifted(&retrieval, &knowledge, spec.n_rag, rho)?;
        let shifted = rag_theory::rag_benefit_probability_shifted(
            &cdf, d_plus, spec.n_cal, spec.n_rag, &retrieval, &knowledge, rho,
        )?;
        warnings.extend(shifted.violated().map(|c| {
            format!(
                "shifted condition not met: {} (lhs = {}, rhs = {})",
                c.name, c.lhs, c.rhs
            )
        }));
        results["shifted"] = json!({
            "rho": rho,
            "decay_factor": rag_theory::retrieval_decay(rho)?,
            "expected_positives": shifted_pos,
            "benefit": shifted,
        });
    }
    Ok(CommandOutput {
        parameters: json!({
            "n_cal": spec.n_cal,
            "n_rag": spec.n_rag,
            "n_ext": knowledge.n_ext,
            "d_plus": d_plus,
            "rho": spec.rho,
            "retrieval_term": spec.retrieval_term,
        }),
        results,
        warnings,
    })
}

#[derive(Debug, Deserialize)]
struct SimulateSpec {
    schema_version: Option<u32>,
    experiment: Experiment,
}

fn default_trials() -> usize {
    5000
}

#[derive(Debug, Deserialize)]
#[serde(rename_all = "snake_case")]
enum Experiment {
    Coverage {
        distribution: RiskDistribution,
        n_cal: usize,
        delta: f64,
        #[serde(default = "default_trials")]
        trials: usize,
    },
    ShiftedCoverage {
        pool: Vec<f64>,
        n_cal: usize,
        delta: f64,
        rho_cap: f64,
        #[serde(default = "default_trials")]
        trials: usize,
        #[serde(default)]
        concentration: Option<f64>,
        #[serde(default)]
        test_size: Option<usize>,
        #[serde(default)]
        variant: RadiusVariant,
    },
    Fwer {
        #[serde(default)]
        grid: Option<Vec<GridConfig>>,
        #[serde(default)]
        synthetic: Option<SyntheticGrid>,
        n_cal: usize,
        alpha: f64,
        delta: f64,
        method: SearchMethod,
        #[serde(default = "default_trials")]
        trials: usize,
    },
}

#[derive(Debug, Deserialize)]
struct SyntheticGrid {
    n_configs: usize,
    n_above: usize,
}

pub fn simulate(args: &SpecArgs, inputs: &mut Inputs, seed: u64) -> Result<CommandOutput> {
    let spec: SimulateSpec = inputs.read_json("simulation_spec", &args.spec)?;
    check_schema("simulation_spec", spec.schema_version)?;
    let (parameters, results) = match spec.experiment {
        Experiment::Coverage {
            distribution,
            n_cal,
            delta,
            trials,
        } => {
            let r = simulation::coverage_experiment(&distribution, n_cal, delta, trials, seed)?;
            (
                json!({"experiment": "coverage", "distribution": distribution, "n_cal": n_cal, "delta": delta, "trials": trials}),
                serde_json::to_value(r)?,
            )
        }
        Experiment::ShiftedCoverage {
            pool,
            n_cal,
            delta,
            rho_cap,
            trials,
            concentration,
            test_size,
            variant,
        } => {
            let options = ShiftedCoverageOptions {
                concentration,
                test_size,
                variant,
            };
            let r = simulation::shifted_coverage_experiment(&pool, n_cal, delta, rho_cap, trials, seed, options)?;
            (
                json!({
                    "experiment": "shifted_coverage",
                    "pool_size": pool.len(),
                    "n_cal": n_cal,
                    "delta": delta,
                    "rho_cap": rho_cap,
                    "trials": trials,
                    "variant": variant,
                }),
                serde_json::to_value(r)?,
            )
        }
        Experiment::Fwer {
            grid,
            synthetic,
            n_cal,
            alpha,
            delta,
            method,
            trials,
        } => {
            let grid = match (grid, synthetic) {
                (Some(g), None) => g,
                (None, Some(s)) => simulation::synthesize_grid(s.n_configs, s.n_above, alpha)?,
                _ => bail!("fwer needs exactly one of grid or synthetic"),
            };
            let r = simulation::fwer_experiment(&grid, n_cal, alpha, delta, method, trials, seed)?;
            (
                json!({
                    "experiment": "fwer",
                    "n_configs": grid.len(),
                    "n_above_alpha": grid.iter().filter(|c| c.distribution.mean() > alpha).count(),
                    "n_cal": n_cal,
                    "alpha": alpha,
                    "delta": delta,
                    "method": method,
                    "trials": trials,
                }),
                serde_json::to_value(r)?,
            )
        }
    };
    Ok(CommandOutput {
        parameters,
        results,
        warnings: Vec::new(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TextSimilarity {
    Jaccard,
    RougeL,
}

impl FromStr for TextSimilarity {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "jaccard" => Ok(TextSimilarity::Jaccard),
            "rouge-l" => Ok(TextSimilarity::RougeL),
            other => Err(format!("unknown similarity '{other}' (expected jaccard or rouge-l)")),
        }
    }
}

impl TextSimilarity {
    fn name(self) -> &'static str {
        match self {
            TextSimilarity::Jaccard => "jaccard",
            TextSimilarity::RougeL => "rouge-l",
        }
    }

    fn func(self) -> fn(&str, &str) -> f64 {
        match self {
            TextSimilarity::Jaccard => jaccard_similarity,
            TextSimilarity::RougeL => rouge_l_similarity,
        }
    }
}

#[derive(Debug, Deserialize)]
struct GeneratorFile {
    schema_version: Option<u32>,
    outputs: Vec<String>,
    #[serde(default)]
    weights: Option<Vec<f64>>,
    #[serde(default)]
    mode: SamplingMode,
    #[serde(default)]
    max_draws: Option<usize>,
}

fn load_kb(inputs: &mut Inputs, path: &std::path::Path) -> Result<KnowledgeBase> {
    let bytes = inputs.read("knowledge_base", path)?;
    let mut entries = Vec::new();
    for (i, line) in bytes.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let entry: KbEntry = inputs
            .parse_json(&format!("knowledge_base line {}", i + 1), &line)
            .map_err(|e| Error::Parse {
                line: i + 1,
                message: format!("{e:#}"),
            })?;
        entries.push(entry);
    }
    Ok(KnowledgeBase::new(entries)?)
}

pub fn protocol_demo(args: &ProtocolArgs, inputs: &mut Inputs, seed: u64) -> Result<CommandOutput> {
    let kb = load_kb(inputs, &args.kb)?;
    let gen_file: GeneratorFile = inputs.read_json("generator", &args.generator)?;
    check_schema("generator", gen_file.schema_version)?;
    let mut generator = MockGenerator::new(
        MockGeneratorSpec {
            outputs: gen_file.outputs,
            weights: gen_file.weights,
            mode: gen_file.mode,
            max_draws: gen_file.max_draws,
        },
        seed,
    )?;
    let config = RagConfiguration::new(args.n_rag, args.lambda_g, args.lambda_s)?;
    if args.query.len() != kb.dim() {
        bail!(
            "query has dimension {}, knowledge base has {}",
            args.query.len(),
            kb.dim()
        );
    }
    let sim = args.similarity.func();
    let (set, saturated) = match constrained_generate(&mut generator, &kb, &args.query, &config, sim) {
        Ok(set) => (set, false),
        Err(Error::Saturated { partial, .. }) => (*partial, true),
        Err(e) => return Err(e.into()),
    };
    let mut warnings = Vec::new();
    if saturated {
        warnings.push(format!(
            "generation saturated after {} draws with {} of {} items",
            set.draws,
            set.items.len(),
            args.lambda_g
        ));
    }
    let retrieved: Vec<Value> = set
        .retrieved
        .iter()
        .map(|&i| {
            let e = &kb.entries()[i];
            json!({"index": i, "label": e.label, "payload": e.payload})
        })
        .collect();
    let mut results = json!({
        "items": set.items,
        "rejections": set.rejections,
        "draws": set.draws,
        "saturated": saturated,
        "retrieved": retrieved,
    });
    if let Some(reference) = &args.reference {
        let risks = set
            .items
            .iter()
            .map(|item| rouge_l_risk_text(item, reference))
            .collect::<genrisk::Result<Vec<f64>>>()?;
        let best = risks.iter().copied().fold(1.0, f64::min);
        results["rouge_l_risks"] = json!(risks);
        results["best_item_risk"] = json!(best);
    }
    Ok(CommandOutput {
        parameters: json!({
            "n_rag": args.n_rag,
            "lambda_g": args.lambda_g,
            "lambda_s": args.lambda_s,
            "similarity": args.similarity.name(),
            "query": args.query,
            "kb_size": kb.len(),
        }),
        results,
        warnings,
    })
}
