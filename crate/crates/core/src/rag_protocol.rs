//! Constrained generation over an in-memory knowledge base.
//!
//! Retrieval is a brute-force cosine KNN scan. Generation draws from a
//! [`TextGenerator`] until `λ_g` mutually diverse outputs are collected,
//! rejecting any draw whose similarity to an accepted output exceeds `λ_s`.

use std::io::BufRead;
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config_search::RagConfiguration;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KbEntry {
    pub embedding: Vec<f64>,
    pub label: String,
    pub payload: String,
}

/// Immutable collection of embedded examples sharing one dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct KnowledgeBase {
    entries: Vec<KbEntry>,
    dim: usize,
}

impl KnowledgeBase {
    pub fn new(entries: Vec<KbEntry>) -> Result<Self> {
        let dim = entries.first().map_or(0, |e| e.embedding.len());
        for (i, e) in entries.iter().enumerate() {
            if e.embedding.is_empty() {
                return Err(Error::domain(format!("entry {i} has an empty embedding")));
            }
            if e.embedding.len() != dim {
                return Err(Error::domain(format!(
                    "entry {i} has dimension {}, expected {dim}",
                    e.embedding.len()
                )));
            }
            if e.embedding.iter().any(|x| !x.is_finite()) {
                return Err(Error::domain(format!("entry {i} has a non-finite coordinate")));
            }
            if norm(&e.embedding) == 0.0 {
                return Err(Error::domain(format!("entry {i} has a zero embedding")));
            }
        }
        Ok(Self { entries, dim })
    }

    /// One JSON object per line with fields `embedding`, `label`, `payload`.
    /// Blank lines are skipped; line numbers in errors are 1-based.
    pub fn from_jsonl<R: BufRead>(reader: R) -> Result<Self> {
        let mut entries = Vec::new();
        for (idx, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: KbEntry = serde_json::from_str(&line).map_err(|e| Error::Parse {
                line: idx + 1,
                message: e.to_string(),
            })?;
            entries.push(entry);
        }
        Self::new(entries)
    }

    pub fn from_jsonl_path(path: impl AsRef<Path>) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::from_jsonl(std::io::BufReader::new(file))
    }

    pub fn entries(&self) -> &[KbEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Embedding dimension; 0 for an empty base.
    pub fn dim(&self) -> usize {
        self.dim
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::domain(format!("dimension mismatch: {} vs {}", a.len(), b.len())));
    }
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return Err(Error::domain("cosine similarity of a zero vector"));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    // Adding 0.0 maps −0.0 to +0.0 so orthogonal pairs tie under total_cmp.
    Ok((dot / (na * nb)).clamp(-1.0, 1.0) + 0.0)
}

/// A retrieved entry with its position in the knowledge base.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Neighbor {
    pub index: usize,
    pub similarity: f64,
}

/// Top-`k` entries by descending cosine similarity to `query`; ties go to
/// the lower index.
pub fn knn_retrieve(kb: &KnowledgeBase, query: &[f64], k: usize) -> Result<Vec<Neighbor>> {
    if k > kb.len() {
        return Err(Error::domain(format!(
            "requested {k} neighbours from a knowledge base of {}",
            kb.len()
        )));
    }
    if k == 0 {
        return Ok(Vec::new());
    }
    let mut scored = kb
        .entries
        .iter()
        .enumerate()
        .map(|(index, e)| cosine_similarity(&e.embedding, query).map(|similarity| Neighbor { index, similarity }))
        .collect::<Result<Vec<_>>>()?;
    let order = |a: &Neighbor, b: &Neighbor| b.similarity.total_cmp(&a.similarity).then(a.index.cmp(&b.index));
    if k < scored.len() {
        scored.select_nth_unstable_by(k - 1, order);
        scored.truncate(k);
    }
    scored.sort_by(order);
    Ok(scored)
}

/// Source of candidate generations conditioned on retrieved examples.
pub trait TextGenerator {
    fn generate(&mut self, context: &[&KbEntry]) -> String;

    /// Draw cap for one [`constrained_generate`] call, if the generator sets one.
    fn max_draws(&self) -> Option<usize> {
        None
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingMode {
    /// Independent draws proportional to the weights.
    #[default]
    Weighted,
    /// Outputs in order, wrapping around; weights are ignored.
    Cycle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockGeneratorSpec {
    pub outputs: Vec<String>,
    #[serde(default)]
    pub weights: Option<Vec<f64>>,
    #[serde(default)]
    pub mode: SamplingMode,
    #[serde(default)]
    pub max_draws: Option<usize>,
}

/// Context-blind generator over a fixed list of outputs.
#[derive(Debug, Clone)]
pub struct MockGenerator {
    outputs: Vec<String>,
    dist: Option<WeightedIndex<f64>>,
    mode: SamplingMode,
    rng: ChaCha8Rng,
    cursor: usize,
    max_draws: Option<usize>,
}

impl MockGenerator {
    pub fn new(spec: MockGeneratorSpec, seed: u64) -> Result<Self> {
        if spec.outputs.is_empty() {
            return Err(Error::domain("mock generator needs at least one output"));
        }
        let dist = match spec.mode {
            SamplingMode::Cycle => None,
            SamplingMode::Weighted => {
                let weights = spec.weights.clone().unwrap_or_else(|| vec![1.0; spec.outputs.len()]);
                if weights.len() != spec.outputs.len() {
                    return Err(Error::domain(format!(
                        "{} weights for {} outputs",
                        weights.len(),
                        spec.outputs.len()
                    )));
                }
                if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
                    return Err(Error::domain("weights must be finite and nonnegative"));
                }
                Some(WeightedIndex::new(&weights).map_err(|e| Error::domain(e.to_string()))?)
            }
        };
        if spec.max_draws == Some(0) {
            return Err(Error::domain("max_draws must be positive"));
        }
        Ok(Self {
            outputs: spec.outputs,
            dist,
            mode: spec.mode,
            rng: ChaCha8Rng::seed_from_u64(seed),
            cursor: 0,
            max_draws: spec.max_draws,
        })
    }

    pub fn cycle(outputs: Vec<String>) -> Result<Self> {
        Self::new(
            MockGeneratorSpec {
                outputs,
                weights: None,
                mode: SamplingMode::Cycle,
                max_draws: None,
            },
            0,
        )
    }

    pub fn mode(&self) -> SamplingMode {
        self.mode
    }
}

impl TextGenerator for MockGenerator {
    fn generate(&mut self, _context: &[&KbEntry]) -> String {
        let idx = match &self.dist {
            Some(dist) => dist.sample(&mut self.rng),
            None => {
                let i = self.cursor;
                self.cursor = (self.cursor + 1) % self.outputs.len();
                i
            }
        };
        self.outputs[idx].clone()
    }

    fn max_draws(&self) -> Option<usize> {
        self.max_draws
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GenerationSet {
    pub items: Vec<String>,
    /// Draws rejected for being too similar to an accepted item.
    pub rejections: usize,
    /// Retrieved example indices, most similar first.
    pub retrieved: Vec<usize>,
    pub draws: usize,
}

/// Run the constrained generation protocol for one query.
///
/// Retrieves `n_rag` examples once, then draws until `λ_g` items are
/// accepted. The draw cap is the generator's own, else `1000·λ_g`.
pub fn constrained_generate<G, S>(
    generator: &mut G,
    kb: &KnowledgeBase,
    query: &[f64],
    config: &RagConfiguration,
    similarity: S,
) -> Result<GenerationSet>
where
    G: TextGenerator + ?Sized,
    S: Fn(&str, &str) -> f64,
{
    config.validate()?;
    let neighbors = knn_retrieve(kb, query, config.n_rag as usize)?;
    let context: Vec<&KbEntry> = neighbors.iter().map(|n| &kb.entries[n.index]).collect();
    let target = config.lambda_g as usize;
    let cap = generator.max_draws().unwrap_or(1000 * target);

    let mut set = GenerationSet {
        items: Vec::with_capacity(target),
        rejections: 0,
        retrieved: neighbors.iter().map(|n| n.index).collect(),
        draws: 0,
    };
    while set.items.len() < target {
        if set.draws == cap {
            let draws = set.draws;
            return Err(Error::Saturated {
                partial: Box::new(set),
                draws,
            });
        }
        let candidate = generator.generate(&context);
        set.draws += 1;
        if set
            .items
            .iter()
            .any(|item| similarity(item, &candidate) > config.lambda_s)
        {
            set.rejections += 1;
        } else {
            set.items.push(candidate);
        }
    }
    Ok(set)
}

/// Whitespace tokens, lowercased.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_lowercase).collect()
}

/// Length of the longest common subsequence.
pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    let mut row = vec![0usize; b.len() + 1];
    for x in a {
        let mut diag = 0;
        for (j, y) in b.iter().enumerate() {
            let up = row[j + 1];
            row[j + 1] = if x == y { diag + 1 } else { up.max(row[j]) };
            diag = up;
        }
    }
    row[b.len()]
}

/// ROUGE-L F1 with `β = 1`, i.e. `2·LCS/(|c| + |r|)`.
pub fn rouge_l_f1<T: PartialEq>(candidate: &[T], reference: &[T]) -> f64 {
    let lcs = lcs_len(candidate, reference);
    if lcs == 0 {
        return 0.0;
    }
    (2 * lcs) as f64 / (candidate.len() + reference.len()) as f64
}

/// `1 − ROUGE-L F1`, computed as `(|c| + |r| − 2·LCS)/(|c| + |r|)` so that
/// rational risks round once.
pub fn rouge_l_risk<T: PartialEq>(candidate: &[T], reference: &[T]) -> Result<f64> {
    if reference.is_empty() {
        return Err(Error::domain("empty reference"));
    }
    let total = candidate.len() + reference.len();
    Ok((total - 2 * lcs_len(candidate, reference)) as f64 / total as f64)
}

pub fn rouge_l_risk_text(candidate: &str, reference: &str) -> Result<f64> {
    rouge_l_risk(&tokenize(candidate), &tokenize(reference))
}

/// ROUGE-L F1 of two texts, for use as a generation similarity.
pub fn rouge_l_similarity(a: &str, b: &str) -> f64 {
    rouge_l_f1(&tokenize(a), &tokenize(b))
}

/// Jaccard index of the token sets; two empty texts count as identical.
pub fn jaccard_similarity(a: &str, b: &str) -> f64 {
    use std::collections::BTreeSet;
    let sa: BTreeSet<String> = tokenize(a).into_iter().collect();
    let sb: BTreeSet<String> = tokenize(b).into_iter().collect();
    let union = sa.union(&sb).count();
    if union == 0 {
        return 1.0;
    }
    sa.intersection(&sb).count() as f64 / union as f64
}
