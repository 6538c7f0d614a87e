//! Dimension scorers. Each dimension produces a raw score per sample, which
//! is then mapped into [0, 1] over the batch (or against frozen statistics
//! from a reference run).

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{CostTier, DimensionId, DimensionVector, LoggedSample, WeightConfig};
use crate::stats;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScoreError {
    #[error("prior table is empty")]
    EmptyPriorTable,
    #[error("sample has no reference text")]
    MissingReferenceText,
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("need at least 2 evaluator scores, got {0}")]
    TooFewEvaluators(usize),
    #[error("no ingested value for dimension {0}")]
    MissingDimension(DimensionId),
    #[error("no provider configured for dimension {0}")]
    NoProvider(DimensionId),
    #[error("dimension {dim} does not support provider `{binding}`")]
    UnsupportedProvider { dim: DimensionId, binding: String },
    #[error("sample `{sample_id}`: {source}")]
    Sample {
        sample_id: String,
        #[source]
        source: Box<ScoreError>,
    },
}

impl ScoreError {
    fn at(self, sample_id: &str) -> Self {
        ScoreError::Sample {
            sample_id: sample_id.to_string(),
            source: Box::new(self),
        }
    }
}

/// Min-max over the batch, clipped to [0, 1]. A zero-range batch maps every
/// element to 0.5.
pub fn normalize_batch(raw: &[f64]) -> Vec<f64> {
    stats::min_max(raw)
}

// ---------------------------------------------------------------------------
// Structure

/// Heuristic parameters for the structure dimension. Tokens are
/// whitespace-separated words.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StructurePolicy {
    pub length_min: usize,
    pub length_max: usize,
    pub weight_length: f64,
    pub weight_repetition: f64,
    pub weight_format: f64,
    pub weight_degeneration: f64,
    /// n for the repeated-n-gram fraction.
    pub repetition_n: usize,
    /// n and minimum count for the degeneration flag.
    pub degeneration_n: usize,
    pub degeneration_min_count: usize,
}

impl Default for StructurePolicy {
    fn default() -> Self {
        Self {
            length_min: 10,
            length_max: 1024,
            weight_length: 0.3,
            weight_repetition: 0.3,
            weight_format: 0.2,
            weight_degeneration: 0.2,
            repetition_n: 2,
            degeneration_n: 4,
            degeneration_min_count: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StructureFeatures {
    pub length_tokens: usize,
    pub repetition_ratio: f64,
    pub format_violations: usize,
    pub degeneration_flag: bool,
}

fn ngram_counts<'a>(tokens: &'a [&'a str], n: usize) -> HashMap<&'a [&'a str], usize> {
    let mut counts = HashMap::new();
    if n == 0 || tokens.len() < n {
        return counts;
    }
    for w in tokens.windows(n) {
        *counts.entry(w).or_insert(0) += 1;
    }
    counts
}

/// Fraction of n-gram occurrences whose n-gram appears more than once.
pub fn repetition_ratio(tokens: &[&str], n: usize) -> f64 {
    if n == 0 || tokens.len() < n {
        return 0.0;
    }
    let counts = ngram_counts(tokens, n);
    let total = tokens.len() - n + 1;
    let repeated: usize = counts.values().filter(|c| **c > 1).sum();
    repeated as f64 / total as f64
}

/// Counts formatting problems: unbalanced bracket pairs, an unterminated
/// code fence, control characters and replacement characters.
pub fn format_violations(text: &str) -> usize {
    let mut v = 0;
    for (open, close) in [('(', ')'), ('[', ']'), ('{', '}')] {
        let o = text.chars().filter(|c| *c == open).count();
        let c = text.chars().filter(|c| *c == close).count();
        if o != c {
            v += 1;
        }
    }
    if text.matches("```").count() % 2 == 1 {
        v += 1;
    }
    if text.chars().any(|c| c.is_control() && !matches!(c, '\n' | '\r' | '\t')) {
        v += 1;
    }
    if text.contains('\u{FFFD}') {
        v += 1;
    }
    v
}

pub fn structure_features(text: &str, policy: &StructurePolicy) -> StructureFeatures {
    let tokens: Vec<&str> = text.split_whitespace().collect();
    let degeneration_flag = ngram_counts(&tokens, policy.degeneration_n)
        .values()
        .any(|c| *c >= policy.degeneration_min_count);
    StructureFeatures {
        length_tokens: tokens.len(),
        repetition_ratio: repetition_ratio(&tokens, policy.repetition_n),
        format_violations: format_violations(text),
        degeneration_flag,
    }
}

/// `1 - penalty` for already-extracted features.
pub fn structure_raw(features: &StructureFeatures, policy: &StructurePolicy) -> f64 {
    if features.length_tokens == 0 {
        return 0.0;
    }
    let out_of_band = features.length_tokens < policy.length_min || features.length_tokens > policy.length_max;
    let penalty = policy.weight_length * f64::from(u8::from(out_of_band))
        + policy.weight_repetition * features.repetition_ratio.clamp(0.0, 1.0)
        + policy.weight_format * (features.format_violations.min(3) as f64 / 3.0)
        + policy.weight_degeneration * f64::from(u8::from(features.degeneration_flag));
    1.0 - penalty
}

pub fn score_structure(sample: &LoggedSample, policy: &StructurePolicy) -> f64 {
    structure_raw(&structure_features(&sample.output, policy), policy)
}

// ---------------------------------------------------------------------------
// Priors

/// Per-producer prior information: a preference-derived rating and a
/// quality-per-cost efficiency figure.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct PriorTable {
    pub model_rating: BTreeMap<String, f64>,
    pub cost_efficiency: BTreeMap<String, f64>,
}

fn table_lookup(table: &BTreeMap<String, f64>, producer: &str) -> Result<f64, ScoreError> {
    if table.is_empty() {
        return Err(ScoreError::EmptyPriorTable);
    }
    let values: Vec<f64> = table.values().copied().collect();
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let v = match table.get(producer) {
        Some(v) => *v,
        None => stats::median(&values).expect("non-empty"),
    };
    Ok(stats::scale_into(v, lo, hi))
}

pub fn score_model_prior(sample: &LoggedSample, priors: &PriorTable) -> Result<f64, ScoreError> {
    table_lookup(&priors.model_rating, &sample.producer_id)
}

pub fn score_cost_prior(sample: &LoggedSample, priors: &PriorTable) -> Result<f64, ScoreError> {
    table_lookup(&priors.cost_efficiency, &sample.producer_id)
}

// ---------------------------------------------------------------------------
// Providers

/// A source of raw scores for one dimension.
pub trait ScoreProvider: Send + Sync {
    fn provider_id(&self) -> &str;
    fn cost_tier(&self) -> CostTier;
    fn provide(&self, sample: &LoggedSample) -> Result<f64, ScoreError>;
}

/// Cosine similarity between term-frequency vectors of character n-grams of
/// the output and the sample's reference text. Text is lowercased and
/// whitespace runs collapse to one space.
#[derive(Debug, Clone)]
pub struct CharNgramCosine {
    pub n: usize,
}

impl Default for CharNgramCosine {
    fn default() -> Self {
        Self { n: 3 }
    }
}

fn char_ngram_tf(text: &str, n: usize) -> HashMap<String, u64> {
    let norm = text.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase();
    let chars: Vec<char> = norm.chars().collect();
    let mut tf = HashMap::new();
    if chars.is_empty() {
        return tf;
    }
    if chars.len() < n {
        tf.insert(norm, 1);
        return tf;
    }
    for w in chars.windows(n) {
        *tf.entry(w.iter().collect::<String>()).or_insert(0) += 1;
    }
    tf
}

impl CharNgramCosine {
    pub fn similarity(&self, a: &str, b: &str) -> f64 {
        let ta = char_ngram_tf(a, self.n.max(1));
        let tb = char_ngram_tf(b, self.n.max(1));
        match (ta.is_empty(), tb.is_empty()) {
            (true, true) => return 1.0,
            (true, false) | (false, true) => return 0.0,
            _ => {}
        }
        // integer arithmetic keeps identical inputs at exactly 1.0
        let dot: u64 = ta.iter().map(|(g, c)| c * tb.get(g).copied().unwrap_or(0)).sum();
        let na: u64 = ta.values().map(|c| c * c).sum();
        let nb: u64 = tb.values().map(|c| c * c).sum();
        (dot as f64 / ((na as f64) * (nb as f64)).sqrt()).clamp(0.0, 1.0)
    }
}

impl ScoreProvider for CharNgramCosine {
    fn provider_id(&self) -> &str {
        "builtin:char_ngram_cosine"
    }

    fn cost_tier(&self) -> CostTier {
        CostTier::Low
    }

    fn provide(&self, sample: &LoggedSample) -> Result<f64, ScoreError> {
        let reference = sample.reference.as_deref().ok_or(ScoreError::MissingReferenceText)?;
        Ok(self.similarity(&sample.output, reference))
    }
}

/// Reads a pre-computed score column from the record.
#[derive(Debug, Clone)]
pub struct ColumnProvider {
    id: String,
    pub column: String,
    pub tier: CostTier,
}

impl ColumnProvider {
    pub fn new(column: impl Into<String>, tier: CostTier) -> Self {
        let column = column.into();
        Self {
            id: format!("column:{column}"),
            column,
            tier,
        }
    }
}

impl ScoreProvider for ColumnProvider {
    fn provider_id(&self) -> &str {
        &self.id
    }

    fn cost_tier(&self) -> CostTier {
        self.tier
    }

    fn provide(&self, sample: &LoggedSample) -> Result<f64, ScoreError> {
        sample
            .columns
            .get(&self.column)
            .copied()
            .ok_or_else(|| ScoreError::MissingColumn(self.column.clone()))
    }
}

pub fn score_semantic(sample: &LoggedSample, provider: &dyn ScoreProvider) -> Result<f64, ScoreError> {
    provider.provide(sample)
}

/// Alignment is ingest-only; the provider is expected to be a column reader.
pub fn score_alignment(sample: &LoggedSample, provider: &dyn ScoreProvider) -> Result<f64, ScoreError> {
    provider.provide(sample)
}

// ---------------------------------------------------------------------------
// Agreement

/// `1 - sd / 0.5` over one sample's per-evaluator-normalized scores, with
/// `sd` the population standard deviation.
pub fn score_agreement(normalized: &[f64]) -> Result<f64, ScoreError> {
    if normalized.len() < 2 {
        return Err(ScoreError::TooFewEvaluators(normalized.len()));
    }
    let sd = stats::population_sd(normalized).expect("non-empty");
    Ok((1.0 - sd / 0.5).clamp(0.0, 1.0))
}

/// Observed min/max of each evaluator column.
pub fn evaluator_ranges(samples: &[LoggedSample]) -> BTreeMap<String, Range> {
    let mut ranges: BTreeMap<String, Range> = BTreeMap::new();
    for s in samples {
        for (e, v) in &s.evaluator_scores {
            let r = ranges.entry(e.clone()).or_insert(Range {
                min: f64::INFINITY,
                max: f64::NEG_INFINITY,
            });
            r.min = r.min.min(*v);
            r.max = r.max.max(*v);
        }
    }
    ranges
}

/// Maps each evaluator score into [0, 1] with the given ranges, falling back
/// to the batch's own range for evaluators not listed.
pub fn normalize_evaluator_scores_with(
    samples: &[LoggedSample],
    ranges: &BTreeMap<String, Range>,
) -> Vec<BTreeMap<String, f64>> {
    let batch = evaluator_ranges(samples);
    samples
        .iter()
        .map(|s| {
            s.evaluator_scores
                .iter()
                .map(|(e, v)| {
                    let r = ranges.get(e).unwrap_or(&batch[e]);
                    (e.clone(), stats::scale_into(*v, r.min, r.max))
                })
                .collect()
        })
        .collect()
}

/// Min-max normalizes each evaluator column over the samples that carry it.
/// Returns one map per sample, in input order.
pub fn normalize_evaluator_scores(samples: &[LoggedSample]) -> Vec<BTreeMap<String, f64>> {
    normalize_evaluator_scores_with(samples, &BTreeMap::new())
}

// ---------------------------------------------------------------------------
// Batch scoring

/// Where a dimension's raw score comes from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ProviderBinding {
    /// The built-in scorer for the dimension.
    Builtin,
    /// A pre-computed column on each record.
    Column(String),
    /// The record's own `dims` entry, used as-is without re-normalization.
    Ingested,
}

impl fmt::Display for ProviderBinding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ProviderBinding::Builtin => f.write_str("builtin"),
            ProviderBinding::Column(c) => write!(f, "column:{c}"),
            ProviderBinding::Ingested => f.write_str("ingested"),
        }
    }
}

impl FromStr for ProviderBinding {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "builtin" => Ok(ProviderBinding::Builtin),
            "ingested" => Ok(ProviderBinding::Ingested),
            _ => match s.strip_prefix("column:") {
                Some(c) if !c.is_empty() => Ok(ProviderBinding::Column(c.to_string())),
                _ => Err(format!("invalid provider binding `{s}`")),
            },
        }
    }
}

impl Serialize for ProviderBinding {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ProviderBinding {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Min/max per dimension used to map raw scores into [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub min: f64,
    pub max: f64,
}

/// Ranges used to normalize a batch, reusable to score later batches on the
/// same scale.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub dims: BTreeMap<DimensionId, Range>,
    /// Per-evaluator ranges behind the agreement dimension.
    #[serde(default)]
    pub evaluators: BTreeMap<String, Range>,
}

#[derive(Debug, Clone)]
pub struct ScoringConfig {
    /// Active dimensions are the keys of this config.
    pub weights: WeightConfig,
    pub structure: StructurePolicy,
    pub priors: PriorTable,
    pub providers: BTreeMap<DimensionId, ProviderBinding>,
    pub semantic_ngram: usize,
    /// When set, raw scores are mapped with these ranges instead of the
    /// batch's own min/max.
    pub frozen: Option<NormalizationStats>,
}

impl ScoringConfig {
    pub fn new(weights: WeightConfig) -> Self {
        Self {
            weights,
            structure: StructurePolicy::default(),
            priors: PriorTable::default(),
            providers: default_providers(),
            semantic_ngram: 3,
            frozen: None,
        }
    }
}

pub fn default_providers() -> BTreeMap<DimensionId, ProviderBinding> {
    DimensionId::ALL
        .iter()
        .map(|d| {
            let b = match d {
                DimensionId::Alignment => ProviderBinding::Column("alignment".into()),
                _ => ProviderBinding::Builtin,
            };
            (*d, b)
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct ScoredBatch {
    pub samples: Vec<LoggedSample>,
    /// Ranges actually used, per normalized dimension.
    pub stats: NormalizationStats,
}

fn per_sample<F>(samples: &[LoggedSample], f: F) -> Result<Vec<f64>, ScoreError>
where
    F: Fn(&LoggedSample) -> Result<f64, ScoreError> + Sync,
{
    samples
        .par_iter()
        .map(|s| f(s).map_err(|e| e.at(&s.sample_id)))
        .collect()
}

fn raw_scores(dim: DimensionId, samples: &[LoggedSample], config: &ScoringConfig) -> Result<Vec<f64>, ScoreError> {
    let binding = config.providers.get(&dim).ok_or(ScoreError::NoProvider(dim))?;
    let unsupported = || ScoreError::UnsupportedProvider {
        dim,
        binding: binding.to_string(),
    };
    if let ProviderBinding::Column(c) = binding {
        let provider = ColumnProvider::new(c.clone(), CostTier::Medium);
        return per_sample(samples, |s| provider.provide(s));
    }
    match dim {
        DimensionId::ModelPrior => per_sample(samples, |s| score_model_prior(s, &config.priors)),
        DimensionId::CostPrior => per_sample(samples, |s| score_cost_prior(s, &config.priors)),
        DimensionId::Structure => per_sample(samples, |s| Ok(score_structure(s, &config.structure))),
        DimensionId::Semantic => {
            let provider = CharNgramCosine { n: config.semantic_ngram };
            per_sample(samples, |s| score_semantic(s, &provider))
        }
        DimensionId::Alignment => Err(unsupported()),
        DimensionId::Agreement => {
            let frozen = config.frozen.as_ref().map(|f| f.evaluators.clone()).unwrap_or_default();
            let normalized = normalize_evaluator_scores_with(samples, &frozen);
            samples
                .iter()
                .zip(&normalized)
                .map(|(s, n)| {
                    let v: Vec<f64> = n.values().copied().collect();
                    score_agreement(&v).map_err(|e| e.at(&s.sample_id))
                })
                .collect()
        }
    }
}

/// Fills every sample's `dims` with exactly the active dimension set of the
/// config. Pure in (samples, config).
pub fn score_all(samples: &[LoggedSample], config: &ScoringConfig) -> Result<ScoredBatch, ScoreError> {
    let active: BTreeSet<DimensionId> = config.weights.dims();
    let mut columns: BTreeMap<DimensionId, Vec<f64>> = BTreeMap::new();
    let mut used = NormalizationStats::default();
    for dim in &active {
        let binding = config.providers.get(dim).ok_or(ScoreError::NoProvider(*dim))?;
        let z = if *binding == ProviderBinding::Ingested {
            samples
                .iter()
                .map(|s| {
                    s.dims
                        .as_ref()
                        .and_then(|d| d.get(*dim))
                        .ok_or_else(|| ScoreError::MissingDimension(*dim).at(&s.sample_id))
                })
                .collect::<Result<Vec<_>, _>>()?
        } else {
            let raw = raw_scores(*dim, samples, config)?;
            let range = match config.frozen.as_ref().and_then(|f| f.dims.get(dim)) {
                Some(r) => *r,
                None => Range {
                    min: raw.iter().copied().fold(f64::INFINITY, f64::min),
                    max: raw.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                },
            };
            if !samples.is_empty() {
                used.dims.insert(*dim, range);
            }
            raw.iter().map(|v| stats::scale_into(*v, range.min, range.max)).collect()
        };
        columns.insert(*dim, z);
    }
    let scored = samples
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let mut s = s.clone();
            s.dims = Some(DimensionVector::from_values(columns.iter().map(|(d, col)| (*d, col[i]))));
            s
        })
        .collect();
    if active.contains(&DimensionId::Agreement) {
        let mut ranges = evaluator_ranges(samples);
        if let Some(f) = &config.frozen {
            ranges.extend(f.evaluators.clone());
        }
        used.evaluators = ranges;
    }
    Ok(ScoredBatch { samples: scored, stats: used })
}
