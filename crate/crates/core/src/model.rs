//! Shared domain types: logged samples, dimension vectors, weight configs,
//! evaluator profiles and simulation outcomes.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sim::AttackStrategy;

/// Current version of the line-delimited record schema.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("weight for {0} is negative or not finite")]
    InvalidWeight(DimensionId),
    #[error("weight config has no positive weights")]
    EmptyWeights,
    #[error("unknown dimension `{0}`")]
    UnknownDimension(String),
}

/// Task family a logged sample belongs to.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum TaskFamily {
    QA,
    Summarization,
    Other(String),
}

impl TaskFamily {
    pub fn as_str(&self) -> &str {
        match self {
            TaskFamily::QA => "qa",
            TaskFamily::Summarization => "summarization",
            TaskFamily::Other(name) => name,
        }
    }
}

impl fmt::Display for TaskFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl From<&str> for TaskFamily {
    fn from(s: &str) -> Self {
        match s.to_ascii_lowercase().as_str() {
            "qa" => TaskFamily::QA,
            "summarization" | "summ" => TaskFamily::Summarization,
            _ => TaskFamily::Other(s.to_string()),
        }
    }
}

impl Serialize for TaskFamily {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for TaskFamily {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        Ok(TaskFamily::from(s.as_str()))
    }
}

/// The quality dimension families. Declaration order is the canonical
/// column order everywhere (maps, reports, CSV files).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DimensionId {
    ModelPrior,
    CostPrior,
    Structure,
    Semantic,
    Alignment,
    Agreement,
}

impl DimensionId {
    pub const ALL: [DimensionId; 6] = [
        DimensionId::ModelPrior,
        DimensionId::CostPrior,
        DimensionId::Structure,
        DimensionId::Semantic,
        DimensionId::Alignment,
        DimensionId::Agreement,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            DimensionId::ModelPrior => "model_prior",
            DimensionId::CostPrior => "cost_prior",
            DimensionId::Structure => "structure",
            DimensionId::Semantic => "semantic",
            DimensionId::Alignment => "alignment",
            DimensionId::Agreement => "agreement",
        }
    }

    /// Alignment is reported per task family by the audit.
    pub fn is_task_sensitive(&self) -> bool {
        matches!(self, DimensionId::Alignment)
    }
}

impl fmt::Display for DimensionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DimensionId {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        DimensionId::ALL
            .iter()
            .copied()
            .find(|d| d.as_str() == s)
            .ok_or_else(|| ModelError::UnknownDimension(s.to_string()))
    }
}

/// Normalized dimension scores for one sample. Values are clipped to [0, 1]
/// on construction and insertion.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DimensionVector {
    values: BTreeMap<DimensionId, f64>,
}

impl DimensionVector {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_values<I: IntoIterator<Item = (DimensionId, f64)>>(values: I) -> Self {
        let mut v = Self::new();
        for (k, z) in values {
            v.insert(k, z);
        }
        v
    }

    pub fn insert(&mut self, dim: DimensionId, z: f64) {
        self.values.insert(dim, clip01(z));
    }

    pub fn get(&self, dim: DimensionId) -> Option<f64> {
        self.values.get(&dim).copied()
    }

    pub fn keys(&self) -> impl Iterator<Item = DimensionId> + '_ {
        self.values.keys().copied()
    }

    pub fn key_set(&self) -> BTreeSet<DimensionId> {
        self.values.keys().copied().collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = (DimensionId, f64)> + '_ {
        self.values.iter().map(|(k, v)| (*k, *v))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Restrict to the given dimensions. Dimensions not present are skipped.
    pub fn project<'a, I: IntoIterator<Item = &'a DimensionId>>(&self, dims: I) -> Self {
        let values = dims
            .into_iter()
            .filter_map(|d| self.values.get(d).map(|z| (*d, *z)))
            .collect();
        Self { values }
    }
}

/// Clip to [0, 1]; NaN maps to 0.
pub fn clip01(x: f64) -> f64 {
    if x.is_nan() {
        0.0
    } else {
        x.clamp(0.0, 1.0)
    }
}

/// One logged (query, output) record with its evaluator scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoggedSample {
    #[serde(default = "schema_version")]
    pub schema: u32,
    pub sample_id: String,
    pub task: TaskFamily,
    pub producer_id: String,
    #[serde(default)]
    pub query: String,
    #[serde(default)]
    pub output: String,
    /// Reference text for the built-in semantic baseline.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<String>,
    #[serde(default)]
    pub evaluator_scores: BTreeMap<String, f64>,
    /// Reference quality signal ("GT").
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt: Option<f64>,
    /// Pre-computed named score columns read by external providers.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub columns: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dims: Option<DimensionVector>,
    /// Unknown fields, preserved for passthrough.
    #[serde(flatten)]
    pub extra: serde_json::Map<String, serde_json::Value>,
}

fn schema_version() -> u32 {
    SCHEMA_VERSION
}

impl LoggedSample {
    pub fn new(
        sample_id: impl Into<String>,
        task: TaskFamily,
        producer_id: impl Into<String>,
        query: impl Into<String>,
        output: impl Into<String>,
    ) -> Self {
        Self {
            schema: SCHEMA_VERSION,
            sample_id: sample_id.into(),
            task,
            producer_id: producer_id.into(),
            query: query.into(),
            output: output.into(),
            reference: None,
            evaluator_scores: BTreeMap::new(),
            gt: None,
            columns: BTreeMap::new(),
            dims: None,
            extra: serde_json::Map::new(),
        }
    }

    pub fn with_gt(mut self, gt: f64) -> Self {
        self.gt = Some(gt);
        self
    }

    pub fn with_reference(mut self, reference: impl Into<String>) -> Self {
        self.reference = Some(reference.into());
        self
    }

    pub fn with_evaluator(mut self, id: impl Into<String>, score: f64) -> Self {
        self.evaluator_scores.insert(id.into(), score);
        self
    }

    pub fn with_column(mut self, name: impl Into<String>, value: f64) -> Self {
        self.columns.insert(name.into(), value);
        self
    }

    pub fn with_dims(mut self, dims: DimensionVector) -> Self {
        self.dims = Some(dims);
        self
    }
}

/// Named, sum-normalized weight vector over the active dimensions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightConfig {
    pub name: String,
    weights: BTreeMap<DimensionId, f64>,
}

impl WeightConfig {
    /// Normalizes the weights to sum to one. Zero weights are dropped, so a
    /// dimension is active iff it is present in the map.
    pub fn new<I>(name: impl Into<String>, weights: I) -> Result<Self, ModelError>
    where
        I: IntoIterator<Item = (DimensionId, f64)>,
    {
        let mut map = BTreeMap::new();
        for (dim, w) in weights {
            if !w.is_finite() || w < 0.0 {
                return Err(ModelError::InvalidWeight(dim));
            }
            if w > 0.0 {
                map.insert(dim, w);
            }
        }
        let total: f64 = map.values().sum();
        if map.is_empty() || !total.is_finite() || total <= 0.0 {
            return Err(ModelError::EmptyWeights);
        }
        for w in map.values_mut() {
            *w /= total;
        }
        Ok(Self {
            name: name.into(),
            weights: map,
        })
    }

    /// Default weights: model prior .15, cost prior .10, structure .20,
    /// semantic .25, alignment .15, agreement .15.
    pub fn default_weights() -> Self {
        Self::new(
            "default",
            [
                (DimensionId::ModelPrior, 0.15),
                (DimensionId::CostPrior, 0.10),
                (DimensionId::Structure, 0.20),
                (DimensionId::Semantic, 0.25),
                (DimensionId::Alignment, 0.15),
                (DimensionId::Agreement, 0.15),
            ],
        )
        .expect("default weights are valid")
    }

    pub fn get(&self, dim: DimensionId) -> Option<f64> {
        self.weights.get(&dim).copied()
    }

    pub fn weights(&self) -> &BTreeMap<DimensionId, f64> {
        &self.weights
    }

    pub fn dims(&self) -> BTreeSet<DimensionId> {
        self.weights.keys().copied().collect()
    }

    pub fn contains(&self, dim: DimensionId) -> bool {
        self.weights.contains_key(&dim)
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn renamed(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostTier {
    Low,
    Medium,
    High,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum EvaluatorBehavior {
    Honest { noise_sd: f64 },
    Malicious { strategy: AttackStrategy },
}

/// An evaluator node as seen by the consensus simulator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluatorProfile {
    pub evaluator_id: String,
    pub cost: f64,
    pub cost_tier: CostTier,
    pub behavior: EvaluatorBehavior,
}

impl EvaluatorProfile {
    pub fn honest(id: impl Into<String>, cost: f64, noise_sd: f64) -> Self {
        Self {
            evaluator_id: id.into(),
            cost,
            cost_tier: CostTier::Low,
            behavior: EvaluatorBehavior::Honest { noise_sd },
        }
    }

    pub fn is_malicious(&self) -> bool {
        matches!(self.behavior, EvaluatorBehavior::Malicious { .. })
    }
}

/// Result of one simulated consensus configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimOutcome {
    pub config_id: String,
    /// Mean consensus score per evaluated item, keyed by sample id.
    pub consensus_scores: BTreeMap<String, f64>,
    /// Mean absolute deviation of consensus from the honest-oracle score.
    pub consensus_error: f64,
    /// Mean absolute deviation of consensus from the reference score, when
    /// items carry one.
    pub reference_error: Option<f64>,
    /// Spearman correlation between accumulated producer rewards and
    /// producer mean reference quality.
    pub reward_rank_consistency: Option<f64>,
    pub rewards: BTreeMap<String, f64>,
    pub trust_trajectory: Vec<BTreeMap<String, f64>>,
    pub attackers: Vec<String>,
    pub skipped_rounds: usize,
}

impl SimOutcome {
    pub fn top_reward_producer(&self) -> Option<&str> {
        self.rewards
            .iter()
            .fold(None::<(&String, f64)>, |best, (p, r)| match best {
                Some((_, br)) if br >= *r => best,
                _ => Some((p, *r)),
            })
            .map(|(p, _)| p.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationIssue {
    pub index: usize,
    pub sample_id: String,
    pub field: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct ValidationReport {
    pub valid: usize,
    pub invalid: usize,
    pub issues: Vec<ValidationIssue>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.invalid == 0
    }
}

/// Checks every type invariant of every sample. Never aborts.
pub fn validate_dataset(samples: &[LoggedSample]) -> ValidationReport {
    let mut report = ValidationReport::default();
    let mut seen = BTreeSet::new();
    for (index, s) in samples.iter().enumerate() {
        let mut issues = Vec::new();
        let mut issue = |field: &str, message: String| {
            issues.push(ValidationIssue {
                index,
                sample_id: s.sample_id.clone(),
                field: field.to_string(),
                message,
            })
        };
        if !seen.insert(s.sample_id.as_str()) {
            issue("sample_id", format!("duplicate sample_id `{}`", s.sample_id));
        }
        for (e, v) in &s.evaluator_scores {
            if !v.is_finite() {
                issue("evaluator_scores", format!("score of `{e}` is not finite"));
            }
        }
        if let Some(gt) = s.gt {
            if !gt.is_finite() {
                issue("reference_score", "reference score is not finite".into());
            }
        }
        for (c, v) in &s.columns {
            if !v.is_finite() {
                issue("columns", format!("column `{c}` is not finite"));
            }
        }
        if let Some(dims) = &s.dims {
            for (d, z) in dims.iter() {
                if !(0.0..=1.0).contains(&z) {
                    issue("dimension_scores", format!("{d} = {z} outside [0, 1]"));
                }
            }
        }
        if issues.is_empty() {
            report.valid += 1;
        } else {
            report.invalid += 1;
            report.issues.extend(issues);
        }
    }
    report
}
