//! Reliability audit: correlation of every signal against the reference
//! score, overall and per task family, plus the ablation grid and the
//! correlation-gated calibration.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::composite::{compose_projected, make_variant, CompositeError, VariantSpec};
use crate::model::{DimensionId, LoggedSample, TaskFamily, WeightConfig};
use crate::scorers::normalize_evaluator_scores;
use crate::stats::{self, pearson, spearman};

pub const OVERALL: &str = "overall";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AuditError {
    #[error("need at least 2 samples with a reference score, got {0}")]
    TooFewReferencedSamples(usize),
    #[error("sample `{0}` has no evaluator scores")]
    NoEvaluators(String),
    #[error("sample `{0}` has no dimension scores")]
    MissingDimensions(String),
    #[error(transparent)]
    Composite(#[from] CompositeError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignalKind {
    Dimension,
    Evaluator,
    Consensus,
    Composite,
}

impl SignalKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            SignalKind::Dimension => "dimension",
            SignalKind::Evaluator => "evaluator",
            SignalKind::Consensus => "consensus",
            SignalKind::Composite => "composite",
        }
    }
}

/// Correlation of one signal with the reference within one block.
/// `None` marks an undefined coefficient (zero variance or n < 2).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditRow {
    pub block: String,
    pub kind: SignalKind,
    pub signal: String,
    pub pearson: Option<f64>,
    pub spearman: Option<f64>,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    /// "overall" first, then one block per task family.
    pub blocks: Vec<String>,
    pub rows: Vec<AuditRow>,
}

impl AuditReport {
    pub fn row(&self, block: &str, kind: SignalKind, signal: &str) -> Option<&AuditRow> {
        self.rows
            .iter()
            .find(|r| r.block == block && r.kind == kind && r.signal == signal)
    }

    pub fn dimension(&self, block: &str, dim: DimensionId) -> Option<&AuditRow> {
        self.row(block, SignalKind::Dimension, dim.as_str())
    }

    pub fn block_rows<'a>(&'a self, block: &'a str) -> impl Iterator<Item = &'a AuditRow> + 'a {
        self.rows.iter().filter(move |r| r.block == block)
    }
}

/// Per-sample consensus over per-evaluator-normalized scores.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Consensus {
    pub mean: f64,
    pub median: f64,
}

pub fn consensus_baselines(samples: &[LoggedSample]) -> Result<Vec<Consensus>, AuditError> {
    let normalized = normalize_evaluator_scores(samples);
    samples
        .iter()
        .zip(&normalized)
        .map(|(s, n)| {
            let v: Vec<f64> = n.values().copied().collect();
            match (stats::mean(&v), stats::median(&v)) {
                (Some(mean), Some(median)) => Ok(Consensus { mean, median }),
                _ => Err(AuditError::NoEvaluators(s.sample_id.clone())),
            }
        })
        .collect()
}

/// Pearson and Spearman of `pairs` (signal, reference).
fn correlate(pairs: &[(f64, f64)]) -> (Option<f64>, Option<f64>) {
    if pairs.len() < 2 {
        return (None, None);
    }
    let (x, y): (Vec<f64>, Vec<f64>) = pairs.iter().copied().unzip();
    (
        pearson(&x, &y).ok().flatten(),
        spearman(&x, &y).ok().flatten(),
    )
}

fn task_blocks(samples: &[LoggedSample]) -> Vec<TaskFamily> {
    samples
        .iter()
        .map(|s| s.task.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect()
}

/// Indices of each block: overall first, then each task family present.
fn blocks(samples: &[LoggedSample]) -> Vec<(String, Vec<usize>)> {
    let referenced: Vec<usize> = (0..samples.len()).filter(|&i| samples[i].gt.is_some()).collect();
    let mut out = vec![(OVERALL.to_string(), referenced.clone())];
    for task in task_blocks(samples) {
        let idx = referenced.iter().copied().filter(|&i| samples[i].task == task).collect();
        out.push((task.as_str().to_string(), idx));
    }
    out
}

type Column = (SignalKind, String, Vec<Option<f64>>);

/// Correlates every dimension column, every evaluator column, the mean and
/// median consensus baselines and every supplied composite against the
/// reference score.
pub fn audit(
    samples: &[LoggedSample],
    composites: &BTreeMap<String, BTreeMap<String, f64>>,
) -> Result<AuditReport, AuditError> {
    let n_ref = samples.iter().filter(|s| s.gt.is_some()).count();
    if n_ref < 2 {
        return Err(AuditError::TooFewReferencedSamples(n_ref));
    }
    let mut columns: Vec<Column> = Vec::new();

    let dims: BTreeSet<DimensionId> = samples
        .iter()
        .filter_map(|s| s.dims.as_ref())
        .flat_map(|d| d.keys().collect::<Vec<_>>())
        .collect();
    for d in dims {
        let col = samples.iter().map(|s| s.dims.as_ref().and_then(|v| v.get(d))).collect();
        columns.push((SignalKind::Dimension, d.as_str().to_string(), col));
    }

    let evaluators: BTreeSet<&str> = samples
        .iter()
        .flat_map(|s| s.evaluator_scores.keys().map(String::as_str))
        .collect();
    for e in &evaluators {
        let col = samples.iter().map(|s| s.evaluator_scores.get(*e).copied()).collect();
        columns.push((SignalKind::Evaluator, e.to_string(), col));
    }

    if !evaluators.is_empty() {
        let normalized = normalize_evaluator_scores(samples);
        let per_sample: Vec<Option<Consensus>> = normalized
            .iter()
            .map(|n| {
                let v: Vec<f64> = n.values().copied().collect();
                Some(Consensus {
                    mean: stats::mean(&v)?,
                    median: stats::median(&v)?,
                })
            })
            .collect();
        columns.push((SignalKind::Consensus, "mean".into(), per_sample.iter().map(|c| c.map(|c| c.mean)).collect()));
        columns.push((SignalKind::Consensus, "median".into(), per_sample.iter().map(|c| c.map(|c| c.median)).collect()));
    }

    for (name, scores) in composites {
        let col = samples.iter().map(|s| scores.get(&s.sample_id).copied()).collect();
        columns.push((SignalKind::Composite, name.clone(), col));
    }

    let blocks = blocks(samples);
    let mut rows = Vec::new();
    for (block, idx) in &blocks {
        for (kind, name, col) in &columns {
            let pairs: Vec<(f64, f64)> = idx
                .iter()
                .filter_map(|&i| Some((col[i]?, samples[i].gt?)))
                .collect();
            let (p, s) = correlate(&pairs);
            rows.push(AuditRow {
                block: block.clone(),
                kind: *kind,
                signal: name.clone(),
                pearson: p,
                spearman: s,
                n: pairs.len(),
            });
        }
    }
    Ok(AuditReport {
        blocks: blocks.into_iter().map(|(b, _)| b).collect(),
        rows,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub weights: BTreeMap<DimensionId, f64>,
    pub pearson: Option<f64>,
    pub spearman: Option<f64>,
    pub n: usize,
}

fn composite_pairs(samples: &[LoggedSample], w: &WeightConfig) -> Result<Vec<(f64, f64)>, AuditError> {
    let referenced: Vec<LoggedSample> = samples.iter().filter(|s| s.gt.is_some()).cloned().collect();
    let values = compose_projected(&referenced, w)?;
    Ok(values
        .into_iter()
        .zip(&referenced)
        .map(|(v, s)| (v, s.gt.expect("filtered")))
        .collect())
}

/// One row per variant: overall correlation of the variant's composite with
/// the reference.
pub fn ablation_grid(
    samples: &[LoggedSample],
    base: &WeightConfig,
    variants: &[VariantSpec],
) -> Result<Vec<AblationRow>, AuditError> {
    let n_ref = samples.iter().filter(|s| s.gt.is_some()).count();
    if n_ref < 2 {
        return Err(AuditError::TooFewReferencedSamples(n_ref));
    }
    variants
        .iter()
        .map(|v| {
            let w = make_variant(base, v)?;
            let pairs = composite_pairs(samples, &w)?;
            let (pearson, spearman) = correlate(&pairs);
            Ok(AblationRow {
                variant: v.name(),
                weights: w.weights().clone(),
                pearson,
                spearman,
                n: pairs.len(),
            })
        })
        .collect()
}

/// Statistic compared against the calibration threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateStatistic {
    #[default]
    Pearson,
    Spearman,
    /// Minimum Pearson over task blocks.
    TaskwiseMin,
}

impl fmt::Display for GateStatistic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GateStatistic::Pearson => "pearson",
            GateStatistic::Spearman => "spearman",
            GateStatistic::TaskwiseMin => "taskwise_min",
        })
    }
}

impl FromStr for GateStatistic {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "pearson" => Ok(GateStatistic::Pearson),
            "spearman" => Ok(GateStatistic::Spearman),
            "taskwise_min" => Ok(GateStatistic::TaskwiseMin),
            _ => Err(format!("unknown gate statistic `{s}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrelationPair {
    pub pearson: Option<f64>,
    pub spearman: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub removed: BTreeSet<DimensionId>,
    pub threshold: f64,
    pub gate: GateStatistic,
    /// Gate statistic per dimension of the default config. `None` when
    /// undefined; undefined gates count as -1.
    pub gate_stats: BTreeMap<DimensionId, Option<f64>>,
    pub calibrated_config: WeightConfig,
    pub before: CorrelationPair,
    pub after: CorrelationPair,
}

fn gate_stat(samples: &[LoggedSample], dim: DimensionId, gate: GateStatistic) -> Result<Option<f64>, AuditError> {
    let column = |idx: &[usize]| -> Result<Vec<(f64, f64)>, AuditError> {
        idx.iter()
            .map(|&i| {
                let s = &samples[i];
                let z = s
                    .dims
                    .as_ref()
                    .and_then(|d| d.get(dim))
                    .ok_or_else(|| AuditError::MissingDimensions(s.sample_id.clone()))?;
                Ok((z, s.gt.expect("referenced")))
            })
            .collect()
    };
    let blocks = blocks(samples);
    Ok(match gate {
        GateStatistic::Pearson => correlate(&column(&blocks[0].1)?).0,
        GateStatistic::Spearman => correlate(&column(&blocks[0].1)?).1,
        GateStatistic::TaskwiseMin => {
            let mut min: Option<f64> = None;
            for (_, idx) in &blocks[1..] {
                if idx.is_empty() {
                    continue;
                }
                // an undefined task block makes the whole gate undefined
                let p = match correlate(&column(idx)?).0 {
                    Some(p) => p,
                    None => return Ok(None),
                };
                min = Some(min.map_or(p, |m: f64| m.min(p)));
            }
            min
        }
    })
}

/// Removes every dimension whose gate statistic falls below `threshold`
/// and re-normalizes the remaining weights.
pub fn calibrate(
    samples: &[LoggedSample],
    default: &WeightConfig,
    threshold: f64,
    gate: GateStatistic,
) -> Result<CalibrationResult, AuditError> {
    let n_ref = samples.iter().filter(|s| s.gt.is_some()).count();
    if n_ref < 2 {
        return Err(AuditError::TooFewReferencedSamples(n_ref));
    }
    let mut gate_stats = BTreeMap::new();
    let mut removed = BTreeSet::new();
    for dim in default.dims() {
        let g = gate_stat(samples, dim, gate)?;
        if g.unwrap_or(-1.0) < threshold {
            removed.insert(dim);
        }
        gate_stats.insert(dim, g);
    }
    let calibrated = make_variant(default, &VariantSpec::Remove(removed.clone()))?.renamed("calibrated");
    let pair = |w: &WeightConfig| -> Result<CorrelationPair, AuditError> {
        let (pearson, spearman) = correlate(&composite_pairs(samples, w)?);
        Ok(CorrelationPair { pearson, spearman })
    };
    Ok(CalibrationResult {
        before: pair(default)?,
        after: pair(&calibrated)?,
        removed,
        threshold,
        gate,
        gate_stats,
        calibrated_config: calibrated,
    })
}

/// Calibrates each task family separately on its own subset.
pub fn calibrate_per_task(
    samples: &[LoggedSample],
    default: &WeightConfig,
    threshold: f64,
    gate: GateStatistic,
) -> Result<BTreeMap<String, CalibrationResult>, AuditError> {
    task_blocks(samples)
        .into_iter()
        .map(|task| {
            let subset: Vec<LoggedSample> = samples.iter().filter(|s| s.task == task).cloned().collect();
            Ok((task.as_str().to_string(), calibrate(&subset, default, threshold, gate)?))
        })
        .collect()
}
