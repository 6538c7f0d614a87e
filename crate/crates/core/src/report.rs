//! Deterministic CSV/JSON report files plus a `manifest.json` listing each
//! file with the data series it carries. Floats use shortest round-trip
//! formatting; undefined values are empty cells (CSV) or `null` (JSON).

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

use crate::audit::{AblationRow, AuditReport, CalibrationResult, SignalKind, OVERALL};
use crate::model::{DimensionId, LoggedSample, SimOutcome, WeightConfig};
use crate::scorers::ScoredBatch;
use crate::sim::SimConfig;

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ReportError + '_ {
    move |source| ReportError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn fmt_f(x: f64) -> String {
    format!("{x}")
}

pub fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_f).unwrap_or_default()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ManifestEntry {
    pub path: String,
    pub series: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Manifest {
    pub command: String,
    pub summary: String,
    pub files: Vec<ManifestEntry>,
}

/// Files written under one output directory.
#[derive(Debug)]
pub struct OutputSet {
    dir: PathBuf,
    files: BTreeMap<String, String>,
}

impl OutputSet {
    pub fn create(dir: &Path) -> Result<Self, ReportError> {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            files: BTreeMap::new(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn target(&mut self, rel: &str, series: &str) -> Result<PathBuf, ReportError> {
        let path = self.dir.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(io_err(parent))?;
        }
        self.files.insert(rel.to_string(), series.to_string());
        Ok(path)
    }

    pub fn json<T: Serialize + ?Sized>(&mut self, rel: &str, series: &str, value: &T) -> Result<(), ReportError> {
        let path = self.target(rel, series)?;
        let mut text = serde_json::to_string_pretty(value).expect("serializable report");
        text.push('\n');
        fs::write(&path, text).map_err(io_err(&path))
    }

    pub fn jsonl<T: Serialize>(&mut self, rel: &str, series: &str, rows: &[T]) -> Result<(), ReportError> {
        let path = self.target(rel, series)?;
        let mut text = String::new();
        for r in rows {
            text.push_str(&serde_json::to_string(r).expect("serializable row"));
            text.push('\n');
        }
        fs::write(&path, text).map_err(io_err(&path))
    }

    pub fn csv(&mut self, rel: &str, series: &str, header: &[&str], rows: &[Vec<String>]) -> Result<(), ReportError> {
        let path = self.target(rel, series)?;
        let csv_err = |source| ReportError::Csv {
            path: path.clone(),
            source,
        };
        let mut w = csv::Writer::from_path(&path).map_err(csv_err)?;
        w.write_record(header).map_err(csv_err)?;
        for r in rows {
            w.write_record(r).map_err(csv_err)?;
        }
        w.flush().map_err(io_err(&path))
    }

    pub fn paths(&self) -> impl Iterator<Item = &str> {
        self.files.keys().map(String::as_str)
    }

    /// Writes `manifest.json` and returns its path.
    pub fn finish(self, command: &str, summary: &str) -> Result<PathBuf, ReportError> {
        let manifest = Manifest {
            command: command.to_string(),
            summary: summary.to_string(),
            files: self
                .files
                .into_iter()
                .map(|(path, series)| ManifestEntry { path, series })
                .collect(),
        };
        let path = self.dir.join(MANIFEST);
        let mut text = serde_json::to_string_pretty(&manifest).expect("serializable manifest");
        text.push('\n');
        fs::write(&path, text).map_err(io_err(&path))?;
        Ok(path)
    }
}

fn dims_of(samples: &[LoggedSample]) -> BTreeSet<DimensionId> {
    samples
        .iter()
        .filter_map(|s| s.dims.as_ref())
        .flat_map(|d| d.keys().collect::<Vec<_>>())
        .collect()
}

/// Scored samples, normalization ranges and a per-sample score table.
pub fn emit_scores(
    out: &mut OutputSet,
    scored: &ScoredBatch,
    composite: &BTreeMap<String, f64>,
) -> Result<(), ReportError> {
    out.jsonl("scores.jsonl", "scored samples", &scored.samples)?;
    out.json("normalization.json", "normalization ranges", &scored.stats)?;
    let dims = dims_of(&scored.samples);
    let mut header = vec!["sample_id", "task", "producer_id", "gt"];
    header.extend(dims.iter().map(|d| d.as_str()));
    header.push("composite");
    let rows: Vec<Vec<String>> = scored
        .samples
        .iter()
        .map(|s| {
            let mut r = vec![
                s.sample_id.clone(),
                s.task.as_str().to_string(),
                s.producer_id.clone(),
                fmt_opt(s.gt),
            ];
            r.extend(dims.iter().map(|d| fmt_opt(s.dims.as_ref().and_then(|v| v.get(*d)))));
            r.push(fmt_opt(composite.get(&s.sample_id).copied()));
            r
        })
        .collect();
    out.csv("sample_scores.csv", "per-sample dimension scores", &header, &rows)
}

/// Full correlation table, per-dimension and task-wise views, and
/// per-producer dimension means.
pub fn emit_audit(
    out: &mut OutputSet,
    report: &AuditReport,
    samples: &[LoggedSample],
    composite: &BTreeMap<String, f64>,
) -> Result<(), ReportError> {
    out.json("audit.json", "unified correlation summary", report)?;
    let rows: Vec<Vec<String>> = report
        .rows
        .iter()
        .map(|r| {
            vec![
                r.block.clone(),
                r.kind.as_str().to_string(),
                r.signal.clone(),
                fmt_opt(r.pearson),
                fmt_opt(r.spearman),
                r.n.to_string(),
            ]
        })
        .collect();
    out.csv(
        "audit.csv",
        "unified correlation summary",
        &["block", "kind", "signal", "pearson", "spearman", "n"],
        &rows,
    )?;

    let dim_rows: Vec<Vec<String>> = report
        .block_rows(OVERALL)
        .filter(|r| r.kind == SignalKind::Dimension)
        .map(|r| vec![r.signal.clone(), fmt_opt(r.pearson), fmt_opt(r.spearman), r.n.to_string()])
        .collect();
    out.csv(
        "dimension_correlations.csv",
        "per-dimension correlation with reference",
        &["dimension", "pearson", "spearman", "n"],
        &dim_rows,
    )?;

    let mut task_rows = Vec::new();
    for block in report.blocks.iter().filter(|b| b.as_str() != OVERALL) {
        for r in report.block_rows(block).filter(|r| r.kind == SignalKind::Dimension) {
            task_rows.push(vec![
                block.clone(),
                r.signal.clone(),
                fmt_opt(r.pearson),
                fmt_opt(r.spearman),
                r.n.to_string(),
            ]);
        }
    }
    out.csv(
        "taskwise_correlations.csv",
        "task-wise dimension correlation with reference",
        &["task", "dimension", "pearson", "spearman", "n"],
        &task_rows,
    )?;

    let dims = dims_of(samples);
    let mut by_producer: BTreeMap<&str, Vec<&LoggedSample>> = BTreeMap::new();
    for s in samples {
        by_producer.entry(s.producer_id.as_str()).or_default().push(s);
    }
    let mean = |v: Vec<f64>| crate::stats::mean(&v);
    let model_rows: Vec<Vec<String>> = by_producer
        .iter()
        .map(|(p, ss)| {
            let mut r = vec![p.to_string(), ss.len().to_string()];
            for d in &dims {
                r.push(fmt_opt(mean(
                    ss.iter().filter_map(|s| s.dims.as_ref().and_then(|v| v.get(*d))).collect(),
                )));
            }
            r.push(fmt_opt(mean(ss.iter().filter_map(|s| composite.get(&s.sample_id).copied()).collect())));
            r.push(fmt_opt(mean(ss.iter().filter_map(|s| s.gt).collect())));
            r
        })
        .collect();
    let mut header = vec!["producer_id", "n"];
    header.extend(dims.iter().map(|d| d.as_str()));
    header.extend(["composite", "gt"]);
    out.csv("model_dimension_means.csv", "per-model dimension means", &header, &model_rows)
}

pub fn emit_ablation(out: &mut OutputSet, rows: &[AblationRow]) -> Result<(), ReportError> {
    out.json("ablation.json", "weight ablation and dimension removal", rows)?;
    let mut header = vec!["variant"];
    header.extend(DimensionId::ALL.iter().map(|d| d.as_str()));
    header.extend(["pearson", "spearman", "n"]);
    let table: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            let mut v = vec![r.variant.clone()];
            v.extend(DimensionId::ALL.iter().map(|d| fmt_f(r.weights.get(d).copied().unwrap_or(0.0))));
            v.extend([fmt_opt(r.pearson), fmt_opt(r.spearman), r.n.to_string()]);
            v
        })
        .collect();
    out.csv("ablation.csv", "weight ablation and dimension removal", &header, &table)
}

pub fn emit_calibration(
    out: &mut OutputSet,
    result: &CalibrationResult,
    per_task: Option<&BTreeMap<String, CalibrationResult>>,
) -> Result<(), ReportError> {
    out.json("calibration.json", "calibration result", result)?;
    out.json("calibrated_weights.json", "calibrated weight config", &result.calibrated_config)?;
    let rows: Vec<Vec<String>> = result
        .gate_stats
        .iter()
        .map(|(d, g)| {
            vec![
                d.as_str().to_string(),
                fmt_opt(*g),
                result.removed.contains(d).to_string(),
                fmt_f(result.calibrated_config.get(*d).unwrap_or(0.0)),
            ]
        })
        .collect();
    out.csv(
        "calibration_gates.csv",
        "calibration gate per dimension",
        &["dimension", "gate", "removed", "calibrated_weight"],
        &rows,
    )?;
    if let Some(t) = per_task {
        out.json("calibration_per_task.json", "per-task calibration result", t)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct SimRecord<'a> {
    config: &'a SimConfig,
    outcome: &'a SimOutcome,
}

/// One JSON per configuration, a summary table and trust trajectories of
/// configurations that update trust.
pub fn emit_sim(out: &mut OutputSet, grid: &[SimConfig], outcomes: &[SimOutcome]) -> Result<(), ReportError> {
    if grid.is_empty() {
        return Ok(());
    }
    let mut summary = Vec::new();
    let mut trust_rows = Vec::new();
    for (c, o) in grid.iter().zip(outcomes) {
        out.json(&format!("sim/{}.json", c.config_id), "simulation outcome", &SimRecord { config: c, outcome: o })?;
        let defense = match c.trust_overlay {
            Some(_) => format!("{}+trust", c.defense.label()),
            None => c.defense.label(),
        };
        summary.push(vec![
            c.config_id.clone(),
            c.attack.as_ref().map(|a| a.label()).unwrap_or_else(|| "none".into()),
            fmt_f(c.attack_ratio),
            defense,
            c.quality_signal.label(),
            fmt_f(o.consensus_error),
            fmt_opt(o.reference_error),
            fmt_opt(o.reward_rank_consistency),
            o.top_reward_producer().unwrap_or_default().to_string(),
            o.skipped_rounds.to_string(),
        ]);
        let updates_trust = c.trust_overlay.is_some() || matches!(c.defense, crate::sim::DefenseConfig::AdaptiveTrust(_));
        if updates_trust {
            let attackers: BTreeSet<&str> = o.attackers.iter().map(String::as_str).collect();
            for (round, t) in o.trust_trajectory.iter().enumerate() {
                for (e, v) in t {
                    trust_rows.push(vec![
                        c.config_id.clone(),
                        round.to_string(),
                        e.clone(),
                        fmt_f(*v),
                        attackers.contains(e.as_str()).to_string(),
                    ]);
                }
            }
        }
    }
    out.csv(
        "sim_summary.csv",
        "defense comparison",
        &[
            "config_id",
            "attack",
            "attack_ratio",
            "defense",
            "quality_signal",
            "consensus_error",
            "reference_error",
            "reward_rank_consistency",
            "top_reward_producer",
            "skipped_rounds",
        ],
        &summary,
    )?;
    if !trust_rows.is_empty() {
        out.csv(
            "trust_trajectories.csv",
            "trust trajectories",
            &["config_id", "round", "evaluator_id", "trust", "malicious"],
            &trust_rows,
        )?;
    }
    Ok(())
}

/// Weight config as written next to reports.
pub fn emit_weights(out: &mut OutputSet, rel: &str, w: &WeightConfig) -> Result<(), ReportError> {
    out.json(rel, "weight config", w)
}
