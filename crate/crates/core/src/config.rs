//! TOML run configuration and its resolution into library inputs.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audit::GateStatistic;
use crate::composite::{make_variant, CompositeError, VariantSpec};
use crate::model::{CostTier, DimensionId, EvaluatorProfile, LoggedSample, ModelError, WeightConfig};
use crate::scorers::{default_providers, NormalizationStats, PriorTable, ProviderBinding, ScoringConfig, StructurePolicy};
use crate::seed::derive_seed;
use crate::sim::{AttackStrategy, DefenseConfig, QualitySignal, SimConfig, TrustParams, DEFAULT_TRIM_FRACTION};

pub const SEED_ENV: &str = "MDQS_SEED";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("{0}")]
    Invalid(String),
    #[error("a seed is required (config `seed`, --seed or {SEED_ENV})")]
    MissingSeed,
    #[error("column `{column}` bound to {dim} is missing from sample `{sample_id}`")]
    MissingColumn {
        dim: DimensionId,
        column: String,
        sample_id: String,
    },
    #[error(transparent)]
    Composite(#[from] CompositeError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WeightsSection {
    /// Variant applied to `table` (or to the default weights).
    pub variant: Option<String>,
    /// Inline weights; missing dimensions are inactive.
    pub table: Option<BTreeMap<DimensionId, f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrationSection {
    pub threshold: f64,
    pub gate: GateStatistic,
    pub per_task: bool,
}

impl Default for CalibrationSection {
    fn default() -> Self {
        Self {
            threshold: 0.0,
            gate: GateStatistic::Pearson,
            per_task: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AuditSection {
    /// Ablation preset: `paper` or `standard` (the nine standard variants), or `none`.
    pub preset: String,
    /// Extra variants appended after the preset.
    pub variants: Vec<String>,
}

impl Default for AuditSection {
    fn default() -> Self {
        Self {
            preset: "paper".into(),
            variants: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NormalizationSection {
    /// JSON file with ranges from an earlier `score` run.
    pub frozen: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimDataMode {
    /// Replay the input dataset.
    #[default]
    Replay,
    /// Synthetic latent qualities.
    Oracle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleSection {
    pub producers: usize,
    pub queries: usize,
}

impl Default for OracleSection {
    fn default() -> Self {
        Self {
            producers: 4,
            queries: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimSection {
    pub data: SimDataMode,
    pub evaluators: usize,
    pub noise_sd: f64,
    /// Evaluator costs, assigned cyclically.
    pub costs: Vec<f64>,
    pub budget: Option<f64>,
    pub rounds: usize,
    pub reward_budget: f64,
    pub attacks: Vec<AttackStrategy>,
    pub attack_ratios: Vec<f64>,
    pub defenses: Vec<DefenseConfig>,
    /// Trust updates stacked on every non-adaptive defense, as extra configs.
    pub defense_stack: Option<TrustParams>,
    /// `consensus`, `evaluator:<id>` or `composite:<variant>`; the variant
    /// `calibrated` refers to the calibration result.
    pub quality_signals: Vec<String>,
    pub oracle: OracleSection,
}

impl Default for SimSection {
    fn default() -> Self {
        Self {
            data: SimDataMode::Replay,
            evaluators: 10,
            noise_sd: 0.05,
            costs: vec![1.0, 2.0, 3.0],
            budget: None,
            rounds: 200,
            reward_budget: 1.0,
            attacks: vec![
                AttackStrategy::Inflate { delta: 0.3 },
                AttackStrategy::Deflate { delta: 0.3 },
                AttackStrategy::RandomNoise,
                AttackStrategy::Camouflage {
                    honest_rounds: 50,
                    then_delta: 0.3,
                },
            ],
            attack_ratios: vec![0.0, 0.1, 0.2, 0.3, 0.4],
            defenses: vec![
                DefenseConfig::Mean,
                DefenseConfig::Median,
                DefenseConfig::TrimmedMean {
                    trim_fraction: DEFAULT_TRIM_FRACTION,
                },
                DefenseConfig::AdaptiveTrust(TrustParams::default()),
            ],
            defense_stack: None,
            quality_signals: vec!["composite:default".into()],
            oracle: OracleSection::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub input: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub weights: WeightsSection,
    pub structure: StructurePolicy,
    /// Dimension name to `builtin`, `column:<name>` or `ingested`.
    pub providers: BTreeMap<DimensionId, ProviderBinding>,
    pub priors: PriorTable,
    pub semantic_ngram: Option<usize>,
    pub calibration: CalibrationSection,
    pub audit: AuditSection,
    pub normalization: NormalizationSection,
    pub sim: SimSection,
}

impl RunConfig {
    /// Relative paths inside the file resolve against its directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg: RunConfig = toml::from_str(&text).map_err(|e| ConfigError::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        let rebase = |p: &mut Option<PathBuf>| {
            if let Some(x) = p {
                if x.is_relative() {
                    *x = base.join(&*x);
                }
            }
        };
        rebase(&mut cfg.input);
        rebase(&mut cfg.out);
        rebase(&mut cfg.normalization.frozen);
        Ok(cfg)
    }

    /// `--seed`, then `MDQS_SEED`, then the config file.
    pub fn resolve_seed(&self, flag: Option<u64>) -> Result<Option<u64>, ConfigError> {
        if flag.is_some() {
            return Ok(flag);
        }
        if let Ok(v) = std::env::var(SEED_ENV) {
            let s = v
                .trim()
                .parse()
                .map_err(|_| ConfigError::Invalid(format!("{SEED_ENV}=`{v}` is not a u64")))?;
            return Ok(Some(s));
        }
        Ok(self.seed)
    }

    pub fn weight_config(&self) -> Result<WeightConfig, ConfigError> {
        let base = match &self.weights.table {
            Some(t) => WeightConfig::new("default", t.iter().map(|(d, w)| (*d, *w)))?,
            None => WeightConfig::default_weights(),
        };
        match &self.weights.variant {
            Some(v) => {
                let spec: VariantSpec = v.parse()?;
                Ok(make_variant(&base, &spec)?)
            }
            None => Ok(base),
        }
    }

    pub fn ablation_variants(&self) -> Result<Vec<VariantSpec>, ConfigError> {
        let mut v = match self.audit.preset.as_str() {
            "paper" | "standard" => VariantSpec::standard_preset(),
            "none" => Vec::new(),
            other => return Err(ConfigError::Invalid(format!("unknown ablation preset `{other}`"))),
        };
        for s in &self.audit.variants {
            v.push(s.parse()?);
        }
        Ok(v)
    }

    pub fn scoring_config(&self) -> Result<ScoringConfig, ConfigError> {
        let mut c = ScoringConfig::new(self.weight_config()?);
        c.structure = self.structure.clone();
        c.priors = self.priors.clone();
        let mut providers = default_providers();
        providers.extend(self.providers.clone());
        c.providers = providers;
        if let Some(n) = self.semantic_ngram {
            if n == 0 {
                return Err(ConfigError::Invalid("semantic_ngram must be positive".into()));
            }
            c.semantic_ngram = n;
        }
        if let Some(p) = &self.normalization.frozen {
            let text = std::fs::read_to_string(p).map_err(|source| ConfigError::Io {
                path: p.clone(),
                source,
            })?;
            let stats: NormalizationStats = serde_json::from_str(&text).map_err(|e| ConfigError::Parse {
                path: p.clone(),
                message: e.to_string(),
            })?;
            c.frozen = Some(stats);
        }
        Ok(c)
    }
}

/// Checks that every column bound to an active dimension exists on every
/// sample.
pub fn check_columns(samples: &[LoggedSample], config: &ScoringConfig) -> Result<(), ConfigError> {
    for dim in config.weights.dims() {
        if let Some(ProviderBinding::Column(column)) = config.providers.get(&dim) {
            if let Some(s) = samples.iter().find(|s| !s.columns.contains_key(column)) {
                return Err(ConfigError::MissingColumn {
                    dim,
                    column: column.clone(),
                    sample_id: s.sample_id.clone(),
                });
            }
        }
    }
    Ok(())
}

/// Evaluator pool for the simulator: honest, costs assigned cyclically.
pub fn evaluator_pool(sim: &SimSection) -> Result<Vec<EvaluatorProfile>, ConfigError> {
    if sim.evaluators == 0 || sim.costs.is_empty() {
        return Err(ConfigError::Invalid("sim needs at least one evaluator and one cost".into()));
    }
    let mut sorted = sim.costs.clone();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();
    let tier = |c: f64| {
        let i = sorted.iter().position(|x| *x == c).unwrap_or(0);
        match (3 * i) / sorted.len() {
            0 => CostTier::Low,
            1 => CostTier::Medium,
            _ => CostTier::High,
        }
    };
    Ok((0..sim.evaluators)
        .map(|i| {
            let cost = sim.costs[i % sim.costs.len()];
            EvaluatorProfile {
                cost_tier: tier(cost),
                ..EvaluatorProfile::honest(format!("evaluator_{i:02}"), cost, sim.noise_sd)
            }
        })
        .collect())
}

/// Resolves a quality-signal name. `calibrated` is only available when a
/// calibrated config is supplied.
pub fn quality_signal(
    name: &str,
    base: &WeightConfig,
    calibrated: Option<&WeightConfig>,
) -> Result<QualitySignal, ConfigError> {
    if name == "consensus" {
        return Ok(QualitySignal::ConsensusBaseline);
    }
    if let Some(id) = name.strip_prefix("evaluator:") {
        return Ok(QualitySignal::SingleEvaluator {
            evaluator_id: id.to_string(),
        });
    }
    if let Some(v) = name.strip_prefix("composite:") {
        let weights = match (v, calibrated) {
            ("calibrated", Some(c)) => c.clone(),
            _ => {
                let spec: VariantSpec = v.parse()?;
                make_variant(base, &spec)?.renamed(v)
            }
        };
        return Ok(QualitySignal::Composite { weights });
    }
    Err(ConfigError::Invalid(format!("unknown quality signal `{name}`")))
}

/// Cartesian grid: (attack, ratio) x defense x quality signal, with the
/// attack-free ratio 0 listed once. Config `i` gets the RNG stream
/// `derive_seed(seed, "sim/i")`.
pub fn build_grid(
    sim: &SimSection,
    seed: u64,
    base: &WeightConfig,
    calibrated: Option<&WeightConfig>,
) -> Result<Vec<SimConfig>, ConfigError> {
    let evaluators = evaluator_pool(sim)?;
    let signals = sim
        .quality_signals
        .iter()
        .map(|s| quality_signal(s, base, calibrated))
        .collect::<Result<Vec<_>, _>>()?;
    let mut scenarios: Vec<(Option<AttackStrategy>, f64)> = Vec::new();
    let mut seen_clean = false;
    for &ratio in &sim.attack_ratios {
        let count = (ratio * sim.evaluators as f64 + 1e-9).floor() as usize;
        if count == 0 {
            if !seen_clean {
                scenarios.push((None, 0.0));
                seen_clean = true;
            }
            continue;
        }
        for a in &sim.attacks {
            scenarios.push((Some(a.clone()), ratio));
        }
    }
    let mut defenses: Vec<(DefenseConfig, Option<TrustParams>)> = sim.defenses.iter().map(|d| (*d, None)).collect();
    if let Some(t) = sim.defense_stack {
        for d in &sim.defenses {
            if !matches!(d, DefenseConfig::AdaptiveTrust(_) | DefenseConfig::Mean) {
                defenses.push((*d, Some(t)));
            }
        }
    }
    let mut grid = Vec::new();
    for (attack, ratio) in &scenarios {
        for (defense, overlay) in &defenses {
            for signal in &signals {
                let i = grid.len();
                grid.push(SimConfig {
                    config_id: format!("c{i:03}"),
                    evaluators: evaluators.clone(),
                    attack: attack.clone(),
                    attack_ratio: *ratio,
                    defense: *defense,
                    trust_overlay: *overlay,
                    budget: sim.budget,
                    rounds: sim.rounds,
                    reward_budget: sim.reward_budget,
                    rng_seed: derive_seed(seed, &format!("sim/{i}")),
                    quality_signal: signal.clone(),
                });
            }
        }
    }
    let ids: BTreeSet<&str> = grid.iter().map(|c| c.config_id.as_str()).collect();
    debug_assert_eq!(ids.len(), grid.len());
    Ok(grid)
}
