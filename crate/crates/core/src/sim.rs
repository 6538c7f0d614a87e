//! Monte-Carlo simulation of proof-of-quality consensus: cost-aware
//! evaluator sampling, honest and malicious evaluators, robust aggregation,
//! adaptive trust weighting and reward allocation.
//!
//! Trust update rule: after each round every participating evaluator's
//! trust is multiplied by `exp(-learning_rate * d)`, where `d` is its mean
//! absolute deviation from the trust-weighted median of the round's scores,
//! floored at `floor` and re-normalized to sum to one. This is one concrete
//! reading of "discount evaluators that behave inconsistently over time";
//! other update rules fit the same interface.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::composite::{compose_projected, CompositeError};
use crate::model::{clip01, EvaluatorBehavior, EvaluatorProfile, LoggedSample, SimOutcome, WeightConfig};
use crate::scorers::normalize_evaluator_scores;
use crate::seed::derive_seed;
use crate::stats;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid simulation config `{config_id}`: {reason}")]
    InvalidConfig { config_id: String, reason: String },
    #[error("no scores to aggregate")]
    NoScores,
    #[error("trimming leaves no scores")]
    EmptyAfterTrim,
    #[error("sample `{sample_id}` has no value for quality signal `{signal}`")]
    MissingSignal { sample_id: String, signal: String },
    #[error("simulation data has no items")]
    NoItems,
    #[error(transparent)]
    Composite(#[from] CompositeError),
}

/// Behavior of a malicious evaluator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum AttackStrategy {
    Inflate { delta: f64 },
    Deflate { delta: f64 },
    /// Uniform scores in [0, 1], independent of quality.
    RandomNoise,
    /// Inflates the target producer's outputs and deflates everyone else's.
    Collude { target_producer: String, delta: f64 },
    /// Honest (noise-free) for `honest_rounds` rounds, then inflates.
    Camouflage { honest_rounds: usize, then_delta: f64 },
}

impl AttackStrategy {
    pub fn label(&self) -> String {
        match self {
            AttackStrategy::Inflate { delta } => format!("inflate:{delta}"),
            AttackStrategy::Deflate { delta } => format!("deflate:{delta}"),
            AttackStrategy::RandomNoise => "random_noise".into(),
            AttackStrategy::Collude { target_producer, delta } => format!("collude:{target_producer}:{delta}"),
            AttackStrategy::Camouflage { honest_rounds, then_delta } => format!("camouflage:{honest_rounds}:{then_delta}"),
        }
    }

    fn validate(&self) -> Result<(), String> {
        let ok = |d: f64| d.is_finite() && d >= 0.0;
        match self {
            AttackStrategy::Inflate { delta }
            | AttackStrategy::Deflate { delta }
            | AttackStrategy::Collude { delta, .. }
            | AttackStrategy::Camouflage { then_delta: delta, .. } if !ok(*delta) => {
                Err(format!("attack delta {delta} must be finite and >= 0"))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrustParams {
    pub learning_rate: f64,
    /// Lower bound on any evaluator's trust; `None` means `0.01 / |E|`.
    pub floor: Option<f64>,
}

impl Default for TrustParams {
    fn default() -> Self {
        Self {
            learning_rate: 1.0,
            floor: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum DefenseConfig {
    Mean,
    Median,
    TrimmedMean { trim_fraction: f64 },
    AdaptiveTrust(TrustParams),
}

pub const DEFAULT_TRIM_FRACTION: f64 = 0.2;

impl DefenseConfig {
    pub fn label(&self) -> String {
        match self {
            DefenseConfig::Mean => "mean".into(),
            DefenseConfig::Median => "median".into(),
            DefenseConfig::TrimmedMean { trim_fraction } => format!("trimmed_mean:{trim_fraction}"),
            DefenseConfig::AdaptiveTrust(_) => "adaptive_trust".into(),
        }
    }
}

/// What honest evaluators measure for each item in replay mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum QualitySignal {
    /// One evaluator column, min-max normalized over the dataset.
    SingleEvaluator { evaluator_id: String },
    /// Median over per-evaluator-normalized scores.
    ConsensusBaseline,
    Composite { weights: WeightConfig },
}

impl QualitySignal {
    pub fn label(&self) -> String {
        match self {
            QualitySignal::SingleEvaluator { evaluator_id } => format!("evaluator:{evaluator_id}"),
            QualitySignal::ConsensusBaseline => "consensus_median".into(),
            QualitySignal::Composite { weights } => format!("composite:{}", weights.name),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub config_id: String,
    /// Base evaluator pool. `floor(attack_ratio * |E|)` of them, chosen by the
    /// config's RNG, switch to `attack`.
    pub evaluators: Vec<EvaluatorProfile>,
    pub attack: Option<AttackStrategy>,
    pub attack_ratio: f64,
    pub defense: DefenseConfig,
    /// Trust updates stacked on top of a non-adaptive defense.
    #[serde(default)]
    pub trust_overlay: Option<TrustParams>,
    /// Per-round evaluation cost budget; `None` is unlimited.
    pub budget: Option<f64>,
    pub rounds: usize,
    pub reward_budget: f64,
    pub rng_seed: u64,
    pub quality_signal: QualitySignal,
}

impl SimConfig {
    fn invalid(&self, reason: impl Into<String>) -> SimError {
        SimError::InvalidConfig {
            config_id: self.config_id.clone(),
            reason: reason.into(),
        }
    }

    fn trust_params(&self) -> Option<TrustParams> {
        match self.defense {
            DefenseConfig::AdaptiveTrust(p) => Some(p),
            _ => self.trust_overlay,
        }
    }

    pub fn attacker_count(&self) -> usize {
        ((self.attack_ratio * self.evaluators.len() as f64) + 1e-9).floor() as usize
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let n = self.evaluators.len();
        if n == 0 {
            return Err(self.invalid("no evaluators"));
        }
        if self.rounds == 0 {
            return Err(self.invalid("rounds must be positive"));
        }
        if !(0.0..=1.0).contains(&self.attack_ratio) {
            return Err(self.invalid("attack_ratio must be in [0, 1]"));
        }
        if self.attacker_count() > 0 && self.attack.is_none() {
            return Err(self.invalid("attack_ratio > 0 requires an attack strategy"));
        }
        if let Some(a) = &self.attack {
            a.validate().map_err(|r| self.invalid(r))?;
        }
        if !(self.reward_budget.is_finite() && self.reward_budget >= 0.0) {
            return Err(self.invalid("reward_budget must be >= 0"));
        }
        if let Some(b) = self.budget {
            if !(b >= 0.0) {
                return Err(self.invalid("budget must be >= 0"));
            }
        }
        let mut ids = BTreeSet::new();
        for e in &self.evaluators {
            if !ids.insert(&e.evaluator_id) {
                return Err(self.invalid(format!("duplicate evaluator `{}`", e.evaluator_id)));
            }
            if !(e.cost.is_finite() && e.cost >= 0.0) {
                return Err(self.invalid(format!("evaluator `{}` has invalid cost", e.evaluator_id)));
            }
            if let EvaluatorBehavior::Honest { noise_sd } = e.behavior {
                if !(noise_sd.is_finite() && noise_sd >= 0.0) {
                    return Err(self.invalid(format!("evaluator `{}` has invalid noise_sd", e.evaluator_id)));
                }
            }
        }
        if let DefenseConfig::TrimmedMean { trim_fraction } = self.defense {
            if !(0.0..0.5).contains(&trim_fraction) {
                return Err(self.invalid("trim_fraction must be in [0, 0.5)"));
            }
        }
        if let Some(p) = self.trust_params() {
            if !(p.learning_rate > 0.0 && p.learning_rate.is_finite()) {
                return Err(self.invalid("learning_rate must be > 0"));
            }
            if let Some(f) = p.floor {
                if !(0.0..=1.0 / n as f64).contains(&f) {
                    return Err(self.invalid("trust floor must be in [0, 1/|E|]"));
                }
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Primitives

/// Greedy selection by descending `trust / cost` (ties by evaluator id),
/// stopping at the first evaluator that would push total cost over budget.
pub fn sample_evaluators(
    profiles: &[EvaluatorProfile],
    trust: &BTreeMap<String, f64>,
    budget: Option<f64>,
) -> BTreeSet<String> {
    let ratio = |p: &EvaluatorProfile| {
        let t = trust.get(&p.evaluator_id).copied().unwrap_or(0.0);
        if p.cost > 0.0 {
            t / p.cost
        } else {
            f64::INFINITY
        }
    };
    let mut order: Vec<&EvaluatorProfile> = profiles.iter().collect();
    order.sort_by(|a, b| {
        ratio(b)
            .total_cmp(&ratio(a))
            .then_with(|| a.evaluator_id.cmp(&b.evaluator_id))
    });
    let mut selected = BTreeSet::new();
    let mut spent = 0.0;
    for p in order {
        if let Some(b) = budget {
            if spent + p.cost > b + 1e-12 {
                break;
            }
        }
        spent += p.cost;
        selected.insert(p.evaluator_id.clone());
    }
    selected
}

/// Score an evaluator reports for an item of the given quality.
pub fn evaluator_emit<R: Rng + ?Sized>(
    agent: &EvaluatorProfile,
    producer_id: &str,
    true_quality: f64,
    round: usize,
    rng: &mut R,
) -> f64 {
    match &agent.behavior {
        EvaluatorBehavior::Honest { noise_sd } => {
            let z: f64 = StandardNormal.sample(rng);
            clip01(true_quality + noise_sd * z)
        }
        EvaluatorBehavior::Malicious { strategy } => match strategy {
            AttackStrategy::Inflate { delta } => clip01(true_quality + delta),
            AttackStrategy::Deflate { delta } => clip01(true_quality - delta),
            AttackStrategy::RandomNoise => rng.random::<f64>(),
            AttackStrategy::Collude { target_producer, delta } => {
                if producer_id == target_producer {
                    clip01(true_quality + delta)
                } else {
                    clip01(true_quality - delta)
                }
            }
            AttackStrategy::Camouflage { honest_rounds, then_delta } => {
                if round < *honest_rounds {
                    true_quality
                } else {
                    clip01(true_quality + then_delta)
                }
            }
        },
    }
}

/// Weighted mean, exact when all values coincide.
fn weighted_mean(values: &[(f64, f64)]) -> f64 {
    let total: f64 = values.iter().map(|(_, w)| w).sum();
    let anchor = values[0].0;
    if total > 0.0 {
        anchor + values.iter().map(|(s, w)| w * (s - anchor)).sum::<f64>() / total
    } else {
        anchor + values.iter().map(|(s, _)| s - anchor).sum::<f64>() / values.len() as f64
    }
}

/// Smallest score whose cumulative (normalized) weight reaches one half.
pub fn weighted_median(values: &[(f64, f64)]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.0.total_cmp(&b.0));
    let total: f64 = v.iter().map(|(_, w)| w).sum();
    if total <= 0.0 {
        return v[(v.len() - 1) / 2].0;
    }
    let half = 0.5 * total * (1.0 - 1e-12);
    let mut cum = 0.0;
    for (s, w) in &v {
        cum += w;
        if cum >= half {
            return *s;
        }
    }
    v[v.len() - 1].0
}

/// (score, weight) pairs sorted by score then evaluator id.
fn weighted_scores(scores: &BTreeMap<String, f64>, trust: &BTreeMap<String, f64>) -> Vec<(f64, f64)> {
    let mut v: Vec<(&String, f64, f64)> = scores
        .iter()
        .map(|(e, s)| (e, *s, trust.get(e).copied().unwrap_or(0.0)))
        .collect();
    v.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(b.0)));
    v.into_iter().map(|(_, s, w)| (s, w)).collect()
}

/// Consensus of one item's scores under the given defense.
pub fn aggregate(
    scores: &BTreeMap<String, f64>,
    trust: &BTreeMap<String, f64>,
    defense: &DefenseConfig,
) -> Result<f64, SimError> {
    if scores.is_empty() {
        return Err(SimError::NoScores);
    }
    let v = weighted_scores(scores, trust);
    match defense {
        DefenseConfig::Mean | DefenseConfig::AdaptiveTrust(_) => Ok(weighted_mean(&v)),
        DefenseConfig::Median => Ok(weighted_median(&v)),
        DefenseConfig::TrimmedMean { trim_fraction } => {
            let k = (trim_fraction * v.len() as f64 + 1e-9).floor() as usize;
            if 2 * k >= v.len() {
                return Err(SimError::EmptyAfterTrim);
            }
            Ok(weighted_mean(&v[k..v.len() - k]))
        }
    }
}

fn renormalize(trust: &mut BTreeMap<String, f64>) {
    let total: f64 = trust.values().sum();
    if total > 0.0 {
        for t in trust.values_mut() {
            *t /= total;
        }
    } else {
        let u = 1.0 / trust.len() as f64;
        for t in trust.values_mut() {
            *t = u;
        }
    }
}

/// Multiplicative update from per-evaluator deviations. Evaluators without a
/// deviation keep their weight before re-normalization.
pub fn update_trust_from_deviations(
    trust: &BTreeMap<String, f64>,
    deviations: &BTreeMap<String, f64>,
    learning_rate: f64,
    floor: f64,
) -> BTreeMap<String, f64> {
    let mut next: BTreeMap<String, f64> = trust
        .iter()
        .map(|(e, t)| {
            let t = match deviations.get(e) {
                Some(d) => (t * (-learning_rate * d).exp()).max(floor),
                None => *t,
            };
            (e.clone(), t)
        })
        .collect();
    renormalize(&mut next);
    next
}

/// One-item trust update against a robust reference score.
pub fn update_trust(
    trust: &BTreeMap<String, f64>,
    scores: &BTreeMap<String, f64>,
    consensus_ref: f64,
    learning_rate: f64,
    floor: f64,
) -> BTreeMap<String, f64> {
    let deviations = scores
        .iter()
        .map(|(e, s)| (e.clone(), (s - consensus_ref).abs()))
        .collect();
    update_trust_from_deviations(trust, &deviations, learning_rate, floor)
}

/// Splits `reward_budget` among producers in proportion to how far each
/// one's consensus score sits above the lowest; equal split when all tie.
pub fn allocate_rewards(consensus: &BTreeMap<String, f64>, reward_budget: f64) -> BTreeMap<String, f64> {
    if consensus.is_empty() {
        return BTreeMap::new();
    }
    let min = consensus.values().copied().fold(f64::INFINITY, f64::min);
    let spread: BTreeMap<&String, f64> = consensus.iter().map(|(p, s)| (p, (s - min).max(0.0))).collect();
    let total: f64 = spread.values().sum();
    if total > 0.0 {
        spread
            .into_iter()
            .map(|(p, d)| (p.clone(), reward_budget * d / total))
            .collect()
    } else {
        let share = reward_budget / consensus.len() as f64;
        consensus.keys().map(|p| (p.clone(), share)).collect()
    }
}

// ---------------------------------------------------------------------------
// Data

/// One (producer, query) output as seen by the simulator.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimItem {
    pub item_id: String,
    pub group: String,
    pub producer_id: String,
    /// Score a noiseless honest evaluator reports.
    pub signal: f64,
    pub reference: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProducerQuality {
    pub producer_id: String,
    pub alpha: f64,
    pub beta: f64,
}

/// Synthetic world: every (producer, query) pair draws a latent quality once
/// from the producer's Beta distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleSpec {
    pub producers: Vec<ProducerQuality>,
    pub queries: usize,
    pub seed: u64,
}

impl OracleSpec {
    /// `n` producers with mean quality spread evenly over [0.2, 0.8].
    pub fn spread(n: usize, queries: usize, seed: u64) -> Self {
        let producers = (0..n)
            .map(|i| {
                let mean = if n > 1 { 0.2 + 0.6 * i as f64 / (n - 1) as f64 } else { 0.5 };
                ProducerQuality {
                    producer_id: format!("producer_{i:02}"),
                    alpha: 8.0 * mean,
                    beta: 8.0 * (1.0 - mean),
                }
            })
            .collect();
        Self { producers, queries, seed }
    }

    pub fn items(&self) -> Result<Vec<SimItem>, SimError> {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed, "oracle"));
        let dists = self
            .producers
            .iter()
            .map(|p| {
                Beta::new(p.alpha, p.beta).map_err(|e| SimError::InvalidConfig {
                    config_id: "oracle".into(),
                    reason: format!("producer `{}`: {e}", p.producer_id),
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        let mut items = Vec::with_capacity(self.queries * self.producers.len());
        for q in 0..self.queries {
            for (p, d) in self.producers.iter().zip(&dists) {
                let quality: f64 = d.sample(&mut rng);
                items.push(SimItem {
                    item_id: format!("q{q:05}:{}", p.producer_id),
                    group: format!("q{q:05}"),
                    producer_id: p.producer_id.clone(),
                    signal: quality,
                    reference: Some(quality),
                });
            }
        }
        Ok(items)
    }
}

#[derive(Debug, Clone, Copy)]
pub enum SimData<'a> {
    /// Logged samples; items are grouped by query text and honest evaluators
    /// measure the config's quality signal.
    Replay(&'a [LoggedSample]),
    /// Synthetic latent qualities; the quality signal setting is ignored.
    Oracle(&'a OracleSpec),
}

/// Items for a replay run under the given quality signal.
pub fn replay_items(samples: &[LoggedSample], signal: &QualitySignal) -> Result<Vec<SimItem>, SimError> {
    let values: Vec<f64> = match signal {
        QualitySignal::SingleEvaluator { evaluator_id } => {
            let normalized = normalize_evaluator_scores(samples);
            samples
                .iter()
                .zip(&normalized)
                .map(|(s, n)| {
                    n.get(evaluator_id).copied().ok_or_else(|| SimError::MissingSignal {
                        sample_id: s.sample_id.clone(),
                        signal: signal.label(),
                    })
                })
                .collect::<Result<_, _>>()?
        }
        QualitySignal::ConsensusBaseline => {
            let normalized = normalize_evaluator_scores(samples);
            samples
                .iter()
                .zip(&normalized)
                .map(|(s, n)| {
                    let v: Vec<f64> = n.values().copied().collect();
                    stats::median(&v).ok_or_else(|| SimError::MissingSignal {
                        sample_id: s.sample_id.clone(),
                        signal: signal.label(),
                    })
                })
                .collect::<Result<_, _>>()?
        }
        QualitySignal::Composite { weights } => compose_projected(samples, weights)?,
    };
    Ok(samples
        .iter()
        .zip(values)
        .map(|(s, v)| SimItem {
            item_id: s.sample_id.clone(),
            group: s.query.clone(),
            producer_id: s.producer_id.clone(),
            signal: v,
            reference: s.gt,
        })
        .collect())
}

// ---------------------------------------------------------------------------
// Runner

fn assign_attackers(config: &SimConfig, rng: &mut ChaCha8Rng) -> Vec<EvaluatorProfile> {
    let mut profiles = config.evaluators.clone();
    let k = config.attacker_count();
    if let (Some(attack), true) = (&config.attack, k > 0) {
        let mut idx: Vec<usize> = (0..profiles.len()).collect();
        idx.shuffle(rng);
        for &i in &idx[..k] {
            profiles[i].behavior = EvaluatorBehavior::Malicious {
                strategy: attack.clone(),
            };
        }
    }
    profiles
}

/// Runs one configuration. Pure in (config, data).
pub fn run_config(config: &SimConfig, data: SimData<'_>) -> Result<SimOutcome, SimError> {
    config.validate()?;
    let items = match data {
        SimData::Replay(samples) => replay_items(samples, &config.quality_signal)?,
        SimData::Oracle(spec) => spec.items()?,
    };
    if items.is_empty() {
        return Err(SimError::NoItems);
    }
    let mut groups: BTreeMap<&str, Vec<&SimItem>> = BTreeMap::new();
    for it in &items {
        groups.entry(it.group.as_str()).or_default().push(it);
    }
    let groups: Vec<Vec<&SimItem>> = groups.into_values().collect();

    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    let profiles = assign_attackers(config, &mut rng);
    let n = profiles.len();
    let trust_params = config.trust_params();
    let floor = trust_params.map(|p| p.floor.unwrap_or(0.01 / n as f64));

    let mut trust: BTreeMap<String, f64> = profiles
        .iter()
        .map(|p| (p.evaluator_id.clone(), 1.0 / n as f64))
        .collect();
    let mut trajectory = Vec::with_capacity(config.rounds);
    let mut rewards: BTreeMap<String, f64> = items.iter().map(|i| (i.producer_id.clone(), 0.0)).collect();
    let mut consensus_sum: BTreeMap<&str, (f64, usize)> = BTreeMap::new();
    let (mut err_sum, mut err_n) = (0.0, 0usize);
    let (mut ref_sum, mut ref_n) = (0.0, 0usize);
    let mut skipped = 0;

    for round in 0..config.rounds {
        let group = &groups[rng.random_range(0..groups.len())];
        let selected = sample_evaluators(&profiles, &trust, config.budget);
        let producers: BTreeSet<&str> = group.iter().map(|i| i.producer_id.as_str()).collect();

        if selected.is_empty() {
            log::info!("{}: round {round} skipped, budget excludes every evaluator", config.config_id);
            skipped += 1;
            let even: BTreeMap<String, f64> = producers.iter().map(|p| (p.to_string(), 0.0)).collect();
            for (p, r) in allocate_rewards(&even, config.reward_budget) {
                *rewards.get_mut(&p).expect("known producer") += r;
            }
            trajectory.push(trust.clone());
            continue;
        }

        let mut dev_sum: BTreeMap<String, f64> = BTreeMap::new();
        let mut by_producer: BTreeMap<String, (f64, usize)> = BTreeMap::new();
        for item in group {
            let scores: BTreeMap<String, f64> = profiles
                .iter()
                .filter(|p| selected.contains(&p.evaluator_id))
                .map(|p| {
                    let s = evaluator_emit(p, &item.producer_id, item.signal, round, &mut rng);
                    (p.evaluator_id.clone(), s)
                })
                .collect();
            let s_hat = aggregate(&scores, &trust, &config.defense)?;
            if trust_params.is_some() {
                let reference = weighted_median(&weighted_scores(&scores, &trust));
                for (e, s) in &scores {
                    *dev_sum.entry(e.clone()).or_insert(0.0) += (s - reference).abs();
                }
            }
            err_sum += (s_hat - item.signal).abs();
            err_n += 1;
            if let Some(r) = item.reference {
                ref_sum += (s_hat - r).abs();
                ref_n += 1;
            }
            let c = consensus_sum.entry(item.item_id.as_str()).or_insert((0.0, 0));
            c.0 += s_hat;
            c.1 += 1;
            let b = by_producer.entry(item.producer_id.clone()).or_insert((0.0, 0));
            b.0 += s_hat;
            b.1 += 1;
        }

        if let (Some(p), Some(floor)) = (trust_params, floor) {
            let deviations = dev_sum
                .into_iter()
                .map(|(e, d)| (e, d / group.len() as f64))
                .collect();
            trust = update_trust_from_deviations(&trust, &deviations, p.learning_rate, floor);
        }

        let group_consensus: BTreeMap<String, f64> = by_producer
            .into_iter()
            .map(|(p, (s, c))| (p, s / c as f64))
            .collect();
        for (p, r) in allocate_rewards(&group_consensus, config.reward_budget) {
            *rewards.get_mut(&p).expect("known producer") += r;
        }
        trajectory.push(trust.clone());
    }

    let reward_rank_consistency = {
        let mut quality: BTreeMap<&str, (f64, usize)> = BTreeMap::new();
        for it in &items {
            if let Some(r) = it.reference {
                let q = quality.entry(it.producer_id.as_str()).or_insert((0.0, 0));
                q.0 += r;
                q.1 += 1;
            }
        }
        let (x, y): (Vec<f64>, Vec<f64>) = quality
            .iter()
            .map(|(p, (s, c))| (rewards[*p], s / *c as f64))
            .unzip();
        stats::spearman(&x, &y).ok().flatten()
    };

    Ok(SimOutcome {
        config_id: config.config_id.clone(),
        consensus_scores: consensus_sum
            .into_iter()
            .map(|(id, (s, c))| (id.to_string(), s / c as f64))
            .collect(),
        consensus_error: if err_n > 0 { err_sum / err_n as f64 } else { 0.0 },
        reference_error: (ref_n > 0).then(|| ref_sum / ref_n as f64),
        reward_rank_consistency,
        rewards,
        trust_trajectory: trajectory,
        attackers: profiles
            .iter()
            .filter(|p| p.is_malicious())
            .map(|p| p.evaluator_id.clone())
            .collect(),
        skipped_rounds: skipped,
    })
}

/// Runs every configuration of the grid in parallel. A failing config
/// yields an error entry in its slot.
pub fn run_experiment(grid: &[SimConfig], data: SimData<'_>) -> Vec<Result<SimOutcome, SimError>> {
    grid.par_iter().map(|c| run_config(c, data)).collect()
}
