//! Composite quality score and its weight variants.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{clip01, DimensionId, DimensionVector, LoggedSample, ModelError, WeightConfig};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CompositeError {
    #[error("dimension mismatch: vector has {vector:?}, weights have {weights:?}")]
    DimensionMismatch {
        vector: Vec<DimensionId>,
        weights: Vec<DimensionId>,
    },
    #[error("sample `{0}` has no dimension scores")]
    MissingDimensions(String),
    #[error("sample `{sample_id}`: {source}")]
    Sample {
        sample_id: String,
        #[source]
        source: Box<CompositeError>,
    },
    #[error("variant removes every dimension")]
    AllDimensionsRemoved,
    #[error("base config has no {0} dimension")]
    MissingBaseDimension(DimensionId),
    #[error("unknown variant `{0}`")]
    UnknownVariant(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// `clip(sum_k w_k * z_k, 0, 1)`; the key sets of `z` and `w` must match.
pub fn compose(z: &DimensionVector, w: &WeightConfig) -> Result<f64, CompositeError> {
    if z.key_set() != w.dims() {
        return Err(CompositeError::DimensionMismatch {
            vector: z.keys().collect(),
            weights: w.dims().into_iter().collect(),
        });
    }
    let sum: f64 = w
        .weights()
        .iter()
        .map(|(d, wk)| wk * z.get(*d).expect("key sets equal"))
        .sum();
    Ok(clip01(sum))
}

/// Composite per sample id. Each sample's vector must match `w` exactly.
pub fn compose_batch(samples: &[LoggedSample], w: &WeightConfig) -> Result<BTreeMap<String, f64>, CompositeError> {
    samples
        .iter()
        .map(|s| {
            let dims = s
                .dims
                .as_ref()
                .ok_or_else(|| CompositeError::MissingDimensions(s.sample_id.clone()))?;
            let v = compose(dims, w).map_err(|e| CompositeError::Sample {
                sample_id: s.sample_id.clone(),
                source: Box::new(e),
            })?;
            Ok((s.sample_id.clone(), v))
        })
        .collect()
}

/// Composite values in input order, projecting each vector onto the
/// dimensions of `w` first. Used for ablations where the scored vectors carry
/// a superset of the variant's dimensions.
pub fn compose_projected(samples: &[LoggedSample], w: &WeightConfig) -> Result<Vec<f64>, CompositeError> {
    let dims = w.dims();
    samples
        .iter()
        .map(|s| {
            let z = s
                .dims
                .as_ref()
                .ok_or_else(|| CompositeError::MissingDimensions(s.sample_id.clone()))?;
            compose(&z.project(&dims), w).map_err(|e| CompositeError::Sample {
                sample_id: s.sample_id.clone(),
                source: Box::new(e),
            })
        })
        .collect()
}

/// A named transformation of a base weight config.
#[derive(Debug, Clone, PartialEq)]
pub enum VariantSpec {
    Default,
    EqualWeights,
    NoPriors,
    PriorHeavy(f64),
    SemanticOnly,
    Remove(BTreeSet<DimensionId>),
}

pub const DEFAULT_PRIOR_HEAVY_FACTOR: f64 = 2.0;

impl VariantSpec {
    pub fn remove<I: IntoIterator<Item = DimensionId>>(dims: I) -> Self {
        VariantSpec::Remove(dims.into_iter().collect())
    }

    /// The nine ablation variants: default, equal weights, no priors,
    /// prior-heavy, semantic only, three single removals and the calibrated
    /// alignment+agreement removal.
    pub fn standard_preset() -> Vec<VariantSpec> {
        vec![
            VariantSpec::Default,
            VariantSpec::EqualWeights,
            VariantSpec::NoPriors,
            VariantSpec::PriorHeavy(DEFAULT_PRIOR_HEAVY_FACTOR),
            VariantSpec::SemanticOnly,
            VariantSpec::remove([DimensionId::Structure]),
            VariantSpec::remove([DimensionId::Alignment]),
            VariantSpec::remove([DimensionId::Agreement]),
            VariantSpec::remove([DimensionId::Alignment, DimensionId::Agreement]),
        ]
    }

    pub fn name(&self) -> String {
        match self {
            VariantSpec::Default => "default".into(),
            VariantSpec::EqualWeights => "equal_weights".into(),
            VariantSpec::NoPriors => "no_priors".into(),
            VariantSpec::PriorHeavy(f) if *f == DEFAULT_PRIOR_HEAVY_FACTOR => "prior_heavy".into(),
            VariantSpec::PriorHeavy(f) => format!("prior_heavy:{f}"),
            VariantSpec::SemanticOnly => "semantic_only".into(),
            VariantSpec::Remove(set) => {
                let names: Vec<&str> = set.iter().map(|d| d.as_str()).collect();
                match names.as_slice() {
                    [] => "default".into(),
                    ["alignment", "agreement"] => "calibrated".into(),
                    [one] => format!("no_{one}"),
                    _ => format!("remove:{}", names.join("+")),
                }
            }
        }
    }
}

impl fmt::Display for VariantSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl FromStr for VariantSpec {
    type Err = CompositeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let unknown = || CompositeError::UnknownVariant(s.to_string());
        Ok(match s {
            "default" => VariantSpec::Default,
            "equal_weights" | "equal" => VariantSpec::EqualWeights,
            "no_priors" => VariantSpec::NoPriors,
            "prior_heavy" => VariantSpec::PriorHeavy(DEFAULT_PRIOR_HEAVY_FACTOR),
            "semantic_only" => VariantSpec::SemanticOnly,
            "calibrated" => VariantSpec::remove([DimensionId::Alignment, DimensionId::Agreement]),
            _ => {
                if let Some(f) = s.strip_prefix("prior_heavy:") {
                    let f: f64 = f.parse().map_err(|_| unknown())?;
                    if !f.is_finite() || f < 0.0 {
                        return Err(unknown());
                    }
                    VariantSpec::PriorHeavy(f)
                } else if let Some(list) = s.strip_prefix("remove:") {
                    let dims = list
                        .split('+')
                        .map(|d| d.parse::<DimensionId>())
                        .collect::<Result<BTreeSet<_>, _>>()?;
                    VariantSpec::Remove(dims)
                } else if let Some(d) = s.strip_prefix("no_") {
                    VariantSpec::remove([d.parse::<DimensionId>().map_err(|_| unknown())?])
                } else {
                    return Err(unknown());
                }
            }
        })
    }
}

impl Serialize for VariantSpec {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.name())
    }
}

impl<'de> Deserialize<'de> for VariantSpec {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Derives a weight config from `base`. The result is always re-normalized.
pub fn make_variant(base: &WeightConfig, variant: &VariantSpec) -> Result<WeightConfig, CompositeError> {
    let name = variant.name();
    let weights = base.weights();
    let removing = |set: &BTreeSet<DimensionId>| -> Result<WeightConfig, CompositeError> {
        let kept: Vec<(DimensionId, f64)> = weights
            .iter()
            .filter(|(d, _)| !set.contains(d))
            .map(|(d, w)| (*d, *w))
            .collect();
        if kept.is_empty() {
            return Err(CompositeError::AllDimensionsRemoved);
        }
        Ok(WeightConfig::new(name.clone(), kept)?)
    };
    match variant {
        VariantSpec::Default => Ok(WeightConfig::new(name, weights.iter().map(|(d, w)| (*d, *w)))?),
        VariantSpec::EqualWeights => Ok(WeightConfig::new(name, weights.keys().map(|d| (*d, 1.0)))?),
        VariantSpec::NoPriors => removing(&[DimensionId::ModelPrior, DimensionId::CostPrior].into_iter().collect()),
        VariantSpec::PriorHeavy(factor) => {
            let scaled = weights.iter().map(|(d, w)| {
                let w = match d {
                    DimensionId::ModelPrior | DimensionId::CostPrior => w * factor,
                    _ => *w,
                };
                (*d, w)
            });
            Ok(WeightConfig::new(name, scaled)?)
        }
        VariantSpec::SemanticOnly => {
            if !base.contains(DimensionId::Semantic) {
                return Err(CompositeError::MissingBaseDimension(DimensionId::Semantic));
            }
            Ok(WeightConfig::new(name, [(DimensionId::Semantic, 1.0)])?)
        }
        VariantSpec::Remove(set) => removing(set),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::TaskFamily;
    use proptest::prelude::*;

    fn unit(dim: DimensionId) -> DimensionVector {
        DimensionVector::from_values(DimensionId::ALL.iter().map(|d| (*d, if *d == dim { 1.0 } else { 0.0 })))
    }

    #[test]
    fn compose_extremes() {
        let w = WeightConfig::default_weights();
        let ones = DimensionVector::from_values(DimensionId::ALL.iter().map(|d| (*d, 1.0)));
        let zeros = DimensionVector::from_values(DimensionId::ALL.iter().map(|d| (*d, 0.0)));
        assert!((compose(&ones, &w).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(compose(&zeros, &w).unwrap(), 0.0);
    }

    #[test]
    fn compose_unit_vectors_recover_default_weights() {
        let w = WeightConfig::default_weights();
        let expected = [0.15, 0.10, 0.20, 0.25, 0.15, 0.15];
        for (d, e) in DimensionId::ALL.iter().zip(expected) {
            assert!((compose(&unit(*d), &w).unwrap() - e).abs() < 1e-12, "{d}");
        }
    }

    #[test]
    fn compose_mismatch() {
        let w = WeightConfig::default_weights();
        let z = DimensionVector::from_values([(DimensionId::Semantic, 0.5)]);
        assert!(matches!(compose(&z, &w), Err(CompositeError::DimensionMismatch { .. })));
    }

    #[test]
    fn remove_alignment_and_agreement() {
        let v = make_variant(&WeightConfig::default_weights(), &VariantSpec::remove([DimensionId::Alignment, DimensionId::Agreement])).unwrap();
        let expected = [
            (DimensionId::ModelPrior, 0.15 / 0.70),
            (DimensionId::CostPrior, 0.10 / 0.70),
            (DimensionId::Structure, 0.20 / 0.70),
            (DimensionId::Semantic, 0.25 / 0.70),
        ];
        assert_eq!(v.len(), 4);
        for (d, e) in expected {
            assert!((v.get(d).unwrap() - e).abs() < 1e-12);
        }
        assert!((v.get(DimensionId::ModelPrior).unwrap() - 0.2143).abs() < 1e-4);
        assert!((v.get(DimensionId::Semantic).unwrap() - 0.3571).abs() < 1e-4);
        assert_eq!(v.name, "calibrated");
    }

    #[test]
    fn equal_semantic_only_and_errors() {
        let base = WeightConfig::default_weights();
        let eq = make_variant(&base, &VariantSpec::EqualWeights).unwrap();
        assert!(eq.weights().values().all(|w| (w - 1.0 / 6.0).abs() < 1e-12));
        let so = make_variant(&base, &VariantSpec::SemanticOnly).unwrap();
        assert_eq!(so.weights().iter().collect::<Vec<_>>(), vec![(&DimensionId::Semantic, &1.0)]);
        let all: BTreeSet<_> = DimensionId::ALL.into_iter().collect();
        assert_eq!(make_variant(&base, &VariantSpec::Remove(all)), Err(CompositeError::AllDimensionsRemoved));
    }

    #[test]
    fn prior_heavy_doubles_priors() {
        let v = make_variant(&WeightConfig::default_weights(), &VariantSpec::PriorHeavy(2.0)).unwrap();
        // priors 0.30 + 0.20 of a total 1.25
        assert!((v.get(DimensionId::ModelPrior).unwrap() - 0.30 / 1.25).abs() < 1e-12);
        assert!((v.get(DimensionId::Semantic).unwrap() - 0.25 / 1.25).abs() < 1e-12);
    }

    #[test]
    fn no_priors_drops_both_priors() {
        let v = make_variant(&WeightConfig::default_weights(), &VariantSpec::NoPriors).unwrap();
        assert!(!v.contains(DimensionId::ModelPrior) && !v.contains(DimensionId::CostPrior));
        assert!((v.get(DimensionId::Semantic).unwrap() - 0.25 / 0.75).abs() < 1e-12);
    }

    #[test]
    fn equal_weights_on_single_dimension_equals_default() {
        let base = WeightConfig::new("s", [(DimensionId::Semantic, 1.0)]).unwrap();
        let a = make_variant(&base, &VariantSpec::EqualWeights).unwrap();
        let b = make_variant(&base, &VariantSpec::Default).unwrap();
        assert_eq!(a.weights(), b.weights());
    }

    #[test]
    fn default_then_empty_removal_is_normalized_base() {
        let base = WeightConfig::new("raw", [(DimensionId::Semantic, 5.0), (DimensionId::Structure, 3.0)]).unwrap();
        let v = make_variant(&make_variant(&base, &VariantSpec::Default).unwrap(), &VariantSpec::Remove(BTreeSet::new())).unwrap();
        assert_eq!(v.weights(), base.weights());
    }

    #[test]
    fn variant_names_round_trip() {
        for v in VariantSpec::standard_preset() {
            assert_eq!(v.name().parse::<VariantSpec>().unwrap(), v);
        }
        assert_eq!("prior_heavy:3".parse::<VariantSpec>().unwrap(), VariantSpec::PriorHeavy(3.0));
        assert_eq!(
            "remove:structure+semantic".parse::<VariantSpec>().unwrap(),
            VariantSpec::remove([DimensionId::Structure, DimensionId::Semantic])
        );
        assert!("bogus".parse::<VariantSpec>().is_err());
        assert_eq!(VariantSpec::standard_preset().len(), 9);
    }

    #[test]
    fn compose_batch_cases() {
        let w = WeightConfig::new("w", [(DimensionId::Semantic, 0.5), (DimensionId::Structure, 0.3), (DimensionId::Alignment, 0.2)]).unwrap();
        assert!(compose_batch(&[], &w).unwrap().is_empty());
        let mk = |id: &str, sem: f64, st: f64, al: f64| {
            LoggedSample::new(id, TaskFamily::QA, "p", "q", "y").with_dims(DimensionVector::from_values([
                (DimensionId::Semantic, sem),
                (DimensionId::Structure, st),
                (DimensionId::Alignment, al),
            ]))
        };
        let batch = vec![mk("a", 1.0, 0.5, 0.0), mk("b", 0.2, 0.4, 0.6), mk("c", 0.9, 0.9, 0.9)];
        let out = compose_batch(&batch, &w).unwrap();
        let hand = [("a", 0.5 + 0.15), ("b", 0.1 + 0.12 + 0.12), ("c", 0.9)];
        for (id, v) in hand {
            assert!((out[id] - v).abs() < 1e-12, "{id}");
        }
        let mut bad = batch.clone();
        bad[1].dims = None;
        assert_eq!(compose_batch(&bad, &w), Err(CompositeError::MissingDimensions("b".into())));
    }

    fn arb_vector() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0f64..=1.0, 6)
    }

    fn arb_weights() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.01f64..10.0, 6)
    }

    fn vector(v: &[f64]) -> DimensionVector {
        DimensionVector::from_values(DimensionId::ALL.iter().copied().zip(v.iter().copied()))
    }

    proptest! {
        #[test]
        fn convexity_bound(z in arb_vector(), w in arb_weights()) {
            let w = WeightConfig::new("w", DimensionId::ALL.iter().copied().zip(w)).unwrap();
            let s = compose(&vector(&z), &w).unwrap();
            let lo = z.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(s >= lo - 1e-12 && s <= hi + 1e-12);
        }

        #[test]
        fn strictly_monotone(z in arb_vector(), w in arb_weights(), k in 0usize..6, bump in 0.01f64..0.5) {
            let w = WeightConfig::new("w", DimensionId::ALL.iter().copied().zip(w)).unwrap();
            let mut z = z;
            z[k] = z[k].min(1.0 - bump);
            let before = compose(&vector(&z), &w).unwrap();
            z[k] += bump;
            let after = compose(&vector(&z), &w).unwrap();
            prop_assert!(after > before);
        }

        #[test]
        fn variant_scale_invariant(w in arb_weights(), scale in 0.001f64..1000.0, which in 0usize..9) {
            let base = WeightConfig::new("b", DimensionId::ALL.iter().copied().zip(w.iter().copied())).unwrap();
            let scaled = WeightConfig::new("b", DimensionId::ALL.iter().copied().zip(w.iter().map(|x| x * scale))).unwrap();
            let v = &VariantSpec::standard_preset()[which];
            let a = make_variant(&base, v).unwrap();
            let b = make_variant(&scaled, v).unwrap();
            for (d, x) in a.weights() {
                prop_assert!((x - b.get(*d).unwrap()).abs() < 1e-12);
            }
            prop_assert!((a.weights().values().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }
}
