//! Valence-Arousal coordinates, emotion labels and the merged catalog.
//!
//! A catalog is built from a [`CatalogSpec`]: the declared raw labels in
//! file order, a raw → canonical merge map and externally supplied VA
//! coordinates for a subset of the labels (the seed set). Labels that are
//! merge sources disappear from the canonical list; canonical ids follow
//! file order so they are reproducible across loads. Non-seed labels get
//! their coordinates later through the pseudo-label bootstrap.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::math;
use crate::{Error, Result};

/// A point in Valence-Arousal space, both axes in `[-1, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VaPoint {
    pub valence: f64,
    pub arousal: f64,
}

impl VaPoint {
    /// Clamps both components into `[-1, 1]`; rejects non-finite input.
    pub fn new(valence: f64, arousal: f64) -> Result<Self> {
        if !valence.is_finite() || !arousal.is_finite() {
            return Err(Error::NonFinite("VA point"));
        }
        Ok(VaPoint {
            valence: valence.clamp(-1.0, 1.0),
            arousal: arousal.clamp(-1.0, 1.0),
        })
    }

    /// Strict constructor for configuration data: out-of-range values are
    /// an error instead of being clamped.
    pub fn checked(label: &str, valence: f64, arousal: f64) -> Result<Self> {
        let ok = |x: f64| x.is_finite() && (-1.0..=1.0).contains(&x);
        if !ok(valence) || !ok(arousal) {
            return Err(Error::VaOutOfRange {
                label: label.to_string(),
                valence,
                arousal,
            });
        }
        Ok(VaPoint { valence, arousal })
    }

    pub fn squared_distance(&self, other: &VaPoint) -> f64 {
        let dv = self.valence - other.valence;
        let da = self.arousal - other.arousal;
        dv * dv + da * da
    }
}

/// Position of a canonical label inside its catalog.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EmotionId(pub usize);

impl fmt::Display for EmotionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmotionLabel {
    pub id: EmotionId,
    pub name: String,
}

/// Parsed catalog configuration, mirroring the JSON file layout.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CatalogSpec {
    pub labels: Vec<String>,
    #[serde(default)]
    pub merges: BTreeMap<String, String>,
    #[serde(default)]
    pub va_seed: BTreeMap<String, [f64; 2]>,
    /// Coordinates filled in by the pseudo-label bootstrap.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub va_bootstrap: BTreeMap<String, [f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmotionCatalog {
    labels: Vec<EmotionLabel>,
    by_name: BTreeMap<String, EmotionId>,
    merge_map: BTreeMap<String, String>,
    va_table: Vec<Option<VaPoint>>,
    seed: Vec<bool>,
    provenance: Option<String>,
}

impl EmotionCatalog {
    pub fn from_spec(spec: &CatalogSpec) -> Result<Self> {
        let mut declared = BTreeMap::new();
        for name in &spec.labels {
            let name = normalize(name);
            if name.is_empty() {
                return Err(Error::Empty("label name"));
            }
            if declared.insert(name.clone(), ()).is_some() {
                return Err(Error::DuplicateLabel(name));
            }
        }
        let merges: BTreeMap<String, String> = spec
            .merges
            .iter()
            .map(|(k, v)| (normalize(k), normalize(v)))
            .collect();
        for (src, dst) in &merges {
            if !declared.contains_key(dst) {
                return Err(Error::UndeclaredMergeTarget {
                    source_name: src.clone(),
                    target: dst.clone(),
                });
            }
        }

        let mut labels = Vec::new();
        let mut by_name = BTreeMap::new();
        for name in spec.labels.iter().map(|n| normalize(n)) {
            if merges.contains_key(&name) {
                continue;
            }
            let id = EmotionId(labels.len());
            by_name.insert(name.clone(), id);
            labels.push(EmotionLabel { id, name });
        }
        if labels.is_empty() {
            return Err(Error::Empty("catalog"));
        }

        // Resolve chains to their canonical end, rejecting cycles.
        let mut merge_map = BTreeMap::new();
        for src in merges.keys() {
            let mut cur = src.clone();
            let mut hops = 0;
            while let Some(next) = merges.get(&cur) {
                cur = next.clone();
                hops += 1;
                if hops > merges.len() {
                    return Err(Error::MergeCycle(src.clone()));
                }
            }
            merge_map.insert(src.clone(), cur);
        }

        let n = labels.len();
        let mut catalog = EmotionCatalog {
            labels,
            by_name,
            merge_map,
            va_table: alloc::vec![None; n],
            seed: alloc::vec![false; n],
            provenance: spec.provenance.clone(),
        };
        for (name, [v, a]) in &spec.va_seed {
            let id = catalog.canonical_id(name)?;
            catalog.va_table[id.0] = Some(VaPoint::checked(name, *v, *a)?);
            catalog.seed[id.0] = true;
        }
        for (name, [v, a]) in &spec.va_bootstrap {
            let id = catalog.canonical_id(name)?;
            if catalog.seed[id.0] {
                return Err(Error::Config(alloc::format!(
                    "bootstrapped entry `{name}` overrides a seed coordinate"
                )));
            }
            catalog.va_table[id.0] = Some(VaPoint::checked(name, *v, *a)?);
        }
        Ok(catalog)
    }

    fn canonical_id(&self, name: &str) -> Result<EmotionId> {
        self.by_name
            .get(&normalize(name))
            .copied()
            .ok_or_else(|| Error::UnknownLabel(name.to_string()))
    }

    /// Maps a raw or canonical name onto its post-merge label.
    pub fn resolve_label(&self, raw_name: &str) -> Result<&EmotionLabel> {
        let name = normalize(raw_name);
        let canonical = self.merge_map.get(&name).unwrap_or(&name);
        self.by_name
            .get(canonical)
            .map(|id| &self.labels[id.0])
            .ok_or_else(|| Error::UnknownLabel(raw_name.to_string()))
    }

    pub fn va_of(&self, id: EmotionId) -> Result<VaPoint> {
        let label = self.label(id)?;
        self.va_table[id.0].ok_or_else(|| Error::VaUnassigned(label.name.clone()))
    }

    pub fn label(&self, id: EmotionId) -> Result<&EmotionLabel> {
        self.labels.get(id.0).ok_or(Error::OutOfRange {
            index: id.0,
            len: self.labels.len(),
        })
    }

    pub fn name(&self, id: EmotionId) -> &str {
        &self.labels[id.0].name
    }

    pub fn labels(&self) -> &[EmotionLabel] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = EmotionId> + '_ {
        self.labels.iter().map(|l| l.id)
    }

    pub fn merge_map(&self) -> &BTreeMap<String, String> {
        &self.merge_map
    }

    pub fn is_seed(&self, id: EmotionId) -> bool {
        self.seed.get(id.0).copied().unwrap_or(false)
    }

    pub fn seed_ids(&self) -> Vec<EmotionId> {
        self.ids().filter(|id| self.is_seed(*id)).collect()
    }

    pub fn has_va(&self, id: EmotionId) -> bool {
        self.va_table.get(id.0).is_some_and(|v| v.is_some())
    }

    /// True once every label carries a coordinate.
    pub fn is_complete(&self) -> bool {
        self.va_table.iter().all(Option::is_some)
    }

    /// Stores a bootstrapped coordinate. Seed entries are immutable.
    pub fn assign_va(&mut self, id: EmotionId, point: VaPoint) -> Result<()> {
        let label = self.label(id)?.name.clone();
        if self.seed[id.0] {
            return Err(Error::Config(alloc::format!(
                "seed coordinate of `{label}` is immutable"
            )));
        }
        self.va_table[id.0] = Some(VaPoint::new(point.valence, point.arousal)?);
        Ok(())
    }

    /// Emotion whose valence is closest to `v`; lowest id on ties. Labels
    /// without coordinates are skipped.
    pub fn nearest_by_valence(&self, v: f64) -> Option<EmotionId> {
        let mut best: Option<(EmotionId, f64)> = None;
        for (i, va) in self.va_table.iter().enumerate() {
            if let Some(p) = va {
                let d = math::abs(p.valence - v);
                if best.is_none_or(|(_, bd)| d < bd) {
                    best = Some((EmotionId(i), d));
                }
            }
        }
        best.map(|(id, _)| id)
    }

    /// Writes the catalog back into configuration form, with bootstrapped
    /// coordinates in their own section.
    pub fn to_spec(&self, raw_labels: &[String]) -> CatalogSpec {
        let mut va_seed = BTreeMap::new();
        let mut va_bootstrap = BTreeMap::new();
        for label in &self.labels {
            if let Some(p) = self.va_table[label.id.0] {
                let entry = [p.valence, p.arousal];
                if self.seed[label.id.0] {
                    va_seed.insert(label.name.clone(), entry);
                } else {
                    va_bootstrap.insert(label.name.clone(), entry);
                }
            }
        }
        CatalogSpec {
            labels: raw_labels.to_vec(),
            merges: self.merge_map.clone(),
            va_seed,
            va_bootstrap,
            provenance: self.provenance.clone(),
        }
    }
}

fn normalize(name: &str) -> String {
    name.trim().to_lowercase()
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn spec(labels: &[&str], merges: &[(&str, &str)], seeds: &[(&str, f64, f64)]) -> CatalogSpec {
        CatalogSpec {
            labels: labels.iter().map(|s| s.to_string()).collect(),
            merges: merges.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect(),
            va_seed: seeds.iter().map(|(n, v, a)| (n.to_string(), [*v, *a])).collect(),
            ..Default::default()
        }
    }

    #[test]
    fn single_label_identity() {
        let c = EmotionCatalog::from_spec(&spec(&["joyful"], &[], &[])).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(c.resolve_label("joyful").unwrap().id, EmotionId(0));
    }

    #[test]
    fn undeclared_merge_target() {
        let err = EmotionCatalog::from_spec(&spec(&["joyful"], &[("terrified", "afraid")], &[]))
            .unwrap_err();
        assert!(matches!(err, Error::UndeclaredMergeTarget { .. }));
    }

    #[test]
    fn merge_cycle_rejected() {
        let err = EmotionCatalog::from_spec(&spec(
            &["a", "b", "c"],
            &[("a", "b"), ("b", "a")],
            &[],
        ))
        .unwrap_err();
        assert!(matches!(err, Error::MergeCycle(_)));
    }

    #[test]
    fn merge_chain_resolves_to_end() {
        let c = EmotionCatalog::from_spec(&spec(&["a", "b", "c"], &[("a", "b"), ("b", "c")], &[]))
            .unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(c.resolve_label("a").unwrap().name, "c");
    }

    #[test]
    fn duplicate_label_rejected() {
        let err = EmotionCatalog::from_spec(&spec(&["a", "A"], &[], &[])).unwrap_err();
        assert_eq!(err, Error::DuplicateLabel("a".into()));
    }

    #[test]
    fn out_of_range_seed_rejected() {
        let err = EmotionCatalog::from_spec(&spec(&["a"], &[], &[("a", 1.2, 0.0)])).unwrap_err();
        assert!(matches!(err, Error::VaOutOfRange { .. }));
    }

    #[test]
    fn va_of_unassigned_is_error() {
        let c = EmotionCatalog::from_spec(&spec(&["afraid", "caring"], &[], &[("afraid", -0.12, 0.79)]))
            .unwrap();
        assert_eq!(c.va_of(EmotionId(0)).unwrap(), VaPoint { valence: -0.12, arousal: 0.79 });
        assert!(matches!(c.va_of(EmotionId(1)), Err(Error::VaUnassigned(_))));
    }

    #[test]
    fn seed_entries_are_immutable() {
        let mut c = EmotionCatalog::from_spec(&spec(&["a", "b"], &[], &[("a", 0.1, 0.1)])).unwrap();
        assert!(c.assign_va(EmotionId(0), VaPoint::new(0.0, 0.0).unwrap()).is_err());
        c.assign_va(EmotionId(1), VaPoint::new(0.5, 0.5).unwrap()).unwrap();
        assert!(c.is_complete());
    }

    #[test]
    fn nearest_by_valence_ties_to_lowest_id() {
        let c = EmotionCatalog::from_spec(&spec(
            &["a", "b", "c"],
            &[],
            &[("a", -0.5, 0.0), ("b", 0.5, 0.0), ("c", 0.9, 0.0)],
        ))
        .unwrap();
        assert_eq!(c.nearest_by_valence(0.0), Some(EmotionId(0)));
        assert_eq!(c.nearest_by_valence(0.8), Some(EmotionId(2)));
    }

    #[test]
    fn spec_round_trip() {
        let s = spec(&["a", "b", "c"], &[("c", "a")], &[("a", 0.25, -0.5)]);
        let mut c = EmotionCatalog::from_spec(&s).unwrap();
        c.assign_va(EmotionId(1), VaPoint::new(0.3, 0.3).unwrap()).unwrap();
        let back = EmotionCatalog::from_spec(&c.to_spec(&s.labels)).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.seed_ids(), vec![EmotionId(0)]);
    }

    proptest::proptest! {
        #[test]
        fn resolve_is_idempotent(idx in 0usize..5) {
            let names = ["a", "b", "c", "d", "e"];
            let c = EmotionCatalog::from_spec(&spec(&names, &[("b", "a"), ("d", "c")], &[])).unwrap();
            let once = c.resolve_label(names[idx]).unwrap().clone();
            let twice = c.resolve_label(&once.name).unwrap();
            proptest::prop_assert_eq!(&once, twice);
        }

        #[test]
        fn va_new_always_in_bounds(v in -10.0f64..10.0, a in -10.0f64..10.0) {
            let p = VaPoint::new(v, a).unwrap();
            proptest::prop_assert!((-1.0..=1.0).contains(&p.valence));
            proptest::prop_assert!((-1.0..=1.0).contains(&p.arousal));
        }
    }
}
