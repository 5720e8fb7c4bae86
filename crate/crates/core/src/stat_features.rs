//! Attribute conditional probabilities and fusion feature vectors.
//!
//! For every attribute value seen in training, the table keeps the number of
//! real and fake items containing it. An item counts once per value no matter
//! how often it mentions the value. `P(real | value) = n_real / (n_real + n_fake)`.
//!
//! A fusion feature vector is laid out as
//! `[base probabilities..., (p_real, p_fake) per kind..., present flag per kind...]`,
//! where the base is either the two soft-vote probabilities or the raw pairs
//! of every backbone model.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::backbone::{format_prob, PredictionMatrix};
use crate::corpus::{AttributeKind, LabeledItem};
use crate::ensemble::EnsembleResult;
use crate::error::{Error, Result};
use crate::label::{ClassLabel, ProbPair};
use crate::seed::sha256_hex;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValueCounts {
    pub n_real: u64,
    pub n_fake: u64,
}

impl ValueCounts {
    pub fn total(&self) -> u64 {
        self.n_real + self.n_fake
    }

    pub fn probs(&self) -> ProbPair {
        let t = self.total() as f64;
        let p_real = self.n_real as f64 / t;
        ProbPair::new(p_real, 1.0 - p_real)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct AttributeStatsTable {
    entries: BTreeMap<(AttributeKind, String), ValueCounts>,
}

impl AttributeStatsTable {
    pub fn from_counts(
        rows: impl IntoIterator<Item = (AttributeKind, String, ValueCounts)>,
    ) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (k, v, c) in rows {
            if c.total() == 0 {
                return Err(Error::invalid(format!("{k}/{v}: zero counts")));
            }
            if entries.insert((k, v.clone()), c).is_some() {
                return Err(Error::invalid(format!("{k}/{v}: duplicate entry")));
            }
        }
        Ok(AttributeStatsTable { entries })
    }

    pub fn counts(&self, kind: AttributeKind, value: &str) -> Option<ValueCounts> {
        self.entries.get(&(kind, value.to_string())).copied()
    }

    pub fn probs(&self, kind: AttributeKind, value: &str) -> Option<ProbPair> {
        self.counts(kind, value).map(|c| c.probs())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (AttributeKind, &str, ValueCounts)> {
        self.entries.iter().map(|((k, v), c)| (*k, v.as_str(), *c))
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = crate::error::csv_writer(path)?;
        w.write_record(["kind", "value", "n_real", "n_fake"])?;
        for (k, v, c) in self.iter() {
            w.write_record([k.as_str(), v, &c.n_real.to_string(), &c.n_fake.to_string()])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        #[derive(Deserialize)]
        struct Row {
            kind: String,
            value: String,
            n_real: u64,
            n_fake: u64,
        }
        let mut rdr = crate::error::csv_reader(path.as_ref())?;
        let mut rows = Vec::new();
        for r in rdr.deserialize::<Row>() {
            let r = r?;
            rows.push((
                AttributeKind::from_str(&r.kind)?,
                r.value,
                ValueCounts {
                    n_real: r.n_real,
                    n_fake: r.n_fake,
                },
            ));
        }
        AttributeStatsTable::from_counts(rows)
    }
}

/// Count, per attribute value, how many real and fake training items contain it.
pub fn fit_stats(train: &[LabeledItem], kinds: &[AttributeKind]) -> Result<AttributeStatsTable> {
    let mut entries: BTreeMap<(AttributeKind, String), ValueCounts> = BTreeMap::new();
    for it in train {
        let label = it
            .label
            .ok_or_else(|| Error::invalid(format!("training item {} has no label", it.id)))?;
        for &kind in kinds {
            let distinct: BTreeSet<&str> = it.values(kind).iter().map(String::as_str).collect();
            for v in distinct {
                let c = entries.entry((kind, v.to_string())).or_default();
                match label {
                    ClassLabel::Real => c.n_real += 1,
                    ClassLabel::Fake => c.n_fake += 1,
                }
            }
        }
    }
    Ok(AttributeStatsTable { entries })
}

/// Mean pair over the distinct known values; `(NEUTRAL, false)` if none are known.
pub fn lookup(table: &AttributeStatsTable, kind: AttributeKind, values: &[String]) -> (ProbPair, bool) {
    let distinct: BTreeSet<&str> = values.iter().map(String::as_str).collect();
    let known: Vec<ProbPair> = distinct
        .into_iter()
        .filter_map(|v| table.probs(kind, v))
        .collect();
    match crate::label::mean_pair(&known) {
        Some(p) => (p, true),
        None => (ProbPair::NEUTRAL, false),
    }
}

/// Per-kind attribute evidence for one item, in the order of `kinds`.
pub fn attribute_evidence(
    table: &AttributeStatsTable,
    item: &LabeledItem,
    kinds: &[AttributeKind],
) -> Vec<(ProbPair, bool)> {
    kinds
        .iter()
        .map(|&k| lookup(table, k, item.values(k)))
        .collect()
}

/// Which probabilities open the feature vector.
#[derive(Debug, Clone, Copy)]
pub enum FeatureBase<'a> {
    Ensemble(&'a EnsembleResult),
    Raw(&'a PredictionMatrix),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaseMode {
    Ensemble,
    Raw,
}

impl FromStr for BaseMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ensemble" => Ok(BaseMode::Ensemble),
            "raw" => Ok(BaseMode::Raw),
            other => Err(Error::invalid(format!("unknown feature base {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionFeatureVector {
    pub item_id: String,
    /// Base probabilities followed by one pair per attribute kind.
    pub values: Vec<f64>,
    /// One flag per attribute kind.
    pub present: Vec<bool>,
}

impl FusionFeatureVector {
    /// Numeric network input: values then presence flags as 0/1.
    pub fn to_input(&self) -> Vec<f64> {
        let mut x = self.values.clone();
        x.extend(self.present.iter().map(|&p| if p { 1.0 } else { 0.0 }));
        x
    }
}

pub fn feature_columns(base: &FeatureBase<'_>, kinds: &[AttributeKind]) -> Vec<String> {
    let mut cols = Vec::new();
    match base {
        FeatureBase::Ensemble(_) => {
            cols.push("ensemble_p_real".to_string());
            cols.push("ensemble_p_fake".to_string());
        }
        FeatureBase::Raw(m) => {
            for name in m.model_names() {
                cols.push(format!("{name}_p_real"));
                cols.push(format!("{name}_p_fake"));
            }
        }
    }
    for k in kinds {
        cols.push(format!("{k}_p_real"));
        cols.push(format!("{k}_p_fake"));
    }
    for k in kinds {
        cols.push(format!("{k}_present"));
    }
    cols
}

pub fn build_features(
    items: &[LabeledItem],
    base: FeatureBase<'_>,
    table: &AttributeStatsTable,
    kinds: &[AttributeKind],
) -> Result<Vec<FusionFeatureVector>> {
    items
        .iter()
        .map(|it| {
            let mut values = match base {
                FeatureBase::Ensemble(e) => {
                    let s = e
                        .get(&it.id)
                        .ok_or_else(|| Error::MissingItem(it.id.clone()))?
                        .soft;
                    vec![s.p_real, s.p_fake]
                }
                FeatureBase::Raw(m) => m
                    .get(&it.id)
                    .ok_or_else(|| Error::MissingItem(it.id.clone()))?
                    .iter()
                    .flat_map(|p| p.to_array())
                    .collect(),
            };
            let mut present = Vec::with_capacity(kinds.len());
            for (p, known) in attribute_evidence(table, it, kinds) {
                values.push(p.p_real);
                values.push(p.p_fake);
                present.push(known);
            }
            Ok(FusionFeatureVector {
                item_id: it.id.clone(),
                values,
                present,
            })
        })
        .collect()
}

/// Numeric feature rows with ids and optional labels; what the network and
/// the oversampler consume, and what `features.csv` stores.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    pub columns: Vec<String>,
    pub ids: Vec<String>,
    pub labels: Vec<Option<ClassLabel>>,
    pub rows: Vec<Vec<f64>>,
}

impl FeatureTable {
    pub fn from_vectors(
        columns: Vec<String>,
        vectors: &[FusionFeatureVector],
        labels: Vec<Option<ClassLabel>>,
    ) -> Result<Self> {
        if labels.len() != vectors.len() {
            return Err(Error::DimensionMismatch {
                expected: vectors.len(),
                got: labels.len(),
            });
        }
        let rows: Vec<Vec<f64>> = vectors.iter().map(|v| v.to_input()).collect();
        for r in &rows {
            if r.len() != columns.len() {
                return Err(Error::DimensionMismatch {
                    expected: columns.len(),
                    got: r.len(),
                });
            }
        }
        Ok(FeatureTable {
            columns,
            ids: vectors.iter().map(|v| v.item_id.clone()).collect(),
            labels,
            rows,
        })
    }

    pub fn dim(&self) -> usize {
        self.columns.len()
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Hash of the ordered column names; stored with trained models.
    pub fn schema_hash(&self) -> String {
        schema_hash(&self.columns)
    }

    pub fn labeled(&self) -> Result<Vec<ClassLabel>> {
        self.labels
            .iter()
            .zip(&self.ids)
            .map(|(l, id)| l.ok_or_else(|| Error::invalid(format!("feature row {id} has no label"))))
            .collect()
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = crate::error::csv_writer(path)?;
        let mut header = vec!["item_id".to_string(), "label".to_string()];
        header.extend(self.columns.iter().cloned());
        w.write_record(&header)?;
        for ((id, label), row) in self.ids.iter().zip(&self.labels).zip(&self.rows) {
            let mut rec = vec![
                id.clone(),
                label.map(|l| l.to_string()).unwrap_or_default(),
            ];
            rec.extend(row.iter().map(|v| format_prob(*v)));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let mut rdr = crate::error::csv_reader(path.as_ref())?;
        let header = rdr.headers()?.clone();
        if header.len() < 2 || &header[0] != "item_id" || &header[1] != "label" {
            return Err(Error::invalid("features header must start with item_id,label"));
        }
        let columns: Vec<String> = header.iter().skip(2).map(str::to_string).collect();
        let mut t = FeatureTable {
            columns,
            ids: Vec::new(),
            labels: Vec::new(),
            rows: Vec::new(),
        };
        for rec in rdr.records() {
            let rec = rec?;
            t.ids.push(rec[0].to_string());
            t.labels.push(match &rec[1] {
                "" => None,
                s => Some(s.parse()?),
            });
            let row = rec
                .iter()
                .skip(2)
                .map(|s| {
                    s.parse::<f64>()
                        .map_err(|_| Error::invalid(format!("bad feature value {s:?}")))
                })
                .collect::<Result<Vec<_>>>()?;
            if row.len() != t.columns.len() {
                return Err(Error::DimensionMismatch {
                    expected: t.columns.len(),
                    got: row.len(),
                });
            }
            t.rows.push(row);
        }
        Ok(t)
    }
}

pub fn schema_hash(columns: &[String]) -> String {
    sha256_hex(columns.join("\u{1f}").as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Attributes;
    use crate::ensemble::soft_vote;
    use proptest::prelude::*;

    fn item(id: &str, label: ClassLabel, attrs: &[(AttributeKind, &[&str])]) -> LabeledItem {
        let mut attributes = Attributes::new();
        for (k, vs) in attrs {
            attributes.insert(*k, vs.iter().map(|s| s.to_string()).collect());
        }
        LabeledItem {
            id: id.into(),
            text: String::new(),
            label: Some(label),
            attributes,
        }
    }

    #[test]
    fn exact_ratio_and_per_item_counting() {
        use AttributeKind::Domain;
        let mut items = Vec::new();
        for i in 0..156 {
            items.push(item(&format!("r{i}"), ClassLabel::Real, &[(Domain, &["a.com", "a.com"])]));
        }
        for i in 0..6 {
            items.push(item(&format!("f{i}"), ClassLabel::Fake, &[(Domain, &["a.com"])]));
        }
        let t = fit_stats(&items, &[Domain]).unwrap();
        let c = t.counts(Domain, "a.com").unwrap();
        assert_eq!((c.n_real, c.n_fake), (156, 6));
        assert_eq!(format!("{:.3}", c.probs().p_real), "0.963");
        assert!(t.probs(Domain, "b.com").is_none());
    }

    #[test]
    fn pure_value() {
        let t = AttributeStatsTable::from_counts([(
            AttributeKind::Domain,
            "news.sky".to_string(),
            ValueCounts { n_real: 274, n_fake: 0 },
        )])
        .unwrap();
        assert_eq!(t.probs(AttributeKind::Domain, "news.sky").unwrap(), ProbPair::new(1.0, 0.0));
    }

    fn two_domain_table() -> AttributeStatsTable {
        AttributeStatsTable::from_counts([
            (AttributeKind::Domain, "news.sky".into(), ValueCounts { n_real: 274, n_fake: 0 }),
            (AttributeKind::Domain, "theguardian.com".into(), ValueCounts { n_real: 1, n_fake: 5 }),
        ])
        .unwrap()
    }

    #[test]
    fn lookup_averages_distinct_known_values() {
        let t = two_domain_table();
        let (p, present) = lookup(&t, AttributeKind::Domain, &["news.sky".into()]);
        assert!(present);
        assert_eq!(p, ProbPair::new(1.0, 0.0));

        let vals = vec!["news.sky".into(), "theguardian.com".into(), "news.sky".into(), "x.org".into()];
        let (p, present) = lookup(&t, AttributeKind::Domain, &vals);
        assert!(present);
        // (1 + 1/6) / 2
        assert!((p.p_real - 7.0 / 12.0).abs() < 1e-15);
        assert!((p.p_fake - 5.0 / 12.0).abs() < 1e-15);

        let (p, present) = lookup(&t, AttributeKind::Domain, &["x.org".into()]);
        assert!(!present);
        assert_eq!(p, ProbPair::NEUTRAL);
    }

    #[test]
    fn feature_layout() {
        let t = two_domain_table();
        let it = item("x", ClassLabel::Real, &[(AttributeKind::Domain, &["news.sky"])]);
        let m = PredictionMatrix::new(
            vec!["a".into(), "b".into()],
            vec!["x".into()],
            vec![vec![ProbPair::new(0.6, 0.4), ProbPair::new(0.2, 0.8)]],
        )
        .unwrap();
        let e = soft_vote(&m).unwrap();
        let kinds = [AttributeKind::Domain, AttributeKind::Username];
        let f = build_features(std::slice::from_ref(&it), FeatureBase::Ensemble(&e), &t, &kinds).unwrap();
        let v = &f[0];
        let expect = [0.4, 0.6, 1.0, 0.0, 0.5, 0.5];
        assert_eq!(v.values.len(), expect.len());
        for (a, b) in v.values.iter().zip(expect) {
            assert!((a - b).abs() < 1e-15);
        }
        assert_eq!(v.present, vec![true, false]);
        assert_eq!(feature_columns(&FeatureBase::Ensemble(&e), &kinds).len(), v.to_input().len());

        let raw = build_features(std::slice::from_ref(&it), FeatureBase::Raw(&m), &t, &kinds).unwrap();
        assert_eq!(raw[0].values.len(), 2 * 2 + 2 * kinds.len());

        let bare = build_features(std::slice::from_ref(&it), FeatureBase::Ensemble(&e), &t, &[]).unwrap();
        assert_eq!(bare[0].to_input().len(), 2);
    }

    #[test]
    fn missing_base_item_is_named() {
        let e = soft_vote(&PredictionMatrix::single("a", vec!["y".into()], vec![ProbPair::NEUTRAL]).unwrap()).unwrap();
        let it = item("x", ClassLabel::Real, &[]);
        let err = build_features(&[it], FeatureBase::Ensemble(&e), &AttributeStatsTable::default(), &[]).unwrap_err();
        assert!(matches!(err, Error::MissingItem(id) if id == "x"));
    }

    fn corpus() -> impl Strategy<Value = Vec<LabeledItem>> {
        let one = (any::<bool>(), prop::collection::vec(0u8..5, 0..4));
        prop::collection::vec(one, 0..40).prop_map(|rows| {
            rows.into_iter()
                .enumerate()
                .map(|(i, (real, vals))| {
                    let label = if real { ClassLabel::Real } else { ClassLabel::Fake };
                    let vals: Vec<String> = vals.iter().map(|v| format!("d{v}")).collect();
                    let mut attributes = Attributes::new();
                    if !vals.is_empty() {
                        attributes.insert(AttributeKind::Domain, vals);
                    }
                    LabeledItem { id: format!("i{i}"), text: String::new(), label: Some(label), attributes }
                })
                .collect()
        })
    }

    proptest! {
        #[test]
        fn counts_match_brute_force(items in corpus()) {
            let t = fit_stats(&items, &[AttributeKind::Domain]).unwrap();
            for (kind, value, c) in t.iter() {
                let containing: Vec<&LabeledItem> = items
                    .iter()
                    .filter(|it| it.values(kind).iter().any(|v| v == value))
                    .collect();
                prop_assert_eq!(c.total() as usize, containing.len());
                let reals = containing.iter().filter(|it| it.label == Some(ClassLabel::Real)).count();
                prop_assert_eq!(c.n_real as usize, reals);
                prop_assert!((c.probs().sum() - 1.0).abs() < 1e-12);
            }
            for it in &items {
                let (p, _) = lookup(&t, AttributeKind::Domain, it.values(AttributeKind::Domain));
                prop_assert!((p.sum() - 1.0).abs() < 1e-9);
            }
        }

        #[test]
        fn adding_a_real_item_raises_p_real(items in corpus(), v in 0u8..5) {
            let value = format!("d{v}");
            let before = fit_stats(&items, &[AttributeKind::Domain]).unwrap();
            let mut more = items.clone();
            more.push(item("extra", ClassLabel::Real, &[(AttributeKind::Domain, &[value.as_str()])]));
            let after = fit_stats(&more, &[AttributeKind::Domain]).unwrap();
            let new = after.probs(AttributeKind::Domain, &value).unwrap().p_real;
            match before.probs(AttributeKind::Domain, &value) {
                Some(old) if old.p_real == 1.0 => prop_assert_eq!(new, 1.0),
                Some(old) => prop_assert!(new > old.p_real),
                None => prop_assert_eq!(new, 1.0),
            }
        }
    }
}
