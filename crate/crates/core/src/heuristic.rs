//! Threshold-gated override of model labels by attribute statistics.
//!
//! Attributes are tried in priority order. For each present attribute the
//! real branch fires when `p_real > t` and `p_real > p_fake`, the fake branch
//! when `p_fake > t` and `p_real < p_fake`. If no attribute branch fires the
//! model decides: real iff `p_real > p_fake`.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::{AttributeKind, LabeledItem};
use crate::error::{Error, Result};
use crate::evalkit::{classification_metrics, Averaging};
use crate::label::{ClassLabel, ProbPair};
use crate::stat_features::{attribute_evidence, AttributeStatsTable};

/// Threshold used by the "without threshold" ablation mode.
pub const NO_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeuristicConfig {
    pub priority: Vec<AttributeKind>,
    pub threshold: f64,
    pub enabled: bool,
}

impl Default for HeuristicConfig {
    fn default() -> Self {
        HeuristicConfig {
            priority: vec![AttributeKind::Username, AttributeKind::Domain],
            threshold: 0.88,
            enabled: true,
        }
    }
}

impl HeuristicConfig {
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        let distinct: BTreeSet<_> = self.priority.iter().collect();
        if distinct.len() != self.priority.len() {
            out.push("heuristic priority entries must be distinct".to_string());
        }
        if !(self.threshold > 0.5 && self.threshold <= 1.0) {
            out.push(format!("heuristic threshold {} outside (0.5, 1]", self.threshold));
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        match self.violations().into_iter().next() {
            Some(v) => Err(Error::Config(v)),
            None => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    /// Attribute at 1-based priority `rank`.
    Attribute { rank: usize, label: ClassLabel },
    Model(ClassLabel),
}

impl Branch {
    pub fn label(self) -> ClassLabel {
        match self {
            Branch::Attribute { label, .. } | Branch::Model(label) => label,
        }
    }

    pub fn is_override(self) -> bool {
        matches!(self, Branch::Attribute { .. })
    }
}

impl fmt::Display for Branch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Branch::Attribute { rank, label } => write!(f, "attr{rank}-{label}"),
            Branch::Model(label) => write!(f, "model-{label}"),
        }
    }
}

impl FromStr for Branch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::invalid(format!("bad branch name {s:?}"));
        let (head, label) = s.rsplit_once('-').ok_or_else(bad)?;
        let label: ClassLabel = label.parse()?;
        if head == "model" {
            return Ok(Branch::Model(label));
        }
        let rank = head
            .strip_prefix("attr")
            .and_then(|r| r.parse::<usize>().ok())
            .filter(|r| *r >= 1)
            .ok_or_else(bad)?;
        Ok(Branch::Attribute { rank, label })
    }
}

impl Serialize for Branch {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Branch {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeuristicTrace {
    pub item_id: String,
    pub fired_branch: Branch,
    pub label: ClassLabel,
}

/// Run the cascade. `evidence` is per attribute in priority order, each a
/// pair plus a presence flag; absent attributes are skipped.
pub fn decide(evidence: &[(ProbPair, bool)], model: ProbPair, threshold: f64) -> Branch {
    for (i, (p, present)) in evidence.iter().enumerate() {
        if !present {
            continue;
        }
        if p.p_real > threshold && p.p_real > p.p_fake {
            return Branch::Attribute {
                rank: i + 1,
                label: ClassLabel::Real,
            };
        }
        if p.p_fake > threshold && p.p_real < p.p_fake {
            return Branch::Attribute {
                rank: i + 1,
                label: ClassLabel::Fake,
            };
        }
    }
    if model.p_real > model.p_fake {
        Branch::Model(ClassLabel::Real)
    } else {
        Branch::Model(ClassLabel::Fake)
    }
}

pub fn apply_heuristic(
    item_id: &str,
    evidence: &[(ProbPair, bool)],
    model: ProbPair,
    cfg: &HeuristicConfig,
) -> (ClassLabel, HeuristicTrace) {
    let branch = if cfg.enabled {
        decide(evidence, model, cfg.threshold)
    } else {
        decide(&[], model, cfg.threshold)
    };
    let label = branch.label();
    (
        label,
        HeuristicTrace {
            item_id: item_id.to_string(),
            fired_branch: branch,
            label,
        },
    )
}

/// Apply the heuristic to a batch; `model` is aligned with `items`.
pub fn postprocess(
    items: &[LabeledItem],
    model: &[ProbPair],
    table: &AttributeStatsTable,
    cfg: &HeuristicConfig,
) -> Result<Vec<HeuristicTrace>> {
    if items.len() != model.len() {
        return Err(Error::DimensionMismatch {
            expected: items.len(),
            got: model.len(),
        });
    }
    Ok(items
        .iter()
        .zip(model)
        .map(|(item, m)| {
            let ev = attribute_evidence(table, item, &cfg.priority);
            apply_heuristic(&item.id, &ev, *m, cfg).1
        })
        .collect())
}

pub fn write_traces(traces: &[HeuristicTrace], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    for t in traces {
        out.push_str(&serde_json::to_string(t)?);
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_traces(path: impl AsRef<Path>) -> Result<Vec<HeuristicTrace>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| Ok(serde_json::from_str(l)?))
        .collect()
}

/// Candidate thresholds 0.52, 0.54, ..., 1.00.
pub fn default_grid() -> Vec<f64> {
    (26..=50).map(|i| i as f64 / 50.0).collect()
}

/// Index of the point farthest from the chord joining the first and last
/// points; ties within 1e-12 go to the later point.
pub fn elbow_index(points: &[(f64, f64)]) -> Result<usize> {
    if points.len() < 3 {
        return Err(Error::invalid("elbow selection needs at least 3 grid points"));
    }
    let (x0, y0) = points[0];
    let (x1, y1) = points[points.len() - 1];
    let len = ((x1 - x0).powi(2) + (y1 - y0).powi(2)).sqrt();
    let mut best = 0;
    let mut best_d = f64::NEG_INFINITY;
    for (i, &(x, y)) in points.iter().enumerate() {
        let d = ((x1 - x0) * (y0 - y) - (x0 - x) * (y1 - y0)).abs() / len;
        if d >= best_d - 1e-12 {
            best = i;
            best_d = best_d.max(d);
        }
    }
    Ok(best)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElbowSelection {
    pub threshold: f64,
    /// `(threshold, f1)` per grid point.
    pub curve: Vec<(f64, f64)>,
}

/// Pick the threshold at the knee of the validation F1 curve.
pub fn select_threshold_elbow(
    evidence: &[Vec<(ProbPair, bool)>],
    model: &[ProbPair],
    gold: &[ClassLabel],
    grid: &[f64],
    averaging: Averaging,
) -> Result<ElbowSelection> {
    if grid.len() < 3 {
        return Err(Error::invalid("elbow selection needs at least 3 grid points"));
    }
    if grid.windows(2).any(|w| w[0] >= w[1]) || grid[0] <= 0.5 || grid[grid.len() - 1] > 1.0 {
        return Err(Error::invalid("threshold grid must be strictly ascending within (0.5, 1]"));
    }
    if evidence.len() != model.len() {
        return Err(Error::DimensionMismatch {
            expected: model.len(),
            got: evidence.len(),
        });
    }
    let curve = grid
        .iter()
        .map(|&t| {
            let pred: Vec<ClassLabel> = evidence
                .iter()
                .zip(model)
                .map(|(ev, m)| decide(ev, *m, t).label())
                .collect();
            Ok((t, classification_metrics(&pred, gold, averaging)?.f1))
        })
        .collect::<Result<Vec<_>>>()?;
    let knee = elbow_index(&curve)?;
    Ok(ElbowSelection {
        threshold: grid[knee],
        curve,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ThresholdMode {
    With,
    Without,
}

impl FromStr for ThresholdMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "with" => Ok(ThresholdMode::With),
            "without" => Ok(ThresholdMode::Without),
            other => Err(Error::invalid(format!("unknown threshold mode {other:?}"))),
        }
    }
}

impl ThresholdMode {
    pub fn as_str(self) -> &'static str {
        match self {
            ThresholdMode::With => "with",
            ThresholdMode::Without => "without",
        }
    }
}

pub struct AblationSplit<'a> {
    pub name: &'a str,
    pub items: &'a [LabeledItem],
    pub model: &'a [ProbPair],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub ordering: String,
    pub mode: ThresholdMode,
    pub threshold: f64,
    pub split: String,
    pub f1: f64,
}

pub fn ordering_name(kinds: &[AttributeKind]) -> String {
    kinds.iter().map(|k| k.as_str()).collect::<Vec<_>>().join(">")
}

/// F1 per ordering x threshold mode x split. `threshold` is used for the
/// "with" mode; "without" uses [`NO_THRESHOLD`].
pub fn run_ablation(
    table: &AttributeStatsTable,
    splits: &[AblationSplit<'_>],
    orderings: &[Vec<AttributeKind>],
    modes: &[ThresholdMode],
    threshold: f64,
    averaging: Averaging,
) -> Result<Vec<AblationRow>> {
    let mut rows = Vec::new();
    for ordering in orderings {
        for &mode in modes {
            let t = match mode {
                ThresholdMode::With => threshold,
                ThresholdMode::Without => NO_THRESHOLD,
            };
            for split in splits {
                if split.items.len() != split.model.len() {
                    return Err(Error::DimensionMismatch {
                        expected: split.items.len(),
                        got: split.model.len(),
                    });
                }
                let mut pred = Vec::with_capacity(split.items.len());
                let mut gold = Vec::with_capacity(split.items.len());
                for (item, m) in split.items.iter().zip(split.model) {
                    let g = item
                        .label
                        .ok_or_else(|| Error::invalid(format!("item {} has no label", item.id)))?;
                    let ev = attribute_evidence(table, item, ordering);
                    pred.push(decide(&ev, *m, t).label());
                    gold.push(g);
                }
                rows.push(AblationRow {
                    ordering: ordering_name(ordering),
                    mode,
                    threshold: t,
                    split: split.name.to_string(),
                    f1: classification_metrics(&pred, &gold, averaging)?.f1,
                });
            }
        }
    }
    Ok(rows)
}

pub fn write_ablation(rows: &[AblationRow], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = crate::error::csv_writer(path)?;
    w.write_record(["ordering", "mode", "threshold", "split", "f1"])?;
    for r in rows {
        w.write_record([
            r.ordering.as_str(),
            r.mode.as_str(),
            &r.threshold.to_string(),
            r.split.as_str(),
            &r.f1.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pair(r: f64) -> ProbPair {
        ProbPair::from_real(r)
    }

    #[test]
    fn confident_domain_overrides_model() {
        let cfg = HeuristicConfig::default();
        let (label, trace) = apply_heuristic(
            "x",
            &[(ProbPair::NEUTRAL, false), (ProbPair::new(1.0, 0.0), true)],
            pair(0.2),
            &cfg,
        );
        assert_eq!(label, ClassLabel::Real);
        assert_eq!(trace.fired_branch.to_string(), "attr2-real");
    }

    #[test]
    fn neutral_attributes_fall_back() {
        let ev = [(ProbPair::NEUTRAL, true), (ProbPair::NEUTRAL, true)];
        assert_eq!(decide(&ev, pair(0.3), 0.88), Branch::Model(ClassLabel::Fake));
    }

    #[test]
    fn priority_changes_outcome() {
        let a = (pair(0.89), true);
        let b = (pair(0.05), true);
        assert_eq!(decide(&[a, b], pair(0.5), 0.88).label(), ClassLabel::Real);
        assert_eq!(decide(&[b, a], pair(0.5), 0.88).label(), ClassLabel::Fake);
    }

    #[test]
    fn disabled_uses_model_only() {
        let cfg = HeuristicConfig {
            enabled: false,
            ..HeuristicConfig::default()
        };
        let (label, _) = apply_heuristic("x", &[(pair(1.0), true)], pair(0.1), &cfg);
        assert_eq!(label, ClassLabel::Fake);
    }

    #[test]
    fn config_violations() {
        let bad = HeuristicConfig {
            threshold: 1.3,
            priority: vec![AttributeKind::Domain, AttributeKind::Domain],
            enabled: true,
        };
        assert_eq!(bad.violations().len(), 2);
        assert!(HeuristicConfig::default().violations().is_empty());
    }

    #[test]
    fn branch_names_round_trip() {
        for s in ["attr1-real", "attr2-fake", "attr3-real", "model-real", "model-fake"] {
            assert_eq!(s.parse::<Branch>().unwrap().to_string(), s);
        }
        assert!("attr0-real".parse::<Branch>().is_err());
    }

    #[test]
    fn elbow_examples() {
        let grid = default_grid();
        let flat: Vec<(f64, f64)> = grid.iter().map(|&t| (t, 0.8)).collect();
        assert_eq!(elbow_index(&flat).unwrap(), grid.len() - 1);
        // rises linearly to the knee at index 5, flat afterwards
        let knee: Vec<(f64, f64)> = (0..11)
            .map(|i| (0.5 + i as f64 * 0.05, if i <= 5 { 0.5 + 0.08 * i as f64 } else { 0.9 }))
            .collect();
        assert_eq!(elbow_index(&knee).unwrap(), 5);
        assert!(elbow_index(&knee[..2]).is_err());
        assert!(select_threshold_elbow(&[], &[], &[], &[0.6, 0.7], Averaging::Weighted).is_err());
    }

    #[test]
    fn elbow_selection_is_a_grid_point() {
        let ev: Vec<Vec<(ProbPair, bool)>> = (0..20).map(|i| vec![(pair(i as f64 / 20.0), true)]).collect();
        let model = vec![pair(0.4); 20];
        let gold: Vec<ClassLabel> = (0..20)
            .map(|i| if i >= 10 { ClassLabel::Real } else { ClassLabel::Fake })
            .collect();
        let grid = default_grid();
        let sel = select_threshold_elbow(&ev, &model, &gold, &grid, Averaging::Weighted).unwrap();
        assert!(grid.contains(&sel.threshold));
        assert_eq!(sel.curve.len(), grid.len());
    }

    fn evidence() -> impl Strategy<Value = (ProbPair, bool)> {
        (0.0f64..=1.0, any::<bool>()).prop_map(|(r, present)| (pair(r), present))
    }

    proptest! {
        #[test]
        fn cascade_exclusivity(
            ev in prop::collection::vec(evidence(), 0..4),
            m in 0.0f64..=1.0,
            t in 0.5f64..=1.0,
        ) {
            let b = decide(&ev, pair(m), t);
            let fires = |p: &ProbPair| {
                (p.p_real > t && p.p_real > p.p_fake) || (p.p_fake > t && p.p_real < p.p_fake)
            };
            match b {
                Branch::Attribute { rank, label } => {
                    let (p, present) = ev[rank - 1];
                    prop_assert!(present && fires(&p));
                    prop_assert_eq!(label, if p.p_real > p.p_fake { ClassLabel::Real } else { ClassLabel::Fake });
                    prop_assert!(ev[..rank - 1].iter().all(|(p, pr)| !pr || !fires(p)));
                }
                Branch::Model(_) => prop_assert!(ev.iter().all(|(p, pr)| !pr || !fires(p))),
            }
        }

        #[test]
        fn raising_threshold_never_adds_overrides(
            items in prop::collection::vec((prop::collection::vec(evidence(), 2), 0.0f64..=1.0), 1..30),
            t1 in 0.5f64..=1.0,
            dt in 0.0f64..=0.5,
        ) {
            let t2 = (t1 + dt).min(1.0);
            let count = |t: f64| items.iter().filter(|(ev, m)| decide(ev, pair(*m), t).is_override()).count();
            prop_assert!(count(t2) <= count(t1));
        }

        #[test]
        fn threshold_one_is_model_only(
            ev in prop::collection::vec(evidence(), 0..3),
            m in 0.0f64..=1.0,
        ) {
            prop_assert_eq!(decide(&ev, pair(m), 1.0), decide(&[], pair(m), 1.0));
        }
    }
}
