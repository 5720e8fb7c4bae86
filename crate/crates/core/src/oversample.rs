//! Minority oversampling in fusion-feature space: SMOTE and KMeans-SMOTE.
//!
//! Original samples are returned untouched and in order; synthetic samples
//! are appended. Each synthetic point is `x + u (x_nn - x)` with `x` a
//! minority sample, `x_nn` one of its `k` nearest minority neighbours and
//! `u ~ U[0, 1]`.

use std::str::FromStr;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kmeans::{kmeans, sq_dist, DEFAULT_MAX_ITER};
use crate::label::ClassLabel;
use crate::seed;
use crate::stat_features::FeatureTable;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OversampleMethod {
    Smote,
    KmeansSmote,
}

impl FromStr for OversampleMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "smote" => Ok(OversampleMethod::Smote),
            "kmeans-smote" => Ok(OversampleMethod::KmeansSmote),
            other => Err(Error::invalid(format!("unknown oversampling method {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OversampleConfig {
    pub method: OversampleMethod,
    pub k_neighbors: usize,
    pub clusters: usize,
    /// A cluster is used when `minority / (majority + 1)` reaches this.
    pub imbalance_threshold: f64,
    /// Exponent applied to the mean minority distance; defaults to the
    /// feature dimension.
    pub density_exponent: Option<f64>,
    pub seed: u64,
}

impl Default for OversampleConfig {
    fn default() -> Self {
        OversampleConfig {
            method: OversampleMethod::KmeansSmote,
            k_neighbors: 5,
            clusters: 8,
            imbalance_threshold: 1.0,
            density_exponent: None,
            seed: 0,
        }
    }
}

impl OversampleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k_neighbors == 0 {
            return Err(Error::invalid("k_neighbors must be at least 1"));
        }
        if self.clusters == 0 {
            return Err(Error::invalid("clusters must be at least 1"));
        }
        if !(self.imbalance_threshold >= 0.0) {
            return Err(Error::invalid("imbalance threshold must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Augmented {
    pub rows: Vec<Vec<f64>>,
    pub labels: Vec<ClassLabel>,
    /// Number of leading rows that are originals.
    pub n_original: usize,
}

impl Augmented {
    fn unchanged(rows: &[Vec<f64>], labels: &[ClassLabel]) -> Self {
        Augmented {
            rows: rows.to_vec(),
            labels: labels.to_vec(),
            n_original: rows.len(),
        }
    }

    pub fn synthetic(&self) -> &[Vec<f64>] {
        &self.rows[self.n_original..]
    }
}

struct Plan {
    minority: ClassLabel,
    minority_idx: Vec<usize>,
    needed: usize,
}

fn plan(rows: &[Vec<f64>], labels: &[ClassLabel], target_ratio: f64) -> Result<Option<Plan>> {
    if rows.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: rows.len(),
            got: labels.len(),
        });
    }
    if !(target_ratio > 0.0 && target_ratio <= 1.0) {
        return Err(Error::invalid("target ratio must be in (0, 1]"));
    }
    if let Some(r) = rows.iter().find(|r| r.len() != rows[0].len()) {
        return Err(Error::DimensionMismatch {
            expected: rows[0].len(),
            got: r.len(),
        });
    }
    let n_real = labels.iter().filter(|l| **l == ClassLabel::Real).count();
    let n_fake = labels.len() - n_real;
    let (minority, n_min, n_maj) = if n_fake < n_real {
        (ClassLabel::Fake, n_fake, n_real)
    } else {
        (ClassLabel::Real, n_real, n_fake)
    };
    let target = (target_ratio * n_maj as f64).round() as usize;
    if target <= n_min {
        return Ok(None);
    }
    let minority_idx = labels
        .iter()
        .enumerate()
        .filter(|(_, l)| **l == minority)
        .map(|(i, _)| i)
        .collect();
    Ok(Some(Plan {
        minority,
        minority_idx,
        needed: target - n_min,
    }))
}

/// Indices of the `k` nearest other points, ties broken by index.
fn neighbours(points: &[&[f64]], k: usize) -> Vec<Vec<usize>> {
    points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let mut d: Vec<(f64, usize)> = points
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(j, q)| (sq_dist(p, q), j))
                .collect();
            d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            d.into_iter().take(k).map(|(_, j)| j).collect()
        })
        .collect()
}

fn interpolate(points: &[&[f64]], n_new: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    if n_new == 0 {
        return Vec::new();
    }
    let nn = neighbours(points, k);
    (0..n_new)
        .map(|_| {
            let i = rng.gen_range(0..points.len());
            let j = nn[i][rng.gen_range(0..nn[i].len())];
            let u: f64 = rng.gen();
            points[i]
                .iter()
                .zip(points[j])
                .map(|(a, b)| a + u * (b - a))
                .collect()
        })
        .collect()
}

fn smote_rng(cfg: &OversampleConfig) -> ChaCha8Rng {
    seed::rng(seed::derive(cfg.seed, "smote"))
}

fn finish(rows: &[Vec<f64>], labels: &[ClassLabel], minority: ClassLabel, synth: Vec<Vec<f64>>) -> Augmented {
    let mut out = Augmented::unchanged(rows, labels);
    out.labels.extend(std::iter::repeat_n(minority, synth.len()));
    out.rows.extend(synth);
    out
}

/// Plain SMOTE up to `minority / majority == target_ratio` (within one sample).
pub fn smote(
    rows: &[Vec<f64>],
    labels: &[ClassLabel],
    target_ratio: f64,
    cfg: &OversampleConfig,
) -> Result<Augmented> {
    cfg.validate()?;
    let Some(plan) = plan(rows, labels, target_ratio)? else {
        return Ok(Augmented::unchanged(rows, labels));
    };
    if plan.minority_idx.len() < cfg.k_neighbors + 1 {
        return Err(Error::MinorityTooSmall {
            needed: cfg.k_neighbors + 1,
            got: plan.minority_idx.len(),
        });
    }
    let points: Vec<&[f64]> = plan.minority_idx.iter().map(|&i| rows[i].as_slice()).collect();
    let synth = interpolate(&points, plan.needed, cfg.k_neighbors, &mut smote_rng(cfg));
    Ok(finish(rows, labels, plan.minority, synth))
}

fn mean_pairwise_distance(points: &[&[f64]]) -> f64 {
    let mut total = 0.0;
    let mut n = 0usize;
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            total += sq_dist(points[i], points[j]).sqrt();
            n += 1;
        }
    }
    if n == 0 {
        0.0
    } else {
        total / n as f64
    }
}

/// Split `total` proportionally to `weights` by largest remainder.
fn allocate(total: usize, weights: &[f64]) -> Vec<usize> {
    let sum: f64 = weights.iter().sum();
    let shares: Vec<f64> = if sum > 0.0 && sum.is_finite() {
        weights.iter().map(|w| w / sum * total as f64).collect()
    } else {
        vec![total as f64 / weights.len() as f64; weights.len()]
    };
    let mut quotas: Vec<usize> = shares.iter().map(|s| s.floor() as usize).collect();
    let mut rest = total - quotas.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = shares[a] - shares[a].floor();
        let fb = shares[b] - shares[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for i in order {
        if rest == 0 {
            break;
        }
        quotas[i] += 1;
        rest -= 1;
    }
    quotas
}

/// KMeans-SMOTE: cluster all samples, keep clusters dominated by the
/// minority, share the synthetic budget by cluster sparsity and interpolate
/// within each kept cluster. Falls back to plain SMOTE when no cluster
/// qualifies.
pub fn kmeans_smote(
    rows: &[Vec<f64>],
    labels: &[ClassLabel],
    target_ratio: f64,
    cfg: &OversampleConfig,
) -> Result<Augmented> {
    cfg.validate()?;
    let Some(plan) = plan(rows, labels, target_ratio)? else {
        return Ok(Augmented::unchanged(rows, labels));
    };
    if plan.minority_idx.len() < cfg.k_neighbors + 1 {
        return Err(Error::MinorityTooSmall {
            needed: cfg.k_neighbors + 1,
            got: plan.minority_idx.len(),
        });
    }
    let km = kmeans(rows, cfg.clusters, DEFAULT_MAX_ITER, seed::derive(cfg.seed, "kmeans"));
    let n_clusters = km.centroids.len();
    let exponent = cfg.density_exponent.unwrap_or(rows[0].len() as f64);

    let mut members: Vec<Vec<usize>> = vec![Vec::new(); n_clusters];
    let mut majority = vec![0usize; n_clusters];
    for (i, &c) in km.assignments.iter().enumerate() {
        if labels[i] == plan.minority {
            members[c].push(i);
        } else {
            majority[c] += 1;
        }
    }
    let kept: Vec<usize> = (0..n_clusters)
        .filter(|&c| {
            members[c].len() >= 2
                && members[c].len() as f64 / (majority[c] as f64 + 1.0) >= cfg.imbalance_threshold
        })
        .collect();
    if kept.is_empty() {
        log::warn!("no cluster passed the imbalance filter; falling back to plain smote");
        return smote(rows, labels, target_ratio, cfg);
    }

    let weights: Vec<f64> = kept
        .iter()
        .map(|&c| {
            let pts: Vec<&[f64]> = members[c].iter().map(|&i| rows[i].as_slice()).collect();
            mean_pairwise_distance(&pts).powf(exponent)
        })
        .collect();
    let quotas = allocate(plan.needed, &weights);

    let mut rng = smote_rng(cfg);
    let mut synth = Vec::with_capacity(plan.needed);
    for (&c, &q) in kept.iter().zip(&quotas) {
        let pts: Vec<&[f64]> = members[c].iter().map(|&i| rows[i].as_slice()).collect();
        let k = cfg.k_neighbors.min(pts.len() - 1);
        synth.extend(interpolate(&pts, q, k, &mut rng));
    }
    Ok(finish(rows, labels, plan.minority, synth))
}

pub fn oversample(
    rows: &[Vec<f64>],
    labels: &[ClassLabel],
    target_ratio: f64,
    cfg: &OversampleConfig,
) -> Result<Augmented> {
    match cfg.method {
        OversampleMethod::Smote => smote(rows, labels, target_ratio, cfg),
        OversampleMethod::KmeansSmote => kmeans_smote(rows, labels, target_ratio, cfg),
    }
}

/// Oversample a labeled feature table; synthetic rows get ids `synthetic-NNNNNN`.
pub fn oversample_table(t: &FeatureTable, target_ratio: f64, cfg: &OversampleConfig) -> Result<FeatureTable> {
    let labels = t.labeled()?;
    let aug = oversample(&t.rows, &labels, target_ratio, cfg)?;
    let mut ids = t.ids.clone();
    ids.extend((0..aug.rows.len() - aug.n_original).map(|i| format!("synthetic-{i:06}")));
    Ok(FeatureTable {
        columns: t.columns.clone(),
        ids,
        labels: aug.labels.into_iter().map(Some).collect(),
        rows: aug.rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(method: OversampleMethod) -> OversampleConfig {
        OversampleConfig {
            method,
            k_neighbors: 1,
            clusters: 2,
            seed: 3,
            ..OversampleConfig::default()
        }
    }

    fn on_segment(p: &[f64], a: &[f64], b: &[f64]) -> bool {
        let u = (p[0] - a[0]) / (b[0] - a[0]);
        (0.0..=1.0).contains(&u) && p.iter().zip(a).zip(b).all(|((x, a), b)| (a + u * (b - a) - x).abs() < 1e-9)
    }

    #[test]
    fn two_point_minority_stays_on_segment() {
        let a = vec![0.0, 0.0];
        let b = vec![1.0, 2.0];
        let mut rows = vec![a.clone(), b.clone()];
        let mut labels = vec![ClassLabel::Fake; 2];
        for i in 0..6 {
            rows.push(vec![5.0 + i as f64, 5.0]);
            labels.push(ClassLabel::Real);
        }
        let out = smote(&rows, &labels, 1.0, &cfg(OversampleMethod::Smote)).unwrap();
        assert_eq!(out.synthetic().len(), 4);
        for s in out.synthetic() {
            assert!(on_segment(s, &a, &b), "{s:?}");
        }
        assert_eq!(&out.rows[..rows.len()], rows.as_slice());
        assert!(out.labels[rows.len()..].iter().all(|l| *l == ClassLabel::Fake));
    }

    #[test]
    fn balanced_input_is_untouched() {
        let rows = vec![vec![0.0], vec![1.0], vec![2.0], vec![3.0]];
        let labels = vec![ClassLabel::Real, ClassLabel::Fake, ClassLabel::Real, ClassLabel::Fake];
        for m in [OversampleMethod::Smote, OversampleMethod::KmeansSmote] {
            let out = oversample(&rows, &labels, 1.0, &cfg(m)).unwrap();
            assert_eq!(out.rows, rows);
            assert_eq!(out.labels, labels);
        }
    }

    #[test]
    fn tiny_minority_is_an_error() {
        let rows = vec![vec![0.0], vec![1.0], vec![2.0], vec![3.0]];
        let labels = vec![ClassLabel::Real, ClassLabel::Real, ClassLabel::Real, ClassLabel::Fake];
        assert!(matches!(
            smote(&rows, &labels, 1.0, &cfg(OversampleMethod::Smote)),
            Err(Error::MinorityTooSmall { needed: 2, got: 1 })
        ));
    }

    #[test]
    fn allocation_is_exact() {
        assert_eq!(allocate(10, &[1.0, 1.0, 1.0]), vec![4, 3, 3]);
        assert_eq!(allocate(7, &[0.0, 0.0]), vec![4, 3]);
        assert_eq!(allocate(5, &[3.0, 1.0]).iter().sum::<usize>(), 5);
    }
}
