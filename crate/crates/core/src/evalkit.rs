//! Classification metrics, NLL / Brier scoring, McNemar tests and reports.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};
use crate::label::{ClassLabel, ProbPair};

pub const PROB_CLIP: f64 = 1e-15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Averaging {
    Weighted,
    Macro,
    Micro,
}

impl FromStr for Averaging {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "weighted" => Ok(Averaging::Weighted),
            "macro" => Ok(Averaging::Macro),
            "micro" => Ok(Averaging::Micro),
            other => Err(Error::invalid(format!("unknown averaging {other:?}"))),
        }
    }
}

impl Averaging {
    pub fn as_str(self) -> &'static str {
        match self {
            Averaging::Weighted => "weighted",
            Averaging::Macro => "macro",
            Averaging::Micro => "micro",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub label: ClassLabel,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub averaging: Averaging,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub nll: Option<f64>,
    pub brier: Option<f64>,
    pub n_items: usize,
    pub per_class: Vec<ClassMetrics>,
}

impl MetricsReport {
    /// Attach NLL and Brier scores computed from `probs`.
    pub fn with_scores(mut self, probs: &[ProbPair], gold: &[ClassLabel]) -> Result<Self> {
        check_lengths(probs.len(), gold.len())?;
        self.nll = Some(nll(probs, gold));
        self.brier = Some(brier(probs, gold));
        Ok(self)
    }
}

fn check_lengths(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::DimensionMismatch { expected: a, got: b });
    }
    if a == 0 {
        return Err(Error::invalid("metrics need at least one item"));
    }
    Ok(())
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn harmonic(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

pub fn classification_metrics(pred: &[ClassLabel], gold: &[ClassLabel], averaging: Averaging) -> Result<MetricsReport> {
    check_lengths(pred.len(), gold.len())?;
    let n = gold.len();
    let correct = pred.iter().zip(gold).filter(|(p, g)| p == g).count();
    let accuracy = ratio(correct, n);

    let per_class: Vec<ClassMetrics> = ClassLabel::ALL
        .iter()
        .map(|&c| {
            let tp = pred.iter().zip(gold).filter(|(p, g)| **p == c && **g == c).count();
            let predicted = pred.iter().filter(|p| **p == c).count();
            let support = gold.iter().filter(|g| **g == c).count();
            if predicted == 0 && support > 0 {
                log::warn!("precision undefined for class {c}; using 0");
            }
            let precision = ratio(tp, predicted);
            let recall = ratio(tp, support);
            ClassMetrics {
                label: c,
                precision,
                recall,
                f1: harmonic(precision, recall),
                support,
            }
        })
        .collect();

    let (precision, recall, f1) = match averaging {
        Averaging::Micro => (accuracy, accuracy, accuracy),
        Averaging::Macro => {
            let k = per_class.len() as f64;
            (
                per_class.iter().map(|c| c.precision).sum::<f64>() / k,
                per_class.iter().map(|c| c.recall).sum::<f64>() / k,
                per_class.iter().map(|c| c.f1).sum::<f64>() / k,
            )
        }
        Averaging::Weighted => {
            let w = |f: fn(&ClassMetrics) -> f64| {
                per_class.iter().map(|c| f(c) * c.support as f64).sum::<f64>() / n as f64
            };
            // support-weighted recall reduces to correct / n
            (w(|c| c.precision), accuracy, w(|c| c.f1))
        }
    };

    Ok(MetricsReport {
        averaging,
        accuracy,
        precision,
        recall,
        f1,
        nll: None,
        brier: None,
        n_items: n,
        per_class,
    })
}

fn target(g: ClassLabel) -> f64 {
    match g {
        ClassLabel::Fake => 1.0,
        ClassLabel::Real => 0.0,
    }
}

/// Mean binary cross-entropy on the fake-class probability, clipped to
/// `[PROB_CLIP, 1 - PROB_CLIP]`.
pub fn nll(probs: &[ProbPair], gold: &[ClassLabel]) -> f64 {
    let total: f64 = probs
        .iter()
        .zip(gold)
        .map(|(p, g)| {
            let q = p.p_fake.clamp(PROB_CLIP, 1.0 - PROB_CLIP);
            let y = target(*g);
            -(y * q.ln() + (1.0 - y) * (1.0 - q).ln())
        })
        .sum();
    total / probs.len() as f64
}

/// Mean squared error of the fake-class probability against the 0/1 outcome.
pub fn brier(probs: &[ProbPair], gold: &[ClassLabel]) -> f64 {
    let total: f64 = probs
        .iter()
        .zip(gold)
        .map(|(p, g)| (p.p_fake - target(*g)).powi(2))
        .sum();
    total / probs.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum McNemarMode {
    Exact,
    Chi2,
}

impl FromStr for McNemarMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(McNemarMode::Exact),
            "chi2" | "chi2-corrected" => Ok(McNemarMode::Chi2),
            other => Err(Error::invalid(format!("unknown mcnemar mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McNemarResult {
    pub mode: McNemarMode,
    /// A right, B wrong.
    pub b: usize,
    /// A wrong, B right.
    pub c: usize,
    pub statistic: f64,
    pub p_value: f64,
    pub alpha: f64,
    pub reject: bool,
    pub degenerate: bool,
}

/// `P(X <= k)` for `X ~ Binomial(n, 1/2)`, summed in log space.
pub fn binomial_half_cdf(k: usize, n: usize) -> f64 {
    let half_n = n as f64 * std::f64::consts::LN_2;
    let mut log_c = 0.0;
    let mut total = 0.0;
    for i in 0..=k.min(n) {
        total += (log_c - half_n).exp();
        log_c += ((n - i) as f64).ln() - ((i + 1) as f64).ln();
    }
    total.min(1.0)
}

pub fn mcnemar_from_counts(b: usize, c: usize, alpha: f64, mode: McNemarMode) -> McNemarResult {
    let n = b + c;
    let (statistic, p_value) = if n == 0 {
        (0.0, 1.0)
    } else {
        match mode {
            McNemarMode::Exact => {
                let m = b.min(c);
                (m as f64, (2.0 * binomial_half_cdf(m, n)).min(1.0))
            }
            McNemarMode::Chi2 => {
                let d = (b as f64 - c as f64).abs() - 1.0;
                let stat = d.max(0.0).powi(2) / n as f64;
                let chi = ChiSquared::new(1.0).expect("one degree of freedom");
                (stat, chi.sf(stat).clamp(0.0, 1.0))
            }
        }
    };
    McNemarResult {
        mode,
        b,
        c,
        statistic,
        p_value,
        alpha,
        reject: n > 0 && p_value < alpha,
        degenerate: n == 0,
    }
}

pub fn mcnemar(
    pred_a: &[ClassLabel],
    pred_b: &[ClassLabel],
    gold: &[ClassLabel],
    alpha: f64,
    mode: McNemarMode,
) -> Result<McNemarResult> {
    check_lengths(pred_a.len(), gold.len())?;
    check_lengths(pred_b.len(), gold.len())?;
    let mut b = 0;
    let mut c = 0;
    for ((a, x), g) in pred_a.iter().zip(pred_b).zip(gold) {
        match (a == g, x == g) {
            (true, false) => b += 1,
            (false, true) => c += 1,
            _ => {}
        }
    }
    Ok(mcnemar_from_counts(b, c, alpha, mode))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Text,
    Json,
    Csv,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "text" => Ok(ReportFormat::Text),
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            other => Err(Error::invalid(format!("unknown report format {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitReport {
    pub split: String,
    pub metrics: MetricsReport,
}

fn metric_rows(m: &MetricsReport) -> Vec<(String, f64)> {
    let mut rows = vec![
        ("accuracy".to_string(), m.accuracy),
        ("precision".to_string(), m.precision),
        ("recall".to_string(), m.recall),
        ("f1".to_string(), m.f1),
    ];
    if let Some(v) = m.nll {
        rows.push(("nll".into(), v));
    }
    if let Some(v) = m.brier {
        rows.push(("brier".into(), v));
    }
    rows.push(("n_items".into(), m.n_items as f64));
    for c in &m.per_class {
        rows.push((format!("precision_{}", c.label), c.precision));
        rows.push((format!("recall_{}", c.label), c.recall));
        rows.push((format!("f1_{}", c.label), c.f1));
        rows.push((format!("support_{}", c.label), c.support as f64));
    }
    rows
}

pub fn render_report(reports: &[SplitReport], format: ReportFormat) -> Result<String> {
    Ok(match format {
        ReportFormat::Json => serde_json::to_string_pretty(reports)? + "\n",
        ReportFormat::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(["split", "metric", "value"])?;
            for r in reports {
                for (name, v) in metric_rows(&r.metrics) {
                    w.write_record([r.split.as_str(), name.as_str(), &v.to_string()])?;
                }
            }
            String::from_utf8(w.into_inner().map_err(|e| Error::invalid(e.to_string()))?)
                .expect("csv output is utf-8")
        }
        ReportFormat::Text => {
            let mut s = String::new();
            for r in reports {
                let _ = writeln!(s, "[{}] averaging={}", r.split, r.metrics.averaging.as_str());
                for (name, v) in metric_rows(&r.metrics) {
                    let _ = writeln!(s, "  {name:<14} {v:.4}");
                }
            }
            s
        }
    })
}

pub fn emit_report(reports: &[SplitReport], format: ReportFormat, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, render_report(reports, format)?).map_err(|e| Error::io(path, e))
}

pub fn read_report_json(path: impl AsRef<Path>) -> Result<Vec<SplitReport>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledPrediction {
    pub item_id: String,
    pub label: ClassLabel,
    pub probs: Option<ProbPair>,
}

/// Read predicted labels from a CSV with `item_id` and `label` columns
/// (optionally `p_real,p_fake`), or from JSONL records carrying `item_id`
/// and `label`.
pub fn read_label_file(path: impl AsRef<Path>) -> Result<Vec<LabeledPrediction>> {
    let path = path.as_ref();
    if path.extension().is_some_and(|e| e == "jsonl") {
        #[derive(Deserialize)]
        struct Line {
            item_id: String,
            label: ClassLabel,
        }
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        return text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| {
                let x: Line = serde_json::from_str(l)?;
                Ok(LabeledPrediction {
                    item_id: x.item_id,
                    label: x.label,
                    probs: None,
                })
            })
            .collect();
    }
    let mut rdr = crate::error::csv_reader(path)?;
    let headers = rdr.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let id_col = col("item_id").ok_or_else(|| Error::invalid("prediction file lacks item_id"))?;
    let label_col = col("label").ok_or_else(|| Error::invalid("prediction file lacks label"))?;
    let prob_cols = col("p_real").zip(col("p_fake"));
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let num = |i: usize| {
            rec[i]
                .parse::<f64>()
                .map_err(|_| Error::invalid(format!("bad probability {:?}", &rec[i])))
        };
        out.push(LabeledPrediction {
            item_id: rec[id_col].to_string(),
            label: rec[label_col].parse()?,
            probs: match prob_cols {
                Some((r, f)) => Some(ProbPair::new(num(r)?, num(f)?)),
                None => None,
            },
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use ClassLabel::{Fake as F, Real as R};

    #[test]
    fn hand_confusion_matrix() {
        let m = classification_metrics(&[R, F, F, F], &[R, R, F, F], Averaging::Weighted).unwrap();
        assert_eq!(m.accuracy, 0.75);
        // real: p=1, r=0.5, f1=2/3; fake: p=2/3, r=1, f1=0.8
        assert!((m.f1 - (2.0 / 3.0 + 0.8) / 2.0).abs() < 1e-15);
        assert!((m.precision - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-15);
        assert_eq!(m.recall, m.accuracy);
        let macro_ = classification_metrics(&[R, F, F, F], &[R, R, F, F], Averaging::Macro).unwrap();
        assert!((macro_.recall - 0.75).abs() < 1e-15);
    }

    #[test]
    fn single_class_gold() {
        let m = classification_metrics(&[R, R], &[R, R], Averaging::Weighted).unwrap();
        assert_eq!(m.accuracy, 1.0);
        assert_eq!(m.f1, 1.0);
        assert_eq!(m.per_class[1].precision, 0.0);
    }

    #[test]
    fn length_errors() {
        assert!(classification_metrics(&[R], &[R, F], Averaging::Weighted).is_err());
        assert!(classification_metrics(&[], &[], Averaging::Weighted).is_err());
    }

    #[test]
    fn nll_and_brier_examples() {
        let half = [ProbPair::new(0.5, 0.5); 3];
        assert!((nll(&half, &[R, F, F]) - std::f64::consts::LN_2).abs() < 1e-12);
        assert_eq!(brier(&half, &[R, F, F]), 0.25);
        let p = [ProbPair::new(0.1, 0.9), ProbPair::new(0.8, 0.2)];
        let expected = -(0.9f64.ln() + 0.8f64.ln()) / 2.0;
        assert!((nll(&p, &[F, R]) - expected).abs() < 1e-12);
        assert!((nll(&p, &[F, R]) - 0.1643).abs() < 1e-4);
        assert!((brier(&p, &[F, R]) - 0.025).abs() < 1e-12);
        let perfect = [ProbPair::new(0.0, 1.0)];
        assert_eq!(nll(&perfect, &[F]), -(1.0 - PROB_CLIP).ln());
    }

    fn oracle_p(b: usize, c: usize) -> f64 {
        let n = b + c;
        let m = b.min(c);
        let mut choose: u128 = 1;
        let mut tail: u128 = 0;
        for i in 0..=m {
            tail += choose;
            choose = choose * (n - i) as u128 / (i + 1) as u128;
        }
        (2.0 * tail as f64 / 2f64.powi(n as i32)).min(1.0)
    }

    #[test]
    fn exact_mcnemar_matches_integer_binomial() {
        for n in 1..=60usize {
            for b in 0..=n {
                let r = mcnemar_from_counts(b, n - b, 0.05, McNemarMode::Exact);
                assert!((r.p_value - oracle_p(b, n - b)).abs() < 1e-12, "b={b} n={n}");
            }
        }
    }

    #[test]
    fn mcnemar_examples() {
        for b in 0..=5 {
            let r = mcnemar_from_counts(b, b, 0.05, McNemarMode::Exact);
            assert!(!r.reject);
        }
        let r = mcnemar_from_counts(59, 0, 0.05, McNemarMode::Exact);
        assert_eq!(r.statistic, 0.0);
        assert!((r.p_value - 2.0 * 0.5f64.powi(59)).abs() < 1e-30);
        assert!(r.reject);
        let chi = mcnemar_from_counts(10, 2, 0.05, McNemarMode::Chi2);
        assert!((chi.statistic - 49.0 / 12.0).abs() < 1e-12);
        let d = mcnemar(&[R, F], &[R, F], &[R, R], 0.05, McNemarMode::Chi2).unwrap();
        assert!(d.degenerate && d.p_value == 1.0 && !d.reject);
    }

    #[test]
    fn report_formats() {
        let m = classification_metrics(&[R, F, F], &[R, R, F], Averaging::Weighted)
            .unwrap()
            .with_scores(&[ProbPair::new(0.7, 0.3); 3], &[R, R, F])
            .unwrap();
        let reports = vec![SplitReport { split: "test".into(), metrics: m }];
        let dir = tempfile::tempdir().unwrap();
        let json = dir.path().join("r.json");
        emit_report(&reports, ReportFormat::Json, &json).unwrap();
        assert_eq!(read_report_json(&json).unwrap(), reports);
        let csv = render_report(&reports, ReportFormat::Csv).unwrap();
        assert!(csv.starts_with("split,metric,value\n"));
        assert_eq!(csv, render_report(&reports, ReportFormat::Csv).unwrap());
    }

    fn label() -> impl Strategy<Value = ClassLabel> {
        prop_oneof![Just(R), Just(F)]
    }

    proptest! {
        #[test]
        fn weighted_recall_is_accuracy(pairs in prop::collection::vec((label(), label()), 1..60)) {
            let (p, g): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
            let m = classification_metrics(&p, &g, Averaging::Weighted).unwrap();
            prop_assert_eq!(m.recall, m.accuracy);
            for v in [m.accuracy, m.precision, m.f1] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
        }

        #[test]
        fn scores_bounded_and_permutation_invariant(
            rows in prop::collection::vec((0.0f64..=1.0, label()), 1..40),
            rot in 0usize..40,
        ) {
            let probs: Vec<ProbPair> = rows.iter().map(|(q, _)| ProbPair::from_real(1.0 - q)).collect();
            let gold: Vec<ClassLabel> = rows.iter().map(|(_, g)| *g).collect();
            let b = brier(&probs, &gold);
            let l = nll(&probs, &gold);
            prop_assert!((0.0..=1.0).contains(&b));
            prop_assert!(l.is_finite() && l >= 0.0);
            let k = rot % probs.len();
            let mut p2 = probs.clone();
            let mut g2 = gold.clone();
            p2.rotate_left(k);
            g2.rotate_left(k);
            prop_assert!((brier(&p2, &g2) - b).abs() < 1e-12);
            prop_assert!((nll(&p2, &g2) - l).abs() < 1e-12);
            let m1 = classification_metrics(&gold, &gold, Averaging::Macro).unwrap();
            let m2 = classification_metrics(&g2, &g2, Averaging::Macro).unwrap();
            prop_assert_eq!(m1.f1, m2.f1);
        }
    }
}
