//! Stand-in backbone classifier and the prediction-vector file format.
//!
//! External backbones hand their outputs to the pipeline through
//! `predictions.csv`, a long-format table with one row per item and model:
//!
//! ```text
//! item_id,model_name,p_real,p_fake
//! t1,roberta,0.91,0.09
//! ```

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Dataset, LabeledItem};
use crate::error::{Error, Result};
use crate::label::{ClassLabel, ProbPair, SUM_TOLERANCE};
use crate::seed;

/// Rows whose probabilities miss 1 by more than this are rejected on read.
pub const READ_SUM_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionVector {
    pub item_id: String,
    pub model_name: String,
    pub probs: ProbPair,
}

/// Per-item probability pairs for an ordered set of models.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionMatrix {
    model_names: Vec<String>,
    item_ids: Vec<String>,
    rows: Vec<Vec<ProbPair>>,
    index: HashMap<String, usize>,
}

impl PredictionMatrix {
    pub fn new(
        model_names: Vec<String>,
        item_ids: Vec<String>,
        rows: Vec<Vec<ProbPair>>,
    ) -> Result<Self> {
        if item_ids.len() != rows.len() {
            return Err(Error::DimensionMismatch {
                expected: item_ids.len(),
                got: rows.len(),
            });
        }
        for (id, row) in item_ids.iter().zip(&rows) {
            if row.len() != model_names.len() {
                let model = model_names
                    .get(row.len())
                    .cloned()
                    .unwrap_or_else(|| "<extra>".into());
                return Err(Error::MissingModel {
                    item: id.clone(),
                    model,
                });
            }
        }
        let mut index = HashMap::with_capacity(item_ids.len());
        for (i, id) in item_ids.iter().enumerate() {
            if index.insert(id.clone(), i).is_some() {
                return Err(Error::invalid(format!("duplicate item {id:?} in predictions")));
            }
        }
        Ok(PredictionMatrix {
            model_names,
            item_ids,
            rows,
            index,
        })
    }

    /// Single-model matrix.
    pub fn single(model_name: &str, item_ids: Vec<String>, probs: Vec<ProbPair>) -> Result<Self> {
        let rows = probs.into_iter().map(|p| vec![p]).collect();
        PredictionMatrix::new(vec![model_name.to_string()], item_ids, rows)
    }

    pub fn model_names(&self) -> &[String] {
        &self.model_names
    }

    pub fn n_models(&self) -> usize {
        self.model_names.len()
    }

    pub fn item_ids(&self) -> &[String] {
        &self.item_ids
    }

    pub fn len(&self) -> usize {
        self.item_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.item_ids.is_empty()
    }

    pub fn row(&self, i: usize) -> &[ProbPair] {
        &self.rows[i]
    }

    pub fn rows(&self) -> &[Vec<ProbPair>] {
        &self.rows
    }

    pub fn get(&self, item_id: &str) -> Option<&[ProbPair]> {
        self.index.get(item_id).map(|&i| self.rows[i].as_slice())
    }

    /// Column-wise concatenation of matrices covering the same items.
    pub fn hstack(parts: &[PredictionMatrix]) -> Result<Self> {
        let first = parts.first().ok_or(Error::EmptyModelSet)?;
        let mut names = Vec::new();
        for p in parts {
            names.extend(p.model_names.iter().cloned());
        }
        let mut rows = Vec::with_capacity(first.len());
        for id in &first.item_ids {
            let mut row = Vec::with_capacity(names.len());
            for p in parts {
                let r = p.get(id).ok_or_else(|| Error::MissingModel {
                    item: id.clone(),
                    model: p.model_names.join("+"),
                })?;
                row.extend_from_slice(r);
            }
            rows.push(row);
        }
        PredictionMatrix::new(names, first.item_ids.clone(), rows)
    }

    /// Long-format prediction vectors in item-major order.
    pub fn vectors(&self) -> impl Iterator<Item = PredictionVector> + '_ {
        self.item_ids.iter().zip(&self.rows).flat_map(move |(id, row)| {
            self.model_names
                .iter()
                .zip(row)
                .map(move |(m, p)| PredictionVector {
                    item_id: id.clone(),
                    model_name: m.clone(),
                    probs: *p,
                })
        })
    }
}

/// Format a probability with 9 significant digits, shortest decimal form.
pub fn format_prob(x: f64) -> String {
    let rounded: f64 = format!("{x:.8e}").parse().expect("formatted float parses");
    format!("{rounded}")
}

#[derive(Debug, Serialize, Deserialize)]
struct PredictionRow {
    item_id: String,
    model_name: String,
    p_real: String,
    p_fake: String,
}

pub fn write_predictions(m: &PredictionMatrix, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = crate::error::csv_writer(path)?;
    for v in m.vectors() {
        w.serialize(PredictionRow {
            item_id: v.item_id,
            model_name: v.model_name,
            p_real: format_prob(v.probs.p_real),
            p_fake: format_prob(v.probs.p_fake),
        })?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_predictions(path: impl AsRef<Path>) -> Result<PredictionMatrix> {
    let path = path.as_ref();
    let rdr = crate::error::csv_reader(path)?;
    parse_predictions(rdr)
}

pub fn parse_predictions<R: std::io::Read>(mut rdr: csv::Reader<R>) -> Result<PredictionMatrix> {
    let headers = rdr.headers()?.clone();
    let expected = ["item_id", "model_name", "p_real", "p_fake"];
    if headers.iter().collect::<Vec<_>>() != expected {
        return Err(Error::invalid(format!(
            "predictions header must be {}",
            expected.join(",")
        )));
    }

    let mut models: Vec<String> = Vec::new();
    let mut model_pos: HashMap<String, usize> = HashMap::new();
    let mut items: Vec<String> = Vec::new();
    let mut cells: Vec<BTreeMap<usize, ProbPair>> = Vec::new();
    let mut item_pos: HashMap<String, usize> = HashMap::new();

    for (lineno, rec) in rdr.deserialize::<PredictionRow>().enumerate() {
        let rec = rec?;
        let row_name = format!("line {} ({},{})", lineno + 2, rec.item_id, rec.model_name);
        let parse = |s: &str| -> Result<f64> {
            s.trim()
                .parse::<f64>()
                .map_err(|_| Error::invalid(format!("{row_name}: bad probability {s:?}")))
        };
        let p = ProbPair::new(parse(&rec.p_real)?, parse(&rec.p_fake)?);
        if !(0.0..=1.0).contains(&p.p_real) || !(0.0..=1.0).contains(&p.p_fake) {
            return Err(Error::invalid(format!("{row_name}: probability outside [0,1]")));
        }
        if (p.sum() - 1.0).abs() > READ_SUM_TOLERANCE {
            return Err(Error::ProbabilitySum {
                row: row_name,
                sum: p.sum(),
            });
        }
        let mi = *model_pos.entry(rec.model_name.clone()).or_insert_with(|| {
            models.push(rec.model_name.clone());
            models.len() - 1
        });
        let ii = *item_pos.entry(rec.item_id.clone()).or_insert_with(|| {
            items.push(rec.item_id.clone());
            cells.push(BTreeMap::new());
            items.len() - 1
        });
        if cells[ii].insert(mi, p).is_some() {
            return Err(Error::invalid(format!("{row_name}: duplicate row")));
        }
    }

    let mut rows = Vec::with_capacity(items.len());
    for (id, c) in items.iter().zip(cells) {
        if c.len() != models.len() {
            let missing = (0..models.len()).find(|m| !c.contains_key(m)).unwrap();
            return Err(Error::MissingModel {
                item: id.clone(),
                model: models[missing].clone(),
            });
        }
        rows.push(c.into_values().collect());
    }
    PredictionMatrix::new(models, items, rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BowConfig {
    pub min_token_freq: usize,
    pub l2: f64,
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
    /// Train on a bootstrap resample drawn with `seed`.
    pub bootstrap: bool,
}

impl Default for BowConfig {
    fn default() -> Self {
        BowConfig {
            min_token_freq: 2,
            l2: 1e-3,
            epochs: 200,
            lr: 1.0,
            seed: 0,
            bootstrap: false,
        }
    }
}

/// Logistic regression over sublinear unigram counts; `p_fake = σ(w·x + b)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BowModel {
    pub name: String,
    pub vocabulary: BTreeMap<String, usize>,
    pub weights: Vec<f64>,
    pub bias: f64,
}

pub fn tokenize(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

type SparseRow = Vec<(usize, f64)>;

impl BowModel {
    /// Sparse, L2-normalized `1 + ln(count)` features; OOV tokens dropped.
    fn featurize(&self, text: &str) -> SparseRow {
        let mut counts: BTreeMap<usize, u32> = BTreeMap::new();
        for t in tokenize(text) {
            if let Some(&i) = self.vocabulary.get(&t) {
                *counts.entry(i).or_default() += 1;
            }
        }
        let mut row: SparseRow = counts
            .into_iter()
            .map(|(i, c)| (i, 1.0 + (c as f64).ln()))
            .collect();
        let norm = row.iter().map(|(_, v)| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            for (_, v) in &mut row {
                *v /= norm;
            }
        }
        row
    }

    fn logit(&self, row: &SparseRow) -> f64 {
        self.bias + row.iter().map(|(i, v)| self.weights[*i] * v).sum::<f64>()
    }

    pub fn predict_text(&self, text: &str) -> ProbPair {
        let p_fake = sigmoid(self.logit(&self.featurize(text)));
        ProbPair::new(1.0 - p_fake, p_fake)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, serde_json::to_string(self)?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: BowModel = serde_json::from_str(&text)?;
        if m.weights.len() != m.vocabulary.len() || m.vocabulary.values().any(|&i| i >= m.weights.len()) {
            return Err(Error::invalid(format!("{}: vocabulary and weights disagree", path.display())));
        }
        Ok(m)
    }
}

fn objective(model: &BowModel, rows: &[SparseRow], ys: &[f64], l2: f64) -> f64 {
    let n = rows.len() as f64;
    let ce: f64 = rows
        .iter()
        .zip(ys)
        .map(|(r, y)| {
            let z = model.logit(r);
            // log(1 + e^z) - y z, stable
            let softplus = if z > 0.0 {
                z + (-z).exp().ln_1p()
            } else {
                z.exp().ln_1p()
            };
            softplus - y * z
        })
        .sum::<f64>()
        / n;
    ce + 0.5 * l2 * model.weights.iter().map(|w| w * w).sum::<f64>()
}

/// Train and also return the objective before each epoch plus the final value.
pub fn fit_bow(
    name: &str,
    train: &Dataset,
    cfg: &BowConfig,
) -> Result<(BowModel, Vec<f64>)> {
    if train.len() < 2 {
        return Err(Error::DatasetTooSmall {
            needed: 2,
            got: train.len(),
        });
    }
    let labels = train.labels()?;
    if !labels.contains(&ClassLabel::Real) || !labels.contains(&ClassLabel::Fake) {
        return Err(Error::SingleClass);
    }
    if !(cfg.lr > 0.0) || cfg.epochs == 0 {
        return Err(Error::invalid("bow training needs lr > 0 and epochs >= 1"));
    }

    let sample: Vec<(&LabeledItem, ClassLabel)> = if cfg.bootstrap {
        let mut rng = seed::rng(cfg.seed);
        let n = train.len();
        (0..n)
            .map(|_| {
                let i = rng.gen_range(0..n);
                (&train.items()[i], labels[i])
            })
            .collect()
    } else {
        train.items().iter().zip(labels.iter().copied()).collect()
    };

    let mut freq: BTreeMap<String, usize> = BTreeMap::new();
    for (it, _) in &sample {
        for t in tokenize(&it.text) {
            *freq.entry(t).or_default() += 1;
        }
    }
    let vocabulary: BTreeMap<String, usize> = freq
        .into_iter()
        .filter(|(_, c)| *c >= cfg.min_token_freq)
        .enumerate()
        .map(|(i, (t, _))| (t, i))
        .collect();

    let mut model = BowModel {
        name: name.to_string(),
        weights: vec![0.0; vocabulary.len()],
        vocabulary,
        bias: 0.0,
    };
    let rows: Vec<SparseRow> = sample.iter().map(|(it, _)| model.featurize(&it.text)).collect();
    let ys: Vec<f64> = sample.iter().map(|(_, l)| l.index() as f64).collect();
    let n = rows.len() as f64;

    let mut history = Vec::with_capacity(cfg.epochs + 1);
    let mut grad = vec![0.0; model.weights.len()];
    for _ in 0..cfg.epochs {
        history.push(objective(&model, &rows, &ys, cfg.l2));
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut grad_b = 0.0;
        for (r, y) in rows.iter().zip(&ys) {
            let err = sigmoid(model.logit(r)) - y;
            grad_b += err;
            for (i, v) in r {
                grad[*i] += err * v;
            }
        }
        for (w, g) in model.weights.iter_mut().zip(&grad) {
            *w -= cfg.lr * (g / n + cfg.l2 * *w);
        }
        model.bias -= cfg.lr * grad_b / n;
    }
    history.push(objective(&model, &rows, &ys, cfg.l2));
    Ok((model, history))
}

pub fn train_bow(train: &Dataset, cfg: &BowConfig) -> Result<BowModel> {
    fit_bow("bow", train, cfg).map(|(m, _)| m)
}

/// One prediction column named after the model.
pub fn predict_bow(m: &BowModel, items: &[LabeledItem]) -> PredictionMatrix {
    let ids = items.iter().map(|it| it.id.clone()).collect();
    let probs = items.iter().map(|it| m.predict_text(&it.text)).collect();
    PredictionMatrix::single(&m.name, ids, probs).expect("one column per item")
}

/// Check every pair in a matrix against the sum-to-one invariant.
pub fn validate_matrix(m: &PredictionMatrix) -> Result<()> {
    for v in m.vectors() {
        if !v.probs.is_valid(SUM_TOLERANCE) {
            return Err(Error::ProbabilitySum {
                row: format!("{},{}", v.item_id, v.model_name),
                sum: v.probs.sum(),
            });
        }
    }
    Ok(())
}
