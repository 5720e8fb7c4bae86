//! Feature-fusion network with Monte Carlo dropout.
//!
//! A small fully connected classifier (ReLU hidden layers, inverted dropout
//! after each hidden layer, softmax head). Dropout stays active at inference:
//! `predict_mc` runs `N` passes with independent masks and reports the sample
//! mean `v_p` and the population variance `c_u = (1/N) Σ (f_i - v_p)²`.
//!
//! Pass `i` uses the mask stream seeded by `derive_index(base_seed, i)`, so
//! `(model, x, N, base_seed)` fixes the result regardless of scheduling.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backbone::format_prob;
use crate::error::{Error, Result};
use crate::label::{ClassLabel, ProbPair};
use crate::seed;

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    AdamW,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Loss {
    CrossEntropy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub hidden: Vec<usize>,
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub dropout: f64,
    /// Epochs without validation improvement before stopping; 0 disables.
    pub patience: usize,
    pub seed: u64,
    pub optimizer: Optimizer,
    pub loss: Loss,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            hidden: vec![32, 16],
            lr: 1e-3,
            weight_decay: 1e-4,
            batch_size: 32,
            epochs: 200,
            dropout: 0.2,
            patience: 20,
            seed: 0,
            optimizer: Optimizer::AdamW,
            loss: Loss::CrossEntropy,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::invalid("sffn lr must be positive"));
        }
        if self.epochs == 0 {
            return Err(Error::invalid("sffn epochs must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("sffn batch size must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::invalid("dropout must be in [0, 1)"));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::invalid("weight decay must be non-negative"));
        }
        if self.hidden.contains(&0) {
            return Err(Error::invalid("hidden layer widths must be positive"));
        }
        Ok(())
    }
}

/// Fully connected layer, weights row-major `[outputs][inputs]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    fn he_uniform(inputs: usize, outputs: usize, rng: &mut ChaCha8Rng) -> Self {
        let limit = (6.0 / inputs as f64).sqrt();
        let weights = (0..inputs * outputs)
            .map(|_| rng.gen_range(-limit..limit))
            .collect();
        Dense {
            inputs,
            outputs,
            weights,
            bias: vec![0.0; outputs],
        }
    }

    fn forward(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(self.bias.iter().enumerate().map(|(o, b)| {
            let row = &self.weights[o * self.inputs..(o + 1) * self.inputs];
            b + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
        }));
    }

    fn n_params(&self) -> usize {
        self.weights.len() + self.bias.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SffnModel {
    pub format_version: u32,
    pub layer_sizes: Vec<usize>,
    pub activation: Activation,
    pub dropout: f64,
    pub layers: Vec<Dense>,
    pub schema_hash: String,
    pub seed: u64,
}

/// Activations recorded by a forward pass, for backpropagation.
struct Trace {
    /// Input to each layer (the first is `x`).
    inputs: Vec<Vec<f64>>,
    /// Per hidden layer: ReLU derivative times dropout scale.
    gates: Vec<Vec<f64>>,
    probs: [f64; 2],
}

fn softmax2(z: &[f64]) -> [f64; 2] {
    let m = z[0].max(z[1]);
    let a = (z[0] - m).exp();
    let b = (z[1] - m).exp();
    let s = a + b;
    [a / s, b / s]
}

fn cross_entropy(p: &[f64; 2], label: ClassLabel) -> f64 {
    -p[label.index()].max(f64::MIN_POSITIVE).ln()
}

impl SffnModel {
    pub fn new(input_dim: usize, hidden: &[usize], dropout: f64, seed: u64, schema_hash: &str) -> Self {
        let mut sizes = vec![input_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(2);
        let mut rng = seed::rng(seed::derive(seed, "sffn-init"));
        let layers = sizes
            .windows(2)
            .map(|w| Dense::he_uniform(w[0], w[1], &mut rng))
            .collect();
        SffnModel {
            format_version: MODEL_FORMAT_VERSION,
            layer_sizes: sizes,
            activation: Activation::Relu,
            dropout,
            layers,
            schema_hash: schema_hash.to_string(),
            seed,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(Dense::n_params).sum()
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        Ok(())
    }

    /// Forward pass; `mask_rng = None` disables dropout.
    fn run(&self, x: &[f64], mut mask_rng: Option<&mut ChaCha8Rng>) -> Trace {
        let keep = 1.0 - self.dropout;
        let scale = 1.0 / keep;
        let last = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut gates = Vec::with_capacity(last);
        let mut cur = x.to_vec();
        let mut z = Vec::new();
        for (li, layer) in self.layers.iter().enumerate() {
            layer.forward(&cur, &mut z);
            inputs.push(std::mem::take(&mut cur));
            if li == last {
                break;
            }
            let mut gate = Vec::with_capacity(z.len());
            let mut h = Vec::with_capacity(z.len());
            for &zi in &z {
                let mut g = if zi > 0.0 { 1.0 } else { 0.0 };
                if let Some(rng) = mask_rng.as_deref_mut() {
                    if self.dropout > 0.0 {
                        g *= if rng.gen::<f64>() < keep { scale } else { 0.0 };
                    }
                }
                gate.push(g);
                h.push(zi * g);
            }
            gates.push(gate);
            cur = h;
        }
        Trace {
            inputs,
            gates,
            probs: softmax2(&z),
        }
    }

    /// Dropout-free forward pass.
    pub fn forward(&self, x: &[f64]) -> Result<ProbPair> {
        self.check_dim(x)?;
        Ok(self.run(x, None).probs.into())
    }

    /// One stochastic pass with the dropout mask drawn from `mask_seed`.
    pub fn forward_with_mask(&self, x: &[f64], mask_seed: u64) -> Result<ProbPair> {
        self.check_dim(x)?;
        let mut rng = seed::rng(mask_seed);
        Ok(self.run(x, Some(&mut rng)).probs.into())
    }

    /// Accumulate the cross-entropy gradient of one sample into `grads`
    /// (same layout as `layers`). Returns the sample loss.
    fn backprop(&self, trace: &Trace, label: ClassLabel, grads: &mut [Dense]) -> f64 {
        let mut delta: Vec<f64> = trace.probs.to_vec();
        delta[label.index()] -= 1.0;
        for li in (0..self.layers.len()).rev() {
            let layer = &self.layers[li];
            let input = &trace.inputs[li];
            let g = &mut grads[li];
            for (o, d) in delta.iter().enumerate() {
                g.bias[o] += d;
                let row = &mut g.weights[o * layer.inputs..(o + 1) * layer.inputs];
                for (gw, a) in row.iter_mut().zip(input) {
                    *gw += d * a;
                }
            }
            if li == 0 {
                break;
            }
            let gate = &trace.gates[li - 1];
            let mut prev = vec![0.0; layer.inputs];
            for (o, d) in delta.iter().enumerate() {
                let row = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
                for (p, w) in prev.iter_mut().zip(row) {
                    *p += w * d;
                }
            }
            for (p, gt) in prev.iter_mut().zip(gate) {
                *p *= gt;
            }
            delta = prev;
        }
        cross_entropy(&trace.probs, label)
    }

    fn zero_like(&self) -> Vec<Dense> {
        self.layers
            .iter()
            .map(|l| Dense {
                inputs: l.inputs,
                outputs: l.outputs,
                weights: vec![0.0; l.weights.len()],
                bias: vec![0.0; l.bias.len()],
            })
            .collect()
    }

    /// Analytic cross-entropy gradient for one sample with dropout off.
    pub fn gradient(&self, x: &[f64], label: ClassLabel) -> Result<Vec<Dense>> {
        self.check_dim(x)?;
        let mut grads = self.zero_like();
        let trace = self.run(x, None);
        self.backprop(&trace, label, &mut grads);
        Ok(grads)
    }

    /// Mean cross-entropy with dropout off.
    pub fn loss(&self, rows: &[Vec<f64>], labels: &[ClassLabel]) -> f64 {
        let total: f64 = rows
            .iter()
            .zip(labels)
            .map(|(x, l)| cross_entropy(&self.run(x, None).probs, *l))
            .sum();
        total / rows.len().max(1) as f64
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let json = serde_json::to_string_pretty(self)?;
        fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    /// Load a model, checking the format version and, when given, the
    /// feature schema hash the caller is about to feed it.
    pub fn load(path: impl AsRef<Path>, expected_schema: Option<&str>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let value: serde_json::Value = serde_json::from_str(&text)?;
        let found = value
            .get("format_version")
            .and_then(serde_json::Value::as_u64)
            .ok_or_else(|| Error::invalid("model file has no format_version"))?;
        if found != MODEL_FORMAT_VERSION as u64 {
            return Err(Error::VersionMismatch {
                expected: MODEL_FORMAT_VERSION,
                found: found as u32,
            });
        }
        let model: SffnModel = serde_json::from_value(value)?;
        model.check_shapes()?;
        if let Some(expected) = expected_schema {
            if model.schema_hash != expected {
                return Err(Error::SchemaMismatch {
                    expected: expected.to_string(),
                    actual: model.schema_hash.clone(),
                });
            }
        }
        Ok(model)
    }

    fn check_shapes(&self) -> Result<()> {
        let ok = self.layer_sizes.len() == self.layers.len() + 1
            && self.layer_sizes.last() == Some(&2)
            && self.layers.iter().enumerate().all(|(i, l)| {
                l.inputs == self.layer_sizes[i]
                    && l.outputs == self.layer_sizes[i + 1]
                    && l.weights.len() == l.inputs * l.outputs
                    && l.bias.len() == l.outputs
            })
            && self
                .layers
                .iter()
                .all(|l| l.weights.iter().chain(&l.bias).all(|v| v.is_finite()));
        if ok {
            Ok(())
        } else {
            Err(Error::invalid("model file has inconsistent layer shapes"))
        }
    }
}

pub fn save_model(m: &SffnModel, path: impl AsRef<Path>) -> Result<()> {
    m.save(path)
}

pub fn load_model(path: impl AsRef<Path>, expected_schema: Option<&str>) -> Result<SffnModel> {
    SffnModel::load(path, expected_schema)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub initial_train_loss: f64,
    pub final_train_loss: f64,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub best_validation_loss: Option<f64>,
}

struct AdamW {
    lr: f64,
    weight_decay: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: i32,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl AdamW {
    fn new(n: usize, lr: f64, weight_decay: f64) -> Self {
        AdamW {
            lr,
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }

    /// Biases are not decayed.
    fn step(&mut self, model: &mut SffnModel, grads: &[Dense], scale: f64) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        let mut k = 0;
        for (layer, g) in model.layers.iter_mut().zip(grads) {
            for (params, grad, decay) in [
                (&mut layer.weights, &g.weights, true),
                (&mut layer.bias, &g.bias, false),
            ] {
                for (p, gr) in params.iter_mut().zip(grad) {
                    let gr = gr * scale;
                    self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * gr;
                    self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * gr * gr;
                    let mhat = self.m[k] / bc1;
                    let vhat = self.v[k] / bc2;
                    if decay {
                        *p -= self.lr * self.weight_decay * *p;
                    }
                    *p -= self.lr * mhat / (vhat.sqrt() + self.eps);
                    k += 1;
                }
            }
        }
    }
}

/// Validation data used for early stopping.
pub struct Validation<'a> {
    pub rows: &'a [Vec<f64>],
    pub labels: &'a [ClassLabel],
}

/// Train with AdamW on mini-batches, dropout active. With a validation set
/// and `patience > 0`, stop when validation loss stalls and keep the best
/// parameters.
pub fn train_sffn(
    rows: &[Vec<f64>],
    labels: &[ClassLabel],
    cfg: &TrainConfig,
    schema_hash: &str,
    validation: Option<Validation<'_>>,
) -> Result<(SffnModel, TrainReport)> {
    cfg.validate()?;
    if rows.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: rows.len(),
            got: labels.len(),
        });
    }
    let dim = rows
        .first()
        .map(Vec::len)
        .ok_or(Error::DatasetTooSmall { needed: 2, got: 0 })?;
    for r in rows {
        if r.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: r.len(),
            });
        }
    }
    if !labels.contains(&ClassLabel::Real) || !labels.contains(&ClassLabel::Fake) {
        return Err(Error::SingleClass);
    }
    if let Some(v) = &validation {
        if v.rows.len() != v.labels.len() {
            return Err(Error::DimensionMismatch {
                expected: v.rows.len(),
                got: v.labels.len(),
            });
        }
        if let Some(bad) = v.rows.iter().find(|r| r.len() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: bad.len(),
            });
        }
    }

    let mut model = SffnModel::new(dim, &cfg.hidden, cfg.dropout, cfg.seed, schema_hash);
    let initial_train_loss = model.loss(rows, labels);
    let mut opt = AdamW::new(model.n_params(), cfg.lr, cfg.weight_decay);
    let mut shuffle_rng = seed::rng(seed::derive(cfg.seed, "sffn-shuffle"));
    let mut mask_rng = seed::rng(seed::derive(cfg.seed, "sffn-dropout"));
    let mut order: Vec<usize> = (0..rows.len()).collect();
    let mut grads = model.zero_like();

    let early_stop = validation.is_some() && cfg.patience > 0;
    let mut best: Option<(f64, SffnModel, usize)> = None;
    let mut epochs_run = 0;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        for batch in order.chunks(cfg.batch_size) {
            for g in grads.iter_mut() {
                g.weights.iter_mut().for_each(|w| *w = 0.0);
                g.bias.iter_mut().for_each(|b| *b = 0.0);
            }
            for &i in batch {
                let trace = model.run(&rows[i], Some(&mut mask_rng));
                model.backprop(&trace, labels[i], &mut grads);
            }
            opt.step(&mut model, &grads, 1.0 / batch.len() as f64);
        }
        epochs_run = epoch + 1;

        if let Some(v) = &validation {
            let vl = model.loss(v.rows, v.labels);
            let improved = best.as_ref().is_none_or(|(b, _, _)| vl < *b);
            if improved {
                best = Some((vl, model.clone(), epoch + 1));
            } else if early_stop && epoch + 1 - best.as_ref().unwrap().2 >= cfg.patience {
                break;
            }
        }
    }

    let (best_epoch, best_validation_loss) = match best {
        Some((vl, m, e)) if early_stop => {
            model = m;
            (e, Some(vl))
        }
        Some((vl, _, e)) => (e, Some(vl)),
        None => (epochs_run, None),
    };
    let final_train_loss = model.loss(rows, labels);
    Ok((
        model,
        TrainReport {
            initial_train_loss,
            final_train_loss,
            epochs_run,
            best_epoch,
            best_validation_loss,
        },
    ))
}

/// Prediction with MC-dropout uncertainty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UncertainPrediction {
    pub item_id: String,
    /// Mean of the per-pass softmax outputs.
    pub v_p: ProbPair,
    /// Per-class population variance over the passes.
    pub c_u: [f64; 2],
    pub label: ClassLabel,
    pub passes: usize,
}

impl UncertainPrediction {
    /// Scalar uncertainty: mean of the two per-class variances.
    pub fn uncertainty(&self) -> f64 {
        (self.c_u[0] + self.c_u[1]) / 2.0
    }
}

/// Outputs of `n` masked passes, pass `i` seeded with `derive_index(base_seed, i)`.
pub fn mc_passes(m: &SffnModel, x: &[f64], n: usize, base_seed: u64) -> Result<Vec<ProbPair>> {
    if n == 0 {
        return Err(Error::invalid("number of MC passes must be at least 1"));
    }
    (0..n)
        .map(|i| m.forward_with_mask(x, seed::derive_index(base_seed, i as u64)))
        .collect()
}

/// Sample mean and population variance of recorded passes. The mean is
/// shifted by the first pass so identical passes give exactly zero variance.
pub fn summarize_passes(passes: &[ProbPair]) -> (ProbPair, [f64; 2]) {
    let n = passes.len() as f64;
    let first = passes[0].to_array();
    let mut mean = [0.0; 2];
    for c in 0..2 {
        let shift: f64 = passes.iter().map(|p| p.to_array()[c] - first[c]).sum();
        mean[c] = first[c] + shift / n;
    }
    let mut var = [0.0; 2];
    for c in 0..2 {
        var[c] = passes
            .iter()
            .map(|p| (p.to_array()[c] - mean[c]).powi(2))
            .sum::<f64>()
            / n;
    }
    (mean.into(), var)
}

pub fn predict_mc(m: &SffnModel, x: &[f64], n: usize, base_seed: u64) -> Result<UncertainPrediction> {
    let passes = mc_passes(m, x, n, base_seed)?;
    let (v_p, c_u) = summarize_passes(&passes);
    Ok(UncertainPrediction {
        item_id: String::new(),
        v_p,
        c_u,
        label: v_p.argmax(),
        passes: n,
    })
}

/// MC prediction for many items; item `id` uses base seed `derive(seed, id)`.
pub fn predict_mc_batch(
    m: &SffnModel,
    ids: &[String],
    rows: &[Vec<f64>],
    n: usize,
    seed: u64,
) -> Result<Vec<UncertainPrediction>> {
    ids.iter()
        .zip(rows)
        .map(|(id, x)| {
            let mut p = predict_mc(m, x, n, seed::derive(seed, id))?;
            p.item_id = id.clone();
            Ok(p)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientCheck {
    /// Max relative error per layer (weights and bias together).
    pub per_layer: Vec<f64>,
    pub max_relative_error: f64,
}

fn param_mut(m: &mut SffnModel, layer: usize, which: usize, k: usize) -> &mut f64 {
    if which == 0 {
        &mut m.layers[layer].weights[k]
    } else {
        &mut m.layers[layer].bias[k]
    }
}

/// Finite-difference step used by [`gradient_check`].
pub const GRADIENT_CHECK_STEP: f64 = 1e-4;

/// Compare analytic gradients with central differences over every parameter.
/// Relative error is `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn gradient_check(m: &SffnModel, x: &[f64], label: ClassLabel) -> Result<GradientCheck> {
    let analytic = m.gradient(x, label)?;
    let mut probe = m.clone();
    probe.dropout = 0.0;
    let h = GRADIENT_CHECK_STEP;
    let loss_at = |p: &SffnModel| cross_entropy(&p.run(x, None).probs, label);

    let mut per_layer = Vec::with_capacity(m.layers.len());
    for li in 0..m.layers.len() {
        let mut worst: f64 = 0.0;
        for which in 0..2 {
            let n = if which == 0 {
                m.layers[li].weights.len()
            } else {
                m.layers[li].bias.len()
            };
            for k in 0..n {
                let orig = *param_mut(&mut probe, li, which, k);
                *param_mut(&mut probe, li, which, k) = orig + h;
                let plus = loss_at(&probe);
                *param_mut(&mut probe, li, which, k) = orig - h;
                let minus = loss_at(&probe);
                *param_mut(&mut probe, li, which, k) = orig;
                let numeric = (plus - minus) / (2.0 * h);
                let a = if which == 0 {
                    analytic[li].weights[k]
                } else {
                    analytic[li].bias[k]
                };
                let denom = a.abs().max(numeric.abs()).max(1e-8);
                worst = worst.max((a - numeric).abs() / denom);
            }
        }
        per_layer.push(worst);
    }
    let max_relative_error = per_layer.iter().copied().fold(0.0, f64::max);
    Ok(GradientCheck {
        per_layer,
        max_relative_error,
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct UncertainRow {
    item_id: String,
    p_real: String,
    p_fake: String,
    var_real: String,
    var_fake: String,
    label: ClassLabel,
    passes: usize,
}

/// Write `item_id,p_real,p_fake,var_real,var_fake,label,passes`.
pub fn write_uncertain(preds: &[UncertainPrediction], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = crate::error::csv_writer(path)?;
    for p in preds {
        w.serialize(UncertainRow {
            item_id: p.item_id.clone(),
            p_real: format_prob(p.v_p.p_real),
            p_fake: format_prob(p.v_p.p_fake),
            var_real: format_prob(p.c_u[0]),
            var_fake: format_prob(p.c_u[1]),
            label: p.label,
            passes: p.passes,
        })?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_uncertain(path: impl AsRef<Path>) -> Result<Vec<UncertainPrediction>> {
    let mut rdr = crate::error::csv_reader(path.as_ref())?;
    let num = |s: &str| {
        s.parse::<f64>()
            .map_err(|_| Error::invalid(format!("bad number {s:?}")))
    };
    rdr.deserialize::<UncertainRow>()
        .map(|row| {
            let row = row?;
            Ok(UncertainPrediction {
                v_p: ProbPair::new(num(&row.p_real)?, num(&row.p_fake)?),
                c_u: [num(&row.var_real)?, num(&row.var_fake)?],
                item_id: row.item_id,
                label: row.label,
                passes: row.passes,
            })
        })
        .collect()
}
