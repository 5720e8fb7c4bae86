//! Soft and hard voting over a prediction matrix.

use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::backbone::{format_prob, PredictionMatrix};
use crate::error::{Error, Result};
use crate::label::{ClassLabel, ProbPair};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VoteMode {
    Soft,
    Hard,
}

impl FromStr for VoteMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "soft" => Ok(VoteMode::Soft),
            "hard" => Ok(VoteMode::Hard),
            other => Err(Error::invalid(format!("unknown vote mode {other:?}"))),
        }
    }
}

/// Per-item ensemble output. Both voting rules are always computed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleItem {
    pub item_id: String,
    pub soft: ProbPair,
    pub v_real: usize,
    pub v_fake: usize,
    pub label_soft: ClassLabel,
    pub label_hard: ClassLabel,
}

impl EnsembleItem {
    pub fn label(&self, mode: VoteMode) -> ClassLabel {
        match mode {
            VoteMode::Soft => self.label_soft,
            VoteMode::Hard => self.label_hard,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleResult {
    pub items: Vec<EnsembleItem>,
    pub n_models: usize,
}

impl EnsembleResult {
    pub fn get(&self, item_id: &str) -> Option<&EnsembleItem> {
        self.items.iter().find(|i| i.item_id == item_id)
    }

    pub fn labels(&self, mode: VoteMode) -> Vec<ClassLabel> {
        self.items.iter().map(|i| i.label(mode)).collect()
    }

    pub fn soft_probs(&self) -> Vec<ProbPair> {
        self.items.iter().map(|i| i.soft).collect()
    }
}

fn soft_pair(row: &[ProbPair]) -> ProbPair {
    let n = row.len() as f64;
    let r: f64 = row.iter().map(|p| p.p_real).sum();
    let f: f64 = row.iter().map(|p| p.p_fake).sum();
    ProbPair::new(r / n, f / n)
}

/// Votes per class; a model with `p_real >= p_fake` votes real.
fn votes(row: &[ProbPair]) -> (usize, usize) {
    let v_real = row.iter().filter(|p| p.p_real >= p.p_fake).count();
    (v_real, row.len() - v_real)
}

fn hard_label(v_real: usize, v_fake: usize, tie: ClassLabel) -> ClassLabel {
    match v_real.cmp(&v_fake) {
        std::cmp::Ordering::Greater => ClassLabel::Real,
        std::cmp::Ordering::Less => ClassLabel::Fake,
        std::cmp::Ordering::Equal => tie,
    }
}

/// Run both voting rules. `tie` decides the hard label when `v_real == v_fake`.
pub fn vote(m: &PredictionMatrix, tie: ClassLabel) -> Result<EnsembleResult> {
    if m.n_models() == 0 {
        return Err(Error::EmptyModelSet);
    }
    let items = m
        .item_ids()
        .iter()
        .zip(m.rows())
        .map(|(id, row)| {
            let soft = soft_pair(row);
            let (v_real, v_fake) = votes(row);
            EnsembleItem {
                item_id: id.clone(),
                soft,
                v_real,
                v_fake,
                label_soft: soft.argmax(),
                label_hard: hard_label(v_real, v_fake, tie),
            }
        })
        .collect();
    Ok(EnsembleResult {
        items,
        n_models: m.n_models(),
    })
}

pub fn soft_vote(m: &PredictionMatrix) -> Result<EnsembleResult> {
    vote(m, ClassLabel::Real)
}

pub fn hard_vote(m: &PredictionMatrix, tie: ClassLabel) -> Result<EnsembleResult> {
    vote(m, tie)
}

#[derive(Debug, Serialize, Deserialize)]
struct EnsembleRow {
    item_id: String,
    p_real: String,
    p_fake: String,
    v_real: usize,
    v_fake: usize,
    label: ClassLabel,
}

/// Write `item_id,p_real,p_fake,v_real,v_fake,label` with the label of `mode`.
pub fn write_ensemble(r: &EnsembleResult, mode: VoteMode, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = crate::error::csv_writer(path)?;
    for it in &r.items {
        w.serialize(EnsembleRow {
            item_id: it.item_id.clone(),
            p_real: format_prob(it.soft.p_real),
            p_fake: format_prob(it.soft.p_fake),
            v_real: it.v_real,
            v_fake: it.v_fake,
            label: it.label(mode),
        })?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Read an ensemble file back. The stored label fills both label fields.
pub fn read_ensemble(path: impl AsRef<Path>) -> Result<EnsembleResult> {
    let mut rdr = crate::error::csv_reader(path.as_ref())?;
    let mut items = Vec::new();
    let mut n_models = 0;
    for row in rdr.deserialize::<EnsembleRow>() {
        let row = row?;
        let parse = |s: &str| {
            s.parse::<f64>()
                .map_err(|_| Error::invalid(format!("bad probability {s:?}")))
        };
        n_models = row.v_real + row.v_fake;
        items.push(EnsembleItem {
            item_id: row.item_id,
            soft: ProbPair::new(parse(&row.p_real)?, parse(&row.p_fake)?),
            v_real: row.v_real,
            v_fake: row.v_fake,
            label_soft: row.label,
            label_hard: row.label,
        });
    }
    Ok(EnsembleResult { items, n_models })
}
