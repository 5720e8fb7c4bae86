//! Synthetic corpora with controllable attribute informativeness, and the
//! bundled reference attribute tables.

use std::collections::BTreeMap;

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{AttributeKind, Attributes, Dataset, LabeledItem, SplitTag};
use crate::error::{Error, Result};
use crate::label::ClassLabel;
use crate::seed;
use crate::stat_features::{AttributeStatsTable, ValueCounts};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthAttribute {
    pub kind: AttributeKind,
    pub n_values: usize,
    /// P(home class | value) for every value of this kind.
    pub skew: f64,
    /// Per-value overrides of `skew`, keyed by generated value name.
    pub value_skews: BTreeMap<String, f64>,
    /// Probability that an item carries this kind at all.
    pub presence: f64,
    /// Zipf exponent of value popularity.
    pub zipf: f64,
}

impl Default for SynthAttribute {
    fn default() -> Self {
        SynthAttribute {
            kind: AttributeKind::Domain,
            n_values: 100,
            skew: 0.9,
            value_skews: BTreeMap::new(),
            presence: 0.8,
            zipf: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub n_items: usize,
    /// P(real).
    pub real_prior: f64,
    pub label_noise: f64,
    /// Fraction of text tokens drawn from class-specific vocabulary.
    pub text_signal: f64,
    pub text_length: usize,
    pub vocab_size: usize,
    pub signal_vocab: usize,
    pub attributes: Vec<SynthAttribute>,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            n_items: 1000,
            real_prior: 0.5,
            label_noise: 0.0,
            text_signal: 0.3,
            text_length: 16,
            vocab_size: 400,
            signal_vocab: 40,
            attributes: vec![
                SynthAttribute {
                    kind: AttributeKind::Username,
                    ..SynthAttribute::default()
                },
                SynthAttribute::default(),
            ],
            seed: 0,
        }
    }
}

impl SynthSpec {
    /// The corpus used by the end-to-end checks: informative attributes,
    /// noisy labels and a weak text signal.
    pub fn benchmark() -> Self {
        SynthSpec {
            n_items: 5000,
            real_prior: 0.5,
            label_noise: 0.05,
            text_signal: 0.08,
            text_length: 16,
            vocab_size: 400,
            signal_vocab: 40,
            attributes: vec![
                SynthAttribute {
                    kind: AttributeKind::Username,
                    n_values: 300,
                    skew: 0.95,
                    presence: 0.6,
                    ..SynthAttribute::default()
                },
                SynthAttribute {
                    kind: AttributeKind::Domain,
                    n_values: 150,
                    skew: 0.95,
                    presence: 0.6,
                    ..SynthAttribute::default()
                },
            ],
            seed: 7,
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        let rate = |name: &str, v: f64, out: &mut Vec<String>| {
            if !(0.0..=1.0).contains(&v) {
                out.push(format!("{name} must be in [0, 1], got {v}"));
            }
        };
        if self.n_items == 0 {
            out.push("n_items must be positive".into());
        }
        rate("real_prior", self.real_prior, &mut out);
        rate("label_noise", self.label_noise, &mut out);
        rate("text_signal", self.text_signal, &mut out);
        if self.text_length == 0 || self.vocab_size == 0 || self.signal_vocab == 0 {
            out.push("text_length, vocab_size and signal_vocab must be positive".into());
        }
        let mut seen = Vec::new();
        for a in &self.attributes {
            if seen.contains(&a.kind) {
                out.push(format!("attribute kind {} listed twice", a.kind));
            }
            seen.push(a.kind);
            if a.n_values == 0 {
                out.push(format!("{}: n_values must be positive", a.kind));
            }
            rate(&format!("{} skew", a.kind), a.skew, &mut out);
            rate(&format!("{} presence", a.kind), a.presence, &mut out);
            for (v, s) in &a.value_skews {
                rate(&format!("{}/{v} skew", a.kind), *s, &mut out);
            }
            if !(a.zipf >= 0.0) {
                out.push(format!("{}: zipf exponent must be non-negative", a.kind));
            }
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

/// Name of the `i`-th generated value of `kind`.
pub fn value_name(kind: AttributeKind, i: usize) -> String {
    match kind {
        AttributeKind::Username => format!("user{i:04}"),
        AttributeKind::Domain => format!("site{i:04}.com"),
        AttributeKind::Author => format!("author {i:04}"),
        AttributeKind::Source => format!("source{i:04}.net"),
    }
}

/// Home class of the `i`-th value: even values lean real, odd lean fake.
pub fn home_class(i: usize) -> ClassLabel {
    if i.is_multiple_of(2) {
        ClassLabel::Real
    } else {
        ClassLabel::Fake
    }
}

struct ValueSampler {
    names: Vec<String>,
    by_class: [Option<WeightedIndex<f64>>; 2],
}

impl ValueSampler {
    /// Value masses `q_v` are Zipf within each home group, with group masses
    /// chosen so that `sum_v q_v P(real|v) = prior`; values are then drawn
    /// from `P(v|y) = q_v P(y|v) / P(y)`.
    fn new(a: &SynthAttribute, prior: f64) -> Result<Self> {
        let names: Vec<String> = (0..a.n_values).map(|i| value_name(a.kind, i)).collect();
        let p_real: Vec<f64> = names
            .iter()
            .enumerate()
            .map(|(i, n)| {
                let s = a.value_skews.get(n).copied().unwrap_or(a.skew);
                match home_class(i) {
                    ClassLabel::Real => s,
                    ClassLabel::Fake => 1.0 - s,
                }
            })
            .collect();
        let zipf: Vec<f64> = (0..a.n_values).map(|i| 1.0 / ((i / 2 + 1) as f64).powf(a.zipf)).collect();
        let group_sum = |c: ClassLabel| -> f64 {
            (0..a.n_values).filter(|&i| home_class(i) == c).map(|i| zipf[i]).sum()
        };
        let (zr, zf) = (group_sum(ClassLabel::Real), group_sum(ClassLabel::Fake));
        let group_rate = |c: ClassLabel, z: f64| -> f64 {
            if z == 0.0 {
                return 0.0;
            }
            (0..a.n_values)
                .filter(|&i| home_class(i) == c)
                .map(|i| zipf[i] / z * p_real[i])
                .sum()
        };
        let (ra, rb) = (group_rate(ClassLabel::Real, zr), group_rate(ClassLabel::Fake, zf));
        let mut m_real = if zf == 0.0 {
            1.0
        } else if zr == 0.0 {
            0.0
        } else if (ra - rb).abs() < 1e-12 {
            0.5
        } else {
            (prior - rb) / (ra - rb)
        };
        if !(0.0..=1.0).contains(&m_real) {
            log::warn!("{}: skews cannot match the class prior exactly; clamping", a.kind);
            m_real = m_real.clamp(0.0, 1.0);
        }
        let q: Vec<f64> = (0..a.n_values)
            .map(|i| match home_class(i) {
                ClassLabel::Real if zr > 0.0 => m_real * zipf[i] / zr,
                ClassLabel::Fake if zf > 0.0 => (1.0 - m_real) * zipf[i] / zf,
                _ => 0.0,
            })
            .collect();
        let weights = |c: ClassLabel| -> Option<WeightedIndex<f64>> {
            let w: Vec<f64> = q
                .iter()
                .zip(&p_real)
                .map(|(q, p)| match c {
                    ClassLabel::Real => q * p,
                    ClassLabel::Fake => q * (1.0 - p),
                })
                .collect();
            WeightedIndex::new(w).ok()
        };
        Ok(ValueSampler {
            names,
            by_class: [weights(ClassLabel::Real), weights(ClassLabel::Fake)],
        })
    }

    fn sample<R: Rng>(&self, label: ClassLabel, rng: &mut R) -> Option<&str> {
        self.by_class[label.index()]
            .as_ref()
            .map(|w| self.names[w.sample(rng)].as_str())
    }
}

fn token(i: usize) -> String {
    format!("t{i:03}")
}

fn embed(kind: AttributeKind, value: &str, i: usize) -> Option<String> {
    match kind {
        AttributeKind::Username => Some(format!("@{value}")),
        AttributeKind::Domain => Some(format!("https://{value}/post/{i}")),
        AttributeKind::Author | AttributeKind::Source => None,
    }
}

/// Generate a labeled, unsplit corpus. Attributes and text follow the clean
/// label; `label_noise` then flips the stored label.
pub fn generate(spec: &SynthSpec) -> Result<Dataset> {
    spec.validate()?;
    let samplers = spec
        .attributes
        .iter()
        .map(|a| ValueSampler::new(a, spec.real_prior))
        .collect::<Result<Vec<_>>>()?;
    let neutral = WeightedIndex::new((0..spec.vocab_size).map(|i| 1.0 / (i + 1) as f64))
        .map_err(|e| Error::invalid(e.to_string()))?;
    let mut rng = seed::rng(seed::derive(spec.seed, "synth"));
    let mut items = Vec::with_capacity(spec.n_items);
    for n in 0..spec.n_items {
        let clean = if rng.gen::<f64>() < spec.real_prior {
            ClassLabel::Real
        } else {
            ClassLabel::Fake
        };
        let mut words: Vec<String> = (0..spec.text_length)
            .map(|_| {
                if rng.gen::<f64>() < spec.text_signal {
                    let offset = spec.vocab_size + clean.index() * spec.signal_vocab;
                    token(offset + rng.gen_range(0..spec.signal_vocab))
                } else {
                    token(neutral.sample(&mut rng))
                }
            })
            .collect();
        let mut attributes = Attributes::new();
        for (a, s) in spec.attributes.iter().zip(&samplers) {
            let present = rng.gen::<f64>() < a.presence;
            if !present {
                continue;
            }
            if let Some(v) = s.sample(clean, &mut rng) {
                if let Some(t) = embed(a.kind, v, n) {
                    let at = rng.gen_range(0..=words.len());
                    words.insert(at, t);
                }
                attributes.insert(a.kind, vec![v.to_string()]);
            }
        }
        let label = if rng.gen::<f64>() < spec.label_noise {
            clean.other()
        } else {
            clean
        };
        items.push(LabeledItem {
            id: format!("s{n:05}"),
            text: words.join(" "),
            label: Some(label),
            attributes,
        });
    }
    Dataset::new(items, SplitTag::Unsplit)
}

const REFERENCE_CSV: &str = include_str!("../fixtures/attribute_stats.csv");

/// Largest allowed gap between a printed probability and its recomputation.
pub const REFERENCE_TOLERANCE: f64 = 5e-4;

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct ReferenceRow {
    pub kind: AttributeKind,
    pub value: String,
    pub p_real: f64,
    pub p_fake: f64,
    pub frequency: u64,
}

impl ReferenceRow {
    /// Counts recovered as `round(p * frequency)`.
    pub fn counts(&self) -> ValueCounts {
        ValueCounts {
            n_real: (self.p_real * self.frequency as f64).round() as u64,
            n_fake: (self.p_fake * self.frequency as f64).round() as u64,
        }
    }

    pub fn reproduces(&self) -> bool {
        let c = self.counts();
        if c.total() == 0 {
            return false;
        }
        let p = c.probs();
        (p.p_real - self.p_real).abs() <= REFERENCE_TOLERANCE
            && (p.p_fake - self.p_fake).abs() <= REFERENCE_TOLERANCE
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceTables {
    pub rows: Vec<ReferenceRow>,
    /// Rows whose recovered counts fail the recomputation check.
    pub excluded: Vec<ReferenceRow>,
}

impl ReferenceTables {
    pub fn table(&self) -> Result<AttributeStatsTable> {
        AttributeStatsTable::from_counts(
            self.rows
                .iter()
                .map(|r| (r.kind, r.kind.normalize(&r.value), r.counts())),
        )
    }

    /// One training item per counted occurrence, so that `fit_stats` over
    /// them rebuilds the table.
    pub fn items(&self) -> Vec<LabeledItem> {
        let mut out = Vec::new();
        for r in &self.rows {
            let c = r.counts();
            let v = r.kind.normalize(&r.value);
            for (label, n) in [(ClassLabel::Real, c.n_real), (ClassLabel::Fake, c.n_fake)] {
                for _ in 0..n {
                    let mut attributes = Attributes::new();
                    attributes.insert(r.kind, vec![v.clone()]);
                    out.push(LabeledItem {
                        id: format!("ref{:06}", out.len()),
                        text: String::new(),
                        label: Some(label),
                        attributes,
                    });
                }
            }
        }
        out
    }
}

pub fn reference_tables() -> Result<ReferenceTables> {
    let mut rdr = csv::Reader::from_reader(REFERENCE_CSV.as_bytes());
    let mut rows = Vec::new();
    let mut excluded = Vec::new();
    for r in rdr.deserialize::<ReferenceRow>() {
        let r = r?;
        if r.reproduces() {
            rows.push(r);
        } else {
            log::warn!("reference row {}/{} does not reproduce; excluded", r.kind, r.value);
            excluded.push(r);
        }
    }
    Ok(ReferenceTables { rows, excluded })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stat_features::fit_stats;

    #[test]
    fn reference_rows_recover_counts() {
        let t = reference_tables().unwrap();
        assert!(t.excluded.is_empty());
        assert_eq!(t.rows.len(), 20);
        let find = |v: &str| t.rows.iter().find(|r| r.value == v).unwrap().counts();
        assert_eq!(find("news.sky"), ValueCounts { n_real: 274, n_fake: 0 });
        assert_eq!(find("MoHFW_NDIA"), ValueCounts { n_real: 156, n_fake: 6 });
        assert_eq!(find("people.com"), ValueCounts { n_real: 1569, n_fake: 200 });
    }

    #[test]
    fn same_seed_same_corpus() {
        let spec = SynthSpec {
            n_items: 200,
            ..SynthSpec::default()
        };
        assert_eq!(generate(&spec).unwrap(), generate(&spec).unwrap());
        let other = SynthSpec { seed: 1, ..spec.clone() };
        assert_ne!(generate(&spec).unwrap(), generate(&other).unwrap());
    }

    #[test]
    fn pure_value_without_noise() {
        let mut a = SynthAttribute {
            kind: AttributeKind::Domain,
            n_values: 10,
            skew: 0.8,
            presence: 1.0,
            ..SynthAttribute::default()
        };
        a.value_skews.insert(value_name(AttributeKind::Domain, 0), 1.0);
        let spec = SynthSpec {
            n_items: 3000,
            attributes: vec![a],
            ..SynthSpec::default()
        };
        let d = generate(&spec).unwrap();
        let t = fit_stats(d.items(), &[AttributeKind::Domain]).unwrap();
        let p = t.probs(AttributeKind::Domain, "site0000.com").unwrap();
        assert_eq!(p.p_real, 1.0);
    }

    #[test]
    fn fitted_skew_concentrates() {
        let spec = SynthSpec {
            n_items: 10_000,
            attributes: vec![SynthAttribute {
                kind: AttributeKind::Domain,
                n_values: 2,
                skew: 0.9,
                presence: 1.0,
                ..SynthAttribute::default()
            }],
            ..SynthSpec::default()
        };
        let d = generate(&spec).unwrap();
        let t = fit_stats(d.items(), &[AttributeKind::Domain]).unwrap();
        let p = t.probs(AttributeKind::Domain, "site0000.com").unwrap().p_real;
        assert!((0.87..=0.93).contains(&p), "{p}");
        let q = t.probs(AttributeKind::Domain, "site0001.com").unwrap().p_fake;
        assert!((0.87..=0.93).contains(&q), "{q}");
    }

    #[test]
    fn bad_rates_rejected() {
        let spec = SynthSpec {
            label_noise: 1.5,
            ..SynthSpec::default()
        };
        assert!(generate(&spec).is_err());
    }
}
