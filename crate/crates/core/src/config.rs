//! Pipeline configuration: TOML with one section per module, overridable
//! through `FUSIONET_<SECTION>_<KEY>` environment variables.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::backbone::BowConfig;
use crate::corpus::{AttributeKind, ItemKind, SplitRatios};
use crate::ensemble::VoteMode;
use crate::error::{Error, Result};
use crate::evalkit::Averaging;
use crate::fixtures::SynthSpec;
use crate::heuristic::{default_grid, HeuristicConfig};
use crate::label::ClassLabel;
use crate::oversample::{OversampleConfig, OversampleMethod};
use crate::seed;
use crate::sffn::{Loss, Optimizer, TrainConfig};
use crate::stat_features::BaseMode;

pub const ENV_PREFIX: &str = "FUSIONET_";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub name: String,
    pub seed: u64,
    pub output_dir: PathBuf,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            name: "default".into(),
            seed: 0,
            output_dir: PathBuf::from("runs"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusSection {
    /// Raw JSONL corpus; leave unset to generate one from `[synth]`.
    pub path: Option<PathBuf>,
    pub kind: ItemKind,
    pub train: f64,
    pub validation: f64,
    pub test: f64,
}

impl Default for CorpusSection {
    fn default() -> Self {
        let r = SplitRatios::default();
        CorpusSection {
            path: None,
            kind: ItemKind::Tweet,
            train: r.train,
            validation: r.validation,
            test: r.test,
        }
    }
}

impl CorpusSection {
    pub fn ratios(&self) -> SplitRatios {
        SplitRatios {
            train: self.train,
            validation: self.validation,
            test: self.test,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackboneSection {
    /// Train bag-of-words stand-ins; when off, `predictions` is read instead.
    pub enabled: bool,
    pub models: usize,
    pub bootstrap: bool,
    pub min_token_freq: usize,
    pub l2: f64,
    pub epochs: usize,
    pub lr: f64,
    pub predictions: Option<PathBuf>,
}

impl Default for BackboneSection {
    fn default() -> Self {
        let b = BowConfig::default();
        BackboneSection {
            enabled: true,
            models: 3,
            bootstrap: true,
            min_token_freq: b.min_token_freq,
            l2: b.l2,
            epochs: b.epochs,
            lr: b.lr,
            predictions: None,
        }
    }
}

impl BackboneSection {
    pub fn bow(&self, seed: u64) -> BowConfig {
        BowConfig {
            min_token_freq: self.min_token_freq,
            l2: self.l2,
            epochs: self.epochs,
            lr: self.lr,
            seed,
            bootstrap: self.bootstrap,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnsembleSection {
    pub mode: VoteMode,
    pub tie: ClassLabel,
}

impl Default for EnsembleSection {
    fn default() -> Self {
        EnsembleSection {
            mode: VoteMode::Soft,
            tie: ClassLabel::Real,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeaturesSection {
    pub kinds: Vec<AttributeKind>,
    pub base: BaseMode,
}

impl Default for FeaturesSection {
    fn default() -> Self {
        FeaturesSection {
            kinds: vec![AttributeKind::Username, AttributeKind::Domain],
            base: BaseMode::Ensemble,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OversampleSection {
    pub enabled: bool,
    pub method: OversampleMethod,
    pub target_ratio: f64,
    pub k_neighbors: usize,
    pub clusters: usize,
    pub imbalance_threshold: f64,
    pub density_exponent: Option<f64>,
}

impl Default for OversampleSection {
    fn default() -> Self {
        let o = OversampleConfig::default();
        OversampleSection {
            enabled: true,
            method: o.method,
            target_ratio: 1.0,
            k_neighbors: o.k_neighbors,
            clusters: o.clusters,
            imbalance_threshold: o.imbalance_threshold,
            density_exponent: o.density_exponent,
        }
    }
}

impl OversampleSection {
    pub fn config(&self, seed: u64) -> OversampleConfig {
        OversampleConfig {
            method: self.method,
            k_neighbors: self.k_neighbors,
            clusters: self.clusters,
            imbalance_threshold: self.imbalance_threshold,
            density_exponent: self.density_exponent,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SffnSection {
    pub hidden: Vec<usize>,
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub dropout: f64,
    pub patience: usize,
    pub mc_passes: usize,
}

impl Default for SffnSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        SffnSection {
            hidden: t.hidden,
            lr: t.lr,
            weight_decay: t.weight_decay,
            batch_size: t.batch_size,
            epochs: t.epochs,
            dropout: t.dropout,
            patience: t.patience,
            mc_passes: 50,
        }
    }
}

impl SffnSection {
    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            hidden: self.hidden.clone(),
            lr: self.lr,
            weight_decay: self.weight_decay,
            batch_size: self.batch_size,
            epochs: self.epochs,
            dropout: self.dropout,
            patience: self.patience,
            seed,
            optimizer: Optimizer::AdamW,
            loss: Loss::CrossEntropy,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeuristicSection {
    pub enabled: bool,
    pub priority: Vec<AttributeKind>,
    /// Fixed threshold; unset means elbow selection on validation.
    pub threshold: Option<f64>,
    pub grid: Vec<f64>,
}

impl Default for HeuristicSection {
    fn default() -> Self {
        let h = HeuristicConfig::default();
        HeuristicSection {
            enabled: true,
            priority: h.priority,
            threshold: None,
            grid: default_grid(),
        }
    }
}

impl HeuristicSection {
    pub fn config(&self, threshold: f64) -> HeuristicConfig {
        HeuristicConfig {
            priority: self.priority.clone(),
            threshold,
            enabled: self.enabled,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateSection {
    pub averaging: Averaging,
    pub alpha: f64,
}

impl Default for EvaluateSection {
    fn default() -> Self {
        EvaluateSection {
            averaging: Averaging::Weighted,
            alpha: 0.05,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub run: RunSection,
    pub corpus: CorpusSection,
    pub synth: Option<SynthSpec>,
    pub backbone: BackboneSection,
    pub ensemble: EnsembleSection,
    pub features: FeaturesSection,
    pub oversample: OversampleSection,
    pub sffn: SffnSection,
    pub heuristic: HeuristicSection,
    pub evaluate: EvaluateSection,
}

impl PipelineConfig {
    /// Full pipeline over the bundled benchmark corpus.
    pub fn benchmark(output_dir: impl Into<PathBuf>) -> Self {
        PipelineConfig {
            run: RunSection {
                name: "benchmark".into(),
                seed: 7,
                output_dir: output_dir.into(),
            },
            synth: Some(SynthSpec::benchmark()),
            ..PipelineConfig::default()
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Parse `text`, then apply `FUSIONET_*` overrides from `vars`.
    pub fn from_toml_with_env(text: &str, vars: impl IntoIterator<Item = (String, String)>) -> Result<Self> {
        let mut table: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        apply_env_overrides(&mut table, vars)?;
        table.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))
    }

    /// Read a config file and apply overrides from the process environment.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_with_env(&text, std::env::vars())
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// sha256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        seed::sha256_hex(&serde_json::to_vec(self).expect("config serializes"))
    }

    pub fn run_dir(&self) -> PathBuf {
        self.run.output_dir.join(&self.run.name)
    }
}

const SECTIONS: [&str; 10] = [
    "run", "corpus", "synth", "backbone", "ensemble", "features", "oversample", "sffn", "heuristic", "evaluate",
];

fn parse_env_value(raw: &str) -> toml::Value {
    match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

/// Apply `FUSIONET_<SECTION>_<KEY>=value` pairs; the value is read as a TOML
/// literal when it parses as one and as a plain string otherwise.
pub fn apply_env_overrides(
    table: &mut toml::Table,
    vars: impl IntoIterator<Item = (String, String)>,
) -> Result<()> {
    let mut vars: Vec<(String, String)> = vars
        .into_iter()
        .filter(|(k, _)| k.starts_with(ENV_PREFIX))
        .collect();
    vars.sort();
    for (name, raw) in vars {
        let rest = name[ENV_PREFIX.len()..].to_lowercase();
        let Some((section, key)) = SECTIONS
            .iter()
            .find_map(|s| rest.strip_prefix(&format!("{s}_")).map(|k| (*s, k.to_string())))
        else {
            log::debug!("ignoring environment variable {name}");
            continue;
        };
        let entry = table
            .entry(section.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        let toml::Value::Table(t) = entry else {
            return Err(Error::Config(format!("{section} is not a table")));
        };
        t.insert(key, parse_env_value(&raw));
    }
    Ok(())
}

/// Every reason `run_pipeline` would refuse this config; empty when valid.
pub fn validate_config(cfg: &PipelineConfig) -> Vec<String> {
    let mut out = Vec::new();
    if cfg.run.name.is_empty() || cfg.run.name.contains(['/', '\\']) {
        out.push("run.name must be a non-empty single path component".into());
    }
    match (&cfg.corpus.path, &cfg.synth) {
        (None, None) => out.push("either corpus.path or a [synth] section is required".into()),
        (Some(_), Some(_)) => out.push("corpus.path and [synth] are mutually exclusive".into()),
        (None, Some(s)) => out.extend(s.violations().into_iter().map(|v| format!("synth: {v}"))),
        (Some(_), None) => {}
    }
    if let Err(e) = cfg.corpus.ratios().validate() {
        out.push(format!("corpus: {e}"));
    }
    if cfg.backbone.enabled {
        if cfg.backbone.models == 0 {
            out.push("backbone.models must be at least 1".into());
        }
        if !(cfg.backbone.lr > 0.0) || cfg.backbone.epochs == 0 {
            out.push("backbone needs lr > 0 and epochs >= 1".into());
        }
    } else if cfg.backbone.predictions.is_none() {
        out.push("backbone.predictions is required when the backbone is disabled".into());
    }
    let kinds: BTreeSet<_> = cfg.features.kinds.iter().collect();
    if kinds.len() != cfg.features.kinds.len() {
        out.push("features.kinds entries must be distinct".into());
    }
    if let Err(e) = cfg.oversample.config(0).validate() {
        out.push(format!("oversample: {e}"));
    }
    if !(cfg.oversample.target_ratio > 0.0 && cfg.oversample.target_ratio <= 1.0) {
        out.push("oversample.target_ratio must be in (0, 1]".into());
    }
    if let Err(e) = cfg.sffn.train_config(0).validate() {
        out.push(format!("sffn: {e}"));
    }
    if cfg.sffn.mc_passes == 0 {
        out.push("sffn.mc_passes must be at least 1".into());
    }
    let h = cfg.heuristic.config(cfg.heuristic.threshold.unwrap_or(1.0));
    out.extend(h.violations());
    for k in &cfg.heuristic.priority {
        if !kinds.contains(k) {
            out.push(format!("heuristic priority kind {k} is not in features.kinds"));
        }
    }
    if cfg.heuristic.threshold.is_none() {
        let g = &cfg.heuristic.grid;
        if g.len() < 3 || g.windows(2).any(|w| w[0] >= w[1]) || g[0] <= 0.5 || g[g.len() - 1] > 1.0 {
            out.push("heuristic.grid needs >= 3 ascending points in (0.5, 1]".into());
        }
    }
    if !(cfg.evaluate.alpha > 0.0 && cfg.evaluate.alpha < 1.0) {
        out.push("evaluate.alpha must be in (0, 1)".into());
    }
    let mut paths: Vec<&Path> = vec![cfg.run.output_dir.as_path()];
    paths.extend(cfg.corpus.path.as_deref());
    paths.extend(cfg.backbone.predictions.as_deref());
    let distinct: BTreeSet<_> = paths.iter().collect();
    if distinct.len() != paths.len() {
        out.push("corpus, predictions and output paths must be distinct".into());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn valid() -> PipelineConfig {
        PipelineConfig {
            synth: Some(SynthSpec::default()),
            ..PipelineConfig::default()
        }
    }

    #[test]
    fn valid_config_has_no_violations() {
        assert!(validate_config(&valid()).is_empty(), "{:?}", validate_config(&valid()));
    }

    #[test]
    fn bad_threshold_and_duplicate_priority() {
        let mut c = valid();
        c.heuristic.threshold = Some(1.3);
        assert!(validate_config(&c).iter().any(|v| v.contains("threshold")));
        let mut c = valid();
        c.heuristic.priority = vec![AttributeKind::Domain, AttributeKind::Domain];
        assert!(validate_config(&c).iter().any(|v| v.contains("distinct")));
    }

    #[test]
    fn missing_inputs() {
        let c = PipelineConfig::default();
        assert!(!validate_config(&c).is_empty());
        let mut c = valid();
        c.backbone.enabled = false;
        assert!(validate_config(&c).iter().any(|v| v.contains("predictions")));
    }

    #[test]
    fn toml_round_trip() {
        let c = valid();
        let text = c.to_toml_string().unwrap();
        assert_eq!(PipelineConfig::from_toml_str(&text).unwrap(), c);
    }

    #[test]
    fn env_overrides_apply() {
        let text = "[run]\nname = \"a\"\n[sffn]\nepochs = 5\n";
        let vars = vec![
            ("FUSIONET_SFFN_EPOCHS".to_string(), "7".to_string()),
            ("FUSIONET_SFFN_MC_PASSES".to_string(), "11".to_string()),
            ("FUSIONET_RUN_NAME".to_string(), "b".to_string()),
            ("FUSIONET_HEURISTIC_PRIORITY".to_string(), "[\"domain\"]".to_string()),
            ("HOME".to_string(), "/root".to_string()),
        ];
        let c = PipelineConfig::from_toml_with_env(text, vars).unwrap();
        assert_eq!(c.sffn.epochs, 7);
        assert_eq!(c.sffn.mc_passes, 11);
        assert_eq!(c.run.name, "b");
        assert_eq!(c.heuristic.priority, vec![AttributeKind::Domain]);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(PipelineConfig::from_toml_str("[sffn]\nepoch = 3\n").is_err());
    }
}
