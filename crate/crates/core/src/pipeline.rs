//! End-to-end pipeline: ingest, backbone, ensemble, stats, features,
//! oversample, sffn, heuristic, evaluate. Each stage writes its artifacts
//! into the run directory before the next one starts, and the manifest is
//! rewritten after every completed stage.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::backbone::{fit_bow, predict_bow, read_predictions, write_predictions, PredictionMatrix};
use crate::config::{validate_config, PipelineConfig};
use crate::corpus::{self, Dataset, LabeledItem, RawRecord};
use crate::ensemble::{vote, write_ensemble, EnsembleResult};
use crate::error::{Error, Result};
use crate::evalkit::{
    classification_metrics, emit_report, mcnemar, McNemarMode, McNemarResult, ReportFormat, SplitReport,
};
use crate::fixtures;
use crate::heuristic::{decide, postprocess, select_threshold_elbow, write_traces, ElbowSelection, HeuristicTrace};
use crate::label::{ClassLabel, ProbPair};
use crate::oversample::oversample_table;
use crate::seed;
use crate::sffn::{predict_mc_batch, train_sffn, write_uncertain, UncertainPrediction, Validation};
use crate::stat_features::{
    attribute_evidence, build_features, feature_columns, fit_stats, AttributeStatsTable, BaseMode, FeatureBase,
    FeatureTable,
};

pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

pub const STAGES: [&str; 9] = [
    "ingest",
    "backbone",
    "ensemble",
    "stats",
    "features",
    "oversample",
    "sffn",
    "heuristic",
    "evaluate",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Artifact {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageEntry {
    pub index: usize,
    pub name: String,
    pub skipped: bool,
    pub artifacts: Vec<Artifact>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub run_name: String,
    /// Hash of the configuration with the output directory left out.
    pub config_hash: String,
    pub root_seed: u64,
    pub seeds: BTreeMap<String, u64>,
    pub stages: Vec<StageEntry>,
}

impl Manifest {
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn stage(&self, name: &str) -> Option<&StageEntry> {
        self.stages.iter().find(|s| s.name == name)
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub run_dir: PathBuf,
    pub manifest: Manifest,
    pub reports: Vec<SplitReport>,
    pub threshold: f64,
    pub elbow: Option<ElbowSelection>,
    pub mcnemar: McNemarResult,
}

impl RunOutcome {
    pub fn report(&self, split: &str) -> Option<&SplitReport> {
        self.reports.iter().find(|r| r.split == split)
    }
}

/// Hash identifying what a config computes, independent of where it writes.
pub fn experiment_hash(cfg: &PipelineConfig) -> String {
    let mut c = cfg.clone();
    c.run.output_dir = PathBuf::new();
    c.hash()
}

pub fn stage_seed(root: u64, stage: &str) -> u64 {
    seed::derive(root, stage)
}

struct Runner {
    dir: PathBuf,
    manifest: Manifest,
}

impl Runner {
    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn seed(&mut self, name: &str) -> u64 {
        let s = stage_seed(self.manifest.root_seed, name);
        self.manifest.seeds.insert(name.to_string(), s);
        s
    }

    fn save_manifest(&self) -> Result<()> {
        let path = self.path(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(&self.manifest)? + "\n";
        std::fs::write(&path, text).map_err(|e| Error::io(path, e))
    }

    /// Run stage `name`; `f` returns the artifact file names it wrote, or
    /// `None` when the stage was skipped.
    fn stage<T>(
        &mut self,
        name: &str,
        f: impl FnOnce(&mut Self) -> Result<(T, Option<Vec<String>>)>,
    ) -> Result<T> {
        let index = STAGES.iter().position(|s| *s == name).expect("known stage") + 1;
        log::info!("stage {index}/{}: {name}", STAGES.len());
        let wrap = |e: Error| Error::Stage {
            stage: name.to_string(),
            index,
            source: Box::new(e),
        };
        let (value, written) = f(self).map_err(wrap)?;
        let mut artifacts = Vec::new();
        for file in written.iter().flatten() {
            let path = self.path(file);
            let bytes = std::fs::read(&path).map_err(|e| wrap(Error::io(&path, e)))?;
            artifacts.push(Artifact {
                path: file.clone(),
                sha256: seed::sha256_hex(&bytes),
            });
        }
        self.manifest.stages.push(StageEntry {
            index,
            name: name.to_string(),
            skipped: written.is_none(),
            artifacts,
        });
        self.save_manifest().map_err(wrap)?;
        Ok(value)
    }
}

struct Splits {
    train: Dataset,
    validation: Dataset,
    test: Dataset,
}

impl Splits {
    fn all_items(&self) -> Vec<LabeledItem> {
        [&self.train, &self.validation, &self.test]
            .iter()
            .flat_map(|d| d.items().iter().cloned())
            .collect()
    }
}

fn load_corpus(cfg: &PipelineConfig) -> Result<Dataset> {
    let records = match (&cfg.corpus.path, &cfg.synth) {
        (Some(path), _) => corpus::read_raw_jsonl(path)?,
        (None, Some(spec)) => fixtures::generate(spec)?
            .into_items()
            .into_iter()
            .map(|it| RawRecord {
                id: it.id,
                text: it.text,
                label: it.label,
                attributes: Some(it.attributes),
                metadata: BTreeMap::new(),
            })
            .collect(),
        (None, None) => return Err(Error::Config("no corpus configured".into())),
    };
    corpus::ingest(records, cfg.corpus.kind)
}

fn labels_of(items: &[LabeledItem]) -> Result<Vec<ClassLabel>> {
    items
        .iter()
        .map(|it| {
            it.label
                .ok_or_else(|| Error::invalid(format!("item {} has no label", it.id)))
        })
        .collect()
}

fn feature_table(
    d: &Dataset,
    base: FeatureBase<'_>,
    table: &AttributeStatsTable,
    cfg: &PipelineConfig,
) -> Result<FeatureTable> {
    let vectors = build_features(d.items(), base, table, &cfg.features.kinds)?;
    let labels = d.items().iter().map(|it| it.label).collect();
    FeatureTable::from_vectors(feature_columns(&base, &cfg.features.kinds), &vectors, labels)
}

fn ensemble_subset(e: &EnsembleResult, items: &[LabeledItem]) -> Result<(Vec<ProbPair>, Vec<ClassLabel>)> {
    items
        .iter()
        .map(|it| {
            e.get(&it.id)
                .ok_or_else(|| Error::MissingItem(it.id.clone()))
                .map(|x| (x.soft, x.label_soft))
        })
        .collect::<Result<Vec<_>>>()
        .map(|v| v.into_iter().unzip())
}

/// Run every stage in order and return the final reports.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<RunOutcome> {
    let violations = validate_config(cfg);
    if !violations.is_empty() {
        return Err(Error::Config(violations.join("; ")));
    }
    let dir = cfg.run_dir();
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let mut r = Runner {
        dir,
        manifest: Manifest {
            format_version: MANIFEST_VERSION,
            run_name: cfg.run.name.clone(),
            config_hash: experiment_hash(cfg),
            root_seed: cfg.run.seed,
            seeds: BTreeMap::new(),
            stages: Vec::new(),
        },
    };

    let splits = r.stage("ingest", |r| {
        let split_seed = r.seed("split");
        let all = load_corpus(cfg)?;
        all.write_jsonl(r.path("corpus.jsonl"))?;
        let (train, validation, test) = corpus::split_dataset(&all, cfg.corpus.ratios(), split_seed)?;
        train.write_jsonl(r.path("train.jsonl"))?;
        validation.write_jsonl(r.path("validation.jsonl"))?;
        test.write_jsonl(r.path("test.jsonl"))?;
        let files = ["corpus.jsonl", "train.jsonl", "validation.jsonl", "test.jsonl"];
        Ok((
            Splits {
                train,
                validation,
                test,
            },
            Some(files.iter().map(|s| s.to_string()).collect()),
        ))
    })?;

    r.stage("backbone", |r| {
        if !cfg.backbone.enabled {
            return Ok(((), None));
        }
        let base = r.seed("backbone");
        let items = splits.all_items();
        let mut parts = Vec::new();
        for i in 1..=cfg.backbone.models {
            let name = format!("bow{i}");
            let bow = cfg.backbone.bow(seed::derive(base, &name));
            let (model, _) = fit_bow(&name, &splits.train, &bow)?;
            parts.push(predict_bow(&model, &items));
        }
        write_predictions(&PredictionMatrix::hstack(&parts)?, r.path("predictions.csv"))?;
        Ok(((), Some(vec!["predictions.csv".into()])))
    })?;

    let (matrix, ensemble) = r.stage("ensemble", |r| {
        let source = if cfg.backbone.enabled {
            r.path("predictions.csv")
        } else {
            cfg.backbone.predictions.clone().expect("validated")
        };
        let matrix = read_predictions(&source)?;
        let e = vote(&matrix, cfg.ensemble.tie)?;
        write_ensemble(&e, cfg.ensemble.mode, r.path("ensemble.csv"))?;
        Ok(((matrix, e), Some(vec!["ensemble.csv".into()])))
    })?;

    let table = r.stage("stats", |r| {
        let t = fit_stats(splits.train.items(), &cfg.features.kinds)?;
        t.write_csv(r.path("attribute_stats.csv"))?;
        Ok((t, Some(vec!["attribute_stats.csv".into()])))
    })?;

    let (f_train, f_val, f_test) = r.stage("features", |r| {
        let base = match cfg.features.base {
            BaseMode::Ensemble => FeatureBase::Ensemble(&ensemble),
            BaseMode::Raw => FeatureBase::Raw(&matrix),
        };
        let tables = (
            feature_table(&splits.train, base, &table, cfg)?,
            feature_table(&splits.validation, base, &table, cfg)?,
            feature_table(&splits.test, base, &table, cfg)?,
        );
        tables.0.write_csv(r.path("features_train.csv"))?;
        tables.1.write_csv(r.path("features_validation.csv"))?;
        tables.2.write_csv(r.path("features_test.csv"))?;
        let files = ["features_train.csv", "features_validation.csv", "features_test.csv"];
        Ok((tables, Some(files.iter().map(|s| s.to_string()).collect())))
    })?;

    let f_aug = r.stage("oversample", |r| {
        let aug = if cfg.oversample.enabled {
            let s = r.seed("oversample");
            oversample_table(&f_train, cfg.oversample.target_ratio, &cfg.oversample.config(s))?
        } else {
            f_train.clone()
        };
        aug.write_csv(r.path("features_train_oversampled.csv"))?;
        Ok((aug, Some(vec!["features_train_oversampled.csv".into()])))
    })?;

    let (pred_val, pred_test) = r.stage("sffn", |r| {
        let train_seed = r.seed("sffn-train");
        let mc_seed = r.seed("sffn-mc");
        let val_labels = f_val.labeled()?;
        let (model, report) = train_sffn(
            &f_aug.rows,
            &f_aug.labeled()?,
            &cfg.sffn.train_config(train_seed),
            &f_aug.schema_hash(),
            Some(Validation {
                rows: &f_val.rows,
                labels: &val_labels,
            }),
        )?;
        model.save(r.path("sffn_model.json"))?;
        let report_path = r.path("sffn_train.json");
        std::fs::write(&report_path, serde_json::to_string_pretty(&report)? + "\n")
            .map_err(|e| Error::io(&report_path, e))?;
        let n = cfg.sffn.mc_passes;
        let pv = predict_mc_batch(&model, &f_val.ids, &f_val.rows, n, mc_seed)?;
        let pt = predict_mc_batch(&model, &f_test.ids, &f_test.rows, n, mc_seed)?;
        write_uncertain(&pv, r.path("sffn_validation.csv"))?;
        write_uncertain(&pt, r.path("sffn_test.csv"))?;
        let files = ["sffn_model.json", "sffn_train.json", "sffn_validation.csv", "sffn_test.csv"];
        Ok(((pv, pt), Some(files.iter().map(|s| s.to_string()).collect())))
    })?;

    let vp = |p: &[UncertainPrediction]| p.iter().map(|u| u.v_p).collect::<Vec<_>>();

    let (threshold, elbow, traces_val, traces_test) = r.stage("heuristic", |r| {
        let val_items = splits.validation.items();
        let (threshold, elbow) = match cfg.heuristic.threshold {
            Some(t) => (t, None),
            None if !cfg.heuristic.enabled => (1.0, None),
            None => {
                let evidence: Vec<_> = val_items
                    .iter()
                    .map(|it| attribute_evidence(&table, it, &cfg.heuristic.priority))
                    .collect();
                let sel = select_threshold_elbow(
                    &evidence,
                    &vp(&pred_val),
                    &labels_of(val_items)?,
                    &cfg.heuristic.grid,
                    cfg.evaluate.averaging,
                )?;
                (sel.threshold, Some(sel))
            }
        };
        let h = cfg.heuristic.config(threshold);
        let tv = postprocess(val_items, &vp(&pred_val), &table, &h)?;
        let tt = postprocess(splits.test.items(), &vp(&pred_test), &table, &h)?;
        write_traces(&tv, r.path("traces_validation.jsonl"))?;
        write_traces(&tt, r.path("traces_test.jsonl"))?;
        #[derive(Serialize)]
        struct Selection<'a> {
            threshold: f64,
            selected_by: &'a str,
            curve: Option<&'a [(f64, f64)]>,
        }
        let sel = Selection {
            threshold,
            selected_by: if elbow.is_some() { "elbow" } else { "config" },
            curve: elbow.as_ref().map(|e| e.curve.as_slice()),
        };
        let path = r.path("heuristic.json");
        std::fs::write(&path, serde_json::to_string_pretty(&sel)? + "\n").map_err(|e| Error::io(&path, e))?;
        let files = ["heuristic.json", "traces_validation.jsonl", "traces_test.jsonl"];
        Ok(((threshold, elbow, tv, tt), Some(files.iter().map(|s| s.to_string()).collect())))
    })?;

    let (reports, test_mcnemar) = r.stage("evaluate", |r| {
        let avg = cfg.evaluate.averaging;
        let mut reports = Vec::new();
        let mut test_mcnemar = None;
        for (name, d, preds, traces) in [
            ("validation", &splits.validation, &pred_val, &traces_val),
            ("test", &splits.test, &pred_test, &traces_test),
        ] {
            let gold = labels_of(d.items())?;
            let (e_probs, e_soft) = ensemble_subset(&ensemble, d.items())?;
            let e_labels = match cfg.ensemble.mode {
                crate::ensemble::VoteMode::Soft => e_soft,
                crate::ensemble::VoteMode::Hard => d
                    .items()
                    .iter()
                    .map(|it| ensemble.get(&it.id).map(|x| x.label_hard).expect("checked above"))
                    .collect(),
            };
            let s_probs = vp(preds);
            let s_labels: Vec<ClassLabel> = s_probs.iter().map(|p| decide(&[], *p, 1.0).label()).collect();
            let p_labels: Vec<ClassLabel> = traces.iter().map(|t: &HeuristicTrace| t.label).collect();
            for (variant, labels, probs) in [
                ("ensemble", &e_labels, &e_probs),
                ("sffn", &s_labels, &s_probs),
                ("pipeline", &p_labels, &s_probs),
            ] {
                reports.push(SplitReport {
                    split: format!("{name}/{variant}"),
                    metrics: classification_metrics(labels, &gold, avg)?.with_scores(probs, &gold)?,
                });
            }
            if name == "test" {
                test_mcnemar = Some(mcnemar(&p_labels, &e_labels, &gold, cfg.evaluate.alpha, McNemarMode::Exact)?);
            }
        }
        let m = test_mcnemar.expect("test split evaluated");
        emit_report(&reports, ReportFormat::Json, r.path("report.json"))?;
        emit_report(&reports, ReportFormat::Csv, r.path("report.csv"))?;
        emit_report(&reports, ReportFormat::Text, r.path("report.txt"))?;
        let path = r.path("mcnemar.json");
        std::fs::write(&path, serde_json::to_string_pretty(&m)? + "\n").map_err(|e| Error::io(&path, e))?;
        let files = ["report.json", "report.csv", "report.txt", "mcnemar.json"];
        Ok(((reports, m), Some(files.iter().map(|s| s.to_string()).collect())))
    })?;

    Ok(RunOutcome {
        run_dir: r.dir.clone(),
        manifest: r.manifest,
        reports,
        threshold,
        elbow,
        mcnemar: test_mcnemar,
    })
}

/// Threshold recorded by the heuristic stage of a finished run.
pub fn read_run_threshold(run_dir: impl AsRef<Path>) -> Result<f64> {
    let path = run_dir.as_ref().join("heuristic.json");
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let v: serde_json::Value = serde_json::from_str(&text)?;
    v["threshold"]
        .as_f64()
        .ok_or_else(|| Error::invalid(format!("{}: no threshold", path.display())))
}

/// Attribute-priority ablation over the validation and test splits of a
/// finished run, using its statistics table and SFFN predictions.
pub fn ablate_run(
    run_dir: impl AsRef<Path>,
    orderings: &[Vec<crate::corpus::AttributeKind>],
    modes: &[crate::heuristic::ThresholdMode],
    threshold: Option<f64>,
    averaging: crate::evalkit::Averaging,
) -> Result<Vec<crate::heuristic::AblationRow>> {
    use crate::corpus::SplitTag;
    use crate::heuristic::{run_ablation, AblationSplit};

    let dir = run_dir.as_ref();
    let threshold = match threshold {
        Some(t) => t,
        None => read_run_threshold(dir)?,
    };
    let table = AttributeStatsTable::read_csv(dir.join("attribute_stats.csv"))?;
    let mut loaded = Vec::new();
    for (name, tag) in [("validation", SplitTag::Validation), ("test", SplitTag::Test)] {
        let d = Dataset::read_jsonl(dir.join(format!("{name}.jsonl")), tag)?;
        let preds = crate::sffn::read_uncertain(dir.join(format!("sffn_{name}.csv")))?;
        let by_id: BTreeMap<&str, ProbPair> = preds.iter().map(|p| (p.item_id.as_str(), p.v_p)).collect();
        let model = d
            .items()
            .iter()
            .map(|it| by_id.get(it.id.as_str()).copied().ok_or_else(|| Error::MissingItem(it.id.clone())))
            .collect::<Result<Vec<_>>>()?;
        loaded.push((name, d, model));
    }
    let splits: Vec<AblationSplit<'_>> = loaded
        .iter()
        .map(|(name, d, model)| AblationSplit {
            name,
            items: d.items(),
            model,
        })
        .collect();
    run_ablation(&table, &splits, orderings, modes, threshold, averaging)
}
