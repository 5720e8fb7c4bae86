use std::collections::BTreeMap;
use std::path::Path;
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};

use fusionet::backbone::{fit_bow, predict_bow, read_predictions, write_predictions, BowModel, PredictionMatrix};
use fusionet::config::{validate_config, PipelineConfig};
use fusionet::corpus::{self, parse_kinds, Dataset, SplitRatios, SplitTag};
use fusionet::ensemble::{read_ensemble, vote, write_ensemble};
use fusionet::error::Error;
use fusionet::evalkit::{
    brier, classification_metrics, mcnemar, nll, read_label_file, render_report, LabeledPrediction,
    ReportFormat, SplitReport,
};
use fusionet::fixtures::{generate, SynthSpec};
use fusionet::heuristic::{
    default_grid, postprocess, select_threshold_elbow, write_ablation, write_traces, HeuristicConfig,
    ThresholdMode,
};
use fusionet::label::{ClassLabel, ProbPair};
use fusionet::oversample::{oversample_table, OversampleConfig};
use fusionet::pipeline::{ablate_run, run_pipeline};
use fusionet::sffn::{load_model, predict_mc_batch, train_sffn, write_uncertain, TrainConfig, Validation};
use fusionet::stat_features::{
    attribute_evidence, build_features, feature_columns, fit_stats, AttributeStatsTable, FeatureBase, FeatureTable,
};

use crate::{BackboneAction, Command, EvaluateArgs, FeaturesArgs, OversampleArgs, PostprocessArgs, SffnAction};

/// 2 for configuration problems, 10 + stage index for pipeline stage
/// failures, 1 otherwise.
pub fn exit_code(e: &anyhow::Error) -> u8 {
    match e.downcast_ref::<Error>() {
        Some(Error::Stage { index, .. }) => 10 + *index as u8,
        Some(Error::Config(_)) => 2,
        _ => 1,
    }
}

/// The error chain joined by `: `, skipping causes already quoted by an
/// outer message.
pub fn describe(e: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in e.chain() {
        let msg = cause.to_string();
        if out.contains(&msg) {
            continue;
        }
        if !out.is_empty() {
            out.push_str(": ");
        }
        out.push_str(&msg);
    }
    out
}

pub fn dispatch(cmd: Command) -> Result<ExitCode> {
    match cmd {
        Command::Ingest { input, kind, out } => {
            let records = corpus::read_raw_jsonl(&input)?;
            let d = corpus::ingest(records, kind.parse()?)?;
            d.write_jsonl(&out)?;
            println!("ingested {} items -> {}", d.len(), out.display());
        }
        Command::Split {
            input,
            ratios,
            seed,
            out_dir,
        } => {
            let d = Dataset::read_jsonl(&input, SplitTag::Unsplit)?;
            let (train, val, test) = corpus::split_dataset(&d, SplitRatios::parse(&ratios)?, seed)?;
            std::fs::create_dir_all(&out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
            for (name, part) in [("train", &train), ("validation", &val), ("test", &test)] {
                part.write_jsonl(out_dir.join(format!("{name}.jsonl")))?;
                println!("{name}: {}", part.len());
            }
        }
        Command::Synth {
            spec,
            n_items,
            seed,
            out,
        } => {
            let mut s = match spec {
                Some(p) => SynthSpec::from_toml_str(&read(&p)?)?,
                None => SynthSpec::benchmark(),
            };
            if let Some(n) = n_items {
                s.n_items = n;
            }
            if let Some(seed) = seed {
                s.seed = seed;
            }
            let d = generate(&s)?;
            d.write_jsonl(&out)?;
            println!("generated {} items -> {}", d.len(), out.display());
        }
        Command::Backbone { action } => backbone(action)?,
        Command::Ensemble { preds, mode, tie, out } => {
            let parts = preds
                .iter()
                .map(|p| read_predictions(p).with_context(|| format!("reading {}", p.display())))
                .collect::<Result<Vec<_>>>()?;
            let m = PredictionMatrix::hstack(&parts)?;
            let e = vote(&m, tie.parse()?)?;
            write_ensemble(&e, mode.parse()?, &out)?;
            println!("{} items, {} models -> {}", e.items.len(), e.n_models, out.display());
        }
        Command::Stats { train, kinds, out } => {
            let d = Dataset::read_jsonl(&train, SplitTag::Train)?;
            let t = fit_stats(d.items(), &parse_kinds(&kinds)?)?;
            t.write_csv(&out)?;
            println!("{} attribute values -> {}", t.len(), out.display());
        }
        Command::Features(args) => features(args)?,
        Command::Oversample(args) => oversample(args)?,
        Command::Sffn { action } => sffn(action)?,
        Command::Postprocess(args) => postprocess_cmd(args)?,
        Command::Ablate {
            run_dir,
            orderings,
            modes,
            threshold,
            avg,
            out,
        } => {
            let orderings = orderings
                .iter()
                .map(|o| parse_kinds(o))
                .collect::<fusionet::error::Result<Vec<_>>>()?;
            let modes = modes
                .split(',')
                .map(|m| m.trim().parse::<ThresholdMode>())
                .collect::<fusionet::error::Result<Vec<_>>>()?;
            let rows = ablate_run(&run_dir, &orderings, &modes, threshold, avg.parse()?)?;
            println!("{:<24} {:<8} {:>9} {:<11} {:>7}", "ordering", "mode", "threshold", "split", "f1");
            for r in &rows {
                println!(
                    "{:<24} {:<8} {:>9.2} {:<11} {:>7.4}",
                    r.ordering,
                    r.mode.as_str(),
                    r.threshold,
                    r.split,
                    r.f1
                );
            }
            if let Some(out) = out {
                write_ablation(&rows, out)?;
            }
        }
        Command::Evaluate(args) => evaluate(args)?,
        Command::Mcnemar {
            a,
            b,
            gold,
            mode,
            alpha,
        } => {
            let gold = gold_labels(&gold)?;
            let pa = read_label_file(&a)?;
            let pb: BTreeMap<String, ClassLabel> =
                read_label_file(&b)?.into_iter().map(|p| (p.item_id, p.label)).collect();
            let mut la = Vec::new();
            let mut lb = Vec::new();
            let mut lg = Vec::new();
            for p in &pa {
                la.push(p.label);
                lb.push(*pb.get(&p.item_id).ok_or_else(|| anyhow!("{} missing from {}", p.item_id, b.display()))?);
                lg.push(lookup_gold(&gold, &p.item_id)?);
            }
            let r = mcnemar(&la, &lb, &lg, alpha, mode.parse()?)?;
            println!("b (a right, b wrong) = {}", r.b);
            println!("c (a wrong, b right) = {}", r.c);
            println!("statistic = {}", r.statistic);
            println!("p_value = {:e}", r.p_value);
            println!("reject at alpha {} = {}", r.alpha, r.reject);
            if r.degenerate {
                println!("degenerate: no discordant pairs");
            }
        }
        Command::Run { config } => {
            let cfg = PipelineConfig::load(&config)?;
            let out = run_pipeline(&cfg)?;
            println!("run directory: {}", out.run_dir.display());
            println!("heuristic threshold: {}", out.threshold);
            for r in &out.reports {
                println!(
                    "{:<20} f1 {:.4}  acc {:.4}  nll {:.4}  brier {:.4}",
                    r.split,
                    r.metrics.f1,
                    r.metrics.accuracy,
                    r.metrics.nll.unwrap_or(f64::NAN),
                    r.metrics.brier.unwrap_or(f64::NAN)
                );
            }
            println!(
                "mcnemar pipeline vs ensemble (test): b={} c={} p={:e}",
                out.mcnemar.b, out.mcnemar.c, out.mcnemar.p_value
            );
        }
        Command::Validate { config } => {
            let cfg = PipelineConfig::load(&config)?;
            let v = validate_config(&cfg);
            if v.is_empty() {
                println!("ok");
            } else {
                for x in &v {
                    println!("{x}");
                }
                return Ok(ExitCode::from(2));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn read(p: &Path) -> Result<String> {
    std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))
}

fn backbone(action: BackboneAction) -> Result<()> {
    match action {
        BackboneAction::Train {
            model: _,
            train,
            name,
            seed,
            bootstrap,
            epochs,
            lr,
            l2,
            min_token_freq,
            out,
        } => {
            let d = Dataset::read_jsonl(&train, SplitTag::Train)?;
            let cfg = fusionet::backbone::BowConfig {
                min_token_freq,
                l2,
                epochs,
                lr,
                seed,
                bootstrap,
            };
            let (m, history) = fit_bow(&name, &d, &cfg)?;
            m.save(&out)?;
            println!(
                "{}: vocabulary {}, loss {:.4} -> {:.4}",
                name,
                m.vocabulary.len(),
                history[0],
                history[history.len() - 1]
            );
        }
        BackboneAction::Predict {
            model: _,
            weights,
            input,
            out,
        } => {
            let m = BowModel::load(&weights)?;
            let d = Dataset::read_jsonl(&input, SplitTag::Unsplit)?;
            write_predictions(&predict_bow(&m, d.items()), &out)?;
            println!("{} predictions -> {}", d.len(), out.display());
        }
    }
    Ok(())
}

fn features(args: FeaturesArgs) -> Result<()> {
    let d = Dataset::read_jsonl(&args.items, SplitTag::Unsplit)?;
    let table = AttributeStatsTable::read_csv(&args.stats)?;
    let kinds = parse_kinds(&args.kinds)?;
    let (ens, raw);
    let base = match (&args.ensemble, &args.pred) {
        (Some(p), _) => {
            ens = read_ensemble(p)?;
            FeatureBase::Ensemble(&ens)
        }
        (None, Some(p)) => {
            raw = read_predictions(p)?;
            FeatureBase::Raw(&raw)
        }
        (None, None) => bail!("one of --ensemble or --pred is required"),
    };
    let vectors = build_features(d.items(), base, &table, &kinds)?;
    let labels = d.items().iter().map(|it| it.label).collect();
    let t = FeatureTable::from_vectors(feature_columns(&base, &kinds), &vectors, labels)?;
    t.write_csv(&args.out)?;
    println!("{} rows x {} features -> {}", t.len(), t.dim(), args.out.display());
    Ok(())
}

fn oversample(args: OversampleArgs) -> Result<()> {
    let t = FeatureTable::read_csv(&args.input)?;
    let cfg = OversampleConfig {
        method: args.method.parse()?,
        k_neighbors: args.k_neighbors,
        clusters: args.clusters,
        imbalance_threshold: args.imbalance_threshold,
        density_exponent: args.density_exponent,
        seed: args.seed,
    };
    let aug = oversample_table(&t, args.target_ratio, &cfg)?;
    aug.write_csv(&args.out)?;
    println!("{} rows ({} synthetic) -> {}", aug.len(), aug.len() - t.len(), args.out.display());
    Ok(())
}

fn sffn(action: SffnAction) -> Result<()> {
    match action {
        SffnAction::Train {
            train,
            validation,
            out,
            seed,
            hidden,
            lr,
            weight_decay,
            batch_size,
            epochs,
            dropout,
            patience,
        } => {
            let t = FeatureTable::read_csv(&train)?;
            let hidden = hidden
                .split(',')
                .map(|h| h.trim().parse::<usize>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .context("--hidden expects comma-separated widths")?;
            let cfg = TrainConfig {
                hidden,
                lr,
                weight_decay,
                batch_size,
                epochs,
                dropout,
                patience,
                seed,
                ..TrainConfig::default()
            };
            let v = validation.map(|p| FeatureTable::read_csv(&p)).transpose()?;
            if let Some(v) = &v {
                if v.schema_hash() != t.schema_hash() {
                    bail!("validation features use different columns than training features");
                }
            }
            let v_labels = v.as_ref().map(|v| v.labeled()).transpose()?;
            let val = v.as_ref().zip(v_labels.as_ref()).map(|(v, l)| Validation {
                rows: &v.rows,
                labels: l,
            });
            let (m, report) = train_sffn(&t.rows, &t.labeled()?, &cfg, &t.schema_hash(), val)?;
            m.save(&out)?;
            println!(
                "epochs {} (best {}), train loss {:.4} -> {:.4}",
                report.epochs_run, report.best_epoch, report.initial_train_loss, report.final_train_loss
            );
            if let Some(l) = report.best_validation_loss {
                println!("best validation loss {l:.4}");
            }
        }
        SffnAction::Predict {
            model,
            features,
            mc_passes,
            seed,
            out,
        } => {
            let t = FeatureTable::read_csv(&features)?;
            let m = load_model(&model, Some(&t.schema_hash()))?;
            let preds = predict_mc_batch(&m, &t.ids, &t.rows, mc_passes, seed)?;
            write_uncertain(&preds, &out)?;
            let mean_u = preds.iter().map(|p| p.uncertainty()).sum::<f64>() / preds.len().max(1) as f64;
            println!("{} predictions, mean uncertainty {:.6} -> {}", preds.len(), mean_u, out.display());
        }
    }
    Ok(())
}

fn probs_by_id(preds: &[LabeledPrediction], source: &Path) -> Result<BTreeMap<String, ProbPair>> {
    preds
        .iter()
        .map(|p| {
            p.probs
                .map(|q| (p.item_id.clone(), q))
                .ok_or_else(|| anyhow!("{} has no p_real/p_fake columns", source.display()))
        })
        .collect()
}

fn postprocess_cmd(args: PostprocessArgs) -> Result<()> {
    let d = Dataset::read_jsonl(&args.items, SplitTag::Unsplit)?;
    let table = AttributeStatsTable::read_csv(&args.stats)?;
    let by_id = probs_by_id(&read_label_file(&args.pred)?, &args.pred)?;
    let model = d
        .items()
        .iter()
        .map(|it| by_id.get(&it.id).copied().ok_or_else(|| anyhow!("no prediction for {}", it.id)))
        .collect::<Result<Vec<_>>>()?;
    let priority = parse_kinds(&args.priority)?;
    let threshold = match args.threshold {
        Some(t) => t,
        None => {
            let evidence: Vec<_> = d
                .items()
                .iter()
                .map(|it| attribute_evidence(&table, it, &priority))
                .collect();
            let sel = select_threshold_elbow(
                &evidence,
                &model,
                &d.labels()?,
                &default_grid(),
                fusionet::evalkit::Averaging::Weighted,
            )?;
            println!("elbow threshold {}", sel.threshold);
            sel.threshold
        }
    };
    let cfg = HeuristicConfig {
        priority,
        threshold,
        enabled: true,
    };
    cfg.validate()?;
    let traces = postprocess(d.items(), &model, &table, &cfg)?;
    write_traces(&traces, &args.trace)?;
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for t in &traces {
        *counts.entry(t.fired_branch.to_string()).or_default() += 1;
    }
    for (branch, n) in counts {
        println!("{branch:<12} {n}");
    }
    Ok(())
}

fn gold_labels(path: &Path) -> Result<BTreeMap<String, Option<ClassLabel>>> {
    let d = Dataset::read_jsonl(path, SplitTag::Unsplit)?;
    Ok(d.into_items().into_iter().map(|it| (it.id, it.label)).collect())
}

fn lookup_gold(gold: &BTreeMap<String, Option<ClassLabel>>, id: &str) -> Result<ClassLabel> {
    gold.get(id)
        .copied()
        .flatten()
        .ok_or_else(|| anyhow!("no gold label for {id}"))
}

fn evaluate(args: EvaluateArgs) -> Result<()> {
    let gold_map = gold_labels(&args.gold)?;
    let preds = read_label_file(&args.pred)?;
    let gold = preds
        .iter()
        .map(|p| lookup_gold(&gold_map, &p.item_id))
        .collect::<Result<Vec<_>>>()?;
    let labels: Vec<ClassLabel> = preds.iter().map(|p| p.label).collect();
    let probs: Option<Vec<ProbPair>> = preds.iter().map(|p| p.probs).collect();
    let mut m = classification_metrics(&labels, &gold, args.avg.parse()?)?;
    match args.metrics.as_str() {
        "all" | "scores" => {
            if let Some(p) = &probs {
                m.nll = Some(nll(p, &gold));
                m.brier = Some(brier(p, &gold));
            } else if args.metrics == "scores" {
                bail!("{} has no probabilities to score", args.pred.display());
            }
        }
        "classification" => {}
        other => bail!("unknown metrics selection {other:?}"),
    }
    let report = [SplitReport {
        split: args.split,
        metrics: m,
    }];
    let text = render_report(&report, args.format.parse::<ReportFormat>()?)?;
    match args.out {
        Some(out) => std::fs::write(&out, text).with_context(|| format!("writing {}", out.display()))?,
        None => print!("{text}"),
    }
    Ok(())
}
