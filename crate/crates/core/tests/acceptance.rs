use std::collections::BTreeMap;
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::Rng;

use fusionet::backbone::PredictionMatrix;
use fusionet::config::PipelineConfig;
use fusionet::corpus::AttributeKind;
use fusionet::ensemble::vote;
use fusionet::evalkit::{brier, mcnemar_from_counts, nll, McNemarMode};
use fusionet::fixtures::{reference_tables, REFERENCE_TOLERANCE};
use fusionet::heuristic::{apply_heuristic, HeuristicConfig};
use fusionet::label::{ClassLabel, ProbPair};
use fusionet::oversample::{kmeans_smote, smote, Augmented, OversampleConfig, OversampleMethod};
use fusionet::pipeline::run_pipeline;
use fusionet::seed;
use fusionet::sffn::{gradient_check, mc_passes, predict_mc, SffnModel};
use fusionet::stat_features::fit_stats;

type Check = Result<String, String>;

struct Criterion {
    name: &'static str,
    limit: Duration,
    run: fn() -> Check,
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn grid_pairs(values: &[f64]) -> Vec<ProbPair> {
    values.iter().map(|&r| ProbPair::new(r, 1.0 - r)).collect()
}

fn voting_oracle() -> Check {
    let grid = grid_pairs(&[0.0, 0.25, 0.5, 0.75, 1.0]);
    let mut checked = 0usize;
    for n in 1..=4usize {
        let mut rows = Vec::new();
        let total = grid.len().pow(n as u32);
        for code in 0..total {
            let mut c = code;
            let row: Vec<ProbPair> = (0..n)
                .map(|_| {
                    let p = grid[c % grid.len()];
                    c /= grid.len();
                    p
                })
                .collect();
            rows.push(row);
        }
        let ids: Vec<String> = (0..rows.len()).map(|i| format!("x{i}")).collect();
        let names = (0..n).map(|i| format!("m{i}")).collect();
        let m = PredictionMatrix::new(names, ids, rows.clone()).map_err(|e| e.to_string())?;
        for tie in [ClassLabel::Real, ClassLabel::Fake] {
            let out = vote(&m, tie).map_err(|e| e.to_string())?;
            for (row, got) in rows.iter().zip(&out.items) {
                let mut pr = 0.0;
                let mut pf = 0.0;
                let mut vr = 0usize;
                let mut vf = 0usize;
                for p in row {
                    pr += p.p_real;
                    pf += p.p_fake;
                    if p.p_real >= p.p_fake {
                        vr += 1;
                    }
                    if p.p_real < p.p_fake {
                        vf += 1;
                    }
                }
                pr /= n as f64;
                pf /= n as f64;
                let soft = if pr >= pf { ClassLabel::Real } else { ClassLabel::Fake };
                let hard = if vr > vf {
                    ClassLabel::Real
                } else if vr < vf {
                    ClassLabel::Fake
                } else {
                    tie
                };
                ensure(
                    (got.soft.p_real - pr).abs() <= 1e-12
                        && (got.soft.p_fake - pf).abs() <= 1e-12
                        && got.v_real == vr
                        && got.v_fake == vf
                        && got.label_soft == soft
                        && got.label_hard == hard,
                    || format!("mismatch on {row:?} with tie {tie}: {got:?}"),
                )?;
                checked += 1;
            }
        }
    }
    Ok(format!("{checked} matrices agree"))
}

fn attribute_fixtures() -> Check {
    let refs = reference_tables().map_err(|e| e.to_string())?;
    ensure(refs.excluded.is_empty(), || format!("{} rows excluded", refs.excluded.len()))?;
    let table = fit_stats(&refs.items(), &AttributeKind::ALL).map_err(|e| e.to_string())?;
    let mut worst = 0.0f64;
    for r in &refs.rows {
        let p = table
            .probs(r.kind, &r.kind.normalize(&r.value))
            .ok_or_else(|| format!("{}/{} missing from fitted table", r.kind, r.value))?;
        let err = (p.p_real - r.p_real).abs().max((p.p_fake - r.p_fake).abs());
        ensure(err <= REFERENCE_TOLERANCE, || {
            format!("{}/{}: got {:?}, want ({}, {})", r.kind, r.value, p, r.p_real, r.p_fake)
        })?;
        worst = worst.max(err);
    }
    Ok(format!("{} rows, max error {worst:.2e}", refs.rows.len()))
}

fn literal_rule(a1: ProbPair, a2: ProbPair, model: ProbPair, t: f64) -> ClassLabel {
    if a1.p_real > t && a1.p_real > a1.p_fake {
        ClassLabel::Real
    } else if a1.p_fake > t && a1.p_real < a1.p_fake {
        ClassLabel::Fake
    } else if a2.p_real > t && a2.p_real > a2.p_fake {
        ClassLabel::Real
    } else if a2.p_fake > t && a2.p_real < a2.p_fake {
        ClassLabel::Fake
    } else if model.p_real > model.p_fake {
        ClassLabel::Real
    } else {
        ClassLabel::Fake
    }
}

fn heuristic_truth_table() -> Check {
    let grid = grid_pairs(&(0..=20).map(|i| i as f64 * 0.05).collect::<Vec<_>>());
    let mut checked = 0usize;
    for t in [0.88, 0.94] {
        let cfg = HeuristicConfig {
            priority: vec![AttributeKind::Username, AttributeKind::Domain],
            threshold: t,
            enabled: true,
        };
        for &a1 in &grid {
            for &a2 in &grid {
                for &m in &grid {
                    let (got, trace) = apply_heuristic("x", &[(a1, true), (a2, true)], m, &cfg);
                    let want = literal_rule(a1, a2, m, t);
                    ensure(got == want && trace.label == want, || {
                        format!("t={t} attr1={a1:?} attr2={a2:?} model={m:?}: got {got}, want {want}")
                    })?;
                    checked += 1;
                }
            }
        }
    }
    Ok(format!("{checked} cases agree"))
}

fn mc_dropout_identities() -> Check {
    let mut rng = seed::rng(11);
    let x: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();

    let det = SffnModel::new(6, &[16, 8], 0.0, 3, "");
    let reference = det.forward(&x).map_err(|e| e.to_string())?;
    for n in [1, 7, 50] {
        let p = predict_mc(&det, &x, n, 5).map_err(|e| e.to_string())?;
        ensure(p.c_u == [0.0, 0.0] && p.v_p == reference, || {
            format!("p=0, N={n}: v_p {:?} c_u {:?} vs deterministic {:?}", p.v_p, p.c_u, reference)
        })?;
    }

    let m = SffnModel::new(6, &[16, 8], 0.2, 3, "");
    let passes = mc_passes(&m, &x, 200, 9).map_err(|e| e.to_string())?;
    let n = passes.len() as f64;
    let mean = [
        passes.iter().map(|p| p.p_real).sum::<f64>() / n,
        passes.iter().map(|p| p.p_fake).sum::<f64>() / n,
    ];
    let var = [
        passes.iter().map(|p| (p.p_real - mean[0]).powi(2)).sum::<f64>() / n,
        passes.iter().map(|p| (p.p_fake - mean[1]).powi(2)).sum::<f64>() / n,
    ];
    let p = predict_mc(&m, &x, 200, 9).map_err(|e| e.to_string())?;
    let id_err = (p.c_u[0] - var[0])
        .abs()
        .max((p.c_u[1] - var[1]).abs())
        .max((p.v_p.p_real - mean[0]).abs())
        .max((p.v_p.p_fake - mean[1]).abs());
    ensure(id_err <= 1e-12, || format!("recomputation differs by {id_err:e}"))?;
    ensure(var[0] > 0.0, || "dropout produced no variation".into())?;

    let mut worst = 0.0f64;
    for k in 0..5u64 {
        let xi: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let a = predict_mc(&m, &xi, 1000, seed::derive(k, "stream-a")).map_err(|e| e.to_string())?;
        let b = predict_mc(&m, &xi, 1000, seed::derive(k, "stream-b")).map_err(|e| e.to_string())?;
        worst = worst.max((a.v_p.p_real - b.v_p.p_real).abs());
    }
    ensure(worst <= 0.02, || format!("N=1000 means differ by {worst}"))?;
    Ok(format!("identity error {id_err:.1e}, N=1000 drift {worst:.4}"))
}

fn gradient_check_criterion() -> Check {
    let mut worst = 0.0f64;
    for s in 0..10u64 {
        let m = SffnModel::new(6, &[8, 4], 0.2, s, "");
        let mut rng = seed::rng(seed::derive(s, "input"));
        let x: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let label = if s % 2 == 0 { ClassLabel::Real } else { ClassLabel::Fake };
        let g = gradient_check(&m, &x, label).map_err(|e| e.to_string())?;
        worst = worst.max(g.max_relative_error);
    }
    ensure(worst < 1e-4, || format!("max relative error {worst:e}"))?;
    Ok(format!("max relative error {worst:.2e} over 10 seeds"))
}

fn blobs_75_25() -> (Vec<Vec<f64>>, Vec<ClassLabel>) {
    let mut rng = seed::rng(21);
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for i in 0..400 {
        let (label, c) = if i < 300 { (ClassLabel::Real, 0.0) } else { (ClassLabel::Fake, 2.0) };
        rows.push((0..4).map(|_| c + rng.gen_range(-1.0..1.0)).collect());
        labels.push(label);
    }
    (rows, labels)
}

fn max_residual(aug: &Augmented, minority: &[Vec<f64>]) -> f64 {
    let mut worst = 0.0f64;
    for s in aug.synthetic() {
        let mut best = f64::INFINITY;
        for (i, a) in minority.iter().enumerate() {
            for b in &minority[i + 1..] {
                let d: Vec<f64> = a.iter().zip(b).map(|(a, b)| b - a).collect();
                let dd: f64 = d.iter().map(|v| v * v).sum();
                if dd == 0.0 {
                    continue;
                }
                let lambda = (s.iter().zip(a).zip(&d).map(|((s, a), d)| (s - a) * d).sum::<f64>() / dd).clamp(0.0, 1.0);
                let r = s
                    .iter()
                    .zip(a)
                    .zip(&d)
                    .map(|((s, a), d)| (a + lambda * d - s).powi(2))
                    .sum::<f64>()
                    .sqrt();
                best = best.min(r);
            }
        }
        worst = worst.max(best);
    }
    worst
}

fn smote_geometry() -> Check {
    let (rows, labels) = blobs_75_25();
    let minority: Vec<Vec<f64>> = rows
        .iter()
        .zip(&labels)
        .filter(|(_, l)| **l == ClassLabel::Fake)
        .map(|(r, _)| r.clone())
        .collect();
    let mut details = Vec::new();
    for method in [OversampleMethod::Smote, OversampleMethod::KmeansSmote] {
        let cfg = OversampleConfig {
            method,
            seed: 4,
            ..OversampleConfig::default()
        };
        for ratio in [1.0, 0.8] {
            let aug = match method {
                OversampleMethod::Smote => smote(&rows, &labels, ratio, &cfg),
                OversampleMethod::KmeansSmote => kmeans_smote(&rows, &labels, ratio, &cfg),
            }
            .map_err(|e| e.to_string())?;
            ensure(aug.rows[..aug.n_original] == rows[..], || "originals were modified".into())?;
            let residual = max_residual(&aug, &minority);
            ensure(residual < 1e-9, || format!("{method:?}: residual {residual:e}"))?;
            let n_min = aug.labels.iter().filter(|l| **l == ClassLabel::Fake).count() as f64;
            let n_maj = aug.labels.iter().filter(|l| **l == ClassLabel::Real).count() as f64;
            ensure((n_min - ratio * n_maj).abs() <= 1.0, || {
                format!("{method:?} ratio {ratio}: {n_min} minority vs {n_maj} majority")
            })?;
            details.push(format!("{method:?}@{ratio}: {} synthetic", aug.synthetic().len()));
        }
    }
    Ok(details.join(", "))
}

fn binomial_oracle(b: usize, c: usize) -> f64 {
    let n = b + c;
    let k = b.min(c);
    let mut coef: u128 = 1;
    let mut sum: u128 = 0;
    for i in 0..=k {
        sum += coef;
        coef = coef * (n - i) as u128 / (i + 1) as u128;
    }
    (2.0 * sum as f64 / 2f64.powi(n as i32)).min(1.0)
}

fn metrics_oracles() -> Check {
    let half = [ProbPair::new(0.5, 0.5)];
    for gold in [ClassLabel::Real, ClassLabel::Fake] {
        let v = nll(&half, &[gold]);
        ensure((v - std::f64::consts::LN_2).abs() <= 1e-12, || format!("NLL(0.5) = {v}"))?;
        let b = brier(&half, &[gold]);
        ensure(b == 0.25, || format!("Brier(0.5) = {b}"))?;
    }
    let probs = [ProbPair::new(0.1, 0.9), ProbPair::new(0.8, 0.2)];
    let gold = [ClassLabel::Fake, ClassLabel::Real];
    let v = nll(&probs, &gold);
    ensure((v - 0.1643).abs() <= 1e-4, || format!("2-item NLL {v}"))?;
    let b = brier(&probs, &gold);
    ensure((b - 0.025).abs() <= 1e-12, || format!("2-item Brier {b}"))?;
    let mut worst = 0.0f64;
    let mut pairs = 0usize;
    for n in 0..=60usize {
        for b in 0..=n {
            let r = mcnemar_from_counts(b, n - b, 0.05, McNemarMode::Exact);
            let want = if n == 0 { 1.0 } else { binomial_oracle(b, n - b) };
            worst = worst.max((r.p_value - want).abs());
            pairs += 1;
        }
    }
    ensure(worst <= 1e-12, || format!("McNemar p-values differ by {worst:e}"))?;
    Ok(format!("NLL {v:.4}, Brier {b}, {pairs} McNemar pairs within {worst:.1e}"))
}

fn benchmark_run(dir: &Path) -> Result<fusionet::pipeline::RunOutcome, String> {
    run_pipeline(&PipelineConfig::benchmark(dir)).map_err(|e| e.to_string())
}

fn end_to_end_lift() -> Check {
    let a = tempfile::tempdir().map_err(|e| e.to_string())?;
    let b = tempfile::tempdir().map_err(|e| e.to_string())?;
    let first = benchmark_run(a.path())?;
    let second = benchmark_run(b.path())?;
    ensure(first.elbow.is_some(), || "threshold was not chosen by the elbow rule".into())?;
    let f1 = |o: &fusionet::pipeline::RunOutcome, s: &str| o.report(s).map(|r| r.metrics.f1).ok_or(format!("no {s} report"));
    let ens = f1(&first, "test/ensemble")?;
    let pipe = f1(&first, "test/pipeline")?;
    ensure(first.reports == second.reports && first.threshold == second.threshold, || {
        "two runs disagree".into()
    })?;
    ensure(pipe - ens >= 0.03, || format!("lift {:.4} (ensemble {ens:.4}, pipeline {pipe:.4})", pipe - ens))?;
    Ok(format!(
        "ensemble {ens:.4}, pipeline {pipe:.4}, lift {:.4}, threshold {}",
        pipe - ens,
        first.threshold
    ))
}

fn collect_files(root: &Path, dir: &Path, out: &mut BTreeMap<String, Vec<u8>>) -> std::io::Result<()> {
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_dir() {
            collect_files(root, &path, out)?;
        } else {
            let rel = path.strip_prefix(root).expect("under root").to_string_lossy().into_owned();
            out.insert(rel, std::fs::read(&path)?);
        }
    }
    Ok(())
}

fn determinism() -> Check {
    let a = tempfile::tempdir().map_err(|e| e.to_string())?;
    let b = tempfile::tempdir().map_err(|e| e.to_string())?;
    let ra = benchmark_run(a.path())?;
    let rb = benchmark_run(b.path())?;
    let mut fa = BTreeMap::new();
    let mut fb = BTreeMap::new();
    collect_files(&ra.run_dir, &ra.run_dir, &mut fa).map_err(|e| e.to_string())?;
    collect_files(&rb.run_dir, &rb.run_dir, &mut fb).map_err(|e| e.to_string())?;
    ensure(fa.keys().eq(fb.keys()), || "run directories list different files".into())?;
    for (name, bytes) in &fa {
        ensure(fb[name] == *bytes, || format!("{name} differs"))?;
    }
    Ok(format!("{} files byte-identical", fa.len()))
}

fn main() -> ExitCode {
    let criteria = [
        Criterion { name: "voting oracle", limit: Duration::from_secs(10), run: voting_oracle },
        Criterion { name: "attribute table fixtures", limit: Duration::from_secs(1), run: attribute_fixtures },
        Criterion { name: "heuristic truth table", limit: Duration::from_secs(30), run: heuristic_truth_table },
        Criterion { name: "mc dropout identities", limit: Duration::from_secs(60), run: mc_dropout_identities },
        Criterion { name: "gradient check", limit: Duration::from_secs(30), run: gradient_check_criterion },
        Criterion { name: "smote geometry", limit: Duration::from_secs(10), run: smote_geometry },
        Criterion { name: "metrics oracles", limit: Duration::from_secs(10), run: metrics_oracles },
        Criterion { name: "end-to-end lift", limit: Duration::from_secs(300), run: end_to_end_lift },
        Criterion { name: "determinism", limit: Duration::from_secs(300), run: determinism },
    ];
    let mut failed = 0;
    for c in &criteria {
        let start = Instant::now();
        let result = (c.run)();
        let elapsed = start.elapsed();
        let result = match result {
            Ok(detail) if elapsed > c.limit => Err(format!("{detail}; took {elapsed:.2?}, limit {:?}", c.limit)),
            other => other,
        };
        match result {
            Ok(detail) => println!("PASS {} ({detail}; {elapsed:.2?})", c.name),
            Err(detail) => {
                failed += 1;
                println!("FAIL {} ({detail}; {elapsed:.2?})", c.name);
            }
        }
    }
    println!("{} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
