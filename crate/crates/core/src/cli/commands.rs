use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::manifest::RunManifest;
use super::overrides::{apply_overrides, parse_pair};
use super::{Cli, Command, EvalArgs, ForgettingArgs, HardnessArgs, ReportArgs, SynthArgs, TrainArgs, TransferArgs};
use crate::episodes::{make_synthetic, sample_many, LabeledDataset, Phase, SplitConfig, SyntheticParams};
use crate::error::{Error, Result};
use crate::forgetting::{
    default_window, forgetting_report, read_traces_csv, write_report_csvs, write_traces_csv, DEFAULT_ALPHAS,
};
use crate::hardness::{
    extremes, hardness_histogram, read_hardness_csv, score_episodes, transfer_matrix, write_hardness_csv,
    write_histogram_csv, HardnessRecord,
};
use crate::io::{fmt_f64, read_json, write_csv_rows, write_json};
use crate::learners::Checkpoint;
use crate::training::{eval_seed, evaluate, train, TrainConfig};

pub(super) fn dispatch(cli: &Cli) -> Result<()> {
    let out = &cli.global.out;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    match &cli.command {
        Command::Train(a) => cmd_train(cli, a),
        Command::Eval(a) => cmd_eval(cli, a),
        Command::Hardness(a) => cmd_hardness(cli, a),
        Command::Forgetting(a) => cmd_forgetting(cli, a),
        Command::Transfer(a) => cmd_transfer(cli, a),
        Command::Report(a) => cmd_report(cli, a),
        Command::Synth(a) => cmd_synth(cli, a),
    }
}

fn base_config(cli: &Cli, preset: &str) -> Result<TrainConfig> {
    let mut cfg = match &cli.global.config {
        Some(p) => TrainConfig::from_json_file(p)?,
        None => TrainConfig::preset(preset)?,
    };
    if let Some(s) = cli.global.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn phase_arg(s: &str) -> Result<Phase> {
    s.parse().map_err(|_| Error::Config(format!("unknown phase `{s}` (train, val, test)")))
}

fn load_checkpoint(path: &Path, ds: &LabeledDataset) -> Result<Checkpoint> {
    let ck = Checkpoint::load(path).map_err(|e| e.context(path.display()))?;
    if ck.net.input_dim() != ds.dim() {
        return Err(Error::Config(format!(
            "{} expects {} features but the dataset has {}",
            path.display(),
            ck.net.input_dim(),
            ds.dim()
        )));
    }
    Ok(ck)
}

/// Test-set summary written next to its hardness CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub phase: Phase,
    pub episodes: usize,
    pub seed: u64,
    pub mean_accuracy: f64,
    pub ci95: f64,
    /// Absent when fewer than 60 episodes were scored.
    pub hardest30_mean_accuracy: Option<f64>,
    pub easiest1_accuracy: f64,
    pub hardest1_accuracy: f64,
    pub hardness_csv: String,
}

const EVAL_SUMMARY: &str = "eval_summary.json";

fn write_evaluation(
    out: &Path,
    manifest: &mut RunManifest,
    phase: Phase,
    seed: u64,
    mean_accuracy: f64,
    ci95: f64,
    records: &[HardnessRecord],
) -> Result<EvalSummary> {
    let csv = format!("{phase}_hardness.csv");
    write_hardness_csv(&out.join(&csv), records)?;
    let one = extremes(records, 1)?;
    let summary = EvalSummary {
        phase,
        episodes: records.len(),
        seed,
        mean_accuracy,
        ci95,
        hardest30_mean_accuracy: extremes(records, 30).ok().map(|e| e.hardest_mean_accuracy),
        easiest1_accuracy: one.easiest_mean_accuracy,
        hardest1_accuracy: one.hardest_mean_accuracy,
        hardness_csv: csv.clone(),
    };
    write_json(&out.join(EVAL_SUMMARY), &summary)?;
    manifest.artifact("eval_hardness", &csv);
    manifest.artifact("eval_summary", EVAL_SUMMARY);
    Ok(summary)
}

#[derive(Debug, Serialize)]
struct TrainSummary {
    strategy: String,
    iterations: usize,
    best_val_accuracy: f64,
    best_iteration: usize,
    checkpoint: String,
    final_checkpoint: String,
    test_mean_accuracy: f64,
}

fn cmd_train(cli: &Cli, a: &TrainArgs) -> Result<()> {
    let out = &cli.global.out;
    let mut pairs: Vec<(String, Value)> = Vec::new();
    let mut put = |k: &str, v: Value| pairs.push((k.to_string(), v));
    if let Some(v) = &a.strategy {
        put("strategy", v.as_str().into());
    }
    if let Some(v) = a.extras {
        put("extra_per_episode", v.into());
    }
    if let Some(v) = &a.selection_mode {
        put("selection_mode", v.as_str().into());
    }
    if let Some(v) = &a.head {
        put("head.kind", v.as_str().into());
    }
    if let Some(v) = a.ridge_lambda {
        put("head.ridge_lambda", v.into());
    }
    if let Some(v) = a.epochs {
        put("epochs", v.into());
    }
    if let Some(v) = a.episodes_per_epoch {
        put("episodes_per_epoch", v.into());
    }
    if let Some(v) = a.k_shot {
        put("k_shot", v.into());
    }
    if let Some(v) = a.lr {
        put("lr", v.into());
    }
    if let Some(p) = &a.dataset {
        put("dataset", serde_json::json!({ "kind": "csv", "path": p }));
    }
    for raw in &a.set {
        pairs.push(parse_pair(raw)?);
    }
    let cfg = apply_overrides(&base_config(cli, &a.preset)?, &pairs)?;
    cfg.validate()?;

    let (ds, splits) = cfg.load_dataset()?;
    let outcome = train(&cfg, &ds, &splits)?;

    let mut m = RunManifest::new("train", cfg.seed);
    if let Some(p) = &cli.global.config {
        m.input("config", p);
    }
    m.dataset_fingerprint = Some(ds.fingerprint());
    write_json(&out.join("config.json"), &cfg)?;
    m.artifact("config", "config.json");
    outcome.best.save(&out.join("checkpoint_best.bin"))?;
    m.artifact("checkpoint_best", "checkpoint_best.bin");
    outcome.final_model.save(&out.join("checkpoint_final.bin"))?;
    m.artifact("checkpoint_final", "checkpoint_final.bin");
    outcome.log.write_csv(&out.join("train_log.csv"))?;
    m.artifact("train_log", "train_log.csv");
    outcome.log.write_validation_csv(&out.join("validation.csv"))?;
    m.artifact("validation_log", "validation.csv");
    outcome.probe.save(&out.join("probe_set.json"))?;
    m.artifact("probe_set", "probe_set.json");
    write_traces_csv(&out.join("traces.csv"), &outcome.traces)?;
    m.artifact("traces", "traces.csv");

    // forgetting groups are ranked by the model at the end of training
    let probe_eps = outcome.probe.materialize(&ds)?;
    let probe_records = score_episodes(&outcome.final_model.net, &outcome.final_model.head, &probe_eps)?;
    write_hardness_csv(&out.join("probe_hardness.csv"), &probe_records)?;
    m.artifact("probe_hardness", "probe_hardness.csv");

    let spec = cfg.eval_spec(Phase::Test)?;
    let seed = eval_seed(cfg.seed, Phase::Test);
    let ev = evaluate(&outcome.best.net, &outcome.best.head, &ds, &splits, &spec, cfg.test_episodes, seed)?;
    let summary = write_evaluation(out, &mut m, Phase::Test, seed, ev.mean_accuracy, ev.ci95, &ev.records)?;

    let best = outcome.log.best_validation.map(|i| &outcome.log.validations[i]);
    write_json(
        &out.join("train_summary.json"),
        &TrainSummary {
            strategy: cfg.strategy.as_str().to_string(),
            iterations: outcome.log.iterations.len(),
            best_val_accuracy: best.map_or(f64::NAN, |v| v.mean_accuracy),
            best_iteration: best.map_or(0, |v| v.iteration),
            checkpoint: "checkpoint_best.bin".into(),
            final_checkpoint: "checkpoint_final.bin".into(),
            test_mean_accuracy: summary.mean_accuracy,
        },
    )?;
    m.artifact("train_summary", "train_summary.json");
    m.config = Some(cfg);
    m.save(out)?;
    println!(
        "trained {} iterations; best val {:.4}; test accuracy {:.4} +- {:.4} on {} episodes",
        outcome.log.iterations.len(),
        best.map_or(f64::NAN, |v| v.mean_accuracy),
        summary.mean_accuracy,
        summary.ci95,
        summary.episodes
    );
    Ok(())
}

fn cmd_eval(cli: &Cli, a: &EvalArgs) -> Result<()> {
    let out = &cli.global.out;
    let cfg = base_config(cli, "desk")?;
    let phase = phase_arg(&a.phase)?;
    let n = a.episodes.unwrap_or(cfg.test_episodes);
    let (ds, splits) = cfg.load_dataset()?;
    let ck = load_checkpoint(&a.checkpoint, &ds)?;
    let seed = eval_seed(cfg.seed, phase);
    let ev = evaluate(&ck.net, &ck.head, &ds, &splits, &cfg.eval_spec(phase)?, n, seed)?;

    let mut m = RunManifest::new("eval", cfg.seed);
    m.input("checkpoint", &a.checkpoint);
    if let Some(p) = &cli.global.config {
        m.input("config", p);
    }
    m.dataset_fingerprint = Some(ds.fingerprint());
    let s = write_evaluation(out, &mut m, phase, seed, ev.mean_accuracy, ev.ci95, &ev.records)?;
    m.config = Some(cfg);
    m.save(out)?;
    println!("{phase} accuracy {:.4} +- {:.4} on {} episodes", s.mean_accuracy, s.ci95, s.episodes);
    Ok(())
}

fn sample_eval(cfg: &TrainConfig, ds: &LabeledDataset, splits: &SplitConfig, phase: Phase, n: usize) -> Result<(u64, Vec<crate::episodes::Episode>)> {
    if n == 0 {
        return Err(Error::Parameter("--episodes must be >= 1".into()));
    }
    let seed = eval_seed(cfg.seed, phase);
    Ok((seed, sample_many(ds, splits, &cfg.eval_spec(phase)?, n, seed)?))
}

fn cmd_hardness(cli: &Cli, a: &HardnessArgs) -> Result<()> {
    let out = &cli.global.out;
    let cfg = base_config(cli, "desk")?;
    let phase = phase_arg(&a.phase)?;
    let (ds, splits) = cfg.load_dataset()?;
    let ck = load_checkpoint(&a.checkpoint, &ds)?;
    let (_, episodes) = sample_eval(&cfg, &ds, &splits, phase, a.episodes)?;
    let records = score_episodes(&ck.net, &ck.head, &episodes)?;

    let mut m = RunManifest::new("hardness", cfg.seed);
    m.input("checkpoint", &a.checkpoint);
    if let Some(p) = &cli.global.config {
        m.input("config", p);
    }
    m.dataset_fingerprint = Some(ds.fingerprint());
    write_hardness_csv(&out.join("hardness.csv"), &records)?;
    m.artifact("hardness", "hardness.csv");
    write_histogram_csv(&out.join("histogram.csv"), &hardness_histogram(&records, a.bins)?)?;
    m.artifact("histogram", "histogram.csv");

    let mut rows = Vec::new();
    for size in [1, 30] {
        let Ok(e) = extremes(&records, size) else { continue };
        rows.push(vec![
            size.to_string(),
            fmt_f64(e.hardest_mean_accuracy),
            fmt_f64(e.easiest_mean_accuracy),
            fmt_f64(e.hardest_mean_loss),
            fmt_f64(e.easiest_mean_loss),
        ]);
    }
    write_csv_rows(
        &out.join("extremes.csv"),
        &["m", "hardest_mean_accuracy", "easiest_mean_accuracy", "hardest_mean_loss", "easiest_mean_loss"],
        &rows,
    )?;
    m.artifact("extremes", "extremes.csv");
    m.config = Some(cfg);
    m.save(out)?;
    println!("scored {} {phase} episodes", records.len());
    Ok(())
}

fn cmd_forgetting(cli: &Cli, a: &ForgettingArgs) -> Result<()> {
    let out = &cli.global.out;
    let traces = read_traces_csv(&a.traces).map_err(|e| e.context(a.traces.display()))?;
    let records = read_hardness_csv(&a.hardness).map_err(|e| e.context(a.hardness.display()))?;
    let trace_ids: BTreeSet<u64> = traces.iter().map(|t| t.episode_id).collect();
    let rank_ids: BTreeSet<u64> = records.iter().map(|r| r.episode_id).collect();
    if trace_ids != rank_ids {
        let missing = trace_ids.symmetric_difference(&rank_ids).next().copied().unwrap_or_default();
        return Err(Error::Config(format!(
            "{} and {} cover different probe episodes (e.g. episode_id {missing})",
            a.traces.display(),
            a.hardness.display()
        )));
    }
    if a.group_size == 0 || 2 * a.group_size > records.len() {
        return Err(Error::Config(format!(
            "group size {} needs at least {} probe episodes, found {}",
            a.group_size,
            2 * a.group_size,
            records.len()
        )));
    }
    let group = extremes(&records, a.group_size)?;
    let hard: Vec<u64> = group.hardest.iter().map(|r| r.episode_id).collect();
    let easy: Vec<u64> = group.easiest.iter().map(|r| r.episode_id).collect();
    let alphas = a.alphas.clone().unwrap_or_else(|| DEFAULT_ALPHAS.to_vec());
    let epochs = traces.first().map_or(0, |t| t.acc.len());
    let window = a.window.unwrap_or_else(|| default_window(epochs));
    let report = forgetting_report(&traces, &alphas, &hard, &easy, window).map_err(|e| match e {
        Error::Contract(msg) => Error::Config(msg),
        other => other,
    })?;

    let mut m = RunManifest::new("forgetting", cli.global.seed.unwrap_or(0));
    m.input("traces", &a.traces);
    m.input("hardness", &a.hardness);
    write_report_csvs(&out.join("forgetting_events.csv"), &out.join("forgetting_summary.csv"), &report)?;
    m.artifact("events", "forgetting_events.csv");
    m.artifact("summary", "forgetting_summary.csv");

    let rows: Vec<Vec<String>> = report
        .per_episode
        .iter()
        .map(|p| {
            let g = if hard.contains(&p.episode_id) {
                "hard"
            } else if easy.contains(&p.episode_id) {
                "easy"
            } else {
                "other"
            };
            vec![p.episode_id.to_string(), g.into(), fmt_f64(p.acc_max), fmt_f64(p.acc_end)]
        })
        .collect();
    write_csv_rows(&out.join("forgetting_scatter.csv"), &["episode_id", "group", "acc_max", "acc_end"], &rows)?;
    m.artifact("scatter", "forgetting_scatter.csv");
    m.save(out)?;
    println!("forgetting report over {} probe episodes, {epochs} epochs, window {window}", traces.len());
    Ok(())
}

fn cmd_transfer(cli: &Cli, a: &TransferArgs) -> Result<()> {
    let out = &cli.global.out;
    if a.checkpoints.len() < 2 {
        return Err(Error::Config("transfer needs at least two --checkpoint values".into()));
    }
    let cfg = base_config(cli, "desk")?;
    let phase = phase_arg(&a.phase)?;
    let (ds, splits) = cfg.load_dataset()?;
    let mut m = RunManifest::new("transfer", cfg.seed);
    let mut models = Vec::new();
    for raw in &a.checkpoints {
        let (name, path) = match raw.split_once('=') {
            Some((n, p)) => (n.to_string(), PathBuf::from(p)),
            None => {
                let p = PathBuf::from(raw);
                let stem = p.file_stem().map_or_else(|| raw.clone(), |s| s.to_string_lossy().into_owned());
                (stem, p)
            }
        };
        let ck = load_checkpoint(&path, &ds)?;
        m.input(&format!("checkpoint:{name}"), &path);
        models.push((name, ck));
    }
    let (_, episodes) = sample_eval(&cfg, &ds, &splits, phase, a.episodes)?;
    let refs: Vec<_> = models.iter().map(|(n, ck)| (n.clone(), &ck.net, ck.head)).collect();
    let matrix = transfer_matrix(&refs, &episodes)?;
    write_json(&out.join("transfer.json"), &matrix)?;
    m.artifact("transfer", "transfer.json");
    m.dataset_fingerprint = Some(ds.fingerprint());
    m.config = Some(cfg);
    m.save(out)?;
    println!("transfer matrix over {} models and {} episodes", matrix.models.len(), matrix.episodes);
    Ok(())
}

/// Column order of `report.csv`.
pub const REPORT_HEADER: [&str; 10] = [
    "run",
    "strategy",
    "k_shot",
    "head",
    "episodes",
    "mean_accuracy",
    "ci95",
    "hardest30_mean_accuracy",
    "easiest1_accuracy",
    "hardest1_accuracy",
];

fn cmd_report(cli: &Cli, a: &ReportArgs) -> Result<()> {
    let out = &cli.global.out;
    let mut m = RunManifest::new("report", cli.global.seed.unwrap_or(0));
    let mut rows = Vec::new();
    for run in &a.runs {
        let missing = |what: &str, e: Error| Error::Config(format!("run {}: missing or unreadable {what}: {e}", run.display()));
        let manifest = RunManifest::load(run).map_err(|e| missing("manifest", e))?;
        let cfg = manifest
            .config
            .ok_or_else(|| Error::Config(format!("run {}: manifest has no config", run.display())))?;
        let s: EvalSummary = read_json(&run.join(EVAL_SUMMARY)).map_err(|e| missing(EVAL_SUMMARY, e))?;
        m.input(&format!("run{}", rows.len()), run);
        let head = serde_json::to_value(cfg.head.kind)?;
        rows.push(vec![
            run.display().to_string(),
            cfg.strategy.as_str().to_string(),
            cfg.k_shot.to_string(),
            head.as_str().unwrap_or_default().to_string(),
            s.episodes.to_string(),
            fmt_f64(s.mean_accuracy),
            fmt_f64(s.ci95),
            s.hardest30_mean_accuracy.map(fmt_f64).unwrap_or_default(),
            fmt_f64(s.easiest1_accuracy),
            fmt_f64(s.hardest1_accuracy),
        ]);
    }
    write_csv_rows(&out.join("report.csv"), &REPORT_HEADER, &rows)?;
    m.artifact("report", "report.csv");
    m.save(out)?;
    println!("report with {} rows", rows.len());
    Ok(())
}

fn cmd_synth(cli: &Cli, a: &SynthArgs) -> Result<()> {
    let out = &cli.global.out;
    let d = SyntheticParams::default();
    let p = SyntheticParams {
        num_classes: a.num_classes.unwrap_or(d.num_classes),
        per_class: a.per_class.unwrap_or(d.per_class),
        dim: a.dim.unwrap_or(d.dim),
        spread: a.spread.unwrap_or(d.spread),
        seed: cli.global.seed.unwrap_or(d.seed),
    };
    let ds = make_synthetic(&p)?;
    ds.write_csv(&out.join("synthetic.csv"))?;
    let mut m = RunManifest::new("synth", p.seed);
    m.inputs.insert("params".into(), serde_json::to_string(&p)?);
    m.dataset_fingerprint = Some(ds.fingerprint());
    m.artifact("dataset", "synthetic.csv");
    m.save(out)?;
    println!("wrote {} rows of {} features in {} classes", ds.len(), ds.dim(), ds.num_classes());
    Ok(())
}
