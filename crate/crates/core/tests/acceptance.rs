//! End-to-end acceptance checks, one test per criterion. Each prints a
//! single PASS/FAIL line to stdout (bypassing the test harness capture).

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::process::Command;
use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use hardlab::episodes::{make_synthetic, sample_many, Episode, EpisodeSpec, LabeledDataset, Phase, SplitConfig, SyntheticParams};
use hardlab::forgetting::{detect_global, detect_local, forgetting_report, Group, Window};
use hardlab::hardness::{extremes, pearson, score_episodes, spearman, transfer_matrix};
use hardlab::learners::{loss_and_gradients, score_episode, Checkpoint, EmbeddingNet, HeadConfig};
use hardlab::ndcore::gradcheck::{central_differences, compare};
use hardlab::ndcore::Tensor;
use hardlab::training::{eval_seed, evaluate, train, Evaluation, Strategy, TrainConfig};

const SEEDS: [u64; 3] = [0, 1, 2];

fn report(n: usize, name: &str, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "criterion {n:>2} [{name}]: {verdict}  {detail}");
}

fn list(v: &[f64], digits: usize) -> String {
    v.iter().map(|x| format!("{x:.digits$}")).collect::<Vec<_>>().join(", ")
}

// ---------------------------------------------------------------- 1

fn random_params(net: &EmbeddingNet, rng: &mut ChaCha8Rng) -> EmbeddingNet {
    let mut net = net.clone();
    let flat: Vec<f64> = (0..net.param_count()).map(|_| rng.random_range(-1.0..1.0)).collect();
    net.set_flat_params(&flat).unwrap();
    net
}

fn small_episodes(count: usize, seed: u64) -> Vec<Episode> {
    let ds = make_synthetic(&SyntheticParams { num_classes: 10, per_class: 20, dim: 3, spread: 0.5, seed }).unwrap();
    let splits = SplitConfig::by_fraction(10, 0.5, 0.25).unwrap();
    let spec = EpisodeSpec::new(3, 2, 2, Phase::Train).unwrap();
    sample_many(&ds, &splits, &spec, count, seed).unwrap()
}

#[test]
fn criterion_01_gradients() {
    let episodes = small_episodes(100, 11);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let template = EmbeddingNet::init(&[3, 4, 2], 1).unwrap();
    let mut worst_abs: f64 = 0.0;
    let mut worst_rel: f64 = 0.0;
    let mut failures = 0;
    let mut elements = 0;
    for head in [HeadConfig::proto(), HeadConfig::ridge(1.0)].iter() {
        for ep in &episodes {
            let net = random_params(&template, &mut rng);
            let (_, analytic) = loss_and_gradients(&net, head, ep).unwrap();
            let f = |p: &[Tensor]| {
                let mut n = net.clone();
                n.set_params(p.to_vec())?;
                Ok(score_episode(&n, head, ep)?.loss)
            };
            let numeric = central_differences(f, &net.params(), 1e-5).unwrap();
            let c = compare(&analytic, &numeric, 1e-4, 1e-6);
            failures += c.failures;
            worst_abs = worst_abs.max(c.max_abs_error);
            for (a, n) in analytic.iter().zip(&numeric) {
                for (&x, &y) in a.data().iter().zip(n.data()) {
                    elements += 1;
                    let scale = x.abs().max(y.abs());
                    if scale > 1e-6 {
                        worst_rel = worst_rel.max((x - y).abs() / scale);
                    }
                }
            }
        }
    }
    let pass = failures == 0;
    report(1, "gradient correctness", pass, &format!(
        "{elements} gradient entries over 100 episodes x 2 heads, {failures} out of tolerance; max abs error {worst_abs:.1e}, max rel error {worst_rel:.1e}"
    ));
    assert!(pass);
}

// ---------------------------------------------------------------- 2

/// Integer oracle: accuracies and thresholds in hundredths.
fn oracle_local(t: &[i64], a: i64) -> usize {
    let mut n = 0;
    for j in 1..t.len() {
        if t[j] + a <= t[j - 1] {
            n += 1;
        }
    }
    n
}

fn oracle_global(t: &[i64], a: i64) -> bool {
    let mut max = t[0];
    for &v in t {
        if v > max {
            max = v;
        }
    }
    max >= t[t.len() - 1] + a
}

fn fixture() -> Vec<Vec<i64>> {
    let mut traces = vec![
        vec![50, 45, 50, 30],
        vec![20, 80, 60],
        vec![10, 20, 30, 40, 50],
        vec![90, 87, 84, 81, 78, 75],
        vec![60, 55],
        vec![60, 45, 60, 45, 60, 45],
        vec![100, 0],
        vec![33, 33, 33, 33],
        vec![70, 73, 68, 71, 66],
        vec![40, 55, 40, 55, 40],
    ];
    // forty more: small deterministic walks with steps in {-15..15}
    let mut state: i64 = 17;
    while traces.len() < 50 {
        let len = 3 + (traces.len() % 6);
        let mut t = Vec::with_capacity(len);
        let mut v = 50;
        for _ in 0..len {
            state = (state * 37 + 11) % 101;
            v = (v + state % 31 - 15).clamp(0, 100);
            t.push(v);
        }
        traces.push(t);
    }
    traces
}

#[test]
fn criterion_02_forgetting_oracle() {
    let alphas = [3i64, 5, 7, 9, 10, 11, 13, 15, 20, 30];
    let mut mismatches = 0;
    let mut checks = 0;
    for t in fixture() {
        let f: Vec<f64> = t.iter().map(|&v| v as f64 / 100.0).collect();
        for &a in &alphas {
            let alpha = a as f64 / 100.0;
            checks += 2;
            if detect_local(&f, alpha).unwrap() != oracle_local(&t, a) {
                mismatches += 1;
            }
            if detect_global(&f, alpha).unwrap() != oracle_global(&t, a) {
                mismatches += 1;
            }
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut violations = 0;
    for _ in 0..10_000 {
        let len = rng.random_range(2..30);
        let trace: Vec<f64> = (0..len).map(|_| rng.random_range(0.0..=1.0)).collect();
        let mut grid: Vec<f64> = (0..6).map(|_| rng.random_range(0.001..0.5)).collect();
        grid.sort_by(f64::total_cmp);
        let counts: Vec<usize> = grid.iter().map(|&a| detect_local(&trace, a).unwrap()).collect();
        if counts.windows(2).any(|w| w[1] > w[0]) {
            violations += 1;
        }
    }
    let pass = mismatches == 0 && violations == 0;
    report(2, "forgetting detector oracle", pass, &format!(
        "{checks} fixture checks over 50 traces, {mismatches} mismatches; {violations} monotonicity violations in 10000 random traces"
    ));
    assert!(pass);
}

// ---------------------------------------------------------------- desk runs

struct DeskRun {
    final_model: Checkpoint,
    best: Checkpoint,
    probe: Vec<Episode>,
    traces: Vec<hardlab::forgetting::AccuracyTrace>,
    test: Evaluation,
}

fn desk_data() -> &'static (LabeledDataset, SplitConfig) {
    static DATA: OnceLock<(LabeledDataset, SplitConfig)> = OnceLock::new();
    DATA.get_or_init(|| TrainConfig::desk().load_dataset().unwrap())
}

fn desk_run(config: &TrainConfig) -> DeskRun {
    let (ds, splits) = desk_data();
    let out = train(config, ds, splits).unwrap();
    let spec = config.eval_spec(Phase::Test).unwrap();
    let test = evaluate(
        &out.best.net,
        &out.best.head,
        ds,
        splits,
        &spec,
        config.test_episodes,
        eval_seed(config.seed, Phase::Test),
    )
    .unwrap();
    DeskRun {
        probe: out.probe.materialize(ds).unwrap(),
        final_model: out.final_model,
        best: out.best,
        traces: out.traces,
        test,
    }
}

fn runs(strategy: Strategy) -> &'static [DeskRun] {
    static BASE: OnceLock<Vec<DeskRun>> = OnceLock::new();
    static AT: OnceLock<Vec<DeskRun>> = OnceLock::new();
    let cell = match strategy {
        Strategy::Baseline => &BASE,
        Strategy::At => &AT,
        Strategy::Act => unreachable!("not used by the acceptance runs"),
    };
    cell.get_or_init(|| {
        SEEDS
            .iter()
            .map(|&seed| desk_run(&TrainConfig { seed, strategy, ..TrainConfig::desk() }))
            .collect()
    })
}

// ---------------------------------------------------------------- 3

#[test]
fn criterion_03_loss_accuracy_anticorrelation() {
    let rs: Vec<f64> = runs(Strategy::Baseline)
        .iter()
        .map(|r| {
            let l: Vec<f64> = r.test.records.iter().map(|x| x.loss).collect();
            let a: Vec<f64> = r.test.records.iter().map(|x| x.accuracy).collect();
            pearson(&l, &a).unwrap()
        })
        .collect();
    let pass = rs.iter().all(|&r| r <= -0.6);
    report(3, "hardness-accuracy anticorrelation", pass, &format!(
        "pearson(loss, accuracy) on 500 test episodes per seed: [{}] (bound <= -0.6)",
        list(&rs, 3)
    ));
    assert!(pass);
}

// ---------------------------------------------------------------- 4

#[test]
fn criterion_04_easy_hard_gap() {
    let gaps: Vec<f64> = runs(Strategy::Baseline)
        .iter()
        .map(|r| extremes(&r.test.records, r.test.records.len() / 10).unwrap().accuracy_gap())
        .collect();
    let pass = gaps.iter().all(|&g| g >= 0.20);
    report(4, "easy/hard decile gap", pass, &format!(
        "easiest minus hardest decile accuracy: [{}] (bound >= 0.20 in 3/3)",
        list(&gaps, 3)
    ));
    assert!(pass);
}

// ---------------------------------------------------------------- 5

#[test]
fn criterion_05_hard_episodes_forget_more() {
    let mut lines = Vec::new();
    let mut wins = 0;
    for r in runs(Strategy::Baseline) {
        let probe = score_episodes(&r.final_model.net, &r.final_model.head, &r.probe).unwrap();
        let groups = extremes(&probe, 15).unwrap();
        let hard: Vec<u64> = groups.hardest.iter().map(|x| x.episode_id).collect();
        let easy: Vec<u64> = groups.easiest.iter().map(|x| x.episode_id).collect();
        let epochs = r.traces[0].acc.len();
        let rep = forgetting_report(&r.traces, &[0.05], &hard, &easy, hardlab::forgetting::default_window(epochs)).unwrap();
        let he = rep.events(Group::Hard, 0.05, Window::Full).unwrap().mean_events();
        let ee = rep.events(Group::Easy, 0.05, Window::Full).unwrap().mean_events();
        let hg = rep.summary(Group::Hard).unwrap().mean_gap();
        let eg = rep.summary(Group::Easy).unwrap().mean_gap();
        if he > ee && hg > eg {
            wins += 1;
        }
        lines.push(format!("events {he:.3} vs {ee:.3}, gap {hg:.4} vs {eg:.4}"));
    }
    let pass = wins >= 2;
    report(5, "hard episodes forget more", pass, &format!(
        "hard vs easy per seed: [{}]; {wins}/3 seeds satisfy both (need >= 2)",
        lines.join("; ")
    ));
    assert!(pass);
}

// ---------------------------------------------------------------- 6

#[test]
fn criterion_06_adversarial_training_on_hard_episodes() {
    let base = runs(Strategy::Baseline);
    let at = runs(Strategy::At);
    let h30 = |r: &DeskRun| extremes(&r.test.records, 30).unwrap().hardest_mean_accuracy;
    let mut ok_floor = true;
    let mut ok_avg = true;
    let mut strictly = 0;
    let mut lines = Vec::new();
    for (b, a) in base.iter().zip(at) {
        let (hb, ha) = (h30(b), h30(a));
        ok_floor &= ha >= hb - 0.005;
        ok_avg &= a.test.mean_accuracy >= b.test.mean_accuracy - 0.010;
        if ha > hb {
            strictly += 1;
        }
        lines.push(format!(
            "hardest-30 {:.4} vs {:.4}, mean {:.4} vs {:.4}",
            ha, hb, a.test.mean_accuracy, b.test.mean_accuracy
        ));
    }
    let pass = ok_floor && ok_avg && strictly >= 2;
    report(6, "AT on hard episodes", pass, &format!(
        "AT vs baseline per seed: [{}]; floor ok={ok_floor}, average ok={ok_avg}, strictly better {strictly}/3",
        lines.join("; ")
    ));
    assert!(pass);
}

// ---------------------------------------------------------------- 7

fn short(strategy: Strategy, extras: usize) -> TrainConfig {
    TrainConfig {
        epochs: 4,
        episodes_per_epoch: 16,
        strategy,
        extra_per_episode: extras,
        val_every_iterations: 4,
        val_episodes: 20,
        probe_size: 10,
        ..TrainConfig::desk()
    }
}

#[test]
fn criterion_07_degenerate_equivalences() {
    let (ds, splits) = desk_data();
    let base = train(&short(Strategy::Baseline, 4), ds, splits).unwrap();
    let at0 = train(&short(Strategy::At, 0), ds, splits).unwrap();
    let dir = tempfile::tempdir().unwrap();
    base.log.write_csv(&dir.path().join("a.csv")).unwrap();
    at0.log.write_csv(&dir.path().join("b.csv")).unwrap();
    let same_csv = std::fs::read(dir.path().join("a.csv")).unwrap() == std::fs::read(dir.path().join("b.csv")).unwrap();
    let same_log = base.log == at0.log
        && base.traces == at0.traces
        && base.best.to_bytes().unwrap() == at0.best.to_bytes().unwrap()
        && base.final_model.to_bytes().unwrap() == at0.final_model.to_bytes().unwrap();

    let cfg = short(Strategy::Act, 3);
    let act = train(&cfg, ds, splits).unwrap();
    let mut bad = 0;
    let mut checked = 0;
    for it in &act.log.iterations {
        let first_half = it.epoch < cfg.epochs / 2;
        for &(g, i) in &it.choices {
            let group = &it.candidate_losses[g];
            let want = if first_half {
                hardlab::training::argmin_first(group).unwrap()
            } else {
                hardlab::training::argmax_first(group).unwrap()
            };
            checked += 1;
            if i != want {
                bad += 1;
            }
        }
    }
    let pass = same_csv && same_log && bad == 0 && checked == cfg.total_iterations() * cfg.batch_size;
    report(7, "degenerate equivalences", pass, &format!(
        "AT with 0 extras bitwise equal to baseline: log csv {same_csv}, log/traces/checkpoints {same_log}; ACT selections {}/{checked} match argmin-then-argmax",
        checked - bad
    ));
    assert!(pass);
}

// ---------------------------------------------------------------- 8

#[test]
fn criterion_08_transfer_sanity() {
    let (ds, splits) = desk_data();
    let proto = &runs(Strategy::Baseline)[0].best;
    let ridge = desk_run(&TrainConfig { head: HeadConfig::ridge(1.0), ..TrainConfig::desk() }).best;
    let spec = TrainConfig::desk().eval_spec(Phase::Test).unwrap();
    let episodes = sample_many(ds, splits, &spec, 500, eval_seed(0, Phase::Test)).unwrap();
    let m = transfer_matrix(
        &[("proto".into(), &proto.net, proto.head), ("ridge".into(), &ridge.net, ridge.head)],
        &episodes,
    )
    .unwrap();
    let diag = (0..2).all(|i| m.pearson[i][i] == 1.0 && m.spearman[i][i] == 1.0);
    let off = m.pearson[0][1];
    let pass = diag && off > 0.0 && m.pearson[1][0] == off;
    report(8, "transfer sanity", pass, &format!(
        "diagonal exactly 1.0: {diag}; proto-vs-ridge pearson {off:.4}, spearman {:.4} on 500 episodes",
        m.spearman[0][1]
    ));
    assert!(pass);
}

// ---------------------------------------------------------------- 9

fn hardlab(dir: &Path, args: &[&str]) {
    let out = Command::new(env!("CARGO_BIN_EXE_hardlab"))
        .current_dir(dir)
        .env_remove(hardlab::cli::OUT_ENV)
        .args(args)
        .output()
        .unwrap();
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn pipeline(dir: &Path) {
    hardlab(dir, &["synth", "--out", "data", "--per-class", "40"]);
    hardlab(dir, &[
        "train", "--out", "run", "--dataset", "data/synthetic.csv", "--epochs", "2",
        "--episodes-per-epoch", "40", "--strategy", "at", "--set", "test_episodes=100",
        "--set", "val_every_iterations=5", "--set", "probe_size=30",
    ]);
    hardlab(dir, &["train", "--out", "rerun", "--config", "run/config.json"]);
    hardlab(dir, &["eval", "--out", "ev", "--config", "run/config.json", "--checkpoint", "run/checkpoint_best.bin"]);
    hardlab(dir, &[
        "hardness", "--out", "hd", "--config", "run/config.json", "--checkpoint", "run/checkpoint_best.bin",
        "--episodes", "200",
    ]);
    hardlab(dir, &["forgetting", "--out", "fg", "--traces", "run/traces.csv", "--hardness", "run/probe_hardness.csv"]);
    hardlab(dir, &[
        "transfer", "--out", "tr", "--config", "run/config.json", "--checkpoint", "best=run/checkpoint_best.bin",
        "--checkpoint", "final=run/checkpoint_final.bin", "--episodes", "100",
    ]);
    hardlab(dir, &["report", "--out", "rp", "run", "rerun"]);
}

fn files(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(root).unwrap().display().to_string();
                out.insert(rel, std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

#[test]
fn criterion_09_determinism() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    pipeline(a.path());
    pipeline(b.path());
    let (fa, fb) = (files(a.path()), files(b.path()));
    let differing: Vec<&String> = fa.keys().filter(|k| fa.get(*k) != fb.get(*k)).collect();
    let same_set = fa.keys().eq(fb.keys());

    // rerunning train from the recorded config reproduces every artifact but the manifest
    let rerun_diff: Vec<&String> = fa
        .keys()
        .filter_map(|k| k.strip_prefix("run/").map(|rest| (k, rest)))
        .filter(|(_, rest)| *rest != "manifest.json")
        .filter(|(k, rest)| fa.get(*k) != fa.get(&format!("rerun/{rest}")))
        .map(|(k, _)| k)
        .collect();
    let pass = same_set && differing.is_empty() && rerun_diff.is_empty();
    report(9, "determinism", pass, &format!(
        "{} artifacts from 8 commands compared across two runs: {} differ; train rerun from config.json: {} differ",
        fa.len(),
        differing.len(),
        rerun_diff.len()
    ));
    assert!(pass, "differing: {differing:?} rerun: {rerun_diff:?}");
}

// ---------------------------------------------------------------- 10

fn naive_pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (sx, sy) = (x.iter().sum::<f64>(), y.iter().sum::<f64>());
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    let sxx: f64 = x.iter().map(|a| a * a).sum();
    let syy: f64 = y.iter().map(|b| b * b).sum();
    (n * sxy - sx * sy) / ((n * sxx - sx * sx).sqrt() * (n * syy - sy * sy).sqrt())
}

/// Rank by counting: 1 + #smaller + (#equal - 1) / 2.
fn naive_ranks(x: &[f64]) -> Vec<f64> {
    x.iter()
        .map(|&v| {
            let less = x.iter().filter(|&&u| u < v).count() as f64;
            let equal = x.iter().filter(|&&u| u == v).count() as f64;
            1.0 + less + (equal - 1.0) / 2.0
        })
        .collect()
}

#[test]
fn criterion_10_correlation_oracles() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut worst: f64 = 0.0;
    let mut tied = 0;
    let mut done = 0;
    while done < 1000 {
        let n = rng.random_range(3..60);
        let ties = done % 2 == 0;
        let draw = |rng: &mut ChaCha8Rng| -> f64 {
            if ties {
                rng.random_range(0..5) as f64
            } else {
                rng.random_range(-1.0..1.0)
            }
        };
        let x: Vec<f64> = (0..n).map(|_| draw(&mut rng)).collect();
        let y: Vec<f64> = x.iter().map(|v| if rng.random_bool(0.5) { *v } else { draw(&mut rng) }).collect();
        let (Ok(p), Ok(s)) = (pearson(&x, &y), spearman(&x, &y)) else { continue };
        worst = worst.max((p - naive_pearson(&x, &y)).abs());
        worst = worst.max((s - naive_pearson(&naive_ranks(&x), &naive_ranks(&y))).abs());
        if ties {
            tied += 1;
        }
        done += 1;
    }
    let pass = worst < 1e-12;
    report(10, "correlation oracles", pass, &format!(
        "1000 instances ({tied} with ties): max |difference| {worst:.2e} (bound 1e-12)"
    ));
    assert!(pass);
}
