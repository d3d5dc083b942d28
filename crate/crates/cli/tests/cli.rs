use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn semcom(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_semcom"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = semcom(args);
    assert!(
        out.status.success(),
        "semcom {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn p(dir: &Path, name: &str) -> String {
    dir.join(name).to_string_lossy().into_owned()
}

#[test]
fn help_lists_every_subcommand() {
    let text = String::from_utf8(ok(&["--help"]).stdout).unwrap();
    for sub in [
        "train-codec",
        "train-predictor",
        "gen-priority-dataset",
        "train-students",
        "run-eval",
        "eval-predictor",
        "channel-stats",
        "gen-data",
    ] {
        assert!(text.contains(sub), "{sub} missing from help");
    }
}

#[test]
fn run_eval_requires_seed() {
    let out = semcom(&["run-eval", "--codec", "c.bin", "--data", "d.bin"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("--seed"));
}

#[test]
fn unknown_config_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = p(dir.path(), "bad.conf");
    fs::write(&cfg, "count = 3\ncolour = red\n").unwrap();
    let out = semcom(&["gen-data", "--config", &cfg, "--out", &p(dir.path(), "x.img")]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("colour"));
}

#[test]
fn channel_stats_prints_json() {
    let out = ok(&[
        "channel-stats",
        "--realizations",
        "500",
        "--autocorr-realizations",
        "5",
        "--autocorr-len",
        "100",
    ]);
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    for key in ["mean_power", "envelope_mean", "autocorr_curve", "phase_hist"] {
        assert!(v.get(key).is_some(), "{key} missing");
    }
}

#[test]
fn full_pipeline_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&[
        "gen-data",
        "--count",
        "24",
        "--seed",
        "5",
        "--out",
        &p(d, "train.img"),
        "--test-out",
        &p(d, "test.img"),
        "--test-fraction",
        "0.25",
    ]);
    ok(&[
        "train-codec",
        "--data",
        &p(d, "train.img"),
        "--out",
        &p(d, "codec.bin"),
        "--epochs",
        "1",
        "--history",
        &p(d, "codec_history.json"),
    ]);
    ok(&[
        "train-predictor",
        "--out",
        &p(d, "pred.bin"),
        "--num-sequences",
        "6",
        "--sequence-len",
        "60",
        "--epochs",
        "1",
        "--windows-per-epoch",
        "64",
    ]);
    ok(&[
        "eval-predictor",
        "--predictor",
        &p(d, "pred.bin"),
        "--out",
        &p(d, "pred.csv"),
        "--windows",
        "20",
        "--num-sequences",
        "3",
        "--sequence-len",
        "80",
    ]);
    let pred_csv = fs::read_to_string(p(d, "pred.csv")).unwrap();
    assert_eq!(pred_csv.lines().count(), 25);
    assert!(pred_csv.starts_with("horizon_step,nmse"));
    ok(&[
        "gen-priority-dataset",
        "--codec",
        &p(d, "codec.bin"),
        "--data",
        &p(d, "test.img"),
        "--limit",
        "4",
        "--holdout-fraction",
        "0.25",
        "--out-w",
        &p(d, "w.dist"),
        "--out-r",
        &p(d, "r.dist"),
    ]);
    ok(&[
        "train-students",
        "--data-w",
        &p(d, "w.dist"),
        "--data-r",
        &p(d, "r.dist"),
        "--out-w",
        &p(d, "wnet.bin"),
        "--out-r",
        &p(d, "rnet.bin"),
        "--epochs",
        "3",
        "--report",
        &p(d, "students.json"),
    ]);

    let conf = p(d, "eval.conf");
    fs::write(
        &conf,
        format!(
            "# sweep\ncodec = {}\ndata = {}\npredictor = {}\nwnet = {}\nrnet = {}\nsnr_test = 0, 10\nbootstrap_resamples = 50\nlimit = 3\nseed = 1\n",
            p(d, "codec.bin"),
            p(d, "test.img"),
            p(d, "pred.bin"),
            p(d, "wnet.bin"),
            p(d, "rnet.bin")
        ),
    )
    .unwrap();
    let run = |tag: &str| {
        ok(&[
            "run-eval",
            "--config",
            &conf,
            "--seed",
            "9",
            "--out-csv",
            &p(d, &format!("{tag}.csv")),
            "--out-json",
            &p(d, &format!("{tag}.json")),
            "--out-traces",
            &p(d, &format!("{tag}.jsonl")),
        ]);
    };
    run("a");
    run("b");
    for ext in ["csv", "json", "jsonl"] {
        assert_eq!(
            fs::read(p(d, &format!("a.{ext}"))).unwrap(),
            fs::read(p(d, &format!("b.{ext}"))).unwrap(),
            "{ext} differs between identical runs"
        );
    }
    let csv = fs::read_to_string(p(d, "a.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("scheme,snr,mean_psnr,ci,n"));
    assert_eq!(lines.count(), 6 * 2);
    assert_eq!(fs::read_to_string(p(d, "a.jsonl")).unwrap().lines().count(), 3 * 6 * 2);
    let summary: serde_json::Value = serde_json::from_slice(&fs::read(p(d, "a.json")).unwrap()).unwrap();
    assert_eq!(
        summary["config"]["link"]["seed"], 9,
        "flag must override the config file"
    );

    let out = semcom(&[
        "run-eval",
        "--config",
        &conf,
        "--schemes",
        "PC_FP",
        "--predictor",
        &p(d, "missing.bin"),
    ]);
    assert!(!out.status.success());
}
