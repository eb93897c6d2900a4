use std::path::Path;
use std::process::{Command, Output};

fn comhe(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_comhe"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn read(path: impl AsRef<Path>) -> String {
    std::fs::read_to_string(path).unwrap()
}

#[test]
fn minimize_reaches_the_tetrahedron_and_writes_a_trace() {
    let dir = tempfile::tempdir().unwrap();
    let out = comhe(
        &["minimize", "--n", "4", "--dim", "3", "--s", "1"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("final energy 7.348469"));
    let csv = read(dir.path().join("minimize_trace.csv"));
    assert!(csv.starts_with("iter,energy_full,objective,grad_norm\n"));
    let summary: serde_json::Value =
        serde_json::from_str(&read(dir.path().join("minimize_summary.json"))).unwrap();
    let e = summary[0]["final_energy"].as_f64().unwrap();
    assert!((e - 7.348469).abs() / 7.348469 < 1e-3);
}

#[test]
fn missing_config_exits_2_and_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.toml");
    let out = comhe(
        &["minimize", "--config", missing.to_str().unwrap()],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope.toml"));
}

#[test]
fn unknown_config_key_exits_2_with_location() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "seed = 1\n[theory]\nkk = 3\n").unwrap();
    let out = comhe(
        &["validate-theory", "--config", cfg.to_str().unwrap()],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 3") && err.contains("kk"), "{err}");
}

#[test]
fn bad_flag_value_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = comhe(&["train", "--arms", "none,bogus"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let out = comhe(&["minimize", "--n", "1"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn theorem1_report_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = comhe(
        &[
            "validate-theory",
            "--which",
            "theorem1",
            "--d",
            "1000",
            "--k",
            "800",
            "--eps",
            "0.3",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0));
    let report: serde_json::Value =
        serde_json::from_str(&read(dir.path().join("theory_report.json"))).unwrap();
    assert_eq!(report[0]["name"], "theorem1");
    assert_eq!(report[0]["pass"], true);
}

#[test]
fn failing_check_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("t.toml");
    // The second bound needs an acute angle.
    std::fs::write(&cfg, "[theory]\nwhich = \"theorem2\"\nangle = 120.0\n").unwrap();
    let out = comhe(
        &["validate-theory", "--config", cfg.to_str().unwrap()],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn flags_override_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("m.toml");
    std::fs::write(
        &cfg,
        "command = \"minimize\"\nseed = 4\n[minimize]\nn = 3\ndim = 2\nrestarts = 2\n",
    )
    .unwrap();
    let out = comhe(
        &["minimize", "--config", cfg.to_str().unwrap(), "--seed", "9"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0));
    assert!(dir.path().join("minimize_trace_seed9.csv").exists());
    assert!(dir.path().join("minimize_trace_seed10.csv").exists());
    let out = comhe(&["train", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(
        out.status.code(),
        Some(2),
        "config is for another subcommand"
    );
}

#[test]
fn train_writes_one_csv_per_arm_and_seed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("t.toml");
    std::fs::write(
        &cfg,
        "[train]\narms = [\"none\", \"group\"]\nrotation = true\nseeds = 2\nhidden = [8, 8]\n[train.dataset]\nclasses = 4\nsamples_per_class = 10\ndim = 6\n[train.params]\nepochs = 2\n",
    )
    .unwrap();
    let out = comhe(
        &["train", "--config", cfg.to_str().unwrap(), "--epochs", "3"],
        dir.path(),
    );
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    for arm in ["none", "group", "rotation"] {
        for seed in 0..2 {
            let csv = read(dir.path().join(format!("train_{arm}_seed{seed}.csv")));
            assert!(csv.starts_with(
                "iter,train_loss,test_error,energy_layer_1,energy_layer_2,energy_total\n"
            ));
            assert_eq!(csv.lines().count(), 1 + 4, "initial row plus one per epoch");
        }
    }
    let summary: serde_json::Value =
        serde_json::from_str(&read(dir.path().join("train_summary.json"))).unwrap();
    assert_eq!(summary.as_array().unwrap().len(), 3);
}

#[test]
fn bilateral_demo_reports_both_identities() {
    let dir = tempfile::tempdir().unwrap();
    let out = comhe(
        &["bilateral-demo", "--m", "20", "--n", "30", "--rank", "5"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0));
    let r: serde_json::Value =
        serde_json::from_str(&read(dir.path().join("bilateral.json"))).unwrap();
    assert!(r["projection_error"].as_f64().unwrap() < 1e-9);
    assert!(r["reconstruction_error"].as_f64().unwrap() < 1e-8);
    let out = comhe(
        &["bilateral-demo", "--m", "4", "--n", "30", "--rank", "5"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn thread_count_does_not_change_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let args = [
        "train", "--arms", "none,rp", "--seeds", "3", "--epochs", "1",
    ];
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let mut one = args.to_vec();
    one.extend(["--threads", "1"]);
    let mut three = args.to_vec();
    three.extend(["--threads", "3"]);
    assert_eq!(comhe(&one, &a).status.code(), Some(0));
    assert_eq!(comhe(&three, &b).status.code(), Some(0));
    for name in ["train_summary.json", "train_rp_seed2.csv"] {
        assert_eq!(read(a.join(name)), read(b.join(name)));
    }
}
