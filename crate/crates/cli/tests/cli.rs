use std::path::Path;
use std::process::{Command, Output};

fn gal(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gal"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn ttest_from_summary_statistics() {
    let o = gal(&[
        "ttest",
        "--summary",
        "3.9535",
        "0.4307",
        "5",
        "2.8079",
        "0.2720",
        "5",
    ]);
    assert!(o.status.success());
    assert!(
        stdout(&o).contains("t = 5.0288, p = 1.0157e-3, df = 8"),
        "{}",
        stdout(&o)
    );
}

#[test]
fn ttest_from_files() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.txt");
    let b = dir.path().join("b.txt");
    std::fs::write(&a, "1\n2\n3.5\n4\n").unwrap();
    std::fs::write(&b, "1, 2, 3.5, 4").unwrap();
    let o = gal(&["ttest", "--files", a.to_str().unwrap(), b.to_str().unwrap()]);
    assert!(o.status.success());
    assert!(
        stdout(&o).contains("t = 0.0000, p = 1.0000e0, df = 6"),
        "{}",
        stdout(&o)
    );
}

#[test]
fn bounds_calculator_and_sweep() {
    let delta = format!("{}", 2.0 * (-2f64).exp());
    let o = gal(&[
        "bounds",
        "--hypotheses",
        "1",
        "--delta",
        &delta,
        "--dim",
        "4",
        "--range",
        "0",
        "1",
        "--p",
        "2",
        "--samples",
        "100",
    ]);
    assert!(o.status.success());
    let value: f64 = stdout(&o).trim().parse().unwrap();
    assert!((value - 0.2).abs() < 1e-12);

    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("bounds.csv");
    let o = gal(&[
        "bounds",
        "--check-remainder",
        "--cases",
        "50",
        "--out",
        csv.to_str().unwrap(),
    ]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("violations 0"));
    let text = std::fs::read_to_string(csv).unwrap();
    assert!(text.starts_with("lhs,rhs_revisited,rhs_conventional,cos_gamma"));
    assert_eq!(text.lines().count(), 51);

    assert!(!gal(&["bounds", "--hypotheses", "1"]).status.success());
}

#[test]
fn gradcheck_passes() {
    let o = gal(&["gradcheck", "--seed", "3"]);
    assert!(o.status.success(), "{}", stdout(&o));
    assert_eq!(stdout(&o).matches(" ok").count(), 2);
}

#[test]
fn toy_traces_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let out = dir.path().join(name);
        let o = gal(&[
            "toy",
            "--problem",
            "quadratic_bowl",
            "--optimizer",
            "adam",
            "--steps",
            "20",
            "--seed",
            "4",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert!(o.status.success());
        std::fs::read_to_string(out).unwrap()
    };
    let a = run("a.csv");
    assert_eq!(a, run("b.csv"));
    assert!(a.starts_with("arm,step,x,y,loss,adjusted"));
    // Two arms of 21 rows each plus the header.
    assert_eq!(a.lines().count(), 43);
    assert!(!gal(&[
        "toy",
        "--problem",
        "quadratic_bowl",
        "--optimizer",
        "sgd",
        "--steps",
        "0"
    ])
    .status
    .success());
    assert!(!gal(&[
        "toy",
        "--problem",
        "nope",
        "--optimizer",
        "sgd",
        "--steps",
        "3"
    ])
    .status
    .success());
}

fn write_config(dir: &Path, extra_gal: &str) -> std::path::PathBuf {
    let logs = dir.join("logs");
    let summary = dir.join("summary.csv");
    let text = format!(
        r#"{{
            "dataset": {{"source": {{"kind": "blobs", "classes": 3, "dim": 4, "n": 60, "spread": 0.5}}}},
            "model": {{"arch": "(8)"}},
            "gal": {{"enabled": true, "alpha": 0.01, "beta": 1.0, "adjuster_arch": "(4)"{extra_gal}}},
            "optimizer": {{"kind": "sgd", "learning_rate": 0.1}},
            "train": {{"epochs": 2, "batch_size": 16, "seeds": [0, 1]}},
            "output": {{"log_path": {logs:?}, "summary_path": {summary:?}}}
        }}"#
    );
    let path = dir.join("config.json");
    std::fs::write(&path, text).unwrap();
    path
}

#[test]
fn train_writes_logs_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "");
    let o = gal(&["train", "--config", config.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for arm in ["baseline", "gal"] {
        for seed in [0, 1] {
            let log =
                std::fs::read_to_string(dir.path().join(format!("logs/{arm}/seed-{seed}.jsonl")))
                    .unwrap();
            // 48 training rows in batches of 16, two epochs.
            assert_eq!(log.lines().count(), 6);
            assert!(log
                .lines()
                .next()
                .unwrap()
                .starts_with(r#"{"epoch":0,"step":0,"loss":"#));
        }
    }
    let summary = std::fs::read_to_string(dir.path().join("summary.csv")).unwrap();
    assert!(summary.contains("accuracy") && summary.contains("error"));
}

#[test]
fn train_rejects_unknown_keys() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), r#", "alhpa": 1"#);
    let o = gal(&["train", "--config", config.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("unknown field"));
}

#[test]
fn ablate_policy_sweep() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "");
    let out = dir.path().join("ablate.csv");
    let o = gal(&[
        "ablate",
        "--config",
        config.to_str().unwrap(),
        "--sweep",
        "policy",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(out).unwrap();
    assert_eq!(text.lines().count(), 6);
    assert!(text.contains("always_vanilla"));
}
