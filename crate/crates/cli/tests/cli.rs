use std::path::Path;
use std::process::{Command, Output};

fn eqlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_eqlab"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = eqlab(args);
    assert!(
        out.status.success(),
        "eqlab {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn configs() -> &'static Path {
    Path::new(concat!(env!("CARGO_MANIFEST_DIR"), "/configs"))
}

#[test]
fn rmps_of_example_mlp() {
    let cfg = configs().join("mlp3.json");
    let out = ok(&["rmps", "-c", s(&cfg), "--format", "json"]);
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["total_rmps"], 24200);
    let table = ok(&["rmps", "-c", s(&cfg), "--format", "table"]);
    assert!(table.lines().last().unwrap().contains("24200"));
}

#[test]
fn rmps_writes_report_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r.json");
    ok(&[
        "rmps",
        "-c",
        s(&configs().join("mlp3.json")),
        "--format",
        "json",
        "-o",
        s(&out),
    ]);
    let v: serde_json::Value = serde_json::from_slice(&std::fs::read(&out).unwrap()).unwrap();
    assert_eq!(v["report"]["total_rmps"], 24200);
    assert!(dir.path().join("r.json.manifest.json").exists());
}

#[test]
fn malformed_config_reports_position() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{\n  \"input\": {\"memory\": 10,, }\n}").unwrap();
    let out = eqlab(&["rmps", "-c", s(&bad)]);
    assert_eq!(out.status.code(), Some(4));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("bad.json:2:"), "{err}");
}

#[test]
fn bad_shape_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("conv.json");
    std::fs::write(
        &p,
        r#"{"input":{"memory":3,"features":4},"output":2,
           "layers":[{"kind":"conv1d","filters":2,"kernel":9},{"kind":"dense","units":2}]}"#,
    )
    .unwrap();
    let out = eqlab(&["rmps", "-c", s(&p)]);
    assert_eq!(out.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&out.stderr).contains("layer 0"));
}

#[test]
fn flatten_only_costs_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("flat.json");
    std::fs::write(
        &p,
        r#"{"input":{"memory":5,"features":4},"output":20,"layers":[{"kind":"flatten"}]}"#,
    )
    .unwrap();
    let v: serde_json::Value =
        serde_json::from_str(&ok(&["rmps", "-c", s(&p), "--format", "json"])).unwrap();
    assert_eq!(v["total_rmps"], 0);
}

#[test]
fn missing_inputs_exit_three() {
    let dir = tempfile::tempdir().unwrap();
    let nope = dir.path().join("nope.bin");
    let out = eqlab(&["evaluate", "--dataset", s(&nope), "--model", s(&nope)]);
    assert_eq!(out.status.code(), Some(3));
    let out = eqlab(&["rmps", "-c", s(&nope)]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn bad_flag_values_are_rejected() {
    assert_eq!(
        eqlab(&["bench", "--families", "rnn", "-o", "/dev/null"])
            .status
            .code(),
        Some(4)
    );
    assert_eq!(eqlab(&["rmps"]).status.code(), Some(2));
}

#[test]
fn simulate_train_evaluate_on_a_clean_linear_link() {
    let dir = tempfile::tempdir().unwrap();
    let ds = dir.path().join("ds.bin");
    let model = dir.path().join("m.bin");
    let eval = dir.path().join("eval.json");
    ok(&[
        "simulate",
        "--link",
        "twc",
        "--linear",
        "--noise-off",
        "--train-symbols",
        "16384",
        "--test-symbols",
        "8192",
        "--memory",
        "15",
        "-o",
        s(&ds),
    ]);
    let train_cfg = configs().join("train.json");
    ok(&[
        "train",
        "--dataset",
        s(&ds),
        "--family",
        "mlp",
        "--hyper",
        "32,16,16",
        "-c",
        s(&train_cfg),
        "-o",
        s(&model),
    ]);
    ok(&[
        "evaluate",
        "--dataset",
        s(&ds),
        "--model",
        s(&model),
        "-o",
        s(&eval),
    ]);
    let v: serde_json::Value = serde_json::from_slice(&std::fs::read(&eval).unwrap()).unwrap();
    assert_eq!(v["result"]["equalized"]["bit_errors"], 0);
    assert!(v["result"]["equalized"]["bits"].as_u64().unwrap() > 60_000);
    for f in [
        "ds.bin.manifest.json",
        "m.bin.manifest.json",
        "m.bin.losses.json",
        "eval.json.manifest.json",
    ] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
}

fn ok_in(dir: &Path, args: &[&str]) {
    let out = Command::new(env!("CARGO_BIN_EXE_eqlab"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs");
    assert!(
        out.status.success(),
        "eqlab {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn repeated_runs_are_byte_identical() {
    let files = [
        "ds.bin",
        "ds.bin.manifest.json",
        "m.bin",
        "m.bin.losses.json",
        "m.bin.manifest.json",
        "r.csv",
        "r.csv.json",
        "r.csv.manifest.json",
    ];
    let run = || {
        let dir = tempfile::tempdir().unwrap();
        let d = dir.path();
        ok_in(
            d,
            &[
                "simulate",
                "--train-symbols",
                "2048",
                "--test-symbols",
                "2048",
                "--memory",
                "9",
                "-o",
                "ds.bin",
            ],
        );
        ok_in(
            d,
            &[
                "train",
                "--dataset",
                "ds.bin",
                "--family",
                "cnn-mlp",
                "--hyper",
                "2,3,8,4",
                "--epochs",
                "2",
                "-o",
                "m.bin",
            ],
        );
        ok_in(
            d,
            &[
                "sweep",
                "--dataset",
                "ds.bin",
                "--families",
                "mlp",
                "--budgets",
                "1e3",
                "--trials",
                "1",
                "--epochs",
                "1",
                "-o",
                "r.csv",
            ],
        );
        files.map(|f| std::fs::read(d.join(f)).unwrap())
    };
    let a = run();
    let b = run();
    for (name, (x, y)) in files.iter().zip(a.iter().zip(&b)) {
        assert!(x == y, "{name} differs between runs");
    }
    let csv = String::from_utf8(a[5].clone()).unwrap();
    assert_eq!(
        csv.lines().count(),
        2 + 1 + 2,
        "header lines, one cell, dbp and unequalized rows"
    );
}
