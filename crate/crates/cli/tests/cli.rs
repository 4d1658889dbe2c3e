use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn ssanet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ssanet"))
        .args(args)
        .env("RUST_LOG", "warn")
        .env_remove("SSANET_THREADS")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn synth(dir: &Path, n: usize) {
    let o = ssanet(&[
        "synth",
        "--n",
        &n.to_string(),
        "--size",
        "32",
        "--seed",
        "1",
        "--out",
        p(dir),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
}

#[test]
fn spectrum_writes_twelve_csvs_and_a_report() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("spec");
    let o = ssanet(&[
        "spectrum",
        "--length",
        "64",
        "--sigma",
        "0.70710678",
        "--seed",
        "7",
        "--out",
        p(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let csvs = fs::read_dir(&out)
        .unwrap()
        .filter(|e| {
            e.as_ref()
                .unwrap()
                .path()
                .extension()
                .is_some_and(|x| x == "csv")
        })
        .count();
    assert_eq!(csvs, 12);
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    let ssa = report["dist_ssa_gauss"].as_f64().unwrap();
    let comb = report["dist_comb_gauss"].as_f64().unwrap();
    assert!(ssa < comb, "ssa {ssa} comb {comb}");
    assert_eq!(report["seed"], 7);
}

#[test]
fn spectrum_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for dir in [&a, &b] {
        assert_eq!(
            code(&ssanet(&["spectrum", "--seed", "7", "--out", p(dir)])),
            0
        );
    }
    let mut names: Vec<_> = fs::read_dir(&a)
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    names.sort();
    assert_eq!(names.len(), 13);
    for name in names {
        assert_eq!(
            fs::read(a.join(&name)).unwrap(),
            fs::read(b.join(&name)).unwrap(),
            "{name:?}"
        );
    }
}

#[test]
fn spectrum_rejects_odd_length() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("spec");
    let o = ssanet(&["spectrum", "--length", "63", "--out", p(&out)]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("even"), "{}", stderr(&o));
    assert!(!out.exists());
}

#[test]
fn usage_errors_exit_one() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("x");
    assert_eq!(code(&ssanet(&["spectrum", "--bogus", "--out", p(&out)])), 1);
    assert_eq!(code(&ssanet(&["frobnicate"])), 1);
    assert_eq!(code(&ssanet(&[])), 1);
    let o = ssanet(&[
        "synth",
        "--n",
        "2",
        "--size",
        "32",
        "--out",
        p(&tmp.path().join("d")),
    ]);
    assert_eq!(code(&o), 0);
    let o = ssanet(&[
        "train",
        "--variant",
        "nope",
        "--data",
        p(&tmp.path().join("d")),
        "--out",
        p(&out),
    ]);
    assert_eq!(code(&o), 1, "{}", stderr(&o));
    assert!(!out.exists());
    assert_eq!(code(&ssanet(&["--help"])), 0);
}

#[test]
fn synth_train_eval_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data, 4);
    for sub in ["images", "masks", "fov"] {
        assert_eq!(fs::read_dir(data.join(sub)).unwrap().count(), 4, "{sub}");
    }
    let ckpt = tmp.path().join("run/model.ssan");
    let history = tmp.path().join("run/history.csv");
    let o = ssanet(&[
        "train",
        "--variant",
        "ssa2",
        "--data",
        p(&data),
        "--train-count",
        "3",
        "--epochs",
        "2",
        "--seed",
        "5",
        "--out",
        p(&ckpt),
        "--history",
        p(&history),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(ckpt.is_file());
    assert_eq!(fs::read_to_string(&history).unwrap().lines().count(), 3);

    let eval_dir = tmp.path().join("eval");
    let o = ssanet(&[
        "eval",
        "--ckpt",
        p(&ckpt),
        "--data",
        p(&data),
        "--train-count",
        "3",
        "--out",
        p(&eval_dir),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(eval_dir.join("summary.json")).unwrap()).unwrap();
    for key in ["pr_auc", "roc_auc", "best_dice"] {
        let v = summary[key].as_f64().unwrap();
        assert!(v.is_finite() && (0.0..=1.0).contains(&v), "{key} = {v}");
    }
    let last = stdout(&o).lines().last().unwrap().to_string();
    let printed: Vec<f64> = last
        .split_whitespace()
        .map(|t| t.parse().unwrap())
        .collect();
    assert_eq!(printed.len(), 3);
    assert_eq!(printed[1], summary["roc_auc"].as_f64().unwrap());
    assert!(eval_dir.join("curve.csv").is_file());
    assert!(eval_dir.join("per_image").join("synth_0003.csv").is_file());

    // Profile guard on eval.
    let o = ssanet(&[
        "eval",
        "--ckpt",
        p(&ckpt),
        "--data",
        p(&data),
        "--train-count",
        "3",
        "--profile",
        "resnet34",
        "--out",
        p(&tmp.path().join("eval2")),
    ]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    assert!(!tmp.path().join("eval2").exists());
}

#[test]
fn data_errors_exit_two_without_partial_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data, 3);
    let junk = tmp.path().join("junk.ssan");
    fs::write(&junk, b"NOPE and more").unwrap();
    let out = tmp.path().join("eval");
    let o = ssanet(&[
        "eval",
        "--ckpt",
        p(&junk),
        "--data",
        p(&data),
        "--out",
        p(&out),
    ]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    assert!(!out.exists());

    let o = ssanet(&[
        "train",
        "--data",
        p(&tmp.path().join("missing")),
        "--out",
        p(&tmp.path().join("m.ssan")),
    ]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    assert!(!tmp.path().join("m.ssan").exists());
}

#[test]
fn divergence_exits_three_without_a_checkpoint() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data, 3);
    let ckpt = tmp.path().join("out/model.ssan");
    let o = ssanet(&[
        "train",
        "--data",
        p(&data),
        "--train-count",
        "2",
        "--epochs",
        "3",
        "--lr",
        "1e300",
        "--out",
        p(&ckpt),
    ]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    assert!(stderr(&o).contains("epoch"), "{}", stderr(&o));
    assert!(!ckpt.exists());
    assert!(!tmp.path().join("out").exists());
}

#[test]
fn gradcheck_passes_every_suite() {
    let o = ssanet(&["gradcheck"]);
    assert_eq!(code(&o), 0, "{}\n{}", stdout(&o), stderr(&o));
    let text = stdout(&o);
    let rows: Vec<&str> = text.lines().skip(1).collect();
    assert_eq!(rows.len(), 12, "{text}");
    for row in rows {
        assert!(row.trim_end().ends_with("ok"), "{row}");
        let err: f64 = row.split_whitespace().nth(1).unwrap().parse().unwrap();
        assert!(err < 1e-4, "{row}");
    }
    assert!(text.contains("network_ssa2_desk"));
}

#[test]
fn gradcheck_op_selection() {
    let o = ssanet(&["gradcheck", "--ops", "relu,conv2d"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    // conv2d selects both convolution suites.
    assert_eq!(stdout(&o).lines().count(), 4);
    let o = ssanet(&["gradcheck", "--ops", "softmax"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("unknown op"));
}

#[test]
fn ablate_three_variants() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data, 4);
    let table = tmp.path().join("table.csv");
    let o = ssanet(&[
        "ablate",
        "--data",
        p(&data),
        "--variants",
        "ssa2,dec,noms",
        "--train-count",
        "3",
        "--epochs",
        "1",
        "--out",
        p(&table),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = fs::read_to_string(&table).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(
        lines[0],
        "variant,pr_auc,roc_auc,best_dice,params,receptive_field,train_seconds"
    );
    assert_eq!(lines.len(), 4);
    let params: Vec<&str> = lines[1..]
        .iter()
        .map(|l| l.split(',').nth(4).unwrap())
        .collect();
    assert!(lines[1].starts_with("ssa2,") && lines[2].starts_with("dec,"));
    assert_eq!(params[0], params[1]);
    let rf: Vec<usize> = lines[1..]
        .iter()
        .map(|l| l.split(',').nth(5).unwrap().parse().unwrap())
        .collect();
    assert!(rf[1] > rf[0] && rf[0] > rf[2], "{rf:?}");
}

#[test]
fn bad_thread_count_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_ssanet"))
        .args([
            "eval",
            "--ckpt",
            "x",
            "--data",
            "y",
            "--out",
            p(&tmp.path().join("e")),
        ])
        .env("SSANET_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(code(&o), 1);
}
