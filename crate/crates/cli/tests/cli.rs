use std::path::Path;
use std::process::{Command, Output};

use wxcnn::data::{apply_stats, read_dataset, split};
use wxcnn::network::{evaluate, preset_config, read_model, Network};
use wxcnn::Rng;

fn wxcnn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wxcnn"))
        .args(args)
        .output()
        .expect("failed to launch wxcnn")
}

fn ok(args: &[&str]) -> String {
    let out = wxcnn(args);
    assert!(
        out.status.success(),
        "{args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn fails(args: &[&str]) -> String {
    let out = wxcnn(args);
    assert!(!out.status.success(), "{args:?} unexpectedly succeeded");
    String::from_utf8(out.stderr).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn synth(dir: &Path, name: &str, event: &str, per_class: usize, seed: u64) -> std::path::PathBuf {
    let path = dir.join(name);
    let n = per_class.to_string();
    ok(&[
        "synth",
        "--event",
        event,
        "--pos",
        &n,
        "--neg",
        &n,
        "--seed",
        &seed.to_string(),
        "--out",
        s(&path),
    ]);
    path
}

#[test]
fn synth_is_deterministic_and_reports_dims() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.cpds");
    let b = dir.path().join("b.cpds");
    let out = ok(&[
        "synth",
        "--event",
        "tc",
        "--pos",
        "5",
        "--neg",
        "5",
        "--seed",
        "7",
        "--out",
        s(&a),
    ]);
    assert!(out.contains("10") && out.contains("8x32x32"), "{out}");
    ok(&[
        "--sequential",
        "synth",
        "--event",
        "tc",
        "--pos",
        "5",
        "--neg",
        "5",
        "--seed",
        "7",
        "--out",
        s(&b),
    ]);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert_eq!(read_dataset(&a).unwrap().len(), 10);
}

#[test]
fn synth_rejects_empty_classes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x.cpds");
    fails(&[
        "synth",
        "--event",
        "tc",
        "--pos",
        "0",
        "--neg",
        "5",
        "--out",
        s(&out),
    ]);
    assert!(!out.exists());
}

#[test]
fn train_writes_model_and_log() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), "tc.cpds", "tc", 15, 1);
    let model = dir.path().join("tc.cnnm");
    let out = ok(&[
        "train",
        "--data",
        s(&data),
        "--epochs",
        "2",
        "--seed",
        "3",
        "--out",
        s(&model),
    ]);
    assert!(
        out.contains("val_acc") && out.contains("Predict TC"),
        "{out}"
    );
    let net = read_model(&model).unwrap();
    assert_eq!(
        net.config(),
        &preset_config(wxcnn::data::EventKind::TropicalCyclone)
    );
    assert!(net.input_stats().is_some());
    let csv = std::fs::read_to_string(model.with_extension("csv")).unwrap();
    assert_eq!(csv.lines().count(), 3, "{csv}");
    assert!(csv.starts_with("epoch,"));
}

#[test]
fn zero_learning_rate_leaves_the_initial_weights() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), "tc.cpds", "tc", 10, 2);
    let model = dir.path().join("m.cnnm");
    ok(&[
        "train",
        "--data",
        s(&data),
        "--epochs",
        "2",
        "--lr",
        "0",
        "--seed",
        "5",
        "--out",
        s(&model),
    ]);
    let trained = read_model(&model).unwrap();

    // Same stream order as the command: split first, then initialization.
    let ds = read_dataset(&data).unwrap();
    let mut rng = Rng::new(5);
    split(&ds, [0.8, 0.1, 0.1], &mut rng).unwrap();
    let fresh = Network::build(preset_config(ds.kind), &mut rng).unwrap();
    for (a, b) in trained.layers().iter().zip(fresh.layers()) {
        assert_eq!(a.params(), b.params());
    }
    let csv = std::fs::read_to_string(model.with_extension("csv")).unwrap();
    let val: Vec<&str> = csv
        .lines()
        .skip(1)
        .map(|l| l.rsplit(',').next().unwrap())
        .collect();
    assert_eq!(val[0], val[1]);
}

#[test]
fn missing_data_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let err = fails(&[
        "train",
        "--data",
        s(&dir.path().join("nope.cpds")),
        "--out",
        s(&dir.path().join("m.cnnm")),
    ]);
    assert!(err.contains("nope.cpds"), "{err}");
}

#[test]
fn dimension_mismatch_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), "tc.cpds", "tc", 3, 1);
    let err = fails(&[
        "train",
        "--data",
        s(&data),
        "--event",
        "wf",
        "--out",
        s(&dir.path().join("m.cnnm")),
    ]);
    assert!(err.contains("dimension mismatch"), "{err}");

    let wf = synth(dir.path(), "wf.cpds", "wf", 5, 1);
    let model = dir.path().join("wf.cnnm");
    ok(&[
        "train",
        "--data",
        s(&wf),
        "--epochs",
        "1",
        "--split",
        "0.6,0.2,0.2",
        "--out",
        s(&model),
    ]);
    let err = fails(&["eval", "--model", s(&model), "--data", s(&data)]);
    assert!(err.contains("dimension mismatch"), "{err}");
}

#[test]
fn tune_honours_the_budget_and_resumes() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), "tc.cpds", "tc", 10, 4);
    let store = dir.path().join("trials.jsonl");
    let args = [
        "tune",
        "--data",
        s(&data),
        "--trials",
        "10",
        "--parallel",
        "2",
        "--epochs",
        "1",
        "--store",
        s(&store),
        "--seed",
        "1",
    ];
    let out = ok(&args);
    assert!(out.contains("10 new trials, 10 total"), "{out}");
    let mut best = f64::INFINITY;
    let rows: Vec<&str> = out
        .lines()
        .skip(1)
        .take_while(|l| !l.contains("new trials"))
        .collect();
    assert_eq!(rows.len(), 10);
    for row in rows {
        let running: f64 = row.split_whitespace().last().unwrap().parse().unwrap();
        assert!(running <= best, "{out}");
        best = running;
    }
    let again = ok(&args);
    assert!(again.contains("0 new trials, 10 total"), "{again}");
}

#[test]
fn tune_reports_a_corrupt_store_line() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), "tc.cpds", "tc", 3, 4);
    let store = dir.path().join("trials.jsonl");
    std::fs::write(&store, "{not json\n").unwrap();
    let err = fails(&[
        "tune",
        "--data",
        s(&data),
        "--trials",
        "2",
        "--store",
        s(&store),
    ]);
    assert!(err.contains("line 1"), "{err}");
}

#[test]
fn eval_matches_in_process_evaluation() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), "tc.cpds", "tc", 10, 6);
    let model = dir.path().join("m.cnnm");
    ok(&[
        "train",
        "--data",
        s(&data),
        "--epochs",
        "2",
        "--out",
        s(&model),
    ]);
    let out = ok(&["eval", "--model", s(&model), "--data", s(&data)]);

    let net = read_model(&model).unwrap();
    let ds = apply_stats(&read_dataset(&data).unwrap(), net.input_stats().unwrap()).unwrap();
    let report = evaluate(&net, &ds).unwrap();
    let want = format!(
        "{}\nmean loss {:.6}\n",
        report.render("TC"),
        report.mean_loss
    );
    assert_eq!(out, want);
    // Columns are normalized per true label.
    for col in 0..2 {
        assert!((report.confusion[0][col] + report.confusion[1][col] - 1.0).abs() < 1e-12);
    }
}

#[test]
fn exported_pressure_has_its_minimum_at_the_centre() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), "tc.cpds", "tc", 3, 8);
    for index in 0..3 {
        let img = dir.path().join(format!("{index}.ppm"));
        ok(&[
            "export",
            "--data",
            s(&data),
            "--index",
            &index.to_string(),
            "--channel",
            "PSL",
            "--out",
            s(&img),
        ]);
        let bytes = std::fs::read(&img).unwrap();
        let header = b"P6\n32 32\n255\n";
        assert_eq!(&bytes[..header.len()], header);
        let grey: Vec<u8> = bytes[header.len()..].chunks(3).map(|p| p[0]).collect();
        let darkest = (0..grey.len()).min_by_key(|&i| grey[i]).unwrap();
        assert!(
            (darkest / 32).abs_diff(16) <= 1 && (darkest % 32).abs_diff(16) <= 1,
            "record {index}: {darkest}"
        );
    }
    let err = fails(&[
        "export",
        "--data",
        s(&data),
        "--index",
        "0",
        "--channel",
        "XYZ",
        "--out",
        s(&dir.path().join("x.ppm")),
    ]);
    assert!(err.contains("PSL"), "{err}");
}
