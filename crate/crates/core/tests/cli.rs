use std::path::Path;
use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mkcapsnet"))
        .args(args)
        .output()
        .unwrap()
}

fn text(b: &[u8]) -> String {
    String::from_utf8_lossy(b).into_owned()
}

fn synth(dir: &Path, n_rois: usize, seed: &str) -> String {
    let spec = dir.join(format!("spec{n_rois}.txt"));
    std::fs::write(
        &spec,
        format!("n_rois = {n_rois}\nn_per_class = 12\nn_timepoints = 80\nblock = 0-2:0.8:0.0\n"),
    )
    .unwrap();
    let out = dir.join(format!("data{n_rois}"));
    let o = run(&[
        "synth",
        "--out",
        out.to_str().unwrap(),
        "--spec",
        spec.to_str().unwrap(),
        "--seed",
        seed,
    ]);
    assert!(o.status.success(), "{}", text(&o.stderr));
    out.join("manifest.csv").to_str().unwrap().to_string()
}

const SMALL: [&str; 8] = [
    "--set",
    "n_filters=3",
    "--set",
    "n_slices=1",
    "--set",
    "capsule_len=3",
    "--set",
    "epochs=3",
];

#[test]
fn no_arguments_is_a_usage_error() {
    let o = run(&[]);
    assert_eq!(o.status.code(), Some(1));
    assert!(text(&o.stderr).contains("Usage"));
}

#[test]
fn train_eval_trace_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let data = synth(tmp.path(), 16, "3");
    let ck = tmp.path().join("model.ckpt");
    let mut args = vec![
        "train",
        "--data",
        &data,
        "--out-checkpoint",
        ck.to_str().unwrap(),
        "--seed",
        "4",
    ];
    args.extend(SMALL);
    let o = run(&args);
    assert!(o.status.success(), "{}", text(&o.stderr));
    let stdout = text(&o.stdout);
    assert!(stdout.starts_with("# train: resolved configuration\n"));
    assert!(
        stdout.contains("n_rois = 16\n")
            && stdout.contains("seed = 4\n")
            && stdout.contains("epochs=3\n")
    );

    let o = run(&[
        "eval",
        "--checkpoint",
        ck.to_str().unwrap(),
        "--data",
        &data,
    ]);
    assert!(o.status.success(), "{}", text(&o.stderr));
    let stdout = text(&o.stdout);
    assert_eq!(
        stdout
            .lines()
            .filter(|l| l.ends_with(".csv") || l.contains(".csv,"))
            .count(),
        24
    );
    assert!(stdout.contains("eval.accuracy="));

    let sample = Path::new(&data)
        .parent()
        .unwrap()
        .read_dir()
        .unwrap()
        .map(|e| e.unwrap().path())
        .find(|p| p.file_name().unwrap() != "manifest.csv")
        .unwrap();
    let csv = tmp.path().join("trace.csv");
    let o = run(&[
        "trace",
        "--checkpoint",
        ck.to_str().unwrap(),
        "--input",
        sample.to_str().unwrap(),
        "--out",
        csv.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", text(&o.stderr));
    let trace = std::fs::read_to_string(csv).unwrap();
    // header plus capsules x 3 iterations
    assert!(trace.lines().count() > 3);
}

#[test]
fn eval_on_wrong_size_is_a_data_error() {
    let tmp = tempfile::tempdir().unwrap();
    let data16 = synth(tmp.path(), 16, "1");
    let data18 = synth(tmp.path(), 18, "1");
    let ck = tmp.path().join("m.ckpt");
    let mut args = vec![
        "train",
        "--data",
        &data16,
        "--out-checkpoint",
        ck.to_str().unwrap(),
        "--seed",
        "1",
    ];
    args.extend(SMALL);
    assert!(run(&args).status.success());
    let o = run(&[
        "eval",
        "--checkpoint",
        ck.to_str().unwrap(),
        "--data",
        &data18,
    ]);
    assert_eq!(o.status.code(), Some(2));
    let err = text(&o.stderr);
    assert!(err.contains("18") && err.contains("16"), "{err}");
}

#[test]
fn bad_inputs_map_to_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let data = synth(tmp.path(), 16, "2");
    let o = run(&[
        "crossval",
        "--data",
        &data,
        "--seed",
        "1",
        "--set",
        "no_such_key=1",
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(text(&o.stderr).contains("no_such_key"));

    let o = run(&[
        "crossval",
        "--data",
        "/nonexistent/manifest.csv",
        "--seed",
        "1",
    ]);
    assert_eq!(o.status.code(), Some(2));

    let junk = tmp.path().join("junk.ckpt");
    std::fs::write(&junk, b"not a checkpoint").unwrap();
    let o = run(&[
        "eval",
        "--checkpoint",
        junk.to_str().unwrap(),
        "--data",
        &data,
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(text(&o.stderr).to_lowercase().contains("magic"));
}

#[test]
fn baseline_and_ablation_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let data = synth(tmp.path(), 16, "6");
    for method in ["knn", "lda"] {
        let o = run(&[
            "baseline",
            "--method",
            method,
            "--data",
            &data,
            "--top-features",
            "10",
            "--seed",
            "2",
            "--folds",
            "3",
        ]);
        assert!(o.status.success(), "{}", text(&o.stderr));
        assert!(text(&o.stdout).contains("accuracy"));
    }
    let grid = tmp.path().join("grid.csv");
    std::fs::write(&grid, "capsule,column(1),no,L2\nscalar,multi,yes,L1\n").unwrap();
    let csv = tmp.path().join("ablation.csv");
    let mut args = vec![
        "ablation",
        "--data",
        &data,
        "--grid",
        grid.to_str().unwrap(),
        "--out",
        csv.to_str().unwrap(),
        "--folds",
        "3",
        "--seed",
        "2",
    ];
    args.extend(SMALL);
    let o = run(&args);
    assert!(o.status.success(), "{}", text(&o.stderr));
    let table = std::fs::read_to_string(csv).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("capsule,column(1),no,L2,"));
    assert!(lines[2].starts_with("scalar,multi,yes,L1,"));
}
