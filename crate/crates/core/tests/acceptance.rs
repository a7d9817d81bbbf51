//! Acceptance suite: one PASS/FAIL line per criterion.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use mkcapsnet::capsnet::{
    dropout_masks, forward, forward_on_tape, squash, DropoutStrategy, Mode, ModelConfig,
    ModelParams,
};
use mkcapsnet::connectivity::{
    connectivity_matrix, fisher_z, generate_synthetic, pearson, write_dataset, Dataset, TimeSeries,
};
use mkcapsnet::evaluation::{
    baseline_crossval, cross_validate, run_ablation, AblationSpec, BaselineMethod, BaselineOptions,
    KernelChoice,
};
use mkcapsnet::numerics::{grad_check, RandomStream};
use mkcapsnet::training::{
    margin_loss, margin_loss_on_tape, Checkpoint, LossConfig, LossNorm, TrainConfig,
};
use mkcapsnet::{CheckpointError, Error};

use common::{control_spec, random_matrix, random_params, scaled_config, separable_spec};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn gradient_correctness() -> Outcome {
    let start = Instant::now();
    let cfg = ModelConfig::tiny();
    let loss = LossConfig::default();
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for seed in 0..10u64 {
        for mode in [Mode::Train, Mode::Infer] {
            let params = random_params(&cfg, seed);
            let m = random_matrix(cfg.n_rois, 0.6, &mut RandomStream::new(seed, 99));
            let target = (seed % 2) as usize;
            let r = grad_check(params.tensors(), 1e-5, |tape, p| {
                let mp = ModelParams::from_tensors(&cfg, p.clone())?;
                let mut drop_rng = RandomStream::new(seed, 7);
                let nodes = forward_on_tape(tape, &mp, &cfg, &m, mode, &mut drop_rng)?;
                margin_loss_on_tape(tape, nodes.lengths, target, &loss)
            })
            .map_err(|e| e.to_string())?;
            ensure(
                r.max_relative_error < 1e-4,
                format!(
                    "seed {seed} {mode:?}: relative error {:e} at {:?}",
                    r.max_relative_error, r.worst
                ),
            )?;
            worst = worst.max(r.max_relative_error);
            checked += r.checked;
        }
    }
    let elapsed = start.elapsed();
    ensure(
        elapsed < Duration::from_secs(60),
        format!("took {elapsed:?}"),
    )?;
    Ok(format!(
        "10 seeds x train/infer, {checked} elements, max relative error {worst:.2e}, {:.1}s",
        elapsed.as_secs_f64()
    ))
}

fn routing_invariants() -> Outcome {
    let mut max_dev: f64 = 0.0;
    let mut max_len: f64 = 0.0;
    for trial in 0..100u64 {
        let cfg = if trial % 2 == 0 {
            ModelConfig::tiny()
        } else {
            scaled_config()
        };
        let params = random_params(&cfg, trial);
        let mut rng = RandomStream::new(trial, 1);
        let scale = [0.3, 1.0, 3.0][trial as usize % 3];
        let m = random_matrix(cfg.n_rois, scale, &mut rng);
        let mode = if trial % 4 < 2 {
            Mode::Train
        } else {
            Mode::Infer
        };
        let out = forward(&params, &cfg, &m, mode, &mut rng).map_err(|e| e.to_string())?;
        for (it, c) in out.routing.snapshots.iter().enumerate() {
            for row in c.data().chunks_exact(cfg.n_classes) {
                max_dev = max_dev.max((row.iter().sum::<f64>() - 1.0).abs());
                if it == 0 {
                    ensure(
                        row.iter().all(|&x| x == 0.5),
                        format!("trial {trial}: iteration-1 row {row:?}"),
                    )?;
                }
            }
        }
        for &l in &out.lengths {
            max_len = max_len.max(l);
        }
    }
    ensure(
        max_dev <= 1e-12,
        format!("coupling sum deviates by {max_dev:e}"),
    )?;
    ensure(max_len < 1.0, format!("class capsule length {max_len}"))?;
    Ok(format!(
        "100 passes: max |sum c - 1| = {max_dev:.1e}, max length {max_len:.4}, iteration 1 all 0.5"
    ))
}

fn closed_forms() -> Outcome {
    let v = squash(&[3.0, 4.0]);
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    ensure(
        (norm - 25.0 / 26.0).abs() <= 1e-12,
        format!("squash norm {norm}"),
    )?;
    let l2 = LossConfig::default();
    let l1 = LossConfig {
        norm: LossNorm::L1,
        ..Default::default()
    };
    let a = margin_loss(&[0.0, 0.0], 0, &l2).map_err(|e| e.to_string())?;
    let b = margin_loss(&[0.9, 0.1], 0, &l2).map_err(|e| e.to_string())?;
    let c = margin_loss(&[0.0, 0.9], 0, &l1).map_err(|e| e.to_string())?;
    ensure(
        a == 0.81 && b == 0.0 && c == 1.3,
        format!("losses {a} {b} {c}"),
    )?;
    Ok(format!(
        "squash(3,4) norm {norm:.15}; losses {a} / {b} / {c}"
    ))
}

fn dropout_exactness() -> Outcome {
    let cfg = ModelConfig::default();
    let shapes: Vec<(usize, usize)> = cfg
        .capsules_per_channel()
        .iter()
        .map(|&n| (n, cfg.capsule_len))
        .collect();
    let dropped = |m: &mkcapsnet::numerics::Tensor| {
        m.data()
            .chunks_exact(m.shape()[1])
            .filter(|v| v.iter().all(|&x| x == 0.0))
            .count()
    };
    let mut rng = RandomStream::new(2024, 0);
    for trial in 0..1000 {
        let masks = dropout_masks(&shapes, DropoutStrategy::Capsule, 0.5, &mut rng)
            .map_err(|e| e.to_string())?;
        for (m, &(n, _)) in masks.iter().zip(&shapes) {
            let d = dropped(m);
            ensure(
                d == (0.5 * n as f64).round() as usize,
                format!("trial {trial}: {d} of {n} dropped"),
            )?;
        }
    }

    let mut zeros = 0usize;
    let elements = 1_000_000;
    let masks = dropout_masks(
        &[(elements / 10, 10)],
        DropoutStrategy::Scalar,
        0.5,
        &mut rng,
    )
    .map_err(|e| e.to_string())?;
    zeros += masks[0].data().iter().filter(|&&x| x == 0.0).count();
    let rate = zeros as f64 / elements as f64;
    ensure(
        (rate - 0.5).abs() <= 0.02,
        format!("scalar drop rate {rate}"),
    )?;

    let total: usize = shapes.iter().map(|s| s.0).sum();
    let mut first: Option<Vec<usize>> = None;
    let mut varied = false;
    for trial in 0..100 {
        let masks = dropout_masks(&shapes, DropoutStrategy::Vector, 0.5, &mut rng)
            .map_err(|e| e.to_string())?;
        let per: Vec<usize> = masks.iter().map(dropped).collect();
        let sum: usize = per.iter().sum();
        ensure(
            sum == (0.5 * total as f64).round() as usize,
            format!("vector trial {trial}: {sum} of {total}"),
        )?;
        match &first {
            None => first = Some(per),
            Some(f) => varied |= *f != per,
        }
    }
    ensure(varied, "vector per-channel counts never varied")?;
    Ok(format!(
        "capsule exact over 1000 trials; scalar rate {rate:.4}; vector total {} of {total}",
        total / 2
    ))
}

fn direct_pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (sx, sy): (f64, f64) = (x.iter().sum(), y.iter().sum());
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    let sxx: f64 = x.iter().map(|a| a * a).sum();
    let syy: f64 = y.iter().map(|b| b * b).sum();
    (n * sxy - sx * sy) / ((n * sxx - sx * sx).sqrt() * (n * syy - sy * sy).sqrt())
}

fn pipeline_oracles() -> Outcome {
    let mut rng = RandomStream::new(77, 0);
    let (mut dr, mut dz) = (0.0f64, 0.0f64);
    for _ in 0..1000 {
        let len = 10 + (rng.next_u64() % 190) as usize;
        let mix = rng.uniform_range(-0.95, 0.95);
        let x: Vec<f64> = (0..len).map(|_| rng.normal()).collect();
        let y: Vec<f64> = x
            .iter()
            .map(|a| mix * a + (1.0 - mix * mix).sqrt() * rng.normal())
            .collect();
        let r = pearson(&x, &y).map_err(|e| e.to_string())?;
        let d = direct_pearson(&x, &y);
        dr = dr.max((r - d).abs());
        let z = fisher_z(r).map_err(|e| e.to_string())?;
        dz = dz.max((z - 0.5 * ((1.0 + d) / (1.0 - d)).ln()).abs());
    }
    ensure(
        dr <= 1e-10 && dz <= 1e-10,
        format!("pearson dev {dr:e}, fisher dev {dz:e}"),
    )?;
    for seed in 0..20u64 {
        let mut rng = RandomStream::new(seed, 3);
        let n = 4 + seed as usize % 12;
        let values: Vec<f64> = (0..n * 60).map(|_| rng.normal()).collect();
        let m = connectivity_matrix(&TimeSeries::new(n, 60, values).map_err(|e| e.to_string())?)
            .map_err(|e| e.to_string())?;
        for i in 0..n {
            ensure(m.get(i, i) == 0.0, "nonzero diagonal")?;
            for j in 0..n {
                ensure(
                    m.get(i, j) == m.get(j, i),
                    format!("asymmetric at ({i},{j})"),
                )?;
            }
        }
    }
    Ok(format!("1000 pairs: pearson dev {dr:.1e}, fisher dev {dz:.1e}; 20 matrices symmetric, zero diagonal"))
}

fn e2e_train_config() -> TrainConfig {
    TrainConfig {
        epochs: 100,
        ..TrainConfig::default()
    }
}

fn synthetic_separability(separable: &Dataset, control: &Dataset) -> Outcome {
    let start = Instant::now();
    let cfg = scaled_config();
    let loss = LossConfig::default();
    let tc = e2e_train_config();
    let sep = cross_validate(separable, &cfg, &tc, &loss, 5, 1, 1).map_err(|e| e.to_string())?;
    let ctl = cross_validate(control, &cfg, &tc, &loss, 5, 1, 1).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let acc = sep.mean_metrics.accuracy.unwrap_or(0.0);
    let ctl_acc = ctl.mean_metrics.accuracy.unwrap_or(0.0);
    ensure(acc >= 0.9, format!("separable mean accuracy {acc:.4}"))?;
    ensure(
        (0.35..=0.65).contains(&ctl_acc),
        format!("control mean accuracy {ctl_acc:.4}"),
    )?;
    ensure(
        elapsed < Duration::from_secs(600),
        format!("took {elapsed:?}"),
    )?;
    Ok(format!(
        "separable {acc:.4}, control {ctl_acc:.4} (5-fold, <=100 epochs), {:.1}s",
        elapsed.as_secs_f64()
    ))
}

fn ablation_harness(separable: &Dataset) -> Outcome {
    let base = scaled_config();
    let spec = AblationSpec::standard(&base);
    let table = run_ablation(
        separable,
        &spec,
        &base,
        &e2e_train_config(),
        &LossConfig::default(),
        5,
        1,
        1,
    )
    .map_err(|e| e.to_string())?;
    let csv = table.to_csv();
    let lines: Vec<&str> = csv.lines().collect();
    ensure(
        lines[0] == "dropout,kernel,multislice,loss_norm,accuracy,sensitivity,specificity",
        "bad header",
    )?;
    ensure(lines.len() == 9, format!("{} data rows", lines.len() - 1))?;
    for l in &lines[1..] {
        ensure(
            l.split(',').count() == 7 && !l.contains("error") && !l.split(',').any(str::is_empty),
            format!("incomplete row {l:?}"),
        )?;
    }
    let acc = |pred: &dyn Fn(&mkcapsnet::evaluation::AblationCell) -> bool| {
        table
            .rows
            .iter()
            .find(|r| pred(&r.cell))
            .and_then(|r| r.outcome.as_ref().ok())
            .and_then(|m| m.accuracy)
    };
    let multi =
        acc(&|c| c.kernel == KernelChoice::Multi && c.multislice && c.loss_norm == LossNorm::L2)
            .ok_or("multi-kernel cell missing")?;
    let square =
        acc(&|c| matches!(c.kernel, KernelChoice::Square(_))).ok_or("square cell missing")?;
    ensure(
        multi >= square,
        format!("multi {multi:.4} < square {square:.4}"),
    )?;
    Ok(format!(
        "8 complete rows; multi-kernel {multi:.4} >= square {square:.4}"
    ))
}

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_mkcapsnet")
}

fn run_cli(args: &[&str]) -> Result<Vec<u8>, String> {
    let out = Command::new(bin())
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!(
            "{args:?} exited {:?}: {}",
            out.status.code(),
            String::from_utf8_lossy(&out.stderr)
        ));
    }
    Ok(out.stdout)
}

fn determinism(dir: &Path) -> Outcome {
    let data = dir.join("data");
    let data_s = data.to_str().unwrap();
    run_cli(&["synth", "--out", data_s, "--seed", "5"])?;
    let manifest = data.join("manifest.csv");
    let cfg = dir.join("run.cfg");
    std::fs::write(
        &cfg,
        "n_filters = 4\nn_slices = 2\ncapsule_len = 3\nepochs = 5\n",
    )
    .map_err(|e| e.to_string())?;
    let mut outputs = Vec::new();
    for (run, jobs) in [("a", "1"), ("b", "1"), ("c", "3")] {
        let out = dir.join(run);
        let stdout = run_cli(&[
            "crossval",
            "--data",
            manifest.to_str().unwrap(),
            "--config",
            cfg.to_str().unwrap(),
            "--folds",
            "3",
            "--seed",
            "9",
            "--jobs",
            jobs,
            "--out",
            out.to_str().unwrap(),
        ])?;
        outputs.push((out, stdout));
    }
    let files = ["metrics.txt", "fold0.ckpt", "fold1.ckpt", "fold2.ckpt"];
    for (other, stdout) in &outputs[1..] {
        ensure(*stdout == outputs[0].1, "stdout differs between runs")?;
        for f in files {
            let a = std::fs::read(outputs[0].0.join(f)).map_err(|e| e.to_string())?;
            let b = std::fs::read(other.join(f)).map_err(|e| e.to_string())?;
            ensure(a == b, format!("{f} differs in {}", other.display()))?;
        }
    }
    Ok("3 runs (jobs 1, 1, 3): stdout, metrics.txt and 3 fold checkpoints byte-identical".into())
}

fn baseline_sanity(separable: &Dataset, control: &Dataset) -> Outcome {
    let opts = BaselineOptions::default();
    let mut parts = Vec::new();
    for method in [BaselineMethod::Knn, BaselineMethod::Lda] {
        let sep = baseline_crossval(separable, method, &opts, 5, 1).map_err(|e| e.to_string())?;
        let ctl = baseline_crossval(control, method, &opts, 5, 1).map_err(|e| e.to_string())?;
        let a = sep.pooled_metrics.accuracy.unwrap_or(0.0);
        let c = ctl.pooled_metrics.accuracy.unwrap_or(0.0);
        ensure(a > 0.8, format!("{method} separable accuracy {a:.4}"))?;
        ensure(
            (0.35..=0.65).contains(&c),
            format!("{method} control accuracy {c:.4}"),
        )?;
        parts.push(format!("{method} {a:.4}/{c:.4}"));
    }
    Ok(format!("separable/control: {}", parts.join(", ")))
}

fn checkpoint_roundtrip(dir: &Path) -> Outcome {
    let cfg = scaled_config();
    let ck = Checkpoint::new(cfg.clone(), random_params(&cfg, 4), Default::default());
    let (p1, p2) = (dir.join("a.ckpt"), dir.join("b.ckpt"));
    ck.save(&p1).map_err(|e| e.to_string())?;
    Checkpoint::load(&p1)
        .map_err(|e| e.to_string())?
        .save(&p2)
        .map_err(|e| e.to_string())?;
    let (a, b) = (std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    ensure(a == b, "save/load/save bytes differ")?;

    let mut bad = a.clone();
    bad[2] ^= 0xff;
    match Checkpoint::from_bytes(&bad) {
        Err(Error::Checkpoint(CheckpointError::BadMagic)) => {}
        other => return Err(format!("corrupt magic gave {other:?}")),
    }
    let mut bad = a.clone();
    bad[8..12].copy_from_slice(&(u32::MAX - 1).to_le_bytes());
    match Checkpoint::from_bytes(&bad) {
        Err(Error::Checkpoint(CheckpointError::Truncated { .. })) => {}
        other => return Err(format!("corrupt length gave {other:?}")),
    }
    match Checkpoint::from_bytes(&a[..a.len() - 3]) {
        Err(Error::Checkpoint(CheckpointError::Truncated { .. })) => {}
        other => return Err(format!("truncated file gave {other:?}")),
    }
    Ok(format!(
        "{} bytes identical after reload; bad magic and bad length rejected",
        a.len()
    ))
}

fn main() {
    let tmp = tempfile::tempdir().expect("temp dir");
    let separable = generate_synthetic(&separable_spec(2)).expect("separable set");
    let control = generate_synthetic(&control_spec(2)).expect("control set");
    write_dataset(&tmp.path().join("separable"), &separable).expect("write set");

    let criteria: Vec<(&str, Box<dyn Fn() -> Outcome>)> = vec![
        ("gradient correctness", Box::new(gradient_correctness)),
        ("routing invariants", Box::new(routing_invariants)),
        ("closed-form identities", Box::new(closed_forms)),
        ("dropout exactness", Box::new(dropout_exactness)),
        ("pipeline oracles", Box::new(pipeline_oracles)),
        (
            "synthetic separability",
            Box::new(|| synthetic_separability(&separable, &control)),
        ),
        (
            "ablation harness",
            Box::new(|| ablation_harness(&separable)),
        ),
        (
            "determinism",
            Box::new(|| determinism(&tmp.path().join("det"))),
        ),
        (
            "baseline sanity",
            Box::new(|| baseline_sanity(&separable, &control)),
        ),
        (
            "checkpoint round-trip",
            Box::new(|| checkpoint_roundtrip(tmp.path())),
        ),
    ];

    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        match outcome {
            Ok(detail) => println!("criterion {:>2} PASS  {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {:>2} FAIL  {name}: {detail}", i + 1);
            }
        }
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        criteria.len() - failed
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
