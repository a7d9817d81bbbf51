//! Command-line front end: `synth`, `train`, `eval`, `crossval`, `trace`,
//! `baseline` and `ablation`.

pub mod config;

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use crate::connectivity::{
    generate_synthetic, load_dataset, read_matrix, write_atomic, write_dataset, Dataset, SynthSpec,
};
use crate::error::{Error, Result};
use crate::evaluation::{
    baseline_crossval, compute_metrics, cross_validate, export_routing_trace, run_ablation,
    AblationSpec, BaselineMethod, BaselineOptions, ConfusionCounts,
};
use crate::training::{fit, predict, Checkpoint};

use config::RunConfig;

/// Exit status for a successful run.
pub const EXIT_OK: i32 = 0;
/// Bad flags or configuration.
pub const EXIT_USAGE: i32 = 1;

#[derive(Parser, Debug)]
#[command(
    name = "mkcapsnet",
    version,
    about = "Multi-kernel capsule network for functional-connectivity classification",
    arg_required_else_help = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a labeled synthetic cohort.
    Synth(SynthArgs),
    /// Train on a dataset and write a checkpoint.
    Train(TrainArgs),
    /// Score a checkpoint on a labeled dataset.
    Eval(EvalArgs),
    /// Stratified k-fold cross-validation of the capsule network.
    Crossval(CrossvalArgs),
    /// Export per-iteration routing coefficients for one matrix.
    Trace(TraceArgs),
    /// Cross-validate a k-NN or LDA baseline on t-test-selected features.
    Baseline(BaselineArgs),
    /// Cross-validate every cell of a structural ablation grid.
    Ablation(AblationArgs),
}

#[derive(Args, Debug)]
struct ConfigArgs {
    /// `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one configuration key (repeatable), e.g. `--set epochs=50`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// Output directory; receives one CSV per sample and `manifest.csv`.
    #[arg(long)]
    out: PathBuf,
    /// Cohort recipe (`n_rois`, `n_timepoints`, `n_per_class`, `noise`, `block = S-E:SZ:HC`).
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    seed: u64,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Dataset manifest (`path,label`).
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    cfg: ConfigArgs,
    #[arg(long = "out-checkpoint")]
    out_checkpoint: PathBuf,
    #[arg(long)]
    seed: u64,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Dataset manifest (`path,label`).
    #[arg(long)]
    data: PathBuf,
}

#[derive(Args, Debug)]
struct CrossvalArgs {
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    cfg: ConfigArgs,
    #[arg(long, default_value_t = 10)]
    folds: usize,
    #[arg(long)]
    seed: u64,
    /// Folds trained concurrently; results do not depend on it.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Directory for `metrics.txt` and per-fold checkpoints.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TraceArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Connectivity matrix CSV.
    #[arg(long)]
    input: PathBuf,
    /// Trace CSV to write.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct BaselineArgs {
    /// `knn` or `lda`.
    #[arg(long)]
    method: String,
    #[arg(long)]
    data: PathBuf,
    /// Features kept by the t-test filter.
    #[arg(long = "top-features", default_value_t = crate::evaluation::DEFAULT_TOP_FEATURES)]
    top_features: usize,
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value_t = 10)]
    folds: usize,
    /// Neighbours for k-NN.
    #[arg(long = "k", default_value_t = crate::evaluation::DEFAULT_KNN_K)]
    k_neighbors: usize,
}

#[derive(Args, Debug)]
struct AblationArgs {
    #[arg(long)]
    data: PathBuf,
    /// Grid CSV (`dropout,kernel,multislice,loss_norm`); the eight-row table when omitted.
    #[arg(long)]
    grid: Option<PathBuf>,
    /// Results CSV to write.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    cfg: ConfigArgs,
    #[arg(long, default_value_t = 10)]
    folds: usize,
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

/// Parses `argv` (including the program name), runs the command, and
/// returns the process exit code. Output goes to `out`, diagnostics to `err`.
pub fn dispatch_to(argv: &[String], out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
            let text = e.render().to_string();
            let _ = if code == EXIT_OK {
                out.write_all(text.as_bytes())
            } else {
                err.write_all(text.as_bytes())
            };
            return code;
        }
    };
    match run(cli.command, out) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

/// [`dispatch_to`] on the process's standard streams.
pub fn dispatch(argv: &[String]) -> i32 {
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    dispatch_to(argv, &mut stdout.lock(), &mut stderr.lock())
}

fn emit(out: &mut dyn Write, text: &str) -> Result<()> {
    out.write_all(text.as_bytes())
        .map_err(|e| Error::io("<stdout>", e))
}

fn resolve_config(args: &ConfigArgs, data: &Dataset) -> Result<RunConfig> {
    let mut cfg = match &args.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    for o in &args.overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set {o:?}: expected KEY=VALUE")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    if !cfg.is_explicit("n_rois") {
        if let Some(n) = data.n_rois() {
            cfg.model.n_rois = n;
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn echo(out: &mut dyn Write, command: &str, body: &str, seed: Option<u64>) -> Result<()> {
    let mut s = format!("# {command}: resolved configuration\n{body}");
    if let Some(seed) = seed {
        s.push_str(&format!("seed = {seed}\n"));
    }
    s.push_str("# end configuration\n");
    emit(out, &s)
}

fn load(path: &Path) -> Result<Dataset> {
    let data = load_dataset(path)?;
    if data.is_empty() {
        return Err(Error::Dataset(format!(
            "{}: manifest lists no samples",
            path.display()
        )));
    }
    Ok(data)
}

fn run(command: Command, out: &mut dyn Write) -> Result<()> {
    match command {
        Command::Synth(a) => {
            let spec = match &a.spec {
                Some(p) => {
                    let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                    SynthSpec::parse(&text, a.seed)
                        .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
                }
                None => SynthSpec {
                    seed: a.seed,
                    ..Default::default()
                },
            };
            echo(out, "synth", &spec.to_config_string(), Some(a.seed))?;
            let data = generate_synthetic(&spec)?;
            std::fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
            let manifest = write_dataset(&a.out, &data)?;
            let (sz, hc) = data.class_counts();
            emit(
                out,
                &format!(
                    "wrote {} samples (SZ {sz}, HC {hc}) to {}\n",
                    data.len(),
                    manifest.display()
                ),
            )
        }
        Command::Train(a) => {
            let data = load(&a.data)?;
            let mut cfg = resolve_config(&a.cfg, &data)?;
            cfg.train.seed = a.seed;
            echo(out, "train", &cfg.to_config_string(), Some(a.seed))?;
            let (params, history) = fit(&data, &cfg.model, &cfg.train, &cfg.loss)?;
            let epochs = history.epoch_losses.len();
            let last = history.epoch_losses.last().copied().unwrap_or(f64::NAN);
            let stopped = history.stopped_early;
            Checkpoint::new(cfg.model, params, history).save(&a.out_checkpoint)?;
            emit(
                out,
                &format!(
                    "epochs={epochs}\nfinal_loss={last}\nstopped_early={stopped}\ncheckpoint={}\n",
                    a.out_checkpoint.display()
                ),
            )
        }
        Command::Eval(a) => {
            let ck = Checkpoint::load(&a.checkpoint)?;
            echo(out, "eval", &config::model_config_string(&ck.config), None)?;
            let data = load(&a.data)?;
            ck.ensure_input(data.n_rois().unwrap_or(0))?;
            let mut counts = ConfusionCounts::default();
            let mut lines = String::from("sample_id,label,predicted,length_sz,length_hc\n");
            for s in &data.samples {
                let (lengths, pred) = predict(&ck.params, &ck.config, &s.matrix)?;
                counts.record(s.label, pred);
                lines.push_str(&format!(
                    "{},{},{},{:.4},{:.4}\n",
                    s.id, s.label, pred, lengths[0], lengths[1]
                ));
            }
            let m = compute_metrics(&counts);
            emit(out, &lines)?;
            emit(out, &format!("{m}\n{}", m.key_values("eval")))
        }
        Command::Crossval(a) => {
            let data = load(&a.data)?;
            let cfg = resolve_config(&a.cfg, &data)?;
            let mut body = cfg.to_config_string();
            body.push_str(&format!("folds = {}\n", a.folds));
            echo(out, "crossval", &body, Some(a.seed))?;
            let report = cross_validate(
                &data, &cfg.model, &cfg.train, &cfg.loss, a.folds, a.seed, a.jobs,
            )?;
            let text = report.to_text();
            if let Some(dir) = &a.out {
                std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
                write_atomic(&dir.join("metrics.txt"), text.as_bytes())?;
                for f in &report.folds {
                    if let (Some(p), Some(h)) = (&f.params, &f.history) {
                        Checkpoint::new(cfg.model.clone(), p.clone(), h.clone())
                            .save(&dir.join(format!("fold{}.ckpt", f.fold)))?;
                    }
                }
            }
            emit(out, &text)
        }
        Command::Trace(a) => {
            let ck = Checkpoint::load(&a.checkpoint)?;
            echo(out, "trace", &config::model_config_string(&ck.config), None)?;
            let matrix = read_matrix(&a.input)?;
            ck.ensure_input(matrix.n())?;
            let id = a
                .input
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_else(|| "input".into());
            let trace = export_routing_trace(&ck.params, &ck.config, &matrix, &id)?;
            trace.write(&a.out)?;
            emit(
                out,
                &format!("wrote {} rows to {}\n", trace.rows.len(), a.out.display()),
            )
        }
        Command::Baseline(a) => {
            let method: BaselineMethod = a.method.parse()?;
            let opts = BaselineOptions {
                top_features: a.top_features,
                k_neighbors: a.k_neighbors,
            };
            let body = format!(
                "method = {method}\ntop_features = {}\nk = {}\nfolds = {}\n",
                opts.top_features, opts.k_neighbors, a.folds
            );
            echo(out, "baseline", &body, Some(a.seed))?;
            let data = load(&a.data)?;
            let n = data.n_rois().unwrap_or(0);
            let dim = n * n.saturating_sub(1) / 2;
            if opts.top_features == 0 || opts.top_features > dim {
                return Err(Error::Config(format!(
                    "--top-features {} outside 1..={dim} for {n} ROIs",
                    opts.top_features
                )));
            }
            let report = baseline_crossval(&data, method, &opts, a.folds, a.seed)?;
            emit(out, &report.to_text())
        }
        Command::Ablation(a) => {
            let data = load(&a.data)?;
            let cfg = resolve_config(&a.cfg, &data)?;
            let spec = match &a.grid {
                Some(p) => {
                    let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                    AblationSpec::parse(&text, &cfg.model)?
                }
                None => AblationSpec::standard(&cfg.model),
            };
            let mut body = cfg.to_config_string();
            body.push_str(&format!("folds = {}\n", a.folds));
            echo(out, "ablation", &body, Some(a.seed))?;
            let table = run_ablation(
                &data, &spec, &cfg.model, &cfg.train, &cfg.loss, a.folds, a.seed, a.jobs,
            )?;
            table.write(&a.out)?;
            for r in &table.rows {
                if let Err(msg) = &r.outcome {
                    emit(out, &format!("cell failed: {msg}\n"))?;
                }
            }
            emit(out, &table.to_csv())
        }
    }
}
