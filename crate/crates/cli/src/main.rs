use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use wxcnn::data::{
    apply_stats, build_synthetic_dataset_with, normalize, read_dataset, split, write_dataset,
    write_ppm, EventKind, PatchDataset,
};
use wxcnn::hyperopt::{run_optimization, HyperSpace, TrialRequest, TrialStatus, TrialStore};
use wxcnn::network::{
    evaluate_with, format_chain, preset_config, read_model, shape_chain, train_with, write_model,
    Network, NetworkConfig, SgdParams,
};
use wxcnn::{Execution, Rng};

mod config;

use config::FileConfig;

#[derive(Parser)]
#[command(
    name = "wxcnn",
    version,
    about = "Train and tune CNN classifiers for extreme-weather patches"
)]
struct Cli {
    /// Run batch loops on one thread. Results are identical either way.
    #[arg(long, global = true)]
    sequential: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic labeled dataset
    Synth(SynthArgs),
    /// Train a classifier and save it with its training log
    Train(TrainArgs),
    /// Bayesian search over SGD hyperparameters
    Tune(TuneArgs),
    /// Accuracy and confusion matrix of a saved model
    Eval(EvalArgs),
    /// Write one channel of one patch as a PPM image
    Export(ExportArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, value_parser = parse_event)]
    event: EventKind,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pos: u64,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    neg: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SplitArg {
    /// Train, validation and test fractions
    #[arg(long, default_value = "0.8,0.1,0.1", value_parser = parse_split)]
    split: [f64; 3],
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    /// Preset architecture; defaults to the dataset's event kind
    #[arg(long, value_parser = parse_event)]
    event: Option<EventKind>,
    /// TOML file with optional [network] and [sgd] tables; flags win
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    wd: Option<f64>,
    #[arg(long)]
    momentum: Option<f64>,
    #[arg(long)]
    batch: Option<usize>,
    #[command(flatten)]
    split: SplitArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// CSV training log; defaults to the model path with a .csv extension
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Args)]
struct TuneArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_parser = parse_event)]
    event: Option<EventKind>,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    trials: u64,
    #[arg(long = "parallel", default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    parallel: u64,
    /// TOML search space; defaults to lr, weight decay, momentum and batch size
    #[arg(long)]
    space: Option<PathBuf>,
    #[arg(long)]
    store: PathBuf,
    /// Epochs per trial
    #[arg(long, default_value_t = 15, value_parser = clap::value_parser!(u64).range(1..))]
    epochs: u64,
    #[command(flatten)]
    split: SplitArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
}

#[derive(Args)]
struct ExportArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    index: usize,
    /// Channel name (e.g. PSL) or index
    #[arg(long)]
    channel: String,
    #[arg(long)]
    out: PathBuf,
}

fn parse_event(s: &str) -> Result<EventKind, String> {
    s.parse().map_err(|e: wxcnn::Error| e.to_string())
}

fn parse_split(s: &str) -> Result<[f64; 3], String> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 3 {
        return Err("expected three comma-separated fractions".into());
    }
    let mut out = [0.0; 3];
    for (o, p) in out.iter_mut().zip(parts) {
        *o = p
            .trim()
            .parse()
            .map_err(|_| format!("bad fraction {p:?}"))?;
    }
    Ok(out)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let exec = if cli.sequential {
        Execution::Sequential
    } else {
        Execution::default()
    };
    let result = match cli.command {
        Command::Synth(a) => cmd_synth(a, exec),
        Command::Train(a) => cmd_train(a, exec),
        Command::Tune(a) => cmd_tune(a, exec),
        Command::Eval(a) => cmd_eval(a, exec),
        Command::Export(a) => cmd_export(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn load_data(path: &Path) -> Result<PatchDataset> {
    read_dataset(path).with_context(|| format!("reading dataset {}", path.display()))
}

fn cmd_synth(a: SynthArgs, exec: Execution) -> Result<()> {
    let mut rng = Rng::new(a.seed);
    let ds = build_synthetic_dataset_with(a.event, a.pos as usize, a.neg as usize, &mut rng, exec)?;
    write_dataset(&ds, &a.out).with_context(|| format!("writing {}", a.out.display()))?;
    let [p, m, n] = ds.dims;
    println!(
        "wrote {} {} records ({p}x{m}x{n}) to {}",
        ds.len(),
        ds.kind,
        a.out.display()
    );
    Ok(())
}

fn check_dims(config: &NetworkConfig, ds: &PatchDataset) -> Result<()> {
    if config.input_dims != ds.dims {
        bail!(
            "dimension mismatch: network expects {:?}, dataset has {:?}",
            config.input_dims,
            ds.dims
        );
    }
    Ok(())
}

/// Normalized train/val/test splits; the training split's stats are applied
/// to the other two.
fn prepare(ds: &PatchDataset, fractions: [f64; 3], rng: &mut Rng) -> Result<[PatchDataset; 3]> {
    let (train, val, test) = split(ds, fractions, rng)?;
    if train.is_empty() || val.is_empty() {
        bail!("split leaves an empty training or validation set; use more data or other fractions");
    }
    let (train, stats) = normalize(&train)?;
    let val = apply_stats(&val, &stats)?;
    let test = apply_stats(&test, &stats)?;
    Ok([train, val, test])
}

fn cmd_train(a: TrainArgs, exec: Execution) -> Result<()> {
    let file = match &a.config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    let mut params = file.sgd_params(SgdParams {
        seed: a.seed,
        ..SgdParams::box_midpoint()
    });
    params.epochs = a.epochs.unwrap_or(params.epochs);
    params.learning_rate = a.lr.unwrap_or(params.learning_rate);
    params.weight_decay = a.wd.unwrap_or(params.weight_decay);
    params.momentum = a.momentum.unwrap_or(params.momentum);
    params.batch_size = a.batch.unwrap_or(params.batch_size);
    params.seed = a.seed;
    params.validate()?;
    let log_path = a.log.clone().unwrap_or_else(|| a.out.with_extension("csv"));

    let ds = load_data(&a.data)?;
    let config = match (a.event, file.network) {
        (Some(kind), _) => preset_config(kind),
        (None, Some(net)) => net,
        (None, None) => preset_config(ds.kind),
    };
    check_dims(&config, &ds)?;
    println!("architecture {}", format_chain(&shape_chain(&config)?));

    let mut rng = Rng::new(a.seed);
    let [train, val, test] = prepare(&ds, a.split.split, &mut rng)?;
    let mut net = Network::build(config, &mut rng)?;
    let log = train_with(&mut net, &train, &val, &params, exec)?;
    net.set_input_stats(Some(train.stats.clone()));
    write_model(&net, &a.out).with_context(|| format!("writing model {}", a.out.display()))?;
    std::fs::write(&log_path, log.to_csv())
        .with_context(|| format!("writing log {}", log_path.display()))?;

    let last = log.last().context("training produced no epochs")?;
    println!(
        "epochs {}  train_acc {:.4}  val_acc {:.4}  val_loss {:.6}",
        last.epoch, last.train_acc, last.val_acc, last.val_loss
    );
    if !test.is_empty() {
        let report = evaluate_with(&net, &test, exec)?;
        println!("test set:\n{}", report.render(ds.kind.label_name()));
    }
    println!(
        "model written to {}, log to {}",
        a.out.display(),
        log_path.display()
    );
    Ok(())
}

/// Maps a trial's named values onto SGD settings. Unknown names are an error
/// so a typo in a space file cannot silently tune nothing.
fn trial_params(space: &HyperSpace, values: &[f64], base: SgdParams) -> Result<SgdParams, String> {
    let mut p = base;
    for (d, &v) in space.dims().iter().zip(values) {
        match d.name.as_str() {
            "learning_rate" | "lr" => p.learning_rate = v,
            "weight_decay" | "wd" => p.weight_decay = v,
            "momentum" => p.momentum = v,
            "batch_size" | "batch" => p.batch_size = v.round().max(1.0) as usize,
            other => return Err(format!("unknown hyperparameter {other:?}")),
        }
    }
    Ok(p)
}

fn cmd_tune(a: TuneArgs, exec: Execution) -> Result<()> {
    let space = match &a.space {
        Some(p) => {
            HyperSpace::load(p).with_context(|| format!("reading search space {}", p.display()))?
        }
        None => HyperSpace::default_sgd(),
    };
    let base = SgdParams {
        epochs: a.epochs as usize,
        seed: a.seed,
        ..SgdParams::box_midpoint()
    };
    let probe = space.denormalize(&vec![0.5; space.len()])?;
    trial_params(&space, &probe, base).map_err(anyhow::Error::msg)?;

    // A corrupt store should fail before any data is loaded.
    let mut store = TrialStore::new(&a.store);
    let before = store
        .latest()
        .with_context(|| format!("reading trial store {}", a.store.display()))?;
    let already = before.iter().filter(|t| t.status.is_finished()).count();
    let ds = load_data(&a.data)?;
    let config = preset_config(a.event.unwrap_or(ds.kind));
    check_dims(&config, &ds)?;
    let mut rng = Rng::new(a.seed);
    let [train, val, _] = prepare(&ds, a.split.split, &mut rng)?;

    let objective = |req: &TrialRequest| -> Result<f64, String> {
        let params = trial_params(
            &space,
            &req.values,
            SgdParams {
                seed: req.seed,
                ..base
            },
        )?;
        let mut net =
            Network::build(config.clone(), &mut Rng::new(req.seed)).map_err(|e| e.to_string())?;
        let log = train_with(&mut net, &train, &val, &params, exec).map_err(|e| e.to_string())?;
        log.last()
            .map(|e| e.val_loss)
            .ok_or_else(|| "no epochs ran".to_string())
    };
    let best = run_optimization(
        &space,
        &objective,
        a.trials as usize,
        a.parallel as usize,
        &mut store,
        &mut rng,
    )?;

    // Finished trials in completion order, with the running best.
    let finished: Vec<_> = store
        .load()?
        .into_iter()
        .filter(|t| t.status.is_finished())
        .collect();
    let mut header = format!("{:>5}", "trial");
    for d in space.dims() {
        header += &format!("  {:>14}", d.name);
    }
    header += &format!("  {:>12}  {:>12}", "val_loss", "best");
    println!("{header}");
    let mut running = f64::INFINITY;
    for t in &finished {
        let loss = t.loss.unwrap_or(f64::INFINITY);
        if t.status == TrialStatus::Done {
            running = running.min(loss);
        }
        let mut row = format!("{:>5}", t.id);
        for d in space.dims() {
            row += &format!(
                "  {:>14.6e}",
                t.values.get(&d.name).copied().unwrap_or(f64::NAN)
            );
        }
        row += &format!("  {:>12.6}  {:>12.6}", loss, running);
        println!("{row}");
    }
    println!(
        "{} new trials, {} total",
        finished.len().saturating_sub(already),
        finished.len()
    );
    let values: Vec<String> = space
        .dims()
        .iter()
        .map(|d| format!("{}={}", d.name, best.values[&d.name]))
        .collect();
    println!(
        "best trial {} val_loss {:.6}: {}",
        best.id,
        best.loss.unwrap_or(f64::INFINITY),
        values.join(" ")
    );
    Ok(())
}

fn cmd_eval(a: EvalArgs, exec: Execution) -> Result<()> {
    let net =
        read_model(&a.model).with_context(|| format!("reading model {}", a.model.display()))?;
    let ds = load_data(&a.data)?;
    check_dims(net.config(), &ds)?;
    let ds = match net.input_stats() {
        Some(stats) => apply_stats(&ds, stats)?,
        None => ds,
    };
    let report = evaluate_with(&net, &ds, exec)?;
    println!("{}", report.render(ds.kind.label_name()));
    println!("mean loss {:.6}", report.mean_loss);
    Ok(())
}

fn cmd_export(a: ExportArgs) -> Result<()> {
    let ds = load_data(&a.data)?;
    let rec = ds
        .records
        .get(a.index)
        .with_context(|| format!("record {} out of range for {} records", a.index, ds.len()))?;
    let channel = match ds.channel_index(&a.channel) {
        Some(c) => c,
        None => match a.channel.parse::<usize>() {
            Ok(c) if c < ds.dims[0] => c,
            _ => bail!(
                "unknown channel {:?}; available: {}",
                a.channel,
                ds.channel_names.join(", ")
            ),
        },
    };
    write_ppm(&rec.patch, channel, &a.out)
        .with_context(|| format!("writing {}", a.out.display()))?;
    println!(
        "wrote {} of record {} ({:?}) to {}",
        ds.channel_names[channel],
        a.index,
        rec.label,
        a.out.display()
    );
    Ok(())
}
