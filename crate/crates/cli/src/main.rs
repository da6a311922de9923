mod config;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use sgunet_core::meshgraph::Trajectory;
use sgunet_core::simgen::{generate_dataset, sample_family, DatasetManifest, Family, Split};
use sgunet_core::trainer::{
    evaluate, position_rmse, rollout, train, write_log_csv, ModelPredictor, TrainConfig,
    TrainOutcome, TrainRun,
};
use sgunet_core::transfer::{transplant, Checkpoint, Strategy, TransferReport};

use config::FileConfig;

#[derive(Parser, Debug)]
#[command(
    name = "sgunet",
    version,
    about = "Generate data, train, transplant and evaluate graph U-net mesh simulators"
)]
struct Cli {
    /// TOML file with optional [model], [train] and [gen] sections.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate indentation scenarios into a dataset directory.
    Gen(GenArgs),
    /// Train a model from scratch.
    Pretrain(PretrainArgs),
    /// Map the processors of a checkpoint onto the configured model.
    Transplant(TransplantArgs),
    /// Train from a transplanted or existing checkpoint.
    Finetune(FinetuneArgs),
    /// Roll a checkpoint out on one trajectory file.
    Rollout(RolloutArgs),
    /// Rollout RMSE of a checkpoint on a dataset split.
    Eval(EvalArgs),
}

#[derive(Args, Debug)]
struct GenArgs {
    /// Output directory; receives trajectory files and manifest.json.
    #[arg(long)]
    out: PathBuf,
    /// broad or shifted.
    #[arg(long)]
    family: Option<Family>,
    #[arg(long)]
    count: Option<usize>,
    /// Frames per trajectory, including the rest state.
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    split_seed: Option<u64>,
}

/// Training flags shared by pretrain and finetune.
#[derive(Args, Debug)]
struct TrainFlags {
    /// Dataset directory or manifest file.
    #[arg(long)]
    data: PathBuf,
    /// Where the best checkpoint is written.
    #[arg(long)]
    out: PathBuf,
    /// CSV metric log; defaults to the checkpoint path with a .csv extension.
    #[arg(long)]
    log: Option<PathBuf>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr_start: Option<f64>,
    #[arg(long)]
    lr_end: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    valid_every: Option<usize>,
    /// Also write the final-step checkpoint here.
    #[arg(long)]
    last: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct PretrainArgs {
    #[command(flatten)]
    train: TrainFlags,
    /// Parameter initialization seed; defaults to the training seed.
    #[arg(long)]
    init_seed: Option<u64>,
}

#[derive(Args, Debug)]
struct TransplantArgs {
    #[arg(long)]
    source: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "uniform")]
    strategy: Strategy,
    /// Seed for freshly initialized tensors.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Transfer report path; defaults to the output path with a .report.json extension.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct FinetuneArgs {
    #[command(flatten)]
    train: TrainFlags,
    /// Pre-trained checkpoint, transplanted onto the configured model first.
    #[arg(long, conflicts_with = "init")]
    source: Option<PathBuf>,
    #[arg(long, default_value = "uniform")]
    strategy: Strategy,
    /// Checkpoint to continue from as is (e.g. written by `transplant`).
    #[arg(long)]
    init: Option<PathBuf>,
    /// Transfer report naming the tensors to anchor when using --init.
    #[arg(long, requires = "init")]
    report: Option<PathBuf>,
    /// Fraction of training trajectories kept.
    #[arg(long)]
    fraction: Option<f64>,
    /// Frobenius penalty weight on transferred tensors.
    #[arg(long)]
    lambda: Option<f64>,
}

#[derive(Args, Debug)]
struct RolloutArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Ground-truth trajectory file providing the initial state and scripted motion.
    #[arg(long)]
    trajectory: PathBuf,
    /// Predicted trajectory, written in the trajectory file format.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// train, valid or test.
    #[arg(long, default_value = "test", value_parser = parse_split)]
    split: Split,
}

fn parse_split(s: &str) -> Result<Split, String> {
    match s {
        "train" => Ok(Split::Train),
        "valid" => Ok(Split::Valid),
        "test" => Ok(Split::Test),
        other => Err(format!("unknown split {other:?}")),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let category = category(&err);
            eprintln!("error [{category}]: {err:#}");
            ExitCode::from(exit_code(category))
        }
    }
}

fn category(err: &anyhow::Error) -> &'static str {
    err.chain()
        .find_map(|e| {
            e.downcast_ref::<sgunet_core::Error>()
                .map(|c| c.category())
                .or_else(|| e.downcast_ref::<std::io::Error>().map(|_| "io"))
        })
        .unwrap_or("usage")
}

fn exit_code(category: &str) -> u8 {
    match category {
        "usage" | "config" => 2,
        "structure" => 3,
        "mesh" => 4,
        "numerical" => 5,
        "format" => 6,
        "io" => 7,
        _ => 1,
    }
}

fn run(cli: Cli) -> Result<()> {
    let file = FileConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::Gen(a) => gen(&file, a),
        Command::Pretrain(a) => pretrain(&file, a),
        Command::Transplant(a) => transplant_cmd(&file, a),
        Command::Finetune(a) => finetune(&file, a),
        Command::Rollout(a) => rollout_cmd(a),
        Command::Eval(a) => eval(a),
    }
}

fn gen(file: &FileConfig, a: GenArgs) -> Result<()> {
    let g = &file.gen;
    let family = a.family.unwrap_or(g.family);
    let count = a.count.unwrap_or(g.count);
    let steps = a.steps.unwrap_or(g.steps);
    let specs = sample_family(family, count, steps, a.seed.unwrap_or(g.seed))?;
    let manifest = generate_dataset(
        &specs,
        &a.out,
        g.ratios,
        a.split_seed.unwrap_or(g.split_seed),
    )?;
    let n = |s| manifest.entries(s).count();
    println!(
        "wrote {} trajectories to {} (train {}, valid {}, test {})",
        manifest.entries.len(),
        a.out.display(),
        n(Split::Train),
        n(Split::Valid),
        n(Split::Test)
    );
    Ok(())
}

fn train_config(file: &FileConfig, f: &TrainFlags) -> TrainConfig {
    let mut c = file.train.clone();
    c.steps = f.steps.unwrap_or(c.steps);
    c.batch_size = f.batch_size.unwrap_or(c.batch_size);
    c.lr_start = f.lr_start.unwrap_or(c.lr_start);
    c.lr_end = f.lr_end.unwrap_or(c.lr_end);
    c.seed = f.seed.unwrap_or(c.seed);
    c.valid_every = f.valid_every.unwrap_or(c.valid_every);
    c
}

fn load_data(path: &Path) -> Result<(Vec<Trajectory>, Vec<Trajectory>)> {
    let manifest = DatasetManifest::load(path)
        .with_context(|| format!("loading dataset {}", path.display()))?;
    let train = manifest.load_split(Split::Train)?;
    if train.is_empty() {
        bail!(sgunet_core::Error::Config(format!(
            "{} has no training trajectories",
            path.display()
        )));
    }
    Ok((train, manifest.load_split(Split::Valid)?))
}

fn run_training(run: TrainRun, flags: &TrainFlags) -> Result<TrainOutcome> {
    let (train_set, valid_set) = load_data(&flags.data)?;
    let outcome = train(&run, &train_set, &valid_set)?;
    outcome
        .best
        .save(&flags.out)
        .with_context(|| format!("writing {}", flags.out.display()))?;
    if let Some(last) = &flags.last {
        outcome
            .last
            .save(last)
            .with_context(|| format!("writing {}", last.display()))?;
    }
    let log = flags
        .log
        .clone()
        .unwrap_or_else(|| flags.out.with_extension("csv"));
    write_log_csv(&outcome.log, BufWriter::new(File::create(&log)?))?;
    match outcome.best_rmse {
        Some(r) => println!(
            "best validation rollout RMSE {r:.6e} at step {}",
            outcome.best_step
        ),
        None => println!("no validation data; kept the final checkpoint"),
    }
    println!("checkpoint {} log {}", flags.out.display(), log.display());
    Ok(outcome)
}

fn pretrain(file: &FileConfig, a: PretrainArgs) -> Result<()> {
    let config = train_config(file, &a.train);
    let init = Checkpoint::initial(file.model.clone(), a.init_seed.unwrap_or(config.seed))?;
    run_training(
        TrainRun {
            init,
            anchored: Vec::new(),
            config,
        },
        &a.train,
    )?;
    Ok(())
}

fn write_report(report: &TransferReport, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, report)?;
    w.write_all(b"\n")?;
    Ok(())
}

fn transplant_cmd(file: &FileConfig, a: TransplantArgs) -> Result<()> {
    let source =
        Checkpoint::load(&a.source).with_context(|| format!("loading {}", a.source.display()))?;
    let (ckpt, report) = transplant(&source, &file.model, a.strategy, a.seed)?;
    ckpt.save(&a.out)?;
    let report_path = a
        .report
        .unwrap_or_else(|| a.out.with_extension("report.json"));
    write_report(&report, &report_path)?;
    let (c, m, f) = report.counts();
    println!(
        "{} tensors: {c} copied, {m} averaged, {f} fresh; report {}",
        report.entries.len(),
        report_path.display()
    );
    Ok(())
}

fn finetune(file: &FileConfig, a: FinetuneArgs) -> Result<()> {
    let mut config = train_config(file, &a.train);
    config.fraction = a.fraction.unwrap_or(config.fraction);
    config.lambda = a.lambda.unwrap_or(config.lambda);
    let (init, anchored) = match (&a.source, &a.init) {
        (Some(src), None) => {
            let source =
                Checkpoint::load(src).with_context(|| format!("loading {}", src.display()))?;
            let (ckpt, report) = transplant(&source, &file.model, a.strategy, config.seed)?;
            let anchored = report.anchored().into_iter().map(String::from).collect();
            (ckpt, anchored)
        }
        (None, Some(init)) => {
            let ckpt =
                Checkpoint::load(init).with_context(|| format!("loading {}", init.display()))?;
            let anchored = match &a.report {
                Some(p) => {
                    let report: TransferReport = serde_json::from_slice(&std::fs::read(p)?)
                        .map_err(sgunet_core::Error::from)
                        .with_context(|| format!("reading report {}", p.display()))?;
                    report.anchored().into_iter().map(String::from).collect()
                }
                None => Vec::new(),
            };
            (ckpt, anchored)
        }
        _ => bail!(sgunet_core::Error::Config(
            "finetune needs --source or --init".into()
        )),
    };
    if config.lambda > 0.0 && anchored.is_empty() {
        eprintln!("warning: lambda > 0 but no transferred tensors to anchor");
    }
    run_training(
        TrainRun {
            init,
            anchored,
            config,
        },
        &a.train,
    )?;
    Ok(())
}

fn rollout_cmd(a: RolloutArgs) -> Result<()> {
    let ckpt = Checkpoint::load(&a.checkpoint)
        .with_context(|| format!("loading {}", a.checkpoint.display()))?;
    let truth = Trajectory::load(&a.trajectory)
        .with_context(|| format!("loading {}", a.trajectory.display()))?;
    let model = ckpt.model()?;
    let mut predictor = ModelPredictor::new(&model, &ckpt.params, &ckpt.normalizers)?;
    let pred = rollout(&mut predictor, &truth)?;
    let rmse = position_rmse(&pred, &truth)?;
    let mut positions = vec![truth.positions[0].clone()];
    positions.extend(pred);
    let out = Trajectory {
        topology: truth.topology.clone(),
        positions,
        boundary_flags: truth.boundary_flags.clone(),
    };
    out.save(&a.out)?;
    println!(
        "{} steps, position RMSE {rmse:.6e}; wrote {}",
        out.num_steps() - 1,
        a.out.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct EvalReport {
    split: Split,
    trajectories: usize,
    rmse: f64,
}

fn eval(a: EvalArgs) -> Result<()> {
    let ckpt = Checkpoint::load(&a.checkpoint)
        .with_context(|| format!("loading {}", a.checkpoint.display()))?;
    let manifest = DatasetManifest::load(&a.data)
        .with_context(|| format!("loading dataset {}", a.data.display()))?;
    let data = manifest.load_split(a.split)?;
    if data.is_empty() {
        bail!(sgunet_core::Error::Config("selected split is empty".into()));
    }
    let model = ckpt.model()?;
    let rmse = evaluate(&model, &ckpt.params, &ckpt.normalizers, &data)?;
    println!(
        "{}",
        serde_json::to_string(&EvalReport {
            split: a.split,
            trajectories: data.len(),
            rmse
        })?
    );
    Ok(())
}
