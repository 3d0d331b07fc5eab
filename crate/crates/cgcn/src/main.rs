//! Command-line surface: `train`, `eval`, `inspect`, `verify`.
//!
//! Exit codes: 0 on success, 1 on runtime failures (including failing
//! verification oracles), 2 on usage errors.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use cgcn::archive::{load_model, save_model, ModelArchive};
use cgcn::config::{load_train_config, parse_config_str, render_config};
use cgcn::data::load_tudataset;
use cgcn::error::{Error, Result};
use cgcn::opt::nuclear_norm;
use cgcn::oracle;
use cgcn::train::{evaluate, run_pipeline, split_dataset, Dataset, EvalReport, TrainConfig};

const CONFIG_HELP: &str = "Config file format: one `key = value` per line, `#` comments, blank lines
ignored. Unknown or duplicate keys are errors; missing keys fall back to the
reference configuration. Keys:

  shift_kind    = normalized-laplacian      graph shift operator kind
  kernel        = gaussian-rbf              kernel for every layer
  kernels       = inverse-polynomial,gaussian-rbf(0.3)
                                            per-layer kernels (excludes kernel/gamma)
  gamma         = 0.2                       bandwidth for kernel = gaussian-rbf
  hops          = 1                         filter taps beyond hop 0
  layers        = 2                         number of layers
  hidden_width  = 32                        width of every hidden layer
  hidden_widths = 32,16                     per-layer widths (excludes hidden_width)
  landmarks     = 32                        Nystrom landmark count
  epochs        = 200                       training epochs per layer
  optimizer     = projected-adam            projected-adam or projected-gd
  learning_rate = 0.001                     initial step size
  batch_size    = auto                      auto or a positive integer
  radius        = 1.0                       per-column norm bound behind default budgets
  budgets       = 3.5,2.0                   explicit per-layer nuclear budgets
  split         = 0.8,0.1,0.1               train/val/test ratios
  filter_init   = zeros                     zeros or random
  seed          = 0                         master seed
  init_seed     = 1                         separate stream for random filter init";

#[derive(Parser)]
#[command(
    name = "cgcn",
    version,
    about = "Convexified graph convolutional networks: kernelized graph filters \
             trained layer-wise by projected gradient methods under nuclear-norm \
             constraints."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train on a TUDataset-layout directory and write a model archive
    #[command(after_help = CONFIG_HELP)]
    Train(TrainArgs),
    /// Score a saved model on a dataset split
    Eval(EvalArgs),
    /// Print layer shapes, nuclear norms against budgets, and landmark counts
    Inspect(InspectArgs),
    /// Run the verification-oracle suites; nonzero exit if any fail
    Verify(VerifyArgs),
}

#[derive(clap::Args)]
struct TrainArgs {
    /// Dataset directory (TUDataset text layout)
    #[arg(long)]
    data: PathBuf,
    /// Dataset file-name prefix; defaults to the directory basename
    #[arg(long)]
    name: Option<String>,
    /// Configuration file; omitted keys use the reference configuration
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output path for the model archive
    #[arg(long)]
    out: PathBuf,
    /// Master seed, overriding the config's `seed`
    #[arg(long)]
    seed: Option<u64>,
    /// Suppress the per-epoch objective lines
    #[arg(long)]
    quiet: bool,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SplitChoice {
    Train,
    Val,
    Test,
    All,
}

#[derive(clap::Args)]
struct EvalArgs {
    /// Model archive written by `train`
    #[arg(long)]
    model: PathBuf,
    /// Dataset directory (TUDataset text layout)
    #[arg(long)]
    data: PathBuf,
    /// Dataset file-name prefix; defaults to the directory basename
    #[arg(long)]
    name: Option<String>,
    /// Which part to score; the split is reconstructed from the archived
    /// config, so train/val/test match the training run exactly
    #[arg(long, value_enum, default_value_t = SplitChoice::Test)]
    split: SplitChoice,
}

#[derive(clap::Args)]
struct InspectArgs {
    /// Model archive written by `train`
    #[arg(long)]
    model: PathBuf,
}

#[derive(clap::Args)]
struct VerifyArgs {
    /// Master seed for the randomized suites
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Machine-readable summary destination (one TSV line per oracle)
    #[arg(long, default_value = "cgcn_verify_summary.tsv")]
    summary: PathBuf,
}

fn dataset_name(dir: &Path, name: Option<String>) -> Result<String> {
    match name {
        Some(n) => Ok(n),
        None => dir
            .file_name()
            .and_then(|n| n.to_str())
            .map(str::to_string)
            .ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "cannot derive a dataset name from {:?}; pass --name",
                    dir
                ))
            }),
    }
}

fn print_report(split: &str, report: &EvalReport) {
    println!(
        "{split} accuracy {:.4} mean loss {:.6} ({} samples)",
        report.accuracy, report.mean_loss, report.num_samples
    );
}

fn train_cmd(args: TrainArgs) -> Result<()> {
    let name = dataset_name(&args.data, args.name)?;
    let (dataset, manifest) = load_tudataset(&args.data, &name)?;
    let mut config = match &args.config {
        Some(path) => load_train_config(path)?,
        None => TrainConfig::reference(0),
    };
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    config.validate()?;
    println!(
        "loaded {}: {} graphs, {} nodes, {} edges, {} classes, features {}",
        manifest.name,
        manifest.num_graphs,
        manifest.total_nodes,
        manifest.total_edges,
        manifest.num_classes,
        manifest.feature_source
    );
    let result = run_pipeline(&dataset, &config)?;
    for trace in &result.traces {
        if !args.quiet {
            for e in &trace.epochs {
                println!(
                    "layer {} epoch {} objective {:.9} step {:.3e}",
                    trace.layer + 1,
                    e.epoch,
                    e.objective,
                    e.step_size
                );
            }
        }
        println!(
            "layer {} final objective {:.9}",
            trace.layer + 1,
            trace.final_objective()
        );
    }
    print_report("train", &result.train_report);
    print_report("val", &result.val_report);
    print_report("test", &result.test_report);
    save_model(&result.model, &render_config(&config), &args.out)?;
    println!("model written to {}", args.out.display());
    Ok(())
}

fn eval_cmd(args: EvalArgs) -> Result<()> {
    let archive = load_model(&args.model)?;
    let name = dataset_name(&args.data, args.name)?;
    let (dataset, _manifest) = load_tudataset(&args.data, &name)?;
    let (split_name, part): (&str, Dataset) = match args.split {
        SplitChoice::All => ("all", dataset),
        choice => {
            let config = parse_config_str("archived config", &archive.config_echo)?;
            let (train, val, test) = split_dataset(&dataset, config.split, config.seed)?;
            match choice {
                SplitChoice::Train => ("train", train),
                SplitChoice::Val => ("val", val),
                SplitChoice::Test => ("test", test),
                SplitChoice::All => unreachable!(),
            }
        }
    };
    let report = evaluate(&archive.model, &part)?;
    print_report(split_name, &report);
    Ok(())
}

fn inspect_cmd(args: InspectArgs) -> Result<()> {
    let ModelArchive {
        version,
        config_echo: _,
        model,
    } = load_model(&args.model)?;
    println!("format version {version}");
    println!(
        "shift {}, input dim {}, classes {}, layers {}",
        model.shift_kind(),
        model.input_dim(),
        model.num_classes(),
        model.layers().len()
    );
    for (i, layer) in model.layers().iter().enumerate() {
        let landmarks: Vec<String> = layer
            .kernels()
            .iter()
            .map(|k| k.width().to_string())
            .collect();
        let stacked = layer.stacked_filters();
        let norm = layer.filter_nuclear_norm();
        let budget = layer.budget();
        println!(
            "layer {}: input {}, output {}, hops {}, landmarks [{}], filters {}x{}, \
             nuclear norm {:.6} of budget {:.6} {}",
            i + 1,
            layer.input_dim(),
            layer.output_dim(),
            layer.hops(),
            landmarks.join(", "),
            stacked.nrows(),
            stacked.ncols(),
            norm,
            budget,
            if norm <= budget + 1e-9 { "ok" } else { "EXCEEDED" }
        );
    }
    for (i, readout) in model.hidden_readouts().iter().enumerate() {
        println!(
            "hidden readout {}: {}x{} (frozen)",
            i + 1,
            readout.nrows(),
            readout.ncols()
        );
    }
    println!(
        "final readout {}x{}, bias {}",
        model.final_readout().nrows(),
        model.final_readout().ncols(),
        model.final_bias().len()
    );
    Ok(())
}

fn verify_cmd(args: VerifyArgs) -> Result<ExitCode> {
    let reports = oracle::run_all(args.seed)?;
    for report in &reports {
        println!("{report}");
    }
    std::fs::write(&args.summary, oracle::render_summary(&reports))?;
    println!("summary written to {}", args.summary.display());
    let failures = reports.iter().filter(|r| !r.pass).count();
    if failures > 0 {
        eprintln!("{failures} of {} oracle suites failed", reports.len());
        return Ok(ExitCode::FAILURE);
    }
    println!("all {} oracle suites passed", reports.len());
    Ok(ExitCode::SUCCESS)
}

fn run(command: Command) -> Result<ExitCode> {
    match command {
        Command::Train(args) => train_cmd(args).map(|()| ExitCode::SUCCESS),
        Command::Eval(args) => eval_cmd(args).map(|()| ExitCode::SUCCESS),
        Command::Inspect(args) => inspect_cmd(args).map(|()| ExitCode::SUCCESS),
        Command::Verify(args) => verify_cmd(args),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
