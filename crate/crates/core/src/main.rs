use std::io::Write;
use std::ops::ControlFlow;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use dermforge::augment::AugmentConfig;
use dermforge::dataset::{load_metadata, tabulate, ClassLabel, Dataset, Facet, LoadOptions, Split};
use dermforge::io_util::{write_atomic, write_atomic_with};
use dermforge::nn::gradcheck::{run_suite, GradCheckConfig, GROUPS};
use dermforge::trainer::{
    dataset_for_checkpoint, history_csv, history_svg, train_with, ClassWeightMode, Evaluation,
    CHECKPOINT_FILE, HISTORY_FILE,
};
use dermforge::{evaluate, load_checkpoint, predict, Error, TrainConfig};

const METADATA_FILE: &str = "HAM10000_metadata.csv";

#[derive(Parser)]
#[command(
    name = "dermforge",
    version,
    about = "Train and evaluate a 7-class skin lesion CNN on HAM10000"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Count metadata records by a facet.
    Analyze {
        #[arg(long, default_value = "data/HAM10000/HAM10000_metadata.csv")]
        metadata: PathBuf,
        #[arg(long, value_enum, default_value_t = FacetArg::Dx)]
        facet: FacetArg,
        /// Output CSV; `-` writes to stdout.
        #[arg(long, default_value = "-")]
        out: PathBuf,
    },
    /// Train from scratch and write checkpoint, history and validation report into --out.
    Train {
        /// Directory holding the images (searched one level deep).
        #[arg(long, default_value = "data/HAM10000")]
        data_dir: PathBuf,
        /// Metadata CSV [default: <data-dir>/HAM10000_metadata.csv]
        #[arg(long)]
        metadata: Option<PathBuf>,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long, default_value_t = 50, value_parser = clap::value_parser!(u64).range(1..))]
        epochs: u64,
        #[arg(long, default_value_t = 90, value_parser = clap::value_parser!(u64).range(1..))]
        batch_size: u64,
        #[arg(long, default_value_t = 0.001)]
        lr: f64,
        #[arg(long, default_value_t = 0.1)]
        val_fraction: f64,
        #[arg(long, value_enum, default_value_t = WeightsArg::NvHalf)]
        class_weights: WeightsArg,
        /// Disable training-time augmentation.
        #[arg(long)]
        no_augment: bool,
        /// Train on a seeded random subset of this many records [default: all]
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
        subset: Option<u64>,
        #[arg(long, default_value = "runs/latest")]
        out: PathBuf,
    },
    /// Evaluate a checkpoint on the split it was trained with.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "data/HAM10000")]
        data_dir: PathBuf,
        /// Metadata CSV [default: <data-dir>/HAM10000_metadata.csv]
        #[arg(long)]
        metadata: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = SplitArg::Val)]
        split: SplitArg,
        /// Directory for the report and ROC files [default: the checkpoint's directory]
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Classify image files.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(required = true, num_args = 1..)]
        images: Vec<PathBuf>,
    },
    /// Finite-difference check of every backward pass in double precision.
    Gradcheck {
        #[arg(long, default_value = "all", value_parser = gradcheck_groups())]
        layers: String,
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum FacetArg {
    Dx,
    #[value(name = "dx_type")]
    DxType,
    Localization,
    #[value(name = "age_by_dx")]
    AgeByDx,
}

impl From<FacetArg> for Facet {
    fn from(f: FacetArg) -> Self {
        match f {
            FacetArg::Dx => Facet::Dx,
            FacetArg::DxType => Facet::DxType,
            FacetArg::Localization => Facet::Localization,
            FacetArg::AgeByDx => Facet::AgeByDx,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum WeightsArg {
    NvHalf,
    Uniform,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Val,
    Train,
}

fn gradcheck_groups() -> clap::builder::PossibleValuesParser {
    let mut names = vec!["all"];
    names.extend(GROUPS);
    clap::builder::PossibleValuesParser::new(names)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = dermforge::init_thread_pool() {
        eprintln!("error: {e}");
        return ExitCode::from(2);
    }
    let result = match cli.command {
        Command::Analyze {
            metadata,
            facet,
            out,
        } => cmd_analyze(&metadata, facet.into(), &out),
        Command::Train {
            data_dir,
            metadata,
            seed,
            epochs,
            batch_size,
            lr,
            val_fraction,
            class_weights,
            no_augment,
            subset,
            out,
        } => {
            let config = TrainConfig {
                epochs: epochs as usize,
                batch_size: batch_size as usize,
                initial_lr: lr,
                val_fraction,
                seed,
                class_weight_mode: match class_weights {
                    WeightsArg::NvHalf => ClassWeightMode::NvHalf,
                    WeightsArg::Uniform => ClassWeightMode::Uniform,
                },
                augment: if no_augment {
                    AugmentConfig::none()
                } else {
                    AugmentConfig::default()
                },
                subset: subset.map(|n| n as usize),
                out_dir: Some(out),
                ..TrainConfig::default()
            };
            if let Err(e) = config.validate() {
                eprintln!("error: {e}");
                return ExitCode::from(2);
            }
            let metadata = metadata.unwrap_or_else(|| data_dir.join(METADATA_FILE));
            cmd_train(config, &data_dir, &metadata)
        }
        Command::Eval {
            checkpoint,
            data_dir,
            metadata,
            split,
            out,
        } => {
            let metadata = metadata.unwrap_or_else(|| data_dir.join(METADATA_FILE));
            let split = match split {
                SplitArg::Val => Split::Validation,
                SplitArg::Train => Split::Train,
            };
            cmd_eval(&checkpoint, &data_dir, &metadata, split, out)
        }
        Command::Predict { checkpoint, images } => cmd_predict(&checkpoint, &images),
        Command::Gradcheck { layers, tolerance } => cmd_gradcheck(&layers, tolerance),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

type CmdResult = Result<ExitCode, Error>;

fn cmd_analyze(metadata: &Path, facet: Facet, out: &Path) -> CmdResult {
    let records = load_metadata(metadata)?;
    let table = tabulate(&records, facet);
    if out == Path::new("-") {
        let mut stdout = std::io::stdout().lock();
        table.write_csv(&mut stdout)?;
        stdout.flush()?;
    } else {
        write_atomic_with(out, |w| table.write_csv(w))?;
    }
    if facet == Facet::Dx {
        let nv = table.count(&[ClassLabel::Nv.code()]);
        let total = table.total();
        eprintln!(
            "nv fraction: {:.4} ({nv} of {total} images)",
            nv as f64 / total.max(1) as f64
        );
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_train(config: TrainConfig, data_dir: &Path, metadata: &Path) -> CmdResult {
    let out = config
        .out_dir
        .clone()
        .expect("train always sets an output directory");
    std::fs::create_dir_all(&out)?;
    let records = load_metadata(metadata)?;
    let opts = LoadOptions {
        val_fraction: config.val_fraction,
        seed: config.seed,
        subset: config.subset,
        norm: None,
    };
    let data = Dataset::load(data_dir, &records, &opts)?;
    eprintln!(
        "{} training and {} validation images",
        data.train.len(),
        data.val.len()
    );
    let outcome = train_with(&config, &data, &mut |r| {
        eprintln!(
            "epoch {:>3}  loss {:.4}  acc {:.4}  val_loss {:.4}  val_acc {:.4}  lr {:e}  {:.1}s",
            r.epoch,
            r.train_loss,
            r.train_accuracy,
            r.val_loss,
            r.val_accuracy,
            r.learning_rate,
            r.wall_time
        );
        ControlFlow::Continue(())
    })?;
    write_atomic(
        &out.join(HISTORY_FILE),
        history_csv(&outcome.history).as_bytes(),
    )?;
    write_atomic(
        &out.join("history.svg"),
        history_svg(&outcome.history).as_bytes(),
    )?;
    if outcome.stopped_early {
        eprintln!("stopped early: learning rate at its floor and validation loss flat");
    }
    let last = outcome.history.last().expect("at least one epoch");
    eprintln!(
        "final epoch {}: train_acc {:.4} val_acc {:.4}; best checkpoint from epoch {} (val_loss {:.4})",
        last.epoch, last.train_accuracy, last.val_accuracy, outcome.best.epoch, outcome.best.best_val_loss
    );
    let eval = evaluate(&outcome.best, &data, Split::Validation)?;
    write_reports(&out, "val", &eval)?;
    print!("{}", eval.report.to_table());
    eprintln!("checkpoint: {}", out.join(CHECKPOINT_FILE).display());
    Ok(ExitCode::SUCCESS)
}

fn write_reports(dir: &Path, prefix: &str, eval: &Evaluation) -> Result<(), Error> {
    let mut kv = eval.report.to_key_values();
    kv.push_str(&format!("loss={}\n", eval.loss));
    write_atomic(
        &dir.join(format!("{prefix}-report.txt")),
        eval.report.to_table().as_bytes(),
    )?;
    write_atomic(&dir.join(format!("{prefix}-report.kv")), kv.as_bytes())?;
    write_atomic(
        &dir.join(format!("{prefix}-roc.csv")),
        eval.roc.to_csv().as_bytes(),
    )?;
    Ok(())
}

fn cmd_eval(
    checkpoint: &Path,
    data_dir: &Path,
    metadata: &Path,
    split: Split,
    out: Option<PathBuf>,
) -> CmdResult {
    let cp = load_checkpoint(checkpoint)?;
    let records = load_metadata(metadata)?;
    let data = dataset_for_checkpoint(&cp, data_dir, &records)?;
    let eval = evaluate(&cp, &data, split)?;
    let dir = out.unwrap_or_else(|| {
        checkpoint
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_default()
    });
    if !dir.as_os_str().is_empty() {
        std::fs::create_dir_all(&dir)?;
    }
    let prefix = match split {
        Split::Validation => "eval-val",
        Split::Train => "eval-train",
    };
    write_reports(&dir, prefix, &eval)?;
    print!("{}", eval.report.to_table());
    println!("loss {:.6}", eval.loss);
    Ok(ExitCode::SUCCESS)
}

fn cmd_predict(checkpoint: &Path, images: &[PathBuf]) -> CmdResult {
    let cp = load_checkpoint(checkpoint)?;
    let mut failed = false;
    let mut stdout = std::io::stdout().lock();
    for path in images {
        match predict(&cp, path) {
            Ok(p) => {
                let probs: Vec<String> = ClassLabel::ALL
                    .iter()
                    .zip(p.probs)
                    .map(|(c, v)| format!("{}={v:.6}", c.code()))
                    .collect();
                writeln!(
                    stdout,
                    "{}\t{}\t{}\t{}",
                    path.display(),
                    p.label.code(),
                    p.label.full_name(),
                    probs.join(" ")
                )?;
            }
            Err(e) => {
                failed = true;
                eprintln!("error: {}: {e}", path.display());
            }
        }
    }
    stdout.flush()?;
    Ok(if failed {
        ExitCode::from(1)
    } else {
        ExitCode::SUCCESS
    })
}

fn cmd_gradcheck(layers: &str, tolerance: f64) -> CmdResult {
    let results = run_suite(
        layers,
        &GradCheckConfig {
            tolerance,
            ..GradCheckConfig::default()
        },
    )?;
    let mut failing = Vec::new();
    for r in &results {
        let ok = r.passed(tolerance);
        println!(
            "{:<20} {:<44} max_rel_err {:.3e}  checked {:>5}  skipped {:>3}  {}",
            r.group,
            r.name,
            r.max_rel_error,
            r.checked,
            r.skipped,
            if ok { "ok" } else { "FAIL" }
        );
        if !ok {
            failing.push(r.name.as_str());
        }
    }
    if failing.is_empty() {
        println!("all {} checks within {tolerance:e}", results.len());
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!("failing: {}", failing.join(", "));
        Ok(ExitCode::from(1))
    }
}
