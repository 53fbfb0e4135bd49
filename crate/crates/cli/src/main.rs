use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};
use mcbench_core::datasets::DatasetKind;
use mcbench_core::nn::{Architecture, TrainConfig};
use mcbench_core::quantization::{Int8Mode, Precision};
use mcbench_core::sizing;

use mcbench_cli::config::{default_data_dir, SweepConfig};
use mcbench_cli::pipeline;
use mcbench_cli::report::{self, Format};
use mcbench_cli::sweep::run_sweep;

#[derive(Parser)]
#[command(
    name = "mcbench",
    version,
    about = "Prune, quantize and size small CNNs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum DatasetArg {
    Mnist,
    Cifar10,
}

impl From<DatasetArg> for DatasetKind {
    fn from(d: DatasetArg) -> Self {
        match d {
            DatasetArg::Mnist => DatasetKind::Mnist,
            DatasetArg::Cifar10 => DatasetKind::Cifar10,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ArchArg {
    MnistCnn,
    CifarSmallnet,
}

impl From<ArchArg> for Architecture {
    fn from(a: ArchArg) -> Self {
        match a {
            ArchArg::MnistCnn => Architecture::MnistCnn,
            ArchArg::CifarSmallnet => Architecture::CifarSmallNet,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Symmetric,
    Asymmetric,
}

impl From<ModeArg> for Int8Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Symmetric => Int8Mode::Symmetric,
            ModeArg::Asymmetric => Int8Mode::Asymmetric,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Test,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Markdown,
}

/// Optimizer settings shared by `train` and `prune`.
#[derive(clap::Args)]
struct TrainArgs {
    #[arg(long, default_value_t = 128)]
    batch_size: usize,
    #[arg(long, default_value_t = 0.3)]
    val_split: f64,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long, default_value_t = TrainConfig::default().learning_rate)]
    learning_rate: f32,
    /// Train on the first N examples only.
    #[arg(long)]
    train_limit: Option<usize>,
}

impl TrainArgs {
    fn config(&self, epochs: usize) -> TrainConfig {
        TrainConfig {
            epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            val_split: self.val_split,
            seed: self.seed,
            ..TrainConfig::default()
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Write a freshly initialized (untrained) model.
    Init {
        #[arg(long, value_enum)]
        arch: ArchArg,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a baseline model.
    Train {
        #[arg(long, value_enum)]
        dataset: DatasetArg,
        #[arg(long, value_enum)]
        arch: ArchArg,
        #[arg(long)]
        data_dir: Option<PathBuf>,
        #[arg(long, default_value_t = 12)]
        epochs: usize,
        #[command(flatten)]
        train: TrainArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Gradually prune a trained model while fine-tuning it.
    Prune {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        target_sparsity: f64,
        #[arg(long, default_value_t = 12)]
        epochs: usize,
        #[arg(long)]
        data_dir: Option<PathBuf>,
        #[command(flatten)]
        train: TrainArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Post-training quantization of weight tensors.
    Quantize {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, value_parser = ["8", "16"])]
        bits: String,
        #[arg(long, value_enum, default_value = "asymmetric")]
        mode: ModeArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print test (or train) accuracy in percent.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, value_enum)]
        dataset: DatasetArg,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
        #[arg(long)]
        data_dir: Option<PathBuf>,
    },
    /// Print the gzipped size of a model in bytes.
    Size {
        #[arg(long)]
        model: PathBuf,
    },
    /// Run the full sparsity × precision grid from a config file.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Render tables from a sweep results CSV.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, value_enum, default_value = "markdown")]
        format: FormatArg,
    },
}

enum Failure {
    Usage(anyhow::Error),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

fn require_file(path: &Path) -> Result<(), Failure> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Failure::Usage(anyhow::anyhow!(
            "no such file: {}",
            path.display()
        )))
    }
}

fn require_dir(path: &Path) -> Result<(), Failure> {
    if path.is_dir() {
        Ok(())
    } else {
        Err(Failure::Usage(anyhow::anyhow!(
            "no such directory: {}",
            path.display()
        )))
    }
}

fn write_model(
    stored: &mcbench_core::quantization::QuantizedModel,
    out: &Path,
) -> anyhow::Result<()> {
    let artifact = pipeline::artifact(stored)?;
    artifact.write(out)?;
    log::info!(
        "wrote {} ({} bytes gzipped)",
        out.display(),
        artifact.gzipped_size()
    );
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Init { arch, seed, out } => {
            let model = Architecture::from(arch)
                .build(seed)
                .map_err(anyhow::Error::from)?;
            write_model(&pipeline::quantize(&model, Precision::Float32)?.0, &out)?;
        }
        Command::Train {
            dataset,
            arch,
            data_dir,
            epochs,
            train,
            out,
        } => {
            let arch = Architecture::from(arch);
            let kind = DatasetKind::from(dataset);
            if arch.dataset() != kind {
                return Err(Failure::Usage(anyhow::anyhow!(
                    "architecture {arch} expects --dataset {}",
                    arch.dataset()
                )));
            }
            let dir = data_dir.unwrap_or_else(|| default_data_dir(kind));
            require_dir(&dir)?;
            let cfg = train.config(epochs);
            cfg.validate().map_err(|e| Failure::Usage(e.into()))?;
            let (data, _) = pipeline::load_data(kind, &dir, train.train_limit)?;
            let model = pipeline::train_baseline(arch, &data, &cfg)?;
            write_model(&pipeline::quantize(&model, Precision::Float32)?.0, &out)?;
        }
        Command::Prune {
            model,
            target_sparsity,
            epochs,
            data_dir,
            train,
            out,
        } => {
            require_file(&model)?;
            if !(0.0..1.0).contains(&target_sparsity) {
                return Err(Failure::Usage(anyhow::anyhow!(
                    "--target-sparsity {target_sparsity} outside [0, 1)"
                )));
            }
            let cfg = train.config(epochs);
            cfg.validate().map_err(|e| Failure::Usage(e.into()))?;
            let (_, model) = pipeline::load_model(&model)?;
            let arch: Architecture = model.arch.parse().map_err(anyhow::Error::from)?;
            let dir = data_dir.unwrap_or_else(|| default_data_dir(arch.dataset()));
            require_dir(&dir)?;
            let (data, _) = pipeline::load_data(arch.dataset(), &dir, train.train_limit)?;
            let pruned = pipeline::prune(&model, &data, &cfg, target_sparsity)?;
            write_model(&pipeline::quantize(&pruned, Precision::Float32)?.0, &out)?;
        }
        Command::Quantize {
            model,
            bits,
            mode,
            out,
        } => {
            require_file(&model)?;
            let bits: u32 = bits.parse().expect("validated by clap");
            let precision = Precision::from_bits(bits, mode.into()).map_err(anyhow::Error::from)?;
            let (_, model) = pipeline::load_model(&model)?;
            write_model(&pipeline::quantize(&model, precision)?.0, &out)?;
        }
        Command::Evaluate {
            model,
            dataset,
            split,
            data_dir,
        } => {
            require_file(&model)?;
            let kind = DatasetKind::from(dataset);
            let dir = data_dir.unwrap_or_else(|| default_data_dir(kind));
            require_dir(&dir)?;
            let (_, model) = pipeline::load_model(&model)?;
            let (train, test) = pipeline::load_data(kind, &dir, None)?;
            let data = match split {
                SplitArg::Train => train,
                SplitArg::Test => test,
            };
            println!("{:.2}", pipeline::accuracy(&model, &data)?);
        }
        Command::Size { model } => {
            require_file(&model)?;
            let params = sizing::read_archive_file(&model).map_err(anyhow::Error::from)?;
            let entries = sizing::stored_entries(&params);
            let size = sizing::gzipped_archive_size(&entries).map_err(anyhow::Error::from)?;
            println!("{size}");
        }
        Command::Sweep { config, out_dir } => {
            require_file(&config)?;
            let cfg = SweepConfig::load(&config).map_err(Failure::Usage)?;
            require_dir(&cfg.data_dir()?)?;
            let outcome = run_sweep(&cfg, &out_dir)?;
            log::info!(
                "{} rows written to {}",
                outcome.records.len(),
                outcome.csv_path.display()
            );
            if !outcome.failures.is_empty() {
                for f in &outcome.failures {
                    eprintln!(
                        "cell s={} p={} failed: {:#}",
                        f.sparsity, f.precision_bits, f.error
                    );
                }
                return Err(Failure::Runtime(anyhow::anyhow!(
                    "{} cell(s) failed",
                    outcome.failures.len()
                )));
            }
        }
        Command::Report { input, format } => {
            require_file(&input)?;
            let text = std::fs::read_to_string(&input)
                .with_context(|| format!("reading {}", input.display()))?;
            let records =
                report::read_csv(&text).with_context(|| format!("parsing {}", input.display()))?;
            let format = match format {
                FormatArg::Csv => Format::Csv,
                FormatArg::Markdown => Format::Markdown,
            };
            print!("{}", report::render(&records, format)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
