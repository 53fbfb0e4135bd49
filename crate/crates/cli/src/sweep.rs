//! Sparsity × precision grid sweep.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use mcbench_core::datasets::DatasetSplit;
use mcbench_core::metrics::{fmt_sparsity, CompressionRecord};
use mcbench_core::nn::{Architecture, Model, TrainConfig};
use mcbench_core::quantization::{Int8Mode, Precision};

use crate::config::SweepConfig;
use crate::pipeline;
use crate::report;

pub const RESULTS_FILE: &str = "results.csv";

#[derive(Debug)]
pub struct CellFailure {
    pub sparsity: f64,
    pub precision_bits: u32,
    pub error: anyhow::Error,
}

#[derive(Debug)]
pub struct SweepOutcome {
    /// Grid order: sparsity outer, precision inner, as configured.
    pub records: Vec<CompressionRecord>,
    pub failures: Vec<CellFailure>,
    pub csv_path: PathBuf,
}

pub fn artifact_name(arch: Architecture, sparsity: f64, bits: u32) -> String {
    format!(
        "{}_{}_s{}_p{bits}.mcmp.gz",
        arch.id(),
        arch.dataset().id(),
        fmt_sparsity(sparsity)
    )
}

struct Cell<'a> {
    arch: Architecture,
    mode: Int8Mode,
    test: &'a DatasetSplit,
    out_dir: &'a Path,
}

impl Cell<'_> {
    /// Quantizes, sizes, evaluates and writes the artifact for one cell.
    fn measure(&self, model: &Model, sparsity: f64, bits: u32) -> Result<(u64, f64)> {
        let precision = Precision::from_bits(bits, self.mode)?;
        let (stored, eval) = pipeline::quantize(model, precision)?;
        let artifact = pipeline::artifact(&stored)?;
        let path = self.out_dir.join(artifact_name(self.arch, sparsity, bits));
        artifact.write(&path)?;
        let acc = pipeline::accuracy(&eval, self.test)?;
        log::info!(
            "cell s={} p={bits}: {} bytes gzipped, {acc:.2}% test accuracy",
            fmt_sparsity(sparsity),
            artifact.gzipped_size()
        );
        Ok((artifact.gzipped_size(), acc))
    }
}

/// Trains the baseline once, then prunes/quantizes every grid cell.
/// Individual cell failures are collected, not fatal.
pub fn run_sweep(cfg: &SweepConfig, out_dir: &Path) -> Result<SweepOutcome> {
    cfg.validate()?;
    let arch = cfg.architecture()?;
    let (train, test) =
        pipeline::load_data(cfg.dataset_kind()?, &cfg.data_dir()?, cfg.train_limit)?;
    fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    run_sweep_on(cfg, arch, &train, &test, out_dir)
}

pub fn run_sweep_on(
    cfg: &SweepConfig,
    arch: Architecture,
    train: &DatasetSplit,
    test: &DatasetSplit,
    out_dir: &Path,
) -> Result<SweepOutcome> {
    let cell = Cell {
        arch,
        mode: cfg.int8()?,
        test,
        out_dir,
    };
    log::info!("training baseline {arch} ({} epochs)", cfg.epochs);
    let baseline_model = pipeline::train_baseline(arch, train, &cfg.train_config())?;
    let (size, acc) = cell.measure(&baseline_model, 0.0, 32)?;
    let baseline = CompressionRecord::baseline(size, acc);

    let finetune: TrainConfig = cfg.finetune_config();
    let mut records = Vec::new();
    let mut failures = Vec::new();
    for &sparsity in &cfg.sparsities {
        let pruned = if sparsity == 0.0 {
            Ok(baseline_model.clone())
        } else {
            log::info!("pruning to {}", fmt_sparsity(sparsity));
            pipeline::prune(&baseline_model, train, &finetune, sparsity)
        };
        let pruned = match pruned {
            Ok(m) => m,
            Err(error) => {
                log::error!("pruning to {sparsity} failed: {error:#}");
                failures.extend(cfg.precisions.iter().map(|&bits| CellFailure {
                    sparsity,
                    precision_bits: bits,
                    error: anyhow::anyhow!("pruning failed: {error:#}"),
                }));
                continue;
            }
        };
        for &bits in &cfg.precisions {
            if sparsity == 0.0 && bits == 32 {
                records.push(baseline.clone());
                continue;
            }
            let result = cell
                .measure(&pruned, sparsity, bits)
                .and_then(|(size, acc)| {
                    let mode = (bits == 8).then_some(cell.mode);
                    Ok(CompressionRecord::compressed(
                        sparsity, bits, mode, size, acc, &baseline,
                    )?)
                });
            match result {
                Ok(r) => records.push(r),
                Err(error) => {
                    log::error!("cell s={sparsity} p={bits} failed: {error:#}");
                    failures.push(CellFailure {
                        sparsity,
                        precision_bits: bits,
                        error,
                    });
                }
            }
        }
    }

    let csv_path = out_dir.join(RESULTS_FILE);
    fs::write(&csv_path, report::write_csv(&records)?)
        .with_context(|| format!("writing {}", csv_path.display()))?;
    Ok(SweepOutcome {
        records,
        failures,
        csv_path,
    })
}
