//! Stage functions shared by the sweep and the per-stage commands, so a
//! chain of commands reproduces a sweep cell exactly.

use std::path::Path;

use anyhow::{Context, Result};
use mcbench_core::datasets::{DatasetKind, DatasetSplit};
use mcbench_core::nn::{evaluate_accuracy, train, Architecture, Model, TrainConfig};
use mcbench_core::pruning::prune_and_finetune;
use mcbench_core::quantization::{quantize_model, Precision, QuantizedModel};
use mcbench_core::sizing::{self, ModelArtifact};

/// Loads `(train, test)`, truncating the training set to `train_limit`.
pub fn load_data(
    kind: DatasetKind,
    dir: &Path,
    train_limit: Option<usize>,
) -> Result<(DatasetSplit, DatasetSplit)> {
    let (train, test) = kind
        .load(dir)
        .with_context(|| format!("loading {kind} from {}", dir.display()))?;
    let train = match train_limit {
        Some(n) => train.head(n),
        None => train,
    };
    Ok((train, test))
}

pub fn train_baseline(arch: Architecture, data: &DatasetSplit, cfg: &TrainConfig) -> Result<Model> {
    let model = arch.build(cfg.seed)?;
    Ok(train(&model, data, cfg, None)?)
}

pub fn prune(
    model: &Model,
    data: &DatasetSplit,
    cfg: &TrainConfig,
    sparsity: f64,
) -> Result<Model> {
    let (pruned, mask) = prune_and_finetune(model, data, cfg, sparsity)?;
    log::info!(
        "pruned to {:.4} sparsity ({} epochs)",
        mask.achieved_sparsity(),
        cfg.epochs
    );
    Ok(pruned)
}

/// Stored form and dequantized evaluation model at `precision`.
pub fn quantize(model: &Model, precision: Precision) -> Result<(QuantizedModel, Model)> {
    Ok(quantize_model(model, precision)?)
}

pub fn artifact(stored: &QuantizedModel) -> Result<ModelArtifact> {
    Ok(ModelArtifact::from_entries(&sizing::stored_entries(
        &stored.params,
    ))?)
}

pub fn accuracy(model: &Model, data: &DatasetSplit) -> Result<f64> {
    Ok(evaluate_accuracy(model, data)?)
}

/// Reads an artifact back into a runnable model (weights dequantized).
pub fn load_model(path: &Path) -> Result<(QuantizedModel, Model)> {
    let params = sizing::read_archive_file(path)?;
    let stored = QuantizedModel {
        arch: String::new(),
        params,
    };
    let dense = stored.dequantize();
    let arch = Architecture::identify(&dense)
        .with_context(|| format!("identifying architecture of {}", path.display()))?;
    let model = arch.with_params(dense)?;
    Ok((
        QuantizedModel {
            arch: arch.id().to_string(),
            params: stored.params,
        },
        model,
    ))
}
