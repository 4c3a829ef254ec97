//! Model evaluation: per-task R-squared and MMoE expert utilization.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::dataset::{destandardize_prediction, Dataset, Split, SplitAssignment, NUM_TASKS};
use crate::nn::matrix::Matrix;

use super::{gather_inputs, Components, FusionError, FusionModel};

/// Per-task coefficient of determination over the chosen split, computed in
/// de-standardized (raw label) space on records where the label is present.
///
/// A task with fewer than two present labels in the split (or zero label
/// variance) is reported as `None`.
pub fn evaluate_r2(
    model: &FusionModel,
    dataset: &Dataset,
    assignment: &SplitAssignment,
    split: Split,
) -> Result<[Option<f64>; NUM_TASKS], FusionError> {
    let stats = model.stats().ok_or(FusionError::NotTrained)?.clone();
    let indices = assignment.indices(split);
    if indices.is_empty() {
        return Err(FusionError::EmptySplit(split.name()));
    }

    // predictions for the whole split, chunked
    let mut preds_raw: Vec<[f64; NUM_TASKS]> = Vec::with_capacity(indices.len());
    for chunk in indices.chunks(512) {
        let x = gather_inputs(dataset, chunk, model.modality())?;
        let (preds, _) = model.forward_eval_batch(&x)?;
        for b in 0..preds.rows() {
            let mut row = [0.0; NUM_TASKS];
            row.copy_from_slice(preds.row(b));
            preds_raw.push(destandardize_prediction(&row, &stats));
        }
    }

    let mut out = [None; NUM_TASKS];
    for k in 0..NUM_TASKS {
        let pairs: Vec<(f64, f64)> = indices
            .iter()
            .zip(&preds_raw)
            .filter_map(|(&idx, pred)| dataset.record(idx).labels[k].map(|y| (y, pred[k])))
            .collect();
        if pairs.len() < 2 {
            continue;
        }
        let mean_y = pairs.iter().map(|(y, _)| y).sum::<f64>() / pairs.len() as f64;
        let ss_tot: f64 = pairs.iter().map(|(y, _)| (y - mean_y) * (y - mean_y)).sum();
        if ss_tot <= 0.0 {
            continue;
        }
        let ss_res: f64 = pairs.iter().map(|(y, p)| (y - p) * (y - p)).sum();
        out[k] = Some(1.0 - ss_res / ss_tot);
    }
    Ok(out)
}

/// Mean MMoE gate weight per (task, expert) over the chosen split.
///
/// Entry `(k, i)` is the average of task `k`'s softmax weight on expert `i`;
/// every row sums to 1 up to float rounding.
pub fn expert_utilization(
    model: &FusionModel,
    dataset: &Dataset,
    assignment: &SplitAssignment,
    split: Split,
) -> Result<Matrix, FusionError> {
    let n_experts = match model.components() {
        Components::Mmoe { experts, .. } => experts.len(),
        other => {
            let name = match other {
                Components::Early { .. } => "early",
                Components::GatedLate { .. } => "gated_late",
                Components::Mmoe { .. } => unreachable!(),
            };
            return Err(FusionError::UnsupportedArchitecture(format!(
                "expert utilization needs an MMoE model, got {name}"
            )));
        }
    };
    let indices = assignment.indices(split);
    if indices.is_empty() {
        return Err(FusionError::EmptySplit(split.name()));
    }

    let mut sums = Matrix::zeros(NUM_TASKS, n_experts);
    for chunk in indices.chunks(512) {
        let x = gather_inputs(dataset, chunk, model.modality())?;
        let (_, gates) = model.forward_eval_batch(&x)?;
        match gates {
            Some(super::BatchGates::ExpertWeights(per_task)) => {
                for (k, g) in per_task.iter().enumerate() {
                    for b in 0..g.rows() {
                        for i in 0..n_experts {
                            sums.row_mut(k)[i] += g.row(b)[i];
                        }
                    }
                }
            }
            _ => unreachable!("mmoe forward always yields expert weights"),
        }
    }
    let n = indices.len() as f64;
    for v in sums.data_mut() {
        *v /= n;
    }
    Ok(sums)
}

/// CSV export of modality-selected embeddings with de-standardized
/// predictions: `id,v0..v{d-1},tg_pred,tm_pred,eg_pred`, one row per record.
/// Feeds external projection and plotting tools.
pub fn write_fused_csv(
    path: impl AsRef<Path>,
    dataset: &Dataset,
    model: &FusionModel,
) -> Result<(), FusionError> {
    let stats = model.stats().ok_or(FusionError::NotTrained)?.clone();
    let dim = model.modality().input_dim();
    let mut w = BufWriter::new(File::create(path.as_ref())?);
    write!(w, "id")?;
    for d in 0..dim {
        write!(w, ",v{d}")?;
    }
    writeln!(w, ",tg_pred,tm_pred,eg_pred")?;
    let all: Vec<usize> = (0..dataset.len()).collect();
    for chunk in all.chunks(512) {
        let x = gather_inputs(dataset, chunk, model.modality())?;
        let (preds, _) = model.forward_eval_batch(&x)?;
        for (b, &idx) in chunk.iter().enumerate() {
            write!(w, "{}", dataset.record(idx).id)?;
            for v in x.row(b) {
                write!(w, ",{v}")?;
            }
            let mut row = [0.0; NUM_TASKS];
            row.copy_from_slice(preds.row(b));
            let raw = destandardize_prediction(&row, &stats);
            writeln!(w, ",{},{},{}", raw[0], raw[1], raw[2])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// CSV export of per-task metrics: `task,r2,n_labels`; undefined tasks print
/// an empty r2 field.
pub fn write_r2_csv(
    path: impl AsRef<Path>,
    r2: &[Option<f64>; NUM_TASKS],
    label_counts: &[usize; NUM_TASKS],
) -> Result<(), FusionError> {
    let mut w = BufWriter::new(File::create(path.as_ref())?);
    writeln!(w, "task,r2,n_labels")?;
    for (k, prop) in crate::dataset::Property::ALL.iter().enumerate() {
        match r2[k] {
            Some(v) => writeln!(w, "{},{},{}", prop.name(), v, label_counts[k])?,
            None => writeln!(w, "{},,{}", prop.name(), label_counts[k])?,
        }
    }
    w.flush()?;
    Ok(())
}
