//! Mini-batch training loop for the fusion models.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataset::{Dataset, Split, SplitAssignment, TaskStats};
use crate::nn::matrix::Matrix;
use crate::nn::{AdamW, PlateauScheduler};

use super::loss::masked_mse_with_grad;
use super::{gather_inputs, gather_labels, Components, FusionError, FusionModel};

/// Training hyperparameters. Defaults: batch 128, lr 1e-5, weight decay
/// 1e-3, 100 epochs, dropout 0.4, plateau schedule (factor 0.5, patience 5,
/// floor 1e-7).
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub dropout: f64,
    pub seed: u64,
    pub scheduler_factor: f64,
    pub scheduler_patience: u32,
    pub min_lr: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 128,
            lr: 1e-5,
            weight_decay: 1e-3,
            epochs: 100,
            dropout: 0.4,
            seed: 0,
            scheduler_factor: 0.5,
            scheduler_patience: 5,
            min_lr: 1e-7,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<(), FusionError> {
        if self.batch_size == 0 {
            return Err(FusionError::BadConfig("batch_size must be positive".into()));
        }
        if self.epochs == 0 {
            return Err(FusionError::BadConfig("epochs must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(FusionError::BadConfig(format!("dropout {} outside [0,1)", self.dropout)));
        }
        if self.lr < 0.0 || self.weight_decay < 0.0 {
            return Err(FusionError::BadConfig("lr and weight_decay must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub history: Vec<EpochStats>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
}

impl TrainReport {
    /// CSV export: `epoch,train_loss,val_loss,lr`.
    pub fn write_history_csv(&self, path: impl AsRef<Path>) -> Result<(), FusionError> {
        let mut w = BufWriter::new(File::create(path.as_ref())?);
        writeln!(w, "epoch,train_loss,val_loss,lr")?;
        for e in &self.history {
            writeln!(w, "{},{},{},{}", e.epoch, e.train_loss, e.val_loss, e.lr)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Train `model` in place and return the per-epoch history.
///
/// Loss is masked MSE in standardized label space. Each epoch reshuffles the
/// training split under the config seed, steps AdamW per mini-batch (a batch
/// with no present labels is skipped: it carries no gradient), then scores
/// the validation split in eval mode and steps the plateau scheduler. The
/// weights left in `model` are those of the epoch with the best validation
/// loss, and the model gets `stats` attached for de-standardization.
pub fn train(
    model: &mut FusionModel,
    dataset: &Dataset,
    assignment: &SplitAssignment,
    stats: &TaskStats,
    config: &TrainConfig,
) -> Result<TrainReport, FusionError> {
    config.validate()?;
    let train_idx = assignment.indices(Split::Train);
    let val_idx = assignment.indices(Split::Val);
    if train_idx.is_empty() {
        return Err(FusionError::EmptySplit("train"));
    }
    if val_idx.is_empty() {
        return Err(FusionError::EmptySplit("val"));
    }

    let modality = model.modality();
    let train_x = gather_inputs(dataset, &train_idx, modality)?;
    let (train_y, train_m) = gather_labels(dataset, &train_idx, stats);
    let val_x = gather_inputs(dataset, &val_idx, modality)?;
    let (val_y, val_m) = gather_labels(dataset, &val_idx, stats);

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut optimizer = AdamW::new(config.lr, config.weight_decay);
    // The scheduler contract requires lr >= min_lr > 0; a zero learning
    // rate means "null optimizer", so scheduling is moot.
    let mut scheduler = (config.lr > 0.0).then(|| {
        PlateauScheduler::new(
            config.lr.max(config.min_lr),
            config.scheduler_factor,
            config.scheduler_patience,
            config.min_lr.min(config.lr),
        )
    });

    let n_train = train_idx.len();
    let mut order: Vec<usize> = (0..n_train).collect();
    let mut history = Vec::with_capacity(config.epochs);
    let mut best_val = f64::INFINITY;
    let mut best_epoch = 0usize;
    let mut best_components: Option<Components> = None;
    let mut grads = super::FusionGrads::zeros_like(model);

    for epoch in 1..=config.epochs {
        let epoch_lr = scheduler.as_ref().map_or(config.lr, |s| s.lr());
        optimizer.lr = epoch_lr;
        order.shuffle(&mut rng);

        let mut sq_err_sum = 0.0;
        let mut present = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let xb = gather_rows(&train_x, chunk);
            let yb = gather_rows(&train_y, chunk);
            let mb = gather_rows(&train_m, chunk);
            let batch_present = mb.data().iter().filter(|m| **m != 0.0).count();
            if batch_present == 0 {
                continue;
            }
            let (preds, ctx) = model.forward_train(&xb, config.dropout, &mut rng)?;
            let (batch_loss, grad) = masked_mse_with_grad(&preds, &yb, &mb)?;
            sq_err_sum += batch_loss * batch_present as f64;
            present += batch_present;
            model.backward_into(&ctx, &grad, &mut grads)?;
            let mut mlps = model.mlps_mut();
            let pairs = mlps.iter_mut().zip(&grads.per_mlp).flat_map(|(mlp, g)| {
                mlp.layers_mut().iter_mut().zip(&g.layers).flat_map(|(layer, lg)| {
                    [
                        (layer.weight.data_mut(), lg.weight.data()),
                        (layer.bias.as_mut_slice(), lg.bias.as_slice()),
                    ]
                })
            });
            optimizer.step(pairs)?;
        }
        let train_loss = if present > 0 { sq_err_sum / present as f64 } else { f64::NAN };

        let val_loss = eval_masked_loss(model, &val_x, &val_y, &val_m)?;
        history.push(EpochStats { epoch, train_loss, val_loss, lr: epoch_lr });

        if val_loss < best_val {
            best_val = val_loss;
            best_epoch = epoch;
            best_components = Some(model.components().clone());
        }
        if let Some(s) = scheduler.as_mut() {
            s.step(val_loss);
        }
    }

    if let Some(best) = best_components {
        *model.components_mut() = best;
    }
    model.set_stats(stats.clone());
    Ok(TrainReport { history, best_epoch, best_val_loss: best_val })
}

/// Masked MSE of eval-mode predictions, evaluated in fixed-size chunks.
pub(crate) fn eval_masked_loss(
    model: &FusionModel,
    x: &Matrix,
    y: &Matrix,
    mask: &Matrix,
) -> Result<f64, FusionError> {
    let mut sq_err_sum = 0.0;
    let mut present = 0usize;
    let rows: Vec<usize> = (0..x.rows()).collect();
    for chunk in rows.chunks(512) {
        let xb = gather_rows(x, chunk);
        let (preds, _) = model.forward_eval_batch(&xb)?;
        for (bi, &row) in chunk.iter().enumerate() {
            let p = preds.row(bi);
            let yv = y.row(row);
            let mv = mask.row(row);
            for k in 0..p.len() {
                if mv[k] != 0.0 {
                    let d = p[k] - yv[k];
                    sq_err_sum += d * d;
                    present += 1;
                }
            }
        }
    }
    if present == 0 {
        return Err(FusionError::AllMasked);
    }
    Ok(sq_err_sum / present as f64)
}

fn gather_rows(src: &Matrix, rows: &[usize]) -> Matrix {
    let mut out = Matrix::zeros(rows.len(), src.cols());
    for (dst, &r) in rows.iter().enumerate() {
        out.row_mut(dst).copy_from_slice(src.row(r));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{
        generate_synthetic, split_dataset, compute_task_stats, GroundTruth, SyntheticSpec,
    };
    use crate::fusion::{Architecture, Modality, ModelDims};

    fn quick_setup(n: usize, seed: u64) -> (Dataset, SplitAssignment, TaskStats) {
        let spec = SyntheticSpec {
            n_records: n,
            noise_std: 0.05,
            missing_rate: [0.0, 0.2, 0.2],
            ground_truth_weights: GroundTruth::random_correlated(7, 0.4),
            seed,
        };
        let ds = generate_synthetic(&spec).unwrap();
        let assign = split_dataset(&ds, (0.8, 0.1, 0.1), seed + 1).unwrap();
        let stats = compute_task_stats(&ds, &assign).unwrap();
        (ds, assign, stats)
    }

    #[test]
    fn zero_lr_leaves_model_unchanged() {
        let (ds, assign, stats) = quick_setup(60, 3);
        let mut model =
            FusionModel::build(Architecture::Early, Modality::Both, &ModelDims::tiny(), 5).unwrap();
        let before = model.clone();
        let config = TrainConfig { lr: 0.0, epochs: 2, batch_size: 16, ..Default::default() };
        let report = train(&mut model, &ds, &assign, &stats, &config).unwrap();
        assert_eq!(report.history.len(), 2);
        assert_eq!(model.components(), before.components());
    }

    #[test]
    fn training_is_deterministic() {
        let (ds, assign, stats) = quick_setup(80, 11);
        let run = || {
            let mut model =
                FusionModel::build(Architecture::Mmoe, Modality::Both, &ModelDims::tiny(), 5)
                    .unwrap();
            let config = TrainConfig {
                lr: 1e-3,
                epochs: 3,
                batch_size: 32,
                seed: 9,
                ..Default::default()
            };
            let report = train(&mut model, &ds, &assign, &stats, &config).unwrap();
            (model, report)
        };
        let (ma, ra) = run();
        let (mb, rb) = run();
        assert_eq!(ma, mb);
        assert_eq!(ra, rb);
    }

    #[test]
    fn loss_decreases_on_learnable_data() {
        let (ds, assign, stats) = quick_setup(200, 17);
        let mut model =
            FusionModel::build(Architecture::Early, Modality::Both, &ModelDims::tiny(), 1).unwrap();
        let config = TrainConfig {
            lr: 1e-3,
            epochs: 8,
            batch_size: 32,
            dropout: 0.0,
            seed: 2,
            ..Default::default()
        };
        let report = train(&mut model, &ds, &assign, &stats, &config).unwrap();
        let first = report.history.first().unwrap().train_loss;
        let last = report.history.last().unwrap().train_loss;
        assert!(last < first, "training loss should drop: {first} -> {last}");
        assert!(model.stats().is_some());
    }

    #[test]
    fn empty_train_split_rejected() {
        let (ds, _, stats) = quick_setup(10, 3);
        let splits = vec![Split::Val; 10];
        let assign = SplitAssignment::from_splits(splits, 0);
        let mut model =
            FusionModel::build(Architecture::Early, Modality::Both, &ModelDims::tiny(), 5).unwrap();
        assert!(matches!(
            train(&mut model, &ds, &assign, &stats, &TrainConfig::default()),
            Err(FusionError::EmptySplit("train"))
        ));
    }

    #[test]
    fn history_length_matches_epochs() {
        let (ds, assign, stats) = quick_setup(40, 23);
        let mut model =
            FusionModel::build(Architecture::GatedLate, Modality::Both, &ModelDims::tiny(), 5)
                .unwrap();
        let config = TrainConfig { lr: 1e-4, epochs: 1, batch_size: 8, ..Default::default() };
        let report = train(&mut model, &ds, &assign, &stats, &config).unwrap();
        assert_eq!(report.history.len(), 1);
        assert_eq!(report.history[0].epoch, 1);
    }
}
