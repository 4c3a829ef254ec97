// temporary calibration driver for the end-to-end training criterion
use polyrec::dataset::*;
use polyrec::fusion::*;

fn arg<T: std::str::FromStr>(name: &str, default: T) -> T {
    std::env::var(name).ok().and_then(|v| v.parse().ok()).unwrap_or(default)
}

fn main() {
    let n: usize = arg("N", 12441);
    let shared: f64 = arg("SHARED", 0.95);
    let lr: f64 = arg("LR", 1e-3);
    let epochs: usize = arg("EPOCHS", 100);
    let patience: u32 = arg("PATIENCE", 5);
    let seed: u64 = arg("SEED", 27);
    let dropout: f64 = arg("DROPOUT", 0.4);

    let spec = SyntheticSpec {
        n_records: n,
        noise_std: noise_std_for_r2(0.95),
        missing_rate: [0.0, 0.708, 0.728],
        ground_truth_weights: GroundTruth::random_correlated(seed, shared),
        seed,
    };
    let t0 = std::time::Instant::now();
    let ds = generate_synthetic(&spec).unwrap();
    let assign = split_dataset(&ds, (0.8, 0.1, 0.1), seed + 1).unwrap();
    let stats = compute_task_stats(&ds, &assign).unwrap();
    let mut model =
        FusionModel::build(Architecture::Mmoe, Modality::Both, &ModelDims::default(), seed + 2)
            .unwrap();
    let config = TrainConfig {
        lr,
        epochs,
        dropout,
        seed: seed + 3,
        scheduler_patience: patience,
        ..TrainConfig::default()
    };
    let report = train(&mut model, &ds, &assign, &stats, &config).unwrap();
    let r2v = evaluate_r2(&model, &ds, &assign, Split::Val).unwrap();
    let r2t = evaluate_r2(&model, &ds, &assign, Split::Test).unwrap();
    println!(
        "n={n} shared={shared} lr={lr} epochs={epochs} patience={patience} seed={seed} dropout={dropout}"
    );
    println!(
        "best val {:.4} @ {} | val R2 {:.4}/{:.4}/{:.4} | test R2 {:.4}/{:.4}/{:.4} | {:.1?}",
        report.best_val_loss,
        report.best_epoch,
        r2v[0].unwrap(),
        r2v[1].unwrap(),
        r2v[2].unwrap(),
        r2t[0].unwrap(),
        r2t[1].unwrap(),
        r2t[2].unwrap(),
        t0.elapsed()
    );
    for e in report.history.iter().step_by(10) {
        println!("  ep {:3} train {:.4} val {:.4} lr {:.2e}", e.epoch, e.train_loss, e.val_loss, e.lr);
    }
}
