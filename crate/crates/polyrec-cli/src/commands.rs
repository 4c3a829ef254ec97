//! Command implementations. Each command is a thin wrapper over library
//! calls plus workdir bookkeeping.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};

use polyrec::dataset::{
    attach_embeddings, compute_task_stats, generate_synthetic, label_counts_in_split,
    load_manifest, split_dataset, write_embeddings_binary, write_manifest, Dataset, GroundTruth,
    Property, Split, SplitAssignment, SyntheticSpec, TaskStats, GRAPH_DIM, LANG_DIM,
};
use polyrec::fusion::checkpoint::{load_model, save_model};
use polyrec::fusion::metrics::{write_fused_csv, write_r2_csv};
use polyrec::fusion::{evaluate_r2, train, FusionModel, ModelDims};
use polyrec::ranking::{recommend, write_recommendation_csv, write_recommendation_json};
use polyrec::retrieval::{write_hits_csv, Query, RetrievalIndex};

use crate::config::{RunConfig, SPLIT_RATIOS};

/// Generate a synthetic corpus and write it in the standard file formats.
pub fn cmd_synth(
    config: &RunConfig,
    n: usize,
    noise: f64,
    missing: [f64; 3],
    shared_frac: f64,
    out: Option<PathBuf>,
) -> Result<()> {
    let out_dir = out.unwrap_or_else(|| config.synth_dir());
    std::fs::create_dir_all(&out_dir)?;
    let ground_truth = GroundTruth::random_correlated(config.synth_seed(), shared_frac);
    let spec = SyntheticSpec {
        n_records: n,
        noise_std: noise,
        missing_rate: missing,
        ground_truth_weights: ground_truth,
        seed: config.synth_seed(),
    };
    let dataset = generate_synthetic(&spec)?;

    write_manifest(out_dir.join("manifest.jsonl"), &dataset)?;
    let ids: Vec<String> = dataset.records().iter().map(|r| r.id.clone()).collect();
    write_embeddings_binary(
        out_dir.join("lang.emb"),
        &ids,
        LANG_DIM,
        dataset.records().iter().map(|r| r.lang_emb.as_ref().expect("synthetic always attached")),
    )?;
    write_embeddings_binary(
        out_dir.join("graph.emb"),
        &ids,
        GRAPH_DIM,
        dataset.records().iter().map(|r| r.graph_emb.as_ref().expect("synthetic always attached")),
    )?;
    spec.ground_truth_weights.write_csv(out_dir.join("weights.csv"))?;

    let counts = dataset.label_counts();
    println!(
        "synth: wrote {} records to {} (labels tg={} tm={} eg={})",
        dataset.len(),
        out_dir.display(),
        counts[0],
        counts[1],
        counts[2]
    );
    Ok(())
}

/// Validate and persist the dataset bundle: manifest, embeddings, split,
/// standardization statistics.
pub fn cmd_ingest(config: &RunConfig) -> Result<()> {
    let manifest = config
        .manifest
        .as_ref()
        .context("no manifest path configured (set [paths].manifest or --manifest)")?;
    let lang = config
        .lang_embeddings
        .as_ref()
        .context("no language embedding path configured")?;
    let graph = config
        .graph_embeddings
        .as_ref()
        .context("no graph embedding path configured")?;

    let dataset = load_manifest(manifest)
        .with_context(|| format!("loading manifest `{}`", manifest.display()))?;
    let dataset = attach_embeddings(dataset, lang, graph)?;
    let assignment = split_dataset(&dataset, SPLIT_RATIOS, config.split_seed())?;
    let stats = compute_task_stats(&dataset, &assignment)?;

    let dir = config.dataset_dir();
    std::fs::create_dir_all(&dir)?;
    write_manifest(dir.join("manifest.jsonl"), &dataset)?;
    let ids: Vec<String> = dataset.records().iter().map(|r| r.id.clone()).collect();
    write_embeddings_binary(
        dir.join("lang.emb"),
        &ids,
        LANG_DIM,
        dataset.records().iter().map(|r| r.lang_emb.as_ref().expect("attached above")),
    )?;
    write_embeddings_binary(
        dir.join("graph.emb"),
        &ids,
        GRAPH_DIM,
        dataset.records().iter().map(|r| r.graph_emb.as_ref().expect("attached above")),
    )?;
    assignment.write_csv(dir.join("split.csv"), &dataset)?;
    stats.save_json(dir.join("stats.json"))?;

    let counts = dataset.label_counts();
    let (n_train, n_val, n_test) = assignment.counts();
    println!("ingest: {} records", dataset.len());
    println!("  labels: tg={} tm={} eg={}", counts[0], counts[1], counts[2]);
    println!("  splits: train={n_train} val={n_val} test={n_test} (seed {})", config.split_seed());
    println!("  bundle: {}", dir.display());
    Ok(())
}

/// Load the persisted bundle written by [`cmd_ingest`].
pub fn load_bundle(config: &RunConfig) -> Result<(Dataset, SplitAssignment, TaskStats)> {
    let dir = config.dataset_dir();
    if !dir.join("manifest.jsonl").exists() {
        bail!("no ingested bundle under `{}` (run `ingest` first)", dir.display());
    }
    let dataset = load_manifest(dir.join("manifest.jsonl"))?;
    let dataset = attach_embeddings(dataset, dir.join("lang.emb"), dir.join("graph.emb"))?;
    let assignment =
        SplitAssignment::read_csv(dir.join("split.csv"), &dataset, config.split_seed())?;
    let stats = TaskStats::load_json(dir.join("stats.json"))?;
    Ok((dataset, assignment, stats))
}

/// Train the configured architecture and write checkpoint + history +
/// validation metrics.
pub fn cmd_train(config: &RunConfig) -> Result<()> {
    let (dataset, assignment, stats) = load_bundle(config)?;
    let dims = ModelDims::default();
    let mut model = FusionModel::build(config.arch, config.modality, &dims, config.init_seed())?;
    let report = train(&mut model, &dataset, &assignment, &stats, &config.train)?;

    let dir = config.models_dir();
    std::fs::create_dir_all(&dir)?;
    let ckpt = dir.join(format!("{}.ckpt", config.arch.name()));
    save_model(&model, &ckpt)?;
    report.write_history_csv(dir.join(format!("{}_history.csv", config.arch.name())))?;

    let r2 = evaluate_r2(&model, &dataset, &assignment, Split::Val)?;
    let val_counts = label_counts_in_split(&dataset, &assignment, Split::Val);
    write_r2_csv(dir.join(format!("{}_metrics.csv", config.arch.name())), &r2, &val_counts)?;

    println!(
        "train: {} ({} modality), {} epochs, best val loss {:.6} at epoch {}",
        config.arch.name(),
        config.modality.name(),
        report.history.len(),
        report.best_val_loss,
        report.best_epoch
    );
    print_r2_table("val", &r2, &val_counts);
    println!("  checkpoint: {}", ckpt.display());
    Ok(())
}

/// Evaluate a checkpoint on one split and emit per-task R2.
pub fn cmd_eval(config: &RunConfig, checkpoint: &Path, split: Split) -> Result<()> {
    let (dataset, assignment, _) = load_bundle(config)?;
    let model = load_model(checkpoint)?;
    let r2 = evaluate_r2(&model, &dataset, &assignment, split)?;
    let counts = label_counts_in_split(&dataset, &assignment, split);
    let dir = config.exports_dir();
    std::fs::create_dir_all(&dir)?;
    let out = dir.join(format!("metrics_{}.csv", split.name()));
    write_r2_csv(&out, &r2, &counts)?;
    print_r2_table(split.name(), &r2, &counts);
    println!("  written: {}", out.display());
    Ok(())
}

/// Two-stage recommendation for one query id.
pub fn cmd_recommend(config: &RunConfig, checkpoint: &Path, query_id: &str) -> Result<()> {
    let (dataset, _, _) = load_bundle(config)?;
    let model = load_model(checkpoint)?;
    let index = RetrievalIndex::build(&dataset)?;
    let rec = recommend(
        &index,
        &model,
        &dataset,
        query_id,
        config.k_retrieve,
        config.k_final,
        config.properties,
    )?;

    let dir = config.exports_dir();
    std::fs::create_dir_all(&dir)?;
    let hits = index.retrieve(Query::Id(query_id), config.k_retrieve)?;
    write_hits_csv(dir.join(format!("retrieval_{query_id}.csv")), &hits)?;
    let csv_path = dir.join(format!("recommend_{query_id}.csv"));
    let json_path = dir.join(format!("recommend_{query_id}.json"));
    write_recommendation_csv(&csv_path, &rec)?;
    write_recommendation_json(&json_path, &rec)?;

    println!(
        "recommend: query {query_id} -> retrieved {}, ranked {}",
        config.k_retrieve,
        rec.candidates.len()
    );
    let q = rec.query_predictions;
    println!("  query predictions: tg={:.2}K tm={:.2}K eg={:.4}eV", q[0], q[1], q[2]);
    println!("  {:<4} {:<14} {:>10} {:>10} {:>10}", "rank", "id", "similarity", "tapd", "relevance");
    for (i, c) in rec.candidates.iter().take(10).enumerate() {
        println!(
            "  {:<4} {:<14} {:>10.6} {:>10.4} {:>10.4}",
            i + 1,
            c.id,
            c.similarity,
            c.tapd,
            c.relevance
        );
    }
    for d in &rec.dropped {
        eprintln!("  dropped {}: {}", d.id, d.reason);
    }
    println!("  written: {} and {}", csv_path.display(), json_path.display());
    Ok(())
}

/// Export modality-selected embeddings plus predictions for external tools.
pub fn cmd_export(config: &RunConfig, checkpoint: &Path) -> Result<()> {
    let (dataset, _, _) = load_bundle(config)?;
    let model = load_model(checkpoint)?;
    let dir = config.exports_dir();
    std::fs::create_dir_all(&dir)?;
    let out = dir.join("embeddings.csv");
    write_fused_csv(&out, &dataset, &model)?;
    println!(
        "export: {} rows x {} embedding dims -> {}",
        dataset.len(),
        model.modality().input_dim(),
        out.display()
    );
    Ok(())
}

fn print_r2_table(split: &str, r2: &[Option<f64>; 3], counts: &[usize; 3]) {
    println!("  {split} R2:");
    for (k, prop) in Property::ALL.iter().enumerate() {
        match r2[k] {
            Some(v) => println!("    {:<3} {:>8.4}  ({} labels)", prop.name(), v, counts[k]),
            None => println!("    {:<3} {:>8}  ({} labels)", prop.name(), "undef", counts[k]),
        }
    }
}

/// Default checkpoint path for the configured architecture.
pub fn default_checkpoint(config: &RunConfig) -> PathBuf {
    config.models_dir().join(format!("{}.ckpt", config.arch.name()))
}
