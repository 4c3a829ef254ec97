//! JSONL manifest reader/writer.
//!
//! One object per line with fields `id`, `smiles`, `tg`, `tm`, `eg`;
//! a JSON `null` (or absent key) marks a missing label.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Dataset, DatasetError, PolymerRecord, NUM_TASKS};

#[derive(Serialize, Deserialize)]
struct ManifestLine {
    id: String,
    smiles: String,
    #[serde(default)]
    tg: Option<f64>,
    #[serde(default)]
    tm: Option<f64>,
    #[serde(default)]
    eg: Option<f64>,
}

/// Load a manifest; records come back without embeddings, in file order.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<Dataset, DatasetError> {
    let file = File::open(path.as_ref())?;
    let reader = BufReader::new(file);
    let mut records = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: ManifestLine = serde_json::from_str(&line).map_err(|e| {
            DatasetError::Malformed { line: lineno + 1, message: e.to_string() }
        })?;
        let labels = [parsed.tg, parsed.tm, parsed.eg];
        for (k, label) in labels.iter().enumerate() {
            if let Some(v) = label {
                if !v.is_finite() {
                    return Err(DatasetError::Malformed {
                        line: lineno + 1,
                        message: format!(
                            "non-finite {} label for id `{}`",
                            super::Property::ALL[k].name(),
                            parsed.id
                        ),
                    });
                }
            }
        }
        records.push(PolymerRecord {
            id: parsed.id,
            smiles: parsed.smiles,
            lang_emb: None,
            graph_emb: None,
            labels,
        });
    }
    Dataset::new(records)
}

/// Write records as one JSON object per line, preserving order.
pub fn write_manifest(path: impl AsRef<Path>, dataset: &Dataset) -> Result<(), DatasetError> {
    let file = File::create(path.as_ref())?;
    let mut w = BufWriter::new(file);
    for rec in dataset.records() {
        debug_assert_eq!(rec.labels.len(), NUM_TASKS);
        let line = ManifestLine {
            id: rec.id.clone(),
            smiles: rec.smiles.clone(),
            tg: rec.labels[0],
            tm: rec.labels[1],
            eg: rec.labels[2],
        };
        serde_json::to_writer(&mut w, &line)
            .map_err(|e| DatasetError::Malformed { line: 0, message: e.to_string() })?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}
