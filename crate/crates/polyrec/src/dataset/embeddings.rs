//! Embedding file I/O and attachment.
//!
//! Primary format is binary: header `PREC` magic, version, count, dim,
//! followed by `count * dim` little-endian `f32` values row-major, with an
//! `.idx` sidecar listing one record id per line in row order. A CSV with
//! header `id,v0..v{d-1}` is accepted as a fallback; the reader sniffs the
//! magic bytes to pick the parser.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{Dataset, DatasetError, GRAPH_DIM, LANG_DIM};

const EMBEDDING_MAGIC: &[u8; 4] = b"PREC";
const EMBEDDING_VERSION: u32 = 1;

/// Embeddings for a set of ids; `data` is row-major `ids.len() x dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingFile {
    pub ids: Vec<String>,
    pub dim: usize,
    pub data: Vec<f64>,
}

impl EmbeddingFile {
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }
}

fn bad(path: &Path, message: impl Into<String>) -> DatasetError {
    DatasetError::BadEmbeddingFile { path: path.display().to_string(), message: message.into() }
}

/// Read an embedding file, sniffing binary vs CSV by the magic bytes.
pub fn read_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingFile, DatasetError> {
    let path = path.as_ref();
    let mut probe = [0u8; 4];
    let n = File::open(path)?.read(&mut probe)?;
    if n == 4 && &probe == EMBEDDING_MAGIC {
        read_binary(path)
    } else {
        read_csv(path)
    }
}

fn read_binary(path: &Path) -> Result<EmbeddingFile, DatasetError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != EMBEDDING_MAGIC {
        return Err(bad(path, "missing PREC magic"));
    }
    let mut buf4 = [0u8; 4];
    r.read_exact(&mut buf4)?;
    let version = u32::from_le_bytes(buf4);
    if version != EMBEDDING_VERSION {
        return Err(bad(path, format!("unsupported version {version}")));
    }
    let mut buf8 = [0u8; 8];
    r.read_exact(&mut buf8)?;
    let count = u64::from_le_bytes(buf8) as usize;
    r.read_exact(&mut buf4)?;
    let dim = u32::from_le_bytes(buf4) as usize;
    if dim == 0 {
        return Err(bad(path, "zero dimension"));
    }

    let mut raw = vec![0u8; count * dim * 4];
    r.read_exact(&mut raw)?;
    let data: Vec<f64> = raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4-byte chunk")) as f64)
        .collect();

    let idx_path = sidecar_path(path);
    let ids = read_id_sidecar(&idx_path)?;
    if ids.len() != count {
        return Err(bad(
            path,
            format!("sidecar lists {} ids but header says {count}", ids.len()),
        ));
    }
    Ok(EmbeddingFile { ids, dim, data })
}

fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut os = path.as_os_str().to_owned();
    os.push(".idx");
    os.into()
}

fn read_id_sidecar(path: &Path) -> Result<Vec<String>, DatasetError> {
    let r = BufReader::new(File::open(path)?);
    let mut ids = Vec::new();
    for line in r.lines() {
        let line = line?;
        if !line.is_empty() {
            ids.push(line);
        }
    }
    Ok(ids)
}

fn read_csv(path: &Path) -> Result<EmbeddingFile, DatasetError> {
    let r = BufReader::new(File::open(path)?);
    let mut lines = r.lines();
    let header = lines.next().ok_or_else(|| bad(path, "empty file"))??;
    let cols: Vec<&str> = header.split(',').collect();
    if cols.first() != Some(&"id") || cols.len() < 2 {
        return Err(bad(path, "expected header `id,v0,..`"));
    }
    let dim = cols.len() - 1;
    let mut ids = Vec::new();
    let mut data = Vec::new();
    for (lineno, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split(',');
        let id = fields
            .next()
            .ok_or_else(|| bad(path, format!("row {}: missing id", lineno + 2)))?;
        ids.push(id.to_string());
        let mut parsed = 0;
        for field in fields {
            let v: f64 = field.trim().parse().map_err(|_| {
                bad(path, format!("row {}: bad float `{field}`", lineno + 2))
            })?;
            data.push(v);
            parsed += 1;
        }
        if parsed != dim {
            return Err(bad(
                path,
                format!("row {}: expected {dim} values, got {parsed}", lineno + 2),
            ));
        }
    }
    Ok(EmbeddingFile { ids, dim, data })
}

/// Write the binary format plus its id sidecar. Values are stored as `f32`.
pub fn write_embeddings_binary(
    path: impl AsRef<Path>,
    ids: &[String],
    dim: usize,
    rows: impl Iterator<Item = impl AsRef<[f64]>>,
) -> Result<(), DatasetError> {
    let path = path.as_ref();
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(EMBEDDING_MAGIC)?;
    w.write_all(&EMBEDDING_VERSION.to_le_bytes())?;
    w.write_all(&(ids.len() as u64).to_le_bytes())?;
    w.write_all(&(dim as u32).to_le_bytes())?;
    let mut written = 0usize;
    for row in rows {
        let row = row.as_ref();
        assert_eq!(row.len(), dim, "row length must equal dim");
        for v in row {
            w.write_all(&(*v as f32).to_le_bytes())?;
        }
        written += 1;
    }
    assert_eq!(written, ids.len(), "row count must equal id count");
    w.flush()?;

    let mut idx = BufWriter::new(File::create(sidecar_path(path))?);
    for id in ids {
        writeln!(idx, "{id}")?;
    }
    idx.flush()?;
    Ok(())
}

/// Write the CSV fallback format (`id,v0..v{d-1}`).
pub fn write_embeddings_csv(
    path: impl AsRef<Path>,
    ids: &[String],
    dim: usize,
    rows: impl Iterator<Item = impl AsRef<[f64]>>,
) -> Result<(), DatasetError> {
    let mut w = BufWriter::new(File::create(path.as_ref())?);
    write!(w, "id")?;
    for d in 0..dim {
        write!(w, ",v{d}")?;
    }
    writeln!(w)?;
    for (id, row) in ids.iter().zip(rows) {
        let row = row.as_ref();
        assert_eq!(row.len(), dim);
        write!(w, "{id}")?;
        for v in row {
            write!(w, ",{v}")?;
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

/// Attach language and graph embeddings to every record, matching by id.
///
/// The files may contain extra ids; every manifest id must be covered, the
/// dimensions must be exactly 600 (language) and 512 (graph), and every
/// attached entry must be finite.
pub fn attach_embeddings(
    mut dataset: Dataset,
    lang_path: impl AsRef<Path>,
    graph_path: impl AsRef<Path>,
) -> Result<Dataset, DatasetError> {
    let lang = read_embeddings(lang_path.as_ref())?;
    let graph = read_embeddings(graph_path.as_ref())?;
    if lang.dim != LANG_DIM {
        return Err(DatasetError::EmbeddingDim {
            modality: "language",
            expected: LANG_DIM,
            actual: lang.dim,
        });
    }
    if graph.dim != GRAPH_DIM {
        return Err(DatasetError::EmbeddingDim {
            modality: "graph",
            expected: GRAPH_DIM,
            actual: graph.dim,
        });
    }

    let lang_rows: std::collections::HashMap<&str, usize> =
        lang.ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
    let graph_rows: std::collections::HashMap<&str, usize> =
        graph.ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();

    let lang_path_str = lang_path.as_ref().display().to_string();
    let graph_path_str = graph_path.as_ref().display().to_string();
    for rec in dataset.records_mut() {
        let li = *lang_rows.get(rec.id.as_str()).ok_or_else(|| DatasetError::MissingEmbedding {
            path: lang_path_str.clone(),
            id: rec.id.clone(),
        })?;
        let gi = *graph_rows.get(rec.id.as_str()).ok_or_else(|| {
            DatasetError::MissingEmbedding { path: graph_path_str.clone(), id: rec.id.clone() }
        })?;
        let lrow = lang.row(li);
        let grow = graph.row(gi);
        if lrow.iter().any(|v| !v.is_finite()) {
            return Err(DatasetError::NonFiniteEmbedding { id: rec.id.clone(), modality: "language" });
        }
        if grow.iter().any(|v| !v.is_finite()) {
            return Err(DatasetError::NonFiniteEmbedding { id: rec.id.clone(), modality: "graph" });
        }
        rec.lang_emb = Some(lrow.to_vec());
        rec.graph_emb = Some(grow.to_vec());
    }
    Ok(dataset)
}
