//! Model checkpoint file: `PWTS` magic, version, a JSON descriptor block
//! (architecture tag, modality, expert count, component layer dims, task
//! stats), then every component MLP's matrices as row-major little-endian
//! `f64`. Save/load round-trips are bit-exact.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::TaskStats;
use crate::nn::checkpoint::{
    read_mlp, read_u32, write_mlp, write_u32, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};

use super::{Architecture, Components, FusionError, FusionModel, Modality};

#[derive(Debug, Serialize, Deserialize)]
struct Descriptor {
    architecture: String,
    modality: String,
    n_experts: usize,
    components: Vec<ComponentDesc>,
    task_stats: Option<TaskStats>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ComponentDesc {
    name: String,
    dims: Vec<usize>,
}

/// Serialize the model (weights, architecture descriptor, task stats).
pub fn save_model(model: &FusionModel, path: impl AsRef<Path>) -> Result<(), FusionError> {
    let mlps = model.mlps();
    let descriptor = Descriptor {
        architecture: model.architecture().name().to_string(),
        modality: model.modality().name().to_string(),
        n_experts: model.n_experts(),
        components: model
            .component_names()
            .into_iter()
            .zip(&mlps)
            .map(|(name, mlp)| ComponentDesc { name, dims: mlp.dims() })
            .collect(),
        task_stats: model.stats().cloned(),
    };
    let desc_bytes = serde_json::to_vec(&descriptor)
        .map_err(|e| FusionError::Checkpoint(format!("descriptor encode: {e}")))?;

    let mut w = BufWriter::new(File::create(path.as_ref())?);
    w.write_all(CHECKPOINT_MAGIC)?;
    write_u32(&mut w, CHECKPOINT_VERSION).map_err(FusionError::Nn)?;
    write_u32(&mut w, desc_bytes.len() as u32).map_err(FusionError::Nn)?;
    w.write_all(&desc_bytes)?;
    for mlp in mlps {
        write_mlp(&mut w, mlp).map_err(FusionError::Nn)?;
    }
    w.flush()?;
    Ok(())
}

/// Load a model saved by [`save_model`], validating the descriptor against
/// the stored weights.
pub fn load_model(path: impl AsRef<Path>) -> Result<FusionModel, FusionError> {
    let mut r = BufReader::new(File::open(path.as_ref())?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(FusionError::Checkpoint("missing PWTS magic".into()));
    }
    let version = read_u32(&mut r).map_err(FusionError::Nn)?;
    if version != CHECKPOINT_VERSION {
        return Err(FusionError::Checkpoint(format!("unsupported version {version}")));
    }
    let desc_len = read_u32(&mut r).map_err(FusionError::Nn)? as usize;
    let mut desc_bytes = vec![0u8; desc_len];
    r.read_exact(&mut desc_bytes)?;
    let descriptor: Descriptor = serde_json::from_slice(&desc_bytes)
        .map_err(|e| FusionError::Checkpoint(format!("descriptor decode: {e}")))?;

    let architecture = Architecture::parse(&descriptor.architecture).ok_or_else(|| {
        FusionError::Checkpoint(format!("unknown architecture `{}`", descriptor.architecture))
    })?;
    let modality = Modality::parse(&descriptor.modality).ok_or_else(|| {
        FusionError::Checkpoint(format!("unknown modality `{}`", descriptor.modality))
    })?;

    let mut mlps = Vec::with_capacity(descriptor.components.len());
    for comp in &descriptor.components {
        let mlp = read_mlp(&mut r).map_err(FusionError::Nn)?;
        if mlp.dims() != comp.dims {
            return Err(FusionError::Checkpoint(format!(
                "component `{}`: descriptor dims {:?} but stored weights have {:?}",
                comp.name,
                comp.dims,
                mlp.dims()
            )));
        }
        mlps.push(mlp);
    }

    let components = match architecture {
        Architecture::Early => {
            if mlps.len() != 1 {
                return Err(FusionError::Checkpoint(format!(
                    "early fusion expects 1 component, found {}",
                    mlps.len()
                )));
            }
            Components::Early { trunk: mlps.remove(0) }
        }
        Architecture::GatedLate => {
            if mlps.len() != 3 {
                return Err(FusionError::Checkpoint(format!(
                    "gated late fusion expects 3 components, found {}",
                    mlps.len()
                )));
            }
            let gate = mlps.pop().expect("len checked");
            let expert_graph = mlps.pop().expect("len checked");
            let expert_lang = mlps.pop().expect("len checked");
            Components::GatedLate { expert_lang, expert_graph, gate }
        }
        Architecture::Mmoe => {
            let n = descriptor.n_experts;
            if n == 0 || mlps.len() != n + 2 * crate::dataset::NUM_TASKS {
                return Err(FusionError::Checkpoint(format!(
                    "mmoe with {n} experts expects {} components, found {}",
                    n + 2 * crate::dataset::NUM_TASKS,
                    mlps.len()
                )));
            }
            let towers = mlps.split_off(n + crate::dataset::NUM_TASKS);
            let gates = mlps.split_off(n);
            Components::Mmoe { experts: mlps, gates, towers }
        }
    };

    let mut model = FusionModel {
        architecture,
        modality,
        components,
        stats: None,
    };
    if let Some(stats) = descriptor.task_stats {
        model.set_stats(stats);
    }
    Ok(model)
}
