//! Binary serialization primitives for network weights.
//!
//! All multi-byte values are little-endian; matrices are row-major `f64`.
//! These building blocks are composed into full model checkpoint files by
//! the fusion layer, which prepends the `PWTS` header and a descriptor.

use std::io::{Read, Write};

use super::matrix::Matrix;
use super::mlp::{Layer, Mlp};
use super::NnError;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"PWTS";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn write_u32<W: Write>(w: &mut W, v: u32) -> Result<(), NnError> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

pub fn read_u32<R: Read>(r: &mut R) -> Result<u32, NnError> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

pub fn write_u64<W: Write>(w: &mut W, v: u64) -> Result<(), NnError> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

pub fn read_u64<R: Read>(r: &mut R) -> Result<u64, NnError> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

pub fn write_f64_slice<W: Write>(w: &mut W, vals: &[f64]) -> Result<(), NnError> {
    let mut buf = Vec::with_capacity(vals.len() * 8);
    for v in vals {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_f64_vec<R: Read>(r: &mut R, len: usize) -> Result<Vec<f64>, NnError> {
    let mut buf = vec![0u8; len * 8];
    r.read_exact(&mut buf)?;
    Ok(buf
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect())
}

fn write_matrix<W: Write>(w: &mut W, m: &Matrix) -> Result<(), NnError> {
    write_u32(w, m.rows() as u32)?;
    write_u32(w, m.cols() as u32)?;
    write_f64_slice(w, m.data())
}

fn read_matrix<R: Read>(r: &mut R) -> Result<Matrix, NnError> {
    let rows = read_u32(r)? as usize;
    let cols = read_u32(r)? as usize;
    let data = read_f64_vec(r, rows * cols)?;
    Ok(Matrix::from_vec(rows, cols, data))
}

/// Serialize one MLP: layer count, then per layer the weight matrix and bias.
pub fn write_mlp<W: Write>(w: &mut W, mlp: &Mlp) -> Result<(), NnError> {
    write_u32(w, mlp.layers().len() as u32)?;
    for layer in mlp.layers() {
        write_matrix(w, &layer.weight)?;
        write_u32(w, layer.bias.len() as u32)?;
        write_f64_slice(w, &layer.bias)?;
    }
    Ok(())
}

pub fn read_mlp<R: Read>(r: &mut R) -> Result<Mlp, NnError> {
    let n_layers = read_u32(r)? as usize;
    let mut layers = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        let weight = read_matrix(r)?;
        let bias_len = read_u32(r)? as usize;
        if bias_len != weight.rows() {
            return Err(NnError::Corrupt(format!(
                "bias length {bias_len} does not match {} output rows",
                weight.rows()
            )));
        }
        let bias = read_f64_vec(r, bias_len)?;
        layers.push(Layer { weight, bias });
    }
    Mlp::from_layers(layers)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mlp_round_trip_is_exact() {
        let mlp = Mlp::init_seeded(&[9, 6, 4, 2], 77).unwrap();
        let mut buf = Vec::new();
        write_mlp(&mut buf, &mlp).unwrap();
        let back = read_mlp(&mut buf.as_slice()).unwrap();
        assert_eq!(mlp, back);
    }

    #[test]
    fn truncated_stream_errors() {
        let mlp = Mlp::init_seeded(&[3, 2], 1).unwrap();
        let mut buf = Vec::new();
        write_mlp(&mut buf, &mlp).unwrap();
        buf.truncate(buf.len() - 5);
        assert!(read_mlp(&mut buf.as_slice()).is_err());
    }
}
