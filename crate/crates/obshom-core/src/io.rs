//! Field and mask files: a JSON metadata document next to a raw binary
//! value file.
//!
//! The metadata records `dim`, `shape`, `spacing`, `origin`, `topology` and
//! the value-file name. Field values are little-endian 64-bit floats in
//! row-major order; masks use the same layout with one byte per node
//! (0 or 1). All writes go through a temp file and an atomic rename.

use crate::error::{Error, Result};
use crate::grid::{CellMask, Grid, ScalarField, Topology};
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

#[derive(Debug, Serialize, Deserialize)]
struct Metadata {
    kind: String,
    dim: usize,
    shape: Vec<usize>,
    spacing: f64,
    origin: Vec<f64>,
    topology: Topology,
    values: String,
}

impl Metadata {
    fn grid(&self) -> Result<Grid> {
        if self.shape.len() != self.dim || self.origin.len() != self.dim {
            return Err(Error::Config(
                "metadata shape/origin length does not match dim".into(),
            ));
        }
        let mut shape = [1usize; 3];
        let mut origin = [0.0f64; 3];
        for a in 0..self.dim {
            shape[a] = self.shape[a];
            origin[a] = self.origin[a];
        }
        Grid::new(self.dim, shape, self.spacing, origin, self.topology)
    }

    fn from_grid(grid: &Grid, kind: &str, values: String) -> Self {
        Metadata {
            kind: kind.to_string(),
            dim: grid.dim(),
            shape: grid.shape()[..grid.dim()].to_vec(),
            spacing: grid.spacing(),
            origin: grid.origin()[..grid.dim()].to_vec(),
            topology: grid.topology(),
            values,
        }
    }
}

/// Write `bytes` to `path` atomically (temp file in the same directory,
/// then rename).
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

fn value_path(json_path: &Path, values: &str) -> PathBuf {
    json_path
        .parent()
        .map(|p| p.join(values))
        .unwrap_or_else(|| PathBuf::from(values))
}

/// Save a field as `<dir>/<name>.json` + `<dir>/<name>.bin`.
pub fn save_field(field: &ScalarField, dir: &Path, name: &str) -> Result<PathBuf> {
    let bin_name = format!("{name}.bin");
    let meta = Metadata::from_grid(&field.grid, "field", bin_name.clone());
    let mut bytes = Vec::with_capacity(field.values.len() * 8);
    for v in &field.values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    write_atomic(&dir.join(&bin_name), &bytes)?;
    let json_path = dir.join(format!("{name}.json"));
    write_atomic(&json_path, serde_json::to_string_pretty(&meta)?.as_bytes())?;
    Ok(json_path)
}

/// Save a mask as `<dir>/<name>.json` + `<dir>/<name>.bin` (u8 0/1 values).
pub fn save_mask(mask: &CellMask, dir: &Path, name: &str) -> Result<PathBuf> {
    let bin_name = format!("{name}.bin");
    let meta = Metadata::from_grid(&mask.grid, "mask", bin_name.clone());
    let bytes: Vec<u8> = mask.flags.iter().map(|f| u8::from(*f)).collect();
    write_atomic(&dir.join(&bin_name), &bytes)?;
    let json_path = dir.join(format!("{name}.json"));
    write_atomic(&json_path, serde_json::to_string_pretty(&meta)?.as_bytes())?;
    Ok(json_path)
}

/// Load a field from its metadata path.
pub fn load_field(json_path: &Path) -> Result<ScalarField> {
    let meta: Metadata = serde_json::from_str(&fs::read_to_string(json_path)?)?;
    if meta.kind != "field" {
        return Err(Error::Config(format!(
            "{} holds a {:?}, expected a field",
            json_path.display(),
            meta.kind
        )));
    }
    let grid = meta.grid()?;
    let bytes = fs::read(value_path(json_path, &meta.values))?;
    if bytes.len() != grid.node_count() * 8 {
        return Err(Error::Config(format!(
            "value file holds {} bytes, expected {}",
            bytes.len(),
            grid.node_count() * 8
        )));
    }
    let mut values = Vec::with_capacity(grid.node_count());
    for chunk in bytes.chunks_exact(8) {
        let v = f64::from_le_bytes(chunk.try_into().unwrap());
        if !v.is_finite() {
            return Err(Error::Config("field value file contains non-finite entries".into()));
        }
        values.push(v);
    }
    ScalarField::from_values(grid, values)
}

/// Load a mask from its metadata path.
pub fn load_mask(json_path: &Path) -> Result<CellMask> {
    let meta: Metadata = serde_json::from_str(&fs::read_to_string(json_path)?)?;
    if meta.kind != "mask" {
        return Err(Error::Config(format!(
            "{} holds a {:?}, expected a mask",
            json_path.display(),
            meta.kind
        )));
    }
    let grid = meta.grid()?;
    let bytes = fs::read(value_path(json_path, &meta.values))?;
    if bytes.len() != grid.node_count() {
        return Err(Error::Config(format!(
            "mask file holds {} bytes, expected {}",
            bytes.len(),
            grid.node_count()
        )));
    }
    let flags = bytes
        .iter()
        .map(|b| match b {
            0 => Ok(false),
            1 => Ok(true),
            other => Err(Error::Config(format!("mask byte {other} is not 0/1"))),
        })
        .collect::<Result<Vec<bool>>>()?;
    CellMask::from_flags(grid, flags)
}
