//! Binary grid checkpoints.
//!
//! Layout (little-endian): magic `SDFG`, `r: u32`, `tau: f32`, then `r^3`
//! distances as `f32`, then `r^3` offsets as three `f32` each, all in
//! k-fastest lattice order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::SdfGrid;
use crate::error::{Error, Result};
use crate::Vec3;

const MAGIC: &[u8; 4] = b"SDFG";

pub fn write_checkpoint(grid: &SdfGrid, path: impl AsRef<Path>) -> Result<()> {
    let x = grid.require_distances()?;
    let mut out = BufWriter::new(File::create(path)?);
    out.write_all(MAGIC)?;
    out.write_all(&(grid.resolution() as u32).to_le_bytes())?;
    out.write_all(&(grid.tau() as f32).to_le_bytes())?;
    for &d in x {
        out.write_all(&(d as f32).to_le_bytes())?;
    }
    for o in grid.offsets() {
        for c in o.iter() {
            out.write_all(&(*c as f32).to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<SdfGrid> {
    let mut input = BufReader::new(File::open(path)?);
    let bad = |m: &str| Error::Format {
        kind: "SDFG",
        message: m.into(),
    };
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(bad("wrong magic"));
    }
    let mut word = [0u8; 4];
    input.read_exact(&mut word)?;
    let r = u32::from_le_bytes(word) as usize;
    input.read_exact(&mut word)?;
    let tau = f32::from_le_bytes(word) as f64;
    let n = r.checked_pow(3).ok_or_else(|| bad("resolution overflow"))?;
    let mut body = Vec::new();
    input.read_to_end(&mut body)?;
    if body.len() != n * 16 {
        return Err(bad(&format!(
            "expected {} payload bytes for r={r}, found {}",
            n * 16,
            body.len()
        )));
    }
    let floats: Vec<f64> = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    let mut grid = SdfGrid::new(r, tau)?.with_distances(floats[..n].to_vec())?;
    for (o, c) in grid.offsets_mut().iter_mut().zip(floats[n..].chunks_exact(3)) {
        *o = Vec3::new(c[0], c[1], c[2]);
    }
    Ok(grid)
}
