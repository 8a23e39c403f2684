use super::{AdjacencyIndex, Mesh};
use crate::error::{Error, Result};
use crate::Vec3;

/// Pass-band parameters for [`taubin_smooth`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TaubinParams {
    pub lambda: f64,
    pub mu: f64,
}

impl Default for TaubinParams {
    fn default() -> Self {
        TaubinParams {
            lambda: 0.5,
            mu: -0.53,
        }
    }
}

impl TaubinParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0) || !(self.mu < 0.0) || !(self.mu.abs() > self.lambda) {
            return Err(Error::invalid(format!(
                "taubin requires lambda > 0, mu < 0 and |mu| > lambda (got {}, {})",
                self.lambda, self.mu
            )));
        }
        Ok(())
    }
}

/// One umbrella step `p_i += factor * (mean(neighbors) - p_i)`.
/// Vertices without neighbors stay put.
fn umbrella_step(positions: &mut Vec<Vec3>, adjacency: &AdjacencyIndex, factor: f64) {
    let next: Vec<Vec3> = positions
        .iter()
        .zip(&adjacency.neighbors)
        .map(|(p, ring)| {
            if ring.is_empty() {
                return *p;
            }
            let centroid =
                ring.iter().map(|&j| positions[j]).sum::<Vec3>() / ring.len() as f64;
            p + (centroid - p) * factor
        })
        .collect();
    *positions = next;
}

/// Alternating shrink (`lambda`) and inflate (`mu`) umbrella steps; each
/// iteration is one pair. Connectivity is untouched.
pub fn taubin_smooth(mesh: &Mesh, iterations: usize, lambda: f64, mu: f64) -> Result<Mesh> {
    TaubinParams { lambda, mu }.validate()?;
    let adjacency = AdjacencyIndex::build(mesh);
    let mut positions = mesh.vertices.clone();
    for _ in 0..iterations {
        umbrella_step(&mut positions, &adjacency, lambda);
        umbrella_step(&mut positions, &adjacency, mu);
    }
    Ok(mesh.with_positions(positions))
}

/// Plain Laplacian smoothing (shrinks).
pub fn laplacian_smooth(mesh: &Mesh, iterations: usize, lambda: f64) -> Result<Mesh> {
    if !(lambda > 0.0 && lambda <= 1.0) {
        return Err(Error::invalid("laplacian lambda must lie in (0, 1]"));
    }
    let adjacency = AdjacencyIndex::build(mesh);
    let mut positions = mesh.vertices.clone();
    for _ in 0..iterations {
        umbrella_step(&mut positions, &adjacency, lambda);
    }
    Ok(mesh.with_positions(positions))
}

/// Coarse/fine training pair: the coarse mesh is the fine one with its
/// high-frequency detail smoothed away by Taubin filtering.
pub fn make_coarse_pair(fine: &Mesh, smoothing_iterations: usize) -> Result<(Mesh, Mesh)> {
    let p = TaubinParams::default();
    let coarse = taubin_smooth(fine, smoothing_iterations, p.lambda, p.mu)?;
    let fine = fine.with_positions(fine.vertices.clone());
    Ok((coarse, fine))
}
