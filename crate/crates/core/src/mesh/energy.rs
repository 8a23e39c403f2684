//! Surface regularizers used by the carving objective.
//!
//! * Laplacian energy: `sum_i |p_i - mean_{j in ring(i)} p_j|^2`.
//! * Normal consistency: `sum over edge-adjacent face pairs of 1 - cos(angle
//!   between the face normals)`.
//!
//! Both return analytic gradients with respect to every vertex position.

use super::{cross_backward, AdjacencyIndex};
use crate::Vec3;

#[derive(Debug, Clone, PartialEq)]
pub struct EnergyGradient {
    pub value: f64,
    pub gradient: Vec<Vec3>,
    /// Vertices (Laplacian) or face pairs (normal consistency) that were
    /// skipped because they are degenerate.
    pub flagged: Vec<usize>,
}

/// Per-vertex umbrella vectors `p_i - mean(neighbors)`; zero for isolated vertices.
pub fn umbrella_vectors(positions: &[Vec3], adjacency: &AdjacencyIndex) -> Vec<Vec3> {
    positions
        .iter()
        .zip(&adjacency.neighbors)
        .map(|(p, ring)| {
            if ring.is_empty() {
                Vec3::zeros()
            } else {
                p - ring.iter().map(|&j| positions[j]).sum::<Vec3>() / ring.len() as f64
            }
        })
        .collect()
}

pub fn laplacian_energy(positions: &[Vec3], adjacency: &AdjacencyIndex) -> EnergyGradient {
    let umbrella = umbrella_vectors(positions, adjacency);
    let value = umbrella.iter().map(|u| u.norm_squared()).sum();
    let mut gradient: Vec<Vec3> = umbrella.iter().map(|u| u * 2.0).collect();
    let mut flagged = Vec::new();
    for (i, ring) in adjacency.neighbors.iter().enumerate() {
        if ring.is_empty() {
            flagged.push(i);
            continue;
        }
        let share = umbrella[i] * (2.0 / ring.len() as f64);
        for &j in ring {
            gradient[j] -= share;
        }
    }
    EnergyGradient {
        value,
        gradient,
        flagged,
    }
}

pub fn normal_consistency_energy(
    positions: &[Vec3],
    faces: &[[usize; 3]],
    pairs: &[(usize, usize)],
) -> EnergyGradient {
    let cross: Vec<Vec3> = faces
        .iter()
        .map(|&[a, b, c]| (positions[b] - positions[a]).cross(&(positions[c] - positions[a])))
        .collect();
    let mut value = 0.0;
    let mut face_grad = vec![Vec3::zeros(); faces.len()];
    let mut flagged = Vec::new();
    for (k, &(f, g)) in pairs.iter().enumerate() {
        let (nf, ng) = (cross[f], cross[g]);
        let (lf, lg) = (nf.norm(), ng.norm());
        if lf <= f64::MIN_POSITIVE || lg <= f64::MIN_POSITIVE {
            flagged.push(k);
            continue;
        }
        let (uf, ug) = (nf / lf, ng / lg);
        let cos = uf.dot(&ug);
        value += 1.0 - cos;
        // d(1 - cos)/dN_f = -(u_g - cos u_f) / |N_f|
        face_grad[f] -= (ug - uf * cos) / lf;
        face_grad[g] -= (uf - ug * cos) / lg;
    }
    let mut gradient = vec![Vec3::zeros(); positions.len()];
    for (fi, w) in face_grad.iter().enumerate() {
        if *w != Vec3::zeros() {
            cross_backward(positions, faces[fi], w, &mut gradient);
        }
    }
    EnergyGradient {
        value,
        gradient,
        flagged,
    }
}
