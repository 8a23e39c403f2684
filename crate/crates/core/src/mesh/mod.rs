//! Indexed triangle meshes.
//!
//! A [`Mesh`] is a list of positions plus counter-clockwise (outward) index
//! triples. Vertex normals are derived data: they are never read from disk and
//! are recomputed with [`compute_vertex_normals`] whenever positions change.

mod adjacency;
mod energy;
mod obj;
mod smooth;

pub use adjacency::AdjacencyIndex;
pub use energy::{
    laplacian_energy, normal_consistency_energy, umbrella_vectors, EnergyGradient,
};
pub use obj::{load_mesh, read_obj, save_mesh, write_obj};
pub use smooth::{laplacian_smooth, make_coarse_pair, taubin_smooth, TaubinParams};

use crate::error::{Error, Result};
use crate::Vec3;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Mesh {
    pub vertices: Vec<Vec3>,
    pub faces: Vec<[usize; 3]>,
    pub vertex_normals: Option<Vec<Vec3>>,
}

impl Mesh {
    /// Builds a mesh after checking the index invariants.
    pub fn new(vertices: Vec<Vec3>, faces: Vec<[usize; 3]>) -> Result<Self> {
        let mesh = Mesh {
            vertices,
            faces,
            vertex_normals: None,
        };
        mesh.validate()?;
        Ok(mesh)
    }

    pub fn validate(&self) -> Result<()> {
        let count = self.vertices.len();
        for (fi, face) in self.faces.iter().enumerate() {
            for &index in face {
                if index >= count {
                    return Err(Error::IndexOutOfRange {
                        face: fi,
                        index,
                        count,
                    });
                }
            }
            if face[0] == face[1] || face[1] == face[2] || face[0] == face[2] {
                return Err(Error::RepeatedIndex(fi));
            }
        }
        if let Some(normals) = &self.vertex_normals {
            if normals.len() != count {
                return Err(Error::SizeMismatch {
                    what: "vertex normals",
                    expected: count,
                    actual: normals.len(),
                });
            }
        }
        Ok(())
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    /// Same mesh with freshly computed vertex normals.
    pub fn with_normals(mut self) -> Self {
        let (normals, _) = vertex_normals(&self.vertices, &self.faces);
        self.vertex_normals = Some(normals);
        self
    }

    /// Replaces positions, dropping the now-stale normals.
    pub fn with_positions(&self, vertices: Vec<Vec3>) -> Self {
        assert_eq!(vertices.len(), self.vertices.len());
        Mesh {
            vertices,
            faces: self.faces.clone(),
            vertex_normals: None,
        }
    }

    /// Twice the area times the unit normal of face `f`.
    pub fn face_cross(&self, f: usize) -> Vec3 {
        let [a, b, c] = self.faces[f];
        (self.vertices[b] - self.vertices[a]).cross(&(self.vertices[c] - self.vertices[a]))
    }

    pub fn surface_area(&self) -> f64 {
        (0..self.faces.len())
            .map(|f| 0.5 * self.face_cross(f).norm())
            .sum()
    }

    /// Volume enclosed by the surface; positive for outward-facing winding.
    pub fn signed_volume(&self) -> f64 {
        self.faces
            .iter()
            .map(|&[a, b, c]| {
                self.vertices[a].dot(&self.vertices[b].cross(&self.vertices[c])) / 6.0
            })
            .sum()
    }

    /// Axis-aligned bounding box, `None` when there are no vertices.
    pub fn bounds(&self) -> Option<(Vec3, Vec3)> {
        let first = *self.vertices.first()?;
        Some(self.vertices.iter().fold((first, first), |(lo, hi), v| {
            (lo.inf(v), hi.sup(v))
        }))
    }
}

/// Translation followed by uniform scaling: `p' = (p + translation) * scale`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Similarity {
    pub translation: Vec3,
    pub scale: f64,
}

impl Similarity {
    pub fn identity() -> Self {
        Similarity {
            translation: Vec3::zeros(),
            scale: 1.0,
        }
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        (p + self.translation) * self.scale
    }

    pub fn invert(&self, p: &Vec3) -> Vec3 {
        p / self.scale - self.translation
    }
}

/// Centers the bounding box on the origin and scales the farthest vertex to
/// `target_radius`.
pub fn normalize_to_unit_sphere(mesh: &Mesh, target_radius: f64) -> Result<(Mesh, Similarity)> {
    if !(target_radius > 0.0) {
        return Err(Error::invalid("target radius must be positive"));
    }
    let (lo, hi) = mesh.bounds().ok_or(Error::Empty("mesh has no vertices"))?;
    let center = (lo + hi) * 0.5;
    let radius = mesh
        .vertices
        .iter()
        .map(|v| (v - center).norm())
        .fold(0.0, f64::max);
    if radius <= f64::EPSILON * (1.0 + center.norm()) {
        return Err(Error::ZeroExtent);
    }
    let transform = Similarity {
        translation: -center,
        scale: target_radius / radius,
    };
    let vertices = mesh.vertices.iter().map(|v| transform.apply(v)).collect();
    Ok((
        Mesh {
            vertices,
            faces: mesh.faces.clone(),
            vertex_normals: None,
        },
        transform,
    ))
}

/// Returns the mesh with area-weighted unit vertex normals attached.
pub fn compute_vertex_normals(mesh: &Mesh) -> Mesh {
    let (normals, flagged) = vertex_normals(&mesh.vertices, &mesh.faces);
    if !flagged.is_empty() {
        log::warn!(
            "{} vertices have no incident area; their normals were set to +Z",
            flagged.len()
        );
    }
    Mesh {
        vertices: mesh.vertices.clone(),
        faces: mesh.faces.clone(),
        vertex_normals: Some(normals),
    }
}

/// Area-weighted vertex normals. The second value lists vertices with no
/// incident area (isolated or only touching degenerate faces); they get +Z.
pub fn vertex_normals(vertices: &[Vec3], faces: &[[usize; 3]]) -> (Vec<Vec3>, Vec<usize>) {
    let sums = raw_vertex_normals(vertices, faces);
    let mut flagged = Vec::new();
    let normals = sums
        .iter()
        .enumerate()
        .map(|(i, n)| {
            let len = n.norm();
            if len > 0.0 && len.is_finite() {
                n / len
            } else {
                flagged.push(i);
                Vec3::z()
            }
        })
        .collect();
    (normals, flagged)
}

/// Unnormalized per-vertex sums of face cross products (twice the area
/// times the face normal).
pub(crate) fn raw_vertex_normals(vertices: &[Vec3], faces: &[[usize; 3]]) -> Vec<Vec3> {
    let mut sums = vec![Vec3::zeros(); vertices.len()];
    for &[a, b, c] in faces {
        let n = (vertices[b] - vertices[a]).cross(&(vertices[c] - vertices[a]));
        sums[a] += n;
        sums[b] += n;
        sums[c] += n;
    }
    sums
}

/// Adjoint of [`vertex_normals`]: maps gradients with respect to the unit
/// vertex normals onto vertex positions, accumulating into `out`.
pub(crate) fn vertex_normals_backward(
    vertices: &[Vec3],
    faces: &[[usize; 3]],
    normal_grads: &[Vec3],
    out: &mut [Vec3],
) {
    let sums = raw_vertex_normals(vertices, faces);
    // gradient w.r.t. the raw sum N_i through n_i = N_i / |N_i|
    let raw_grads: Vec<Vec3> = sums
        .iter()
        .zip(normal_grads)
        .map(|(n, g)| {
            let len = n.norm();
            if len > 0.0 && len.is_finite() {
                let unit = n / len;
                (g - unit * g.dot(&unit)) / len
            } else {
                Vec3::zeros()
            }
        })
        .collect();
    for &[a, b, c] in faces {
        let w = raw_grads[a] + raw_grads[b] + raw_grads[c];
        if w == Vec3::zeros() {
            continue;
        }
        cross_backward(vertices, [a, b, c], &w, out);
    }
}

/// Accumulates `d(w · ((b-a) x (c-a)))` with respect to the three corners.
pub(crate) fn cross_backward(vertices: &[Vec3], [a, b, c]: [usize; 3], w: &Vec3, out: &mut [Vec3]) {
    let e1 = vertices[b] - vertices[a];
    let e2 = vertices[c] - vertices[a];
    let gb = e2.cross(w);
    let gc = w.cross(&e1);
    out[a] -= gb + gc;
    out[b] += gb;
    out[c] += gc;
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::icosphere;

    fn square() -> Mesh {
        Mesh::new(
            vec![
                Vec3::new(0.0, 0.0, 0.0),
                Vec3::new(1.0, 0.0, 0.0),
                Vec3::new(1.0, 1.0, 0.0),
                Vec3::new(0.0, 1.0, 0.0),
            ],
            vec![[0, 1, 2], [0, 2, 3]],
        )
        .unwrap()
    }

    #[test]
    fn rejects_bad_indices() {
        let v = vec![Vec3::zeros(); 3];
        assert!(matches!(
            Mesh::new(v.clone(), vec![[0, 1, 3]]),
            Err(Error::IndexOutOfRange { index: 3, .. })
        ));
        assert!(matches!(
            Mesh::new(v, vec![[0, 1, 1]]),
            Err(Error::RepeatedIndex(0))
        ));
    }

    #[test]
    fn flat_square_normals_point_up() {
        let m = compute_vertex_normals(&square());
        for n in m.vertex_normals.unwrap() {
            assert!((n - Vec3::z()).norm() < 1e-12);
        }
    }

    #[test]
    fn isolated_vertex_gets_plus_z() {
        let mut m = square();
        m.vertices.push(Vec3::new(5.0, 5.0, 5.0));
        let (normals, flagged) = vertex_normals(&m.vertices, &m.faces);
        assert_eq!(flagged, vec![4]);
        assert_eq!(normals[4], Vec3::z());
    }

    #[test]
    fn sphere_normals_are_radial() {
        let m = compute_vertex_normals(&icosphere(3, 1.0));
        let worst = m
            .vertices
            .iter()
            .zip(m.vertex_normals.as_ref().unwrap())
            .map(|(p, n)| p.normalize().dot(n).clamp(-1.0, 1.0).acos().to_degrees())
            .fold(0.0, f64::max);
        assert!(worst < 2.0, "worst angle {worst}");
    }

    #[test]
    fn flipping_a_face_is_local() {
        let base = icosphere(2, 1.0);
        let mut flipped = base.clone();
        let [a, b, c] = flipped.faces[0];
        flipped.faces[0] = [a, c, b];
        let n0 = compute_vertex_normals(&base).vertex_normals.unwrap();
        let n1 = compute_vertex_normals(&flipped).vertex_normals.unwrap();
        for i in 0..base.vertices.len() {
            let changed = (n0[i] - n1[i]).norm() > 1e-12;
            assert_eq!(changed, [a, b, c].contains(&i), "vertex {i}");
        }
    }

    #[test]
    fn normals_are_permutation_equivariant() {
        let m = icosphere(2, 1.0);
        let n = m.vertices.len();
        let perm: Vec<usize> = (0..n).map(|i| (i * 37 + 11) % n).collect();
        let mut inverse = vec![0; n];
        for (new, &old) in perm.iter().enumerate() {
            inverse[old] = new;
        }
        let vertices = perm.iter().map(|&old| m.vertices[old]).collect();
        let mut faces: Vec<[usize; 3]> = m
            .faces
            .iter()
            .map(|f| [inverse[f[0]], inverse[f[1]], inverse[f[2]]])
            .collect();
        faces.reverse();
        let permuted = Mesh::new(vertices, faces).unwrap();
        let a = compute_vertex_normals(&m).vertex_normals.unwrap();
        let b = compute_vertex_normals(&permuted).vertex_normals.unwrap();
        for (new, &old) in perm.iter().enumerate() {
            assert!((a[old] - b[new]).norm() < 1e-12);
        }
    }

    #[test]
    fn normalize_cube_and_offcenter_sphere() {
        let cube = crate::synth::cube(2.0);
        let (m, _) = normalize_to_unit_sphere(&cube, 0.9).unwrap();
        let max = m.vertices.iter().map(|v| v.norm()).fold(0.0, f64::max);
        assert!((max - 0.9).abs() < 1e-12);

        let mut sphere = icosphere(2, 1.0);
        for v in &mut sphere.vertices {
            v.x += 5.0;
        }
        let (m, t) = normalize_to_unit_sphere(&sphere, 0.9).unwrap();
        let (lo, hi) = m.bounds().unwrap();
        assert!(((lo + hi) * 0.5).norm() < 1e-12);
        assert!((t.invert(&m.vertices[3]) - sphere.vertices[3]).norm() < 1e-12);

        let (again, t2) = normalize_to_unit_sphere(&m, 0.9).unwrap();
        assert!(t2.translation.norm() < 1e-6 && (t2.scale - 1.0).abs() < 1e-6);
        assert!((again.vertices[7] - m.vertices[7]).norm() < 1e-6);
    }

    #[test]
    fn normalize_rejects_degenerate() {
        let m = Mesh::new(vec![Vec3::new(1.0, 2.0, 3.0); 3], vec![]).unwrap();
        assert!(matches!(normalize_to_unit_sphere(&m, 0.9), Err(Error::ZeroExtent)));
        assert!(matches!(
            normalize_to_unit_sphere(&Mesh::default(), 0.9),
            Err(Error::Empty(_))
        ));
    }
}
