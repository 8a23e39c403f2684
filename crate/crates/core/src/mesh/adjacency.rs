use std::collections::HashMap;

use super::Mesh;

/// Vertex one-rings and edge-to-face incidence for a fixed connectivity.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjacencyIndex {
    /// Sorted, de-duplicated neighbor lists.
    pub neighbors: Vec<Vec<usize>>,
    /// Undirected edges `(lo, hi)` in ascending order, with their incident faces.
    pub edges: Vec<((usize, usize), Vec<usize>)>,
}

impl AdjacencyIndex {
    pub fn build(mesh: &Mesh) -> Self {
        Self::from_faces(mesh.vertices.len(), &mesh.faces)
    }

    pub fn from_faces(vertex_count: usize, faces: &[[usize; 3]]) -> Self {
        let mut neighbors = vec![Vec::new(); vertex_count];
        let mut edge_map: HashMap<(usize, usize), Vec<usize>> = HashMap::new();
        for (fi, face) in faces.iter().enumerate() {
            for k in 0..3 {
                let (a, b) = (face[k], face[(k + 1) % 3]);
                neighbors[a].push(b);
                neighbors[b].push(a);
                edge_map.entry((a.min(b), a.max(b))).or_default().push(fi);
            }
        }
        for list in &mut neighbors {
            list.sort_unstable();
            list.dedup();
        }
        let mut edges: Vec<_> = edge_map.into_iter().collect();
        edges.sort_unstable_by_key(|(e, _)| *e);
        AdjacencyIndex { neighbors, edges }
    }

    /// Pairs of faces sharing an edge. Non-manifold edges contribute every
    /// consecutive pair of their incident faces.
    pub fn face_pairs(&self) -> Vec<(usize, usize)> {
        let mut pairs = Vec::with_capacity(self.edges.len());
        for (_, faces) in &self.edges {
            for w in faces.windows(2) {
                pairs.push((w[0], w[1]));
            }
        }
        pairs
    }

    /// Every edge bounds exactly two faces.
    pub fn is_closed_manifold(&self) -> bool {
        !self.edges.is_empty() && self.edges.iter().all(|(_, f)| f.len() == 2)
    }

    /// Edges whose incident-face count is not two.
    pub fn boundary_or_nonmanifold_edges(&self) -> usize {
        self.edges.iter().filter(|(_, f)| f.len() != 2).count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::icosphere;

    #[test]
    fn neighbors_are_symmetric_and_sphere_is_closed() {
        let m = icosphere(2, 1.0);
        let adj = AdjacencyIndex::build(&m);
        for (i, list) in adj.neighbors.iter().enumerate() {
            for &j in list {
                assert!(adj.neighbors[j].binary_search(&i).is_ok());
            }
        }
        assert!(adj.is_closed_manifold());
        assert_eq!(adj.edges.len(), 3 * m.faces.len() / 2);
        assert_eq!(adj.face_pairs().len(), adj.edges.len());
    }

    #[test]
    fn open_patch_has_boundary() {
        let adj = AdjacencyIndex::from_faces(4, &[[0, 1, 2], [0, 2, 3]]);
        assert!(!adj.is_closed_manifold());
        assert_eq!(adj.boundary_or_nonmanifold_edges(), 4);
        assert_eq!(adj.face_pairs(), vec![(0, 1)]);
    }
}
