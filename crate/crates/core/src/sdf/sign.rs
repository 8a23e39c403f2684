//! Inside/outside classification by ray parity.
//!
//! For every lattice line parallel to an axis, all triangle crossings are
//! gathered once; a point is inside along that axis when an odd number of
//! crossings lie beyond it in the positive direction. The three axes vote.
//! Lines are nudged by tiny irrational offsets so that they do not pass
//! exactly through mesh edges or vertices placed on lattice coordinates.

use rayon::prelude::*;

use crate::Vec3;

const NUDGE: [f64; 3] = [3.183_098_861e-8, 2.718_281_828e-8, 1.414_213_562e-8];

/// Per-point count of axes (0 to 3) that classify the point as inside.
#[derive(Debug, Clone)]
pub struct InsideVotes {
    votes: Vec<u8>,
}

impl InsideVotes {
    /// Votes for every point of the `r^3` lattice over `[-1, 1]^3`.
    pub fn compute(triangles: &[[Vec3; 3]], r: usize) -> Self {
        let h = 2.0 / (r - 1) as f64;
        let per_axis: Vec<Vec<bool>> = (0..3)
            .into_par_iter()
            .map(|axis| axis_parity(triangles, r, h, axis))
            .collect();
        let votes = (0..r * r * r)
            .map(|i| per_axis.iter().map(|p| p[i] as u8).sum())
            .collect();
        InsideVotes { votes }
    }

    pub fn inside(&self) -> impl Iterator<Item = bool> + '_ {
        self.votes.iter().map(|&v| v >= 2)
    }

    /// Points where the three axes did not agree.
    pub fn disagreements(&self) -> usize {
        self.votes.iter().filter(|&&v| v == 1 || v == 2).count()
    }
}

/// Inside flags (by parity along +axis) for every lattice point.
fn axis_parity(triangles: &[[Vec3; 3]], r: usize, h: f64, axis: usize) -> Vec<bool> {
    let (u, v) = ((axis + 1) % 3, (axis + 2) % 3);
    let line_coord = |i: usize, c: usize| -1.0 + i as f64 * h + NUDGE[c];
    let mut crossings: Vec<Vec<f64>> = vec![Vec::new(); r * r];
    for tri in triangles {
        let (umin, umax) = min_max(tri.iter().map(|p| p[u]));
        let (vmin, vmax) = min_max(tri.iter().map(|p| p[v]));
        let range = |lo: f64, hi: f64, c: usize| {
            let a = ((lo - NUDGE[c] + 1.0) / h).ceil().max(0.0) as usize;
            let b = ((hi - NUDGE[c] + 1.0) / h).floor().min((r - 1) as f64);
            if b < 0.0 {
                (1, 0)
            } else {
                (a, b as usize)
            }
        };
        let (iu0, iu1) = range(umin, umax, u);
        let (iv0, iv1) = range(vmin, vmax, v);
        if iu0 > iu1 || iv0 > iv1 {
            continue;
        }
        for iu in iu0..=iu1 {
            for iv in iv0..=iv1 {
                if let Some(t) = line_hit(tri, axis, u, v, line_coord(iu, u), line_coord(iv, v)) {
                    crossings[iu * r + iv].push(t);
                }
            }
        }
    }
    let mut inside = vec![false; r * r * r];
    for iu in 0..r {
        for iv in 0..r {
            let hits = &mut crossings[iu * r + iv];
            if hits.is_empty() {
                continue;
            }
            hits.sort_by(f64::total_cmp);
            let mut first_beyond = 0;
            for s in 0..r {
                let pos = -1.0 + s as f64 * h;
                while first_beyond < hits.len() && hits[first_beyond] <= pos {
                    first_beyond += 1;
                }
                if (hits.len() - first_beyond) % 2 == 1 {
                    let mut c = [0usize; 3];
                    c[axis] = s;
                    c[u] = iu;
                    c[v] = iv;
                    inside[(c[0] * r + c[1]) * r + c[2]] = true;
                }
            }
        }
    }
    inside
}

fn min_max(values: impl Iterator<Item = f64>) -> (f64, f64) {
    values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| {
        (lo.min(x), hi.max(x))
    })
}

/// Coordinate along `axis` where the line `(pu, pv)` pierces the triangle.
fn line_hit(tri: &[Vec3; 3], axis: usize, u: usize, v: usize, pu: f64, pv: f64) -> Option<f64> {
    let [a, b, c] = tri;
    let edge = |p: &Vec3, q: &Vec3| (q[u] - p[u]) * (pv - p[v]) - (q[v] - p[v]) * (pu - p[u]);
    let area = (b[u] - a[u]) * (c[v] - a[v]) - (b[v] - a[v]) * (c[u] - a[u]);
    if area == 0.0 {
        return None;
    }
    let w0 = edge(b, c) / area;
    let w1 = edge(c, a) / area;
    let w2 = edge(a, b) / area;
    if w0 < 0.0 || w1 < 0.0 || w2 < 0.0 {
        return None;
    }
    Some(w0 * a[axis] + w1 * b[axis] + w2 * c[axis])
}

/// Single-point majority vote of three parity rays (linear in the triangle count).
pub fn inside_by_ray_parity(triangles: &[[Vec3; 3]], p: &Vec3) -> bool {
    let mut votes = 0;
    for axis in 0..3 {
        let (u, v) = ((axis + 1) % 3, (axis + 2) % 3);
        let (pu, pv) = (p[u] + NUDGE[u], p[v] + NUDGE[v]);
        let count = triangles
            .iter()
            .filter_map(|t| line_hit(t, axis, u, v, pu, pv))
            .filter(|&t| t > p[axis])
            .count();
        votes += count % 2;
    }
    votes >= 2
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{cube, icosphere};

    fn triangles(m: &crate::Mesh) -> Vec<[Vec3; 3]> {
        m.faces
            .iter()
            .map(|f| [m.vertices[f[0]], m.vertices[f[1]], m.vertices[f[2]]])
            .collect()
    }

    #[test]
    fn cube_center_inside_corner_outside() {
        let t = triangles(&cube(1.0));
        assert!(inside_by_ray_parity(&t, &Vec3::zeros()));
        assert!(!inside_by_ray_parity(&t, &Vec3::new(0.9, 0.0, 0.0)));
        assert!(inside_by_ray_parity(&t, &Vec3::new(0.49, -0.49, 0.2)));
    }

    #[test]
    fn grid_votes_agree_with_pointwise_parity() {
        let mesh = icosphere(2, 0.7);
        let t = triangles(&mesh);
        let r = 9;
        let votes = InsideVotes::compute(&t, r);
        assert_eq!(votes.disagreements(), 0);
        let h = 2.0 / (r - 1) as f64;
        for (idx, inside) in votes.inside().enumerate() {
            let p = Vec3::new(
                -1.0 + (idx / (r * r)) as f64 * h,
                -1.0 + ((idx / r) % r) as f64 * h,
                -1.0 + (idx % r) as f64 * h,
            );
            assert_eq!(inside, inside_by_ray_parity(&t, &p), "{p:?}");
            if p.norm() < 0.6 || p.norm() > 0.7 {
                assert_eq!(inside, p.norm() < 0.6, "{p:?}");
            }
        }
    }
}
