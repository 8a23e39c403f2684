//! Bounding-volume hierarchy over triangles for exact closest-point queries.

use crate::Vec3;

const LEAF_SIZE: usize = 4;

#[derive(Debug, Clone)]
struct Node {
    lo: Vec3,
    hi: Vec3,
    /// Leaf: range into `order`. Interior: `start` is the left child, the
    /// right child is `start + 1` when `count == 0`.
    start: usize,
    count: usize,
}

#[derive(Debug, Clone)]
pub struct TriangleBvh {
    triangles: Vec<[Vec3; 3]>,
    order: Vec<usize>,
    nodes: Vec<Node>,
}

impl TriangleBvh {
    pub fn new(triangles: Vec<[Vec3; 3]>) -> Self {
        let mut bvh = TriangleBvh {
            order: (0..triangles.len()).collect(),
            triangles,
            nodes: Vec::new(),
        };
        if !bvh.triangles.is_empty() {
            let centroids: Vec<Vec3> = bvh
                .triangles
                .iter()
                .map(|t| (t[0] + t[1] + t[2]) / 3.0)
                .collect();
            bvh.nodes.push(Node {
                lo: Vec3::zeros(),
                hi: Vec3::zeros(),
                start: 0,
                count: 0,
            });
            bvh.build(0, 0, bvh.triangles.len(), &centroids);
        }
        bvh
    }

    pub fn len(&self) -> usize {
        self.triangles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    fn build(&mut self, node: usize, start: usize, end: usize, centroids: &[Vec3]) {
        let (mut lo, mut hi) = (Vec3::repeat(f64::INFINITY), Vec3::repeat(f64::NEG_INFINITY));
        let (mut clo, mut chi) = (lo, hi);
        for &t in &self.order[start..end] {
            for p in &self.triangles[t] {
                lo = lo.inf(p);
                hi = hi.sup(p);
            }
            clo = clo.inf(&centroids[t]);
            chi = chi.sup(&centroids[t]);
        }
        self.nodes[node].lo = lo;
        self.nodes[node].hi = hi;
        if end - start <= LEAF_SIZE {
            self.nodes[node].start = start;
            self.nodes[node].count = end - start;
            return;
        }
        let axis = (chi - clo).imax();
        let mid = (start + end) / 2;
        self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            centroids[a][axis].total_cmp(&centroids[b][axis])
        });
        let left = self.nodes.len();
        let blank = Node {
            lo: Vec3::zeros(),
            hi: Vec3::zeros(),
            start: 0,
            count: 0,
        };
        self.nodes.push(blank.clone());
        self.nodes.push(blank);
        self.nodes[node].start = left;
        self.nodes[node].count = 0;
        self.build(left, start, mid, centroids);
        self.build(left + 1, mid, end, centroids);
    }

    /// Squared distance from `p` to the nearest triangle. `bound` is an
    /// optional known upper bound on the (non-squared) distance, used only
    /// to prune the search.
    pub fn nearest_squared(&self, p: &Vec3, bound: Option<f64>) -> f64 {
        if self.is_empty() {
            return f64::INFINITY;
        }
        let mut best = match bound {
            Some(b) if b.is_finite() => {
                let b = b * (1.0 + 1e-9) + 1e-12;
                b * b
            }
            _ => f64::INFINITY,
        };
        let mut found = false;
        let mut stack = Vec::with_capacity(64);
        stack.push(0usize);
        while let Some(n) = stack.pop() {
            let node = &self.nodes[n];
            if box_distance_squared(p, &node.lo, &node.hi) > best {
                continue;
            }
            if node.count > 0 {
                for &t in &self.order[node.start..node.start + node.count] {
                    let d = point_triangle_distance_squared(p, &self.triangles[t]);
                    if d <= best {
                        best = d;
                        found = true;
                    }
                }
            } else {
                let (l, r) = (node.start, node.start + 1);
                let dl = box_distance_squared(p, &self.nodes[l].lo, &self.nodes[l].hi);
                let dr = box_distance_squared(p, &self.nodes[r].lo, &self.nodes[r].hi);
                // push the farther child first so the nearer one is explored first
                if dl < dr {
                    stack.push(r);
                    stack.push(l);
                } else {
                    stack.push(l);
                    stack.push(r);
                }
            }
        }
        if found {
            best
        } else {
            self.nearest_squared(p, None)
        }
    }
}

fn box_distance_squared(p: &Vec3, lo: &Vec3, hi: &Vec3) -> f64 {
    let mut d = 0.0;
    for c in 0..3 {
        let v = if p[c] < lo[c] {
            lo[c] - p[c]
        } else if p[c] > hi[c] {
            p[c] - hi[c]
        } else {
            0.0
        };
        d += v * v;
    }
    d
}

/// Exact squared distance from a point to a closed triangle (Voronoi-region
/// walk over vertices, edges and the face interior).
pub fn point_triangle_distance_squared(p: &Vec3, [a, b, c]: &[Vec3; 3]) -> f64 {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return ap.norm_squared();
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return bp.norm_squared();
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return (ap - ab * v).norm_squared();
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return cp.norm_squared();
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return (ap - ac * w).norm_squared();
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return (bp - (c - b) * w).norm_squared();
    }
    let denom = va + vb + vc;
    if denom.abs() <= f64::MIN_POSITIVE {
        // degenerate triangle: fall back to its three edges
        return [(a, b), (b, c), (c, a)]
            .iter()
            .map(|(s, e)| point_segment_distance_squared(p, s, e))
            .fold(f64::INFINITY, f64::min);
    }
    let v = vb / denom;
    let w = vc / denom;
    (ap - ab * v - ac * w).norm_squared()
}

fn point_segment_distance_squared(p: &Vec3, a: &Vec3, b: &Vec3) -> f64 {
    let ab = b - a;
    let len = ab.norm_squared();
    let t = if len > 0.0 {
        ((p - a).dot(&ab) / len).clamp(0.0, 1.0)
    } else {
        0.0
    };
    (p - (a + ab * t)).norm_squared()
}
