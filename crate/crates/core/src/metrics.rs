//! Evaluation metrics: masked normal-map angular error, Chamfer distance
//! and F-score between area-uniform surface samples.
//!
//! Conventions:
//! * MAE averages `acos(clamp(a . b))` in degrees over the intersection of
//!   the two foreground masks (non-zero normals).
//! * Chamfer is `0.5 * (mean_a min_b |a-b|^2 + mean_b min_a |a-b|^2)`;
//!   [`MetricReport`] shows it multiplied by `1e4`.
//! * F-score compares squared nearest distances against `threshold`
//!   (squared-distance form, default `1e-4`) and returns the harmonic mean
//!   of precision and recall in percent.

use kiddo::{ImmutableKdTree, SquaredEuclidean};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::mesh::Mesh;
use crate::raster::NormalImage;
use crate::Vec3;

pub const DEFAULT_SAMPLES: usize = 100_000;
pub const DEFAULT_F_THRESHOLD: f64 = 1e-4;
/// Chamfer values are reported in units of `1e-4`.
pub const CHAMFER_REPORT_SCALE: f64 = 1e4;

/// Mean angular error in degrees over pixels that are foreground in both maps.
pub fn normal_mae(predicted: &NormalImage, reference: &NormalImage) -> Result<f64> {
    if predicted.normals.len() != reference.normals.len() {
        return Err(Error::SizeMismatch {
            what: "normal map",
            expected: reference.normals.len(),
            actual: predicted.normals.len(),
        });
    }
    let (sum, count) = angular_error_sum(&predicted.normals, &reference.normals);
    if count == 0 {
        return Err(Error::Empty("foreground mask intersection"));
    }
    Ok(sum / count as f64)
}

/// Sum of per-pixel angular errors (degrees) and the number of pixels used.
fn angular_error_sum(a: &[Vec3], b: &[Vec3]) -> (f64, usize) {
    let mut sum = 0.0;
    let mut count = 0;
    for (p, q) in a.iter().zip(b) {
        if *p == Vec3::zeros() || *q == Vec3::zeros() {
            continue;
        }
        let c = (p.dot(q) / (p.norm() * q.norm())).clamp(-1.0, 1.0);
        sum += c.acos().to_degrees();
        count += 1;
    }
    (sum, count)
}

/// Per-view MAE and the mean over views. Views without overlap are skipped.
pub fn multi_view_mae(predicted: &[NormalImage], reference: &[NormalImage]) -> Result<(f64, Vec<f64>)> {
    if predicted.len() != reference.len() {
        return Err(Error::SizeMismatch {
            what: "view count",
            expected: reference.len(),
            actual: predicted.len(),
        });
    }
    let per_view: Vec<f64> = predicted
        .iter()
        .zip(reference)
        .filter_map(|(p, r)| normal_mae(p, r).ok())
        .collect();
    if per_view.is_empty() {
        return Err(Error::Empty("foreground mask intersection"));
    }
    let mean = per_view.iter().sum::<f64>() / per_view.len() as f64;
    Ok((mean, per_view))
}

/// Area-uniform random points on the surface, deterministic per seed.
pub fn sample_surface(mesh: &Mesh, count: usize, seed: u64) -> Result<Vec<Vec3>> {
    let mut cumulative = Vec::with_capacity(mesh.faces.len());
    let mut total = 0.0;
    for f in 0..mesh.faces.len() {
        total += 0.5 * mesh.face_cross(f).norm();
        cumulative.push(total);
    }
    if !(total > 0.0) {
        return Err(Error::Empty("mesh surface"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::with_capacity(count);
    for _ in 0..count {
        let target = rng.random::<f64>() * total;
        let f = cumulative.partition_point(|&c| c <= target).min(mesh.faces.len() - 1);
        let [a, b, c] = mesh.faces[f].map(|i| mesh.vertices[i]);
        let (r1, r2): (f64, f64) = (rng.random(), rng.random());
        let s = r1.sqrt();
        points.push(a * (1.0 - s) + b * (s * (1.0 - r2)) + c * (s * r2));
    }
    Ok(points)
}

/// Squared distance from every query point to its nearest neighbour in `set`.
pub fn nearest_squared_distances(queries: &[Vec3], set: &[Vec3]) -> Vec<f64> {
    let coords: Vec<[f64; 3]> = set.iter().map(|p| [p.x, p.y, p.z]).collect();
    let tree: ImmutableKdTree<f64, 3> = ImmutableKdTree::new_from_slice(&coords);
    queries
        .par_iter()
        .map(|q| tree.nearest_one::<SquaredEuclidean>(&[q.x, q.y, q.z]).distance)
        .collect()
}

/// Linear-scan oracle for [`nearest_squared_distances`].
pub fn nearest_squared_distances_brute_force(queries: &[Vec3], set: &[Vec3]) -> Vec<f64> {
    queries
        .iter()
        .map(|q| set.iter().map(|p| (p - q).norm_squared()).fold(f64::INFINITY, f64::min))
        .collect()
}

fn check_nonempty(a: &[Vec3], b: &[Vec3]) -> Result<()> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Empty("point set"));
    }
    Ok(())
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn chamfer_distance(a: &[Vec3], b: &[Vec3]) -> Result<f64> {
    check_nonempty(a, b)?;
    Ok(0.5 * (mean(&nearest_squared_distances(a, b)) + mean(&nearest_squared_distances(b, a))))
}

pub fn chamfer_distance_brute_force(a: &[Vec3], b: &[Vec3]) -> Result<f64> {
    check_nonempty(a, b)?;
    Ok(0.5
        * (mean(&nearest_squared_distances_brute_force(a, b))
            + mean(&nearest_squared_distances_brute_force(b, a))))
}

/// F-score in percent; `threshold` bounds the squared nearest distance.
pub fn f_score(a: &[Vec3], b: &[Vec3], threshold: f64) -> Result<f64> {
    check_nonempty(a, b)?;
    if !(threshold > 0.0) {
        return Err(Error::invalid("F-score threshold must be positive"));
    }
    let within = |d: Vec<f64>| d.iter().filter(|&&x| x <= threshold).count() as f64 / d.len() as f64;
    let precision = within(nearest_squared_distances(a, b));
    let recall = within(nearest_squared_distances(b, a));
    if precision + recall == 0.0 {
        return Ok(0.0);
    }
    Ok(100.0 * 2.0 * precision * recall / (precision + recall))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub mae_degrees: Option<f64>,
    /// Chamfer distance times [`CHAMFER_REPORT_SCALE`].
    pub chamfer: Option<f64>,
    pub f_score_percent: Option<f64>,
    pub samples: usize,
    pub pixels_compared: usize,
}

impl MetricReport {
    pub fn to_key_values(&self) -> String {
        let fmt = |v: Option<f64>| v.map_or("nan".to_string(), |x| format!("{x:.6}"));
        format!(
            "mae_degrees={}\nchamfer_x1e4={}\nf_score_percent={}\nsamples={}\npixels_compared={}\n",
            fmt(self.mae_degrees),
            fmt(self.chamfer),
            fmt(self.f_score_percent),
            self.samples,
            self.pixels_compared
        )
    }

    pub fn to_csv(&self) -> String {
        let fmt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x}"));
        format!(
            "mae_degrees,chamfer_x1e4,f_score_percent,samples,pixels_compared\n{},{},{},{},{}\n",
            fmt(self.mae_degrees),
            fmt(self.chamfer),
            fmt(self.f_score_percent),
            self.samples,
            self.pixels_compared
        )
    }
}

/// Chamfer and F-score between two meshes from `samples` points each. Both
/// meshes are sampled with the same seed, so identical meshes score exactly
/// zero and 100%.
pub fn compare_meshes(a: &Mesh, b: &Mesh, samples: usize, threshold: f64, seed: u64) -> Result<MetricReport> {
    let pa = sample_surface(a, samples, seed)?;
    let pb = sample_surface(b, samples, seed)?;
    Ok(MetricReport {
        mae_degrees: None,
        chamfer: Some(chamfer_distance(&pa, &pb)? * CHAMFER_REPORT_SCALE),
        f_score_percent: Some(f_score(&pa, &pb, threshold)?),
        samples,
        pixels_compared: 0,
    })
}

/// MAE over a set of views, also counting compared pixels.
pub fn compare_normal_maps(predicted: &[NormalImage], reference: &[NormalImage]) -> Result<MetricReport> {
    let (mae, _) = multi_view_mae(predicted, reference)?;
    let pixels = predicted
        .iter()
        .zip(reference)
        .map(|(p, r)| angular_error_sum(&p.normals, &r.normals).1)
        .sum();
    Ok(MetricReport {
        mae_degrees: Some(mae),
        chamfer: None,
        f_score_percent: None,
        samples: 0,
        pixels_compared: pixels,
    })
}
