use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grouping::{Axis, ChannelVectorSet};
use crate::penalties::similarity::{angular_similarity, norm};

const MAX_ITERS: usize = 300;

/// Point `i` of a cluster analysis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusterPoint {
    /// Euclidean norm of the vector, min-max scaled to `[0, 1]`.
    pub distance_norm: f64,
    /// Angular similarity to the mean vector, min-max scaled to `[0, 1]`.
    pub as_to_mean: f64,
}

impl ClusterPoint {
    fn dist2(&self, o: &ClusterPoint) -> f64 {
        let dx = self.distance_norm - o.distance_norm;
        let dy = self.as_to_mean - o.as_to_mean;
        dx * dx + dy * dy
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterReport {
    pub layer: usize,
    pub axis: Axis,
    pub n_clusters: usize,
    pub points: Vec<ClusterPoint>,
    pub assignments: Vec<usize>,
    pub centers: Vec<ClusterPoint>,
    /// Within-cluster sum of squares after each Lloyd iteration.
    pub objective: Vec<f64>,
    pub warnings: Vec<String>,
}

/// Min-max scales to `[0, 1]`; a constant column maps to 0.5.
fn standardize(v: &[f64]) -> Vec<f64> {
    let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if hi <= lo {
        return vec![0.5; v.len()];
    }
    v.iter().map(|x| (x - lo) / (hi - lo)).collect()
}

/// The 2D features of the vectors along `axis`.
pub fn cluster_features(cv: &ChannelVectorSet, axis: Axis) -> Vec<ClusterPoint> {
    let vs = cv.vectors(axis);
    if vs.is_empty() {
        return Vec::new();
    }
    let dim = vs[0].len();
    let mut mean = vec![0.0; dim];
    for v in &vs {
        for (m, x) in mean.iter_mut().zip(v) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= vs.len() as f64);
    let norms: Vec<f64> = vs.iter().map(|v| norm(v)).collect();
    let sims: Vec<f64> = vs.iter().map(|v| angular_similarity(v, &mean)).collect();
    standardize(&norms)
        .into_iter()
        .zip(standardize(&sims))
        .map(|(d, s)| ClusterPoint {
            distance_norm: d,
            as_to_mean: s,
        })
        .collect()
}

fn nearest(p: &ClusterPoint, centers: &[ClusterPoint]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (k, c) in centers.iter().enumerate() {
        let d = p.dist2(c);
        if d < best.1 {
            best = (k, d);
        }
    }
    best
}

/// Lloyd's k-means over 2D points with seeded farthest-point init: the
/// first center is a seeded random point, each next one the point farthest
/// from its nearest chosen center (lowest index on ties).
pub fn kmeans(points: &[ClusterPoint], k: usize, seed: u64) -> Result<KMeans> {
    if k == 0 || k > points.len() {
        return Err(Error::InvalidArgument(format!(
            "k = {k} must be in 1..={}",
            points.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers = vec![points[rng.random_range(0..points.len())]];
    let mut warnings = Vec::new();
    while centers.len() < k {
        let mut far = (0, -1.0);
        for (i, p) in points.iter().enumerate() {
            let d = nearest(p, &centers).1;
            if d > far.1 {
                far = (i, d);
            }
        }
        if far.1 == 0.0 {
            warnings.push(format!(
                "duplicate initial center {}: fewer than {k} distinct points",
                centers.len()
            ));
        }
        centers.push(points[far.0]);
    }

    let mut assignments: Vec<usize> = points.iter().map(|p| nearest(p, &centers).0).collect();
    let mut objective = Vec::new();
    for _ in 0..MAX_ITERS {
        // update step; empty clusters keep their center
        let mut sums = vec![(0.0, 0.0, 0usize); k];
        for (p, &a) in points.iter().zip(&assignments) {
            sums[a].0 += p.distance_norm;
            sums[a].1 += p.as_to_mean;
            sums[a].2 += 1;
        }
        for (c, s) in centers.iter_mut().zip(&sums) {
            if s.2 > 0 {
                c.distance_norm = s.0 / s.2 as f64;
                c.as_to_mean = s.1 / s.2 as f64;
            }
        }
        let next: Vec<usize> = points.iter().map(|p| nearest(p, &centers).0).collect();
        objective.push(
            points
                .iter()
                .zip(&next)
                .map(|(p, &a)| p.dist2(&centers[a]))
                .sum(),
        );
        if next == assignments {
            break;
        }
        assignments = next;
    }
    Ok(KMeans {
        assignments,
        centers,
        objective,
        warnings,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeans {
    pub assignments: Vec<usize>,
    pub centers: Vec<ClusterPoint>,
    pub objective: Vec<f64>,
    pub warnings: Vec<String>,
}

pub fn cluster_channels(
    cv: &ChannelVectorSet,
    axis: Axis,
    k: usize,
    seed: u64,
) -> Result<ClusterReport> {
    let points = cluster_features(cv, axis);
    let km = kmeans(&points, k, seed)?;
    Ok(ClusterReport {
        layer: cv.layer,
        axis,
        n_clusters: k,
        points,
        assignments: km.assignments,
        centers: km.centers,
        objective: km.objective,
        warnings: km.warnings,
    })
}

/// Columns: `layer,axis,index,distance_norm,as_to_mean,cluster`.
pub fn write_cluster_csv<W: Write>(reports: &[ClusterReport], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "layer",
        "axis",
        "index",
        "distance_norm",
        "as_to_mean",
        "cluster",
    ])?;
    for r in reports {
        let axis = match r.axis {
            Axis::Channels => "channels",
            Axis::Filters => "filters",
        };
        for (i, (p, a)) in r.points.iter().zip(&r.assignments).enumerate() {
            w.write_record([
                r.layer.to_string(),
                axis.to_string(),
                i.to_string(),
                p.distance_norm.to_string(),
                p.as_to_mean.to_string(),
                a.to_string(),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}
