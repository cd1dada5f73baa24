//! Diagnostics for codebook ambiguity and match quality: K-means clustering
//! of descriptors, per-cluster region-entropy statistics, and view-frustum
//! classification of matches.
//!
//! The entropy statistic quantifies how many distinct scene regions a
//! descriptor cluster mixes together: clusters confined to one region score
//! 0 bits, clusters spread uniformly over `r` regions score `log2(r)` bits.
//! An ambiguous (aliased) codebook therefore shows a higher mean entropy
//! than one whose descriptors separate regions.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::types::{CameraIntrinsics, DescriptorBank, MatchSet, Pose};

/// Output of [`kmeans`]: centroids, per-row assignment, and the inertia
/// trace across Lloyd iterations.
#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    pub k: usize,
    pub dim: usize,
    /// Row-major `k x dim` centroid matrix.
    pub centroids: Vec<f32>,
    /// Cluster id per input row; every row is assigned to its nearest
    /// centroid (ties to the lowest cluster id).
    pub assignment: Vec<u32>,
    /// Final sum of squared distances to assigned centroids.
    pub inertia: f64,
    /// Inertia after each assignment step, first entry included; verified
    /// non-increasing while running.
    pub inertia_history: Vec<f64>,
}

impl KMeansResult {
    pub fn centroid(&self, c: usize) -> &[f32] {
        &self.centroids[c * self.dim..(c + 1) * self.dim]
    }
}

fn dist_sq(a: &[f32], b: &[f32]) -> f32 {
    let mut acc = 0.0f32;
    for (x, y) in a.iter().zip(b) {
        let d = x - y;
        acc += d * d;
    }
    acc
}

/// Nearest centroid of `row`, ties to the lowest cluster id.
fn nearest_centroid(row: &[f32], centroids: &[f32], dim: usize, k: usize) -> (u32, f32) {
    let mut best = 0u32;
    let mut best_d = f32::INFINITY;
    for c in 0..k {
        let d = dist_sq(row, &centroids[c * dim..(c + 1) * dim]);
        if d < best_d {
            best_d = d;
            best = c as u32;
        }
    }
    (best, best_d)
}

/// Lloyd's K-means with k-means++ seeding.
///
/// Deterministic per seed. The assignment step runs in parallel over rows;
/// the iteration loop is sequential. Empty clusters are re-seeded from the
/// row currently farthest from its assigned centroid, which (like both
/// Lloyd steps) cannot increase the objective, so the inertia trace is
/// non-increasing — asserted at every iteration.
pub fn kmeans(descriptors: &DescriptorBank, k: usize, seed: u64, max_iter: usize) -> Result<KMeansResult> {
    use rand::{Rng, SeedableRng};
    let rows = descriptors.rows();
    let dim = descriptors.dim();
    if k == 0 || k > rows {
        return Err(Error::KTooLarge { k, rows });
    }
    let data = descriptors.to_f32_vec();
    let row = |i: usize| &data[i * dim..(i + 1) * dim];

    // k-means++ seeding
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = Vec::with_capacity(k * dim);
    let first = rng.gen_range(0..rows);
    centroids.extend_from_slice(row(first));
    let mut d2: Vec<f64> = (0..rows)
        .map(|i| dist_sq(row(i), &centroids[0..dim]) as f64)
        .collect();
    for c in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let r = rng.gen_range(0.0..total);
            let mut cum = 0.0;
            let mut chosen = rows - 1;
            for (i, &w) in d2.iter().enumerate() {
                cum += w;
                if r < cum {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            // all rows coincide with existing centroids; any row works
            rng.gen_range(0..rows)
        };
        centroids.extend_from_slice(row(pick));
        let base = c * dim;
        for (i, slot) in d2.iter_mut().enumerate() {
            let d = dist_sq(row(i), &centroids[base..base + dim]) as f64;
            if d < *slot {
                *slot = d;
            }
        }
    }

    let assign = |centroids: &[f32]| -> (Vec<u32>, f64) {
        let pairs: Vec<(u32, f32)> = (0..rows)
            .into_par_iter()
            .map(|i| nearest_centroid(row(i), centroids, dim, k))
            .collect();
        let inertia: f64 = pairs.iter().map(|&(_, d)| d as f64).sum();
        (pairs.into_iter().map(|(c, _)| c).collect(), inertia)
    };

    let (mut assignment, mut inertia) = assign(&centroids);
    let mut history = vec![inertia];
    for _ in 0..max_iter {
        // update step: centroid = mean of members (f64 accumulation)
        let mut sums = vec![0.0f64; k * dim];
        let mut counts = vec![0usize; k];
        for (i, &a) in assignment.iter().enumerate() {
            let c = a as usize;
            counts[c] += 1;
            let base = c * dim;
            for (s, &x) in sums[base..base + dim].iter_mut().zip(row(i)) {
                *s += x as f64;
            }
        }
        for c in 0..k {
            if counts[c] == 0 {
                // re-seed from the row farthest from its assigned centroid
                let far = (0..rows)
                    .max_by(|&a, &b| {
                        let da = dist_sq(row(a), &centroids[assignment[a] as usize * dim..][..dim]);
                        let db = dist_sq(row(b), &centroids[assignment[b] as usize * dim..][..dim]);
                        da.partial_cmp(&db).unwrap().then(b.cmp(&a)) // ties: lowest row
                    })
                    .unwrap();
                centroids[c * dim..(c + 1) * dim].copy_from_slice(row(far));
            } else {
                let inv = 1.0 / counts[c] as f64;
                for (dst, &s) in centroids[c * dim..(c + 1) * dim].iter_mut().zip(&sums[c * dim..]) {
                    *dst = (s * inv) as f32;
                }
            }
        }
        let (next_assignment, next_inertia) = assign(&centroids);
        assert!(
            next_inertia <= inertia * (1.0 + 1e-9) + 1e-12,
            "kmeans inertia increased: {inertia} -> {next_inertia}"
        );
        let converged = next_assignment == assignment;
        assignment = next_assignment;
        inertia = next_inertia;
        history.push(inertia);
        if converged {
            break;
        }
    }

    Ok(KMeansResult {
        k,
        dim,
        centroids,
        assignment,
        inertia,
        inertia_history: history,
    })
}

/// Entropy of one cluster's region distribution, in bits, plus the mean
/// over clusters.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClusterSpread {
    pub cluster: u32,
    pub size: usize,
    pub distinct_regions: usize,
    pub entropy_bits: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpreadReport {
    pub per_cluster: Vec<ClusterSpread>,
    /// Mean entropy across non-empty clusters.
    pub mean_entropy_bits: f64,
}

/// For each cluster of `result`, the Shannon entropy (bits) of the region
/// histogram of its members. `regions[i]` is the region label of row `i`
/// (aligned with `result.assignment`). Clusters confined to one region
/// score 0; clusters uniform over r regions score log2(r).
pub fn cluster_spread(result: &KMeansResult, regions: &[u32]) -> SpreadReport {
    assert_eq!(
        regions.len(),
        result.assignment.len(),
        "one region label per clustered row"
    );
    let mut per_cluster = Vec::with_capacity(result.k);
    let mut total = 0.0;
    let mut populated = 0usize;
    for c in 0..result.k as u32 {
        let mut hist = std::collections::BTreeMap::new();
        for (i, &a) in result.assignment.iter().enumerate() {
            if a == c {
                *hist.entry(regions[i]).or_insert(0usize) += 1;
            }
        }
        let size: usize = hist.values().sum();
        let entropy_bits = if size == 0 {
            0.0
        } else {
            let n = size as f64;
            -hist
                .values()
                .map(|&cnt| {
                    let p = cnt as f64 / n;
                    p * p.log2()
                })
                .sum::<f64>()
        };
        if size > 0 {
            populated += 1;
            total += entropy_bits;
        }
        per_cluster.push(ClusterSpread {
            cluster: c,
            size,
            distinct_regions: hist.len(),
            entropy_bits,
        });
    }
    SpreadReport {
        per_cluster,
        mean_entropy_bits: if populated == 0 { 0.0 } else { total / populated as f64 },
    }
}

/// Whether a matched 3D point projects inside the query image bounds under
/// the (ground-truth) query pose.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum FrustumLabel {
    Inside,
    Outside,
}

impl std::fmt::Display for FrustumLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            FrustumLabel::Inside => "inside",
            FrustumLabel::Outside => "outside",
        })
    }
}

/// Classify each match by whether its 3D point lies in the query view
/// frustum: in front of the camera and projecting within
/// `[-margin, width+margin] x [-margin, height+margin]` (inclusive bounds).
pub fn frustum_classify(
    matches: &MatchSet,
    query_pose: &Pose,
    intrinsics: &CameraIntrinsics,
    margin_px: f64,
) -> Vec<FrustumLabel> {
    matches
        .matches
        .iter()
        .map(|m| {
            let x = m.point_coord.map(|v| v as f64);
            let y = query_pose.transform(&x);
            if y.z <= 1e-9 {
                return FrustumLabel::Outside;
            }
            let u = intrinsics.fx * y.x / y.z + intrinsics.cx;
            let v = intrinsics.fy * y.y / y.z + intrinsics.cy;
            let w = intrinsics.width as f64;
            let h = intrinsics.height as f64;
            if u >= -margin_px && u <= w + margin_px && v >= -margin_px && v <= h + margin_px {
                FrustumLabel::Inside
            } else {
                FrustumLabel::Outside
            }
        })
        .collect()
}
