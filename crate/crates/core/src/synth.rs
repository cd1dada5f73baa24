//! Synthetic localization scenes with a controllable level of perceptual
//! aliasing, providing exact ground truth for every pipeline stage.
//!
//! The scene is a row of regions spaced far apart along the x axis. Each
//! region holds points uniform in a unit box. A configurable fraction of
//! each region's true local descriptors comes from one shared bank reused
//! across ALL regions — the same visual detail appearing in several places,
//! the repeated-structure failure mode this whole pipeline exists to fix —
//! while per-image global descriptors are drawn from well-separated
//! region-specific clusters, so they do tell regions apart. Database and
//! query cameras each look at a single region from a jittered frontal
//! position.
//!
//! All randomness flows from one seeded generator in a fixed documented
//! order (point coordinates, shared descriptor bank, unique descriptors,
//! global cluster centers, then per-image data: db cameras/observations/
//! globals, query cameras/observations/globals), so scenes are bitwise
//! reproducible per seed.

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pose::project;
use crate::types::{
    normalize_in_place, CameraIntrinsics, DescriptorBank, DescriptorKind, MatchSet, Observation,
    Point3D, Pose,
};

/// Spread of per-image global descriptors around their region's cluster
/// center, before renormalization.
const GLOBAL_CLUSTER_SIGMA: f64 = 0.02;

/// Fewest visible points a camera may have.
const MIN_VISIBLE: usize = 6;

/// Scene parameters. `aliasing` is the fraction of each region's true local
/// descriptors drawn from the bank shared across regions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_regions: usize,
    pub points_per_region: usize,
    pub n_db_images: usize,
    pub n_query_images: usize,
    pub local_dim: usize,
    pub global_dim: usize,
    pub aliasing: f64,
    pub local_noise_sigma: f64,
    pub keypoint_noise_px: f64,
    pub region_spacing: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_regions: 4,
            points_per_region: 50,
            n_db_images: 8,
            n_query_images: 8,
            local_dim: 64,
            global_dim: 256,
            aliasing: 0.8,
            local_noise_sigma: 0.05,
            keypoint_noise_px: 0.5,
            region_spacing: 50.0,
            seed: 0,
        }
    }
}

/// A generated scene: map, database images (cameras, observations,
/// descriptors) and query images with ground truth.
///
/// Image ids are dense: db image `i`'s local bank is `db_local_banks[i]`
/// and its global descriptor is row `i` of `db_global_bank`; likewise for
/// queries. Cameras view region `index % n_regions`.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScene {
    pub config: SynthConfig,
    pub points: Vec<Point3D>,
    pub db_cameras: Vec<(Pose, CameraIntrinsics)>,
    pub query_cameras: Vec<(Pose, CameraIntrinsics)>,
    /// Database observations; `image_id` indexes `db_local_banks`.
    pub observations: Vec<Observation>,
    pub db_local_banks: Vec<DescriptorBank>,
    pub db_global_bank: DescriptorBank,
    pub query_local_banks: Vec<DescriptorBank>,
    /// Per query image, aligned with its local bank rows.
    pub query_keypoints: Vec<Vec<[f32; 2]>>,
    pub query_global_bank: DescriptorBank,
    /// Ground truth: per query image, the observed point id for each
    /// keypoint (aligned with `query_keypoints`).
    pub query_gt_points: Vec<Vec<u64>>,
}

impl SyntheticScene {
    /// Region a point belongs to (point ids are dense by construction).
    pub fn region_of_point(&self, point_id: u64) -> u32 {
        (point_id / self.config.points_per_region as u64) as u32
    }

    pub fn region_of_db_image(&self, image_id: u32) -> u32 {
        image_id % self.config.n_regions as u32
    }

    pub fn region_of_query(&self, query_index: usize) -> u32 {
        (query_index % self.config.n_regions) as u32
    }

    /// Largest distance between two map points (the scene diameter).
    pub fn diameter(&self) -> f64 {
        let mut d = 0.0f64;
        for a in &self.points {
            for b in &self.points {
                d = d.max((a.coord - b.coord).norm());
            }
        }
        d
    }
}

fn unit_gaussian(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f32> {
    let n = Normal::new(0.0f64, 1.0).unwrap();
    loop {
        let mut v: Vec<f32> = (0..dim).map(|_| n.sample(rng) as f32).collect();
        if normalize_in_place(&mut v).is_ok() {
            return v;
        }
    }
}

/// Gaussian sample rejected until it lies within `5 * sigma` (keeps every
/// keypoint within a provable distance of its true projection).
fn bounded_noise(rng: &mut ChaCha8Rng, sigma: f64) -> f64 {
    if sigma == 0.0 {
        return 0.0;
    }
    let n = Normal::new(0.0, sigma).unwrap();
    loop {
        let x = n.sample(rng);
        if x.abs() <= 5.0 * sigma {
            return x;
        }
    }
}

/// World-to-camera pose looking from `eye` toward `target`.
fn look_at(eye: Vector3<f64>, target: Vector3<f64>) -> Pose {
    let z = (target - eye).normalize();
    let x = Vector3::y().cross(&z).normalize();
    let y = z.cross(&x);
    let r = Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]);
    let t = -r * eye;
    Pose::from_matrix(&r, t).expect("look-at frames are orthonormal")
}

struct ImageDraw {
    keypoints: Vec<[f32; 2]>,
    point_ids: Vec<u64>,
    bank: DescriptorBank,
}

/// Project a camera's region points, apply bounded keypoint noise, and
/// noise+renormalize the observed local descriptors.
#[allow(clippy::too_many_arguments)]
fn observe_region(
    rng: &mut ChaCha8Rng,
    cfg: &SynthConfig,
    camera_index: usize,
    pose: &Pose,
    intr: &CameraIntrinsics,
    region: usize,
    points: &[Point3D],
    true_desc: &[Vec<f32>],
) -> Result<ImageDraw> {
    let start = region * cfg.points_per_region;
    let mut keypoints = Vec::new();
    let mut point_ids = Vec::new();
    let mut rows = Vec::new();
    for idx in start..start + cfg.points_per_region {
        let p = &points[idx];
        let Ok([u, v]) = project(pose, intr, &p.coord) else {
            continue;
        };
        if !(0.0..=intr.width as f64).contains(&u) || !(0.0..=intr.height as f64).contains(&v) {
            continue;
        }
        let kp = [
            (u + bounded_noise(rng, cfg.keypoint_noise_px)) as f32,
            (v + bounded_noise(rng, cfg.keypoint_noise_px)) as f32,
        ];
        let desc = if cfg.local_noise_sigma > 0.0 {
            let n = Normal::new(0.0, cfg.local_noise_sigma).unwrap();
            let mut d: Vec<f32> = true_desc[idx]
                .iter()
                .map(|&x| x + n.sample(rng) as f32)
                .collect();
            normalize_in_place(&mut d)?;
            d
        } else {
            true_desc[idx].clone()
        };
        keypoints.push(kp);
        point_ids.push(p.id);
        rows.push(desc);
    }
    if rows.len() < MIN_VISIBLE {
        return Err(Error::InfeasibleGeometry {
            camera: camera_index,
            visible: rows.len(),
            required: MIN_VISIBLE,
        });
    }
    Ok(ImageDraw {
        keypoints,
        point_ids,
        bank: DescriptorBank::from_rows(cfg.local_dim, DescriptorKind::Local, &rows)?,
    })
}

/// Generate a scene. Deterministic (bitwise) per config.
pub fn generate(cfg: &SynthConfig) -> Result<SyntheticScene> {
    assert!(
        cfg.n_regions > 0
            && cfg.points_per_region > 0
            && cfg.n_db_images > 0
            && cfg.n_query_images > 0
            && cfg.local_dim > 0
            && cfg.global_dim > 0,
        "all counts must be positive"
    );
    assert!(
        (0.0..=1.0).contains(&cfg.aliasing),
        "aliasing must lie in [0,1]"
    );
    assert!(
        cfg.n_regions <= cfg.global_dim,
        "orthogonal region clusters need global_dim >= n_regions"
    );
    assert!(cfg.local_noise_sigma >= 0.0 && cfg.keypoint_noise_px >= 0.0);
    assert!(cfg.region_spacing > 0.0);

    let r = cfg.n_regions;
    let p = cfg.points_per_region;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    // 1. point coordinates: unit box around each region center
    let region_center =
        |i: usize| Vector3::new(i as f64 * cfg.region_spacing, 0.0, 0.0);
    let mut points = Vec::with_capacity(r * p);
    for region in 0..r {
        let c = region_center(region);
        for j in 0..p {
            let id = (region * p + j) as u64;
            let coord = c + Vector3::new(
                rng.gen_range(-0.5..0.5),
                rng.gen_range(-0.5..0.5),
                rng.gen_range(-0.5..0.5),
            );
            points.push(Point3D::new(id, coord));
        }
    }

    // 2. shared aliased bank, reused verbatim in every region
    let n_aliased = ((cfg.aliasing * p as f64).round() as usize).min(p);
    let shared: Vec<Vec<f32>> = (0..n_aliased)
        .map(|_| unit_gaussian(&mut rng, cfg.local_dim))
        .collect();

    // 3. remaining true descriptors are unique per point
    let mut true_desc: Vec<Vec<f32>> = Vec::with_capacity(r * p);
    for _region in 0..r {
        for j in 0..p {
            match shared.get(j) {
                Some(aliased) => true_desc.push(aliased.clone()),
                None => true_desc.push(unit_gaussian(&mut rng, cfg.local_dim)),
            }
        }
    }

    // 4. global cluster centers: Gram-Schmidt orthonormalized Gaussians —
    // exactly 90 degrees apart and dense in every coordinate, so windowed
    // dimension reductions keep them separated
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(r);
    let n01 = Normal::new(0.0f64, 1.0).unwrap();
    while centers.len() < r {
        let mut v: Vec<f64> = (0..cfg.global_dim).map(|_| n01.sample(&mut rng)).collect();
        for c in &centers {
            let dot: f64 = v.iter().zip(c).map(|(a, b)| a * b).sum();
            for (x, b) in v.iter_mut().zip(c) {
                *x -= dot * b;
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            for x in v.iter_mut() {
                *x /= norm;
            }
            centers.push(v);
        }
    }

    let intr = CameraIntrinsics::new(500.0, 500.0, 320.0, 240.0, 640, 480);
    let make_camera = |rng: &mut ChaCha8Rng, region: usize| {
        let c = region_center(region);
        let eye = c + Vector3::new(
            rng.gen_range(-0.35..0.35),
            rng.gen_range(-0.35..0.35),
            -(4.0 + rng.gen_range(-0.3..0.3)),
        );
        look_at(eye, c)
    };
    let draw_global = |rng: &mut ChaCha8Rng, region: usize| -> Vec<f32> {
        let n = Normal::new(0.0, GLOBAL_CLUSTER_SIGMA).unwrap();
        let mut v: Vec<f32> = centers[region]
            .iter()
            .map(|&x| (x + n.sample(rng)) as f32)
            .collect();
        normalize_in_place(&mut v).expect("cluster centers are unit vectors");
        v
    };

    // 5-7. database images
    let mut db_cameras = Vec::with_capacity(cfg.n_db_images);
    let mut db_local_banks = Vec::with_capacity(cfg.n_db_images);
    let mut observations = Vec::new();
    let mut db_global_rows = Vec::with_capacity(cfg.n_db_images);
    for i in 0..cfg.n_db_images {
        let region = i % r;
        let pose = make_camera(&mut rng, region);
        let draw = observe_region(&mut rng, cfg, i, &pose, &intr, region, &points, &true_desc)?;
        for (row, (&pid, &kp)) in draw.point_ids.iter().zip(&draw.keypoints).enumerate() {
            observations.push(Observation {
                point_id: pid,
                image_id: i as u32,
                keypoint: kp,
                descriptor_row: row as u32,
            });
        }
        db_cameras.push((pose, intr));
        db_local_banks.push(draw.bank);
        db_global_rows.push(draw_global(&mut rng, region));
    }
    let db_global_bank =
        DescriptorBank::from_rows(cfg.global_dim, DescriptorKind::Global, &db_global_rows)?;

    // 8-10. query images (camera indices continue after the db images)
    let mut query_cameras = Vec::with_capacity(cfg.n_query_images);
    let mut query_local_banks = Vec::with_capacity(cfg.n_query_images);
    let mut query_keypoints = Vec::with_capacity(cfg.n_query_images);
    let mut query_gt_points = Vec::with_capacity(cfg.n_query_images);
    let mut query_global_rows = Vec::with_capacity(cfg.n_query_images);
    for q in 0..cfg.n_query_images {
        let region = q % r;
        let pose = make_camera(&mut rng, region);
        let draw = observe_region(
            &mut rng,
            cfg,
            cfg.n_db_images + q,
            &pose,
            &intr,
            region,
            &points,
            &true_desc,
        )?;
        query_cameras.push((pose, intr));
        query_keypoints.push(draw.keypoints);
        query_gt_points.push(draw.point_ids);
        query_local_banks.push(draw.bank);
        query_global_rows.push(draw_global(&mut rng, region));
    }
    let query_global_bank =
        DescriptorBank::from_rows(cfg.global_dim, DescriptorKind::Global, &query_global_rows)?;

    Ok(SyntheticScene {
        config: *cfg,
        points,
        db_cameras,
        query_cameras,
        observations,
        db_local_banks,
        db_global_bank,
        query_local_banks,
        query_keypoints,
        query_global_bank,
        query_gt_points,
    })
}

/// Fraction of `matches` (from query image `query_index`) whose matched
/// point is neither the ground-truth point nor in the ground-truth point's
/// region. Wrong point in the RIGHT region does not count: it is the
/// cross-region confusion that breaks pose estimation.
pub fn false_match_rate(
    scene: &SyntheticScene,
    query_index: usize,
    matches: &MatchSet,
) -> Result<f64> {
    let truth: std::collections::HashMap<[u32; 2], u64> = scene.query_keypoints[query_index]
        .iter()
        .zip(&scene.query_gt_points[query_index])
        .map(|(kp, &pid)| ([kp[0].to_bits(), kp[1].to_bits()], pid))
        .collect();
    if matches.is_empty() {
        return Ok(0.0);
    }
    let mut false_matches = 0usize;
    for m in &matches.matches {
        let key = [m.query_keypoint[0].to_bits(), m.query_keypoint[1].to_bits()];
        let Some(&gt) = truth.get(&key) else {
            return Err(Error::UnknownKeypoint {
                x: m.query_keypoint[0],
                y: m.query_keypoint[1],
            });
        };
        if m.point_id != gt && scene.region_of_point(m.point_id) != scene.region_of_point(gt) {
            false_matches += 1;
        }
    }
    Ok(false_matches as f64 / matches.len() as f64)
}
