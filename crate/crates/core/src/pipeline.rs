//! End-to-end plumbing: scene directories on disk, query-side fusion, the
//! batch localization driver and prediction scoring.
//!
//! A *scene directory* is the on-disk mirror of a [`SyntheticScene`] (or of
//! any dataset converted into the same shape):
//!
//! ```text
//! scene/
//!   scene.json          generating config (optional for imported data)
//!   points.txt          point_id x y z
//!   observations.txt    point_id image_id kp_x kp_y descriptor_row
//!   intrinsics.json     {image name: {fx, fy, cx, cy, width, height}}
//!   db_poses.txt        name qw qx qy qz tx ty tz   (world-to-camera)
//!   query_poses.txt     ground-truth query poses, same format
//!   db/
//!     images.txt        id name   (ids dense, 0..n, in order)
//!     <name>.dsb        local descriptors + keypoints, one per image
//!     global.dsb        one global descriptor per image, row = image id
//!   query/
//!     images.txt, <name>.dsb, global.dsb   (same layout)
//!     truth.txt         query_image_id row point_id
//! ```
//!
//! The localization driver mirrors the codebook build on the query side:
//! each local descriptor is fused with the query's reduced global
//! descriptor under the exact fusion settings frozen into the codebook.
//! The *light* variant reduces the query image's own global descriptor;
//! the *heavy* variant first swaps it for the nearest database global
//! (full-dimension L2), which costs the database globals in memory but
//! lets the query inherit a database-conditions appearance.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rayon::prelude::*;

use crate::codebook::{build_codebook, Codebook, CodebookConfig};
use crate::error::{Error, Result};
use crate::fuse::{fuse_into, nearest_global};
use crate::io::{
    intrinsics_for, read_descriptor_bank, read_intrinsics, read_observations, read_points,
    read_poses, write_descriptor_bank, write_intrinsics, write_observations, write_points,
    write_poses,
};
use crate::metrics::{aggregate, pose_error, EvalReport, PoseError, ThresholdSpec};
use crate::pose::{ransac_pnp, RansacConfig};
use crate::reduce::{build_reducer, ReduceMethod, Reducer};
use crate::search::{build_index, match_bank_with, IndexMode};
use crate::synth::{SynthConfig, SyntheticScene};
use crate::types::{
    CameraIntrinsics, DescriptorBank, DescriptorKind, Observation, Point3D, Pose,
};

// ---------------------------------------------------------------------------
// image sets and scene directories
// ---------------------------------------------------------------------------

/// One set of images (database or query): names, per-image local banks with
/// their keypoints, and the global bank whose row index is the image id.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageSet {
    pub names: Vec<String>,
    pub local_banks: Vec<DescriptorBank>,
    /// Per image, aligned with the local bank rows.
    pub keypoints: Vec<Vec<[f32; 2]>>,
    pub global_bank: DescriptorBank,
}

impl ImageSet {
    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }
}

/// Write an image set into `dir` (created if missing): `images.txt`, one
/// `<name>.dsb` per image (locals + keypoints) and `global.dsb`.
pub fn write_image_set(dir: impl AsRef<Path>, set: &ImageSet) -> Result<()> {
    let dir = dir.as_ref();
    assert_eq!(set.names.len(), set.local_banks.len());
    assert_eq!(set.names.len(), set.keypoints.len());
    assert_eq!(set.names.len(), set.global_bank.rows(), "one global per image");
    fs::create_dir_all(dir)?;
    let mut index = String::from("# id name\n");
    for (i, name) in set.names.iter().enumerate() {
        index.push_str(&format!("{i} {name}\n"));
        write_descriptor_bank(
            dir.join(format!("{name}.dsb")),
            &set.local_banks[i],
            Some(&set.keypoints[i]),
        )?;
    }
    fs::write(dir.join("images.txt"), index)?;
    write_descriptor_bank(dir.join("global.dsb"), &set.global_bank, None)?;
    Ok(())
}

/// Load an image set written by [`write_image_set`].
///
/// Enforces the dense-id convention (`images.txt` ids are `0..n` in order),
/// keypoints on every local bank, and one global row per image.
pub fn load_image_set(dir: impl AsRef<Path>) -> Result<ImageSet> {
    let dir = dir.as_ref();
    let text = fs::read_to_string(dir.join("images.txt"))?;
    let mut names = Vec::new();
    for (line_no, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let mut it = line.split_whitespace();
        let (id, name) = match (it.next(), it.next(), it.next()) {
            (Some(id), Some(name), None) => (id, name),
            _ => {
                return Err(Error::ParseError {
                    line: line_no + 1,
                    message: "expected 2 fields (id name)".to_string(),
                })
            }
        };
        let id: usize = id.parse().map_err(|_| Error::ParseError {
            line: line_no + 1,
            message: format!("cannot parse image id from \"{id}\""),
        })?;
        if id != names.len() {
            return Err(Error::ParseError {
                line: line_no + 1,
                message: format!("image ids must be dense and in order; expected {}, got {id}", names.len()),
            });
        }
        names.push(name.to_string());
    }

    let mut local_banks = Vec::with_capacity(names.len());
    let mut keypoints = Vec::with_capacity(names.len());
    for name in &names {
        let (bank, kps) = read_descriptor_bank(dir.join(format!("{name}.dsb")))?;
        if bank.kind() != DescriptorKind::Local {
            return Err(Error::ParseError {
                line: 0,
                message: format!("bank for image \"{name}\" is not a local bank"),
            });
        }
        let kps = kps.ok_or_else(|| Error::ParseError {
            line: 0,
            message: format!("local bank for image \"{name}\" lacks keypoints"),
        })?;
        local_banks.push(bank);
        keypoints.push(kps);
    }

    let (global_bank, _) = read_descriptor_bank(dir.join("global.dsb"))?;
    if global_bank.kind() != DescriptorKind::Global {
        return Err(Error::ParseError {
            line: 0,
            message: "global.dsb is not a global bank".to_string(),
        });
    }
    if global_bank.rows() != names.len() {
        return Err(Error::ParseError {
            line: 0,
            message: format!(
                "global bank has {} rows for {} images",
                global_bank.rows(),
                names.len()
            ),
        });
    }
    Ok(ImageSet {
        names,
        local_banks,
        keypoints,
        global_bank,
    })
}

/// A scene directory loaded back into memory.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedScene {
    /// Present when the scene was generated (scene.json); absent for
    /// imported data.
    pub config: Option<SynthConfig>,
    pub points: Vec<Point3D>,
    pub observations: Vec<Observation>,
    pub intrinsics: BTreeMap<String, CameraIntrinsics>,
    pub db: ImageSet,
    pub db_poses: Vec<(String, Pose)>,
    pub query: ImageSet,
    /// Ground-truth query poses.
    pub query_poses: Vec<(String, Pose)>,
    /// Ground truth: per query image, the observed point id for each
    /// keypoint row.
    pub query_truth: Vec<Vec<u64>>,
}

/// Database-image names are `db_000`, `db_001`, …
pub fn db_image_name(id: usize) -> String {
    format!("db_{id:03}")
}

/// Query-image names are `query_000`, `query_001`, …
pub fn query_image_name(id: usize) -> String {
    format!("query_{id:03}")
}

/// Write a synthetic scene as a scene directory.
pub fn write_scene(scene: &SyntheticScene, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    fs::write(
        dir.join("scene.json"),
        serde_json::to_string_pretty(&scene.config)? + "\n",
    )?;
    write_points(dir.join("points.txt"), &scene.points)?;
    write_observations(dir.join("observations.txt"), &scene.observations)?;

    let db_names: Vec<String> = (0..scene.db_local_banks.len()).map(db_image_name).collect();
    let query_names: Vec<String> =
        (0..scene.query_local_banks.len()).map(query_image_name).collect();

    let mut intrinsics = BTreeMap::new();
    for (name, (_, k)) in db_names.iter().zip(&scene.db_cameras) {
        intrinsics.insert(name.clone(), *k);
    }
    for (name, (_, k)) in query_names.iter().zip(&scene.query_cameras) {
        intrinsics.insert(name.clone(), *k);
    }
    write_intrinsics(dir.join("intrinsics.json"), &intrinsics)?;

    let db_poses: Vec<(String, Pose)> = db_names
        .iter()
        .zip(&scene.db_cameras)
        .map(|(n, (p, _))| (n.clone(), *p))
        .collect();
    write_poses(dir.join("db_poses.txt"), &db_poses)?;
    let query_poses: Vec<(String, Pose)> = query_names
        .iter()
        .zip(&scene.query_cameras)
        .map(|(n, (p, _))| (n.clone(), *p))
        .collect();
    write_poses(dir.join("query_poses.txt"), &query_poses)?;

    // Database keypoints live in the observation list; regroup them per
    // image so each .dsb row carries its pixel location.
    let mut db_keypoints: Vec<Vec<Option<[f32; 2]>>> = scene
        .db_local_banks
        .iter()
        .map(|b| vec![None; b.rows()])
        .collect();
    for o in &scene.observations {
        db_keypoints[o.image_id as usize][o.descriptor_row as usize] = Some(o.keypoint);
    }
    let db_keypoints: Vec<Vec<[f32; 2]>> = db_keypoints
        .into_iter()
        .map(|rows| {
            rows.into_iter()
                .map(|kp| kp.expect("every database descriptor row has an observation"))
                .collect()
        })
        .collect();

    write_image_set(
        dir.join("db"),
        &ImageSet {
            names: db_names,
            local_banks: scene.db_local_banks.clone(),
            keypoints: db_keypoints,
            global_bank: scene.db_global_bank.clone(),
        },
    )?;
    write_image_set(
        dir.join("query"),
        &ImageSet {
            names: query_names,
            local_banks: scene.query_local_banks.clone(),
            keypoints: scene.query_keypoints.clone(),
            global_bank: scene.query_global_bank.clone(),
        },
    )?;

    let mut truth = String::from("# query_image_id row point_id\n");
    for (i, ids) in scene.query_gt_points.iter().enumerate() {
        for (r, pid) in ids.iter().enumerate() {
            truth.push_str(&format!("{i} {r} {pid}\n"));
        }
    }
    fs::write(dir.join("query").join("truth.txt"), truth)?;
    Ok(())
}

/// Load a scene directory back into memory, cross-checking that poses,
/// image lists and truth rows all line up.
pub fn load_scene(dir: impl AsRef<Path>) -> Result<LoadedScene> {
    let dir = dir.as_ref();
    let config = match fs::read_to_string(dir.join("scene.json")) {
        Ok(text) => Some(serde_json::from_str(&text)?),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => None,
        Err(e) => return Err(e.into()),
    };
    let points = read_points(dir.join("points.txt"))?;
    let observations = read_observations(dir.join("observations.txt"))?;
    let intrinsics = read_intrinsics(dir.join("intrinsics.json"))?;
    let db = load_image_set(dir.join("db"))?;
    let query = load_image_set(dir.join("query"))?;
    let db_poses = read_poses(dir.join("db_poses.txt"))?;
    let query_poses = read_poses(dir.join("query_poses.txt"))?;

    for (what, set, poses) in [("db", &db, &db_poses), ("query", &query, &query_poses)] {
        let pose_names: Vec<&str> = poses.iter().map(|(n, _)| n.as_str()).collect();
        let image_names: Vec<&str> = set.names.iter().map(|s| s.as_str()).collect();
        if pose_names != image_names {
            return Err(Error::ParseError {
                line: 0,
                message: format!("{what}_poses.txt does not list the {what} images in order"),
            });
        }
        for name in &set.names {
            intrinsics_for(&intrinsics, name)?;
        }
    }

    let query_truth = read_truth(dir.join("query").join("truth.txt"), &query)?;
    Ok(LoadedScene {
        config,
        points,
        observations,
        intrinsics,
        db,
        db_poses,
        query,
        query_poses,
        query_truth,
    })
}

fn read_truth(path: impl AsRef<Path>, query: &ImageSet) -> Result<Vec<Vec<u64>>> {
    let text = fs::read_to_string(path)?;
    let mut truth: Vec<Vec<Option<u64>>> =
        query.keypoints.iter().map(|k| vec![None; k.len()]).collect();
    for (line_no, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let bad = |message: String| Error::ParseError {
            line: line_no + 1,
            message,
        };
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.len() != 3 {
            return Err(bad(format!("expected 3 fields, got {}", tokens.len())));
        }
        let img: usize =
            tokens[0].parse().map_err(|_| bad(format!("bad image id \"{}\"", tokens[0])))?;
        let row: usize =
            tokens[1].parse().map_err(|_| bad(format!("bad row \"{}\"", tokens[1])))?;
        let pid: u64 =
            tokens[2].parse().map_err(|_| bad(format!("bad point id \"{}\"", tokens[2])))?;
        let slot = truth
            .get_mut(img)
            .and_then(|rows| rows.get_mut(row))
            .ok_or_else(|| bad(format!("image {img} row {row} out of range")))?;
        if slot.replace(pid).is_some() {
            return Err(bad(format!("duplicate truth entry for image {img} row {row}")));
        }
    }
    truth
        .into_iter()
        .enumerate()
        .map(|(i, rows)| {
            rows.into_iter()
                .enumerate()
                .map(|(r, pid)| {
                    pid.ok_or_else(|| Error::ParseError {
                        line: 0,
                        message: format!("truth.txt misses image {i} row {r}"),
                    })
                })
                .collect()
        })
        .collect()
}

// ---------------------------------------------------------------------------
// codebook construction
// ---------------------------------------------------------------------------

/// Build a codebook from raw scene parts, deriving the reducer from the
/// bank shapes: it maps the global dimension down to the local dimension
/// (fusion requires both sides equal).
pub fn codebook_from_parts(
    points: &[Point3D],
    observations: &[Observation],
    local_banks: &[DescriptorBank],
    global_bank: &DescriptorBank,
    method: ReduceMethod,
    reduce_seed: u64,
    cfg: &CodebookConfig,
) -> Result<Codebook> {
    let local_dim = local_banks.first().ok_or(Error::EmptyDatabase)?.dim();
    let reducer = build_reducer(method, global_bank.dim(), local_dim, reduce_seed)?;
    build_codebook(points, observations, local_banks, global_bank, &reducer, cfg)
}

/// [`codebook_from_parts`] for an in-memory synthetic scene.
pub fn synthetic_codebook(
    scene: &SyntheticScene,
    method: ReduceMethod,
    reduce_seed: u64,
    cfg: &CodebookConfig,
) -> Result<Codebook> {
    codebook_from_parts(
        &scene.points,
        &scene.observations,
        &scene.db_local_banks,
        &scene.db_global_bank,
        method,
        reduce_seed,
        cfg,
    )
}

/// [`codebook_from_parts`] for a loaded scene directory.
pub fn scene_codebook(
    scene: &LoadedScene,
    method: ReduceMethod,
    reduce_seed: u64,
    cfg: &CodebookConfig,
) -> Result<Codebook> {
    codebook_from_parts(
        &scene.points,
        &scene.observations,
        &scene.db.local_banks,
        &scene.db.global_bank,
        method,
        reduce_seed,
        cfg,
    )
}

// ---------------------------------------------------------------------------
// localization driver
// ---------------------------------------------------------------------------

/// Which global descriptor feeds query-side fusion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    /// Use the query image's own global descriptor. No database globals
    /// needed at query time.
    Light,
    /// Swap in the nearest database global (full-dimension L2; ties go to
    /// the lowest image id). Needs the database global bank in memory.
    Heavy,
}

impl std::str::FromStr for Variant {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "light" => Ok(Variant::Light),
            "heavy" => Ok(Variant::Heavy),
            other => Err(format!("unknown variant \"{other}\" (expected light|heavy)")),
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Variant::Light => "light",
            Variant::Heavy => "heavy",
        })
    }
}

/// Everything the batch driver needs besides the data itself.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalizeOptions {
    pub variant: Variant,
    pub index_mode: IndexMode,
    /// IVF cells (ignored for exact search).
    pub n_cells: usize,
    /// IVF probes (ignored for exact search).
    pub n_probe: usize,
    pub index_seed: u64,
    /// Lowe-style ratio-test threshold on distances; `None` keeps every
    /// nearest neighbor.
    pub ratio_test: Option<f32>,
    pub ransac: RansacConfig,
}

impl Default for LocalizeOptions {
    fn default() -> Self {
        Self {
            variant: Variant::Light,
            index_mode: IndexMode::Exact,
            n_cells: 16,
            n_probe: 4,
            index_seed: 0,
            ratio_test: None,
            ransac: RansacConfig::default(),
        }
    }
}

/// Outcome of localizing one query image.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryOutcome {
    pub name: String,
    /// The estimated world-to-camera pose; `None` when RANSAC found no
    /// consensus (or there were too few matches to try).
    pub pose: Option<Pose>,
    pub num_matches: usize,
    pub num_inliers: usize,
    pub iterations_run: usize,
    /// Heavy variant only: the database image whose global was used.
    pub heavy_db_image: Option<u32>,
}

/// Fuse one query image's local bank with its (variant-dependent) reduced
/// global descriptor, under the fusion settings frozen into the codebook.
///
/// Returns the fused bank plus, for the heavy variant, the database image
/// id whose global descriptor was substituted.
pub fn fused_query_bank(
    cb: &Codebook,
    reducer: &Reducer,
    local: &DescriptorBank,
    query_global_full: &[f32],
    db_globals: Option<&DescriptorBank>,
    variant: Variant,
) -> Result<(DescriptorBank, Option<u32>)> {
    if local.dim() != cb.dim() {
        return Err(Error::ReducerMismatch {
            query_dim: local.dim(),
            expected: cb.dim(),
        });
    }
    if query_global_full.len() != reducer.in_dim() {
        return Err(Error::ReducerMismatch {
            query_dim: query_global_full.len(),
            expected: reducer.in_dim(),
        });
    }
    let (global_full, source) = match variant {
        Variant::Light => (query_global_full.to_vec(), None),
        Variant::Heavy => {
            let bank = db_globals.ok_or(Error::EmptyDatabase)?;
            let row = nearest_global(bank, query_global_full)?;
            (bank.row(row as usize), Some(row))
        }
    };
    let reduced = if cb.renormalize_globals() {
        reducer.reduce(&global_full)?
    } else {
        reducer.reduce_raw(&global_full)?
    };
    let fusion = cb.fusion();
    let dim = cb.dim();
    let mut flat = vec![0.0f32; local.rows() * dim];
    let mut row_buf = vec![0.0f32; dim];
    for r in 0..local.rows() {
        local.row_into(r, &mut row_buf);
        fuse_into(&fusion, &row_buf, &reduced, &mut flat[r * dim..(r + 1) * dim])?;
    }
    let bank = DescriptorBank::from_flat_f32(dim, DescriptorKind::Local, flat)?;
    Ok((bank, source))
}

/// Localize every image of a query set against a codebook.
///
/// The search index is built once, then query images run in parallel. A
/// query that fails (no consensus, or fewer than three matches) gets
/// `pose: None` rather than aborting the batch; hard errors (shape
/// mismatches, missing intrinsics) abort.
pub fn localize_set(
    cb: &Codebook,
    queries: &ImageSet,
    intrinsics: &BTreeMap<String, CameraIntrinsics>,
    db_globals: Option<&DescriptorBank>,
    opts: &LocalizeOptions,
) -> Result<Vec<QueryOutcome>> {
    let reducer = cb.reducer_spec().build()?;
    let index = build_index(cb, opts.index_mode, opts.n_cells, opts.n_probe, opts.index_seed)?;
    (0..queries.len())
        .into_par_iter()
        .map(|i| {
            let name = &queries.names[i];
            let k = intrinsics_for(intrinsics, name)?;
            let global_full = queries.global_bank.row(i);
            let (fused, heavy_db_image) = fused_query_bank(
                cb,
                &reducer,
                &queries.local_banks[i],
                &global_full,
                db_globals,
                opts.variant,
            )?;
            let matches = match_bank_with(&index, &fused, &queries.keypoints[i], opts.ratio_test)?;
            let outcome = match ransac_pnp(&matches, k, &opts.ransac) {
                Ok(r) => QueryOutcome {
                    name: name.clone(),
                    pose: r.success.then_some(r.pose),
                    num_matches: matches.len(),
                    num_inliers: r.num_inliers,
                    iterations_run: r.iterations_run,
                    heavy_db_image,
                },
                Err(Error::TooFewMatches { .. }) => QueryOutcome {
                    name: name.clone(),
                    pose: None,
                    num_matches: matches.len(),
                    num_inliers: 0,
                    iterations_run: 0,
                    heavy_db_image,
                },
                Err(e) => return Err(e),
            };
            Ok(outcome)
        })
        .collect()
}

/// [`localize_set`] against an in-memory synthetic scene (no files).
pub fn localize_synthetic(
    scene: &SyntheticScene,
    cb: &Codebook,
    opts: &LocalizeOptions,
) -> Result<Vec<QueryOutcome>> {
    let names: Vec<String> = (0..scene.query_local_banks.len()).map(query_image_name).collect();
    let mut intrinsics = BTreeMap::new();
    for (name, (_, k)) in names.iter().zip(&scene.query_cameras) {
        intrinsics.insert(name.clone(), *k);
    }
    let queries = ImageSet {
        names,
        local_banks: scene.query_local_banks.clone(),
        keypoints: scene.query_keypoints.clone(),
        global_bank: scene.query_global_bank.clone(),
    };
    localize_set(cb, &queries, &intrinsics, Some(&scene.db_global_bank), opts)
}

/// The successful predictions as a named pose list (failures dropped),
/// ready for [`crate::io::write_poses`].
pub fn predicted_poses(outcomes: &[QueryOutcome]) -> Vec<(String, Pose)> {
    outcomes
        .iter()
        .filter_map(|o| o.pose.map(|p| (o.name.clone(), p)))
        .collect()
}

// ---------------------------------------------------------------------------
// scoring
// ---------------------------------------------------------------------------

/// Score predictions against ground truth by image name.
///
/// Every ground-truth image counts; one without a prediction is a failure.
/// Predictions for unknown names are ignored, so a prediction file can be
/// scored against any subset of its scene.
pub fn evaluate_predictions(
    predictions: &[(String, Pose)],
    ground_truth: &[(String, Pose)],
    thresholds: &ThresholdSpec,
) -> EvalReport {
    let by_name: std::collections::HashMap<&str, &Pose> =
        predictions.iter().map(|(n, p)| (n.as_str(), p)).collect();
    let errors: Vec<Option<PoseError>> = ground_truth
        .iter()
        .map(|(name, gt)| by_name.get(name.as_str()).map(|p| pose_error(p, gt)))
        .collect();
    aggregate(&errors, thresholds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::generate;

    fn small_config() -> SynthConfig {
        SynthConfig {
            n_regions: 2,
            points_per_region: 40,
            n_db_images: 6,
            n_query_images: 4,
            local_dim: 32,
            global_dim: 64,
            aliasing: 0.5,
            local_noise_sigma: 0.02,
            keypoint_noise_px: 0.3,
            region_spacing: 50.0,
            seed: 9,
        }
    }

    fn small_scene() -> SyntheticScene {
        generate(&small_config()).unwrap()
    }

    fn default_codebook(scene: &SyntheticScene) -> Codebook {
        synthetic_codebook(scene, ReduceMethod::Gaussian, 0, &CodebookConfig::default()).unwrap()
    }

    #[test]
    fn scene_directory_round_trips() {
        let scene = small_scene();
        let dir = tempfile::tempdir().unwrap();
        write_scene(&scene, dir.path()).unwrap();
        let loaded = load_scene(dir.path()).unwrap();

        assert_eq!(loaded.config.as_ref(), Some(&scene.config));
        assert_eq!(loaded.points, scene.points);
        assert_eq!(loaded.observations, scene.observations);
        assert_eq!(loaded.db.local_banks, scene.db_local_banks);
        assert_eq!(loaded.db.global_bank, scene.db_global_bank);
        assert_eq!(loaded.query.local_banks, scene.query_local_banks);
        assert_eq!(loaded.query.keypoints, scene.query_keypoints);
        assert_eq!(loaded.query.global_bank, scene.query_global_bank);
        assert_eq!(loaded.query_truth, scene.query_gt_points);
        assert_eq!(loaded.db.names[0], "db_000");
        assert_eq!(loaded.query.names[3], "query_003");

        // Poses pass through text at 9 significant digits.
        for ((_, loaded_pose), (gt_pose, _)) in loaded.query_poses.iter().zip(&scene.query_cameras)
        {
            let e = pose_error(loaded_pose, gt_pose);
            assert!(e.rotation_deg < 1e-6, "rotation drift {}", e.rotation_deg);
            assert!(e.translation < 1e-5, "translation drift {}", e.translation);
        }
    }

    #[test]
    fn codebook_from_disk_matches_codebook_from_memory() {
        let scene = small_scene();
        let dir = tempfile::tempdir().unwrap();
        write_scene(&scene, dir.path()).unwrap();
        let loaded = load_scene(dir.path()).unwrap();

        let cfg = CodebookConfig::default();
        let from_memory = synthetic_codebook(&scene, ReduceMethod::Gaussian, 7, &cfg).unwrap();
        let from_disk = scene_codebook(&loaded, ReduceMethod::Gaussian, 7, &cfg).unwrap();
        assert_eq!(from_memory, from_disk);
        let a: Vec<u32> = from_memory.descriptors_f32().iter().map(|x| x.to_bits()).collect();
        let b: Vec<u32> = from_disk.descriptors_f32().iter().map(|x| x.to_bits()).collect();
        assert_eq!(a, b, "descriptor bits must survive the file system");
    }

    #[test]
    fn light_localization_recovers_all_small_scene_queries() {
        let scene = small_scene();
        let cb = default_codebook(&scene);
        let outcomes =
            localize_synthetic(&scene, &cb, &LocalizeOptions::default()).unwrap();
        assert_eq!(outcomes.len(), 4);
        let diameter = scene.diameter();
        for (i, o) in outcomes.iter().enumerate() {
            let pose = o.pose.expect("clean scene localizes every query");
            let e = pose_error(&pose, &scene.query_cameras[i].0);
            assert!(e.rotation_deg < 1.0, "query {i}: rotation {}", e.rotation_deg);
            assert!(
                e.translation < 0.05 * diameter,
                "query {i}: translation {} vs diameter {diameter}",
                e.translation
            );
            assert!(o.heavy_db_image.is_none());
            assert!(o.num_inliers >= 6);
        }
    }

    #[test]
    fn heavy_equals_light_when_query_global_is_in_database() {
        let scene = small_scene();
        let cb = default_codebook(&scene);

        // Replace each query's global descriptor with a database global of
        // its own region, bitwise: heavy's nearest-neighbor lookup then
        // finds distance zero and substitutes the identical vector.
        let g = scene.config.global_dim;
        let mut rows: Vec<Vec<f32>> = Vec::new();
        let mut expected_src = Vec::new();
        for q in 0..scene.query_local_banks.len() {
            let region = scene.region_of_query(q);
            let db_row = (0..scene.db_local_banks.len() as u32)
                .find(|&i| scene.region_of_db_image(i) == region)
                .unwrap();
            rows.push(scene.db_global_bank.row(db_row as usize));
            expected_src.push(db_row);
        }
        let mut doctored = scene.clone();
        doctored.query_global_bank =
            DescriptorBank::from_rows(g, DescriptorKind::Global, &rows).unwrap();

        let light = localize_synthetic(&doctored, &cb, &LocalizeOptions::default()).unwrap();
        let heavy_opts = LocalizeOptions {
            variant: Variant::Heavy,
            ..LocalizeOptions::default()
        };
        let heavy = localize_synthetic(&doctored, &cb, &heavy_opts).unwrap();

        for ((l, h), src) in light.iter().zip(&heavy).zip(&expected_src) {
            assert_eq!(l.pose, h.pose, "variants must agree bitwise");
            assert_eq!(l.num_inliers, h.num_inliers);
            assert_eq!(h.heavy_db_image, Some(*src));
        }
    }

    #[test]
    fn wrong_dims_surface_as_reducer_mismatch() {
        let scene = small_scene();
        let cb = default_codebook(&scene);
        let reducer = cb.reducer_spec().build().unwrap();

        let bad_local =
            DescriptorBank::from_rows(8, DescriptorKind::Local, &[vec![1.0; 8]]).unwrap();
        let global = scene.query_global_bank.row(0);
        let err = fused_query_bank(&cb, &reducer, &bad_local, &global, None, Variant::Light)
            .unwrap_err();
        assert!(
            matches!(err, Error::ReducerMismatch { query_dim: 8, expected } if expected == cb.dim())
        );

        let good_local = &scene.query_local_banks[0];
        let err = fused_query_bank(&cb, &reducer, good_local, &[1.0; 5], None, Variant::Light)
            .unwrap_err();
        assert!(
            matches!(err, Error::ReducerMismatch { query_dim: 5, expected } if expected == reducer.in_dim())
        );
    }

    #[test]
    fn heavy_without_database_globals_is_an_error() {
        let scene = small_scene();
        let cb = default_codebook(&scene);
        let reducer = cb.reducer_spec().build().unwrap();
        let global = scene.query_global_bank.row(0);
        let err = fused_query_bank(
            &cb,
            &reducer,
            &scene.query_local_banks[0],
            &global,
            None,
            Variant::Heavy,
        )
        .unwrap_err();
        assert!(matches!(err, Error::EmptyDatabase));
    }

    #[test]
    fn impossible_inlier_floor_yields_failures_not_errors() {
        let scene = small_scene();
        let cb = default_codebook(&scene);
        let opts = LocalizeOptions {
            ransac: RansacConfig {
                min_inliers: 100_000,
                ..RansacConfig::default()
            },
            ..LocalizeOptions::default()
        };
        let outcomes = localize_synthetic(&scene, &cb, &opts).unwrap();
        assert!(outcomes.iter().all(|o| o.pose.is_none()));

        let gt: Vec<(String, Pose)> = outcomes
            .iter()
            .enumerate()
            .map(|(i, o)| (o.name.clone(), scene.query_cameras[i].0))
            .collect();
        let report =
            evaluate_predictions(&predicted_poses(&outcomes), &gt, &ThresholdSpec::default());
        assert_eq!(report.total_queries, 4);
        assert_eq!(report.localized, 0);
        assert_eq!(report.failure_rate, 1.0);
        assert_eq!(report.median_rotation_deg, None);
    }

    #[test]
    fn missing_predictions_count_as_failures() {
        let scene = small_scene();
        let cb = default_codebook(&scene);
        let outcomes = localize_synthetic(&scene, &cb, &LocalizeOptions::default()).unwrap();
        let gt: Vec<(String, Pose)> = outcomes
            .iter()
            .enumerate()
            .map(|(i, o)| (o.name.clone(), scene.query_cameras[i].0))
            .collect();
        let mut preds = predicted_poses(&outcomes);
        preds.remove(1);
        let report = evaluate_predictions(&preds, &gt, &ThresholdSpec::default());
        assert_eq!(report.total_queries, 4);
        assert_eq!(report.localized, 3);
        assert!((report.failure_rate - 0.25).abs() < 1e-12);
    }

    #[test]
    fn dense_image_id_convention_is_enforced_on_load() {
        let scene = small_scene();
        let dir = tempfile::tempdir().unwrap();
        write_scene(&scene, dir.path()).unwrap();
        let images = dir.path().join("db").join("images.txt");
        let text = fs::read_to_string(&images).unwrap();
        fs::write(&images, text.replace("1 db_001", "4 db_001")).unwrap();
        match load_image_set(dir.path().join("db")).unwrap_err() {
            Error::ParseError { line, message } => {
                assert_eq!(line, 3); // header comment + first entry precede it
                assert!(message.contains("dense"), "{message}");
            }
            other => panic!("unexpected error {other:?}"),
        }
    }
}
