//! The project's acceptance gate: ten end-to-end checks, one per release
//! criterion, each printing a single `acceptance NN <label>: PASS/FAIL`
//! line (visible with `cargo test --test acceptance -- --nocapture`).
//!
//! Each check measures through public interfaces only and carries its own
//! independent oracle — a naive reimplementation, an exactly computable
//! size, or a bitwise comparison — so a regression in the library cannot
//! silently re-verify itself.

use std::fmt::Write as _;
use std::path::Path;
use std::process::Command;
use std::str::FromStr;
use std::time::Instant;

use half::f16;
use nalgebra::{Unit, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use locfuse_core::analyze::{cluster_spread, kmeans};
use locfuse_core::codebook::{build_codebook, codebook_memory_report, Codebook, CodebookConfig};
use locfuse_core::fuse::FusionConfig;
use locfuse_core::io::{
    read_codebook, read_descriptor_bank, read_intrinsics, read_observations, read_points,
    read_poses, write_codebook, write_descriptor_bank, write_intrinsics, write_observations,
    write_points, write_poses,
};
use locfuse_core::metrics::ThresholdSpec;
use locfuse_core::pipeline::{
    evaluate_predictions, fused_query_bank, localize_synthetic, predicted_poses,
    query_image_name, synthetic_codebook, LocalizeOptions, Variant,
};
use locfuse_core::pose::{project, ransac_pnp, RansacConfig};
use locfuse_core::reduce::{build_reducer, ReduceMethod};
use locfuse_core::search::{build_index, match_bank, IndexMode};
use locfuse_core::synth::{false_match_rate, generate, SyntheticScene, SynthConfig};
use locfuse_core::types::Dtype;
use locfuse_core::{
    CameraIntrinsics, DescriptorBank, DescriptorKind, Error, Observation, Point3D, Pose,
};

/// Print the verdict line for one criterion, then enforce it.
fn gate(num: u32, label: &str, ok: bool, detail: &str) {
    let verdict = if ok { "PASS" } else { "FAIL" };
    println!("acceptance {num:02} {label}: {verdict} - {detail}");
    assert!(ok, "acceptance {num:02} {label}: {detail}");
}

/// The standard aliased benchmark scene: four regions, 80% of points
/// sharing descriptors across regions, mild descriptor and keypoint noise.
fn aliased_scene(seed: u64) -> SyntheticScene {
    generate(&SynthConfig {
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
        seed,
    })
    .expect("scene generation")
}

fn codebook_at(scene: &SyntheticScene, lambda: f32) -> Codebook {
    let cfg = CodebookConfig {
        fusion: FusionConfig::new(lambda).unwrap(),
        dtype: Dtype::F32,
        renormalize_globals: true,
    };
    synthetic_codebook(scene, ReduceMethod::Gaussian, 0, &cfg).unwrap()
}

/// Mean cross-region false-match rate over the scene's query images.
fn mean_false_rate(scene: &SyntheticScene, cb: &Codebook) -> f64 {
    let reducer = cb.reducer_spec().build().unwrap();
    let index = build_index(cb, IndexMode::Exact, 0, 0, 0).unwrap();
    let n = scene.query_local_banks.len();
    let mut sum = 0.0;
    for qi in 0..n {
        let (bank, _) = fused_query_bank(
            cb,
            &reducer,
            &scene.query_local_banks[qi],
            &scene.query_global_bank.row(qi),
            None,
            Variant::Light,
        )
        .unwrap();
        let ms = match_bank(&index, &bank, &scene.query_keypoints[qi]).unwrap();
        sum += false_match_rate(scene, qi, &ms).unwrap();
    }
    sum / n as f64
}

fn ground_truth(scene: &SyntheticScene) -> Vec<(String, Pose)> {
    scene
        .query_cameras
        .iter()
        .enumerate()
        .map(|(i, (p, _))| (query_image_name(i), *p))
        .collect()
}

// ---------------------------------------------------------------------------
// 01: fusion repairs matching on aliased scenes
// ---------------------------------------------------------------------------

#[test]
fn a01_fused_matching_repairs_aliased_scenes() {
    let t0 = Instant::now();
    let spec = ThresholdSpec::default();
    let mut rate = [0.0f64; 2]; // [local-only, fused]
    let mut med = [0.0f64; 2];
    for seed in 0..5 {
        let scene = aliased_scene(seed);
        let gt = ground_truth(&scene);
        for (i, lambda) in [1.0f32, 0.5].into_iter().enumerate() {
            let cb = codebook_at(&scene, lambda);
            rate[i] += mean_false_rate(&scene, &cb) / 5.0;
            let outcomes =
                localize_synthetic(&scene, &cb, &LocalizeOptions::default()).unwrap();
            let report = evaluate_predictions(&predicted_poses(&outcomes), &gt, &spec);
            med[i] += report.median_translation.expect("some queries localize") / 5.0;
        }
    }
    let rel_drop = 1.0 - rate[1] / rate[0];
    let improvement = med[0] / med[1];
    let secs = t0.elapsed().as_secs_f64();
    let ok = rel_drop >= 0.5 && improvement >= 2.0 && secs < 60.0;
    gate(
        1,
        "fused matching repairs aliased scenes",
        ok,
        &format!(
            "false-match rate {:.3} -> {:.3} (relative drop {:.0}%, need >= 50%); \
             median translation {:.4} -> {:.4} (improvement {improvement:.2}x, need >= 2x); \
             runtime {secs:.1}s (need < 60s)",
            rate[0],
            rate[1],
            rel_drop * 100.0,
            med[0],
            med[1],
        ),
    );
}

// ---------------------------------------------------------------------------
// 02: mid-range fusion weights never trail local-only
// ---------------------------------------------------------------------------

#[test]
fn a02_midrange_fusion_weights_never_trail_local_only() {
    let spec = ThresholdSpec::from_str("0.25:2").unwrap();
    let lambdas = [0.2f32, 0.3, 0.4, 0.5, 0.6, 0.7];
    let mut pct = [0.0f64; 6];
    let mut pct_local = 0.0f64;
    for seed in 0..5 {
        let scene = aliased_scene(seed);
        let gt = ground_truth(&scene);
        let success_pct = |lambda: f32| {
            let cb = codebook_at(&scene, lambda);
            let outcomes =
                localize_synthetic(&scene, &cb, &LocalizeOptions::default()).unwrap();
            evaluate_predictions(&predicted_poses(&outcomes), &gt, &spec).thresholds[0].percent
        };
        for (i, &lambda) in lambdas.iter().enumerate() {
            pct[i] += success_pct(lambda) / 5.0;
        }
        pct_local += success_pct(1.0) / 5.0;
    }
    let ok = pct.iter().all(|&p| p >= pct_local - 1e-9);
    let mut detail = format!("success@0.25u/2deg: lambda=1.0 {pct_local:.1}%;");
    for (i, &lambda) in lambdas.iter().enumerate() {
        write!(detail, " {lambda:.1}:{:.1}%", pct[i]).unwrap();
    }
    gate(2, "mid-range fusion weights never trail local-only", ok, &detail);
}

// ---------------------------------------------------------------------------
// 03: codebook equals the naive double-loop mean
// ---------------------------------------------------------------------------

struct Instance {
    points: Vec<Point3D>,
    observations: Vec<Observation>,
    local_banks: Vec<DescriptorBank>,
    global_bank: DescriptorBank,
}

/// 50 points seen by 2-6 of 10 images each; unit-Gaussian descriptors.
fn random_instance(seed: u64) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_points = 50;
    let n_images = 10usize;
    let (local_dim, global_dim) = (16usize, 48usize);
    fn unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f32> {
        let n = Normal::new(0.0f64, 1.0).unwrap();
        let mut v: Vec<f32> = (0..dim).map(|_| n.sample(rng) as f32).collect();
        let norm = v.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt() as f32;
        v.iter_mut().for_each(|x| *x /= norm);
        v
    }
    let global_rows: Vec<Vec<f32>> = (0..n_images).map(|_| unit(&mut rng, global_dim)).collect();
    let mut image_rows: Vec<Vec<Vec<f32>>> = vec![Vec::new(); n_images];
    let mut points = Vec::new();
    let mut observations = Vec::new();
    for pid in 0..n_points {
        points.push(Point3D::new(pid, Vector3::new(pid as f64, 0.0, 1.0)));
        let k = rng.gen_range(2..=6usize);
        let mut images: Vec<usize> = (0..n_images).collect();
        for i in 0..k {
            let j = rng.gen_range(i..n_images);
            images.swap(i, j);
        }
        for &img in &images[..k] {
            let row = image_rows[img].len() as u32;
            image_rows[img].push(unit(&mut rng, local_dim));
            observations.push(Observation {
                point_id: pid,
                image_id: img as u32,
                keypoint: [rng.gen_range(0.0..640.0), rng.gen_range(0.0..480.0)],
                descriptor_row: row,
            });
        }
    }
    let local_banks = image_rows
        .iter()
        .map(|rows| DescriptorBank::from_rows(local_dim, DescriptorKind::Local, rows).unwrap())
        .collect();
    let global_bank =
        DescriptorBank::from_rows(global_dim, DescriptorKind::Global, &global_rows).unwrap();
    Instance { points, observations, local_banks, global_bank }
}

/// The mean of fused appearances, computed the slow obvious way.
fn naive_mean(inst: &Instance, lambda: f32, reducer: &locfuse_core::reduce::Reducer) -> Vec<(u64, Vec<f32>)> {
    let dim = reducer.out_dim();
    let mut out = Vec::new();
    for p in &inst.points {
        let mut obs: Vec<&Observation> = inst
            .observations
            .iter()
            .filter(|o| o.point_id == p.id)
            .collect();
        obs.sort_by_key(|o| (o.image_id, o.descriptor_row));
        if obs.is_empty() {
            continue;
        }
        let mut acc = vec![0.0f32; dim];
        for o in &obs {
            let mut local = inst.local_banks[o.image_id as usize].row(o.descriptor_row as usize);
            let norm = local.iter().map(|x| x * x).sum::<f32>().sqrt();
            local.iter_mut().for_each(|x| *x /= norm);
            let global = reducer
                .reduce(&inst.global_bank.row(o.image_id as usize))
                .unwrap();
            for c in 0..dim {
                acc[c] += lambda * local[c] + (1.0 - lambda) * global[c];
            }
        }
        acc.iter_mut().for_each(|a| *a /= obs.len() as f32);
        out.push((p.id, acc));
    }
    out
}

/// Order-preserving map from f16 bits to an integer line, so adjacent
/// representable values differ by exactly 1.
fn f16_rank(v: f16) -> i32 {
    let b = v.to_bits();
    if b & 0x8000 != 0 {
        -((b & 0x7fff) as i32)
    } else {
        b as i32
    }
}

#[test]
fn a03_codebook_equals_naive_double_loop_mean() {
    let lambda = 0.6f32;
    let mut worst_f32 = 0.0f32;
    let mut worst_ulp = 0i32;
    for seed in 0..20 {
        let inst = random_instance(seed);
        let reducer = build_reducer(ReduceMethod::Random0, 48, 16, seed).unwrap();
        let oracle = naive_mean(&inst, lambda, &reducer);
        for dtype in [Dtype::F32, Dtype::F16] {
            let cfg = CodebookConfig {
                fusion: FusionConfig::new(lambda).unwrap(),
                dtype,
                renormalize_globals: true,
            };
            let cb = build_codebook(
                &inst.points,
                &inst.observations,
                &inst.local_banks,
                &inst.global_bank,
                &reducer,
                &cfg,
            )
            .unwrap();
            assert_eq!(cb.len(), oracle.len(), "seed {seed}");
            for (i, (id, desc)) in oracle.iter().enumerate() {
                assert_eq!(cb.point_id(i), *id);
                for (c, &expect) in desc.iter().enumerate() {
                    let got = cb.descriptor_component(i, c);
                    match dtype {
                        Dtype::F32 => worst_f32 = worst_f32.max((got - expect).abs()),
                        Dtype::F16 => {
                            let ulps = (f16_rank(f16::from_f32(got))
                                - f16_rank(f16::from_f32(expect)))
                            .abs();
                            worst_ulp = worst_ulp.max(ulps);
                        }
                    }
                }
            }
        }
    }
    let ok = worst_f32 <= 1e-6 && worst_ulp <= 1;
    gate(
        3,
        "codebook equals naive double-loop mean",
        ok,
        &format!(
            "20 seeds x 50 points: worst f32 deviation {worst_f32:.2e} (need <= 1e-6), \
             worst f16 distance {worst_ulp} ulp (need <= 1)"
        ),
    );
}

// ---------------------------------------------------------------------------
// 04: exact search equals a naive scan; full-probe IVF equals exact
// ---------------------------------------------------------------------------

/// 1000 single-observation points at lambda=1: entries are normalized
/// locals, ids dense and sorted.
fn thousand_entry_codebook(seed: u64) -> Codebook {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = 1000usize;
    let per_image = 50usize;
    let dim = 16usize;
    let n_images = n / per_image;
    let mut image_rows: Vec<Vec<Vec<f32>>> = vec![Vec::new(); n_images];
    let mut points = Vec::new();
    let mut observations = Vec::new();
    for pid in 0..n {
        let img = pid / per_image;
        let row: Vec<f32> = (0..dim).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
        observations.push(Observation {
            point_id: pid as u64,
            image_id: img as u32,
            keypoint: [0.0, 0.0],
            descriptor_row: image_rows[img].len() as u32,
        });
        image_rows[img].push(row);
        points.push(Point3D::new(pid as u64, Vector3::new(pid as f64, 0.0, 0.0)));
    }
    let local_banks: Vec<DescriptorBank> = image_rows
        .iter()
        .map(|rows| DescriptorBank::from_rows(dim, DescriptorKind::Local, rows).unwrap())
        .collect();
    let global_rows: Vec<Vec<f32>> = (0..n_images)
        .map(|_| (0..32).map(|_| rng.gen_range(-1.0f32..1.0)).collect())
        .collect();
    let global_bank =
        DescriptorBank::from_rows(32, DescriptorKind::Global, &global_rows).unwrap();
    let reducer = build_reducer(ReduceMethod::First, 32, dim, 0).unwrap();
    let cfg = CodebookConfig {
        fusion: FusionConfig::new(1.0).unwrap(),
        dtype: Dtype::F32,
        renormalize_globals: true,
    };
    build_codebook(&points, &observations, &local_banks, &global_bank, &reducer, &cfg).unwrap()
}

#[test]
fn a04_exact_search_equals_naive_scan_and_full_probe_ivf() {
    let mut checked = 0usize;
    for seed in 0..10 {
        let cb = thousand_entry_codebook(seed);
        assert_eq!(cb.len(), 1000);
        let dim = cb.dim();
        let mut rng = ChaCha8Rng::seed_from_u64(9000 + seed);
        let queries: Vec<Vec<f32>> = (0..100)
            .map(|_| (0..dim).map(|_| rng.gen_range(-1.0f32..1.0)).collect())
            .collect();
        let bank = DescriptorBank::from_rows(dim, DescriptorKind::Local, &queries).unwrap();
        let keypoints: Vec<[f32; 2]> = (0..100).map(|i| [i as f32, 0.0]).collect();

        let exact = build_index(&cb, IndexMode::Exact, 0, 0, 0).unwrap();
        let got = match_bank(&exact, &bank, &keypoints).unwrap();
        assert_eq!(got.len(), 100);

        // naive scan: sequential accumulation, strict less-than keeps the
        // first (lowest-id) entry on ties
        let flat = cb.descriptors_f32();
        for (qi, q) in queries.iter().enumerate() {
            let mut best = (0usize, f32::INFINITY);
            for e in 0..cb.len() {
                let mut acc = 0.0f32;
                for c in 0..dim {
                    let d = q[c] - flat[e * dim + c];
                    acc += d * d;
                }
                if acc < best.1 {
                    best = (e, acc);
                }
            }
            assert_eq!(got.matches[qi].point_id, cb.point_id(best.0), "seed {seed} q{qi}");
            assert_eq!(got.matches[qi].distance_sq, best.1, "seed {seed} q{qi}");
            checked += 1;
        }

        // probing every cell must reproduce exact search bit for bit
        let ivf = build_index(&cb, IndexMode::Ivf, 25, 25, seed).unwrap();
        let ivf_matches = match_bank(&ivf, &bank, &keypoints).unwrap();
        assert_eq!(got, ivf_matches, "seed {seed}: full-probe IVF diverged from exact");
    }
    gate(
        4,
        "exact search equals naive scan; full-probe IVF equals exact",
        checked == 1000,
        &format!("{checked} queries over 10 seeds matched ids and distances bitwise"),
    );
}

// ---------------------------------------------------------------------------
// 05: RANSAC-PnP withstands outliers and recovers clean poses
// ---------------------------------------------------------------------------

fn trial_camera() -> CameraIntrinsics {
    CameraIntrinsics::new(500.0, 500.0, 320.0, 240.0, 640, 480)
}

fn trial_pose(rng: &mut ChaCha8Rng) -> Pose {
    let axis = Unit::new_normalize(Vector3::new(
        rng.gen_range(-1.0..1.0),
        rng.gen_range(-1.0..1.0),
        rng.gen_range(-1.0..1.0),
    ));
    let q = UnitQuaternion::from_axis_angle(&axis, rng.gen_range(-0.3..0.3));
    Pose::new(
        q,
        Vector3::new(rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5), rng.gen_range(5.0..7.0)),
    )
}

/// A pose with an unrestricted rotation, for backprojected problems.
fn random_world_pose(rng: &mut ChaCha8Rng) -> Pose {
    let axis = Vector3::new(
        rng.gen_range(-1.0..1.0),
        rng.gen_range(-1.0..1.0),
        rng.gen_range(-1.0..1.0),
    );
    let angle = rng.gen_range(0.0..std::f64::consts::PI);
    let q = UnitQuaternion::from_scaled_axis(axis.normalize() * angle);
    Pose::new(
        q,
        Vector3::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)),
    )
}

/// `n` correspondences spanning the whole frame: random pixels at random
/// depths, backprojected through `pose` into world points.
fn backprojected_matches(
    rng: &mut ChaCha8Rng,
    pose: &Pose,
    k: &CameraIntrinsics,
    n: usize,
) -> locfuse_core::MatchSet {
    let r_inv = pose.rotation_matrix().transpose();
    let matches = (0..n)
        .map(|i| {
            let u = rng.gen_range(40.0..600.0);
            let v = rng.gen_range(40.0..440.0);
            let z = rng.gen_range(2.0..8.0);
            let cam = Vector3::new((u - k.cx) / k.fx * z, (v - k.cy) / k.fy * z, z);
            let world = r_inv * (cam - pose.translation());
            locfuse_core::Match {
                query_keypoint: [u as f32, v as f32],
                point_id: i as u64,
                point_coord: world.cast::<f32>(),
                distance_sq: 0.0,
            }
        })
        .collect();
    locfuse_core::MatchSet { matches }
}

/// `n` in-view correspondences under `pose`.
fn trial_matches(
    rng: &mut ChaCha8Rng,
    pose: &Pose,
    k: &CameraIntrinsics,
    n: usize,
) -> locfuse_core::MatchSet {
    let mut matches = Vec::with_capacity(n);
    while matches.len() < n {
        let world = Vector3::new(
            rng.gen_range(-2.0..2.0),
            rng.gen_range(-2.0..2.0),
            rng.gen_range(-1.0..1.0),
        );
        let Ok(px) = project(pose, k, &world) else { continue };
        if !(0.0..=640.0).contains(&px[0]) || !(0.0..=480.0).contains(&px[1]) {
            continue;
        }
        matches.push(locfuse_core::Match {
            query_keypoint: [px[0] as f32, px[1] as f32],
            point_id: matches.len() as u64,
            point_coord: world.cast::<f32>(),
            distance_sq: 0.0,
        });
    }
    locfuse_core::MatchSet { matches }
}

#[test]
fn a05_ransac_pnp_withstands_outliers_and_recovers_clean_poses() {
    let k = trial_camera();

    // noise-free, outlier-free: recovery to numerical precision
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let gt = trial_pose(&mut rng);
    let ms = trial_matches(&mut rng, &gt, &k, 30);
    let clean = ransac_pnp(&ms, &k, &RansacConfig::default()).unwrap();
    let clean_rot = clean.pose.rotation().angle_to(&gt.rotation());
    let clean_center = (clean.pose.camera_center() - gt.camera_center()).norm();
    let clean_ok = clean.success && clean_rot < 1e-6 && clean_center < 1e-6;

    // 100 trials: 100 matches, 1 px Gaussian noise, 60% uniform outliers
    let mut good = 0usize;
    for trial in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(4000 + trial);
        let gt = random_world_pose(&mut rng);
        let mut ms = backprojected_matches(&mut rng, &gt, &k, 100);
        let px = Normal::new(0.0f64, 1.0).unwrap();
        for m in ms.matches.iter_mut() {
            m.query_keypoint[0] += px.sample(&mut rng) as f32;
            m.query_keypoint[1] += px.sample(&mut rng) as f32;
        }
        for i in 0..60 {
            ms.matches[i].query_keypoint =
                [rng.gen_range(0.0..640.0), rng.gen_range(0.0..480.0)];
        }
        let mut diameter = 0.0f64;
        for a in &ms.matches {
            for b in &ms.matches {
                diameter = diameter.max((a.point_coord - b.point_coord).norm() as f64);
            }
        }
        let cfg = RansacConfig {
            reproj_threshold_px: 4.0,
            seed: trial,
            ..Default::default()
        };
        let res = ransac_pnp(&ms, &k, &cfg).unwrap();
        let rot = res.pose.rotation().angle_to(&gt.rotation()).to_degrees();
        let center = (res.pose.camera_center() - gt.camera_center()).norm();
        if res.success && rot < 0.5 && center < 0.01 * diameter {
            good += 1;
        }
    }
    let ok = clean_ok && good >= 99;
    gate(
        5,
        "RANSAC-PnP withstands outliers and recovers clean poses",
        ok,
        &format!(
            "clean recovery: rotation {clean_rot:.1e} rad, center {clean_center:.1e} \
             (need < 1e-6); 60% outliers: {good}/100 trials within 0.5deg and 1% of \
             diameter (need >= 99)"
        ),
    );
}

// ---------------------------------------------------------------------------
// 06: light and heavy agree when the query global is in the database
// ---------------------------------------------------------------------------

#[test]
fn a06_light_and_heavy_agree_when_query_global_is_in_database() {
    let mut scene = aliased_scene(2);
    let n_regions = scene.config.n_regions;
    // replace each query's global with the bank row of a database image
    // that views the same region
    let rows: Vec<Vec<f32>> = (0..scene.query_local_banks.len())
        .map(|qi| scene.db_global_bank.row(qi % n_regions))
        .collect();
    scene.query_global_bank = DescriptorBank::from_rows(
        scene.config.global_dim,
        DescriptorKind::Global,
        &rows,
    )
    .unwrap();

    let cb = codebook_at(&scene, 0.5);
    let reducer = cb.reducer_spec().build().unwrap();
    let mut banks_equal = true;
    for qi in 0..scene.query_local_banks.len() {
        let (light, from_light) = fused_query_bank(
            &cb,
            &reducer,
            &scene.query_local_banks[qi],
            &scene.query_global_bank.row(qi),
            None,
            Variant::Light,
        )
        .unwrap();
        let (heavy, from_heavy) = fused_query_bank(
            &cb,
            &reducer,
            &scene.query_local_banks[qi],
            &scene.query_global_bank.row(qi),
            Some(&scene.db_global_bank),
            Variant::Heavy,
        )
        .unwrap();
        banks_equal &= light == heavy;
        assert_eq!(from_light, None);
        assert_eq!(from_heavy, Some((qi % n_regions) as u32));
    }

    let light_outcomes =
        localize_synthetic(&scene, &cb, &LocalizeOptions::default()).unwrap();
    let heavy_opts = LocalizeOptions { variant: Variant::Heavy, ..Default::default() };
    let heavy_outcomes = localize_synthetic(&scene, &cb, &heavy_opts).unwrap();
    let poses_equal = light_outcomes
        .iter()
        .zip(&heavy_outcomes)
        .all(|(a, b)| a.pose == b.pose && a.num_inliers == b.num_inliers);

    gate(
        6,
        "light and heavy variants agree when query global is in the database",
        banks_equal && poses_equal,
        &format!(
            "8 queries: fused descriptors bitwise equal: {banks_equal}; \
             poses identical: {poses_equal}"
        ),
    );
}

// ---------------------------------------------------------------------------
// 07: on-disk and in-memory sizes are exact
// ---------------------------------------------------------------------------

#[test]
fn a07_on_disk_and_in_memory_sizes_are_exact() {
    let scene = aliased_scene(1);
    let dir = tempfile::tempdir().unwrap();
    let dim = 64usize;
    let mut payload_bytes = [0u64; 2];
    let mut sizes_ok = true;
    let mut detail = String::new();
    for (i, (dtype, elem)) in [(Dtype::F32, 4usize), (Dtype::F16, 2)].into_iter().enumerate() {
        let cfg = CodebookConfig { dtype, ..Default::default() };
        let cb = synthetic_codebook(&scene, ReduceMethod::Gaussian, 0, &cfg).unwrap();
        let path = dir.path().join(format!("{dtype}.lcb"));
        write_codebook(&path, &cb).unwrap();
        let expect = 43 + cb.len() as u64 * (8 + 12 + dim as u64 * elem as u64);
        let actual = std::fs::metadata(&path).unwrap().len();
        sizes_ok &= actual == expect;
        write!(detail, "{dtype}: {actual} bytes (header 43 + {} entries; expect {expect}); ", cb.len()).unwrap();
        let report = codebook_memory_report(&cb, None);
        payload_bytes[i] = report.descriptor_bytes;
        sizes_ok &= report.heavy_global_bytes == 0;
    }
    let halves_ok = payload_bytes[1] * 2 == payload_bytes[0];

    let cb = synthetic_codebook(&scene, ReduceMethod::Gaussian, 0, &CodebookConfig::default())
        .unwrap();
    let heavy = codebook_memory_report(&cb, Some(&scene.db_global_bank));
    let globals_expect = scene.db_global_bank.rows() as u64 * 256 * 4;
    let heavy_ok = heavy.heavy_global_bytes == globals_expect;
    write!(
        detail,
        "f16 payload {} = half of f32 {}: {halves_ok}; heavy adds {} bytes (expect {globals_expect})",
        payload_bytes[1], payload_bytes[0], heavy.heavy_global_bytes
    )
    .unwrap();

    gate(
        7,
        "on-disk and in-memory sizes are exact",
        sizes_ok && halves_ok && heavy_ok,
        &detail,
    );
}

// ---------------------------------------------------------------------------
// 08: fused clusters align with regions; Lloyd iterations descend
// ---------------------------------------------------------------------------

#[test]
fn a08_fused_clusters_align_with_regions_and_lloyd_descends() {
    let mut entropy = [0.0f64; 2]; // [local-only, fused]
    let mut monotone = true;
    for seed in 0..5 {
        let scene = aliased_scene(seed);
        for (i, lambda) in [1.0f32, 0.5].into_iter().enumerate() {
            let cb = codebook_at(&scene, lambda);
            let bank = DescriptorBank::from_flat_f32(
                cb.dim(),
                DescriptorKind::Local,
                cb.descriptors_f32(),
            )
            .unwrap();
            let km = kmeans(&bank, 5, seed, 100).unwrap();
            monotone &= km
                .inertia_history
                .windows(2)
                .all(|w| w[1] <= w[0]);
            let regions: Vec<u32> = (0..cb.len())
                .map(|e| (cb.point_id(e) / scene.config.points_per_region as u64) as u32)
                .collect();
            entropy[i] += cluster_spread(&km, &regions).mean_entropy_bits / 5.0;
        }
    }
    let ok = entropy[1] < entropy[0] && monotone;
    gate(
        8,
        "fused clusters align with regions and Lloyd descends",
        ok,
        &format!(
            "mean cluster-over-region entropy (k=5, 5 seeds): local-only {:.3} bits, \
             fused {:.3} bits (need strictly lower); inertia non-increasing every \
             iteration: {monotone}",
            entropy[0], entropy[1]
        ),
    );
}

// ---------------------------------------------------------------------------
// 09: formats round-trip; corruption raises typed errors
// ---------------------------------------------------------------------------

#[test]
fn a09_formats_round_trip_and_reject_corruption() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut round_trips = 0usize;
    let mut corruptions = 0usize;

    // descriptor banks, both dtypes, with keypoints
    for dtype in [Dtype::F32, Dtype::F16] {
        let rows: Vec<Vec<f32>> = (0..20)
            .map(|_| {
                (0..8)
                    .map(|_| {
                        let v = rng.gen_range(-1.0f32..1.0);
                        match dtype {
                            Dtype::F32 => v,
                            Dtype::F16 => f16::from_f32(v).to_f32(),
                        }
                    })
                    .collect()
            })
            .collect();
        let bank =
            DescriptorBank::from_rows_with_dtype(8, DescriptorKind::Local, dtype, &rows).unwrap();
        let kps: Vec<[f32; 2]> = (0..20).map(|i| [i as f32, 2.0 * i as f32]).collect();
        let path = dir.path().join(format!("bank_{dtype}.dsb"));
        write_descriptor_bank(&path, &bank, Some(&kps)).unwrap();
        let (bank2, kps2) = read_descriptor_bank(&path).unwrap();
        assert_eq!(bank, bank2);
        assert_eq!(kps2.as_deref(), Some(&kps[..]));
        round_trips += 1;
    }

    // codebook
    let inst = random_instance(7);
    let reducer = build_reducer(ReduceMethod::Gaussian, 48, 16, 3).unwrap();
    let cfg = CodebookConfig { dtype: Dtype::F16, ..Default::default() };
    let cb = build_codebook(
        &inst.points,
        &inst.observations,
        &inst.local_banks,
        &inst.global_bank,
        &reducer,
        &cfg,
    )
    .unwrap();
    let cb_path = dir.path().join("cb.lcb");
    write_codebook(&cb_path, &cb).unwrap();
    let cb2 = read_codebook(&cb_path).unwrap();
    assert_eq!(cb, cb2, "codebook round trip");
    round_trips += 1;

    // poses: canonical 9-significant-digit text
    let poses: Vec<(String, Pose)> = (0..50)
        .map(|i| {
            let mut r = ChaCha8Rng::seed_from_u64(500 + i);
            (format!("img_{i:03}"), trial_pose(&mut r))
        })
        .collect();
    let pose_path = dir.path().join("poses.txt");
    write_poses(&pose_path, &poses).unwrap();
    let poses2 = read_poses(&pose_path).unwrap();
    assert_eq!(poses.len(), poses2.len());
    for ((na, pa), (nb, pb)) in poses.iter().zip(&poses2) {
        assert_eq!(na, nb);
        assert!(pa.rotation().angle_to(&pb.rotation()) < 1e-7);
        assert!((pa.translation() - pb.translation()).norm() < 1e-6);
    }
    round_trips += 1;

    // points and observations: bitwise
    let points: Vec<Point3D> = (0..30)
        .map(|i| {
            Point3D::new(
                i * 977,
                Vector3::new(rng.gen::<f64>() / 3.0, -rng.gen::<f64>() * 1e6, rng.gen::<f64>()),
            )
        })
        .collect();
    let points_path = dir.path().join("points.txt");
    write_points(&points_path, &points).unwrap();
    assert_eq!(points, read_points(&points_path).unwrap());
    round_trips += 1;

    let obs_path = dir.path().join("obs.txt");
    write_observations(&obs_path, &inst.observations).unwrap();
    assert_eq!(inst.observations, read_observations(&obs_path).unwrap());
    round_trips += 1;

    // intrinsics
    let mut intr = std::collections::BTreeMap::new();
    intr.insert("a".to_string(), trial_camera());
    intr.insert("b".to_string(), CameraIntrinsics::new(420.0, 415.5, 319.5, 239.5, 640, 480));
    let intr_path = dir.path().join("intrinsics.json");
    write_intrinsics(&intr_path, &intr).unwrap();
    assert_eq!(intr, read_intrinsics(&intr_path).unwrap());
    round_trips += 1;

    // corruption: short file
    let bytes = std::fs::read(dir.path().join("bank_f32.dsb")).unwrap();
    let cut = dir.path().join("cut.dsb");
    std::fs::write(&cut, &bytes[..bytes.len() - 3]).unwrap();
    assert!(matches!(
        read_descriptor_bank(&cut),
        Err(Error::TruncatedFile { .. })
    ));
    corruptions += 1;

    // corruption: wrong magic
    let mut bad = bytes.clone();
    bad[0] = b'X';
    let bad_path = dir.path().join("bad_magic.dsb");
    std::fs::write(&bad_path, &bad).unwrap();
    assert!(matches!(
        read_descriptor_bank(&bad_path),
        Err(Error::BadMagic { .. })
    ));
    corruptions += 1;

    // corruption: future version
    let mut vers = bytes.clone();
    vers[4] = 2;
    let vers_path = dir.path().join("v2.dsb");
    std::fs::write(&vers_path, &vers).unwrap();
    assert!(matches!(
        read_descriptor_bank(&vers_path),
        Err(Error::UnsupportedVersion { found: 2, .. })
    ));
    corruptions += 1;

    // corruption: trailing garbage after a valid codebook
    let mut cb_bytes = std::fs::read(&cb_path).unwrap();
    cb_bytes.push(0);
    let trail = dir.path().join("trail.lcb");
    std::fs::write(&trail, &cb_bytes).unwrap();
    assert!(matches!(read_codebook(&trail), Err(Error::ParseError { .. })));
    corruptions += 1;

    // corruption: pose line with a non-unit quaternion, correct line blamed
    let txt = "# header\nok 1 0 0 0 0 0 0\nbad 2 0 0 0 1 2 3\n";
    let bad_pose = dir.path().join("bad_pose.txt");
    std::fs::write(&bad_pose, txt).unwrap();
    match read_poses(&bad_pose) {
        Err(Error::ParseError { line, .. }) => assert_eq!(line, 3),
        other => panic!("expected a parse error on line 3, got {other:?}"),
    }
    corruptions += 1;

    gate(
        9,
        "formats round-trip and reject corruption",
        round_trips == 7 && corruptions == 5,
        &format!("{round_trips} round trips verified, {corruptions} corruption classes typed"),
    );
}

// ---------------------------------------------------------------------------
// 10: fixed seeds reproduce identical reports end to end
// ---------------------------------------------------------------------------

fn run_binary(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_locfuse"))
        .args(args)
        .output()
        .expect("spawn locfuse")
}

/// synth-gen -> build-codebook -> localize -> eval in `dir`, returning the
/// codebook bytes, prediction bytes, and eval JSON.
fn pipeline_run(dir: &Path) -> (Vec<u8>, Vec<u8>, String) {
    let scene = dir.join("scene");
    let cb = dir.join("cb.lcb");
    let pred = dir.join("pred.txt");
    for args in [
        vec!["synth-gen", "--out", scene.to_str().unwrap(), "--seed", "3"],
        vec![
            "build-codebook",
            "--scene",
            scene.to_str().unwrap(),
            "--seed",
            "1",
            "--out",
            cb.to_str().unwrap(),
        ],
        vec![
            "localize",
            "--codebook",
            cb.to_str().unwrap(),
            "--scene",
            scene.to_str().unwrap(),
            "--out",
            pred.to_str().unwrap(),
        ],
    ] {
        let out = run_binary(&args);
        assert!(
            out.status.success(),
            "{} failed: {}",
            args[0],
            String::from_utf8_lossy(&out.stderr)
        );
    }
    let out = run_binary(&[
        "eval",
        "--pred",
        pred.to_str().unwrap(),
        "--gt",
        scene.join("query_poses.txt").to_str().unwrap(),
    ]);
    assert!(out.status.success());
    (
        std::fs::read(&cb).unwrap(),
        std::fs::read(&pred).unwrap(),
        String::from_utf8(out.stdout).unwrap(),
    )
}

#[test]
fn a10_fixed_seeds_reproduce_identical_reports() {
    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    let (cb_a, pred_a, eval_a) = pipeline_run(dir_a.path());
    let (cb_b, pred_b, eval_b) = pipeline_run(dir_b.path());
    let ok = cb_a == cb_b && pred_a == pred_b && eval_a == eval_b;
    gate(
        10,
        "fixed seeds reproduce identical reports",
        ok,
        &format!(
            "codebook identical: {}; predictions identical: {}; report identical: {}",
            cb_a == cb_b,
            pred_a == pred_b,
            eval_a == eval_b
        ),
    );
}
