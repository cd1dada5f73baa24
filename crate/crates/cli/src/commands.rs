//! Implementations behind the subcommands: thin compositions of the
//! library, plus the file/console plumbing the library deliberately leaves
//! to its callers.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, ensure, Context, Result};
use serde_json::json;

use locfuse_core::analyze::{cluster_spread, frustum_classify, kmeans, FrustumLabel};
use locfuse_core::codebook::{codebook_memory_report, CodebookConfig};
use locfuse_core::fuse::FusionConfig;
use locfuse_core::io::{
    format_pose_line, intrinsics_for, read_codebook, read_descriptor_bank, read_intrinsics,
    read_observations, read_points, read_poses, write_codebook, LCB_HEADER_BYTES,
};
use locfuse_core::pipeline::{
    codebook_from_parts, evaluate_predictions, fused_query_bank, load_image_set, load_scene,
    localize_set, predicted_poses, scene_codebook, write_scene, ImageSet, LocalizeOptions,
    Variant,
};
use locfuse_core::reduce::ReduceMethod;
use locfuse_core::search::{build_index, match_bank_with};
use locfuse_core::synth::{generate, SynthConfig};
use locfuse_core::{CameraIntrinsics, DescriptorBank, DescriptorKind};

use crate::{
    AblateLambdaArgs, AblateReduceArgs, AnalyzeArgs, BuildCodebookArgs, EvalArgs, LocalizeArgs,
    MemReportArgs, QuerySourceArgs, RansacArgs, ReducerArgs, SearchArgs, SynthGenArgs,
};

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)
                .with_context(|| format!("creating directory {}", parent.display()))?;
        }
    }
    Ok(())
}

/// Write `text` to `path`, or to stdout when no path was given.
fn write_text_output(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => {
            ensure_parent(p)?;
            fs::write(p, text).with_context(|| format!("writing {}", p.display()))?;
        }
        None => print!("{text}"),
    }
    Ok(())
}

fn localize_options(variant: Variant, search: &SearchArgs, ransac: &RansacArgs) -> LocalizeOptions {
    LocalizeOptions {
        variant,
        index_mode: search.index,
        n_cells: search.cells,
        n_probe: search.probe,
        index_seed: search.index_seed,
        ratio_test: search.ratio_test,
        ransac: ransac.to_config(),
    }
}

fn codebook_config(reducer: &ReducerArgs, lambda: f32) -> Result<CodebookConfig> {
    Ok(CodebookConfig {
        fusion: FusionConfig::new(lambda)?,
        dtype: reducer.dtype,
        renormalize_globals: !reducer.no_renorm,
    })
}

fn load_global_bank(path: &Path) -> Result<DescriptorBank> {
    let (bank, _) = read_descriptor_bank(path)
        .with_context(|| format!("reading global bank {}", path.display()))?;
    ensure!(
        bank.kind() == DescriptorKind::Global,
        "{} is not a global descriptor bank",
        path.display()
    );
    Ok(bank)
}

// ---------------------------------------------------------------------------
// synth-gen
// ---------------------------------------------------------------------------

pub(crate) fn synth_gen(args: &SynthGenArgs) -> Result<()> {
    ensure!(args.regions >= 1, "--regions must be at least 1");
    ensure!(args.points_per_region >= 1, "--points-per-region must be at least 1");
    ensure!(args.db_images >= 1, "--db-images must be at least 1");
    ensure!(args.query_images >= 1, "--query-images must be at least 1");
    ensure!(args.local_dim >= 1, "--local-dim must be at least 1");
    ensure!(
        args.global_dim >= args.regions,
        "--global-dim must be at least --regions (one separable direction per region)"
    );
    ensure!(
        (0.0..=1.0).contains(&args.aliasing),
        "--aliasing must lie in [0, 1]"
    );
    ensure!(args.local_noise_sigma >= 0.0, "--local-noise-sigma must be non-negative");
    ensure!(args.keypoint_noise_px >= 0.0, "--keypoint-noise-px must be non-negative");
    ensure!(args.region_spacing > 0.0, "--region-spacing must be positive");

    let config = SynthConfig {
        n_regions: args.regions,
        points_per_region: args.points_per_region,
        n_db_images: args.db_images,
        n_query_images: args.query_images,
        local_dim: args.local_dim,
        global_dim: args.global_dim,
        aliasing: args.aliasing,
        local_noise_sigma: args.local_noise_sigma,
        keypoint_noise_px: args.keypoint_noise_px,
        region_spacing: args.region_spacing,
        seed: args.seed,
    };
    let scene = generate(&config)?;
    write_scene(&scene, &args.out)
        .with_context(|| format!("writing scene to {}", args.out.display()))?;
    println!(
        "wrote scene -> {}: {} points, {} db images, {} query images",
        args.out.display(),
        scene.points.len(),
        scene.db_local_banks.len(),
        scene.query_local_banks.len()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// build-codebook
// ---------------------------------------------------------------------------

pub(crate) fn build_codebook(args: &BuildCodebookArgs) -> Result<()> {
    let (points_path, obs_path, db_dir) =
        match (&args.scene, &args.points, &args.observations, &args.db) {
            (Some(s), None, None, None) => {
                (s.join("points.txt"), s.join("observations.txt"), s.join("db"))
            }
            (None, Some(p), Some(o), Some(d)) => (p.clone(), o.clone(), d.clone()),
            _ => bail!("pass either --scene DIR or all of --points, --observations and --db"),
        };
    let points = read_points(&points_path)
        .with_context(|| format!("reading {}", points_path.display()))?;
    let observations = read_observations(&obs_path)
        .with_context(|| format!("reading {}", obs_path.display()))?;
    let db = load_image_set(&db_dir)
        .with_context(|| format!("loading database images from {}", db_dir.display()))?;

    let cfg = codebook_config(&args.reducer, args.lambda)?;
    let cb = codebook_from_parts(
        &points,
        &observations,
        &db.local_banks,
        &db.global_bank,
        args.reducer.reduce,
        args.reducer.seed,
        &cfg,
    )?;
    ensure_parent(&args.out)?;
    write_codebook(&args.out, &cb)
        .with_context(|| format!("writing {}", args.out.display()))?;

    let report = codebook_memory_report(&cb, None);
    println!(
        "wrote codebook -> {}: {} entries, dim {}, dtype {}, {} bytes on disk",
        args.out.display(),
        cb.len(),
        cb.dim(),
        cb.dtype(),
        LCB_HEADER_BYTES as u64 + report.codebook_payload_bytes
    );
    if !cb.excluded_points().is_empty() {
        eprintln!(
            "note: {} points had no observations and were excluded",
            cb.excluded_points().len()
        );
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// localize
// ---------------------------------------------------------------------------

struct ResolvedQueries {
    set: ImageSet,
    intrinsics: BTreeMap<String, CameraIntrinsics>,
    /// Default database global bank for the heavy variant, when the source
    /// was a scene directory.
    db_globals_path: Option<PathBuf>,
}

fn resolve_queries(source: &QuerySourceArgs) -> Result<ResolvedQueries> {
    let (query_dir, intrinsics_path, scene_globals) =
        match (&source.scene, &source.query, &source.intrinsics) {
            (Some(s), None, None) => (
                s.join("query"),
                s.join("intrinsics.json"),
                Some(s.join("db").join("global.dsb")),
            ),
            (None, Some(q), Some(i)) => (q.clone(), i.clone(), None),
            _ => bail!("pass either --scene DIR or both --query DIR and --intrinsics FILE"),
        };
    let set = load_image_set(&query_dir)
        .with_context(|| format!("loading query images from {}", query_dir.display()))?;
    let intrinsics = read_intrinsics(&intrinsics_path)
        .with_context(|| format!("reading {}", intrinsics_path.display()))?;
    Ok(ResolvedQueries {
        set,
        intrinsics,
        db_globals_path: source.db_globals.clone().or(scene_globals),
    })
}

pub(crate) fn localize(args: &LocalizeArgs) -> Result<()> {
    let cb = read_codebook(&args.codebook)
        .with_context(|| format!("reading codebook {}", args.codebook.display()))?;
    let resolved = resolve_queries(&args.source)?;
    let db_globals = match args.variant {
        Variant::Heavy => {
            let path = resolved.db_globals_path.as_ref().ok_or_else(|| {
                anyhow!("--variant heavy needs --db-globals FILE (or --scene DIR)")
            })?;
            Some(load_global_bank(path)?)
        }
        Variant::Light => None,
    };
    let opts = localize_options(args.variant, &args.search, &args.ransac);
    let outcomes = localize_set(
        &cb,
        &resolved.set,
        &resolved.intrinsics,
        db_globals.as_ref(),
        &opts,
    )?;

    let mut text = String::from("# name qw qx qy qz tx ty tz (world-to-camera)\n");
    for o in &outcomes {
        match &o.pose {
            Some(pose) => {
                text.push_str(&format_pose_line(&o.name, pose));
                text.push('\n');
            }
            None => text.push_str(&format!("# failed: {}\n", o.name)),
        }
    }
    ensure_parent(&args.out)?;
    fs::write(&args.out, text).with_context(|| format!("writing {}", args.out.display()))?;

    let localized = outcomes.iter().filter(|o| o.pose.is_some()).count();
    println!(
        "localized {localized}/{} queries ({} variant) -> {}",
        outcomes.len(),
        args.variant,
        args.out.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

pub(crate) fn eval(args: &EvalArgs) -> Result<()> {
    let pred =
        read_poses(&args.pred).with_context(|| format!("reading {}", args.pred.display()))?;
    let gt = read_poses(&args.gt).with_context(|| format!("reading {}", args.gt.display()))?;
    let report = evaluate_predictions(&pred, &gt, &args.thresholds);
    eprint!("{}", report.to_table());
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

// ---------------------------------------------------------------------------
// ablations
// ---------------------------------------------------------------------------

pub(crate) fn ablate_lambda(args: &AblateLambdaArgs) -> Result<()> {
    let scene = load_scene(&args.scene)
        .with_context(|| format!("loading scene {}", args.scene.display()))?;
    let opts = localize_options(args.variant, &args.search, &args.ransac);
    let mut csv = String::new();
    for (i, lambda) in args.grid.values().into_iter().enumerate() {
        let cfg = codebook_config(&args.reducer, lambda)?;
        let cb = scene_codebook(&scene, args.reducer.reduce, args.reducer.seed, &cfg)?;
        let outcomes = localize_set(
            &cb,
            &scene.query,
            &scene.intrinsics,
            Some(&scene.db.global_bank),
            &opts,
        )?;
        let report =
            evaluate_predictions(&predicted_poses(&outcomes), &scene.query_poses, &args.thresholds);
        if i == 0 {
            csv.push_str(&report.csv_header());
            csv.push('\n');
        }
        csv.push_str(&report.csv_row(&format!("{lambda:.4}")));
        csv.push('\n');
    }
    write_text_output(args.out.as_deref(), &csv)
}

pub(crate) fn ablate_reduce(args: &AblateReduceArgs) -> Result<()> {
    let scene = load_scene(&args.scene)
        .with_context(|| format!("loading scene {}", args.scene.display()))?;
    let opts = localize_options(args.variant, &args.search, &args.ransac);
    let mut csv = String::new();
    let mut first = true;
    for method in ReduceMethod::all() {
        for lambda in args.grid.values() {
            let cfg = CodebookConfig {
                fusion: FusionConfig::new(lambda)?,
                dtype: args.dtype,
                renormalize_globals: !args.no_renorm,
            };
            let cb = scene_codebook(&scene, method, args.seed, &cfg)?;
            let outcomes = localize_set(
                &cb,
                &scene.query,
                &scene.intrinsics,
                Some(&scene.db.global_bank),
                &opts,
            )?;
            let report = evaluate_predictions(
                &predicted_poses(&outcomes),
                &scene.query_poses,
                &args.thresholds,
            );
            if first {
                csv.push_str(&report.csv_header());
                csv.push('\n');
                first = false;
            }
            csv.push_str(&report.csv_row(&format!("{method}:{lambda:.4}")));
            csv.push('\n');
        }
    }
    write_text_output(args.out.as_deref(), &csv)
}

// ---------------------------------------------------------------------------
// analyze
// ---------------------------------------------------------------------------

pub(crate) fn analyze(args: &AnalyzeArgs) -> Result<()> {
    ensure!(
        args.kmeans.is_some() || args.frustum,
        "pass --kmeans K and/or --frustum"
    );
    let cb = read_codebook(&args.codebook)
        .with_context(|| format!("reading codebook {}", args.codebook.display()))?;
    let scene = match &args.scene {
        Some(dir) => {
            Some(load_scene(dir).with_context(|| format!("loading scene {}", dir.display()))?)
        }
        None => None,
    };
    let mut doc = serde_json::Map::new();

    if let Some(k) = args.kmeans {
        let bank =
            DescriptorBank::from_flat_f32(cb.dim(), DescriptorKind::Local, cb.descriptors_f32())?;
        let km = kmeans(&bank, k, args.kmeans_seed, args.kmeans_iters)?;
        if let Some(path) = &args.clusters_out {
            let mut csv = String::from("point_id,x,y,z,cluster\n");
            for i in 0..cb.len() {
                let c = cb.coord(i);
                csv.push_str(&format!(
                    "{},{},{},{},{}\n",
                    cb.point_id(i),
                    c.x,
                    c.y,
                    c.z,
                    km.assignment[i]
                ));
            }
            ensure_parent(path)?;
            fs::write(path, csv).with_context(|| format!("writing {}", path.display()))?;
        }
        // Region entropy needs to know which region each point belongs to,
        // which only a generated scene records (via its config).
        let spread = scene
            .as_ref()
            .and_then(|s| s.config.as_ref())
            .map(|config| {
                let regions: Vec<u32> = (0..cb.len())
                    .map(|i| (cb.point_id(i) / config.points_per_region as u64) as u32)
                    .collect();
                cluster_spread(&km, &regions)
            });
        doc.insert(
            "kmeans".to_string(),
            json!({
                "k": km.k,
                "iterations": km.inertia_history.len(),
                "inertia": km.inertia,
                "spread": spread,
            }),
        );
    }

    if args.frustum {
        let scene = scene
            .as_ref()
            .ok_or_else(|| anyhow!("--frustum needs --scene DIR (for poses and intrinsics)"))?;
        let reducer = cb.reducer_spec().build()?;
        let index = build_index(
            &cb,
            args.search.index,
            args.search.cells,
            args.search.probe,
            args.search.index_seed,
        )?;
        let db_globals =
            (args.variant == Variant::Heavy).then_some(&scene.db.global_bank);
        let mut rows = Vec::new();
        for i in 0..scene.query.len() {
            let name = &scene.query.names[i];
            let global = scene.query.global_bank.row(i);
            let (fused, _) = fused_query_bank(
                &cb,
                &reducer,
                &scene.query.local_banks[i],
                &global,
                db_globals,
                args.variant,
            )?;
            let matches =
                match_bank_with(&index, &fused, &scene.query.keypoints[i], args.search.ratio_test)?;
            let k = intrinsics_for(&scene.intrinsics, name)?;
            let labels = frustum_classify(&matches, &scene.query_poses[i].1, k, args.margin_px);
            let inside = labels.iter().filter(|l| **l == FrustumLabel::Inside).count();
            rows.push(json!({
                "name": name,
                "matches": matches.len(),
                "inside": inside,
                "outside": matches.len() - inside,
            }));
        }
        doc.insert("frustum".to_string(), serde_json::Value::Array(rows));
    }

    println!("{}", serde_json::to_string_pretty(&serde_json::Value::Object(doc))?);
    Ok(())
}

// ---------------------------------------------------------------------------
// mem-report
// ---------------------------------------------------------------------------

pub(crate) fn mem_report(args: &MemReportArgs) -> Result<()> {
    let cb = read_codebook(&args.codebook)
        .with_context(|| format!("reading codebook {}", args.codebook.display()))?;
    let globals = match &args.db_globals {
        Some(path) => Some(load_global_bank(path)?),
        None => None,
    };
    let report = codebook_memory_report(&cb, globals.as_ref());
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}
