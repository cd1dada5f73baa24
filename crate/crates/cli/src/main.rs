//! `locfuse` — command-line front end for the localization pipeline.
//!
//! Subcommands compose the library end to end: `synth-gen` writes a scene
//! directory, `build-codebook` turns its database half into an `.lcb`
//! codebook, `localize` estimates query poses, `eval` scores them, the
//! `ablate-*` commands sweep fusion weights and reduction methods, and
//! `analyze` / `mem-report` expose the diagnostic tooling.
//!
//! Exit codes: 0 on success, 1 on user error (bad flags, missing or
//! malformed files, infeasible configurations), 2 on internal error (a
//! bug — any panic).
//!
//! The environment variable `LOCFUSE_THREADS` caps the worker pool
//! (0 or unset = one worker per core).

mod commands;

use std::path::PathBuf;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};

use locfuse_core::metrics::ThresholdSpec;
use locfuse_core::pipeline::Variant;
use locfuse_core::pose::RansacConfig;
use locfuse_core::reduce::ReduceMethod;
use locfuse_core::search::IndexMode;
use locfuse_core::Dtype;

#[derive(Parser)]
#[command(
    name = "locfuse",
    version,
    about = "Visual localization by fused local/global descriptor matching"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scene directory with full ground truth.
    SynthGen(SynthGenArgs),
    /// Build a codebook (.lcb) from a scene's database images.
    BuildCodebook(BuildCodebookArgs),
    /// Estimate a pose for every query image.
    Localize(LocalizeArgs),
    /// Score predicted poses against ground truth (table on stderr, JSON
    /// on stdout).
    Eval(EvalArgs),
    /// Rebuild + localize + score across a grid of fusion weights (CSV).
    AblateLambda(AblateLambdaArgs),
    /// Sweep all five reduction methods across the fusion-weight grid (CSV).
    AblateReduce(AblateReduceArgs),
    /// Inspect a codebook: K-means ambiguity clusters, frustum checks.
    Analyze(AnalyzeArgs),
    /// Exact byte accounting for a codebook (JSON).
    MemReport(MemReportArgs),
}

#[derive(Args)]
struct SynthGenArgs {
    /// Output scene directory (created if missing).
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 4)]
    regions: usize,
    #[arg(long, default_value_t = 50)]
    points_per_region: usize,
    #[arg(long, default_value_t = 8)]
    db_images: usize,
    #[arg(long, default_value_t = 8)]
    query_images: usize,
    #[arg(long, default_value_t = 64)]
    local_dim: usize,
    #[arg(long, default_value_t = 256)]
    global_dim: usize,
    /// Fraction of each region's points that reuse the shared, aliased
    /// descriptor bank (0 = all unique, 1 = fully aliased).
    #[arg(long, default_value_t = 0.8)]
    aliasing: f64,
    /// Gaussian noise added to each observed local descriptor.
    #[arg(long, default_value_t = 0.05)]
    local_noise_sigma: f64,
    /// Keypoint jitter in pixels (resampled beyond 5 sigma).
    #[arg(long, default_value_t = 0.5)]
    keypoint_noise_px: f64,
    #[arg(long, default_value_t = 50.0)]
    region_spacing: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

/// Reduction + storage settings shared by codebook-producing commands.
#[derive(Args, Clone)]
struct ReducerArgs {
    /// Reduction method: gaussian | random0 | first | center | last.
    #[arg(long, default_value = "gaussian", value_parser = ReduceMethod::from_str)]
    reduce: ReduceMethod,
    /// Reducer seed (IMPORTANT: queries must use the codebook's seed; it
    /// is stored in the .lcb header).
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Codebook storage precision: f16 | f32.
    #[arg(long, default_value = "f16", value_parser = parse_dtype)]
    dtype: Dtype,
    /// Keep reduced globals at their raw scale instead of re-normalizing
    /// them to unit length.
    #[arg(long)]
    no_renorm: bool,
}

#[derive(Args)]
struct BuildCodebookArgs {
    /// Scene directory (shortcut for --points/--observations/--db).
    #[arg(long, conflicts_with_all = ["points", "observations", "db"])]
    scene: Option<PathBuf>,
    /// Points file (point_id x y z).
    #[arg(long, requires_all = ["observations", "db"])]
    points: Option<PathBuf>,
    /// Observations file (point_id image_id kp_x kp_y row).
    #[arg(long)]
    observations: Option<PathBuf>,
    /// Database image-set directory (images.txt, <name>.dsb, global.dsb).
    #[arg(long)]
    db: Option<PathBuf>,
    /// Fusion weight on the local descriptor, in [0, 1].
    #[arg(long, default_value_t = 0.5)]
    lambda: f32,
    #[command(flatten)]
    reducer: ReducerArgs,
    /// Output codebook path (.lcb).
    #[arg(long)]
    out: PathBuf,
}

/// Nearest-neighbor search settings.
#[derive(Args, Clone)]
struct SearchArgs {
    /// Index: exact | ivf.
    #[arg(long, default_value = "exact", value_parser = IndexMode::from_str)]
    index: IndexMode,
    /// IVF cell count (ivf only).
    #[arg(long, default_value_t = 16)]
    cells: usize,
    /// IVF cells probed per query (ivf only).
    #[arg(long, default_value_t = 4)]
    probe: usize,
    #[arg(long, default_value_t = 0)]
    index_seed: u64,
    /// Ratio-test threshold; keeps a match only when the best distance is
    /// under ratio^2 times the runner-up from another point.
    #[arg(long)]
    ratio_test: Option<f32>,
}

/// RANSAC-PnP settings.
#[derive(Args, Clone)]
struct RansacArgs {
    /// Inlier gate on reprojection error, pixels.
    #[arg(long, default_value_t = 12.0)]
    reproj_px: f64,
    #[arg(long, default_value_t = 10_000)]
    max_iters: usize,
    /// Target probability of sampling an all-inlier triple.
    #[arg(long, default_value_t = 0.9999)]
    confidence: f64,
    /// Minimum inliers for a pose to count as localized.
    #[arg(long, default_value_t = 8)]
    min_inliers: usize,
    #[arg(long, default_value_t = 0)]
    ransac_seed: u64,
}

impl RansacArgs {
    fn to_config(&self) -> RansacConfig {
        RansacConfig {
            reproj_threshold_px: self.reproj_px,
            max_iterations: self.max_iters,
            confidence: self.confidence,
            min_inliers: self.min_inliers,
            seed: self.ransac_seed,
        }
    }
}

/// Where the query images (and heavy-variant database globals) come from.
#[derive(Args)]
struct QuerySourceArgs {
    /// Scene directory (shortcut for --query/--intrinsics/--db-globals).
    #[arg(long, conflicts_with_all = ["query", "intrinsics"])]
    scene: Option<PathBuf>,
    /// Query image-set directory (images.txt, <name>.dsb, global.dsb).
    #[arg(long, requires = "intrinsics")]
    query: Option<PathBuf>,
    /// Intrinsics JSON sidecar covering every query image.
    #[arg(long)]
    intrinsics: Option<PathBuf>,
    /// Database global bank (.dsb), needed by --variant heavy.
    #[arg(long)]
    db_globals: Option<PathBuf>,
}

#[derive(Args)]
struct LocalizeArgs {
    /// Codebook file (.lcb).
    #[arg(long)]
    codebook: PathBuf,
    #[command(flatten)]
    source: QuerySourceArgs,
    /// Which global descriptor feeds fusion: light | heavy.
    #[arg(long, default_value = "light", value_parser = Variant::from_str)]
    variant: Variant,
    #[command(flatten)]
    search: SearchArgs,
    #[command(flatten)]
    ransac: RansacArgs,
    /// Output pose file; failed queries appear as `# failed: name` lines.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// Predicted poses.
    #[arg(long)]
    pred: PathBuf,
    /// Ground-truth poses; every image listed here is scored.
    #[arg(long)]
    gt: PathBuf,
    /// Threshold pairs `translation:rotation_deg`, comma separated.
    #[arg(long, default_value = "0.25:2,0.5:5,5:10", value_parser = ThresholdSpec::from_str)]
    thresholds: ThresholdSpec,
}

/// `start:end:step` sweep over the fusion weight.
#[derive(Debug, Clone)]
struct Grid {
    start: f64,
    end: f64,
    step: f64,
}

impl Grid {
    fn values(&self) -> Vec<f32> {
        let n = ((self.end - self.start) / self.step).round() as usize;
        (0..=n)
            .map(|i| self.start + i as f64 * self.step)
            .filter(|v| *v <= self.end + self.step * 1e-6)
            .map(|v| v as f32)
            .collect()
    }
}

impl FromStr for Grid {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let parts: Vec<&str> = s.split(':').collect();
        let [start, end, step] = parts[..] else {
            return Err(format!("grid must be start:end:step, got \"{s}\""));
        };
        let parse = |t: &str| {
            t.parse::<f64>()
                .map_err(|_| format!("grid has a non-numeric part \"{t}\""))
        };
        let (start, end, step) = (parse(start)?, parse(end)?, parse(step)?);
        if !(start.is_finite() && end.is_finite() && step.is_finite()) || step <= 0.0 {
            return Err(format!("grid step must be positive and finite, got \"{s}\""));
        }
        if start > end {
            return Err(format!("grid start {start} exceeds end {end}"));
        }
        Ok(Grid { start, end, step })
    }
}

#[derive(Args)]
struct AblateLambdaArgs {
    /// Scene directory with database, queries and ground truth.
    #[arg(long)]
    scene: PathBuf,
    /// Fusion-weight grid, `start:end:step` inclusive.
    #[arg(long, default_value = "0.1:1.0:0.1", value_parser = Grid::from_str)]
    grid: Grid,
    #[command(flatten)]
    reducer: ReducerArgs,
    #[arg(long, default_value = "light", value_parser = Variant::from_str)]
    variant: Variant,
    #[command(flatten)]
    search: SearchArgs,
    #[command(flatten)]
    ransac: RansacArgs,
    #[arg(long, default_value = "0.25:2,0.5:5,5:10", value_parser = ThresholdSpec::from_str)]
    thresholds: ThresholdSpec,
    /// CSV output path (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AblateReduceArgs {
    /// Scene directory with database, queries and ground truth.
    #[arg(long)]
    scene: PathBuf,
    /// Fusion-weight grid, `start:end:step` inclusive.
    #[arg(long, default_value = "0.1:1.0:0.1", value_parser = Grid::from_str)]
    grid: Grid,
    /// Reducer seed shared by every method in the sweep.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Codebook storage precision: f16 | f32.
    #[arg(long, default_value = "f16", value_parser = parse_dtype)]
    dtype: Dtype,
    /// Keep reduced globals at their raw scale instead of re-normalizing.
    #[arg(long)]
    no_renorm: bool,
    #[arg(long, default_value = "light", value_parser = Variant::from_str)]
    variant: Variant,
    #[command(flatten)]
    search: SearchArgs,
    #[command(flatten)]
    ransac: RansacArgs,
    #[arg(long, default_value = "0.25:2,0.5:5,5:10", value_parser = ThresholdSpec::from_str)]
    thresholds: ThresholdSpec,
    /// CSV output path (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AnalyzeArgs {
    /// Codebook file (.lcb).
    #[arg(long)]
    codebook: PathBuf,
    /// Cluster the codebook descriptors into K groups.
    #[arg(long)]
    kmeans: Option<usize>,
    #[arg(long, default_value_t = 0)]
    kmeans_seed: u64,
    #[arg(long, default_value_t = 100)]
    kmeans_iters: usize,
    /// Per-entry cluster assignment CSV (point_id,x,y,z,cluster).
    #[arg(long)]
    clusters_out: Option<PathBuf>,
    /// Classify each query's matches against its ground-truth frustum.
    #[arg(long)]
    frustum: bool,
    /// Pixel margin around the image border for --frustum.
    #[arg(long, default_value_t = 0.0)]
    margin_px: f64,
    /// Scene directory; required by --frustum, optional for --kmeans
    /// (adds region-entropy statistics).
    #[arg(long)]
    scene: Option<PathBuf>,
    #[arg(long, default_value = "light", value_parser = Variant::from_str)]
    variant: Variant,
    #[command(flatten)]
    search: SearchArgs,
}

#[derive(Args)]
struct MemReportArgs {
    /// Codebook file (.lcb).
    #[arg(long)]
    codebook: PathBuf,
    /// Database global bank; adds the heavy variant's extra bytes.
    #[arg(long)]
    db_globals: Option<PathBuf>,
}

fn parse_dtype(s: &str) -> Result<Dtype, String> {
    match s {
        "f32" => Ok(Dtype::F32),
        "f16" => Ok(Dtype::F16),
        other => Err(format!("unknown dtype \"{other}\" (expected f16|f32)")),
    }
}

/// Apply `LOCFUSE_THREADS` before any parallel work starts.
fn configure_threads() -> anyhow::Result<()> {
    let Ok(raw) = std::env::var("LOCFUSE_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .map_err(|_| anyhow::anyhow!("LOCFUSE_THREADS must be a non-negative integer, got {raw:?}"))?;
    if n > 0 {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    configure_threads()?;
    match cli.command {
        Command::SynthGen(args) => commands::synth_gen(&args),
        Command::BuildCodebook(args) => commands::build_codebook(&args),
        Command::Localize(args) => commands::localize(&args),
        Command::Eval(args) => commands::eval(&args),
        Command::AblateLambda(args) => commands::ablate_lambda(&args),
        Command::AblateReduce(args) => commands::ablate_reduce(&args),
        Command::Analyze(args) => commands::analyze(&args),
        Command::MemReport(args) => commands::mem_report(&args),
    }
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // --help/--version land here too; those are not errors.
            let ok = matches!(
                e.kind(),
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion
            );
            e.print().expect("cannot write to stderr");
            std::process::exit(if ok { 0 } else { 1 });
        }
    };
    match std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| run(cli))) {
        Ok(Ok(())) => {}
        Ok(Err(e)) => {
            eprintln!("error: {e:#}");
            std::process::exit(1);
        }
        Err(_) => {
            // The default panic hook already printed the message and
            // location to stderr.
            eprintln!("internal error (this is a bug)");
            std::process::exit(2);
        }
    }
}
