//! The weighted-average fusion operator, used identically at build time and
//! query time.
//!
//! A fused descriptor is the convex combination
//! `lambda * local + (1 - lambda) * global_reduced`. `lambda = 1` is the
//! plain local-only descriptor; `lambda = 0` keeps only the image-level
//! context. Fused vectors are deliberately *not* renormalized: the codebook
//! averages them as-is, so the mean stays a mean.
//!
//! Two query-time variants exist:
//! * **light** — fuse with the query image's own (reduced) global
//!   descriptor; nothing extra is stored in the map.
//! * **heavy** — replace the query global with its nearest neighbor among
//!   the database globals (full-dimensional L2 search, ties to the lowest
//!   image id), at the cost of keeping those globals around.

use crate::error::{Error, Result};
use crate::reduce::Reducer;
use crate::types::{normalize_in_place, DescriptorBank};

/// Fusion weight and input handling, shared by build and query paths.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FusionConfig {
    /// Convex weight on the local descriptor, in `[0, 1]`.
    pub lambda: f32,
    /// L2-normalize the local input before mixing (the global side arrives
    /// normalized from the reducer). Default true.
    pub renormalize_inputs: bool,
}

impl FusionConfig {
    pub fn new(lambda: f32) -> Result<Self> {
        if !(0.0..=1.0).contains(&lambda) || !lambda.is_finite() {
            return Err(Error::LambdaOutOfRange { value: lambda });
        }
        Ok(Self {
            lambda,
            renormalize_inputs: true,
        })
    }
}

impl Default for FusionConfig {
    /// The pipeline's single hyper-parameter defaults to an even split.
    fn default() -> Self {
        Self {
            lambda: 0.5,
            renormalize_inputs: true,
        }
    }
}

/// Fuse one local descriptor with one reduced global descriptor.
pub fn fuse(cfg: &FusionConfig, local: &[f32], global_reduced: &[f32]) -> Result<Vec<f32>> {
    let mut out = vec![0.0f32; local.len()];
    fuse_into(cfg, local, global_reduced, &mut out)?;
    Ok(out)
}

/// Allocation-free variant of [`fuse`] for hot loops.
pub fn fuse_into(
    cfg: &FusionConfig,
    local: &[f32],
    global_reduced: &[f32],
    out: &mut [f32],
) -> Result<()> {
    if local.len() != global_reduced.len() || out.len() != local.len() {
        return Err(Error::DimensionMismatch {
            row: 0,
            got: global_reduced.len(),
            expected: local.len(),
        });
    }
    for (row, v) in [local, global_reduced].into_iter().enumerate() {
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFiniteValue { row });
        }
    }
    let lambda = cfg.lambda;
    if cfg.renormalize_inputs {
        out.copy_from_slice(local);
        normalize_in_place(out)?;
        for (o, &g) in out.iter_mut().zip(global_reduced) {
            *o = lambda * *o + (1.0 - lambda) * g;
        }
    } else {
        for ((o, &l), &g) in out.iter_mut().zip(local).zip(global_reduced) {
            *o = lambda * l + (1.0 - lambda) * g;
        }
    }
    Ok(())
}

/// Index of the database global nearest to `query_global_full`, measured in
/// the full dimension; ties go to the lowest row (= image id).
pub fn nearest_global(db_globals: &DescriptorBank, query_global_full: &[f32]) -> Result<u32> {
    if db_globals.rows() == 0 {
        return Err(Error::EmptyDatabase);
    }
    if query_global_full.len() != db_globals.dim() {
        return Err(Error::DimensionMismatch {
            row: 0,
            got: query_global_full.len(),
            expected: db_globals.dim(),
        });
    }
    let mut row_buf = vec![0.0f32; db_globals.dim()];
    let mut best = (f32::INFINITY, 0u32);
    for r in 0..db_globals.rows() {
        db_globals.row_into(r, &mut row_buf);
        let mut d = 0.0f32;
        for (&a, &b) in row_buf.iter().zip(query_global_full) {
            let diff = a - b;
            d += diff * diff;
        }
        if d < best.0 {
            best = (d, r as u32);
        }
    }
    Ok(best.1)
}

/// Heavy-variant query fusion: swap the query global for its nearest
/// database global, reduce that, then fuse. Returns the fused descriptor and
/// the chosen database image id (bank row).
pub fn fuse_query_heavy(
    cfg: &FusionConfig,
    local: &[f32],
    query_global_full: &[f32],
    db_globals: &DescriptorBank,
    reducer: &Reducer,
) -> Result<(Vec<f32>, u32)> {
    let k = nearest_global(db_globals, query_global_full)?;
    let reduced = reducer.reduce(&db_globals.row(k as usize))?;
    Ok((fuse(cfg, local, &reduced)?, k))
}
