//! Reduce global descriptors of dimension `G` down to the local descriptor
//! dimension `D`.
//!
//! Five methods are provided: a Gaussian random projection plus four
//! index-selection truncations (`random0`, `first`, `center`, `last`).
//! Reduced vectors are L2-normalized before use — truncation destroys the
//! unit norm that global descriptor families carry by convention, and
//! without renormalization the fusion weight's meaning would depend on which
//! indices survive. Callers that want the raw truncation can use
//! [`Reducer::reduce_raw`].
//!
//! # Reproducibility
//!
//! The `random0` index list must be identical in every implementation, so
//! its generator is pinned to the bit:
//!
//! * splitmix64: `state += 0x9E3779B97F4A7C15`, then
//!   `z = state; z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9;
//!   z = (z ^ (z >> 27)) * 0x94D049BB133111EB; output z ^ (z >> 31)`
//!   (all arithmetic mod 2^64).
//! * A forward Fisher–Yates pass over `[0..G)`: for `i` in `0..G-1`,
//!   `j = i + next() % (G - i)`, swap. The index list is the first `D`
//!   entries of the shuffled array. The modulo introduces negligible bias
//!   for realistic `G` and is part of the pinned definition.
//!
//! Gaussian projections draw `N(0, 1/D)` entries row-major via Box–Muller
//! over the same splitmix64 stream; those are bit-stable across runs on one
//! platform (libm differences may flip last-place bits across platforms,
//! which is why only `random0` is pinned cross-platform).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::normalize_in_place;

/// How a global descriptor is brought down to the local dimension.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReduceMethod {
    /// Random projection with i.i.d. `N(0, 1/D)` entries.
    Gaussian,
    /// Keep `D` positions of a seeded random permutation of `[0..G)`.
    Random0,
    /// Keep the first `D` entries.
    First,
    /// Keep the centered window of `D` entries.
    Center,
    /// Keep the last `D` entries.
    Last,
}

impl ReduceMethod {
    pub fn all() -> [ReduceMethod; 5] {
        [
            ReduceMethod::Gaussian,
            ReduceMethod::Random0,
            ReduceMethod::First,
            ReduceMethod::Center,
            ReduceMethod::Last,
        ]
    }

    pub(crate) fn tag(self) -> u8 {
        match self {
            ReduceMethod::Gaussian => 0,
            ReduceMethod::Random0 => 1,
            ReduceMethod::First => 2,
            ReduceMethod::Center => 3,
            ReduceMethod::Last => 4,
        }
    }

    pub(crate) fn from_tag(tag: u8) -> Option<Self> {
        Some(match tag {
            0 => ReduceMethod::Gaussian,
            1 => ReduceMethod::Random0,
            2 => ReduceMethod::First,
            3 => ReduceMethod::Center,
            4 => ReduceMethod::Last,
            _ => return None,
        })
    }
}

impl std::fmt::Display for ReduceMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl ReduceMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            ReduceMethod::Gaussian => "gaussian",
            ReduceMethod::Random0 => "random0",
            ReduceMethod::First => "first",
            ReduceMethod::Center => "center",
            ReduceMethod::Last => "last",
        }
    }
}

impl std::str::FromStr for ReduceMethod {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Ok(match s {
            "gaussian" => ReduceMethod::Gaussian,
            "random0" => ReduceMethod::Random0,
            "first" => ReduceMethod::First,
            "center" => ReduceMethod::Center,
            "last" => ReduceMethod::Last,
            other => return Err(format!("unknown reduce method \"{other}\"")),
        })
    }
}

/// The serializable identity of a reducer: enough to rebuild it exactly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReducerSpec {
    pub method: ReduceMethod,
    pub in_dim: u32,
    pub out_dim: u32,
    pub seed: u64,
}

impl ReducerSpec {
    /// Rebuild the reducer this spec describes.
    pub fn build(&self) -> Result<Reducer> {
        build_reducer(
            self.method,
            self.in_dim as usize,
            self.out_dim as usize,
            self.seed,
        )
    }
}

/// A fixed mapping from `in_dim`-vectors to `out_dim`-vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct Reducer {
    method: ReduceMethod,
    in_dim: usize,
    out_dim: usize,
    seed: u64,
    /// `out_dim x in_dim`, row-major; gaussian only.
    projection: Option<Vec<f32>>,
    /// Selected input positions; all index methods.
    index_list: Option<Vec<u32>>,
}

/// Build a reducer; deterministic for fixed `(method, in_dim, out_dim, seed)`.
pub fn build_reducer(
    method: ReduceMethod,
    in_dim: usize,
    out_dim: usize,
    seed: u64,
) -> Result<Reducer> {
    if out_dim < 1 || out_dim > in_dim {
        return Err(Error::InvalidDims { in_dim, out_dim });
    }
    let (projection, index_list) = match method {
        ReduceMethod::Gaussian => (Some(gaussian_projection(in_dim, out_dim, seed)), None),
        ReduceMethod::Random0 => (None, Some(shuffled_prefix(in_dim, out_dim, seed))),
        ReduceMethod::First => (None, Some((0..out_dim as u32).collect())),
        ReduceMethod::Center => {
            let start = ((in_dim - out_dim) / 2) as u32;
            (None, Some((start..start + out_dim as u32).collect()))
        }
        ReduceMethod::Last => {
            let start = (in_dim - out_dim) as u32;
            (None, Some((start..start + out_dim as u32).collect()))
        }
    };
    Ok(Reducer {
        method,
        in_dim,
        out_dim,
        seed,
        projection,
        index_list,
    })
}

impl Reducer {
    /// Test/tooling constructor with an explicit projection matrix
    /// (`out_dim x in_dim`, row-major). Not serializable.
    pub fn with_projection(in_dim: usize, out_dim: usize, projection: Vec<f32>) -> Self {
        assert_eq!(projection.len(), in_dim * out_dim);
        Reducer {
            method: ReduceMethod::Gaussian,
            in_dim,
            out_dim,
            seed: 0,
            projection: Some(projection),
            index_list: None,
        }
    }

    pub fn method(&self) -> ReduceMethod {
        self.method
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn spec(&self) -> ReducerSpec {
        ReducerSpec {
            method: self.method,
            in_dim: self.in_dim as u32,
            out_dim: self.out_dim as u32,
            seed: self.seed,
        }
    }

    pub fn index_list(&self) -> Option<&[u32]> {
        self.index_list.as_deref()
    }

    /// Reduce and L2-normalize `g`.
    pub fn reduce(&self, g: &[f32]) -> Result<Vec<f32>> {
        let mut out = self.reduce_raw(g)?;
        normalize_in_place(&mut out)?;
        Ok(out)
    }

    /// Reduce without the final normalization (the `--no-renorm` path).
    pub fn reduce_raw(&self, g: &[f32]) -> Result<Vec<f32>> {
        if g.len() != self.in_dim {
            return Err(Error::DimensionMismatch {
                row: 0,
                got: g.len(),
                expected: self.in_dim,
            });
        }
        let out = if let Some(idx) = &self.index_list {
            idx.iter().map(|&i| g[i as usize]).collect()
        } else {
            let proj = self.projection.as_ref().expect("gaussian reducer has a projection");
            let mut out = vec![0.0f32; self.out_dim];
            for (k, row) in proj.chunks_exact(self.in_dim).enumerate() {
                // f64 accumulation: cheap, and keeps long dot products stable
                let acc: f64 = row
                    .iter()
                    .zip(g)
                    .map(|(&p, &x)| p as f64 * x as f64)
                    .sum();
                out[k] = acc as f32;
            }
            out
        };
        Ok(out)
    }
}

// ===== pinned pseudo-random generator =====

/// splitmix64 as documented in the module header.
pub(crate) struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub(crate) fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    pub(crate) fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
}

/// First `d` entries of a Fisher–Yates shuffle of `[0..g)`.
fn shuffled_prefix(g: usize, d: usize, seed: u64) -> Vec<u32> {
    let mut rng = SplitMix64::new(seed);
    let mut arr: Vec<u32> = (0..g as u32).collect();
    for i in 0..g.saturating_sub(1) {
        let j = i + (rng.next_u64() % (g - i) as u64) as usize;
        arr.swap(i, j);
    }
    arr.truncate(d);
    arr
}

/// Row-major `d x g` matrix of i.i.d. `N(0, 1/d)` entries via Box–Muller.
fn gaussian_projection(g: usize, d: usize, seed: u64) -> Vec<f32> {
    let mut rng = SplitMix64::new(seed);
    let scale = (1.0 / d as f64).sqrt();
    let mut out = Vec::with_capacity(d * g);
    let mut spare: Option<f64> = None;
    for _ in 0..d * g {
        let z = match spare.take() {
            Some(z1) => z1,
            None => {
                // u1 in (0, 1] keeps ln() finite; u2 in [0, 1)
                let u1 = ((rng.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64);
                let u2 = (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
                let r = (-2.0 * u1.ln()).sqrt();
                let theta = 2.0 * std::f64::consts::PI * u2;
                spare = Some(r * theta.sin());
                r * theta.cos()
            }
        };
        out.push((z * scale) as f32);
    }
    out
}
