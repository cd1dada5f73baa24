//! Nearest-neighbor matching of query descriptors against the codebook:
//! an exact brute-force scan (the reference semantics) and an inverted-file
//! (IVF) approximation for large maps.
//!
//! Both modes share one row-scan routine, so IVF probing every cell is
//! bitwise identical to exact mode. Distances are squared Euclidean,
//! computed in f32 after widening any f16 storage. No ratio test or mutual
//! check by default: downstream RANSAC owns outlier rejection. An optional
//! ratio test can be enabled for diagnostics.

use rayon::prelude::*;

use crate::analyze::kmeans;
use crate::codebook::Codebook;
use crate::error::{Error, Result};
use crate::types::{DescriptorBank, DescriptorKind, Match, MatchSet};

/// Scan block size (rows). Results never depend on it; it only bounds the
/// per-thread widening buffer for f16 codebooks.
const SCAN_BLOCK: usize = 256;

/// Matching backend.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IndexMode {
    /// Full scan of every codebook entry — the reference semantics.
    Exact,
    /// Inverted file: K-means cells, query scans the `n_probe` nearest.
    Ivf,
}

impl std::str::FromStr for IndexMode {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "exact" => Ok(IndexMode::Exact),
            "ivf" => Ok(IndexMode::Ivf),
            other => Err(format!("unknown index mode `{other}` (expected exact|ivf)")),
        }
    }
}

impl std::fmt::Display for IndexMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            IndexMode::Exact => "exact",
            IndexMode::Ivf => "ivf",
        })
    }
}

#[derive(Debug, Clone)]
struct IvfData {
    n_cells: usize,
    n_probe: usize,
    /// Row-major `n_cells x dim` cell centroids.
    centroids: Vec<f32>,
    /// Codebook entry indices per cell; every entry is in exactly one cell.
    cells: Vec<Vec<u32>>,
}

/// Immutable search structure borrowing the codebook it serves.
#[derive(Debug, Clone)]
pub struct SearchIndex<'a> {
    codebook: &'a Codebook,
    ivf: Option<IvfData>,
}

impl<'a> SearchIndex<'a> {
    pub fn mode(&self) -> IndexMode {
        if self.ivf.is_some() {
            IndexMode::Ivf
        } else {
            IndexMode::Exact
        }
    }

    pub fn codebook(&self) -> &Codebook {
        self.codebook
    }

    /// IVF cell count (1 for exact mode's single implicit cell view).
    pub fn n_cells(&self) -> usize {
        self.ivf.as_ref().map_or(1, |i| i.n_cells)
    }

    pub fn n_probe(&self) -> usize {
        self.ivf.as_ref().map_or(1, |i| i.n_probe)
    }
}

/// Build a search index over `cb`.
///
/// Exact mode ignores the IVF parameters. IVF requires
/// `1 <= n_cells <= cb.len()`; `n_probe` is clamped into `[1, n_cells]`
/// so sweeping probe counts can't fall off either end. Cell centroids come
/// from seeded K-means, so builds are deterministic for fixed inputs.
pub fn build_index(
    cb: &Codebook,
    mode: IndexMode,
    n_cells: usize,
    n_probe: usize,
    seed: u64,
) -> Result<SearchIndex<'_>> {
    if cb.is_empty() {
        return Err(Error::EmptyDatabase);
    }
    match mode {
        IndexMode::Exact => Ok(SearchIndex { codebook: cb, ivf: None }),
        IndexMode::Ivf => {
            if n_cells == 0 || n_cells > cb.len() {
                return Err(Error::TooManyCells {
                    n_cells,
                    entries: cb.len(),
                });
            }
            let bank = DescriptorBank::from_flat_f32(
                cb.dim(),
                DescriptorKind::Local,
                cb.descriptors_f32(),
            )?;
            let km = kmeans(&bank, n_cells, seed, 100)?;
            let mut cells = vec![Vec::new(); n_cells];
            for (entry, &c) in km.assignment.iter().enumerate() {
                cells[c as usize].push(entry as u32);
            }
            Ok(SearchIndex {
                codebook: cb,
                ivf: Some(IvfData {
                    n_cells,
                    n_probe: n_probe.clamp(1, n_cells),
                    centroids: km.centroids,
                    cells,
                }),
            })
        }
    }
}

/// Running argmin over codebook entries; ties prefer the earlier entry,
/// which is the lower point id because entries are sorted.
struct Best {
    entry: usize,
    dist: f32,
    second: f32,
}

fn scan_entries<I: Iterator<Item = usize>>(
    cb: &Codebook,
    query: &[f32],
    entries: I,
    buf: &mut Vec<f32>,
) -> Best {
    let dim = cb.dim();
    let mut best = Best {
        entry: usize::MAX,
        dist: f32::INFINITY,
        second: f32::INFINITY,
    };
    buf.resize(dim, 0.0);
    for e in entries {
        cb.descriptor_into(e, buf);
        let mut acc = 0.0f32;
        for (q, c) in query.iter().zip(buf.iter()) {
            let d = q - c;
            acc += d * d;
        }
        if acc < best.dist {
            best.second = best.dist;
            best.dist = acc;
            best.entry = e;
        } else if acc < best.second {
            best.second = acc;
        }
    }
    best
}

fn match_one(index: &SearchIndex<'_>, query: &[f32], buf: &mut Vec<f32>) -> Best {
    let cb = index.codebook;
    match &index.ivf {
        None => {
            // blocked full scan; block boundaries can't affect a running argmin
            let n = cb.len();
            let mut best = Best {
                entry: usize::MAX,
                dist: f32::INFINITY,
                second: f32::INFINITY,
            };
            let mut start = 0;
            while start < n {
                let end = (start + SCAN_BLOCK).min(n);
                let b = scan_entries(cb, query, start..end, buf);
                merge_best(&mut best, b);
                start = end;
            }
            best
        }
        Some(ivf) => {
            let dim = cb.dim();
            // rank cells by (distance to centroid, cell id)
            let mut order: Vec<(f32, usize)> = (0..ivf.n_cells)
                .map(|c| {
                    let cen = &ivf.centroids[c * dim..(c + 1) * dim];
                    let mut acc = 0.0f32;
                    for (q, x) in query.iter().zip(cen) {
                        let d = q - x;
                        acc += d * d;
                    }
                    (acc, c)
                })
                .collect();
            order.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
            // gather candidates, ascending entry order so ties resolve to
            // the lowest point id exactly as in exact mode
            let mut candidates: Vec<u32> = Vec::new();
            for &(_, c) in order.iter().take(ivf.n_probe) {
                candidates.extend_from_slice(&ivf.cells[c]);
            }
            candidates.sort_unstable();
            scan_entries(cb, query, candidates.into_iter().map(|e| e as usize), buf)
        }
    }
}

fn merge_best(best: &mut Best, other: Best) {
    if other.dist < best.dist {
        best.second = best.dist.min(other.second);
        best.dist = other.dist;
        best.entry = other.entry;
    } else {
        best.second = best.second.min(other.dist);
    }
}

/// Match every query descriptor to its nearest codebook entry.
///
/// `query_bank` rows align with `query_keypoints`. Exact mode returns the
/// global nearest neighbor; IVF the nearest within probed cells. Ties break
/// to the lowest point id. With `ratio` set (Lowe's test, on non-squared
/// distances), a query only produces a match when
/// `best < ratio * second_best`; rejected queries are dropped.
pub fn match_bank_with(
    index: &SearchIndex<'_>,
    query_bank: &DescriptorBank,
    query_keypoints: &[[f32; 2]],
    ratio: Option<f32>,
) -> Result<MatchSet> {
    let cb = index.codebook;
    if query_bank.dim() != cb.dim() {
        return Err(Error::DimensionMismatch {
            row: 0,
            got: query_bank.dim(),
            expected: cb.dim(),
        });
    }
    assert_eq!(
        query_bank.rows(),
        query_keypoints.len(),
        "one keypoint per query descriptor row"
    );
    let matches: Vec<Option<Match>> = (0..query_bank.rows())
        .into_par_iter()
        .map(|r| {
            let mut query = vec![0.0f32; cb.dim()];
            query_bank.row_into(r, &mut query);
            let mut buf = Vec::new();
            let best = match_one(index, &query, &mut buf);
            if best.entry == usize::MAX {
                return None;
            }
            if let Some(rt) = ratio {
                // d1 < r*d2 on Euclidean distances <=> d1^2 < r^2*d2^2;
                // fails closed when either distance is NaN
                let decisive = best.dist < rt * rt * best.second;
                if !decisive {
                    return None;
                }
            }
            Some(Match {
                query_keypoint: query_keypoints[r],
                point_id: cb.point_id(best.entry),
                point_coord: cb.coord(best.entry),
                distance_sq: best.dist,
            })
        })
        .collect();
    Ok(MatchSet {
        matches: matches.into_iter().flatten().collect(),
    })
}

/// [`match_bank_with`] without a ratio test — the pipeline default.
pub fn match_bank(
    index: &SearchIndex<'_>,
    query_bank: &DescriptorBank,
    query_keypoints: &[[f32; 2]],
) -> Result<MatchSet> {
    match_bank_with(index, query_bank, query_keypoints, None)
}
