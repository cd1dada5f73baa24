//! Build the per-point fused mean-descriptor codebook from database
//! observations, and account for its memory exactly.
//!
//! Every map point gets one descriptor: the mean of all its fused
//! appearances across the database images that observe it. Accumulation is
//! carried out in f32 over observations sorted by
//! `(point_id, image_id, descriptor_row)`, so the result is bitwise
//! reproducible regardless of input order or thread count; the final cast to
//! the storage dtype happens once at the end.

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::fuse::{fuse_into, FusionConfig};
use crate::reduce::{Reducer, ReducerSpec};
use crate::types::{DescriptorBank, Dtype, Observation, Payload, Point3D};

/// Build-time options: fusion weight, storage precision and the reduction
/// normalization toggle (`--no-renorm` sets `renormalize_globals = false`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CodebookConfig {
    pub fusion: FusionConfig,
    pub dtype: Dtype,
    pub renormalize_globals: bool,
}

impl Default for CodebookConfig {
    fn default() -> Self {
        Self {
            fusion: FusionConfig::default(),
            dtype: Dtype::F16,
            renormalize_globals: true,
        }
    }
}

/// The searchable map: one `(point_id, coord, descriptor)` entry per 3D
/// point, sorted by point id, plus the build parameters needed to treat
/// queries identically.
#[derive(Debug, Clone)]
pub struct Codebook {
    dim: usize,
    point_ids: Vec<u64>,
    coords: Vec<Vector3<f32>>,
    descriptors: Payload,
    fusion: FusionConfig,
    renormalize_globals: bool,
    reducer_spec: ReducerSpec,
    /// Points that had no observations and were left out of the codebook.
    /// Transient build report; not serialized.
    excluded_points: Vec<u64>,
}

impl PartialEq for Codebook {
    fn eq(&self, other: &Self) -> bool {
        // excluded_points is a build-time report, not part of the map
        self.dim == other.dim
            && self.point_ids == other.point_ids
            && self.coords == other.coords
            && self.descriptors == other.descriptors
            && self.fusion == other.fusion
            && self.renormalize_globals == other.renormalize_globals
            && self.reducer_spec == other.reducer_spec
    }
}

impl Codebook {
    /// Assemble a codebook from finished entries (used by the file reader,
    /// benchmarks and tests). Entries must be sorted by strictly increasing
    /// point id.
    pub fn from_entries(
        dim: usize,
        dtype: Dtype,
        entries: &[(u64, [f32; 3], Vec<f32>)],
        fusion: FusionConfig,
        renormalize_globals: bool,
        reducer_spec: ReducerSpec,
    ) -> Result<Self> {
        let mut point_ids = Vec::with_capacity(entries.len());
        let mut coords = Vec::with_capacity(entries.len());
        let mut flat = Vec::with_capacity(entries.len() * dim);
        for (row, (id, coord, desc)) in entries.iter().enumerate() {
            if desc.len() != dim {
                return Err(Error::DimensionMismatch {
                    row,
                    got: desc.len(),
                    expected: dim,
                });
            }
            if let Some(&prev) = point_ids.last() {
                assert!(*id > prev, "codebook entries must be sorted by point id");
            }
            point_ids.push(*id);
            coords.push(Vector3::new(coord[0], coord[1], coord[2]));
            flat.extend_from_slice(desc);
        }
        let descriptors = match dtype {
            Dtype::F32 => Payload::F32(flat),
            Dtype::F16 => Payload::F16(flat.iter().map(|&x| half::f16::from_f32(x)).collect()),
        };
        Ok(Self {
            dim,
            point_ids,
            coords,
            descriptors,
            fusion,
            renormalize_globals,
            reducer_spec,
            excluded_points: Vec::new(),
        })
    }

    pub(crate) fn from_raw_parts(
        dim: usize,
        point_ids: Vec<u64>,
        coords: Vec<Vector3<f32>>,
        descriptors: Payload,
        fusion: FusionConfig,
        renormalize_globals: bool,
        reducer_spec: ReducerSpec,
    ) -> Self {
        debug_assert_eq!(point_ids.len(), coords.len());
        debug_assert_eq!(point_ids.len() * dim, descriptors.len());
        Self {
            dim,
            point_ids,
            coords,
            descriptors,
            fusion,
            renormalize_globals,
            reducer_spec,
            excluded_points: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.point_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.point_ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn dtype(&self) -> Dtype {
        self.descriptors.dtype()
    }

    pub fn fusion(&self) -> FusionConfig {
        self.fusion
    }

    pub fn renormalize_globals(&self) -> bool {
        self.renormalize_globals
    }

    pub fn reducer_spec(&self) -> ReducerSpec {
        self.reducer_spec
    }

    pub fn point_ids(&self) -> &[u64] {
        &self.point_ids
    }

    pub fn point_id(&self, entry: usize) -> u64 {
        self.point_ids[entry]
    }

    pub fn coord(&self, entry: usize) -> Vector3<f32> {
        self.coords[entry]
    }

    /// Widen entry `i`'s descriptor into `out`.
    pub fn descriptor_into(&self, i: usize, out: &mut [f32]) {
        assert_eq!(out.len(), self.dim);
        self.descriptors.widen_into(i * self.dim, out);
    }

    /// One widened component.
    pub fn descriptor_component(&self, entry: usize, c: usize) -> f32 {
        self.descriptors.get(entry * self.dim + c)
    }

    /// All descriptors widened into a row-major f32 buffer.
    pub fn descriptors_f32(&self) -> Vec<f32> {
        let mut out = vec![0.0; self.descriptors.len()];
        self.descriptors.widen_into(0, &mut out);
        out
    }

    pub(crate) fn payload(&self) -> &Payload {
        &self.descriptors
    }

    pub fn excluded_points(&self) -> &[u64] {
        &self.excluded_points
    }
}

/// Build the codebook.
///
/// `local_banks` is indexed by image id, and row `i` of `global_bank` is
/// image `i`'s global descriptor — image ids are dense by convention
/// (ingestion assigns them in file order).
pub fn build_codebook(
    points: &[Point3D],
    observations: &[Observation],
    local_banks: &[DescriptorBank],
    global_bank: &DescriptorBank,
    reducer: &Reducer,
    cfg: &CodebookConfig,
) -> Result<Codebook> {
    let dim = reducer.out_dim();
    for (i, bank) in local_banks.iter().enumerate() {
        if bank.dim() != dim {
            return Err(Error::DimensionMismatch {
                row: i,
                got: bank.dim(),
                expected: dim,
            });
        }
    }
    if global_bank.dim() != reducer.in_dim() {
        return Err(Error::DimensionMismatch {
            row: 0,
            got: global_bank.dim(),
            expected: reducer.in_dim(),
        });
    }

    let mut coord_of = std::collections::HashMap::with_capacity(points.len());
    for p in points {
        coord_of.insert(p.id, p.coord.map(|x| x as f32));
    }

    // validate every observation before any heavy work
    for (index, obs) in observations.iter().enumerate() {
        if !coord_of.contains_key(&obs.point_id) {
            return Err(Error::DanglingReference { index, what: "point" });
        }
        let Some(bank) = local_banks.get(obs.image_id as usize) else {
            return Err(Error::DanglingReference { index, what: "image" });
        };
        if obs.descriptor_row as usize >= bank.rows() {
            return Err(Error::DanglingReference {
                index,
                what: "descriptor row",
            });
        }
        if obs.image_id as usize >= global_bank.rows() {
            return Err(Error::MissingGlobal {
                image_id: obs.image_id,
            });
        }
    }

    // one reduced global per referenced image
    let mut used_images: Vec<u32> = observations.iter().map(|o| o.image_id).collect();
    used_images.sort_unstable();
    used_images.dedup();
    let mut reduced_globals: Vec<Option<Vec<f32>>> = vec![None; global_bank.rows()];
    for &img in &used_images {
        let full = global_bank.row(img as usize);
        let reduced = if cfg.renormalize_globals {
            reducer.reduce(&full)?
        } else {
            reducer.reduce_raw(&full)?
        };
        reduced_globals[img as usize] = Some(reduced);
    }

    // fixed accumulation order: sort observation indices, group by point
    let mut order: Vec<usize> = (0..observations.len()).collect();
    order.sort_unstable_by_key(|&i| {
        let o = &observations[i];
        (o.point_id, o.image_id, o.descriptor_row)
    });
    let mut groups: Vec<(u64, Vec<usize>)> = Vec::new();
    for &i in &order {
        let pid = observations[i].point_id;
        match groups.last_mut() {
            Some((last, idxs)) if *last == pid => idxs.push(i),
            _ => groups.push((pid, vec![i])),
        }
    }

    let per_point: Vec<(u64, Vec<f32>)> = groups
        .par_iter()
        .map(|(pid, idxs)| -> Result<(u64, Vec<f32>)> {
            let mut acc = vec![0.0f32; dim];
            let mut local = vec![0.0f32; dim];
            let mut fused = vec![0.0f32; dim];
            for &i in idxs {
                let obs = &observations[i];
                local_banks[obs.image_id as usize].row_into(obs.descriptor_row as usize, &mut local);
                let global = reduced_globals[obs.image_id as usize]
                    .as_deref()
                    .expect("referenced image has a reduced global");
                fuse_into(&cfg.fusion, &local, global, &mut fused)?;
                for (a, &f) in acc.iter_mut().zip(&fused) {
                    *a += f;
                }
            }
            let n = idxs.len() as f32;
            for a in acc.iter_mut() {
                *a /= n;
            }
            Ok((*pid, acc))
        })
        .collect::<Result<_>>()?;

    let mut excluded: Vec<u64> = points
        .iter()
        .map(|p| p.id)
        .filter(|id| groups.binary_search_by_key(id, |(pid, _)| *pid).is_err())
        .collect();
    excluded.sort_unstable();

    let mut point_ids = Vec::with_capacity(per_point.len());
    let mut coords = Vec::with_capacity(per_point.len());
    let mut flat = Vec::with_capacity(per_point.len() * dim);
    for (pid, desc) in &per_point {
        point_ids.push(*pid);
        coords.push(coord_of[pid]);
        flat.extend_from_slice(desc);
    }
    let descriptors = match cfg.dtype {
        Dtype::F32 => Payload::F32(flat),
        Dtype::F16 => Payload::F16(flat.iter().map(|&x| half::f16::from_f32(x)).collect()),
    };

    let mut cb = Codebook::from_raw_parts(
        dim,
        point_ids,
        coords,
        descriptors,
        cfg.fusion,
        cfg.renormalize_globals,
        reducer.spec(),
    );
    cb.excluded_points = excluded;
    Ok(cb)
}

/// Exact byte accounting for a codebook and (optionally) the extra database
/// globals the heavy query variant keeps around. All figures equal the
/// corresponding on-disk payload sizes; add the fixed file headers to get
/// file sizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct MemoryReport {
    pub entries: usize,
    pub dim: usize,
    /// `entries * dim * dtype_size`
    pub descriptor_bytes: u64,
    /// `entries * 12` (three f32 per coordinate)
    pub coord_bytes: u64,
    /// `entries * 8` (point ids)
    pub point_id_bytes: u64,
    /// descriptor + coord + point id bytes = codebook file payload
    pub codebook_payload_bytes: u64,
    /// `rows * G * 4` when the heavy variant stores database globals
    pub heavy_global_bytes: u64,
    pub total_bytes: u64,
}

/// Compute the [`MemoryReport`] for `cb`, counting `heavy_globals` when the
/// heavy query variant will keep a database global bank alongside the map.
pub fn codebook_memory_report(cb: &Codebook, heavy_globals: Option<&DescriptorBank>) -> MemoryReport {
    let entries = cb.len() as u64;
    let descriptor_bytes = entries * cb.dim() as u64 * cb.dtype().size_bytes() as u64;
    let coord_bytes = entries * 12;
    let point_id_bytes = entries * 8;
    let codebook_payload_bytes = descriptor_bytes + coord_bytes + point_id_bytes;
    let heavy_global_bytes = heavy_globals
        .map(|g| g.rows() as u64 * g.dim() as u64 * 4)
        .unwrap_or(0);
    MemoryReport {
        entries: cb.len(),
        dim: cb.dim(),
        descriptor_bytes,
        coord_bytes,
        point_id_bytes,
        codebook_payload_bytes,
        heavy_global_bytes,
        total_bytes: codebook_payload_bytes + heavy_global_bytes,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reduce::{build_reducer, ReduceMethod};
    use crate::types::DescriptorKind;
    use nalgebra::Vector3 as V3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit_rows(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> Vec<Vec<f32>> {
        (0..n)
            .map(|_| {
                let mut v: Vec<f32> = (0..dim).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
                crate::types::normalize_in_place(&mut v).unwrap();
                v
            })
            .collect()
    }

    struct Fixture {
        points: Vec<Point3D>,
        observations: Vec<Observation>,
        local_banks: Vec<DescriptorBank>,
        global_bank: DescriptorBank,
    }

    /// Random instance: `n_points` points seen by 3..=10 of `n_images` images.
    fn fixture(seed: u64, n_points: usize, n_images: usize, dim: usize, g_dim: usize) -> Fixture {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let points: Vec<Point3D> = (0..n_points)
            .map(|i| {
                Point3D::new(
                    i as u64 * 3 + 1, // non-dense ids on purpose
                    V3::new(
                        rng.gen_range(-5.0..5.0),
                        rng.gen_range(-5.0..5.0),
                        rng.gen_range(-5.0..5.0),
                    ),
                )
            })
            .collect();
        let mut per_image_rows: Vec<Vec<Vec<f32>>> = vec![Vec::new(); n_images];
        let mut observations = Vec::new();
        for p in &points {
            let n_obs = rng.gen_range(3..=10).min(n_images);
            let mut imgs: Vec<usize> = (0..n_images).collect();
            // choose n_obs distinct images
            for k in 0..n_obs {
                let j = rng.gen_range(k..n_images);
                imgs.swap(k, j);
            }
            for &img in &imgs[..n_obs] {
                let mut desc: Vec<f32> = (0..dim).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
                crate::types::normalize_in_place(&mut desc).unwrap();
                per_image_rows[img].push(desc);
                observations.push(Observation {
                    point_id: p.id,
                    image_id: img as u32,
                    keypoint: [rng.gen_range(0.0..640.0), rng.gen_range(0.0..480.0)],
                    descriptor_row: (per_image_rows[img].len() - 1) as u32,
                });
            }
        }
        let local_banks: Vec<DescriptorBank> = per_image_rows
            .iter()
            .map(|rows| DescriptorBank::from_rows(dim, DescriptorKind::Local, rows).unwrap())
            .collect();
        let global_rows = unit_rows(&mut rng, n_images, g_dim);
        let global_bank =
            DescriptorBank::from_rows(g_dim, DescriptorKind::Global, &global_rows).unwrap();
        Fixture {
            points,
            observations,
            local_banks,
            global_bank,
        }
    }

    /// Independent reference: for each point, scan the whole observation
    /// list (no grouping, no parallelism), fuse and average in f32.
    fn naive_codebook(f: &Fixture, reducer: &Reducer, cfg: &CodebookConfig) -> Vec<(u64, Vec<f32>)> {
        let dim = reducer.out_dim();
        let mut ids: Vec<u64> = f.points.iter().map(|p| p.id).collect();
        ids.sort_unstable();
        let mut out = Vec::new();
        for id in ids {
            let mut acc = vec![0.0f32; dim];
            let mut count = 0u32;
            let mut obs_of_point: Vec<&Observation> =
                f.observations.iter().filter(|o| o.point_id == id).collect();
            obs_of_point.sort_by_key(|o| (o.image_id, o.descriptor_row));
            for o in obs_of_point {
                let mut local = f.local_banks[o.image_id as usize].row(o.descriptor_row as usize);
                crate::types::normalize_in_place(&mut local).unwrap();
                let global = reducer
                    .reduce(&f.global_bank.row(o.image_id as usize))
                    .unwrap();
                for k in 0..dim {
                    acc[k] += cfg.fusion.lambda * local[k] + (1.0 - cfg.fusion.lambda) * global[k];
                }
                count += 1;
            }
            if count > 0 {
                for a in acc.iter_mut() {
                    *a /= count as f32;
                }
                out.push((id, acc));
            }
        }
        out
    }

    #[test]
    fn single_observation_equals_single_fused_appearance() {
        let mut f = fixture(1, 1, 4, 8, 16);
        f.observations.truncate(1);
        let reducer = build_reducer(ReduceMethod::First, 16, 8, 0).unwrap();
        let cfg = CodebookConfig {
            dtype: Dtype::F32,
            ..Default::default()
        };
        let cb = build_codebook(
            &f.points,
            &f.observations,
            &f.local_banks,
            &f.global_bank,
            &reducer,
            &cfg,
        )
        .unwrap();
        assert_eq!(cb.len(), 1);
        let obs = &f.observations[0];
        let mut local = f.local_banks[obs.image_id as usize].row(obs.descriptor_row as usize);
        crate::types::normalize_in_place(&mut local).unwrap();
        let global = reducer
            .reduce(&f.global_bank.row(obs.image_id as usize))
            .unwrap();
        let expected = crate::fuse::fuse(&cfg.fusion, &local, &global).unwrap();
        let mut got = vec![0.0f32; 8];
        cb.descriptor_into(0, &mut got);
        assert_eq!(got, expected);
    }

    #[test]
    fn two_term_mean() {
        // two appearances that fuse to (1,0) and (0,1) must average to (0.5,0.5)
        let points = vec![Point3D::new(7, V3::new(0.0, 0.0, 0.0))];
        let local_banks = vec![
            DescriptorBank::from_rows(2, DescriptorKind::Local, &[vec![1.0, 0.0]]).unwrap(),
            DescriptorBank::from_rows(2, DescriptorKind::Local, &[vec![0.0, 1.0]]).unwrap(),
        ];
        let global_bank = DescriptorBank::from_rows(
            2,
            DescriptorKind::Global,
            &[vec![1.0, 0.0], vec![1.0, 0.0]],
        )
        .unwrap();
        let observations = vec![
            Observation {
                point_id: 7,
                image_id: 0,
                keypoint: [0.0, 0.0],
                descriptor_row: 0,
            },
            Observation {
                point_id: 7,
                image_id: 1,
                keypoint: [0.0, 0.0],
                descriptor_row: 0,
            },
        ];
        let reducer = build_reducer(ReduceMethod::First, 2, 2, 0).unwrap();
        let cfg = CodebookConfig {
            fusion: FusionConfig::new(1.0).unwrap(),
            dtype: Dtype::F32,
            renormalize_globals: true,
        };
        let cb = build_codebook(
            &points,
            &observations,
            &local_banks,
            &global_bank,
            &reducer,
            &cfg,
        )
        .unwrap();
        let mut got = vec![0.0f32; 2];
        cb.descriptor_into(0, &mut got);
        assert_eq!(got, vec![0.5, 0.5]);
    }

    #[test]
    fn matches_naive_double_loop_f32() {
        for seed in 0..5 {
            let f = fixture(seed, 50, 12, 16, 48);
            let reducer = build_reducer(ReduceMethod::Random0, 48, 16, seed).unwrap();
            let cfg = CodebookConfig {
                dtype: Dtype::F32,
                ..Default::default()
            };
            let cb = build_codebook(
                &f.points,
                &f.observations,
                &f.local_banks,
                &f.global_bank,
                &reducer,
                &cfg,
            )
            .unwrap();
            let oracle = naive_codebook(&f, &reducer, &cfg);
            assert_eq!(cb.len(), oracle.len());
            for (i, (id, desc)) in oracle.iter().enumerate() {
                assert_eq!(cb.point_id(i), *id);
                for (c, &v) in desc.iter().enumerate() {
                    let got = cb.descriptor_component(i, c);
                    assert!(
                        (got - v).abs() <= 1e-6,
                        "seed {seed} entry {i} comp {c}: {got} vs {v}"
                    );
                }
            }
        }
    }

    #[test]
    fn permutation_of_observations_is_bitwise_invariant() {
        let f = fixture(3, 30, 8, 12, 24);
        let reducer = build_reducer(ReduceMethod::Center, 24, 12, 0).unwrap();
        let cfg = CodebookConfig::default();
        let build = |obs: &[Observation]| {
            build_codebook(&f.points, obs, &f.local_banks, &f.global_bank, &reducer, &cfg).unwrap()
        };
        let a = build(&f.observations);
        let mut shuffled = f.observations.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for i in (1..shuffled.len()).rev() {
            let j = rng.gen_range(0..=i);
            shuffled.swap(i, j);
        }
        let b = build(&shuffled);
        assert_eq!(a, b);
    }

    #[test]
    fn mean_stays_within_appearance_bounds() {
        let f = fixture(11, 40, 10, 8, 16);
        let reducer = build_reducer(ReduceMethod::First, 16, 8, 0).unwrap();
        let cfg = CodebookConfig {
            dtype: Dtype::F32,
            ..Default::default()
        };
        let cb = build_codebook(
            &f.points,
            &f.observations,
            &f.local_banks,
            &f.global_bank,
            &reducer,
            &cfg,
        )
        .unwrap();
        for (entry, &pid) in cb.point_ids().iter().enumerate() {
            // recompute fused appearances for this point
            let mut lo = [f32::INFINITY; 8];
            let mut hi = [f32::NEG_INFINITY; 8];
            for o in f.observations.iter().filter(|o| o.point_id == pid) {
                let mut local = f.local_banks[o.image_id as usize].row(o.descriptor_row as usize);
                crate::types::normalize_in_place(&mut local).unwrap();
                let global = reducer.reduce(&f.global_bank.row(o.image_id as usize)).unwrap();
                let fused = crate::fuse::fuse(&cfg.fusion, &local, &global).unwrap();
                for k in 0..8 {
                    lo[k] = lo[k].min(fused[k]);
                    hi[k] = hi[k].max(fused[k]);
                }
            }
            for k in 0..8 {
                let v = cb.descriptor_component(entry, k);
                assert!(
                    v >= lo[k] - 1e-6 && v <= hi[k] + 1e-6,
                    "entry {entry} comp {k}: {v} outside [{}, {}]",
                    lo[k],
                    hi[k]
                );
            }
        }
    }

    #[test]
    fn f16_cast_error_bounded() {
        let f = fixture(17, 30, 8, 8, 16);
        let reducer = build_reducer(ReduceMethod::Last, 16, 8, 0).unwrap();
        let mut cfg = CodebookConfig {
            dtype: Dtype::F32,
            ..Default::default()
        };
        let full = build_codebook(
            &f.points,
            &f.observations,
            &f.local_banks,
            &f.global_bank,
            &reducer,
            &cfg,
        )
        .unwrap();
        cfg.dtype = Dtype::F16;
        let half = build_codebook(
            &f.points,
            &f.observations,
            &f.local_banks,
            &f.global_bank,
            &reducer,
            &cfg,
        )
        .unwrap();
        for i in 0..full.len() {
            for c in 0..full.dim() {
                let a = full.descriptor_component(i, c);
                let b = half.descriptor_component(i, c);
                // half precision has an 11-bit significand
                let bound = (2.0f32).powi(-11) * a.abs().max(f32::MIN_POSITIVE);
                assert!(
                    (a - b).abs() <= bound,
                    "entry {i} comp {c}: |{a} - {b}| > {bound}"
                );
            }
        }
    }

    #[test]
    fn zero_observation_points_are_excluded_and_reported() {
        let mut f = fixture(5, 10, 6, 8, 16);
        let orphan = Point3D::new(999_999, V3::new(1.0, 2.0, 3.0));
        f.points.push(orphan);
        let reducer = build_reducer(ReduceMethod::First, 16, 8, 0).unwrap();
        let cb = build_codebook(
            &f.points,
            &f.observations,
            &f.local_banks,
            &f.global_bank,
            &reducer,
            &CodebookConfig::default(),
        )
        .unwrap();
        assert_eq!(cb.len(), 10);
        assert_eq!(cb.excluded_points(), &[999_999]);
        assert!(!cb.point_ids().contains(&999_999));
    }

    #[test]
    fn dangling_references_are_named() {
        let f = fixture(2, 5, 4, 8, 16);
        let reducer = build_reducer(ReduceMethod::First, 16, 8, 0).unwrap();
        let cfg = CodebookConfig::default();

        let mut bad = f.observations.clone();
        bad[3].point_id = 424_242;
        let err = build_codebook(&f.points, &bad, &f.local_banks, &f.global_bank, &reducer, &cfg)
            .unwrap_err();
        assert!(matches!(err, Error::DanglingReference { index: 3, what: "point" }));

        let mut bad = f.observations.clone();
        bad[0].descriptor_row = 10_000;
        let err = build_codebook(&f.points, &bad, &f.local_banks, &f.global_bank, &reducer, &cfg)
            .unwrap_err();
        assert!(matches!(
            err,
            Error::DanglingReference { index: 0, what: "descriptor row" }
        ));
    }

    #[test]
    fn missing_global_is_reported() {
        let f = fixture(4, 5, 4, 8, 16);
        // a global bank with fewer rows than there are images
        let short = DescriptorBank::from_rows(
            16,
            DescriptorKind::Global,
            &[f.global_bank.row(0)],
        )
        .unwrap();
        let reducer = build_reducer(ReduceMethod::First, 16, 8, 0).unwrap();
        let err = build_codebook(
            &f.points,
            &f.observations,
            &f.local_banks,
            &short,
            &reducer,
            &CodebookConfig::default(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::MissingGlobal { .. }));
    }

    #[test]
    fn memory_report_arithmetic() {
        let entries: Vec<(u64, [f32; 3], Vec<f32>)> = (0..1000)
            .map(|i| (i as u64, [0.0, 0.0, 0.0], vec![0.5f32; 512]))
            .collect();
        let spec = ReducerSpec {
            method: ReduceMethod::First,
            in_dim: 8448,
            out_dim: 512,
            seed: 0,
        };
        let f16_cb = Codebook::from_entries(
            512,
            Dtype::F16,
            &entries,
            FusionConfig::default(),
            true,
            spec,
        )
        .unwrap();
        let report = codebook_memory_report(&f16_cb, None);
        assert_eq!(report.descriptor_bytes, 1_024_000);
        assert_eq!(report.coord_bytes, 12_000);
        assert_eq!(report.point_id_bytes, 8_000);
        assert_eq!(report.codebook_payload_bytes, 1_044_000);

        let f32_cb = Codebook::from_entries(
            512,
            Dtype::F32,
            &entries,
            FusionConfig::default(),
            true,
            spec,
        )
        .unwrap();
        let report32 = codebook_memory_report(&f32_cb, None);
        assert_eq!(report32.descriptor_bytes, 2_048_000);
        assert_eq!(report32.descriptor_bytes, 2 * report.descriptor_bytes);

        let heavy_rows: Vec<Vec<f32>> = (0..100).map(|_| vec![0.25f32; 8448]).collect();
        let heavy =
            DescriptorBank::from_rows(8448, DescriptorKind::Global, &heavy_rows).unwrap();
        let with_heavy = codebook_memory_report(&f16_cb, Some(&heavy));
        assert_eq!(with_heavy.heavy_global_bytes, 3_379_200);
        assert_eq!(
            with_heavy.total_bytes,
            report.codebook_payload_bytes + 3_379_200
        );
    }
}
