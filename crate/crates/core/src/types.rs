//! Domain types shared by every module: descriptor containers, scene
//! geometry, camera models and match records.
//!
//! Everything here is immutable after construction and safe to share across
//! threads. Descriptor payloads are `f32` or `f16` with the stored form
//! authoritative: an `f16` bank hands out exactly the widened value that is
//! on disk, never a cached higher-precision shadow.

use half::f16;
use nalgebra::{Matrix3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Storage precision of a descriptor payload.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    F32,
    F16,
}

impl Dtype {
    /// Bytes per stored component.
    pub fn size_bytes(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F16 => 2,
        }
    }
}

impl std::fmt::Display for Dtype {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Dtype::F32 => "f32",
            Dtype::F16 => "f16",
        })
    }
}

/// What a descriptor bank describes: one keypoint per row, or one image per
/// row.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DescriptorKind {
    Local,
    Global,
}

/// Row-major descriptor payload in its authoritative precision.
#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Payload {
    F32(Vec<f32>),
    F16(Vec<f16>),
}

impl Payload {
    pub(crate) fn len(&self) -> usize {
        match self {
            Payload::F32(v) => v.len(),
            Payload::F16(v) => v.len(),
        }
    }

    pub(crate) fn dtype(&self) -> Dtype {
        match self {
            Payload::F32(_) => Dtype::F32,
            Payload::F16(_) => Dtype::F16,
        }
    }

    pub(crate) fn get(&self, i: usize) -> f32 {
        match self {
            Payload::F32(v) => v[i],
            Payload::F16(v) => v[i].to_f32(),
        }
    }

    /// Widen `count` components starting at `offset` into `out`.
    pub(crate) fn widen_into(&self, offset: usize, out: &mut [f32]) {
        match self {
            Payload::F32(v) => out.copy_from_slice(&v[offset..offset + out.len()]),
            Payload::F16(v) => {
                let n = out.len();
                for (dst, src) in out.iter_mut().zip(&v[offset..offset + n]) {
                    *dst = src.to_f32();
                }
            }
        }
    }
}

/// A dense `rows x dim` matrix of descriptors.
///
/// Rows are validated on construction (length and finiteness); `f16` banks
/// store genuine half-precision words so every read widens the same bits.
#[derive(Debug, Clone, PartialEq)]
pub struct DescriptorBank {
    dim: usize,
    kind: DescriptorKind,
    rows: usize,
    pub(crate) data: Payload,
}

impl DescriptorBank {
    /// Build an `f32` bank from per-row slices, validating shape and
    /// finiteness.
    pub fn from_rows(dim: usize, kind: DescriptorKind, rows: &[Vec<f32>]) -> Result<Self> {
        let mut data = Vec::with_capacity(rows.len() * dim);
        for (row, r) in rows.iter().enumerate() {
            if r.len() != dim {
                return Err(Error::DimensionMismatch {
                    row,
                    got: r.len(),
                    expected: dim,
                });
            }
            data.extend_from_slice(r);
        }
        Self::from_flat_f32(dim, kind, data)
    }

    /// Build an `f32` bank from a row-major flat buffer.
    pub fn from_flat_f32(dim: usize, kind: DescriptorKind, data: Vec<f32>) -> Result<Self> {
        assert!(dim >= 1, "descriptor dim must be >= 1");
        assert_eq!(data.len() % dim, 0, "flat buffer length must be a multiple of dim");
        let bank = Self {
            dim,
            kind,
            rows: data.len() / dim,
            data: Payload::F32(data),
        };
        bank.validate()?;
        Ok(bank)
    }

    /// Build an `f16` bank from half-precision words (the authoritative
    /// storage; used by file readers).
    pub fn from_flat_f16(dim: usize, kind: DescriptorKind, data: Vec<f16>) -> Result<Self> {
        assert!(dim >= 1, "descriptor dim must be >= 1");
        assert_eq!(data.len() % dim, 0, "flat buffer length must be a multiple of dim");
        let bank = Self {
            dim,
            kind,
            rows: data.len() / dim,
            data: Payload::F16(data),
        };
        bank.validate()?;
        Ok(bank)
    }

    /// Build a bank with an explicit dtype from `f32` input rows.
    ///
    /// For `Dtype::F16` the input must already be exactly representable in
    /// half precision (`DtypeViolation` otherwise) — quantization is an
    /// explicit, separate step via [`DescriptorBank::cast`].
    pub fn from_rows_with_dtype(
        dim: usize,
        kind: DescriptorKind,
        dtype: Dtype,
        rows: &[Vec<f32>],
    ) -> Result<Self> {
        let bank = Self::from_rows(dim, kind, rows)?;
        match dtype {
            Dtype::F32 => Ok(bank),
            Dtype::F16 => {
                let Payload::F32(data) = &bank.data else { unreachable!() };
                let mut halves = Vec::with_capacity(data.len());
                for (i, &v) in data.iter().enumerate() {
                    let h = f16::from_f32(v);
                    if h.to_f32() != v {
                        return Err(Error::DtypeViolation { row: i / dim });
                    }
                    halves.push(h);
                }
                Self::from_flat_f16(dim, kind, halves)
            }
        }
    }

    /// Re-quantize to `dtype` (lossy when narrowing to f16).
    pub fn cast(&self, dtype: Dtype) -> Self {
        if dtype == self.dtype() {
            return self.clone();
        }
        let data = match (dtype, &self.data) {
            (Dtype::F16, Payload::F32(v)) => {
                Payload::F16(v.iter().map(|&x| f16::from_f32(x)).collect())
            }
            (Dtype::F32, Payload::F16(v)) => {
                Payload::F32(v.iter().map(|x| x.to_f32()).collect())
            }
            _ => unreachable!(),
        };
        Self {
            dim: self.dim,
            kind: self.kind,
            rows: self.rows,
            data,
        }
    }

    /// Check the container invariants: shape consistency and per-row
    /// finiteness. Construction already enforces these; `validate` re-checks
    /// data that arrived from disk.
    pub fn validate(&self) -> Result<()> {
        if self.data.len() != self.rows * self.dim {
            return Err(Error::DimensionMismatch {
                row: self.rows,
                got: self.data.len() % self.dim,
                expected: self.dim,
            });
        }
        for i in 0..self.data.len() {
            if !self.data.get(i).is_finite() {
                return Err(Error::NonFiniteValue { row: i / self.dim });
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn kind(&self) -> DescriptorKind {
        self.kind
    }

    pub fn dtype(&self) -> Dtype {
        self.data.dtype()
    }

    /// Widen row `r` into `out` (`out.len() == dim`).
    pub fn row_into(&self, r: usize, out: &mut [f32]) {
        assert_eq!(out.len(), self.dim);
        self.data.widen_into(r * self.dim, out);
    }

    /// Widened copy of row `r`.
    pub fn row(&self, r: usize) -> Vec<f32> {
        let mut out = vec![0.0; self.dim];
        self.row_into(r, &mut out);
        out
    }

    /// Single component, widened.
    pub fn get(&self, r: usize, c: usize) -> f32 {
        debug_assert!(r < self.rows && c < self.dim);
        self.data.get(r * self.dim + c)
    }

    /// The whole payload widened to a row-major `f32` buffer.
    pub fn to_f32_vec(&self) -> Vec<f32> {
        let mut out = vec![0.0; self.data.len()];
        self.data.widen_into(0, &mut out);
        out
    }

    /// Raw half words when stored as f16 (used by the file writer).
    pub(crate) fn f16_words(&self) -> Option<&[f16]> {
        match &self.data {
            Payload::F16(v) => Some(v),
            Payload::F32(_) => None,
        }
    }

    /// Raw f32 slice when stored as f32 (used by the file writer).
    pub(crate) fn f32_slice(&self) -> Option<&[f32]> {
        match &self.data {
            Payload::F32(v) => Some(v),
            Payload::F16(_) => None,
        }
    }
}

/// L2-normalize `v` in place; errors on a zero (or subnormal-norm) vector.
///
/// The squared norm is accumulated in f64 for stability, the division is
/// carried out in f32 so results match the stored precision.
pub fn normalize_in_place(v: &mut [f32]) -> Result<()> {
    let norm_sq: f64 = v.iter().map(|&x| (x as f64) * (x as f64)).sum();
    let norm = norm_sq.sqrt() as f32;
    if !norm.is_normal() {
        return Err(Error::ZeroVector);
    }
    for x in v.iter_mut() {
        *x /= norm;
    }
    Ok(())
}

/// One 3D map point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point3D {
    pub id: u64,
    pub coord: Vector3<f64>,
}

impl Point3D {
    pub fn new(id: u64, coord: Vector3<f64>) -> Self {
        Self { id, coord }
    }
}

/// One appearance of a map point in a database image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub point_id: u64,
    pub image_id: u32,
    /// Keypoint location in pixels.
    pub keypoint: [f32; 2],
    /// Row of this appearance in the image's local descriptor bank.
    pub descriptor_row: u32,
}

/// Pinhole camera intrinsics (zero distortion; inputs are assumed
/// pre-undistorted).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> Self {
        let k = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        debug_assert!(k.is_valid());
        k
    }

    pub fn is_valid(&self) -> bool {
        self.fx > 0.0
            && self.fy > 0.0
            && self.cx >= 0.0
            && self.cx < self.width as f64
            && self.cy >= 0.0
            && self.cy < self.height as f64
    }
}

/// A world-to-camera rigid transform: a world point `X` maps into the camera
/// frame as `R * X + t`.
///
/// The quaternion is kept in canonical form (`w >= 0`, and for `w == 0` the
/// first nonzero of `x, y, z` positive) so equal rotations compare equal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    rotation: UnitQuaternion<f64>,
    translation: Vector3<f64>,
}

impl Pose {
    pub fn new(rotation: UnitQuaternion<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation: canonicalize(rotation),
            translation,
        }
    }

    pub fn identity() -> Self {
        Self::new(UnitQuaternion::identity(), Vector3::zeros())
    }

    /// Build from a rotation matrix, checking orthonormality and the
    /// determinant to 1e-6 before trusting it.
    ///
    /// Conversion uses Shepperd's largest-pivot method: closed-form, so
    /// exact inputs (e.g. axis-aligned half turns) give exact quaternion
    /// components rather than iteration noise around zero.
    pub fn from_matrix(r: &Matrix3<f64>, t: Vector3<f64>) -> Result<Self> {
        let gram = r.transpose() * r;
        let ortho_err = (gram - Matrix3::identity()).abs().max();
        if ortho_err > 1e-6 || (r.determinant() - 1.0).abs() > 1e-6 {
            return Err(Error::NotARotation);
        }
        let m = r;
        let tr = m[(0, 0)] + m[(1, 1)] + m[(2, 2)];
        let (w, x, y, z) = if tr > 0.0 {
            let s = (tr + 1.0).sqrt() * 2.0;
            (
                0.25 * s,
                (m[(2, 1)] - m[(1, 2)]) / s,
                (m[(0, 2)] - m[(2, 0)]) / s,
                (m[(1, 0)] - m[(0, 1)]) / s,
            )
        } else if m[(0, 0)] > m[(1, 1)] && m[(0, 0)] > m[(2, 2)] {
            let s = (1.0 + m[(0, 0)] - m[(1, 1)] - m[(2, 2)]).sqrt() * 2.0;
            (
                (m[(2, 1)] - m[(1, 2)]) / s,
                0.25 * s,
                (m[(0, 1)] + m[(1, 0)]) / s,
                (m[(0, 2)] + m[(2, 0)]) / s,
            )
        } else if m[(1, 1)] > m[(2, 2)] {
            let s = (1.0 + m[(1, 1)] - m[(0, 0)] - m[(2, 2)]).sqrt() * 2.0;
            (
                (m[(0, 2)] - m[(2, 0)]) / s,
                (m[(0, 1)] + m[(1, 0)]) / s,
                0.25 * s,
                (m[(1, 2)] + m[(2, 1)]) / s,
            )
        } else {
            let s = (1.0 + m[(2, 2)] - m[(0, 0)] - m[(1, 1)]).sqrt() * 2.0;
            (
                (m[(1, 0)] - m[(0, 1)]) / s,
                (m[(0, 2)] + m[(2, 0)]) / s,
                (m[(1, 2)] + m[(2, 1)]) / s,
                0.25 * s,
            )
        };
        let q = UnitQuaternion::new_normalize(nalgebra::Quaternion::new(w, x, y, z));
        Ok(Self::new(q, t))
    }

    pub fn rotation(&self) -> UnitQuaternion<f64> {
        self.rotation
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        self.rotation.to_rotation_matrix().into_inner()
    }

    pub fn translation(&self) -> Vector3<f64> {
        self.translation
    }

    /// `R * X + t`.
    pub fn transform(&self, x: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * x + self.translation
    }

    /// Camera center in world coordinates, `C = -R^T t`.
    pub fn camera_center(&self) -> Vector3<f64> {
        -(self.rotation.inverse() * self.translation)
    }

    /// Quaternion components in `(w, x, y, z)` order.
    pub fn quaternion_wxyz(&self) -> [f64; 4] {
        let q = self.rotation.quaternion();
        [q.w, q.i, q.j, q.k]
    }
}

fn canonicalize(q: UnitQuaternion<f64>) -> UnitQuaternion<f64> {
    let c = q.quaternion();
    let flip = if c.w != 0.0 {
        c.w < 0.0
    } else if c.i != 0.0 {
        c.i < 0.0
    } else if c.j != 0.0 {
        c.j < 0.0
    } else {
        c.k < 0.0
    };
    if flip {
        UnitQuaternion::new_unchecked(-c)
    } else {
        q
    }
}

/// One query keypoint matched to one codebook point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Match {
    pub query_keypoint: [f32; 2],
    pub point_id: u64,
    pub point_coord: Vector3<f32>,
    /// Squared Euclidean descriptor distance reported by the search engine.
    pub distance_sq: f32,
}

/// The 2D-3D correspondences for one query image; at most one entry per
/// query keypoint.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MatchSet {
    pub matches: Vec<Match>,
}

impl MatchSet {
    pub fn len(&self) -> usize {
        self.matches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.matches.is_empty()
    }
}
