//! The `.lcb` codebook format.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic      4 bytes  "LCB1"
//! version    u32      1
//! dim        u32
//! count      u64      entries
//! dtype      u8       0 = f32, 1 = f16
//! lambda     f32      fusion weight
//! flags      u8       bit 0 = renormalize fusion inputs
//!                     bit 1 = renormalize reduced globals
//! reducer    method u8, in_dim u32, out_dim u32, seed u64
//! entries    count * (point_id u64, coord 3 x f32, descriptor dim x dtype)
//! ```
//!
//! The header pins everything needed to reproduce query-side fusion
//! byte-for-byte: the fusion weight, both renormalization switches and the
//! reducer's full identity. A file is `LCB_HEADER_BYTES` plus exactly the
//! codebook payload reported by
//! [`codebook_memory_report`](crate::codebook::codebook_memory_report),
//! which is what makes on-disk size auditable against the in-memory
//! accounting.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use half::f16;
use nalgebra::Vector3;

use crate::codebook::Codebook;
use crate::error::{Error, Result};
use crate::fuse::FusionConfig;
use crate::reduce::{ReduceMethod, ReducerSpec};
use crate::types::{Dtype, Payload};

use super::{binary_parse_error, ByteReader};

const MAGIC: [u8; 4] = *b"LCB1";
const VERSION: u32 = 1;

const FLAG_RENORM_INPUTS: u8 = 1 << 0;
const FLAG_RENORM_GLOBALS: u8 = 1 << 1;

/// Fixed byte size of the `.lcb` header; the rest of the file is the entry
/// payload.
pub const LCB_HEADER_BYTES: usize = 4 + 4 + 4 + 8 + 1 + 4 + 1 + (1 + 4 + 4 + 8);

/// Write `cb` to `path`.
pub fn write_codebook(path: impl AsRef<Path>, cb: &Codebook) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    w.write_all(&MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(cb.dim() as u32).to_le_bytes())?;
    w.write_all(&(cb.len() as u64).to_le_bytes())?;
    w.write_all(&[match cb.dtype() {
        Dtype::F32 => 0u8,
        Dtype::F16 => 1,
    }])?;
    let fusion = cb.fusion();
    w.write_all(&fusion.lambda.to_le_bytes())?;
    let mut flags = 0u8;
    if fusion.renormalize_inputs {
        flags |= FLAG_RENORM_INPUTS;
    }
    if cb.renormalize_globals() {
        flags |= FLAG_RENORM_GLOBALS;
    }
    w.write_all(&[flags])?;
    let spec = cb.reducer_spec();
    w.write_all(&[spec.method.tag()])?;
    w.write_all(&spec.in_dim.to_le_bytes())?;
    w.write_all(&spec.out_dim.to_le_bytes())?;
    w.write_all(&spec.seed.to_le_bytes())?;

    let dim = cb.dim();
    for i in 0..cb.len() {
        w.write_all(&cb.point_id(i).to_le_bytes())?;
        let c = cb.coord(i);
        w.write_all(&c.x.to_le_bytes())?;
        w.write_all(&c.y.to_le_bytes())?;
        w.write_all(&c.z.to_le_bytes())?;
        match cb.payload() {
            Payload::F32(v) => {
                for &x in &v[i * dim..(i + 1) * dim] {
                    w.write_all(&x.to_le_bytes())?;
                }
            }
            Payload::F16(v) => {
                for &x in &v[i * dim..(i + 1) * dim] {
                    w.write_all(&x.to_bits().to_le_bytes())?;
                }
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Read an `.lcb` file back into a codebook.
///
/// Besides shape, the reader enforces the invariants every valid codebook
/// carries: point ids strictly increasing, all values finite, the fusion
/// weight in range and the reducer's output dimension equal to the stored
/// descriptor dimension.
pub fn read_codebook(path: impl AsRef<Path>) -> Result<Codebook> {
    let buf = fs::read(path)?;
    let mut rd = ByteReader::new(&buf);
    rd.magic(MAGIC)?;
    rd.version(VERSION)?;
    let dim = rd.u32("dim")? as usize;
    if dim == 0 {
        return Err(binary_parse_error(rd.pos() - 4, "codebook dim is zero"));
    }
    let count = rd.u64("count")? as usize;
    let dtype = match rd.u8("dtype")? {
        0 => Dtype::F32,
        1 => Dtype::F16,
        t => return Err(binary_parse_error(rd.pos() - 1, format!("unknown dtype tag {t}"))),
    };
    let lambda = rd.f32("lambda")?;
    let flags = rd.u8("flags")?;
    if flags & !(FLAG_RENORM_INPUTS | FLAG_RENORM_GLOBALS) != 0 {
        return Err(binary_parse_error(
            rd.pos() - 1,
            format!("unknown flag bits 0x{flags:02x}"),
        ));
    }
    let mut fusion = FusionConfig::new(lambda)?;
    fusion.renormalize_inputs = flags & FLAG_RENORM_INPUTS != 0;
    let renormalize_globals = flags & FLAG_RENORM_GLOBALS != 0;
    let method_tag = rd.u8("reducer method")?;
    let method = ReduceMethod::from_tag(method_tag).ok_or_else(|| {
        binary_parse_error(rd.pos() - 1, format!("unknown reducer method tag {method_tag}"))
    })?;
    let in_dim = rd.u32("reducer in_dim")?;
    let out_dim = rd.u32("reducer out_dim")?;
    let seed = rd.u64("reducer seed")?;
    if out_dim < 1 || out_dim > in_dim {
        return Err(Error::InvalidDims {
            in_dim: in_dim as usize,
            out_dim: out_dim as usize,
        });
    }
    if out_dim as usize != dim {
        return Err(binary_parse_error(
            rd.pos(),
            format!("reducer out_dim {out_dim} does not match codebook dim {dim}"),
        ));
    }
    let spec = ReducerSpec {
        method,
        in_dim,
        out_dim,
        seed,
    };

    let mut point_ids = Vec::with_capacity(count);
    let mut coords = Vec::with_capacity(count);
    let components = count
        .checked_mul(dim)
        .ok_or_else(|| binary_parse_error(rd.pos(), "payload size overflows"))?;
    let mut f32_data = Vec::new();
    let mut f16_data = Vec::new();
    match dtype {
        Dtype::F32 => f32_data.reserve(components),
        Dtype::F16 => f16_data.reserve(components),
    }

    for i in 0..count {
        let id = rd.u64("entry point id")?;
        if let Some(&prev) = point_ids.last() {
            if id <= prev {
                return Err(binary_parse_error(
                    rd.pos() - 8,
                    format!("entry {i}: point id {id} not above previous id {prev}"),
                ));
            }
        }
        point_ids.push(id);
        let x = rd.f32("entry coord")?;
        let y = rd.f32("entry coord")?;
        let z = rd.f32("entry coord")?;
        if !(x.is_finite() && y.is_finite() && z.is_finite()) {
            return Err(binary_parse_error(
                rd.pos() - 12,
                format!("entry {i}: coordinate is not finite"),
            ));
        }
        coords.push(Vector3::new(x, y, z));
        match dtype {
            Dtype::F32 => {
                let bytes = rd.take(dim * 4, "entry descriptor")?;
                for c in bytes.chunks_exact(4) {
                    let v = f32::from_le_bytes(c.try_into().unwrap());
                    if !v.is_finite() {
                        return Err(binary_parse_error(
                            rd.pos(),
                            format!("entry {i}: descriptor is not finite"),
                        ));
                    }
                    f32_data.push(v);
                }
            }
            Dtype::F16 => {
                let bytes = rd.take(dim * 2, "entry descriptor")?;
                for c in bytes.chunks_exact(2) {
                    let v = f16::from_bits(u16::from_le_bytes(c.try_into().unwrap()));
                    if !v.is_finite() {
                        return Err(binary_parse_error(
                            rd.pos(),
                            format!("entry {i}: descriptor is not finite"),
                        ));
                    }
                    f16_data.push(v);
                }
            }
        }
    }
    rd.finish()?;

    let payload = match dtype {
        Dtype::F32 => Payload::F32(f32_data),
        Dtype::F16 => Payload::F16(f16_data),
    };
    Ok(Codebook::from_raw_parts(
        dim,
        point_ids,
        coords,
        payload,
        fusion,
        renormalize_globals,
        spec,
    ))
}
