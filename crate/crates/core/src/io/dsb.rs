//! The `.dsb` descriptor-bank format.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic          4 bytes  "DSB1"
//! version        u32      1
//! dim            u32
//! count          u64      rows
//! dtype          u8       0 = f32, 1 = f16
//! kind           u8       0 = local, 1 = global
//! has_keypoints  u8       0 or 1
//! payload        count * dim components (4 or 2 bytes each)
//! keypoints      count * (f32 x, f32 y)   -- only if has_keypoints = 1
//! ```
//!
//! The payload is stored in the bank's authoritative precision, so a
//! write/read round trip reproduces the exact bits, f16 words included.
//! Keypoints ride along optionally because a local bank is one-row-per-
//! keypoint and the two arrays share their indexing.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use half::f16;

use crate::error::Result;
use crate::types::{DescriptorBank, DescriptorKind, Dtype};

use super::{binary_parse_error, ByteReader};

const MAGIC: [u8; 4] = *b"DSB1";
const VERSION: u32 = 1;

/// Fixed byte size of the `.dsb` header.
pub const DSB_HEADER_BYTES: usize = 4 + 4 + 4 + 8 + 1 + 1 + 1;

fn dtype_tag(d: Dtype) -> u8 {
    match d {
        Dtype::F32 => 0,
        Dtype::F16 => 1,
    }
}

fn kind_tag(k: DescriptorKind) -> u8 {
    match k {
        DescriptorKind::Local => 0,
        DescriptorKind::Global => 1,
    }
}

/// Write `bank` (and optionally its per-row keypoints) to `path`.
///
/// `keypoints`, when present, must have exactly one entry per bank row.
pub fn write_descriptor_bank(
    path: impl AsRef<Path>,
    bank: &DescriptorBank,
    keypoints: Option<&[[f32; 2]]>,
) -> Result<()> {
    if let Some(kps) = keypoints {
        assert_eq!(
            kps.len(),
            bank.rows(),
            "keypoint list must have one entry per bank row"
        );
    }
    let mut w = BufWriter::new(fs::File::create(path)?);
    w.write_all(&MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(bank.dim() as u32).to_le_bytes())?;
    w.write_all(&(bank.rows() as u64).to_le_bytes())?;
    w.write_all(&[dtype_tag(bank.dtype())])?;
    w.write_all(&[kind_tag(bank.kind())])?;
    w.write_all(&[keypoints.is_some() as u8])?;
    match bank.dtype() {
        Dtype::F32 => {
            for &v in bank.f32_slice().expect("f32 bank has an f32 payload") {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Dtype::F16 => {
            for &v in bank.f16_words().expect("f16 bank has an f16 payload") {
                w.write_all(&v.to_bits().to_le_bytes())?;
            }
        }
    }
    if let Some(kps) = keypoints {
        for kp in kps {
            w.write_all(&kp[0].to_le_bytes())?;
            w.write_all(&kp[1].to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Read a `.dsb` file back into a bank plus its optional keypoint list.
pub fn read_descriptor_bank(
    path: impl AsRef<Path>,
) -> Result<(DescriptorBank, Option<Vec<[f32; 2]>>)> {
    let buf = fs::read(path)?;
    let mut rd = ByteReader::new(&buf);
    rd.magic(MAGIC)?;
    rd.version(VERSION)?;
    let dim = rd.u32("dim")? as usize;
    if dim == 0 {
        return Err(binary_parse_error(rd.pos() - 4, "descriptor dim is zero"));
    }
    let count = rd.u64("count")? as usize;
    let dtype = match rd.u8("dtype")? {
        0 => Dtype::F32,
        1 => Dtype::F16,
        t => return Err(binary_parse_error(rd.pos() - 1, format!("unknown dtype tag {t}"))),
    };
    let kind = match rd.u8("kind")? {
        0 => DescriptorKind::Local,
        1 => DescriptorKind::Global,
        t => return Err(binary_parse_error(rd.pos() - 1, format!("unknown kind tag {t}"))),
    };
    let has_keypoints = match rd.u8("has_keypoints")? {
        0 => false,
        1 => true,
        t => {
            return Err(binary_parse_error(
                rd.pos() - 1,
                format!("has_keypoints must be 0 or 1, got {t}"),
            ))
        }
    };

    let components = count
        .checked_mul(dim)
        .ok_or_else(|| binary_parse_error(rd.pos(), "payload size overflows"))?;
    let bank = match dtype {
        Dtype::F32 => {
            let bytes = rd.take(components * 4, "descriptor payload")?;
            let data = bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            DescriptorBank::from_flat_f32(dim, kind, data)?
        }
        Dtype::F16 => {
            let bytes = rd.take(components * 2, "descriptor payload")?;
            let data = bytes
                .chunks_exact(2)
                .map(|c| f16::from_bits(u16::from_le_bytes(c.try_into().unwrap())))
                .collect();
            DescriptorBank::from_flat_f16(dim, kind, data)?
        }
    };

    let keypoints = if has_keypoints {
        let mut kps = Vec::with_capacity(count);
        for i in 0..count {
            let x = rd.f32("keypoint x")?;
            let y = rd.f32("keypoint y")?;
            if !x.is_finite() || !y.is_finite() {
                return Err(binary_parse_error(
                    rd.pos() - 8,
                    format!("keypoint {i} is not finite"),
                ));
            }
            kps.push([x, y]);
        }
        Some(kps)
    } else {
        None
    };

    rd.finish()?;
    Ok((bank, keypoints))
}
