//! File formats: binary descriptor banks (`.dsb`), binary codebooks
//! (`.lcb`), and the small text formats (poses, points, observations) plus
//! the intrinsics JSON sidecar.
//!
//! All binary formats are little-endian with a four-byte magic and a `u32`
//! version up front, and they round-trip bitwise: what the writer stores is
//! exactly what the reader hands back, down to the half-precision words of
//! an f16 payload. Text formats allow `#` comments (full-line or trailing)
//! and arbitrary whitespace between fields; writers emit a single canonical
//! form so files diff cleanly.
//!
//! Readers are strict. A short file fails with [`TruncatedFile`] carrying
//! the byte offset where the data ran out, unknown enum bytes and trailing
//! garbage fail with [`ParseError`], and every numeric payload is checked
//! finite before it is wrapped in a container.
//!
//! [`TruncatedFile`]: crate::error::Error::TruncatedFile
//! [`ParseError`]: crate::error::Error::ParseError

mod dsb;
mod lcb;
mod text;

pub use dsb::{read_descriptor_bank, write_descriptor_bank, DSB_HEADER_BYTES};
pub use lcb::{read_codebook, write_codebook, LCB_HEADER_BYTES};
pub use text::{
    format_pose_line, intrinsics_for, read_intrinsics, read_observations, read_points,
    read_poses, write_intrinsics, write_observations, write_points, write_poses,
};

use crate::error::{Error, Result};

/// Cursor over an in-memory file image that turns short reads into
/// [`Error::TruncatedFile`] with the offset where the file actually ends.
pub(crate) struct ByteReader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    pub(crate) fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    /// Current read position (byte offset from the start of the file).
    pub(crate) fn pos(&self) -> usize {
        self.pos
    }

    /// Take the next `n` bytes, or report where the file was cut off.
    pub(crate) fn take(&mut self, n: usize, context: &'static str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).ok_or(Error::TruncatedFile {
            offset: self.buf.len(),
            context,
        })?;
        if end > self.buf.len() {
            return Err(Error::TruncatedFile {
                offset: self.buf.len(),
                context,
            });
        }
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    pub(crate) fn u8(&mut self, context: &'static str) -> Result<u8> {
        Ok(self.take(1, context)?[0])
    }

    pub(crate) fn u32(&mut self, context: &'static str) -> Result<u32> {
        let b = self.take(4, context)?;
        Ok(u32::from_le_bytes(b.try_into().unwrap()))
    }

    pub(crate) fn u64(&mut self, context: &'static str) -> Result<u64> {
        let b = self.take(8, context)?;
        Ok(u64::from_le_bytes(b.try_into().unwrap()))
    }

    pub(crate) fn f32(&mut self, context: &'static str) -> Result<f32> {
        let b = self.take(4, context)?;
        Ok(f32::from_le_bytes(b.try_into().unwrap()))
    }

    /// Check the four-byte magic.
    pub(crate) fn magic(&mut self, expected: [u8; 4]) -> Result<()> {
        let found: [u8; 4] = self.take(4, "magic")?.try_into().unwrap();
        if found != expected {
            return Err(Error::BadMagic { found, expected });
        }
        Ok(())
    }

    /// Check the format version (only version 1 exists so far).
    pub(crate) fn version(&mut self, supported: u32) -> Result<()> {
        let found = self.u32("version")?;
        if found != supported {
            return Err(Error::UnsupportedVersion { found, supported });
        }
        Ok(())
    }

    /// Fail unless the whole file has been consumed.
    pub(crate) fn finish(&self) -> Result<()> {
        let left = self.buf.len() - self.pos;
        if left != 0 {
            return Err(Error::ParseError {
                line: 0,
                message: format!("{left} trailing bytes after payload (offset {})", self.pos),
            });
        }
        Ok(())
    }
}

/// Shorthand for a binary-format [`Error::ParseError`]; binary formats have
/// no lines, so the offset goes into the message and `line` is zero.
pub(crate) fn binary_parse_error(offset: usize, message: impl std::fmt::Display) -> Error {
    Error::ParseError {
        line: 0,
        message: format!("{message} (byte offset {offset})"),
    }
}
