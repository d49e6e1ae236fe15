//! Low-level helpers for the versioned binary file containers.
//!
//! Both on-disk formats of this crate (datasets and model checkpoints) share
//! the same skeleton: an 8-byte magic string, a little-endian `u32` format
//! version, an embedded UTF-8 text block (the TOML echo of the producing
//! config), then format-specific records. All integers are little-endian;
//! all real values are IEEE-754 binary64 little-endian.

use std::fmt;
use std::io::{self, Read, Write};

/// Errors shared by the container readers.
#[derive(Debug)]
pub enum ContainerError {
    Io(io::Error),
    /// The file starts with a different magic string (for example, a dataset
    /// file passed where a checkpoint was expected).
    MagicMismatch { expected: [u8; 8], found: [u8; 8] },
    /// The file's format version differs from the one this build writes.
    VersionMismatch { expected: u32, found: u32 },
    /// Structurally invalid content: truncation, trailing bytes, or fields
    /// that contradict each other.
    Corrupt(String),
}

impl fmt::Display for ContainerError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ContainerError::Io(e) => write!(f, "i/o error: {e}"),
            ContainerError::MagicMismatch { expected, found } => write!(
                f,
                "magic string mismatch: expected {:?}, found {:?}",
                String::from_utf8_lossy(expected),
                String::from_utf8_lossy(found)
            ),
            ContainerError::VersionMismatch { expected, found } => {
                write!(f, "format version {found} is not the supported version {expected}")
            }
            ContainerError::Corrupt(msg) => write!(f, "corrupt file: {msg}"),
        }
    }
}

impl std::error::Error for ContainerError {}

impl From<io::Error> for ContainerError {
    fn from(e: io::Error) -> Self {
        ContainerError::Io(e)
    }
}

pub fn write_magic(w: &mut impl Write, magic: &[u8; 8]) -> io::Result<()> {
    w.write_all(magic)
}

pub fn expect_magic(r: &mut impl Read, expected: &[u8; 8]) -> Result<(), ContainerError> {
    let mut found = [0u8; 8];
    r.read_exact(&mut found).map_err(|_| ContainerError::Corrupt("missing magic".into()))?;
    if &found != expected {
        return Err(ContainerError::MagicMismatch { expected: *expected, found });
    }
    Ok(())
}

pub fn expect_version(r: &mut impl Read, expected: u32) -> Result<(), ContainerError> {
    let found = read_u32(r)?;
    if found != expected {
        return Err(ContainerError::VersionMismatch { expected, found });
    }
    Ok(())
}

pub fn write_u16(w: &mut impl Write, v: u16) -> io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

pub fn write_u32(w: &mut impl Write, v: u32) -> io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

pub fn write_u64(w: &mut impl Write, v: u64) -> io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

pub fn read_u16(r: &mut impl Read) -> Result<u16, ContainerError> {
    let mut b = [0u8; 2];
    r.read_exact(&mut b).map_err(truncated)?;
    Ok(u16::from_le_bytes(b))
}

pub fn read_u32(r: &mut impl Read) -> Result<u32, ContainerError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(truncated)?;
    Ok(u32::from_le_bytes(b))
}

pub fn read_u64(r: &mut impl Read) -> Result<u64, ContainerError> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).map_err(truncated)?;
    Ok(u64::from_le_bytes(b))
}

/// Length-prefixed (u32) UTF-8 string.
pub fn write_text(w: &mut impl Write, s: &str) -> io::Result<()> {
    write_u32(w, s.len() as u32)?;
    w.write_all(s.as_bytes())
}

pub fn read_text(r: &mut impl Read, limit: u32) -> Result<String, ContainerError> {
    let len = read_u32(r)?;
    if len > limit {
        return Err(ContainerError::Corrupt(format!(
            "text block of {len} bytes exceeds limit {limit}"
        )));
    }
    let mut buf = vec![0u8; len as usize];
    r.read_exact(&mut buf).map_err(truncated)?;
    String::from_utf8(buf)
        .map_err(|_| ContainerError::Corrupt("text block is not UTF-8".into()))
}

/// Raw binary64 little-endian values, no length prefix.
pub fn write_f64_slice(w: &mut impl Write, values: &[f64]) -> io::Result<()> {
    let mut buf = Vec::with_capacity(values.len() * 8);
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)
}

pub fn read_f64_vec(r: &mut impl Read, count: usize) -> Result<Vec<f64>, ContainerError> {
    let mut buf = vec![0u8; count * 8];
    r.read_exact(&mut buf).map_err(truncated)?;
    Ok(buf
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect())
}

/// Verifies the reader has been fully consumed; a leftover tail means the
/// header undercounted the records.
pub fn expect_eof(r: &mut impl Read) -> Result<(), ContainerError> {
    let mut probe = [0u8; 1];
    match r.read(&mut probe)? {
        0 => Ok(()),
        _ => Err(ContainerError::Corrupt("trailing bytes after final record".into())),
    }
}

fn truncated(_: io::Error) -> ContainerError {
    ContainerError::Corrupt("unexpected end of file".into())
}
