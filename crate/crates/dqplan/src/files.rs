//! Shared helpers for the binary parameter and dataset file formats.
//!
//! Both formats follow the same envelope: magic bytes, a format version,
//! payload, and a trailing SHA-256 checksum over everything before it.

use std::fs;
use std::io;
use std::path::Path;

use sha2::{Digest, Sha256};
use thiserror::Error;

pub const CHECKSUM_LEN: usize = 32;

#[derive(Debug, Error)]
pub enum FileError {
    #[error("io failure: {0}")]
    Io(#[from] io::Error),
    #[error("malformed file: {0}")]
    Format(String),
    #[error("file header does not match the expected network spec")]
    SpecMismatch,
    #[error("checksum mismatch: file is corrupted")]
    ChecksumMismatch,
}

pub fn format_err(msg: impl Into<String>) -> FileError {
    FileError::Format(msg.into())
}

/// Appends the SHA-256 of `buf` to it and writes the result to `path`.
pub fn write_with_checksum(path: &Path, mut buf: Vec<u8>) -> Result<(), FileError> {
    let digest = Sha256::digest(&buf);
    buf.extend_from_slice(&digest);
    fs::write(path, buf)?;
    Ok(())
}

/// Reads `path`, verifies the trailing SHA-256, and returns the payload.
pub fn read_with_checksum(path: &Path) -> Result<Vec<u8>, FileError> {
    let mut buf = fs::read(path)?;
    if buf.len() < CHECKSUM_LEN {
        return Err(format_err("file too short to hold a checksum"));
    }
    let body_len = buf.len() - CHECKSUM_LEN;
    let digest = Sha256::digest(&buf[..body_len]);
    if digest.as_slice() != &buf[body_len..] {
        return Err(FileError::ChecksumMismatch);
    }
    buf.truncate(body_len);
    Ok(buf)
}

/// Sequential reader over a payload buffer.
pub struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }

    pub fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub fn is_done(&self) -> bool {
        self.pos == self.buf.len()
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8], FileError> {
        if self.remaining() < n {
            return Err(format_err("unexpected end of file"));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u8(&mut self) -> Result<u8, FileError> {
        Ok(self.take(1)?[0])
    }

    pub fn u16(&mut self) -> Result<u16, FileError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    pub fn u32(&mut self) -> Result<u32, FileError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> Result<u64, FileError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn f32(&mut self) -> Result<f32, FileError> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn f64(&mut self) -> Result<f64, FileError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn put_u16(buf: &mut Vec<u8>, v: u16) {
    buf.extend_from_slice(&v.to_le_bytes());
}

pub fn put_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

pub fn put_u64(buf: &mut Vec<u8>, v: u64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

pub fn put_f32(buf: &mut Vec<u8>, v: f32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

pub fn put_f64(buf: &mut Vec<u8>, v: f64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

/// SplitMix64 step, used to derive independent seed streams.
pub fn mix_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
