//! IDX image and label files (the MNIST / Fashion-MNIST container).
//!
//! Big-endian. Images: magic `0x00000803`, then count, rows, cols as `u32`,
//! then `count * rows * cols` unsigned bytes. Labels: magic `0x00000801`,
//! count, then `count` bytes.

use std::path::Path;

use super::Dataset;
use crate::error::{Error, Result};

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Clone, PartialEq)]
pub struct IdxImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    /// Pixels scaled by 1/255, one image per `rows * cols` run.
    pub pixels: Vec<f64>,
}

fn read_u32(bytes: &[u8], offset: usize, path: &Path) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Truncated {
            path: path.to_path_buf(),
            expected: offset + 4,
            actual: bytes.len(),
        })
}

fn check_magic(bytes: &[u8], expected: u32, path: &Path) -> Result<()> {
    let found = read_u32(bytes, 0, path)?;
    if found != expected {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
            expected,
            found,
        });
    }
    Ok(())
}

fn check_length(bytes: &[u8], expected: usize, path: &Path) -> Result<()> {
    match bytes.len() {
        n if n < expected => Err(Error::Truncated {
            path: path.to_path_buf(),
            expected,
            actual: n,
        }),
        n if n > expected => Err(Error::TrailingBytes {
            path: path.to_path_buf(),
            extra: n - expected,
        }),
        _ => Ok(()),
    }
}

/// Parse an image file already in memory. `path` only labels errors.
pub fn parse_idx_images(bytes: &[u8], path: &Path) -> Result<IdxImages> {
    check_magic(bytes, IMAGE_MAGIC, path)?;
    let count = read_u32(bytes, 4, path)? as usize;
    let rows = read_u32(bytes, 8, path)? as usize;
    let cols = read_u32(bytes, 12, path)? as usize;
    let payload = count
        .checked_mul(rows)
        .and_then(|v| v.checked_mul(cols))
        .ok_or_else(|| Error::Truncated {
            path: path.to_path_buf(),
            expected: usize::MAX,
            actual: bytes.len(),
        })?;
    check_length(bytes, 16 + payload, path)?;
    let pixels = bytes[16..].iter().map(|&b| f64::from(b) / 255.0).collect();
    Ok(IdxImages {
        count,
        rows,
        cols,
        pixels,
    })
}

pub fn parse_idx_labels(bytes: &[u8], path: &Path) -> Result<Vec<usize>> {
    check_magic(bytes, LABEL_MAGIC, path)?;
    let count = read_u32(bytes, 4, path)? as usize;
    check_length(bytes, 8 + count, path)?;
    Ok(bytes[8..].iter().map(|&b| usize::from(b)).collect())
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn read_idx_images(path: impl AsRef<Path>) -> Result<IdxImages> {
    let path = path.as_ref();
    parse_idx_images(&read_file(path)?, path)
}

pub fn read_idx_labels(path: impl AsRef<Path>) -> Result<Vec<usize>> {
    let path = path.as_ref();
    parse_idx_labels(&read_file(path)?, path)
}

/// Images plus labels as one dataset. The class count is the largest label
/// plus one (at least 2).
pub fn read_idx(images: impl AsRef<Path>, labels: impl AsRef<Path>) -> Result<Dataset> {
    let images = read_idx_images(images)?;
    let labels = read_idx_labels(labels)?;
    if images.count != labels.len() {
        return Err(Error::CountMismatch {
            images: images.count,
            labels: labels.len(),
        });
    }
    let num_classes = labels.iter().copied().max().map_or(2, |m| (m + 1).max(2));
    Dataset::new(images.pixels, labels, (images.rows * images.cols).max(1), num_classes)
}
