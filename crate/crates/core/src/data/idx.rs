//! MNIST IDX files: big-endian headers, `0x00000803` for images and
//! `0x00000801` for labels.

use std::fs;
use std::path::Path;

use super::Dataset;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

fn be_u32(bytes: &[u8], at: usize, path: &Path, field: &str) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes(b.try_into().unwrap()))
        .ok_or_else(|| Error::format(Some(path), format!("{field} (file too short for header)")))
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// Loads an image/label IDX pair, scaling pixels to `[0, 1]`.
pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Dataset> {
    let (ip, lp) = (images_path.as_ref(), labels_path.as_ref());
    let img = read(ip)?;
    let lab = read(lp)?;

    if be_u32(&img, 0, ip, "image magic")? != IDX_IMAGES_MAGIC {
        return Err(Error::format(Some(ip), "image magic number"));
    }
    let n = be_u32(&img, 4, ip, "image count")? as usize;
    let rows = be_u32(&img, 8, ip, "row count")? as usize;
    let cols = be_u32(&img, 12, ip, "column count")? as usize;
    let pixels = n * rows * cols;
    if img.len() != 16 + pixels {
        return Err(Error::format(
            Some(ip),
            format!("image payload ({} bytes, header promises {pixels})", img.len().saturating_sub(16)),
        ));
    }

    if be_u32(&lab, 0, lp, "label magic")? != IDX_LABELS_MAGIC {
        return Err(Error::format(Some(lp), "label magic number"));
    }
    let nl = be_u32(&lab, 4, lp, "label count")? as usize;
    if lab.len() != 8 + nl {
        return Err(Error::format(
            Some(lp),
            format!("label payload ({} bytes, header promises {nl})", lab.len().saturating_sub(8)),
        ));
    }
    if nl != n {
        return Err(Error::format(Some(lp), format!("label count ({nl} labels for {n} images)")));
    }
    let labels = lab[8..].to_vec();
    if let Some(&bad) = labels.iter().find(|&&l| l > 9) {
        return Err(Error::format(Some(lp), format!("label value {bad}")));
    }

    let data = img[16..].iter().map(|&b| b as f32 / 255.0).collect();
    Dataset::new(Tensor::new(&[n, 1, rows, cols], data)?, labels, 10)
}

/// Writes raw 8-bit images as an IDX image file.
pub fn write_idx_images(path: impl AsRef<Path>, pixels: &[u8], n: usize, rows: usize, cols: usize) -> Result<()> {
    assert_eq!(pixels.len(), n * rows * cols);
    let mut buf = Vec::with_capacity(16 + pixels.len());
    for v in [IDX_IMAGES_MAGIC, n as u32, rows as u32, cols as u32] {
        buf.extend_from_slice(&v.to_be_bytes());
    }
    buf.extend_from_slice(pixels);
    fs::write(path.as_ref(), buf).map_err(|e| Error::io(path.as_ref(), e))
}

pub fn write_idx_labels(path: impl AsRef<Path>, labels: &[u8]) -> Result<()> {
    let mut buf = Vec::with_capacity(8 + labels.len());
    buf.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    buf.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    buf.extend_from_slice(labels);
    fs::write(path.as_ref(), buf).map_err(|e| Error::io(path.as_ref(), e))
}
