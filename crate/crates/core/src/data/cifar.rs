//! CIFAR-10 binary batches: 3073-byte records, one label byte followed by
//! 1024 red, 1024 green and 1024 blue pixel bytes.

use std::fs;
use std::path::Path;

use super::Dataset;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const CIFAR_RECORD: usize = 1 + 3 * 32 * 32;
const CIFAR_BATCH_RECORDS: usize = 10_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CifarSplit {
    Train,
    Test,
}

/// Loads one batch file. Any whole number of records is accepted.
pub fn load_cifar10_batch(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let raw = fs::read(path).map_err(|e| Error::io(path, e))?;
    if raw.is_empty() || raw.len() % CIFAR_RECORD != 0 {
        return Err(Error::format(
            Some(path),
            format!("batch length ({} bytes is not a multiple of {CIFAR_RECORD})", raw.len()),
        ));
    }
    let n = raw.len() / CIFAR_RECORD;
    let mut labels = Vec::with_capacity(n);
    let mut data = Vec::with_capacity(n * (CIFAR_RECORD - 1));
    for (i, rec) in raw.chunks_exact(CIFAR_RECORD).enumerate() {
        if rec[0] > 9 {
            return Err(Error::format(Some(path), format!("label byte {} in record {i}", rec[0])));
        }
        labels.push(rec[0]);
        data.extend(rec[1..].iter().map(|&b| b as f32 / 255.0));
    }
    Dataset::new(Tensor::new(&[n, 3, 32, 32], data)?, labels, 10)
}

/// Loads `data_batch_1.bin`..`data_batch_5.bin` (train) or
/// `test_batch.bin` (test) from `dir`; every batch must hold 10000 records.
pub fn load_cifar10(dir: impl AsRef<Path>, split: CifarSplit) -> Result<Dataset> {
    let dir = dir.as_ref();
    let names: Vec<String> = match split {
        CifarSplit::Train => (1..=5).map(|i| format!("data_batch_{i}.bin")).collect(),
        CifarSplit::Test => vec!["test_batch.bin".to_string()],
    };
    let mut images = Vec::new();
    let mut labels = Vec::new();
    for name in names {
        let path = dir.join(&name);
        let batch = load_cifar10_batch(&path)?;
        if batch.len() != CIFAR_BATCH_RECORDS {
            return Err(Error::format(
                Some(&path),
                format!("record count ({}, expected {CIFAR_BATCH_RECORDS})", batch.len()),
            ));
        }
        images.extend(batch.images.into_data());
        labels.extend(batch.labels);
    }
    let n = labels.len();
    Dataset::new(Tensor::new(&[n, 3, 32, 32], images)?, labels, 10)
}

/// Writes records in the CIFAR-10 binary layout. `pixels` holds 3072 bytes
/// per record.
pub fn write_cifar10_batch(path: impl AsRef<Path>, labels: &[u8], pixels: &[u8]) -> Result<()> {
    assert_eq!(pixels.len(), labels.len() * (CIFAR_RECORD - 1));
    let mut buf = Vec::with_capacity(labels.len() * CIFAR_RECORD);
    for (l, px) in labels.iter().zip(pixels.chunks_exact(CIFAR_RECORD - 1)) {
        buf.push(*l);
        buf.extend_from_slice(px);
    }
    fs::write(path.as_ref(), buf).map_err(|e| Error::io(path.as_ref(), e))
}
