//! CIFAR-10 binary batch loader.
//!
//! Record layout: 3073 bytes — 1 label byte (0-9) followed by 3072 pixel
//! bytes (red, green, blue planes of a 32x32 image, row-major). Pixels are
//! scaled to [0, 1].

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Matrix;

use super::{Dataset, SplitTag};

const RECORD_BYTES: usize = 3073;
const PIXELS: usize = 3072;
const CLASSES: usize = 10;

const TRAIN_FILES: [&str; 5] = [
    "data_batch_1.bin",
    "data_batch_2.bin",
    "data_batch_3.bin",
    "data_batch_4.bin",
    "data_batch_5.bin",
];
const TEST_FILE: &str = "test_batch.bin";

/// Loads the standard binary batches from `dir` (50000 train / 10000 test).
pub fn load_cifar10(dir: &Path) -> Result<(Dataset, Dataset)> {
    let mut train_features = Vec::new();
    let mut train_labels = Vec::new();
    for name in TRAIN_FILES {
        parse_batch_file(&dir.join(name), &mut train_features, &mut train_labels)?;
    }
    let mut test_features = Vec::new();
    let mut test_labels = Vec::new();
    parse_batch_file(&dir.join(TEST_FILE), &mut test_features, &mut test_labels)?;

    let train = Dataset::new(
        Matrix::new(train_labels.len(), PIXELS, train_features)?,
        train_labels,
        CLASSES,
        SplitTag::Train,
    )?;
    let test = Dataset::new(
        Matrix::new(test_labels.len(), PIXELS, test_features)?,
        test_labels,
        CLASSES,
        SplitTag::Test,
    )?;
    Ok((train, test))
}

fn parse_batch_file(path: &Path, features: &mut Vec<f64>, labels: &mut Vec<usize>) -> Result<()> {
    let bytes = fs::read(path)
        .map_err(|e| Error::data(format!("cannot read {}: {}", path.display(), e)))?;
    parse_records(&bytes, features, labels)
        .map_err(|e| Error::format(format!("{}: {}", path.display(), e)))
}

fn parse_records(
    bytes: &[u8],
    features: &mut Vec<f64>,
    labels: &mut Vec<usize>,
) -> std::result::Result<(), String> {
    if bytes.is_empty() || !bytes.len().is_multiple_of(RECORD_BYTES) {
        return Err(format!(
            "file size {} is not a positive multiple of the {}-byte record",
            bytes.len(),
            RECORD_BYTES
        ));
    }
    for (i, record) in bytes.chunks_exact(RECORD_BYTES).enumerate() {
        let label = record[0] as usize;
        if label >= CLASSES {
            return Err(format!("record {}: label byte {} exceeds 9", i, label));
        }
        labels.push(label);
        features.extend(record[1..].iter().map(|&b| f64::from(b) / 255.0));
    }
    Ok(())
}
