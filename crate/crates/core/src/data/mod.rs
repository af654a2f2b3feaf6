//! Datasets and vertical feature partitioning.
//!
//! A [`Dataset`] owns the full feature matrix; a [`VerticalPartition`] says
//! which contiguous column range each client holds. Loaders are pure: the
//! same file (or seed) always produces the identical dataset.

mod bank;
mod cifar;
mod synthetic;

pub use bank::load_bank_marketing;
pub use cifar::load_cifar10;
pub use synthetic::generate_synthetic;

use std::path::PathBuf;

use crate::error::{Error, Result};
use crate::tensor::Matrix;

/// Environment variable naming the dataset root directory.
pub const DATA_DIR_ENV: &str = "PROTOGUARD_DATA_DIR";

/// `$PROTOGUARD_DATA_DIR/cifar-10-batches-bin`, if it exists.
pub fn cifar_dir_from_env() -> Option<PathBuf> {
    let root = std::env::var_os(DATA_DIR_ENV)?;
    let dir = PathBuf::from(root).join("cifar-10-batches-bin");
    dir.is_dir().then_some(dir)
}

/// `$PROTOGUARD_DATA_DIR/bank-full.csv`, if it exists.
pub fn bank_file_from_env() -> Option<PathBuf> {
    let root = std::env::var_os(DATA_DIR_ENV)?;
    let file = PathBuf::from(root).join("bank-full.csv");
    file.is_file().then_some(file)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitTag {
    Train,
    Test,
}

/// Labeled samples with a fixed class count.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub features: Matrix,
    pub labels: Vec<usize>,
    pub class_count: usize,
    pub split: SplitTag,
}

impl Dataset {
    pub fn new(
        features: Matrix,
        labels: Vec<usize>,
        class_count: usize,
        split: SplitTag,
    ) -> Result<Self> {
        if labels.len() != features.rows() {
            return Err(Error::config(format!(
                "{} labels for {} feature rows",
                labels.len(),
                features.rows()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= class_count) {
            return Err(Error::config(format!(
                "label {} out of range for {} classes",
                bad, class_count
            )));
        }
        Ok(Self {
            features,
            labels,
            class_count,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    /// Splits off the first `train_per_class` samples of every class (in row
    /// order) as the train set; the rest become the test set.
    pub fn split_per_class(self, train_per_class: usize) -> Result<(Dataset, Dataset)> {
        let mut seen = vec![0usize; self.class_count];
        let mut train_rows = Vec::new();
        let mut test_rows = Vec::new();
        for (row, &label) in self.labels.iter().enumerate() {
            if seen[label] < train_per_class {
                train_rows.push(row);
                seen[label] += 1;
            } else {
                test_rows.push(row);
            }
        }
        if test_rows.is_empty() {
            return Err(Error::config("per-class split leaves an empty test set"));
        }
        let train = Dataset::new(
            self.features.select_rows(&train_rows),
            train_rows.iter().map(|&r| self.labels[r]).collect(),
            self.class_count,
            SplitTag::Train,
        )?;
        let test = Dataset::new(
            self.features.select_rows(&test_rows),
            test_rows.iter().map(|&r| self.labels[r]).collect(),
            self.class_count,
            SplitTag::Test,
        )?;
        Ok((train, test))
    }
}

/// Per-client contiguous column ranges covering the full feature dimension.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VerticalPartition {
    ranges: Vec<(usize, usize)>,
    feature_dim: usize,
}

impl VerticalPartition {
    /// Validates explicit ranges: one per client in client order, disjoint,
    /// covering all columns.
    pub fn from_ranges(ranges: Vec<(usize, usize)>, feature_dim: usize) -> Result<Self> {
        if ranges.is_empty() {
            return Err(Error::config("a partition needs at least one client"));
        }
        let mut expected_start = 0;
        for &(start, end) in &ranges {
            if start != expected_start || end <= start {
                return Err(Error::config(format!(
                    "ranges must be contiguous, non-empty, and in client order; got {}..{} where {} was expected to start",
                    start, end, expected_start
                )));
            }
            expected_start = end;
        }
        if expected_start != feature_dim {
            return Err(Error::config(format!(
                "ranges cover {} of {} columns",
                expected_start, feature_dim
            )));
        }
        Ok(Self {
            ranges,
            feature_dim,
        })
    }

    pub fn client_count(&self) -> usize {
        self.ranges.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn range(&self, client: usize) -> (usize, usize) {
        self.ranges[client]
    }

    pub fn width(&self, client: usize) -> usize {
        let (start, end) = self.ranges[client];
        end - start
    }

    pub fn widths(&self) -> Vec<usize> {
        self.ranges.iter().map(|&(s, e)| e - s).collect()
    }

    /// Copy of one client's feature slice.
    pub fn slice(&self, features: &Matrix, client: usize) -> Matrix {
        let (start, end) = self.ranges[client];
        features.slice_cols(start, end)
    }
}

/// Divides `feature_dim` columns into `client_count` contiguous ranges as
/// equal as possible; remainder columns go to the lowest-index clients.
pub fn vertical_split(feature_dim: usize, client_count: usize) -> Result<VerticalPartition> {
    if client_count < 2 {
        return Err(Error::config("vertical split needs at least 2 clients"));
    }
    if client_count > feature_dim {
        return Err(Error::config(format!(
            "{} clients cannot share {} feature columns",
            client_count, feature_dim
        )));
    }
    let base = feature_dim / client_count;
    let remainder = feature_dim % client_count;
    let mut ranges = Vec::with_capacity(client_count);
    let mut start = 0;
    for i in 0..client_count {
        let width = base + usize::from(i < remainder);
        ranges.push((start, start + width));
        start += width;
    }
    VerticalPartition::from_ranges(ranges, feature_dim)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn even_division() {
        let p = vertical_split(12, 4).unwrap();
        assert_eq!(p.widths(), vec![3, 3, 3, 3]);
    }

    #[test]
    fn remainder_goes_to_lowest_index_clients() {
        let p = vertical_split(10, 4).unwrap();
        assert_eq!(p.widths(), vec![3, 3, 2, 2]);
    }

    #[test]
    fn too_many_clients_is_a_configuration_error() {
        assert!(vertical_split(3, 4).is_err());
    }

    #[test]
    fn union_of_slices_reassembles_the_matrix() {
        let features = Matrix::from_fn(5, 10, |r, c| (r * 10 + c) as f64);
        let p = vertical_split(10, 3).unwrap();
        let parts: Vec<Matrix> = (0..3).map(|i| p.slice(&features, i)).collect();
        let refs: Vec<&Matrix> = parts.iter().collect();
        let glued = Matrix::hconcat(&refs).unwrap();
        assert_eq!(glued.data(), features.data());
    }

    #[test]
    fn explicit_ranges_must_cover_and_be_ordered() {
        assert!(VerticalPartition::from_ranges(vec![(0, 4), (4, 10)], 10).is_ok());
        assert!(VerticalPartition::from_ranges(vec![(0, 4), (5, 10)], 10).is_err());
        assert!(VerticalPartition::from_ranges(vec![(0, 4), (4, 9)], 10).is_err());
        assert!(VerticalPartition::from_ranges(vec![(4, 10), (0, 4)], 10).is_err());
    }

    #[test]
    fn dataset_rejects_out_of_range_labels() {
        let features = Matrix::zeros(3, 2);
        assert!(Dataset::new(features.clone(), vec![0, 1, 3], 3, SplitTag::Train).is_err());
        assert!(Dataset::new(features.clone(), vec![0, 1], 3, SplitTag::Train).is_err());
        assert!(Dataset::new(features, vec![0, 1, 2], 3, SplitTag::Train).is_ok());
    }

    #[test]
    fn per_class_split_takes_the_first_n_of_each_class() {
        let features = Matrix::from_fn(6, 1, |r, _| r as f64);
        let labels = vec![0, 0, 0, 1, 1, 1];
        let ds = Dataset::new(features, labels, 2, SplitTag::Train).unwrap();
        let (train, test) = ds.split_per_class(2).unwrap();
        assert_eq!(train.labels, vec![0, 0, 1, 1]);
        assert_eq!(test.labels, vec![0, 1]);
        assert_eq!(train.features.data(), &[0.0, 1.0, 3.0, 4.0]);
        assert_eq!(test.features.data(), &[2.0, 5.0]);
        assert_eq!(train.split, SplitTag::Train);
        assert_eq!(test.split, SplitTag::Test);
    }
}
