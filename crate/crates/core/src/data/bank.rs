//! Bank Marketing CSV loader.
//!
//! Semicolon-delimited text with a mandatory header row; the final column must
//! be named `y` with values yes/no. Categorical columns are one-hot encoded in
//! first-appearance order; numeric columns are min-max scaled to [0, 1] using
//! train-split statistics. The 80/20 train/test split is a seeded shuffle.
//!
//! Column types are inferred from the first data row: a cell that parses as a
//! number makes its column numeric, and later unparseable cells in that column
//! are format errors.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Matrix;

use super::{Dataset, SplitTag};

const TRAIN_FRACTION: f64 = 0.8;

pub fn load_bank_marketing(path: &Path, seed: u64) -> Result<(Dataset, Dataset)> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::data(format!("cannot read {}: {}", path.display(), e)))?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::format("empty file: header row is mandatory"))?;
    let names: Vec<String> = split_row(header);
    if names.last().map(String::as_str) != Some("y") {
        return Err(Error::format(
            "final column must be named \"y\" with values yes/no",
        ));
    }
    let feature_columns = names.len() - 1;

    let mut rows: Vec<Vec<String>> = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let cells = split_row(line);
        if cells.len() != names.len() {
            return Err(Error::format(format!(
                "data row {}: {} cells, expected {}",
                i + 1,
                cells.len(),
                names.len()
            )));
        }
        rows.push(cells);
    }
    if rows.is_empty() {
        return Err(Error::format("no data rows"));
    }

    // Column types from the first data row.
    let numeric: Vec<bool> = (0..feature_columns)
        .map(|c| rows[0][c].parse::<f64>().is_ok())
        .collect();

    // Labels.
    let mut labels = Vec::with_capacity(rows.len());
    for (i, row) in rows.iter().enumerate() {
        match row[feature_columns].as_str() {
            "yes" => labels.push(1usize),
            "no" => labels.push(0usize),
            other => {
                return Err(Error::format(format!(
                    "data row {}: label {:?} is not yes/no",
                    i + 1,
                    other
                )))
            }
        }
    }

    // Category maps in first-appearance order over the whole file.
    let mut categories: Vec<Vec<String>> = vec![Vec::new(); feature_columns];
    for row in &rows {
        for (c, cats) in categories.iter_mut().enumerate() {
            if !numeric[c] && !cats.iter().any(|k| k == &row[c]) {
                cats.push(row[c].clone());
            }
        }
    }

    // Numeric parse of every cell up front so errors carry the row index.
    let mut numeric_values: Vec<Vec<f64>> = vec![Vec::new(); feature_columns];
    for (i, row) in rows.iter().enumerate() {
        for c in 0..feature_columns {
            if numeric[c] {
                let v: f64 = row[c].parse().map_err(|_| {
                    Error::format(format!(
                        "data row {}: cell {:?} in numeric column {:?} is not a number",
                        i + 1,
                        row[c],
                        names[c]
                    ))
                })?;
                numeric_values[c].push(v);
            }
        }
    }

    // Seeded 80/20 membership.
    let mut order: Vec<usize> = (0..rows.len()).collect();
    order.shuffle(&mut rng::stream(seed, rng::tags::DATA, 1, 0));
    let train_len = ((rows.len() as f64) * TRAIN_FRACTION).floor() as usize;
    let (train_rows, test_rows) = order.split_at(train_len);
    if train_rows.is_empty() || test_rows.is_empty() {
        return Err(Error::format("too few rows for an 80/20 split"));
    }

    // Min-max statistics over the train split only.
    let mut stats: Vec<(f64, f64)> = vec![(0.0, 0.0); feature_columns];
    for c in 0..feature_columns {
        if numeric[c] {
            let mut min = f64::INFINITY;
            let mut max = f64::NEG_INFINITY;
            for &r in train_rows {
                let v = numeric_values[c][r];
                min = min.min(v);
                max = max.max(v);
            }
            stats[c] = (min, max);
        }
    }

    let encoded_dim: usize = (0..feature_columns)
        .map(|c| if numeric[c] { 1 } else { categories[c].len() })
        .sum();

    let encode = |member_rows: &[usize], split: SplitTag| -> Result<Dataset> {
        let mut features = Matrix::zeros(member_rows.len(), encoded_dim);
        for (out_r, &r) in member_rows.iter().enumerate() {
            let out = features.row_mut(out_r);
            let mut offset = 0;
            for c in 0..feature_columns {
                if numeric[c] {
                    let (min, max) = stats[c];
                    let v = numeric_values[c][r];
                    out[offset] = if max > min {
                        ((v - min) / (max - min)).clamp(0.0, 1.0)
                    } else {
                        0.0
                    };
                    offset += 1;
                } else {
                    let k = categories[c]
                        .iter()
                        .position(|cat| cat == &rows[r][c])
                        .expect("category map covers every cell");
                    out[offset + k] = 1.0;
                    offset += categories[c].len();
                }
            }
        }
        Dataset::new(
            features,
            member_rows.iter().map(|&r| labels[r]).collect(),
            2,
            split,
        )
    };

    Ok((
        encode(train_rows, SplitTag::Train)?,
        encode(test_rows, SplitTag::Test)?,
    ))
}

/// Splits a semicolon row, stripping surrounding double quotes.
fn split_row(line: &str) -> Vec<String> {
    line.split(';')
        .map(|cell| {
            let cell = cell.trim();
            cell.strip_prefix('"')
                .and_then(|c| c.strip_suffix('"'))
                .unwrap_or(cell)
                .to_string()
        })
        .collect()
}
