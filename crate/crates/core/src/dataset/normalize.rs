use serde::{Deserialize, Serialize};

use super::{AccountTable, Dataset, Split, RATIO_COLUMN};
use crate::error::{Error, Result};
use crate::tensor::Matrix;

const STD_FLOOR: f64 = 1e-6;

/// Number of leading metadata columns that get z-scored (counts and the
/// followers/friends ratio); the boolean flags pass through unchanged.
pub const NORMALIZED_COLUMNS: usize = RATIO_COLUMN + 1;

/// Train-split column statistics for z-scoring metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormStats {
    pub fn fit(ds: &Dataset) -> Result<Self> {
        if ds.accounts.is_normalized() {
            return Err(Error::contract("metadata is already normalized"));
        }
        let train = ds.indices(Split::Train);
        if train.is_empty() {
            return Err(Error::contract("cannot fit normalization on an empty train split"));
        }
        let feats = ds.accounts.features();
        let n = train.len() as f64;
        let mut mean = vec![0.0; NORMALIZED_COLUMNS];
        for &i in &train {
            for (m, v) in mean.iter_mut().zip(feats.row(i)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; NORMALIZED_COLUMNS];
        for &i in &train {
            for (c, v) in var.iter_mut().enumerate() {
                *v += (feats.get(i, c) - mean[c]).powi(2);
            }
        }
        let std = var.into_iter().map(|v| (v / n).sqrt().max(STD_FLOOR)).collect();
        Ok(Self { mean, std })
    }

    pub fn apply(&self, table: &AccountTable) -> Result<Matrix> {
        if table.is_normalized() {
            return Err(Error::contract("metadata is already normalized"));
        }
        let mut out = table.features().clone();
        for i in 0..out.rows() {
            let row = out.row_mut(i);
            for c in 0..NORMALIZED_COLUMNS {
                row[c] = (row[c] - self.mean[c]) / self.std[c];
            }
        }
        Ok(out)
    }
}

/// Z-scores count features with train-split statistics.
pub fn normalize_features(ds: &Dataset) -> Result<(Dataset, NormStats)> {
    let stats = NormStats::fit(ds)?;
    let mut out = ds.clone();
    out.accounts = AccountTable::normalized(stats.apply(&ds.accounts)?);
    Ok((out, stats))
}
