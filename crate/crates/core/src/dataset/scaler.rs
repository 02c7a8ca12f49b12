use super::table::IndicatorTable;
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Per-column min/max captured on the training rows only.
///
/// Scaling maps the training range onto [0,1]; out-of-range values seen at
/// validation or inference time are clamped into [0,1], and a constant
/// training column maps everything to 0.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ColumnScaler {
    mins: Vec<f64>,
    maxs: Vec<f64>,
}

impl ColumnScaler {
    pub fn fit(table: &IndicatorTable, train_indices: &[usize]) -> Result<ColumnScaler> {
        if train_indices.is_empty() {
            return Err(Error::EmptyFit);
        }
        let k = table.k();
        let mut mins = vec![f64::INFINITY; k];
        let mut maxs = vec![f64::NEG_INFINITY; k];
        for &i in train_indices {
            for (j, &v) in table.rows()[i].indicators.iter().enumerate() {
                mins[j] = mins[j].min(v);
                maxs[j] = maxs[j].max(v);
            }
        }
        Ok(ColumnScaler { mins, maxs })
    }

    pub fn from_bounds(mins: Vec<f64>, maxs: Vec<f64>) -> ColumnScaler {
        ColumnScaler { mins, maxs }
    }

    pub fn mins(&self) -> &[f64] {
        &self.mins
    }

    pub fn maxs(&self) -> &[f64] {
        &self.maxs
    }

    pub fn k(&self) -> usize {
        self.mins.len()
    }

    pub fn scale_value(&self, column: usize, value: f64) -> f64 {
        let (min, max) = (self.mins[column], self.maxs[column]);
        if max == min {
            return 0.0;
        }
        ((value - min) / (max - min)).clamp(0.0, 1.0)
    }

    pub fn scale_row(&self, indicators: &[f64]) -> Vec<f64> {
        indicators
            .iter()
            .enumerate()
            .map(|(j, &v)| self.scale_value(j, v))
            .collect()
    }

    /// Scale the selected table rows into a row-major matrix.
    pub fn scale_rows(&self, table: &IndicatorTable, indices: &[usize]) -> Vec<Vec<f64>> {
        indices
            .iter()
            .map(|&i| self.scale_row(&table.rows()[i].indicators))
            .collect()
    }
}
