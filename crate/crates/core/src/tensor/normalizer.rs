use serde::{Deserialize, Serialize};

use crate::error::{structure_err, Result};

/// Cumulative per-channel mean/std estimate over every row seen.
///
/// Standardization is the identity until at least two rows were observed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunningNormalizer {
    pub count: f64,
    pub sum: Vec<f64>,
    pub sum_sq: Vec<f64>,
    pub eps: f64,
}

impl RunningNormalizer {
    pub const DEFAULT_EPS: f64 = 1e-8;

    pub fn new(width: usize) -> Self {
        Self {
            count: 0.0,
            sum: vec![0.0; width],
            sum_sq: vec![0.0; width],
            eps: Self::DEFAULT_EPS,
        }
    }

    pub fn width(&self) -> usize {
        self.sum.len()
    }

    fn check(&self, rows: &[f64]) -> Result<()> {
        let w = self.width();
        if w == 0 || !rows.len().is_multiple_of(w) {
            return structure_err(format!(
                "normalizer of width {w} given {} values",
                rows.len()
            ));
        }
        Ok(())
    }

    /// Accumulates row-major `rows`.
    pub fn update(&mut self, rows: &[f64]) -> Result<()> {
        self.check(rows)?;
        let w = self.width();
        for row in rows.chunks_exact(w) {
            for (j, &x) in row.iter().enumerate() {
                self.sum[j] += x;
                self.sum_sq[j] += x * x;
            }
            self.count += 1.0;
        }
        Ok(())
    }

    pub fn active(&self) -> bool {
        self.count >= 2.0
    }

    pub fn mean(&self) -> Vec<f64> {
        if !self.active() {
            return vec![0.0; self.width()];
        }
        self.sum.iter().map(|s| s / self.count).collect()
    }

    /// Population standard deviation, floored at `eps`.
    pub fn std(&self) -> Vec<f64> {
        if !self.active() {
            return vec![1.0; self.width()];
        }
        self.sum
            .iter()
            .zip(&self.sum_sq)
            .map(|(s, sq)| {
                let mean = s / self.count;
                let var = (sq / self.count - mean * mean).max(0.0);
                var.sqrt().max(self.eps)
            })
            .collect()
    }

    pub fn apply(&self, rows: &[f64]) -> Result<Vec<f64>> {
        self.check(rows)?;
        if !self.active() {
            return Ok(rows.to_vec());
        }
        let (mean, std) = (self.mean(), self.std());
        let w = self.width();
        Ok(rows
            .iter()
            .enumerate()
            .map(|(i, &x)| (x - mean[i % w]) / std[i % w])
            .collect())
    }

    pub fn invert(&self, rows: &[f64]) -> Result<Vec<f64>> {
        self.check(rows)?;
        if !self.active() {
            return Ok(rows.to_vec());
        }
        let (mean, std) = (self.mean(), self.std());
        let w = self.width();
        Ok(rows
            .iter()
            .enumerate()
            .map(|(i, &x)| x * std[i % w] + mean[i % w])
            .collect())
    }
}
