//! Joint draws of `(α, σ²)` shared by the bootstrap, Gibbs and variational
//! engines, plus curve summaries and serialization.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::basis::{block_offsets, coefficient_curve, BasisSpec};
use crate::bootstrap::percentile_interval;
use crate::error::{Result, TvcmError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DrawSource {
    Bootstrap,
    Gibbs,
    Variational,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorDraws {
    /// One draw per row (`B × p`).
    pub alpha: DMatrix<f64>,
    pub sigma2: Vec<f64>,
    pub source: DrawSource,
    pub seed: u64,
    pub chain: usize,
}

impl PosteriorDraws {
    pub fn new(
        alpha: DMatrix<f64>,
        sigma2: Vec<f64>,
        source: DrawSource,
        seed: u64,
    ) -> Result<Self> {
        if alpha.nrows() == 0 || alpha.nrows() != sigma2.len() {
            return Err(TvcmError::DimensionMismatch(format!(
                "{} alpha draws and {} sigma draws",
                alpha.nrows(),
                sigma2.len()
            )));
        }
        Ok(Self {
            alpha,
            sigma2,
            source,
            seed,
            chain: 0,
        })
    }

    pub fn n_draws(&self) -> usize {
        self.alpha.nrows()
    }

    pub fn n_params(&self) -> usize {
        self.alpha.ncols()
    }

    /// Componentwise mean of `α`, accumulated relative to the first draw so
    /// that identical draws average to exactly that draw.
    pub fn alpha_mean(&self) -> DVector<f64> {
        let first = self.alpha.row(0).transpose();
        let mut acc = DVector::zeros(self.n_params());
        for row in self.alpha.row_iter() {
            acc += row.transpose() - &first;
        }
        first + acc / self.n_draws() as f64
    }

    pub fn sigma2_mean(&self) -> f64 {
        shifted_mean(&self.sigma2)
    }

    /// `B × |grid|` matrix of `β_r(t)` for every draw, `r` = `coefficient`.
    pub fn curve_draws(
        &self,
        specs: &[BasisSpec],
        coefficient: usize,
        grid: &[f64],
    ) -> Result<DMatrix<f64>> {
        let dims: Vec<usize> = specs.iter().map(BasisSpec::dim).collect();
        if dims.iter().sum::<usize>() != self.n_params() {
            return Err(TvcmError::DimensionMismatch(
                "basis specs do not match the draw dimension".into(),
            ));
        }
        let spec = specs.get(coefficient).ok_or_else(|| {
            TvcmError::InvalidArgument(format!("no coefficient with index {coefficient}"))
        })?;
        let start = block_offsets(&dims)[coefficient];
        let mut out = DMatrix::zeros(self.n_draws(), grid.len());
        for (b, row) in self.alpha.row_iter().enumerate() {
            let block: Vec<f64> = row.iter().skip(start).take(spec.dim()).copied().collect();
            let curve = coefficient_curve(spec, &block, grid)?;
            out.row_mut(b).copy_from_slice(&curve);
        }
        Ok(out)
    }

    /// Pointwise mean and percentile band of `β_r(t)` over the draws.
    pub fn curve_band(
        &self,
        specs: &[BasisSpec],
        coefficient: usize,
        grid: &[f64],
        level: f64,
    ) -> Result<CurveBand> {
        let draws = self.curve_draws(specs, coefficient, grid)?;
        let mut mean = Vec::with_capacity(grid.len());
        let mut lower = Vec::with_capacity(grid.len());
        let mut upper = Vec::with_capacity(grid.len());
        for col in draws.column_iter() {
            let values: Vec<f64> = col.iter().copied().collect();
            let (lo, hi) = percentile_interval(&values, level)?;
            mean.push(shifted_mean(&values));
            lower.push(lo);
            upper.push(hi);
        }
        Ok(CurveBand {
            coefficient,
            level,
            grid: grid.to_vec(),
            mean,
            lower,
            upper,
        })
    }

    /// Flat long-format CSV: `draw,param_index,value`. Indices `0..p` are the
    /// components of `α`; index `p` is `σ²`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(["draw", "param_index", "value"])?;
        let p = self.n_params();
        for (b, row) in self.alpha.row_iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                wtr.write_record(&[b.to_string(), j.to_string(), format!("{v:?}")])?;
            }
            wtr.write_record(&[
                b.to_string(),
                p.to_string(),
                format!("{:?}", self.sigma2[b]),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn summary(&self, specs: &[BasisSpec], grid: &[f64], level: f64) -> Result<DrawSummary> {
        let curves = (0..specs.len())
            .map(|r| self.curve_band(specs, r, grid, level))
            .collect::<Result<Vec<_>>>()?;
        Ok(DrawSummary {
            source: self.source,
            seed: self.seed,
            n_draws: self.n_draws(),
            alpha_mean: self.alpha_mean().iter().copied().collect(),
            sigma2_mean: self.sigma2_mean(),
            curves,
        })
    }
}

pub(crate) fn shifted_mean(values: &[f64]) -> f64 {
    let first = values[0];
    first + values.iter().map(|v| v - first).sum::<f64>() / values.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveBand {
    pub coefficient: usize,
    pub level: f64,
    pub grid: Vec<f64>,
    pub mean: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

/// JSON summary of a set of draws.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrawSummary {
    pub source: DrawSource,
    pub seed: u64,
    pub n_draws: usize,
    pub alpha_mean: Vec<f64>,
    pub sigma2_mean: f64,
    pub curves: Vec<CurveBand>,
}
