//! Weighted least squares under `y | Z, W, α, σ² ~ N(Zα, σ² W⁻¹)`.
//!
//! The estimator `α̂ = (ZᵀWZ)⁻¹ZᵀWy` is computed from a Householder QR of
//! the row-scaled, column-equilibrated design `√W Z D⁻¹`; `ZᵀWZ` is never
//! inverted to solve for `α̂`. The equilibrated condition number of `ZᵀWZ`
//! (the squared condition number of `R`) gates singular designs.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::basis::{design_row, split_blocks, BasisSpec, DesignBundle};
use crate::error::{Result, TvcmError};

/// Largest accepted condition estimate of the equilibrated `ZᵀWZ`.
pub const MAX_CONDITION: f64 = 1e12;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WlsFit {
    pub alpha_hat: DVector<f64>,
    pub sigma2_hat: f64,
    pub fitted: DVector<f64>,
    pub residuals: DVector<f64>,
    /// `(ZᵀWZ)⁻¹`
    pub gram_inverse: DMatrix<f64>,
    /// `tr(Z (ZᵀWZ)⁻¹ ZᵀW)`
    pub hat_trace: f64,
    /// `(y - Zα̂)ᵀ W (y - Zα̂)`
    pub weighted_rss: f64,
    pub condition: f64,
    pub block_dims: Vec<usize>,
}

impl WlsFit {
    pub fn n_obs(&self) -> usize {
        self.fitted.len()
    }

    pub fn n_params(&self) -> usize {
        self.alpha_hat.len()
    }

    /// Per-coefficient blocks of `α̂`.
    pub fn alpha_blocks(&self) -> Vec<&[f64]> {
        split_blocks(&self.block_dims, self.alpha_hat.as_slice())
    }

    /// Prediction `x(t)ᵀ β̂(t)` from the fitted coefficients.
    pub fn predict(&self, specs: &[BasisSpec], covariates: &[f64], t: f64) -> Result<f64> {
        predict(self.alpha_hat.as_slice(), specs, covariates, t)
    }
}

/// Fit `α̂` and `σ̂² = (y - Zα̂)ᵀW(y - Zα̂) / (N - p)`.
pub fn fit_wls(bundle: &DesignBundle) -> Result<WlsFit> {
    let n = bundle.n_obs();
    let p = bundle.n_params();
    if n <= p {
        return Err(TvcmError::InsufficientData { n, p });
    }
    if bundle.weights.iter().any(|&w| !(w > 0.0 && w.is_finite())) {
        return Err(TvcmError::InvalidArgument(
            "weights must be positive and finite".into(),
        ));
    }

    let sqrt_w = bundle.weights.map(f64::sqrt);
    let mut zs = bundle.z.clone();
    for (mut row, &s) in zs.row_iter_mut().zip(sqrt_w.iter()) {
        row *= s;
    }
    let yw = bundle.y.component_mul(&sqrt_w);

    let scale: Vec<f64> = zs.column_iter().map(|c| c.norm()).collect();
    if scale.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
        return Err(TvcmError::SingularDesign {
            condition: f64::INFINITY,
        });
    }
    for (mut col, &s) in zs.column_iter_mut().zip(&scale) {
        col /= s;
    }

    let qr = zs.qr();
    let r = qr.r();
    let q = qr.q();

    let sv = r.singular_values();
    let (smin, smax) = sv.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &s| {
        (lo.min(s), hi.max(s))
    });
    let condition = if smin > 0.0 {
        (smax / smin).powi(2)
    } else {
        f64::INFINITY
    };
    if !(condition <= MAX_CONDITION) {
        return Err(TvcmError::SingularDesign { condition });
    }

    let qty = q.tr_mul(&yw);
    let x = r
        .solve_upper_triangular(&qty)
        .ok_or_else(|| TvcmError::Numerical("triangular solve failed".into()))?;
    let alpha_hat = DVector::from_iterator(p, x.iter().zip(&scale).map(|(v, s)| v / s));

    let r_inv = r
        .solve_upper_triangular(&DMatrix::identity(p, p))
        .ok_or_else(|| TvcmError::Numerical("triangular inverse failed".into()))?;
    let mut gram_inverse = &r_inv * r_inv.transpose();
    for i in 0..p {
        for j in 0..p {
            gram_inverse[(i, j)] /= scale[i] * scale[j];
        }
    }

    let fitted = &bundle.z * &alpha_hat;
    let residuals = &bundle.y - &fitted;
    let weighted_rss: f64 = residuals
        .iter()
        .zip(bundle.weights.iter())
        .map(|(e, w)| w * e * e)
        .sum();
    let sigma2_hat = weighted_rss / (n - p) as f64;

    let gz = &bundle.z * &gram_inverse;
    let hat_trace: f64 = (0..n)
        .map(|i| bundle.weights[i] * gz.row(i).dot(&bundle.z.row(i)))
        .sum();

    Ok(WlsFit {
        alpha_hat,
        sigma2_hat,
        fitted,
        residuals,
        gram_inverse,
        hat_trace,
        weighted_rss,
        condition,
        block_dims: bundle.block_dims.clone(),
    })
}

/// `ŷ(t) = Σ_r x_r(t) β̂_r(t)` for a full covariate vector `x` whose first
/// entry is the intercept.
pub fn predict(alpha: &[f64], specs: &[BasisSpec], covariates: &[f64], t: f64) -> Result<f64> {
    if covariates.len() != specs.len() {
        return Err(TvcmError::DimensionMismatch(format!(
            "{} covariate values (including the intercept) for {} coefficients",
            covariates.len(),
            specs.len()
        )));
    }
    let p: usize = specs.iter().map(BasisSpec::dim).sum();
    if alpha.len() != p {
        return Err(TvcmError::DimensionMismatch(format!(
            "parameter vector has length {}, expected {p}",
            alpha.len()
        )));
    }
    let mut row = vec![0.0; p];
    design_row(specs, &covariates[1..], t, &mut row);
    if covariates[0] != 1.0 {
        let p0 = specs[0].dim();
        row[..p0].iter_mut().for_each(|v| *v *= covariates[0]);
    }
    Ok(row.iter().zip(alpha).map(|(a, b)| a * b).sum())
}
