//! Basis expansions of the coefficient curves and design-matrix assembly.
//!
//! Coefficient `r` is written as `β_r(t) = Ξ_r(t)ᵀ α_r` where
//!
//! ```text
//! Ξ_r(t) = (1, t, …, t^g, ξ(t; κ_1), …, ξ(t; κ_k))
//! ```
//!
//! with `ξ(t; κ) = exp(-(|t - κ| / h)²)` for the radial family and
//! `ξ(t; κ) = (t - κ)_+^g` for the truncated power family. Stacking
//! `x_r(t) · Ξ_r(t)` over coefficients gives one row of the design matrix `Z`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::LongitudinalDataset;
use crate::error::{Result, TvcmError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BasisFamily {
    #[serde(rename = "radial")]
    RadialGaussian,
    #[serde(rename = "tpower")]
    TruncatedPower,
}

impl BasisFamily {
    pub fn as_str(&self) -> &'static str {
        match self {
            BasisFamily::RadialGaussian => "radial",
            BasisFamily::TruncatedPower => "tpower",
        }
    }
}

impl std::fmt::Display for BasisFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for BasisFamily {
    type Err = TvcmError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "radial" | "kernel" | "gaussian" => Ok(BasisFamily::RadialGaussian),
            "tpower" | "spline" | "truncated-power" => Ok(BasisFamily::TruncatedPower),
            other => Err(TvcmError::InvalidArgument(format!(
                "unknown basis family `{other}` (expected `radial` or `tpower`)"
            ))),
        }
    }
}

/// Expansion of one coefficient curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasisSpec {
    pub family: BasisFamily,
    pub degree: usize,
    pub knots: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bandwidth: Option<f64>,
}

impl BasisSpec {
    pub fn radial(degree: usize, knots: Vec<f64>, bandwidth: f64) -> Result<Self> {
        let spec = Self {
            family: BasisFamily::RadialGaussian,
            degree,
            knots,
            bandwidth: Some(bandwidth),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn truncated_power(degree: usize, knots: Vec<f64>) -> Result<Self> {
        let spec = Self {
            family: BasisFamily::TruncatedPower,
            degree,
            knots,
            bandwidth: None,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// `k` equally spaced interior knots on `domain`. Radial specs get the
    /// default bandwidth, the knot spacing `(b - a) / (k + 1)`.
    pub fn equally_spaced(
        family: BasisFamily,
        degree: usize,
        k: usize,
        domain: (f64, f64),
    ) -> Result<Self> {
        let knots = place_knots_equal(domain, k)?;
        match family {
            BasisFamily::RadialGaussian => {
                Self::radial(degree, knots, default_bandwidth(domain, k))
            }
            BasisFamily::TruncatedPower => Self::truncated_power(degree, knots),
        }
    }

    /// Number of basis functions `p_r = k + g + 1`.
    pub fn dim(&self) -> usize {
        self.knots.len() + self.degree + 1
    }

    pub fn n_knots(&self) -> usize {
        self.knots.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.knots.iter().any(|k| !k.is_finite()) {
            return Err(TvcmError::InvalidBasis("non-finite knot".into()));
        }
        if self.knots.windows(2).any(|w| w[0] >= w[1]) {
            return Err(TvcmError::InvalidBasis(
                "knots must be strictly increasing".into(),
            ));
        }
        match (self.family, self.bandwidth) {
            (BasisFamily::RadialGaussian, Some(h)) if h > 0.0 && h.is_finite() => Ok(()),
            (BasisFamily::RadialGaussian, _) => Err(TvcmError::InvalidBasis(
                "radial basis requires a positive bandwidth".into(),
            )),
            (BasisFamily::TruncatedPower, _) => Ok(()),
        }
    }

    /// Validate and additionally check that all knots lie in `domain`.
    pub fn validate_in(&self, domain: (f64, f64)) -> Result<()> {
        self.validate()?;
        if let Some(k) = self.knots.iter().find(|&&k| k < domain.0 || k > domain.1) {
            return Err(TvcmError::InvalidBasis(format!(
                "knot {k} lies outside the time domain [{}, {}]",
                domain.0, domain.1
            )));
        }
        Ok(())
    }

    /// Write `Ξ(t)` into `out` (length `dim()`).
    pub fn eval_into(&self, t: f64, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.dim());
        let g = self.degree;
        let mut power = 1.0;
        for slot in out.iter_mut().take(g + 1) {
            *slot = power;
            power *= t;
        }
        let kernel = &mut out[g + 1..];
        match self.family {
            BasisFamily::RadialGaussian => {
                let h = self.bandwidth.unwrap_or(1.0);
                for (slot, &kappa) in kernel.iter_mut().zip(&self.knots) {
                    let r = (t - kappa).abs() / h;
                    *slot = (-r * r).exp();
                }
            }
            BasisFamily::TruncatedPower => {
                for (slot, &kappa) in kernel.iter_mut().zip(&self.knots) {
                    let u = t - kappa;
                    *slot = if u > 0.0 { u.powi(g as i32) } else { 0.0 };
                }
            }
        }
    }
}

/// Knot spacing for `k` interior knots, used as the radial bandwidth.
pub fn default_bandwidth(domain: (f64, f64), k: usize) -> f64 {
    let width = domain.1 - domain.0;
    if width > 0.0 {
        width / (k + 1) as f64
    } else {
        1.0
    }
}

/// Interior knots `a + ℓ (b - a) / (k + 1)`, `ℓ = 1..k`.
pub fn place_knots_equal(domain: (f64, f64), k: usize) -> Result<Vec<f64>> {
    let (a, b) = domain;
    if k == 0 {
        return Ok(Vec::new());
    }
    if !(b > a) {
        return Err(TvcmError::InvalidBasis(format!(
            "cannot place {k} knots on the degenerate domain [{a}, {b}]"
        )));
    }
    let step = (b - a) / (k + 1) as f64;
    Ok((1..=k).map(|l| a + l as f64 * step).collect())
}

/// Knots at the empirical quantiles `ℓ / (k + 1)` of the design times.
pub fn place_knots_quantile(times: &[f64], k: usize) -> Result<Vec<f64>> {
    if k == 0 {
        return Ok(Vec::new());
    }
    if times.is_empty() {
        return Err(TvcmError::EmptyData);
    }
    let mut sorted = times.to_vec();
    sorted.sort_by(f64::total_cmp);
    let knots: Vec<f64> = (1..=k)
        .map(|l| sorted_quantile(&sorted, l as f64 / (k + 1) as f64))
        .collect();
    if knots.windows(2).any(|w| w[0] >= w[1]) {
        return Err(TvcmError::NonIncreasingKnots(format!(
            "quantile knots {knots:?} collapse on tied design times"
        )));
    }
    Ok(knots)
}

/// Quantile of sorted data by linear interpolation between order statistics:
/// position `h = (n - 1) q`, value `x[⌊h⌋] + (h - ⌊h⌋)(x[⌊h⌋+1] - x[⌊h⌋])`.
pub(crate) fn sorted_quantile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    if lo + 1 >= n {
        return sorted[n - 1];
    }
    let frac = h - lo as f64;
    sorted[lo] + frac * (sorted[lo + 1] - sorted[lo])
}

/// `Ξ(t)` for one spec.
pub fn eval_basis(spec: &BasisSpec, t: f64) -> Vec<f64> {
    let mut out = vec![0.0; spec.dim()];
    spec.eval_into(t, &mut out);
    out
}

/// Assembled linear model for a dataset under a set of basis specs.
#[derive(Debug, Clone)]
pub struct DesignBundle {
    pub z: DMatrix<f64>,
    pub weights: DVector<f64>,
    pub y: DVector<f64>,
    pub block_dims: Vec<usize>,
    pub specs: Vec<BasisSpec>,
}

impl DesignBundle {
    pub fn n_obs(&self) -> usize {
        self.z.nrows()
    }

    pub fn n_params(&self) -> usize {
        self.z.ncols()
    }

    /// Column offset of each coefficient's block.
    pub fn block_offsets(&self) -> Vec<usize> {
        block_offsets(&self.block_dims)
    }

    /// Split a full parameter vector into per-coefficient blocks.
    pub fn split_alpha<'a>(&self, alpha: &'a [f64]) -> Vec<&'a [f64]> {
        split_blocks(&self.block_dims, alpha)
    }

    /// Bundle restricted to the given rows, keeping the original weights.
    pub fn select_rows(&self, rows: &[usize]) -> DesignBundle {
        DesignBundle {
            z: self.z.select_rows(rows),
            weights: self.weights.select_rows(rows),
            y: self.y.select_rows(rows),
            block_dims: self.block_dims.clone(),
            specs: self.specs.clone(),
        }
    }
}

pub(crate) fn block_offsets(block_dims: &[usize]) -> Vec<usize> {
    block_dims
        .iter()
        .scan(0, |acc, &d| {
            let start = *acc;
            *acc += d;
            Some(start)
        })
        .collect()
}

pub(crate) fn split_blocks<'a>(block_dims: &[usize], alpha: &'a [f64]) -> Vec<&'a [f64]> {
    let mut rest = alpha;
    block_dims
        .iter()
        .map(|&d| {
            let (head, tail) = rest.split_at(d);
            rest = tail;
            head
        })
        .collect()
}

/// Fill `row` with `(x_0 Ξ_0(t), …, x_d Ξ_d(t))` where `x_0 = 1`.
pub(crate) fn design_row(specs: &[BasisSpec], covariates: &[f64], t: f64, row: &mut [f64]) {
    let mut offset = 0;
    for (r, spec) in specs.iter().enumerate() {
        let p = spec.dim();
        let block = &mut row[offset..offset + p];
        spec.eval_into(t, block);
        if r > 0 {
            let x = covariates[r - 1];
            block.iter_mut().for_each(|v| *v *= x);
        }
        offset += p;
    }
}

/// Build `Z`, `W` and `y` for `data` with one spec per coefficient `0..=d`.
pub fn build_design(
    data: &LongitudinalDataset,
    specs: &[BasisSpec],
    weights: &[f64],
) -> Result<DesignBundle> {
    let d = data.covariate_dim();
    if specs.len() != d + 1 {
        return Err(TvcmError::DimensionMismatch(format!(
            "{} basis specs for {} coefficients",
            specs.len(),
            d + 1
        )));
    }
    let n = data.n_obs();
    if weights.len() != n {
        return Err(TvcmError::DimensionMismatch(format!(
            "{} weights for {n} observations",
            weights.len()
        )));
    }
    for spec in specs {
        spec.validate()?;
    }
    let block_dims: Vec<usize> = specs.iter().map(BasisSpec::dim).collect();
    let p: usize = block_dims.iter().sum();

    // Fill row-major then transpose into nalgebra's column-major storage.
    let mut buf = vec![0.0; n * p];
    for (row, obs) in buf.chunks_exact_mut(p).zip(data.observations()) {
        design_row(specs, &obs.covariates, obs.time, row);
    }
    let z = DMatrix::from_row_slice(n, p, &buf);

    Ok(DesignBundle {
        z,
        weights: DVector::from_column_slice(weights),
        y: DVector::from_vec(data.responses()),
        block_dims,
        specs: specs.to_vec(),
    })
}

/// Evaluate `β_r(t) = Ξ_r(t)ᵀ α_r` on a grid.
pub fn coefficient_curve(spec: &BasisSpec, alpha_r: &[f64], grid: &[f64]) -> Result<Vec<f64>> {
    if alpha_r.len() != spec.dim() {
        return Err(TvcmError::DimensionMismatch(format!(
            "coefficient block has length {} but the basis has dimension {}",
            alpha_r.len(),
            spec.dim()
        )));
    }
    let mut xi = vec![0.0; spec.dim()];
    Ok(grid
        .iter()
        .map(|&t| {
            spec.eval_into(t, &mut xi);
            xi.iter().zip(alpha_r).map(|(a, b)| a * b).sum()
        })
        .collect())
}

/// `n` equally spaced points covering `[a, b]` inclusive.
pub fn uniform_grid(domain: (f64, f64), n: usize) -> Vec<f64> {
    let (a, b) = domain;
    match n {
        0 => Vec::new(),
        1 => vec![0.5 * (a + b)],
        _ => (0..n)
            .map(|i| a + (b - a) * i as f64 / (n - 1) as f64)
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Observation, SubjectRecord};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn equal_knots() {
        assert_eq!(
            place_knots_equal((0.0, 1.0), 3).unwrap(),
            vec![0.25, 0.5, 0.75]
        );
        assert!(place_knots_equal((0.0, 1.0), 0).unwrap().is_empty());
        assert_eq!(
            place_knots_equal((0.0, 120.0), 4).unwrap(),
            vec![24.0, 48.0, 72.0, 96.0]
        );
        assert!(place_knots_equal((1.0, 1.0), 2).is_err());
    }

    #[test]
    fn quantile_knots() {
        let grid: Vec<f64> = (0..=10).map(f64::from).collect();
        assert_eq!(place_knots_quantile(&grid, 1).unwrap(), vec![5.0]);

        let fine: Vec<f64> = (0..=100).map(|i| i as f64 / 100.0).collect();
        let knots = place_knots_quantile(&fine, 3).unwrap();
        for (a, b) in knots.iter().zip([0.25, 0.5, 0.75]) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-12);
        }

        assert!(matches!(
            place_knots_quantile(&[0.0, 0.0, 0.0, 1.0], 2),
            Err(TvcmError::NonIncreasingKnots(_))
        ));
    }

    #[test]
    fn radial_kernel_values() {
        let spec = BasisSpec::radial(2, vec![0.5], 0.3).unwrap();
        assert_eq!(eval_basis(&spec, 0.5), vec![1.0, 0.5, 0.25, 1.0]);

        let spec = BasisSpec::radial(0, vec![0.5], 0.25).unwrap();
        let v = eval_basis(&spec, 0.75);
        assert_eq!(v[0], 1.0);
        assert_abs_diff_eq!(v[1], (-1.0f64).exp(), epsilon = 1e-15);
        assert_abs_diff_eq!(v[1], 0.367879, epsilon = 1e-6);
    }

    #[test]
    fn truncated_power_values() {
        let spec = BasisSpec::truncated_power(2, vec![0.5]).unwrap();
        let above = eval_basis(&spec, 0.7);
        for (a, b) in above.iter().zip([1.0, 0.7, 0.49, 0.04]) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-12);
        }
        let below = eval_basis(&spec, 0.3);
        for (a, b) in below.iter().zip([1.0, 0.3, 0.09, 0.0]) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn spec_validation() {
        assert!(BasisSpec::radial(2, vec![0.5], 0.0).is_err());
        assert!(BasisSpec::truncated_power(2, vec![0.5, 0.5]).is_err());
        let spec = BasisSpec::truncated_power(1, vec![2.0]).unwrap();
        assert!(spec.validate_in((0.0, 1.0)).is_err());
        assert_eq!(spec.dim(), 3);
    }

    #[test]
    fn spec_json_shape() {
        let spec = BasisSpec::radial(2, vec![0.25, 0.75], 0.5).unwrap();
        let json = serde_json::to_string(&spec).unwrap();
        assert_eq!(
            json,
            r#"{"family":"radial","degree":2,"knots":[0.25,0.75],"bandwidth":0.5}"#
        );
        let tp: BasisSpec =
            serde_json::from_str(r#"{"family":"tpower","degree":1,"knots":[]}"#).unwrap();
        assert_eq!(tp.family, BasisFamily::TruncatedPower);
        assert_eq!(tp.dim(), 2);
    }

    fn obs(t: f64, y: f64, x: Vec<f64>) -> Observation {
        Observation {
            time: t,
            response: y,
            covariates: x,
        }
    }

    #[test]
    fn intercept_only_rows_are_basis_values() {
        let data = LongitudinalDataset::new(
            vec![SubjectRecord::new(
                "a",
                vec![obs(0.1, 1.0, vec![]), obs(0.6, 2.0, vec![])],
            )],
            0,
            None,
        )
        .unwrap();
        let spec = BasisSpec::radial(2, vec![0.3], 0.2).unwrap();
        let bundle = build_design(&data, std::slice::from_ref(&spec), &[0.5, 0.5]).unwrap();
        for (i, t) in [0.1, 0.6].into_iter().enumerate() {
            let expected = eval_basis(&spec, t);
            let row: Vec<f64> = bundle.z.row(i).iter().copied().collect();
            assert_eq!(row, expected);
        }
    }

    #[test]
    fn covariate_scales_its_block() {
        let data = LongitudinalDataset::new(
            vec![SubjectRecord::new("a", vec![obs(0.4, 1.0, vec![2.0])])],
            1,
            None,
        )
        .unwrap();
        let specs = vec![
            BasisSpec::truncated_power(1, vec![]).unwrap(),
            BasisSpec::truncated_power(0, vec![]).unwrap(),
        ];
        let bundle = build_design(&data, &specs, &[1.0]).unwrap();
        assert_eq!(bundle.block_dims, vec![2, 1]);
        assert_eq!(bundle.z[(0, 2)], 2.0);
    }

    #[test]
    fn design_dimensions() {
        let subjects = vec![
            SubjectRecord::new(
                "a",
                (0..3)
                    .map(|j| obs(j as f64 / 3.0, 0.0, vec![1.0]))
                    .collect(),
            ),
            SubjectRecord::new(
                "b",
                (0..2)
                    .map(|j| obs(j as f64 / 2.0, 0.0, vec![0.5]))
                    .collect(),
            ),
        ];
        let data = LongitudinalDataset::new(subjects, 1, None).unwrap();
        let specs = vec![
            BasisSpec::equally_spaced(BasisFamily::RadialGaussian, 2, 0, (0.0, 1.0)).unwrap(),
            BasisSpec::equally_spaced(BasisFamily::TruncatedPower, 2, 1, (0.0, 1.0)).unwrap(),
        ];
        let bundle = build_design(&data, &specs, &[0.2; 5]).unwrap();
        assert_eq!(bundle.z.shape(), (5, 7));
        assert_eq!(bundle.block_dims, vec![3, 4]);
        assert!(build_design(&data, &specs[..1], &[0.2; 5]).is_err());
        assert!(build_design(&data, &specs, &[0.2; 4]).is_err());
    }

    #[test]
    fn curve_examples() {
        let spec = BasisSpec::radial(2, vec![0.5], 0.25).unwrap();
        let grid = uniform_grid((0.0, 1.0), 11);
        let curve = coefficient_curve(&spec, &[3.0, 0.0, 0.0, 0.0], &grid).unwrap();
        assert!(curve.iter().all(|&v| v == 3.0));

        let line = BasisSpec::truncated_power(1, vec![]).unwrap();
        let curve = coefficient_curve(&line, &[0.0, 1.0], &grid).unwrap();
        assert_eq!(curve, grid);

        assert!(coefficient_curve(&line, &[1.0], &grid).is_err());
    }

    proptest! {
        #[test]
        fn truncated_power_smoothness(g in 1usize..4, kappa in 0.1f64..0.9, h in 1e-4f64..1e-3) {
            // value and first g-1 derivatives continuous across the knot
            let spec = BasisSpec::truncated_power(g, vec![kappa]).unwrap();
            let f = |t: f64| eval_basis(&spec, t)[g + 1];
            prop_assert!((f(kappa + h) - f(kappa - h)).abs() <= 1.1 * h.powi(g as i32));
            if g >= 2 {
                let d1 = |t: f64| (f(t + h * 1e-2) - f(t - h * 1e-2)) / (2.0 * h * 1e-2);
                prop_assert!((d1(kappa + h) - d1(kappa - h)).abs() <= 10.0 * g as f64 * h);
            }
        }

        #[test]
        fn radial_symmetry(kappa in -5.0f64..5.0, delta in 0.0f64..3.0, bw in 0.05f64..2.0) {
            let spec = BasisSpec::radial(1, vec![kappa], bw).unwrap();
            let a = eval_basis(&spec, kappa + delta)[2];
            let b = eval_basis(&spec, kappa - delta)[2];
            prop_assert!((a - b).abs() <= 1e-12);
        }

        #[test]
        fn column_count_matches_dims(
            ks in prop::collection::vec(0usize..6, 1..4),
            g in 0usize..4,
            radial in any::<bool>(),
        ) {
            let d = ks.len() - 1;
            let family = if radial { BasisFamily::RadialGaussian } else { BasisFamily::TruncatedPower };
            let specs: Vec<BasisSpec> = ks
                .iter()
                .map(|&k| BasisSpec::equally_spaced(family, g, k, (0.0, 1.0)).unwrap())
                .collect();
            let data = LongitudinalDataset::new(
                vec![SubjectRecord::new("a", vec![obs(0.3, 1.0, vec![1.5; d]), obs(0.8, 0.0, vec![-1.0; d])])],
                d,
                Some((0.0, 1.0)),
            ).unwrap();
            let bundle = build_design(&data, &specs, &[0.5, 0.5]).unwrap();
            let expected: usize = ks.iter().map(|k| k + g + 1).sum();
            prop_assert_eq!(bundle.z.ncols(), expected);
        }
    }
}
