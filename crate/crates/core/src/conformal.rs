//! Point prediction and split-conformal prediction sets.
//!
//! Prediction for a site with neighbour row w* combines the mean map with the
//! lag-weighted neighbour deviations. The conformal wrapper splits the data,
//! fits on one half, scores the held-out half by residual norm, and returns
//! geodesic balls (in map space) whose radius is the appropriate order
//! statistic of those scores. All scores and set membership queries reduce to
//! quadratic forms in one Gram matrix; no residual map is materialized.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use crate::error::{Error, Result};
use crate::gmm::{fit_sar_points, gram_matrix, FitOptions, SarFit};
use crate::sphere::{rodrigues_exp, transport_between, TransportMap, UnitVector};
use crate::weights::SpatialWeights;

const ROW_SUM_TOL: f64 = 1e-9;

/// Checks a prediction weight row: in-range indices, no duplicates,
/// nonnegative weights, total weight 1 (or 0 for an isolated site).
/// Returns the row sum.
fn validate_row(row: &[(usize, f64)], n: usize) -> Result<f64> {
    let mut seen: Vec<usize> = Vec::with_capacity(row.len());
    let mut sum = 0.0;
    for &(j, v) in row {
        if j >= n {
            return Err(Error::InvalidArgument(format!(
                "neighbour index {j} out of range for {n} sites"
            )));
        }
        if seen.contains(&j) {
            return Err(Error::InvalidArgument(format!(
                "neighbour index {j} listed twice"
            )));
        }
        seen.push(j);
        if !(v.is_finite() && v >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "weight for neighbour {j} must be finite and nonnegative, got {v}"
            )));
        }
        sum += v;
    }
    if sum.abs() > ROW_SUM_TOL && (sum - 1.0).abs() > ROW_SUM_TOL {
        return Err(Error::InvalidArgument(format!(
            "prediction row sums to {sum}, expected 1 (or 0 for an island)"
        )));
    }
    Ok(sum)
}

/// The pieces of a fitted lag model that prediction needs. Detachable from
/// [`SarFit`] so a serialized model can predict without refitting.
pub struct LagPredictor {
    rho: f64,
    base: Option<UnitVector>,
    mean_map: TransportMap,
    maps: Vec<TransportMap>,
}

impl LagPredictor {
    pub fn from_fit(fit: &SarFit) -> Self {
        Self {
            rho: fit.estimate(),
            base: fit.base_mean().cloned(),
            mean_map: fit.mean_map().clone(),
            maps: fit.maps().to_vec(),
        }
    }

    /// Assembles a predictor from stored parts. `base` is required only for
    /// point prediction.
    pub fn from_parts(
        rho: f64,
        base: Option<UnitVector>,
        mean_map: TransportMap,
        maps: Vec<TransportMap>,
    ) -> Result<Self> {
        if maps.is_empty() {
            return Err(Error::EmptyInput);
        }
        if !rho.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "lag parameter must be finite, got {rho}"
            )));
        }
        Ok(Self {
            rho,
            base,
            mean_map,
            maps,
        })
    }

    pub fn n(&self) -> usize {
        self.maps.len()
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn base(&self) -> Option<&UnitVector> {
        self.base.as_ref()
    }

    /// Predicted transport map for a new site: mean map plus the lag-scaled,
    /// weighted neighbour deviations from the mean.
    pub fn predict_map(&self, row: &[(usize, f64)]) -> Result<TransportMap> {
        let row_sum = validate_row(row, self.n())?;
        let base_coeff = 1.0 - self.rho * row_sum;
        let mut acc = self.mean_map.scaled(base_coeff);
        for &(j, v) in row {
            if v != 0.0 {
                acc = acc.plus(&self.maps[j].scaled(self.rho * v))?;
            }
        }
        Ok(acc)
    }

    /// Predicted sphere point: the predicted map applied to the base mean
    /// through the rotation exponential.
    pub fn predict_point(&self, row: &[(usize, f64)]) -> Result<UnitVector> {
        let base = self.base.as_ref().ok_or_else(|| {
            Error::InvalidArgument(
                "predictor carries no base point; point prediction needs one".into(),
            )
        })?;
        let map = self.predict_map(row)?;
        rodrigues_exp(&map, base)
    }
}

/// Predicted transport map for a new site; see [`LagPredictor::predict_map`].
pub fn predict_map(fit: &SarFit, row: &[(usize, f64)]) -> Result<TransportMap> {
    LagPredictor::from_fit(fit).predict_map(row)
}

/// Predicted sphere point for a new site. Requires a fit built from points.
pub fn predict_point(fit: &SarFit, row: &[(usize, f64)]) -> Result<UnitVector> {
    if fit.base_mean().is_none() {
        return Err(Error::InvalidArgument(
            "fit carries no base point; predict_point needs a fit built from observations".into(),
        ));
    }
    LagPredictor::from_fit(fit).predict_point(row)
}

/// Split-conformal configuration. `adjusted_quantile` selects the
/// finite-sample-valid order statistic ceil((1-alpha)(n_cal+1)); turning it
/// off uses the plain ceil((1-alpha) n_cal) empirical quantile.
#[derive(Debug, Clone)]
pub struct ConformalOptions {
    pub alpha: f64,
    pub seed: u64,
    pub adjusted_quantile: bool,
    pub fit_options: FitOptions,
}

impl Default for ConformalOptions {
    fn default() -> Self {
        Self {
            alpha: 0.05,
            seed: 0,
            adjusted_quantile: true,
            fit_options: FitOptions::default(),
        }
    }
}

/// Calibrated split-conformal state: the train-half fit plus the sorted
/// held-out scores it induces.
pub struct SplitConformal {
    alpha: f64,
    adjusted_quantile: bool,
    radius: f64,
    rho: f64,
    base: UnitVector,
    maps: Vec<TransportMap>,
    gram: DMatrix<f64>,
    train: Vec<usize>,
    calibration: Vec<usize>,
    train_coeff: Vec<f64>,
    scores: Vec<f64>,
}

/// One prediction set: a ball in map space around the predicted map,
/// reported through its pullback to the sphere.
pub struct ConformalSet {
    pub alpha: f64,
    pub radius: f64,
    base: UnitVector,
    maps: Vec<TransportMap>,
    coeffs: Vec<f64>,
    center_sq: f64,
}

impl SplitConformal {
    /// Splits the sites (seeded shuffle, first ceil(n/2) train), fits the lag
    /// model on the train half with the restricted re-normalized weight
    /// matrix, and scores every calibration site by the norm of its residual
    /// under the train fit, using its full weight row.
    pub fn calibrate(
        points: &[UnitVector],
        weights: &SpatialWeights,
        opts: &ConformalOptions,
    ) -> Result<Self> {
        let n = points.len();
        if n < 3 {
            return Err(Error::InvalidArgument(format!(
                "split conformal needs at least 3 sites, got {n}"
            )));
        }
        if weights.n() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: weights.n(),
            });
        }
        if !(opts.alpha > 0.0 && opts.alpha < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "alpha must lie in (0, 1), got {}",
                opts.alpha
            )));
        }
        let mut order: Vec<usize> = (0..n).collect();
        let mut rng = ChaCha12Rng::seed_from_u64(opts.seed);
        order.shuffle(&mut rng);
        let n_train = n.div_ceil(2);
        let mut train = order[..n_train].to_vec();
        let mut calibration = order[n_train..].to_vec();
        train.sort_unstable();
        calibration.sort_unstable();

        let train_points: Vec<UnitVector> = train.iter().map(|&i| points[i].clone()).collect();
        let w_train = weights.restrict(&train)?;
        let fit = fit_sar_points(&train_points, &w_train, opts.fit_options.clone())?;
        let rho = fit.estimate();
        let base = fit
            .base_mean()
            .expect("point fit carries its base mean")
            .clone();

        // Every observation re-expressed as a map from the train mean.
        let maps: Vec<TransportMap> = points
            .iter()
            .map(|y| transport_between(&base, y))
            .collect::<Result<Vec<_>>>()?;
        let gram = gram_matrix(&maps)?;

        let mut train_coeff = vec![0.0; n];
        for &j in &train {
            train_coeff[j] = 1.0 / n_train as f64;
        }

        let mut scores: Vec<f64> = calibration
            .iter()
            .map(|&i| {
                let coeffs = residual_coefficients(i, rho, weights, &train_coeff, n);
                quadratic_form(&gram, &coeffs).max(0.0).sqrt()
            })
            .collect();
        scores.sort_by(|a, b| a.partial_cmp(b).expect("finite scores"));

        let mut out = Self {
            alpha: opts.alpha,
            adjusted_quantile: opts.adjusted_quantile,
            radius: 0.0,
            rho,
            base,
            maps,
            gram,
            train,
            calibration,
            train_coeff,
            scores,
        };
        out.radius = out.radius_for(opts.alpha);
        Ok(out)
    }

    /// Score quantile used as the set radius at the given level. Infinite
    /// when the adjusted order statistic exceeds the calibration count.
    pub fn radius_for(&self, alpha: f64) -> f64 {
        let n_cal = self.scores.len();
        let k = if self.adjusted_quantile {
            ((1.0 - alpha) * (n_cal + 1) as f64).ceil() as usize
        } else {
            ((1.0 - alpha) * n_cal as f64).ceil() as usize
        };
        if k > n_cal {
            f64::INFINITY
        } else {
            self.scores[k.max(1) - 1]
        }
    }

    /// Builds the prediction set for a new site whose raw neighbour weights
    /// (over the original sites) are given. Only weights pointing into the
    /// train half act, without re-normalization: mass leaking toward
    /// calibration sites stays with the mean map, mirroring how the train
    /// fit saw the world.
    pub fn set_for_row(&self, row: &[(usize, f64)]) -> Result<ConformalSet> {
        self.set_for_row_at(row, self.alpha)
    }

    /// Same as [`set_for_row`](Self::set_for_row) with an explicit level,
    /// reusing the calibration scores.
    pub fn set_for_row_at(&self, row: &[(usize, f64)], alpha: f64) -> Result<ConformalSet> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "alpha must lie in (0, 1), got {alpha}"
            )));
        }
        let n = self.maps.len();
        validate_row(row, n)?;
        let mut coeffs = self.train_coeff.clone();
        let mut train_mass = 0.0;
        for &(j, v) in row {
            if self.train_coeff[j] > 0.0 {
                coeffs[j] += self.rho * v;
                train_mass += v;
            }
        }
        for (c, t) in coeffs.iter_mut().zip(&self.train_coeff) {
            *c -= self.rho * train_mass * t;
        }
        let center_sq = quadratic_form(&self.gram, &coeffs).max(0.0);
        Ok(ConformalSet {
            alpha,
            radius: self.radius_for(alpha),
            base: self.base.clone(),
            maps: self.maps.clone(),
            coeffs,
            center_sq,
        })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn base(&self) -> &UnitVector {
        &self.base
    }

    pub fn train_indices(&self) -> &[usize] {
        &self.train
    }

    pub fn calibration_indices(&self) -> &[usize] {
        &self.calibration
    }

    /// Sorted calibration scores.
    pub fn scores(&self) -> &[f64] {
        &self.scores
    }
}

/// Residual coefficients of calibration site `i` over all maps:
/// delta_i - rho * (full weight row) - (1 - rho * row mass) * train mean.
fn residual_coefficients(
    i: usize,
    rho: f64,
    weights: &SpatialWeights,
    train_coeff: &[f64],
    n: usize,
) -> Vec<f64> {
    let mut coeffs = vec![0.0; n];
    coeffs[i] += 1.0;
    let (cols, vals) = weights.matrix().row(i);
    for (&j, &v) in cols.iter().zip(vals) {
        coeffs[j] -= rho * v;
    }
    let shrink = 1.0 - rho * weights.row_sum(i);
    for (c, t) in coeffs.iter_mut().zip(train_coeff) {
        *c -= shrink * t;
    }
    coeffs
}

fn quadratic_form(gram: &DMatrix<f64>, coeffs: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (i, &ci) in coeffs.iter().enumerate() {
        if ci == 0.0 {
            continue;
        }
        let mut inner = 0.0;
        for (j, &cj) in coeffs.iter().enumerate() {
            if cj != 0.0 {
                inner += cj * gram[(i, j)];
            }
        }
        acc += ci * inner;
    }
    acc
}

impl ConformalSet {
    /// Distance in map space between an observation and the set center.
    pub fn score(&self, y: &UnitVector) -> Result<f64> {
        let a = transport_between(&self.base, y)?;
        let mut cross = 0.0;
        for (c, m) in self.coeffs.iter().zip(&self.maps) {
            if *c != 0.0 {
                cross += c * a.hs_inner(m)?;
            }
        }
        let norm_sq = a.hs_inner(&a)?;
        Ok((norm_sq - 2.0 * cross + self.center_sq).max(0.0).sqrt())
    }

    pub fn contains(&self, y: &UnitVector) -> Result<bool> {
        if self.radius.is_infinite() {
            return Ok(true);
        }
        Ok(self.score(y)? <= self.radius)
    }

    /// The set center pulled back to the sphere.
    pub fn predicted_point(&self) -> Result<UnitVector> {
        let mut acc = TransportMap::zero(self.base.dim(), self.base.step());
        for (c, m) in self.coeffs.iter().zip(&self.maps) {
            if *c != 0.0 {
                acc = acc.plus(&m.scaled(*c))?;
            }
        }
        rodrigues_exp(&acc, &self.base)
    }
}
