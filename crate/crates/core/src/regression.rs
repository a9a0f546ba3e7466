//! Covariate-indexed spatial autoregression.
//!
//! Instead of anchoring every observation at one global mean, each site gets
//! a fitted conditional mean: the Fréchet mean weighted by the global
//! regression weights s_j(x) = 1 + (x - x_bar)' Cov^{-1} (x_j - x_bar).
//! The site-specific deviations (transport maps from the fitted mean to the
//! observation) then feed the same moment estimator as the unconditional
//! model. With constant covariates every weight collapses to 1 and the whole
//! procedure reduces exactly to the unconditional fit.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::frechet::{frechet_mean, FrechetMeanOptions};
use crate::gmm::{fit_sar_transports, FitOptions, SarFit};
use crate::sphere::{transport_between, TransportMap, UnitVector};
use crate::weights::SpatialWeights;

/// Covariate rows with their inverse covariance, ready to produce regression
/// weights. Columns without variation are dropped at construction (their
/// indices are reported), so degenerate designs stay usable.
#[derive(Debug, Clone)]
pub struct CovariateTable {
    rows: DMatrix<f64>,
    original_p: usize,
    kept: Vec<usize>,
    dropped: Vec<usize>,
    mean: DVector<f64>,
    inv_cov: DMatrix<f64>,
}

impl CovariateTable {
    /// Builds the table from an n x p matrix of covariate rows. `ridge` is
    /// added to the covariance diagonal before inversion (0 disables it).
    pub fn new(raw: DMatrix<f64>, ridge: f64) -> Result<Self> {
        let n = raw.nrows();
        let original_p = raw.ncols();
        if n < 2 {
            return Err(Error::EmptyInput);
        }
        if !(ridge.is_finite() && ridge >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "ridge must be finite and nonnegative, got {ridge}"
            )));
        }
        for v in raw.iter() {
            if !v.is_finite() {
                return Err(Error::InvalidArgument(
                    "covariates must be finite".into(),
                ));
            }
        }
        // Column means and a deterministic variation screen: a column whose
        // standard deviation is at machine-noise level relative to its
        // magnitude carries no regression information and would poison the
        // covariance inversion.
        let nf = n as f64;
        let mut kept = Vec::new();
        let mut dropped = Vec::new();
        for j in 0..original_p {
            let col = raw.column(j);
            let mean = col.sum() / nf;
            let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / nf;
            let scale = col.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if var.sqrt() <= 1e-12 * (1.0 + scale) {
                dropped.push(j);
            } else {
                kept.push(j);
            }
        }
        let p = kept.len();
        let rows = DMatrix::from_fn(n, p, |i, jj| raw[(i, kept[jj])]);
        let mean = DVector::from_fn(p, |jj, _| rows.column(jj).sum() / nf);
        let inv_cov = if p == 0 {
            DMatrix::zeros(0, 0)
        } else {
            let mut cov = DMatrix::zeros(p, p);
            for i in 0..n {
                let d = rows.row(i).transpose() - &mean;
                cov.ger(1.0 / nf, &d, &d, 1.0);
            }
            for j in 0..p {
                cov[(j, j)] += ridge;
            }
            let eig = cov.clone().symmetric_eigen();
            let max_l = eig.eigenvalues.iter().cloned().fold(f64::MIN, f64::max);
            let min_l = eig.eigenvalues.iter().cloned().fold(f64::MAX, f64::min);
            if !(min_l > 0.0) || max_l / min_l > 1e15 {
                return Err(Error::Singular(format!(
                    "covariate covariance is numerically singular \
                     (eigenvalue range [{min_l:e}, {max_l:e}]); \
                     drop collinear columns or pass a ridge"
                )));
            }
            if max_l / min_l > 1e10 {
                log::warn!(
                    "covariate covariance is ill-conditioned \
                     (condition number {:.2e}); regression weights may be unstable",
                    max_l / min_l
                );
            }
            let mut inv = DMatrix::zeros(p, p);
            for k in 0..p {
                let u = eig.eigenvectors.column(k);
                inv.ger(1.0 / eig.eigenvalues[k], &u, &u, 1.0);
            }
            inv
        };
        Ok(Self {
            rows,
            original_p,
            kept,
            dropped,
            mean,
            inv_cov,
        })
    }

    pub fn n(&self) -> usize {
        self.rows.nrows()
    }

    /// Number of columns carrying variation.
    pub fn p(&self) -> usize {
        self.kept.len()
    }

    pub fn original_p(&self) -> usize {
        self.original_p
    }

    pub fn kept(&self) -> &[usize] {
        &self.kept
    }

    pub fn dropped(&self) -> &[usize] {
        &self.dropped
    }

    /// The covariate row of site `i`, restricted to kept columns.
    pub fn row(&self, i: usize) -> DVector<f64> {
        self.rows.row(i).transpose()
    }

    fn project(&self, x0: &DVector<f64>) -> Result<DVector<f64>> {
        if x0.len() != self.original_p {
            return Err(Error::DimensionMismatch {
                expected: self.original_p,
                found: x0.len(),
            });
        }
        Ok(DVector::from_fn(self.kept.len(), |jj, _| x0[self.kept[jj]]))
    }

    /// Global regression weights s_j(x0) over all sites. They sum to n for
    /// every x0 (the covariate deviations sum to zero), and individual
    /// weights may be negative.
    pub fn regression_weights(&self, x0: &DVector<f64>) -> Result<Vec<f64>> {
        let n = self.n();
        if self.p() == 0 {
            return Ok(vec![1.0; n]);
        }
        let d0 = self.project(x0)? - &self.mean;
        let lhs = (&self.inv_cov * d0).transpose();
        Ok((0..n)
            .map(|j| 1.0 + (lhs.transpose().dot(&(self.row(j) - &self.mean))))
            .collect())
    }
}

/// Options for the covariate-indexed fit. The conditional means face signed
/// weights, so their solver defaults to multiple restarts.
#[derive(Debug, Clone)]
pub struct RegressionOptions {
    pub fit: FitOptions,
    pub mean_options: FrechetMeanOptions,
}

impl Default for RegressionOptions {
    fn default() -> Self {
        Self {
            fit: FitOptions::default(),
            mean_options: FrechetMeanOptions {
                restarts: 3,
                ..FrechetMeanOptions::default()
            },
        }
    }
}

/// Weighted Fréchet mean at covariate value `x0`.
pub fn conditional_frechet_mean(
    points: &[UnitVector],
    table: &CovariateTable,
    x0: &DVector<f64>,
    opts: &FrechetMeanOptions,
) -> Result<UnitVector> {
    if points.len() != table.n() {
        return Err(Error::DimensionMismatch {
            expected: table.n(),
            found: points.len(),
        });
    }
    let weights = table.regression_weights(x0)?;
    frechet_mean(points, &weights, opts)
}

/// Site-specific deviations: each observation expressed as the transport map
/// from its fitted conditional mean. Returns the maps and the means.
pub fn srmsar_transports(
    points: &[UnitVector],
    table: &CovariateTable,
    opts: &RegressionOptions,
) -> Result<(Vec<TransportMap>, Vec<UnitVector>)> {
    if points.len() != table.n() {
        return Err(Error::DimensionMismatch {
            expected: table.n(),
            found: points.len(),
        });
    }
    let mut maps = Vec::with_capacity(points.len());
    let mut means = Vec::with_capacity(points.len());
    for (i, y) in points.iter().enumerate() {
        let x_full = full_row(table, i);
        let mu = conditional_frechet_mean(points, table, &x_full, &opts.mean_options)?;
        maps.push(transport_between(&mu, y)?);
        means.push(mu);
    }
    Ok((maps, means))
}

fn full_row(table: &CovariateTable, i: usize) -> DVector<f64> {
    // Reconstruct a row in original column order; dropped columns read as 0,
    // which is irrelevant because their weight contribution is zero.
    let mut x = DVector::zeros(table.original_p());
    for (jj, &j) in table.kept().iter().enumerate() {
        x[j] = table.rows[(i, jj)];
    }
    x
}

/// The covariate-indexed fit: conditional means, deviations, lag estimate.
pub struct SrmsarFit {
    fit: SarFit,
    fitted_means: Vec<UnitVector>,
    table: CovariateTable,
}

/// Fits the covariate-indexed lag model. With constant covariates it
/// reproduces the unconditional [`fit_sar_points`](crate::gmm::fit_sar_points)
/// estimate exactly.
pub fn fit_srmsar(
    points: &[UnitVector],
    table: CovariateTable,
    weights: &SpatialWeights,
    opts: RegressionOptions,
) -> Result<SrmsarFit> {
    let (maps, means) = srmsar_transports(points, &table, &opts)?;
    let fit = fit_sar_transports(maps, weights, opts.fit)?;
    Ok(SrmsarFit {
        fit,
        fitted_means: means,
        table,
    })
}

impl SrmsarFit {
    /// The spatial lag estimate (lambda).
    pub fn estimate(&self) -> f64 {
        self.fit.estimate()
    }

    pub fn fit(&self) -> &SarFit {
        &self.fit
    }

    pub fn fitted_means(&self) -> &[UnitVector] {
        &self.fitted_means
    }

    pub fn table(&self) -> &CovariateTable {
        &self.table
    }

    /// Decomposes into the inner lag fit, the fitted conditional means, and
    /// the covariate table.
    pub fn into_parts(self) -> (SarFit, Vec<UnitVector>, CovariateTable) {
        (self.fit, self.fitted_means, self.table)
    }
}
