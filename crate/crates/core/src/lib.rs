//! Spatial autoregression for sphere-valued observations.
//!
//! Observations live on a unit sphere (finite-dimensional coordinates or a
//! quadrature grid of density values). Each observation is identified with
//! the optimal-transport-style map that rotates a common base point onto it;
//! those maps form a linear space where a spatial lag model can be estimated
//! by generalized method of moments. On top of the estimator sit a residual
//! bootstrap test for spatial dependence, a Wald test, split-conformal
//! prediction sets, and a covariate-driven regression variant.
//!
//! Organization:
//! - [`sphere`]: sphere points, tangent maps, geodesic calculus.
//! - [`embed`]: compositional and density-grid embeddings onto the sphere.
//! - [`frechet`]: (weighted) Fréchet means.
//! - [`weights`]: sparse spatial weight matrices and their algebra.
//! - [`gmm`]: the spatial-lag moment estimator and Wald test.
//! - [`regression`]: covariate-indexed Fréchet regression variant.
//! - [`bootstrap`]: residual bootstrap inference for the lag parameter.
//! - [`conformal`]: split-conformal prediction sets and point prediction.
//! - [`sim`]: data generators and Monte Carlo experiment drivers.

pub mod bootstrap;
pub mod conformal;
pub mod embed;
pub mod error;
pub mod frechet;
pub mod gmm;
pub mod regression;
pub mod sim;
pub mod sphere;
pub mod weights;

pub use error::{Error, Result};
