//! Embeddings of constrained data onto the unit sphere.
//!
//! Two families are supported: compositions (nonnegative vectors summing to
//! one, mapped by coordinatewise square roots onto the finite sphere) and
//! probability densities sampled on a uniform grid (mapped by square roots
//! onto the quadrature sphere with weight `delta_omega`). Both maps are
//! invertible on the nonnegative orthant, and the inverses renormalize so a
//! round trip reproduces exact constraint satisfaction even after floating
//! point drift.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::sphere::UnitVector;

/// A composition: nonnegative parts that sum to one.
#[derive(Debug, Clone, PartialEq)]
pub struct Composition {
    parts: DVector<f64>,
}

const COMPOSITION_SUM_TOL: f64 = 1e-9;
const DENSITY_MASS_TOL: f64 = 1e-6;

impl Composition {
    pub fn new(parts: DVector<f64>) -> Result<Self> {
        if parts.len() < 2 {
            return Err(Error::InvalidArgument(
                "a composition needs at least two parts".into(),
            ));
        }
        for (i, &p) in parts.iter().enumerate() {
            if !(p.is_finite() && p >= 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "part {i} must be finite and nonnegative, got {p}"
                )));
            }
        }
        let sum: f64 = parts.sum();
        if (sum - 1.0).abs() > COMPOSITION_SUM_TOL {
            return Err(Error::InvalidArgument(format!(
                "parts sum to {sum}, expected 1"
            )));
        }
        Ok(Self { parts })
    }

    pub fn parts(&self) -> &DVector<f64> {
        &self.parts
    }

    pub fn len(&self) -> usize {
        self.parts.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// A probability density tabulated on a uniform grid: nonnegative values
/// whose Riemann sum `delta_omega * sum(values)` equals one.
#[derive(Debug, Clone, PartialEq)]
pub struct GridDensity {
    values: DVector<f64>,
    delta_omega: f64,
}

impl GridDensity {
    pub fn new(values: DVector<f64>, delta_omega: f64) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::InvalidArgument(
                "a grid density needs at least two cells".into(),
            ));
        }
        if !(delta_omega.is_finite() && delta_omega > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "grid step must be finite and positive, got {delta_omega}"
            )));
        }
        for (i, &v) in values.iter().enumerate() {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "density value {i} must be finite and nonnegative, got {v}"
                )));
            }
        }
        let mass = delta_omega * values.sum();
        if (mass - 1.0).abs() > DENSITY_MASS_TOL {
            return Err(Error::InvalidArgument(format!(
                "density integrates to {mass}, expected 1"
            )));
        }
        Ok(Self {
            values,
            delta_omega,
        })
    }

    pub fn values(&self) -> &DVector<f64> {
        &self.values
    }

    pub fn delta_omega(&self) -> f64 {
        self.delta_omega
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// Square-root embedding of a composition onto the finite sphere (step 1).
pub fn composition_to_sphere(c: &Composition) -> UnitVector {
    let coords = c.parts().map(|p| p.sqrt());
    // Renormalize so the constructor's strict unit check always passes.
    let norm = coords.norm();
    UnitVector::new(coords / norm, 1.0).expect("renormalized square roots are unit")
}

/// Inverse of the square-root embedding. Coordinates are squared (so sign
/// information, if any crept in, is discarded) and the result renormalized to
/// an exact composition.
pub fn sphere_to_composition(u: &UnitVector) -> Result<Composition> {
    if (u.step() - 1.0).abs() > 1e-12 {
        return Err(Error::GridMismatch {
            left: u.step(),
            right: 1.0,
        });
    }
    let squared = u.coords().map(|x| x * x);
    let sum = squared.sum();
    if sum < 1e-300 {
        return Err(Error::ZeroNorm);
    }
    Composition::new(squared / sum)
}

/// Square-root embedding of a grid density onto the quadrature sphere with
/// step `delta_omega`.
pub fn density_to_sphere(d: &GridDensity) -> UnitVector {
    let coords = d.values().map(|v| v.sqrt());
    let norm_sq = d.delta_omega() * coords.norm_squared();
    let scale = norm_sq.sqrt();
    UnitVector::new(coords / scale, d.delta_omega())
        .expect("renormalized square roots are unit in the quadrature norm")
}

/// Inverse of the density embedding.
pub fn sphere_to_density(u: &UnitVector) -> Result<GridDensity> {
    let squared = u.coords().map(|x| x * x);
    let mass = u.step() * squared.sum();
    if mass < 1e-300 {
        return Err(Error::ZeroNorm);
    }
    GridDensity::new(squared / mass, u.step())
}
