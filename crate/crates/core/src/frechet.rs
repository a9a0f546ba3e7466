//! Weighted Frechet means on the sphere via tangent-space fixed-point
//! iteration.

use nalgebra::DVector;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use crate::error::{Error, Result};
use crate::sphere::{exp_map, geodesic_distance, log_map, UnitVector};

/// Solver controls for [`frechet_mean`].
#[derive(Debug, Clone)]
pub struct FrechetMeanOptions {
    pub max_iterations: usize,
    /// Convergence threshold on the norm of the mean tangent update.
    pub tolerance: f64,
    /// Number of starts. The first uses the normalized extrinsic mean; later
    /// ones perturb it deterministically. Useful when weights are negative
    /// and the objective may have several stationary points.
    pub restarts: usize,
}

impl Default for FrechetMeanOptions {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            tolerance: 1e-10,
            restarts: 1,
        }
    }
}

/// Weighted Frechet objective `sum_i w_i d(candidate, y_i)^2`.
pub fn frechet_objective(
    points: &[UnitVector],
    weights: &[f64],
    candidate: &UnitVector,
) -> Result<f64> {
    if points.is_empty() {
        return Err(Error::EmptyInput);
    }
    if points.len() != weights.len() {
        return Err(Error::DimensionMismatch {
            expected: points.len(),
            found: weights.len(),
        });
    }
    let mut acc = 0.0;
    for (y, &w) in points.iter().zip(weights) {
        let d = geodesic_distance(candidate, y)?;
        acc += w * d * d;
    }
    Ok(acc)
}

/// Minimizes the weighted Frechet objective by iterating
/// `mu <- Exp_mu( sum_i w_i Log_mu(y_i) / sum_i w_i )` until the tangent
/// update drops below tolerance. Negative weights are allowed; the weight sum
/// must be bounded away from zero.
///
/// When the support spans more than a hemisphere the minimizer may not be
/// unique; a diagnostic warning is logged in that case.
pub fn frechet_mean(
    points: &[UnitVector],
    weights: &[f64],
    opts: &FrechetMeanOptions,
) -> Result<UnitVector> {
    if points.is_empty() {
        return Err(Error::EmptyInput);
    }
    if points.len() != weights.len() {
        return Err(Error::DimensionMismatch {
            expected: points.len(),
            found: weights.len(),
        });
    }
    let dim = points[0].dim();
    let step = points[0].step();
    for p in points {
        if p.dim() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: p.dim(),
            });
        }
        if p.step() != step {
            return Err(Error::GridMismatch {
                left: step,
                right: p.step(),
            });
        }
    }
    let weight_sum: f64 = weights.iter().sum();
    if !weight_sum.is_finite() || weight_sum.abs() < 1e-12 {
        return Err(Error::ZeroWeightSum);
    }

    let restarts = opts.restarts.max(1);
    let mut best: Option<(UnitVector, f64)> = None;
    let mut last_failure = Error::NonConvergence {
        iterations: opts.max_iterations,
        last_step: f64::NAN,
    };
    for restart in 0..restarts {
        let init = match initial_guess(points, weights, dim, step, restart) {
            Ok(v) => v,
            Err(e) => {
                last_failure = e;
                continue;
            }
        };
        match iterate(points, weights, weight_sum, init, opts) {
            Ok(mu) => {
                let obj = frechet_objective(points, weights, &mu)?;
                let better = match &best {
                    Some((_, best_obj)) => obj < *best_obj,
                    None => true,
                };
                if better {
                    best = Some((mu, obj));
                }
            }
            Err(e) => last_failure = e,
        }
    }

    match best {
        Some((mu, _)) => {
            if let Some(max_dist) = support_radius(points, &mu) {
                if max_dist > std::f64::consts::FRAC_PI_2 + 1e-9 {
                    log::warn!(
                        "frechet mean support spans more than a hemisphere \
                         (max distance {max_dist:.3}); the minimizer may not be unique"
                    );
                }
            }
            Ok(mu)
        }
        None => Err(last_failure),
    }
}

fn initial_guess(
    points: &[UnitVector],
    weights: &[f64],
    dim: usize,
    step: f64,
    restart: usize,
) -> Result<UnitVector> {
    let mut acc = DVector::zeros(dim);
    for (y, &w) in points.iter().zip(weights) {
        acc.axpy(w, y.coords(), 1.0);
    }
    let extrinsic = UnitVector::normalized(acc, step);
    if restart == 0 {
        return extrinsic.or_else(|_| {
            // Weighted extrinsic mean collapsed to zero; fall back to the
            // first data point.
            Ok(points[0].clone())
        });
    }
    // Deterministic perturbed starts: a fixed-seed stream keyed by the
    // restart index keeps repeated calls bit-identical.
    let mut rng = ChaCha12Rng::seed_from_u64(0x4652_4543 ^ restart as u64);
    let center = extrinsic.unwrap_or_else(|_| points[0].clone());
    let mut tangent = DVector::from_fn(dim, |_, _| rng.gen_range(-1.0..1.0));
    let radial = step * tangent.dot(center.coords());
    tangent.axpy(-radial, center.coords(), 1.0);
    let norm = (step * tangent.dot(&tangent)).sqrt();
    if norm < 1e-12 {
        return Ok(center);
    }
    tangent *= 0.5 / norm;
    exp_map(&center, &tangent)
}

fn iterate(
    points: &[UnitVector],
    weights: &[f64],
    weight_sum: f64,
    mut mu: UnitVector,
    opts: &FrechetMeanOptions,
) -> Result<UnitVector> {
    let dim = mu.dim();
    let mut last_step = f64::NAN;
    for _ in 0..opts.max_iterations {
        let mut tangent = DVector::zeros(dim);
        for (y, &w) in points.iter().zip(weights) {
            let log = log_map(&mu, y)?;
            tangent.axpy(w / weight_sum, &log, 1.0);
        }
        let norm = (mu.step() * tangent.dot(&tangent)).sqrt();
        if norm < opts.tolerance {
            return Ok(mu);
        }
        mu = exp_map(&mu, &tangent)?;
        last_step = norm;
    }
    Err(Error::NonConvergence {
        iterations: opts.max_iterations,
        last_step,
    })
}

fn support_radius(points: &[UnitVector], mu: &UnitVector) -> Option<f64> {
    points
        .iter()
        .map(|y| geodesic_distance(mu, y).unwrap_or(f64::NAN))
        .fold(None, |acc, d| match acc {
            Some(m) if m >= d => Some(m),
            _ => Some(d),
        })
}
