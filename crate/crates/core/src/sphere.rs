//! Points on the unit sphere of a (possibly quadrature-weighted) inner-product
//! space, together with the optimal-transport maps that move one point to
//! another.
//!
//! A [`UnitVector`] stores coordinates plus a scalar quadrature step. Finite
//! spheres use step 1; square-root density embeddings use the grid cell width,
//! so that `<u, v> = step * sum_l u_l v_l` is a Riemann approximation of the
//! underlying integral.
//!
//! A [`TransportMap`] is a finite combination of rank-two skew-symmetric atoms
//! `w * (zb (x) za - za (x) zb)`. The transport from `nu1` to `nu2` is the
//! single atom with weight `theta = d(nu1, nu2)`, `za = nu1`, and `zb` the unit
//! tangent of `nu2` seen from `nu1`; applying its Rodrigues exponential to
//! `nu1` recovers `nu2` exactly. Sums, scalar multiples, and Hilbert-Schmidt
//! inner products of maps are all closed-form over atoms.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Tolerance for the unit-norm check in the strict constructor.
const UNIT_TOL: f64 = 1e-10;
/// Transports are rejected this close to the antipode, where the tangent
/// direction degenerates.
const ANTIPODAL_TOL: f64 = 1e-6;

/// A unit-norm element of the step-weighted inner-product space.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitVector {
    coords: Arc<DVector<f64>>,
    step: f64,
}

impl UnitVector {
    /// Wraps coordinates that are already unit length under the weighted
    /// norm. Fails if the squared norm departs from 1 by more than 1e-10.
    pub fn new(coords: DVector<f64>, step: f64) -> Result<Self> {
        check_step_dim(coords.len(), step)?;
        let norm_sq = step * coords.dot(&coords);
        if !(norm_sq.is_finite() && (norm_sq - 1.0).abs() <= UNIT_TOL) {
            return Err(Error::NotUnit { norm_sq });
        }
        Ok(Self {
            coords: Arc::new(coords),
            step,
        })
    }

    /// Scales arbitrary coordinates onto the sphere. Fails on (near-)zero
    /// input.
    pub fn normalized(mut coords: DVector<f64>, step: f64) -> Result<Self> {
        check_step_dim(coords.len(), step)?;
        let norm = (step * coords.dot(&coords)).sqrt();
        if !norm.is_finite() || norm < 1e-12 {
            return Err(Error::ZeroNorm);
        }
        coords /= norm;
        Ok(Self {
            coords: Arc::new(coords),
            step,
        })
    }

    /// The `axis`-th standard basis vector of the finite `dim`-sphere.
    pub fn basis(dim: usize, axis: usize) -> Self {
        assert!(dim >= 2 && axis < dim, "basis axis out of range");
        let mut coords = DVector::zeros(dim);
        coords[axis] = 1.0;
        Self {
            coords: Arc::new(coords),
            step: 1.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn coords(&self) -> &DVector<f64> {
        &self.coords
    }

    /// Weighted inner product with another point on the same sphere.
    pub fn inner(&self, other: &Self) -> Result<f64> {
        check_compat(self, other)?;
        Ok(self.step * self.coords.dot(&other.coords))
    }
}

fn check_step_dim(dim: usize, step: f64) -> Result<()> {
    if dim < 2 {
        return Err(Error::DimensionMismatch {
            expected: 2,
            found: dim,
        });
    }
    if !(step.is_finite() && step > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "quadrature step must be positive and finite, got {step}"
        )));
    }
    Ok(())
}

fn check_compat(a: &UnitVector, b: &UnitVector) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            found: b.dim(),
        });
    }
    if a.step != b.step {
        return Err(Error::GridMismatch {
            left: a.step,
            right: b.step,
        });
    }
    Ok(())
}

/// Geodesic (great-circle) distance `arccos <a, b>`, with the inner product
/// clamped to [-1, 1] so rounding can never produce NaN.
pub fn geodesic_distance(a: &UnitVector, b: &UnitVector) -> Result<f64> {
    let cos = a.inner(b)?;
    Ok(cos.clamp(-1.0, 1.0).acos())
}

/// Riemannian logarithm: the tangent vector at `base` pointing to `target`
/// with length equal to the geodesic distance.
pub fn log_map(base: &UnitVector, target: &UnitVector) -> Result<DVector<f64>> {
    let cos = base.inner(target)?.clamp(-1.0, 1.0);
    let theta = cos.acos();
    let u = target.coords() - base.coords() * cos;
    let sin = (base.step * u.dot(&u)).sqrt();
    if sin < 1e-14 {
        if cos > 0.0 {
            return Ok(DVector::zeros(base.dim()));
        }
        return Err(Error::AntipodalPoints);
    }
    Ok(u * (theta / sin))
}

/// Riemannian exponential of a tangent vector at `base`.
pub fn exp_map(base: &UnitVector, tangent: &DVector<f64>) -> Result<UnitVector> {
    if tangent.len() != base.dim() {
        return Err(Error::DimensionMismatch {
            expected: base.dim(),
            found: tangent.len(),
        });
    }
    let theta = (base.step * tangent.dot(tangent)).sqrt();
    if theta < 1e-300 {
        return Ok(base.clone());
    }
    let coords = base.coords() * theta.cos() + tangent * (theta.sin() / theta);
    UnitVector::normalized(coords, base.step)
}

/// Moves a tangent vector at `from` to the tangent space at `to` along the
/// connecting geodesic.
pub fn parallel_transport(
    from: &UnitVector,
    to: &UnitVector,
    tangent: &DVector<f64>,
) -> Result<DVector<f64>> {
    let cos = from.inner(to)?;
    if cos <= -1.0 + 1e-12 {
        return Err(Error::AntipodalPoints);
    }
    let dot_to = to.step() * tangent.dot(to.coords());
    Ok(tangent - (from.coords() + to.coords()) * (dot_to / (1.0 + cos)))
}

/// One rank-two skew-symmetric summand `weight * (zb (x) za - za (x) zb)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportAtom {
    pub weight: f64,
    pub za: UnitVector,
    pub zb: UnitVector,
}

/// A finite combination of transport atoms acting on the ambient space.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportMap {
    dim: usize,
    step: f64,
    atoms: Vec<TransportAtom>,
}

impl TransportMap {
    /// The zero map (empty atom list).
    pub fn zero(dim: usize, step: f64) -> Self {
        Self {
            dim,
            step,
            atoms: Vec::new(),
        }
    }

    pub fn from_atoms(dim: usize, step: f64, atoms: Vec<TransportAtom>) -> Result<Self> {
        check_step_dim(dim, step)?;
        for atom in &atoms {
            if atom.za.dim() != dim || atom.zb.dim() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: atom.za.dim().max(atom.zb.dim()),
                });
            }
            if atom.za.step() != step || atom.zb.step() != step {
                return Err(Error::GridMismatch {
                    left: step,
                    right: atom.za.step(),
                });
            }
            if !atom.weight.is_finite() {
                return Err(Error::InvalidArgument(
                    "atom weight must be finite".to_string(),
                ));
            }
        }
        Ok(Self { dim, step, atoms })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn atoms(&self) -> &[TransportAtom] {
        &self.atoms
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    /// Applies the map to an ambient vector:
    /// `sum_k w_k (zb_k <za_k, v> - za_k <zb_k, v>)`.
    pub fn apply(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        if v.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: v.len(),
            });
        }
        let mut out = DVector::zeros(self.dim);
        for atom in &self.atoms {
            let pa = self.step * atom.za.coords().dot(v);
            let pb = self.step * atom.zb.coords().dot(v);
            out.axpy(atom.weight * pa, atom.zb.coords(), 1.0);
            out.axpy(-atom.weight * pb, atom.za.coords(), 1.0);
        }
        Ok(out)
    }

    pub fn scaled(&self, factor: f64) -> Self {
        let atoms = self
            .atoms
            .iter()
            .map(|a| TransportAtom {
                weight: a.weight * factor,
                za: a.za.clone(),
                zb: a.zb.clone(),
            })
            .collect();
        Self {
            dim: self.dim,
            step: self.step,
            atoms,
        }
    }

    /// Atom-concatenation sum; no algebraic simplification is attempted.
    pub fn plus(&self, other: &Self) -> Result<Self> {
        if self.dim != other.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: other.dim,
            });
        }
        if self.step != other.step {
            return Err(Error::GridMismatch {
                left: self.step,
                right: other.step,
            });
        }
        let mut atoms = self.atoms.clone();
        atoms.extend(other.atoms.iter().cloned());
        Ok(Self {
            dim: self.dim,
            step: self.step,
            atoms,
        })
    }

    pub fn minus(&self, other: &Self) -> Result<Self> {
        self.plus(&other.scaled(-1.0))
    }

    /// Hilbert-Schmidt inner product, expanded atom pair by atom pair:
    /// `<w (b (x) a - a (x) b), w' (b' (x) a' - a' (x) b')>
    ///   = 2 w w' (<a, a'><b, b'> - <a, b'><b, a'>)`.
    pub fn hs_inner(&self, other: &Self) -> Result<f64> {
        if self.dim != other.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: other.dim,
            });
        }
        if self.step != other.step {
            return Err(Error::GridMismatch {
                left: self.step,
                right: other.step,
            });
        }
        let s = self.step;
        let mut acc = 0.0;
        for x in &self.atoms {
            for y in &other.atoms {
                let aa = s * x.za.coords().dot(y.za.coords());
                let bb = s * x.zb.coords().dot(y.zb.coords());
                let ab = s * x.za.coords().dot(y.zb.coords());
                let ba = s * x.zb.coords().dot(y.za.coords());
                acc += 2.0 * x.weight * y.weight * (aa * bb - ab * ba);
            }
        }
        Ok(acc)
    }

    pub fn hs_norm(&self) -> f64 {
        self.hs_inner(self).expect("self inner product").max(0.0).sqrt()
    }

    /// Dense matrix of the map in orthonormal coordinates (`sqrt(step)`-scaled),
    /// so that plain matrix algebra reproduces `apply`, `hs_inner`, and the
    /// operator exponential. Intended for oracles and small instances.
    pub fn densify(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.dim, self.dim);
        let scale = self.step; // (sqrt(step) a)(sqrt(step) b)^T = step * a b^T
        for atom in &self.atoms {
            let a = atom.za.coords();
            let b = atom.zb.coords();
            for i in 0..self.dim {
                for j in 0..self.dim {
                    m[(i, j)] += atom.weight * scale * (b[i] * a[j] - a[i] * b[j]);
                }
            }
        }
        m
    }
}

/// The optimal transport map carrying `base` to `target`: a single atom with
/// weight `theta = d(base, target)`, `za = base`, and `zb` the unit tangent
/// direction. Identical points give the zero map; antipodal points are
/// rejected.
pub fn transport_between(base: &UnitVector, target: &UnitVector) -> Result<TransportMap> {
    let cos = base.inner(target)?.clamp(-1.0, 1.0);
    let theta = cos.acos();
    if theta >= std::f64::consts::PI - ANTIPODAL_TOL {
        return Err(Error::AntipodalPoints);
    }
    let u = target.coords() - base.coords() * cos;
    let norm = (base.step() * u.dot(&u)).sqrt();
    if theta < 1e-12 || norm < 1e-14 {
        return Ok(TransportMap::zero(base.dim(), base.step()));
    }
    let zb = UnitVector::normalized(u, base.step())?;
    TransportMap::from_atoms(
        base.dim(),
        base.step(),
        vec![TransportAtom {
            weight: theta,
            za: base.clone(),
            zb,
        }],
    )
}

/// Rodrigues-form exponential of a transport map evaluated at `base`:
/// `base + sin(theta)/theta * T base + (1 - cos(theta))/theta^2 * T^2 base`
/// with `theta = ||T base||`. For a single atom this is the exact operator
/// exponential; for atom combinations it is the same truncated formula,
/// defensively renormalized.
pub fn rodrigues_exp(map: &TransportMap, base: &UnitVector) -> Result<UnitVector> {
    if map.dim() != base.dim() {
        return Err(Error::DimensionMismatch {
            expected: map.dim(),
            found: base.dim(),
        });
    }
    if map.step() != base.step() {
        return Err(Error::GridMismatch {
            left: map.step(),
            right: base.step(),
        });
    }
    let u = map.apply(base.coords())?;
    let theta = (base.step() * u.dot(&u)).sqrt();
    if theta < 1e-14 {
        return Ok(base.clone());
    }
    let tu = map.apply(&u)?;
    let coords =
        base.coords() + &u * (theta.sin() / theta) + tu * ((1.0 - theta.cos()) / (theta * theta));
    UnitVector::normalized(coords, base.step())
}

/// Mean transport `(1/n) sum_i T_i` by atom concatenation.
pub fn mean_transport(maps: &[TransportMap]) -> Result<TransportMap> {
    let first = maps.first().ok_or(Error::EmptyInput)?;
    let n = maps.len() as f64;
    let mut atoms = Vec::with_capacity(maps.iter().map(|m| m.atoms().len()).sum());
    for map in maps {
        if map.dim() != first.dim() {
            return Err(Error::DimensionMismatch {
                expected: first.dim(),
                found: map.dim(),
            });
        }
        if map.step() != first.step() {
            return Err(Error::GridMismatch {
                left: first.step(),
                right: map.step(),
            });
        }
        for atom in map.atoms() {
            atoms.push(TransportAtom {
                weight: atom.weight / n,
                za: atom.za.clone(),
                zb: atom.zb.clone(),
            });
        }
    }
    TransportMap::from_atoms(first.dim(), first.step(), atoms)
}

/// Subtracts the mean transport from every map. Returns the centered maps and
/// the mean itself.
pub fn center_transports(maps: &[TransportMap]) -> Result<(Vec<TransportMap>, TransportMap)> {
    let mean = mean_transport(maps)?;
    let negated = mean.scaled(-1.0);
    let centered = maps
        .iter()
        .map(|m| m.plus(&negated))
        .collect::<Result<Vec<_>>>()?;
    Ok((centered, mean))
}
