//! Moment-based estimation of the spatial lag parameter.
//!
//! Centered transport maps q_i - q_bar are modeled as a spatial autoregression
//! q_i - q_bar = rho * sum_j w_ij (q_j - q_bar) + eps_i. The estimator
//! minimizes the squared moment trace rho -> [tr{S(rho)^T P S(rho) G}]^2,
//! where S(rho) = I - rho W, P is an instrument matrix (W by default), and G
//! is the centered Gram matrix of the maps. The trace is an exact quadratic
//! in rho, so the minimizer comes from the analytic roots; no numerical
//! optimizer is involved.

use std::cell::OnceCell;

use nalgebra::DMatrix;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};
use crate::frechet::{frechet_mean, FrechetMeanOptions};
use crate::sphere::{mean_transport, transport_between, TransportMap, UnitVector};
use crate::weights::{
    admissible_rho_interval, quadratic_trace_coeffs, RhoInterval, SparseMatrix, SpatialWeights,
    DEFAULT_RHO_MARGIN,
};

/// The moment trace expanded as `a + b rho + c rho^2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GmmPolynomial {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl GmmPolynomial {
    pub fn eval(&self, rho: f64) -> f64 {
        self.a + rho * (self.b + rho * self.c)
    }

    /// The squared trace actually being minimized.
    pub fn objective(&self, rho: f64) -> f64 {
        let f = self.eval(rho);
        f * f
    }
}

/// How the reported estimate was obtained from the quadratic.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RootSelection {
    /// A real root of the trace inside the admissible interval. `other` is
    /// the remaining root; `both_admissible` records whether the tie-break
    /// (smaller magnitude, then nonnegative) had to choose between two
    /// admissible roots.
    QuadraticRoot { other: f64, both_admissible: bool },
    /// The quadratic coefficient vanished and the linear root was admissible.
    LinearRoot,
    /// No admissible zero exists; the squared trace was minimized over the
    /// closed interval instead (interior vertex when the discriminant is
    /// negative, otherwise an endpoint). `clamped` is true when the reported
    /// value sits on the interval boundary.
    Vertex { clamped: bool },
}

const COEFF_REL_TOL: f64 = 1e-14;

/// Picks the preferred of two admissible candidates: smaller magnitude wins,
/// near-equal magnitudes resolve to the nonnegative one.
fn tie_break(r1: f64, r2: f64) -> (f64, bool) {
    let (a1, a2) = (r1.abs(), r2.abs());
    let tol = 1e-12 * a1.max(a2).max(1e-300);
    if (a1 - a2).abs() <= tol {
        (r1.max(r2), true)
    } else if a1 < a2 {
        (r1, false)
    } else {
        (r2, false)
    }
}

/// Minimizes `poly.objective` over the closed interval analytically.
///
/// Returns [`Error::Unidentified`] when the trace does not depend on rho at
/// all (both the linear and quadratic coefficients vanish relative to the
/// constant), in which case no estimate is meaningful.
pub fn minimize_quadratic_trace(
    poly: GmmPolynomial,
    interval: RhoInterval,
) -> Result<(f64, RootSelection)> {
    let GmmPolynomial { a, b, c } = poly;
    if !(a.is_finite() && b.is_finite() && c.is_finite()) {
        return Err(Error::InvalidArgument(
            "non-finite moment trace coefficients".into(),
        ));
    }
    if interval.lo > interval.hi {
        return Err(Error::InvalidArgument(format!(
            "empty interval [{}, {}]",
            interval.lo, interval.hi
        )));
    }
    let scale = a.abs().max(b.abs()).max(c.abs());
    if scale == 0.0 {
        return Err(Error::Unidentified);
    }
    let c_negligible = c.abs() <= COEFF_REL_TOL * scale;
    let b_negligible = b.abs() <= COEFF_REL_TOL * scale;
    if c_negligible && b_negligible {
        return Err(Error::Unidentified);
    }
    if c_negligible {
        let root = -a / b;
        if interval.contains(root) {
            return Ok((root, RootSelection::LinearRoot));
        }
        return Ok((interval.clamp(root), RootSelection::Vertex { clamped: true }));
    }

    let disc = b * b - 4.0 * c * a;
    if disc >= 0.0 {
        let sq = disc.sqrt();
        let q = -0.5 * (b + b.signum() * sq);
        let (r1, r2) = if q == 0.0 { (0.0, 0.0) } else { (q / c, a / q) };
        match (interval.contains(r1), interval.contains(r2)) {
            (true, true) => {
                let (chosen, _) = tie_break(r1, r2);
                let other = if chosen == r1 { r2 } else { r1 };
                Ok((
                    chosen,
                    RootSelection::QuadraticRoot {
                        other,
                        both_admissible: true,
                    },
                ))
            }
            (true, false) => Ok((
                r1,
                RootSelection::QuadraticRoot {
                    other: r2,
                    both_admissible: false,
                },
            )),
            (false, true) => Ok((
                r2,
                RootSelection::QuadraticRoot {
                    other: r1,
                    both_admissible: false,
                },
            )),
            (false, false) => {
                // The squared trace is monotone on the interval side of each
                // root, so the best admissible value is an endpoint.
                let (flo, fhi) = (poly.objective(interval.lo), poly.objective(interval.hi));
                let pick = if flo < fhi {
                    interval.lo
                } else if fhi < flo {
                    interval.hi
                } else {
                    tie_break(interval.lo, interval.hi).0
                };
                Ok((pick, RootSelection::Vertex { clamped: true }))
            }
        }
    } else {
        // No real zero: |trace| is minimized at the parabola vertex, and the
        // squared trace grows monotonically away from it.
        let vertex = -b / (2.0 * c);
        let clamped = !interval.contains(vertex);
        Ok((interval.clamp(vertex), RootSelection::Vertex { clamped }))
    }
}

/// Pairwise Hilbert-Schmidt Gram matrix of transport maps.
pub fn gram_matrix(maps: &[TransportMap]) -> Result<DMatrix<f64>> {
    let n = maps.len();
    if n == 0 {
        return Err(Error::EmptyInput);
    }
    let mut k = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v = maps[i].hs_inner(&maps[j])?;
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    Ok(k)
}

/// Double-centers a symmetric Gram matrix: the result is the Gram matrix of
/// the mean-subtracted maps, computed without touching the maps themselves.
pub fn center_gram(k: &DMatrix<f64>) -> DMatrix<f64> {
    let n = k.nrows();
    let nf = n as f64;
    let row_means: Vec<f64> = (0..n).map(|i| k.row(i).sum() / nf).collect();
    let grand = row_means.iter().sum::<f64>() / nf;
    DMatrix::from_fn(n, n, |i, j| k[(i, j)] - row_means[i] - row_means[j] + grand)
}

/// Residual second-moment summaries used by the Wald test.
///
/// With D_i the diagonal and O_ij the off-diagonal entries of the residual
/// Gram matrix: `level` is mean(D), `diag_second` is mean(D^2),
/// `cross_second` is the mean over ordered pairs of O^2 (or of O itself when
/// the literal flag is set), and the two ratios divide by `level^2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentEstimates {
    pub level: f64,
    pub diag_second: f64,
    pub cross_second: f64,
    pub cross_ratio: f64,
    pub diag_ratio: f64,
    /// Number of eigencomponents kept when spectral truncation was applied.
    pub retained_rank: Option<usize>,
}

/// Computes [`MomentEstimates`] from a residual Gram matrix, optionally
/// truncating its spectrum to the smallest leading eigenspace holding the
/// given fraction of the total (clamped-to-positive) eigenvalue mass.
pub fn moment_estimates_from_gram(
    k_res: &DMatrix<f64>,
    pca_fraction: Option<f64>,
    literal_cross_moment: bool,
) -> Result<MomentEstimates> {
    let n = k_res.nrows();
    if n < 2 || k_res.ncols() != n {
        return Err(Error::InvalidArgument(format!(
            "residual Gram must be square with n >= 2, got {}x{}",
            n,
            k_res.ncols()
        )));
    }
    let (work, rank);
    match pca_fraction {
        None => {
            work = k_res.clone();
            rank = None;
        }
        Some(frac) => {
            if !(frac > 0.0 && frac <= 1.0) {
                return Err(Error::InvalidArgument(format!(
                    "spectral fraction must lie in (0, 1], got {frac}"
                )));
            }
            let eig = k_res.clone().symmetric_eigen();
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&i, &j| {
                eig.eigenvalues[j]
                    .partial_cmp(&eig.eigenvalues[i])
                    .expect("finite eigenvalues")
            });
            let total: f64 = eig.eigenvalues.iter().map(|l| l.max(0.0)).sum();
            if total <= 0.0 {
                return Err(Error::DegenerateTest(
                    "residual Gram has no positive spectrum".into(),
                ));
            }
            let mut kept = 0usize;
            let mut cum = 0.0;
            for &idx in &order {
                kept += 1;
                cum += eig.eigenvalues[idx].max(0.0);
                if cum >= frac * total - 1e-12 * total {
                    break;
                }
            }
            let mut rebuilt = DMatrix::zeros(n, n);
            for &idx in order.iter().take(kept) {
                let u = eig.eigenvectors.column(idx);
                rebuilt.ger(eig.eigenvalues[idx], &u, &u, 1.0);
            }
            work = rebuilt;
            rank = Some(kept);
        }
    }

    let nf = n as f64;
    let level = work.trace() / nf;
    if !(level.is_finite() && level > 0.0) {
        return Err(Error::DegenerateTest(format!(
            "mean residual second moment must be positive, got {level}"
        )));
    }
    let diag_second = (0..n).map(|i| work[(i, i)] * work[(i, i)]).sum::<f64>() / nf;
    let mut cross = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let o = work[(i, j)];
                cross += if literal_cross_moment { o } else { o * o };
            }
        }
    }
    let cross_second = cross / (nf * (nf - 1.0));
    Ok(MomentEstimates {
        level,
        diag_second,
        cross_second,
        cross_ratio: cross_second / (level * level),
        diag_ratio: diag_second / (level * level),
        retained_rank: rank,
    })
}

/// Estimation options. `instrument` defaults to the weight matrix itself and
/// `interval` to the margin-shrunk unit interval. `pca_fraction` controls the
/// spectral truncation used by the Wald moments (`None` disables it).
#[derive(Debug, Clone)]
pub struct FitOptions {
    pub instrument: Option<SparseMatrix>,
    pub interval: Option<RhoInterval>,
    pub pca_fraction: Option<f64>,
    pub literal_cross_moment: bool,
    pub mean_options: FrechetMeanOptions,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            instrument: None,
            interval: None,
            pca_fraction: Some(0.90),
            literal_cross_moment: false,
            mean_options: FrechetMeanOptions::default(),
        }
    }
}

/// A fitted spatial lag model over transport maps.
pub struct SarFit {
    n: usize,
    estimate: f64,
    polynomial: GmmPolynomial,
    selection: RootSelection,
    interval: RhoInterval,
    base_mean: Option<UnitVector>,
    maps: Vec<TransportMap>,
    mean_map: TransportMap,
    centered_gram: DMatrix<f64>,
    weights: SpatialWeights,
    instrument: SparseMatrix,
    options: FitOptions,
    residual_gram: OnceCell<DMatrix<f64>>,
    moments: OnceCell<MomentEstimates>,
    s_inv: OnceCell<DMatrix<f64>>,
}

/// Fits the lag model to sphere-valued observations: computes their Fréchet
/// mean, represents each observation as the transport map from the mean, and
/// runs the moment estimator on those maps.
pub fn fit_sar_points(
    points: &[UnitVector],
    weights: &SpatialWeights,
    options: FitOptions,
) -> Result<SarFit> {
    if points.is_empty() {
        return Err(Error::EmptyInput);
    }
    let uniform = vec![1.0; points.len()];
    let base = frechet_mean(points, &uniform, &options.mean_options)?;
    let maps = points
        .iter()
        .map(|y| transport_between(&base, y))
        .collect::<Result<Vec<_>>>()?;
    fit_from_parts(maps, Some(base), weights, options)
}

/// Fits the lag model directly to caller-supplied transport maps (they may
/// sit at different base points; only their Gram matrix enters).
pub fn fit_sar_transports(
    maps: Vec<TransportMap>,
    weights: &SpatialWeights,
    options: FitOptions,
) -> Result<SarFit> {
    fit_from_parts(maps, None, weights, options)
}

fn fit_from_parts(
    maps: Vec<TransportMap>,
    base_mean: Option<UnitVector>,
    weights: &SpatialWeights,
    options: FitOptions,
) -> Result<SarFit> {
    let n = maps.len();
    if n < 2 {
        return Err(Error::EmptyInput);
    }
    if weights.n() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: weights.n(),
        });
    }
    let instrument = match &options.instrument {
        Some(p) => {
            if p.rows() != n || p.cols() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    found: p.rows(),
                });
            }
            p.clone()
        }
        None => weights.matrix().clone(),
    };
    let interval = options
        .interval
        .unwrap_or_else(|| admissible_rho_interval(weights, DEFAULT_RHO_MARGIN));
    let k = gram_matrix(&maps)?;
    let centered = center_gram(&k);
    if centered.trace() <= 1e-12 * n as f64 {
        return Err(Error::ZeroGram);
    }
    let (a, b, c) = quadratic_trace_coeffs(weights, &instrument, &centered)?;
    let polynomial = GmmPolynomial { a, b, c };
    let (estimate, selection) = minimize_quadratic_trace(polynomial, interval)?;
    let mean_map = mean_transport(&maps)?;
    Ok(SarFit {
        n,
        estimate,
        polynomial,
        selection,
        interval,
        base_mean,
        maps,
        mean_map,
        centered_gram: centered,
        weights: weights.clone(),
        instrument,
        options,
        residual_gram: OnceCell::new(),
        moments: OnceCell::new(),
        s_inv: OnceCell::new(),
    })
}

impl SarFit {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn estimate(&self) -> f64 {
        self.estimate
    }

    pub fn polynomial(&self) -> GmmPolynomial {
        self.polynomial
    }

    pub fn selection(&self) -> RootSelection {
        self.selection
    }

    pub fn interval(&self) -> RhoInterval {
        self.interval
    }

    /// The Fréchet mean the maps were anchored at, when the fit started from
    /// points rather than caller-supplied maps.
    pub fn base_mean(&self) -> Option<&UnitVector> {
        self.base_mean.as_ref()
    }

    pub fn maps(&self) -> &[TransportMap] {
        &self.maps
    }

    pub fn mean_map(&self) -> &TransportMap {
        &self.mean_map
    }

    pub fn centered_gram(&self) -> &DMatrix<f64> {
        &self.centered_gram
    }

    pub fn weights(&self) -> &SpatialWeights {
        &self.weights
    }

    pub fn instrument(&self) -> &SparseMatrix {
        &self.instrument
    }

    pub fn options(&self) -> &FitOptions {
        &self.options
    }

    /// Gram matrix of the fitted residuals S(rho_hat) (q - q_bar), assembled
    /// from the centered Gram without materializing any residual map.
    pub fn residual_gram(&self) -> &DMatrix<f64> {
        self.residual_gram.get_or_init(|| {
            let rho = self.estimate;
            let w = self.weights.matrix();
            let wg = w.mul_dense(&self.centered_gram).expect("square system");
            let sg = &self.centered_gram - wg * rho;
            let wsgt = w.mul_dense(&sg.transpose()).expect("square system");
            let mut out = sg - wsgt.transpose() * rho;
            // Symmetrize away floating point drift.
            for i in 0..self.n {
                for j in (i + 1)..self.n {
                    let v = 0.5 * (out[(i, j)] + out[(j, i)]);
                    out[(i, j)] = v;
                    out[(j, i)] = v;
                }
            }
            out
        })
    }

    /// Residual Hilbert-Schmidt norms, read off the residual Gram diagonal.
    pub fn residual_norms(&self) -> Vec<f64> {
        let g = self.residual_gram();
        (0..self.n).map(|i| g[(i, i)].max(0.0).sqrt()).collect()
    }

    /// Materializes the residual maps themselves. Each residual concatenates
    /// the atoms of every map, so this costs quadratic memory in n; meant for
    /// diagnostics and small data, not for the estimation hot path.
    pub fn residuals(&self) -> Result<Vec<TransportMap>> {
        let rho = self.estimate;
        let nf = self.n as f64;
        let mut out = Vec::with_capacity(self.n);
        for i in 0..self.n {
            let mut acc = self.maps[i].clone();
            let (cols, vals) = self.weights.matrix().row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                acc = acc.plus(&self.maps[j].scaled(-rho * v))?;
            }
            let t = (1.0 - rho * self.weights.row_sum(i)) / nf;
            if t != 0.0 {
                for map in &self.maps {
                    acc = acc.plus(&map.scaled(-t))?;
                }
            }
            out.push(acc);
        }
        Ok(out)
    }

    /// Wald moment summaries of the residual Gram (lazy, cached).
    pub fn moment_estimates(&self) -> Result<&MomentEstimates> {
        if let Some(m) = self.moments.get() {
            return Ok(m);
        }
        let m = moment_estimates_from_gram(
            self.residual_gram(),
            self.options.pca_fraction,
            self.options.literal_cross_moment,
        )?;
        Ok(self.moments.get_or_init(|| m))
    }

    /// Dense inverse of I - rho_hat W (lazy, cached). Cubic in n.
    pub fn s_inverse(&self) -> Result<&DMatrix<f64>> {
        if let Some(m) = self.s_inv.get() {
            return Ok(m);
        }
        let m = self.weights.s_inverse(self.estimate)?;
        Ok(self.s_inv.get_or_init(|| m))
    }

    /// Wald test of no spatial dependence (rho = 0), compared against a
    /// chi-squared(1) upper tail. The residual scale parameter cancels
    /// between numerator and denominator, so the statistic is computed
    /// directly from the moment ratios.
    pub fn wald(&self) -> Result<WaldTest> {
        let moments = *self.moment_estimates()?;
        let p = &self.instrument;
        let p_sym = p.add(&p.transpose())?;
        let m = p_sym.matmul(self.weights.matrix())?;
        let trace = m.trace_product(self.s_inverse()?)?;
        let numerator = self.estimate * self.estimate * trace * trace;
        let denominator = moments.cross_ratio * p.trace_product_sparse(&p_sym)?
            + (moments.diag_ratio - 2.0 * moments.cross_ratio - 1.0) * p.diag_sum_of_squares();
        if !(denominator.is_finite() && denominator > 0.0) {
            return Err(Error::DegenerateTest(format!(
                "nonpositive variance proxy {denominator} in the Wald denominator"
            )));
        }
        let statistic = numerator / denominator;
        if !statistic.is_finite() {
            return Err(Error::DegenerateTest(format!(
                "non-finite Wald statistic {statistic}"
            )));
        }
        let chi = ChiSquared::new(1.0).expect("valid dof");
        let p_value = 1.0 - chi.cdf(statistic);
        Ok(WaldTest {
            statistic,
            p_value,
            moments,
        })
    }
}

/// Wald test output.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WaldTest {
    pub statistic: f64,
    pub p_value: f64,
    pub moments: MomentEstimates,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::weights::knn_random_weights;
    use approx::assert_relative_eq;
    use nalgebra::DVector;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    const IV: RhoInterval = RhoInterval {
        lo: -0.995,
        hi: 0.995,
    };

    fn poly(a: f64, b: f64, c: f64) -> GmmPolynomial {
        GmmPolynomial { a, b, c }
    }

    #[test]
    fn admissible_root_is_preferred_over_outside_root() {
        // roots 0.3 and 2.0: c(x - 0.3)(x - 2) = c x^2 - 2.3 c x + 0.6 c
        let (rho, sel) = minimize_quadratic_trace(poly(0.6, -2.3, 1.0), IV).unwrap();
        assert_relative_eq!(rho, 0.3, epsilon = 1e-12);
        match sel {
            RootSelection::QuadraticRoot {
                other,
                both_admissible,
            } => {
                assert_relative_eq!(other, 2.0, epsilon = 1e-12);
                assert!(!both_admissible);
            }
            _ => panic!("expected a quadratic root"),
        }
    }

    #[test]
    fn smaller_magnitude_root_wins_and_symmetric_tie_goes_nonnegative() {
        // roots -0.1 and 0.2
        let (rho, _) = minimize_quadratic_trace(poly(-0.02, -0.1, 1.0), IV).unwrap();
        assert_relative_eq!(rho, -0.1, epsilon = 1e-12);
        // roots +-0.4
        let (rho, sel) = minimize_quadratic_trace(poly(-0.16, 0.0, 1.0), IV).unwrap();
        assert_relative_eq!(rho, 0.4, epsilon = 1e-12);
        assert!(matches!(
            sel,
            RootSelection::QuadraticRoot {
                both_admissible: true,
                ..
            }
        ));
    }

    #[test]
    fn linear_and_degenerate_cases() {
        let (rho, sel) = minimize_quadratic_trace(poly(-0.5, 1.0, 0.0), IV).unwrap();
        assert_relative_eq!(rho, 0.5, epsilon = 1e-12);
        assert_eq!(sel, RootSelection::LinearRoot);
        // linear root outside the interval clamps to the boundary
        let (rho, sel) = minimize_quadratic_trace(poly(-2.0, 1.0, 0.0), IV).unwrap();
        assert_relative_eq!(rho, 0.995, epsilon = 1e-12);
        assert_eq!(sel, RootSelection::Vertex { clamped: true });
        assert!(matches!(
            minimize_quadratic_trace(poly(1.0, 0.0, 0.0), IV),
            Err(Error::Unidentified)
        ));
        assert!(matches!(
            minimize_quadratic_trace(poly(0.0, 0.0, 0.0), IV),
            Err(Error::Unidentified)
        ));
    }

    #[test]
    fn no_real_root_falls_back_to_the_vertex() {
        // x^2 + 0.25 has no real roots, vertex at 0
        let (rho, sel) = minimize_quadratic_trace(poly(0.25, 0.0, 1.0), IV).unwrap();
        assert_relative_eq!(rho, 0.0, epsilon = 1e-12);
        assert_eq!(sel, RootSelection::Vertex { clamped: false });
        // vertex at 2 gets clamped
        let (rho, sel) = minimize_quadratic_trace(poly(4.25, -4.0, 1.0), IV).unwrap();
        assert_relative_eq!(rho, 0.995, epsilon = 1e-12);
        assert_eq!(sel, RootSelection::Vertex { clamped: true });
    }

    #[test]
    fn real_roots_outside_interval_pick_the_better_endpoint() {
        // roots 1.2 and 1.5: minimum of the squared trace on the interval is
        // at the right endpoint, even though the vertex (1.35) clamps there
        // too; roots -3 and 2 put the squared-trace minimum at +0.995.
        let (rho, sel) = minimize_quadratic_trace(poly(1.8, -2.7, 1.0), IV).unwrap();
        assert_relative_eq!(rho, 0.995, epsilon = 1e-12);
        assert_eq!(sel, RootSelection::Vertex { clamped: true });
        let (rho, _) = minimize_quadratic_trace(poly(-6.0, 1.0, 1.0), IV).unwrap();
        assert_relative_eq!(rho, 0.995, epsilon = 1e-12);
    }

    #[test]
    fn analytic_minimizer_matches_a_fine_grid() {
        let mut rng = ChaCha12Rng::seed_from_u64(99);
        for _ in 0..200 {
            let p = poly(
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
            );
            let Ok((rho, _)) = minimize_quadratic_trace(p, IV) else {
                continue;
            };
            let mut best = f64::INFINITY;
            let mut arg = 0.0;
            let steps = 20_000;
            for s in 0..=steps {
                let x = IV.lo + (IV.hi - IV.lo) * s as f64 / steps as f64;
                let v = p.objective(x);
                if v < best {
                    best = v;
                    arg = x;
                }
            }
            // Either the same minimizer, or one at least as good: with two
            // admissible roots the tie-break may pick the one the grid did
            // not land on, but never a worse value than the grid resolution
            // allows.
            let close = (rho - arg).abs() < 2e-4;
            let at_least_as_good = p.objective(rho) <= best + 1e-9;
            assert!(
                close || at_least_as_good,
                "poly {p:?}: analytic {rho}, grid {arg}"
            );
        }
    }

    #[test]
    fn centered_gram_has_zero_marginals() {
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let raw = DMatrix::from_fn(7, 7, |i, j| {
            if i <= j {
                rng.gen_range(-1.0..1.0)
            } else {
                0.0
            }
        });
        let sym = &raw + raw.transpose();
        let g = center_gram(&sym);
        for i in 0..7 {
            assert_relative_eq!(g.row(i).sum(), 0.0, epsilon = 1e-12);
            assert_relative_eq!(g.column(i).sum(), 0.0, epsilon = 1e-12);
        }
    }

    fn random_unit(rng: &mut ChaCha12Rng, dim: usize) -> UnitVector {
        let v = DVector::from_fn(dim, |_, _| rng.gen_range(-1.0..1.0f64));
        UnitVector::normalized(v, 1.0).unwrap()
    }

    fn random_maps(rng: &mut ChaCha12Rng, n: usize, dim: usize, atoms: usize) -> Vec<TransportMap> {
        use crate::sphere::TransportAtom;
        (0..n)
            .map(|_| {
                let list: Vec<TransportAtom> = (0..atoms)
                    .map(|_| TransportAtom {
                        weight: rng.gen_range(-0.8..0.8),
                        za: random_unit(rng, dim),
                        zb: random_unit(rng, dim),
                    })
                    .collect();
                TransportMap::from_atoms(dim, 1.0, list).unwrap()
            })
            .collect()
    }

    #[test]
    fn identical_maps_yield_zero_gram_error() {
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let one = random_maps(&mut rng, 1, 4, 2).pop().unwrap();
        let maps = vec![one.clone(), one.clone(), one.clone(), one];
        let w = knn_random_weights(4, 2, 1).unwrap();
        assert!(matches!(
            fit_sar_transports(maps, &w, FitOptions::default()),
            Err(Error::ZeroGram)
        ));
    }

    #[test]
    fn fit_agrees_with_dense_brute_force() {
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        let maps = random_maps(&mut rng, 9, 5, 2);
        let w = knn_random_weights(9, 3, 17).unwrap();
        let fit = fit_sar_transports(maps.clone(), &w, FitOptions::default()).unwrap();
        // Dense oracle: centered Gram from explicit map differences, trace
        // objective evaluated on a fine grid.
        let mean = mean_transport(&maps).unwrap();
        let centered: Vec<TransportMap> = maps.iter().map(|m| m.minus(&mean).unwrap()).collect();
        let mut g = DMatrix::zeros(9, 9);
        for i in 0..9 {
            for j in 0..9 {
                g[(i, j)] = centered[i].hs_inner(&centered[j]).unwrap();
            }
        }
        assert_relative_eq!((fit.centered_gram() - &g).norm(), 0.0, epsilon = 1e-10);
        let wd = w.matrix().to_dense();
        let pd = wd.clone();
        let mut best = f64::INFINITY;
        let mut arg = 0.0;
        for s in 0..=39_800 {
            let rho = -0.995 + s as f64 * 5e-5;
            let sm = DMatrix::identity(9, 9) - &wd * rho;
            let f = (sm.transpose() * &pd * &sm * &g).trace();
            if f * f < best {
                best = f * f;
                arg = rho;
            }
        }
        assert!(
            (fit.estimate() - arg).abs() < 1e-4,
            "analytic {} vs grid {arg}",
            fit.estimate()
        );
    }

    #[test]
    fn residual_gram_matches_materialized_residuals() {
        let mut rng = ChaCha12Rng::seed_from_u64(23);
        let maps = random_maps(&mut rng, 8, 4, 2);
        let w = knn_random_weights(8, 3, 29).unwrap();
        let fit = fit_sar_transports(maps, &w, FitOptions::default()).unwrap();
        let res = fit.residuals().unwrap();
        let fast = fit.residual_gram();
        for i in 0..8 {
            for j in 0..8 {
                let direct = res[i].hs_inner(&res[j]).unwrap();
                assert_relative_eq!(fast[(i, j)], direct, epsilon = 1e-10);
            }
        }
        let norms = fit.residual_norms();
        for i in 0..8 {
            assert_relative_eq!(norms[i], res[i].hs_norm(), epsilon = 1e-10);
        }
    }

    #[test]
    fn diagonal_gram_moments_have_closed_form() {
        let k = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 2.0, 2.0]));
        let m = moment_estimates_from_gram(&k, None, false).unwrap();
        assert_relative_eq!(m.level, 2.0, epsilon = 1e-14);
        assert_relative_eq!(m.diag_second, 4.0, epsilon = 1e-14);
        assert_relative_eq!(m.cross_second, 0.0, epsilon = 1e-14);
        assert_relative_eq!(m.cross_ratio, 0.0, epsilon = 1e-14);
        assert_relative_eq!(m.diag_ratio, 1.0, epsilon = 1e-14);
        assert_eq!(m.retained_rank, None);
    }

    #[test]
    fn full_fraction_truncation_is_the_identity() {
        let mut rng = ChaCha12Rng::seed_from_u64(31);
        // Build a PSD matrix A A^T.
        let a = DMatrix::from_fn(6, 6, |_, _| rng.gen_range(-1.0..1.0));
        let k = &a * a.transpose();
        let full = moment_estimates_from_gram(&k, Some(1.0), false).unwrap();
        let none = moment_estimates_from_gram(&k, None, false).unwrap();
        assert_relative_eq!(full.level, none.level, epsilon = 1e-10);
        assert_relative_eq!(full.diag_second, none.diag_second, epsilon = 1e-10);
        assert_relative_eq!(full.cross_second, none.cross_second, epsilon = 1e-10);
        assert_eq!(full.retained_rank, Some(6));
    }

    #[test]
    fn truncation_keeps_the_dominant_eigenspace() {
        // Rank-one plus small noise: fraction 0.9 keeps one component.
        let u = DVector::from_vec(vec![0.5, 0.5, 0.5, 0.5]);
        let mut k: DMatrix<f64> = 8.0 * &u * u.transpose();
        for i in 0..4 {
            k[(i, i)] += 0.01;
        }
        let m = moment_estimates_from_gram(&k, Some(0.9), false).unwrap();
        assert_eq!(m.retained_rank, Some(1));
        // The retained component reproduces the rank-one level 8/4 = 2 plus
        // a sliver of the noise.
        assert!((m.level - 2.0).abs() < 0.02);
    }

    #[test]
    fn wald_on_generic_maps_is_finite_with_valid_p_value() {
        let mut rng = ChaCha12Rng::seed_from_u64(37);
        let maps = random_maps(&mut rng, 12, 5, 1);
        let w = knn_random_weights(12, 4, 41).unwrap();
        let fit = fit_sar_transports(maps, &w, FitOptions::default()).unwrap();
        let test = fit.wald().unwrap();
        assert!(test.statistic >= 0.0);
        assert!((0.0..=1.0).contains(&test.p_value));
        // Scale cancellation: rescaling every map by 3 changes nothing.
        let scaled: Vec<TransportMap> = fit.maps().iter().map(|m| m.scaled(3.0)).collect();
        let fit2 = fit_sar_transports(scaled, &w, FitOptions::default()).unwrap();
        let test2 = fit2.wald().unwrap();
        assert_relative_eq!(fit.estimate(), fit2.estimate(), epsilon = 1e-9);
        assert_relative_eq!(test.statistic, test2.statistic, epsilon = 1e-7);
    }
}
