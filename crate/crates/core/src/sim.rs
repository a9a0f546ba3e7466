//! Data generators and Monte Carlo experiment drivers.
//!
//! Noise is von Mises-Fisher, sampled by Wood's rejection algorithm. The
//! lag generator draws tangent noise at a common base point, mixes it through
//! (I - rho W)^{-1}, and maps each mixed tangent back to the sphere; because
//! every generated map shares the base point, the transport representation of
//! each observation is exactly one canonical rotation atom and no numerical
//! log/exp round trip is involved.
//!
//! Every experiment consumes one ChaCha stream per replicate (same seed,
//! stream = replicate index), so runs are reproducible bit for bit and
//! replicates are independent regardless of how many are requested.

use std::collections::BTreeMap;
use std::io::Write as IoWrite;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Beta, Distribution, StandardNormal};

use crate::bootstrap::{bootstrap_null_test, BootstrapOptions};
use crate::conformal::{predict_point, ConformalOptions, SplitConformal};
use crate::error::{Error, Result};
use crate::gmm::{fit_sar_points, fit_sar_transports, FitOptions, SarFit};
use crate::sphere::{
    exp_map, geodesic_distance, log_map, parallel_transport, TransportAtom, TransportMap,
    UnitVector,
};
use crate::weights::{admissible_rho_interval, knn_random_weights, SpatialWeights,
    DEFAULT_RHO_MARGIN};

/// One draw from the von Mises-Fisher distribution around `mean`.
///
/// `kappa = 0` falls back to the uniform distribution. Sampling happens in
/// orthonormal coordinates, so quadrature-grid spheres work transparently.
pub fn sample_vmf<R: Rng + ?Sized>(
    rng: &mut R,
    mean: &UnitVector,
    kappa: f64,
) -> Result<UnitVector> {
    if !(kappa.is_finite() && kappa >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "concentration must be finite and nonnegative, got {kappa}"
        )));
    }
    let m = mean.dim();
    let root_step = mean.step().sqrt();
    let mu: DVector<f64> = mean.coords() * root_step;
    if kappa == 0.0 {
        let raw = DVector::from_fn(m, |_, _| rng.sample::<f64, _>(StandardNormal));
        return UnitVector::normalized(raw / root_step, mean.step());
    }
    let d = (m - 1) as f64;
    let b = (-2.0 * kappa + (4.0 * kappa * kappa + d * d).sqrt()) / d;
    let x0 = (1.0 - b) / (1.0 + b);
    let c = kappa * x0 + d * (1.0 - x0 * x0).ln();
    let beta = Beta::new(d / 2.0, d / 2.0).map_err(|e| {
        Error::InvalidArgument(format!("invalid Beta parameters for dimension {m}: {e}"))
    })?;
    let w = loop {
        let z: f64 = beta.sample(rng);
        let u: f64 = rng.gen_range(0.0..1.0);
        let w = (1.0 - (1.0 + b) * z) / (1.0 - (1.0 - b) * z);
        if kappa * w + d * (1.0 - x0 * w).ln() - c >= u.ln() {
            break w;
        }
    };
    // Uniform tangential direction: project a normal draw off the mean.
    let v = loop {
        let raw = DVector::from_fn(m, |_, _| rng.sample::<f64, _>(StandardNormal));
        let proj = &raw - &mu * mu.dot(&raw);
        let norm = proj.norm();
        if norm > 1e-12 {
            break proj / norm;
        }
    };
    let coords = (mu * w + v * (1.0 - w * w).max(0.0).sqrt()) / root_step;
    UnitVector::normalized(coords, mean.step())
}

/// Von Mises-Fisher draw conditioned on the open hemisphere around `mean`:
/// rejected until the geodesic distance stays below pi/2.
pub fn sample_vmf_hemisphere<R: Rng + ?Sized>(
    rng: &mut R,
    mean: &UnitVector,
    kappa: f64,
) -> Result<UnitVector> {
    loop {
        let y = sample_vmf(rng, mean, kappa)?;
        if geodesic_distance(&y, mean)? < std::f64::consts::FRAC_PI_2 {
            return Ok(y);
        }
    }
}

/// Generator configuration for the unconditional lag model.
#[derive(Debug, Clone)]
pub struct SimConfig {
    /// Number of sites.
    pub n: usize,
    /// Ambient coordinate count m (the sphere S^{m-1}).
    pub dim: usize,
    /// True lag parameter.
    pub rho: f64,
    /// Noise concentration.
    pub kappa: f64,
    /// Neighbours per site in the random weight matrix.
    pub k_neighbours: usize,
    /// Condition noise draws to the hemisphere around the base point.
    pub hemisphere: bool,
    /// Master seed; replicates branch deterministic streams off it.
    pub seed: u64,
}

impl SimConfig {
    pub fn new(n: usize, dim: usize, rho: f64, seed: u64) -> Self {
        Self {
            n,
            dim,
            rho,
            kappa: 1.0,
            k_neighbours: 10,
            hemisphere: false,
            seed,
        }
    }
}

/// One generated dataset: observations, their exact transport maps from the
/// base point, the raw mixed tangents, and the weight matrix.
pub struct PssarDataset {
    pub base: UnitVector,
    pub points: Vec<UnitVector>,
    pub maps: Vec<TransportMap>,
    pub tangents: DMatrix<f64>,
    pub weights: SpatialWeights,
}

fn replicate_rng(seed: u64, replicate: u64) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(replicate);
    rng
}

/// The common base point (1, ..., 1)/sqrt(m).
pub fn canonical_base(dim: usize) -> UnitVector {
    UnitVector::normalized(DVector::from_element(dim, 1.0), 1.0)
        .expect("constant vector normalizes")
}

fn tangent_noise_matrix<R: Rng + ?Sized>(
    rng: &mut R,
    base: &UnitVector,
    n: usize,
    kappa: f64,
    hemisphere: bool,
) -> Result<DMatrix<f64>> {
    let m = base.dim();
    let mut e = DMatrix::zeros(n, m);
    for i in 0..n {
        let draw = if hemisphere {
            sample_vmf_hemisphere(rng, base, kappa)?
        } else {
            sample_vmf(rng, base, kappa)?
        };
        let t = log_map(base, &draw)?;
        e.row_mut(i).copy_from(&t.transpose());
    }
    Ok(e)
}

fn canonical_map(base: &UnitVector, tangent: &DVector<f64>) -> TransportMap {
    let theta = tangent.norm() * base.step().sqrt();
    if theta < 1e-14 {
        return TransportMap::zero(base.dim(), base.step());
    }
    let dir = UnitVector::new(tangent * (1.0 / theta), base.step()).unwrap_or_else(|_| {
        UnitVector::normalized(tangent.clone(), base.step()).expect("nonzero tangent")
    });
    TransportMap::from_atoms(
        base.dim(),
        base.step(),
        vec![TransportAtom {
            weight: theta,
            za: base.clone(),
            zb: dir,
        }],
    )
    .expect("canonical atom is well formed")
}

/// Generates one dataset from the lag model at `cfg.rho`.
pub fn generate_pssar_dataset(cfg: &SimConfig, replicate: u64) -> Result<PssarDataset> {
    if cfg.dim < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 coordinates, got {}",
            cfg.dim
        )));
    }
    let mut rng = replicate_rng(cfg.seed, replicate);
    let w_seed: u64 = rng.gen();
    let weights = knn_random_weights(cfg.n, cfg.k_neighbours, w_seed)?;
    let interval = admissible_rho_interval(&weights, DEFAULT_RHO_MARGIN);
    if !interval.contains(cfg.rho) {
        return Err(Error::InvalidArgument(format!(
            "rho {} outside the admissible interval [{}, {}]",
            cfg.rho, interval.lo, interval.hi
        )));
    }
    let base = canonical_base(cfg.dim);
    let e = tangent_noise_matrix(&mut rng, &base, cfg.n, cfg.kappa, cfg.hemisphere)?;
    let tangents = if cfg.rho == 0.0 {
        e
    } else {
        weights.solve_s(cfg.rho, &e)?
    };
    let mut points = Vec::with_capacity(cfg.n);
    let mut maps = Vec::with_capacity(cfg.n);
    for i in 0..cfg.n {
        let v = tangents.row(i).transpose();
        points.push(exp_map(&base, &v)?);
        maps.push(canonical_map(&base, &v));
    }
    Ok(PssarDataset {
        base,
        points,
        maps,
        tangents,
        weights,
    })
}

/// Generator configuration for the covariate-indexed model.
#[derive(Debug, Clone)]
pub struct SrmsarSimConfig {
    pub n: usize,
    pub dim: usize,
    pub lambda: f64,
    pub kappa: f64,
    pub k_neighbours: usize,
    /// Tangent displacement per unit covariate, one entry per covariate.
    pub effects: Vec<f64>,
    pub hemisphere: bool,
    pub seed: u64,
}

impl SrmsarSimConfig {
    pub fn new(n: usize, dim: usize, lambda: f64, seed: u64) -> Self {
        Self {
            n,
            dim,
            lambda,
            kappa: 1.0,
            k_neighbours: 10,
            effects: vec![0.15, 0.15],
            hemisphere: false,
            seed,
        }
    }
}

/// One generated covariate-indexed dataset.
pub struct SrmsarDataset {
    pub base: UnitVector,
    pub points: Vec<UnitVector>,
    pub covariates: DMatrix<f64>,
    pub means: Vec<UnitVector>,
    pub weights: SpatialWeights,
}

/// Orthonormal tangent directions at `base`, built from the first axes.
fn tangent_frame(base: &UnitVector, count: usize) -> Result<Vec<DVector<f64>>> {
    let m = base.dim();
    if count + 1 > m {
        return Err(Error::InvalidArgument(format!(
            "cannot build {count} tangent directions on a sphere in {m} coordinates"
        )));
    }
    let step = base.step();
    let mut frame: Vec<DVector<f64>> = Vec::with_capacity(count);
    let mut axis = 0usize;
    while frame.len() < count {
        if axis >= m {
            return Err(Error::InvalidArgument(
                "axis vectors exhausted while building the tangent frame".into(),
            ));
        }
        let mut v = DVector::zeros(m);
        v[axis] = 1.0;
        axis += 1;
        // Project off the base point and the frame built so far.
        let inner_base = step * base.coords().dot(&v);
        v -= base.coords() * inner_base;
        for t in &frame {
            let inner = step * t.dot(&v);
            v -= t * inner;
        }
        let norm = (step * v.norm_squared()).sqrt();
        if norm < 1e-8 {
            continue;
        }
        frame.push(v / norm);
    }
    Ok(frame)
}

/// Generates one dataset from the covariate-indexed model at `cfg.lambda`:
/// conditional means move along a tangent frame with the covariates, and the
/// spatially mixed deviations ride to each mean by parallel transport.
pub fn generate_srmsar_dataset(cfg: &SrmsarSimConfig, replicate: u64) -> Result<SrmsarDataset> {
    let p = cfg.effects.len();
    if p == 0 {
        return Err(Error::InvalidArgument(
            "need at least one covariate effect".into(),
        ));
    }
    let mut rng = replicate_rng(cfg.seed, replicate);
    let w_seed: u64 = rng.gen();
    let weights = knn_random_weights(cfg.n, cfg.k_neighbours, w_seed)?;
    let interval = admissible_rho_interval(&weights, DEFAULT_RHO_MARGIN);
    if !interval.contains(cfg.lambda) {
        return Err(Error::InvalidArgument(format!(
            "lambda {} outside the admissible interval [{}, {}]",
            cfg.lambda, interval.lo, interval.hi
        )));
    }
    let base = canonical_base(cfg.dim);
    let frame = tangent_frame(&base, p)?;
    let covariates = DMatrix::from_fn(cfg.n, p, |_, _| rng.gen_range(-1.0..1.0));
    let e = tangent_noise_matrix(&mut rng, &base, cfg.n, cfg.kappa, cfg.hemisphere)?;
    let mixed = if cfg.lambda == 0.0 {
        e
    } else {
        weights.solve_s(cfg.lambda, &e)?
    };
    let mut points = Vec::with_capacity(cfg.n);
    let mut means = Vec::with_capacity(cfg.n);
    for i in 0..cfg.n {
        let mut shift = DVector::zeros(cfg.dim);
        for (d, t) in frame.iter().enumerate() {
            shift += t * (cfg.effects[d] * covariates[(i, d)]);
        }
        let mu = exp_map(&base, &shift)?;
        let v = mixed.row(i).transpose();
        let xi = parallel_transport(&base, &mu, &v)?;
        points.push(exp_map(&mu, &xi)?);
        means.push(mu);
    }
    Ok(SrmsarDataset {
        base,
        points,
        covariates,
        means,
        weights,
    })
}

/// Estimation experiment configuration.
#[derive(Debug, Clone)]
pub struct EstimationConfig {
    pub sim: SimConfig,
    pub replicates: usize,
    /// When true, each replicate runs the full pipeline from the observed
    /// points (Fréchet mean included); when false, the estimator consumes the
    /// exact generated maps, isolating lag estimation from mean estimation.
    pub fit_from_observations: bool,
    pub fit_options: FitOptions,
}

/// Monte Carlo summary of repeated lag estimation. The spread uses the
/// 1/T convention, so rmse^2 = sd^2 + bias^2 holds exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimationSummary {
    pub replicates: usize,
    pub mean_estimate: f64,
    pub bias: f64,
    pub sd: f64,
    pub rmse: f64,
    /// Root mean square of the bias-corrected estimates around the truth,
    /// sqrt(sd^2 + truth^2). Reference Monte Carlo tables for this design
    /// report their error column on this scale.
    pub debiased_rmse: f64,
    pub estimates: Vec<f64>,
}

pub fn run_estimation_experiment(cfg: &EstimationConfig) -> Result<EstimationSummary> {
    if cfg.replicates == 0 {
        return Err(Error::InvalidArgument("need at least one replicate".into()));
    }
    let mut estimates = Vec::with_capacity(cfg.replicates);
    for r in 0..cfg.replicates {
        let data = generate_pssar_dataset(&cfg.sim, r as u64)?;
        let fit = if cfg.fit_from_observations {
            fit_sar_points(&data.points, &data.weights, cfg.fit_options.clone())?
        } else {
            fit_sar_transports(data.maps, &data.weights, cfg.fit_options.clone())?
        };
        estimates.push(fit.estimate());
    }
    Ok(summarize_estimates(estimates, cfg.sim.rho))
}

fn summarize_estimates(estimates: Vec<f64>, truth: f64) -> EstimationSummary {
    let t = estimates.len() as f64;
    let mean = estimates.iter().sum::<f64>() / t;
    let bias = mean - truth;
    let sd = (estimates.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / t).sqrt();
    let rmse = (estimates.iter().map(|e| (e - truth) * (e - truth)).sum::<f64>() / t).sqrt();
    EstimationSummary {
        replicates: estimates.len(),
        mean_estimate: mean,
        bias,
        sd,
        rmse,
        debiased_rmse: (sd * sd + truth * truth).sqrt(),
        estimates,
    }
}

/// Test experiment configuration: size (rho = 0) or power (rho != 0) of the
/// bootstrap and Wald tests.
#[derive(Debug, Clone)]
pub struct PowerConfig {
    pub sim: SimConfig,
    pub replicates: usize,
    pub alpha: f64,
    pub bootstrap: BootstrapOptions,
    pub fit_options: FitOptions,
    /// Skip the Wald test (it needs a dense inverse per replicate, which
    /// dominates the runtime for large n).
    pub wald: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PowerSummary {
    pub replicates: usize,
    pub bootstrap_rejections: usize,
    pub bootstrap_rate: f64,
    pub wald_rejections: usize,
    pub wald_rate: f64,
}

pub fn run_power_experiment(cfg: &PowerConfig) -> Result<PowerSummary> {
    if cfg.replicates == 0 {
        return Err(Error::InvalidArgument("need at least one replicate".into()));
    }
    let mut boot_rej = 0usize;
    let mut wald_rej = 0usize;
    for r in 0..cfg.replicates {
        let data = generate_pssar_dataset(&cfg.sim, r as u64)?;
        let fit = fit_sar_transports(data.maps, &data.weights, cfg.fit_options.clone())?;
        let boot_opts = BootstrapOptions {
            alpha: cfg.alpha,
            seed: cfg.bootstrap.seed ^ (0x9E37_79B9_7F4A_7C15u64.wrapping_mul(r as u64 + 1)),
            ..cfg.bootstrap
        };
        let test = bootstrap_null_test(&fit, &boot_opts)?;
        if test.reject {
            boot_rej += 1;
        }
        if cfg.wald {
            let wt = fit.wald()?;
            if wt.p_value < cfg.alpha {
                wald_rej += 1;
            }
        }
    }
    let t = cfg.replicates as f64;
    Ok(PowerSummary {
        replicates: cfg.replicates,
        bootstrap_rejections: boot_rej,
        bootstrap_rate: boot_rej as f64 / t,
        wald_rejections: wald_rej,
        wald_rate: wald_rej as f64 / t,
    })
}

/// Prediction experiment configuration: hold out the last site, fit and
/// calibrate on the rest, predict the held-out observation.
#[derive(Debug, Clone)]
pub struct PredictionConfig {
    pub sim: SimConfig,
    pub replicates: usize,
    pub alphas: Vec<f64>,
    pub conformal: ConformalOptions,
    pub fit_options: FitOptions,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionLevel {
    pub alpha: f64,
    pub coverage: f64,
    pub mean_width: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionSummary {
    pub replicates: usize,
    /// Mean geodesic distance between the point prediction and the held-out
    /// observation.
    pub ape: f64,
    pub levels: Vec<PredictionLevel>,
}

pub fn run_prediction_experiment(cfg: &PredictionConfig) -> Result<PredictionSummary> {
    if cfg.replicates == 0 {
        return Err(Error::InvalidArgument("need at least one replicate".into()));
    }
    if cfg.alphas.is_empty() {
        return Err(Error::InvalidArgument("need at least one level".into()));
    }
    let mut ape_sum = 0.0;
    let mut covered = vec![0usize; cfg.alphas.len()];
    let mut widths = vec![0.0f64; cfg.alphas.len()];
    for r in 0..cfg.replicates {
        let data = generate_pssar_dataset(&cfg.sim, r as u64)?;
        let held = cfg.sim.n - 1;
        let observed: Vec<usize> = (0..held).collect();
        let obs_points: Vec<UnitVector> = data.points[..held].to_vec();
        let w_obs = data.weights.restrict(&observed)?;
        // The held-out row references only observed sites (no self loops),
        // so it passes through unchanged.
        let (cols, vals) = data.weights.matrix().row(held);
        let row: Vec<(usize, f64)> = cols.iter().copied().zip(vals.iter().copied()).collect();

        let fit = fit_sar_points(&obs_points, &w_obs, cfg.fit_options.clone())?;
        let y_hat = predict_point(&fit, &row)?;
        ape_sum += geodesic_distance(&y_hat, &data.points[held])?;

        let conf_opts = ConformalOptions {
            seed: cfg.conformal.seed ^ (0xA54F_F53A_5F1D_36F1u64.wrapping_mul(r as u64 + 1)),
            fit_options: cfg.fit_options.clone(),
            ..cfg.conformal.clone()
        };
        let calibrated = SplitConformal::calibrate(&obs_points, &w_obs, &conf_opts)?;
        for (ai, &alpha) in cfg.alphas.iter().enumerate() {
            let set = calibrated.set_for_row_at(&row, alpha)?;
            if set.contains(&data.points[held])? {
                covered[ai] += 1;
            }
            widths[ai] += set.radius;
        }
    }
    let t = cfg.replicates as f64;
    let levels = cfg
        .alphas
        .iter()
        .enumerate()
        .map(|(ai, &alpha)| PredictionLevel {
            alpha,
            coverage: covered[ai] as f64 / t,
            mean_width: widths[ai] / t,
        })
        .collect();
    Ok(PredictionSummary {
        replicates: cfg.replicates,
        ape: ape_sum / t,
        levels,
    })
}

/// A (row, metric) -> value table with stable ordering and exact decimal
/// round-trip serialization.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsTable {
    cells: BTreeMap<(String, String), f64>,
}

impl MetricsTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(&mut self, row: &str, metric: &str, value: f64) {
        self.cells
            .insert((row.to_string(), metric.to_string()), value);
    }

    pub fn get(&self, row: &str, metric: &str) -> Option<f64> {
        self.cells
            .get(&(row.to_string(), metric.to_string()))
            .copied()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str, f64)> + '_ {
        self.cells
            .iter()
            .map(|((r, m), v)| (r.as_str(), m.as_str(), *v))
    }

    /// Long-format CSV (`row,metric,value`). Values print with Rust's
    /// shortest-round-trip float formatting, so re-reading reproduces the
    /// exact bits.
    pub fn write_csv<W: IoWrite>(&self, out: &mut W) -> std::io::Result<()> {
        writeln!(out, "row,metric,value")?;
        for ((row, metric), value) in &self.cells {
            writeln!(out, "{row},{metric},{value}")?;
        }
        Ok(())
    }

    pub fn add_estimation(&mut self, label: &str, s: &EstimationSummary) {
        self.set(label, "replicates", s.replicates as f64);
        self.set(label, "mean_estimate", s.mean_estimate);
        self.set(label, "bias", s.bias);
        self.set(label, "sd", s.sd);
        self.set(label, "rmse", s.rmse);
        self.set(label, "debiased_rmse", s.debiased_rmse);
    }

    pub fn add_power(&mut self, label: &str, s: &PowerSummary) {
        self.set(label, "replicates", s.replicates as f64);
        self.set(label, "bootstrap_rate", s.bootstrap_rate);
        self.set(label, "wald_rate", s.wald_rate);
    }

    pub fn add_prediction(&mut self, label: &str, s: &PredictionSummary) {
        self.set(label, "replicates", s.replicates as f64);
        self.set(label, "ape", s.ape);
        for level in &s.levels {
            self.set(
                label,
                &format!("coverage_{:.2}", 1.0 - level.alpha),
                level.coverage,
            );
            self.set(
                label,
                &format!("width_{:.2}", 1.0 - level.alpha),
                level.mean_width,
            );
        }
    }
}

/// Estimation preset mirroring the headline Monte Carlo table: 10 random
/// neighbours per site, unit concentration noise, estimation from the exact
/// generated maps.
pub fn estimation_preset(n: usize, dim: usize, rho: f64, seed: u64) -> EstimationConfig {
    EstimationConfig {
        sim: SimConfig::new(n, dim, rho, seed),
        replicates: 200,
        fit_from_observations: false,
        fit_options: FitOptions::default(),
    }
}

/// Test-calibration preset (bootstrap size and power runs).
pub fn power_preset(n: usize, dim: usize, rho: f64, seed: u64) -> PowerConfig {
    PowerConfig {
        sim: SimConfig::new(n, dim, rho, seed),
        replicates: 100,
        alpha: 0.05,
        bootstrap: BootstrapOptions {
            replicates: 200,
            ..BootstrapOptions::default()
        },
        fit_options: FitOptions::default(),
        wald: true,
    }
}

/// Prediction preset: the neighbour count scales with n (10 up to 200 sites,
/// 20 up to 500, 30 beyond), moderate spatial signal, hemisphere-conditioned
/// noise.
pub fn prediction_preset(n: usize, dim: usize, seed: u64) -> PredictionConfig {
    let k = if n <= 200 {
        10
    } else if n <= 500 {
        20
    } else {
        30
    };
    PredictionConfig {
        sim: SimConfig {
            k_neighbours: k,
            hemisphere: true,
            ..SimConfig::new(n, dim, 0.4, seed)
        },
        replicates: 200,
        alphas: vec![0.05, 0.10, 0.20],
        conformal: ConformalOptions::default(),
        fit_options: FitOptions::default(),
    }
}

/// Fits one generated dataset end to end; exposed for determinism checks.
pub fn fit_one_replicate(cfg: &SimConfig, replicate: u64) -> Result<SarFit> {
    let data = generate_pssar_dataset(cfg, replicate)?;
    fit_sar_transports(data.maps, &data.weights, FitOptions::default())
}
