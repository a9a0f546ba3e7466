//! Subcommand implementations.

use std::path::Path;

use serde::Serialize;

use spheresar::bootstrap::{bootstrap_null_test, BootstrapOptions};
use spheresar::conformal::{ConformalOptions, SplitConformal};
use spheresar::gmm::{fit_sar_points, FitOptions, RootSelection, SarFit};
use spheresar::regression::{fit_srmsar, CovariateTable, RegressionOptions};
use spheresar::sim;
use spheresar::sphere::{geodesic_distance, UnitVector};
use spheresar::weights::SpatialWeights;

use crate::fail::{CliResult, Failure};
use crate::io::{self, ColumnChoice, DataKind, Observations};
use crate::model::ModelFile;
use crate::{ConformalArgs, DataArgs, FitArgs, MomentArgs, PredictArgs, Preset, SimulateArgs,
    Space, TestArgs};

fn fit_options(moments: &MomentArgs) -> CliResult<FitOptions> {
    if !moments.no_pca && !(moments.pca_fraction > 0.0 && moments.pca_fraction <= 1.0) {
        return Err(Failure::Config(format!(
            "--pca-fraction must lie in (0, 1], got {}",
            moments.pca_fraction
        )));
    }
    Ok(FitOptions {
        pca_fraction: if moments.no_pca {
            None
        } else {
            Some(moments.pca_fraction)
        },
        literal_cross_moment: moments.literal_cross_moment,
        ..FitOptions::default()
    })
}

fn check_alpha(alpha: f64) -> CliResult<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Failure::Config(format!(
            "--alpha must lie in (0, 1), got {alpha}"
        )));
    }
    Ok(())
}

struct LoadedData {
    obs: Observations,
    weights: SpatialWeights,
    covariates: Option<(CovariateTable, Vec<String>)>,
}

fn load_data(args: &DataArgs) -> CliResult<LoadedData> {
    let obs = io::read_observations(&args.data, args.kind)?;
    let weights = io::read_weights(&args.weights, obs.points.len(), !args.no_normalize)?;
    let covariates = match &args.covariates {
        None => {
            if !args.covariate_columns.is_empty() || !args.categorical.is_empty() {
                return Err(Failure::Config(
                    "--covariate-columns/--categorical need --covariates".into(),
                ));
            }
            None
        }
        Some(path) => {
            if !(args.ridge >= 0.0 && args.ridge.is_finite()) {
                return Err(Failure::Config(format!(
                    "--ridge must be finite and nonnegative, got {}",
                    args.ridge
                )));
            }
            let choice = ColumnChoice {
                columns: if args.covariate_columns.is_empty() {
                    None
                } else {
                    Some(args.covariate_columns.clone())
                },
                categorical: args.categorical.clone(),
            };
            let (mat, names) = io::read_covariates(path, &choice)?;
            if mat.nrows() != obs.points.len() {
                return Err(Failure::Io(format!(
                    "{}: {} covariate rows for {} observations",
                    path.display(),
                    mat.nrows(),
                    obs.points.len()
                )));
            }
            let table = CovariateTable::new(mat, args.ridge).map_err(Failure::from)?;
            Some((table, names))
        }
    };
    Ok(LoadedData {
        obs,
        weights,
        covariates,
    })
}

/// Fits either model from loaded data. Returns the lag fit (the inner fit
/// for the covariate-indexed model), its name, and the encoded covariate
/// column names when present.
fn run_fit(data: LoadedData, opts: FitOptions) -> CliResult<(SarFit, &'static str, Vec<String>)> {
    match data.covariates {
        None => {
            let fit =
                fit_sar_points(&data.obs.points, &data.weights, opts).map_err(Failure::from)?;
            Ok((fit, "lag", Vec::new()))
        }
        Some((table, names)) => {
            let reg_opts = RegressionOptions {
                fit: opts,
                ..RegressionOptions::default()
            };
            let sfit = fit_srmsar(&data.obs.points, table, &data.weights, reg_opts)
                .map_err(Failure::from)?;
            let (fit, ..) = sfit.into_parts();
            Ok((fit, "covariate-lag", names))
        }
    }
}

fn selection_line(sel: RootSelection) -> String {
    match sel {
        RootSelection::QuadraticRoot {
            other,
            both_admissible,
        } => {
            if both_admissible {
                format!("quadratic root (alternative admissible root {other}; smaller magnitude kept)")
            } else {
                format!("quadratic root (alternative root {other} outside the interval)")
            }
        }
        RootSelection::LinearRoot => "linear root (quadratic coefficient vanished)".into(),
        RootSelection::Vertex { clamped: true } => {
            "interval endpoint (no admissible root of the trace)".into()
        }
        RootSelection::Vertex { clamped: false } => {
            "objective vertex (trace has no real root)".into()
        }
    }
}

fn print_fit_report(fit: &SarFit, model: &str, kind: DataKind, dim: usize, covariate_names: &[String]) {
    println!("model: {model}");
    println!("sites: {}, coordinates: {dim} ({})", fit.n(), kind.name());
    if !covariate_names.is_empty() {
        println!("covariates: {}", covariate_names.join(", "));
    }
    println!("estimate: {}", fit.estimate());
    let p = fit.polynomial();
    println!("objective trace: {} + {} rho + {} rho^2", p.a, p.b, p.c);
    println!("selected: {}", selection_line(fit.selection()));
    let iv = fit.interval();
    println!("interval: [{}, {}]", iv.lo, iv.hi);
    let mut norms = fit.residual_norms();
    norms.sort_by(|a, b| a.total_cmp(b));
    if !norms.is_empty() {
        println!(
            "residual norms: min {}, median {}, max {}",
            norms[0],
            norms[norms.len() / 2],
            norms[norms.len() - 1]
        );
    }
    match fit.moment_estimates() {
        Ok(m) => {
            println!(
                "moments: level {}, diag second {}, cross second {}, cross ratio {}, diag ratio {}{}",
                m.level,
                m.diag_second,
                m.cross_second,
                m.cross_ratio,
                m.diag_ratio,
                match m.retained_rank {
                    Some(r) => format!(", retained rank {r}"),
                    None => String::new(),
                }
            );
        }
        Err(e) => println!("moments: unavailable ({e})"),
    }
    match fit.wald() {
        Ok(w) => println!("wald: statistic {}, p-value {}", w.statistic, w.p_value),
        Err(e) => println!("wald: unavailable ({e})"),
    }
}

pub fn fit(args: &FitArgs) -> CliResult<()> {
    let opts = fit_options(&args.moments)?;
    let data = load_data(&args.data)?;
    let kind = data.obs.kind;
    let step = data.obs.step;
    let dim = data.obs.dim;
    let (fit, model, names) = run_fit(data, opts)?;
    print_fit_report(&fit, model, kind, dim, &names);
    if let Some(path) = &args.report {
        let mut out = String::from("site,residual_norm\n");
        for (i, r) in fit.residual_norms().iter().enumerate() {
            out.push_str(&format!("{i},{r}\n"));
        }
        std::fs::write(path, out).map_err(|e| Failure::io(path, e))?;
    }
    if let Some(path) = &args.model_out {
        ModelFile::from_fit(&fit, model, kind, step, dim).save(path)?;
        println!("model written to {}", path.display());
    }
    Ok(())
}

pub fn test(args: &TestArgs) -> CliResult<()> {
    check_alpha(args.alpha)?;
    if args.replicates == 0 {
        return Err(Failure::Config("need at least one bootstrap replicate".into()));
    }
    let opts = fit_options(&args.moments)?;
    let data = load_data(&args.data)?;
    let (fit, model, _) = run_fit(data, opts)?;
    println!("model: {model}");
    println!("estimate: {}", fit.estimate());
    let mut metrics = sim::MetricsTable::new();
    match fit.wald() {
        Ok(w) => {
            println!(
                "wald: statistic {}, p-value {}, reject at {}: {}",
                w.statistic,
                w.p_value,
                args.alpha,
                w.p_value < args.alpha
            );
            metrics.set("wald", "statistic", w.statistic);
            metrics.set("wald", "p_value", w.p_value);
            metrics.set("wald", "reject", f64::from(u8::from(w.p_value < args.alpha)));
        }
        // A degenerate Wald statistic is an outcome, not a failure; the
        // bootstrap decision below still stands on its own.
        Err(e) => println!("wald: unavailable ({e})"),
    }
    let boot = bootstrap_null_test(
        &fit,
        &BootstrapOptions {
            replicates: args.replicates,
            alpha: args.alpha,
            seed: args.seed,
            ..BootstrapOptions::default()
        },
    )
    .map_err(Failure::from)?;
    println!(
        "bootstrap: B {}, failures {}, null interval [{}, {}], reject: {}, p-value {}",
        args.replicates, boot.failures, boot.lower, boot.upper, boot.reject, boot.p_value
    );
    metrics.set("bootstrap", "estimate", boot.estimate);
    metrics.set("bootstrap", "lower", boot.lower);
    metrics.set("bootstrap", "upper", boot.upper);
    metrics.set("bootstrap", "p_value", boot.p_value);
    metrics.set("bootstrap", "reject", f64::from(u8::from(boot.reject)));
    metrics.set("bootstrap", "failures", boot.failures as f64);
    if let Some(path) = &args.report {
        io::emit_metrics(&metrics, Some(path))?;
    }
    Ok(())
}

/// Per-prediction error columns: geodesic angle always, Jensen-Shannon
/// divergence additionally for densities.
struct ErrorReport {
    angles: Vec<f64>,
    js: Option<Vec<f64>>,
}

fn score_predictions(
    predictions: &[UnitVector],
    truth: &[UnitVector],
    kind: DataKind,
) -> CliResult<ErrorReport> {
    if predictions.len() != truth.len() {
        return Err(Failure::Config(format!(
            "{} predictions scored against {} true observations",
            predictions.len(),
            truth.len()
        )));
    }
    let mut angles = Vec::with_capacity(predictions.len());
    for (p, t) in predictions.iter().zip(truth) {
        angles.push(geodesic_distance(p, t).map_err(Failure::from)?);
    }
    let js = if kind == DataKind::Density {
        let mut out = Vec::with_capacity(predictions.len());
        for (p, t) in predictions.iter().zip(truth) {
            let pd = spheresar::embed::sphere_to_density(p).map_err(Failure::from)?;
            let td = spheresar::embed::sphere_to_density(t).map_err(Failure::from)?;
            out.push(io::js_divergence(&pd, &td)?);
        }
        Some(out)
    } else {
        None
    };
    Ok(ErrorReport { angles, js })
}

fn emit_errors(report: &ErrorReport, path: Option<&Path>) -> CliResult<()> {
    let mean = report.angles.iter().sum::<f64>() / report.angles.len() as f64;
    println!("mean angle error: {mean}");
    if let Some(js) = &report.js {
        let mean_js = js.iter().sum::<f64>() / js.len() as f64;
        println!("mean Jensen-Shannon divergence: {mean_js}");
    }
    if let Some(path) = path {
        let mut out = String::from(match report.js {
            Some(_) => "site,angle,js_divergence\n",
            None => "site,angle\n",
        });
        for (i, a) in report.angles.iter().enumerate() {
            match &report.js {
                Some(js) => out.push_str(&format!("{i},{a},{}\n", js[i])),
                None => out.push_str(&format!("{i},{a}\n")),
            }
        }
        std::fs::write(path, out).map_err(|e| Failure::io(path, e))?;
    }
    Ok(())
}

pub fn predict(args: &PredictArgs) -> CliResult<()> {
    if args.loo {
        predict_loo(args)
    } else {
        predict_from_model(args)
    }
}

fn predict_from_model(args: &PredictArgs) -> CliResult<()> {
    let model_path = args.model.as_ref().ok_or_else(|| {
        Failure::Config("predict needs --model with --rows, or --loo with data flags".into())
    })?;
    let rows_path = args
        .rows
        .as_ref()
        .ok_or_else(|| Failure::Config("predict --model needs --rows".into()))?;
    let model = ModelFile::load(model_path)?;
    let kind = model.data_kind()?;
    let predictor = model.predictor()?;
    let rows = io::read_rows(rows_path, predictor.n(), !args.no_normalize)?;
    let mut predictions = Vec::with_capacity(rows.len());
    for row in &rows {
        predictions.push(predictor.predict_point(row).map_err(Failure::from)?);
    }
    println!(
        "predicted {} site(s) from a fit over {} sites (estimate {})",
        predictions.len(),
        predictor.n(),
        predictor.rho()
    );
    if let Some(out) = &args.out {
        io::write_points(out, &predictions, kind, model.step)?;
        println!("predictions written to {}", out.display());
    }
    if let Some(truth_path) = &args.truth {
        let truth = io::read_observations(truth_path, kind)?;
        let report = score_predictions(&predictions, &truth.points, kind)?;
        emit_errors(&report, args.report.as_deref())?;
    }
    Ok(())
}

fn predict_loo(args: &PredictArgs) -> CliResult<()> {
    let (data_path, kind, weights_path) = match (&args.data, args.kind, &args.weights) {
        (Some(d), Some(k), Some(w)) => (d, k, w),
        _ => {
            return Err(Failure::Config(
                "predict --loo needs --data, --kind, and --weights".into(),
            ))
        }
    };
    if args.truth.is_some() {
        return Err(Failure::Config(
            "leave-one-out mode scores against the observations themselves; drop --truth".into(),
        ));
    }
    let opts = fit_options(&args.moments)?;
    let obs = io::read_observations(data_path, kind)?;
    let n = obs.points.len();
    let weights = io::read_weights(weights_path, n, !args.no_normalize)?;
    if n < 3 {
        return Err(Failure::Config(format!(
            "leave-one-out needs at least 3 sites, got {n}"
        )));
    }
    let mut predictions = Vec::with_capacity(n);
    for i in 0..n {
        let keep: Vec<usize> = (0..n).filter(|&j| j != i).collect();
        let w_rest = weights.restrict(&keep).map_err(Failure::from)?;
        let points_rest: Vec<UnitVector> = keep.iter().map(|&j| obs.points[j].clone()).collect();
        let fit =
            fit_sar_points(&points_rest, &w_rest, opts.clone()).map_err(Failure::from)?;
        // Site i's own row never references i, so only the indices shift.
        let (cols, vals) = weights.matrix().row(i);
        let row: Vec<(usize, f64)> = cols
            .iter()
            .zip(vals)
            .map(|(&j, &v)| (if j > i { j - 1 } else { j }, v))
            .collect();
        predictions.push(spheresar::conformal::predict_point(&fit, &row).map_err(Failure::from)?);
    }
    println!("leave-one-out predictions for {n} sites");
    if let Some(out) = &args.out {
        io::write_points(out, &predictions, kind, obs.step)?;
        println!("predictions written to {}", out.display());
    }
    let report = score_predictions(&predictions, &obs.points, kind)?;
    emit_errors(&report, args.report.as_deref())?;
    Ok(())
}

#[derive(Serialize)]
struct SetRecord {
    alpha: f64,
    radius: f64,
    estimate: f64,
    n_train: usize,
    n_calibration: usize,
    kind: String,
    step: f64,
    /// Set center pulled back to the sphere, one entry per requested row.
    centers: Vec<Vec<f64>>,
    scores: Vec<f64>,
}

pub fn conformal(args: &ConformalArgs) -> CliResult<()> {
    check_alpha(args.alpha)?;
    let opts = fit_options(&args.moments)?;
    let data = load_data(&args.data)?;
    if data.covariates.is_some() {
        return Err(Failure::Config(
            "conformal sets are built for the unconditional lag model; drop --covariates".into(),
        ));
    }
    let conf_opts = ConformalOptions {
        alpha: args.alpha,
        seed: args.seed,
        adjusted_quantile: !args.literal_quantile,
        fit_options: opts,
    };
    let calibrated = SplitConformal::calibrate(&data.obs.points, &data.weights, &conf_opts)
        .map_err(Failure::from)?;
    println!(
        "estimate {}, train {}, calibration {}, radius at alpha {}: {}",
        calibrated.rho(),
        calibrated.train_indices().len(),
        calibrated.calibration_indices().len(),
        args.alpha,
        calibrated.radius()
    );
    let rows = match &args.rows {
        Some(path) => io::read_rows(path, data.obs.points.len(), !args.data.no_normalize)?,
        None => Vec::new(),
    };
    let mut centers = Vec::new();
    for row in &rows {
        let set = calibrated.set_for_row(row).map_err(Failure::from)?;
        let center = set.predicted_point().map_err(Failure::from)?;
        centers.push(center.coords().iter().copied().collect::<Vec<f64>>());
    }
    if let Some(cand_path) = &args.candidates {
        if rows.len() != 1 {
            return Err(Failure::Config(format!(
                "--candidates needs --rows with exactly one row, got {}",
                rows.len()
            )));
        }
        let set = calibrated.set_for_row(&rows[0]).map_err(Failure::from)?;
        let candidates = io::read_observations(cand_path, data.obs.kind)?;
        let mut contained = 0usize;
        let mut lines = String::from("candidate,score,contained\n");
        for (i, c) in candidates.points.iter().enumerate() {
            let score = set.score(c).map_err(Failure::from)?;
            let inside = set.contains(c).map_err(Failure::from)?;
            contained += usize::from(inside);
            lines.push_str(&format!("{i},{score},{}\n", u8::from(inside)));
        }
        println!(
            "{contained} of {} candidates inside the set (radius {})",
            candidates.points.len(),
            set.radius
        );
        if let Some(path) = &args.report {
            std::fs::write(path, lines).map_err(|e| Failure::io(path, e))?;
        }
    } else if args.report.is_some() {
        return Err(Failure::Config("--report needs --candidates".into()));
    }
    if let Some(path) = &args.set_out {
        let record = SetRecord {
            alpha: args.alpha,
            radius: calibrated.radius(),
            estimate: calibrated.rho(),
            n_train: calibrated.train_indices().len(),
            n_calibration: calibrated.calibration_indices().len(),
            kind: data.obs.kind.name().to_string(),
            step: data.obs.step,
            centers,
            scores: calibrated.scores().to_vec(),
        };
        let file = std::fs::File::create(path).map_err(|e| Failure::io(path, e))?;
        serde_json::to_writer_pretty(std::io::BufWriter::new(file), &record)
            .map_err(|e| Failure::io(path, e))?;
        println!("set record written to {}", path.display());
    }
    Ok(())
}

fn space_dim(args: &SimulateArgs) -> CliResult<(usize, String)> {
    match (args.space, args.dim) {
        (Some(Space::S5), None) => Ok((6, "s5".into())),
        (Some(Space::S110), None) => Ok((111, "s110".into())),
        (None, Some(d)) => {
            if d < 2 {
                return Err(Failure::Config(format!(
                    "--dim must be at least 2, got {d}"
                )));
            }
            Ok((d, format!("dim{d}")))
        }
        (None, None) => Ok((6, "s5".into())),
        (Some(_), Some(_)) => unreachable!("clap rejects --space with --dim"),
    }
}

pub fn simulate(args: &SimulateArgs) -> CliResult<()> {
    let (dim, space_label) = space_dim(args)?;
    if args.n < 3 {
        return Err(Failure::Config(format!(
            "--n must be at least 3, got {}",
            args.n
        )));
    }
    let mut metrics = sim::MetricsTable::new();
    match args.preset {
        Preset::Table1 => {
            let rhos: Vec<f64> = match args.rho {
                Some(r) => vec![r],
                None => vec![0.0, 0.4],
            };
            for rho in rhos {
                let mut cfg = sim::estimation_preset(args.n, dim, rho, args.seed);
                if let Some(reps) = args.reps {
                    cfg.replicates = reps;
                }
                if let Some(kappa) = args.kappa {
                    cfg.sim.kappa = kappa;
                }
                if let Some(k) = args.k {
                    cfg.sim.k_neighbours = k;
                }
                let summary = sim::run_estimation_experiment(&cfg).map_err(Failure::from)?;
                let label = format!("estimation_{space_label}_n{}_rho{rho}", args.n);
                metrics.add_estimation(&label, &summary);
            }
        }
        Preset::Table2 => {
            let mut cfg = sim::prediction_preset(args.n, dim, args.seed);
            if let Some(reps) = args.reps {
                cfg.replicates = reps;
            }
            if let Some(rho) = args.rho {
                cfg.sim.rho = rho;
            }
            if let Some(kappa) = args.kappa {
                cfg.sim.kappa = kappa;
            }
            if let Some(k) = args.k {
                cfg.sim.k_neighbours = k;
            }
            let summary = sim::run_prediction_experiment(&cfg).map_err(Failure::from)?;
            metrics.add_prediction(&format!("prediction_{space_label}_n{}", args.n), &summary);
        }
        Preset::Power => {
            let signals: Vec<f64> = match args.rho {
                Some(r) => vec![r],
                None => vec![0.0, 0.1, -0.3, 0.4, -0.7, 0.9],
            };
            for signal in signals {
                let mut cfg = sim::power_preset(args.n, dim, signal, args.seed);
                if let Some(reps) = args.reps {
                    cfg.replicates = reps;
                }
                if let Some(b) = args.bootstrap_replicates {
                    cfg.bootstrap.replicates = b;
                }
                if let Some(kappa) = args.kappa {
                    cfg.sim.kappa = kappa;
                }
                if let Some(k) = args.k {
                    cfg.sim.k_neighbours = k;
                }
                let summary = sim::run_power_experiment(&cfg).map_err(Failure::from)?;
                let label = format!("power_{space_label}_n{}_rho{signal}", args.n);
                metrics.add_power(&label, &summary);
            }
        }
    }
    io::emit_metrics(&metrics, args.out.as_deref())?;
    if let Some(out) = &args.out {
        println!("metrics written to {}", out.display());
    }
    Ok(())
}
