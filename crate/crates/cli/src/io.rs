//! CSV ingestion and emission.
//!
//! Observation files carry one site per row. Compositions and unit vectors
//! are plain numeric rows; density files start with a `delta_omega,<value>`
//! line and continue with rows of grid values. Weight matrices travel as
//! 0-based `i,j,w` triplets; prediction rows as `row,j,w` triplets grouped by
//! consecutive row ids. All parse failures report file, line, and field.

use std::collections::BTreeSet;
use std::io::Write;
use std::path::Path;

use clap::ValueEnum;
use nalgebra::{DMatrix, DVector};

use spheresar::embed::{
    composition_to_sphere, density_to_sphere, sphere_to_composition, sphere_to_density,
    Composition, GridDensity,
};
use spheresar::sphere::UnitVector;
use spheresar::weights::{SparseMatrix, SpatialWeights};

use crate::fail::{CliResult, Failure};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DataKind {
    /// Rows of nonnegative parts summing to 1 (square-root embedded).
    Composition,
    /// A `delta_omega,<value>` header line, then rows of density grid values.
    Density,
    /// Rows that already are unit coordinate vectors.
    UnitVector,
}

impl DataKind {
    pub fn name(self) -> &'static str {
        match self {
            DataKind::Composition => "composition",
            DataKind::Density => "density",
            DataKind::UnitVector => "unit-vector",
        }
    }

    pub fn from_name(s: &str) -> CliResult<Self> {
        match s {
            "composition" => Ok(DataKind::Composition),
            "density" => Ok(DataKind::Density),
            "unit-vector" => Ok(DataKind::UnitVector),
            other => Err(Failure::Io(format!("unknown data kind '{other}'"))),
        }
    }
}

/// Observations plus the representation they arrived in.
pub struct Observations {
    pub points: Vec<UnitVector>,
    pub kind: DataKind,
    /// Grid cell width for densities, 1.0 otherwise.
    pub step: f64,
    pub dim: usize,
}

fn read_lines(path: &Path) -> CliResult<Vec<(usize, Vec<String>)>> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::io(path, e))?;
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        out.push((
            idx + 1,
            line.split(',').map(|f| f.trim().to_string()).collect(),
        ));
    }
    Ok(out)
}

fn parse_field(path: &Path, line: usize, field: usize, raw: &str) -> CliResult<f64> {
    raw.parse::<f64>().map_err(|_| {
        Failure::Io(format!(
            "{}: line {line}, field {}: expected a number, got '{raw}'",
            path.display(),
            field + 1
        ))
    })
}

fn parse_numeric_row(path: &Path, line: usize, fields: &[String]) -> CliResult<Vec<f64>> {
    fields
        .iter()
        .enumerate()
        .map(|(c, raw)| parse_field(path, line, c, raw))
        .collect()
}

pub fn read_observations(path: &Path, kind: DataKind) -> CliResult<Observations> {
    let mut lines = read_lines(path)?;
    if lines.is_empty() {
        return Err(Failure::io(path, "no observation rows"));
    }
    let mut step = 1.0;
    if kind == DataKind::Density {
        let (lno, header) = lines.remove(0);
        if header.len() != 2 || header[0] != "delta_omega" {
            return Err(Failure::Io(format!(
                "{}: line {lno}: density files start with 'delta_omega,<value>'",
                path.display()
            )));
        }
        step = parse_field(path, lno, 1, &header[1])?;
        if !(step.is_finite() && step > 0.0) {
            return Err(Failure::Io(format!(
                "{}: line {lno}: delta_omega must be positive, got {step}",
                path.display()
            )));
        }
        if lines.is_empty() {
            return Err(Failure::io(path, "no observation rows after the header"));
        }
    }
    let width = lines[0].1.len();
    let mut points = Vec::with_capacity(lines.len());
    for (lno, fields) in &lines {
        if fields.len() != width {
            return Err(Failure::Io(format!(
                "{}: line {lno}: {} fields, expected {width}",
                path.display(),
                fields.len()
            )));
        }
        let values = parse_numeric_row(path, *lno, fields)?;
        let v = DVector::from_vec(values);
        let point = match kind {
            DataKind::Composition => {
                composition_to_sphere(&Composition::new(v).map_err(|e| {
                    Failure::Io(format!("{}: line {lno}: {e}", path.display()))
                })?)
            }
            DataKind::Density => density_to_sphere(&GridDensity::new(v, step).map_err(|e| {
                Failure::Io(format!("{}: line {lno}: {e}", path.display()))
            })?),
            DataKind::UnitVector => UnitVector::new(v, 1.0)
                .map_err(|e| Failure::Io(format!("{}: line {lno}: {e}", path.display())))?,
        };
        points.push(point);
    }
    Ok(Observations {
        dim: points[0].dim(),
        points,
        kind,
        step,
    })
}

/// Writes points in the given representation; the inverse of
/// [`read_observations`].
pub fn write_points(
    path: &Path,
    points: &[UnitVector],
    kind: DataKind,
    step: f64,
) -> CliResult<()> {
    let mut out = String::new();
    if kind == DataKind::Density {
        out.push_str(&format!("delta_omega,{step}\n"));
    }
    for p in points {
        let values: Vec<String> = match kind {
            DataKind::Composition => sphere_to_composition(p)
                .map_err(Failure::from)?
                .parts()
                .iter()
                .map(|v| format!("{v}"))
                .collect(),
            DataKind::Density => sphere_to_density(p)
                .map_err(Failure::from)?
                .values()
                .iter()
                .map(|v| format!("{v}"))
                .collect(),
            DataKind::UnitVector => p.coords().iter().map(|v| format!("{v}")).collect(),
        };
        out.push_str(&values.join(","));
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Failure::io(path, e))
}

fn is_header(fields: &[String]) -> bool {
    fields.iter().all(|f| f.parse::<f64>().is_err())
}

/// Reads a 0-based `i,j,w` triplet file into a weight matrix over `n` sites.
/// Rows are normalized to sum 1 unless `normalize` is off, in which case the
/// file must already satisfy the row-sum convention.
pub fn read_weights(path: &Path, n: usize, normalize: bool) -> CliResult<SpatialWeights> {
    let mut lines = read_lines(path)?;
    if !lines.is_empty() && is_header(&lines[0].1) {
        lines.remove(0);
    }
    let mut triplets = Vec::with_capacity(lines.len());
    for (lno, fields) in &lines {
        if fields.len() != 3 {
            return Err(Failure::Io(format!(
                "{}: line {lno}: expected i,j,w",
                path.display()
            )));
        }
        let parse_idx = |field: usize| -> CliResult<usize> {
            fields[field].parse::<usize>().map_err(|_| {
                Failure::Io(format!(
                    "{}: line {lno}, field {}: expected a 0-based index, got '{}'",
                    path.display(),
                    field + 1,
                    fields[field]
                ))
            })
        };
        let i = parse_idx(0)?;
        let j = parse_idx(1)?;
        let w = parse_field(path, *lno, 2, &fields[2])?;
        if i >= n || j >= n {
            return Err(Failure::Io(format!(
                "{}: line {lno}: index ({i}, {j}) out of range for {n} sites",
                path.display()
            )));
        }
        triplets.push((i, j, w));
    }
    let mat = SparseMatrix::from_triplets(n, n, &triplets)
        .map_err(|e| Failure::Io(format!("{}: {e}", path.display())))?;
    let built = if normalize {
        SpatialWeights::new_normalized(mat)
    } else {
        SpatialWeights::new(mat)
    };
    built.map_err(|e| Failure::Io(format!("{}: {e}", path.display())))
}

/// Reads new-site neighbour rows from a `row,j,w` triplet file. Row ids must
/// be consecutive from 0.
pub fn read_rows(path: &Path, n: usize, normalize: bool) -> CliResult<Vec<Vec<(usize, f64)>>> {
    let mut lines = read_lines(path)?;
    if !lines.is_empty() && is_header(&lines[0].1) {
        lines.remove(0);
    }
    let mut rows: Vec<Vec<(usize, f64)>> = Vec::new();
    for (lno, fields) in &lines {
        if fields.len() != 3 {
            return Err(Failure::Io(format!(
                "{}: line {lno}: expected row,j,w",
                path.display()
            )));
        }
        let r = fields[0].parse::<usize>().map_err(|_| {
            Failure::Io(format!(
                "{}: line {lno}: expected a 0-based row id, got '{}'",
                path.display(),
                fields[0]
            ))
        })?;
        let j = fields[1].parse::<usize>().map_err(|_| {
            Failure::Io(format!(
                "{}: line {lno}: expected a 0-based site index, got '{}'",
                path.display(),
                fields[1]
            ))
        })?;
        let w = parse_field(path, *lno, 2, &fields[2])?;
        if j >= n {
            return Err(Failure::Io(format!(
                "{}: line {lno}: site index {j} out of range for {n} sites",
                path.display()
            )));
        }
        if r == rows.len() {
            rows.push(Vec::new());
        } else if r > rows.len() {
            return Err(Failure::Io(format!(
                "{}: line {lno}: row ids must be consecutive from 0, got {r}",
                path.display()
            )));
        }
        rows[r].push((j, w));
    }
    if rows.is_empty() {
        return Err(Failure::io(path, "no prediction rows"));
    }
    if normalize {
        for row in &mut rows {
            let sum: f64 = row.iter().map(|&(_, w)| w).sum();
            if sum > 0.0 {
                for entry in row.iter_mut() {
                    entry.1 /= sum;
                }
            }
        }
    }
    Ok(rows)
}

/// Covariate ingestion: a headered CSV, an optional column selection, and a
/// set of categorical columns to expand by one-hot encoding (the
/// lexicographically first level is the dropped reference).
pub struct ColumnChoice {
    pub columns: Option<Vec<String>>,
    pub categorical: Vec<String>,
}

pub fn read_covariates(path: &Path, choice: &ColumnChoice) -> CliResult<(DMatrix<f64>, Vec<String>)> {
    let mut lines = read_lines(path)?;
    if lines.len() < 2 {
        return Err(Failure::io(path, "need a header line and at least one row"));
    }
    let (_, header) = lines.remove(0);
    let selected: Vec<usize> = match &choice.columns {
        None => (0..header.len()).collect(),
        Some(names) => names
            .iter()
            .map(|name| {
                header.iter().position(|h| h == name).ok_or_else(|| {
                    Failure::Config(format!(
                        "covariate column '{name}' not found in {} (columns: {})",
                        path.display(),
                        header.join(", ")
                    ))
                })
            })
            .collect::<CliResult<_>>()?,
    };
    for cat in &choice.categorical {
        let known = selected.iter().any(|&c| header[c] == *cat);
        if !known {
            return Err(Failure::Config(format!(
                "categorical column '{cat}' is not among the selected covariates"
            )));
        }
    }
    let n = lines.len();
    for (lno, fields) in &lines {
        if fields.len() != header.len() {
            return Err(Failure::Io(format!(
                "{}: line {lno}: {} fields, expected {}",
                path.display(),
                fields.len(),
                header.len()
            )));
        }
    }

    let mut out_cols: Vec<(String, Vec<f64>)> = Vec::new();
    for &c in &selected {
        let name = &header[c];
        if choice.categorical.contains(name) {
            let levels: BTreeSet<String> =
                lines.iter().map(|(_, f)| f[c].clone()).collect();
            // Reference level: lexicographically first, dropped.
            for level in levels.iter().skip(1) {
                let col: Vec<f64> = lines
                    .iter()
                    .map(|(_, f)| if f[c] == *level { 1.0 } else { 0.0 })
                    .collect();
                out_cols.push((format!("{name}={level}"), col));
            }
        } else {
            let mut col = Vec::with_capacity(n);
            for (lno, fields) in &lines {
                col.push(parse_field(path, *lno, c, &fields[c])?);
            }
            out_cols.push((name.clone(), col));
        }
    }
    if out_cols.is_empty() {
        return Err(Failure::Config(
            "covariate selection produced no columns".into(),
        ));
    }
    let names: Vec<String> = out_cols.iter().map(|(n, _)| n.clone()).collect();
    let mat = DMatrix::from_fn(n, out_cols.len(), |i, j| out_cols[j].1[i]);
    Ok((mat, names))
}

/// Jensen-Shannon divergence between two densities on a shared grid:
/// the symmetrized KL against the equal mixture, with 0 log 0 = 0.
pub fn js_divergence(p: &GridDensity, q: &GridDensity) -> CliResult<f64> {
    if p.len() != q.len() || p.delta_omega() != q.delta_omega() {
        return Err(Failure::Config(format!(
            "densities live on different grids ({} cells at {} vs {} cells at {})",
            p.len(),
            p.delta_omega(),
            q.len(),
            q.delta_omega()
        )));
    }
    let step = p.delta_omega();
    let kl = |a: &DVector<f64>, b: &DVector<f64>| -> f64 {
        a.iter()
            .zip(b.iter())
            .map(|(&x, &y)| if x > 0.0 { step * x * (x / y).ln() } else { 0.0 })
            .sum()
    };
    let mix: DVector<f64> = (p.values() + q.values()) * 0.5;
    Ok(0.5 * kl(p.values(), &mix) + 0.5 * kl(q.values(), &mix))
}

/// Writes a two-level table as `row,metric,value` CSV, or to stdout when no
/// path is given.
pub fn emit_metrics(
    table: &spheresar::sim::MetricsTable,
    path: Option<&Path>,
) -> CliResult<()> {
    let mut buf = Vec::new();
    table
        .write_csv(&mut buf)
        .map_err(|e| Failure::Io(format!("serializing metrics: {e}")))?;
    match path {
        Some(p) => std::fs::write(p, buf).map_err(|e| Failure::io(p, e)),
        None => {
            std::io::stdout()
                .write_all(&buf)
                .map_err(|e| Failure::Io(format!("stdout: {e}")))
        }
    }
}
