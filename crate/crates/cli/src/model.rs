//! The serialized fit record: everything `predict` needs to reproduce
//! in-process predictions exactly, plus the summary statistics the fit
//! reported. JSON with default float formatting round-trips every f64 bit.

use std::path::Path;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use spheresar::conformal::LagPredictor;
use spheresar::gmm::SarFit;
use spheresar::sphere::{TransportAtom, TransportMap, UnitVector};

use crate::fail::{CliResult, Failure};
use crate::io::DataKind;

#[derive(Serialize, Deserialize)]
pub struct AtomRecord {
    pub weight: f64,
    pub za: Vec<f64>,
    pub zb: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
pub struct MapRecord {
    pub atoms: Vec<AtomRecord>,
}

#[derive(Serialize, Deserialize)]
pub struct MomentsRecord {
    pub level: f64,
    pub diag_second: f64,
    pub cross_second: f64,
    pub cross_ratio: f64,
    pub diag_ratio: f64,
    pub retained_rank: Option<usize>,
}

#[derive(Serialize, Deserialize)]
pub struct WaldRecord {
    pub statistic: f64,
    pub p_value: f64,
}

#[derive(Serialize, Deserialize)]
pub struct ModelFile {
    /// "lag" or "covariate-lag".
    pub model: String,
    pub kind: String,
    pub step: f64,
    pub dim: usize,
    pub n: usize,
    pub estimate: f64,
    pub interval: [f64; 2],
    pub polynomial: [f64; 3],
    /// Base point coordinates when the fit started from observations.
    pub base: Option<Vec<f64>>,
    pub mean_map: MapRecord,
    pub maps: Vec<MapRecord>,
    /// Row-normalized weight triplets, for the record.
    pub weights: Vec<(usize, usize, f64)>,
    pub residual_norms: Vec<f64>,
    pub moments: Option<MomentsRecord>,
    pub wald: Option<WaldRecord>,
}

fn map_record(map: &TransportMap) -> MapRecord {
    MapRecord {
        atoms: map
            .atoms()
            .iter()
            .map(|a| AtomRecord {
                weight: a.weight,
                za: a.za.coords().iter().copied().collect(),
                zb: a.zb.coords().iter().copied().collect(),
            })
            .collect(),
    }
}

fn record_map(rec: &MapRecord, dim: usize, step: f64) -> CliResult<TransportMap> {
    let atoms = rec
        .atoms
        .iter()
        .map(|a| {
            Ok(TransportAtom {
                weight: a.weight,
                za: UnitVector::new(DVector::from_vec(a.za.clone()), step)
                    .map_err(Failure::from)?,
                zb: UnitVector::new(DVector::from_vec(a.zb.clone()), step)
                    .map_err(Failure::from)?,
            })
        })
        .collect::<CliResult<Vec<_>>>()?;
    TransportMap::from_atoms(dim, step, atoms).map_err(Failure::from)
}

impl ModelFile {
    pub fn from_fit(fit: &SarFit, model: &str, kind: DataKind, step: f64, dim: usize) -> Self {
        let interval = fit.interval();
        let poly = fit.polynomial();
        let moments = fit.moment_estimates().ok().map(|m| MomentsRecord {
            level: m.level,
            diag_second: m.diag_second,
            cross_second: m.cross_second,
            cross_ratio: m.cross_ratio,
            diag_ratio: m.diag_ratio,
            retained_rank: m.retained_rank,
        });
        let wald = fit.wald().ok().map(|w| WaldRecord {
            statistic: w.statistic,
            p_value: w.p_value,
        });
        ModelFile {
            model: model.to_string(),
            kind: kind.name().to_string(),
            step,
            dim,
            n: fit.n(),
            estimate: fit.estimate(),
            interval: [interval.lo, interval.hi],
            polynomial: [poly.a, poly.b, poly.c],
            base: fit
                .base_mean()
                .map(|b| b.coords().iter().copied().collect()),
            mean_map: map_record(fit.mean_map()),
            maps: fit.maps().iter().map(map_record).collect(),
            weights: fit.weights().matrix().entries().collect(),
            residual_norms: fit.residual_norms(),
            moments,
            wald,
        }
    }

    pub fn save(&self, path: &Path) -> CliResult<()> {
        let file = std::fs::File::create(path).map_err(|e| Failure::io(path, e))?;
        serde_json::to_writer_pretty(std::io::BufWriter::new(file), self)
            .map_err(|e| Failure::io(path, e))
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let file = std::fs::File::open(path).map_err(|e| Failure::io(path, e))?;
        serde_json::from_reader(std::io::BufReader::new(file)).map_err(|e| Failure::io(path, e))
    }

    pub fn data_kind(&self) -> CliResult<DataKind> {
        DataKind::from_name(&self.kind)
    }

    /// Rebuilds the prediction machinery. Covariate-indexed fits cannot
    /// predict from the record alone (new sites need covariates).
    pub fn predictor(&self) -> CliResult<LagPredictor> {
        if self.model != "lag" {
            return Err(Failure::Config(format!(
                "model kind '{}' does not support row-based prediction",
                self.model
            )));
        }
        let base = match &self.base {
            None => None,
            Some(coords) => Some(
                UnitVector::new(DVector::from_vec(coords.clone()), self.step)
                    .map_err(Failure::from)?,
            ),
        };
        let mean_map = record_map(&self.mean_map, self.dim, self.step)?;
        let maps = self
            .maps
            .iter()
            .map(|m| record_map(m, self.dim, self.step))
            .collect::<CliResult<Vec<_>>>()?;
        LagPredictor::from_parts(self.estimate, base, mean_map, maps).map_err(Failure::from)
    }
}
