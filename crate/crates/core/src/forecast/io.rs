//! Fitted-model persistence.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{CoefficientState, CovariateLayout, FitReport, FitResult};
use crate::error::{Error, Result};

/// On-disk model document: covariate layout, coefficients, precision in
/// row-major order, DLR epoch, per-patient intercepts, and the fit
/// configuration that produced it.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub layout: Vec<String>,
    pub pdc_lags: usize,
    pub beta: Vec<f64>,
    /// Row-major `dim x dim` precision matrix.
    pub precision: Vec<f64>,
    pub epoch: u32,
    pub u_by_patient: BTreeMap<String, f64>,
    pub config: ModelConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub ridge: f64,
    pub re_penalty: f64,
    pub train_through_quarter: usize,
}

pub fn save_model(fit: &FitResult, config: &ModelConfig, path: &Path) -> Result<()> {
    let d = fit.state.dim();
    let mut precision = Vec::with_capacity(d * d);
    for i in 0..d {
        for j in 0..d {
            precision.push(fit.state.precision[(i, j)]);
        }
    }
    let file = ModelFile {
        layout: fit.layout.names(),
        pdc_lags: fit.layout.pdc_lags,
        beta: fit.state.beta.iter().copied().collect(),
        precision,
        epoch: fit.state.epoch,
        u_by_patient: fit.u_by_patient.clone(),
        config: config.clone(),
    };
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer(&mut w, &file)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<(FitResult, ModelConfig)> {
    let file: ModelFile = serde_json::from_reader(BufReader::new(File::open(path)?))
        .map_err(|e| Error::SchemaMismatch(format!("{}: {e}", path.display())))?;
    let layout = CovariateLayout::standard(file.pdc_lags);
    let d = layout.len();
    if file.layout != layout.names() {
        return Err(Error::SchemaMismatch("unexpected covariate layout".into()));
    }
    if file.beta.len() != d || file.precision.len() != d * d {
        return Err(Error::SchemaMismatch(format!(
            "beta/precision sized {}/{} for dimension {d}",
            file.beta.len(),
            file.precision.len()
        )));
    }
    let state = CoefficientState {
        beta: DVector::from_vec(file.beta),
        precision: DMatrix::from_fn(d, d, |i, j| file.precision[i * d + j]),
        epoch: file.epoch,
    };
    state.validate()?;
    let fit = FitResult {
        state,
        layout,
        u_by_patient: file.u_by_patient,
        report: FitReport {
            iterations: 0,
            gradient_max_norm: 0.0,
            penalized_ll_path: Vec::new(),
            n_rows: 0,
            n_patients: 0,
        },
    };
    Ok((fit, file.config))
}
