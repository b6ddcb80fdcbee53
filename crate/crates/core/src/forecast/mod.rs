//! Non-adherence forecasting: initial penalized logistic fit with
//! per-patient random intercepts, recursive coefficient/precision updates,
//! multi-quarter forecast horizons, and forecast evaluation.

mod dlr;
mod fit;
mod io;
mod metrics;
mod vif;

pub use dlr::{dlr_step, forecast_horizon, predict_probability, DlrObservation, ForecastOptions};
pub use fit::{fit_initial, training_rows, FitOptions, FitReport, FitResult, TrainingRow};
pub use io::{load_model, save_model, ModelFile};
pub use metrics::{
    accuracy_maximizing_threshold, auc, confusion_at_threshold, evaluate, write_metrics_csv,
    ConfusionRates, FoldYearMetrics, ForecastMetrics,
};
pub use vif::vif_diagnostics;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Named covariate ordering shared by the generator, the featurizer and the
/// fitted models: intercept, nine baseline covariates, then PDC lags
/// most-recent first.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CovariateLayout {
    pub pdc_lags: usize,
}

impl CovariateLayout {
    pub fn standard(pdc_lags: usize) -> Self {
        Self { pdc_lags }
    }

    pub fn len(&self) -> usize {
        10 + self.pdc_lags
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn names(&self) -> Vec<String> {
        let mut names: Vec<String> = [
            "intercept",
            "sex_male",
            "race_white",
            "smoker",
            "age_years",
            "sbp",
            "n_bp_tests",
            "ldl",
            "total_cholesterol",
            "n_chol_tests",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        for lag in 1..=self.pdc_lags {
            names.push(format!("pdc_lag_{lag}"));
        }
        names
    }
}

/// Covariate vector in the standard layout; the first entry is the
/// intercept and must be 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub values: Vec<f64>,
}

/// Coefficient vector and its precision (inverse-covariance) matrix at a
/// given epoch. The precision is stored and updated directly; covariances
/// only ever appear through linear solves.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientState {
    pub beta: DVector<f64>,
    pub precision: DMatrix<f64>,
    pub epoch: u32,
}

impl CoefficientState {
    pub fn dim(&self) -> usize {
        self.beta.len()
    }

    /// Symmetry within 1e-10 and positive-definiteness (via Cholesky).
    pub fn validate(&self) -> Result<()> {
        let d = self.beta.len();
        if self.precision.nrows() != d || self.precision.ncols() != d {
            return Err(Error::InvalidInput(format!(
                "precision is {}x{}, beta has length {d}",
                self.precision.nrows(),
                self.precision.ncols()
            )));
        }
        for i in 0..d {
            for j in (i + 1)..d {
                if (self.precision[(i, j)] - self.precision[(j, i)]).abs() > 1e-10 {
                    return Err(Error::Numerical(format!(
                        "precision not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        if self.precision.clone().cholesky().is_none() {
            return Err(Error::Numerical("precision not positive-definite".into()));
        }
        Ok(())
    }
}

/// Sign convention for the coefficient update step.
///
/// `Ascent` takes the Newton step that increases the one-step penalized
/// log-likelihood (the default). `Printed` flips the step sign to match the
/// update formula as printed in the reference, which decreases it; it exists
/// for side-by-side comparison only.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Eq3Sign {
    #[default]
    Ascent,
    #[serde(rename = "paper")]
    Printed,
}

/// Forecast probabilities per patient per epoch (`origin_epoch..=horizon_end`).
/// Epochs are quarters when produced by the DLR recursion and years after
/// aggregation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastHorizon {
    pub patient_ids: Vec<String>,
    /// `probabilities[i][k]` is patient i's non-adherence probability at
    /// epoch `origin_epoch + k`.
    pub probabilities: Vec<Vec<f64>>,
    pub origin_epoch: usize,
    pub horizon_end: usize,
}

impl ForecastHorizon {
    pub fn n_epochs(&self) -> usize {
        self.horizon_end - self.origin_epoch + 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon_end < self.origin_epoch {
            return Err(Error::InvalidInput("horizon_end before origin_epoch".into()));
        }
        if self.patient_ids.len() != self.probabilities.len() {
            return Err(Error::InvalidInput("patient_ids/probabilities length mismatch".into()));
        }
        let k = self.n_epochs();
        for (id, row) in self.patient_ids.iter().zip(&self.probabilities) {
            if row.len() != k {
                return Err(Error::InvalidInput(format!(
                    "patient {id}: row length {} != {k}",
                    row.len()
                )));
            }
            if row.iter().any(|p| !(*p > 0.0 && *p < 1.0)) {
                return Err(Error::InvalidInput(format!(
                    "patient {id}: probability outside (0, 1)"
                )));
            }
        }
        Ok(())
    }

    /// Aggregates quarterly probabilities into yearly non-adherence
    /// probabilities: the chance that at least two of the year's four
    /// quarters are non-adherent, treating quarters as independent.
    pub fn to_yearly(&self) -> Result<ForecastHorizon> {
        let k = self.n_epochs();
        if k % 4 != 0 {
            return Err(Error::InvalidInput(format!(
                "quarterly horizon of {k} epochs does not cover whole years"
            )));
        }
        let years = k / 4;
        let probabilities = self
            .probabilities
            .iter()
            .map(|row| {
                (0..years)
                    .map(|y| {
                        let quarters = &row[y * 4..y * 4 + 4];
                        let dist = crate::reward::count_distribution(quarters)
                            .expect("quarterly probabilities already validated");
                        (1.0 - dist.probs[0] - dist.probs[1]).clamp(1e-12, 1.0 - 1e-12)
                    })
                    .collect()
            })
            .collect();
        Ok(ForecastHorizon {
            patient_ids: self.patient_ids.clone(),
            probabilities,
            origin_epoch: 1,
            horizon_end: years,
        })
    }
}
