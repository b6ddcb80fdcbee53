//! Recursive coefficient updating and multi-quarter forecasting.
//!
//! After each quarter the coefficient posterior is refreshed from that
//! quarter's observations: the precision accumulates the observed
//! information `y(1-y) x xᵀ` and the coefficients move by a Newton step on
//! the residuals. Forecasting repeats predict-then-update out to the horizon,
//! rolling the PDC lag features forward on expected adherence where no real
//! observation exists.

use nalgebra::{DMatrix, DVector};

use super::fit::logistic;
use super::{CoefficientState, Eq3Sign, FitResult, ForecastHorizon};
use crate::cohort::Cohort;
use crate::error::{Error, Result};

/// One observation feeding a coefficient update: the realized outcome `w`
/// (1 = non-adherent), the probability `y_hat` that was forecast for it, and
/// the covariates it was forecast from.
#[derive(Debug, Clone, Copy)]
pub struct DlrObservation<'a> {
    pub w: f64,
    pub y_hat: f64,
    pub x: &'a [f64],
}

/// Probability that a patient with random intercept `u` and covariates `x`
/// is non-adherent, under `state`.
pub fn predict_probability(state: &CoefficientState, u: f64, x: &[f64]) -> Result<f64> {
    if x.len() != state.dim() {
        return Err(Error::InvalidInput(format!(
            "feature length {} != coefficient dimension {}",
            x.len(),
            state.dim()
        )));
    }
    let z: f64 = u + state.beta.iter().zip(x).map(|(b, v)| b * v).sum::<f64>();
    Ok(logistic(z).clamp(1e-12, 1.0 - 1e-12))
}

/// Advances the coefficient state by one epoch from a batch of observations.
///
/// Precision: `P' = P + Σ y(1-y) x xᵀ`. Coefficients: `β' = β ± P'⁻¹ Σ (w-y) x`,
/// `+` for [`Eq3Sign::Ascent`] (default). Observation contributions are
/// accumulated associatively, so batch order does not matter.
pub fn dlr_step(
    state: &CoefficientState,
    observations: &[DlrObservation<'_>],
    sign: Eq3Sign,
) -> Result<CoefficientState> {
    let d = state.dim();
    let mut info = DMatrix::zeros(d, d);
    let mut score = DVector::zeros(d);
    for obs in observations {
        if obs.x.len() != d {
            return Err(Error::InvalidInput(format!(
                "observation feature length {} != dimension {d}",
                obs.x.len()
            )));
        }
        if !(obs.y_hat > 0.0 && obs.y_hat < 1.0) {
            return Err(Error::InvalidInput(format!(
                "y_hat {} outside (0, 1)",
                obs.y_hat
            )));
        }
        let wgt = obs.y_hat * (1.0 - obs.y_hat);
        let resid = obs.w - obs.y_hat;
        for k in 0..d {
            score[k] += resid * obs.x[k];
            for j in k..d {
                info[(k, j)] += wgt * obs.x[k] * obs.x[j];
            }
        }
    }
    for k in 0..d {
        for j in 0..k {
            info[(k, j)] = info[(j, k)];
        }
    }
    let precision = &state.precision + info;
    let chol = precision.clone().cholesky().ok_or_else(|| {
        Error::Numerical("updated precision not positive-definite".into())
    })?;
    let delta = chol.solve(&score);
    let beta = match sign {
        Eq3Sign::Ascent => &state.beta + delta,
        Eq3Sign::Printed => &state.beta - delta,
    };
    Ok(CoefficientState { beta, precision, epoch: state.epoch + 1 })
}

#[derive(Debug, Clone)]
pub struct ForecastOptions {
    pub pdc_lags: usize,
    pub sign: Eq3Sign,
    /// Expected PDC fed into rolled-forward lag features.
    pub pdc_adherent_mean: f64,
    pub pdc_nonadherent_mean: f64,
    /// Longest quarterly horizon the covariate roll-forward supports.
    pub max_horizon: usize,
}

impl Default for ForecastOptions {
    fn default() -> Self {
        Self {
            pdc_lags: 8,
            sign: Eq3Sign::Ascent,
            pdc_adherent_mean: 0.90,
            pdc_nonadherent_mean: 0.63,
            max_horizon: 60,
        }
    }
}

/// Forecasts quarterly non-adherence for every patient from `origin_quarter`
/// through `horizon_end`.
///
/// Quarters up to `observed_through` use the cohort's real outcomes (both as
/// lag features and as update targets); beyond it, lags roll forward on the
/// expected PDC implied by each forecast, other covariates hold at their
/// last observed values, and updates use the forecast itself as the target
/// (zero residual, so only the precision moves). Passing
/// `observed_through = origin_quarter - 1` gives a pure forecast.
pub fn forecast_horizon(
    cohort: &Cohort,
    fit: &FitResult,
    origin_quarter: usize,
    horizon_end: usize,
    observed_through: usize,
    opts: &ForecastOptions,
) -> Result<(ForecastHorizon, CoefficientState)> {
    let lags = opts.pdc_lags;
    if origin_quarter <= lags {
        return Err(Error::InsufficientHistory(format!(
            "origin quarter {origin_quarter} requires at least {lags} prior quarters"
        )));
    }
    if horizon_end < origin_quarter {
        return Err(Error::InvalidInput("horizon_end before origin_quarter".into()));
    }
    if horizon_end - origin_quarter + 1 > opts.max_horizon {
        return Err(Error::InvalidInput(format!(
            "horizon of {} quarters exceeds the covariate roll-forward limit of {}",
            horizon_end - origin_quarter + 1,
            opts.max_horizon
        )));
    }
    if observed_through < origin_quarter - 1 {
        return Err(Error::InsufficientHistory(format!(
            "lag features for quarter {origin_quarter} need observations through quarter {}",
            origin_quarter - 1
        )));
    }
    let d = fit.layout.len();
    if fit.state.dim() != d {
        return Err(Error::InvalidInput("fit state/layout dimension mismatch".into()));
    }

    let n = cohort.n_patients();
    // Per-patient fixed covariate block (everything except the PDC lags,
    // which roll) and extended PDC series.
    let mut fixed: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut pdc_series: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut u = Vec::with_capacity(n);
    for patient in &cohort.patients {
        if patient.quarters.len() < observed_through {
            return Err(Error::InsufficientHistory(format!(
                "patient {} has {} quarters, observed_through is {observed_through}",
                patient.id,
                patient.quarters.len()
            )));
        }
        let x = crate::cohort::build_feature_vector(patient, observed_through + 1, lags)?;
        fixed.push(x.values[..10].to_vec());
        pdc_series.push(patient.quarters[..observed_through].iter().map(|q| q.pdc).collect());
        u.push(fit.u_for(&patient.id));
    }

    let mut state = fit.state.clone();
    let mut columns: Vec<Vec<f64>> = Vec::with_capacity(horizon_end - origin_quarter + 1);
    let mut features: Vec<Vec<f64>> = vec![vec![0.0; d]; n];

    for qt in origin_quarter..=horizon_end {
        // Assemble features for quarter qt and predict.
        let mut column = Vec::with_capacity(n);
        for (i, patient) in cohort.patients.iter().enumerate() {
            let x = &mut features[i];
            if qt - 1 <= observed_through {
                // Fully observed history: use the exact featurizer.
                let fv = crate::cohort::build_feature_vector(patient, qt, lags)?;
                x.copy_from_slice(&fv.values);
            } else {
                x[..10].copy_from_slice(&fixed[i]);
                // Project age; hold other fixed covariates at data_limit.
                x[4] = patient.demographics.age_years + (qt - 1) as f64 / 4.0;
                let series = &pdc_series[i];
                for lag in 1..=lags {
                    x[9 + lag] = series[qt - 1 - lag];
                }
            }
            let y = predict_probability(&state, u[i], x)?;
            column.push(y);
        }

        // Advance the state into the next quarter.
        let realized: Vec<f64> = if qt <= observed_through {
            cohort
                .patients
                .iter()
                .map(|p| f64::from(!p.quarters[qt - 1].adherent as u8))
                .collect()
        } else {
            column.clone()
        };
        let observations: Vec<DlrObservation<'_>> = (0..n)
            .map(|i| DlrObservation { w: realized[i], y_hat: column[i], x: &features[i] })
            .collect();
        state = dlr_step(&state, &observations, opts.sign)?;

        // Extend each PDC series into quarter qt where it is not observed.
        for i in 0..n {
            if pdc_series[i].len() < qt {
                let y = column[i];
                let expected =
                    y * opts.pdc_nonadherent_mean + (1.0 - y) * opts.pdc_adherent_mean;
                pdc_series[i].push(expected);
            }
        }
        columns.push(column);
    }

    let probabilities: Vec<Vec<f64>> = (0..n)
        .map(|i| columns.iter().map(|col| col[i]).collect())
        .collect();
    let horizon = ForecastHorizon {
        patient_ids: cohort.patients.iter().map(|p| p.id.clone()).collect(),
        probabilities,
        origin_epoch: origin_quarter,
        horizon_end,
    };
    horizon.validate()?;
    Ok((horizon, state))
}
