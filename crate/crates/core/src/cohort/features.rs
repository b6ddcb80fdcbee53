//! Covariate assembly: turns a patient's history into the regression
//! feature vector.
//!
//! Layout (fixed order): intercept, sex (male = 1), race (white = 1),
//! smoker, age in years, SBP, cumulative BP tests, LDL, total cholesterol,
//! cumulative cholesterol tests, then PDC lags most-recent first.
//! Indicator codings are chosen so the reference fit's coefficient signs
//! hold: male and white carry 1.

use super::{Patient, Race, Sex};
use crate::error::{Error, Result};
use crate::forecast::{CovariateLayout, FeatureVector};

/// Builds the covariate vector for forecasting `at_quarter` from data
/// strictly before it. Biometrics are carried forward from the most recent
/// observation; cumulative test counts are read from quarter
/// `at_quarter - 1`; PDC lag 1 is quarter `at_quarter - 1`.
pub fn build_feature_vector(
    patient: &Patient,
    at_quarter: usize,
    pdc_lags: usize,
) -> Result<FeatureVector> {
    if at_quarter <= pdc_lags {
        return Err(Error::InsufficientHistory(format!(
            "patient {}: forecasting quarter {} requires at least {} prior quarters (pdc_lags = {})",
            patient.id,
            at_quarter,
            pdc_lags,
            pdc_lags
        )));
    }
    if patient.quarters.len() < at_quarter - 1 {
        return Err(Error::InsufficientHistory(format!(
            "patient {}: history through quarter {} required, have {}",
            patient.id,
            at_quarter - 1,
            patient.quarters.len()
        )));
    }
    let history = &patient.quarters[..at_quarter - 1];

    let locf = |name: &str, get: fn(&super::QuarterlyRecord) -> Option<f64>| -> Result<f64> {
        history
            .iter()
            .rev()
            .find_map(get)
            .ok_or_else(|| {
                Error::InsufficientHistory(format!(
                    "patient {}: no {name} observation before quarter {at_quarter}",
                    patient.id
                ))
            })
    };

    let sbp = locf("SBP", |q| q.sbp)?;
    let ldl = locf("LDL", |q| q.ldl)?;
    let total_chol = locf("total cholesterol", |q| q.total_cholesterol)?;
    let last = &history[at_quarter - 2];

    let layout = CovariateLayout::standard(pdc_lags);
    let mut values = Vec::with_capacity(layout.len());
    values.push(1.0);
    values.push(if patient.demographics.sex == Sex::Male { 1.0 } else { 0.0 });
    values.push(if patient.demographics.race == Race::White { 1.0 } else { 0.0 });
    values.push(if patient.demographics.smoker { 1.0 } else { 0.0 });
    values.push(patient.demographics.age_years + (at_quarter - 1) as f64 / 4.0);
    values.push(sbp);
    values.push(f64::from(last.n_bp_tests_cum));
    values.push(ldl);
    values.push(total_chol);
    values.push(f64::from(last.n_chol_tests_cum));
    for lag in 1..=pdc_lags {
        values.push(history[at_quarter - 1 - lag].pdc);
    }
    Ok(FeatureVector { values })
}

/// Mean PDC over the four quarters of 1-based `year`.
pub fn yearly_mean_pdc(patient: &Patient, year: usize) -> Result<f64> {
    let start = (year - 1) * 4;
    if patient.quarters.len() < start + 4 {
        return Err(Error::InsufficientHistory(format!(
            "patient {}: year {year} not fully observed",
            patient.id
        )));
    }
    Ok(patient.quarters[start..start + 4].iter().map(|q| q.pdc).sum::<f64>() / 4.0)
}

/// Observed yearly non-adherence label for 1-based `year`
/// (true = non-adherent, i.e. at least two non-adherent quarters).
pub fn yearly_truth_label(patient: &Patient, year: usize) -> Result<bool> {
    let start = (year - 1) * 4;
    if patient.quarters.len() < start + 4 {
        return Err(Error::InsufficientHistory(format!(
            "patient {}: year {year} not fully observed",
            patient.id
        )));
    }
    let flags: Vec<bool> = patient.quarters[start..start + 4].iter().map(|q| q.adherent).collect();
    Ok(!super::pdc::label_adherence_year(&flags)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::{DemographicProfile, QuarterlyRecord};

    fn quarter(idx: usize, pdc: f64, ldl: Option<f64>) -> QuarterlyRecord {
        QuarterlyRecord {
            quarter_index: idx,
            pdc,
            adherent: pdc >= 0.8,
            sbp: Some(128.0),
            ldl,
            total_cholesterol: Some(190.0),
            n_bp_tests_cum: idx as u32,
            n_chol_tests_cum: (idx / 2) as u32,
        }
    }

    fn patient(n_quarters: usize, ldl_observed: bool) -> Patient {
        Patient {
            id: "p1".into(),
            demographics: DemographicProfile {
                sex: Sex::Male,
                race: Race::White,
                smoker: false,
                age_years: 60.0,
            },
            baseline_cvd_risk: 0.17,
            random_effect: 0.0,
            quarters: (1..=n_quarters)
                .map(|i| quarter(i, 0.6 + 0.02 * i as f64, if ldl_observed { Some(110.0) } else { None }))
                .collect(),
            risk_path: vec![0.17],
        }
    }

    #[test]
    fn default_layout_has_length_18() {
        let p = patient(12, true);
        let x = build_feature_vector(&p, 9, 8).unwrap();
        assert_eq!(x.values.len(), 18);
        assert_eq!(x.values[0], 1.0);
        // lag 1 is the most recent quarter (index 8 => pdc 0.6 + 0.16)
        assert!((x.values[10] - 0.76).abs() < 1e-12);
        // lag 8 is quarter 1
        assert!((x.values[17] - 0.62).abs() < 1e-12);
    }

    #[test]
    fn six_lags_gives_length_16() {
        let p = patient(12, true);
        let x = build_feature_vector(&p, 9, 6).unwrap();
        assert_eq!(x.values.len(), 16);
    }

    #[test]
    fn missing_ldl_rejected() {
        let p = patient(12, false);
        let err = build_feature_vector(&p, 9, 8).unwrap_err();
        assert!(err.to_string().contains("LDL"));
    }

    #[test]
    fn insufficient_history_rejected_with_minimum() {
        let p = patient(12, true);
        let err = build_feature_vector(&p, 8, 8).unwrap_err();
        assert!(err.to_string().contains("8 prior quarters"));
    }

    #[test]
    fn age_advances_with_quarter() {
        let p = patient(16, true);
        let x9 = build_feature_vector(&p, 9, 8).unwrap();
        let x13 = build_feature_vector(&p, 13, 8).unwrap();
        assert!((x13.values[4] - x9.values[4] - 1.0).abs() < 1e-12);
    }
}
