//! Patient data model: claims, biometrics, quarterly adherence history, and
//! cohort-level containers.
//!
//! Adherence is measured by percentage-days-covered (PDC) per quarter; a
//! quarter is adherent when PDC meets the cohort threshold (default 0.8), and
//! a year is non-adherent when at least two of its four quarters are.

mod features;
mod generator;
mod io;
mod pdc;

pub use features::{build_feature_vector, yearly_mean_pdc, yearly_truth_label};
pub use generator::{generate_synthetic_cohort, GeneratorConfig, Table2Params, Table3Coefficients};
pub use io::{
    assemble_cohort, load_cohort, read_biometrics_csv, read_claims_csv, save_cohort,
    write_claims_csv, COHORT_SCHEMA_VERSION,
};
pub use pdc::{compute_pdc, label_adherence_quarter, label_adherence_year};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sex {
    Male,
    Female,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Race {
    White,
    Black,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemographicProfile {
    pub sex: Sex,
    pub race: Race,
    pub smoker: bool,
    /// Age in years at the first recorded quarter.
    pub age_years: f64,
}

/// One pharmacy fill: the supply runs `days_supply` days from `fill_date`,
/// pushed forward past any supply still on hand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClaimRecord {
    pub patient_id: String,
    pub fill_date: NaiveDate,
    pub days_supply: u32,
}

impl ClaimRecord {
    pub fn validate(&self) -> Result<()> {
        if self.days_supply == 0 {
            return Err(Error::InvalidInput("days_supply must be positive".into()));
        }
        if self.days_supply > 365 {
            return Err(Error::InvalidInput(format!(
                "days_supply {} exceeds 365",
                self.days_supply
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BiometricKind {
    #[serde(rename = "SBP")]
    Sbp,
    #[serde(rename = "LDL")]
    Ldl,
    #[serde(rename = "total_cholesterol")]
    TotalCholesterol,
}

impl BiometricKind {
    /// Plausibility bounds enforced at ingestion.
    pub fn bounds(self) -> (f64, f64) {
        match self {
            BiometricKind::Sbp => (60.0, 260.0),
            BiometricKind::Ldl => (20.0, 400.0),
            BiometricKind::TotalCholesterol => (60.0, 500.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiometricRecord {
    pub patient_id: String,
    pub date: NaiveDate,
    pub kind: BiometricKind,
    pub value: f64,
}

impl BiometricRecord {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.kind.bounds();
        if !(self.value > 0.0 && (lo..=hi).contains(&self.value)) {
            return Err(Error::InvalidInput(format!(
                "{:?} value {} outside plausible range [{lo}, {hi}]",
                self.kind, self.value
            )));
        }
        Ok(())
    }
}

/// One quarter of observed history. Biometric fields are `None` when no
/// measurement exists up to and including that quarter's window; feature
/// assembly carries the last observation forward.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuarterlyRecord {
    /// 1-based quarter index, contiguous from 1.
    pub quarter_index: usize,
    pub pdc: f64,
    pub adherent: bool,
    pub sbp: Option<f64>,
    pub ldl: Option<f64>,
    pub total_cholesterol: Option<f64>,
    /// Cumulative blood-pressure tests through the end of this quarter.
    pub n_bp_tests_cum: u32,
    /// Cumulative cholesterol tests through the end of this quarter.
    pub n_chol_tests_cum: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Patient {
    pub id: String,
    pub demographics: DemographicProfile,
    /// 10-year CVD event probability at the start of the record.
    pub baseline_cvd_risk: f64,
    /// Per-patient random intercept used by the generating model.
    pub random_effect: f64,
    /// Ordered quarterly history, indexed contiguously from 1.
    pub quarters: Vec<QuarterlyRecord>,
    /// 10-year CVD risk as seen in the data at the start of each year
    /// (index 0 = year 1). Stands in for the risk a clinician would read
    /// off the chart when no intervention is in place.
    #[serde(default)]
    pub risk_path: Vec<f64>,
}

impl Patient {
    /// Risk as seen in the data at the start of 1-based `year`; falls back to
    /// the last known value (or baseline) beyond the stored path.
    pub fn data_risk_at_year(&self, year: usize) -> f64 {
        if self.risk_path.is_empty() {
            return self.baseline_cvd_risk;
        }
        let idx = year.saturating_sub(1).min(self.risk_path.len() - 1);
        self.risk_path[idx]
    }

    pub fn n_quarters(&self) -> usize {
        self.quarters.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cohort {
    pub patients: Vec<Patient>,
    pub adherence_threshold: f64,
    pub quarter_length_days: u32,
}

impl Cohort {
    /// Checks the structural invariants every cohort must satisfy.
    pub fn validate(&self) -> Result<()> {
        if !(self.adherence_threshold > 0.0 && self.adherence_threshold <= 1.0) {
            return Err(Error::InvalidInput(format!(
                "adherence_threshold {} outside (0, 1]",
                self.adherence_threshold
            )));
        }
        let mut ids = std::collections::BTreeSet::new();
        for p in &self.patients {
            if !ids.insert(p.id.as_str()) {
                return Err(Error::InvalidInput(format!("duplicate patient id {}", p.id)));
            }
            if p.quarters.len() < 4 {
                return Err(Error::InsufficientHistory(format!(
                    "patient {} has {} quarters; at least 4 required",
                    p.id,
                    p.quarters.len()
                )));
            }
            if !(0.0..=1.0).contains(&p.baseline_cvd_risk) {
                return Err(Error::InvalidInput(format!(
                    "patient {} baseline risk {} outside [0, 1]",
                    p.id, p.baseline_cvd_risk
                )));
            }
            let mut prev_bp = 0u32;
            let mut prev_chol = 0u32;
            for (k, q) in p.quarters.iter().enumerate() {
                if q.quarter_index != k + 1 {
                    return Err(Error::InvalidInput(format!(
                        "patient {} quarters not contiguous at index {}",
                        p.id,
                        k + 1
                    )));
                }
                if !(0.0..=1.0).contains(&q.pdc) {
                    return Err(Error::InvalidInput(format!(
                        "patient {} quarter {} pdc {} outside [0, 1]",
                        p.id, q.quarter_index, q.pdc
                    )));
                }
                if q.adherent != (q.pdc >= self.adherence_threshold) {
                    return Err(Error::InvalidInput(format!(
                        "patient {} quarter {} adherent flag inconsistent with pdc",
                        p.id, q.quarter_index
                    )));
                }
                if q.n_bp_tests_cum < prev_bp || q.n_chol_tests_cum < prev_chol {
                    return Err(Error::InvalidInput(format!(
                        "patient {} cumulative test counts decrease at quarter {}",
                        p.id, q.quarter_index
                    )));
                }
                prev_bp = q.n_bp_tests_cum;
                prev_chol = q.n_chol_tests_cum;
            }
        }
        Ok(())
    }

    pub fn n_patients(&self) -> usize {
        self.patients.len()
    }

    /// Number of whole years of stored history (quarters / 4, floored).
    pub fn n_years(&self) -> usize {
        self.patients
            .iter()
            .map(|p| p.quarters.len() / 4)
            .min()
            .unwrap_or(0)
    }
}
