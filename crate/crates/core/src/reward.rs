//! Expected intervention rewards.
//!
//! A successful intervention at epoch t converts every remaining non-adherent
//! epoch into an adherent one, each worth a relative risk reduction `r`. With
//! `tau` counting the epochs in t..=T the patient would have been
//! non-adherent, the residual risk is `(1-r)^tau * CVD`, so the expected
//! total reduction is
//!
//!   a_it = CVD - q * sum_tau P(tau) (1-r)^tau * CVD,
//!
//! with `P(tau)` the Poisson-binomial count distribution over the per-epoch
//! non-adherence probabilities. Rewards are nonincreasing over epochs, with
//! marginal a_{t-1} - a_t = r * y_{t-1} * (CVD - a_t).

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forecast::ForecastHorizon;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InterventionParams {
    /// Probability an offered intervention succeeds.
    pub q: f64,
    /// Per-epoch relative risk reduction from induced adherence.
    pub r: f64,
}

impl Default for InterventionParams {
    fn default() -> Self {
        Self { q: 0.8, r: 0.1 }
    }
}

impl InterventionParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.q) || !(0.0..=1.0).contains(&self.r) {
            return Err(Error::InvalidInput(format!(
                "q {} and r {} must lie in [0, 1]",
                self.q, self.r
            )));
        }
        Ok(())
    }
}

/// Per-epoch non-adherence probabilities from the intervention epoch to the
/// horizon end, plus the patient's current 10-year CVD risk.
#[derive(Debug, Clone, PartialEq)]
pub struct NonAdherenceProfile {
    pub y_hat: Vec<f64>,
    pub cvd_risk: f64,
}

impl NonAdherenceProfile {
    pub fn validate(&self) -> Result<()> {
        if self.y_hat.is_empty() {
            return Err(Error::InvalidInput("profile must cover at least one epoch".into()));
        }
        if self.y_hat.iter().any(|y| !(0.0..=1.0).contains(y)) {
            return Err(Error::InvalidInput("y_hat entries must lie in [0, 1]".into()));
        }
        if !(0.0..=1.0).contains(&self.cvd_risk) {
            return Err(Error::InvalidInput(format!(
                "cvd_risk {} outside [0, 1]",
                self.cvd_risk
            )));
        }
        Ok(())
    }
}

/// Distribution of the number of non-adherent epochs; `probs[tau]` for
/// `tau = 0..=K`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountDistribution {
    pub probs: Vec<f64>,
}

/// Poisson-binomial over independent per-epoch non-adherence indicators,
/// built by the O(K²) convolution recurrence.
pub fn count_distribution(y_hat: &[f64]) -> Result<CountDistribution> {
    if y_hat.is_empty() {
        return Err(Error::InvalidInput("y_hat must cover at least one epoch".into()));
    }
    if y_hat.iter().any(|y| !(0.0..=1.0).contains(y)) {
        return Err(Error::InvalidInput("y_hat entries must lie in [0, 1]".into()));
    }
    let mut probs = vec![0.0; y_hat.len() + 1];
    probs[0] = 1.0;
    for (k, &y) in y_hat.iter().enumerate() {
        for tau in (0..=k + 1).rev() {
            let stay = probs[tau] * (1.0 - y);
            let step = if tau > 0 { probs[tau - 1] * y } else { 0.0 };
            probs[tau] = stay + step;
        }
    }
    Ok(CountDistribution { probs })
}

/// Expected total risk reduction when intervening at the first epoch the
/// profile covers.
pub fn expected_reward(profile: &NonAdherenceProfile, params: &InterventionParams) -> Result<f64> {
    profile.validate()?;
    params.validate()?;
    let dist = count_distribution(&profile.y_hat)?;
    let mut residual = 0.0;
    let mut decay = 1.0;
    for p in &dist.probs {
        residual += p * decay;
        decay *= 1.0 - params.r;
    }
    Ok(profile.cvd_risk - params.q * residual * profile.cvd_risk)
}

/// Marginal value of intervening one epoch earlier: for a profile covering
/// epochs `t-1..=T`, returns `a_{t-1} - a_t = r * y_{t-1} * (CVD - a_t)`.
pub fn marginal_reward(profile: &NonAdherenceProfile, params: &InterventionParams) -> Result<f64> {
    profile.validate()?;
    params.validate()?;
    if profile.y_hat.len() < 2 {
        return Err(Error::InvalidInput("marginal reward needs at least two epochs".into()));
    }
    let tail = NonAdherenceProfile {
        y_hat: profile.y_hat[1..].to_vec(),
        cvd_risk: profile.cvd_risk,
    };
    let a_next = expected_reward(&tail, params)?;
    Ok(params.r * profile.y_hat[0] * (profile.cvd_risk - a_next))
}

/// Rewards `a[i][t-1]` for intervening on patient i at epoch t (1-based
/// epochs 1..=T). Rows are nonincreasing in t.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardMatrix {
    pub patient_ids: Vec<String>,
    pub a: Vec<Vec<f64>>,
}

impl RewardMatrix {
    pub fn n_patients(&self) -> usize {
        self.a.len()
    }

    pub fn horizon(&self) -> usize {
        self.a.first().map_or(0, Vec::len)
    }
}

/// Computes a_it for every patient and epoch covered by `forecasts`
/// (epochs are whatever granularity the horizon carries). Row monotonicity
/// is validated before returning.
pub fn reward_matrix(
    forecasts: &ForecastHorizon,
    risks: &[f64],
    params: &InterventionParams,
) -> Result<RewardMatrix> {
    forecasts.validate()?;
    params.validate()?;
    if risks.len() != forecasts.patient_ids.len() {
        return Err(Error::InvalidInput(format!(
            "{} risks for {} patients",
            risks.len(),
            forecasts.patient_ids.len()
        )));
    }
    let horizon = forecasts.n_epochs();
    let mut a = Vec::with_capacity(risks.len());
    for (row, &risk) in forecasts.probabilities.iter().zip(risks) {
        let mut patient_rewards = Vec::with_capacity(horizon);
        for t in 0..horizon {
            let profile = NonAdherenceProfile { y_hat: row[t..].to_vec(), cvd_risk: risk };
            patient_rewards.push(expected_reward(&profile, params)?);
        }
        for t in 1..horizon {
            if patient_rewards[t] > patient_rewards[t - 1] + 1e-9 {
                return Err(Error::InternalInconsistency(format!(
                    "reward row increases at epoch {}: {} -> {}",
                    t,
                    patient_rewards[t - 1],
                    patient_rewards[t]
                )));
            }
        }
        a.push(patient_rewards);
    }
    Ok(RewardMatrix { patient_ids: forecasts.patient_ids.clone(), a })
}

/// Exports `patient_id,epoch,a_it` rows for audit.
pub fn write_rewards_csv(rewards: &RewardMatrix, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["patient_id", "epoch", "a_it"])?;
    for (id, row) in rewards.patient_ids.iter().zip(&rewards.a) {
        for (t, a) in row.iter().enumerate() {
            w.write_record([id.as_str(), &(t + 1).to_string(), &a.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads a rewards CSV back into a matrix (patients ordered by first
/// appearance; epochs must be contiguous from 1).
pub fn read_rewards_csv(path: &Path) -> Result<RewardMatrix> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let mut patient_ids: Vec<String> = Vec::new();
    let mut a: Vec<Vec<f64>> = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record?;
        let malformed = |m: String| Error::MalformedRow { row, message: m };
        if record.len() != 3 {
            return Err(malformed(format!("expected 3 fields, got {}", record.len())));
        }
        let id = record[0].to_string();
        let epoch: usize =
            record[1].parse().map_err(|e| malformed(format!("epoch: {e}")))?;
        let value: f64 = record[2].parse().map_err(|e| malformed(format!("a_it: {e}")))?;
        let idx = match patient_ids.iter().position(|p| *p == id) {
            Some(idx) => idx,
            None => {
                patient_ids.push(id);
                a.push(Vec::new());
                a.len() - 1
            }
        };
        if epoch != a[idx].len() + 1 {
            return Err(malformed(format!(
                "epoch {epoch} out of order for patient {}",
                patient_ids[idx]
            )));
        }
        a[idx].push(value);
    }
    if a.is_empty() {
        return Err(Error::InvalidInput("empty rewards file".into()));
    }
    let horizon = a[0].len();
    if a.iter().any(|row| row.len() != horizon) {
        return Err(Error::InvalidInput("patients cover different horizons".into()));
    }
    Ok(RewardMatrix { patient_ids, a })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    /// Enumerates all 2^K adherence paths; the count-distribution oracle.
    fn enumeration_oracle(y_hat: &[f64]) -> Vec<f64> {
        let k = y_hat.len();
        let mut probs = vec![0.0; k + 1];
        for mask in 0u32..(1 << k) {
            let mut p = 1.0;
            let mut tau = 0;
            for (e, &y) in y_hat.iter().enumerate() {
                if mask & (1 << e) != 0 {
                    p *= y;
                    tau += 1;
                } else {
                    p *= 1.0 - y;
                }
            }
            probs[tau] += p;
        }
        probs
    }

    #[test]
    fn certain_adherence_concentrates_at_zero() {
        let dist = count_distribution(&[0.0, 0.0, 0.0]).unwrap();
        assert_eq!(dist.probs, vec![1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn symmetric_binomial() {
        let dist = count_distribution(&[0.5, 0.5]).unwrap();
        for (got, want) in dist.probs.iter().zip([0.25, 0.5, 0.25]) {
            assert_relative_eq!(*got, want, epsilon = 1e-15);
        }
    }

    #[test]
    fn two_epoch_example_matches_path_enumeration() {
        let y = [0.2, 0.7];
        let dist = count_distribution(&y).unwrap();
        let oracle = enumeration_oracle(&y);
        assert_relative_eq!(dist.probs[0], 0.24, epsilon = 1e-12);
        assert_relative_eq!(dist.probs[1], 0.62, epsilon = 1e-12);
        assert_relative_eq!(dist.probs[2], 0.14, epsilon = 1e-12);
        for (got, want) in dist.probs.iter().zip(&oracle) {
            assert_relative_eq!(*got, *want, epsilon = 1e-12);
        }
    }

    #[test]
    fn out_of_range_probability_rejected() {
        assert!(count_distribution(&[0.5, 1.2]).is_err());
        assert!(count_distribution(&[-0.1]).is_err());
    }

    #[test]
    fn distribution_sums_to_one_and_matches_oracle() {
        let mut seq = 0.29_f64;
        for trial in 0..200 {
            let k = 1 + trial % 12;
            let y: Vec<f64> = (0..k)
                .map(|_| {
                    seq = (seq * 997.0 + 0.3).fract();
                    seq
                })
                .collect();
            let dist = count_distribution(&y).unwrap();
            let total: f64 = dist.probs.iter().sum();
            assert!((total - 1.0).abs() < 1e-12, "sum {total}");
            for (got, want) in dist.probs.iter().zip(enumeration_oracle(&y)) {
                assert!((got - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn certain_success_with_no_risk_effect_gives_zero_reward() {
        let profile = NonAdherenceProfile { y_hat: vec![0.3, 0.8, 0.5], cvd_risk: 0.4 };
        let a = expected_reward(&profile, &InterventionParams { q: 1.0, r: 0.0 }).unwrap();
        assert_relative_eq!(a, 0.0, epsilon = 1e-15);
    }

    #[test]
    fn final_epoch_closed_form() {
        // t = T: a = CVD - (P0 + P1*(1-r)) * CVD = r * y_T * CVD
        let profile = NonAdherenceProfile { y_hat: vec![0.6], cvd_risk: 0.2 };
        let a = expected_reward(&profile, &InterventionParams { q: 1.0, r: 0.1 }).unwrap();
        assert_relative_eq!(a, 0.012, epsilon = 1e-12);
        assert_relative_eq!(a, 0.2 - (0.4 * 0.2 + 0.6 * 0.9 * 0.2), epsilon = 1e-12);
    }

    #[test]
    fn two_epoch_reward_matches_direct_expansion() {
        // Direct five-term expansion over the four adherence paths.
        let (y1, y2, cvd, r) = (0.35, 0.6, 0.25, 0.1);
        let direct = cvd
            - (1.0 - y1) * (1.0 - y2) * cvd
            - y1 * (1.0 - y2) * (1.0 - r) * cvd
            - (1.0 - y1) * y2 * (1.0 - r) * cvd
            - y1 * y2 * (1.0 - r) * (1.0 - r) * cvd;
        let profile = NonAdherenceProfile { y_hat: vec![y1, y2], cvd_risk: cvd };
        let a = expected_reward(&profile, &InterventionParams { q: 1.0, r }).unwrap();
        assert_relative_eq!(a, direct, epsilon = 1e-12);
    }

    #[test]
    fn marginal_zero_cases() {
        let params = InterventionParams { q: 1.0, r: 0.1 };
        let no_gap = NonAdherenceProfile { y_hat: vec![0.0, 0.5], cvd_risk: 0.3 };
        assert_relative_eq!(marginal_reward(&no_gap, &params).unwrap(), 0.0);
        let no_effect = NonAdherenceProfile { y_hat: vec![0.5, 0.5], cvd_risk: 0.3 };
        assert_relative_eq!(
            marginal_reward(&no_effect, &InterventionParams { q: 1.0, r: 0.0 }).unwrap(),
            0.0
        );
    }

    #[test]
    fn marginal_equals_two_call_subtraction() {
        let params = InterventionParams { q: 1.0, r: 0.1 };
        let profile = NonAdherenceProfile { y_hat: vec![0.5, 0.6], cvd_risk: 0.2 };
        let m = marginal_reward(&profile, &params).unwrap();
        assert_relative_eq!(m, 0.1 * 0.5 * (0.2 - 0.012), epsilon = 1e-12);
        assert_relative_eq!(m, 0.0094, epsilon = 1e-12);
        let a_early = expected_reward(&profile, &params).unwrap();
        let a_late = expected_reward(
            &NonAdherenceProfile { y_hat: vec![0.6], cvd_risk: 0.2 },
            &params,
        )
        .unwrap();
        assert_relative_eq!(m, a_early - a_late, epsilon = 1e-12);
    }

    fn horizon_from(probabilities: Vec<Vec<f64>>) -> ForecastHorizon {
        let t = probabilities[0].len();
        ForecastHorizon {
            patient_ids: (0..probabilities.len()).map(|i| format!("p{i}")).collect(),
            probabilities,
            origin_epoch: 1,
            horizon_end: t,
        }
    }

    #[test]
    fn reward_matrix_zero_when_never_non_adherent() {
        // With certain success, intervening on a patient who would always
        // adhere anyway reduces nothing.
        let forecasts = horizon_from(vec![vec![1e-12, 1e-12, 1e-12]; 2]);
        let params = InterventionParams { q: 1.0, r: 0.1 };
        let m = reward_matrix(&forecasts, &[0.3, 0.5], &params).unwrap();
        for row in &m.a {
            for &v in row {
                assert!(v.abs() < 1e-10);
            }
        }
    }

    #[test]
    fn reward_matrix_row_equals_direct_calls() {
        let forecasts = horizon_from(vec![vec![0.4, 0.3, 0.7]]);
        let params = InterventionParams::default();
        let m = reward_matrix(&forecasts, &[0.22], &params).unwrap();
        for t in 0..3 {
            let profile = NonAdherenceProfile {
                y_hat: forecasts.probabilities[0][t..].to_vec(),
                cvd_risk: 0.22,
            };
            assert_relative_eq!(m.a[0][t], expected_reward(&profile, &params).unwrap());
        }
    }

    #[test]
    fn adjacent_differences_satisfy_marginal_identity() {
        let mut seq = 0.61_f64;
        let mut probabilities = Vec::new();
        for _ in 0..5 {
            let row: Vec<f64> = (0..4)
                .map(|_| {
                    seq = (seq * 997.0 + 0.3).fract();
                    seq.clamp(1e-9, 1.0 - 1e-9)
                })
                .collect();
            probabilities.push(row);
        }
        let forecasts = horizon_from(probabilities);
        let params = InterventionParams { q: 0.85, r: 0.09 };
        let risks = [0.1, 0.3, 0.2, 0.4, 0.15];
        let m = reward_matrix(&forecasts, &risks, &params).unwrap();
        for (i, row) in m.a.iter().enumerate() {
            for t in 1..row.len() {
                let expected =
                    params.r * forecasts.probabilities[i][t - 1] * (risks[i] - row[t]);
                assert!(
                    (row[t - 1] - row[t] - expected).abs() < 1e-9,
                    "patient {i} epoch {t}"
                );
            }
        }
    }

    #[test]
    fn rewards_csv_roundtrip() {
        let forecasts = horizon_from(vec![vec![0.4, 0.3], vec![0.2, 0.6]]);
        let m = reward_matrix(&forecasts, &[0.22, 0.3], &InterventionParams::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rewards.csv");
        write_rewards_csv(&m, &path).unwrap();
        let loaded = read_rewards_csv(&path).unwrap();
        assert_eq!(loaded.patient_ids, m.patient_ids);
        for (a, b) in loaded.a.iter().flatten().zip(m.a.iter().flatten()) {
            assert_relative_eq!(a, b, epsilon = 1e-12);
        }
    }
}
