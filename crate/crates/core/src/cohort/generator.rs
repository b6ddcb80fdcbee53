//! Synthetic cohort generation calibrated to the reference population.
//!
//! Demographics, biometrics and baseline risk are drawn from configurable
//! population targets; quarterly adherence is then generated by a
//! ground-truth logistic model applied to the evolving feature vector, which
//! induces the autocorrelated PDC behavior the forecaster is meant to learn.
//! Each patient gets an independent RNG stream derived from the master seed,
//! so generation is parallel yet bit-identical to a sequential run.

use rand::Rng;
use rand_distr::{Beta, Distribution, Normal, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Cohort, DemographicProfile, Patient, QuarterlyRecord, Race, Sex};
use crate::error::{Error, Result};
use crate::rng;

/// Population proportions for the four demographic groups. Any remainder is
/// reassigned proportionally when the four do not sum to 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DemographicProportions {
    pub white_male: f64,
    pub black_male: f64,
    pub white_female: f64,
    pub black_female: f64,
}

impl Default for DemographicProportions {
    fn default() -> Self {
        Self {
            white_male: 0.70,
            black_male: 0.20,
            white_female: 0.065,
            black_female: 0.02,
        }
    }
}

/// Population moments for covariate generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Table2Params {
    pub age_mean: f64,
    pub age_sd: f64,
    pub smoker_rate: f64,
    pub sbp_mean: f64,
    pub sbp_sd: f64,
    pub ldl_mean: f64,
    pub ldl_sd: f64,
    pub total_chol_mean: f64,
    pub total_chol_sd: f64,
    /// Correlation between LDL and total cholesterol.
    pub ldl_total_chol_corr: f64,
    /// Class-conditional quarterly PDC when adherent / non-adherent.
    pub pdc_adherent_mean: f64,
    pub pdc_adherent_sd: f64,
    pub pdc_nonadherent_mean: f64,
    pub pdc_nonadherent_sd: f64,
    /// Expected tests per quarter. Kept low so the cumulative-count
    /// covariates do not drift the generating model over the horizon
    /// (their coefficients nearly cancel at these rates).
    pub bp_tests_per_quarter: f64,
    pub chol_tests_per_quarter: f64,
    /// Gamma shape of the per-patient testing-rate heterogeneity; the
    /// reference population's count SDs are on the order of their means,
    /// which corresponds to a small shape. Rates vary per patient but are
    /// observed through the cumulative-count covariates.
    pub test_rate_shape: f64,
}

impl Default for Table2Params {
    fn default() -> Self {
        Self {
            age_mean: 62.0,
            age_sd: 11.0,
            smoker_rate: 0.22,
            sbp_mean: 129.4,
            sbp_sd: 9.2,
            ldl_mean: 112.0,
            ldl_sd: 28.0,
            total_chol_mean: 186.5,
            total_chol_sd: 33.0,
            ldl_total_chol_corr: 0.87,
            pdc_adherent_mean: 0.90,
            pdc_adherent_sd: 0.05,
            pdc_nonadherent_mean: 0.63,
            pdc_nonadherent_sd: 0.15,
            bp_tests_per_quarter: 0.5,
            chol_tests_per_quarter: 0.55,
            test_rate_shape: 1.5,
        }
    }
}

/// Ground-truth logistic coefficients for quarterly non-adherence, in the
/// standard covariate order (intercept first, then PDC lags most-recent
/// first).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Table3Coefficients {
    pub intercept: f64,
    pub sex_male: f64,
    pub race_white: f64,
    pub smoker: f64,
    pub age_years: f64,
    pub sbp: f64,
    pub n_bp_tests: f64,
    pub ldl: f64,
    pub total_cholesterol: f64,
    pub n_chol_tests: f64,
    pub pdc_lags: Vec<f64>,
}

impl Default for Table3Coefficients {
    fn default() -> Self {
        Self {
            intercept: 3.449,
            sex_male: -0.285,
            race_white: -0.324,
            smoker: 0.062,
            age_years: 4.22e-3,
            sbp: 7.69e-5,
            n_bp_tests: 0.105,
            ldl: 5.55e-3,
            total_cholesterol: 1.37e-3,
            n_chol_tests: -0.093,
            pdc_lags: vec![-0.755, -0.707, -0.190, -0.420, -0.296, -0.091, -0.221, -0.033],
        }
    }
}

impl Table3Coefficients {
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = vec![
            self.intercept,
            self.sex_male,
            self.race_white,
            self.smoker,
            self.age_years,
            self.sbp,
            self.n_bp_tests,
            self.ldl,
            self.total_cholesterol,
            self.n_chol_tests,
        ];
        v.extend_from_slice(&self.pdc_lags);
        v
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorConfig {
    pub n: usize,
    pub seed: u64,
    /// Total quarters of history per patient (default 36 = 9 years).
    pub n_quarters: usize,
    pub adherence_threshold: f64,
    pub quarter_length_days: u32,
    /// SD of the per-patient random intercept.
    pub sigma_u: f64,
    pub demographic_proportions: DemographicProportions,
    pub table2_overrides: Table2Params,
    pub table3_coefficients: Table3Coefficients,
    /// Calibration shift added to the ground-truth intercept so the cohort's
    /// quarterly non-adherence rate lands near the population target under
    /// the synthetic covariate scales. Slope coefficients are untouched.
    pub intercept_shift: f64,
    /// Mean and concentration of the Beta distribution for baseline 10-year
    /// CVD risk.
    pub risk_mean: f64,
    pub risk_concentration: f64,
    /// Relative drift per year of the as-seen-in-data risk path (0 keeps the
    /// path centered at baseline).
    pub risk_drift_per_year: f64,
    /// SD of the mean-preserving multiplicative year-to-year noise on the
    /// risk path: risk factors evolve, so the risk a clinician reads off the
    /// chart wanders around baseline and patients' relative ordering shifts
    /// over the horizon.
    pub risk_walk_sd: f64,
    pub pdc_lag_window: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            n: 1000,
            seed: 0,
            n_quarters: 36,
            adherence_threshold: 0.8,
            quarter_length_days: 91,
            sigma_u: 0.6,
            demographic_proportions: DemographicProportions::default(),
            table2_overrides: Table2Params::default(),
            table3_coefficients: Table3Coefficients::default(),
            intercept_shift: -2.9,
            risk_mean: 0.17,
            risk_concentration: 20.0,
            risk_drift_per_year: 0.0,
            risk_walk_sd: 0.10,
            pdc_lag_window: 8,
        }
    }
}

fn logistic(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn truncated_normal<R: Rng>(rng: &mut R, mean: f64, sd: f64, lo: f64, hi: f64) -> f64 {
    let dist = Normal::new(mean, sd).expect("valid normal");
    for _ in 0..100 {
        let x = dist.sample(rng);
        if (lo..=hi).contains(&x) {
            return x;
        }
    }
    dist.sample(rng).clamp(lo, hi)
}

fn generate_patient(cfg: &GeneratorConfig, index: usize) -> Patient {
    let mut rng = rng::stream(cfg.seed, &[0x636f_686f, index as u64]);
    let t2 = &cfg.table2_overrides;
    let props = &cfg.demographic_proportions;

    let total = props.white_male + props.black_male + props.white_female + props.black_female;
    let draw = rng.gen::<f64>() * total;
    let (sex, race) = if draw < props.white_male {
        (Sex::Male, Race::White)
    } else if draw < props.white_male + props.black_male {
        (Sex::Male, Race::Black)
    } else if draw < props.white_male + props.black_male + props.white_female {
        (Sex::Female, Race::White)
    } else {
        (Sex::Female, Race::Black)
    };
    let smoker = rng.gen::<f64>() < t2.smoker_rate;
    let age_years = truncated_normal(&mut rng, t2.age_mean, t2.age_sd, 40.0, 80.0);
    let demographics = DemographicProfile { sex, race, smoker, age_years };

    let u = Normal::new(0.0, cfg.sigma_u).expect("valid normal").sample(&mut rng);

    let alpha = cfg.risk_mean * cfg.risk_concentration;
    let beta_p = (1.0 - cfg.risk_mean) * cfg.risk_concentration;
    let baseline_risk = Beta::new(alpha, beta_p)
        .expect("valid beta")
        .sample(&mut rng)
        .clamp(0.005, 0.95);

    // The class-conditional PDC spread is mostly between patients (habits
    // persist); split each class SD into a persistent personal offset and
    // smaller quarterly noise.
    let adh_offset = Normal::new(0.0, 0.90 * t2.pdc_adherent_sd)
        .expect("valid normal")
        .sample(&mut rng);
    let non_offset = Normal::new(0.0, 0.90 * t2.pdc_nonadherent_sd)
        .expect("valid normal")
        .sample(&mut rng);

    // Per-patient testing rates, Gamma-distributed around the population
    // means. Monitoring frequency differs a lot between patients and its
    // cumulative counts are model covariates, so this heterogeneity is
    // observed rather than latent.
    let gamma = |mean: f64, rng: &mut rand_chacha::ChaCha8Rng| -> f64 {
        let shape = t2.test_rate_shape.max(0.05);
        rand_distr::Gamma::new(shape, mean / shape)
            .expect("valid gamma")
            .sample(rng)
            .clamp(0.0, 20.0)
    };
    let bp_rate = gamma(t2.bp_tests_per_quarter, &mut rng);
    let chol_rate = gamma(t2.chol_tests_per_quarter, &mut rng);

    // Baseline biometrics; LDL and total cholesterol share a latent factor to
    // hit the target correlation.
    let mut sbp = truncated_normal(&mut rng, t2.sbp_mean, t2.sbp_sd, 60.0, 260.0);
    let rho = t2.ldl_total_chol_corr;
    let z1: f64 = Normal::new(0.0, 1.0).unwrap().sample(&mut rng);
    let z2: f64 = Normal::new(0.0, 1.0).unwrap().sample(&mut rng);
    let mut ldl = (t2.ldl_mean + t2.ldl_sd * z1).clamp(20.0, 400.0);
    let mut total_chol = (t2.total_chol_mean
        + t2.total_chol_sd * (rho * z1 + (1.0 - rho * rho).sqrt() * z2))
        .clamp(60.0, 500.0);
    let (ldl_anchor, chol_anchor) = (ldl, total_chol);

    let beta = {
        let mut b = cfg.table3_coefficients.to_vec();
        b[0] += cfg.intercept_shift;
        b
    };
    let lags = cfg.pdc_lag_window.min(beta.len() - 10);
    let threshold = cfg.adherence_threshold;
    // Steady-state fill for lags not yet observed during burn-in.
    let pdc_fill = 0.8 * t2.pdc_adherent_mean + 0.2 * t2.pdc_nonadherent_mean;

    let mut quarters = Vec::with_capacity(cfg.n_quarters);
    let mut pdc_history: Vec<f64> = Vec::with_capacity(cfg.n_quarters);
    let mut bp_cum = 0u32;
    let mut chol_cum = 0u32;
    for qt in 1..=cfg.n_quarters {
        // Linear predictor from the state at the end of quarter qt-1; mirrors
        // the feature assembly used at fit time.
        let mut lp = beta[0]
            + beta[1] * if sex == Sex::Male { 1.0 } else { 0.0 }
            + beta[2] * if race == Race::White { 1.0 } else { 0.0 }
            + beta[3] * if smoker { 1.0 } else { 0.0 }
            + beta[4] * (age_years + (qt - 1) as f64 / 4.0)
            + beta[5] * sbp
            + beta[6] * f64::from(bp_cum)
            + beta[7] * ldl
            + beta[8] * total_chol
            + beta[9] * f64::from(chol_cum);
        for lag in 1..=lags {
            let v = if pdc_history.len() >= lag {
                pdc_history[pdc_history.len() - lag]
            } else {
                pdc_fill
            };
            lp += beta[9 + lag] * v;
        }
        lp += u;

        let non_adherent = rng.gen::<f64>() < logistic(lp);
        let pdc = if non_adherent {
            truncated_normal(
                &mut rng,
                t2.pdc_nonadherent_mean + non_offset,
                0.436 * t2.pdc_nonadherent_sd,
                0.0,
                threshold - 1e-9,
            )
        } else {
            truncated_normal(
                &mut rng,
                t2.pdc_adherent_mean + adh_offset,
                0.436 * t2.pdc_adherent_sd,
                threshold,
                1.0,
            )
        };
        pdc_history.push(pdc);

        // Evolve state into quarter qt: mean-reverting biometric noise and
        // Poisson test-count increments.
        sbp = (sbp + 0.1 * (t2.sbp_mean - sbp)
            + Normal::new(0.0, 2.0).unwrap().sample(&mut rng))
        .clamp(60.0, 260.0);
        let e1: f64 = Normal::new(0.0, 1.0).unwrap().sample(&mut rng);
        let e2: f64 = Normal::new(0.0, 1.0).unwrap().sample(&mut rng);
        ldl = (ldl + 0.1 * (ldl_anchor - ldl) + 2.0 * e1).clamp(20.0, 400.0);
        total_chol = (total_chol
            + 0.1 * (chol_anchor - total_chol)
            + 2.4 * (rho * e1 + (1.0 - rho * rho).sqrt() * e2))
            .clamp(60.0, 500.0);
        if bp_rate > 0.0 {
            bp_cum += Poisson::new(bp_rate).unwrap().sample(&mut rng) as u32;
        }
        if chol_rate > 0.0 {
            chol_cum += Poisson::new(chol_rate).unwrap().sample(&mut rng) as u32;
        }

        quarters.push(QuarterlyRecord {
            quarter_index: qt,
            pdc,
            adherent: !non_adherent,
            sbp: Some(sbp),
            ldl: Some(ldl),
            total_cholesterol: Some(total_chol),
            n_bp_tests_cum: bp_cum,
            n_chol_tests_cum: chol_cum,
        });
    }

    let n_years = cfg.n_quarters / 4;
    let mut risk_path = Vec::with_capacity(n_years);
    let mut risk = baseline_risk;
    let walk = cfg.risk_walk_sd;
    for _ in 0..n_years {
        risk_path.push(risk);
        let shock = if walk > 0.0 {
            // Lognormal multiplicative noise with unit mean.
            let z: f64 = Normal::new(0.0, 1.0).unwrap().sample(&mut rng);
            (walk * z - 0.5 * walk * walk).exp()
        } else {
            1.0
        };
        risk = (risk * (1.0 + cfg.risk_drift_per_year) * shock).clamp(0.002, 0.98);
    }

    Patient {
        id: format!("P{index:06}"),
        demographics,
        baseline_cvd_risk: baseline_risk,
        random_effect: u,
        quarters,
        risk_path,
    }
}

/// Generates a cohort of `cfg.n` patients, deterministically for a given
/// seed and independently of thread count.
pub fn generate_synthetic_cohort(cfg: &GeneratorConfig) -> Result<Cohort> {
    if cfg.n == 0 {
        return Err(Error::InvalidInput("cohort size n must be at least 1".into()));
    }
    if cfg.n_quarters < cfg.pdc_lag_window + 4 {
        return Err(Error::InvalidInput(format!(
            "n_quarters {} too short for pdc_lag_window {}",
            cfg.n_quarters, cfg.pdc_lag_window
        )));
    }
    if !(cfg.adherence_threshold > 0.0 && cfg.adherence_threshold <= 1.0) {
        return Err(Error::InvalidInput("adherence_threshold outside (0, 1]".into()));
    }
    let patients: Vec<Patient> = (0..cfg.n)
        .into_par_iter()
        .map(|i| generate_patient(cfg, i))
        .collect();
    let cohort = Cohort {
        patients,
        adherence_threshold: cfg.adherence_threshold,
        quarter_length_days: cfg.quarter_length_days,
    };
    cohort.validate()?;
    Ok(cohort)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_is_bit_identical() {
        let cfg = GeneratorConfig { n: 200, seed: 7, ..Default::default() };
        let a = generate_synthetic_cohort(&cfg).unwrap();
        let b = generate_synthetic_cohort(&cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn different_seeds_differ() {
        let a = generate_synthetic_cohort(&GeneratorConfig { n: 50, seed: 1, ..Default::default() })
            .unwrap();
        let b = generate_synthetic_cohort(&GeneratorConfig { n: 50, seed: 2, ..Default::default() })
            .unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn zero_patients_rejected() {
        assert!(generate_synthetic_cohort(&GeneratorConfig { n: 0, ..Default::default() }).is_err());
    }

    #[test]
    fn demographic_mix_tracks_targets() {
        let cfg = GeneratorConfig { n: 10_000, seed: 1, ..Default::default() };
        let cohort = generate_synthetic_cohort(&cfg).unwrap();
        let wm = cohort
            .patients
            .iter()
            .filter(|p| p.demographics.sex == Sex::Male && p.demographics.race == Race::White)
            .count() as f64
            / cohort.n_patients() as f64;
        assert!((wm - 0.70).abs() <= 0.02, "white-male fraction {wm}");
    }

    #[test]
    fn lag1_pdc_autocorrelation_in_band() {
        let cfg = GeneratorConfig { n: 10_000, seed: 1, ..Default::default() };
        let cohort = generate_synthetic_cohort(&cfg).unwrap();
        let (mut xs, mut ys) = (Vec::new(), Vec::new());
        for p in &cohort.patients {
            for w in p.quarters.windows(2) {
                xs.push(w[0].pdc);
                ys.push(w[1].pdc);
            }
        }
        let n = xs.len() as f64;
        let mx = xs.iter().sum::<f64>() / n;
        let my = ys.iter().sum::<f64>() / n;
        let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
        for (x, y) in xs.iter().zip(&ys) {
            sxy += (x - mx) * (y - my);
            sxx += (x - mx) * (x - mx);
            syy += (y - my) * (y - my);
        }
        let corr = sxy / (sxx.sqrt() * syy.sqrt());
        assert!(
            (0.45..=0.85).contains(&corr),
            "lag-1 PDC autocorrelation {corr} outside [0.45, 0.85]"
        );
    }

    #[test]
    fn cholesterol_correlation_near_target() {
        let cfg = GeneratorConfig { n: 4_000, seed: 3, ..Default::default() };
        let cohort = generate_synthetic_cohort(&cfg).unwrap();
        let (mut xs, mut ys) = (Vec::new(), Vec::new());
        for p in &cohort.patients {
            let q = &p.quarters[0];
            xs.push(q.ldl.unwrap());
            ys.push(q.total_cholesterol.unwrap());
        }
        let n = xs.len() as f64;
        let mx = xs.iter().sum::<f64>() / n;
        let my = ys.iter().sum::<f64>() / n;
        let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
        for (x, y) in xs.iter().zip(&ys) {
            sxy += (x - mx) * (y - my);
            sxx += (x - mx) * (x - mx);
            syy += (y - my) * (y - my);
        }
        let corr = sxy / (sxx.sqrt() * syy.sqrt());
        assert!((corr - 0.87).abs() < 0.05, "LDL/TC correlation {corr}");
    }

    #[test]
    fn risk_mean_near_population_target() {
        let cfg = GeneratorConfig { n: 5_000, seed: 11, ..Default::default() };
        let cohort = generate_synthetic_cohort(&cfg).unwrap();
        let mean =
            cohort.patients.iter().map(|p| p.baseline_cvd_risk).sum::<f64>() / cfg.n as f64;
        assert!((mean - 0.17).abs() < 0.01, "baseline risk mean {mean}");
    }
}
