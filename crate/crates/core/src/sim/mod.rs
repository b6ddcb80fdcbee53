//! Monte-Carlo cohort simulation comparing the intervention rules.
//!
//! The last `horizon_years` years of the cohort's stored history are the
//! simulated period; everything before is training data. Each epoch (year)
//! the configured rule selects up to `c` patients, each selected patient's
//! intervention succeeds with probability `q`, and successes adhere for the
//! rest of the horizon. Failures and the unselected return to the pool next
//! epoch; successes never do.
//!
//! Risk accounting: patients not on a successful intervention follow their
//! as-seen-in-data risk path. A success multiplies that path by `(1-r)` for
//! each remaining epoch in which the patient's natural trajectory would have
//! been non-adherent — the epochs the intervention actually flips; epochs
//! they would have adhered anyway contribute no extra reduction. Expected
//! events at horizon end are the sum of final risks (per 100k), so a run is
//! a pure function of (cohort, config, seed); success draws come from
//! counter-based streams keyed by (seed, replication, patient, epoch) so
//! rule or parameter changes never perturb unrelated draws.

mod sweep;

pub use sweep::{
    default_catalog, intervention_comparison, read_catalog_csv, sensitivity_sweep,
    write_catalog_csv, write_comparison_csv, write_decision_log_csv, write_results_csv,
    ComparisonRow, InterventionCatalogEntry, SweepGrid, SweepRow,
};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cohort::{yearly_mean_pdc, yearly_truth_label, Cohort};
use crate::error::{Error, Result};
use crate::forecast::{
    dlr_step, forecast_horizon, predict_probability, DlrObservation, Eq3Sign, FitOptions,
    FitResult, ForecastHorizon, ForecastOptions,
};
use crate::reward::InterventionParams;
use crate::rng;
use crate::rules::{standard_step, bip_dlr_step, BipPolicy, RuleKind};

const SUCCESS_STREAM: u64 = 0x7375_6363;
const EVENT_STREAM: u64 = 0x6576_6e74;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulationConfig {
    pub horizon_years: usize,
    pub capacity_fraction: f64,
    pub q: f64,
    pub r: f64,
    pub replications: usize,
    pub seed: u64,
    pub rule: RuleKind,
    pub adherence_threshold: f64,
    pub pdc_lags: usize,
    pub ridge: f64,
    pub sigma_u: f64,
    pub eq3_sign: Eq3Sign,
    /// Count events by Bernoulli draws on final risks instead of summing
    /// the risks (higher variance; off by default).
    pub event_sampling: bool,
    /// PDC written into quarters of successfully intervened patients.
    pub adherent_override_pdc: f64,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            horizon_years: 5,
            capacity_fraction: 0.35,
            q: 0.8,
            r: 0.1,
            replications: 30,
            seed: 0,
            rule: RuleKind::BipDlr,
            adherence_threshold: 0.8,
            pdc_lags: 8,
            ridge: 1e-4,
            sigma_u: 0.6,
            eq3_sign: Eq3Sign::Ascent,
            event_sampling: false,
            adherent_override_pdc: 0.9,
        }
    }
}

impl SimulationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizon_years == 0 {
            return Err(Error::InvalidInput("horizon_years must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.capacity_fraction) {
            return Err(Error::InvalidInput(format!(
                "capacity_fraction {} outside [0, 1]",
                self.capacity_fraction
            )));
        }
        InterventionParams { q: self.q, r: self.r }.validate()?;
        if self.replications == 0 {
            return Err(Error::InvalidInput("replications must be at least 1".into()));
        }
        if !(self.adherence_threshold > 0.0 && self.adherence_threshold <= 1.0) {
            return Err(Error::InvalidInput("adherence_threshold outside (0, 1]".into()));
        }
        Ok(())
    }

    pub fn params(&self) -> InterventionParams {
        InterventionParams { q: self.q, r: self.r }
    }
}

/// Everything rule-independent that can be computed once per cohort:
/// the fitted model, the epoch bookkeeping, natural trajectories, and the
/// no-intervention baseline.
pub struct SimContext {
    pub cohort: Cohort,
    /// Absent when the context was prepared for a no-intervention run
    /// (capacity 0 needs no model).
    pub fit: Option<FitResult>,
    /// Pure forecast from the origin over the whole horizon, yearly.
    pub static_yearly: Option<ForecastHorizon>,
    pub origin_year: usize,
    pub origin_quarter: usize,
    pub end_quarter: usize,
    pub horizon_years: usize,
    /// `natural_non_adherent[t-1][i]`: would patient i's natural year-t
    /// trajectory be non-adherent?
    pub natural_non_adherent: Vec<Vec<bool>>,
    /// `gate_pdc[t-1][i]`: mean PDC of the year observed just before epoch t
    /// on the natural trajectory.
    pub gate_pdc: Vec<Vec<f64>>,
    /// `risk_at_epoch[t-1][i]`: as-seen-in-data risk at decision time.
    pub risk_at_epoch: Vec<Vec<f64>>,
    /// Final-year data risk per patient (the no-intervention endpoint).
    pub final_risk: Vec<f64>,
    pub baseline_events_per_100k: f64,
    u_vec: Vec<f64>,
}

/// Fits the model on the pre-horizon years and precomputes the shared
/// trajectory tables.
pub fn prepare(cohort: &Cohort, config: &SimulationConfig) -> Result<SimContext> {
    config.validate()?;
    cohort.validate()?;
    let n_years = cohort.n_years();
    if n_years < config.horizon_years + 1 {
        return Err(Error::InsufficientHistory(format!(
            "cohort stores {n_years} whole years; horizon of {} needs at least {}",
            config.horizon_years,
            config.horizon_years + 1
        )));
    }
    let origin_year = n_years - config.horizon_years + 1;
    let origin_quarter = (origin_year - 1) * 4 + 1;
    let train_through = origin_quarter - 1;
    if train_through < config.pdc_lags + 1 {
        return Err(Error::InsufficientHistory(format!(
            "{train_through} training quarters cannot support {} PDC lags",
            config.pdc_lags
        )));
    }
    let end_quarter = origin_quarter + 4 * config.horizon_years - 1;

    let (fit, static_yearly) = if config.capacity_fraction > 0.0 {
        let fit_opts = FitOptions {
            ridge: config.ridge,
            re_penalty: 1.0 / (config.sigma_u * config.sigma_u),
            pdc_lags: config.pdc_lags,
            ..Default::default()
        };
        let fit = crate::forecast::fit_initial(cohort, train_through, &fit_opts)?;
        let fopts = ForecastOptions {
            pdc_lags: config.pdc_lags,
            sign: config.eq3_sign,
            ..Default::default()
        };
        let (quarterly, _) = forecast_horizon(
            cohort,
            &fit,
            origin_quarter,
            end_quarter,
            origin_quarter - 1,
            &fopts,
        )?;
        (Some(fit), Some(quarterly.to_yearly()?))
    } else {
        (None, None)
    };

    let n = cohort.n_patients();
    let mut natural_non_adherent = Vec::with_capacity(config.horizon_years);
    let mut gate_pdc = Vec::with_capacity(config.horizon_years);
    let mut risk_at_epoch = Vec::with_capacity(config.horizon_years);
    for t in 1..=config.horizon_years {
        let data_year = origin_year + t - 1;
        let mut labels = Vec::with_capacity(n);
        let mut gates = Vec::with_capacity(n);
        let mut risks = Vec::with_capacity(n);
        for p in &cohort.patients {
            labels.push(yearly_truth_label(p, data_year)?);
            gates.push(yearly_mean_pdc(p, data_year - 1)?);
            risks.push(p.data_risk_at_year(data_year));
        }
        natural_non_adherent.push(labels);
        gate_pdc.push(gates);
        risk_at_epoch.push(risks);
    }
    let final_risk: Vec<f64> = cohort
        .patients
        .iter()
        .map(|p| p.data_risk_at_year(origin_year + config.horizon_years - 1))
        .collect();
    let baseline_events_per_100k =
        final_risk.iter().sum::<f64>() / n as f64 * 100_000.0;
    let u_vec = match &fit {
        Some(fit) => cohort.patients.iter().map(|p| fit.u_for(&p.id)).collect(),
        None => Vec::new(),
    };

    Ok(SimContext {
        cohort: cohort.clone(),
        fit,
        static_yearly,
        origin_year,
        origin_quarter,
        end_quarter,
        horizon_years: config.horizon_years,
        natural_non_adherent,
        gate_pdc,
        risk_at_epoch,
        final_risk,
        baseline_events_per_100k,
        u_vec,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationResult {
    pub events_per_100k: f64,
    pub events_reduced_vs_no_intervention: f64,
    pub rule: RuleKind,
    /// Stream seed this replication drew from.
    pub seed: u64,
    pub interventions_delivered: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionLogRow {
    pub epoch: usize,
    pub rule: RuleKind,
    pub patient_id: String,
    pub score: f64,
    pub selected: bool,
}

/// Runs one replication. Deterministic given (context, config, replication).
pub fn simulate_once(
    ctx: &SimContext,
    config: &SimulationConfig,
    replication: usize,
    mut log: Option<&mut Vec<DecisionLogRow>>,
) -> Result<ReplicationResult> {
    config.validate()?;
    if config.horizon_years != ctx.horizon_years {
        return Err(Error::InvalidInput("config horizon differs from prepared context".into()));
    }
    let n = ctx.cohort.n_patients();
    let capacity = (config.capacity_fraction * n as f64).round() as usize;
    let horizon = ctx.horizon_years;
    let params = config.params();
    let rank_params = InterventionParams { q: config.rule.ranking_q(params.q), r: params.r };

    let mut success_epoch: Vec<Option<usize>> = vec![None; n];
    let mut flips: Vec<u32> = vec![0; n];
    let mut delivered = 0usize;

    let needs_model = capacity > 0 && config.rule != RuleKind::Standard;
    let model = if needs_model {
        Some(ctx.fit.as_ref().ok_or_else(|| {
            Error::InvalidInput("context was prepared without a fitted model".into())
        })?)
    } else {
        None
    };

    // Rule-specific state.
    let static_policy = match (config.rule, capacity) {
        (RuleKind::Bip, 1..) => Some(BipPolicy::new(
            ctx.static_yearly.as_ref().expect("model prepared"),
            &ctx.risk_at_epoch[0],
            rank_params,
        )?),
        _ => None,
    };
    let adaptive =
        capacity > 0 && matches!(config.rule, RuleKind::BipDlr | RuleKind::BipDlrUb);
    let mut observed = if adaptive { Some(ctx.cohort.clone()) } else { None };
    let mut dlr_state =
        if adaptive { Some(model.expect("model prepared").state.clone()) } else { None };
    let fopts = ForecastOptions {
        pdc_lags: config.pdc_lags,
        sign: config.eq3_sign,
        ..Default::default()
    };

    for t in 1..=horizon {
        let blocked: Vec<bool> = success_epoch.iter().map(Option::is_some).collect();
        let pool = if capacity == 0 {
            crate::rules::RankedPool { epoch: t, ranked: Vec::new() }
        } else {
            match config.rule {
            RuleKind::Standard => {
                let gate: Vec<f64> = (0..n)
                    .map(|i| {
                        if success_epoch[i].is_some() {
                            // overridden adherent; blocked regardless
                            1.0
                        } else {
                            ctx.gate_pdc[t - 1][i]
                        }
                    })
                    .collect();
                standard_step(
                    &gate,
                    &ctx.risk_at_epoch[t - 1],
                    &blocked,
                    config.adherence_threshold,
                    t,
                    capacity,
                )
            }
            RuleKind::Bip => static_policy.as_ref().expect("built above").step(t, &blocked)?,
            RuleKind::BipDlr | RuleKind::BipDlrUb => {
                let observed_ref = observed.as_ref().expect("adaptive state");
                let state = dlr_state.as_ref().expect("adaptive state");
                let q_obs = ctx.origin_quarter - 1 + (t - 1) * 4;
                let mut working_fit = model.expect("model prepared").clone();
                working_fit.state = state.clone();
                let (quarterly, _) = forecast_horizon(
                    observed_ref,
                    &working_fit,
                    q_obs + 1,
                    ctx.end_quarter,
                    q_obs,
                    &fopts,
                )?;
                let yearly = quarterly.to_yearly()?;
                let (pool, _) = bip_dlr_step(
                    &yearly,
                    &ctx.risk_at_epoch[t - 1],
                    &rank_params,
                    t,
                    horizon,
                    &blocked,
                )?;
                pool
            }
            }
        };
        let decision = pool.decide(capacity);
        debug_assert!(decision.selected.len() <= capacity);
        if let Some(rows) = log.as_deref_mut() {
            for (rank, &(i, score)) in pool.ranked.iter().enumerate() {
                rows.push(DecisionLogRow {
                    epoch: t,
                    rule: config.rule,
                    patient_id: ctx.cohort.patients[i].id.clone(),
                    score,
                    selected: rank < decision.selected.len(),
                });
            }
        }

        delivered += decision.selected.len();
        for &i in &decision.selected {
            let draw =
                rng::keyed_unit_uniform(config.seed, &[SUCCESS_STREAM, replication as u64, i as u64, t as u64]);
            if draw < params.q {
                success_epoch[i] = Some(t);
            }
        }

        // Realize year t.
        let data_year = ctx.origin_year + t - 1;
        for i in 0..n {
            if let Some(s) = success_epoch[i] {
                if s <= t && ctx.natural_non_adherent[t - 1][i] {
                    flips[i] += 1;
                }
            }
        }
        if let Some(observed) = observed.as_mut() {
            let override_pdc = config.adherent_override_pdc.max(config.adherence_threshold);
            for i in 0..n {
                if success_epoch[i].is_some() {
                    let start = (data_year - 1) * 4;
                    for q in &mut observed.patients[i].quarters[start..start + 4] {
                        q.pdc = override_pdc;
                        q.adherent = true;
                    }
                }
            }
            // Advance the coefficient state over the four observed quarters.
            let state = dlr_state.as_mut().expect("adaptive state");
            for qt in (data_year - 1) * 4 + 1..=data_year * 4 {
                let mut feats: Vec<Vec<f64>> = Vec::with_capacity(n);
                for p in &observed.patients {
                    feats.push(
                        crate::cohort::build_feature_vector(p, qt, config.pdc_lags)?.values,
                    );
                }
                let mut obs = Vec::with_capacity(n);
                for (i, p) in observed.patients.iter().enumerate() {
                    let y = predict_probability(state, ctx.u_vec[i], &feats[i])?;
                    let w = f64::from(!p.quarters[qt - 1].adherent as u8);
                    obs.push(DlrObservation { w, y_hat: y, x: &feats[i] });
                }
                *state = dlr_step(state, &obs, config.eq3_sign)?;
            }
        }
    }

    let events_per_100k = if config.event_sampling {
        let mut events = 0usize;
        for i in 0..n {
            let risk = ctx.final_risk[i] * (1.0 - params.r).powi(flips[i] as i32);
            let draw = rng::keyed_unit_uniform(
                config.seed,
                &[EVENT_STREAM, replication as u64, i as u64],
            );
            if draw < risk {
                events += 1;
            }
        }
        events as f64 / n as f64 * 100_000.0
    } else {
        let total: f64 = (0..n)
            .map(|i| ctx.final_risk[i] * (1.0 - params.r).powi(flips[i] as i32))
            .sum();
        total / n as f64 * 100_000.0
    };

    Ok(ReplicationResult {
        events_per_100k,
        events_reduced_vs_no_intervention: ctx.baseline_events_per_100k - events_per_100k,
        rule: config.rule,
        seed: rng::mix_keys(&[config.seed, replication as u64]),
        interventions_delivered: delivered,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationSummary {
    pub rule: RuleKind,
    pub capacity_fraction: f64,
    pub q: f64,
    pub r: f64,
    pub replications: usize,
    pub mean_events_per_100k: f64,
    pub events_ci_low: f64,
    pub events_ci_high: f64,
    pub mean_events_reduced: f64,
    pub reduced_ci_low: f64,
    pub reduced_ci_high: f64,
    pub baseline_events_per_100k: f64,
    pub mean_interventions_delivered: f64,
}

impl SimulationSummary {
    pub fn events_ci_width(&self) -> f64 {
        self.events_ci_high - self.events_ci_low
    }
}

fn mean_ci(values: &[f64]) -> (f64, f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, mean, mean);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    let half = 1.96 * (var / n).sqrt();
    (mean, mean - half, mean + half)
}

/// Runs `config.replications` independent replications (parallel, with a
/// deterministic reduction) and summarizes them with 95% normal CIs.
pub fn run_replications_with_ctx(
    ctx: &SimContext,
    config: &SimulationConfig,
) -> Result<SimulationSummary> {
    config.validate()?;
    if config.replications < 2 {
        return Err(Error::InvalidInput(
            "confidence intervals need at least 2 replications".into(),
        ));
    }
    let results: Result<Vec<ReplicationResult>> = (0..config.replications)
        .into_par_iter()
        .map(|rep| simulate_once(ctx, config, rep, None))
        .collect();
    let results = results?;
    let events: Vec<f64> = results.iter().map(|r| r.events_per_100k).collect();
    let reduced: Vec<f64> =
        results.iter().map(|r| r.events_reduced_vs_no_intervention).collect();
    let delivered: Vec<f64> =
        results.iter().map(|r| r.interventions_delivered as f64).collect();
    let (mean_events, e_lo, e_hi) = mean_ci(&events);
    let (mean_reduced, r_lo, r_hi) = mean_ci(&reduced);
    Ok(SimulationSummary {
        rule: config.rule,
        capacity_fraction: config.capacity_fraction,
        q: config.q,
        r: config.r,
        replications: config.replications,
        mean_events_per_100k: mean_events,
        events_ci_low: e_lo,
        events_ci_high: e_hi,
        mean_events_reduced: mean_reduced,
        reduced_ci_low: r_lo,
        reduced_ci_high: r_hi,
        baseline_events_per_100k: ctx.baseline_events_per_100k,
        mean_interventions_delivered: delivered.iter().sum::<f64>() / delivered.len() as f64,
    })
}

pub fn run_replications(cohort: &Cohort, config: &SimulationConfig) -> Result<SimulationSummary> {
    let ctx = prepare(cohort, config)?;
    run_replications_with_ctx(&ctx, config)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineReport {
    pub simulated_mean_risk: f64,
    pub data_mean_risk: f64,
    pub ci_width_risk: f64,
    pub pass: bool,
}

/// The pass rule for baseline validation, separated so it can be exercised
/// with corrupted inputs.
pub fn check_baseline(simulated_mean_risk: f64, data_mean_risk: f64, ci_width_risk: f64) -> bool {
    (simulated_mean_risk - data_mean_risk).abs() <= 0.01 && ci_width_risk <= 1e-12
}

/// Compares the no-intervention simulation against the cohort's data-implied
/// mean risk: they must agree within 0.01 absolute with a zero-width CI
/// (nothing stochastic happens without interventions).
pub fn validate_baseline(cohort: &Cohort, config: &SimulationConfig) -> Result<BaselineReport> {
    let mut baseline_config = config.clone();
    baseline_config.capacity_fraction = 0.0;
    baseline_config.replications = config.replications.clamp(2, 5);
    baseline_config.event_sampling = false;
    let ctx = prepare(cohort, &baseline_config)?;
    let summary = run_replications_with_ctx(&ctx, &baseline_config)?;
    let simulated_mean_risk = summary.mean_events_per_100k / 100_000.0;
    let data_mean_risk =
        ctx.final_risk.iter().sum::<f64>() / ctx.final_risk.len() as f64;
    let ci_width_risk = summary.events_ci_width() / 100_000.0;
    Ok(BaselineReport {
        simulated_mean_risk,
        data_mean_risk,
        ci_width_risk,
        pass: check_baseline(simulated_mean_risk, data_mean_risk, ci_width_risk),
    })
}
