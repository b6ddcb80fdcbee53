//! Patient-intervention decision rules.
//!
//! Three selection rules share the same per-epoch shape (rank the eligible
//! pool, take up to capacity):
//!
//! * **Standard** — currently non-adherent patients ranked by current CVD
//!   risk.
//! * **BIP** — patients ranked by the marginal reward of intervening now
//!   rather than next epoch, from forecasts made once at the start.
//! * **BIP-DLR** — the same ranking, but forecasts are refreshed each epoch
//!   from the data observed so far. The UB variant ranks with the success
//!   probability forced to 1 and bounds what refreshing can achieve.
//!
//! Eligibility is shared: patients with a past *successful* intervention
//! leave the pool for good; everyone else (unselected or failed) returns
//! the next epoch.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forecast::ForecastHorizon;
use crate::reward::{reward_matrix, InterventionParams, RewardMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleKind {
    Standard,
    Bip,
    BipDlr,
    BipDlrUb,
}

impl RuleKind {
    pub const ALL: [RuleKind; 4] =
        [RuleKind::Standard, RuleKind::Bip, RuleKind::BipDlr, RuleKind::BipDlrUb];

    pub fn as_str(&self) -> &'static str {
        match self {
            RuleKind::Standard => "standard",
            RuleKind::Bip => "bip",
            RuleKind::BipDlr => "bip_dlr",
            RuleKind::BipDlrUb => "bip_dlr_ub",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "standard" => Ok(RuleKind::Standard),
            "bip" => Ok(RuleKind::Bip),
            "bip_dlr" => Ok(RuleKind::BipDlr),
            "bip_dlr_ub" => Ok(RuleKind::BipDlrUb),
            other => Err(Error::InvalidInput(format!(
                "unknown rule {other:?}; expected standard | bip | bip_dlr | bip_dlr_ub"
            ))),
        }
    }

    /// Whether rankings are computed with the success probability forced to 1.
    pub fn ranking_q(&self, q: f64) -> f64 {
        if *self == RuleKind::BipDlrUb {
            1.0
        } else {
            q
        }
    }
}

impl std::fmt::Display for RuleKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One epoch's selection: patient indices in rank order (length <= capacity)
/// and the size of the pool they were drawn from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochDecision {
    pub epoch: usize,
    pub selected: Vec<usize>,
    pub eligible_count: usize,
}

/// Scored ranking of the eligible pool, best first. The decision is the
/// head; the full list feeds decision logs.
#[derive(Debug, Clone)]
pub struct RankedPool {
    pub epoch: usize,
    /// `(patient_index, score)` sorted by score descending.
    pub ranked: Vec<(usize, f64)>,
}

impl RankedPool {
    pub fn decide(&self, capacity: usize) -> EpochDecision {
        EpochDecision {
            epoch: self.epoch,
            selected: self.ranked.iter().take(capacity).map(|&(i, _)| i).collect(),
            eligible_count: self.ranked.len(),
        }
    }
}

fn sort_scored(mut scored: Vec<(usize, f64, f64)>) -> Vec<(usize, f64)> {
    // (index, score, tiebreak value): score desc, tiebreak desc, index asc.
    scored.sort_by(|a, b| {
        b.1.total_cmp(&a.1).then(b.2.total_cmp(&a.2)).then(a.0.cmp(&b.0))
    });
    scored.into_iter().map(|(i, s, _)| (i, s)).collect()
}

/// Standard rule: eligibility is current PDC below the threshold and no past
/// successful intervention; ranked by current CVD risk, ties toward the
/// smaller patient index.
pub fn standard_step(
    current_pdc: &[f64],
    current_risk: &[f64],
    blocked: &[bool],
    threshold: f64,
    epoch: usize,
    capacity: usize,
) -> RankedPool {
    let scored: Vec<(usize, f64, f64)> = (0..current_pdc.len())
        .filter(|&i| !blocked[i] && current_pdc[i] < threshold)
        .map(|i| (i, current_risk[i], current_risk[i]))
        .collect();
    let _ = capacity;
    RankedPool { epoch, ranked: sort_scored(scored) }
}

/// Ranks the eligible pool for `epoch` by the marginal reward of selecting
/// now versus waiting one epoch, in its closed form
/// `r * y_t * (CVD - a_{t+1})`; the final epoch ranks by `a_T` itself. Ties
/// break toward the larger immediate reward, then the smaller index.
///
/// `rewards`, `y_hat` and `risks` must all cover epochs `1..=T` of the same
/// patients.
pub fn bip_rank(
    rewards: &RewardMatrix,
    y_hat: &[Vec<f64>],
    risks: &[f64],
    params: &InterventionParams,
    epoch: usize,
    blocked: &[bool],
) -> Result<RankedPool> {
    let horizon = rewards.horizon();
    if epoch == 0 || epoch > horizon {
        return Err(Error::InvalidInput(format!(
            "epoch {epoch} outside horizon 1..={horizon}"
        )));
    }
    let n = rewards.n_patients();
    if y_hat.len() != n || risks.len() != n || blocked.len() != n {
        return Err(Error::InvalidInput("rule inputs cover different patients".into()));
    }
    let scored: Vec<(usize, f64, f64)> = (0..n)
        .filter(|&i| !blocked[i])
        .map(|i| {
            let a = &rewards.a[i];
            let immediate = a[epoch - 1];
            let score = if epoch < horizon {
                params.r * y_hat[i][epoch - 1] * (risks[i] - a[epoch])
            } else {
                immediate
            };
            (i, score, immediate)
        })
        .collect();
    Ok(RankedPool { epoch, ranked: sort_scored(scored) })
}

/// The BIP rule's precomputed state: forecasts made once at epoch 1 and the
/// reward matrix derived from them with the risks known at epoch 1.
#[derive(Debug, Clone)]
pub struct BipPolicy {
    pub rewards: RewardMatrix,
    pub y_hat: Vec<Vec<f64>>,
    pub risks: Vec<f64>,
    pub params: InterventionParams,
}

impl BipPolicy {
    /// Builds the policy from yearly forecasts covering epochs 1..=T.
    pub fn new(
        forecasts: &ForecastHorizon,
        risks: &[f64],
        params: InterventionParams,
    ) -> Result<Self> {
        params.validate()?;
        let rewards = reward_matrix(forecasts, risks, &params)?;
        Ok(Self {
            rewards,
            y_hat: forecasts.probabilities.clone(),
            risks: risks.to_vec(),
            params,
        })
    }

    pub fn step(&self, epoch: usize, blocked: &[bool]) -> Result<RankedPool> {
        bip_rank(&self.rewards, &self.y_hat, &self.risks, &self.params, epoch, blocked)
    }

    /// Per-epoch decisions assuming every selection succeeds (the pool only
    /// shrinks). This is the rule as a standalone plan, without the
    /// re-selection relaxation that simulation adds for failures.
    pub fn plan_assuming_success(&self, capacity: usize) -> Result<Vec<EpochDecision>> {
        let n = self.rewards.n_patients();
        let mut blocked = vec![false; n];
        let mut decisions = Vec::new();
        for epoch in 1..=self.rewards.horizon() {
            let decision = self.step(epoch, &blocked)?.decide(capacity);
            for &i in &decision.selected {
                blocked[i] = true;
            }
            decisions.push(decision);
        }
        Ok(decisions)
    }
}

/// One adaptive-rule epoch: rank the pool from freshly recomputed rewards.
/// `y_hat_remaining` covers epochs `t..=T` (so its first column is the
/// current epoch); the returned rewards matrix has the same shape.
pub fn bip_dlr_step(
    y_hat_remaining: &ForecastHorizon,
    current_risks: &[f64],
    params: &InterventionParams,
    epoch: usize,
    horizon: usize,
    blocked: &[bool],
) -> Result<(RankedPool, RewardMatrix)> {
    if y_hat_remaining.n_epochs() != horizon - epoch + 1 {
        return Err(Error::InvalidInput(format!(
            "forecasts cover {} epochs, expected {} (epoch {epoch} of {horizon})",
            y_hat_remaining.n_epochs(),
            horizon - epoch + 1
        )));
    }
    let rewards = reward_matrix(y_hat_remaining, current_risks, params)?;
    // The partial matrix starts at the current epoch: rank its first column.
    let local = bip_rank(
        &rewards,
        &y_hat_remaining.probabilities,
        current_risks,
        params,
        1,
        blocked,
    )?;
    Ok((RankedPool { epoch, ranked: local.ranked }, rewards))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::allocation::{greedy_allocate, AllocationInstance};

    fn yearly(probabilities: Vec<Vec<f64>>) -> ForecastHorizon {
        let t = probabilities[0].len();
        ForecastHorizon {
            patient_ids: (0..probabilities.len()).map(|i| format!("p{i}")).collect(),
            probabilities,
            origin_epoch: 1,
            horizon_end: t,
        }
    }

    #[test]
    fn standard_rule_empty_when_all_adherent() {
        let pool = standard_step(&[0.9, 0.85, 0.95], &[0.3, 0.2, 0.4], &[false; 3], 0.8, 1, 2);
        assert!(pool.ranked.is_empty());
        assert!(pool.decide(2).selected.is_empty());
    }

    #[test]
    fn standard_rule_sorts_by_risk() {
        let pool = standard_step(
            &[0.5, 0.6, 0.7],
            &[0.3, 0.2, 0.25],
            &[false; 3],
            0.8,
            1,
            2,
        );
        let decision = pool.decide(2);
        assert_eq!(decision.selected, vec![0, 2]);
        assert_eq!(decision.eligible_count, 3);
    }

    #[test]
    fn standard_rule_excludes_successfully_intervened() {
        // Lowest PDC and highest risk, but a past success keeps them out.
        let pool = standard_step(
            &[0.1, 0.6, 0.7],
            &[0.9, 0.2, 0.25],
            &[true, false, false],
            0.8,
            1,
            2,
        );
        let decision = pool.decide(2);
        assert_eq!(decision.selected, vec![2, 1]);
    }

    #[test]
    fn standard_rule_ignores_forecast_like_inputs() {
        // Pure function of (pdc, risk, blocked): identical inputs, identical
        // output, regardless of anything else having changed.
        let a = standard_step(&[0.5, 0.9], &[0.3, 0.4], &[false, false], 0.8, 3, 1);
        let b = standard_step(&[0.5, 0.9], &[0.3, 0.4], &[false, false], 0.8, 3, 1);
        assert_eq!(a.ranked, b.ranked);
    }

    #[test]
    fn single_epoch_bip_matches_greedy_allocation() {
        let forecasts = yearly(vec![vec![0.7], vec![0.3], vec![0.9]]);
        let risks = [0.3, 0.5, 0.2];
        let params = InterventionParams { q: 0.8, r: 0.1 };
        let policy = BipPolicy::new(&forecasts, &risks, params).unwrap();
        let plan = policy.plan_assuming_success(1).unwrap();
        let instance = AllocationInstance::new(policy.rewards.clone(), 1).unwrap();
        let greedy = greedy_allocate(&instance);
        assert_eq!(plan[0].selected, vec![greedy.assignments[0].0]);
    }

    #[test]
    fn zero_forecasts_degenerate_to_tiebreak_order() {
        // Literally zero non-adherence probability everywhere: all rewards
        // and marginals are exactly zero, so selection is pure tie-break
        // (index order) and intervening adds nothing.
        let rewards = RewardMatrix {
            patient_ids: (0..3).map(|i| format!("p{i}")).collect(),
            a: vec![vec![0.0, 0.0]; 3],
        };
        let y_hat = vec![vec![0.0, 0.0]; 3];
        let risks = [0.3, 0.5, 0.2];
        let params = InterventionParams { q: 1.0, r: 0.1 };
        let pool = bip_rank(&rewards, &y_hat, &risks, &params, 1, &[false; 3]).unwrap();
        let decision = pool.decide(2);
        assert_eq!(decision.selected, vec![0, 1]);
        assert!(pool.ranked.iter().all(|&(_, s)| s == 0.0));
    }

    #[test]
    fn bip_plan_is_reproducible() {
        let forecasts = yearly(vec![
            vec![0.7, 0.6, 0.5],
            vec![0.3, 0.4, 0.5],
            vec![0.9, 0.8, 0.7],
            vec![0.2, 0.25, 0.3],
        ]);
        let risks = [0.3, 0.5, 0.2, 0.4];
        let params = InterventionParams::default();
        let p1 = BipPolicy::new(&forecasts, &risks, params).unwrap();
        let p2 = BipPolicy::new(&forecasts, &risks, params).unwrap();
        assert_eq!(
            p1.plan_assuming_success(2).unwrap(),
            p2.plan_assuming_success(2).unwrap()
        );
    }

    #[test]
    fn marginal_scores_match_reward_differences() {
        let forecasts = yearly(vec![vec![0.7, 0.6, 0.5], vec![0.3, 0.4, 0.5]]);
        let risks = [0.3, 0.5];
        let params = InterventionParams { q: 0.8, r: 0.1 };
        let policy = BipPolicy::new(&forecasts, &risks, params).unwrap();
        for epoch in 1..3 {
            let pool = policy.step(epoch, &[false, false]).unwrap();
            for &(i, score) in &pool.ranked {
                let direct =
                    policy.rewards.a[i][epoch - 1] - policy.rewards.a[i][epoch];
                assert!(
                    (score - direct).abs() < 1e-9,
                    "epoch {epoch} patient {i}: {score} vs {direct}"
                );
            }
        }
    }

    #[test]
    fn ub_ranking_equals_ranking_with_q_one() {
        let forecasts = yearly(vec![
            vec![0.7, 0.2],
            vec![0.3, 0.8],
            vec![0.5, 0.5],
        ]);
        let risks = [0.3, 0.5, 0.4];
        let base = InterventionParams { q: 0.8, r: 0.1 };
        let forced = InterventionParams { q: RuleKind::BipDlrUb.ranking_q(base.q), r: base.r };
        assert_eq!(forced.q, 1.0);
        let (ub_pool, _) =
            bip_dlr_step(&forecasts, &risks, &forced, 1, 2, &[false; 3]).unwrap();
        let explicit = BipPolicy::new(&forecasts, &risks, forced).unwrap();
        let q1_pool = explicit.step(1, &[false; 3]).unwrap();
        let ub_order: Vec<usize> = ub_pool.ranked.iter().map(|&(i, _)| i).collect();
        let q1_order: Vec<usize> = q1_pool.ranked.iter().map(|&(i, _)| i).collect();
        assert_eq!(ub_order, q1_order);
    }

    #[test]
    fn adaptive_step_promotes_collapsed_patient() {
        // Both patients looked alike at fitting time; after one quarter the
        // second patient's adherence collapsed, so the refreshed forecast
        // ranks them first while the static policy cannot react.
        let static_forecasts = yearly(vec![vec![0.3, 0.3], vec![0.3, 0.3]]);
        let risks = [0.3, 0.3];
        let params = InterventionParams { q: 0.8, r: 0.1 };
        let static_policy = BipPolicy::new(&static_forecasts, &risks, params).unwrap();
        let static_pool = static_policy.step(2, &[false, false]).unwrap();
        assert_eq!(static_pool.ranked[0].0, 0); // pure tie, index order

        let refreshed = ForecastHorizon {
            patient_ids: vec!["p0".into(), "p1".into()],
            probabilities: vec![vec![0.3], vec![0.9]],
            origin_epoch: 2,
            horizon_end: 2,
        };
        let (pool, rewards) =
            bip_dlr_step(&refreshed, &risks, &params, 2, 2, &[false, false]).unwrap();
        assert_eq!(pool.ranked[0].0, 1);
        // Final epoch: score is the immediate reward a_T itself.
        assert!((pool.ranked[0].1 - rewards.a[1][0]).abs() < 1e-12);
    }

    #[test]
    fn capacity_larger_than_pool_selects_everyone_eligible() {
        let forecasts = yearly(vec![vec![0.5], vec![0.6], vec![0.7]]);
        let risks = [0.2, 0.3, 0.4];
        let (pool, _) = bip_dlr_step(
            &forecasts,
            &risks,
            &InterventionParams::default(),
            1,
            1,
            &[false, true, false],
        )
        .unwrap();
        let decision = pool.decide(10);
        assert_eq!(decision.selected.len(), 2);
        assert_eq!(decision.eligible_count, 2);
    }

    #[test]
    fn rule_kind_parse_roundtrip() {
        for kind in RuleKind::ALL {
            assert_eq!(RuleKind::parse(kind.as_str()).unwrap(), kind);
        }
        assert!(RuleKind::parse("nope").is_err());
    }
}
