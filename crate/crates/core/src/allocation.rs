//! Capacity-constrained patient selection.
//!
//! `greedy_allocate` implements the marginal ranking policy: at each epoch
//! t < T remaining patients are ranked by `a_it - a_i,t+1` (at the final
//! epoch by `a_iT`) and up to `c` are selected, each patient at most once
//! over the horizon. `exact_allocate` enumerates every feasible assignment
//! on small instances and is the certification oracle for the policy.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::reward::RewardMatrix;

const EXACT_SEARCH_GUARD: f64 = 1e7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationInstance {
    pub rewards: RewardMatrix,
    /// Interventions available per epoch.
    pub capacity: usize,
    /// Number of epochs.
    pub horizon: usize,
}

impl AllocationInstance {
    pub fn new(rewards: RewardMatrix, capacity: usize) -> Result<Self> {
        let horizon = rewards.horizon();
        if horizon == 0 {
            return Err(Error::InvalidInput("reward matrix has no epochs".into()));
        }
        if rewards.a.iter().any(|row| row.len() != horizon) {
            return Err(Error::InvalidInput("ragged reward matrix".into()));
        }
        for (i, row) in rewards.a.iter().enumerate() {
            for t in 1..horizon {
                if row[t] > row[t - 1] + 1e-9 {
                    return Err(Error::InvalidInput(format!(
                        "rewards for patient {i} increase at epoch {t}; rows must be nonincreasing"
                    )));
                }
            }
        }
        Ok(Self { rewards, capacity, horizon })
    }
}

/// Selected `(patient_index, epoch)` pairs (epochs 1-based) and the total
/// reward they collect.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionPlan {
    pub assignments: Vec<(usize, usize)>,
    pub objective: f64,
}

impl SelectionPlan {
    fn normalized(mut self) -> Self {
        self.assignments.sort_unstable();
        self
    }
}

/// Ranks `eligible` patients for epoch `t` (1-based): by marginal reward at
/// epochs before the last, by the final-epoch reward at the last. Ties break
/// toward the larger immediate reward, then the smaller patient index.
pub fn rank_for_epoch(rewards: &RewardMatrix, t: usize, eligible: &[usize]) -> Vec<usize> {
    let horizon = rewards.horizon();
    let score = |i: usize| -> f64 {
        let row = &rewards.a[i];
        if t < horizon {
            row[t - 1] - row[t]
        } else {
            row[t - 1]
        }
    };
    let mut ranked: Vec<usize> = eligible.to_vec();
    ranked.sort_by(|&i, &j| {
        score(j)
            .total_cmp(&score(i))
            .then(rewards.a[j][t - 1].total_cmp(&rewards.a[i][t - 1]))
            .then(i.cmp(&j))
    });
    ranked
}

/// The marginal ranking policy applied to a whole instance at once (every
/// selected patient is assumed served, so the pool only shrinks).
pub fn greedy_allocate(instance: &AllocationInstance) -> SelectionPlan {
    let n = instance.rewards.n_patients();
    let mut remaining: Vec<usize> = (0..n).collect();
    let mut assignments = Vec::new();
    let mut objective = 0.0;
    for t in 1..=instance.horizon {
        let ranked = rank_for_epoch(&instance.rewards, t, &remaining);
        let take = ranked.len().min(instance.capacity);
        for &i in &ranked[..take] {
            assignments.push((i, t));
            objective += instance.rewards.a[i][t - 1];
        }
        remaining.retain(|i| !ranked[..take].contains(i));
    }
    SelectionPlan { assignments, objective }.normalized()
}

/// Exhaustive search over per-patient epoch choices (one of the T epochs or
/// none), keeping capacity-feasible assignments. Globally optimal; ties on
/// the objective resolve to the lexicographically smallest normalized plan.
pub fn exact_allocate(instance: &AllocationInstance) -> Result<SelectionPlan> {
    let n = instance.rewards.n_patients();
    let t = instance.horizon;
    let search_size = ((t + 1) as f64).powi(n as i32);
    if search_size > EXACT_SEARCH_GUARD {
        return Err(Error::InstanceTooLarge(format!(
            "{n} patients x {t} epochs spans about {search_size:.2e} assignments \
             (guard {EXACT_SEARCH_GUARD:.0e})"
        )));
    }

    struct Search<'a> {
        instance: &'a AllocationInstance,
        counts: Vec<usize>,
        choice: Vec<usize>, // 0 = unserved, otherwise epoch
        best: Option<SelectionPlan>,
    }

    impl Search<'_> {
        fn plan_from_choice(&self, objective: f64) -> SelectionPlan {
            let assignments: Vec<(usize, usize)> = self
                .choice
                .iter()
                .enumerate()
                .filter(|(_, &e)| e > 0)
                .map(|(i, &e)| (i, e))
                .collect();
            SelectionPlan { assignments, objective }.normalized()
        }

        fn recurse(&mut self, patient: usize, objective: f64) {
            if patient == self.choice.len() {
                let candidate = self.plan_from_choice(objective);
                let better = match &self.best {
                    None => true,
                    Some(best) => {
                        candidate.objective > best.objective
                            || (candidate.objective == best.objective
                                && candidate.assignments < best.assignments)
                    }
                };
                if better {
                    self.best = Some(candidate);
                }
                return;
            }
            // Unserved first so the all-zero plan is explored deterministically.
            self.choice[patient] = 0;
            self.recurse(patient + 1, objective);
            for epoch in 1..=self.instance.horizon {
                if self.counts[epoch - 1] < self.instance.capacity {
                    self.counts[epoch - 1] += 1;
                    self.choice[patient] = epoch;
                    self.recurse(
                        patient + 1,
                        objective + self.instance.rewards.a[patient][epoch - 1],
                    );
                    self.counts[epoch - 1] -= 1;
                }
            }
            self.choice[patient] = 0;
        }
    }

    let mut search = Search {
        instance,
        counts: vec![0; t],
        choice: vec![0; n],
        best: None,
    };
    search.recurse(0, 0.0);
    Ok(search.best.expect("search always visits the empty plan"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanDiagnostics {
    pub pass: bool,
    pub violations: Vec<String>,
}

/// Checks per-epoch capacity, the once-per-horizon constraint, index/epoch
/// bounds, and that the recorded objective matches the assignment sum.
pub fn validate_plan(instance: &AllocationInstance, plan: &SelectionPlan) -> PlanDiagnostics {
    let mut violations = Vec::new();
    let n = instance.rewards.n_patients();
    let mut per_epoch = vec![0usize; instance.horizon];
    let mut per_patient = vec![0usize; n];
    let mut total = 0.0;
    for &(i, t) in &plan.assignments {
        if i >= n {
            violations.push(format!("patient index {i} out of range"));
            continue;
        }
        if t == 0 || t > instance.horizon {
            violations.push(format!("epoch {t} out of range for patient {i}"));
            continue;
        }
        per_epoch[t - 1] += 1;
        per_patient[i] += 1;
        total += instance.rewards.a[i][t - 1];
    }
    for (t, &count) in per_epoch.iter().enumerate() {
        if count > instance.capacity {
            violations.push(format!(
                "per-epoch capacity exceeded at epoch {}: {count} > {}",
                t + 1,
                instance.capacity
            ));
        }
    }
    for (i, &count) in per_patient.iter().enumerate() {
        if count > 1 {
            violations.push(format!(
                "once-per-horizon constraint violated: patient {i} selected {count} times"
            ));
        }
    }
    if (total - plan.objective).abs() > 1e-9 {
        violations.push(format!(
            "objective {} does not match assignment sum {total}",
            plan.objective
        ));
    }
    PlanDiagnostics { pass: violations.is_empty(), violations }
}

/// A certification case where the ranking policy fell short of the exact
/// optimum, with everything needed to reproduce it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Counterexample {
    pub instance: AllocationInstance,
    pub y_hat: Vec<Vec<f64>>,
    pub risks: Vec<f64>,
    pub q: f64,
    pub r: f64,
    pub greedy: SelectionPlan,
    pub exact: SelectionPlan,
    pub gap: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CertificationReport {
    pub instances: usize,
    pub seed: u64,
    pub agreements: usize,
    pub counterexamples: Vec<Counterexample>,
    pub max_gap: f64,
}

impl CertificationReport {
    pub fn pass(&self) -> bool {
        self.counterexamples.is_empty()
    }
}

/// Compares the greedy policy against the exact solver on random instances
/// with rewards produced by the reward model (n <= 6, T <= 3, c <= 2,
/// non-adherence probabilities uniform, risks and parameters in their
/// population ranges). Disagreements beyond 1e-9 are recorded in full.
pub fn certify_against_exact(instances: usize, seed: u64) -> Result<CertificationReport> {
    use rand::Rng;

    let mut counterexamples = Vec::new();
    let mut agreements = 0;
    let mut max_gap = 0.0f64;
    for k in 0..instances {
        let mut rng = crate::rng::stream(seed, &[0xa110c, k as u64]);
        let n = rng.gen_range(1..=6usize);
        let t = rng.gen_range(1..=3usize);
        let c = rng.gen_range(0..=2usize);
        let q = rng.gen_range(0.7..=0.9);
        let r = rng.gen_range(0.07..=0.12);
        let y_hat: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..t).map(|_| rng.gen_range(0.001..0.999)).collect())
            .collect();
        let risks: Vec<f64> = (0..n).map(|_| rng.gen_range(0.02..0.9)).collect();
        let forecasts = crate::forecast::ForecastHorizon {
            patient_ids: (0..n).map(|i| format!("p{i}")).collect(),
            probabilities: y_hat.clone(),
            origin_epoch: 1,
            horizon_end: t,
        };
        let params = crate::reward::InterventionParams { q, r };
        let rewards = crate::reward::reward_matrix(&forecasts, &risks, &params)?;
        let instance = AllocationInstance::new(rewards, c)?;
        let greedy = greedy_allocate(&instance);
        let exact = exact_allocate(&instance)?;
        let gap = exact.objective - greedy.objective;
        max_gap = max_gap.max(gap);
        if gap.abs() <= 1e-9 {
            agreements += 1;
        } else {
            counterexamples.push(Counterexample {
                instance,
                y_hat,
                risks,
                q,
                r,
                greedy,
                exact,
                gap,
            });
        }
    }
    Ok(CertificationReport { instances, seed, agreements, counterexamples, max_gap })
}

pub fn write_plan_csv(
    plan: &SelectionPlan,
    patient_ids: &[String],
    path: &Path,
) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["patient_id", "epoch"])?;
    for &(i, t) in &plan.assignments {
        w.write_record([patient_ids[i].as_str(), &t.to_string()])?;
    }
    w.flush()?;
    Ok(())
}
