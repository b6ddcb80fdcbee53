//! Forecast evaluation: rank-based AUC, confusion rates at the
//! accuracy-maximizing threshold, and patient-level fold splits.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ForecastHorizon;
use crate::error::{Error, Result};

/// Confusion rates normalized by the number of scored cases; the four
/// entries sum to 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfusionRates {
    pub tp: f64,
    pub fp: f64,
    pub tn: f64,
    pub fn_: f64,
}

impl ConfusionRates {
    pub fn accuracy(&self) -> f64 {
        self.tp + self.tn
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldYearMetrics {
    /// 1-based forecast year.
    pub year: usize,
    /// 1-based fold; 0 marks the pooled row.
    pub fold: usize,
    pub auc: Option<f64>,
    pub confusion: ConfusionRates,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastMetrics {
    /// Fold-averaged AUC per forecast year; absent when truth is
    /// single-class everywhere.
    pub auc_by_year: Vec<Option<f64>>,
    /// Pooled confusion per year at the shared threshold.
    pub confusion_by_year: Vec<ConfusionRates>,
    /// Accuracy-maximizing probability threshold, chosen on the pooled data.
    pub threshold: f64,
    pub folds: usize,
    pub rows: Vec<FoldYearMetrics>,
}

/// Rank-statistic AUC (Mann-Whitney with midranks for ties). `None` when
/// either class is empty.
pub fn auc(scores: &[f64], labels: &[bool]) -> Option<f64> {
    let n_pos = labels.iter().filter(|l| **l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // midrank for the tie group spanning sorted positions i..=j (1-based)
        let midrank = (i + 1 + j + 1) as f64 / 2.0;
        for &idx in &order[i..=j] {
            if labels[idx] {
                rank_sum_pos += midrank;
            }
        }
        i = j + 1;
    }
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Some(u / (n_pos as f64 * n_neg as f64))
}

/// Confusion rates predicting positive when `score >= threshold`.
pub fn confusion_at_threshold(scores: &[f64], labels: &[bool], threshold: f64) -> ConfusionRates {
    let (mut tp, mut fp, mut tn, mut fn_) = (0usize, 0usize, 0usize, 0usize);
    for (s, l) in scores.iter().zip(labels) {
        match (*s >= threshold, *l) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fn_ += 1,
        }
    }
    let total = scores.len().max(1) as f64;
    ConfusionRates {
        tp: tp as f64 / total,
        fp: fp as f64 / total,
        tn: tn as f64 / total,
        fn_: fn_ as f64 / total,
    }
}

/// Threshold maximizing accuracy; ties resolve to the smallest candidate.
/// Candidates are the observed scores plus 0 (all positive) and 1 (all
/// negative, since forecast probabilities are strictly inside (0, 1)).
pub fn accuracy_maximizing_threshold(scores: &[f64], labels: &[bool]) -> f64 {
    let mut candidates: Vec<f64> = scores.to_vec();
    candidates.push(0.0);
    candidates.push(1.0);
    candidates.sort_by(f64::total_cmp);
    candidates.dedup();
    let mut best = (f64::NEG_INFINITY, 0.0);
    for &t in &candidates {
        let acc = confusion_at_threshold(scores, labels, t).accuracy();
        if acc > best.0 + 1e-12 {
            best = (acc, t);
        }
    }
    best.1
}

/// Evaluates yearly forecasts against yearly truth labels
/// (true = non-adherent). Patients are split into `folds` groups round-robin
/// by position; AUC per year is the average over folds in which it is
/// defined, and is absent when no fold defines it.
pub fn evaluate(
    forecasts: &ForecastHorizon,
    truth: &[Vec<bool>],
    folds: usize,
) -> Result<ForecastMetrics> {
    forecasts.validate()?;
    if folds == 0 {
        return Err(Error::InvalidInput("folds must be at least 1".into()));
    }
    let n = forecasts.patient_ids.len();
    let years = forecasts.n_epochs();
    if truth.len() != n {
        return Err(Error::InvalidInput(format!(
            "truth covers {} patients, forecasts cover {n}",
            truth.len()
        )));
    }
    if truth.iter().any(|row| row.len() != years) {
        return Err(Error::InvalidInput(format!("truth rows must cover {years} years")));
    }
    if folds > n.max(1) {
        return Err(Error::InvalidInput(format!("{folds} folds for {n} patients")));
    }

    let pooled_scores: Vec<f64> =
        forecasts.probabilities.iter().flat_map(|r| r.iter().copied()).collect();
    let pooled_labels: Vec<bool> = truth.iter().flat_map(|r| r.iter().copied()).collect();
    let threshold = accuracy_maximizing_threshold(&pooled_scores, &pooled_labels);

    let mut rows = Vec::new();
    let mut auc_by_year = Vec::with_capacity(years);
    let mut confusion_by_year = Vec::with_capacity(years);
    for year in 1..=years {
        let col = year - 1;
        let year_scores: Vec<f64> =
            forecasts.probabilities.iter().map(|r| r[col]).collect();
        let year_labels: Vec<bool> = truth.iter().map(|r| r[col]).collect();
        rows.push(FoldYearMetrics {
            year,
            fold: 0,
            auc: auc(&year_scores, &year_labels),
            confusion: confusion_at_threshold(&year_scores, &year_labels, threshold),
        });
        confusion_by_year.push(confusion_at_threshold(&year_scores, &year_labels, threshold));

        let mut fold_aucs = Vec::new();
        for fold in 1..=folds {
            let idxs: Vec<usize> = (0..n).filter(|i| i % folds == fold - 1).collect();
            let scores: Vec<f64> = idxs.iter().map(|&i| year_scores[i]).collect();
            let labels: Vec<bool> = idxs.iter().map(|&i| year_labels[i]).collect();
            let fold_auc = auc(&scores, &labels);
            if let Some(a) = fold_auc {
                fold_aucs.push(a);
            }
            rows.push(FoldYearMetrics {
                year,
                fold,
                auc: fold_auc,
                confusion: confusion_at_threshold(&scores, &labels, threshold),
            });
        }
        auc_by_year.push(if fold_aucs.is_empty() {
            None
        } else {
            Some(fold_aucs.iter().sum::<f64>() / fold_aucs.len() as f64)
        });
    }

    Ok(ForecastMetrics { auc_by_year, confusion_by_year, threshold, folds, rows })
}

/// Writes metric rows as `forecast_year,auc,tp,fp,tn,fn,threshold,fold`;
/// undefined AUC is left blank.
pub fn write_metrics_csv(metrics: &ForecastMetrics, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["forecast_year", "auc", "tp", "fp", "tn", "fn", "threshold", "fold"])?;
    for row in &metrics.rows {
        w.write_record([
            row.year.to_string(),
            row.auc.map(|a| a.to_string()).unwrap_or_default(),
            row.confusion.tp.to_string(),
            row.confusion.fp.to_string(),
            row.confusion.tn.to_string(),
            row.confusion.fn_.to_string(),
            metrics.threshold.to_string(),
            row.fold.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Exhaustive positive-negative pair counting; the AUC oracle.
    fn auc_pair_oracle(scores: &[f64], labels: &[bool]) -> Option<f64> {
        let pos: Vec<f64> =
            scores.iter().zip(labels).filter(|(_, l)| **l).map(|(s, _)| *s).collect();
        let neg: Vec<f64> =
            scores.iter().zip(labels).filter(|(_, l)| !**l).map(|(s, _)| *s).collect();
        if pos.is_empty() || neg.is_empty() {
            return None;
        }
        let mut wins = 0.0;
        for p in &pos {
            for q in &neg {
                if p > q {
                    wins += 1.0;
                } else if p == q {
                    wins += 0.5;
                }
            }
        }
        Some(wins / (pos.len() * neg.len()) as f64)
    }

    #[test]
    fn perfect_separation_gives_auc_one() {
        let scores = [0.9, 0.8, 0.2, 0.1];
        let labels = [true, true, false, false];
        assert_eq!(auc(&scores, &labels), Some(1.0));
        let t = accuracy_maximizing_threshold(&scores, &labels);
        let c = confusion_at_threshold(&scores, &labels, t);
        assert!((c.accuracy() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_scores_give_auc_half() {
        let scores = [0.5; 6];
        let labels = [true, false, true, false, false, true];
        assert_eq!(auc(&scores, &labels), Some(0.5));
    }

    #[test]
    fn four_point_ranking_matches_pair_oracle() {
        let scores = [0.1, 0.4, 0.35, 0.8];
        let labels = [false, true, false, true];
        assert_eq!(auc(&scores, &labels), auc_pair_oracle(&scores, &labels));
    }

    #[test]
    fn rank_auc_equals_pair_oracle_with_ties() {
        // Deterministic pseudo-random instances up to 200 points, with ties.
        let mut seq = 0.81_f64;
        for trial in 0..50 {
            let n = 5 + (trial * 4) % 196;
            let mut scores = Vec::with_capacity(n);
            let mut labels = Vec::with_capacity(n);
            for _ in 0..n {
                seq = (seq * 997.0 + 0.3).fract();
                scores.push((seq * 10.0).round() / 10.0); // coarse grid forces ties
                seq = (seq * 997.0 + 0.3).fract();
                labels.push(seq < 0.4);
            }
            assert_eq!(auc(&scores, &labels), auc_pair_oracle(&scores, &labels), "trial {trial}");
        }
    }

    #[test]
    fn single_class_year_reports_absent() {
        let forecasts = ForecastHorizon {
            patient_ids: vec!["a".into(), "b".into()],
            probabilities: vec![vec![0.3, 0.6], vec![0.4, 0.2]],
            origin_epoch: 1,
            horizon_end: 2,
        };
        let truth = vec![vec![true, true], vec![false, true]];
        let m = evaluate(&forecasts, &truth, 1).unwrap();
        assert!(m.auc_by_year[0].is_some());
        assert!(m.auc_by_year[1].is_none()); // year 2 truth is single-class
    }

    #[test]
    fn confusion_rates_sum_to_one() {
        let scores = [0.2, 0.6, 0.7, 0.3, 0.5];
        let labels = [false, true, true, false, true];
        let c = confusion_at_threshold(&scores, &labels, 0.5);
        assert!((c.tp + c.fp + c.tn + c.fn_ - 1.0).abs() < 1e-9);
    }

    #[test]
    fn evaluate_perfect_forecasts() {
        // Ordering keeps both classes in each round-robin fold.
        let forecasts = ForecastHorizon {
            patient_ids: (0..4).map(|i| format!("p{i}")).collect(),
            probabilities: vec![
                vec![1.0 - 1e-9],
                vec![1e-9],
                vec![1e-9],
                vec![1.0 - 1e-9],
            ],
            origin_epoch: 1,
            horizon_end: 1,
        };
        let truth = vec![vec![true], vec![false], vec![false], vec![true]];
        let m = evaluate(&forecasts, &truth, 2).unwrap();
        assert_eq!(m.auc_by_year[0], Some(1.0));
        assert!((m.confusion_by_year[0].accuracy() - 1.0).abs() < 1e-12);
    }
}
