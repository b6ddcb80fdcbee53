//! Parameter sweeps and the intervention-catalog comparison, with their
//! CSV formats.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    run_replications_with_ctx, DecisionLogRow, SimContext, SimulationConfig, SimulationSummary,
};
use crate::error::{Error, Result};
use crate::rules::RuleKind;

/// One-at-a-time sweep axes around a base configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepGrid {
    pub capacities: Vec<f64>,
    pub qs: Vec<f64>,
    pub rs: Vec<f64>,
    pub rules: Vec<RuleKind>,
}

impl Default for SweepGrid {
    fn default() -> Self {
        Self {
            capacities: vec![0.15, 0.25, 0.35, 0.45, 0.55, 0.65, 0.75],
            qs: vec![0.70, 0.75, 0.80, 0.85, 0.90],
            rs: vec![0.07, 0.08, 0.09, 0.10, 0.11, 0.12],
            rules: RuleKind::ALL.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub rule: RuleKind,
    pub capacity: f64,
    pub q: f64,
    pub r: f64,
    pub mean_events_per_100k: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub events_reduced: f64,
    pub cost: f64,
}

impl SweepRow {
    fn from_summary(summary: &SimulationSummary, cost: f64) -> Self {
        Self {
            rule: summary.rule,
            capacity: summary.capacity_fraction,
            q: summary.q,
            r: summary.r,
            mean_events_per_100k: summary.mean_events_per_100k,
            ci_low: summary.events_ci_low,
            ci_high: summary.events_ci_high,
            events_reduced: summary.mean_events_reduced,
            cost,
        }
    }
}

/// Runs one cell per rule per grid point, varying a single axis at a time
/// around the base configuration (duplicate cells collapse). Shares one
/// fitted context across every cell.
pub fn sensitivity_sweep(
    ctx: &SimContext,
    base: &SimulationConfig,
    grid: &SweepGrid,
) -> Result<Vec<SweepRow>> {
    if grid.capacities.is_empty() && grid.qs.is_empty() && grid.rs.is_empty() {
        return Err(Error::InvalidInput("sweep grid is empty".into()));
    }
    let mut cells: Vec<(f64, f64, f64)> = Vec::new();
    let push = |cell: (f64, f64, f64), cells: &mut Vec<(f64, f64, f64)>| {
        if !cells.iter().any(|c| c == &cell) {
            cells.push(cell);
        }
    };
    for &capacity in &grid.capacities {
        push((capacity, base.q, base.r), &mut cells);
    }
    for &q in &grid.qs {
        push((base.capacity_fraction, q, base.r), &mut cells);
    }
    for &r in &grid.rs {
        push((base.capacity_fraction, base.q, r), &mut cells);
    }

    let mut rows = Vec::new();
    for rule in &grid.rules {
        for &(capacity, q, r) in &cells {
            let config = SimulationConfig {
                rule: *rule,
                capacity_fraction: capacity,
                q,
                r,
                ..base.clone()
            };
            let summary = run_replications_with_ctx(ctx, &config)?;
            rows.push(SweepRow::from_summary(&summary, 0.0));
        }
    }
    Ok(rows)
}

pub fn write_results_csv(rows: &[SweepRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "rule",
        "capacity",
        "q",
        "r",
        "mean_events_per_100k",
        "ci_low",
        "ci_high",
        "events_reduced",
        "cost",
    ])?;
    for row in rows {
        w.write_record([
            row.rule.as_str().to_string(),
            row.capacity.to_string(),
            row.q.to_string(),
            row.r.to_string(),
            row.mean_events_per_100k.to_string(),
            row.ci_low.to_string(),
            row.ci_high.to_string(),
            row.events_reduced.to_string(),
            row.cost.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_decision_log_csv(rows: &[DecisionLogRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["epoch", "rule", "patient_id", "score", "selected"])?;
    for row in rows {
        w.write_record([
            row.epoch.to_string(),
            row.rule.as_str().to_string(),
            row.patient_id.clone(),
            row.score.to_string(),
            row.selected.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterventionCatalogEntry {
    pub name: String,
    pub success_probability: f64,
    pub monthly_cost: f64,
}

/// Published adherence-improving interventions: average success probability
/// and monthly cost per patient.
pub fn default_catalog() -> Vec<InterventionCatalogEntry> {
    let rows: [(&str, f64, f64); 5] = [
        ("Financial incentives", 0.44, 42.0),
        ("Medication management", 0.51, 21.8),
        ("Cognitive behavioral therapy", 0.79, 62.11),
        ("Electronic pill count", 0.88, 32.06),
        ("Pharmacist consultation", 0.89, 29.98),
    ];
    rows.iter()
        .map(|&(name, success_probability, monthly_cost)| InterventionCatalogEntry {
            name: name.to_string(),
            success_probability,
            monthly_cost,
        })
        .collect()
}

pub fn read_catalog_csv(path: &Path) -> Result<Vec<InterventionCatalogEntry>> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    {
        let headers = reader.headers()?;
        let expected = ["name", "success_probability", "monthly_cost"];
        if headers.iter().ne(expected) {
            return Err(Error::SchemaMismatch(format!(
                "catalog header {:?}, expected {:?}",
                headers.iter().collect::<Vec<_>>(),
                expected
            )));
        }
    }
    let mut out = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record?;
        let malformed = |m: String| Error::MalformedRow { row, message: m };
        if record.len() != 3 {
            return Err(malformed(format!("expected 3 fields, got {}", record.len())));
        }
        let success_probability: f64 = record[1]
            .parse()
            .map_err(|e| malformed(format!("success_probability: {e}")))?;
        if !(0.0..=1.0).contains(&success_probability) {
            return Err(malformed(format!(
                "success_probability {success_probability} outside [0, 1]"
            )));
        }
        let monthly_cost: f64 =
            record[2].parse().map_err(|e| malformed(format!("monthly_cost: {e}")))?;
        if monthly_cost < 0.0 {
            return Err(malformed(format!("monthly_cost {monthly_cost} negative")));
        }
        out.push(InterventionCatalogEntry {
            name: record[0].to_string(),
            success_probability,
            monthly_cost,
        });
    }
    Ok(out)
}

pub fn write_catalog_csv(catalog: &[InterventionCatalogEntry], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["name", "success_probability", "monthly_cost"])?;
    for entry in catalog {
        w.write_record([
            entry.name.clone(),
            entry.success_probability.to_string(),
            entry.monthly_cost.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub intervention: String,
    pub success_probability: f64,
    pub monthly_cost: f64,
    pub capacity: f64,
    pub mean_events_reduced: f64,
    pub reduced_ci_low: f64,
    pub reduced_ci_high: f64,
    pub mean_interventions_delivered: f64,
    /// `monthly_cost x interventions delivered`.
    pub total_monthly_cost: f64,
}

/// Compares catalog interventions at each capacity under the adaptive rule,
/// substituting each entry's success probability for `q`.
pub fn intervention_comparison(
    ctx: &SimContext,
    base: &SimulationConfig,
    catalog: &[InterventionCatalogEntry],
    capacities: &[f64],
) -> Result<Vec<ComparisonRow>> {
    if catalog.is_empty() {
        return Err(Error::InvalidInput("empty intervention catalog".into()));
    }
    let mut rows = Vec::new();
    for entry in catalog {
        for &capacity in capacities {
            let config = SimulationConfig {
                rule: RuleKind::BipDlr,
                q: entry.success_probability,
                capacity_fraction: capacity,
                ..base.clone()
            };
            let summary = run_replications_with_ctx(ctx, &config)?;
            rows.push(ComparisonRow {
                intervention: entry.name.clone(),
                success_probability: entry.success_probability,
                monthly_cost: entry.monthly_cost,
                capacity,
                mean_events_reduced: summary.mean_events_reduced,
                reduced_ci_low: summary.reduced_ci_low,
                reduced_ci_high: summary.reduced_ci_high,
                mean_interventions_delivered: summary.mean_interventions_delivered,
                total_monthly_cost: entry.monthly_cost * summary.mean_interventions_delivered,
            });
        }
    }
    Ok(rows)
}

pub fn write_comparison_csv(rows: &[ComparisonRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "intervention",
        "success_probability",
        "monthly_cost",
        "capacity",
        "mean_events_reduced",
        "reduced_ci_low",
        "reduced_ci_high",
        "mean_interventions_delivered",
        "total_monthly_cost",
    ])?;
    for row in rows {
        w.write_record([
            row.intervention.clone(),
            row.success_probability.to_string(),
            row.monthly_cost.to_string(),
            row.capacity.to_string(),
            row.mean_events_reduced.to_string(),
            row.reduced_ci_low.to_string(),
            row.reduced_ci_high.to_string(),
            row.mean_interventions_delivered.to_string(),
            row.total_monthly_cost.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
