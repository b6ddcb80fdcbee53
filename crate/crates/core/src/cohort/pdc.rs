//! Percentage-days-covered from pharmacy claims, and the adherence labels
//! derived from it.

use chrono::NaiveDate;

use super::ClaimRecord;
use crate::error::{Error, Result};

/// Fraction of days in `[quarter_start, quarter_end)` on which medication
/// supply was available.
///
/// Claims must be sorted by fill date. Supply from each fill runs
/// `days_supply` days; when a refill arrives while supply is still on hand,
/// the new supply is pushed forward to start when the old one runs out
/// (stockpiling), so covered intervals never overlap and the result never
/// exceeds 1. Claims before the quarter contribute carried-in supply.
pub fn compute_pdc(
    claims: &[ClaimRecord],
    quarter_start: NaiveDate,
    quarter_end: NaiveDate,
) -> Result<f64> {
    if quarter_end <= quarter_start {
        return Err(Error::InvalidInput(format!(
            "quarter_end {quarter_end} must be after quarter_start {quarter_start}"
        )));
    }
    for w in claims.windows(2) {
        if w[1].fill_date < w[0].fill_date {
            return Err(Error::InvalidInput(
                "claims must be sorted by fill_date".into(),
            ));
        }
    }
    let total_days = (quarter_end - quarter_start).num_days();
    let mut covered: i64 = 0;
    // Exclusive date up to which supply on hand lasts.
    let mut supply_until: Option<NaiveDate> = None;
    for claim in claims {
        claim.validate()?;
        let start = match supply_until {
            Some(until) if until > claim.fill_date => until,
            _ => claim.fill_date,
        };
        let end = start + chrono::Duration::days(i64::from(claim.days_supply));
        let lo = start.max(quarter_start);
        let hi = end.min(quarter_end);
        if hi > lo {
            covered += (hi - lo).num_days();
        }
        supply_until = Some(end);
    }
    Ok(covered as f64 / total_days as f64)
}

/// A quarter is adherent when its PDC meets the threshold (inclusive).
pub fn label_adherence_quarter(pdc: f64, threshold: f64) -> Result<bool> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(Error::InvalidInput(format!(
            "threshold {threshold} outside (0, 1]"
        )));
    }
    if !(0.0..=1.0).contains(&pdc) {
        return Err(Error::InvalidInput(format!("pdc {pdc} outside [0, 1]")));
    }
    Ok(pdc >= threshold)
}

/// A year is adherent unless two or more of its four quarters are
/// non-adherent. Takes the four per-quarter adherent flags.
pub fn label_adherence_year(quarter_adherent: &[bool]) -> Result<bool> {
    if quarter_adherent.len() != 4 {
        return Err(Error::InvalidInput(format!(
            "expected exactly 4 quarter flags, got {}",
            quarter_adherent.len()
        )));
    }
    let non_adherent = quarter_adherent.iter().filter(|a| !**a).count();
    Ok(non_adherent < 2)
}
