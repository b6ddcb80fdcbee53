//! Cohort persistence (versioned JSON) and claims/biometrics CSV ingestion.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::{
    compute_pdc, BiometricKind, BiometricRecord, ClaimRecord, Cohort, DemographicProfile, Patient,
    QuarterlyRecord,
};
use crate::error::{Error, Result};

pub const COHORT_SCHEMA_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct CohortFile {
    schema_version: u32,
    #[serde(flatten)]
    cohort: Cohort,
}

/// Writes the cohort as a single versioned JSON document.
pub fn save_cohort(cohort: &Cohort, path: &Path) -> Result<()> {
    let file = CohortFile { schema_version: COHORT_SCHEMA_VERSION, cohort: cohort.clone() };
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer(&mut w, &file)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

/// Reads a cohort, checking the schema version and structural invariants.
pub fn load_cohort(path: &Path) -> Result<Cohort> {
    let mut buf = String::new();
    BufReader::new(File::open(path)?).read_to_string(&mut buf)?;
    let file: CohortFile = serde_json::from_str(&buf)
        .map_err(|e| Error::SchemaMismatch(format!("{}: {e}", path.display())))?;
    if file.schema_version != COHORT_SCHEMA_VERSION {
        return Err(Error::SchemaMismatch(format!(
            "cohort schema version {} (expected {})",
            file.schema_version, COHORT_SCHEMA_VERSION
        )));
    }
    file.cohort.validate()?;
    Ok(file.cohort)
}

/// Reads `patient_id,fill_date,days_supply` rows. Errors name the 1-based
/// data row that failed.
pub fn read_claims_csv(path: &Path) -> Result<Vec<ClaimRecord>> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    {
        let headers = reader.headers()?;
        let expected = ["patient_id", "fill_date", "days_supply"];
        if headers.iter().ne(expected) {
            return Err(Error::SchemaMismatch(format!(
                "claims header {:?}, expected {:?}",
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
        let patient_id = record[0].to_string();
        if patient_id.is_empty() {
            return Err(malformed("empty patient_id".into()));
        }
        let fill_date = NaiveDate::parse_from_str(&record[1], "%Y-%m-%d")
            .map_err(|e| malformed(format!("fill_date {:?}: {e}", &record[1])))?;
        let days_supply: i64 = record[2]
            .parse()
            .map_err(|e| malformed(format!("days_supply {:?}: {e}", &record[2])))?;
        if days_supply <= 0 {
            return Err(malformed(format!("days_supply {days_supply} must be positive")));
        }
        if days_supply > 365 {
            return Err(malformed(format!("days_supply {days_supply} exceeds 365")));
        }
        out.push(ClaimRecord { patient_id, fill_date, days_supply: days_supply as u32 });
    }
    Ok(out)
}

pub fn write_claims_csv(claims: &[ClaimRecord], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["patient_id", "fill_date", "days_supply"])?;
    for c in claims {
        w.write_record([
            c.patient_id.as_str(),
            &c.fill_date.format("%Y-%m-%d").to_string(),
            &c.days_supply.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads `patient_id,date,kind,value` rows with plausibility checks.
pub fn read_biometrics_csv(path: &Path) -> Result<Vec<BiometricRecord>> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    {
        let headers = reader.headers()?;
        let expected = ["patient_id", "date", "kind", "value"];
        if headers.iter().ne(expected) {
            return Err(Error::SchemaMismatch(format!(
                "biometrics header {:?}, expected {:?}",
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
        if record.len() != 4 {
            return Err(malformed(format!("expected 4 fields, got {}", record.len())));
        }
        let kind = match &record[2] {
            "SBP" => BiometricKind::Sbp,
            "LDL" => BiometricKind::Ldl,
            "total_cholesterol" => BiometricKind::TotalCholesterol,
            other => return Err(malformed(format!("unknown biometric kind {other:?}"))),
        };
        let date = NaiveDate::parse_from_str(&record[1], "%Y-%m-%d")
            .map_err(|e| malformed(format!("date {:?}: {e}", &record[1])))?;
        let value: f64 = record[3]
            .parse()
            .map_err(|e| malformed(format!("value {:?}: {e}", &record[3])))?;
        let rec = BiometricRecord { patient_id: record[0].to_string(), date, kind, value };
        rec.validate().map_err(|e| malformed(e.to_string()))?;
        out.push(rec);
    }
    Ok(out)
}

/// Demographic attributes supplied alongside raw claims when assembling a
/// cohort (claims and biometrics alone do not carry them).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PatientAttributes {
    pub demographics: DemographicProfile,
    pub baseline_cvd_risk: f64,
}

/// Builds quarterly histories from raw claims and biometric records.
///
/// Quarters are anchored at each patient's first fill date and run
/// `quarter_length_days` each; patients with fewer than four whole quarters
/// of claims history are dropped. Biometrics are recorded in the quarter of
/// their observation date; feature assembly carries them forward later.
pub fn assemble_cohort(
    claims: &[ClaimRecord],
    biometrics: &[BiometricRecord],
    attributes: &BTreeMap<String, PatientAttributes>,
    adherence_threshold: f64,
    quarter_length_days: u32,
) -> Result<Cohort> {
    let mut claims_by_patient: BTreeMap<&str, Vec<&ClaimRecord>> = BTreeMap::new();
    for c in claims {
        c.validate()?;
        claims_by_patient.entry(&c.patient_id).or_default().push(c);
    }
    let mut bio_by_patient: BTreeMap<&str, Vec<&BiometricRecord>> = BTreeMap::new();
    for b in biometrics {
        b.validate()?;
        bio_by_patient.entry(&b.patient_id).or_default().push(b);
    }

    let mut patients = Vec::new();
    for (pid, mut pclaims) in claims_by_patient {
        pclaims.sort_by_key(|c| c.fill_date);
        let attrs = attributes.get(pid).ok_or_else(|| {
            Error::InvalidInput(format!("no demographic attributes for patient {pid}"))
        })?;
        let anchor = pclaims[0].fill_date;
        let last_fill = pclaims.last().unwrap().fill_date;
        let span_days = (last_fill - anchor).num_days() as u32 + quarter_length_days;
        let n_quarters = (span_days / quarter_length_days) as usize;
        if n_quarters < 4 {
            continue; // less than a year of history
        }
        let owned: Vec<ClaimRecord> = pclaims.iter().map(|c| (*c).clone()).collect();
        let mut bios: Vec<&BiometricRecord> =
            bio_by_patient.get(pid).map(|v| v.clone()).unwrap_or_default();
        bios.sort_by_key(|b| b.date);

        let mut quarters = Vec::with_capacity(n_quarters);
        let mut bp_cum = 0u32;
        let mut chol_dates: Vec<NaiveDate> = Vec::new();
        for qt in 1..=n_quarters {
            let start = anchor + chrono::Duration::days(((qt - 1) as i64) * i64::from(quarter_length_days));
            let end = start + chrono::Duration::days(i64::from(quarter_length_days));
            let pdc = compute_pdc(&owned, start, end)?;
            let window: Vec<&BiometricRecord> = bios
                .iter()
                .copied()
                .filter(|b| b.date >= start && b.date < end)
                .collect();
            let latest = |kind: BiometricKind| {
                window.iter().filter(|b| b.kind == kind).last().map(|b| b.value)
            };
            bp_cum += window.iter().filter(|b| b.kind == BiometricKind::Sbp).count() as u32;
            for b in &window {
                if matches!(b.kind, BiometricKind::Ldl | BiometricKind::TotalCholesterol)
                    && !chol_dates.contains(&b.date)
                {
                    chol_dates.push(b.date);
                }
            }
            quarters.push(QuarterlyRecord {
                quarter_index: qt,
                pdc,
                adherent: pdc >= adherence_threshold,
                sbp: latest(BiometricKind::Sbp),
                ldl: latest(BiometricKind::Ldl),
                total_cholesterol: latest(BiometricKind::TotalCholesterol),
                n_bp_tests_cum: bp_cum,
                n_chol_tests_cum: chol_dates.len() as u32,
            });
        }
        patients.push(Patient {
            id: pid.to_string(),
            demographics: attrs.demographics.clone(),
            baseline_cvd_risk: attrs.baseline_cvd_risk,
            random_effect: 0.0,
            quarters,
            risk_path: vec![attrs.baseline_cvd_risk],
        });
    }
    let cohort = Cohort { patients, adherence_threshold, quarter_length_days };
    cohort.validate()?;
    Ok(cohort)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::{GeneratorConfig, Race, Sex};

    #[test]
    fn cohort_roundtrip_is_identity() {
        let cohort = crate::cohort::generate_synthetic_cohort(&GeneratorConfig {
            n: 20,
            seed: 5,
            ..Default::default()
        })
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cohort.json");
        save_cohort(&cohort, &path).unwrap();
        let loaded = load_cohort(&path).unwrap();
        assert_eq!(cohort, loaded);
    }

    #[test]
    fn bad_schema_version_rejected() {
        let cohort = crate::cohort::generate_synthetic_cohort(&GeneratorConfig {
            n: 5,
            seed: 5,
            ..Default::default()
        })
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cohort.json");
        save_cohort(&cohort, &path).unwrap();
        let text = std::fs::read_to_string(&path)
            .unwrap()
            .replace("\"schema_version\":1", "\"schema_version\":99");
        std::fs::write(&path, text).unwrap();
        assert!(matches!(load_cohort(&path), Err(Error::SchemaMismatch(_))));
    }

    #[test]
    fn claims_csv_negative_days_supply_names_row() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("claims.csv");
        std::fs::write(
            &path,
            "patient_id,fill_date,days_supply\np1,2015-01-01,90\np1,2015-04-01,-30\n",
        )
        .unwrap();
        match read_claims_csv(&path) {
            Err(Error::MalformedRow { row, .. }) => assert_eq!(row, 2),
            other => panic!("expected MalformedRow, got {other:?}"),
        }
    }

    #[test]
    fn claims_csv_header_only_is_empty() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("claims.csv");
        std::fs::write(&path, "patient_id,fill_date,days_supply\n").unwrap();
        assert!(read_claims_csv(&path).unwrap().is_empty());
    }

    #[test]
    fn claims_csv_roundtrip() {
        let claims = vec![
            ClaimRecord {
                patient_id: "p1".into(),
                fill_date: NaiveDate::from_ymd_opt(2015, 1, 1).unwrap(),
                days_supply: 90,
            },
            ClaimRecord {
                patient_id: "p2".into(),
                fill_date: NaiveDate::from_ymd_opt(2015, 2, 1).unwrap(),
                days_supply: 30,
            },
        ];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("claims.csv");
        write_claims_csv(&claims, &path).unwrap();
        assert_eq!(read_claims_csv(&path).unwrap(), claims);
    }

    #[test]
    fn biometrics_out_of_range_rejected_with_row() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bio.csv");
        std::fs::write(
            &path,
            "patient_id,date,kind,value\np1,2015-01-02,SBP,120\np1,2015-01-03,SBP,20\n",
        )
        .unwrap();
        match read_biometrics_csv(&path) {
            Err(Error::MalformedRow { row, .. }) => assert_eq!(row, 2),
            other => panic!("expected MalformedRow, got {other:?}"),
        }
    }

    #[test]
    fn assemble_builds_quarters_from_claims() {
        let pid = "p1".to_string();
        let anchor = NaiveDate::from_ymd_opt(2015, 1, 1).unwrap();
        let claims: Vec<ClaimRecord> = (0..5)
            .map(|k| ClaimRecord {
                patient_id: pid.clone(),
                fill_date: anchor + chrono::Duration::days(91 * k),
                days_supply: 91,
            })
            .collect();
        let biometrics = vec![
            BiometricRecord { patient_id: pid.clone(), date: anchor, kind: BiometricKind::Sbp, value: 130.0 },
            BiometricRecord { patient_id: pid.clone(), date: anchor, kind: BiometricKind::Ldl, value: 120.0 },
        ];
        let mut attrs = BTreeMap::new();
        attrs.insert(
            pid.clone(),
            PatientAttributes {
                demographics: DemographicProfile {
                    sex: Sex::Male,
                    race: Race::White,
                    smoker: false,
                    age_years: 60.0,
                },
                baseline_cvd_risk: 0.2,
            },
        );
        let cohort = assemble_cohort(&claims, &biometrics, &attrs, 0.8, 91).unwrap();
        assert_eq!(cohort.n_patients(), 1);
        let p = &cohort.patients[0];
        assert_eq!(p.quarters.len(), 5);
        assert!(p.quarters.iter().all(|q| q.adherent && (q.pdc - 1.0).abs() < 1e-12));
        assert_eq!(p.quarters[0].sbp, Some(130.0));
        assert_eq!(p.quarters[1].sbp, None); // observed only in quarter 1
        assert_eq!(p.quarters[4].n_bp_tests_cum, 1);
    }
}
