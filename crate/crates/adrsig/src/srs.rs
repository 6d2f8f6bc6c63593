//! Spontaneous-report transform and the lower-bound reporting odds ratio.
//!
//! Longitudinal records are flattened into pseudo spontaneous reports: one
//! report per (prescription, distinct event code within 30 days after the
//! prescription). Disproportionality is then scored per (drug, event) from
//! the 2x2 contingency of the whole report pool, and ranked by the lower
//! bound of the 90% confidence interval of the reporting odds ratio, so a
//! score above 1 is a one-sided 95% signal.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::codes::{CodeId, DrugId};
use crate::rank::{order_by_score_desc, Algorithm, RankedEntry, RankedSignalList};
use crate::store::{EventDatabase, PatientId};

/// Events occurring up to this many days after a prescription (inclusive,
/// day 0 included) join that prescription's report.
pub const REPORT_WINDOW_DAYS: i32 = 30;
/// z multiplier for the 90% two-sided confidence interval.
pub const Z_90: f64 = 1.645;
/// Minimum observed (drug, event) report count for candidacy.
pub const MIN_PAIR_REPORTS: u64 = 3;

#[derive(Debug, Error, PartialEq)]
pub enum SrsError {
    #[error("odds ratio undefined: zero cell in contingency table w00={w00} w01={w01} w10={w10} w11={w11}")]
    ZeroCell { w00: u64, w01: u64, w10: u64, w11: u64 },
}

/// One pseudo spontaneous report.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SrsReport {
    pub patient: PatientId,
    pub drug: DrugId,
    pub event: CodeId,
}

/// Flatten the store into pseudo reports. Every stored prescription
/// contributes one report per distinct event code recorded within
/// [0, 30] days of it; reports from distinct prescriptions are kept even
/// when they repeat the same (patient, drug, event) triple.
pub fn transform_to_srs(db: &EventDatabase) -> Vec<SrsReport> {
    let mut reports = Vec::new();
    for patient in db.patient_ids() {
        for &(date, drug) in db.prescriptions_of(patient) {
            let codes = db
                .events_in_window(patient, date, 0, REPORT_WINDOW_DAYS)
                .expect("constant window is well-formed");
            for event in codes {
                reports.push(SrsReport {
                    patient,
                    drug,
                    event,
                });
            }
        }
    }
    reports
}

/// 2x2 report contingency for one (drug, event) pair.
///
/// w00: reports of (drug, event); w01: drug with another event;
/// w10: event with another drug; w11: neither. Cells partition the report
/// pool, so the total always equals the pool size.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ContingencyTable {
    pub w00: u64,
    pub w01: u64,
    pub w10: u64,
    pub w11: u64,
}

impl ContingencyTable {
    pub fn total(&self) -> u64 {
        self.w00 + self.w01 + self.w10 + self.w11
    }
}

/// Classify every report against one (drug, event) pair.
pub fn contingency(reports: &[SrsReport], drug: DrugId, event: CodeId) -> ContingencyTable {
    let mut t = ContingencyTable {
        w00: 0,
        w01: 0,
        w10: 0,
        w11: 0,
    };
    for r in reports {
        match (r.drug == drug, r.event == event) {
            (true, true) => t.w00 += 1,
            (true, false) => t.w01 += 1,
            (false, true) => t.w10 += 1,
            (false, false) => t.w11 += 1,
        }
    }
    t
}

/// Reporting odds ratio (w00/w10)/(w01/w11). Defined for w00 = 0 (the ratio
/// is 0); any other zero cell leaves it undefined.
pub fn ror(t: &ContingencyTable) -> Result<f64, SrsError> {
    if t.w01 == 0 || t.w10 == 0 || t.w11 == 0 {
        return Err(SrsError::ZeroCell {
            w00: t.w00,
            w01: t.w01,
            w10: t.w10,
            w11: t.w11,
        });
    }
    Ok((t.w00 as f64 / t.w10 as f64) / (t.w01 as f64 / t.w11 as f64))
}

/// Lower bound of the 90% confidence interval of the reporting odds ratio:
/// exp(ln ROR - 1.645 * sqrt(1/w00 + 1/w01 + 1/w10 + 1/w11)).
/// Needs every cell positive.
pub fn ror_lower90(t: &ContingencyTable) -> Result<f64, SrsError> {
    if t.w00 == 0 || t.w01 == 0 || t.w10 == 0 || t.w11 == 0 {
        return Err(SrsError::ZeroCell {
            w00: t.w00,
            w01: t.w01,
            w10: t.w10,
            w11: t.w11,
        });
    }
    let r = ror(t)?;
    let se = (1.0 / t.w00 as f64
        + 1.0 / t.w01 as f64
        + 1.0 / t.w10 as f64
        + 1.0 / t.w11 as f64)
        .sqrt();
    Ok((r.ln() - Z_90 * se).exp())
}

/// Aggregated report counts, built in one pass so per-pair contingencies are
/// O(log n) lookups instead of pool scans.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SrsIndex {
    total: u64,
    pair: BTreeMap<(DrugId, CodeId), u64>,
    per_drug: Vec<u64>,
    per_event: Vec<u64>,
}

impl SrsIndex {
    pub fn build(db: &EventDatabase) -> SrsIndex {
        let mut index = SrsIndex {
            total: 0,
            pair: BTreeMap::new(),
            per_drug: vec![0; db.drug_codes().len()],
            per_event: vec![0; db.event_codes().len()],
        };
        for patient in db.patient_ids() {
            for &(date, drug) in db.prescriptions_of(patient) {
                let codes = db
                    .events_in_window(patient, date, 0, REPORT_WINDOW_DAYS)
                    .expect("constant window is well-formed");
                for event in codes {
                    index.total += 1;
                    index.per_drug[drug.0 as usize] += 1;
                    index.per_event[event.0 as usize] += 1;
                    *index.pair.entry((drug, event)).or_insert(0) += 1;
                }
            }
        }
        index
    }

    pub fn total_reports(&self) -> u64 {
        self.total
    }

    pub fn contingency(&self, drug: DrugId, event: CodeId) -> ContingencyTable {
        let w00 = self.pair.get(&(drug, event)).copied().unwrap_or(0);
        let drug_total = self.per_drug.get(drug.0 as usize).copied().unwrap_or(0);
        let event_total = self.per_event.get(event.0 as usize).copied().unwrap_or(0);
        ContingencyTable {
            w00,
            w01: drug_total - w00,
            w10: event_total - w00,
            // Summed before subtracting: inclusion-exclusion keeps the final
            // value non-negative but not every left-to-right intermediate.
            w11: (self.total + w00) - drug_total - event_total,
        }
    }

    /// Events reported with `drug`, with their report counts, ascending code.
    pub fn events_of_drug(&self, drug: DrugId) -> impl Iterator<Item = (CodeId, u64)> + '_ {
        self.pair
            .range((drug, CodeId(0))..=(drug, CodeId(u32::MAX)))
            .map(|(&(_, e), &n)| (e, n))
    }
}

/// Rank candidate events for one drug by the lower-bound reporting odds
/// ratio. Candidates are non-excluded events reported at least three times
/// with the drug; a candidate whose table still holds a zero cell cannot be
/// scored and is left out. The natural signal threshold is score > 1.
pub fn rank_by_ror05_indexed(
    db: &EventDatabase,
    index: &SrsIndex,
    drug: DrugId,
) -> RankedSignalList {
    let mut scored: Vec<(CodeId, f64)> = Vec::new();
    for (event, n) in index.events_of_drug(drug) {
        if n < MIN_PAIR_REPORTS || db.is_excluded(event) {
            continue;
        }
        if let Ok(score) = ror_lower90(&index.contingency(drug, event)) {
            scored.push((event, score));
        }
    }
    order_by_score_desc(&mut scored);
    RankedSignalList {
        drug_code: db.drug_code_str(drug).to_string(),
        algorithm: Algorithm::Ror05,
        entries: scored
            .into_iter()
            .zip(1u32..)
            .map(|((event, score), rank)| RankedEntry {
                event_code: db.event_code_str(event).to_string(),
                score,
                rank,
                signalled: score > 1.0,
            })
            .collect(),
    }
}

/// Convenience wrapper building the index for a single drug.
pub fn rank_by_ror05(db: &EventDatabase, drug: DrugId) -> RankedSignalList {
    rank_by_ror05_indexed(db, &SrsIndex::build(db), drug)
}
