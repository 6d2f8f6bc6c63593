//! Temporal pattern discovery: shrunk information components over era-aligned
//! time windows, credibility intervals from the Gamma posterior, and the
//! IC_Δ contrast against a distant control period.
//!
//! The exposure unit is the treatment era (a first-in-thirteen-months
//! prescription). Four windows are anchored at the era start: the
//! prescription day itself, the month after, the month before, and a control
//! period 27 to 21 months prior. An era contributes to a window's counts
//! only when the patient's cleaned observation span covers the window
//! (active follow-up); with the intake filters in place this binds only for
//! the pre-prescription windows.
//!
//! Counts are per era, not per patient, and the background denominators run
//! over eras of every drug, the analyzed drug's own eras included.

use thiserror::Error;

use crate::codes::{CodeId, DrugId};
use crate::gamma::{gamma_quantile_tol, GammaError, QUANTILE_PROB_TOL};
use crate::rank::{Algorithm, RankedEntry, RankedSignalList};
use crate::store::{EventDatabase, PrescriptionEra};

/// Candidate events must occur within this many days of an era start.
pub const CANDIDATE_WINDOW_DAYS: i32 = 30;

/// Lower credibility quantile.
pub const CI_LOW_Q: f64 = 0.025;
/// Upper credibility quantile.
pub const CI_HIGH_Q: f64 = 0.975;

#[derive(Debug, Error, PartialEq)]
pub enum TpdError {
    #[error("expectation undefined: no era covers the {window} window")]
    UndefinedExpectation { window: WindowLabel },
    #[error(transparent)]
    Numeric(#[from] GammaError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum WindowLabel {
    Day0,
    MonthAfter,
    MonthBefore,
    Control,
}

impl WindowLabel {
    pub fn as_str(&self) -> &'static str {
        match self {
            WindowLabel::Day0 => "day0",
            WindowLabel::MonthAfter => "month_after",
            WindowLabel::MonthBefore => "month_before",
            WindowLabel::Control => "control",
        }
    }
}

impl std::fmt::Display for WindowLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Day-offset window relative to an era start, both bounds inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TimeWindow {
    pub label: WindowLabel,
    pub start: i32,
    pub end: i32,
}

/// The prescription day, scored apart so the stricter filter can use it.
pub const DAY0: TimeWindow = TimeWindow {
    label: WindowLabel::Day0,
    start: 0,
    end: 0,
};
/// The follow-up month.
pub const MONTH_AFTER: TimeWindow = TimeWindow {
    label: WindowLabel::MonthAfter,
    start: 1,
    end: 30,
};
/// The month leading up to the prescription.
pub const MONTH_BEFORE: TimeWindow = TimeWindow {
    label: WindowLabel::MonthBefore,
    start: -30,
    end: -1,
};
/// 27 to 21 months prior, in 30-day months.
pub const CONTROL: TimeWindow = TimeWindow {
    label: WindowLabel::Control,
    start: -810,
    end: -630,
};

pub const WINDOWS: [TimeWindow; 4] = [DAY0, MONTH_AFTER, MONTH_BEFORE, CONTROL];

fn window_index(label: WindowLabel) -> usize {
    match label {
        WindowLabel::Day0 => 0,
        WindowLabel::MonthAfter => 1,
        WindowLabel::MonthBefore => 2,
        WindowLabel::Control => 3,
    }
}

/// Era counts behind one (drug, event, window) cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PeriodCounts {
    pub window: WindowLabel,
    /// Covered eras of the drug whose patient has the event in the window.
    pub n_xy: u64,
    /// Covered eras of the drug.
    pub n_x: u64,
    /// Covered eras of any drug whose patient has the event in the window.
    pub n_y: u64,
    /// Covered eras of any drug.
    pub n_dotdot: u64,
}

impl PeriodCounts {
    /// Expected era count under drug/event independence:
    /// n_x * n_y / n_dotdot.
    pub fn expected(&self) -> Result<f64, TpdError> {
        if self.n_dotdot == 0 {
            return Err(TpdError::UndefinedExpectation {
                window: self.window,
            });
        }
        Ok(self.n_x as f64 * (self.n_y as f64 / self.n_dotdot as f64))
    }
}

/// True when the patient's cleaned observation span covers the whole
/// window anchored at this era.
fn covers(db: &EventDatabase, era: &PrescriptionEra, w: &TimeWindow) -> bool {
    db.observation_start(era.patient) <= era.start.offset(w.start)
        && era.start.offset(w.end) <= db.observation_end(era.patient)
}

/// Count one (drug, event, window) cell by scanning every era in the store.
pub fn period_counts(
    db: &EventDatabase,
    drug: DrugId,
    event: CodeId,
    window: &TimeWindow,
) -> PeriodCounts {
    let mut c = PeriodCounts {
        window: window.label,
        n_xy: 0,
        n_x: 0,
        n_y: 0,
        n_dotdot: 0,
    };
    for era in db.all_eras() {
        if !covers(db, &era, window) {
            continue;
        }
        c.n_dotdot += 1;
        let has = db.has_event_in_window(era.patient, event, era.start, window.start, window.end);
        if has {
            c.n_y += 1;
        }
        if era.drug == drug {
            c.n_x += 1;
            if has {
                c.n_xy += 1;
            }
        }
    }
    c
}

/// Point estimate with a 95% credibility interval, all on the log2 scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IcEstimate {
    pub ic: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

/// Shrunk information component: log2((n + 1/2) / (e + 1/2)). The half
/// counts pull the estimate toward zero and keep it finite at n = 0 or
/// e = 0.
pub fn ic_shrunk(n: u64, e: f64) -> f64 {
    ((n as f64 + 0.5) / (e + 0.5)).log2()
}

/// log2 of the q-quantile of the Gamma posterior with shape n + 1/2 and
/// rate e + 1/2.
pub fn ic_credibility(n: u64, e: f64, q: f64) -> Result<f64, GammaError> {
    ic_credibility_tol(n, e, q, QUANTILE_PROB_TOL)
}

/// [`ic_credibility`] with a caller-chosen quantile tolerance.
pub fn ic_credibility_tol(n: u64, e: f64, q: f64, tol: f64) -> Result<f64, GammaError> {
    Ok(gamma_quantile_tol(n as f64 + 0.5, e + 0.5, q, tol)?.log2())
}

/// IC_Δ: the follow-up window's IC after rescaling its expectation by the
/// control window's shrunk observed-to-expected ratio,
/// E*_u = ((n_v + 1/2) / (e_v + 1/2)) * e_u. Credibility bounds come from
/// the same posterior with E*_u in place of the raw expectation.
pub fn ic_delta(n_u: u64, e_u: f64, n_v: u64, e_v: f64) -> Result<IcEstimate, GammaError> {
    ic_delta_tol(n_u, e_u, n_v, e_v, QUANTILE_PROB_TOL)
}

/// [`ic_delta`] with a caller-chosen quantile tolerance.
pub fn ic_delta_tol(
    n_u: u64,
    e_u: f64,
    n_v: u64,
    e_v: f64,
    tol: f64,
) -> Result<IcEstimate, GammaError> {
    let e_star = ((n_v as f64 + 0.5) / (e_v + 0.5)) * e_u;
    Ok(IcEstimate {
        ic: ic_shrunk(n_u, e_star),
        ci_low: ic_credibility_tol(n_u, e_star, CI_LOW_Q, tol)?,
        ci_high: ic_credibility_tol(n_u, e_star, CI_HIGH_Q, tol)?,
    })
}

/// Store-wide denominators for every window: total covered eras and, per
/// event code, the covered eras whose patient has the event in the window.
/// Built once per store and shared across drugs.
pub struct Background {
    n_dotdot: [u64; 4],
    n_y: [Vec<u64>; 4],
}

impl Background {
    pub fn build(db: &EventDatabase) -> Background {
        let n_codes = db.event_codes().len();
        let mut n_dotdot = [0u64; 4];
        let mut n_y: [Vec<u64>; 4] = std::array::from_fn(|_| vec![0u64; n_codes]);
        for era in db.all_eras() {
            for (i, w) in WINDOWS.iter().enumerate() {
                if !covers(db, &era, w) {
                    continue;
                }
                n_dotdot[i] += 1;
                let codes = db
                    .events_in_window(era.patient, era.start, w.start, w.end)
                    .expect("window constants are ordered");
                for code in codes {
                    n_y[i][code.0 as usize] += 1;
                }
            }
        }
        Background { n_dotdot, n_y }
    }

    pub fn n_dotdot(&self, label: WindowLabel) -> u64 {
        self.n_dotdot[window_index(label)]
    }

    pub fn n_y(&self, label: WindowLabel, event: CodeId) -> u64 {
        self.n_y[window_index(label)][event.0 as usize]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TpdVariant {
    /// Removes events whose month-before or day-0 IC exceeds the
    /// month-after IC.
    Tpd1,
    /// Removes only on the month-before clause.
    Tpd2,
}

/// Which filter clause removed an event, if any. `Tpd2` marks the
/// month-before clause, which both variants apply; `Tpd1` marks the day-0
/// clause, which only the stricter variant applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FilteredBy {
    None,
    Tpd1,
    Tpd2,
}

/// Every per-candidate quantity the ranking and its filters consume.
#[derive(Debug, Clone, PartialEq)]
pub struct TpdScore {
    pub event: CodeId,
    pub ic_delta: f64,
    pub ic_delta_ci_low: f64,
    pub ic_day0: f64,
    pub ic_month_before: f64,
    pub ic_month_after: f64,
    pub filtered_by: FilteredBy,
}

impl TpdScore {
    fn removed_under(&self, variant: TpdVariant) -> bool {
        match variant {
            TpdVariant::Tpd1 => self.filtered_by != FilteredBy::None,
            TpdVariant::Tpd2 => self.filtered_by == FilteredBy::Tpd2,
        }
    }
}

/// Score every candidate event of `drug`: non-excluded codes occurring
/// within [0, 30] days of any era. Returned in ascending event-code order,
/// filter outcomes attached but nothing removed.
pub fn tpd_scores(
    db: &EventDatabase,
    bg: &Background,
    drug: DrugId,
) -> Result<Vec<TpdScore>, TpdError> {
    tpd_scores_tol(db, bg, drug, QUANTILE_PROB_TOL)
}

/// [`tpd_scores`] with a caller-chosen quantile tolerance.
pub fn tpd_scores_tol(
    db: &EventDatabase,
    bg: &Background,
    drug: DrugId,
    tol: f64,
) -> Result<Vec<TpdScore>, TpdError> {
    let eras = db.find_eras(drug);
    if eras.is_empty() {
        return Ok(Vec::new());
    }
    let n_codes = db.event_codes().len();

    let mut candidates: Vec<CodeId> = Vec::new();
    // Covered eras of the drug and, per code, covered eras whose patient
    // has the event in the window.
    let mut n_x = [0u64; 4];
    let mut n_xy: [Vec<u64>; 4] = std::array::from_fn(|_| vec![0u64; n_codes]);
    for era in &eras {
        let early = db
            .events_in_window(era.patient, era.start, 0, CANDIDATE_WINDOW_DAYS)
            .expect("ordered bounds");
        candidates.extend(early.into_iter().filter(|&c| !db.is_excluded(c)));
        for (i, w) in WINDOWS.iter().enumerate() {
            if !covers(db, era, w) {
                continue;
            }
            n_x[i] += 1;
            let codes = db
                .events_in_window(era.patient, era.start, w.start, w.end)
                .expect("window constants are ordered");
            for code in codes {
                n_xy[i][code.0 as usize] += 1;
            }
        }
    }
    candidates.sort_unstable();
    candidates.dedup();
    if candidates.is_empty() {
        return Ok(Vec::new());
    }

    let mut scores = Vec::with_capacity(candidates.len());
    for &event in &candidates {
        let cell = |label: WindowLabel| {
            let i = window_index(label);
            PeriodCounts {
                window: label,
                n_xy: n_xy[i][event.0 as usize],
                n_x: n_x[i],
                n_y: bg.n_y(label, event),
                n_dotdot: bg.n_dotdot(label),
            }
        };
        let day0 = cell(WindowLabel::Day0);
        let after = cell(WindowLabel::MonthAfter);
        let before = cell(WindowLabel::MonthBefore);
        let control = cell(WindowLabel::Control);

        let ic_day0 = ic_shrunk(day0.n_xy, day0.expected()?);
        let e_after = after.expected()?;
        let ic_month_after = ic_shrunk(after.n_xy, e_after);
        let ic_month_before = ic_shrunk(before.n_xy, before.expected()?);
        let delta = ic_delta_tol(after.n_xy, e_after, control.n_xy, control.expected()?, tol)?;

        let filtered_by = if ic_month_before > ic_month_after {
            FilteredBy::Tpd2
        } else if ic_day0 > ic_month_after {
            FilteredBy::Tpd1
        } else {
            FilteredBy::None
        };
        scores.push(TpdScore {
            event,
            ic_delta: delta.ic,
            ic_delta_ci_low: delta.ci_low,
            ic_day0,
            ic_month_before,
            ic_month_after,
            filtered_by,
        });
    }
    Ok(scores)
}

/// Rank `drug`'s candidates surviving the variant's filter by descending
/// IC_Δ. Natural threshold: lower credibility bound above zero.
pub fn tpd_rank(
    db: &EventDatabase,
    bg: &Background,
    drug: DrugId,
    variant: TpdVariant,
) -> Result<RankedSignalList, TpdError> {
    tpd_rank_tol(db, bg, drug, variant, QUANTILE_PROB_TOL)
}

/// [`tpd_rank`] with a caller-chosen quantile tolerance.
pub fn tpd_rank_tol(
    db: &EventDatabase,
    bg: &Background,
    drug: DrugId,
    variant: TpdVariant,
    tol: f64,
) -> Result<RankedSignalList, TpdError> {
    let mut kept: Vec<TpdScore> = tpd_scores_tol(db, bg, drug, tol)?
        .into_iter()
        .filter(|s| !s.removed_under(variant))
        .collect();
    kept.sort_by(|a, b| b.ic_delta.total_cmp(&a.ic_delta).then(a.event.cmp(&b.event)));
    Ok(RankedSignalList {
        drug_code: db.drug_code_str(drug).to_string(),
        algorithm: match variant {
            TpdVariant::Tpd1 => Algorithm::Tpd1,
            TpdVariant::Tpd2 => Algorithm::Tpd2,
        },
        entries: kept
            .into_iter()
            .zip(1u32..)
            .map(|(s, rank)| RankedEntry {
                event_code: db.event_code_str(s.event).to_string(),
                score: s.ic_delta,
                rank,
                signalled: s.ic_delta_ci_low > 0.0,
            })
            .collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dates::Day;
    use crate::store::{
        DatasetRecords, EventInput, ExclusionInput, ExclusionReason, Gender, PatientInput,
        PrescriptionInput,
    };

    fn day(s: &str) -> Day {
        Day::parse_iso(s).unwrap()
    }

    fn db_from(
        patients: &[&str],
        prescriptions: &[(&str, &str, &str)],
        events: &[(&str, &str, &str)],
        exclusions: &[&str],
    ) -> EventDatabase {
        let (db, report) = EventDatabase::build(DatasetRecords {
            patients: patients
                .iter()
                .map(|&id| PatientInput {
                    row: 0,
                    id: id.to_string(),
                    year_of_birth: 1940,
                    gender: Gender::Female,
                    registration: day("1980-01-01"),
                    death: None,
                })
                .collect(),
            prescriptions: prescriptions
                .iter()
                .map(|&(p, d, date)| PrescriptionInput {
                    row: 0,
                    patient: p.to_string(),
                    drug: d.to_string(),
                    date: day(date),
                })
                .collect(),
            events: events
                .iter()
                .map(|&(p, c, date)| EventInput {
                    row: 0,
                    patient: p.to_string(),
                    code: c.to_string(),
                    date: day(date),
                })
                .collect(),
            exclusions: exclusions
                .iter()
                .map(|&c| ExclusionInput {
                    row: 0,
                    code: c.to_string(),
                    reason: ExclusionReason::Chronic,
                })
                .collect(),
        });
        assert_eq!(report.rejected_rows(), 0);
        db
    }

    #[test]
    fn window_constants() {
        assert_eq!((DAY0.start, DAY0.end), (0, 0));
        assert_eq!((MONTH_AFTER.start, MONTH_AFTER.end), (1, 30));
        assert_eq!((MONTH_BEFORE.start, MONTH_BEFORE.end), (-30, -1));
        assert_eq!((CONTROL.start, CONTROL.end), (-810, -630));
    }

    #[test]
    fn day_zero_event_is_separated_from_month_after() {
        // Anchor the era deep enough into the span that loud pre-windows
        // are covered; the patient is observed from 1981-01-01.
        let db = db_from(
            &["p1"],
            &[("p1", "X", "1990-01-01")],
            &[
                ("p1", "E0001", "1990-01-01"),
                ("p1", "E0002", "1990-01-16"),
                ("p1", "E9999", "1991-06-01"), // keeps follow-up alive past day 30
            ],
            &[],
        );
        let x = db.lookup_drug("X").unwrap();
        let e1 = db.lookup_event_code("E0001").unwrap();
        let e2 = db.lookup_event_code("E0002").unwrap();

        let c = period_counts(&db, x, e1, &DAY0);
        assert_eq!((c.n_xy, c.n_x, c.n_y, c.n_dotdot), (1, 1, 1, 1));
        let c = period_counts(&db, x, e2, &DAY0);
        assert_eq!(c.n_xy, 0);
        let c = period_counts(&db, x, e1, &MONTH_AFTER);
        assert_eq!(c.n_xy, 0);
        let c = period_counts(&db, x, e2, &MONTH_AFTER);
        assert_eq!(c.n_xy, 1);
    }

    #[test]
    fn coverage_gates_pre_windows() {
        // Era roughly 100 days into the observation span: month_before
        // (needs 30 prior days) is covered, control (needs 810) is not.
        let db = db_from(
            &["p1"],
            &[("p1", "X", "1981-04-11")],
            &[("p1", "E0001", "1981-05-01"), ("p1", "E9999", "1982-06-01")],
            &[],
        );
        let x = db.lookup_drug("X").unwrap();
        let e1 = db.lookup_event_code("E0001").unwrap();
        assert_eq!(
            db.observation_start(crate::store::PatientId(0)),
            day("1980-01-01").offset(365)
        );

        assert_eq!(period_counts(&db, x, e1, &MONTH_BEFORE).n_dotdot, 1);
        assert_eq!(period_counts(&db, x, e1, &CONTROL).n_dotdot, 0);
        assert_eq!(
            PeriodCounts {
                window: WindowLabel::Control,
                n_xy: 0,
                n_x: 0,
                n_y: 0,
                n_dotdot: 0
            }
            .expected(),
            Err(TpdError::UndefinedExpectation {
                window: WindowLabel::Control
            })
        );
    }

    #[test]
    fn expectation_arithmetic() {
        let c = PeriodCounts {
            window: WindowLabel::MonthAfter,
            n_xy: 2,
            n_x: 10,
            n_y: 5,
            n_dotdot: 100,
        };
        assert_eq!(c.expected().unwrap(), 0.5);
        let zero_y = PeriodCounts { n_y: 0, ..c };
        assert_eq!(zero_y.expected().unwrap(), 0.0);
        let single_drug = PeriodCounts {
            n_x: 100,
            ..c
        };
        assert_eq!(single_drug.expected().unwrap(), 5.0);
    }

    #[test]
    fn shrunk_ic_values() {
        assert_eq!(ic_shrunk(0, 0.0), 0.0);
        assert_eq!(ic_shrunk(3, 0.5), 3.5f64.log2());
        // n = 0 against a large expectation: negative but finite.
        let v = ic_shrunk(0, 1e6);
        assert!(v < 0.0 && v.is_finite());
        assert_eq!(v, (0.5f64 / (1e6 + 0.5)).log2());
        // Shrinkage never increases magnitude.
        for &(n, e) in &[(1u64, 4.0), (5, 1.0), (8, 8.0), (2, 0.25)] {
            assert!(ic_shrunk(n, e).abs() <= (n as f64 / e).log2().abs() + 1e-12);
        }
    }

    #[test]
    fn credibility_anchor_values() {
        // Quantiles of Gamma(0.5, rate 0.5) on the log2 scale, frozen from
        // a high-precision evaluation.
        let low = ic_credibility(0, 0.0, CI_LOW_Q).unwrap();
        let high = ic_credibility(0, 0.0, CI_HIGH_Q).unwrap();
        assert!((low - (-9.991887815806862)).abs() < 1e-6);
        assert!((high - 2.328803781336174).abs() < 1e-6);
        assert!(low < high);
    }

    #[test]
    fn credibility_brackets_point_estimate() {
        for &(n, e) in &[(0u64, 0.0), (3, 0.5), (10, 10.0), (100, 80.0)] {
            let ic = ic_shrunk(n, e);
            let lo = ic_credibility(n, e, CI_LOW_Q).unwrap();
            let hi = ic_credibility(n, e, CI_HIGH_Q).unwrap();
            assert!(lo <= ic + 1e-6 && ic <= hi + 1e-6, "n={n} e={e}");
        }
    }

    #[test]
    fn interval_narrows_with_scale() {
        let width = |n: u64, e: f64| {
            ic_credibility(n, e, CI_HIGH_Q).unwrap() - ic_credibility(n, e, CI_LOW_Q).unwrap()
        };
        let w1 = width(10, 8.0);
        let w2 = width(20, 16.0);
        let w4 = width(40, 32.0);
        let w8 = width(80, 64.0);
        assert!(w1 > w2 && w2 > w4 && w4 > w8);
    }

    #[test]
    fn delta_identity_when_control_ratio_is_one() {
        // n_v + 1/2 = e_v + 1/2 leaves the expectation untouched.
        let est = ic_delta(7, 3.0, 4, 4.0).unwrap();
        assert_eq!(est.ic, ic_shrunk(7, 3.0));
        assert!(est.ci_low <= est.ic && est.ic <= est.ci_high);
        // Zero counts all round: IC_Δ = 0.
        assert_eq!(ic_delta(0, 0.0, 0, 0.0).unwrap().ic, 0.0);
    }

    #[test]
    fn inflated_control_ratio_drops_delta() {
        // Control observing twice its expectation roughly halves the
        // adjusted ratio, costing about one log2 unit at large counts.
        let base = ic_delta(1000, 1000.0, 1000, 1000.0).unwrap();
        let inflated = ic_delta(1000, 1000.0, 2000, 1000.0).unwrap();
        let drop = base.ic - inflated.ic;
        assert!((drop - 1.0).abs() < 0.01, "drop = {drop}");
    }

    /// Fixture with eras far enough into each patient's span that every
    /// window is covered. Drug X's patients p1 and p2 get E0009 in the
    /// month after; p3 has E0007 both before and after, and the Z-era
    /// patient p4 has E0007 after, which tilts E0007's month-after
    /// background up so its month-before IC comes out strictly larger.
    /// Sentinel events keep every patient's follow-up alive.
    fn filter_fixture() -> EventDatabase {
        db_from(
            &["p1", "p2", "p3", "p4"],
            &[
                ("p1", "X", "1984-01-01"),
                ("p2", "X", "1984-01-01"),
                ("p3", "X", "1984-01-01"),
                ("p4", "Z", "1984-01-01"),
            ],
            &[
                ("p1", "E0009", "1984-01-10"),
                ("p2", "E0009", "1984-01-12"),
                ("p3", "E0007", "1983-12-20"), // month before
                ("p3", "E0007", "1984-01-05"), // month after
                ("p4", "E0007", "1984-01-10"), // month after, background era
                ("p1", "E0042", "1984-01-01"), // day 0 only
                ("p1", "E9999", "1985-06-01"),
                ("p2", "E9999", "1985-06-01"),
                ("p3", "E9999", "1985-06-01"),
                ("p4", "E9999", "1985-06-01"),
            ],
            &[],
        )
    }

    #[test]
    fn filters_split_by_variant() {
        let db = filter_fixture();
        let x = db.lookup_drug("X").unwrap();
        let bg = Background::build(&db);
        let scores = tpd_scores(&db, &bg, x).unwrap();
        let by_code = |c: &str| {
            scores
                .iter()
                .find(|s| db.event_code_str(s.event) == c)
                .unwrap()
        };
        // E0007: one x-era on each side, but the after window carries an
        // extra background occurrence, so the month-before IC is larger.
        assert_eq!(by_code("E0007").filtered_by, FilteredBy::Tpd2);
        // E0042: day-0 only.
        assert_eq!(by_code("E0042").filtered_by, FilteredBy::Tpd1);
        assert_eq!(by_code("E0009").filtered_by, FilteredBy::None);

        let r1 = tpd_rank(&db, &bg, x, TpdVariant::Tpd1).unwrap();
        let r2 = tpd_rank(&db, &bg, x, TpdVariant::Tpd2).unwrap();
        assert_eq!(r1.algorithm, Algorithm::Tpd1);
        assert_eq!(r2.algorithm, Algorithm::Tpd2);
        let codes1: Vec<&str> = r1.entries.iter().map(|e| e.event_code.as_str()).collect();
        let codes2: Vec<&str> = r2.entries.iter().map(|e| e.event_code.as_str()).collect();
        assert!(!codes1.contains(&"E0007") && !codes1.contains(&"E0042"));
        assert!(!codes2.contains(&"E0007") && codes2.contains(&"E0042"));
        // Subset relation: every tpd1 survivor also survives tpd2.
        assert!(codes1.iter().all(|c| codes2.contains(c)));
        // The sentinel code never enters: it is outside every [0,30] span.
        assert!(!codes2.contains(&"E9999"));
    }

    #[test]
    fn ranking_orders_by_delta_and_flags_by_ci() {
        let db = filter_fixture();
        let x = db.lookup_drug("X").unwrap();
        let bg = Background::build(&db);
        let r = tpd_rank(&db, &bg, x, TpdVariant::Tpd1).unwrap();
        assert!(!r.entries.is_empty());
        assert_eq!(r.entries[0].event_code, "E0009");
        for pair in r.entries.windows(2) {
            assert!(pair[0].score >= pair[1].score);
        }
        let ranks: Vec<u32> = r.entries.iter().map(|e| e.rank).collect();
        assert_eq!(ranks, (1..=ranks.len() as u32).collect::<Vec<_>>());
        // Tiny fixture: two eras out of four is far from a significant
        // lower bound.
        assert!(r.entries.iter().all(|e| !e.signalled));
    }

    #[test]
    fn excluded_codes_never_become_candidates() {
        let db = db_from(
            &["p1", "p2"],
            &[("p1", "X", "1984-01-01"), ("p2", "Z", "1984-01-01")],
            &[
                ("p1", "E0009", "1984-01-10"),
                ("p1", "C0001", "1984-01-11"),
                ("p1", "E9999", "1985-06-01"),
                ("p2", "E9999", "1985-06-01"),
            ],
            &["C0001"],
        );
        let x = db.lookup_drug("X").unwrap();
        let bg = Background::build(&db);
        let scores = tpd_scores(&db, &bg, x).unwrap();
        let codes: Vec<&str> = scores.iter().map(|s| db.event_code_str(s.event)).collect();
        assert_eq!(codes, vec!["E0009"]);
    }

    #[test]
    fn drug_without_eras_yields_empty_list() {
        let db = filter_fixture();
        let z = db.lookup_drug("Z").unwrap();
        let bg = Background::build(&db);
        // Z has an era, so pick a fresh store without prescriptions of Y.
        assert!(!tpd_scores(&db, &bg, z).unwrap().is_empty());
        let db2 = db_from(
            &["p1"],
            &[("p1", "X", "1984-01-01")],
            &[("p1", "E9999", "1985-06-01")],
            &[],
        );
        let bg2 = Background::build(&db2);
        let x = db2.lookup_drug("X").unwrap();
        // Candidates empty: the only event is outside [0,30].
        assert!(tpd_scores(&db2, &bg2, x).unwrap().is_empty());
    }

    #[test]
    fn background_matches_standalone_counts() {
        let db = filter_fixture();
        let bg = Background::build(&db);
        let x = db.lookup_drug("X").unwrap();
        for w in &WINDOWS {
            for code_str in ["E0007", "E0009", "E0042", "E9999"] {
                let event = db.lookup_event_code(code_str).unwrap();
                let c = period_counts(&db, x, event, w);
                assert_eq!(bg.n_dotdot(w.label), c.n_dotdot, "{} n_dotdot", w.label);
                assert_eq!(bg.n_y(w.label, event), c.n_y, "{} n_y {}", w.label, code_str);
            }
        }
    }

    #[test]
    fn repeat_prescriptions_do_not_open_second_era() {
        // Second prescription 100 days later is inside the 395-day gap:
        // one era; 400 days later: two eras, counted separately.
        let db = db_from(
            &["p1", "p2"],
            &[
                ("p1", "X", "1984-01-01"),
                ("p1", "X", "1984-04-10"), // +100 days
                ("p2", "X", "1984-01-01"),
                ("p2", "X", "1985-02-05"), // +401 days
            ],
            &[
                ("p1", "E9999", "1986-06-01"),
                ("p2", "E9999", "1986-06-01"),
            ],
            &[],
        );
        let x = db.lookup_drug("X").unwrap();
        let e = db.lookup_event_code("E9999").unwrap();
        let c = period_counts(&db, x, e, &MONTH_AFTER);
        assert_eq!(c.n_x, 3);
    }
}
