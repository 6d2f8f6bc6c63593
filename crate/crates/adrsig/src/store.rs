//! Longitudinal patient record store: load, validate, preprocess, index.
//!
//! The store is built once from the dataset CSVs, preprocessed with two
//! record filters, and from then on is read-only. All scoring modules work
//! against per-patient time-sorted record vectors and dense code ids.
//!
//! Preprocessing, applied in either order (the filters commute):
//! * registration filter: drops every prescription and event dated less
//!   than 365 days after the patient's registration date (day 365 is kept);
//! * active-period filter: drops prescriptions with fewer than 30 days
//!   between the prescription and the patient's last active date (exactly
//!   30 days is kept).
//!
//! `last_active` is fixed at build time as the latest of any accepted record
//! date, the death date, and the registration date; filters never recompute
//! it.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use anyhow::Context;
use thiserror::Error;

use crate::codes::{CodeId, DrugId, Interner};
use crate::dates::Day;

/// Event codes are identified by their first five characters; the rest of
/// the string is qualifier detail that would split one clinical concept
/// across many codes.
pub const EVENT_CODE_PREFIX_LEN: usize = 5;
/// Days of history after registration treated as catch-up recording noise.
pub const REGISTRATION_RUN_IN_DAYS: i32 = 365;
/// Minimum days of follow-up a prescription needs to stay in the store.
pub const MIN_FOLLOW_UP_DAYS: i32 = 30;
/// A prescription opens a new era when the same drug was not prescribed to
/// the patient in the preceding 395 days (thirteen 30.4-day months).
pub const ERA_GAP_DAYS: i32 = 395;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PatientId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Gender {
    Male,
    Female,
    Unknown,
}

impl Gender {
    pub fn parse(s: &str) -> Option<Gender> {
        match s {
            "male" => Some(Gender::Male),
            "female" => Some(Gender::Female),
            "unknown" => Some(Gender::Unknown),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Gender::Male => "male",
            Gender::Female => "female",
            Gender::Unknown => "unknown",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExclusionReason {
    Chronic,
    Cancer,
    Admin,
}

impl ExclusionReason {
    pub fn parse(s: &str) -> Option<ExclusionReason> {
        match s {
            "chronic" => Some(ExclusionReason::Chronic),
            "cancer" => Some(ExclusionReason::Cancer),
            "admin" => Some(ExclusionReason::Admin),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ExclusionReason::Chronic => "chronic",
            ExclusionReason::Cancer => "cancer",
            ExclusionReason::Admin => "admin",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Patient {
    pub external_id: String,
    pub year_of_birth: i32,
    pub gender: Gender,
    pub registration: Day,
    pub death: Option<Day>,
    /// Latest of any accepted record date, death date, or registration date.
    pub last_active: Day,
}

/// One prescription that opens a treatment era.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PrescriptionEra {
    pub patient: PatientId,
    pub drug: DrugId,
    pub start: Day,
}

#[derive(Debug, Error, PartialEq)]
pub enum StoreError {
    #[error("window offsets inverted: start {start} > end {end}")]
    InvalidWindow { start: i32, end: i32 },
}

// ---------------------------------------------------------------------------
// Raw inputs and row-level rejection reporting
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct PatientInput {
    pub row: u64,
    pub id: String,
    pub year_of_birth: i32,
    pub gender: Gender,
    pub registration: Day,
    pub death: Option<Day>,
}

#[derive(Debug, Clone)]
pub struct PrescriptionInput {
    pub row: u64,
    pub patient: String,
    pub drug: String,
    pub date: Day,
}

#[derive(Debug, Clone)]
pub struct EventInput {
    pub row: u64,
    pub patient: String,
    pub code: String,
    pub date: Day,
}

#[derive(Debug, Clone)]
pub struct ExclusionInput {
    pub row: u64,
    pub code: String,
    pub reason: ExclusionReason,
}

/// Parsed dataset rows before validation and indexing.
#[derive(Debug, Clone, Default)]
pub struct DatasetRecords {
    pub patients: Vec<PatientInput>,
    pub prescriptions: Vec<PrescriptionInput>,
    pub events: Vec<EventInput>,
    pub exclusions: Vec<ExclusionInput>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FileKind {
    Patients,
    Prescriptions,
    Events,
    Exclusions,
}

impl fmt::Display for FileKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            FileKind::Patients => "patients.csv",
            FileKind::Prescriptions => "prescriptions.csv",
            FileKind::Events => "events.csv",
            FileKind::Exclusions => "exclusions.csv",
        };
        f.write_str(name)
    }
}

#[derive(Debug, Clone)]
pub struct RowReject {
    pub file: FileKind,
    pub row: u64,
    pub reason: String,
}

/// Account of every rejected input row. Rejection never aborts a load; a
/// missing or unreadable file does.
#[derive(Debug, Clone, Default)]
pub struct LoadReport {
    pub rejects: Vec<RowReject>,
}

impl LoadReport {
    pub fn rejected_rows(&self) -> usize {
        self.rejects.len()
    }

    pub fn rejected_in(&self, file: FileKind) -> usize {
        self.rejects.iter().filter(|r| r.file == file).count()
    }

    fn push(&mut self, file: FileKind, row: u64, reason: impl Into<String>) {
        self.rejects.push(RowReject {
            file,
            row,
            reason: reason.into(),
        });
    }
}

/// Truncate an event code to its identifying prefix.
pub fn truncate_event_code(code: &str) -> String {
    code.chars().take(EVENT_CODE_PREFIX_LEN).collect()
}

// ---------------------------------------------------------------------------
// The store
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct EventDatabase {
    patients: Vec<Patient>,
    patient_index: BTreeMap<String, PatientId>,
    /// Per patient, sorted by (date, drug).
    prescriptions: Vec<Vec<(Day, DrugId)>>,
    /// Per patient, sorted by (date, code).
    events: Vec<Vec<(Day, CodeId)>>,
    event_codes: Interner,
    drug_codes: Interner,
    excluded: Vec<bool>,
    /// Per drug, sorted patient ids with at least one prescription of it.
    drug_patients: Vec<Vec<PatientId>>,
}

impl EventDatabase {
    /// Index validated rows into a store. Rows referencing unknown patients
    /// and duplicate patient declarations are rejected and reported.
    pub fn build(records: DatasetRecords) -> (EventDatabase, LoadReport) {
        let mut report = LoadReport::default();

        let mut patient_rows = records.patients;
        patient_rows.sort_by(|a, b| a.id.cmp(&b.id).then(a.row.cmp(&b.row)));
        let mut patients: Vec<Patient> = Vec::with_capacity(patient_rows.len());
        let mut patient_index: BTreeMap<String, PatientId> = BTreeMap::new();
        for p in patient_rows {
            if patient_index.contains_key(&p.id) {
                report.push(
                    FileKind::Patients,
                    p.row,
                    format!("duplicate patient_id {}", p.id),
                );
                continue;
            }
            let mut last_active = p.registration;
            if let Some(d) = p.death {
                last_active = last_active.max(d);
            }
            patient_index.insert(p.id.clone(), PatientId(patients.len() as u32));
            patients.push(Patient {
                external_id: p.id,
                year_of_birth: p.year_of_birth,
                gender: p.gender,
                registration: p.registration,
                death: p.death,
                last_active,
            });
        }

        let drug_codes = Interner::from_codes(records.prescriptions.iter().map(|r| r.drug.clone()));
        let event_codes = Interner::from_codes(
            records
                .events
                .iter()
                .map(|r| truncate_event_code(&r.code))
                .chain(
                    records
                        .exclusions
                        .iter()
                        .map(|r| truncate_event_code(&r.code)),
                ),
        );

        let mut prescriptions: Vec<Vec<(Day, DrugId)>> = vec![Vec::new(); patients.len()];
        for r in &records.prescriptions {
            match patient_index.get(&r.patient) {
                Some(&pid) => {
                    let drug = DrugId(drug_codes.index_of(&r.drug).expect("interned"));
                    prescriptions[pid.0 as usize].push((r.date, drug));
                    let la = &mut patients[pid.0 as usize].last_active;
                    *la = (*la).max(r.date);
                }
                None => report.push(
                    FileKind::Prescriptions,
                    r.row,
                    format!("unknown patient_id {}", r.patient),
                ),
            }
        }

        let mut events: Vec<Vec<(Day, CodeId)>> = vec![Vec::new(); patients.len()];
        for r in &records.events {
            match patient_index.get(&r.patient) {
                Some(&pid) => {
                    let code = truncate_event_code(&r.code);
                    let code = CodeId(event_codes.index_of(&code).expect("interned"));
                    events[pid.0 as usize].push((r.date, code));
                    let la = &mut patients[pid.0 as usize].last_active;
                    *la = (*la).max(r.date);
                }
                None => report.push(
                    FileKind::Events,
                    r.row,
                    format!("unknown patient_id {}", r.patient),
                ),
            }
        }

        let mut excluded = vec![false; event_codes.len()];
        for r in &records.exclusions {
            let code = truncate_event_code(&r.code);
            let idx = event_codes.index_of(&code).expect("interned");
            excluded[idx as usize] = true;
        }

        for list in prescriptions.iter_mut() {
            list.sort_unstable();
        }
        for list in events.iter_mut() {
            list.sort_unstable();
        }

        let mut db = EventDatabase {
            patients,
            patient_index,
            prescriptions,
            events,
            event_codes,
            drug_codes,
            excluded,
            drug_patients: Vec::new(),
        };
        db.rebuild_drug_patients();
        (db, report)
    }

    fn rebuild_drug_patients(&mut self) {
        let mut by_drug: Vec<Vec<PatientId>> = vec![Vec::new(); self.drug_codes.len()];
        for (pi, list) in self.prescriptions.iter().enumerate() {
            let pid = PatientId(pi as u32);
            let mut seen: Vec<DrugId> = list.iter().map(|&(_, d)| d).collect();
            seen.sort_unstable();
            seen.dedup();
            for d in seen {
                by_drug[d.0 as usize].push(pid);
            }
        }
        self.drug_patients = by_drug;
    }

    /// Drop prescriptions and events dated inside the first 365 days after
    /// the patient's registration. Idempotent; commutes with
    /// [`EventDatabase::apply_active_period_filter`].
    pub fn apply_registration_filter(mut self) -> EventDatabase {
        for (pi, patient) in self.patients.iter().enumerate() {
            let cutoff = patient.registration.offset(REGISTRATION_RUN_IN_DAYS);
            self.prescriptions[pi].retain(|&(d, _)| d >= cutoff);
            self.events[pi].retain(|&(d, _)| d >= cutoff);
        }
        self.rebuild_drug_patients();
        self
    }

    /// Drop prescriptions with fewer than 30 days between prescription and
    /// the patient's last active date. Idempotent; commutes with
    /// [`EventDatabase::apply_registration_filter`].
    pub fn apply_active_period_filter(mut self) -> EventDatabase {
        for (pi, patient) in self.patients.iter().enumerate() {
            let last = patient.last_active;
            self.prescriptions[pi].retain(|&(d, _)| last.days_since(d) >= MIN_FOLLOW_UP_DAYS);
        }
        self.rebuild_drug_patients();
        self
    }

    /// Both preprocessing filters.
    pub fn clean(self) -> EventDatabase {
        self.apply_registration_filter().apply_active_period_filter()
    }

    // -- accessors ----------------------------------------------------------

    pub fn n_patients(&self) -> usize {
        self.patients.len()
    }

    pub fn patient_ids(&self) -> impl Iterator<Item = PatientId> {
        (0..self.patients.len() as u32).map(PatientId)
    }

    pub fn patient(&self, id: PatientId) -> &Patient {
        &self.patients[id.0 as usize]
    }

    pub fn lookup_patient(&self, external_id: &str) -> Option<PatientId> {
        self.patient_index.get(external_id).copied()
    }

    pub fn prescriptions_of(&self, id: PatientId) -> &[(Day, DrugId)] {
        &self.prescriptions[id.0 as usize]
    }

    pub fn events_of(&self, id: PatientId) -> &[(Day, CodeId)] {
        &self.events[id.0 as usize]
    }

    pub fn n_prescriptions(&self) -> usize {
        self.prescriptions.iter().map(Vec::len).sum()
    }

    pub fn n_events(&self) -> usize {
        self.events.iter().map(Vec::len).sum()
    }

    pub fn event_codes(&self) -> &Interner {
        &self.event_codes
    }

    pub fn drug_codes(&self) -> &Interner {
        &self.drug_codes
    }

    pub fn event_code_str(&self, id: CodeId) -> &str {
        self.event_codes.at(id.0)
    }

    pub fn drug_code_str(&self, id: DrugId) -> &str {
        self.drug_codes.at(id.0)
    }

    pub fn lookup_event_code(&self, code: &str) -> Option<CodeId> {
        self.event_codes
            .index_of(&truncate_event_code(code))
            .map(CodeId)
    }

    pub fn lookup_drug(&self, code: &str) -> Option<DrugId> {
        self.drug_codes.index_of(code).map(DrugId)
    }

    pub fn is_excluded(&self, code: CodeId) -> bool {
        self.excluded[code.0 as usize]
    }

    /// Patients with at least one stored prescription of `drug`, ascending.
    pub fn patients_prescribed(&self, drug: DrugId) -> &[PatientId] {
        &self.drug_patients[drug.0 as usize]
    }

    /// First day of usable observation: registration plus the run-in year.
    pub fn observation_start(&self, id: PatientId) -> Day {
        self.patient(id).registration.offset(REGISTRATION_RUN_IN_DAYS)
    }

    /// Last day of usable observation. May precede `observation_start` for
    /// patients who never accrued a year of follow-up; such a span is empty.
    pub fn observation_end(&self, id: PatientId) -> Day {
        self.patient(id).last_active
    }

    // -- windows and eras ----------------------------------------------------

    /// Distinct event codes recorded for `patient` with
    /// anchor+start_off <= date <= anchor+end_off (both ends inclusive),
    /// ascending.
    pub fn events_in_window(
        &self,
        patient: PatientId,
        anchor: Day,
        start_off: i32,
        end_off: i32,
    ) -> Result<Vec<CodeId>, StoreError> {
        if start_off > end_off {
            return Err(StoreError::InvalidWindow {
                start: start_off,
                end: end_off,
            });
        }
        let lo = anchor.offset(start_off);
        let hi = anchor.offset(end_off);
        let list = &self.events[patient.0 as usize];
        let a = list.partition_point(|&(d, _)| d < lo);
        let b = list.partition_point(|&(d, _)| d <= hi);
        let mut codes: Vec<CodeId> = list[a..b].iter().map(|&(_, c)| c).collect();
        codes.sort_unstable();
        codes.dedup();
        Ok(codes)
    }

    /// True when the patient has any event with code `code` in the window.
    pub fn has_event_in_window(
        &self,
        patient: PatientId,
        code: CodeId,
        anchor: Day,
        start_off: i32,
        end_off: i32,
    ) -> bool {
        let lo = anchor.offset(start_off);
        let hi = anchor.offset(end_off);
        let list = &self.events[patient.0 as usize];
        let a = list.partition_point(|&(d, _)| d < lo);
        list[a..]
            .iter()
            .take_while(|&&(d, _)| d <= hi)
            .any(|&(_, c)| c == code)
    }

    /// First-in-thirteen-months prescriptions of `drug`, sorted by
    /// (patient, date). A prescription opens an era when the patient has no
    /// prescription of the same drug dated inside the open interval
    /// (start - 395 days, start).
    pub fn find_eras(&self, drug: DrugId) -> Vec<PrescriptionEra> {
        let mut eras = Vec::new();
        for &pid in self.patients_prescribed(drug) {
            let dates = self.prescriptions[pid.0 as usize]
                .iter()
                .filter(|&&(_, d)| d == drug)
                .map(|&(day, _)| day);
            push_eras(&mut eras, pid, drug, dates);
        }
        eras
    }

    /// Eras of every drug in the store, sorted by (patient, drug, date).
    pub fn all_eras(&self) -> Vec<PrescriptionEra> {
        let mut eras = Vec::new();
        for pid in self.patient_ids() {
            let list = &self.prescriptions[pid.0 as usize];
            let mut by_drug: BTreeMap<DrugId, Vec<Day>> = BTreeMap::new();
            for &(day, drug) in list {
                by_drug.entry(drug).or_default().push(day);
            }
            for (drug, mut dates) in by_drug {
                dates.sort_unstable();
                push_eras(&mut eras, pid, drug, dates.into_iter());
            }
        }
        eras
    }
}

/// Era extraction over one patient-drug date list (ascending, duplicates
/// allowed). Same-day repeats share era status: neither precedes the other.
fn push_eras(
    eras: &mut Vec<PrescriptionEra>,
    patient: PatientId,
    drug: DrugId,
    dates: impl Iterator<Item = Day>,
) {
    let mut prev_distinct: Option<Day> = None;
    let mut current: Option<(Day, bool)> = None;
    for d in dates {
        let is_new_day = current.is_none_or(|(cd, _)| cd != d);
        if is_new_day {
            if let Some((cd, _)) = current {
                prev_distinct = Some(cd);
            }
            let opens = prev_distinct.is_none_or(|p| d.days_since(p) >= ERA_GAP_DAYS);
            current = Some((d, opens));
        }
        let (_, opens) = current.unwrap();
        if opens {
            eras.push(PrescriptionEra {
                patient,
                drug,
                start: d,
            });
        }
    }
}

// ---------------------------------------------------------------------------
// CSV loading
// ---------------------------------------------------------------------------

/// Read the four dataset files from `dir`, reject malformed rows, and build
/// the raw (unfiltered) store. A missing or unreadable file is fatal.
pub fn load_dataset(dir: &Path) -> anyhow::Result<(EventDatabase, LoadReport)> {
    let mut records = DatasetRecords::default();
    let mut report = LoadReport::default();

    read_csv(
        &dir.join("patients.csv"),
        FileKind::Patients,
        &["patient_id", "year_of_birth", "gender", "registration_date", "death_date"],
        &mut report,
        |row, fields| {
            let year_of_birth: i32 = fields[1].parse().map_err(|_| "bad year_of_birth")?;
            let gender = Gender::parse(fields[2]).ok_or("bad gender")?;
            let registration = Day::parse_iso(fields[3]).ok_or("bad registration_date")?;
            let death = if fields[4].is_empty() {
                None
            } else {
                Some(Day::parse_iso(fields[4]).ok_or("bad death_date")?)
            };
            records.patients.push(PatientInput {
                row,
                id: fields[0].to_string(),
                year_of_birth,
                gender,
                registration,
                death,
            });
            Ok(())
        },
    )?;

    read_csv(
        &dir.join("prescriptions.csv"),
        FileKind::Prescriptions,
        &["patient_id", "drug_code", "date"],
        &mut report,
        |row, fields| {
            let date = Day::parse_iso(fields[2]).ok_or("bad date")?;
            records.prescriptions.push(PrescriptionInput {
                row,
                patient: fields[0].to_string(),
                drug: fields[1].to_string(),
                date,
            });
            Ok(())
        },
    )?;

    read_csv(
        &dir.join("events.csv"),
        FileKind::Events,
        &["patient_id", "event_code", "date"],
        &mut report,
        |row, fields| {
            let date = Day::parse_iso(fields[2]).ok_or("bad date")?;
            records.events.push(EventInput {
                row,
                patient: fields[0].to_string(),
                code: fields[1].to_string(),
                date,
            });
            Ok(())
        },
    )?;

    read_csv(
        &dir.join("exclusions.csv"),
        FileKind::Exclusions,
        &["event_code", "reason"],
        &mut report,
        |row, fields| {
            let reason = ExclusionReason::parse(fields[1]).ok_or("bad reason")?;
            records.exclusions.push(ExclusionInput {
                row,
                code: fields[0].to_string(),
                reason,
            });
            Ok(())
        },
    )?;

    let (db, build_report) = EventDatabase::build(records);
    report.rejects.extend(build_report.rejects);
    Ok((db, report))
}

/// Stream one CSV file. `consume` gets the named columns in declaration
/// order and rejects a row by returning a reason; structural row errors
/// (ragged rows, invalid UTF-8) are rejected with the csv crate's message.
fn read_csv(
    path: &Path,
    kind: FileKind,
    columns: &[&str],
    report: &mut LoadReport,
    mut consume: impl FnMut(u64, &[&str]) -> Result<(), &'static str>,
) -> anyhow::Result<()> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_path(path)
        .with_context(|| format!("opening {}", path.display()))?;
    let headers = reader
        .headers()
        .with_context(|| format!("reading header of {}", path.display()))?
        .clone();
    let mut column_at: Vec<usize> = Vec::with_capacity(columns.len());
    for name in columns {
        let idx = headers
            .iter()
            .position(|h| h == *name)
            .with_context(|| format!("{kind}: missing column {name}"))?;
        column_at.push(idx);
    }

    let mut record = csv::StringRecord::new();
    loop {
        let line = reader.position().line();
        match reader.read_record(&mut record) {
            Ok(false) => break,
            Ok(true) => {
                let mut fields: Vec<&str> = Vec::with_capacity(column_at.len());
                let mut missing = false;
                for &idx in &column_at {
                    match record.get(idx) {
                        Some(f) => fields.push(f),
                        None => {
                            missing = true;
                            break;
                        }
                    }
                }
                if missing {
                    report.push(kind, line, "missing fields");
                    continue;
                }
                if let Err(reason) = consume(line, &fields) {
                    report.push(kind, line, reason);
                }
            }
            Err(e) => {
                if e.is_io_error() {
                    return Err(e).with_context(|| format!("reading {}", path.display()));
                }
                report.push(kind, line, e.to_string());
            }
        }
    }
    Ok(())
}
