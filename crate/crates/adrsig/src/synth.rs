//! Seeded synthetic cohort generator and dataset summarizer.
//!
//! The generator plants the causal structure the detection algorithms
//! discriminate on: reactions whose daily rate is multiplied while a
//! prescription's onset window is open, indication events in the month
//! leading up to each prescription, codes recorded at the prescribing
//! visit itself, and steady background noise from unrelated drugs and
//! event codes. Everything is drawn from one seeded stream in a fixed
//! order, so a config and seed reproduce the same files byte for byte.
//!
//! Every daily process is a per-day Bernoulli draw, realized by geometric
//! gap sampling (identical in distribution, linear in the number of hits).
//! Years are a fixed 365 days, with no leap handling, so window arithmetic
//! stays exact.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufWriter, Write as _};
use std::path::Path;

use anyhow::Context;
use thiserror::Error;

use crate::dates::Day;
use crate::eval::Frequency;
use crate::rng::{bernoulli, positive_unit_f64, rng_from_seed, uniform_u64, Rng};
use crate::store::EventDatabase;

/// Every generated patient registers on this day.
pub const BASE_DATE: &str = "2000-01-01";
/// Days per generator year.
pub const YEAR_DAYS: i32 = 365;
/// Chronic-flagged background codes fire at this multiple of the base rate.
pub const CHRONIC_RATE_MULTIPLIER: f64 = 5.0;
/// Administrative sentinel written on every patient's last observed day;
/// it pins the active period without entering any candidate set.
pub const SENTINEL_CODE: &str = "ADMIN";

/// Planted-incidence class boundaries: below `RARE_BOUND` per exposure is
/// rare, at or above `COMMON_BOUND` is common.
pub const RARE_BOUND: f64 = 0.001;
pub const COMMON_BOUND: f64 = 0.01;

/// Days before a prescription in which its indications fire.
pub const INDICATION_PRE_DAYS: i32 = 30;

/// One planted reaction of a drug.
#[derive(Debug, Clone, PartialEq)]
pub struct AdrSpec {
    pub event_code: String,
    /// Daily-rate multiplier inside the onset window.
    pub relative_risk: f64,
    /// Population-wide daily rate of the event code.
    pub background_daily_rate: f64,
    /// Onset window in days after a prescription, inclusive bounds within
    /// [0, 30].
    pub onset_start: i32,
    pub onset_end: i32,
}

impl AdrSpec {
    /// Probability of at least one event inside one onset window.
    pub fn planted_incidence(&self) -> f64 {
        let p = self.relative_risk * self.background_daily_rate;
        let len = (self.onset_end - self.onset_start + 1) as f64;
        1.0 - (1.0 - p).powf(len)
    }

    /// Frequency class implied by the planted incidence.
    pub fn frequency_class(&self) -> Frequency {
        let incidence = self.planted_incidence();
        if incidence < RARE_BOUND {
            Frequency::Rare
        } else if incidence < COMMON_BOUND {
            Frequency::LessCommon
        } else {
            Frequency::Common
        }
    }
}

/// A condition the drug is prescribed for: its event code fires at
/// `daily_rate` in the `INDICATION_PRE_DAYS` days before each
/// prescription (the complaints that lead to the prescribing decision),
/// for exposed patients only.
#[derive(Debug, Clone, PartialEq)]
pub struct IndicationSpec {
    pub event_code: String,
    pub daily_rate: f64,
}

/// A code entered during the prescribing visit itself: with the given
/// probability the event is recorded on the prescription day, the way a
/// diagnosis or consultation note lands in the record when the drug is
/// issued.
#[derive(Debug, Clone, PartialEq)]
pub struct RecordingSpec {
    pub event_code: String,
    pub probability: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DrugSpec {
    pub code: String,
    /// Probability a patient is prescribed the drug at all.
    pub prescription_probability: f64,
    /// Probability an exposed patient receives a second prescription 7 to
    /// 45 days after the first.
    pub repeat_probability: f64,
    pub indications: Vec<IndicationSpec>,
    pub recordings: Vec<RecordingSpec>,
    pub adrs: Vec<AdrSpec>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorConfig {
    pub rng_seed: u64,
    pub n_patients: u32,
    pub observation_years: u32,
    /// Patient age at the base date, drawn uniformly over this inclusive
    /// range.
    pub age_min: u32,
    pub age_max: u32,
    pub male_fraction: f64,
    pub drugs: Vec<DrugSpec>,
    /// Unrelated drugs prescribed at a flat daily rate, named BD001...
    pub background_drugs: u32,
    pub background_drug_daily_rate: f64,
    /// Unrelated event codes firing at a flat daily rate, named BE001...
    pub background_events: u32,
    pub background_event_daily_rate: f64,
    /// Leading fraction of the background codes flagged for exclusion
    /// (alternating chronic and admin); chronic ones fire faster.
    pub excluded_fraction: f64,
}

impl Default for GeneratorConfig {
    fn default() -> GeneratorConfig {
        GeneratorConfig {
            rng_seed: 1,
            n_patients: 1000,
            observation_years: 4,
            age_min: 40,
            age_max: 80,
            male_fraction: 0.5,
            drugs: Vec::new(),
            background_drugs: 5,
            background_drug_daily_rate: 0.001,
            background_events: 20,
            background_event_daily_rate: 0.002,
            excluded_fraction: 0.2,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("{field} = {value} is not a probability in [0, 1]")]
    BadProbability { field: String, value: f64 },
    #[error("relative_risk {value} for {code} is below 1")]
    BadRelativeRisk { code: String, value: f64 },
    #[error("onset window [{start}, {end}] for {code} is not inside [0, 30]")]
    BadOnsetWindow { code: String, start: i32, end: i32 },
    #[error("daily rate for {code} reaches {rate}: more than one expected event per day")]
    RateOverflow { code: String, rate: f64 },
    #[error("observation_years = {years}; at least 2 are needed to outlast the registration run-in")]
    TooFewYears { years: u32 },
    #[error("n_patients must be positive")]
    NoPatients,
    #[error("age range [{min}, {max}] is inverted")]
    BadAgeRange { min: u32, max: u32 },
    #[error("code {code} appears more than once (or collides with a generated name)")]
    DuplicateCode { code: String },
    #[error("event code {code} is longer than 5 characters and would be truncated on load")]
    CodeTooLong { code: String },
}

impl GeneratorConfig {
    pub fn span_days(&self) -> i32 {
        self.observation_years as i32 * YEAR_DAYS
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let prob = |field: &str, value: f64| {
            if !(0.0..=1.0).contains(&value) || value.is_nan() {
                Err(ConfigError::BadProbability {
                    field: field.to_string(),
                    value,
                })
            } else {
                Ok(())
            }
        };
        if self.n_patients == 0 {
            return Err(ConfigError::NoPatients);
        }
        if self.observation_years < 2 {
            return Err(ConfigError::TooFewYears {
                years: self.observation_years,
            });
        }
        if self.age_min > self.age_max {
            return Err(ConfigError::BadAgeRange {
                min: self.age_min,
                max: self.age_max,
            });
        }
        prob("male_fraction", self.male_fraction)?;
        prob("background_drug_daily_rate", self.background_drug_daily_rate)?;
        prob("background_event_daily_rate", self.background_event_daily_rate)?;
        prob("excluded_fraction", self.excluded_fraction)?;
        let chronic_rate = self.background_event_daily_rate * CHRONIC_RATE_MULTIPLIER;
        if chronic_rate > 1.0 {
            return Err(ConfigError::RateOverflow {
                code: "chronic background events".to_string(),
                rate: chronic_rate,
            });
        }

        let mut seen: BTreeSet<String> = BTreeSet::new();
        let mut claim = |code: &str| {
            if !seen.insert(code.to_string()) {
                Err(ConfigError::DuplicateCode {
                    code: code.to_string(),
                })
            } else {
                Ok(())
            }
        };
        claim(SENTINEL_CODE)?;
        for i in 0..self.background_drugs {
            claim(&background_drug_code(i))?;
        }
        for i in 0..self.background_events {
            claim(&background_event_code(i))?;
        }
        let event_len = |code: &str| {
            if code.chars().count() > 5 {
                Err(ConfigError::CodeTooLong {
                    code: code.to_string(),
                })
            } else {
                Ok(())
            }
        };
        for drug in &self.drugs {
            claim(&drug.code)?;
            prob(
                &format!("drug {} prescription_probability", drug.code),
                drug.prescription_probability,
            )?;
            prob(
                &format!("drug {} repeat_probability", drug.code),
                drug.repeat_probability,
            )?;
            for ind in &drug.indications {
                claim(&ind.event_code)?;
                event_len(&ind.event_code)?;
                prob(
                    &format!("indication {} daily_rate", ind.event_code),
                    ind.daily_rate,
                )?;
            }
            for rec in &drug.recordings {
                claim(&rec.event_code)?;
                event_len(&rec.event_code)?;
                prob(
                    &format!("recording {} probability", rec.event_code),
                    rec.probability,
                )?;
            }
            for adr in &drug.adrs {
                claim(&adr.event_code)?;
                event_len(&adr.event_code)?;
                prob(
                    &format!("adr {} background_daily_rate", adr.event_code),
                    adr.background_daily_rate,
                )?;
                if adr.relative_risk < 1.0 || adr.relative_risk.is_nan() {
                    return Err(ConfigError::BadRelativeRisk {
                        code: adr.event_code.clone(),
                        value: adr.relative_risk,
                    });
                }
                if !(0..=30).contains(&adr.onset_start)
                    || !(0..=30).contains(&adr.onset_end)
                    || adr.onset_start > adr.onset_end
                {
                    return Err(ConfigError::BadOnsetWindow {
                        code: adr.event_code.clone(),
                        start: adr.onset_start,
                        end: adr.onset_end,
                    });
                }
                let peak = adr.relative_risk * adr.background_daily_rate;
                if peak > 1.0 {
                    return Err(ConfigError::RateOverflow {
                        code: adr.event_code.clone(),
                        rate: peak,
                    });
                }
            }
        }
        Ok(())
    }
}

pub fn background_drug_code(i: u32) -> String {
    format!("BD{:03}", i + 1)
}

pub fn background_event_code(i: u32) -> String {
    format!("BE{:03}", i + 1)
}

/// Append the hit days of a daily Bernoulli(p) process over
/// [start, end_excl), via geometric jumps between hits.
fn sample_daily(rng: &mut Rng, p: f64, start: i32, end_excl: i32, out: &mut Vec<i32>) {
    if p <= 0.0 || start >= end_excl {
        return;
    }
    if p >= 1.0 {
        out.extend(start..end_excl);
        return;
    }
    let ln_q = (1.0 - p).ln();
    let mut day = start;
    loop {
        // Failures before the next hit: floor(ln(u) / ln(1-p)) with
        // u in (0, 1] is exactly geometric.
        let gap = (positive_unit_f64(rng).ln() / ln_q).floor();
        if gap >= (end_excl - day) as f64 {
            return;
        }
        day += gap as i32;
        out.push(day);
        day += 1;
        if day >= end_excl {
            return;
        }
    }
}

/// Inclusive day intervals around the anchors, merged and clipped to
/// [0, end_excl).
fn merged_windows(anchors: &[i32], start_off: i32, end_off: i32, end_excl: i32) -> Vec<(i32, i32)> {
    let mut spans: Vec<(i32, i32)> = anchors
        .iter()
        .map(|&a| ((a + start_off).max(0), (a + end_off).min(end_excl - 1)))
        .filter(|&(s, e)| s <= e)
        .collect();
    spans.sort_unstable();
    let mut merged: Vec<(i32, i32)> = Vec::new();
    for (s, e) in spans {
        match merged.last_mut() {
            Some(last) if s <= last.1 + 1 => last.1 = last.1.max(e),
            _ => merged.push((s, e)),
        }
    }
    merged
}

/// Daily process over [0, end_excl) whose rate is `elevated` inside the
/// (sorted, disjoint) windows and `base` outside them.
fn sample_piecewise(
    rng: &mut Rng,
    base: f64,
    elevated: f64,
    windows: &[(i32, i32)],
    end_excl: i32,
    out: &mut Vec<i32>,
) {
    let mut cursor = 0;
    for &(s, e) in windows {
        sample_daily(rng, base, cursor, s, out);
        sample_daily(rng, elevated, s, (e + 1).min(end_excl), out);
        cursor = e + 1;
    }
    sample_daily(rng, base, cursor, end_excl, out);
}

struct CsvOut {
    w: BufWriter<File>,
}

impl CsvOut {
    fn create(dir: &Path, name: &str, header: &str) -> anyhow::Result<CsvOut> {
        let path = dir.join(name);
        let f = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
        let mut w = BufWriter::new(f);
        writeln!(w, "{header}")?;
        Ok(CsvOut { w })
    }

    fn finish(mut self) -> anyhow::Result<()> {
        self.w.flush()?;
        Ok(())
    }
}

/// Totals of what one generation run emitted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct GenerationSummary {
    pub patients: u64,
    pub prescriptions: u64,
    pub events: u64,
    pub truth_rows: u64,
}

/// Generate the five dataset files into `dir` (created if missing):
/// patients.csv, prescriptions.csv, events.csv, exclusions.csv and
/// ground_truth.csv.
pub fn generate(config: &GeneratorConfig, dir: &Path) -> anyhow::Result<GenerationSummary> {
    config.validate()?;
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;

    let base = Day::parse_iso(BASE_DATE).expect("constant date");
    let span = config.span_days();
    // First prescriptions are placed late enough that the distant control
    // period is covered when the span allows, and early enough that the
    // 30-day active requirement keeps them.
    let rx_hi = span - 60;
    let rx_lo = (YEAR_DAYS + 810).min(rx_hi);

    let bg_drug_codes: Vec<String> = (0..config.background_drugs)
        .map(background_drug_code)
        .collect();
    // (code, daily rate) of every background event process; the leading
    // excluded_fraction are flagged, alternating chronic (faster) and
    // admin.
    let flagged = (config.excluded_fraction * config.background_events as f64).floor() as u32;
    let bg_event_procs: Vec<(String, f64)> = (0..config.background_events)
        .map(|i| {
            let chronic = i < flagged && i % 2 == 0;
            let rate = if chronic {
                config.background_event_daily_rate * CHRONIC_RATE_MULTIPLIER
            } else {
                config.background_event_daily_rate
            };
            (background_event_code(i), rate)
        })
        .collect();

    let mut patients = CsvOut::create(
        dir,
        "patients.csv",
        "patient_id,year_of_birth,gender,registration_date,death_date",
    )?;
    let mut prescriptions = CsvOut::create(dir, "prescriptions.csv", "patient_id,drug_code,date")?;
    let mut events = CsvOut::create(dir, "events.csv", "patient_id,event_code,date")?;

    let mut rng = rng_from_seed(config.rng_seed);
    let mut summary = GenerationSummary {
        patients: config.n_patients as u64,
        ..Default::default()
    };
    let base_year = base.year();

    for p in 0..config.n_patients {
        let id = format!("P{:07}", p + 1);
        let age =
            config.age_min + uniform_u64(&mut rng, (config.age_max - config.age_min + 1) as u64) as u32;
        let gender = if bernoulli(&mut rng, config.male_fraction) {
            "male"
        } else {
            "female"
        };
        writeln!(
            patients.w,
            "{id},{},{gender},{},",
            base_year - age as i32,
            base.to_iso()
        )?;

        let mut rx_rows: Vec<(i32, &str)> = Vec::new();
        let mut ev_rows: Vec<(i32, &str)> = Vec::new();
        let mut scratch: Vec<i32> = Vec::new();

        // Analyzed-drug prescriptions.
        let mut rx_days: Vec<Vec<i32>> = Vec::with_capacity(config.drugs.len());
        for drug in &config.drugs {
            let mut days = Vec::new();
            if bernoulli(&mut rng, drug.prescription_probability) {
                let first = rx_lo + uniform_u64(&mut rng, (rx_hi - rx_lo + 1) as u64) as i32;
                days.push(first);
                if bernoulli(&mut rng, drug.repeat_probability) {
                    let gap = 7 + uniform_u64(&mut rng, 39) as i32;
                    if first + gap < span {
                        days.push(first + gap);
                    }
                }
            }
            for &d in &days {
                rx_rows.push((d, drug.code.as_str()));
            }
            rx_days.push(days);
        }

        // Background prescriptions.
        for code in &bg_drug_codes {
            scratch.clear();
            sample_daily(&mut rng, config.background_drug_daily_rate, 0, span, &mut scratch);
            rx_rows.extend(scratch.iter().map(|&d| (d, code.as_str())));
        }

        // Background events.
        for (code, rate) in &bg_event_procs {
            scratch.clear();
            sample_daily(&mut rng, *rate, 0, span, &mut scratch);
            ev_rows.extend(scratch.iter().map(|&d| (d, code.as_str())));
        }

        // Indications, visit recordings, and planted reactions of each
        // analyzed drug.
        for (drug, days) in config.drugs.iter().zip(&rx_days) {
            if !days.is_empty() {
                let run_up = merged_windows(days, -INDICATION_PRE_DAYS, -1, span);
                for ind in &drug.indications {
                    for &(s, e) in &run_up {
                        scratch.clear();
                        sample_daily(&mut rng, ind.daily_rate, s, e + 1, &mut scratch);
                        ev_rows.extend(scratch.iter().map(|&d| (d, ind.event_code.as_str())));
                    }
                }
                for rec in &drug.recordings {
                    for &d in days {
                        if bernoulli(&mut rng, rec.probability) {
                            ev_rows.push((d, rec.event_code.as_str()));
                        }
                    }
                }
            }
            for adr in &drug.adrs {
                let onset = merged_windows(days, adr.onset_start, adr.onset_end, span);
                scratch.clear();
                sample_piecewise(
                    &mut rng,
                    adr.background_daily_rate,
                    adr.relative_risk * adr.background_daily_rate,
                    &onset,
                    span,
                    &mut scratch,
                );
                ev_rows.extend(scratch.iter().map(|&d| (d, adr.event_code.as_str())));
            }
        }

        // Sentinel: pins every patient's active period at the span end.
        ev_rows.push((span - 1, SENTINEL_CODE));

        rx_rows.sort_unstable();
        ev_rows.sort_unstable();
        for (d, code) in &rx_rows {
            writeln!(prescriptions.w, "{id},{code},{}", base.offset(*d).to_iso())?;
        }
        for (d, code) in &ev_rows {
            writeln!(events.w, "{id},{code},{}", base.offset(*d).to_iso())?;
        }
        summary.prescriptions += rx_rows.len() as u64;
        summary.events += ev_rows.len() as u64;
    }

    patients.finish()?;
    prescriptions.finish()?;
    events.finish()?;

    let mut exclusions = CsvOut::create(dir, "exclusions.csv", "event_code,reason")?;
    let mut excl_rows: Vec<(String, &str)> = vec![(SENTINEL_CODE.to_string(), "admin")];
    for i in 0..flagged {
        let reason = if i % 2 == 0 { "chronic" } else { "admin" };
        excl_rows.push((background_event_code(i), reason));
    }
    excl_rows.sort();
    for (code, reason) in &excl_rows {
        writeln!(exclusions.w, "{code},{reason}")?;
    }
    exclusions.finish()?;

    let mut truth = CsvOut::create(dir, "ground_truth.csv", "drug_code,event_code,frequency")?;
    let mut truth_rows: Vec<(String, String, Frequency)> = Vec::new();
    for drug in &config.drugs {
        for adr in &drug.adrs {
            truth_rows.push((drug.code.clone(), adr.event_code.clone(), adr.frequency_class()));
        }
    }
    truth_rows.sort();
    summary.truth_rows = truth_rows.len() as u64;
    for (drug, event, class) in &truth_rows {
        writeln!(truth.w, "{drug},{event},{class}")?;
    }
    truth.finish()?;

    Ok(summary)
}

/// Per-drug usage profile of a loaded dataset, era-weighted: a patient
/// with two eras of a drug counts twice.
#[derive(Debug, Clone, PartialEq)]
pub struct DrugSummary {
    pub drug_code: String,
    pub eras: u64,
    /// Mean of (era-start year - year of birth) over eras; None without
    /// eras.
    pub mean_age: Option<f64>,
    /// Fraction of eras belonging to male patients; None without eras.
    pub male_proportion: Option<f64>,
}

/// Summarize every drug in the store, in drug-code order.
pub fn describe(db: &EventDatabase) -> Vec<DrugSummary> {
    let mut out = Vec::with_capacity(db.drug_codes().len());
    for d in 0..db.drug_codes().len() as u32 {
        let drug = crate::codes::DrugId(d);
        let eras = db.find_eras(drug);
        let mut age_sum = 0i64;
        let mut males = 0u64;
        for era in &eras {
            let patient = db.patient(era.patient);
            age_sum += (era.start.year() - patient.year_of_birth) as i64;
            if patient.gender == crate::store::Gender::Male {
                males += 1;
            }
        }
        let n = eras.len() as u64;
        out.push(DrugSummary {
            drug_code: db.drug_code_str(drug).to_string(),
            eras: n,
            mean_age: if n > 0 {
                Some(age_sum as f64 / n as f64)
            } else {
                None
            },
            male_proportion: if n > 0 {
                Some(males as f64 / n as f64)
            } else {
                None
            },
        });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use crate::store::load_dataset;

    fn small_config() -> GeneratorConfig {
        GeneratorConfig {
            rng_seed: 7,
            n_patients: 200,
            observation_years: 4,
            drugs: vec![DrugSpec {
                code: "DRUG1".to_string(),
                prescription_probability: 0.3,
                repeat_probability: 0.4,
                indications: vec![IndicationSpec {
                    event_code: "IND01".to_string(),
                    daily_rate: 0.3,
                }],
                recordings: vec![RecordingSpec {
                    event_code: "REC01".to_string(),
                    probability: 0.4,
                }],
                adrs: vec![AdrSpec {
                    event_code: "ADR01".to_string(),
                    relative_risk: 10.0,
                    background_daily_rate: 0.001,
                    onset_start: 1,
                    onset_end: 30,
                }],
            }],
            ..GeneratorConfig::default()
        }
    }

    #[test]
    fn same_seed_same_bytes() {
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        let cfg = small_config();
        let s1 = generate(&cfg, d1.path()).unwrap();
        let s2 = generate(&cfg, d2.path()).unwrap();
        assert_eq!(s1, s2);
        for name in [
            "patients.csv",
            "prescriptions.csv",
            "events.csv",
            "exclusions.csv",
            "ground_truth.csv",
        ] {
            let a = std::fs::read(d1.path().join(name)).unwrap();
            let b = std::fs::read(d2.path().join(name)).unwrap();
            assert_eq!(a, b, "{name} differs");
        }
        let mut other = cfg.clone();
        other.rng_seed = 8;
        let d3 = tempfile::tempdir().unwrap();
        generate(&other, d3.path()).unwrap();
        let a = std::fs::read(d1.path().join("events.csv")).unwrap();
        let b = std::fs::read(d3.path().join("events.csv")).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn generated_dataset_loads_and_has_planted_structure() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small_config();
        generate(&cfg, dir.path()).unwrap();
        let (db, report) = load_dataset(dir.path()).unwrap();
        assert_eq!(report.rejected_rows(), 0);
        assert_eq!(db.n_patients(), 200);
        let drug = db.lookup_drug("DRUG1").unwrap();
        let users = db.patients_prescribed(drug);
        assert!(!users.is_empty());

        // Prescription days honor the placement window.
        let span = cfg.span_days();
        let base = Day::parse_iso(BASE_DATE).unwrap();
        let mut indicated = 0usize;
        for &pid in users {
            let first = db
                .prescriptions_of(pid)
                .iter()
                .find(|&&(_, d)| d == drug)
                .map(|&(day, _)| day)
                .unwrap();
            let off = first.days_since(base);
            assert!(off >= YEAR_DAYS + 810 && off <= span - 60, "off = {off}");
            // Indication material for the reference-period filter.
            let ind = db.lookup_event_code("IND01").unwrap();
            if db.has_event_in_window(pid, ind, first, -60, -1) {
                indicated += 1;
            }
        }
        assert!(
            indicated * 2 >= users.len(),
            "{indicated} of {} users indicated",
            users.len()
        );

        // Visit recordings fall only on prescription days of their drug.
        let rec = db.lookup_event_code("REC01").unwrap();
        let mut recorded = 0usize;
        for pid in db.patient_ids() {
            let rx_days: Vec<Day> = db
                .prescriptions_of(pid)
                .iter()
                .filter(|&&(_, d)| d == drug)
                .map(|&(day, _)| day)
                .collect();
            for &(day, code) in db.events_of(pid) {
                if code == rec {
                    assert!(rx_days.contains(&day), "stray recording on {day:?}");
                    recorded += 1;
                }
            }
        }
        assert!(recorded > 0, "no recordings generated");

        // The sentinel pins every span end and is excluded.
        let sentinel = db.lookup_event_code(SENTINEL_CODE).unwrap();
        assert!(db.is_excluded(sentinel));
        for pid in db.patient_ids() {
            assert_eq!(db.observation_end(pid), base.offset(span - 1));
        }

        // Ground truth lists the planted pair with the right class:
        // 1 - (1 - 0.01)^30 is about 0.26, squarely common.
        let truth = crate::eval::GroundTruth::load(&dir.path().join("ground_truth.csv")).unwrap();
        assert_eq!(truth.len(), 1);
        assert_eq!(
            truth.class_of("DRUG1", "ADR01"),
            Some(Frequency::Common)
        );
    }

    #[test]
    fn incidence_classes() {
        let adr = |rr: f64, bg: f64, len_end: i32| AdrSpec {
            event_code: "X".to_string(),
            relative_risk: rr,
            background_daily_rate: bg,
            onset_start: 1,
            onset_end: len_end,
        };
        assert_eq!(adr(1.0, 0.0005, 1).frequency_class(), Frequency::Rare);
        assert_eq!(adr(3.0, 0.0001, 10).frequency_class(), Frequency::LessCommon);
        assert_eq!(adr(10.0, 0.001, 30).frequency_class(), Frequency::Common);
    }

    #[test]
    fn validation_rejects_bad_configs() {
        let base = small_config();

        let mut c = base.clone();
        c.drugs[0].prescription_probability = 1.5;
        assert!(matches!(
            c.validate(),
            Err(ConfigError::BadProbability { .. })
        ));

        let mut c = base.clone();
        c.drugs[0].recordings[0].probability = -0.1;
        assert!(matches!(
            c.validate(),
            Err(ConfigError::BadProbability { .. })
        ));

        let mut c = base.clone();
        c.drugs[0].adrs[0].relative_risk = 0.5;
        assert!(matches!(
            c.validate(),
            Err(ConfigError::BadRelativeRisk { .. })
        ));

        let mut c = base.clone();
        c.drugs[0].adrs[0].onset_end = 31;
        assert!(matches!(c.validate(), Err(ConfigError::BadOnsetWindow { .. })));

        let mut c = base.clone();
        c.drugs[0].adrs[0].relative_risk = 2000.0;
        assert!(matches!(c.validate(), Err(ConfigError::RateOverflow { .. })));

        let mut c = base.clone();
        c.observation_years = 1;
        assert!(matches!(c.validate(), Err(ConfigError::TooFewYears { .. })));

        let mut c = base.clone();
        c.drugs[0].indications[0].event_code = "ADR01".to_string();
        assert!(matches!(c.validate(), Err(ConfigError::DuplicateCode { .. })));

        let mut c = base.clone();
        c.drugs[0].adrs[0].event_code = "TOOLONG".to_string();
        assert!(matches!(c.validate(), Err(ConfigError::CodeTooLong { .. })));

        let mut c = base.clone();
        c.n_patients = 0;
        assert_eq!(c.validate(), Err(ConfigError::NoPatients));

        assert_eq!(base.validate(), Ok(()));
    }

    #[test]
    fn daily_sampler_distribution_and_edges() {
        let mut rng = rng_from_seed(99);
        let mut out = Vec::new();
        sample_daily(&mut rng, 0.5, 0, 1000, &mut out);
        // Binomial(1000, 0.5): 3 sigma is about 47.
        assert!((450..=550).contains(&out.len()), "{} hits", out.len());
        assert!(out.windows(2).all(|w| w[0] < w[1]));
        assert!(out.iter().all(|&d| (0..1000).contains(&d)));

        out.clear();
        sample_daily(&mut rng, 0.0, 0, 1000, &mut out);
        assert!(out.is_empty());
        sample_daily(&mut rng, 1.0, 5, 8, &mut out);
        assert_eq!(out, vec![5, 6, 7]);
    }

    #[test]
    fn piecewise_sampler_respects_windows() {
        // Base rate 0: every hit must land inside the elevated windows.
        let mut rng = rng_from_seed(3);
        let windows = vec![(10, 19), (50, 59)];
        let mut out = Vec::new();
        sample_piecewise(&mut rng, 0.0, 1.0, &windows, 100, &mut out);
        let expect: Vec<i32> = (10..20).chain(50..60).collect();
        assert_eq!(out, expect);

        // Elevated rate 0: no hit may land inside them.
        out.clear();
        sample_piecewise(&mut rng, 0.3, 0.0, &windows, 100, &mut out);
        assert!(out
            .iter()
            .all(|&d| !(10..20).contains(&d) && !(50..60).contains(&d)));
    }

    #[test]
    fn window_merging() {
        assert_eq!(merged_windows(&[100], 1, 30, 1000), vec![(101, 130)]);
        // Overlapping onset windows fuse.
        assert_eq!(merged_windows(&[100, 110], 1, 30, 1000), vec![(101, 140)]);
        // Disjoint ones stay apart.
        assert_eq!(
            merged_windows(&[100, 200], 1, 30, 1000),
            vec![(101, 130), (201, 230)]
        );
        // Clipping at both ends.
        assert_eq!(merged_windows(&[5], -30, 30, 20), vec![(0, 19)]);
        assert_eq!(merged_windows(&[0], -30, -1, 1000), Vec::<(i32, i32)>::new());
    }

    #[test]
    fn describe_matches_hand_tally() {
        use crate::store::{
            DatasetRecords, EventInput, Gender, PatientInput, PrescriptionInput,
        };
        let day = |s: &str| Day::parse_iso(s).unwrap();
        let (db, _) = EventDatabase::build(DatasetRecords {
            patients: vec![
                PatientInput {
                    row: 0,
                    id: "p1".into(),
                    year_of_birth: 1940,
                    gender: Gender::Male,
                    registration: day("1980-01-01"),
                    death: None,
                },
                PatientInput {
                    row: 0,
                    id: "p2".into(),
                    year_of_birth: 1942,
                    gender: Gender::Female,
                    registration: day("1980-01-01"),
                    death: None,
                },
            ],
            prescriptions: vec![
                PrescriptionInput {
                    row: 0,
                    patient: "p1".into(),
                    drug: "X".into(),
                    date: day("2000-06-01"),
                },
                PrescriptionInput {
                    row: 0,
                    patient: "p2".into(),
                    drug: "X".into(),
                    date: day("2002-06-01"),
                },
                PrescriptionInput {
                    row: 0,
                    patient: "p1".into(),
                    drug: "Y".into(),
                    date: day("2000-06-01"),
                },
            ],
            events: vec![EventInput {
                row: 0,
                patient: "p1".into(),
                code: "E0001".into(),
                date: day("2003-01-01"),
            }],
            exclusions: vec![],
        });
        let summaries = describe(&db);
        let x = summaries.iter().find(|s| s.drug_code == "X").unwrap();
        assert_eq!(x.eras, 2);
        assert_eq!(x.mean_age, Some((60 + 60) as f64 / 2.0)); // 2000-1940, 2002-1942
        assert_eq!(x.male_proportion, Some(0.5));
        let y = summaries.iter().find(|s| s.drug_code == "Y").unwrap();
        assert_eq!(y.eras, 1);
        assert_eq!(y.male_proportion, Some(1.0));
    }

    #[test]
    fn describe_handles_empty_store() {
        use crate::store::DatasetRecords;
        let (db, _) = EventDatabase::build(DatasetRecords {
            patients: vec![],
            prescriptions: vec![],
            events: vec![],
            exclusions: vec![],
        });
        assert!(describe(&db).is_empty());
    }
}
