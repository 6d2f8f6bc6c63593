//! Temporal association mining: MUTARA's unexpected leverage and HUNT's
//! rank ratio.
//!
//! For one drug, every patient with a prescription of it contributes a user
//! subsequence anchored at the first prescription: a hazard period of
//! distinct event codes in [0, T_h] and a reference period in
//! [-T_b, -T_b + T_r - 1]. Every other patient contributes one window of
//! length T_c sampled uniformly from their cleaned observation span.
//! Leverage measures co-occurrence above independence; unexpected leverage
//! repeats the measure after discarding user events already seen in the
//! reference period, which suppresses conditions that predate the drug.
//! HUNT ranks by the ratio of an event's leverage rank to its unexpected
//! leverage rank, surfacing events whose standing collapses once the
//! pre-prescription history is taken into account.

use thiserror::Error;

use crate::codes::CodeId;
use crate::codes::DrugId;
use crate::dates::Day;
use crate::rank::{order_by_score_desc, Algorithm, RankedEntry, RankedSignalList};
use crate::rng::{rng_from_seed, uniform_u64};
use crate::store::{EventDatabase, PatientId};

/// Candidate events must occur within this many days of a first
/// prescription, whatever T_h extends to.
pub const CANDIDATE_WINDOW_DAYS: i32 = 30;

#[derive(Debug, Error, PartialEq)]
pub enum MutaraError {
    #[error("support undefined: no users and no non-users in the store")]
    EmptyPopulation,
}

/// Window geometry and sampling seed for one analysis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MutaraParams {
    /// Non-user window length, days.
    pub t_c: i32,
    /// Base hazard length; a quick repeat prescription extends it.
    pub t_e: i32,
    /// Reference window length, days.
    pub t_r: i32,
    /// Reference window offset: it starts T_b days before day 0.
    pub t_b: i32,
    pub rng_seed: u64,
}

impl MutaraParams {
    /// T_c = T_e = 30, T_r = T_b = 60.
    pub fn preset60(rng_seed: u64) -> MutaraParams {
        MutaraParams {
            t_c: 30,
            t_e: 30,
            t_r: 60,
            t_b: 60,
            rng_seed,
        }
    }

    /// T_c = T_e = 30, T_r = T_b = 180.
    pub fn preset180(rng_seed: u64) -> MutaraParams {
        MutaraParams {
            t_c: 30,
            t_e: 30,
            t_r: 180,
            t_b: 180,
            rng_seed,
        }
    }

    fn label(&self, hunt: bool) -> Algorithm {
        match (hunt, self.t_r) {
            (false, 180) => Algorithm::Mutara180,
            (false, _) => Algorithm::Mutara60,
            (true, 180) => Algorithm::Hunt180,
            (true, _) => Algorithm::Hunt60,
        }
    }
}

/// One user's anchored history for the analyzed drug.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UserSubsequence {
    pub patient: PatientId,
    pub first_prescription: Day,
    /// Hazard period length: T_e, extended to s + T_e when the second
    /// prescription follows s <= T_e days after the first.
    pub t_h: i32,
    /// Distinct event codes dated within [0, T_h] of the first
    /// prescription, ascending.
    pub hazard_events: Vec<CodeId>,
    /// Distinct event codes dated within [-T_b, -T_b + T_r - 1], ascending.
    pub reference_events: Vec<CodeId>,
}

impl UserSubsequence {
    pub fn hazard_contains(&self, code: CodeId) -> bool {
        self.hazard_events.binary_search(&code).is_ok()
    }

    pub fn reference_contains(&self, code: CodeId) -> bool {
        self.reference_events.binary_search(&code).is_ok()
    }
}

/// One sampled comparison window for a patient never prescribed the drug.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NonUserWindow {
    pub patient: PatientId,
    /// Inclusive window bounds; `end < start` encodes an empty observation
    /// span (the patient still counts in the population totals).
    pub start: Day,
    pub end: Day,
    /// Distinct event codes dated inside the window, ascending.
    pub events: Vec<CodeId>,
}

impl NonUserWindow {
    pub fn contains(&self, code: CodeId) -> bool {
        self.events.binary_search(&code).is_ok()
    }
}

/// Build the user subsequences of `drug`, ascending patient id.
pub fn build_users(db: &EventDatabase, drug: DrugId, params: &MutaraParams) -> Vec<UserSubsequence> {
    let mut users = Vec::with_capacity(db.patients_prescribed(drug).len());
    for &patient in db.patients_prescribed(drug) {
        let mut dates = db
            .prescriptions_of(patient)
            .iter()
            .filter(|&&(_, d)| d == drug)
            .map(|&(day, _)| day);
        let first = dates.next().expect("listed patients have a prescription");
        // The second prescription row (same-day repeats included) sets the
        // extension gap s.
        let t_h = match dates.next() {
            Some(second) => {
                let s = second.days_since(first);
                if s <= params.t_e {
                    s + params.t_e
                } else {
                    params.t_e
                }
            }
            None => params.t_e,
        };
        let hazard_events = db
            .events_in_window(patient, first, 0, t_h)
            .expect("t_h >= 0");
        let reference_events = db
            .events_in_window(patient, first, -params.t_b, -params.t_b + params.t_r - 1)
            .expect("t_r >= 1");
        users.push(UserSubsequence {
            patient,
            first_prescription: first,
            t_h,
            hazard_events,
            reference_events,
        });
    }
    users
}

/// Sample one window per patient never prescribed `drug`, ascending patient
/// id, from the ChaCha stream seeded by `params.rng_seed`. The window start
/// is uniform over the positions where a T_c-day window fits the patient's
/// cleaned observation span; spans of T_c days or shorter are used whole and
/// consume no draw, so the stream depends only on the store contents.
pub fn sample_nonusers(
    db: &EventDatabase,
    drug: DrugId,
    params: &MutaraParams,
) -> Vec<NonUserWindow> {
    let users = db.patients_prescribed(drug);
    let mut rng = rng_from_seed(params.rng_seed);
    let mut windows = Vec::with_capacity(db.n_patients().saturating_sub(users.len()));
    for patient in db.patient_ids() {
        if users.binary_search(&patient).is_ok() {
            continue;
        }
        let start = db.observation_start(patient);
        let end = db.observation_end(patient);
        let (w_start, w_end) = if end < start {
            (start, end)
        } else {
            let span_days = end.days_since(start) + 1;
            if span_days <= params.t_c {
                (start, end)
            } else {
                let slack = (span_days - params.t_c) as u64;
                let offset = uniform_u64(&mut rng, slack + 1) as i32;
                let w_start = start.offset(offset);
                (w_start, w_start.offset(params.t_c - 1))
            }
        };
        let events = if w_end < w_start {
            Vec::new()
        } else {
            db.events_in_window(patient, w_start, 0, w_end.days_since(w_start))
                .expect("ordered bounds")
        };
        windows.push(NonUserWindow {
            patient,
            start: w_start,
            end: w_end,
            events,
        });
    }
    windows
}

/// Population counts behind the five support fractions for one event code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SupportCounts {
    pub users: u64,
    pub nonusers: u64,
    /// Users with the event in their hazard period.
    pub users_with_event: u64,
    /// Users with the event in the hazard period but not in the reference
    /// period.
    pub users_unexpected: u64,
    /// Non-users with the event in their sampled window.
    pub nonusers_with_event: u64,
}

impl SupportCounts {
    pub fn tot(&self) -> u64 {
        self.users + self.nonusers
    }

    /// supp(A -> C): users with the event, over everyone.
    pub fn supp_ac(&self) -> f64 {
        self.users_with_event as f64 / self.tot() as f64
    }

    /// supp(A ->): users, over everyone.
    pub fn supp_a(&self) -> f64 {
        self.users as f64 / self.tot() as f64
    }

    /// supp(-> C): event occurrences among users and non-users alike.
    pub fn supp_c(&self) -> f64 {
        (self.users_with_event + self.nonusers_with_event) as f64 / self.tot() as f64
    }

    /// supp(A ~> C): unexpected user occurrences, over everyone.
    pub fn supp_unexpected_ac(&self) -> f64 {
        self.users_unexpected as f64 / self.tot() as f64
    }

    /// supp(~> C): unexpected user occurrences plus non-user occurrences.
    pub fn supp_unexpected_c(&self) -> f64 {
        (self.users_unexpected + self.nonusers_with_event) as f64 / self.tot() as f64
    }
}

/// Count the support population for one event code.
pub fn supports(
    users: &[UserSubsequence],
    nonusers: &[NonUserWindow],
    event: CodeId,
) -> Result<SupportCounts, MutaraError> {
    if users.is_empty() && nonusers.is_empty() {
        return Err(MutaraError::EmptyPopulation);
    }
    let mut counts = SupportCounts {
        users: users.len() as u64,
        nonusers: nonusers.len() as u64,
        users_with_event: 0,
        users_unexpected: 0,
        nonusers_with_event: 0,
    };
    for u in users {
        if u.hazard_contains(event) {
            counts.users_with_event += 1;
            if !u.reference_contains(event) {
                counts.users_unexpected += 1;
            }
        }
    }
    for w in nonusers {
        if w.contains(event) {
            counts.nonusers_with_event += 1;
        }
    }
    Ok(counts)
}

/// leverage(A -> C) = supp(A -> C) - supp(A ->) * supp(-> C).
pub fn leverage(s: &SupportCounts) -> f64 {
    s.supp_ac() - s.supp_a() * s.supp_c()
}

/// unexlev(A ~> C) = supp(A ~> C) - supp(A ->) * supp(~> C).
pub fn unexlev(s: &SupportCounts) -> f64 {
    s.supp_unexpected_ac() - s.supp_a() * s.supp_unexpected_c()
}

/// Scores and ranks of one candidate under both leverage orderings.
#[derive(Debug, Clone, PartialEq)]
pub struct LeverageScores {
    pub event: CodeId,
    pub leverage: f64,
    pub unexlev: f64,
    /// 1-based position in the leverage ordering (descending score,
    /// ascending event code on ties; no gaps).
    pub leverage_rank: u32,
    /// Same construction over unexpected leverage.
    pub unexlev_rank: u32,
    pub rank_ratio: f64,
}

/// Number of top positions HUNT flags: ceil(0.10 * candidate count).
pub fn hunt_signal_count(candidates: usize) -> usize {
    candidates.div_ceil(10)
}

struct Population {
    users: Vec<UserSubsequence>,
    nonusers: Vec<NonUserWindow>,
    /// Non-excluded distinct codes seen in [0, min(T_h, 30)] of any user.
    candidates: Vec<CodeId>,
}

fn build_population(
    db: &EventDatabase,
    drug: DrugId,
    params: &MutaraParams,
) -> Result<Population, MutaraError> {
    let users = build_users(db, drug, params);
    let nonusers = sample_nonusers(db, drug, params);
    if users.is_empty() && nonusers.is_empty() {
        return Err(MutaraError::EmptyPopulation);
    }
    let mut candidates: Vec<CodeId> = Vec::new();
    for u in &users {
        let horizon = u.t_h.min(CANDIDATE_WINDOW_DAYS);
        let codes = db
            .events_in_window(u.patient, u.first_prescription, 0, horizon)
            .expect("horizon >= 0");
        candidates.extend(codes.into_iter().filter(|&c| !db.is_excluded(c)));
    }
    candidates.sort_unstable();
    candidates.dedup();
    Ok(Population {
        users,
        nonusers,
        candidates,
    })
}

/// Score every candidate of `drug` under both measures, ranked and listed
/// by descending rank ratio (ascending event code on ties).
pub fn hunt_scores(
    db: &EventDatabase,
    drug: DrugId,
    params: &MutaraParams,
) -> Result<Vec<LeverageScores>, MutaraError> {
    let pop = build_population(db, drug, params)?;
    Ok(score_population(&pop))
}

fn score_population(pop: &Population) -> Vec<LeverageScores> {
    let mut lev: Vec<(CodeId, f64)> = Vec::with_capacity(pop.candidates.len());
    let mut unex: Vec<(CodeId, f64)> = Vec::with_capacity(pop.candidates.len());
    for &event in &pop.candidates {
        let s = supports(&pop.users, &pop.nonusers, event).expect("population checked non-empty");
        lev.push((event, leverage(&s)));
        unex.push((event, unexlev(&s)));
    }
    order_by_score_desc(&mut lev);
    order_by_score_desc(&mut unex);

    let position_by_event = |ordered: &[(CodeId, f64)]| {
        let mut ranks = vec![0u32; ordered.len()];
        let index_of: std::collections::BTreeMap<CodeId, usize> = pop
            .candidates
            .iter()
            .enumerate()
            .map(|(i, &c)| (c, i))
            .collect();
        for (pos, &(event, _)) in ordered.iter().enumerate() {
            ranks[index_of[&event]] = pos as u32 + 1;
        }
        ranks
    };
    let lev_rank = position_by_event(&lev);
    let unex_rank = position_by_event(&unex);
    let lev_by_event: std::collections::BTreeMap<CodeId, f64> = lev.iter().copied().collect();
    let unex_by_event: std::collections::BTreeMap<CodeId, f64> = unex.iter().copied().collect();

    let mut scores: Vec<LeverageScores> = pop
        .candidates
        .iter()
        .enumerate()
        .map(|(i, &event)| LeverageScores {
            event,
            leverage: lev_by_event[&event],
            unexlev: unex_by_event[&event],
            leverage_rank: lev_rank[i],
            unexlev_rank: unex_rank[i],
            rank_ratio: lev_rank[i] as f64 / unex_rank[i] as f64,
        })
        .collect();
    scores.sort_by(|a, b| b.rank_ratio.total_cmp(&a.rank_ratio).then(a.event.cmp(&b.event)));
    scores
}

/// Rank `drug`'s candidates by unexpected leverage. Natural threshold:
/// unexlev > 0.
pub fn mutara_rank(
    db: &EventDatabase,
    drug: DrugId,
    params: &MutaraParams,
) -> Result<RankedSignalList, MutaraError> {
    let pop = build_population(db, drug, params)?;
    let mut scored: Vec<(CodeId, f64)> = pop
        .candidates
        .iter()
        .map(|&event| {
            let s = supports(&pop.users, &pop.nonusers, event).expect("non-empty");
            (event, unexlev(&s))
        })
        .collect();
    order_by_score_desc(&mut scored);
    Ok(RankedSignalList {
        drug_code: db.drug_code_str(drug).to_string(),
        algorithm: params.label(false),
        entries: scored
            .into_iter()
            .zip(1u32..)
            .map(|((event, score), rank)| RankedEntry {
                event_code: db.event_code_str(event).to_string(),
                score,
                rank,
                signalled: score > 0.0,
            })
            .collect(),
    })
}

/// Rank `drug`'s candidates by HUNT's rank ratio. Natural threshold: the
/// top ceil(10%) positions.
pub fn hunt_rank(
    db: &EventDatabase,
    drug: DrugId,
    params: &MutaraParams,
) -> Result<RankedSignalList, MutaraError> {
    let scores = hunt_scores(db, drug, params)?;
    let flagged = hunt_signal_count(scores.len());
    Ok(RankedSignalList {
        drug_code: db.drug_code_str(drug).to_string(),
        algorithm: params.label(true),
        entries: scores
            .into_iter()
            .zip(1u32..)
            .map(|(s, rank)| RankedEntry {
                event_code: db.event_code_str(s.event).to_string(),
                score: s.rank_ratio,
                rank,
                signalled: (rank as usize) <= flagged,
            })
            .collect(),
    })
}
