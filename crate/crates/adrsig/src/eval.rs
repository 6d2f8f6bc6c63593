//! Ranking evaluation against a reference list of known reactions:
//! precision at K, average precision (plain and rare-only), confusion
//! counts at each algorithm's natural threshold, and pooled ROC curves
//! with partial trapezoidal AUC.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use anyhow::Context;
use thiserror::Error;

use crate::rank::RankedSignalList;
use crate::store::truncate_event_code;

/// How often a listed reaction occurs according to the reference source.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Frequency {
    Common,
    LessCommon,
    Rare,
}

impl Frequency {
    pub fn as_str(&self) -> &'static str {
        match self {
            Frequency::Common => "common",
            Frequency::LessCommon => "less_common",
            Frequency::Rare => "rare",
        }
    }

    pub fn parse(s: &str) -> Option<Frequency> {
        match s {
            "common" => Some(Frequency::Common),
            "less_common" => Some(Frequency::LessCommon),
            "rare" => Some(Frequency::Rare),
            _ => None,
        }
    }
}

impl fmt::Display for Frequency {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Known (drug, event) pairs with their frequency class. Event codes are
/// truncated the same way the store truncates them, so lookups line up
/// with ranked output.
#[derive(Debug, Clone, Default)]
pub struct GroundTruth {
    entries: BTreeMap<(String, String), Frequency>,
}

#[derive(Debug, Error, PartialEq)]
pub enum TruthError {
    #[error("duplicate ground-truth pair ({drug}, {event})")]
    DuplicatePair { drug: String, event: String },
}

impl GroundTruth {
    pub fn new() -> GroundTruth {
        GroundTruth::default()
    }

    pub fn insert(
        &mut self,
        drug: &str,
        event: &str,
        class: Frequency,
    ) -> Result<(), TruthError> {
        let key = (drug.to_string(), truncate_event_code(event));
        if self.entries.contains_key(&key) {
            return Err(TruthError::DuplicatePair {
                drug: key.0,
                event: key.1,
            });
        }
        self.entries.insert(key, class);
        Ok(())
    }

    pub fn class_of(&self, drug: &str, event: &str) -> Option<Frequency> {
        self.entries
            .get(&(drug.to_string(), truncate_event_code(event)))
            .copied()
    }

    pub fn is_listed(&self, drug: &str, event: &str) -> bool {
        self.class_of(drug, event).is_some()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Read a `drug_code,event_code,frequency` CSV with a header row.
    pub fn load(path: &Path) -> anyhow::Result<GroundTruth> {
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_path(path)
            .with_context(|| format!("opening {}", path.display()))?;
        let headers = reader.headers()?.clone();
        let col = |name: &str| -> anyhow::Result<usize> {
            headers
                .iter()
                .position(|h| h == name)
                .with_context(|| format!("{}: missing column {name}", path.display()))
        };
        let (c_drug, c_event, c_freq) = (col("drug_code")?, col("event_code")?, col("frequency")?);
        let mut truth = GroundTruth::new();
        for (i, record) in reader.records().enumerate() {
            let record = record?;
            let line = i + 2; // header is line 1
            let freq_str = record.get(c_freq).unwrap_or("");
            let class = Frequency::parse(freq_str).with_context(|| {
                format!("{} line {line}: unknown frequency {freq_str:?}", path.display())
            })?;
            truth
                .insert(
                    record.get(c_drug).unwrap_or(""),
                    record.get(c_event).unwrap_or(""),
                    class,
                )
                .with_context(|| format!("{} line {line}", path.display()))?;
        }
        Ok(truth)
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("cutoff {k} outside 1..={len}")]
    KOutOfRange { k: usize, len: usize },
    #[error("pooled ranking has {positives} positives and {negatives} negatives; a ROC curve needs both classes")]
    SingleClassPool { positives: u64, negatives: u64 },
}

/// One ranked event tagged with its truth label.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledEntry {
    pub rank: u32,
    pub event_code: String,
    pub score: f64,
    /// True when the (drug, event) pair is listed in the ground truth.
    pub relevant: bool,
    /// Natural-threshold flag carried over from the algorithm.
    pub signalled: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledRanking {
    pub drug_code: String,
    pub entries: Vec<LabeledEntry>,
}

/// Tag each ranked event with membership in the ground truth.
pub fn label(ranking: &RankedSignalList, truth: &GroundTruth) -> LabeledRanking {
    LabeledRanking {
        drug_code: ranking.drug_code.clone(),
        entries: ranking
            .entries
            .iter()
            .map(|e| LabeledEntry {
                rank: e.rank,
                event_code: e.event_code.clone(),
                score: e.score,
                relevant: truth.is_listed(&ranking.drug_code, &e.event_code),
                signalled: e.signalled,
            })
            .collect(),
    }
}

/// P(K): the fraction of the top K entries that are listed reactions.
pub fn precision_at_k(labeled: &LabeledRanking, k: usize) -> Result<f64, EvalError> {
    if k < 1 || k > labeled.entries.len() {
        return Err(EvalError::KOutOfRange {
            k,
            len: labeled.entries.len(),
        });
    }
    let hits = labeled.entries[..k].iter().filter(|e| e.relevant).count();
    Ok(hits as f64 / k as f64)
}

/// Mean of P(K) over the ranks K holding a listed reaction; 0 when the
/// list contains none (the defining ratio is 0/0 there).
pub fn average_precision(labeled: &LabeledRanking) -> f64 {
    let mut hits = 0u64;
    let mut sum = 0.0;
    for (i, e) in labeled.entries.iter().enumerate() {
        if e.relevant {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    if hits == 0 {
        0.0
    } else {
        sum / hits as f64
    }
}

/// Average precision against rare reactions only. Listed common and
/// less-common events are removed from the ranking first (so a
/// highly-ranked common reaction cannot depress the rare scores), the
/// survivors are re-ranked contiguously, and only rare listings count as
/// relevant.
pub fn rare_only_ap(labeled: &LabeledRanking, truth: &GroundTruth) -> f64 {
    let filtered = LabeledRanking {
        drug_code: labeled.drug_code.clone(),
        entries: labeled
            .entries
            .iter()
            .filter(|e| {
                !matches!(
                    truth.class_of(&labeled.drug_code, &e.event_code),
                    Some(Frequency::Common) | Some(Frequency::LessCommon)
                )
            })
            .enumerate()
            .map(|(i, e)| LabeledEntry {
                rank: i as u32 + 1,
                relevant: truth.class_of(&labeled.drug_code, &e.event_code)
                    == Some(Frequency::Rare),
                ..e.clone()
            })
            .collect(),
    };
    average_precision(&filtered)
}

/// Outcome counts of the natural-threshold decision against the truth
/// labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ConfusionCounts {
    pub true_pos: u64,
    pub false_pos: u64,
    pub false_neg: u64,
    pub true_neg: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.true_pos + self.false_pos + self.false_neg + self.true_neg
    }

    pub fn signals(&self) -> u64 {
        self.true_pos + self.false_pos
    }

    /// TP / (TP + FN); None when no entry is listed.
    pub fn sensitivity(&self) -> Option<f64> {
        ratio(self.true_pos, self.true_pos + self.false_neg)
    }

    /// TN / (TN + FP); None when every entry is listed.
    pub fn specificity(&self) -> Option<f64> {
        ratio(self.true_neg, self.true_neg + self.false_pos)
    }

    /// TP / (TP + FP); None when nothing is signalled.
    pub fn precision(&self) -> Option<f64> {
        ratio(self.true_pos, self.true_pos + self.false_pos)
    }
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    if den == 0 {
        None
    } else {
        Some(num as f64 / den as f64)
    }
}

/// Classify every entry by (signalled, relevant).
pub fn natural_threshold_confusion(labeled: &LabeledRanking) -> ConfusionCounts {
    let mut c = ConfusionCounts::default();
    for e in &labeled.entries {
        match (e.signalled, e.relevant) {
            (true, true) => c.true_pos += 1,
            (true, false) => c.false_pos += 1,
            (false, true) => c.false_neg += 1,
            (false, false) => c.true_neg += 1,
        }
    }
    c
}

/// Threshold-sweep curve over a pooled ranking: points (FPR, TPR), FPR
/// non-decreasing, from (0, 0) to (1, 1). Entries sharing a score enter
/// as one block, so exact ties trace a diagonal segment.
#[derive(Debug, Clone, PartialEq)]
pub struct RocCurve {
    pub points: Vec<(f64, f64)>,
}

/// Merge per-drug labeled rankings and sweep every threshold. The pool is
/// ordered by descending score with (drug_code, event_code) breaking ties
/// deterministically.
pub fn pooled_roc(rankings: &[&LabeledRanking]) -> Result<RocCurve, EvalError> {
    let mut pool: Vec<(f64, &str, &str, bool)> = Vec::new();
    for r in rankings {
        for e in &r.entries {
            pool.push((e.score, r.drug_code.as_str(), e.event_code.as_str(), e.relevant));
        }
    }
    let positives = pool.iter().filter(|p| p.3).count() as u64;
    let negatives = pool.len() as u64 - positives;
    if positives == 0 || negatives == 0 {
        return Err(EvalError::SingleClassPool {
            positives,
            negatives,
        });
    }
    pool.sort_by(|a, b| {
        b.0.total_cmp(&a.0)
            .then_with(|| a.1.cmp(b.1))
            .then_with(|| a.2.cmp(b.2))
    });

    let mut points = vec![(0.0, 0.0)];
    let mut tp = 0u64;
    let mut fp = 0u64;
    let mut i = 0;
    while i < pool.len() {
        let mut j = i;
        while j < pool.len() && pool[j].0 == pool[i].0 {
            if pool[j].3 {
                tp += 1;
            } else {
                fp += 1;
            }
            j += 1;
        }
        points.push((fp as f64 / negatives as f64, tp as f64 / positives as f64));
        i = j;
    }
    Ok(RocCurve { points })
}

/// Trapezoidal area under the curve for FPR in [0, fpr_limit], linearly
/// interpolated at the cut. The value is the raw integral, not rescaled
/// by the limit.
pub fn partial_auc(curve: &RocCurve, fpr_limit: f64) -> f64 {
    assert!(
        fpr_limit > 0.0 && fpr_limit <= 1.0,
        "fpr_limit {fpr_limit} outside (0, 1]"
    );
    let mut area = 0.0;
    for pair in curve.points.windows(2) {
        let (x0, y0) = pair[0];
        let (x1, y1) = pair[1];
        if x1 <= fpr_limit {
            area += (x1 - x0) * (y0 + y1) / 2.0;
        } else if x0 < fpr_limit {
            let y_cut = y0 + (y1 - y0) * (fpr_limit - x0) / (x1 - x0);
            area += (fpr_limit - x0) * (y0 + y_cut) / 2.0;
            break;
        } else {
            break;
        }
    }
    area
}
