//! One analysis run end to end: load and clean the store, execute the
//! (drug, algorithm) task matrix on a bounded worker pool, write one ranked
//! signal CSV per task, and fold every comparison measure into a single
//! metrics JSON.
//!
//! Outputs are a pure function of (input files, config, seed): tasks are
//! collected in submission order regardless of worker count, JSON maps are
//! sorted, floats are rounded to 6 significant digits, and nothing
//! machine- or time-dependent is written.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde_json::{Map, Value};

use crate::config::RunConfig;
use crate::eval::{
    average_precision, label, natural_threshold_confusion, pooled_roc, precision_at_k,
    rare_only_ap, ConfusionCounts, GroundTruth, LabeledRanking,
};
use crate::mutara::{hunt_rank, mutara_rank, MutaraParams};
use crate::rank::{fmt_sig6, round_sig6, Algorithm, RankedSignalList};
use crate::rng::derive_seed;
use crate::srs::{rank_by_ror05_indexed, SrsIndex};
use crate::store::{load_dataset, EventDatabase, LoadReport};
use crate::tpd::{tpd_rank_tol, Background, TpdVariant};

/// Partial AUC limits reported per algorithm.
pub const AUC_LIMITS: [f64; 3] = [1.0, 0.3, 0.1];

/// A task that could not produce a ranking. The run continues without it;
/// the failure is recorded in the metrics document and in the process
/// exit status.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskFailure {
    pub drug_code: String,
    pub algorithm: Algorithm,
    pub message: String,
}

#[derive(Debug)]
pub struct RunOutcome {
    pub signal_files: Vec<PathBuf>,
    pub metrics_path: PathBuf,
    pub failures: Vec<TaskFailure>,
}

/// Keep codes usable as file-name fragments; anything outside
/// [A-Za-z0-9_-] becomes '_'.
fn sanitize(code: &str) -> String {
    code.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

fn signals_file_name(drug_code: &str, algorithm: Algorithm) -> String {
    format!("signals_{}_{}.csv", sanitize(drug_code), algorithm.as_str())
}

fn write_signals(path: &Path, list: &RankedSignalList) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_path(path)
        .with_context(|| format!("creating {}", path.display()))?;
    w.write_record(["drug_code", "event_code", "algorithm", "score", "rank", "signalled"])?;
    for e in &list.entries {
        w.write_record([
            list.drug_code.as_str(),
            e.event_code.as_str(),
            list.algorithm.as_str(),
            &fmt_sig6(e.score),
            &e.rank.to_string(),
            if e.signalled { "true" } else { "false" },
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Produce one ranking. A drug code absent from the store is an empty
/// ranking, not an error: the store simply holds no data for it.
fn compute_task(
    db: &EventDatabase,
    srs: Option<&SrsIndex>,
    bg: Option<&Background>,
    drug_code: &str,
    algorithm: Algorithm,
    config: &RunConfig,
) -> Result<RankedSignalList, String> {
    let Some(drug) = db.lookup_drug(drug_code) else {
        return Ok(RankedSignalList {
            drug_code: drug_code.to_string(),
            algorithm,
            entries: Vec::new(),
        });
    };
    // MUTARA and HUNT at the same re-exposure preset share a derived seed,
    // so both judge the drug against the same sampled non-user windows.
    let mutara_params = |tr: &str| {
        let seed = derive_seed(config.seed, &[drug_code, tr]);
        if tr == "60" {
            MutaraParams::preset60(seed)
        } else {
            MutaraParams::preset180(seed)
        }
    };
    match algorithm {
        Algorithm::Ror05 => Ok(rank_by_ror05_indexed(
            db,
            srs.expect("index built when ROR05 is requested"),
            drug,
        )),
        Algorithm::Mutara60 => {
            mutara_rank(db, drug, &mutara_params("60")).map_err(|e| e.to_string())
        }
        Algorithm::Mutara180 => {
            mutara_rank(db, drug, &mutara_params("180")).map_err(|e| e.to_string())
        }
        Algorithm::Hunt60 => hunt_rank(db, drug, &mutara_params("60")).map_err(|e| e.to_string()),
        Algorithm::Hunt180 => {
            hunt_rank(db, drug, &mutara_params("180")).map_err(|e| e.to_string())
        }
        Algorithm::Tpd1 => tpd_rank_tol(
            db,
            bg.expect("background built when TPD is requested"),
            drug,
            TpdVariant::Tpd1,
            config.quantile_tol,
        )
        .map_err(|e| e.to_string()),
        Algorithm::Tpd2 => tpd_rank_tol(
            db,
            bg.expect("background built when TPD is requested"),
            drug,
            TpdVariant::Tpd2,
            config.quantile_tol,
        )
        .map_err(|e| e.to_string()),
    }
}

fn num(x: f64) -> Value {
    serde_json::Number::from_f64(round_sig6(x))
        .map(Value::Number)
        .unwrap_or(Value::Null)
}

fn opt_num(x: Option<f64>) -> Value {
    x.map(num).unwrap_or(Value::Null)
}

fn confusion_block(c: &ConfusionCounts) -> Map<String, Value> {
    let mut m = Map::new();
    m.insert("signals".to_string(), Value::from(c.signals()));
    m.insert("true_pos".to_string(), Value::from(c.true_pos));
    m.insert("false_pos".to_string(), Value::from(c.false_pos));
    m.insert("false_neg".to_string(), Value::from(c.false_neg));
    m.insert("true_neg".to_string(), Value::from(c.true_neg));
    m.insert("sensitivity".to_string(), opt_num(c.sensitivity()));
    m.insert("specificity".to_string(), opt_num(c.specificity()));
    m.insert("precision".to_string(), opt_num(c.precision()));
    m
}

fn add(a: &mut ConfusionCounts, b: &ConfusionCounts) {
    a.true_pos += b.true_pos;
    a.false_pos += b.false_pos;
    a.false_neg += b.false_neg;
    a.true_neg += b.true_neg;
}

/// Per-drug measures: candidate and signal counts always; AP, rare-only
/// AP and P(10) (K clamped to the list length) when ground truth is given.
fn drug_block(list: &RankedSignalList, truth: Option<&GroundTruth>) -> Map<String, Value> {
    let mut m = Map::new();
    m.insert("candidates".to_string(), Value::from(list.entries.len()));
    m.insert(
        "signals".to_string(),
        Value::from(list.entries.iter().filter(|e| e.signalled).count()),
    );
    let Some(truth) = truth else {
        m.insert("ap".to_string(), Value::Null);
        m.insert("rare_ap".to_string(), Value::Null);
        m.insert("p10".to_string(), Value::Null);
        return m;
    };
    let labeled = label(list, truth);
    m.insert("ap".to_string(), num(average_precision(&labeled)));
    m.insert("rare_ap".to_string(), num(rare_only_ap(&labeled, truth)));
    let p10 = if labeled.entries.is_empty() {
        Value::Null
    } else {
        let k = labeled.entries.len().min(10);
        num(precision_at_k(&labeled, k).expect("k clamped to range"))
    };
    m.insert("p10".to_string(), p10);
    m
}

/// Pooled measures for one algorithm over every drug that produced a
/// ranking: total signal count always; the natural-threshold table, the
/// ROC points, and partial AUCs at [`AUC_LIMITS`] when truth is given.
fn pooled_block(
    lists: &[&RankedSignalList],
    truth: Option<&GroundTruth>,
) -> Map<String, Value> {
    let mut m = Map::new();
    let signals: usize = lists
        .iter()
        .map(|l| l.entries.iter().filter(|e| e.signalled).count())
        .sum();
    m.insert("signals".to_string(), Value::from(signals));
    let Some(truth) = truth else {
        for key in ["sensitivity", "specificity", "precision", "auc", "roc"] {
            m.insert(key.to_string(), Value::Null);
        }
        return m;
    };
    let labeled: Vec<LabeledRanking> = lists.iter().map(|l| label(l, truth)).collect();
    let mut confusion = ConfusionCounts::default();
    for l in &labeled {
        add(&mut confusion, &natural_threshold_confusion(l));
    }
    for (k, v) in confusion_block(&confusion) {
        m.insert(k, v);
    }
    let refs: Vec<&LabeledRanking> = labeled.iter().collect();
    match pooled_roc(&refs) {
        Ok(curve) => {
            let mut auc = Map::new();
            for limit in AUC_LIMITS {
                auc.insert(
                    fmt_sig6(limit),
                    num(crate::eval::partial_auc(&curve, limit)),
                );
            }
            m.insert("auc".to_string(), Value::Object(auc));
            let points: Vec<Value> = curve
                .points
                .iter()
                .map(|&(x, y)| Value::Array(vec![num(x), num(y)]))
                .collect();
            m.insert("roc".to_string(), Value::Array(points));
        }
        Err(e) => {
            m.insert("auc".to_string(), Value::Null);
            m.insert("roc".to_string(), Value::Null);
            m.insert("roc_note".to_string(), Value::from(e.to_string()));
        }
    }
    m
}

fn metrics_json(
    db: &EventDatabase,
    report: &LoadReport,
    config: &RunConfig,
    truth: Option<&GroundTruth>,
    tasks: &[(&str, Algorithm)],
    results: &[Result<RankedSignalList, String>],
) -> Value {
    let mut root = Map::new();

    let mut dataset = Map::new();
    dataset.insert("patients".to_string(), Value::from(db.n_patients()));
    dataset.insert("prescriptions".to_string(), Value::from(db.n_prescriptions()));
    dataset.insert("events".to_string(), Value::from(db.n_events()));
    dataset.insert("rejected_rows".to_string(), Value::from(report.rejected_rows()));
    root.insert("dataset".to_string(), Value::Object(dataset));

    let mut run = Map::new();
    run.insert("seed".to_string(), Value::from(config.seed));
    run.insert(
        "drugs".to_string(),
        Value::Array(config.drugs.iter().map(|d| Value::from(d.as_str())).collect()),
    );
    run.insert(
        "algorithms".to_string(),
        Value::Array(
            config
                .algorithms
                .iter()
                .map(|a| Value::from(a.as_str()))
                .collect(),
        ),
    );
    run.insert("truth_provided".to_string(), Value::from(truth.is_some()));
    root.insert("run".to_string(), Value::Object(run));

    let mut per_drug: Map<String, Value> = Map::new();
    for ((drug, algo), result) in tasks.iter().zip(results) {
        let entry = per_drug
            .entry(drug.to_string())
            .or_insert_with(|| Value::Object(Map::new()));
        let block = match result {
            Ok(list) => drug_block(list, truth),
            Err(msg) => {
                let mut m = Map::new();
                m.insert("error".to_string(), Value::from(msg.as_str()));
                m
            }
        };
        entry
            .as_object_mut()
            .expect("per-drug entries are objects")
            .insert(algo.as_str().to_string(), Value::Object(block));
    }
    root.insert("per_drug".to_string(), Value::Object(per_drug));

    let mut pooled = Map::new();
    for &algo in &config.algorithms {
        let lists: Vec<&RankedSignalList> = tasks
            .iter()
            .zip(results)
            .filter(|((_, a), r)| *a == algo && r.is_ok())
            .map(|(_, r)| r.as_ref().expect("filtered to ok"))
            .collect();
        pooled.insert(
            algo.as_str().to_string(),
            Value::Object(pooled_block(&lists, truth)),
        );
    }
    root.insert("pooled".to_string(), Value::Object(pooled));

    let errors: Vec<Value> = tasks
        .iter()
        .zip(results)
        .filter_map(|((drug, algo), r)| {
            r.as_ref().err().map(|msg| {
                let mut m = Map::new();
                m.insert("drug".to_string(), Value::from(*drug));
                m.insert("algorithm".to_string(), Value::from(algo.as_str()));
                m.insert("message".to_string(), Value::from(msg.as_str()));
                Value::Object(m)
            })
        })
        .collect();
    root.insert("errors".to_string(), Value::Array(errors));

    Value::Object(root)
}

pub fn run(config: &RunConfig) -> anyhow::Result<RunOutcome> {
    let (db, report) = load_dataset(&config.dataset_dir)?;
    let db = db.clean();
    log::info!(
        "store loaded: {} patients, {} rejected rows",
        db.n_patients(),
        report.rejected_rows()
    );

    let truth = match &config.truth {
        Some(path) => Some(GroundTruth::load(path)?),
        None => None,
    };

    let srs_index = config
        .algorithms
        .contains(&Algorithm::Ror05)
        .then(|| SrsIndex::build(&db));
    let background = config
        .algorithms
        .iter()
        .any(|a| matches!(a, Algorithm::Tpd1 | Algorithm::Tpd2))
        .then(|| Background::build(&db));

    let tasks: Vec<(&str, Algorithm)> = config
        .drugs
        .iter()
        .flat_map(|d| config.algorithms.iter().map(move |&a| (d.as_str(), a)))
        .collect();

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.jobs)
        .build()
        .context("building worker pool")?;
    let results: Vec<Result<RankedSignalList, String>> = pool.install(|| {
        use rayon::prelude::*;
        tasks
            .par_iter()
            .map(|&(drug, algo)| {
                compute_task(
                    &db,
                    srs_index.as_ref(),
                    background.as_ref(),
                    drug,
                    algo,
                    config,
                )
            })
            .collect()
    });

    fs::create_dir_all(&config.out)
        .with_context(|| format!("creating {}", config.out.display()))?;
    let mut signal_files = Vec::new();
    let mut failures = Vec::new();
    for (&(drug, algo), result) in tasks.iter().zip(&results) {
        match result {
            Ok(list) => {
                let path = config.out.join(signals_file_name(drug, algo));
                write_signals(&path, list)?;
                signal_files.push(path);
            }
            Err(message) => {
                log::warn!("{} on {drug} failed: {message}", algo.as_str());
                failures.push(TaskFailure {
                    drug_code: drug.to_string(),
                    algorithm: algo,
                    message: message.clone(),
                });
            }
        }
    }

    let metrics = metrics_json(&db, &report, config, truth.as_ref(), &tasks, &results);
    let metrics_path = config.out.join("metrics.json");
    fs::write(
        &metrics_path,
        format!("{}\n", serde_json::to_string_pretty(&metrics)?),
    )
    .with_context(|| format!("writing {}", metrics_path.display()))?;

    Ok(RunOutcome {
        signal_files,
        metrics_path,
        failures,
    })
}
