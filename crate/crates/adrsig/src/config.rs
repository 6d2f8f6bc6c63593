//! Plain-text configuration: `key = value` lines with `#` comments.
//!
//! One shared parser feeds two schemas: the analysis run (dataset paths,
//! drug and algorithm lists, seeds, parallelism) and the synthetic
//! generator (cohort shape plus indexed drug/indication/reaction blocks
//! like `drug.0.adr.1.relative_risk`). Command-line flags override file
//! values; unknown keys are rejected so typos surface instead of being
//! silently ignored.

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

use thiserror::Error;

use crate::rank::Algorithm;
use crate::synth::{AdrSpec, DrugSpec, GeneratorConfig, IndicationSpec, RecordingSpec};

#[derive(Debug, Error, PartialEq)]
pub enum ConfigFileError {
    #[error("line {line}: expected key = value")]
    Malformed { line: usize },
    #[error("line {line}: duplicate key {key}")]
    DuplicateKey { key: String, line: usize },
    #[error("unknown key {key}")]
    UnknownKey { key: String },
    #[error("{key}: {message}")]
    BadValue { key: String, message: String },
    #[error("{prefix} indices must be contiguous from 0 (found {found:?})")]
    GappedIndices { prefix: String, found: Vec<u32> },
    #[error("unknown algorithm {name} (expected ROR05, MUTARA[60|180], HUNT[60|180], TPD[1|2])")]
    UnknownAlgorithm { name: String },
}

/// Parse `key = value` text. Keys and values are trimmed; blank lines and
/// lines starting with `#` are skipped.
pub fn parse_kv(text: &str) -> Result<BTreeMap<String, String>, ConfigFileError> {
    let mut map = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(ConfigFileError::Malformed { line: i + 1 });
        };
        let key = key.trim().to_string();
        if key.is_empty() {
            return Err(ConfigFileError::Malformed { line: i + 1 });
        }
        if map.contains_key(&key) {
            return Err(ConfigFileError::DuplicateKey { key, line: i + 1 });
        }
        map.insert(key, value.trim().to_string());
    }
    Ok(map)
}

/// Typed access over a parsed key set that tracks which keys were used,
/// so leftovers can be reported as unknown.
struct KeyReader {
    map: BTreeMap<String, String>,
    used: BTreeSet<String>,
}

impl KeyReader {
    fn new(map: BTreeMap<String, String>) -> KeyReader {
        KeyReader {
            map,
            used: BTreeSet::new(),
        }
    }

    fn raw(&mut self, key: &str) -> Option<String> {
        let v = self.map.get(key).cloned();
        if v.is_some() {
            self.used.insert(key.to_string());
        }
        v
    }

    fn parse<T: std::str::FromStr>(&mut self, key: &str) -> Result<Option<T>, ConfigFileError> {
        match self.raw(key) {
            None => Ok(None),
            Some(s) => s.parse::<T>().map(Some).map_err(|_| ConfigFileError::BadValue {
                key: key.to_string(),
                message: format!("cannot parse {s:?}"),
            }),
        }
    }

    /// 0-based indices present under `prefix.N.`, verified contiguous.
    fn indices(&self, prefix: &str) -> Result<u32, ConfigFileError> {
        let mut found: BTreeSet<u32> = BTreeSet::new();
        let lead = format!("{prefix}.");
        for key in self.map.keys() {
            if let Some(rest) = key.strip_prefix(&lead) {
                if let Some((idx, _)) = rest.split_once('.') {
                    if let Ok(i) = idx.parse::<u32>() {
                        found.insert(i);
                    }
                }
            }
        }
        let n = found.len() as u32;
        if found.iter().copied().ne(0..n) {
            return Err(ConfigFileError::GappedIndices {
                prefix: prefix.to_string(),
                found: found.into_iter().collect(),
            });
        }
        Ok(n)
    }

    fn finish(self) -> Result<(), ConfigFileError> {
        for key in self.map.keys() {
            if !self.used.contains(key) {
                return Err(ConfigFileError::UnknownKey { key: key.clone() });
            }
        }
        Ok(())
    }
}

/// Expand one algorithm name, generic families included: `MUTARA` covers
/// both re-exposure presets unless `mutara_tr` narrows it, `TPD` covers
/// both filter variants unless `tpd_variant` narrows it, and `HUNT`
/// behaves like `MUTARA`.
pub fn expand_algorithm(
    name: &str,
    mutara_tr: Option<u32>,
    tpd_variant: Option<u32>,
) -> Result<Vec<Algorithm>, ConfigFileError> {
    let upper = name.trim().to_uppercase();
    if let Some(a) = Algorithm::parse(&upper) {
        return Ok(vec![a]);
    }
    match (upper.as_str(), mutara_tr, tpd_variant) {
        ("MUTARA", Some(60), _) => Ok(vec![Algorithm::Mutara60]),
        ("MUTARA", Some(180), _) => Ok(vec![Algorithm::Mutara180]),
        ("MUTARA", None, _) => Ok(vec![Algorithm::Mutara60, Algorithm::Mutara180]),
        ("HUNT", Some(60), _) => Ok(vec![Algorithm::Hunt60]),
        ("HUNT", Some(180), _) => Ok(vec![Algorithm::Hunt180]),
        ("HUNT", None, _) => Ok(vec![Algorithm::Hunt60, Algorithm::Hunt180]),
        ("TPD", _, Some(1)) => Ok(vec![Algorithm::Tpd1]),
        ("TPD", _, Some(2)) => Ok(vec![Algorithm::Tpd2]),
        ("TPD", _, None) => Ok(vec![Algorithm::Tpd1, Algorithm::Tpd2]),
        _ => Err(ConfigFileError::UnknownAlgorithm {
            name: name.to_string(),
        }),
    }
}

/// Expand a comma-separated algorithm list, deduplicating while keeping
/// first-appearance order. An empty or missing list means every family.
pub fn expand_algorithms(
    list: Option<&str>,
    mutara_tr: Option<u32>,
    tpd_variant: Option<u32>,
) -> Result<Vec<Algorithm>, ConfigFileError> {
    let text = match list {
        Some(s) if !s.trim().is_empty() => s.to_string(),
        _ => "ROR05,MUTARA,HUNT,TPD".to_string(),
    };
    let mut out = Vec::new();
    for name in text.split(',') {
        if name.trim().is_empty() {
            continue;
        }
        for a in expand_algorithm(name, mutara_tr, tpd_variant)? {
            if !out.contains(&a) {
                out.push(a);
            }
        }
    }
    Ok(out)
}

/// Everything one analysis run needs.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub dataset_dir: PathBuf,
    pub truth: Option<PathBuf>,
    pub drugs: Vec<String>,
    pub algorithms: Vec<Algorithm>,
    pub seed: u64,
    pub out: PathBuf,
    pub jobs: usize,
    /// Absolute probability tolerance for credibility-bound quantiles.
    pub quantile_tol: f64,
}

/// Unresolved run settings: file values and flag values merge here before
/// `resolve` checks requireds and expands the algorithm list.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunSettings {
    pub dataset_dir: Option<PathBuf>,
    pub truth: Option<PathBuf>,
    pub drugs: Option<String>,
    pub algorithms: Option<String>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub jobs: Option<usize>,
    pub mutara_tr: Option<u32>,
    pub tpd_variant: Option<u32>,
    pub quantile_tol: Option<f64>,
}

#[derive(Debug, Error, PartialEq)]
pub enum RunConfigError {
    #[error("no dataset directory given (flag --dataset-dir or key dataset_dir)")]
    MissingDatasetDir,
    #[error("no output directory given (flag --out or key out)")]
    MissingOut,
    #[error("empty drug list (flag --drugs or key drugs)")]
    NoDrugs,
    #[error("--mutara-tr must be 60 or 180, got {0}")]
    BadMutaraTr(u32),
    #[error("--tpd-variant must be 1 or 2, got {0}")]
    BadTpdVariant(u32),
    #[error("--jobs must be at least 1")]
    BadJobs,
    #[error("quantile tolerance {0} is not in (0, 0.1]")]
    BadTolerance(f64),
    #[error(transparent)]
    File(#[from] ConfigFileError),
}

impl RunSettings {
    /// Read run keys from `key = value` text.
    pub fn from_text(text: &str) -> Result<RunSettings, RunConfigError> {
        let mut r = KeyReader::new(parse_kv(text)?);
        let settings = RunSettings {
            dataset_dir: r.raw("dataset_dir").map(PathBuf::from),
            truth: r.raw("truth").map(PathBuf::from),
            drugs: r.raw("drugs"),
            algorithms: r.raw("algorithms"),
            seed: r.parse("seed")?,
            out: r.raw("out").map(PathBuf::from),
            jobs: r.parse("jobs")?,
            mutara_tr: r.parse("mutara_tr")?,
            tpd_variant: r.parse("tpd_variant")?,
            quantile_tol: r.parse("tpd.quantile_tol")?,
        };
        r.finish()?;
        Ok(settings)
    }

    /// Lay `flags` over `self` (flag values win where present).
    pub fn overridden_by(self, flags: RunSettings) -> RunSettings {
        RunSettings {
            dataset_dir: flags.dataset_dir.or(self.dataset_dir),
            truth: flags.truth.or(self.truth),
            drugs: flags.drugs.or(self.drugs),
            algorithms: flags.algorithms.or(self.algorithms),
            seed: flags.seed.or(self.seed),
            out: flags.out.or(self.out),
            jobs: flags.jobs.or(self.jobs),
            mutara_tr: flags.mutara_tr.or(self.mutara_tr),
            tpd_variant: flags.tpd_variant.or(self.tpd_variant),
            quantile_tol: flags.quantile_tol.or(self.quantile_tol),
        }
    }

    pub fn resolve(self) -> Result<RunConfig, RunConfigError> {
        if let Some(tr) = self.mutara_tr {
            if tr != 60 && tr != 180 {
                return Err(RunConfigError::BadMutaraTr(tr));
            }
        }
        if let Some(v) = self.tpd_variant {
            if v != 1 && v != 2 {
                return Err(RunConfigError::BadTpdVariant(v));
            }
        }
        let mut drugs: Vec<String> = Vec::new();
        for name in self.drugs.as_deref().unwrap_or("").split(',') {
            let name = name.trim();
            if !name.is_empty() && !drugs.iter().any(|d| d == name) {
                drugs.push(name.to_string());
            }
        }
        if drugs.is_empty() {
            return Err(RunConfigError::NoDrugs);
        }
        let algorithms =
            expand_algorithms(self.algorithms.as_deref(), self.mutara_tr, self.tpd_variant)?;
        let jobs = self.jobs.unwrap_or(1);
        if jobs == 0 {
            return Err(RunConfigError::BadJobs);
        }
        let quantile_tol = self.quantile_tol.unwrap_or(crate::gamma::QUANTILE_PROB_TOL);
        if !(quantile_tol > 0.0 && quantile_tol <= 0.1) {
            return Err(RunConfigError::BadTolerance(quantile_tol));
        }
        Ok(RunConfig {
            dataset_dir: self.dataset_dir.ok_or(RunConfigError::MissingDatasetDir)?,
            truth: self.truth,
            drugs,
            algorithms,
            seed: self.seed.unwrap_or(1),
            out: self.out.ok_or(RunConfigError::MissingOut)?,
            jobs,
            quantile_tol,
        })
    }
}

/// Read a generator config from `key = value` text. Scalar keys default
/// sensibly; drug blocks are indexed (`drug.0.code = ...`,
/// `drug.0.adr.0.relative_risk = ...`).
pub fn generator_from_text(text: &str) -> Result<GeneratorConfig, ConfigFileError> {
    let mut r = KeyReader::new(parse_kv(text)?);
    let defaults = GeneratorConfig::default();
    let mut config = GeneratorConfig {
        rng_seed: r.parse("seed")?.unwrap_or(defaults.rng_seed),
        n_patients: r.parse("patients")?.unwrap_or(defaults.n_patients),
        observation_years: r.parse("years")?.unwrap_or(defaults.observation_years),
        age_min: r.parse("age.min")?.unwrap_or(defaults.age_min),
        age_max: r.parse("age.max")?.unwrap_or(defaults.age_max),
        male_fraction: r.parse("male_fraction")?.unwrap_or(defaults.male_fraction),
        drugs: Vec::new(),
        background_drugs: r
            .parse("background.drugs")?
            .unwrap_or(defaults.background_drugs),
        background_drug_daily_rate: r
            .parse("background.drug_rate")?
            .unwrap_or(defaults.background_drug_daily_rate),
        background_events: r
            .parse("background.events")?
            .unwrap_or(defaults.background_events),
        background_event_daily_rate: r
            .parse("background.event_rate")?
            .unwrap_or(defaults.background_event_daily_rate),
        excluded_fraction: r
            .parse("background.excluded_fraction")?
            .unwrap_or(defaults.excluded_fraction),
    };

    let n_drugs = r.indices("drug")?;
    for d in 0..n_drugs {
        let key = |suffix: &str| format!("drug.{d}.{suffix}");
        let code: String = r
            .parse(&key("code"))?
            .ok_or_else(|| ConfigFileError::BadValue {
                key: key("code"),
                message: "missing".to_string(),
            })?;
        let mut drug = DrugSpec {
            code,
            prescription_probability: r.parse(&key("prescription_probability"))?.unwrap_or(0.1),
            repeat_probability: r.parse(&key("repeat_probability"))?.unwrap_or(0.3),
            indications: Vec::new(),
            recordings: Vec::new(),
            adrs: Vec::new(),
        };
        let n_ind = r.indices(&format!("drug.{d}.indication"))?;
        for i in 0..n_ind {
            let ikey = |suffix: &str| format!("drug.{d}.indication.{i}.{suffix}");
            drug.indications.push(IndicationSpec {
                event_code: r.parse(&ikey("code"))?.ok_or_else(|| ConfigFileError::BadValue {
                    key: ikey("code"),
                    message: "missing".to_string(),
                })?,
                daily_rate: r.parse(&ikey("rate"))?.unwrap_or(0.3),
            });
        }
        let n_rec = r.indices(&format!("drug.{d}.recording"))?;
        for i in 0..n_rec {
            let rkey = |suffix: &str| format!("drug.{d}.recording.{i}.{suffix}");
            drug.recordings.push(RecordingSpec {
                event_code: r.parse(&rkey("code"))?.ok_or_else(|| ConfigFileError::BadValue {
                    key: rkey("code"),
                    message: "missing".to_string(),
                })?,
                probability: r.parse(&rkey("probability"))?.unwrap_or(0.3),
            });
        }
        let n_adr = r.indices(&format!("drug.{d}.adr"))?;
        for a in 0..n_adr {
            let akey = |suffix: &str| format!("drug.{d}.adr.{a}.{suffix}");
            drug.adrs.push(AdrSpec {
                event_code: r.parse(&akey("code"))?.ok_or_else(|| ConfigFileError::BadValue {
                    key: akey("code"),
                    message: "missing".to_string(),
                })?,
                relative_risk: r.parse(&akey("relative_risk"))?.unwrap_or(1.0),
                background_daily_rate: r.parse(&akey("background_rate"))?.unwrap_or(0.001),
                onset_start: r.parse(&akey("onset_start"))?.unwrap_or(1),
                onset_end: r.parse(&akey("onset_end"))?.unwrap_or(30),
            });
        }
        config.drugs.push(drug);
    }
    r.finish()?;
    Ok(config)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kv_parsing_and_errors() {
        let map = parse_kv("# comment\n a = 1 \n\nb=two words\n").unwrap();
        assert_eq!(map.get("a").map(String::as_str), Some("1"));
        assert_eq!(map.get("b").map(String::as_str), Some("two words"));
        assert_eq!(
            parse_kv("novalue\n"),
            Err(ConfigFileError::Malformed { line: 1 })
        );
        assert_eq!(
            parse_kv("a=1\na=2\n"),
            Err(ConfigFileError::DuplicateKey {
                key: "a".to_string(),
                line: 2
            })
        );
    }

    #[test]
    fn algorithm_expansion() {
        use Algorithm::*;
        assert_eq!(expand_algorithm("ROR05", None, None).unwrap(), vec![Ror05]);
        assert_eq!(
            expand_algorithm("MUTARA", None, None).unwrap(),
            vec![Mutara60, Mutara180]
        );
        assert_eq!(
            expand_algorithm("MUTARA", Some(180), None).unwrap(),
            vec![Mutara180]
        );
        assert_eq!(expand_algorithm("TPD", None, Some(2)).unwrap(), vec![Tpd2]);
        assert_eq!(expand_algorithm("hunt60", None, None).unwrap(), vec![Hunt60]);
        assert!(expand_algorithm("ROR", None, None).is_err());

        // Default list: every family, narrowed by flags.
        assert_eq!(
            expand_algorithms(None, None, None).unwrap(),
            vec![Ror05, Mutara60, Mutara180, Hunt60, Hunt180, Tpd1, Tpd2]
        );
        assert_eq!(
            expand_algorithms(None, Some(60), Some(1)).unwrap(),
            vec![Ror05, Mutara60, Hunt60, Tpd1]
        );
        // Duplicates collapse, order kept.
        assert_eq!(
            expand_algorithms(Some("TPD1,TPD,ROR05"), None, None).unwrap(),
            vec![Tpd1, Tpd2, Ror05]
        );
    }

    #[test]
    fn run_settings_merge_and_resolve() {
        let file = RunSettings::from_text(
            "dataset_dir = /data\nout = /out\ndrugs = D1, D2\nseed = 9\njobs = 4\n",
        )
        .unwrap();
        let flags = RunSettings {
            seed: Some(11),
            tpd_variant: Some(1),
            ..RunSettings::default()
        };
        let config = file.overridden_by(flags).resolve().unwrap();
        assert_eq!(config.seed, 11);
        assert_eq!(config.jobs, 4);
        assert_eq!(config.drugs, vec!["D1", "D2"]);
        assert_eq!(
            config.algorithms,
            vec![
                Algorithm::Ror05,
                Algorithm::Mutara60,
                Algorithm::Mutara180,
                Algorithm::Hunt60,
                Algorithm::Hunt180,
                Algorithm::Tpd1
            ]
        );
        assert_eq!(config.quantile_tol, crate::gamma::QUANTILE_PROB_TOL);
    }

    #[test]
    fn run_settings_required_fields() {
        let err = RunSettings::from_text("out = /out\ndrugs = D1\n")
            .unwrap()
            .resolve()
            .unwrap_err();
        assert_eq!(err, RunConfigError::MissingDatasetDir);

        let err = RunSettings::from_text("dataset_dir = /d\nout = /o\n")
            .unwrap()
            .resolve()
            .unwrap_err();
        assert_eq!(err, RunConfigError::NoDrugs);

        let err = RunSettings::from_text("dataset_dir = /d\nout = /o\ndrugs = D\nmutara_tr = 90\n")
            .unwrap()
            .resolve()
            .unwrap_err();
        assert_eq!(err, RunConfigError::BadMutaraTr(90));
    }

    #[test]
    fn unknown_run_key_is_rejected() {
        let err = RunSettings::from_text("dataset_dir = /d\ntypo_key = 1\n").unwrap_err();
        assert_eq!(
            err,
            RunConfigError::File(ConfigFileError::UnknownKey {
                key: "typo_key".to_string()
            })
        );
    }

    #[test]
    fn generator_config_round_trip() {
        let text = "\
seed = 42
patients = 500
years = 4
age.min = 50
age.max = 70
male_fraction = 0.4
background.drugs = 3
background.drug_rate = 0.002
background.events = 10
background.event_rate = 0.001
background.excluded_fraction = 0.5
drug.0.code = DRUG1
drug.0.prescription_probability = 0.2
drug.0.repeat_probability = 0.1
drug.0.indication.0.code = IND01
drug.0.indication.0.rate = 0.25
drug.0.recording.0.code = REC01
drug.0.recording.0.probability = 0.45
drug.0.adr.0.code = ADR01
drug.0.adr.0.relative_risk = 8
drug.0.adr.0.background_rate = 0.002
drug.0.adr.0.onset_start = 2
drug.0.adr.0.onset_end = 20
drug.1.code = DRUG2
";
        let config = generator_from_text(text).unwrap();
        assert_eq!(config.rng_seed, 42);
        assert_eq!(config.n_patients, 500);
        assert_eq!(config.drugs.len(), 2);
        let d0 = &config.drugs[0];
        assert_eq!(d0.code, "DRUG1");
        assert_eq!(d0.indications[0].daily_rate, 0.25);
        assert_eq!(d0.recordings[0].event_code, "REC01");
        assert_eq!(d0.recordings[0].probability, 0.45);
        assert_eq!(d0.adrs[0].relative_risk, 8.0);
        assert_eq!(d0.adrs[0].onset_end, 20);
        // Defaults fill the second drug.
        assert_eq!(config.drugs[1].prescription_probability, 0.1);
        assert!(config.drugs[1].adrs.is_empty());
        assert!(config.validate().is_ok());
    }

    #[test]
    fn generator_config_index_gap_and_typo() {
        let err = generator_from_text("drug.1.code = X\n").unwrap_err();
        assert!(matches!(err, ConfigFileError::GappedIndices { .. }));

        let err = generator_from_text("drug.0.code = X\ndrug.0.typo = 1\n").unwrap_err();
        assert_eq!(
            err,
            ConfigFileError::UnknownKey {
                key: "drug.0.typo".to_string()
            }
        );
    }
}
