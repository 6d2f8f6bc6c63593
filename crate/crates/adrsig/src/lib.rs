//! Signal detection workbench for adverse drug reactions in longitudinal
//! health records.
//!
//! The library turns raw primary-care style tables (patients, prescriptions,
//! events) into per-drug ranked lists of candidate adverse reactions using
//! four detection families, and evaluates those rankings against a known
//! reaction list:
//!
//! * [`srs`]: spontaneous-report style transform and the lower-bound
//!   reporting odds ratio (ROR05);
//! * [`mutara`]: temporal association rules with an unexpectedness filter
//!   (MUTARA) and its rank-ratio variant (HUNT);
//! * [`tpd`]: temporal pattern discovery with shrunk information components
//!   and a pre-prescription control period;
//! * [`eval`]: precision at K, average precision, pooled ROC with partial
//!   AUC, and natural-threshold confusion counts;
//! * [`synth`]: a seeded generator for synthetic datasets with planted
//!   reactions, plus dataset summaries;
//! * [`store`]: the preprocessed record store everything runs against.
//!
//! The `adrsig` binary wires these together behind `run`, `gen`, and
//! `describe` subcommands; [`run`] and [`config`] carry that orchestration.

pub mod codes;
pub mod config;
pub mod dates;
pub mod eval;
pub mod gamma;
pub mod mutara;
pub mod rank;
pub mod rng;
pub mod run;
pub mod srs;
pub mod store;
pub mod synth;
pub mod tpd;
