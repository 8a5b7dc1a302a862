//! Experiment orchestration: configuration, the online loop, bounds and reports.

pub mod bounds;
pub mod config;
pub mod experiment;
pub mod report;
pub mod sweep;

pub use bounds::{crossover_analysis, theoretical_bound, BoundRecord, Crossover, CrossoverSummary};
pub use config::{parse_policy_list, parse_seed_list, ExperimentConfig, PolicyKind};
pub use experiment::{ewc_policy_round, run_experiment, train_offline, EwcRound, OfflineModel};
pub use report::{export_report, load_report, PolicyCurve, RegretReport};
pub use sweep::{sweep_k, SweepResult, SweepRow};
