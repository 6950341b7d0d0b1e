//! Experiment orchestration: training loops, the cell grid and reports.

pub mod profile;
pub mod report;
pub mod suite;
pub mod train;

pub use report::emit_report;
pub use suite::{run_suite, ExperimentReport, SuiteConfig, SuiteOutput};
pub use train::{finetune, finetune_observed, predict_records, pretrain, EpochLog, FinetuneConfig, PretrainConfig, Selection, TrainOutcome};
