//! Leakage-adjusted simulatability (LAS) for natural-language explanations.
//!
//! LAS measures how much an explanation helps a simulator predict a task
//! model's output, averaged separately over examples whose explanation leaks the
//! output and examples whose explanation does not.
//!
//! Modules:
//! - [`records`]: the prediction-record data model and its JSONL format
//! - [`leakage`]: binary leakage, Platt calibration, leakage bins
//! - [`las`]: example-level, two-group and binned LAS, bin sensitivity sweeps
//! - [`stats`]: bootstrap, Spearman, contingency tables, OLS, proportion tests
//! - [`textmetrics`]: corpus BLEU
//! - [`objectives`]: scalar math of the explanation training objectives
//! - [`synth`]: synthetic batches with analytically known LAS

pub mod las;
pub mod leakage;
pub mod objectives;
pub mod records;
pub mod stats;
pub mod synth;
pub mod textmetrics;

pub use las::{compute_las, example_las, LasError, LasReport, Scale, SensitivityCurve};
pub use leakage::{binary_leakage, LeakageAssignment, PlattParams};
pub use records::{parse_records, PredictionRecord, RecordBatch, Strictness};
pub use stats::{BootstrapConfig, BootstrapResult, ContingencyTable, RegressionResult};
