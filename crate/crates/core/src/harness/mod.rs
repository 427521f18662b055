//! Suite generation, pipeline variants and the experiment runner.

pub mod experiment;
pub mod pipeline;
pub mod single;
pub mod suite;

pub use experiment::{
    run_and_write, run_bench, run_experiment, BenchReport, ExperimentConfig, ExperimentReport,
    ProviderKind, ProviderSource, ResultRow, Summary, VariantSummary, FAILURE_LIMIT,
};
pub use pipeline::{is_correct, run_variant, KChoice, Providers, RunRecord, VariantKind};
pub use single::{run_single, SingleOutcome};
pub use suite::{gen_suite, write_generated_suite, SuiteSpec};
