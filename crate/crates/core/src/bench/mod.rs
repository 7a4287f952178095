//! Metrics, reporting and the proximity-operator benchmark.

mod metrics;
mod prox_bench;
mod report;

pub use metrics::{apsr, argmax_lowest, failure_curve, norm_stats, pixel_success, BenchRecord, CurvePoint, NormStats};
pub use prox_bench::{prox_benchmark, summarize_prox, ProxBenchConfig, ProxBenchRecord, ProxBenchSummary, Solver};
pub use report::{read_records, read_records_from, write_csv, write_curve, write_records, RECORD_HEADER};
