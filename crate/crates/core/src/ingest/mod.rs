//! Dataset ingestion, bundled fixtures and report rendering.

pub mod dataset_io;
pub mod fixtures;
pub mod report;

pub use dataset_io::{load_dataset, parse_dataset, save_dataset, to_rectangular};
pub use report::{compare, resolve_dataset, run_analysis, run_analysis_on, run_analysis_with_progress, AnalysisConfig, CompareOptions, ComparisonTable, PriorChoice, ReportBundle, ReportFormat};
