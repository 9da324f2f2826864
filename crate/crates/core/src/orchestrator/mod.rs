//! Repetition driver: resets the clouds, launches one process per node,
//! collects ledgers and cloud counters, and turns them into drop and
//! transmission-time figures.
//!
//! Output layout under the run directory:
//!
//! ```text
//! rep_<k>/node_<id>.json   node ledgers
//! rep_<k>/cloud.json       cloud counters after the run, by cloud name
//! rep_<k>/run.json         oracle, offsets, labels and metrics
//! ```

mod deploy;
mod metrics;
mod report;
mod run;

pub use deploy::{emit_deploy_descriptors, DEFAULT_IMAGE};
pub use metrics::{
    compute_metrics, compute_metrics_with, percentile, summarize, LatencySummary, RepMetrics,
    RunLedger, TransTimeMode,
};
pub use report::{
    aggregate, load_results, render_csv, render_json, ReportError, RunReport, CSV_HEADER,
};
pub use run::{
    cleanup, rep_dir, run_simulation, Launcher, RepStatus, RunError, RunLabels, RunOptions,
    RunRecord,
};
