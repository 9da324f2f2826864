use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::metrics::{percentile, RepMetrics, TransTimeMode};
use super::run::{RepStatus, RunLabels, RunRecord};

/// Repetitions of one configuration, averaged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub topology_digest: String,
    pub labels: RunLabels,
    /// Successful repetitions.
    pub repetitions: u32,
    pub failed_repetitions: u32,
    pub failures: Vec<String>,
    pub sim_drop: f64,
    pub cloud_drop: f64,
    pub cloud_drop_in: f64,
    pub cloud_drop_out: f64,
    pub in_flight_discarded: f64,
    pub trans_time_mean_ns: f64,
    /// Median across repetitions of each repetition's percentile.
    pub trans_time_p50_ns: u64,
    pub trans_time_p95_ns: u64,
    pub trans_time_p99_ns: u64,
    pub trans_time_mode: TransTimeMode,
    pub per_repetition: Vec<RepMetrics>,
}

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("no run results under {0}")]
    Empty(PathBuf),
    #[error("inconsistent runs under {dir}: topology digests {a} and {b}")]
    Inconsistent { dir: PathBuf, a: String, b: String },
    #[error("reading {path}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("parsing {path}")]
    Parse {
        path: PathBuf,
        source: serde_json::Error,
    },
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = xs.fold((0.0, 0u32), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Averages successful repetitions; failed ones are only counted.
pub fn aggregate(records: &[RunRecord]) -> RunReport {
    let ok: Vec<&RepMetrics> = records
        .iter()
        .filter(|r| r.status == RepStatus::Ok)
        .filter_map(|r| r.metrics.as_ref())
        .collect();
    let labels = records
        .iter()
        .find(|r| r.status == RepStatus::Ok)
        .or(records.first())
        .map(|r| r.labels.clone())
        .unwrap_or(RunLabels {
            platform_label: String::new(),
            node_count: 0,
            speed: String::new(),
            protocol: String::new(),
            compute_ns: 0,
        });
    let mode = ok
        .iter()
        .map(|m| m.trans_time.mode)
        .find(|m| *m != TransTimeMode::NoSamples)
        .unwrap_or(TransTimeMode::NoSamples);
    let with_samples: Vec<&&RepMetrics> = ok.iter().filter(|m| m.trans_time.samples > 0).collect();
    let pooled = |f: fn(&RepMetrics) -> u64| {
        let mut v: Vec<u64> = with_samples.iter().map(|m| f(m)).collect();
        v.sort_unstable();
        percentile(&v, 50.0)
    };
    RunReport {
        topology_digest: records
            .first()
            .map(|r| r.topology_digest.clone())
            .unwrap_or_default(),
        labels,
        repetitions: ok.len() as u32,
        failed_repetitions: records
            .iter()
            .filter(|r| r.status == RepStatus::Failed)
            .count() as u32,
        failures: records.iter().filter_map(|r| r.failure.clone()).collect(),
        sim_drop: mean(ok.iter().map(|m| m.sim_drop as f64)),
        cloud_drop: mean(ok.iter().map(|m| m.cloud_drop as f64)),
        cloud_drop_in: mean(ok.iter().map(|m| m.cloud_drop_in as f64)),
        cloud_drop_out: mean(ok.iter().map(|m| m.cloud_drop_out as f64)),
        in_flight_discarded: mean(ok.iter().map(|m| m.in_flight_discarded as f64)),
        trans_time_mean_ns: mean(with_samples.iter().map(|m| m.trans_time.mean_ns)),
        trans_time_p50_ns: pooled(|m| m.trans_time.p50_ns),
        trans_time_p95_ns: pooled(|m| m.trans_time.p95_ns),
        trans_time_p99_ns: pooled(|m| m.trans_time.p99_ns),
        trans_time_mode: mode,
        per_repetition: ok.into_iter().cloned().collect(),
    }
}

fn find_run_files(dir: &Path, out: &mut Vec<PathBuf>) -> Result<(), ReportError> {
    let io = |source| ReportError::Io {
        path: dir.to_path_buf(),
        source,
    };
    for entry in std::fs::read_dir(dir).map_err(io)? {
        let path = entry.map_err(io)?.path();
        if path.is_dir() {
            find_run_files(&path, out)?;
        } else if path.file_name().is_some_and(|n| n == "run.json") {
            out.push(path);
        }
    }
    Ok(())
}

/// Loads every `run.json` below `dir`, one report per run directory (the
/// parent of the `rep_<k>` folders).
pub fn load_results(dir: &Path) -> Result<Vec<RunReport>, ReportError> {
    let mut files = Vec::new();
    find_run_files(dir, &mut files)?;
    if files.is_empty() {
        return Err(ReportError::Empty(dir.to_path_buf()));
    }
    let mut groups: BTreeMap<PathBuf, Vec<RunRecord>> = BTreeMap::new();
    for f in files {
        let bytes = std::fs::read(&f).map_err(|source| ReportError::Io {
            path: f.clone(),
            source,
        })?;
        let rec: RunRecord =
            serde_json::from_slice(&bytes).map_err(|source| ReportError::Parse {
                path: f.clone(),
                source,
            })?;
        let root = f
            .parent()
            .and_then(Path::parent)
            .unwrap_or(dir)
            .to_path_buf();
        groups.entry(root).or_default().push(rec);
    }
    let mut reports = Vec::new();
    for (root, mut recs) in groups {
        recs.sort_by_key(|r| r.repetition);
        if let Some(other) = recs
            .iter()
            .find(|r| r.topology_digest != recs[0].topology_digest)
        {
            return Err(ReportError::Inconsistent {
                dir: root,
                a: recs[0].topology_digest.clone(),
                b: other.topology_digest.clone(),
            });
        }
        reports.push(aggregate(&recs));
    }
    Ok(reports)
}

pub const CSV_HEADER: [&str; 7] = [
    "platform_label",
    "node_count",
    "speed",
    "compute_ns",
    "sim_drop_mean",
    "cloud_drop_mean",
    "trans_time_ms_mean",
];

pub fn render_csv(reports: &[RunReport]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_HEADER).expect("in-memory write");
    for r in reports {
        w.write_record([
            r.labels.platform_label.clone(),
            r.labels.node_count.to_string(),
            r.labels.speed.clone(),
            r.labels.compute_ns.to_string(),
            format!("{}", r.sim_drop),
            format!("{}", r.cloud_drop),
            format!("{:.3}", r.trans_time_mean_ns / 1e6),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("csv is utf-8")
}

pub fn render_json(reports: &[RunReport]) -> String {
    serde_json::to_string_pretty(reports).expect("report serializes")
}
