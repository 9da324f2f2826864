use std::collections::{BTreeMap, BTreeSet};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::metrics::{compute_metrics, RepMetrics, RunLedger};
use super::report::{aggregate, RunReport};
use crate::cloud::{CloudStats, ControlClient, ControlError};
use crate::dsl::{CloudSpec, Speed};
use crate::runtime::{run_node_job, NodeJob, NodeLedger};
use crate::time::wall_now_ns;
use crate::topology::{expected_sends, ResolvedTopology};

/// How node instances are started.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Launcher {
    /// One OS process per node: `program args.. --job <file> --out <file>`.
    Process { program: PathBuf, args: Vec<String> },
    /// Threads in the current process; for tests.
    InProcess,
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub repetitions: u32,
    /// Receive window after the last step; `None` means two steps.
    pub drain_ns: Option<u64>,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub launcher: Launcher,
    /// Control endpoints by cloud name; default is the cloud's IP and data
    /// port + 1.
    pub control_addrs: BTreeMap<String, SocketAddr>,
    /// Lead time between writing jobs and step 0.
    pub start_delay: Duration,
    /// How long past the drain window nodes may run before being killed.
    pub grace: Duration,
}

impl RunOptions {
    pub fn new(out_dir: impl Into<PathBuf>, launcher: Launcher) -> Self {
        RunOptions {
            repetitions: 1,
            drain_ns: None,
            seed: 0,
            out_dir: out_dir.into(),
            launcher,
            control_addrs: BTreeMap::new(),
            start_delay: Duration::from_millis(500),
            grace: Duration::from_secs(2),
        }
    }
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error("cloud `{cloud}`")]
    ControlUnreachable {
        cloud: String,
        #[source]
        source: ControlError,
    },
    #[error("{context}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

fn io_err(context: impl Into<String>) -> impl FnOnce(std::io::Error) -> RunError {
    let context = context.into();
    move |source| RunError::Io { context, source }
}

/// Descriptive fields for report rows.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunLabels {
    pub platform_label: String,
    pub node_count: usize,
    pub speed: String,
    pub protocol: String,
    pub compute_ns: u64,
}

impl RunLabels {
    pub fn of(topo: &ResolvedTopology) -> Self {
        let join = |set: BTreeSet<String>| set.into_iter().collect::<Vec<_>>().join("+");
        RunLabels {
            platform_label: join(
                topo.nodes
                    .iter()
                    .map(|n| n.platform.kind.to_string())
                    .collect(),
            ),
            node_count: topo.nodes.len(),
            speed: join(
                topo.edges()
                    .map(|(_, e)| match e.speed {
                        Speed::Max => "MAX".to_string(),
                        Speed::PerStep(n) => n.to_string(),
                    })
                    .collect(),
            ),
            protocol: join(topo.edges().map(|(_, e)| e.protocol.to_string()).collect()),
            compute_ns: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RepStatus {
    Ok,
    Failed,
}

/// Contents of `rep_<k>/run.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub topology_digest: String,
    pub repetition: u32,
    pub status: RepStatus,
    pub attempts: u32,
    pub failure: Option<String>,
    pub run_epoch_unix_ns: u64,
    pub clock_offsets_ns: BTreeMap<String, i64>,
    pub wall_duration_ns: u64,
    /// Oracle counts keyed `node/edge`.
    pub expected: BTreeMap<String, u64>,
    pub labels: RunLabels,
    pub cloud_before: BTreeMap<String, CloudStats>,
    pub cloud_after: BTreeMap<String, CloudStats>,
    pub metrics: Option<RepMetrics>,
}

/// Clouds that at least one edge talks to.
fn used_clouds(topo: &ResolvedTopology) -> Vec<CloudSpec> {
    let mut seen = BTreeMap::new();
    for (_, e) in topo.edges() {
        seen.entry(e.cloud.name.clone())
            .or_insert_with(|| e.cloud.clone());
    }
    seen.into_values().collect()
}

fn control_addr(opts: &RunOptions, cloud: &CloudSpec) -> SocketAddr {
    opts.control_addrs
        .get(&cloud.name)
        .copied()
        .unwrap_or_else(|| SocketAddr::from((cloud.ip, cloud.port.wrapping_add(1))))
}

pub fn rep_dir(out: &Path, rep: u32) -> PathBuf {
    out.join(format!("rep_{rep}"))
}

/// Removes a repetition's scratch files; returns how many entries were
/// removed, so a second pass returns 0.
pub fn cleanup(rep_dir: &Path) -> std::io::Result<usize> {
    let jobs = rep_dir.join("jobs");
    if !jobs.exists() {
        return Ok(0);
    }
    let n = std::fs::read_dir(&jobs)?.count() + 1;
    std::fs::remove_dir_all(&jobs)?;
    Ok(n)
}

enum AttemptError {
    /// The control channel could not be reached before anything ran.
    Control { cloud: String, source: ControlError },
    /// Anything that went wrong once nodes were started.
    Node(String),
}

struct Attempt {
    ledger: RunLedger,
    epoch: u64,
}

/// Runs every repetition and aggregates the successful ones.
///
/// A repetition whose node crashes or overruns is retried once and then
/// recorded as failed. An unreachable control channel on the very first
/// attempt aborts the whole run.
pub fn run_simulation(topo: &ResolvedTopology, opts: &RunOptions) -> Result<RunReport, RunError> {
    std::fs::create_dir_all(&opts.out_dir)
        .map_err(io_err(format!("creating {}", opts.out_dir.display())))?;
    let clouds = used_clouds(topo);
    let expected = expected_sends(topo);
    let expected_json: BTreeMap<String, u64> =
        expected.iter().map(|(k, v)| (k.to_string(), *v)).collect();
    let digest = topo.digest();
    let drain_ns = opts.drain_ns.unwrap_or(topo.step_ns.saturating_mul(2));
    let mut records = Vec::new();

    for rep in 0..opts.repetitions {
        let dir = rep_dir(&opts.out_dir, rep);
        let mut attempts = 0;
        let mut last_failure = None;
        let mut outcome = None;
        while attempts < 2 && outcome.is_none() {
            attempts += 1;
            if dir.exists() {
                std::fs::remove_dir_all(&dir)
                    .map_err(io_err(format!("clearing {}", dir.display())))?;
            }
            std::fs::create_dir_all(dir.join("jobs"))
                .map_err(io_err(format!("creating {}", dir.display())))?;
            let seed = opts.seed.wrapping_add(rep as u64);
            match run_attempt(topo, opts, &clouds, &dir, drain_ns, seed, &digest) {
                Ok(a) => outcome = Some(a),
                Err(AttemptError::Control { cloud, source })
                    if records.is_empty() && attempts == 1 =>
                {
                    return Err(RunError::ControlUnreachable { cloud, source });
                }
                Err(AttemptError::Control { cloud, source }) => {
                    last_failure = Some(format!("cloud `{cloud}`: {}", chain(&source)));
                }
                Err(AttemptError::Node(msg)) => last_failure = Some(msg),
            }
            cleanup(&dir).map_err(io_err("cleaning scratch"))?;
        }

        let mut labels = RunLabels::of(topo);
        let record = match outcome {
            Some(a) => {
                let metrics = compute_metrics(&a.ledger, &expected);
                labels.compute_ns = a
                    .ledger
                    .cloud_after
                    .values()
                    .map(|c| c.compute_ns)
                    .max()
                    .unwrap_or(0);
                RunRecord {
                    topology_digest: digest.clone(),
                    repetition: rep,
                    status: RepStatus::Ok,
                    attempts,
                    failure: None,
                    run_epoch_unix_ns: a.epoch,
                    clock_offsets_ns: a.ledger.clock_offsets_ns.clone(),
                    wall_duration_ns: a.ledger.wall_duration_ns,
                    expected: expected_json.clone(),
                    labels,
                    cloud_before: a.ledger.cloud_before,
                    cloud_after: a.ledger.cloud_after,
                    metrics: Some(metrics),
                }
            }
            None => RunRecord {
                topology_digest: digest.clone(),
                repetition: rep,
                status: RepStatus::Failed,
                attempts,
                failure: last_failure,
                run_epoch_unix_ns: 0,
                clock_offsets_ns: BTreeMap::new(),
                wall_duration_ns: 0,
                expected: expected_json.clone(),
                labels,
                cloud_before: BTreeMap::new(),
                cloud_after: BTreeMap::new(),
                metrics: None,
            },
        };
        let json = serde_json::to_vec_pretty(&record).expect("record serializes");
        std::fs::write(dir.join("run.json"), json).map_err(io_err("writing run.json"))?;
        records.push(record);
    }
    Ok(aggregate(&records))
}

fn run_attempt(
    topo: &ResolvedTopology,
    opts: &RunOptions,
    clouds: &[CloudSpec],
    dir: &Path,
    drain_ns: u64,
    seed: u64,
    digest: &str,
) -> Result<Attempt, AttemptError> {
    let control = |cloud: &CloudSpec| {
        ControlClient::connect(control_addr(opts, cloud)).map_err(|source| AttemptError::Control {
            cloud: cloud.name.clone(),
            source,
        })
    };
    let ctl_err = |cloud: &CloudSpec| {
        let name = cloud.name.clone();
        move |source| AttemptError::Control {
            cloud: name,
            source,
        }
    };

    let mut offsets = BTreeMap::new();
    let mut before = BTreeMap::new();
    for cloud in clouds {
        let mut c = control(cloud)?;
        let t0 = wall_now_ns();
        let remote = c.reset().map_err(ctl_err(cloud))?;
        let t1 = wall_now_ns();
        let half = (t1 - t0) / 2;
        let offset = remote as i64 - (t0 + half) as i64;
        // An offset inside the round-trip uncertainty is indistinguishable
        // from aligned clocks; keeping the noise would skew one-way times.
        let offset = if offset.unsigned_abs() <= half {
            0
        } else {
            offset
        };
        offsets.insert(cloud.name.clone(), offset);
        before.insert(cloud.name.clone(), c.snapshot().map_err(ctl_err(cloud))?);
    }

    let epoch = wall_now_ns() + opts.start_delay.as_nanos() as u64;
    let mut jobs = Vec::new();
    for node in &topo.nodes {
        let mut job = NodeJob::for_node(topo, node, epoch, drain_ns, seed);
        job.clock_offsets_ns = offsets.clone();
        let job_path = dir
            .join("jobs")
            .join(format!("node_{}.job.json", node.node_id));
        job.write(&job_path).map_err(|e| {
            AttemptError::Node(format!("writing {}: {}", job_path.display(), chain(&e)))
        })?;
        jobs.push((
            node.node_id,
            job_path,
            dir.join(format!("node_{}.json", node.node_id)),
        ));
    }

    let started = Instant::now();
    let run_end = Duration::from_nanos(epoch.saturating_sub(wall_now_ns()))
        + Duration::from_nanos(topo.duration_ns + drain_ns);
    let deadline = started + run_end + opts.grace;
    let failures = match &opts.launcher {
        Launcher::Process { program, args } => run_processes(program, args, &jobs, deadline),
        Launcher::InProcess => run_threads(&jobs),
    };
    let wall_duration_ns = started.elapsed().as_nanos() as u64;
    if !failures.is_empty() {
        return Err(AttemptError::Node(failures.join("; ")));
    }

    let mut per_node = Vec::new();
    for (id, _, out) in &jobs {
        let l = NodeLedger::read(out).map_err(|e| {
            AttemptError::Node(format!("node {id} left no readable ledger: {}", chain(&e)))
        })?;
        per_node.push(l);
    }
    let mut after = BTreeMap::new();
    for cloud in clouds {
        let snap = ControlClient::connect(control_addr(opts, cloud))
            .and_then(|mut c| c.snapshot())
            .map_err(|e| {
                AttemptError::Node(format!("cloud `{}` after run: {}", cloud.name, chain(&e)))
            })?;
        after.insert(cloud.name.clone(), snap);
    }
    let cloud_json = serde_json::to_vec_pretty(&after).expect("stats serialize");
    std::fs::write(dir.join("cloud.json"), cloud_json)
        .map_err(|e| AttemptError::Node(format!("writing cloud.json: {e}")))?;

    Ok(Attempt {
        ledger: RunLedger {
            topology_digest: digest.to_string(),
            per_node,
            cloud_before: before,
            cloud_after: after,
            clock_offsets_ns: offsets,
            wall_duration_ns,
        },
        epoch,
    })
}

/// Error message followed by its sources, `: `-separated.
fn chain(e: &dyn std::error::Error) -> String {
    let mut out = e.to_string();
    let mut cur = e.source();
    while let Some(s) = cur {
        out.push_str(": ");
        out.push_str(&s.to_string());
        cur = s.source();
    }
    out
}

fn run_processes(
    program: &Path,
    args: &[String],
    jobs: &[(u16, PathBuf, PathBuf)],
    deadline: Instant,
) -> Vec<String> {
    let mut failures = Vec::new();
    let mut children: Vec<(u16, Child)> = Vec::new();
    for (id, job, out) in jobs {
        let spawned = Command::new(program)
            .args(args)
            .arg("--job")
            .arg(job)
            .arg("--out")
            .arg(out)
            .stdin(Stdio::null())
            .stdout(Stdio::null())
            .spawn();
        match spawned {
            Ok(c) => children.push((*id, c)),
            Err(e) => failures.push(format!(
                "node {id}: cannot start {}: {e}",
                program.display()
            )),
        }
    }
    while !children.is_empty() {
        let now = Instant::now();
        let mut still = Vec::new();
        for (id, mut child) in children {
            match child.try_wait() {
                Ok(Some(status)) if status.success() => {}
                Ok(Some(status)) => failures.push(format!("node {id} exited with {status}")),
                Ok(None) if now >= deadline => {
                    let _ = child.kill();
                    let _ = child.wait();
                    failures.push(format!("node {id} still running at deadline; terminated"));
                }
                Ok(None) => still.push((id, child)),
                Err(e) => failures.push(format!("node {id}: {e}")),
            }
        }
        children = still;
        if !children.is_empty() {
            thread::sleep(Duration::from_millis(20));
        }
    }
    failures
}

fn run_threads(jobs: &[(u16, PathBuf, PathBuf)]) -> Vec<String> {
    thread::scope(|s| {
        let handles: Vec<_> = jobs
            .iter()
            .map(|(id, job, out)| (id, s.spawn(move || run_node_job(job, out))))
            .collect();
        handles
            .into_iter()
            .filter_map(|(id, h)| match h.join() {
                Ok(Ok(_)) => None,
                Ok(Err(e)) => Some(format!("node {id}: {}", chain(&e))),
                Err(_) => Some(format!("node {id} panicked")),
            })
            .collect()
    })
}
