use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::Path;
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::edge::{run_edge_device, EdgeRun};
use super::ledger::NodeLedger;
use super::transport::Link;
use super::TimeBase;
use crate::time::wall_now_ns;
use crate::topology::{NodeInstance, ResolvedTopology};

const CONNECT_TIMEOUT: Duration = Duration::from_secs(2);
const START_SLACK_NS: u64 = 50_000_000;

/// Self-contained work order for one simulation node process.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeJob {
    pub node: NodeInstance,
    pub duration_ns: u64,
    pub step_ns: u64,
    pub step_count: u64,
    /// Wall-clock instant at which step 0 begins; 0 means shortly after
    /// the node has connected.
    pub run_epoch_unix_ns: u64,
    /// Per cloud name: cloud clock minus orchestrator clock.
    #[serde(default)]
    pub clock_offsets_ns: BTreeMap<String, i64>,
    pub drain_ns: u64,
    pub seed: u64,
}

#[derive(Debug, Error)]
pub enum NodeJobError {
    #[error("reading job {path}")]
    Read {
        path: String,
        source: std::io::Error,
    },
    #[error("parsing job {path}")]
    Parse {
        path: String,
        source: serde_json::Error,
    },
    #[error("writing ledger {path}")]
    Write {
        path: String,
        source: std::io::Error,
    },
}

impl NodeJob {
    pub fn for_node(
        topo: &ResolvedTopology,
        node: &NodeInstance,
        run_epoch_unix_ns: u64,
        drain_ns: u64,
        seed: u64,
    ) -> Self {
        NodeJob {
            node: node.clone(),
            duration_ns: topo.duration_ns,
            step_ns: topo.step_ns,
            step_count: topo.step_count,
            run_epoch_unix_ns,
            clock_offsets_ns: BTreeMap::new(),
            drain_ns,
            seed,
        }
    }

    pub fn read(path: &Path) -> Result<Self, NodeJobError> {
        let display = path.display().to_string();
        let bytes = std::fs::read(path).map_err(|source| NodeJobError::Read {
            path: display.clone(),
            source,
        })?;
        serde_json::from_slice(&bytes).map_err(|source| NodeJobError::Parse {
            path: display,
            source,
        })
    }

    pub fn write(&self, path: &Path) -> std::io::Result<()> {
        let json = serde_json::to_vec_pretty(self).map_err(std::io::Error::other)?;
        std::fs::write(path, json)
    }
}

/// Sets up every edge's transport, waits for the run epoch, runs all edges
/// concurrently and merges their ledgers.
///
/// Per-edge failures end up in the ledger; nothing here is fatal.
pub fn run_simulation_node(job: &NodeJob) -> NodeLedger {
    let links: Vec<_> = job
        .node
        .edges
        .iter()
        .map(|e| {
            let peer = SocketAddr::from((e.cloud.ip, e.cloud.port));
            Link::open(e.protocol, peer, CONNECT_TIMEOUT)
        })
        .collect();

    let epoch = match job.run_epoch_unix_ns {
        0 => wall_now_ns() + START_SLACK_NS,
        t => t,
    };
    let time_base = TimeBase::at_unix(epoch);
    let receive_until =
        time_base.epoch + Duration::from_nanos(job.duration_ns.saturating_add(job.drain_ns));
    let started_unix_ns = wall_now_ns();

    let edges = thread::scope(|s| {
        let handles: Vec<_> = job
            .node
            .edges
            .iter()
            .zip(links)
            .map(|(edge, link)| {
                let run = EdgeRun {
                    node_id: job.node.node_id,
                    edge,
                    step_ns: job.step_ns,
                    step_count: job.step_count,
                    time_base,
                    clock_offset_ns: job
                        .clock_offsets_ns
                        .get(&edge.cloud.name)
                        .copied()
                        .unwrap_or(0),
                    receive_until,
                    seed: job.seed,
                };
                thread::Builder::new()
                    .name(format!("edge-{}", edge.edge_id))
                    .spawn_scoped(s, move || (edge.edge_id, run_edge_device(&run, link)))
                    .expect("spawn edge thread")
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("edge thread panicked"))
            .collect::<BTreeMap<_, _>>()
    });

    NodeLedger {
        node_id: job.node.node_id,
        edges,
        started_unix_ns,
        finished_unix_ns: wall_now_ns(),
    }
}

/// Entry point of a node process: job file in, ledger file out.
pub fn run_node_job(job_path: &Path, out_path: &Path) -> Result<NodeLedger, NodeJobError> {
    let job = NodeJob::read(job_path)?;
    let ledger = run_simulation_node(&job);
    ledger
        .write(out_path)
        .map_err(|source| NodeJobError::Write {
            path: out_path.display().to_string(),
            source,
        })?;
    Ok(ledger)
}
