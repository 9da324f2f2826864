use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::dsl::PlatformKind;
use crate::runtime::NodeJob;
use crate::topology::ResolvedTopology;

pub const DEFAULT_IMAGE: &str = "iotecs:latest";

#[derive(Debug, Serialize)]
struct DockerDescriptor<'a> {
    image: &'a str,
    cpus: Option<u32>,
    memory: Option<String>,
    args: Vec<String>,
}

#[derive(Debug, Serialize)]
struct VmDescriptor<'a> {
    platform: &'a str,
    cpus: Option<u32>,
    memory: Option<String>,
    ip: Option<String>,
    username: Option<&'a str>,
    password: Option<&'a str>,
    args: Vec<String>,
}

/// Writes one job file per node plus a platform-specific launcher:
/// `node_<id>.docker.json`, `node_<id>.vm.json` or `node_<id>.sh`.
///
/// Job files carry epoch 0, so each node starts as soon as it has
/// connected; nothing is executed here.
pub fn emit_deploy_descriptors(
    topo: &ResolvedTopology,
    out_dir: &Path,
    seed: u64,
) -> std::io::Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir)?;
    let mut written = Vec::new();
    for node in &topo.nodes {
        let id = node.node_id;
        let job_name = format!("node_{id}.job.json");
        let job = NodeJob::for_node(topo, node, 0, topo.step_ns.saturating_mul(2), seed);
        let job_path = out_dir.join(&job_name);
        job.write(&job_path)?;
        written.push(job_path);

        let args = vec![
            "iotecs".to_string(),
            "node".into(),
            "--job".into(),
            job_name,
            "--out".into(),
            format!("node_{id}.json"),
        ];
        let p = &node.platform;
        let memory = p.memory.map(|m| m.to_string());
        let (path, body) = match p.kind {
            PlatformKind::Docker => (
                out_dir.join(format!("node_{id}.docker.json")),
                serde_json::to_string_pretty(&DockerDescriptor {
                    image: DEFAULT_IMAGE,
                    cpus: p.cpu,
                    memory,
                    args,
                })
                .expect("descriptor serializes"),
            ),
            PlatformKind::Vm => (
                out_dir.join(format!("node_{id}.vm.json")),
                serde_json::to_string_pretty(&VmDescriptor {
                    platform: &p.name,
                    cpus: p.cpu,
                    memory,
                    ip: p.ip.map(|ip| ip.to_string()),
                    username: p.username.as_deref(),
                    password: p.password.as_deref(),
                    args,
                })
                .expect("descriptor serializes"),
            ),
            PlatformKind::Native => (
                out_dir.join(format!("node_{id}.sh")),
                format!("#!/bin/sh\nexec {}\n", args.join(" ")),
            ),
        };
        std::fs::write(&path, body)?;
        written.push(path);
    }
    Ok(written)
}
