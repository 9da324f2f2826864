//! Expansion of a parsed document into numbered instances, static
//! checks that need the whole tree, and the expected-sends oracle.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::dsl::{
    CloudSpec, DiagCode, Diagnostic, Multiplicity, Payload, PlatformKind, PlatformSpec, Protocol,
    Span, SpecAst, Speed,
};
use crate::par::Exec;
use crate::wire::{HEADER_LEN, MAX_PAYLOAD_LEN, MAX_UDP_DATAGRAM};

/// Instances per tier (nodes, edges, devices); IDs are 16-bit.
pub const MAX_INSTANCES_PER_TIER: u64 = 1 << 16;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResolvedTopology {
    pub duration_ns: u64,
    pub step_ns: u64,
    /// `floor(duration / step)`; steps are `0..step_count`.
    pub step_count: u64,
    pub nodes: Vec<NodeInstance>,
    pub clouds: Vec<CloudSpec>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeInstance {
    pub node_id: u16,
    pub type_name: String,
    pub platform: PlatformSpec,
    pub edges: Vec<EdgeInstance>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EdgeInstance {
    pub edge_id: u16,
    pub type_name: String,
    pub protocol: Protocol,
    pub speed: Speed,
    pub workload_ns: u64,
    pub cloud: CloudSpec,
    pub devices: Vec<DeviceInstance>,
    #[serde(skip)]
    pub span: Span,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeviceInstance {
    pub device_id: u16,
    pub type_name: String,
    pub period_steps: u32,
    pub payload: Payload,
}

/// Edge key used by the oracle and the ledgers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct EdgeKey {
    pub node_id: u16,
    pub edge_id: u16,
}

impl std::fmt::Display for EdgeKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}/{}", self.node_id, self.edge_id)
    }
}

impl std::str::FromStr for EdgeKey {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (n, e) = s
            .split_once('/')
            .ok_or_else(|| format!("bad edge key `{s}`"))?;
        Ok(EdgeKey {
            node_id: n.parse().map_err(|_| format!("bad node id in `{s}`"))?,
            edge_id: e.parse().map_err(|_| format!("bad edge id in `{s}`"))?,
        })
    }
}

impl ResolvedTopology {
    pub fn edges(&self) -> impl Iterator<Item = (&NodeInstance, &EdgeInstance)> {
        self.nodes
            .iter()
            .flat_map(|n| n.edges.iter().map(move |e| (n, e)))
    }

    pub fn edge_count(&self) -> usize {
        self.nodes.iter().map(|n| n.edges.len()).sum()
    }

    pub fn device_count(&self) -> usize {
        self.edges().map(|(_, e)| e.devices.len()).sum()
    }

    /// SHA-256 over the canonical JSON form.
    pub fn digest(&self) -> String {
        let json = serde_json::to_vec(self).expect("topology serializes");
        hex::encode(Sha256::digest(&json))
    }
}

/// Expands every `Name[k]` reference into `k` numbered instances.
///
/// IDs are dense per tier and assigned in document order, starting at 0.
pub fn resolve(ast: &SpecAst) -> Result<ResolvedTopology, Vec<Diagnostic>> {
    let mut diags = Vec::new();
    let sim = &ast.simulator;

    let duration_ns = sim.duration.as_nanos();
    let step_ns = sim.step.as_nanos();
    if step_ns > duration_ns {
        diags.push(Diagnostic::error(
            sim.span,
            DiagCode::StepExceedsDuration,
            format!(
                "step ({}) is longer than duration ({})",
                sim.step, sim.duration
            ),
        ));
    }

    for p in &ast.platforms {
        check_platform(p, &mut diags);
    }
    for d in &ast.devices {
        if d.payload.len() > MAX_PAYLOAD_LEN as u64 {
            diags.push(Diagnostic::error(
                d.span,
                DiagCode::PayloadTooLarge,
                format!(
                    "payload of device `{}` is {} bytes; the packet format allows at most {}",
                    d.name,
                    d.payload.len(),
                    MAX_PAYLOAD_LEN
                ),
            ));
        }
    }
    for e in &ast.edge_devices {
        if ast.cloud(&e.cloud).is_none() {
            diags.push(dangling(e.span, "Cloud", &e.cloud));
        }
        for m in &e.devices {
            if ast.device(&m.name).is_none() {
                diags.push(dangling(m.span, "Device", &m.name));
            }
        }
        if e.devices.is_empty() {
            diags.push(Diagnostic::error(
                e.span,
                DiagCode::InvalidValue,
                format!("edge device `{}` has no devices", e.name),
            ));
        }
    }
    for n in &ast.simulation_nodes {
        if ast.platform(&n.platform).is_none() {
            diags.push(dangling(n.span, "Platform", &n.platform));
        }
        for m in &n.edge_devices {
            if ast.edge_device(&m.name).is_none() {
                diags.push(dangling(m.span, "EdgeDevice", &m.name));
            }
        }
        if n.edge_devices.is_empty() {
            diags.push(Diagnostic::error(
                n.span,
                DiagCode::InvalidValue,
                format!("simulation node `{}` has no edge devices", n.name),
            ));
        }
    }
    for m in &sim.simulation_nodes {
        if ast.simulation_node(&m.name).is_none() {
            diags.push(dangling(m.span, "SimulationNode", &m.name));
        }
    }
    if sim.simulation_nodes.is_empty() {
        diags.push(Diagnostic::error(
            sim.span,
            DiagCode::InvalidValue,
            "simulator declares no simulation nodes",
        ));
    }
    if !diags.is_empty() {
        return Err(diags);
    }

    // Tier sizes before expanding anything.
    let edges_per_node: HashMap<&str, (u64, u64)> = ast
        .simulation_nodes
        .iter()
        .map(|n| {
            let (mut edges, mut devices) = (0u64, 0u64);
            for m in &n.edge_devices {
                let e = ast.edge_device(&m.name).expect("checked");
                let per_edge: u64 = e.devices.iter().map(|d| d.count as u64).sum();
                edges += m.count as u64;
                devices = devices.saturating_add((m.count as u64).saturating_mul(per_edge));
            }
            (n.name.as_str(), (edges, devices))
        })
        .collect();
    let mut totals = [0u64; 3];
    for m in &sim.simulation_nodes {
        let (e, d) = edges_per_node[m.name.as_str()];
        totals[0] += m.count as u64;
        totals[1] = totals[1].saturating_add((m.count as u64).saturating_mul(e));
        totals[2] = totals[2].saturating_add((m.count as u64).saturating_mul(d));
    }
    for (total, tier) in totals
        .iter()
        .zip(["simulation node", "edge device", "IoT device"])
    {
        if *total > MAX_INSTANCES_PER_TIER {
            diags.push(Diagnostic::error(
                sim.span,
                DiagCode::TooManyInstances,
                format!("{total} {tier} instances exceed the limit of {MAX_INSTANCES_PER_TIER}"),
            ));
        }
    }
    if !diags.is_empty() {
        return Err(diags);
    }

    let mut nodes = Vec::with_capacity(totals[0] as usize);
    let (mut edge_id, mut device_id) = (0u32, 0u32);
    for m in &sim.simulation_nodes {
        let node_spec = ast.simulation_node(&m.name).expect("checked");
        let platform = ast.platform(&node_spec.platform).expect("checked");
        for _ in 0..m.count {
            let node_id = nodes.len() as u16;
            let mut edges = Vec::new();
            for em in &node_spec.edge_devices {
                let edge_spec = ast.edge_device(&em.name).expect("checked");
                let cloud = ast.cloud(&edge_spec.cloud).expect("checked");
                for _ in 0..em.count {
                    let mut devices = Vec::new();
                    for dm in &edge_spec.devices {
                        let dev = ast.device(&dm.name).expect("checked");
                        for _ in 0..dm.count {
                            devices.push(DeviceInstance {
                                device_id: device_id as u16,
                                type_name: dev.name.clone(),
                                period_steps: dev.period,
                                payload: dev.payload.clone(),
                            });
                            device_id += 1;
                        }
                    }
                    edges.push(EdgeInstance {
                        edge_id: edge_id as u16,
                        type_name: edge_spec.name.clone(),
                        protocol: edge_spec.protocol,
                        speed: edge_spec.speed,
                        workload_ns: edge_spec.workload_ns(),
                        cloud: cloud.clone(),
                        devices,
                        span: edge_spec.span,
                    });
                    edge_id += 1;
                }
            }
            nodes.push(NodeInstance {
                node_id,
                type_name: node_spec.name.clone(),
                platform: platform.clone(),
                edges,
            });
        }
    }

    Ok(ResolvedTopology {
        duration_ns,
        step_ns,
        step_count: duration_ns / step_ns,
        nodes,
        clouds: ast.clouds.clone(),
    })
}

fn dangling(span: Span, kind: &str, name: &str) -> Diagnostic {
    Diagnostic::error(
        span,
        DiagCode::DanglingReference,
        format!("reference to undefined {kind} `{name}`"),
    )
}

fn check_platform(p: &PlatformSpec, diags: &mut Vec<Diagnostic>) {
    let mut err = |msg: String| {
        diags.push(Diagnostic::error(p.span, DiagCode::PlatformConstraint, msg));
    };
    match p.kind {
        PlatformKind::Vm if p.cpu.is_none() || p.memory.is_none() => err(format!(
            "VM platform `{}` needs both CPU and memory",
            p.name
        )),
        PlatformKind::Docker if p.cpu.is_some() != p.memory.is_some() => err(format!(
            "constrained Docker platform `{}` needs both CPU and memory",
            p.name
        )),
        _ => {}
    }
    if p.ip.is_some() && (p.username.is_none() || p.password.is_none()) {
        err(format!(
            "remote platform `{}` (IP given) needs username and password",
            p.name
        ));
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StepError {
    #[error("at least one interval is required")]
    Empty,
    #[error("intervals must be positive")]
    Zero,
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Greatest common divisor of device intervals, in nanoseconds: the
/// largest step at which every device fires on a step boundary.
pub fn recommend_step(intervals_ns: &[u64]) -> Result<u64, StepError> {
    if intervals_ns.is_empty() {
        return Err(StepError::Empty);
    }
    if intervals_ns.contains(&0) {
        return Err(StepError::Zero);
    }
    Ok(intervals_ns.iter().copied().fold(0, gcd))
}

/// Largest number of packets an edge has due in any single step.
///
/// Step 0 is due for every period, so this is simply the device count.
pub fn worst_step_demand(edge: &EdgeInstance) -> u64 {
    edge.devices.len() as u64
}

/// Static checks on a resolved topology. Diagnostics are the output.
pub fn validate(topo: &ResolvedTopology) -> Vec<Diagnostic> {
    let mut diags = Vec::new();
    let mut seen_types = std::collections::HashSet::new();
    for (_, edge) in topo.edges() {
        if !seen_types.insert(edge.type_name.as_str()) {
            continue;
        }
        if let Speed::PerStep(speed) = edge.speed {
            let demand = worst_step_demand(edge);
            if demand > speed as u64 {
                diags.push(Diagnostic::warning(
                    edge.span,
                    DiagCode::SpeedInfeasible,
                    format!(
                        "speed below worst-case per-step demand: edge device `{}` has {demand} \
                         packets due in one step but speed {speed} allows only {speed}; expect SimDrop",
                        edge.type_name
                    ),
                ));
            }
        }
        if edge.protocol == Protocol::Mqtt {
            diags.push(Diagnostic::error(
                edge.span,
                DiagCode::UnsupportedProtocol,
                format!(
                    "MQTT not supported by runtime (edge device `{}`)",
                    edge.type_name
                ),
            ));
        }
        if edge.protocol == Protocol::Udp {
            let max = (MAX_UDP_DATAGRAM - HEADER_LEN) as u64;
            if let Some(d) = edge.devices.iter().find(|d| d.payload.len() > max) {
                diags.push(Diagnostic::error(
                    edge.span,
                    DiagCode::PayloadTooLarge,
                    format!(
                        "device `{}` payload of {} bytes does not fit a UDP datagram (max {max})",
                        d.type_name,
                        d.payload.len()
                    ),
                ));
            }
        }
    }

    let mut endpoints: HashMap<(std::net::Ipv4Addr, u16), &CloudSpec> = HashMap::new();
    for c in &topo.clouds {
        if let Some(prev) = endpoints.insert((c.ip, c.port), c) {
            diags.push(Diagnostic::error(
                c.span,
                DiagCode::PortCollision,
                format!(
                    "clouds `{}` and `{}` both use {}:{}",
                    prev.name, c.name, c.ip, c.port
                ),
            ));
        }
    }
    diags
}

/// Sends due for a device over `step_count` steps: `ceil(step_count / period)`.
pub fn device_expected_sends(step_count: u64, period: u32) -> u64 {
    step_count.div_ceil(period as u64)
}

pub fn edge_expected_sends(step_count: u64, edge: &EdgeInstance) -> u64 {
    edge.devices
        .iter()
        .map(|d| device_expected_sends(step_count, d.period_steps))
        .sum()
}

/// Packets every edge is scheduled to send in a run.
pub fn expected_sends(topo: &ResolvedTopology) -> BTreeMap<EdgeKey, u64> {
    expected_sends_with(topo, Exec::default())
}

pub fn expected_sends_with(topo: &ResolvedTopology, exec: Exec) -> BTreeMap<EdgeKey, u64> {
    let edges: Vec<(EdgeKey, &EdgeInstance)> = topo
        .edges()
        .map(|(n, e)| {
            (
                EdgeKey {
                    node_id: n.node_id,
                    edge_id: e.edge_id,
                },
                e,
            )
        })
        .collect();
    exec.map(&edges, |(k, e)| {
        (*k, edge_expected_sends(topo.step_count, e))
    })
    .into_iter()
    .collect()
}

/// JSON object keyed by `"node/edge"`.
pub fn expected_sends_json(expected: &BTreeMap<EdgeKey, u64>) -> serde_json::Value {
    let map: serde_json::Map<String, serde_json::Value> = expected
        .iter()
        .map(|(k, v)| (k.to_string(), serde_json::Value::from(*v)))
        .collect();
    serde_json::Value::Object(map)
}

/// Total instance count of a multiplicity list.
pub fn multiplicity_total(items: &[Multiplicity]) -> u64 {
    items.iter().map(|m| m.count as u64).sum()
}
