use std::fmt;
use std::net::Ipv4Addr;

use serde::{Deserialize, Serialize};

use super::diag::Span;
use super::units::{DurationLit, MemoryLit, SizeLit};

/// A parsed `.iotecs` document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpecAst {
    pub clouds: Vec<CloudSpec>,
    pub devices: Vec<DeviceSpec>,
    pub edge_devices: Vec<EdgeDeviceSpec>,
    pub platforms: Vec<PlatformSpec>,
    pub simulation_nodes: Vec<SimNodeSpec>,
    pub simulator: SimulatorSpec,
}

impl SpecAst {
    pub fn cloud(&self, name: &str) -> Option<&CloudSpec> {
        self.clouds.iter().find(|c| c.name == name)
    }

    pub fn device(&self, name: &str) -> Option<&DeviceSpec> {
        self.devices.iter().find(|d| d.name == name)
    }

    pub fn edge_device(&self, name: &str) -> Option<&EdgeDeviceSpec> {
        self.edge_devices.iter().find(|e| e.name == name)
    }

    pub fn platform(&self, name: &str) -> Option<&PlatformSpec> {
        self.platforms.iter().find(|p| p.name == name)
    }

    pub fn simulation_node(&self, name: &str) -> Option<&SimNodeSpec> {
        self.simulation_nodes.iter().find(|n| n.name == name)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CloudSpec {
    pub name: String,
    pub ip: Ipv4Addr,
    pub port: u16,
    #[serde(skip)]
    pub span: Span,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Payload {
    /// Literal content, sent verbatim.
    Literal(Vec<u8>),
    /// Random content of the given size.
    Size(SizeLit),
}

impl Payload {
    pub fn len(&self) -> u64 {
        match self {
            Payload::Literal(bytes) => bytes.len() as u64,
            Payload::Size(size) => size.as_bytes(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeviceSpec {
    pub name: String,
    pub period: u32,
    pub payload: Payload,
    #[serde(skip)]
    pub span: Span,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Protocol {
    #[serde(rename = "UDP")]
    Udp,
    #[serde(rename = "TCP")]
    Tcp,
    #[serde(rename = "MQTT")]
    Mqtt,
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Protocol::Udp => "UDP",
            Protocol::Tcp => "TCP",
            Protocol::Mqtt => "MQTT",
        })
    }
}

/// Packets per simulation step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Speed {
    Max,
    PerStep(u32),
}

impl fmt::Display for Speed {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Speed::Max => f.write_str("MAX"),
            Speed::PerStep(n) => write!(f, "{n}"),
        }
    }
}

/// `Name[count]` reference inside a `{...}` list.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Multiplicity {
    pub name: String,
    pub count: u32,
    #[serde(skip)]
    pub span: Span,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EdgeDeviceSpec {
    pub name: String,
    pub protocol: Protocol,
    pub speed: Speed,
    pub cloud: String,
    pub devices: Vec<Multiplicity>,
    /// `None` when the field is omitted (treated as zero).
    pub workload: Option<DurationLit>,
    #[serde(skip)]
    pub span: Span,
}

impl EdgeDeviceSpec {
    pub fn workload_ns(&self) -> u64 {
        self.workload.map(|w| w.as_nanos()).unwrap_or(0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PlatformKind {
    Native,
    #[serde(rename = "VM")]
    Vm,
    Docker,
}

impl fmt::Display for PlatformKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PlatformKind::Native => "Native",
            PlatformKind::Vm => "VM",
            PlatformKind::Docker => "Docker",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlatformSpec {
    pub name: String,
    pub kind: PlatformKind,
    pub ip: Option<Ipv4Addr>,
    pub username: Option<String>,
    pub password: Option<String>,
    pub cpu: Option<u32>,
    pub memory: Option<MemoryLit>,
    #[serde(skip)]
    pub span: Span,
}

impl PlatformSpec {
    /// Docker with resource limits.
    pub fn is_constrained(&self) -> bool {
        self.cpu.is_some() || self.memory.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimNodeSpec {
    pub name: String,
    pub platform: String,
    pub edge_devices: Vec<Multiplicity>,
    #[serde(skip)]
    pub span: Span,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimulatorSpec {
    /// Optional label after `Simulator:`.
    pub name: Option<String>,
    pub duration: DurationLit,
    pub step: DurationLit,
    pub simulation_nodes: Vec<Multiplicity>,
    #[serde(skip)]
    pub span: Span,
}
