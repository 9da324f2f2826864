use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

/// Per-edge counters collected by the send, receive and compute activities.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EdgeLedger {
    pub attempted_sends: u64,
    pub actual_sends: u64,
    /// Distinct echoed sequence numbers that match a packet this edge sent.
    pub responses_received: u64,
    pub duplicate_responses: u64,
    /// Responses for another edge, an unknown device, or a seq never sent.
    pub unexpected_responses: u64,
    /// Responses whose payload differs from what was sent.
    pub corrupt_responses: u64,
    pub rtt_samples_ns: Vec<u64>,
    pub step_budget_breaks: u64,
    /// Sum and count of gaps between consecutive sends within one step.
    pub send_gap_sum_ns: u64,
    pub send_gap_count: u64,
    pub max_step_lateness_ns: u64,
    pub compute_busy_ns: u64,
    pub failure: Option<String>,
}

impl EdgeLedger {
    pub fn mean_send_gap_ns(&self) -> Option<f64> {
        (self.send_gap_count > 0).then(|| self.send_gap_sum_ns as f64 / self.send_gap_count as f64)
    }
}

/// Result file of one simulation node, `node_<id>.json`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeLedger {
    pub node_id: u16,
    pub edges: BTreeMap<u16, EdgeLedger>,
    pub started_unix_ns: u64,
    pub finished_unix_ns: u64,
}

impl NodeLedger {
    pub fn attempted_sends(&self) -> u64 {
        self.edges.values().map(|e| e.attempted_sends).sum()
    }

    pub fn actual_sends(&self) -> u64 {
        self.edges.values().map(|e| e.actual_sends).sum()
    }

    pub fn responses_received(&self) -> u64 {
        self.edges.values().map(|e| e.responses_received).sum()
    }

    pub fn write(&self, path: &Path) -> std::io::Result<()> {
        let json = serde_json::to_vec_pretty(self).map_err(std::io::Error::other)?;
        std::fs::write(path, json)
    }

    pub fn read(path: &Path) -> std::io::Result<Self> {
        let bytes = std::fs::read(path)?;
        serde_json::from_slice(&bytes).map_err(std::io::Error::other)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_roundtrip_and_totals() {
        let mut l = NodeLedger {
            node_id: 3,
            ..Default::default()
        };
        for e in 0..3u16 {
            l.edges.insert(
                e,
                EdgeLedger {
                    attempted_sends: 10,
                    actual_sends: 9,
                    responses_received: 8,
                    rtt_samples_ns: vec![1, 2],
                    ..Default::default()
                },
            );
        }
        assert_eq!(
            (
                l.attempted_sends(),
                l.actual_sends(),
                l.responses_received()
            ),
            (30, 27, 24)
        );
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("node_3.json");
        l.write(&p).unwrap();
        assert_eq!(NodeLedger::read(&p).unwrap(), l);
    }
}
