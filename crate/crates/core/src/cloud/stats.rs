use std::collections::{BTreeMap, HashMap};
use std::sync::atomic::{AtomicU64, Ordering::SeqCst};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::dsl::Protocol;

/// Live counters, shared by all serving threads.
#[derive(Debug, Default)]
pub(crate) struct Stats {
    received: AtomicU64,
    processed: AtomicU64,
    responses_sent: AtomicU64,
    malformed: AtomicU64,
    stale: AtomicU64,
    send_errors: AtomicU64,
    trans_time_discarded: AtomicU64,
    reset_epoch_ns: AtomicU64,
    per_source: Mutex<HashMap<(u16, u16), u64>>,
    trans_time_ns: Mutex<Vec<u64>>,
}

/// Outcome of admitting a packet.
pub(crate) enum Admit {
    Accepted,
    Stale,
}

impl Stats {
    pub fn reset(&self, epoch_ns: u64) {
        self.reset_epoch_ns.store(epoch_ns, SeqCst);
        for c in [
            &self.received,
            &self.processed,
            &self.responses_sent,
            &self.malformed,
            &self.stale,
            &self.send_errors,
            &self.trans_time_discarded,
        ] {
            c.store(0, SeqCst);
        }
        self.per_source.lock().unwrap().clear();
        self.trans_time_ns.lock().unwrap().clear();
    }

    /// Counts a valid packet as received unless it was sent before the last
    /// reset (backlog from an earlier run).
    pub fn admit(&self, node: u16, edge: u16, send_ts_ns: u64) -> Admit {
        if send_ts_ns < self.reset_epoch_ns.load(SeqCst) {
            self.stale.fetch_add(1, SeqCst);
            return Admit::Stale;
        }
        self.received.fetch_add(1, SeqCst);
        *self
            .per_source
            .lock()
            .unwrap()
            .entry((node, edge))
            .or_default() += 1;
        Admit::Accepted
    }

    pub fn processed(&self, send_ts_ns: u64, now_ns: u64) {
        match now_ns.checked_sub(send_ts_ns) {
            Some(t) => self.trans_time_ns.lock().unwrap().push(t),
            None => {
                self.trans_time_discarded.fetch_add(1, SeqCst);
            }
        }
        self.processed.fetch_add(1, SeqCst);
    }

    pub fn sent(&self, ok: bool) {
        if ok {
            self.responses_sent.fetch_add(1, SeqCst);
        } else {
            self.send_errors.fetch_add(1, SeqCst);
        }
    }

    pub fn malformed(&self) {
        self.malformed.fetch_add(1, SeqCst);
    }

    pub fn snapshot(&self, meta: &SnapshotMeta) -> CloudStats {
        // Later stages are read first so the ordering invariant holds even
        // while packets are in flight.
        let responses_sent = self.responses_sent.load(SeqCst);
        let trans_time_ns = self.trans_time_ns.lock().unwrap().clone();
        let packets_processed = self.processed.load(SeqCst);
        let per_source = self
            .per_source
            .lock()
            .unwrap()
            .iter()
            .map(|(&(n, e), &c)| (format!("{n}/{e}"), c))
            .collect();
        let packets_received = self.received.load(SeqCst);
        CloudStats {
            packets_received,
            packets_processed,
            responses_sent,
            malformed: self.malformed.load(SeqCst),
            stale: self.stale.load(SeqCst),
            send_errors: self.send_errors.load(SeqCst),
            per_source,
            trans_time_ns,
            trans_time_discarded: self.trans_time_discarded.load(SeqCst),
            reset_epoch_ns: self.reset_epoch_ns.load(SeqCst),
            compute_ns: meta.compute_ns,
            workers: meta.workers,
            udp_recv_buf: meta.udp_recv_buf,
            protocol: meta.protocol,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct SnapshotMeta {
    pub compute_ns: u64,
    pub workers: usize,
    pub udp_recv_buf: Option<usize>,
    pub protocol: Protocol,
}

/// Reply to SNAPSHOT.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CloudStats {
    pub packets_received: u64,
    pub packets_processed: u64,
    pub responses_sent: u64,
    pub malformed: u64,
    /// Packets stamped before the last RESET; dropped without processing.
    #[serde(default)]
    pub stale: u64,
    #[serde(default)]
    pub send_errors: u64,
    /// Keyed `node/edge`.
    #[serde(default)]
    pub per_source: BTreeMap<String, u64>,
    /// Send-to-processed time per packet, on the shared clock.
    #[serde(default)]
    pub trans_time_ns: Vec<u64>,
    #[serde(default)]
    pub trans_time_discarded: u64,
    #[serde(default)]
    pub reset_epoch_ns: u64,
    #[serde(default)]
    pub compute_ns: u64,
    #[serde(default)]
    pub workers: usize,
    #[serde(default)]
    pub udp_recv_buf: Option<usize>,
    #[serde(default = "default_protocol")]
    pub protocol: Protocol,
}

fn default_protocol() -> Protocol {
    Protocol::Udp
}

#[cfg(test)]
mod tests {
    use super::*;

    fn meta() -> SnapshotMeta {
        SnapshotMeta {
            compute_ns: 0,
            workers: 1,
            udp_recv_buf: None,
            protocol: Protocol::Udp,
        }
    }

    #[test]
    fn stale_packets_are_filtered_after_reset() {
        let s = Stats::default();
        s.reset(1_000);
        assert!(matches!(s.admit(0, 1, 999), Admit::Stale));
        assert!(matches!(s.admit(0, 1, 1_000), Admit::Accepted));
        s.processed(1_000, 1_500);
        s.processed(2_000, 1_500);
        s.sent(true);
        let snap = s.snapshot(&meta());
        assert_eq!(
            (
                snap.packets_received,
                snap.packets_processed,
                snap.responses_sent
            ),
            (1, 2, 1)
        );
        assert_eq!(snap.stale, 1);
        assert_eq!(snap.trans_time_ns, vec![500]);
        assert_eq!(snap.trans_time_discarded, 1);
        assert_eq!(snap.per_source["0/1"], 1);
        s.reset(5_000);
        let snap = s.snapshot(&meta());
        assert_eq!(
            snap.packets_received + snap.stale + snap.per_source.len() as u64,
            0
        );
    }

    #[test]
    fn snapshot_uses_wire_field_names() {
        let v = serde_json::to_value(Stats::default().snapshot(&meta())).unwrap();
        for k in [
            "packets_received",
            "packets_processed",
            "responses_sent",
            "malformed",
        ] {
            assert!(v.get(k).is_some(), "{k}");
        }
    }
}
