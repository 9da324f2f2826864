use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::cloud::CloudStats;
use crate::par::Exec;
use crate::runtime::NodeLedger;
use crate::topology::EdgeKey;

/// Everything collected in one repetition.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunLedger {
    pub topology_digest: String,
    pub per_node: Vec<NodeLedger>,
    /// Keyed by cloud name.
    pub cloud_before: BTreeMap<String, CloudStats>,
    pub cloud_after: BTreeMap<String, CloudStats>,
    pub clock_offsets_ns: BTreeMap<String, i64>,
    pub wall_duration_ns: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransTimeMode {
    /// Send timestamp to cloud processing completion, on aligned clocks.
    OneWay,
    /// Half the round trip measured at the edge.
    RttHalf,
    NoSamples,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencySummary {
    pub mode: TransTimeMode,
    pub samples: u64,
    pub discarded: u64,
    pub mean_ns: f64,
    pub p50_ns: u64,
    pub p95_ns: u64,
    pub p99_ns: u64,
}

/// Drop and latency figures of one repetition.
///
/// Counts are signed so that a broken invariant shows up as a negative
/// number instead of wrapping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepMetrics {
    pub expected: u64,
    pub attempted: u64,
    pub actual: u64,
    pub cloud_received: u64,
    pub cloud_responses_sent: u64,
    pub responses: u64,
    pub sim_drop: i64,
    pub cloud_drop_in: i64,
    pub cloud_drop_out: i64,
    pub in_flight_discarded: i64,
    pub cloud_drop: i64,
    pub step_budget_breaks: u64,
    pub trans_time: LatencySummary,
    pub edge_failures: Vec<String>,
}

impl RepMetrics {
    /// `expected = actual + simDrop`.
    pub fn sim_identity_holds(&self) -> bool {
        self.expected as i64 == self.actual as i64 + self.sim_drop
    }

    /// `actual = responses + cloudDropIn + cloudDropOut + inFlightDiscarded`.
    pub fn cloud_identity_holds(&self) -> bool {
        self.actual as i64
            == self.responses as i64
                + self.cloud_drop_in
                + self.cloud_drop_out
                + self.in_flight_discarded
    }
}

/// Nearest-rank percentile of sorted data; `p` in (0, 100].
pub fn percentile(sorted: &[u64], p: f64) -> u64 {
    if sorted.is_empty() {
        return 0;
    }
    let rank = (p * sorted.len() as f64 / 100.0).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

pub fn summarize(
    mut samples: Vec<u64>,
    mode: TransTimeMode,
    discarded: u64,
    exec: Exec,
) -> LatencySummary {
    if samples.is_empty() {
        return LatencySummary {
            mode: TransTimeMode::NoSamples,
            samples: 0,
            discarded,
            mean_ns: 0.0,
            p50_ns: 0,
            p95_ns: 0,
            p99_ns: 0,
        };
    }
    exec.sort(&mut samples);
    let mean = samples.iter().map(|&x| x as f64).sum::<f64>() / samples.len() as f64;
    LatencySummary {
        mode,
        samples: samples.len() as u64,
        discarded,
        mean_ns: mean,
        p50_ns: percentile(&samples, 50.0),
        p95_ns: percentile(&samples, 95.0),
        p99_ns: percentile(&samples, 99.0),
    }
}

/// One-way samples from the clouds when available, else RTT/2 from edges.
pub fn trans_time_samples(ledger: &RunLedger) -> (Vec<u64>, TransTimeMode, u64) {
    let one_way: Vec<u64> = ledger
        .cloud_after
        .values()
        .flat_map(|c| c.trans_time_ns.iter().copied())
        .collect();
    let discarded = ledger
        .cloud_after
        .values()
        .map(|c| c.trans_time_discarded)
        .sum();
    if !one_way.is_empty() {
        return (one_way, TransTimeMode::OneWay, discarded);
    }
    let rtt: Vec<u64> = ledger
        .per_node
        .iter()
        .flat_map(|n| n.edges.values())
        .flat_map(|e| e.rtt_samples_ns.iter().map(|r| r / 2))
        .collect();
    (rtt, TransTimeMode::RttHalf, discarded)
}

pub fn compute_metrics(ledger: &RunLedger, expected: &BTreeMap<EdgeKey, u64>) -> RepMetrics {
    compute_metrics_with(ledger, expected, Exec::default())
}

pub fn compute_metrics_with(
    ledger: &RunLedger,
    expected: &BTreeMap<EdgeKey, u64>,
    exec: Exec,
) -> RepMetrics {
    let edges = || ledger.per_node.iter().flat_map(|n| n.edges.values());
    let expected_total: u64 = expected.values().sum();
    let attempted: u64 = edges().map(|e| e.attempted_sends).sum();
    let actual: u64 = edges().map(|e| e.actual_sends).sum();
    let responses: u64 = edges().map(|e| e.responses_received).sum();
    let received: u64 = ledger
        .cloud_after
        .values()
        .map(|c| c.packets_received)
        .sum();
    let sent: u64 = ledger.cloud_after.values().map(|c| c.responses_sent).sum();

    let cloud_drop_in = actual as i64 - received as i64;
    let cloud_drop_out = sent as i64 - responses as i64;
    let (samples, mode, discarded) = trans_time_samples(ledger);
    RepMetrics {
        expected: expected_total,
        attempted,
        actual,
        cloud_received: received,
        cloud_responses_sent: sent,
        responses,
        sim_drop: expected_total as i64 - actual as i64,
        cloud_drop_in,
        cloud_drop_out,
        in_flight_discarded: received as i64 - sent as i64,
        cloud_drop: cloud_drop_in + cloud_drop_out,
        step_budget_breaks: edges().map(|e| e.step_budget_breaks).sum(),
        trans_time: summarize(samples, mode, discarded, exec),
        edge_failures: ledger
            .per_node
            .iter()
            .flat_map(|n| {
                n.edges.iter().filter_map(move |(id, e)| {
                    e.failure
                        .as_ref()
                        .map(|f| format!("{}/{id}: {f}", n.node_id))
                })
            })
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsl::Protocol;
    use crate::runtime::EdgeLedger;
    use proptest::prelude::*;

    pub(crate) fn stats(received: u64, sent: u64) -> CloudStats {
        CloudStats {
            packets_received: received,
            packets_processed: sent,
            responses_sent: sent,
            malformed: 0,
            stale: 0,
            send_errors: 0,
            per_source: BTreeMap::new(),
            trans_time_ns: vec![],
            trans_time_discarded: 0,
            reset_epoch_ns: 0,
            compute_ns: 0,
            workers: 1,
            udp_recv_buf: None,
            protocol: Protocol::Udp,
        }
    }

    fn ledger(actual: u64, responses: u64, received: u64, sent: u64) -> RunLedger {
        let mut node = NodeLedger::default();
        node.edges.insert(
            0,
            EdgeLedger {
                attempted_sends: actual,
                actual_sends: actual,
                responses_received: responses,
                rtt_samples_ns: vec![2_000; responses as usize],
                ..Default::default()
            },
        );
        RunLedger {
            topology_digest: "d".into(),
            per_node: vec![node],
            cloud_before: BTreeMap::new(),
            cloud_after: [("C".to_string(), stats(received, sent))].into(),
            clock_offsets_ns: BTreeMap::new(),
            wall_duration_ns: 0,
        }
    }

    fn oracle(n: u64) -> BTreeMap<EdgeKey, u64> {
        [(
            EdgeKey {
                node_id: 0,
                edge_id: 0,
            },
            n,
        )]
        .into()
    }

    #[test]
    fn lossless_case_is_all_zero() {
        let m = compute_metrics(&ledger(800, 800, 800, 800), &oracle(800));
        assert_eq!(
            (m.sim_drop, m.cloud_drop_in, m.cloud_drop_out, m.cloud_drop),
            (0, 0, 0, 0)
        );
        assert_eq!(m.trans_time.mode, TransTimeMode::RttHalf);
        assert_eq!(m.trans_time.mean_ns, 1_000.0);
    }

    #[test]
    fn heavy_cloud_loss() {
        let m = compute_metrics(&ledger(48_000, 977, 977, 977), &oracle(48_000));
        assert_eq!(m.sim_drop, 0);
        assert_eq!(m.cloud_drop, 47_023);
    }

    #[test]
    fn lost_echoes_are_outbound_drop() {
        let m = compute_metrics(&ledger(100, 90, 100, 100), &oracle(100));
        assert_eq!((m.cloud_drop_in, m.cloud_drop_out), (0, 10));
    }

    #[test]
    fn unanswered_at_snapshot_is_in_flight() {
        let m = compute_metrics(&ledger(100, 90, 100, 90), &oracle(100));
        assert_eq!(
            (m.cloud_drop_out, m.in_flight_discarded, m.cloud_drop),
            (0, 10, 0)
        );
    }

    #[test]
    fn one_way_samples_win_over_rtt() {
        let mut l = ledger(3, 3, 3, 3);
        l.cloud_after.get_mut("C").unwrap().trans_time_ns = vec![30, 10, 20];
        let m = compute_metrics(&l, &oracle(3));
        assert_eq!(m.trans_time.mode, TransTimeMode::OneWay);
        assert_eq!((m.trans_time.p50_ns, m.trans_time.p99_ns), (20, 30));
    }

    #[test]
    fn nearest_rank() {
        let xs: Vec<u64> = (1..=100).collect();
        assert_eq!(percentile(&xs, 50.0), 50);
        assert_eq!(percentile(&xs, 95.0), 95);
        assert_eq!(percentile(&xs, 99.0), 99);
        assert_eq!(percentile(&[7], 99.0), 7);
        assert_eq!(percentile(&[], 50.0), 0);
    }

    proptest! {
        #[test]
        fn identities_hold_for_any_counts(expected in 0u64..10_000, a in 0u64..10_000, r in 0u64..10_000,
                                          s in 0u64..10_000, resp in 0u64..10_000) {
            let m = compute_metrics(&ledger(a, resp, r, s), &oracle(expected));
            prop_assert!(m.sim_identity_holds());
            prop_assert!(m.cloud_identity_holds());
        }

        #[test]
        fn percentile_matches_brute_force(mut xs in prop::collection::vec(0u64..1000, 1..200), p in 1u32..=100) {
            xs.sort_unstable();
            let got = percentile(&xs, p as f64);
            // smallest value with at least p% of samples at or below it
            let oracle = *xs.iter().find(|&&v| {
                xs.iter().filter(|&&w| w <= v).count() * 100 >= p as usize * xs.len()
            }).unwrap();
            prop_assert_eq!(got, oracle);
        }
    }
}
