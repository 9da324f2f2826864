//! Execution of simulation nodes.
//!
//! Each edge device runs three threads: a paced sender walking the step
//! schedule, a receiver collecting echoes until the end of the drain window,
//! and (when the workload is non-zero) a compute thread doing busy work once
//! per step. Edges of a node run concurrently and only meet again when their
//! ledgers are merged.

mod clock;
mod compute;
mod edge;
mod ledger;
mod node;
mod payload;
mod transport;

use std::time::{Duration, Instant};

pub use clock::{ClockError, StepClock};
pub use compute::busy_compute;
pub use edge::{run_edge_device, EdgeRun};
pub use ledger::{EdgeLedger, NodeLedger};
pub use node::{run_node_job, run_simulation_node, NodeJob, NodeJobError};
pub use payload::make_payload;
pub use transport::{Inbound, Link, Received, RECV_POLL};

use crate::time::wall_now_ns;

/// Maps the monotonic clock onto the shared run epoch.
///
/// `epoch` is the local instant corresponding to `epoch_unix_ns` on the wall
/// clock. Timestamps derived from it advance monotonically even if the wall
/// clock is adjusted mid-run.
#[derive(Debug, Clone, Copy)]
pub struct TimeBase {
    pub epoch: Instant,
    pub epoch_unix_ns: u64,
}

impl TimeBase {
    /// Anchors `epoch_unix_ns`, which may lie in the past or the future.
    pub fn at_unix(epoch_unix_ns: u64) -> Self {
        let now = Instant::now();
        let wall = wall_now_ns();
        let epoch = if epoch_unix_ns >= wall {
            now + Duration::from_nanos(epoch_unix_ns - wall)
        } else {
            now.checked_sub(Duration::from_nanos(wall - epoch_unix_ns))
                .unwrap_or(now)
        };
        TimeBase {
            epoch,
            epoch_unix_ns,
        }
    }

    /// Timestamp in the cloud's wall-clock frame, given the cloud's offset
    /// from the local clock.
    pub fn stamp(&self, offset_ns: i64) -> u64 {
        let now = Instant::now();
        let since = now.saturating_duration_since(self.epoch).as_nanos() as i128;
        let before = self.epoch.saturating_duration_since(now).as_nanos() as i128;
        let t = self.epoch_unix_ns as i128 + since - before + offset_ns as i128;
        t.clamp(0, u64::MAX as i128) as u64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn time_base_tracks_wall_clock() {
        let wall = wall_now_ns();
        let tb = TimeBase::at_unix(wall + 50_000_000);
        let s = tb.stamp(0);
        let w = wall_now_ns();
        assert!(s.abs_diff(w) < 5_000_000, "{s} vs {w}");
        let shifted = tb.stamp(1_000_000_000) - tb.stamp(0);
        assert!(shifted.abs_diff(1_000_000_000) < 1_000_000);
        assert!(tb.epoch > Instant::now());
    }
}
