//! Baseline echo cloud: receives a packet, busy-computes for a configured
//! time, sends the packet back unchanged, and counts every stage so drops
//! can be attributed. A line-oriented JSON control channel resets and reads
//! the counters.

mod control;
mod server;
mod stats;

pub use control::{ControlClient, ControlError};
pub use server::{serve, start, CloudConfig, CloudError, CloudHandle};
pub use stats::CloudStats;
