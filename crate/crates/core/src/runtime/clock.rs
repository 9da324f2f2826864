use std::time::{Duration, Instant};

use thiserror::Error;

use crate::time::sleep_until;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ClockError {
    #[error("step {requested} requested after step {last} (steps must be awaited in order)")]
    OutOfOrder { requested: u64, last: u64 },
    #[error("step {requested} is beyond the last step {last}")]
    OutOfRange { requested: u64, last: u64 },
}

/// Step boundaries anchored to a fixed run epoch.
///
/// Step `i` starts at `epoch + i * step`, independent of when earlier steps
/// finished, so lateness in one step never shifts the next.
#[derive(Debug, Clone)]
pub struct StepClock {
    epoch: Instant,
    step: Duration,
    step_count: u64,
    next: u64,
    max_lateness: Duration,
}

impl StepClock {
    pub fn new(epoch: Instant, step: Duration, step_count: u64) -> Self {
        Self {
            epoch,
            step,
            step_count,
            next: 0,
            max_lateness: Duration::ZERO,
        }
    }

    pub fn epoch(&self) -> Instant {
        self.epoch
    }

    pub fn step(&self) -> Duration {
        self.step
    }

    pub fn step_start(&self, i: u64) -> Instant {
        let offset = (self.step.as_nanos() * i as u128).min(u64::MAX as u128) as u64;
        self.epoch + Duration::from_nanos(offset)
    }

    /// Blocks until step `i` begins and returns the wake-up instant.
    pub fn wait_for_step(&mut self, i: u64) -> Result<Instant, ClockError> {
        if i < self.next {
            return Err(ClockError::OutOfOrder {
                requested: i,
                last: self.next - 1,
            });
        }
        if i >= self.step_count {
            return Err(ClockError::OutOfRange {
                requested: i,
                last: self.step_count.saturating_sub(1),
            });
        }
        let deadline = self.step_start(i);
        sleep_until(deadline);
        let now = Instant::now();
        self.max_lateness = self.max_lateness.max(now - deadline);
        self.next = i + 1;
        Ok(now)
    }

    /// Largest observed gap between a step boundary and the wake-up.
    pub fn max_lateness(&self) -> Duration {
        self.max_lateness
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_is_immediate() {
        let epoch = Instant::now();
        let mut c = StepClock::new(epoch, Duration::from_millis(500), 4);
        let t = c.wait_for_step(0).unwrap();
        assert!(t - epoch < Duration::from_millis(5));
    }

    #[test]
    fn steps_are_anchored_to_epoch() {
        let epoch = Instant::now();
        let mut c = StepClock::new(epoch, Duration::from_millis(20), 10);
        c.wait_for_step(0).unwrap();
        std::thread::sleep(Duration::from_millis(35)); // overrun step 0 and 1
        let t = c.wait_for_step(2).unwrap();
        let since = t - epoch;
        assert!(since >= Duration::from_millis(40), "{since:?}");
        assert!(since < Duration::from_millis(45), "{since:?}");
        let t = c.wait_for_step(3).unwrap();
        assert!(t - epoch >= Duration::from_millis(60));
    }

    #[test]
    fn rejects_out_of_order_and_range() {
        let mut c = StepClock::new(Instant::now(), Duration::from_millis(1), 3);
        c.wait_for_step(1).unwrap();
        assert_eq!(
            c.wait_for_step(0),
            Err(ClockError::OutOfOrder {
                requested: 0,
                last: 1
            })
        );
        assert_eq!(
            c.wait_for_step(3),
            Err(ClockError::OutOfRange {
                requested: 3,
                last: 2
            })
        );
    }

    #[test]
    fn step_start_handles_large_indices() {
        let epoch = Instant::now();
        let c = StepClock::new(epoch, Duration::from_nanos(1), u64::MAX);
        assert_eq!(c.step_start(5) - epoch, Duration::from_nanos(5));
        assert_eq!(c.step_start(1 << 33) - epoch, Duration::from_nanos(1 << 33));
    }
}
