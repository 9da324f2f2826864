use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

/// Wall clock in nanoseconds since the Unix epoch.
pub fn wall_now_ns() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_nanos() as u64)
        .unwrap_or(0)
}

/// Sleeps until `deadline`.
///
/// Waits of a millisecond or more go to the OS; shorter ones spin with
/// `yield_now` so sub-millisecond pacing stays accurate.
pub fn sleep_until(deadline: Instant) {
    loop {
        let now = Instant::now();
        if now >= deadline {
            return;
        }
        let remaining = deadline - now;
        if remaining >= Duration::from_millis(1) {
            std::thread::sleep(remaining);
        } else {
            std::thread::yield_now();
        }
    }
}

pub fn pause(d: Duration) {
    sleep_until(Instant::now() + d);
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pause_never_returns_early() {
        for us in [0u64, 50, 300, 1_000, 2_500] {
            let t = Instant::now();
            pause(Duration::from_micros(us));
            assert!(t.elapsed() >= Duration::from_micros(us));
        }
    }

    #[test]
    fn wall_clock_is_recent() {
        // after 2020-01-01
        assert!(wall_now_ns() > 1_577_836_800_000_000_000);
    }
}
