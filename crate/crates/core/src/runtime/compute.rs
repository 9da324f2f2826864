use std::hint::black_box;
use std::time::{Duration, Instant};

/// Keeps the calling thread busy with floating-point work until at least
/// `duration_ns` has elapsed on the monotonic clock. Never sleeps.
///
/// Returns the time actually spent.
pub fn busy_compute(duration_ns: u64) -> Duration {
    let start = Instant::now();
    if duration_ns == 0 {
        return start.elapsed();
    }
    let target = Duration::from_nanos(duration_ns);
    let mut x = 1.000_001_f64;
    let mut acc = 0.0_f64;
    loop {
        for _ in 0..256 {
            x = black_box(x * 1.000_000_1 + 0.000_000_3).sqrt() + 0.5;
            acc += x.sin();
        }
        black_box(acc);
        let elapsed = start.elapsed();
        if elapsed >= target {
            return elapsed;
        }
    }
}
