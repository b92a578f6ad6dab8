use std::time::Instant;

use evadapt_core::training::Clock;

/// Seconds since construction.
pub struct WallClock(Instant);

impl WallClock {
    pub fn start() -> Self {
        WallClock(Instant::now())
    }

    pub fn elapsed(&self) -> f64 {
        self.0.elapsed().as_secs_f64()
    }
}

impl Clock for WallClock {
    fn now_secs(&self) -> f64 {
        self.elapsed()
    }
}
