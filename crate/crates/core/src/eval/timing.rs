use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

/// Wall time of one rendered frame, split by pipeline stage.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct TimingBreakdown {
    pub encode_ms: f64,
    pub network_ms: f64,
    pub render_ms: f64,
    pub total_ms: f64,
    pub rays: u64,
}

impl TimingBreakdown {
    pub fn fps(&self) -> f64 {
        if self.total_ms > 0.0 {
            1000.0 / self.total_ms
        } else {
            f64::INFINITY
        }
    }

    pub fn component_sum(&self) -> f64 {
        self.encode_ms + self.network_ms + self.render_ms
    }

    /// Single-line JSON record.
    pub fn to_record(&self) -> String {
        serde_json::json!({
            "encode_ms": self.encode_ms,
            "network_ms": self.network_ms,
            "render_ms": self.render_ms,
            "total_ms": self.total_ms,
            "rays": self.rays,
            "fps": self.fps(),
        })
        .to_string()
    }

    /// Per-field median over a set of runs.
    pub fn median(runs: &[TimingBreakdown]) -> TimingBreakdown {
        let med = |f: fn(&TimingBreakdown) -> f64| {
            let mut v: Vec<f64> = runs.iter().map(f).collect();
            v.sort_by(|a, b| a.total_cmp(b));
            let n = v.len();
            if n == 0 {
                0.0
            } else if n % 2 == 1 {
                v[n / 2]
            } else {
                0.5 * (v[n / 2 - 1] + v[n / 2])
            }
        };
        TimingBreakdown {
            encode_ms: med(|t| t.encode_ms),
            network_ms: med(|t| t.network_ms),
            render_ms: med(|t| t.render_ms),
            total_ms: med(|t| t.total_ms),
            rays: runs.first().map_or(0, |t| t.rays),
        }
    }
}

/// Accumulates monotonic-clock durations per stage.
#[derive(Debug, Default)]
pub(crate) struct StageClock {
    pub encode: Duration,
    pub network: Duration,
    pub render: Duration,
}

impl StageClock {
    pub fn time<R>(slot: &mut Duration, f: impl FnOnce() -> R) -> R {
        let start = Instant::now();
        let out = f();
        *slot += start.elapsed();
        out
    }

    pub fn finish(self, total: Duration, rays: u64) -> TimingBreakdown {
        TimingBreakdown {
            encode_ms: ms(self.encode),
            network_ms: ms(self.network),
            render_ms: ms(self.render),
            total_ms: ms(total),
            rays,
        }
    }
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1e3
}
