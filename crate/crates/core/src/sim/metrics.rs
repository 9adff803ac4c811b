//! Run metrics. [`MetricsReport`] depends only on the scenario and seed;
//! wall-clock figures live in [`TimingReport`] so that metrics files are
//! reproducible byte for byte.

use std::time::Duration;

use serde::Serialize;

/// Running root-mean-square, accumulated in insertion order.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RmsAccumulator {
    sum_sq: f64,
    n: usize,
}

impl RmsAccumulator {
    pub fn push(&mut self, e: f64) {
        self.sum_sq += e * e;
        self.n += 1;
    }

    pub fn count(&self) -> usize {
        self.n
    }

    pub fn rms(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            (self.sum_sq / self.n as f64).sqrt()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ChannelRmse {
    pub x: f64,
    pub y: f64,
    pub psi: f64,
    pub u: f64,
    pub v: f64,
    pub r: f64,
}

impl ChannelRmse {
    pub fn from_accumulators(a: &[RmsAccumulator; 6]) -> Self {
        Self {
            x: a[0].rms(),
            y: a[1].rms(),
            psi: a[2].rms(),
            u: a[3].rms(),
            v: a[4].rms(),
            r: a[5].rms(),
        }
    }

    pub fn position(&self) -> f64 {
        self.x.hypot(self.y)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub scenario: String,
    pub seed: u64,
    pub ticks: usize,
    pub dt: f64,
    /// True position vs. the current reference point, on-track samples only.
    pub position_rmse: f64,
    pub heading_rmse: f64,
    pub on_track_samples: usize,
    /// Estimate minus truth over the whole run.
    pub estimation_rmse: ChannelRmse,
    /// Raw position-measurement error of the same run, for comparison.
    pub measurement_position_rms: f64,
    pub slam_return_error: f64,
    pub slam_position_rmse: f64,
    pub slam_nodes: usize,
    pub loop_closures: usize,
    pub goals_total: usize,
    pub goals_reached: usize,
    pub goal_times: Vec<f64>,
    pub force_violations: usize,
    pub max_abs_force: f64,
    pub nmpc_degraded_solves: usize,
    pub mhe_fallbacks: usize,
    pub plan_failures: usize,
}

impl MetricsReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("metrics serialise");
        s.push('\n');
        s
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct ModuleTiming {
    pub mean_ms: f64,
    pub max_ms: f64,
    pub samples: usize,
}

#[derive(Debug, Clone, Default)]
pub(crate) struct Samples(Vec<f64>);

impl Samples {
    pub fn push(&mut self, d: Duration) {
        self.0.push(d.as_secs_f64() * 1e3);
    }

    pub fn push_ms(&mut self, ms: f64) {
        self.0.push(ms);
    }

    fn summary(&self) -> ModuleTiming {
        let n = self.0.len();
        ModuleTiming {
            mean_ms: if n == 0 { 0.0 } else { self.0.iter().sum::<f64>() / n as f64 },
            max_ms: self.0.iter().copied().fold(0.0, f64::max),
            samples: n,
        }
    }

    fn over(&self, limit_ms: f64) -> usize {
        self.0.iter().filter(|&&v| v > limit_ms).count()
    }
}

#[derive(Debug, Clone, Default)]
pub(crate) struct TimingStats {
    pub tick: Samples,
    pub plant: Samples,
    pub sensors: Samples,
    pub nmhe: Samples,
    pub slam: Samples,
    pub slam_optimize: Samples,
    pub planner: Samples,
    pub nmpc: Samples,
}

/// Per-tick compute budget, milliseconds.
pub const TICK_BUDGET_MS: f64 = 100.0;

impl TimingStats {
    pub fn report(&self) -> TimingReport {
        let over = self.tick.over(TICK_BUDGET_MS);
        if over > 0 {
            log::warn!("{over} ticks exceeded the {TICK_BUDGET_MS} ms budget");
        }
        TimingReport {
            tick: self.tick.summary(),
            plant: self.plant.summary(),
            sensors: self.sensors.summary(),
            nmhe: self.nmhe.summary(),
            slam: self.slam.summary(),
            slam_optimize: self.slam_optimize.summary(),
            planner: self.planner.summary(),
            nmpc: self.nmpc.summary(),
            budget_ms: TICK_BUDGET_MS,
            ticks_over_budget: over,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct TimingReport {
    pub tick: ModuleTiming,
    pub plant: ModuleTiming,
    pub sensors: ModuleTiming,
    pub nmhe: ModuleTiming,
    pub slam: ModuleTiming,
    pub slam_optimize: ModuleTiming,
    pub planner: ModuleTiming,
    pub nmpc: ModuleTiming,
    pub budget_ms: f64,
    pub ticks_over_budget: usize,
}
