//! DDR4-style timing parameters. All durations are integer nanoseconds.

use serde::{Deserialize, Serialize};

pub const NS: u64 = 1;
pub const US: u64 = 1_000;
pub const MS: u64 = 1_000_000;
pub const S: u64 = 1_000_000_000;

/// Timing constraints of a simulated bank.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct TimingParams {
    /// Minimum row-open time (tRAS).
    pub t_ras_min: u64,
    /// Average auto-refresh interval (tREFI).
    pub t_refi: u64,
    /// Longest row-open time the standard allows (9 x tREFI).
    pub t_ron_max_jedec: u64,
    /// Refresh window (tREFW).
    pub t_refw: u64,
    /// Number of refresh groups walked by the refresh cursor.
    pub ref_groups: u32,
    /// Gap between a precharge and the next activation of a closed bank.
    pub t_rc: u64,
    /// Dwell added by each additional same-row cache-block read.
    pub t_read: u64,
}

impl Default for TimingParams {
    fn default() -> Self {
        let t_refi = 7_800 * NS;
        Self {
            t_ras_min: 36 * NS,
            t_refi,
            t_ron_max_jedec: 9 * t_refi,
            t_refw: 64 * MS,
            ref_groups: 8192,
            t_rc: 14 * NS,
            t_read: 50 * NS,
        }
    }
}

impl TimingParams {
    pub fn validate(&self) -> Result<(), String> {
        if self.t_ras_min == 0 {
            return Err("t_ras_min must be positive".into());
        }
        if self.t_refi == 0 || self.t_refw == 0 || self.ref_groups == 0 {
            return Err("refresh timing must be positive".into());
        }
        if self.t_ron_max_jedec < self.t_ras_min {
            return Err("t_ron_max_jedec must be at least t_ras_min".into());
        }
        Ok(())
    }

    /// Period of one activate/precharge cycle holding the row open for `t_on`.
    pub fn activation_period(&self, t_on: u64) -> u64 {
        t_on.max(self.t_ras_min) + self.t_rc
    }

    /// Most activations at `t_on` that end strictly before the refresh window elapses.
    pub fn window_capacity(&self, t_on: u64) -> u64 {
        self.t_refw / self.activation_period(t_on)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_ddr4() {
        let t = TimingParams::default();
        assert_eq!(t.t_ras_min, 36);
        assert_eq!(t.t_refi, 7_800);
        assert_eq!(t.t_ron_max_jedec, 70_200);
        assert_eq!(t.t_ron_max_jedec, 9 * t.t_refi);
        // 8192 x 7.8 us = 63.8976 ms, within rounding of 64 ms.
        let covered = t.ref_groups as u64 * t.t_refi;
        assert!((covered as f64 - t.t_refw as f64).abs() / (t.t_refw as f64) < 0.005);
        assert!(t.validate().is_ok());
    }

    #[test]
    fn capacity_is_strictly_within_window() {
        let t = TimingParams::default();
        for t_on in [36, 7_800, 70_200, 30 * MS, 40 * MS] {
            let k = t.window_capacity(t_on);
            let end = k * t.activation_period(t_on) - t.t_rc;
            assert!(end < t.t_refw, "t_on {t_on}: {k} activations end at {end}");
            assert_eq!(k, t.t_refw / (t_on + t.t_rc));
        }
        assert_eq!(t.window_capacity(30 * MS), 2);
        assert_eq!(t.window_capacity(64 * MS), 0);
    }
}
