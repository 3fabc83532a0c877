use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Geometry;
use crate::error::MitigationError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrrTrigger {
    #[default]
    AutoRefresh,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrrConfig {
    pub sample_rate: f64,
    pub table_size: usize,
    #[serde(default)]
    pub refresh_on: TrrTrigger,
    #[serde(default)]
    pub rng_seed: u64,
}

impl TrrConfig {
    pub fn validate(&self) -> Result<(), MitigationError> {
        if !(self.sample_rate > 0.0 && self.sample_rate <= 1.0) {
            return Err(MitigationError::Invalid(format!("trr.sample_rate = {} must be in (0, 1]", self.sample_rate)));
        }
        if self.table_size == 0 {
            return Err(MitigationError::Invalid("trr.table_size must be at least 1".into()));
        }
        Ok(())
    }
}

/// In-DRAM sampler: counts sampled activations in a small table (evicting
/// the least-counted entry when full) and, at each auto-refresh, refreshes
/// the neighbors of the most-counted row and drops it from the table.
#[derive(Debug, Clone)]
pub struct Trr {
    config: TrrConfig,
    geometry: Geometry,
    rng: ChaCha8Rng,
    table: Vec<(u32, u64)>,
    targeted: Vec<u32>,
}

impl Trr {
    pub fn new(config: TrrConfig, geometry: Geometry) -> Self {
        let rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
        Self { config, geometry, rng, table: Vec::new(), targeted: Vec::new() }
    }

    pub fn config(&self) -> &TrrConfig {
        &self.config
    }

    /// Rows whose neighbors were refreshed, in order.
    pub fn targeted(&self) -> &[u32] {
        &self.targeted
    }

    pub fn on_activate(&mut self, row: u32) {
        if self.config.sample_rate < 1.0 && !self.rng.gen_bool(self.config.sample_rate) {
            return;
        }
        if let Some(e) = self.table.iter_mut().find(|e| e.0 == row) {
            e.1 += 1;
            return;
        }
        if self.table.len() == self.config.table_size {
            let victim = (0..self.table.len()).min_by_key(|&i| self.table[i].1).expect("table not empty");
            self.table.remove(victim);
        }
        self.table.push((row, 1));
    }

    pub fn on_refresh(&mut self, out: &mut Vec<u32>) {
        let Some(best) = (0..self.table.len()).max_by_key(|&i| (self.table[i].1, std::cmp::Reverse(i))) else {
            return;
        };
        let (row, _) = self.table.remove(best);
        self.targeted.push(row);
        out.extend(self.geometry.neighbors(row));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trr(table_size: usize) -> Trr {
        Trr::new(
            TrrConfig { sample_rate: 1.0, table_size, refresh_on: TrrTrigger::AutoRefresh, rng_seed: 0 },
            Geometry { rows: 32, blast_radius: 1 },
        )
    }

    #[test]
    fn empty_table_issues_nothing() {
        let mut t = trr(4);
        let mut out = Vec::new();
        t.on_refresh(&mut out);
        assert!(out.is_empty());
    }

    #[test]
    fn single_aggressor_is_caught_every_refresh() {
        let mut t = trr(4);
        for _ in 0..3 {
            let mut out = Vec::new();
            for _ in 0..100 {
                t.on_activate(10);
            }
            t.on_refresh(&mut out);
            assert_eq!(out, vec![9, 11]);
        }
    }

    #[test]
    fn dummy_rows_evict_the_aggressor() {
        let mut t = trr(2);
        for _ in 0..4 {
            t.on_activate(10);
        }
        for dummy in [20, 24, 28] {
            for _ in 0..5 {
                t.on_activate(dummy);
            }
        }
        let mut out = Vec::new();
        t.on_refresh(&mut out);
        assert_eq!(t.targeted(), &[24]);
    }
}
