use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::Geometry;
use crate::error::MitigationError;
use crate::fixed;
use crate::profile::DeviceProfile;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrapheneConfig {
    pub table_size: usize,
    /// Count (in tRAS-activation units) at which a row's neighbors are refreshed.
    pub threshold: f64,
    /// Count each activation by its disturbance weight rather than by 1.
    #[serde(default = "default_weighted")]
    pub weighted_increments: bool,
}

fn default_weighted() -> bool {
    true
}

impl GrapheneConfig {
    pub fn validate(&self) -> Result<(), MitigationError> {
        if self.table_size == 0 {
            return Err(MitigationError::Invalid("graphene.table_size must be at least 1".into()));
        }
        if !(self.threshold > 0.0 && self.threshold.is_finite()) {
            return Err(MitigationError::Invalid(format!("graphene.threshold = {} must be positive", self.threshold)));
        }
        Ok(())
    }
}

/// Largest Graphene threshold that keeps every victim below `t_min`.
///
/// Between two refreshes a victim collects less than `threshold + slack`
/// from each of its two aggressors, plus the closing activation's charge
/// (at most `w_max`), where `slack` bounds the Misra-Gries undercount:
/// zero when the table can hold every row, `window_weight / (table_size + 1)`
/// otherwise.
pub fn provision_graphene_threshold(t_min: f64, w_max: f64, slack: f64) -> Option<f64> {
    let t = ((t_min - w_max) / 2.0 - slack).floor();
    (t >= 1.0).then_some(t)
}

/// Weighted Misra-Gries summary over row ids, counting in fixed point.
///
/// Estimates never exceed the true weight since the last reset and fall
/// short of it by at most [`decremented`](Self::decremented), which is at
/// most `total_weight / (capacity + 1)`.
#[derive(Debug, Clone)]
pub struct MisraGries {
    capacity: usize,
    entries: Vec<(u32, u64)>,
    decremented: u64,
}

impl MisraGries {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0);
        Self { capacity, entries: Vec::with_capacity(capacity), decremented: 0 }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Adds `weight` to `key` and returns its new estimate.
    pub fn insert(&mut self, key: u32, mut weight: u64) -> u64 {
        if let Some(e) = self.entries.iter_mut().find(|e| e.0 == key) {
            e.1 += weight;
            return e.1;
        }
        if self.entries.len() == self.capacity {
            let min = self.entries.iter().map(|e| e.1).min().unwrap_or(0);
            let m = min.min(weight);
            if m > 0 {
                for e in &mut self.entries {
                    e.1 -= m;
                }
                self.decremented += m;
                weight -= m;
            }
            self.entries.retain(|e| e.1 > 0);
        }
        if weight > 0 {
            self.entries.push((key, weight));
        }
        weight
    }

    pub fn estimate(&self, key: u32) -> u64 {
        self.entries.iter().find(|e| e.0 == key).map_or(0, |e| e.1)
    }

    pub fn reset(&mut self, key: u32) {
        self.entries.retain(|e| e.0 != key);
    }

    /// Total weight removed by decrement-all steps.
    pub fn decremented(&self) -> u64 {
        self.decremented
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Counter-based mitigation: refreshes a row's neighbors once its
/// Misra-Gries estimate reaches the threshold, then resets the counter.
#[derive(Debug, Clone)]
pub struct Graphene {
    config: GrapheneConfig,
    profile: Arc<DeviceProfile>,
    temp_c: i32,
    geometry: Geometry,
    table: MisraGries,
    threshold: u64,
    memo: Option<(u64, u64)>,
    triggers: u64,
}

impl Graphene {
    pub fn new(
        config: GrapheneConfig,
        profile: Arc<DeviceProfile>,
        temp_c: i32,
        geometry: Geometry,
    ) -> Result<Self, MitigationError> {
        config.validate()?;
        profile.worst_charge(profile.t_ras_min(), temp_c)?;
        Ok(Self {
            table: MisraGries::new(config.table_size),
            threshold: fixed::threshold(config.threshold),
            config,
            profile,
            temp_c,
            geometry,
            memo: None,
            triggers: 0,
        })
    }

    pub fn config(&self) -> &GrapheneConfig {
        &self.config
    }

    pub fn table(&self) -> &MisraGries {
        &self.table
    }

    pub fn triggers(&self) -> u64 {
        self.triggers
    }

    fn increment(&mut self, t_on: u64) -> Result<u64, MitigationError> {
        if !self.config.weighted_increments {
            return Ok(fixed::ONE);
        }
        if let Some((t, w)) = self.memo {
            if t == t_on {
                return Ok(w);
            }
        }
        let w = fixed::charge(self.profile.worst_charge(t_on.max(self.profile.t_ras_min()), self.temp_c)?);
        self.memo = Some((t_on, w));
        Ok(w)
    }

    pub fn on_close(&mut self, row: u32, t_on: u64, out: &mut Vec<u32>) -> Result<(), MitigationError> {
        let inc = self.increment(t_on)?;
        if self.table.insert(row, inc) >= self.threshold {
            self.table.reset(row);
            self.triggers += 1;
            out.extend(self.geometry.neighbors(row));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::profile::builtin;

    fn graphene(threshold: f64, weighted: bool) -> Graphene {
        let profile = Arc::new(builtin("paper-mean-80C").unwrap());
        Graphene::new(
            GrapheneConfig { table_size: 4, threshold, weighted_increments: weighted },
            profile,
            80,
            Geometry { rows: 16, blast_radius: 1 },
        )
        .unwrap()
    }

    #[test]
    fn threshold_activations_trigger_one_pair() {
        let mut g = graphene(10.0, false);
        let mut out = Vec::new();
        for _ in 0..9 {
            g.on_close(5, 36, &mut out).unwrap();
        }
        assert!(out.is_empty());
        g.on_close(5, 36, &mut out).unwrap();
        assert_eq!(out, vec![4, 6]);
        assert_eq!(g.table().estimate(5), 0);
    }

    #[test]
    fn heavy_weighted_activation_triggers_immediately() {
        let mut g = graphene(100.0, true);
        let mut out = Vec::new();
        g.on_close(3, 70_200, &mut out).unwrap();
        assert_eq!(out, vec![2, 4]);
    }

    #[test]
    fn misra_gries_decrements_all_on_overflow() {
        let mut mg = MisraGries::new(2);
        mg.insert(1, 5);
        mg.insert(2, 3);
        assert_eq!(mg.insert(3, 2), 0);
        assert_eq!(mg.estimate(1), 3);
        assert_eq!(mg.estimate(2), 1);
        assert_eq!(mg.decremented(), 2);
        assert_eq!(mg.insert(4, 4), 3);
        assert_eq!(mg.estimate(2), 0);
        assert_eq!(mg.len(), 2);
    }

    #[test]
    fn provisioning_formula() {
        assert_eq!(provision_graphene_threshold(64.0, 1.0, 0.0), Some(31.0));
        assert_eq!(provision_graphene_threshold(64.0, 17.6, 0.0), Some(23.0));
        assert_eq!(provision_graphene_threshold(2.0, 1.0, 0.0), None);
    }
}
