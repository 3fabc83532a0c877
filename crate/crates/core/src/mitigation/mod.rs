//! Read-disturbance mitigations that observe the command stream and ask for
//! neighbor refreshes.

mod adapt;
mod graphene;
mod para;
mod trr;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::MitigationError;
use crate::profile::DeviceProfile;

pub use adapt::{adapt, AdaptationConfig, AdaptationMetadata, Adapted, CapPolicy};
pub use graphene::{provision_graphene_threshold, Graphene, GrapheneConfig, MisraGries};
pub use para::{para_miss_probability, Para, ParaConfig};
pub use trr::{Trr, TrrConfig, TrrTrigger};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MitigationConfig {
    #[default]
    None,
    Para(ParaConfig),
    Graphene(GrapheneConfig),
    Trr(TrrConfig),
}

impl MitigationConfig {
    pub fn validate(&self) -> Result<(), MitigationError> {
        match self {
            MitigationConfig::None => Ok(()),
            MitigationConfig::Para(c) => c.validate(),
            MitigationConfig::Graphene(c) => c.validate(),
            MitigationConfig::Trr(c) => c.validate(),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            MitigationConfig::None => "none",
            MitigationConfig::Para(_) => "para",
            MitigationConfig::Graphene(_) => "graphene",
            MitigationConfig::Trr(_) => "trr",
        }
    }

    /// True when the engine draws random numbers.
    pub fn is_randomized(&self) -> bool {
        match self {
            MitigationConfig::Para(_) => true,
            MitigationConfig::Trr(c) => c.sample_rate < 1.0,
            _ => false,
        }
    }

    /// Same config with its RNG seed replaced, for repetitions.
    pub fn with_seed(&self, seed: u64) -> MitigationConfig {
        let mut out = self.clone();
        match &mut out {
            MitigationConfig::Para(c) => c.rng_seed = seed,
            MitigationConfig::Trr(c) => c.rng_seed = seed,
            _ => {}
        }
        out
    }
}

/// Bank geometry a mitigation needs to pick neighbors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Geometry {
    pub rows: u32,
    pub blast_radius: u32,
}

impl Geometry {
    /// Rows within the blast radius of `row`, nearest first, lower before upper.
    pub fn neighbors(&self, row: u32) -> impl Iterator<Item = u32> + '_ {
        let row = row as i64;
        let rows = self.rows as i64;
        (1..=self.blast_radius as i64)
            .flat_map(move |d| [row - d, row + d])
            .filter(move |&r| r >= 0 && r < rows)
            .map(|r| r as u32)
    }
}

/// A running mitigation instance.
#[derive(Debug, Clone)]
pub enum Mitigation {
    None,
    Para(Para),
    Graphene(Graphene),
    Trr(Trr),
}

impl Mitigation {
    pub fn new(
        config: &MitigationConfig,
        profile: Arc<DeviceProfile>,
        temp_c: i32,
        geometry: Geometry,
    ) -> Result<Self, MitigationError> {
        config.validate()?;
        Ok(match config {
            MitigationConfig::None => Mitigation::None,
            MitigationConfig::Para(c) => Mitigation::Para(Para::new(c.clone(), geometry)),
            MitigationConfig::Graphene(c) => Mitigation::Graphene(Graphene::new(c.clone(), profile, temp_c, geometry)?),
            MitigationConfig::Trr(c) => Mitigation::Trr(Trr::new(c.clone(), geometry)),
        })
    }

    pub fn on_activate(&mut self, row: u32) {
        if let Mitigation::Trr(t) = self {
            t.on_activate(row);
        }
    }

    /// Called after `row` closes with on-time `t_on`; pushes rows to refresh.
    pub fn on_precharge(&mut self, row: u32, t_on: u64, out: &mut Vec<u32>) -> Result<(), MitigationError> {
        match self {
            Mitigation::Para(p) => out.extend(p.on_precharge(row)),
            Mitigation::Graphene(g) => g.on_close(row, t_on, out)?,
            _ => {}
        }
        Ok(())
    }

    pub fn on_refresh(&mut self, out: &mut Vec<u32>) {
        if let Mitigation::Trr(t) = self {
            t.on_refresh(out);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn neighbors_respect_edges_and_radius() {
        let g = Geometry { rows: 8, blast_radius: 1 };
        assert_eq!(g.neighbors(0).collect::<Vec<_>>(), vec![1]);
        assert_eq!(g.neighbors(3).collect::<Vec<_>>(), vec![2, 4]);
        assert_eq!(g.neighbors(7).collect::<Vec<_>>(), vec![6]);
        let g = Geometry { rows: 8, blast_radius: 2 };
        assert_eq!(g.neighbors(1).collect::<Vec<_>>(), vec![0, 2, 3]);
    }

    #[test]
    fn config_json_is_tagged() {
        let c = MitigationConfig::Para(ParaConfig { p: 0.5, rng_seed: 3 });
        let text = serde_json::to_string(&c).unwrap();
        assert_eq!(text, r#"{"kind":"para","p":0.5,"rng_seed":3}"#);
        assert_eq!(serde_json::from_str::<MitigationConfig>(&text).unwrap(), c);
    }
}
