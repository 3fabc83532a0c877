use serde::{Deserialize, Serialize};

use super::{GrapheneConfig, MitigationConfig, ParaConfig};
use crate::error::MitigationError;
use crate::profile::DeviceProfile;
use crate::timing::TimingParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdaptationConfig {
    /// Longest on-time the controller allows before forcing a precharge.
    pub t_on_cap: u64,
}

/// Controller row-buffer policy: close any row open for `t_on_cap` and
/// re-activate it if a request to the same row is still pending.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CapPolicy {
    pub t_on_cap: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptationMetadata {
    pub t_on_cap_ns: u64,
    /// Disturbance of one activation at the cap relative to one at tRAS.
    pub scale: f64,
    pub original: MitigationConfig,
    pub adapted: MitigationConfig,
    /// Human-readable derivation of the adapted parameters.
    pub rule: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adapted {
    pub mitigation: MitigationConfig,
    pub policy: CapPolicy,
    pub metadata: AdaptationMetadata,
}

/// Rescales `config` for a device whose activations may stay open up to
/// `adaptation.t_on_cap`, and returns the matching controller policy.
pub fn adapt(
    config: &MitigationConfig,
    adaptation: &AdaptationConfig,
    profile: &DeviceProfile,
    temp_c: i32,
    timing: &TimingParams,
    blast_radius: u32,
) -> Result<Adapted, MitigationError> {
    config.validate()?;
    let cap = adaptation.t_on_cap;
    let (min, max) = (timing.t_ras_min, timing.t_ron_max_jedec);
    if cap < min || cap > max {
        return Err(MitigationError::CapOutOfRange { cap, min, max });
    }
    let scale = profile.worst_charge(cap, temp_c)? / profile.worst_charge(min, temp_c)?;
    if scale < 1.0 {
        return Err(MitigationError::ScaleBelowOne(scale));
    }
    let (adapted, rule) = match config {
        MitigationConfig::None => (MitigationConfig::None, "no mitigation; only the on-time cap applies".to_string()),
        MitigationConfig::Trr(c) => {
            (MitigationConfig::Trr(c.clone()), "sampler parameters unchanged; only the on-time cap applies".to_string())
        }
        MitigationConfig::Para(c) => {
            let slots = 2.0 * blast_radius as f64;
            let p = if scale == 1.0 { c.p } else { (slots * (1.0 - (1.0 - c.p / slots).powf(scale))).min(1.0) };
            let mut rule = format!(
                "p' = k * (1 - (1 - p/k)^scale) with k = {slots} neighbor slots and scale = {scale:.6}; \
                 a victim survives one adjacent precharge with probability 1 - p/k, so \
                 (1 - p'/k)^(N/scale) = (1 - p/k)^N keeps the per-window miss probability at the \
                 reduced threshold N/scale equal to the original one at N"
            );
            if p >= 1.0 {
                rule.push_str("; clamped to p' = 1, so the original miss probability is not matched");
            }
            (MitigationConfig::Para(ParaConfig { p, rng_seed: c.rng_seed }), rule)
        }
        MitigationConfig::Graphene(c) => {
            let (threshold, rule) = if c.weighted_increments {
                let t = (c.threshold - (scale - 1.0) / 2.0).floor().max(1.0);
                (
                    t,
                    format!(
                        "weighted increments: threshold' = floor(threshold - (scale - 1) / 2) with scale = {scale:.6}; \
                         counts already track disturbance, and the shift absorbs the larger charge of the \
                         activation that crosses the threshold"
                    ),
                )
            } else {
                let t = (c.threshold / scale).floor().max(1.0);
                (t, format!("threshold' = floor(threshold / scale) with scale = {scale:.6}"))
            };
            (MitigationConfig::Graphene(GrapheneConfig { threshold, ..c.clone() }), rule)
        }
    };
    Ok(Adapted {
        mitigation: adapted.clone(),
        policy: CapPolicy { t_on_cap: cap },
        metadata: AdaptationMetadata { t_on_cap_ns: cap, scale, original: config.clone(), adapted, rule },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mitigation::para_miss_probability;
    use crate::profile::builtin;

    fn graphene(threshold: f64, weighted: bool) -> MitigationConfig {
        MitigationConfig::Graphene(GrapheneConfig { table_size: 16, threshold, weighted_increments: weighted })
    }

    fn run(config: &MitigationConfig, profile: &str, temp: i32, cap: u64) -> Result<Adapted, MitigationError> {
        let p = builtin(profile).unwrap();
        adapt(config, &AdaptationConfig { t_on_cap: cap }, &p, temp, &TimingParams::default(), 1)
    }

    #[test]
    fn cap_at_tras_is_identity() {
        for cfg in [
            graphene(1000.0, false),
            graphene(1000.0, true),
            MitigationConfig::Para(ParaConfig { p: 0.01, rng_seed: 9 }),
        ] {
            let a = run(&cfg, "paper-mean-80C", 80, 36).unwrap();
            assert_eq!(a.mitigation, cfg);
            assert_eq!(a.metadata.scale, 1.0);
            assert_eq!(a.policy.t_on_cap, 36);
        }
    }

    #[test]
    fn graphene_threshold_divided_by_21_at_50c() {
        let a = run(&graphene(100_000.0, false), "paper-mean-50C", 50, 7_800).unwrap();
        let MitigationConfig::Graphene(g) = a.mitigation else { panic!() };
        assert!((100_000.0 / g.threshold / 21.0 - 1.0).abs() < 0.01);
    }

    #[test]
    fn out_of_range_cap() {
        assert!(matches!(
            run(&MitigationConfig::None, "paper-mean-80C", 80, 10),
            Err(MitigationError::CapOutOfRange { .. })
        ));
        assert!(matches!(
            run(&MitigationConfig::None, "paper-mean-80C", 80, 70_201),
            Err(MitigationError::CapOutOfRange { .. })
        ));
    }

    #[test]
    fn adapted_para_matches_original_miss_probability() {
        let cfg = MitigationConfig::Para(ParaConfig { p: 0.02, rng_seed: 0 });
        let a = run(&cfg, "paper-mean-80C", 80, 7_800).unwrap();
        let MitigationConfig::Para(p) = &a.mitigation else { panic!() };
        let n = 2000u64;
        let n_adapted = (n as f64 / a.metadata.scale).ceil() as u64;
        assert!(para_miss_probability(p.p, 2, n_adapted) <= para_miss_probability(0.02, 2, n) * (1.0 + 1e-9));
        assert!(a.metadata.rule.contains("p' ="));
    }

    #[test]
    fn larger_cap_never_raises_threshold() {
        for weighted in [false, true] {
            let mut prev = f64::INFINITY;
            for cap in [36, 100, 1_000, 7_800, 20_000, 70_200] {
                let a = run(&graphene(5_000.0, weighted), "paper-mean-80C", 80, cap).unwrap();
                let MitigationConfig::Graphene(g) = a.mitigation else { panic!() };
                assert!(g.threshold <= prev);
                prev = g.threshold;
            }
        }
    }
}
