//! Mitigation evaluation: adversarial pattern suites, PARA Monte Carlo,
//! demonstration traces under TRR, and controller overhead.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bank::{FlipEvent, SidednessMode};
use crate::characterize::BankFactory;
use crate::command::Command;
use crate::controller::{measure_overhead, OverheadPoint};
use crate::error::{CharacterizeError, GenError};
use crate::mitigation::{CapPolicy, Geometry, MitigationConfig, Para, ParaConfig};
use crate::profile::DeviceProfile;
use crate::sim::{SimStats, Simulation};
use crate::timing::TimingParams;
use crate::tracegen::{gen_poc, gen_requests, PocParams, RowMapping};

/// One attack: `(row, t_on)` activations repeated cyclically.
pub type Pattern = Vec<(u32, u64)>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdversarialSuite {
    /// Rows the exhaustive family draws aggressors from.
    pub rows: Vec<u32>,
    pub t_on_values: Vec<u64>,
    /// Longest cycle in the exhaustive family.
    pub max_len: usize,
    /// Activations issued per pattern.
    pub activations: u64,
    /// Random patterns over the whole bank, on top of the exhaustive family.
    pub random_patterns: u32,
    pub seed: u64,
}

impl AdversarialSuite {
    /// Exhaustive family over rows 7, 8, 9 of a 16-row bank.
    pub fn small_bank() -> Self {
        Self {
            rows: vec![7, 8, 9],
            t_on_values: vec![36, 7_800, 70_200],
            max_len: 4,
            activations: 2_000,
            random_patterns: 500,
            seed: 0,
        }
    }

    /// Every sequence of length `1..=max_len` over `rows x t_on_values`.
    pub fn exhaustive(&self) -> Vec<Pattern> {
        let symbols: Vec<(u32, u64)> =
            self.rows.iter().flat_map(|&r| self.t_on_values.iter().map(move |&t| (r, t))).collect();
        let mut out = Vec::new();
        let mut frontier: Vec<Pattern> = vec![Vec::new()];
        for _ in 0..self.max_len {
            let mut next = Vec::with_capacity(frontier.len() * symbols.len());
            for p in &frontier {
                for &s in &symbols {
                    let mut q = p.clone();
                    q.push(s);
                    next.push(q);
                }
            }
            out.extend(next.iter().cloned());
            frontier = next;
        }
        out
    }

    /// Random cycles of 1 to 8 activations over all rows, with on-times
    /// log-uniform between the smallest and largest configured values.
    pub fn random(&self, bank_rows: u32) -> Vec<Pattern> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let lo = (*self.t_on_values.iter().min().unwrap_or(&36) as f64).ln();
        let hi = (*self.t_on_values.iter().max().unwrap_or(&36) as f64).ln();
        (0..self.random_patterns)
            .map(|_| {
                let len = rng.gen_range(1..=8);
                (0..len)
                    .map(|_| {
                        let t = if hi > lo { rng.gen_range(lo..=hi).exp().round() as u64 } else { lo.exp() as u64 };
                        (rng.gen_range(0..bank_rows), t)
                    })
                    .collect()
            })
            .collect()
    }
}

/// Worst cases built by hand around a victim row: long double- and
/// single-sided presses, on-times just under and over the cap, and hammer
/// bursts that end in a long activation.
pub fn handcrafted_patterns(victim: u32, rows: u32, cap: u64, long: u64) -> Vec<Pattern> {
    let (a, b) = (victim - 1, victim + 1);
    let mut out = vec![
        vec![(a, long), (b, long)],
        vec![(a, long)],
        vec![(a, cap), (b, cap)],
        vec![(a, cap + 1), (b, cap + 1)],
        vec![(a, cap.saturating_sub(1).max(36)), (b, cap.saturating_sub(1).max(36))],
        vec![(a, 36), (b, 36)],
    ];
    for k in [1usize, 5, 20, 30] {
        let mut p: Pattern = std::iter::repeat_n([(a, 36), (b, 36)], k).flatten().collect();
        p.push((a, long));
        p.push((b, long));
        out.push(p);
    }
    // Decoys spread over the bank to crowd the tracker table.
    let decoys: Pattern = (0..rows).filter(|r| r.abs_diff(victim) > 2).map(|r| (r, 36)).collect();
    let mut p = decoys.clone();
    p.extend([(a, long), (b, long)]);
    out.push(p);
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternOutcome {
    pub pattern: Pattern,
    pub flips: u64,
    pub stats: SimStatsRecord,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimStatsRecord {
    pub activations: u64,
    pub neighbor_refreshes: u64,
    pub forced_precharges: u64,
}

impl From<SimStats> for SimStatsRecord {
    fn from(s: SimStats) -> Self {
        Self {
            activations: s.activations,
            neighbor_refreshes: s.neighbor_refreshes,
            forced_precharges: s.forced_precharges,
        }
    }
}

/// Commands of `pattern` repeated for `activations` activations.
pub fn pattern_commands<'a>(
    pattern: &'a [(u32, u64)],
    activations: u64,
    timing: &TimingParams,
) -> impl Iterator<Item = Command> + 'a {
    let t_rc = timing.t_rc;
    let mut t = 0u64;
    (0..activations).flat_map(move |k| {
        let (row, t_on) = pattern[(k % pattern.len() as u64) as usize];
        let at = t;
        t += t_on + t_rc;
        [Command::act(row, at), Command::pre(row, at + t_on)]
    })
}

/// Runs one pattern on a fresh bank with the factory's mitigation.
pub fn run_pattern(
    factory: &BankFactory,
    cap: Option<CapPolicy>,
    pattern: &[(u32, u64)],
    activations: u64,
) -> Result<PatternOutcome, CharacterizeError> {
    let bank = factory.bank(factory.config.sidedness, factory.config.pattern)?;
    let mut sim = Simulation::with_config(bank, &factory.mitigation, cap)?;
    let timing = *factory.timing();
    let mut end = 0;
    for cmd in pattern_commands(pattern, activations, &timing) {
        end = cmd.timestamp;
        sim.step(&cmd)?;
    }
    sim.finish(end)?;
    Ok(PatternOutcome {
        pattern: pattern.to_vec(),
        flips: sim.bank().flip_log().len() as u64,
        stats: sim.stats().into(),
    })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub patterns: u64,
    pub flipped_patterns: u64,
    pub total_flips: u64,
    /// Pattern with the most flips, if any flipped.
    pub worst: Option<PatternOutcome>,
}

impl SuiteReport {
    fn add(&mut self, o: PatternOutcome) {
        self.patterns += 1;
        self.total_flips += o.flips;
        if o.flips > 0 {
            self.flipped_patterns += 1;
            if self.worst.as_ref().is_none_or(|w| o.flips > w.flips) {
                self.worst = Some(o);
            }
        }
    }
}

/// Runs the exhaustive, random and handcrafted patterns.
pub fn run_adversarial_suite(
    factory: &BankFactory,
    cap: Option<CapPolicy>,
    suite: &AdversarialSuite,
) -> Result<SuiteReport, CharacterizeError> {
    let rows = factory.row_count();
    if suite.rows.iter().any(|&r| r >= rows) {
        return Err(GenError::Invalid(format!("suite rows must be below {rows}")).into());
    }
    let victim = suite.rows.iter().copied().max().unwrap_or(1).saturating_sub(1).clamp(1, rows.saturating_sub(2));
    let cap_ns = cap.map_or(factory.timing().t_refi, |c| c.t_on_cap);
    let long = *suite.t_on_values.iter().max().unwrap_or(&factory.timing().t_ron_max_jedec);
    let mut report = SuiteReport::default();
    let patterns = suite
        .exhaustive()
        .into_iter()
        .chain(suite.random(rows))
        .chain(handcrafted_patterns(victim, rows, cap_ns, long));
    for p in patterns {
        report.add(run_pattern(factory, cap, &p, suite.activations)?);
    }
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParaMonteCarlo {
    pub p: f64,
    pub rng_seed: u64,
    pub windows: u64,
    /// Activations per refresh window, alternating between the two
    /// aggressors around the victim.
    pub activations_per_window: u64,
    /// Activations since the victim's last refresh that flip it.
    pub flip_after: u64,
    pub blast_radius: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParaMonteCarloResult {
    pub windows: u64,
    pub flipped_windows: u64,
    pub flip_probability: f64,
    /// One-sided 95% upper confidence bound on the flip probability.
    pub upper_95: f64,
}

/// Activations that flip a victim at `t_on` when `tras_acts` do at tRAS.
pub fn activations_to_flip(
    profile: &DeviceProfile,
    temp_c: i32,
    tras_acts: u64,
    t_on: u64,
) -> Result<u64, CharacterizeError> {
    let scale = profile.worst_charge(t_on, temp_c)? / profile.worst_charge(profile.t_ras_min(), temp_c)?;
    Ok(((tras_acts as f64 / scale).ceil() as u64).max(1))
}

/// Union bound on the probability that some run of `flip_after`
/// consecutive activations within a window escapes every PARA refresh.
pub fn para_window_bound(p: f64, blast_radius: u32, flip_after: u64, activations_per_window: u64) -> f64 {
    let slots = 2.0 * blast_radius as f64;
    let runs = activations_per_window.saturating_sub(flip_after) + 1;
    (runs as f64 * (1.0 - p / slots).powf(flip_after as f64)).min(1.0)
}

/// Double-sided attack windows against PARA, counting windows in which the
/// victim accumulates `flip_after` activations without a refresh.
///
/// Each window starts from a refreshed victim. The victim is charged at
/// every precharge before PARA decides whether to refresh it.
pub fn para_monte_carlo(cfg: &ParaMonteCarlo) -> Result<ParaMonteCarloResult, CharacterizeError> {
    let para_cfg = ParaConfig { p: cfg.p, rng_seed: cfg.rng_seed };
    MitigationConfig::Para(para_cfg.clone()).validate()?;
    let victim = 2 * cfg.blast_radius + 1;
    let geometry = Geometry { rows: 2 * victim + 1, blast_radius: cfg.blast_radius };
    let mut para = Para::new(para_cfg, geometry);
    let aggressors = [victim - 1, victim + 1];
    let mut flipped = 0u64;
    for _ in 0..cfg.windows {
        let mut since_refresh = 0u64;
        for k in 0..cfg.activations_per_window {
            let row = aggressors[(k % 2) as usize];
            since_refresh += 1;
            if since_refresh >= cfg.flip_after {
                flipped += 1;
                break;
            }
            if para.on_precharge(row) == Some(victim) {
                since_refresh = 0;
            }
        }
    }
    let n = cfg.windows.max(1) as f64;
    let phat = flipped as f64 / n;
    Ok(ParaMonteCarloResult {
        windows: cfg.windows,
        flipped_windows: flipped,
        flip_probability: phat,
        upper_95: wilson_upper(flipped, cfg.windows, 1.645),
    })
}

/// Wilson score upper bound.
pub fn wilson_upper(successes: u64, trials: u64, z: f64) -> f64 {
    if trials == 0 {
        return 1.0;
    }
    let n = trials as f64;
    let p = successes as f64 / n;
    let z2 = z * z;
    let center = p + z2 / (2.0 * n);
    let margin = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
    ((center + margin) / (1.0 + z2 / n)).min(1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PocReport {
    pub num_reads: u32,
    pub t_on_ns: u64,
    /// Flips anywhere in the bank, including rows next to dummies.
    pub flips: u64,
    pub flipped_rows: u64,
    /// Flips in the attacked victim rows only.
    pub victim_flips: u64,
    pub victim_rows_flipped: u64,
    pub activations: u64,
    pub neighbor_refreshes: u64,
    pub flip_log: Vec<FlipEvent>,
}

/// Replays a demonstration trace against the factory's bank and mitigation.
pub fn run_poc(
    factory: &BankFactory,
    params: &PocParams,
    mapping: &RowMapping,
) -> Result<PocReport, CharacterizeError> {
    if mapping.rows != factory.row_count() {
        return Err(GenError::Invalid(format!(
            "mapping covers {} rows but the bank has {}",
            mapping.rows,
            factory.row_count()
        ))
        .into());
    }
    let timing = *factory.timing();
    let trace = gen_poc(params, mapping, &timing)?;
    let bank = factory.bank(SidednessMode::Auto, factory.config.pattern)?;
    let mut sim = Simulation::with_config(bank, &factory.mitigation, None)?;
    sim.run(&trace)?;
    let log = sim.bank().flip_log().to_vec();
    let rows: BTreeSet<u32> = log.iter().map(|f| f.row).collect();
    let victims: BTreeSet<u32> = params.victim_rows.iter().map(|&v| mapping.to_physical(v)).collect();
    Ok(PocReport {
        num_reads: params.num_reads,
        t_on_ns: params.t_on(&timing),
        flips: log.len() as u64,
        flipped_rows: rows.len() as u64,
        victim_flips: log.iter().filter(|f| victims.contains(&f.row)).count() as u64,
        victim_rows_flipped: rows.intersection(&victims).count() as u64,
        activations: sim.stats().activations,
        neighbor_refreshes: sim.stats().neighbor_refreshes,
        flip_log: log,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrafficSpec {
    pub rows: u32,
    /// Requests per microsecond.
    pub request_rate: f64,
    pub duration_ns: u64,
    pub locality: f64,
}

/// Capped-policy overhead on one seeded random request stream.
pub fn overhead_for_seed(
    traffic: &TrafficSpec,
    seed: u64,
    caps: &[u64],
    timing: &TimingParams,
) -> Result<Vec<OverheadPoint>, CharacterizeError> {
    let requests = gen_requests(traffic.rows, traffic.request_rate, traffic.duration_ns, traffic.locality, seed)?;
    Ok(measure_overhead(&requests, timing, caps))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bank::BankConfig;
    use crate::mitigation::{adapt, AdaptationConfig, GrapheneConfig};
    use crate::profile::builtin;

    fn graphene_factory(threshold: f64, weighted: bool) -> BankFactory {
        let p = builtin("paper-mean-80C").unwrap().zero_variation().with_base_threshold(64);
        BankFactory::new(p, 16, 64, 3, BankConfig::new(80)).unwrap().with_mitigation(MitigationConfig::Graphene(
            GrapheneConfig { table_size: 16, threshold, weighted_increments: weighted },
        ))
    }

    #[test]
    fn exhaustive_family_size() {
        let s = AdversarialSuite { max_len: 2, ..AdversarialSuite::small_bank() };
        assert_eq!(s.exhaustive().len(), 9 + 81);
    }

    #[test]
    fn unadapted_graphene_fails_single_long_activation() {
        let f = graphene_factory(31.0, false);
        let o = run_pattern(&f, None, &[(7, 70_200)], 1).unwrap();
        assert!(o.flips > 0);
    }

    #[test]
    fn adapted_graphene_survives_handcrafted() {
        let base = graphene_factory(31.0, true);
        let a = adapt(&base.mitigation, &AdaptationConfig { t_on_cap: 7_800 }, &base.profile, 80, base.timing(), 1)
            .unwrap();
        let f = base.clone().with_mitigation(a.mitigation.clone());
        for p in handcrafted_patterns(8, 16, 7_800, 70_200) {
            assert_eq!(run_pattern(&f, Some(a.policy), &p, 2_000).unwrap().flips, 0, "{p:?}");
        }
    }

    #[test]
    fn para_certain_refresh_never_flips() {
        let r = para_monte_carlo(&ParaMonteCarlo {
            p: 1.0,
            rng_seed: 0,
            windows: 100,
            activations_per_window: 1000,
            flip_after: 3,
            blast_radius: 1,
        })
        .unwrap();
        // p = 1 refreshes a random neighbor slot: the victim half the time.
        assert!(r.flipped_windows > 0);
        let r = para_monte_carlo(&ParaMonteCarlo {
            p: 1.0,
            rng_seed: 0,
            windows: 100,
            activations_per_window: 1000,
            flip_after: 1_001,
            blast_radius: 1,
        })
        .unwrap();
        assert_eq!(r.flipped_windows, 0);
    }

    #[test]
    fn wilson_bound_brackets() {
        assert!(wilson_upper(0, 100_000, 1.645) < 3e-5);
        assert!(wilson_upper(50, 100, 1.645) > 0.5);
    }
}
