//! Re-measures ACmin on a simulated bank, sweeps it over on-times, and
//! computes overlap, flip-direction and crossover statistics.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bank::{Bank, BankConfig, FlipEvent, SidednessMode};
use crate::error::CharacterizeError;
use crate::mitigation::MitigationConfig;
use crate::pattern::DataPattern;
use crate::profile::{DeviceProfile, FlipDirection, Materialization, Mechanism, Sidedness};
use crate::sim::Simulation;
use crate::timing::TimingParams;
use crate::tracegen::{hammer_commands, ActivationBudget};

/// Default number of repetitions per measurement.
pub const DEFAULT_REPS: u32 = 5;
/// Default rows per characterized block at desk scale.
pub const DEFAULT_BLOCK: u32 = 64;

pub const RESULTS_CSV_HEADER: &str = "row,t_on_ns,sidedness,temp_c,acmin,reps,flips";
pub const SUMMARY_CSV_HEADER: &str = "t_on_ns,mean,min,max";

/// Builds fresh banks sharing one profile and materialization.
#[derive(Debug, Clone)]
pub struct BankFactory {
    pub profile: Arc<DeviceProfile>,
    pub materialization: Arc<Materialization>,
    pub config: BankConfig,
    /// Mitigation active during probes, reseeded per repetition.
    pub mitigation: MitigationConfig,
}

impl BankFactory {
    pub fn new(
        profile: DeviceProfile,
        rows: u32,
        cells: usize,
        seed: u64,
        config: BankConfig,
    ) -> Result<Self, CharacterizeError> {
        let materialization = Arc::new(profile.materialize(rows, cells, seed)?);
        // Fail early on a missing curve for the configured temperature.
        profile.curve(Sidedness::Single, config.temp_c)?;
        Ok(Self { profile: Arc::new(profile), materialization, config, mitigation: MitigationConfig::None })
    }

    pub fn with_mitigation(mut self, mitigation: MitigationConfig) -> Self {
        self.mitigation = mitigation;
        self
    }

    pub fn timing(&self) -> &TimingParams {
        &self.config.timing
    }

    pub fn row_count(&self) -> u32 {
        self.materialization.row_count()
    }

    /// A fresh bank with the given sidedness mode and data pattern.
    pub fn bank(&self, sidedness: SidednessMode, pattern: DataPattern) -> Result<Bank, CharacterizeError> {
        let config = BankConfig { sidedness, pattern, ..self.config.clone() };
        Ok(Bank::new(Arc::clone(&self.profile), Arc::clone(&self.materialization), config)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AcminResult {
    pub row: u32,
    pub t_on: u64,
    pub sidedness: Sidedness,
    pub temp_c: i32,
    pub acmin: u64,
    pub repetitions: u32,
    /// Victim flips after exactly `acmin` activations, in the repetition
    /// that reached the minimum.
    pub bitflip_count_at_acmin: u64,
}

/// Aggressor rows hammering `victim` for a pattern.
pub fn aggressors_for(victim: u32, sidedness: Sidedness, rows: u32) -> Result<Vec<u32>, CharacterizeError> {
    let none = CharacterizeError::NoPlacement { row: victim, sidedness };
    match sidedness {
        Sidedness::Single if victim + 1 < rows => Ok(vec![victim + 1]),
        Sidedness::Single if victim >= 1 => Ok(vec![victim - 1]),
        Sidedness::Double if victim >= 1 && victim + 1 < rows => Ok(vec![victim - 1, victim + 1]),
        _ => Err(none),
    }
}

struct Prober<'a> {
    factory: &'a BankFactory,
    victim: u32,
    aggressors: Vec<u32>,
    sidedness: Sidedness,
    t_on: u64,
    mitigation: MitigationConfig,
}

impl Prober<'_> {
    /// Victim flips after `count` activations on a fresh bank. With
    /// `stop_early`, returns as soon as one flip is seen.
    fn flips(&self, count: u64, stop_early: bool) -> Result<u64, CharacterizeError> {
        let bank = self.factory.bank(SidednessMode::Fixed(self.sidedness), self.factory.config.pattern)?;
        let victim_flips = |log: &[FlipEvent]| log.iter().filter(|e| e.row == self.victim).count() as u64;
        if matches!(self.mitigation, MitigationConfig::None) {
            let mut bank = bank;
            let mut events = Vec::new();
            bank.hammer(&self.aggressors, count, self.t_on, 0, &mut events)?;
            return Ok(victim_flips(bank.flip_log()));
        }
        let mut sim = Simulation::with_config(bank, &self.mitigation, None)?;
        let timing = *self.factory.timing();
        for cmd in hammer_commands(&self.aggressors, count, self.t_on, &timing, 0) {
            sim.step(&cmd)?;
            if stop_early && victim_flips(sim.bank().flip_log()) > 0 {
                return Ok(1);
            }
        }
        Ok(victim_flips(sim.bank().flip_log()))
    }

    /// Smallest count in `1..=max` whose probe flips the victim.
    fn search(&self, max: u64) -> Result<Option<u64>, CharacterizeError> {
        if max == 0 {
            return Ok(None);
        }
        let mut hi = 1u64;
        let mut lo = 0u64;
        loop {
            if self.flips(hi, true)? > 0 {
                break;
            }
            if hi == max {
                return Ok(None);
            }
            lo = hi;
            hi = (hi * 2).min(max);
        }
        while hi - lo > 1 {
            let mid = lo + (hi - lo) / 2;
            if self.flips(mid, true)? > 0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        Ok(Some(hi))
    }
}

/// Measures the fewest activations at `t_on` that flip a bit in `row`
/// within one refresh window, minimized over `seeds`.
///
/// Each probe runs on a fresh bank with no refresh. Seeds only reseed a
/// randomized mitigation; without one a single search serves every seed.
/// `budget` caps the count below the window capacity.
pub fn measure_acmin(
    factory: &BankFactory,
    row: u32,
    t_on: u64,
    sidedness: Sidedness,
    seeds: &[u64],
    budget: ActivationBudget,
) -> Result<AcminResult, CharacterizeError> {
    let seeds = if seeds.is_empty() { &[0][..] } else { seeds };
    let timing = factory.timing();
    let max = budget.resolve(t_on, timing).min(timing.window_capacity(t_on));
    let aggressors = aggressors_for(row, sidedness, factory.row_count())?;
    let distinct: Vec<u64> = if factory.mitigation.is_randomized() {
        seeds.iter().copied().collect::<BTreeSet<_>>().into_iter().collect()
    } else {
        seeds.iter().take(1).copied().collect()
    };
    let mut best: Option<(u64, u64)> = None;
    for seed in distinct {
        let prober = Prober {
            factory,
            victim: row,
            aggressors: aggressors.clone(),
            sidedness,
            t_on,
            mitigation: factory.mitigation.with_seed(seed),
        };
        if let Some(n) = prober.search(max)? {
            if best.is_none_or(|(b, _)| n < b) {
                best = Some((n, prober.flips(n, false)?));
            }
        }
    }
    let (acmin, flips) = best.ok_or(CharacterizeError::NotVulnerable { row, t_on, max_count: max })?;
    Ok(AcminResult {
        row,
        t_on,
        sidedness,
        temp_c: factory.config.temp_c,
        acmin,
        repetitions: seeds.len() as u32,
        bitflip_count_at_acmin: flips,
    })
}

/// The first, middle and last blocks of `block` interior rows. Rows at the
/// bank edges are skipped so both patterns can be placed.
pub fn select_rows(rows: u32, block: u32) -> Vec<u32> {
    if rows < 3 || block == 0 {
        return Vec::new();
    }
    let (first, last) = (1u32, rows - 2);
    let interior = last - first + 1;
    if 3 * block >= interior {
        return (first..=last).collect();
    }
    let mid = first + (interior - block) / 2;
    let mut out: Vec<u32> = (first..first + block).chain(mid..mid + block).chain(last + 1 - block..=last).collect();
    out.sort_unstable();
    out.dedup();
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub t_on_ns: u64,
    pub mean: f64,
    pub min: u64,
    pub max: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    /// Sorted by `(row, t_on)`.
    pub results: Vec<AcminResult>,
    /// One row per on-time, ascending.
    pub summary: Vec<SummaryRow>,
}

impl SweepResult {
    pub fn mean_at(&self, t_on: u64) -> Option<f64> {
        self.summary.iter().find(|s| s.t_on_ns == t_on).map(|s| s.mean)
    }

    pub fn results_csv(&self) -> String {
        results_csv(&self.results)
    }

    pub fn summary_csv(&self) -> String {
        summary_csv(&self.summary)
    }
}

/// Measures every `(row, t_on)` pair, in parallel on the current rayon pool.
pub fn sweep(
    factory: &BankFactory,
    rows: &[u32],
    t_on_values: &[u64],
    sidedness: Sidedness,
    seeds: &[u64],
    budget: ActivationBudget,
) -> Result<SweepResult, CharacterizeError> {
    let cells: Vec<(u32, u64)> = rows.iter().flat_map(|&r| t_on_values.iter().map(move |&t| (r, t))).collect();
    let mut results = cells
        .par_iter()
        .map(|&(row, t_on)| measure_acmin(factory, row, t_on, sidedness, seeds, budget))
        .collect::<Result<Vec<_>, _>>()?;
    results.sort_by_key(|r| (r.row, r.t_on));
    Ok(SweepResult { summary: summarize(&results), results })
}

pub fn summarize(results: &[AcminResult]) -> Vec<SummaryRow> {
    let t_ons: BTreeSet<u64> = results.iter().map(|r| r.t_on).collect();
    t_ons
        .into_iter()
        .map(|t| {
            let v: Vec<u64> = results.iter().filter(|r| r.t_on == t).map(|r| r.acmin).collect();
            SummaryRow {
                t_on_ns: t,
                mean: v.iter().sum::<u64>() as f64 / v.len() as f64,
                min: *v.iter().min().expect("non-empty"),
                max: *v.iter().max().expect("non-empty"),
            }
        })
        .collect()
}

pub fn results_csv(results: &[AcminResult]) -> String {
    let mut out = format!("{RESULTS_CSV_HEADER}\n");
    for r in results {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.row, r.t_on, r.sidedness, r.temp_c, r.acmin, r.repetitions, r.bitflip_count_at_acmin
        );
    }
    out
}

pub fn summary_csv(summary: &[SummaryRow]) -> String {
    let mut out = format!("{SUMMARY_CSV_HEADER}\n");
    for s in summary {
        let _ = writeln!(out, "{},{},{},{}", s.t_on_ns, s.mean, s.min, s.max);
    }
    out
}

/// Flips collected from one mechanism-specific run over every row.
#[derive(Debug, Clone, PartialEq)]
pub struct OverlapRun {
    pub mechanism: Mechanism,
    pub fingerprint: (String, u64, u32, usize),
    pub flips: Vec<FlipEvent>,
}

impl OverlapRun {
    pub fn cells(&self) -> BTreeSet<(u32, u32)> {
        self.flips.iter().map(|f| (f.row, f.cell)).collect()
    }
}

/// Patterns each run is repeated under so every cell is tried with both
/// stored values.
const OVERLAP_PATTERNS: [DataPattern; 2] = [DataPattern::Checkerboard, DataPattern::Inverse];

/// Hammers every row of the bank at `t_on`, enough to reach the largest
/// threshold of any cell from a single neighbor. Even rows act as aggressors
/// first, then odd rows.
fn disturb_run(factory: &BankFactory, t_on: u64) -> Result<OverlapRun, CharacterizeError> {
    let mechanism = if t_on > factory.timing().t_ras_min { Mechanism::Press } else { Mechanism::Hammer };
    let mat = &factory.materialization;
    let max_thr = mat
        .rows
        .iter()
        .filter_map(|r| match mechanism {
            Mechanism::Hammer => r.hammer.last(),
            _ => r.press.last(),
        })
        .map(|&(t, _)| t)
        .max()
        .unwrap_or(0);
    let mut flips = Vec::new();
    for pattern in OVERLAP_PATTERNS {
        let mut bank = factory.bank(SidednessMode::Fixed(Sidedness::Single), pattern)?;
        let charge = crate::fixed::charge(factory.profile.charge(t_on, Sidedness::Single, factory.config.temp_c)?);
        let count = max_thr.div_ceil(charge.max(1)).max(1);
        let mut events = Vec::new();
        let mut t = 0;
        for parity in [0, 1] {
            for row in (parity..factory.row_count()).step_by(2) {
                t = bank.hammer(&[row], count, t_on, t, &mut events)? + factory.timing().t_rc;
                events.clear();
            }
        }
        flips.extend_from_slice(bank.flip_log());
    }
    Ok(OverlapRun { mechanism, fingerprint: mat.fingerprint(), flips })
}

/// RowHammer run: every row hammered at tRAS.
pub fn hammer_run(factory: &BankFactory) -> Result<OverlapRun, CharacterizeError> {
    disturb_run(factory, factory.timing().t_ras_min)
}

/// RowPress run: every row pressed at `t_on`.
pub fn press_run(factory: &BankFactory, t_on: u64) -> Result<OverlapRun, CharacterizeError> {
    if t_on <= factory.timing().t_ras_min {
        return Err(CharacterizeError::Gen(crate::error::GenError::Invalid(format!(
            "press run needs t_on above {} ns",
            factory.timing().t_ras_min
        ))));
    }
    disturb_run(factory, t_on)
}

/// Retention run: no activations, checked after `wait` without refresh.
pub fn retention_run(factory: &BankFactory, wait: u64) -> Result<OverlapRun, CharacterizeError> {
    let mut flips = Vec::new();
    for pattern in OVERLAP_PATTERNS {
        let mut bank = factory.bank(SidednessMode::Auto, pattern)?;
        bank.check_retention(wait)?;
        flips.extend_from_slice(bank.flip_log());
    }
    Ok(OverlapRun { mechanism: Mechanism::Retention, fingerprint: factory.materialization.fingerprint(), flips })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DirectionHistogram {
    pub one_to_zero: u64,
    pub zero_to_one: u64,
}

impl DirectionHistogram {
    fn from_flips(flips: &[FlipEvent]) -> Self {
        let mut h = Self::default();
        for f in flips {
            match f.direction {
                FlipDirection::OneToZero => h.one_to_zero += 1,
                FlipDirection::ZeroToOne => h.zero_to_one += 1,
            }
        }
        h
    }

    pub fn total(&self) -> u64 {
        self.one_to_zero + self.zero_to_one
    }

    pub fn one_to_zero_fraction(&self) -> f64 {
        self.one_to_zero as f64 / self.total().max(1) as f64
    }

    pub fn zero_to_one_fraction(&self) -> f64 {
        self.zero_to_one as f64 / self.total().max(1) as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapReport {
    pub total_cells: u64,
    pub press_cells: u64,
    pub hammer_cells: u64,
    pub retention_cells: u64,
    pub press_and_hammer: u64,
    pub press_and_retention: u64,
    /// `|Press ∩ Hammer| / |Press|`.
    pub press_hammer_fraction: f64,
    /// `|Press ∩ Retention| / |Press|`.
    pub press_retention_fraction: f64,
    pub press_directions: DirectionHistogram,
    pub hammer_directions: DirectionHistogram,
    pub retention_directions: DirectionHistogram,
}

/// Intersects the flipped-cell sets of the three runs.
pub fn overlap_and_direction(
    materialization: &Materialization,
    hammer: &OverlapRun,
    press: &OverlapRun,
    retention: &OverlapRun,
) -> Result<OverlapReport, CharacterizeError> {
    let fp = materialization.fingerprint();
    if [hammer, press, retention].iter().any(|r| r.fingerprint != fp) {
        return Err(CharacterizeError::MismatchedMaterialization);
    }
    let (h, p, r) = (hammer.cells(), press.cells(), retention.cells());
    let ph = p.intersection(&h).count() as u64;
    let pr = p.intersection(&r).count() as u64;
    let denom = p.len().max(1) as f64;
    Ok(OverlapReport {
        total_cells: materialization.row_count() as u64 * materialization.cells_per_row() as u64,
        press_cells: p.len() as u64,
        hammer_cells: h.len() as u64,
        retention_cells: r.len() as u64,
        press_and_hammer: ph,
        press_and_retention: pr,
        press_hammer_fraction: ph as f64 / denom,
        press_retention_fraction: pr as f64 / denom,
        press_directions: DirectionHistogram::from_flips(&press.flips),
        hammer_directions: DirectionHistogram::from_flips(&hammer.flips),
        retention_directions: DirectionHistogram::from_flips(&retention.flips),
    })
}

/// `ACmin_single - ACmin_double` at `t_on`.
pub fn sidedness_difference(profile: &DeviceProfile, t_on: u64, temp_c: i32) -> Result<f64, CharacterizeError> {
    Ok(profile.acmin_at(t_on, Sidedness::Single, temp_c)? - profile.acmin_at(t_on, Sidedness::Double, temp_c)?)
}

/// Sample points for scanning `[lo, hi]`: every curve anchor inside the
/// range plus `samples` log-spaced points.
fn scan_points(
    profile: &DeviceProfile,
    lo: u64,
    hi: u64,
    temp_c: i32,
    samples: usize,
) -> Result<Vec<u64>, CharacterizeError> {
    let mut pts: BTreeSet<u64> = [lo, hi].into_iter().collect();
    for s in [Sidedness::Single, Sidedness::Double] {
        pts.extend(profile.curve(s, temp_c)?.anchors().iter().map(|a| a.0).filter(|&t| t >= lo && t <= hi));
    }
    let (a, b) = ((lo.max(1)) as f64, (hi.max(1)) as f64);
    for i in 0..samples {
        let x = (a.ln() + (b.ln() - a.ln()) * i as f64 / (samples.max(2) - 1) as f64).exp();
        pts.insert((x.round() as u64).clamp(lo, hi));
    }
    Ok(pts.into_iter().collect())
}

/// Brackets `(a, b)` of consecutive scan points where the single-minus-double
/// difference changes strict sign. Zeros are skipped over.
pub fn sign_changes(
    profile: &DeviceProfile,
    lo: u64,
    hi: u64,
    temp_c: i32,
    samples: usize,
) -> Result<Vec<(u64, u64)>, CharacterizeError> {
    let mut out = Vec::new();
    let mut prev: Option<(u64, f64)> = None;
    for t in scan_points(profile, lo, hi, temp_c, samples)? {
        let d = sidedness_difference(profile, t, temp_c)?;
        if d == 0.0 {
            continue;
        }
        if let Some((pt, pd)) = prev {
            if pd.signum() != d.signum() {
                out.push((pt, t));
            }
        }
        prev = Some((t, d));
    }
    Ok(out)
}

/// First on-time in `[lo, hi]` at which the single-minus-double difference
/// takes the sign it has at `hi`, found by bisection. `None` without a sign
/// change.
pub fn crossover_scan(
    profile: &DeviceProfile,
    lo: u64,
    hi: u64,
    temp_c: i32,
) -> Result<Option<u64>, CharacterizeError> {
    let Some(&(mut a, mut b)) = sign_changes(profile, lo, hi, temp_c, 512)?.first() else {
        return Ok(None);
    };
    let sign_b = sidedness_difference(profile, b, temp_c)?.signum();
    while b - a > 1 {
        let m = a + (b - a) / 2;
        let d = sidedness_difference(profile, m, temp_c)?;
        if d != 0.0 && d.signum() == sign_b {
            b = m;
        } else {
            a = m;
        }
    }
    Ok(Some(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::profile::builtin;
    use crate::timing::MS;

    fn factory(profile: &str, temp: i32, rows: u32) -> BankFactory {
        let p = builtin(profile).unwrap();
        BankFactory::new(p, rows, 64, 7, BankConfig::new(temp)).unwrap()
    }

    #[test]
    fn zero_variation_tras_is_base_threshold() {
        let p = builtin("paper-mean-80C").unwrap().zero_variation();
        let f = BankFactory::new(p, 8, 64, 1, BankConfig::new(80)).unwrap();
        let r =
            measure_acmin(&f, 3, 36, Sidedness::Single, &[0, 1, 2, 3, 4], ActivationBudget::FillRefreshWindow).unwrap();
        assert_eq!(r.acmin, 32_000);
        assert_eq!(r.repetitions, 5);
        assert!(r.bitflip_count_at_acmin >= 1);
    }

    #[test]
    fn thirty_ms_needs_one_activation() {
        let p = builtin("paper-mean-80C").unwrap().zero_variation();
        let f = BankFactory::new(p, 8, 64, 1, BankConfig::new(80)).unwrap();
        let r = measure_acmin(&f, 3, 30 * MS, Sidedness::Single, &[0], ActivationBudget::FillRefreshWindow).unwrap();
        assert_eq!(r.acmin, 1);
    }

    #[test]
    fn budget_too_small_is_not_vulnerable() {
        let f = factory("paper-mean-80C", 80, 8);
        let e = measure_acmin(&f, 3, 36, Sidedness::Single, &[0], ActivationBudget::Count(10)).unwrap_err();
        assert!(matches!(e, CharacterizeError::NotVulnerable { max_count: 10, .. }));
    }

    #[test]
    fn edge_rows_have_no_double_placement() {
        assert!(aggressors_for(0, Sidedness::Double, 8).is_err());
        assert_eq!(aggressors_for(7, Sidedness::Single, 8).unwrap(), vec![6]);
    }

    #[test]
    fn row_selection_blocks() {
        assert_eq!(select_rows(10, 64), (1..=8).collect::<Vec<_>>());
        let rows = select_rows(1024, 4);
        assert_eq!(rows, vec![1, 2, 3, 4, 510, 511, 512, 513, 1019, 1020, 1021, 1022]);
    }

    #[test]
    fn empty_sweep_is_empty() {
        let f = factory("paper-mean-80C", 80, 8);
        let s = sweep(&f, &[1, 2], &[], Sidedness::Single, &[0], ActivationBudget::FillRefreshWindow).unwrap();
        assert!(s.results.is_empty() && s.summary.is_empty());
        assert_eq!(s.results_csv(), format!("{RESULTS_CSV_HEADER}\n"));
    }

    #[test]
    fn crossover_profile_has_one_crossing() {
        let p = builtin("crossover").unwrap();
        let t = p.temperatures()[0];
        assert_eq!(sign_changes(&p, 36, 30 * MS, t, 512).unwrap().len(), 1);
        let x = crossover_scan(&p, 36, 30 * MS, t).unwrap().unwrap();
        assert!(sidedness_difference(&p, x, t).unwrap() > 0.0);
        assert!(sidedness_difference(&p, x - 1, t).unwrap() <= 0.0);
    }

    #[test]
    fn mismatched_runs_are_rejected() {
        let a = factory("paper-mean-80C", 80, 8);
        let b = BankFactory::new(builtin("paper-mean-80C").unwrap(), 8, 64, 8, BankConfig::new(80)).unwrap();
        let h = hammer_run(&a).unwrap();
        let p = press_run(&b, 70_200).unwrap();
        let r = retention_run(&a, 1).unwrap();
        assert_eq!(
            overlap_and_direction(&a.materialization, &h, &p, &r),
            Err(CharacterizeError::MismatchedMaterialization)
        );
    }
}
