//! Trace generators: conventional hammering, on-time sweeps, the two
//! demonstration programs, and random traffic.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::command::{Command, CommandKind, Trace};
use crate::controller::{lower_open_page, Request};
use crate::error::GenError;
use crate::pattern::DataPattern;
use crate::profile::Sidedness;
use crate::timing::TimingParams;

/// How many activations a hammer trace performs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActivationBudget {
    Count(u64),
    /// As many as fit strictly inside one refresh window.
    FillRefreshWindow,
}

impl ActivationBudget {
    pub fn resolve(self, t_on: u64, timing: &TimingParams) -> u64 {
        match self {
            ActivationBudget::Count(n) => n,
            ActivationBudget::FillRefreshWindow => timing.window_capacity(t_on),
        }
    }
}

/// Checks an aggressor set against a sidedness.
pub fn check_aggressors(aggressors: &[u32], sidedness: Sidedness) -> Result<(), GenError> {
    match sidedness {
        Sidedness::Single if aggressors.len() == 1 => Ok(()),
        Sidedness::Single => Err(GenError::AggressorCount(aggressors.len())),
        Sidedness::Double => match *aggressors {
            [a, b] if a.abs_diff(b) == 2 => Ok(()),
            [a, b] => Err(GenError::NotSandwiching { a, b }),
            _ => Err(GenError::AggressorCount(aggressors.len())),
        },
    }
}

/// Lazy ACT/PRE stream cycling over `aggressors`, starting at `start`.
///
/// Each activation stays open exactly `t_on` and the next one follows
/// `t_rc` after the precharge.
pub fn hammer_commands<'a>(
    aggressors: &'a [u32],
    count: u64,
    t_on: u64,
    timing: &TimingParams,
    start: u64,
) -> impl Iterator<Item = Command> + 'a {
    let period = t_on + timing.t_rc;
    (0..count).flat_map(move |k| {
        let row = aggressors[(k % aggressors.len() as u64) as usize];
        let at = start + k * period;
        [Command::act(row, at), Command::pre(row, at + t_on)]
    })
}

/// Conventional single- or double-sided pattern at a fixed on-time.
pub fn gen_hammer(
    aggressors: &[u32],
    sidedness: Sidedness,
    budget: ActivationBudget,
    t_on: u64,
    timing: &TimingParams,
) -> Result<Trace, GenError> {
    check_aggressors(aggressors, sidedness)?;
    if t_on < timing.t_ras_min {
        return Err(GenError::BadSweep { min: timing.t_ras_min });
    }
    let count = budget.resolve(t_on, timing);
    if count == 0 {
        return Err(GenError::DoesNotFit { t_on, window: timing.t_refw });
    }
    Ok(Trace::from_commands(hammer_commands(aggressors, count, t_on, timing, 0).collect()).expect("generated in order"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub t_on_values: Vec<u64>,
    pub sidedness: Sidedness,
    pub activation_budget: ActivationBudget,
    #[serde(default)]
    pub data_pattern: DataPattern,
}

impl SweepSpec {
    pub fn validate(&self, timing: &TimingParams) -> Result<(), GenError> {
        let sorted = self.t_on_values.windows(2).all(|w| w[0] <= w[1]);
        if !sorted || self.t_on_values.first().is_some_and(|&t| t < timing.t_ras_min) {
            return Err(GenError::BadSweep { min: timing.t_ras_min });
        }
        for &t in &self.t_on_values {
            if timing.window_capacity(t) == 0 {
                return Err(GenError::DoesNotFit { t_on: t, window: timing.t_refw });
            }
        }
        Ok(())
    }
}

/// One trace per on-time, each ending before the refresh window elapses.
pub fn gen_rowpress_sweep(spec: &SweepSpec, aggressors: &[u32], timing: &TimingParams) -> Result<Vec<Trace>, GenError> {
    spec.validate(timing)?;
    spec.t_on_values
        .iter()
        .map(|&t| {
            let count = spec.activation_budget.resolve(t, timing).min(timing.window_capacity(t));
            gen_hammer(aggressors, spec.sidedness, ActivationBudget::Count(count), t, timing)
        })
        .collect()
}

/// Logical-to-physical row mapping of the bank.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MappingKind {
    #[default]
    Identity,
    /// Physical row = logical row XOR mask (self-inverse).
    Xor { mask: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RowMapping {
    pub rows: u32,
    #[serde(default)]
    pub kind: MappingKind,
}

impl RowMapping {
    pub fn identity(rows: u32) -> Self {
        Self { rows, kind: MappingKind::Identity }
    }

    pub fn to_physical(&self, logical: u32) -> u32 {
        match self.kind {
            MappingKind::Identity => logical,
            MappingKind::Xor { mask } => logical ^ mask,
        }
    }

    pub fn to_logical(&self, physical: u32) -> u32 {
        self.to_physical(physical)
    }

    /// Logical addresses of the two rows physically sandwiching `victim`.
    pub fn find_aggressor_rows(&self, victim: u32) -> Result<(u32, u32), GenError> {
        let err = GenError::Mapping { victim, rows: self.rows };
        if victim >= self.rows {
            return Err(err);
        }
        let p = self.to_physical(victim);
        if p == 0 || p + 1 >= self.rows {
            return Err(err);
        }
        let (a, b) = (self.to_logical(p - 1), self.to_logical(p + 1));
        if a >= self.rows || b >= self.rows {
            return Err(err);
        }
        Ok((a, b))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AccessOrder {
    /// Read every block, then flush them all.
    FlushAfterAll,
    /// Flush each block right after reading it.
    FlushEachAccess,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PocParams {
    pub num_reads: u32,
    pub num_aggr_acts: u32,
    pub num_iter: u32,
    pub order: AccessOrder,
    pub dummy_rows: u32,
    /// Logical victim rows, attacked one after another.
    pub victim_rows: Vec<u32>,
    /// Extra dwell per read under [`AccessOrder::FlushEachAccess`].
    #[serde(default = "default_flush_overhead")]
    pub flush_overhead_ns: u64,
    /// Start each iteration right after an auto-refresh, catching up on
    /// refreshes postponed while the rows were open.
    #[serde(default = "default_true")]
    pub sync_to_refresh: bool,
}

fn default_flush_overhead() -> u64 {
    150
}

fn default_true() -> bool {
    true
}

impl PocParams {
    pub fn validate(&self) -> Result<(), GenError> {
        if self.num_reads == 0 {
            return Err(GenError::Invalid("num_reads must be at least 1".into()));
        }
        if self.num_aggr_acts == 0 {
            return Err(GenError::Invalid("num_aggr_acts must be at least 1".into()));
        }
        Ok(())
    }

    /// Time between consecutive reads of one aggressor activation.
    pub fn read_spacing(&self, timing: &TimingParams) -> u64 {
        match self.order {
            AccessOrder::FlushAfterAll => timing.t_read,
            AccessOrder::FlushEachAccess => timing.t_read + self.flush_overhead_ns,
        }
    }

    /// Modeled on-time of one aggressor activation.
    pub fn t_on(&self, timing: &TimingParams) -> u64 {
        timing.t_ras_min + (self.num_reads as u64 - 1) * self.read_spacing(timing)
    }
}

/// Physical rows used as dummies: spaced four apart from the top of the
/// bank, clear of every victim and aggressor.
pub fn dummy_rows(count: u32, rows: u32, busy: &[u32]) -> Result<Vec<u32>, GenError> {
    let mut out = Vec::with_capacity(count as usize);
    let mut r = rows as i64 - 2;
    while out.len() < count as usize && r >= 1 {
        let row = r as u32;
        if busy.iter().all(|&b| b.abs_diff(row) > 2) {
            out.push(row);
        }
        r -= 4;
    }
    if out.len() < count as usize {
        return Err(GenError::Invalid(format!("bank of {rows} rows cannot host {count} dummy rows")));
    }
    Ok(out)
}

/// Commands the demonstration program makes the controller issue.
///
/// Each aggressor activation is one ACT, `num_reads` reads spaced by
/// [`PocParams::read_spacing`], and a PRE. After the aggressors of an
/// iteration, each dummy row is activated `num_aggr_acts + 1` times at tRAS.
/// Rows in the trace are physical.
pub fn gen_poc(params: &PocParams, mapping: &RowMapping, timing: &TimingParams) -> Result<Trace, GenError> {
    params.validate()?;
    let mut aggressors = Vec::new();
    let mut busy = Vec::new();
    for &v in &params.victim_rows {
        let (a, b) = mapping.find_aggressor_rows(v)?;
        let pair = (mapping.to_physical(a), mapping.to_physical(b));
        busy.extend([pair.0, pair.1, mapping.to_physical(v)]);
        aggressors.push(pair);
    }
    let dummies = dummy_rows(params.dummy_rows, mapping.rows, &busy)?;
    let spacing = params.read_spacing(timing);
    let t_on = params.t_on(timing);
    let mut trace = Trace::new();
    let mut t = 0u64;
    let mut next_ref = timing.t_refi;
    for &(a1, a2) in &aggressors {
        for _ in 0..params.num_iter {
            for _ in 0..params.num_aggr_acts {
                for row in [a1, a2] {
                    if !params.sync_to_refresh {
                        while next_ref <= t {
                            trace.push(Command::refresh(t));
                            next_ref += timing.t_refi;
                        }
                    }
                    trace.push(Command::act(row, t));
                    for j in 0..params.num_reads as u64 {
                        trace.push(Command::read(row, t + j * spacing));
                    }
                    trace.push(Command::pre(row, t + t_on));
                    t += t_on + timing.t_rc;
                }
            }
            for &d in &dummies {
                for _ in 0..=params.num_aggr_acts {
                    trace.push(Command::act(d, t));
                    trace.push(Command::pre(d, t + timing.t_ras_min));
                    t += timing.t_ras_min + timing.t_rc;
                }
            }
            if params.sync_to_refresh {
                while next_ref <= t {
                    trace.push(Command::refresh(t));
                    next_ref += timing.t_refi;
                }
                t = next_ref;
                trace.push(Command::refresh(t));
                next_ref += timing.t_refi;
                t += timing.t_rc;
            }
        }
    }
    Ok(trace)
}

/// Seeded request stream: exponential inter-arrival times with mean
/// `1 / request_rate` (`request_rate` in requests per microsecond); each
/// request stays on the previous row with probability `locality`, otherwise
/// picks a uniformly random row.
pub fn gen_requests(
    row_count: u32,
    request_rate: f64,
    duration: u64,
    locality: f64,
    seed: u64,
) -> Result<Vec<Request>, GenError> {
    if !(request_rate > 0.0 && request_rate.is_finite()) || duration == 0 {
        return Err(GenError::Invalid("request_rate and duration must be positive".into()));
    }
    if !(0.0..=1.0).contains(&locality) || row_count == 0 {
        return Err(GenError::Invalid("locality must be in [0, 1] and row_count at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mean_gap = 1_000.0 / request_rate;
    let mut out = Vec::new();
    let mut t = 0.0f64;
    let mut row = rng.gen_range(0..row_count);
    loop {
        let u: f64 = rng.gen();
        t += -mean_gap * (1.0 - u).ln();
        if t >= duration as f64 {
            break;
        }
        if !out.is_empty() && !rng.gen_bool(locality) {
            row = rng.gen_range(0..row_count);
        }
        out.push(Request { row, arrival: t as u64 });
    }
    Ok(out)
}

/// Random traffic lowered through an open-page controller with auto-refresh.
pub fn gen_random_traffic(
    row_count: u32,
    request_rate: f64,
    duration: u64,
    locality: f64,
    seed: u64,
    timing: &TimingParams,
) -> Result<Trace, GenError> {
    let requests = gen_requests(row_count, request_rate, duration, locality, seed)?;
    Ok(lower_open_page(&requests, timing, None).trace)
}

/// Inserts an auto-refresh every `t_refi`, postponed to the first moment no
/// row is open.
pub fn interleave_refresh(trace: &Trace, timing: &TimingParams) -> Trace {
    let mut out = Trace::new();
    let mut next_ref = timing.t_refi;
    let mut open = false;
    for cmd in trace {
        if !open {
            while next_ref <= cmd.timestamp {
                out.push(Command::refresh(out.end_time().max(next_ref)));
                next_ref += timing.t_refi;
            }
        }
        match cmd.kind {
            CommandKind::Activate => open = true,
            CommandKind::Precharge => open = false,
            _ => {}
        }
        out.push(*cmd);
    }
    out
}
