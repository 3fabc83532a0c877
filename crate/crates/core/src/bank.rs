//! Command-level bank model and the read-disturbance engine.
//!
//! Every precharge of an open aggressor charges each row within the blast
//! radius with `base_threshold / ACmin(t_on, ctx)` (one unit per activation
//! at tRAS). A cell flips once its row accumulator reaches the cell's
//! threshold, provided the cell admits the mechanism of the charging
//! activation and currently stores the bit its flip direction starts from.
//! Activations held open for exactly tRAS are RowHammer; longer ones are
//! RowPress.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::command::{Command, CommandKind};
use crate::error::SimError;
use crate::fixed;
use crate::pattern::DataPattern;
use crate::profile::{CellVuln, DeviceProfile, FlipDirection, Materialization, Mechanism, Sidedness, VulnClass};
use crate::timing::TimingParams;

/// CSV header of the flip log.
pub const FLIP_CSV_HEADER: &str = "row,cell,direction,mechanism,time_ns";

/// How the bank picks the curve for a victim when an aggressor closes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SidednessMode {
    /// Double-sided when the victim's other neighbor at the same distance
    /// was activated since the victim's last refresh.
    #[default]
    Auto,
    Fixed(Sidedness),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BankConfig {
    pub timing: TimingParams,
    pub temp_c: i32,
    pub blast_radius: u32,
    pub pattern: DataPattern,
    pub sidedness: SidednessMode,
    /// Treat row-open times above the JEDEC limit as errors.
    pub strict_jedec: bool,
    /// Close an open row implicitly when a new activation arrives.
    pub implicit_precharge: bool,
}

impl BankConfig {
    pub fn new(temp_c: i32) -> Self {
        Self {
            timing: TimingParams::default(),
            temp_c,
            blast_radius: 1,
            pattern: DataPattern::Checkerboard,
            sidedness: SidednessMode::Auto,
            strict_jedec: false,
            implicit_precharge: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlipEvent {
    pub row: u32,
    pub cell: u32,
    pub direction: FlipDirection,
    pub mechanism: Mechanism,
    pub time_ns: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TimingWarning {
    /// Row stayed open beyond the JEDEC maximum (allowed in non-strict mode).
    OpenTimeExceeded { row: u32, t_on: u64, limit: u64 },
    /// Precharge before tRAS elapsed; the on-time was clamped up.
    ShortOpen { row: u32, t_on: u64, t_ras: u64 },
    /// Activation sooner than `t_rc` after the previous precharge.
    ActivateTooSoon { row: u32, gap: u64, t_rc: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Event {
    Flip(FlipEvent),
    Warning { at: u64, warning: TimingWarning },
    ImplicitPrecharge { row: u32, at: u64 },
}

/// Read-only view of one row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RowState {
    pub last_refresh_time: u64,
    pub disturbance_acc: f64,
    pub factor: f64,
}

/// Read-only view of one cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellState {
    pub stored_bit: bool,
    pub vuln_class: VulnClass,
    pub threshold_mult: f64,
    pub flip_direction: FlipDirection,
    pub retention_time: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OpenRow {
    pub row: u32,
    pub since: u64,
}

#[derive(Debug, Clone)]
struct RowDyn {
    bits: Vec<u64>,
    acc: u64,
    last_refresh: u64,
    last_act: Option<u64>,
    hammer_ptr: u32,
    press_ptr: u32,
}

#[derive(Debug, Clone, Copy)]
struct ChargeMemo {
    t_on: u64,
    sidedness: Sidedness,
    charge: u64,
}

/// Flipped cells per row relative to a reference pattern.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FlipReport {
    pub rows: BTreeMap<u32, Vec<(u32, FlipDirection)>>,
}

impl FlipReport {
    pub fn total(&self) -> usize {
        self.rows.values().map(Vec::len).sum()
    }

    pub fn rows_with_flips(&self) -> usize {
        self.rows.values().filter(|v| !v.is_empty()).count()
    }

    pub fn row(&self, row: u32) -> &[(u32, FlipDirection)] {
        self.rows.get(&row).map_or(&[], Vec::as_slice)
    }
}

/// A single DRAM bank: rows, open-row tracker, accumulators, refresh cursor
/// and clock.
#[derive(Debug, Clone)]
pub struct Bank {
    profile: Arc<DeviceProfile>,
    vuln: Arc<Materialization>,
    config: BankConfig,
    rows: Vec<RowDyn>,
    open: Option<OpenRow>,
    now: u64,
    last_precharge: Option<u64>,
    refresh_cursor: u32,
    flip_log: Vec<FlipEvent>,
    memo: [Option<ChargeMemo>; 4],
    memo_next: usize,
}

impl Bank {
    pub fn new(profile: Arc<DeviceProfile>, vuln: Arc<Materialization>, config: BankConfig) -> Result<Self, SimError> {
        profile.curve(Sidedness::Single, config.temp_c)?;
        if let SidednessMode::Fixed(s) = config.sidedness {
            profile.curve(s, config.temp_c)?;
        }
        let cells = vuln.cells_per_row();
        let rows = (0..vuln.row_count())
            .map(|r| RowDyn {
                bits: config.pattern.row_words(r, cells),
                acc: 0,
                last_refresh: 0,
                last_act: None,
                hammer_ptr: 0,
                press_ptr: 0,
            })
            .collect();
        Ok(Self {
            profile,
            vuln,
            config,
            rows,
            open: None,
            now: 0,
            last_precharge: None,
            refresh_cursor: 0,
            flip_log: Vec::new(),
            memo: [None; 4],
            memo_next: 0,
        })
    }

    /// Materializes `row_count` rows and builds a bank over them.
    pub fn from_profile(
        profile: &DeviceProfile,
        row_count: u32,
        cells_per_row: usize,
        seed: u64,
        config: BankConfig,
    ) -> Result<Self, SimError> {
        let vuln = profile.materialize(row_count, cells_per_row, seed)?;
        Self::new(Arc::new(profile.clone()), Arc::new(vuln), config)
    }

    pub fn profile(&self) -> &Arc<DeviceProfile> {
        &self.profile
    }

    pub fn materialization(&self) -> &Arc<Materialization> {
        &self.vuln
    }

    pub fn config(&self) -> &BankConfig {
        &self.config
    }

    pub fn timing(&self) -> &TimingParams {
        &self.config.timing
    }

    pub fn blast_radius(&self) -> u32 {
        self.config.blast_radius
    }

    pub fn row_count(&self) -> u32 {
        self.rows.len() as u32
    }

    pub fn now(&self) -> u64 {
        self.now
    }

    pub fn open_row(&self) -> Option<OpenRow> {
        self.open
    }

    pub fn refresh_cursor(&self) -> u32 {
        self.refresh_cursor
    }

    pub fn flip_log(&self) -> &[FlipEvent] {
        &self.flip_log
    }

    pub fn set_strict_jedec(&mut self, strict: bool) {
        self.config.strict_jedec = strict;
    }

    pub fn row_state(&self, row: u32) -> RowState {
        let r = &self.rows[row as usize];
        RowState {
            last_refresh_time: r.last_refresh,
            disturbance_acc: fixed::to_real(r.acc),
            factor: self.vuln.row_factor(row),
        }
    }

    /// Raw fixed-point accumulator of `row`.
    pub fn disturbance_fixed(&self, row: u32) -> u64 {
        self.rows[row as usize].acc
    }

    pub fn cell(&self, row: u32, cell: usize) -> CellState {
        let v: &CellVuln = self.vuln.cell(row, cell);
        CellState {
            stored_bit: self.bit(row, cell),
            vuln_class: v.vuln_class,
            threshold_mult: v.threshold_mult,
            flip_direction: v.flip_direction,
            retention_time: v.retention_time,
        }
    }

    fn bit(&self, row: u32, cell: usize) -> bool {
        (self.rows[row as usize].bits[cell / 64] >> (cell % 64)) & 1 == 1
    }

    fn check_row(&self, row: u32) -> Result<(), SimError> {
        if row >= self.row_count() {
            return Err(SimError::RowOutOfRange { row, rows: self.row_count() });
        }
        Ok(())
    }

    fn advance(&mut self, at: u64) -> Result<(), SimError> {
        if at < self.now {
            return Err(SimError::TimestampRegression { now: self.now, at });
        }
        self.now = at;
        Ok(())
    }

    /// Applies one command and returns the events it produced.
    pub fn apply_command(&mut self, cmd: &Command) -> Result<Vec<Event>, SimError> {
        let mut out = Vec::new();
        self.apply(cmd, &mut out)?;
        Ok(out)
    }

    /// Applies one command, appending events to `out`.
    pub fn apply(&mut self, cmd: &Command, out: &mut Vec<Event>) -> Result<(), SimError> {
        let row = || cmd.row.ok_or(SimError::MissingRow { kind: cmd.kind });
        match cmd.kind {
            CommandKind::Activate => self.activate(row()?, cmd.timestamp, out),
            CommandKind::Precharge => {
                let row = row()?;
                self.check_row(row)?;
                match self.open {
                    None => Err(SimError::RowNotOpen { kind: cmd.kind, row, at: cmd.timestamp }),
                    Some(o) if o.row != row => {
                        Err(SimError::WrongRow { kind: cmd.kind, row, open: o.row, at: cmd.timestamp })
                    }
                    Some(_) => self.precharge(cmd.timestamp, out).map(|_| ()),
                }
            }
            CommandKind::Read | CommandKind::Write => {
                let row = row()?;
                self.check_row(row)?;
                if cmd.timestamp < self.now {
                    return Err(SimError::TimestampRegression { now: self.now, at: cmd.timestamp });
                }
                match self.open {
                    None => Err(SimError::RowNotOpen { kind: cmd.kind, row, at: cmd.timestamp }),
                    Some(o) if o.row != row => {
                        Err(SimError::WrongRow { kind: cmd.kind, row, open: o.row, at: cmd.timestamp })
                    }
                    Some(_) => self.advance(cmd.timestamp),
                }
            }
            CommandKind::AutoRefresh => self.auto_refresh(cmd.timestamp, out),
            CommandKind::NeighborRefresh => self.refresh_row(row()?, cmd.timestamp),
        }
    }

    /// Opens `row` at `at`.
    pub fn activate(&mut self, row: u32, at: u64, out: &mut Vec<Event>) -> Result<(), SimError> {
        self.check_row(row)?;
        if at < self.now {
            return Err(SimError::TimestampRegression { now: self.now, at });
        }
        if let Some(o) = self.open {
            if !self.config.implicit_precharge {
                return Err(SimError::RowAlreadyOpen { kind: CommandKind::Activate, open: o.row, at });
            }
            out.push(Event::ImplicitPrecharge { row: o.row, at });
            self.precharge(at, out)?;
        }
        self.now = at;
        if let Some(pre) = self.last_precharge {
            let gap = at - pre;
            if gap < self.config.timing.t_rc {
                out.push(Event::Warning {
                    at,
                    warning: TimingWarning::ActivateTooSoon { row, gap, t_rc: self.config.timing.t_rc },
                });
            }
        }
        self.open = Some(OpenRow { row, since: at });
        self.rows[row as usize].last_act = Some(at);
        Ok(())
    }

    /// Closes the open row at `at`, charges its neighbors and evaluates flips.
    /// Returns the (clamped) on-time, or `None` if no row was open.
    pub fn precharge(&mut self, at: u64, out: &mut Vec<Event>) -> Result<Option<u64>, SimError> {
        let Some(open) = self.open else {
            self.advance(at)?;
            return Ok(None);
        };
        if at < self.now {
            return Err(SimError::TimestampRegression { now: self.now, at });
        }
        let timing = self.config.timing;
        let raw = at - open.since;
        if raw > timing.t_ron_max_jedec {
            if self.config.strict_jedec {
                return Err(SimError::OpenTimeExceeded { row: open.row, t_on: raw, limit: timing.t_ron_max_jedec });
            }
            out.push(Event::Warning {
                at,
                warning: TimingWarning::OpenTimeExceeded { row: open.row, t_on: raw, limit: timing.t_ron_max_jedec },
            });
        }
        if raw < timing.t_ras_min {
            out.push(Event::Warning {
                at,
                warning: TimingWarning::ShortOpen { row: open.row, t_on: raw, t_ras: timing.t_ras_min },
            });
        }
        let t_on = raw.max(timing.t_ras_min);
        self.now = at;
        self.open = None;
        self.last_precharge = Some(at);
        let mechanism = if t_on > timing.t_ras_min { Mechanism::Press } else { Mechanism::Hammer };
        let aggressor = open.row as i64;
        let n = self.row_count() as i64;
        for d in 1..=self.config.blast_radius as i64 {
            for victim in [aggressor - d, aggressor + d] {
                if victim < 0 || victim >= n {
                    continue;
                }
                let sidedness = match self.config.sidedness {
                    SidednessMode::Fixed(s) => s,
                    SidednessMode::Auto => {
                        let other = 2 * victim - aggressor;
                        let v = &self.rows[victim as usize];
                        let double = other >= 0
                            && other < n
                            && self.rows[other as usize].last_act.is_some_and(|t| t >= v.last_refresh);
                        if double {
                            Sidedness::Double
                        } else {
                            Sidedness::Single
                        }
                    }
                };
                let charge = self.charge_fixed(t_on, sidedness)?;
                self.disturb(victim as u32, charge, mechanism, at, out);
            }
        }
        Ok(Some(t_on))
    }

    fn charge_fixed(&mut self, t_on: u64, sidedness: Sidedness) -> Result<u64, SimError> {
        for m in self.memo.iter().flatten() {
            if m.t_on == t_on && m.sidedness == sidedness {
                return Ok(m.charge);
            }
        }
        let charge = fixed::charge(self.profile.charge(t_on, sidedness, self.config.temp_c)?);
        self.memo[self.memo_next] = Some(ChargeMemo { t_on, sidedness, charge });
        self.memo_next = (self.memo_next + 1) % self.memo.len();
        Ok(charge)
    }

    fn disturb(&mut self, row: u32, charge: u64, mechanism: Mechanism, at: u64, out: &mut Vec<Event>) {
        let vuln = &self.vuln.rows[row as usize];
        let r = &mut self.rows[row as usize];
        r.acc += charge;
        let (list, ptr) = match mechanism {
            Mechanism::Hammer => (&vuln.hammer, &mut r.hammer_ptr),
            _ => (&vuln.press, &mut r.press_ptr),
        };
        while let Some(&(thr, cell)) = list.get(*ptr as usize) {
            if thr > r.acc {
                break;
            }
            *ptr += 1;
            let dir = vuln.cells[cell as usize].flip_direction;
            let (w, b) = (cell as usize / 64, cell % 64);
            let bit = (r.bits[w] >> b) & 1 == 1;
            if bit == dir.source_bit() {
                r.bits[w] ^= 1 << b;
                let ev = FlipEvent { row, cell, direction: dir, mechanism, time_ns: at };
                self.flip_log.push(ev);
                out.push(Event::Flip(ev));
            }
        }
    }

    /// Performs `count` activations cycling over `aggressors`, each open for
    /// `t_on` and followed by `t_rc` of idle time, starting at `start`.
    /// Returns the time of the last precharge.
    ///
    /// Equivalent to replaying the ACT/PRE pairs one by one, but when every
    /// victim's curve is fixed for the whole run (fixed sidedness, or a single
    /// aggressor) flip times are solved directly instead of stepping.
    pub fn hammer(
        &mut self,
        aggressors: &[u32],
        count: u64,
        t_on: u64,
        start: u64,
        out: &mut Vec<Event>,
    ) -> Result<u64, SimError> {
        if count == 0 || aggressors.is_empty() {
            return Ok(self.now);
        }
        for &a in aggressors {
            self.check_row(a)?;
        }
        let fast = matches!(self.config.sidedness, SidednessMode::Fixed(_)) || aggressors.len() == 1;
        let timing = self.config.timing;
        let period = t_on + timing.t_rc;
        if !fast || self.open.is_some() || start < self.now || t_on < timing.t_ras_min || t_on > timing.t_ron_max_jedec
        {
            let mut t = start;
            let mut end = start;
            for k in 0..count {
                let row = aggressors[(k % aggressors.len() as u64) as usize];
                self.activate(row, t, out)?;
                end = t + t_on;
                self.precharge(end, out)?;
                t += period;
            }
            return Ok(end);
        }
        // Validate the first activation's spacing like `activate` would.
        if let Some(pre) = self.last_precharge {
            let gap = start - pre;
            if gap < timing.t_rc {
                out.push(Event::Warning {
                    at: start,
                    warning: TimingWarning::ActivateTooSoon { row: aggressors[0], gap, t_rc: timing.t_rc },
                });
            }
        }
        let mechanism = if t_on > timing.t_ras_min { Mechanism::Press } else { Mechanism::Hammer };
        let m = aggressors.len() as u64;
        let n = self.row_count() as i64;
        let radius = self.config.blast_radius as i64;
        // Positions in the aggressor cycle charging each victim, with the
        // sidedness in force for that victim.
        let mut victims: Vec<(u32, Vec<u64>, Sidedness)> = Vec::new();
        for (j, &a) in aggressors.iter().enumerate() {
            for d in 1..=radius {
                for v in [a as i64 - d, a as i64 + d] {
                    if v < 0 || v >= n {
                        continue;
                    }
                    let sidedness = match self.config.sidedness {
                        SidednessMode::Fixed(s) => s,
                        SidednessMode::Auto => {
                            let other = 2 * v - a as i64;
                            let last_refresh = self.rows[v as usize].last_refresh;
                            let double = other >= 0
                                && other < n
                                && self.rows[other as usize].last_act.is_some_and(|t| t >= last_refresh);
                            if double {
                                Sidedness::Double
                            } else {
                                Sidedness::Single
                            }
                        }
                    };
                    match victims.iter_mut().find(|e| e.0 == v as u32) {
                        Some(e) => e.1.push(j as u64),
                        None => victims.push((v as u32, vec![j as u64], sidedness)),
                    }
                }
            }
        }
        let mut flips = Vec::new();
        for (victim, positions, sidedness) in victims {
            let charge = self.charge_fixed(t_on, sidedness)?;
            // Charges received by this victim over the run.
            let full_cycles = count / m;
            let rem = count % m;
            let hits = full_cycles * positions.len() as u64 + positions.iter().filter(|&&p| p < rem).count() as u64;
            let vuln = &self.vuln.rows[victim as usize];
            let r = &mut self.rows[victim as usize];
            let acc0 = r.acc;
            let acc_end = acc0 + hits * charge;
            let (list, ptr) = match mechanism {
                Mechanism::Hammer => (&vuln.hammer, &mut r.hammer_ptr),
                _ => (&vuln.press, &mut r.press_ptr),
            };
            while let Some(&(thr, cell)) = list.get(*ptr as usize) {
                if thr > acc_end {
                    break;
                }
                *ptr += 1;
                // Index of the charge that crosses `thr`, then its activation.
                let i = (thr - acc0).div_ceil(charge).max(1) - 1;
                let k = (i / positions.len() as u64) * m + positions[(i % positions.len() as u64) as usize];
                let dir = vuln.cells[cell as usize].flip_direction;
                let (w, b) = (cell as usize / 64, cell % 64);
                if ((r.bits[w] >> b) & 1 == 1) == dir.source_bit() {
                    r.bits[w] ^= 1 << b;
                    let at = start + k * period + t_on;
                    flips.push((k, victim, FlipEvent { row: victim, cell, direction: dir, mechanism, time_ns: at }));
                }
            }
            r.acc = acc_end;
        }
        // Same order the step-by-step replay emits: by activation, then by
        // victim position around the aggressor, then by threshold.
        let order = |v: u32, a: u32| -> i64 {
            let d = v as i64 - a as i64;
            (d.abs() - 1) * 2 + i64::from(d > 0)
        };
        flips.sort_by_key(|&(k, v, _)| (k, order(v, aggressors[(k % m) as usize])));
        for (_, _, ev) in flips {
            self.flip_log.push(ev);
            out.push(Event::Flip(ev));
        }
        for (j, &a) in aggressors.iter().enumerate() {
            let j = j as u64;
            if j < count {
                let last_k = (count - 1 - j) / m * m + j;
                let at = start + last_k * period;
                let entry = &mut self.rows[a as usize].last_act;
                *entry = Some(entry.map_or(at, |t| t.max(at)));
            }
        }
        let end = start + (count - 1) * period + t_on;
        self.now = end;
        self.last_precharge = Some(end);
        Ok(end)
    }

    /// Refreshes a single row: clears its accumulator and restarts its
    /// retention clock.
    pub fn refresh_row(&mut self, row: u32, at: u64) -> Result<(), SimError> {
        self.check_row(row)?;
        self.advance(at)?;
        self.reset_row(row, at);
        Ok(())
    }

    fn reset_row(&mut self, row: u32, at: u64) {
        let r = &mut self.rows[row as usize];
        r.acc = 0;
        r.last_refresh = at;
        r.hammer_ptr = 0;
        r.press_ptr = 0;
    }

    /// Rows refreshed by refresh group `group`.
    pub fn refresh_group_rows(&self, group: u32) -> std::ops::Range<u32> {
        let n = self.row_count() as u64;
        let g = self.config.timing.ref_groups as u64;
        let start = (group as u64 * n).div_ceil(g);
        let end = ((group as u64 + 1) * n).div_ceil(g);
        start as u32..end as u32
    }

    /// Issues one auto-refresh: closes any open row (charging its on-time),
    /// refreshes the current group and advances the cursor.
    pub fn auto_refresh(&mut self, at: u64, out: &mut Vec<Event>) -> Result<(), SimError> {
        if at < self.now {
            return Err(SimError::TimestampRegression { now: self.now, at });
        }
        if let Some(o) = self.open {
            out.push(Event::ImplicitPrecharge { row: o.row, at });
            self.precharge(at, out)?;
        }
        self.now = at;
        for row in self.refresh_group_rows(self.refresh_cursor) {
            self.reset_row(row, at);
        }
        self.refresh_cursor = (self.refresh_cursor + 1) % self.config.timing.ref_groups;
        Ok(())
    }

    /// Flips weak-retention cells whose row has gone unrefreshed longer than
    /// their retention time.
    pub fn check_retention(&mut self, at: u64) -> Result<Vec<Event>, SimError> {
        self.advance(at)?;
        let mut out = Vec::new();
        for row in 0..self.row_count() {
            let vuln = &self.vuln.rows[row as usize];
            let r = &mut self.rows[row as usize];
            let elapsed = at - r.last_refresh;
            for &(ret, cell) in &vuln.retention {
                if elapsed <= ret {
                    break;
                }
                let dir = vuln.cells[cell as usize].flip_direction;
                let (w, b) = (cell as usize / 64, cell % 64);
                if ((r.bits[w] >> b) & 1 == 1) == dir.source_bit() {
                    r.bits[w] ^= 1 << b;
                    let ev = FlipEvent { row, cell, direction: dir, mechanism: Mechanism::Retention, time_ns: at };
                    self.flip_log.push(ev);
                    out.push(Event::Flip(ev));
                }
            }
        }
        Ok(out)
    }

    /// Compares every row against `reference` and lists flipped cells.
    pub fn snapshot_bitflips(&self, reference: DataPattern) -> Result<FlipReport, SimError> {
        if reference != self.config.pattern {
            return Err(SimError::UnknownPattern { requested: reference, initialized: self.config.pattern });
        }
        let cells = self.vuln.cells_per_row();
        let mut report = FlipReport::default();
        for (row, r) in self.rows.iter().enumerate() {
            let expected = reference.row_words(row as u32, cells);
            let mut flips = Vec::new();
            for (w, (&have, &want)) in r.bits.iter().zip(&expected).enumerate() {
                let mut diff = have ^ want;
                while diff != 0 {
                    let b = diff.trailing_zeros();
                    diff &= diff - 1;
                    let cell = (w * 64) as u32 + b;
                    let dir = if (want >> b) & 1 == 1 { FlipDirection::OneToZero } else { FlipDirection::ZeroToOne };
                    flips.push((cell, dir));
                }
            }
            if !flips.is_empty() {
                report.rows.insert(row as u32, flips);
            }
        }
        Ok(report)
    }

    /// Flip log as CSV with [`FLIP_CSV_HEADER`].
    pub fn flip_csv(&self) -> String {
        flip_csv(&self.flip_log)
    }
}

pub fn flip_csv(events: &[FlipEvent]) -> String {
    let mut out = String::from(FLIP_CSV_HEADER);
    out.push('\n');
    for e in events {
        let _ = writeln!(out, "{},{},{},{},{}", e.row, e.cell, e.direction, e.mechanism, e.time_ns);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::profile::builtin;
    use crate::timing::{MS, S};

    fn bank_with(profile: DeviceProfile, rows: u32, cells: usize, config: BankConfig) -> Bank {
        Bank::from_profile(&profile, rows, cells, 1, config).unwrap()
    }

    fn mean80_bank() -> Bank {
        let p = builtin("paper-mean-80C").unwrap().zero_variation();
        bank_with(p, 16, 64, BankConfig::new(80))
    }

    #[test]
    fn tras_activation_charges_neighbors_by_one() {
        let mut bank = mean80_bank();
        bank.apply_command(&Command::act(5, 0)).unwrap();
        bank.apply_command(&Command::pre(5, 36)).unwrap();
        assert_eq!(bank.row_state(4).disturbance_acc, 1.0);
        assert_eq!(bank.row_state(6).disturbance_acc, 1.0);
        assert_eq!(bank.row_state(5).disturbance_acc, 0.0);
        assert_eq!(bank.row_state(3).disturbance_acc, 0.0);
    }

    #[test]
    fn single_long_activation_flips_weakest_press_cell() {
        let mut bank = mean80_bank();
        bank.apply_command(&Command::act(5, 0)).unwrap();
        let events = bank.apply_command(&Command::pre(5, 30 * MS)).unwrap();
        let flips: Vec<_> = events
            .iter()
            .filter_map(|e| match e {
                Event::Flip(f) => Some(*f),
                _ => None,
            })
            .collect();
        assert!(flips.iter().any(|f| f.row == 4 && f.mechanism == Mechanism::Press));
        assert!(flips.iter().all(|f| f.direction == FlipDirection::OneToZero));
        assert!(events
            .iter()
            .any(|e| matches!(e, Event::Warning { warning: TimingWarning::OpenTimeExceeded { .. }, .. })));
    }

    #[test]
    fn strict_jedec_rejects_long_open_rows() {
        let mut bank = mean80_bank();
        bank.set_strict_jedec(true);
        bank.apply_command(&Command::act(5, 0)).unwrap();
        assert!(bank.apply_command(&Command::pre(5, 70_200)).is_ok());
        bank.apply_command(&Command::act(5, 80_000)).unwrap();
        let err = bank.apply_command(&Command::pre(5, 80_000 + 70_201)).unwrap_err();
        assert_eq!(err, SimError::OpenTimeExceeded { row: 5, t_on: 70_201, limit: 70_200 });
    }

    #[test]
    fn row_state_errors() {
        let mut bank = mean80_bank();
        assert!(matches!(bank.apply_command(&Command::pre(3, 0)), Err(SimError::RowNotOpen { .. })));
        assert!(matches!(bank.apply_command(&Command::read(3, 0)), Err(SimError::RowNotOpen { .. })));
        bank.apply_command(&Command::act(3, 10)).unwrap();
        assert!(matches!(bank.apply_command(&Command::read(4, 20)), Err(SimError::WrongRow { .. })));
        assert!(matches!(
            bank.apply_command(&Command::pre(3, 5)),
            Err(SimError::TimestampRegression { now: 10, at: 5 })
        ));
        assert!(matches!(bank.apply_command(&Command::act(99, 50)), Err(SimError::RowOutOfRange { .. })));
    }

    #[test]
    fn activate_on_open_row_without_implicit_precharge_errors() {
        let p = builtin("paper-mean-80C").unwrap();
        let mut cfg = BankConfig::new(80);
        cfg.implicit_precharge = false;
        let mut bank = bank_with(p, 8, 16, cfg);
        bank.apply_command(&Command::act(1, 0)).unwrap();
        assert!(matches!(bank.apply_command(&Command::act(2, 100)), Err(SimError::RowAlreadyOpen { open: 1, .. })));
    }

    #[test]
    fn implicit_precharge_still_charges() {
        let mut bank = mean80_bank();
        bank.apply_command(&Command::act(5, 0)).unwrap();
        let events = bank.apply_command(&Command::act(9, 100)).unwrap();
        assert!(events.contains(&Event::ImplicitPrecharge { row: 5, at: 100 }));
        assert!(bank.row_state(4).disturbance_acc > 1.0);
        assert_eq!(bank.open_row().unwrap().row, 9);
    }

    #[test]
    fn short_open_is_clamped_to_tras() {
        let mut bank = mean80_bank();
        bank.apply_command(&Command::act(5, 0)).unwrap();
        let events = bank.apply_command(&Command::pre(5, 10)).unwrap();
        assert_eq!(bank.row_state(4).disturbance_acc, 1.0);
        assert!(events
            .iter()
            .any(|e| matches!(e, Event::Warning { warning: TimingWarning::ShortOpen { t_on: 10, .. }, .. })));
    }

    #[test]
    fn refresh_resets_accumulator() {
        let p = builtin("paper-mean-80C").unwrap().zero_variation().with_base_threshold(100);
        let mut bank = bank_with(p, 8, 64, BankConfig::new(80));
        let hammer = |bank: &mut Bank, n: u32| {
            for _ in 0..n {
                let t = bank.now() + 14;
                bank.apply_command(&Command::act(3, t)).unwrap();
                bank.apply_command(&Command::pre(3, t + 36)).unwrap();
            }
        };
        hammer(&mut bank, 90);
        assert_eq!(bank.row_state(2).disturbance_acc, 90.0);
        bank.apply_command(&Command::neighbor_refresh(2, bank.now())).unwrap();
        assert_eq!(bank.row_state(2).disturbance_acc, 0.0);
        hammer(&mut bank, 50);
        let report = bank.snapshot_bitflips(DataPattern::Checkerboard).unwrap();
        assert_eq!(report.row(2).len(), 0);
        // Row 4 was never refreshed and crossed 100.
        assert!(!report.row(4).is_empty());
    }

    #[test]
    fn auto_refresh_walks_every_row_once_per_window() {
        let p = builtin("paper-mean-80C").unwrap();
        let mut bank = bank_with(p, 100, 8, BankConfig::new(80));
        let timing = *bank.timing();
        let mut seen = vec![0u32; 100];
        for g in 0..timing.ref_groups {
            for r in bank.refresh_group_rows(g) {
                seen[r as usize] += 1;
            }
        }
        assert!(seen.iter().all(|&c| c == 1));
        let mut out = Vec::new();
        for i in 0..timing.ref_groups as u64 {
            bank.auto_refresh((i + 1) * timing.t_refi, &mut out).unwrap();
        }
        assert_eq!(bank.refresh_cursor(), 0);
        for r in 0..100 {
            let last = bank.row_state(r).last_refresh_time;
            assert!(last > 0 && last <= timing.ref_groups as u64 * timing.t_refi);
        }
    }

    #[test]
    fn auto_refresh_precharges_open_row() {
        let mut bank = mean80_bank();
        bank.apply_command(&Command::act(5, 0)).unwrap();
        let events = bank.apply_command(&Command::refresh(7_800)).unwrap();
        assert!(events.contains(&Event::ImplicitPrecharge { row: 5, at: 7_800 }));
        assert!(bank.open_row().is_none());
        assert!(bank.row_state(4).disturbance_acc > 1.0);
    }

    #[test]
    fn retention_edges() {
        let mut p = builtin("paper-mean-80C").unwrap();
        p.retention_tail.fraction = 0.0;
        p.overlap_ret = 0.0;
        let mut bank = bank_with(p.clone(), 32, 256, BankConfig::new(80));
        assert!(bank.check_retention(4 * S).unwrap().is_empty());

        p.retention_tail.fraction = 0.05;
        p.retention_tail.min_retention_ns = S;
        let mut bank = bank_with(p, 32, 256, BankConfig::new(80));
        assert!(bank.check_retention(100 * MS).unwrap().is_empty());
        let flips = bank.check_retention(20 * S).unwrap();
        assert!(!flips.is_empty());
        for e in flips {
            let Event::Flip(f) = e else { panic!() };
            assert_eq!(f.mechanism, Mechanism::Retention);
        }
    }

    #[test]
    fn snapshot_fresh_bank_is_clean_and_checks_pattern() {
        let bank = mean80_bank();
        assert_eq!(bank.snapshot_bitflips(DataPattern::Checkerboard).unwrap().total(), 0);
        assert!(matches!(bank.snapshot_bitflips(DataPattern::Solid), Err(SimError::UnknownPattern { .. })));
    }

    #[test]
    fn snapshot_reports_single_flip() {
        let mut bank = mean80_bank();
        // Find a row-4 press cell storing 1 and push it over with one long activation.
        bank.apply_command(&Command::act(5, 0)).unwrap();
        bank.apply_command(&Command::pre(5, 30 * MS)).unwrap();
        let log: Vec<_> = bank.flip_log().iter().filter(|f| f.row == 4).copied().collect();
        let report = bank.snapshot_bitflips(DataPattern::Checkerboard).unwrap();
        let listed: Vec<_> = report.row(4).to_vec();
        assert_eq!(listed.len(), log.len());
        for f in &log {
            assert!(listed.contains(&(f.cell, f.direction)));
        }
        assert!(bank.flip_csv().starts_with("row,cell,direction,mechanism,time_ns\n"));
    }

    #[test]
    fn blast_radius_bounds_disturbance() {
        let p = builtin("paper-mean-80C").unwrap();
        let mut cfg = BankConfig::new(80);
        cfg.blast_radius = 2;
        let mut bank = bank_with(p, 16, 16, cfg);
        bank.apply_command(&Command::act(8, 0)).unwrap();
        bank.apply_command(&Command::pre(8, 36)).unwrap();
        for r in 0..16 {
            let acc = bank.row_state(r).disturbance_acc;
            let d = (r as i64 - 8).abs();
            assert_eq!(acc > 0.0, (1..=2).contains(&d), "row {r}");
        }
    }

    #[test]
    fn auto_sidedness_uses_double_curve_when_sandwiched() {
        let p = builtin("crossover").unwrap();
        let mut bank = bank_with(p.clone(), 16, 16, BankConfig::new(50));
        let mut t = 0;
        for row in [4, 6] {
            bank.apply_command(&Command::act(row, t)).unwrap();
            bank.apply_command(&Command::pre(row, t + 36)).unwrap();
            t += 100;
        }
        // Row 5: first charge single-sided (1.0), second double-sided (0.8).
        let expected = 1.0 + fixed::to_real(fixed::charge(p.charge(36, Sidedness::Double, 50).unwrap()));
        assert_eq!(bank.row_state(5).disturbance_acc, expected);
        assert_eq!(bank.row_state(3).disturbance_acc, 1.0);
    }
}
