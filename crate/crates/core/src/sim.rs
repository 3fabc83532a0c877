//! A bank driven through a mitigation and an optional on-time cap.

use std::sync::Arc;

use crate::bank::{Bank, Event};
use crate::command::{Command, CommandKind, Trace};
use crate::error::{MitigationError, SimError};
use crate::mitigation::{CapPolicy, Geometry, Mitigation, MitigationConfig};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SimStats {
    pub activations: u64,
    pub neighbor_refreshes: u64,
    pub forced_precharges: u64,
    pub reactivations: u64,
    pub auto_refreshes: u64,
}

/// Replays commands against a bank while a mitigation watches every
/// activation, precharge and refresh.
///
/// Row closes that the bank would perform implicitly (a new activation or
/// an auto-refresh while a row is open) are issued here explicitly so the
/// mitigation observes their on-time too.
#[derive(Debug, Clone)]
pub struct Simulation {
    bank: Bank,
    mitigation: Mitigation,
    cap: Option<CapPolicy>,
    stats: SimStats,
    events: Vec<Event>,
    forced_closed: Option<u32>,
    scratch: Vec<u32>,
}

impl Simulation {
    pub fn new(bank: Bank, mitigation: Mitigation, cap: Option<CapPolicy>) -> Self {
        Self {
            bank,
            mitigation,
            cap,
            stats: SimStats::default(),
            events: Vec::new(),
            forced_closed: None,
            scratch: Vec::new(),
        }
    }

    /// Builds the mitigation for `bank` from its config.
    pub fn with_config(bank: Bank, config: &MitigationConfig, cap: Option<CapPolicy>) -> Result<Self, MitigationError> {
        let geometry = Geometry { rows: bank.row_count(), blast_radius: bank.blast_radius() };
        let mitigation = Mitigation::new(config, Arc::clone(bank.profile()), bank.config().temp_c, geometry)?;
        Ok(Self::new(bank, mitigation, cap))
    }

    pub fn bank(&self) -> &Bank {
        &self.bank
    }

    pub fn into_bank(self) -> Bank {
        self.bank
    }

    pub fn mitigation(&self) -> &Mitigation {
        &self.mitigation
    }

    pub fn stats(&self) -> SimStats {
        self.stats
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn run(&mut self, trace: &Trace) -> Result<(), SimError> {
        for cmd in trace {
            self.step(cmd)?;
        }
        Ok(())
    }

    pub fn run_commands<I: IntoIterator<Item = Command>>(&mut self, commands: I) -> Result<(), SimError> {
        for cmd in commands {
            self.step(&cmd)?;
        }
        Ok(())
    }

    pub fn step(&mut self, cmd: &Command) -> Result<(), SimError> {
        let t = cmd.timestamp;
        if t < self.bank.now() {
            return Err(SimError::TimestampRegression { now: self.bank.now(), at: t });
        }
        self.enforce_cap(t)?;
        match cmd.kind {
            CommandKind::Activate => {
                let row = cmd.row.ok_or(SimError::MissingRow { kind: cmd.kind })?;
                if self.bank.open_row().is_some() && self.bank.config().implicit_precharge {
                    let open = self.bank.open_row().expect("checked").row;
                    self.events.push(Event::ImplicitPrecharge { row: open, at: t });
                    self.close(t)?;
                }
                self.forced_closed = None;
                self.activate(row, t)
            }
            CommandKind::Precharge => {
                let row = cmd.row.ok_or(SimError::MissingRow { kind: cmd.kind })?;
                match self.bank.open_row() {
                    Some(o) if o.row == row => self.close(t),
                    None if self.forced_closed == Some(row) => {
                        // The controller already closed it.
                        self.forced_closed = None;
                        Ok(())
                    }
                    _ => self.bank.apply(cmd, &mut self.events),
                }
            }
            CommandKind::Read | CommandKind::Write => {
                let row = cmd.row.ok_or(SimError::MissingRow { kind: cmd.kind })?;
                if self.bank.open_row().is_none() && self.forced_closed == Some(row) {
                    self.forced_closed = None;
                    self.stats.reactivations += 1;
                    self.activate(row, t)?;
                }
                self.bank.apply(cmd, &mut self.events)
            }
            CommandKind::AutoRefresh => {
                if let Some(o) = self.bank.open_row() {
                    self.events.push(Event::ImplicitPrecharge { row: o.row, at: t });
                    self.close(t)?;
                }
                self.forced_closed = None;
                self.bank.auto_refresh(t, &mut self.events)?;
                self.stats.auto_refreshes += 1;
                let mut rows = std::mem::take(&mut self.scratch);
                self.mitigation.on_refresh(&mut rows);
                self.refresh_rows(&rows, t)?;
                rows.clear();
                self.scratch = rows;
                Ok(())
            }
            CommandKind::NeighborRefresh => self.bank.apply(cmd, &mut self.events),
        }
    }

    /// Applies the cap to a row left open at the end of a trace.
    pub fn finish(&mut self, end: u64) -> Result<(), SimError> {
        self.enforce_cap(end)
    }

    fn activate(&mut self, row: u32, t: u64) -> Result<(), SimError> {
        self.bank.activate(row, t, &mut self.events)?;
        self.mitigation.on_activate(row);
        self.stats.activations += 1;
        Ok(())
    }

    fn close(&mut self, t: u64) -> Result<(), SimError> {
        let row = self.bank.open_row().map(|o| o.row);
        let t_on = self.bank.precharge(t, &mut self.events)?;
        if let (Some(row), Some(t_on)) = (row, t_on) {
            let mut rows = std::mem::take(&mut self.scratch);
            self.mitigation.on_precharge(row, t_on, &mut rows).map_err(|e| match e {
                MitigationError::Profile(p) => SimError::Profile(p),
                other => unreachable!("mitigation failed after construction: {other}"),
            })?;
            self.refresh_rows(&rows, t)?;
            rows.clear();
            self.scratch = rows;
        }
        Ok(())
    }

    fn refresh_rows(&mut self, rows: &[u32], t: u64) -> Result<(), SimError> {
        for &r in rows {
            self.bank.refresh_row(r, t)?;
            self.stats.neighbor_refreshes += 1;
        }
        Ok(())
    }

    fn enforce_cap(&mut self, t: u64) -> Result<(), SimError> {
        let (Some(cap), Some(open)) = (self.cap, self.bank.open_row()) else {
            return Ok(());
        };
        if t - open.since > cap.t_on_cap {
            self.close(open.since + cap.t_on_cap)?;
            self.forced_closed = Some(open.row);
            self.stats.forced_precharges += 1;
        }
        Ok(())
    }
}
