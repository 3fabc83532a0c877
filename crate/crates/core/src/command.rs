//! Timestamped DRAM commands and the plain-text trace format.
//!
//! A trace file holds one command per line: `<timestamp_ns> <KIND> [row]`.
//! Kinds are `ACT`, `PRE`, `RD`, `WR`, `REF` and `NEIGHBOR-REF`; every kind
//! except `REF` carries a row. Blank lines and lines starting with `#` are
//! ignored on input and never emitted.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::TraceError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum CommandKind {
    Activate,
    Precharge,
    Read,
    Write,
    AutoRefresh,
    /// Targeted refresh of a single (victim) row, issued by a mitigation.
    NeighborRefresh,
}

impl CommandKind {
    pub const ALL: [CommandKind; 6] = [
        CommandKind::Activate,
        CommandKind::Precharge,
        CommandKind::Read,
        CommandKind::Write,
        CommandKind::AutoRefresh,
        CommandKind::NeighborRefresh,
    ];

    pub fn mnemonic(self) -> &'static str {
        match self {
            CommandKind::Activate => "ACT",
            CommandKind::Precharge => "PRE",
            CommandKind::Read => "RD",
            CommandKind::Write => "WR",
            CommandKind::AutoRefresh => "REF",
            CommandKind::NeighborRefresh => "NEIGHBOR-REF",
        }
    }

    pub fn is_row_addressed(self) -> bool {
        !matches!(self, CommandKind::AutoRefresh)
    }
}

impl fmt::Display for CommandKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.mnemonic())
    }
}

impl FromStr for CommandKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        CommandKind::ALL.into_iter().find(|k| k.mnemonic() == s).ok_or_else(|| format!("unknown command kind {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Command {
    pub kind: CommandKind,
    pub row: Option<u32>,
    /// Nanoseconds since simulation start.
    pub timestamp: u64,
}

impl Command {
    pub fn act(row: u32, at: u64) -> Self {
        Self { kind: CommandKind::Activate, row: Some(row), timestamp: at }
    }

    pub fn pre(row: u32, at: u64) -> Self {
        Self { kind: CommandKind::Precharge, row: Some(row), timestamp: at }
    }

    pub fn read(row: u32, at: u64) -> Self {
        Self { kind: CommandKind::Read, row: Some(row), timestamp: at }
    }

    pub fn write(row: u32, at: u64) -> Self {
        Self { kind: CommandKind::Write, row: Some(row), timestamp: at }
    }

    pub fn refresh(at: u64) -> Self {
        Self { kind: CommandKind::AutoRefresh, row: None, timestamp: at }
    }

    pub fn neighbor_refresh(row: u32, at: u64) -> Self {
        Self { kind: CommandKind::NeighborRefresh, row: Some(row), timestamp: at }
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.row {
            Some(row) => write!(f, "{} {} {}", self.timestamp, self.kind, row),
            None => write!(f, "{} {}", self.timestamp, self.kind),
        }
    }
}

/// An ordered command sequence with non-decreasing timestamps.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Trace {
    commands: Vec<Command>,
}

impl Trace {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a trace, rejecting timestamp regressions.
    pub fn from_commands(commands: Vec<Command>) -> Result<Self, TraceError> {
        for (i, pair) in commands.windows(2).enumerate() {
            if pair[1].timestamp < pair[0].timestamp {
                return Err(TraceError::NonMonotonic { line: i + 2, prev: pair[0].timestamp, at: pair[1].timestamp });
            }
        }
        Ok(Self { commands })
    }

    /// Appends a command.
    ///
    /// # Panics
    ///
    /// Panics if `cmd` is earlier than the last command. Generators rely on
    /// this to catch construction bugs.
    pub fn push(&mut self, cmd: Command) {
        if let Some(last) = self.commands.last() {
            assert!(cmd.timestamp >= last.timestamp, "trace regression: {} after {}", cmd, last);
        }
        self.commands.push(cmd);
    }

    pub fn commands(&self) -> &[Command] {
        &self.commands
    }

    pub fn into_commands(self) -> Vec<Command> {
        self.commands
    }

    pub fn len(&self) -> usize {
        self.commands.len()
    }

    pub fn is_empty(&self) -> bool {
        self.commands.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Command> {
        self.commands.iter()
    }

    /// Timestamp of the last command, or 0 for an empty trace.
    pub fn end_time(&self) -> u64 {
        self.commands.last().map_or(0, |c| c.timestamp)
    }

    pub fn count(&self, kind: CommandKind) -> usize {
        self.commands.iter().filter(|c| c.kind == kind).count()
    }

    /// Row-open intervals `(row, act_time, pre_time)` in trace order.
    pub fn open_intervals(&self) -> Vec<(u32, u64, u64)> {
        let mut open: Option<(u32, u64)> = None;
        let mut out = Vec::new();
        for cmd in &self.commands {
            match (cmd.kind, cmd.row) {
                (CommandKind::Activate, Some(row)) => open = Some((row, cmd.timestamp)),
                (CommandKind::Precharge, Some(row)) => {
                    if let Some((r, t)) = open.take() {
                        if r == row {
                            out.push((r, t, cmd.timestamp));
                        }
                    }
                }
                _ => {}
            }
        }
        out
    }

    /// Parses the text format. Timestamps must be non-decreasing.
    pub fn parse(text: &str) -> Result<Self, TraceError> {
        let mut commands = Vec::new();
        let mut prev = 0u64;
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let err = |msg: String| TraceError::Parse { line, msg };
            let mut fields = trimmed.split_ascii_whitespace();
            let ts: u64 = fields
                .next()
                .ok_or_else(|| err("missing timestamp".into()))?
                .parse()
                .map_err(|e| err(format!("bad timestamp: {e}")))?;
            let kind: CommandKind =
                fields.next().ok_or_else(|| err("missing command kind".into()))?.parse().map_err(err)?;
            let row = match fields.next() {
                Some(tok) => Some(tok.parse::<u32>().map_err(|e| err(format!("bad row: {e}")))?),
                None => None,
            };
            if fields.next().is_some() {
                return Err(err("trailing fields".into()));
            }
            match (kind.is_row_addressed(), row) {
                (true, None) => return Err(err(format!("{kind} requires a row"))),
                (false, Some(_)) => return Err(err(format!("{kind} takes no row"))),
                _ => {}
            }
            if ts < prev {
                return Err(TraceError::NonMonotonic { line, prev, at: ts });
            }
            prev = ts;
            commands.push(Command { kind, row, timestamp: ts });
        }
        Ok(Self { commands })
    }

    /// Renders the text format, LF-terminated.
    pub fn to_text(&self) -> String {
        let mut out = String::with_capacity(self.commands.len() * 16);
        for cmd in &self.commands {
            out.push_str(&cmd.to_string());
            out.push('\n');
        }
        out
    }
}

impl<'a> IntoIterator for &'a Trace {
    type Item = &'a Command;
    type IntoIter = std::slice::Iter<'a, Command>;

    fn into_iter(self) -> Self::IntoIter {
        self.commands.iter()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parses_each_kind() {
        let text = "0 ACT 5\n10 RD 5\n20 WR 5\n36 PRE 5\n50 REF\n60 NEIGHBOR-REF 4\n";
        let trace = Trace::parse(text).unwrap();
        assert_eq!(trace.len(), 6);
        assert_eq!(trace.commands()[4], Command::refresh(50));
        assert_eq!(trace.commands()[5], Command::neighbor_refresh(4, 60));
        assert_eq!(trace.to_text(), text);
    }

    #[test]
    fn rejects_malformed_lines() {
        assert!(matches!(Trace::parse("0 ACT\n"), Err(TraceError::Parse { line: 1, .. })));
        assert!(matches!(Trace::parse("0 REF 3\n"), Err(TraceError::Parse { .. })));
        assert!(matches!(Trace::parse("x ACT 1\n"), Err(TraceError::Parse { .. })));
        assert!(matches!(Trace::parse("0 HAMMER 1\n"), Err(TraceError::Parse { .. })));
        assert!(matches!(Trace::parse("0 ACT 1 2\n"), Err(TraceError::Parse { .. })));
    }

    #[test]
    fn rejects_timestamp_regression() {
        let err = Trace::parse("100 ACT 1\n# comment\n\n50 PRE 1\n").unwrap_err();
        assert_eq!(err, TraceError::NonMonotonic { line: 4, prev: 100, at: 50 });
        assert!(Trace::from_commands(vec![Command::act(1, 9), Command::pre(1, 3)]).is_err());
    }

    #[test]
    fn open_intervals_pair_act_and_pre() {
        let trace = Trace::parse("0 ACT 3\n36 PRE 3\n50 ACT 4\n100 RD 4\n150 PRE 4\n").unwrap();
        assert_eq!(trace.open_intervals(), vec![(3, 0, 36), (4, 50, 150)]);
    }

    fn arb_command() -> impl Strategy<Value = (CommandKind, u32, u64)> {
        (0usize..6, 0u32..1 << 20, 0u64..1 << 20).prop_map(|(k, row, dt)| (CommandKind::ALL[k], row, dt))
    }

    proptest! {
        #[test]
        fn text_round_trip(cmds in proptest::collection::vec(arb_command(), 0..64)) {
            let mut t = 0u64;
            let mut trace = Trace::new();
            for (kind, row, dt) in cmds {
                t += dt;
                let row = kind.is_row_addressed().then_some(row);
                trace.push(Command { kind, row, timestamp: t });
            }
            let parsed = Trace::parse(&trace.to_text()).unwrap();
            prop_assert_eq!(parsed, trace);
        }
    }
}
