use thiserror::Error;

use crate::command::CommandKind;
use crate::profile::Sidedness;

/// Errors raised while simulating a bank.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("timestamp regression: command at {at} ns but bank clock is at {now} ns")]
    TimestampRegression { now: u64, at: u64 },
    #[error("row {row} is out of range (bank has {rows} rows)")]
    RowOutOfRange { row: u32, rows: u32 },
    #[error("{kind} at {at} ns requires no open row, but row {open} is open")]
    RowAlreadyOpen { kind: CommandKind, open: u32, at: u64 },
    #[error("{kind} at {at} ns addresses row {row}, but no row is open")]
    RowNotOpen { kind: CommandKind, row: u32, at: u64 },
    #[error("{kind} at {at} ns addresses row {row}, but row {open} is open")]
    WrongRow { kind: CommandKind, row: u32, open: u32, at: u64 },
    #[error("{kind} requires a row address")]
    MissingRow { kind: CommandKind },
    #[error("row {row} was open for {t_on} ns, above the JEDEC limit of {limit} ns")]
    OpenTimeExceeded { row: u32, t_on: u64, limit: u64 },
    #[error("reference pattern {requested:?} does not match the initialization pattern {initialized:?}")]
    UnknownPattern { requested: crate::pattern::DataPattern, initialized: crate::pattern::DataPattern },
    #[error(transparent)]
    Profile(#[from] ProfileError),
}

/// Errors raised by device profiles and their curves.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProfileError {
    #[error("profile {profile:?} has no {sidedness} curve at {temp_c} C")]
    MissingCurve { profile: String, sidedness: Sidedness, temp_c: i32 },
    #[error("t_on {t_on} ns is below the minimum {min} ns")]
    TOnBelowMinimum { t_on: u64, min: u64 },
    #[error("invalid curve: {0}")]
    InvalidCurve(String),
    #[error("invalid profile: {0}")]
    Invalid(String),
    #[error("no temperature scaling from {from_c} C to {to_c} C")]
    UnsupportedTemperature { from_c: i32, to_c: i32 },
    #[error("degenerate row variation: min_factor {min} > max_factor {max}")]
    DegenerateVariation { min: f64, max: f64 },
    #[error("unknown builtin profile {0:?}")]
    UnknownBuiltin(String),
    #[error("unsupported profile schema version {0}")]
    Schema(u32),
    #[error("profile parse error: {0}")]
    Parse(String),
}

/// Errors raised while parsing trace files.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TraceError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("line {line}: timestamp {at} ns precedes previous command at {prev} ns")]
    NonMonotonic { line: usize, prev: u64, at: u64 },
}

/// Errors raised by trace generators.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum GenError {
    #[error("aggressors {a} and {b} do not sandwich a common victim")]
    NotSandwiching { a: u32, b: u32 },
    #[error("double-sided pattern needs exactly two aggressors, got {0}")]
    AggressorCount(usize),
    #[error("t_on {t_on} ns cannot fit a single activation in the {window} ns refresh window")]
    DoesNotFit { t_on: u64, window: u64 },
    #[error("t_on values must be sorted ascending and >= {min} ns")]
    BadSweep { min: u64 },
    #[error("cannot map victim row {victim} to two adjacent aggressors in a {rows}-row bank")]
    Mapping { victim: u32, rows: u32 },
    #[error("invalid parameter: {0}")]
    Invalid(String),
}

/// Errors raised by mitigation construction and adaptation.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum MitigationError {
    #[error("t_on_cap {cap} ns outside [{min}, {max}] ns")]
    CapOutOfRange { cap: u64, min: u64, max: u64 },
    #[error("scale factor {0} is below 1")]
    ScaleBelowOne(f64),
    #[error("invalid mitigation config: {0}")]
    Invalid(String),
    #[error(transparent)]
    Profile(#[from] ProfileError),
}

/// Errors raised by the characterizer.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum CharacterizeError {
    #[error(
        "row {row} is not vulnerable at t_on = {t_on} ns within one refresh window ({max_count} activations tried)"
    )]
    NotVulnerable { row: u32, t_on: u64, max_count: u64 },
    #[error("row {row} has no aggressor placement for a {sidedness} pattern")]
    NoPlacement { row: u32, sidedness: Sidedness },
    #[error("runs were taken on different materializations")]
    MismatchedMaterialization,
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Gen(#[from] GenError),
    #[error(transparent)]
    Mitigation(#[from] MitigationError),
    #[error(transparent)]
    Profile(#[from] ProfileError),
}
