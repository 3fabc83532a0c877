//! Open-page memory controller timing model used to lower request streams
//! into command traces and to measure the cost of capping row-open time.

use serde::{Deserialize, Serialize};

use crate::command::{Command, Trace};
use crate::timing::TimingParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Request {
    pub row: u32,
    pub arrival: u64,
}

/// ACT-to-read delay.
pub const T_RCD: u64 = 14;
/// Duration of one auto-refresh, during which the bank is busy.
pub const T_RFC: u64 = 350;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Lowered {
    pub trace: Trace,
    /// Time the last request's data is returned.
    pub completion_ns: u64,
    pub row_hits: u64,
    pub row_misses: u64,
    pub forced_precharges: u64,
}

/// Serves `requests` in arrival order with an open-page policy and an
/// auto-refresh every `t_refi`.
///
/// Row hits read immediately; misses precharge the open row (no earlier than
/// tRAS after its activation), wait `t_rc`, activate and read `T_RCD`
/// later. With `cap`, a row is never kept open longer than `cap`: it is
/// closed at the cap if idle, or before a read that would cross it.
pub fn lower_open_page(requests: &[Request], timing: &TimingParams, cap: Option<u64>) -> Lowered {
    let mut out = Lowered::default();
    let mut open: Option<(u32, u64)> = None;
    let mut ready = 0u64;
    let mut next_ref = timing.t_refi;
    let mut last_pre: Option<u64> = None;

    for req in requests {
        let mut s = req.arrival.max(ready);
        // Events before the request is served, in time order: the cap
        // expiring on an idle row, and due auto-refreshes.
        loop {
            if let (Some(c), Some((row, since))) = (cap, open) {
                let expiry = since + c;
                if expiry < s && expiry < next_ref {
                    let p = expiry.max(ready).max(since + timing.t_ras_min);
                    out.trace.push(Command::pre(row, p));
                    last_pre = Some(p);
                    open = None;
                    out.forced_precharges += 1;
                    continue;
                }
            }
            if next_ref > s {
                break;
            }
            let mut r = next_ref.max(ready);
            if let Some((row, since)) = open.take() {
                r = r.max(since + timing.t_ras_min);
                out.trace.push(Command::pre(row, r));
                last_pre = Some(r);
            }
            out.trace.push(Command::refresh(r));
            ready = r + T_RFC;
            next_ref += timing.t_refi;
            s = s.max(ready);
        }
        if let (Some(c), Some((row, since))) = (cap, open) {
            if row == req.row && s + timing.t_read > since + c {
                let p = s.max(since + timing.t_ras_min);
                out.trace.push(Command::pre(row, p));
                last_pre = Some(p);
                open = None;
                out.forced_precharges += 1;
            }
        }
        let rd = match open {
            Some((row, _)) if row == req.row => {
                out.row_hits += 1;
                s
            }
            _ => {
                out.row_misses += 1;
                let mut act = s;
                if let Some((row, since)) = open.take() {
                    let p = s.max(since + timing.t_ras_min);
                    out.trace.push(Command::pre(row, p));
                    last_pre = Some(p);
                }
                if let Some(p) = last_pre {
                    act = act.max(p + timing.t_rc);
                }
                out.trace.push(Command::act(req.row, act));
                open = Some((req.row, act));
                act + T_RCD
            }
        };
        out.trace.push(Command::read(req.row, rd));
        ready = rd + timing.t_read;
        out.completion_ns = ready;
    }
    if let Some((row, since)) = open {
        let mut p = ready.max(since + timing.t_ras_min);
        if let Some(c) = cap {
            p = p.min(since + c).max(ready);
        }
        out.trace.push(Command::pre(row, p));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OverheadPoint {
    pub t_on_cap_ns: u64,
    pub baseline_ns: u64,
    pub capped_ns: u64,
    /// `capped / baseline - 1`.
    pub overhead: f64,
    pub forced_precharges: u64,
}

/// Completion-time overhead of the capped policy for each cap.
pub fn measure_overhead(requests: &[Request], timing: &TimingParams, caps: &[u64]) -> Vec<OverheadPoint> {
    let base = lower_open_page(requests, timing, None);
    caps.iter()
        .map(|&c| {
            let capped = lower_open_page(requests, timing, Some(c));
            OverheadPoint {
                t_on_cap_ns: c,
                baseline_ns: base.completion_ns,
                capped_ns: capped.completion_ns,
                overhead: capped.completion_ns as f64 / base.completion_ns.max(1) as f64 - 1.0,
                forced_precharges: capped.forced_precharges,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::command::CommandKind;

    fn req(row: u32, arrival: u64) -> Request {
        Request { row, arrival }
    }

    #[test]
    fn hits_and_misses() {
        let tm = TimingParams::default();
        let l = lower_open_page(&[req(1, 0), req(1, 10), req(2, 20)], &tm, None);
        assert_eq!((l.row_hits, l.row_misses), (1, 2));
        let kinds: Vec<_> = l.trace.iter().map(|c| c.kind).collect();
        use CommandKind::*;
        assert_eq!(kinds, vec![Activate, Read, Read, Precharge, Activate, Read, Precharge]);
    }

    #[test]
    fn cap_forces_precharge_on_idle_row() {
        let tm = TimingParams::default();
        let reqs = [req(1, 0), req(1, 5_000)];
        let base = lower_open_page(&reqs, &tm, None);
        assert_eq!(base.forced_precharges, 0);
        let capped = lower_open_page(&reqs, &tm, Some(1_000));
        assert_eq!(capped.forced_precharges, 1);
        assert!(capped.completion_ns > base.completion_ns);
        for (_, act, pre) in capped.trace.open_intervals() {
            assert!(pre - act <= 1_000);
        }
    }

    #[test]
    fn refresh_is_issued_every_trefi() {
        let tm = TimingParams::default();
        let reqs: Vec<_> = (0..100).map(|i| req(i % 3, i as u64 * 1_000)).collect();
        let l = lower_open_page(&reqs, &tm, None);
        assert_eq!(l.trace.count(CommandKind::AutoRefresh), (99_000 / 7_800) as usize);
    }
}
