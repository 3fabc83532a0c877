//! Independent oracles for simulator outputs.

use std::collections::HashMap;

use num_bigint::BigInt;
use num_rational::BigRational;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rowsim::bank::{Bank, BankConfig, Event, SidednessMode};
use rowsim::characterize::{crossover_scan, BankFactory};
use rowsim::command::{Command, Trace};
use rowsim::controller::lower_open_page;
use rowsim::eval::{para_monte_carlo, run_poc, ParaMonteCarlo};
use rowsim::mitigation::{MisraGries, MitigationConfig, TrrConfig, TrrTrigger};
use rowsim::pattern::DataPattern;
use rowsim::profile::{builtin, DeviceProfile, Mechanism, Sidedness};
use rowsim::sim::Simulation;
use rowsim::tracegen::{gen_requests, AccessOrder, PocParams, RowMapping};

fn factory(profile: DeviceProfile, rows: u32, seed: u64) -> BankFactory {
    BankFactory::new(profile, rows, 64, seed, BankConfig::new(80)).unwrap()
}

fn mean80() -> DeviceProfile {
    builtin("paper-mean-80C").unwrap()
}

/// Replays `count` activations one ACT/PRE pair at a time.
fn stepwise(bank: &mut Bank, aggressors: &[u32], count: u64, t_on: u64, start: u64) {
    let period = t_on + bank.timing().t_rc;
    let mut out = Vec::new();
    for k in 0..count {
        let at = start + k * period;
        bank.activate(aggressors[(k % aggressors.len() as u64) as usize], at, &mut out).unwrap();
        bank.precharge(at + t_on, &mut out).unwrap();
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn bulk_hammer_matches_stepwise(
        seed in 0u64..1000,
        victim in 2u32..30,
        double in any::<bool>(),
        fixed in any::<bool>(),
        t_on in prop_oneof![Just(36u64), 37u64..200_000],
        count in 1u64..3_000,
        base in 8u64..200,
    ) {
        let p = mean80().with_base_threshold(base);
        let f = factory(p, 32, seed);
        let side = if double { Sidedness::Double } else { Sidedness::Single };
        let aggressors: Vec<u32> = if double { vec![victim - 1, victim + 1] } else { vec![victim + 1] };
        let mode = if fixed { SidednessMode::Fixed(side) } else { SidednessMode::Auto };
        let mut fast = f.bank(mode, DataPattern::Checkerboard).unwrap();
        let mut slow = fast.clone();
        let mut out = Vec::new();
        let end = fast.hammer(&aggressors, count, t_on, 100, &mut out).unwrap();
        stepwise(&mut slow, &aggressors, count, t_on, 100);
        prop_assert_eq!(end, slow.now());
        prop_assert_eq!(fast.flip_log(), slow.flip_log());
        for r in 0..32 {
            prop_assert_eq!(fast.disturbance_fixed(r), slow.disturbance_fixed(r), "row {}", r);
        }
        let flips = out.iter().filter(|e| matches!(e, Event::Flip(_))).count();
        prop_assert_eq!(flips, fast.flip_log().len());
    }
}

fn exact(x: f64) -> BigRational {
    BigRational::from_float(x).unwrap()
}

#[test]
fn rational_replay_of_mixed_on_times() {
    let p = mean80().with_base_threshold(400);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut checked = 0;
    for case in 0..200 {
        let f = factory(p.clone(), 16, case);
        let victim = rng.gen_range(1..15);
        let aggressor = victim + 1;
        let t_ons: Vec<u64> =
            (0..2_000).map(|_| if rng.gen_bool(0.5) { 36 } else { rng.gen_range(37..70_200) }).collect();
        // First activation whose cumulative exact charge reaches the row's
        // weakest threshold for that activation's mechanism.
        let mut acc = BigRational::from_integer(BigInt::from(0));
        let mut predicted = None;
        let mut near_tie = false;
        for (i, &t) in t_ons.iter().enumerate() {
            acc += exact(p.charge(t, Sidedness::Single, 80).unwrap());
            let mech = if t > 36 { Mechanism::Press } else { Mechanism::Hammer };
            let thr = exact(f.materialization.row_threshold(victim, mech).unwrap());
            let gap = (&acc - &thr) / &thr;
            let eps = exact(1e-9);
            if gap.clone() < eps.clone() && -gap.clone() < eps {
                near_tie = true;
            }
            if acc >= thr {
                predicted = Some(i);
                break;
            }
        }
        if near_tie {
            continue;
        }
        let mut bank = f.bank(SidednessMode::Fixed(Sidedness::Single), DataPattern::Checkerboard).unwrap();
        let mut out = Vec::new();
        let mut t = 0;
        let mut got = None;
        for (i, &on) in t_ons.iter().enumerate() {
            bank.activate(aggressor, t, &mut out).unwrap();
            bank.precharge(t + on, &mut out).unwrap();
            t += on + 14;
            if got.is_none() && bank.flip_log().iter().any(|e| e.row == victim) {
                got = Some(i);
                break;
            }
        }
        assert_eq!(got, predicted, "case {case}");
        checked += 1;
    }
    assert!(checked >= 190);
}

/// Probability that a run of `f` unrefreshed activations occurs within `n`
/// activations when each activation refreshes the victim with probability `q`.
fn escape_probability(q: f64, f: u64, n: u64) -> f64 {
    let mut state = vec![0.0; f as usize];
    state[0] = 1.0;
    let mut flipped = 0.0;
    for _ in 0..n {
        let mut next = vec![0.0; f as usize];
        for (s, &m) in state.iter().enumerate() {
            if s + 1 >= f as usize {
                flipped += m;
            } else {
                next[0] += m * q;
                next[s + 1] += m * (1.0 - q);
            }
        }
        state = next;
    }
    flipped
}

#[test]
fn para_monte_carlo_matches_markov_chain() {
    for (p, f, n) in [(0.5, 10, 200), (0.2, 20, 300), (0.9, 4, 100)] {
        let windows = 40_000;
        let mc = para_monte_carlo(&ParaMonteCarlo {
            p,
            rng_seed: 9,
            windows,
            activations_per_window: n,
            flip_after: f,
            blast_radius: 1,
        })
        .unwrap();
        let want = escape_probability(p / 2.0, f, n);
        let sigma = (want * (1.0 - want) / windows as f64).sqrt();
        assert!((mc.flip_probability - want).abs() <= 4.0 * sigma + 1e-9, "p={p}: {} vs {want}", mc.flip_probability);
    }
}

#[test]
fn full_simulation_para_agrees_with_monte_carlo() {
    // Double-sided attack on one victim; the victim flips at its weakest
    // threshold, which a zero-variation profile pins to the base.
    let base = 40;
    let prof = mean80().zero_variation().with_base_threshold(base);
    let f = factory(prof.clone(), 8, 1);
    let flip_after = (base as f64 / prof.charge(36, Sidedness::Double, 80).unwrap()).ceil() as u64;
    let (p, n, trials) = (0.3, 400u64, 3_000u64);
    let mut flipped = 0;
    for seed in 0..trials {
        let bank = f.bank(SidednessMode::Fixed(Sidedness::Double), DataPattern::Checkerboard).unwrap();
        let cfg = MitigationConfig::Para(rowsim::mitigation::ParaConfig { p, rng_seed: seed });
        let mut sim = Simulation::with_config(bank, &cfg, None).unwrap();
        let cmds = (0..n).flat_map(|k| {
            let row = if k % 2 == 0 { 3 } else { 5 };
            [Command::act(row, k * 50), Command::pre(row, k * 50 + 36)]
        });
        sim.run_commands(cmds).unwrap();
        flipped += u64::from(sim.bank().flip_log().iter().any(|e| e.row == 4));
    }
    let sim_rate = flipped as f64 / trials as f64;
    let want = escape_probability(p / 2.0, flip_after, n);
    let sigma = (want * (1.0 - want) / trials as f64).sqrt();
    assert!((sim_rate - want).abs() <= 4.0 * sigma + 0.01, "{sim_rate} vs {want} (flip_after {flip_after})");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn misra_gries_bounds_against_exact_counts(
        capacity in 1usize..24,
        events in prop::collection::vec((0u32..40, 1u64..100), 1..2_000),
    ) {
        let mut mg = MisraGries::new(capacity);
        let mut exact: HashMap<u32, u64> = HashMap::new();
        let mut total = 0;
        for &(k, w) in &events {
            mg.insert(k, w);
            *exact.entry(k).or_default() += w;
            total += w;
        }
        prop_assert!(mg.len() <= capacity);
        for (&k, &c) in &exact {
            let est = mg.estimate(k);
            prop_assert!(est <= c);
            prop_assert!(est + total / (capacity as u64 + 1) >= c, "key {} count {} est {}", k, c, est);
        }
    }
}

fn log_interp(anchors: &[(u64, f64)], t: f64) -> f64 {
    let i = anchors.windows(2).position(|w| t <= w[1].0 as f64).unwrap_or(anchors.len() - 2);
    let ((t0, a0), (t1, a1)) = (anchors[i], anchors[i + 1]);
    let x = (t.ln() - (t0 as f64).ln()) / ((t1 as f64).ln() - (t0 as f64).ln());
    (a0.ln() + x * (a1.ln() - a0.ln())).exp()
}

#[test]
fn crossover_matches_segment_intersection() {
    let p = builtin("crossover").unwrap();
    let temp = p.temperatures()[0];
    let single = p.curve(Sidedness::Single, temp).unwrap().anchors().to_vec();
    let double = p.curve(Sidedness::Double, temp).unwrap().anchors().to_vec();
    let mut ts: Vec<u64> = single.iter().chain(&double).map(|a| a.0).collect();
    ts.sort_unstable();
    ts.dedup();
    // Within one merged segment both log curves are lines in log t.
    let mut roots = Vec::new();
    for w in ts.windows(2) {
        let (a, b) = (w[0] as f64, w[1] as f64);
        let da = log_interp(&single, a).ln() - log_interp(&double, a).ln();
        let db = log_interp(&single, b).ln() - log_interp(&double, b).ln();
        if da.signum() != db.signum() && da != 0.0 && db != 0.0 {
            let x = da / (da - db);
            roots.push((a.ln() + x * (b.ln() - a.ln())).exp());
        }
    }
    assert_eq!(roots.len(), 1, "{roots:?}");
    let got = crossover_scan(&p, 36, 30_000_000, temp).unwrap().unwrap() as f64;
    assert!((got - roots[0]).abs() <= 1.0, "{got} vs {}", roots[0]);
}

#[test]
fn simulation_events_match_bank_log() {
    let f = factory(mean80().with_base_threshold(100), 32, 4);
    let bank = f.bank(SidednessMode::Auto, DataPattern::Checkerboard).unwrap();
    let mut sim = Simulation::with_config(bank, &MitigationConfig::None, None).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut t = 0;
    let mut trace = Trace::new();
    for _ in 0..5_000 {
        let row = rng.gen_range(10..14);
        let on = if rng.gen_bool(0.3) { rng.gen_range(36..20_000) } else { 36 };
        trace.push(Command::act(row, t));
        trace.push(Command::pre(row, t + on));
        t += on + 14;
    }
    sim.run(&trace).unwrap();
    let from_events: Vec<_> =
        sim.events().iter().filter_map(|e| if let Event::Flip(f) = e { Some(*f) } else { None }).collect();
    assert!(!from_events.is_empty());
    assert_eq!(from_events, sim.bank().flip_log());
    // Every flip lands next to an activated row and matches the stored bit.
    for e in &from_events {
        assert!((9..=14).contains(&e.row));
        let cell = sim.bank().cell(e.row, e.cell as usize);
        assert_eq!(cell.stored_bit, !e.direction.source_bit());
    }
}

#[test]
fn auto_refresh_never_adds_flips() {
    let f = factory(mean80().with_base_threshold(2_000), 64, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let timing = *f.timing();
    for _ in 0..20 {
        let mut plain = Trace::new();
        let mut t = 0;
        for _ in 0..4_000 {
            let row = rng.gen_range(20..24);
            let on = if rng.gen_bool(0.5) { 36 } else { rng.gen_range(37..5_000) };
            plain.push(Command::act(row, t));
            plain.push(Command::pre(row, t + on));
            t += on + 14;
        }
        let refreshed = rowsim::tracegen::interleave_refresh(&plain, &timing);
        let flips = |trace: &Trace| {
            let mut bank = f.bank(SidednessMode::Auto, DataPattern::Checkerboard).unwrap();
            for c in trace.iter() {
                bank.apply_command(c).unwrap();
            }
            bank.flip_log().len()
        };
        assert!(flips(&refreshed) <= flips(&plain));
    }
}

#[test]
fn trr_catches_attack_without_dummies() {
    let f = factory(mean80(), 256, 1).with_mitigation(MitigationConfig::Trr(TrrConfig {
        sample_rate: 1.0,
        table_size: 4,
        refresh_on: TrrTrigger::AutoRefresh,
        rng_seed: 0,
    }));
    let mapping = RowMapping::identity(256);
    let params = |dummy_rows| PocParams {
        num_reads: 32,
        num_aggr_acts: 4,
        num_iter: 1_500,
        order: AccessOrder::FlushEachAccess,
        dummy_rows,
        victim_rows: vec![60, 120],
        flush_overhead_ns: 150,
        sync_to_refresh: true,
    };
    let bypass = run_poc(&f, &params(8), &mapping).unwrap();
    let caught = run_poc(&f, &params(0), &mapping).unwrap();
    assert!(bypass.victim_flips > 0);
    assert_eq!(caught.victim_flips, 0);
    assert!(caught.neighbor_refreshes > 0);
}

#[test]
fn row_switch_frequency_follows_locality() {
    let timing = rowsim::timing::TimingParams::default();
    for locality in [0.0, 0.5, 0.9] {
        let reqs = gen_requests(1_024, 5.0, 20_000_000, locality, 8).unwrap();
        let lowered = lower_open_page(&reqs, &timing, None);
        let switches = reqs.windows(2).filter(|w| w[0].row != w[1].row).count() as f64;
        let want = (1.0 - locality) * (1.0 - 1.0 / 1_024.0);
        let got = switches / (reqs.len() - 1) as f64;
        let sigma = (want * (1.0 - want) / reqs.len() as f64).sqrt();
        assert!((got - want).abs() <= 4.0 * sigma + 1e-3, "locality {locality}: {got} vs {want}");
        // Every switch misses; refresh can close a row under a hit.
        assert!(lowered.row_misses as f64 >= switches);
        assert_eq!(lowered.row_hits + lowered.row_misses, reqs.len() as u64);
    }
}
