use std::fmt;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::DeviceProfile;
use crate::error::ProfileError;
use crate::fixed;

/// Disturbance mechanism behind a bitflip.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mechanism {
    Hammer,
    Press,
    Retention,
}

impl fmt::Display for Mechanism {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mechanism::Hammer => "hammer",
            Mechanism::Press => "press",
            Mechanism::Retention => "retention",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum VulnClass {
    None,
    HammerOnly,
    PressOnly,
    Both,
    /// Weak retention only; immune to read disturbance.
    Retention,
}

impl VulnClass {
    pub fn admits(self, mechanism: Mechanism) -> bool {
        matches!(
            (self, mechanism),
            (VulnClass::HammerOnly | VulnClass::Both, Mechanism::Hammer)
                | (VulnClass::PressOnly | VulnClass::Both, Mechanism::Press)
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FlipDirection {
    ZeroToOne,
    OneToZero,
}

impl FlipDirection {
    /// Stored value a cell must hold to be able to flip this way.
    pub fn source_bit(self) -> bool {
        matches!(self, FlipDirection::OneToZero)
    }

    pub fn label(self) -> &'static str {
        match self {
            FlipDirection::ZeroToOne => "0->1",
            FlipDirection::OneToZero => "1->0",
        }
    }
}

impl fmt::Display for FlipDirection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Static vulnerability of one cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellVuln {
    pub vuln_class: VulnClass,
    /// Multiplier (>= 1) over the row threshold.
    pub threshold_mult: f64,
    pub flip_direction: FlipDirection,
    /// `None` means the cell never leaks within any modeled interval.
    pub retention_time: Option<u64>,
}

impl CellVuln {
    const IMMUNE: CellVuln = CellVuln {
        vuln_class: VulnClass::None,
        threshold_mult: 1.0,
        flip_direction: FlipDirection::OneToZero,
        retention_time: None,
    };
}

#[derive(Debug, Clone)]
pub(crate) struct RowVuln {
    pub factor: f64,
    pub cells: Vec<CellVuln>,
    /// `(threshold, cell)` ascending, for cells admitting each mechanism.
    pub hammer: Vec<(u64, u32)>,
    pub press: Vec<(u64, u32)>,
    /// `(retention_ns, cell)` ascending.
    pub retention: Vec<(u64, u32)>,
}

/// Seeded per-row and per-cell vulnerability assignment for one bank.
///
/// Every row with at least four cells gets a weakest RowHammer cell and a
/// weakest RowPress cell (multiplier exactly 1) on each bit parity, so the
/// row's ACmin equals `base_threshold x row_factor` under any pattern that
/// stores both bit values.
#[derive(Debug, Clone)]
pub struct Materialization {
    profile_name: String,
    base_threshold: u64,
    seed: u64,
    cells_per_row: usize,
    pub(crate) rows: Vec<RowVuln>,
}

impl Materialization {
    pub fn new(profile: &DeviceProfile, row_count: u32, cells_per_row: usize, seed: u64) -> Result<Self, ProfileError> {
        let rv = &profile.row_variation;
        if rv.min_factor > rv.max_factor {
            return Err(ProfileError::DegenerateVariation { min: rv.min_factor, max: rv.max_factor });
        }
        if row_count == 0 || cells_per_row == 0 {
            return Err(ProfileError::Invalid("row_count and cells_per_row must be at least 1".into()));
        }
        if cells_per_row > u32::MAX as usize {
            return Err(ProfileError::Invalid("cells_per_row too large".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cm = &profile.cells;
        let log_uniform = |rng: &mut ChaCha8Rng, lo: f64, hi: f64| -> f64 {
            if lo == hi {
                lo
            } else {
                (rng.gen_range(lo.ln()..hi.ln())).exp()
            }
        };

        let factors: Vec<f64> = (0..row_count).map(|_| log_uniform(&mut rng, rv.min_factor, rv.max_factor)).collect();

        let mut cells: Vec<Vec<CellVuln>> = Vec::with_capacity(row_count as usize);
        let mut weakest: Vec<Vec<u32>> = Vec::with_capacity(row_count as usize);
        for _ in 0..row_count {
            let mut row = vec![CellVuln::IMMUNE; cells_per_row];
            for cell in row.iter_mut() {
                let u: f64 = rng.gen();
                if u < cm.hammer_fraction {
                    cell.vuln_class = VulnClass::HammerOnly;
                } else if u < cm.hammer_fraction + cm.press_fraction {
                    cell.vuln_class = VulnClass::PressOnly;
                } else {
                    continue;
                }
                cell.threshold_mult = log_uniform(&mut rng, 1.0, cm.threshold_mult_max);
            }
            // Weakest cells: hammer even/odd, press even/odd.
            let mut picked = Vec::new();
            if cells_per_row >= 4 {
                let evens = cells_per_row.div_ceil(2);
                let odds = cells_per_row / 2;
                let mut even_pick = sample(&mut rng, evens, 2).into_vec();
                let mut odd_pick = sample(&mut rng, odds, 2).into_vec();
                even_pick.iter_mut().for_each(|i| *i *= 2);
                odd_pick.iter_mut().for_each(|i| *i = *i * 2 + 1);
                let slots = [
                    (even_pick[0], VulnClass::HammerOnly),
                    (odd_pick[0], VulnClass::HammerOnly),
                    (even_pick[1], VulnClass::PressOnly),
                    (odd_pick[1], VulnClass::PressOnly),
                ];
                for (idx, class) in slots {
                    row[idx] = CellVuln { vuln_class: class, threshold_mult: 1.0, ..CellVuln::IMMUNE };
                    picked.push(idx as u32);
                }
            }
            cells.push(row);
            weakest.push(picked);
        }

        // Overlap cells are drawn among press-vulnerable cells, excluding the
        // designated weakest ones, with exact counts.
        let press_cells: Vec<(usize, usize)> = cells
            .iter()
            .enumerate()
            .flat_map(|(r, row)| {
                row.iter().enumerate().filter(|(_, c)| c.vuln_class == VulnClass::PressOnly).map(move |(i, _)| (r, i))
            })
            .collect();
        let eligible: Vec<(usize, usize)> =
            press_cells.iter().copied().filter(|&(r, i)| !weakest[r].contains(&(i as u32))).collect();
        let n_press = press_cells.len() as f64;
        let n_both = ((profile.overlap_rh * n_press).floor() as usize).min(eligible.len());
        for k in sample(&mut rng, eligible.len(), n_both).into_iter() {
            let (r, i) = eligible[k];
            cells[r][i].vuln_class = VulnClass::Both;
        }
        let tail = &profile.retention_tail;
        let n_ret = ((profile.overlap_ret * n_press).floor() as usize).min(eligible.len());
        for k in sample(&mut rng, eligible.len(), n_ret).into_iter() {
            let (r, i) = eligible[k];
            cells[r][i].retention_time =
                Some(log_uniform(&mut rng, tail.min_retention_ns as f64, tail.max_retention_ns as f64) as u64);
        }

        for (r, row) in cells.iter_mut().enumerate() {
            for (i, cell) in row.iter_mut().enumerate() {
                let designated = weakest[r].contains(&(i as u32));
                match cell.vuln_class {
                    VulnClass::HammerOnly => {
                        cell.flip_direction = if designated || rng.gen::<f64>() < profile.hammer_direction_bias {
                            FlipDirection::ZeroToOne
                        } else {
                            FlipDirection::OneToZero
                        };
                    }
                    VulnClass::PressOnly | VulnClass::Both => {
                        cell.flip_direction = if designated || rng.gen::<f64>() < profile.press_direction_bias {
                            FlipDirection::OneToZero
                        } else {
                            FlipDirection::ZeroToOne
                        };
                    }
                    VulnClass::None => {
                        if tail.fraction > 0.0 && rng.gen::<f64>() < tail.fraction {
                            cell.vuln_class = VulnClass::Retention;
                            cell.retention_time =
                                Some(log_uniform(&mut rng, tail.min_retention_ns as f64, tail.max_retention_ns as f64)
                                    as u64);
                            cell.flip_direction =
                                if rng.gen::<bool>() { FlipDirection::OneToZero } else { FlipDirection::ZeroToOne };
                        }
                    }
                    VulnClass::Retention => {}
                }
            }
        }

        let base = profile.base_threshold as f64;
        let rows = cells
            .into_iter()
            .zip(factors)
            .map(|(cells, factor)| {
                let row_threshold = base * factor;
                let mut hammer = Vec::new();
                let mut press = Vec::new();
                let mut retention = Vec::new();
                for (i, c) in cells.iter().enumerate() {
                    let thr = fixed::threshold(row_threshold * c.threshold_mult);
                    if c.vuln_class.admits(Mechanism::Hammer) {
                        hammer.push((thr, i as u32));
                    }
                    if c.vuln_class.admits(Mechanism::Press) {
                        press.push((thr, i as u32));
                    }
                    if let Some(t) = c.retention_time {
                        retention.push((t, i as u32));
                    }
                }
                hammer.sort_unstable();
                press.sort_unstable();
                retention.sort_unstable();
                RowVuln { factor, cells, hammer, press, retention }
            })
            .collect();

        Ok(Self {
            profile_name: profile.name.clone(),
            base_threshold: profile.base_threshold,
            seed,
            cells_per_row,
            rows,
        })
    }

    pub fn row_count(&self) -> u32 {
        self.rows.len() as u32
    }

    pub fn cells_per_row(&self) -> usize {
        self.cells_per_row
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn profile_name(&self) -> &str {
        &self.profile_name
    }

    pub fn base_threshold(&self) -> u64 {
        self.base_threshold
    }

    pub fn row_factor(&self, row: u32) -> f64 {
        self.rows[row as usize].factor
    }

    /// Threshold of the row's weakest cell for `mechanism`, if any.
    pub fn row_threshold(&self, row: u32, mechanism: Mechanism) -> Option<f64> {
        let r = &self.rows[row as usize];
        let list = match mechanism {
            Mechanism::Hammer => &r.hammer,
            Mechanism::Press => &r.press,
            Mechanism::Retention => return None,
        };
        list.first().map(|&(_, i)| self.base_threshold as f64 * r.factor * r.cells[i as usize].threshold_mult)
    }

    pub fn cell(&self, row: u32, cell: usize) -> &CellVuln {
        &self.rows[row as usize].cells[cell]
    }

    pub fn row_cells(&self, row: u32) -> &[CellVuln] {
        &self.rows[row as usize].cells
    }

    /// Identity used to check that separate runs share one materialization.
    pub fn fingerprint(&self) -> (String, u64, u32, usize) {
        (self.profile_name.clone(), self.seed, self.row_count(), self.cells_per_row)
    }

    pub fn class_counts(&self) -> ClassCounts {
        let mut counts = ClassCounts::default();
        for row in &self.rows {
            for c in &row.cells {
                match c.vuln_class {
                    VulnClass::None => counts.none += 1,
                    VulnClass::HammerOnly => counts.hammer_only += 1,
                    VulnClass::PressOnly => counts.press_only += 1,
                    VulnClass::Both => counts.both += 1,
                    VulnClass::Retention => counts.retention_only += 1,
                }
                if c.retention_time.is_some() && matches!(c.vuln_class, VulnClass::PressOnly | VulnClass::Both) {
                    counts.press_with_retention += 1;
                }
            }
        }
        counts
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ClassCounts {
    pub none: usize,
    pub hammer_only: usize,
    pub press_only: usize,
    pub both: usize,
    pub retention_only: usize,
    pub press_with_retention: usize,
}

impl ClassCounts {
    pub fn press_vulnerable(&self) -> usize {
        self.press_only + self.both
    }
}
