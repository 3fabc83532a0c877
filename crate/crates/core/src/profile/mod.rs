//! Synthetic DRAM device vulnerability profiles.
//!
//! A [`DeviceProfile`] describes how many activations a victim row tolerates
//! as a function of the aggressor's row-open time (`t_on`), per access
//! pattern sidedness and temperature, together with the statistics used to
//! materialize per-row and per-cell vulnerability.

mod builtin;
mod curve;
mod materialize;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::ProfileError;

pub use builtin::{builtin, builtin_names};
pub use curve::AcminCurve;
pub use materialize::{CellVuln, FlipDirection, Materialization, Mechanism, VulnClass};

pub const PROFILE_SCHEMA: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sidedness {
    Single,
    Double,
}

impl fmt::Display for Sidedness {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Sidedness::Single => "single",
            Sidedness::Double => "double",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveEntry {
    pub sidedness: Sidedness,
    pub temp_c: i32,
    pub anchors: AcminCurve,
}

/// ACmin at `to_c` is `factor` times ACmin at `from_c` beyond tRAS.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TempScale {
    pub from_c: i32,
    pub to_c: i32,
    pub factor: f64,
    /// On-time the factor was characterized at.
    pub at_t_on_ns: u64,
}

/// Bounded log-uniform distribution of per-row threshold factors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowVariation {
    pub distribution: String,
    pub min_factor: f64,
    pub max_factor: f64,
    pub seed: u64,
}

/// Fractions of cells that are RowHammer- or RowPress-vulnerable, and the
/// spread of their per-cell threshold multipliers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellModel {
    pub hammer_fraction: f64,
    pub press_fraction: f64,
    pub threshold_mult_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetentionTail {
    pub fraction: f64,
    pub min_retention_ns: u64,
    pub max_retention_ns: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceProfile {
    pub schema: u32,
    pub name: String,
    /// Single-sided ACmin at tRAS and the reference temperature.
    pub base_threshold: u64,
    pub reference_temp_c: i32,
    pub curves: Vec<CurveEntry>,
    #[serde(default)]
    pub temp_scale: Vec<TempScale>,
    pub row_variation: RowVariation,
    pub cells: CellModel,
    pub overlap_rh: f64,
    pub overlap_ret: f64,
    pub press_direction_bias: f64,
    pub hammer_direction_bias: f64,
    pub retention_tail: RetentionTail,
}

impl DeviceProfile {
    pub fn validate(&self) -> Result<(), ProfileError> {
        let invalid = |msg: String| Err(ProfileError::Invalid(msg));
        if self.schema != PROFILE_SCHEMA {
            return Err(ProfileError::Schema(self.schema));
        }
        if self.base_threshold == 0 {
            return invalid("base_threshold must be positive".into());
        }
        if self.curves.is_empty() {
            return invalid("profile has no curves".into());
        }
        let t_ras = self.curves[0].anchors.min_t_on();
        for (i, entry) in self.curves.iter().enumerate() {
            entry.anchors.validate()?;
            if entry.anchors.min_t_on() != t_ras {
                return invalid(format!(
                    "curve {} {} C starts at {} ns, expected {t_ras} ns",
                    entry.sidedness,
                    entry.temp_c,
                    entry.anchors.min_t_on()
                ));
            }
            if self.curves[..i].iter().any(|e| e.sidedness == entry.sidedness && e.temp_c == entry.temp_c) {
                return invalid(format!("duplicate curve {} {} C", entry.sidedness, entry.temp_c));
            }
        }
        let single_ref = self.curve(Sidedness::Single, self.reference_temp_c)?;
        if single_ref.anchors()[0].1 != self.base_threshold as f64 {
            return invalid(format!(
                "single-sided curve at {} C starts at {}, expected base_threshold {}",
                self.reference_temp_c,
                single_ref.anchors()[0].1,
                self.base_threshold
            ));
        }
        for (label, v) in [
            ("overlap_rh", self.overlap_rh),
            ("overlap_ret", self.overlap_ret),
            ("press_direction_bias", self.press_direction_bias),
            ("hammer_direction_bias", self.hammer_direction_bias),
            ("cells.hammer_fraction", self.cells.hammer_fraction),
            ("cells.press_fraction", self.cells.press_fraction),
            ("retention_tail.fraction", self.retention_tail.fraction),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return invalid(format!("{label} = {v} is outside [0, 1]"));
            }
        }
        if self.cells.hammer_fraction + self.cells.press_fraction > 1.0 {
            return invalid("hammer_fraction + press_fraction exceeds 1".into());
        }
        if self.cells.threshold_mult_max < 1.0 {
            return invalid("threshold_mult_max must be at least 1".into());
        }
        let rv = &self.row_variation;
        if rv.distribution != "log_uniform" {
            return invalid(format!("unsupported row variation distribution {:?}", rv.distribution));
        }
        if rv.min_factor > rv.max_factor {
            return Err(ProfileError::DegenerateVariation { min: rv.min_factor, max: rv.max_factor });
        }
        if rv.min_factor <= 0.0 {
            return invalid("row variation factors must be positive".into());
        }
        if self.retention_tail.min_retention_ns > self.retention_tail.max_retention_ns {
            return invalid("retention tail bounds are inverted".into());
        }
        for ts in &self.temp_scale {
            if !(ts.factor > 0.0 && ts.factor.is_finite()) {
                return invalid(format!("temperature factor {} must be positive", ts.factor));
            }
        }
        Ok(())
    }

    /// tRAS, the on-time every curve starts at.
    pub fn t_ras_min(&self) -> u64 {
        self.curves[0].anchors.min_t_on()
    }

    pub fn temperatures(&self) -> Vec<i32> {
        let mut temps: Vec<i32> = self.curves.iter().map(|c| c.temp_c).collect();
        temps.sort_unstable();
        temps.dedup();
        temps
    }

    pub fn has_curve(&self, sidedness: Sidedness, temp_c: i32) -> bool {
        self.curves.iter().any(|c| c.sidedness == sidedness && c.temp_c == temp_c)
    }

    pub fn curve(&self, sidedness: Sidedness, temp_c: i32) -> Result<&AcminCurve, ProfileError> {
        self.curves
            .iter()
            .find(|c| c.sidedness == sidedness && c.temp_c == temp_c)
            .map(|c| &c.anchors)
            .ok_or_else(|| ProfileError::MissingCurve { profile: self.name.clone(), sidedness, temp_c })
    }

    /// Interpolated ACmin for the given pattern context.
    pub fn acmin_at(&self, t_on: u64, sidedness: Sidedness, temp_c: i32) -> Result<f64, ProfileError> {
        self.curve(sidedness, temp_c)?.at(t_on)
    }

    /// Per-activation weight `ACmin(tRAS) / ACmin(t_on)` within one context.
    /// Always 1 at tRAS.
    pub fn weight(&self, t_on: u64, sidedness: Sidedness, temp_c: i32) -> Result<f64, ProfileError> {
        let curve = self.curve(sidedness, temp_c)?;
        let at = curve.at(t_on)?;
        Ok(curve.anchors()[0].1 / at)
    }

    /// Disturbance a victim receives from one activation, in units of the
    /// single-sided tRAS threshold: `base_threshold / ACmin(t_on, ctx)`.
    ///
    /// Equals [`weight`](Self::weight) whenever the context's curve starts at
    /// `base_threshold`.
    pub fn charge(&self, t_on: u64, sidedness: Sidedness, temp_c: i32) -> Result<f64, ProfileError> {
        Ok(self.base_threshold as f64 / self.acmin_at(t_on, sidedness, temp_c)?)
    }

    /// Largest [`charge`](Self::charge) over the sidedness curves available at
    /// `temp_c`. Mitigations count with this so they never undercount.
    pub fn worst_charge(&self, t_on: u64, temp_c: i32) -> Result<f64, ProfileError> {
        let mut best: Option<f64> = None;
        for entry in self.curves.iter().filter(|c| c.temp_c == temp_c) {
            let c = self.base_threshold as f64 / entry.anchors.at(t_on)?;
            best = Some(best.map_or(c, |b: f64| b.max(c)));
        }
        best.ok_or_else(|| ProfileError::MissingCurve {
            profile: self.name.clone(),
            sidedness: Sidedness::Single,
            temp_c,
        })
    }

    /// Smallest per-row flip threshold the profile can materialize.
    pub fn min_row_threshold(&self) -> f64 {
        self.base_threshold as f64 * self.row_variation.min_factor
    }

    fn temp_factor(&self, from_c: i32, to_c: i32) -> Option<f64> {
        self.temp_scale.iter().find_map(|ts| {
            if ts.from_c == from_c && ts.to_c == to_c {
                Some(ts.factor)
            } else if ts.from_c == to_c && ts.to_c == from_c {
                Some(1.0 / ts.factor)
            } else {
                None
            }
        })
    }

    /// Derives a profile at `to_c` by scaling every curve at `from_c` beyond
    /// tRAS by the profile's temperature factor.
    pub fn scale_temperature(&self, from_c: i32, to_c: i32) -> Result<DeviceProfile, ProfileError> {
        if !self.temperatures().contains(&from_c) {
            return Err(ProfileError::UnsupportedTemperature { from_c, to_c });
        }
        if from_c == to_c {
            return Ok(self.clone());
        }
        let factor = self.temp_factor(from_c, to_c).ok_or(ProfileError::UnsupportedTemperature { from_c, to_c })?;
        let mut out = self.clone();
        out.curves.retain(|c| c.temp_c != to_c);
        for entry in self.curves.iter().filter(|c| c.temp_c == from_c) {
            out.curves.push(CurveEntry {
                sidedness: entry.sidedness,
                temp_c: to_c,
                anchors: entry.anchors.scale_tail(factor),
            });
        }
        out.curves.sort_by_key(|c| (c.temp_c, c.sidedness));
        if out.reference_temp_c == from_c {
            out.reference_temp_c = to_c;
        }
        let from_suffix = format!("-{from_c}C");
        out.name = match self.name.strip_suffix(&from_suffix) {
            Some(stem) => format!("{stem}-{to_c}C"),
            None => format!("{}@{to_c}C", self.name),
        };
        out.validate()?;
        Ok(out)
    }

    /// Copy with every curve rescaled so single-sided ACmin at tRAS equals
    /// `base_threshold`. Ratios are kept; anchors are floored at 1.
    pub fn with_base_threshold(&self, base_threshold: u64) -> DeviceProfile {
        let ratio = base_threshold as f64 / self.base_threshold as f64;
        let mut out = self.clone();
        out.base_threshold = base_threshold;
        for entry in &mut out.curves {
            let anchors = entry
                .anchors
                .anchors()
                .iter()
                .enumerate()
                .map(|(i, &(t, a))| {
                    // Keep the head exact so the reference curve starts at the new base.
                    let scaled = if i == 0 { (a * ratio).round() } else { a * ratio };
                    (t, scaled.max(1.0))
                })
                .collect::<Vec<_>>();
            let mut prev = f64::INFINITY;
            let anchors = anchors
                .into_iter()
                .map(|(t, a)| {
                    let a = a.min(prev);
                    prev = a;
                    (t, a)
                })
                .collect();
            entry.anchors = AcminCurve::new(anchors).expect("rescaled curve stays valid");
        }
        out.name = format!("{}-base{}", self.name, base_threshold);
        out
    }

    /// Copy with all rows sharing the base threshold exactly.
    pub fn zero_variation(&self) -> DeviceProfile {
        let mut out = self.clone();
        out.row_variation.min_factor = 1.0;
        out.row_variation.max_factor = 1.0;
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("profile serializes")
    }

    pub fn from_json(text: &str) -> Result<DeviceProfile, ProfileError> {
        let value: serde_json::Value = serde_json::from_str(text).map_err(|e| ProfileError::Parse(e.to_string()))?;
        match value.get("schema").and_then(|s| s.as_u64()) {
            Some(v) if v == PROFILE_SCHEMA as u64 => {}
            Some(v) => return Err(ProfileError::Schema(v as u32)),
            None => return Err(ProfileError::Parse("missing \"schema\" field".into())),
        }
        let profile: DeviceProfile = serde_json::from_value(value).map_err(|e| ProfileError::Parse(e.to_string()))?;
        profile.validate()?;
        Ok(profile)
    }

    /// Resolves a builtin name or a path to a JSON profile file.
    pub fn load(name_or_path: &str) -> Result<DeviceProfile, ProfileError> {
        if let Some(p) = builtin(name_or_path) {
            return Ok(p);
        }
        let path = std::path::Path::new(name_or_path);
        if path.extension().is_some_and(|e| e == "json") || path.exists() {
            let text =
                std::fs::read_to_string(path).map_err(|e| ProfileError::Parse(format!("{name_or_path}: {e}")))?;
            return DeviceProfile::from_json(&text);
        }
        Err(ProfileError::UnknownBuiltin(name_or_path.to_string()))
    }

    pub fn materialize(
        &self,
        row_count: u32,
        cells_per_row: usize,
        seed: u64,
    ) -> Result<Materialization, ProfileError> {
        Materialization::new(self, row_count, cells_per_row, seed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mean80() -> DeviceProfile {
        builtin("paper-mean-80C").unwrap()
    }

    #[test]
    fn weight_is_one_at_tras_everywhere() {
        for name in builtin_names() {
            let p = builtin(name).unwrap();
            for entry in &p.curves {
                let w = p.weight(p.t_ras_min(), entry.sidedness, entry.temp_c).unwrap();
                assert_eq!(w, 1.0, "{name} {} {}", entry.sidedness, entry.temp_c);
            }
        }
    }

    #[test]
    fn acmin_at_tras_is_base_threshold() {
        for name in builtin_names() {
            let p = builtin(name).unwrap();
            let a = p.acmin_at(36, Sidedness::Single, p.reference_temp_c).unwrap();
            assert_eq!(a, p.base_threshold as f64);
        }
    }

    #[test]
    fn missing_curve_and_short_t_on_are_errors() {
        let p = mean80();
        assert!(matches!(p.acmin_at(36, Sidedness::Single, 50), Err(ProfileError::MissingCurve { temp_c: 50, .. })));
        assert!(matches!(p.acmin_at(10, Sidedness::Single, 80), Err(ProfileError::TOnBelowMinimum { .. })));
    }

    #[test]
    fn scale_to_same_temperature_is_identity() {
        let p = builtin("paper-mfrH-50C").unwrap();
        assert_eq!(p.scale_temperature(50, 50).unwrap(), p);
        assert!(matches!(p.scale_temperature(50, 95), Err(ProfileError::UnsupportedTemperature { .. })));
        assert!(matches!(p.scale_temperature(20, 80), Err(ProfileError::UnsupportedTemperature { .. })));
    }

    #[test]
    fn scaled_profile_name_and_reference() {
        let p = builtin("paper-mfrS-50C").unwrap().scale_temperature(50, 80).unwrap();
        assert_eq!(p.name, "paper-mfrS-80C");
        assert_eq!(p.reference_temp_c, 80);
        assert!(p.has_curve(Sidedness::Single, 80));
        assert!(p.has_curve(Sidedness::Single, 50));
    }

    #[test]
    fn worst_charge_dominates_each_context() {
        let p = builtin("crossover").unwrap();
        for t in [36, 1_000, 7_800, 20_000, 70_200, 1_000_000] {
            let worst = p.worst_charge(t, 50).unwrap();
            for s in [Sidedness::Single, Sidedness::Double] {
                assert!(worst >= p.charge(t, s, 50).unwrap());
            }
        }
    }

    #[test]
    fn rebased_profile_keeps_ratios() {
        let p = mean80().with_base_threshold(2000);
        p.validate().unwrap();
        let r = p.acmin_at(7_800, Sidedness::Single, 80).unwrap() / 2000.0;
        assert!((r - 1.0 / 17.6).abs() < 1e-12);
        let tiny = mean80().with_base_threshold(64);
        tiny.validate().unwrap();
        assert_eq!(tiny.acmin_at(70_200, Sidedness::Single, 80).unwrap(), 1.0);
    }

    #[test]
    fn validate_rejects_out_of_range_fractions() {
        let mut p = mean80();
        p.overlap_rh = 1.5;
        assert!(p.validate().is_err());
        let mut p = mean80();
        p.row_variation.min_factor = 3.0;
        assert!(matches!(p.validate(), Err(ProfileError::DegenerateVariation { .. })));
    }

    #[test]
    fn json_rejects_wrong_schema() {
        let text = mean80().to_json().replace("\"schema\": 1", "\"schema\": 7");
        assert_eq!(DeviceProfile::from_json(&text).unwrap_err(), ProfileError::Schema(7));
    }
}
