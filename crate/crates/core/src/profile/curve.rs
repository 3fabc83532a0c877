use serde::{Deserialize, Serialize};

use crate::error::ProfileError;

/// ACmin as a function of aggressor on-time, given as anchors and
/// interpolated piecewise-linearly in log-log space.
///
/// Anchors are `(t_on_ns, acmin)` with strictly increasing `t_on`. Values
/// are exact at anchors and held constant past the last one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AcminCurve {
    anchors: Vec<(u64, f64)>,
}

impl AcminCurve {
    pub fn new(anchors: Vec<(u64, f64)>) -> Result<Self, ProfileError> {
        let curve = Self { anchors };
        curve.validate()?;
        Ok(curve)
    }

    pub fn validate(&self) -> Result<(), ProfileError> {
        let bad = |msg: String| Err(ProfileError::InvalidCurve(msg));
        let Some(&(first_t, _)) = self.anchors.first() else {
            return bad("curve has no anchors".into());
        };
        if first_t == 0 {
            return bad("first anchor must have positive t_on".into());
        }
        for &(t, a) in &self.anchors {
            if !a.is_finite() || a < 1.0 {
                return bad(format!("acmin {a} at {t} ns is below 1"));
            }
        }
        for pair in self.anchors.windows(2) {
            let ((t0, a0), (t1, a1)) = (pair[0], pair[1]);
            if t1 <= t0 {
                return bad(format!("anchor t_on {t1} ns does not follow {t0} ns"));
            }
            if a1 > a0 {
                return bad(format!("acmin rises from {a0} to {a1} between {t0} and {t1} ns"));
            }
        }
        Ok(())
    }

    pub fn anchors(&self) -> &[(u64, f64)] {
        &self.anchors
    }

    /// Smallest t_on the curve is defined for (tRAS).
    pub fn min_t_on(&self) -> u64 {
        self.anchors[0].0
    }

    pub fn at(&self, t_on: u64) -> Result<f64, ProfileError> {
        let min = self.min_t_on();
        if t_on < min {
            return Err(ProfileError::TOnBelowMinimum { t_on, min });
        }
        Ok(self.eval(t_on as f64))
    }

    /// Interpolates at a real-valued t_on; callers guarantee `t_on >= min_t_on`.
    pub(crate) fn eval(&self, t_on: f64) -> f64 {
        let idx = self.anchors.partition_point(|&(t, _)| (t as f64) <= t_on);
        if idx == 0 {
            return self.anchors[0].1;
        }
        let (t0, a0) = self.anchors[idx - 1];
        if t_on == t0 as f64 || idx == self.anchors.len() {
            return a0;
        }
        let (t1, a1) = self.anchors[idx];
        let frac = (t_on.ln() - (t0 as f64).ln()) / ((t1 as f64).ln() - (t0 as f64).ln());
        (a0.ln() + frac * (a1.ln() - a0.ln())).exp()
    }

    /// Multiplies every anchor after the first by `factor`, clamping into
    /// `[1, first]` so the curve stays valid.
    pub fn scale_tail(&self, factor: f64) -> Self {
        let first = self.anchors[0].1;
        let anchors = self
            .anchors
            .iter()
            .enumerate()
            .map(|(i, &(t, a))| if i == 0 { (t, a) } else { (t, (a * factor).clamp(1.0, first)) })
            .collect();
        Self { anchors }
    }
}
