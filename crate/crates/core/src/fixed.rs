//! Fixed-point disturbance units.
//!
//! Accumulators count disturbance in units of 2^-24 of one tRAS activation,
//! so repeated identical charges sum exactly and replays are bit-identical.

pub const FRAC_BITS: u32 = 24;
pub const ONE: u64 = 1 << FRAC_BITS;

/// Rounds a non-negative real charge to fixed point.
pub fn charge(x: f64) -> u64 {
    debug_assert!(x >= 0.0 && x.is_finite());
    (x * ONE as f64).round() as u64
}

/// Rounds a threshold up, so a fixed-point accumulator reaching it has
/// reached the real threshold too.
pub fn threshold(x: f64) -> u64 {
    debug_assert!(x >= 0.0 && x.is_finite());
    (x * ONE as f64).ceil() as u64
}

pub fn to_real(v: u64) -> f64 {
    v as f64 / ONE as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_charge_is_exact() {
        assert_eq!(charge(1.0), ONE);
        assert_eq!(threshold(32_000.0), 32_000 * ONE);
        assert_eq!(to_real(5 * ONE), 5.0);
        assert!(threshold(0.1) as f64 / ONE as f64 >= 0.1);
    }
}
