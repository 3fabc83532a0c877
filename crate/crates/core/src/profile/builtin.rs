use super::{
    AcminCurve, CellModel, CurveEntry, DeviceProfile, RetentionTail, RowVariation, Sidedness, TempScale, PROFILE_SCHEMA,
};
use crate::timing::{MS, S};

/// Absolute ACmin at tRAS for all builtins. Only ratios are meaningful.
const BASE: f64 = 32_000.0;

const NAMES: [&str; 6] =
    ["paper-mean-50C", "paper-mean-80C", "paper-mfrS-50C", "paper-mfrH-50C", "paper-mfrM-50C", "crossover"];

pub fn builtin_names() -> &'static [&'static str] {
    &NAMES
}

pub fn builtin(name: &str) -> Option<DeviceProfile> {
    let profile = match name {
        // Mean reductions at 80 C: 17.6x at tREFI, 159.4x at 9 x tREFI, one activation at 30 ms.
        "paper-mean-80C" => symmetric(name, 80, &[17.6, 159.4], vec![]),
        // Mean reductions at 50 C: 21x and 190x.
        "paper-mean-50C" => symmetric(name, 50, &[21.0, 190.0], vec![]),
        "paper-mfrS-50C" => symmetric(name, 50, &[21.0, 190.0], vec![to_80c(0.55)]),
        "paper-mfrH-50C" => symmetric(name, 50, &[21.0, 190.0], vec![to_80c(0.32)]),
        "paper-mfrM-50C" => symmetric(name, 50, &[21.0, 190.0], vec![to_80c(0.59)]),
        "crossover" => crossover(),
        _ => return None,
    };
    debug_assert!(profile.validate().is_ok(), "builtin {name} is invalid");
    Some(profile)
}

fn to_80c(factor: f64) -> TempScale {
    TempScale { from_c: 50, to_c: 80, factor, at_t_on_ns: 7_800 }
}

fn reduction_curve(base: f64, reductions: &[f64], tail: f64) -> AcminCurve {
    let mut anchors = vec![(36, base)];
    for (&t, &r) in [7_800u64, 70_200].iter().zip(reductions) {
        anchors.push((t, base / r));
    }
    anchors.push((30 * MS, tail));
    AcminCurve::new(anchors).expect("builtin curve")
}

/// Single- and double-sided curves are identical.
fn symmetric(name: &str, temp_c: i32, reductions: &[f64], temp_scale: Vec<TempScale>) -> DeviceProfile {
    let curve = reduction_curve(BASE, reductions, 1.0);
    let curves = [Sidedness::Single, Sidedness::Double]
        .into_iter()
        .map(|sidedness| CurveEntry { sidedness, temp_c, anchors: curve.clone() })
        .collect();
    base_profile(name, temp_c, curves, temp_scale)
}

/// Single-sided needs fewer activations than double-sided at short on-times
/// and more at long ones; the curves share anchor positions so the log-ratio
/// is linear within each segment and changes sign once, between 7.8 us and
/// 70.2 us.
fn crossover() -> DeviceProfile {
    let single = AcminCurve::new(vec![(36, BASE), (7_800, BASE / 21.0), (70_200, BASE / 190.0), (30 * MS, 2.0)])
        .expect("builtin curve");
    let double = AcminCurve::new(vec![(36, 40_000.0), (7_800, 1_800.0), (70_200, 120.0), (30 * MS, 1.0)])
        .expect("builtin curve");
    let curves = vec![
        CurveEntry { sidedness: Sidedness::Single, temp_c: 50, anchors: single },
        CurveEntry { sidedness: Sidedness::Double, temp_c: 50, anchors: double },
    ];
    base_profile("crossover", 50, curves, vec![])
}

fn base_profile(name: &str, temp_c: i32, curves: Vec<CurveEntry>, temp_scale: Vec<TempScale>) -> DeviceProfile {
    DeviceProfile {
        schema: PROFILE_SCHEMA,
        name: name.to_string(),
        base_threshold: BASE as u64,
        reference_temp_c: temp_c,
        curves,
        temp_scale,
        row_variation: RowVariation {
            distribution: "log_uniform".into(),
            min_factor: 0.5,
            max_factor: 2.0,
            seed: 0x5EED,
        },
        cells: CellModel { hammer_fraction: 0.02, press_fraction: 0.02, threshold_mult_max: 3.0 },
        overlap_rh: 0.00013,
        overlap_ret: 0.0034,
        press_direction_bias: 1.0,
        hammer_direction_bias: 1.0,
        retention_tail: RetentionTail { fraction: 0.001, min_retention_ns: S / 2, max_retention_ns: 16 * S },
    }
}
