//! Elementwise exponential over slices, written so the compiler can vectorise it.
//!
//! Range reduction `x = k·ln2 + r` with `|r| ≤ ln2/2`, a degree-12 Taylor
//! polynomial for `e^r` and exponent-bit scaling by `2^k`. Accurate to a few
//! ulp. The AVX2 path runs the same IEEE operations in the same order as the
//! portable one (no fused multiply-add), so both give identical bits.

use crate::Real;

#[cfg(not(feature = "f32"))]
#[inline(always)]
fn exp1(x: f64) -> f64 {
    const LOG2E: f64 = std::f64::consts::LOG2_E;
    const LN2_HI: f64 = 6.931_471_803_691_238e-1;
    const LN2_LO: f64 = 1.908_214_929_270_587_7e-10;
    // adding 1.5·2^52 rounds to an integer and leaves it in the low mantissa bits
    const SHIFTER: f64 = 6_755_399_441_055_744.0;
    const SHIFTER_BITS: u64 = 0x4338_0000_0000_0000;

    let xc = x.clamp(-708.0, 709.0);
    let t = xc * LOG2E + SHIFTER;
    let k = t - SHIFTER;
    let r = (xc - k * LN2_HI) - k * LN2_LO;

    let mut p = 1.0 / 479_001_600.0;
    p = p * r + 1.0 / 39_916_800.0;
    p = p * r + 1.0 / 3_628_800.0;
    p = p * r + 1.0 / 362_880.0;
    p = p * r + 1.0 / 40_320.0;
    p = p * r + 1.0 / 5_040.0;
    p = p * r + 1.0 / 720.0;
    p = p * r + 1.0 / 120.0;
    p = p * r + 1.0 / 24.0;
    p = p * r + 1.0 / 6.0;
    p = p * r + 0.5;
    p = p * r + 1.0;
    p = p * r + 1.0;

    let scale = f64::from_bits(t.to_bits().wrapping_sub(SHIFTER_BITS).wrapping_add(1023) << 52);
    let y = p * scale;
    if x < -708.0 {
        0.0
    } else if x > 709.0 {
        f64::INFINITY
    } else {
        y
    }
}

#[cfg(not(feature = "f32"))]
#[inline(always)]
fn exp_portable(xs: &mut [f64]) {
    for x in xs {
        *x = exp1(*x);
    }
}

#[cfg(all(not(feature = "f32"), target_arch = "x86_64"))]
#[target_feature(enable = "avx2")]
unsafe fn exp_avx2(xs: &mut [f64]) {
    exp_portable(xs)
}

/// Replaces every element with its exponential. NaN stays NaN only through
/// the clamp, so callers must not pass NaN.
#[cfg(not(feature = "f32"))]
pub(crate) fn exp_in_place(xs: &mut [Real]) {
    #[cfg(target_arch = "x86_64")]
    if std::is_x86_feature_detected!("avx2") {
        // SAFETY: the CPU supports AVX2, checked just above.
        unsafe { exp_avx2(xs) };
        return;
    }
    exp_portable(xs)
}

#[cfg(feature = "f32")]
pub(crate) fn exp_in_place(xs: &mut [Real]) {
    for x in xs {
        *x = x.exp();
    }
}
