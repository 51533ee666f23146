//! Uniform quantizer shared by the array converters, the reference model
//! and the trainer, so all three round identically.

/// Code of `v` on a `bits`-bit uniform grid over `[0, range_max]`.
///
/// Values are clamped into range first; halves round away from zero.
#[inline]
pub fn code(v: f64, bits: u32, range_max: f64) -> u32 {
    let levels = f64::from(levels(bits));
    (v.clamp(0.0, range_max) * levels / range_max).round() as u32
}

/// Analog value represented by `code`.
#[inline]
pub fn value(code: u32, bits: u32, range_max: f64) -> f64 {
    f64::from(code) * step(bits, range_max)
}

/// Quantize then reconstruct.
#[inline]
pub fn round_trip(v: f64, bits: u32, range_max: f64) -> f64 {
    value(code(v, bits, range_max), bits, range_max)
}

/// Grid spacing `range_max / (2^bits - 1)`.
#[inline]
pub fn step(bits: u32, range_max: f64) -> f64 {
    range_max / f64::from(levels(bits))
}

#[inline]
fn levels(bits: u32) -> u32 {
    (1u32 << bits) - 1
}
