//! bfloat16 conversion: round through `f32`, then round-to-nearest-even on the
//! low 16 mantissa bits.

/// Canonical quiet NaN; every NaN input encodes to this pattern.
pub const BF16_NAN: u16 = 0x7FC0;

/// Rounds the bits of an `f32` to bfloat16.
pub fn bf16_from_f32(x: f32) -> u16 {
    if x.is_nan() {
        return BF16_NAN;
    }
    let bits = x.to_bits();
    let lsb = (bits >> 16) & 1;
    (bits.wrapping_add(0x7FFF + lsb) >> 16) as u16
}

pub fn bf16_encode(x: f64) -> u16 {
    bf16_from_f32(x as f32)
}

pub fn bf16_to_f32(bits: u16) -> f32 {
    f32::from_bits(u32::from(bits) << 16)
}

pub fn bf16_decode(bits: u16) -> f64 {
    f64::from(bf16_to_f32(bits))
}

pub fn encode_slice(values: &[f64]) -> Vec<u16> {
    values.iter().map(|&v| bf16_encode(v)).collect()
}

pub fn decode_slice(bits: &[u16]) -> Vec<f64> {
    bits.iter().map(|&b| bf16_decode(b)).collect()
}

/// `decode(encode(x))`.
pub fn bf16_round(x: f64) -> f64 {
    bf16_decode(bf16_encode(x))
}
