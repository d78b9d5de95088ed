//! IBM System/360 hexadecimal floating point, the numeric encoding of
//! transport files: 1 sign bit, 7-bit base-16 exponent biased by 64, and a
//! 56-bit fraction interpreted as hex digits left of the radix point scale.

/// Decoded numeric cell: a value, or one of the transport missing sentinels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum IbmValue {
    Value(f64),
    /// Missing sentinel: b'.' for standard missing, b'_' or b'A'..=b'Z' for
    /// the special missing codes.
    Missing(u8),
}

impl IbmValue {
    pub fn as_option(self) -> Option<f64> {
        match self {
            IbmValue::Value(v) => Some(v),
            IbmValue::Missing(_) => None,
        }
    }
}

fn is_missing_sentinel(b: u8) -> bool {
    b == b'.' || b == b'_' || b.is_ascii_uppercase()
}

/// Decodes 2..=8 bytes of IBM hex float. Short values are zero-extended.
/// A sentinel first byte with an all-zero remainder is a missing marker;
/// every other pattern decodes arithmetically.
pub fn decode_ibm_double(bytes: &[u8]) -> IbmValue {
    debug_assert!((1..=8).contains(&bytes.len()));
    let mut buf = [0u8; 8];
    buf[..bytes.len()].copy_from_slice(bytes);

    if is_missing_sentinel(buf[0]) && buf[1..].iter().all(|&b| b == 0) {
        return IbmValue::Missing(buf[0]);
    }

    let negative = buf[0] & 0x80 != 0;
    let exponent = (buf[0] & 0x7F) as i32 - 64;
    let mut mantissa: u64 = 0;
    for &b in &buf[1..8] {
        mantissa = (mantissa << 8) | b as u64;
    }
    if mantissa == 0 {
        return IbmValue::Value(if negative { -0.0 } else { 0.0 });
    }
    // value = mantissa/16^14 * 16^exponent = mantissa * 2^(4*exponent - 56).
    // The scale is a power of two, so converting the mantissa first keeps the
    // result correctly rounded; the IBM exponent range fits well inside f64.
    let magnitude = (mantissa as f64) * 2f64.powi(4 * exponent - 56);
    IbmValue::Value(if negative { -magnitude } else { magnitude })
}

/// Outcome of encoding one f64 into IBM hex layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EncodeOutcome {
    Exact,
    /// Magnitude below the smallest IBM value; encoded as zero.
    UnderflowedToZero,
    /// Magnitude (or a non-finite input) above the largest IBM value;
    /// encoded as the largest representable magnitude.
    ClampedToMax,
}

/// Encodes an f64 as 8 bytes of IBM hex float. Every finite f64 whose
/// magnitude lies in the IBM range encodes exactly (53 significand bits fit
/// the 56-bit fraction after hex normalization).
pub fn encode_ibm_double(value: f64) -> ([u8; 8], EncodeOutcome) {
    let sign_bit: u8 = if value.is_sign_negative() { 0x80 } else { 0 };
    if value == 0.0 {
        let mut out = [0u8; 8];
        out[0] = sign_bit;
        return (out, EncodeOutcome::Exact);
    }
    if value.is_nan() || value.is_infinite() {
        return (max_magnitude(sign_bit), EncodeOutcome::ClampedToMax);
    }

    let bits = value.abs().to_bits();
    let raw_exp = ((bits >> 52) & 0x7FF) as i32;
    let frac = bits & ((1u64 << 52) - 1);
    // m * 2^t with m the integer significand
    let (m, t) = if raw_exp == 0 {
        (frac, -1074)
    } else {
        (frac | (1u64 << 52), raw_exp - 1023 - 52)
    };
    let tz = m.trailing_zeros() as i32;
    let m = m >> tz;
    let t = t + tz;
    let s = 64 - m.leading_zeros() as i32;

    // Hex normalization: M = m << k with M in [16^13, 16^14) and
    // k = t + 56 - 4E. The window [53-s, 56-s] holds exactly one k per
    // residue class mod 4.
    let k_lo = 53 - s;
    let k = k_lo + ((t + 56) - k_lo).rem_euclid(4);
    let e = (t + 56 - k) / 4;
    if e > 63 {
        return (max_magnitude(sign_bit), EncodeOutcome::ClampedToMax);
    }
    let (e, k) = if e >= -64 {
        (e, k)
    } else {
        // Denormalized form at the minimum exponent, exact while the shift
        // stays non-negative.
        let k_den = t + 56 + 4 * 64;
        if k_den < 0 {
            let mut out = [0u8; 8];
            out[0] = sign_bit;
            return (out, EncodeOutcome::UnderflowedToZero);
        }
        (-64, k_den)
    };
    let mantissa = m << k;
    debug_assert!(mantissa < (1u64 << 56));

    let mut out = [0u8; 8];
    out[0] = sign_bit | ((e + 64) as u8);
    for i in 0..7 {
        out[1 + i] = (mantissa >> (8 * (6 - i))) as u8;
    }
    (out, EncodeOutcome::Exact)
}

/// Sentinel bytes for a missing numeric cell ('.' standard missing).
pub fn missing_bytes(sentinel: u8) -> [u8; 8] {
    let mut out = [0u8; 8];
    out[0] = sentinel;
    out
}

fn max_magnitude(sign_bit: u8) -> [u8; 8] {
    let mut out = [0xFFu8; 8];
    out[0] = sign_bit | 0x7F;
    out
}
