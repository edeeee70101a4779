//! LINEAR16 and LINEAR11 fixed-point payload encodings.
//!
//! LINEAR16 carries an unsigned 16-bit mantissa whose exponent comes from the
//! device's `VOUT_MODE` context. LINEAR11 packs a 5-bit two's-complement
//! exponent (bits 15..11) and an 11-bit two's-complement mantissa (bits 10..0)
//! into a single word.

use super::CodecError;

/// Smallest exponent a 5-bit two's-complement field can hold.
pub const EXPONENT_MIN: i8 = -16;
/// Largest exponent a 5-bit two's-complement field can hold.
pub const EXPONENT_MAX: i8 = 15;

const MANTISSA11_MIN: i32 = -1024;
const MANTISSA11_MAX: i32 = 1023;

fn check_exponent(exponent: i8) -> Result<(), CodecError> {
    if (EXPONENT_MIN..=EXPONENT_MAX).contains(&exponent) {
        Ok(())
    } else {
        Err(CodecError::ExponentOutOfRange(exponent))
    }
}

/// A LINEAR16 word together with the exponent it is interpreted under.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Linear16Value {
    raw: u16,
    exponent: i8,
}

impl Linear16Value {
    pub fn new(raw: u16, exponent: i8) -> Result<Self, CodecError> {
        check_exponent(exponent)?;
        Ok(Self { raw, exponent })
    }

    pub fn raw(&self) -> u16 {
        self.raw
    }

    pub fn exponent(&self) -> i8 {
        self.exponent
    }

    /// Size of one mantissa step in volts.
    pub fn ulp(&self) -> f64 {
        2f64.powi(self.exponent as i32)
    }

    pub fn volts(&self) -> f64 {
        decode_linear16(self.raw, self.exponent)
    }
}

/// Round-to-nearest LINEAR16 encoding of a non-negative voltage.
pub fn encode_linear16(volts: f64, exponent: i8) -> Result<Linear16Value, CodecError> {
    check_exponent(exponent)?;
    if !volts.is_finite() {
        return Err(CodecError::NotFinite);
    }
    if volts < 0.0 {
        return Err(CodecError::NegativeVoltage(volts));
    }
    let mantissa = (volts / 2f64.powi(exponent as i32)).round();
    if mantissa > u16::MAX as f64 {
        return Err(CodecError::Linear16Overflow { volts, exponent });
    }
    Ok(Linear16Value {
        raw: mantissa as u16,
        exponent,
    })
}

/// `raw × 2^exponent`, exact in binary floating point.
pub fn decode_linear16(raw: u16, exponent: i8) -> f64 {
    raw as f64 * 2f64.powi(exponent as i32)
}

/// Split a LINEAR11 word into `(mantissa, exponent)`.
pub fn linear11_fields(word: u16) -> (i16, i8) {
    let exponent = ((word as i16) >> 11) as i8;
    let mantissa = (((word & 0x07ff) << 5) as i16) >> 5;
    (mantissa, exponent)
}

/// Pack a mantissa/exponent pair. Both must already be in range.
pub fn pack_linear11(mantissa: i16, exponent: i8) -> Result<u16, CodecError> {
    check_exponent(exponent)?;
    if !(MANTISSA11_MIN..=MANTISSA11_MAX).contains(&(mantissa as i32)) {
        return Err(CodecError::Linear11Overflow(mantissa as f64));
    }
    Ok((((exponent as u16) & 0x1f) << 11) | ((mantissa as u16) & 0x07ff))
}

/// Decode a LINEAR11 word. Total over all 65,536 inputs.
pub fn decode_linear11(word: u16) -> f64 {
    let (mantissa, exponent) = linear11_fields(word);
    mantissa as f64 * 2f64.powi(exponent as i32)
}

/// Encode a value as LINEAR11.
///
/// Every exponent whose rounded mantissa fits in 11 bits is a candidate; the
/// one with the least quantization error wins and ties go to the smaller
/// (finer) exponent. Zero always encodes as `0x0000`.
pub fn encode_linear11(value: f64) -> Result<u16, CodecError> {
    if !value.is_finite() {
        return Err(CodecError::NotFinite);
    }
    if value == 0.0 {
        return Ok(0);
    }
    let mut best: Option<(f64, i16, i8)> = None;
    for exponent in EXPONENT_MIN..=EXPONENT_MAX {
        let step = 2f64.powi(exponent as i32);
        let mantissa = (value / step).round();
        if mantissa < MANTISSA11_MIN as f64 || mantissa > MANTISSA11_MAX as f64 {
            continue;
        }
        let error = (mantissa * step - value).abs();
        // Exponents are visited in increasing order, so a strict `<` keeps
        // the smaller exponent on ties.
        if best.is_none_or(|(best_error, _, _)| error < best_error) {
            best = Some((error, mantissa as i16, exponent));
        }
    }
    let (_, mantissa, exponent) = best.ok_or(CodecError::Linear11Overflow(value))?;
    pack_linear11(mantissa, exponent)
}
