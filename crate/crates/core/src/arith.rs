//! Models of the detector ASIC's arithmetic units: the Newton-Raphson
//! reciprocal, the LUT-based tanh, fixed-point quantization, and the
//! sustained-throughput model.
//!
//! The tables are built once and are immutable, so the functions here are
//! pure and freely shareable across threads.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::sync::OnceLock;

/// Number of entries in the reciprocal seed table (6 index bits over
/// the normalized mantissa range `[0.5, 1)`).
const NR_TABLE_SIZE: usize = 64;

/// Number of entries in the tanh table (7 input bits over `[0, 4)`).
const TANH_TABLE_SIZE: usize = 128;

/// Upper edge of the tanh table's input range; inputs at or beyond it
/// saturate to one.
const TANH_RANGE: f64 = 4.0;

fn nr_table() -> &'static [f64; NR_TABLE_SIZE] {
    static TABLE: OnceLock<[f64; NR_TABLE_SIZE]> = OnceLock::new();
    TABLE.get_or_init(|| {
        // Entry i is the exact reciprocal of the grid point 0.5 + i/128,
        // the midpoint of the i-th rounding subinterval of [0.5, 1).
        // Storing the exact value at 0.5 makes powers of two exact.
        let mut t = [0.0; NR_TABLE_SIZE];
        for (i, v) in t.iter_mut().enumerate() {
            *v = 1.0 / (0.5 + i as f64 / 128.0);
        }
        t
    })
}

fn tanh_table() -> &'static [f64; TANH_TABLE_SIZE] {
    static TABLE: OnceLock<[f64; TANH_TABLE_SIZE]> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut t = [0.0; TANH_TABLE_SIZE];
        let step = TANH_RANGE / TANH_TABLE_SIZE as f64;
        for (i, v) in t.iter_mut().enumerate() {
            *v = (i as f64 * step).tanh();
        }
        t
    })
}

/// Approximates `1/x` the way the SINR unit does: normalize to
/// `x_bar = 2^a * x` in `[0.5, 1)`, seed from a 64-entry table, run a
/// single Newton-Raphson step `y1 = y0 (2 - x_bar y0)`, and denormalize.
///
/// Relative error is below 1e-3 over `[2^-8, 2^8]` (and in fact over the
/// full normal range of f64).
pub fn nr_reciprocal(x: f64) -> Result<f64> {
    if !(x > 0.0) || !x.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "nr_reciprocal requires x > 0 and finite, got {x}"
        )));
    }
    // Exact binary normalization: x = m * 2^e with m in [0.5, 1).
    let e = x.log2().floor() as i32 + 1;
    let mut m = x * 2f64.powi(-e);
    // Guard against boundary rounding in log2 for values near powers of two.
    if m < 0.5 {
        m *= 2.0;
        return denormalize(m, e - 1);
    } else if m >= 1.0 {
        m *= 0.5;
        return denormalize(m, e + 1);
    }
    denormalize(m, e)
}

fn denormalize(m: f64, e: i32) -> Result<f64> {
    let idx = (((m - 0.5) * 128.0).round() as usize).min(NR_TABLE_SIZE - 1);
    let y0 = nr_table()[idx];
    let y1 = y0 * (2.0 - m * y0);
    Ok(y1 * 2f64.powi(-e))
}

/// LUT-based `tanh` with 7 input bits over `[0, 4)`, odd-symmetric
/// extension, and saturation to `±1` for `|x| >= 4`. Absolute error is
/// bounded by half the table step (`<= 1/64`).
pub fn tanh_lut(x: f64) -> f64 {
    let sign = if x < 0.0 { -1.0 } else { 1.0 };
    let mag = x.abs();
    if mag >= TANH_RANGE {
        return sign;
    }
    let idx = (mag * TANH_TABLE_SIZE as f64 / TANH_RANGE).round() as usize;
    if idx >= TANH_TABLE_SIZE {
        return sign;
    }
    sign * tanh_table()[idx]
}

/// Rounding mode for [`quantize`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum QuantMode {
    /// Round to the nearest grid point (ties away from zero).
    Round,
    /// Two's-complement truncation (floor).
    Truncate,
}

/// Quantizes `v` to a two's-complement fixed-point grid with
/// `total_bits` total and `frac_bits` fractional bits, saturating at the
/// representable range when `saturating` is set (wrapping is not
/// modeled; non-saturating mode clamps as well but flags nothing).
pub fn quantize(v: f64, total_bits: u32, frac_bits: u32, mode: QuantMode, saturating: bool) -> f64 {
    assert!(
        total_bits >= frac_bits + 1,
        "need at least one integer (sign) bit"
    );
    let step = 2f64.powi(-(frac_bits as i32));
    let scaled = v / step;
    let mut q = match mode {
        QuantMode::Round => {
            let r = scaled.round();
            // f64::round ties away from zero, matching the doc comment.
            r
        }
        QuantMode::Truncate => scaled.floor(),
    };
    let max_code = 2f64.powi((total_bits - 1) as i32) - 1.0;
    let min_code = -2f64.powi((total_bits - 1) as i32);
    if saturating || q > max_code || q < min_code {
        q = q.clamp(min_code, max_code);
    }
    q * step
}

/// Wordlength specification used when the detector emulates fixed-point
/// state storage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixedPoint {
    pub total_bits: u32,
    pub frac_bits: u32,
}

impl FixedPoint {
    pub fn quantize(&self, v: f64) -> f64 {
        quantize(v, self.total_bits, self.frac_bits, QuantMode::Round, true)
    }
}

/// Sustained detector throughput in bits per second:
/// `Theta = U * Q * f_clk / (t_max * T_s + T_llr)`.
pub fn throughput_model(
    n_users: usize,
    q_bits: usize,
    t_max: usize,
    t_s: usize,
    t_llr: usize,
    f_clk_hz: f64,
) -> Result<f64> {
    let denom = t_max * t_s + t_llr;
    if denom == 0 {
        return Err(Error::InvalidParameter(
            "cycle denominator t_max * T_s + T_llr must be positive".into(),
        ));
    }
    if n_users == 0 || q_bits == 0 || !(f_clk_hz > 0.0) {
        return Err(Error::InvalidParameter(
            "throughput model requires positive U, Q, and f_clk".into(),
        ));
    }
    Ok((n_users * q_bits) as f64 * f_clk_hz / denom as f64)
}
