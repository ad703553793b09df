//! Uniform per-tensor quantizer with unsigned codes in `[0, 2ᵇ − 1]`.
//!
//! Rounding is half-away-from-zero. Gradients use the straight-through
//! surrogate for `round`; the clip function zeroes the input gradient
//! outside the open interval `(n, p)`.

use alloc::vec::Vec;

use crate::error::{ensure_len, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum QuantMode {
    /// Scale and zero point fixed at initialization.
    Qat,
    /// Learnable scale.
    Lsq,
    /// Learnable scale and zero point.
    Lszq,
}

impl QuantMode {
    pub const ALL: [QuantMode; 3] = [QuantMode::Qat, QuantMode::Lsq, QuantMode::Lszq];

    pub fn name(self) -> &'static str {
        match self {
            QuantMode::Qat => "qat",
            QuantMode::Lsq => "lsq",
            QuantMode::Lszq => "lszq",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "qat" => Some(QuantMode::Qat),
            "lsq" => Some(QuantMode::Lsq),
            "lszq" => Some(QuantMode::Lszq),
            _ => None,
        }
    }

    pub fn learns_scale(self) -> bool {
        matches!(self, QuantMode::Lsq | QuantMode::Lszq)
    }

    pub fn learns_zero_point(self) -> bool {
        self == QuantMode::Lszq
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QuantConfig {
    bits: u8,
    pub mode: QuantMode,
}

impl QuantConfig {
    pub const MAX_BITS: u8 = 16;

    pub fn new(bits: u8, mode: QuantMode) -> Result<Self> {
        if !(1..=Self::MAX_BITS).contains(&bits) {
            return Err(Error::config(alloc::format!(
                "quantizer bit width must lie in 1..=16, got {bits}"
            )));
        }
        Ok(Self { bits, mode })
    }

    pub fn bits(&self) -> u8 {
        self.bits
    }

    /// Lower clip bound `n`.
    pub fn low(&self) -> u32 {
        0
    }

    /// Upper clip bound `p = 2ᵇ − 1`.
    pub fn high(&self) -> u32 {
        (1u32 << self.bits) - 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuantParams {
    pub scale: f64,
    pub zero_point: f64,
}

impl Default for QuantParams {
    fn default() -> Self {
        Self {
            scale: 1.0,
            zero_point: 0.0,
        }
    }
}

impl QuantParams {
    /// `z = min`, `s = (max − min) / p`. A degenerate range falls back to `s = 1`.
    pub fn from_range(min: f64, max: f64, cfg: &QuantConfig) -> Self {
        let scale = (max - min) / cfg.high() as f64;
        Self {
            scale: if scale > 0.0 && scale.is_finite() { scale } else { 1.0 },
            zero_point: min,
        }
    }

    /// [`from_range`](Self::from_range) over the extremes of `values`.
    pub fn from_values(values: &[f64], cfg: &QuantConfig) -> Self {
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if values.is_empty() {
            Self::default()
        } else {
            Self::from_range(min, max, cfg)
        }
    }

    fn check(&self) -> Result<()> {
        if self.scale > 0.0 && self.scale.is_finite() {
            Ok(())
        } else {
            Err(Error::InvalidScale(self.scale))
        }
    }

    /// Normalized value `(r − z) / s`.
    fn normalize(&self, r: f64) -> f64 {
        (r - self.zero_point) / self.scale
    }
}

fn round_half_away(x: f64) -> f64 {
    libm::round(x)
}

/// `q = round(clip((r − z)/s, n, p))`
pub fn quantize(r: &[f64], params: &QuantParams, cfg: &QuantConfig) -> Result<Vec<u32>> {
    params.check()?;
    let (lo, hi) = (cfg.low() as f64, cfg.high() as f64);
    r.iter()
        .map(|&ri| {
            let u = params.normalize(ri);
            if u.is_nan() {
                return Err(Error::NonFinite("quantizer input"));
            }
            Ok(round_half_away(u.clamp(lo, hi)) as u32)
        })
        .collect()
}

/// `r̂ = q·s + z`
pub fn dequantize(q: &[u32], params: &QuantParams) -> Vec<f64> {
    q.iter()
        .map(|&qi| qi as f64 * params.scale + params.zero_point)
        .collect()
}

/// `dequantize(quantize(r))`
pub fn fake_quantize(r: &[f64], params: &QuantParams, cfg: &QuantConfig) -> Result<Vec<f64>> {
    Ok(dequantize(&quantize(r, params, cfg)?, params))
}

/// Concatenates big-endian `b`-bit fields, zero-padding the final byte.
pub fn pack_bits(q: &[u32], cfg: &QuantConfig) -> Result<Vec<u8>> {
    let bits = cfg.bits() as usize;
    let max = cfg.high();
    let mut out = Vec::with_capacity((q.len() * bits).div_ceil(8));
    let mut acc: u64 = 0;
    let mut filled = 0usize;
    for &value in q {
        if value > max {
            return Err(Error::ValueOutOfRange { value, max });
        }
        acc = (acc << bits) | value as u64;
        filled += bits;
        while filled >= 8 {
            filled -= 8;
            out.push((acc >> filled) as u8);
        }
        acc &= (1u64 << filled) - 1;
    }
    if filled > 0 {
        out.push((acc << (8 - filled)) as u8);
    }
    Ok(out)
}

/// Inverse of [`pack_bits`] for `len` codes.
pub fn unpack_bits(bytes: &[u8], cfg: &QuantConfig, len: usize) -> Result<Vec<u32>> {
    let bits = cfg.bits() as usize;
    ensure_len("packed bitstream bytes", (len * bits).div_ceil(8), bytes.len())?;
    let mask = cfg.high() as u64;
    let mut out = Vec::with_capacity(len);
    let mut acc: u64 = 0;
    let mut filled = 0usize;
    let mut next = bytes.iter();
    while out.len() < len {
        while filled < bits {
            // length checked above
            acc = (acc << 8) | *next.next().expect("bitstream length") as u64;
            filled += 8;
        }
        filled -= bits;
        out.push(((acc >> filled) & mask) as u32);
        acc &= (1u64 << filled) - 1;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantGrads {
    pub grad_input: Vec<f64>,
    pub grad_scale: f64,
    pub grad_zero_point: f64,
}

/// Backward pass of `r ↦ dequantize(quantize(r))`.
///
/// For `n < (r−z)/s < p`: `∂r̂/∂r = 1`, `∂r̂/∂s = round((r−z)/s) − (r−z)/s`,
/// `∂r̂/∂z = 0`. Otherwise `∂r̂/∂r = 0`, `∂r̂/∂s` is the bound that clipped
/// (`n` or `p`) and `∂r̂/∂z = 1`. Frozen parameters (all of them in QAT, the
/// zero point in LSQ) get zero gradient. Scale and zero-point gradients are
/// summed over the vector.
pub fn quant_backward(
    r: &[f64],
    params: &QuantParams,
    cfg: &QuantConfig,
    upstream: &[f64],
) -> Result<QuantGrads> {
    params.check()?;
    ensure_len("quantizer upstream gradient", r.len(), upstream.len())?;
    let (lo, hi) = (cfg.low() as f64, cfg.high() as f64);
    let mut grad_input = Vec::with_capacity(r.len());
    let (mut gs, mut gz) = (0.0, 0.0);
    for (&ri, &g) in r.iter().zip(upstream) {
        let u = params.normalize(ri);
        if lo < u && u < hi {
            grad_input.push(g);
            gs += g * (round_half_away(u) - u);
        } else {
            grad_input.push(0.0);
            gs += g * if u <= lo { lo } else { hi };
            gz += g;
        }
    }
    Ok(QuantGrads {
        grad_input,
        grad_scale: if cfg.mode.learns_scale() { gs } else { 0.0 },
        grad_zero_point: if cfg.mode.learns_zero_point() { gz } else { 0.0 },
    })
}
