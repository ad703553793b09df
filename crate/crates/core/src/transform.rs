//! Spatial-frequency ↔ angular-delay conversion.
//!
//! The angular-delay matrix has delay rows and antenna (angle) columns. The
//! delay axis is transformed with the conjugate kernel `e^{+j2πll'/Ñc}` so a
//! path with delay τ lands near row `B·τ`; the antenna axis uses the usual
//! `e^{-j2πss'/Nt}` kernel. Both transforms are unitary (1/√n per axis).
//!
//! A [`CsiVector`] holds the first `Nc` delay rows, real half first then
//! imaginary half, each half row-major (delay index outer, antenna inner).

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use num_complex::Complex64;

use crate::channel::SpatialFreqCsi;
use crate::error::{ensure_len, Error, Result};

/// Angular-delay CSI: `delay_rows × nt`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct AngularDelayCsi {
    pub delay_rows: usize,
    pub nt: usize,
    pub entries: Vec<Complex64>,
}

impl AngularDelayCsi {
    pub fn get(&self, delay: usize, antenna: usize) -> Complex64 {
        self.entries[delay * self.nt + antenna]
    }

    pub fn frobenius_norm_sq(&self) -> f64 {
        self.entries.iter().map(|c| c.norm_sqr()).sum()
    }

    /// Keeps rows `0..nc`.
    pub fn truncate(&self, nc: usize) -> Result<AngularDelayCsi> {
        if nc == 0 || nc > self.delay_rows {
            return Err(Error::DimensionMismatch {
                what: "retained delay rows",
                expected: self.delay_rows,
                found: nc,
            });
        }
        Ok(AngularDelayCsi {
            delay_rows: nc,
            nt: self.nt,
            entries: self.entries[..nc * self.nt].to_vec(),
        })
    }

    pub fn vectorize(&self) -> CsiVector {
        let mut values = Vec::with_capacity(2 * self.entries.len());
        values.extend(self.entries.iter().map(|c| c.re));
        values.extend(self.entries.iter().map(|c| c.im));
        CsiVector {
            nt: self.nt,
            nc: self.delay_rows,
            values,
        }
    }

    pub fn devectorize(x: &CsiVector) -> AngularDelayCsi {
        let half = x.nt * x.nc;
        let (re, im) = x.values.split_at(half);
        AngularDelayCsi {
            delay_rows: x.nc,
            nt: x.nt,
            entries: re
                .iter()
                .zip(im)
                .map(|(&r, &i)| Complex64::new(r, i))
                .collect(),
        }
    }
}

/// Real vector of length `2·nt·nc` in the layout described at module level.
#[derive(Debug, Clone, PartialEq)]
pub struct CsiVector {
    nt: usize,
    nc: usize,
    values: Vec<f64>,
}

impl CsiVector {
    pub fn new(nt: usize, nc: usize, values: Vec<f64>) -> Result<Self> {
        ensure_len("CSI vector", 2 * nt * nc, values.len())?;
        Ok(Self { nt, nc, values })
    }

    pub fn zeros(nt: usize, nc: usize) -> Self {
        Self {
            nt,
            nc,
            values: vec![0.0; 2 * nt * nc],
        }
    }

    pub fn nt(&self) -> usize {
        self.nt
    }

    pub fn nc(&self) -> usize {
        self.nc
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Direction {
    /// `e^{-j2πkn/N}`
    Negative,
    /// `e^{+j2πkn/N}`
    Positive,
}

/// Unitary 1-D DFT in place: radix-2 when `n` is a power of two, direct
/// summation otherwise.
fn dft_in_place(buf: &mut [Complex64], dir: Direction, scratch: &mut Vec<Complex64>) {
    let n = buf.len();
    if n <= 1 {
        return;
    }
    let sign = match dir {
        Direction::Negative => -1.0,
        Direction::Positive => 1.0,
    };
    if n.is_power_of_two() {
        radix2(buf, sign);
    } else {
        scratch.clear();
        scratch.extend_from_slice(buf);
        for (k, out) in buf.iter_mut().enumerate() {
            let mut acc = Complex64::new(0.0, 0.0);
            for (idx, &v) in scratch.iter().enumerate() {
                // reduce k·idx mod n first to keep the angle small
                let phase = sign * 2.0 * PI * ((k * idx) % n) as f64 / n as f64;
                acc += v * Complex64::new(libm::cos(phase), libm::sin(phase));
            }
            *out = acc;
        }
    }
    let scale = 1.0 / libm::sqrt(n as f64);
    buf.iter_mut().for_each(|v| *v *= scale);
}

fn radix2(buf: &mut [Complex64], sign: f64) {
    let n = buf.len();
    let bits = n.trailing_zeros();
    for i in 0..n {
        let j = i.reverse_bits() >> (usize::BITS - bits);
        if j > i {
            buf.swap(i, j);
        }
    }
    let mut len = 2;
    while len <= n {
        let half = len / 2;
        for k in 0..half {
            let phase = sign * 2.0 * PI * k as f64 / len as f64;
            let w = Complex64::new(libm::cos(phase), libm::sin(phase));
            for start in (0..n).step_by(len) {
                let a = buf[start + k];
                let b = buf[start + k + half] * w;
                buf[start + k] = a + b;
                buf[start + k + half] = a - b;
            }
        }
        len <<= 1;
    }
}

/// Applies 1-D transforms along both axes of a `rows × cols` row-major
/// matrix in place.
fn dft2_in_place(data: &mut [Complex64], rows: usize, cols: usize, row_dir: Direction, col_dir: Direction) {
    let mut scratch = Vec::new();
    for r in data.chunks_exact_mut(cols) {
        dft_in_place(r, col_dir, &mut scratch);
    }
    let mut column = vec![Complex64::new(0.0, 0.0); rows];
    for c in 0..cols {
        for (r, slot) in column.iter_mut().enumerate() {
            *slot = data[r * cols + c];
        }
        dft_in_place(&mut column, row_dir, &mut scratch);
        for (r, v) in column.iter().enumerate() {
            data[r * cols + c] = *v;
        }
    }
}

/// Full (untruncated) angular-delay matrix, `Ñc × Nt`.
pub fn angular_delay_full(h: &SpatialFreqCsi) -> AngularDelayCsi {
    let (nt, nsc) = (h.nt(), h.subcarriers());
    // transpose to delay-major so the output is already in row = delay form
    let mut data: Vec<Complex64> = (0..nsc)
        .flat_map(|l| (0..nt).map(move |s| (s, l)))
        .map(|(s, l)| h.get(s, l))
        .collect();
    // rows index subcarriers → delay (conjugate kernel), columns antennas → angle
    dft2_in_place(&mut data, nsc, nt, Direction::Positive, Direction::Negative);
    AngularDelayCsi {
        delay_rows: nsc,
        nt,
        entries: data,
    }
}

/// Spatial-frequency CSI to the truncated, vectorized angular-delay form.
pub fn to_angular_delay(h: &SpatialFreqCsi, nc: usize) -> Result<CsiVector> {
    if nc == 0 || nc > h.subcarriers() {
        return Err(Error::DimensionMismatch {
            what: "retained delay rows",
            expected: h.subcarriers(),
            found: nc,
        });
    }
    Ok(angular_delay_full(h).truncate(nc)?.vectorize())
}

/// Inverse of [`to_angular_delay`] up to the discarded rows: zero-pads the
/// delay axis to `subcarriers` rows and applies the inverse transforms.
pub fn from_angular_delay(x: &CsiVector, subcarriers: usize) -> Result<SpatialFreqCsi> {
    if subcarriers < x.nc() {
        return Err(Error::DimensionMismatch {
            what: "subcarrier count",
            expected: x.nc(),
            found: subcarriers,
        });
    }
    let nt = x.nt();
    let ad = AngularDelayCsi::devectorize(x);
    let mut data = vec![Complex64::new(0.0, 0.0); subcarriers * nt];
    data[..ad.entries.len()].copy_from_slice(&ad.entries);
    dft2_in_place(&mut data, subcarriers, nt, Direction::Negative, Direction::Positive);
    let mut out = SpatialFreqCsi::zeros(nt, subcarriers);
    for l in 0..subcarriers {
        for s in 0..nt {
            out.set(s, l, data[l * nt + s]);
        }
    }
    Ok(out)
}
