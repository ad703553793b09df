//! `LORA` checkpoint files.
//!
//! Little-endian: magic `LORA`, `u32` version (1), `u32` Nt, Nc, M, T, h,
//! one quantizer byte, then `f32` blobs A (row-major), α, W₁, W₂, s, z.
//!
//! The quantizer byte keeps the mode in its low nibble (0 none, 1 QAT,
//! 2 LSQ, 3 LSZQ) and `bits − 1` in its high nibble.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use csifeed_core::linalg::Matrix;
use csifeed_core::lora::{LoraConfig, LoraParams};
use csifeed_core::quant::{QuantConfig, QuantMode, QuantParams};

use crate::error::{CliError, CliResult};

pub const MAGIC: [u8; 4] = *b"LORA";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub lora: LoraConfig,
    pub quant: Option<QuantConfig>,
    pub params: LoraParams,
}

pub fn encode_quant(q: Option<&QuantConfig>) -> u8 {
    match q {
        None => 0,
        Some(q) => {
            let mode = match q.mode {
                QuantMode::Qat => 1,
                QuantMode::Lsq => 2,
                QuantMode::Lszq => 3,
            };
            ((q.bits() - 1) << 4) | mode
        }
    }
}

pub fn decode_quant(byte: u8) -> Result<Option<QuantConfig>, String> {
    let bits = (byte >> 4) + 1;
    let mode = match byte & 0x0f {
        0 if byte == 0 => return Ok(None),
        1 => QuantMode::Qat,
        2 => QuantMode::Lsq,
        3 => QuantMode::Lszq,
        _ => return Err(format!("unknown quantizer byte {byte:#04x}")),
    };
    QuantConfig::new(bits, mode).map(Some).map_err(|e| e.to_string())
}

impl Checkpoint {
    pub fn new(lora: LoraConfig, quant: Option<QuantConfig>, params: LoraParams) -> CliResult<Self> {
        params.check_shapes(&lora)?;
        Ok(Self { lora, quant, params })
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let c = &self.lora;
        w.write_all(&MAGIC)?;
        for v in [VERSION as usize, c.nt, c.nc, c.measurements, c.blocks, c.hidden_width] {
            let v = u32::try_from(v)
                .map_err(|_| std::io::Error::new(std::io::ErrorKind::InvalidInput, "dimension exceeds u32"))?;
            w.write_all(&v.to_le_bytes())?;
        }
        w.write_all(&[encode_quant(self.quant.as_ref())])?;
        let p = &self.params;
        let blobs: [&[f64]; 5] = [p.a.as_slice(), &p.alpha, p.w1.as_slice(), p.w2.as_slice(), &[p.quant.scale, p.quant.zero_point]];
        let mut buf = Vec::new();
        for blob in blobs {
            buf.clear();
            buf.extend(blob.iter().flat_map(|&v| (v as f32).to_le_bytes()));
            w.write_all(&buf)?;
        }
        w.flush()
    }

    pub fn save(&self, path: &Path) -> CliResult<()> {
        let file = File::create(path).map_err(|e| CliError::io(path, e))?;
        self.write_to(BufWriter::new(file)).map_err(|e| CliError::io(path, e))
    }

    pub fn read_from<R: Read>(mut r: R, origin: &Path) -> CliResult<Self> {
        let bad = |msg: String| CliError::data(origin, msg);
        let mut header = [0u8; 29];
        r.read_exact(&mut header).map_err(|_| bad("truncated checkpoint header".into()))?;
        if header[..4] != MAGIC {
            return Err(bad("not a LORA checkpoint (bad magic)".into()));
        }
        let word = |i: usize| u32::from_le_bytes(header[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
        if word(0) != VERSION as usize {
            return Err(bad(format!("unsupported checkpoint version {}", word(0))));
        }
        let (nt, nc, m, t, h) = (word(1), word(2), word(3), word(4), word(5));
        let quant = decode_quant(header[28]).map_err(bad)?;
        let lora = LoraConfig::with_measurements(nt, nc, m, t, h).map_err(|e| bad(e.to_string()))?;
        let n = lora.signal_len();
        let mut raw = Vec::new();
        r.read_to_end(&mut raw).map_err(|e| CliError::io(origin, e))?;
        let expected = m * n + t + 2 * h * n + 2;
        if raw.len() != 4 * expected {
            return Err(bad(format!("parameter section holds {} bytes, expected {}", raw.len(), 4 * expected)));
        }
        let mut values = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64);
        let mut take = |k: usize| values.by_ref().take(k).collect::<Vec<f64>>();
        let a = Matrix::from_vec(m, n, take(m * n))?;
        let alpha = take(t);
        let w1 = Matrix::from_vec(h, n, take(h * n))?;
        let w2 = Matrix::from_vec(n, h, take(n * h))?;
        let sz = take(2);
        let params = LoraParams {
            a,
            alpha,
            w1,
            w2,
            quant: QuantParams {
                scale: sz[0],
                zero_point: sz[1],
            },
        };
        if !params.is_finite() {
            return Err(bad("non-finite parameter in checkpoint".into()));
        }
        Ok(Self { lora, quant, params })
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let file = File::open(path).map_err(|e| CliError::io(path, e))?;
        Self::read_from(BufReader::new(file), path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use csifeed_core::rng::stream;

    fn sample(quant: Option<QuantConfig>) -> Checkpoint {
        let lora = LoraConfig::with_measurements(2, 3, 5, 3, 4).unwrap();
        let mut params = LoraParams::init(&lora, &mut stream(4, 0, 0)).unwrap();
        params.quant = QuantParams { scale: 0.37, zero_point: -1.25 };
        Checkpoint::new(lora, quant, params).unwrap()
    }

    #[test]
    fn quant_byte_covers_every_mode_and_width() {
        assert_eq!(decode_quant(encode_quant(None)), Ok(None));
        for bits in 1..=16 {
            for mode in QuantMode::ALL {
                let q = QuantConfig::new(bits, mode).unwrap();
                assert_eq!(decode_quant(encode_quant(Some(&q))), Ok(Some(q)));
            }
        }
        assert_eq!(encode_quant(Some(&QuantConfig::new(4, QuantMode::Lszq).unwrap())), 0x33);
        assert!(decode_quant(0x04).is_err());
        assert!(decode_quant(0x10).is_err());
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let ck = sample(Some(QuantConfig::new(4, QuantMode::Lsq).unwrap()));
        let mut first = Vec::new();
        ck.write_to(&mut first).unwrap();
        let back = Checkpoint::read_from(&first[..], Path::new("mem")).unwrap();
        assert_eq!(back.lora, ck.lora);
        assert_eq!(back.quant, ck.quant);
        let mut second = Vec::new();
        back.write_to(&mut second).unwrap();
        assert_eq!(first, second);
        assert_eq!(Checkpoint::read_from(&second[..], Path::new("mem")).unwrap(), back);
        assert_eq!(first.len(), 29 + 4 * (5 * 12 + 3 + 2 * 4 * 12 + 2));
    }

    #[test]
    fn truncated_or_foreign_files_are_rejected() {
        let mut bytes = Vec::new();
        sample(None).write_to(&mut bytes).unwrap();
        for b in [&bytes[..bytes.len() - 4], &bytes[..20], b"CSID\x01\x00\x00\x00"] {
            assert_eq!(Checkpoint::read_from(b, Path::new("mem")).unwrap_err().exit_code(), 3);
        }
    }
}
