//! `CSID` dataset files.
//!
//! Little-endian throughout: magic `CSID`, `u32` version (1), `u32` Nt,
//! `u32` Nc, `u64` record count, then the records, each `2·Nt·Nc` `f32`
//! values in angular-delay vector order.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use csifeed_core::linalg::Matrix;

use crate::error::{CliError, CliResult};

pub const MAGIC: [u8; 4] = *b"CSID";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: u64 = 24;

/// Size in bytes of a file holding `count` records.
pub fn file_len(nt: usize, nc: usize, count: u64) -> u64 {
    HEADER_LEN + count * (2 * nt * nc) as u64 * 4
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub nt: usize,
    pub nc: usize,
    /// One sample per row.
    pub samples: Matrix,
}

impl Dataset {
    pub fn sample_len(&self) -> usize {
        2 * self.nt * self.nc
    }

    pub fn count(&self) -> usize {
        self.samples.rows()
    }

    pub fn write_to<W: Write>(&self, w: W) -> io::Result<()> {
        let mut out = DatasetWriter::new(w, self.nt, self.nc, self.count() as u64)?;
        for row in self.samples.row_iter() {
            out.push(row)?;
        }
        out.finish().map(drop)
    }

    pub fn save(&self, path: &Path) -> CliResult<()> {
        let file = File::create(path).map_err(|e| CliError::io(path, e))?;
        self.write_to(BufWriter::new(file)).map_err(|e| CliError::io(path, e))
    }

    pub fn read_from<R: Read>(mut r: R, origin: &Path) -> CliResult<Self> {
        let bad = |msg: &str| CliError::data(origin, msg);
        let mut header = [0u8; HEADER_LEN as usize];
        read_exact_or(&mut r, &mut header, origin, "truncated dataset header")?;
        if header[..4] != MAGIC {
            return Err(bad("not a CSID dataset (bad magic)"));
        }
        let version = u32::from_le_bytes(header[4..8].try_into().unwrap());
        if version != VERSION {
            return Err(CliError::data(origin, format!("unsupported dataset version {version}")));
        }
        let nt = u32::from_le_bytes(header[8..12].try_into().unwrap()) as usize;
        let nc = u32::from_le_bytes(header[12..16].try_into().unwrap()) as usize;
        let count = u64::from_le_bytes(header[16..24].try_into().unwrap());
        if nt == 0 || nc == 0 {
            return Err(bad("dataset dimensions must be positive"));
        }
        let len = 2 * nt * nc;
        let total = usize::try_from(count)
            .ok()
            .and_then(|c| c.checked_mul(len))
            .ok_or_else(|| bad("record count overflows"))?;
        let mut raw = Vec::new();
        r.take(total as u64 * 4 + 1)
            .read_to_end(&mut raw)
            .map_err(|e| CliError::io(origin, e))?;
        if raw.len() < total * 4 {
            return Err(CliError::data(
                origin,
                format!("truncated: header promises {count} records, file holds {} bytes of data", raw.len()),
            ));
        }
        if raw.len() > total * 4 {
            return Err(bad("trailing bytes after the last record"));
        }
        let values: Vec<f64> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        if values.iter().any(|v| !v.is_finite()) {
            return Err(bad("non-finite value in dataset"));
        }
        let samples = Matrix::from_vec(count as usize, len, values).map_err(|e| bad(&e.to_string()))?;
        Ok(Self { nt, nc, samples })
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let file = File::open(path).map_err(|e| CliError::io(path, e))?;
        Self::read_from(BufReader::new(file), path)
    }

    /// Rows `range` as a new dataset.
    pub fn slice(&self, range: std::ops::Range<usize>) -> Self {
        let rows: Vec<&[f64]> = range.map(|i| self.samples.row(i)).collect();
        let samples = if rows.is_empty() {
            Matrix::zeros(0, self.sample_len())
        } else {
            Matrix::from_rows(&rows).expect("rows share a length")
        };
        Self {
            nt: self.nt,
            nc: self.nc,
            samples,
        }
    }
}

fn read_exact_or<R: Read>(r: &mut R, buf: &mut [u8], origin: &Path, msg: &str) -> CliResult<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => CliError::data(origin, msg),
        _ => CliError::io(origin, e),
    })
}

/// Streams records to a dataset file whose count is fixed up front.
pub struct DatasetWriter<W: Write> {
    inner: W,
    len: usize,
    expected: u64,
    written: u64,
}

impl<W: Write> DatasetWriter<W> {
    pub fn new(mut inner: W, nt: usize, nc: usize, count: u64) -> io::Result<Self> {
        let dim = |v: usize| {
            u32::try_from(v).map_err(|_| io::Error::new(io::ErrorKind::InvalidInput, "dimension exceeds u32"))
        };
        inner.write_all(&MAGIC)?;
        inner.write_all(&VERSION.to_le_bytes())?;
        inner.write_all(&dim(nt)?.to_le_bytes())?;
        inner.write_all(&dim(nc)?.to_le_bytes())?;
        inner.write_all(&count.to_le_bytes())?;
        Ok(Self {
            inner,
            len: 2 * nt * nc,
            expected: count,
            written: 0,
        })
    }

    /// Appends one record, stored as `f32`.
    pub fn push(&mut self, record: &[f64]) -> io::Result<()> {
        if record.len() != self.len {
            return Err(io::Error::new(
                io::ErrorKind::InvalidInput,
                format!("record has {} values, expected {}", record.len(), self.len),
            ));
        }
        if self.written == self.expected {
            return Err(io::Error::new(io::ErrorKind::InvalidInput, "more records than announced"));
        }
        let mut buf = Vec::with_capacity(4 * record.len());
        for &v in record {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
        self.inner.write_all(&buf)?;
        self.written += 1;
        Ok(())
    }

    pub fn finish(mut self) -> io::Result<W> {
        if self.written != self.expected {
            return Err(io::Error::new(
                io::ErrorKind::InvalidInput,
                format!("wrote {} records, header announces {}", self.written, self.expected),
            ));
        }
        self.inner.flush()?;
        Ok(self.inner)
    }
}
