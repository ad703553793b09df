//! Linear encoder and unrolled decoder with a learned regularizer gradient.
//!
//! The encoder is `v = A·x`. Decoder block `t` (1-based) maps
//!
//! ```text
//! x⁽ᵗ⁾ = x⁽ᵗ⁻¹⁾ − α[t−1]·( Aᵀ(A·x⁽ᵗ⁻¹⁾ − v) + W₂·relu(W₁·x⁽ᵗ⁻¹⁾) )
//! ```
//!
//! starting at `x⁽⁰⁾ = 0`. `A` is shared with the encoder and `W₁`, `W₂`
//! are shared by every block; each block owns one step size. The MLP has no
//! bias terms. An optional quantizer sits between encoder and decoder.
//!
//! All kernels work on batches stored as row-major `batch × N` matrices;
//! the single-sample functions are thin wrappers. Backward passes compute
//! the gradient of the summed loss `Σ_b ‖x̂_b − x_b‖²`.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use rand::Rng;

use crate::error::{ensure_len, Error, Result};
use crate::linalg::{gemm, spectral_norm_estimate, Matrix, Op};
use crate::quant::{fake_quantize, quant_backward, QuantConfig, QuantParams};

/// Compression ratio `M / (2·Nt·Nc)` as a reduced fraction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CompressionRatio {
    num: u32,
    den: u32,
}

impl CompressionRatio {
    pub fn new(num: u32, den: u32) -> Result<Self> {
        if num == 0 || den == 0 || num > den {
            return Err(Error::config(alloc::format!(
                "compression ratio {num}/{den} must lie in (0, 1]"
            )));
        }
        let g = gcd(num, den);
        Ok(Self {
            num: num / g,
            den: den / g,
        })
    }

    /// Parses `"1/64"`, `"0.25"` or `"1"`.
    pub fn parse(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = || Error::config(alloc::format!("cannot parse compression ratio {s:?}"));
        if let Some((n, d)) = s.split_once('/') {
            let n = n.trim().parse::<u32>().map_err(|_| bad())?;
            let d = d.trim().parse::<u32>().map_err(|_| bad())?;
            return Self::new(n, d);
        }
        let value: f64 = s.parse().map_err(|_| bad())?;
        if !(value > 0.0 && value <= 1.0) {
            return Err(bad());
        }
        // decimals are exact over a power-of-ten denominator up to 1e-6
        let den = 1_000_000u32;
        Self::new(libm::round(value * den as f64) as u32, den)
    }

    pub fn value(&self) -> f64 {
        self.num as f64 / self.den as f64
    }

    pub fn numerator(&self) -> u32 {
        self.num
    }

    pub fn denominator(&self) -> u32 {
        self.den
    }
}

impl fmt::Display for CompressionRatio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.num, self.den)
    }
}

fn gcd(mut a: u32, mut b: u32) -> u32 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoraConfig {
    pub nt: usize,
    pub nc: usize,
    pub cr: CompressionRatio,
    /// `M = round(2·Nt·Nc·CR)`
    pub measurements: usize,
    /// Number of unrolled blocks `T`.
    pub blocks: usize,
    pub hidden_width: usize,
}

impl LoraConfig {
    pub const DEFAULT_BLOCKS: usize = 4;
    pub const DEFAULT_HIDDEN_WIDTH: usize = 1024;

    pub fn new(nt: usize, nc: usize, cr: CompressionRatio, blocks: usize, hidden_width: usize) -> Result<Self> {
        let n = 2 * nt * nc;
        let measurements = libm::round(n as f64 * cr.value()) as usize;
        let cfg = Self {
            nt,
            nc,
            cr,
            measurements,
            blocks,
            hidden_width,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Configuration with an explicit measurement count; the ratio is `M / N`.
    pub fn with_measurements(nt: usize, nc: usize, measurements: usize, blocks: usize, hidden_width: usize) -> Result<Self> {
        let n = 2 * nt * nc;
        let cr = CompressionRatio::new(measurements as u32, n as u32)?;
        let cfg = Self {
            nt,
            nc,
            cr,
            measurements,
            blocks,
            hidden_width,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Signal length `N = 2·Nt·Nc`.
    pub fn signal_len(&self) -> usize {
        2 * self.nt * self.nc
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.signal_len();
        if n == 0 {
            return Err(Error::config("nt and nc must be at least 1"));
        }
        if self.measurements == 0 || self.measurements > n {
            return Err(Error::config(alloc::format!(
                "measurement count {} must lie in 1..={n}",
                self.measurements
            )));
        }
        if self.blocks == 0 {
            return Err(Error::config("at least one decoder block is required"));
        }
        if self.hidden_width == 0 {
            return Err(Error::config("hidden_width must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoraParams {
    /// Measurement matrix, `M × N`.
    pub a: Matrix,
    /// Step size of each block.
    pub alpha: Vec<f64>,
    /// First MLP layer, `h × N`.
    pub w1: Matrix,
    /// Second MLP layer, `N × h`.
    pub w2: Matrix,
    pub quant: QuantParams,
}

/// Power-iteration steps used to size the initial step sizes.
const INIT_POWER_ITERS: usize = 20;

impl LoraParams {
    /// `A ~ N(0, 1/M)`, `W₁ ~ N(0, 2/N)`, `W₂ ~ N(0, 2/h)` and every step
    /// size `0.5 / σ̂²` with σ̂ the estimated spectral norm of `A`.
    pub fn init<R: Rng + ?Sized>(cfg: &LoraConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let (m, n, h) = (cfg.measurements, cfg.signal_len(), cfg.hidden_width);
        let a = Matrix::gaussian(m, n, 1.0 / m as f64, rng);
        let w1 = Matrix::gaussian(h, n, 2.0 / n as f64, rng);
        let w2 = Matrix::gaussian(n, h, 2.0 / h as f64, rng);
        let sigma = spectral_norm_estimate(&a, INIT_POWER_ITERS);
        let step = if sigma > 0.0 { 0.5 / (sigma * sigma) } else { 1.0 };
        Ok(Self {
            a,
            alpha: vec![step; cfg.blocks],
            w1,
            w2,
            quant: QuantParams::default(),
        })
    }

    pub fn check_shapes(&self, cfg: &LoraConfig) -> Result<()> {
        let (m, n, h) = (cfg.measurements, cfg.signal_len(), cfg.hidden_width);
        let check = |what, want: (usize, usize), got: (usize, usize)| {
            ensure_len(what, want.0, got.0).and_then(|_| ensure_len(what, want.1, got.1))
        };
        check("measurement matrix", (m, n), self.a.shape())?;
        check("MLP first layer", (h, n), self.w1.shape())?;
        check("MLP second layer", (n, h), self.w2.shape())?;
        ensure_len("step sizes", cfg.blocks, self.alpha.len())
    }

    pub fn is_finite(&self) -> bool {
        self.a.is_finite()
            && self.w1.is_finite()
            && self.w2.is_finite()
            && self.alpha.iter().all(|v| v.is_finite())
            && self.quant.scale.is_finite()
            && self.quant.zero_point.is_finite()
    }
}

/// Gradients shaped like [`LoraParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct LoraGrads {
    pub a: Matrix,
    pub alpha: Vec<f64>,
    pub w1: Matrix,
    pub w2: Matrix,
    pub scale: f64,
    pub zero_point: f64,
}

impl LoraGrads {
    pub fn zeros_like(params: &LoraParams) -> Self {
        Self {
            a: Matrix::zeros(params.a.rows(), params.a.cols()),
            alpha: vec![0.0; params.alpha.len()],
            w1: Matrix::zeros(params.w1.rows(), params.w1.cols()),
            w2: Matrix::zeros(params.w2.rows(), params.w2.cols()),
            scale: 0.0,
            zero_point: 0.0,
        }
    }

    pub fn scale_by(&mut self, factor: f64) {
        for v in self
            .a
            .as_mut_slice()
            .iter_mut()
            .chain(self.w1.as_mut_slice())
            .chain(self.w2.as_mut_slice())
            .chain(self.alpha.iter_mut())
        {
            *v *= factor;
        }
        self.scale *= factor;
        self.zero_point *= factor;
    }

    pub fn is_finite(&self) -> bool {
        self.a.is_finite()
            && self.w1.is_finite()
            && self.w2.is_finite()
            && self.alpha.iter().all(|v| v.is_finite())
            && self.scale.is_finite()
            && self.zero_point.is_finite()
    }
}

/// Intermediates of a batched forward pass.
#[derive(Debug, Clone)]
pub struct Tape {
    input: Matrix,
    /// Encoder output before quantization.
    measurements_raw: Matrix,
    /// Decoder-side measurements (dequantized when a quantizer is active).
    measurements: Matrix,
    quant: Option<(QuantConfig, QuantParams)>,
    /// `x⁽⁰⁾ … x⁽ᵀ⁾`
    iterates: Vec<Matrix>,
    /// `W₁·x⁽ᵗ⁾` for each block input.
    pre_activations: Vec<Matrix>,
    /// `A·x⁽ᵗ⁾ − v` for each block input.
    residuals: Vec<Matrix>,
    /// Update direction of each block.
    directions: Vec<Matrix>,
}

impl Tape {
    pub fn batch_size(&self) -> usize {
        self.input.rows()
    }

    /// Block outputs; entry 0 is the zero initialization.
    pub fn iterates(&self) -> &[Matrix] {
        &self.iterates
    }

    pub fn measurements(&self) -> &Matrix {
        &self.measurements
    }

    pub fn output(&self) -> &Matrix {
        self.iterates.last().expect("tape holds x⁽⁰⁾")
    }
}

/// `v = A·x`
pub fn encode(x: &[f64], a: &Matrix) -> Result<Vec<f64>> {
    a.matvec(x)
}

/// `W₂·relu(W₁·x)`
pub fn reg_grad(x: &[f64], w1: &Matrix, w2: &Matrix) -> Result<Vec<f64>> {
    ensure_len("MLP hidden width", w1.rows(), w2.cols())?;
    ensure_len("MLP output", x.len(), w2.rows())?;
    let hidden: Vec<f64> = w1.matvec(x)?.into_iter().map(|p| p.max(0.0)).collect();
    w2.matvec(&hidden)
}

fn check_inputs(params: &LoraParams, cfg: &LoraConfig, inputs: &Matrix) -> Result<()> {
    cfg.validate()?;
    params.check_shapes(cfg)?;
    ensure_len("input signal length", cfg.signal_len(), inputs.cols())
}

fn quantize_rows(raw: &Matrix, qcfg: &QuantConfig, qp: &QuantParams) -> Result<Matrix> {
    let data = fake_quantize(raw.as_slice(), qp, qcfg)?;
    Matrix::from_vec(raw.rows(), raw.cols(), data)
}

/// Batched forward pass over `inputs` (`batch × N`), keeping the tape.
pub fn forward_batch(
    params: &LoraParams,
    cfg: &LoraConfig,
    quant: Option<&QuantConfig>,
    inputs: &Matrix,
) -> Result<(Matrix, Tape)> {
    check_inputs(params, cfg, inputs)?;
    let batch = inputs.rows();
    let (m, n, h) = (cfg.measurements, cfg.signal_len(), cfg.hidden_width);

    let mut raw = Matrix::zeros(batch, m);
    gemm(1.0, inputs, Op::N, &params.a, Op::T, 0.0, &mut raw);
    let measurements = match quant {
        Some(q) => quantize_rows(&raw, q, &params.quant)?,
        None => raw.clone(),
    };

    let mut iterates = Vec::with_capacity(cfg.blocks + 1);
    let mut pre_activations = Vec::with_capacity(cfg.blocks);
    let mut residuals = Vec::with_capacity(cfg.blocks);
    let mut directions = Vec::with_capacity(cfg.blocks);
    iterates.push(Matrix::zeros(batch, n));
    let mut hidden = Matrix::zeros(batch, h);
    for &step in &params.alpha {
        let x = iterates.last().expect("non-empty");
        let mut r = Matrix::zeros(batch, m);
        gemm(1.0, x, Op::N, &params.a, Op::T, 0.0, &mut r);
        r.axpy(-1.0, &measurements);
        let mut d = Matrix::zeros(batch, n);
        gemm(1.0, &r, Op::N, &params.a, Op::N, 0.0, &mut d);
        let mut p = Matrix::zeros(batch, h);
        gemm(1.0, x, Op::N, &params.w1, Op::T, 0.0, &mut p);
        for (hv, &pv) in hidden.as_mut_slice().iter_mut().zip(p.as_slice()) {
            *hv = pv.max(0.0);
        }
        gemm(1.0, &hidden, Op::N, &params.w2, Op::T, 1.0, &mut d);
        let mut next = x.clone();
        next.axpy(-step, &d);
        if !next.is_finite() {
            return Err(Error::NonFinite("decoder block output"));
        }
        iterates.push(next);
        pre_activations.push(p);
        residuals.push(r);
        directions.push(d);
    }
    let output = iterates.last().expect("non-empty").clone();
    let tape = Tape {
        input: inputs.clone(),
        measurements_raw: raw,
        measurements,
        quant: quant.map(|q| (*q, params.quant)),
        iterates,
        pre_activations,
        residuals,
        directions,
    };
    Ok((output, tape))
}

/// Batched reconstruction without gradients.
pub fn reconstruct_batch(
    params: &LoraParams,
    cfg: &LoraConfig,
    quant: Option<&QuantConfig>,
    inputs: &Matrix,
) -> Result<Matrix> {
    forward_batch(params, cfg, quant, inputs).map(|(out, _)| out)
}

/// Per-block gradients of the shared MLP weights.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockWeightGrads {
    pub w1: Matrix,
    pub w2: Matrix,
}

/// Gradient of `Σ_b ‖x̂_b − target_b‖²` for a batch.
///
/// `x_hat` must be the output recorded on `tape`; `targets` may differ from
/// the encoder input (noisy-input training uses clean targets).
pub fn backward_batch(params: &LoraParams, tape: &Tape, targets: &Matrix, x_hat: &Matrix) -> Result<LoraGrads> {
    backward_impl(params, tape, targets, x_hat, false).map(|(g, _)| g)
}

/// [`backward_batch`] that also reports each block's contribution to the
/// shared MLP gradients, as if the blocks had untied weights.
pub fn backward_batch_per_block(
    params: &LoraParams,
    tape: &Tape,
    targets: &Matrix,
    x_hat: &Matrix,
) -> Result<(LoraGrads, Vec<BlockWeightGrads>)> {
    backward_impl(params, tape, targets, x_hat, true)
}

fn backward_impl(
    params: &LoraParams,
    tape: &Tape,
    targets: &Matrix,
    x_hat: &Matrix,
    per_block: bool,
) -> Result<(LoraGrads, Vec<BlockWeightGrads>)> {
    let blocks = tape.directions.len();
    if params.alpha.len() != blocks
        || x_hat != tape.output()
        || targets.shape() != x_hat.shape()
        || params.a.cols() != x_hat.cols()
        || params.a.rows() != tape.measurements.cols()
        || params.w1.rows() != tape.pre_activations.first().map_or(params.w1.rows(), |p| p.cols())
        || tape.quant.is_some_and(|(_, qp)| qp != params.quant)
    {
        return Err(Error::TapeMismatch);
    }
    let batch = x_hat.rows();
    let (m, h) = (params.a.rows(), params.w1.rows());
    let mut grads = LoraGrads::zeros_like(params);
    let mut block_grads = Vec::new();

    // ∂L/∂x̂ = 2(x̂ − target)
    let mut upstream = x_hat.clone();
    upstream.axpy(-1.0, targets);
    upstream.as_mut_slice().iter_mut().for_each(|v| *v *= 2.0);

    let mut grad_measurements = Matrix::zeros(batch, m);
    let mut grad_dir = Matrix::zeros(upstream.rows(), upstream.cols());
    let mut grad_res = Matrix::zeros(batch, m);
    let mut hidden = Matrix::zeros(batch, h);
    let mut grad_hidden = Matrix::zeros(batch, h);
    for t in (0..blocks).rev() {
        let x = &tape.iterates[t];
        let d = &tape.directions[t];
        let r = &tape.residuals[t];
        let p = &tape.pre_activations[t];
        let step = params.alpha[t];

        grads.alpha[t] = -crate::linalg::dot(upstream.as_slice(), d.as_slice());
        for (gd, &u) in grad_dir.as_mut_slice().iter_mut().zip(upstream.as_slice()) {
            *gd = -step * u;
        }
        // identity path: x̄⁽ᵗ⁾ starts as the upstream of x⁽ᵗ⁺¹⁾

        // data-fidelity branch: d ⊇ r·A with r = x·Aᵀ − v
        gemm(1.0, r, Op::T, &grad_dir, Op::N, 1.0, &mut grads.a);
        gemm(1.0, &grad_dir, Op::N, &params.a, Op::T, 0.0, &mut grad_res);
        gemm(1.0, &grad_res, Op::T, x, Op::N, 1.0, &mut grads.a);
        gemm(1.0, &grad_res, Op::N, &params.a, Op::N, 1.0, &mut upstream);
        grad_measurements.axpy(-1.0, &grad_res);

        // regularizer branch: d ⊇ relu(x·W₁ᵀ)·W₂ᵀ
        for (hv, &pv) in hidden.as_mut_slice().iter_mut().zip(p.as_slice()) {
            *hv = pv.max(0.0);
        }
        gemm(1.0, &grad_dir, Op::N, &params.w2, Op::N, 0.0, &mut grad_hidden);
        for (gh, &pv) in grad_hidden.as_mut_slice().iter_mut().zip(p.as_slice()) {
            if pv <= 0.0 {
                *gh = 0.0;
            }
        }
        if per_block {
            let mut w1 = Matrix::zeros(params.w1.rows(), params.w1.cols());
            let mut w2 = Matrix::zeros(params.w2.rows(), params.w2.cols());
            gemm(1.0, &grad_dir, Op::T, &hidden, Op::N, 0.0, &mut w2);
            gemm(1.0, &grad_hidden, Op::T, x, Op::N, 0.0, &mut w1);
            grads.w1.axpy(1.0, &w1);
            grads.w2.axpy(1.0, &w2);
            block_grads.push(BlockWeightGrads { w1, w2 });
        } else {
            gemm(1.0, &grad_dir, Op::T, &hidden, Op::N, 1.0, &mut grads.w2);
            gemm(1.0, &grad_hidden, Op::T, x, Op::N, 1.0, &mut grads.w1);
        }
        gemm(1.0, &grad_hidden, Op::N, &params.w1, Op::N, 1.0, &mut upstream);
    }
    block_grads.reverse();

    // encoder, through the quantizer when present
    let grad_raw = match &tape.quant {
        Some((qcfg, qp)) => {
            let q = quant_backward(
                tape.measurements_raw.as_slice(),
                qp,
                qcfg,
                grad_measurements.as_slice(),
            )?;
            grads.scale = q.grad_scale;
            grads.zero_point = q.grad_zero_point;
            Matrix::from_vec(batch, m, q.grad_input)?
        }
        None => grad_measurements,
    };
    gemm(1.0, &grad_raw, Op::T, &tape.input, Op::N, 1.0, &mut grads.a);
    Ok((grads, block_grads))
}

/// Single-sample forward pass.
pub fn lora_forward(
    x: &[f64],
    params: &LoraParams,
    cfg: &LoraConfig,
    quant: Option<&QuantConfig>,
) -> Result<(Vec<f64>, Tape)> {
    let input = Matrix::from_vec(1, x.len(), x.to_vec())?;
    let (out, tape) = forward_batch(params, cfg, quant, &input)?;
    Ok((out.into_vec(), tape))
}

/// Single-sample backward pass of `‖x̂ − x_true‖²`.
pub fn lora_backward(params: &LoraParams, tape: &Tape, x_true: &[f64], x_hat: &[f64]) -> Result<LoraGrads> {
    if tape.batch_size() != 1 {
        return Err(Error::TapeMismatch);
    }
    let targets = Matrix::from_vec(1, x_true.len(), x_true.to_vec()).map_err(|_| Error::TapeMismatch)?;
    let out = Matrix::from_vec(1, x_hat.len(), x_hat.to_vec()).map_err(|_| Error::TapeMismatch)?;
    backward_batch(params, tape, &targets, &out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamCount {
    /// Measurement matrix, `M·N`.
    pub encoder: usize,
    /// Per-block MLP plus step size, counted once per block: `T·(2·h·N + 1)`.
    pub decoder_total: usize,
    /// Distinct learnable scalars with the MLP shared: `M·N + 2·h·N + T`.
    pub trainable: usize,
}

impl ParamCount {
    /// Encoder plus decoder as deployed.
    pub fn total(&self) -> usize {
        self.encoder + self.decoder_total
    }
}

pub fn param_count(cfg: &LoraConfig) -> ParamCount {
    let n = cfg.signal_len();
    let mlp = cfg.hidden_width * n + n * cfg.hidden_width;
    ParamCount {
        encoder: cfg.measurements * n,
        decoder_total: cfg.blocks * mlp + cfg.blocks,
        trainable: cfg.measurements * n + mlp + cfg.blocks,
    }
}
