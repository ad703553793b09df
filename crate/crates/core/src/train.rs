//! End-to-end training: MSE loss, NMSE, AWGN corruption, ADAM and the
//! epoch loop.
//!
//! Batches are row-major `batch × N` matrices. Training is deterministic for
//! a given dataset, configuration and seed: initialization, per-epoch
//! shuffles and noise each come from their own derived stream, and batch
//! gradients are reduced in sample order.

use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{ensure_finite, ensure_len, Error, Result};
use crate::linalg::{norm2_sq, Matrix};
use crate::lora::{backward_batch, forward_batch, reconstruct_batch, LoraConfig, LoraGrads, LoraParams};
use crate::quant::{QuantConfig, QuantParams};
use crate::rng::{domain, stream};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub seed: u64,
    /// Input SNR for noisy-CSI training; `None` trains on clean inputs.
    pub snr_db: Option<f64>,
    pub quant: Option<QuantConfig>,
    /// Update only the quantizer parameters.
    pub freeze_network: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            epochs: 1000,
            batch_size: 200,
            adam: AdamConfig::default(),
            seed: 0,
            snr_db: None,
            quant: None,
            freeze_network: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::config("learning_rate must be positive"));
        }
        if self.epochs == 0 {
            return Err(Error::config("epochs must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be at least 1"));
        }
        let AdamConfig { beta1, beta2, eps } = self.adam;
        if !((0.0..1.0).contains(&beta1) && (0.0..1.0).contains(&beta2) && eps > 0.0) {
            return Err(Error::config("ADAM needs 0 <= beta < 1 and eps > 0"));
        }
        if self.snr_db.is_some_and(|s| s.is_nan()) {
            return Err(Error::config("snr_db must be a number"));
        }
        if self.freeze_network && !self.quant.is_some_and(|q| q.mode.learns_scale()) {
            return Err(Error::config(
                "freeze_network trains only the quantizer and needs an lsq or lszq quantizer",
            ));
        }
        Ok(())
    }

    fn mask(&self) -> UpdateMask {
        let mode = self.quant.map(|q| q.mode);
        UpdateMask {
            network: !self.freeze_network,
            scale: mode.is_some_and(|m| m.learns_scale()),
            zero_point: mode.is_some_and(|m| m.learns_zero_point()),
        }
    }
}

/// `(1/B)·Σ_b ‖x̂_b − x_b‖²`
pub fn mse_loss(x_hat: &Matrix, x_true: &Matrix) -> Result<f64> {
    check_batches(x_hat, x_true)?;
    if x_true.rows() == 0 {
        return Ok(0.0);
    }
    let total: f64 = x_hat
        .row_iter()
        .zip(x_true.row_iter())
        .map(|(a, b)| sq_dist(a, b))
        .sum();
    Ok(total / x_true.rows() as f64)
}

/// Batch mean of `‖H − Ĥ‖² / ‖H‖²`, one sample per row.
pub fn nmse(h_true: &Matrix, h_hat: &Matrix) -> Result<f64> {
    check_batches(h_hat, h_true)?;
    if h_true.rows() == 0 {
        return Err(Error::ZeroReference);
    }
    let mut total = 0.0;
    for (t, e) in h_true.row_iter().zip(h_hat.row_iter()) {
        let energy = norm2_sq(t);
        if energy == 0.0 {
            return Err(Error::ZeroReference);
        }
        total += sq_dist(t, e) / energy;
    }
    Ok(total / h_true.rows() as f64)
}

pub fn to_db(linear: f64) -> f64 {
    10.0 * libm::log10(linear)
}

/// Mean per-sample ℓ₁ norm.
pub fn mean_l1(x: &Matrix) -> f64 {
    if x.rows() == 0 {
        return 0.0;
    }
    x.as_slice().iter().map(|v| v.abs()).sum::<f64>() / x.rows() as f64
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum()
}

fn check_batches(a: &Matrix, b: &Matrix) -> Result<()> {
    ensure_len("batch size", b.rows(), a.rows())?;
    ensure_len("sample length", b.cols(), a.cols())
}

/// Adds white Gaussian noise at `snr_db` relative to the batch-mean squared
/// entry. `None` returns the batch unchanged.
pub fn add_awgn<R: Rng + ?Sized>(x: &Matrix, snr_db: Option<f64>, rng: &mut R) -> Result<Matrix> {
    let Some(snr_db) = snr_db else {
        return Ok(x.clone());
    };
    let n = x.as_slice().len();
    let power = if n == 0 { 0.0 } else { norm2_sq(x.as_slice()) / n as f64 };
    if !(power > 0.0) {
        return Err(Error::ZeroReference);
    }
    let sd = libm::sqrt(power / libm::pow(10.0, snr_db / 10.0));
    let mut out = x.clone();
    for v in out.as_mut_slice() {
        *v += sd * rng.sample::<f64, _>(StandardNormal);
    }
    Ok(out)
}

/// Which parameter groups an optimizer step may touch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UpdateMask {
    /// `A`, step sizes and MLP weights.
    pub network: bool,
    pub scale: bool,
    pub zero_point: bool,
}

impl UpdateMask {
    pub const ALL: UpdateMask = UpdateMask {
        network: true,
        scale: true,
        zero_point: true,
    };
}

/// First and second moments shaped like the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    first: LoraGrads,
    second: LoraGrads,
    step: u64,
}

impl AdamState {
    pub fn new(params: &LoraParams) -> Self {
        Self {
            first: LoraGrads::zeros_like(params),
            second: LoraGrads::zeros_like(params),
            step: 0,
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }
}

/// Bias-corrected ADAM over one flat tensor at (1-based) step `t`.
pub fn adam_update(
    param: &mut [f64],
    grad: &[f64],
    first: &mut [f64],
    second: &mut [f64],
    lr: f64,
    cfg: &AdamConfig,
    t: u64,
) {
    let c1 = 1.0 - libm::pow(cfg.beta1, t as f64);
    let c2 = 1.0 - libm::pow(cfg.beta2, t as f64);
    for (((p, &g), m), v) in param.iter_mut().zip(grad).zip(first.iter_mut()).zip(second.iter_mut()) {
        *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
        *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= lr * m_hat / (libm::sqrt(v_hat) + cfg.eps);
    }
}

/// One optimizer step over the groups enabled in `mask`.
pub fn adam_step(
    params: &mut LoraParams,
    grads: &LoraGrads,
    state: &mut AdamState,
    lr: f64,
    cfg: &AdamConfig,
    mask: UpdateMask,
) -> Result<()> {
    if !grads.is_finite() {
        return Err(Error::NonFinite("gradient"));
    }
    ensure_len("gradient shape", params.a.as_slice().len(), grads.a.as_slice().len())?;
    ensure_len("gradient shape", params.w1.as_slice().len(), grads.w1.as_slice().len())?;
    ensure_len("gradient shape", params.w2.as_slice().len(), grads.w2.as_slice().len())?;
    ensure_len("gradient shape", params.alpha.len(), grads.alpha.len())?;
    state.step += 1;
    let t = state.step;
    let (m, v) = (&mut state.first, &mut state.second);
    if mask.network {
        adam_update(params.a.as_mut_slice(), grads.a.as_slice(), m.a.as_mut_slice(), v.a.as_mut_slice(), lr, cfg, t);
        adam_update(&mut params.alpha, &grads.alpha, &mut m.alpha, &mut v.alpha, lr, cfg, t);
        adam_update(params.w1.as_mut_slice(), grads.w1.as_slice(), m.w1.as_mut_slice(), v.w1.as_mut_slice(), lr, cfg, t);
        adam_update(params.w2.as_mut_slice(), grads.w2.as_slice(), m.w2.as_mut_slice(), v.w2.as_mut_slice(), lr, cfg, t);
    }
    if mask.scale {
        let mut s = [params.quant.scale];
        adam_update(&mut s, &[grads.scale], core::slice::from_mut(&mut m.scale), core::slice::from_mut(&mut v.scale), lr, cfg, t);
        params.quant.scale = s[0];
    }
    if mask.zero_point {
        let mut z = [params.quant.zero_point];
        adam_update(
            &mut z,
            &[grads.zero_point],
            core::slice::from_mut(&mut m.zero_point),
            core::slice::from_mut(&mut v.zero_point),
            lr,
            cfg,
            t,
        );
        params.quant.zero_point = z[0];
    }
    if !params.is_finite() {
        return Err(Error::NonFinite("parameters after update"));
    }
    if params.quant.scale <= 0.0 {
        return Err(Error::InvalidScale(params.quant.scale));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    pub nmse: f64,
}

/// Rows evaluated per forward call in [`evaluate`].
const EVAL_CHUNK: usize = 256;

/// Reconstructs `inputs` and scores the result against `targets` (which
/// are the inputs themselves unless the inputs were corrupted).
pub fn evaluate(
    params: &LoraParams,
    cfg: &LoraConfig,
    quant: Option<&QuantConfig>,
    inputs: &Matrix,
    targets: &Matrix,
) -> Result<Evaluation> {
    check_batches(inputs, targets)?;
    let recon = reconstruct_all(params, cfg, quant, inputs)?;
    Ok(Evaluation {
        loss: mse_loss(&recon, targets)?,
        nmse: nmse(targets, &recon)?,
    })
}

/// [`reconstruct_batch`] in bounded-size chunks.
pub fn reconstruct_all(
    params: &LoraParams,
    cfg: &LoraConfig,
    quant: Option<&QuantConfig>,
    inputs: &Matrix,
) -> Result<Matrix> {
    let mut out = Vec::with_capacity(inputs.as_slice().len());
    for start in (0..inputs.rows()).step_by(EVAL_CHUNK) {
        let end = (start + EVAL_CHUNK).min(inputs.rows());
        let chunk = Matrix::from_rows(&(start..end).map(|i| inputs.row(i)).collect::<Vec<_>>())?;
        out.extend_from_slice(reconstruct_batch(params, cfg, quant, &chunk)?.as_slice());
    }
    Matrix::from_vec(inputs.rows(), inputs.cols(), out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean training loss over the epoch's batches, before each update.
    pub loss: f64,
    pub nmse: f64,
    pub nmse_db: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: LoraParams,
    pub history: Vec<EpochRecord>,
}

/// Epoch-by-epoch trainer over an in-memory dataset (`samples × N`).
#[derive(Debug)]
pub struct Trainer<'a> {
    data: &'a Matrix,
    lora: LoraConfig,
    cfg: TrainConfig,
    params: LoraParams,
    adam: AdamState,
    epoch: usize,
    quant_ready: bool,
}

impl<'a> Trainer<'a> {
    /// Fresh parameters drawn from the configured seed.
    pub fn new(data: &'a Matrix, lora: LoraConfig, cfg: TrainConfig) -> Result<Self> {
        let params = LoraParams::init(&lora, &mut stream(cfg.seed, domain::INIT, 0))?;
        Self::with_params(data, lora, cfg, params, false)
    }

    /// Starts from existing parameters. With `quant_ready` the stored
    /// quantizer scale and zero point are kept instead of being fitted to the
    /// first batch.
    pub fn with_params(
        data: &'a Matrix,
        lora: LoraConfig,
        cfg: TrainConfig,
        params: LoraParams,
        quant_ready: bool,
    ) -> Result<Self> {
        cfg.validate()?;
        lora.validate()?;
        params.check_shapes(&lora)?;
        if data.rows() == 0 {
            return Err(Error::InvalidCount);
        }
        ensure_len("training sample length", lora.signal_len(), data.cols())?;
        ensure_finite("training data", data.as_slice())?;
        let adam = AdamState::new(&params);
        Ok(Self {
            data,
            lora,
            cfg,
            params,
            adam,
            epoch: 0,
            quant_ready,
        })
    }

    pub fn params(&self) -> &LoraParams {
        &self.params
    }

    pub fn into_params(self) -> LoraParams {
        self.params
    }

    pub fn epochs_done(&self) -> usize {
        self.epoch
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    /// Loss and NMSE of the current parameters on `inputs` against themselves.
    pub fn evaluate(&self, inputs: &Matrix) -> Result<Evaluation> {
        evaluate(&self.params, &self.lora, self.cfg.quant.as_ref(), inputs, inputs)
    }

    fn gather(&self, idx: &[usize]) -> Result<Matrix> {
        Matrix::from_rows(&idx.iter().map(|&i| self.data.row(i)).collect::<Vec<_>>())
    }

    /// Runs one pass over the shuffled dataset.
    pub fn run_epoch(&mut self) -> Result<EpochRecord> {
        let epoch = self.epoch;
        let mut order: Vec<usize> = (0..self.data.rows()).collect();
        order.shuffle(&mut stream(self.cfg.seed, domain::SHUFFLE, epoch as u64));
        let mask = self.cfg.mask();
        let quant = self.cfg.quant;
        let (mut loss_sum, mut nmse_sum) = (0.0, 0.0);
        for (b, idx) in order.chunks(self.cfg.batch_size).enumerate() {
            let targets = self.gather(idx)?;
            let inputs = if self.cfg.snr_db.is_some() {
                let mut rng = stream(self.cfg.seed, domain::NOISE, ((epoch as u64) << 32) | b as u64);
                add_awgn(&targets, self.cfg.snr_db, &mut rng)?
            } else {
                targets.clone()
            };
            if let (Some(q), false) = (quant.as_ref(), self.quant_ready) {
                let raw = crate::linalg::matmul(&inputs, crate::linalg::Op::N, &self.params.a, crate::linalg::Op::T);
                self.params.quant = QuantParams::from_values(raw.as_slice(), q);
                self.quant_ready = true;
            }
            let (x_hat, tape) = forward_batch(&self.params, &self.lora, quant.as_ref(), &inputs)?;
            loss_sum += mse_loss(&x_hat, &targets)? * idx.len() as f64;
            nmse_sum += nmse(&targets, &x_hat)? * idx.len() as f64;
            let mut grads = backward_batch(&self.params, &tape, &targets, &x_hat)?;
            grads.scale_by(1.0 / idx.len() as f64);
            adam_step(&mut self.params, &grads, &mut self.adam, self.cfg.learning_rate, &self.cfg.adam, mask)?;
        }
        self.epoch += 1;
        let count = self.data.rows() as f64;
        let nmse = nmse_sum / count;
        Ok(EpochRecord {
            epoch: self.epoch,
            loss: loss_sum / count,
            nmse,
            nmse_db: to_db(nmse),
            seconds: 0.0,
        })
    }
}

/// Trains for `cfg.epochs` epochs. `clock` returns monotonic seconds and
/// times each epoch.
pub fn train(
    data: &Matrix,
    lora: &LoraConfig,
    cfg: &TrainConfig,
    clock: &mut dyn FnMut() -> f64,
) -> Result<TrainOutcome> {
    let mut trainer = Trainer::new(data, lora.clone(), cfg.clone())?;
    let history = run_to_completion(&mut trainer, clock)?;
    Ok(TrainOutcome {
        params: trainer.into_params(),
        history,
    })
}

/// Runs the remaining epochs of `trainer`.
pub fn run_to_completion(trainer: &mut Trainer<'_>, clock: &mut dyn FnMut() -> f64) -> Result<Vec<EpochRecord>> {
    let mut history = Vec::with_capacity(trainer.cfg.epochs);
    while trainer.epoch < trainer.cfg.epochs {
        let start = clock();
        let mut rec = trainer.run_epoch()?;
        rec.seconds = clock() - start;
        history.push(rec);
    }
    Ok(history)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quant::QuantMode;
    use alloc::vec;

    fn rows(v: &[&[f64]]) -> Matrix {
        Matrix::from_rows(v).unwrap()
    }

    #[test]
    fn mse_examples() {
        let x = rows(&[&[1.0, 2.0, 3.0]]);
        assert_eq!(mse_loss(&x, &x).unwrap(), 0.0);
        let xh = rows(&[&[2.0, 2.0, 3.0]]);
        assert_eq!(mse_loss(&xh, &x).unwrap(), 1.0);
        let a = rows(&[&[1.0, 1.0], &[2.0, 0.0]]);
        let b = rows(&[&[0.0, 0.0], &[0.0, 0.0]]);
        assert_eq!(mse_loss(&a, &b).unwrap(), 3.0);
        assert!(mse_loss(&a, &x).is_err());
    }

    #[test]
    fn nmse_examples() {
        let h = rows(&[&[1.0, -2.0], &[0.5, 3.0]]);
        assert_eq!(nmse(&h, &h).unwrap(), 0.0);
        assert_eq!(nmse(&h, &Matrix::zeros(2, 2)).unwrap(), 1.0);
        let mut twice = h.clone();
        twice.as_mut_slice().iter_mut().for_each(|v| *v *= 2.0);
        assert!((nmse(&h, &twice).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(nmse(&Matrix::zeros(1, 2), &h.clone()).unwrap_err(), Error::DimensionMismatch { what: "batch size", expected: 1, found: 2 });
        assert_eq!(nmse(&Matrix::zeros(2, 2), &h), Err(Error::ZeroReference));
    }

    #[test]
    fn nmse_is_scale_invariant() {
        let h = rows(&[&[1.0, -2.0, 0.3], &[0.5, 3.0, -1.0]]);
        let e = rows(&[&[0.9, -2.2, 0.1], &[0.4, 3.5, -1.0]]);
        let base = nmse(&h, &e).unwrap();
        for c in [-3.0, 0.01, 7.5] {
            let mut hc = h.clone();
            let mut ec = e.clone();
            hc.as_mut_slice().iter_mut().for_each(|v| *v *= c);
            ec.as_mut_slice().iter_mut().for_each(|v| *v *= c);
            assert!((nmse(&hc, &ec).unwrap() - base).abs() < 1e-12);
        }
    }

    #[test]
    fn awgn_basics() {
        let x = rows(&[&[1.0, -1.0]]);
        let mut rng = stream(0, domain::NOISE, 0);
        assert_eq!(add_awgn(&x, None, &mut rng).unwrap(), x);
        assert_eq!(add_awgn(&Matrix::zeros(2, 2), Some(10.0), &mut rng), Err(Error::ZeroReference));
    }

    #[test]
    fn adam_zero_gradient_keeps_params() {
        let mut p = [1.5, -2.0];
        let (mut m, mut v) = ([0.0; 2], [0.0; 2]);
        adam_update(&mut p, &[0.0, 0.0], &mut m, &mut v, 0.1, &AdamConfig::default(), 1);
        assert_eq!(p, [1.5, -2.0]);
    }

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        let mut p = [0.0];
        let (mut m, mut v) = ([0.0], [0.0]);
        let cfg = AdamConfig::default();
        adam_update(&mut p, &[1.0], &mut m, &mut v, 0.01, &cfg, 1);
        assert!((p[0] + 0.01 / (1.0 + cfg.eps)).abs() < 1e-15);
    }

    #[test]
    fn adam_three_steps_on_square() {
        // f(w) = w², g = 2w, lr = 0.1, hand-unrolled bias-corrected updates.
        let (b1, b2, eps, lr) = (0.9f64, 0.999f64, 1e-8, 0.1);
        let mut w_ref = 1.0f64;
        let (mut m_ref, mut v_ref) = (0.0f64, 0.0f64);
        let mut trace = vec![];
        for t in 1..=3 {
            let g = 2.0 * w_ref;
            m_ref = b1 * m_ref + (1.0 - b1) * g;
            v_ref = b2 * v_ref + (1.0 - b2) * g * g;
            let mh = m_ref / (1.0 - b1.powi(t));
            let vh = v_ref / (1.0 - b2.powi(t));
            w_ref -= lr * mh / (vh.sqrt() + eps);
            trace.push(w_ref);
        }
        // Step 1 moves by lr exactly (up to eps); later steps by slightly less.
        assert!((trace[0] - 0.9).abs() < 1e-9);
        let mut p = [1.0];
        let (mut m, mut v) = ([0.0], [0.0]);
        let cfg = AdamConfig::default();
        for (t, want) in (1..=3).zip(trace) {
            let g = 2.0 * p[0];
            adam_update(&mut p, &[g], &mut m, &mut v, lr, &cfg, t);
            assert!((p[0] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn adam_step_respects_mask_and_rejects_nan() {
        let cfg = LoraConfig::with_measurements(2, 2, 4, 2, 3).unwrap();
        let mut params = LoraParams::init(&cfg, &mut stream(0, 0, 0)).unwrap();
        let before = params.clone();
        let mut grads = LoraGrads::zeros_like(&params);
        grads.a.fill(1.0);
        grads.scale = 1.0;
        grads.zero_point = 1.0;
        let mut state = AdamState::new(&params);
        let mask = UpdateMask {
            network: false,
            scale: true,
            zero_point: false,
        };
        adam_step(&mut params, &grads, &mut state, 1e-3, &AdamConfig::default(), mask).unwrap();
        assert_eq!(params.a, before.a);
        assert_eq!(params.quant.zero_point, before.quant.zero_point);
        assert!(params.quant.scale < before.quant.scale);
        grads.w1[(0, 0)] = f64::NAN;
        assert_eq!(
            adam_step(&mut params, &grads, &mut state, 1e-3, &AdamConfig::default(), UpdateMask::ALL),
            Err(Error::NonFinite("gradient"))
        );
    }

    #[test]
    fn config_validation() {
        TrainConfig::default().validate().unwrap();
        assert!(TrainConfig { epochs: 0, ..TrainConfig::default() }.validate().is_err());
        assert!(TrainConfig { batch_size: 0, ..TrainConfig::default() }.validate().is_err());
        assert!(TrainConfig { learning_rate: 0.0, ..TrainConfig::default() }.validate().is_err());
        let frozen_qat = TrainConfig {
            freeze_network: true,
            quant: Some(QuantConfig::new(4, QuantMode::Qat).unwrap()),
            ..TrainConfig::default()
        };
        assert!(frozen_qat.validate().is_err());
    }

    #[test]
    fn trainer_rejects_empty_or_mismatched_data() {
        let cfg = LoraConfig::with_measurements(2, 2, 4, 2, 3).unwrap();
        let empty = Matrix::zeros(0, 8);
        assert!(Trainer::new(&empty, cfg.clone(), TrainConfig::default()).is_err());
        let wrong = Matrix::zeros(3, 7);
        assert!(Trainer::new(&wrong, cfg, TrainConfig::default()).is_err());
    }
}
