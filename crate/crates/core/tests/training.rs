use csifeed_core::channel::{generate_samples, ScenarioConfig};
use csifeed_core::linalg::Matrix;
use csifeed_core::lora::{LoraConfig, LoraParams};
use csifeed_core::quant::{QuantConfig, QuantMode};
use csifeed_core::rng::stream;
use csifeed_core::train::{add_awgn, to_db, train, TrainConfig, Trainer};

fn toy_data(count: usize, seed: u64) -> Matrix {
    let cfg = ScenarioConfig { rng_seed: seed, ..ScenarioConfig::default() };
    let rows: Vec<Vec<f64>> = generate_samples(&cfg, 0, count).unwrap().into_iter().map(|v| v.into_vec()).collect();
    Matrix::from_rows(&rows).unwrap()
}

fn toy_lora(blocks: usize) -> LoraConfig {
    LoraConfig::with_measurements(8, 8, 32, blocks, 64).unwrap()
}

fn no_clock() -> impl FnMut() -> f64 {
    || 0.0
}

#[test]
fn awgn_hits_requested_snr() {
    let mut rng = stream(1, 0, 0);
    let x = Matrix::from_fn(1000, 1000, |i, j| ((i * 31 + j * 17) % 13) as f64 - 6.0);
    let noisy = add_awgn(&x, Some(10.0), &mut rng).unwrap();
    let signal: f64 = x.as_slice().iter().map(|v| v * v).sum();
    let noise: f64 = noisy.as_slice().iter().zip(x.as_slice()).map(|(a, b)| (a - b) * (a - b)).sum();
    let snr = to_db(signal / noise);
    assert!((snr - 10.0).abs() < 0.1, "{snr}");
}

#[test]
fn toy_run_reduces_training_loss() {
    let data = toy_data(256, 5);
    let cfg = TrainConfig { epochs: 30, batch_size: 32, seed: 3, ..TrainConfig::default() };
    let out = train(&data, &toy_lora(3), &cfg, &mut no_clock()).unwrap();
    let first = out.history.first().unwrap().loss;
    let last = out.history.last().unwrap().loss;
    assert!(last < first, "{first} -> {last}");
    assert_eq!(out.history.len(), 30);
    assert!(out.history.iter().enumerate().all(|(i, r)| r.epoch == i + 1));
}

#[test]
fn same_seed_gives_bit_identical_runs() {
    let data = toy_data(64, 6);
    let cfg = TrainConfig {
        epochs: 3,
        batch_size: 16,
        seed: 11,
        snr_db: Some(15.0),
        quant: Some(QuantConfig::new(4, QuantMode::Lszq).unwrap()),
        ..TrainConfig::default()
    };
    let a = train(&data, &toy_lora(2), &cfg, &mut no_clock()).unwrap();
    let b = train(&data, &toy_lora(2), &cfg, &mut no_clock()).unwrap();
    assert_eq!(a.params, b.params);
    assert_eq!(a.history, b.history);
    let c = train(&data, &toy_lora(2), &TrainConfig { seed: 12, ..cfg }, &mut no_clock()).unwrap();
    assert_ne!(a.params, c.params);
}

fn pretrained(data: &Matrix) -> LoraParams {
    let cfg = TrainConfig { epochs: 2, batch_size: 16, seed: 1, ..TrainConfig::default() };
    train(data, &toy_lora(2), &cfg, &mut no_clock()).unwrap().params
}

#[test]
fn frozen_network_updates_only_the_quantizer() {
    let data = toy_data(64, 7);
    let start = pretrained(&data);
    let cfg = TrainConfig {
        epochs: 2,
        batch_size: 16,
        quant: Some(QuantConfig::new(4, QuantMode::Lszq).unwrap()),
        freeze_network: true,
        ..TrainConfig::default()
    };
    let mut trainer = Trainer::with_params(&data, toy_lora(2), cfg, start.clone(), false).unwrap();
    trainer.run_epoch().unwrap();
    let fitted = trainer.params().quant;
    trainer.run_epoch().unwrap();
    let end = trainer.params();
    assert_eq!(end.a, start.a);
    assert_eq!(end.w1, start.w1);
    assert_eq!(end.w2, start.w2);
    assert_eq!(end.alpha, start.alpha);
    assert_ne!(end.quant.scale, fitted.scale);
    assert_ne!(end.quant.zero_point, fitted.zero_point);
}

#[test]
fn qat_keeps_scale_and_zero_point_and_lsq_keeps_zero_point() {
    let data = toy_data(64, 8);
    let start = pretrained(&data);
    for mode in [QuantMode::Qat, QuantMode::Lsq] {
        let cfg = TrainConfig {
            epochs: 3,
            batch_size: 16,
            quant: Some(QuantConfig::new(4, mode).unwrap()),
            ..TrainConfig::default()
        };
        let mut trainer = Trainer::with_params(&data, toy_lora(2), cfg, start.clone(), false).unwrap();
        trainer.run_epoch().unwrap();
        let fitted = trainer.params().quant;
        trainer.run_epoch().unwrap();
        trainer.run_epoch().unwrap();
        let end = trainer.params().quant;
        assert_eq!(end.zero_point, fitted.zero_point, "{mode:?}");
        assert_eq!(end.scale == fitted.scale, mode == QuantMode::Qat, "{mode:?}");
        assert_ne!(trainer.params().a, start.a);
    }
}

#[test]
fn stored_quantizer_is_kept_when_marked_ready() {
    let data = toy_data(32, 9);
    let mut start = pretrained(&data);
    start.quant.scale = 0.123;
    start.quant.zero_point = -0.5;
    let cfg = TrainConfig {
        epochs: 1,
        batch_size: 16,
        quant: Some(QuantConfig::new(8, QuantMode::Qat).unwrap()),
        ..TrainConfig::default()
    };
    let mut trainer = Trainer::with_params(&data, toy_lora(2), cfg, start.clone(), true).unwrap();
    trainer.run_epoch().unwrap();
    assert_eq!(trainer.params().quant, start.quant);
}
