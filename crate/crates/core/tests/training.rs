use hakan::data::{split, PreparedData, Scaler, SplitKind, SplitSpec};
use hakan::model::{HaKanModel, ModelConfig};
use hakan::train::{evaluate, train, TrainSpec};
use hakan::Tensor;

fn sine_data(rows: usize, l: usize, t: usize) -> PreparedData {
    let values = Tensor::from_fn(&[rows, 2], |i| {
        let (r, c) = (i / 2, i % 2);
        let phase = c as f64 * 0.7;
        (2.0 * std::f64::consts::PI * r as f64 / 8.0 + phase).sin() * (1.0 + c as f64)
    });
    let spec = SplitSpec { kind: SplitKind::Ratio, context: true };
    let splits = split(rows, spec, l, t).unwrap();
    PreparedData::from_values("sine", &values, splits, Scaler::identity(2), l, t)
}

fn small_config() -> ModelConfig {
    ModelConfig {
        lookback: 16,
        horizon: 4,
        channels: 2,
        patch_len: 4,
        stride: 2,
        d_model: 8,
        blocks: 1,
        bottleneck: 8,
        ..ModelConfig::default()
    }
}

#[test]
fn converges_on_periodic_series() {
    let data = sine_data(300, 16, 4);
    let mut model = HaKanModel::new(&small_config(), 1).unwrap();
    let spec = TrainSpec {
        max_epochs: 50,
        patience: 50,
        lr: 1e-2,
        batch_size: 16,
        seed: 1,
        clip_norm: None,
    };
    let out = train(&mut model, &data, &spec).unwrap();
    let best_train = out.train_loss.iter().cloned().fold(f64::INFINITY, f64::min);
    assert!(best_train < 1e-3, "train loss history {:?}", out.train_loss);
    assert!(out.record.mse < 1e-3);
}

#[test]
fn fixed_seed_is_bitwise_reproducible() {
    let data = sine_data(200, 16, 4);
    let spec = TrainSpec {
        max_epochs: 3,
        patience: 3,
        lr: 1e-3,
        batch_size: 8,
        seed: 2021,
        clip_norm: Some(5.0),
    };
    let run = || {
        let mut model = HaKanModel::new(&small_config(), 2021).unwrap();
        let out = train(&mut model, &data, &spec).unwrap();
        (model, out)
    };
    let (m1, o1) = run();
    let (m2, o2) = run();
    assert_eq!(o1.record.mse.to_bits(), o2.record.mse.to_bits());
    assert_eq!(o1.record.mae.to_bits(), o2.record.mae.to_bits());
    assert_eq!(o1.record.epochs, o2.record.epochs);
    assert_eq!(m1, m2);
}

#[test]
fn returns_best_validation_snapshot() {
    let data = sine_data(200, 16, 4);
    let spec = TrainSpec {
        max_epochs: 6,
        patience: 2,
        lr: 5e-2,
        batch_size: 8,
        seed: 3,
        clip_norm: None,
    };
    let mut model = HaKanModel::new(&small_config(), 3).unwrap();
    let out = train(&mut model, &data, &spec).unwrap();
    let best = out.val_loss.iter().cloned().fold(f64::INFINITY, f64::min);
    let (val, _) = evaluate(&model, &data, &data.splits.val).unwrap();
    assert_eq!(val.to_bits(), best.to_bits());
    assert!(out.val_loss.iter().all(|&v| val <= v));
    assert_eq!(out.val_loss[out.best_epoch - 1].to_bits(), best.to_bits());
}

#[test]
fn rejects_bad_specs() {
    let data = sine_data(200, 16, 4);
    let mut model = HaKanModel::new(&small_config(), 0).unwrap();
    let bad = TrainSpec { patience: 200, ..TrainSpec::default() };
    assert!(train(&mut model, &data, &bad).is_err());
    let bad = TrainSpec { lr: 0.0, ..TrainSpec::default() };
    assert!(train(&mut model, &data, &bad).is_err());
}
