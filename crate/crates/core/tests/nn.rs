use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use uwb_calib::nn::{
    default_dims, load_weights, load_weights_for, loss_and_gradient, save_weights, train, Mlp, MlpModel, Normalizer,
    TrainConfig, TrainingSample,
};
use uwb_calib::sim::{generate_dataset, DatasetConfig};
use uwb_calib::{Error, FeatureVector, RangingMode};

fn random_sample(rng: &mut ChaCha8Rng, mode: RangingMode) -> TrainingSample {
    let values = (0..mode.feature_len()).map(|_| rng.random_range(-3.0..3.0)).collect();
    TrainingSample {
        feature: FeatureVector::new(mode, values).unwrap(),
        target_bias: rng.random_range(-0.5..0.5),
    }
}

fn random_model(rng: &mut ChaCha8Rng, mode: RangingMode, hidden: &[usize]) -> MlpModel {
    let d = mode.feature_len();
    let mut dims = vec![d];
    dims.extend_from_slice(hidden);
    dims.push(1);
    let mut net = Mlp::zeros(&dims).unwrap();
    for p in net.params_mut() {
        *p = rng.random_range(-1.0..1.0);
    }
    let normalizer = Normalizer {
        mean: (0..d).map(|_| rng.random_range(-1.0..1.0)).collect(),
        std: (0..d).map(|_| rng.random_range(0.5..2.0)).collect(),
    };
    MlpModel::new(mode, normalizer, net).unwrap()
}

#[test]
fn gradient_matches_central_differences_on_small_nets() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for trial in 0..6 {
        let mode = if trial % 2 == 0 {
            RangingMode::Twr
        } else {
            RangingMode::Tdoa
        };
        let mut model = random_model(&mut rng, mode, &[7, 5]);
        let batch: Vec<_> = (0..8).map(|_| random_sample(&mut rng, mode)).collect();
        let (_, grad) = loss_and_gradient(&model, &batch).unwrap();
        let h = 1e-5;
        for (k, &g) in grad.iter().enumerate() {
            let orig = model.net().params()[k];
            model.net_mut().params_mut()[k] = orig + h;
            let (lp, _) = loss_and_gradient(&model, &batch).unwrap();
            model.net_mut().params_mut()[k] = orig - h;
            let (lm, _) = loss_and_gradient(&model, &batch).unwrap();
            model.net_mut().params_mut()[k] = orig;
            let fd = (lp - lm) / (2.0 * h);
            let tol = (1e-5 * fd.abs().max(g.abs())).max(1e-8);
            assert!((fd - g).abs() <= tol, "trial {trial} param {k}: fd {fd} vs {}", g);
        }
    }
}

#[test]
fn constant_bias_is_learned_almost_exactly() {
    let data = generate_dataset(&DatasetConfig {
        flights: 4,
        flight_duration: 60.0,
        ..DatasetConfig::new(RangingMode::Twr)
    })
    .unwrap();
    let samples: Vec<_> = data
        .samples
        .into_iter()
        .map(|s| TrainingSample { target_bias: 0.2, ..s })
        .collect();
    let cfg = TrainConfig {
        epochs: 20,
        ..TrainConfig::default()
    };
    let (model, history) = train(&samples, &cfg).unwrap();
    let val_rmse = history.best().unwrap().val_loss.sqrt();
    assert!(val_rmse <= 0.005, "validation RMSE {val_rmse}");
    let pred = model.forward(&samples[0].feature).unwrap();
    assert!((pred - 0.2).abs() < 0.02);
}

#[test]
fn training_is_deterministic_per_seed() {
    let data = generate_dataset(&DatasetConfig {
        flights: 2,
        flight_duration: 20.0,
        ..DatasetConfig::new(RangingMode::Tdoa)
    })
    .unwrap();
    let cfg = TrainConfig {
        epochs: 3,
        ..TrainConfig::default()
    };
    let (a, ha) = train(&data.samples, &cfg).unwrap();
    let (b, hb) = train(&data.samples, &cfg).unwrap();
    assert_eq!(a, b);
    assert_eq!(ha.to_csv(), hb.to_csv());

    let (c, _) = train(&data.samples, &TrainConfig { seed: 1, ..cfg }).unwrap();
    assert_ne!(a, c);
}

#[test]
fn history_tracks_every_epoch_and_keeps_the_best() {
    let data = generate_dataset(&DatasetConfig {
        flights: 2,
        flight_duration: 20.0,
        ..DatasetConfig::new(RangingMode::Twr)
    })
    .unwrap();
    let (_, h) = train(
        &data.samples,
        &TrainConfig {
            epochs: 5,
            ..TrainConfig::default()
        },
    )
    .unwrap();
    assert_eq!(h.epochs.len(), 5);
    let min = h.epochs.iter().map(|e| e.val_loss).fold(f64::INFINITY, f64::min);
    assert_eq!(h.best().unwrap().val_loss, min);
    assert!(h.to_csv().starts_with("epoch,train_loss,val_loss\n"));
}

#[test]
fn weight_file_round_trip_is_bitwise() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let dims = default_dims(RangingMode::Tdoa);
    let net = Mlp::he_uniform(&dims, &mut rng).unwrap();
    let normalizer = Normalizer {
        mean: (0..9).map(|_| rng.random_range(-4.0..4.0)).collect(),
        std: (0..9).map(|_| rng.random_range(0.1..3.0)).collect(),
    };
    let model = MlpModel::new(RangingMode::Tdoa, normalizer, net).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("w.json");
    save_weights(&model, &path).unwrap();
    let back = load_weights(&path).unwrap();
    assert!(back
        .net()
        .params()
        .iter()
        .zip(model.net().params())
        .all(|(a, b)| a.to_bits() == b.to_bits()));
    assert_eq!(back, model);

    assert!(matches!(
        load_weights_for(&path, RangingMode::Twr),
        Err(Error::ModeMismatch { .. })
    ));
    assert!(matches!(
        load_weights(dir.path().join("missing.json")),
        Err(Error::Io { .. })
    ));
}
