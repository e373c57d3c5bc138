//! Generates a training set, fits the bias network, and writes the weights.
//!
//! ```text
//! cargo run --release --example train_estimator -- tdoa 60 /tmp/tdoa.json
//! ```
//! Arguments: mode (twr|tdoa), epochs, output path. A reduced dataset keeps
//! the run short; the `uwb-calib` binary trains on the full default set.

use uwb_calib::nn::{save_weights, train, TrainConfig};
use uwb_calib::sim::{generate_dataset, DatasetConfig};
use uwb_calib::RangingMode;

fn main() -> uwb_calib::Result<()> {
    let mut args = std::env::args().skip(1);
    let mode = match args.next().as_deref() {
        Some("tdoa") => RangingMode::Tdoa,
        _ => RangingMode::Twr,
    };
    let epochs = args.next().and_then(|s| s.parse().ok()).unwrap_or(40);
    let out = args.next().unwrap_or_else(|| format!("bias_{mode}.json"));

    let data_cfg = DatasetConfig {
        flights: 8,
        ..DatasetConfig::new(mode)
    };
    let data = generate_dataset(&data_cfg)?;
    println!("{} {mode} samples from {} flights", data.len(), data_cfg.flights);

    let (model, history) = train(
        &data.samples,
        &TrainConfig {
            epochs,
            ..TrainConfig::default()
        },
    )?;
    for e in history
        .epochs
        .iter()
        .filter(|e| e.epoch % 10 == 0 || e.epoch + 1 == epochs)
    {
        println!("epoch {:>4}  train {:.5}  val {:.5}", e.epoch, e.train_loss, e.val_loss);
    }
    let best = history.best().expect("at least one epoch");
    println!(
        "kept epoch {} (validation RMSE {:.4} m)",
        best.epoch,
        best.val_loss.sqrt()
    );

    let truth: Vec<f64> = data
        .samples
        .iter()
        .map(|s| data_cfg.bias.eval(&s.feature))
        .collect::<Result<_, _>>()?;
    let mean = truth.iter().sum::<f64>() / truth.len() as f64;
    let spread = (truth.iter().map(|b| (b - mean).powi(2)).sum::<f64>() / truth.len() as f64).sqrt();
    let mut err = 0.0;
    for (s, b) in data.samples.iter().zip(&truth) {
        err += (model.forward(&s.feature)? - b).powi(2);
    }
    let err = (err / truth.len() as f64).sqrt();
    println!("error against the true field {err:.4} m, field spread {spread:.4} m");

    save_weights(&model, &out)?;
    println!("wrote {out}");
    Ok(())
}
