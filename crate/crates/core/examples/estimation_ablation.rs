//! Open-loop comparison of raw fusion, gating alone, and gating with bias
//! compensation, over several seeds and both circles.
//!
//! ```text
//! cargo run --release --example estimation_ablation -- [twr-weights.json tdoa-weights.json]
//! ```
//! Without weight files a small model is trained per mode first.

use uwb_calib::nn::{load_weights_for, train, TrainConfig};
use uwb_calib::sim::{generate_dataset, run_estimation, DatasetConfig, RunConfig, TrajectoryKind, TrajectorySpec};
use uwb_calib::{MlpModel, RangingMode};

const SEEDS: u64 = 5;

fn quick_model(mode: RangingMode) -> uwb_calib::Result<MlpModel> {
    let data = generate_dataset(&DatasetConfig {
        flights: 8,
        ..DatasetConfig::new(mode)
    })?;
    Ok(train(
        &data.samples,
        &TrainConfig {
            epochs: 40,
            ..TrainConfig::default()
        },
    )?
    .0)
}

fn mean_rmse(base: &RunConfig) -> uwb_calib::Result<f64> {
    let mut sum = 0.0;
    for seed in 0..SEEDS {
        sum += run_estimation(&RunConfig { seed, ..base.clone() })?
            .summary
            .estimation_rmse;
    }
    Ok(sum / SEEDS as f64)
}

fn main() -> uwb_calib::Result<()> {
    let paths: Vec<String> = std::env::args().skip(1).collect();
    println!(
        "{:<5} {:<17} {:>8} {:>10} {:>10} {:>10}",
        "mode", "trajectory", "raw", "gated", "gated+nn", "reduction"
    );
    for (k, mode) in [RangingMode::Twr, RangingMode::Tdoa].into_iter().enumerate() {
        let model = match paths.get(k) {
            Some(p) => load_weights_for(p, mode)?,
            None => quick_model(mode)?,
        };
        for kind in [TrajectoryKind::CircleXy, TrajectoryKind::CircleVaryingZ] {
            let base = RunConfig {
                trajectory: TrajectorySpec::circle(kind),
                model: Some(model.clone()),
                ..RunConfig::new(mode)
            };
            let raw = mean_rmse(&RunConfig {
                rejection: false,
                ..base.clone()
            })?;
            let gated = mean_rmse(&base)?;
            let full = mean_rmse(&RunConfig {
                compensation: true,
                ..base
            })?;
            println!(
                "{:<5} {:<17} {raw:>8.4} {gated:>10.4} {full:>10.4} {:>9.1}%",
                mode.to_string(),
                format!("{kind:?}"),
                100.0 * (gated - full) / gated
            );
        }
    }
    Ok(())
}
