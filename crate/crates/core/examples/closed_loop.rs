//! Flies the default circle in closed loop on the filter estimate, with and
//! without the outlier gates, and with and without bias compensation.

use uwb_calib::nn::{train, TrainConfig};
use uwb_calib::sim::{generate_dataset, run_closed_loop, DatasetConfig, RunConfig};
use uwb_calib::RangingMode;

fn main() -> uwb_calib::Result<()> {
    let mode = RangingMode::Tdoa;
    let data = generate_dataset(&DatasetConfig {
        flights: 8,
        ..DatasetConfig::new(mode)
    })?;
    let (model, _) = train(
        &data.samples,
        &TrainConfig {
            epochs: 40,
            ..TrainConfig::default()
        },
    )?;

    let mut baseline = RunConfig::new(mode);
    baseline.controller.truth_feedback = true;
    let ideal = run_closed_loop(&baseline)?;
    println!(
        "controller on ground truth: tracking RMSE {:.4} m\n",
        ideal.summary.tracking_rmse
    );

    println!(
        "{:>6} {:>5} {:>8} {:>10} {:>10} {:>12}",
        "gates", "nn", "seed", "est RMSE", "trk RMSE", "worst err m"
    );
    for (rejection, compensation) in [(false, false), (true, false), (true, true)] {
        for seed in 0..3 {
            let cfg = RunConfig {
                model: Some(model.clone()),
                compensation,
                rejection,
                seed,
                ..RunConfig::new(mode)
            };
            let log = run_closed_loop(&cfg)?;
            let worst = log
                .records
                .iter()
                .map(|r| (r.truth() - r.estimate()).norm())
                .fold(0.0, f64::max);
            println!(
                "{:>6} {:>5} {seed:>8} {:>10.4} {:>10.4} {worst:>12.3}{}",
                on_off(rejection),
                on_off(compensation),
                log.summary.estimation_rmse,
                log.summary.tracking_rmse,
                if log.diverged() { "  diverged" } else { "" }
            );
        }
    }
    Ok(())
}

fn on_off(b: bool) -> &'static str {
    if b {
        "on"
    } else {
        "off"
    }
}
