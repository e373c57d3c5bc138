//! Builds a run from a TOML experiment description.
//!
//! ```text
//! cargo run --example experiment_config -- my_experiment.toml
//! ```
//! With no argument an inline document is used and the fully expanded
//! configuration is printed, which makes a handy starting template.

use uwb_calib::config::ExperimentConfig;
use uwb_calib::sim::{run_estimation, RunConfig};

const INLINE: &str = r#"
seed = 21

[trajectory]
kind = "circle_varying_z"
duration = 30.0

[noise]
sigma_tdoa = 0.05
outlier_rate = 0.1

[run]
mode = "tdoa"
seeds = 3
"#;

fn main() -> uwb_calib::Result<()> {
    let cfg = match std::env::args().nth(1) {
        Some(path) => ExperimentConfig::load(path)?,
        None => {
            let cfg = ExperimentConfig::from_toml_str(INLINE)?;
            cfg.validate()?;
            println!("{}", cfg.to_toml_string());
            cfg
        }
    };
    let base = cfg.run_config(cfg.run.mode)?;
    for seed in cfg.seed..cfg.seed + cfg.run.seeds {
        let log = run_estimation(&RunConfig { seed, ..base.clone() })?;
        let s = &log.summary;
        println!(
            "seed {seed}: RMSE {:.4} m, {} accepted, {} dynamics / {} chi2 rejections",
            s.estimation_rmse, s.accepted, s.rejected_dynamics, s.rejected_chi2
        );
    }
    Ok(())
}
