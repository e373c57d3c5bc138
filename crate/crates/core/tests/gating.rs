mod common;

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use uwb_calib::estimator::{gate_chi2, gate_dynamics, EkfState, GateConfig, CHI2_95_1DOF};
use uwb_calib::RangingMode;

#[test]
fn oracle_reproduces_known_quantiles() {
    // Two degrees of freedom has the closed form -2 ln(1 - p).
    let q = common::chi2_quantile(0.95, 2);
    assert!((q - (-2.0 * 0.05f64.ln())).abs() < 1e-9, "{q}");
    assert!((common::chi2_cdf(1.0, 1) - 0.682_689_492_137_085_9).abs() < 1e-12);
}

#[test]
fn threshold_is_the_95th_percentile_of_one_dof() {
    let q = common::chi2_quantile(0.95, 1);
    assert!((q - CHI2_95_1DOF).abs() < 1e-4, "oracle {q} vs {CHI2_95_1DOF}");
    assert_eq!(GateConfig::default().chi2_threshold, CHI2_95_1DOF);
}

#[test]
fn null_innovations_pass_about_95_percent() {
    let cfg = GateConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for s in [1e-4, 0.01, 2.5] {
        let dist = Normal::new(0.0, f64::sqrt(s)).unwrap();
        let n = 100_000;
        let accepted = (0..n)
            .filter(|_| gate_chi2(dist.sample(&mut rng), s, &cfg).unwrap())
            .count();
        let rate = accepted as f64 / n as f64;
        assert!((0.94..=0.96).contains(&rate), "S = {s}: rate {rate}");
    }
}

#[test]
fn non_positive_variance_is_an_error() {
    let cfg = GateConfig::default();
    assert!(gate_chi2(0.1, 0.0, &cfg).is_err());
    assert!(gate_chi2(0.1, -1.0, &cfg).is_err());
}

#[test]
fn dynamics_bound_grows_with_horizon_and_doubles_for_tdoa() {
    let cfg = GateConfig::default();
    let state = EkfState::new(Vector3::zeros(), Vector3::new(1.0, 0.0, 0.0), 0.1, 0.1, 0.0);
    let dt = 0.005;
    assert!(gate_dynamics(0.004, &state, dt, &cfg, RangingMode::Twr));
    assert!(!gate_dynamics(0.006, &state, dt, &cfg, RangingMode::Twr));
    assert!(gate_dynamics(0.006, &state, dt, &cfg, RangingMode::Tdoa));
    assert!(gate_dynamics(0.3, &state, 0.2, &cfg, RangingMode::Twr));
    assert!(gate_dynamics(-0.3, &state, 0.2, &cfg, RangingMode::Twr));
}
