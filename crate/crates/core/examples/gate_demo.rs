//! Feeds a handful of hand-made innovations through the two gates, then
//! counts what the full pipeline rejects on a simulated flight.

use nalgebra::Vector3;
use uwb_calib::estimator::{gate_chi2, gate_dynamics, max_travel, EkfState, GateConfig, GateReason};
use uwb_calib::sim::{run_estimation, RunConfig};
use uwb_calib::RangingMode;

fn main() -> uwb_calib::Result<()> {
    let gate = GateConfig::default();
    let state = EkfState::new(Vector3::new(3.0, 4.0, 1.5), Vector3::new(0.4, 0.0, 0.0), 0.05, 0.1, 0.0);
    let dt = 0.15;
    println!(
        "dynamics bound over {dt} s: {:.3} m (TWR), {:.3} m (TDoA)",
        max_travel(0.4, dt, gate.a_max),
        2.0 * max_travel(0.4, dt, gate.a_max)
    );
    let s = 0.004;
    println!("{:>10} {:>9} {:>9}", "innovation", "dynamics", "chi2");
    for y in [0.01, 0.08, 0.15, 0.3] {
        let dyn_ok = gate_dynamics(y, &state, dt, &gate, RangingMode::Twr);
        let chi_ok = gate_chi2(y, s, &gate)?;
        println!("{y:>10.2} {:>9} {:>9}", pass(dyn_ok), pass(chi_ok));
    }

    for mode in [RangingMode::Twr, RangingMode::Tdoa] {
        let log = run_estimation(&RunConfig::new(mode))?;
        let count = |outlier: bool, reason: GateReason| {
            log.records
                .iter()
                .filter(|r| r.outlier == outlier && r.reason == reason)
                .count()
        };
        println!("\n{mode}: {} measurements", log.records.len());
        println!("{:>10} {:>9} {:>9} {:>9}", "", "accepted", "dynamics", "chi2");
        for (label, flag) in [("spikes", true), ("clean", false)] {
            println!(
                "{label:>10} {:>9} {:>9} {:>9}",
                count(flag, GateReason::Accepted),
                count(flag, GateReason::RejectedDynamics),
                count(flag, GateReason::RejectedChi2)
            );
        }
    }
    Ok(())
}

fn pass(ok: bool) -> &'static str {
    if ok {
        "accept"
    } else {
        "reject"
    }
}
