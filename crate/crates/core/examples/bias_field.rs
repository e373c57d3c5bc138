//! Prints the synthetic range bias seen by one anchor as the tag yaws in
//! place, then the TDoA bias along the default circle.

use std::f64::consts::PI;

use nalgebra::Vector3;
use uwb_calib::measurement::feature_for;
use uwb_calib::sim::{Trajectory, TrajectorySpec};
use uwb_calib::{AnchorConstellation, BiasFieldParams, RangingMode, TagState};

fn main() -> uwb_calib::Result<()> {
    let arena = AnchorConstellation::default_arena();
    let field = BiasFieldParams::default();
    let anchor = arena.anchors()[0].id;

    println!("TWR bias to anchor {anchor} for a tag hovering at the arena center");
    println!("{:>8} {:>9}", "yaw deg", "bias m");
    for step in 0..12 {
        let yaw = -PI + step as f64 * PI / 6.0;
        let tag = TagState::at(arena.bounds().center()).with_attitude(0.0, 0.0, yaw);
        let x = feature_for(&arena, &tag, RangingMode::Twr, anchor, None)?;
        println!("{:>8.0} {:>9.4}", yaw.to_degrees(), field.eval(&x)?);
    }

    let traj = Trajectory::new(TrajectorySpec::default(), arena.bounds())?;
    let (i, j) = (arena.anchors()[0].id, arena.anchors()[1].id);
    println!("\nTDoA bias for pair ({i}, {j}) around the default circle");
    println!("{:>6} {:>7} {:>7} {:>9}", "t s", "x", "y", "bias m");
    let period = traj.period().unwrap_or(traj.duration());
    for step in 0..=8 {
        let t = period * step as f64 / 8.0;
        let tag = traj.pose(t.min(traj.duration()))?;
        let x = feature_for(&arena, &tag, RangingMode::Tdoa, i, Some(j))?;
        let p: Vector3<f64> = tag.position;
        println!("{t:>6.1} {:>7.2} {:>7.2} {:>9.4}", p.x, p.y, field.eval(&x)?);
    }
    println!(
        "\nworst-case TWR bias in this arena: {:.3} m",
        field.max_bias(arena.bounds().diagonal())
    );
    Ok(())
}
