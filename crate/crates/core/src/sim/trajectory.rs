use std::f64::consts::PI;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{wrap_angle, Bounds, TagState};

const GRAVITY: f64 = 9.81;
/// Roll/pitch proxies saturate here.
pub const MAX_TILT: f64 = 15.0 * PI / 180.0;
/// Required clearance between any trajectory point and the arena walls.
pub const ARENA_MARGIN: f64 = 0.2;

/// Position, velocity, and acceleration.
type Kinematics = (Vector3<f64>, Vector3<f64>, Vector3<f64>);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrajectoryKind {
    CircleXy,
    CircleVaryingZ,
    GenericWaypoints,
}

/// Declarative description of a reference path.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrajectorySpec {
    pub kind: TrajectoryKind,
    pub center: [f64; 3],
    pub radius: f64,
    /// Peak-to-center altitude swing of the varying-z circle, meters.
    pub z_amplitude: f64,
    /// Altitude oscillations per revolution of the varying-z circle.
    pub z_cycles: f64,
    /// Tangential speed on circles, peak segment speed for waypoints, m/s.
    pub speed: f64,
    pub duration: f64,
    /// Seed for the waypoint sequence.
    pub seed: u64,
}

impl Default for TrajectorySpec {
    fn default() -> Self {
        Self {
            kind: TrajectoryKind::CircleXy,
            center: [3.5, 4.0, 1.5],
            radius: 2.0,
            z_amplitude: 0.8,
            z_cycles: 2.0,
            speed: 0.375,
            duration: 60.0,
            seed: 0,
        }
    }
}

impl TrajectorySpec {
    pub fn circle(kind: TrajectoryKind) -> Self {
        Self {
            kind,
            ..Self::default()
        }
    }

    pub fn generic(seed: u64, duration: f64, speed: f64) -> Self {
        Self {
            kind: TrajectoryKind::GenericWaypoints,
            speed,
            duration,
            seed,
            ..Self::default()
        }
    }
}

/// Straight rest-to-rest segment with a quintic time law.
#[derive(Clone, Debug, PartialEq)]
struct Segment {
    start_time: f64,
    duration: f64,
    from: Vector3<f64>,
    to: Vector3<f64>,
    yaw: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    spec: TrajectorySpec,
    segments: Vec<Segment>,
}

impl Trajectory {
    pub fn new(spec: TrajectorySpec, bounds: &Bounds) -> Result<Self> {
        if !(spec.speed.is_finite() && spec.speed > 0.0) {
            return Err(Error::InvalidConfig("trajectory: speed must be > 0".into()));
        }
        if !(spec.duration.is_finite() && spec.duration > 0.0) {
            return Err(Error::InvalidConfig("trajectory: duration must be > 0".into()));
        }
        let segments = match spec.kind {
            TrajectoryKind::GenericWaypoints => waypoint_segments(&spec, bounds)?,
            TrajectoryKind::CircleXy | TrajectoryKind::CircleVaryingZ => {
                if !(spec.radius > 0.0) {
                    return Err(Error::InvalidConfig("trajectory: radius must be > 0".into()));
                }
                let c = Vector3::from(spec.center);
                let dz = if spec.kind == TrajectoryKind::CircleVaryingZ {
                    spec.z_amplitude.abs()
                } else {
                    0.0
                };
                let lo = c - Vector3::new(spec.radius, spec.radius, dz);
                let hi = c + Vector3::new(spec.radius, spec.radius, dz);
                if !bounds.contains(&lo, ARENA_MARGIN) || !bounds.contains(&hi, ARENA_MARGIN) {
                    return Err(Error::InvalidConfig(format!(
                        "trajectory leaves the arena (margin {ARENA_MARGIN} m)"
                    )));
                }
                Vec::new()
            }
        };
        Ok(Self { spec, segments })
    }

    pub fn spec(&self) -> &TrajectorySpec {
        &self.spec
    }

    pub fn duration(&self) -> f64 {
        self.spec.duration
    }

    /// Time for one revolution on circular paths.
    pub fn period(&self) -> Option<f64> {
        match self.spec.kind {
            TrajectoryKind::GenericWaypoints => None,
            _ => Some(2.0 * PI * self.spec.radius / self.spec.speed),
        }
    }

    /// Position, velocity, and acceleration at `t`.
    pub fn kinematics(&self, t: f64) -> Result<(Vector3<f64>, Vector3<f64>, Vector3<f64>)> {
        if !(0.0..=self.spec.duration).contains(&t) {
            return Err(Error::TimeOutOfRange {
                t,
                duration: self.spec.duration,
            });
        }
        Ok(match self.spec.kind {
            TrajectoryKind::GenericWaypoints => self.waypoint_kinematics(t).0,
            _ => self.circle_kinematics(t),
        })
    }

    /// Reference pose at `t`. Yaw follows the velocity heading; roll and pitch
    /// are small-angle proxies of the body-frame acceleration.
    pub fn pose(&self, t: f64) -> Result<TagState> {
        let (p, v, a) = self.kinematics(t)?;
        let yaw = match self.spec.kind {
            TrajectoryKind::GenericWaypoints => self.waypoint_kinematics(t).1,
            _ => v.y.atan2(v.x),
        };
        let (roll, pitch) = tilt_from_acceleration(&a, yaw);
        Ok(TagState {
            position: p,
            velocity: v,
            attitude: Vector3::new(roll, pitch, wrap_angle(yaw)),
            time: t,
        })
    }

    fn circle_kinematics(&self, t: f64) -> Kinematics {
        let s = &self.spec;
        let w = s.speed / s.radius;
        let th = w * t;
        let c = Vector3::from(s.center);
        let (sin, cos) = th.sin_cos();
        let mut p = c + Vector3::new(s.radius * cos, s.radius * sin, 0.0);
        let mut v = Vector3::new(-s.speed * sin, s.speed * cos, 0.0);
        let mut a = Vector3::new(-s.speed * w * cos, -s.speed * w * sin, 0.0);
        if s.kind == TrajectoryKind::CircleVaryingZ {
            let wz = s.z_cycles * w;
            p.z += s.z_amplitude * (wz * t).sin();
            v.z = s.z_amplitude * wz * (wz * t).cos();
            a.z = -s.z_amplitude * wz * wz * (wz * t).sin();
        }
        (p, v, a)
    }

    fn waypoint_kinematics(&self, t: f64) -> (Kinematics, f64) {
        let idx = self.segments.partition_point(|s| s.start_time <= t).saturating_sub(1);
        let seg = &self.segments[idx];
        let tau = ((t - seg.start_time) / seg.duration).clamp(0.0, 1.0);
        let (t2, t3) = (tau * tau, tau * tau * tau);
        let s = t3 * (10.0 - 15.0 * tau + 6.0 * t2);
        let ds = 30.0 * t2 * (1.0 - tau) * (1.0 - tau) / seg.duration;
        let dds = (60.0 * tau - 180.0 * t2 + 120.0 * t3) / (seg.duration * seg.duration);
        let d = seg.to - seg.from;
        ((seg.from + d * s, d * ds, d * dds), seg.yaw)
    }
}

fn tilt_from_acceleration(a: &Vector3<f64>, yaw: f64) -> (f64, f64) {
    let (sin, cos) = yaw.sin_cos();
    let forward = a.x * cos + a.y * sin;
    let left = -a.x * sin + a.y * cos;
    let pitch = (forward / GRAVITY).atan().clamp(-MAX_TILT, MAX_TILT);
    let roll = (-left / GRAVITY).atan().clamp(-MAX_TILT, MAX_TILT);
    (roll, pitch)
}

/// Random rest-to-rest waypoint tour covering `spec.duration`.
fn waypoint_segments(spec: &TrajectorySpec, bounds: &Bounds) -> Result<Vec<Segment>> {
    let margin = ARENA_MARGIN + 0.05;
    let lo = bounds.min.add_scalar(margin);
    let hi = bounds.max.add_scalar(-margin);
    if (0..3).any(|k| hi[k] <= lo[k]) {
        return Err(Error::InvalidConfig("arena too small for waypoint trajectories".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    // Sample from a slightly enlarged box and clamp, so faces and edges of
    // the arena get visited as often as the interior.
    let draw = |rng: &mut ChaCha8Rng| {
        Vector3::from_fn(|k, _| {
            let span = hi[k] - lo[k];
            rng.random_range(lo[k] - 0.15 * span..hi[k] + 0.15 * span)
                .clamp(lo[k], hi[k])
        })
    };
    let mut segments = Vec::new();
    let mut from = draw(&mut rng);
    let mut t = 0.0;
    while t <= spec.duration {
        let to = draw(&mut rng);
        let length = (to - from).norm();
        if length < 0.5 {
            continue;
        }
        let d = to - from;
        // The quintic peaks at 15/8 of the mean speed, so this peaks at `speed`.
        let duration = 15.0 * length / (8.0 * spec.speed);
        segments.push(Segment {
            start_time: t,
            duration,
            from,
            to,
            yaw: d.y.atan2(d.x),
        });
        t += duration;
        from = to;
    }
    Ok(segments)
}
