//! Tag/anchor geometry and neural-network feature construction.
//!
//! All quantities are SI: meters for positions, radians for angles. Attitude is
//! carried as `[roll, pitch, yaw]` Euler angles.

use std::f64::consts::PI;
use std::fmt;
use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Minimum separation between two anchors, or between a tag and an anchor,
/// below which geometry is treated as degenerate.
pub const MIN_SEPARATION: f64 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RangingMode {
    Twr,
    Tdoa,
}

impl RangingMode {
    /// Length of the bias-estimator feature vector for this mode.
    pub const fn feature_len(self) -> usize {
        match self {
            RangingMode::Twr => 6,
            RangingMode::Tdoa => 9,
        }
    }
}

impl fmt::Display for RangingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RangingMode::Twr => "twr",
            RangingMode::Tdoa => "tdoa",
        })
    }
}

impl std::str::FromStr for RangingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "twr" => Ok(RangingMode::Twr),
            "tdoa" => Ok(RangingMode::Tdoa),
            other => Err(Error::InvalidConfig(format!("unknown ranging mode '{other}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Anchor {
    pub id: u32,
    pub position: Vector3<f64>,
}

/// Axis-aligned box.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Bounds {
    pub min: Vector3<f64>,
    pub max: Vector3<f64>,
}

impl Bounds {
    pub fn new(min: Vector3<f64>, max: Vector3<f64>) -> Result<Self> {
        if !(min.iter().all(|v| v.is_finite()) && max.iter().all(|v| v.is_finite())) {
            return Err(Error::NonFinite("arena bounds"));
        }
        if (0..3).any(|k| max[k] <= min[k]) {
            return Err(Error::InvalidConfig(
                "arena bounds must have max > min on every axis".into(),
            ));
        }
        Ok(Self { min, max })
    }

    pub fn contains(&self, p: &Vector3<f64>, margin: f64) -> bool {
        (0..3).all(|k| p[k] >= self.min[k] + margin && p[k] <= self.max[k] - margin)
    }

    /// Euclidean distance from `p` to the box (zero inside).
    pub fn distance_outside(&self, p: &Vector3<f64>) -> f64 {
        let mut d2 = 0.0;
        for k in 0..3 {
            let excess = (self.min[k] - p[k]).max(p[k] - self.max[k]).max(0.0);
            d2 += excess * excess;
        }
        d2.sqrt()
    }

    pub fn extent(&self) -> Vector3<f64> {
        self.max - self.min
    }

    pub fn center(&self) -> Vector3<f64> {
        (self.min + self.max) * 0.5
    }

    pub fn diagonal(&self) -> f64 {
        self.extent().norm()
    }
}

/// Fixed UWB anchors and the flight arena they cover.
#[derive(Clone, Debug, PartialEq)]
pub struct AnchorConstellation {
    anchors: Vec<Anchor>,
    bounds: Bounds,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub(crate) struct AnchorJson {
    pub id: u32,
    pub pos: [f64; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub(crate) struct ConstellationJson {
    pub anchors: Vec<AnchorJson>,
    pub bounds: [[f64; 3]; 2],
}

impl AnchorConstellation {
    pub fn new(anchors: Vec<Anchor>, bounds: Bounds) -> Result<Self> {
        if anchors.len() < 2 {
            return Err(Error::InvalidConfig(format!(
                "constellation needs at least 2 anchors, got {}",
                anchors.len()
            )));
        }
        for (k, a) in anchors.iter().enumerate() {
            if !a.position.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite("anchor position"));
            }
            for b in &anchors[..k] {
                if a.id == b.id {
                    return Err(Error::InvalidConfig(format!("duplicate anchor id {}", a.id)));
                }
                if (a.position - b.position).norm() <= MIN_SEPARATION {
                    return Err(Error::InvalidConfig(format!(
                        "anchors {} and {} are coincident",
                        b.id, a.id
                    )));
                }
            }
        }
        Ok(Self { anchors, bounds })
    }

    /// 7 m x 8 m x 3 m cuboid with one anchor on each vertex.
    pub fn default_arena() -> Self {
        let bounds = Bounds {
            min: Vector3::zeros(),
            max: Vector3::new(7.0, 8.0, 3.0),
        };
        let mut anchors = Vec::with_capacity(8);
        // Bottom ring then top ring, counter-clockwise seen from above.
        let ring = [(0.0, 0.0), (7.0, 0.0), (7.0, 8.0), (0.0, 8.0)];
        for (level, z) in [0.0, 3.0].into_iter().enumerate() {
            for (k, &(x, y)) in ring.iter().enumerate() {
                anchors.push(Anchor {
                    id: (level * 4 + k) as u32,
                    position: Vector3::new(x, y, z),
                });
            }
        }
        Self { anchors, bounds }
    }

    pub fn anchors(&self) -> &[Anchor] {
        &self.anchors
    }

    pub fn bounds(&self) -> &Bounds {
        &self.bounds
    }

    pub fn len(&self) -> usize {
        self.anchors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchors.is_empty()
    }

    pub fn position(&self, id: u32) -> Result<Vector3<f64>> {
        self.anchors
            .iter()
            .find(|a| a.id == id)
            .map(|a| a.position)
            .ok_or(Error::UnknownAnchor(id))
    }

    /// Enough anchors for a full 3D fix in `mode`.
    pub fn supports(&self, mode: RangingMode) -> bool {
        match mode {
            RangingMode::Twr => self.len() >= 4,
            RangingMode::Tdoa => self.len() >= 5,
        }
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let raw: ConstellationJson =
            serde_json::from_str(s).map_err(|e| Error::InvalidConfig(format!("constellation json: {e}")))?;
        Self::from_raw(raw)
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let raw: ConstellationJson =
            serde_json::from_str(&text).map_err(|e| Error::format("constellation", path, e))?;
        Self::from_raw(raw)
    }

    pub(crate) fn from_raw(raw: ConstellationJson) -> Result<Self> {
        let bounds = Bounds::new(raw.bounds[0].into(), raw.bounds[1].into())?;
        let anchors = raw
            .anchors
            .into_iter()
            .map(|a| Anchor {
                id: a.id,
                position: a.pos.into(),
            })
            .collect();
        Self::new(anchors, bounds)
    }

    pub fn to_json(&self) -> String {
        let raw = ConstellationJson {
            anchors: self
                .anchors
                .iter()
                .map(|a| AnchorJson {
                    id: a.id,
                    pos: a.position.into(),
                })
                .collect(),
            bounds: [self.bounds.min.into(), self.bounds.max.into()],
        };
        serde_json::to_string_pretty(&raw).expect("constellation serializes")
    }
}

/// True or estimated pose of the tag.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TagState {
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    /// `[roll, pitch, yaw]`, each wrapped to (-pi, pi].
    pub attitude: Vector3<f64>,
    pub time: f64,
}

impl TagState {
    pub fn at(position: Vector3<f64>) -> Self {
        Self {
            position,
            velocity: Vector3::zeros(),
            attitude: Vector3::zeros(),
            time: 0.0,
        }
    }

    pub fn with_attitude(mut self, roll: f64, pitch: f64, yaw: f64) -> Self {
        self.attitude = Vector3::new(wrap_angle(roll), wrap_angle(pitch), wrap_angle(yaw));
        self
    }

    pub fn is_finite(&self) -> bool {
        self.position
            .iter()
            .chain(self.velocity.iter())
            .chain(self.attitude.iter())
            .all(|v| v.is_finite())
            && self.time.is_finite()
    }
}

/// Wraps an angle to (-pi, pi].
pub fn wrap_angle(a: f64) -> f64 {
    let mut w = a.rem_euclid(2.0 * PI);
    if w > PI {
        w -= 2.0 * PI;
    }
    w
}

/// Vector from the tag to the anchor, `anchor - tag`.
pub fn relative_position(tag: &TagState, anchor: &Vector3<f64>) -> Vector3<f64> {
    anchor - tag.position
}

/// Bearing and elevation of `delta_p` as seen from the tag.
///
/// Azimuth is measured from the body x-axis after removing yaw only; roll and
/// pitch do not enter. A purely vertical `delta_p` has azimuth 0.
pub fn azimuth_elevation(delta_p: &Vector3<f64>, attitude: &Vector3<f64>) -> Result<(f64, f64)> {
    let range = delta_p.norm();
    if range <= 0.0 || !range.is_finite() {
        return Err(Error::DegenerateGeometry("zero-length relative position"));
    }
    let horizontal = delta_p.x.hypot(delta_p.y);
    let alpha = if horizontal == 0.0 {
        0.0
    } else {
        wrap_angle(delta_p.y.atan2(delta_p.x) - attitude.z)
    };
    let beta = (delta_p.z / range).clamp(-1.0, 1.0).asin();
    Ok((alpha, beta))
}

/// Fixed-length input of the bias estimator.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureVector {
    mode: RangingMode,
    values: Vec<f64>,
}

impl FeatureVector {
    pub fn new(mode: RangingMode, values: Vec<f64>) -> Result<Self> {
        if values.len() != mode.feature_len() {
            return Err(Error::DimensionMismatch {
                expected: mode.feature_len(),
                found: values.len(),
            });
        }
        if !values.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("feature vector"));
        }
        Ok(Self { mode, values })
    }

    pub fn mode(&self) -> RangingMode {
        self.mode
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Relative position of the (first) anchor.
    pub fn delta_i(&self) -> Vector3<f64> {
        Vector3::new(self.values[0], self.values[1], self.values[2])
    }

    /// Relative position of the second anchor; TDoA only.
    pub fn delta_j(&self) -> Option<Vector3<f64>> {
        match self.mode {
            RangingMode::Twr => None,
            RangingMode::Tdoa => Some(Vector3::new(self.values[3], self.values[4], self.values[5])),
        }
    }

    pub fn attitude(&self) -> Vector3<f64> {
        let n = self.values.len();
        Vector3::new(self.values[n - 3], self.values[n - 2], self.values[n - 1])
    }
}

/// `[dp_i; roll; pitch; yaw]`.
pub fn twr_feature(tag: &TagState, anchor: &Vector3<f64>) -> FeatureVector {
    let d = relative_position(tag, anchor);
    let a = tag.attitude;
    FeatureVector {
        mode: RangingMode::Twr,
        values: vec![d.x, d.y, d.z, a.x, a.y, a.z],
    }
}

/// `[dp_i; dp_j; roll; pitch; yaw]`.
pub fn tdoa_feature(tag: &TagState, anchor_i: &Vector3<f64>, anchor_j: &Vector3<f64>) -> FeatureVector {
    let di = relative_position(tag, anchor_i);
    let dj = relative_position(tag, anchor_j);
    let a = tag.attitude;
    FeatureVector {
        mode: RangingMode::Tdoa,
        values: vec![di.x, di.y, di.z, dj.x, dj.y, dj.z, a.x, a.y, a.z],
    }
}
