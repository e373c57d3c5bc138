//! Synthetic UWB ranging: true ranges, a pose-dependent bias field, and noisy
//! measurements with NLOS-style spike outliers.

use std::io::{Read, Write};

use nalgebra::Vector3;
use rand::Rng;
use rand_distr::{Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    azimuth_elevation, tdoa_feature, twr_feature, AnchorConstellation, FeatureVector, RangingMode, TagState,
};

/// One raw TWR or TDoA sample as delivered by the radio.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RangeMeasurement {
    pub mode: RangingMode,
    pub anchor_i: u32,
    /// Second anchor of a TDoA pair; `None` for TWR.
    pub anchor_j: Option<u32>,
    pub value: f64,
    pub timestamp: f64,
}

/// Ground-truth decomposition of a sampled measurement. Only test oracles and
/// dataset generation look at this.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SampleTruth {
    pub true_range: f64,
    pub bias: f64,
    pub noise: f64,
    /// Injected spike, zero when the sample is an inlier.
    pub spike: f64,
    pub outlier: bool,
}

/// Phenomenological pose-dependent bias: a truncated Fourier series in
/// azimuth plus elevation and range terms.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BiasFieldParams {
    /// Amplitude of the k-th azimuth harmonic (k = 1..K), meters.
    pub amplitude_az: Vec<f64>,
    /// Phase of the k-th harmonic, radians.
    pub phase: Vec<f64>,
    pub amplitude_el: f64,
    pub constant_offset: f64,
    /// Bias growth per meter of range.
    pub range_gain: f64,
}

impl Default for BiasFieldParams {
    fn default() -> Self {
        Self {
            amplitude_az: vec![0.10, 0.05],
            phase: vec![0.0, 0.5],
            amplitude_el: 0.05,
            constant_offset: 0.05,
            range_gain: 0.01,
        }
    }
}

impl BiasFieldParams {
    pub fn zero() -> Self {
        Self {
            amplitude_az: Vec::new(),
            phase: Vec::new(),
            amplitude_el: 0.0,
            constant_offset: 0.0,
            range_gain: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.amplitude_az.len() != self.phase.len() {
            return Err(Error::InvalidConfig(
                "bias field: amplitude_az and phase must have the same length".into(),
            ));
        }
        let all = self.amplitude_az.iter().chain(&self.phase).chain([
            &self.amplitude_el,
            &self.constant_offset,
            &self.range_gain,
        ]);
        if !all.into_iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("bias field parameters"));
        }
        Ok(())
    }

    /// Upper bound on |b| for a single anchor at ranges up to `max_range`.
    pub fn max_bias(&self, max_range: f64) -> f64 {
        self.constant_offset.abs()
            + self.amplitude_az.iter().map(|a| a.abs()).sum::<f64>()
            + self.amplitude_el.abs()
            + self.range_gain.abs() * max_range
    }

    /// Upper bound on |b_i - b_j| for two anchors `baseline` meters apart.
    pub fn max_tdoa_bias(&self, baseline: f64) -> f64 {
        2.0 * (self.amplitude_az.iter().map(|a| a.abs()).sum::<f64>() + self.amplitude_el.abs())
            + self.range_gain.abs() * baseline
    }

    /// Bias of a single tag/anchor link.
    pub fn link_bias(&self, delta_p: &Vector3<f64>, attitude: &Vector3<f64>) -> Result<f64> {
        let (alpha, beta) = azimuth_elevation(delta_p, attitude)?;
        let harmonics: f64 = self
            .amplitude_az
            .iter()
            .zip(&self.phase)
            .enumerate()
            .map(|(k, (amp, ph))| amp * ((k + 1) as f64 * alpha + ph).cos())
            .sum();
        Ok(self.constant_offset + harmonics + self.amplitude_el * beta.sin() + self.range_gain * delta_p.norm())
    }

    /// Ground-truth bias for a feature vector; TDoA returns `b_i - b_j`.
    pub fn eval(&self, feature: &FeatureVector) -> Result<f64> {
        let att = feature.attitude();
        let bi = self.link_bias(&feature.delta_i(), &att)?;
        match feature.delta_j() {
            None => Ok(bi),
            Some(dj) => Ok(bi - self.link_bias(&dj, &att)?),
        }
    }
}

/// Free-function form of [`BiasFieldParams::eval`].
pub fn bias_field_eval(feature: &FeatureVector, params: &BiasFieldParams) -> Result<f64> {
    params.eval(feature)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseConfig {
    pub sigma_twr: f64,
    pub sigma_tdoa: f64,
    /// Probability that a sample carries an NLOS spike.
    pub outlier_rate: f64,
    /// Mean spike magnitude, meters.
    pub outlier_scale: f64,
    /// Spike probability while the tag is within `ground_height` of the floor.
    /// Zero disables the on-ground multipath zone.
    pub ground_outlier_rate: f64,
    pub ground_height: f64,
    pub seed: u64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            sigma_twr: 0.03,
            sigma_tdoa: 0.04,
            outlier_rate: 0.05,
            outlier_scale: 1.0,
            ground_outlier_rate: 0.0,
            ground_height: 0.3,
            seed: 0,
        }
    }
}

impl NoiseConfig {
    pub fn noiseless() -> Self {
        Self {
            sigma_twr: 0.0,
            sigma_tdoa: 0.0,
            outlier_rate: 0.0,
            ..Self::default()
        }
    }

    pub fn sigma(&self, mode: RangingMode) -> f64 {
        match mode {
            RangingMode::Twr => self.sigma_twr,
            RangingMode::Tdoa => self.sigma_tdoa,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, s) in [("sigma_twr", self.sigma_twr), ("sigma_tdoa", self.sigma_tdoa)] {
            if !(s.is_finite() && s >= 0.0) {
                return Err(Error::InvalidConfig(format!("noise: {name} must be finite and >= 0")));
            }
        }
        if !(0.0..0.5).contains(&self.outlier_rate) {
            return Err(Error::InvalidConfig("noise: outlier_rate must be in [0, 0.5)".into()));
        }
        if !(0.0..=1.0).contains(&self.ground_outlier_rate) {
            return Err(Error::InvalidConfig(
                "noise: ground_outlier_rate must be in [0, 1]".into(),
            ));
        }
        if !(self.outlier_scale.is_finite() && self.outlier_scale > 0.0) {
            return Err(Error::InvalidConfig("noise: outlier_scale must be > 0".into()));
        }
        if !(self.ground_height.is_finite() && self.ground_height >= 0.0) {
            return Err(Error::InvalidConfig("noise: ground_height must be >= 0".into()));
        }
        Ok(())
    }
}

/// Euclidean distance between tag and anchor.
pub fn true_twr_range(p: &Vector3<f64>, p_i: &Vector3<f64>) -> f64 {
    (p - p_i).norm()
}

/// Signed range difference `|p - p_i| - |p - p_j|`.
pub fn true_tdoa_range(p: &Vector3<f64>, p_i: &Vector3<f64>, p_j: &Vector3<f64>) -> f64 {
    (p - p_i).norm() - (p - p_j).norm()
}

/// Feature vector for a measurement's anchor(s) seen from `tag`.
pub fn feature_for(
    constellation: &AnchorConstellation,
    tag: &TagState,
    mode: RangingMode,
    anchor_i: u32,
    anchor_j: Option<u32>,
) -> Result<FeatureVector> {
    let pi = constellation.position(anchor_i)?;
    match mode {
        RangingMode::Twr => Ok(twr_feature(tag, &pi)),
        RangingMode::Tdoa => {
            let j = anchor_j.ok_or_else(|| Error::InvalidConfig("TDoA measurement needs two anchors".into()))?;
            Ok(tdoa_feature(tag, &pi, &constellation.position(j)?))
        }
    }
}

/// Bias-free, noise-free value of a measurement.
pub fn true_range(
    constellation: &AnchorConstellation,
    p: &Vector3<f64>,
    mode: RangingMode,
    anchor_i: u32,
    anchor_j: Option<u32>,
) -> Result<f64> {
    let pi = constellation.position(anchor_i)?;
    match mode {
        RangingMode::Twr => Ok(true_twr_range(p, &pi)),
        RangingMode::Tdoa => {
            let j = anchor_j.ok_or_else(|| Error::InvalidConfig("TDoA measurement needs two anchors".into()))?;
            Ok(true_tdoa_range(p, &pi, &constellation.position(j)?))
        }
    }
}

/// Draws one measurement `r + b + eps (+ spike)` for the given anchor(s).
///
/// Random draws happen in a fixed order (noise, outlier coin, spike
/// magnitude, spike sign) so a seeded `rng` reproduces the stream exactly.
#[allow(clippy::too_many_arguments)]
pub fn sample_measurement<R: Rng + ?Sized>(
    constellation: &AnchorConstellation,
    tag: &TagState,
    mode: RangingMode,
    anchor_i: u32,
    anchor_j: Option<u32>,
    bias: &BiasFieldParams,
    noise: &NoiseConfig,
    rng: &mut R,
) -> Result<(RangeMeasurement, SampleTruth)> {
    if mode == RangingMode::Twr && anchor_j.is_some() {
        return Err(Error::InvalidConfig("TWR measurement takes a single anchor".into()));
    }
    let feature = feature_for(constellation, tag, mode, anchor_i, anchor_j)?;
    let r = true_range(constellation, &tag.position, mode, anchor_i, anchor_j)?;
    let b = bias.eval(&feature)?;

    let z: f64 = rng.sample(StandardNormal);
    let eps = noise.sigma(mode) * z;

    let near_ground =
        noise.ground_outlier_rate > 0.0 && tag.position.z < constellation.bounds().min.z + noise.ground_height;
    let rate = if near_ground {
        noise.ground_outlier_rate.max(noise.outlier_rate)
    } else {
        noise.outlier_rate
    };
    let outlier = rng.random::<f64>() < rate;
    let spike = if outlier {
        let magnitude: f64 = noise.outlier_scale * rng.sample::<f64, _>(Exp1);
        match mode {
            RangingMode::Twr => magnitude,
            RangingMode::Tdoa => {
                if rng.random::<bool>() {
                    magnitude
                } else {
                    -magnitude
                }
            }
        }
    } else {
        0.0
    };

    let measurement = RangeMeasurement {
        mode,
        anchor_i,
        anchor_j,
        value: r + b + eps + spike,
        timestamp: tag.time,
    };
    let truth = SampleTruth {
        true_range: r,
        bias: b,
        noise: eps,
        spike,
        outlier,
    };
    Ok((measurement, truth))
}

#[derive(Serialize, Deserialize)]
struct MeasurementRow {
    t: f64,
    mode: RangingMode,
    i: u32,
    j: Option<u32>,
    value: f64,
}

/// Writes `t,mode,i,j,value` rows; `j` is empty for TWR.
pub fn write_measurements_csv<W: Write>(writer: W, measurements: &[RangeMeasurement]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for m in measurements {
        w.serialize(MeasurementRow {
            t: m.timestamp,
            mode: m.mode,
            i: m.anchor_i,
            j: m.anchor_j,
            value: m.value,
        })
        .map_err(|e| Error::format("measurement csv", "<writer>", e))?;
    }
    w.flush().map_err(|e| Error::io("<writer>", e))?;
    Ok(())
}

pub fn read_measurements_csv<R: Read>(reader: R) -> Result<Vec<RangeMeasurement>> {
    let mut r = csv::Reader::from_reader(reader);
    r.deserialize::<MeasurementRow>()
        .map(|row| {
            let row = row.map_err(|e| Error::format("measurement csv", "<reader>", e))?;
            Ok(RangeMeasurement {
                mode: row.mode,
                anchor_i: row.i,
                anchor_j: row.j,
                value: row.value,
                timestamp: row.t,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{twr_feature, TagState};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn v(x: f64, y: f64, z: f64) -> Vector3<f64> {
        Vector3::new(x, y, z)
    }

    #[test]
    fn true_range_examples() {
        assert_eq!(true_twr_range(&v(0.0, 0.0, 0.0), &v(3.0, 4.0, 0.0)), 5.0);
        assert_eq!(true_twr_range(&v(2.0, 1.0, 0.5), &v(2.0, 1.0, 0.5)), 0.0);
        assert!((true_twr_range(&v(1.0, 1.0, 1.0), &v(2.0, 2.0, 2.0)) - 3f64.sqrt()).abs() < 1e-15);

        assert_eq!(
            true_tdoa_range(&v(0.0, 1.0, 0.0), &v(-2.0, 0.0, 0.0), &v(2.0, 0.0, 0.0)),
            0.0
        );
        assert_eq!(
            true_tdoa_range(&v(0.0, 0.0, 0.0), &v(4.0, 0.0, 0.0), &v(0.0, 0.0, 0.0)),
            4.0
        );
    }

    #[test]
    fn bias_field_examples() {
        let tag = TagState::at(v(1.0, 2.0, 1.0)).with_attitude(0.1, -0.2, 0.7);
        let f = twr_feature(&tag, &v(5.0, 0.0, 3.0));
        assert_eq!(BiasFieldParams::zero().eval(&f).unwrap(), 0.0);

        let a = v(5.0, 0.0, 3.0);
        let f = tdoa_feature(&tag, &a, &a);
        assert_eq!(BiasFieldParams::default().eval(&f).unwrap(), 0.0);

        let params = BiasFieldParams {
            amplitude_az: vec![0.05],
            phase: vec![0.0],
            amplitude_el: 0.0,
            constant_offset: 0.1,
            range_gain: 0.0,
        };
        let f = twr_feature(&TagState::at(Vector3::zeros()), &v(3.0, 0.0, 0.0));
        assert!((params.eval(&f).unwrap() - 0.15).abs() < 1e-15);
    }

    #[test]
    fn default_bias_bound_is_below_40cm() {
        let c = AnchorConstellation::default_arena();
        let b = BiasFieldParams::default().max_bias(c.bounds().diagonal());
        assert!(b <= 0.4, "B_max = {b}");
    }

    #[test]
    fn noiseless_sample_equals_true_range() {
        let c = AnchorConstellation::default_arena();
        let tag = TagState::at(v(2.0, 3.0, 1.2)).with_attitude(0.0, 0.0, 1.0);
        let noise = NoiseConfig {
            sigma_twr: 1e-15,
            sigma_tdoa: 1e-15,
            outlier_rate: 0.0,
            ..NoiseConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (m, t) = sample_measurement(
            &c,
            &tag,
            RangingMode::Twr,
            2,
            None,
            &BiasFieldParams::zero(),
            &noise,
            &mut rng,
        )
        .unwrap();
        let r = true_twr_range(&tag.position, &c.position(2).unwrap());
        assert!((m.value - r).abs() < 1e-12);
        assert!(!t.outlier);
    }

    #[test]
    fn seeded_sampling_is_repeatable() {
        let c = AnchorConstellation::default_arena();
        let tag = TagState::at(v(2.0, 3.0, 1.2));
        let draw = || {
            let mut rng = ChaCha8Rng::seed_from_u64(99);
            sample_measurement(
                &c,
                &tag,
                RangingMode::Tdoa,
                0,
                Some(5),
                &BiasFieldParams::default(),
                &NoiseConfig::default(),
                &mut rng,
            )
            .unwrap()
            .0
            .value
        };
        assert_eq!(draw().to_bits(), draw().to_bits());
    }

    #[test]
    fn sample_std_matches_sigma() {
        let c = AnchorConstellation::default_arena();
        let tag = TagState::at(v(3.0, 4.0, 1.5));
        let noise = NoiseConfig {
            sigma_twr: 0.05,
            outlier_rate: 0.0,
            ..NoiseConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 100_000;
        let vals: Vec<f64> = (0..n)
            .map(|_| {
                sample_measurement(
                    &c,
                    &tag,
                    RangingMode::Twr,
                    0,
                    None,
                    &BiasFieldParams::zero(),
                    &noise,
                    &mut rng,
                )
                .unwrap()
                .0
                .value
            })
            .collect();
        let mean = vals.iter().sum::<f64>() / n as f64;
        let std = (vals.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
        assert!((0.048..=0.052).contains(&std), "std = {std}");
    }

    #[test]
    fn unknown_anchor_is_an_error() {
        let c = AnchorConstellation::default_arena();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let r = sample_measurement(
            &c,
            &TagState::at(v(1.0, 1.0, 1.0)),
            RangingMode::Twr,
            42,
            None,
            &BiasFieldParams::default(),
            &NoiseConfig::default(),
            &mut rng,
        );
        assert!(matches!(r, Err(Error::UnknownAnchor(42))));
    }

    #[test]
    fn csv_stream_round_trip() {
        let ms = vec![
            RangeMeasurement {
                mode: RangingMode::Twr,
                anchor_i: 3,
                anchor_j: None,
                value: 4.25,
                timestamp: 0.005,
            },
            RangeMeasurement {
                mode: RangingMode::Tdoa,
                anchor_i: 1,
                anchor_j: Some(2),
                value: -0.5,
                timestamp: 0.01,
            },
        ];
        let mut buf = Vec::new();
        write_measurements_csv(&mut buf, &ms).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("t,mode,i,j,value\n0.005,twr,3,,4.25\n"), "{text}");
        assert_eq!(read_measurements_csv(buf.as_slice()).unwrap(), ms);
    }

    fn arena_point() -> impl Strategy<Value = Vector3<f64>> {
        (0.2..6.8f64, 0.2..7.8f64, 0.2..2.8f64).prop_map(|(x, y, z)| Vector3::new(x, y, z))
    }

    proptest! {
        #[test]
        fn tdoa_is_antisymmetric(p in arena_point(), yaw in -3.1..3.1f64, i in 0u32..8, j in 0u32..8) {
            prop_assume!(i != j);
            let c = AnchorConstellation::default_arena();
            let tag = TagState::at(p).with_attitude(0.0, 0.0, yaw);
            let params = BiasFieldParams::default();
            let (pi, pj) = (c.position(i).unwrap(), c.position(j).unwrap());
            let fwd = true_tdoa_range(&p, &pi, &pj) + params.eval(&tdoa_feature(&tag, &pi, &pj)).unwrap();
            let rev = true_tdoa_range(&p, &pj, &pi) + params.eval(&tdoa_feature(&tag, &pj, &pi)).unwrap();
            prop_assert!((fwd + rev).abs() < 1e-12);
            let baseline = (pi - pj).norm();
            let bound = baseline + params.max_tdoa_bias(baseline);
            prop_assert!(fwd.abs() <= bound);
        }
    }
}
