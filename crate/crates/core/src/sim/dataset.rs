use std::io::{Read, Write};

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::run::{schedule, stream_seed};
use super::trajectory::{Trajectory, TrajectorySpec};
use crate::error::{Error, Result};
use crate::geometry::{AnchorConstellation, FeatureVector, RangingMode};
use crate::measurement::{feature_for, sample_measurement, BiasFieldParams, NoiseConfig};
use crate::nn::TrainingSample;

/// Settings for collecting bias-training data on random waypoint flights.
#[derive(Clone, Debug)]
pub struct DatasetConfig {
    pub mode: RangingMode,
    pub constellation: AnchorConstellation,
    pub bias: BiasFieldParams,
    pub noise: NoiseConfig,
    pub flights: usize,
    /// Seconds per flight.
    pub flight_duration: f64,
    /// Logging rate, Hz.
    pub rate: f64,
    /// Peak segment speed, m/s.
    pub speed: f64,
    pub seed: u64,
}

impl DatasetConfig {
    /// 20 flights of 100 s logged at 50 Hz: 100k samples.
    pub fn new(mode: RangingMode) -> Self {
        Self {
            mode,
            constellation: AnchorConstellation::default_arena(),
            bias: BiasFieldParams::default(),
            noise: NoiseConfig::default(),
            flights: 20,
            flight_duration: 100.0,
            rate: 50.0,
            speed: 1.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.bias.validate()?;
        self.noise.validate()?;
        if self.flights == 0 {
            return Err(Error::InvalidConfig("dataset: flights must be >= 1".into()));
        }
        for (name, v) in [
            ("flight_duration", self.flight_duration),
            ("rate", self.rate),
            ("speed", self.speed),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidConfig(format!("dataset: {name} must be > 0")));
            }
        }
        if self.mode == RangingMode::Tdoa && self.constellation.len() < 2 {
            return Err(Error::InvalidConfig("dataset: TDoA needs at least 2 anchors".into()));
        }
        Ok(())
    }
}

/// Labelled samples plus the true tag positions they were taken at.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub mode: RangingMode,
    pub samples: Vec<TrainingSample>,
    pub positions: Vec<Vector3<f64>>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// CSV with header `feat_0..feat_{d-1},target`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let d = self.mode.feature_len();
        let mut w = csv::Writer::from_writer(writer);
        let mut header: Vec<String> = (0..d).map(|k| format!("feat_{k}")).collect();
        header.push("target".into());
        w.write_record(&header)
            .map_err(|e| Error::format("dataset csv", "<writer>", e))?;
        let mut row = Vec::with_capacity(d + 1);
        for s in &self.samples {
            row.clear();
            row.extend(s.feature.values().iter().map(|v| v.to_string()));
            row.push(s.target_bias.to_string());
            w.write_record(&row)
                .map_err(|e| Error::format("dataset csv", "<writer>", e))?;
        }
        w.flush().map_err(|e| Error::io("<writer>", e))?;
        Ok(())
    }

    /// Reads a dataset CSV file, see [`Dataset::read_csv`].
    pub fn read(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_csv(std::io::BufReader::new(file)).map_err(|e| match e {
            Error::Format { what, reason, .. } => Error::Format {
                what,
                path: path.to_path_buf(),
                reason,
            },
            other => other,
        })
    }

    /// Reads a dataset CSV; the mode follows from the number of feature
    /// columns. Positions are not stored in the file and come back empty.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let bad = |reason: String| Error::format("dataset csv", "<reader>", reason);
        let mut r = csv::Reader::from_reader(reader);
        let header = r.headers().map_err(|e| bad(e.to_string()))?.clone();
        let d = header.len().saturating_sub(1);
        let mode = match d {
            6 => RangingMode::Twr,
            9 => RangingMode::Tdoa,
            _ => return Err(bad(format!("expected 6 or 9 feature columns, found {d}"))),
        };
        for (k, name) in header.iter().enumerate() {
            let want = if k < d {
                format!("feat_{k}")
            } else {
                "target".to_string()
            };
            if name != want {
                return Err(bad(format!("column {k} is '{name}', expected '{want}'")));
            }
        }
        let mut samples = Vec::new();
        for (n, rec) in r.records().enumerate() {
            let rec = rec.map_err(|e| bad(e.to_string()))?;
            let vals = rec
                .iter()
                .map(|f| f.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| bad(format!("row {}: {e}", n + 1)))?;
            if vals.len() != d + 1 {
                return Err(bad(format!("row {} has {} columns", n + 1, vals.len())));
            }
            let target_bias = vals[d];
            if !target_bias.is_finite() {
                return Err(bad(format!("row {}: non-finite target", n + 1)));
            }
            let feature = FeatureVector::new(mode, vals[..d].to_vec())?;
            samples.push(TrainingSample { feature, target_bias });
        }
        Ok(Self {
            mode,
            samples,
            positions: Vec::new(),
        })
    }
}

/// Flies `config.flights` random waypoint tours and logs one `(feature,
/// r~ - r)` pair per tick, features taken at the true pose.
pub fn generate_dataset(config: &DatasetConfig) -> Result<Dataset> {
    config.validate()?;
    let ticks = (config.flight_duration * config.rate).round() as usize;
    let mut samples = Vec::with_capacity(config.flights * ticks);
    let mut positions = Vec::with_capacity(config.flights * ticks);
    for flight in 0..config.flights {
        let flight_seed = stream_seed(config.seed, flight as u64);
        let spec = TrajectorySpec::generic(flight_seed, config.flight_duration, config.speed);
        let traj = Trajectory::new(spec, config.constellation.bounds())?;
        let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(config.noise.seed, flight_seed));
        for k in 0..ticks {
            let tag = traj.pose(k as f64 / config.rate)?;
            let (i, j) = schedule(&config.constellation, config.mode, k);
            let (m, truth) = sample_measurement(
                &config.constellation,
                &tag,
                config.mode,
                i,
                j,
                &config.bias,
                &config.noise,
                &mut rng,
            )?;
            let feature = feature_for(&config.constellation, &tag, config.mode, i, j)?;
            samples.push(TrainingSample {
                feature,
                target_bias: m.value - truth.true_range,
            });
            positions.push(tag.position);
        }
    }
    Ok(Dataset {
        mode: config.mode,
        samples,
        positions,
    })
}
