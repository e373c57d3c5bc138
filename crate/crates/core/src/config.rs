//! One TOML document describing a whole experiment.
//!
//! Every section and every key is optional; anything left out takes the
//! library default. Unknown keys are rejected so typos surface immediately.
//!
//! ```toml
//! seed = 3
//!
//! [constellation]
//! path = "anchors.json"          # or inline `anchors` + `bounds`
//!
//! [noise]
//! sigma_tdoa = 0.05
//!
//! [run]
//! mode = "tdoa"
//! compensation = true
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{FilterConfig, GateConfig};
use crate::geometry::{AnchorConstellation, AnchorJson, ConstellationJson, RangingMode};
use crate::measurement::{BiasFieldParams, NoiseConfig};
use crate::nn::TrainConfig;
use crate::sim::{ControllerConfig, DatasetConfig, RunConfig, TrajectorySpec};

/// Anchor layout: a JSON file, an inline table, or (neither) the default arena.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstellationSection {
    pub path: Option<PathBuf>,
    pub anchors: Option<Vec<InlineAnchor>>,
    pub bounds: Option<[[f64; 3]; 2]>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InlineAnchor {
    pub id: u32,
    pub pos: [f64; 3],
}

/// Gate settings. `r_twr` / `r_tdoa` default to the noise model's sigma^2.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GateSection {
    pub a_max: Option<f64>,
    pub chi2_threshold: Option<f64>,
    pub dynamics_window: Option<f64>,
    pub r_twr: Option<f64>,
    pub r_tdoa: Option<f64>,
    pub bias_allowance: Option<f64>,
    pub residual_allowance: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetSection {
    pub flights: usize,
    pub flight_duration: f64,
    pub rate: f64,
    pub speed: f64,
}

impl Default for DatasetSection {
    fn default() -> Self {
        let d = DatasetConfig::new(RangingMode::Twr);
        Self {
            flights: d.flights,
            flight_duration: d.flight_duration,
            rate: d.rate,
            speed: d.speed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    pub mode: RangingMode,
    pub compensation: bool,
    pub rejection: bool,
    pub closed_loop: bool,
    /// Measurement rate, Hz.
    pub rate: f64,
    pub burn_in: f64,
    /// Number of consecutive seeds starting at the top-level `seed`.
    pub seeds: u64,
}

impl Default for RunSection {
    fn default() -> Self {
        let r = RunConfig::new(RangingMode::Twr);
        Self {
            mode: RangingMode::Twr,
            compensation: false,
            rejection: true,
            closed_loop: false,
            rate: r.rate,
            burn_in: r.burn_in,
            seeds: 1,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub constellation: ConstellationSection,
    pub trajectory: TrajectorySpec,
    pub bias: BiasFieldParams,
    pub noise: NoiseConfig,
    pub gate: GateSection,
    pub filter: FilterConfig,
    pub controller: ControllerConfig,
    pub train: TrainConfig,
    pub dataset: DatasetSection,
    pub run: RunSection,
    /// Directory relative paths are resolved against; set by [`Self::load`].
    #[serde(skip)]
    pub base_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::InvalidConfig(format!("config: {}", e.message())))
    }

    /// Reads and validates a config file.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: Self = toml::from_str(&text).map_err(|e| Error::format("config", path, e.message()))?;
        cfg.base_dir = path.parent().map(Path::to_path_buf);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn constellation(&self) -> Result<AnchorConstellation> {
        let c = &self.constellation;
        match (&c.path, &c.anchors, &c.bounds) {
            (None, None, None) => Ok(AnchorConstellation::default_arena()),
            (Some(p), None, None) => {
                let full = match &self.base_dir {
                    Some(dir) if p.is_relative() => dir.join(p),
                    _ => p.clone(),
                };
                AnchorConstellation::from_json_file(full)
            }
            (None, Some(anchors), Some(bounds)) => AnchorConstellation::from_raw(ConstellationJson {
                anchors: anchors.iter().map(|a| AnchorJson { id: a.id, pos: a.pos }).collect(),
                bounds: *bounds,
            }),
            _ => Err(Error::InvalidConfig(
                "constellation: give either `path` or both `anchors` and `bounds`".into(),
            )),
        }
    }

    pub fn gate(&self) -> GateConfig {
        let g = &self.gate;
        let base = GateConfig::from_noise(&self.noise);
        GateConfig {
            a_max: g.a_max.unwrap_or(base.a_max),
            chi2_threshold: g.chi2_threshold.unwrap_or(base.chi2_threshold),
            dynamics_window: g.dynamics_window.unwrap_or(base.dynamics_window),
            r_twr: g.r_twr.unwrap_or(base.r_twr),
            r_tdoa: g.r_tdoa.unwrap_or(base.r_tdoa),
            bias_allowance: g.bias_allowance.unwrap_or(base.bias_allowance),
            residual_allowance: g.residual_allowance.unwrap_or(base.residual_allowance),
        }
    }

    /// Run settings for `mode`, without a model attached.
    pub fn run_config(&self, mode: RangingMode) -> Result<RunConfig> {
        Ok(RunConfig {
            trajectory: self.trajectory.clone(),
            constellation: self.constellation()?,
            bias: self.bias.clone(),
            noise: self.noise.clone(),
            gate: self.gate(),
            filter: self.filter.clone(),
            controller: self.controller.clone(),
            model: None,
            mode,
            compensation: self.run.compensation,
            rejection: self.run.rejection,
            rate: self.run.rate,
            burn_in: self.run.burn_in,
            seed: self.seed,
        })
    }

    pub fn dataset_config(&self, mode: RangingMode) -> Result<DatasetConfig> {
        Ok(DatasetConfig {
            mode,
            constellation: self.constellation()?,
            bias: self.bias.clone(),
            noise: self.noise.clone(),
            flights: self.dataset.flights,
            flight_duration: self.dataset.flight_duration,
            rate: self.dataset.rate,
            speed: self.dataset.speed,
            seed: self.seed,
        })
    }

    /// Checks every section, including that the constellation resolves and
    /// supports the configured mode.
    pub fn validate(&self) -> Result<()> {
        let mut run = self.run_config(self.run.mode)?;
        run.compensation = false;
        run.validate()?;
        self.dataset_config(self.run.mode)?.validate()?;
        self.train.validate()?;
        if self.run.seeds == 0 {
            return Err(Error::InvalidConfig("run: seeds must be >= 1".into()));
        }
        Ok(())
    }
}
