use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::metrics::{metrics, Summary};
use super::trajectory::{Trajectory, TrajectorySpec};
use crate::error::{Error, Result};
use crate::estimator::{EkfState, FilterConfig, GateConfig, GateReason, UwbFilter};
use crate::geometry::{AnchorConstellation, RangingMode, TagState};
use crate::measurement::{sample_measurement, BiasFieldParams, NoiseConfig};
use crate::nn::MlpModel;

/// Estimate-to-truth (closed loop) or estimate-to-arena (open loop) distance
/// that flags a run as diverged, meters.
pub const DIVERGENCE_DISTANCE: f64 = 5.0;

/// Velocity-command tracking law `v = v_ref + sat(gain * (p_c - p_hat))`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ControllerConfig {
    pub gain: f64,
    /// Bound on the feedback velocity, m/s.
    pub saturation: f64,
    /// Feed ground truth instead of the estimate (controller-only baseline).
    pub truth_feedback: bool,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self {
            gain: 1.0,
            saturation: 1.0,
            truth_feedback: false,
        }
    }
}

/// Everything one simulated flight needs.
#[derive(Clone, Debug)]
pub struct RunConfig {
    pub trajectory: TrajectorySpec,
    pub constellation: AnchorConstellation,
    pub bias: BiasFieldParams,
    pub noise: NoiseConfig,
    pub gate: GateConfig,
    pub filter: FilterConfig,
    pub controller: ControllerConfig,
    pub model: Option<MlpModel>,
    pub mode: RangingMode,
    pub compensation: bool,
    pub rejection: bool,
    /// Measurement (and filter) rate, Hz.
    pub rate: f64,
    /// Initial span excluded from RMSE, seconds.
    pub burn_in: f64,
    pub seed: u64,
}

impl RunConfig {
    /// Default arena, circle, and noise for `mode`; no model attached.
    pub fn new(mode: RangingMode) -> Self {
        let noise = NoiseConfig::default();
        Self {
            trajectory: TrajectorySpec::default(),
            constellation: AnchorConstellation::default_arena(),
            bias: BiasFieldParams::default(),
            gate: GateConfig::from_noise(&noise),
            noise,
            filter: FilterConfig::default(),
            controller: ControllerConfig::default(),
            model: None,
            mode,
            compensation: false,
            rejection: true,
            rate: 200.0,
            burn_in: 1.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.bias.validate()?;
        self.noise.validate()?;
        self.gate.validate()?;
        self.filter.validate()?;
        if !(self.rate.is_finite() && self.rate > 0.0) {
            return Err(Error::InvalidConfig("run: rate must be > 0".into()));
        }
        if !(self.burn_in >= 0.0) {
            return Err(Error::InvalidConfig("run: burn_in must be >= 0".into()));
        }
        if !self.constellation.supports(self.mode) {
            return Err(Error::InvalidConfig(format!(
                "constellation of {} anchors cannot localize in {} mode",
                self.constellation.len(),
                self.mode
            )));
        }
        if self.compensation {
            match &self.model {
                None => return Err(Error::InvalidConfig("compensation requested without a model".into())),
                Some(m) if m.mode() != self.mode => {
                    return Err(Error::ModeMismatch {
                        expected: self.mode,
                        found: m.mode(),
                    })
                }
                _ => {}
            }
        }
        if !(self.controller.gain > 0.0 && self.controller.saturation > 0.0) {
            return Err(Error::InvalidConfig(
                "controller: gain and saturation must be > 0".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunKind {
    Estimation,
    ClosedLoop,
}

/// Identifies a run; two logs are comparable when kind, mode, and trajectory
/// agree.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub kind: RunKind,
    pub mode: RangingMode,
    pub compensation: bool,
    pub rejection: bool,
    pub seed: u64,
    pub rate: f64,
    pub burn_in: f64,
    pub trajectory: TrajectorySpec,
    /// Time at which the run was flagged as diverged and stopped.
    pub diverged_at: Option<f64>,
}

/// One filter step: the measurement, what the gates did with it, and poses.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: f64,
    pub mode: RangingMode,
    pub i: u32,
    pub j: Option<u32>,
    pub raw: f64,
    pub compensated: f64,
    pub y_tilde: f64,
    #[serde(rename = "S")]
    pub s: f64,
    pub reason: GateReason,
    pub est_x: f64,
    pub est_y: f64,
    pub est_z: f64,
    pub true_x: f64,
    pub true_y: f64,
    pub true_z: f64,
    pub cmd_x: f64,
    pub cmd_y: f64,
    pub cmd_z: f64,
    /// Ground-truth spike flag from the simulator.
    pub outlier: bool,
}

impl StepRecord {
    pub fn estimate(&self) -> Vector3<f64> {
        Vector3::new(self.est_x, self.est_y, self.est_z)
    }

    pub fn truth(&self) -> Vector3<f64> {
        Vector3::new(self.true_x, self.true_y, self.true_z)
    }

    pub fn commanded(&self) -> Vector3<f64> {
        Vector3::new(self.cmd_x, self.cmd_y, self.cmd_z)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunLog {
    pub meta: RunMeta,
    pub records: Vec<StepRecord>,
    pub summary: Summary,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum LogLine {
    Meta(RunMeta),
    Step(StepRecord),
}

impl RunLog {
    pub fn diverged(&self) -> bool {
        self.meta.diverged_at.is_some()
    }

    /// JSON lines: one `meta` line followed by one `step` line per record.
    pub fn to_jsonl(&self) -> String {
        let mut out = serde_json::to_string(&LogLine::Meta(self.meta.clone())).expect("meta serializes");
        out.push('\n');
        for r in &self.records {
            out.push_str(&serde_json::to_string(&LogLine::Step(r.clone())).expect("record serializes"));
            out.push('\n');
        }
        out
    }

    /// Parses a log and recomputes its summary from the records.
    pub fn from_jsonl(text: &str) -> Result<Self> {
        let bad = |reason: String| Error::format("run log", "<jsonl>", reason);
        let mut meta = None;
        let mut records = Vec::new();
        for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            match serde_json::from_str::<LogLine>(line).map_err(|e| bad(format!("line {}: {e}", n + 1)))? {
                LogLine::Meta(m) if meta.is_none() && records.is_empty() => meta = Some(m),
                LogLine::Meta(_) => return Err(bad(format!("line {}: unexpected meta line", n + 1))),
                LogLine::Step(r) => records.push(r),
            }
        }
        let meta = meta.ok_or_else(|| bad("missing meta line".into()))?;
        let summary = metrics(&records, meta.burn_in, meta.diverged_at.is_some())?;
        Ok(Self { meta, records, summary })
    }

    pub fn read(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_jsonl(&text).map_err(|e| match e {
            Error::Format { what, reason, .. } => Error::Format {
                what,
                path: path.to_path_buf(),
                reason,
            },
            other => other,
        })
    }
}

/// Mixes two seeds into an independent stream seed (SplitMix64 finalizer).
pub fn stream_seed(base: u64, stream: u64) -> u64 {
    let mut z = base
        ^ stream
            .wrapping_mul(0x9E37_79B9_7F4A_7C15)
            .wrapping_add(0x632B_E59B_D9B4_E019);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Anchor ids for the `k`-th measurement: round-robin over anchors (TWR) or
/// consecutive pairs `(i, i + 1 mod m)` (TDoA).
pub fn schedule(constellation: &AnchorConstellation, mode: RangingMode, k: usize) -> (u32, Option<u32>) {
    let anchors = constellation.anchors();
    let m = anchors.len();
    let i = anchors[k % m].id;
    match mode {
        RangingMode::Twr => (i, None),
        RangingMode::Tdoa => (i, Some(anchors[(k + 1) % m].id)),
    }
}

fn vec3_noise(rng: &mut ChaCha8Rng, std: f64) -> Vector3<f64> {
    Vector3::from_fn(|_, _| std * rng.sample::<f64, _>(StandardNormal))
}

/// Open-loop experiment: the tag follows the reference exactly and the filter
/// only estimates.
pub fn run_estimation(config: &RunConfig) -> Result<RunLog> {
    simulate(config, RunKind::Estimation)
}

/// Closed-loop experiment: a kinematic tracking law steers the true tag using
/// the filter's estimate.
pub fn run_closed_loop(config: &RunConfig) -> Result<RunLog> {
    simulate(config, RunKind::ClosedLoop)
}

fn simulate(config: &RunConfig, kind: RunKind) -> Result<RunLog> {
    config.validate()?;
    let constellation = &config.constellation;
    let traj = Trajectory::new(config.trajectory.clone(), constellation.bounds())?;
    let dt = 1.0 / config.rate;
    let steps = (traj.duration() * config.rate).round() as usize;
    let model = if config.compensation {
        config.model.as_ref()
    } else {
        None
    };

    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(config.noise.seed, config.seed));
    let start = traj.pose(0.0)?;
    let init = EkfState::new(
        start.position + vec3_noise(&mut rng, config.filter.init_pos_std),
        start.velocity + vec3_noise(&mut rng, config.filter.init_vel_std),
        config.filter.init_pos_std,
        config.filter.init_vel_std,
        0.0,
    );
    let mut filter = UwbFilter::new(init, config.filter.clone());
    let mut plant = start.position;

    let mut records = Vec::with_capacity(steps);
    let mut diverged_at = None;
    for k in 0..steps {
        let t = k as f64 * dt;
        let reference = traj.pose(t)?;
        let truth = match kind {
            RunKind::Estimation => reference,
            RunKind::ClosedLoop => TagState {
                position: plant,
                ..reference
            },
        };
        let (i, j) = schedule(constellation, config.mode, k);
        let (m, sample) = sample_measurement(
            constellation,
            &truth,
            config.mode,
            i,
            j,
            &config.bias,
            &config.noise,
            &mut rng,
        )?;
        let outcome = match filter.process(&m, constellation, truth.attitude, model, &config.gate, config.rejection) {
            Ok(o) => o,
            Err(Error::DegenerateGeometry(_)) => {
                diverged_at = Some(t);
                break;
            }
            Err(e) => return Err(e),
        };
        let est = filter.state().position();
        records.push(StepRecord {
            t,
            mode: m.mode,
            i,
            j,
            raw: m.value,
            compensated: outcome.compensated,
            y_tilde: outcome.innovation,
            s: outcome.innovation_variance,
            reason: outcome.reason,
            est_x: est.x,
            est_y: est.y,
            est_z: est.z,
            true_x: truth.position.x,
            true_y: truth.position.y,
            true_z: truth.position.z,
            cmd_x: reference.position.x,
            cmd_y: reference.position.y,
            cmd_z: reference.position.z,
            outlier: sample.outlier,
        });

        let off = match kind {
            RunKind::Estimation => constellation.bounds().distance_outside(&est),
            RunKind::ClosedLoop => (est - truth.position).norm(),
        };
        if !(off <= DIVERGENCE_DISTANCE) {
            diverged_at = Some(t);
            break;
        }

        if kind == RunKind::ClosedLoop {
            let feedback = if config.controller.truth_feedback {
                truth.position
            } else {
                est
            };
            let mut correction = (reference.position - feedback) * config.controller.gain;
            let norm = correction.norm();
            if norm > config.controller.saturation {
                correction *= config.controller.saturation / norm;
            }
            plant += (reference.velocity + correction) * dt;
        }
    }

    let summary = metrics(&records, config.burn_in, diverged_at.is_some())?;
    Ok(RunLog {
        meta: RunMeta {
            kind,
            mode: config.mode,
            compensation: config.compensation,
            rejection: config.rejection,
            seed: config.seed,
            rate: config.rate,
            burn_in: config.burn_in,
            trajectory: config.trajectory.clone(),
            diverged_at,
        },
        records,
        summary,
    })
}
