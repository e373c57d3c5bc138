//! Position/velocity EKF fusing scalar UWB ranges, with the two-stage outlier
//! rejection: a dynamics-feasibility gate followed by a chi-squared test on
//! the innovation.

use std::collections::HashMap;

use nalgebra::{Matrix3, Matrix6, RowVector6, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{AnchorConstellation, RangingMode, TagState, MIN_SEPARATION};
use crate::measurement::{feature_for, NoiseConfig, RangeMeasurement};
use crate::nn::{compensate, MlpModel};

/// 0.95 quantile of the chi-squared distribution with one degree of freedom.
pub const CHI2_95_1DOF: f64 = 3.8415;

/// Filter mean `[p; v]`, covariance, and timestamp.
#[derive(Clone, Debug, PartialEq)]
pub struct EkfState {
    pub mean: Vector6<f64>,
    pub covariance: Matrix6<f64>,
    pub time: f64,
}

impl EkfState {
    pub fn new(position: Vector3<f64>, velocity: Vector3<f64>, pos_std: f64, vel_std: f64, time: f64) -> Self {
        let mut mean = Vector6::zeros();
        mean.fixed_rows_mut::<3>(0).copy_from(&position);
        mean.fixed_rows_mut::<3>(3).copy_from(&velocity);
        let mut cov = Matrix6::zeros();
        for k in 0..3 {
            cov[(k, k)] = pos_std * pos_std;
            cov[(k + 3, k + 3)] = vel_std * vel_std;
        }
        Self {
            mean,
            covariance: cov,
            time,
        }
    }

    pub fn position(&self) -> Vector3<f64> {
        self.mean.fixed_rows::<3>(0).into_owned()
    }

    pub fn velocity(&self) -> Vector3<f64> {
        self.mean.fixed_rows::<3>(3).into_owned()
    }

    /// Symmetric to 1e-9 and no eigenvalue below -1e-9.
    pub fn covariance_is_valid(&self) -> bool {
        let p = &self.covariance;
        if !p.iter().all(|v| v.is_finite()) {
            return false;
        }
        if (p - p.transpose()).amax() > 1e-9 {
            return false;
        }
        p.symmetric_eigenvalues().min() >= -1e-9
    }
}

fn symmetrize(p: &mut Matrix6<f64>) {
    *p = (*p + p.transpose()) * 0.5;
}

/// Constant-velocity prediction with white-acceleration process noise of
/// spectral density `process_noise` (m^2/s^3).
pub fn predict(state: &EkfState, dt: f64, process_noise: f64) -> Result<EkfState> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::InvalidConfig(format!("predict: dt must be > 0, got {dt}")));
    }
    let mut f = Matrix6::identity();
    let mut q = Matrix6::zeros();
    let (q11, q12, q22) = (dt.powi(3) / 3.0, dt * dt / 2.0, dt);
    for k in 0..3 {
        f[(k, k + 3)] = dt;
        q[(k, k)] = q11 * process_noise;
        q[(k, k + 3)] = q12 * process_noise;
        q[(k + 3, k)] = q12 * process_noise;
        q[(k + 3, k + 3)] = q22 * process_noise;
    }
    let mut covariance = f * state.covariance * f.transpose() + q;
    symmetrize(&mut covariance);
    Ok(EkfState {
        mean: f * state.mean,
        covariance,
        time: state.time + dt,
    })
}

/// Anchor positions a scalar measurement refers to.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum AnchorGeometry {
    Twr(Vector3<f64>),
    Tdoa(Vector3<f64>, Vector3<f64>),
}

impl AnchorGeometry {
    pub fn of(constellation: &AnchorConstellation, m: &RangeMeasurement) -> Result<Self> {
        let pi = constellation.position(m.anchor_i)?;
        match m.mode {
            RangingMode::Twr => Ok(Self::Twr(pi)),
            RangingMode::Tdoa => {
                let j = m
                    .anchor_j
                    .ok_or_else(|| Error::InvalidConfig("TDoA measurement needs two anchors".into()))?;
                Ok(Self::Tdoa(pi, constellation.position(j)?))
            }
        }
    }

    pub fn mode(&self) -> RangingMode {
        match self {
            Self::Twr(_) => RangingMode::Twr,
            Self::Tdoa(..) => RangingMode::Tdoa,
        }
    }
}

fn unit_from(anchor: &Vector3<f64>, p: &Vector3<f64>) -> Result<(f64, Vector3<f64>)> {
    let d = p - anchor;
    let r = d.norm();
    if !(r > MIN_SEPARATION) {
        return Err(Error::DegenerateGeometry("tag coincides with an anchor"));
    }
    Ok((r, d / r))
}

/// Predicted measurement `g(x)` and its Jacobian with respect to `[p; v]`.
pub fn measurement_model(state: &EkfState, anchors: &AnchorGeometry) -> Result<(f64, RowVector6<f64>)> {
    let p = state.position();
    let mut h = RowVector6::zeros();
    let (g, grad) = match anchors {
        AnchorGeometry::Twr(pi) => unit_from(pi, &p)?,
        AnchorGeometry::Tdoa(pi, pj) => {
            let (ri, ui) = unit_from(pi, &p)?;
            let (rj, uj) = unit_from(pj, &p)?;
            (ri - rj, ui - uj)
        }
    };
    h.fixed_columns_mut::<3>(0).copy_from(&grad.transpose());
    Ok((g, h))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GateConfig {
    /// Maximum acceleration magnitude of the platform, m/s^2.
    pub a_max: f64,
    /// Acceptance bound on y^2 / S.
    pub chi2_threshold: f64,
    /// Lower bound on the horizon used by the dynamics gate, seconds. The
    /// horizon is the time since the last accepted update, never shorter
    /// than this.
    pub dynamics_window: f64,
    /// Measurement variance R for TWR, m^2.
    pub r_twr: f64,
    /// Measurement variance R for TDoA, m^2.
    pub r_tdoa: f64,
    /// Standard deviation of systematic range error the filter expects on
    /// raw measurements, m. Added to R when no bias model is applied.
    pub bias_allowance: f64,
    /// Standard deviation of the error left after bias compensation, m.
    /// Added to R when a bias model is applied.
    pub residual_allowance: f64,
}

impl Default for GateConfig {
    fn default() -> Self {
        Self::from_noise(&NoiseConfig::default())
    }
}

/// Floor on R so a noiseless world still yields a well-posed update.
pub const MIN_MEASUREMENT_VARIANCE: f64 = 1e-6;

impl GateConfig {
    /// Defaults with R taken from the noise model's sigma^2.
    pub fn from_noise(noise: &NoiseConfig) -> Self {
        Self {
            a_max: 10.0,
            chi2_threshold: CHI2_95_1DOF,
            dynamics_window: 0.15,
            r_twr: (noise.sigma_twr * noise.sigma_twr).max(MIN_MEASUREMENT_VARIANCE),
            r_tdoa: (noise.sigma_tdoa * noise.sigma_tdoa).max(MIN_MEASUREMENT_VARIANCE),
            bias_allowance: 0.1,
            residual_allowance: 0.01,
        }
    }

    /// Noise-only variance R for `mode`.
    pub fn measurement_variance(&self, mode: RangingMode) -> f64 {
        match mode {
            RangingMode::Twr => self.r_twr,
            RangingMode::Tdoa => self.r_tdoa,
        }
    }

    /// Variance the filter uses: R plus the allowance for systematic error
    /// with or without compensation.
    pub fn effective_variance(&self, mode: RangingMode, compensated: bool) -> f64 {
        let allowance = if compensated {
            self.residual_allowance
        } else {
            self.bias_allowance
        };
        self.measurement_variance(mode) + allowance * allowance
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("a_max", self.a_max),
            ("chi2_threshold", self.chi2_threshold),
            ("r_twr", self.r_twr),
            ("r_tdoa", self.r_tdoa),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidConfig(format!("gate: {name} must be > 0")));
            }
        }
        for (name, v) in [
            ("dynamics_window", self.dynamics_window),
            ("bias_allowance", self.bias_allowance),
            ("residual_allowance", self.residual_allowance),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidConfig(format!("gate: {name} must be >= 0")));
            }
        }
        Ok(())
    }
}

/// Largest distance reachable in `dt` from speed `speed` under `a_max`,
/// with the acceleration aligned to the velocity.
pub fn max_travel(speed: f64, dt: f64, a_max: f64) -> f64 {
    speed * dt + 0.5 * a_max * dt * dt
}

/// Dynamics-feasibility test: |y| <= d_max for TWR, |y| <= 2 d_max for TDoA.
pub fn gate_dynamics(innovation: f64, state: &EkfState, dt: f64, config: &GateConfig, mode: RangingMode) -> bool {
    let d_max = max_travel(state.velocity().norm(), dt, config.a_max);
    let bound = match mode {
        RangingMode::Twr => d_max,
        RangingMode::Tdoa => 2.0 * d_max,
    };
    innovation.abs() <= bound
}

/// Innovation `y = value - g(x)` and its variance `S = G P G^T + R`.
pub fn innovation_stats(state: &EkfState, value: f64, anchors: &AnchorGeometry, r: f64) -> Result<(f64, f64)> {
    let (g, h) = measurement_model(state, anchors)?;
    let s = (h * state.covariance * h.transpose())[(0, 0)] + r;
    Ok((value - g, s))
}

/// Chi-squared test on a scalar innovation: accept iff y^2 / S <= threshold.
pub fn gate_chi2(y_tilde: f64, s: f64, config: &GateConfig) -> Result<bool> {
    if !(s > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "innovation variance must be > 0, got {s}"
        )));
    }
    Ok(y_tilde * y_tilde / s <= config.chi2_threshold)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateReason {
    Accepted,
    RejectedDynamics,
    RejectedChi2,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GateOutcome {
    pub accepted: bool,
    pub reason: GateReason,
    /// Measurement value after bias compensation (equal to raw without a model).
    pub compensated: f64,
    pub innovation: f64,
    pub innovation_variance: f64,
}

/// Everything besides the filter state that an update needs.
#[derive(Clone, Copy, Debug)]
pub struct UpdateContext<'a> {
    pub constellation: &'a AnchorConstellation,
    /// Tag attitude (roll, pitch, yaw) from the attitude estimator.
    pub attitude: Vector3<f64>,
    pub model: Option<&'a MlpModel>,
    pub gate: &'a GateConfig,
    /// When false both gates are bypassed.
    pub rejection: bool,
    /// Horizon for the dynamics gate, seconds.
    pub gate_dt: f64,
}

/// Compensate, gate, then fuse one scalar measurement.
///
/// A rejected measurement leaves the state untouched.
pub fn update(state: &EkfState, m: &RangeMeasurement, ctx: &UpdateContext<'_>) -> Result<(EkfState, GateOutcome)> {
    let anchors = AnchorGeometry::of(ctx.constellation, m)?;
    let compensated = match ctx.model {
        Some(model) => {
            let tag = TagState {
                position: state.position(),
                velocity: state.velocity(),
                attitude: ctx.attitude,
                time: m.timestamp,
            };
            let feature = feature_for(ctx.constellation, &tag, m.mode, m.anchor_i, m.anchor_j)?;
            compensate(m, model, &feature)?
        }
        None => m.value,
    };
    let r = ctx.gate.effective_variance(m.mode, ctx.model.is_some());
    let (g, h) = measurement_model(state, &anchors)?;
    let ph = state.covariance * h.transpose();
    let s = (h * ph)[(0, 0)] + r;
    let y = compensated - g;

    let mut outcome = GateOutcome {
        accepted: false,
        reason: GateReason::Accepted,
        compensated,
        innovation: y,
        innovation_variance: s,
    };
    if ctx.rejection {
        if !gate_dynamics(y, state, ctx.gate_dt, ctx.gate, m.mode) {
            outcome.reason = GateReason::RejectedDynamics;
            return Ok((state.clone(), outcome));
        }
        if !gate_chi2(y, s, ctx.gate)? {
            outcome.reason = GateReason::RejectedChi2;
            return Ok((state.clone(), outcome));
        }
    }
    outcome.accepted = true;

    let k = ph / s;
    let i_kh = Matrix6::identity() - k * h;
    let mut covariance = i_kh * state.covariance * i_kh.transpose() + k * k.transpose() * r;
    symmetrize(&mut covariance);
    let next = EkfState {
        mean: state.mean + k * y,
        covariance,
        time: state.time,
    };
    Ok((next, outcome))
}

/// Tunables of a running filter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FilterConfig {
    /// White-acceleration spectral density, m^2/s^3.
    pub process_noise: f64,
    /// Initial position standard deviation, meters.
    pub init_pos_std: f64,
    /// Initial velocity standard deviation, m/s.
    pub init_vel_std: f64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            process_noise: 0.1,
            init_pos_std: 0.1,
            init_vel_std: 0.05,
        }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("process_noise", self.process_noise),
            ("init_pos_std", self.init_pos_std),
            ("init_vel_std", self.init_vel_std),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidConfig(format!("filter: {name} must be > 0")));
            }
        }
        Ok(())
    }
}

/// A filter instance that owns its state and tracks the time of the last
/// accepted measurement for the dynamics gate.
#[derive(Clone, Debug)]
pub struct UwbFilter {
    state: EkfState,
    config: FilterConfig,
    start: f64,
    /// Time of the last accepted update per link (anchor or anchor pair).
    last_accept: HashMap<(u32, Option<u32>), f64>,
}

impl UwbFilter {
    pub fn new(initial: EkfState, config: FilterConfig) -> Self {
        Self {
            start: initial.time,
            state: initial,
            config,
            last_accept: HashMap::new(),
        }
    }

    pub fn state(&self) -> &EkfState {
        &self.state
    }

    /// Predicts forward to `t`; a no-op when `t` is not ahead of the state.
    pub fn propagate_to(&mut self, t: f64) -> Result<()> {
        let dt = t - self.state.time;
        if dt > 0.0 {
            self.state = predict(&self.state, dt, self.config.process_noise)?;
        }
        Ok(())
    }

    /// Predicts to the measurement time and runs [`update`].
    pub fn process(
        &mut self,
        m: &RangeMeasurement,
        constellation: &AnchorConstellation,
        attitude: Vector3<f64>,
        model: Option<&MlpModel>,
        gate: &GateConfig,
        rejection: bool,
    ) -> Result<GateOutcome> {
        self.propagate_to(m.timestamp)?;
        let link = (m.anchor_i, m.anchor_j);
        let since = self.last_accept.get(&link).copied().unwrap_or(self.start);
        let ctx = UpdateContext {
            constellation,
            attitude,
            model,
            gate,
            rejection,
            gate_dt: (m.timestamp - since).max(gate.dynamics_window),
        };
        let (next, outcome) = update(&self.state, m, &ctx)?;
        if outcome.accepted {
            self.last_accept.insert(link, m.timestamp);
        }
        self.state = next;
        Ok(outcome)
    }
}

/// Converts a covariance block to its diagonal standard deviations.
pub fn position_std(state: &EkfState) -> Vector3<f64> {
    let block: Matrix3<f64> = state.covariance.fixed_view::<3, 3>(0, 0).into_owned();
    Vector3::new(block[(0, 0)].sqrt(), block[(1, 1)].sqrt(), block[(2, 2)].sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn v(x: f64, y: f64, z: f64) -> Vector3<f64> {
        Vector3::new(x, y, z)
    }

    fn random_psd(rng: &mut ChaCha8Rng) -> Matrix6<f64> {
        let a = Matrix6::from_fn(|_, _| rng.random_range(-0.5..0.5));
        a * a.transpose()
    }

    #[test]
    fn predict_examples() {
        let s = EkfState::new(v(1.0, 2.0, 3.0), Vector3::zeros(), 0.1, 0.1, 0.0);
        let n = predict(&s, 0.3, 0.5).unwrap();
        assert_eq!(n.position(), s.position());
        assert!(n.covariance.trace() > s.covariance.trace());

        let s = EkfState::new(Vector3::zeros(), v(1.0, 0.0, 0.0), 0.1, 0.1, 0.0);
        let n = predict(&s, 0.5, 0.5).unwrap();
        assert_eq!(n.position(), v(0.5, 0.0, 0.0));
        assert_eq!(n.time, 0.5);

        assert!(predict(&s, 0.0, 0.5).is_err());
        assert!(predict(&s, -1.0, 0.5).is_err());
    }

    #[test]
    fn predict_never_shrinks_trace() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let mut s = EkfState::new(Vector3::zeros(), Vector3::zeros(), 0.0, 0.0, 0.0);
            s.covariance = random_psd(&mut rng);
            let dt = rng.random_range(1e-3..0.5);
            let n = predict(&s, dt, rng.random_range(0.0..2.0)).unwrap();
            assert!(n.covariance_is_valid());
            // P' - F P F^T is the process noise, which is PSD.
            let noiseless = predict(&s, dt, 0.0).unwrap();
            let diff = n.covariance - noiseless.covariance;
            assert!(diff.symmetric_eigenvalues().min() >= -1e-12);

            // Without position/velocity correlation the trace cannot drop.
            let mut d = s.clone();
            d.covariance = Matrix6::from_diagonal(&s.covariance.diagonal());
            let n = predict(&d, dt, rng.random_range(0.0..2.0)).unwrap();
            assert!(n.covariance.trace() >= d.covariance.trace());
        }
    }

    #[test]
    fn measurement_model_examples() {
        let s = EkfState::new(Vector3::zeros(), Vector3::zeros(), 0.1, 0.1, 0.0);
        let (g, h) = measurement_model(&s, &AnchorGeometry::Twr(v(3.0, 4.0, 0.0))).unwrap();
        assert_eq!(g, 5.0);
        assert!((h[0] + 0.6).abs() < 1e-15 && (h[1] + 0.8).abs() < 1e-15 && h[2] == 0.0);
        assert!(h.fixed_columns::<3>(3).iter().all(|x| *x == 0.0));

        let s = EkfState::new(v(0.0, 1.5, 0.7), Vector3::zeros(), 0.1, 0.1, 0.0);
        let (g, _) = measurement_model(&s, &AnchorGeometry::Tdoa(v(-2.0, 0.0, 0.0), v(2.0, 0.0, 0.0))).unwrap();
        assert!(g.abs() < 1e-15);

        let s = EkfState::new(v(3.0, 4.0, 0.0), Vector3::zeros(), 0.1, 0.1, 0.0);
        assert!(matches!(
            measurement_model(&s, &AnchorGeometry::Twr(v(3.0, 4.0, 0.005))),
            Err(Error::DegenerateGeometry(_))
        ));
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut pt = || {
            v(
                rng.random_range(-5.0..5.0),
                rng.random_range(-5.0..5.0),
                rng.random_range(-5.0..5.0),
            )
        };
        for case in 0..100 {
            let p = pt();
            let (a, b) = (pt(), pt());
            if (p - a).norm() < 0.5 || (p - b).norm() < 0.5 {
                continue;
            }
            let geo = if case % 2 == 0 {
                AnchorGeometry::Twr(a)
            } else {
                AnchorGeometry::Tdoa(a, b)
            };
            let s = EkfState::new(p, Vector3::zeros(), 0.1, 0.1, 0.0);
            let (_, h) = measurement_model(&s, &geo).unwrap();
            let step = 1e-6;
            for k in 0..6 {
                let mut plus = s.clone();
                let mut minus = s.clone();
                plus.mean[k] += step;
                minus.mean[k] -= step;
                let fd = (measurement_model(&plus, &geo).unwrap().0 - measurement_model(&minus, &geo).unwrap().0)
                    / (2.0 * step);
                assert!((fd - h[k]).abs() < 1e-6, "case {case} k {k}: {fd} vs {}", h[k]);
            }
        }
    }

    #[test]
    fn dynamics_gate_examples() {
        let cfg = GateConfig {
            a_max: 10.0,
            ..GateConfig::default()
        };
        let s = EkfState::new(Vector3::zeros(), v(1.0, 0.0, 0.0), 0.1, 0.1, 0.0);
        assert!((max_travel(1.0, 0.005, 10.0) - 0.005125).abs() < 1e-15);
        assert!(gate_dynamics(0.004, &s, 0.005, &cfg, RangingMode::Twr));
        assert!(!gate_dynamics(0.006, &s, 0.005, &cfg, RangingMode::Twr));
        assert!(gate_dynamics(0.006, &s, 0.005, &cfg, RangingMode::Tdoa));
        assert!(!gate_dynamics(-0.0103, &s, 0.005, &cfg, RangingMode::Tdoa));

        let still = EkfState::new(Vector3::zeros(), Vector3::zeros(), 0.1, 0.1, 0.0);
        let dt = 1e-3;
        let bound = 0.5 * 10.0 * dt * dt;
        assert!(!gate_dynamics(bound * 1.01, &still, dt, &cfg, RangingMode::Twr));
        assert!(gate_dynamics(bound * 0.99, &still, dt, &cfg, RangingMode::Twr));
    }

    #[test]
    fn innovation_stats_examples() {
        let mut s = EkfState::new(Vector3::zeros(), Vector3::zeros(), 0.0, 0.0, 0.0);
        let geo = AnchorGeometry::Twr(v(3.0, 4.0, 0.0));
        let (y, var) = innovation_stats(&s, 5.2, &geo, 0.0025).unwrap();
        assert!((y - 0.2).abs() < 1e-12);
        assert_eq!(var, 0.0025);
        let (y, _) = innovation_stats(&s, 5.0, &geo, 0.0025).unwrap();
        assert_eq!(y, 0.0);

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            s.covariance = random_psd(&mut rng);
            let (_, var) = innovation_stats(&s, 5.0, &geo, 0.0025).unwrap();
            assert!(var >= 0.0025);
        }
    }

    #[test]
    fn chi2_gate_examples() {
        let cfg = GateConfig::default();
        assert!(gate_chi2(0.0, 1e-6, &cfg).unwrap());
        assert!(gate_chi2(3.84f64.sqrt(), 1.0, &cfg).unwrap());
        assert!(!gate_chi2(3.85f64.sqrt(), 1.0, &cfg).unwrap());
        assert!(gate_chi2(1.0, 0.0, &cfg).is_err());
        assert!(gate_chi2(1.0, -1.0, &cfg).is_err());
    }

    #[test]
    fn chi2_gate_matches_sigma_bound() {
        // One-dof identity: y^2/S <= 3.8415 <=> |y| <= sqrt(3.8415) sqrt(S) ~ 1.96 sqrt(S).
        let cfg = GateConfig::default();
        let z = CHI2_95_1DOF.sqrt();
        assert!((z - 1.9600).abs() < 1e-4);
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..100_000 {
            let s: f64 = rng.random_range(1e-4..4.0);
            let y: f64 = rng.random_range(-4.0..4.0) * s.sqrt();
            let by_sigma = y.abs() <= z * s.sqrt();
            if (y * y / s - CHI2_95_1DOF).abs() > 1e-9 {
                assert_eq!(gate_chi2(y, s, &cfg).unwrap(), by_sigma);
            }
        }
    }

    fn ctx<'a>(c: &'a AnchorConstellation, gate: &'a GateConfig, rejection: bool) -> UpdateContext<'a> {
        UpdateContext {
            constellation: c,
            attitude: Vector3::zeros(),
            model: None,
            gate,
            rejection,
            gate_dt: 0.15,
        }
    }

    #[test]
    fn allowance_depends_on_compensation() {
        let gate = GateConfig {
            r_twr: 1e-4,
            bias_allowance: 0.1,
            residual_allowance: 0.01,
            ..GateConfig::default()
        };
        assert!((gate.effective_variance(RangingMode::Twr, false) - 0.0101).abs() < 1e-15);
        assert!((gate.effective_variance(RangingMode::Twr, true) - 0.0002).abs() < 1e-15);
        assert!(GateConfig {
            bias_allowance: -0.1,
            ..gate
        }
        .validate()
        .is_err());
    }

    #[test]
    fn rejected_measurement_leaves_state_bitwise_equal() {
        let c = AnchorConstellation::default_arena();
        let gate = GateConfig {
            r_twr: 4e-4,
            bias_allowance: 0.0,
            ..GateConfig::default()
        };
        let s = EkfState::new(v(3.0, 4.0, 1.5), Vector3::zeros(), 0.02, 0.05, 1.0);
        let truth = (s.position() - c.position(0).unwrap()).norm();
        let m = RangeMeasurement {
            mode: RangingMode::Twr,
            anchor_i: 0,
            anchor_j: None,
            value: truth + 3.0,
            timestamp: 1.0,
        };
        let (n, o) = update(&s, &m, &ctx(&c, &gate, true)).unwrap();
        assert!(!o.accepted);
        assert_eq!(o.reason, GateReason::RejectedDynamics);
        assert!(n
            .mean
            .iter()
            .zip(s.mean.iter())
            .all(|(a, b)| a.to_bits() == b.to_bits()));
        assert!(n
            .covariance
            .iter()
            .zip(s.covariance.iter())
            .all(|(a, b)| a.to_bits() == b.to_bits()));

        // Passes the dynamics gate but fails chi-squared.
        let m = RangeMeasurement {
            value: truth + 0.08,
            ..m
        };
        let (n, o) = update(&s, &m, &ctx(&c, &gate, true)).unwrap();
        assert_eq!(o.reason, GateReason::RejectedChi2);
        assert_eq!(n, s);

        let (n, o) = update(&s, &m, &ctx(&c, &gate, false)).unwrap();
        assert!(o.accepted);
        assert_ne!(n, s);
    }

    #[test]
    fn perfect_measurement_contracts_covariance() {
        let c = AnchorConstellation::default_arena();
        let gate = GateConfig::default();
        let s = EkfState::new(v(3.0, 4.0, 1.5), v(0.2, 0.0, 0.0), 0.3, 0.1, 0.0);
        let pred = (s.position() - c.position(5).unwrap()).norm();
        let m = RangeMeasurement {
            mode: RangingMode::Twr,
            anchor_i: 5,
            anchor_j: None,
            value: pred,
            timestamp: 0.0,
        };
        let (n, o) = update(&s, &m, &ctx(&c, &gate, true)).unwrap();
        assert!(o.accepted);
        assert_eq!(o.innovation, 0.0);
        assert_eq!(n.mean, s.mean);
        assert!(n.covariance.trace() < s.covariance.trace());
    }

    #[test]
    fn static_tag_converges_from_one_meter_offset() {
        let c = AnchorConstellation::default_arena();
        let gate = GateConfig {
            r_twr: 1e-4,
            ..GateConfig::default()
        };
        let truth = v(2.5, 3.0, 1.2);
        let mut f = UwbFilter::new(
            EkfState::new(truth + v(0.6, -0.6, 0.529), Vector3::zeros(), 1.0, 0.1, 0.0),
            FilterConfig {
                process_noise: 1e-3,
                ..FilterConfig::default()
            },
        );
        for k in 0..200 {
            let id = (k % 8) as u32;
            let t = (k + 1) as f64 * 0.005;
            let m = RangeMeasurement {
                mode: RangingMode::Twr,
                anchor_i: id,
                anchor_j: None,
                value: (truth - c.position(id).unwrap()).norm(),
                timestamp: t,
            };
            f.process(&m, &c, Vector3::zeros(), None, &gate, false).unwrap();
        }
        let err = (f.state().position() - truth).norm();
        assert!(err < 0.01, "error {err}");
    }

    #[test]
    fn dynamics_rejections_never_reach_chi2() {
        let c = AnchorConstellation::default_arena();
        let gate = GateConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let s = EkfState::new(v(3.0, 4.0, 1.5), Vector3::zeros(), 1e-3, 1e-3, 0.0);
        for _ in 0..1000 {
            let offset: f64 = rng.random_range(-2.0..2.0);
            let pred = (s.position() - c.position(1).unwrap()).norm();
            let m = RangeMeasurement {
                mode: RangingMode::Twr,
                anchor_i: 1,
                anchor_j: None,
                value: pred + offset,
                timestamp: 0.0,
            };
            let (_, o) = update(&s, &m, &ctx(&c, &gate, true)).unwrap();
            let dyn_ok = gate_dynamics(o.innovation, &s, 0.15, &gate, RangingMode::Twr);
            match o.reason {
                GateReason::RejectedDynamics => assert!(!dyn_ok),
                GateReason::RejectedChi2 => {
                    assert!(dyn_ok && !gate_chi2(o.innovation, o.innovation_variance, &gate).unwrap())
                }
                GateReason::Accepted => assert!(dyn_ok),
            }
        }
    }

    #[test]
    fn covariance_stays_valid_over_many_cycles() {
        let c = AnchorConstellation::default_arena();
        let gate = GateConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut s = EkfState::new(v(3.5, 4.0, 1.5), Vector3::zeros(), 0.5, 0.2, 0.0);
        for k in 0..20_000 {
            s = predict(&s, rng.random_range(1e-3..0.02), rng.random_range(0.01..2.0)).unwrap();
            let mode = if k % 2 == 0 {
                RangingMode::Twr
            } else {
                RangingMode::Tdoa
            };
            let i = rng.random_range(0..8u32);
            let j = (i + 1) % 8;
            let truth = v(3.5, 4.0, 1.5);
            let value = match mode {
                RangingMode::Twr => (truth - c.position(i).unwrap()).norm(),
                RangingMode::Tdoa => (truth - c.position(i).unwrap()).norm() - (truth - c.position(j).unwrap()).norm(),
            } + 0.03 * rng.sample::<f64, _>(StandardNormal);
            let m = RangeMeasurement {
                mode,
                anchor_i: i,
                anchor_j: (mode == RangingMode::Tdoa).then_some(j),
                value,
                timestamp: s.time,
            };
            s = update(&s, &m, &ctx(&c, &gate, k % 3 != 0)).unwrap().0;
            assert!(s.covariance_is_valid(), "cycle {k}");
        }
    }
}
