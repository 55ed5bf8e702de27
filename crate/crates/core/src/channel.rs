//! Fibre link between a source node and the measurement node.
//!
//! Loss follows the usual exponential law. The arrival-time offset and the
//! polarization mismatch perform independent Brownian walks and are reset
//! periodically by an instantaneous feedback controller.

use std::f64::consts::{FRAC_PI_2, PI};

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChannelParams {
    pub length_km: f64,
    pub attenuation_db_per_km: f64,
    /// Random-walk intensity of the arrival-time offset, ps/√s.
    pub delay_drift_rate: f64,
    /// Random-walk intensity of the polarization angle, rad/√s.
    pub pol_drift_rate: f64,
    pub feedback_enabled: bool,
    pub feedback_interval_s: f64,
    /// Delay-line step; the residual after a correction is at most half of it.
    pub correction_resolution_ps: f64,
    /// Fraction of the polarization error left after a correction.
    pub pol_leakage: f64,
    /// Photon coherence time set by the narrowband filters, ps.
    pub coherence_time_ps: f64,
}

impl Default for ChannelParams {
    fn default() -> Self {
        Self {
            length_km: 14.7,
            attenuation_db_per_km: 0.2,
            delay_drift_rate: 1.0,
            pol_drift_rate: 0.005,
            feedback_enabled: true,
            feedback_interval_s: 200.0,
            correction_resolution_ps: 1.0,
            pol_leakage: 0.1,
            coherence_time_ps: 110.0,
        }
    }
}

impl ChannelParams {
    /// Default link of the given length.
    pub fn with_length(length_km: f64) -> Self {
        Self {
            length_km,
            ..Self::default()
        }
    }

    /// Same link with both drifts switched off.
    pub fn without_drift(mut self) -> Self {
        self.delay_drift_rate = 0.0;
        self.pol_drift_rate = 0.0;
        self
    }

    pub fn validate(&self, path: &str) -> Result<()> {
        let nonneg = [
            ("length_km", self.length_km),
            ("attenuation_db_per_km", self.attenuation_db_per_km),
            ("delay_drift_rate", self.delay_drift_rate),
            ("pol_drift_rate", self.pol_drift_rate),
            ("feedback_interval_s", self.feedback_interval_s),
            ("correction_resolution_ps", self.correction_resolution_ps),
            ("coherence_time_ps", self.coherence_time_ps),
        ];
        for (name, v) in nonneg {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(
                    format!("{path}.{name}"),
                    "must be a finite value ≥ 0",
                ));
            }
        }
        if !(0.0..=1.0).contains(&self.pol_leakage) {
            return Err(Error::config(
                format!("{path}.pol_leakage"),
                "must lie in [0, 1]",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ChannelState {
    pub delay_offset_ps: f64,
    /// Folded into `[0, π/2]`.
    pub pol_angle_rad: f64,
    pub elapsed_since_feedback_s: f64,
}

/// Folds an angle between linear polarizations into `[0, π/2]`.
pub fn fold_pol_angle(theta: f64) -> f64 {
    let t = theta.rem_euclid(PI);
    if t > FRAC_PI_2 {
        PI - t
    } else {
        t
    }
}

/// Power transmittance `10^(−α·L/10)`.
pub fn transmittance(params: &ChannelParams) -> f64 {
    10f64.powf(-params.attenuation_db_per_km * params.length_km / 10.0)
}

/// Lets the link drift freely for `dt` seconds.
pub fn advance_drift<R: Rng + ?Sized>(
    state: ChannelState,
    dt: f64,
    params: &ChannelParams,
    rng: &mut R,
) -> ChannelState {
    let dt = dt.max(0.0);
    let sd = dt.sqrt();
    let mut next = state;
    if params.delay_drift_rate > 0.0 {
        let z: f64 = StandardNormal.sample(rng);
        next.delay_offset_ps += params.delay_drift_rate * sd * z;
    }
    if params.pol_drift_rate > 0.0 {
        let z: f64 = StandardNormal.sample(rng);
        next.pol_angle_rad = fold_pol_angle(state.pol_angle_rad + params.pol_drift_rate * sd * z);
    }
    next.elapsed_since_feedback_s += dt;
    next
}

/// Runs the feedback controllers if a correction is due.
pub fn apply_feedback(state: ChannelState, params: &ChannelParams) -> ChannelState {
    if !params.feedback_enabled || state.elapsed_since_feedback_s < params.feedback_interval_s {
        return state;
    }
    let res = params.correction_resolution_ps;
    let residual = if res > 0.0 {
        state.delay_offset_ps - res * (state.delay_offset_ps / res).round()
    } else {
        0.0
    };
    ChannelState {
        delay_offset_ps: residual,
        pol_angle_rad: fold_pol_angle(state.pol_angle_rad * params.pol_leakage),
        elapsed_since_feedback_s: 0.0,
    }
}

/// Indistinguishability of the two photons meeting at the beam splitter.
pub fn mode_overlap(a: &ChannelState, b: &ChannelState, params: &ChannelParams) -> f64 {
    let pol = (a.pol_angle_rad - b.pol_angle_rad).cos().powi(2);
    let dt = a.delay_offset_ps - b.delay_offset_ps;
    let sigma = params.coherence_time_ps;
    let temporal = if sigma > 0.0 {
        (-dt * dt / (2.0 * sigma * sigma)).exp()
    } else if dt == 0.0 {
        1.0
    } else {
        0.0
    };
    (pol * temporal).clamp(0.0, 1.0)
}

/// Pair of link states sampled on a regular time grid.
///
/// Both links evolve sequentially from `t = 0`; the feedback controllers
/// act between steps. Step `k` holds the state at time `k·step_s`.
#[derive(Debug, Clone)]
pub struct DriftTrajectory {
    step_s: f64,
    overlap: Vec<f64>,
}

impl DriftTrajectory {
    pub fn simulate<R: Rng + ?Sized>(
        params_a: &ChannelParams,
        params_b: &ChannelParams,
        step_s: f64,
        duration_s: f64,
        rng_a: &mut R,
        rng_b: &mut R,
    ) -> Self {
        let steps = if step_s > 0.0 {
            (duration_s / step_s).ceil() as usize + 1
        } else {
            1
        };
        let mut a = ChannelState::default();
        let mut b = ChannelState::default();
        let mut overlap = Vec::with_capacity(steps);
        overlap.push(mode_overlap(&a, &b, params_a));
        for _ in 1..steps {
            a = apply_feedback(advance_drift(a, step_s, params_a, rng_a), params_a);
            b = apply_feedback(advance_drift(b, step_s, params_b, rng_b), params_b);
            overlap.push(mode_overlap(&a, &b, params_a));
        }
        Self { step_s, overlap }
    }

    /// Constant overlap of 1, for drift-free links.
    pub fn ideal() -> Self {
        Self {
            step_s: 0.0,
            overlap: vec![1.0],
        }
    }

    pub fn overlap_at(&self, t: f64) -> f64 {
        if self.step_s <= 0.0 {
            return self.overlap[0];
        }
        let k = (t / self.step_s).floor() as usize;
        self.overlap[k.min(self.overlap.len() - 1)]
    }

    pub fn mean_overlap(&self) -> f64 {
        self.overlap.iter().sum::<f64>() / self.overlap.len() as f64
    }

    pub fn len(&self) -> usize {
        self.overlap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.overlap.is_empty()
    }
}
