//! Pulsed pair source emitting time-bin entangled photon pairs.
//!
//! Each double pulse emits a Poisson-distributed number of pairs. The first
//! pair of a window is the coherent `(|1,1⟩ + e^{iδ}|2,2⟩)/√2` superposition;
//! any further pairs are incoherent contaminants with a uniformly random bin.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::timebin::{Bin, TimeBinState};

/// Photon-number statistics of one source.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EmissionModel {
    #[default]
    Poisson,
    /// Exactly one coherent pair in every window; `mu` is ignored.
    SinglePair,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SourceParams {
    /// Mean pair number per double pulse.
    pub mu: f64,
    /// Relative phase of the two pump pulses, radians.
    pub pump_phase_delta: f64,
    /// Hz.
    pub repetition_rate: f64,
    /// Mean number of unpaired noise photons per window on each arm.
    pub noise_photon_mean: f64,
    pub emission: EmissionModel,
}

impl Default for SourceParams {
    fn default() -> Self {
        Self {
            mu: 0.03,
            pump_phase_delta: 0.0,
            repetition_rate: 300e6,
            noise_photon_mean: 0.0,
            emission: EmissionModel::Poisson,
        }
    }
}

impl SourceParams {
    pub fn validate(&self, path: &str) -> Result<()> {
        if !(self.mu >= 0.0 && self.mu.is_finite()) {
            return Err(Error::config(
                format!("{path}.mu"),
                "must be a finite value ≥ 0",
            ));
        }
        if !self.pump_phase_delta.is_finite() {
            return Err(Error::config(
                format!("{path}.pump_phase_delta"),
                "must be finite",
            ));
        }
        if !(self.repetition_rate > 0.0 && self.repetition_rate.is_finite()) {
            return Err(Error::config(
                format!("{path}.repetition_rate"),
                "must be a finite value > 0",
            ));
        }
        if !(self.noise_photon_mean >= 0.0 && self.noise_photon_mean.is_finite()) {
            return Err(Error::config(
                format!("{path}.noise_photon_mean"),
                "must be a finite value ≥ 0",
            ));
        }
        Ok(())
    }

    /// Mean number of pairs per window under the selected emission model.
    pub fn mean_pairs(&self) -> f64 {
        match self.emission {
            EmissionModel::Poisson => self.mu,
            EmissionModel::SinglePair => 1.0,
        }
    }
}

/// One emitted signal–idler pair.
///
/// For a coherent pair the bins are the outcome the pair collapses to if its
/// time of emission is revealed; they are drawn uniformly and only consulted
/// in that case.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairRecord {
    pub signal_bin: Bin,
    pub idler_bin: Bin,
    pub coherent: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmissionRecord {
    pub window_index: u64,
    pub pairs: Vec<PairRecord>,
}

impl EmissionRecord {
    pub fn pair_count(&self) -> usize {
        self.pairs.len()
    }
}

pub(crate) fn random_bin<R: Rng + ?Sized>(rng: &mut R) -> Bin {
    if rng.random::<bool>() {
        Bin::Late
    } else {
        Bin::Early
    }
}

pub(crate) fn sample_pair<R: Rng + ?Sized>(coherent: bool, rng: &mut R) -> PairRecord {
    let bin = random_bin(rng);
    PairRecord {
        signal_bin: bin,
        idler_bin: bin,
        coherent,
    }
}

/// Builds the pair list for a window that emitted `count` pairs.
pub(crate) fn pairs_for_count<R: Rng + ?Sized>(count: usize, rng: &mut R) -> Vec<PairRecord> {
    (0..count).map(|k| sample_pair(k == 0, rng)).collect()
}

pub(crate) fn sample_count<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> Result<usize> {
    if mean == 0.0 {
        return Ok(0);
    }
    let dist =
        Poisson::new(mean).map_err(|e| Error::invalid(format!("poisson mean {mean}: {e}")))?;
    Ok(dist.sample(rng) as usize)
}

/// Draws the emission of one double-pulse window.
pub fn sample_emission<R: Rng + ?Sized>(
    params: &SourceParams,
    window_index: u64,
    rng: &mut R,
) -> Result<EmissionRecord> {
    if !(params.mu >= 0.0 && params.mu.is_finite()) {
        return Err(Error::invalid(format!(
            "mean pair number {} must be ≥ 0",
            params.mu
        )));
    }
    let count = match params.emission {
        EmissionModel::Poisson => sample_count(params.mu, rng)?,
        EmissionModel::SinglePair => 1,
    };
    Ok(EmissionRecord {
        window_index,
        pairs: pairs_for_count(count, rng),
    })
}

/// Emission for `window_index` on the stream owned by `(master_seed, source_id)`.
pub fn sample_emission_at(
    params: &SourceParams,
    master_seed: u64,
    source_id: u64,
    window_index: u64,
) -> Result<EmissionRecord> {
    let mut rng = rng::window_stream(master_seed, source_id, window_index);
    sample_emission(params, window_index, &mut rng)
}

/// Signal–idler state of a single coherent pair, ordered (signal, idler).
pub fn heralded_pair_state(params: &SourceParams) -> TimeBinState {
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let zero = Complex64::new(0.0, 0.0);
    TimeBinState::try_new([
        Complex64::new(h, 0.0),
        zero,
        zero,
        Complex64::from_polar(h, params.pump_phase_delta),
    ])
    .expect("pair state is normalized by construction")
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::{FRAC_1_SQRT_2, PI};

    #[test]
    fn zero_mu_never_emits() {
        let params = SourceParams {
            mu: 0.0,
            ..Default::default()
        };
        for w in 0..10_000 {
            let rec = sample_emission_at(&params, 7, 0, w).unwrap();
            assert_eq!(rec.pair_count(), 0);
        }
    }

    #[test]
    fn negative_mu_is_rejected() {
        let params = SourceParams {
            mu: -1.0,
            ..Default::default()
        };
        let mut rng = rng::window_stream(1, 0, 0);
        assert!(sample_emission(&params, 0, &mut rng).is_err());
        assert!(params.validate("sources.a").is_err());
    }

    #[test]
    fn pairs_are_time_correlated_and_first_is_coherent() {
        let params = SourceParams {
            mu: 2.0,
            ..Default::default()
        };
        for w in 0..2_000 {
            let rec = sample_emission_at(&params, 3, 1, w).unwrap();
            for (k, p) in rec.pairs.iter().enumerate() {
                assert_eq!(p.signal_bin, p.idler_bin);
                assert_eq!(p.coherent, k == 0);
            }
        }
    }

    #[test]
    fn emission_is_call_order_independent() {
        let params = SourceParams::default();
        let forward: Vec<_> = (0..500)
            .map(|w| sample_emission_at(&params, 99, 0, w).unwrap())
            .collect();
        for w in (0..500).rev() {
            assert_eq!(
                sample_emission_at(&params, 99, 0, w).unwrap(),
                forward[w as usize]
            );
        }
        let other: Vec<_> = (0..500)
            .map(|w| sample_emission_at(&params, 99, 1, w).unwrap())
            .collect();
        assert_ne!(forward, other);
    }

    #[test]
    fn single_pair_model_always_emits_one() {
        let params = SourceParams {
            emission: EmissionModel::SinglePair,
            ..Default::default()
        };
        for w in 0..100 {
            let rec = sample_emission_at(&params, 0, 0, w).unwrap();
            assert_eq!(rec.pair_count(), 1);
            assert!(rec.pairs[0].coherent);
        }
    }

    #[test]
    fn pair_state_phase() {
        let h = FRAC_1_SQRT_2;
        let s = heralded_pair_state(&SourceParams::default());
        assert_abs_diff_eq!(s.amplitudes()[0].re, h);
        assert_abs_diff_eq!(s.amplitudes()[3].re, h);
        assert_abs_diff_eq!(s.amplitudes()[1].norm(), 0.0);
        assert_abs_diff_eq!(s.norm_sqr(), 1.0, epsilon = 1e-12);

        let s = heralded_pair_state(&SourceParams {
            pump_phase_delta: PI,
            ..Default::default()
        });
        assert_abs_diff_eq!(s.amplitudes()[3].re, -h, epsilon = 1e-15);
        assert_abs_diff_eq!(s.amplitudes()[3].im, 0.0, epsilon = 1e-15);
    }
}
