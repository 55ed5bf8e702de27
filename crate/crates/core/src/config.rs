//! TOML run configuration.
//!
//! Every section is optional; missing keys take the documented defaults and
//! unknown keys are rejected. Errors carry the dotted path of the offending
//! key.

use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};

use crate::bsm::DetectorParams;
use crate::channel::ChannelParams;
use crate::error::{Error, Result};
use crate::experiment::{BasisProbabilities, ExperimentConfig};
use crate::finite_key::{linear_grid, SecurityParams, SiftedSummary};
use crate::source::SourceParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerSide<T> {
    #[serde(default)]
    pub a: T,
    #[serde(default)]
    pub b: T,
}

impl<T: Default> Default for PerSide<T> {
    fn default() -> Self {
        Self {
            a: T::default(),
            b: T::default(),
        }
    }
}

/// Fibre links; default lengths differ per side, so the sides are spelled out.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Channels {
    #[serde(default = "default_channel_a")]
    pub a: ChannelParams,
    #[serde(default = "default_channel_b")]
    pub b: ChannelParams,
}

fn default_channel_a() -> ChannelParams {
    ChannelParams::with_length(14.7)
}

fn default_channel_b() -> ChannelParams {
    ChannelParams::with_length(10.6)
}

impl Default for Channels {
    fn default() -> Self {
        Self {
            a: default_channel_a(),
            b: default_channel_b(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Detectors {
    pub eve: DetectorParams,
    pub alice: DetectorParams,
    pub bob: DetectorParams,
}

impl Default for Detectors {
    fn default() -> Self {
        let e = ExperimentConfig::default();
        Self {
            eve: e.eve,
            alice: e.alice,
            bob: e.bob,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BsmSection {
    pub spectral_purity: f64,
    pub bob_reference_phase: f64,
}

impl Default for BsmSection {
    fn default() -> Self {
        Self {
            spectral_purity: 0.994,
            bob_reference_phase: PI,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Timing {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seconds_per_window: Option<f64>,
    pub drift_step_s: f64,
}

impl Default for Timing {
    fn default() -> Self {
        Self {
            seconds_per_window: None,
            drift_step_s: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Bases {
    pub alice: BasisProbabilities,
    pub bob: BasisProbabilities,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FringeSection {
    /// Bob's fixed analyzer phase.
    pub phi_b: f64,
    /// Explicit list of Alice's phases; overrides `points`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub phi_a: Option<Vec<f64>>,
    /// Evenly spaced phases over one period, both ends included.
    pub points: usize,
}

impl Default for FringeSection {
    fn default() -> Self {
        Self {
            phi_b: 0.0,
            phi_a: None,
            points: 13,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CurveSection {
    pub n_per_basis: u64,
    pub e_b_start: f64,
    pub e_b_stop: f64,
    pub points: usize,
}

impl Default for CurveSection {
    fn default() -> Self {
        Self {
            n_per_basis: 2500,
            e_b_start: 0.0,
            e_b_stop: 0.2,
            points: 41,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub format: Option<OutputFormat>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Master seed; generated and recorded when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Windows per fringe point or per QKD session.
    pub windows: u64,
    pub sources: PerSide<SourceParams>,
    pub channels: Channels,
    pub detectors: Detectors,
    pub bsm: BsmSection,
    pub timing: Timing,
    pub bases: Bases,
    pub fringe: FringeSection,
    pub security: SecurityParams,
    /// Sifted-key input of the `keyrate` command.
    pub keyrate: SiftedSummary,
    pub curve: CurveSection,
    pub output: OutputSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: None,
            windows: ExperimentConfig::default().windows,
            sources: PerSide::default(),
            channels: Channels::default(),
            detectors: Detectors::default(),
            bsm: BsmSection::default(),
            timing: Timing::default(),
            bases: Bases::default(),
            fringe: FringeSection::default(),
            security: SecurityParams::default(),
            keyrate: SiftedSummary::default(),
            curve: CurveSection::default(),
            output: OutputSection::default(),
        }
    }
}

/// Parses and validates a TOML document.
pub fn parse_config(document: &str) -> Result<RunConfig> {
    let de = toml::Deserializer::new(document);
    let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let msg = e.into_inner().message().trim().to_string();
        Error::config(if path == "." { String::new() } else { path }, msg)
    })?;
    cfg.validate()?;
    Ok(cfg)
}

impl RunConfig {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is representable as TOML")
    }

    pub fn experiment(&self) -> ExperimentConfig {
        ExperimentConfig {
            source_a: self.sources.a,
            source_b: self.sources.b,
            channel_a: self.channels.a,
            channel_b: self.channels.b,
            eve: self.detectors.eve,
            alice: self.detectors.alice,
            bob: self.detectors.bob,
            spectral_purity: self.bsm.spectral_purity,
            windows: self.windows,
            master_seed: self.seed.unwrap_or(0),
            basis_alice: self.bases.alice,
            basis_bob: self.bases.bob,
            bob_reference_phase: self.bsm.bob_reference_phase,
            seconds_per_window: self.timing.seconds_per_window,
            drift_step_s: self.timing.drift_step_s,
        }
    }

    pub fn fringe_grid(&self) -> Vec<f64> {
        match &self.fringe.phi_a {
            Some(list) => list.clone(),
            None => linear_grid(0.0, TAU, self.fringe.points),
        }
    }

    pub fn curve_grid(&self) -> Vec<f64> {
        linear_grid(self.curve.e_b_start, self.curve.e_b_stop, self.curve.points)
    }

    pub fn validate(&self) -> Result<()> {
        // TOML integers are signed 64-bit
        let limit = i64::MAX as u64;
        for (path, v) in [
            ("seed", self.seed.unwrap_or(0)),
            ("windows", self.windows),
            ("keyrate.n_energy", self.keyrate.n_energy),
            ("keyrate.n_time", self.keyrate.n_time),
            ("curve.n_per_basis", self.curve.n_per_basis),
        ] {
            if v > limit {
                return Err(Error::config(path, format!("must be at most {limit}")));
            }
        }
        self.experiment().validate()?;
        if !self.fringe.phi_b.is_finite() {
            return Err(Error::config("fringe.phi_b", "must be finite"));
        }
        match &self.fringe.phi_a {
            Some(list) => {
                if list.is_empty() {
                    return Err(Error::config("fringe.phi_a", "must not be empty"));
                }
                if list.iter().any(|p| !p.is_finite()) {
                    return Err(Error::config("fringe.phi_a", "phases must be finite"));
                }
            }
            None if self.fringe.points == 0 => {
                return Err(Error::config("fringe.points", "must be > 0"));
            }
            None => {}
        }
        self.security.validate("security")?;
        self.keyrate.validate()?;
        let c = &self.curve;
        if c.n_per_basis == 0 {
            return Err(Error::config("curve.n_per_basis", "must be > 0"));
        }
        if c.points == 0 {
            return Err(Error::config("curve.points", "must be > 0"));
        }
        for (name, v) in [("e_b_start", c.e_b_start), ("e_b_stop", c.e_b_stop)] {
            if !(0.0..0.5).contains(&v) {
                return Err(Error::config(
                    format!("curve.{name}"),
                    "must lie in [0, 0.5)",
                ));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path_of(doc: &str) -> String {
        match parse_config(doc) {
            Err(Error::Config { path, .. }) => path,
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn empty_document_gives_defaults() {
        let cfg = parse_config("").unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert_eq!(cfg.sources.a.mu, 0.03);
        assert_eq!(cfg.channels.a.length_km, 14.7);
        assert_eq!(cfg.channels.b.length_km, 10.6);
        assert_eq!(cfg.channels.a.attenuation_db_per_km, 0.2);
        assert_eq!(cfg.security.epsilon, 1e-10);
        assert_eq!(cfg.security.f_ec, 1.16);
        assert_eq!(cfg.experiment(), ExperimentConfig::default());
    }

    #[test]
    fn constraint_errors_name_the_path() {
        assert_eq!(path_of("[sources.a]\nmu = -1.0\n"), "sources.a.mu");
        assert_eq!(
            path_of("[detectors.bob]\nefficiency = 2.0\n"),
            "detectors.bob.efficiency"
        );
        assert_eq!(path_of("windows = 0\n"), "windows");
        assert_eq!(path_of("[curve]\ne_b_stop = 0.7\n"), "curve.e_b_stop");
        let huge = RunConfig {
            seed: Some(u64::MAX),
            ..RunConfig::default()
        };
        assert!(matches!(huge.validate(), Err(Error::Config { path, .. }) if path == "seed"));
    }

    #[test]
    fn unknown_keys_and_types_are_rejected() {
        assert_eq!(path_of("[sources.a]\nmuu = 0.1\n"), "sources.a.muu");
        assert_eq!(path_of("[sources.a]\nmu = \"x\"\n"), "sources.a.mu");
        assert!(parse_config("bogus = 1\n").is_err());
        assert!(parse_config("windows = ").is_err());
    }

    #[test]
    fn round_trip() {
        let doc = r#"
seed = 7
windows = 5000
[sources.b]
mu = 0.05
emission = "single_pair"
[channels.a]
length_km = 3.0
[fringe]
phi_a = [0.0, 1.0, 2.0, 3.0, 4.0]
[output]
format = "json"
"#;
        let cfg = parse_config(doc).unwrap();
        let again = parse_config(&cfg.to_toml()).unwrap();
        assert_eq!(cfg, again);
        let defaults = RunConfig::default();
        assert_eq!(parse_config(&defaults.to_toml()).unwrap(), defaults);
    }
}
