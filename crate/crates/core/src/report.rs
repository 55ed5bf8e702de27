//! Machine-readable reports.
//!
//! JSON reports have four top-level fields: `metadata`, `config` (the
//! effective configuration after defaults), `assumptions` and `payload`.
//! Floats are written in shortest round-trip form, so parsing a report
//! returns the exact values that were computed. CSV output puts the same
//! metadata in `# key: value` comment lines ahead of the header row.

use std::fmt::Write as _;
use std::io::{self, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::experiment::SessionSummary;
use crate::finite_key::{CurvePoint, KeyRateReport};
use crate::fit::{FringeFit, FringePoint};
use crate::selftest::SelftestReport;
use crate::timebin::{chsh_from_visibility, fidelity_from_visibility};

pub const FRINGE_COLUMNS: [&str; 4] = [
    "phi_A_rad",
    "fourfold_count",
    "total_heralds",
    "poisson_sigma",
];
pub const CURVE_COLUMNS: [&str; 3] = ["e_b", "rate_fraction", "one_way_rate"];

/// Modelling choices that are not fixed by measured data.
pub const ASSUMPTIONS: &[&str] = &[
    "detector efficiencies and dark-count probabilities are nominal values, not measured ones",
    "delay and polarization drift rates are placeholders for unmeasured fibre behaviour",
    "multi-pair emission beyond the first pair is modelled as incoherent pairs in random bins",
    "partial distinguishability is a convex mixture of full interference and classical routing",
    "Bob's analyzer carries a pi phase reference so that heralded idlers are analysed as Psi+",
    "basis choices are independent and unbiased unless configured otherwise",
    "the phase-error sampling gap uses the natural logarithm",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub seed: u64,
    pub config_sha256: String,
}

impl Metadata {
    pub fn new(command: &str, config: &RunConfig) -> Self {
        Self {
            tool: "tbswap".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            seed: config.seed.unwrap_or(0),
            config_sha256: config_digest(config),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report<T> {
    pub metadata: Metadata,
    pub config: RunConfig,
    pub assumptions: Vec<String>,
    pub payload: T,
}

impl<T: Serialize> Report<T> {
    pub fn new(command: &str, config: &RunConfig, payload: T) -> Self {
        Self {
            metadata: Metadata::new(command, config),
            config: config.clone(),
            assumptions: ASSUMPTIONS.iter().map(|s| s.to_string()).collect(),
            payload,
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

/// SHA-256 of the canonical TOML form of the configuration.
pub fn config_digest(config: &RunConfig) -> String {
    let digest = Sha256::digest(config.to_toml().as_bytes());
    digest.iter().fold(String::with_capacity(64), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FringeRow {
    pub phi_a_rad: f64,
    pub fourfold_count: u64,
    pub total_heralds: u64,
    pub poisson_sigma: f64,
}

impl From<&FringePoint> for FringeRow {
    fn from(p: &FringePoint) -> Self {
        Self {
            phi_a_rad: p.phi_a,
            fourfold_count: p.fourfold_count,
            total_heralds: p.total_heralds,
            poisson_sigma: p.poisson_sigma(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Inferred {
    pub fidelity: f64,
    pub chsh_s: f64,
    pub chsh_s_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FringePayload {
    pub phi_b: f64,
    pub windows_per_point: u64,
    pub points: Vec<FringeRow>,
    pub fit: Option<FringeFit>,
    /// Werner-state figures derived from the fitted visibility.
    pub inferred: Option<Inferred>,
    pub fit_error: Option<String>,
}

impl FringePayload {
    pub fn new(
        phi_b: f64,
        windows: u64,
        points: &[FringePoint],
        fit: crate::Result<FringeFit>,
    ) -> Self {
        let rows = points.iter().map(FringeRow::from).collect();
        match fit {
            Ok(f) => {
                let inferred = fidelity_from_visibility(f.visibility)
                    .and_then(|fid| {
                        chsh_from_visibility(f.visibility, f.visibility_error).map(|(s, ds)| {
                            Inferred {
                                fidelity: fid,
                                chsh_s: s,
                                chsh_s_error: ds,
                            }
                        })
                    })
                    .ok();
                Self {
                    phi_b,
                    windows_per_point: windows,
                    points: rows,
                    fit: Some(f),
                    inferred,
                    fit_error: None,
                }
            }
            Err(e) => Self {
                phi_b,
                windows_per_point: windows,
                points: rows,
                fit: None,
                inferred: None,
                fit_error: Some(e.to_string()),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QkdPayload {
    pub summary: SessionSummary,
    pub key_rate: Option<KeyRateReport>,
    pub key_rate_error: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub e_b: f64,
    pub rate_fraction: f64,
    pub one_way_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePayload {
    pub n_per_basis: u64,
    pub gap: f64,
    pub points: Vec<CurveRow>,
}

impl CurvePayload {
    pub fn new(n_per_basis: u64, gap: f64, bstep: &[CurvePoint], one_way: &[f64]) -> Self {
        let points = bstep
            .iter()
            .zip(one_way)
            .map(|(p, &r)| CurveRow {
                e_b: p.e_b,
                rate_fraction: p.rate_fraction,
                one_way_rate: r,
            })
            .collect();
        Self {
            n_per_basis,
            gap,
            points,
        }
    }
}

pub type SelftestPayload = SelftestReport;

fn csv_preamble<T>(report: &Report<T>) -> String {
    let m = &report.metadata;
    let mut s = String::new();
    let _ = writeln!(s, "# tool: {} {}", m.tool, m.version);
    let _ = writeln!(s, "# command: {}", m.command);
    let _ = writeln!(s, "# seed: {}", m.seed);
    let _ = writeln!(s, "# config_sha256: {}", m.config_sha256);
    for line in report.config.to_toml().lines() {
        let _ = writeln!(s, "# config: {line}");
    }
    s
}

pub fn fringe_csv(report: &Report<FringePayload>) -> String {
    let mut s = csv_preamble(report);
    let p = &report.payload;
    let _ = writeln!(s, "# phi_b: {}", p.phi_b);
    let _ = writeln!(s, "# windows_per_point: {}", p.windows_per_point);
    match (&p.fit, &p.fit_error) {
        (Some(f), _) => {
            let _ = writeln!(s, "# visibility: {}", f.visibility);
            let _ = writeln!(s, "# visibility_error: {}", f.visibility_error);
            let _ = writeln!(s, "# phase_offset: {}", f.phase_offset);
            let _ = writeln!(s, "# mean_count: {}", f.mean_count);
        }
        (None, Some(e)) => {
            let _ = writeln!(s, "# fit_error: {e}");
        }
        (None, None) => {}
    }
    let _ = writeln!(s, "{}", FRINGE_COLUMNS.join(","));
    for r in &p.points {
        let _ = writeln!(
            s,
            "{},{},{},{}",
            r.phi_a_rad, r.fourfold_count, r.total_heralds, r.poisson_sigma
        );
    }
    s
}

pub fn curve_csv(report: &Report<CurvePayload>) -> String {
    let mut s = csv_preamble(report);
    let p = &report.payload;
    let _ = writeln!(s, "# n_per_basis: {}", p.n_per_basis);
    let _ = writeln!(s, "# gap: {}", p.gap);
    let _ = writeln!(s, "{}", CURVE_COLUMNS.join(","));
    for r in &p.points {
        let _ = writeln!(s, "{},{},{}", r.e_b, r.rate_fraction, r.one_way_rate);
    }
    s
}

/// Writes `contents` to `path` through a temporary file in the same
/// directory, so readers never see a partial file.
pub fn write_atomic(path: &Path, contents: &str) -> io::Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(contents.as_bytes())?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::finite_key::{analyze, SecurityParams, SiftedSummary};

    #[test]
    fn json_round_trips_exactly() {
        let cfg = RunConfig {
            seed: Some(99),
            ..RunConfig::default()
        };
        let kr = analyze(&SiftedSummary::FIELD_RUN, &SecurityParams::default()).unwrap();
        let report = Report::new("keyrate", &cfg, kr);
        let text = report.to_json();
        let back: Report<KeyRateReport> = serde_json::from_str(&text).unwrap();
        assert_eq!(back, report);
        assert_eq!(back.payload.secure_bits.total, 118);
    }

    #[test]
    fn digest_tracks_config() {
        let a = RunConfig::default();
        let mut b = RunConfig::default();
        assert_eq!(config_digest(&a), config_digest(&b));
        assert_eq!(config_digest(&a).len(), 64);
        b.sources.a.mu = 0.031;
        assert_ne!(config_digest(&a), config_digest(&b));
    }

    #[test]
    fn fringe_csv_layout() {
        let cfg = RunConfig::default();
        let pts: Vec<FringePoint> = (0..4)
            .map(|k| FringePoint {
                phi_a: k as f64,
                fourfold_count: 4 * k,
                total_heralds: 100,
            })
            .collect();
        let payload = FringePayload::new(0.0, 1000, &pts, crate::fit::fit_visibility(&pts));
        let csv = fringe_csv(&Report::new("fringe", &cfg, payload));
        let data: Vec<&str> = csv.lines().filter(|l| !l.starts_with('#')).collect();
        assert_eq!(
            data[0],
            "phi_A_rad,fourfold_count,total_heralds,poisson_sigma"
        );
        assert_eq!(data[2], "1,4,100,2");
        assert_eq!(data.len(), 5);
    }

    #[test]
    fn atomic_write_replaces_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("out.txt");
        write_atomic(&p, "one").unwrap();
        write_atomic(&p, "two").unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap(), "two");
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
