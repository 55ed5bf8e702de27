//! Secure-key accounting for the swapped-photon QKD session.
//!
//! The phase error of each basis is bounded by the bit error of the other
//! basis plus a Serfling sampling gap. One B step (random pairing with
//! parity comparison) is then applied before the one-way rate
//! `1 − f·H(e_b) − H(e_p)` is evaluated. Secure bits are floored per basis.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-basis sifted-key statistics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SiftedSummary {
    pub n_energy: u64,
    pub n_time: u64,
    pub e_b_energy: f64,
    pub e_b_time: f64,
}

impl Default for SiftedSummary {
    fn default() -> Self {
        Self::FIELD_RUN
    }
}

impl SiftedSummary {
    /// Sifted counts and error rates reported for the field run.
    pub const FIELD_RUN: SiftedSummary = SiftedSummary {
        n_energy: 2485,
        n_time: 2611,
        e_b_energy: 0.09980,
        e_b_time: 0.09575,
    };

    pub fn validate(&self) -> Result<()> {
        for (name, e) in [("e_b_energy", self.e_b_energy), ("e_b_time", self.e_b_time)] {
            if !(0.0..=0.5).contains(&e) {
                return Err(Error::config(
                    format!("keyrate.{name}"),
                    "must lie in [0, 0.5]",
                ));
            }
        }
        Ok(())
    }

    /// Count-weighted error rate over both bases.
    pub fn e_b_total(&self) -> f64 {
        let n = (self.n_energy + self.n_time) as f64;
        if n == 0.0 {
            return 0.0;
        }
        (self.n_energy as f64 * self.e_b_energy + self.n_time as f64 * self.e_b_time) / n
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SecurityParams {
    pub epsilon: f64,
    /// Error-correction inefficiency relative to the Shannon limit.
    pub f_ec: f64,
    /// Number of B steps applied before privacy amplification.
    pub b_steps: u32,
}

impl Default for SecurityParams {
    fn default() -> Self {
        Self {
            epsilon: 1e-10,
            f_ec: 1.16,
            b_steps: 1,
        }
    }
}

impl SecurityParams {
    pub fn validate(&self, path: &str) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(Error::config(
                format!("{path}.epsilon"),
                "must lie in (0, 1)",
            ));
        }
        if !(self.f_ec >= 1.0 && self.f_ec.is_finite()) {
            return Err(Error::config(format!("{path}.f_ec"), "must be ≥ 1"));
        }
        Ok(())
    }
}

pub fn binary_entropy(x: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&x) {
        return Err(Error::invalid(format!(
            "entropy argument {x} outside [0, 1]"
        )));
    }
    Ok(h2(x))
}

#[inline]
fn h2(x: f64) -> f64 {
    if x <= 0.0 || x >= 1.0 {
        0.0
    } else {
        -x * x.log2() - (1.0 - x) * (1.0 - x).log2()
    }
}

/// Sampling gap between an observed bit-error rate and the phase-error rate
/// of the other basis: `sqrt((n_t + 1)·ln(1/ε) / (2·n_o·(n_o + n_t)))`.
///
/// `n_obs` is the size of the basis whose bit errors were observed,
/// `n_target` the size of the basis whose phase error is bounded.
pub fn serfling_gap(epsilon: f64, n_obs: u64, n_target: u64) -> Result<f64> {
    if n_obs == 0 || n_target == 0 {
        return Err(Error::invalid(
            "sampling gap needs non-zero counts in both bases",
        ));
    }
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::invalid(format!(
            "failure probability {epsilon} outside (0, 1)"
        )));
    }
    let no = n_obs as f64;
    let nt = n_target as f64;
    Ok(((nt + 1.0) * (1.0 / epsilon).ln() / (2.0 * no * (no + nt))).sqrt())
}

/// Upper bound on the phase-error rate, capped at 1.
pub fn phase_error_bound(e_b_other_basis: f64, gap: f64) -> f64 {
    (e_b_other_basis + gap).min(1.0)
}

/// Error rates after one B step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BStep {
    /// Probability that the two parities agree.
    pub p_s: f64,
    pub e_b_prime: f64,
    pub e_p_prime: f64,
}

pub fn bstep_transform(e_b: f64, e_p: f64) -> BStep {
    let p_s = e_b * e_b + (1.0 - e_b) * (1.0 - e_b);
    let e_b_prime = e_b * e_b / p_s;
    let e_p_prime = (2.0 * e_p * (1.0 - e_p - e_b) / p_s).clamp(0.0, 1.0);
    BStep {
        p_s,
        e_b_prime,
        e_p_prime,
    }
}

fn one_way_fraction(e_b: f64, e_p: f64, f_ec: f64) -> f64 {
    1.0 - f_ec * h2(e_b.clamp(0.0, 1.0)) - h2(e_p.clamp(0.0, 1.0))
}

/// One-way rate `Q·(1 − f·H(e_b) − H(e_p))`, clamped at zero.
pub fn key_rate_one_way(q: f64, e_b: f64, e_p: f64, sec: &SecurityParams) -> f64 {
    (q * one_way_fraction(e_b, e_p, sec.f_ec)).max(0.0)
}

/// Rate per sifted bit after `steps` B steps; `steps = 0` is the one-way rate.
pub fn key_rate_after_bsteps(e_b: f64, e_p: f64, sec: &SecurityParams, steps: u32) -> f64 {
    let mut keep = 1.0;
    let (mut eb, mut ep) = (e_b, e_p);
    for _ in 0..steps {
        let b = bstep_transform(eb, ep);
        keep *= b.p_s / 2.0;
        eb = b.e_b_prime;
        ep = b.e_p_prime;
    }
    (keep * one_way_fraction(eb, ep, sec.f_ec)).max(0.0)
}

/// Rate per sifted bit after one B step.
pub fn key_rate_bstep(e_b: f64, e_p: f64, sec: &SecurityParams) -> f64 {
    key_rate_after_bsteps(e_b, e_p, sec, 1)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BasisKeyReport {
    pub sifted: u64,
    pub e_b: f64,
    pub gap: f64,
    pub e_p: f64,
    /// Quantities after the first B step.
    pub bstep: BStep,
    pub rate_fraction: f64,
    pub secure_bits: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SecureBits {
    pub energy: u64,
    pub time: u64,
    pub total: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyRateReport {
    pub security: SecurityParams,
    pub energy: BasisKeyReport,
    pub time: BasisKeyReport,
    pub secure_bits: SecureBits,
    pub sifted_total: u64,
    pub e_b_total: f64,
    /// Sifted key per window, when the summary came from a simulated session.
    pub q: Option<f64>,
}

fn basis_report(
    sifted: u64,
    e_b: f64,
    e_b_other: f64,
    n_other: u64,
    sec: &SecurityParams,
) -> Result<BasisKeyReport> {
    // the other basis is the observed sample, this basis is the target
    let gap = serfling_gap(sec.epsilon, n_other, sifted)?;
    let e_p = phase_error_bound(e_b_other, gap);
    let bstep = bstep_transform(e_b, e_p);
    let rate_fraction = key_rate_after_bsteps(e_b, e_p, sec, sec.b_steps);
    let secure_bits = (rate_fraction * sifted as f64).floor() as u64;
    Ok(BasisKeyReport {
        sifted,
        e_b,
        gap,
        e_p,
        bstep,
        rate_fraction,
        secure_bits,
    })
}

/// Secure bits extractable from each basis of a sifted key.
pub fn analyze(summary: &SiftedSummary, sec: &SecurityParams) -> Result<KeyRateReport> {
    if summary.n_energy == 0 || summary.n_time == 0 {
        return Err(Error::KeyRate(format!(
            "both bases need sifted bits (energy {}, time {})",
            summary.n_energy, summary.n_time
        )));
    }
    summary.validate()?;
    sec.validate("security")?;
    let energy = basis_report(
        summary.n_energy,
        summary.e_b_energy,
        summary.e_b_time,
        summary.n_time,
        sec,
    )?;
    let time = basis_report(
        summary.n_time,
        summary.e_b_time,
        summary.e_b_energy,
        summary.n_energy,
        sec,
    )?;
    Ok(KeyRateReport {
        security: *sec,
        energy,
        time,
        secure_bits: SecureBits {
            energy: energy.secure_bits,
            time: time.secure_bits,
            total: energy.secure_bits + time.secure_bits,
        },
        sifted_total: summary.n_energy + summary.n_time,
        e_b_total: summary.e_b_total(),
        q: None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub e_b: f64,
    pub rate_fraction: f64,
}

/// Rate per sifted bit for two equal-size bases with equal error rates.
pub fn simulate_rate_curve(
    n_per_basis: u64,
    e_b_grid: &[f64],
    sec: &SecurityParams,
) -> Result<Vec<CurvePoint>> {
    let gap = serfling_gap(sec.epsilon, n_per_basis, n_per_basis)?;
    e_b_grid
        .iter()
        .map(|&e_b| {
            if !(0.0..0.5).contains(&e_b) {
                return Err(Error::invalid(format!("error rate {e_b} outside [0, 0.5)")));
            }
            let e_p = phase_error_bound(e_b, gap);
            Ok(CurvePoint {
                e_b,
                rate_fraction: key_rate_after_bsteps(e_b, e_p, sec, sec.b_steps),
            })
        })
        .collect()
}

/// Evenly spaced grid on `[start, stop]` with `points` entries.
pub fn linear_grid(start: f64, stop: f64, points: usize) -> Vec<f64> {
    match points {
        0 => vec![],
        1 => vec![start],
        _ => (0..points)
            .map(|k| start + (stop - start) * k as f64 / (points - 1) as f64)
            .collect(),
    }
}
