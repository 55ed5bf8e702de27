//! Two-photon time-bin algebra.
//!
//! States live in the four-dimensional space spanned by
//! `|1,1⟩, |1,2⟩, |2,1⟩, |2,2⟩`, where the first label is the bin of the
//! first photon (Alice's side) and the second label the bin of the second
//! photon (Bob's side). Bin 1 is the early slot and bin 2 the late slot.
//!
//! Energy-basis analysis at phase `φ` projects each photon onto
//! `(⟨1| + s·e^{−iφ}⟨2|)/√2` with `s = ±1`. Under this convention a `Ψ⁺`
//! pair gives `P(+,+) = (1 + cos(φ_A − φ_B))/4`.

use std::f64::consts::{FRAC_1_SQRT_2, SQRT_2, TAU};
use std::fmt;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on the squared norm of a state.
pub const NORM_TOLERANCE: f64 = 1e-12;

/// Time slot of a photon inside one double-pulse window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Bin {
    Early,
    Late,
}

impl Bin {
    pub const BOTH: [Bin; 2] = [Bin::Early, Bin::Late];

    pub fn index(self) -> usize {
        match self {
            Bin::Early => 0,
            Bin::Late => 1,
        }
    }

    pub fn from_index(i: usize) -> Bin {
        if i == 0 {
            Bin::Early
        } else {
            Bin::Late
        }
    }

    /// 1 for the early bin, 2 for the late bin.
    pub fn label(self) -> u8 {
        self.index() as u8 + 1
    }
}

/// Outcome of an energy-basis projection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Sign {
    Plus,
    Minus,
}

impl Sign {
    pub const BOTH: [Sign; 2] = [Sign::Plus, Sign::Minus];

    pub fn index(self) -> usize {
        match self {
            Sign::Plus => 0,
            Sign::Minus => 1,
        }
    }

    pub fn from_index(i: usize) -> Sign {
        if i == 0 {
            Sign::Plus
        } else {
            Sign::Minus
        }
    }

    pub fn value(self) -> f64 {
        match self {
            Sign::Plus => 1.0,
            Sign::Minus => -1.0,
        }
    }
}

#[inline]
pub(crate) fn basis_index(first: usize, second: usize) -> usize {
    2 * first + second
}

/// Normalized pure state of two time-bin photons.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeBinState {
    amps: [Complex64; 4],
}

impl TimeBinState {
    /// Builds a state from raw amplitudes, rescaling to unit norm.
    pub fn from_amplitudes(amps: [Complex64; 4]) -> Result<Self> {
        let norm_sqr: f64 = amps.iter().map(|a| a.norm_sqr()).sum();
        if !norm_sqr.is_finite() || norm_sqr <= f64::MIN_POSITIVE {
            return Err(Error::invalid("state has zero or non-finite norm"));
        }
        let scale = norm_sqr.sqrt().recip();
        Ok(Self {
            amps: amps.map(|a| a * scale),
        })
    }

    /// Accepts amplitudes only if they are already normalized.
    pub fn try_new(amps: [Complex64; 4]) -> Result<Self> {
        let norm_sqr: f64 = amps.iter().map(|a| a.norm_sqr()).sum();
        let deviation = (norm_sqr - 1.0).abs();
        if deviation.is_nan() || deviation > NORM_TOLERANCE {
            return Err(Error::invalid(format!(
                "state is not normalized (norm² = {norm_sqr})"
            )));
        }
        Ok(Self { amps })
    }

    pub fn from_real(amps: [f64; 4]) -> Result<Self> {
        Self::from_amplitudes(amps.map(|a| Complex64::new(a, 0.0)))
    }

    /// Product state with both photons in definite bins.
    pub fn product(first: Bin, second: Bin) -> Self {
        let mut amps = [Complex64::new(0.0, 0.0); 4];
        amps[basis_index(first.index(), second.index())] = Complex64::new(1.0, 0.0);
        Self { amps }
    }

    pub fn amplitudes(&self) -> &[Complex64; 4] {
        &self.amps
    }

    pub fn amplitude(&self, first: Bin, second: Bin) -> Complex64 {
        self.amps[basis_index(first.index(), second.index())]
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amps.iter().map(|a| a.norm_sqr()).sum()
    }

    pub fn inner(&self, other: &TimeBinState) -> Complex64 {
        self.amps
            .iter()
            .zip(other.amps.iter())
            .map(|(a, b)| a.conj() * b)
            .sum()
    }

    fn check_normalized(&self) -> Result<()> {
        let n = self.norm_sqr();
        if (n - 1.0).abs() > NORM_TOLERANCE {
            return Err(Error::invalid(format!(
                "state is not normalized (norm² = {n})"
            )));
        }
        Ok(())
    }

    /// Phase shift `e^{iθ}` on the late bin of the first photon.
    pub fn with_first_phase(&self, theta: f64) -> Self {
        let ph = Complex64::from_polar(1.0, theta);
        let mut amps = self.amps;
        amps[basis_index(1, 0)] *= ph;
        amps[basis_index(1, 1)] *= ph;
        Self { amps }
    }

    /// Phase shift `e^{iθ}` on the late bin of the second photon.
    pub fn with_second_phase(&self, theta: f64) -> Self {
        let ph = Complex64::from_polar(1.0, theta);
        let mut amps = self.amps;
        amps[basis_index(0, 1)] *= ph;
        amps[basis_index(1, 1)] *= ph;
        Self { amps }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BellKind {
    PhiPlus,
    PhiMinus,
    PsiPlus,
    PsiMinus,
}

impl BellKind {
    pub const ALL: [BellKind; 4] = [
        BellKind::PhiPlus,
        BellKind::PhiMinus,
        BellKind::PsiPlus,
        BellKind::PsiMinus,
    ];
}

impl fmt::Display for BellKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            BellKind::PhiPlus => "Φ+",
            BellKind::PhiMinus => "Φ-",
            BellKind::PsiPlus => "Ψ+",
            BellKind::PsiMinus => "Ψ-",
        };
        f.write_str(s)
    }
}

pub fn bell_state(kind: BellKind) -> TimeBinState {
    let h = FRAC_1_SQRT_2;
    let amps = match kind {
        BellKind::PhiPlus => [h, 0.0, 0.0, h],
        BellKind::PhiMinus => [h, 0.0, 0.0, -h],
        BellKind::PsiPlus => [0.0, h, h, 0.0],
        BellKind::PsiMinus => [0.0, h, -h, 0.0],
    };
    TimeBinState {
        amps: amps.map(|a| Complex64::new(a, 0.0)),
    }
}

/// Phase setting of an energy-basis analyzer, kept in `[0, 2π)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyBasisSetting {
    phase: f64,
}

impl EnergyBasisSetting {
    pub fn new(phase: f64) -> Result<Self> {
        if !phase.is_finite() {
            return Err(Error::invalid("analyzer phase must be finite"));
        }
        let mut p = phase.rem_euclid(TAU);
        // rem_euclid can round up to exactly TAU for tiny negative inputs
        if p >= TAU {
            p = 0.0;
        }
        Ok(Self { phase: p })
    }

    pub fn phase(&self) -> f64 {
        self.phase
    }
}

/// Probability table over the four joint outcomes of a two-photon measurement.
/// Indexed `[first outcome][second outcome]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointTable {
    pub p: [[f64; 2]; 2],
}

impl JointTable {
    pub fn get(&self, first: usize, second: usize) -> f64 {
        self.p[first][second]
    }

    pub fn sign(&self, a: Sign, b: Sign) -> f64 {
        self.p[a.index()][b.index()]
    }

    pub fn bins(&self, a: Bin, b: Bin) -> f64 {
        self.p[a.index()][b.index()]
    }

    pub fn total(&self) -> f64 {
        self.p.iter().flatten().sum()
    }

    /// Flattened as `(0,0), (0,1), (1,0), (1,1)`.
    pub fn flat(&self) -> [f64; 4] {
        [self.p[0][0], self.p[0][1], self.p[1][0], self.p[1][1]]
    }
}

fn analyzer_bra(sign: Sign, phase: f64) -> [Complex64; 2] {
    // (⟨1| + s e^{−iφ}⟨2|)/√2, stored as the conjugated ket components so
    // that the projection amplitude is a plain dot product.
    let h = FRAC_1_SQRT_2;
    [
        Complex64::new(h, 0.0),
        Complex64::from_polar(h * sign.value(), -phase),
    ]
}

/// Joint energy-basis outcome probabilities for analyzer settings `a`, `b`.
pub fn coincidence_probability(
    state: &TimeBinState,
    a: EnergyBasisSetting,
    b: EnergyBasisSetting,
) -> Result<JointTable> {
    state.check_normalized()?;
    let mut p = [[0.0; 2]; 2];
    for sa in Sign::BOTH {
        let ba = analyzer_bra(sa, a.phase());
        for sb in Sign::BOTH {
            let bb = analyzer_bra(sb, b.phase());
            let mut amp = Complex64::new(0.0, 0.0);
            for (i, x) in ba.iter().enumerate() {
                for (j, y) in bb.iter().enumerate() {
                    amp += x * y * state.amps[basis_index(i, j)];
                }
            }
            p[sa.index()][sb.index()] = amp.norm_sqr();
        }
    }
    Ok(JointTable { p })
}

/// Joint time-of-arrival probabilities `P(bin_A, bin_B)`.
pub fn time_basis_probability(state: &TimeBinState) -> Result<JointTable> {
    state.check_normalized()?;
    let mut p = [[0.0; 2]; 2];
    for (i, row) in p.iter_mut().enumerate() {
        for (j, cell) in row.iter_mut().enumerate() {
            *cell = state.amps[basis_index(i, j)].norm_sqr();
        }
    }
    Ok(JointTable { p })
}

fn check_visibility(v: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&v) {
        return Err(Error::invalid(format!("visibility {v} outside [0, 1]")));
    }
    Ok(())
}

/// Werner-state fidelity `(3V + 1)/4`.
pub fn fidelity_from_visibility(v: f64) -> Result<f64> {
    check_visibility(v)?;
    Ok((3.0 * v + 1.0) / 4.0)
}

/// CHSH value `2√2·V` implied by a Werner state, with linear error propagation.
pub fn chsh_from_visibility(v: f64, dv: f64) -> Result<(f64, f64)> {
    check_visibility(v)?;
    if !(dv >= 0.0 && dv.is_finite()) {
        return Err(Error::invalid(format!("visibility error {dv} must be ≥ 0")));
    }
    let k = 2.0 * SQRT_2;
    Ok((k * v, k * dv))
}
