//! Bell-state measurement at the middle node.
//!
//! The two signal photons meet on a 50:50 beam splitter whose outputs are
//! watched by two time-resolving detectors. A Ψ⁻ event is two clicks on
//! different detectors in different bins; a Ψ⁺ event is two clicks on the
//! same detector in different bins.
//!
//! Partial distinguishability is a convex mixture: with weight `ζ` the
//! photons interfere, with weight `1 − ζ` each one is routed to a random
//! output on its own. Both parts are written as lists of rank-one effects
//! ("branches") on the two-photon time-bin space, so the same table can be
//! used for click statistics and for conditioning an entangled partner.

use std::collections::BTreeMap;
use std::f64::consts::{FRAC_1_SQRT_2, SQRT_2};
use std::fmt;
use std::sync::OnceLock;

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::timebin::{basis_index, Bin, TimeBinState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Detector {
    D1,
    D2,
}

impl Detector {
    pub const BOTH: [Detector; 2] = [Detector::D1, Detector::D2];

    pub fn index(self) -> usize {
        match self {
            Detector::D1 => 0,
            Detector::D2 => 1,
        }
    }
}

/// Index of a (detector, bin) slot in occupancy arrays and click masks.
#[inline]
pub fn slot(det: Detector, bin: Bin) -> usize {
    det.index() * 2 + bin.index()
}

fn slot_parts(s: usize) -> (Detector, Bin) {
    let det = if s < 2 { Detector::D1 } else { Detector::D2 };
    (det, Bin::from_index(s % 2))
}

/// Set of (detector, bin) slots that registered a click in one window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct ClickPattern(u8);

impl ClickPattern {
    pub const EMPTY: ClickPattern = ClickPattern(0);

    pub fn from_clicks<I: IntoIterator<Item = (Detector, Bin)>>(clicks: I) -> Self {
        let mut m = 0u8;
        for (d, b) in clicks {
            m |= 1 << slot(d, b);
        }
        ClickPattern(m)
    }

    pub(crate) fn from_mask(mask: u8) -> Self {
        ClickPattern(mask & 0x0f)
    }

    pub(crate) fn from_occupancy(occ: &[u8; 4]) -> Self {
        let mut m = 0u8;
        for (s, &n) in occ.iter().enumerate() {
            if n > 0 {
                m |= 1 << s;
            }
        }
        ClickPattern(m)
    }

    pub fn mask(self) -> u8 {
        self.0
    }

    pub fn contains(self, det: Detector, bin: Bin) -> bool {
        self.0 & (1 << slot(det, bin)) != 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn clicks(self) -> impl Iterator<Item = (Detector, Bin)> {
        (0..4)
            .filter(move |s| self.0 & (1 << s) != 0)
            .map(slot_parts)
    }

    /// Every pattern with at least one click.
    pub fn all_nonempty() -> impl Iterator<Item = ClickPattern> {
        (1u8..16).map(ClickPattern)
    }
}

impl fmt::Display for ClickPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("{")?;
        for (i, (d, b)) in self.clicks().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "({d:?},{})", b.label())?;
        }
        f.write_str("}")
    }
}

impl Serialize for ClickPattern {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BsmOutcome {
    PsiMinusDetected,
    PsiPlusDetected,
    Inconclusive,
}

pub fn classify(pattern: ClickPattern) -> BsmOutcome {
    if pattern.len() != 2 {
        return BsmOutcome::Inconclusive;
    }
    let mut it = pattern.clicks();
    let (d1, b1) = it.next().unwrap();
    let (d2, b2) = it.next().unwrap();
    if b1 == b2 {
        BsmOutcome::Inconclusive
    } else if d1 != d2 {
        BsmOutcome::PsiMinusDetected
    } else {
        BsmOutcome::PsiPlusDetected
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectorParams {
    pub efficiency: f64,
    pub dark_count_prob_per_window: f64,
    /// Paralyzable dead time in windows; only supported for the BSM detectors.
    pub deadtime_windows: u32,
}

impl Default for DetectorParams {
    fn default() -> Self {
        Self {
            efficiency: 0.6,
            dark_count_prob_per_window: 1e-7,
            deadtime_windows: 0,
        }
    }
}

impl DetectorParams {
    pub fn ideal() -> Self {
        Self {
            efficiency: 1.0,
            dark_count_prob_per_window: 0.0,
            deadtime_windows: 0,
        }
    }

    pub fn validate(&self, path: &str) -> Result<()> {
        if !(0.0..=1.0).contains(&self.efficiency) {
            return Err(Error::config(
                format!("{path}.efficiency"),
                "must lie in [0, 1]",
            ));
        }
        if !(self.dark_count_prob_per_window >= 0.0 && self.dark_count_prob_per_window < 1.0) {
            return Err(Error::config(
                format!("{path}.dark_count_prob_per_window"),
                "must lie in [0, 1)",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum BranchKind {
    Interfering,
    Distinguishable,
}

/// Rank-one piece of the beam-splitter measurement.
///
/// The probability of the branch on a two-photon state `ψ` is
/// `weight(ζ)·|Σ effect[k]·ψ[k]|²`; `occupancy` lists how many photons end
/// up in each (detector, bin) slot.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Branch {
    pub kind: BranchKind,
    pub effect: [f64; 4],
    pub occupancy: [u8; 4],
}

impl Branch {
    #[inline]
    pub fn weight(&self, zeta: f64) -> f64 {
        match self.kind {
            BranchKind::Interfering => zeta,
            BranchKind::Distinguishable => 1.0 - zeta,
        }
    }

    #[inline]
    pub fn amplitude(&self, psi: &[Complex64; 4]) -> Complex64 {
        psi.iter().zip(self.effect).map(|(a, e)| a * e).sum()
    }

    pub fn pattern(&self) -> ClickPattern {
        ClickPattern::from_occupancy(&self.occupancy)
    }
}

/// Beam-splitter matrix element from input (side, bin) to output slot.
/// Side A enters with `+1/√2` on both outputs, side B with `±1/√2`.
fn bs_element(out_slot: usize, side_b: bool, in_bin: usize) -> f64 {
    let (det, bin) = slot_parts(out_slot);
    if bin.index() != in_bin {
        return 0.0;
    }
    if side_b && det == Detector::D2 {
        -FRAC_1_SQRT_2
    } else {
        FRAC_1_SQRT_2
    }
}

fn build_branches() -> Vec<Branch> {
    let mut out = Vec::with_capacity(26);
    // two-photon output configurations {x ≤ y}; amplitude is the permanent
    // of the 2×2 submatrix, with a √2 for double occupation
    for x in 0..4 {
        for y in x..4 {
            let mut effect = [0.0; 4];
            for ta in 0..2 {
                for tb in 0..2 {
                    let amp = if x == y {
                        SQRT_2 * bs_element(x, false, ta) * bs_element(x, true, tb)
                    } else {
                        bs_element(x, false, ta) * bs_element(y, true, tb)
                            + bs_element(y, false, ta) * bs_element(x, true, tb)
                    };
                    effect[basis_index(ta, tb)] = amp;
                }
            }
            let mut occupancy = [0u8; 4];
            occupancy[x] += 1;
            occupancy[y] += 1;
            out.push(Branch {
                kind: BranchKind::Interfering,
                effect,
                occupancy,
            });
        }
    }
    for ta in 0..2 {
        for tb in 0..2 {
            for da in Detector::BOTH {
                for db in Detector::BOTH {
                    let mut effect = [0.0; 4];
                    effect[basis_index(ta, tb)] = 0.5;
                    let mut occupancy = [0u8; 4];
                    occupancy[slot(da, Bin::from_index(ta))] += 1;
                    occupancy[slot(db, Bin::from_index(tb))] += 1;
                    out.push(Branch {
                        kind: BranchKind::Distinguishable,
                        effect,
                        occupancy,
                    });
                }
            }
        }
    }
    out
}

pub(crate) fn branches() -> &'static [Branch] {
    static TABLE: OnceLock<Vec<Branch>> = OnceLock::new();
    TABLE.get_or_init(build_branches)
}

/// Click-pattern probabilities for ideal detectors.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ClickTable {
    probs: BTreeMap<ClickPattern, f64>,
}

impl ClickTable {
    pub fn get(&self, pattern: ClickPattern) -> f64 {
        self.probs.get(&pattern).copied().unwrap_or(0.0)
    }

    pub fn total(&self) -> f64 {
        self.probs.values().sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ClickPattern, f64)> + '_ {
        self.probs.iter().map(|(k, v)| (*k, *v))
    }

    /// Total probability of patterns satisfying `pred`.
    pub fn sum_where(&self, pred: impl Fn(ClickPattern) -> bool) -> f64 {
        self.iter().filter(|(p, _)| pred(*p)).map(|(_, v)| v).sum()
    }

    pub fn outcome_probability(&self, outcome: BsmOutcome) -> f64 {
        self.sum_where(|p| classify(p) == outcome)
    }
}

fn check_zeta(zeta: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&zeta) {
        return Err(Error::invalid(format!(
            "mode overlap {zeta} outside [0, 1]"
        )));
    }
    Ok(())
}

/// Distribution of click patterns for one photon from each side in the
/// joint state `joint_signal_state`, with mode overlap `zeta`.
pub fn click_distribution(joint_signal_state: &TimeBinState, zeta: f64) -> Result<ClickTable> {
    check_zeta(zeta)?;
    let n = joint_signal_state.norm_sqr();
    if (n - 1.0).abs() > crate::timebin::NORM_TOLERANCE {
        return Err(Error::invalid(format!(
            "state is not normalized (norm² = {n})"
        )));
    }
    let psi = joint_signal_state.amplitudes();
    let mut probs = BTreeMap::new();
    for br in branches() {
        let p = br.weight(zeta) * br.amplitude(psi).norm_sqr();
        if p > 0.0 {
            *probs.entry(br.pattern()).or_insert(0.0) += p;
        }
    }
    Ok(ClickTable { probs })
}

/// Signal photons reaching the beam splitter in one window.
#[derive(Debug, Clone, PartialEq)]
pub enum Arrivals {
    /// Exactly one photon from each side, in the given joint state.
    Pair(TimeBinState),
    /// Any other combination; photons carry definite bins and route classically.
    Photons(Vec<Bin>),
}

/// Thins an occupancy by detector efficiency; returns the slots that fired.
pub(crate) fn thin<R: Rng + ?Sized>(occupancy: &[u8; 4], efficiency: f64, rng: &mut R) -> u8 {
    let mut mask = 0u8;
    for (s, &n) in occupancy.iter().enumerate() {
        for _ in 0..n {
            if efficiency >= 1.0 || rng.random::<f64>() < efficiency {
                mask |= 1 << s;
                break;
            }
        }
    }
    mask
}

pub(crate) fn sample_dark_mask<R: Rng + ?Sized>(slots: usize, p: f64, rng: &mut R) -> u8 {
    if p <= 0.0 {
        return 0;
    }
    let mut mask = 0u8;
    for s in 0..slots {
        if rng.random::<f64>() < p {
            mask |= 1 << s;
        }
    }
    mask
}

/// Draws an index from unnormalized weights. Falls back to the last
/// positive entry when rounding leaves the cumulative sum short.
pub(crate) fn pick_weighted<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> Option<usize> {
    let total: f64 = weights.iter().sum();
    if total.is_nan() || total <= 0.0 {
        return None;
    }
    let mut u = rng.random::<f64>() * total;
    let mut last = None;
    for (i, &w) in weights.iter().enumerate() {
        if w > 0.0 {
            last = Some(i);
            if u < w {
                return Some(i);
            }
            u -= w;
        }
    }
    last
}

pub(crate) fn route_classically<R: Rng + ?Sized>(bins: &[Bin], rng: &mut R) -> [u8; 4] {
    let mut occ = [0u8; 4];
    for &b in bins {
        let det = if rng.random::<bool>() {
            Detector::D2
        } else {
            Detector::D1
        };
        occ[slot(det, b)] += 1;
    }
    occ
}

/// Samples the click pattern registered by the two detectors.
pub fn sample_clicks<R: Rng + ?Sized>(
    arrivals: &Arrivals,
    zeta: f64,
    det: &DetectorParams,
    rng: &mut R,
) -> Result<ClickPattern> {
    check_zeta(zeta)?;
    let occupancy = match arrivals {
        Arrivals::Pair(state) => {
            let psi = state.amplitudes();
            let table = branches();
            let weights: Vec<f64> = table
                .iter()
                .map(|br| br.weight(zeta) * br.amplitude(psi).norm_sqr())
                .collect();
            let k = pick_weighted(&weights, rng)
                .ok_or_else(|| Error::invalid("joint state has no support"))?;
            table[k].occupancy
        }
        Arrivals::Photons(bins) => route_classically(bins, rng),
    };
    let mask = thin(&occupancy, det.efficiency, rng)
        | sample_dark_mask(4, det.dark_count_prob_per_window, rng);
    Ok(ClickPattern::from_mask(mask))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::window_stream;
    use crate::timebin::{bell_state, BellKind};
    use approx::assert_abs_diff_eq;

    fn diff_det_diff_bin(p: ClickPattern) -> bool {
        classify(p) == BsmOutcome::PsiMinusDetected
    }

    #[test]
    #[allow(clippy::needless_range_loop)]
    fn completeness_of_branches() {
        // Σ |e⟩⟨e| = 1 within each kind
        for kind in [BranchKind::Interfering, BranchKind::Distinguishable] {
            let mut m = [[0.0; 4]; 4];
            for br in branches().iter().filter(|b| b.kind == kind) {
                for i in 0..4 {
                    for j in 0..4 {
                        m[i][j] += br.effect[i] * br.effect[j];
                    }
                }
            }
            for i in 0..4 {
                for j in 0..4 {
                    let want = if i == j { 1.0 } else { 0.0 };
                    assert_abs_diff_eq!(m[i][j], want, epsilon = 1e-12);
                }
            }
        }
    }

    #[test]
    fn singlet_antibunches_and_triplet_bunches() {
        let t = click_distribution(&bell_state(BellKind::PsiMinus), 1.0).unwrap();
        assert_abs_diff_eq!(t.sum_where(diff_det_diff_bin), 1.0, epsilon = 1e-12);
        let t = click_distribution(&bell_state(BellKind::PsiPlus), 1.0).unwrap();
        assert_abs_diff_eq!(
            t.outcome_probability(BsmOutcome::PsiPlusDetected),
            1.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn hong_ou_mandel_dip() {
        let same_bin = TimeBinState::product(Bin::Early, Bin::Early);
        let cross = |p: ClickPattern| {
            p.contains(Detector::D1, Bin::Early) && p.contains(Detector::D2, Bin::Early)
        };
        let t = click_distribution(&same_bin, 1.0).unwrap();
        assert_abs_diff_eq!(t.sum_where(cross), 0.0, epsilon = 1e-12);
        let t = click_distribution(&same_bin, 0.0).unwrap();
        assert_abs_diff_eq!(t.sum_where(cross), 0.5, epsilon = 1e-12);
        let t = click_distribution(&same_bin, 0.5).unwrap();
        assert_abs_diff_eq!(t.sum_where(cross), 0.25, epsilon = 1e-12);
    }

    #[test]
    fn classification_rules() {
        use Bin::*;
        use Detector::*;
        let p = ClickPattern::from_clicks([(D1, Early), (D2, Late)]);
        assert_eq!(classify(p), BsmOutcome::PsiMinusDetected);
        let p = ClickPattern::from_clicks([(D2, Early), (D1, Late)]);
        assert_eq!(classify(p), BsmOutcome::PsiMinusDetected);
        let p = ClickPattern::from_clicks([(D1, Early), (D1, Late)]);
        assert_eq!(classify(p), BsmOutcome::PsiPlusDetected);
        let p = ClickPattern::from_clicks([(D1, Early)]);
        assert_eq!(classify(p), BsmOutcome::Inconclusive);
        let p = ClickPattern::from_clicks([(D1, Early), (D2, Early)]);
        assert_eq!(classify(p), BsmOutcome::Inconclusive);
        let p = ClickPattern::from_clicks([(D1, Early), (D2, Late), (D2, Early)]);
        assert_eq!(classify(p), BsmOutcome::Inconclusive);
        assert_eq!(classify(ClickPattern::EMPTY), BsmOutcome::Inconclusive);
        for p in ClickPattern::all_nonempty() {
            if classify(p) == BsmOutcome::PsiMinusDetected {
                assert!(p.clicks().any(|(d, _)| d == D1));
                assert!(p.clicks().any(|(d, _)| d == D2));
            }
        }
    }

    #[test]
    fn empty_and_blind_detectors() {
        let mut rng = window_stream(1, 9, 0);
        let quiet = DetectorParams::ideal();
        let p = sample_clicks(&Arrivals::Photons(vec![]), 1.0, &quiet, &mut rng).unwrap();
        assert!(p.is_empty());
        let blind = DetectorParams {
            efficiency: 0.0,
            ..DetectorParams::ideal()
        };
        for _ in 0..100 {
            let p = sample_clicks(
                &Arrivals::Pair(bell_state(BellKind::PsiMinus)),
                1.0,
                &blind,
                &mut rng,
            )
            .unwrap();
            assert!(p.is_empty());
        }
    }

    #[test]
    fn invalid_inputs() {
        assert!(click_distribution(&bell_state(BellKind::PsiMinus), 1.5).is_err());
        assert!(click_distribution(&bell_state(BellKind::PsiMinus), -0.1).is_err());
        let mut rng = window_stream(1, 9, 1);
        assert!(sample_clicks(
            &Arrivals::Photons(vec![]),
            2.0,
            &DetectorParams::ideal(),
            &mut rng
        )
        .is_err());
    }

    #[test]
    fn pattern_display() {
        let p = ClickPattern::from_clicks([(Detector::D1, Bin::Early), (Detector::D2, Bin::Late)]);
        assert_eq!(p.to_string(), "{(D1,1),(D2,2)}");
    }
}
