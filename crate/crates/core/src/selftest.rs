//! Pinned regression checks and an independent beam-splitter oracle.
//!
//! The oracle expands the two input creation operators over the four output
//! modes (detector × bin) as polynomials and reads probabilities off the
//! Fock coefficients. It shares no code with the branch table in `bsm`.

use std::collections::BTreeMap;
use std::f64::consts::FRAC_1_SQRT_2;

use num_complex::Complex64;
use serde::Serialize;

use crate::bsm::{click_distribution, slot, ClickPattern, Detector};
use crate::finite_key::{analyze, binary_entropy, SecurityParams, SiftedSummary};
use crate::timebin::{bell_state, BellKind, Bin, TimeBinState};

/// Monomial over the output modes, stored as occupation numbers.
type Monomial = [u8; 4];

fn factorial(n: u8) -> f64 {
    (1..=n as u64).product::<u64>() as f64
}

/// Output-mode expansion of a creation operator entering from `side`
/// (0 = A, 1 = B) in time bin `bin`.
fn mode_expansion(side: usize, bin: Bin) -> [(usize, Complex64); 2] {
    let sign = if side == 0 { 1.0 } else { -1.0 };
    [
        (slot(Detector::D1, bin), Complex64::new(FRAC_1_SQRT_2, 0.0)),
        (
            slot(Detector::D2, bin),
            Complex64::new(sign * FRAC_1_SQRT_2, 0.0),
        ),
    ]
}

/// Occupation probabilities when the two photons interfere fully.
fn interfering(psi: &[Complex64; 4]) -> BTreeMap<Monomial, f64> {
    let mut poly: BTreeMap<Monomial, Complex64> = BTreeMap::new();
    for ta in Bin::BOTH {
        for tb in Bin::BOTH {
            let c = psi[ta.index() * 2 + tb.index()];
            if c == Complex64::new(0.0, 0.0) {
                continue;
            }
            for (ma, ca) in mode_expansion(0, ta) {
                for (mb, cb) in mode_expansion(1, tb) {
                    let mut m = [0u8; 4];
                    m[ma] += 1;
                    m[mb] += 1;
                    *poly.entry(m).or_default() += c * ca * cb;
                }
            }
        }
    }
    poly.into_iter()
        .map(|(m, c)| {
            let norm: f64 = m.iter().map(|&n| factorial(n)).product();
            (m, c.norm_sqr() * norm)
        })
        .collect()
}

/// Occupation probabilities for fully distinguishable photons.
fn distinguishable(psi: &[Complex64; 4]) -> BTreeMap<Monomial, f64> {
    let mut out = BTreeMap::new();
    for ta in Bin::BOTH {
        for tb in Bin::BOTH {
            let p = psi[ta.index() * 2 + tb.index()].norm_sqr();
            for (ma, ca) in mode_expansion(0, ta) {
                for (mb, cb) in mode_expansion(1, tb) {
                    let mut m = [0u8; 4];
                    m[ma] += 1;
                    m[mb] += 1;
                    *out.entry(m).or_insert(0.0) += p * ca.norm_sqr() * cb.norm_sqr();
                }
            }
        }
    }
    out
}

/// Click-pattern probabilities from the Fock expansion, mixing the
/// interfering and distinguishable parts with weight `zeta`.
pub fn oracle_click_table(state: &TimeBinState, zeta: f64) -> BTreeMap<ClickPattern, f64> {
    let psi = state.amplitudes();
    let mut table = BTreeMap::new();
    for (weight, part) in [(zeta, interfering(psi)), (1.0 - zeta, distinguishable(psi))] {
        if weight == 0.0 {
            continue;
        }
        for (m, p) in part {
            let mask = m
                .iter()
                .enumerate()
                .filter(|(_, &n)| n > 0)
                .fold(0u8, |acc, (s, _)| acc | 1 << s);
            *table.entry(ClickPattern::from_mask(mask)).or_insert(0.0) += weight * p;
        }
    }
    table.retain(|_, p| *p > 1e-15);
    table
}

/// Probability that both detectors click.
pub fn cross_coincidence(table: &BTreeMap<ClickPattern, f64>) -> f64 {
    table
        .iter()
        .filter(|(pat, _)| {
            let d1 = Bin::BOTH.iter().any(|&b| pat.contains(Detector::D1, b));
            let d2 = Bin::BOTH.iter().any(|&b| pat.contains(Detector::D2, b));
            d1 && d2
        })
        .map(|(_, p)| p)
        .sum()
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct SelftestReport {
    pub passed: bool,
    pub checks: Vec<CheckResult>,
}

fn check(name: &str, passed: bool, detail: String) -> CheckResult {
    CheckResult {
        name: name.to_string(),
        passed,
        detail,
    }
}

fn field_run_check() -> CheckResult {
    match analyze(&SiftedSummary::FIELD_RUN, &SecurityParams::default()) {
        Ok(r) => {
            let b = r.secure_bits;
            check(
                "field_run_secure_bits",
                (b.energy, b.time, b.total) == (60, 58, 118),
                format!("energy {} + time {} = {}", b.energy, b.time, b.total),
            )
        }
        Err(e) => check("field_run_secure_bits", false, e.to_string()),
    }
}

fn entropy_check() -> CheckResult {
    let mut worst = 0.0f64;
    for k in 1..1000 {
        let x = k as f64 / 1000.0;
        let direct = -x * x.log2() - (1.0 - x) * (1.0 - x).log2();
        let (Ok(h), Ok(hm)) = (binary_entropy(x), binary_entropy(1.0 - x)) else {
            return check("binary_entropy_grid", false, format!("rejected x = {x}"));
        };
        worst = worst.max((h - direct).abs()).max((h - hm).abs());
    }
    let ends = binary_entropy(0.0) == Ok(0.0) && binary_entropy(1.0) == Ok(0.0);
    check(
        "binary_entropy_grid",
        worst <= 1e-12 && ends,
        format!("max deviation {worst:.3e}"),
    )
}

fn oracle_check() -> CheckResult {
    let mut worst = 0.0f64;
    for kind in BellKind::ALL {
        let state = bell_state(kind);
        for zeta in [0.0, 0.5, 1.0] {
            let Ok(table) = click_distribution(&state, zeta) else {
                return check("beam_splitter_oracle", false, format!("{kind} rejected"));
            };
            let oracle = oracle_click_table(&state, zeta);
            for pat in ClickPattern::all_nonempty() {
                let a = table.get(pat);
                let b = oracle.get(&pat).copied().unwrap_or(0.0);
                worst = worst.max((a - b).abs());
            }
        }
    }
    let early = TimeBinState::product(Bin::Early, Bin::Early);
    let hom = |zeta| {
        click_distribution(&early, zeta)
            .map(|t| {
                let m: BTreeMap<_, _> = t.iter().collect();
                cross_coincidence(&m)
            })
            .unwrap_or(f64::NAN)
    };
    let (h1, h0) = (hom(1.0), hom(0.0));
    check(
        "beam_splitter_oracle",
        worst <= 1e-12 && h1.abs() <= 1e-12 && (h0 - 0.5).abs() <= 1e-12,
        format!("max deviation {worst:.3e}; coincidence {h1:.3e} at ζ=1, {h0} at ζ=0"),
    )
}

pub fn run() -> SelftestReport {
    let checks = vec![field_run_check(), entropy_check(), oracle_check()];
    SelftestReport {
        passed: checks.iter().all(|c| c.passed),
        checks,
    }
}
