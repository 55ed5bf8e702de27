//! End-to-end Monte-Carlo runs: fringe scans and QKD sessions.
//!
//! A window can only produce a Bell-state herald if at least two click
//! candidates reach the measurement node: signal photons (paired or stray)
//! or dark counts of the BSM detectors. The simulator therefore draws, per
//! block of windows, the geometric gap to the next window holding two or
//! more candidates and only resolves those windows in full. The candidate
//! count of a window is the sum of a Poisson variable (all photon sources
//! together) and a binomial one (dark counts on the four detector slots),
//! so the conditional composition can be sampled exactly.
//!
//! Blocks have a fixed size and each owns a random stream keyed by
//! `(master seed, run, block)`, which makes results independent of how the
//! blocks are scheduled across workers.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::seq::index::sample as sample_indices;
use rand::Rng;
use rand_distr::{Distribution, Geometric};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bsm::{self, classify, BsmOutcome, ClickPattern, DetectorParams};
use crate::channel::{transmittance, ChannelParams, DriftTrajectory};
use crate::error::{Error, Result};
use crate::fit::FringePoint;
use crate::rng::{self, SimRng};
use crate::source::{self, EmissionModel, PairRecord, SourceParams};
use crate::timebin::{
    basis_index, coincidence_probability, time_basis_probability, Bin, EnergyBasisSetting,
    JointTable, TimeBinState,
};

/// Windows per independently seeded block.
pub const BLOCK_WINDOWS: u64 = 1 << 22;

/// Upper limit on the number of precomputed drift steps.
const MAX_DRIFT_STEPS: f64 = 2e7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BasisProbabilities {
    pub time: f64,
    pub energy: f64,
}

impl Default for BasisProbabilities {
    fn default() -> Self {
        Self {
            time: 0.5,
            energy: 0.5,
        }
    }
}

impl BasisProbabilities {
    fn validate(&self, path: &str) -> Result<()> {
        for (name, v) in [("time", self.time), ("energy", self.energy)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::config(
                    format!("{path}.{name}"),
                    "must lie in [0, 1]",
                ));
            }
        }
        if (self.time + self.energy - 1.0).abs() > 1e-9 {
            return Err(Error::config(path, "time + energy must equal 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub source_a: SourceParams,
    pub source_b: SourceParams,
    pub channel_a: ChannelParams,
    pub channel_b: ChannelParams,
    /// Detectors of the Bell-state measurement.
    pub eve: DetectorParams,
    /// Local idler detection, including analyzer loss.
    pub alice: DetectorParams,
    pub bob: DetectorParams,
    /// Spectral purity; multiplies the mode overlap.
    pub spectral_purity: f64,
    /// Windows per run (per fringe point, or per QKD session).
    pub windows: u64,
    pub master_seed: u64,
    pub basis_alice: BasisProbabilities,
    pub basis_bob: BasisProbabilities,
    /// Offset of Bob's analyzer phase reference relative to Alice's.
    pub bob_reference_phase: f64,
    /// Wall-clock time per window; defaults to one pump period.
    pub seconds_per_window: Option<f64>,
    /// Time step of the drift and feedback simulation.
    pub drift_step_s: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            source_a: SourceParams::default(),
            source_b: SourceParams::default(),
            channel_a: ChannelParams::with_length(14.7),
            channel_b: ChannelParams::with_length(10.6),
            eve: DetectorParams::default(),
            alice: DetectorParams {
                efficiency: 0.5,
                ..DetectorParams::default()
            },
            bob: DetectorParams {
                efficiency: 0.5,
                ..DetectorParams::default()
            },
            spectral_purity: 0.994,
            windows: 1_000_000_000,
            master_seed: 0,
            basis_alice: BasisProbabilities::default(),
            basis_bob: BasisProbabilities::default(),
            bob_reference_phase: PI,
            seconds_per_window: None,
            drift_step_s: 1.0,
        }
    }
}

impl ExperimentConfig {
    /// Noiseless reference: one pair per source and window, no loss,
    /// perfect overlap and perfect detectors.
    pub fn ideal() -> Self {
        let source = SourceParams {
            emission: EmissionModel::SinglePair,
            ..SourceParams::default()
        };
        let channel = ChannelParams {
            length_km: 0.0,
            ..ChannelParams::default().without_drift()
        };
        Self {
            source_a: source,
            source_b: source,
            channel_a: channel,
            channel_b: channel,
            eve: DetectorParams::ideal(),
            alice: DetectorParams::ideal(),
            bob: DetectorParams::ideal(),
            spectral_purity: 1.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.source_a.validate("sources.a")?;
        self.source_b.validate("sources.b")?;
        self.channel_a.validate("channels.a")?;
        self.channel_b.validate("channels.b")?;
        self.eve.validate("detectors.eve")?;
        self.alice.validate("detectors.alice")?;
        self.bob.validate("detectors.bob")?;
        for (path, d) in [
            ("detectors.alice", &self.alice),
            ("detectors.bob", &self.bob),
        ] {
            if d.deadtime_windows != 0 {
                return Err(Error::config(
                    format!("{path}.deadtime_windows"),
                    "dead time is only modelled for the BSM detectors",
                ));
            }
        }
        if !(0.0..=1.0).contains(&self.spectral_purity) {
            return Err(Error::config("bsm.spectral_purity", "must lie in [0, 1]"));
        }
        if self.windows == 0 {
            return Err(Error::config("windows", "must be > 0"));
        }
        self.basis_alice.validate("bases.alice")?;
        self.basis_bob.validate("bases.bob")?;
        if !self.bob_reference_phase.is_finite() {
            return Err(Error::config("bsm.bob_reference_phase", "must be finite"));
        }
        if let Some(s) = self.seconds_per_window {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::config("timing.seconds_per_window", "must be > 0"));
            }
        }
        if !(self.drift_step_s > 0.0 && self.drift_step_s.is_finite()) {
            return Err(Error::config("timing.drift_step_s", "must be > 0"));
        }
        Ok(())
    }

    pub fn window_duration(&self) -> f64 {
        self.seconds_per_window
            .unwrap_or(1.0 / self.source_a.repetition_rate)
    }

    fn has_drift(&self) -> bool {
        self.channel_a.delay_drift_rate > 0.0
            || self.channel_a.pol_drift_rate > 0.0
            || self.channel_b.delay_drift_rate > 0.0
            || self.channel_b.pol_drift_rate > 0.0
    }
}

/// How a run is spread over threads. Does not affect results.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Execution {
    /// Worker threads; 0 uses the global rayon pool.
    pub workers: usize,
}

impl Execution {
    pub fn with_workers(workers: usize) -> Self {
        Self { workers }
    }

    fn install<T: Send>(&self, f: impl FnOnce() -> T + Send) -> Result<T> {
        if self.workers == 0 {
            return Ok(f());
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.workers)
            .build()
            .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;
        Ok(pool.install(f))
    }
}

// ---------------------------------------------------------------------------
// candidate process

/// Joint law of click candidates at the BSM in one window.
#[derive(Debug, Clone)]
struct CandidateSampler {
    /// Poisson rates: pairs A, pairs B, stray signals A, stray signals B.
    rates: [f64; 4],
    fixed_pairs: [usize; 2],
    /// Conditional law of (poisson total, dark count) given enough candidates.
    table: Vec<(usize, usize, f64)>,
    /// Probability that a window has enough candidates.
    q: f64,
}

#[derive(Debug, Clone, Copy, Default)]
struct Composition {
    pairs: [usize; 2],
    strays: [usize; 2],
    dark_mask: u8,
}

fn binomial_pmf(n: usize, k: usize, p: f64) -> f64 {
    let mut c = 1.0;
    for i in 0..k {
        c = c * (n - i) as f64 / (i + 1) as f64;
    }
    c * p.powi(k as i32) * (1.0 - p).powi((n - k) as i32)
}

impl CandidateSampler {
    fn new(cfg: &ExperimentConfig, threshold: usize) -> Self {
        let poisson_rate = |s: &SourceParams| match s.emission {
            EmissionModel::Poisson => s.mu,
            EmissionModel::SinglePair => 0.0,
        };
        let fixed = |s: &SourceParams| match s.emission {
            EmissionModel::Poisson => 0,
            EmissionModel::SinglePair => 1,
        };
        let rates = [
            poisson_rate(&cfg.source_a),
            poisson_rate(&cfg.source_b),
            cfg.source_a.noise_photon_mean,
            cfg.source_b.noise_photon_mean,
        ];
        let fixed_pairs = [fixed(&cfg.source_a), fixed(&cfg.source_b)];
        let need = threshold.saturating_sub(fixed_pairs[0] + fixed_pairs[1]);
        let lambda: f64 = rates.iter().sum();
        let p_dark = cfg.eve.dark_count_prob_per_window;

        let mut poisson = Vec::new();
        let mut pmf = (-lambda).exp();
        let mut j = 0usize;
        loop {
            poisson.push(pmf);
            j += 1;
            pmf *= lambda / j as f64;
            if (j as f64 > lambda && pmf < 1e-18) || j > 4096 {
                break;
            }
        }
        let mut table = Vec::new();
        let mut q = 0.0;
        for (j, &pj) in poisson.iter().enumerate() {
            for d in 0..=4 {
                if j + d < need {
                    continue;
                }
                let p = pj * binomial_pmf(4, d, p_dark);
                if p > 0.0 {
                    table.push((j, d, p));
                    q += p;
                }
            }
        }
        if need == 0 {
            q = 1.0;
        }
        Self {
            rates,
            fixed_pairs,
            table,
            q,
        }
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Composition {
        let weights: Vec<f64> = self.table.iter().map(|e| e.2).collect();
        let k = bsm::pick_weighted(&weights, rng).unwrap_or(0);
        let (j, d, _) = self.table[k];
        let mut counts = [0usize; 4];
        for _ in 0..j {
            if let Some(c) = bsm::pick_weighted(&self.rates, rng) {
                counts[c] += 1;
            }
        }
        let mut dark_mask = 0u8;
        if d > 0 {
            for s in sample_indices(rng, 4, d).iter() {
                dark_mask |= 1 << s;
            }
        }
        Composition {
            pairs: [
                counts[0] + self.fixed_pairs[0],
                counts[1] + self.fixed_pairs[1],
            ],
            strays: [counts[2], counts[3]],
            dark_mask,
        }
    }
}

// ---------------------------------------------------------------------------
// per-window physics

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Basis {
    Time,
    Energy,
}

/// What the local analyzers do in a window.
#[derive(Debug, Clone, Copy)]
enum Analysis {
    /// Energy basis on both sides at fixed phases (Bob's already includes
    /// his reference offset).
    Fringe {
        phi_a: f64,
        phi_b: f64,
    },
    Qkd,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Photon {
    Pair(usize),
    Stray(Bin),
}

/// Signal–idler amplitude matrix `[signal bin][idler bin]` of one photon
/// source feeding the beam splitter. Stray photons get a fixed fictitious idler.
type PairMatrix = [[Complex64; 2]; 2];

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);

fn definite_matrix(signal: Bin, idler: Bin) -> PairMatrix {
    let mut m = [[ZERO; 2]; 2];
    m[signal.index()][idler.index()] = ONE;
    m
}

fn coherent_matrix(params: &SourceParams) -> PairMatrix {
    let s = source::heralded_pair_state(params);
    let a = s.amplitudes();
    [[a[0], a[1]], [a[2], a[3]]]
}

/// Idler pair left entangled by the beam-splitter branch that fired.
#[derive(Debug, Clone, Copy)]
struct JointIdlers {
    state: TimeBinState,
    /// Pair index on each side whose idler is part of `state`; `None` for a
    /// stray photon's fictitious idler.
    pair: [Option<usize>; 2],
}

struct WindowOutcome {
    herald: bool,
    record: Option<SiftedRecord>,
    fourfold: bool,
}

/// Per-party detection: occupancy of two outcome slots → conclusive slot.
fn local_detect<R: Rng + ?Sized>(occ: [u8; 2], det: &DetectorParams, rng: &mut R) -> Option<usize> {
    let mut mask = 0u8;
    for (s, &n) in occ.iter().enumerate() {
        for _ in 0..n {
            if det.efficiency >= 1.0 || rng.random::<f64>() < det.efficiency {
                mask |= 1 << s;
                break;
            }
        }
    }
    mask |= bsm::sample_dark_mask(2, det.dark_count_prob_per_window, rng);
    match mask {
        0b01 => Some(0),
        0b10 => Some(1),
        _ => None,
    }
}

fn sample_table<R: Rng + ?Sized>(table: &JointTable, rng: &mut R) -> (usize, usize) {
    let flat = table.flat();
    let k = bsm::pick_weighted(&flat, rng).unwrap_or(0);
    (k / 2, k % 2)
}

fn marginal_slot<R: Rng + ?Sized>(table: &JointTable, first: bool, rng: &mut R) -> usize {
    let p0 = if first {
        table.get(0, 0) + table.get(0, 1)
    } else {
        table.get(0, 0) + table.get(1, 0)
    };
    usize::from(rng.random::<f64>() >= p0)
}

struct Engine<'a> {
    cfg: &'a ExperimentConfig,
    trans: [f64; 2],
    coherent: [PairMatrix; 2],
    trajectory: DriftTrajectory,
    sampler: CandidateSampler,
    gap: Option<Geometric>,
    window_s: f64,
}

#[derive(Debug, Default, Clone)]
struct BlockTally {
    heralds: u64,
    fourfold: u64,
    records: Vec<SiftedRecord>,
}

impl<'a> Engine<'a> {
    fn new(cfg: &'a ExperimentConfig, runs: u64) -> Result<Self> {
        cfg.validate()?;
        let window_s = cfg.window_duration();
        let trajectory = if cfg.has_drift() {
            let duration = window_s * cfg.windows as f64 * runs as f64;
            if duration / cfg.drift_step_s > MAX_DRIFT_STEPS {
                return Err(Error::config(
                    "timing.drift_step_s",
                    format!(
                        "{duration:.3e} s of drift at this step needs more than {MAX_DRIFT_STEPS:.0e} steps"
                    ),
                ));
            }
            let mut ra = rng::window_stream(cfg.master_seed, rng::ids::DRIFT_A, 0);
            let mut rb = rng::window_stream(cfg.master_seed, rng::ids::DRIFT_B, 0);
            DriftTrajectory::simulate(
                &cfg.channel_a,
                &cfg.channel_b,
                cfg.drift_step_s,
                duration,
                &mut ra,
                &mut rb,
            )
        } else {
            DriftTrajectory::ideal()
        };
        let threshold = if cfg.eve.deadtime_windows > 0 { 1 } else { 2 };
        let sampler = CandidateSampler::new(cfg, threshold);
        let gap = if sampler.q > 0.0 {
            Some(
                Geometric::new(sampler.q.min(1.0))
                    .map_err(|e| Error::invalid(format!("candidate rate: {e}")))?,
            )
        } else {
            None
        };
        Ok(Self {
            cfg,
            trans: [transmittance(&cfg.channel_a), transmittance(&cfg.channel_b)],
            coherent: [
                coherent_matrix(&cfg.source_a),
                coherent_matrix(&cfg.source_b),
            ],
            trajectory,
            sampler,
            gap,
            window_s,
        })
    }

    fn zeta_at(&self, global_window: u64) -> f64 {
        let t = global_window as f64 * self.window_s;
        (self.cfg.spectral_purity * self.trajectory.overlap_at(t)).clamp(0.0, 1.0)
    }

    fn pair_matrix(&self, side: usize, pairs: &[PairRecord], photon: Photon) -> PairMatrix {
        match photon {
            Photon::Pair(k) if pairs[k].coherent => self.coherent[side],
            Photon::Pair(k) => definite_matrix(pairs[k].signal_bin, pairs[k].idler_bin),
            Photon::Stray(b) => definite_matrix(b, Bin::Early),
        }
    }

    /// Samples a beam-splitter branch for one photon per side and returns
    /// the occupancy plus the conditional idler state.
    fn interfere<R: Rng + ?Sized>(
        &self,
        zeta: f64,
        mats: [PairMatrix; 2],
        rng: &mut R,
    ) -> ([u8; 4], TimeBinState) {
        let table = bsm::branches();
        let mut chis = [[ZERO; 4]; 26];
        let mut weights = [0.0; 26];
        for (k, br) in table.iter().enumerate() {
            let w = br.weight(zeta);
            if w <= 0.0 {
                continue;
            }
            let mut chi = [ZERO; 4];
            for ia in 0..2 {
                for ib in 0..2 {
                    let mut amp = ZERO;
                    for sa in 0..2 {
                        for sb in 0..2 {
                            let e = br.effect[basis_index(sa, sb)];
                            if e != 0.0 {
                                amp += mats[0][sa][ia] * mats[1][sb][ib] * e;
                            }
                        }
                    }
                    chi[basis_index(ia, ib)] = amp;
                }
            }
            weights[k] = w * chi.iter().map(|c| c.norm_sqr()).sum::<f64>();
            chis[k] = chi;
        }
        let k = bsm::pick_weighted(&weights, rng).expect("branch weights sum to one");
        let state = TimeBinState::from_amplitudes(chis[k]).expect("sampled branch has support");
        (table[k].occupancy, state)
    }

    fn process_window<R: Rng + ?Sized>(
        &self,
        global_window: u64,
        window_index: u64,
        comp: &Composition,
        analysis: Analysis,
        dead_until: &mut [Option<u64>; 4],
        rng: &mut R,
    ) -> WindowOutcome {
        let none = WindowOutcome {
            herald: false,
            record: None,
            fourfold: false,
        };
        let pairs = [
            source::pairs_for_count(comp.pairs[0], rng),
            source::pairs_for_count(comp.pairs[1], rng),
        ];
        let mut arriving: [Vec<Photon>; 2] = [Vec::new(), Vec::new()];
        for side in 0..2 {
            for k in 0..pairs[side].len() {
                if rng.random::<f64>() < self.trans[side] {
                    arriving[side].push(Photon::Pair(k));
                }
            }
            for _ in 0..comp.strays[side] {
                let b = source::random_bin(rng);
                if rng.random::<f64>() < self.trans[side] {
                    arriving[side].push(Photon::Stray(b));
                }
            }
        }

        let zeta = self.zeta_at(global_window);
        let mut joint: Option<JointIdlers> = None;
        let occupancy = if arriving[0].len() == 1 && arriving[1].len() == 1 {
            let ph = [arriving[0][0], arriving[1][0]];
            let mats = [
                self.pair_matrix(0, &pairs[0], ph[0]),
                self.pair_matrix(1, &pairs[1], ph[1]),
            ];
            let (occ, state) = self.interfere(zeta, mats, rng);
            let idx = |p: Photon| match p {
                Photon::Pair(k) => Some(k),
                Photon::Stray(_) => None,
            };
            joint = Some(JointIdlers {
                state,
                pair: [idx(ph[0]), idx(ph[1])],
            });
            occ
        } else {
            let mut bins: Vec<Bin> = Vec::new();
            for (side, list) in arriving.iter().enumerate() {
                for p in list {
                    bins.push(match *p {
                        Photon::Pair(k) => pairs[side][k].signal_bin,
                        Photon::Stray(b) => b,
                    });
                }
            }
            bsm::route_classically(&bins, rng)
        };

        let raw = bsm::thin(&occupancy, self.cfg.eve.efficiency, rng) | comp.dark_mask;
        let mut clicks = raw;
        let dt = self.cfg.eve.deadtime_windows as u64;
        if dt > 0 {
            for (s, slot) in dead_until.iter_mut().enumerate() {
                if let Some(until) = *slot {
                    if window_index <= until {
                        clicks &= !(1 << s);
                    }
                }
                if raw & (1 << s) != 0 {
                    *slot = Some(window_index + dt);
                }
            }
        }
        if classify(ClickPattern::from_mask(clicks)) != BsmOutcome::PsiMinusDetected {
            return none;
        }

        let (basis_a, basis_b, phase_a, phase_b) = match analysis {
            Analysis::Fringe { phi_a, phi_b } => (Basis::Energy, Basis::Energy, phi_a, phi_b),
            Analysis::Qkd => {
                let pick = |p: &BasisProbabilities, rng: &mut R| {
                    if rng.random::<f64>() < p.time {
                        Basis::Time
                    } else {
                        Basis::Energy
                    }
                };
                let a = pick(&self.cfg.basis_alice, rng);
                let b = pick(&self.cfg.basis_bob, rng);
                (a, b, 0.0, self.cfg.bob_reference_phase)
            }
        };
        let heralded = WindowOutcome {
            herald: true,
            record: None,
            fourfold: false,
        };
        if basis_a != basis_b {
            return heralded;
        }
        let basis = basis_a;

        // outcome slots: energy → (+, −), time → (early, late)
        let mut occ = [[0u8; 2]; 2];
        if let Some(j) = joint {
            let table = match basis {
                Basis::Energy => coincidence_probability(
                    &j.state,
                    EnergyBasisSetting::new(phase_a).expect("finite phase"),
                    EnergyBasisSetting::new(phase_b).expect("finite phase"),
                ),
                Basis::Time => time_basis_probability(&j.state),
            }
            .expect("conditional state is normalized");
            match (j.pair[0], j.pair[1]) {
                (Some(_), Some(_)) => {
                    let (oa, ob) = sample_table(&table, rng);
                    occ[0][oa] += 1;
                    occ[1][ob] += 1;
                }
                (Some(_), None) => occ[0][marginal_slot(&table, true, rng)] += 1,
                (None, Some(_)) => occ[1][marginal_slot(&table, false, rng)] += 1,
                (None, None) => {}
            }
        }
        let idler_strays = [
            self.cfg.source_a.noise_photon_mean,
            self.cfg.source_b.noise_photon_mean,
        ];
        for side in 0..2 {
            let in_joint = joint.and_then(|j| j.pair[side]);
            for (k, p) in pairs[side].iter().enumerate() {
                if Some(k) == in_joint {
                    continue;
                }
                // no partner interference: the idler has a definite bin
                let s = match basis {
                    Basis::Time => p.idler_bin.index(),
                    Basis::Energy => usize::from(rng.random::<bool>()),
                };
                occ[side][s] += 1;
            }
            let n = source::sample_count(idler_strays[side], rng).unwrap_or(0);
            for _ in 0..n {
                let b = source::random_bin(rng);
                let s = match basis {
                    Basis::Time => b.index(),
                    Basis::Energy => usize::from(rng.random::<bool>()),
                };
                occ[side][s] += 1;
            }
        }
        let oa = local_detect(occ[0], &self.cfg.alice, rng);
        let ob = local_detect(occ[1], &self.cfg.bob, rng);
        let (Some(oa), Some(ob)) = (oa, ob) else {
            return heralded;
        };
        match analysis {
            Analysis::Fringe { .. } => WindowOutcome {
                herald: true,
                record: None,
                fourfold: oa == 0 && ob == 0,
            },
            Analysis::Qkd => {
                let (bit_a, bit_b) = match basis {
                    // Ψ⁺ idlers are anticorrelated in time: Bob flips
                    Basis::Time => (oa as u8, 1 - ob as u8),
                    Basis::Energy => (oa as u8, ob as u8),
                };
                WindowOutcome {
                    herald: true,
                    record: Some(SiftedRecord {
                        window_index,
                        basis,
                        bit_a,
                        bit_b,
                    }),
                    fourfold: false,
                }
            }
        }
    }

    fn run_block(&self, run: u64, block: u64, analysis: Analysis) -> BlockTally {
        let mut tally = BlockTally::default();
        let Some(gap) = self.gap.as_ref() else {
            return tally;
        };
        let start = block * BLOCK_WINDOWS;
        let end = (start + BLOCK_WINDOWS).min(self.cfg.windows);
        let mut rng: SimRng = rng::block_stream(self.cfg.master_seed, run, block);
        let mut dead_until = [None; 4];
        let mut w = start;
        loop {
            let skip = gap.sample(&mut rng);
            w = match w.checked_add(skip) {
                Some(x) => x,
                None => break,
            };
            if w >= end {
                break;
            }
            let comp = self.sampler.sample(&mut rng);
            let global = run * self.cfg.windows + w;
            let out = self.process_window(global, w, &comp, analysis, &mut dead_until, &mut rng);
            if out.herald {
                tally.heralds += 1;
            }
            if out.fourfold {
                tally.fourfold += 1;
            }
            if let Some(r) = out.record {
                tally.records.push(r);
            }
            w += 1;
        }
        tally
    }

    fn blocks(&self) -> u64 {
        self.cfg.windows.div_ceil(BLOCK_WINDOWS)
    }
}

// ---------------------------------------------------------------------------
// public runs

/// Four-fold (+,+) coincidences as Alice sweeps her analyzer phase.
pub fn run_fringe_scan(
    config: &ExperimentConfig,
    phi_b: f64,
    phi_a_grid: &[f64],
) -> Result<Vec<FringePoint>> {
    run_fringe_scan_with(config, phi_b, phi_a_grid, Execution::default())
}

pub fn run_fringe_scan_with(
    config: &ExperimentConfig,
    phi_b: f64,
    phi_a_grid: &[f64],
    exec: Execution,
) -> Result<Vec<FringePoint>> {
    if phi_a_grid.is_empty() {
        return Err(Error::config("fringe.phi_a_grid", "must not be empty"));
    }
    if !phi_b.is_finite() || phi_a_grid.iter().any(|p| !p.is_finite()) {
        return Err(Error::config("fringe", "phases must be finite"));
    }
    let engine = Engine::new(config, phi_a_grid.len() as u64)?;
    let blocks = engine.blocks();
    let jobs: Vec<(u64, u64)> = (0..phi_a_grid.len() as u64)
        .flat_map(|run| (0..blocks).map(move |b| (run, b)))
        .collect();
    let phi_b_eff = phi_b + config.bob_reference_phase;
    let tallies: Vec<BlockTally> = exec.install(|| {
        jobs.par_iter()
            .map(|&(run, block)| {
                let analysis = Analysis::Fringe {
                    phi_a: phi_a_grid[run as usize],
                    phi_b: phi_b_eff,
                };
                engine.run_block(run, block, analysis)
            })
            .collect()
    })?;
    let mut points: Vec<FringePoint> = phi_a_grid
        .iter()
        .map(|&phi_a| FringePoint {
            phi_a,
            fourfold_count: 0,
            total_heralds: 0,
        })
        .collect();
    for (&(run, _), t) in jobs.iter().zip(&tallies) {
        let p = &mut points[run as usize];
        p.fourfold_count += t.fourfold;
        p.total_heralds += t.heralds;
    }
    Ok(points)
}

/// One sifted key position.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SiftedRecord {
    pub window_index: u64,
    pub basis: Basis,
    pub bit_a: u8,
    pub bit_b: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BasisTally {
    pub sifted: u64,
    pub errors: u64,
    pub error_rate: f64,
}

impl BasisTally {
    fn from_records<'r>(records: impl Iterator<Item = &'r SiftedRecord>) -> Self {
        let (mut n, mut e) = (0u64, 0u64);
        for r in records {
            n += 1;
            if r.bit_a != r.bit_b {
                e += 1;
            }
        }
        Self {
            sifted: n,
            errors: e,
            error_rate: if n > 0 { e as f64 / n as f64 } else { 0.0 },
        }
    }

    /// Binomial standard error of the error rate.
    pub fn error_rate_sigma(&self) -> f64 {
        if self.sifted == 0 {
            return 0.0;
        }
        let e = self.error_rate;
        (e * (1.0 - e) / self.sifted as f64).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SessionSummary {
    pub windows: u64,
    pub heralds: u64,
    pub time: BasisTally,
    pub energy: BasisTally,
    /// Sifted bits per window.
    pub q: f64,
}

impl SessionSummary {
    pub fn sifted_summary(&self) -> crate::finite_key::SiftedSummary {
        crate::finite_key::SiftedSummary {
            n_energy: self.energy.sifted,
            n_time: self.time.sifted,
            e_b_energy: self.energy.error_rate,
            e_b_time: self.time.error_rate,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QkdSession {
    pub records: Vec<SiftedRecord>,
    pub summary: SessionSummary,
}

pub fn run_qkd_session(config: &ExperimentConfig) -> Result<QkdSession> {
    run_qkd_session_with(config, Execution::default())
}

pub fn run_qkd_session_with(config: &ExperimentConfig, exec: Execution) -> Result<QkdSession> {
    let engine = Engine::new(config, 1)?;
    let blocks: Vec<u64> = (0..engine.blocks()).collect();
    let tallies: Vec<BlockTally> = exec.install(|| {
        blocks
            .par_iter()
            .map(|&b| engine.run_block(0, b, Analysis::Qkd))
            .collect()
    })?;
    let mut records = Vec::new();
    let mut heralds = 0;
    for t in tallies {
        heralds += t.heralds;
        records.extend(t.records);
    }
    let time = BasisTally::from_records(records.iter().filter(|r| r.basis == Basis::Time));
    let energy = BasisTally::from_records(records.iter().filter(|r| r.basis == Basis::Energy));
    let summary = SessionSummary {
        windows: config.windows,
        heralds,
        time,
        energy,
        q: records.len() as f64 / config.windows as f64,
    };
    Ok(QkdSession { records, summary })
}

/// Probability that a window holds enough BSM click candidates to be
/// resolved in full.
pub fn candidate_rate(config: &ExperimentConfig) -> f64 {
    let threshold = if config.eve.deadtime_windows > 0 {
        1
    } else {
        2
    };
    CandidateSampler::new(config, threshold).q
}
