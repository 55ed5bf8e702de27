use std::f64::consts::PI;

use timebin_swap::experiment::{
    run_fringe_scan, run_fringe_scan_with, run_qkd_session, run_qkd_session_with, Basis, Execution,
    ExperimentConfig,
};
use timebin_swap::finite_key::linear_grid;
use timebin_swap::fit::fit_visibility;
use timebin_swap::timebin::{
    bell_state, coincidence_probability, time_basis_probability, BellKind, EnergyBasisSetting,
};

fn grid() -> Vec<f64> {
    linear_grid(0.0, 2.0 * PI, 13)
}

#[test]
fn ideal_fringe_follows_the_singlet_swap_shape() {
    let cfg = ExperimentConfig {
        windows: 40_000,
        master_seed: 1,
        ..ExperimentConfig::ideal()
    };
    let phi_b = 0.7;
    let pts = run_fringe_scan(&cfg, phi_b, &grid()).unwrap();
    for p in &pts {
        let expect = (1.0 + (p.phi_a - phi_b).cos()) / 4.0;
        // every herald ends in a conclusive pair of clicks, so the four-fold
        // fraction of heralds is P(+,+) itself
        let n = p.total_heralds as f64;
        let q = expect;
        let sigma = (n * q * (1.0 - q)).sqrt().max(1.0);
        assert!(
            (p.fourfold_count as f64 - n * q).abs() < 4.0 * sigma,
            "{p:?}"
        );
        let h = 0.25;
        let hs = (cfg.windows as f64 * h * (1.0 - h)).sqrt();
        assert!((n - cfg.windows as f64 * h).abs() < 4.0 * hs);
    }
    let fit = fit_visibility(&pts).unwrap();
    assert!((fit.visibility - 1.0).abs() <= 0.01, "{fit:?}");
    assert!((fit.phase_offset + phi_b).abs() < 0.05, "{fit:?}");
}

#[test]
fn ideal_session_is_error_free() {
    let cfg = ExperimentConfig {
        windows: 200_000,
        master_seed: 2,
        ..ExperimentConfig::ideal()
    };
    let s = run_qkd_session(&cfg).unwrap().summary;
    assert!(s.time.sifted > 10_000 && s.energy.sifted > 10_000);
    assert_eq!(s.time.errors, 0);
    assert_eq!(s.energy.errors, 0);
    assert_eq!(
        s.q,
        (s.time.sifted + s.energy.sifted) as f64 / cfg.windows as f64
    );
}

/// (bit_A, bit_B) table predicted for heralded Ψ⁺ idlers.
#[allow(clippy::needless_range_loop)]
fn predicted_bits(basis: Basis) -> [[f64; 2]; 2] {
    let psi = bell_state(BellKind::PsiPlus);
    let mut t = [[0.0; 2]; 2];
    match basis {
        Basis::Energy => {
            let zero = EnergyBasisSetting::new(0.0).unwrap();
            let p = coincidence_probability(&psi, zero, zero).unwrap();
            for (a, row) in t.iter_mut().enumerate() {
                for (b, cell) in row.iter_mut().enumerate() {
                    *cell = p.get(a, b);
                }
            }
        }
        Basis::Time => {
            let p = time_basis_probability(&psi).unwrap();
            for a in 0..2 {
                for b in 0..2 {
                    // Bob flips his time-basis bit
                    t[a][1 - b] = p.get(a, b);
                }
            }
        }
    }
    t
}

#[test]
fn sifted_bits_follow_psi_plus_statistics() {
    let cfg = ExperimentConfig {
        windows: 1_000_000,
        master_seed: 3,
        ..ExperimentConfig::ideal()
    };
    let session = run_qkd_session(&cfg).unwrap();
    assert!(session.records.len() >= 100_000);
    for basis in [Basis::Time, Basis::Energy] {
        let mut counts = [[0u64; 2]; 2];
        for r in session.records.iter().filter(|r| r.basis == basis) {
            counts[r.bit_a as usize][r.bit_b as usize] += 1;
        }
        let n: u64 = counts.iter().flatten().sum();
        let pred = predicted_bits(basis);
        for a in 0..2 {
            for b in 0..2 {
                let p = pred[a][b];
                let c = counts[a][b] as f64;
                let sigma = (n as f64 * p * (1.0 - p)).sqrt();
                if sigma == 0.0 {
                    assert_eq!(c, n as f64 * p, "{basis:?} ({a},{b})");
                } else {
                    assert!(
                        (c - n as f64 * p).abs() < 3.0 * sigma,
                        "{basis:?} ({a},{b})"
                    );
                }
            }
        }
    }
}

#[test]
fn sifted_count_scales_with_windows() {
    let base = ExperimentConfig {
        windows: 400_000,
        master_seed: 4,
        ..ExperimentConfig::ideal()
    };
    let double = ExperimentConfig {
        windows: 800_000,
        ..base.clone()
    };
    let n1 = run_qkd_session(&base).unwrap().records.len() as f64;
    let n2 = run_qkd_session(&double).unwrap().records.len() as f64;
    assert!((n2 / n1 - 2.0).abs() / 2.0 < 0.05, "{n1} {n2}");
}

#[test]
fn results_do_not_depend_on_worker_count() {
    let cfg = ExperimentConfig {
        windows: 30_000_000,
        master_seed: 5,
        ..ExperimentConfig::default()
    };
    let g = linear_grid(0.0, 2.0 * PI, 5);
    let reference = run_fringe_scan_with(&cfg, 0.0, &g, Execution::with_workers(1)).unwrap();
    let session = run_qkd_session_with(&cfg, Execution::with_workers(1)).unwrap();
    for w in [2, 3, 8] {
        let exec = Execution::with_workers(w);
        assert_eq!(
            run_fringe_scan_with(&cfg, 0.0, &g, exec).unwrap(),
            reference
        );
        assert_eq!(run_qkd_session_with(&cfg, exec).unwrap(), session);
    }
    let other = ExperimentConfig {
        master_seed: 6,
        ..cfg
    };
    assert_ne!(run_fringe_scan(&other, 0.0, &g).unwrap(), reference);
}

#[test]
fn dead_time_only_removes_heralds() {
    let base = ExperimentConfig {
        windows: 2_000_000,
        master_seed: 7,
        source_a: timebin_swap::source::SourceParams {
            mu: 0.2,
            ..Default::default()
        },
        source_b: timebin_swap::source::SourceParams {
            mu: 0.2,
            ..Default::default()
        },
        ..ExperimentConfig::default()
    };
    let mut dead = base.clone();
    dead.eve.deadtime_windows = 50;
    let g = [0.0, 1.6, 3.2, 4.8];
    let h0: u64 = run_fringe_scan(&base, 0.0, &g)
        .unwrap()
        .iter()
        .map(|p| p.total_heralds)
        .sum();
    let h1: u64 = run_fringe_scan(&dead, 0.0, &g)
        .unwrap()
        .iter()
        .map(|p| p.total_heralds)
        .sum();
    assert!(h0 > 100);
    assert!(h1 < h0, "{h1} vs {h0}");
}

#[test]
fn invalid_configs_are_rejected() {
    let mut cfg = ExperimentConfig::default();
    cfg.alice.deadtime_windows = 3;
    assert!(run_qkd_session(&cfg).is_err());
    let cfg = ExperimentConfig {
        spectral_purity: 1.5,
        ..ExperimentConfig::default()
    };
    assert!(run_fringe_scan(&cfg, 0.0, &grid()).is_err());
    assert!(run_fringe_scan(&ExperimentConfig::ideal(), f64::NAN, &grid()).is_err());
}
