use timebin_swap::channel::{
    advance_drift, apply_feedback, mode_overlap, transmittance, ChannelParams, ChannelState,
    DriftTrajectory,
};
use timebin_swap::rng::{ids, window_stream};

fn free_walk() -> ChannelParams {
    ChannelParams {
        feedback_enabled: false,
        ..ChannelParams::default()
    }
}

fn final_offsets(stream: u64, trials: u64, steps: usize, dt: f64) -> Vec<f64> {
    let p = free_walk();
    (0..trials)
        .map(|t| {
            let mut rng = window_stream(stream, ids::DRIFT_A, t);
            let mut s = ChannelState::default();
            for _ in 0..steps {
                s = advance_drift(s, dt, &p, &mut rng);
            }
            s.delay_offset_ps
        })
        .collect()
}

/// Two-sample Kolmogorov–Smirnov statistic.
fn ks_statistic(mut a: Vec<f64>, mut b: Vec<f64>) -> f64 {
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < a.len() && j < b.len() {
        if a[i] <= b[j] {
            i += 1;
        } else {
            j += 1;
        }
        d = d.max((i as f64 / a.len() as f64 - j as f64 / b.len() as f64).abs());
    }
    d
}

#[test]
fn independent_streams_share_a_distribution() {
    let a = final_offsets(1, 4000, 20, 5.0);
    let b = final_offsets(2, 4000, 20, 5.0);
    assert_ne!(a[..10], b[..10]);
    let d = ks_statistic(a, b);
    // critical value at α = 0.001: 1.95·sqrt(2/n)
    let crit = 1.95 * (2.0 / 4000.0f64).sqrt();
    assert!(d < crit, "KS statistic {d} ≥ {crit}");
}

#[test]
fn free_delay_variance_grows_linearly() {
    let p = free_walk();
    let trials = 2000u64;
    let dt = 10.0;
    let checkpoints = [5usize, 10, 20, 40];
    let mut sums = vec![0.0; checkpoints.len()];
    for t in 0..trials {
        let mut rng = window_stream(7, ids::DRIFT_B, t);
        let mut s = ChannelState::default();
        let mut step = 0;
        for (k, &c) in checkpoints.iter().enumerate() {
            while step < c {
                s = advance_drift(s, dt, &p, &mut rng);
                step += 1;
            }
            sums[k] += s.delay_offset_ps.powi(2);
        }
    }
    // least-squares slope through the origin
    let (mut num, mut den) = (0.0, 0.0);
    for (k, &c) in checkpoints.iter().enumerate() {
        let time = c as f64 * dt;
        num += time * sums[k] / trials as f64;
        den += time * time;
    }
    let slope = num / den;
    let expect = p.delay_drift_rate.powi(2);
    assert!((slope - expect).abs() / expect < 0.1, "slope {slope}");
}

#[test]
fn feedback_keeps_delay_bounded() {
    let p = ChannelParams::default();
    let mut rng = window_stream(5, ids::DRIFT_A, 0);
    let mut s = ChannelState::default();
    let mut worst = 0.0f64;
    for _ in 0..100_000 {
        s = apply_feedback(advance_drift(s, 1.0, &p, &mut rng), &p);
        worst = worst.max(s.delay_offset_ps.abs());
    }
    let bound =
        5.0 * p.delay_drift_rate * p.feedback_interval_s.sqrt() + p.correction_resolution_ps;
    assert!(worst <= bound, "{worst} > {bound}");
}

#[test]
fn stabilized_links_keep_high_overlap() {
    let a = ChannelParams::with_length(14.7);
    let b = ChannelParams::with_length(10.6);
    let mut ra = window_stream(8, ids::DRIFT_A, 0);
    let mut rb = window_stream(8, ids::DRIFT_B, 0);
    let traj = DriftTrajectory::simulate(&a, &b, 1.0, 20_000.0, &mut ra, &mut rb);
    assert!(traj.mean_overlap() >= 0.95, "{}", traj.mean_overlap());
}

#[test]
fn loss_and_overlap_closed_forms() {
    assert!((transmittance(&ChannelParams::with_length(14.7)) - 0.5081).abs() < 1e-4);
    assert!((transmittance(&ChannelParams::with_length(10.6)) - 0.6138).abs() < 1e-4);
    let p = ChannelParams::default();
    let a = ChannelState {
        delay_offset_ps: p.coherence_time_ps,
        pol_angle_rad: 0.3,
        elapsed_since_feedback_s: 0.0,
    };
    let b = ChannelState {
        pol_angle_rad: 0.3,
        ..ChannelState::default()
    };
    assert!((mode_overlap(&a, &b, &p) - (-0.5f64).exp()).abs() < 1e-12);
    assert_eq!(mode_overlap(&a, &b, &p), mode_overlap(&b, &a, &p));
}
