use timebin_swap::rng::{ids, window_stream};
use timebin_swap::source::{sample_emission, sample_emission_at, EmissionModel, SourceParams};

#[test]
fn poisson_pair_statistics_over_ten_million_windows() {
    let params = SourceParams::default();
    let mut rng = window_stream(2024, ids::SOURCE_A, 0);
    let n = 10_000_000u64;
    let (mut any, mut multi, mut total) = (0u64, 0u64, 0u64);
    for w in 0..n {
        let rec = sample_emission(&params, w, &mut rng).unwrap();
        let k = rec.pairs.len() as u64;
        total += k;
        if k >= 1 {
            any += 1;
            assert!(rec.pairs[0].coherent);
            assert!(rec.pairs[1..].iter().all(|p| !p.coherent));
        }
        if k >= 2 {
            multi += 1;
        }
        assert!(rec.pairs.iter().all(|p| p.signal_bin == p.idler_bin));
    }
    let mu = params.mu;
    let p1 = 1.0 - (-mu).exp();
    let got = any as f64 / n as f64;
    assert!(
        (got - p1).abs() < 3.0 * (p1 * (1.0 - p1) / n as f64).sqrt(),
        "{got} vs {p1}"
    );

    let p2 = 1.0 - (-mu).exp() * (1.0 + mu);
    let ratio = p2 / p1;
    let got = multi as f64 / any as f64;
    let sigma = (ratio * (1.0 - ratio) / any as f64).sqrt();
    assert!((got - ratio).abs() < 3.0 * sigma, "{got} vs {ratio}");
    assert!((ratio - 0.0149).abs() < 1e-4);

    let mean = total as f64 / n as f64;
    assert!((mean - mu).abs() < 5.0 * (mu / n as f64).sqrt());
}

#[test]
fn windows_are_reproducible_in_any_order() {
    let params = SourceParams {
        mu: 0.5,
        ..SourceParams::default()
    };
    let forward: Vec<_> = (0..500)
        .map(|w| sample_emission_at(&params, 9, ids::SOURCE_B, w).unwrap())
        .collect();
    for w in (0..500).rev() {
        assert_eq!(
            sample_emission_at(&params, 9, ids::SOURCE_B, w).unwrap(),
            forward[w as usize]
        );
    }
}

#[test]
fn single_pair_model_always_emits_one_coherent_pair() {
    let params = SourceParams {
        emission: EmissionModel::SinglePair,
        ..SourceParams::default()
    };
    let mut rng = window_stream(1, ids::SOURCE_A, 0);
    for w in 0..1000 {
        let rec = sample_emission(&params, w, &mut rng).unwrap();
        assert_eq!(rec.pairs.len(), 1);
        assert!(rec.pairs[0].coherent);
    }
}
