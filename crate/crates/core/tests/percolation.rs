use proptest::prelude::*;

use disperc::percolation::{moment_k, sample_sizes, saw_series, tail_estimate, ClusterGrower, HashedUniforms};

#[test]
fn clusters_are_monotone_in_p_under_common_uniforms() {
    let mut lo = ClusterGrower::new(2, 20_000).unwrap();
    let mut hi = ClusterGrower::new(2, 20_000).unwrap();
    let mut truncated = 0;
    for seed in 0..10_000u64 {
        let (p1, p2) = (0.2 + 0.3 * (seed % 7) as f64 / 7.0, 0.5);
        lo.grow(p1, &mut HashedUniforms { seed });
        if hi.grow(p2, &mut HashedUniforms { seed }).1 {
            // A truncated cluster is an arbitrary part of the full one.
            truncated += 1;
            continue;
        }
        let big: std::collections::BTreeSet<_> = hi.sites().into_iter().collect();
        assert!(lo.sites().iter().all(|s| big.contains(s)), "seed {seed}");
    }
    assert!(truncated < 10, "{truncated} truncated clusters");
}

#[test]
fn moment_estimate_stays_below_the_path_series() {
    for (p, c) in [(0.05, 0.02), (0.1, 0.05), (0.15, 0.1), (0.2, 0.0)] {
        // Σ_n n e^{cn} ((2d-1)p)^{n-1}: the path series anchored at the origin.
        let x = 3.0 * p * f64::exp(c);
        let series = saw_series(p, 2, c) * c.exp() / x;
        assert!(series.is_finite());
        let k = moment_k(p, 2, c, 200, 100_000, 1).unwrap();
        assert!(k.value <= series + 3.0 * k.std_error, "p={p}: {} > {series}", k.value);
        assert!(k.value >= c.exp());
    }
}

#[test]
fn first_shell_matches_closed_forms() {
    let p = 0.3;
    let n = 200_000;
    let sizes = sample_sizes(p, 2, 50, n, 8).unwrap();
    let isolated = sizes.iter().filter(|s| s.size == 1).count() as f64 / n as f64;
    let want = (1.0f64 - p).powi(4);
    let se = (want * (1.0 - want) / n as f64).sqrt();
    assert!((isolated - want).abs() < 3.0 * se, "{isolated} vs {want}");
    let t2 = tail_estimate(p, 2, 2, n, 8).unwrap();
    assert!((t2.value - (1.0 - want)).abs() < 3.0 * t2.std_error.max(se));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn tails_are_nonincreasing(p in 0.05f64..0.5, seed in any::<u64>()) {
        let mut prev = f64::INFINITY;
        for n in 1..12 {
            let t = tail_estimate(p, 2, n, 5_000, seed).unwrap();
            prop_assert!(t.value <= prev + 3.0 * t.std_error + 1e-15);
            prev = t.value;
        }
    }
}
