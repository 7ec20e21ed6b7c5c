use std::sync::Arc;

use proptest::prelude::*;

use disperc::coupling::{optimal_binary_coupling, CouplingProblem};
use disperc::lattice::{enumerate_box, is_connected};
use disperc::model::{conditional_plus_prob, BoundaryCondition, Coupling, ExactMeasure, ModelParams};
use disperc::rng::stream;

fn measure(n: usize, beta: f64, h: f64, j: i32) -> ExactMeasure {
    let params = ModelParams::new(2, beta, h, Coupling::from_sign(j).unwrap()).unwrap();
    ExactMeasure::new(params, Arc::new(enumerate_box(2, n).unwrap()), BoundaryCondition::Free).unwrap()
}

/// Law of ranks `fixed.len()..` given ranks `0..fixed.len()`, by filtering the joint table.
fn brute_conditional(m: &ExactMeasure, fixed: &[i8]) -> Vec<f64> {
    let k = fixed.len();
    let mut out = vec![0.0; 1 << (m.n_sites() - k)];
    for (idx, p) in m.probs().iter().enumerate() {
        let matches = fixed.iter().enumerate().all(|(b, &s)| (idx >> b & 1 == 1) == (s > 0));
        if matches {
            out[idx >> k] += p;
        }
    }
    let z: f64 = out.iter().sum();
    out.iter().map(|p| p / z).collect()
}

fn prefix(bits: usize, len: usize) -> Vec<i8> {
    (0..len).map(|b| if bits >> b & 1 == 1 { 1 } else { -1 }).collect()
}

#[test]
fn tree_marginals_are_the_two_conditional_laws_for_every_prefix() {
    for (beta, h, j) in [(0.05, 0.0, 1), (0.3, 0.2, -1)] {
        let m = measure(9, beta, h, j);
        for i in 0..9 {
            for bits in 0..1usize << i {
                let xi = prefix(bits, i);
                let problem = CouplingProblem::new(&m, i, &xi).unwrap();
                let (y, z) = problem.tree().unwrap().marginals(&problem);
                let mut plus = xi.clone();
                plus.push(1);
                let mut minus = xi.clone();
                minus.push(-1);
                for (got, want) in [(&y, brute_conditional(&m, &plus)), (&z, brute_conditional(&m, &minus))] {
                    let worst = got.iter().zip(&want).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                    assert!(worst < 1e-10, "beta={beta} i={i} xi={xi:?}: {worst:e}");
                }
            }
        }
    }
}

#[test]
fn single_flip_disagreement_is_at_most_p() {
    for beta in [0.0, 0.02, 0.1, 0.4, 1.0] {
        for h in [0.0, 0.3, 2.0] {
            for dim in 1..=3usize {
                for j in [1, -1] {
                    let params = ModelParams::new(dim, beta, h, Coupling::from_sign(j).unwrap()).unwrap();
                    // Free-boundary sites have fewer neighbors, so every integer sum occurs.
                    let two_d = 2 * dim as i32;
                    for s in -two_d..=two_d - 2 {
                        let a = conditional_plus_prob(&params, s);
                        let b = conditional_plus_prob(&params, s + 2);
                        let d = optimal_binary_coupling(a, b).unwrap().disagreement();
                        assert!(d <= params.p() + 1e-15, "beta={beta} h={h} d={dim} S={s}: {d} > {}", params.p());
                    }
                }
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn transcripts_are_connected_contained_and_reproducible(
        beta in 0.0f64..0.6,
        h in 0.0f64..1.0,
        j in prop::sample::select(vec![1, -1]),
        pivot in 0usize..8,
        bits in 0usize..256,
        seed in any::<u64>(),
    ) {
        let m = measure(9, beta, h, j);
        let xi = prefix(bits, pivot);
        let problem = CouplingProblem::new(&m, pivot, &xi).unwrap();
        let p = m.params().p();
        for r in 0..8 {
            let exact = problem.sample_exact(&mut stream(seed, "prop", r));
            prop_assert!(exact.check(m.lattice()).is_ok());
            prop_assert!(exact.disagreement.contains(&pivot));
            prop_assert!(is_connected(&exact.disagreement, m.lattice()));
            prop_assert_eq!(&exact, &problem.sample_exact(&mut stream(seed, "prop", r)));

            let two = problem.sample_two_stage(p, &mut stream(seed, "prop-two", r));
            let failure = two.failure.clone().unwrap();
            prop_assert!(two.disagreement.is_subset(&failure));
            prop_assert!(is_connected(&failure, m.lattice()));
            prop_assert_eq!(&two, &problem.sample_two_stage(p, &mut stream(seed, "prop-two", r)));
        }
    }
}
