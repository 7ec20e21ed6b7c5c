use std::sync::Arc;

use proptest::prelude::*;

use disperc::audit::{poincare_certificate, PercolationBudget};
use disperc::functionals::{random_table, Observable, Functional};
use disperc::glauber::{simulate, Generator, HeatBath};
use disperc::lattice::enumerate_box;
use disperc::model::{spins_to_index, BoundaryCondition, Coupling, ExactMeasure, ModelParams};
use disperc::rng::stream;

fn measure(dim: usize, n: usize, beta: f64, h: f64, j: i32, bc: BoundaryCondition) -> ExactMeasure {
    let params = ModelParams::new(dim, beta, h, Coupling::from_sign(j).unwrap()).unwrap();
    ExactMeasure::new(params, Arc::new(enumerate_box(dim, n).unwrap()), bc).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn generator_is_stationary_and_reversible(
        dim in 1usize..=3,
        n in 1usize..=9,
        beta in 0.0f64..1.5,
        h in 0.0f64..2.0,
        j in prop::sample::select(vec![1, -1]),
        bc in prop::sample::select(vec![BoundaryCondition::Free, BoundaryCondition::Plus, BoundaryCondition::Minus]),
    ) {
        let m = measure(dim, n, beta, h, j, bc);
        let g = Generator::new(&m, &HeatBath::for_measure(&m)).unwrap();
        prop_assert!(g.row_sum_residual() < 1e-12);
        prop_assert!(g.stationarity_residual() < 1e-12);
        prop_assert!(g.symmetry_residual() < 1e-10);
    }
}

#[test]
fn certified_gap_bound_holds_on_small_boxes() {
    for (beta, h) in [(0.0, 0.0), (0.005, 0.0), (0.012, 0.0), (0.016, 0.0), (0.0, 1.0)] {
        let params = ModelParams::ferro(2, beta, h).unwrap();
        let cert = poincare_certificate(&params, PercolationBudget { samples: 200_000, cap: 200, seed: 3 }).unwrap();
        assert!(cert.c_p.is_finite(), "beta={beta}: {:?}", cert.notes);
        for n in [1, 3, 5, 8, 10] {
            let m = measure(2, n, beta, h, 1, BoundaryCondition::Free);
            let gap = Generator::new(&m, &HeatBath::for_measure(&m)).unwrap().spectral_gap().unwrap();
            assert!(gap >= cert.gap_lower_bound - 1e-8, "beta={beta} n={n}: gap {gap} < {}", cert.gap_lower_bound);
        }
    }
}

/// Mean of `f(σ_t)` from a fixed start against `(e^{tL} f)(σ_0)`.
#[test]
fn uniformization_is_unbiased() {
    let m = measure(2, 6, 0.3, 0.2, 1, BoundaryCondition::Plus);
    let rates = HeatBath::for_measure(&m);
    let g = Generator::new(&m, &rates).unwrap();
    let ranks: Vec<usize> = (0..6).collect();
    for (k, f) in [random_table(4, 64), disperc::functionals::tabulate(&Observable::random_polynomial(4, 3, 6), &m)]
        .into_iter()
        .enumerate()
    {
        for t in [0.3, 1.0, 3.0] {
            let start = vec![1i8, -1, 1, 1, -1, -1];
            let exact = g.semigroup(&f, t).unwrap()[spins_to_index(&start) as usize];
            let reps = 40_000;
            let (mut sum, mut sq) = (0.0, 0.0);
            for r in 0..reps {
                let mut s = start.clone();
                simulate(&mut s, &ranks, &rates, t, &mut stream(17 + k as u64, "unbiased", r));
                let v = f[spins_to_index(&s) as usize];
                sum += v;
                sq += v * v;
            }
            let mean = sum / reps as f64;
            let se = ((sq / reps as f64 - mean * mean) / reps as f64).sqrt();
            assert!((mean - exact).abs() <= 3.0 * se + 1e-12, "f{k} t={t}: MC {mean} +- {se}, exact {exact}");
        }
    }
}

#[test]
fn observables_and_tables_agree() {
    let m = measure(2, 5, 0.1, 0.0, 1, BoundaryCondition::Free);
    let obs = Observable::random_polynomial(9, 2, 5);
    let table = disperc::functionals::tabulate(&obs, &m);
    for (idx, v) in table.iter().enumerate() {
        assert_eq!(*v, obs.eval(m.config(idx).spins()));
    }
}
