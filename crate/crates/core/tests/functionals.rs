use std::sync::Arc;

use proptest::prelude::*;

use disperc::audit::plain_dirichlet_form;
use disperc::functionals::{delta_norm_sq_table, grad_set, random_table, tabulate, telescoping_sum, Observable};
use disperc::lattice::{enumerate_box, OrderedSubset};
use disperc::model::{spins_to_index, BoundaryCondition, ExactMeasure, ModelParams};

const N: usize = 8;

fn spins_strategy() -> impl Strategy<Value = Vec<i8>> {
    prop::collection::vec(prop::sample::select(vec![-1i8, 1]), N)
}

fn ordered_subset() -> impl Strategy<Value = Vec<usize>> {
    Just((0..N).collect::<Vec<_>>()).prop_shuffle().prop_flat_map(|perm| (0..=N).prop_map(move |k| perm[..k].to_vec()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn telescoping_bounds_the_set_gradient(seed in any::<u64>(), spins in spins_strategy(), set in ordered_subset()) {
        let table = random_table(seed, 1 << N);
        let f = |s: &[i8]| table[spins_to_index(s) as usize];
        let a = OrderedSubset::new(set).unwrap();
        prop_assert!(grad_set(&f, &spins, &a).abs() <= telescoping_sum(&f, &spins, &a) + 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2_000))]

    #[test]
    fn telescoping_sum_grows_with_the_set(
        seed in any::<u64>(),
        spins in spins_strategy(),
        a in ordered_subset(),
        b in ordered_subset(),
    ) {
        let table = random_table(seed, 1 << N);
        let f = |s: &[i8]| table[spins_to_index(s) as usize];
        let a = OrderedSubset::new(a).unwrap();
        // B ⊇ A, enumerated A first.
        let b = a.then(&OrderedSubset::new(b).unwrap());
        prop_assert!(telescoping_sum(&f, &spins, &a) <= telescoping_sum(&f, &spins, &b) + 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn dirichlet_form_is_below_the_uniform_norm(
        beta in 0.0f64..1.0,
        h in 0.0f64..2.0,
        seed in any::<u64>(),
        degree in 1usize..5,
        polynomial in any::<bool>(),
    ) {
        let params = ModelParams::ferro(2, beta, h).unwrap();
        let m = ExactMeasure::new(params, Arc::new(enumerate_box(2, N).unwrap()), BoundaryCondition::Free).unwrap();
        let f = if polynomial {
            tabulate(&Observable::random_polynomial(seed, degree, N), &m)
        } else {
            random_table(seed, 1 << N)
        };
        let e = plain_dirichlet_form(&m, &f);
        let norm = delta_norm_sq_table(&f, N);
        prop_assert!(e <= norm * (1.0 + 1e-12) + 1e-12, "E = {e}, |df|^2 = {norm}");
    }
}
