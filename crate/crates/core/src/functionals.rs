//! Functions of a spin configuration: discrete derivatives, variations,
//! the norm `‖δf‖₂²`, run-counting observables and a seeded family of random
//! multilinear polynomials.

use std::collections::BTreeSet;

use rand::seq::index::sample;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::lattice::{Enumeration, OrderedSubset, Site};
use crate::model::ExactMeasure;
use crate::rng::stream;

/// A real function of the spins of a box, indexed by rank.
pub trait Functional: Sync {
    fn eval(&self, spins: &[i8]) -> f64;
}

impl<F: Fn(&[i8]) -> f64 + Sync> Functional for F {
    fn eval(&self, spins: &[i8]) -> f64 {
        self(spins)
    }
}

/// A product `Π_{x∈S} σ_x` with a coefficient.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Monomial {
    pub coefficient: f64,
    pub ranks: Vec<usize>,
}

/// The observables that can be named on the command line.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Observable {
    Constant(f64),
    Spin(usize),
    Corr(usize, usize),
    RunCount(RunCount),
    Polynomial(Vec<Monomial>),
    Sum(Vec<(f64, Observable)>),
}

impl Functional for Observable {
    fn eval(&self, spins: &[i8]) -> f64 {
        match self {
            Observable::Constant(c) => *c,
            Observable::Spin(x) => spins[*x] as f64,
            Observable::Corr(x, y) => (spins[*x] * spins[*y]) as f64,
            Observable::RunCount(rc) => rc.eval(spins),
            Observable::Polynomial(terms) => terms
                .iter()
                .map(|t| t.coefficient * t.ranks.iter().map(|&r| spins[r] as f64).product::<f64>())
                .sum(),
            Observable::Sum(parts) => parts.iter().map(|(w, o)| w * o.eval(spins)).sum(),
        }
    }
}

impl Observable {
    /// Largest rank the observable reads, if any.
    pub fn max_rank(&self) -> Option<usize> {
        match self {
            Observable::Constant(_) => None,
            Observable::Spin(x) => Some(*x),
            Observable::Corr(x, y) => Some(*x.max(y)),
            Observable::RunCount(rc) => rc.ranks.iter().copied().max(),
            Observable::Polynomial(terms) => terms.iter().flat_map(|t| t.ranks.iter().copied()).max(),
            Observable::Sum(parts) => parts.iter().filter_map(|(_, o)| o.max_rank()).max(),
        }
    }

    /// Seeded random multilinear polynomial of the given degree on `n_sites`.
    ///
    /// Every monomial of degree at most `degree` is used while there are at
    /// most 256 of them; otherwise each degree contributes 32 random subsets.
    /// Coefficients are independent standard normals.
    pub fn random_polynomial(seed: u64, degree: usize, n_sites: usize) -> Observable {
        let mut rng = stream(seed, "random-polynomial", degree as u64);
        let degree = degree.min(n_sites);
        let mut subsets: Vec<Vec<usize>> = Vec::new();
        let total: f64 = (0..=degree).map(|k| binomial(n_sites, k)).sum();
        for k in 0..=degree {
            if total <= 256.0 {
                subsets.extend(k_subsets(n_sites, k));
            } else {
                let count = binomial(n_sites, k).min(32.0) as usize;
                let mut chosen = BTreeSet::new();
                while chosen.len() < count {
                    let mut s: Vec<usize> = sample(&mut rng, n_sites, k).into_vec();
                    s.sort_unstable();
                    chosen.insert(s);
                }
                subsets.extend(chosen);
            }
        }
        let terms = subsets
            .into_iter()
            .map(|ranks| Monomial { coefficient: rng.sample(StandardNormal), ranks })
            .collect();
        Observable::Polynomial(terms)
    }
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

fn k_subsets(n: usize, k: usize) -> Vec<Vec<usize>> {
    (0u64..1 << n).filter(|m| m.count_ones() as usize == k).map(|m| (0..n).filter(|b| m >> b & 1 == 1).collect()).collect()
}

/// A function given by one value per configuration of an exact measure.
pub fn random_table(seed: u64, len: usize) -> Vec<f64> {
    let mut rng = stream(seed, "random-table", len as u64);
    (0..len).map(|_| rng.sample(StandardNormal)).collect()
}

/// `f(σ^x) − f(σ)`.
pub fn grad(f: &impl Functional, spins: &[i8], x: usize) -> f64 {
    let mut flipped = spins.to_vec();
    flipped[x] = -flipped[x];
    f.eval(&flipped) - f.eval(spins)
}

/// `f(σ^A) − f(σ)`.
pub fn grad_set(f: &impl Functional, spins: &[i8], set: &OrderedSubset) -> f64 {
    let mut flipped = spins.to_vec();
    set.members().iter().for_each(|&x| flipped[x] = -flipped[x]);
    f.eval(&flipped) - f.eval(spins)
}

/// `Σ_{x∈A} |∇_x f(σ^{A_{<x}})|`, which bounds `|∇_A f(σ)|`.
pub fn telescoping_sum(f: &impl Functional, spins: &[i8], set: &OrderedSubset) -> f64 {
    let mut current = spins.to_vec();
    let mut total = 0.0;
    for &x in set.members() {
        total += grad(f, &current, x).abs();
        current[x] = -current[x];
    }
    total
}

/// Values of `f` over the free indices of `m`.
pub fn tabulate(f: &impl Functional, m: &ExactMeasure) -> Vec<f64> {
    (0..m.probs().len()).into_par_iter().map(|idx| f.eval(m.config(idx).spins())).collect()
}

/// A supremum that is exact only when computed by enumeration.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Variation {
    pub value: f64,
    /// `false` when taken over a sample, in which case `value` is a lower bound.
    pub exact: bool,
}

/// `sup_σ (f(σ^x) − f(σ))` over every configuration of `m`.
pub fn variation(f: &impl Functional, x: usize, m: &ExactMeasure) -> Result<Variation> {
    if x < m.offset() || x >= m.n_sites() {
        return Err(invalid(format!("rank {x} is not a free site of the measure")));
    }
    let value = (0..m.probs().len())
        .into_par_iter()
        .map(|idx| grad(f, m.config(idx).spins(), x))
        .reduce(|| f64::NEG_INFINITY, f64::max);
    Ok(Variation { value, exact: true })
}

/// Variation over a sample of configurations: a lower bound.
pub fn variation_sampled(f: &impl Functional, x: usize, samples: &[Vec<i8>]) -> Variation {
    let value = samples.iter().map(|s| grad(f, s, x)).fold(f64::NEG_INFINITY, f64::max);
    Variation { value, exact: false }
}

/// `Σ_x (δ_x f)²` over the free sites of `m`.
pub fn delta_norm_sq(f: &impl Functional, m: &ExactMeasure) -> Result<f64> {
    (m.offset()..m.n_sites()).map(|x| variation(f, x, m).map(|v| v.value * v.value)).sum()
}

/// `Σ_x (δ_x f)²` for a tabulated function.
pub fn delta_norm_sq_table(values: &[f64], n_free: usize) -> f64 {
    (0..n_free)
        .map(|b| {
            let v = (0..values.len()).map(|i| values[i ^ (1 << b)] - values[i]).fold(f64::NEG_INFINITY, f64::max);
            v * v
        })
        .sum()
}

/// `k`, the axis and the window length `n` of a run counter.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct RunCountSpec {
    pub k: usize,
    pub axis: usize,
    pub n: usize,
}

/// `f_k(σ) = #{i : σ_i = … = σ_{i+k} = +1}` over a line window.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunCount {
    pub k: usize,
    /// Window ranks in line order.
    pub ranks: Vec<usize>,
}

impl RunCount {
    pub fn eval(&self, spins: &[i8]) -> f64 {
        let mut count = 0usize;
        let mut run = 0usize;
        for &r in &self.ranks {
            if spins[r] > 0 {
                run += 1;
                if run > self.k {
                    count += 1;
                }
            } else {
                run = 0;
            }
        }
        count as f64
    }
}

/// The `n` sites with the smallest coordinates on the longest contiguous
/// stretch of the line through the origin along `axis` inside the box.
pub fn line_window(lattice: &Enumeration, axis: usize, n: usize) -> Result<Vec<usize>> {
    if axis >= lattice.dim() {
        return Err(Error::Geometry(format!("axis {axis} in a {}-dimensional box", lattice.dim())));
    }
    let at = |t: i32| {
        let mut c = vec![0; lattice.dim()];
        c[axis] = t;
        lattice.rank_of(&Site::new(c))
    };
    let mut lo = 0;
    while at(lo - 1).is_some() {
        lo -= 1;
    }
    let ranks: Vec<usize> = (lo..).map_while(at).take(n).collect();
    if ranks.len() < n {
        return Err(Error::Geometry(format!("the box holds only {} sites along axis {axis}, need {n}", ranks.len())));
    }
    Ok(ranks)
}

pub fn run_count(spec: RunCountSpec, lattice: &Enumeration) -> Result<RunCount> {
    if !(1 <= spec.k && spec.k < spec.n) {
        return Err(invalid(format!("run counter needs 1 <= k < n, got k={} n={}", spec.k, spec.n)));
    }
    Ok(RunCount { k: spec.k, ranks: line_window(lattice, spec.axis, spec.n)? })
}

/// `max P(cylinder)^{1/n}` over cylinders of `n ≤ n_max` consecutive window
/// sites.
pub fn soliboze_theta(m: &ExactMeasure, window: &[usize], n_max: usize) -> Result<f64> {
    if window.iter().any(|&r| r < m.offset() || r >= m.n_sites()) {
        return Err(invalid("window sites must be free sites of the measure"));
    }
    let mut theta = 0.0f64;
    for n in 1..=n_max.min(window.len()) {
        for start in 0..=window.len() - n {
            let sites = &window[start..start + n];
            let mut mass = vec![0.0; 1 << n];
            for (idx, &p) in m.probs().iter().enumerate() {
                let pattern =
                    sites.iter().enumerate().fold(0, |acc, (k, &r)| acc | ((idx >> (r - m.offset()) & 1) << k));
                mass[pattern] += p;
            }
            for w in mass {
                theta = theta.max(w.powf(1.0 / n as f64));
            }
        }
    }
    Ok(theta)
}

/// Draw a configuration uniformly among `±1` vectors of length `n`.
pub fn uniform_spins(n: usize, rng: &mut impl Rng) -> Vec<i8> {
    (0..n).map(|_| if rng.random::<bool>() { 1 } else { -1 }).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::enumerate_box;
    use crate::model::{BoundaryCondition, ModelParams};
    use std::sync::Arc;

    fn measure(dim: usize, n: usize, beta: f64, h: f64) -> ExactMeasure {
        let params = ModelParams::ferro(dim, beta, h).unwrap();
        ExactMeasure::new(params, Arc::new(enumerate_box(dim, n).unwrap()), BoundaryCondition::Free).unwrap()
    }

    #[test]
    fn gradient_examples() {
        let s = [1i8, -1, 1];
        assert_eq!(grad(&Observable::Constant(3.0), &s, 1), 0.0);
        assert_eq!(grad(&Observable::Spin(0), &s, 0), -2.0);
        assert_eq!(grad(&Observable::Spin(1), &s, 1), 2.0);
        assert_eq!(grad(&Observable::Corr(0, 1), &s, 0), 2.0);
        let empty = OrderedSubset::default();
        assert_eq!(grad_set(&Observable::Spin(0), &s, &empty), 0.0);
        let one = OrderedSubset::new(vec![2]).unwrap();
        assert_eq!(grad_set(&Observable::Corr(0, 2), &s, &one), grad(&Observable::Corr(0, 2), &s, 2));
    }

    #[test]
    fn variation_examples() {
        let m = measure(2, 5, 0.2, 0.0);
        assert_eq!(variation(&Observable::Spin(3), 3, &m).unwrap().value, 2.0);
        assert_eq!(variation(&Observable::Constant(1.0), 3, &m).unwrap().value, 0.0);
        assert_eq!(delta_norm_sq(&Observable::Spin(0), &m).unwrap(), 4.0);
        assert_eq!(delta_norm_sq(&Observable::Constant(2.0), &m).unwrap(), 0.0);
        let table = tabulate(&Observable::Corr(0, 4), &m);
        assert_eq!(delta_norm_sq_table(&table, 5), 8.0);
    }

    #[test]
    fn run_count_examples() {
        let lattice = enumerate_box(1, 4).unwrap();
        let rc = run_count(RunCountSpec { k: 1, axis: 0, n: 4 }, &lattice).unwrap();
        let coords: Vec<i32> = rc.ranks.iter().map(|&r| lattice.site(r).coords()[0]).collect();
        assert_eq!(coords, vec![-2, -1, 0, 1]);
        let mut spins = vec![0i8; 4];
        for (pos, s) in [1, 1, -1, 1].into_iter().enumerate() {
            spins[rc.ranks[pos]] = s;
        }
        assert_eq!(rc.eval(&spins), 1.0);
        assert_eq!(rc.eval(&[-1; 4]), 0.0);
        for k in 1..4 {
            let rc = run_count(RunCountSpec { k, axis: 0, n: 4 }, &lattice).unwrap();
            assert_eq!(rc.eval(&[1; 4]), (4 - k) as f64);
        }
        assert!(run_count(RunCountSpec { k: 4, axis: 0, n: 4 }, &lattice).is_err());
        assert!(run_count(RunCountSpec { k: 1, axis: 0, n: 5 }, &lattice).is_err());
        assert!(run_count(RunCountSpec { k: 1, axis: 1, n: 3 }, &lattice).is_err());
    }

    #[test]
    fn run_count_window_in_two_dimensions() {
        let lattice = enumerate_box(2, 13).unwrap();
        let w = line_window(&lattice, 1, 5).unwrap();
        let coords: Vec<Vec<i32>> = w.iter().map(|&r| lattice.site(r).coords().to_vec()).collect();
        assert_eq!(coords, vec![vec![0, -2], vec![0, -1], vec![0, 0], vec![0, 1], vec![0, 2]]);
    }

    #[test]
    fn theta_examples() {
        let m = measure(1, 6, 0.0, 0.0);
        let w = line_window(m.lattice(), 0, 6).unwrap();
        assert!((soliboze_theta(&m, &w, 6).unwrap() - 0.5).abs() < 1e-12);
        let m = measure(1, 1, 1.0, 1.0);
        let theta = soliboze_theta(&m, &[0], 1).unwrap();
        assert!((theta - 1.0 / (1.0 + (-2.0f64).exp())).abs() < 1e-12);
        assert!((theta - 0.8807971).abs() < 1e-7);
    }

    #[test]
    fn random_polynomials_are_seeded() {
        let a = Observable::random_polynomial(4, 3, 9);
        let b = Observable::random_polynomial(4, 3, 9);
        let c = Observable::random_polynomial(5, 3, 9);
        assert_eq!(a, b);
        assert_ne!(a, c);
        let Observable::Polynomial(terms) = &a else { unreachable!() };
        assert_eq!(terms.len(), 1 + 9 + 36 + 84);
        let Observable::Polynomial(terms) = Observable::random_polynomial(4, 4, 20) else { unreachable!() };
        assert_eq!(terms.len(), 1 + 20 + 32 * 3);
    }
}
