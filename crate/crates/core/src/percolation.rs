//! Independent site percolation on Z^d: clusters of the origin and the
//! moment constants built from them.
//!
//! Estimators draw every cluster from its own counter-based uniform field,
//! addressed by `(seed, sample index, site)`. Runs that differ only in `p`
//! or in the truncation cap therefore see the same uniforms at every site,
//! which makes monotonicity in either argument hold sample by sample.

use std::collections::{BTreeSet, VecDeque};

use rand::Rng;
use rayon::prelude::*;
use rustc_hash::FxHashSet;
use serde::Serialize;

use crate::error::{invalid, Result};
use crate::lattice::{Enumeration, Site};
use crate::rng::{hashed_uniform, mix64};

/// Site percolation thresholds on the hypercubic lattice, used for labeling.
pub fn critical_probability(dim: usize) -> f64 {
    match dim {
        1 => 1.0,
        2 => 0.592746,
        3 => 0.3116077,
        4 => 0.196889,
        5 => 0.14081,
        6 => 0.109017,
        // 1/(2d-1) is a lower bound for p_c in every dimension.
        d => 1.0 / (2.0 * d as f64 - 1.0),
    }
}

pub fn is_subcritical(p: f64, dim: usize) -> bool {
    p < critical_probability(dim)
}

/// Source of the uniform deciding whether a probed site opens.
pub trait SiteUniforms {
    fn uniform(&mut self, key: i64) -> f64;
}

/// One fresh draw from `rng` per probed site.
pub struct SequentialUniforms<'a, R>(pub &'a mut R);

impl<R: Rng> SiteUniforms for SequentialUniforms<'_, R> {
    fn uniform(&mut self, _key: i64) -> f64 {
        self.0.random()
    }
}

/// Uniforms fixed per site by a hash of `(seed, site key)`.
#[derive(Clone, Copy, Debug)]
pub struct HashedUniforms {
    pub seed: u64,
}

impl SiteUniforms for HashedUniforms {
    fn uniform(&mut self, key: i64) -> f64 {
        hashed_uniform(self.seed, key as u64)
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ClusterSample {
    pub sites: Vec<Site>,
    /// Set when the cluster has more than `cap` sites; only `cap` are kept.
    pub truncated: bool,
}

impl ClusterSample {
    pub fn size(&self) -> usize {
        self.sites.len()
    }
}

/// Breadth-first grower reusing its buffers between clusters.
///
/// Sites are packed into `i64` keys with `63 / d` bits per coordinate. The
/// packing does not depend on the cap, so a hashed uniform field assigns the
/// same uniform to a site whatever the cap.
pub struct ClusterGrower {
    dim: usize,
    cap: usize,
    bits: u32,
    strides: Vec<i64>,
    origin: i64,
    probed: FxHashSet<i64>,
    queue: VecDeque<i64>,
    members: Vec<i64>,
}

fn check_p(p: f64) -> Result<()> {
    if !(0.0..1.0).contains(&p) {
        return Err(invalid(format!("percolation parameter must lie in [0, 1), got {p}")));
    }
    Ok(())
}

impl ClusterGrower {
    pub fn new(dim: usize, cap: usize) -> Result<Self> {
        if dim == 0 || cap == 0 {
            return Err(invalid("cluster growth needs dim >= 1 and cap >= 1"));
        }
        let bits = (63 / dim).min(62) as u32;
        if bits < 2 || (cap as u64) + 1 >= 1u64 << (bits - 1) {
            return Err(invalid(format!("cap {cap} too large to pack sites of dimension {dim}")));
        }
        let strides: Vec<i64> = (0..dim).map(|k| 1i64 << (bits as usize * k)).collect();
        let origin = strides.iter().map(|s| s << (bits - 1)).sum();
        Ok(ClusterGrower {
            dim,
            cap,
            bits,
            strides,
            origin,
            probed: FxHashSet::default(),
            queue: VecDeque::new(),
            members: Vec::new(),
        })
    }

    /// Grow the open cluster of the origin; returns `(min(|C|, cap), |C| > cap)`.
    pub fn grow(&mut self, p: f64, uniforms: &mut impl SiteUniforms) -> (usize, bool) {
        self.probed.clear();
        self.queue.clear();
        self.members.clear();
        self.probed.insert(self.origin);
        self.queue.push_back(self.origin);
        self.members.push(self.origin);
        while let Some(key) = self.queue.pop_front() {
            for &stride in &self.strides {
                for nb in [key - stride, key + stride] {
                    if !self.probed.insert(nb) {
                        continue;
                    }
                    if uniforms.uniform(nb) < p {
                        if self.members.len() == self.cap {
                            return (self.cap, true);
                        }
                        self.members.push(nb);
                        self.queue.push_back(nb);
                    }
                }
            }
        }
        (self.members.len(), false)
    }

    fn decode(&self, key: i64) -> Site {
        let mask = (1i64 << self.bits) - 1;
        let offset = 1i64 << (self.bits - 1);
        Site::new((0..self.dim).map(|k| ((key >> (self.bits as usize * k)) & mask) as i32 - offset as i32).collect())
    }

    /// Members of the most recent cluster.
    pub fn sites(&self) -> Vec<Site> {
        self.members.iter().map(|&k| self.decode(k)).collect()
    }
}

/// One cluster of the origin, which is open by construction.
pub fn sample_cluster(p: f64, dim: usize, cap: usize, rng: &mut impl Rng) -> Result<ClusterSample> {
    check_p(p)?;
    let mut grower = ClusterGrower::new(dim, cap)?;
    let (_, truncated) = grower.grow(p, &mut SequentialUniforms(rng));
    Ok(ClusterSample { sites: grower.sites(), truncated })
}

/// Cluster of `root` inside a finite box, growing in breadth-first rank order.
pub fn sample_cluster_in_box(p: f64, lattice: &Enumeration, root: usize, rng: &mut impl Rng) -> BTreeSet<usize> {
    let mut cluster = BTreeSet::from([root]);
    let mut probed = BTreeSet::from([root]);
    let mut queue = VecDeque::from([root]);
    while let Some(r) = queue.pop_front() {
        for &n in lattice.neighbors(r) {
            if probed.insert(n) && rng.random::<f64>() < p {
                cluster.insert(n);
                queue.push_back(n);
            }
        }
    }
    cluster
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ClusterSize {
    pub size: usize,
    pub truncated: bool,
}

/// Capped sizes of `samples` independent clusters; sample `i` uses the
/// uniform field seeded by `(seed, i)`.
pub fn sample_sizes(p: f64, dim: usize, cap: usize, samples: usize, seed: u64) -> Result<Vec<ClusterSize>> {
    check_p(p)?;
    ClusterGrower::new(dim, cap)?;
    Ok((0..samples as u64)
        .into_par_iter()
        .map_init(
            || ClusterGrower::new(dim, cap).expect("validated above"),
            |grower, i| {
                let mut field = HashedUniforms { seed: mix64(seed ^ mix64(i)) };
                let (size, truncated) = grower.grow(p, &mut field);
                ClusterSize { size, truncated }
            },
        )
        .collect())
}

/// A Monte Carlo constant with its truncation remainder.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MomentEstimate {
    pub value: f64,
    pub std_error: f64,
    pub n_samples: usize,
    pub truncation_cap: usize,
    /// Analytic bound on what the truncation dropped; infinite when the
    /// bounding series diverges.
    pub tail_bound: f64,
}

impl MomentEstimate {
    fn exact(value: f64, cap: usize) -> Self {
        MomentEstimate { value, std_error: 0.0, n_samples: 0, truncation_cap: cap, tail_bound: 0.0 }
    }

    /// `value + 3 std_error + tail_bound`.
    pub fn upper_envelope(&self) -> f64 {
        self.value + 3.0 * self.std_error + self.tail_bound
    }

    pub fn is_finite(&self) -> bool {
        self.upper_envelope().is_finite()
    }
}

fn mean_and_se(values: impl Iterator<Item = f64>) -> (f64, f64, usize) {
    let (mut n, mut mean, mut m2) = (0usize, 0.0, 0.0);
    for v in values {
        n += 1;
        let delta = v - mean;
        mean += delta / n as f64;
        m2 += delta * (v - mean);
    }
    if n < 2 {
        return (mean, 0.0, n);
    }
    let var = m2 / (n - 1) as f64;
    (mean, (var / n as f64).sqrt(), n)
}

/// Monte Carlo `P_p(|C| >= n)` with its binomial standard error.
pub fn tail_estimate(p: f64, dim: usize, n: usize, samples: usize, seed: u64) -> Result<MomentEstimate> {
    check_p(p)?;
    if n == 0 {
        return Err(invalid("cluster size threshold must be at least 1"));
    }
    if n == 1 {
        return Ok(MomentEstimate::exact(1.0, 1));
    }
    let sizes = sample_sizes(p, dim, n, samples, seed)?;
    let hits = sizes.iter().filter(|s| s.size >= n).count();
    let f = hits as f64 / samples.max(1) as f64;
    Ok(MomentEstimate {
        value: f,
        std_error: (f * (1.0 - f) / samples.max(1) as f64).sqrt(),
        n_samples: samples,
        truncation_cap: n,
        tail_bound: 0.0,
    })
}

/// `Σ_{n >= from} n x^n` for `0 <= x < 1`, else infinity.
fn weighted_geometric_tail(x: f64, from: usize) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return f64::INFINITY;
    }
    let m = from as f64;
    x.powf(m) * (m - (m - 1.0) * x) / ((1.0 - x) * (1.0 - x))
}

/// `Σ_n n p^n (2d-1)^n e^{cn}` in closed form.
pub fn saw_series(p: f64, dim: usize, c: f64) -> f64 {
    weighted_geometric_tail(p * (2.0 * dim as f64 - 1.0) * c.exp(), 1)
}

/// `E_p(|C| e^{c|C|})`: truncated Monte Carlo mean plus the path-series remainder beyond `cap`.
///
/// The remainder is `e^c/x` times the tail of [`saw_series`], the extra factor
/// accounting for the origin, which is open without a coin.
pub fn moment_k(p: f64, dim: usize, c: f64, cap: usize, samples: usize, seed: u64) -> Result<MomentEstimate> {
    check_p(p)?;
    if p == 0.0 {
        return Ok(MomentEstimate::exact(c.exp(), cap));
    }
    let sizes = sample_sizes(p, dim, cap, samples, seed)?;
    let (value, std_error, n_samples) = mean_and_se(
        sizes
            .iter()
            .map(|s| if s.truncated { 0.0 } else { s.size as f64 * (c * s.size as f64).exp() }),
    );
    // Σ_{n>cap} n e^{cn} ((2d-1)p)^{n-1}, from P(|C| >= n) <= ((2d-1)p)^{n-1}.
    let branch = 2.0 * dim as f64 - 1.0;
    let x = p * branch * c.exp();
    let tail_bound = weighted_geometric_tail(x, cap + 1) / (branch * p);
    Ok(MomentEstimate { value, std_error, n_samples, truncation_cap: cap, tail_bound })
}

/// Empirical tails `P(|C| >= n)` for `n = 1..=cap` from one shared batch.
fn empirical_tails(sizes: &[ClusterSize], cap: usize) -> Vec<f64> {
    let mut counts = vec![0usize; cap + 2];
    for s in sizes {
        counts[s.size.min(cap)] += 1;
    }
    let total = sizes.len().max(1) as f64;
    let mut tails = vec![0.0; cap + 1];
    let mut at_least = 0usize;
    for n in (1..=cap).rev() {
        at_least += counts[n];
        tails[n] = at_least as f64 / total;
    }
    tails
}

/// `Σ_n n (2d-1)^n e^{c'n} P_p(|C| >= n)^{1/2}`.
///
/// Terms up to `cap` use Monte Carlo tails; the remainder uses
/// `P_p(|C| >= n) <= ((2d-1) p)^{n-1}`. The standard error is the sum of the
/// per-term deviations `sqrt(P + se) - sqrt(P)`, an upper bound.
pub fn kprime_estimate(p: f64, dim: usize, c_prime: f64, cap: usize, samples: usize, seed: u64) -> Result<MomentEstimate> {
    check_p(p)?;
    let branch = 2.0 * dim as f64 - 1.0;
    if p == 0.0 {
        return Ok(MomentEstimate::exact(branch * c_prime.exp(), cap));
    }
    let sizes = sample_sizes(p, dim, cap, samples, seed)?;
    let tails = empirical_tails(&sizes, cap);
    let log_step = branch.ln() + c_prime;
    let mut value = 0.0;
    let mut std_error = 0.0;
    for (n, &t) in tails.iter().enumerate().skip(1) {
        let weight = n as f64 * (log_step * n as f64).exp();
        let se = (t * (1.0 - t) / samples as f64).sqrt();
        value += weight * t.sqrt();
        std_error += weight * ((t + se).sqrt() - t.sqrt());
    }
    let ratio = branch * c_prime.exp() * (branch * p).sqrt();
    let tail_bound = weighted_geometric_tail(ratio, cap + 1) / (branch * p).sqrt();
    Ok(MomentEstimate { value, std_error, n_samples: samples, truncation_cap: cap, tail_bound })
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct KnPoint {
    pub n: usize,
    pub value: f64,
    pub std_error: f64,
}

/// `K_N = Σ_{n<=N} n e^{cn} P_p(|C| >= n)` for `N = 1..=n_max` from shared samples.
///
/// Each cluster contributes `g_N(|C|) = Σ_{n <= min(|C|, N)} n e^{cn}`, so
/// standard errors come straight from the per-sample values.
pub fn k_n_curve(p: f64, dim: usize, c: f64, n_max: usize, samples: usize, seed: u64) -> Result<Vec<KnPoint>> {
    check_p(p)?;
    if n_max == 0 {
        return Err(invalid("N_max must be at least 1"));
    }
    let sizes = if p == 0.0 {
        vec![ClusterSize { size: 1, truncated: false }]
    } else {
        sample_sizes(p, dim, n_max, samples, seed)?
    };
    let mut prefix = vec![0.0; n_max + 1];
    for n in 1..=n_max {
        prefix[n] = prefix[n - 1] + n as f64 * (c * n as f64).exp();
    }
    Ok((1..=n_max)
        .map(|big_n| {
            let (value, std_error, _) = mean_and_se(sizes.iter().map(|s| prefix[s.size.min(big_n)]));
            KnPoint { n: big_n, value, std_error }
        })
        .collect())
}

/// `E_p(|C|^2 1{|C| > N})` for each `N` in `thresholds`, from one batch grown to `cap`.
///
/// `tail_bound` is infinite when some cluster hit the cap, in which case the
/// value is only a lower bound.
pub fn tail_second_moment_curve(
    p: f64,
    dim: usize,
    thresholds: &[usize],
    samples: usize,
    cap: usize,
    seed: u64,
) -> Result<Vec<MomentEstimate>> {
    check_p(p)?;
    let sizes = if p == 0.0 {
        vec![ClusterSize { size: 1, truncated: false }]
    } else {
        sample_sizes(p, dim, cap, samples, seed)?
    };
    let any_truncated = sizes.iter().any(|s| s.truncated);
    Ok(thresholds
        .iter()
        .map(|&big_n| {
            let (value, std_error, n) = mean_and_se(
                sizes
                    .iter()
                    .map(|s| if s.size > big_n { (s.size * s.size) as f64 } else { 0.0 }),
            );
            MomentEstimate {
                value,
                std_error,
                n_samples: if p == 0.0 { 0 } else { n },
                truncation_cap: cap,
                tail_bound: if any_truncated { f64::INFINITY } else { 0.0 },
            }
        })
        .collect())
}

pub fn tail_second_moment(p: f64, dim: usize, n: usize, samples: usize, cap: usize, seed: u64) -> Result<MomentEstimate> {
    Ok(tail_second_moment_curve(p, dim, &[n], samples, cap, seed)?[0])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::is_connected;
    use crate::lattice::enumerate_box;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn closed_cluster_at_p_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let c = sample_cluster(0.0, 2, 10, &mut rng).unwrap();
            assert_eq!(c.size(), 1);
            assert!(!c.truncated);
            assert_eq!(c.sites[0], Site::origin(2));
        }
        assert!(sample_cluster(1.0, 2, 10, &mut rng).is_err());
        assert!(sample_cluster(-0.1, 2, 10, &mut rng).is_err());
    }

    #[test]
    fn cap_one_truncates_when_a_neighbor_opens() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut seen_truncated = false;
        for _ in 0..200 {
            let c = sample_cluster(0.3, 2, 1, &mut rng).unwrap();
            assert_eq!(c.size(), 1);
            seen_truncated |= c.truncated;
        }
        assert!(seen_truncated);
    }

    #[test]
    fn clusters_are_connected_and_rooted() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for dim in 1..=3 {
            for _ in 0..200 {
                let c = sample_cluster(0.3, dim, 500, &mut rng).unwrap();
                assert!(c.sites.contains(&Site::origin(dim)));
                let set: BTreeSet<&Site> = c.sites.iter().collect();
                assert_eq!(set.len(), c.size());
                // connectivity via adjacency search
                let mut seen = BTreeSet::from([0usize]);
                let mut stack = vec![0usize];
                while let Some(i) = stack.pop() {
                    for (j, s) in c.sites.iter().enumerate() {
                        if c.sites[i].is_adjacent(s) && seen.insert(j) {
                            stack.push(j);
                        }
                    }
                }
                assert_eq!(seen.len(), c.size());
            }
        }
    }

    #[test]
    fn first_shell_probabilities() {
        let p = 0.1;
        let samples = 200_000;
        let sizes = sample_sizes(p, 2, 2, samples, 11).unwrap();
        let alone = sizes.iter().filter(|s| s.size == 1).count() as f64 / samples as f64;
        let exact = (1.0 - p).powi(4);
        let se = (exact * (1.0 - exact) / samples as f64).sqrt();
        assert!((alone - exact).abs() < 3.0 * se, "{alone} vs {exact}");
        let t = tail_estimate(p, 2, 2, samples, 12).unwrap();
        assert!((t.value - 0.3439).abs() < 3.0 * t.std_error);
    }

    #[test]
    fn tail_estimate_edge_cases() {
        let one = tail_estimate(0.4, 2, 1, 10, 0).unwrap();
        assert_eq!((one.value, one.std_error), (1.0, 0.0));
        let none = tail_estimate(0.0, 2, 2, 1000, 0).unwrap();
        assert_eq!(none.value, 0.0);
    }

    #[test]
    fn tails_nonincreasing_under_common_numbers() {
        let mut last = 1.0;
        for n in 1..12 {
            let t = tail_estimate(0.4, 2, n, 20_000, 5).unwrap();
            assert!(t.value <= last);
            last = t.value;
        }
    }

    #[test]
    fn monotone_in_p_under_common_numbers() {
        for i in 0..10_000u64 {
            let mut g1 = ClusterGrower::new(2, 400).unwrap();
            let mut g2 = ClusterGrower::new(2, 400).unwrap();
            let seed = mix64(i);
            g1.grow(0.3, &mut HashedUniforms { seed });
            g2.grow(0.45, &mut HashedUniforms { seed });
            let big: BTreeSet<Site> = g2.sites().into_iter().collect();
            assert!(g1.sites().iter().all(|s| big.contains(s)));
        }
    }

    #[test]
    fn series_examples() {
        assert_eq!(saw_series(0.0, 2, 1.0), 0.0);
        // x = p (2d-1) e^c = 1/2
        assert!((saw_series(1.0 / 6.0, 2, 0.0) - 2.0).abs() < 1e-12);
        assert!(saw_series(0.5, 2, 0.0).is_infinite());
        assert!((weighted_geometric_tail(0.5, 1) - 2.0).abs() < 1e-12);
        let direct: f64 = (4..400).map(|n| n as f64 * 0.3f64.powi(n)).sum();
        assert!((weighted_geometric_tail(0.3, 4) - direct).abs() < 1e-12);
    }

    #[test]
    fn moment_k_examples() {
        let k = moment_k(0.0, 2, 0.3, 10, 100, 0).unwrap();
        assert_eq!(k.value, 0.3f64.exp());
        assert_eq!(k.upper_envelope(), 0.3f64.exp());
        assert_eq!(moment_k(0.0, 2, 0.0, 10, 100, 0).unwrap().value, 1.0);

        let beta: f64 = 0.01;
        let p = 2.0 * (8.0 * beta).sinh();
        let c: f64 = 0.08;
        assert!((p * 3.0 * c.exp() - 0.5204).abs() < 1e-3);
        let k = moment_k(p, 2, c, 60, 50_000, 9).unwrap();
        assert!(k.tail_bound.is_finite() && k.tail_bound < 1e-10);
        assert!(k.value <= saw_series(p, 2, c) + 1.0 + 3.0 * k.std_error);
    }

    #[test]
    fn kprime_examples() {
        let k = kprime_estimate(0.0, 2, 0.4, 10, 100, 0).unwrap();
        assert_eq!(k.value, 3.0 * 0.4f64.exp());
        assert_eq!(kprime_estimate(0.0, 2, 0.0, 10, 100, 0).unwrap().value, 3.0);
        // (2d-1) e^{c'} ((2d-1) p)^{1/2} >= 1 flags divergence
        let diverging = kprime_estimate(0.2, 2, 0.0, 20, 1000, 0).unwrap();
        assert!(diverging.tail_bound.is_infinite());
        let converging = kprime_estimate(0.01, 2, 0.0, 20, 1000, 0).unwrap();
        assert!(converging.tail_bound.is_finite());
    }

    #[test]
    fn k_n_curve_examples() {
        let c = 0.2;
        let flat = k_n_curve(0.0, 2, c, 6, 100, 0).unwrap();
        assert!(flat.iter().all(|pt| (pt.value - c.exp()).abs() < 1e-15));
        let curve = k_n_curve(0.3, 2, c, 15, 20_000, 4).unwrap();
        assert!((curve[0].value - c.exp()).abs() < 1e-12);
        assert!(curve.windows(2).all(|w| w[1].value >= w[0].value));
    }

    #[test]
    fn second_moment_examples() {
        assert_eq!(tail_second_moment(0.0, 2, 1, 10, 100, 0).unwrap().value, 0.0);
        assert_eq!(tail_second_moment(0.0, 2, 0, 10, 100, 0).unwrap().value, 1.0);
        let curve = tail_second_moment_curve(0.25, 2, &[2, 4, 8, 16], 100_000, 100_000, 8).unwrap();
        for w in curve.windows(2) {
            assert!(w[1].value < w[0].value, "{:?}", curve);
        }
        assert!(curve.iter().all(|m| m.tail_bound == 0.0));
    }

    #[test]
    fn box_clusters_stay_in_the_box() {
        let lattice = enumerate_box(2, 25).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..500 {
            let c = sample_cluster_in_box(0.5, &lattice, 3, &mut rng);
            assert!(c.contains(&3));
            assert!(c.iter().all(|&r| r < 25));
            assert!(is_connected(&c, &lattice));
        }
    }

    #[test]
    fn labels() {
        assert!(is_subcritical(0.25, 2));
        assert!(!is_subcritical(0.6, 2));
        assert_eq!(critical_probability(9), 1.0 / 17.0);
    }
}
