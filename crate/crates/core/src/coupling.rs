//! Disagreement-percolation coupling of the two conditional laws that differ
//! only at a pivot site.
//!
//! Given a prefix `ξ` on ranks `0..i`, `Y` follows the measure conditioned on
//! `(ξ, +)` at rank `i` and `Z` the one conditioned on `(ξ, −)`. Sites above
//! the pivot are generated one at a time: the next site is the lowest-ranked
//! ungenerated neighbor of the current disagreement set (pivot included),
//! and each pair `(Y_x, Z_x)` is drawn from the maximal coupling of the two
//! exact single-site conditionals given everything generated so far.
//!
//! Once no ungenerated site touches the disagreement set, the set is
//! surrounded by agreeing spins and the Markov property makes the remaining
//! conditional laws of `Y` and `Z` identical, so the rest is drawn with
//! `Z = Y`.
//!
//! Free ranks above the pivot are addressed by bit `r − i − 1` of a mask.

use std::collections::BTreeSet;

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::glauber::HeatBath;
use crate::lattice::{is_connected, Enumeration};
use crate::model::{conditional_measure, conditional_plus_prob, ExactMeasure, ModelParams};

/// Largest number of sites above the pivot handled by the exact coupling.
pub const EXACT_COUPLING_CAP: usize = 20;

/// Largest number of leaves an exact coupling tree may have.
pub const TREE_LEAF_CAP: usize = 1 << 22;

/// Joint law of two `±1` variables.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct BinaryCouplingTable {
    pub pp: f64,
    pub pm: f64,
    pub mp: f64,
    pub mm: f64,
}

impl BinaryCouplingTable {
    pub fn disagreement(&self) -> f64 {
        self.pm + self.mp
    }
}

/// Coupling of `Bernoulli(p1)` and `Bernoulli(p2)` (probabilities of `+1`)
/// that maximizes the agreement probability.
pub fn optimal_binary_coupling(p1: f64, p2: f64) -> Result<BinaryCouplingTable> {
    if !((0.0..=1.0).contains(&p1) && (0.0..=1.0).contains(&p2)) {
        return Err(invalid(format!("probabilities must lie in [0, 1], got {p1}, {p2}")));
    }
    let gap = (p1 - p2).abs();
    Ok(BinaryCouplingTable {
        pp: p1.min(p2),
        mm: (1.0 - p1).min(1.0 - p2),
        pm: if p1 > p2 { gap } else { 0.0 },
        mp: if p2 > p1 { gap } else { 0.0 },
    })
}

/// Worst disagreement probability of the maximal single-site coupling over
/// neighbor sums `S` and `S ± 2`, `|S| ≤ 2d`.
pub fn per_site_disagreement_max(params: &ModelParams) -> f64 {
    let two_d = 2 * params.dim() as i32;
    let mut worst = 0.0f64;
    for s in -two_d..=two_d {
        for t in [s - 2, s + 2] {
            if t.abs() <= two_d {
                let table = optimal_binary_coupling(conditional_plus_prob(params, s), conditional_plus_prob(params, t))
                    .expect("conditional probabilities lie in [0, 1]");
                worst = worst.max(table.disagreement());
            }
        }
    }
    worst
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CouplingMode {
    Exact,
    TwoStage,
}

/// One generated site of a coupling run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct SitePair {
    pub rank: usize,
    pub y: i8,
    pub z: i8,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CouplingTranscript {
    pub mode: CouplingMode,
    pub pivot: usize,
    pub conditioning: Vec<i8>,
    /// Sites above the pivot in generation order.
    pub pairs: Vec<SitePair>,
    /// Ranks where `Y ≠ Z`, pivot included.
    pub disagreement: BTreeSet<usize>,
    /// Failure cluster of the two-stage construction, pivot included.
    pub failure: Option<BTreeSet<usize>>,
    /// Largest amount by which a two-stage correction probability exceeded
    /// one and had to be clipped; zero when `Z` has its exact law.
    pub marginal_defect: f64,
}

impl CouplingTranscript {
    /// Connectivity, pivot membership and `C ⊆ C̃`.
    pub fn check(&self, lattice: &Enumeration) -> Result<()> {
        if !self.disagreement.contains(&self.pivot) || !is_connected(&self.disagreement, lattice) {
            return Err(invalid("disagreement set is not a connected set containing the pivot"));
        }
        if let Some(fail) = &self.failure {
            if !self.disagreement.is_subset(fail) {
                return Err(invalid("disagreement set escapes the failure cluster"));
            }
        }
        Ok(())
    }

    /// `Y` on ranks `pivot+1..`, indexed by rank.
    pub fn y_spins(&self, n_sites: usize) -> Vec<i8> {
        let mut out = vec![0; n_sites];
        self.pairs.iter().for_each(|p| out[p.rank] = p.y);
        out
    }
}

/// The pair of conditional laws attached to a pivot and a prefix.
#[derive(Clone, Debug)]
pub struct CouplingProblem {
    lattice: std::sync::Arc<Enumeration>,
    pivot: usize,
    conditioning: Vec<i8>,
    y_law: Vec<f64>,
    z_law: Vec<f64>,
    n_free: usize,
    /// Free-bit neighbors of each free bit.
    nbr: Vec<usize>,
    pivot_nbr: usize,
    /// Free bits adjacent to the pivot or to the prefix.
    base_region_nbr: usize,
}

impl CouplingProblem {
    /// `xi` fixes ranks `0..pivot`; it must extend the measure's own prefix.
    pub fn new(m: &ExactMeasure, pivot: usize, xi: &[i8]) -> Result<Self> {
        let lattice = m.lattice().clone();
        lattice.check_rank(pivot)?;
        if xi.len() != pivot {
            return Err(invalid(format!("conditioning has {} spins, pivot rank is {pivot}", xi.len())));
        }
        let n_free = lattice.len() - pivot - 1;
        if n_free > EXACT_COUPLING_CAP {
            return Err(Error::Capacity { sites: n_free, cap: EXACT_COUPLING_CAP });
        }
        let mut plus = xi.to_vec();
        plus.push(1);
        let mut minus = xi.to_vec();
        minus.push(-1);
        let y_law = conditional_measure(m, &plus)?.probs().to_vec();
        let z_law = conditional_measure(m, &minus)?.probs().to_vec();

        let bit = |r: usize| r - pivot - 1;
        let nbr = (pivot + 1..lattice.len())
            .map(|r| lattice.neighbors(r).iter().filter(|&&q| q > pivot).fold(0, |acc, &q| acc | 1 << bit(q)))
            .collect();
        let pivot_nbr = lattice.neighbors(pivot).iter().filter(|&&q| q > pivot).fold(0, |acc, &q| acc | 1 << bit(q));
        let base_region_nbr = (0..=pivot)
            .flat_map(|r| lattice.neighbors(r).iter().copied())
            .filter(|&q| q > pivot)
            .fold(0, |acc, q| acc | 1 << bit(q));
        Ok(CouplingProblem {
            lattice,
            pivot,
            conditioning: xi.to_vec(),
            y_law,
            z_law,
            n_free,
            nbr,
            pivot_nbr,
            base_region_nbr,
        })
    }

    pub fn pivot(&self) -> usize {
        self.pivot
    }

    pub fn lattice(&self) -> &Enumeration {
        &self.lattice
    }

    pub fn n_free(&self) -> usize {
        self.n_free
    }

    pub fn y_law(&self) -> &[f64] {
        &self.y_law
    }

    pub fn z_law(&self) -> &[f64] {
        &self.z_law
    }

    fn rank(&self, b: usize) -> usize {
        self.pivot + 1 + b
    }

    fn full_mask(&self) -> usize {
        (1usize << self.n_free) - 1
    }

    /// Probability of `+` at bit `b` given the bits in `mask` equal `bits`.
    fn plus_prob(law: &[f64], mask: usize, bits: usize, b: usize) -> f64 {
        let mut total = 0.0;
        let mut plus = 0.0;
        for (j, &w) in law.iter().enumerate() {
            if j & mask == bits {
                total += w;
                if j >> b & 1 == 1 {
                    plus += w;
                }
            }
        }
        if total > 0.0 {
            (plus / total).clamp(0.0, 1.0)
        } else {
            0.5
        }
    }

    fn adjacent_to(&self, set: usize, with_pivot: bool) -> usize {
        let mut acc = if with_pivot { self.pivot_nbr } else { 0 };
        let mut rest = set;
        while rest != 0 {
            let b = rest.trailing_zeros() as usize;
            acc |= self.nbr[b];
            rest &= rest - 1;
        }
        acc
    }

    /// Lowest-ranked ungenerated bit adjacent to the disagreement set.
    fn next_disagreement_site(&self, mask: usize, disagree: usize) -> Option<usize> {
        let cand = self.adjacent_to(disagree, true) & !mask;
        (cand != 0).then(|| cand.trailing_zeros() as usize)
    }

    /// Lowest-ranked ungenerated bit adjacent to the generated region, or the
    /// lowest ungenerated bit if none is.
    fn next_fallback_site(&self, mask: usize) -> Option<usize> {
        let free = self.full_mask() & !mask;
        if free == 0 {
            return None;
        }
        let cand = (self.base_region_nbr | self.adjacent_to(mask, false)) & free;
        let pick = if cand != 0 { cand } else { free };
        Some(pick.trailing_zeros() as usize)
    }

    fn disagreement_ranks(&self, diff: usize) -> BTreeSet<usize> {
        let mut out = BTreeSet::from([self.pivot]);
        out.extend((0..self.n_free).filter(|b| diff >> b & 1 == 1).map(|b| self.rank(b)));
        out
    }

    /// Exhaustive coupling tree.
    pub fn tree(&self) -> Result<CouplingTree> {
        let mut leaves = Vec::new();
        self.expand(0, 0, 0, 1.0, &mut leaves)?;
        Ok(CouplingTree { leaves })
    }

    fn expand(&self, mask: usize, y: usize, z: usize, prob: f64, leaves: &mut Vec<TreeLeaf>) -> Result<()> {
        let Some(b) = self.next_disagreement_site(mask, y ^ z) else {
            if leaves.len() >= TREE_LEAF_CAP {
                return Err(Error::Capacity { sites: self.n_free, cap: TREE_LEAF_CAP });
            }
            leaves.push(TreeLeaf { prob, mask, y, z });
            return Ok(());
        };
        let a = Self::plus_prob(&self.y_law, mask, y, b);
        let c = Self::plus_prob(&self.z_law, mask, z, b);
        let t = optimal_binary_coupling(a, c)?;
        let bit = 1 << b;
        for (q, ys, zs) in [(t.pp, bit, bit), (t.mm, 0, 0), (t.pm, bit, 0), (t.mp, 0, bit)] {
            if q > 0.0 {
                self.expand(mask | bit, y | ys, z | zs, prob * q, leaves)?;
            }
        }
        Ok(())
    }

    /// Draw one transcript of the exact coupling.
    pub fn sample_exact(&self, rng: &mut impl Rng) -> CouplingTranscript {
        let (mut mask, mut y, mut z) = (0usize, 0usize, 0usize);
        let mut pairs = Vec::with_capacity(self.n_free);
        while let Some(b) = self.next_disagreement_site(mask, y ^ z) {
            let a = Self::plus_prob(&self.y_law, mask, y, b);
            let c = Self::plus_prob(&self.z_law, mask, z, b);
            let t = optimal_binary_coupling(a, c).expect("conditionals lie in [0, 1]");
            let u: f64 = rng.random();
            let (ys, zs) = if u < t.pp {
                (1, 1)
            } else if u < t.pp + t.mm {
                (0, 0)
            } else if u < t.pp + t.mm + t.pm {
                (1, 0)
            } else {
                (0, 1)
            };
            mask |= 1 << b;
            y |= ys << b;
            z |= zs << b;
            pairs.push(self.pair(b, ys, zs));
        }
        let diff = y ^ z;
        self.finish_shared(&mut mask, &mut y, &mut pairs, rng);
        CouplingTranscript {
            mode: CouplingMode::Exact,
            pivot: self.pivot,
            conditioning: self.conditioning.clone(),
            pairs,
            disagreement: self.disagreement_ranks(diff),
            failure: None,
            marginal_defect: 0.0,
        }
    }

    fn pair(&self, b: usize, ys: usize, zs: usize) -> SitePair {
        let spin = |v: usize| if v == 1 { 1 } else { -1 };
        SitePair { rank: self.rank(b), y: spin(ys), z: spin(zs) }
    }

    /// Fill the remaining bits from `Y`'s conditional law with `Z = Y`.
    fn finish_shared(&self, mask: &mut usize, y: &mut usize, pairs: &mut Vec<SitePair>, rng: &mut impl Rng) {
        while let Some(b) = self.next_fallback_site(*mask) {
            let a = Self::plus_prob(&self.y_law, *mask, *y, b);
            let ys = usize::from(rng.random::<f64>() < a);
            *mask |= 1 << b;
            *y |= ys << b;
            pairs.push(self.pair(b, ys, ys));
        }
    }

    /// Two-stage realization with failure coins of probability `p`.
    ///
    /// `Y` is drawn exactly. Coins are tossed at sites adjacent to the
    /// failure cluster; on success `Z_x = Y_x`, on failure `Z_x` is drawn from
    /// the correction that restores `Z_x`'s conditional law, i.e. with
    /// `a = P(Y_x=+|·)`, `b = P(Z_x=+|·)`:
    /// if `a ≥ b`, a failed `Y_x = +` turns into `Z_x = −` with probability
    /// `(a−b)/(a p)`; if `a < b`, a failed `Y_x = −` turns into `+` with
    /// probability `(b−a)/((1−a) p)`. Probabilities above one are clipped and
    /// the excess is reported as `marginal_defect`.
    pub fn sample_two_stage(&self, p: f64, rng: &mut impl Rng) -> CouplingTranscript {
        let p = p.clamp(0.0, 1.0);
        let (mut mask, mut y, mut z, mut fail) = (0usize, 0usize, 0usize, 0usize);
        let mut pairs = Vec::with_capacity(self.n_free);
        let mut defect = 0.0f64;
        while let Some(b) = {
            let cand = self.adjacent_to(fail, true) & !mask;
            (cand != 0).then(|| cand.trailing_zeros() as usize)
        } {
            let a = Self::plus_prob(&self.y_law, mask, y, b);
            let ys = usize::from(rng.random::<f64>() < a);
            let failed = rng.random::<f64>() < p;
            let zs = if failed {
                let c = Self::plus_prob(&self.z_law, mask, z, b);
                let (from, to, t_raw) = if a >= c {
                    (1, 0, if a > 0.0 { (a - c) / (a * p) } else { 0.0 })
                } else {
                    (0, 1, (c - a) / ((1.0 - a) * p))
                };
                defect = defect.max(t_raw - 1.0);
                if ys == from && rng.random::<f64>() < t_raw.min(1.0) {
                    to
                } else {
                    ys
                }
            } else {
                ys
            };
            mask |= 1 << b;
            y |= ys << b;
            z |= zs << b;
            if failed {
                fail |= 1 << b;
            }
            pairs.push(self.pair(b, ys, zs));
        }
        let diff = y ^ z;
        self.finish_shared(&mut mask, &mut y, &mut pairs, rng);
        CouplingTranscript {
            mode: CouplingMode::TwoStage,
            pivot: self.pivot,
            conditioning: self.conditioning.clone(),
            pairs,
            disagreement: self.disagreement_ranks(diff),
            failure: Some(self.disagreement_ranks(fail)),
            marginal_defect: defect.max(0.0),
        }
    }
}

/// Draw one exact-coupling transcript for pivot rank `i` and prefix `xi`.
pub fn grow_coupling_exact(m: &ExactMeasure, i: usize, xi: &[i8], rng: &mut impl Rng) -> Result<CouplingTranscript> {
    Ok(CouplingProblem::new(m, i, xi)?.sample_exact(rng))
}

/// Draw one two-stage transcript on a box small enough for exact conditionals.
pub fn grow_coupling_two_stage(m: &ExactMeasure, i: usize, xi: &[i8], rng: &mut impl Rng) -> Result<CouplingTranscript> {
    let p = m.params().p();
    Ok(CouplingProblem::new(m, i, xi)?.sample_two_stage(p, rng))
}

/// Two-stage transcript on a box too large for exact conditionals.
///
/// `Y` is the end state of `burn_in` heat-bath sweeps over the ranks above
/// the pivot (prefix and pivot frozen at `(ξ, +)`), so its law is only
/// approximately the conditional one. The failure cluster grows from
/// independent coins exactly as in the small-box version; `Z` is `Y` with
/// the pivot set to `−` and the failure cluster re-equilibrated by `burn_in`
/// sweeps restricted to it, its outside boundary fixed by `Y`.
pub fn grow_coupling_two_stage_glauber(
    rates: &HeatBath,
    i: usize,
    xi: &[i8],
    burn_in: usize,
    rng: &mut impl Rng,
) -> Result<CouplingTranscript> {
    let lattice = rates.lattice().clone();
    lattice.check_rank(i)?;
    if xi.len() != i {
        return Err(invalid(format!("conditioning has {} spins, pivot rank is {i}", xi.len())));
    }
    let n = lattice.len();
    let p = rates.params().p().clamp(0.0, 1.0);

    let mut fail = BTreeSet::from([i]);
    let mut seen = vec![false; n];
    seen[..=i].iter_mut().for_each(|s| *s = true);
    let mut order = Vec::new();
    loop {
        let next = fail.iter().flat_map(|&r| lattice.neighbors(r).iter().copied()).filter(|&q| !seen[q]).min();
        let Some(q) = next else { break };
        seen[q] = true;
        order.push(q);
        if rng.random::<f64>() < p {
            fail.insert(q);
        }
    }

    let upper: Vec<usize> = (i + 1..n).collect();
    let mut y: Vec<i8> = xi.to_vec();
    y.push(1);
    y.extend(upper.iter().map(|_| if rng.random::<bool>() { 1i8 } else { -1 }));
    rates.equilibrate(&mut y, &upper, burn_in, rng);

    let mut z = y.clone();
    z[i] = -1;
    let inside: Vec<usize> = fail.iter().copied().filter(|&r| r != i).collect();
    rates.equilibrate(&mut z, &inside, burn_in, rng);

    let mut seq = order;
    seq.extend((i + 1..n).filter(|r| !seen[*r]));
    let pairs: Vec<SitePair> = seq.iter().map(|&r| SitePair { rank: r, y: y[r], z: z[r] }).collect();
    let mut disagreement: BTreeSet<usize> =
        pairs.iter().filter(|pr| pr.y != pr.z).map(|pr| pr.rank).collect();
    disagreement.insert(i);
    // Keep the component of the pivot, matching the cluster that the scan grows.
    let disagreement = component_of(i, &disagreement, &lattice);
    Ok(CouplingTranscript {
        mode: CouplingMode::TwoStage,
        pivot: i,
        conditioning: xi.to_vec(),
        pairs,
        disagreement,
        failure: Some(fail),
        marginal_defect: 0.0,
    })
}

fn component_of(root: usize, set: &BTreeSet<usize>, lattice: &Enumeration) -> BTreeSet<usize> {
    let mut out = BTreeSet::from([root]);
    let mut stack = vec![root];
    while let Some(r) = stack.pop() {
        for &q in lattice.neighbors(r) {
            if set.contains(&q) && out.insert(q) {
                stack.push(q);
            }
        }
    }
    out
}

/// A terminal node: generated bits `mask` with values `y`, `z`; every
/// ungenerated bit shares `Y`'s conditional law with `Z = Y`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TreeLeaf {
    pub prob: f64,
    pub mask: usize,
    pub y: usize,
    pub z: usize,
}

#[derive(Clone, Debug)]
pub struct CouplingTree {
    pub leaves: Vec<TreeLeaf>,
}

impl CouplingTree {
    pub fn total_mass(&self) -> f64 {
        self.leaves.iter().map(|l| l.prob).sum()
    }

    /// Joint law of the full `(Y, Z)` bit vectors, expanded over completions.
    pub fn for_each_completion(&self, problem: &CouplingProblem, mut visit: impl FnMut(f64, usize, usize)) {
        let law = problem.y_law();
        for leaf in &self.leaves {
            let mass: f64 = law.iter().enumerate().filter(|(j, _)| j & leaf.mask == leaf.y).map(|(_, w)| w).sum();
            if mass <= 0.0 {
                continue;
            }
            for (j, &w) in law.iter().enumerate() {
                if j & leaf.mask == leaf.y && w > 0.0 {
                    let z = (leaf.z & leaf.mask) | (j & !leaf.mask);
                    visit(leaf.prob * w / mass, j, z);
                }
            }
        }
    }

    /// Marginal laws of `Y` and `Z` implied by the tree.
    pub fn marginals(&self, problem: &CouplingProblem) -> (Vec<f64>, Vec<f64>) {
        let n = problem.y_law().len();
        let mut y = vec![0.0; n];
        let mut z = vec![0.0; n];
        self.for_each_completion(problem, |w, yj, zj| {
            y[yj] += w;
            z[zj] += w;
        });
        (y, z)
    }

    /// `P(C ⊇ A)` for a set of ranks.
    pub fn contains_probability(&self, problem: &CouplingProblem, set: &BTreeSet<usize>) -> f64 {
        let mut need = 0usize;
        for &r in set {
            if r != problem.pivot() {
                need |= 1 << (r - problem.pivot() - 1);
            }
        }
        self.leaves.iter().filter(|l| (l.y ^ l.z) & need == need).map(|l| l.prob).sum()
    }

    /// Law of `|C|`, indexed by size.
    pub fn size_distribution(&self, problem: &CouplingProblem) -> Vec<f64> {
        let mut out = vec![0.0; problem.n_free() + 2];
        for l in &self.leaves {
            out[1 + (l.y ^ l.z).count_ones() as usize] += l.prob;
        }
        out
    }
}

fn check_set(m: &ExactMeasure, i: usize, set: &BTreeSet<usize>) -> Result<()> {
    if !set.contains(&i) {
        return Err(invalid("the set must contain the pivot"));
    }
    if !is_connected(set, m.lattice()) {
        return Err(invalid("the set must be connected"));
    }
    if let Some(&r) = set.iter().find(|&&r| r < i || r >= m.n_sites()) {
        return Err(invalid(format!("rank {r} lies below the pivot or outside the box")));
    }
    Ok(())
}

/// Every prefix on ranks `m.offset()..i`, appended to the measure's own.
fn prefixes(m: &ExactMeasure, i: usize) -> Result<Vec<Vec<i8>>> {
    let base = m.prefix().to_vec();
    let k = i.checked_sub(base.len()).ok_or_else(|| invalid("pivot lies inside the measure's prefix"))?;
    if k > 20 {
        return Err(Error::Capacity { sites: k, cap: 20 });
    }
    Ok((0..1usize << k)
        .map(|bits| {
            let mut xi = base.clone();
            xi.extend((0..k).map(|b| if bits >> b & 1 == 1 { 1i8 } else { -1 }));
            xi
        })
        .collect())
}

/// `sup_ξ P(C_i ⊇ A)` against `P_p(C̄ ⊇ A)`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DominationCheck {
    pub set: Vec<usize>,
    pub lhs: f64,
    pub rhs: f64,
    pub margin: f64,
    pub pass: bool,
    pub worst_conditioning: Vec<i8>,
}

/// Probability that the open cluster of site percolation at `p` contains a
/// connected set of `size` sites that includes its root: all `size − 1`
/// non-root sites must be open.
pub fn percolation_inclusion_probability(p: f64, size: usize) -> f64 {
    p.clamp(0.0, 1.0).powi(size.saturating_sub(1) as i32)
}

/// Domination audit over every prefix `ξ` and every set in `sets`.
pub fn domination_audit(m: &ExactMeasure, i: usize, sets: &[BTreeSet<usize>]) -> Result<Vec<DominationCheck>> {
    for a in sets {
        check_set(m, i, a)?;
    }
    let p = m.params().p();
    let per_prefix: Vec<(Vec<i8>, Vec<f64>)> = prefixes(m, i)?
        .into_par_iter()
        .map(|xi| {
            let problem = CouplingProblem::new(m, i, &xi)?;
            let tree = problem.tree()?;
            let probs = sets.iter().map(|a| tree.contains_probability(&problem, a)).collect();
            Ok((xi, probs))
        })
        .collect::<Result<_>>()?;
    Ok(sets
        .iter()
        .enumerate()
        .map(|(k, a)| {
            let (xi, lhs) = per_prefix
                .iter()
                .map(|(xi, v)| (xi, v[k]))
                .max_by(|x, y| x.1.total_cmp(&y.1))
                .expect("at least one prefix");
            let rhs = percolation_inclusion_probability(p, a.len());
            DominationCheck {
                set: a.iter().copied().collect(),
                lhs,
                rhs,
                margin: rhs - lhs,
                pass: lhs <= rhs + 1e-10,
                worst_conditioning: xi.clone(),
            }
        })
        .collect())
}

/// `max Pr_1 / Pr_2`, where `Pr_2` is the law of `Y` and `Pr_1` that of the
/// composite taking `Z` on the members of `A` ranked below `x` and `Y`
/// elsewhere, both under the exact coupling for prefix `xi`.
pub fn lemma_rn_audit(m: &ExactMeasure, i: usize, xi: &[i8], set: &BTreeSet<usize>, x: usize) -> Result<f64> {
    check_set(m, i, set)?;
    if !set.contains(&x) {
        return Err(Error::NotAMember(x));
    }
    let problem = CouplingProblem::new(m, i, xi)?;
    let tree = problem.tree()?;
    let n = problem.y_law().len();
    let swap = set
        .iter()
        .filter(|&&r| r < x && r > i)
        .fold(0usize, |acc, &r| acc | 1 << (r - i - 1));
    let mut pr1 = vec![0.0; n];
    let mut pr2 = vec![0.0; n];
    tree.for_each_completion(&problem, |w, y, z| {
        pr2[y] += w;
        pr1[(z & swap) | (y & !swap)] += w;
    });
    let mut worst = 0.0f64;
    for (a, b) in pr1.iter().zip(&pr2) {
        if *b > 0.0 {
            worst = worst.max(a / b);
        } else if *a > 1e-300 {
            return Err(invalid("composite law is not absolutely continuous with respect to the law of Y"));
        }
    }
    Ok(worst)
}
