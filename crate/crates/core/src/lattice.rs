//! Finite sublattices of Z^d in shell order.
//!
//! Sites are ordered by ℓ1 norm and then lexicographically, so every site
//! after the origin touches the set of sites preceding it. A box is the first
//! `n` sites of that order. Ranks are 0-based throughout the crate.

use std::collections::{BTreeSet, HashMap};
use std::fmt;

use serde::Serialize;

use crate::error::{invalid, Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(transparent)]
pub struct Site(Vec<i32>);

impl Site {
    pub fn new(coords: Vec<i32>) -> Self {
        Site(coords)
    }

    pub fn origin(dim: usize) -> Self {
        Site(vec![0; dim])
    }

    pub fn coords(&self) -> &[i32] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn l1_norm(&self) -> u32 {
        self.0.iter().map(|c| c.unsigned_abs()).sum()
    }

    /// Site shifted by `step` along `axis`.
    pub fn shifted(&self, axis: usize, step: i32) -> Site {
        let mut coords = self.0.clone();
        coords[axis] += step;
        Site(coords)
    }

    pub fn neighbors(&self) -> impl Iterator<Item = Site> + '_ {
        (0..self.dim()).flat_map(move |axis| [self.shifted(axis, -1), self.shifted(axis, 1)])
    }

    pub fn is_adjacent(&self, other: &Site) -> bool {
        self.dim() == other.dim()
            && self
                .0
                .iter()
                .zip(&other.0)
                .map(|(a, b)| a.abs_diff(*b))
                .sum::<u32>()
                == 1
    }
}

impl fmt::Display for Site {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, c) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{c}")?;
        }
        write!(f, ")")
    }
}

/// All sites of Z^d with ℓ1 norm `radius`, sorted lexicographically.
fn shell(dim: usize, radius: u32) -> Vec<Site> {
    fn fill(prefix: &mut Vec<i32>, dim: usize, remaining: u32, out: &mut Vec<Site>) {
        if prefix.len() + 1 == dim {
            let r = remaining as i32;
            if r == 0 {
                prefix.push(0);
                out.push(Site(prefix.clone()));
                prefix.pop();
            } else {
                for c in [-r, r] {
                    prefix.push(c);
                    out.push(Site(prefix.clone()));
                    prefix.pop();
                }
            }
            return;
        }
        let r = remaining as i32;
        for c in -r..=r {
            prefix.push(c);
            fill(prefix, dim, remaining - c.unsigned_abs(), out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    fill(&mut Vec::with_capacity(dim), dim, radius, &mut out);
    out.sort();
    out
}

/// An ordered finite box together with its nearest-neighbor structure.
#[derive(Clone, Debug)]
pub struct Enumeration {
    dim: usize,
    sites: Vec<Site>,
    index_of: HashMap<Site, usize>,
    neighbors: Vec<Vec<usize>>,
}

impl Enumeration {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.sites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }

    pub fn sites(&self) -> &[Site] {
        &self.sites
    }

    pub fn site(&self, rank: usize) -> &Site {
        &self.sites[rank]
    }

    pub fn rank_of(&self, site: &Site) -> Option<usize> {
        self.index_of.get(site).copied()
    }

    /// Ranks of the in-box nearest neighbors of `rank`, ascending.
    pub fn neighbors(&self, rank: usize) -> &[usize] {
        &self.neighbors[rank]
    }

    /// Number of lattice neighbors of `rank` lying outside the box.
    pub fn missing_neighbors(&self, rank: usize) -> usize {
        2 * self.dim - self.neighbors[rank].len()
    }

    pub fn check_rank(&self, rank: usize) -> Result<()> {
        if rank < self.len() {
            Ok(())
        } else {
            Err(Error::RankOutOfRange { rank, len: self.len() })
        }
    }
}

/// The first `n_sites` sites of Z^d in shell order.
pub fn enumerate_box(dim: usize, n_sites: usize) -> Result<Enumeration> {
    if dim == 0 {
        return Err(invalid("dimension must be at least 1"));
    }
    if n_sites == 0 {
        return Err(invalid("a box needs at least one site"));
    }
    let mut sites = Vec::with_capacity(n_sites);
    let mut radius = 0;
    while sites.len() < n_sites {
        let need = n_sites - sites.len();
        sites.extend(shell(dim, radius).into_iter().take(need));
        radius += 1;
    }
    let index_of: HashMap<Site, usize> =
        sites.iter().enumerate().map(|(i, s)| (s.clone(), i)).collect();
    let neighbors = sites
        .iter()
        .map(|s| {
            let mut ranks: Vec<usize> = s.neighbors().filter_map(|n| index_of.get(&n).copied()).collect();
            ranks.sort_unstable();
            ranks
        })
        .collect();
    Ok(Enumeration { dim, sites, index_of, neighbors })
}

/// A set of sites carrying its own enumeration order.
#[derive(Clone, Debug, PartialEq, Eq, Default, Serialize)]
pub struct OrderedSubset {
    members: Vec<usize>,
}

impl OrderedSubset {
    pub fn new(members: Vec<usize>) -> Result<Self> {
        let distinct: BTreeSet<_> = members.iter().collect();
        if distinct.len() != members.len() {
            return Err(invalid("ordered subset has repeated members"));
        }
        Ok(OrderedSubset { members })
    }

    /// The set ordered by box rank.
    pub fn by_rank(set: impl IntoIterator<Item = usize>) -> Self {
        let sorted: BTreeSet<usize> = set.into_iter().collect();
        OrderedSubset { members: sorted.into_iter().collect() }
    }

    pub fn members(&self) -> &[usize] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn contains(&self, x: usize) -> bool {
        self.members.contains(&x)
    }

    /// Members strictly preceding `x` in this subset's order.
    pub fn prefix_before(&self, x: usize) -> Result<OrderedSubset> {
        let pos = self.members.iter().position(|&m| m == x).ok_or(Error::NotAMember(x))?;
        Ok(OrderedSubset { members: self.members[..pos].to_vec() })
    }

    /// This subset followed by the members of `other` it does not contain.
    pub fn then(&self, other: &OrderedSubset) -> OrderedSubset {
        let mut members = self.members.clone();
        members.extend(other.members.iter().filter(|m| !self.members.contains(m)));
        OrderedSubset { members }
    }
}

/// Sites of the box adjacent to `set` but not in it.
pub fn exterior_boundary<'a>(set: impl IntoIterator<Item = &'a usize>, lattice: &Enumeration) -> BTreeSet<usize> {
    let inside: BTreeSet<usize> = set.into_iter().copied().collect();
    inside
        .iter()
        .flat_map(|&r| lattice.neighbors(r).iter().copied())
        .filter(|r| !inside.contains(r))
        .collect()
}

/// Whether `set` is nearest-neighbor connected inside the box.
pub fn is_connected(set: &BTreeSet<usize>, lattice: &Enumeration) -> bool {
    let Some(&start) = set.iter().next() else {
        return true;
    };
    let mut seen = BTreeSet::from([start]);
    let mut stack = vec![start];
    while let Some(r) = stack.pop() {
        for &n in lattice.neighbors(r) {
            if set.contains(&n) && seen.insert(n) {
                stack.push(n);
            }
        }
    }
    seen.len() == set.len()
}

/// Every connected set of at most `max_size` ranks containing `root`, drawn
/// from the ranks accepted by `allowed`.
pub fn connected_sets_containing(
    lattice: &Enumeration,
    root: usize,
    max_size: usize,
    allowed: impl Fn(usize) -> bool,
) -> Vec<BTreeSet<usize>> {
    let mut found: BTreeSet<Vec<usize>> = BTreeSet::new();
    let mut layer = vec![BTreeSet::from([root])];
    found.insert(vec![root]);
    for _ in 1..max_size {
        let mut next = Vec::new();
        for set in &layer {
            for b in exterior_boundary(set, lattice) {
                if !allowed(b) {
                    continue;
                }
                let mut grown = set.clone();
                grown.insert(b);
                if found.insert(grown.iter().copied().collect()) {
                    next.push(grown);
                }
            }
        }
        layer = next;
    }
    found.into_iter().map(|v| v.into_iter().collect()).collect()
}
