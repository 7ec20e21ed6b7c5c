//! Nearest-neighbor Ising random field on a finite box.
//!
//! Configurations of an `N`-site box are addressed by an index in
//! `0..2^N` whose bit `k` is set when the spin at rank `k` is `+1`.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::lattice::Enumeration;

/// Default ceiling on the number of free sites of an exact measure.
pub const DEFAULT_EXACT_CAP: usize = 24;

const NORMALIZATION_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Coupling {
    #[serde(rename = "ferromagnetic")]
    Ferro,
    #[serde(rename = "antiferromagnetic")]
    Antiferro,
}

impl Coupling {
    pub fn from_sign(j: i32) -> Result<Self> {
        match j {
            1 => Ok(Coupling::Ferro),
            -1 => Ok(Coupling::Antiferro),
            _ => Err(invalid(format!("coupling J must be +1 or -1, got {j}"))),
        }
    }

    pub fn sign(self) -> f64 {
        match self {
            Coupling::Ferro => 1.0,
            Coupling::Antiferro => -1.0,
        }
    }
}

/// Dimension, inverse temperature, field and coupling sign.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ModelParams {
    dim: usize,
    beta: f64,
    h: f64,
    #[serde(rename = "J")]
    coupling: Coupling,
}

impl ModelParams {
    pub fn new(dim: usize, beta: f64, h: f64, coupling: Coupling) -> Result<Self> {
        if dim == 0 {
            return Err(invalid("dimension must be at least 1"));
        }
        if !(beta.is_finite() && beta >= 0.0) {
            return Err(invalid(format!("beta must be finite and >= 0, got {beta}")));
        }
        if !(h.is_finite() && h >= 0.0) {
            return Err(invalid(format!("field h must be finite and >= 0, got {h}")));
        }
        Ok(ModelParams { dim, beta, h, coupling })
    }

    pub fn ferro(dim: usize, beta: f64, h: f64) -> Result<Self> {
        Self::new(dim, beta, h, Coupling::Ferro)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn coupling(&self) -> Coupling {
        self.coupling
    }

    pub fn j(&self) -> f64 {
        self.coupling.sign()
    }

    /// Exponent of the single-flip Radon-Nikodym bound, `2βh + 4βd`.
    pub fn c(&self) -> f64 {
        2.0 * self.beta * self.h + 4.0 * self.beta * self.dim as f64
    }

    /// Field-free flip exponent `4βd`.
    pub fn c_prime(&self) -> f64 {
        4.0 * self.beta * self.dim as f64
    }

    /// Dominating percolation parameter `e^{-2βh}(e^{4βd} - e^{-4βd})`.
    pub fn p(&self) -> f64 {
        let a = 4.0 * self.beta * self.dim as f64;
        (-2.0 * self.beta * self.h).exp() * 2.0 * a.sinh()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundaryCondition {
    #[default]
    Free,
    Plus,
    Minus,
}

impl BoundaryCondition {
    /// Spin assigned to each missing neighbor.
    pub fn spin(self) -> f64 {
        match self {
            BoundaryCondition::Free => 0.0,
            BoundaryCondition::Plus => 1.0,
            BoundaryCondition::Minus => -1.0,
        }
    }
}

impl FromStr for BoundaryCondition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "free" => Ok(BoundaryCondition::Free),
            "plus" | "+" => Ok(BoundaryCondition::Plus),
            "minus" | "-" => Ok(BoundaryCondition::Minus),
            other => Err(invalid(format!("unknown boundary condition {other:?}"))),
        }
    }
}

impl fmt::Display for BoundaryCondition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BoundaryCondition::Free => "free",
            BoundaryCondition::Plus => "plus",
            BoundaryCondition::Minus => "minus",
        })
    }
}

/// A ±1 assignment indexed by box rank.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(transparent)]
pub struct SpinConfig {
    spins: Vec<i8>,
}

impl SpinConfig {
    pub fn new(spins: Vec<i8>) -> Result<Self> {
        if spins.iter().any(|&s| s != 1 && s != -1) {
            return Err(invalid("spins must be +1 or -1"));
        }
        Ok(SpinConfig { spins })
    }

    pub fn all(n: usize, spin: i8) -> Self {
        SpinConfig { spins: vec![if spin >= 0 { 1 } else { -1 }; n] }
    }

    pub fn from_index(index: u64, n: usize) -> Self {
        SpinConfig { spins: (0..n).map(|k| if index >> k & 1 == 1 { 1 } else { -1 }).collect() }
    }

    pub fn index(&self) -> u64 {
        spins_to_index(&self.spins)
    }

    pub fn spins(&self) -> &[i8] {
        &self.spins
    }

    pub fn len(&self) -> usize {
        self.spins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.spins.is_empty()
    }

    pub fn get(&self, rank: usize) -> i8 {
        self.spins[rank]
    }

    pub fn set(&mut self, rank: usize, spin: i8) {
        self.spins[rank] = if spin >= 0 { 1 } else { -1 };
    }

    pub fn flip(&mut self, rank: usize) {
        self.spins[rank] = -self.spins[rank];
    }

    /// `σ^x`.
    pub fn flipped(&self, rank: usize) -> SpinConfig {
        let mut out = self.clone();
        out.flip(rank);
        out
    }

    /// `σ^A`.
    pub fn flipped_set(&self, ranks: &[usize]) -> SpinConfig {
        let mut out = self.clone();
        for &r in ranks {
            out.flip(r);
        }
        out
    }

    pub fn magnetization(&self) -> f64 {
        self.spins.iter().map(|&s| s as f64).sum::<f64>() / self.spins.len().max(1) as f64
    }
}

pub fn spins_to_index(spins: &[i8]) -> u64 {
    spins
        .iter()
        .enumerate()
        .fold(0u64, |acc, (k, &s)| if s > 0 { acc | 1 << k } else { acc })
}

/// Neighbor sum at `rank` including the boundary contribution.
pub fn neighbor_sum(lattice: &Enumeration, boundary: BoundaryCondition, spin_at: impl Fn(usize) -> i8, rank: usize) -> i32 {
    let inside: i32 = lattice.neighbors(rank).iter().map(|&n| spin_at(n) as i32).sum();
    inside + boundary.spin() as i32 * lattice.missing_neighbors(rank) as i32
}

/// Probability that the spin is `+1` given a neighbor sum `s`.
pub fn conditional_plus_prob(params: &ModelParams, neighbor_sum: i32) -> f64 {
    let a = params.beta * (params.h + params.j() * neighbor_sum as f64);
    1.0 / (1.0 + (-2.0 * a).exp())
}

/// Exact Gibbs measure of a box, possibly conditioned on a prefix of ranks.
///
/// `probs` ranges over the free ranks `prefix.len()..N`; bit `k` of an index
/// is the spin at rank `prefix.len() + k`.
#[derive(Clone, Debug)]
pub struct ExactMeasure {
    params: ModelParams,
    lattice: Arc<Enumeration>,
    boundary: BoundaryCondition,
    prefix: Vec<i8>,
    probs: Vec<f64>,
}

fn log_weight(params: &ModelParams, lattice: &Enumeration, boundary: BoundaryCondition, index: u64) -> f64 {
    let spin = |r: usize| if index >> r & 1 == 1 { 1.0 } else { -1.0 };
    let mut pair = 0.0;
    let mut field = 0.0;
    for r in 0..lattice.len() {
        let s = spin(r);
        for &n in lattice.neighbors(r) {
            if n > r {
                pair += s * spin(n);
            }
        }
        field += s * (params.h + params.j() * boundary.spin() * lattice.missing_neighbors(r) as f64);
    }
    params.beta * (params.j() * pair + field)
}

fn normalize(weights: &mut [f64]) -> Result<()> {
    let total: f64 = weights.iter().sum();
    if !(total.is_finite() && total > 0.0) {
        return Err(invalid("measure has no mass to normalize"));
    }
    weights.iter_mut().for_each(|w| *w /= total);
    let drift = (weights.iter().sum::<f64>() - 1.0).abs();
    if drift > NORMALIZATION_TOL {
        return Err(invalid(format!("normalization drift {drift:e}")));
    }
    Ok(())
}

impl ExactMeasure {
    pub fn new(params: ModelParams, lattice: Arc<Enumeration>, boundary: BoundaryCondition) -> Result<Self> {
        Self::with_cap(params, lattice, boundary, DEFAULT_EXACT_CAP)
    }

    pub fn with_cap(params: ModelParams, lattice: Arc<Enumeration>, boundary: BoundaryCondition, cap: usize) -> Result<Self> {
        let n = lattice.len();
        if n > cap.min(40) {
            return Err(Error::Capacity { sites: n, cap });
        }
        if lattice.dim() != params.dim() {
            return Err(Error::Geometry(format!(
                "model dimension {} differs from box dimension {}",
                params.dim(),
                lattice.dim()
            )));
        }
        let log_w: Vec<f64> = (0..1u64 << n)
            .into_par_iter()
            .map(|idx| log_weight(&params, &lattice, boundary, idx))
            .collect();
        let top = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut probs: Vec<f64> = log_w.into_par_iter().map(|w| (w - top).exp()).collect();
        normalize(&mut probs)?;
        Ok(ExactMeasure { params, lattice, boundary, prefix: Vec::new(), probs })
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn lattice(&self) -> &Arc<Enumeration> {
        &self.lattice
    }

    pub fn boundary(&self) -> BoundaryCondition {
        self.boundary
    }

    /// Spins fixed on ranks `0..prefix().len()`.
    pub fn prefix(&self) -> &[i8] {
        &self.prefix
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn n_sites(&self) -> usize {
        self.lattice.len()
    }

    pub fn n_free(&self) -> usize {
        self.lattice.len() - self.prefix.len()
    }

    /// Rank of the first free site.
    pub fn offset(&self) -> usize {
        self.prefix.len()
    }

    /// Spin at `rank` of the configuration with free index `idx`.
    pub fn spin(&self, idx: usize, rank: usize) -> i8 {
        if rank < self.prefix.len() {
            self.prefix[rank]
        } else if idx >> (rank - self.prefix.len()) & 1 == 1 {
            1
        } else {
            -1
        }
    }

    /// Full configuration for free index `idx`.
    pub fn config(&self, idx: usize) -> SpinConfig {
        SpinConfig { spins: (0..self.n_sites()).map(|r| self.spin(idx, r)).collect() }
    }

    /// Free index of a full configuration, if it agrees with the prefix.
    pub fn free_index(&self, config: &SpinConfig) -> Option<usize> {
        if config.len() != self.n_sites() || config.spins()[..self.prefix.len()] != self.prefix[..] {
            return None;
        }
        Some((spins_to_index(&config.spins()[self.prefix.len()..])) as usize)
    }

    pub fn prob_of(&self, config: &SpinConfig) -> f64 {
        self.free_index(config).map_or(0.0, |i| self.probs[i])
    }

    /// Condition on the spins of the next `extra.len()` free ranks.
    pub fn condition(&self, extra: &[i8]) -> Result<ExactMeasure> {
        let m = extra.len();
        if m > self.n_free() {
            return Err(invalid("conditioning beyond the end of the box"));
        }
        if extra.iter().any(|&s| s != 1 && s != -1) {
            return Err(invalid("spins must be +1 or -1"));
        }
        let low = spins_to_index(extra) as usize;
        let mut probs: Vec<f64> = (0..1usize << (self.n_free() - m)).map(|j| self.probs[(j << m) | low]).collect();
        normalize(&mut probs)?;
        let mut prefix = self.prefix.clone();
        prefix.extend_from_slice(extra);
        Ok(ExactMeasure { params: self.params, lattice: self.lattice.clone(), boundary: self.boundary, prefix, probs })
    }

    /// Draw a free index.
    pub fn sample_index(&self, rng: &mut impl Rng) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (i, &p) in self.probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return i;
            }
        }
        self.probs.len() - 1
    }

    /// Cumulative table for repeated sampling.
    pub fn sampler(&self) -> IndexSampler {
        let mut acc = 0.0;
        let cdf = self
            .probs
            .iter()
            .map(|p| {
                acc += p;
                acc
            })
            .collect();
        IndexSampler { cdf }
    }

    /// Expectation of a table of values over free indices.
    pub fn expect(&self, values: &[f64]) -> f64 {
        self.probs.iter().zip(values).map(|(p, v)| p * v).sum()
    }

    pub fn variance(&self, values: &[f64]) -> f64 {
        let mean = self.expect(values);
        self.probs.iter().zip(values).map(|(p, v)| p * (v - mean) * (v - mean)).sum()
    }
}

/// Inverse-CDF sampler over the free indices of an [`ExactMeasure`].
#[derive(Clone, Debug)]
pub struct IndexSampler {
    cdf: Vec<f64>,
}

impl IndexSampler {
    pub fn sample(&self, rng: &mut impl Rng) -> usize {
        let u: f64 = rng.random::<f64>() * self.cdf[self.cdf.len() - 1];
        self.cdf.partition_point(|&c| c <= u).min(self.cdf.len() - 1)
    }
}

/// `m` conditioned so that ranks `0..fixed.len()` carry `fixed`.
pub fn conditional_measure(m: &ExactMeasure, fixed: &[i8]) -> Result<ExactMeasure> {
    let have = m.prefix().len();
    if fixed.len() < have || fixed[..have] != *m.prefix() {
        return Err(invalid("conditioning must extend the measure's existing prefix"));
    }
    m.condition(&fixed[have..])
}

fn free_bit(m: &ExactMeasure, rank: usize) -> Result<usize> {
    m.lattice().check_rank(rank)?;
    rank.checked_sub(m.offset())
        .ok_or_else(|| invalid(format!("rank {rank} is fixed by the conditioning")))
}

/// `max_σ P(σ^x) / P(σ)`.
pub fn rn_flip_sup(m: &ExactMeasure, rank: usize) -> Result<f64> {
    rn_flipset_sup(m, &[rank])
}

/// `max_σ P(σ^A) / P(σ)`.
pub fn rn_flipset_sup(m: &ExactMeasure, ranks: &[usize]) -> Result<f64> {
    let mut mask = 0usize;
    for &r in ranks {
        mask ^= 1 << free_bit(m, r)?;
    }
    let probs = m.probs();
    Ok(probs
        .iter()
        .enumerate()
        .map(|(i, &p)| probs[i ^ mask] / p)
        .fold(0.0, f64::max))
}

/// Largest β for which the self-avoiding-path series converges at any field.
pub fn threshold_koko(dim: usize) -> f64 {
    let two_d = 2.0 * dim as f64;
    (two_d / (two_d - 1.0)).ln() / (8.0 * dim as f64)
}

/// Ferromagnetic Dobrushin condition `2d tanh β < 1`.
pub fn dobrushin_ok(params: &ModelParams) -> Result<bool> {
    if params.coupling() != Coupling::Ferro {
        return Err(Error::NotApplicable("the Dobrushin comparison is stated for the ferromagnet".into()));
    }
    Ok(2.0 * params.dim() as f64 * params.beta().tanh() < 1.0)
}

/// β at which `2d tanh β = 1`.
pub fn dobrushin_beta(dim: usize) -> f64 {
    (1.0 / (2.0 * dim as f64)).atanh()
}

/// `(2d - 1) p^{1/2} e^{c'}`; the square-root-tail series converges when this is below one.
pub fn racine2_ratio(params: &ModelParams) -> f64 {
    (2.0 * params.dim() as f64 - 1.0) * params.p().sqrt() * params.c_prime().exp()
}

pub fn racine2_sufficient(params: &ModelParams) -> bool {
    racine2_ratio(params) < 1.0
}

/// Serialize free-site probabilities: `u64` site count, then `2^N` `f64`, little endian.
pub fn encode_probabilities(probs: &[f64]) -> Result<Vec<u8>> {
    if !probs.len().is_power_of_two() {
        return Err(invalid("probability vector length must be a power of two"));
    }
    let n = probs.len().trailing_zeros() as u64;
    let mut out = Vec::with_capacity(8 + 8 * probs.len());
    out.extend_from_slice(&n.to_le_bytes());
    for p in probs {
        out.extend_from_slice(&p.to_le_bytes());
    }
    Ok(out)
}

/// Decoded probability vector.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbabilityVector {
    pub n_sites: usize,
    pub probs: Vec<f64>,
}

/// Parse the format written by [`encode_probabilities`], validating the
/// site count against `cap`, the byte length, and the entries.
pub fn decode_probabilities(bytes: &[u8], cap: usize) -> Result<ProbabilityVector> {
    let header: [u8; 8] = bytes
        .get(..8)
        .and_then(|h| h.try_into().ok())
        .ok_or_else(|| Error::Decode("missing 8-byte header".into()))?;
    let n = u64::from_le_bytes(header);
    if n > cap.min(40) as u64 {
        return Err(Error::Decode(format!("site count {n} exceeds cap {cap}")));
    }
    let n = n as usize;
    let expected = 8 + 8 * (1usize << n);
    if bytes.len() != expected {
        return Err(Error::Decode(format!("expected {expected} bytes for {n} sites, got {}", bytes.len())));
    }
    let probs: Vec<f64> = bytes[8..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    if let Some(bad) = probs.iter().find(|p| !(p.is_finite() && **p >= 0.0)) {
        return Err(Error::Decode(format!("invalid probability entry {bad}")));
    }
    let total: f64 = probs.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::Decode(format!("probabilities sum to {total}")));
    }
    Ok(ProbabilityVector { n_sites: n, probs })
}
