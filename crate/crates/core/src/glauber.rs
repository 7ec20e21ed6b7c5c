//! Heat-bath Glauber dynamics: rates, generators on small boxes, spectra,
//! Dirichlet forms, trajectories and relaxation curves.
//!
//! Generators act on functions: `(Lf)(σ) = Σ_x c(x,σ) (f(σ^x) − f(σ))`, so
//! the dense matrix has `L[σ, σ^x] = c(x,σ)` and zero row sums. Only the free
//! ranks of an [`ExactMeasure`] move; its prefix stays frozen.

use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use rand_distr::{Distribution, Exp1};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::lattice::Enumeration;
use crate::model::{neighbor_sum, BoundaryCondition, ExactMeasure, ModelParams};
use crate::rng::{stream, StreamRng};

/// Largest box for which a generator is built.
pub const GENERATOR_CAP: usize = 14;

/// Largest state space diagonalized densely; bigger spaces use Lanczos.
pub const DENSE_EIGEN_CAP: usize = 1024;

/// `1 / (1 + e^{2β σ_x (h + J S)})`.
pub fn heat_bath_rate(params: &ModelParams, spin: i8, neighbor_sum: i32) -> f64 {
    let a = params.beta() * spin as f64 * (params.h() + params.j() * neighbor_sum as f64);
    1.0 / (1.0 + (2.0 * a).exp())
}

/// Extremes `(δ, M)` of the heat-bath rate over `σ_x = ±1`, `|S| ≤ 2d`.
pub fn rate_bounds(params: &ModelParams) -> (f64, f64) {
    let two_d = 2 * params.dim() as i32;
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for spin in [-1i8, 1] {
        for s in -two_d..=two_d {
            let c = heat_bath_rate(params, spin, s);
            lo = lo.min(c);
            hi = hi.max(c);
        }
    }
    (lo, hi)
}

/// Heat-bath rates on a box with a fixed boundary condition.
#[derive(Clone, Debug)]
pub struct HeatBath {
    params: ModelParams,
    lattice: Arc<Enumeration>,
    boundary: BoundaryCondition,
    delta: f64,
    max_rate: f64,
    perturbation: Option<(usize, f64)>,
}

impl HeatBath {
    pub fn new(params: ModelParams, lattice: Arc<Enumeration>, boundary: BoundaryCondition) -> Self {
        let (delta, max_rate) = rate_bounds(&params);
        HeatBath { params, lattice, boundary, delta, max_rate, perturbation: None }
    }

    pub fn for_measure(m: &ExactMeasure) -> Self {
        Self::new(*m.params(), m.lattice().clone(), m.boundary())
    }

    /// Adds `eps` to the rate at `rank` whenever that spin is `+1`. This
    /// breaks reversibility and exists as a negative control for the audits.
    pub fn perturbed(mut self, rank: usize, eps: f64) -> Self {
        self.perturbation = Some((rank, eps));
        self.max_rate += eps.max(0.0);
        self
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn lattice(&self) -> &Arc<Enumeration> {
        &self.lattice
    }

    /// Lower rate bound `δ`.
    pub fn delta(&self) -> f64 {
        self.delta
    }

    /// Upper rate bound `M`.
    pub fn max_rate(&self) -> f64 {
        self.max_rate
    }

    /// Rate of flipping `rank` in the configuration `spins`.
    pub fn rate(&self, spins: &[i8], rank: usize) -> f64 {
        let s = neighbor_sum(&self.lattice, self.boundary, |r| spins[r], rank);
        let c = heat_bath_rate(&self.params, spins[rank], s);
        match self.perturbation {
            Some((r, eps)) if r == rank && spins[rank] > 0 => c + eps,
            _ => c,
        }
    }

    /// Resample each of `ranks` in turn from its conditional law.
    pub fn sweep(&self, spins: &mut [i8], ranks: &[usize], rng: &mut impl Rng) {
        for &r in ranks {
            let s = neighbor_sum(&self.lattice, self.boundary, |q| spins[q], r);
            let plus = crate::model::conditional_plus_prob(&self.params, s);
            spins[r] = if rng.random::<f64>() < plus { 1 } else { -1 };
        }
    }

    /// Run `sweeps` full heat-bath sweeps over `ranks`.
    pub fn equilibrate(&self, spins: &mut [i8], ranks: &[usize], sweeps: usize, rng: &mut impl Rng) {
        for _ in 0..sweeps {
            self.sweep(spins, ranks, rng);
        }
    }
}

/// `max_{σ,x} |c(x,σ)P(σ) − c(x,σ^x)P(σ^x)|` over the free ranks of `m`.
pub fn detailed_balance_audit(m: &ExactMeasure, rates: &HeatBath) -> f64 {
    let k = m.n_free();
    let off = m.offset();
    (0..m.probs().len())
        .into_par_iter()
        .map(|idx| {
            let spins = m.config(idx);
            let mut worst = 0.0f64;
            for b in 0..k {
                let other = idx ^ (1 << b);
                let flipped = m.config(other);
                let lhs = rates.rate(spins.spins(), off + b) * m.probs()[idx];
                let rhs = rates.rate(flipped.spins(), off + b) * m.probs()[other];
                worst = worst.max((lhs - rhs).abs());
            }
            worst
        })
        .reduce(|| 0.0, f64::max)
}

/// Generator of a single-flip chain on the free ranks of an exact measure.
#[derive(Clone, Debug)]
pub struct Generator {
    n_free: usize,
    rates: Vec<f64>,
    probs: Vec<f64>,
}

impl Generator {
    /// Heat-bath generator.
    pub fn new(m: &ExactMeasure, rates: &HeatBath) -> Result<Self> {
        Self::check_cap(m)?;
        let k = m.n_free();
        let off = m.offset();
        let table: Vec<f64> = (0..m.probs().len())
            .into_par_iter()
            .flat_map_iter(|idx| {
                let spins = m.config(idx);
                (0..k).map(move |b| rates.rate(spins.spins(), off + b))
            })
            .collect();
        Ok(Generator { n_free: k, rates: table, probs: m.probs().to_vec() })
    }

    /// Chain whose Dirichlet form is the plain form `Σ_x ∫ (∇_x f)² dP`.
    ///
    /// The rates `1 + P(σ^x)/P(σ)` are reversible and give `⟨f, −Lf⟩ = E(f,f)`,
    /// so the inverse gap of this chain is the sharp constant in
    /// `Var(f) ≤ C E(f,f)`.
    pub fn plain_form(m: &ExactMeasure) -> Result<Self> {
        Self::check_cap(m)?;
        let k = m.n_free();
        let p = m.probs();
        let table = (0..p.len())
            .flat_map(|idx| (0..k).map(move |b| 1.0 + p[idx ^ (1 << b)] / p[idx]))
            .collect();
        Ok(Generator { n_free: k, rates: table, probs: p.to_vec() })
    }

    fn check_cap(m: &ExactMeasure) -> Result<()> {
        if m.n_free() > GENERATOR_CAP {
            return Err(Error::Capacity { sites: m.n_free(), cap: GENERATOR_CAP });
        }
        if m.probs().iter().any(|&p| p <= 0.0) {
            return Err(invalid("generator needs a measure with full support"));
        }
        Ok(())
    }

    /// Number of states.
    pub fn dim(&self) -> usize {
        self.probs.len()
    }

    pub fn n_free(&self) -> usize {
        self.n_free
    }

    /// Rate of flipping free bit `b` from state `idx`.
    pub fn rate(&self, idx: usize, b: usize) -> f64 {
        self.rates[idx * self.n_free + b]
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// `max_σ Σ_x c(x,σ)`.
    pub fn max_exit_rate(&self) -> f64 {
        self.rates.chunks(self.n_free.max(1)).map(|row| row.iter().sum::<f64>()).fold(0.0, f64::max)
    }

    /// `Lf`.
    pub fn apply(&self, f: &[f64]) -> Vec<f64> {
        let k = self.n_free;
        (0..self.dim())
            .into_par_iter()
            .map(|idx| (0..k).map(|b| self.rate(idx, b) * (f[idx ^ (1 << b)] - f[idx])).sum())
            .collect()
    }

    /// Dense matrix of `L`.
    pub fn dense(&self) -> DMatrix<f64> {
        let n = self.dim();
        let mut l = DMatrix::zeros(n, n);
        for idx in 0..n {
            let mut out = 0.0;
            for b in 0..self.n_free {
                let c = self.rate(idx, b);
                l[(idx, idx ^ (1 << b))] = c;
                out += c;
            }
            l[(idx, idx)] = -out;
        }
        l
    }

    /// `max_σ |Σ_σ' L[σ,σ']|`.
    pub fn row_sum_residual(&self) -> f64 {
        let ones = vec![1.0; self.dim()];
        self.apply(&ones).iter().fold(0.0, |a, v| a.max(v.abs()))
    }

    /// `max_σ' |(P L)(σ')|`, zero when `P` is stationary.
    pub fn stationarity_residual(&self) -> f64 {
        (0..self.dim())
            .map(|idx| {
                let inflow: f64 = (0..self.n_free)
                    .map(|b| {
                        let from = idx ^ (1 << b);
                        self.probs[from] * self.rate(from, b)
                    })
                    .sum();
                let outflow: f64 = (0..self.n_free).map(|b| self.probs[idx] * self.rate(idx, b)).sum();
                (inflow - outflow).abs()
            })
            .fold(0.0, f64::max)
    }

    /// Off-diagonal entry of `D^{1/2} L D^{-1/2}` for the pair `(idx, idx^bit)`.
    fn sym_offdiag(&self, idx: usize, b: usize) -> f64 {
        self.rate(idx, b) * (self.probs[idx] / self.probs[idx ^ (1 << b)]).sqrt()
    }

    /// `max |S − Sᵀ|` for `S = D^{1/2} L D^{-1/2}`, `D = diag(P)`.
    pub fn symmetry_residual(&self) -> f64 {
        let mut worst = 0.0f64;
        for idx in 0..self.dim() {
            for b in 0..self.n_free {
                let other = idx ^ (1 << b);
                if other > idx {
                    worst = worst.max((self.sym_offdiag(idx, b) - self.sym_offdiag(other, b)).abs());
                }
            }
        }
        worst
    }

    /// Dense `−D^{1/2} L D^{-1/2}`, symmetrized by averaging mirror entries.
    pub fn symmetrized(&self) -> DMatrix<f64> {
        let n = self.dim();
        let mut h = DMatrix::zeros(n, n);
        for idx in 0..n {
            let mut out = 0.0;
            for b in 0..self.n_free {
                let other = idx ^ (1 << b);
                out += self.rate(idx, b);
                h[(idx, other)] = -0.5 * (self.sym_offdiag(idx, b) + self.sym_offdiag(other, b));
            }
            h[(idx, idx)] = out;
        }
        h
    }

    fn apply_symmetrized(&self, v: &[f64], sqrt_p: &[f64]) -> Vec<f64> {
        let k = self.n_free;
        (0..self.dim())
            .into_par_iter()
            .map(|idx| {
                let mut acc = 0.0;
                for b in 0..k {
                    let other = idx ^ (1 << b);
                    let c = self.rate(idx, b);
                    acc += c * (v[idx] - v[other] * sqrt_p[idx] / sqrt_p[other]);
                }
                acc
            })
            .collect()
    }

    /// All eigenvalues of `−L`, ascending (dense solve).
    pub fn spectrum(&self) -> Result<Vec<f64>> {
        if self.dim() > DENSE_EIGEN_CAP {
            return Err(Error::Capacity { sites: self.n_free, cap: DENSE_EIGEN_CAP.trailing_zeros() as usize });
        }
        let mut ev: Vec<f64> = SymmetricEigen::new(self.symmetrized()).eigenvalues.iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        Ok(ev)
    }

    /// Smallest nonzero eigenvalue of `−L` in `L²(P)`.
    pub fn spectral_gap(&self) -> Result<f64> {
        if self.dim() == 1 {
            return Err(invalid("a single state has no spectral gap"));
        }
        if self.dim() <= DENSE_EIGEN_CAP {
            self.spectral_gap_dense()
        } else {
            self.spectral_gap_lanczos()
        }
    }

    /// Dense diagonalization; also checks that zero is a simple eigenvalue.
    pub fn spectral_gap_dense(&self) -> Result<f64> {
        let ev = self.spectrum()?;
        let scale = self.max_exit_rate().max(1.0);
        if ev[0].abs() > 1e-9 * scale || ev[1] <= 1e-9 * scale {
            return Err(invalid(format!("zero eigenvalue is not simple: {:e}, {:e}", ev[0], ev[1])));
        }
        Ok(ev[1])
    }

    /// Lanczos with full reorthogonalization on the complement of `√P`.
    pub fn spectral_gap_lanczos(&self) -> Result<f64> {
        let n = self.dim();
        let sqrt_p: Vec<f64> = self.probs.iter().map(|p| p.sqrt()).collect();
        let project = |v: &mut Vec<f64>| {
            let dot: f64 = v.iter().zip(&sqrt_p).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(&sqrt_p).for_each(|(a, b)| *a -= dot * b);
        };
        let normalize = |v: &mut Vec<f64>| -> f64 {
            let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
            v.iter_mut().for_each(|a| *a /= norm);
            norm
        };
        let mut rng = stream(0x006c_616e_637a_6f73, "lanczos", n as u64);
        let mut q: Vec<f64> = (0..n).map(|_| rng.random::<f64>() - 0.5).collect();
        project(&mut q);
        normalize(&mut q);

        let max_iter = (n - 1).min(400);
        let scale = self.max_exit_rate().max(1.0);
        let mut basis: Vec<Vec<f64>> = Vec::new();
        let mut alpha = Vec::new();
        let mut beta: Vec<f64> = Vec::new();
        let mut last = f64::INFINITY;
        for it in 0..max_iter {
            let mut w = self.apply_symmetrized(&q, &sqrt_p);
            let a: f64 = w.iter().zip(&q).map(|(x, y)| x * y).sum();
            alpha.push(a);
            basis.push(q.clone());
            for _ in 0..2 {
                project(&mut w);
                for v in &basis {
                    let dot: f64 = w.iter().zip(v).map(|(x, y)| x * y).sum();
                    w.iter_mut().zip(v).for_each(|(x, y)| *x -= dot * y);
                }
            }
            let b = w.iter().map(|x| x * x).sum::<f64>().sqrt();

            let m = alpha.len();
            let t = DMatrix::from_fn(m, m, |i, j| {
                if i == j {
                    alpha[i]
                } else if i + 1 == j {
                    beta[i]
                } else if j + 1 == i {
                    beta[j]
                } else {
                    0.0
                }
            });
            let eig = SymmetricEigen::new(t);
            let (pos, &ritz) = eig
                .eigenvalues
                .iter()
                .enumerate()
                .min_by(|x, y| x.1.total_cmp(y.1))
                .expect("nonempty tridiagonal");
            let residual = b * eig.eigenvectors[(m - 1, pos)].abs();
            if residual < 1e-11 * scale || b < 1e-12 * scale || it + 1 == max_iter {
                if residual > 1e-6 * scale {
                    return Err(invalid(format!("Lanczos did not converge (residual {residual:e})")));
                }
                return Ok(ritz);
            }
            if (ritz - last).abs() < 1e-14 * scale && residual < 1e-9 * scale {
                return Ok(ritz);
            }
            last = ritz;
            beta.push(b);
            q = w.into_iter().map(|x| x / b).collect();
        }
        unreachable!("loop returns on its final iteration")
    }

    /// `e^{tL} f` by uniformization.
    pub fn semigroup(&self, f: &[f64], t: f64) -> Result<Vec<f64>> {
        if !(t >= 0.0 && t.is_finite()) {
            return Err(invalid(format!("time must be finite and nonnegative, got {t}")));
        }
        let lambda = self.max_exit_rate();
        if t == 0.0 || lambda == 0.0 {
            return Ok(f.to_vec());
        }
        let steps = (lambda * t / 30.0).ceil().max(1.0) as usize;
        let mu = lambda * t / steps as f64;
        let mut g = f.to_vec();
        for _ in 0..steps {
            g = self.uniformized_step(&g, lambda, mu);
        }
        Ok(g)
    }

    fn uniformized_step(&self, f: &[f64], lambda: f64, mu: f64) -> Vec<f64> {
        let mut weight = (-mu).exp();
        let mut acc = weight;
        let mut term = f.to_vec();
        let mut out: Vec<f64> = term.iter().map(|v| weight * v).collect();
        let max_terms = (mu + 20.0 * mu.sqrt() + 60.0) as usize;
        for n in 1..=max_terms {
            let lt = self.apply(&term);
            term.iter_mut().zip(&lt).for_each(|(v, l)| *v += l / lambda);
            weight *= mu / n as f64;
            acc += weight;
            out.iter_mut().zip(&term).for_each(|(o, v)| *o += weight * v);
            if 1.0 - acc < 1e-17 {
                break;
            }
        }
        out
    }

    /// `(E(f,f), E_c(f,f))` for this chain's rates.
    pub fn dirichlet_forms(&self, f: &[f64]) -> (f64, f64) {
        dirichlet_forms_with(&self.probs, self.n_free, |idx, b| self.rate(idx, b), f)
    }
}

fn dirichlet_forms_with(probs: &[f64], k: usize, rate: impl Fn(usize, usize) -> f64, f: &[f64]) -> (f64, f64) {
    let mut plain = 0.0;
    let mut weighted = 0.0;
    for (idx, &p) in probs.iter().enumerate() {
        for b in 0..k {
            let g = f[idx ^ (1 << b)] - f[idx];
            plain += p * g * g;
            weighted += p * rate(idx, b) * g * g;
        }
    }
    (plain, weighted)
}

/// `(E(f,f), E_c(f,f))` with `f` tabulated over the free indices of `m`.
pub fn dirichlet_forms(m: &ExactMeasure, rates: &HeatBath, f: &[f64]) -> Result<(f64, f64)> {
    if f.len() != m.probs().len() {
        return Err(invalid("function table does not match the state space"));
    }
    let off = m.offset();
    Ok(dirichlet_forms_with(m.probs(), m.n_free(), |idx, b| rates.rate(m.config(idx).spins(), off + b), f))
}

/// Continuous-time trajectory on `ranks` up to time `t`.
///
/// Events arrive at total rate `|ranks|·M`; each picks a uniform site and
/// flips it with probability `c(x,σ)/M`.
pub fn simulate(spins: &mut [i8], ranks: &[usize], rates: &HeatBath, t: f64, rng: &mut impl Rng) {
    let total = ranks.len() as f64 * rates.max_rate();
    if ranks.is_empty() || total == 0.0 {
        return;
    }
    let mut clock = 0.0;
    loop {
        let wait: f64 = Exp1.sample(rng);
        clock += wait / total;
        if clock > t {
            return;
        }
        let x = ranks[rng.random_range(0..ranks.len())];
        if rng.random::<f64>() * rates.max_rate() < rates.rate(spins, x) {
            spins[x] = -spins[x];
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RelaxationMethod {
    ExactMatrix,
    MonteCarlo,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RelaxationPoint {
    pub t: f64,
    pub variance: f64,
    pub std_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RelaxationCurve {
    pub method: RelaxationMethod,
    pub points: Vec<RelaxationPoint>,
}

fn check_grid(times: &[f64]) -> Result<()> {
    if times.iter().any(|t| !(t.is_finite() && *t >= 0.0)) || times.windows(2).any(|w| w[1] < w[0]) {
        return Err(invalid("time grid must be finite, nonnegative and sorted"));
    }
    Ok(())
}

/// `Var(e^{tL} f)` on a time grid, exactly.
pub fn relaxation_curve_exact(generator: &Generator, f: &[f64], times: &[f64]) -> Result<RelaxationCurve> {
    check_grid(times)?;
    let mut points = Vec::with_capacity(times.len());
    let mut g = f.to_vec();
    let mut now = 0.0;
    for &t in times {
        g = generator.semigroup(&g, t - now)?;
        now = t;
        points.push(RelaxationPoint { t, variance: weighted_variance(generator.probs(), &g), std_error: 0.0 });
    }
    Ok(RelaxationCurve { method: RelaxationMethod::ExactMatrix, points })
}

fn weighted_variance(p: &[f64], f: &[f64]) -> f64 {
    let mean: f64 = p.iter().zip(f).map(|(a, b)| a * b).sum();
    p.iter().zip(f).map(|(a, b)| a * (b - mean) * (b - mean)).sum::<f64>().max(0.0)
}

/// Monte Carlo estimate of `Var(S_t f)` by nested replication.
///
/// Each of `replicas` outer draws starts from `initial`, runs `inner`
/// independent trajectories and records `f` along the grid. With inner means
/// `μ_r` and inner variances `s_r²`, the estimate is the sample variance of
/// the `μ_r` minus the mean of `s_r²/inner`, which removes the inner noise
/// that would otherwise bias the estimate towards `Var(f(σ_t))`.
#[allow(clippy::too_many_arguments)]
pub fn relaxation_curve_mc<I, F>(
    rates: &HeatBath,
    ranks: &[usize],
    initial: I,
    f: F,
    times: &[f64],
    replicas: usize,
    inner: usize,
    seed: u64,
) -> Result<RelaxationCurve>
where
    I: Fn(&mut StreamRng) -> Vec<i8> + Sync,
    F: Fn(&[i8]) -> f64 + Sync,
{
    check_grid(times)?;
    if replicas < 2 || inner < 2 {
        return Err(invalid("nested estimation needs at least two outer and two inner replicas"));
    }
    let per_replica: Vec<Vec<(f64, f64)>> = (0..replicas)
        .into_par_iter()
        .map(|r| {
            let mut rng = stream(seed, "relax", r as u64);
            let start = initial(&mut rng);
            let mut sums = vec![(0.0, 0.0); times.len()];
            for _ in 0..inner {
                let mut spins = start.clone();
                let mut now = 0.0;
                for (k, &t) in times.iter().enumerate() {
                    simulate(&mut spins, ranks, rates, t - now, &mut rng);
                    now = t;
                    let v = f(&spins);
                    sums[k].0 += v;
                    sums[k].1 += v * v;
                }
            }
            let m = inner as f64;
            sums.into_iter()
                .map(|(s, s2)| {
                    let mean = s / m;
                    (mean, ((s2 - m * mean * mean) / (m - 1.0)).max(0.0))
                })
                .collect()
        })
        .collect();

    let rr = replicas as f64;
    let points = times
        .iter()
        .enumerate()
        .map(|(k, &t)| {
            let grand = per_replica.iter().map(|v| v[k].0).sum::<f64>() / rr;
            let terms: Vec<f64> = per_replica
                .iter()
                .map(|v| rr / (rr - 1.0) * (v[k].0 - grand).powi(2) - v[k].1 / inner as f64)
                .collect();
            let est = terms.iter().sum::<f64>() / rr;
            let sd = (terms.iter().map(|a| (a - est).powi(2)).sum::<f64>() / (rr - 1.0)).sqrt();
            RelaxationPoint { t, variance: est, std_error: sd / rr.sqrt() }
        })
        .collect();
    Ok(RelaxationCurve { method: RelaxationMethod::MonteCarlo, points })
}

/// Least-squares decay rate of `log Var` against `t`, over positive variances.
pub fn fit_exponential_rate(curve: &RelaxationCurve) -> Option<f64> {
    let pts: Vec<(f64, f64)> =
        curve.points.iter().filter(|p| p.variance > 0.0).map(|p| (p.t, p.variance.ln())).collect();
    linear_fit(&pts).map(|(slope, _, _)| -slope)
}

/// `(slope, intercept, R²)` of an ordinary least-squares line.
pub fn linear_fit(points: &[(f64, f64)]) -> Option<(f64, f64, f64)> {
    let n = points.len() as f64;
    if points.len() < 2 {
        return None;
    }
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = points.iter().map(|p| (p.1 - my).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Some((slope, my - slope * mx, r2))
}

/// Outcome of `‖e^{tL}f‖∞ ≤ ‖f‖∞`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ContractionCheck {
    pub t: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub pass: bool,
}

pub fn sup_contraction_audit(generator: &Generator, f: &[f64], t: f64) -> Result<ContractionCheck> {
    let g = generator.semigroup(f, t)?;
    let lhs = g.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let rhs = f.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    Ok(ContractionCheck { t, lhs, rhs, pass: lhs <= rhs + 1e-10 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::enumerate_box;
    use crate::model::Coupling;

    fn measure(dim: usize, n: usize, beta: f64, h: f64) -> ExactMeasure {
        let params = ModelParams::new(dim, beta, h, Coupling::Ferro).unwrap();
        ExactMeasure::new(params, Arc::new(enumerate_box(dim, n).unwrap()), BoundaryCondition::Free).unwrap()
    }

    #[test]
    fn rate_examples() {
        let p0 = ModelParams::ferro(2, 0.0, 0.3).unwrap();
        assert_eq!(heat_bath_rate(&p0, 1, 3), 0.5);
        let p = ModelParams::ferro(2, 0.5, 0.0).unwrap();
        assert_eq!(heat_bath_rate(&p, 1, 0), 0.5);
        assert!((heat_bath_rate(&p, 1, 4) - 1.0 / (1.0 + 4f64.exp())).abs() < 1e-15);
        assert!((heat_bath_rate(&p, 1, 4) - 0.0179862).abs() < 1e-7);
        assert!((heat_bath_rate(&p, 1, 4) - (1.0 - crate::model::conditional_plus_prob(&p, 4))).abs() < 1e-15);
    }

    #[test]
    fn bounds_match_closed_form() {
        for (d, beta, h) in [(1, 0.3, 0.0), (2, 0.2, 0.1), (3, 1.0, 2.0)] {
            let params = ModelParams::ferro(d, beta, h).unwrap();
            let (lo, hi) = rate_bounds(&params);
            let closed = 1.0 / (1.0 + (2.0 * beta * (h + 2.0 * d as f64)).exp());
            assert!((lo - closed).abs() < 1e-15);
            assert!((hi - (1.0 - closed)).abs() < 1e-15);
        }
    }

    #[test]
    fn two_state_generator() {
        let m = measure(1, 1, 0.0, 0.0);
        let g = Generator::new(&m, &HeatBath::for_measure(&m)).unwrap();
        let l = g.dense();
        assert_eq!(l, DMatrix::from_row_slice(2, 2, &[-0.5, 0.5, 0.5, -0.5]));
        assert!((g.spectral_gap().unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn balance_and_symmetry_on_a_small_box() {
        let m = measure(2, 9, 0.2, 0.1);
        let rates = HeatBath::for_measure(&m);
        assert!(detailed_balance_audit(&m, &rates) <= 1e-12);
        let g = Generator::new(&m, &rates).unwrap();
        assert!(g.row_sum_residual() <= 1e-12);
        assert!(g.stationarity_residual() <= 1e-12);
        assert!(g.symmetry_residual() <= 1e-10);
    }

    #[test]
    fn perturbed_rates_are_caught() {
        let m = measure(2, 9, 0.2, 0.1);
        let eps = 1e-3;
        let rates = HeatBath::for_measure(&m).perturbed(4, eps);
        let violation = detailed_balance_audit(&m, &rates);
        let pmax = m.probs().iter().copied().fold(0.0, f64::max);
        assert!(violation > 1e-6);
        assert!(violation <= eps * pmax + 1e-12);
    }

    #[test]
    fn lanczos_agrees_with_dense() {
        for (beta, h) in [(0.0, 0.0), (0.15, 0.2), (0.4, 0.0)] {
            let m = measure(2, 8, beta, h);
            let g = Generator::new(&m, &HeatBath::for_measure(&m)).unwrap();
            let dense = g.spectral_gap_dense().unwrap();
            let lanczos = g.spectral_gap_lanczos().unwrap();
            assert!((dense - lanczos).abs() < 1e-8, "{dense} vs {lanczos}");
        }
    }

    #[test]
    fn plain_form_chain_reproduces_the_plain_dirichlet_form() {
        let m = measure(2, 5, 0.3, 0.2);
        let g = Generator::plain_form(&m).unwrap();
        assert!(g.stationarity_residual() < 1e-12);
        let f: Vec<f64> = (0..32).map(|i| ((i * 7 + 3) % 11) as f64 - 5.0).collect();
        let lf = g.apply(&f);
        let quad: f64 = (0..32).map(|i| -m.probs()[i] * f[i] * lf[i]).sum();
        let (plain, _) = dirichlet_forms(&m, &HeatBath::for_measure(&m), &f).unwrap();
        assert!((quad - plain).abs() < 1e-10);
    }

    #[test]
    fn dirichlet_two_state_example() {
        let m = measure(1, 1, 0.0, 0.0);
        let f: Vec<f64> = (0..2).map(|i| m.spin(i, 0) as f64).collect();
        let (e, ec) = dirichlet_forms(&m, &HeatBath::for_measure(&m), &f).unwrap();
        assert_eq!((e, ec), (4.0, 2.0));
    }

    #[test]
    fn semigroup_matches_two_state_formula() {
        let m = measure(1, 1, 0.7, 0.4);
        let rates = HeatBath::for_measure(&m);
        let g = Generator::new(&m, &rates).unwrap();
        let a = g.rate(0, 0);
        let b = g.rate(1, 0);
        let f = [1.0, 0.0];
        for t in [0.0, 0.3, 2.0, 40.0] {
            let s = g.semigroup(&f, t).unwrap();
            let stay = b / (a + b) + a / (a + b) * (-(a + b) * t).exp();
            assert!((s[0] - stay).abs() < 1e-13, "t={t}");
        }
    }

    #[test]
    fn simulate_at_zero_time_is_identity() {
        let m = measure(2, 5, 0.3, 0.0);
        let rates = HeatBath::for_measure(&m);
        let mut rng = stream(1, "t", 0);
        let mut spins = vec![1, -1, 1, 1, -1];
        simulate(&mut spins, &[0, 1, 2, 3, 4], &rates, 0.0, &mut rng);
        assert_eq!(spins, vec![1, -1, 1, 1, -1]);
    }

    #[test]
    fn simulate_matches_two_state_flip_probability() {
        let m = measure(1, 1, 0.6, 0.3);
        let rates = HeatBath::for_measure(&m);
        let c_plus = rates.rate(&[1], 0);
        let c_minus = rates.rate(&[-1], 0);
        let t = 0.8;
        let exact = (1.0 - (-t * (c_plus + c_minus)).exp()) * c_plus / (c_plus + c_minus);
        let n = 40_000;
        let mut rng = stream(2, "two-state", 0);
        let flips = (0..n)
            .filter(|_| {
                let mut s = vec![1i8];
                simulate(&mut s, &[0], &rates, t, &mut rng);
                s[0] == -1
            })
            .count() as f64;
        let phat = flips / n as f64;
        let se = (exact * (1.0 - exact) / n as f64).sqrt();
        assert!((phat - exact).abs() < 4.0 * se, "{phat} vs {exact}");
    }

    #[test]
    fn exact_curve_is_nonincreasing() {
        let m = measure(2, 6, 0.2, 0.0);
        let g = Generator::new(&m, &HeatBath::for_measure(&m)).unwrap();
        let f: Vec<f64> = (0..64).map(|i| (i as f64 * 0.37).sin()).collect();
        let curve = relaxation_curve_exact(&g, &f, &[0.0, 0.1, 0.5, 1.0, 3.0]).unwrap();
        assert!((curve.points[0].variance - m.variance(&f)).abs() < 1e-14);
        assert!(curve.points.windows(2).all(|w| w[1].variance <= w[0].variance + 1e-15));
    }

    #[test]
    fn linear_fit_recovers_a_line() {
        let pts: Vec<(f64, f64)> = (0..5).map(|i| (i as f64, 2.0 - 0.5 * i as f64)).collect();
        let (s, c, r2) = linear_fit(&pts).unwrap();
        assert!((s + 0.5).abs() < 1e-12 && (c - 2.0).abs() < 1e-12 && (r2 - 1.0).abs() < 1e-12);
    }
}
