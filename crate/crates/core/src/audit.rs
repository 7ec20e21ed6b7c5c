//! Variance decompositions, Poincaré constants assembled from percolation
//! moments, and the weak Poincaré curve with the relaxation bound it implies.

use serde::Serialize;

use crate::error::{invalid, Result};
use crate::functionals::delta_norm_sq_table;
use crate::glauber::{linear_fit, rate_bounds, Generator};
use crate::model::{ExactMeasure, ModelParams};
use crate::percolation::{
    is_subcritical, k_n_curve, kprime_estimate, moment_k, tail_second_moment_curve, MomentEstimate,
};

/// Tolerance used by every inequality in this module.
pub const AUDIT_TOL: f64 = 1e-10;

/// A named inequality `lhs ≤ rhs` with its margin.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Assertion {
    pub name: String,
    pub lhs: f64,
    pub rhs: f64,
    pub margin: f64,
    pub pass: bool,
}

impl Assertion {
    pub fn le(name: impl Into<String>, lhs: f64, rhs: f64, tol: f64) -> Self {
        Assertion { name: name.into(), lhs, rhs, margin: rhs - lhs, pass: lhs <= rhs + tol }
    }
}

/// `Var(f) = Σ_i E(Δ_i²)` along the rank filtration, with the Dirichlet form
/// and `‖δf‖₂²` for comparison.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VarianceReport {
    pub variance: f64,
    pub martingale_terms: Vec<f64>,
    pub dirichlet: f64,
    /// `variance / dirichlet`, absent when the form vanishes.
    pub ratio: Option<f64>,
    pub delta_norm_sq: f64,
}

impl VarianceReport {
    /// `|Var − Σ E(Δ_i²)|`.
    pub fn identity_residual(&self) -> f64 {
        (self.variance - self.martingale_terms.iter().sum::<f64>()).abs()
    }
}

/// `E(f,f) = Σ_x ∫ (∇_x f)² dP` over the free sites of `m`.
pub fn plain_dirichlet_form(m: &ExactMeasure, f: &[f64]) -> f64 {
    let k = m.n_free();
    m.probs()
        .iter()
        .enumerate()
        .map(|(idx, &p)| p * (0..k).map(|b| (f[idx ^ (1 << b)] - f[idx]).powi(2)).sum::<f64>())
        .sum()
}

fn check_table(m: &ExactMeasure, f: &[f64]) -> Result<()> {
    if f.len() != m.probs().len() {
        return Err(invalid(format!("function has {} values, the measure {} states", f.len(), m.probs().len())));
    }
    Ok(())
}

/// Exact martingale decomposition of `f` along the free ranks of `m`.
///
/// `E(f | F_i)` depends on the lowest `i` bits of the free index; it is
/// obtained from `E(f | F_{i+1})` by averaging out bit `i` with the
/// marginal weights of the lowest `i + 1` bits.
pub fn martingale_decomposition(m: &ExactMeasure, f: &[f64]) -> Result<VarianceReport> {
    check_table(m, f)?;
    let n = m.n_free();
    let mut weights = m.probs().to_vec();
    let mut cond = f.to_vec();
    let mut terms = vec![0.0; n];
    for i in (1..=n).rev() {
        let half = 1usize << (i - 1);
        let mut w_next = vec![0.0; half];
        let mut g_next = vec![0.0; half];
        for j in 0..half {
            let (w0, w1) = (weights[j], weights[j + half]);
            let w = w0 + w1;
            w_next[j] = w;
            g_next[j] = if w > 0.0 { (w0 * cond[j] + w1 * cond[j + half]) / w } else { 0.0 };
        }
        terms[i - 1] = (0..2 * half).map(|j| weights[j] * (cond[j] - g_next[j % half]).powi(2)).sum();
        weights = w_next;
        cond = g_next;
    }
    let variance = m.variance(f);
    let dirichlet = plain_dirichlet_form(m, f);
    Ok(VarianceReport {
        variance,
        martingale_terms: terms,
        dirichlet,
        ratio: (dirichlet > 0.0).then(|| variance / dirichlet),
        delta_norm_sq: delta_norm_sq_table(f, n),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct UniformVarianceReport {
    /// `Var(f)/‖δf‖₂²` per function, absent for constants.
    pub ratios: Vec<Option<f64>>,
    pub worst_ratio: f64,
    pub skipped: usize,
}

/// Empirical constant of `Var(f) ≤ C ‖δf‖₂²` over a list of functions.
pub fn uniform_variance_audit(m: &ExactMeasure, fs: &[Vec<f64>]) -> Result<UniformVarianceReport> {
    let mut ratios = Vec::with_capacity(fs.len());
    for f in fs {
        check_table(m, f)?;
        let norm = delta_norm_sq_table(f, m.n_free());
        ratios.push((norm > 0.0).then(|| m.variance(f) / norm));
    }
    let worst_ratio = ratios.iter().flatten().copied().fold(0.0, f64::max);
    let skipped = ratios.iter().filter(|r| r.is_none()).count();
    Ok(UniformVarianceReport { ratios, worst_ratio, skipped })
}

/// Sample budget for the percolation constants.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PercolationBudget {
    pub samples: usize,
    pub cap: usize,
    pub seed: u64,
}

impl Default for PercolationBudget {
    fn default() -> Self {
        PercolationBudget { samples: 100_000, cap: 60, seed: 0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    /// Zero field and finite `E_p(|C| e^{c|C|})`.
    Theorem1,
    /// Finite square-root-tail series.
    Theorem2,
    /// Subcritical percolation only.
    Weak,
    None,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PoincareCertificate {
    pub regime: Regime,
    pub p: f64,
    pub c: f64,
    pub c_prime: f64,
    pub delta: f64,
    /// `K` for the first regime, `K'` for the second.
    pub moment: Option<MomentEstimate>,
    /// Infinite unless the regime is `Theorem1` or `Theorem2`.
    pub c_p: f64,
    /// `2δ / C_P`, zero when `C_P` is infinite.
    pub gap_lower_bound: f64,
    /// Why the stronger regimes were not certified.
    pub notes: Vec<String>,
}

/// Assemble the strongest available Poincaré constant.
///
/// The first regime needs zero field (or `β = 0`) and a finite upper
/// envelope of `K = E_p(|C| e^{c|C|})`, giving `C_P = e^{2c} K²`. The second
/// needs a finite envelope of `K'`, giving `C_P = e^{2c} K'²`. Otherwise the
/// certificate falls back to the weak regime when `p < p_c`.
pub fn poincare_certificate(params: &ModelParams, budget: PercolationBudget) -> Result<PoincareCertificate> {
    let (p, c, c_prime) = (params.p(), params.c(), params.c_prime());
    let (delta, _) = rate_bounds(params);
    let mut notes = Vec::new();
    let finish = |regime, moment: Option<MomentEstimate>, c_p: f64, notes| PoincareCertificate {
        regime,
        p,
        c,
        c_prime,
        delta,
        moment,
        c_p,
        gap_lower_bound: if c_p.is_finite() { 2.0 * delta / c_p } else { 0.0 },
        notes,
    };

    if p <= 1.0 {
        if params.h() == 0.0 || params.beta() == 0.0 {
            let k = moment_k(p, params.dim(), c, budget.cap, budget.samples, budget.seed)?;
            if k.is_finite() {
                let c_p = (2.0 * c).exp() * k.upper_envelope().powi(2);
                return Ok(finish(Regime::Theorem1, Some(k), c_p, notes));
            }
            notes.push("path series for K diverges".to_string());
        } else {
            notes.push("nonzero field: the K-moment route needs h = 0".to_string());
        }
        let kp = kprime_estimate(p, params.dim(), c_prime, budget.cap, budget.samples, budget.seed)?;
        if kp.is_finite() {
            let c_p = (2.0 * c).exp() * kp.upper_envelope().powi(2);
            return Ok(finish(Regime::Theorem2, Some(kp), c_p, notes));
        }
        notes.push("square-root-tail series for K' diverges".to_string());
    } else {
        notes.push("p exceeds one".to_string());
    }
    let regime = if is_subcritical(p, params.dim()) { Regime::Weak } else { Regime::None };
    Ok(finish(regime, None, f64::INFINITY, notes))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PoincareAudit {
    /// `Var(f) ≤ C_P E(f,f)` per function (only with a finite `C_P`).
    pub poincare: Vec<Assertion>,
    /// `Var(f) ≤ C_P ‖δf‖₂²` per function (only with a finite `C_P`).
    pub uniform: Vec<Assertion>,
    /// Largest `Var/E` over the battery.
    pub battery_ratio: f64,
    /// `sup_f Var/E` on this box, from the spectrum.
    pub sharp_constant: f64,
    pub gap: f64,
    /// `gap ≥ 2δ/C_P` (only with a finite `C_P`).
    pub gap_bound: Option<Assertion>,
}

impl PoincareAudit {
    pub fn all_pass(&self) -> bool {
        self.poincare.iter().chain(&self.uniform).chain(&self.gap_bound).all(|a| a.pass)
    }
}

pub fn poincare_audit(m: &ExactMeasure, generator: &Generator, fs: &[Vec<f64>], cert: &PoincareCertificate) -> Result<PoincareAudit> {
    let mut poincare = Vec::new();
    let mut uniform = Vec::new();
    let mut battery_ratio = 0.0f64;
    for (k, f) in fs.iter().enumerate() {
        check_table(m, f)?;
        let var = m.variance(f);
        let e = plain_dirichlet_form(m, f);
        if e > 0.0 {
            battery_ratio = battery_ratio.max(var / e);
        }
        if cert.c_p.is_finite() {
            poincare.push(Assertion::le(format!("poincare[{k}]"), var, cert.c_p * e, AUDIT_TOL));
            let norm = delta_norm_sq_table(f, m.n_free());
            uniform.push(Assertion::le(format!("uniform[{k}]"), var, cert.c_p * norm, AUDIT_TOL));
        }
    }
    let sharp_constant = 1.0 / Generator::plain_form(m)?.spectral_gap()?;
    let gap = generator.spectral_gap()?;
    let gap_bound = cert.c_p.is_finite().then(|| Assertion::le("gap >= 2 delta / C_P", cert.gap_lower_bound, gap, 1e-8));
    Ok(PoincareAudit { poincare, uniform, battery_ratio, sharp_constant, gap, gap_bound })
}

/// One point of the weak Poincaré trade-off.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct WeakPoint {
    pub n: usize,
    /// `8 (E_p(|C|² 1{|C| > N}))²`.
    pub r: f64,
    /// `2 e^c K_N²`.
    pub alpha: f64,
    pub k_n: f64,
    pub k_n_se: f64,
    pub tail_second_moment: f64,
    pub tail_se: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PowerLawFit {
    /// `κ` in `α(r) ≈ C r^{-κ}`.
    pub kappa: f64,
    pub constant: f64,
    pub r_squared: f64,
    pub n_points: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct WeakPoincareCurve {
    pub p: f64,
    pub c: f64,
    pub points: Vec<WeakPoint>,
    pub fit: Option<PowerLawFit>,
}

impl WeakPoincareCurve {
    /// `α(r) = min{α(N) : r(N) ≤ r}`, infinite when no point qualifies.
    pub fn alpha_at(&self, r: f64) -> f64 {
        self.points.iter().filter(|pt| pt.r <= r).map(|pt| pt.alpha).fold(f64::INFINITY, f64::min)
    }
}

/// Sweep `N` over `n_range` (inclusive) and collect `(r(N), α(N))`.
pub fn weak_poincare_curve(params: &ModelParams, n_range: (usize, usize), budget: PercolationBudget) -> Result<WeakPoincareCurve> {
    let (lo, hi) = n_range;
    if lo == 0 || lo > hi {
        return Err(invalid(format!("N range {lo}..{hi} is empty or starts at zero")));
    }
    let p = params.p();
    if !is_subcritical(p, params.dim()) {
        return Err(invalid(format!("p = {p} is not subcritical in dimension {}", params.dim())));
    }
    let c = params.c();
    let kn = k_n_curve(p, params.dim(), c, hi, budget.samples, budget.seed)?;
    let thresholds: Vec<usize> = (lo..=hi).collect();
    let tails = tail_second_moment_curve(p, params.dim(), &thresholds, budget.samples, budget.cap.max(hi + 1), budget.seed)?;
    let points: Vec<WeakPoint> = thresholds
        .iter()
        .zip(&tails)
        .map(|(&n, t)| {
            let k = kn[n - 1];
            WeakPoint {
                n,
                r: 8.0 * t.value * t.value,
                alpha: 2.0 * c.exp() * k.value * k.value,
                k_n: k.value,
                k_n_se: k.std_error,
                tail_second_moment: t.value,
                tail_se: t.std_error,
            }
        })
        .collect();
    let logs: Vec<(f64, f64)> =
        points.iter().filter(|pt| pt.r > 0.0 && pt.alpha > 0.0).map(|pt| (pt.r.ln(), pt.alpha.ln())).collect();
    let fit = linear_fit(&logs).map(|(slope, intercept, r_squared)| PowerLawFit {
        kappa: -slope,
        constant: intercept.exp(),
        r_squared,
        n_points: logs.len(),
    });
    Ok(WeakPoincareCurve { p, c, points, fit })
}

/// `(1 + 1/κ)^{1+1/κ} (2tδ/C)^{-1/κ}`.
pub fn power_law_xi(kappa: f64, constant: f64, delta: f64, t: f64) -> f64 {
    let e = 1.0 + 1.0 / kappa;
    e.powf(e) * (2.0 * t * delta / constant).powf(-1.0 / kappa)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct XiValue {
    pub t: f64,
    /// `inf{r > 0 : −α(r) ln r / δ ≤ 2t}`, capped at one where every `r ≥ 1`
    /// qualifies trivially.
    pub numeric: f64,
    pub power_law: Option<f64>,
}

/// `ξ(t)` for a nonincreasing `α`, by bisection on `ln r` over `(0, 1]`.
pub fn xi_of_t(alpha: impl Fn(f64) -> f64, delta: f64, t: f64) -> Result<f64> {
    if !(t > 0.0 && delta > 0.0) {
        return Err(invalid("xi needs t > 0 and delta > 0"));
    }
    let feasible = |log_r: f64| {
        let r = log_r.exp();
        let a = alpha(r);
        log_r >= 0.0 || (a.is_finite() && -a * log_r / delta <= 2.0 * t)
    };
    let (mut lo, mut hi) = (f64::MIN_POSITIVE.ln(), 0.0f64);
    if feasible(lo) {
        return Ok(lo.exp());
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if feasible(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi.exp())
}

/// `ξ(t)` from a weak Poincaré curve, with the fitted power-law bound.
pub fn xi_from_curve(curve: &WeakPoincareCurve, delta: f64, t: f64) -> Result<XiValue> {
    let numeric = xi_of_t(|r| curve.alpha_at(r), delta, t)?;
    let power_law = curve.fit.filter(|f| f.kappa > 0.0).map(|f| power_law_xi(f.kappa, f.constant, delta, t));
    Ok(XiValue { t, numeric, power_law })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct WeakRelaxationAudit {
    pub xi: Vec<XiValue>,
    pub assertions: Vec<Assertion>,
}

/// `Var(S_t f) ≤ ξ(t) (‖f‖₂² + 4‖f‖∞²)` for the centered `f`.
pub fn weak_relaxation_audit(
    generator: &Generator,
    f: &[f64],
    curve: &WeakPoincareCurve,
    delta: f64,
    times: &[f64],
) -> Result<WeakRelaxationAudit> {
    let probs = generator.probs();
    if f.len() != probs.len() {
        return Err(invalid("function table does not match the state space"));
    }
    let mean: f64 = probs.iter().zip(f).map(|(p, v)| p * v).sum();
    let g: Vec<f64> = f.iter().map(|v| v - mean).collect();
    let l2: f64 = probs.iter().zip(&g).map(|(p, v)| p * v * v).sum();
    let sup = g.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let mut xi = Vec::with_capacity(times.len());
    let mut assertions = Vec::with_capacity(times.len());
    for &t in times {
        let x = xi_from_curve(curve, delta, t)?;
        let st = generator.semigroup(&g, t)?;
        let m: f64 = probs.iter().zip(&st).map(|(p, v)| p * v).sum();
        let var: f64 = probs.iter().zip(&st).map(|(p, v)| p * (v - m).powi(2)).sum();
        assertions.push(Assertion::le(format!("weak relaxation t={t}"), var, x.numeric * (l2 + 4.0 * sup * sup), AUDIT_TOL));
        xi.push(x);
    }
    Ok(WeakRelaxationAudit { xi, assertions })
}
