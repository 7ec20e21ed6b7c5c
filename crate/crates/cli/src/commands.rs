use std::collections::BTreeMap;
use std::sync::Arc;

use serde_json::{json, Value};

use disperc::audit::{
    poincare_audit, poincare_certificate, uniform_variance_audit, weak_poincare_curve, weak_relaxation_audit,
    xi_from_curve, Assertion, PercolationBudget, AUDIT_TOL,
};
use disperc::coupling::{
    domination_audit, grow_coupling_two_stage_glauber, per_site_disagreement_max, CouplingProblem, EXACT_COUPLING_CAP,
};
use disperc::expr::parse_functional;
use disperc::functionals::{random_table, tabulate, Functional, Observable};
use disperc::glauber::{
    detailed_balance_audit, rate_bounds, relaxation_curve_exact, relaxation_curve_mc, simulate, Generator, HeatBath,
    RelaxationCurve,
};
use disperc::lattice::{connected_sets_containing, enumerate_box, Enumeration};
use disperc::model::{
    dobrushin_beta, dobrushin_ok, encode_probabilities, racine2_ratio, racine2_sufficient, threshold_koko, ExactMeasure,
    ModelParams,
};
use disperc::percolation::{
    critical_probability, is_subcritical, k_n_curve, kprime_estimate, moment_k, tail_second_moment_curve,
};
use disperc::rng::{mix64, stream};
use disperc::{Error, Result};

use crate::report::Outcome;
use crate::settings::RunConfig;

fn to_value(v: impl serde::Serialize) -> Value {
    serde_json::to_value(v).expect("report values serialize")
}

fn lattice(cfg: &RunConfig) -> Result<Arc<Enumeration>> {
    Ok(Arc::new(enumerate_box(cfg.dim, cfg.box_sites)?))
}

fn exact_measure(cfg: &RunConfig) -> Result<ExactMeasure> {
    ExactMeasure::new(cfg.params()?, lattice(cfg)?, cfg.boundary)
}

fn budget(cfg: &RunConfig) -> PercolationBudget {
    PercolationBudget { samples: cfg.samples, cap: cfg.cap, seed: cfg.seed }
}

/// The `--functional` observable, if any.
fn user_observable(cfg: &RunConfig, lattice: &Enumeration) -> Result<Option<Observable>> {
    cfg.functional.as_deref().map(|src| parse_functional(src)?.resolve(lattice)).transpose()
}

/// The user functional followed by `functions` seeded random tables and polynomials.
fn battery(cfg: &RunConfig, m: &ExactMeasure) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::with_capacity(cfg.functions + 1);
    if let Some(obs) = user_observable(cfg, m.lattice())? {
        out.push(tabulate(&obs, m));
    }
    for k in 0..cfg.functions as u64 {
        let seed = mix64(cfg.seed.wrapping_add(k));
        out.push(if k % 2 == 0 {
            random_table(seed, m.probs().len())
        } else {
            tabulate(&Observable::random_polynomial(seed, 1 + (k as usize / 2) % 4, m.n_sites()), m)
        });
    }
    Ok(out)
}

pub fn thresholds(cfg: &RunConfig) -> Result<Outcome> {
    let params = cfg.params()?;
    let (delta, max_rate) = rate_bounds(&params);
    let dobrushin = match dobrushin_ok(&params) {
        Ok(v) => Some(v),
        Err(Error::NotApplicable(_)) => None,
        Err(e) => return Err(e),
    };
    let results = json!({
        "koko": threshold_koko(params.dim()),
        "below_koko": params.beta() < threshold_koko(params.dim()),
        "dobrushin_beta": dobrushin_beta(params.dim()),
        "dobrushin": dobrushin,
        "racine2": racine2_sufficient(&params),
        "racine2_ratio": racine2_ratio(&params),
        "p": params.p(),
        "c": params.c(),
        "c_prime": params.c_prime(),
        "p_c": critical_probability(params.dim()),
        "subcritical": is_subcritical(params.p(), params.dim()),
        "delta": delta,
        "max_rate": max_rate,
    });
    let summary = vec![
        format!("p = {:.6}, c = {:.6}, c' = {:.6}", params.p(), params.c(), params.c_prime()),
        format!("koko = {:.8}, racine2 = {}", threshold_koko(params.dim()), racine2_sufficient(&params)),
    ];
    Ok(Outcome { results, summary, ..Default::default() })
}

pub fn perc_moments(cfg: &RunConfig) -> Result<Outcome> {
    let params = cfg.params()?;
    let (p, dim) = (params.p(), params.dim());
    if p > 1.0 {
        return Err(Error::InvalidParameter(format!("p = {p} exceeds one; no percolation process")));
    }
    let (lo, hi) = cfg.n_range;
    let k = moment_k(p, dim, params.c(), cfg.cap, cfg.samples, cfg.seed)?;
    let kp = kprime_estimate(p, dim, params.c_prime(), cfg.cap, cfg.samples, cfg.seed)?;
    let curve: Vec<_> = k_n_curve(p, dim, params.c(), hi.max(1), cfg.samples, cfg.seed)?
        .into_iter()
        .filter(|pt| pt.n >= lo)
        .collect();
    let thresholds: Vec<usize> = (lo..=hi).collect();
    let tails = tail_second_moment_curve(p, dim, &thresholds, cfg.samples, cfg.cap.max(hi + 1), cfg.seed)?;
    let rows = curve.iter().map(|pt| [pt.n as f64, pt.value, pt.std_error]).collect();
    let summary = vec![
        format!("p = {p:.6} (p_c = {:.6})", critical_probability(dim)),
        format!("K = {:.6} +- {:.2e} (envelope {:.6})", k.value, k.std_error, k.upper_envelope()),
        format!("K' = {:.6} +- {:.2e} (envelope {:.6})", kp.value, kp.std_error, kp.upper_envelope()),
    ];
    let tails: Vec<Value> = thresholds.iter().zip(&tails).map(|(n, t)| json!({ "n": n, "estimate": t })).collect();
    Ok(Outcome {
        results: json!({
            "p": p,
            "p_c": critical_probability(dim),
            "subcritical": is_subcritical(p, dim),
            "k": k,
            "k_upper": k.upper_envelope(),
            "k_prime": kp,
            "k_prime_upper": kp.upper_envelope(),
            "k_n": curve,
            "tail_second_moment": tails,
        }),
        summary,
        csv: Some(("n,value,se", rows)),
        ..Default::default()
    })
}

pub fn coupling_audit(cfg: &RunConfig) -> Result<Outcome> {
    let params = cfg.params()?;
    let mode = cfg.mode_or("exact", &["exact", "two-stage", "glauber"])?;
    let lattice = lattice(cfg)?;
    lattice.check_rank(cfg.pivot)?;
    let pivot = cfg.pivot;
    let xi = vec![1i8; pivot];
    let mut assertions = vec![Assertion::le("per-site disagreement <= p", per_site_disagreement_max(&params), params.p(), 1e-15)];
    let mut summary = Vec::new();
    let mut domination = Vec::new();

    let transcripts = if mode == "glauber" {
        let rates = HeatBath::new(params, lattice.clone(), cfg.boundary);
        (0..cfg.replicas as u64)
            .map(|r| grow_coupling_two_stage_glauber(&rates, pivot, &xi, cfg.burn_in, &mut stream(cfg.seed, "coupling", r)))
            .collect::<Result<Vec<_>>>()?
    } else {
        let m = ExactMeasure::with_cap(params, lattice.clone(), cfg.boundary, EXACT_COUPLING_CAP)?;
        if m.n_free() - pivot <= EXACT_COUPLING_CAP {
            let sets = connected_sets_containing(&lattice, pivot, 3, |r| r >= pivot);
            for check in domination_audit(&m, pivot, &sets)? {
                assertions.push(Assertion::le(format!("domination {:?}", check.set), check.lhs, check.rhs, AUDIT_TOL));
                domination.push(check);
            }
        }
        let problem = CouplingProblem::new(&m, pivot, &xi)?;
        (0..cfg.replicas as u64)
            .map(|r| {
                let mut rng = stream(cfg.seed, "coupling", r);
                if mode == "exact" {
                    problem.sample_exact(&mut rng)
                } else {
                    problem.sample_two_stage(params.p(), &mut rng)
                }
            })
            .collect()
    };

    let invalid = transcripts.iter().filter(|t| t.check(&lattice).is_err()).count();
    assertions.push(Assertion::le("invalid transcripts", invalid as f64, 0.0, 0.0));
    let mut histogram: BTreeMap<usize, usize> = BTreeMap::new();
    for t in &transcripts {
        *histogram.entry(t.disagreement.len()).or_default() += 1;
    }
    let n = transcripts.len() as f64;
    let mean_size = transcripts.iter().map(|t| t.disagreement.len() as f64).sum::<f64>() / n;
    let failure_sizes: Vec<f64> = transcripts.iter().filter_map(|t| t.failure.as_ref().map(|f| f.len() as f64)).collect();
    let mean_failure = (!failure_sizes.is_empty()).then(|| failure_sizes.iter().sum::<f64>() / failure_sizes.len() as f64);
    let marginal_defect = transcripts.iter().map(|t| t.marginal_defect).fold(0.0, f64::max);
    summary.push(format!("{} {mode} transcripts from pivot {pivot}: mean |C| = {mean_size:.4}", transcripts.len()));
    if let Some(f) = mean_failure {
        summary.push(format!("mean failure cluster size = {f:.4}, max marginal defect = {marginal_defect:.3e}"));
    }
    summary.push(format!("{} domination checks", domination.len()));
    Ok(Outcome {
        results: json!({
            "mode": mode,
            "p": params.p(),
            "pivot": pivot,
            "transcripts": transcripts.len(),
            "mean_disagreement_size": mean_size,
            "disagreement_size_histogram": histogram,
            "mean_failure_size": mean_failure,
            "max_marginal_defect": marginal_defect,
            "domination": domination,
            "example_transcript": transcripts.first(),
        }),
        assertions,
        summary,
        ..Default::default()
    })
}

pub fn gap_audit(cfg: &RunConfig, export: Option<&std::path::Path>) -> Result<Outcome> {
    let m = exact_measure(cfg)?;
    if let Some(path) = export {
        std::fs::write(path, encode_probabilities(m.probs())?)
            .map_err(|e| Error::InvalidParameter(format!("cannot write {}: {e}", path.display())))?;
    }
    let rates = HeatBath::for_measure(&m);
    let g = Generator::new(&m, &rates)?;
    let gap = g.spectral_gap()?;
    let cert = poincare_certificate(m.params(), budget(cfg))?;
    let mut assertions = vec![
        Assertion::le("detailed balance residual", detailed_balance_audit(&m, &rates), 0.0, AUDIT_TOL),
        Assertion::le("stationarity residual", g.stationarity_residual(), 0.0, AUDIT_TOL),
    ];
    if cert.c_p.is_finite() {
        assertions.push(Assertion::le("gap >= 2 delta / C_P", cert.gap_lower_bound, gap, 1e-8));
    }
    let summary = vec![
        format!("gap = {gap:.10} on {} states", m.probs().len()),
        format!("regime {:?}: C_P = {:.6}, bound 2 delta / C_P = {:.6}", cert.regime, cert.c_p, cert.gap_lower_bound),
    ];
    Ok(Outcome {
        results: json!({
            "gap": gap,
            "bound": cert.gap_lower_bound,
            "states": m.probs().len(),
            "delta": rates.delta(),
            "max_rate": rates.max_rate(),
        }),
        certificate: Some(to_value(&cert)),
        assertions,
        summary,
        ..Default::default()
    })
}

fn curve_rows(curve: &RelaxationCurve) -> Vec<[f64; 3]> {
    curve.points.iter().map(|p| [p.t, p.variance, p.std_error]).collect()
}

pub fn relax(cfg: &RunConfig) -> Result<Outcome> {
    let params = cfg.params()?;
    let mode = cfg.mode_or("exact", &["exact", "mc", "both"])?;
    let lattice = lattice(cfg)?;
    let obs = user_observable(cfg, &lattice)?
        .unwrap_or_else(|| Observable::random_polynomial(cfg.seed, 2, lattice.len()));
    let rates = HeatBath::new(params, lattice.clone(), cfg.boundary);
    let mut assertions = Vec::new();
    let mut summary = Vec::new();
    let mut results = serde_json::Map::new();

    let exact = if mode != "mc" {
        let m = exact_measure(cfg)?;
        let g = Generator::new(&m, &rates)?;
        let gap = g.spectral_gap()?;
        let table = tabulate(&obs, &m);
        let mean = m.expect(&table);
        let centered: Vec<f64> = table.iter().map(|v| v - mean).collect();
        let var0 = m.variance(&table);
        let curve = relaxation_curve_exact(&g, &centered, &cfg.time_grid)?;
        for p in &curve.points {
            assertions.push(Assertion::le(format!("Var(S_t f) <= e^(-gap t) Var(f) at t={}", p.t), p.variance, (-gap * p.t).exp() * var0, 1e-8));
        }
        summary.push(format!("gap = {gap:.8}, Var(f) = {var0:.6}"));
        results.insert("gap".into(), json!(gap));
        results.insert("variance".into(), json!(var0));
        results.insert("exact".into(), to_value(&curve));
        Some((curve, m))
    } else {
        None
    };

    let mc = if mode != "exact" {
        let ranks: Vec<usize> = (0..lattice.len()).collect();
        let curve = match &exact {
            Some((_, m)) => {
                let sampler = m.sampler();
                relaxation_curve_mc(
                    &rates,
                    &ranks,
                    |rng| m.config(sampler.sample(rng)).spins().to_vec(),
                    |s: &[i8]| obs.eval(s),
                    &cfg.time_grid,
                    cfg.replicas,
                    cfg.inner_replicas,
                    cfg.seed,
                )?
            }
            None => {
                // Start each replica from a long heat-bath run instead of an exact draw.
                let horizon = cfg.burn_in as f64;
                relaxation_curve_mc(
                    &rates,
                    &ranks,
                    |rng| {
                        let mut s = vec![1i8; ranks.len()];
                        simulate(&mut s, &ranks, &rates, horizon, rng);
                        s
                    },
                    |s: &[i8]| obs.eval(s),
                    &cfg.time_grid,
                    cfg.replicas,
                    cfg.inner_replicas,
                    cfg.seed,
                )?
            }
        };
        results.insert("monte_carlo".into(), to_value(&curve));
        Some(curve)
    } else {
        None
    };

    if let (Some((e, _)), Some(s)) = (&exact, &mc) {
        let z: Vec<Option<f64>> = e
            .points
            .iter()
            .zip(&s.points)
            .map(|(a, b)| (b.std_error > 0.0).then(|| (a.variance - b.variance) / b.std_error))
            .collect();
        let worst = z.iter().flatten().fold(0.0f64, |a, v| a.max(v.abs()));
        summary.push(format!("Monte Carlo vs exact: max |z| = {worst:.3}"));
        results.insert("z_scores".into(), json!(z));
    }
    let rows = match (&exact, &mc) {
        (Some((c, _)), _) => curve_rows(c),
        (None, Some(c)) => curve_rows(c),
        _ => Vec::new(),
    };
    Ok(Outcome { results: Value::Object(results), assertions, summary, csv: Some(("t,value,se", rows)), ..Default::default() })
}

pub fn poincare(cfg: &RunConfig) -> Result<Outcome> {
    let m = exact_measure(cfg)?;
    let g = Generator::new(&m, &HeatBath::for_measure(&m))?;
    let cert = poincare_certificate(m.params(), budget(cfg))?;
    let fs = battery(cfg, &m)?;
    let audit = poincare_audit(&m, &g, &fs, &cert)?;
    let uniform = uniform_variance_audit(&m, &fs)?;
    let assertions: Vec<Assertion> =
        audit.poincare.iter().chain(&audit.uniform).chain(&audit.gap_bound).cloned().collect();
    let summary = vec![
        format!("regime {:?}: C_P = {:.6}", cert.regime, cert.c_p),
        format!(
            "sharp constant on this box = {:.6}, battery max Var/E = {:.6}, gap = {:.8}",
            audit.sharp_constant, audit.battery_ratio, audit.gap
        ),
    ];
    Ok(Outcome {
        results: json!({
            "functions": fs.len(),
            "sharp_constant": audit.sharp_constant,
            "battery_ratio": audit.battery_ratio,
            "gap": audit.gap,
            "uniform_worst_ratio": uniform.worst_ratio,
            "uniform_skipped": uniform.skipped,
        }),
        certificate: Some(to_value(&cert)),
        assertions,
        summary,
        ..Default::default()
    })
}

pub fn weak_poincare(cfg: &RunConfig) -> Result<Outcome> {
    let params: ModelParams = cfg.params()?;
    let curve = weak_poincare_curve(&params, cfg.n_range, budget(cfg))?;
    let (delta, _) = rate_bounds(&params);
    let mut assertions = Vec::new();
    for w in curve.points.windows(2) {
        assertions.push(Assertion::le(format!("K_{} <= K_{}", w[0].n, w[1].n), w[0].k_n, w[1].k_n, 0.0));
        assertions.push(Assertion::le(format!("r({}) <= r({})", w[1].n, w[0].n), w[1].r, w[0].r, 0.0));
    }
    let xi = cfg.time_grid.iter().map(|&t| xi_from_curve(&curve, delta, t)).collect::<Result<Vec<_>>>()?;
    let mut summary = vec![match curve.fit {
        Some(f) => format!("power-law fit: kappa = {:.4}, C = {:.4e}, R^2 = {:.4} over {} points", f.kappa, f.constant, f.r_squared, f.n_points),
        None => "no power-law fit (fewer than two positive points)".to_string(),
    }];
    let mut relaxation = Vec::new();
    match exact_measure(cfg).and_then(|m| Ok((Generator::new(&m, &HeatBath::for_measure(&m))?, m))) {
        Ok((g, m)) => {
            for f in battery(cfg, &m)? {
                let audit = weak_relaxation_audit(&g, &f, &curve, delta, &cfg.time_grid)?;
                assertions.extend(audit.assertions.iter().cloned());
                relaxation.push(audit);
            }
            summary.push(format!("weak relaxation checked for {} functions on {} sites", relaxation.len(), m.n_sites()));
        }
        Err(Error::Capacity { sites, cap }) => {
            summary.push(format!("box of {sites} sites exceeds the generator cap {cap}; relaxation audit skipped"));
        }
        Err(e) => return Err(e),
    }
    let rows = curve.points.iter().map(|p| [p.n as f64, p.r, p.alpha]).collect();
    Ok(Outcome {
        results: json!({ "curve": curve, "xi": xi, "relaxation": relaxation }),
        assertions,
        summary,
        csv: Some(("n,r,alpha", rows)),
        ..Default::default()
    })
}
