//! Replication engine and the four theorem-verification experiments.
//!
//! Every experiment follows the same shape: a deterministic per-replication
//! closure (seeded through counter-based streams) mapped over `0..reps` with
//! rayon, collected *in replication order*, then reduced serially. Reports
//! are therefore byte-identical across thread counts.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::time::Instant;

use crate::error::{Error, Result};
use crate::estimators::{
    normalized_autocov_deviation, operator_dev_second_moment, sqrtn_dev_variance, Regime,
};
use crate::hermite::{hermite_poly, GaussHermiteRule, HermiteCoefficients, SubordinationMap};
use crate::limits::{ofbm_covariance, ofbm_cross_cov, self_similarity_residual};
use crate::matalg::SquareMatrix;
use crate::model::{check_conditions, ProcessKind, ProcessSpec};
use crate::normalize::{
    asymptotic_normalization, asymptotic_normalizer, exact_normalization, operator_normalizer,
    triangular_normalizer,
};
use crate::report::{Check, ConvergenceReport, KsResult, MatrixComparison};
use crate::simulate::{GaussianSampler, LinearSampler};
use crate::stats::{ks_test_normal, MomentAccumulator};

/// The four verification experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Clt,
    Fclt,
    Subordination,
    Autocov,
}

impl ExperimentKind {
    pub fn name(&self) -> &'static str {
        match self {
            ExperimentKind::Clt => "clt",
            ExperimentKind::Fclt => "fclt",
            ExperimentKind::Subordination => "subordination",
            ExperimentKind::Autocov => "autocov",
        }
    }
}

/// Named tolerance map; every pass flag in a report records which of these it
/// used together with both sides of the comparison.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct Tolerances {
    /// Max-abs distance allowed between empirical and target covariances.
    pub cov_max_abs: f64,
    /// KS significance floor.
    pub ks_p_min: f64,
    /// Adaptive band: distances are also accepted below `se_multiplier * SE`.
    pub se_multiplier: f64,
    /// Variance-ratio band across the size ladder (sqrt-n regime).
    pub variance_ratio_low: f64,
    pub variance_ratio_high: f64,
    /// Max/min spread allowed for operator-normalized second moments.
    pub second_moment_factor: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            cov_max_abs: 0.15,
            ks_p_min: 0.01,
            se_multiplier: 4.0,
            variance_ratio_low: 0.75,
            variance_ratio_high: 1.33,
            second_moment_factor: 1.25,
        }
    }
}

/// Subordination-specific settings.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SubordinationSettings {
    pub maps: Vec<SubordinationMap>,
    pub l_max: usize,
    pub quad_order: usize,
    pub rank_tol: f64,
}

/// Fully resolved experiment configuration (echoed into every report).
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub spec: ProcessSpec,
    pub n: usize,
    pub n_list: Vec<usize>,
    pub truncation: usize,
    pub replications: usize,
    pub seed: u64,
    pub grid: Vec<f64>,
    pub lags: usize,
    pub subordination: SubordinationSettings,
    pub tolerances: Tolerances,
    pub gaussian_cap: usize,
    pub stability_check: bool,
    pub stability_replications: usize,
}

/// Maps `f` over replications in parallel, preserving replication order.
fn replicate<T: Send>(reps: usize, f: impl Fn(u64) -> T + Sync + Send) -> Vec<T> {
    (0..reps as u64).into_par_iter().map(f).collect()
}

/// Dispatches on `config.experiment`.
pub fn run(config: &ExperimentConfig) -> Result<ConvergenceReport> {
    match config.experiment {
        ExperimentKind::Clt => run_clt(config),
        ExperimentKind::Fclt => run_fclt(config),
        ExperimentKind::Subordination => run_subordination(config),
        ExperimentKind::Autocov => run_autocov(config),
    }
}

fn new_report(config: &ExperimentConfig) -> ConvergenceReport {
    ConvergenceReport {
        experiment: config.experiment.name().to_string(),
        version: crate::VERSION.to_string(),
        spec_digest: config.spec.digest(),
        config: config.clone(),
        comparisons: Vec::new(),
        ks: Vec::new(),
        checks: Vec::new(),
        normalizers: BTreeMap::new(),
        passed: false,
        runtime_seconds: 0.0,
    }
}

fn require_admissible(spec: &ProcessSpec) -> Result<()> {
    if spec.kind == ProcessKind::LinearLrd {
        let rep = check_conditions(spec);
        if !rep.pass() {
            return Err(Error::Hypothesis(rep.describe_failures()));
        }
    }
    Ok(())
}

/// Assembles a covariance comparison from per-replication product vectors.
fn covariance_comparison(
    name: &str,
    acc: &MomentAccumulator,
    target: SquareMatrix,
    tol: &Tolerances,
) -> MatrixComparison {
    let d = target.dim();
    let emp = SquareMatrix::new(d, acc.mean()).expect("finite accumulator");
    let se = SquareMatrix::new(d, acc.standard_error()).expect("finite accumulator");
    MatrixComparison::evaluate(name, emp, target, se, tol.cov_max_abs, tol.se_multiplier)
}

/// CLT experiment: exact normalization `Sigma_n^{-1} S_n` versus `N(0, I)`.
pub fn run_clt(config: &ExperimentConfig) -> Result<ConvergenceReport> {
    let started = Instant::now();
    let spec = &config.spec;
    if spec.kind == ProcessKind::GaussianDiagonal {
        return Err(Error::Hypothesis(
            "the CLT experiment covers linear and white-noise specs".into(),
        ));
    }
    require_admissible(spec)?;
    let d = spec.dim();
    let n = config.n;
    let norm = exact_normalization(spec, n, config.truncation)?;

    let linear = match spec.kind {
        ProcessKind::LinearLrd => Some(LinearSampler::new(spec, n, config.truncation)?),
        _ => None,
    };
    let inv_sqrt = norm.inv_sqrt.clone();
    let seed = config.seed;
    let ys: Vec<Vec<f64>> = replicate(config.replications, |rep| {
        let path = match &linear {
            Some(sampler) => sampler.sample(seed, rep),
            None => crate::simulate::simulate_white(spec, n, seed, rep).expect("white path"),
        };
        inv_sqrt.mul_vec(&path.partial_sum(n))
    });

    let mut products = MomentAccumulator::new(d * d);
    let mut coords: Vec<Vec<f64>> = vec![Vec::with_capacity(ys.len()); d];
    let mut buf = vec![0.0; d * d];
    for y in &ys {
        for i in 0..d {
            coords[i].push(y[i]);
            for j in 0..d {
                buf[i * d + j] = y[i] * y[j];
            }
        }
        products.push(&buf);
    }

    let mut report = new_report(config);
    report
        .normalizers
        .insert("sigma_sq".into(), norm.sigma_sq.clone());
    report
        .normalizers
        .insert("sigma_inv_sqrt".into(), norm.inv_sqrt.clone());

    let cmp = covariance_comparison(
        "clt_covariance",
        &products,
        SquareMatrix::identity(d),
        &config.tolerances,
    );
    // the CLT criterion additionally wants every entry within the SE band on
    // its own (not just within the fixed tolerance)
    let mut worst_se_ratio = 0.0f64;
    for i in 0..d {
        for j in 0..d {
            let se = cmp.standard_error.get(i, j).max(1e-300);
            let diff = (cmp.empirical.get(i, j) - cmp.target.get(i, j)).abs();
            worst_se_ratio = worst_se_ratio.max(diff / se);
        }
    }
    report.checks.push(Check::below(
        "clt_covariance_se_ratio",
        worst_se_ratio,
        config.tolerances.se_multiplier,
    ));
    report.comparisons.push(cmp);

    // stationarity probe: mean of the normalized sum vanishes
    let mut mean_ratio = 0.0f64;
    for coord in coords.iter() {
        let m = crate::stats::mean(coord);
        let se = (crate::stats::variance(coord) / coord.len() as f64).sqrt().max(1e-300);
        mean_ratio = mean_ratio.max(m.abs() / se);
    }
    report.checks.push(Check::below("mean_se_ratio", mean_ratio, 3.0));

    for (i, coord) in coords.iter().enumerate() {
        let (stat, p) = ks_test_normal(coord);
        report.ks.push(KsResult {
            name: format!("coordinate_{}", i + 1),
            statistic: stat,
            p_value: p,
            p_min: config.tolerances.ks_p_min,
            pass: p > config.tolerances.ks_p_min,
        });
    }

    report.recompute_passed();
    report.runtime_seconds = started.elapsed().as_secs_f64();
    Ok(report)
}

/// FCLT experiment: finite-dimensional distributions of the normalized
/// partial-sum process against the OFBM limit covariance.
pub fn run_fclt(config: &ExperimentConfig) -> Result<ConvergenceReport> {
    let started = Instant::now();
    let spec = &config.spec;
    if spec.kind != ProcessKind::LinearLrd {
        return Err(Error::Hypothesis("the FCLT experiment requires a linear_lrd spec".into()));
    }
    require_admissible(spec)?;
    if config.grid.is_empty() {
        return Err(Error::Config("fclt requires a nonempty grid".into()));
    }
    let d = spec.dim();
    let n = config.n;
    let mut grid = config.grid.clone();
    grid.sort_by(|a, b| a.total_cmp(b));

    let sigma_sq = crate::normalize::exact_sigma_sq(spec, n, config.truncation)?;
    let w_exact = triangular_normalizer(&sigma_sq)?;
    let r = crate::model::limiting_r(spec)?;
    let ofbm = ofbm_covariance(&r, &spec.memory)?;
    let asym = asymptotic_normalization(&r, &spec.memory, 1)?;

    let sampler = LinearSampler::new(spec, n, config.truncation)?;
    let seed = config.seed;
    let g = grid.len();
    let per_rep: Vec<Vec<f64>> = replicate(config.replications, |rep| {
        let path = sampler.sample(seed, rep);
        let sums = crate::simulate::partial_sum_path(&path, &grid).expect("grid validated");
        let mut ys = Vec::with_capacity(g * d);
        for gi in 0..g {
            ys.extend(w_exact.mul_vec(sums.at(gi)));
        }
        ys
    });

    // pair accumulators, ordered (g1 <= g2)
    let mut pairs = Vec::new();
    for g1 in 0..g {
        for g2 in g1..g {
            pairs.push((g1, g2));
        }
    }
    let mut accs: Vec<MomentAccumulator> = pairs.iter().map(|_| MomentAccumulator::new(d * d)).collect();
    let mut buf = vec![0.0; d * d];
    for ys in &per_rep {
        for (pi, (g1, g2)) in pairs.iter().enumerate() {
            for i in 0..d {
                for j in 0..d {
                    buf[i * d + j] = ys[g1 * d + i] * ys[g2 * d + j];
                }
            }
            accs[pi].push(&buf);
        }
    }

    let mut report = new_report(config);
    report.normalizers.insert("triangular_exact".into(), w_exact.clone());
    report
        .normalizers
        .insert("asymptotic".into(), asymptotic_normalizer(&asym, n));
    report.normalizers.insert("a_factor".into(), ofbm.a_factor.clone());

    for (pi, (g1, g2)) in pairs.iter().enumerate() {
        let (t, u) = (grid[*g1], grid[*g2]);
        let target = ofbm_cross_cov(&ofbm, t, u)?;
        let cmp = covariance_comparison(
            &format!("fclt_cov_t{:.4}_u{:.4}", t, u),
            &accs[pi],
            target,
            &config.tolerances,
        );
        report.comparisons.push(cmp);
    }

    // limit-target self checks: operator self-similarity and stationary
    // increments are exact identities of the OFBM covariance
    let mut worst_ss = 0.0f64;
    let mut worst_si = 0.0f64;
    {
        use rand::prelude::*;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(config.seed ^ 0x0fb1);
        for _ in 0..100 {
            let t: f64 = rng.random();
            let u: f64 = rng.random();
            let amax = 1.0 / t.max(u).max(1e-6);
            let a: f64 = (0.05 + rng.random::<f64>()).min(amax);
            worst_ss = worst_ss.max(self_similarity_residual(&ofbm, a, t, u)?);

            let ctt = ofbm_cross_cov(&ofbm, t, t)?;
            let cuu = ofbm_cross_cov(&ofbm, u, u)?;
            let ctu = ofbm_cross_cov(&ofbm, t, u)?;
            let cut = ofbm_cross_cov(&ofbm, u, t)?;
            let lhs = ctt.add(&cuu).sub(&ctu).sub(&cut);
            let diff = (t - u).abs();
            let dp = crate::matalg::diag_power(
                &crate::matalg::DiagonalExponent::new(
                    spec.memory.values().iter().map(|di| 1.0 - di).collect(),
                )?,
                diff.max(1e-300),
            )?;
            let dp = if diff == 0.0 { SquareMatrix::zeros(d) } else { dp };
            let sym = ofbm.r_tilde_pos.add(&ofbm.r_tilde_pos.transpose());
            let rhs = ofbm
                .a_factor
                .matmul(&dp.matmul(&sym).matmul(&dp))
                .matmul(&ofbm.a_factor.transpose());
            worst_si = worst_si.max(lhs.max_abs_diff(&rhs));
        }
    }
    report.checks.push(Check::below("ofbm_self_similarity_residual", worst_ss, 1e-10));
    report.checks.push(Check::below("ofbm_stationary_increment_residual", worst_si, 1e-10));

    report.recompute_passed();
    report.runtime_seconds = started.elapsed().as_secs_f64();
    Ok(report)
}

/// Exact covariance scale of rank-`j` Hermite sums for one component of a
/// diagonal Gaussian spec: `S_j(n) = sum_{k1,k2 <= n} r(k2-k1)^j`.
fn hermite_sum_scale(spec: &ProcessSpec, comp: usize, j: usize, n: usize) -> f64 {
    let r_diag = spec.r_diag.as_ref().expect("gaussian spec");
    let d = spec.memory.get(comp);
    let mut acc = n as f64; // h = 0 term, r(0) = 1
    for h in 1..n {
        let r = r_diag[comp] * (h as f64).powf(-2.0 * d);
        acc += 2.0 * (n - h) as f64 * r.powi(j as i32);
    }
    acc
}

/// Exact reduction-principle tail variance of the normalized subordinated
/// sum, per output coordinate `p`:
/// `V_p(n) = sum_i a_{pi}^2 n^{2 tau d_{max{p,i}} - 2}
///           sum_{j > tau} h_{j,i}^2 j! S_j(n)`.
/// When `G` has no tail beyond `tau` (a pure Hermite polynomial), a unit
/// probe at order `tau + 1` exercises the decay of the display itself.
fn reduction_tail_variance(
    spec: &ProcessSpec,
    coeffs: &HermiteCoefficients,
    a_factor: &SquareMatrix,
    n: usize,
) -> Vec<f64> {
    let d = spec.dim();
    let tau = coeffs.rank;
    let l_max = coeffs.coeffs[0].len() - 1;
    let has_tail = coeffs
        .coeffs
        .iter()
        .any(|c| c.iter().skip(tau + 1).any(|h| h.abs() > coeffs.tol));
    let nf = n as f64;
    let mut out = vec![0.0; d];
    for p in 0..d {
        let mut acc = 0.0;
        for i in p..d {
            let a = a_factor.get(p, i);
            if a == 0.0 {
                continue;
            }
            let scale = nf.powf(2.0 * tau as f64 * spec.memory.index_max(p, i) - 2.0);
            let mut inner = 0.0;
            let mut fact = (1..=tau + 1).map(|k| k as f64).product::<f64>();
            for j in (tau + 1)..=l_max.max(tau + 1) {
                if j > tau + 1 {
                    fact *= j as f64;
                }
                let h = if has_tail {
                    coeffs.coeffs[i].get(j).copied().unwrap_or(0.0)
                } else if j == tau + 1 {
                    1.0
                } else {
                    0.0
                };
                if h != 0.0 {
                    inner += h * h * fact * hermite_sum_scale(spec, i, j, n);
                }
            }
            acc += a * a * scale * inner;
        }
        out[p] = acc;
    }
    out
}

/// Subordination experiment: variance-normalized Hermite sums against the
/// identity target, the full `G`-subordinated sums against `diag(h_tau^2)`,
/// the reduction-principle tail decay, and (optionally) cross-n stability.
pub fn run_subordination(config: &ExperimentConfig) -> Result<ConvergenceReport> {
    let started = Instant::now();
    let spec = &config.spec;
    if spec.kind != ProcessKind::GaussianDiagonal {
        return Err(Error::Hypothesis(
            "the subordination experiment requires a gaussian_diagonal spec".into(),
        ));
    }
    let d = spec.dim();
    let sub = &config.subordination;
    if sub.maps.len() != d {
        return Err(Error::Config("one subordination map per coordinate required".into()));
    }
    let coeffs = HermiteCoefficients::from_maps(&sub.maps, sub.l_max, sub.quad_order, sub.rank_tol)?;
    let tau = coeffs.rank;
    for (i, di) in spec.memory.values().iter().enumerate() {
        if !(tau as f64 * di < 0.5) {
            return Err(Error::Hypothesis(format!(
                "tau d_{} = {} >= 1/2: outside the subordination theorem's domain",
                i + 1,
                tau as f64 * di
            )));
        }
    }
    let r = spec.r_matrix()?;
    let asym = asymptotic_normalization(&r, &spec.memory, tau)?;

    let mut report = new_report(config);
    let (lead_acc, full_acc, w_exact) =
        subordination_pass(config, tau, config.n, config.replications, config.seed)?;
    report.normalizers.insert("subordination_exact".into(), w_exact);
    report
        .normalizers
        .insert("asymptotic".into(), asymptotic_normalizer(&asym, config.n));

    let lead_cmp = covariance_comparison(
        "leading_term_covariance",
        &lead_acc,
        SquareMatrix::identity(d),
        &config.tolerances,
    );
    report.comparisons.push(lead_cmp);
    let hl = coeffs.leading();
    let full_target = SquareMatrix::diagonal(&hl.iter().map(|h| h * h).collect::<Vec<_>>());
    let full_cmp = covariance_comparison(
        "subordinated_covariance",
        &full_acc,
        full_target,
        &config.tolerances,
    );
    report.comparisons.push(full_cmp);

    // reduction-principle tail decay at n vs 2n (analytic, exact lag sums)
    let v_n = reduction_tail_variance(spec, &coeffs, &asym.a_factor, config.n);
    let v_2n = reduction_tail_variance(spec, &coeffs, &asym.a_factor, 2 * config.n);
    let mut worst = 0.0f64;
    for p in 0..d {
        if v_n[p] > 0.0 {
            worst = worst.max(v_2n[p] / v_n[p]);
        }
    }
    report.checks.push(Check::below("reduction_tail_ratio", worst, 1.0 - 1e-12));

    if config.stability_check {
        let (_, full_acc_2n, _) = subordination_pass(
            config,
            tau,
            2 * config.n,
            config.stability_replications,
            config.seed ^ 0x5ab1e,
        )?;
        let emp_n = SquareMatrix::new(d, full_acc.mean())?;
        let se_n = SquareMatrix::new(d, full_acc.standard_error())?;
        let emp_2n = SquareMatrix::new(d, full_acc_2n.mean())?;
        let se_2n = SquareMatrix::new(d, full_acc_2n.standard_error())?;
        // combined SE for the difference of independent estimates
        let mut se = SquareMatrix::zeros(d);
        for i in 0..d {
            for j in 0..d {
                se.set(i, j, (se_n.get(i, j).powi(2) + se_2n.get(i, j).powi(2)).sqrt());
            }
        }
        let cmp = MatrixComparison::evaluate(
            "cross_n_stability",
            emp_2n,
            emp_n,
            se,
            config.tolerances.cov_max_abs,
            config.tolerances.se_multiplier,
        );
        report.comparisons.push(cmp);
    }

    report.recompute_passed();
    report.runtime_seconds = started.elapsed().as_secs_f64();
    Ok(report)
}

/// One Monte Carlo pass of the subordination experiment at a given size.
fn subordination_pass(
    config: &ExperimentConfig,
    tau: usize,
    n: usize,
    replications: usize,
    seed: u64,
) -> Result<(MomentAccumulator, MomentAccumulator, SquareMatrix)> {
    let spec = &config.spec;
    let d = spec.dim();
    let sub = &config.subordination;
    // exact covariance of the rank-tau Hermite sums (diagonal by component
    // independence) drives the finite-n triangular normalizer
    let fact_tau: f64 = (1..=tau).map(|k| k as f64).product();
    let variances: Vec<f64> = (0..d).map(|i| fact_tau * hermite_sum_scale(spec, i, tau, n)).collect();
    let w_exact = triangular_normalizer(&SquareMatrix::diagonal(&variances))?;

    let sampler = GaussianSampler::with_cap(spec, n, config.gaussian_cap)?;
    let rule = GaussHermiteRule::new(sub.quad_order)?;
    let mut centers = Vec::with_capacity(d);
    for map in &sub.maps {
        centers.push(rule.expect(|x| map.eval(x))?);
    }
    let maps = sub.maps.clone();
    let per_rep: Vec<Vec<f64>> = replicate(replications, |rep| {
        let path = sampler.sample(seed, rep);
        let mut lead = vec![0.0; d];
        let mut full = vec![0.0; d];
        for k in 0..n {
            for i in 0..d {
                let x = path.value(k, i);
                lead[i] += hermite_poly(tau, x);
                full[i] += maps[i].eval(x) - centers[i];
            }
        }
        let mut out = w_exact.mul_vec(&lead);
        out.extend(w_exact.mul_vec(&full));
        out
    });

    let mut lead_acc = MomentAccumulator::new(d * d);
    let mut full_acc = MomentAccumulator::new(d * d);
    let mut buf = vec![0.0; d * d];
    for ys in &per_rep {
        for i in 0..d {
            for j in 0..d {
                buf[i * d + j] = ys[i] * ys[j];
            }
        }
        lead_acc.push(&buf);
        for i in 0..d {
            for j in 0..d {
                buf[i * d + j] = ys[d + i] * ys[d + j];
            }
        }
        full_acc.push(&buf);
    }
    Ok((lead_acc, full_acc, w_exact))
}

/// Sample-autocovariance experiment: the `sqrt(n)` Gaussian regime or the
/// operator-normalized bounded regime, over a ladder of sizes.
pub fn run_autocov(config: &ExperimentConfig) -> Result<ConvergenceReport> {
    let started = Instant::now();
    let spec = &config.spec;
    if spec.kind != ProcessKind::GaussianDiagonal {
        return Err(Error::Hypothesis(
            "the autocovariance experiment requires a gaussian_diagonal spec".into(),
        ));
    }
    let d = spec.dim();
    let all_hi = spec.memory.values().iter().all(|v| *v > 0.25 && *v < 0.5);
    let all_lo = spec.memory.values().iter().all(|v| *v > 0.0 && *v < 0.25);
    let regime = if all_hi {
        Regime::SqrtN
    } else if all_lo {
        Regime::Operator
    } else {
        return Err(Error::Hypothesis(format!(
            "memory parameters {:?} mix the two regimes (boundary 1/4)",
            spec.memory.values()
        )));
    };
    let mut n_list = config.n_list.clone();
    n_list.sort_unstable();
    if n_list.is_empty() {
        return Err(Error::Config("autocov requires a nonempty n_list".into()));
    }
    let lags = config.lags;
    let tol = &config.tolerances;

    let mut report = new_report(config);
    report.normalizers.insert(
        "operator_b_inv".into(),
        operator_normalizer(&spec.memory, *n_list.last().expect("nonempty")),
    );

    // per (n, h, entry) second moments, filled per size
    let mut moments: Vec<Vec<MomentAccumulator>> = Vec::with_capacity(n_list.len());
    // entry samples at the largest n for KS (sqrt-n regime)
    let mut ks_samples: Vec<Vec<Vec<f64>>> = Vec::new();

    for (ni, &n) in n_list.iter().enumerate() {
        let sampler = GaussianSampler::with_cap(spec, n + lags, config.gaussian_cap)?;
        let seed = config.seed;
        let per_rep: Vec<Vec<f64>> = replicate(config.replications, |rep| {
            let path = sampler.sample(seed, rep);
            let mut out = Vec::with_capacity((lags + 1) * d * d);
            for h in 0..=lags {
                let dev = normalized_autocov_deviation(&path, spec, h, n, config.truncation, regime)
                    .expect("regime validated");
                out.extend_from_slice(dev.data());
            }
            out
        });
        let mut accs: Vec<MomentAccumulator> =
            (0..=lags).map(|_| MomentAccumulator::new(d * d)).collect();
        let is_last = ni == n_list.len() - 1;
        let mut samples: Vec<Vec<f64>> = if is_last && regime == Regime::SqrtN {
            vec![Vec::with_capacity(per_rep.len()); (lags + 1) * d * d]
        } else {
            Vec::new()
        };
        let mut buf = vec![0.0; d * d];
        for ys in &per_rep {
            for h in 0..=lags {
                let slice = &ys[h * d * d..(h + 1) * d * d];
                for (b, v) in buf.iter_mut().zip(slice) {
                    *b = v * v;
                }
                accs[h].push(&buf);
                if is_last && regime == Regime::SqrtN {
                    for (e, v) in slice.iter().enumerate() {
                        samples[h * d * d + e].push(*v);
                    }
                }
            }
        }
        if is_last && regime == Regime::SqrtN {
            ks_samples = vec![samples];
        }

        // empirical second moments vs exact Isserlis values
        for h in 0..=lags {
            let mut exact = SquareMatrix::zeros(d);
            for l in 0..d {
                for m_i in 0..d {
                    let v = match regime {
                        Regime::SqrtN => sqrtn_dev_variance(spec, n, h, l, m_i)?,
                        Regime::Operator => operator_dev_second_moment(spec, n, h, l, m_i)?,
                    };
                    exact.set(l, m_i, v);
                }
            }
            let cmp = covariance_comparison(
                &format!("autocov_sq_n{}_h{}", n, h),
                &accs[h],
                exact,
                tol,
            );
            report.comparisons.push(cmp);
        }
        moments.push(accs);
    }

    match regime {
        Regime::SqrtN => {
            // variance ratios across consecutive sizes, per lag and entry
            for h in 0..=lags {
                for e in 0..d * d {
                    for ni in 0..n_list.len() - 1 {
                        let v1 = moments[ni][h].mean()[e];
                        let v2 = moments[ni + 1][h].mean()[e];
                        let ratio = if v1 > 0.0 { v2 / v1 } else { f64::NAN };
                        report.checks.push(Check::in_band(
                            format!(
                                "var_ratio_h{}_e{}_{}to{}",
                                h,
                                e,
                                n_list[ni],
                                n_list[ni + 1]
                            ),
                            ratio,
                            tol.variance_ratio_low,
                            tol.variance_ratio_high,
                        ));
                    }
                }
            }
            // entrywise KS at the largest n, standardized by the exact SD
            let n_last = *n_list.last().expect("nonempty");
            if let Some(samples) = ks_samples.first() {
                for h in 0..=lags {
                    for l in 0..d {
                        for m_i in 0..d {
                            let sd = sqrtn_dev_variance(spec, n_last, h, l, m_i)?.sqrt();
                            let std: Vec<f64> = samples[h * d * d + l * d + m_i]
                                .iter()
                                .map(|v| v / sd)
                                .collect();
                            let (stat, p) = ks_test_normal(&std);
                            report.ks.push(KsResult {
                                name: format!("entry_h{}_{}{}_n{}", h, l + 1, m_i + 1, n_last),
                                statistic: stat,
                                p_value: p,
                                p_min: tol.ks_p_min,
                                pass: p > tol.ks_p_min,
                            });
                        }
                    }
                }
            }
        }
        Regime::Operator => {
            // boundedness: max/min spread of second moments across the ladder
            for h in 0..=lags {
                for e in 0..d * d {
                    let vals: Vec<f64> = (0..n_list.len()).map(|ni| moments[ni][h].mean()[e]).collect();
                    let hi = vals.iter().cloned().fold(f64::MIN, f64::max);
                    let lo = vals.iter().cloned().fold(f64::MAX, f64::min);
                    let spread = if lo > 0.0 { hi / lo } else { f64::NAN };
                    report.checks.push(Check::below(
                        format!("second_moment_spread_h{}_e{}", h, e),
                        spread,
                        tol.second_moment_factor,
                    ));
                }
            }
        }
    }

    report.recompute_passed();
    report.runtime_seconds = started.elapsed().as_secs_f64();
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::MemoryParameters;

    fn base_config(kind: ExperimentKind, spec: ProcessSpec) -> ExperimentConfig {
        ExperimentConfig {
            experiment: kind,
            spec,
            n: 128,
            n_list: vec![64, 128],
            truncation: 1280,
            replications: 200,
            seed: 99,
            grid: vec![0.5, 1.0],
            lags: 1,
            subordination: SubordinationSettings {
                maps: vec![SubordinationMap::SquareMinusOne],
                l_max: 10,
                quad_order: 64,
                rank_tol: crate::hermite::RANK_TOL,
            },
            tolerances: Tolerances::default(),
            gaussian_cap: crate::simulate::DEFAULT_GAUSSIAN_CAP,
            stability_check: false,
            stability_replications: 100,
        }
    }

    #[test]
    fn clt_white_noise_smoke() {
        let spec = ProcessSpec::white_noise(2, crate::simulate::InnovationLaw::Rademacher).unwrap();
        let mut cfg = base_config(ExperimentKind::Clt, spec);
        cfg.replications = 400;
        let rep = run_clt(&cfg).unwrap();
        assert!(rep.passed, "{:?}", rep.summary_lines());
        // exact normalizer for white noise is n^{-1/2} I
        let inv = rep.normalizers.get("sigma_inv_sqrt").unwrap();
        assert!((inv.get(0, 0) - (128f64).powf(-0.5)).abs() < 1e-12);
    }

    #[test]
    fn clt_degenerate_spec_errors() {
        let mut spec = ProcessSpec::white_noise(2, crate::simulate::InnovationLaw::StandardNormal).unwrap();
        let singular = SquareMatrix::from_rows(&[vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap();
        spec.slowly_varying = spec.slowly_varying.with_j0(singular).unwrap();
        let cfg = base_config(ExperimentKind::Clt, spec);
        let err = run_clt(&cfg).unwrap_err();
        assert!(matches!(err, Error::Factorization(_)), "{err}");
    }

    #[test]
    fn clt_rejects_inadmissible_linear_spec() {
        let memory = MemoryParameters::new(vec![0.4, 0.2]).unwrap();
        let singular = SquareMatrix::from_rows(&[vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap();
        let sv = crate::model::SlowlyVaryingSpec::new(singular, SquareMatrix::identity(2)).unwrap();
        let spec = ProcessSpec::linear_lrd_unchecked(
            memory,
            sv,
            crate::simulate::InnovationLaw::StandardNormal,
        )
        .unwrap();
        let cfg = base_config(ExperimentKind::Clt, spec);
        assert!(matches!(run_clt(&cfg), Err(Error::Hypothesis(_))));
    }

    #[test]
    fn reports_identical_across_thread_counts() {
        let spec = ProcessSpec::white_noise(2, crate::simulate::InnovationLaw::StandardNormal).unwrap();
        let mut cfg = base_config(ExperimentKind::Clt, spec);
        cfg.replications = 150;
        let pool1 = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let pool4 = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        let r1 = pool1.install(|| run(&cfg)).unwrap();
        let r4 = pool4.install(|| run(&cfg)).unwrap();
        assert_eq!(r1.to_json().unwrap(), r4.to_json().unwrap());
    }

    #[test]
    fn subordination_smoke_and_tail() {
        let memory = MemoryParameters::new(vec![0.2, 0.1]).unwrap();
        let spec = ProcessSpec::gaussian_diagonal(memory, vec![0.5, 0.5]).unwrap();
        let mut cfg = base_config(ExperimentKind::Subordination, spec);
        cfg.subordination.maps =
            vec![SubordinationMap::SquareMinusOne, SubordinationMap::SquareMinusOne];
        cfg.n = 256;
        cfg.replications = 300;
        cfg.tolerances.cov_max_abs = 0.35; // finite-size smoke tolerance
        let rep = run_subordination(&cfg).unwrap();
        let tail = rep.checks.iter().find(|c| c.name == "reduction_tail_ratio").unwrap();
        assert!(tail.pass, "tail ratio {}", tail.value);
        assert!(tail.value > 0.5, "decay should be a power law, got {}", tail.value);
        assert!(rep.passed, "{:?}", rep.summary_lines());
    }

    #[test]
    fn subordination_hypothesis_guard() {
        // tau = 2 with d_1 = 0.3 violates tau d < 1/2
        let memory = MemoryParameters::new(vec![0.3, 0.1]).unwrap();
        let spec = ProcessSpec::gaussian_diagonal(memory, vec![0.5, 0.5]).unwrap();
        let mut cfg = base_config(ExperimentKind::Subordination, spec);
        cfg.subordination.maps =
            vec![SubordinationMap::SquareMinusOne, SubordinationMap::SquareMinusOne];
        assert!(matches!(run_subordination(&cfg), Err(Error::Hypothesis(_))));
    }

    #[test]
    fn autocov_mixed_regime_rejected() {
        let memory = MemoryParameters::new(vec![0.3, 0.1]).unwrap();
        let spec = ProcessSpec::gaussian_diagonal(memory, vec![0.5, 0.5]).unwrap();
        let cfg = base_config(ExperimentKind::Autocov, spec);
        let err = run_autocov(&cfg).unwrap_err();
        assert!(err.to_string().contains("regime"), "{err}");
    }

    #[test]
    fn autocov_operator_smoke() {
        let memory = MemoryParameters::new(vec![0.2, 0.15]).unwrap();
        let spec = ProcessSpec::gaussian_diagonal(memory, vec![0.5, 0.5]).unwrap();
        let mut cfg = base_config(ExperimentKind::Autocov, spec);
        cfg.n_list = vec![128, 256];
        cfg.replications = 300;
        cfg.tolerances.cov_max_abs = 0.5;
        cfg.tolerances.second_moment_factor = 1.6;
        let rep = run_autocov(&cfg).unwrap();
        assert!(rep.passed, "{:?}", rep.summary_lines());
    }

    #[test]
    fn report_json_roundtrip() {
        let spec = ProcessSpec::white_noise(1, crate::simulate::InnovationLaw::StandardNormal).unwrap();
        let mut cfg = base_config(ExperimentKind::Clt, spec);
        cfg.replications = 120;
        let rep = run_clt(&cfg).unwrap();
        let json = rep.to_json().unwrap();
        let back = ConvergenceReport::from_json(&json).unwrap();
        assert_eq!(json, back.to_json().unwrap());
        assert_eq!(rep.digest().unwrap(), back.digest().unwrap());
    }
}
