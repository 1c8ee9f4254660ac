//! Sample autocovariances, Isserlis fourth moments, the two normalization
//! regimes of the autocovariance limit theorem, and the operator-norma
//! covariance bound check.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matalg::SquareMatrix;
use crate::model::{theoretical_gamma, MemoryParameters, ProcessKind, ProcessSpec};
use crate::simulate::SamplePath;

/// Sample autocovariance `Gamma^_{n,h} = (1/n) sum_{k=1}^n X_k X_{k+h}'`,
/// uncentered (no mean subtraction).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AutocovarianceEstimate {
    pub h: usize,
    pub n: usize,
    pub matrix: SquareMatrix,
    /// Whether the theoretical `Gamma_h` has been subtracted.
    pub centered: bool,
}

/// The uncentered estimator; the path must contain at least `n + h` points.
pub fn sample_autocov(path: &SamplePath, h: usize, n: usize) -> Result<AutocovarianceEstimate> {
    if path.n < n + h {
        return Err(Error::Domain(format!(
            "path length {} is shorter than n + h = {}",
            path.n,
            n + h
        )));
    }
    if n == 0 {
        return Err(Error::Domain("effective sample size must be >= 1".into()));
    }
    let d = path.d;
    let mut m = SquareMatrix::zeros(d);
    for k in 0..n {
        let a = path.row(k);
        let b = path.row(k + h);
        for i in 0..d {
            for j in 0..d {
                m.set(i, j, m.get(i, j) + a[i] * b[j]);
            }
        }
    }
    Ok(AutocovarianceEstimate { h, n, matrix: m.scale(1.0 / n as f64), centered: false })
}

/// Centered deviation `Gamma^_{n,h} - Gamma_h`, with `Gamma_h` computed at
/// the same truncation as the simulation so both errors cancel to first
/// order.
pub fn centered_autocov(
    path: &SamplePath,
    spec: &ProcessSpec,
    h: usize,
    n: usize,
    m: usize,
) -> Result<AutocovarianceEstimate> {
    let est = sample_autocov(path, h, n)?;
    let gamma_h = theoretical_gamma(spec, h, m.max(h + 1))?;
    Ok(AutocovarianceEstimate {
        h,
        n,
        matrix: est.matrix.sub(&gamma_h),
        centered: true,
    })
}

/// Isserlis fourth moment of a zero-mean Gaussian vector:
/// `E[X_{i1} X_{i2} X_{i3} X_{i4}] = s_{12} s_{34} + s_{13} s_{24} + s_{14} s_{23}`.
pub fn isserlis_fourth(sigma: &SquareMatrix, i1: usize, i2: usize, i3: usize, i4: usize) -> Result<f64> {
    let d = sigma.dim();
    if [i1, i2, i3, i4].iter().any(|i| *i >= d) {
        return Err(Error::Domain("index out of range".into()));
    }
    if !sigma.is_symmetric(crate::matalg::SYM_TOL) {
        return Err(Error::Domain("covariance must be symmetric".into()));
    }
    Ok(sigma.get(i1, i2) * sigma.get(i3, i4)
        + sigma.get(i1, i3) * sigma.get(i2, i4)
        + sigma.get(i1, i4) * sigma.get(i2, i3))
}

/// Normalization regimes of the autocovariance limit theorem.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    /// All `d_i` in `(1/4, 1/2)`: Gaussian limit under `sqrt(n)` scaling.
    SqrtN,
    /// All `d_i` in `(0, 1/4)`: operator normalization.
    Operator,
}

/// Validates that the memory vector lies entirely in the regime's range.
pub fn check_regime(memory: &MemoryParameters, regime: Regime) -> Result<()> {
    for (i, d) in memory.values().iter().enumerate() {
        let ok = match regime {
            Regime::SqrtN => *d > 0.25 && *d < 0.5,
            Regime::Operator => *d > 0.0 && *d < 0.25,
        };
        if !ok {
            return Err(Error::Hypothesis(format!(
                "memory parameter d_{} = {d} is outside the {regime:?} regime",
                i + 1
            )));
        }
    }
    Ok(())
}

/// Normalized deviation of the sample autocovariance.
///
/// `SqrtN` regime: `sqrt(n) (Gamma^ - Gamma)`.
///
/// `Operator` regime: the operator sandwich applied around the *sum*
/// `sum_k (X_k X_{k+h}' - Gamma_h)`, i.e.
/// `B^{-1}(n) [n (Gamma^ - Gamma)] B^{-1}(n)` with entries
/// `n^{d_{max{l,r}}} ... n^{d_{max{t,m}}}`; sandwiching `Gamma^ - Gamma`
/// directly would scale like `n^{-1}` and degenerate.
pub fn normalized_autocov_deviation(
    path: &SamplePath,
    spec: &ProcessSpec,
    h: usize,
    n: usize,
    m: usize,
    regime: Regime,
) -> Result<SquareMatrix> {
    check_regime(&spec.memory, regime)?;
    let dev = centered_autocov(path, spec, h, n, m)?.matrix;
    match regime {
        Regime::SqrtN => Ok(dev.scale((n as f64).sqrt())),
        Regime::Operator => {
            let b = crate::normalize::operator_normalizer(&spec.memory, n);
            let p = b.scale((n as f64).sqrt()); // entries n^{d_max{l,m}}
            Ok(p.matmul(&dev.scale(n as f64)).matmul(&p).scale(1.0 / n as f64))
        }
    }
}

/// Exact covariance of sample-autocovariance entries for diagonal Gaussian
/// specs, by Isserlis sums over lags:
/// `Cov((G^_p)_{r1 t1}, (G^_q)_{r2 t2})
///  = (1/n) sum_{|u|<n} (1 - |u|/n) [ r_{r1 r2}(u) r_{t1 t2}(u + q - p)
///                                  + r_{r1 t2}(u + q) r_{t1 r2}(u - p) ]`.
pub fn autocov_entry_cov(
    spec: &ProcessSpec,
    n: usize,
    p: usize,
    q: usize,
    r1: usize,
    t1: usize,
    r2: usize,
    t2: usize,
) -> Result<f64> {
    if spec.kind != ProcessKind::GaussianDiagonal {
        return Err(Error::Domain("exact Isserlis sums require a gaussian_diagonal spec".into()));
    }
    let r_diag = spec.r_diag.as_ref().expect("gaussian spec carries r_diag");
    let r_of = |a: usize, b: usize, u: i64| -> f64 {
        if a != b {
            return 0.0;
        }
        let au = u.unsigned_abs();
        if au == 0 {
            1.0
        } else {
            r_diag[a] * (au as f64).powf(-2.0 * spec.memory.get(a))
        }
    };
    let nf = n as f64;
    let mut acc = 0.0;
    let (pi, qi) = (p as i64, q as i64);
    for u in -(n as i64 - 1)..=(n as i64 - 1) {
        let w = (1.0 - (u.abs() as f64) / nf) / nf;
        let t_a = r_of(r1, r2, u) * r_of(t1, t2, u + qi - pi);
        let t_b = r_of(r1, t2, u + qi) * r_of(t1, r2, u - pi);
        acc += w * (t_a + t_b);
    }
    Ok(acc)
}

/// Exact variance of the `(l, m)` entry of `sqrt(n) (Gamma^_h - Gamma_h)`.
pub fn sqrtn_dev_variance(spec: &ProcessSpec, n: usize, h: usize, l: usize, m: usize) -> Result<f64> {
    Ok(autocov_entry_cov(spec, n, h, h, l, m, l, m)? * n as f64)
}

/// Exact second moment of the `(l, m)` entry of the operator-normalized
/// deviation.
pub fn operator_dev_second_moment(
    spec: &ProcessSpec,
    n: usize,
    h: usize,
    l: usize,
    m: usize,
) -> Result<f64> {
    let d = spec.dim();
    let nf = n as f64;
    let mut acc = 0.0;
    for r1 in 0..d {
        for t1 in 0..d {
            for r2 in 0..d {
                for t2 in 0..d {
                    let e = spec.memory.index_max(l, r1)
                        + spec.memory.index_max(t1, m)
                        + spec.memory.index_max(l, r2)
                        + spec.memory.index_max(t2, m);
                    let cov = autocov_entry_cov(spec, n, h, h, r1, t1, r2, t2)?;
                    acc += nf.powf(e) * cov;
                }
            }
        }
    }
    Ok(acc)
}

/// Report of the componentwise covariance bound for operator-normalized
/// sample autocovariances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovBoundReport {
    pub n_values: Vec<usize>,
    pub p: usize,
    pub q: usize,
    /// Exact covariance operator applied to `T`, per `n`.
    pub cov_applied: Vec<SquareMatrix>,
    /// Candidate bound `B R*' B' |T| B' R* B' + transpose` (without the
    /// constant), with `B` the upper-triangular all-ones matrix.
    pub bound_applied: SquareMatrix,
    /// Self-calibrated constant: twice the componentwise ratio at the
    /// smallest `n`.
    pub c_calibrated: f64,
    /// `cov <= C * bound` componentwise at every `n`.
    pub componentwise_ok: bool,
}

/// Verifies the existence-style covariance bound at finite `n`: assembles the
/// exact Isserlis covariance of the operator-normalized estimates, the
/// structural bound, and a componentwise comparison with a constant
/// calibrated at the smallest `n`.
pub fn autocov_cov_bound_check(
    spec: &ProcessSpec,
    n_values: &[usize],
    p: usize,
    q: usize,
    t_mat: &SquareMatrix,
) -> Result<CovBoundReport> {
    check_regime(&spec.memory, Regime::Operator)?;
    if spec.kind != ProcessKind::GaussianDiagonal {
        return Err(Error::Domain("bound check requires a gaussian_diagonal spec".into()));
    }
    let d = spec.dim();
    if t_mat.dim() != d {
        return Err(Error::Domain("T dimension mismatch".into()));
    }
    if n_values.is_empty() {
        return Err(Error::Domain("need at least one n".into()));
    }

    // bound side: B R*' B' |T| B' R* B' + transpose, entrywise absolute T
    let r = spec.r_matrix()?;
    let mut r_star = SquareMatrix::zeros(d);
    for i in 0..d {
        for j in 0..d {
            r_star.set(i, j, r.entries.get(i, j).abs());
        }
    }
    let mut b_ones = SquareMatrix::zeros(d);
    for l in 0..d {
        for i in l..d {
            b_ones.set(l, i, 1.0);
        }
    }
    let mut t_abs = SquareMatrix::zeros(d);
    for i in 0..d {
        for j in 0..d {
            t_abs.set(i, j, t_mat.get(i, j).abs());
        }
    }
    let left = b_ones.matmul(&r_star.transpose()).matmul(&b_ones.transpose());
    let right = b_ones.transpose().matmul(&r_star).matmul(&b_ones.transpose());
    let one_sided = left.matmul(&t_abs).matmul(&right);
    let bound_applied = one_sided.add(&one_sided.transpose());

    // exact covariance applied to T, per n:
    // M(T)_{i1 i2} = sum over sandwich indices of
    //   n^{(sum of four d_max exponents)} T_{s r3} Cov(...)
    let mut cov_applied = Vec::with_capacity(n_values.len());
    for &n in n_values {
        let nf = n as f64;
        let mut m_t = SquareMatrix::zeros(d);
        for i1 in 0..d {
            for i2 in 0..d {
                let mut acc = 0.0;
                for s in 0..d {
                    for r3 in 0..d {
                        let t_val = t_mat.get(s, r3);
                        if t_val == 0.0 {
                            continue;
                        }
                        for r1 in 0..d {
                            for r2 in 0..d {
                                for j1 in 0..d {
                                    for j2 in 0..d {
                                        let e = spec.memory.index_max(s, r1)
                                            + spec.memory.index_max(r2, r3)
                                            + spec.memory.index_max(i1, j1)
                                            + spec.memory.index_max(j2, i2);
                                        let cov =
                                            autocov_entry_cov(spec, n, p, q, r1, r2, j1, j2)?;
                                        if cov != 0.0 {
                                            acc += nf.powf(e) * cov * t_val;
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
                m_t.set(i1, i2, acc);
            }
        }
        cov_applied.push(m_t);
    }

    // self-calibrated constant at the smallest n
    let mut ratio0 = 0.0f64;
    for i in 0..d {
        for j in 0..d {
            let b = bound_applied.get(i, j);
            let c = cov_applied[0].get(i, j).abs();
            if b > 0.0 {
                ratio0 = ratio0.max(c / b);
            } else if c > 1e-12 {
                ratio0 = f64::INFINITY;
            }
        }
    }
    let c_calibrated = if ratio0.is_finite() { 2.0 * ratio0 } else { f64::INFINITY };
    let mut ok = c_calibrated.is_finite();
    if ok {
        for m_t in &cov_applied {
            for i in 0..d {
                for j in 0..d {
                    if m_t.get(i, j).abs() > c_calibrated * bound_applied.get(i, j) + 1e-12 {
                        ok = false;
                    }
                }
            }
        }
    }
    Ok(CovBoundReport {
        n_values: n_values.to_vec(),
        p,
        q,
        cov_applied,
        bound_applied,
        c_calibrated,
        componentwise_ok: ok,
    })
}
