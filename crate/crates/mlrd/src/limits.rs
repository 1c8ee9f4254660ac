//! Limit-law descriptors: the operator fractional Brownian motion (OFBM)
//! cross-covariance of the functional CLT, operator self-similarity checks,
//! the limit kernel `f_{tau, d, t}`, and the scalar constant `beta_{tau, d}`.

use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma as gamma_fn;

use crate::error::{Error, Result};
use crate::matalg::{diag_power, DiagonalExponent, SquareMatrix};
use crate::model::{MemoryParameters, RMatrix};
use crate::normalize::{asymptotic_normalization, AsymptoticNormalization};

/// OFBM limit covariance data: exponent `H = I - D`, the scale matrix
/// `R~(t)` on both sign branches, and the upper-triangular prefactor `A`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OfbmCovariance {
    pub memory: MemoryParameters,
    /// `R~` for positive arguments: entries `R_ij / ((1-d_i-d_j)(2-d_i-d_j))`.
    pub r_tilde_pos: SquareMatrix,
    /// `R~` for negative arguments: entries `R_ji / ((1-d_i-d_j)(2-d_i-d_j))`,
    /// i.e. the transpose of the positive branch.
    pub r_tilde_neg: SquareMatrix,
    /// Upper-triangular prefactor of the limit `A B_H(t)`; from the Lemma's
    /// normalization with `tau = 1`.
    pub a_factor: SquareMatrix,
}

/// Builds the FCLT limit descriptor for a given `R` and memory vector.
pub fn ofbm_covariance(r: &RMatrix, memory: &MemoryParameters) -> Result<OfbmCovariance> {
    let d = memory.dim();
    let mut pos = SquareMatrix::zeros(d);
    for i in 0..d {
        for j in 0..d {
            let s = memory.get(i) + memory.get(j);
            pos.set(i, j, r.entries.get(i, j) / ((1.0 - s) * (2.0 - s)));
        }
    }
    let neg = pos.transpose();
    let norm: AsymptoticNormalization = asymptotic_normalization(r, memory, 1)?;
    Ok(OfbmCovariance { memory: memory.clone(), r_tilde_pos: pos, r_tilde_neg: neg, a_factor: norm.a_factor })
}

impl OfbmCovariance {
    /// `t^{I-D}` with the convention `0^{positive} = 0`.
    fn t_power(&self, t: f64) -> SquareMatrix {
        let d = self.memory.dim();
        if t == 0.0 {
            return SquareMatrix::zeros(d);
        }
        let expo: Vec<f64> = self.memory.values().iter().map(|di| 1.0 - di).collect();
        diag_power(&DiagonalExponent::new(expo).expect("finite exponents"), t)
            .expect("positive base")
    }
}

/// Cross-covariance `E[(A B_H(t)) (A B_H(u))']` of the OFBM limit:
///
/// `A (t^H R~ t^H + u^H R~' u^H - |t-u|^H R~(t-u) |t-u|^H) A'`,
///
/// where the third term selects the sign branch of `R~` and vanishes at
/// `t = u` (the `|t-u|^H` prefactor is zero there, so the branch is never
/// evaluated). The transpose in the `u` slot is what makes
/// `C(t,u)' = C(u,t)` hold for non-symmetric `R`.
pub fn ofbm_cross_cov(cov: &OfbmCovariance, t: f64, u: f64) -> Result<SquareMatrix> {
    for v in [t, u] {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::Domain(format!("time point {v} outside [0, 1]")));
        }
    }
    let tp = cov.t_power(t);
    let up = cov.t_power(u);
    let mut inner = tp.matmul(&cov.r_tilde_pos).matmul(&tp);
    inner = inner.add(&up.matmul(&cov.r_tilde_pos.transpose()).matmul(&up));
    if t != u {
        let dp = cov.t_power((t - u).abs());
        let branch = if t > u { &cov.r_tilde_pos } else { &cov.r_tilde_neg };
        inner = inner.sub(&dp.matmul(branch).matmul(&dp));
    }
    Ok(cov.a_factor.matmul(&inner).matmul(&cov.a_factor.transpose()))
}

/// Operator self-similarity residual
/// `|| C(at, au) - M C(t, u) M' ||_max` with `M = A a^H A^{-1}`.
/// An exact identity of the covariance; the residual is numerical noise.
pub fn self_similarity_residual(cov: &OfbmCovariance, a: f64, t: f64, u: f64) -> Result<f64> {
    if !(a > 0.0) {
        return Err(Error::Domain(format!("scaling factor a = {a} must be positive")));
    }
    if a * t > 1.0 + 1e-12 || a * u > 1.0 + 1e-12 {
        return Err(Error::Domain("scaled times must stay within [0, 1]".into()));
    }
    let expo: Vec<f64> = cov.memory.values().iter().map(|di| 1.0 - di).collect();
    let a_h = diag_power(&DiagonalExponent::new(expo)?, a)?;
    let a_inv = crate::matalg::invert_upper_triangular(&cov.a_factor)
        .map_err(|_| Error::Factorization("a_factor is singular".into()))?;
    let m = cov.a_factor.matmul(&a_h).matmul(&a_inv);
    let lhs = ofbm_cross_cov(cov, a * t, a * u)?;
    let rhs = m.matmul(&ofbm_cross_cov(cov, t, u)?).matmul(&m.transpose());
    Ok(lhs.max_abs_diff(&rhs))
}

/// The limit kernel of the subordination theorem:
/// `f_{tau, d, t}(x) = (e^{i t s} - 1) / (i s) * prod_r |x_r|^{d - 1/2}`
/// with `s = sum_j x_j`; the first factor takes its limit value `t` at
/// `s = 0`, and any `x_r = 0` is a (square-integrable) singularity reported
/// as a domain error.
pub fn limit_kernel_f(tau: usize, d_m: f64, t: f64, x: &[f64]) -> Result<Complex64> {
    if x.len() != tau {
        return Err(Error::Domain(format!("kernel expects tau = {tau} arguments, got {}", x.len())));
    }
    if !(tau as f64 * d_m < 0.5) {
        return Err(Error::Hypothesis(format!("tau d = {} must be below 1/2", tau as f64 * d_m)));
    }
    let mut amp = 1.0f64;
    for xr in x {
        if *xr == 0.0 {
            return Err(Error::Domain("kernel singularity: some x_r = 0".into()));
        }
        amp *= xr.abs().powf(d_m - 0.5);
    }
    let s: f64 = x.iter().sum();
    let first = if s == 0.0 {
        Complex64::new(t, 0.0)
    } else {
        // (e^{its} - 1) / (is)
        let num = Complex64::new((t * s).cos() - 1.0, (t * s).sin());
        num / Complex64::new(0.0, s)
    };
    Ok(first * amp)
}

/// The normalization constant of the scalar rank-`tau` limit:
/// `beta_{tau,d} = ((1 - tau d)(1 - 2 tau d) / (tau! (2 Gamma(2d) sin(pi(1/2 - d)))^tau))^{1/2}`.
pub fn beta_constant(tau: usize, d: f64) -> Result<f64> {
    if !(d > 0.0 && d < 0.5) {
        return Err(Error::Domain(format!("d = {d} must lie in (0, 1/2)")));
    }
    let td = tau as f64 * d;
    if !(td < 0.5) {
        return Err(Error::Domain(format!(
            "tau d = {td} >= 1/2: the factor (1 - 2 tau d) is not positive"
        )));
    }
    let mut fact = 1.0;
    for k in 2..=tau {
        fact *= k as f64;
    }
    let base = 2.0 * gamma_fn(2.0 * d) * (std::f64::consts::PI * (0.5 - d)).sin();
    let val = (1.0 - td) * (1.0 - 2.0 * td) / (fact * base.powi(tau as i32));
    Ok(val.sqrt())
}

/// Descriptor of the rank-`tau` subordination limit marginals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimitLaw {
    pub tau: usize,
    pub memory: MemoryParameters,
    pub beta: Vec<f64>,
    pub hermite_lead: Vec<f64>,
    pub r_diag: Vec<f64>,
}

impl LimitLaw {
    pub fn new(
        tau: usize,
        memory: &MemoryParameters,
        hermite_lead: Vec<f64>,
        r_diag: Vec<f64>,
    ) -> Result<Self> {
        let beta: Result<Vec<f64>> =
            memory.values().iter().map(|d| beta_constant(tau, *d)).collect();
        Ok(Self { tau, memory: memory.clone(), beta: beta?, hermite_lead, r_diag })
    }

    /// Column-scaled prefactor of the subordination limit:
    /// the FCLT `a_factor` with column `i` multiplied by
    /// `h_{tau,i} R_ii^{tau/2} beta_{tau,d_i}`.
    pub fn prefactor(&self, fclt_a: &SquareMatrix) -> SquareMatrix {
        let d = self.memory.dim();
        let mut out = fclt_a.clone();
        for i in 0..d {
            let s = self.hermite_lead[i]
                * self.r_diag[i].abs().powf(self.tau as f64 / 2.0)
                * self.beta[i];
            for l in 0..d {
                out.set(l, i, out.get(l, i) * s);
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{limiting_r, MemoryParameters, ProcessSpec, SlowlyVaryingSpec};
    use crate::simulate::InnovationLaw;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn scalar_cov(d1: f64) -> OfbmCovariance {
        let memory = MemoryParameters::new(vec![d1]).unwrap();
        let sv = SlowlyVaryingSpec::new(SquareMatrix::identity(1), SquareMatrix::identity(1)).unwrap();
        let spec = ProcessSpec::linear_lrd(memory.clone(), sv, InnovationLaw::StandardNormal).unwrap();
        let r = limiting_r(&spec).unwrap();
        ofbm_covariance(&r, &memory).unwrap()
    }

    fn seeded_cov(dim: usize, seed: u64) -> OfbmCovariance {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        loop {
            let mut ds: Vec<f64> = (0..dim).map(|_| 0.05 + 0.4 * rng.random::<f64>()).collect();
            ds.sort_by(|a, b| b.total_cmp(a));
            if ds.windows(2).any(|w| w[0] - w[1] < 0.03) {
                continue;
            }
            let memory = MemoryParameters::new(ds).unwrap();
            let mut ap = SquareMatrix::identity(dim);
            let mut am = SquareMatrix::identity(dim);
            for i in 0..dim {
                for j in 0..dim {
                    ap.set(i, j, ap.get(i, j) + 0.25 * (rng.random::<f64>() - 0.5));
                    am.set(i, j, am.get(i, j) + 0.25 * (rng.random::<f64>() - 0.5));
                }
            }
            let sv = SlowlyVaryingSpec::new(ap, am).unwrap();
            let Ok(spec) = ProcessSpec::linear_lrd(memory.clone(), sv, InnovationLaw::StandardNormal)
            else {
                continue;
            };
            let r = limiting_r(&spec).unwrap();
            if let Ok(cov) = ofbm_covariance(&r, &memory) {
                return cov;
            }
        }
    }

    #[test]
    fn zero_time_gives_zero_matrix() {
        let cov = seeded_cov(2, 1);
        let c = ofbm_cross_cov(&cov, 0.0, 0.0).unwrap();
        assert_eq!(c.max_abs(), 0.0);
    }

    #[test]
    fn equal_times_drop_third_term() {
        let cov = seeded_cov(2, 2);
        let c = ofbm_cross_cov(&cov, 0.6, 0.6).unwrap();
        let tp = cov.t_power(0.6);
        let sym = cov.r_tilde_pos.add(&cov.r_tilde_pos.transpose());
        let expect = cov
            .a_factor
            .matmul(&tp.matmul(&sym).matmul(&tp))
            .matmul(&cov.a_factor.transpose());
        assert!(c.max_abs_diff(&expect) < 1e-14);
        // proper covariance: symmetric
        assert!(c.max_abs_diff(&c.transpose()) < 1e-12);
    }

    #[test]
    fn scalar_case_matches_fbm_formula() {
        let d1 = 0.3;
        let cov = scalar_cov(d1);
        let h = 1.0 - d1;
        let rt = cov.r_tilde_pos.get(0, 0);
        let a2 = cov.a_factor.get(0, 0).powi(2);
        for (t, u) in [(0.3, 0.8), (0.5, 0.5), (1.0, 0.2)] {
            let c = ofbm_cross_cov(&cov, t, u).unwrap().get(0, 0);
            let expect = a2
                * rt
                * (t.powf(2.0 * h) + u.powf(2.0 * h) - (t - u).abs().powf(2.0 * h));
            assert!((c - expect).abs() < 1e-12, "({t},{u}): {c} vs {expect}");
        }
        // with the Lemma's tau=1 prefactor, C(1,1) = I
        let c11 = ofbm_cross_cov(&cov, 1.0, 1.0).unwrap().get(0, 0);
        assert!((c11 - 1.0).abs() < 1e-10);
    }

    #[test]
    fn transpose_consistency_for_asymmetric_r() {
        let cov = seeded_cov(3, 5);
        let c = ofbm_cross_cov(&cov, 0.7, 0.25).unwrap();
        let ct = ofbm_cross_cov(&cov, 0.25, 0.7).unwrap();
        assert!(c.transpose().max_abs_diff(&ct) < 1e-12);
    }

    #[test]
    fn diagonal_covariance_is_psd_on_grid() {
        let cov = seeded_cov(2, 7);
        for g in 1..=20 {
            let t = g as f64 / 20.0;
            let c = ofbm_cross_cov(&cov, t, t).unwrap();
            // 2x2 PSD: nonnegative diagonal and determinant
            assert!(c.get(0, 0) >= 0.0 && c.get(1, 1) >= 0.0);
            assert!(c.determinant() >= -1e-12);
        }
    }

    #[test]
    fn stationary_increments_identity() {
        let cov = seeded_cov(3, 11);
        for (t, u) in [(0.9, 0.4), (0.6, 0.1), (1.0, 0.35)] {
            let ctt = ofbm_cross_cov(&cov, t, t).unwrap();
            let cuu = ofbm_cross_cov(&cov, u, u).unwrap();
            let ctu = ofbm_cross_cov(&cov, t, u).unwrap();
            let cut = ofbm_cross_cov(&cov, u, t).unwrap();
            let lhs = ctt.add(&cuu).sub(&ctu).sub(&cut);
            let dp = cov.t_power((t - u).abs());
            let sym = cov.r_tilde_pos.add(&cov.r_tilde_pos.transpose());
            let rhs = cov
                .a_factor
                .matmul(&dp.matmul(&sym).matmul(&dp))
                .matmul(&cov.a_factor.transpose());
            assert!(lhs.max_abs_diff(&rhs) < 1e-10);
        }
    }

    #[test]
    fn self_similarity_trivial_and_seeded() {
        let cov = seeded_cov(2, 13);
        // a = 1: the identity is exact, residual at rounding level
        assert!(self_similarity_residual(&cov, 1.0, 0.4, 0.9).unwrap() <= 1e-14);
        assert_eq!(self_similarity_residual(&cov, 0.5, 0.0, 0.0).unwrap(), 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for trial in 0..100 {
            let cov = seeded_cov(2, 100 + trial);
            let t: f64 = rng.random();
            let u: f64 = rng.random();
            let a: f64 = 0.1 + 0.9 * rng.random::<f64>() / t.max(u).max(0.1);
            let a = a.min(1.0 / t.max(u).max(1e-9)).min(2.0);
            let r = self_similarity_residual(&cov, a, t, u).unwrap();
            assert!(r < 1e-10, "residual {r} at trial {trial}");
        }
    }

    #[test]
    fn kernel_values_and_singularities() {
        // t = 0 gives 0
        let v = limit_kernel_f(2, 0.2, 0.0, &[0.5, -0.3]).unwrap();
        assert!(v.norm() < 1e-15);
        // s -> 0 limit equals t * prod |x_r|^{d - 1/2}
        let v = limit_kernel_f(2, 0.2, 0.7, &[0.4, -0.4]).unwrap();
        let amp = 0.4f64.powf(-0.3) * 0.4f64.powf(-0.3);
        assert!((v - Complex64::new(0.7 * amp, 0.0)).norm() < 1e-12);
        // polar-form oracle: (e^{i theta} - 1)/(i theta) with theta = t s
        let (t, dm, x) = (1.0, 0.2, [0.5, -0.3]);
        let v = limit_kernel_f(2, dm, t, &x).unwrap();
        let s: f64 = x.iter().sum();
        let theta = t * s;
        // (e^{i theta} - 1)/(i s) = (sin(theta) + i(1 - cos(theta))) / s
        let oracle = Complex64::new(theta.sin(), 1.0 - theta.cos()) / s
            * x.iter().map(|v| v.abs().powf(dm - 0.5)).product::<f64>();
        assert!((v - oracle).norm() < 1e-12);
        // singularity at x_r = 0
        assert!(limit_kernel_f(2, 0.2, 1.0, &[0.0, 1.0]).is_err());
        // hypothesis guard
        assert!(limit_kernel_f(3, 0.2, 1.0, &[1.0, 1.0, 1.0]).is_err());
    }

    #[test]
    fn beta_constant_values() {
        // positivity over a grid of admissible (tau, d)
        for tau in 1..=4usize {
            for k in 1..10 {
                let d = 0.04 * k as f64;
                if tau as f64 * d < 0.5 {
                    let b = beta_constant(tau, d).unwrap();
                    assert!(b > 0.0 && b.is_finite());
                }
            }
        }
        // direct evaluation at tau = 1, d = 0.25: the base is
        // 2 Gamma(1/2) sin(pi/4) = sqrt(2 pi)
        let b = beta_constant(1, 0.25).unwrap();
        let expect = ((0.75 * 0.5) / (2.0 * std::f64::consts::PI).sqrt()).sqrt();
        assert!((b - expect).abs() < 1e-12);
        // monotone decrease in tau at fixed d = 0.1
        let b1 = beta_constant(1, 0.1).unwrap();
        let b2 = beta_constant(2, 0.1).unwrap();
        let b3 = beta_constant(3, 0.1).unwrap();
        assert!(b1 > b2 && b2 > b3);
        // domain error at tau d >= 1/2
        assert!(beta_constant(3, 0.2).is_err());
    }
}
