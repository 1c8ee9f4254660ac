//! The three matrix normalizations: exact `Sigma_n^{-1}` for the CLT,
//! the asymptotic triangular `A(n)^{-1}` for the FCLT and subordination
//! limits, and the operator sandwich `B^{-1}(n)` for sample autocovariances.
//!
//! Convention note: under the enforced ordering `d_1 > ... > d_d`, the
//! exponent `d_{max{l,m}}` always refers to the larger *index* (hence the
//! smaller memory value). The triangular factor `a` is stored with its signs
//! baked in: `a_factor` is the upper-triangular matrix `W` with positive
//! diagonal and `W' W = X^{-1}`, which is exactly what makes
//! `A(n)^{-1} Sigma_n^2 A(n)^{-1 T} -> I` under the Lemma scaling.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matalg::{invert_upper_triangular, sym_inv_sqrt, upper_factor, SquareMatrix};
use crate::model::{
    coefficient_table, theoretical_gamma_upto, MemoryParameters, ProcessKind, ProcessSpec, RMatrix,
};

/// Exact normalization data for `Sigma_n^{-1} S_n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExactNormalization {
    pub n: usize,
    /// `Sigma_n^2 = E(S_n S_n')` of the truncated process.
    pub sigma_sq: SquareMatrix,
    /// Symmetric inverse square root of `sigma_sq`.
    pub inv_sqrt: SquareMatrix,
    /// Column-variance diagnostics `(omega^n_{pq})^2 = sum_j (sum_k a^{j-k}_{pq})^2`.
    pub column_variances: SquareMatrix,
}

/// Covariance of the partial sum, assembled from the coefficient double sum
/// (the `(l, m)` entry is `sum_q sum_j (sum_k a^{j-k}_{lq})(sum_k a^{j-k}_{mq})`).
pub fn exact_sigma_sq(spec: &ProcessSpec, n: usize, m: usize) -> Result<SquareMatrix> {
    Ok(sigma_sq_with_omega(spec, n, m)?.0)
}

fn sigma_sq_with_omega(spec: &ProcessSpec, n: usize, m: usize) -> Result<(SquareMatrix, SquareMatrix)> {
    let d = spec.dim();
    match spec.kind {
        ProcessKind::WhiteNoise => {
            let a0 = &spec.slowly_varying.j0_coefficient;
            let sq = a0.matmul(&a0.transpose()).scale(n as f64);
            let mut omega = SquareMatrix::zeros(d);
            for p in 0..d {
                for q in 0..d {
                    omega.set(p, q, n as f64 * a0.get(p, q) * a0.get(p, q));
                }
            }
            Ok((sq, omega))
        }
        ProcessKind::LinearLrd => {
            if m < n {
                return Err(Error::Config(format!(
                    "truncation M = {m} must be at least n = {n}"
                )));
            }
            // cumulative sums of each channel: C_pq(r) = sum_{s <= r} a^s_{pq}
            let tables = coefficient_table(spec, m);
            let len = 2 * m + 1;
            let mut cums: Vec<Vec<f64>> = Vec::with_capacity(d * d);
            for t in &tables {
                let mut c = Vec::with_capacity(len + 1);
                c.push(0.0);
                let mut acc = 0.0;
                for v in t {
                    acc += v;
                    c.push(acc);
                }
                cums.push(c); // c[idx] = sum over j in [-M, idx - 1 - M]
            }
            // S_pq(j) = C(j - 1) - C(j - n - 1); j runs over [1 - M, n + M]
            let j_lo = -(m as i64) + 1 - n as i64; // below any nonzero S
            let _ = j_lo;
            let window = |c: &[f64], j: i64| -> f64 {
                let clamp = |r: i64| -> f64 {
                    if r < -(m as i64) {
                        0.0
                    } else if r > m as i64 {
                        c[len]
                    } else {
                        c[(r + m as i64 + 1) as usize]
                    }
                };
                clamp(j - 1) - clamp(j - n as i64 - 1)
            };
            let mut sq = SquareMatrix::zeros(d);
            let mut omega = SquareMatrix::zeros(d);
            let j_range = (1 - m as i64)..=(n as i64 + m as i64);
            // accumulate per j to keep a single pass over the big range
            for j in j_range {
                for p in 0..d {
                    for q in 0..d {
                        let s_pq = window(&cums[p * d + q], j);
                        omega.set(p, q, omega.get(p, q) + s_pq * s_pq);
                        for l in 0..=p {
                            let s_lq = window(&cums[l * d + q], j);
                            sq.set(p, l, sq.get(p, l) + s_pq * s_lq);
                        }
                    }
                }
            }
            for p in 0..d {
                for l in 0..p {
                    sq.set(l, p, sq.get(p, l));
                }
            }
            Ok((sq, omega))
        }
        ProcessKind::GaussianDiagonal => Err(Error::Config(
            "exact_sigma_sq applies to linear or white-noise specs".into(),
        )),
    }
}

/// The same covariance assembled through the autocovariance route
/// `n gamma(0) + sum_{k=1}^{n-1} (n-k)(gamma(k) + gamma(k)')`.
/// Agrees with `exact_sigma_sq` to rounding because both use the same
/// truncated coefficients.
pub fn exact_sigma_sq_via_gamma(spec: &ProcessSpec, n: usize, m: usize) -> Result<SquareMatrix> {
    if spec.kind == ProcessKind::LinearLrd && m < n {
        return Err(Error::Config(format!("truncation M = {m} must be at least n = {n}")));
    }
    let gams = theoretical_gamma_upto(spec, n - 1, m.max(n))?;
    let mut sq = gams[0].scale(n as f64);
    for (k, g) in gams.iter().enumerate().skip(1) {
        let w = (n - k) as f64;
        sq = sq.add(&g.add(&g.transpose()).scale(w));
    }
    Ok(sq)
}

/// Builds the full exact normalization for a spec, verifying the probe
/// identity `Sigma_n^{-1} Sigma_n^2 Sigma_n^{-1} = I` to 1e-8.
pub fn exact_normalization(spec: &ProcessSpec, n: usize, m: usize) -> Result<ExactNormalization> {
    let (sigma_sq, column_variances) = sigma_sq_with_omega(spec, n, m)?;
    let inv_sqrt = exact_normalizer(&sigma_sq)?;
    Ok(ExactNormalization { n, sigma_sq, inv_sqrt, column_variances })
}

/// Symmetric inverse square root of `Sigma_n^2`, with the variance identity
/// verified on the matrix level (`t' M Sigma^2 M' t = t' t` for all probes).
pub fn exact_normalizer(sigma_sq: &SquareMatrix) -> Result<SquareMatrix> {
    let m = sym_inv_sqrt(sigma_sq).map_err(|e| {
        Error::Factorization(format!(
            "partial-sum covariance is not positive definite \
             (a direction has Var(a'X) = 0?): {e}"
        ))
    })?;
    let probe = m.matmul(sigma_sq).matmul(&m);
    let err = probe.max_abs_diff(&SquareMatrix::identity(sigma_sq.dim()));
    if err > 1e-8 {
        return Err(Error::Factorization(format!(
            "normalizer probe identity violated: max-abs deviation {err:.3e}"
        )));
    }
    Ok(m)
}

/// Asymptotic normalization data of the Lemma-form sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AsymptoticNormalization {
    pub tau: usize,
    /// The limit matrix `X` with entries
    /// `tau! / ((2 - tau(d_i+d_j))(1 - tau(d_i+d_j))) (R_ij^tau + R_ji^tau)`.
    pub x_matrix: SquareMatrix,
    /// Upper-triangular factor `W` with positive diagonal and `W' W = X^{-1}`.
    pub a_factor: SquareMatrix,
    pub memory: MemoryParameters,
}

/// The Lemma's `X` matrix.
pub fn x_matrix(r: &RMatrix, memory: &MemoryParameters, tau: usize) -> Result<SquareMatrix> {
    if tau == 0 {
        return Err(Error::Domain("Hermite rank tau must be >= 1".into()));
    }
    let d = memory.dim();
    if r.entries.dim() != d {
        return Err(Error::Domain("R/memory dimension mismatch".into()));
    }
    let tau_f = tau as f64;
    let mut fact = 1.0;
    for i in 2..=tau {
        fact *= i as f64;
    }
    let mut x = SquareMatrix::zeros(d);
    for i in 0..d {
        for j in 0..d {
            let s = tau_f * (memory.get(i) + memory.get(j));
            if s >= 1.0 {
                return Err(Error::Domain(format!(
                    "tau (d_{} + d_{}) = {s} >= 1: outside the Lemma's domain",
                    i + 1,
                    j + 1
                )));
            }
            let rij = r.entries.get(i, j).powi(tau as i32);
            let rji = r.entries.get(j, i).powi(tau as i32);
            x.set(i, j, fact / ((2.0 - s) * (1.0 - s)) * (rij + rji));
        }
    }
    Ok(x)
}

/// Builds the asymptotic normalization: `a_factor = upper_factor(X)^{-1}`,
/// so `a_factor' a_factor = X^{-1}` with `a_factor` upper triangular.
pub fn asymptotic_normalization(
    r: &RMatrix,
    memory: &MemoryParameters,
    tau: usize,
) -> Result<AsymptoticNormalization> {
    let x = x_matrix(r, memory, tau)?;
    let u = upper_factor(&x)?;
    let a_factor = invert_upper_triangular(&u)?;
    Ok(AsymptoticNormalization { tau, x_matrix: x, a_factor, memory: memory.clone() })
}

/// The normalization matrix `A^{-1}(n)`: entry `(l, m)` is
/// `n^{tau d_{max{l,m}} - 1} a_{lm}`, zero below the diagonal.
pub fn asymptotic_normalizer(norm: &AsymptoticNormalization, n: usize) -> SquareMatrix {
    let d = norm.memory.dim();
    let nf = n as f64;
    let tau = norm.tau as f64;
    let mut out = SquareMatrix::zeros(d);
    for l in 0..d {
        for m in 0..d {
            let a = norm.a_factor.get(l, m);
            if a != 0.0 {
                out.set(l, m, nf.powf(tau * norm.memory.index_max(l, m) - 1.0) * a);
            }
        }
    }
    out
}

/// Finite-n triangular normalizer: the upper-triangular `W(n)` with positive
/// diagonal and `W(n) Sigma^2 W(n)' = I` exactly.
///
/// This is the concrete realization of the Lemma-form sequence used by the
/// Monte Carlo experiments: diagonal scaling passes through the factorization,
/// so `W(n)` is entrywise asymptotically equivalent to `asymptotic_normalizer`
/// while killing the finite-n scale error completely.
pub fn triangular_normalizer(sigma_sq: &SquareMatrix) -> Result<SquareMatrix> {
    let u = upper_factor(sigma_sq)?;
    invert_upper_triangular(&u)
}

/// Operator normalization `B^{-1}(n)`: symmetric with entry
/// `n^{d_{max{l,m}} - 1/2}`.
pub fn operator_normalizer(memory: &MemoryParameters, n: usize) -> SquareMatrix {
    let d = memory.dim();
    let nf = n as f64;
    let mut out = SquareMatrix::zeros(d);
    for l in 0..d {
        for m in 0..d {
            out.set(l, m, nf.powf(memory.index_max(l, m) - 0.5));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{limiting_r, MemoryParameters, SlowlyVaryingSpec};
    use crate::simulate::InnovationLaw;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn seeded_spec(dim: usize, rng: &mut ChaCha8Rng) -> ProcessSpec {
        loop {
            let mut ds: Vec<f64> = (0..dim).map(|_| 0.05 + 0.4 * rng.random::<f64>()).collect();
            ds.sort_by(|a, b| b.total_cmp(a));
            if ds.windows(2).any(|w| w[0] - w[1] < 0.02) {
                continue;
            }
            let memory = match MemoryParameters::new(ds) {
                Ok(m) => m,
                Err(_) => continue,
            };
            let mut ap = SquareMatrix::identity(dim);
            let mut am = SquareMatrix::identity(dim);
            for i in 0..dim {
                for j in 0..dim {
                    ap.set(i, j, ap.get(i, j) + 0.3 * (rng.random::<f64>() - 0.5));
                    am.set(i, j, am.get(i, j) + 0.3 * (rng.random::<f64>() - 0.5));
                }
            }
            let sv = SlowlyVaryingSpec::new(ap, am).unwrap();
            if let Ok(spec) = ProcessSpec::linear_lrd(memory, sv, InnovationLaw::StandardNormal) {
                return spec;
            }
        }
    }

    #[test]
    fn white_noise_sigma_sq() {
        let spec = ProcessSpec::white_noise(2, InnovationLaw::StandardNormal).unwrap();
        let sq = exact_sigma_sq(&spec, 37, 100).unwrap();
        assert!(sq.max_abs_diff(&SquareMatrix::identity(2).scale(37.0)) < 1e-12);
    }

    #[test]
    fn n_equals_one_gives_gamma0() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let spec = seeded_spec(2, &mut rng);
        let sq = exact_sigma_sq(&spec, 1, 64).unwrap();
        let g0 = crate::model::theoretical_gamma(&spec, 0, 64).unwrap();
        assert!(sq.max_abs_diff(&g0) < 1e-10 * g0.max_abs());
    }

    #[test]
    fn assembly_routes_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..6 {
            let dim = 1 + (rng.random::<u32>() % 3) as usize;
            let spec = seeded_spec(dim, &mut rng);
            let n = 64;
            let m = 512;
            let a = exact_sigma_sq(&spec, n, m).unwrap();
            let b = exact_sigma_sq_via_gamma(&spec, n, m).unwrap();
            assert!(
                a.max_abs_diff(&b) <= 1e-8 * a.max_abs(),
                "routes diverge: {:.3e}",
                a.max_abs_diff(&b) / a.max_abs()
            );
        }
    }

    #[test]
    fn exact_normalizer_diagonal_examples() {
        let m = exact_normalizer(&SquareMatrix::identity(2).scale(16.0)).unwrap();
        assert!(m.max_abs_diff(&SquareMatrix::identity(2).scale(0.25)) < 1e-12);
        let m = exact_normalizer(&SquareMatrix::diagonal(&[4.0, 16.0])).unwrap();
        assert!(m.max_abs_diff(&SquareMatrix::diagonal(&[0.5, 0.25])) < 1e-12);
    }

    #[test]
    fn exact_normalizer_probe_identity_random() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..10 {
            let mut b = SquareMatrix::zeros(4);
            for i in 0..4 {
                for j in 0..4 {
                    b.set(i, j, rng.random::<f64>() * 2.0 - 1.0);
                }
            }
            let mut s = b.matmul(&b.transpose());
            for i in 0..4 {
                s.set(i, i, s.get(i, i) + 4.0);
            }
            let m = exact_normalizer(&s).unwrap();
            let probe = m.matmul(&s).matmul(&m.transpose());
            assert!(probe.max_abs_diff(&SquareMatrix::identity(4)) < 1e-10);
        }
    }

    #[test]
    fn exact_normalizer_rejects_degenerate() {
        // a zero-variance direction makes Sigma^2 singular
        let s = SquareMatrix::from_rows(&[vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap();
        assert!(exact_normalizer(&s).is_err());
    }

    #[test]
    fn x_matrix_examples() {
        let memory = MemoryParameters::new(vec![0.25]).unwrap();
        let r = RMatrix {
            entries: SquareMatrix::identity(1),
            c1: SquareMatrix::identity(1),
            c2: SquareMatrix::identity(1),
            c3: SquareMatrix::identity(1),
        };
        let x = x_matrix(&r, &memory, 1).unwrap();
        assert!((x.get(0, 0) - 8.0 / 3.0).abs() < 1e-12);

        let memory = MemoryParameters::new(vec![0.2]).unwrap();
        let x = x_matrix(&r, &memory, 2).unwrap();
        assert!((x.get(0, 0) - 4.0 / 0.24).abs() < 1e-10);
    }

    #[test]
    fn x_matrix_symmetry_and_domain() {
        let memory = MemoryParameters::new(vec![0.3, 0.2]).unwrap();
        let entries = SquareMatrix::from_rows(&[vec![2.0, 0.7], vec![0.4, 1.5]]).unwrap();
        let r = RMatrix {
            entries,
            c1: SquareMatrix::identity(2),
            c2: SquareMatrix::identity(2),
            c3: SquareMatrix::identity(2),
        };
        let x = x_matrix(&r, &memory, 1).unwrap();
        assert!(x.max_abs_diff(&x.transpose()) < 1e-14);
        // tau (d_i + d_j) >= 1 must error
        assert!(x_matrix(&r, &memory, 2).is_err());
    }

    #[test]
    fn asymptotic_normalizer_scalar_specialization() {
        let memory = MemoryParameters::new(vec![0.25]).unwrap();
        let r = RMatrix {
            entries: SquareMatrix::identity(1),
            c1: SquareMatrix::identity(1),
            c2: SquareMatrix::identity(1),
            c3: SquareMatrix::identity(1),
        };
        let norm = asymptotic_normalization(&r, &memory, 1).unwrap();
        let n = 1000usize;
        let a = asymptotic_normalizer(&norm, n);
        let x = 8.0 / 3.0f64;
        let expect = (n as f64).powf(0.25 - 1.0) / x.sqrt();
        assert!((a.get(0, 0) - expect).abs() < 1e-12 * expect);
    }

    #[test]
    fn a_factor_orientation_and_triangularity() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let spec = seeded_spec(3, &mut rng);
        let r = limiting_r(&spec).unwrap();
        let norm = asymptotic_normalization(&r, &spec.memory, 1).unwrap();
        let w = &norm.a_factor;
        for i in 0..3 {
            for j in 0..i {
                assert_eq!(w.get(i, j), 0.0);
            }
            assert!(w.get(i, i) > 0.0);
        }
        // W' W = X^{-1}
        let lhs = w.transpose().matmul(w).matmul(&norm.x_matrix);
        assert!(lhs.max_abs_diff(&SquareMatrix::identity(3)) < 1e-8);
    }

    #[test]
    fn variance_identity_under_lemma_scaling() {
        // With Sigma_n^2 replaced by its asymptotic form n^{2 - tau(d_i+d_j)} x_ij,
        // A(n)^{-1} Sigma^2 A(n)^{-T} equals I up to rounding for any n: the
        // triangular support makes the exponents cancel exactly.
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let spec = seeded_spec(3, &mut rng);
        let r = limiting_r(&spec).unwrap();
        let norm = asymptotic_normalization(&r, &spec.memory, 1).unwrap();
        let n = 1_000_000usize;
        let nf = n as f64;
        let d = 3;
        let mut sq = SquareMatrix::zeros(d);
        for i in 0..d {
            for j in 0..d {
                let e = 2.0 - (spec.memory.get(i) + spec.memory.get(j));
                sq.set(i, j, nf.powf(e) * norm.x_matrix.get(i, j));
            }
        }
        let a = asymptotic_normalizer(&norm, n);
        let probe = a.matmul(&sq).matmul(&a.transpose());
        let err = probe.max_abs_diff(&SquareMatrix::identity(d));
        assert!(err < 0.01, "variance identity error {err}");
    }

    #[test]
    fn normalizer_sign_pattern_for_positive_r() {
        // for a positive-entry X the off-diagonal of X^{-1} is negative, so
        // the (1,2) entry of A^{-1}(n) carries the Lemma's (-1)^{1+2} sign
        let memory = MemoryParameters::new(vec![0.3, 0.2]).unwrap();
        let entries = SquareMatrix::from_rows(&[vec![2.0, 0.8], vec![0.8, 1.5]]).unwrap();
        let r = RMatrix {
            entries,
            c1: SquareMatrix::identity(2),
            c2: SquareMatrix::identity(2),
            c3: SquareMatrix::identity(2),
        };
        let norm = asymptotic_normalization(&r, &memory, 1).unwrap();
        let a = asymptotic_normalizer(&norm, 64);
        assert!(a.get(0, 1) < 0.0);
        assert_eq!(a.get(1, 0), 0.0);
    }

    #[test]
    fn triangular_normalizer_exact_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(47);
        let spec = seeded_spec(3, &mut rng);
        let sq = exact_sigma_sq(&spec, 128, 512).unwrap();
        let w = triangular_normalizer(&sq).unwrap();
        let probe = w.matmul(&sq).matmul(&w.transpose());
        assert!(probe.max_abs_diff(&SquareMatrix::identity(3)) < 1e-10);
        for i in 0..3 {
            for j in 0..i {
                assert_eq!(w.get(i, j), 0.0);
            }
        }
    }

    #[test]
    fn operator_normalizer_values() {
        let memory = MemoryParameters::new(vec![0.2, 0.1]).unwrap();
        let b = operator_normalizer(&memory, 100);
        assert!((b.get(0, 0) - 100f64.powf(-0.3)).abs() < 1e-15);
        assert!((b.get(0, 1) - 100f64.powf(-0.4)).abs() < 1e-15);
        assert!((b.get(1, 0) - 100f64.powf(-0.4)).abs() < 1e-15);
        assert!((b.get(1, 1) - 100f64.powf(-0.4)).abs() < 1e-15);
        assert!((b.get(0, 0) - 0.25119).abs() < 1e-5);
        assert!((b.get(0, 1) - 0.15849).abs() < 1e-5);
        assert!(b.max_abs_diff(&b.transpose()) == 0.0);
    }

    #[test]
    fn sigma_sq_diagonal_grows_in_n() {
        let mut rng = ChaCha8Rng::seed_from_u64(91);
        let spec = seeded_spec(2, &mut rng);
        let mut prev = vec![0.0; 2];
        for n in [64usize, 128, 256, 512] {
            let sq = exact_sigma_sq(&spec, n, 1024).unwrap();
            for i in 0..2 {
                assert!(sq.get(i, i) > prev[i], "diagonal not increasing at n = {n}");
                prev[i] = sq.get(i, i);
            }
        }
    }

    #[test]
    fn omega_scaled_normalizer_vanishes() {
        // (omega^n_pq)^{1/2} * Sigma^n_ip -> 0 (finite-scale monotone probe)
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let spec = seeded_spec(2, &mut rng);
        let mut prev = f64::INFINITY;
        for n in [64usize, 128, 256, 512] {
            let norm = exact_normalization(&spec, n, 1024).unwrap();
            let mut worst = 0.0f64;
            for p in 0..2 {
                for q in 0..2 {
                    for i in 0..2 {
                        let v = norm.column_variances.get(p, q).sqrt().sqrt()
                            * norm.inv_sqrt.get(i, p).abs();
                        worst = worst.max(v);
                    }
                }
            }
            assert!(worst < prev, "omega-scaled entries not decreasing at n = {n}");
            prev = worst;
        }
    }
}
