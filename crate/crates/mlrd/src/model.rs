//! Process specifications: memory parameters, coefficient sequences of the
//! linear model, theoretical autocovariances, the limiting `R` matrix, and
//! admissibility checks C1/C2.
//!
//! The linear model is `X_k = sum_j A_{j-k} eps_j` with
//! `A_j = L(j) |j|^{-d_l - 1/2}` rowwise, `L(j) = A+` for `j > 0` and `A-` for
//! `j < 0`; its autocovariance decays like `gamma_ij(k) ~ R_ij k^{-d_i-d_j}`.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma as gamma_fn;

use crate::error::{Error, Result};
use crate::matalg::SquareMatrix;
use crate::simulate::InnovationLaw;

/// Pole-proximity guard for the sine denominators in the `R` constants.
pub const SINE_POLE_TOL: f64 = 1e-9;

/// Threshold for the scaled determinant / C2 nondegeneracy checks.
pub const CONDITION_TOL: f64 = 1e-10;

/// Memory parameters `d_1 > d_2 > ... > d_d`, each in `(0, 1/2)`.
///
/// Strict ordering is enforced at construction; callers with unsorted
/// coordinates are expected to pre-permute.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryParameters {
    values: Vec<f64>,
}

impl MemoryParameters {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Domain("memory parameters must be non-empty".into()));
        }
        for (i, v) in values.iter().enumerate() {
            if !(*v > 0.0 && *v < 0.5) {
                return Err(Error::Domain(format!(
                    "memory parameter d_{} = {v} must lie in (0, 1/2)",
                    i + 1
                )));
            }
        }
        for w in values.windows(2) {
            if !(w[0] > w[1]) {
                return Err(Error::Domain(format!(
                    "memory parameters must be strictly decreasing, got {} then {}",
                    w[0], w[1]
                )));
            }
        }
        Ok(Self { values })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn get(&self, i: usize) -> f64 {
        self.values[i]
    }

    /// `d_{max(l, m)}` under the index-max convention: with the enforced
    /// ordering this is the *smaller* memory value of the pair.
    #[inline]
    pub fn index_max(&self, l: usize, m: usize) -> f64 {
        self.values[l.max(m)]
    }
}

/// Constant-mode slowly varying prefactor: `L(j) = A+` for `j > 0`,
/// `A-` for `j < 0`, and an explicit coefficient at `j = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlowlyVaryingSpec {
    pub a_plus: SquareMatrix,
    pub a_minus: SquareMatrix,
    /// Value of `A_0`; the power law is undefined at `j = 0`, so the
    /// coefficient there is an explicit spec field (defaults to `A+`).
    pub j0_coefficient: SquareMatrix,
}

impl SlowlyVaryingSpec {
    pub fn new(a_plus: SquareMatrix, a_minus: SquareMatrix) -> Result<Self> {
        if a_plus.dim() != a_minus.dim() {
            return Err(Error::Domain("A+ and A- must have the same dimension".into()));
        }
        let j0 = a_plus.clone();
        Ok(Self { a_plus, a_minus, j0_coefficient: j0 })
    }

    pub fn with_j0(mut self, j0: SquareMatrix) -> Result<Self> {
        if j0.dim() != self.a_plus.dim() {
            return Err(Error::Domain("A_0 dimension mismatch".into()));
        }
        self.j0_coefficient = j0;
        Ok(self)
    }
}

/// Process families covered by the toolkit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProcessKind {
    /// Two-sided linear process with LRD coefficients.
    LinearLrd,
    /// Gaussian process with independent components, unit marginal variance,
    /// and per-component autocovariance `r_i(k) = R_ii k^{-2 d_i}` for `k >= 1`.
    GaussianDiagonal,
    /// i.i.d. sequence `X_k = A_0 eps_k`.
    WhiteNoise,
}

/// Full description of a d-dimensional process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProcessSpec {
    pub memory: MemoryParameters,
    pub slowly_varying: SlowlyVaryingSpec,
    pub kind: ProcessKind,
    pub innovation: InnovationLaw,
    /// Diagonal `R_ii` values for the `GaussianDiagonal` kind.
    pub r_diag: Option<Vec<f64>>,
}

impl ProcessSpec {
    /// Validated linear LRD spec: checks C1, C2 and R invertibility.
    pub fn linear_lrd(
        memory: MemoryParameters,
        slowly_varying: SlowlyVaryingSpec,
        innovation: InnovationLaw,
    ) -> Result<Self> {
        let spec = Self::linear_lrd_unchecked(memory, slowly_varying, innovation)?;
        let report = check_conditions(&spec);
        if !report.pass() {
            return Err(Error::Hypothesis(report.describe_failures()));
        }
        Ok(spec)
    }

    /// Linear spec without the C1/C2 admissibility gate; used to *describe*
    /// inadmissible processes so `check_conditions` can report on them.
    pub fn linear_lrd_unchecked(
        memory: MemoryParameters,
        slowly_varying: SlowlyVaryingSpec,
        innovation: InnovationLaw,
    ) -> Result<Self> {
        if memory.dim() != slowly_varying.a_plus.dim() {
            return Err(Error::Domain("memory/coefficient dimension mismatch".into()));
        }
        Ok(Self { memory, slowly_varying, kind: ProcessKind::LinearLrd, innovation, r_diag: None })
    }

    /// Gaussian spec with independent components and diagonal `R`.
    pub fn gaussian_diagonal(memory: MemoryParameters, r_diag: Vec<f64>) -> Result<Self> {
        if r_diag.len() != memory.dim() {
            return Err(Error::Domain("r_diag length must equal dimension".into()));
        }
        if r_diag.iter().any(|r| !r.is_finite() || *r == 0.0) {
            return Err(Error::Domain("R_jj must be finite and nonzero".into()));
        }
        let d = memory.dim();
        let sv = SlowlyVaryingSpec::new(SquareMatrix::identity(d), SquareMatrix::identity(d))?;
        Ok(Self {
            memory,
            slowly_varying: sv,
            kind: ProcessKind::GaussianDiagonal,
            innovation: InnovationLaw::StandardNormal,
            r_diag: Some(r_diag),
        })
    }

    /// White-noise spec `X_k = A_0 eps_k`.
    pub fn white_noise(dim: usize, innovation: InnovationLaw) -> Result<Self> {
        // The memory field is unused for white noise; fill with an admissible
        // strictly decreasing vector.
        let values: Vec<f64> = (0..dim).map(|i| 0.45 - 0.4 * i as f64 / dim.max(1) as f64).collect();
        let memory = MemoryParameters::new(values)?;
        let sv = SlowlyVaryingSpec::new(SquareMatrix::identity(dim), SquareMatrix::identity(dim))?;
        Ok(Self { memory, slowly_varying: sv, kind: ProcessKind::WhiteNoise, innovation, r_diag: None })
    }

    pub fn dim(&self) -> usize {
        self.memory.dim()
    }

    /// Content hash of the spec (sha256 of the canonical JSON serialization).
    pub fn digest(&self) -> String {
        use sha2::{Digest, Sha256};
        let json = serde_json::to_string(self).expect("spec serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    /// The `R` matrix governing `gamma(k) ~ k^{-D} R k^{-D}`: the limiting
    /// constant for linear specs, the configured diagonal for Gaussian specs,
    /// and zero (no long memory) for white noise at positive lags.
    pub fn r_matrix(&self) -> Result<RMatrix> {
        match self.kind {
            ProcessKind::LinearLrd => limiting_r(self),
            ProcessKind::GaussianDiagonal => {
                let r = self.r_diag.as_ref().expect("gaussian spec carries r_diag");
                let d = self.dim();
                Ok(RMatrix {
                    entries: SquareMatrix::diagonal(r),
                    c1: SquareMatrix::zeros(d),
                    c2: SquareMatrix::zeros(d),
                    c3: SquareMatrix::zeros(d),
                })
            }
            ProcessKind::WhiteNoise => Err(Error::Domain(
                "white noise has no long-range dependence matrix".into(),
            )),
        }
    }
}

/// Limiting autocovariance constant `R` with the three coefficient products
/// `c1 = A-(A-)'`, `c2 = A-(A+)'`, `c3 = A+(A+)'` recorded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RMatrix {
    pub entries: SquareMatrix,
    pub c1: SquareMatrix,
    pub c2: SquareMatrix,
    pub c3: SquareMatrix,
}

/// Coefficient matrix `A_j` of the linear model: `(l, m)` entry
/// `L_lm(j) |j|^{-d_l - 1/2}`, with the explicit `A_0` at `j = 0`.
pub fn lrd_coefficient(spec: &ProcessSpec, j: i64) -> SquareMatrix {
    let d = spec.dim();
    if j == 0 {
        return spec.slowly_varying.j0_coefficient.clone();
    }
    let l_mat = if j > 0 { &spec.slowly_varying.a_plus } else { &spec.slowly_varying.a_minus };
    let aj = (j.unsigned_abs() as f64).ln();
    let mut out = SquareMatrix::zeros(d);
    for l in 0..d {
        let p = (-(spec.memory.get(l) + 0.5) * aj).exp();
        for m in 0..d {
            out.set(l, m, l_mat.get(l, m) * p);
        }
    }
    out
}

/// Limiting `R` matrix of the linear model.
///
/// The constant is assembled from the three tail regions of the coefficient
/// cross-sum; with `D_i = 1/2 - d_i` it reads
/// `R_ij = K_ij (c1_ij sin(pi D_j) / s + (A+(A-)')_ij + c3_ij sin(pi D_i) / s)`
/// where `K_ij = Gamma(D_i) Gamma(D_j) / Gamma(D_i + D_j)` and
/// `s = sin(pi (d_i + d_j))`. Each term equals the Beta-function value of its
/// region, which the unit tests verify independently.
pub fn limiting_r(spec: &ProcessSpec) -> Result<RMatrix> {
    if spec.kind != ProcessKind::LinearLrd {
        return Err(Error::Domain("limiting R is defined for linear LRD specs".into()));
    }
    let d = spec.dim();
    let ap = &spec.slowly_varying.a_plus;
    let am = &spec.slowly_varying.a_minus;
    let c1 = am.matmul(&am.transpose());
    let c2 = am.matmul(&ap.transpose());
    let c3 = ap.matmul(&ap.transpose());
    let mid = ap.matmul(&am.transpose());
    let mut entries = SquareMatrix::zeros(d);
    for i in 0..d {
        for j in 0..d {
            let di = spec.memory.get(i);
            let dj = spec.memory.get(j);
            let s = (std::f64::consts::PI * (di + dj)).sin();
            if s.abs() < SINE_POLE_TOL || (1.0 - di - dj).abs() < SINE_POLE_TOL {
                return Err(Error::Domain(format!(
                    "d_{} + d_{} = {} is too close to the sine pole at 1",
                    i + 1,
                    j + 1,
                    di + dj
                )));
            }
            let bi = 0.5 - di;
            let bj = 0.5 - dj;
            let k = gamma_fn(bi) * gamma_fn(bj) / gamma_fn(bi + bj);
            let v = c1.get(i, j) * k * (std::f64::consts::PI * bj).sin() / s
                + mid.get(i, j) * k
                + c3.get(i, j) * k * (std::f64::consts::PI * bi).sin() / s;
            entries.set(i, j, v);
        }
    }
    Ok(RMatrix { entries, c1, c2, c3 })
}

/// Admissibility report for a process spec.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdmissibilityReport {
    /// C1: `A+` and `A-` both invertible (scaled determinant above threshold).
    pub c1_ok: bool,
    pub det_a_plus_scaled: f64,
    pub det_a_minus_scaled: f64,
    /// C2: `c_ii (A-(A-)' + A+(A+)')_ii + (A-(A+)')_ii != 0` for every `i`,
    /// with `c_ii = sin(pi d_i) / sin(2 pi d_i)`.
    pub c2_ok: bool,
    pub c2_values: Vec<f64>,
    /// Strict ordering `d_1 > ... > d_d` (already enforced by construction,
    /// re-reported for completeness).
    pub ordering_ok: bool,
    /// `R` from `limiting_r` is invertible; checked directly rather than
    /// inferred from C2.
    pub r_invertible: bool,
    pub det_r_scaled: f64,
}

impl AdmissibilityReport {
    pub fn pass(&self) -> bool {
        self.c1_ok && self.c2_ok && self.ordering_ok && self.r_invertible
    }

    pub fn describe_failures(&self) -> String {
        let mut parts = Vec::new();
        if !self.c1_ok {
            parts.push(format!(
                "C1 fails: scaled determinants |A+| = {:.3e}, |A-| = {:.3e}",
                self.det_a_plus_scaled, self.det_a_minus_scaled
            ));
        }
        if !self.c2_ok {
            parts.push(format!("C2 fails: values {:?}", self.c2_values));
        }
        if !self.ordering_ok {
            parts.push("memory parameters are not strictly decreasing".into());
        }
        if !self.r_invertible {
            parts.push(format!("R is not invertible: scaled |det R| = {:.3e}", self.det_r_scaled));
        }
        if parts.is_empty() {
            "all conditions hold".into()
        } else {
            parts.join("; ")
        }
    }
}

fn scaled_det(m: &SquareMatrix) -> f64 {
    let d = m.dim() as f64;
    let scale = (m.frobenius() / d.sqrt()).max(f64::MIN_POSITIVE);
    m.determinant().abs() / scale.powf(d)
}

/// Evaluates C1, C2, ordering, and R-invertibility for a spec.
pub fn check_conditions(spec: &ProcessSpec) -> AdmissibilityReport {
    let ap = &spec.slowly_varying.a_plus;
    let am = &spec.slowly_varying.a_minus;
    let det_p = scaled_det(ap);
    let det_m = scaled_det(am);
    let c1_ok = det_p > CONDITION_TOL && det_m > CONDITION_TOL;

    let g1 = am.matmul(&am.transpose());
    let g2 = ap.matmul(&ap.transpose());
    let g12 = am.matmul(&ap.transpose());
    let mut c2_values = Vec::with_capacity(spec.dim());
    for i in 0..spec.dim() {
        let di = spec.memory.get(i);
        let cii = (std::f64::consts::PI * di).sin() / (2.0 * std::f64::consts::PI * di).sin();
        c2_values.push(cii * (g1.get(i, i) + g2.get(i, i)) + g12.get(i, i));
    }
    let c2_ok = c2_values.iter().all(|v| v.abs() > CONDITION_TOL);

    let ordering_ok = spec.memory.values().windows(2).all(|w| w[0] > w[1]);

    let (r_invertible, det_r_scaled) = match spec.kind {
        ProcessKind::LinearLrd => match limiting_r(spec) {
            Ok(r) => {
                let s = scaled_det(&r.entries);
                (s > CONDITION_TOL, s)
            }
            Err(_) => (false, 0.0),
        },
        _ => (true, 1.0),
    };

    AdmissibilityReport {
        c1_ok,
        det_a_plus_scaled: det_p,
        det_a_minus_scaled: det_m,
        c2_ok,
        c2_values,
        ordering_ok,
        r_invertible,
        det_r_scaled,
    }
}

/// Theoretical autocovariance `gamma(k)` at truncation `M`.
///
/// For linear specs this is the coefficient cross-sum
/// `sum_j A_j A_{j-k}'` over indices with both `|j| <= M` and `|j - k| <= M`
/// (the exact autocovariance of the `M`-truncated process, so that the
/// covariance assembly routes in `normalize` agree to rounding); for
/// `gaussian_diagonal` it is `diag(R_ii k^{-2 d_i})` with `gamma(0) = I`;
/// white noise gives `A_0 A_0'` at lag zero.
pub fn theoretical_gamma(spec: &ProcessSpec, k: usize, m: usize) -> Result<SquareMatrix> {
    let d = spec.dim();
    match spec.kind {
        ProcessKind::LinearLrd => {
            if m < k + 1 {
                return Err(Error::Config(format!(
                    "truncation M = {m} must be at least k + 1 = {}",
                    k + 1
                )));
            }
            let len = 2 * m + 1;
            let coeffs = coefficient_table(spec, m);
            let mut g = SquareMatrix::zeros(d);
            for l in 0..d {
                for mm in 0..d {
                    let mut acc = 0.0;
                    for q in 0..d {
                        let a = &coeffs[l * d + q];
                        let b = &coeffs[mm * d + q];
                        acc += dot(&a[k..], &b[..len - k]);
                    }
                    g.set(l, mm, acc);
                }
            }
            Ok(g)
        }
        _ => Ok(theoretical_gamma_upto(spec, k, m)?.pop().expect("at least one lag")),
    }
}

/// All lags `0..=k_max` in one pass.
pub fn theoretical_gamma_upto(spec: &ProcessSpec, k_max: usize, m: usize) -> Result<Vec<SquareMatrix>> {
    let d = spec.dim();
    match spec.kind {
        ProcessKind::WhiteNoise => {
            let a0 = &spec.slowly_varying.j0_coefficient;
            let mut out = vec![SquareMatrix::zeros(d); k_max + 1];
            out[0] = a0.matmul(&a0.transpose());
            Ok(out)
        }
        ProcessKind::GaussianDiagonal => {
            let r = spec.r_diag.as_ref().expect("gaussian spec carries r_diag");
            let mut out = Vec::with_capacity(k_max + 1);
            out.push(SquareMatrix::identity(d));
            for k in 1..=k_max {
                let vals: Vec<f64> = (0..d)
                    .map(|i| r[i] * (k as f64).powf(-2.0 * spec.memory.get(i)))
                    .collect();
                out.push(SquareMatrix::diagonal(&vals));
            }
            Ok(out)
        }
        ProcessKind::LinearLrd => {
            if m < k_max + 1 {
                return Err(Error::Config(format!(
                    "truncation M = {m} must be at least k + 1 = {}",
                    k_max + 1
                )));
            }
            // per-channel coefficient arrays a[l][m] over j = -M..=M
            let len = 2 * m + 1;
            let coeffs = coefficient_table(spec, m);
            let mut out = Vec::with_capacity(k_max + 1);
            for k in 0..=k_max {
                let mut g = SquareMatrix::zeros(d);
                for l in 0..d {
                    for mm in 0..d {
                        let mut acc = 0.0;
                        for q in 0..d {
                            let a = &coeffs[l * d + q];
                            let b = &coeffs[mm * d + q];
                            // sum_j a[j] b[j - k]: overlap a[k..], b[..len-k]
                            acc += dot(&a[k..], &b[..len - k]);
                        }
                        g.set(l, mm, acc);
                    }
                }
                out.push(g);
            }
            Ok(out)
        }
    }
}

/// Per-channel coefficient table: entry `l * d + q` holds
/// `a_{lq}^{j}` for `j = -M..=M` (index `j + M`).
pub(crate) fn coefficient_table(spec: &ProcessSpec, m: usize) -> Vec<Vec<f64>> {
    let d = spec.dim();
    let len = 2 * m + 1;
    let mut tables = vec![vec![0.0; len]; d * d];
    // powers |j|^{-d_l - 1/2} shared across q
    for l in 0..d {
        let expo = -(spec.memory.get(l) + 0.5);
        let mut pow = vec![0.0; m + 1];
        for (j, p) in pow.iter_mut().enumerate().skip(1) {
            *p = (j as f64).powf(expo);
        }
        for q in 0..d {
            let t = &mut tables[l * d + q];
            let plus = spec.slowly_varying.a_plus.get(l, q);
            let minus = spec.slowly_varying.a_minus.get(l, q);
            for j in 1..=m {
                t[m + j] = plus * pow[j];
                t[m - j] = minus * pow[j];
            }
            t[m] = spec.slowly_varying.j0_coefficient.get(l, q);
        }
    }
    tables
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}
