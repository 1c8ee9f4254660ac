//! Path synthesis: innovation generation, FFT-convolution linear-process
//! simulation with explicit truncation, exact Gaussian sampling from the
//! dense Toeplitz covariance, and partial-sum extraction.
//!
//! Determinism contract: a path is a pure function of
//! `(spec, n, truncation, seed, replication)`. Replication streams come from
//! a counter-based generator (ChaCha streams), so parallel and serial runs
//! agree path-for-path.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::model::{coefficient_table, ProcessKind, ProcessSpec};

/// Default cap on `n * d` for the dense Gaussian factorization path.
pub const DEFAULT_GAUSSIAN_CAP: usize = 1 << 13;

/// Magic header of the binary path dump.
pub const PATH_MAGIC: &[u8; 8] = b"MLRDPATH";

/// Zero-mean, identity-covariance innovation families. Scalings are fixed
/// analytically so the covariance is exact by construction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InnovationLaw {
    StandardNormal,
    /// `+1/-1` with equal probability.
    Rademacher,
    /// Uniform on `(-sqrt(3), sqrt(3))`.
    UniformScaled,
}

impl InnovationLaw {
    #[inline]
    fn draw(self, rng: &mut ChaCha8Rng) -> f64 {
        match self {
            InnovationLaw::StandardNormal => rng.sample(StandardNormal),
            InnovationLaw::Rademacher => {
                if rng.random::<bool>() {
                    1.0
                } else {
                    -1.0
                }
            }
            InnovationLaw::UniformScaled => {
                let u: f64 = rng.random();
                (2.0 * u - 1.0) * 3f64.sqrt()
            }
        }
    }
}

/// An `n x d` realization plus provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplePath {
    pub n: usize,
    pub d: usize,
    /// Row-major `n x d` values.
    pub values: Vec<f64>,
    pub seed: u64,
    pub truncation: usize,
    pub spec_digest: String,
    /// Analytic bound on the variance contribution lost to truncation,
    /// `O(M^{2 d_max - 1})`; zero for exact samplers.
    pub tail_variance_bound: f64,
}

impl SamplePath {
    #[inline]
    pub fn value(&self, k: usize, i: usize) -> f64 {
        self.values[k * self.d + i]
    }

    pub fn row(&self, k: usize) -> &[f64] {
        &self.values[k * self.d..(k + 1) * self.d]
    }

    /// Column sums over time indices `1..=limit`.
    pub fn partial_sum(&self, limit: usize) -> Vec<f64> {
        let mut acc = vec![0.0; self.d];
        for k in 0..limit.min(self.n) {
            for (a, v) in acc.iter_mut().zip(self.row(k)) {
                *a += v;
            }
        }
        acc
    }

    /// CSV export: one row per time index, `d` columns (`x1..xd` header).
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let header: Vec<String> = (1..=self.d).map(|i| format!("x{i}")).collect();
        writeln!(w, "{}", header.join(","))?;
        for k in 0..self.n {
            let row: Vec<String> = self.row(k).iter().map(|v| format!("{v:.17e}")).collect();
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }

    /// Binary columnar dump: magic "MLRDPATH", then little-endian u64
    /// `n, d, seed, truncation`, then `d` columns of `n` little-endian f64.
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(PATH_MAGIC)?;
        for v in [self.n as u64, self.d as u64, self.seed, self.truncation as u64] {
            w.write_all(&v.to_le_bytes())?;
        }
        for i in 0..self.d {
            for k in 0..self.n {
                w.write_all(&self.value(k, i).to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != PATH_MAGIC {
            return Err(Error::Parse("bad magic header in path dump".into()));
        }
        let mut u = [0u8; 8];
        let mut next_u64 = |r: &mut R| -> Result<u64> {
            r.read_exact(&mut u)?;
            Ok(u64::from_le_bytes(u))
        };
        let n = next_u64(&mut r)? as usize;
        let d = next_u64(&mut r)? as usize;
        let seed = next_u64(&mut r)?;
        let truncation = next_u64(&mut r)? as usize;
        let mut values = vec![0.0; n * d];
        let mut b = [0u8; 8];
        for i in 0..d {
            for k in 0..n {
                r.read_exact(&mut b)?;
                values[k * d + i] = f64::from_le_bytes(b);
            }
        }
        Ok(Self { n, d, values, seed, truncation, spec_digest: String::new(), tail_variance_bound: 0.0 })
    }
}

/// Partial-sum process sampled on a grid of `t` values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartialSumPath {
    pub grid: Vec<f64>,
    pub d: usize,
    /// Row-major `|grid| x d`: row `g` holds `S_{floor(n t_g)}`.
    pub sums: Vec<f64>,
}

impl PartialSumPath {
    pub fn at(&self, g: usize) -> &[f64] {
        &self.sums[g * self.d..(g + 1) * self.d]
    }
}

/// i.i.d. innovation panel: `count x d` row-major, deterministic in
/// `(law, count, d, seed)`.
pub fn gen_innovations(law: InnovationLaw, count: usize, d: usize, seed: u64) -> Vec<f64> {
    gen_innovations_stream(law, count, d, seed, 0)
}

/// Innovation panel on an explicit ChaCha stream; stream 0 is
/// `gen_innovations`, replication `r` uses stream `r + 1`.
pub fn gen_innovations_stream(law: InnovationLaw, count: usize, d: usize, seed: u64, stream: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let mut out = Vec::with_capacity(count * d);
    for _ in 0..count * d {
        out.push(law.draw(&mut rng));
    }
    out
}

/// Smallest 5-smooth integer >= `n`; rustfft is fastest on such sizes.
fn next_fast_len(n: usize) -> usize {
    let mut m = n;
    loop {
        let mut k = m;
        for p in [2, 3, 5] {
            while k % p == 0 {
                k /= p;
            }
        }
        if k == 1 {
            return m;
        }
        m += 1;
    }
}

/// FFT-convolution simulator for the linear model.
///
/// `X_k = sum_{|r| <= M} A_r eps_{k+r}` computed channelwise as a
/// cross-correlation of the coefficient table with an innovation panel of
/// length `n + 2M`. Coefficient FFTs and the plan are computed once and
/// shared across replications.
pub struct LinearSampler {
    spec: ProcessSpec,
    n: usize,
    m: usize,
    fft_len: usize,
    fwd: Arc<dyn rustfft::Fft<f64>>,
    inv: Arc<dyn rustfft::Fft<f64>>,
    /// `conj(FFT(c_{lq}))` for each channel pair, index `l * d + q`.
    coeff_fft: Vec<Vec<Complex64>>,
    digest: String,
    tail_bound: f64,
}

impl LinearSampler {
    pub fn new(spec: &ProcessSpec, n: usize, m: usize) -> Result<Self> {
        if spec.kind != ProcessKind::LinearLrd {
            return Err(Error::Config("linear sampler requires a linear_lrd spec".into()));
        }
        if n == 0 {
            return Err(Error::Config("path length must be >= 1".into()));
        }
        if m < n {
            return Err(Error::Config(format!(
                "truncation M = {m} must be at least the path length n = {n}"
            )));
        }
        let d = spec.dim();
        let fft_len = next_fast_len(n + 2 * m);
        let mut planner = FftPlanner::new();
        let fwd = planner.plan_fft_forward(fft_len);
        let inv = planner.plan_fft_inverse(fft_len);
        let tables = coefficient_table(spec, m);
        let mut coeff_fft = Vec::with_capacity(d * d);
        for t in &tables {
            let mut buf: Vec<Complex64> = t.iter().map(|v| Complex64::new(*v, 0.0)).collect();
            buf.resize(fft_len, Complex64::new(0.0, 0.0));
            fwd.process(&mut buf);
            for z in buf.iter_mut() {
                *z = z.conj();
            }
            coeff_fft.push(buf);
        }
        // variance lost to truncation: per row l, sum_{|j|>M} of the squared
        // row coefficients ~ (|A+_l.|^2 + |A-_l.|^2) M^{-2 d_l} / (2 d_l)
        let mut tail_bound = 0.0f64;
        for l in 0..d {
            let mut row_sq = 0.0;
            for q in 0..d {
                row_sq += spec.slowly_varying.a_plus.get(l, q).powi(2)
                    + spec.slowly_varying.a_minus.get(l, q).powi(2);
            }
            let dl = spec.memory.get(l);
            tail_bound = tail_bound.max(row_sq * (m as f64).powf(-2.0 * dl) / (2.0 * dl));
        }
        Ok(Self {
            spec: spec.clone(),
            n,
            m,
            fft_len,
            fwd,
            inv,
            coeff_fft,
            digest: spec.digest(),
            tail_bound,
        })
    }

    /// Simulates replication `rep` of the seeded experiment.
    pub fn sample(&self, seed: u64, rep: u64) -> SamplePath {
        let d = self.spec.dim();
        let count = self.n + 2 * self.m;
        let innov = gen_innovations_stream(self.spec.innovation, count, d, seed, rep + 1);
        // forward FFT per innovation channel
        let mut channel_fft: Vec<Vec<Complex64>> = Vec::with_capacity(d);
        for q in 0..d {
            let mut buf: Vec<Complex64> = (0..count)
                .map(|u| Complex64::new(innov[u * d + q], 0.0))
                .collect();
            buf.resize(self.fft_len, Complex64::new(0.0, 0.0));
            self.fwd.process(&mut buf);
            channel_fft.push(buf);
        }
        let mut values = vec![0.0; self.n * d];
        let scale = 1.0 / self.fft_len as f64;
        let mut acc = vec![Complex64::new(0.0, 0.0); self.fft_len];
        for l in 0..d {
            for z in acc.iter_mut() {
                *z = Complex64::new(0.0, 0.0);
            }
            for q in 0..d {
                let c = &self.coeff_fft[l * d + q];
                let e = &channel_fft[q];
                for (a, (ci, ei)) in acc.iter_mut().zip(c.iter().zip(e)) {
                    *a += ci * ei;
                }
            }
            self.inv.process(&mut acc);
            for k in 0..self.n {
                values[k * d + l] = acc[k].re * scale;
            }
        }
        SamplePath {
            n: self.n,
            d,
            values,
            seed,
            truncation: self.m,
            spec_digest: self.digest.clone(),
            tail_variance_bound: self.tail_bound,
        }
    }
}

/// Packed lower-triangular Cholesky factor of a symmetric Toeplitz covariance.
struct PackedCholesky {
    n: usize,
    /// Row-packed lower triangle: row `i` occupies `i(i+1)/2 .. i(i+1)/2 + i+1`.
    data: Vec<f64>,
}

impl PackedCholesky {
    #[inline]
    fn row(&self, i: usize) -> &[f64] {
        let off = i * (i + 1) / 2;
        &self.data[off..off + i + 1]
    }

    fn from_toeplitz(first_row: &[f64]) -> Result<Self> {
        let n = first_row.len();
        let mut data = vec![0.0; n * (n + 1) / 2];
        for i in 0..n {
            let (done, rest) = data.split_at_mut(i * (i + 1) / 2);
            let row_i = &mut rest[..i + 1];
            for j in 0..i {
                let off_j = j * (j + 1) / 2;
                let row_j = &done[off_j..off_j + j];
                let sum = first_row[i - j] - dot(&row_i[..j], row_j);
                row_i[j] = sum / done[off_j + j];
            }
            let pivot = first_row[0] - dot(&row_i[..i], &row_i[..i]);
            if pivot <= 0.0 {
                return Err(Error::Factorization(format!(
                    "Toeplitz covariance is not positive definite at index {i} \
                     (pivot {pivot:.3e}); use a smaller R_ii"
                )));
            }
            row_i[i] = pivot.sqrt();
        }
        Ok(Self { n, data })
    }

    /// `L z` for a standard normal vector `z`.
    fn apply(&self, z: &[f64], out: &mut [f64]) {
        for i in 0..self.n {
            out[i] = dot(self.row(i), &z[..i + 1]);
        }
    }
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

/// Exact Gaussian sampler for `gaussian_diagonal` specs: each component is an
/// independent draw from its `n x n` Toeplitz covariance with `r_i(0) = 1`,
/// `r_i(k) = R_ii k^{-2 d_i}`, via a dense Cholesky factor computed once.
pub struct GaussianSampler {
    spec: ProcessSpec,
    n: usize,
    factors: Vec<PackedCholesky>,
    digest: String,
}

impl GaussianSampler {
    pub fn new(spec: &ProcessSpec, n: usize) -> Result<Self> {
        Self::with_cap(spec, n, DEFAULT_GAUSSIAN_CAP)
    }

    pub fn with_cap(spec: &ProcessSpec, n: usize, cap: usize) -> Result<Self> {
        if spec.kind != ProcessKind::GaussianDiagonal {
            return Err(Error::Config("gaussian sampler requires a gaussian_diagonal spec".into()));
        }
        if n == 0 {
            return Err(Error::Config("path length must be >= 1".into()));
        }
        let d = spec.dim();
        if n * d > cap {
            return Err(Error::Config(format!(
                "n * d = {} exceeds the dense factorization cap {cap}; raise gaussian_cap",
                n * d
            )));
        }
        let r_diag = spec.r_diag.as_ref().expect("gaussian spec carries r_diag");
        let mut factors = Vec::with_capacity(d);
        for i in 0..d {
            let di = spec.memory.get(i);
            let mut first_row = vec![0.0; n];
            first_row[0] = 1.0;
            for (k, v) in first_row.iter_mut().enumerate().skip(1) {
                *v = r_diag[i] * (k as f64).powf(-2.0 * di);
            }
            factors.push(PackedCholesky::from_toeplitz(&first_row)?);
        }
        Ok(Self { spec: spec.clone(), n, factors, digest: spec.digest() })
    }

    pub fn sample(&self, seed: u64, rep: u64) -> SamplePath {
        let d = self.spec.dim();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(rep + 1);
        let mut values = vec![0.0; self.n * d];
        let mut z = vec![0.0; self.n];
        let mut x = vec![0.0; self.n];
        for (i, factor) in self.factors.iter().enumerate() {
            for zi in z.iter_mut() {
                *zi = rng.sample(StandardNormal);
            }
            factor.apply(&z, &mut x);
            for k in 0..self.n {
                values[k * d + i] = x[k];
            }
        }
        SamplePath {
            n: self.n,
            d,
            values,
            seed,
            truncation: 0,
            spec_digest: self.digest.clone(),
            tail_variance_bound: 0.0,
        }
    }
}

/// One-shot linear simulation (replication 0). Experiments needing many
/// replications should hold a `LinearSampler`.
pub fn simulate_linear(spec: &ProcessSpec, n: usize, m: usize, seed: u64) -> Result<SamplePath> {
    Ok(LinearSampler::new(spec, n, m)?.sample(seed, 0))
}

/// One-shot exact Gaussian simulation (replication 0).
pub fn simulate_gaussian_exact(spec: &ProcessSpec, n: usize, seed: u64) -> Result<SamplePath> {
    Ok(GaussianSampler::new(spec, n)?.sample(seed, 0))
}

/// White-noise path `X_k = A_0 eps_k`.
pub fn simulate_white(spec: &ProcessSpec, n: usize, seed: u64, rep: u64) -> Result<SamplePath> {
    if spec.kind != ProcessKind::WhiteNoise {
        return Err(Error::Config("white-noise path requires a white_noise spec".into()));
    }
    let d = spec.dim();
    let innov = gen_innovations_stream(spec.innovation, n, d, seed, rep + 1);
    let a0 = &spec.slowly_varying.j0_coefficient;
    let mut values = vec![0.0; n * d];
    for k in 0..n {
        let row = &innov[k * d..(k + 1) * d];
        let out = a0.mul_vec(row);
        values[k * d..(k + 1) * d].copy_from_slice(&out);
    }
    Ok(SamplePath {
        n,
        d,
        values,
        seed,
        truncation: 0,
        spec_digest: spec.digest(),
        tail_variance_bound: 0.0,
    })
}

/// Extracts the partial-sum process `S_{floor(n t)}` on a grid of `t` values.
pub fn partial_sum_path(path: &SamplePath, grid: &[f64]) -> Result<PartialSumPath> {
    for t in grid {
        if !(*t >= 0.0 && *t <= 1.0) {
            return Err(Error::Domain(format!("grid point t = {t} outside [0, 1]")));
        }
    }
    let mut sorted = grid.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let d = path.d;
    let mut sums = Vec::with_capacity(sorted.len() * d);
    let mut acc = vec![0.0; d];
    let mut k = 0usize;
    for t in &sorted {
        let limit = ((path.n as f64) * t).floor() as usize;
        while k < limit.min(path.n) {
            for (a, v) in acc.iter_mut().zip(path.row(k)) {
                *a += v;
            }
            k += 1;
        }
        sums.extend_from_slice(&acc);
    }
    Ok(PartialSumPath { grid: sorted, d, sums })
}
