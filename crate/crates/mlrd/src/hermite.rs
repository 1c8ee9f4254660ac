//! Hermite machinery: probabilists' polynomials, Gauss-Hermite expansion
//! coefficients, rank detection, coordinatewise subordination, multivariate
//! Hermite polynomials (Rodrigues form), and the addition identity.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matalg::SquareMatrix;
use crate::model::{ProcessKind, ProcessSpec};
use crate::simulate::SamplePath;

/// Default rank-detection tolerance (quadrature noise floor at 128 nodes).
pub const RANK_TOL: f64 = 1e-10;

/// Probabilists' Hermite polynomial `H_l(x)` via the three-term recurrence
/// `H_{l+1} = x H_l - l H_{l-1}`.
pub fn hermite_poly(l: usize, x: f64) -> f64 {
    match l {
        0 => 1.0,
        1 => x,
        _ => {
            let mut hm = 1.0;
            let mut h = x;
            for k in 1..l {
                let next = x * h - k as f64 * hm;
                hm = h;
                h = next;
            }
            h
        }
    }
}

/// Gauss-Hermite rule adapted to the standard normal weight: `E[f(Z)]` is
/// approximated by `sum_i w_i f(x_i)`.
///
/// Nodes and weights come from the Golub-Welsch eigenproblem of the Jacobi
/// matrix for the physicists' weight, then rescaled by `sqrt(2)` and
/// `1/sqrt(pi)`.
#[derive(Debug, Clone)]
pub struct GaussHermiteRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussHermiteRule {
    pub fn new(order: usize) -> Result<Self> {
        if order < 1 {
            return Err(Error::Domain("quadrature order must be >= 1".into()));
        }
        let mut jacobi = DMatrix::<f64>::zeros(order, order);
        for k in 1..order {
            let v = (k as f64 / 2.0).sqrt();
            jacobi[(k - 1, k)] = v;
            jacobi[(k, k - 1)] = v;
        }
        let se = nalgebra::SymmetricEigen::new(jacobi);
        let mut pairs: Vec<(f64, f64)> = (0..order)
            .map(|i| {
                let node = se.eigenvalues[i];
                let w0 = se.eigenvectors[(0, i)];
                (node, w0 * w0)
            })
            .collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        // physicists' nodes x, weights sqrt(pi) v0^2; standard-normal form
        // uses z = sqrt(2) x and E[f] = (1/sqrt(pi)) sum w f(sqrt(2) x)
        let nodes = pairs.iter().map(|(x, _)| std::f64::consts::SQRT_2 * x).collect();
        let weights = pairs.iter().map(|(_, w)| w).copied().collect();
        Ok(Self { nodes, weights })
    }

    /// `E[f(Z)]` for `Z` standard normal.
    pub fn expect<F: Fn(f64) -> f64>(&self, f: F) -> Result<f64> {
        let mut acc = 0.0;
        for (x, w) in self.nodes.iter().zip(&self.weights) {
            let v = f(*x);
            if !v.is_finite() {
                return Err(Error::Evaluation(format!("non-finite integrand at node {x}")));
            }
            acc += w * v;
        }
        Ok(acc)
    }
}

/// Hermite expansion coefficients `h_l = E[G(Z) H_l(Z)] / l!` for
/// `l = 0..=l_max`, by Gauss-Hermite quadrature.
///
/// The quadrature order must be at least `2 l_max` so polynomial integrands
/// of the orthogonality tests are exact.
pub fn hermite_coefficients<F: Fn(f64) -> f64>(g: F, l_max: usize, quad_order: usize) -> Result<Vec<f64>> {
    if quad_order < 2 * l_max.max(1) {
        return Err(Error::Domain(format!(
            "quadrature order {quad_order} must be at least 2 l_max = {}",
            2 * l_max
        )));
    }
    let rule = GaussHermiteRule::new(quad_order)?;
    let mut out = Vec::with_capacity(l_max + 1);
    let mut fact = 1.0f64;
    for l in 0..=l_max {
        if l > 1 {
            fact *= l as f64;
        }
        let v = rule.expect(|x| g(x) * hermite_poly(l, x))?;
        out.push(v / fact);
    }
    Ok(out)
}

/// Smallest `l >= 1` with `|h_l| > tol`.
pub fn hermite_rank(coeffs: &[f64], tol: f64) -> Result<usize> {
    if tol <= 0.0 {
        return Err(Error::Domain("rank tolerance must be positive".into()));
    }
    for (l, h) in coeffs.iter().enumerate().skip(1) {
        if h.abs() > tol {
            return Ok(l);
        }
    }
    Err(Error::Domain(format!(
        "Hermite rank undetermined: no coefficient above {tol} up to l_max = {}",
        coeffs.len().saturating_sub(1)
    )))
}

/// Named coordinatewise subordination functions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubordinationMap {
    /// `G(x) = x` (rank 1).
    Identity,
    /// `G(x) = x^2 - 1 = H_2(x)` (rank 2).
    SquareMinusOne,
    /// `G(x) = H_l(x)`.
    Hermite(usize),
    /// `G(x) = x^3` (rank 1, `h_1 = 3`).
    Cube,
    /// `G(x) = |x|` (rank 2 after centering).
    Abs,
    /// `G(x) = cos(x)` (rank 2 after centering).
    Cos,
}

impl SubordinationMap {
    pub fn eval(&self, x: f64) -> f64 {
        match self {
            SubordinationMap::Identity => x,
            SubordinationMap::SquareMinusOne => x * x - 1.0,
            SubordinationMap::Hermite(l) => hermite_poly(*l, x),
            SubordinationMap::Cube => x * x * x,
            SubordinationMap::Abs => x.abs(),
            SubordinationMap::Cos => x.cos(),
        }
    }
}

/// Per-coordinate expansion coefficients with the shared Hermite rank.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HermiteCoefficients {
    /// `coeffs[i][l] = h_{l,i}` for coordinate `i`.
    pub coeffs: Vec<Vec<f64>>,
    /// Shared rank `tau` of all coordinates.
    pub rank: usize,
    pub quad_order: usize,
    pub tol: f64,
}

impl HermiteCoefficients {
    /// Expands each coordinate map and checks that all coordinates share the
    /// same Hermite rank.
    pub fn from_maps(maps: &[SubordinationMap], l_max: usize, quad_order: usize, tol: f64) -> Result<Self> {
        if maps.is_empty() {
            return Err(Error::Domain("at least one coordinate map required".into()));
        }
        let mut coeffs = Vec::with_capacity(maps.len());
        let mut ranks = Vec::with_capacity(maps.len());
        for map in maps {
            let c = hermite_coefficients(|x| map.eval(x), l_max, quad_order)?;
            ranks.push(hermite_rank(&c, tol)?);
            coeffs.push(c);
        }
        let rank = ranks[0];
        if ranks.iter().any(|r| *r != rank) {
            return Err(Error::Hypothesis(format!(
                "coordinates must share the same Hermite rank, got {ranks:?}"
            )));
        }
        Ok(Self { coeffs, rank, quad_order, tol })
    }

    /// Leading coefficients `h_{tau, i}`.
    pub fn leading(&self) -> Vec<f64> {
        self.coeffs.iter().map(|c| c[self.rank]).collect()
    }

    /// Centering constants `h_{0, i}`.
    pub fn centering(&self) -> Vec<f64> {
        self.coeffs.iter().map(|c| c[0]).collect()
    }
}

/// Applies `G` coordinatewise and centers by the quadrature means
/// `h_{0,i} = E G_i(Z)`; requires a path from a Gaussian spec with unit
/// marginal variances.
pub fn apply_subordination(
    path: &SamplePath,
    spec: &ProcessSpec,
    maps: &[SubordinationMap],
    quad_order: usize,
) -> Result<SamplePath> {
    if spec.kind != ProcessKind::GaussianDiagonal {
        return Err(Error::Contract(
            "subordination requires a gaussian_diagonal source spec (unit marginals)".into(),
        ));
    }
    if spec.digest() != path.spec_digest {
        return Err(Error::Contract("path was not generated by the given spec".into()));
    }
    if maps.len() != path.d {
        return Err(Error::Domain("one map per coordinate required".into()));
    }
    let rule = GaussHermiteRule::new(quad_order)?;
    let mut centers = Vec::with_capacity(maps.len());
    for map in maps {
        centers.push(rule.expect(|x| map.eval(x))?);
    }
    let mut values = Vec::with_capacity(path.values.len());
    for k in 0..path.n {
        for (i, map) in maps.iter().enumerate() {
            values.push(map.eval(path.value(k, i)) - centers[i]);
        }
    }
    Ok(SamplePath { values, ..path.clone() })
}

/// Multi-index `q = (q_1, ..., q_d)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MultiIndex {
    pub q: Vec<usize>,
}

impl MultiIndex {
    pub fn new(q: Vec<usize>) -> Self {
        Self { q }
    }

    pub fn order(&self) -> usize {
        self.q.iter().sum()
    }
}

/// Sparse multivariate polynomial in the variables `y_1..y_d`, used to carry
/// the Rodrigues recursion exactly.
#[derive(Debug, Clone)]
struct Poly {
    terms: BTreeMap<Vec<usize>, f64>,
    dim: usize,
}

impl Poly {
    fn one(dim: usize) -> Self {
        let mut terms = BTreeMap::new();
        terms.insert(vec![0; dim], 1.0);
        Self { terms, dim }
    }

    fn add_term(&mut self, expo: Vec<usize>, coef: f64) {
        if coef == 0.0 {
            return;
        }
        *self.terms.entry(expo).or_insert(0.0) += coef;
    }

    /// `y_i * self`
    fn mul_var(&self, i: usize) -> Self {
        let mut out = Self { terms: BTreeMap::new(), dim: self.dim };
        for (expo, coef) in &self.terms {
            let mut e = expo.clone();
            e[i] += 1;
            out.add_term(e, *coef);
        }
        out
    }

    /// `d self / d y_j`
    fn diff_var(&self, j: usize) -> Self {
        let mut out = Self { terms: BTreeMap::new(), dim: self.dim };
        for (expo, coef) in &self.terms {
            if expo[j] == 0 {
                continue;
            }
            let mut e = expo.clone();
            e[j] -= 1;
            out.add_term(e, coef * expo[j] as f64);
        }
        out
    }

    fn axpy(&mut self, a: f64, other: &Self) {
        for (expo, coef) in &other.terms {
            self.add_term(expo.clone(), a * coef);
        }
    }

    fn eval(&self, y: &[f64]) -> f64 {
        let mut acc = 0.0;
        for (expo, coef) in &self.terms {
            let mut t = *coef;
            for (i, e) in expo.iter().enumerate() {
                for _ in 0..*e {
                    t *= y[i];
                }
            }
            acc += t;
        }
        acc
    }
}

/// Multivariate Hermite polynomial `H_q(x, Sigma)` in Rodrigues form,
/// `(-1)^{|q|} / phi_Sigma(x) * d^q phi_Sigma(x)`, for orders `|q| <= 4`.
///
/// With `y = Sigma^{-1} x` the recursion
/// `H_{q + e_i} = y_i H_q - sum_j (Sigma^{-1})_{ij} dH_q/dy_j`
/// carries the exact differentiation of the Gaussian density; at
/// `Sigma = I` it factorizes into univariate polynomials.
pub fn multivariate_hermite(q: &MultiIndex, x: &[f64], sigma: &SquareMatrix) -> Result<f64> {
    let d = sigma.dim();
    if q.q.len() != d || x.len() != d {
        return Err(Error::Domain("index/point/covariance dimensions differ".into()));
    }
    if q.order() > 4 {
        return Err(Error::Domain(format!(
            "orders above 4 are unsupported, got |q| = {}",
            q.order()
        )));
    }
    let k = sigma.inverse().map_err(|_| {
        Error::Factorization("covariance must be invertible for the Rodrigues form".into())
    })?;
    let mut poly = Poly::one(d);
    for (i, qi) in q.q.iter().enumerate() {
        for _ in 0..*qi {
            // H_{q+e_i} = y_i H_q - sum_j K_ij dH_q/dy_j
            let mut next = poly.mul_var(i);
            for j in 0..d {
                let kij = k.get(i, j);
                if kij != 0.0 {
                    next.axpy(-kij, &poly.diff_var(j));
                }
            }
            poly = next;
        }
    }
    let y = k.mul_vec(x);
    Ok(poly.eval(&y))
}

/// Gaussian density with covariance `Sigma` (used by the finite-difference
/// oracle in tests and the CLI's hermite subcommand).
pub fn gaussian_density(x: &[f64], sigma: &SquareMatrix) -> Result<f64> {
    let d = sigma.dim();
    let k = sigma
        .inverse()
        .map_err(|_| Error::Factorization("covariance must be invertible".into()))?;
    let det = sigma.determinant();
    if det <= 0.0 {
        return Err(Error::Factorization("covariance must be positive definite".into()));
    }
    let y = k.mul_vec(x);
    let quad: f64 = x.iter().zip(&y).map(|(a, b)| a * b).sum();
    let norm = (2.0 * std::f64::consts::PI).powf(d as f64 / 2.0) * det.sqrt();
    Ok((-0.5 * quad).exp() / norm)
}

/// Residual of the Hermite addition identity
/// `H_tau(sum_j a_j x_j) = sum_{|p| = tau} multinomial(tau; p) prod_j a_j^{p_j} H_{p_j}(x_j)`
/// for weights with `sum a_j^2 = 1`.
pub fn hermite_addition_check(tau: usize, a: &[f64], x: &[f64]) -> Result<f64> {
    if a.len() != x.len() || a.is_empty() {
        return Err(Error::Domain("weights and points must have equal positive length".into()));
    }
    if tau > 8 {
        return Err(Error::Domain("tau above 8 is unsupported".into()));
    }
    let norm: f64 = a.iter().map(|v| v * v).sum();
    if (norm - 1.0).abs() >= 1e-12 {
        return Err(Error::Domain(format!(
            "weights must satisfy sum a_j^2 = 1, got {norm}"
        )));
    }
    let s: f64 = a.iter().zip(x).map(|(ai, xi)| ai * xi).sum();
    let lhs = hermite_poly(tau, s);

    let d = a.len();
    let mut rhs = 0.0;
    let mut comp = vec![0usize; d];
    // enumerate compositions of tau into d nonnegative parts
    fn rec(
        idx: usize,
        remaining: usize,
        comp: &mut Vec<usize>,
        d: usize,
        tau: usize,
        a: &[f64],
        x: &[f64],
        acc: &mut f64,
    ) {
        if idx == d - 1 {
            comp[idx] = remaining;
            let mut coef = factorial(tau);
            let mut term = 1.0;
            for j in 0..d {
                coef /= factorial(comp[j]);
                term *= a[j].powi(comp[j] as i32) * hermite_poly(comp[j], x[j]);
            }
            *acc += coef * term;
            return;
        }
        for p in 0..=remaining {
            comp[idx] = p;
            rec(idx + 1, remaining - p, comp, d, tau, a, x, acc);
        }
    }
    rec(0, tau, &mut comp, d, tau, a, x, &mut rhs);
    Ok((lhs - rhs).abs())
}

fn factorial(n: usize) -> f64 {
    (2..=n).map(|k| k as f64).product::<f64>().max(1.0)
}
