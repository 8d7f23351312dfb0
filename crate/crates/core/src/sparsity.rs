//! Sparse approximations of the price-response matrix and the decay
//! bounds that make them accurate.

use std::fmt;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

/// Entries below this magnitude count as zero for the sparsity cap.
pub const NONZERO_TOL: f64 = 1e-14;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Construction {
    /// Keep |ℓ(i) − ℓ(j)| ≤ (s − 1)/2 under the given labels of the rows.
    Banded { labels: Vec<usize> },
    /// Greedy global magnitude order under per-row and per-column caps.
    Magnitude,
}

impl Construction {
    pub fn tag(&self) -> &'static str {
        match self {
            Construction::Banded { .. } => "banded",
            Construction::Magnitude => "magnitude",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SparseApproximation {
    #[serde(with = "linalg::rows")]
    pub w_bar: DMatrix<f64>,
    pub s: usize,
    pub err_1: f64,
    pub err_inf: f64,
    pub err_2: f64,
    pub construction: String,
}

impl SparseApproximation {
    fn new(target: &DMatrix<f64>, w_bar: DMatrix<f64>, s: usize, construction: &str) -> Self {
        let diff = target - &w_bar;
        Self {
            err_1: linalg::norm_1(&diff),
            err_inf: linalg::norm_inf(&diff),
            err_2: linalg::norm_2(&diff),
            w_bar,
            s,
            construction: construction.to_string(),
        }
    }

    /// r₁ = max(‖H⁻¹ − W̄‖₁, ‖H⁻¹ − W̄‖∞).
    pub fn r1(&self) -> f64 {
        self.err_1.max(self.err_inf)
    }
}

/// Largest number of nonzeros in any row or column.
pub fn max_nonzeros(w: &DMatrix<f64>) -> usize {
    let count = |it: &mut dyn Iterator<Item = f64>| it.filter(|x| x.abs() >= NONZERO_TOL).count();
    let rows = w.row_iter().map(|r| count(&mut r.iter().cloned())).max().unwrap_or(0);
    let cols = w.column_iter().map(|c| count(&mut c.iter().cloned())).max().unwrap_or(0);
    rows.max(cols)
}

pub fn banded_truncation(h_inv: &DMatrix<f64>, labels: &[usize], s: usize) -> Result<SparseApproximation> {
    let q = h_inv.nrows();
    if !h_inv.is_square() {
        return Err(Error::dimension("H⁻¹ (square)", q, h_inv.ncols()));
    }
    if labels.len() != q {
        return Err(Error::dimension("labels", q, labels.len()));
    }
    if s == 0 {
        return Err(Error::Config("sparsity level s must be at least 1".into()));
    }
    let half = (s - 1) / 2;
    let w = DMatrix::from_fn(q, q, |i, j| {
        if labels[i].abs_diff(labels[j]) <= half {
            h_inv[(i, j)]
        } else {
            0.0
        }
    });
    Ok(SparseApproximation::new(h_inv, w, s, "banded"))
}

/// Greedy magnitude keep in layers: the support for cap s is the support for
/// cap s − 1 plus a greedy pass in global magnitude order under cap s. The
/// supports are nested in s, so r₁ is nonincreasing in s.
pub fn magnitude_truncation(h_inv: &DMatrix<f64>, s: usize) -> Result<SparseApproximation> {
    let (r, c) = h_inv.shape();
    if s == 0 {
        return Err(Error::Config("sparsity level s must be at least 1".into()));
    }
    let mut order: Vec<(usize, usize)> = (0..r).flat_map(|i| (0..c).map(move |j| (i, j))).collect();
    // ties broken by position so the result does not depend on sort internals
    order.sort_by(|&(a, b), &(x, y)| {
        h_inv[(x, y)]
            .abs()
            .total_cmp(&h_inv[(a, b)].abs())
            .then((a, b).cmp(&(x, y)))
    });
    let mut row_n = vec![0usize; r];
    let mut col_n = vec![0usize; c];
    let mut kept = vec![false; r * c];
    let mut w = DMatrix::zeros(r, c);
    for cap in 1..=s.min(r.max(c)) {
        for &(i, j) in &order {
            if !kept[i * c + j] && row_n[i] < cap && col_n[j] < cap {
                kept[i * c + j] = true;
                w[(i, j)] = h_inv[(i, j)];
                row_n[i] += 1;
                col_n[j] += 1;
            }
        }
    }
    Ok(SparseApproximation::new(h_inv, w, s, "magnitude"))
}

pub fn truncate(h_inv: &DMatrix<f64>, construction: &Construction, s: usize) -> Result<SparseApproximation> {
    match construction {
        Construction::Banded { labels } => banded_truncation(h_inv, labels, s),
        Construction::Magnitude => magnitude_truncation(h_inv, s),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProfileRow {
    pub construction: String,
    pub s_or_k: usize,
    pub err1: f64,
    pub errinf: f64,
    pub err2: f64,
}

/// Approximation errors over a grid of sparsity levels. Fails if r₁ grows
/// along the (sorted) grid beyond rounding.
pub fn measure_sparsity_profile(
    h_inv: &DMatrix<f64>,
    construction: &Construction,
    s_grid: &[usize],
) -> Result<Vec<ProfileRow>> {
    if s_grid.is_empty() {
        return Err(Error::Config("empty sparsity grid".into()));
    }
    let mut grid = s_grid.to_vec();
    grid.sort_unstable();
    grid.dedup();
    let mut rows = Vec::with_capacity(grid.len());
    let mut last_r1 = f64::INFINITY;
    let scale = linalg::norm_1(h_inv).max(linalg::norm_inf(h_inv)).max(1.0);
    for s in grid {
        let approx = truncate(h_inv, construction, s)?;
        let r1 = approx.r1();
        if r1 > last_r1 + 1e-12 * scale {
            return Err(Error::Numeric(format!(
                "{} truncation error increased from {last_r1:.3e} to {r1:.3e} at s = {s}",
                construction.tag()
            )));
        }
        last_r1 = r1;
        rows.push(ProfileRow {
            construction: construction.tag().to_string(),
            s_or_k: s,
            err1: approx.err_1,
            errinf: approx.err_inf,
            err2: approx.err_2,
        });
    }
    Ok(rows)
}

pub fn write_profile_csv(path: &Path, rows: &[ProfileRow]) -> Result<()> {
    crate::io::write_csv(path, rows)
}

/// Degree-k Chebyshev interpolant of x ↦ 1/x on [lo, hi] and its value at a
/// matrix argument.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChebyshevApprox {
    pub degree: usize,
    pub lo: f64,
    pub hi: f64,
    /// Coefficients of T_0, …, T_k in the variable mapped to [−1, 1].
    pub coefficients: Vec<f64>,
    #[serde(with = "linalg::rows")]
    pub approx: DMatrix<f64>,
}

impl ChebyshevApprox {
    pub fn eval_scalar(&self, x: f64) -> f64 {
        if self.hi == self.lo {
            return self.coefficients[0];
        }
        let t = (2.0 * x - self.lo - self.hi) / (self.hi - self.lo);
        let (mut b1, mut b2) = (0.0, 0.0);
        for &c in self.coefficients.iter().skip(1).rev() {
            let b0 = c + 2.0 * t * b1 - b2;
            b2 = b1;
            b1 = b0;
        }
        self.coefficients[0] + t * b1 - b2
    }

    /// Block of g_k(M) on the given rows and columns.
    pub fn block(&self, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
        linalg::submatrix(&self.approx, rows, cols)
    }
}

/// Interval [ζ, 4b̄ − ζ] containing the singular values of M.
pub fn spectral_interval(zeta: f64, b_max: f64) -> Result<(f64, f64)> {
    if !(zeta > 0.0) || !(b_max > 0.0) || 4.0 * b_max - zeta < zeta {
        return Err(Error::Domain(format!(
            "need 0 < ζ ≤ 2b̄, got ζ = {zeta}, b̄ = {b_max}"
        )));
    }
    Ok((zeta, 4.0 * b_max - zeta))
}

/// Geometric rate q = (√r − 1)/(√r + 1), r = (4b̄ − ζ)/ζ.
pub fn chebyshev_rate(zeta: f64, b_max: f64) -> Result<f64> {
    let (lo, hi) = spectral_interval(zeta, b_max)?;
    let r = (hi / lo).sqrt();
    Ok((r - 1.0) / (r + 1.0))
}

pub fn chebyshev_inverse_approx(m: &DMatrix<f64>, zeta: f64, b_max: f64, degree: i64) -> Result<ChebyshevApprox> {
    if degree < 0 {
        return Err(Error::Domain(format!("polynomial degree must be ≥ 0, got {degree}")));
    }
    if !m.is_square() {
        return Err(Error::dimension("M (square)", m.nrows(), m.ncols()));
    }
    let k = degree as usize;
    let (lo, hi) = spectral_interval(zeta, b_max)?;
    let f = |x: f64| 1.0 / x;
    let n = m.nrows();

    if hi == lo {
        // single-point interval: the interpolant is the constant 1/ζ
        let mut coefficients = vec![0.0; k + 1];
        coefficients[0] = f(lo);
        return Ok(ChebyshevApprox {
            degree: k,
            lo,
            hi,
            coefficients,
            approx: DMatrix::identity(n, n) * f(lo),
        });
    }

    let nodes = k + 1;
    let mid = 0.5 * (hi + lo);
    let half = 0.5 * (hi - lo);
    let angles: Vec<f64> = (0..nodes)
        .map(|i| std::f64::consts::PI * (i as f64 + 0.5) / nodes as f64)
        .collect();
    let values: Vec<f64> = angles.iter().map(|&th| f(mid + half * th.cos())).collect();
    let mut coefficients: Vec<f64> = (0..nodes)
        .map(|j| {
            let s: f64 = angles
                .iter()
                .zip(&values)
                .map(|(&th, &v)| v * (j as f64 * th).cos())
                .sum();
            2.0 * s / nodes as f64
        })
        .collect();
    coefficients[0] *= 0.5;

    // Clenshaw on T = (2M − (lo + hi)I)/(hi − lo)
    let id = DMatrix::<f64>::identity(n, n);
    let t = (m * 2.0 - &id * (lo + hi)) / (hi - lo);
    let mut b1 = DMatrix::zeros(n, n);
    let mut b2 = DMatrix::zeros(n, n);
    for &c in coefficients.iter().skip(1).rev() {
        let b0 = &id * c + (&t * &b1) * 2.0 - &b2;
        b2 = b1;
        b1 = b0;
    }
    let approx = &id * coefficients[0] + &t * &b1 - &b2;
    Ok(ChebyshevApprox {
        degree: k,
        lo,
        hi,
        coefficients,
        approx,
    })
}

/// ‖M⁻¹ − g_k(M)‖₂ for each degree in `degrees`.
pub fn chebyshev_profile(
    m: &DMatrix<f64>,
    m_inv: &DMatrix<f64>,
    zeta: f64,
    b_max: f64,
    degrees: &[usize],
) -> Result<Vec<ProfileRow>> {
    degrees
        .iter()
        .map(|&k| {
            let g = chebyshev_inverse_approx(m, zeta, b_max, k as i64)?;
            let diff = m_inv - &g.approx;
            Ok(ProfileRow {
                construction: "chebyshev".into(),
                s_or_k: k,
                err1: linalg::norm_1(&diff),
                errinf: linalg::norm_inf(&diff),
                err2: linalg::norm_2(&diff),
            })
        })
        .collect()
}

/// Constants of the exponential off-diagonal decay bound for m-banded
/// networks: |(H⁻¹)_ij| ≤ C̃₁ λ₁^{|ℓ(i) − ℓ(j)|}.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayBound {
    pub c1: f64,
    pub lambda1: f64,
}

impl DecayBound {
    pub fn banded(bandwidth: usize, b_max: f64, zeta: f64) -> Result<Self> {
        if bandwidth == 0 {
            return Err(Error::Config("bandwidth must be at least 1".into()));
        }
        if !(zeta > 0.0 && zeta < 2.0 * b_max) {
            return Err(Error::Domain(format!("need 0 < ζ < 2b̄, got ζ = {zeta}, b̄ = {b_max}")));
        }
        let m = bandwidth as f64;
        let c1 = 4.0 * (m + 1.0) * b_max * (4.0 * b_max - zeta) / (zeta * zeta * (2.0 * b_max - zeta));
        let lambda1 = ((2.0 * b_max - zeta) / (2.0 * b_max)).powf(1.0 / m);
        Ok(Self { c1, lambda1 })
    }

    pub fn at(&self, distance: usize) -> f64 {
        self.c1 * self.lambda1.powi(distance as i32)
    }

    /// Worst ratio |(H⁻¹)_ij| / bound over all entries; ≤ 1 when the bound holds.
    pub fn worst_ratio(&self, h_inv: &DMatrix<f64>, labels: &[usize]) -> f64 {
        let q = h_inv.nrows();
        let mut worst = 0.0f64;
        for i in 0..q {
            for j in 0..q {
                let d = labels[i].abs_diff(labels[j]);
                worst = worst.max(h_inv[(i, j)].abs() / self.at(d));
            }
        }
        worst
    }
}

/// Largest |(H⁻¹)_ij| at each label distance 0, 1, ….
pub fn decay_profile(h_inv: &DMatrix<f64>, labels: &[usize]) -> Vec<f64> {
    let q = h_inv.nrows();
    let max_d = (0..q)
        .flat_map(|i| (0..q).map(move |j| (i, j)))
        .map(|(i, j)| labels[i].abs_diff(labels[j]))
        .max()
        .unwrap_or(0);
    let mut out = vec![0.0f64; max_d + 1];
    for i in 0..q {
        for j in 0..q {
            let d = labels[i].abs_diff(labels[j]);
            out[d] = out[d].max(h_inv[(i, j)].abs());
        }
    }
    out
}

/// Least-squares slope and intercept of y on x.
pub fn linear_fit(x: &[f64], y: &[f64]) -> Result<(f64, f64)> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::Config(format!("fit needs ≥ 2 paired points, got {} and {}", x.len(), y.len())));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::Config("fit needs at least two distinct abscissae".into()));
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    Ok((slope, my - slope * mx))
}

/// Fitted per-step ratio of a geometrically decaying sequence: exp of the
/// slope of log(err) against the step. Nonpositive values are skipped.
pub fn fit_geometric_rate(steps: &[f64], errors: &[f64]) -> Result<f64> {
    let (x, y): (Vec<f64>, Vec<f64>) = steps
        .iter()
        .zip(errors)
        .filter(|(_, &e)| e > 0.0)
        .map(|(&s, &e)| (s, e.ln()))
        .unzip();
    Ok(linear_fit(&x, &y)?.0.exp())
}

/// Slope of log|value| against log(1 + distance), skipping zeros.
pub fn fit_power_slope(distances: &[f64], values: &[f64]) -> Result<f64> {
    let (x, y): (Vec<f64>, Vec<f64>) = distances
        .iter()
        .zip(values)
        .filter(|(_, &v)| v.abs() > 0.0)
        .map(|(&d, &v)| ((1.0 + d).ln(), v.abs().ln()))
        .unzip();
    Ok(linear_fit(&x, &y)?.0)
}

/// Sparsity level (n/log q)^{1/(2θ)} for polynomially decaying responses.
pub fn polynomial_decay_level(n: usize, q: usize, theta: f64) -> f64 {
    (n as f64 / (q as f64).ln()).powf(1.0 / (2.0 * theta))
}

/// (2^θ/(θ − 1))·C·(log q/n)^{(θ−1)/(2θ)}.
pub fn polynomial_decay_bound(n: usize, q: usize, theta: f64, c: f64) -> f64 {
    2f64.powf(theta) / (theta - 1.0) * c * ((q as f64).ln() / n as f64).powf((theta - 1.0) / (2.0 * theta))
}

/// Sparsity level C·max{m, log n} for m-banded responses.
pub fn banded_level(c: f64, bandwidth: usize, n: usize) -> f64 {
    c * (bandwidth as f64).max((n as f64).ln())
}

impl fmt::Display for ProfileRow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {:>4}  err1 {:.3e}  errinf {:.3e}  err2 {:.3e}",
            self.construction, self.s_or_k, self.err1, self.errinf, self.err2
        )
    }
}
