//! Consumption equilibria, taste shocks and simulated panels.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::network::{DerivedMatrices, NetworkInstance};
use crate::stats::RngStream;

pub const DEFAULT_BR_TOL: f64 = 1e-10;
pub const DEFAULT_BR_MAX_ITER: usize = 100_000;

/// Tolerance on the row-by-row affine decomposition check.
const IDENTITY_TOL: f64 = 1e-9;
const MAX_SHOCK_TRIES: usize = 1000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShockFamily {
    GaussianTruncated,
    Uniform,
}

/// Equicorrelated shocks `ξ_i = σ(√ρ·c + √(1−ρ)·e_i)` with a common factor c
/// and idiosyncratic e_i, both of unit variance. Draws with any
/// `|ξ_i| > truncation·min_i(a_i − p̄)` are rejected as a whole vector, which
/// keeps the distribution symmetric (mean zero) and `a_i + ξ_i > p̄`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShockModel {
    pub family: ShockFamily,
    pub sigma: f64,
    #[serde(default = "default_rho")]
    pub rho: f64,
    #[serde(default = "default_truncation")]
    pub truncation: f64,
}

fn default_rho() -> f64 {
    0.2
}

fn default_truncation() -> f64 {
    0.99
}

impl Default for ShockModel {
    fn default() -> Self {
        Self {
            family: ShockFamily::GaussianTruncated,
            sigma: 0.15,
            rho: default_rho(),
            truncation: default_truncation(),
        }
    }
}

impl ShockModel {
    pub fn none() -> Self {
        Self {
            sigma: 0.0,
            ..Self::default()
        }
    }

    pub fn check(&self) -> Result<()> {
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(Error::Config(format!("shock sigma {} must be ≥ 0", self.sigma)));
        }
        if !(0.0..=1.0).contains(&self.rho) {
            return Err(Error::Config(format!("shock rho {} outside [0,1]", self.rho)));
        }
        if !(self.truncation > 0.0 && self.truncation < 1.0) {
            return Err(Error::Config(format!(
                "shock truncation {} must lie in (0,1)",
                self.truncation
            )));
        }
        Ok(())
    }

    /// Bound on |ξ_i| for a given instance.
    pub fn bound(&self, a: &DVector<f64>, p_bar: f64) -> f64 {
        self.truncation * a.iter().map(|&ai| ai - p_bar).fold(f64::INFINITY, f64::min)
    }

    pub fn draw(&self, rng: &mut impl Rng, n: usize, bound: f64) -> Result<DVector<f64>> {
        if self.sigma == 0.0 {
            return Ok(DVector::zeros(n));
        }
        let common_w = self.rho.sqrt();
        let idio_w = (1.0 - self.rho).sqrt();
        for _ in 0..MAX_SHOCK_TRIES {
            let (c, e): (f64, Vec<f64>) = match self.family {
                ShockFamily::GaussianTruncated => (
                    rng.sample(StandardNormal),
                    (0..n).map(|_| rng.sample(StandardNormal)).collect(),
                ),
                ShockFamily::Uniform => {
                    // uniform on [−√3, √3] has unit variance
                    let s3 = 3f64.sqrt();
                    (
                        rng.gen_range(-s3..=s3),
                        (0..n).map(|_| rng.gen_range(-s3..=s3)).collect(),
                    )
                }
            };
            let xi = DVector::from_iterator(
                n,
                e.iter().map(|&ei| self.sigma * (common_w * c + idio_w * ei)),
            );
            if xi.amax() < bound {
                return Ok(xi);
            }
        }
        Err(Error::Config(format!(
            "shock scale {} too large for truncation bound {bound:.4}: {MAX_SHOCK_TRIES} draws rejected",
            self.sigma
        )))
    }
}

/// Distribution of observable prices, i.i.d. across coordinates and periods.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum PriceSampler {
    /// Uniform on `[low·p̄, high·p̄]`.
    Uniform { low: f64, high: f64 },
    /// `low·p̄` or `high·p̄` with equal probability.
    TwoPoint { low: f64, high: f64 },
}

impl Default for PriceSampler {
    fn default() -> Self {
        PriceSampler::Uniform { low: 0.2, high: 1.0 }
    }
}

impl PriceSampler {
    pub fn check(&self) -> Result<()> {
        let (PriceSampler::Uniform { low, high } | PriceSampler::TwoPoint { low, high }) = *self;
        if !(0.0 <= low && low < high && high <= 1.0) {
            return Err(Error::Config(format!(
                "price sampler needs 0 ≤ low < high ≤ 1 (fractions of p̄), got [{low}, {high}]"
            )));
        }
        Ok(())
    }

    pub fn draw(&self, rng: &mut impl Rng, n: usize, p_bar: f64) -> DVector<f64> {
        match *self {
            PriceSampler::Uniform { low, high } => {
                DVector::from_fn(n, |_, _| p_bar * rng.gen_range(low..=high))
            }
            PriceSampler::TwoPoint { low, high } => DVector::from_fn(n, |_, _| {
                if rng.gen::<bool>() {
                    p_bar * high
                } else {
                    p_bar * low
                }
            }),
        }
    }
}

/// Observable panel: row t holds period t's prices and consumptions.
#[derive(Clone, Debug, PartialEq)]
pub struct PanelData {
    pub observable_ids: Vec<usize>,
    pub prices: DMatrix<f64>,
    pub consumption: DMatrix<f64>,
    pub shock_meta: serde_json::Value,
    pub seed: Option<u64>,
}

impl PanelData {
    pub fn new(observable_ids: Vec<usize>, prices: DMatrix<f64>, consumption: DMatrix<f64>) -> Result<Self> {
        let panel = Self {
            observable_ids,
            prices,
            consumption,
            shock_meta: serde_json::Value::Null,
            seed: None,
        };
        panel.check_shapes()?;
        Ok(panel)
    }

    pub fn n(&self) -> usize {
        self.prices.nrows()
    }

    pub fn n_observable(&self) -> usize {
        self.prices.ncols()
    }

    fn check_shapes(&self) -> Result<()> {
        let q = self.observable_ids.len();
        if self.prices.ncols() != q {
            return Err(Error::dimension("panel price columns", q, self.prices.ncols()));
        }
        if self.consumption.shape() != self.prices.shape() {
            return Err(Error::dimension(
                "panel consumption rows",
                self.prices.nrows(),
                self.consumption.nrows(),
            ));
        }
        Ok(())
    }

    /// Checks `0 ≤ p ≤ p̄` and `y > 0` on every entry.
    pub fn check_invariants(&self, p_bar: f64) -> Result<()> {
        self.check_shapes()?;
        if let Some(p) = self.prices.iter().find(|&&p| !(0.0..=p_bar).contains(&p)) {
            return Err(Error::ModelViolation(format!("panel price {p} outside [0, {p_bar}]")));
        }
        if let Some(y) = self.consumption.iter().find(|&&y| !(y > 0.0)) {
            return Err(Error::ModelViolation(format!("non-positive consumption {y} in panel")));
        }
        Ok(())
    }

    pub fn to_file(&self) -> PanelFile {
        PanelFile {
            n: self.n(),
            observable_ids: self.observable_ids.clone(),
            prices: linalg::to_row_major(&self.prices),
            consumption: linalg::to_row_major(&self.consumption),
            shock_meta: self.shock_meta.clone(),
            seed: self.seed,
        }
    }

    pub fn from_file(f: PanelFile) -> Result<Self> {
        let q = f.observable_ids.len();
        let prices = linalg::from_row_major(f.n, q, &f.prices, "panel prices")?;
        let consumption = linalg::from_row_major(f.n, q, &f.consumption, "panel consumption")?;
        let panel = Self {
            observable_ids: f.observable_ids,
            prices,
            consumption,
            shock_meta: f.shock_meta,
            seed: f.seed,
        };
        panel.check_shapes()?;
        Ok(panel)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        crate::io::write_json(path, &self.to_file())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_file(crate::io::read_json(path)?)
    }

    pub fn csv_rows(&self) -> Vec<PanelCsvRow> {
        let mut rows = Vec::with_capacity(self.n() * self.n_observable());
        for t in 0..self.n() {
            for (k, &node) in self.observable_ids.iter().enumerate() {
                rows.push(PanelCsvRow {
                    t,
                    node,
                    price: self.prices[(t, k)],
                    consumption: self.consumption[(t, k)],
                });
            }
        }
        rows
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        crate::io::write_csv(path, &self.csv_rows())
    }

    /// Panel with rows reordered by `order` (a permutation of 0..n).
    pub fn reordered(&self, order: &[usize]) -> Self {
        let q = self.n_observable();
        let mut out = self.clone();
        for (dst, &src) in order.iter().enumerate() {
            for k in 0..q {
                out.prices[(dst, k)] = self.prices[(src, k)];
                out.consumption[(dst, k)] = self.consumption[(src, k)];
            }
        }
        out
    }
}

/// On-disk panel layout. Only observable columns are stored.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PanelFile {
    pub n: usize,
    pub observable_ids: Vec<usize>,
    pub prices: Vec<f64>,
    pub consumption: Vec<f64>,
    #[serde(default)]
    pub shock_meta: serde_json::Value,
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PanelCsvRow {
    pub t: usize,
    pub node: usize,
    pub price: f64,
    pub consumption: f64,
}

fn check_prices_and_shocks(derived: &DerivedMatrices, p: &DVector<f64>, xi: &DVector<f64>) -> Result<()> {
    let n = derived.n_nodes();
    if p.len() != n {
        return Err(Error::dimension("price vector", n, p.len()));
    }
    if xi.len() != n {
        return Err(Error::dimension("shock vector", n, xi.len()));
    }
    let slack = 1e-12 * derived.p_bar.max(1.0);
    for i in 0..n {
        if p[i] < -slack || p[i] > derived.p_bar + slack {
            return Err(Error::ModelViolation(format!(
                "price {} at node {i} outside [0, p̄]",
                p[i]
            )));
        }
        if !(derived.a[i] + xi[i] > derived.p_bar) {
            return Err(Error::ModelViolation(format!(
                "a + ξ = {} at node {i} does not exceed p̄",
                derived.a[i] + xi[i]
            )));
        }
    }
    Ok(())
}

/// Closed-form equilibrium `y = M⁻¹(a + ξ − p)`.
pub fn solve_equilibrium(derived: &DerivedMatrices, p: &DVector<f64>, xi: &DVector<f64>) -> Result<DVector<f64>> {
    check_prices_and_shocks(derived, p, xi)?;
    let rhs = &derived.a + xi - p;
    let y = &derived.m_inv * rhs;
    if let Some((i, &yi)) = y.iter().enumerate().find(|(_, &yi)| !(yi > 0.0)) {
        return Err(Error::ModelViolation(format!(
            "equilibrium consumption y[{i}] = {yi} is not positive"
        )));
    }
    Ok(y)
}

/// Simultaneous best-response dynamics from y = 0:
/// `y_i ← max(0, (a_i + ξ_i − p_i + Σ_j G_ij y_j) / (2b_i))`.
///
/// Returns the limit and the number of sweeps after which the iterate stopped
/// moving by more than `tol` (the confirming sweep is not counted).
pub fn best_response_iterate(
    instance: &NetworkInstance,
    p: &DVector<f64>,
    xi: &DVector<f64>,
    tol: f64,
    max_iter: usize,
) -> Result<(DVector<f64>, usize)> {
    best_response_observed(instance, p, xi, tol, max_iter, |_| {})
}

/// As [`best_response_iterate`], calling `observe` with every iterate.
pub fn best_response_observed(
    instance: &NetworkInstance,
    p: &DVector<f64>,
    xi: &DVector<f64>,
    tol: f64,
    max_iter: usize,
    mut observe: impl FnMut(&DVector<f64>),
) -> Result<(DVector<f64>, usize)> {
    let n = instance.n_nodes;
    if p.len() != n || xi.len() != n {
        return Err(Error::dimension("price/shock vector", n, p.len().min(xi.len())));
    }
    let base = &instance.a + xi - p;
    let mut y = DVector::zeros(n);
    let mut delta = f64::INFINITY;
    for sweep in 1..=max_iter {
        let gy = &instance.g * &y;
        let next = DVector::from_fn(n, |i, _| ((base[i] + gy[i]) / (2.0 * instance.b[i])).max(0.0));
        delta = (&next - &y).amax();
        y = next;
        observe(&y);
        if !delta.is_finite() {
            return Err(Error::Numeric("best-response iterate overflowed".into()));
        }
        if delta <= tol {
            return Ok((y, sweep - 1));
        }
    }
    Err(Error::NonConvergence {
        what: "best-response iteration".into(),
        iterations: max_iter,
        residual: delta,
    })
}

/// Panel plus the latent-side quantities that generated it.
#[derive(Clone, Debug)]
pub struct Simulation {
    pub panel: PanelData,
    /// Row t: full shock vector ξ⁽ᵗ⁾ over all nodes.
    pub shocks: DMatrix<f64>,
    /// Row t: observable noise ε_O⁽ᵗ⁾ = y_O − v_O + H⁻¹p_O.
    pub eps_o: DMatrix<f64>,
}

pub fn simulate_panel(
    instance: &NetworkInstance,
    n: usize,
    sampler: &PriceSampler,
    shocks: &ShockModel,
    seed: u64,
) -> Result<PanelData> {
    let derived = instance.derive()?;
    Ok(simulate_with(&derived, n, sampler, shocks, &RngStream::new(seed).child("panel"))?.panel)
}

/// Simulate `n` periods. Period t draws prices and shocks from its own
/// substreams of `stream`, so the output does not depend on scheduling.
pub fn simulate_with(
    derived: &DerivedMatrices,
    n: usize,
    sampler: &PriceSampler,
    shock: &ShockModel,
    stream: &RngStream,
) -> Result<Simulation> {
    sampler.check()?;
    shock.check()?;
    if n == 0 {
        return Err(Error::Config("panel size n must be positive".into()));
    }
    let q = derived.n_observable();
    let nv = derived.n_nodes();
    let bound = shock.bound(&derived.a, derived.p_bar);
    let h_inv_s_ol = &derived.h_inv * &derived.s_ol;

    let rows: Vec<(DVector<f64>, DVector<f64>, DVector<f64>, DVector<f64>)> = (0..n)
        .into_par_iter()
        .map(|t| -> Result<_> {
            let ts = stream.index(t as u64);
            let p_o = sampler.draw(&mut ts.child("prices").rng(), q, derived.p_bar);
            let xi = shock.draw(&mut ts.child("shocks").rng(), nv, bound)?;
            let p = derived.full_prices(&p_o);
            let y = solve_equilibrium(derived, &p, &xi)?;
            let y_o = linalg::subvector(&y, &derived.observable);
            let eps_o = &y_o - &derived.v_o + &derived.h_inv * &p_o;

            let xi_o = linalg::subvector(&xi, &derived.observable);
            let xi_l = linalg::subvector(&xi, &derived.latent);
            let eps_formula = &derived.h_inv * xi_o - &h_inv_s_ol * xi_l;
            let gap = (&eps_o - &eps_formula).amax();
            if gap > IDENTITY_TOL * y_o.amax().max(1.0) {
                return Err(Error::Numeric(format!(
                    "period {t}: affine demand identity off by {gap:.3e}"
                )));
            }
            Ok((p_o, y_o, xi, eps_o))
        })
        .collect::<Result<_>>()?;

    let mut prices = DMatrix::zeros(n, q);
    let mut consumption = DMatrix::zeros(n, q);
    let mut shocks = DMatrix::zeros(n, nv);
    let mut eps = DMatrix::zeros(n, q);
    for (t, (p_o, y_o, xi, e)) in rows.into_iter().enumerate() {
        prices.set_row(t, &p_o.transpose());
        consumption.set_row(t, &y_o.transpose());
        shocks.set_row(t, &xi.transpose());
        eps.set_row(t, &e.transpose());
    }
    let panel = PanelData {
        observable_ids: derived.observable.clone(),
        prices,
        consumption,
        shock_meta: serde_json::json!({
            "shock": shock,
            "prices": sampler,
            "bound": bound,
            "stream": stream.describe(),
        }),
        seed: Some(stream.root_seed()),
    };
    Ok(Simulation {
        panel,
        shocks,
        eps_o: eps,
    })
}
