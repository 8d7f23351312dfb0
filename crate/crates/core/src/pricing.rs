//! Seller prices for observable agents: complete-information optimum,
//! closed forms for symmetric networks, plug-in prices from an estimate,
//! and revenue-gap evaluation.

use std::fmt;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::EstimationResult;
use crate::linalg;
use crate::network::{self, DerivedMatrices, NetworkInstance};

/// Stationarity target of the box-constrained solver.
pub const PROJECTED_GRADIENT_TOL: f64 = 1e-10;
/// Condition bound on the symmetrized estimate in [`estimated_prices`].
pub const ESTIMATE_CONDITION_LIMIT: f64 = 1e10;
const SYMMETRY_TOL: f64 = 1e-12;
const MAX_GRADIENT_ITER: usize = 1_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriceMethod {
    Benchmark,
    Symmetric,
    Bonacich,
    Estimated,
    Grid,
}

impl fmt::Display for PriceMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            PriceMethod::Benchmark => "benchmark",
            PriceMethod::Symmetric => "symmetric",
            PriceMethod::Bonacich => "bonacich",
            PriceMethod::Estimated => "estimated",
            PriceMethod::Grid => "grid",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PriceSolution {
    pub method: PriceMethod,
    pub nodes: Vec<usize>,
    #[serde(with = "linalg::vector")]
    pub prices: DVector<f64>,
    /// Π(p) under the model the prices were computed from; for estimated
    /// prices this is the plug-in value under (v̌, W̌^μ).
    pub expected_revenue: f64,
    /// ‖∇Π(p)‖∞ over coordinates strictly inside (0, p̄).
    pub foc_residual: f64,
    /// Positions (into `nodes`) with p_i = p̄.
    pub binding: Vec<usize>,
    /// Positions clamped up to 0.
    pub floored: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PriceCsvRow {
    pub node: usize,
    pub price: f64,
    pub binding: bool,
    pub method: String,
}

impl PriceSolution {
    fn build(method: PriceMethod, nodes: Vec<usize>, prices: DVector<f64>, v: &DVector<f64>, w: &DMatrix<f64>, p_bar: f64) -> Self {
        let grad = revenue_gradient(v, w, &prices);
        let binding: Vec<usize> = (0..prices.len()).filter(|&i| prices[i] >= p_bar).collect();
        let foc_residual = (0..prices.len())
            .filter(|&i| prices[i] > 0.0 && prices[i] < p_bar)
            .map(|i| grad[i].abs())
            .fold(0.0, f64::max);
        Self {
            method,
            nodes,
            expected_revenue: revenue(v, w, &prices),
            prices,
            foc_residual,
            binding,
            floored: Vec::new(),
        }
    }

    pub fn csv_rows(&self) -> Vec<PriceCsvRow> {
        self.nodes
            .iter()
            .enumerate()
            .map(|(k, &node)| PriceCsvRow {
                node,
                price: self.prices[k],
                binding: self.binding.contains(&k),
                method: self.method.to_string(),
            })
            .collect()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        crate::io::write_csv(path, &self.csv_rows())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        crate::io::write_json(path, self)
    }

    pub fn read(path: &Path) -> Result<Self> {
        crate::io::read_json(path)
    }
}

/// Π(p) = pᵀv − pᵀWp for a demand system y = v − Wp + ε.
pub fn revenue(v: &DVector<f64>, w: &DMatrix<f64>, p: &DVector<f64>) -> f64 {
    p.dot(v) - p.dot(&(w * p))
}

/// ∇Π(p) = v − (W + Wᵀ)p.
pub fn revenue_gradient(v: &DVector<f64>, w: &DMatrix<f64>, p: &DVector<f64>) -> DVector<f64> {
    v - w * p - w.tr_mul(p)
}

fn check_price_vector(derived: &DerivedMatrices, p_o: &DVector<f64>) -> Result<()> {
    let q = derived.n_observable();
    if p_o.len() != q {
        return Err(Error::dimension("observable price vector", q, p_o.len()));
    }
    if let Some(i) = (0..q).find(|&i| !(p_o[i] >= 0.0 && p_o[i] <= derived.p_bar)) {
        return Err(Error::Domain(format!(
            "price {} of observable agent {i} outside [0, {}]",
            p_o[i], derived.p_bar
        )));
    }
    Ok(())
}

/// Expected revenue pᵀv_O − pᵀH⁻¹p from the observable agents.
pub fn expected_revenue(derived: &DerivedMatrices, p_o: &DVector<f64>) -> Result<f64> {
    check_price_vector(derived, p_o)?;
    Ok(revenue(&derived.v_o, &derived.h_inv, p_o))
}

pub fn expected_revenue_gradient(derived: &DerivedMatrices, p_o: &DVector<f64>) -> Result<DVector<f64>> {
    if p_o.len() != derived.n_observable() {
        return Err(Error::dimension("observable price vector", derived.n_observable(), p_o.len()));
    }
    Ok(revenue_gradient(&derived.v_o, &derived.h_inv, p_o))
}

/// Unconstrained maximizer Hᵀ(H + Hᵀ)⁻¹(a_O − S_OL(a_L − p̄e_L)).
pub fn interior_candidate(derived: &DerivedMatrices) -> Result<DVector<f64>> {
    let h = &derived.h;
    let sym = h + h.transpose();
    let rhs = derived.a_o() - &derived.s_ol * (derived.a_l().add_scalar(-derived.p_bar));
    let x = linalg::solve_checked(&sym, &rhs, "H + Hᵀ", linalg::SINGULAR_CONDITION)?;
    Ok(h.tr_mul(&x))
}

/// Maximize pᵀv − pᵀWp over the box [0, p̄]^q by accelerated projected
/// gradient ascent. Returns the final iterate and the projected-gradient norm.
pub fn box_qp(v: &DVector<f64>, w: &DMatrix<f64>, p_bar: f64, start: &DVector<f64>) -> Result<(DVector<f64>, f64)> {
    let q = v.len();
    let sym = w + w.transpose();
    let eig = sym.clone().symmetric_eigen();
    let l = eig.eigenvalues.max();
    let mu = eig.eigenvalues.min();
    if !(mu > 0.0) {
        return Err(Error::singular("W + Wᵀ (not positive definite)", l / mu.abs().max(f64::MIN_POSITIVE)));
    }
    let proj = |x: DVector<f64>| x.map(|v| v.clamp(0.0, p_bar));
    let momentum = (l.sqrt() - mu.sqrt()) / (l.sqrt() + mu.sqrt());
    let mut p = proj(start.clone());
    let mut y = p.clone();
    let stationarity = |p: &DVector<f64>| {
        let g = v - &sym * p;
        (proj(p + &g / l) - p).amax() * l
    };
    for _ in 0..MAX_GRADIENT_ITER {
        let res = stationarity(&p);
        if res <= PROJECTED_GRADIENT_TOL {
            return Ok((p, res));
        }
        let g = v - &sym * &y;
        let next = proj(&y + &g / l);
        y = &next + (&next - &p) * momentum;
        p = next;
    }
    let res = stationarity(&p);
    if res <= PROJECTED_GRADIENT_TOL * 10.0 {
        return Ok((p, res));
    }
    Err(Error::NonConvergence {
        what: format!("projected gradient on {q} prices"),
        iterations: MAX_GRADIENT_ITER,
        residual: res,
    })
}

/// Optimal observable prices under complete information.
pub fn benchmark_prices(derived: &DerivedMatrices) -> Result<PriceSolution> {
    let cand = interior_candidate(derived)?;
    let p_bar = derived.p_bar;
    let prices = if cand.iter().all(|&p| p < p_bar && p > 0.0) {
        cand
    } else {
        box_qp(&derived.v_o, &derived.h_inv, p_bar, &cand)?.0
    };
    Ok(PriceSolution::build(
        PriceMethod::Benchmark,
        derived.observable.clone(),
        prices,
        &derived.v_o,
        &derived.h_inv,
        p_bar,
    ))
}

/// Common intrinsic value and concavity of a symmetric homogeneous instance.
fn symmetric_parameters(instance: &NetworkInstance) -> Result<(f64, f64)> {
    let g = &instance.g;
    let scale = linalg::max_abs(g).max(1.0);
    if linalg::max_abs_diff(g, &g.transpose()) > SYMMETRY_TOL * scale {
        return Err(Error::Config("closed-form prices need a symmetric influence matrix".into()));
    }
    let a0 = instance.a[0];
    let b0 = instance.b[0];
    if instance.a.iter().any(|a| (a - a0).abs() > SYMMETRY_TOL * a0.abs().max(1.0)) {
        return Err(Error::Config("closed-form prices need a common intrinsic value a".into()));
    }
    if instance.b.iter().any(|b| (b - b0).abs() > SYMMETRY_TOL * b0.abs().max(1.0)) {
        return Err(Error::Config("closed-form prices need a common concavity b".into()));
    }
    Ok((a0, b0))
}

fn require_interior(prices: &DVector<f64>, p_bar: f64, what: &str) -> Result<()> {
    if let Some(i) = (0..prices.len()).find(|&i| prices[i] >= p_bar) {
        return Err(Error::Domain(format!(
            "{what} price {} of observable agent {i} is not below p̄ = {p_bar}; closed form does not apply",
            prices[i]
        )));
    }
    Ok(())
}

/// q_O = (ã/2)e_O − ½ S_OL e_L (ã − p̄).
pub fn symmetric_prices(instance: &NetworkInstance) -> Result<PriceSolution> {
    let (a, _) = symmetric_parameters(instance)?;
    let derived = instance.derive()?;
    let q = derived.n_observable();
    let row_sums = DVector::from_fn(q, |i, _| derived.s_ol.row(i).sum());
    let prices = DVector::from_element(q, a / 2.0) - row_sums * (0.5 * (a - derived.p_bar));
    require_interior(&prices, derived.p_bar, "symmetric")?;
    Ok(PriceSolution::build(
        PriceMethod::Symmetric,
        derived.observable.clone(),
        prices,
        &derived.v_o,
        &derived.h_inv,
        derived.p_bar,
    ))
}

/// (ã/2)e_O + ((ã − p̄)/(4b̃)) G_OL K_L(1/(2b̃)), with K_L the Bonacich
/// centrality of the latent subnetwork.
pub fn bonacich_prices(instance: &NetworkInstance) -> Result<PriceSolution> {
    let (a, b) = symmetric_parameters(instance)?;
    let derived = instance.derive()?;
    let q = derived.n_observable();
    let latent = &derived.latent;
    let mut prices = DVector::from_element(q, a / 2.0);
    if !latent.is_empty() {
        let g_ll = linalg::submatrix(&instance.g, latent, latent);
        let k_l = network::bonacich(1.0 / (2.0 * b), &g_ll)?;
        let g_ol = linalg::submatrix(&instance.g, &derived.observable, latent);
        prices += g_ol * k_l * ((a - derived.p_bar) / (4.0 * b));
    }
    require_interior(&prices, derived.p_bar, "Bonacich")?;
    Ok(PriceSolution::build(
        PriceMethod::Bonacich,
        derived.observable.clone(),
        prices,
        &derived.v_o,
        &derived.h_inv,
        derived.p_bar,
    ))
}

/// p̂ = [(W̌^μ + W̌^μᵀ)⁻¹ v̌] ∧ p̄, floored at 0.
pub fn plug_in_prices(v: &DVector<f64>, w: &DMatrix<f64>, p_bar: f64) -> Result<(DVector<f64>, Vec<usize>)> {
    if w.shape() != (v.len(), v.len()) {
        return Err(Error::dimension("estimated response matrix", v.len(), w.nrows()));
    }
    if !(p_bar > 0.0) {
        return Err(Error::Config(format!("outside price p̄ = {p_bar} must be positive")));
    }
    let sym = w + w.transpose();
    let raw = linalg::solve_checked(&sym, v, "W̌^μ + W̌^μᵀ", ESTIMATE_CONDITION_LIMIT)?;
    let floored: Vec<usize> = (0..raw.len()).filter(|&i| raw[i] < 0.0).collect();
    Ok((raw.map(|x| x.clamp(0.0, p_bar)), floored))
}

pub fn estimated_prices(result: &EstimationResult, p_bar: f64) -> Result<PriceSolution> {
    let (prices, floored) = plug_in_prices(&result.v_check, &result.w_check_mu, p_bar)?;
    let mut sol = PriceSolution::build(
        PriceMethod::Estimated,
        result.observable_ids.clone(),
        prices,
        &result.v_check,
        &result.w_check_mu,
        p_bar,
    );
    sol.floored = floored;
    Ok(sol)
}

/// Lattice search over [0, p̄]^q refined around the incumbent, one decade
/// of spacing at a time, down to `resolution`. Exact for the concave
/// revenue up to the final lattice spacing.
pub fn grid_prices(derived: &DerivedMatrices, resolution: f64) -> Result<PriceSolution> {
    let q = derived.n_observable();
    let p_bar = derived.p_bar;
    if !(resolution > 0.0 && resolution < p_bar) {
        return Err(Error::Config(format!("grid resolution {resolution} outside (0, p̄)")));
    }
    if q > 4 {
        return Err(Error::Config(format!("grid search supports at most 4 observable agents, got {q}")));
    }
    let f = |p: &DVector<f64>| revenue(&derived.v_o, &derived.h_inv, p);
    let top = (p_bar / resolution + 1e-9).floor() as i64;
    let mut spacing = 1i64;
    while (top / (spacing * 10)) >= 8 {
        spacing *= 10;
    }
    // lattice coordinates in units of `resolution`
    let mut best: Vec<i64> = vec![0; q];
    let mut lo = vec![0i64; q];
    let mut hi = vec![top; q];
    loop {
        let counts: Vec<i64> = (0..q).map(|i| (hi[i] - lo[i]) / spacing + 1).collect();
        let total: i64 = counts.iter().product();
        let mut best_val = f64::NEG_INFINITY;
        for flat in 0..total {
            let mut rem = flat;
            let mut p = DVector::zeros(q);
            let mut idx = vec![0i64; q];
            for i in 0..q {
                idx[i] = lo[i] + (rem % counts[i]) * spacing;
                rem /= counts[i];
                p[i] = (idx[i] as f64 * resolution).min(p_bar);
            }
            let v = f(&p);
            if v > best_val {
                best_val = v;
                best = idx;
            }
        }
        if spacing == 1 {
            break;
        }
        for i in 0..q {
            lo[i] = (best[i] - 2 * spacing).max(0);
            hi[i] = (best[i] + 2 * spacing).min(top);
        }
        spacing /= 10;
        for i in 0..q {
            lo[i] -= lo[i] % spacing;
        }
    }
    let prices = DVector::from_iterator(q, best.iter().map(|&k| (k as f64 * resolution).min(p_bar)));
    Ok(PriceSolution::build(
        PriceMethod::Grid,
        derived.observable.clone(),
        prices,
        &derived.v_o,
        &derived.h_inv,
        p_bar,
    ))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RevenueGap {
    pub optimal_revenue: f64,
    pub revenue: f64,
    pub gap: f64,
}

/// R(p̂) = (Π(p⋆) − Π(p̂))/Π(p⋆) under the true model.
pub fn revenue_gap(derived: &DerivedMatrices, p_hat: &DVector<f64>) -> Result<RevenueGap> {
    let star = benchmark_prices(derived)?;
    if !(star.expected_revenue > 0.0) {
        return Err(Error::ModelViolation(format!(
            "optimal revenue {} is not positive",
            star.expected_revenue
        )));
    }
    let r = expected_revenue(derived, p_hat)?;
    Ok(RevenueGap {
        optimal_revenue: star.expected_revenue,
        revenue: r,
        gap: (star.expected_revenue - r) / star.expected_revenue,
    })
}
