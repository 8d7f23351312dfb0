//! Debiased, thresholded estimation of the price-response matrix from an
//! observable panel.
//!
//! Coefficients of row k are handled as β_k = (v_k, −W_k·), so that the
//! fitted demand is X β_k with X_t = (1, p_t).

use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::conic::{solve_row, DesignMoments, ProgramKind, RowProgram, SolveStatus, SolverOptions};
use crate::equilibrium::PanelData;
use crate::error::{Error, Result};
use crate::linalg;
use crate::stats::{self, RngStream};

/// Smallest panel accepted by [`estimate`]; the threshold factor uses 1/log n.
pub const MIN_OBSERVATIONS: usize = 8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PivotalConstants {
    pub m_n: f64,
    pub tau: f64,
    pub lambda: f64,
}

pub fn pivotal_constants(panel: &PanelData) -> Result<PivotalConstants> {
    let n = panel.n();
    let q = panel.n_observable();
    if n < 2 {
        return Err(Error::Config(format!("need at least 2 observations, got {n}")));
    }
    if q == 0 {
        return Err(Error::Config("panel has no observable agents".into()));
    }
    let max_fourth = panel
        .prices
        .column_iter()
        .map(|c| c.iter().map(|p| p.powi(4)).sum::<f64>() / n as f64)
        .fold(0.0, f64::max);
    let m_n = max_fourth.max(1.0).sqrt();
    let tail = 1.0 / (3.0 * n as f64 * (q * q) as f64);
    let lambda = stats::normal_quantile(1.0 - tail)? / (n as f64).sqrt();
    Ok(PivotalConstants {
        m_n,
        tau: 1.0 / (4.0 * m_n),
        lambda,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RowDiagnostics {
    pub kind: ProgramKind,
    pub row: usize,
    pub status: SolveStatus,
    pub objective: f64,
    pub z: f64,
    pub feas_residual: f64,
    pub gap: f64,
    pub iterations: usize,
}

impl RowDiagnostics {
    fn from_result(kind: ProgramKind, row: usize, r: &crate::conic::SolveResult) -> Self {
        Self {
            kind,
            row,
            status: r.status,
            objective: r.objective,
            z: r.z,
            feas_residual: r.feas_residual,
            gap: r.gap,
            iterations: r.iterations,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Preliminary {
    pub v_hat: DVector<f64>,
    pub w_hat: DMatrix<f64>,
    pub z_hat: DVector<f64>,
    pub diagnostics: Vec<RowDiagnostics>,
}

impl Preliminary {
    /// d×q matrix whose column k is β_k = (v̂_k, −Ŵ_k·).
    pub fn coefficients(&self) -> DMatrix<f64> {
        stacked(&self.v_hat, &self.w_hat)
    }
}

fn stacked(v: &DVector<f64>, w: &DMatrix<f64>) -> DMatrix<f64> {
    let q = v.len();
    DMatrix::from_fn(q + 1, q, |i, k| if i == 0 { v[k] } else { -w[(k, i - 1)] })
}

fn unstacked(b: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let q = b.ncols();
    let v = DVector::from_fn(q, |k, _| b[(0, k)]);
    let w = DMatrix::from_fn(q, q, |k, j| -b[(1 + j, k)]);
    (v, w)
}

fn check_solved(res: &crate::conic::SolveResult, stage: &str, row: usize) -> Result<()> {
    if res.status == SolveStatus::MaxIter {
        log::warn!(
            "{stage} row {row}: solver stopped at iteration cap (gap {:.2e}, feasibility {:.2e})",
            res.gap,
            res.feas_residual
        );
    }
    Ok(())
}

/// Step 1: one Dantzig row per observable agent.
pub fn step1_preliminary(
    panel: &PanelData,
    constants: &PivotalConstants,
    moments: &Arc<DesignMoments>,
    opts: &SolverOptions,
) -> Result<Preliminary> {
    let q = panel.n_observable();
    let rows: Vec<_> = (0..q)
        .into_par_iter()
        .map(|k| {
            let y = panel.consumption.column(k).into_owned();
            let prog = RowProgram::dantzig(moments.clone(), y, k, constants.lambda, constants.tau);
            let res = solve_row(&prog, opts).map_err(|e| e.in_stage(format!("step1 row {k}")))?;
            check_solved(&res, "step1", k)?;
            Ok(res)
        })
        .collect::<Result<_>>()?;
    let mut b = DMatrix::zeros(q + 1, q);
    let mut z_hat = DVector::zeros(q);
    let mut diagnostics = Vec::with_capacity(q);
    for (k, res) in rows.iter().enumerate() {
        b.set_column(k, &res.solution_vector());
        z_hat[k] = res.z;
        diagnostics.push(RowDiagnostics::from_result(ProgramKind::DantzigRow, k, res));
    }
    let (v_hat, w_hat) = unstacked(&b);
    Ok(Preliminary {
        v_hat,
        w_hat,
        z_hat,
        diagnostics,
    })
}

#[derive(Clone, Debug)]
pub struct Debiasing {
    /// Row k ∈ {0, …, q}: intercept row first, then one row per agent.
    pub psi_hat: DMatrix<f64>,
    pub z_hat: DVector<f64>,
    pub diagnostics: Vec<RowDiagnostics>,
}

/// Step 2: one debiasing row per coordinate of (1, p).
pub fn step2_debias(
    constants: &PivotalConstants,
    moments: &Arc<DesignMoments>,
    opts: &SolverOptions,
) -> Result<Debiasing> {
    let d = moments.d();
    let rows: Vec<_> = (0..d)
        .into_par_iter()
        .map(|k| {
            let prog = RowProgram::debias(moments.clone(), k, constants.lambda);
            let res = solve_row(&prog, opts).map_err(|e| e.in_stage(format!("step2 row {k}")))?;
            if res.status == SolveStatus::InfeasibleDetected {
                return Err(Error::Numeric(format!("debiasing row {k} reported infeasible")).in_stage("step2"));
            }
            check_solved(&res, "step2", k)?;
            Ok(res)
        })
        .collect::<Result<_>>()?;
    let mut psi_hat = DMatrix::zeros(d, d);
    let mut z_hat = DVector::zeros(d);
    let mut diagnostics = Vec::with_capacity(d);
    for (k, res) in rows.iter().enumerate() {
        psi_hat.set_row(k, &res.solution_vector().transpose());
        z_hat[k] = res.z;
        diagnostics.push(RowDiagnostics::from_result(ProgramKind::DebiasRow, k, res));
    }
    Ok(Debiasing {
        psi_hat,
        z_hat,
        diagnostics,
    })
}

fn design(panel: &PanelData) -> DMatrix<f64> {
    let (n, q) = panel.prices.shape();
    DMatrix::from_fn(n, q + 1, |t, j| if j == 0 { 1.0 } else { panel.prices[(t, j - 1)] })
}

/// n×q residuals y − (v̂ − Ŵp) of the preliminary fit.
pub fn residuals(panel: &PanelData, v_hat: &DVector<f64>, w_hat: &DMatrix<f64>) -> DMatrix<f64> {
    &panel.consumption - design(panel) * stacked(v_hat, w_hat)
}

fn check_shapes(panel: &PanelData, v_hat: &DVector<f64>, w_hat: &DMatrix<f64>, psi_hat: &DMatrix<f64>) -> Result<()> {
    let q = panel.n_observable();
    if v_hat.len() != q {
        return Err(Error::dimension("v̂", q, v_hat.len()));
    }
    if w_hat.shape() != (q, q) {
        return Err(Error::dimension("Ŵ", q, w_hat.nrows()));
    }
    if psi_hat.shape() != (q + 1, q + 1) {
        return Err(Error::dimension("Ψ̂", q + 1, psi_hat.nrows()));
    }
    Ok(())
}

/// Step 3: B̌ = B̂ + Ψ̂ (1/n) Xᵀ(Y − XB̂), the column form of the bias
/// correction `(−v̌ᵀ; W̌ᵀ) = (−v̂ᵀ; Ŵᵀ) − Ψ̂{(1/n)Σ_t (1;p)(y − (v̂ − Ŵp))ᵀ}`.
pub fn step3_debiased(
    panel: &PanelData,
    v_hat: &DVector<f64>,
    w_hat: &DMatrix<f64>,
    psi_hat: &DMatrix<f64>,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    check_shapes(panel, v_hat, w_hat, psi_hat)?;
    let x = design(panel);
    let r = residuals(panel, v_hat, w_hat);
    let score = x.tr_mul(&r) / panel.n() as f64;
    let b_check = stacked(v_hat, w_hat) + psi_hat * score;
    Ok(unstacked(&b_check))
}

/// Per-observation scores Z_t[(r, c)] = Ψ̂_{1+c,·}X_t · ε̂_{t,r}; entry (r, c)
/// drives the estimation error of W̌_rc.
struct Scores {
    /// n×d matrix with rows XΨ̂ᵀ.
    xpsi: DMatrix<f64>,
    /// n×q preliminary residuals.
    resid: DMatrix<f64>,
}

impl Scores {
    fn new(panel: &PanelData, v_hat: &DVector<f64>, w_hat: &DMatrix<f64>, psi_hat: &DMatrix<f64>) -> Self {
        let x = design(panel);
        Self {
            xpsi: &x * psi_hat.transpose(),
            resid: residuals(panel, v_hat, w_hat),
        }
    }

    fn sigma(&self) -> DMatrix<f64> {
        let (n, q) = self.resid.shape();
        // Σ_t (xpsi_{t,1+c})² resid_{t,r}²
        let a2 = self.xpsi.map(|v| v * v);
        let r2 = self.resid.map(|v| v * v);
        let s = r2.tr_mul(&a2);
        DMatrix::from_fn(q, q, |r, c| (s[(r, 1 + c)] / n as f64).sqrt())
    }

    /// (1/√n) Σ_t ξ_t Z_t, as a q×q matrix.
    fn weighted_sum(&self, xi: &DVector<f64>) -> DMatrix<f64> {
        let (n, q) = self.resid.shape();
        let mut weighted = self.resid.clone();
        for t in 0..n {
            weighted.row_mut(t).scale_mut(xi[t]);
        }
        let s = weighted.tr_mul(&self.xpsi);
        let scale = 1.0 / (n as f64).sqrt();
        DMatrix::from_fn(q, q, |r, c| s[(r, 1 + c)] * scale)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Thresholds {
    /// Entry (r, c) is the standard error scale of W̌_rc.
    pub sigma_hat: DMatrix<f64>,
    pub mu: DMatrix<f64>,
    pub cv_star: Option<f64>,
    /// Cells excluded from the bootstrap maximum because σ̂ = 0.
    pub excluded: usize,
}

/// Self-normalized thresholds μ = 2(1 + 1/log n)·σ̂·λ.
pub fn thresholds_self_normalized(
    panel: &PanelData,
    v_hat: &DVector<f64>,
    w_hat: &DMatrix<f64>,
    psi_hat: &DMatrix<f64>,
    constants: &PivotalConstants,
) -> Result<Thresholds> {
    check_shapes(panel, v_hat, w_hat, psi_hat)?;
    let n = panel.n();
    if n <= 1 {
        return Err(Error::Config(format!("self-normalized thresholds need n > 1, got {n}")));
    }
    let sigma_hat = Scores::new(panel, v_hat, w_hat, psi_hat).sigma();
    let factor = self_normalized_factor(n);
    let mu = &sigma_hat * (factor * constants.lambda);
    Ok(Thresholds {
        sigma_hat,
        mu,
        cv_star: None,
        excluded: 0,
    })
}

/// 2(1 + 1/log n).
pub fn self_normalized_factor(n: usize) -> f64 {
    2.0 * (1.0 + 1.0 / (n as f64).ln())
}

pub const MIN_BOOTSTRAP_DRAWS: usize = 200;

/// Multiplier-bootstrap thresholds μ = 2·cv*·σ̂/√n, where cv* is the
/// (1−α)-quantile of the maximal self-normalized statistic over draws of
/// Gaussian multipliers.
pub fn thresholds_bootstrap(
    panel: &PanelData,
    v_hat: &DVector<f64>,
    w_hat: &DMatrix<f64>,
    psi_hat: &DMatrix<f64>,
    alpha: f64,
    draws: usize,
    seed: u64,
) -> Result<Thresholds> {
    check_shapes(panel, v_hat, w_hat, psi_hat)?;
    if draws < MIN_BOOTSTRAP_DRAWS {
        return Err(Error::Config(format!(
            "bootstrap needs B ≥ {MIN_BOOTSTRAP_DRAWS}, got {draws}"
        )));
    }
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::Config(format!("bootstrap α = {alpha} outside (0, 1]")));
    }
    let n = panel.n();
    let scores = Scores::new(panel, v_hat, w_hat, psi_hat);
    let sigma_hat = scores.sigma();
    let excluded = sigma_hat.iter().filter(|&&s| s == 0.0).count();
    if excluded > 0 {
        log::warn!("{excluded} cells with zero σ̂ excluded from the bootstrap maximum");
    }

    let cv_star = if alpha >= 1.0 || excluded == sigma_hat.len() {
        // 0-quantile of a nonnegative statistic whose support starts at 0
        0.0
    } else {
        let stream = RngStream::new(seed).child("bootstrap");
        let maxima: Vec<f64> = (0..draws)
            .into_par_iter()
            .map(|b| {
                let mut rng = stream.index(b as u64).rng();
                let xi = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
                let t = scores.weighted_sum(&xi);
                t.iter()
                    .zip(sigma_hat.iter())
                    .filter(|(_, &s)| s > 0.0)
                    .map(|(v, s)| (v / s).abs())
                    .fold(0.0, f64::max)
            })
            .collect();
        stats::empirical_quantile(&maxima, 1.0 - alpha)?
    };
    let mu = &sigma_hat * (2.0 * cv_star / (n as f64).sqrt());
    Ok(Thresholds {
        sigma_hat,
        mu,
        cv_star: Some(cv_star),
        excluded,
    })
}

/// Step 4: hard thresholding, keeping W̌_kj only where |W̌_kj| > μ_kj.
pub fn step4_threshold(w_check: &DMatrix<f64>, mu: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if w_check.shape() != mu.shape() {
        return Err(Error::dimension("threshold matrix μ", w_check.nrows(), mu.nrows()));
    }
    Ok(w_check.zip_map(mu, |w, m| if w.abs() > m { w } else { 0.0 }))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum ThresholdMode {
    SelfNormalized,
    Bootstrap { alpha: f64, draws: usize },
}

impl Default for ThresholdMode {
    fn default() -> Self {
        ThresholdMode::SelfNormalized
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimateOptions {
    #[serde(default)]
    pub threshold_mode: ThresholdMode,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub solver: SolverOptions,
}

impl Default for EstimateOptions {
    fn default() -> Self {
        Self {
            threshold_mode: ThresholdMode::SelfNormalized,
            seed: 0,
            solver: SolverOptions::default(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub step1_ms: f64,
    pub step2_ms: f64,
    pub step3_ms: f64,
    pub thresholds_ms: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimationResult {
    pub n: usize,
    pub observable_ids: Vec<usize>,
    pub options: EstimateOptions,
    pub constants: PivotalConstants,
    #[serde(with = "linalg::vector")]
    pub v_hat: DVector<f64>,
    #[serde(with = "linalg::rows")]
    pub w_hat: DMatrix<f64>,
    #[serde(with = "linalg::vector")]
    pub z_hat: DVector<f64>,
    #[serde(with = "linalg::rows")]
    pub psi_hat: DMatrix<f64>,
    #[serde(with = "linalg::vector")]
    pub psi_z_hat: DVector<f64>,
    #[serde(with = "linalg::vector")]
    pub v_check: DVector<f64>,
    #[serde(with = "linalg::rows")]
    pub w_check: DMatrix<f64>,
    #[serde(with = "linalg::rows")]
    pub sigma_hat: DMatrix<f64>,
    #[serde(with = "linalg::rows")]
    pub mu: DMatrix<f64>,
    #[serde(with = "linalg::rows")]
    pub w_check_mu: DMatrix<f64>,
    pub cv_star: Option<f64>,
    pub bootstrap_excluded: usize,
    pub diagnostics: Vec<RowDiagnostics>,
    /// Wall-clock stage timings; kept out of the JSON so artifacts are
    /// reproducible byte for byte.
    #[serde(skip)]
    pub timings: StageTimings,
}

impl EstimationResult {
    /// Simultaneous confidence band W̌ ± cv*·σ̂/√n (bootstrap mode only).
    pub fn confidence_band(&self) -> Option<(DMatrix<f64>, DMatrix<f64>)> {
        let cv = self.cv_star?;
        let half = &self.sigma_hat * (cv / (self.n as f64).sqrt());
        Some((&self.w_check - &half, &self.w_check + &half))
    }

    pub fn worst_feasibility(&self) -> f64 {
        self.diagnostics.iter().map(|d| d.feas_residual).fold(0.0, f64::max)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        crate::io::write_json(path, self)
    }

    pub fn read(path: &Path) -> Result<Self> {
        crate::io::read_json(path)
    }

    pub fn entry_rows(&self) -> Vec<EstimateEntry> {
        let band = self.confidence_band();
        let q = self.observable_ids.len();
        let mut out = Vec::with_capacity(q * q);
        for r in 0..q {
            for c in 0..q {
                out.push(EstimateEntry {
                    row_node: self.observable_ids[r],
                    col_node: self.observable_ids[c],
                    w_check: self.w_check[(r, c)],
                    sigma_hat: self.sigma_hat[(r, c)],
                    mu: self.mu[(r, c)],
                    w_check_mu: self.w_check_mu[(r, c)],
                    ci_lower: band.as_ref().map(|(lo, _)| lo[(r, c)]),
                    ci_upper: band.as_ref().map(|(_, hi)| hi[(r, c)]),
                });
            }
        }
        out
    }

    pub fn write_entries_csv(&self, path: &Path) -> Result<()> {
        crate::io::write_csv(path, &self.entry_rows())
    }

    /// Thresholded estimate as a square CSV with node ids in the header.
    pub fn write_matrix_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["node".to_string()];
        header.extend(self.observable_ids.iter().map(|i| i.to_string()));
        w.write_record(&header)?;
        for (r, id) in self.observable_ids.iter().enumerate() {
            let mut rec = vec![id.to_string()];
            rec.extend(self.w_check_mu.row(r).iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Numeric(format!("csv buffer: {e}")))?;
        crate::io::write_atomic(path, &bytes)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimateEntry {
    pub row_node: usize,
    pub col_node: usize,
    pub w_check: f64,
    pub sigma_hat: f64,
    pub mu: f64,
    pub w_check_mu: f64,
    pub ci_lower: Option<f64>,
    pub ci_upper: Option<f64>,
}

fn elapsed_ms(start: Instant) -> f64 {
    start.elapsed().as_secs_f64() * 1e3
}

/// Full pipeline: constants, Steps 1–2, Step 3, thresholds and Step 4.
pub fn estimate(panel: &PanelData, options: &EstimateOptions) -> Result<EstimationResult> {
    let n = panel.n();
    if n < MIN_OBSERVATIONS {
        return Err(Error::Config(format!(
            "estimation needs at least {MIN_OBSERVATIONS} observations, got {n}"
        )));
    }
    let constants = pivotal_constants(panel).map_err(|e| e.in_stage("constants"))?;
    let moments = Arc::new(DesignMoments::from_prices(&panel.prices).map_err(|e| e.in_stage("design"))?);

    let t0 = Instant::now();
    let pre = step1_preliminary(panel, &constants, &moments, &options.solver).map_err(|e| e.in_stage("step1"))?;
    let step1_ms = elapsed_ms(t0);

    let t0 = Instant::now();
    let deb = step2_debias(&constants, &moments, &options.solver).map_err(|e| e.in_stage("step2"))?;
    let step2_ms = elapsed_ms(t0);

    let t0 = Instant::now();
    let (v_check, w_check) =
        step3_debiased(panel, &pre.v_hat, &pre.w_hat, &deb.psi_hat).map_err(|e| e.in_stage("step3"))?;
    let step3_ms = elapsed_ms(t0);

    let t0 = Instant::now();
    let th = match options.threshold_mode {
        ThresholdMode::SelfNormalized => {
            thresholds_self_normalized(panel, &pre.v_hat, &pre.w_hat, &deb.psi_hat, &constants)
        }
        ThresholdMode::Bootstrap { alpha, draws } => {
            thresholds_bootstrap(panel, &pre.v_hat, &pre.w_hat, &deb.psi_hat, alpha, draws, options.seed)
        }
    }
    .map_err(|e| e.in_stage("thresholds"))?;
    let w_check_mu = step4_threshold(&w_check, &th.mu).map_err(|e| e.in_stage("step4"))?;
    let thresholds_ms = elapsed_ms(t0);

    let mut diagnostics = pre.diagnostics;
    diagnostics.extend(deb.diagnostics);
    Ok(EstimationResult {
        n,
        observable_ids: panel.observable_ids.clone(),
        options: options.clone(),
        constants,
        v_hat: pre.v_hat,
        w_hat: pre.w_hat,
        z_hat: pre.z_hat,
        psi_hat: deb.psi_hat,
        psi_z_hat: deb.z_hat,
        v_check,
        w_check,
        sigma_hat: th.sigma_hat,
        mu: th.mu,
        w_check_mu,
        cv_star: th.cv_star,
        bootstrap_excluded: th.excluded,
        diagnostics,
        timings: StageTimings {
            step1_ms,
            step2_ms,
            step3_ms,
            thresholds_ms,
        },
    })
}

/// Sampled upper bound on the restricted eigenvalue
/// `min_J min_{‖Δ_Jᶜ‖₁ ≤ c̄‖Δ_J‖₁} s·ΔᵀΣ̂Δ/‖Δ‖₁²` over supports |J| ≤ s.
/// Every support of size exactly s is enumerated (smaller supports give
/// subsets of the same cones) and `samples` cone directions are drawn per
/// support, so the value can only overestimate the true minimum.
pub fn restricted_eigenvalue(sigma: &DMatrix<f64>, s: usize, c_bar: f64, samples: usize, seed: u64) -> Result<f64> {
    let d = sigma.nrows();
    if !sigma.is_square() {
        return Err(Error::dimension("Σ̂ (square)", d, sigma.ncols()));
    }
    if s == 0 || s > d {
        return Err(Error::Config(format!("support size {s} outside 1..={d}")));
    }
    if !(c_bar >= 0.0) {
        return Err(Error::Config(format!("cone constant {c_bar} must be ≥ 0")));
    }
    let supports = combinations(d, s);
    let stream = RngStream::new(seed).child("restricted-eigenvalue");
    let best = supports
        .par_iter()
        .enumerate()
        .map(|(idx, support)| {
            let mut rng = stream.index(idx as u64).rng();
            let mut in_j = vec![false; d];
            for &j in support {
                in_j[j] = true;
            }
            let rest: Vec<usize> = (0..d).filter(|&j| !in_j[j]).collect();
            let mut min_ratio = f64::INFINITY;
            for _ in 0..samples {
                let mut delta = DVector::zeros(d);
                for &j in support {
                    delta[j] = rng.sample::<f64, _>(StandardNormal);
                }
                let l1_j: f64 = support.iter().map(|&j| delta[j].abs()).sum();
                if !rest.is_empty() {
                    // off-support mass: a random fraction of the cone budget,
                    // concentrated on a random subset of coordinates
                    let budget = c_bar * l1_j * rng.gen::<f64>().sqrt();
                    let mut chosen = rest.clone();
                    chosen.shuffle(&mut rng);
                    let k = rng.gen_range(1..=chosen.len());
                    let raw: Vec<f64> = (0..k).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
                    let total: f64 = raw.iter().map(|v| v.abs()).sum();
                    if total > 0.0 {
                        for (&j, v) in chosen.iter().take(k).zip(&raw) {
                            delta[j] = v / total * budget;
                        }
                    }
                }
                let l1 = delta.lp_norm(1);
                if l1 == 0.0 {
                    continue;
                }
                let quad = delta.dot(&(sigma * &delta));
                min_ratio = min_ratio.min(s as f64 * quad / (l1 * l1));
            }
            min_ratio
        })
        .reduce(|| f64::INFINITY, f64::min);
    Ok(best)
}

fn combinations(d: usize, s: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur = Vec::with_capacity(s);
    fn rec(start: usize, d: usize, s: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == s {
            out.push(cur.clone());
            return;
        }
        for i in start..d {
            cur.push(i);
            rec(i + 1, d, s, cur, out);
            cur.pop();
        }
    }
    rec(0, d, s, &mut cur, &mut out);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn panel_from(prices: DMatrix<f64>, consumption: DMatrix<f64>) -> PanelData {
        let q = prices.ncols();
        PanelData::new((0..q).collect(), prices, consumption).unwrap()
    }

    #[test]
    fn constants_floor_and_lambda() {
        let p = DMatrix::from_element(100, 10, 0.9);
        let panel = panel_from(p.clone(), p);
        let c = pivotal_constants(&panel).unwrap();
        assert_eq!(c.m_n, 1.0);
        assert_eq!(c.tau, 0.25);
        // mpmath: ndtri(1 - 1/30000) / 10
        assert!((c.lambda - 0.398_787_893_660_691_7).abs() < 1e-12, "{}", c.lambda);
        assert!((c.lambda - 0.3985).abs() < 5e-4);

        let p = DMatrix::from_element(20, 3, 2.0);
        let c = pivotal_constants(&panel_from(p.clone(), p)).unwrap();
        assert_eq!(c.m_n, 4.0);
        assert_eq!(c.tau, 1.0 / 16.0);
    }

    #[test]
    fn threshold_factor_at_eight() {
        assert!((self_normalized_factor(8) - 2.961_796_693_925_976).abs() < 1e-14);
    }

    #[test]
    fn hard_threshold_example() {
        let w = DMatrix::from_row_slice(2, 2, &[0.5, -0.1, 0.2, 0.05]);
        let mu = DMatrix::from_element(2, 2, 0.15);
        let out = step4_threshold(&w, &mu).unwrap();
        assert_eq!(out, DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 0.2, 0.0]));
        assert_eq!(step4_threshold(&w, &DMatrix::zeros(2, 2)).unwrap(), w);
        assert_eq!(
            step4_threshold(&w, &DMatrix::from_element(2, 2, f64::INFINITY)).unwrap(),
            DMatrix::zeros(2, 2)
        );
        assert_eq!(step4_threshold(&out, &mu).unwrap(), out);
    }

    #[test]
    fn step3_hand_example() {
        // n = 2, one agent: X = [[1, 0.5], [1, 1.0]], y = (1.0, 0.2)
        let prices = DMatrix::from_row_slice(2, 1, &[0.5, 1.0]);
        let y = DMatrix::from_row_slice(2, 1, &[1.0, 0.2]);
        let panel = panel_from(prices, y);
        let v_hat = DVector::from_vec(vec![1.2]);
        let w_hat = DMatrix::from_element(1, 1, 0.8);
        let psi = DMatrix::from_row_slice(2, 2, &[2.0, -1.0, 0.5, 3.0]);
        // residuals: 1.0 − (1.2 − 0.4) = 0.2 ; 0.2 − (1.2 − 0.8) = −0.2
        // score = (1/2)[ (0.2 − 0.2), (0.1 − 0.2) ] = (0, −0.05)
        // (−v̌; W̌) = (−1.2; 0.8) − Ψ̂·(0, −0.05) = (−1.2 − 0.05; 0.8 + 0.15)
        let (v, w) = step3_debiased(&panel, &v_hat, &w_hat, &psi).unwrap();
        assert!((v[0] - 1.25).abs() < 1e-15);
        assert!((w[(0, 0)] - 0.95).abs() < 1e-15);

        let (v0, w0) = step3_debiased(&panel, &v_hat, &w_hat, &DMatrix::zeros(2, 2)).unwrap();
        assert_eq!((v0, w0), (v_hat, w_hat));
    }

    #[test]
    fn zero_residuals_give_zero_thresholds() {
        let prices = DMatrix::from_fn(10, 2, |t, j| 0.3 + 0.1 * ((t * (j + 2)) % 7) as f64);
        let v = DVector::from_vec(vec![1.0, 0.8]);
        let w = DMatrix::from_row_slice(2, 2, &[0.5, 0.1, 0.05, 0.6]);
        let y = DMatrix::from_fn(10, 2, |t, k| v[k] - (w.row(k) * prices.row(t).transpose())[0]);
        let panel = panel_from(prices, y);
        let psi = DMatrix::identity(3, 3);
        let c = pivotal_constants(&panel).unwrap();
        let th = thresholds_self_normalized(&panel, &v, &w, &psi, &c).unwrap();
        assert!(th.mu.iter().all(|&m| m.abs() < 1e-14));
        let (vc, wc) = step3_debiased(&panel, &v, &w, &psi).unwrap();
        assert!((wc - &w).amax() < 1e-14 && (vc - &v).amax() < 1e-14);
    }

    #[test]
    fn bootstrap_alpha_one_gives_zero() {
        let prices = DMatrix::from_fn(12, 1, |t, _| 0.3 + 0.05 * t as f64);
        let y = DMatrix::from_fn(12, 1, |t, _| 1.0 + 0.01 * ((t * 7) % 5) as f64);
        let panel = panel_from(prices, y);
        let v = DVector::from_vec(vec![1.0]);
        let w = DMatrix::from_element(1, 1, 0.0);
        let th = thresholds_bootstrap(&panel, &v, &w, &DMatrix::identity(2, 2), 1.0, 200, 3).unwrap();
        assert_eq!(th.cv_star, Some(0.0));
        assert!(th.mu.iter().all(|&m| m == 0.0));
        assert!(matches!(
            thresholds_bootstrap(&panel, &v, &w, &DMatrix::identity(2, 2), 0.05, 100, 3),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn restricted_eigenvalue_of_identity() {
        // with Σ̂ = I and s = d the ratio is d‖Δ‖₂²/‖Δ‖₁² ≥ 1
        let k = restricted_eigenvalue(&DMatrix::identity(3, 3), 3, 3.0, 200, 1).unwrap();
        assert!(k >= 1.0 - 1e-12 && k < 3.0);
    }

    #[test]
    fn combinations_count() {
        assert_eq!(combinations(5, 2).len(), 10);
        assert_eq!(combinations(4, 4), vec![vec![0, 1, 2, 3]]);
    }
}
