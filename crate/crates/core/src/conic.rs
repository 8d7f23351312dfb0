//! Row programs of the two-step estimator and a barrier solver for them.
//!
//! Both program families are rewritten in terms of design moments, so that a
//! Newton step costs O(d³) regardless of the sample size (the 4-norm term of
//! the debiasing program is the one exception and is evaluated on the data).
//!
//! Dantzig row, with β = (v, −W_k·), X_t = (1, p_t) and r = y − Xβ:
//!
//! ```text
//! min ‖β‖₁ + τz   s.t.  |(1/n)Σ_t r_t X_tj| ≤ λz,  ((1/n)Σ_t r_t² X_tj²)^{1/2} ≤ z
//! ```
//!
//! Debiasing row for index k:
//!
//! ```text
//! min ((1/n)Σ_t (ψᵀX_t)⁴)^{1/4} + z
//!   s.t. |ψᵀΣ̂_j − 1{k=j}| ≤ λz,  ((1/n)Σ_t (ψᵀX_t X_tj − 1{k=j})²)^{1/2} ≤ z
//! ```

use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::stats::RngStream;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProgramKind {
    DantzigRow,
    DebiasRow,
}

/// Design-dependent quantities shared by every row program on one panel.
#[derive(Clone, Debug)]
pub struct DesignMoments {
    /// n×d design with rows (1, p_t).
    pub design: DMatrix<f64>,
    /// Entrywise square of the design.
    pub squared: DMatrix<f64>,
    /// Σ̂ = (1/n)XᵀX.
    pub sigma: DMatrix<f64>,
    /// A_j = (1/n) Xᵀ diag(X_·j²) X for each column j.
    pub a_mats: Vec<DMatrix<f64>>,
    /// Fourth moments (1/n)Σ_t X_ta X_tb X_tc X_te over unordered pairs
    /// (a ≤ b), (c ≤ e); only kept when cheaper than a pass over the data.
    pub fourth: Option<DMatrix<f64>>,
}

impl DesignMoments {
    pub fn new(design: DMatrix<f64>) -> Result<Self> {
        let (n, d) = design.shape();
        if n < 2 || d < 2 {
            return Err(Error::Config(format!("row programs need n ≥ 2 and d ≥ 2, got n={n}, d={d}")));
        }
        if design.iter().any(|x| !x.is_finite()) {
            return Err(Error::Numeric("design matrix has non-finite entries".into()));
        }
        let inv_n = 1.0 / n as f64;
        let squared = design.map(|x| x * x);
        let sigma = design.tr_mul(&design) * inv_n;
        let a_mats = (0..d)
            .map(|j| {
                let mut scaled = design.clone();
                for t in 0..n {
                    let w = squared[(t, j)];
                    scaled.row_mut(t).scale_mut(w);
                }
                design.tr_mul(&scaled) * inv_n
            })
            .collect();
        let pairs = d * (d + 1) / 2;
        let fourth = (2 * pairs * pairs < n * d * d).then(|| {
            let mut z = DMatrix::zeros(n, pairs);
            for t in 0..n {
                let mut col = 0;
                for a in 0..d {
                    for b in a..d {
                        z[(t, col)] = design[(t, a)] * design[(t, b)];
                        col += 1;
                    }
                }
            }
            z.tr_mul(&z) * inv_n
        });
        Ok(Self {
            design,
            squared,
            sigma,
            a_mats,
            fourth,
        })
    }

    /// Design `[1, P]` from an n×q price matrix.
    pub fn from_prices(prices: &DMatrix<f64>) -> Result<Self> {
        let (n, q) = prices.shape();
        let design = DMatrix::from_fn(n, q + 1, |t, j| if j == 0 { 1.0 } else { prices[(t, j - 1)] });
        Self::new(design)
    }

    pub fn n(&self) -> usize {
        self.design.nrows()
    }

    pub fn d(&self) -> usize {
        self.design.ncols()
    }
}

#[derive(Clone, Debug)]
pub struct RowProgram {
    pub kind: ProgramKind,
    pub moments: Arc<DesignMoments>,
    /// Response column (Dantzig rows only).
    pub response: Option<DVector<f64>>,
    /// Row index k: the response node for Dantzig rows, the target unit
    /// vector index for debiasing rows.
    pub target: usize,
    pub lambda: f64,
    /// Weight of z in the Dantzig objective.
    pub tau: Option<f64>,
}

impl RowProgram {
    pub fn dantzig(moments: Arc<DesignMoments>, response: DVector<f64>, target: usize, lambda: f64, tau: f64) -> Self {
        Self {
            kind: ProgramKind::DantzigRow,
            moments,
            response: Some(response),
            target,
            lambda,
            tau: Some(tau),
        }
    }

    pub fn debias(moments: Arc<DesignMoments>, target: usize, lambda: f64) -> Self {
        Self {
            kind: ProgramKind::DebiasRow,
            moments,
            response: None,
            target,
            lambda,
            tau: None,
        }
    }

    pub fn d(&self) -> usize {
        self.moments.d()
    }

    /// Structural checks. λ = 0 is accepted and means exact moment matching.
    pub fn check(&self) -> Result<()> {
        let (n, d) = self.moments.design.shape();
        if n < 2 || d < 2 {
            return Err(Error::Config(format!("row program needs n ≥ 2, d ≥ 2 (n={n}, d={d})")));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!("λ = {} must be finite and ≥ 0", self.lambda)));
        }
        match self.kind {
            ProgramKind::DantzigRow => {
                let y = self
                    .response
                    .as_ref()
                    .ok_or_else(|| Error::Config("Dantzig row without response".into()))?;
                if y.len() != n {
                    return Err(Error::dimension("response", n, y.len()));
                }
                if y.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Numeric("response has non-finite entries".into()));
                }
                match self.tau {
                    Some(t) if t > 0.0 && t.is_finite() => {}
                    other => return Err(Error::Config(format!("τ must be positive, got {other:?}"))),
                }
            }
            ProgramKind::DebiasRow => {
                if self.target >= d {
                    return Err(Error::Config(format!("debias target {} ≥ d = {d}", self.target)));
                }
            }
        }
        Ok(())
    }

    fn delta(&self, j: usize) -> f64 {
        if self.kind == ProgramKind::DebiasRow && j == self.target {
            1.0
        } else {
            0.0
        }
    }

    /// Moment-matching violations |·| and root-mean-square terms of every
    /// constraint j, computed directly from the data.
    pub fn constraint_terms(&self, x: &DVector<f64>) -> (Vec<f64>, Vec<f64>) {
        let m = &self.moments;
        let (n, d) = m.design.shape();
        let inv_n = 1.0 / n as f64;
        match self.kind {
            ProgramKind::DantzigRow => {
                let y = self.response.as_ref().expect("checked");
                let r = y - &m.design * x;
                let lin = (m.design.tr_mul(&r) * inv_n).iter().map(|v| v.abs()).collect();
                let r2 = r.map(|v| v * v);
                let soc = (m.squared.tr_mul(&r2) * inv_n).iter().map(|v| v.max(0.0).sqrt()).collect();
                (lin, soc)
            }
            ProgramKind::DebiasRow => {
                let sx = m.sigma.tr_mul(x);
                let lin = (0..d).map(|j| (sx[j] - self.delta(j)).abs()).collect();
                let u = &m.design * x;
                let soc = (0..d)
                    .map(|j| {
                        let dj = self.delta(j);
                        let s: f64 = (0..n)
                            .map(|t| {
                                let e = u[t] * m.design[(t, j)] - dj;
                                e * e
                            })
                            .sum();
                        (s * inv_n).sqrt()
                    })
                    .collect();
                (lin, soc)
            }
        }
    }

    /// Smallest z making `x` feasible. With λ = 0 the moment constraints
    /// cannot be absorbed by z and are ignored here.
    pub fn minimal_z(&self, x: &DVector<f64>) -> f64 {
        let (lin, soc) = self.constraint_terms(x);
        let mut z = soc.iter().cloned().fold(0.0, f64::max);
        if self.lambda > 0.0 {
            z = lin.iter().fold(z, |acc, &l| acc.max(l / self.lambda));
        }
        z
    }

    /// Largest constraint violation at (x, z).
    pub fn feasibility_residual(&self, x: &DVector<f64>, z: f64) -> f64 {
        let (lin, soc) = self.constraint_terms(x);
        let mut worst = (-z).max(0.0);
        for (l, s) in lin.iter().zip(&soc) {
            worst = worst.max(l - self.lambda * z).max(s - z);
        }
        worst.max(0.0)
    }

    fn quartic_norm(&self, x: &DVector<f64>) -> f64 {
        let u = &self.moments.design * x;
        (u.iter().map(|v| v.powi(4)).sum::<f64>() / u.len() as f64).powf(0.25)
    }

    /// Objective at (x, z).
    pub fn objective(&self, x: &DVector<f64>, z: f64) -> f64 {
        match self.kind {
            ProgramKind::DantzigRow => x.lp_norm(1) + self.tau.unwrap_or(0.0) * z,
            ProgramKind::DebiasRow => self.quartic_norm(x) + z,
        }
    }

    /// Objective with z eliminated: f(x) + weight·minimal_z(x).
    pub fn reduced_objective(&self, x: &DVector<f64>) -> f64 {
        self.objective(x, self.minimal_z(x))
    }

    pub fn to_file(&self) -> RowProgramFile {
        let m = &self.moments;
        RowProgramFile {
            kind: self.kind,
            n: m.n(),
            d: m.d(),
            design: linalg::to_row_major(&m.design),
            response: self.response.as_ref().map(|r| r.iter().cloned().collect()),
            target: self.target,
            lambda: self.lambda,
            tau: self.tau,
            sigma_hat: linalg::to_row_major(&m.sigma),
        }
    }

    pub fn from_file(f: RowProgramFile) -> Result<Self> {
        let design = linalg::from_row_major(f.n, f.d, &f.design, "row program design")?;
        let prog = Self {
            kind: f.kind,
            moments: Arc::new(DesignMoments::new(design)?),
            response: f.response.map(DVector::from_vec),
            target: f.target,
            lambda: f.lambda,
            tau: f.tau,
        };
        prog.check()?;
        Ok(prog)
    }

    /// Debug dump for offline reproduction.
    pub fn dump(&self, path: &Path) -> Result<()> {
        crate::io::write_json(path, &self.to_file())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_file(crate::io::read_json(path)?)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RowProgramFile {
    pub kind: ProgramKind,
    pub n: usize,
    pub d: usize,
    pub design: Vec<f64>,
    pub response: Option<Vec<f64>>,
    pub target: usize,
    pub lambda: f64,
    pub tau: Option<f64>,
    /// Informational; recomputed from the design on load.
    pub sigma_hat: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Optimal,
    MaxIter,
    InfeasibleDetected,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iter: usize,
    pub objective: f64,
    pub feas_residual: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveResult {
    pub solution: Vec<f64>,
    pub z: f64,
    pub objective: f64,
    pub feas_residual: f64,
    /// Upper bound on the objective suboptimality.
    pub gap: f64,
    pub iterations: usize,
    pub status: SolveStatus,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub trace: Option<Vec<TraceRow>>,
}

impl SolveResult {
    pub fn solution_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.solution)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub tol_feas: f64,
    pub tol_opt: f64,
    /// Cap on the total number of Newton steps.
    pub max_iter: usize,
    #[serde(default)]
    pub trace: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol_feas: 1e-7,
            tol_opt: 1e-6,
            max_iter: 200_000,
            trace: false,
        }
    }
}

pub fn write_trace(path: &Path, rows: &[TraceRow]) -> Result<()> {
    crate::io::write_csv(path, rows)
}

const BARRIER_GROWTH: f64 = 10.0;
const NEWTON_DECREMENT_TOL: f64 = 1e-10;
const MAX_CENTERING_STEPS: usize = 200;
const ARMIJO: f64 = 0.25;

/// Per-row data of the barrier problem.
struct Barrier<'a> {
    prog: &'a RowProgram,
    d: usize,
    /// Linear moment offsets: constraint value is λz ∓ (g_j − Σ̂_jᵀx) for
    /// Dantzig rows and λz ∓ (Σ̂_jᵀx − δ_j) for debias rows.
    g: DVector<f64>,
    /// Quadratic pieces: q_j(x) = xᵀA_jx − 2b_jᵀx + c_j.
    b: Vec<DVector<f64>>,
    c: Vec<f64>,
}

impl<'a> Barrier<'a> {
    fn new(prog: &'a RowProgram) -> Self {
        let m = &prog.moments;
        let (n, d) = m.design.shape();
        let inv_n = 1.0 / n as f64;
        match prog.kind {
            ProgramKind::DantzigRow => {
                let y = prog.response.as_ref().expect("checked");
                let g = m.design.tr_mul(y) * inv_n;
                // b_j = (1/n) Σ_t X_tj² y_t X_t
                let mut wy = m.squared.clone();
                for t in 0..n {
                    wy.row_mut(t).scale_mut(y[t]);
                }
                let bmat = m.design.tr_mul(&wy) * inv_n;
                let y2 = y.map(|v| v * v);
                let c = (m.squared.tr_mul(&y2) * inv_n).iter().cloned().collect();
                let b = (0..d).map(|j| bmat.column(j).into_owned()).collect();
                Self { prog, d, g, b, c }
            }
            ProgramKind::DebiasRow => {
                let g = DVector::from_fn(d, |j, _| prog.delta(j));
                let b = (0..d).map(|j| m.sigma.column(j) * prog.delta(j)).collect();
                let c = (0..d).map(|j| prog.delta(j)).collect();
                Self { prog, d, g, b, c }
            }
        }
    }

    fn dim(&self) -> usize {
        // Dantzig: β, u, z.  Debias: ψ, s, z.
        match self.prog.kind {
            ProgramKind::DantzigRow => 2 * self.d + 1,
            ProgramKind::DebiasRow => self.d + 2,
        }
    }

    /// Number of logarithmic terms, which bounds the duality gap by θ/t at
    /// the central point.
    fn theta(&self) -> f64 {
        match self.prog.kind {
            ProgramKind::DantzigRow => 6.0 * self.d as f64,
            ProgramKind::DebiasRow => 2.0 + 4.0 * self.d as f64,
        }
    }

    fn z_index(&self) -> usize {
        self.dim() - 1
    }

    fn cost(&self) -> DVector<f64> {
        let mut c = DVector::zeros(self.dim());
        match self.prog.kind {
            ProgramKind::DantzigRow => {
                for i in 0..self.d {
                    c[self.d + i] = 1.0;
                }
                c[2 * self.d] = self.prog.tau.unwrap_or(1.0);
            }
            ProgramKind::DebiasRow => {
                c[self.d] = 1.0;
                c[self.d + 1] = 1.0;
            }
        }
        c
    }

    /// Signed moment term s_j(x) whose absolute value must stay below λz.
    fn moment(&self, x: &DVector<f64>, j: usize) -> f64 {
        let sigma = &self.prog.moments.sigma;
        let sx: f64 = (0..self.d).map(|i| sigma[(i, j)] * x[i]).sum();
        match self.prog.kind {
            ProgramKind::DantzigRow => self.g[j] - sx,
            ProgramKind::DebiasRow => sx - self.g[j],
        }
    }

    fn quad(&self, x: &DVector<f64>, j: usize) -> f64 {
        let ax = &self.prog.moments.a_mats[j] * x;
        x.dot(&ax) - 2.0 * self.b[j].dot(x) + self.c[j]
    }

    fn quartic(&self, x: &DVector<f64>) -> (DVector<f64>, f64) {
        let u = &self.prog.moments.design * x;
        let m = u.iter().map(|v| v.powi(4)).sum::<f64>() / u.len() as f64;
        (u, m)
    }

    fn primal(&self, v: &DVector<f64>) -> DVector<f64> {
        v.rows(0, self.d).into_owned()
    }

    /// Barrier value, or `None` outside the domain.
    fn value(&self, v: &DVector<f64>) -> Option<f64> {
        let d = self.d;
        let x = self.primal(v);
        let z = v[self.z_index()];
        if !(z > 0.0) {
            return None;
        }
        let lam = self.prog.lambda;
        let mut f = 0.0;
        let mut log = |w: f64| -> Option<()> {
            if w > 0.0 && w.is_finite() {
                f -= w.ln();
                Some(())
            } else {
                None
            }
        };
        match self.prog.kind {
            ProgramKind::DantzigRow => {
                for i in 0..d {
                    let u = v[d + i];
                    log(u - x[i])?;
                    log(u + x[i])?;
                }
            }
            ProgramKind::DebiasRow => {
                let s = v[d];
                if !(s > 0.0) {
                    return None;
                }
                let (_, m) = self.quartic(&x);
                log(s - m / s.powi(3))?;
                log(s)?;
            }
        }
        for j in 0..d {
            let sj = self.moment(&x, j);
            log(lam * z - sj)?;
            log(lam * z + sj)?;
            log(z * z - self.quad(&x, j))?;
        }
        Some(f)
    }

    /// Gradient and Hessian of the barrier at an interior point.
    fn derivatives(&self, v: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
        let d = self.d;
        let nv = self.dim();
        let zi = self.z_index();
        let x = self.primal(v);
        let z = v[zi];
        let lam = self.prog.lambda;
        let mut grad = DVector::zeros(nv);
        let mut hess = DMatrix::zeros(nv, nv);

        match self.prog.kind {
            ProgramKind::DantzigRow => {
                for i in 0..d {
                    let u = v[d + i];
                    let a = u - x[i];
                    let b = u + x[i];
                    let (ia, ib) = (1.0 / a, 1.0 / b);
                    grad[i] += ia - ib;
                    grad[d + i] += -ia - ib;
                    let (ia2, ib2) = (ia * ia, ib * ib);
                    hess[(i, i)] += ia2 + ib2;
                    hess[(d + i, d + i)] += ia2 + ib2;
                    hess[(i, d + i)] += ib2 - ia2;
                    hess[(d + i, i)] += ib2 - ia2;
                }
            }
            ProgramKind::DebiasRow => {
                let si = d;
                let s = v[si];
                let (u, m) = self.quartic(&x);
                let design = &self.prog.moments.design;
                let n = u.len() as f64;
                let u3 = u.map(|t| t * t * t);
                let grad_m = design.tr_mul(&u3) * (4.0 / n);
                let hess_m = match &self.prog.moments.fourth {
                    Some(t4) => {
                        let mut w = DVector::zeros(t4.ncols());
                        let mut col = 0;
                        for a in 0..d {
                            for b in a..d {
                                w[col] = if a == b { 1.0 } else { 2.0 } * x[a] * x[b];
                                col += 1;
                            }
                        }
                        let h = t4 * w * 12.0;
                        let mut out = DMatrix::zeros(d, d);
                        let mut col = 0;
                        for a in 0..d {
                            for b in a..d {
                                out[(a, b)] = h[col];
                                out[(b, a)] = h[col];
                                col += 1;
                            }
                        }
                        out
                    }
                    None => {
                        let mut scaled = design.clone();
                        for t in 0..design.nrows() {
                            scaled.row_mut(t).scale_mut(u[t] * u[t]);
                        }
                        design.tr_mul(&scaled) * (12.0 / n)
                    }
                };

                let s3 = s.powi(3);
                let s4 = s3 * s;
                let w = s - m / s3;
                // ∇w and ∇²w over (ψ, s)
                let mut gw = DVector::zeros(d + 1);
                for i in 0..d {
                    gw[i] = -grad_m[i] / s3;
                }
                gw[d] = 1.0 + 3.0 * m / s4;
                let inv_w = 1.0 / w;
                for i in 0..=d {
                    grad[i] -= gw[i] * inv_w;
                    for k in 0..=d {
                        hess[(i, k)] += gw[i] * gw[k] * inv_w * inv_w;
                    }
                }
                for i in 0..d {
                    for k in 0..d {
                        hess[(i, k)] += hess_m[(i, k)] / s3 * inv_w;
                    }
                    let cross = 3.0 * grad_m[i] / s4;
                    hess[(i, si)] -= cross * inv_w;
                    hess[(si, i)] -= cross * inv_w;
                }
                hess[(si, si)] += 12.0 * m / (s4 * s) * inv_w;
                // −log s
                grad[si] -= 1.0 / s;
                hess[(si, si)] += 1.0 / (s * s);
            }
        }

        let sigma = &self.prog.moments.sigma;
        // sign of ∂s_j/∂x
        let dir = match self.prog.kind {
            ProgramKind::DantzigRow => -1.0,
            ProgramKind::DebiasRow => 1.0,
        };
        let mut gv = DVector::zeros(nv);
        for j in 0..d {
            let sj = self.moment(&x, j);
            for (sign, l) in [(-1.0, lam * z - sj), (1.0, lam * z + sj)] {
                // ∇ℓ: x-part sign·dir·Σ̂_j, z-part λ
                gv.fill(0.0);
                for i in 0..d {
                    gv[i] = sign * dir * sigma[(i, j)];
                }
                gv[zi] = lam;
                let il = 1.0 / l;
                grad.axpy(-il, &gv, 1.0);
                hess.ger(il * il, &gv, &gv, 1.0);
            }

            // −log(z² − q_j)
            let a = &self.prog.moments.a_mats[j];
            let ax = a * &x;
            let w = z * z - (x.dot(&ax) - 2.0 * self.b[j].dot(&x) + self.c[j]);
            gv.fill(0.0);
            for i in 0..d {
                gv[i] = -2.0 * (ax[i] - self.b[j][i]);
            }
            gv[zi] = 2.0 * z;
            let iw = 1.0 / w;
            grad.axpy(-iw, &gv, 1.0);
            hess.ger(iw * iw, &gv, &gv, 1.0);
            for i in 0..d {
                for k in 0..d {
                    hess[(i, k)] += 2.0 * a[(i, k)] * iw;
                }
            }
            hess[(zi, zi)] -= 2.0 * iw;
        }
        (grad, hess)
    }

    fn initial_point(&self) -> DVector<f64> {
        let d = self.d;
        let mut v = DVector::zeros(self.dim());
        let x = DVector::zeros(d);
        if self.prog.kind == ProgramKind::DantzigRow {
            for i in 0..d {
                v[d + i] = 1.0;
            }
        } else {
            v[d] = 1.0;
        }
        let mut z = self.prog.minimal_z(&x);
        // reduced-form quantities may differ from the raw ones in the last bits
        for j in 0..d {
            z = z.max(self.quad(&x, j).max(0.0).sqrt());
            if self.prog.lambda > 0.0 {
                z = z.max(self.moment(&x, j).abs() / self.prog.lambda);
            }
        }
        v[self.z_index()] = 1.1 * z + 1.0;
        v
    }
}

fn newton_direction(hess: &DMatrix<f64>, grad: &DVector<f64>) -> Result<DVector<f64>> {
    let rhs = -grad;
    if let Some(ch) = hess.clone().cholesky() {
        let step = ch.solve(&rhs);
        if step.iter().all(|v| v.is_finite()) {
            return Ok(step);
        }
    }
    let scale = hess.diagonal().amax().max(1.0);
    let mut ridge = 1e-14 * scale;
    for _ in 0..12 {
        let mut h = hess.clone();
        for i in 0..h.nrows() {
            h[(i, i)] += ridge;
        }
        if let Some(ch) = h.cholesky() {
            let step = ch.solve(&rhs);
            if step.iter().all(|v| v.is_finite()) {
                return Ok(step);
            }
        }
        ridge *= 100.0;
    }
    Err(Error::Numeric("Newton system could not be factored".into()))
}

/// Solve one row program.
pub fn solve_row(program: &RowProgram, opts: &SolverOptions) -> Result<SolveResult> {
    program.check()?;
    if program.lambda == 0.0 {
        return solve_exact_moments(program, opts);
    }
    let bar = Barrier::new(program);
    let cost = bar.cost();
    let theta = bar.theta();
    let mut v = bar.initial_point();
    let mut t = 1.0f64;
    let mut iterations = 0usize;
    let mut trace = opts.trace.then(Vec::new);
    let mut converged = false;

    'outer: loop {
        // centering: minimize t·cᵀv + B(v)
        let mut centered = false;
        for _ in 0..MAX_CENTERING_STEPS {
            if iterations >= opts.max_iter {
                break 'outer;
            }
            let (g_b, h) = bar.derivatives(&v);
            let grad = &cost * t + g_b;
            if grad.iter().any(|x| !x.is_finite()) || h.iter().any(|x| !x.is_finite()) {
                return Err(Error::Numeric(format!(
                    "non-finite barrier derivatives at t = {t:.3e} (row {})",
                    program.target
                )));
            }
            let step = newton_direction(&h, &grad)?;
            let decrement = -grad.dot(&step);
            iterations += 1;
            let f0 = t * cost.dot(&v) + bar.value(&v).expect("iterate is interior");
            // below ~64 ulps of f the Armijo test only sees rounding noise
            let floor = 64.0 * f64::EPSILON * f0.abs();
            if decrement <= 2.0 * NEWTON_DECREMENT_TOL || decrement <= floor {
                centered = true;
                break;
            }
            let mut alpha = 1.0;
            let mut accepted = false;
            while alpha > 1e-16 {
                let cand = &v + &step * alpha;
                if let Some(b) = bar.value(&cand) {
                    let f = t * cost.dot(&cand) + b;
                    if f <= f0 - ARMIJO * alpha * decrement {
                        v = cand;
                        accepted = true;
                        break;
                    }
                }
                alpha *= 0.5;
            }
            if let Some(tr) = trace.as_mut() {
                let x = bar.primal(&v);
                let z = v[bar.z_index()];
                tr.push(TraceRow {
                    iter: iterations,
                    objective: program.objective(&x, z),
                    feas_residual: program.feasibility_residual(&x, z),
                });
            }
            if !accepted {
                // no further progress possible in floating point
                centered = decrement < 1e-6;
                break;
            }
        }
        if !centered && iterations >= opts.max_iter {
            break;
        }
        if theta / t <= opts.tol_opt {
            converged = true;
            break;
        }
        t *= BARRIER_GROWTH;
    }

    let x = bar.primal(&v);
    let z = program.minimal_z(&x);
    if !z.is_finite() || x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!("solver produced non-finite iterate (row {})", program.target)));
    }
    let feas = program.feasibility_residual(&x, z);
    let gap = theta / t;
    let status = if converged && feas <= opts.tol_feas && gap <= opts.tol_opt {
        SolveStatus::Optimal
    } else {
        SolveStatus::MaxIter
    };
    Ok(SolveResult {
        objective: program.objective(&x, z),
        solution: x.iter().cloned().collect(),
        z,
        feas_residual: feas,
        gap,
        iterations,
        status,
        trace,
    })
}

/// λ = 0: the moment constraints force Σ̂x = g exactly, which pins x down
/// when Σ̂ is nonsingular; z is then the smallest value covering the cone
/// constraints.
fn solve_exact_moments(program: &RowProgram, opts: &SolverOptions) -> Result<SolveResult> {
    let bar = Barrier::new(program);
    let x = linalg::solve_checked(&program.moments.sigma, &bar.g, "Σ̂", linalg::SINGULAR_CONDITION)?;
    let z = program.minimal_z(&x);
    let feas = program.feasibility_residual(&x, z);
    let status = if feas <= opts.tol_feas {
        SolveStatus::Optimal
    } else {
        SolveStatus::MaxIter
    };
    Ok(SolveResult {
        objective: program.objective(&x, z),
        solution: x.iter().cloned().collect(),
        z,
        feas_residual: feas,
        gap: 0.0,
        iterations: 0,
        status,
        trace: opts.trace.then(Vec::new),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KktReport {
    pub feas_residual: f64,
    pub gap: f64,
    pub feasible: bool,
    /// Largest objective decrease over the local probes (positive = worse
    /// point found nearby).
    pub worst_probe_decrease: f64,
    pub probes: usize,
    pub probes_passed: bool,
    /// Smallest slack among the moment constraints, relative to λz.
    pub min_moment_slack: f64,
    /// Smallest slack among the cone constraints.
    pub min_cone_slack: f64,
}

impl KktReport {
    pub fn passed(&self) -> bool {
        self.feasible && self.probes_passed
    }
}

const PROBES: usize = 50;
const PROBE_SIZE: f64 = 1e-4;

/// Local optimality and feasibility diagnostics for a returned point. Each
/// probe moves x by 1e-4 in a pseudo-random direction and re-optimizes z;
/// the objective must not drop by more than `tol_opt`.
pub fn verify_kkt(program: &RowProgram, result: &SolveResult, opts: &SolverOptions) -> Result<KktReport> {
    program.check()?;
    let x = result.solution_vector();
    if x.len() != program.d() {
        return Err(Error::dimension("solution", program.d(), x.len()));
    }
    let feas = program.feasibility_residual(&x, result.z);
    let base = program.objective(&x, result.z);
    let mut rng = RngStream::new(0x6b6b74).child("probes").rng();
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..PROBES {
        let dir = DVector::from_fn(x.len(), |_, _| rng.gen_range(-1.0..=1.0));
        let norm = dir.norm();
        if norm == 0.0 {
            continue;
        }
        let cand = &x + dir * (PROBE_SIZE / norm);
        let f = program.reduced_objective(&cand);
        worst = worst.max(base - f);
    }
    let (lin, soc) = program.constraint_terms(&x);
    let min_moment_slack = lin
        .iter()
        .map(|l| program.lambda * result.z - l)
        .fold(f64::INFINITY, f64::min);
    let min_cone_slack = soc.iter().map(|s| result.z - s).fold(f64::INFINITY, f64::min);
    Ok(KktReport {
        feas_residual: feas,
        gap: result.gap,
        feasible: feas <= opts.tol_feas,
        worst_probe_decrease: worst,
        probes: PROBES,
        probes_passed: worst <= opts.tol_opt,
        min_moment_slack,
        min_cone_slack,
    })
}
