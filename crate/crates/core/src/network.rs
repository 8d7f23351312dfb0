//! Network instances: influence matrix, payoff parameters and the
//! observable/latent partition, plus every matrix derived from them.

use std::collections::VecDeque;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, SINGULAR_CONDITION};
use crate::stats::RngStream;

/// Relative slack used when checking the dominance inequalities, so that
/// instances rescaled to be exactly tight still validate.
const DOMINANCE_SLACK: f64 = 1e-12;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub generator: String,
    pub seed: Option<u64>,
    #[serde(default)]
    pub params: serde_json::Value,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetworkInstance {
    /// Number of nodes; node ids are `0..n_nodes`.
    pub n_nodes: usize,
    /// Sorted observable node ids.
    pub observable: Vec<usize>,
    /// `g[(i, j)]` is the influence of j's consumption on i's payoff.
    pub g: DMatrix<f64>,
    pub a: DVector<f64>,
    pub b: DVector<f64>,
    pub p_bar: f64,
    pub zeta: f64,
    /// Position of each node on the line (identity for generated instances).
    pub labeling: Vec<usize>,
    pub metadata: Metadata,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Violation {
    NegativeWeight { i: usize, j: usize, value: f64 },
    SelfLoop { i: usize, value: f64 },
    RowDominance { node: usize, margin: f64 },
    ColumnDominance { node: usize, margin: f64 },
    IntrinsicValue { node: usize, margin: f64 },
    NonPositiveConcavity { node: usize, value: f64 },
    NonPositiveOutsidePrice { value: f64 },
    NonPositiveGap { value: f64 },
    Partition { reason: String },
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub ok: bool,
    pub violations: Vec<Violation>,
}

/// Matrices derived from an instance. Also carries the scalars and index sets
/// downstream computations need so they can work from this value alone.
#[derive(Clone, Debug)]
pub struct DerivedMatrices {
    pub observable: Vec<usize>,
    pub latent: Vec<usize>,
    pub a: DVector<f64>,
    pub p_bar: f64,
    pub zeta: f64,
    pub b_max: f64,
    pub m: DMatrix<f64>,
    pub m_inv: DMatrix<f64>,
    pub m_ll_inv: DMatrix<f64>,
    pub h: DMatrix<f64>,
    pub h_inv: DMatrix<f64>,
    pub s_ol: DMatrix<f64>,
    pub s_lo: DMatrix<f64>,
    pub v_o: DVector<f64>,
}

impl DerivedMatrices {
    pub fn n_observable(&self) -> usize {
        self.observable.len()
    }

    pub fn n_nodes(&self) -> usize {
        self.m.nrows()
    }

    pub fn a_o(&self) -> DVector<f64> {
        linalg::subvector(&self.a, &self.observable)
    }

    pub fn a_l(&self) -> DVector<f64> {
        linalg::subvector(&self.a, &self.latent)
    }

    /// Full price vector with latent agents at the outside option.
    pub fn full_prices(&self, p_o: &DVector<f64>) -> DVector<f64> {
        let mut p = DVector::from_element(self.n_nodes(), self.p_bar);
        for (k, &i) in self.observable.iter().enumerate() {
            p[i] = p_o[k];
        }
        p
    }

    /// `M⁻¹` reassembled from the block formula
    /// `[[H⁻¹, −H⁻¹S_OL], [−S_LO H⁻¹, M_LL⁻¹ + S_LO H⁻¹ S_OL]]`.
    pub fn block_assembled_m_inv(&self) -> DMatrix<f64> {
        let n = self.n_nodes();
        let mut out = DMatrix::zeros(n, n);
        let hs = &self.h_inv * &self.s_ol;
        let sh = &self.s_lo * &self.h_inv;
        let ll = &self.m_ll_inv + &self.s_lo * &self.h_inv * &self.s_ol;
        for (a, &i) in self.observable.iter().enumerate() {
            for (b, &j) in self.observable.iter().enumerate() {
                out[(i, j)] = self.h_inv[(a, b)];
            }
            for (b, &j) in self.latent.iter().enumerate() {
                out[(i, j)] = -hs[(a, b)];
            }
        }
        for (a, &i) in self.latent.iter().enumerate() {
            for (b, &j) in self.observable.iter().enumerate() {
                out[(i, j)] = -sh[(a, b)];
            }
            for (b, &j) in self.latent.iter().enumerate() {
                out[(i, j)] = ll[(a, b)];
            }
        }
        out
    }
}

impl NetworkInstance {
    pub fn latent(&self) -> Vec<usize> {
        let mut is_obs = vec![false; self.n_nodes];
        for &i in &self.observable {
            if i < self.n_nodes {
                is_obs[i] = true;
            }
        }
        (0..self.n_nodes).filter(|&i| !is_obs[i]).collect()
    }

    fn check_dimensions(&self) -> Result<()> {
        let n = self.n_nodes;
        if self.g.nrows() != n || self.g.ncols() != n {
            return Err(Error::dimension("influence matrix g", n, self.g.nrows().max(self.g.ncols())));
        }
        if self.a.len() != n {
            return Err(Error::dimension("intrinsic values a", n, self.a.len()));
        }
        if self.b.len() != n {
            return Err(Error::dimension("concavity b", n, self.b.len()));
        }
        if self.labeling.len() != n {
            return Err(Error::dimension("labeling", n, self.labeling.len()));
        }
        Ok(())
    }

    /// Row and column sums of `g`.
    pub fn weight_sums(&self) -> (Vec<f64>, Vec<f64>) {
        let rows = self.g.row_iter().map(|r| r.sum()).collect();
        let cols = self.g.column_iter().map(|c| c.sum()).collect();
        (rows, cols)
    }

    /// Largest gap compatible with the dominance inequalities.
    pub fn realized_gap(&self) -> f64 {
        let (rows, cols) = self.weight_sums();
        (0..self.n_nodes)
            .map(|i| 2.0 * self.b[i] - rows[i].max(cols[i]))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn validate(&self) -> Result<ValidationReport> {
        self.check_dimensions()?;
        let n = self.n_nodes;
        let mut violations = Vec::new();

        for i in 0..n {
            for j in 0..n {
                let w = self.g[(i, j)];
                if i == j {
                    if w != 0.0 {
                        violations.push(Violation::SelfLoop { i, value: w });
                    }
                } else if !(w >= 0.0) {
                    violations.push(Violation::NegativeWeight { i, j, value: w });
                }
            }
        }

        let (rows, cols) = self.weight_sums();
        for i in 0..n {
            let slack = DOMINANCE_SLACK * (2.0 * self.b[i]).abs().max(1.0);
            let row_margin = 2.0 * self.b[i] - rows[i] - self.zeta;
            if row_margin < -slack {
                violations.push(Violation::RowDominance {
                    node: i,
                    margin: row_margin,
                });
            }
            let col_margin = 2.0 * self.b[i] - cols[i] - self.zeta;
            if col_margin < -slack {
                violations.push(Violation::ColumnDominance {
                    node: i,
                    margin: col_margin,
                });
            }
            if !(self.b[i] > 0.0) {
                violations.push(Violation::NonPositiveConcavity {
                    node: i,
                    value: self.b[i],
                });
            }
            let a_margin = self.a[i] - self.p_bar;
            if !(a_margin > 0.0) {
                violations.push(Violation::IntrinsicValue {
                    node: i,
                    margin: a_margin,
                });
            }
        }
        if !(self.p_bar > 0.0) {
            violations.push(Violation::NonPositiveOutsidePrice { value: self.p_bar });
        }
        if !(self.zeta > 0.0) {
            violations.push(Violation::NonPositiveGap { value: self.zeta });
        }

        if self.observable.is_empty() {
            violations.push(Violation::Partition {
                reason: "no observable agents".into(),
            });
        }
        if self.observable.windows(2).any(|w| w[0] >= w[1]) {
            violations.push(Violation::Partition {
                reason: "observable ids must be strictly increasing".into(),
            });
        }
        if let Some(&bad) = self.observable.iter().find(|&&i| i >= n) {
            violations.push(Violation::Partition {
                reason: format!("observable id {bad} out of range"),
            });
        }
        let mut seen = vec![false; n];
        for &l in &self.labeling {
            if l >= n || seen[l] {
                violations.push(Violation::Partition {
                    reason: "labeling is not a permutation of 0..n".into(),
                });
                break;
            }
            seen[l] = true;
        }

        Ok(ValidationReport {
            ok: violations.is_empty(),
            violations,
        })
    }

    /// Compute every derived matrix. `H⁻¹` is computed both directly and as
    /// the observable block of `M⁻¹`; the two must agree to 1e-9.
    pub fn derive(&self) -> Result<DerivedMatrices> {
        let report = self.validate()?;
        if !report.ok {
            return Err(Error::Config(format!(
                "instance fails validation: {:?}",
                report.violations
            )));
        }
        let n = self.n_nodes;
        let obs = self.observable.clone();
        let lat = self.latent();

        let lambda = DMatrix::from_diagonal(&(&self.b * 2.0));
        let m = &lambda - &self.g;
        let m_inv = linalg::inverse_checked(&m, "M", SINGULAR_CONDITION)?;

        let m_oo = linalg::submatrix(&m, &obs, &obs);
        let m_ol = linalg::submatrix(&m, &obs, &lat);
        let m_lo = linalg::submatrix(&m, &lat, &obs);
        let m_ll = linalg::submatrix(&m, &lat, &lat);
        let m_ll_inv = linalg::inverse_checked(&m_ll, "M_LL", SINGULAR_CONDITION)?;

        let s_ol = &m_ol * &m_ll_inv;
        let s_lo = &m_ll_inv * &m_lo;
        let h = &m_oo - &m_ol * &s_lo;
        let h_inv_direct = linalg::inverse_checked(&h, "H", SINGULAR_CONDITION)?;
        let h_inv = linalg::submatrix(&m_inv, &obs, &obs);

        let scale = linalg::max_abs(&h_inv).max(1.0);
        let disagreement = linalg::max_abs_diff(&h_inv, &h_inv_direct);
        if disagreement > 1e-9 * scale {
            return Err(Error::Numeric(format!(
                "H⁻¹ block of M⁻¹ and direct inverse disagree by {disagreement:.3e}"
            )));
        }

        let a_o = linalg::subvector(&self.a, &obs);
        let a_l = linalg::subvector(&self.a, &lat);
        let shifted = a_l.add_scalar(-self.p_bar);
        let v_o = &h_inv * (a_o - &s_ol * shifted);

        debug_assert_eq!(m.nrows(), n);
        Ok(DerivedMatrices {
            observable: obs,
            latent: lat,
            a: self.a.clone(),
            p_bar: self.p_bar,
            zeta: self.zeta,
            b_max: self.b.max(),
            m,
            m_inv,
            m_ll_inv,
            h,
            h_inv,
            s_ol,
            s_lo,
            v_o,
        })
    }

    /// True when every node reaches every other node along edges of `g`.
    pub fn is_strongly_connected(&self) -> bool {
        let n = self.n_nodes;
        if n == 0 {
            return true;
        }
        let (fwd, rev) = self.adjacency();
        let reach = |adj: &Vec<Vec<usize>>| bfs_distances(adj, 0).iter().all(|d| d.is_some());
        reach(&fwd) && reach(&rev)
    }

    /// Forward (i → j when g_ij > 0) and reverse adjacency lists.
    pub fn adjacency(&self) -> (Vec<Vec<usize>>, Vec<Vec<usize>>) {
        let n = self.n_nodes;
        let mut fwd = vec![Vec::new(); n];
        let mut rev = vec![Vec::new(); n];
        for i in 0..n {
            for j in 0..n {
                if i != j && self.g[(i, j)] > 0.0 {
                    fwd[i].push(j);
                    rev[j].push(i);
                }
            }
        }
        (fwd, rev)
    }

    /// Directed hop distance matrix (`None` when unreachable).
    pub fn hop_distances(&self) -> Vec<Vec<Option<usize>>> {
        let (fwd, _) = self.adjacency();
        (0..self.n_nodes).map(|i| bfs_distances(&fwd, i)).collect()
    }

    /// `|{j : ρ(i,j) ≤ k} ∪ {j : ρ(j,i) ≤ k}|` for every node i and k = 0..=k_max.
    pub fn neighborhood_sizes(&self, k_max: usize) -> Vec<Vec<usize>> {
        let (fwd, rev) = self.adjacency();
        (0..self.n_nodes)
            .map(|i| {
                let out = bfs_distances(&fwd, i);
                let inn = bfs_distances(&rev, i);
                let mut counts = vec![0usize; k_max + 1];
                for j in 0..self.n_nodes {
                    let d = match (out[j], inn[j]) {
                        (Some(a), Some(b)) => Some(a.min(b)),
                        (a, b) => a.or(b),
                    };
                    if let Some(d) = d {
                        if d <= k_max {
                            counts[d] += 1;
                        }
                    }
                }
                for k in 1..=k_max {
                    counts[k] += counts[k - 1];
                }
                counts
            })
            .collect()
    }

    /// Relabel nodes by a permutation (`perm[old] = new`). Derived matrices of
    /// the result are the permuted derived matrices of `self`.
    pub fn permuted(&self, perm: &[usize]) -> Result<NetworkInstance> {
        let n = self.n_nodes;
        if perm.len() != n {
            return Err(Error::dimension("permutation", n, perm.len()));
        }
        let mut g = DMatrix::zeros(n, n);
        let mut a = DVector::zeros(n);
        let mut b = DVector::zeros(n);
        let mut labeling = vec![0; n];
        for i in 0..n {
            a[perm[i]] = self.a[i];
            b[perm[i]] = self.b[i];
            labeling[perm[i]] = self.labeling[i];
            for j in 0..n {
                g[(perm[i], perm[j])] = self.g[(i, j)];
            }
        }
        let mut observable: Vec<usize> = self.observable.iter().map(|&i| perm[i]).collect();
        observable.sort_unstable();
        Ok(NetworkInstance {
            n_nodes: n,
            observable,
            g,
            a,
            b,
            p_bar: self.p_bar,
            zeta: self.zeta,
            labeling,
            metadata: self.metadata.clone(),
        })
    }

    pub fn to_file(&self) -> NetworkFile {
        NetworkFile {
            nodes: (0..self.n_nodes).collect(),
            observable: self.observable.clone(),
            g: linalg::to_row_major(&self.g),
            a: self.a.iter().cloned().collect(),
            b: self.b.iter().cloned().collect(),
            p_bar: self.p_bar,
            zeta: self.zeta,
            labeling: self.labeling.clone(),
            metadata: self.metadata.clone(),
        }
    }

    pub fn from_file(file: NetworkFile) -> Result<Self> {
        let n = file.nodes.len();
        if file.nodes.iter().enumerate().any(|(i, &id)| i != id) {
            return Err(Error::Config("node ids must be 0..|V|-1 in order".into()));
        }
        let g = linalg::from_row_major(n, n, &file.g, "influence matrix g")?;
        let labeling = if file.labeling.is_empty() {
            (0..n).collect()
        } else {
            file.labeling
        };
        let inst = NetworkInstance {
            n_nodes: n,
            observable: file.observable,
            g,
            a: DVector::from_vec(file.a),
            b: DVector::from_vec(file.b),
            p_bar: file.p_bar,
            zeta: file.zeta,
            labeling,
            metadata: file.metadata,
        };
        inst.check_dimensions()?;
        Ok(inst)
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(&self.to_file()).map_err(|e| Error::json("<network>", e))
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let file: NetworkFile = serde_json::from_str(s).map_err(|e| Error::json("<network>", e))?;
        Self::from_file(file)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        crate::io::write_json(path, &self.to_file())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_file(crate::io::read_json(path)?)
    }
}

/// On-disk JSON layout of a network instance; `g` is row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkFile {
    pub nodes: Vec<usize>,
    pub observable: Vec<usize>,
    pub g: Vec<f64>,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub p_bar: f64,
    pub zeta: f64,
    #[serde(default)]
    pub labeling: Vec<usize>,
    #[serde(default)]
    pub metadata: Metadata,
}

fn bfs_distances(adj: &[Vec<usize>], source: usize) -> Vec<Option<usize>> {
    let mut dist = vec![None; adj.len()];
    let mut queue = VecDeque::new();
    dist[source] = Some(0);
    queue.push_back(source);
    while let Some(u) = queue.pop_front() {
        let du = dist[u].unwrap_or(0);
        for &v in &adj[u] {
            if dist[v].is_none() {
                dist[v] = Some(du + 1);
                queue.push_back(v);
            }
        }
    }
    dist
}

/// Node-level parameters shared by every generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeParams {
    pub n_nodes: usize,
    pub latent_fraction: f64,
    pub b_value: f64,
    pub a_value: f64,
    pub p_bar: f64,
    /// Target dominance gap as a fraction of `b_value`.
    #[serde(default = "default_weight_margin")]
    pub weight_margin: f64,
    /// Symmetrize the drawn weights before rescaling.
    #[serde(default)]
    pub symmetric: bool,
    /// Optional relative per-node jitter of `a` and `b` (uniform on ±jitter).
    #[serde(default)]
    pub jitter: f64,
}

fn default_weight_margin() -> f64 {
    0.2
}

impl Default for NodeParams {
    fn default() -> Self {
        Self {
            n_nodes: 20,
            latent_fraction: 0.5,
            b_value: 1.0,
            a_value: 2.0,
            p_bar: 1.5,
            weight_margin: default_weight_margin(),
            symmetric: false,
            jitter: 0.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Growth {
    Exponential { c_e: f64, d_e: f64 },
    Polynomial { c_p: f64, d_p: f64 },
}

impl Growth {
    pub fn bound(&self, k: usize) -> f64 {
        match *self {
            Growth::Exponential { c_e, d_e } => c_e * d_e.powi(k as i32),
            Growth::Polynomial { c_p, d_p } => c_p * (k as f64).powf(d_p),
        }
    }

    /// Does every neighborhood-size profile respect the bound? The polynomial
    /// bound is checked for k ≥ 1 (it vanishes at k = 0).
    pub fn holds_for(&self, instance: &NetworkInstance) -> bool {
        let k_max = instance.n_nodes;
        let first = match self {
            Growth::Exponential { .. } => 0,
            Growth::Polynomial { .. } => 1,
        };
        instance.neighborhood_sizes(k_max).iter().all(|sizes| {
            sizes
                .iter()
                .enumerate()
                .skip(first)
                .all(|(k, &s)| s as f64 <= self.bound(k) * (1.0 + 1e-12))
        })
    }
}

/// Generator description as stored in experiment configs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "family")]
pub enum GeneratorSpec {
    Banded {
        #[serde(flatten)]
        nodes: NodeParams,
        bandwidth: usize,
        weight_scale: f64,
    },
    PolynomialDecay {
        #[serde(flatten)]
        nodes: NodeParams,
        theta: f64,
        c_scale: f64,
    },
    BoundedGrowth {
        #[serde(flatten)]
        nodes: NodeParams,
        growth: Growth,
        weight_scale: f64,
    },
}

impl GeneratorSpec {
    pub fn generate(&self, seed: u64) -> Result<NetworkInstance> {
        match self {
            GeneratorSpec::Banded {
                nodes,
                bandwidth,
                weight_scale,
            } => generate_banded(nodes, *bandwidth, *weight_scale, seed),
            GeneratorSpec::PolynomialDecay {
                nodes,
                theta,
                c_scale,
            } => generate_polynomial_decay(nodes, *theta, *c_scale, seed),
            GeneratorSpec::BoundedGrowth {
                nodes,
                growth,
                weight_scale,
            } => generate_bounded_growth(nodes, *growth, *weight_scale, seed),
        }
    }

    pub fn nodes(&self) -> &NodeParams {
        match self {
            GeneratorSpec::Banded { nodes, .. }
            | GeneratorSpec::PolynomialDecay { nodes, .. }
            | GeneratorSpec::BoundedGrowth { nodes, .. } => nodes,
        }
    }
}

fn check_node_params(p: &NodeParams) -> Result<()> {
    if p.n_nodes == 0 {
        return Err(Error::Config("n_nodes must be positive".into()));
    }
    if !(0.0..1.0).contains(&p.latent_fraction) && p.latent_fraction != 1.0 {
        return Err(Error::Config(format!(
            "latent_fraction {} outside [0,1]",
            p.latent_fraction
        )));
    }
    if !(p.b_value > 0.0 && p.p_bar > 0.0) {
        return Err(Error::Config("b_value and p_bar must be positive".into()));
    }
    if !(p.weight_margin > 0.0 && p.weight_margin < 2.0) {
        return Err(Error::Config(format!(
            "weight_margin {} must lie in (0, 2)",
            p.weight_margin
        )));
    }
    if !(0.0..1.0).contains(&p.jitter) {
        return Err(Error::Config(format!("jitter {} outside [0,1)", p.jitter)));
    }
    if p.a_value * (1.0 - p.jitter) <= p.p_bar {
        return Err(Error::Config(format!(
            "a_value {} (with jitter {}) does not exceed p_bar {}",
            p.a_value, p.jitter, p.p_bar
        )));
    }
    Ok(())
}

/// Draw a, b, the latent set and rescale the candidate weights so that both
/// dominance inequalities hold with gap `weight_margin * min(b)`.
fn assemble(
    p: &NodeParams,
    mut g: DMatrix<f64>,
    stream: &RngStream,
    generator: &str,
    seed: u64,
    params: serde_json::Value,
) -> Result<NetworkInstance> {
    let n = p.n_nodes;
    let mut rng = stream.child("nodes").rng();
    let mut jittered = |base: f64| {
        if p.jitter > 0.0 {
            base * (1.0 + p.jitter * rng.gen_range(-1.0..=1.0))
        } else {
            base
        }
    };
    let a = DVector::from_fn(n, |_, _| jittered(p.a_value));
    let b = DVector::from_fn(n, |_, _| jittered(p.b_value));

    if p.symmetric {
        g = (&g + g.transpose()) * 0.5;
    }
    for i in 0..n {
        g[(i, i)] = 0.0;
    }

    let target_gap = p.weight_margin * b.min();
    let mut factor: f64 = 1.0;
    for i in 0..n {
        let rs = g.row(i).sum();
        let cs = g.column(i).sum();
        let worst = rs.max(cs);
        let room = 2.0 * b[i] - target_gap;
        if room <= 0.0 {
            return Err(Error::Config(format!(
                "node {i}: 2b = {} leaves no room for gap {target_gap}",
                2.0 * b[i]
            )));
        }
        if worst > 0.0 {
            factor = factor.min(room / worst);
        }
    }
    if factor < 1.0 {
        g *= factor;
    }

    let n_latent = ((p.latent_fraction * n as f64).round() as usize).min(n - 1);
    let mut lrng = stream.child("latent").rng();
    let mut is_latent = vec![false; n];
    for i in sample(&mut lrng, n, n_latent).into_iter() {
        is_latent[i] = true;
    }
    let observable: Vec<usize> = (0..n).filter(|&i| !is_latent[i]).collect();

    let mut params = params;
    if let serde_json::Value::Object(map) = &mut params {
        map.insert("target_zeta".into(), serde_json::json!(target_gap));
    }
    let mut inst = NetworkInstance {
        n_nodes: n,
        observable,
        g,
        a,
        b,
        p_bar: p.p_bar,
        zeta: target_gap,
        labeling: (0..n).collect(),
        metadata: Metadata {
            generator: generator.to_owned(),
            seed: Some(seed),
            params,
        },
    };
    // the realized gap is at least the target up to rounding in the rescale
    inst.zeta = inst.realized_gap();
    let report = inst.validate()?;
    if !report.ok {
        return Err(Error::Config(format!(
            "generated instance failed validation: {:?}",
            report.violations
        )));
    }
    Ok(inst)
}

fn uniform_open_closed(rng: &mut impl Rng, scale: f64) -> f64 {
    // (0, scale]
    scale * (1.0 - rng.gen::<f64>())
}

/// m-banded instance: `g_ij ≠ 0` only for `0 < |i − j| ≤ m`.
pub fn generate_banded(
    p: &NodeParams,
    bandwidth: usize,
    weight_scale: f64,
    seed: u64,
) -> Result<NetworkInstance> {
    check_node_params(p)?;
    if !(weight_scale > 0.0) {
        return Err(Error::Config("weight_scale must be positive".into()));
    }
    let n = p.n_nodes;
    let stream = RngStream::new(seed).child("network").child("banded");
    let mut rng = stream.child("weights").rng();
    let mut g = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            if i != j && i.abs_diff(j) <= bandwidth {
                g[(i, j)] = uniform_open_closed(&mut rng, weight_scale);
            }
        }
    }
    let params = serde_json::json!({
        "bandwidth": bandwidth,
        "weight_scale": weight_scale,
        "nodes": p,
    });
    assemble(p, g, &stream, "banded", seed, params)
}

/// Polynomially decaying weights `g_ij ≤ c_scale / (1 + |i − j|)^θ`.
pub fn generate_polynomial_decay(
    p: &NodeParams,
    theta: f64,
    c_scale: f64,
    seed: u64,
) -> Result<NetworkInstance> {
    check_node_params(p)?;
    if !(theta > 1.0) {
        return Err(Error::Config(format!("theta must exceed 1, got {theta}")));
    }
    if !(c_scale > 0.0) {
        return Err(Error::Config("c_scale must be positive".into()));
    }
    let n = p.n_nodes;
    let stream = RngStream::new(seed).child("network").child("polynomial_decay");
    let mut rng = stream.child("weights").rng();
    let mut g = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let decay = (1.0 + i.abs_diff(j) as f64).powf(-theta);
                g[(i, j)] = uniform_open_closed(&mut rng, c_scale) * decay;
            }
        }
    }
    let params = serde_json::json!({ "theta": theta, "c_scale": c_scale, "nodes": p });
    assemble(p, g, &stream, "polynomial_decay", seed, params)
}

/// Graph with bounded neighborhood growth. Exponential growth uses a random
/// digraph with `floor(d_e)` out-edges per node; polynomial growth uses a
/// `round(d_p)`-dimensional grid with nearest-neighbor edges. The declared
/// bound is verified by BFS, resampling the random graph up to 64 times.
pub fn generate_bounded_growth(
    p: &NodeParams,
    growth: Growth,
    weight_scale: f64,
    seed: u64,
) -> Result<NetworkInstance> {
    check_node_params(p)?;
    if !(weight_scale > 0.0) {
        return Err(Error::Config("weight_scale must be positive".into()));
    }
    let n = p.n_nodes;
    let stream = RngStream::new(seed).child("network").child("bounded_growth");
    let params = serde_json::json!({ "growth": growth, "weight_scale": weight_scale, "nodes": p });

    match growth {
        Growth::Exponential { c_e, d_e } => {
            if !(c_e > 0.0 && d_e >= 1.0) {
                return Err(Error::Config(
                    "exponential growth needs c_e > 0 and d_e ≥ 1".into(),
                ));
            }
            let out_degree = (d_e.floor() as usize).min(n.saturating_sub(1));
            for attempt in 0..64u64 {
                let astream = stream.index(attempt);
                let mut rng = astream.child("edges").rng();
                let mut g = DMatrix::zeros(n, n);
                for i in 0..n {
                    if n > 1 {
                        for j in sample(&mut rng, n - 1, out_degree).into_iter() {
                            let j = if j >= i { j + 1 } else { j };
                            g[(i, j)] = uniform_open_closed(&mut rng, weight_scale);
                        }
                    }
                }
                let inst = assemble(p, g, &astream, "bounded_growth", seed, params.clone())?;
                if growth.holds_for(&inst) {
                    return Ok(inst);
                }
            }
            Err(Error::Config(format!(
                "no graph on {n} nodes met exponential growth bound {c_e}·{d_e}^k in 64 draws"
            )))
        }
        Growth::Polynomial { c_p, d_p } => {
            if !(c_p > 0.0 && d_p > 0.0) {
                return Err(Error::Config("polynomial growth needs c_p, d_p > 0".into()));
            }
            let dim = (d_p.round() as usize).max(1);
            let side = {
                let mut s = (n as f64).powf(1.0 / dim as f64).floor() as usize;
                while s.pow(dim as u32) < n {
                    s += 1;
                }
                s.max(1)
            };
            let coords = |idx: usize| -> Vec<usize> {
                let mut c = Vec::with_capacity(dim);
                let mut r = idx;
                for _ in 0..dim {
                    c.push(r % side);
                    r /= side;
                }
                c
            };
            let mut rng = stream.child("weights").rng();
            let mut g = DMatrix::zeros(n, n);
            for i in 0..n {
                for j in 0..n {
                    if i == j {
                        continue;
                    }
                    let (ci, cj) = (coords(i), coords(j));
                    let manhattan: usize = ci.iter().zip(&cj).map(|(x, y)| x.abs_diff(*y)).sum();
                    if manhattan == 1 {
                        g[(i, j)] = uniform_open_closed(&mut rng, weight_scale);
                    }
                }
            }
            let inst = assemble(p, g, &stream, "bounded_growth", seed, params)?;
            if growth.holds_for(&inst) {
                Ok(inst)
            } else {
                Err(Error::Config(format!(
                    "grid of dimension {dim} on {n} nodes exceeds polynomial growth bound {c_p}·k^{d_p}"
                )))
            }
        }
    }
}

/// Bonacich centrality `K(α, G) = (I − αG)⁻¹ 1`.
///
/// The spectral radius of αG is bounded from above by `‖(αG)^(2^j)‖^(1/2^j)`
/// (repeated squaring); the sum diverges when the estimate reaches 1.
pub fn bonacich(alpha: f64, g_sub: &DMatrix<f64>) -> Result<DVector<f64>> {
    if !g_sub.is_square() {
        return Err(Error::dimension("Bonacich matrix (square)", g_sub.nrows(), g_sub.ncols()));
    }
    let n = g_sub.nrows();
    if n == 0 {
        return Ok(DVector::zeros(0));
    }
    let a = g_sub * alpha;
    let radius = spectral_radius_upper(&a);
    if radius >= 1.0 {
        return Err(Error::Domain(format!(
            "Bonacich centrality diverges: spectral radius of αG ≈ {radius:.6}"
        )));
    }
    let system = DMatrix::identity(n, n) - &a;
    let inv = linalg::inverse_checked(&system, "I − αG", SINGULAR_CONDITION)?;
    if let Some(neg) = inv.iter().cloned().find(|&x| x < -1e-12) {
        return Err(Error::Domain(format!(
            "(I − αG)⁻¹ has a negative entry ({neg:.3e}); centrality undefined"
        )));
    }
    Ok(inv * DVector::from_element(n, 1.0))
}

/// Upper bound on the spectral radius that converges to it as the number of
/// squarings grows.
pub fn spectral_radius_upper(a: &DMatrix<f64>) -> f64 {
    let mut m = a.clone();
    // log of the accumulated normalization
    let mut log_scale = 0.0f64;
    let mut power = 1.0f64;
    let mut estimate = linalg::norm_inf(&m);
    for _ in 0..24 {
        let nrm = linalg::norm_inf(&m);
        if nrm == 0.0 {
            return 0.0;
        }
        estimate = ((nrm.ln() + log_scale) / power).exp();
        // normalize before squaring to avoid overflow
        m /= nrm;
        log_scale = 2.0 * (log_scale + nrm.ln());
        m = &m * &m;
        power *= 2.0;
    }
    let nrm = linalg::norm_inf(&m);
    if nrm > 0.0 {
        estimate = estimate.min(((nrm.ln() + log_scale) / power).exp());
    }
    estimate
}
