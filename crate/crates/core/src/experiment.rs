//! Config-driven sweeps: generate → simulate → estimate → price → evaluate
//! over a grid of sample sizes and replications, with resumable artifacts.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Instant;

use rand::RngCore;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::equilibrium::{simulate_with, PriceSampler, ShockModel};
use crate::error::{Error, Result};
use crate::estimator::{estimate, EstimateOptions, EstimationResult, ThresholdMode};
use crate::conic::SolverOptions;
use crate::linalg;
use crate::network::{DerivedMatrices, GeneratorSpec, NetworkInstance};
use crate::pricing;
use crate::stats::{self, RngStream};

pub const MANIFEST: &str = "MANIFEST";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub generator: GeneratorSpec,
    #[serde(default)]
    pub shocks: ShockModel,
    #[serde(default)]
    pub prices: PriceSampler,
    pub n_grid: Vec<usize>,
    pub replications: usize,
    #[serde(default)]
    pub threshold_mode: ThresholdMode,
    /// Root seed; every (stage, n, replication) derives its own stream.
    pub seed: u64,
    #[serde(default)]
    pub solver: SolverOptions,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn check(&self) -> Result<()> {
        self.shocks.check()?;
        self.prices.check()?;
        if self.n_grid.is_empty() {
            return Err(Error::Config("n_grid is empty".into()));
        }
        if self.n_grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(format!("n_grid {:?} must be strictly increasing", self.n_grid)));
        }
        if let Some(&n) = self.n_grid.iter().find(|&&n| n < crate::estimator::MIN_OBSERVATIONS) {
            return Err(Error::Config(format!(
                "n = {n} below the minimum of {} observations",
                crate::estimator::MIN_OBSERVATIONS
            )));
        }
        if self.replications == 0 {
            return Err(Error::Config("replications must be at least 1".into()));
        }
        if let ThresholdMode::Bootstrap { alpha, draws } = self.threshold_mode {
            if !(alpha > 0.0 && alpha <= 1.0) {
                return Err(Error::Config(format!("bootstrap α = {alpha} outside (0, 1]")));
            }
            if draws < crate::estimator::MIN_BOOTSTRAP_DRAWS {
                return Err(Error::Config(format!("bootstrap needs B ≥ 200, got {draws}")));
            }
        }
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let cfg: Self = crate::io::read_json(path)?;
        cfg.check()?;
        Ok(cfg)
    }

    /// SHA-256 of the canonical JSON of everything except the output directory.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.out_dir = None;
        let bytes = serde_json::to_vec(&c).expect("config serializes");
        hex::encode(Sha256::digest(bytes))
    }

    fn stream(&self) -> RngStream {
        RngStream::new(self.seed)
    }

    pub fn instance_seed(&self) -> u64 {
        self.stream().child("instance").rng().next_u64()
    }

    pub fn panel_stream(&self, n: usize, rep: usize) -> RngStream {
        self.stream().child("panel").index(n as u64).index(rep as u64)
    }

    pub fn estimate_seed(&self, n: usize, rep: usize) -> u64 {
        self.stream()
            .child("estimate")
            .index(n as u64)
            .index(rep as u64)
            .rng()
            .next_u64()
    }

    pub fn estimate_options(&self, n: usize, rep: usize) -> EstimateOptions {
        EstimateOptions {
            threshold_mode: self.threshold_mode.clone(),
            seed: self.estimate_seed(n, rep),
            solver: self.solver.clone(),
        }
    }

    pub fn cells(&self) -> Vec<Cell> {
        self.n_grid
            .iter()
            .flat_map(|&n| (0..self.replications).map(move |replication| Cell { n, replication }))
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Cell {
    pub n: usize,
    pub replication: usize,
}

impl Cell {
    pub fn id(&self) -> String {
        format!("n{}/rep{}", self.n, self.replication)
    }

    pub fn dir(&self, root: &Path) -> PathBuf {
        root.join("cells").join(format!("n{}", self.n)).join(format!("rep{}", self.replication))
    }
}

/// Truth-dependent metrics of one (n, replication) cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellRecord {
    pub n: usize,
    pub replication: usize,
    /// max |W̌ − H⁻¹|
    pub max_err_check: f64,
    /// max |W̌^μ − H⁻¹|
    pub max_err_mu: f64,
    pub err1_mu: f64,
    pub errinf_mu: f64,
    /// Whether every H⁻¹ entry lies in its bootstrap interval.
    pub ci_covered: Option<bool>,
    pub ci_fraction: Option<f64>,
    pub revenue_gap: Option<f64>,
    pub price_error: Option<String>,
    pub binding_prices: usize,
    pub floored_prices: usize,
    pub worst_feasibility: f64,
    pub rows_not_optimal: usize,
}

impl CellRecord {
    pub fn rowcol_err_mu(&self) -> f64 {
        self.err1_mu.max(self.errinf_mu)
    }
}

pub fn evaluate_estimate(cell: Cell, derived: &DerivedMatrices, est: &EstimationResult) -> CellRecord {
    let h_inv = &derived.h_inv;
    let diff = &est.w_check_mu - h_inv;
    let (ci_covered, ci_fraction) = match est.confidence_band() {
        Some((lo, hi)) => {
            let inside = h_inv
                .iter()
                .zip(lo.iter().zip(hi.iter()))
                .filter(|&(h, (l, u))| l <= h && h <= u)
                .count();
            (Some(inside == h_inv.len()), Some(inside as f64 / h_inv.len() as f64))
        }
        None => (None, None),
    };
    let priced = pricing::estimated_prices(est, derived.p_bar)
        .and_then(|sol| pricing::revenue_gap(derived, &sol.prices).map(|g| (sol, g)));
    let (revenue_gap, price_error, binding_prices, floored_prices) = match priced {
        Ok((sol, gap)) => (Some(gap.gap), None, sol.binding.len(), sol.floored.len()),
        Err(e) => (None, Some(e.to_string()), 0, 0),
    };
    CellRecord {
        n: cell.n,
        replication: cell.replication,
        max_err_check: linalg::max_abs_diff(&est.w_check, h_inv),
        max_err_mu: linalg::max_abs(&diff),
        err1_mu: linalg::norm_1(&diff),
        errinf_mu: linalg::norm_inf(&diff),
        ci_covered,
        ci_fraction,
        revenue_gap,
        price_error,
        binding_prices,
        floored_prices,
        worst_feasibility: est.worst_feasibility(),
        rows_not_optimal: est
            .diagnostics
            .iter()
            .filter(|d| d.status != crate::conic::SolveStatus::Optimal)
            .count(),
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub count: usize,
    pub median: Option<f64>,
    pub iqr: Option<f64>,
}

impl Summary {
    pub fn of(values: &[f64]) -> Self {
        if values.is_empty() {
            return Self::default();
        }
        Self {
            count: values.len(),
            median: Some(stats::median(values)),
            iqr: Some(stats::iqr(values)),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub n: usize,
    pub max_err_check: Summary,
    pub max_err_mu: Summary,
    pub rowcol_err_mu: Summary,
    pub revenue_gap: Summary,
    /// Share of replications whose bootstrap band covered every entry.
    pub coverage: Option<f64>,
    pub price_failures: usize,
}

pub fn aggregate(records: &[CellRecord]) -> Vec<Aggregate> {
    let ns: BTreeSet<usize> = records.iter().map(|r| r.n).collect();
    ns.into_iter()
        .map(|n| {
            let rs: Vec<&CellRecord> = records.iter().filter(|r| r.n == n).collect();
            let col = |f: &dyn Fn(&CellRecord) -> Option<f64>| -> Vec<f64> { rs.iter().filter_map(|r| f(r)).collect() };
            let cov: Vec<f64> = col(&|r| r.ci_covered.map(|c| if c { 1.0 } else { 0.0 }));
            Aggregate {
                n,
                max_err_check: Summary::of(&col(&|r| Some(r.max_err_check))),
                max_err_mu: Summary::of(&col(&|r| Some(r.max_err_mu))),
                rowcol_err_mu: Summary::of(&col(&|r| Some(r.rowcol_err_mu()))),
                revenue_gap: Summary::of(&col(&|r| r.revenue_gap)),
                coverage: (!cov.is_empty()).then(|| stats::mean(&cov)),
                price_failures: rs.iter().filter(|r| r.price_error.is_some()).count(),
            }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub config_hash: String,
    /// Observable positions where the complete-information optimum sits at p̄.
    pub benchmark_binding: Vec<usize>,
    pub records: Vec<CellRecord>,
    pub aggregates: Vec<Aggregate>,
}

impl SweepReport {
    pub fn new(config_hash: String, benchmark_binding: Vec<usize>, mut records: Vec<CellRecord>) -> Self {
        records.sort_by_key(|r| (r.n, r.replication));
        let aggregates = aggregate(&records);
        Self {
            config_hash,
            benchmark_binding,
            records,
            aggregates,
        }
    }

    /// Aggregates must be reproducible from the records.
    pub fn check(&self) -> Result<()> {
        if aggregate(&self.records) != self.aggregates {
            return Err(Error::Config("sweep report aggregates do not match its records".into()));
        }
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let r: Self = crate::io::read_json(path)?;
        r.check()?;
        Ok(r)
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        crate::io::write_json(&dir.join("sweep_report.json"), self)?;
        crate::io::write_csv(&dir.join("sweep_report.csv"), &self.records)
    }

    pub fn aggregate_rows(&self) -> Vec<AggregateRow> {
        self.aggregates
            .iter()
            .map(|a| AggregateRow {
                n: a.n,
                replications: a.max_err_check.count,
                max_err_check_median: a.max_err_check.median,
                max_err_check_iqr: a.max_err_check.iqr,
                rowcol_err_mu_median: a.rowcol_err_mu.median,
                rowcol_err_mu_iqr: a.rowcol_err_mu.iqr,
                revenue_gap_median: a.revenue_gap.median,
                revenue_gap_iqr: a.revenue_gap.iqr,
                coverage: a.coverage,
                price_failures: a.price_failures,
            })
            .collect()
    }

    pub fn render_text(&self) -> String {
        let fmt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:.4e}"));
        let mut out = String::new();
        let _ = writeln!(out, "config {}", &self.config_hash[..16.min(self.config_hash.len())]);
        if !self.benchmark_binding.is_empty() {
            let _ = writeln!(out, "benchmark prices bind at p̄ for positions {:?}", self.benchmark_binding);
        }
        let _ = writeln!(
            out,
            "{:>7} {:>4} {:>12} {:>12} {:>12} {:>9}",
            "n", "R", "max|W̌-H⁻¹|", "rowcol(W̌μ)", "rev. gap", "coverage"
        );
        for a in &self.aggregates {
            let _ = writeln!(
                out,
                "{:>7} {:>4} {:>12} {:>12} {:>12} {:>9}",
                a.n,
                a.max_err_check.count,
                fmt(a.max_err_check.median),
                fmt(a.rowcol_err_mu.median),
                fmt(a.revenue_gap.median),
                a.coverage.map_or_else(|| "-".to_string(), |c| format!("{c:.3}")),
            );
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub n: usize,
    pub replications: usize,
    pub max_err_check_median: Option<f64>,
    pub max_err_check_iqr: Option<f64>,
    pub rowcol_err_mu_median: Option<f64>,
    pub rowcol_err_mu_iqr: Option<f64>,
    pub revenue_gap_median: Option<f64>,
    pub revenue_gap_iqr: Option<f64>,
    pub coverage: Option<f64>,
    pub price_failures: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_hash: String,
    pub complete: bool,
    pub completed: BTreeSet<String>,
}

impl Manifest {
    pub fn read(dir: &Path) -> Result<Option<Self>> {
        let path = dir.join(MANIFEST);
        if !path.exists() {
            return Ok(None);
        }
        crate::io::read_json(&path).map(Some)
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        crate::io::write_json(&dir.join(MANIFEST), self)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellTiming {
    pub n: usize,
    pub replication: usize,
    pub simulate_ms: f64,
    pub step1_ms: f64,
    pub step2_ms: f64,
    pub step3_ms: f64,
    pub thresholds_ms: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepOutcome {
    pub report: SweepReport,
    pub skipped: usize,
    pub ran: usize,
}

/// Run one cell in memory, without touching disk.
pub fn run_cell(
    config: &ExperimentConfig,
    derived: &DerivedMatrices,
    cell: Cell,
) -> Result<(CellRecord, crate::equilibrium::PanelData, EstimationResult, CellTiming)> {
    let t0 = Instant::now();
    let sim = simulate_with(derived, cell.n, &config.prices, &config.shocks, &config.panel_stream(cell.n, cell.replication))
        .map_err(|e| e.in_stage("simulate"))?;
    let simulate_ms = t0.elapsed().as_secs_f64() * 1e3;
    let est = estimate(&sim.panel, &config.estimate_options(cell.n, cell.replication)).map_err(|e| e.in_stage("estimate"))?;
    let record = evaluate_estimate(cell, derived, &est);
    let timing = CellTiming {
        n: cell.n,
        replication: cell.replication,
        simulate_ms,
        step1_ms: est.timings.step1_ms,
        step2_ms: est.timings.step2_ms,
        step3_ms: est.timings.step3_ms,
        thresholds_ms: est.timings.thresholds_ms,
    };
    Ok((record, sim.panel, est, timing))
}

pub fn build_instance(config: &ExperimentConfig) -> Result<NetworkInstance> {
    config.generator.generate(config.instance_seed()).map_err(|e| e.in_stage("generate"))
}

/// Full sweep in memory; used by tests and by [`run_pipeline`].
pub fn sweep_in_memory(config: &ExperimentConfig) -> Result<SweepReport> {
    config.check()?;
    let instance = build_instance(config)?;
    let derived = instance.derive().map_err(|e| e.in_stage("derive"))?;
    let bench = pricing::benchmark_prices(&derived).map_err(|e| e.in_stage("benchmark"))?;
    let records = config
        .cells()
        .into_par_iter()
        .map(|cell| {
            run_cell(config, &derived, cell)
                .map(|r| r.0)
                .map_err(|e| e.in_stage(format!("cell {}", cell.id())))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepReport::new(config.hash(), bench.binding, records))
}

/// Run the sweep under `out`, writing per-cell artifacts and a MANIFEST of
/// completed cells. With `resume`, cells already listed are loaded rather
/// than recomputed.
pub fn run_pipeline(config: &ExperimentConfig, out: &Path, resume: bool) -> Result<SweepOutcome> {
    config.check()?;
    let hash = config.hash();
    let mut manifest = match Manifest::read(out)? {
        Some(m) if resume => {
            if m.config_hash != hash {
                return Err(Error::Config(format!(
                    "{} was produced by a different config (hash {}), refusing to resume",
                    out.display(),
                    m.config_hash
                )));
            }
            m
        }
        _ => Manifest {
            config_hash: hash.clone(),
            ..Default::default()
        },
    };
    manifest.complete = false;
    manifest.write(out)?;
    crate::io::write_json(&out.join("config.json"), config)?;

    let instance = build_instance(config)?;
    instance.write(&out.join("network.json"))?;
    let derived = instance.derive().map_err(|e| e.in_stage("derive"))?;
    let bench = pricing::benchmark_prices(&derived).map_err(|e| e.in_stage("benchmark"))?;
    bench.write_csv(&out.join("benchmark_prices.csv"))?;

    let done = manifest.completed.clone();
    let manifest = Mutex::new(manifest);
    let cells = config.cells();
    let skipped = cells.iter().filter(|c| done.contains(&c.id())).count();
    let results = cells
        .into_par_iter()
        .map(|cell| -> Result<(CellRecord, Option<CellTiming>)> {
            let dir = cell.dir(out);
            if done.contains(&cell.id()) {
                let rec: CellRecord = crate::io::read_json(&dir.join("record.json"))?;
                return Ok((rec, None));
            }
            let (record, panel, est, timing) =
                run_cell(config, &derived, cell).map_err(|e| e.in_stage(format!("cell {}", cell.id())))?;
            panel.write(&dir.join("panel.json"))?;
            est.write(&dir.join("estimation.json"))?;
            est.write_entries_csv(&dir.join("estimate_entries.csv"))?;
            if let Ok(sol) = pricing::estimated_prices(&est, derived.p_bar) {
                sol.write_csv(&dir.join("prices.csv"))?;
            }
            crate::io::write_json(&dir.join("record.json"), &record)?;
            let mut m = manifest.lock().expect("manifest lock");
            m.completed.insert(cell.id());
            m.write(out)?;
            log::info!("finished cell {}", cell.id());
            Ok((record, Some(timing)))
        })
        .collect::<Result<Vec<_>>>()?;

    let ran = results.iter().filter(|r| r.1.is_some()).count();
    let timings: Vec<CellTiming> = results.iter().filter_map(|r| r.1.clone()).collect();
    let records: Vec<CellRecord> = results.into_iter().map(|r| r.0).collect();
    let report = SweepReport::new(hash, bench.binding, records);
    report.write(out)?;
    if !timings.is_empty() {
        crate::io::write_csv(&out.join("timings.csv"), &timings)?;
    }
    let mut m = manifest.into_inner().expect("manifest lock");
    m.complete = true;
    m.write(out)?;
    Ok(SweepOutcome { report, skipped, ran })
}

/// Entrywise truth comparison used by the `evaluate` command.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub max_err_check: f64,
    pub max_err_mu: f64,
    pub err1_mu: f64,
    pub errinf_mu: f64,
    pub ci_fraction: Option<f64>,
    pub prices: pricing::PriceSolution,
    pub revenue_gap: pricing::RevenueGap,
}

pub fn evaluate(instance: &NetworkInstance, est: &EstimationResult) -> Result<Evaluation> {
    let derived = instance.derive()?;
    if derived.observable != est.observable_ids {
        return Err(Error::Config(format!(
            "estimate covers nodes {:?} but the network's observable set is {:?}",
            est.observable_ids, derived.observable
        )));
    }
    let rec = evaluate_estimate(Cell { n: est.n, replication: 0 }, &derived, est);
    let prices = pricing::estimated_prices(est, derived.p_bar).map_err(|e| e.in_stage("price"))?;
    let revenue_gap = pricing::revenue_gap(&derived, &prices.prices).map_err(|e| e.in_stage("revenue gap"))?;
    Ok(Evaluation {
        max_err_check: rec.max_err_check,
        max_err_mu: rec.max_err_mu,
        err1_mu: rec.err1_mu,
        errinf_mu: rec.errinf_mu,
        ci_fraction: rec.ci_fraction,
        prices,
        revenue_gap,
    })
}

/// Hex SHA-256 of a file's bytes.
pub fn file_digest(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(bytes)))
}
