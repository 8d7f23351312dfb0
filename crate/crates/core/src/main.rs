use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use netpricing::equilibrium::{simulate_with, PanelData};
use netpricing::estimator::{estimate, EstimateOptions, EstimationResult};
use netpricing::experiment::{self, ExperimentConfig, SweepReport};
use netpricing::network::NetworkInstance;
use netpricing::pricing::{self, PriceSolution};
use netpricing::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "netpricing", version, about = "Simulate, estimate and price networks with latent agents")]
struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true, env = "NETPRICING_THREADS")]
    threads: Option<usize>,
    /// Log progress to stderr.
    #[arg(long, short, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Draw a network instance from the config's generator.
    Generate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Override the seed derived from the config.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Simulate an observable panel on a network.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        network: PathBuf,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        replication: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Estimate the price-response matrix from a panel (no network needed).
    Estimate {
        #[arg(long)]
        panel: PathBuf,
        /// Experiment config supplying threshold mode and solver settings.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compute prices from a network (complete information) or an estimate.
    Price {
        #[arg(long)]
        network: Option<PathBuf>,
        #[arg(long)]
        estimation: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Method::Benchmark)]
        method: Method,
        /// Outside price when pricing from an estimate without a network.
        #[arg(long)]
        p_bar: Option<f64>,
        /// CSV output; a JSON dump is written next to it.
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare an estimate with the true network and compute the revenue gap.
    Evaluate {
        #[arg(long)]
        estimation: PathBuf,
        #[arg(long)]
        network: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a full sweep over the config's n grid and replications.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Skip cells already recorded in the output's MANIFEST.
        #[arg(long)]
        resume: bool,
    },
    /// Summarize a sweep directory as text and CSV.
    Report {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Method {
    Benchmark,
    Symmetric,
    Bonacich,
    Estimated,
}

fn sibling(path: &Path, suffix: &str, ext: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}{suffix}.{ext}"))
}

fn write_prices(sol: &PriceSolution, out: &Path) -> Result<()> {
    sol.write_csv(out)?;
    sol.write(&sibling(out, "", "json"))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate { config, out, seed } => {
            let cfg = ExperimentConfig::read(&config)?;
            let seed = seed.unwrap_or_else(|| cfg.instance_seed());
            let inst = cfg.generator.generate(seed).map_err(|e| e.in_stage("generate"))?;
            inst.write(&out)?;
            println!("wrote {} ({} nodes, {} observable)", out.display(), inst.n_nodes, inst.observable.len());
        }
        Command::Simulate {
            config,
            network,
            n,
            replication,
            out,
        } => {
            let cfg = ExperimentConfig::read(&config)?;
            let inst = NetworkInstance::read(&network)?;
            let derived = inst.derive().map_err(|e| e.in_stage("derive"))?;
            let sim = simulate_with(&derived, n, &cfg.prices, &cfg.shocks, &cfg.panel_stream(n, replication))
                .map_err(|e| e.in_stage("simulate"))?;
            sim.panel.write(&out)?;
            sim.panel.write_csv(&sibling(&out, "", "csv"))?;
            println!("wrote {} (n = {n})", out.display());
        }
        Command::Estimate {
            panel,
            config,
            seed,
            out,
        } => {
            let data = PanelData::read(&panel)?;
            let mut opts = EstimateOptions::default();
            if let Some(path) = config {
                let cfg = ExperimentConfig::read(&path)?;
                opts.threshold_mode = cfg.threshold_mode;
                opts.solver = cfg.solver;
            }
            opts.seed = seed;
            let est = estimate(&data, &opts)?;
            est.write(&out)?;
            est.write_entries_csv(&sibling(&out, "_entries", "csv"))?;
            est.write_matrix_csv(&sibling(&out, "_matrix", "csv"))?;
            let kept = est.w_check_mu.iter().filter(|v| **v != 0.0).count();
            println!(
                "wrote {} ({} of {} entries kept, worst feasibility {:.2e})",
                out.display(),
                kept,
                est.w_check_mu.len(),
                est.worst_feasibility()
            );
        }
        Command::Price {
            network,
            estimation,
            method,
            p_bar,
            out,
        } => {
            let instance = network.as_deref().map(NetworkInstance::read).transpose()?;
            let sol = match (method, estimation) {
                (Method::Estimated, None) => {
                    return Err(Error::Config("--method estimated needs --estimation".into()));
                }
                (_, Some(path)) => {
                    let est = EstimationResult::read(&path)?;
                    let p_bar = match (p_bar, &instance) {
                        (Some(p), _) => p,
                        (None, Some(inst)) => inst.p_bar,
                        (None, None) => {
                            return Err(Error::Config(
                                "pricing from an estimate needs --p-bar or --network".into(),
                            ))
                        }
                    };
                    pricing::estimated_prices(&est, p_bar)?
                }
                (m, None) => {
                    let inst = instance.ok_or_else(|| Error::Config("--network is required".into()))?;
                    match m {
                        Method::Benchmark => pricing::benchmark_prices(&inst.derive()?)?,
                        Method::Symmetric => pricing::symmetric_prices(&inst)?,
                        Method::Bonacich => pricing::bonacich_prices(&inst)?,
                        Method::Estimated => unreachable!(),
                    }
                }
            };
            write_prices(&sol, &out)?;
            println!(
                "wrote {} ({} prices, revenue {:.6}, {} at p̄)",
                out.display(),
                sol.prices.len(),
                sol.expected_revenue,
                sol.binding.len()
            );
        }
        Command::Evaluate {
            estimation,
            network,
            out,
        } => {
            let Some(network) = network else {
                return Err(Error::Config(
                    "evaluate needs the true network (--network): the revenue gap compares against the complete-information optimum".into(),
                ));
            };
            let est = EstimationResult::read(&estimation)?;
            let inst = NetworkInstance::read(&network)?;
            let ev = experiment::evaluate(&inst, &est)?;
            println!("max |W̌ − H⁻¹|    {:.6e}", ev.max_err_check);
            println!("max |W̌μ − H⁻¹|   {:.6e}", ev.max_err_mu);
            println!("‖W̌μ − H⁻¹‖₁, ∞   {:.6e}, {:.6e}", ev.err1_mu, ev.errinf_mu);
            if let Some(f) = ev.ci_fraction {
                println!("CI coverage       {f:.4}");
            }
            println!("revenue gap       {:.6e}", ev.revenue_gap.gap);
            if let Some(out) = out {
                netpricing::io::write_json(&out, &ev)?;
            }
        }
        Command::Sweep { config, out, resume } => {
            let cfg = ExperimentConfig::read(&config)?;
            let out = out
                .or_else(|| cfg.out_dir.clone())
                .ok_or_else(|| Error::Config("no output directory (--out or out_dir in config)".into()))?;
            let outcome = experiment::run_pipeline(&cfg, &out, resume)?;
            print!("{}", outcome.report.render_text());
            println!("{} cells run, {} resumed; artifacts in {}", outcome.ran, outcome.skipped, out.display());
        }
        Command::Report { input, out } => {
            let report = SweepReport::read(&input.join("sweep_report.json"))?;
            print!("{}", report.render_text());
            let out = out.unwrap_or_else(|| input.join("report.csv"));
            netpricing::io::write_csv(&out, &report.aggregate_rows())?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new()
        .filter_level(if cli.verbose {
            log::LevelFilter::Info
        } else {
            log::LevelFilter::Warn
        })
        .parse_default_env()
        .init();
    if let Some(k) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(k).build_global() {
            eprintln!("error: could not set up {k} threads: {e}");
            return ExitCode::from(2);
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
