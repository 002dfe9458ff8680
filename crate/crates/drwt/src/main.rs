use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use drwt::harness::bench::{derive_seed, BenchConfig, StaticProblem};
use drwt::harness::episode::{run_episode, Method};
use drwt::harness::montecarlo::{monte_carlo, BenchBudgets};
use drwt::harness::output::{self, Manifest};
use drwt::harness::scenario::generate_scenario;
use drwt::harness::sweep::{convergence_sweep, geometric_checkpoints};
use drwt::harness::verify;
use drwt::harness::ScenarioConfig;

/// Distributed rolling-window tracking benchmarks.
#[derive(Parser)]
#[command(name = "drwt", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Master seed; every stream is derived from it.
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Output directory for CSV files and the run manifest.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    /// Network size of the static benchmark graph.
    #[arg(long, default_value_t = 20)]
    nodes: usize,
    /// Edge count of the static benchmark graph.
    #[arg(long, default_value_t = 80)]
    edges: usize,
    /// ADMM penalty parameter.
    #[arg(long, default_value_t = 1.0)]
    rho: f64,
}

#[derive(Subcommand)]
enum Command {
    /// Error to the centralized estimate vs bits communicated per node, for
    /// one timestep on a static network.
    Convergence {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        bench: BenchArgs,
        /// Largest iteration / round count in the sweep.
        #[arg(long, default_value_t = 1024)]
        iters: usize,
        /// Number of independent seeds to sweep.
        #[arg(long, default_value_t = 1)]
        seeds: usize,
    },
    /// Monte Carlo estimator comparison on the static benchmark network.
    Mc {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        bench: BenchArgs,
        /// Number of Monte Carlo runs.
        #[arg(long, default_value_t = 200)]
        runs: usize,
        /// Episode length in timesteps.
        #[arg(long, default_value_t = 6)]
        steps: usize,
        /// ADMM iterations per timestep.
        #[arg(long, default_value_t = 30)]
        iters: usize,
        /// Consensus rounds per timestep for the baseline.
        #[arg(long, default_value_t = 17)]
        rounds: usize,
        /// Restrict to one method (default: all four).
        #[arg(long)]
        method: Option<String>,
    },
    /// Full geometric scenario: moving sensors, multiple targets, hand-offs.
    Scenario {
        #[command(flatten)]
        common: CommonArgs,
        /// Scenario configuration file (flat key = value format).
        #[arg(long)]
        config: Option<PathBuf>,
        /// Estimation method to run.
        #[arg(long, default_value = "drwt")]
        method: String,
        /// Override the configured ADMM iterations per timestep.
        #[arg(long)]
        iters: Option<usize>,
        /// Override the configured ADMM penalty parameter.
        #[arg(long)]
        rho: Option<f64>,
    },
    /// Run the verification suite and write its data files.
    Verify {
        #[command(flatten)]
        common: CommonArgs,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> drwt::Result<ExitCode> {
    match cli.command {
        Command::Convergence {
            common,
            bench,
            iters,
            seeds,
        } => {
            let cfg = BenchConfig {
                n_nodes: bench.nodes,
                n_edges: bench.edges,
                rho: bench.rho,
                ..BenchConfig::desk_scale()
            };
            let checkpoints = geometric_checkpoints(iters);
            let mut rows = Vec::new();
            for s in 0..seeds as u64 {
                let problem = StaticProblem::generate(&cfg, derive_seed(common.seed, 700 + s))?;
                let episode = problem.episode(derive_seed(common.seed, 800 + s), 1)?;
                let points = convergence_sweep(&problem, &episode, &checkpoints, &checkpoints)?;
                rows.push((derive_seed(common.seed, 700 + s), points));
            }
            output::write_file(&common.out, "convergence.csv", |w| {
                use std::io::Write as _;
                writeln!(w, "seed,method,rounds,bits_per_node,err_to_central")?;
                for (seed, points) in &rows {
                    for p in points {
                        writeln!(
                            w,
                            "{},{},{},{},{}",
                            seed,
                            p.method.as_str(),
                            p.rounds,
                            p.bits_per_node,
                            p.err_to_central
                        )?;
                    }
                }
                Ok(())
            })?;
            write_bench_manifest("convergence", &common, &cfg)?;
            println!(
                "wrote {} ({} seeds, max {} rounds)",
                common.out.join("convergence.csv").display(),
                seeds,
                iters
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Mc {
            common,
            bench,
            runs,
            steps,
            iters,
            rounds,
            method,
        } => {
            let cfg = BenchConfig {
                n_nodes: bench.nodes,
                n_edges: bench.edges,
                rho: bench.rho,
                ..BenchConfig::desk_scale()
            };
            let methods = match method.as_deref() {
                None => vec![Method::Centralized, Method::Ckf, Method::Drwt, Method::LocalOnly],
                Some(name) => vec![parse_method(name)?],
            };
            let problem = StaticProblem::generate(&cfg, derive_seed(common.seed, 900))?;
            let budgets = BenchBudgets {
                drwt_iters: iters,
                ckf_rounds: rounds,
            };
            let rows = monte_carlo(&problem, &methods, runs, steps, budgets, common.seed)?;
            output::write_file(&common.out, "mc.csv", |w| output::write_mc_csv(&rows, w))?;
            write_bench_manifest("mc", &common, &cfg)?;
            println!(
                "wrote {} ({} runs x {} steps)",
                common.out.join("mc.csv").display(),
                runs,
                steps
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Scenario {
            common,
            config,
            method,
            iters,
            rho,
        } => {
            let mut cfg = match config {
                Some(path) => ScenarioConfig::from_file(&path)?,
                None => ScenarioConfig::default(),
            };
            cfg.seed = common.seed;
            if let Some(iters) = iters {
                cfg.drwt_iters = iters;
            }
            if let Some(rho) = rho {
                cfg.rho = rho;
            }
            cfg.validate()?;
            let method = parse_method(&method)?;
            let scenario = generate_scenario(&cfg, cfg.seed)?;
            let out = run_episode(&scenario, method, 0)?;
            output::write_file(&common.out, "scenario.csv", |w| {
                output::write_metrics_csv(&out.rows, w)
            })?;
            output::write_file(&common.out, "info_bands.csv", |w| {
                output::write_info_bands_csv(&out.info_bands, w)
            })?;
            output::write_file(&common.out, "ledger.csv", |w| {
                out.ledger.write_csv(w)?;
                Ok(())
            })?;
            let config_text = cfg.to_text();
            output::write_file(&common.out, "manifest.txt", |w| {
                Manifest {
                    command: "scenario",
                    seed: cfg.seed,
                    config_text: &config_text,
                    bits_per_scalar: cfg.bits_per_scalar,
                }
                .write(w)
            })?;
            println!(
                "wrote scenario outputs to {} ({} metric rows, {} hand-offs, {} drops, {} rebirths)",
                common.out.display(),
                out.rows.len(),
                out.diagnostics.handoffs,
                out.diagnostics.dropped_info,
                out.diagnostics.rebirths
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Verify { common } => {
            let results = verify::run_all(common.seed, Some(&common.out))?;
            for r in &results {
                println!("{}", r.line());
            }
            let failed = results.iter().filter(|r| !r.passed).count();
            if failed == 0 {
                println!("all {} criteria passed", results.len());
                Ok(ExitCode::SUCCESS)
            } else {
                println!("{failed} of {} criteria failed", results.len());
                Ok(ExitCode::FAILURE)
            }
        }
    }
}

fn parse_method(name: &str) -> drwt::Result<Method> {
    Method::parse(name).ok_or_else(|| {
        drwt::Error::Config(format!(
            "unknown method `{name}`; expected centralized, ckf, drwt, or local-only"
        ))
    })
}

fn write_bench_manifest(command: &str, common: &CommonArgs, cfg: &BenchConfig) -> drwt::Result<()> {
    let config_text = format!(
        "n_nodes = {}\nn_edges = {}\nwindow_steps = {}\ndt = {}\nq_accel = {}\nr_std = {}\nrho = {}\n",
        cfg.n_nodes, cfg.n_edges, cfg.window_steps, cfg.dt, cfg.q_accel, cfg.r_std, cfg.rho
    );
    output::write_file(&common.out, "manifest.txt", |w| {
        Manifest {
            command,
            seed: common.seed,
            config_text: &config_text,
            bits_per_scalar: cfg.bits_per_scalar,
        }
        .write(w)
    })
}
