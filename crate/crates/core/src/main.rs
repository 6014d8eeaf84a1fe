use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use fpp_lab::coupling::QuantileCoupling;
use fpp_lab::estimators::{omega_diagnostic, OmegaConfig};
use fpp_lab::experiment::{
    coupling_reports, emit_outputs, parse_law_spec, run_experiment, run_mw_battery,
    ExperimentConfig, ExperimentError, ResultRecord,
};
use fpp_lab::fpp::{tau_schedule, Environment, PassageSolver};
use fpp_lab::lattice::{
    annulus_edges, annulus_size, annulus_vertex_count, enumerate_paths_pk, path_count_bound,
    GridBox,
};

const EXIT_VALIDATION: u8 = 2;
const EXIT_CHECK_FAILED: u8 = 3;

#[derive(Parser)]
#[command(name = "fpp-lab", version, about = "First-passage percolation laboratory")]
struct Cli {
    /// TOML config: flat keys plus a [law] table.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (0 = one per core); overrides the config.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory; overrides the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// q̂(n) and Var T(0,(n,0)) over the n-grid; writes results.csv and summary.json.
    Experiment,
    /// Coupling checks, the product-measure battery, increments and the final chain.
    MwCheck,
    /// Coupling checks for one law, or for the Gaussian and reference laws.
    CouplingCheck {
        #[arg(long)]
        law: Option<String>,
    },
    /// T^R(0, (n, 0)) for one seeded environment, optionally along an r-grid.
    PassageTime {
        #[arg(long)]
        law: Option<String>,
        #[arg(long)]
        n: u64,
        /// Restriction radius; defaults to radius_multiplier · n.
        #[arg(long = "R")]
        radius: Option<u32>,
        /// Comma-separated r values.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        r_grid: Vec<f64>,
    },
    /// Annulus Λ_k: sizes and path counts, or its edge list.
    LatticeDump {
        #[arg(long)]
        k: u32,
        #[arg(long, value_enum, default_value_t = DumpFormat::Summary)]
        format: DumpFormat,
    },
    /// Increment frequencies on the r0-grid and window measures of T_r.
    OmegaDiag {
        #[arg(long, default_value_t = 64)]
        n: u64,
        #[arg(long, default_value_t = 200)]
        trials: usize,
        #[arg(long, default_value_t = 65)]
        profile_points: usize,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum DumpFormat {
    Summary,
    Edges,
}

#[derive(Serialize)]
struct ProfilePoint {
    r: f64,
    time: f64,
    geodesic_edges: usize,
    touched_boundary: bool,
    ties: u64,
    settled: u64,
}

#[derive(Serialize)]
struct LatticeSummary {
    k: u32,
    annulus_edges: u64,
    annulus_vertices: u64,
    paths: Option<usize>,
    path_count_bound: String,
}

enum Failure {
    Validation(String),
    Checks(String),
    Runtime(String),
}

impl From<ExperimentError> for Failure {
    fn from(e: ExperimentError) -> Self {
        if e.is_validation() {
            Failure::Validation(e.to_string())
        } else {
            Failure::Runtime(e.to_string())
        }
    }
}

fn runtime<E: std::fmt::Display>(e: E) -> Failure {
    Failure::Runtime(e.to_string())
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig, Failure> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.master_seed = seed;
    }
    if let Some(t) = cli.threads {
        cfg.threads = t;
    }
    if let Some(out) = &cli.out {
        cfg.out_dir = out.clone();
    }
    Ok(cfg)
}

fn print_json<T: Serialize>(value: &T) -> Result<(), Failure> {
    println!("{}", serde_json::to_string_pretty(value).map_err(runtime)?);
    Ok(())
}

fn finish(record: &ResultRecord, cfg: &ExperimentConfig) -> Result<(), Failure> {
    let (csv, json) = emit_outputs(record, &cfg.out_dir)?;
    eprintln!("wrote {} and {}", csv.display(), json.display());
    for c in record.trend.iter().filter(|c| !c.pass) {
        eprintln!("FAIL {}: {} > {}", c.name, c.statistic, c.tolerance);
    }
    if record.all_pass() {
        Ok(())
    } else {
        Err(Failure::Checks("one or more checks failed".into()))
    }
}

fn run(cli: &Cli) -> Result<(), Failure> {
    let cfg = load_config(cli)?;
    match &cli.command {
        Command::Experiment => {
            let record = run_experiment(&cfg)?;
            for row in &record.rows {
                println!(
                    "n={:<5} q_hat={:.4} ± {:.4}  var={:.4} ± {:.4}  mean={:.4}  boundary={:.4}  {:.1}s",
                    row.n, row.q_hat, row.stderr, row.var, row.var_stderr, row.mean,
                    row.boundary_contact_rate, row.runtime_s
                );
            }
            finish(&record, &cfg)
        }
        Command::MwCheck => {
            let record = run_mw_battery(&cfg)?;
            if let Some(b) = &record.battery {
                for rep in &b.coupling {
                    println!("coupling {:<28} {}", rep.law, pass_word(rep.all_pass()));
                }
                println!(
                    "gaussian grid {} pairs, {} violations",
                    b.gaussian_grid.pairs, b.gaussian_grid.violations
                );
                for case in &b.mw {
                    println!(
                        "mw {:<28} dim={:<3} lhs={:.5} rhs={:.5} se={:.5} {}",
                        case.law, case.report.dim, case.report.lhs, case.report.rhs,
                        case.report.stderr, pass_word(case.report.pass)
                    );
                }
                for s in &b.increments.summaries {
                    println!(
                        "increments k={} freq={:.4} bound={:.3e} shifted={:.4} bound={:.3e} {}",
                        s.k, s.frequency, s.bound, s.shifted_frequency, s.shifted_bound,
                        pass_word(s.pass && s.shifted_pass)
                    );
                }
                for row in &b.chain.rows {
                    println!(
                        "chain r={:.4} |tau|^2={:.4} lhs={:.4} rhs={:.4} se={:.4} {}",
                        row.r, row.tau_norm_sq, row.lhs, row.rhs, row.stderr, pass_word(row.pass)
                    );
                }
            }
            finish(&record, &cfg)
        }
        Command::CouplingCheck { law } => {
            let reports = match law {
                Some(spec) => {
                    let c = QuantileCoupling::new(parse_law_spec(spec)?).map_err(ExperimentError::from)?;
                    let mut stream = fpp_lab::rng::RngStream::new(cfg.master_seed);
                    vec![fpp_lab::coupling::checks::coupling_battery(&c, &mut stream)]
                }
                None => coupling_reports(cfg.master_seed)?,
            };
            print_json(&reports)?;
            if reports.iter().all(|r| r.all_pass()) {
                Ok(())
            } else {
                Err(Failure::Checks("coupling checks failed".into()))
            }
        }
        Command::PassageTime {
            law,
            n,
            radius,
            r_grid,
        } => {
            let law = match law {
                Some(spec) => parse_law_spec(spec)?,
                None => cfg.law.clone(),
            };
            let radius = radius.unwrap_or(*n as u32 * cfg.radius_multiplier);
            if *n > radius as u64 {
                return Err(Failure::Validation(format!("target (n, 0) lies outside radius {radius}")));
            }
            let grid = GridBox::new(radius).map_err(|e| Failure::Validation(e.to_string()))?;
            let coupling = Arc::new(QuantileCoupling::new(law).map_err(ExperimentError::from)?);
            let env = Environment::with_coupling(coupling, grid, cfg.master_seed)
                .map_err(|e| Failure::Validation(e.to_string()))?;
            let mut solver = PassageSolver::new(radius).map_err(runtime)?;
            let rs = if r_grid.is_empty() { vec![0.0] } else { r_grid.clone() };
            tau_schedule(*n, 0.0).map_err(|e| Failure::Validation(e.to_string()))?;
            let points = solver
                .profile(&env, *n, &rs, (0, 0), (*n as i32, 0))
                .map_err(|e| Failure::Validation(e.to_string()))?
                .into_iter()
                .map(|p| ProfilePoint {
                    r: p.r,
                    time: p.time,
                    geodesic_edges: p.geodesic.len(),
                    touched_boundary: p.touched_boundary,
                    ties: p.ties,
                    settled: p.settled,
                })
                .collect::<Vec<_>>();
            print_json(&points)
        }
        Command::LatticeDump { k, format } => match format {
            DumpFormat::Edges => {
                let mut out = std::io::stdout().lock();
                // A closed pipe (e.g. `| head`) just ends the dump.
                let _ = writeln!(out, "x,y,axis");
                for e in annulus_edges(*k) {
                    if writeln!(out, "{},{},{}", e.x(), e.y(), e.axis()).is_err() {
                        break;
                    }
                }
                Ok(())
            }
            DumpFormat::Summary => {
                // P_4 runs to millions of paths; count only up to k = 3 here.
                let paths = if *k <= 3 {
                    Some(enumerate_paths_pk(*k, usize::MAX).map_err(runtime)?.len())
                } else {
                    None
                };
                print_json(&LatticeSummary {
                    k: *k,
                    annulus_edges: annulus_size(*k),
                    annulus_vertices: annulus_vertex_count(*k),
                    paths,
                    path_count_bound: path_count_bound(*k).to_string(),
                })
            }
        },
        Command::OmegaDiag {
            n,
            trials,
            profile_points,
        } => {
            cfg.validate()?;
            let coupling = QuantileCoupling::new(cfg.law.clone()).map_err(ExperimentError::from)?;
            let delta0 = coupling.estimate_delta0(0.999).map_err(ExperimentError::from)?.delta0;
            let omega_cfg = OmegaConfig {
                law: cfg.law.clone(),
                n: *n,
                trials: *trials,
                delta0,
                radius: *n as u32 * cfg.radius_multiplier,
                master_seed: cfg.master_seed,
                profile_points: *profile_points,
            };
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(cfg.threads)
                .build()
                .map_err(runtime)?;
            let diag = pool
                .install(|| omega_diagnostic(&omega_cfg))
                .map_err(|e| Failure::Validation(e.to_string()))?;
            println!(
                "n={} delta0={} r0={:.4} grid={} failure_rate={:.4} ± {:.4} single_hit={}/{}",
                diag.n, diag.delta0, diag.r0, diag.grid.len(), diag.failure_rate, diag.stderr,
                diag.single_hit_trials, diag.trials
            );
            let mut record = ResultRecord::new(&cfg);
            record.omega = Some(diag);
            let (_, json) = emit_outputs(&record, &cfg.out_dir)?;
            eprintln!("wrote {}", json.display());
            Ok(())
        }
    }
}

fn pass_word(pass: bool) -> &'static str {
    if pass {
        "pass"
    } else {
        "FAIL"
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_VALIDATION)
        }
        Err(Failure::Checks(msg)) => {
            eprintln!("{msg}");
            ExitCode::from(EXIT_CHECK_FAILED)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
