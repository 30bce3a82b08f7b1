//! Command-line surface for the synchronization landscape toolkit.
//!
//! Exit codes: 0 success (benign where applicable), 2 usage or malformed
//! input, 3 certificate verified but landscape not benign, 4 certificate
//! failed KKT verification.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use sync_landscape_cli::{experiment, io};

use sync_landscape::blockmat::BlockSymMatrix;
use sync_landscape::certificate::{build_certificate, verify_certificate, DEFAULT_CERT_TOL};
use sync_landscape::criticality::{dual_alpha_bound, dual_certificate_check, second_order_check};
use sync_landscape::instances::{
    twisted_boundary_t, twisted_certificate, twisted_state, InstanceMeta, SyncInstance,
};
use sync_landscape::operators::{monte_carlo_cov, sigma_tau, CovKind, StiefelTuple};
use sync_landscape::solver::{random_stiefel, recovery_error, solve, SolveConfig};
use sync_landscape::thresholds::{
    alpha_g, alpha_g_tau, alpha_m, alpha_simplified, counterexample_threshold, GridSpec,
    ThresholdError,
};

const EXIT_NOT_BENIGN: u8 = 3;
const EXIT_KKT_FAIL: u8 = 4;

#[derive(Parser)]
#[command(
    name = "sync-landscape",
    version,
    about = "Benign-landscape thresholds and certificates for group synchronization"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum OutputFormat {
    Pretty,
    Json,
}

#[derive(Args, Clone, Copy)]
struct GridArgs {
    /// Number of tau samples on [0, 1].
    #[arg(long, default_value_t = 2049)]
    tau_points: usize,
    /// Nodes per axis of the (u, w, v) grid oracle.
    #[arg(long, default_value_t = 256)]
    uvw_points: usize,
    /// Golden-section refinement iterations around the best tau.
    #[arg(long, default_value_t = 60)]
    refine_iters: usize,
}

impl From<GridArgs> for GridSpec {
    fn from(a: GridArgs) -> Self {
        GridSpec {
            tau_points: a.tau_points,
            uvw_points: a.uvw_points,
            refine_iters: a.refine_iters,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Threshold report for one (p, d) pair.
    Alpha {
        #[arg(long)]
        p: usize,
        #[arg(long)]
        d: usize,
        #[command(flatten)]
        grid: GridArgs,
        #[arg(long, value_enum, default_value_t = OutputFormat::Pretty)]
        output: OutputFormat,
    },
    /// CSV table of thresholds over a (p, d) range.
    Table {
        #[arg(long, default_value_t = 11)]
        p_max: usize,
        #[arg(long, default_value_t = 5)]
        d_max: usize,
        #[command(flatten)]
        grid: GridArgs,
    },
    /// CSV curves (threshold, closed-form bound, tau = 1 bound) over p.
    FigureData {
        #[arg(long)]
        d: usize,
        #[arg(long)]
        p_min: usize,
        #[arg(long)]
        p_max: usize,
        #[command(flatten)]
        grid: GridArgs,
    },
    /// Verify the certificate of an instance file and report the verdict.
    Verify {
        #[arg(long)]
        instance: PathBuf,
        /// Factorization rank; defaults to d + 2.
        #[arg(long)]
        p: Option<usize>,
        #[arg(long, default_value_t = DEFAULT_CERT_TOL)]
        tol: f64,
        #[command(flatten)]
        grid: GridArgs,
        #[arg(long, value_enum, default_value_t = OutputFormat::Json)]
        output: OutputFormat,
    },
    /// Run gradient descent on an instance from a random start.
    Solve {
        #[arg(long)]
        instance: PathBuf,
        /// Factorization rank; defaults to d + 2.
        #[arg(long)]
        p: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 20_000)]
        max_iter: usize,
        #[arg(long, default_value_t = 1e-10)]
        grad_tol: f64,
        /// Write a per-iteration CSV trace (iter, objective, grad_norm).
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Build the twisted-state counterexample and check its criticality.
    Counterexample {
        #[arg(long)]
        p: usize,
        #[arg(long)]
        d: usize,
        /// Certificate parameter as a multiple of the boundary value.
        #[arg(long, default_value_t = 1.0)]
        t_scale: f64,
        /// Write the instance (A = -L, Z = identity blocks) as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        grid: GridArgs,
        #[arg(long, value_enum, default_value_t = OutputFormat::Json)]
        output: OutputFormat,
    },
    /// Monte Carlo cross-check of the tangent-operator covariance.
    Montecarlo {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        d: usize,
        #[arg(long)]
        p: usize,
        #[arg(long, default_value_t = 0.5)]
        tau: f64,
        #[arg(long, default_value_t = 100_000)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = CovWhich::LCov)]
        which: CovWhich,
    },
    /// Batch experiment over a generator model; CSV rows per trial.
    Experiment(experiment::ExperimentArgs),
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum CovWhich {
    LCov,
    PCov,
}

fn main() -> ExitCode {
    if let Ok(threads) = std::env::var("SYNC_LANDSCAPE_THREADS") {
        if let Ok(k) = threads.parse::<usize>() {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(k).build_global();
        }
    }
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(2)
        }
    }
}

fn run(command: Command) -> Result<ExitCode> {
    match command {
        Command::Alpha { p, d, grid, output } => cmd_alpha(p, d, grid.into(), output),
        Command::Table { p_max, d_max, grid } => cmd_table(p_max, d_max, grid.into()),
        Command::FigureData {
            d,
            p_min,
            p_max,
            grid,
        } => cmd_figure_data(d, p_min, p_max, grid.into()),
        Command::Verify {
            instance,
            p,
            tol,
            grid,
            output,
        } => cmd_verify(&instance, p, tol, grid.into(), output),
        Command::Solve {
            instance,
            p,
            seed,
            max_iter,
            grad_tol,
            trace,
        } => cmd_solve(&instance, p, seed, max_iter, grad_tol, trace.as_deref()),
        Command::Counterexample {
            p,
            d,
            t_scale,
            out,
            grid,
            output,
        } => cmd_counterexample(p, d, t_scale, out.as_deref(), grid.into(), output),
        Command::Montecarlo {
            n,
            d,
            p,
            tau,
            trials,
            seed,
            which,
        } => cmd_montecarlo(n, d, p, tau, trials, seed, which),
        Command::Experiment(args) => experiment::run(args),
    }
}

fn echo_config(name: &str, config: serde_json::Value) {
    eprintln!("config {name}: {config}");
}

fn cmd_alpha(p: usize, d: usize, grid: GridSpec, output: OutputFormat) -> Result<ExitCode> {
    echo_config(
        "alpha",
        json!({"p": p, "d": d, "tau_points": grid.tau_points, "uvw_points": grid.uvw_points,
               "refine_iters": grid.refine_iters}),
    );
    let exact = alpha_g::<f64>(p, d, &grid)?;
    let mid = alpha_m::<f64>(p, d).ok();
    let simplified = alpha_simplified::<f64>(p, d);
    let tau1 = alpha_g_tau::<f64>(p, d, 1.0)?;
    let frontier = counterexample_threshold::<f64>(p, d);
    match output {
        OutputFormat::Json => {
            let value = json!({
                "alpha_g": io::ThresholdDto::from(&exact),
                "alpha_m": mid.as_ref().map(io::ThresholdDto::from),
                "alpha_simplified": simplified.as_ref().ok().map(io::ThresholdDto::from),
                "alpha_tau1": tau1.alpha,
                "frontier_2p_over_d_plus_1": frontier,
                "feasible": exact.feasible(),
            });
            println!("{}", serde_json::to_string_pretty(&value)?);
        }
        OutputFormat::Pretty => {
            println!("alpha_g({p}, {d})       = {:.4}   (tau* = {:.4}, case {})",
                exact.alpha, exact.tau_star, exact.case);
            if !exact.feasible() {
                println!("  note: no alpha >= 1 is attainable for this (p, d); the landscape");
                println!("  criterion is vacuous and the value above is a sub-1 diagnostic.");
            }
            match mid {
                Some(m) => {
                    println!("alpha_m({p}, {d})       = {:.4}   (tau* = {:.4})", m.alpha, m.tau_star);
                    if p == d + 2 {
                        println!("  note: p = d + 2 is the degenerate edge of the closed-form bound (tau* = 1).");
                    }
                }
                None => println!("alpha_m({p}, {d})       = n/a (needs d >= 2 and p >= d + 2)"),
            }
            match simplified {
                Ok(s) => println!("alpha_simplified    = {:.4}   (tau* = {:.4})", s.alpha, s.tau_star),
                Err(ThresholdError::NotApplicable { min_p, .. }) => {
                    println!("alpha_simplified    = n/a (needs p >= {min_p:.2})")
                }
                Err(e) => println!("alpha_simplified    = n/a ({e})"),
            }
            println!("alpha at tau = 1    = {:.4}", tau1.alpha);
            println!("frontier 2p/(d+1)   = {frontier:.4}");
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_table(p_max: usize, d_max: usize, grid: GridSpec) -> Result<ExitCode> {
    if p_max > 20 || d_max > 20 {
        bail!("table bounds capped at 20");
    }
    if p_max < 2 || d_max < 1 {
        bail!("table needs p_max >= 2 and d_max >= 1");
    }
    echo_config("table", json!({"p_max": p_max, "d_max": d_max}));
    let mut header = String::from("d\\p");
    for p in 2..=p_max {
        header.push_str(&format!(",{p}"));
    }
    println!("{header}");
    for d in 1..=d_max {
        let mut row = format!("{d}");
        for p in 2..=p_max {
            if p <= d {
                row.push_str(",x");
                continue;
            }
            let res = alpha_g::<f64>(p, d, &grid)?;
            if res.feasible() && res.alpha >= 1.0 {
                row.push_str(&format!(",{:.4}", res.alpha));
            } else {
                row.push_str(",<1");
            }
        }
        println!("{row}");
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_figure_data(d: usize, p_min: usize, p_max: usize, grid: GridSpec) -> Result<ExitCode> {
    if d < 2 || p_min < d + 2 || p_max < p_min {
        bail!("figure-data needs d >= 2 and d + 2 <= p_min <= p_max");
    }
    echo_config("figure-data", json!({"d": d, "p_min": p_min, "p_max": p_max}));
    println!("p,alpha_g,alpha_m,alpha_tau1");
    for p in p_min..=p_max {
        let exact = alpha_g::<f64>(p, d, &grid)?;
        let mid = alpha_m::<f64>(p, d)?;
        let tau1 = alpha_g_tau::<f64>(p, d, 1.0)?;
        println!("{p},{},{},{}", exact.alpha, mid.alpha, tau1.alpha);
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_verify(
    path: &std::path::Path,
    p: Option<usize>,
    tol: f64,
    grid: GridSpec,
    output: OutputFormat,
) -> Result<ExitCode> {
    let inst = io::read_instance(path)?;
    let z = io::tuple_from_instance(&inst)?;
    let p = p.unwrap_or(inst.d + 2);
    echo_config(
        "verify",
        json!({"instance": path.display().to_string(), "p": p, "d": inst.d, "tol": tol,
               "seed": inst.meta.seed}),
    );
    let l = build_certificate(&inst.a, z)?;
    let report = verify_certificate(&l, inst.d, tol)?;
    let alpha = alpha_g::<f64>(p, inst.d, &grid)?;
    let verified = report.kkt_ok && report.unique_ok;
    let benign = verified && alpha.feasible() && report.cond < alpha.alpha;
    let value = json!({
        "report": io::CertificateReportDto::from(&report),
        "alpha_g": io::ThresholdDto::from(&alpha),
        "context": {
            "alpha_m": alpha_m::<f64>(p, inst.d).ok().map(|m| m.alpha),
            "alpha_tau1": alpha_g_tau::<f64>(p, inst.d, 1.0)?.alpha,
            "frontier_2p_over_d_plus_1": counterexample_threshold::<f64>(p, inst.d),
        },
        "benign": benign,
        "margin": if report.cond.is_finite() { Some(alpha.alpha - report.cond) } else { None },
    });
    match output {
        OutputFormat::Json => println!("{}", serde_json::to_string_pretty(&value)?),
        OutputFormat::Pretty => {
            println!(
                "certificate: kkt_ok={} unique_ok={} cond={:.6}",
                report.kkt_ok, report.unique_ok, report.cond
            );
            println!("threshold:   alpha_g({p}, {}) = {:.6}", inst.d, alpha.alpha);
            println!("verdict:     benign = {benign}");
        }
    }
    Ok(if !verified {
        ExitCode::from(EXIT_KKT_FAIL)
    } else if benign {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_NOT_BENIGN)
    })
}

fn cmd_solve(
    path: &std::path::Path,
    p: Option<usize>,
    seed: u64,
    max_iter: usize,
    grad_tol: f64,
    trace_path: Option<&std::path::Path>,
) -> Result<ExitCode> {
    let inst = io::read_instance(path)?;
    let p = p.unwrap_or(inst.d + 2);
    echo_config(
        "solve",
        json!({"instance": path.display().to_string(), "p": p, "seed": seed,
               "max_iter": max_iter, "grad_tol": grad_tol}),
    );
    let cfg = SolveConfig::<f64> {
        max_iter,
        grad_tol,
        record_trace: trace_path.is_some(),
        seed,
        ..SolveConfig::default()
    };
    let s0 = random_stiefel::<f64>(inst.n, inst.d, p, seed);
    let result = solve(&inst.a, &s0, &cfg)?;
    if let (Some(path), Some(trace)) = (trace_path, result.trace.as_ref()) {
        let mut text = String::from("iter,objective,grad_norm\n");
        for (k, (obj, grad)) in trace.iter().enumerate() {
            text.push_str(&format!("{k},{obj},{grad}\n"));
        }
        std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    }
    let recovery = inst
        .z
        .as_ref()
        .map(|z| recovery_error(&result.s_final, z))
        .transpose()?;
    println!(
        "{}",
        serde_json::to_string_pretty(&io::solve_result_dto(&result, recovery))?
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_counterexample(
    p: usize,
    d: usize,
    t_scale: f64,
    out: Option<&std::path::Path>,
    grid: GridSpec,
    output: OutputFormat,
) -> Result<ExitCode> {
    if p < d + 1 {
        bail!("counterexample needs p >= d + 1");
    }
    echo_config("counterexample", json!({"p": p, "d": d, "t_scale": t_scale}));
    let t = t_scale * twisted_boundary_t::<f64>(p, d);
    let state = twisted_state::<f64>(p, d)?;
    let l = twisted_certificate::<f64>(p, d, t)?;
    let cert = verify_certificate(&l, d, DEFAULT_CERT_TOL)?;
    let criticality = second_order_check(&l, &state, 1e-8)?;
    let alpha = alpha_g::<f64>(p, d, &grid)?;
    let frontier = counterexample_threshold::<f64>(p, d);

    if let Some(path) = out {
        // A = -L makes L its own certificate at the identity candidate.
        let n = state.n();
        let a = BlockSymMatrix::new(n, d, -l.data().clone())?;
        let inst = SyncInstance {
            n,
            d,
            a,
            z: Some(StiefelTuple::consensus(n, d)),
            meta: InstanceMeta {
                generator: "counterexample".to_string(),
                seed: 0,
                params: [
                    ("p".to_string(), p as f64),
                    ("d".to_string(), d as f64),
                    ("t".to_string(), t),
                    ("t_scale".to_string(), t_scale),
                ]
                .into_iter()
                .collect(),
            },
        };
        io::write_instance(path, &inst)?;
    }

    // The twisted state is the extremal configuration for the
    // per-configuration dual bound; report it at the projection angle.
    let dual_tau = 0.5;
    let dual_bound = dual_alpha_bound(&state, dual_tau)?;
    let dual_alpha = if dual_bound.is_finite() {
        0.95 * dual_bound
    } else {
        1e6
    };
    let dual = dual_certificate_check(&state, dual_tau, dual_alpha, None)?;

    let value = json!({
        "p": p,
        "d": d,
        "n": state.n(),
        "t": t,
        "frontier_2p_over_d_plus_1": frontier,
        "certificate": io::CertificateReportDto::from(&cert),
        "criticality": io::CriticalityReportDto::from(&criticality),
        "alpha_g": io::ThresholdDto::from(&alpha),
        "cond_exceeds_alpha_g": cert.cond > alpha.alpha,
        "dual": {
            "tau": dual_tau,
            "alpha_bound": dual_bound.is_finite().then_some(dual_bound),
            "check": io::DualFeasibilityDto::from(&dual),
        },
    });
    match output {
        OutputFormat::Json => println!("{}", serde_json::to_string_pretty(&value)?),
        OutputFormat::Pretty => {
            println!("twisted state: n = {} blocks of {d} x {p}", state.n());
            println!(
                "certificate at t = {t:.6}: cond = {:.6} (frontier {frontier:.6})",
                cert.cond
            );
            println!(
                "criticality: grad residual {:.2e}, Hessian min {:.2e}, second-order = {}",
                criticality.grad_residual, criticality.hess_min_eig, criticality.is_second_order
            );
            println!("alpha_g({p}, {d}) = {:.4}", alpha.alpha);
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_montecarlo(
    n: usize,
    d: usize,
    p: usize,
    tau: f64,
    trials: usize,
    seed: u64,
    which: CovWhich,
) -> Result<ExitCode> {
    if p < d || d < 1 || n < 1 {
        bail!("montecarlo needs n >= 1 and p >= d >= 1");
    }
    echo_config(
        "montecarlo",
        json!({"n": n, "d": d, "p": p, "tau": tau, "trials": trials, "seed": seed}),
    );
    // Deterministic tuple: reuse the solver's seeded initializer.
    let s = random_stiefel::<f64>(n, d, p, seed);
    let exact = sigma_tau(&s, tau);
    let (label, estimate, target) = match which {
        CovWhich::LCov => {
            let mc = monte_carlo_cov(&s, tau, CovKind::LCov, trials, seed);
            (String::from("l-cov"), mc, exact.clone())
        }
        CovWhich::PCov => {
            let mc = monte_carlo_cov(&s, tau, CovKind::PCov, trials, seed);
            let shift = 2.0 * (d as f64 - 1.0) * tau + p as f64 - 2.0 * d as f64;
            let target = BlockSymMatrix::<f64>::consensus_gram(n, d)
                .scale(shift)
                .add(&exact);
            (String::from("p-cov"), mc, target)
        }
    };
    let rel = (estimate.data() - target.data()).norm() / target.frobenius_norm();
    let value = json!({
        "which": label,
        "n": n, "d": d, "p": p, "tau": tau, "trials": trials, "seed": seed,
        "relative_frobenius_error": rel,
        "target_frobenius_norm": target.frobenius_norm(),
    });
    println!("{}", serde_json::to_string_pretty(&value)?);
    Ok(ExitCode::SUCCESS)
}
