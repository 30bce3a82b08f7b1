//! Batch experiment harness: generate, certify, solve, and summarize.
//!
//! Each trial draws an instance from the selected model, refines the
//! candidate to first-order stationarity at `p = d` (noise moves the
//! least-squares optimum off the raw ground truth), certifies the refined
//! candidate, then runs the solver from a random start at the requested rank
//! and measures recovery against the refined candidate. Rows are emitted as
//! CSV sorted by trial index; the aggregate success rate goes to stderr.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Result};
use clap::{Args, ValueEnum};
use rayon::prelude::*;
use serde_json::json;

use sync_landscape::blockmat::BlockSymMatrix;
use sync_landscape::certificate::{build_certificate, verify_certificate, DEFAULT_CERT_TOL};
use sync_landscape::instances::{
    gen_kuramoto_graph, gen_od_gaussian, gen_procrustes, gen_z2, twisted_boundary_t,
    twisted_certificate, twisted_state, Z2Model,
};
use sync_landscape::solver::{random_stiefel, recovery_error, solve, SolveConfig};
use sync_landscape::thresholds::{alpha_g, GridSpec};
use sync_landscape::SyncInstance64;

pub const RECOVERY_SUCCESS_TOL: f64 = 1e-4;

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
pub enum Model {
    OdGaussian,
    Z2Gaussian,
    Z2Er,
    Kuramoto,
    Procrustes,
    Counterexample,
}

#[derive(Args)]
pub struct ExperimentArgs {
    #[arg(long, value_enum)]
    pub model: Model,
    #[arg(long, default_value_t = 30)]
    pub n: usize,
    #[arg(long, default_value_t = 1)]
    pub d: usize,
    /// Factorization rank; defaults to d + 2 (d + 1 for Kuramoto).
    #[arg(long)]
    pub p: Option<usize>,
    #[arg(long, default_value_t = 0.0)]
    pub sigma: f64,
    #[arg(long, default_value_t = 0.8)]
    pub p_edge: f64,
    #[arg(long, default_value_t = 0.0)]
    pub flip_prob: f64,
    /// Signed edges for the Kuramoto model.
    #[arg(long, default_value_t = false)]
    pub signed: bool,
    /// Point-cloud columns for the Procrustes model.
    #[arg(long, default_value_t = 8)]
    pub m: usize,
    /// Twisted-certificate parameter as a multiple of the boundary value.
    #[arg(long, default_value_t = 1.0)]
    pub t_scale: f64,
    #[arg(long, default_value_t = 10)]
    pub trials: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 20_000)]
    pub max_iter: usize,
    #[arg(long, default_value_t = 1e-10)]
    pub grad_tol: f64,
    /// Write the first trial's instance as JSON (usable by verify/solve).
    #[arg(long)]
    pub emit_instance: Option<PathBuf>,
    /// Store the refined first-order candidate in the emitted instance
    /// instead of the raw ground truth (the raw truth is not stationary
    /// under noise, so its certificate fails verification).
    #[arg(long, default_value_t = false)]
    pub refine_candidate: bool,
}

struct TrialRow {
    trial: usize,
    seed: u64,
    sigma: f64,
    cond: f64,
    benign: bool,
    recovery_error: f64,
    iters: usize,
}

fn generate(args: &ExperimentArgs, seed: u64) -> Result<SyncInstance64> {
    Ok(match args.model {
        Model::OdGaussian => gen_od_gaussian(args.n, args.d, args.sigma, seed),
        Model::Z2Gaussian => gen_z2(args.n, Z2Model::Gaussian { sigma: args.sigma }, seed),
        Model::Z2Er => gen_z2(
            args.n,
            Z2Model::ErdosRenyi {
                p_edge: args.p_edge,
                flip_prob: args.flip_prob,
            },
            seed,
        ),
        Model::Kuramoto => gen_kuramoto_graph(args.n, args.p_edge, args.signed, seed),
        Model::Procrustes => gen_procrustes(args.n, args.d, args.m, args.sigma, seed)?,
        Model::Counterexample => bail!("counterexample trials are generated in place"),
    })
}

fn run_generator_trial(
    args: &ExperimentArgs,
    p: usize,
    alpha: f64,
    trial: usize,
) -> Result<TrialRow> {
    let seed = args.seed.wrapping_add(trial as u64);
    let inst = generate(args, seed)?;
    let z0 = inst
        .z
        .as_ref()
        .expect("generator models carry ground truth");
    let refine_cfg = SolveConfig::<f64> {
        max_iter: args.max_iter,
        grad_tol: (args.grad_tol * 1e-2).max(1e-13),
        ..SolveConfig::default()
    };
    let refined = solve(&inst.a, z0, &refine_cfg)?;
    let l = build_certificate(&inst.a, &refined.s_final)?;
    let report = verify_certificate(&l, inst.d, DEFAULT_CERT_TOL)?;
    let benign = report.kkt_ok && report.unique_ok && report.cond < alpha;

    let cfg = SolveConfig::<f64> {
        max_iter: args.max_iter,
        grad_tol: args.grad_tol,
        ..SolveConfig::default()
    };
    let s0 = random_stiefel::<f64>(inst.n, inst.d, p, seed ^ 0x9e37_79b9_7f4a_7c15);
    let result = solve(&inst.a, &s0, &cfg)?;
    let err = recovery_error(&result.s_final, &refined.s_final)?;
    Ok(TrialRow {
        trial,
        seed,
        sigma: args.sigma,
        cond: report.cond,
        benign,
        recovery_error: err,
        iters: result.iters,
    })
}

fn run_counterexample_trial(args: &ExperimentArgs, p: usize, trial: usize) -> Result<TrialRow> {
    let seed = args.seed.wrapping_add(trial as u64);
    let d = args.d;
    let t = args.t_scale * twisted_boundary_t::<f64>(p, d);
    let state = twisted_state::<f64>(p, d)?;
    let l = twisted_certificate::<f64>(p, d, t)?;
    let report = verify_certificate(&l, d, DEFAULT_CERT_TOL)?;
    let a = BlockSymMatrix::new(state.n(), d, -l.data().clone())?;
    let cfg = SolveConfig::<f64> {
        max_iter: args.max_iter,
        grad_tol: args.grad_tol,
        ..SolveConfig::default()
    };
    // Start the solver exactly at the twisted state: at or above the
    // boundary it must not move.
    let result = solve(&a, &state, &cfg)?;
    let moved = recovery_error(&result.s_final, &state)?;
    Ok(TrialRow {
        trial,
        seed,
        sigma: t,
        cond: report.cond,
        benign: false,
        recovery_error: moved,
        iters: result.iters,
    })
}

pub fn run(args: ExperimentArgs) -> Result<ExitCode> {
    let p = args.p.unwrap_or(match args.model {
        Model::Kuramoto => 2,
        _ => args.d + 2,
    });
    let d = match args.model {
        Model::Z2Gaussian | Model::Z2Er | Model::Kuramoto => 1,
        _ => args.d,
    };
    if p < d {
        bail!("experiment needs p >= d");
    }
    let args = ExperimentArgs { d, ..args };
    eprintln!(
        "config experiment: {}",
        json!({
            "model": format!("{:?}", model_name(args.model)),
            "n": args.n, "d": args.d, "p": p, "sigma": args.sigma,
            "p_edge": args.p_edge, "flip_prob": args.flip_prob, "signed": args.signed,
            "m": args.m, "t_scale": args.t_scale, "trials": args.trials, "seed": args.seed,
            "max_iter": args.max_iter, "grad_tol": args.grad_tol,
        })
    );
    let grid = GridSpec::default();
    let alpha = alpha_g::<f64>(p, args.d, &grid)?.alpha;

    if let Some(path) = &args.emit_instance {
        match args.model {
            Model::Counterexample => bail!("use the counterexample subcommand to emit its instance"),
            _ => {
                let mut inst = generate(&args, args.seed)?;
                if args.refine_candidate {
                    let z0 = inst.z.as_ref().expect("generator models carry ground truth");
                    let refine_cfg = SolveConfig::<f64> {
                        max_iter: args.max_iter,
                        grad_tol: (args.grad_tol * 1e-2).max(1e-13),
                        ..SolveConfig::default()
                    };
                    inst.z = Some(solve(&inst.a, z0, &refine_cfg)?.s_final);
                }
                crate::io::write_instance(path, &inst)?;
            }
        }
    }

    let mut rows: Vec<TrialRow> = (0..args.trials)
        .into_par_iter()
        .map(|trial| match args.model {
            Model::Counterexample => run_counterexample_trial(&args, p, trial),
            _ => run_generator_trial(&args, p, alpha, trial),
        })
        .collect::<Result<Vec<_>>>()?;
    rows.sort_by_key(|r| r.trial);

    println!("trial,seed,sigma,cond,benign,recovery_error,iters");
    for r in &rows {
        println!(
            "{},{},{},{},{},{},{}",
            r.trial, r.seed, r.sigma, r.cond, r.benign, r.recovery_error, r.iters
        );
    }
    let successes = rows
        .iter()
        .filter(|r| r.recovery_error <= RECOVERY_SUCCESS_TOL)
        .count();
    eprintln!(
        "success_rate: {:.3} ({successes}/{} trials with recovery_error <= {RECOVERY_SUCCESS_TOL})",
        successes as f64 / rows.len().max(1) as f64,
        rows.len()
    );
    Ok(ExitCode::SUCCESS)
}

fn model_name(model: Model) -> &'static str {
    match model {
        Model::OdGaussian => "od-gaussian",
        Model::Z2Gaussian => "z2-gaussian",
        Model::Z2Er => "z2-er",
        Model::Kuramoto => "kuramoto",
        Model::Procrustes => "procrustes",
        Model::Counterexample => "counterexample",
    }
}
