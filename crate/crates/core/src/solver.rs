//! Gradient descent on the product Stiefel manifold for the factorized
//! synchronization objective `-<A, S S^T>`.
//!
//! The iteration retracts along the tangent part of the objective's
//! derivative with a backtracking (or fixed) step rule; the polar retraction
//! keeps every iterate exactly on the manifold and matches the gauge used by
//! the recovery metric.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::blockmat::BlockSymMatrix;
use crate::criticality::{riemannian_gradient, CriticalityError};
use crate::operators::{polar_factor, OperatorError, StiefelTuple, TangentTuple};
use crate::scalar::Real;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("instance is {a_n} nodes of size {a_d}, start point is {s_n} of size {s_d}")]
    ShapeMismatch {
        a_n: usize,
        a_d: usize,
        s_n: usize,
        s_d: usize,
    },
    #[error("invalid solver configuration: {reason}")]
    BadConfig { reason: &'static str },
    #[error(transparent)]
    Operator(#[from] OperatorError),
    #[error(transparent)]
    Criticality(#[from] CriticalityError),
}

/// Step-size rule for the descent iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepRule<T: Real> {
    Fixed { eta: T },
    /// Armijo backtracking: accept when the objective drops by at least
    /// `c * eta * |grad|^2`, shrinking `eta` by `shrink` otherwise.
    Backtracking { c: T, shrink: T },
}

/// Solver configuration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveConfig<T: Real> {
    pub max_iter: usize,
    pub grad_tol: T,
    pub step_rule: StepRule<T>,
    pub seed: u64,
    pub record_trace: bool,
}

impl<T: Real> Default for SolveConfig<T> {
    fn default() -> Self {
        Self {
            max_iter: 2000,
            grad_tol: T::of(1e-8),
            step_rule: StepRule::Backtracking {
                c: T::of(1e-4),
                shrink: T::of(0.5),
            },
            seed: 0,
            record_trace: false,
        }
    }
}

/// Why the iteration stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    GradTol,
    MaxIter,
    StepUnderflow,
}

/// Final iterate and diagnostics.
#[derive(Debug, Clone)]
pub struct SolveResult<T: Real> {
    pub s_final: StiefelTuple<T>,
    /// `-<A, S S^T>` at the final iterate.
    pub objective: T,
    /// `|grad|_F / sqrt(n d)` at the final iterate.
    pub grad_residual: T,
    pub iters: usize,
    pub converged: bool,
    pub reason: StopReason,
    /// Per-iteration `(objective, grad_residual)` when requested.
    pub trace: Option<Vec<(T, T)>>,
}

/// Uniform-ish random start: each block is the polar factor of a standard
/// Gaussian `d x p` matrix; bit-deterministic per seed.
pub fn random_stiefel<T: Real>(n: usize, d: usize, p: usize, seed: u64) -> StiefelTuple<T> {
    assert!(p >= d && d >= 1 && n >= 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let blocks = (0..n)
        .map(|_| polar_factor(&DMatrix::from_fn(d, p, |_, _| T::standard_normal(&mut rng))))
        .collect();
    StiefelTuple::new(blocks).expect("polar factors are orthonormal")
}

/// Polar retraction: `retract(S, T) = polar(S + T)`, first-order tangent.
pub fn retract<T: Real>(s_i: &DMatrix<T>, t_i: &DMatrix<T>) -> DMatrix<T> {
    polar_factor(&(s_i + t_i))
}

fn objective<T: Real>(a: &BlockSymMatrix<T>, s: &StiefelTuple<T>) -> T {
    -a.inner(&s.gram())
}

fn retract_tuple<T: Real>(s: &StiefelTuple<T>, dir: &TangentTuple<T>, eta: T) -> StiefelTuple<T> {
    let blocks = s
        .blocks()
        .iter()
        .zip(dir.blocks())
        .map(|(si, ti)| retract(si, &(ti * eta)))
        .collect();
    StiefelTuple::new(blocks).expect("retraction lands on the manifold")
}

/// Spectral-norm estimate by power iteration (deterministic start).
fn operator_norm_estimate<T: Real>(a: &BlockSymMatrix<T>, iters: usize) -> T {
    let dim = a.dim();
    let mut v = nalgebra::DVector::from_element(dim, T::one() / T::of_usize(dim).sqrt());
    let mut norm = T::one();
    for _ in 0..iters {
        let w = a.data() * &v;
        norm = w.norm();
        if norm == T::zero() {
            return T::one();
        }
        v = w / norm;
    }
    norm
}

/// Minimizes `-<A, S S^T>` from `s0`.
///
/// The descent direction is the tangent field returned by
/// [`riemannian_gradient`] (which is the negative Riemannian gradient of
/// `-<A, S S^T>/2`, hence stepping along it descends the objective). With
/// backtracking the objective trace is monotone non-increasing.
pub fn solve<T: Real>(
    a: &BlockSymMatrix<T>,
    s0: &StiefelTuple<T>,
    cfg: &SolveConfig<T>,
) -> Result<SolveResult<T>, SolverError> {
    if s0.n() != a.n() || s0.d() != a.d() {
        return Err(SolverError::ShapeMismatch {
            a_n: a.n(),
            a_d: a.d(),
            s_n: s0.n(),
            s_d: s0.d(),
        });
    }
    if cfg.max_iter == 0 {
        return Err(SolverError::BadConfig {
            reason: "max_iter must be at least 1",
        });
    }
    // partial_cmp keeps NaN tolerances out as well.
    if cfg.grad_tol.partial_cmp(&T::zero()) != Some(std::cmp::Ordering::Greater) {
        return Err(SolverError::BadConfig {
            reason: "grad_tol must be positive",
        });
    }
    if let StepRule::Fixed { eta } = cfg.step_rule {
        if eta.partial_cmp(&T::zero()) != Some(std::cmp::Ordering::Greater) {
            return Err(SolverError::BadConfig {
                reason: "fixed step size must be positive",
            });
        }
    }
    let nd_sqrt = T::of_usize(a.n() * a.d()).sqrt();
    let eta0 = match cfg.step_rule {
        StepRule::Fixed { eta } => eta,
        StepRule::Backtracking { .. } => {
            T::one() / (T::of(2.0) * operator_norm_estimate(a, 20))
        }
    };
    let mut s = s0.clone();
    let mut obj = objective(a, &s);
    let mut trace = cfg.record_trace.then(Vec::new);
    let mut reason = StopReason::MaxIter;
    let mut iters = 0;
    let mut grad_residual = T::inf();

    for it in 0..cfg.max_iter {
        iters = it;
        let dir = riemannian_gradient(a, &s)?;
        let grad_norm_sq = dir.blocks().iter().map(|b| b.norm_squared()).sum::<T>();
        grad_residual = grad_norm_sq.sqrt() / nd_sqrt;
        if let Some(t) = trace.as_mut() {
            t.push((obj, grad_residual));
        }
        if grad_residual <= cfg.grad_tol {
            reason = StopReason::GradTol;
            break;
        }
        match cfg.step_rule {
            StepRule::Fixed { eta } => {
                s = retract_tuple(&s, &dir, eta);
                obj = objective(a, &s);
            }
            StepRule::Backtracking { c, shrink } => {
                let mut eta = eta0;
                let floor = eta0 * T::of(1e-14);
                // Near stationarity the exact Armijo decrease drops below the
                // resolution of the objective; the epsilon term keeps the
                // test meaningful there.
                let slack = T::default_epsilon() * (T::one() + obj.abs());
                let mut accepted = false;
                while eta > floor {
                    let candidate = retract_tuple(&s, &dir, eta);
                    let cand_obj = objective(a, &candidate);
                    if cand_obj <= obj - c * eta * grad_norm_sq + slack {
                        s = candidate;
                        obj = cand_obj;
                        accepted = true;
                        break;
                    }
                    eta *= shrink;
                }
                if !accepted {
                    reason = StopReason::StepUnderflow;
                    break;
                }
            }
        }
    }
    if reason == StopReason::MaxIter && grad_residual <= cfg.grad_tol {
        reason = StopReason::GradTol;
    }
    // Final residual refresh (the loop may have exited on the step update).
    let dir = riemannian_gradient(a, &s)?;
    grad_residual = dir.norm() / nd_sqrt;
    let converged = grad_residual <= cfg.grad_tol;
    if converged && reason == StopReason::MaxIter {
        reason = StopReason::GradTol;
    }
    if let Some(t) = trace.as_mut() {
        t.push((obj, grad_residual));
    }
    Ok(SolveResult {
        s_final: s,
        objective: obj,
        grad_residual,
        iters: iters + 1,
        converged,
        reason,
        trace,
    })
}

/// Gauge-invariant recovery error `|S S^T - Z Z^T|_F / |Z Z^T|_F`.
pub fn recovery_error<T: Real>(
    s: &StiefelTuple<T>,
    z: &StiefelTuple<T>,
) -> Result<T, SolverError> {
    if s.n() != z.n() || s.d() != z.d() {
        return Err(SolverError::ShapeMismatch {
            a_n: z.n(),
            a_d: z.d(),
            s_n: s.n(),
            s_d: s.d(),
        });
    }
    let diff = s.gram().data() - z.gram().data();
    Ok(diff.norm() / z.gram().frobenius_norm())
}
