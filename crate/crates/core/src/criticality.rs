//! First- and second-order criticality on the product Stiefel manifold, the
//! landscape statistics, and dual-certificate feasibility.
//!
//! A tuple `S` is first-order critical for the quadratic objective exactly
//! when `(L - BDG(L S S^T)) S = 0`, and second-order critical when the
//! quadratic form `<L - BDG(L S S^T), T T^T>` is positive semidefinite over
//! tangent directions `T`. The dual-certificate checker assembles the
//! multiplier matrix `X_perp` from the closed-form `(beta, delta)`
//! parameterization and verifies its feasibility, which is what pins the
//! per-configuration threshold `alpha`.

use nalgebra::DMatrix;
use thiserror::Error;

use crate::blockmat::{bdg, eigs_sym_dense, identity_stack, BlockMatError, BlockSymMatrix};
use crate::operators::{
    apply_p_tau, sigma_tau, OperatorError, StiefelTuple, TangentTuple,
};
use crate::scalar::Real;
use crate::thresholds::ThresholdError;

/// Alignment threshold: `<P_perp, S S^T> <= ALIGNED_TOL * n d` means the
/// tuple is (numerically) the consensus configuration.
pub const ALIGNED_TOL: f64 = 1e-10;

/// Feasibility tolerance for the dual-certificate checks.
pub const DUAL_TOL: f64 = 1e-8;

/// Hessian assembly cap on the tangent dimension.
pub const TANGENT_DIM_CAP: usize = 4000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CriticalityError {
    #[error("tuple is aligned with the consensus configuration; statistic undefined")]
    Aligned,
    #[error("tangent dimension {dim} exceeds the dense-assembly cap {cap}; use a sampled check")]
    DimensionCap { dim: usize, cap: usize },
    #[error("direction matrix must have unit Frobenius norm, got {norm:.3e}")]
    NotUnit { norm: f64 },
    #[error("x = {x} must be positive")]
    NonPositiveX { x: f64 },
    #[error(transparent)]
    BlockMat(#[from] BlockMatError),
    #[error(transparent)]
    Operator(#[from] OperatorError),
    #[error(transparent)]
    Threshold(#[from] ThresholdError),
}

/// First/second-order test outcome.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CriticalityReport<T: Real> {
    /// `|(L - BDG(L S S^T)) S|_F / (1 + |L|_F)`.
    pub grad_residual: T,
    /// Minimum eigenvalue of the Hessian quadratic form on the tangent space.
    pub hess_min_eig: T,
    pub is_first_order: bool,
    pub is_second_order: bool,
    /// `n (d p - d (d + 1) / 2)`, the dimension of the assembled basis.
    pub tangent_dim: usize,
}

/// Landscape statistics of a tuple relative to the consensus direction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UVWStats<T: Real> {
    pub u: T,
    pub v: T,
    pub w: T,
    /// Smallest singular value of `Z^T S`.
    pub sigma_min_zs: T,
}

/// Outcome of the dual-certificate feasibility check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DualFeasibilityReport<T: Real> {
    pub alpha_used: T,
    pub beta: T,
    pub delta: T,
    pub theta: T,
    pub x_perp_min_eig: T,
    pub x_perp_trace: T,
    pub two_by_two_ok: bool,
    pub feasible: bool,
}

/// `L - BDG(L S S^T)`, the shifted certificate whose kernel/positivity is
/// criticality of `S`.
pub(crate) fn hessian_shift<T: Real>(
    l: &BlockSymMatrix<T>,
    s: &StiefelTuple<T>,
) -> Result<DMatrix<T>, CriticalityError> {
    let gram = s.gram();
    let shift = bdg(l.n(), l.d(), &(l.data() * gram.data()))?;
    Ok(l.data() - shift.data())
}

/// The tangent part of the synchronization objective's derivative.
///
/// Returns `R_i = sum_j A_ij S_j - (G_i S_i^T + S_i G_i^T) S_i / 2` with
/// `G = A S`. For `f(S) = -<A, S S^T> / 2` this is `-grad f`, so the
/// directional derivative of `f` along a tangent `T` is `-<R, T>` and a
/// solver descends `-<A, S S^T>` by stepping along `+R`.
pub fn riemannian_gradient<T: Real>(
    a: &BlockSymMatrix<T>,
    s: &StiefelTuple<T>,
) -> Result<TangentTuple<T>, CriticalityError> {
    let (n, d) = (a.n(), a.d());
    if s.n() != n || s.d() != d {
        return Err(OperatorError::ShapeMismatch {
            expected_rows: n,
            expected_cols: d,
            actual_rows: s.n(),
            actual_cols: s.d(),
        }
        .into());
    }
    let g = a.data() * s.stacked(); // nd x p
    let mut blocks = Vec::with_capacity(n);
    for i in 0..n {
        let gi = g.view((i * d, 0), (d, s.p())).into_owned();
        let si = s.block(i);
        let sym = (&gi * si.transpose() + si * gi.transpose()) * T::of(0.5);
        blocks.push(&gi - sym * si);
    }
    Ok(TangentTuple::from_blocks_unchecked(blocks))
}

/// Hessian quadratic form `<L - BDG(L S S^T), (T1 T2^T + T2 T1^T) / 2>`.
pub fn hessian_quadratic_form<T: Real>(
    l: &BlockSymMatrix<T>,
    s: &StiefelTuple<T>,
    t1: &TangentTuple<T>,
    t2: &TangentTuple<T>,
) -> Result<T, CriticalityError> {
    let h = hessian_shift(l, s)?;
    let w = &h * t1.stacked();
    Ok(w.dot(&t2.stacked()))
}

/// Tangent projection of one ambient direction replicated at every node:
/// `T_i = P_{S_i,1/2}(Y)`, the family used to probe for negative curvature.
pub fn projected_direction<T: Real>(s: &StiefelTuple<T>, y: &DMatrix<T>) -> TangentTuple<T> {
    let half = T::of(0.5);
    TangentTuple::from_blocks_unchecked(
        s.blocks()
            .iter()
            .map(|si| {
                apply_p_tau(si, y, half).expect("shapes agree by construction")
            })
            .collect(),
    )
}

/// Orthonormal tangent basis at one node: `d(d-1)/2` antisymmetric rotations
/// of `S_i` plus `d(p-d)` directions into the orthogonal complement of the
/// row space (Gram-Schmidt completion over the canonical basis, deterministic
/// ascending order).
fn node_tangent_basis<T: Real>(s_i: &DMatrix<T>) -> Vec<DMatrix<T>> {
    let (d, p) = (s_i.nrows(), s_i.ncols());
    let inv_sqrt2 = T::of(std::f64::consts::FRAC_1_SQRT_2);
    let mut basis = Vec::with_capacity(d * p - d * (d + 1) / 2);
    for k in 0..d {
        for l in (k + 1)..d {
            let mut psi = DMatrix::zeros(d, d);
            psi[(k, l)] = inv_sqrt2;
            psi[(l, k)] = -inv_sqrt2;
            basis.push(psi * s_i);
        }
    }
    // Complement of the row space, built by twice-iterated Gram-Schmidt.
    let mut complement: Vec<nalgebra::DVector<T>> = Vec::with_capacity(p - d);
    for idx in 0..p {
        if complement.len() == p - d {
            break;
        }
        let mut v = nalgebra::DVector::zeros(p);
        v[idx] = T::one();
        for _ in 0..2 {
            let coeffs = s_i * &v; // d coefficients against the rows
            v -= s_i.transpose() * coeffs;
            for c in &complement {
                let proj = c.dot(&v);
                v -= c * proj;
            }
        }
        let norm = v.norm();
        if norm > T::of(1e-8) {
            complement.push(v / norm);
        }
    }
    assert_eq!(complement.len(), p - d, "row-space complement is rank p - d");
    for c in &complement {
        for k in 0..d {
            let mut dir = DMatrix::zeros(d, p);
            dir.row_mut(k).copy_from(&c.transpose());
            basis.push(dir);
        }
    }
    basis
}

/// Second-order criticality test: assembles the Hessian quadratic form on an
/// orthonormal tangent basis and reports its minimum eigenvalue.
///
/// `tol` governs the first-order residual; the Hessian eigenvalue counts as
/// nonnegative above `-1e-8 (1 + |L|_F)` so that boundary configurations
/// sitting exactly at zero curvature classify as second-order critical.
pub fn second_order_check<T: Real>(
    l: &BlockSymMatrix<T>,
    s: &StiefelTuple<T>,
    tol: T,
) -> Result<CriticalityReport<T>, CriticalityError> {
    let (n, d, p) = (s.n(), s.d(), s.p());
    let tangent_dim = n * (d * p - d * (d + 1) / 2);
    if tangent_dim > TANGENT_DIM_CAP {
        return Err(CriticalityError::DimensionCap {
            dim: tangent_dim,
            cap: TANGENT_DIM_CAP,
        });
    }
    let h = hessian_shift(l, s)?;
    let l_norm = l.frobenius_norm();
    let grad_residual = (&h * s.stacked()).norm() / (T::one() + l_norm);
    let is_first_order = grad_residual <= tol;

    // Per-node bases; element (i, b) only occupies node i's block, so
    // H B is a product against the corresponding block column of H.
    let mut owners: Vec<usize> = Vec::with_capacity(tangent_dim);
    let mut elements: Vec<DMatrix<T>> = Vec::with_capacity(tangent_dim);
    for i in 0..n {
        for b in node_tangent_basis(s.block(i)) {
            owners.push(i);
            elements.push(b);
        }
    }
    assert_eq!(elements.len(), tangent_dim);

    let mut gram = DMatrix::zeros(tangent_dim, tangent_dim);
    for a in 0..tangent_dim {
        let ia = owners[a];
        let h_col = h.view((0, ia * d), (n * d, d));
        let w_a = h_col * &elements[a]; // nd x p
        for b in a..tangent_dim {
            let ib = owners[b];
            let val = w_a.view((ib * d, 0), (d, p)).dot(&elements[b]);
            gram[(a, b)] = val;
            gram[(b, a)] = val;
        }
    }
    let spectrum = eigs_sym_dense(&gram, false)?;
    let hess_min_eig = spectrum.min();
    let is_second_order =
        is_first_order && hess_min_eig >= -T::of(1e-8) * (T::one() + l_norm);
    Ok(CriticalityReport {
        grad_residual,
        hess_min_eig,
        is_first_order,
        is_second_order,
        tangent_dim,
    })
}

/// `<P_perp, S S^T> = n d - |Z^T S|_F^2 / n`.
fn perp_mass<T: Real>(s: &StiefelTuple<T>) -> T {
    let nd = T::of_usize(s.n() * s.d());
    nd - s.consensus_alignment().norm_squared() / T::of_usize(s.n())
}

fn require_not_aligned<T: Real>(s: &StiefelTuple<T>) -> Result<T, CriticalityError> {
    let mass = perp_mass(s);
    if mass <= T::of(ALIGNED_TOL) * T::of_usize(s.n() * s.d()) {
        return Err(CriticalityError::Aligned);
    }
    Ok(mass)
}

/// The `(u, v, w)` landscape statistics of a tuple (consensus direction
/// normalized to the identity blocks):
/// `v = 1 - |Z^T S|_F^2 / (n^2 d)`, `u = 1 - |S R|_F^2 / (n d)` with `R^T`
/// the polar factor of `Z^T S`, and `w = 1 - sum_i <S_i, Z^T S>^2 /
/// (n d |Z^T S|_F^2)`. They satisfy `0 <= u <= w <= v <= 1`, with `u = w`
/// when `d = 1`.
pub fn uvw_stats<T: Real>(s: &StiefelTuple<T>) -> UVWStats<T> {
    let (n, d) = (s.n(), s.d());
    let nd = T::of_usize(n * d);
    let zs = s.consensus_alignment(); // d x p
    let zs_norm_sq = zs.norm_squared();
    let one = T::one();

    let v = one - zs_norm_sq / (T::of_usize(n * n) * T::of_usize(d));

    let r_t = crate::operators::polar_factor(&zs); // d x p, rows orthonormal
    let mut sr_norm_sq = T::zero();
    for b in s.blocks() {
        sr_norm_sq += (b * r_t.transpose()).norm_squared();
    }
    let u = one - sr_norm_sq / nd;

    let w = if zs_norm_sq > T::zero() {
        let mut acc = T::zero();
        for b in s.blocks() {
            let inner = b.dot(&zs);
            acc += inner * inner;
        }
        one - acc / (nd * zs_norm_sq)
    } else {
        // Z^T S = 0: the limit convention is w = 1 (matching v = 1).
        one
    };

    let svals = zs.clone().singular_values_unordered();
    let mut sigma_min = T::inf();
    for val in svals.iter() {
        if *val < sigma_min {
            sigma_min = *val;
        }
    }
    if !sigma_min.finite() {
        sigma_min = T::zero();
    }

    let clamp = |x: T| x.max(T::zero()).min(one);
    let (mut u, mut w, v) = (clamp(u), clamp(w), clamp(v));
    // The ordering chain is a theorem; round-off may cross it by O(eps) only.
    let slack = T::of(1e-10);
    assert!(u <= w + slack && w <= v + slack, "u <= w <= v violated beyond round-off");
    if u > w {
        u = w;
    }
    if w > v {
        w = v;
    }
    UVWStats {
        u,
        v,
        w,
        sigma_min_zs: sigma_min,
    }
}

/// The per-configuration function
/// `g(S, x, tau) = Tr(Sigma_perp) / <P_perp, S S^T> -
///  |Z^T P_{S,tau}(Z^T S)|_F^2 / (n^2 <P_perp, S S^T>^2 x)`.
pub fn g_eval<T: Real>(s: &StiefelTuple<T>, x: T, tau: T) -> Result<T, CriticalityError> {
    if x <= T::zero() {
        return Err(CriticalityError::NonPositiveX {
            x: x.to_f64_lossy(),
        });
    }
    let mass = require_not_aligned(s)?;
    let (n, d) = (s.n(), s.d());
    let sigma = sigma_tau(s, tau);
    let z = identity_stack::<T>(n, d);
    let zsz = z.transpose() * sigma.data() * &z;
    let tr_perp = sigma.trace() - zsz.trace() / T::of_usize(n);

    let zs = s.consensus_alignment();
    let mut zp = DMatrix::zeros(d, s.p());
    for b in s.blocks() {
        zp += apply_p_tau(b, &zs, tau)?;
    }
    let n2 = T::of_usize(n * n);
    Ok(tr_perp / mass - zp.norm_squared() / (n2 * mass * mass * x))
}

struct DualPieces<T: Real> {
    mass: T,
    r: T,
    a_coef: T,
    b_coef: T,
    normal_dir: Option<DMatrix<T>>,
}

fn dual_pieces<T: Real>(s: &StiefelTuple<T>, tau: T) -> Result<DualPieces<T>, CriticalityError> {
    let mass = require_not_aligned(s)?;
    let (n, d, p) = (s.n(), s.d(), s.p());
    let r = crate::thresholds::r_tau::<T>(p, d, tau)?;
    let sigma = sigma_tau(s, tau);
    let z = identity_stack::<T>(n, d);
    let zsz = z.transpose() * sigma.data() * &z;
    let tr_perp = sigma.trace() - zsz.trace() / T::of_usize(n);

    let zs = s.consensus_alignment();
    let mut zp = DMatrix::zeros(d, p);
    for b in s.blocks() {
        zp += apply_p_tau(b, &zs, tau)?;
    }
    let zp_norm = zp.norm();
    let a_coef = T::one() - tr_perp / (mass * r);
    let b_coef = zp_norm / (T::of_usize(n) * mass * r.sqrt());
    let normal_dir = if zp_norm > T::of(1e-14) {
        Some(-zp / zp_norm)
    } else {
        None
    };
    Ok(DualPieces {
        mass,
        r,
        a_coef,
        b_coef,
        normal_dir,
    })
}

/// The per-configuration threshold from the reduced dual program: the
/// largest `alpha` whose trace constraint stays feasible at the optimal
/// mixing angle. Infinite when every `alpha` is feasible (such tuples can
/// never be spurious second-order critical points).
pub fn dual_alpha_bound<T: Real>(s: &StiefelTuple<T>, tau: T) -> Result<T, CriticalityError> {
    let pieces = dual_pieces(s, tau)?;
    let (a, b) = (pieces.a_coef, pieces.b_coef);
    let rho = T::one() - a * T::of(0.5) - (a * a * T::of(0.25) + b * b).sqrt();
    Ok(if rho > T::zero() { T::one() / rho } else { T::inf() })
}

/// Builds the dual-certificate multipliers for a prescribed `alpha` and
/// checks feasibility: `X_perp >= 0`, `Tr(X_perp) <= 1`, and the 2x2
/// multiplier block PSD.
///
/// The mixing angle defaults to the closed-form optimum
/// `cos(theta) = -(a/2) / sqrt(a^2/4 + b^2)`; when both coefficients vanish,
/// a 257-point grid picks the angle with the best feasibility margin. A
/// degenerate normal direction (`Z^T P(Z^T S) = 0`) falls back to the pure
/// `beta` certificate, visible in the report as `delta = 0`.
pub fn dual_certificate_check<T: Real>(
    s: &StiefelTuple<T>,
    tau: T,
    alpha: T,
    theta: Option<T>,
) -> Result<DualFeasibilityReport<T>, CriticalityError> {
    let pieces = dual_pieces(s, tau)?;
    let theta = match theta {
        Some(t) => t,
        None => {
            let (a, b) = (pieces.a_coef, pieces.b_coef);
            let radius = (a * a * T::of(0.25) + b * b).sqrt();
            if radius > T::of(1e-14) {
                // cos = -(a/2)/radius, sin = b/radius.
                b.atan2(-(a * T::of(0.5)))
            } else {
                // Objective is angle-independent; grid for the best margin.
                let mut best = (T::zero(), -T::inf());
                for k in 0..257 {
                    let cand = T::of_usize(k) * T::of(2.0 * std::f64::consts::PI / 257.0);
                    let rep = dual_report_at(s, tau, alpha, cand, &pieces)?;
                    let margin = rep.x_perp_min_eig.min(T::one() - rep.x_perp_trace);
                    if margin > best.1 {
                        best = (cand, margin);
                    }
                }
                best.0
            }
        }
    };
    dual_report_at(s, tau, alpha, theta, &pieces)
}

fn dual_report_at<T: Real>(
    s: &StiefelTuple<T>,
    tau: T,
    alpha: T,
    theta: T,
    pieces: &DualPieces<T>,
) -> Result<DualFeasibilityReport<T>, CriticalityError> {
    let (n, d) = (s.n(), s.d());
    let tol = T::of(DUAL_TOL);
    let (mass, r) = (pieces.mass, pieces.r);
    let two = T::of(2.0);
    let beta = alpha * (T::one() - theta.cos()) / (two * mass * r);
    let delta = match &pieces.normal_dir {
        Some(_) => alpha * theta.sin() / (mass * r.sqrt()),
        None => T::zero(),
    };

    let s_stacked = s.stacked();
    let head = alpha / mass - beta * r;
    let mut x = (&s_stacked * s_stacked.transpose()) * head;
    if let Some(y) = &pieces.normal_dir {
        let mut c = DMatrix::zeros(n * d, s.p());
        for (i, b) in s.blocks().iter().enumerate() {
            let block = apply_p_tau(b, y, tau)?;
            c.view_mut((i * d, 0), (d, s.p())).copy_from(&block);
        }
        let cs = &c * s_stacked.transpose();
        x -= (&cs + cs.transpose()) * (delta * T::of(0.5));
    }
    x += sigma_tau(s, tau).data() * beta;
    let x_perp = BlockSymMatrix::assemble(n, d, x).perp();
    let spectrum = eigs_sym_dense(x_perp.data(), false)?;
    let x_perp_min_eig = spectrum.min();
    let x_perp_trace = x_perp.trace();

    let det = head * beta - delta * delta * T::of(0.25);
    let two_by_two_ok = head >= -tol && beta >= -tol && det >= -tol;
    let feasible = two_by_two_ok && x_perp_min_eig >= -tol && x_perp_trace <= T::one() + tol;
    Ok(DualFeasibilityReport {
        alpha_used: alpha,
        beta,
        delta,
        theta,
        x_perp_min_eig,
        x_perp_trace,
        two_by_two_ok,
        feasible,
    })
}

/// Minimum eigenvalue of `(Sigma_{S,tau})_perp - (L_{S,tau}(Y) L_{S,tau}(Y)^T)_perp`
/// for a unit-Frobenius direction `Y`; nonnegative up to round-off for every
/// input, which is the inequality making the dual certificate PSD.
pub fn key_psd_check<T: Real>(
    s: &StiefelTuple<T>,
    y: &DMatrix<T>,
    tau: T,
) -> Result<T, CriticalityError> {
    let norm = y.norm();
    if (norm - T::one()).abs() > T::of(1e-8) {
        return Err(CriticalityError::NotUnit {
            norm: norm.to_f64_lossy(),
        });
    }
    let (n, d, p) = (s.n(), s.d(), s.p());
    let mut ly = DMatrix::zeros(n * d, p);
    for (i, b) in s.blocks().iter().enumerate() {
        let img = crate::operators::apply_l_tau(b, y, tau)?;
        ly.view_mut((i * d, 0), (d, p)).copy_from(&img);
    }
    let m = sigma_tau(s, tau).data() - &ly * ly.transpose();
    let perp = BlockSymMatrix::assemble(n, d, m).perp();
    let spectrum = eigs_sym_dense(perp.data(), false)?;
    Ok(spectrum.min())
}
