//! Scalar threshold functions for the benign-landscape criterion.
//!
//! The landscape guarantee compares the certificate condition number against
//! `alpha_g(p, d)`, the largest `alpha` such that `r(tau) / alpha >=
//! G(1 - 1/alpha, tau)` for some `tau` in `[0, 1]`. This module evaluates the
//! quadratics `q` and `r`, the auxiliary function `h`, the exact piecewise
//! `G(x, tau)` together with a brute-force grid supremum used as its oracle,
//! the per-`tau` threshold `alpha_g_tau`, the maximized `alpha_g`, the
//! explicit lower bounds `alpha_m` and `alpha_simplified`, and the
//! `2p / (d + 1)` frontier attained by the twisted-state counterexamples.

use thiserror::Error;

use crate::scalar::Real;

/// Slack for piecewise region membership at branch boundaries.
pub const REGION_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ThresholdError {
    #[error("invalid pair (p, d) = ({p}, {d}): requires {requirement}")]
    InvalidPd {
        p: usize,
        d: usize,
        requirement: &'static str,
    },
    #[error("tau = {tau} outside [0, 1]")]
    TauOutOfRange { tau: f64 },
    #[error("x = {x} must be positive")]
    NonPositiveX { x: f64 },
    #[error("simplified bound not applicable: (p, d) = ({p}, {d}) needs p >= {min_p:.4}")]
    NotApplicable { p: usize, d: usize, min_p: f64 },
    #[error("grid spec field {field} = {value} must be at least 2")]
    BadGrid { field: &'static str, value: usize },
}

/// Active branch of the piecewise threshold formula.
///
/// Declaration order is the tie-break order: equal-value candidates resolve
/// to the earlier case.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum PiecewiseCase {
    /// `d = 1`, threshold capped by the linear-in-`x` branch of `G`.
    D1Capped,
    /// `d = 1`, threshold equal to `p`.
    D1P,
    /// `d >= 2`, larger root of the branch-one quadratic.
    Case1Quadratic,
    /// `d >= 2`, closed form of the middle branch.
    Case2Linear,
    /// `d >= 2`, closed form of the constant branch.
    Case3Constant,
    /// No region admits `alpha >= 1`; `alpha` is the best sub-1 diagnostic.
    Infeasible,
}

impl std::fmt::Display for PiecewiseCase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            PiecewiseCase::D1Capped => "d1-capped",
            PiecewiseCase::D1P => "d1-p",
            PiecewiseCase::Case1Quadratic => "case1-quadratic",
            PiecewiseCase::Case2Linear => "case2-linear",
            PiecewiseCase::Case3Constant => "case3-constant",
            PiecewiseCase::Infeasible => "infeasible",
        };
        f.write_str(s)
    }
}

/// A threshold value together with the maximizing `tau` and active branch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThresholdResult<T: Real> {
    pub alpha: T,
    pub tau_star: T,
    pub case: PiecewiseCase,
    pub p: usize,
    pub d: usize,
}

impl<T: Real> ThresholdResult<T> {
    pub fn feasible(&self) -> bool {
        self.case != PiecewiseCase::Infeasible
    }
}

/// Sampling resolution for the `tau` maximization and the `(u, w, v)` grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridSpec {
    pub tau_points: usize,
    pub uvw_points: usize,
    pub refine_iters: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        // 2049 tau samples plus golden-section refinement pins four decimals.
        Self {
            tau_points: 2049,
            uvw_points: 256,
            refine_iters: 60,
        }
    }
}

impl GridSpec {
    pub fn validate(&self) -> Result<(), ThresholdError> {
        for (field, value) in [
            ("tau_points", self.tau_points),
            ("uvw_points", self.uvw_points),
            ("refine_iters", self.refine_iters),
        ] {
            if value < 2 {
                return Err(ThresholdError::BadGrid { field, value });
            }
        }
        Ok(())
    }
}

fn check_tau<T: Real>(tau: T) -> Result<(), ThresholdError> {
    if tau < T::zero() || tau > T::one() {
        return Err(ThresholdError::TauOutOfRange {
            tau: tau.to_f64_lossy(),
        });
    }
    Ok(())
}

fn check_pd(p: usize, d: usize) -> Result<(), ThresholdError> {
    if d == 0 || (d == 1 && p < 2) || (d >= 2 && p < d + 1) {
        return Err(ThresholdError::InvalidPd {
            p,
            d,
            requirement: "p >= 2 for d = 1, p >= d + 1 for d >= 2",
        });
    }
    Ok(())
}

fn q_raw<T: Real>(d: usize, tau: T) -> T {
    let df = T::of_usize(d);
    (df - T::of(2.0)) * tau * tau - T::of(2.0) * (df - T::one()) * tau + df
}

fn r_raw<T: Real>(p: usize, d: usize, tau: T) -> T {
    let two = T::of(2.0);
    two * (T::of_usize(d) - T::one()) * tau * tau + T::of_usize(p) - T::of_usize(d)
}

/// Coefficients of `h(tau) = c1 + c2 * tau^2 / q(tau)`.
fn h_coeffs<T: Real>(p: usize, d: usize) -> (T, T) {
    let (pf, df) = (T::of_usize(p), T::of_usize(d));
    let c1 = if p == d + 1 {
        T::of(2.0) - df / (df + T::one())
    } else {
        pf / (df * (pf - df))
    };
    let c2 = pf * df / (pf * df - T::one());
    (c1, c2)
}

/// `q(tau) * h(tau)`, finite for every `tau` in `[0, 1]` including `tau = 1`.
fn q_times_h<T: Real>(p: usize, d: usize, tau: T) -> T {
    let (c1, c2) = h_coeffs::<T>(p, d);
    c1 * q_raw(d, tau) + c2 * tau * tau
}

/// `q(tau) = (d - 2) tau^2 - 2 (d - 1) tau + d`; nonnegative on `[0, 1]`.
pub fn q_tau<T: Real>(d: usize, tau: T) -> Result<T, ThresholdError> {
    if d == 0 {
        return Err(ThresholdError::InvalidPd {
            p: 0,
            d,
            requirement: "d >= 1",
        });
    }
    check_tau(tau)?;
    Ok(q_raw(d, tau))
}

/// `r(tau) = 2 (d - 1) tau^2 + p - d`.
pub fn r_tau<T: Real>(p: usize, d: usize, tau: T) -> Result<T, ThresholdError> {
    if d == 0 || p < d {
        return Err(ThresholdError::InvalidPd {
            p,
            d,
            requirement: "p >= d >= 1",
        });
    }
    check_tau(tau)?;
    Ok(r_raw(p, d, tau))
}

/// The auxiliary function `h(tau)`; returns infinity where `q(tau) = 0`.
pub fn h_tau<T: Real>(p: usize, d: usize, tau: T) -> Result<T, ThresholdError> {
    if d < 2 || p < d + 1 {
        return Err(ThresholdError::InvalidPd {
            p,
            d,
            requirement: "d >= 2 and p >= d + 1",
        });
    }
    check_tau(tau)?;
    let q = q_raw(d, tau);
    if q <= T::zero() {
        return Ok(T::inf());
    }
    let (c1, c2) = h_coeffs::<T>(p, d);
    Ok(c1 + c2 * tau * tau / q)
}

/// Exact piecewise value of `G(x, tau)`.
pub fn g_exact<T: Real>(p: usize, d: usize, x: T, tau: T) -> Result<T, ThresholdError> {
    check_pd(p, d)?;
    check_tau(tau)?;
    if x <= T::zero() {
        return Err(ThresholdError::NonPositiveX {
            x: x.to_f64_lossy(),
        });
    }
    let two = T::of(2.0);
    if d == 1 {
        let s = T::one() - tau * tau;
        let linear = x * s * s + two * tau * tau;
        let floor = (T::of_usize(p) - T::one()) / T::of_usize(p);
        return Ok(if linear > floor { linear } else { floor });
    }
    let df = T::of_usize(d);
    let q = q_raw(d, tau);
    let dt2 = df * tau * tau;
    let big_q = q + dt2;
    let qh = q_times_h(p, d, tau);
    let h = if q > T::zero() { qh / q } else { T::inf() };
    let xdq = x * df * q;
    // Branch selection compares x d q against max{1, 1/h} and 2 - h; the
    // product form x d qh avoids evaluating 1/h at q = 0.
    if xdq >= T::one() && x * df * qh >= T::one() {
        Ok(two * big_q - T::one() / (x * df))
    } else if two - h <= xdq && xdq <= T::one() {
        Ok(xdq * q + two * dt2)
    } else {
        Ok(two * big_q - qh)
    }
}

/// Node set for one axis of the `(u, w, v)` grid: quadratically graded so
/// that resolution concentrates near zero, where the supremum is approached
/// along `u = w = v -> 0` rays whose value varies linearly in `v`.
pub fn simplex_nodes<T: Real>(points: usize) -> Vec<T> {
    (0..points)
        .map(|k| {
            let f = T::of_usize(k) / T::of_usize(points - 1);
            f * f
        })
        .collect()
}

/// Grid supremum of the bracketed expression defining `G(x, tau)` over the
/// discretized ordered simplex `0 <= u <= w <= v <= 1`, with `(1 - dv)_+`
/// handled exactly.
///
/// For fixed `v` the objective splits into a `u`-part and a `w`-part, so the
/// constrained maximum is found with a running prefix maximum over `u`; this
/// is exactly the maximum over all grid triples (validated against the naive
/// triple loop in the tests).
pub fn g_grid_sup<T: Real>(
    p: usize,
    d: usize,
    x: T,
    tau: T,
    grid: &GridSpec,
) -> Result<T, ThresholdError> {
    check_pd(p, d)?;
    check_tau(tau)?;
    if x <= T::zero() {
        return Err(ThresholdError::NonPositiveX {
            x: x.to_f64_lossy(),
        });
    }
    grid.validate()?;
    let (pf, df) = (T::of_usize(p), T::of_usize(d));
    let two = T::of(2.0);
    let q = q_raw(d, tau);
    let dt2 = df * tau * tau;
    let u_curve = pf / (pf - df);
    let w_curve = pf * df / (pf * df - T::one());
    let nodes = simplex_nodes::<T>(grid.uvw_points);
    // The v = 0 corner forces u = w = 0 where the expression vanishes.
    let mut best = T::zero();
    for j in 1..nodes.len() {
        let v = nodes[j];
        let slack = T::one() - df * v;
        let penalty = if slack > T::zero() {
            slack / (x * df * v * v)
        } else {
            T::zero()
        };
        let mut f_prefix = T::zero(); // attained at u = 0
        for (k, &w) in nodes.iter().enumerate().take(j + 1) {
            if k > 0 {
                let u = w;
                let f = q * (u / v) * (two - u_curve * u) - penalty * u * u;
                if f > f_prefix {
                    f_prefix = f;
                }
            }
            let h_term = dt2 * (w / v) * (two - w_curve * w);
            let value = f_prefix + h_term;
            if value > best {
                best = value;
            }
        }
    }
    Ok(best)
}

struct Candidate<T: Real> {
    alpha: T,
    case: PiecewiseCase,
}

/// The largest `alpha` with `r(tau) / alpha >= G(1 - 1/alpha, tau)` at a
/// fixed `tau`, found by solving each branch of the piecewise formula and
/// keeping the region-feasible candidates.
pub fn alpha_g_tau<T: Real>(p: usize, d: usize, tau: T) -> Result<ThresholdResult<T>, ThresholdError> {
    check_pd(p, d)?;
    check_tau(tau)?;
    let tol = T::of(REGION_TOL);
    let one = T::one();
    let two = T::of(2.0);
    let result = |alpha: T, case: PiecewiseCase| ThresholdResult {
        alpha,
        tau_star: tau,
        case,
        p,
        d,
    };

    if d == 1 {
        let pf = T::of_usize(p);
        let s = one - tau * tau;
        let s2 = s * s;
        let floor = (pf - one) / pf;
        let mut feasible: Vec<Candidate<T>> = Vec::new();
        // (p - 1 + (1-t^2)^2) / (2 t^2 + (1-t^2)^2) rewritten through the
        // exact identity 2 t^2 + (1-t^2)^2 = 1 + t^4, so that the computed
        // quotient never rounds above p.
        let t2 = tau * tau;
        let t4 = t2 * t2;
        let capped = (pf - two * t2 + t4) / (one + t4);
        if (one - one / capped) * s2 + two * tau * tau >= floor - tol {
            feasible.push(Candidate {
                alpha: capped,
                case: PiecewiseCase::D1Capped,
            });
        }
        if (one - one / pf) * s2 + two * tau * tau <= floor + tol {
            feasible.push(Candidate {
                alpha: pf,
                case: PiecewiseCase::D1P,
            });
        }
        return Ok(match pick_best(feasible) {
            Some(c) => result(c.alpha, c.case),
            // The two regions cover [0, 1]; reaching this means a rounding
            // freak at the boundary, so report the capped value.
            None => result(capped, PiecewiseCase::Infeasible),
        });
    }

    let df = T::of_usize(d);
    let q = q_raw(d, tau);
    let r = r_raw(p, d, tau);
    let dt2 = df * tau * tau;
    let big_q = q + dt2;
    if q <= T::zero() {
        // tau = 1 limit: G(x, 1) = 2d for every x > 0 and the explicit
        // branch value is r(1) / (2d) = (p + d - 2) / (2d); below one it is
        // only a diagnostic.
        let at_one = r / (two * df);
        let case = if at_one >= one {
            PiecewiseCase::Case2Linear
        } else {
            PiecewiseCase::Infeasible
        };
        return Ok(result(at_one, case));
    }
    let qh = q_times_h(p, d, tau);
    let h = qh / q;
    let mut feasible: Vec<Candidate<T>> = Vec::new();

    // Branch one: (2(q + d tau^2) - 1/d) a^2 - (2(q + d tau^2) + r) a + r <= 0,
    // take the larger root and check x d q >= max{1, 1/h} at x = 1 - 1/a.
    let a_coef = two * big_q - one / df;
    let b_coef = two * big_q + r;
    let disc = b_coef * b_coef - T::of(4.0) * a_coef * r;
    let sqrt_disc = if disc > T::zero() { disc.sqrt() } else { T::zero() };
    let root_hi = (b_coef + sqrt_disc) / (two * a_coef);
    let root_lo = (b_coef - sqrt_disc) / (two * a_coef);
    if root_hi >= one {
        let x = one - one / root_hi;
        if x * df * q >= one - tol && x * df * qh >= one - tol {
            feasible.push(Candidate {
                alpha: root_hi,
                case: PiecewiseCase::Case1Quadratic,
            });
        }
    }

    // Branch two: a = (d q^2 + r) / (d q^2 + 2 d tau^2) on 2 - h <= x d q <= 1.
    let den2 = df * q * q + two * dt2;
    let alpha2 = (df * q * q + r) / den2;
    if alpha2 >= one {
        let xdq = (one - one / alpha2) * df * q;
        if xdq <= one + tol && xdq >= two - h - tol {
            feasible.push(Candidate {
                alpha: alpha2,
                case: PiecewiseCase::Case2Linear,
            });
        }
    }

    // Branch three: a = r / (2(q + d tau^2) - q h) on x d q <= 2 - h.
    let den3 = two * big_q - qh;
    if den3 > T::zero() {
        let alpha3 = r / den3;
        if alpha3 >= one {
            let xdq = (one - one / alpha3) * df * q;
            if xdq <= two - h + tol {
                feasible.push(Candidate {
                    alpha: alpha3,
                    case: PiecewiseCase::Case3Constant,
                });
            }
        }
    }

    Ok(match pick_best(feasible) {
        Some(c) => result(c.alpha, c.case),
        // No region admits alpha >= 1. For x < 0 the supremum defining G
        // collapses to the branch-one form, so the best sub-1 alpha is the
        // smaller quadratic root; report it as a diagnostic.
        None => result(root_lo, PiecewiseCase::Infeasible),
    })
}

fn pick_best<T: Real>(candidates: Vec<Candidate<T>>) -> Option<Candidate<T>> {
    candidates.into_iter().fold(None, |best, c| match best {
        None => Some(c),
        Some(b) => {
            if c.alpha > b.alpha {
                Some(c)
            } else {
                Some(b)
            }
        }
    })
}

/// `alpha_g(p, d)`: maximizes [`alpha_g_tau`] over `tau` on a uniform grid
/// followed by golden-section refinement around the best bracket.
pub fn alpha_g<T: Real>(p: usize, d: usize, grid: &GridSpec) -> Result<ThresholdResult<T>, ThresholdError> {
    check_pd(p, d)?;
    grid.validate()?;
    let m = grid.tau_points;
    let step = T::one() / T::of_usize(m - 1);
    let mut best: Option<ThresholdResult<T>> = None;
    let mut best_idx = 0usize;
    for k in 0..m {
        let tau = if k + 1 == m { T::one() } else { T::of_usize(k) * step };
        let res = alpha_g_tau(p, d, tau)?;
        if better(&res, &best) {
            best = Some(res);
            best_idx = k;
        }
    }
    let mut best = best.expect("tau grid is nonempty");
    // Refine inside the bracket around the best grid node.
    let lo = if best_idx == 0 { T::zero() } else { T::of_usize(best_idx - 1) * step };
    let hi = if best_idx + 1 >= m {
        T::one()
    } else {
        T::of_usize(best_idx + 1) * step
    };
    let inv_phi = T::of(0.618_033_988_749_894_9);
    let (mut a, mut b) = (lo, hi);
    let mut c = b - (b - a) * inv_phi;
    let mut e = a + (b - a) * inv_phi;
    let mut fc = alpha_g_tau(p, d, c)?;
    let mut fe = alpha_g_tau(p, d, e)?;
    for _ in 0..grid.refine_iters {
        if score(&fc) >= score(&fe) {
            b = e;
            e = c;
            fe = fc;
            c = b - (b - a) * inv_phi;
            fc = alpha_g_tau(p, d, c)?;
        } else {
            a = c;
            c = e;
            fc = fe;
            e = a + (b - a) * inv_phi;
            fe = alpha_g_tau(p, d, e)?;
        }
        for candidate in [&fc, &fe] {
            if better(candidate, &Some(best)) {
                best = *candidate;
            }
        }
    }
    Ok(best)
}

/// Feasible results dominate infeasible diagnostics; within the same class
/// the larger alpha wins (strictly, so earlier tau values are kept on ties).
fn better<T: Real>(candidate: &ThresholdResult<T>, best: &Option<ThresholdResult<T>>) -> bool {
    match best {
        None => true,
        Some(b) => match (candidate.feasible(), b.feasible()) {
            (true, false) => true,
            (false, true) => false,
            _ => candidate.alpha > b.alpha,
        },
    }
}

fn score<T: Real>(r: &ThresholdResult<T>) -> T {
    if r.feasible() {
        r.alpha
    } else {
        r.alpha - T::of(1e6)
    }
}

/// Closed-form lower bound `alpha_m(p, d) = tau_* / (2 tau_* - 1)` obtained
/// from the uniform upper bound `2 (q + d tau^2)` on `G`.
pub fn alpha_m<T: Real>(p: usize, d: usize) -> Result<ThresholdResult<T>, ThresholdError> {
    if d < 2 || p < d + 2 {
        return Err(ThresholdError::InvalidPd {
            p,
            d,
            requirement: "d >= 2 and p >= d + 2",
        });
    }
    let (pf, df) = (T::of_usize(p), T::of_usize(d));
    let one = T::one();
    let two = T::of(2.0);
    let m = (two * df - pf) / (df - one);
    let tau_star = (m + (m * m + two * (pf - df) / (df - one)).sqrt()) / two;
    // The maximizer lies in (1/2, 1]; clamp the sqrt round-off at the top.
    let tau_star = if tau_star > one { one } else { tau_star };
    debug_assert!(tau_star > T::of(0.5));
    let alpha = tau_star / (two * tau_star - one);
    Ok(ThresholdResult {
        alpha,
        tau_star,
        case: PiecewiseCase::Case3Constant,
        p,
        d,
    })
}

/// Threshold below which [`alpha_simplified`] is not applicable.
pub fn simplified_min_p(d: usize) -> f64 {
    let df = d as f64;
    (1.0 + 2.0 * df.sqrt() / (df - 1.0)) * df + 2.0
}

/// Simplified lower bound valid for `p >= (1 + 2 sqrt(d) / (d - 1)) d + 2`:
/// the larger root of `tau^2 - (4d - 2p - 3/d) tau / (2(d-1)) -
/// (p - d + 1/d) / (2(d-1)) = 0` fed through `tau / (2 tau - 1)`.
pub fn alpha_simplified<T: Real>(p: usize, d: usize) -> Result<ThresholdResult<T>, ThresholdError> {
    if d < 2 {
        return Err(ThresholdError::InvalidPd {
            p,
            d,
            requirement: "d >= 2",
        });
    }
    let min_p = simplified_min_p(d);
    if (p as f64) < min_p {
        return Err(ThresholdError::NotApplicable { p, d, min_p });
    }
    let (pf, df) = (T::of_usize(p), T::of_usize(d));
    let one = T::one();
    let two = T::of(2.0);
    let lin = (T::of(4.0) * df - two * pf - T::of(3.0) / df) / (two * (df - one));
    let con = (pf - df + one / df) / (two * (df - one));
    let tau_star = (lin + (lin * lin + T::of(4.0) * con).sqrt()) / two;
    let alpha = tau_star / (two * tau_star - one);
    Ok(ThresholdResult {
        alpha,
        tau_star,
        case: PiecewiseCase::Case1Quadratic,
        p,
        d,
    })
}

/// The optimality frontier `2p / (d + 1)`: configurations orthogonal to the
/// consensus direction cannot be second-order critical below it, and the
/// twisted states attain it.
pub fn counterexample_threshold<T: Real>(p: usize, d: usize) -> T {
    debug_assert!(d >= 1 && p >= d);
    T::of_usize(2 * p) / T::of_usize(d + 1)
}
