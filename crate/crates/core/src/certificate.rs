//! Certificate construction, verification, and the landscape verdict.
//!
//! Given data `A` and a candidate tuple `Z` (square orthogonal blocks), the
//! certificate is `L = BDG(A Z Z^T) - A` after conjugating the problem so
//! that the candidate becomes the all-identity tuple. `L >= 0` together with
//! `L Z = 0` certifies that `Z Z^T` solves the semidefinite relaxation, and
//! the spectral ratio `lambda_max(L) / lambda_{d+1}(L)` against
//! `alpha_g(p, d)` decides whether the rank-`p` factorized landscape is free
//! of spurious second-order critical points.

use thiserror::Error;

use crate::blockmat::{bdg, eigs_sym, identity_stack, BlockMatError, BlockSymMatrix};
use crate::operators::{OperatorError, StiefelTuple};
use crate::scalar::Real;
use crate::thresholds::{alpha_g, GridSpec, ThresholdError, ThresholdResult};

/// Default relative tolerance for the KKT residual checks.
pub const DEFAULT_CERT_TOL: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CertificateError {
    #[error("candidate tuple must have square blocks (p = d), got d={d}, p={p}")]
    NotSquare { d: usize, p: usize },
    #[error("instance has {instance_n} nodes of size {instance_d}, candidate has {tuple_n} of size {tuple_d}")]
    ShapeMismatch {
        instance_n: usize,
        instance_d: usize,
        tuple_n: usize,
        tuple_d: usize,
    },
    #[error("certificate failed verification ({reason}); no landscape verdict")]
    NotVerified { reason: &'static str },
    #[error(transparent)]
    BlockMat(#[from] BlockMatError),
    #[error(transparent)]
    Operator(#[from] OperatorError),
    #[error(transparent)]
    Threshold(#[from] ThresholdError),
}

/// Spectral summary of a certificate and the KKT flags.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CertificateReport<T: Real> {
    /// `|L Z|_F / (1 + |L|_F)` with `Z` the normalized candidate.
    pub lz_residual: T,
    pub min_eig: T,
    pub lambda_d_plus_1: T,
    pub lambda_max: T,
    /// `lambda_max / lambda_{d+1}`; infinite when `unique_ok` fails.
    pub cond: T,
    pub kkt_ok: bool,
    /// `lambda_{d+1}` clears the tolerance, so the minimizer is unique.
    pub unique_ok: bool,
}

/// Landscape verdict: certificate condition number against the threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct Verdict<T: Real> {
    pub cond: T,
    pub alpha: ThresholdResult<T>,
    pub benign: bool,
    /// `alpha - cond`; positive exactly when benign.
    pub margin: T,
}

/// Builds the certificate `L = BDG(A Z Z^T) - A` with the candidate
/// normalized to the all-identity tuple first (conjugation by
/// `blkdiag(Z_1, ..., Z_n)`), so downstream code can always use the
/// canonical consensus direction.
pub fn build_certificate<T: Real>(
    a: &BlockSymMatrix<T>,
    z: &StiefelTuple<T>,
) -> Result<BlockSymMatrix<T>, CertificateError> {
    if z.d() != z.p() {
        return Err(CertificateError::NotSquare { d: z.d(), p: z.p() });
    }
    let (n, d) = (a.n(), a.d());
    if z.n() != n || z.d() != d {
        return Err(CertificateError::ShapeMismatch {
            instance_n: n,
            instance_d: d,
            tuple_n: z.n(),
            tuple_d: z.d(),
        });
    }
    // Conjugated data: block (i, j) becomes Z_i^T A_ij Z_j.
    let mut conj = a.data().clone();
    for i in 0..n {
        for j in 0..n {
            let block = z.block(i).transpose() * a.block(i, j) * z.block(j);
            conj.view_mut((i * d, j * d), (d, d)).copy_from(&block);
        }
    }
    let zz = BlockSymMatrix::<T>::consensus_gram(n, d);
    let lambda_hat = bdg(n, d, &(&conj * zz.data()))?;
    Ok(BlockSymMatrix::assemble(n, d, lambda_hat.data() - conj))
}

/// Verifies the KKT conditions of a certificate: kernel residual, positive
/// semidefiniteness, and uniqueness gap. `lambda_{d+1}` is read positionally
/// (index `d` of the ascending spectrum) after checking that the bottom `d`
/// eigenvalues sit inside the kernel tolerance, which guards the count when
/// noise perturbs the kernel.
pub fn verify_certificate<T: Real>(
    l: &BlockSymMatrix<T>,
    d: usize,
    tol: T,
) -> Result<CertificateReport<T>, CertificateError> {
    let n = l.n();
    debug_assert_eq!(d, l.d());
    let z = identity_stack::<T>(n, d);
    let lz_residual = (l.data() * z).norm() / (T::one() + l.frobenius_norm());
    let spectrum = eigs_sym(l, false)?;
    let scale = T::one() + spectrum.spectral_radius();
    let min_eig = spectrum.min();
    let lambda_max = spectrum.max();
    let lambda_d_plus_1 = spectrum.eigenvalues[d];
    let kernel_ok = spectrum.eigenvalues[d - 1] <= tol * scale;
    let kkt_ok = lz_residual <= tol && min_eig >= -tol * scale && kernel_ok;
    let unique_ok = lambda_d_plus_1 > tol * scale;
    let cond = if unique_ok {
        lambda_max / lambda_d_plus_1
    } else {
        T::inf()
    };
    Ok(CertificateReport {
        lz_residual,
        min_eig,
        lambda_d_plus_1,
        lambda_max,
        cond,
        kkt_ok,
        unique_ok,
    })
}

/// Landscape verdict at rank `p`: benign iff `cond < alpha_g(p, d)` strictly.
/// Refuses if the certificate does not pass verification.
pub fn landscape_verdict<T: Real>(
    l: &BlockSymMatrix<T>,
    p: usize,
    d: usize,
    grid: &GridSpec,
) -> Result<(CertificateReport<T>, Verdict<T>), CertificateError> {
    let report = verify_certificate(l, d, T::of(DEFAULT_CERT_TOL))?;
    if !report.kkt_ok {
        return Err(CertificateError::NotVerified {
            reason: "KKT residual or PSD check failed",
        });
    }
    if !report.unique_ok {
        return Err(CertificateError::NotVerified {
            reason: "spectral gap at lambda_{d+1} is not positive",
        });
    }
    let alpha = alpha_g::<T>(p, d, grid)?;
    let benign = alpha.feasible() && report.cond < alpha.alpha;
    Ok((
        report,
        Verdict {
            cond: report.cond,
            alpha,
            benign,
            margin: alpha.alpha - report.cond,
        },
    ))
}
