//! The tangent-operator family and its covariance.
//!
//! At a node block `S_i` with orthonormal rows, the operator
//! `L_{S_i,tau}(Y) = (1 - tau) Y S_i^T S_i + tau S_i Y^T S_i` splits a matrix
//! into a "radial" part and the tangent remainder `P_{S_i,tau}(Y) = Y -
//! L_{S_i,tau}(Y)`; `tau = 1/2` recovers orthogonal projection onto the
//! tangent space. Feeding a standard Gaussian matrix through the stacked
//! operator yields the covariance `Sigma_{S,tau}` whose blocks have a closed
//! form, cross-checked here by seeded Monte Carlo.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::blockmat::{group_eigenvalues, BlockMatError, BlockSymMatrix};
use crate::scalar::Real;

/// Row-orthonormality tolerance for Stiefel blocks.
pub const ORTHONORMALITY_TOL: f64 = 1e-10;

/// Tangency tolerance for tangent tuples.
pub const TANGENCY_TOL: f64 = 1e-10;

const MC_CHUNK: usize = 4096;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OperatorError {
    #[error("expected a {expected_rows}x{expected_cols} block, got {actual_rows}x{actual_cols}")]
    ShapeMismatch {
        expected_rows: usize,
        expected_cols: usize,
        actual_rows: usize,
        actual_cols: usize,
    },
    #[error("node {node}: rows are not orthonormal (deviation {deviation:.3e})")]
    NotOrthonormal { node: usize, deviation: f64 },
    #[error("node {node}: block is not tangent (deviation {deviation:.3e})")]
    NotTangent { node: usize, deviation: f64 },
    #[error("tuple must contain at least one block")]
    Empty,
    #[error(transparent)]
    BlockMat(#[from] BlockMatError),
}

/// A point of the product Stiefel manifold: `n` blocks of size `d x p`,
/// each with orthonormal rows.
#[derive(Debug, Clone, PartialEq)]
pub struct StiefelTuple<T: Real> {
    n: usize,
    d: usize,
    p: usize,
    blocks: Vec<DMatrix<T>>,
}

impl<T: Real> StiefelTuple<T> {
    pub fn new(blocks: Vec<DMatrix<T>>) -> Result<Self, OperatorError> {
        let first = blocks.first().ok_or(OperatorError::Empty)?;
        let (d, p) = (first.nrows(), first.ncols());
        if d > p || d == 0 {
            return Err(OperatorError::ShapeMismatch {
                expected_rows: d.min(p),
                expected_cols: p,
                actual_rows: d,
                actual_cols: p,
            });
        }
        // 1e-10 at double precision; scales up for coarser scalars.
        let tol = T::of(ORTHONORMALITY_TOL).max(T::default_epsilon() * T::of(1e3));
        for (node, b) in blocks.iter().enumerate() {
            if b.nrows() != d || b.ncols() != p {
                return Err(OperatorError::ShapeMismatch {
                    expected_rows: d,
                    expected_cols: p,
                    actual_rows: b.nrows(),
                    actual_cols: b.ncols(),
                });
            }
            let dev = (b * b.transpose() - DMatrix::identity(d, d)).norm();
            if dev > tol {
                return Err(OperatorError::NotOrthonormal {
                    node,
                    deviation: dev.to_f64_lossy(),
                });
            }
        }
        Ok(Self {
            n: blocks.len(),
            d,
            p,
            blocks,
        })
    }

    /// The canonical consensus tuple: `n` copies of `I_d` (so `p = d`).
    pub fn consensus(n: usize, d: usize) -> Self {
        Self {
            n,
            d,
            p: d,
            blocks: vec![DMatrix::identity(d, d); n],
        }
    }

    /// Pads each `d x d` block to `d x p` with zero columns.
    pub fn pad_to(&self, p: usize) -> Self {
        assert!(p >= self.p);
        let blocks = self
            .blocks
            .iter()
            .map(|b| {
                let mut out = DMatrix::zeros(self.d, p);
                out.view_mut((0, 0), (self.d, self.p)).copy_from(b);
                out
            })
            .collect();
        Self {
            n: self.n,
            d: self.d,
            p,
            blocks,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn block(&self, i: usize) -> &DMatrix<T> {
        &self.blocks[i]
    }

    pub fn blocks(&self) -> &[DMatrix<T>] {
        &self.blocks
    }

    /// The `nd x p` matrix stacking all node blocks.
    pub fn stacked(&self) -> DMatrix<T> {
        let mut s = DMatrix::zeros(self.n * self.d, self.p);
        for (i, b) in self.blocks.iter().enumerate() {
            s.view_mut((i * self.d, 0), (self.d, self.p)).copy_from(b);
        }
        s
    }

    /// The Gram matrix `S S^T` as a block matrix.
    pub fn gram(&self) -> BlockSymMatrix<T> {
        let s = self.stacked();
        BlockSymMatrix::assemble(self.n, self.d, &s * s.transpose())
    }

    /// `Z^T S = sum_i S_i`, the alignment of the tuple with the consensus
    /// direction (a `d x p` matrix).
    pub fn consensus_alignment(&self) -> DMatrix<T> {
        let mut acc = DMatrix::zeros(self.d, self.p);
        for b in &self.blocks {
            acc += b;
        }
        acc
    }
}

/// A tangent direction at a [`StiefelTuple`]: blocks satisfy
/// `T_i S_i^T + S_i T_i^T = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentTuple<T: Real> {
    blocks: Vec<DMatrix<T>>,
}

impl<T: Real> TangentTuple<T> {
    pub fn new(base: &StiefelTuple<T>, blocks: Vec<DMatrix<T>>) -> Result<Self, OperatorError> {
        if blocks.len() != base.n() {
            return Err(OperatorError::ShapeMismatch {
                expected_rows: base.n(),
                expected_cols: 0,
                actual_rows: blocks.len(),
                actual_cols: 0,
            });
        }
        let tol = T::of(TANGENCY_TOL).max(T::default_epsilon() * T::of(1e3));
        for (node, (t, s)) in blocks.iter().zip(base.blocks()).enumerate() {
            if t.nrows() != base.d() || t.ncols() != base.p() {
                return Err(OperatorError::ShapeMismatch {
                    expected_rows: base.d(),
                    expected_cols: base.p(),
                    actual_rows: t.nrows(),
                    actual_cols: t.ncols(),
                });
            }
            let dev = (t * s.transpose() + s * t.transpose()).norm();
            // Scale-free check: tangency degrades linearly with |T|.
            if dev > tol * (T::one() + t.norm()) {
                return Err(OperatorError::NotTangent {
                    node,
                    deviation: dev.to_f64_lossy(),
                });
            }
        }
        Ok(Self { blocks })
    }

    pub(crate) fn from_blocks_unchecked(blocks: Vec<DMatrix<T>>) -> Self {
        Self { blocks }
    }

    pub fn block(&self, i: usize) -> &DMatrix<T> {
        &self.blocks[i]
    }

    pub fn blocks(&self) -> &[DMatrix<T>] {
        &self.blocks
    }

    pub fn stacked(&self) -> DMatrix<T> {
        let n = self.blocks.len();
        let (d, p) = (self.blocks[0].nrows(), self.blocks[0].ncols());
        let mut s = DMatrix::zeros(n * d, p);
        for (i, b) in self.blocks.iter().enumerate() {
            s.view_mut((i * d, 0), (d, p)).copy_from(b);
        }
        s
    }

    pub fn norm(&self) -> T {
        self.blocks.iter().map(|b| b.norm_squared()).sum::<T>().sqrt()
    }

    pub fn scale(&self, factor: T) -> Self {
        Self {
            blocks: self.blocks.iter().map(|b| b * factor).collect(),
        }
    }
}

/// Applies `L_{S_i,tau}(Y) = (1 - tau) Y S_i^T S_i + tau S_i Y^T S_i`.
pub fn apply_l_tau<T: Real>(
    s_i: &DMatrix<T>,
    y: &DMatrix<T>,
    tau: T,
) -> Result<DMatrix<T>, OperatorError> {
    if y.nrows() != s_i.nrows() || y.ncols() != s_i.ncols() {
        return Err(OperatorError::ShapeMismatch {
            expected_rows: s_i.nrows(),
            expected_cols: s_i.ncols(),
            actual_rows: y.nrows(),
            actual_cols: y.ncols(),
        });
    }
    Ok(apply_l_tau_unchecked(s_i, y, tau))
}

fn apply_l_tau_unchecked<T: Real>(s_i: &DMatrix<T>, y: &DMatrix<T>, tau: T) -> DMatrix<T> {
    let y_st = y * s_i.transpose(); // Y S^T, d x d
    let s_yt = s_i * y.transpose(); // S Y^T, d x d
    (y_st * s_i) * (T::one() - tau) + (s_yt * s_i) * tau
}

/// Applies the tangent part `P_{S_i,tau}(Y) = Y - L_{S_i,tau}(Y)`; the result
/// satisfies the tangency identity at `S_i` up to round-off.
pub fn apply_p_tau<T: Real>(
    s_i: &DMatrix<T>,
    y: &DMatrix<T>,
    tau: T,
) -> Result<DMatrix<T>, OperatorError> {
    Ok(y - apply_l_tau(s_i, y, tau)?)
}

pub(crate) fn apply_p_tau_unchecked<T: Real>(s_i: &DMatrix<T>, y: &DMatrix<T>, tau: T) -> DMatrix<T> {
    y - apply_l_tau_unchecked(s_i, y, tau)
}

/// Eigenvalues of `L_{S_i,tau}` as `(value, multiplicity)` pairs, ascending.
///
/// Builds the `dp x dp` matrix of the map in the canonical basis,
/// eigendecomposes it, and groups coincident values: the exact spectrum is
/// `1` with multiplicity `d(d+1)/2`, `1 - 2 tau` with `d(d-1)/2`, and `0`
/// with `d(p-d)`, coalescing when the values collide (`tau = 0` or `1/2`).
pub fn operator_spectrum<T: Real>(s_i: &DMatrix<T>, tau: T) -> Result<Vec<(T, usize)>, OperatorError> {
    let (d, p) = (s_i.nrows(), s_i.ncols());
    let dim = d * p;
    let mut mat = DMatrix::zeros(dim, dim);
    for col in 0..dim {
        let (r, c) = (col / p, col % p);
        let mut basis = DMatrix::zeros(d, p);
        basis[(r, c)] = T::one();
        let image = apply_l_tau_unchecked(s_i, &basis, tau);
        for rr in 0..d {
            for cc in 0..p {
                mat[(rr * p + cc, col)] = image[(rr, cc)];
            }
        }
    }
    // Self-adjoint in the Frobenius inner product, so the basis matrix is
    // symmetric up to round-off; symmetrize before decomposing.
    let sym = (&mat + mat.transpose()) * T::of(0.5);
    let spectrum = crate::blockmat::eigs_sym_dense(&sym, false)?;
    Ok(group_eigenvalues(
        &spectrum.eigenvalues,
        T::of(crate::blockmat::EIGEN_GROUP_GAP),
    ))
}

/// Exact covariance `Sigma_{S,tau}` of the stacked operator applied to a
/// standard Gaussian matrix. Block `(i, j)` is
/// `(1-tau)^2 |S_i S_j^T|_F^2 I_d + (1-tau) tau (S_i S_j^T S_j S_i^T +
/// S_j S_i^T S_i S_j^T) + tau^2 <S_i, S_j> S_i S_j^T`.
pub fn sigma_tau<T: Real>(s: &StiefelTuple<T>, tau: T) -> BlockSymMatrix<T> {
    let (n, d) = (s.n(), s.d());
    let one_m = T::one() - tau;
    let mut data = DMatrix::zeros(n * d, n * d);
    for i in 0..n {
        for j in i..n {
            let sij = s.block(i) * s.block(j).transpose(); // d x d
            let cross = sij.norm_squared();
            let inner = sij.trace();
            let sym_part = &sij * sij.transpose() + sij.transpose() * &sij;
            let block = DMatrix::identity(d, d) * (one_m * one_m * cross)
                + sym_part * (one_m * tau)
                + &sij * (tau * tau * inner);
            data.view_mut((i * d, j * d), (d, d)).copy_from(&block);
            if j > i {
                data.view_mut((j * d, i * d), (d, d))
                    .copy_from(&block.transpose());
            }
        }
    }
    BlockSymMatrix::assemble(n, d, data)
}

/// Which stacked operator the Monte Carlo estimator averages.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CovKind {
    /// `E[L(Phi) L(Phi)^T]`, the exact `Sigma_{S,tau}`.
    LCov,
    /// `E[P(Phi) P(Phi)^T] = (2(d-1)tau + p - 2d) Z Z^T + Sigma_{S,tau}`.
    PCov,
}

/// Seeded Monte Carlo estimate of the operator covariance.
///
/// Trials are split into fixed-size chunks; each chunk draws from its own
/// ChaCha substream (`set_stream(chunk index)`) and partial sums are reduced
/// in chunk order, so the result is bit-identical for a given seed no matter
/// how many workers participate.
pub fn monte_carlo_cov<T: Real>(
    s: &StiefelTuple<T>,
    tau: T,
    which: CovKind,
    trials: usize,
    seed: u64,
) -> BlockSymMatrix<T> {
    assert!(trials >= 1);
    let (n, d, p) = (s.n(), s.d(), s.p());
    let chunks: Vec<(u64, usize)> = (0..trials.div_ceil(MC_CHUNK))
        .map(|c| (c as u64, MC_CHUNK.min(trials - c * MC_CHUNK)))
        .collect();
    let partials: Vec<DMatrix<T>> = chunks
        .par_iter()
        .map(|&(stream, count)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(stream);
            let mut acc = DMatrix::zeros(n * d, n * d);
            let mut stacked = DMatrix::zeros(n * d, p);
            for _ in 0..count {
                let phi = DMatrix::from_fn(d, p, |_, _| T::standard_normal(&mut rng));
                for i in 0..n {
                    let img = match which {
                        CovKind::LCov => apply_l_tau_unchecked(s.block(i), &phi, tau),
                        CovKind::PCov => apply_p_tau_unchecked(s.block(i), &phi, tau),
                    };
                    stacked.view_mut((i * d, 0), (d, p)).copy_from(&img);
                }
                acc += &stacked * stacked.transpose();
            }
            acc
        })
        .collect();
    let mut total = DMatrix::zeros(n * d, n * d);
    for part in partials {
        total += part;
    }
    total /= T::of_usize(trials);
    // The estimator is an average of symmetric outer products.
    BlockSymMatrix::assemble(n, d, total)
}

/// Orthonormal polar factor of a `d x p` matrix (`d <= p`): the `U V^T` of a
/// thin SVD, i.e. the closest point of the Stiefel manifold. For
/// rank-deficient input the decomposition's deterministic basis completion
/// resolves the tie; an all-zero input maps to the padded identity.
pub fn polar_factor<T: Real>(m: &DMatrix<T>) -> DMatrix<T> {
    let (d, p) = (m.nrows(), m.ncols());
    assert!(d <= p, "polar factor needs d <= p");
    let scale = m.norm();
    if scale == T::zero() {
        let mut out = DMatrix::zeros(d, p);
        for k in 0..d {
            out[(k, k)] = T::one();
        }
        return out;
    }
    let svd = (m / scale)
        .svd_unordered(true, true);
    let u = svd.u.expect("svd with u");
    let v_t = svd.v_t.expect("svd with v_t");
    // Guard degenerate directions: rows of v_t attached to zero singular
    // values are already an orthonormal completion, so u v_t is orthonormal.
    u * v_t
}
