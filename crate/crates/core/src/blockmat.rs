//! Symmetric matrices with `d x d` block structure.
//!
//! An `n`-node synchronization problem works with `nd x nd` symmetric
//! matrices partitioned into `d x d` blocks: the data matrix, the certificate,
//! and the tangent-operator covariance all live here. This module provides
//! the storage type, the block-diagonal symmetrization operator, the partial
//! trace, the consensus-complement projector `P_perp = I - Z Z^T / n`, and a
//! dense symmetric eigensolver facade.

use nalgebra::DMatrix;
use thiserror::Error;

use crate::scalar::Real;

/// Relative tolerance for accepting a matrix as symmetric.
pub const SYMMETRY_TOL: f64 = 1e-12;

/// Relative gap under which adjacent eigenvalues are treated as one cluster.
pub const EIGEN_GROUP_GAP: f64 = 1e-8;

const EIGEN_MAX_ITER: usize = 50_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BlockMatError {
    #[error("expected a {expected_rows}x{expected_cols} matrix, got {actual_rows}x{actual_cols}")]
    DimensionMismatch {
        expected_rows: usize,
        expected_cols: usize,
        actual_rows: usize,
        actual_cols: usize,
    },
    #[error("block counts must satisfy n >= 1 and d >= 1, got n={n}, d={d}")]
    EmptyShape { n: usize, d: usize },
    #[error("matrix is not symmetric: max deviation {deviation:.3e} exceeds tolerance {tolerance:.3e}")]
    NotSymmetric { deviation: f64, tolerance: f64 },
    #[error("symmetric eigensolver failed to converge within {iterations} iterations")]
    EigenFailed { iterations: usize },
}

/// Dense symmetric `nd x nd` matrix with `d x d` block structure.
///
/// Construction symmetrizes the input exactly (`(M + M^T)/2`) and records
/// whether that changed anything; inputs whose asymmetry exceeds
/// [`SYMMETRY_TOL`] relative to the largest entry are rejected.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockSymMatrix<T: Real> {
    n: usize,
    d: usize,
    data: DMatrix<T>,
    symmetrized: bool,
}

impl<T: Real> BlockSymMatrix<T> {
    pub fn new(n: usize, d: usize, data: DMatrix<T>) -> Result<Self, BlockMatError> {
        check_shape(n, d, &data)?;
        let mut max_abs = T::zero();
        let mut max_dev = T::zero();
        for i in 0..data.nrows() {
            for j in 0..data.ncols() {
                let a = data[(i, j)].abs();
                if a > max_abs {
                    max_abs = a;
                }
                if j > i {
                    let dev = (data[(i, j)] - data[(j, i)]).abs();
                    if dev > max_dev {
                        max_dev = dev;
                    }
                }
            }
        }
        let tol = T::of(SYMMETRY_TOL) * (T::one() + max_abs);
        if max_dev > tol {
            return Err(BlockMatError::NotSymmetric {
                deviation: max_dev.to_f64_lossy(),
                tolerance: tol.to_f64_lossy(),
            });
        }
        let symmetrized = max_dev > T::zero();
        let mut sym = data;
        if symmetrized {
            for i in 0..sym.nrows() {
                for j in (i + 1)..sym.ncols() {
                    let avg = (sym[(i, j)] + sym[(j, i)]) * T::of(0.5);
                    sym[(i, j)] = avg;
                    sym[(j, i)] = avg;
                }
            }
        }
        Ok(Self {
            n,
            d,
            data: sym,
            symmetrized,
        })
    }

    /// Wraps a matrix that is symmetric by construction.
    pub(crate) fn assemble(n: usize, d: usize, data: DMatrix<T>) -> Self {
        debug_assert_eq!(data.nrows(), n * d);
        debug_assert_eq!(data.ncols(), n * d);
        Self {
            n,
            d,
            data,
            symmetrized: false,
        }
    }

    pub fn zeros(n: usize, d: usize) -> Self {
        Self::assemble(n, d, DMatrix::zeros(n * d, n * d))
    }

    pub fn identity(n: usize, d: usize) -> Self {
        Self::assemble(n, d, DMatrix::identity(n * d, n * d))
    }

    /// `Z Z^T` for the canonical all-identity tuple: every block is `I_d`.
    pub fn consensus_gram(n: usize, d: usize) -> Self {
        let z = identity_stack::<T>(n, d);
        Self::assemble(n, d, &z * z.transpose())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    /// Edge length `n * d` of the full matrix.
    pub fn dim(&self) -> usize {
        self.n * self.d
    }

    /// True when construction had to average away a (sub-tolerance) asymmetry.
    pub fn was_symmetrized(&self) -> bool {
        self.symmetrized
    }

    pub fn data(&self) -> &DMatrix<T> {
        &self.data
    }

    pub fn into_data(self) -> DMatrix<T> {
        self.data
    }

    pub fn block(&self, i: usize, j: usize) -> DMatrix<T> {
        self.data
            .view((i * self.d, j * self.d), (self.d, self.d))
            .into_owned()
    }

    pub fn frobenius_norm(&self) -> T {
        self.data.norm()
    }

    pub fn trace(&self) -> T {
        self.data.trace()
    }

    /// Frobenius inner product with another matrix of the same shape.
    pub fn inner(&self, other: &Self) -> T {
        self.data.dot(&other.data)
    }

    /// Conjugation by the consensus-complement projector: `P_perp M P_perp`.
    pub fn perp(&self) -> Self {
        let z = identity_stack::<T>(n_of(self), self.d);
        let inv_n = T::one() / T::of_usize(self.n);
        let zt_m = z.transpose() * &self.data; // d x nd
        let zt_m_z = &zt_m * &z; // d x d
        let mut out = self.data.clone();
        out -= &z * &zt_m * inv_n;
        out -= (&z * &zt_m * inv_n).transpose();
        out += &z * zt_m_z * z.transpose() * (inv_n * inv_n);
        Self::assemble(self.n, self.d, out)
    }

    pub fn scale(&self, factor: T) -> Self {
        Self::assemble(self.n, self.d, &self.data * factor)
    }

    pub fn add(&self, other: &Self) -> Self {
        debug_assert_eq!(self.dim(), other.dim());
        Self::assemble(self.n, self.d, &self.data + &other.data)
    }
}

fn n_of<T: Real>(m: &BlockSymMatrix<T>) -> usize {
    m.n
}

fn check_shape<T: Real>(n: usize, d: usize, data: &DMatrix<T>) -> Result<(), BlockMatError> {
    if n == 0 || d == 0 {
        return Err(BlockMatError::EmptyShape { n, d });
    }
    if data.nrows() != n * d || data.ncols() != n * d {
        return Err(BlockMatError::DimensionMismatch {
            expected_rows: n * d,
            expected_cols: n * d,
            actual_rows: data.nrows(),
            actual_cols: data.ncols(),
        });
    }
    Ok(())
}

/// The stacked consensus direction `Z`: an `nd x d` matrix of `n` copies of `I_d`.
pub fn identity_stack<T: Real>(n: usize, d: usize) -> DMatrix<T> {
    let mut z = DMatrix::zeros(n * d, d);
    for i in 0..n {
        for k in 0..d {
            z[(i * d + k, k)] = T::one();
        }
    }
    z
}

/// Block-diagonal symmetrization: symmetrize `M` and keep only the diagonal
/// `d x d` blocks. Off-diagonal blocks of the result are zero; diagonal block
/// `i` equals `(M_ii + M_ii^T) / 2`.
pub fn bdg<T: Real>(n: usize, d: usize, m: &DMatrix<T>) -> Result<BlockSymMatrix<T>, BlockMatError> {
    check_shape(n, d, m)?;
    let mut out = DMatrix::zeros(n * d, n * d);
    let half = T::of(0.5);
    for i in 0..n {
        for r in 0..d {
            for c in 0..d {
                out[(i * d + r, i * d + c)] =
                    (m[(i * d + r, i * d + c)] + m[(i * d + c, i * d + r)]) * half;
            }
        }
    }
    Ok(BlockSymMatrix::assemble(n, d, out))
}

/// Partial trace: the `n x n` matrix of blockwise traces. When `M = S S^T`
/// its `(i, j)` entry is the inner product of the node blocks `S_i` and `S_j`.
pub fn partial_trace<T: Real>(m: &BlockSymMatrix<T>) -> DMatrix<T> {
    let (n, d) = (m.n(), m.d());
    let mut out = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let mut t = T::zero();
            for k in 0..d {
                t += m.data[(i * d + k, j * d + k)];
            }
            out[(i, j)] = t;
        }
    }
    out
}

/// The consensus-complement projector `P_perp = I_{nd} - Z Z^T / n`.
///
/// Idempotent, symmetric, annihilates the stacked identity direction, and has
/// trace `(n - 1) d`.
pub fn projector_perp<T: Real>(n: usize, d: usize) -> BlockSymMatrix<T> {
    let mut out = DMatrix::identity(n * d, n * d);
    let inv_n = T::one() / T::of_usize(n);
    for i in 0..n {
        for j in 0..n {
            for k in 0..d {
                out[(i * d + k, j * d + k)] -= inv_n;
            }
        }
    }
    BlockSymMatrix::assemble(n, d, out)
}

/// Eigen-decomposition of a symmetric matrix, eigenvalues ascending.
#[derive(Debug, Clone)]
pub struct Spectrum<T: Real> {
    pub eigenvalues: Vec<T>,
    /// Columns match `eigenvalues` when requested.
    pub eigenvectors: Option<DMatrix<T>>,
}

impl<T: Real> Spectrum<T> {
    pub fn min(&self) -> T {
        self.eigenvalues[0]
    }

    pub fn max(&self) -> T {
        *self.eigenvalues.last().expect("nonempty spectrum")
    }

    pub fn spectral_radius(&self) -> T {
        let lo = self.min().abs();
        let hi = self.max().abs();
        if lo > hi {
            lo
        } else {
            hi
        }
    }

    /// Clusters eigenvalues whose gaps stay below
    /// `EIGEN_GROUP_GAP * (1 + spectral radius)`; returns `(mean, count)`
    /// pairs in ascending order.
    pub fn grouped(&self) -> Vec<(T, usize)> {
        group_eigenvalues(&self.eigenvalues, T::of(EIGEN_GROUP_GAP))
    }
}

/// Groups an ascending eigenvalue list by the relative gap threshold.
pub fn group_eigenvalues<T: Real>(ascending: &[T], rel_gap: T) -> Vec<(T, usize)> {
    if ascending.is_empty() {
        return Vec::new();
    }
    let radius = ascending
        .iter()
        .fold(T::zero(), |acc, &v| if v.abs() > acc { v.abs() } else { acc });
    let gap = rel_gap * (T::one() + radius);
    let mut groups = Vec::new();
    let mut start = 0;
    for k in 1..=ascending.len() {
        if k == ascending.len() || ascending[k] - ascending[k - 1] > gap {
            let cluster = &ascending[start..k];
            let mean = cluster.iter().copied().sum::<T>() / T::of_usize(cluster.len());
            groups.push((mean, cluster.len()));
            start = k;
        }
    }
    groups
}

/// Dense symmetric eigensolver.
///
/// The input is already symmetric by the [`BlockSymMatrix`] invariant; the
/// decomposition is returned with eigenvalues sorted ascending and, when
/// requested, eigenvector columns permuted to match.
pub fn eigs_sym<T: Real>(
    m: &BlockSymMatrix<T>,
    want_vectors: bool,
) -> Result<Spectrum<T>, BlockMatError> {
    eigs_sym_dense(m.data(), want_vectors)
}

pub(crate) fn eigs_sym_dense<T: Real>(
    data: &DMatrix<T>,
    want_vectors: bool,
) -> Result<Spectrum<T>, BlockMatError> {
    let eig = nalgebra::SymmetricEigen::try_new(data.clone(), T::default_epsilon(), EIGEN_MAX_ITER)
        .ok_or(BlockMatError::EigenFailed {
            iterations: EIGEN_MAX_ITER,
        })?;
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[a]
            .partial_cmp(&eig.eigenvalues[b])
            .expect("eigenvalues are ordered")
    });
    let eigenvalues: Vec<T> = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let eigenvectors = want_vectors.then(|| {
        let dim = data.nrows();
        let mut v = DMatrix::zeros(dim, dim);
        for (dst, &src) in order.iter().enumerate() {
            v.set_column(dst, &eig.eigenvectors.column(src));
        }
        v
    });
    Ok(Spectrum {
        eigenvalues,
        eigenvectors,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_square(dim: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(dim, dim, |_, _| rng.gen_range(-1.0..1.0))
    }

    fn random_sym(dim: usize, seed: u64) -> DMatrix<f64> {
        let m = random_square(dim, seed);
        (&m + m.transpose()) * 0.5
    }

    #[test]
    fn rejects_dimension_mismatch() {
        let err = BlockSymMatrix::new(2, 2, DMatrix::<f64>::zeros(3, 3)).unwrap_err();
        assert!(matches!(err, BlockMatError::DimensionMismatch { .. }));
        let err = bdg(2, 2, &DMatrix::<f64>::zeros(3, 4)).unwrap_err();
        assert!(matches!(err, BlockMatError::DimensionMismatch { .. }));
    }

    #[test]
    fn rejects_asymmetry_beyond_tolerance() {
        let mut m = DMatrix::<f64>::identity(4, 4);
        m[(0, 1)] = 1e-6;
        let err = BlockSymMatrix::new(2, 2, m).unwrap_err();
        assert!(matches!(err, BlockMatError::NotSymmetric { .. }));
    }

    #[test]
    fn symmetrizes_sub_tolerance_noise_with_flag() {
        let mut m = DMatrix::<f64>::identity(4, 4);
        m[(0, 1)] = 1e-14;
        let b = BlockSymMatrix::new(2, 2, m).unwrap();
        assert!(b.was_symmetrized());
        assert_eq!(b.data()[(0, 1)], b.data()[(1, 0)]);
    }

    #[test]
    fn bdg_identity_is_identity() {
        let m = DMatrix::<f64>::identity(6, 6);
        let out = bdg(3, 2, &m).unwrap();
        assert_eq!(out.data(), &DMatrix::identity(6, 6));
    }

    #[test]
    fn bdg_symmetrizes_single_block() {
        let m = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 3.0, 0.0]);
        let out = bdg(1, 2, &m).unwrap();
        assert_eq!(out.data(), &DMatrix::from_row_slice(2, 2, &[0.0, 2.0, 2.0, 0.0]));
    }

    #[test]
    fn bdg_matches_per_block_loop_oracle() {
        // Direct per-block oracle: walk each diagonal block and symmetrize it.
        let (n, d) = (3, 2);
        let m = random_square(n * d, 7);
        let out = bdg(n, d, &m).unwrap();
        for i in 0..n {
            for j in 0..n {
                for r in 0..d {
                    for c in 0..d {
                        let expected = if i == j {
                            0.5 * (m[(i * d + r, i * d + c)] + m[(i * d + c, i * d + r)])
                        } else {
                            0.0
                        };
                        assert_eq!(out.data()[(i * d + r, j * d + c)], expected);
                    }
                }
            }
        }
    }

    #[test]
    fn bdg_is_idempotent_exactly() {
        let (n, d) = (3, 2);
        let m = random_square(n * d, 11);
        let once = bdg(n, d, &m).unwrap();
        let twice = bdg(n, d, once.data()).unwrap();
        assert_eq!(once.data(), twice.data());
    }

    #[test]
    fn bdg_is_adjoint_to_block_diagonal_restriction() {
        // <bdg(M), D> == <M, D> for every block-diagonal symmetric D.
        let (n, d) = (4, 2);
        let m = random_square(n * d, 13);
        let mut diag = DMatrix::<f64>::zeros(n * d, n * d);
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for i in 0..n {
            for r in 0..d {
                for c in r..d {
                    let v = rng.gen_range(-1.0..1.0);
                    diag[(i * d + r, i * d + c)] = v;
                    diag[(i * d + c, i * d + r)] = v;
                }
            }
        }
        let lhs = bdg(n, d, &m).unwrap().data().dot(&diag);
        let rhs = m.dot(&diag);
        assert_relative_eq!(lhs, rhs, epsilon = 1e-12);
    }

    #[test]
    fn partial_trace_of_identity_and_consensus() {
        let id = BlockSymMatrix::<f64>::identity(4, 3);
        assert_eq!(partial_trace(&id), DMatrix::identity(4, 4) * 3.0);

        let zz = BlockSymMatrix::<f64>::consensus_gram(4, 3);
        let expected = DMatrix::from_element(4, 4, 3.0);
        assert_eq!(partial_trace(&zz), expected);
    }

    #[test]
    fn partial_trace_matches_pairwise_inner_products() {
        let (n, d, p) = (4, 2, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let blocks: Vec<DMatrix<f64>> = (0..n)
            .map(|_| DMatrix::from_fn(d, p, |_, _| rng.gen_range(-1.0..1.0)))
            .collect();
        let mut s = DMatrix::zeros(n * d, p);
        for (i, b) in blocks.iter().enumerate() {
            s.view_mut((i * d, 0), (d, p)).copy_from(b);
        }
        let gram = BlockSymMatrix::new(n, d, &s * s.transpose()).unwrap();
        let pt = partial_trace(&gram);
        for i in 0..n {
            for j in 0..n {
                assert_relative_eq!(pt[(i, j)], blocks[i].dot(&blocks[j]), epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn projector_perp_small_cases() {
        let p = projector_perp::<f64>(1, 3);
        assert_eq!(p.data(), &DMatrix::zeros(3, 3));

        let p = projector_perp::<f64>(2, 1);
        let expected = DMatrix::from_row_slice(2, 2, &[0.5, -0.5, -0.5, 0.5]);
        assert_relative_eq!(p.data(), &expected, epsilon = 1e-15);

        assert_relative_eq!(projector_perp::<f64>(5, 3).trace(), 12.0, epsilon = 1e-12);
    }

    #[test]
    fn projector_perp_is_idempotent_and_annihilates_consensus() {
        let p = projector_perp::<f64>(4, 2);
        let sq = p.data() * p.data();
        assert_relative_eq!(&sq, p.data(), epsilon = 1e-12);
        let z = identity_stack::<f64>(4, 2);
        assert!((p.data() * z).norm() < 1e-14);
    }

    #[test]
    fn eigs_sym_diagonal_sorted() {
        let m = BlockSymMatrix::new(3, 1, DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![3.0, 1.0, 2.0])))
            .unwrap();
        let s = eigs_sym(&m, false).unwrap();
        assert_eq!(s.eigenvalues, vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn eigs_sym_consensus_gram_multiplicities() {
        let (n, d) = (4, 2);
        let s = eigs_sym(&BlockSymMatrix::<f64>::consensus_gram(n, d), false).unwrap();
        let groups = s.grouped();
        assert_eq!(groups.len(), 2);
        assert_relative_eq!(groups[0].0, 0.0, epsilon = 1e-10);
        assert_eq!(groups[0].1, (n - 1) * d);
        assert_relative_eq!(groups[1].0, n as f64, epsilon = 1e-10);
        assert_eq!(groups[1].1, d);
    }

    #[test]
    fn eigs_sym_reconstructs_input() {
        let m = BlockSymMatrix::new(3, 2, random_sym(6, 31)).unwrap();
        let s = eigs_sym(&m, true).unwrap();
        let v = s.eigenvectors.as_ref().unwrap();
        let lambda = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(s.eigenvalues.clone()));
        let rebuilt = v * lambda * v.transpose();
        let err = (&rebuilt - m.data()).norm();
        assert!(err <= 1e-9 * (1.0 + m.frobenius_norm()), "residual {err}");
    }

    #[test]
    fn eigs_sym_eigenpairs_satisfy_residual_bound() {
        let m = BlockSymMatrix::new(4, 2, random_sym(8, 37)).unwrap();
        let s = eigs_sym(&m, true).unwrap();
        let v = s.eigenvectors.as_ref().unwrap();
        for (k, &lam) in s.eigenvalues.iter().enumerate() {
            let col = v.column(k);
            let residual = (m.data() * col - col * lam).norm();
            assert!(residual <= 1e-9 * (1.0 + m.frobenius_norm()));
        }
    }

    #[test]
    fn eigs_sym_projector_spectrum_is_zero_one() {
        let (n, d) = (5, 2);
        let s = eigs_sym(&projector_perp::<f64>(n, d), false).unwrap();
        let groups = s.grouped();
        assert_eq!(groups.len(), 2);
        assert_relative_eq!(groups[0].0, 0.0, epsilon = 1e-10);
        assert_eq!(groups[0].1, d);
        assert_relative_eq!(groups[1].0, 1.0, epsilon = 1e-10);
        assert_eq!(groups[1].1, (n - 1) * d);
    }

    #[test]
    fn perp_matches_explicit_projector_product() {
        let (n, d) = (3, 2);
        let m = BlockSymMatrix::new(n, d, random_sym(n * d, 41)).unwrap();
        let p = projector_perp::<f64>(n, d);
        let explicit = p.data() * m.data() * p.data();
        assert_relative_eq!(&explicit, m.perp().data(), epsilon = 1e-12);
    }

    #[test]
    fn eigenvalue_grouping_uses_relative_gap() {
        let vals = vec![0.0, 1e-12, 1.0, 1.0 + 1e-12, 2.0];
        let groups = group_eigenvalues(&vals, 1e-8);
        assert_eq!(groups.iter().map(|g| g.1).collect::<Vec<_>>(), vec![2, 2, 1]);
    }
}
