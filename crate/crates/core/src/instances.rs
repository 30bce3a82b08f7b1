//! Seeded instance generators.
//!
//! Every statistical model the landscape machinery gets exercised on lives
//! here: orthogonal synchronization under additive Gaussian noise, the two
//! `Z_2` models, Kuramoto graphs, the generalized Procrustes model, and the
//! twisted-state configuration that attains the `2p / (d + 1)` frontier
//! together with its parameterized certificate. All generators are
//! bit-deterministic per `(parameters, seed)`.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::blockmat::BlockSymMatrix;
use crate::operators::{polar_factor, StiefelTuple};
use crate::scalar::Real;

/// Node cap for the twisted-state family (`n = 2^d p`).
pub const TWISTED_NODE_CAP: usize = 4096;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InstanceError {
    #[error("twisted state needs 2^d * p = {nodes} <= {cap} nodes")]
    CapExceeded { nodes: usize, cap: usize },
    #[error("invalid parameter {name} = {value}: {reason}")]
    InvalidParam {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },
}

/// Provenance of a generated instance: generator name, seed, parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceMeta {
    pub generator: String,
    pub seed: u64,
    pub params: BTreeMap<String, f64>,
}

impl InstanceMeta {
    fn new(generator: &str, seed: u64, params: &[(&str, f64)]) -> Self {
        Self {
            generator: generator.to_string(),
            seed,
            params: params
                .iter()
                .map(|(k, v)| (k.to_string(), *v))
                .collect(),
        }
    }
}

/// A synchronization problem: data matrix, optional ground truth, provenance.
#[derive(Debug, Clone)]
pub struct SyncInstance<T: Real> {
    pub n: usize,
    pub d: usize,
    pub a: BlockSymMatrix<T>,
    /// Ground-truth tuple with `p = d` when the generator knows one.
    pub z: Option<StiefelTuple<T>>,
    pub meta: InstanceMeta,
}

fn random_orthogonal<T: Real>(d: usize, rng: &mut ChaCha8Rng) -> DMatrix<T> {
    polar_factor(&DMatrix::from_fn(d, d, |_, _| T::standard_normal(rng)))
}

/// Orthogonal synchronization under additive Gaussian noise:
/// `A_ij = O_i O_j^T + sigma W_ij` for `i < j` with `W_ji = W_ij^T` mirrored,
/// and `A_ii = I_d`.
pub fn gen_od_gaussian<T: Real>(n: usize, d: usize, sigma: f64, seed: u64) -> SyncInstance<T> {
    assert!(n >= 2 && d >= 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let truth: Vec<DMatrix<T>> = (0..n).map(|_| random_orthogonal(d, &mut rng)).collect();
    let sig = T::of(sigma);
    let mut a = DMatrix::zeros(n * d, n * d);
    for i in 0..n {
        a.view_mut((i * d, i * d), (d, d))
            .copy_from(&DMatrix::identity(d, d));
        for j in (i + 1)..n {
            let mut block = &truth[i] * truth[j].transpose();
            if sigma > 0.0 {
                let noise = DMatrix::from_fn(d, d, |_, _| T::standard_normal(&mut rng));
                block += noise * sig;
            }
            a.view_mut((i * d, j * d), (d, d)).copy_from(&block);
            a.view_mut((j * d, i * d), (d, d))
                .copy_from(&block.transpose());
        }
    }
    SyncInstance {
        n,
        d,
        a: BlockSymMatrix::assemble(n, d, a),
        z: Some(StiefelTuple::new(truth).expect("orthogonal blocks")),
        meta: InstanceMeta::new(
            "od-gaussian",
            seed,
            &[("n", n as f64), ("d", d as f64), ("sigma", sigma), ("diag", 1.0)],
        ),
    }
}

/// Noise model for `Z_2` synchronization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Z2Model {
    /// `A = z z^T + sigma W` with symmetric Gaussian `W`, unit diagonal.
    Gaussian { sigma: f64 },
    /// Independent edge sampling with sign flips, zeros elsewhere.
    ErdosRenyi { p_edge: f64, flip_prob: f64 },
}

/// `Z_2` synchronization (`d = 1`): signs `z_i` recovered from noisy
/// pairwise products.
pub fn gen_z2<T: Real>(n: usize, model: Z2Model, seed: u64) -> SyncInstance<T> {
    assert!(n >= 2);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let signs: Vec<f64> = (0..n)
        .map(|_| if rng.gen_bool(0.5) { 1.0 } else { -1.0 })
        .collect();
    let mut a = DMatrix::zeros(n, n);
    for i in 0..n {
        a[(i, i)] = T::one();
    }
    let (name, params): (&str, Vec<(&str, f64)>) = match model {
        Z2Model::Gaussian { sigma } => {
            for i in 0..n {
                for j in (i + 1)..n {
                    let mut v = signs[i] * signs[j];
                    if sigma > 0.0 {
                        v += sigma * rng.sample::<f64, _>(rand_distr::StandardNormal);
                    }
                    a[(i, j)] = T::of(v);
                    a[(j, i)] = T::of(v);
                }
            }
            ("z2-gaussian", vec![("n", n as f64), ("sigma", sigma)])
        }
        Z2Model::ErdosRenyi { p_edge, flip_prob } => {
            for i in 0..n {
                for j in (i + 1)..n {
                    if rng.gen_bool(p_edge) {
                        let flip = if rng.gen_bool(flip_prob) { -1.0 } else { 1.0 };
                        let v = T::of(signs[i] * signs[j] * flip);
                        a[(i, j)] = v;
                        a[(j, i)] = v;
                    }
                }
            }
            (
                "z2-er",
                vec![("n", n as f64), ("p_edge", p_edge), ("flip_prob", flip_prob)],
            )
        }
    };
    let z = StiefelTuple::new(
        signs
            .iter()
            .map(|&s| DMatrix::from_element(1, 1, T::of(s)))
            .collect(),
    )
    .expect("unit signs");
    SyncInstance {
        n,
        d: 1,
        a: BlockSymMatrix::assemble(n, 1, a),
        z: Some(z),
        meta: InstanceMeta::new(name, seed, &params),
    }
}

/// Kuramoto graph model (`d = 1`): an Erdos-Renyi adjacency matrix with
/// entries in `{0, +-1}`, zero diagonal, and the all-ones ground truth. The
/// certificate of the all-ones candidate is the graph Laplacian `D - A`.
pub fn gen_kuramoto_graph<T: Real>(n: usize, p_edge: f64, signed: bool, seed: u64) -> SyncInstance<T> {
    assert!(n >= 2);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut a = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            if rng.gen_bool(p_edge) {
                let v = if signed && rng.gen_bool(0.5) { -1.0 } else { 1.0 };
                a[(i, j)] = T::of(v);
                a[(j, i)] = T::of(v);
            }
        }
    }
    let z = StiefelTuple::new(vec![DMatrix::from_element(1, 1, T::one()); n]).expect("ones");
    SyncInstance {
        n,
        d: 1,
        a: BlockSymMatrix::assemble(n, 1, a),
        z: Some(z),
        meta: InstanceMeta::new(
            "kuramoto",
            seed,
            &[
                ("n", n as f64),
                ("p_edge", p_edge),
                ("signed", if signed { 1.0 } else { 0.0 }),
                ("diag", 0.0),
            ],
        ),
    }
}

/// Generalized orthogonal Procrustes with a caller-supplied reference cloud;
/// [`gen_procrustes`] draws the cloud from a Gaussian. Off-diagonal blocks
/// are `A_i A_j^T` for the noisy views `A_i = O_i Abar + sigma W_i`; diagonal
/// blocks are zero.
pub fn procrustes_from_reference<T: Real>(
    n: usize,
    a_bar: &DMatrix<T>,
    sigma: f64,
    seed: u64,
) -> Result<SyncInstance<T>, InstanceError> {
    let (d, m) = (a_bar.nrows(), a_bar.ncols());
    if m < d {
        return Err(InstanceError::InvalidParam {
            name: "m",
            value: m as f64,
            reason: "needs m >= d point-cloud columns",
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let truth: Vec<DMatrix<T>> = (0..n).map(|_| random_orthogonal(d, &mut rng)).collect();
    let sig = T::of(sigma);
    let views: Vec<DMatrix<T>> = truth
        .iter()
        .map(|o| {
            let mut v = o * a_bar;
            if sigma > 0.0 {
                v += DMatrix::from_fn(d, m, |_, _| T::standard_normal(&mut rng)) * sig;
            }
            v
        })
        .collect();
    let mut a = DMatrix::zeros(n * d, n * d);
    for i in 0..n {
        for j in (i + 1)..n {
            let block = &views[i] * views[j].transpose();
            a.view_mut((i * d, j * d), (d, d)).copy_from(&block);
            a.view_mut((j * d, i * d), (d, d))
                .copy_from(&block.transpose());
        }
    }
    let svals = a_bar.clone().singular_values_unordered();
    let (mut smax, mut smin) = (T::zero(), T::inf());
    for v in svals.iter() {
        if *v > smax {
            smax = *v;
        }
        if *v < smin {
            smin = *v;
        }
    }
    let kappa = if smin > T::zero() { smax / smin } else { T::inf() };
    Ok(SyncInstance {
        n,
        d,
        a: BlockSymMatrix::assemble(n, d, a),
        z: Some(StiefelTuple::new(truth).expect("orthogonal blocks")),
        meta: InstanceMeta::new(
            "procrustes",
            seed,
            &[
                ("n", n as f64),
                ("d", d as f64),
                ("m", m as f64),
                ("sigma", sigma),
                ("kappa", kappa.to_f64_lossy()),
                ("diag", 0.0),
            ],
        ),
    })
}

/// Generalized orthogonal Procrustes under additive Gaussian noise with a
/// Gaussian reference cloud `Abar` (its condition number lands in the meta).
pub fn gen_procrustes<T: Real>(
    n: usize,
    d: usize,
    m: usize,
    sigma: f64,
    seed: u64,
) -> Result<SyncInstance<T>, InstanceError> {
    if m < d {
        return Err(InstanceError::InvalidParam {
            name: "m",
            value: m as f64,
            reason: "needs m >= d point-cloud columns",
        });
    }
    // The reference cloud comes from a dedicated substream so the views see
    // the same noise sequence as procrustes_from_reference.
    let mut bar_rng = ChaCha8Rng::seed_from_u64(seed);
    bar_rng.set_stream(1);
    let a_bar = DMatrix::from_fn(d, m, |_, _| T::standard_normal(&mut bar_rng));
    procrustes_from_reference(n, &a_bar, sigma, seed)
}

/// The twisted-state configuration: all `2^d` sign-diagonal matrices times
/// the `p` cyclic shifts of the padded identity, `n = 2^d p` blocks.
///
/// Nodes are ordered sign-pattern-major (binary counting on the diagonal
/// entries, bit `t` of the pattern index flips row `t`) with shift exponent
/// `k = 1..p` inside each pattern. The construction satisfies
/// `S^T S = (n d / p) I_p` and `Z^T S = 0`, both verified before returning.
pub fn twisted_state<T: Real>(p: usize, d: usize) -> Result<StiefelTuple<T>, InstanceError> {
    assert!(d >= 1 && p > d);
    let patterns = 1usize << d;
    let n = patterns * p;
    if n > TWISTED_NODE_CAP {
        return Err(InstanceError::CapExceeded {
            nodes: n,
            cap: TWISTED_NODE_CAP,
        });
    }
    let mut blocks = Vec::with_capacity(n);
    for j in 0..patterns {
        for k in 1..=p {
            let mut block = DMatrix::zeros(d, p);
            for t in 0..d {
                let sign = if (j >> t) & 1 == 0 { T::one() } else { -T::one() };
                // Row t of M^k has its one in column (t + k) mod p.
                block[(t, (t + k) % p)] = sign;
            }
            blocks.push(block);
        }
    }
    let tuple = StiefelTuple::new(blocks).expect("twisted blocks are orthonormal");
    let s = tuple.stacked();
    let gram_cols = s.transpose() * &s;
    let expected = DMatrix::identity(p, p) * T::of_usize(n * d) / T::of_usize(p);
    debug_assert!((&gram_cols - &expected).norm() < T::of(1e-10));
    assert!(
        (gram_cols - expected).norm() < T::of(1e-8),
        "twisted state lost its column isotropy"
    );
    assert!(
        tuple.consensus_alignment().norm() < T::of(1e-10),
        "twisted state must be orthogonal to the consensus direction"
    );
    Ok(tuple)
}

/// The parameterized twisted certificate
/// `L(t) = (1 + t)(I - Z Z^T / n) - t (p / (n d)) S S^T`.
///
/// `L Z = 0` and `L S = S` hold for every `t >= 0`; the spectrum is `0` with
/// multiplicity `d`, `1` with multiplicity `p`, and `1 + t` on the rest. At
/// `t = 2p/(d+1) - 1` the condition number reaches the frontier `2p/(d+1)`
/// and the twisted state is second-order critical.
pub fn twisted_certificate<T: Real>(
    p: usize,
    d: usize,
    t: T,
) -> Result<BlockSymMatrix<T>, InstanceError> {
    assert!(t >= T::zero());
    let state = twisted_state::<T>(p, d)?;
    let n = state.n();
    let perp = crate::blockmat::projector_perp::<T>(n, d);
    let gram = state.gram();
    let data = perp.data() * (T::one() + t)
        - gram.data() * (t * T::of_usize(p) / T::of_usize(n * d));
    Ok(BlockSymMatrix::assemble(n, d, data))
}

/// `t` value at which the twisted certificate attains the frontier.
pub fn twisted_boundary_t<T: Real>(p: usize, d: usize) -> T {
    crate::thresholds::counterexample_threshold::<T>(p, d) - T::one()
}
