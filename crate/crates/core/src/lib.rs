//! Landscape guarantees for Burer-Monteiro factorization of orthogonal group
//! synchronization.
//!
//! The crate computes the threshold functions that decide when the low-rank
//! factorization of the synchronization semidefinite relaxation has a benign
//! landscape, builds and verifies optimality certificates, tests first- and
//! second-order criticality on products of Stiefel manifolds, checks
//! dual-certificate feasibility, generates the statistical model instances and
//! the twisted-state counterexamples, and runs the gradient solver used by the
//! empirical landscape experiments.
//!
//! Everything is generic over the scalar type through [`Real`]; the `f64`
//! aliases below are the instantiation used by the CLI and the test suites.

pub mod blockmat;
pub mod certificate;
pub mod criticality;
pub mod instances;
pub mod operators;
pub mod scalar;
pub mod solver;
pub mod thresholds;

pub use scalar::Real;

/// `f64` block matrix.
pub type BlockSymMatrix64 = blockmat::BlockSymMatrix<f64>;
/// `f64` spectrum.
pub type Spectrum64 = blockmat::Spectrum<f64>;
/// `f64` threshold result.
pub type ThresholdResult64 = thresholds::ThresholdResult<f64>;
/// `f64` Stiefel tuple.
pub type StiefelTuple64 = operators::StiefelTuple<f64>;
/// `f64` tangent tuple.
pub type TangentTuple64 = operators::TangentTuple<f64>;
/// `f64` synchronization instance.
pub type SyncInstance64 = instances::SyncInstance<f64>;
/// `f64` certificate report.
pub type CertificateReport64 = certificate::CertificateReport<f64>;
/// `f64` landscape verdict.
pub type Verdict64 = certificate::Verdict<f64>;
/// `f64` criticality report.
pub type CriticalityReport64 = criticality::CriticalityReport<f64>;
/// `f64` dual feasibility report.
pub type DualFeasibilityReport64 = criticality::DualFeasibilityReport<f64>;
/// `f64` solver configuration.
pub type SolveConfig64 = solver::SolveConfig<f64>;
/// `f64` solver result.
pub type SolveResult64 = solver::SolveResult<f64>;

#[cfg(test)]
mod tests {
    #[test]
    fn f32_instantiation_compiles_and_runs() {
        // The generic surface stays usable at single precision.
        let res = crate::thresholds::alpha_g_tau::<f32>(4, 2, 0.5f32).unwrap();
        assert!(res.alpha > 1.0 && res.alpha < 2.0);
        let s = crate::solver::random_stiefel::<f32>(3, 1, 2, 1);
        assert_eq!(s.n(), 3);
        let sigma = crate::operators::sigma_tau(&s, 0.5f32);
        assert!(sigma.trace() > 0.0);
    }
}
