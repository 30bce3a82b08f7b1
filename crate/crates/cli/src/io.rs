//! JSON schema for instances and reports.
//!
//! Instance files use row-major flattened matrices:
//!
//! ```json
//! {
//!   "n": 5, "d": 2, "seed": 7,
//!   "generator": "od-gaussian",
//!   "params": {"sigma": 0.1},
//!   "A": [ /* (n d)^2 doubles, row-major */ ],
//!   "Z": [ /* n blocks of d*d doubles, row-major, optional */ ]
//! }
//! ```
//!
//! Doubles round-trip bit-exactly (shortest-representation encoding on
//! write, exact parse on read).

use std::collections::BTreeMap;

use anyhow::{bail, Context, Result};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use sync_landscape::blockmat::BlockSymMatrix;
use sync_landscape::certificate::CertificateReport;
use sync_landscape::criticality::{CriticalityReport, DualFeasibilityReport};
use sync_landscape::instances::{InstanceMeta, SyncInstance};
use sync_landscape::operators::StiefelTuple;
use sync_landscape::thresholds::ThresholdResult;
use sync_landscape::{StiefelTuple64, SyncInstance64};

#[derive(Debug, Serialize, Deserialize)]
pub struct InstanceFile {
    pub n: usize,
    pub d: usize,
    #[serde(default)]
    pub seed: u64,
    pub generator: String,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
    #[serde(rename = "A")]
    pub a: Vec<f64>,
    #[serde(rename = "Z", default, skip_serializing_if = "Option::is_none")]
    pub z: Option<Vec<f64>>,
}

fn flatten_row_major(m: &DMatrix<f64>) -> Vec<f64> {
    let mut out = Vec::with_capacity(m.nrows() * m.ncols());
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            out.push(m[(r, c)]);
        }
    }
    out
}

impl InstanceFile {
    pub fn from_core(inst: &SyncInstance64) -> Self {
        Self {
            n: inst.n,
            d: inst.d,
            seed: inst.meta.seed,
            generator: inst.meta.generator.clone(),
            params: inst.meta.params.clone(),
            a: flatten_row_major(inst.a.data()),
            z: inst.z.as_ref().map(|z| {
                let mut out = Vec::with_capacity(inst.n * inst.d * inst.d);
                for b in z.blocks() {
                    out.extend(flatten_row_major(b));
                }
                out
            }),
        }
    }

    pub fn into_core(self) -> Result<SyncInstance64> {
        let (n, d) = (self.n, self.d);
        let dim = n * d;
        if self.a.len() != dim * dim {
            bail!(
                "field A has {} entries, expected {} for n={n}, d={d}",
                self.a.len(),
                dim * dim
            );
        }
        let a = DMatrix::from_fn(dim, dim, |r, c| self.a[r * dim + c]);
        let a = BlockSymMatrix::new(n, d, a).context("field A")?;
        let z = match self.z {
            None => None,
            Some(flat) => {
                if flat.len() != n * d * d {
                    bail!(
                        "field Z has {} entries, expected {} for n={n}, d={d}",
                        flat.len(),
                        n * d * d
                    );
                }
                let blocks = (0..n)
                    .map(|i| {
                        DMatrix::from_fn(d, d, |r, c| flat[i * d * d + r * d + c])
                    })
                    .collect();
                Some(StiefelTuple::new(blocks).context("field Z")?)
            }
        };
        Ok(SyncInstance {
            n,
            d,
            a,
            z,
            meta: InstanceMeta {
                generator: self.generator,
                seed: self.seed,
                params: self.params,
            },
        })
    }
}

pub fn read_instance(path: &std::path::Path) -> Result<SyncInstance64> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))?;
    let file: InstanceFile =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    file.into_core()
}

pub fn write_instance(path: &std::path::Path, inst: &SyncInstance64) -> Result<()> {
    let file = InstanceFile::from_core(inst);
    let text = serde_json::to_string(&file)?;
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

/// Infinite floats serialize to `null` in JSON; keep them as options.
fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

#[derive(Debug, Serialize)]
pub struct ThresholdDto {
    pub alpha: f64,
    pub tau_star: f64,
    pub case: String,
    pub p: usize,
    pub d: usize,
}

impl From<&ThresholdResult<f64>> for ThresholdDto {
    fn from(r: &ThresholdResult<f64>) -> Self {
        Self {
            alpha: r.alpha,
            tau_star: r.tau_star,
            case: r.case.to_string(),
            p: r.p,
            d: r.d,
        }
    }
}

#[derive(Debug, Serialize)]
pub struct CertificateReportDto {
    pub lz_residual: f64,
    pub min_eig: f64,
    pub lambda_d_plus_1: f64,
    pub lambda_max: f64,
    pub cond: Option<f64>,
    pub kkt_ok: bool,
    pub unique_ok: bool,
}

impl From<&CertificateReport<f64>> for CertificateReportDto {
    fn from(r: &CertificateReport<f64>) -> Self {
        Self {
            lz_residual: r.lz_residual,
            min_eig: r.min_eig,
            lambda_d_plus_1: r.lambda_d_plus_1,
            lambda_max: r.lambda_max,
            cond: finite(r.cond),
            kkt_ok: r.kkt_ok,
            unique_ok: r.unique_ok,
        }
    }
}

#[derive(Debug, Serialize)]
pub struct CriticalityReportDto {
    pub grad_residual: f64,
    pub hess_min_eig: f64,
    pub is_first_order: bool,
    pub is_second_order: bool,
    pub tangent_dim: usize,
}

impl From<&CriticalityReport<f64>> for CriticalityReportDto {
    fn from(r: &CriticalityReport<f64>) -> Self {
        Self {
            grad_residual: r.grad_residual,
            hess_min_eig: r.hess_min_eig,
            is_first_order: r.is_first_order,
            is_second_order: r.is_second_order,
            tangent_dim: r.tangent_dim,
        }
    }
}

#[derive(Debug, Serialize)]
pub struct DualFeasibilityDto {
    pub alpha_used: f64,
    pub beta: f64,
    pub delta: f64,
    pub theta: f64,
    pub x_perp_min_eig: f64,
    pub x_perp_trace: f64,
    pub two_by_two_ok: bool,
    pub feasible: bool,
}

impl From<&DualFeasibilityReport<f64>> for DualFeasibilityDto {
    fn from(r: &DualFeasibilityReport<f64>) -> Self {
        Self {
            alpha_used: r.alpha_used,
            beta: r.beta,
            delta: r.delta,
            theta: r.theta,
            x_perp_min_eig: r.x_perp_min_eig,
            x_perp_trace: r.x_perp_trace,
            two_by_two_ok: r.two_by_two_ok,
            feasible: r.feasible,
        }
    }
}

#[derive(Debug, Serialize)]
pub struct SolveResultDto {
    pub objective: f64,
    pub grad_residual: f64,
    pub iters: usize,
    pub converged: bool,
    pub reason: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub recovery_error: Option<f64>,
    /// Final blocks, row-major `d x p` each.
    pub s_final: Vec<Vec<f64>>,
}

pub fn solve_result_dto(
    result: &sync_landscape::SolveResult64,
    recovery: Option<f64>,
) -> SolveResultDto {
    SolveResultDto {
        objective: result.objective,
        grad_residual: result.grad_residual,
        iters: result.iters,
        converged: result.converged,
        reason: format!("{:?}", result.reason),
        recovery_error: recovery,
        s_final: result
            .s_final
            .blocks()
            .iter()
            .map(flatten_row_major)
            .collect(),
    }
}

pub fn tuple_from_instance(inst: &SyncInstance64) -> Result<&StiefelTuple64> {
    inst.z
        .as_ref()
        .context("instance has no ground-truth Z; verification needs a candidate")
}
