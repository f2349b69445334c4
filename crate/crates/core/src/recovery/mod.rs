//! Recovery of `(A, B)` from observational and interventional data.
//!
//! Steps: estimate the observational mixing `C` and each response matrix
//! `D_i`, order the variables from intervention effects, align the columns of
//! each `D_i` with `C`, factor every `C - D_i` as `g a^T`, assemble
//! `G = (I - B)^{-1}` from the `g` columns, then polish everything jointly.

pub mod align;
pub mod assemble;
pub mod coupled;
pub mod evaluate;
pub mod order;
pub mod pipeline;
pub mod rank1;
pub mod refine;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::linalg;
use crate::model::ColumnAlignment;

pub use align::{align_columns, AlignMode, AlignOptions};
pub use assemble::{assemble_ab, TriangularPolicy};
pub use evaluate::{evaluate, Metrics};
pub use order::{causal_order, detect_affected, EffectMatrix};
pub use pipeline::{recover_exact, recover_pipeline, RecoveryOptions, ResponseEstimator};
pub use rank1::{rank1_differences, Rank1Factor};
pub use refine::{joint_objective, joint_refine, JointProblem, JointState, RefineOptions};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryResult {
    #[serde(rename = "A_hat", with = "linalg::rows")]
    pub a_hat: DMatrix<f64>,
    /// In original variable coordinates; strictly lower triangular after
    /// reordering by `causal_order`.
    #[serde(rename = "B_hat", with = "linalg::rows")]
    pub b_hat: DMatrix<f64>,
    pub causal_order: Vec<usize>,
    /// Intervened variables, in the order of the per-intervention fields.
    pub targets: Vec<usize>,
    pub alignments: Vec<ColumnAlignment>,
    pub rank1_ratios: Vec<f64>,
    pub objective_trace: Vec<f64>,
    /// Variables without an intervention, whose incoming edges were assumed
    /// absent.
    pub unidentified: Vec<usize>,
    /// Entries of `G` above the diagonal that exceeded the tolerance and were
    /// zeroed, as `(row, col, value)`.
    pub triangular_flags: Vec<(usize, usize, f64)>,
    /// Index of the restart that produced this result.
    pub restart: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metrics: Option<Metrics>,
}

impl RecoveryResult {
    pub fn objective_final(&self) -> f64 {
        self.objective_trace.last().copied().unwrap_or(f64::NAN)
    }

    pub fn to_json(&self) -> crate::Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}
