//! Non-intrusive reduced-order modeling of nonlinear dynamical systems with
//! analytically known, spatially local nonlinear terms.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod deim;
pub mod error;
pub mod intrusive;
pub mod integrate;
pub mod kronops;
pub mod models;
pub mod opinf;
pub mod pipeline;
pub mod pod;
pub mod romsim;

pub use deim::{DeimMode, DeimOperator};
pub use error::{Error, ErrorClass, Result};
pub use integrate::{IntegratorSpec, Trajectory};
pub use kronops::CompressedQuadraticOp;
pub use models::{BenchmarkConfig, FullOrderModel};
pub use opinf::{InferredOperators, SampleMask};
pub use pod::{Basis, PodBasis, PodMode};
pub use romsim::{ErrorReport, ReducedModel, RomKind, RunStatus};
