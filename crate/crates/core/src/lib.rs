//! Privacy-preserving federated rank tests and quantile estimation.
//!
//! Every center shares only k-anonymous frequency tables or aggregate
//! statistics. The numeric core is generic over [`Real`] (`f32`/`f64`);
//! the `*F64` / `*F32` aliases below are the concrete types the CLI uses.

// Coefficients keep their published digits; `!(a < b)` also rejects NaN.
#![allow(clippy::excessive_precision, clippy::neg_cmp_op_on_partial_ord)]

pub mod binning;
pub mod error;
pub mod join;
pub mod num;
pub mod quantile;
pub mod rank;
pub mod runtime;
pub mod sim;
pub mod special;
pub mod table;

pub use binning::{bin_single_center, raw_binning, GroupedSample, RawBinnedTable};
pub use error::{FedError, Group, Result};
pub use join::{
    audit_transcript, build_federated_table, center_rng, join_center, JoinResult, ReleaseTranscript,
};
pub use num::Real;
pub use rank::{CenterTestStat, CombinedTestResult, Sidedness, TestMethod};
pub use table::{ExtremePolicy, PrivacyParam, SummaryTable};

pub type SummaryTableF64 = SummaryTable<f64>;
pub type SummaryTableF32 = SummaryTable<f32>;
pub type GroupedSampleF64 = GroupedSample<f64>;
pub type GroupedSampleF32 = GroupedSample<f32>;
pub type JoinResultF64 = JoinResult<f64>;
pub type JoinResultF32 = JoinResult<f32>;
pub type YjFitF64 = quantile::YjFit<f64>;
pub type YjFitF32 = quantile::YjFit<f32>;
pub type QuantileEstimateF64 = quantile::QuantileEstimate<f64>;
