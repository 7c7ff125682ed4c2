//! Multi-cell cluster-free NOMA simulation: channel generation, achievable
//! rates, a batched reverse-mode tape, the graph-network beamformer with
//! architecture search, bilevel training, ADMM baselines and an experiment
//! harness.

// `!(x > 0.0)` is used on purpose to reject NaN; index loops follow the
// subscripts of the formulas.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod admm;
pub mod autodiff;
pub mod bilevel;
pub mod channel;
pub mod error;
pub mod gnn;
pub mod harness;
pub mod rates;

pub use error::{Error, Result};
