//! Bit-exact simulation and analysis of probabilistic approximate
//! computation (PAC) for bit-serial compute-in-memory systems.
//!
//! The crate computes multi-bit MACs one (activation-bit, weight-bit) cycle
//! at a time, replaces selected cycles with point estimates built from
//! bit-level sparsity counts, and quantifies the resulting error, cycle
//! savings, memory-traffic savings and energy.
//!
//! Module map:
//! - [`bitplane`]: quantized tensors, bit-plane decomposition, sparsity counts
//! - [`pac`]: exact / estimated / hybrid MACs, speculation, cycle maps
//! - [`encoder`]: the on-die sparsity encoder model and compression stats
//! - [`inference`]: a desk-scale quantized inference engine over both paths
//! - [`analysis`]: Monte-Carlo error experiments and the analytic oracle
//! - [`costmodel`]: cycle, traffic and energy accounting

pub mod analysis;
pub mod bitplane;
pub mod bitvec;
pub mod costmodel;
pub mod encoder;
pub mod error;
pub mod inference;
pub mod pac;

pub use bitplane::{
    count_sparsity, count_sparsity_groups, decompose, recompose, BitPlanes, QuantTensor,
    SparsityVector,
};
pub use bitvec::BitVec;
pub use error::{Error, Result};
pub use pac::{
    configure_cycles, exact_binary_mac, exact_mac, hybrid_mac, pac_estimate, speculate, CycleMap,
    Domain, Thresholds,
};
