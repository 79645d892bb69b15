//! Desk-scale laboratory for high-order finite element kernels on FP64 tensor cores.
//!
//! * [`tensor`]: sum-factorized basis application with cyclic index order.
//! * [`mma`]: scalar emulation of the `m8n8k4` FP64 MMA instruction and a tiling engine
//!   for irregular small GEMMs.
//! * [`bank`]: shared-memory bank model, conflict verification and mapping search.
//! * [`cost`]: closed-form shared-memory byte and FLOP accounting.
//! * [`fem`]: the acoustic–gravity block operator, lumped mass, and RK4 time stepping.

pub mod bank;
pub mod cost;
pub mod fem;
pub mod mma;
pub mod tensor;

pub use bank::{BankConfig, ConflictReport, SmemLayout};
pub use cost::CostBreakdown;
pub use mma::{FragmentLayout, GemmShape, IndexMapping};
pub use tensor::{Basis1D, Tensor3};
