//! Acoustic block operator on structured hexahedral meshes.
//!
//! Velocity lives in a discontinuous (L²) space with three components, pressure in a
//! continuous (H¹) space. The operator `A` couples them through `(grad p, tau)` and
//! `-(u, grad v)`; the lumped mass `M` makes `M x' = -A x + f` explicit.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mma::MmaError;
use crate::tensor::TensorError;

pub mod mass;
pub mod mesh;
pub mod operator;
pub mod probe;
pub mod quad;
pub mod restriction;
pub mod snapshot;
pub mod time;

pub use mass::LumpedMass;
pub use mesh::{build_mesh, BoundaryTag, Face, Mesh};
pub use operator::{Backend, BlockOperator, Counters, Discretization, DiscretizationConfig};
pub use quad::{setup_quad_data, Coefficients, QuadData};
pub use restriction::Restriction;
pub use time::{acoustic_energy, rk4_step, Forcing};

#[derive(Debug, Error)]
pub enum FemError {
    #[error("mesh extent along {0} must be positive")]
    ZeroExtent(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Mma(#[from] MmaError),
    #[error("element {element}: {detail}")]
    Geometry { element: usize, detail: String },
    #[error("{what}: expected length {expected}, found {found}")]
    Dimension { what: String, expected: usize, found: usize },
    #[error("lumped {block} mass entry {index} is {value}, must be positive")]
    NonPositiveMass { block: &'static str, index: usize, value: f64 },
    #[error("non-finite state after step {step}")]
    Divergence { step: usize },
    #[error("time step must be positive and finite, got {0}")]
    InvalidTimeStep(f64),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("snapshot: {0}")]
    Snapshot(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// How the quadrature-point data `D` is obtained and how the two off-diagonal kernels
/// are scheduled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Strategy {
    /// `D` precomputed and read from memory; one pass per kernel.
    #[serde(rename = "pa")]
    PartialAssembly,
    /// `D` recomputed from vertex coordinates; one pass per kernel.
    #[serde(rename = "mf")]
    MatrixFree,
    /// Stored `D`, both kernels in one pass.
    #[serde(rename = "fused-pa")]
    FusedPartialAssembly,
    /// Recomputed `D`, both kernels in one pass.
    #[serde(rename = "fused-mf")]
    FusedMatrixFree,
}

impl Strategy {
    pub const ALL: [Strategy; 4] =
        [Strategy::PartialAssembly, Strategy::MatrixFree, Strategy::FusedPartialAssembly, Strategy::FusedMatrixFree];

    pub fn is_fused(self) -> bool {
        matches!(self, Strategy::FusedPartialAssembly | Strategy::FusedMatrixFree)
    }

    pub fn stores_d(self) -> bool {
        matches!(self, Strategy::PartialAssembly | Strategy::FusedPartialAssembly)
    }

    pub fn label(self) -> &'static str {
        match self {
            Strategy::PartialAssembly => "pa",
            Strategy::MatrixFree => "mf",
            Strategy::FusedPartialAssembly => "fused-pa",
            Strategy::FusedMatrixFree => "fused-mf",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Strategy {
    type Err = FemError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key = s.trim().to_ascii_lowercase().replace('_', "-");
        Strategy::ALL
            .into_iter()
            .find(|st| st.label() == key)
            .ok_or_else(|| FemError::Config(format!("unknown strategy '{s}' (pa, mf, fused-pa, fused-mf)")))
    }
}

/// Velocity and pressure DOFs; `eta` is the optional surface-height diagnostic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct State {
    /// Element-local velocity, index `(e * 3 + component) * d_u^3 + local`.
    pub u: Vec<f64>,
    /// Global pressure DOFs.
    pub p: Vec<f64>,
    #[serde(default)]
    pub eta: Option<Vec<f64>>,
}

impl State {
    pub fn new(u: Vec<f64>, p: Vec<f64>) -> Self {
        Self { u, p, eta: None }
    }

    pub fn zeros(num_u: usize, num_p: usize) -> Self {
        Self::new(vec![0.0; num_u], vec![0.0; num_p])
    }

    pub fn len(&self) -> usize {
        self.u.len() + self.p.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `[u; p]` as one vector.
    pub fn to_vec(&self) -> Vec<f64> {
        self.u.iter().chain(&self.p).copied().collect()
    }

    pub fn from_slice(x: &[f64], num_u: usize) -> Self {
        Self::new(x[..num_u].to_vec(), x[num_u..].to_vec())
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: f64, other: &State) {
        for (a, b) in self.u.iter_mut().zip(&other.u) {
            *a += alpha * b;
        }
        for (a, b) in self.p.iter_mut().zip(&other.p) {
            *a += alpha * b;
        }
    }

    pub fn scaled(&self, alpha: f64) -> State {
        State::new(self.u.iter().map(|x| alpha * x).collect(), self.p.iter().map(|x| alpha * x).collect())
    }

    pub fn dot(&self, other: &State) -> f64 {
        self.u.iter().zip(&other.u).chain(self.p.iter().zip(&other.p)).map(|(a, b)| a * b).sum()
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.u.iter().chain(&self.p).fold(0.0, |m, x| m.max(x.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.u.iter().chain(&self.p).all(|x| x.is_finite())
    }

    pub(crate) fn check(&self, num_u: usize, num_p: usize) -> Result<(), FemError> {
        if self.u.len() != num_u {
            return Err(FemError::Dimension { what: "velocity".into(), expected: num_u, found: self.u.len() });
        }
        if self.p.len() != num_p {
            return Err(FemError::Dimension { what: "pressure".into(), expected: num_p, found: self.p.len() });
        }
        Ok(())
    }
}
