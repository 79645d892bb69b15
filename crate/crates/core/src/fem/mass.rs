//! Row-sum lumped mass for both blocks.

use serde::{Deserialize, Serialize};

use super::mesh::BoundaryTag;
use super::operator::Discretization;
use super::{FemError, State};
use crate::tensor::{apply_basis_transpose_3d, Tensor3};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LumpedMass {
    /// Diagonal of `(rho u, tau)`, same layout as the velocity block.
    pub u: Vec<f64>,
    /// Diagonal of `(K^-1 p, v)` plus `<(rho g)^-1 p, v>` on the surface when enabled.
    pub p: Vec<f64>,
}

impl LumpedMass {
    /// Row sums of the consistent mass matrices. Because the bases sum to one at every
    /// quadrature point, a row sum is `B^T` applied to the weighted coefficient.
    pub fn new(disc: &Discretization) -> Result<Self, FemError> {
        let q = disc.config.num_quad;
        let n = disc.velocity_dofs_per_component();
        let quad = &disc.quad;
        let mut u = Vec::with_capacity(disc.num_u());
        let mut p_local = Vec::with_capacity(disc.restriction.dofs_per_element() * disc.mesh.num_elements());
        for e in 0..disc.mesh.num_elements() {
            let r = quad.element_range(e);
            let mu = apply_basis_transpose_3d(&disc.velocity, &Tensor3::canonical([q; 3], quad.rho_wdet[r.clone()].to_vec())?)?;
            debug_assert_eq!(mu.len(), n);
            for _ in 0..3 {
                u.extend_from_slice(mu.data());
            }
            let mp = apply_basis_transpose_3d(&disc.pressure, &Tensor3::canonical([q; 3], quad.kinv_wdet[r].to_vec())?)?;
            p_local.extend_from_slice(mp.data());
        }
        let mut p = disc.restriction.scatter_add_all(&p_local);
        if disc.config.free_surface {
            let g = disc.coefficients.gravity;
            for f in disc.faces.iter().filter(|f| f.tag == BoundaryTag::Surface) {
                let coef = 1.0 / (disc.coefficients.rho[f.element] * g);
                let ones = vec![coef; f.weights.len()];
                let dofs = disc.restriction.element_dofs(f.element);
                for (&l, v) in f.local_dofs.iter().zip(f.load(&ones)) {
                    p[dofs[l]] += v;
                }
            }
        }
        let mass = Self { u, p };
        mass.check()?;
        Ok(mass)
    }

    fn check(&self) -> Result<(), FemError> {
        for (block, v) in [("velocity", &self.u), ("pressure", &self.p)] {
            if let Some(index) = v.iter().position(|x| !(*x > 0.0) || !x.is_finite()) {
                return Err(FemError::NonPositiveMass { block, index, value: v[index] });
            }
        }
        Ok(())
    }

    /// `M^-1 r`, componentwise.
    pub fn apply_mass_inverse(&self, residual: &State) -> Result<State, FemError> {
        residual.check(self.u.len(), self.p.len())?;
        self.check()?;
        let div = |r: &[f64], m: &[f64]| r.iter().zip(m).map(|(a, b)| a / b).collect::<Vec<_>>();
        Ok(State::new(div(&residual.u, &self.u), div(&residual.p, &self.p)))
    }

    /// `M x`, componentwise.
    pub fn apply(&self, x: &State) -> State {
        let mul = |r: &[f64], m: &[f64]| r.iter().zip(m).map(|(a, b)| a * b).collect::<Vec<_>>();
        State::new(mul(&x.u, &self.u), mul(&x.p, &self.p))
    }
}
