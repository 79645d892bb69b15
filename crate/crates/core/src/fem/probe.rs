//! Explicit matrices of linear maps by applying them to unit vectors.

use nalgebra::DMatrix;

use super::mass::LumpedMass;
use super::operator::BlockOperator;
use super::{FemError, State};

/// Column `j` is `f(e_j)`.
pub fn dense_probe<E>(n: usize, mut f: impl FnMut(&[f64]) -> Result<Vec<f64>, E>) -> Result<DMatrix<f64>, E> {
    let mut x = vec![0.0; n];
    let mut columns = Vec::with_capacity(n);
    for j in 0..n {
        x[j] = 1.0;
        columns.push(f(&x)?);
        x[j] = 0.0;
    }
    let rows = columns.first().map_or(0, Vec::len);
    Ok(DMatrix::from_fn(rows, n, |i, j| columns[j][i]))
}

/// Matrix of `A` on `[u; p]`.
pub fn probe_block(op: &BlockOperator) -> Result<DMatrix<f64>, FemError> {
    let nu = op.discretization().num_u();
    let n = nu + op.discretization().num_p();
    dense_probe(n, |x| op.apply_block(&State::from_slice(x, nu)).map(|s| s.to_vec()))
}

/// Matrix of `K_fused` on the velocity block.
pub fn probe_normal(op: &BlockOperator) -> Result<DMatrix<f64>, FemError> {
    let disc = op.discretization();
    let (nu, np) = (disc.num_u(), disc.num_p());
    dense_probe(nu, |x| op.apply_fused_normal(&State::new(x.to_vec(), vec![0.0; np])).map(|s| s.u))
}

/// Matrix of the lumped mass on `[u; p]`.
pub fn probe_mass(mass: &LumpedMass) -> DMatrix<f64> {
    let nu = mass.u.len();
    dense_probe::<std::convert::Infallible>(nu + mass.p.len(), |x| Ok(mass.apply(&State::from_slice(x, nu)).to_vec()))
        .unwrap_or_else(|e| match e {})
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn probes_a_small_matrix() {
        let m = dense_probe::<()>(2, |x| Ok(vec![x[0] + 2.0 * x[1], 3.0 * x[1], x[0]])).unwrap();
        assert_eq!(m, DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 0.0, 3.0, 1.0, 0.0]));
    }
}
