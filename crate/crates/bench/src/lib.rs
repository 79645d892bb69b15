//! Fixtures shared by the benchmarks in `benches/`.

use hofx_core::fem::{build_mesh, Coefficients, Discretization, DiscretizationConfig, State};
use hofx_core::tensor::Tensor3;
use nalgebra::DMatrix;

/// Deterministic, non-repeating fill in `[-1, 1]`.
pub fn fill(n: usize, salt: f64) -> Vec<f64> {
    (0..n).map(|i| (0.7 * i as f64 + salt).sin()).collect()
}

pub fn matrix(rows: usize, cols: usize, salt: f64) -> DMatrix<f64> {
    DMatrix::from_vec(rows, cols, fill(rows * cols, salt))
}

pub fn cube(n: usize, salt: f64) -> Tensor3 {
    Tensor3::canonical([n; 3], fill(n * n * n, salt)).expect("extents match data")
}

/// Unit-coefficient discretization of the unit cube with `n^3` elements.
pub fn unit_cube(n: usize) -> Discretization {
    let mesh = build_mesh(n, n, n, [1.0; 3]).expect("positive extents");
    let ne = mesh.num_elements();
    Discretization::new(mesh, Coefficients::unit(ne), DiscretizationConfig::default()).expect("valid discretization")
}

pub fn state(disc: &Discretization) -> State {
    State::new(fill(disc.num_u(), 0.1), fill(disc.num_p(), 0.2))
}
