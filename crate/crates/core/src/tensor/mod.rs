//! Sum-factorized application of 1D tensor-product bases to 3D element data.
//!
//! Every contraction consumes the fastest-changing index of its input and appends the
//! new index as the slowest one ("cyclic" ordering), so three stages return the data
//! to canonical `x`-fastest order without any physical transpose.

mod basis;

use std::sync::atomic::{AtomicU64, Ordering};

use nalgebra::DMatrix;
use thiserror::Error;

pub use basis::{lagrange_tables, Basis1D, Quadrature1D};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("shape mismatch: contraction matrix has {matrix_cols} columns but contracted extent is {tensor_extent}")]
    Shape { matrix_cols: usize, tensor_extent: usize },
    #[error("tensor data length {len} does not match extents {extents:?}")]
    DataLength { len: usize, extents: [usize; 3] },
    #[error("expected a cube with extent {expected}, got extents {extents:?}")]
    NotCubical { expected: usize, extents: [usize; 3] },
    #[error("invalid basis: {0}")]
    InvalidBasis(String),
    #[error("contraction backend failed: {0}")]
    Backend(String),
}

/// Logical tensor axis of a 3D element field.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Axis {
    X = 0,
    Y = 1,
    Z = 2,
}

pub const CANONICAL_ORDER: [Axis; 3] = [Axis::X, Axis::Y, Axis::Z];

/// Dense 3-index array stored contiguously; `order[s]` names the logical axis held in
/// storage slot `s` (slot 0 fastest).
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3 {
    extents: [usize; 3],
    order: [Axis; 3],
    data: Vec<f64>,
}

impl Tensor3 {
    pub fn new(extents: [usize; 3], order: [Axis; 3], data: Vec<f64>) -> Result<Self, TensorError> {
        if data.len() != extents.iter().product::<usize>() || extents.contains(&0) {
            return Err(TensorError::DataLength { len: data.len(), extents });
        }
        let mut seen = [false; 3];
        for a in order {
            seen[a as usize] = true;
        }
        assert!(seen.iter().all(|&s| s), "order {order:?} is not a permutation");
        Ok(Self { extents, order, data })
    }

    /// Tensor in canonical (x fastest) order.
    pub fn canonical(extents: [usize; 3], data: Vec<f64>) -> Result<Self, TensorError> {
        Self::new(extents, CANONICAL_ORDER, data)
    }

    pub fn zeros(extents: [usize; 3]) -> Self {
        Self { extents, order: CANONICAL_ORDER, data: vec![0.0; extents.iter().product()] }
    }

    pub fn from_fn(extents: [usize; 3], mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(extents.iter().product());
        for k in 0..extents[2] {
            for j in 0..extents[1] {
                for i in 0..extents[0] {
                    data.push(f(i, j, k));
                }
            }
        }
        Self { extents, order: CANONICAL_ORDER, data }
    }

    /// Extents in storage order (fastest first).
    pub fn extents(&self) -> [usize; 3] {
        self.extents
    }

    pub fn order(&self) -> [Axis; 3] {
        self.order
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Extent of a logical axis.
    pub fn logical_extent(&self, axis: Axis) -> usize {
        let slot = self.order.iter().position(|&a| a == axis).unwrap();
        self.extents[slot]
    }

    /// Entry at logical index `(x, y, z)` regardless of storage order.
    pub fn get(&self, x: usize, y: usize, z: usize) -> f64 {
        let logical = [x, y, z];
        let s = [
            logical[self.order[0] as usize],
            logical[self.order[1] as usize],
            logical[self.order[2] as usize],
        ];
        self.data[s[0] + self.extents[0] * (s[1] + self.extents[1] * s[2])]
    }

    /// Physically reorders the data to canonical order.
    pub fn to_canonical(&self) -> Tensor3 {
        if self.order == CANONICAL_ORDER {
            return self.clone();
        }
        let ext = [
            self.logical_extent(Axis::X),
            self.logical_extent(Axis::Y),
            self.logical_extent(Axis::Z),
        ];
        Tensor3::from_fn(ext, |x, y, z| self.get(x, y, z))
    }

    pub fn dot(&self, other: &Tensor3) -> f64 {
        debug_assert_eq!(self.order, other.order);
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }
}

/// One sum-factorization stage: `out(j, k, a) = sum_i b[(a, i)] * x(i, j, k)`.
///
/// Contracts the fastest storage index and appends the new index as slowest. Viewed as a
/// GEMM this is `C (m x n) = X (m x k) * B^T (k x n)` with `m` the product of the two
/// remaining extents, `n = b.nrows()`, `k = b.ncols()`.
pub fn contract_cyclic(b: &DMatrix<f64>, x: &Tensor3) -> Result<Tensor3, TensorError> {
    let [n0, n1, n2] = x.extents;
    let (q, d) = b.shape();
    if n0 != d {
        return Err(TensorError::Shape { matrix_cols: d, tensor_extent: n0 });
    }
    let m = n1 * n2;
    let mut out = vec![0.0; m * q];
    for a in 0..q {
        let dst = &mut out[a * m..(a + 1) * m];
        for (jk, slot) in dst.iter_mut().enumerate() {
            let src = &x.data[jk * d..(jk + 1) * d];
            let mut acc = 0.0;
            for (i, &v) in src.iter().enumerate() {
                acc += b[(a, i)] * v;
            }
            *slot = acc;
        }
    }
    Ok(Tensor3 {
        extents: [n1, n2, q],
        order: [x.order[1], x.order[2], x.order[0]],
        data: out,
    })
}

/// A contraction engine: something that can execute one cyclic stage.
pub trait Contract {
    fn contract(&self, b: &DMatrix<f64>, x: &Tensor3) -> Result<Tensor3, TensorError>;
}

/// Plain scalar-core contraction.
#[derive(Debug, Clone, Copy, Default)]
pub struct ScalarContract;

impl Contract for ScalarContract {
    fn contract(&self, b: &DMatrix<f64>, x: &Tensor3) -> Result<Tensor3, TensorError> {
        contract_cyclic(b, x)
    }
}

impl<C: Contract + ?Sized> Contract for &C {
    fn contract(&self, b: &DMatrix<f64>, x: &Tensor3) -> Result<Tensor3, TensorError> {
        (**self).contract(b, x)
    }
}

/// Thread-safe FLOP tally; each contraction stage adds `2 * m * n * k`.
#[derive(Debug, Default)]
pub struct FlopCounter(AtomicU64);

impl FlopCounter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&self, flops: u64) {
        self.0.fetch_add(flops, Ordering::Relaxed);
    }

    pub fn get(&self) -> u64 {
        self.0.load(Ordering::Relaxed)
    }

    pub fn reset(&self) {
        self.0.store(0, Ordering::Relaxed);
    }
}

/// Wraps a contraction engine and counts the useful FLOPs of every stage.
#[derive(Debug)]
pub struct Counted<'a, C> {
    pub inner: C,
    pub counter: &'a FlopCounter,
}

impl<C: Contract> Contract for Counted<'_, C> {
    fn contract(&self, b: &DMatrix<f64>, x: &Tensor3) -> Result<Tensor3, TensorError> {
        let out = self.inner.contract(b, x)?;
        let m = (x.extents[1] * x.extents[2]) as u64;
        self.counter.add(2 * m * (b.nrows() * b.ncols()) as u64);
        Ok(out)
    }
}

fn expect_cube(x: &Tensor3, extent: usize) -> Result<(), TensorError> {
    if x.extents != [extent; 3] {
        return Err(TensorError::NotCubical { expected: extent, extents: x.extents });
    }
    Ok(())
}

/// `Y(a,b,c) = sum_{ijk} B(a,i) B(b,j) B(c,k) X(i,j,k)` with any contraction engine.
pub fn apply_basis_3d_with<C: Contract>(engine: &C, b: &Basis1D, x: &Tensor3) -> Result<Tensor3, TensorError> {
    expect_cube(x, b.num_dofs_1d())?;
    let m = b.values();
    let s1 = engine.contract(m, x)?;
    let s2 = engine.contract(m, &s1)?;
    engine.contract(m, &s2)
}

pub fn apply_basis_3d(b: &Basis1D, x: &Tensor3) -> Result<Tensor3, TensorError> {
    apply_basis_3d_with(&ScalarContract, b, x)
}

/// Adjoint of [`apply_basis_3d_with`]: maps quadrature values back to DOFs.
pub fn apply_basis_transpose_3d_with<C: Contract>(
    engine: &C,
    b: &Basis1D,
    y: &Tensor3,
) -> Result<Tensor3, TensorError> {
    expect_cube(y, b.num_quad_1d())?;
    let bt = b.values().transpose();
    let s1 = engine.contract(&bt, y)?;
    let s2 = engine.contract(&bt, &s1)?;
    engine.contract(&bt, &s2)
}

pub fn apply_basis_transpose_3d(b: &Basis1D, y: &Tensor3) -> Result<Tensor3, TensorError> {
    apply_basis_transpose_3d_with(&ScalarContract, b, y)
}

/// Reference-space gradient at the quadrature points; component `r` uses the
/// derivative table along axis `r` and value tables along the other two.
pub fn apply_gradient_3d_with<C: Contract>(
    engine: &C,
    b: &Basis1D,
    x: &Tensor3,
) -> Result<[Tensor3; 3], TensorError> {
    expect_cube(x, b.num_dofs_1d())?;
    let (v, g) = (b.values(), b.gradients());
    // stage 1 is shared by the y and z components, stage 2 (B, B) by z
    let bx = engine.contract(v, x)?;
    let gx = engine.contract(g, x)?;
    let gx_by = engine.contract(v, &gx)?;
    let bx_gy = engine.contract(g, &bx)?;
    let bx_by = engine.contract(v, &bx)?;
    Ok([
        engine.contract(v, &gx_by)?,
        engine.contract(v, &bx_gy)?,
        engine.contract(g, &bx_by)?,
    ])
}

pub fn apply_gradient_3d(b: &Basis1D, x: &Tensor3) -> Result<[Tensor3; 3], TensorError> {
    apply_gradient_3d_with(&ScalarContract, b, x)
}

/// Adjoint of the gradient: `sum_r grad_r^T F_r`, mapping three quadrature fields to DOFs.
pub fn apply_gradient_transpose_3d_with<C: Contract>(
    engine: &C,
    b: &Basis1D,
    fields: &[Tensor3; 3],
) -> Result<Tensor3, TensorError> {
    for f in fields {
        expect_cube(f, b.num_quad_1d())?;
    }
    let vt = b.values().transpose();
    let gt = b.gradients().transpose();
    let tables: [[&DMatrix<f64>; 3]; 3] = [[&gt, &vt, &vt], [&vt, &gt, &vt], [&vt, &vt, &gt]];
    let mut acc: Option<Tensor3> = None;
    for (f, t) in fields.iter().zip(tables) {
        let s1 = engine.contract(t[0], f)?;
        let s2 = engine.contract(t[1], &s1)?;
        let s3 = engine.contract(t[2], &s2)?;
        match acc.as_mut() {
            None => acc = Some(s3),
            Some(total) => {
                for (a, v) in total.data.iter_mut().zip(&s3.data) {
                    *a += v;
                }
            }
        }
    }
    Ok(acc.unwrap())
}

pub fn apply_gradient_transpose_3d(b: &Basis1D, fields: &[Tensor3; 3]) -> Result<Tensor3, TensorError> {
    apply_gradient_transpose_3d_with(&ScalarContract, b, fields)
}
