//! One-dimensional nodal bases and quadrature rules on the reference interval [-1, 1].

use nalgebra::DMatrix;

use super::TensorError;

const NEWTON_TOL: f64 = 1e-15;
const NEWTON_MAX_ITERS: usize = 100;

/// Legendre polynomial `P_n(x)` and its derivative, by the three-term recurrence.
fn legendre(n: usize, x: f64) -> (f64, f64) {
    if n == 0 {
        return (1.0, 0.0);
    }
    let (mut p_prev, mut p) = (1.0, x);
    for j in 2..=n {
        let jf = j as f64;
        let next = ((2.0 * jf - 1.0) * x * p - (jf - 1.0) * p_prev) / jf;
        p_prev = p;
        p = next;
    }
    // (1 - x^2) P_n' = n (P_{n-1} - x P_n)
    let dp = if (1.0 - x * x).abs() < f64::EPSILON {
        let nf = n as f64;
        let sign = if x > 0.0 || n % 2 == 1 { 1.0 } else { -1.0 };
        sign * nf * (nf + 1.0) / 2.0
    } else {
        n as f64 * (p_prev - x * p) / (1.0 - x * x)
    };
    (p, dp)
}

/// A one-dimensional quadrature rule.
#[derive(Debug, Clone, PartialEq)]
pub struct Quadrature1D {
    pub points: Vec<f64>,
    pub weights: Vec<f64>,
}

impl Quadrature1D {
    /// Gauss–Legendre rule with `n` points, exact for polynomials of degree `2n - 1`.
    pub fn gauss_legendre(n: usize) -> Self {
        assert!(n >= 1, "quadrature needs at least one point");
        let mut points = vec![0.0; n];
        let mut weights = vec![0.0; n];
        for i in 0..n.div_ceil(2) {
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            for _ in 0..NEWTON_MAX_ITERS {
                let (p, dp) = legendre(n, x);
                let dx = p / dp;
                x -= dx;
                if dx.abs() < NEWTON_TOL {
                    break;
                }
            }
            let (_, dp) = legendre(n, x);
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            points[i] = -x;
            points[n - 1 - i] = x;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        if n % 2 == 1 {
            points[n / 2] = 0.0;
        }
        Self { points, weights }
    }

    /// Gauss–Lobatto–Legendre rule with `n >= 2` points (endpoints included).
    pub fn gauss_lobatto(n: usize) -> Self {
        assert!(n >= 2, "Gauss-Lobatto needs at least two points");
        let order = n - 1;
        let mut points = vec![0.0; n];
        let mut weights = vec![0.0; n];
        points[0] = -1.0;
        points[n - 1] = 1.0;
        // interior nodes are the roots of P'_{n-1}
        for i in 1..n.div_ceil(2) {
            let mut x = -(std::f64::consts::PI * i as f64 / order as f64).cos();
            for _ in 0..NEWTON_MAX_ITERS {
                // f = P'_N, f' from the Legendre ODE: (1-x^2) P'' = 2x P' - N(N+1) P
                let (p, dp) = legendre(order, x);
                let nf = order as f64;
                let d2p = (2.0 * x * dp - nf * (nf + 1.0) * p) / (1.0 - x * x);
                let dx = dp / d2p;
                x -= dx;
                if dx.abs() < NEWTON_TOL {
                    break;
                }
            }
            points[i] = x;
            points[n - 1 - i] = -x;
        }
        if n % 2 == 1 {
            points[n / 2] = 0.0;
        }
        let nf = order as f64;
        for (w, &x) in weights.iter_mut().zip(&points) {
            let (p, _) = legendre(order, x);
            *w = 2.0 / (nf * (nf + 1.0) * p * p);
        }
        Self { points, weights }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Lagrange interpolation values and derivatives of the basis through `nodes`, at `points`.
///
/// Returns two `points.len() x nodes.len()` matrices.
pub fn lagrange_tables(nodes: &[f64], points: &[f64]) -> (DMatrix<f64>, DMatrix<f64>) {
    let d = nodes.len();
    let q = points.len();
    let mut values = DMatrix::zeros(q, d);
    let mut grads = DMatrix::zeros(q, d);
    for (a, &x) in points.iter().enumerate() {
        for i in 0..d {
            let mut denom = 1.0;
            let mut value = 1.0;
            for (j, &xj) in nodes.iter().enumerate() {
                if j != i {
                    denom *= nodes[i] - xj;
                    value *= x - xj;
                }
            }
            // derivative of prod_{j != i}(x - x_j) by the product rule
            let mut deriv = 0.0;
            for l in 0..d {
                if l == i {
                    continue;
                }
                let mut term = 1.0;
                for (j, &xj) in nodes.iter().enumerate() {
                    if j != i && j != l {
                        term *= x - xj;
                    }
                }
                deriv += term;
            }
            values[(a, i)] = value / denom;
            grads[(a, i)] = deriv / denom;
        }
    }
    (values, grads)
}

/// A 1D tensor-product factor: `q x d` matrices of basis values and derivatives
/// evaluated at the quadrature points.
#[derive(Debug, Clone, PartialEq)]
pub struct Basis1D {
    nodes: Vec<f64>,
    quadrature: Quadrature1D,
    values: DMatrix<f64>,
    gradients: DMatrix<f64>,
}

impl Basis1D {
    /// Nodal basis of polynomial `order` on Gauss–Lobatto–Legendre nodes, sampled at a
    /// `num_quad`-point Gauss–Legendre rule.
    pub fn gll(order: usize, num_quad: usize) -> Result<Self, TensorError> {
        if num_quad == 0 {
            return Err(TensorError::InvalidBasis("need at least one quadrature point".into()));
        }
        let nodes = if order == 0 {
            vec![0.0]
        } else {
            Quadrature1D::gauss_lobatto(order + 1).points
        };
        let quadrature = Quadrature1D::gauss_legendre(num_quad);
        Self::lagrange(nodes, quadrature)
    }

    /// Nodal Lagrange basis through arbitrary distinct `nodes`, sampled at `quadrature`.
    pub fn lagrange(nodes: Vec<f64>, quadrature: Quadrature1D) -> Result<Self, TensorError> {
        if nodes.is_empty() || quadrature.is_empty() {
            return Err(TensorError::InvalidBasis("empty node or point set".into()));
        }
        if quadrature.points.len() != quadrature.weights.len() {
            return Err(TensorError::InvalidBasis("points/weights length mismatch".into()));
        }
        for (i, a) in nodes.iter().enumerate() {
            if nodes[..i].iter().any(|b| (a - b).abs() < 1e-14) {
                return Err(TensorError::InvalidBasis(format!("repeated node {a}")));
            }
        }
        let (values, gradients) = lagrange_tables(&nodes, &quadrature.points);
        Ok(Self { nodes, quadrature, values, gradients })
    }

    /// Builds a basis directly from value/derivative tables (no nodal structure implied).
    pub fn from_tables(
        values: DMatrix<f64>,
        gradients: DMatrix<f64>,
        quadrature: Quadrature1D,
    ) -> Result<Self, TensorError> {
        if values.shape() != gradients.shape() {
            return Err(TensorError::InvalidBasis(format!(
                "values {:?} and gradients {:?} differ in shape",
                values.shape(),
                gradients.shape()
            )));
        }
        if values.nrows() != quadrature.len() || values.nrows() == 0 || values.ncols() == 0 {
            return Err(TensorError::InvalidBasis(format!(
                "table has {} rows but rule has {} points",
                values.nrows(),
                quadrature.len()
            )));
        }
        let nodes = (0..values.ncols()).map(|i| i as f64).collect();
        Ok(Self { nodes, quadrature, values, gradients })
    }

    pub fn num_dofs_1d(&self) -> usize {
        self.values.ncols()
    }

    pub fn num_quad_1d(&self) -> usize {
        self.values.nrows()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn quadrature(&self) -> &Quadrature1D {
        &self.quadrature
    }

    /// `q x d` basis values; entry `(a, i)` is basis function `i` at point `a`.
    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    /// `q x d` basis derivatives.
    pub fn gradients(&self) -> &DMatrix<f64> {
        &self.gradients
    }

    /// Largest deviation of a row sum of `values` from one.
    pub fn partition_of_unity_defect(&self) -> f64 {
        self.values
            .row_iter()
            .map(|row| (row.sum() - 1.0).abs())
            .fold(0.0, f64::max)
    }
}
