//! Quadrature-point data: geometry factors, material coefficients, and boundary faces.

use nalgebra::{DMatrix, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::mesh::{BoundaryTag, Face, Mesh};
use super::FemError;
use crate::tensor::{apply_gradient_3d, lagrange_tables, Basis1D, Quadrature1D, Tensor3};

/// Piecewise-constant material data plus a scale on the off-diagonal blocks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coefficients {
    /// Density per element.
    pub rho: Vec<f64>,
    /// Bulk modulus per element.
    pub bulk_modulus: Vec<f64>,
    /// Multiplies the `(grad p, tau)` and `-(u, grad v)` blocks; `1` is the physical
    /// operator, `0` switches the coupling off.
    pub coupling: f64,
    /// Gravitational acceleration for the free-surface term.
    pub gravity: f64,
}

pub const SEAWATER_DENSITY: f64 = 1025.0;
pub const SEAWATER_SOUND_SPEED: f64 = 1500.0;
pub const STANDARD_GRAVITY: f64 = 9.81;

impl Coefficients {
    pub fn uniform(num_elements: usize, rho: f64, bulk_modulus: f64) -> Self {
        Self { rho: vec![rho; num_elements], bulk_modulus: vec![bulk_modulus; num_elements], coupling: 1.0, gravity: STANDARD_GRAVITY }
    }

    /// Normalized `rho = K = 1` (unit sound speed).
    pub fn unit(num_elements: usize) -> Self {
        Self::uniform(num_elements, 1.0, 1.0)
    }

    pub fn seawater(num_elements: usize) -> Self {
        Self::uniform(num_elements, SEAWATER_DENSITY, SEAWATER_DENSITY * SEAWATER_SOUND_SPEED * SEAWATER_SOUND_SPEED)
    }

    pub fn sound_speed(&self, e: usize) -> f64 {
        (self.bulk_modulus[e] / self.rho[e]).sqrt()
    }

    /// Acoustic impedance `Z = rho c`.
    pub fn impedance(&self, e: usize) -> f64 {
        self.rho[e] * self.sound_speed(e)
    }

    pub(crate) fn check(&self, num_elements: usize) -> Result<(), FemError> {
        for (name, v) in [("rho", &self.rho), ("bulk_modulus", &self.bulk_modulus)] {
            if v.len() != num_elements {
                return Err(FemError::Dimension { what: name.into(), expected: num_elements, found: v.len() });
            }
            if let Some(e) = v.iter().position(|x| !x.is_finite() || *x <= 0.0) {
                return Err(FemError::Config(format!("{name} must be positive, element {e} has {}", v[e])));
            }
        }
        if !self.coupling.is_finite() || !(self.gravity > 0.0) {
            return Err(FemError::Config("coupling must be finite and gravity positive".into()));
        }
        Ok(())
    }
}

/// Trilinear map of an element at reference point `xi`.
pub fn trilinear_point(coords: &[[f64; 3]; 8], xi: [f64; 3]) -> [f64; 3] {
    let mut x = [0.0; 3];
    for (v, c) in coords.iter().enumerate() {
        let w: f64 = (0..3)
            .map(|r| if (v >> r) & 1 == 1 { 0.5 * (1.0 + xi[r]) } else { 0.5 * (1.0 - xi[r]) })
            .product();
        for i in 0..3 {
            x[i] += w * c[i];
        }
    }
    x
}

/// `J[i][r] = d x_i / d xi_r` of the trilinear map at `xi`.
pub fn trilinear_jacobian(coords: &[[f64; 3]; 8], xi: [f64; 3]) -> Matrix3<f64> {
    let mut j = Matrix3::zeros();
    for (v, c) in coords.iter().enumerate() {
        for r in 0..3 {
            let mut w = 1.0;
            for s in 0..3 {
                let plus = (v >> s) & 1 == 1;
                w *= if s == r {
                    if plus { 0.5 } else { -0.5 }
                } else if plus {
                    0.5 * (1.0 + xi[s])
                } else {
                    0.5 * (1.0 - xi[s])
                };
            }
            for i in 0..3 {
                j[(i, r)] += w * c[i];
            }
        }
    }
    j
}

/// Shared tables for evaluating geometry at the volume quadrature points.
#[derive(Debug, Clone, PartialEq)]
pub struct GeometryTables {
    /// Two-node linear basis sampled at the 1D rule.
    pub linear: Basis1D,
    /// Tensor-product weights, `a` fastest.
    pub weights: Vec<f64>,
}

impl GeometryTables {
    pub fn new(rule: &Quadrature1D) -> Result<Self, FemError> {
        let linear = Basis1D::lagrange(vec![-1.0, 1.0], rule.clone())?;
        let q = rule.len();
        let mut weights = Vec::with_capacity(q * q * q);
        for c in 0..q {
            for b in 0..q {
                for a in 0..q {
                    weights.push(rule.weights[a] * rule.weights[b] * rule.weights[c]);
                }
            }
        }
        Ok(Self { linear, weights })
    }

    pub fn num_points(&self) -> usize {
        self.weights.len()
    }

    /// Fills `d[qp * 9 + c * 3 + r] = coupling * w det(J) (J^-T)[c][r]` and
    /// `wdet[qp] = w det(J)` for element `e`.
    pub fn element_factors(
        &self,
        mesh: &Mesh,
        e: usize,
        coupling: f64,
        d: &mut [f64],
        wdet: &mut [f64],
    ) -> Result<(), FemError> {
        let coords = mesh.element_coords(e);
        let comps: Vec<[Tensor3; 3]> = (0..3)
            .map(|i| {
                let t = Tensor3::from_fn([2, 2, 2], |a, b, c| coords[a + 2 * b + 4 * c][i]);
                apply_gradient_3d(&self.linear, &t)
            })
            .collect::<Result<_, _>>()?;
        for (qp, w) in self.weights.iter().enumerate() {
            let jac = Matrix3::from_fn(|i, r| comps[i][r].data()[qp]);
            let det = jac.determinant();
            if !(det > 0.0) {
                return Err(FemError::Geometry { element: e, detail: format!("det J = {det:e} at quadrature point {qp}") });
            }
            let inv = jac.try_inverse().ok_or_else(|| FemError::Geometry { element: e, detail: "singular Jacobian".into() })?;
            let scale = w * det;
            wdet[qp] = scale;
            let block = &mut d[qp * 9..qp * 9 + 9];
            for c in 0..3 {
                for r in 0..3 {
                    block[c * 3 + r] = coupling * scale * inv[(r, c)];
                }
            }
        }
        Ok(())
    }
}

/// Precomputed per-quadrature-point data (the partial-assembly `D`).
#[derive(Debug, Clone, PartialEq)]
pub struct QuadData {
    pub num_elements: usize,
    pub points_per_element: usize,
    /// Gradient-block factors, 9 per point: `coupling * w det(J) J^-T`.
    pub grad: Vec<f64>,
    /// `w det(J)` per point.
    pub wdet: Vec<f64>,
    /// `rho w det(J)` per point.
    pub rho_wdet: Vec<f64>,
    /// `K^-1 w det(J)` per point.
    pub kinv_wdet: Vec<f64>,
}

impl QuadData {
    pub fn element_grad(&self, e: usize) -> &[f64] {
        let n = self.points_per_element * 9;
        &self.grad[e * n..(e + 1) * n]
    }

    pub fn element_range(&self, e: usize) -> std::ops::Range<usize> {
        e * self.points_per_element..(e + 1) * self.points_per_element
    }
}

pub fn setup_quad_data(mesh: &Mesh, tables: &GeometryTables, coefficients: &Coefficients) -> Result<QuadData, FemError> {
    coefficients.check(mesh.num_elements())?;
    let nq = tables.num_points();
    let ne = mesh.num_elements();
    let mut grad = vec![0.0; ne * nq * 9];
    let mut wdet = vec![0.0; ne * nq];
    for e in 0..ne {
        tables.element_factors(mesh, e, coefficients.coupling, &mut grad[e * nq * 9..(e + 1) * nq * 9], &mut wdet[e * nq..(e + 1) * nq])?;
    }
    let per_elem = |f: &dyn Fn(usize) -> f64| -> Vec<f64> { wdet.iter().enumerate().map(|(i, w)| f(i / nq) * w).collect() };
    let rho_wdet = per_elem(&|e| coefficients.rho[e]);
    let kinv_wdet = per_elem(&|e| 1.0 / coefficients.bulk_modulus[e]);
    Ok(QuadData { num_elements: ne, points_per_element: nq, grad, wdet, rho_wdet, kinv_wdet })
}

/// One tagged boundary face with its trace basis on the face quadrature points.
#[derive(Debug, Clone, PartialEq)]
pub struct FaceData {
    pub element: usize,
    pub face: Face,
    pub tag: BoundaryTag,
    /// Element-local pressure DOFs with a nonzero trace on this face.
    pub local_dofs: Vec<usize>,
    /// `points x local_dofs` trace values.
    pub trace: DMatrix<f64>,
    /// Quadrature weight times surface Jacobian.
    pub weights: Vec<f64>,
    pub points: Vec<[f64; 3]>,
}

impl FaceData {
    /// `trace^T diag(coef * weights) trace x`, accumulated into `out`.
    pub fn apply_mass(&self, coef: f64, x: &[f64], out: &mut [f64]) {
        let vals = &self.trace * nalgebra::DVector::from_column_slice(x);
        let scaled = nalgebra::DVector::from_iterator(vals.len(), vals.iter().zip(&self.weights).map(|(v, w)| coef * w * v));
        let back = self.trace.transpose() * scaled;
        for (o, b) in out.iter_mut().zip(back.iter()) {
            *o += b;
        }
    }

    /// `trace^T (weights * values)`: the face load of quadrature values.
    pub fn load(&self, values: &[f64]) -> Vec<f64> {
        let scaled = nalgebra::DVector::from_iterator(values.len(), values.iter().zip(&self.weights).map(|(v, w)| v * w));
        (self.trace.transpose() * scaled).iter().copied().collect()
    }
}

/// Face data for every boundary face of `mesh` under the nodal pressure basis.
pub fn setup_faces(mesh: &Mesh, pressure: &Basis1D, rule: &Quadrature1D) -> Result<Vec<FaceData>, FemError> {
    let d = pressure.num_dofs_1d();
    let q = rule.len();
    let nodes = pressure.nodes();
    let (vals, _) = lagrange_tables(nodes, &rule.points);
    let (ends, _) = lagrange_tables(nodes, &[-1.0, 1.0]);
    let mut faces = Vec::with_capacity(mesh.boundary.len());
    for bf in &mesh.boundary {
        let coords = mesh.element_coords(bf.element);
        let (axis, plus) = bf.face.axis();
        let tang: Vec<usize> = (0..3).filter(|&r| r != axis).collect();
        let end_row = plus as usize;
        let mut local_dofs = Vec::new();
        for k in 0..d {
            for j in 0..d {
                for i in 0..d {
                    let idx = [i, j, k];
                    if ends[(end_row, idx[axis])].abs() > 1e-14 {
                        local_dofs.push(i + d * (j + d * k));
                    }
                }
            }
        }
        let mut trace = DMatrix::zeros(q * q, local_dofs.len());
        let mut weights = Vec::with_capacity(q * q);
        let mut points = Vec::with_capacity(q * q);
        for b in 0..q {
            for a in 0..q {
                let row = a + q * b;
                let mut xi = [0.0; 3];
                xi[axis] = if plus { 1.0 } else { -1.0 };
                xi[tang[0]] = rule.points[a];
                xi[tang[1]] = rule.points[b];
                let jac = trilinear_jacobian(&coords, xi);
                let t1: Vector3<f64> = jac.column(tang[0]).into();
                let t2: Vector3<f64> = jac.column(tang[1]).into();
                let area = t1.cross(&t2).norm();
                if !(area > 0.0) {
                    return Err(FemError::Geometry { element: bf.element, detail: format!("degenerate face {:?}", bf.face) });
                }
                weights.push(rule.weights[a] * rule.weights[b] * area);
                points.push(trilinear_point(&coords, xi));
                for (col, &l) in local_dofs.iter().enumerate() {
                    let idx = [l % d, (l / d) % d, l / (d * d)];
                    let qi = [a, b];
                    let mut v = ends[(end_row, idx[axis])];
                    for (t, &ax) in tang.iter().enumerate() {
                        v *= vals[(qi[t], idx[ax])];
                    }
                    trace[(row, col)] = v;
                }
            }
        }
        faces.push(FaceData { element: bf.element, face: bf.face, tag: bf.tag, local_dofs, trace, weights, points });
    }
    Ok(faces)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::mesh::build_mesh;

    #[test]
    fn affine_jacobian_closed_form() {
        let mesh = build_mesh(2, 1, 1, [2.0, 1.0, 1.0]).unwrap();
        let rule = Quadrature1D::gauss_legendre(5);
        let t = GeometryTables::new(&rule).unwrap();
        let mut d = vec![0.0; 125 * 9];
        let mut wdet = vec![0.0; 125];
        t.element_factors(&mesh, 1, 1.0, &mut d, &mut wdet).unwrap();
        for (qp, w) in t.weights.iter().enumerate() {
            // each element is a unit cube: J = I/2, det = 1/8
            assert!((wdet[qp] - w / 8.0).abs() < 1e-15);
            for c in 0..3 {
                for r in 0..3 {
                    let e = if c == r { w / 8.0 * 2.0 } else { 0.0 };
                    assert!((d[qp * 9 + c * 3 + r] - e).abs() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn inverted_element_rejected() {
        let mut mesh = build_mesh(1, 1, 1, [1.0; 3]).unwrap();
        mesh.vertices.swap(0, 1);
        mesh.vertices.swap(2, 3);
        mesh.vertices.swap(4, 5);
        mesh.vertices.swap(6, 7);
        let rule = Quadrature1D::gauss_legendre(3);
        let err = setup_quad_data(&mesh, &GeometryTables::new(&rule).unwrap(), &Coefficients::unit(1)).unwrap_err();
        assert!(matches!(err, FemError::Geometry { element: 0, .. }));
    }

    #[test]
    fn face_weights_sum_to_area() {
        let mesh = build_mesh(1, 1, 1, [2.0, 3.0, 5.0]).unwrap();
        let rule = Quadrature1D::gauss_legendre(4);
        let basis = Basis1D::gll(4, 4).unwrap();
        let faces = setup_faces(&mesh, &basis, &rule).unwrap();
        for f in &faces {
            let area: f64 = f.weights.iter().sum();
            let expected = match f.face.axis().0 {
                0 => 15.0,
                1 => 10.0,
                _ => 6.0,
            };
            assert!((area - expected).abs() < 1e-12);
            assert_eq!(f.local_dofs.len(), 25);
        }
    }

    #[test]
    fn trilinear_helpers_agree_on_box() {
        let mesh = build_mesh(1, 1, 1, [2.0, 4.0, 6.0]).unwrap();
        let c = mesh.element_coords(0);
        assert_eq!(trilinear_point(&c, [0.0; 3]), [1.0, 2.0, 3.0]);
        let j = trilinear_jacobian(&c, [0.3, -0.2, 0.9]);
        assert!((j - Matrix3::from_diagonal(&Vector3::new(1.0, 2.0, 3.0))).norm() < 1e-15);
    }
}
