//! Element restriction `G` for the continuous pressure space: local (E-vector) DOFs to
//! global (L-vector) DOFs on a structured hexahedral mesh.

use super::mesh::Mesh;

#[derive(Debug, Clone, PartialEq)]
pub struct Restriction {
    dofs_1d: usize,
    num_global: usize,
    global_dims: [usize; 3],
    /// `elem_dofs[e * d^3 + local]`, local index `i + d (j + d k)`.
    elem_dofs: Vec<usize>,
    multiplicity: Vec<f64>,
}

impl Restriction {
    /// Continuous nodal restriction for `dofs_1d` nodes per direction (`dofs_1d >= 2`);
    /// nodes on shared faces, edges and vertices get one global index.
    pub fn h1(mesh: &Mesh, dofs_1d: usize) -> Self {
        assert!(dofs_1d >= 2, "continuous space needs both endpoint nodes");
        let p = dofs_1d - 1;
        let gd = mesh.dims.map(|n| p * n + 1);
        let per = dofs_1d.pow(3);
        let mut elem_dofs = Vec::with_capacity(mesh.num_elements() * per);
        for ez in 0..mesh.dims[2] {
            for ey in 0..mesh.dims[1] {
                for ex in 0..mesh.dims[0] {
                    for k in 0..dofs_1d {
                        for j in 0..dofs_1d {
                            for i in 0..dofs_1d {
                                elem_dofs.push((p * ex + i) + gd[0] * ((p * ey + j) + gd[1] * (p * ez + k)));
                            }
                        }
                    }
                }
            }
        }
        let num_global = gd.iter().product();
        let mut multiplicity = vec![0.0; num_global];
        for &g in &elem_dofs {
            multiplicity[g] += 1.0;
        }
        Self { dofs_1d, num_global, global_dims: gd, elem_dofs, multiplicity }
    }

    pub fn dofs_1d(&self) -> usize {
        self.dofs_1d
    }

    pub fn dofs_per_element(&self) -> usize {
        self.dofs_1d.pow(3)
    }

    pub fn num_global(&self) -> usize {
        self.num_global
    }

    pub fn num_elements(&self) -> usize {
        self.elem_dofs.len() / self.dofs_per_element()
    }

    pub fn global_dims(&self) -> [usize; 3] {
        self.global_dims
    }

    pub fn element_dofs(&self, e: usize) -> &[usize] {
        let n = self.dofs_per_element();
        &self.elem_dofs[e * n..(e + 1) * n]
    }

    /// Number of elements sharing each global DOF (the diagonal of `G^T G`).
    pub fn multiplicity(&self) -> &[f64] {
        &self.multiplicity
    }

    pub fn gather(&self, e: usize, global: &[f64], local: &mut [f64]) {
        for (l, &g) in local.iter_mut().zip(self.element_dofs(e)) {
            *l = global[g];
        }
    }

    pub fn scatter_add(&self, e: usize, local: &[f64], global: &mut [f64]) {
        for (&l, &g) in local.iter().zip(self.element_dofs(e)) {
            global[g] += l;
        }
    }

    /// `G x`: global vector to all element blocks.
    pub fn gather_all(&self, global: &[f64]) -> Vec<f64> {
        self.elem_dofs.iter().map(|&g| global[g]).collect()
    }

    /// `G^T y`: sums element blocks into a global vector.
    pub fn scatter_add_all(&self, local: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.num_global];
        for (&l, &g) in local.iter().zip(&self.elem_dofs) {
            out[g] += l;
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::mesh::build_mesh;

    #[test]
    fn counts() {
        let mesh = build_mesh(2, 2, 2, [1.0; 3]).unwrap();
        let r = Restriction::h1(&mesh, 5);
        assert_eq!(r.num_global(), 9 * 9 * 9);
        assert!(r.multiplicity().iter().all(|&m| m >= 1.0));
        // center vertex shared by all 8 elements
        assert_eq!(r.multiplicity()[4 + 9 * (4 + 9 * 4)], 8.0);
    }

    #[test]
    fn scatter_after_gather_is_multiplicity() {
        let mesh = build_mesh(3, 2, 1, [1.0; 3]).unwrap();
        let r = Restriction::h1(&mesh, 4);
        let x: Vec<f64> = (0..r.num_global()).map(|i| (i as f64 * 0.37).sin()).collect();
        let y = r.scatter_add_all(&r.gather_all(&x));
        for ((yi, xi), m) in y.iter().zip(&x).zip(r.multiplicity()) {
            assert!((yi - m * xi).abs() < 1e-14);
        }
    }
}
