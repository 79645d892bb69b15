//! Independent oracles shared by the integration tests. Nothing here calls the
//! sum-factorization, DMMA, bank or operator code under test.
#![allow(dead_code)]

use std::collections::HashSet;

use hofx_core::fem::{Discretization, State};
use hofx_core::mma::IndexMapping;
use nalgebra::{DMatrix, Matrix3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

pub fn random_state(rng: &mut ChaCha8Rng, disc: &Discretization) -> State {
    State::new(random_vec(rng, disc.num_u()), random_vec(rng, disc.num_p()))
}

pub fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// `||x - y|| / ||y||`, or `||x||` when `y` is zero.
pub fn rel_norm(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len());
    let d: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).collect();
    let ny = norm(y);
    if ny == 0.0 {
        norm(&d)
    } else {
        norm(&d) / ny
    }
}

/// Largest entry-wise difference relative to the largest entry of `y`.
pub fn rel_max(x: &DMatrix<f64>, y: &DMatrix<f64>) -> f64 {
    (x - y).abs().max() / y.abs().max().max(f64::MIN_POSITIVE)
}

/// Plain triple loop, ascending inner index.
pub fn gemm(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    assert_eq!(a.ncols(), b.nrows());
    let mut c = DMatrix::zeros(a.nrows(), b.ncols());
    for i in 0..a.nrows() {
        for j in 0..b.ncols() {
            let mut s = 0.0;
            for k in 0..a.ncols() {
                s += a[(i, k)] * b[(k, j)];
            }
            c[(i, j)] = s;
        }
    }
    c
}

/// Per-element error scaled by the magnitude of the summands, `|c - ref| / sum |a||b|`;
/// this is the relative error that rounding alone can produce.
pub fn gemm_rel_err(c: &DMatrix<f64>, a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let reference = gemm(a, b);
    let scale = gemm(&a.abs(), &b.abs());
    let mut worst: f64 = 0.0;
    for i in 0..c.nrows() {
        for j in 0..c.ncols() {
            let s = scale[(i, j)];
            let e = (c[(i, j)] - reference[(i, j)]).abs();
            worst = worst.max(if s == 0.0 { e } else { e / s });
        }
    }
    worst
}

/// One instruction, assembled straight from the per-lane tables:
/// A lane `l` holds `(l / 4, l % 4)`, B lane `l` holds `(l % 4, l / 4)`,
/// C lane `l` holds `(l / 4, 2 (l % 4))` and `(l / 4, 2 (l % 4) + 1)`.
pub fn dmma_oracle(a: &[f64; 32], b: &[f64; 32], c: &[[f64; 2]; 32]) -> ([[f64; 2]; 32], [[f64; 2]; 32]) {
    let mut am = [[0.0; 4]; 8];
    let mut bm = [[0.0; 8]; 4];
    for l in 0..32 {
        am[l / 4][l % 4] = a[l];
        bm[l % 4][l / 4] = b[l];
    }
    let mut out = [[0.0; 2]; 32];
    let mut scale = [[0.0; 2]; 32];
    for l in 0..32 {
        for s in 0..2 {
            let (r, col) = (l / 4, 2 * (l % 4) + s);
            let mut acc = c[l][s];
            let mut mag = c[l][s].abs();
            for kk in 0..4 {
                acc += am[r][kk] * bm[kk][col];
                mag += (am[r][kk] * bm[kk][col]).abs();
            }
            out[l][s] = acc;
            scale[l][s] = mag;
        }
    }
    (out, scale)
}

pub fn kron(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let (ra, ca, rb, cb) = (a.nrows(), a.ncols(), b.nrows(), b.ncols());
    DMatrix::from_fn(ra * rb, ca * cb, |i, j| a[(i / rb, j / cb)] * b[(i % rb, j % cb)])
}

/// Matrix of `x (fastest), y, z` tensor-product application: `Bz ⊗ By ⊗ Bx`.
pub fn tensor_matrix(bx: &DMatrix<f64>, by: &DMatrix<f64>, bz: &DMatrix<f64>) -> DMatrix<f64> {
    kron(bz, &kron(by, bx))
}

/// Worst bank-conflict degree of 32 lane addresses, counted bank by bank: per 16-lane
/// phase, the number of distinct 8-byte words touching each 4-byte bank.
pub fn brute_degree(addrs: &[Option<u64>]) -> usize {
    let mut worst = 0;
    for phase in addrs.chunks(16) {
        let words: HashSet<u64> = phase.iter().flatten().copied().collect();
        for bank in 0..32 {
            let hits = words.iter().filter(|&&a| (a / 4) % 32 == bank || ((a + 4) / 4) % 32 == bank).count();
            worst = worst.max(hits);
        }
    }
    worst
}

/// Worst degree per access `[A, B, C0, C1]` of a mapping under cyclic layouts with the
/// C column stride `ld_c`, enumerating every warp, tile and step directly.
pub fn brute_mapping_degrees(mapping: &IndexMapping, ld_c: usize) -> [usize; 4] {
    let s = mapping.shape;
    let mut worst = [0; 4];
    let tiles = mapping.f_n.len() / 8;
    let steps = mapping.f_k.len() / 4;
    for fm in &mapping.f_m {
        for t in 0..tiles {
            let fnt = &mapping.f_n[t * 8..t * 8 + 8];
            for st in 0..steps {
                let fk = &mapping.f_k[st * 4..st * 4 + 4];
                let a: Vec<Option<u64>> = (0..32)
                    .map(|l| Some(8 * (fm[l / 4]? * s.k + fk[l % 4]?) as u64))
                    .collect();
                let b: Vec<Option<u64>> = (0..32)
                    .map(|l| Some(8 * (fk[l % 4]? + s.k * fnt[l / 4]?) as u64))
                    .collect();
                worst[0] = worst[0].max(brute_degree(&a));
                worst[1] = worst[1].max(brute_degree(&b));
            }
            for slot in 0..2 {
                let c: Vec<Option<u64>> = (0..32)
                    .map(|l| Some(8 * (fm[l / 4]? + ld_c * fnt[2 * (l % 4) + slot]?) as u64))
                    .collect();
                worst[2 + slot] = worst[2 + slot].max(brute_degree(&c));
            }
        }
    }
    worst
}

/// `d x_i / d xi_r` of the trilinear map through corner `a + 2b + 4c` at `(2a-1, 2b-1, 2c-1)`.
pub fn trilinear_jacobian(corners: &[[f64; 3]; 8], xi: [f64; 3]) -> Matrix3<f64> {
    let mut j = Matrix3::zeros();
    for (v, x) in corners.iter().enumerate() {
        let s = [(v & 1) as f64 * 2.0 - 1.0, ((v >> 1) & 1) as f64 * 2.0 - 1.0, ((v >> 2) & 1) as f64 * 2.0 - 1.0];
        let f = [1.0 + s[0] * xi[0], 1.0 + s[1] * xi[1], 1.0 + s[2] * xi[2]];
        let dn = [s[0] * f[1] * f[2] / 8.0, f[0] * s[1] * f[2] / 8.0, f[0] * f[1] * s[2] / 8.0];
        for i in 0..3 {
            for r in 0..3 {
                j[(i, r)] += x[i] * dn[r];
            }
        }
    }
    j
}

/// The operator assembled element by element from explicit Kronecker-product matrices.
pub struct AssembledOracle {
    /// Per element, `3 d_u^3 x d_p^3`: the `(grad p, tau)` element matrix.
    pub grad: Vec<DMatrix<f64>>,
    pub elem_dofs: Vec<Vec<usize>>,
    pub num_u: usize,
    pub num_p: usize,
    /// Consistent-mass row sums, `[u; p]`.
    pub mass_row_sums: Vec<f64>,
}

impl AssembledOracle {
    pub fn new(disc: &Discretization) -> Self {
        let q = disc.config.num_quad;
        let rule = disc.pressure.quadrature();
        let (vp, gp, vu) = (disc.pressure.values(), disc.pressure.gradients(), disc.velocity.values());
        let bu = tensor_matrix(vu, vu, vu);
        let bp = tensor_matrix(vp, vp, vp);
        let dp = [tensor_matrix(gp, vp, vp), tensor_matrix(vp, gp, vp), tensor_matrix(vp, vp, gp)];
        let nue = bu.ncols();
        let npe = bp.ncols();
        let ne = disc.mesh.num_elements();
        let mut grad = Vec::with_capacity(ne);
        let mut elem_dofs = Vec::with_capacity(ne);
        let mut mu = Vec::new();
        let mut mp = vec![0.0; disc.num_p()];
        for e in 0..ne {
            let corners = disc.mesh.element_coords(e);
            let mut dfac = vec![[[0.0; 3]; 3]; q * q * q];
            let mut wdet = vec![0.0; q * q * q];
            for c in 0..q {
                for b in 0..q {
                    for a in 0..q {
                        let qp = a + q * (b + q * c);
                        let jac = trilinear_jacobian(&corners, [rule.points[a], rule.points[b], rule.points[c]]);
                        let w = rule.weights[a] * rule.weights[b] * rule.weights[c] * jac.determinant();
                        let inv = jac.try_inverse().unwrap();
                        wdet[qp] = w;
                        for i in 0..3 {
                            for r in 0..3 {
                                dfac[qp][i][r] = disc.coefficients.coupling * w * inv[(r, i)];
                            }
                        }
                    }
                }
            }
            let mut ge = DMatrix::zeros(3 * nue, npe);
            for comp in 0..3 {
                for (r, dr) in dp.iter().enumerate() {
                    let scaled = DMatrix::from_fn(dr.nrows(), dr.ncols(), |i, j| dfac[i][comp][r] * dr[(i, j)]);
                    let block = bu.transpose() * scaled;
                    let mut view = ge.view_mut((comp * nue, 0), (nue, npe));
                    view += block;
                }
            }
            grad.push(ge);
            elem_dofs.push(disc.restriction.element_dofs(e).to_vec());
            let rho = disc.coefficients.rho[e];
            let kinv = 1.0 / disc.coefficients.bulk_modulus[e];
            let mass_u = bu.transpose() * DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(wdet.len(), wdet.iter().map(|w| rho * w))) * &bu;
            let rows_u: Vec<f64> = mass_u.row_iter().map(|r| r.sum()).collect();
            for _ in 0..3 {
                mu.extend_from_slice(&rows_u);
            }
            let mass_p = bp.transpose() * DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(wdet.len(), wdet.iter().map(|w| kinv * w))) * &bp;
            for (i, r) in mass_p.row_iter().enumerate() {
                mp[elem_dofs[e][i]] += r.sum();
            }
        }
        mu.extend(mp);
        Self { grad, elem_dofs, num_u: disc.num_u(), num_p: disc.num_p(), mass_row_sums: mu }
    }

    fn nue(&self) -> usize {
        self.grad[0].nrows()
    }

    /// `A [u; p]` without boundary terms.
    pub fn apply(&self, x: &State) -> State {
        let nue = self.nue();
        let mut out = State::zeros(self.num_u, self.num_p);
        for (e, (g, dofs)) in self.grad.iter().zip(&self.elem_dofs).enumerate() {
            let pl = nalgebra::DVector::from_iterator(dofs.len(), dofs.iter().map(|&d| x.p[d]));
            let ul = nalgebra::DVector::from_column_slice(&x.u[e * nue..(e + 1) * nue]);
            let ru = g * pl;
            out.u[e * nue..(e + 1) * nue].copy_from_slice(ru.as_slice());
            let rp = g.transpose() * ul;
            for (&d, v) in dofs.iter().zip(rp.iter()) {
                out.p[d] -= v;
            }
        }
        out
    }

    /// `N^T G G^T N u` on the velocity block.
    pub fn apply_normal(&self, u: &[f64]) -> Vec<f64> {
        let nue = self.nue();
        let mut global = vec![0.0; self.num_p];
        for (e, (g, dofs)) in self.grad.iter().zip(&self.elem_dofs).enumerate() {
            let le = g.transpose() * nalgebra::DVector::from_column_slice(&u[e * nue..(e + 1) * nue]);
            for (&d, v) in dofs.iter().zip(le.iter()) {
                global[d] += v;
            }
        }
        let mut out = vec![0.0; self.num_u];
        for (e, (g, dofs)) in self.grad.iter().zip(&self.elem_dofs).enumerate() {
            let pl = nalgebra::DVector::from_iterator(dofs.len(), dofs.iter().map(|&d| global[d]));
            out[e * nue..(e + 1) * nue].copy_from_slice((g * pl).as_slice());
        }
        out
    }

    /// Dense `A` on `[u; p]`.
    pub fn dense(&self) -> DMatrix<f64> {
        let n = self.num_u + self.num_p;
        let nue = self.nue();
        let mut a = DMatrix::zeros(n, n);
        for (e, (g, dofs)) in self.grad.iter().zip(&self.elem_dofs).enumerate() {
            for i in 0..nue {
                for (j, &d) in dofs.iter().enumerate() {
                    a[(e * nue + i, self.num_u + d)] += g[(i, j)];
                    a[(self.num_u + d, e * nue + i)] -= g[(i, j)];
                }
            }
        }
        a
    }
}
