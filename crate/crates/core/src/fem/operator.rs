//! Discretization data and the instrumented block operator.

use std::collections::{BTreeSet, HashMap};
use std::sync::{Mutex, OnceLock};
use std::sync::atomic::{AtomicU64, Ordering};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::mesh::{BoundaryTag, Mesh};
use super::quad::{setup_faces, setup_quad_data, trilinear_point, Coefficients, FaceData, GeometryTables, QuadData};
use super::restriction::Restriction;
use super::{FemError, State, Strategy};
use crate::bank::{search_mapping_padded, BankConfig, SearchOutcome};
use crate::mma::{mma_contract_cyclic, GemmShape, IndexMapping, MappingSet, MmaError};
use crate::tensor::{
    apply_basis_3d_with, apply_basis_transpose_3d_with, apply_gradient_3d_with, apply_gradient_transpose_3d_with,
    contract_cyclic, Basis1D, Contract, Counted, FlopCounter, Quadrature1D, Tensor3, TensorError, CANONICAL_ORDER,
};

/// Node budget used when searching conflict-free mappings for the MMA backend.
pub const DEFAULT_SEARCH_BUDGET: u64 = 20_000_000;

/// Largest `C` column padding tried by the backend search.
pub const MAX_C_PAD: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiscretizationConfig {
    /// Polynomial order of the continuous pressure space.
    pub order_p: usize,
    /// Polynomial order of each velocity component.
    pub order_u: usize,
    /// Gauss–Legendre points per direction.
    pub num_quad: usize,
    /// Adds `<Z^-1 p, v>` on absorbing faces to the operator.
    pub absorbing: bool,
    /// Adds `<(rho g)^-1 p, v>` on surface faces to the pressure mass.
    pub free_surface: bool,
}

impl Default for DiscretizationConfig {
    fn default() -> Self {
        Self { order_p: 4, order_u: 3, num_quad: 5, absorbing: false, free_surface: false }
    }
}

/// Everything the operator reads: mesh, restriction, bases, stored `D` and face data.
#[derive(Debug, Clone)]
pub struct Discretization {
    pub config: DiscretizationConfig,
    pub mesh: Mesh,
    pub restriction: Restriction,
    pub pressure: Basis1D,
    pub velocity: Basis1D,
    pub geometry: GeometryTables,
    pub coefficients: Coefficients,
    pub quad: QuadData,
    pub faces: Vec<FaceData>,
}

impl Discretization {
    pub fn new(mesh: Mesh, coefficients: Coefficients, config: DiscretizationConfig) -> Result<Self, FemError> {
        if config.order_p == 0 {
            return Err(FemError::Config("pressure order must be at least 1".into()));
        }
        if config.num_quad == 0 {
            return Err(FemError::Config("need at least one quadrature point".into()));
        }
        let rule = Quadrature1D::gauss_legendre(config.num_quad);
        let pressure = Basis1D::gll(config.order_p, config.num_quad)?;
        let velocity = Basis1D::gll(config.order_u, config.num_quad)?;
        let geometry = GeometryTables::new(&rule)?;
        let quad = setup_quad_data(&mesh, &geometry, &coefficients)?;
        let faces = setup_faces(&mesh, &pressure, &rule)?;
        let restriction = Restriction::h1(&mesh, pressure.num_dofs_1d());
        Ok(Self { config, mesh, restriction, pressure, velocity, geometry, coefficients, quad, faces })
    }

    pub fn velocity_dofs_per_component(&self) -> usize {
        self.velocity.num_dofs_1d().pow(3)
    }

    pub fn num_u(&self) -> usize {
        3 * self.mesh.num_elements() * self.velocity_dofs_per_component()
    }

    pub fn num_p(&self) -> usize {
        self.restriction.num_global()
    }

    pub fn zero_state(&self) -> State {
        State::zeros(self.num_u(), self.num_p())
    }

    /// Velocity block of element `e` (three components, component-major).
    pub fn velocity_range(&self, e: usize) -> std::ops::Range<usize> {
        let n = 3 * self.velocity_dofs_per_component();
        e * n..(e + 1) * n
    }

    fn element_nodes(&self, e: usize, nodes: &[f64]) -> Vec<[f64; 3]> {
        let coords = self.mesh.element_coords(e);
        let d = nodes.len();
        let mut out = Vec::with_capacity(d * d * d);
        for k in 0..d {
            for j in 0..d {
                for i in 0..d {
                    out.push(trilinear_point(&coords, [nodes[i], nodes[j], nodes[k]]));
                }
            }
        }
        out
    }

    /// Physical coordinates of every global pressure node.
    pub fn pressure_nodes(&self) -> Vec<[f64; 3]> {
        let mut out = vec![[0.0; 3]; self.num_p()];
        for e in 0..self.mesh.num_elements() {
            for (x, &g) in self.element_nodes(e, self.pressure.nodes()).into_iter().zip(self.restriction.element_dofs(e)) {
                out[g] = x;
            }
        }
        out
    }

    /// Physical coordinates of the velocity nodes, index `e * d_u^3 + local`.
    pub fn velocity_nodes(&self) -> Vec<[f64; 3]> {
        (0..self.mesh.num_elements()).flat_map(|e| self.element_nodes(e, self.velocity.nodes())).collect()
    }

    /// Nodal interpolant of a velocity field and a pressure field.
    pub fn interpolate(&self, fu: impl Fn([f64; 3]) -> [f64; 3], fp: impl Fn([f64; 3]) -> f64) -> State {
        let n = self.velocity_dofs_per_component();
        let mut u = vec![0.0; self.num_u()];
        for (idx, x) in self.velocity_nodes().into_iter().enumerate() {
            let (e, l) = (idx / n, idx % n);
            let v = fu(x);
            for c in 0..3 {
                u[(e * 3 + c) * n + l] = v[c];
            }
        }
        let p = self.pressure_nodes().into_iter().map(fp).collect();
        State::new(u, p)
    }

    /// Sorted global pressure DOFs on faces tagged `tag`.
    pub fn boundary_dofs(&self, tag: BoundaryTag) -> Vec<usize> {
        let set: BTreeSet<usize> = self
            .faces
            .iter()
            .filter(|f| f.tag == tag)
            .flat_map(|f| f.local_dofs.iter().map(|&l| self.restriction.element_dofs(f.element)[l]))
            .collect();
        set.into_iter().collect()
    }

    /// Assembled face load `sum_faces trace^T (w * value)` for a boundary tag, as a global vector.
    pub fn boundary_load(&self, tag: BoundaryTag, value: impl Fn([f64; 3]) -> f64) -> Vec<f64> {
        let mut out = vec![0.0; self.num_p()];
        for f in self.faces.iter().filter(|f| f.tag == tag) {
            let vals: Vec<f64> = f.points.iter().map(|&x| value(x)).collect();
            let dofs = self.restriction.element_dofs(f.element);
            for (&l, v) in f.local_dofs.iter().zip(f.load(&vals)) {
                out[dofs[l]] += v;
            }
        }
        out
    }

    /// GEMM shapes of every sum-factorization stage the operator runs.
    pub fn contraction_shapes(&self) -> Vec<GemmShape> {
        let q = self.config.num_quad;
        let mut set = BTreeSet::new();
        for d in [self.pressure.num_dofs_1d(), self.velocity.num_dofs_1d()] {
            for (m, n, k) in [(d * d, q, d), (d * q, q, d), (q * q, q, d), (q * q, d, q), (q * d, d, q), (d * d, d, q)] {
                set.insert(GemmShape::new(m, n, k));
            }
        }
        set.into_iter().collect()
    }
}

/// Where a backend mapping came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MappingSource {
    /// The hand-derived conflict-free mapping for `25x5x4`.
    Reference,
    /// Found by the conflict-free search with the `C` column stride padded by `c_pad`.
    Searched { c_pad: usize },
    /// Search budget exhausted; blocked mapping (correct, not conflict free).
    BlockedFallback,
}

/// Contraction backend of the operator.
#[derive(Debug, Clone, PartialEq)]
pub enum Backend {
    Scalar,
    /// Emulated DMMA with one mapping per contraction shape.
    Mma(MappingSet),
}

impl Backend {
    pub fn label(&self) -> &'static str {
        match self {
            Backend::Scalar => "scalar",
            Backend::Mma(_) => "mma",
        }
    }

    /// MMA backend covering `shapes`, preferring conflict-free mappings. Search results
    /// are memoized per `(shape, budget)` for the life of the process.
    pub fn mma(shapes: &[GemmShape], budget: u64) -> Result<(Backend, Vec<(GemmShape, MappingSource)>), FemError> {
        type Memo = HashMap<(GemmShape, u64), (IndexMapping, MappingSource)>;
        static MEMO: OnceLock<Mutex<Memo>> = OnceLock::new();
        let memo = MEMO.get_or_init(Default::default);
        let mut set = MappingSet::new();
        let mut sources = Vec::with_capacity(shapes.len());
        for &shape in shapes {
            let cached = memo.lock().unwrap_or_else(|e| e.into_inner()).get(&(shape, budget)).cloned();
            let (mapping, source) = match cached {
                Some(hit) => hit,
                None => {
                    let found = Self::find_mapping(shape, budget)?;
                    memo.lock().unwrap_or_else(|e| e.into_inner()).insert((shape, budget), found.clone());
                    found
                }
            };
            set.insert(mapping)?;
            sources.push((shape, source));
        }
        Ok((Backend::Mma(set), sources))
    }

    fn find_mapping(shape: GemmShape, budget: u64) -> Result<(IndexMapping, MappingSource), FemError> {
        if shape == GemmShape::new(25, 5, 4) {
            return Ok((IndexMapping::conflict_free_25x5x4(), MappingSource::Reference));
        }
        let found = search_mapping_padded(shape, &BankConfig::default(), budget, MAX_C_PAD)
            .map_err(|e| FemError::Config(e.to_string()))?;
        Ok(match found.outcome {
            SearchOutcome::Found { mapping, .. } => (mapping, MappingSource::Searched { c_pad: found.c_pad }),
            SearchOutcome::NotFound { .. } => (IndexMapping::blocked(shape), MappingSource::BlockedFallback),
        })
    }

    /// MMA backend for every shape `disc` needs.
    pub fn mma_for(disc: &Discretization) -> Result<Backend, FemError> {
        Ok(Self::mma(&disc.contraction_shapes(), DEFAULT_SEARCH_BUDGET)?.0)
    }
}

enum Engine<'a> {
    Scalar,
    Mma(&'a MappingSet),
}

impl Contract for Engine<'_> {
    fn contract(&self, b: &DMatrix<f64>, x: &Tensor3) -> Result<Tensor3, TensorError> {
        match self {
            Engine::Scalar => contract_cyclic(b, x),
            Engine::Mma(set) => {
                let shape = crate::mma::contraction_shape(b, x);
                let mapping =
                    set.get(&shape).ok_or_else(|| TensorError::Backend(MmaError::MissingMapping(shape).to_string()))?;
                mma_contract_cyclic(b, x, mapping)
            }
        }
    }
}

/// Instrumentation shared by all strategies.
#[derive(Debug, Default)]
pub struct Counters {
    apply_block: AtomicU64,
    normal: AtomicU64,
    d_reads: AtomicU64,
    geometry_reads: AtomicU64,
    flops: FlopCounter,
}

/// Plain copy of [`Counters`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CounterSnapshot {
    pub apply_block_calls: u64,
    pub normal_calls: u64,
    /// Quadrature points whose stored `D` block (9 doubles) was read.
    pub d_reads: u64,
    /// Element vertex coordinates read to recompute `D`.
    pub geometry_reads: u64,
    pub flops: u64,
}

impl CounterSnapshot {
    pub fn d_bytes(&self) -> u64 {
        self.d_reads * 9 * 8
    }
}

impl Counters {
    pub fn snapshot(&self) -> CounterSnapshot {
        CounterSnapshot {
            apply_block_calls: self.apply_block.load(Ordering::Relaxed),
            normal_calls: self.normal.load(Ordering::Relaxed),
            d_reads: self.d_reads.load(Ordering::Relaxed),
            geometry_reads: self.geometry_reads.load(Ordering::Relaxed),
            flops: self.flops.get(),
        }
    }

    pub fn reset(&self) {
        for c in [&self.apply_block, &self.normal, &self.d_reads, &self.geometry_reads] {
            c.store(0, Ordering::Relaxed);
        }
        self.flops.reset();
    }
}

/// The operator `A` of the first-order acoustic system together with the normal
/// operator `K_fused = N^T G G^T N`, where `N` is the element divergence kernel.
#[derive(Debug)]
pub struct BlockOperator<'a> {
    disc: &'a Discretization,
    strategy: Strategy,
    backend: Backend,
    counters: Counters,
}

impl<'a> BlockOperator<'a> {
    pub fn new(disc: &'a Discretization, strategy: Strategy, backend: Backend) -> Result<Self, FemError> {
        if let Backend::Mma(set) = &backend {
            if let Some(shape) = disc.contraction_shapes().into_iter().find(|s| set.get(s).is_none()) {
                return Err(MmaError::MissingMapping(shape).into());
            }
        }
        Ok(Self { disc, strategy, backend, counters: Counters::default() })
    }

    pub fn discretization(&self) -> &'a Discretization {
        self.disc
    }

    pub fn strategy(&self) -> Strategy {
        self.strategy
    }

    pub fn backend(&self) -> &Backend {
        &self.backend
    }

    pub fn counters(&self) -> &Counters {
        &self.counters
    }

    fn engine(&self) -> Counted<'_, Engine<'_>> {
        let inner = match &self.backend {
            Backend::Scalar => Engine::Scalar,
            Backend::Mma(set) => Engine::Mma(set),
        };
        Counted { inner, counter: &self.counters.flops }
    }

    fn nq(&self) -> usize {
        self.disc.quad.points_per_element
    }

    /// `D` of element `e`: the stored block for PA strategies, recomputed into `buf` otherwise.
    fn load_d<'s>(&'s self, e: usize, buf: &'s mut [f64], wbuf: &mut [f64]) -> Result<&'s [f64], FemError> {
        if self.strategy.stores_d() {
            self.counters.d_reads.fetch_add(self.nq() as u64, Ordering::Relaxed);
            Ok(self.disc.quad.element_grad(e))
        } else {
            self.counters.geometry_reads.fetch_add(8, Ordering::Relaxed);
            self.disc.geometry.element_factors(&self.disc.mesh, e, self.disc.coefficients.coupling, buf, wbuf)?;
            Ok(buf)
        }
    }

    /// `r_c = B_u^T (sum_r D[c][r] d_r p)`, the element `(grad p, tau)` kernel.
    fn grad_kernel<E: Contract>(&self, eng: &E, d: &[f64], p_local: &[f64], out: &mut [f64]) -> Result<(), FemError> {
        let dp = self.disc.pressure.num_dofs_1d();
        let q = self.disc.config.num_quad;
        let x = Tensor3::canonical([dp; 3], p_local.to_vec())?;
        let g = apply_gradient_3d_with(eng, &self.disc.pressure, &x)?;
        debug_assert!(g.iter().all(|t| t.order() == CANONICAL_ORDER));
        let (g0, g1, g2) = (g[0].data(), g[1].data(), g[2].data());
        let n = self.disc.velocity_dofs_per_component();
        for c in 0..3 {
            let w: Vec<f64> = (0..self.nq())
                .map(|qp| {
                    let blk = &d[qp * 9 + c * 3..qp * 9 + c * 3 + 3];
                    blk[0] * g0[qp] + blk[1] * g1[qp] + blk[2] * g2[qp]
                })
                .collect();
            let t = apply_basis_transpose_3d_with(eng, &self.disc.velocity, &Tensor3::canonical([q; 3], w)?)?;
            out[c * n..(c + 1) * n].copy_from_slice(t.data());
        }
        Ok(())
    }

    /// `sum_r d_r^T (sum_c D[c][r] B_u u_c)`, the element `(u, grad v)` kernel.
    fn div_kernel<E: Contract>(&self, eng: &E, d: &[f64], u_local: &[f64]) -> Result<Vec<f64>, FemError> {
        let du = self.disc.velocity.num_dofs_1d();
        let q = self.disc.config.num_quad;
        let n = du * du * du;
        let uq: Vec<Tensor3> = (0..3)
            .map(|c| {
                let x = Tensor3::canonical([du; 3], u_local[c * n..(c + 1) * n].to_vec())?;
                apply_basis_3d_with(eng, &self.disc.velocity, &x)
            })
            .collect::<Result<_, _>>()?;
        let (u0, u1, u2) = (uq[0].data(), uq[1].data(), uq[2].data());
        let fields = [0, 1, 2].map(|r| {
            let f: Vec<f64> = (0..self.nq())
                .map(|qp| {
                    let blk = &d[qp * 9..qp * 9 + 9];
                    blk[r] * u0[qp] + blk[3 + r] * u1[qp] + blk[6 + r] * u2[qp]
                })
                .collect();
            Tensor3::canonical([q; 3], f)
        });
        let [f0, f1, f2] = fields;
        let le = apply_gradient_transpose_3d_with(eng, &self.disc.pressure, &[f0?, f1?, f2?])?;
        Ok(le.into_data())
    }

    fn scratch(&self) -> (Vec<f64>, Vec<f64>) {
        (vec![0.0; self.nq() * 9], vec![0.0; self.nq()])
    }

    fn check_state(&self, x: &State) -> Result<(), FemError> {
        x.check(self.disc.num_u(), self.disc.num_p())
    }

    /// `K_u`: element-local divergence `N u` (one pass, reads `D`).
    pub fn apply_k_u(&self, u: &[f64]) -> Result<Vec<f64>, FemError> {
        if u.len() != self.disc.num_u() {
            return Err(FemError::Dimension { what: "velocity".into(), expected: self.disc.num_u(), found: u.len() });
        }
        let eng = self.engine();
        let (mut buf, mut wbuf) = self.scratch();
        let per = self.disc.restriction.dofs_per_element();
        let mut out = Vec::with_capacity(self.disc.mesh.num_elements() * per);
        for e in 0..self.disc.mesh.num_elements() {
            let d = self.load_d(e, &mut buf, &mut wbuf)?;
            out.extend(self.div_kernel(&eng, d, &u[self.disc.velocity_range(e)])?);
        }
        Ok(out)
    }

    /// `K_p`: element-local gradient `N^T y` of a pressure E-vector (one pass, reads `D`).
    pub fn apply_k_p(&self, p_local: &[f64]) -> Result<Vec<f64>, FemError> {
        let per = self.disc.restriction.dofs_per_element();
        let expected = per * self.disc.mesh.num_elements();
        if p_local.len() != expected {
            return Err(FemError::Dimension { what: "pressure E-vector".into(), expected, found: p_local.len() });
        }
        let eng = self.engine();
        let (mut buf, mut wbuf) = self.scratch();
        let mut out = vec![0.0; self.disc.num_u()];
        for e in 0..self.disc.mesh.num_elements() {
            let d = self.load_d(e, &mut buf, &mut wbuf)?;
            let r = self.disc.velocity_range(e);
            self.grad_kernel(&eng, d, &p_local[e * per..(e + 1) * per], &mut out[r])?;
        }
        Ok(out)
    }

    /// `A [u; p]`: `(grad p, tau)` in the velocity block and `-(u, grad v)` (plus the
    /// absorbing face term when enabled) in the pressure block.
    pub fn apply_block(&self, x: &State) -> Result<State, FemError> {
        self.check_state(x)?;
        self.counters.apply_block.fetch_add(1, Ordering::Relaxed);
        let disc = self.disc;
        let mut out = disc.zero_state();
        if self.strategy.is_fused() {
            let eng = self.engine();
            let (mut buf, mut wbuf) = self.scratch();
            let mut p_local = vec![0.0; disc.restriction.dofs_per_element()];
            for e in 0..disc.mesh.num_elements() {
                let d = self.load_d(e, &mut buf, &mut wbuf)?;
                disc.restriction.gather(e, &x.p, &mut p_local);
                let r = disc.velocity_range(e);
                self.grad_kernel(&eng, d, &p_local, &mut out.u[r.clone()])?;
                let le = self.div_kernel(&eng, d, &x.u[r])?;
                for (&g, v) in disc.restriction.element_dofs(e).iter().zip(le) {
                    out.p[g] -= v;
                }
            }
        } else {
            out.u = self.apply_k_p(&disc.restriction.gather_all(&x.p))?;
            let le = self.apply_k_u(&x.u)?;
            for (o, v) in out.p.iter_mut().zip(disc.restriction.scatter_add_all(&le)) {
                *o = -v;
            }
        }
        if disc.config.absorbing {
            self.apply_absorbing(&x.p, &mut out.p);
        }
        Ok(out)
    }

    /// Separate face kernel for `<Z^-1 p, v>` on absorbing faces.
    fn apply_absorbing(&self, p: &[f64], out: &mut [f64]) {
        let disc = self.disc;
        for f in disc.faces.iter().filter(|f| f.tag == BoundaryTag::Absorbing) {
            let dofs = disc.restriction.element_dofs(f.element);
            let local: Vec<f64> = f.local_dofs.iter().map(|&l| p[dofs[l]]).collect();
            let mut acc = vec![0.0; local.len()];
            f.apply_mass(1.0 / disc.coefficients.impedance(f.element), &local, &mut acc);
            for (&l, v) in f.local_dofs.iter().zip(acc) {
                out[dofs[l]] += v;
            }
        }
    }

    /// `K_fused u = N^T G G^T N u` on the velocity block; the pressure block of the result is zero.
    ///
    /// Unfused strategies run three kernels (divergence, scatter/gather, gradient) and
    /// obtain `D` in both element kernels. Fused strategies keep each element's `D` from
    /// the first phase to the second (persistent-kernel schedule), so `D` is obtained once.
    pub fn apply_fused_normal(&self, x: &State) -> Result<State, FemError> {
        self.check_state(x)?;
        self.counters.normal.fetch_add(1, Ordering::Relaxed);
        let disc = self.disc;
        let restriction = &disc.restriction;
        let u = if self.strategy.is_fused() {
            let eng = self.engine();
            let (mut buf, mut wbuf) = self.scratch();
            let ne = disc.mesh.num_elements();
            let mut cache = Vec::with_capacity(ne * self.nq() * 9);
            let mut global = vec![0.0; disc.num_p()];
            for e in 0..ne {
                let d = self.load_d(e, &mut buf, &mut wbuf)?;
                cache.extend_from_slice(d);
                let le = self.div_kernel(&eng, d, &x.u[disc.velocity_range(e)])?;
                restriction.scatter_add(e, &le, &mut global);
            }
            let mut out = vec![0.0; disc.num_u()];
            let mut p_local = vec![0.0; restriction.dofs_per_element()];
            let block = self.nq() * 9;
            for e in 0..ne {
                restriction.gather(e, &global, &mut p_local);
                let r = disc.velocity_range(e);
                self.grad_kernel(&eng, &cache[e * block..(e + 1) * block], &p_local, &mut out[r])?;
            }
            out
        } else {
            let le = self.apply_k_u(&x.u)?;
            let local = restriction.gather_all(&restriction.scatter_add_all(&le));
            self.apply_k_p(&local)?
        };
        Ok(State::new(u, vec![0.0; disc.num_p()]))
    }
}
