//! Scalar emulation of the FP64 `m8n8k4` warp MMA instruction and a tiling engine that
//! runs irregular small GEMMs through explicit index mappings.

mod mapping_file;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::{Contract, Tensor3, TensorError};

pub use mapping_file::{parse_mapping, write_mapping, MAPPING_FORMAT_VERSION};

pub const WARP_SIZE: usize = 32;
pub const INSTR_M: usize = 8;
pub const INSTR_N: usize = 8;
pub const INSTR_K: usize = 4;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MmaError {
    #[error("mapping does not cover {shape}: missing {missing:?}, duplicated {duplicated:?}")]
    Coverage {
        shape: GemmShape,
        /// `(axis, problem index)` pairs that no instruction slot maps to.
        missing: Vec<(char, usize)>,
        /// `(axis, problem index)` pairs reached from more than one slot.
        duplicated: Vec<(char, usize)>,
    },
    #[error("mapping is malformed: {0}")]
    Malformed(String),
    #[error("operand shape mismatch: mapping is for {expected}, operands give {found}")]
    ShapeMismatch { expected: GemmShape, found: GemmShape },
    #[error("no mapping registered for shape {0}")]
    MissingMapping(GemmShape),
    #[error("mapping file line {line}: {message}")]
    Parse { line: usize, message: String },
}

/// Problem GEMM `m x k` times `k x n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GemmShape {
    pub m: usize,
    pub n: usize,
    pub k: usize,
}

impl GemmShape {
    pub const fn new(m: usize, n: usize, k: usize) -> Self {
        Self { m, n, k }
    }

    /// The shapes produced by sum factorization with `d = 4` or `5` DOFs and `q = 5`
    /// points per direction.
    pub const OPERATOR_SHAPES: [GemmShape; 7] = [
        GemmShape::new(25, 5, 4),
        GemmShape::new(25, 5, 5),
        GemmShape::new(25, 4, 5),
        GemmShape::new(20, 4, 5),
        GemmShape::new(16, 4, 5),
        GemmShape::new(16, 5, 4),
        GemmShape::new(20, 5, 4),
    ];

    pub fn is_valid(&self) -> bool {
        self.m > 0 && self.n > 0 && self.k > 0
    }

    /// Instruction tiles needed along each axis.
    pub fn tiles(&self) -> (usize, usize, usize) {
        (self.m.div_ceil(INSTR_M), self.n.div_ceil(INSTR_N), self.k.div_ceil(INSTR_K))
    }
}

impl fmt::Display for GemmShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.m, self.n, self.k)
    }
}

impl FromStr for GemmShape {
    type Err = String;

    /// Accepts `25x5x4`, `25/5/4` and `m25n5k4`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim();
        let parts: Vec<&str> = if let Some(rest) = t.strip_prefix('m') {
            rest.split(['n', 'k']).collect()
        } else {
            t.split(['x', '/']).collect()
        };
        if parts.len() != 3 {
            return Err(format!("malformed shape '{s}', expected MxNxK"));
        }
        let mut v = [0usize; 3];
        for (slot, p) in v.iter_mut().zip(&parts) {
            *slot = p.trim().parse().map_err(|_| format!("malformed shape '{s}', expected MxNxK"))?;
        }
        let shape = GemmShape::new(v[0], v[1], v[2]);
        if !shape.is_valid() {
            return Err(format!("shape '{s}' has a zero dimension"));
        }
        Ok(shape)
    }
}

/// Per-lane fragment coordinates of the `m8n8k4` FP64 instruction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FragmentLayout {
    pub a_coords: [(usize, usize); WARP_SIZE],
    pub b_coords: [(usize, usize); WARP_SIZE],
    pub c_coords: [[(usize, usize); 2]; WARP_SIZE],
}

/// Lane `l` holds `A[l / 4][l % 4]`.
pub const fn a_coord(lane: usize) -> (usize, usize) {
    (lane / 4, lane % 4)
}

/// Lane `l` holds `B[l % 4][l / 4]`.
pub const fn b_coord(lane: usize) -> (usize, usize) {
    (lane % 4, lane / 4)
}

/// Lane `l` holds `C[l / 4][2 (l % 4)]` in `c0` and the next column in `c1`.
pub const fn c_coords(lane: usize) -> [(usize, usize); 2] {
    [(lane / 4, 2 * (lane % 4)), (lane / 4, 2 * (lane % 4) + 1)]
}

impl FragmentLayout {
    pub fn m8n8k4() -> Self {
        Self {
            a_coords: std::array::from_fn(a_coord),
            b_coords: std::array::from_fn(b_coord),
            c_coords: std::array::from_fn(c_coords),
        }
    }

    /// Checks the A/B maps are bijections onto 8x4 / 4x8 and C covers 8x8 exactly once.
    pub fn check_bijections(&self) -> Result<(), String> {
        fn cover(cells: impl Iterator<Item = (usize, usize)>, rows: usize, cols: usize, name: &str) -> Result<(), String> {
            let mut seen = vec![0u8; rows * cols];
            for (r, c) in cells {
                if r >= rows || c >= cols {
                    return Err(format!("{name}: ({r},{c}) outside {rows}x{cols}"));
                }
                seen[r * cols + c] += 1;
            }
            match seen.iter().position(|&s| s != 1) {
                Some(p) => Err(format!("{name}: cell ({},{}) covered {} times", p / cols, p % cols, seen[p])),
                None => Ok(()),
            }
        }
        cover(self.a_coords.iter().copied(), INSTR_M, INSTR_K, "A")?;
        cover(self.b_coords.iter().copied(), INSTR_K, INSTR_N, "B")?;
        cover(self.c_coords.iter().flatten().copied(), INSTR_M, INSTR_N, "C")
    }
}

/// One emulated `m8n8k4` FP64 MMA: `C' = A B + C` on per-lane fragments.
///
/// Each output cell accumulates `c + sum_kappa a(., kappa) b(kappa, .)` in ascending
/// `kappa` with one fused multiply-add per term.
pub fn dmma_m8n8k4(a: &[f64; WARP_SIZE], b: &[f64; WARP_SIZE], c: &[[f64; 2]; WARP_SIZE]) -> [[f64; 2]; WARP_SIZE] {
    let mut am = [[0.0; INSTR_K]; INSTR_M];
    let mut bm = [[0.0; INSTR_N]; INSTR_K];
    for lane in 0..WARP_SIZE {
        let (r, col) = a_coord(lane);
        am[r][col] = a[lane];
        let (r, col) = b_coord(lane);
        bm[r][col] = b[lane];
    }
    let mut out = [[0.0; 2]; WARP_SIZE];
    for lane in 0..WARP_SIZE {
        for (slot, (r, col)) in c_coords(lane).into_iter().enumerate() {
            let mut acc = c[lane][slot];
            for kappa in 0..INSTR_K {
                acc = am[r][kappa].mul_add(bm[kappa][col], acc);
            }
            out[lane][slot] = acc;
        }
    }
    out
}

/// Maps instruction-local indices of every warp onto problem indices.
///
/// Each warp owns one 8-row block (`f_m` may depend on the warp), loops over `n_tiles`
/// column tiles and, inside each, accumulates over `k_steps` instructions. `f_n` and
/// `f_k` are shared by all warps. `None` is a padding slot: it reads zero and its result
/// is discarded.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexMapping {
    pub shape: GemmShape,
    /// `f_m[w][m_i]`.
    pub f_m: Vec<[Option<usize>; INSTR_M]>,
    /// `f_n[t * 8 + n_i]` for column tile `t`.
    pub f_n: Vec<Option<usize>>,
    /// `f_k[s * 4 + k_i]` for k-step `s`.
    pub f_k: Vec<Option<usize>>,
}

fn coverage(axis: char, extent: usize, slots: impl Iterator<Item = Option<usize>>, missing: &mut Vec<(char, usize)>, dup: &mut Vec<(char, usize)>, out_of_range: &mut Vec<usize>) {
    let mut count = vec![0usize; extent];
    for s in slots.flatten() {
        match count.get_mut(s) {
            Some(c) => *c += 1,
            None => out_of_range.push(s),
        }
    }
    for (i, c) in count.into_iter().enumerate() {
        match c {
            0 => missing.push((axis, i)),
            1 => {}
            _ => dup.push((axis, i)),
        }
    }
}

impl IndexMapping {
    pub fn num_warps(&self) -> usize {
        self.f_m.len()
    }

    pub fn n_tiles(&self) -> usize {
        self.f_n.len() / INSTR_N
    }

    pub fn k_steps(&self) -> usize {
        self.f_k.len() / INSTR_K
    }

    /// Warp-blocked rows (`m_p = m_i + 8 w`), identity columns and depth.
    pub fn blocked(shape: GemmShape) -> Self {
        let (wm, tn, sk) = shape.tiles();
        let f_m = (0..wm)
            .map(|w| std::array::from_fn(|mi| Some(mi + INSTR_M * w).filter(|&p| p < shape.m)))
            .collect();
        Self {
            shape,
            f_m,
            f_n: (0..tn * INSTR_N).map(|i| Some(i).filter(|&p| p < shape.n)).collect(),
            f_k: (0..sk * INSTR_K).map(|i| Some(i).filter(|&p| p < shape.k)).collect(),
        }
    }

    /// Alias for [`IndexMapping::blocked`]; for `m <= 8, n <= 8, k <= 4` it is the identity.
    pub fn identity(shape: GemmShape) -> Self {
        Self::blocked(shape)
    }

    /// The hand-tuned mapping for `25x5x4`: warp-blocked rows over four warps, columns
    /// permuted `[0,2,1,3,4,5,6,7]` (restricted to `n < 5`), identity depth.
    pub fn conflict_free_25x5x4() -> Self {
        let shape = GemmShape::new(25, 5, 4);
        let mut m = Self::blocked(shape);
        let perm = [0, 2, 1, 3, 4, 5, 6, 7];
        m.f_n = perm.iter().map(|&p| Some(p).filter(|&p| p < shape.n)).collect();
        m
    }

    /// Checks structural sanity and that every problem index is hit exactly once.
    pub fn validate(&self) -> Result<(), MmaError> {
        if !self.shape.is_valid() {
            return Err(MmaError::Malformed(format!("shape {} has a zero dimension", self.shape)));
        }
        if self.f_m.is_empty() || self.f_n.is_empty() || self.f_k.is_empty() {
            return Err(MmaError::Malformed("empty index map".into()));
        }
        if self.f_n.len() % INSTR_N != 0 || self.f_k.len() % INSTR_K != 0 {
            return Err(MmaError::Malformed(format!(
                "f_n has {} slots and f_k {}; expected multiples of {INSTR_N} and {INSTR_K}",
                self.f_n.len(),
                self.f_k.len()
            )));
        }
        let (mut missing, mut dup, mut oob) = (Vec::new(), Vec::new(), Vec::new());
        coverage('m', self.shape.m, self.f_m.iter().flatten().copied(), &mut missing, &mut dup, &mut oob);
        coverage('n', self.shape.n, self.f_n.iter().copied(), &mut missing, &mut dup, &mut oob);
        coverage('k', self.shape.k, self.f_k.iter().copied(), &mut missing, &mut dup, &mut oob);
        if !oob.is_empty() {
            return Err(MmaError::Malformed(format!("problem indices out of range: {oob:?}")));
        }
        if missing.is_empty() && dup.is_empty() {
            Ok(())
        } else {
            Err(MmaError::Coverage { shape: self.shape, missing, duplicated: dup })
        }
    }

    /// Every `(warp, instr_m, instr_n, instr_k) -> (m, n, k)` entry with no padding, in
    /// enumeration order.
    pub fn triples(&self) -> impl Iterator<Item = ((usize, usize, usize, usize), (usize, usize, usize))> + '_ {
        self.f_m.iter().enumerate().flat_map(move |(w, fm)| {
            fm.iter().enumerate().flat_map(move |(mi, &mp)| {
                self.f_n.iter().enumerate().flat_map(move |(ni, &np)| {
                    self.f_k.iter().enumerate().filter_map(move |(ki, &kp)| {
                        Some(((w, mi, ni, ki), (mp?, np?, kp?)))
                    })
                })
            })
        })
    }
}

/// Runs `C = A B` through emulated instructions: operands are fetched with `load_a(m, k)`
/// and `load_b(k, n)`, results delivered once per problem cell to `store(m, n, value)`.
///
/// The mapping must already be validated.
pub fn tiled_gemm_with(
    mapping: &IndexMapping,
    load_a: impl Fn(usize, usize) -> f64,
    load_b: impl Fn(usize, usize) -> f64,
    mut store: impl FnMut(usize, usize, f64),
) {
    let mut a = [0.0; WARP_SIZE];
    let mut b = [0.0; WARP_SIZE];
    for fm in &mapping.f_m {
        for fn_tile in mapping.f_n.chunks_exact(INSTR_N) {
            let mut c = [[0.0; 2]; WARP_SIZE];
            for fk_step in mapping.f_k.chunks_exact(INSTR_K) {
                for lane in 0..WARP_SIZE {
                    let (r, col) = a_coord(lane);
                    a[lane] = match (fm[r], fk_step[col]) {
                        (Some(m), Some(k)) => load_a(m, k),
                        _ => 0.0,
                    };
                    let (r, col) = b_coord(lane);
                    b[lane] = match (fk_step[r], fn_tile[col]) {
                        (Some(k), Some(n)) => load_b(k, n),
                        _ => 0.0,
                    };
                }
                c = dmma_m8n8k4(&a, &b, &c);
            }
            for (lane, vals) in c.iter().enumerate() {
                for (slot, (r, col)) in c_coords(lane).into_iter().enumerate() {
                    if let (Some(m), Some(n)) = (fm[r], fn_tile[col]) {
                        store(m, n, vals[slot]);
                    }
                }
            }
        }
    }
}

/// Dense `m x n` product of `a (m x k)` and `b (k x n)` through `mapping`.
pub fn tiled_gemm(mapping: &IndexMapping, a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>, MmaError> {
    mapping.validate()?;
    let found = GemmShape::new(a.nrows(), b.ncols(), a.ncols());
    if found != mapping.shape || b.nrows() != a.ncols() {
        return Err(MmaError::ShapeMismatch { expected: mapping.shape, found });
    }
    let mut c = DMatrix::zeros(found.m, found.n);
    tiled_gemm_with(mapping, |m, k| a[(m, k)], |k, n| b[(k, n)], |m, n, v| c[(m, n)] = v);
    Ok(c)
}

/// A validated mapping per GEMM shape.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MappingSet {
    mappings: BTreeMap<GemmShape, IndexMapping>,
}

impl MappingSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, mapping: IndexMapping) -> Result<(), MmaError> {
        mapping.validate()?;
        self.mappings.insert(mapping.shape, mapping);
        Ok(())
    }

    pub fn get(&self, shape: &GemmShape) -> Option<&IndexMapping> {
        self.mappings.get(shape)
    }

    pub fn shapes(&self) -> impl Iterator<Item = &GemmShape> {
        self.mappings.keys()
    }

    pub fn len(&self) -> usize {
        self.mappings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mappings.is_empty()
    }
}

/// GEMM shape of one cyclic contraction stage of `x` by a `q x d` matrix.
pub fn contraction_shape(b: &DMatrix<f64>, x: &Tensor3) -> GemmShape {
    let e = x.extents();
    GemmShape::new(e[1] * e[2], b.nrows(), b.ncols())
}

/// Cyclic contraction executed through [`tiled_gemm_with`].
///
/// The tensor is the `A` operand (`m = middle * slowest`, `k` = contracted extent, stored
/// `k`-fastest), the basis matrix transposed is `B`, and `C` is written `m`-fastest, which
/// is exactly the cyclic output order.
pub fn mma_contract_cyclic(b: &DMatrix<f64>, x: &Tensor3, mapping: &IndexMapping) -> Result<Tensor3, TensorError> {
    let e = x.extents();
    if e[0] != b.ncols() {
        return Err(TensorError::Shape { matrix_cols: b.ncols(), tensor_extent: e[0] });
    }
    let shape = contraction_shape(b, x);
    if shape != mapping.shape {
        return Err(TensorError::Backend(
            MmaError::ShapeMismatch { expected: mapping.shape, found: shape }.to_string(),
        ));
    }
    mapping.validate().map_err(|err| TensorError::Backend(err.to_string()))?;
    let (m, k) = (shape.m, shape.k);
    let src = x.data();
    let mut out = vec![0.0; shape.m * shape.n];
    tiled_gemm_with(
        mapping,
        |mi, ki| src[ki + k * mi],
        |ki, ni| b[(ni, ki)],
        |mi, ni, v| out[mi + m * ni] = v,
    );
    let order = x.order();
    Tensor3::new([e[1], e[2], b.nrows()], [order[1], order[2], order[0]], out)
}

/// Contraction engine that routes every stage through the emulated MMA path.
#[derive(Debug, Clone)]
pub struct MmaContract<'a> {
    pub mappings: &'a MappingSet,
}

impl Contract for MmaContract<'_> {
    fn contract(&self, b: &DMatrix<f64>, x: &Tensor3) -> Result<Tensor3, TensorError> {
        let shape = contraction_shape(b, x);
        let mapping = self
            .mappings
            .get(&shape)
            .ok_or_else(|| TensorError::Backend(MmaError::MissingMapping(shape).to_string()))?;
        mma_contract_cyclic(b, x, mapping)
    }
}
