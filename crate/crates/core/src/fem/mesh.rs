//! Structured hexahedral meshes with tagged boundary faces.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::FemError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BoundaryTag {
    /// Sea surface (top, `z = max`).
    Surface,
    /// Sea floor (`z = 0`).
    Bottom,
    /// Lateral sides.
    Absorbing,
}

/// Face of the reference cube `[-1, 1]^3`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Face {
    XMin,
    XMax,
    YMin,
    YMax,
    ZMin,
    ZMax,
}

impl Face {
    pub const ALL: [Face; 6] = [Face::XMin, Face::XMax, Face::YMin, Face::YMax, Face::ZMin, Face::ZMax];

    /// Normal reference axis and whether the face sits at `+1`.
    pub fn axis(&self) -> (usize, bool) {
        match self {
            Face::XMin => (0, false),
            Face::XMax => (0, true),
            Face::YMin => (1, false),
            Face::YMax => (1, true),
            Face::ZMin => (2, false),
            Face::ZMax => (2, true),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundaryFace {
    pub element: usize,
    pub face: Face,
    pub tag: BoundaryTag,
}

/// Hexahedral mesh. Element vertex `a + 2 b + 4 c` sits at reference corner
/// `(2a - 1, 2b - 1, 2c - 1)`; the element map is trilinear.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mesh {
    pub dims: [usize; 3],
    pub extents: [f64; 3],
    pub vertices: Vec<[f64; 3]>,
    pub elements: Vec<[usize; 8]>,
    pub boundary: Vec<BoundaryFace>,
}

impl Mesh {
    pub fn num_elements(&self) -> usize {
        self.elements.len()
    }

    /// Element `(ex, ey, ez)` of the structured grid, x fastest.
    pub fn element_index(&self, ex: usize, ey: usize, ez: usize) -> usize {
        ex + self.dims[0] * (ey + self.dims[1] * ez)
    }

    pub fn element_coords(&self, e: usize) -> [[f64; 3]; 8] {
        self.elements[e].map(|v| self.vertices[v])
    }

    pub fn volume(&self) -> f64 {
        self.extents.iter().product()
    }

    /// Moves every interior vertex by a uniform random offset of at most `fraction` of the
    /// local cell size per axis. Boundary vertices stay put so the domain is unchanged.
    pub fn perturbed(mut self, fraction: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = [0, 1, 2].map(|i| self.extents[i] / self.dims[i] as f64);
        let n = self.dims.map(|d| d + 1);
        for iz in 0..n[2] {
            for iy in 0..n[1] {
                for ix in 0..n[0] {
                    let idx = [ix, iy, iz];
                    let v = ix + n[0] * (iy + n[1] * iz);
                    for axis in 0..3 {
                        if idx[axis] > 0 && idx[axis] < self.dims[axis] {
                            self.vertices[v][axis] += fraction * h[axis] * rng.random_range(-1.0..1.0);
                        }
                    }
                }
            }
        }
        self
    }
}

/// Axis-aligned `nx x ny x nz` box `[0, Lx] x [0, Ly] x [0, Lz]`; top faces are tagged
/// surface, bottom faces bottom, side faces absorbing.
pub fn build_mesh(nx: usize, ny: usize, nz: usize, extents: [f64; 3]) -> Result<Mesh, FemError> {
    let dims = [nx, ny, nz];
    if dims.contains(&0) {
        return Err(FemError::ZeroExtent(format!("element counts {dims:?}")));
    }
    if extents.iter().any(|&l| !(l > 0.0 && l.is_finite())) {
        return Err(FemError::ZeroExtent(format!("box extents {extents:?}")));
    }
    let n = dims.map(|d| d + 1);
    let mut vertices = Vec::with_capacity(n.iter().product());
    for iz in 0..n[2] {
        for iy in 0..n[1] {
            for ix in 0..n[0] {
                vertices.push([
                    extents[0] * ix as f64 / nx as f64,
                    extents[1] * iy as f64 / ny as f64,
                    extents[2] * iz as f64 / nz as f64,
                ]);
            }
        }
    }
    let vid = |ix: usize, iy: usize, iz: usize| ix + n[0] * (iy + n[1] * iz);
    let mut elements = Vec::with_capacity(nx * ny * nz);
    let mut boundary = Vec::new();
    for ez in 0..nz {
        for ey in 0..ny {
            for ex in 0..nx {
                let e = elements.len();
                elements.push(std::array::from_fn(|v| vid(ex + (v & 1), ey + ((v >> 1) & 1), ez + ((v >> 2) & 1))));
                let mut tag = |cond: bool, face: Face, tag: BoundaryTag| {
                    if cond {
                        boundary.push(BoundaryFace { element: e, face, tag });
                    }
                };
                tag(ex == 0, Face::XMin, BoundaryTag::Absorbing);
                tag(ex + 1 == nx, Face::XMax, BoundaryTag::Absorbing);
                tag(ey == 0, Face::YMin, BoundaryTag::Absorbing);
                tag(ey + 1 == ny, Face::YMax, BoundaryTag::Absorbing);
                tag(ez == 0, Face::ZMin, BoundaryTag::Bottom);
                tag(ez + 1 == nz, Face::ZMax, BoundaryTag::Surface);
            }
        }
    }
    Ok(Mesh { dims, extents, vertices, elements, boundary })
}
