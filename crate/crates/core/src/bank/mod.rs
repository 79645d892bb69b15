//! Shared-memory bank model for 8-byte warp accesses.
//!
//! A warp-wide 8-byte access is served in phases of `phase_split` lanes. Each lane's word
//! spans `word_bytes / bank_width_bytes` consecutive banks; lanes reading the same full
//! address in a phase are coalesced into one broadcast access, and padded lanes issue no
//! access at all.

mod diagram;
mod search;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mma::{a_coord, b_coord, c_coords, GemmShape, IndexMapping, MmaError, INSTR_K, INSTR_N, WARP_SIZE};

pub use diagram::render_diagram;
pub use search::{search_mapping, search_mapping_padded, PaddedSearch, SearchOutcome, SearchSpace, SearchStats};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BankError {
    #[error("address {0:#x} is not aligned to the word size")]
    Unaligned(u64),
    #[error("expected {expected} lane addresses, got {found}")]
    LaneCount { expected: usize, found: usize },
    #[error("invalid bank configuration: {0}")]
    Config(String),
    #[error("index ({row}, {col}) is outside layout '{layout}' ({rows}x{cols})")]
    OutOfBounds { layout: String, row: usize, col: usize, rows: usize, cols: usize },
    #[error("layout '{layout}' is {rows}x{cols} but operand {operand} needs {need_rows}x{need_cols}")]
    LayoutShape { layout: String, operand: char, rows: usize, cols: usize, need_rows: usize, need_cols: usize },
    #[error("layout '{0}' maps two indices to the same address")]
    NotInjective(String),
    #[error(transparent)]
    Mapping(#[from] MmaError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BankConfig {
    pub num_banks: u64,
    pub bank_width_bytes: u64,
    pub word_bytes: u64,
    /// Lanes served per access phase.
    pub phase_split: usize,
}

impl Default for BankConfig {
    fn default() -> Self {
        Self { num_banks: 32, bank_width_bytes: 4, word_bytes: 8, phase_split: 16 }
    }
}

impl BankConfig {
    pub fn validate(&self) -> Result<(), BankError> {
        if self.num_banks == 0 || self.bank_width_bytes == 0 {
            return Err(BankError::Config("bank count and width must be positive".into()));
        }
        if self.word_bytes == 0 || self.word_bytes % self.bank_width_bytes != 0 {
            return Err(BankError::Config(format!(
                "word size {} is not a multiple of bank width {}",
                self.word_bytes, self.bank_width_bytes
            )));
        }
        if self.phase_split == 0 || WARP_SIZE % self.phase_split != 0 {
            return Err(BankError::Config(format!("phase split {} does not divide the warp", self.phase_split)));
        }
        Ok(())
    }

    /// Bytes after which the bank pattern repeats.
    pub fn period_bytes(&self) -> u64 {
        self.num_banks * self.bank_width_bytes
    }

    pub fn banks_per_word(&self) -> u64 {
        self.word_bytes / self.bank_width_bytes
    }

    pub fn num_phases(&self) -> usize {
        WARP_SIZE / self.phase_split
    }
}

/// `floor(address / bank_width) mod num_banks`.
pub fn bank_of(address_bytes: u64, cfg: &BankConfig) -> usize {
    ((address_bytes / cfg.bank_width_bytes) % cfg.num_banks) as usize
}

/// Banks touched by one access phase.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseTrace {
    pub first_lane: usize,
    /// Per lane of the phase: the word address it accesses, if any.
    pub lane_addresses: Vec<Option<u64>>,
    /// Distinct word addresses after broadcast coalescing, ascending.
    pub words: Vec<u64>,
    /// Number of distinct words hitting each bank.
    pub histogram: Vec<u32>,
}

impl PhaseTrace {
    pub fn max_degree(&self) -> u32 {
        self.histogram.iter().copied().max().unwrap_or(0)
    }

    pub fn conflict_free(&self) -> bool {
        self.max_degree() <= 1
    }
}

/// Splits one warp-wide access into its phases and computes bank occupancy.
pub fn access_phases(lane_addresses: &[Option<u64>], cfg: &BankConfig) -> Result<Vec<PhaseTrace>, BankError> {
    cfg.validate()?;
    if lane_addresses.len() != WARP_SIZE {
        return Err(BankError::LaneCount { expected: WARP_SIZE, found: lane_addresses.len() });
    }
    if let Some(bad) = lane_addresses.iter().flatten().find(|&&a| a % cfg.word_bytes != 0) {
        return Err(BankError::Unaligned(*bad));
    }
    Ok(lane_addresses
        .chunks(cfg.phase_split)
        .enumerate()
        .map(|(p, lanes)| {
            let mut words: Vec<u64> = lanes.iter().flatten().copied().collect();
            words.sort_unstable();
            words.dedup();
            let mut histogram = vec![0u32; cfg.num_banks as usize];
            for &w in &words {
                for j in 0..cfg.banks_per_word() {
                    histogram[bank_of(w + j * cfg.bank_width_bytes, cfg)] += 1;
                }
            }
            PhaseTrace { first_lane: p * cfg.phase_split, lane_addresses: lanes.to_vec(), words, histogram }
        })
        .collect())
}

/// Maps a GEMM operand's `(row, col)` to a byte address.
///
/// The tensor indices are listed fastest-first; the first `row_axes` compose the row
/// index (mixed radix, first fastest) and the rest compose the column index. Strides are
/// in 8-byte elements.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SmemLayout {
    pub label: String,
    pub base_offset_bytes: u64,
    pub extents: Vec<usize>,
    pub strides_elems: Vec<usize>,
    pub row_axes: usize,
}

const ELEM_BYTES: u64 = 8;

impl SmemLayout {
    /// `(r, c)` at element `r * cols + c`.
    pub fn row_major(rows: usize, cols: usize) -> Self {
        Self { label: "row-major".into(), base_offset_bytes: 0, extents: vec![rows, cols], strides_elems: vec![cols, 1], row_axes: 1 }
    }

    /// `(r, c)` at element `r + c * rows`.
    pub fn col_major(rows: usize, cols: usize) -> Self {
        Self { label: "col-major".into(), base_offset_bytes: 0, extents: vec![rows, cols], strides_elems: vec![1, rows], row_axes: 1 }
    }

    pub fn with_base(mut self, base_offset_bytes: u64) -> Self {
        self.base_offset_bytes = base_offset_bytes;
        self
    }

    pub fn with_label(mut self, label: &str) -> Self {
        self.label = label.into();
        self
    }

    pub fn rows(&self) -> usize {
        self.extents[..self.row_axes].iter().product()
    }

    pub fn cols(&self) -> usize {
        self.extents[self.row_axes..].iter().product()
    }

    pub fn address(&self, row: usize, col: usize) -> Result<u64, BankError> {
        let (rows, cols) = (self.rows(), self.cols());
        if row >= rows || col >= cols {
            return Err(BankError::OutOfBounds { layout: self.label.clone(), row, col, rows, cols });
        }
        let mut elem = 0usize;
        let mut rem = row;
        for (e, s) in self.extents[..self.row_axes].iter().zip(&self.strides_elems) {
            elem += (rem % e) * s;
            rem /= e;
        }
        rem = col;
        for (e, s) in self.extents[self.row_axes..].iter().zip(&self.strides_elems[self.row_axes..]) {
            elem += (rem % e) * s;
            rem /= e;
        }
        Ok(self.base_offset_bytes + elem as u64 * ELEM_BYTES)
    }

    pub fn check_injective(&self) -> Result<(), BankError> {
        let mut addrs = Vec::with_capacity(self.rows() * self.cols());
        for r in 0..self.rows() {
            for c in 0..self.cols() {
                addrs.push(self.address(r, c)?);
            }
        }
        addrs.sort_unstable();
        if addrs.windows(2).any(|w| w[0] == w[1]) {
            return Err(BankError::NotInjective(self.label.clone()));
        }
        Ok(())
    }
}

/// Shared-memory layouts of the three operands of one GEMM.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OperandLayouts {
    pub a: SmemLayout,
    pub b: SmemLayout,
    pub c: SmemLayout,
}

impl OperandLayouts {
    /// Layouts of a cyclic sum-factorization stage: the data tensor `A` and the basis
    /// operand `B` are stored contracted-index fastest, the result `C` is stored with the
    /// row index fastest (the new index becomes the slowest tensor index).
    pub fn cyclic(shape: GemmShape) -> Self {
        Self {
            a: SmemLayout::row_major(shape.m, shape.k).with_label("A cyclic (k fastest)"),
            b: SmemLayout::col_major(shape.k, shape.n).with_label("B (k fastest)"),
            c: SmemLayout::col_major(shape.m, shape.n).with_label("C cyclic (m fastest)"),
        }
    }

    /// [`OperandLayouts::cyclic`] with the column stride of `C` padded to `m + c_pad`
    /// elements. With `m` a multiple of 16 every column of a dense `C` starts on the same
    /// bank, so no mapping can store four columns per phase without conflicts.
    pub fn cyclic_padded(shape: GemmShape, c_pad: usize) -> Self {
        let mut layouts = Self::cyclic(shape);
        if c_pad > 0 {
            layouts.c.strides_elems[1] = shape.m + c_pad;
            layouts.c.label = format!("C cyclic (m fastest, column stride m+{c_pad})");
        }
        layouts
    }

    /// Like [`OperandLayouts::cyclic`] but the data tensor is contracted over its middle
    /// index: rows `m = a + fast * c` of a tensor stored `(a, contracted, c)`.
    pub fn middle_contracted(shape: GemmShape, fast: usize) -> Self {
        assert!(fast > 0 && shape.m % fast == 0, "fast extent must divide m");
        let mut layouts = Self::cyclic(shape);
        layouts.a = SmemLayout {
            label: "A middle-index contracted".into(),
            base_offset_bytes: 0,
            extents: vec![fast, shape.m / fast, shape.k],
            strides_elems: vec![1, fast * shape.k, fast],
            row_axes: 2,
        };
        layouts
    }

    pub fn row_major(shape: GemmShape) -> Self {
        Self {
            a: SmemLayout::row_major(shape.m, shape.k),
            b: SmemLayout::row_major(shape.k, shape.n),
            c: SmemLayout::row_major(shape.m, shape.n),
        }
    }

    fn check(&self, shape: GemmShape) -> Result<(), BankError> {
        for (op, l, r, c) in [('A', &self.a, shape.m, shape.k), ('B', &self.b, shape.k, shape.n), ('C', &self.c, shape.m, shape.n)] {
            if l.rows() != r || l.cols() != c {
                return Err(BankError::LayoutShape {
                    layout: l.label.clone(),
                    operand: op,
                    rows: l.rows(),
                    cols: l.cols(),
                    need_rows: r,
                    need_cols: c,
                });
            }
            l.check_injective()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AccessKind {
    ALoad,
    BLoad,
    CStore0,
    CStore1,
}

impl AccessKind {
    pub const ALL: [AccessKind; 4] = [AccessKind::ALoad, AccessKind::BLoad, AccessKind::CStore0, AccessKind::CStore1];

    pub fn name(&self) -> &'static str {
        match self {
            AccessKind::ALoad => "A load (a0)",
            AccessKind::BLoad => "B load (b0)",
            AccessKind::CStore0 => "C store (c0)",
            AccessKind::CStore1 => "C store (c1)",
        }
    }
}

/// Which emulated instruction an access belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstrSite {
    pub warp: usize,
    pub n_tile: usize,
    pub k_step: usize,
}

/// Worst case over all instructions for one access kind.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccessSummary {
    pub kind: AccessKind,
    pub max_degree: u32,
    /// Instruction sites with at least one conflicting phase.
    pub conflicting_sites: usize,
    pub total_sites: usize,
    /// The first site reaching `max_degree`, with its phase traces.
    pub worst_site: InstrSite,
    pub phases: Vec<PhaseTrace>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConflictReport {
    pub shape: GemmShape,
    pub config: BankConfig,
    pub accesses: Vec<AccessSummary>,
    pub max_degree: u32,
    pub conflict_free: bool,
}

impl ConflictReport {
    pub fn access(&self, kind: AccessKind) -> &AccessSummary {
        self.accesses.iter().find(|a| a.kind == kind).expect("all access kinds are reported")
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Per-lane addresses of one access kind at one instruction site. Padded lanes and
/// lanes whose column is not yet decided (`None` in a partial map) issue no access.
pub(crate) fn lane_addresses(
    kind: AccessKind,
    f_m: &[Option<usize>; 8],
    f_n_tile: &[Option<usize>],
    f_k_step: &[Option<usize>],
    layouts: &OperandLayouts,
) -> Result<[Option<u64>; WARP_SIZE], BankError> {
    let mut out = [None; WARP_SIZE];
    for (lane, slot) in out.iter_mut().enumerate() {
        let cell = match kind {
            AccessKind::ALoad => {
                let (r, c) = a_coord(lane);
                f_m[r].zip(f_k_step[c]).map(|(m, k)| (&layouts.a, m, k))
            }
            AccessKind::BLoad => {
                let (r, c) = b_coord(lane);
                f_k_step[r].zip(f_n_tile[c]).map(|(k, n)| (&layouts.b, k, n))
            }
            AccessKind::CStore0 | AccessKind::CStore1 => {
                let (r, c) = c_coords(lane)[(kind == AccessKind::CStore1) as usize];
                f_m[r].zip(f_n_tile[c]).map(|(m, n)| (&layouts.c, m, n))
            }
        };
        if let Some((layout, row, col)) = cell {
            *slot = Some(layout.address(row, col)?);
        }
    }
    Ok(out)
}

/// Every instruction site an access kind occurs at: loads once per `(warp, tile, step)`,
/// stores once per `(warp, tile)`.
fn sites(kind: AccessKind, mapping: &IndexMapping) -> Vec<InstrSite> {
    let steps = if matches!(kind, AccessKind::CStore0 | AccessKind::CStore1) { 1 } else { mapping.k_steps() };
    let mut v = Vec::new();
    for warp in 0..mapping.num_warps() {
        for n_tile in 0..mapping.n_tiles() {
            for k_step in 0..steps {
                v.push(InstrSite { warp, n_tile, k_step });
            }
        }
    }
    v
}

pub(crate) fn summarize(
    kind: AccessKind,
    mapping: &IndexMapping,
    layouts: &OperandLayouts,
    cfg: &BankConfig,
) -> Result<AccessSummary, BankError> {
    let mut best: Option<AccessSummary> = None;
    let all = sites(kind, mapping);
    let mut conflicting = 0;
    for site in &all {
        let addrs = lane_addresses(
            kind,
            &mapping.f_m[site.warp],
            &mapping.f_n[site.n_tile * INSTR_N..(site.n_tile + 1) * INSTR_N],
            &mapping.f_k[site.k_step * INSTR_K..(site.k_step + 1) * INSTR_K],
            layouts,
        )?;
        let phases = access_phases(&addrs, cfg)?;
        let degree = phases.iter().map(PhaseTrace::max_degree).max().unwrap_or(0);
        if degree > 1 {
            conflicting += 1;
        }
        if best.as_ref().is_none_or(|b| degree > b.max_degree) {
            best = Some(AccessSummary {
                kind,
                max_degree: degree,
                conflicting_sites: 0,
                total_sites: 0,
                worst_site: *site,
                phases,
            });
        }
    }
    let mut summary = best.expect("a mapping has at least one instruction site");
    summary.conflicting_sites = conflicting;
    summary.total_sites = all.len();
    Ok(summary)
}

/// Derives every lane's A/B/C addresses for every warp and instruction of `mapping`
/// and reports the worst bank-conflict degree per access kind.
pub fn verify_mapping(mapping: &IndexMapping, layouts: &OperandLayouts, cfg: &BankConfig) -> Result<ConflictReport, BankError> {
    cfg.validate()?;
    mapping.validate()?;
    layouts.check(mapping.shape)?;
    let accesses = AccessKind::ALL
        .iter()
        .map(|&kind| summarize(kind, mapping, layouts, cfg))
        .collect::<Result<Vec<_>, _>>()?;
    let max_degree = accesses.iter().map(|a| a.max_degree).max().unwrap_or(0);
    Ok(ConflictReport { shape: mapping.shape, config: *cfg, accesses, max_degree, conflict_free: max_degree <= 1 })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> BankConfig {
        BankConfig::default()
    }

    fn lanes(f: impl Fn(usize) -> Option<u64>) -> Vec<Option<u64>> {
        (0..32).map(f).collect()
    }

    #[test]
    fn bank_of_examples() {
        assert_eq!(bank_of(0, &cfg()), 0);
        assert_eq!(bank_of(4, &cfg()), 1);
        assert_eq!(bank_of(132, &cfg()), 1);
    }

    #[test]
    fn contiguous_words_fill_all_banks() {
        let p = access_phases(&lanes(|l| Some(8 * l as u64)), &cfg()).unwrap();
        assert_eq!(p.len(), 2);
        for phase in &p {
            assert!(phase.histogram.iter().all(|&h| h == 1));
            assert!(phase.conflict_free());
        }
    }

    #[test]
    fn stride_128_serializes() {
        let p = access_phases(&lanes(|l| Some(128 * l as u64)), &cfg()).unwrap();
        assert_eq!(p[0].max_degree(), 16);
        let touched: Vec<usize> = (0..32).filter(|&b| p[0].histogram[b] > 0).collect();
        assert_eq!(touched, vec![0, 1]);
    }

    #[test]
    fn broadcast_coalesces() {
        let p = access_phases(&lanes(|_| Some(256)), &cfg()).unwrap();
        assert_eq!(p[0].words, vec![256]);
        assert!(p[0].conflict_free());
    }

    #[test]
    fn padded_lanes_do_not_access() {
        let p = access_phases(&lanes(|l| (l % 2 == 0).then_some(0)), &cfg()).unwrap();
        assert_eq!(p[0].lane_addresses.iter().flatten().count(), 8);
        assert!(p.iter().all(PhaseTrace::conflict_free));
    }

    #[test]
    fn unaligned_rejected() {
        assert_eq!(access_phases(&lanes(|l| Some(4 * l as u64)), &cfg()), Err(BankError::Unaligned(4)));
        assert!(matches!(access_phases(&[Some(0)], &cfg()), Err(BankError::LaneCount { .. })));
    }

    #[test]
    fn bad_config_rejected() {
        let c = BankConfig { word_bytes: 6, ..cfg() };
        assert!(c.validate().is_err());
        let c = BankConfig { phase_split: 5, ..cfg() };
        assert!(c.validate().is_err());
    }

    #[test]
    fn layout_addresses() {
        let l = SmemLayout::row_major(3, 4).with_base(64);
        assert_eq!(l.address(2, 1).unwrap(), 64 + 8 * 9);
        assert!(l.address(3, 0).is_err());
        let m = OperandLayouts::middle_contracted(GemmShape::new(25, 5, 4), 5).a;
        // row m = a + 5c, col j -> a + 5 j + 20 c
        assert_eq!(m.address(7, 3).unwrap(), 8 * (2 + 15 + 20));
        m.check_injective().unwrap();
        let bad = SmemLayout { strides_elems: vec![1, 1], ..SmemLayout::row_major(2, 2) };
        assert!(bad.check_injective().is_err());
    }

    #[test]
    fn reference_mapping_is_conflict_free() {
        let shape = GemmShape::new(25, 5, 4);
        let r = verify_mapping(&IndexMapping::conflict_free_25x5x4(), &OperandLayouts::cyclic(shape), &cfg()).unwrap();
        assert!(r.conflict_free, "{}", r.to_json());
    }

    #[test]
    fn identity_columns_conflict_on_c_store() {
        let shape = GemmShape::new(25, 5, 4);
        let r = verify_mapping(&IndexMapping::blocked(shape), &OperandLayouts::cyclic(shape), &cfg()).unwrap();
        assert!(!r.conflict_free);
        assert_eq!(r.access(AccessKind::ALoad).max_degree, 1);
        assert!(r.access(AccessKind::CStore0).max_degree > 1);
    }

    #[test]
    fn layout_shape_mismatch_reported() {
        let shape = GemmShape::new(25, 5, 4);
        let mut l = OperandLayouts::cyclic(shape);
        l.b = SmemLayout::row_major(5, 5);
        assert!(matches!(
            verify_mapping(&IndexMapping::conflict_free_25x5x4(), &l, &cfg()),
            Err(BankError::LayoutShape { operand: 'B', .. })
        ));
    }
}
