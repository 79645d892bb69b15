//! Deterministic depth-first search for conflict-free index mappings.
//!
//! The space is: a warp tiling family for rows, then per k-step placements of that step's
//! depth indices into the four instruction slots, then per column tile placements of the
//! tile's columns into the eight instruction slots. Slots are filled in order, values in
//! ascending order with padding last, so the first success is the lexicographically
//! smallest conflict-free mapping. Partial assignments are checked as they grow: an
//! unassigned slot issues no access, and a conflict among a subset of accesses survives
//! any extension, so pruning is exact.
//!
//! If no row family works, a second stage partitions the rows freely into groups of
//! four, one group per access phase (see [`Dfs::partition_stage`]).

use serde::{Deserialize, Serialize};

use super::{access_phases, lane_addresses, AccessKind, BankConfig, BankError, OperandLayouts, PhaseTrace};
use crate::mma::{GemmShape, IndexMapping, INSTR_K, INSTR_M, INSTR_N};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchStats {
    pub budget: u64,
    /// Partial assignments expanded.
    pub nodes: u64,
    /// Partial assignments rejected by a conflict.
    pub pruned: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum SearchOutcome {
    Found { mapping: IndexMapping, stats: SearchStats },
    NotFound { stats: SearchStats },
}

impl SearchOutcome {
    pub fn mapping(&self) -> Option<&IndexMapping> {
        match self {
            SearchOutcome::Found { mapping, .. } => Some(mapping),
            SearchOutcome::NotFound { .. } => None,
        }
    }

    pub fn stats(&self) -> SearchStats {
        match self {
            SearchOutcome::Found { stats, .. } | SearchOutcome::NotFound { stats } => *stats,
        }
    }
}

/// The candidate families explored by [`search_mapping`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SearchSpace {
    pub shape: GemmShape,
}

impl SearchSpace {
    pub fn new(shape: GemmShape) -> Self {
        Self { shape }
    }

    pub fn num_warps(&self) -> usize {
        self.shape.m.div_ceil(INSTR_M)
    }

    /// Row maps: warp-blocked (`m_i + 8 w`) then warp-strided (`m_i * W + w`).
    pub fn row_families(&self) -> Vec<Vec<[Option<usize>; INSTR_M]>> {
        let w_count = self.num_warps();
        let m = self.shape.m;
        let blocked = (0..w_count)
            .map(|w| std::array::from_fn(|mi| Some(mi + INSTR_M * w).filter(|&p| p < m)))
            .collect();
        let strided = (0..w_count)
            .map(|w| std::array::from_fn(|mi| Some(mi * w_count + w).filter(|&p| p < m)))
            .collect();
        if w_count == 1 {
            vec![blocked]
        } else {
            vec![blocked, strided]
        }
    }

    fn chunk(extent: usize, width: usize, index: usize) -> std::ops::Range<usize> {
        index * width..((index + 1) * width).min(extent)
    }

    /// Whether `mapping` lies in this space: a valid cover with the instruction count of
    /// the shape, every step and tile holding exactly its own chunk of depth indices and
    /// columns.
    pub fn contains(&self, mapping: &IndexMapping) -> bool {
        let (_, tn, sk) = self.shape.tiles();
        if mapping.shape != self.shape || mapping.n_tiles() != tn || mapping.k_steps() != sk {
            return false;
        }
        if mapping.validate().is_err() {
            return false;
        }
        if mapping.num_warps() != self.num_warps() {
            return false;
        }
        let placement_ok = |slots: &[Option<usize>], expected: std::ops::Range<usize>| {
            let mut vals: Vec<usize> = slots.iter().flatten().copied().collect();
            vals.sort_unstable();
            vals == expected.collect::<Vec<_>>()
        };
        mapping
            .f_k
            .chunks(INSTR_K)
            .enumerate()
            .all(|(s, slots)| placement_ok(slots, Self::chunk(self.shape.k, INSTR_K, s)))
            && mapping
                .f_n
                .chunks(INSTR_N)
                .enumerate()
                .all(|(t, slots)| placement_ok(slots, Self::chunk(self.shape.n, INSTR_N, t)))
    }
}

struct Dfs<'a> {
    shape: GemmShape,
    layouts: &'a OperandLayouts,
    cfg: &'a BankConfig,
    stats: SearchStats,
    f_m: Vec<[Option<usize>; INSTR_M]>,
    f_k: Vec<Option<usize>>,
    f_n: Vec<Option<usize>>,
    k_done: Vec<bool>,
    n_done: Vec<bool>,
    half_rows: Vec<usize>,
    halves_open: usize,
}

/// Rows served by one access phase of an instruction.
const PHASE_ROWS: usize = INSTR_M / 2;

enum Step {
    Found,
    Exhausted,
    OutOfBudget,
}

impl Dfs<'_> {
    fn tick(&mut self) -> bool {
        if self.stats.nodes >= self.stats.budget {
            return false;
        }
        self.stats.nodes += 1;
        true
    }

    fn phases_ok(&self, kind: AccessKind, warp: usize, tile: usize, step: usize) -> Result<bool, BankError> {
        let addrs = lane_addresses(
            kind,
            &self.f_m[warp],
            &self.f_n[tile * INSTR_N..(tile + 1) * INSTR_N],
            &self.f_k[step * INSTR_K..(step + 1) * INSTR_K],
            self.layouts,
        )?;
        Ok(access_phases(&addrs, self.cfg)?.iter().all(PhaseTrace::conflict_free))
    }

    /// A loads of one k-step across all warps.
    fn k_step_ok(&self, step: usize) -> Result<bool, BankError> {
        for w in 0..self.f_m.len() {
            if !self.phases_ok(AccessKind::ALoad, w, 0, step)? {
                return Ok(false);
            }
        }
        Ok(true)
    }

    /// B loads and C stores touching one column tile.
    fn n_tile_ok(&self, tile: usize) -> Result<bool, BankError> {
        for s in 0..self.f_k.len() / INSTR_K {
            if !self.phases_ok(AccessKind::BLoad, 0, tile, s)? {
                return Ok(false);
            }
        }
        for w in 0..self.f_m.len() {
            for kind in [AccessKind::CStore0, AccessKind::CStore1] {
                if !self.phases_ok(kind, w, tile, 0)? {
                    return Ok(false);
                }
            }
        }
        Ok(true)
    }

    /// Fills `slots[pos..]` of the map selected by `is_k`, trying values in ascending
    /// order and padding last.
    fn place(&mut self, is_k: bool, pos: usize) -> Result<Step, BankError> {
        let (width, extent, len) = if is_k {
            (INSTR_K, self.shape.k, self.f_k.len())
        } else {
            (INSTR_N, self.shape.n, self.f_n.len())
        };
        if pos == len {
            return if is_k { self.place(false, 0) } else { Ok(Step::Found) };
        }
        let chunk = pos / width;
        let range = SearchSpace::chunk(extent, width, chunk);
        let slot_end = (chunk + 1) * width;
        let done = if is_k { &self.k_done } else { &self.n_done };
        let remaining: Vec<usize> = range.clone().filter(|&v| !done[v]).collect();
        let free_slots = slot_end - pos;
        let mut options: Vec<Option<usize>> = remaining.iter().map(|&v| Some(v)).collect();
        if free_slots > remaining.len() {
            options.push(None);
        }
        for opt in options {
            if !self.tick() {
                return Ok(Step::OutOfBudget);
            }
            if is_k {
                self.f_k[pos] = opt;
            } else {
                self.f_n[pos] = opt;
            }
            if let Some(v) = opt {
                if is_k {
                    self.k_done[v] = true;
                } else {
                    self.n_done[v] = true;
                }
            }
            let ok = if is_k { self.k_step_ok(chunk)? } else { self.n_tile_ok(chunk)? };
            let result = if ok {
                self.place(is_k, pos + 1)?
            } else {
                self.stats.pruned += 1;
                Step::Exhausted
            };
            if let Some(v) = opt {
                if is_k {
                    self.k_done[v] = false;
                } else {
                    self.n_done[v] = false;
                }
            }
            match result {
                Step::Exhausted => {}
                other => return Ok(other),
            }
            if is_k {
                self.f_k[pos] = None;
            } else {
                self.f_n[pos] = None;
            }
        }
        Ok(Step::Exhausted)
    }

    /// Second stage, reached when the row families fail. Every conflict check looks at
    /// one phase, and a phase sees all combinations of its rows with its depth or column
    /// slots, so only three things matter: which depth indices share a step (fixed by the
    /// chunking), which (half, parity) quadrant of the eight column slots each column
    /// takes, and how rows are partitioned into groups of four (one group per phase).
    fn partition_stage(&mut self) -> Result<Step, BankError> {
        let (_, _, sk) = self.shape.tiles();
        for s in 0..sk {
            let range = SearchSpace::chunk(self.shape.k, INSTR_K, s);
            for j in 0..INSTR_K {
                self.f_k[s * INSTR_K + j] = Some(range.start + j).filter(|v| range.contains(v));
            }
        }
        self.f_n.iter_mut().for_each(|v| *v = None);
        let warps = self.f_m.len();
        self.f_m = vec![[None; INSTR_M]; warps];
        self.half_rows = vec![0; 2 * warps];
        self.halves_open = 0;
        self.place_columns(0, 0)
    }

    fn place_columns(&mut self, tile: usize, idx: usize) -> Result<Step, BankError> {
        let (_, tn, _) = self.shape.tiles();
        if tile == tn {
            return self.place_rows(0);
        }
        let range = SearchSpace::chunk(self.shape.n, INSTR_N, tile);
        if idx == range.len() {
            return self.place_columns(tile + 1, 0);
        }
        let value = range.start + idx;
        // quadrants are interchangeable until one is used, so the first column takes quadrant 0
        let quadrants = if idx == 0 { 1 } else { 4 };
        for quadrant in 0..quadrants {
            let (half, parity) = (quadrant / 2, quadrant % 2);
            let base = tile * INSTR_N + half * PHASE_ROWS + parity;
            let Some(slot) = [base, base + 2].into_iter().find(|&s| self.f_n[s].is_none()) else {
                continue;
            };
            if !self.tick() {
                return Ok(Step::OutOfBudget);
            }
            self.f_n[slot] = Some(value);
            let mut ok = true;
            for step in 0..self.f_k.len() / INSTR_K {
                if !self.phases_ok(AccessKind::BLoad, 0, tile, step)? {
                    ok = false;
                    break;
                }
            }
            let result = if ok {
                self.place_columns(tile, idx + 1)?
            } else {
                self.stats.pruned += 1;
                Step::Exhausted
            };
            match result {
                Step::Exhausted => self.f_n[slot] = None,
                other => return Ok(other),
            }
        }
        Ok(Step::Exhausted)
    }

    /// Assigns row `r` to an open group or opens the next one; groups are unordered, so
    /// this enumerates each partition once.
    fn place_rows(&mut self, r: usize) -> Result<Step, BankError> {
        if r == self.shape.m {
            return Ok(Step::Found);
        }
        let (_, tn, sk) = self.shape.tiles();
        for h in 0..self.half_rows.len() {
            let count = self.half_rows[h];
            if count == PHASE_ROWS || (count == 0 && h != self.halves_open) {
                continue;
            }
            if !self.tick() {
                return Ok(Step::OutOfBudget);
            }
            let (warp, slot) = (h / 2, (h % 2) * PHASE_ROWS + count);
            self.f_m[warp][slot] = Some(r);
            self.half_rows[h] += 1;
            let opened = count == 0;
            if opened {
                self.halves_open += 1;
            }
            let mut ok = true;
            'check: for step in 0..sk {
                if !self.phases_ok(AccessKind::ALoad, warp, 0, step)? {
                    ok = false;
                    break 'check;
                }
            }
            if ok {
                'check: for tile in 0..tn {
                    for kind in [AccessKind::CStore0, AccessKind::CStore1] {
                        if !self.phases_ok(kind, warp, tile, 0)? {
                            ok = false;
                            break 'check;
                        }
                    }
                }
            }
            let result = if ok {
                self.place_rows(r + 1)?
            } else {
                self.stats.pruned += 1;
                Step::Exhausted
            };
            match result {
                Step::Exhausted => {
                    self.f_m[warp][slot] = None;
                    self.half_rows[h] -= 1;
                    if opened {
                        self.halves_open -= 1;
                    }
                }
                other => return Ok(other),
            }
        }
        Ok(Step::Exhausted)
    }
}

/// Searches for a mapping of `shape` whose A loads, B loads and C stores are all
/// bank-conflict free under `layouts`. Gives up after `budget` search nodes.
pub fn search_mapping(
    shape: GemmShape,
    layouts: &OperandLayouts,
    cfg: &BankConfig,
    budget: u64,
) -> Result<SearchOutcome, BankError> {
    cfg.validate()?;
    if !shape.is_valid() {
        return Err(BankError::Mapping(crate::mma::MmaError::Malformed(format!("shape {shape} has a zero dimension"))));
    }
    let space = SearchSpace::new(shape);
    let (_, tn, sk) = shape.tiles();
    let mut dfs = Dfs {
        shape,
        layouts,
        cfg,
        stats: SearchStats { budget, ..Default::default() },
        f_m: Vec::new(),
        f_k: vec![None; sk * INSTR_K],
        f_n: vec![None; tn * INSTR_N],
        k_done: vec![false; shape.k],
        n_done: vec![false; shape.n],
        half_rows: Vec::new(),
        halves_open: 0,
    };
    let found = |dfs: &Dfs| {
        let mapping = IndexMapping { shape, f_m: dfs.f_m.clone(), f_n: dfs.f_n.clone(), f_k: dfs.f_k.clone() };
        debug_assert!(mapping.validate().is_ok());
        Ok(SearchOutcome::Found { mapping, stats: dfs.stats })
    };
    for family in space.row_families() {
        if !dfs.tick() {
            return Ok(SearchOutcome::NotFound { stats: dfs.stats });
        }
        dfs.f_m = family;
        match dfs.place(true, 0)? {
            Step::Found => return found(&dfs),
            Step::OutOfBudget => return Ok(SearchOutcome::NotFound { stats: dfs.stats }),
            Step::Exhausted => {}
        }
    }
    match dfs.partition_stage()? {
        Step::Found => found(&dfs),
        _ => Ok(SearchOutcome::NotFound { stats: dfs.stats }),
    }
}

/// Result of [`search_mapping_padded`]: the smallest `C` column padding that admits a
/// conflict-free mapping, with the layouts used.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PaddedSearch {
    pub c_pad: usize,
    pub layouts: OperandLayouts,
    pub outcome: SearchOutcome,
    /// Statistics of every attempt, one per padding tried.
    pub attempts: Vec<SearchStats>,
}

/// Runs [`search_mapping`] on [`OperandLayouts::cyclic_padded`] for `c_pad = 0..=max_pad`
/// and stops at the first success. `budget` is shared by all attempts.
pub fn search_mapping_padded(
    shape: GemmShape,
    cfg: &BankConfig,
    budget: u64,
    max_pad: usize,
) -> Result<PaddedSearch, BankError> {
    let mut attempts = Vec::new();
    let mut spent = 0u64;
    let mut last = None;
    for c_pad in 0..=max_pad {
        let layouts = OperandLayouts::cyclic_padded(shape, c_pad);
        let outcome = search_mapping(shape, &layouts, cfg, budget - spent)?;
        let stats = outcome.stats();
        spent += stats.nodes;
        attempts.push(stats);
        let found = outcome.mapping().is_some();
        last = Some(PaddedSearch { c_pad, layouts, outcome, attempts: Vec::new() });
        if found || spent >= budget {
            break;
        }
    }
    let mut result = last.expect("at least one padding is tried");
    result.attempts = attempts;
    if let SearchOutcome::NotFound { stats } = &mut result.outcome {
        *stats = SearchStats { budget, nodes: spent, pruned: result.attempts.iter().map(|a| a.pruned).sum() };
    }
    Ok(result)
}
