//! Line-oriented mapping tables.
//!
//! ```text
//! dmma-mapping v1 shape=25x5x4 warps=4 n_tiles=1 k_steps=1
//! # warp instr_m instr_n instr_k -> prob_m prob_n prob_k | PAD
//! 0 0 0 0 -> 0 0 0
//! 3 1 0 0 -> PAD
//! ```
//!
//! Every `(warp, instr_m, instr_n, instr_k)` slot appears exactly once. A slot reads
//! `PAD` when any of its three components is a padding slot; the per-axis maps are
//! recovered from the non-padded lines.

use std::collections::HashMap;
use std::fmt::Write as _;

use super::{GemmShape, IndexMapping, MmaError, INSTR_K, INSTR_M, INSTR_N};

pub const MAPPING_FORMAT_VERSION: u32 = 1;
const MAGIC: &str = "dmma-mapping";

pub fn write_mapping(mapping: &IndexMapping) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{MAGIC} v{MAPPING_FORMAT_VERSION} shape={} warps={} n_tiles={} k_steps={}",
        mapping.shape,
        mapping.num_warps(),
        mapping.n_tiles(),
        mapping.k_steps()
    );
    out.push_str("# warp instr_m instr_n instr_k -> prob_m prob_n prob_k | PAD\n");
    for (w, fm) in mapping.f_m.iter().enumerate() {
        for (mi, mp) in fm.iter().enumerate() {
            for (ni, np) in mapping.f_n.iter().enumerate() {
                for (ki, kp) in mapping.f_k.iter().enumerate() {
                    match (mp, np, kp) {
                        (Some(m), Some(n), Some(k)) => {
                            let _ = writeln!(out, "{w} {mi} {ni} {ki} -> {m} {n} {k}");
                        }
                        _ => {
                            let _ = writeln!(out, "{w} {mi} {ni} {ki} -> PAD");
                        }
                    }
                }
            }
        }
    }
    out
}

fn parse_err(line: usize, message: impl Into<String>) -> MmaError {
    MmaError::Parse { line, message: message.into() }
}

fn header_field<'a>(fields: &HashMap<&'a str, &'a str>, key: &str) -> Result<&'a str, MmaError> {
    fields.get(key).copied().ok_or_else(|| parse_err(1, format!("header is missing '{key}='")))
}

/// Sets `slot` to `value`, rejecting a conflicting earlier assignment.
fn assign(slot: &mut Option<usize>, value: usize, what: &str, line: usize) -> Result<(), MmaError> {
    match *slot {
        Some(prev) if prev != value => Err(parse_err(
            line,
            format!("{what} maps to {value} here but to {prev} earlier (maps must be separable)"),
        )),
        _ => {
            *slot = Some(value);
            Ok(())
        }
    }
}

pub fn parse_mapping(text: &str) -> Result<IndexMapping, MmaError> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
    let (_, header) = lines
        .by_ref()
        .find(|(_, l)| !l.is_empty())
        .ok_or_else(|| parse_err(1, "empty mapping file"))?;
    let mut tokens = header.split_whitespace();
    if tokens.next() != Some(MAGIC) {
        return Err(parse_err(1, format!("expected '{MAGIC}' header")));
    }
    let version = tokens.next().unwrap_or_default();
    if version != format!("v{MAPPING_FORMAT_VERSION}") {
        return Err(parse_err(1, format!("unsupported version '{version}'")));
    }
    let fields: HashMap<&str, &str> = tokens.filter_map(|t| t.split_once('=')).collect();
    let shape: GemmShape = header_field(&fields, "shape")?.parse().map_err(|e: String| parse_err(1, e))?;
    let count = |key: &str| -> Result<usize, MmaError> {
        let v = header_field(&fields, key)?;
        v.parse::<usize>()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| parse_err(1, format!("bad value '{v}' for {key}")))
    };
    let (warps, n_tiles, k_steps) = (count("warps")?, count("n_tiles")?, count("k_steps")?);
    let (n_slots, k_slots) = (n_tiles * INSTR_N, k_steps * INSTR_K);

    let mut f_m = vec![[None; INSTR_M]; warps];
    let mut f_n = vec![None; n_slots];
    let mut f_k = vec![None; k_slots];
    let mut seen = vec![false; warps * INSTR_M * n_slots * k_slots];
    let mut pad_lines = Vec::new();

    for (no, line) in lines {
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (lhs, rhs) = line.split_once("->").ok_or_else(|| parse_err(no, "expected '->'"))?;
        let idx: Vec<usize> = lhs
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| parse_err(no, format!("bad index '{t}'"))))
            .collect::<Result<_, _>>()?;
        let [w, mi, ni, ki] = idx[..] else {
            return Err(parse_err(no, "expected four instruction indices"));
        };
        if w >= warps || mi >= INSTR_M || ni >= n_slots || ki >= k_slots {
            return Err(parse_err(no, format!("slot ({w},{mi},{ni},{ki}) outside header bounds")));
        }
        let flat = ((w * INSTR_M + mi) * n_slots + ni) * k_slots + ki;
        if std::mem::replace(&mut seen[flat], true) {
            return Err(parse_err(no, format!("slot ({w},{mi},{ni},{ki}) listed twice")));
        }
        let rhs: Vec<&str> = rhs.split_whitespace().collect();
        match rhs[..] {
            ["PAD"] => pad_lines.push((no, w, mi, ni, ki)),
            [m, n, k] => {
                let parse = |t: &str| t.parse::<usize>().map_err(|_| parse_err(no, format!("bad problem index '{t}'")));
                let (mp, np, kp) = (parse(m)?, parse(n)?, parse(k)?);
                if mp >= shape.m || np >= shape.n || kp >= shape.k {
                    return Err(parse_err(no, format!("problem index ({mp},{np},{kp}) outside {shape}")));
                }
                assign(&mut f_m[w][mi], mp, &format!("warp {w} instr_m {mi}"), no)?;
                assign(&mut f_n[ni], np, &format!("instr_n {ni}"), no)?;
                assign(&mut f_k[ki], kp, &format!("instr_k {ki}"), no)?;
            }
            _ => return Err(parse_err(no, "expected 'prob_m prob_n prob_k' or 'PAD'")),
        }
    }
    if let Some(missing) = seen.iter().position(|&s| !s) {
        let ki = missing % k_slots;
        let ni = (missing / k_slots) % n_slots;
        let mi = (missing / (k_slots * n_slots)) % INSTR_M;
        let w = missing / (k_slots * n_slots * INSTR_M);
        return Err(parse_err(0, format!("slot ({w},{mi},{ni},{ki}) is not listed")));
    }
    for (no, w, mi, ni, ki) in pad_lines {
        if f_m[w][mi].is_some() && f_n[ni].is_some() && f_k[ki].is_some() {
            return Err(parse_err(no, "PAD slot whose three components are all mapped elsewhere"));
        }
    }
    let mapping = IndexMapping { shape, f_m, f_n, f_k };
    mapping.validate()?;
    Ok(mapping)
}
