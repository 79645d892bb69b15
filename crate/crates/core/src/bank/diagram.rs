//! Text rendering of bank occupancy: one block per access kind, one row per lane of each
//! phase, one column per bank.

use std::fmt::Write as _;

use super::{bank_of, AccessSummary, ConflictReport};

fn render_access(out: &mut String, access: &AccessSummary, report: &ConflictReport) {
    let cfg = &report.config;
    let banks = cfg.num_banks as usize;
    let site = access.worst_site;
    let _ = writeln!(
        out,
        "{} | warp {} n_tile {} k_step {} | max degree {} ({} of {} sites conflicting)",
        access.kind.name(),
        site.warp,
        site.n_tile,
        site.k_step,
        access.max_degree,
        access.conflicting_sites,
        access.total_sites
    );
    let _ = write!(out, "{:>9}", "bank");
    for b in 0..banks {
        let _ = write!(out, "{b:>3}");
    }
    out.push('\n');
    for (p, phase) in access.phases.iter().enumerate() {
        for (i, addr) in phase.lane_addresses.iter().enumerate() {
            let lane = phase.first_lane + i;
            let _ = write!(out, "p{} T{:<5}", p + 1, lane);
            let mut row = vec!["  .".to_string(); banks];
            match addr {
                Some(a) => {
                    for j in 0..cfg.banks_per_word() {
                        row[bank_of(a + j * cfg.bank_width_bytes, cfg)] = format!("{lane:>3}");
                    }
                }
                None => row.iter_mut().for_each(|c| *c = "   ".into()),
            }
            out.push_str(&row.concat());
            if addr.is_none() {
                out.push_str("  (pad)");
            }
            out.push('\n');
        }
        let _ = write!(out, "{:>9}", format!("p{} hits", p + 1));
        for h in &phase.histogram {
            let _ = write!(out, "{h:>3}");
        }
        out.push('\n');
    }
}

/// Renders every access kind of `report`, showing the worst instruction site of each.
pub fn render_diagram(report: &ConflictReport) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "shape {}: {}",
        report.shape,
        if report.conflict_free { "conflict-free".to_string() } else { format!("CONFLICTS (max degree {})", report.max_degree) }
    );
    for access in &report.accesses {
        out.push('\n');
        render_access(&mut out, access, report);
    }
    out
}
