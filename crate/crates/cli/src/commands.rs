use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::ValueEnum;
use hofx_core::bank::{render_diagram, search_mapping_padded, verify_mapping, BankConfig, OperandLayouts};
use hofx_core::cost::{self, cost_table, fusion_traffic_ratio, round_dp, round_sig, CostRow, TrafficRatio};
use hofx_core::fem::operator::{CounterSnapshot, MappingSource, DEFAULT_SEARCH_BUDGET};
use hofx_core::fem::snapshot::Snapshot;
use hofx_core::fem::time::{run, standing_wave, standing_wave_period, RunSummary};
use hofx_core::fem::{Backend, BlockOperator, BoundaryTag, Forcing, LumpedMass, State, Strategy};
use hofx_core::mma::{parse_mapping, write_mapping, GemmShape, IndexMapping};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::{BackendKind, InitialCondition, RunConfig};
use crate::{ConfigArgs, Format, Status};

/// Strategy-backend pairs reported by `compare`.
const COMPARE_VARIANTS: [(Strategy, BackendKind); 6] = [
    (Strategy::PartialAssembly, BackendKind::Scalar),
    (Strategy::FusedPartialAssembly, BackendKind::Scalar),
    (Strategy::FusedMatrixFree, BackendKind::Scalar),
    (Strategy::PartialAssembly, BackendKind::Mma),
    (Strategy::FusedPartialAssembly, BackendKind::Mma),
    (Strategy::FusedMatrixFree, BackendKind::Mma),
];

/// Largest pairwise relative deviation `compare` accepts.
const COMPARE_TOLERANCE: f64 = 1e-10;

/// Header comment recording the `C` column padding a mapping was searched with.
const C_PAD_TAG: &str = "# c_pad=";

pub struct Output {
    pub format: Format,
    pub deterministic: bool,
}

impl Output {
    fn emit<T: Serialize>(&self, value: &T, text: impl FnOnce() -> String) -> Result<()> {
        match self.format {
            Format::Json => println!("{}", serde_json::to_string_pretty(value)?),
            Format::Text => print!("{}", text()),
            Format::Csv => bail!("csv output is not available for this command"),
        }
        Ok(())
    }

    fn seconds(&self, start: Instant) -> Option<f64> {
        (!self.deterministic).then(|| start.elapsed().as_secs_f64())
    }
}

fn csv_string<T: Serialize>(rows: &[T]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    Ok(String::from_utf8(w.into_inner()?)?)
}

pub fn cost(out: &Output, shapes: &[GemmShape]) -> Result<Status> {
    let shapes = if shapes.is_empty() { GemmShape::OPERATOR_SHAPES.to_vec() } else { shapes.to_vec() };
    let rows = cost_table(&shapes);
    match out.format {
        Format::Csv => {
            cost::write_csv(&rows, std::io::stdout().lock())?;
        }
        _ => out.emit(&rows, || cost_text(&rows))?,
    }
    Ok(Status::Success)
}

fn cost_text(rows: &[CostRow]) -> String {
    let mut s = format!("{:<10} {:>12} {:>10} {:>8} {:>10} {:>10}\n", "shape", "scalar B", "mma B", "flops", "flop/B", "reduction");
    for r in rows {
        let _ = writeln!(
            s,
            "{:<10} {:>12} {:>10} {:>8} {:>10} {:>10}",
            r.shape,
            r.smem_bytes_scalar,
            r.smem_bytes_mma,
            r.flops,
            round_sig(r.intensity, 2),
            format!("{:.1}", round_dp(r.read_reduction, 1))
        );
    }
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LayoutKind {
    /// Cyclic stage layouts: `A` and `B` contracted index fastest, `C` rows fastest.
    Cyclic,
    /// `A` contracted over its middle index.
    MiddleContracted,
    RowMajor,
}

fn recorded_c_pad(text: &str) -> Result<Option<usize>> {
    match text.lines().find_map(|l| l.trim().strip_prefix(C_PAD_TAG)) {
        Some(v) => Ok(Some(v.trim().parse().with_context(|| format!("bad c_pad value '{v}'"))?)),
        None => Ok(None),
    }
}

/// Mapping file text with the `C` padding recorded after the header line.
fn mapping_text(mapping: &IndexMapping, c_pad: usize) -> String {
    let text = write_mapping(mapping);
    let (header, rest) = text.split_once('\n').expect("header line");
    format!("{header}\n{C_PAD_TAG}{c_pad}\n{rest}")
}

pub fn verify(out: &Output, path: &Path, shape: Option<GemmShape>, layout: LayoutKind, c_pad: Option<usize>) -> Result<Status> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read mapping file {}", path.display()))?;
    let mapping = parse_mapping(&text).with_context(|| format!("cannot parse {}", path.display()))?;
    mapping.validate()?;
    if let Some(s) = shape {
        if s != mapping.shape {
            bail!("file holds a {} mapping, expected {s}", mapping.shape);
        }
    }
    let c_pad = match c_pad {
        Some(p) => p,
        None => recorded_c_pad(&text)?.unwrap_or(0),
    };
    let shape = mapping.shape;
    let layouts = match layout {
        LayoutKind::Cyclic => OperandLayouts::cyclic_padded(shape, c_pad),
        LayoutKind::RowMajor => OperandLayouts::row_major(shape),
        LayoutKind::MiddleContracted => {
            let fast = (1..=shape.m).rev().find(|f| shape.m % f == 0 && f * f <= shape.m).unwrap_or(1);
            OperandLayouts::middle_contracted(shape, fast)
        }
    };
    let report = verify_mapping(&mapping, &layouts, &BankConfig::default())?;
    match out.format {
        Format::Json => println!("{}", report.to_json()),
        Format::Text => print!("{}", render_diagram(&report)),
        Format::Csv => bail!("csv output is not available for verify"),
    }
    Ok(if report.conflict_free { Status::Success } else { Status::Failed })
}

#[derive(Serialize)]
struct SearchReport {
    shape: String,
    found: bool,
    c_pad: Option<usize>,
    budget: u64,
    nodes: u64,
    pruned: u64,
    attempts: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    mapping: Option<String>,
}

pub fn search(out: &Output, shape: GemmShape, budget: u64, max_pad: usize, path: Option<&Path>) -> Result<Status> {
    let res = search_mapping_padded(shape, &BankConfig::default(), budget, max_pad)?;
    let stats = res.attempts.iter().fold((0, 0), |a, st| (a.0 + st.nodes, a.1 + st.pruned));
    let file = res.outcome.mapping().map(|m| mapping_text(m, res.c_pad));
    if let (Some(p), Some(text)) = (path, &file) {
        std::fs::write(p, text).with_context(|| format!("cannot write {}", p.display()))?;
    }
    let report = SearchReport {
        shape: shape.to_string(),
        found: file.is_some(),
        c_pad: file.as_ref().map(|_| res.c_pad),
        budget,
        nodes: stats.0,
        pruned: stats.1,
        attempts: res.attempts.len(),
        mapping: if path.is_none() { file.clone() } else { None },
    };
    out.emit(&report, || {
        let mut s = match report.c_pad {
            Some(p) => format!("{}: found with C column stride m+{p} after {} nodes ({} pruned)\n", report.shape, report.nodes, report.pruned),
            None => format!("{}: NOT FOUND, budget {} exhausted after {} nodes\n", report.shape, budget, report.nodes),
        };
        if let Some(m) = &report.mapping {
            s.push_str(m);
        }
        s
    })?;
    Ok(if report.found { Status::Success } else { Status::Exhausted })
}

#[derive(Serialize)]
struct VariantReport {
    strategy: Strategy,
    backend: &'static str,
    max_rel_deviation: f64,
    max_abs_output: f64,
    d_reads: u64,
    d_bytes: u64,
    geometry_reads: u64,
    flops: u64,
    /// Informational only.
    #[serde(skip_serializing_if = "Option::is_none")]
    wall_time_s: Option<f64>,
}

#[derive(Serialize)]
struct CompareReport {
    elements: [usize; 3],
    num_u: usize,
    num_p: usize,
    max_rel_deviation: f64,
    tolerance: f64,
    normal_d_read_ratio: TrafficRatio,
    mapping_sources: Vec<(String, MappingSource)>,
    variants: Vec<VariantReport>,
}

fn random_state(seed: u64, num_u: usize, num_p: usize) -> State {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let mut v = |n: usize| (0..n).map(|_| r.random_range(-1.0..1.0)).collect::<Vec<f64>>();
    State::new(v(num_u), v(num_p))
}

fn rel_diff(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let den = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(b.iter().map(|x| x * x).sum::<f64>().sqrt());
    if den == 0.0 {
        num
    } else {
        num / den
    }
}

pub fn compare(out: &Output, args: &ConfigArgs) -> Result<Status> {
    let cfg = RunConfig::load(args.config.as_deref(), &args.overrides)?;
    let disc = cfg.discretization()?;
    let (mma, sources) = Backend::mma(&disc.contraction_shapes(), cfg.operator.search_budget)?;
    let x = random_state(cfg.seed, disc.num_u(), disc.num_p());
    let mut outputs = Vec::new();
    let mut variants = Vec::new();
    for (strategy, kind) in COMPARE_VARIANTS {
        let backend = match kind {
            BackendKind::Scalar => Backend::Scalar,
            BackendKind::Mma => mma.clone(),
        };
        let op = BlockOperator::new(&disc, strategy, backend)?;
        let start = Instant::now();
        let y = op.apply_block(&x)?.to_vec();
        let wall = out.seconds(start);
        let c: CounterSnapshot = op.counters().snapshot();
        variants.push(VariantReport {
            strategy,
            backend: op.backend().label(),
            max_rel_deviation: 0.0,
            max_abs_output: y.iter().fold(0.0, |m, v| m.max(v.abs())),
            d_reads: c.d_reads,
            d_bytes: c.d_bytes(),
            geometry_reads: c.geometry_reads,
            flops: c.flops,
            wall_time_s: wall,
        });
        outputs.push(y);
    }
    for (i, v) in variants.iter_mut().enumerate() {
        v.max_rel_deviation = outputs.iter().map(|o| rel_diff(&outputs[i], o)).fold(0.0, f64::max);
    }
    let max_dev = variants.iter().map(|v| v.max_rel_deviation).fold(0.0, f64::max);

    let u_only = State::new(x.u.clone(), vec![0.0; disc.num_p()]);
    let reads = |s: Strategy| -> Result<u64> {
        let op = BlockOperator::new(&disc, s, Backend::Scalar)?;
        op.apply_fused_normal(&u_only)?;
        Ok(op.counters().snapshot().d_reads)
    };
    let ratio = fusion_traffic_ratio(
        (Strategy::PartialAssembly, Strategy::FusedPartialAssembly),
        Some((reads(Strategy::PartialAssembly)?, reads(Strategy::FusedPartialAssembly)?)),
    )?;
    let report = CompareReport {
        elements: cfg.mesh.elements,
        num_u: disc.num_u(),
        num_p: disc.num_p(),
        max_rel_deviation: max_dev,
        tolerance: COMPARE_TOLERANCE,
        normal_d_read_ratio: ratio,
        mapping_sources: sources.into_iter().map(|(s, m)| (s.to_string(), m)).collect(),
        variants,
    };
    match out.format {
        Format::Csv => print!("{}", csv_string(&report.variants)?),
        _ => out.emit(&report, || compare_text(&report))?,
    }
    Ok(if max_dev <= COMPARE_TOLERANCE { Status::Success } else { Status::Failed })
}

fn compare_text(r: &CompareReport) -> String {
    let mut s = format!(
        "mesh {:?}: {} velocity + {} pressure DOFs\n{:<9} {:<7} {:>12} {:>10} {:>10} {:>12}{}\n",
        r.elements,
        r.num_u,
        r.num_p,
        "strategy",
        "backend",
        "deviation",
        "D reads",
        "geom reads",
        "flops",
        if r.variants.iter().any(|v| v.wall_time_s.is_some()) { "   time (informational)" } else { "" }
    );
    for v in &r.variants {
        let _ = write!(
            s,
            "{:<9} {:<7} {:>12.3e} {:>10} {:>10} {:>12}",
            v.strategy.to_string(),
            v.backend,
            v.max_rel_deviation,
            v.d_reads,
            v.geometry_reads,
            v.flops
        );
        if let Some(t) = v.wall_time_s {
            let _ = write!(s, "   {:.3} ms", 1e3 * t);
        }
        s.push('\n');
    }
    let _ = writeln!(
        s,
        "max deviation {:.3e} (tolerance {:.0e}): {}",
        r.max_rel_deviation,
        r.tolerance,
        if r.max_rel_deviation <= r.tolerance { "ok" } else { "FAILED" }
    );
    let _ = writeln!(
        s,
        "normal operator D reads, pa / fused-pa: model {}, measured {}",
        r.normal_d_read_ratio.model,
        r.normal_d_read_ratio.measured.map_or("-".into(), |m| m.to_string())
    );
    s
}

#[derive(Serialize)]
struct SolveReport {
    elements: [usize; 3],
    strategy: Strategy,
    backend: &'static str,
    dt: f64,
    steps: usize,
    final_time: f64,
    max_relative_energy_drift: f64,
    apply_block_calls: u64,
    final_max_abs_p: f64,
    final_max_abs_surface_p: f64,
    times: Vec<f64>,
    energy: Vec<f64>,
}

#[derive(Serialize)]
struct EnergyRow {
    step: usize,
    time: f64,
    energy: f64,
}

pub fn solve(out: &Output, args: &ConfigArgs, snapshot: Option<&Path>) -> Result<Status> {
    let cfg = RunConfig::load(args.config.as_deref(), &args.overrides)?;
    let disc = cfg.discretization()?;
    let backend = cfg.backend(cfg.operator.backend, &disc)?;
    let op = BlockOperator::new(&disc, cfg.operator.strategy, backend)?;
    let mass = LumpedMass::new(&disc)?;
    let initial = match cfg.solve.initial {
        InitialCondition::Zero => disc.zero_state(),
        InitialCondition::StandingWave => standing_wave(&disc, 0.0),
    };
    let forcing = if cfg.solve.bottom_amplitude != 0.0 {
        Forcing::bottom_velocity(&disc, cfg.solve.bottom_amplitude, cfg.solve.bottom_frequency)
    } else {
        Forcing::none()
    };
    let dt = cfg.solve.dt.unwrap_or_else(|| standing_wave_period(&disc) / 100.0);
    let summary: RunSummary = match run(&op, &mass, &forcing, initial, dt, cfg.solve.steps) {
        Ok(s) => s,
        Err(e @ hofx_core::fem::FemError::Divergence { .. }) => {
            eprintln!("error: {e}");
            return Ok(Status::Failed);
        }
        Err(e) => return Err(e.into()),
    };
    if let Some(p) = snapshot {
        let file = std::fs::File::create(p).with_context(|| format!("cannot create {}", p.display()))?;
        Snapshot::from_state(&summary.final_state, *summary.times.last().unwrap()).write_to(std::io::BufWriter::new(file))?;
    }
    let fin = &summary.final_state;
    let report = SolveReport {
        elements: cfg.mesh.elements,
        strategy: op.strategy(),
        backend: op.backend().label(),
        dt,
        steps: cfg.solve.steps,
        final_time: *summary.times.last().unwrap(),
        max_relative_energy_drift: summary.max_relative_drift(),
        apply_block_calls: summary.apply_block_calls,
        final_max_abs_p: fin.p.iter().fold(0.0, |m, v| m.max(v.abs())),
        final_max_abs_surface_p: disc.boundary_dofs(BoundaryTag::Surface).iter().fold(0.0, |m, &i| m.max(fin.p[i].abs())),
        times: summary.times.clone(),
        energy: summary.energy.clone(),
    };
    match out.format {
        Format::Csv => {
            let rows: Vec<EnergyRow> =
                report.times.iter().zip(&report.energy).enumerate().map(|(step, (&time, &energy))| EnergyRow { step, time, energy }).collect();
            print!("{}", csv_string(&rows)?);
        }
        _ => out.emit(&report, || {
            format!(
                "mesh {:?}, {} / {}, dt {:.6e}, {} steps to t = {:.6}\nenergy: initial {:.12e}, final {:.12e}, max relative drift {:.3e}\napply_block calls {}\nmax |p| {:.6e}, max |p| on surface {:.6e}\n",
                report.elements,
                report.strategy,
                report.backend,
                report.dt,
                report.steps,
                report.final_time,
                report.energy[0],
                report.energy.last().unwrap(),
                report.max_relative_energy_drift,
                report.apply_block_calls,
                report.final_max_abs_p,
                report.final_max_abs_surface_p
            )
        })?,
    }
    Ok(Status::Success)
}

#[derive(Serialize)]
struct ShapeStatus {
    shape: String,
    source: MappingSource,
    conflict_free: bool,
}

#[derive(Serialize)]
struct Report {
    cost: Vec<CostRow>,
    mappings: Vec<ShapeStatus>,
    normal_d_read_ratio: TrafficRatio,
}

pub fn report(out: &Output) -> Result<Status> {
    let cost = cost_table(&GemmShape::OPERATOR_SHAPES);
    let cfg = BankConfig::default();
    let (backend, sources) = Backend::mma(&GemmShape::OPERATOR_SHAPES, DEFAULT_SEARCH_BUDGET)?;
    let Backend::Mma(set) = &backend else { unreachable!("mma backend") };
    let mut mappings = Vec::new();
    for (shape, source) in sources {
        let c_pad = match source {
            MappingSource::Searched { c_pad } => c_pad,
            _ => 0,
        };
        let mapping = set.get(&shape).expect("mapping for every requested shape");
        let report = verify_mapping(mapping, &OperandLayouts::cyclic_padded(shape, c_pad), &cfg)?;
        mappings.push(ShapeStatus { shape: shape.to_string(), source, conflict_free: report.conflict_free });
    }
    let defaults = RunConfig::default();
    let disc = defaults.discretization()?;
    let x = random_state(defaults.seed, disc.num_u(), 0);
    let reads = |s: Strategy| -> Result<u64> {
        let op = BlockOperator::new(&disc, s, Backend::Scalar)?;
        op.apply_fused_normal(&State::new(x.u.clone(), vec![0.0; disc.num_p()]))?;
        Ok(op.counters().snapshot().d_reads)
    };
    let ratio = fusion_traffic_ratio(
        (Strategy::PartialAssembly, Strategy::FusedPartialAssembly),
        Some((reads(Strategy::PartialAssembly)?, reads(Strategy::FusedPartialAssembly)?)),
    )?;
    let all_ok = mappings.iter().all(|m| m.conflict_free) && ratio.measured == Some(ratio.model);
    let rep = Report { cost, mappings, normal_d_read_ratio: ratio };
    out.emit(&rep, || {
        let mut s = cost_text(&rep.cost);
        s.push('\n');
        for m in &rep.mappings {
            let src = match m.source {
                MappingSource::Reference => "reference".to_string(),
                MappingSource::Searched { c_pad } => format!("searched, C stride m+{c_pad}"),
                MappingSource::BlockedFallback => "blocked fallback".to_string(),
            };
            let _ = writeln!(s, "{:<10} {:<28} {}", m.shape, src, if m.conflict_free { "conflict-free" } else { "CONFLICTS" });
        }
        let _ = writeln!(
            s,
            "\nnormal operator D reads on {:?} elements, pa / fused-pa: model {}, measured {}",
            defaults.mesh.elements,
            rep.normal_d_read_ratio.model,
            rep.normal_d_read_ratio.measured.map_or("-".into(), |m| m.to_string())
        );
        s
    })?;
    Ok(if all_ok { Status::Success } else { Status::Failed })
}
