//! Closed-form shared-memory traffic and FLOP accounting for one small GEMM, scalar
//! cores versus the warp MMA instruction.
//!
//! The scalar kernel computes one output per thread, reading its row of `A` and column of
//! `B` from shared memory and writing the result back; the MMA kernel reads each operand
//! element once per warp. All quantities are exact integers or rationals.

use std::io::Write;

use num_rational::Ratio;
use num_traits::ToPrimitive;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fem::Strategy;
use crate::mma::GemmShape;

pub const WORD_BYTES: u64 = 8;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CostError {
    #[error("no quadrature-data traffic ratio is defined for {0:?} vs {1:?}")]
    UnknownPair(Strategy, Strategy),
    #[error("measured counter for {0:?} is zero")]
    ZeroCounter(Strategy),
}

fn dims(s: GemmShape) -> (u64, u64, u64) {
    (s.m as u64, s.n as u64, s.k as u64)
}

/// `8 (m n 2k + m n)`: every thread reads `k` elements of both operands and writes one.
pub fn smem_bytes_scalar(shape: GemmShape) -> u64 {
    let (m, n, k) = dims(shape);
    WORD_BYTES * (m * n * 2 * k + m * n)
}

/// `8 (m k + n k + m n)`: operands are shared across the warp and read once.
pub fn smem_bytes_mma(shape: GemmShape) -> u64 {
    let (m, n, k) = dims(shape);
    WORD_BYTES * (m * k + n * k + m * n)
}

pub fn flops(shape: GemmShape) -> u64 {
    let (m, n, k) = dims(shape);
    2 * m * n * k
}

pub fn intensity_scalar_exact(shape: GemmShape) -> Ratio<u64> {
    Ratio::new(flops(shape), smem_bytes_scalar(shape))
}

pub fn intensity_mma_exact(shape: GemmShape) -> Ratio<u64> {
    Ratio::new(flops(shape), smem_bytes_mma(shape))
}

pub fn read_reduction_exact(shape: GemmShape) -> Ratio<u64> {
    Ratio::new(smem_bytes_scalar(shape), smem_bytes_mma(shape))
}

/// FLOPs per shared-memory byte of the scalar kernel.
pub fn intensity_scalar(shape: GemmShape) -> f64 {
    intensity_scalar_exact(shape).to_f64().unwrap()
}

/// Ratio of scalar to MMA shared-memory traffic.
pub fn read_reduction(shape: GemmShape) -> f64 {
    read_reduction_exact(shape).to_f64().unwrap()
}

/// Traffic and work of one execution path for one shape.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostBreakdown {
    pub smem_bytes: u64,
    pub flops: u64,
    pub intensity: f64,
    pub word_bytes: u64,
}

impl CostBreakdown {
    pub fn scalar(shape: GemmShape) -> Self {
        Self { smem_bytes: smem_bytes_scalar(shape), flops: flops(shape), intensity: intensity_scalar(shape), word_bytes: WORD_BYTES }
    }

    pub fn mma(shape: GemmShape) -> Self {
        Self {
            smem_bytes: smem_bytes_mma(shape),
            flops: flops(shape),
            intensity: intensity_mma_exact(shape).to_f64().unwrap(),
            word_bytes: WORD_BYTES,
        }
    }
}

/// One emitted table row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostRow {
    pub shape: String,
    pub smem_bytes_scalar: u64,
    pub smem_bytes_mma: u64,
    pub flops: u64,
    pub intensity: f64,
    pub read_reduction: f64,
}

impl CostRow {
    pub fn new(shape: GemmShape) -> Self {
        Self {
            shape: shape.to_string(),
            smem_bytes_scalar: smem_bytes_scalar(shape),
            smem_bytes_mma: smem_bytes_mma(shape),
            flops: flops(shape),
            intensity: intensity_scalar(shape),
            read_reduction: read_reduction(shape),
        }
    }
}

pub fn cost_table(shapes: &[GemmShape]) -> Vec<CostRow> {
    shapes.iter().copied().map(CostRow::new).collect()
}

pub fn write_csv<W: Write>(rows: &[CostRow], writer: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(writer);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn to_json(rows: &[CostRow]) -> String {
    serde_json::to_string_pretty(rows).expect("rows serialize")
}

/// Rounds to `sig` significant figures.
pub fn round_sig(x: f64, sig: i32) -> f64 {
    if x == 0.0 {
        return 0.0;
    }
    let mag = x.abs().log10().floor() as i32;
    let scale = 10f64.powi(sig - 1 - mag);
    (x * scale).round() / scale
}

/// Rounds to `places` decimal places.
pub fn round_dp(x: f64, places: i32) -> f64 {
    let scale = 10f64.powi(places);
    (x * scale).round() / scale
}

/// Reads of the quadrature-point data `D` in one application of the normal operator
/// `K_p K_u`: the unfused path reads it in both kernels, the fused one once.
pub fn d_reads_per_normal_application(strategy: Strategy) -> u64 {
    match strategy {
        Strategy::PartialAssembly => 2,
        Strategy::FusedPartialAssembly => 1,
        Strategy::MatrixFree | Strategy::FusedMatrixFree => 0,
    }
}

/// Model and (optionally) measured ratio of quadrature-data traffic between two strategies.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrafficRatio {
    pub model: f64,
    pub measured: Option<f64>,
}

/// `reads(first) / reads(second)`; `measured` carries instrumented D-read counters.
pub fn fusion_traffic_ratio(
    pair: (Strategy, Strategy),
    measured: Option<(u64, u64)>,
) -> Result<TrafficRatio, CostError> {
    let (a, b) = (d_reads_per_normal_application(pair.0), d_reads_per_normal_application(pair.1));
    if a == 0 || b == 0 {
        return Err(CostError::UnknownPair(pair.0, pair.1));
    }
    let model = Ratio::new(a, b).to_f64().unwrap();
    let measured = match measured {
        None => None,
        Some((_, 0)) => return Err(CostError::ZeroCounter(pair.1)),
        Some((x, y)) => Some(Ratio::new(x, y).to_f64().unwrap()),
    };
    Ok(TrafficRatio { model, measured })
}
