//! One line per acceptance criterion. Runs without the libtest harness so the lines
//! appear in the captured test output; exits non-zero if any criterion fails.

mod common;

use std::time::{Duration, Instant};

use common::*;
use hofx_core::bank::{search_mapping_padded, verify_mapping, AccessKind, BankConfig, OperandLayouts, SearchOutcome};
use hofx_core::cost::*;
use hofx_core::fem::probe::{probe_block, probe_normal};
use hofx_core::fem::time::{run, standing_wave, standing_wave_period};
use hofx_core::fem::{build_mesh, Backend, BlockOperator, Coefficients, Discretization, DiscretizationConfig, Forcing, LumpedMass, State, Strategy};
use hofx_core::mma::{dmma_m8n8k4, tiled_gemm, FragmentLayout, GemmShape, IndexMapping};
use hofx_core::tensor::*;
use nalgebra::{DMatrix, DVector};
use num_rational::Ratio;
use rand::Rng;

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn unit_disc(n: usize) -> Discretization {
    let mesh = build_mesh(n, n, n, [1.0; 3]).unwrap();
    let ne = mesh.num_elements();
    Discretization::new(mesh, Coefficients::unit(ne), DiscretizationConfig::default()).unwrap()
}

fn operators(disc: &Discretization) -> Vec<BlockOperator<'_>> {
    let mma = Backend::mma_for(disc).unwrap();
    [Backend::Scalar, mma]
        .into_iter()
        .flat_map(|b| Strategy::ALL.map(|s| BlockOperator::new(disc, s, b.clone()).unwrap()))
        .collect()
}

fn label(op: &BlockOperator) -> String {
    format!("{}/{}", op.strategy(), op.backend().label())
}

fn cost_model() -> Outcome {
    let s = GemmShape::new(25, 5, 4);
    check(smem_bytes_scalar(s) == 9000, || format!("scalar bytes {}", smem_bytes_scalar(s)))?;
    check(smem_bytes_mma(s) == 1960, || format!("mma bytes {}", smem_bytes_mma(s)))?;
    check(flops(s) == 1000, || format!("flops {}", flops(s)))?;
    check(intensity_scalar_exact(s) == Ratio::new(1000, 9000), || "intensity".into())?;
    check(round_sig(intensity_scalar(s), 2) == 0.11, || format!("intensity {}", intensity_scalar(s)))?;
    check(read_reduction_exact(s) == Ratio::new(9000, 1960), || "reduction".into())?;
    check(round_dp(read_reduction(s), 1) == 4.6, || format!("reduction {}", read_reduction(s)))?;
    Ok(format!("9000 B, 1960 B, 1000 flop, {:.2} flop/B, {:.1}x", intensity_scalar(s), read_reduction(s)))
}

fn fragment_layout() -> Outcome {
    let f = FragmentLayout::m8n8k4();
    f.check_bijections()?;
    let mut a = [[0u8; 4]; 8];
    let mut b = [[0u8; 8]; 4];
    let mut c = [[0u8; 8]; 8];
    for l in 0..32 {
        a[f.a_coords[l].0][f.a_coords[l].1] += 1;
        b[f.b_coords[l].0][f.b_coords[l].1] += 1;
        for (r, col) in f.c_coords[l] {
            c[r][col] += 1;
        }
        check(f.a_coords[l] == (l / 4, l % 4) && f.b_coords[l] == (l % 4, l / 4), || format!("lane {l}"))?;
        check(f.c_coords[l] == [(l / 4, 2 * (l % 4)), (l / 4, 2 * (l % 4) + 1)], || format!("lane {l} C"))?;
    }
    let all_once = a.iter().flatten().chain(b.iter().flatten()).chain(c.iter().flatten()).all(|&n| n == 1);
    check(all_once, || "a cell is not covered exactly once".into())?;
    Ok("32 A, 32 B, 64 C cells each covered once".into())
}

fn dmma_emulation() -> Outcome {
    let mut r = rng(2024);
    let mut worst: f64 = 0.0;
    for _ in 0..10_000 {
        let a: [f64; 32] = std::array::from_fn(|_| r.random_range(-1.0..1.0));
        let b: [f64; 32] = std::array::from_fn(|_| r.random_range(-1.0..1.0));
        let c: [[f64; 2]; 32] = std::array::from_fn(|_| [r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)]);
        let got = dmma_m8n8k4(&a, &b, &c);
        let (want, scale) = dmma_oracle(&a, &b, &c);
        for l in 0..32 {
            for s in 0..2 {
                worst = worst.max((got[l][s] - want[l][s]).abs() / scale[l][s]);
            }
        }
    }
    check(worst <= 1e-15, || format!("worst relative error {worst:.2e}"))?;
    Ok(format!("10000 fragments, worst {worst:.2e}"))
}

fn reference_mapping() -> Outcome {
    let shape = GemmShape::new(25, 5, 4);
    let mapping = IndexMapping::conflict_free_25x5x4();
    let report = verify_mapping(&mapping, &OperandLayouts::cyclic(shape), &BankConfig::default()).map_err(|e| e.to_string())?;
    for kind in AccessKind::ALL {
        let acc = report.access(kind);
        check(acc.max_degree <= 1 && acc.phases.iter().all(|p| p.conflict_free()), || format!("{} conflicts", kind.name()))?;
    }
    check(brute_mapping_degrees(&mapping, 25).iter().all(|&d| d <= 1), || "brute-force count disagrees".into())?;
    let mut r = rng(6);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let a = random_matrix(&mut r, 25, 4);
        let b = random_matrix(&mut r, 4, 5);
        worst = worst.max(gemm_rel_err(&tiled_gemm(&mapping, &a, &b).map_err(|e| e.to_string())?, &a, &b));
    }
    check(worst <= 1e-14, || format!("gemm error {worst:.2e}"))?;
    Ok(format!("A, B, C0, C1 conflict free; 100 GEMMs, worst {worst:.2e}"))
}

fn seven_shapes() -> Outcome {
    let cfg = BankConfig::default();
    let mut r = rng(7);
    let mut notes = Vec::new();
    for shape in GemmShape::OPERATOR_SHAPES {
        let out = search_mapping_padded(shape, &cfg, 50_000_000, 8).map_err(|e| e.to_string())?;
        let SearchOutcome::Found { mapping, .. } = &out.outcome else {
            return Err(format!("{shape}: not found"));
        };
        let report = verify_mapping(mapping, &out.layouts, &cfg).map_err(|e| e.to_string())?;
        check(report.conflict_free, || format!("{shape}: verify reports conflicts"))?;
        check(brute_mapping_degrees(mapping, shape.m + out.c_pad).iter().all(|&d| d <= 1), || format!("{shape}: brute force disagrees"))?;
        let a = random_matrix(&mut r, shape.m, shape.k);
        let b = random_matrix(&mut r, shape.k, shape.n);
        let err = gemm_rel_err(&tiled_gemm(mapping, &a, &b).map_err(|e| e.to_string())?, &a, &b);
        check(err <= 1e-14, || format!("{shape}: gemm error {err:.2e}"))?;
        notes.push(format!("{shape}+{}", out.c_pad));
    }
    Ok(format!("shape+C pad: {}", notes.join(" ")))
}

fn sum_factorization() -> Outcome {
    let mut r = rng(8);
    let mut worst: f64 = 0.0;
    let basis = |r: &mut rand_chacha::ChaCha8Rng, d: usize, q: usize| {
        Basis1D::from_tables(random_matrix(r, q, d), random_matrix(r, q, d), Quadrature1D::gauss_legendre(q)).unwrap()
    };
    for d in 2..=6 {
        for q in 2..=6 {
            for _ in 0..100 {
                let b = basis(&mut r, d, q);
                let x = Tensor3::canonical([d; 3], random_vec(&mut r, d * d * d)).unwrap();
                let xv = DVector::from_column_slice(x.data());
                let (v, dv) = (b.values(), b.gradients());
                let y = apply_basis_3d(&b, &x).map_err(|e| e.to_string())?;
                worst = worst.max(rel_norm(y.to_canonical().data(), (tensor_matrix(v, v, v) * &xv).as_slice()));
                let g = apply_gradient_3d(&b, &x).map_err(|e| e.to_string())?;
                for (gr, m) in g.iter().zip([tensor_matrix(dv, v, v), tensor_matrix(v, dv, v), tensor_matrix(v, v, dv)]) {
                    worst = worst.max(rel_norm(gr.to_canonical().data(), (m * &xv).as_slice()));
                }
            }
        }
    }
    check(worst <= 1e-12, || format!("kronecker error {worst:.2e}"))?;
    let mut worst_adj: f64 = 0.0;
    for t in 0..1000 {
        let (d, q) = (2 + t % 5, 2 + (t / 5) % 5);
        let b = basis(&mut r, d, q);
        let x = Tensor3::canonical([d; 3], random_vec(&mut r, d * d * d)).unwrap();
        let y = Tensor3::canonical([q; 3], random_vec(&mut r, q * q * q)).unwrap();
        let bx = apply_basis_3d(&b, &x).map_err(|e| e.to_string())?;
        let bty = apply_basis_transpose_3d(&b, &y).map_err(|e| e.to_string())?;
        worst_adj = worst_adj.max((bx.dot(&y) - x.dot(&bty)).abs() / (norm(bx.data()) * norm(y.data())));
        let ys: [Tensor3; 3] = std::array::from_fn(|_| Tensor3::canonical([q; 3], random_vec(&mut r, q * q * q)).unwrap());
        let g = apply_gradient_3d(&b, &x).map_err(|e| e.to_string())?;
        let gt = apply_gradient_transpose_3d(&b, &ys).map_err(|e| e.to_string())?;
        let lhs: f64 = g.iter().zip(&ys).map(|(a, b)| a.dot(b)).sum();
        let scale = g.iter().map(|a| norm(a.data()).powi(2)).sum::<f64>().sqrt() * ys.iter().map(|a| norm(a.data()).powi(2)).sum::<f64>().sqrt();
        worst_adj = worst_adj.max((lhs - x.dot(&gt)).abs() / scale);
    }
    check(worst_adj <= 1e-12, || format!("adjointness error {worst_adj:.2e}"))?;
    Ok(format!("2500 trials, worst {worst:.2e}; 1000 adjoint trials, worst {worst_adj:.2e}"))
}

fn operator_equivalence() -> Outcome {
    let mut notes = Vec::new();
    for n in 1..=2 {
        let disc = unit_disc(n);
        let dense = AssembledOracle::new(&disc).dense();
        let mut probes = Vec::new();
        for op in operators(&disc) {
            let a = probe_block(&op).map_err(|e| e.to_string())?;
            let err = rel_max(&a, &dense);
            check(err <= 1e-10, || format!("{n}^3 {}: probe vs assembled {err:.2e}", label(&op)))?;
            probes.push(a);
        }
        let mut worst: f64 = 0.0;
        for i in 0..probes.len() {
            for j in i + 1..probes.len() {
                worst = worst.max(rel_max(&probes[i], &probes[j]));
            }
        }
        check(worst <= 1e-10, || format!("{n}^3 pairwise {worst:.2e}"))?;
        notes.push(format!("{n}^3 dense {worst:.1e}"));
    }
    // 3x3x3: the dense probe would be 7381^2; compare on random vectors against the
    // element-assembled oracle instead
    let disc = unit_disc(3);
    let oracle = AssembledOracle::new(&disc);
    let ops = operators(&disc);
    let mut r = rng(10);
    let mut worst: f64 = 0.0;
    for _ in 0..3 {
        let x = random_state(&mut r, &disc);
        let want = oracle.apply(&x).to_vec();
        let outs: Vec<Vec<f64>> = ops.iter().map(|op| op.apply_block(&x).unwrap().to_vec()).collect();
        for (op, out) in ops.iter().zip(&outs) {
            let err = rel_norm(out, &want);
            check(err <= 1e-10, || format!("3^3 {}: {err:.2e}", label(op)))?;
            for other in &outs {
                worst = worst.max(rel_norm(out, other));
            }
        }
    }
    check(worst <= 1e-10, || format!("3^3 pairwise {worst:.2e}"))?;
    notes.push(format!("3^3 random {worst:.1e}"));
    Ok(notes.join(", "))
}

fn fusion_traffic() -> Outcome {
    let disc = unit_disc(2);
    let pa = BlockOperator::new(&disc, Strategy::PartialAssembly, Backend::Scalar).unwrap();
    let fpa = BlockOperator::new(&disc, Strategy::FusedPartialAssembly, Backend::Scalar).unwrap();
    let x = State::new(random_vec(&mut rng(11), disc.num_u()), vec![0.0; disc.num_p()]);
    pa.apply_fused_normal(&x).map_err(|e| e.to_string())?;
    fpa.apply_fused_normal(&x).map_err(|e| e.to_string())?;
    let (a, b) = (pa.counters().snapshot().d_reads, fpa.counters().snapshot().d_reads);
    check(a == 2 * b && b > 0, || format!("PA {a}, FusedPA {b}"))?;
    let ratio = fusion_traffic_ratio((Strategy::PartialAssembly, Strategy::FusedPartialAssembly), Some((a, b))).map_err(|e| e.to_string())?;
    check(ratio.measured == Some(ratio.model), || format!("{ratio:?}"))?;
    Ok(format!("D reads PA {a}, FusedPA {b}"))
}

fn structure() -> Outcome {
    let disc = unit_disc(2);
    let op = BlockOperator::new(&disc, Strategy::FusedPartialAssembly, Backend::Scalar).unwrap();
    let k = probe_normal(&op).map_err(|e| e.to_string())?;
    let asym = (&k - k.transpose()).amax() / k.amax();
    check(asym <= 1e-10, || format!("asymmetry {asym:.2e}"))?;
    let min = ((&k + k.transpose()) * 0.5).symmetric_eigenvalues().min();
    let knorm = k.norm();
    check(min >= -1e-10 * knorm, || format!("min eigenvalue {min:.2e}"))?;
    let a = probe_block(&BlockOperator::new(&disc, Strategy::PartialAssembly, Backend::Scalar).unwrap()).map_err(|e| e.to_string())?;
    let (nu, np) = (disc.num_u(), disc.num_p());
    let up: DMatrix<f64> = a.view((0, nu), (nu, np)).into_owned();
    let pu: DMatrix<f64> = a.view((nu, 0), (np, nu)).into_owned();
    let skew = (&up + pu.transpose()).amax() / up.amax();
    check(skew <= 1e-10, || format!("skew defect {skew:.2e}"))?;
    Ok(format!("asymmetry {asym:.1e}, min eig/|K| {:.1e}, skew defect {skew:.1e}", min / knorm))
}

fn dynamics() -> Outcome {
    let disc = unit_disc(2);
    let op = BlockOperator::new(&disc, Strategy::PartialAssembly, Backend::Scalar).unwrap();
    let mass = LumpedMass::new(&disc).map_err(|e| e.to_string())?;
    let period = standing_wave_period(&disc);
    let initial = standing_wave(&disc, 0.0);
    let summary = run(&op, &mass, &Forcing::none(), initial.clone(), period / 100.0, 100).map_err(|e| e.to_string())?;
    let drift = summary.max_relative_drift();
    check(drift <= 1e-6, || format!("energy drift {drift:.2e}"))?;
    // the spatial error of the analytic mode does not depend on dt, so the return error
    // is measured against a fine-step solution of the same semi-discrete system
    let at_period = |steps: usize| run(&op, &mass, &Forcing::none(), initial.clone(), period / steps as f64, steps).map(|s| s.final_state.to_vec());
    let reference = at_period(6400).map_err(|e| e.to_string())?;
    let errors: Vec<f64> = [100, 200, 400, 800]
        .iter()
        .map(|&s| at_period(s).map(|x| rel_norm(&x, &reference)))
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    let orders: Vec<f64> = errors.windows(2).map(|w| (w[0] / w[1]).log2()).collect();
    check(orders.iter().all(|&p| p >= 3.7), || format!("orders {orders:.2?}, errors {errors:?}"))?;
    Ok(format!("drift {drift:.2e}, orders {}", orders.iter().map(|p| format!("{p:.2}")).collect::<Vec<_>>().join(" ")))
}

fn rk4_instrumentation() -> Outcome {
    let disc = unit_disc(1);
    let op = BlockOperator::new(&disc, Strategy::FusedMatrixFree, Backend::Scalar).unwrap();
    let mass = LumpedMass::new(&disc).map_err(|e| e.to_string())?;
    let mut x = standing_wave(&disc, 0.0);
    for step in 1..=5 {
        let before = op.counters().snapshot().apply_block_calls;
        x = hofx_core::fem::rk4_step(&op, &mass, &Forcing::none(), &x, 0.0, 0.01, step).map_err(|e| e.to_string())?;
        let calls = op.counters().snapshot().apply_block_calls - before;
        check(calls == 4, || format!("step {step}: {calls} calls"))?;
    }
    Ok("4 apply_block calls in each of 5 steps".into())
}

fn main() {
    let criteria: [(&str, Option<Duration>, fn() -> Outcome); 11] = [
        ("cost model exactness", Some(Duration::from_secs(1)), cost_model),
        ("fragment layout bijections", Some(Duration::from_secs(1)), fragment_layout),
        ("DMMA emulation", Some(Duration::from_secs(10)), dmma_emulation),
        ("25x5x4 reference mapping", None, reference_mapping),
        ("seven contraction shapes", Some(Duration::from_secs(60)), seven_shapes),
        ("sum factorization oracle", None, sum_factorization),
        ("operator equivalence", Some(Duration::from_secs(120)), operator_equivalence),
        ("fusion traffic", None, fusion_traffic),
        ("normal operator structure", None, structure),
        ("standing-wave dynamics", Some(Duration::from_secs(60)), dynamics),
        ("RK4 instrumentation", None, rk4_instrumentation),
    ];
    let mut failed = 0;
    for (i, (name, limit, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let mut outcome = f();
        let elapsed = start.elapsed();
        if let (Ok(detail), Some(limit)) = (&outcome, limit) {
            if elapsed > *limit {
                outcome = Err(format!("{detail}; took {elapsed:.2?}, limit {limit:?}"));
            }
        }
        let (tag, detail) = match &outcome {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("criterion {:>2}: {tag}  {name}: {detail} [{elapsed:.2?}]", i + 1);
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
