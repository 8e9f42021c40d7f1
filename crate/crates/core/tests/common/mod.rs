//! Test-only oracles shared by the integration suites.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use osbundle::agents::generators::{
    gen_federated, gen_mcf, gen_resource, gen_supply_chain, FederatedConfig, McfConfig, ResourceConfig,
    SupplyChainConfig,
};
use osbundle::agents::BuiltinAgent;
use osbundle::instance::Instance;
use osbundle::model::AgentOracle;
use osbundle::qp::QpProblem;
use osbundle::sparse::SparseMatrix;

/// Random strictly convex QP with at most four constraints and a known
/// feasible point.
pub fn random_small_qp(seed: u64) -> QpProblem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(1..=6);
    let mut l = DMatrix::<f64>::zeros(n, n);
    for v in l.iter_mut() {
        *v = rng.random_range(-1.0..1.0);
    }
    let p = &l * l.transpose() + DMatrix::identity(n, n) * 0.1;
    let z0: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();

    let mut qp = QpProblem::new(n);
    let dense: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| p[(i, j)]).collect()).collect();
    qp.p = SparseMatrix::from_dense(&dense, n);
    qp.q = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();

    let budget = rng.random_range(0..=4);
    for _ in 0..budget {
        let kind = rng.random_range(0..6);
        match kind {
            0 if qp.b_eq.len() < n.saturating_sub(1) => {
                let row: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
                let rhs = row.iter().zip(&z0).map(|(a, z)| a * z).sum();
                qp.a_eq.push_row(row.into_iter().enumerate());
                qp.b_eq.push(rhs);
            }
            1 | 2 | 0 => {
                let row: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
                let rhs: f64 = row.iter().zip(&z0).map(|(a, z)| a * z).sum::<f64>()
                    + rng.random_range(0.0..0.5);
                qp.a_in.push_row(row.into_iter().enumerate());
                qp.b_in.push(rhs);
            }
            3 | 4 => {
                let j = rng.random_range(0..n);
                if qp.lower[j].is_infinite() {
                    qp.lower[j] = z0[j] - rng.random_range(0.0..0.5);
                }
            }
            _ => {
                let j = rng.random_range(0..n);
                if qp.upper[j].is_infinite() {
                    qp.upper[j] = z0[j] + rng.random_range(0.0..0.5);
                }
            }
        }
    }
    qp
}

/// Primal and dual solution found by enumeration.
#[derive(Debug)]
pub struct BruteForce {
    pub z: Vec<f64>,
    pub y_eq: Vec<f64>,
    pub y_in: Vec<f64>,
    pub y_lower: Vec<f64>,
    pub y_upper: Vec<f64>,
}

enum Row {
    In(usize),
    Lower(usize),
    Upper(usize),
}

/// Enumerates every active set of the one-sided constraints, solves the
/// equality-constrained KKT system for each, and keeps the one that is primal
/// and dual feasible.
pub fn brute_force_qp(qp: &QpProblem) -> Option<BruteForce> {
    let n = qp.num_vars();
    let m_eq = qp.b_eq.len();
    let pd = DMatrix::from_fn(n, n, |i, j| qp.p.to_dense()[i][j]);
    let eq_dense = qp.a_eq.to_dense();
    let in_dense = qp.a_in.to_dense();

    let mut rows: Vec<(Vec<f64>, f64, Row)> = Vec::new();
    for (i, r) in in_dense.iter().enumerate() {
        rows.push((r.clone(), qp.b_in[i], Row::In(i)));
    }
    for j in 0..n {
        if qp.lower[j].is_finite() {
            let mut r = vec![0.0; n];
            r[j] = -1.0;
            rows.push((r, -qp.lower[j], Row::Lower(j)));
        }
        if qp.upper[j].is_finite() {
            let mut r = vec![0.0; n];
            r[j] = 1.0;
            rows.push((r, qp.upper[j], Row::Upper(j)));
        }
    }

    let k = rows.len();
    for mask in 0u32..(1 << k) {
        let active: Vec<usize> = (0..k).filter(|i| mask & (1 << i) != 0).collect();
        let m = m_eq + active.len();
        let dim = n + m;
        let mut kkt = DMatrix::<f64>::zeros(dim, dim);
        let mut rhs = DVector::<f64>::zeros(dim);
        kkt.view_mut((0, 0), (n, n)).copy_from(&pd);
        for j in 0..n {
            rhs[j] = -qp.q[j];
        }
        let mut put = |r: usize, a: &[f64], b: f64| {
            for j in 0..n {
                kkt[(n + r, j)] = a[j];
                kkt[(j, n + r)] = a[j];
            }
            rhs[n + r] = b;
        };
        for (i, a) in eq_dense.iter().enumerate() {
            put(i, a, qp.b_eq[i]);
        }
        for (r, &idx) in active.iter().enumerate() {
            put(m_eq + r, &rows[idx].0, rows[idx].1);
        }
        let Some(sol) = kkt.lu().solve(&rhs) else {
            continue;
        };
        let z: Vec<f64> = (0..n).map(|j| sol[j]).collect();
        let primal_ok = rows.iter().all(|(a, b, _)| {
            a.iter().zip(&z).map(|(x, y)| x * y).sum::<f64>() <= b + 1e-9
        });
        let dual_ok = (0..active.len()).all(|r| sol[n + m_eq + r] >= -1e-9);
        if !(primal_ok && dual_ok) {
            continue;
        }
        let mut out = BruteForce {
            z,
            y_eq: (0..m_eq).map(|i| sol[n + i]).collect(),
            y_in: vec![0.0; qp.b_in.len()],
            y_lower: vec![0.0; n],
            y_upper: vec![0.0; n],
        };
        for (r, &idx) in active.iter().enumerate() {
            let y = sol[n + m_eq + r];
            match rows[idx].2 {
                Row::In(i) => out.y_in[i] = y,
                Row::Lower(j) => out.y_lower[j] = y,
                Row::Upper(j) => out.y_upper[j] = y,
            }
        }
        return Some(out);
    }
    None
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).fold(0.0_f64, |m, (x, y)| m.max((x - y).abs()))
}

/// Dual objective of a QP at the given multipliers and primal point.
pub fn dual_objective(qp: &QpProblem, z: &[f64], y_eq: &[f64], y_in: &[f64], y_lo: &[f64], y_up: &[f64]) -> f64 {
    let pz = qp.p.mul_vec(z);
    let mut v = -0.5 * z.iter().zip(&pz).map(|(a, b)| a * b).sum::<f64>();
    v -= qp.b_eq.iter().zip(y_eq).map(|(b, y)| b * y).sum::<f64>();
    v -= qp.b_in.iter().zip(y_in).map(|(b, y)| b * y).sum::<f64>();
    for j in 0..qp.num_vars() {
        if qp.lower[j].is_finite() {
            v += qp.lower[j] * y_lo[j];
        }
        if qp.upper[j].is_finite() {
            v -= qp.upper[j] * y_up[j];
        }
    }
    v
}

/// One-sided finite-difference check of a subgradient along each coordinate.
pub fn fd_subgradient_error<F: Fn(&[f64]) -> f64>(f: F, x: &[f64], q: &[f64], step: f64) -> f64 {
    let fx = f(x);
    let mut worst = 0.0_f64;
    for j in 0..x.len() {
        let mut xp = x.to_vec();
        xp[j] += step;
        let fd = (f(&xp) - fx) / step;
        worst = worst.max((fd - q[j]).abs());
    }
    worst
}

pub const FD_STEP: f64 = 1e-5;
pub const FD_TOL: f64 = 1e-3;
pub const PAIR_SLACK: f64 = 1e-6;

/// Small instances of every example family.
pub fn small_instances() -> Vec<Instance> {
    vec![
        gen_supply_chain(3, &SupplyChainConfig::desk()).unwrap(),
        gen_mcf(3, &McfConfig { commodities: 3, nodes: 8, edges: 24 }).unwrap(),
        gen_resource(3, &ResourceConfig { resources: 6, agents: 3, participants: 4, pieces: 5 }).unwrap(),
        gen_federated(3, &FederatedConfig { features: 8, locations: 3, samples: 30, lambda: 5.0 }).unwrap(),
    ]
}

fn block_start(inst: &Instance, i: usize) -> usize {
    inst.agents[..i].iter().map(|a| a.dim()).sum()
}

/// Uniform point in the box of `g` restricted to agent `i`'s block; infinite
/// sides are replaced by `[-2, 2]`.
pub fn sample_block(inst: &Instance, i: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let start = block_start(inst, i);
    let g = &inst.structured;
    (start..start + inst.agents[i].dim())
        .map(|j| {
            let lo = if g.set.lower[j].is_finite() { g.set.lower[j] } else { -2.0 };
            let hi = if g.set.upper[j].is_finite() { g.set.upper[j] } else { lo + 4.0 };
            rng.random_range(lo..=hi)
        })
        .collect()
}

/// Pulls a sample away from the box faces so both one-sided differences stay
/// inside the box.
fn interior(inst: &Instance, i: usize, mut x: Vec<f64>) -> Vec<f64> {
    let start = block_start(inst, i);
    let g = &inst.structured;
    for (k, v) in x.iter_mut().enumerate() {
        let (lo, hi) = (g.set.lower[start + k], g.set.upper[start + k]);
        *v = v.clamp(lo + 2.0 * FD_STEP, hi - 2.0 * FD_STEP);
    }
    x
}

pub fn value(agent: &BuiltinAgent, x: &[f64]) -> f64 {
    agent.query(x).unwrap().value
}

/// True when one-sided differences agree in every coordinate, so the value
/// function is differentiable at `x` up to the step size.
fn looks_differentiable(agent: &BuiltinAgent, x: &[f64], fx: f64) -> bool {
    (0..x.len()).all(|j| {
        let mut xp = x.to_vec();
        xp[j] += FD_STEP;
        let mut xm = x.to_vec();
        xm[j] -= FD_STEP;
        let fwd = (value(agent, &xp) - fx) / FD_STEP;
        let bwd = (fx - value(agent, &xm)) / FD_STEP;
        (fwd - bwd).abs() <= FD_TOL
    })
}

/// Largest forward-difference error over `points` differentiable samples.
pub fn fd_check(inst: &Instance, i: usize, points: usize, rng: &mut ChaCha8Rng) -> Result<f64, String> {
    let agent = &inst.agents[i];
    let mut worst = 0.0_f64;
    let mut checked = 0;
    for _ in 0..20 * points {
        if checked == points {
            return Ok(worst);
        }
        let x = interior(inst, i, sample_block(inst, i, rng));
        let r = agent.query(&x).map_err(|e| e.to_string())?;
        if looks_differentiable(agent, &x, r.value) {
            worst = worst.max(fd_subgradient_error(|y| value(agent, y), &x, &r.subgradient, FD_STEP));
            checked += 1;
        }
    }
    if checked == points {
        Ok(worst)
    } else {
        Err(format!("only {checked} of {points} samples were differentiable"))
    }
}

/// Largest relative violation of `f(y) >= f(x) + q(x)^T (y - x)` over
/// random pairs.
pub fn pair_check(inst: &Instance, i: usize, pairs: usize, rng: &mut ChaCha8Rng) -> f64 {
    let agent = &inst.agents[i];
    let mut worst = 0.0_f64;
    for _ in 0..pairs {
        let x = sample_block(inst, i, rng);
        let y = sample_block(inst, i, rng);
        let rx = agent.query(&x).unwrap();
        let fy = value(agent, &y);
        let lin: f64 = rx.subgradient.iter().zip(y.iter().zip(&x)).map(|(q, (a, b))| q * (a - b)).sum();
        worst = worst.max((rx.value + lin - fy) / (1.0 + fy.abs()));
    }
    worst
}
