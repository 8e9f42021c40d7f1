//! Master problems of the bundle method in epigraph form.
//!
//! Every master problem shares the same constraint skeleton over the stacked
//! variable `(x, w, t)`: public variables, auxiliary variables of the
//! structured function, and one epigraph variable per agent. For agent `i`
//! each cut contributes `v + q^T (x_i - p) <= t_i`, the floor is a lower bound
//! on `t_i`, and any known domain is imposed on `x_i` directly.

use std::ops::Range;

use crate::error::{Error, Result};
use crate::model::{dot, BlockStructure, Cut, CutOrigin, Minorant, PolyhedralFunction};
use crate::qp::{qp_solve, QpProblem, QpSolution, QpStatus};
use crate::sparse::SparseMatrix;

/// Smallest level multiplier turned into a proximal parameter.
pub const LAMBDA_MIN: f64 = 1e-6;

/// Row and column bookkeeping for a master QP.
#[derive(Clone, Debug)]
pub struct MasterLayout {
    pub blocks: BlockStructure,
    /// Columns of the public variable seen by the cuts.
    pub cut_x: usize,
    /// Columns of the structured function's `(x, w)`.
    pub g_vars: Range<usize>,
    pub t_offset: usize,
    /// Inequality row of each cut, per agent.
    pub cut_rows: Vec<Vec<usize>>,
    pub level_row: Option<usize>,
    /// Equality rows `xg - x = 0` of the consensus form.
    pub consensus_rows: Option<Range<usize>>,
}

#[derive(Clone, Debug)]
pub struct MasterProblem {
    pub qp: QpProblem,
    pub layout: MasterLayout,
    /// Constant dropped from the QP objective.
    pub constant: f64,
    g_cost: Vec<f64>,
    g_offset: f64,
}

#[derive(Clone, Debug)]
pub struct MasterSolution {
    pub status: QpStatus,
    pub x_tilde: Vec<f64>,
    /// Auxiliary variables of the structured function.
    pub w: Vec<f64>,
    pub t: Vec<f64>,
    /// `sum_i t_i + c^T (x, w) + d`
    pub fhat_value: f64,
    /// QP objective plus the dropped constant.
    pub objective: f64,
    pub cut_duals: Vec<Vec<f64>>,
    pub floor_duals: Vec<f64>,
    pub level_dual: Option<f64>,
    pub consensus_dual: Option<Vec<f64>>,
    pub qp: QpSolution,
}

fn check_minorants(minorants: &[Minorant], blocks: &BlockStructure) -> Result<()> {
    if minorants.len() != blocks.num_blocks() {
        return Err(Error::Config(format!(
            "{} minorants for {} blocks",
            minorants.len(),
            blocks.num_blocks()
        )));
    }
    for (i, m) in minorants.iter().enumerate() {
        if m.dim() != blocks.size(i) {
            return Err(Error::Dimension {
                context: "minorant block size",
                expected: blocks.size(i),
                got: m.dim(),
            });
        }
        if !m.is_bounded() {
            return Err(Error::Config(format!(
                "minorant of agent {i} has no floor and no cuts; the master problem is unbounded"
            )));
        }
    }
    Ok(())
}

/// Shared constraints. `cut_x` and `g_start` locate the two copies of `x`
/// (they coincide except in the consensus form).
fn skeleton(
    minorants: &[Minorant],
    blocks: &BlockStructure,
    g: &PolyhedralFunction,
    cut_x: usize,
    g_start: usize,
    total_vars: usize,
) -> Result<(QpProblem, MasterLayout)> {
    check_minorants(minorants, blocks)?;
    if g.n_public != blocks.total() {
        return Err(Error::Dimension {
            context: "structured function public size",
            expected: blocks.total(),
            got: g.n_public,
        });
    }
    let m = blocks.num_blocks();
    let t_offset = total_vars - m;
    let mut qp = QpProblem::new(total_vars);

    let gv = g.set.dim();
    qp.a_eq = g.set.a_eq.shifted(g_start, total_vars);
    qp.b_eq = g.set.b_eq.clone();
    qp.a_in = g.set.a_in.shifted(g_start, total_vars);
    qp.b_in = g.set.b_in.clone();
    qp.lower[g_start..g_start + gv].copy_from_slice(&g.set.lower);
    qp.upper[g_start..g_start + gv].copy_from_slice(&g.set.upper);
    let mut cut_rows = Vec::with_capacity(m);
    for (i, minorant) in minorants.iter().enumerate() {
        let off = cut_x + blocks.range(i).start;
        let t_col = t_offset + i;
        let mut rows = Vec::with_capacity(minorant.cuts().len());
        for cut in minorant.cuts() {
            rows.push(qp.b_in.len());
            qp.a_in.push_row(
                cut.subgradient
                    .iter()
                    .enumerate()
                    .map(|(j, &q)| (off + j, q))
                    .chain(std::iter::once((t_col, -1.0))),
            );
            qp.b_in.push(-cut.intercept());
        }
        cut_rows.push(rows);
        qp.lower[t_col] = minorant.floor();
        if let Some(dom) = minorant.known_domain() {
            let ni = minorant.dim();
            qp.a_eq.append_rows(&dom.a_eq.shifted(off, total_vars));
            qp.b_eq.extend_from_slice(&dom.b_eq);
            qp.a_in.append_rows(&dom.a_in.shifted(off, total_vars));
            qp.b_in.extend_from_slice(&dom.b_in);
            for j in 0..ni {
                qp.lower[off + j] = qp.lower[off + j].max(dom.lower[j]);
                qp.upper[off + j] = qp.upper[off + j].min(dom.upper[j]);
            }
        }
    }
    let layout = MasterLayout {
        blocks: blocks.clone(),
        cut_x,
        g_vars: g_start..g_start + gv,
        t_offset,
        cut_rows,
        level_row: None,
        consensus_rows: None,
    };
    Ok((qp, layout))
}

fn add_model_objective(qp: &mut QpProblem, layout: &MasterLayout, g: &PolyhedralFunction) {
    for (k, c) in g.c.iter().enumerate() {
        qp.q[layout.g_vars.start + k] += c;
    }
    for i in 0..layout.blocks.num_blocks() {
        qp.q[layout.t_offset + i] += 1.0;
    }
}

fn add_proximal_term(qp: &mut QpProblem, offset: usize, center: &[f64], weight: f64) -> f64 {
    let n = qp.num_vars();
    let triplets: Vec<(usize, usize, f64)> =
        (0..center.len()).map(|j| (offset + j, offset + j, weight)).collect();
    qp.p = SparseMatrix::from_triplets(n, n, &triplets);
    for (j, xk) in center.iter().enumerate() {
        qp.q[offset + j] -= weight * xk;
    }
    0.5 * weight * dot(center, center)
}

/// Proximal step: minimize `hhat(x) + rho/2 ||x - x_k||^2`.
pub fn build_prox(
    minorants: &[Minorant],
    blocks: &BlockStructure,
    g: &PolyhedralFunction,
    x_k: &[f64],
    rho: f64,
) -> Result<MasterProblem> {
    if !(rho > 0.0 && rho.is_finite()) {
        return Err(Error::Config(format!("proximal parameter must be positive, got {rho}")));
    }
    let total = g.set.dim() + blocks.num_blocks();
    let (mut qp, layout) = skeleton(minorants, blocks, g, 0, 0, total)?;
    add_model_objective(&mut qp, &layout, g);
    let constant = g.d + add_proximal_term(&mut qp, 0, x_k, rho);
    Ok(MasterProblem { qp, layout, constant, g_cost: g.c.clone(), g_offset: g.d })
}

/// Level step: project `x_k` onto `{x : hhat(x) <= eta}`.
pub fn build_level(
    minorants: &[Minorant],
    blocks: &BlockStructure,
    g: &PolyhedralFunction,
    x_k: &[f64],
    eta: f64,
) -> Result<MasterProblem> {
    let total = g.set.dim() + blocks.num_blocks();
    let (mut qp, mut layout) = skeleton(minorants, blocks, g, 0, 0, total)?;
    let constant = add_proximal_term(&mut qp, 0, x_k, 1.0);
    let mut row: Vec<(usize, f64)> = g
        .c
        .iter()
        .enumerate()
        .map(|(k, &c)| (layout.g_vars.start + k, c))
        .collect();
    row.extend((0..blocks.num_blocks()).map(|i| (layout.t_offset + i, 1.0)));
    layout.level_row = Some(qp.b_in.len());
    qp.a_in.push_row(row);
    qp.b_in.push(eta - g.d);
    Ok(MasterProblem { qp, layout, constant, g_cost: g.c.clone(), g_offset: g.d })
}

/// Lower bound: minimize `hhat` itself.
pub fn build_lower_bound(
    minorants: &[Minorant],
    blocks: &BlockStructure,
    g: &PolyhedralFunction,
) -> Result<MasterProblem> {
    let total = g.set.dim() + blocks.num_blocks();
    let (mut qp, layout) = skeleton(minorants, blocks, g, 0, 0, total)?;
    add_model_objective(&mut qp, &layout, g);
    Ok(MasterProblem { qp, layout, constant: g.d, g_cost: g.c.clone(), g_offset: g.d })
}

/// Lower-bound problem in consensus form: cuts act on one copy of `x`, the
/// structured function on another, tied by `xg - x = 0`.
pub fn build_dual_estimate(
    minorants: &[Minorant],
    blocks: &BlockStructure,
    g: &PolyhedralFunction,
) -> Result<MasterProblem> {
    let n = blocks.total();
    let total = n + g.set.dim() + blocks.num_blocks();
    let (mut qp, mut layout) = skeleton(minorants, blocks, g, 0, n, total)?;
    add_model_objective(&mut qp, &layout, g);
    let start = qp.b_eq.len();
    for j in 0..n {
        qp.a_eq.push_row([(n + j, 1.0), (j, -1.0)]);
        qp.b_eq.push(0.0);
    }
    layout.consensus_rows = Some(start..start + n);
    Ok(MasterProblem { qp, layout, constant: g.d, g_cost: g.c.clone(), g_offset: g.d })
}

pub fn solve_master(problem: &MasterProblem, tol: f64) -> Result<MasterSolution> {
    let sol = qp_solve(&problem.qp, tol)?;
    let layout = &problem.layout;
    let n = layout.blocks.total();
    let m = layout.blocks.num_blocks();
    let x_tilde = sol.z[layout.cut_x..layout.cut_x + n].to_vec();
    let w = sol.z[layout.g_vars.start + n..layout.g_vars.end].to_vec();
    let t = sol.z[layout.t_offset..layout.t_offset + m].to_vec();
    let g_lin = dot(&problem.g_cost, &sol.z[layout.g_vars.clone()]);
    let fhat_value = t.iter().sum::<f64>() + g_lin + problem.g_offset;
    let cut_duals = layout
        .cut_rows
        .iter()
        .map(|rows| rows.iter().map(|&r| sol.y_in[r]).collect())
        .collect();
    let floor_duals = (0..m).map(|i| sol.y_lower[layout.t_offset + i]).collect();
    let level_dual = layout.level_row.map(|r| sol.y_in[r]);
    let consensus_dual = layout
        .consensus_rows
        .as_ref()
        .map(|rows| sol.y_eq[rows.clone()].to_vec());
    Ok(MasterSolution {
        status: sol.status,
        x_tilde,
        w,
        t,
        fhat_value,
        objective: sol.objective + problem.constant,
        cut_duals,
        floor_duals,
        level_dual,
        consensus_dual,
        qp: sol,
    })
}

/// Aggregate cut of each agent from the multipliers of a master solution.
///
/// The weights are the cut and floor multipliers normalized to sum to one,
/// so the result is a convex combination of the current cuts and the floor
/// and is therefore a minorant of `f_i` wherever the cuts are.
pub fn extract_aggregate_cuts(minorants: &[Minorant], sol: &MasterSolution) -> Vec<Cut> {
    minorants
        .iter()
        .enumerate()
        .map(|(i, m)| {
            let x_i = &sol.x_tilde[sol_range(minorants, i)];
            aggregate_one(m, &sol.cut_duals[i], sol.floor_duals[i], x_i)
        })
        .collect()
}

fn sol_range(minorants: &[Minorant], i: usize) -> Range<usize> {
    let start: usize = minorants[..i].iter().map(Minorant::dim).sum();
    start..start + minorants[i].dim()
}

fn aggregate_one(m: &Minorant, cut_duals: &[f64], floor_dual: f64, x: &[f64]) -> Cut {
    let clip = |v: f64| {
        if v < -1e-8 {
            log::warn!("negative cut multiplier {v} clipped to zero");
        }
        v.max(0.0)
    };
    let mu: Vec<f64> = cut_duals.iter().map(|&v| clip(v)).collect();
    let nu = if m.floor().is_finite() { clip(floor_dual) } else { 0.0 };
    let total = mu.iter().sum::<f64>() + nu;
    if total <= 1e-12 {
        // no active multiplier: fall back to the piece attaining the max at x
        let best = m
            .cuts()
            .iter()
            .max_by(|a, b| a.eval(x).total_cmp(&b.eval(x)));
        return match best {
            Some(c) if c.eval(x) >= m.floor() => Cut::new(c.eval(x), x.to_vec(), c.subgradient.clone(), CutOrigin::Aggregate),
            _ => Cut::new(m.floor(), x.to_vec(), vec![0.0; m.dim()], CutOrigin::Aggregate),
        };
    }
    let mut value = if nu > 0.0 { nu / total * m.floor() } else { 0.0 };
    let mut slope = vec![0.0; m.dim()];
    for (c, &w) in m.cuts().iter().zip(&mu) {
        if w == 0.0 {
            continue;
        }
        let theta = w / total;
        value += theta * c.eval(x);
        for (s, q) in slope.iter_mut().zip(&c.subgradient) {
            *s += theta * q;
        }
    }
    Cut::new(value, x.to_vec(), slope, CutOrigin::Aggregate)
}

/// Proximal parameter `1 / lambda` from a level multiplier. The flag reports
/// whether `lambda` was below `lambda_min` and got clamped.
pub fn rho_from_level(lambda: f64, lambda_min: f64) -> (f64, bool) {
    if lambda < lambda_min || !lambda.is_finite() {
        (1.0 / lambda_min, true)
    } else {
        (1.0 / lambda, false)
    }
}

/// Estimate of the optimal price `q*`: the multiplier of the consensus rows
/// in the lower-bound problem, together with the model lower bound.
pub fn extract_dual_estimate(
    minorants: &[Minorant],
    blocks: &BlockStructure,
    g: &PolyhedralFunction,
    tol: f64,
) -> Result<(Vec<f64>, f64)> {
    let sol = solve_master(&build_dual_estimate(minorants, blocks, g)?, tol)?;
    if sol.status != QpStatus::Optimal {
        return Err(Error::Master(format!("dual estimate solve ended with {:?}", sol.status)));
    }
    Ok((sol.consensus_dual.unwrap_or_default(), sol.objective))
}
