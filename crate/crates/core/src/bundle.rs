//! The bundle method driver.
//!
//! Each iteration computes a lower bound, takes a tentative step on the
//! disaggregated model, queries every agent at the candidate, runs the
//! descent test, and adds one cut per agent. The first iterations are level
//! projections whose multipliers pick the proximal parameter used afterwards.

use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{check_dim, Error, Result};
use crate::master::{
    build_level, build_lower_bound, build_prox, extract_aggregate_cuts, extract_dual_estimate,
    rho_from_level, solve_master, MasterSolution, LAMBDA_MIN,
};
use crate::model::{
    dot, relative_gap, AgentOracle, BlockStructure, Cut, CutOrigin, Minorant, PolyhedralFunction,
};
use crate::precond::{scale_structured, scaling_from_bounds, wrap_oracle, DiagonalScaling};
use crate::qp::{qp_solve, QpProblem, QpStatus};

/// Feasibility tolerance used when evaluating `g` at master solutions.
const G_EVAL_TOL: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SolverParams {
    /// Descent-test fraction, in `(0, 1)`.
    pub eta: f64,
    /// Fixed proximal parameter; skips the discovery phase.
    pub rho_override: Option<f64>,
    pub discovery_iters: usize,
    pub rho_geomean_window: usize,
    pub eps_abs: f64,
    pub eps_rel: f64,
    pub max_iters: usize,
    /// Cuts kept per agent; `None` keeps all of them.
    pub memory: Option<usize>,
    /// Iterations between lower-bound solves in the main phase.
    pub lb_period: usize,
    pub lambda_min: f64,
    pub precondition: bool,
    pub parallel_agents: bool,
    /// Re-solve every level step as a prox step and record the distance.
    pub check_level_prox: bool,
    pub qp_tol: f64,
    /// Starting point in original coordinates.
    pub x0: Option<Vec<f64>>,
}

impl Default for SolverParams {
    fn default() -> Self {
        Self {
            eta: 0.01,
            rho_override: None,
            discovery_iters: 20,
            rho_geomean_window: 5,
            eps_abs: 1e-3,
            eps_rel: 1e-2,
            max_iters: 300,
            memory: None,
            lb_period: 1,
            lambda_min: LAMBDA_MIN,
            precondition: true,
            parallel_agents: false,
            check_level_prox: false,
            qp_tol: 1e-9,
            x0: None,
        }
    }
}

impl SolverParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.eta > 0.0 && self.eta < 1.0) {
            return bad(format!("eta must lie in (0, 1), got {}", self.eta));
        }
        if let Some(rho) = self.rho_override {
            if !(rho > 0.0 && rho.is_finite()) {
                return bad(format!("rho must be positive, got {rho}"));
            }
        }
        if !(self.eps_abs > 0.0 && self.eps_rel > 0.0) {
            return bad("gap tolerances must be positive".into());
        }
        if self.lb_period == 0 || self.rho_geomean_window == 0 {
            return bad("lb_period and the geometric-mean window must be positive".into());
        }
        if let Some(m) = self.memory {
            if m < 2 {
                return bad(format!("memory {m} leaves no room for an aggregate and an oracle cut"));
            }
        }
        if !(self.lambda_min > 0.0 && self.qp_tol > 0.0) {
            return bad("lambda_min and qp_tol must be positive".into());
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Discovery,
    Prox,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    GapAbs,
    GapRel,
    MaxIters,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IterationRecord {
    pub k: usize,
    pub h_xk: f64,
    /// `NaN` when the iteration skipped the agent queries.
    pub h_tilde: f64,
    /// Lower bound solved in this iteration, if any.
    pub l_k: Option<f64>,
    pub l_best: f64,
    pub omega: f64,
    pub delta: f64,
    pub accepted: bool,
    pub rho: f64,
    pub phase: Phase,
    pub wall_ms: f64,
    /// Distance between the level step and the prox step with `rho = 1/lambda`.
    pub level_prox_gap: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct SolveResult {
    pub x_best: Vec<f64>,
    pub h_best: f64,
    pub l_best: f64,
    pub omega_final: f64,
    /// Price estimate in original coordinates.
    pub q_star: Vec<f64>,
    pub status: SolveStatus,
    pub trace: Vec<IterationRecord>,
    pub agent_queries: usize,
    /// Proximal parameter of the main phase, in scaled coordinates.
    pub rho: Option<f64>,
}

/// Accept iff `h_k - h_tilde >= eta * max(delta, 0)`.
pub fn descent_test(h_k: f64, h_tilde: f64, delta: f64, eta: f64) -> bool {
    h_k - h_tilde >= eta * delta.max(0.0)
}

pub fn check_stop(h_k: f64, l_best: f64, params: &SolverParams) -> Option<SolveStatus> {
    let gap = h_k - l_best;
    if gap <= params.eps_abs {
        Some(SolveStatus::GapAbs)
    } else if h_k * l_best > 0.0 && gap <= params.eps_rel * h_k.abs().min(l_best.abs()) {
        Some(SolveStatus::GapRel)
    } else {
        None
    }
}

/// `1 / geomean` of the last `window` multipliers above `lambda_min`; 1 when
/// there are none.
pub fn discovery_rho(lambda_history: &[f64], window: usize, lambda_min: f64) -> f64 {
    let valid: Vec<f64> = lambda_history
        .iter()
        .copied()
        .filter(|l| *l > lambda_min && l.is_finite())
        .collect();
    if valid.is_empty() {
        log::warn!("no usable level multipliers from discovery; using rho = 1");
        return 1.0;
    }
    let tail = &valid[valid.len().saturating_sub(window)..];
    let mean_log = tail.iter().map(|l| l.ln()).sum::<f64>() / tail.len() as f64;
    (-mean_log).exp()
}

/// Runs the bundle method on `h(x) = sum_i f_i(x_i) + g(x)`.
///
/// Agent `i` owns the `i`-th block of `x`, of size `agents[i].dim()`.
pub fn solve<A: AgentOracle>(
    g: &PolyhedralFunction,
    agents: &[A],
    params: &SolverParams,
) -> Result<SolveResult> {
    params.validate()?;
    g.validate()?;
    let blocks = BlockStructure::new(agents.iter().map(AgentOracle::dim).collect())?;
    check_dim("structured function public size", blocks.total(), g.n_public)?;

    let scaling = if params.precondition {
        scaling_from_bounds(g.public_lower(), g.public_upper())?
    } else {
        DiagonalScaling::identity(blocks.total())
    };
    let gbar = scale_structured(g, &scaling)?;
    let wrapped = agents
        .iter()
        .enumerate()
        .map(|(i, a)| wrap_oracle(a, scaling.block(&blocks, i)))
        .collect::<Result<Vec<_>>>()?;
    let x0 = params.x0.as_ref().map(|x| scaling.to_scaled(x));

    let mut driver = Driver::new(&gbar, &wrapped, blocks, params)?;
    let mut out = driver.run(x0)?;
    out.x_best = scaling.to_original(&out.x_best);
    out.q_star = scaling.price_to_original(&out.q_star);
    Ok(out)
}

struct Driver<'a, A> {
    g: &'a PolyhedralFunction,
    agents: &'a [A],
    blocks: BlockStructure,
    params: &'a SolverParams,
    minorants: Vec<Minorant>,
    queries: usize,
}

struct Step {
    sol: MasterSolution,
    rho: f64,
    phase: Phase,
    level_prox_gap: Option<f64>,
}

impl<'a, A: AgentOracle> Driver<'a, A> {
    fn new(
        g: &'a PolyhedralFunction,
        agents: &'a [A],
        blocks: BlockStructure,
        params: &'a SolverParams,
    ) -> Result<Self> {
        let minorants = agents
            .iter()
            .enumerate()
            .map(|(i, a)| {
                let mut m = a.initial_minorant().unwrap_or_else(|| Minorant::new(a.dim()));
                if m.dim() != a.dim() {
                    return Err(Error::Dimension {
                        context: "initial minorant",
                        expected: a.dim(),
                        got: m.dim(),
                    });
                }
                m.block = i;
                Ok(m.with_memory(params.memory))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            g,
            agents,
            blocks,
            params,
            minorants,
            queries: 0,
        })
    }

    fn run(&mut self, x0: Option<Vec<f64>>) -> Result<SolveResult> {
        let params = self.params;
        let start = Instant::now();
        let mut x_k = match x0 {
            Some(x) => {
                check_dim("starting point", self.blocks.total(), x.len())?;
                x
            }
            None => self.starting_point()?,
        };
        let g_k = self.eval_g(&x_k)?;
        if !g_k.is_finite() {
            return Err(Error::Config("starting point lies outside the domain of g".into()));
        }
        let f_k = self.query_all(&x_k)?;
        let mut h_k = f_k.iter().map(|r| r.0).sum::<f64>() + g_k;
        self.add_cuts(f_k, &x_k, 0, None)?;

        let mut l_best = f64::NEG_INFINITY;
        let mut lambdas: Vec<f64> = Vec::new();
        let mut fixed_rho = params.rho_override;
        let mut trace = Vec::new();
        let mut status = SolveStatus::MaxIters;

        for k in 0..params.max_iters {
            let discovery = params.rho_override.is_none() && k < params.discovery_iters;
            if !discovery && fixed_rho.is_none() {
                let rho = discovery_rho(&lambdas, params.rho_geomean_window, params.lambda_min);
                log::info!("discovery finished, rho = {rho:.6e}");
                fixed_rho = Some(rho);
            }

            let l_k = if discovery || k % params.lb_period == 0 {
                let l = self.lower_bound()?;
                l_best = l_best.max(l);
                Some(l)
            } else {
                None
            };
            if let Some(s) = check_stop(h_k, l_best, params) {
                status = s;
                break;
            }

            let step = if discovery {
                self.discovery_step(&x_k, h_k, l_best, &mut lambdas)?
            } else {
                let rho = fixed_rho.unwrap_or(1.0);
                Some(self.prox_step(&x_k, rho)?)
            };
            let omega = relative_gap(h_k, l_best);
            let Some(step) = step else {
                trace.push(IterationRecord {
                    k,
                    h_xk: h_k,
                    h_tilde: f64::NAN,
                    l_k,
                    l_best,
                    omega,
                    delta: 0.0,
                    accepted: false,
                    rho: f64::NAN,
                    phase: Phase::Discovery,
                    wall_ms: start.elapsed().as_secs_f64() * 1e3,
                    level_prox_gap: None,
                });
                continue;
            };

            let mut x_tilde = step.sol.x_tilde.clone();
            self.g.set.clip_to_box(&mut x_tilde[..]);
            let g_tilde = self.eval_g(&x_tilde)?;
            if !g_tilde.is_finite() {
                return Err(Error::Master(format!(
                    "tentative point violates the domain of g (QP residuals {:?})",
                    step.sol.qp.residuals
                )));
            }
            let fhat: f64 = self
                .minorants
                .iter()
                .enumerate()
                .map(|(i, m)| m.affine_max(self.blocks.block(&x_tilde, i)))
                .sum();
            let answers = self.query_all(&x_tilde)?;
            let h_tilde = answers.iter().map(|r| r.0).sum::<f64>() + g_tilde;
            let dist2: f64 = x_tilde.iter().zip(&x_k).map(|(a, b)| (a - b) * (a - b)).sum();
            let delta = h_k - (fhat + g_tilde + 0.5 * step.rho * dist2);
            if delta < -1e-8 * (1.0 + h_k.abs()) {
                log::warn!(
                    "negative predicted decrease {delta:.3e} at iteration {k}; master residuals {:?}",
                    step.sol.qp.residuals
                );
            }
            let accepted = descent_test(h_k, h_tilde, delta, params.eta);
            let h_xk = h_k;

            let aggregates = params
                .memory
                .map(|_| extract_aggregate_cuts(&self.minorants, &step.sol));
            self.add_cuts(answers, &x_tilde, k + 1, aggregates)?;
            if accepted {
                x_k = x_tilde;
                h_k = h_tilde;
            }
            log::debug!(
                "k={k} h={h_k:.6e} L={l_best:.6e} delta={delta:.3e} rho={:.3e} {}",
                step.rho,
                if accepted { "serious" } else { "null" }
            );
            trace.push(IterationRecord {
                k,
                h_xk,
                h_tilde,
                l_k,
                l_best,
                omega,
                delta,
                accepted,
                rho: step.rho,
                phase: step.phase,
                wall_ms: start.elapsed().as_secs_f64() * 1e3,
                level_prox_gap: step.level_prox_gap,
            });
        }

        if status == SolveStatus::MaxIters {
            let l = self.lower_bound()?;
            l_best = l_best.max(l);
            if let Some(s) = check_stop(h_k, l_best, params) {
                status = s;
            }
        }
        let (q_star, _) = extract_dual_estimate(&self.minorants, &self.blocks, self.g, params.qp_tol)?;
        Ok(SolveResult {
            x_best: x_k,
            h_best: h_k,
            l_best,
            omega_final: relative_gap(h_k, l_best),
            q_star,
            status,
            trace,
            agent_queries: self.queries,
            rho: fixed_rho,
        })
    }

    /// Projection of the box midpoint onto the domain of `g`.
    fn starting_point(&self) -> Result<Vec<f64>> {
        let n = self.g.n_public;
        let set = &self.g.set;
        let mid: Vec<f64> = (0..n)
            .map(|j| match (set.lower[j].is_finite(), set.upper[j].is_finite()) {
                (true, true) => 0.5 * (set.lower[j] + set.upper[j]),
                (true, false) => set.lower[j],
                (false, true) => set.upper[j],
                (false, false) => 0.0,
            })
            .collect();
        let mut qp = QpProblem::new(set.dim());
        qp.p = crate::sparse::SparseMatrix::from_triplets(
            set.dim(),
            set.dim(),
            &(0..n).map(|j| (j, j, 1.0)).collect::<Vec<_>>(),
        );
        for (j, m) in mid.iter().enumerate() {
            qp.q[j] = -m;
        }
        qp.a_eq = set.a_eq.clone();
        qp.b_eq = set.b_eq.clone();
        qp.a_in = set.a_in.clone();
        qp.b_in = set.b_in.clone();
        qp.lower = set.lower.clone();
        qp.upper = set.upper.clone();
        let sol = qp_solve(&qp, self.params.qp_tol)?;
        match sol.status {
            QpStatus::Optimal => {
                let mut x = sol.z[..n].to_vec();
                set.clip_to_box(&mut x);
                Ok(x)
            }
            QpStatus::Infeasible => Err(Error::EmptyDomain),
            other => Err(Error::Master(format!("starting-point projection ended with {other:?}"))),
        }
    }

    fn eval_g(&self, x: &[f64]) -> Result<f64> {
        self.g.eval_with_tol(x, G_EVAL_TOL)
    }

    fn query_all(&mut self, x: &[f64]) -> Result<Vec<(f64, Vec<f64>)>> {
        let blocks = &self.blocks;
        let ask = |(i, a): (usize, &A)| -> Result<(f64, Vec<f64>)> {
            let r = a.query(blocks.block(x, i)).map_err(|e| Error::Agent {
                agent: i,
                message: e.0,
            })?;
            if !r.value.is_finite() || r.subgradient.iter().any(|q| !q.is_finite()) {
                return Err(Error::Agent {
                    agent: i,
                    message: format!("non-finite answer (value {}) at a point in dom g", r.value),
                });
            }
            if r.subgradient.len() != a.dim() {
                return Err(Error::Agent {
                    agent: i,
                    message: format!("subgradient has length {}, expected {}", r.subgradient.len(), a.dim()),
                });
            }
            Ok((r.value, r.subgradient))
        };
        let answers: Vec<Result<_>> = if self.params.parallel_agents {
            self.agents.par_iter().enumerate().map(ask).collect()
        } else {
            self.agents.iter().enumerate().map(ask).collect()
        };
        self.queries += self.agents.len();
        answers.into_iter().collect()
    }

    fn add_cuts(
        &mut self,
        answers: Vec<(f64, Vec<f64>)>,
        x: &[f64],
        iteration: usize,
        aggregates: Option<Vec<Cut>>,
    ) -> Result<()> {
        let mut aggregates = aggregates.map(|v| v.into_iter());
        for (i, (value, q)) in answers.into_iter().enumerate() {
            let p = self.blocks.block(x, i).to_vec();
            let m = &mut self.minorants[i];
            m.add_cut(Cut::new(value, p, q, CutOrigin::Oracle { iteration }))?;
            let agg = aggregates.as_mut().and_then(Iterator::next);
            if m.needs_compression() {
                if let Some(agg) = agg {
                    m.compress(agg)?;
                }
            }
        }
        Ok(())
    }

    fn lower_bound(&self) -> Result<f64> {
        let sol = solve_master(
            &build_lower_bound(&self.minorants, &self.blocks, self.g)?,
            self.params.qp_tol,
        )?;
        match sol.status {
            QpStatus::Optimal => Ok(sol.objective),
            QpStatus::Unbounded => Ok(f64::NEG_INFINITY),
            QpStatus::Infeasible => Err(Error::EmptyDomain),
            QpStatus::MaxIter => Err(Error::Master("lower-bound problem did not converge".into())),
        }
    }

    fn prox_step(&self, x_k: &[f64], rho: f64) -> Result<Step> {
        let sol = solve_master(
            &build_prox(&self.minorants, &self.blocks, self.g, x_k, rho)?,
            self.params.qp_tol,
        )?;
        if sol.status != QpStatus::Optimal {
            return Err(Error::Master(format!("proximal step ended with {:?}", sol.status)));
        }
        Ok(Step {
            sol,
            rho,
            phase: Phase::Prox,
            level_prox_gap: None,
        })
    }

    /// Level projection; `None` when the model already sits below the level
    /// at `x_k` even after moving the level halfway down.
    fn discovery_step(
        &self,
        x_k: &[f64],
        h_k: f64,
        l_best: f64,
        lambdas: &mut Vec<f64>,
    ) -> Result<Option<Step>> {
        let params = self.params;
        let fallback_rho = || match lambdas.last() {
            Some(&l) => rho_from_level(l, params.lambda_min).0,
            None => 1.0,
        };
        if !l_best.is_finite() {
            let mut s = self.prox_step(x_k, fallback_rho())?;
            s.phase = Phase::Discovery;
            return Ok(Some(s));
        }
        let mut level = 0.5 * (h_k + l_best);
        for attempt in 0..2 {
            let sol = solve_master(
                &build_level(&self.minorants, &self.blocks, self.g, x_k, level)?,
                params.qp_tol,
            )?;
            if sol.status != QpStatus::Optimal {
                log::warn!("level problem ended with {:?}; taking a prox step", sol.status);
                let mut s = self.prox_step(x_k, fallback_rho())?;
                s.phase = Phase::Discovery;
                return Ok(Some(s));
            }
            let lambda = sol.level_dual.unwrap_or(0.0).max(0.0);
            let moved = sol
                .x_tilde
                .iter()
                .zip(x_k)
                .any(|(a, b)| (a - b).abs() > 1e-12 * (1.0 + b.abs()));
            if lambda <= params.lambda_min && !moved {
                if attempt == 0 {
                    level = 0.5 * (level + l_best);
                    continue;
                }
                log::warn!("level step made no progress; skipping iteration");
                return Ok(None);
            }
            lambdas.push(lambda);
            let (rho, _) = rho_from_level(lambda, params.lambda_min);
            let level_prox_gap = if params.check_level_prox && lambda > params.lambda_min {
                let prox = self.prox_step(x_k, rho)?;
                let gap = sol
                    .x_tilde
                    .iter()
                    .zip(&prox.sol.x_tilde)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                Some(gap / (1.0 + dot(&sol.x_tilde, &sol.x_tilde).sqrt()))
            } else {
                None
            };
            return Ok(Some(Step {
                sol,
                rho,
                phase: Phase::Discovery,
                level_prox_gap,
            }));
        }
        unreachable!()
    }
}
