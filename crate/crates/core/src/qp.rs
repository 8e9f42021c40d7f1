//! Convex QP/LP solves with dual recovery.
//!
//! Problems are stated as
//!
//! ```text
//! minimize    1/2 z^T P z + q^T z
//! subject to  A_eq z = b_eq,  A_in z <= b_in,  lower <= z <= upper
//! ```
//!
//! and handed to a primal-dual interior-point solver (Clarabel). Duals follow
//! the sign convention of the stationarity condition
//!
//! ```text
//! P z + q + A_eq^T y_eq + A_in^T y_in - y_lower + y_upper = 0
//! ```
//!
//! with `y_in`, `y_lower`, `y_upper` nonnegative.

use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettings, DefaultSolver, IPSolver, SolverStatus, SupportedConeT,
};

use crate::error::{check_dim, Error, Result};
use crate::model::inf_norm;
use crate::sparse::SparseMatrix;

/// Default tolerance for master problems and agent subproblems.
pub const DEFAULT_TOL: f64 = 1e-8;

/// Interior-point iteration limit.
pub const MAX_ITER: u32 = 200;

#[derive(Clone, Debug, PartialEq)]
pub struct QpProblem {
    /// Symmetric PSD matrix, stored in full; it is symmetrized on solve.
    pub p: SparseMatrix,
    pub q: Vec<f64>,
    pub a_eq: SparseMatrix,
    pub b_eq: Vec<f64>,
    pub a_in: SparseMatrix,
    pub b_in: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl QpProblem {
    /// Unconstrained problem with zero objective in `n` variables.
    pub fn new(n: usize) -> Self {
        Self {
            p: SparseMatrix::zeros(n, n),
            q: vec![0.0; n],
            a_eq: SparseMatrix::empty(n),
            b_eq: Vec::new(),
            a_in: SparseMatrix::empty(n),
            b_in: Vec::new(),
            lower: vec![f64::NEG_INFINITY; n],
            upper: vec![f64::INFINITY; n],
        }
    }

    pub fn num_vars(&self) -> usize {
        self.q.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.num_vars();
        check_dim("QP matrix rows", n, self.p.nrows())?;
        check_dim("QP matrix columns", n, self.p.ncols())?;
        check_dim("QP equality columns", n, self.a_eq.ncols())?;
        check_dim("QP inequality columns", n, self.a_in.ncols())?;
        check_dim("QP equality rhs", self.a_eq.nrows(), self.b_eq.len())?;
        check_dim("QP inequality rhs", self.a_in.nrows(), self.b_in.len())?;
        check_dim("QP lower bounds", n, self.lower.len())?;
        check_dim("QP upper bounds", n, self.upper.len())?;
        let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
        if !finite(&self.q) || !finite(&self.b_eq) || !finite(&self.b_in) {
            return Err(Error::Config("QP data contains non-finite values".into()));
        }
        if self.lower.iter().chain(&self.upper).any(|x| x.is_nan()) {
            return Err(Error::Config("QP bounds contain NaN".into()));
        }
        Ok(())
    }

    pub fn objective(&self, z: &[f64]) -> f64 {
        let pz = self.p.mul_vec(z);
        0.5 * dot(z, &pz) + dot(&self.q, z)
    }

    /// Magnitude of the problem data, used to scale tolerances.
    pub fn data_scale(&self) -> f64 {
        let finite_bounds = self
            .lower
            .iter()
            .chain(&self.upper)
            .filter(|x| x.is_finite())
            .fold(0.0_f64, |m, x| m.max(x.abs()));
        [
            inf_norm(&self.q),
            inf_norm(&self.b_eq),
            inf_norm(&self.b_in),
            finite_bounds,
            self.p.max_abs(),
            self.a_eq.max_abs(),
            self.a_in.max_abs(),
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum QpStatus {
    Optimal,
    Infeasible,
    Unbounded,
    /// Iteration limit or loss of progress before convergence.
    MaxIter,
}

#[derive(Clone, Debug)]
pub struct QpSolution {
    pub status: QpStatus,
    pub z: Vec<f64>,
    pub y_eq: Vec<f64>,
    pub y_in: Vec<f64>,
    pub y_lower: Vec<f64>,
    pub y_upper: Vec<f64>,
    pub objective: f64,
    pub residuals: KktResiduals,
    pub iterations: u32,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct KktResiduals {
    pub primal: f64,
    pub dual: f64,
    pub complementarity: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        self.primal.max(self.dual).max(self.complementarity)
    }
}

enum RowKind {
    Eq(usize),
    In(usize),
    Fixed(usize),
    Lower(usize),
    Upper(usize),
}

/// Solves a convex QP.
///
/// `P` must be positive semidefinite; only symmetry is enforced. Failure to
/// converge is reported through [`QpStatus`], never as an error.
pub fn qp_solve(problem: &QpProblem, tol: f64) -> Result<QpSolution> {
    problem.validate()?;
    let n = problem.num_vars();
    let (m_eq, m_in) = (problem.b_eq.len(), problem.b_in.len());

    if let Some(j) = (0..n).find(|&j| problem.lower[j] > problem.upper[j]) {
        log::debug!("QP box empty on variable {j}");
        return Ok(trivial_solution(problem, QpStatus::Infeasible));
    }

    // Upper triangle of (P + P^T) / 2.
    let (mut pi, mut pj, mut pv) = (Vec::new(), Vec::new(), Vec::new());
    for (r, row) in problem.p.rows().enumerate() {
        for &(c, v) in row {
            let (i, j) = (r.min(c), r.max(c));
            pi.push(i);
            pj.push(j);
            pv.push(if i == j { v } else { 0.5 * v });
        }
    }
    let p_csc = CscMatrix::new_from_triplets(n, n, pi, pj, pv);

    let (mut ai, mut aj, mut av) = (Vec::new(), Vec::new(), Vec::new());
    let mut b = Vec::new();
    let mut kinds = Vec::new();
    let mut push_row = |entries: &[(usize, f64)], rhs: f64, kind: RowKind, b: &mut Vec<f64>| {
        let r = b.len();
        for &(c, v) in entries {
            ai.push(r);
            aj.push(c);
            av.push(v);
        }
        b.push(rhs);
        kinds.push(kind);
    };
    for i in 0..m_eq {
        push_row(problem.a_eq.row(i), problem.b_eq[i], RowKind::Eq(i), &mut b);
    }
    for j in 0..n {
        let (l, u) = (problem.lower[j], problem.upper[j]);
        if l.is_finite() && l == u {
            push_row(&[(j, 1.0)], l, RowKind::Fixed(j), &mut b);
        }
    }
    let zero_rows = b.len();
    for i in 0..m_in {
        push_row(problem.a_in.row(i), problem.b_in[i], RowKind::In(i), &mut b);
    }
    for j in 0..n {
        let (l, u) = (problem.lower[j], problem.upper[j]);
        if l.is_finite() && l == u {
            continue;
        }
        if l.is_finite() {
            push_row(&[(j, -1.0)], -l, RowKind::Lower(j), &mut b);
        }
        if u.is_finite() {
            push_row(&[(j, 1.0)], u, RowKind::Upper(j), &mut b);
        }
    }
    let m = b.len();
    let a_csc = CscMatrix::new_from_triplets(m, n, ai, aj, av);

    let mut cones = Vec::new();
    if zero_rows > 0 {
        cones.push(SupportedConeT::ZeroConeT(zero_rows));
    }
    if m > zero_rows {
        cones.push(SupportedConeT::NonnegativeConeT(m - zero_rows));
    }

    let settings = DefaultSettings {
        verbose: false,
        max_iter: MAX_ITER,
        // complementarity converges slowest near weakly active constraints
        tol_gap_abs: 1e-2 * tol,
        tol_gap_rel: 1e-2 * tol,
        tol_feas: tol,
        tol_ktratio: tol.sqrt().min(1e-6),
        presolve_enable: false,
        ..DefaultSettings::default()
    };
    let mut solver = DefaultSolver::new(&p_csc, &problem.q, &a_csc, &b, &cones, settings)
        .map_err(|e| Error::Config(format!("QP setup failed: {e:?}")))?;
    solver.solve();
    let sol = &solver.solution;

    let mut out = QpSolution {
        status: QpStatus::MaxIter,
        z: sol.x.clone(),
        y_eq: vec![0.0; m_eq],
        y_in: vec![0.0; m_in],
        y_lower: vec![0.0; n],
        y_upper: vec![0.0; n],
        objective: f64::NAN,
        residuals: KktResiduals::default(),
        iterations: sol.iterations,
    };
    for (kind, &y) in kinds.iter().zip(&sol.z) {
        match *kind {
            RowKind::Eq(i) => out.y_eq[i] = y,
            RowKind::In(i) => out.y_in[i] = y,
            RowKind::Fixed(j) => {
                out.y_upper[j] = y.max(0.0);
                out.y_lower[j] = (-y).max(0.0);
            }
            RowKind::Lower(j) => out.y_lower[j] = y,
            RowKind::Upper(j) => out.y_upper[j] = y,
        }
    }
    out.objective = problem.objective(&out.z);
    out.residuals = kkt_residuals(problem, &out);

    out.status = match sol.status {
        SolverStatus::Solved => QpStatus::Optimal,
        SolverStatus::AlmostSolved => {
            let limit = tol.sqrt() * (1.0 + problem.data_scale());
            if out.residuals.max() <= limit {
                QpStatus::Optimal
            } else {
                QpStatus::MaxIter
            }
        }
        SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => {
            QpStatus::Infeasible
        }
        SolverStatus::DualInfeasible | SolverStatus::AlmostDualInfeasible => QpStatus::Unbounded,
        other => {
            log::debug!("QP solver stopped with {other:?}");
            QpStatus::MaxIter
        }
    };
    Ok(out)
}

fn trivial_solution(problem: &QpProblem, status: QpStatus) -> QpSolution {
    let n = problem.num_vars();
    QpSolution {
        status,
        z: vec![0.0; n],
        y_eq: vec![0.0; problem.b_eq.len()],
        y_in: vec![0.0; problem.b_in.len()],
        y_lower: vec![0.0; n],
        y_upper: vec![0.0; n],
        objective: f64::NAN,
        residuals: KktResiduals::default(),
        iterations: 0,
    }
}

/// Primal infeasibility, stationarity, and complementarity residuals (inf-norms).
///
/// Negative multipliers on one-sided constraints count toward the dual residual.
pub fn kkt_residuals(problem: &QpProblem, s: &QpSolution) -> KktResiduals {
    let z = &s.z;
    let mut primal = 0.0_f64;
    for (i, b) in problem.b_eq.iter().enumerate() {
        primal = primal.max((problem.a_eq.row_dot(i, z) - b).abs());
    }
    let mut slack_in = Vec::with_capacity(problem.b_in.len());
    for (i, b) in problem.b_in.iter().enumerate() {
        let slack = b - problem.a_in.row_dot(i, z);
        primal = primal.max(-slack);
        slack_in.push(slack);
    }
    for ((zj, l), u) in z.iter().zip(&problem.lower).zip(&problem.upper) {
        primal = primal.max(l - zj).max(zj - u);
    }

    let mut grad = problem.p.mul_vec(z);
    for (g, q) in grad.iter_mut().zip(&problem.q) {
        *g += q;
    }
    problem.a_eq.add_transpose_mul(&s.y_eq, &mut grad);
    problem.a_in.add_transpose_mul(&s.y_in, &mut grad);
    for (j, g) in grad.iter_mut().enumerate() {
        *g += s.y_upper[j] - s.y_lower[j];
    }
    let sign_violation = s
        .y_in
        .iter()
        .chain(&s.y_lower)
        .chain(&s.y_upper)
        .fold(0.0_f64, |m, y| m.max(-y));
    let dual = inf_norm(&grad).max(sign_violation);

    let mut comp = 0.0_f64;
    for (y, slack) in s.y_in.iter().zip(&slack_in) {
        comp = comp.max((y * slack).abs());
    }
    for (j, zj) in z.iter().enumerate() {
        let (l, u) = (problem.lower[j], problem.upper[j]);
        if l.is_finite() {
            comp = comp.max((s.y_lower[j] * (zj - l)).abs());
        }
        if u.is_finite() {
            comp = comp.max((s.y_upper[j] * (u - zj)).abs());
        }
    }
    KktResiduals {
        primal,
        dual,
        complementarity: comp,
    }
}

/// Phase-one feasibility test for a polyhedron.
///
/// Minimizes the total elastic violation of the equality and inequality rows
/// over the box; feasible iff the minimum is at most `1e-7`.
pub fn lp_feasible(
    a_eq: &SparseMatrix,
    b_eq: &[f64],
    a_in: &SparseMatrix,
    b_in: &[f64],
    lower: &[f64],
    upper: &[f64],
) -> Result<bool> {
    let n = lower.len();
    check_dim("feasibility upper bounds", n, upper.len())?;
    if lower.iter().zip(upper).any(|(l, u)| l > u) {
        return Ok(false);
    }
    let (m_eq, m_in) = (b_eq.len(), b_in.len());
    if m_eq + m_in == 0 {
        return Ok(true);
    }
    let total = n + 2 * m_eq + m_in;
    let mut lp = QpProblem::new(total);
    for j in n..total {
        lp.q[j] = 1.0;
        lp.lower[j] = 0.0;
    }
    lp.lower[..n].copy_from_slice(lower);
    lp.upper[..n].copy_from_slice(upper);
    for i in 0..m_eq {
        let mut row = a_eq.row(i).to_vec();
        row.push((n + i, 1.0));
        row.push((n + m_eq + i, -1.0));
        lp.a_eq.push_row(row);
        lp.b_eq.push(b_eq[i]);
    }
    for i in 0..m_in {
        let mut row = a_in.row(i).to_vec();
        row.push((n + 2 * m_eq + i, -1.0));
        lp.a_in.push_row(row);
        lp.b_in.push(b_in[i]);
    }
    let sol = qp_solve(&lp, 1e-10)?;
    match sol.status {
        QpStatus::Optimal => Ok(sol.objective <= 1e-7),
        QpStatus::Infeasible => Ok(false),
        status => Err(Error::Master(format!("phase-one LP ended with {status:?}"))),
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
