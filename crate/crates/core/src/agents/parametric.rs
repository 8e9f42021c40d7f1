//! Agents defined by partial minimization of a QP.
//!
//! `f(x) = min_z { F(z) : A_eq z = b_eq + B_eq x, A_in z <= b_in + B_in x, l <= z <= u }`
//! with a subgradient read off the constraint multipliers,
//! `q = -(B_eq^T y_eq + B_in^T y_in)`.

use crate::error::{check_dim, Result};
use crate::model::{OracleError, QueryResult};
use crate::qp::{qp_solve, QpProblem, QpStatus};
use crate::sparse::SparseMatrix;

/// Solver tolerance used for agent subproblems.
pub const AGENT_QP_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub struct ParametricQp {
    pub n_param: usize,
    /// Subproblem in the private variable `z`; its right-hand sides are the
    /// values at `x = 0`.
    pub base: QpProblem,
    pub b_eq_param: SparseMatrix,
    pub b_in_param: SparseMatrix,
}

impl ParametricQp {
    pub fn new(base: QpProblem, b_eq_param: SparseMatrix, b_in_param: SparseMatrix) -> Result<Self> {
        base.validate()?;
        check_dim("parameter matrix rows (eq)", base.b_eq.len(), b_eq_param.nrows())?;
        check_dim("parameter matrix rows (in)", base.b_in.len(), b_in_param.nrows())?;
        check_dim("parameter matrix columns", b_eq_param.ncols(), b_in_param.ncols())?;
        Ok(Self {
            n_param: b_eq_param.ncols(),
            base,
            b_eq_param,
            b_in_param,
        })
    }

    /// Subproblem with the parameter fixed at `x`.
    pub fn instantiate(&self, x: &[f64]) -> QpProblem {
        let mut qp = self.base.clone();
        for (b, v) in qp.b_eq.iter_mut().zip(self.b_eq_param.mul_vec(x)) {
            *b += v;
        }
        for (b, v) in qp.b_in.iter_mut().zip(self.b_in_param.mul_vec(x)) {
            *b += v;
        }
        qp
    }

    pub fn query(&self, x: &[f64]) -> std::result::Result<QueryResult, OracleError> {
        if x.len() != self.n_param {
            return Err(OracleError(format!("expected {} parameters, got {}", self.n_param, x.len())));
        }
        let qp = self.instantiate(x);
        let sol = qp_solve(&qp, AGENT_QP_TOL).map_err(|e| OracleError(e.to_string()))?;
        if sol.status != QpStatus::Optimal {
            return Err(OracleError(format!(
                "subproblem ended with {:?} after {} iterations (residuals {:?})",
                sol.status, sol.iterations, sol.residuals
            )));
        }
        let mut q = self.b_eq_param.transpose_mul(&sol.y_eq);
        self.b_in_param.add_transpose_mul(&sol.y_in, &mut q);
        q.iter_mut().for_each(|v| *v = -*v);
        Ok(QueryResult {
            value: sol.objective,
            subgradient: q,
        })
    }

    /// `f(x) = min_xt { ftilde(xt) + lambda ||xt - x||_1 }`, which has full
    /// domain. Implemented by replacing `x` with `x + r_plus - r_minus`.
    pub fn slack_wrap(&self, lambda: f64) -> ParametricQp {
        let nz = self.base.num_vars();
        let np = self.n_param;
        let total = nz + 2 * np;
        let mut base = QpProblem::new(total);
        base.p = self.base.p.widen(2 * np);
        base.p.append_rows(&SparseMatrix::zeros(2 * np, total));
        base.q[..nz].copy_from_slice(&self.base.q);
        base.q[nz..].iter_mut().for_each(|v| *v = lambda);
        base.lower[..nz].copy_from_slice(&self.base.lower);
        base.upper[..nz].copy_from_slice(&self.base.upper);
        base.lower[nz..].iter_mut().for_each(|v| *v = 0.0);

        let with_slack = |a: &SparseMatrix, b: &SparseMatrix| {
            let mut out = SparseMatrix::empty(total);
            for (ra, rb) in a.rows().zip(b.rows()) {
                out.push_row(
                    ra.iter()
                        .copied()
                        .chain(rb.iter().map(|&(j, v)| (nz + j, -v)))
                        .chain(rb.iter().map(|&(j, v)| (nz + np + j, v))),
                );
            }
            out
        };
        base.a_eq = with_slack(&self.base.a_eq, &self.b_eq_param);
        base.b_eq = self.base.b_eq.clone();
        base.a_in = with_slack(&self.base.a_in, &self.b_in_param);
        base.b_in = self.base.b_in.clone();
        ParametricQp {
            n_param: np,
            base,
            b_eq_param: self.b_eq_param.clone(),
            b_in_param: self.b_in_param.clone(),
        }
    }
}
