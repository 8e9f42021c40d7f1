use serde::{Deserialize, Serialize};

use super::{Cached, ParametricQp};
use crate::error::{Error, Result};
use crate::model::{dot, AgentOracle, Minorant, OracleError, QueryResult};
use crate::qp::QpProblem;
use crate::sparse::SparseMatrix;

/// Concave piecewise-linear utility `U(r) = min_t (a_t^T r + beta_t)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PiecewiseUtility {
    pub slopes: Vec<Vec<f64>>,
    pub offsets: Vec<f64>,
}

impl PiecewiseUtility {
    pub fn eval(&self, r: &[f64]) -> f64 {
        self.slopes
            .iter()
            .zip(&self.offsets)
            .map(|(a, b)| dot(a, r) + b)
            .fold(f64::INFINITY, f64::min)
    }
}

/// A group of participants sharing a resource budget.
///
/// `f(x) = -max { sum_j U_j(r_j) : r_j >= 0, sum_j r_j <= x }`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResourceAgent {
    pub resources: usize,
    pub utilities: Vec<PiecewiseUtility>,
    /// Total budget across all groups, the upper end of the public range.
    pub total_budget: Vec<f64>,
    #[serde(skip)]
    cache: Cached<ParametricQp>,
}

impl ResourceAgent {
    pub fn new(resources: usize, utilities: Vec<PiecewiseUtility>, total_budget: Vec<f64>) -> Result<Self> {
        let a = Self {
            resources,
            utilities,
            total_budget,
            cache: Cached::default(),
        };
        a.validate()?;
        Ok(a)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.resources;
        if self.total_budget.len() != n || self.total_budget.iter().any(|b| !(b.is_finite() && *b >= 0.0)) {
            return Err(Error::Config(format!("total budget must be {n} nonnegative numbers")));
        }
        for (j, u) in self.utilities.iter().enumerate() {
            if u.slopes.is_empty() || u.slopes.len() != u.offsets.len() {
                return Err(Error::Config(format!("utility {j} needs matching slopes and offsets")));
            }
            if u.slopes.iter().any(|a| a.len() != n || a.iter().any(|v| !(v.is_finite() && *v >= 0.0))) {
                return Err(Error::Config(format!("utility {j} must have {n} nonnegative slopes per piece")));
            }
            if u.offsets.iter().any(|v| !v.is_finite()) {
                return Err(Error::Config(format!("utility {j} has a non-finite offset")));
            }
        }
        Ok(())
    }

    pub fn parametric(&self) -> &ParametricQp {
        self.cache.get_or_init(|| {
            let n = self.resources;
            let np = self.utilities.len();
            let u0 = np * n;
            let mut base = QpProblem::new(u0 + np);
            for j in 0..np {
                base.q[u0 + j] = -1.0;
                base.lower[j * n..(j + 1) * n].iter_mut().for_each(|v| *v = 0.0);
            }
            for (j, u) in self.utilities.iter().enumerate() {
                for (a, beta) in u.slopes.iter().zip(&u.offsets) {
                    base.a_in.push_row(
                        a.iter()
                            .enumerate()
                            .map(|(k, v)| (j * n + k, -v))
                            .chain(std::iter::once((u0 + j, 1.0))),
                    );
                    base.b_in.push(*beta);
                }
            }
            let pieces = base.b_in.len();
            let mut b_in = SparseMatrix::zeros(pieces, n);
            for k in 0..n {
                base.a_in.push_row((0..np).map(|j| (j * n + k, 1.0)));
                base.b_in.push(0.0);
                b_in.push_row([(k, 1.0)]);
            }
            ParametricQp::new(base, SparseMatrix::zeros(0, n), b_in).expect("resource subproblem is well formed")
        })
    }
}

impl AgentOracle for ResourceAgent {
    fn dim(&self) -> usize {
        self.resources
    }

    fn query(&self, x: &[f64]) -> std::result::Result<QueryResult, OracleError> {
        if let Some(v) = x.iter().find(|v| **v < -1e-9) {
            return Err(OracleError(format!("negative budget {v}")));
        }
        let clipped: Vec<f64> = x.iter().map(|v| v.max(0.0)).collect();
        self.parametric().query(&clipped)
    }

    /// Minus the utility the group would get from the whole budget.
    fn initial_minorant(&self) -> Option<Minorant> {
        let best: f64 = self.utilities.iter().map(|u| u.eval(&self.total_budget)).sum();
        Some(Minorant::with_floor(self.dim(), -best))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn capped() -> ResourceAgent {
        let u = PiecewiseUtility {
            slopes: vec![vec![1.0], vec![0.0]],
            offsets: vec![0.0, 1.0],
        };
        ResourceAgent::new(1, vec![u], vec![3.0]).unwrap()
    }

    #[test]
    fn no_budget_gives_base_utility() {
        let u = PiecewiseUtility {
            slopes: vec![vec![1.0, 0.5], vec![0.2, 0.0]],
            offsets: vec![0.3, 0.7],
        };
        let a = ResourceAgent::new(2, vec![u.clone(), u], vec![1.0, 1.0]).unwrap();
        let r = a.query(&[0.0, 0.0]).unwrap();
        assert!((r.value + 0.6).abs() < 1e-7);
    }

    #[test]
    fn saturated_utility_has_zero_price() {
        let r = capped().query(&[2.0]).unwrap();
        assert!((r.value + 1.0).abs() < 1e-7);
        assert!(r.subgradient[0].abs() < 1e-6);
        let r = capped().query(&[0.5]).unwrap();
        assert!((r.value + 0.5).abs() < 1e-7);
        assert!((r.subgradient[0] + 1.0).abs() < 1e-6);
        assert_eq!(capped().initial_minorant().unwrap().floor(), -1.0);
    }
}
