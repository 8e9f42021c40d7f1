use serde::{Deserialize, Serialize};

use super::{check_shape, Cached, ParametricQp};
use crate::error::{Error, Result};
use crate::model::{AgentOracle, Minorant, OracleError, Polyhedron, QueryResult};
use crate::qp::QpProblem;
use crate::sparse::SparseMatrix;

/// Slack penalty used by the generators; dominates the source and sink prices.
pub const DEFAULT_SLACK_PENALTY: f64 = 1e3;

/// Trans-shipment component with `q` inputs `a` and `p` outputs `b`.
///
/// `f(a, b)` is the least cost of edge flows `X` (`p x q`, `X[j][k]` from
/// input `k` to output `j`) with column sums `a` and row sums `b`, where edge
/// `(j, k)` costs `D X + E X^2` and carries at most `C`. Deviations from
/// `(a, b)` are allowed at `slack_penalty` per unit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransshipmentAgent {
    pub linear_cost: Vec<Vec<f64>>,
    pub quadratic_cost: Vec<Vec<f64>>,
    pub capacity: Vec<Vec<f64>>,
    pub slack_penalty: f64,
    #[serde(skip)]
    cache: Cached<ParametricQp>,
}

impl TransshipmentAgent {
    pub fn new(
        linear_cost: Vec<Vec<f64>>,
        quadratic_cost: Vec<Vec<f64>>,
        capacity: Vec<Vec<f64>>,
        slack_penalty: f64,
    ) -> Result<Self> {
        let a = Self {
            linear_cost,
            quadratic_cost,
            capacity,
            slack_penalty,
            cache: Cached::default(),
        };
        a.validate()?;
        Ok(a)
    }

    /// Number of outputs.
    pub fn p(&self) -> usize {
        self.capacity.len()
    }

    /// Number of inputs.
    pub fn q(&self) -> usize {
        self.capacity.first().map_or(0, Vec::len)
    }

    pub fn validate(&self) -> Result<()> {
        let (p, q) = (self.p(), self.q());
        if p == 0 || q == 0 {
            return Err(Error::Config("trans-shipment component needs inputs and outputs".into()));
        }
        check_shape("linear_cost", &self.linear_cost, p, q)?;
        check_shape("quadratic_cost", &self.quadratic_cost, p, q)?;
        check_shape("capacity", &self.capacity, p, q)?;
        let all = [&self.linear_cost, &self.quadratic_cost, &self.capacity];
        if all.iter().flat_map(|m| m.iter().flatten()).any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Config("trans-shipment data must be finite and nonnegative".into()));
        }
        if !(self.slack_penalty > 0.0 && self.slack_penalty.is_finite()) {
            return Err(Error::Config("slack penalty must be positive".into()));
        }
        Ok(())
    }

    pub fn parametric(&self) -> &ParametricQp {
        self.cache.get_or_init(|| {
            let (p, q) = (self.p(), self.q());
            let nz = p * q;
            let mut base = QpProblem::new(nz);
            let mut diag = Vec::with_capacity(nz);
            for j in 0..p {
                for k in 0..q {
                    let idx = j * q + k;
                    diag.push((idx, idx, 2.0 * self.quadratic_cost[j][k]));
                    base.q[idx] = self.linear_cost[j][k];
                    base.lower[idx] = 0.0;
                    base.upper[idx] = self.capacity[j][k];
                }
            }
            base.p = SparseMatrix::from_triplets(nz, nz, &diag);
            for k in 0..q {
                base.a_eq.push_row((0..p).map(|j| (j * q + k, 1.0)));
                base.b_eq.push(0.0);
            }
            for j in 0..p {
                base.a_eq.push_row((0..q).map(|k| (j * q + k, 1.0)));
                base.b_eq.push(0.0);
            }
            let inner = ParametricQp::new(base, SparseMatrix::identity(p + q), SparseMatrix::zeros(0, p + q))
                .expect("trans-shipment subproblem is well formed");
            inner.slack_wrap(self.slack_penalty)
        })
    }
}

impl AgentOracle for TransshipmentAgent {
    fn dim(&self) -> usize {
        self.p() + self.q()
    }

    fn query(&self, x: &[f64]) -> std::result::Result<QueryResult, OracleError> {
        self.parametric().query(x)
    }

    /// Zero on the flow-balance hyperplane `1^T a = 1^T b`.
    fn initial_minorant(&self) -> Option<Minorant> {
        let q = self.q();
        let mut dom = Polyhedron::free(self.dim());
        dom.add_equality((0..self.dim()).map(|j| (j, if j < q { 1.0 } else { -1.0 })), 0.0);
        Some(Minorant::with_floor(self.dim(), 0.0).with_domain(dom))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(lambda: f64) -> TransshipmentAgent {
        TransshipmentAgent::new(vec![vec![0.5]], vec![vec![1.0]], vec![vec![2.0]], lambda).unwrap()
    }

    #[test]
    fn zero_flow_costs_nothing() {
        let r = tiny(1e3).query(&[0.0, 0.0]).unwrap();
        assert!(r.value.abs() < 1e-7);
    }

    #[test]
    fn unbalanced_point_pays_slack() {
        // min 0.5 X + X^2 + 10 (|X - 1| + |X|) over 0 <= X <= 2 is 10 at X = 0
        let r = tiny(10.0).query(&[1.0, 0.0]).unwrap();
        assert!((r.value - 10.0).abs() < 1e-6);
    }

    #[test]
    fn balanced_point_matches_edge_cost() {
        let r = tiny(1e3).query(&[1.5, 1.5]).unwrap();
        assert!((r.value - (0.75 + 2.25)).abs() < 1e-6);
        // the two coupling rows share the marginal cost 0.5 + 2 * 1.5
        assert!((r.subgradient[0] + r.subgradient[1] - 3.5).abs() < 1e-5);
    }

    #[test]
    fn rejects_negative_data() {
        assert!(TransshipmentAgent::new(vec![vec![-1.0]], vec![vec![1.0]], vec![vec![1.0]], 1.0).is_err());
    }
}
