use serde::{Deserialize, Serialize};

use super::{check_shape, Cached, ParametricQp};
use crate::error::{Error, Result};
use crate::model::{AgentOracle, Minorant, OracleError, QueryResult};
use crate::qp::QpProblem;
use crate::sparse::SparseMatrix;

/// Single-commodity flow with linear utility.
///
/// `f(x) = min { -b d : A z + d (e_r - e_s) = 0, 0 <= z <= x, d >= 0 }`, where
/// `x` is the edge capacity reserved for this commodity.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowAgent {
    /// Node-edge incidence, `+1` at the head and `-1` at the tail of each edge.
    pub incidence: Vec<Vec<f64>>,
    pub source: usize,
    pub sink: usize,
    pub utility: f64,
    /// Total edge capacities, the upper end of the public range.
    pub capacity: Vec<f64>,
    #[serde(skip)]
    cache: Cached<ParametricQp>,
}

impl FlowAgent {
    pub fn new(incidence: Vec<Vec<f64>>, source: usize, sink: usize, utility: f64, capacity: Vec<f64>) -> Result<Self> {
        let a = Self {
            incidence,
            source,
            sink,
            utility,
            capacity,
            cache: Cached::default(),
        };
        a.validate()?;
        Ok(a)
    }

    pub fn nodes(&self) -> usize {
        self.incidence.len()
    }

    pub fn edges(&self) -> usize {
        self.capacity.len()
    }

    pub fn validate(&self) -> Result<()> {
        let (p, q) = (self.nodes(), self.edges());
        check_shape("incidence", &self.incidence, p, q)?;
        for e in 0..q {
            let col: Vec<f64> = self.incidence.iter().map(|r| r[e]).collect();
            let heads = col.iter().filter(|v| **v == 1.0).count();
            let tails = col.iter().filter(|v| **v == -1.0).count();
            let zeros = col.iter().filter(|v| **v == 0.0).count();
            if heads != 1 || tails != 1 || zeros != p - 2 {
                return Err(Error::Config(format!("incidence column {e} is not a directed edge")));
            }
        }
        if self.source >= p || self.sink >= p || self.source == self.sink {
            return Err(Error::Config("source and sink must be distinct nodes".into()));
        }
        if !(self.utility >= 0.0 && self.utility.is_finite()) {
            return Err(Error::Config("utility slope must be nonnegative".into()));
        }
        if self.capacity.iter().any(|c| !(c.is_finite() && *c >= 0.0)) {
            return Err(Error::Config("capacities must be finite and nonnegative".into()));
        }
        Ok(())
    }

    pub fn parametric(&self) -> &ParametricQp {
        self.cache.get_or_init(|| {
            let (p, q) = (self.nodes(), self.edges());
            let d = q;
            let mut base = QpProblem::new(q + 1);
            base.q[d] = -self.utility;
            base.lower.iter_mut().for_each(|v| *v = 0.0);
            // rows of an incidence matrix sum to zero, so the last one is dropped
            for (node, row) in self.incidence.iter().enumerate().take(p - 1) {
                let inject = f64::from(u8::from(node == self.source)) - f64::from(u8::from(node == self.sink));
                base.a_eq.push_row(
                    row.iter()
                        .enumerate()
                        .filter(|(_, v)| **v != 0.0)
                        .map(|(e, v)| (e, *v))
                        .chain(std::iter::once((d, inject))),
                );
                base.b_eq.push(0.0);
            }
            for e in 0..q {
                base.a_in.push_row([(e, 1.0)]);
                base.b_in.push(0.0);
            }
            ParametricQp::new(base, SparseMatrix::zeros(p - 1, q), SparseMatrix::identity(q))
                .expect("flow subproblem is well formed")
        })
    }
}

impl AgentOracle for FlowAgent {
    fn dim(&self) -> usize {
        self.edges()
    }

    fn query(&self, x: &[f64]) -> std::result::Result<QueryResult, OracleError> {
        if let Some(v) = x.iter().find(|v| **v < -1e-9) {
            return Err(OracleError(format!("negative capacity {v}")));
        }
        let clipped: Vec<f64> = x.iter().map(|v| v.max(0.0)).collect();
        self.parametric().query(&clipped)
    }

    /// The flow never exceeds the total capacity leaving the source.
    fn initial_minorant(&self) -> Option<Minorant> {
        let out: f64 = (0..self.edges())
            .filter(|&e| self.incidence[self.source][e] == -1.0)
            .map(|e| self.capacity[e])
            .sum();
        Some(Minorant::with_floor(self.dim(), -self.utility * out))
    }
}
