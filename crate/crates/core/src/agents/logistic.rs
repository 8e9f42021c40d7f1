use serde::{Deserialize, Serialize};

use super::check_shape;
use crate::error::{Error, Result};
use crate::model::{dot, AgentOracle, Minorant, OracleError, QueryResult};

/// Logistic loss `sum_j log(1 + exp(-v_j u_j^T theta))` of one data location.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogisticAgent {
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<f64>,
}

/// `log(1 + exp(t))` without overflow.
fn softplus(t: f64) -> f64 {
    t.max(0.0) + (-t.abs()).exp().ln_1p()
}

fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

impl LogisticAgent {
    pub fn new(features: Vec<Vec<f64>>, labels: Vec<f64>) -> Result<Self> {
        let a = Self { features, labels };
        a.validate()?;
        Ok(a)
    }

    pub fn features_dim(&self) -> usize {
        self.features.first().map_or(0, Vec::len)
    }

    pub fn validate(&self) -> Result<()> {
        check_shape("features", &self.features, self.labels.len(), self.features_dim())?;
        if self.features_dim() == 0 {
            return Err(Error::Config("logistic agent needs at least one feature".into()));
        }
        if self.labels.iter().any(|v| *v != 1.0 && *v != -1.0) {
            return Err(Error::Config("labels must be -1 or +1".into()));
        }
        if self.features.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Config("features must be finite".into()));
        }
        Ok(())
    }
}

impl AgentOracle for LogisticAgent {
    fn dim(&self) -> usize {
        self.features_dim()
    }

    fn query(&self, theta: &[f64]) -> std::result::Result<QueryResult, OracleError> {
        if theta.len() != self.dim() {
            return Err(OracleError(format!("expected {} parameters, got {}", self.dim(), theta.len())));
        }
        let mut value = 0.0;
        let mut grad = vec![0.0; theta.len()];
        for (u, v) in self.features.iter().zip(&self.labels) {
            let t = -v * dot(u, theta);
            value += softplus(t);
            let w = -v * sigmoid(t);
            for (g, ui) in grad.iter_mut().zip(u) {
                *g += w * ui;
            }
        }
        Ok(QueryResult { value, subgradient: grad })
    }

    fn initial_minorant(&self) -> Option<Minorant> {
        Some(Minorant::with_floor(self.dim(), 0.0))
    }
}
