//! Built-in agent oracles and seeded instance generators.

mod flow;
pub mod generators;
mod logistic;
pub mod parametric;
mod resource;
mod transshipment;

use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::model::{AgentOracle, Minorant, OracleError, QueryResult};

pub use flow::FlowAgent;
pub use logistic::LogisticAgent;
pub use parametric::ParametricQp;
pub use resource::ResourceAgent;
pub use transshipment::{TransshipmentAgent, DEFAULT_SLACK_PENALTY};

/// Lazily built derived data that is ignored by comparisons and serialization.
#[derive(Clone, Debug)]
pub(crate) struct Cached<T>(OnceLock<T>);

impl<T> Default for Cached<T> {
    fn default() -> Self {
        Self(OnceLock::new())
    }
}

impl<T> Cached<T> {
    pub(crate) fn get_or_init(&self, f: impl FnOnce() -> T) -> &T {
        self.0.get_or_init(f)
    }
}

impl<T> PartialEq for Cached<T> {
    fn eq(&self, _: &Self) -> bool {
        true
    }
}

/// Any of the built-in agents, tagged by kind in instance files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BuiltinAgent {
    Transshipment(TransshipmentAgent),
    Flow(FlowAgent),
    Resource(ResourceAgent),
    Logistic(LogisticAgent),
}

impl BuiltinAgent {
    fn inner(&self) -> &dyn AgentOracle {
        match self {
            Self::Transshipment(a) => a,
            Self::Flow(a) => a,
            Self::Resource(a) => a,
            Self::Logistic(a) => a,
        }
    }

    /// The agent's subproblem, for agents defined by a QP.
    pub fn parametric(&self) -> Option<&ParametricQp> {
        match self {
            Self::Transshipment(a) => Some(a.parametric()),
            Self::Flow(a) => Some(a.parametric()),
            Self::Resource(a) => Some(a.parametric()),
            Self::Logistic(_) => None,
        }
    }

    pub fn validate(&self) -> crate::Result<()> {
        match self {
            Self::Transshipment(a) => a.validate(),
            Self::Flow(a) => a.validate(),
            Self::Resource(a) => a.validate(),
            Self::Logistic(a) => a.validate(),
        }
    }
}

impl AgentOracle for BuiltinAgent {
    fn dim(&self) -> usize {
        self.inner().dim()
    }

    fn query(&self, x: &[f64]) -> Result<QueryResult, OracleError> {
        self.inner().query(x)
    }

    fn initial_minorant(&self) -> Option<Minorant> {
        self.inner().initial_minorant()
    }
}

/// Checks that a dense matrix is rectangular with the given shape.
pub(crate) fn check_shape(name: &str, m: &[Vec<f64>], rows: usize, cols: usize) -> crate::Result<()> {
    if m.len() != rows || m.iter().any(|r| r.len() != cols) {
        return Err(crate::Error::Config(format!("{name} must be {rows}x{cols}")));
    }
    Ok(())
}
