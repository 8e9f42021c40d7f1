//! Diagonal preconditioning.
//!
//! The solver works in `xbar = D^-1 x`. Agents keep seeing original
//! coordinates through [`ScaledOracle`], which maps queries forward and
//! subgradients back by the chain rule.

use crate::error::{check_dim, Error, Result};
use crate::model::{AgentOracle, BlockStructure, Minorant, OracleError, PolyhedralFunction, QueryResult};

#[derive(Clone, Debug, PartialEq)]
pub struct DiagonalScaling {
    d: Vec<f64>,
}

impl DiagonalScaling {
    pub fn new(d: Vec<f64>) -> Result<Self> {
        if let Some(v) = d.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
            return Err(Error::Config(format!("scaling entries must be positive and finite, got {v}")));
        }
        Ok(Self { d })
    }

    pub fn identity(n: usize) -> Self {
        Self { d: vec![1.0; n] }
    }

    pub fn diag(&self) -> &[f64] {
        &self.d
    }

    pub fn block<'a>(&'a self, blocks: &BlockStructure, i: usize) -> &'a [f64] {
        &self.d[blocks.range(i)]
    }

    /// `D^-1 x`
    pub fn to_scaled(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.d).map(|(v, d)| v / d).collect()
    }

    /// `D xbar`
    pub fn to_original(&self, xbar: &[f64]) -> Vec<f64> {
        xbar.iter().zip(&self.d).map(|(v, d)| v * d).collect()
    }

    /// Maps a scaled-space subgradient `D q` back to `q`.
    pub fn price_to_original(&self, qbar: &[f64]) -> Vec<f64> {
        self.to_scaled(qbar)
    }
}

/// `D = diag(u - l)`, so the scaled box has unit width. Components with an
/// infinite bound get unit scale.
pub fn scaling_from_bounds(lower: &[f64], upper: &[f64]) -> Result<DiagonalScaling> {
    check_dim("upper bounds", lower.len(), upper.len())?;
    let mut unbounded = 0;
    let mut d = Vec::with_capacity(lower.len());
    for (j, (l, u)) in lower.iter().zip(upper).enumerate() {
        if l >= u {
            return Err(Error::Config(format!(
                "cannot precondition component {j}: lower bound {l} is not below upper bound {u}"
            )));
        }
        let w = u - l;
        if w.is_finite() {
            d.push(w);
        } else {
            unbounded += 1;
            d.push(1.0);
        }
    }
    if unbounded > 0 {
        log::info!("{unbounded} components have infinite bounds and keep unit scaling");
    }
    DiagonalScaling::new(d)
}

/// `gbar(xbar) = g(D xbar)`. Auxiliary variables are left unscaled.
pub fn scale_structured(g: &PolyhedralFunction, scaling: &DiagonalScaling) -> Result<PolyhedralFunction> {
    check_dim("scaling", g.n_public, scaling.d.len())?;
    let mut full = scaling.d.clone();
    full.resize(g.set.dim(), 1.0);
    Ok(PolyhedralFunction {
        n_public: g.n_public,
        c: g.c.iter().zip(&full).map(|(c, d)| c * d).collect(),
        d: g.d,
        set: g.set.scaled(&full),
    })
}

/// Agent oracle seen through a diagonal change of variables.
pub struct ScaledOracle<A> {
    inner: A,
    d: Vec<f64>,
}

pub fn wrap_oracle<A: AgentOracle>(agent: A, d: &[f64]) -> Result<ScaledOracle<A>> {
    check_dim("block scaling", agent.dim(), d.len())?;
    Ok(ScaledOracle { inner: agent, d: d.to_vec() })
}

impl<A> ScaledOracle<A> {
    pub fn into_inner(self) -> A {
        self.inner
    }
}

impl<A: AgentOracle> AgentOracle for ScaledOracle<A> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn query(&self, xbar: &[f64]) -> std::result::Result<QueryResult, OracleError> {
        let x: Vec<f64> = xbar.iter().zip(&self.d).map(|(v, d)| v * d).collect();
        let mut r = self.inner.query(&x)?;
        for (q, d) in r.subgradient.iter_mut().zip(&self.d) {
            *q *= d;
        }
        Ok(r)
    }

    fn initial_minorant(&self) -> Option<Minorant> {
        self.inner.initial_minorant().map(|m| m.scaled(&self.d))
    }
}
