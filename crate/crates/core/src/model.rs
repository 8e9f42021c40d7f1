//! Problem data for oracle-structured optimization.
//!
//! The objective is `h(x) = sum_i f_i(x_i) + g(x)`. Each `f_i` is reached only
//! through an [`AgentOracle`]; `g` is a [`PolyhedralFunction`] known in full.
//! The solver keeps one [`Minorant`] per agent: a max of affine cuts with an
//! optional constant floor and an optional known polyhedral domain.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::qp::{qp_solve, QpProblem, QpStatus};
use crate::sparse::SparseMatrix;

/// Relative tolerance on constraint residuals when testing membership.
pub const FEAS_TOL: f64 = 1e-9;

/// Sizes of the agent blocks of the public variable.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BlockStructure {
    sizes: Vec<usize>,
    offsets: Vec<usize>,
}

impl BlockStructure {
    pub fn new(sizes: Vec<usize>) -> Result<Self> {
        if sizes.is_empty() {
            return Err(Error::Config("at least one block is required".into()));
        }
        if let Some(i) = sizes.iter().position(|&s| s == 0) {
            return Err(Error::Config(format!("block {i} has size zero")));
        }
        let mut offsets = Vec::with_capacity(sizes.len() + 1);
        let mut acc = 0;
        offsets.push(0);
        for &s in &sizes {
            acc += s;
            offsets.push(acc);
        }
        Ok(Self { sizes, offsets })
    }

    pub fn num_blocks(&self) -> usize {
        self.sizes.len()
    }

    pub fn total(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    pub fn size(&self, i: usize) -> usize {
        self.sizes[i]
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn range(&self, i: usize) -> std::ops::Range<usize> {
        self.offsets[i]..self.offsets[i + 1]
    }

    pub fn block<'a>(&self, x: &'a [f64], i: usize) -> &'a [f64] {
        &x[self.range(i)]
    }
}

/// Where a cut came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CutOrigin {
    /// Oracle answer obtained at the given iteration.
    Oracle { iteration: usize },
    /// Aggregate linearization installed by memory compression.
    Aggregate,
}

/// Affine lower bound `base_value + subgradient^T (x - base_point)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cut {
    pub base_value: f64,
    pub base_point: Vec<f64>,
    pub subgradient: Vec<f64>,
    pub origin: CutOrigin,
}

impl Cut {
    pub fn new(base_value: f64, base_point: Vec<f64>, subgradient: Vec<f64>, origin: CutOrigin) -> Self {
        debug_assert_eq!(base_point.len(), subgradient.len());
        Self {
            base_value,
            base_point,
            subgradient,
            origin,
        }
    }

    pub fn dim(&self) -> usize {
        self.base_point.len()
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.base_value
            + self
                .subgradient
                .iter()
                .zip(x.iter().zip(&self.base_point))
                .map(|(q, (xi, pi))| q * (xi - pi))
                .sum::<f64>()
    }

    /// Constant term of the cut written as `q^T x + c`.
    pub fn intercept(&self) -> f64 {
        self.base_value - dot(&self.subgradient, &self.base_point)
    }

    fn same_affine(&self, other: &Cut, tol: f64) -> bool {
        let slope_close = self
            .subgradient
            .iter()
            .zip(&other.subgradient)
            .all(|(a, b)| (a - b).abs() <= tol * (1.0 + a.abs()));
        let (ca, cb) = (self.intercept(), other.intercept());
        slope_close && (ca - cb).abs() <= tol * (1.0 + ca.abs())
    }

    /// The cut expressed in scaled coordinates `x = D xbar`.
    pub fn scaled(&self, d: &[f64]) -> Cut {
        Cut {
            base_value: self.base_value,
            base_point: self.base_point.iter().zip(d).map(|(p, di)| p / di).collect(),
            subgradient: self.subgradient.iter().zip(d).map(|(q, di)| q * di).collect(),
            origin: self.origin,
        }
    }
}

/// Polyhedral set `{x : A_eq x = b_eq, A_in x <= b_in, lower <= x <= upper}`.
#[derive(Clone, Debug, PartialEq)]
pub struct Polyhedron {
    pub a_eq: SparseMatrix,
    pub b_eq: Vec<f64>,
    pub a_in: SparseMatrix,
    pub b_in: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Polyhedron {
    /// The whole space `R^dim`.
    pub fn free(dim: usize) -> Self {
        Self {
            a_eq: SparseMatrix::empty(dim),
            b_eq: Vec::new(),
            a_in: SparseMatrix::empty(dim),
            b_in: Vec::new(),
            lower: vec![f64::NEG_INFINITY; dim],
            upper: vec![f64::INFINITY; dim],
        }
    }

    pub fn boxed(lower: Vec<f64>, upper: Vec<f64>) -> Self {
        let mut p = Self::free(lower.len());
        p.lower = lower;
        p.upper = upper;
        p
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn add_equality<I: IntoIterator<Item = (usize, f64)>>(&mut self, row: I, rhs: f64) {
        self.a_eq.push_row(row);
        self.b_eq.push(rhs);
    }

    pub fn add_inequality<I: IntoIterator<Item = (usize, f64)>>(&mut self, row: I, rhs: f64) {
        self.a_in.push_row(row);
        self.b_in.push(rhs);
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.dim();
        check_dim("polyhedron upper bounds", n, self.upper.len())?;
        check_dim("polyhedron equality columns", n, self.a_eq.ncols())?;
        check_dim("polyhedron inequality columns", n, self.a_in.ncols())?;
        check_dim("polyhedron equality rhs", self.a_eq.nrows(), self.b_eq.len())?;
        check_dim("polyhedron inequality rhs", self.a_in.nrows(), self.b_in.len())?;
        for (j, (l, u)) in self.lower.iter().zip(&self.upper).enumerate() {
            if l.is_nan() || u.is_nan() || *l == f64::INFINITY || *u == f64::NEG_INFINITY {
                return Err(Error::Config(format!("invalid bounds [{l}, {u}] on component {j}")));
            }
            if l.is_finite() && u.is_finite() && l > u {
                return Err(Error::Config(format!("lower bound exceeds upper on component {j}")));
            }
        }
        Ok(())
    }

    /// Largest scaled violation of any constraint at `x`.
    pub fn violation(&self, x: &[f64]) -> f64 {
        let eq_scale = 1.0 + inf_norm(&self.b_eq);
        let in_scale = 1.0 + inf_norm(&self.b_in);
        let mut worst = 0.0_f64;
        for (i, b) in self.b_eq.iter().enumerate() {
            worst = worst.max((self.a_eq.row_dot(i, x) - b).abs() / eq_scale);
        }
        for (i, b) in self.b_in.iter().enumerate() {
            worst = worst.max((self.a_in.row_dot(i, x) - b) / in_scale);
        }
        for ((xi, l), u) in x.iter().zip(&self.lower).zip(&self.upper) {
            worst = worst.max(l - xi).max(xi - u);
        }
        worst
    }

    pub fn contains(&self, x: &[f64], tol: f64) -> bool {
        self.violation(x) <= tol
    }

    /// Image of the set under `x = D xbar`, expressed in `xbar`.
    pub fn scaled(&self, d: &[f64]) -> Polyhedron {
        Polyhedron {
            a_eq: self.a_eq.scale_columns(d),
            b_eq: self.b_eq.clone(),
            a_in: self.a_in.scale_columns(d),
            b_in: self.b_in.clone(),
            lower: self.lower.iter().zip(d).map(|(l, di)| l / di).collect(),
            upper: self.upper.iter().zip(d).map(|(u, di)| u / di).collect(),
        }
    }

    /// Projects `x` onto the box part of the set.
    pub fn clip_to_box(&self, x: &mut [f64]) {
        for ((xi, l), u) in x.iter_mut().zip(&self.lower).zip(&self.upper) {
            *xi = xi.max(*l).min(*u);
        }
    }
}

/// Structured function `g(x) = min_w { c^T (x, w) + d : (x, w) in set }`.
///
/// The first `n_public` coordinates of `set` are the public variable `x`; any
/// remaining coordinates are auxiliary variables used to express polyhedral
/// terms such as an l1 penalty. Without auxiliaries `g` is a linear function
/// restricted to a polyhedron.
#[derive(Clone, Debug, PartialEq)]
pub struct PolyhedralFunction {
    pub n_public: usize,
    pub c: Vec<f64>,
    pub d: f64,
    pub set: Polyhedron,
}

impl PolyhedralFunction {
    /// Indicator of `set` with no auxiliary variables.
    pub fn indicator(set: Polyhedron) -> Self {
        let n = set.dim();
        Self {
            n_public: n,
            c: vec![0.0; n],
            d: 0.0,
            set,
        }
    }

    pub fn n_aux(&self) -> usize {
        self.set.dim() - self.n_public
    }

    pub fn validate(&self) -> Result<()> {
        self.set.validate()?;
        check_dim("structured objective", self.set.dim(), self.c.len())?;
        if self.n_public > self.set.dim() {
            return Err(Error::Config("n_public exceeds the variable count".into()));
        }
        Ok(())
    }

    pub fn public_lower(&self) -> &[f64] {
        &self.set.lower[..self.n_public]
    }

    pub fn public_upper(&self) -> &[f64] {
        &self.set.upper[..self.n_public]
    }

    /// `c^T z + d` for a full variable vector `z = (x, w)`.
    pub fn linear_value(&self, z: &[f64]) -> f64 {
        dot(&self.c, z) + self.d
    }

    /// Evaluates `g(x)`, returning `+inf` outside the domain.
    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        self.eval_with_tol(x, FEAS_TOL)
    }

    pub fn eval_with_tol(&self, x: &[f64], tol: f64) -> Result<f64> {
        check_dim("structured function argument", self.n_public, x.len())?;
        if self.n_aux() == 0 {
            return Ok(if self.set.contains(x, tol) {
                self.linear_value(x)
            } else {
                f64::INFINITY
            });
        }
        Ok(self.minimize_aux(x, tol)?.map_or(f64::INFINITY, |(v, _)| v))
    }

    /// Solves for the best auxiliary variables at a fixed public point.
    ///
    /// Rows that touch only public coordinates are checked directly with `tol`;
    /// the rest form a small LP in the auxiliaries. Returns `None` when `x` is
    /// outside the domain.
    pub fn minimize_aux(&self, x: &[f64], tol: f64) -> Result<Option<(f64, Vec<f64>)>> {
        let np = self.n_public;
        let na = self.n_aux();
        let set = &self.set;
        let eq_scale = 1.0 + inf_norm(&set.b_eq);
        let in_scale = 1.0 + inf_norm(&set.b_in);
        for (j, xj) in x.iter().enumerate() {
            if *xj < set.lower[j] - tol || *xj > set.upper[j] + tol {
                return Ok(None);
            }
        }
        let mut lp = QpProblem::new(na);
        lp.q = self.c[np..].to_vec();
        lp.lower = set.lower[np..].to_vec();
        lp.upper = set.upper[np..].to_vec();
        let split = |row: &[(usize, f64)]| {
            let mut public = 0.0;
            let mut aux = Vec::new();
            for &(c, v) in row {
                if c < np {
                    public += v * x[c];
                } else {
                    aux.push((c - np, v));
                }
            }
            (public, aux)
        };
        for (i, b) in set.b_eq.iter().enumerate() {
            let (public, aux) = split(set.a_eq.row(i));
            if aux.is_empty() {
                if (public - b).abs() > tol * eq_scale {
                    return Ok(None);
                }
            } else {
                lp.a_eq.push_row(aux);
                lp.b_eq.push(b - public);
            }
        }
        for (i, b) in set.b_in.iter().enumerate() {
            let (public, aux) = split(set.a_in.row(i));
            if aux.is_empty() {
                if public - b > tol * in_scale {
                    return Ok(None);
                }
            } else {
                lp.a_in.push_row(aux);
                lp.b_in.push(b - public);
            }
        }
        let sol = qp_solve(&lp, 1e-10)?;
        match sol.status {
            QpStatus::Optimal => {
                let value = dot(&self.c[..np], x) + sol.objective + self.d;
                Ok(Some((value, sol.z)))
            }
            QpStatus::Infeasible => Ok(None),
            QpStatus::Unbounded => Ok(Some((f64::NEG_INFINITY, sol.z))),
            QpStatus::MaxIter => Err(Error::Master(
                "auxiliary LP for the structured function did not converge".into(),
            )),
        }
    }

    /// Whether the domain of `g` is nonempty, via a phase-one LP.
    pub fn has_nonempty_domain(&self) -> Result<bool> {
        crate::qp::lp_feasible(
            &self.set.a_eq,
            &self.set.b_eq,
            &self.set.a_in,
            &self.set.b_in,
            &self.set.lower,
            &self.set.upper,
        )
    }
}

/// Answer of an agent oracle: `f_i(x_i)` and a subgradient.
#[derive(Clone, Debug, PartialEq)]
pub struct QueryResult {
    pub value: f64,
    pub subgradient: Vec<f64>,
}

/// Error reported by an agent oracle.
#[derive(Debug, Clone, thiserror::Error)]
#[error("{0}")]
pub struct OracleError(pub String);

/// Value/subgradient access to one agent objective `f_i`.
///
/// Queries on distinct agents may run concurrently.
pub trait AgentOracle: Send + Sync {
    /// Block size `n_i`.
    fn dim(&self) -> usize;

    fn query(&self, x: &[f64]) -> std::result::Result<QueryResult, OracleError>;

    /// Known minorant of `f_i` to start from, if any.
    fn initial_minorant(&self) -> Option<Minorant> {
        None
    }
}

impl<T: AgentOracle + ?Sized> AgentOracle for Box<T> {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn query(&self, x: &[f64]) -> std::result::Result<QueryResult, OracleError> {
        (**self).query(x)
    }
    fn initial_minorant(&self) -> Option<Minorant> {
        (**self).initial_minorant()
    }
}

impl<T: AgentOracle + ?Sized> AgentOracle for &T {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn query(&self, x: &[f64]) -> std::result::Result<QueryResult, OracleError> {
        (**self).query(x)
    }
    fn initial_minorant(&self) -> Option<Minorant> {
        (**self).initial_minorant()
    }
}

/// Oracle backed by a closure returning `(value, subgradient)`.
pub struct FnOracle<F> {
    dim: usize,
    f: F,
    initial: Option<Minorant>,
}

impl<F> FnOracle<F>
where
    F: Fn(&[f64]) -> (f64, Vec<f64>) + Send + Sync,
{
    pub fn new(dim: usize, f: F) -> Self {
        Self { dim, f, initial: None }
    }

    pub fn with_initial_minorant(mut self, m: Minorant) -> Self {
        self.initial = Some(m);
        self
    }
}

impl<F> AgentOracle for FnOracle<F>
where
    F: Fn(&[f64]) -> (f64, Vec<f64>) + Send + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn query(&self, x: &[f64]) -> std::result::Result<QueryResult, OracleError> {
        let (value, subgradient) = (self.f)(x);
        Ok(QueryResult { value, subgradient })
    }

    fn initial_minorant(&self) -> Option<Minorant> {
        self.initial.clone()
    }
}

/// Piecewise-affine minorant of one agent objective.
#[derive(Clone, Debug, PartialEq)]
pub struct Minorant {
    pub block: usize,
    dim: usize,
    floor: f64,
    cuts: Vec<Cut>,
    known_domain: Option<Polyhedron>,
    /// Maximum number of stored cuts; `None` keeps everything.
    memory: Option<usize>,
}

impl Minorant {
    /// Minorant equal to `-inf` everywhere.
    pub fn new(dim: usize) -> Self {
        Self {
            block: 0,
            dim,
            floor: f64::NEG_INFINITY,
            cuts: Vec::new(),
            known_domain: None,
            memory: None,
        }
    }

    pub fn with_floor(dim: usize, floor: f64) -> Self {
        Self {
            floor,
            ..Self::new(dim)
        }
    }

    pub fn with_domain(mut self, domain: Polyhedron) -> Self {
        assert_eq!(domain.dim(), self.dim);
        self.known_domain = Some(domain);
        self
    }

    pub fn with_memory(mut self, memory: Option<usize>) -> Self {
        self.memory = memory;
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn floor(&self) -> f64 {
        self.floor
    }

    pub fn cuts(&self) -> &[Cut] {
        &self.cuts
    }

    pub fn known_domain(&self) -> Option<&Polyhedron> {
        self.known_domain.as_ref()
    }

    pub fn memory(&self) -> Option<usize> {
        self.memory
    }

    /// Whether the epigraph of the minorant is bounded below.
    pub fn is_bounded(&self) -> bool {
        self.floor > f64::NEG_INFINITY || !self.cuts.is_empty()
    }

    /// Max over floor and cuts, ignoring the known domain.
    pub fn affine_max(&self, x: &[f64]) -> f64 {
        self.cuts
            .iter()
            .map(|c| c.eval(x))
            .fold(self.floor, f64::max)
    }

    /// Evaluates the minorant; `+inf` outside the known domain.
    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        check_dim("minorant argument", self.dim, x.len())?;
        if let Some(dom) = &self.known_domain {
            if !dom.contains(x, FEAS_TOL) {
                return Ok(f64::INFINITY);
            }
        }
        Ok(self.affine_max(x))
    }

    /// Adds an oracle cut. Returns `false` when an identical cut is already held.
    ///
    /// Never evicts; a minorant with finite memory may exceed it until
    /// [`Minorant::compress`] is called.
    pub fn add_cut(&mut self, cut: Cut) -> Result<bool> {
        check_dim("cut base point", self.dim, cut.base_point.len())?;
        check_dim("cut subgradient", self.dim, cut.subgradient.len())?;
        if !cut.base_value.is_finite() || cut.subgradient.iter().any(|q| !q.is_finite()) {
            return Err(Error::Config("cut must have finite value and subgradient".into()));
        }
        if self.cuts.iter().any(|c| c.same_affine(&cut, 1e-12)) {
            return Ok(false);
        }
        self.cuts.push(cut);
        Ok(true)
    }

    pub fn needs_compression(&self) -> bool {
        self.memory.is_some_and(|m| self.cuts.len() > m)
    }

    /// Replaces the bundle by `aggregate` plus the newest `memory - 1` oracle cuts.
    pub fn compress(&mut self, aggregate: Cut) -> Result<()> {
        let Some(memory) = self.memory else {
            return Ok(());
        };
        if memory < 2 {
            return Err(Error::Config(format!(
                "memory {memory} leaves no room for an aggregate and an oracle cut"
            )));
        }
        check_dim("aggregate cut", self.dim, aggregate.dim())?;
        let oracle: Vec<Cut> = self
            .cuts
            .drain(..)
            .filter(|c| c.origin != CutOrigin::Aggregate)
            .collect();
        let keep = oracle.len().saturating_sub(memory - 1);
        self.cuts.push(Cut {
            origin: CutOrigin::Aggregate,
            ..aggregate
        });
        self.cuts.extend(oracle.into_iter().skip(keep));
        Ok(())
    }

    /// The minorant in scaled coordinates `x = D xbar`.
    pub fn scaled(&self, d: &[f64]) -> Minorant {
        Minorant {
            block: self.block,
            dim: self.dim,
            floor: self.floor,
            cuts: self.cuts.iter().map(|c| c.scaled(d)).collect(),
            known_domain: self.known_domain.as_ref().map(|p| p.scaled(d)),
            memory: self.memory,
        }
    }
}

/// Relative gap `(h - L) / min(|h|, |L|)`, infinite unless `h` and `L` share a sign.
pub fn relative_gap(h: f64, lower: f64) -> f64 {
    if h < lower - 1e-9 * (1.0 + h.abs()) {
        log::warn!("upper value {h} lies below lower bound {lower}");
    }
    if h * lower > 0.0 {
        (h - lower) / h.abs().min(lower.abs())
    } else {
        f64::INFINITY
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}
