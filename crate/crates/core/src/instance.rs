//! Problem instances: structured function plus built-in agents, with a JSON
//! file format and a monolithic reference solve.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::agents::BuiltinAgent;
use crate::bundle::{solve, SolveResult, SolverParams};
use crate::error::{Error, Result};
use crate::model::{AgentOracle, PolyhedralFunction, Polyhedron};
use crate::qp::{qp_solve, QpProblem, QpStatus};
use crate::sparse::SparseMatrix;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Instance {
    pub name: String,
    pub structured: PolyhedralFunction,
    pub agents: Vec<BuiltinAgent>,
}

impl Instance {
    pub fn new(name: &str, structured: PolyhedralFunction, agents: Vec<BuiltinAgent>) -> Self {
        Self {
            name: name.to_string(),
            structured,
            agents,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.structured.validate()?;
        for a in &self.agents {
            a.validate()?;
        }
        let total: usize = self.agents.iter().map(AgentOracle::dim).sum();
        if total != self.structured.n_public {
            return Err(Error::Config(format!(
                "agents own {total} variables but the structured function has {}",
                self.structured.n_public
            )));
        }
        Ok(())
    }

    pub fn solve(&self, params: &SolverParams) -> Result<SolveResult> {
        solve(&self.structured, &self.agents, params)
    }

    /// `h(x)`, querying every agent.
    pub fn objective(&self, x: &[f64]) -> Result<f64> {
        let mut total = self.structured.eval(x)?;
        let mut start = 0;
        for (i, a) in self.agents.iter().enumerate() {
            let r = a.query(&x[start..start + a.dim()]).map_err(|e| Error::Agent {
                agent: i,
                message: e.0,
            })?;
            total += r.value;
            start += a.dim();
        }
        Ok(total)
    }
}

/// Finite number or `null` for an infinite bound.
type Bound = Option<f64>;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StructuredFile {
    n_public: usize,
    c: Vec<f64>,
    d: f64,
    a_eq: Vec<Vec<f64>>,
    b_eq: Vec<f64>,
    a_in: Vec<Vec<f64>>,
    b_in: Vec<f64>,
    lower: Vec<Bound>,
    upper: Vec<Bound>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct InstanceFile<A = BuiltinAgent> {
    version: u32,
    name: String,
    structured: StructuredFile,
    agents: Vec<A>,
}

fn to_bounds(v: &[f64]) -> Vec<Bound> {
    v.iter().map(|x| x.is_finite().then_some(*x)).collect()
}

fn from_bounds(v: &[Bound], missing: f64) -> Vec<f64> {
    v.iter().map(|x| x.unwrap_or(missing)).collect()
}

impl From<&Instance> for InstanceFile {
    fn from(inst: &Instance) -> Self {
        let g = &inst.structured;
        Self {
            version: FORMAT_VERSION,
            name: inst.name.clone(),
            structured: StructuredFile {
                n_public: g.n_public,
                c: g.c.clone(),
                d: g.d,
                a_eq: g.set.a_eq.to_dense(),
                b_eq: g.set.b_eq.clone(),
                a_in: g.set.a_in.to_dense(),
                b_in: g.set.b_in.clone(),
                lower: to_bounds(&g.set.lower),
                upper: to_bounds(&g.set.upper),
            },
            agents: inst.agents.clone(),
        }
    }
}

impl InstanceFile {
    fn into_instance(self) -> Result<Instance> {
        let s = self.structured;
        let n = s.c.len();
        let rect = |name: &str, m: &[Vec<f64>]| -> Result<SparseMatrix> {
            if let Some(i) = m.iter().position(|r| r.len() != n) {
                return Err(Error::Config(format!("row {i} of {name} has {} entries, expected {n}", m[i].len())));
            }
            Ok(SparseMatrix::from_dense(m, n))
        };
        let set = Polyhedron {
            a_eq: rect("a_eq", &s.a_eq)?,
            b_eq: s.b_eq,
            a_in: rect("a_in", &s.a_in)?,
            b_in: s.b_in,
            lower: from_bounds(&s.lower, f64::NEG_INFINITY),
            upper: from_bounds(&s.upper, f64::INFINITY),
        };
        let inst = Instance {
            name: self.name,
            structured: PolyhedralFunction {
                n_public: s.n_public,
                c: s.c,
                d: s.d,
                set,
            },
            agents: self.agents,
        };
        inst.validate()?;
        Ok(inst)
    }
}

pub fn save_instance(inst: &Instance, path: &Path) -> Result<()> {
    let file = fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer(&mut w, &InstanceFile::from(inst)).map_err(|e| Error::Instance {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    w.flush()?;
    Ok(())
}

pub fn load_instance(path: &Path) -> Result<Instance> {
    let text = fs::read_to_string(path).map_err(|e| Error::Instance {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    parse_instance(&text).map_err(|e| match e {
        Error::Instance { message, .. } => Error::Instance {
            path: path.display().to_string(),
            message,
        },
        Error::Config(message) => Error::Instance {
            path: path.display().to_string(),
            message,
        },
        other => other,
    })
}

/// Parses an instance from JSON text.
pub fn parse_instance(text: &str) -> Result<Instance> {
    let fail = |message: String| Error::Instance {
        path: String::new(),
        message,
    };
    let value: serde_json::Value = serde_json::from_str(text).map_err(|e| fail(e.to_string()))?;
    match value.get("version") {
        Some(v) if v.as_u64() == Some(FORMAT_VERSION as u64) => {}
        Some(v) => return Err(fail(format!("unsupported version {v}, expected {FORMAT_VERSION}"))),
        None => return Err(fail(format!("missing field `version` (expected {FORMAT_VERSION})"))),
    }
    let file: InstanceFile<serde_json::Value> = serde_path_to_error::deserialize(value).map_err(|e| {
        let path = e.path().to_string();
        fail(format!("{path}: {}", e.into_inner()))
    })?;
    let agents = file
        .agents
        .into_iter()
        .enumerate()
        .map(|(i, v)| parse_agent(v).map_err(|m| fail(format!("agents[{i}]{m}"))))
        .collect::<Result<Vec<_>>>()?;
    InstanceFile {
        version: file.version,
        name: file.name,
        structured: file.structured,
        agents,
    }
    .into_instance()
}

/// Deserializes one agent by its `kind` tag, keeping field paths in errors.
fn parse_agent(mut v: serde_json::Value) -> std::result::Result<BuiltinAgent, String> {
    let kind = match v.as_object_mut().map(|o| o.remove("kind")) {
        Some(Some(serde_json::Value::String(k))) => k,
        Some(_) => return Err(": missing string field `kind`".into()),
        None => return Err(": expected an object".into()),
    };
    fn inner<T: serde::de::DeserializeOwned>(v: serde_json::Value) -> std::result::Result<T, String> {
        serde_path_to_error::deserialize(v).map_err(|e| format!(".{}: {}", e.path(), e.inner()))
    }
    Ok(match kind.as_str() {
        "transshipment" => BuiltinAgent::Transshipment(inner(v)?),
        "flow" => BuiltinAgent::Flow(inner(v)?),
        "resource" => BuiltinAgent::Resource(inner(v)?),
        "logistic" => BuiltinAgent::Logistic(inner(v)?),
        other => return Err(format!(".kind: unknown agent kind `{other}`")),
    })
}

/// Optimal value of the whole problem solved as one QP, with every agent's
/// subproblem written out explicitly. Needs every agent to be QP-defined.
pub fn reference_solve(inst: &Instance) -> Result<f64> {
    let g = &inst.structured;
    let gv = g.set.dim();
    let mut offsets = Vec::with_capacity(inst.agents.len());
    let mut total = gv;
    let mut subproblems = Vec::with_capacity(inst.agents.len());
    for (i, a) in inst.agents.iter().enumerate() {
        let pq = a
            .parametric()
            .ok_or_else(|| Error::Unsupported(format!("agent {i} is not defined by a QP")))?;
        offsets.push(total);
        total += pq.base.num_vars();
        subproblems.push(pq);
    }

    let mut qp = QpProblem::new(total);
    qp.q[..gv].copy_from_slice(&g.c);
    qp.lower[..gv].copy_from_slice(&g.set.lower);
    qp.upper[..gv].copy_from_slice(&g.set.upper);
    qp.a_eq = g.set.a_eq.shifted(0, total);
    qp.b_eq = g.set.b_eq.clone();
    qp.a_in = g.set.a_in.shifted(0, total);
    qp.b_in = g.set.b_in.clone();
    let mut p_triplets = Vec::new();
    let mut x_start = 0;
    for (pq, &off) in subproblems.iter().zip(&offsets) {
        let nz = pq.base.num_vars();
        for (r, row) in pq.base.p.rows().enumerate() {
            p_triplets.extend(row.iter().map(|&(c, v)| (off + r, off + c, v)));
        }
        qp.q[off..off + nz].copy_from_slice(&pq.base.q);
        qp.lower[off..off + nz].copy_from_slice(&pq.base.lower);
        qp.upper[off..off + nz].copy_from_slice(&pq.base.upper);
        // A z - B x = b for the parameter block owned by this agent
        let couple = |a: &SparseMatrix, b: &SparseMatrix| {
            let mut out = SparseMatrix::empty(total);
            for (ra, rb) in a.rows().zip(b.rows()) {
                out.push_row(
                    ra.iter()
                        .map(|&(c, v)| (off + c, v))
                        .chain(rb.iter().map(|&(c, v)| (x_start + c, -v))),
                );
            }
            out
        };
        qp.a_eq.append_rows(&couple(&pq.base.a_eq, &pq.b_eq_param));
        qp.b_eq.extend_from_slice(&pq.base.b_eq);
        qp.a_in.append_rows(&couple(&pq.base.a_in, &pq.b_in_param));
        qp.b_in.extend_from_slice(&pq.base.b_in);
        x_start += pq.n_param;
    }
    qp.p = SparseMatrix::from_triplets(total, total, &p_triplets);
    let sol = qp_solve(&qp, 1e-9)?;
    if sol.status != QpStatus::Optimal {
        return Err(Error::Master(format!("reference problem ended with {:?}", sol.status)));
    }
    Ok(sol.objective + g.d)
}
