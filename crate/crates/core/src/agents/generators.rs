//! Seeded generators for the four example families.
//!
//! Shared data is drawn from stream 0 of the seed and agent `i` draws its own
//! data from stream `i + 1`, so changing the number of agents leaves the other
//! agents' data untouched.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Normal, Uniform};

use super::resource::PiecewiseUtility;
use super::{BuiltinAgent, FlowAgent, LogisticAgent, ResourceAgent, TransshipmentAgent, DEFAULT_SLACK_PENALTY};
use crate::error::Result;
use crate::instance::Instance;
use crate::model::{PolyhedralFunction, Polyhedron};

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

fn matrix<R: Rng, D: Distribution<f64>>(rng: &mut R, dist: &D, rows: usize, cols: usize) -> Vec<Vec<f64>> {
    (0..rows).map(|_| (0..cols).map(|_| dist.sample(rng)).collect()).collect()
}

fn uniform(lo: f64, hi: f64) -> Uniform<f64> {
    Uniform::new(lo, hi).expect("valid range")
}

#[derive(Clone, Debug, PartialEq)]
pub struct SupplyChainConfig {
    /// `(inputs, outputs)` of each component; outputs of one are inputs of the next.
    pub dims: Vec<(usize, usize)>,
    pub slack_penalty: f64,
}

impl SupplyChainConfig {
    pub fn paper() -> Self {
        Self {
            dims: vec![(20, 30), (30, 40), (40, 25), (25, 35), (35, 20)],
            slack_penalty: DEFAULT_SLACK_PENALTY,
        }
    }

    pub fn desk() -> Self {
        Self {
            dims: vec![(4, 6), (6, 8), (8, 5), (5, 7), (7, 4)],
            slack_penalty: DEFAULT_SLACK_PENALTY,
        }
    }
}

/// Serial chain of trans-shipment components between a source and a sink.
///
/// Public variables are `(a_1, b_1, ..., a_M, b_M)`. `g` holds the purchase
/// and sale prices, `b_i = a_{i+1}`, `1^T a_i = 1^T b_i`, and `0 <= x <= u`.
pub fn gen_supply_chain(seed: u64, cfg: &SupplyChainConfig) -> Result<Instance> {
    let m = cfg.dims.len();
    for w in cfg.dims.windows(2) {
        if w[0].1 != w[1].0 {
            return Err(crate::Error::Config(format!(
                "component with {} outputs feeds one with {} inputs",
                w[0].1, w[1].0
            )));
        }
    }
    let cap_dist = LogNormal::new(0.0, 1.0).expect("valid");
    let cost_dist = LogNormal::new(0.07, 0.7).expect("valid");
    let mut caps = Vec::with_capacity(m);
    let mut agents = Vec::with_capacity(m);
    for (i, &(q, p)) in cfg.dims.iter().enumerate() {
        let mut rng = stream(seed, i as u64 + 1);
        let c = matrix(&mut rng, &cap_dist, p, q);
        let e = matrix(&mut rng, &cost_dist, p, q);
        let d: Vec<Vec<f64>> = e
            .iter()
            .zip(&c)
            .map(|(er, cr)| er.iter().zip(cr).map(|(e, c)| e / (2.0 * c)).collect())
            .collect();
        agents.push(BuiltinAgent::Transshipment(TransshipmentAgent::new(
            d,
            e,
            c.clone(),
            cfg.slack_penalty,
        )?));
        caps.push(c);
    }
    let mut rng = stream(seed, 0);
    let (q1, pm) = (cfg.dims[0].0, cfg.dims[m - 1].1);
    let alpha: Vec<f64> = (0..q1).map(|_| rng.sample(uniform(8.0, 10.0))).collect();
    let beta: Vec<f64> = (0..pm).map(|_| -rng.sample(uniform(10.0, 12.0))).collect();

    // capacity sums into and out of every flow variable
    let col_sums = |c: &Vec<Vec<f64>>| -> Vec<f64> { (0..c[0].len()).map(|k| c.iter().map(|r| r[k]).sum()).collect() };
    let row_sums = |c: &Vec<Vec<f64>>| -> Vec<f64> { c.iter().map(|r| r.iter().sum()).collect() };
    let mut upper = Vec::new();
    let mut offsets = Vec::with_capacity(m);
    for i in 0..m {
        offsets.push(upper.len());
        let out_of_a = col_sums(&caps[i]);
        let into_a = if i > 0 { row_sums(&caps[i - 1]) } else { vec![0.0; out_of_a.len()] };
        upper.extend(out_of_a.iter().zip(&into_a).map(|(a, b)| a.max(*b)));
        let into_b = row_sums(&caps[i]);
        let out_of_b = if i + 1 < m { col_sums(&caps[i + 1]) } else { vec![0.0; into_b.len()] };
        upper.extend(into_b.iter().zip(&out_of_b).map(|(a, b)| a.max(*b)));
    }
    let n = upper.len();
    let mut set = Polyhedron::boxed(vec![0.0; n], upper);
    for i in 0..m {
        let (q, p) = cfg.dims[i];
        let a0 = offsets[i];
        set.add_equality((a0..a0 + q).map(|j| (j, 1.0)).chain((a0 + q..a0 + q + p).map(|j| (j, -1.0))), 0.0);
        if i + 1 < m {
            let next = offsets[i + 1];
            for j in 0..p {
                set.add_equality([(a0 + q + j, 1.0), (next + j, -1.0)], 0.0);
            }
        }
    }
    let mut g = PolyhedralFunction::indicator(set);
    g.c[..q1].copy_from_slice(&alpha);
    let last = offsets[m - 1] + cfg.dims[m - 1].0;
    g.c[last..last + pm].copy_from_slice(&beta);
    Ok(Instance::new("supply-chain", g, agents))
}

#[derive(Clone, Debug, PartialEq)]
pub struct ResourceConfig {
    pub resources: usize,
    pub agents: usize,
    pub participants: usize,
    /// Affine pieces per participant utility.
    pub pieces: usize,
}

impl ResourceConfig {
    pub fn paper() -> Self {
        Self {
            resources: 50,
            agents: 50,
            participants: 10,
            pieces: 5,
        }
    }

    pub fn desk() -> Self {
        Self {
            resources: 10,
            agents: 10,
            participants: 10,
            pieces: 5,
        }
    }
}

/// Arity of the geometric-mean utilities approximated by the pieces.
const GEOMEAN_ARITY: usize = 5;

/// Distributed resource allocation with piecewise-linear utilities.
///
/// Each utility is the minimum of `pieces` tangent planes of
/// `geomean(A r + b)`, taken at allocations spread geometrically around a
/// participant's fair share of the budget.
pub fn gen_resource(seed: u64, cfg: &ResourceConfig) -> Result<Instance> {
    let n = cfg.resources;
    let mut rng = stream(seed, 0);
    let budget_dist = LogNormal::new((n as f64 / 10.0).ln(), 1.0).expect("valid");
    let budget: Vec<f64> = (0..n).map(|_| budget_dist.sample(&mut rng)).collect();
    let share = 1.0 / (cfg.agents * cfg.participants) as f64;

    let mut agents = Vec::with_capacity(cfg.agents);
    for i in 0..cfg.agents {
        let mut rng = stream(seed, i as u64 + 1);
        let mut utilities = Vec::with_capacity(cfg.participants);
        for _ in 0..cfg.participants {
            let active: Vec<bool> = (0..n).map(|_| rng.random::<f64>() < 0.1).collect();
            let a: Vec<Vec<f64>> = (0..GEOMEAN_ARITY)
                .map(|_| (0..n).map(|k| if active[k] { rng.random::<f64>() } else { 0.0 }).collect())
                .collect();
            let b: Vec<f64> = (0..GEOMEAN_ARITY).map(|_| rng.sample(uniform(0.0, n as f64 / 10.0))).collect();
            let mut slopes = Vec::with_capacity(cfg.pieces);
            let mut offsets = Vec::with_capacity(cfg.pieces);
            for t in 0..cfg.pieces {
                let level = if cfg.pieces > 1 { t as f64 / (cfg.pieces - 1) as f64 } else { 0.5 };
                let scale = share * 10f64.powf(2.0 * level - 1.0);
                let r0: Vec<f64> = budget.iter().map(|r| r * scale * rng.sample(uniform(0.5, 1.5))).collect();
                let u0: Vec<f64> = a
                    .iter()
                    .zip(&b)
                    .map(|(row, bi)| row.iter().zip(&r0).map(|(x, y)| x * y).sum::<f64>() + bi)
                    .collect();
                let gm = (u0.iter().map(|v| v.ln()).sum::<f64>() / GEOMEAN_ARITY as f64).exp();
                let grad: Vec<f64> = u0.iter().map(|v| gm / (GEOMEAN_ARITY as f64 * v)).collect();
                // geomean is positively homogeneous, so its tangent plane in u passes through 0
                slopes.push((0..n).map(|k| a.iter().zip(&grad).map(|(row, w)| row[k] * w).sum()).collect());
                offsets.push(grad.iter().zip(&b).map(|(w, bi)| w * bi).sum());
            }
            utilities.push(PiecewiseUtility { slopes, offsets });
        }
        agents.push(BuiltinAgent::Resource(ResourceAgent::new(n, utilities, budget.clone())?));
    }

    let total = n * cfg.agents;
    let upper: Vec<f64> = (0..cfg.agents).flat_map(|_| budget.iter().copied()).collect();
    let mut set = Polyhedron::boxed(vec![0.0; total], upper);
    for k in 0..n {
        set.add_inequality((0..cfg.agents).map(|i| (i * n + k, 1.0)), budget[k]);
    }
    Ok(Instance::new("resource", PolyhedralFunction::indicator(set), agents))
}

#[derive(Clone, Debug, PartialEq)]
pub struct McfConfig {
    pub commodities: usize,
    pub nodes: usize,
    pub edges: usize,
}

impl McfConfig {
    pub fn paper() -> Self {
        Self {
            commodities: 10,
            nodes: 100,
            edges: 1000,
        }
    }

    pub fn desk() -> Self {
        Self {
            commodities: 5,
            nodes: 30,
            edges: 150,
        }
    }
}

/// Multi-commodity flow with edge capacity split between commodities.
///
/// The graph is a Hamiltonian cycle through all nodes plus random edges.
/// `g` is the indicator of `sum_i x_i = c, 0 <= x_i <= c`.
pub fn gen_mcf(seed: u64, cfg: &McfConfig) -> Result<Instance> {
    let (p, q) = (cfg.nodes, cfg.edges);
    if p < 2 || q < p {
        return Err(crate::Error::Config("need at least two nodes and as many edges as nodes".into()));
    }
    let mut rng = stream(seed, 0);
    let mut order: Vec<usize> = (0..p).collect();
    for i in (1..p).rev() {
        order.swap(i, rng.random_range(0..=i));
    }
    let mut edges: Vec<(usize, usize)> = (0..p).map(|i| (order[i], order[(i + 1) % p])).collect();
    while edges.len() < q {
        let (t, h) = (rng.random_range(0..p), rng.random_range(0..p));
        if t != h {
            edges.push((t, h));
        }
    }
    let capacity: Vec<f64> = (0..q).map(|_| rng.sample(uniform(0.2, 2.0))).collect();
    let mut incidence = vec![vec![0.0; q]; p];
    for (e, &(t, h)) in edges.iter().enumerate() {
        incidence[h][e] = 1.0;
        incidence[t][e] = -1.0;
    }

    let mut agents = Vec::with_capacity(cfg.commodities);
    for i in 0..cfg.commodities {
        let mut rng = stream(seed, i as u64 + 1);
        let source = rng.random_range(0..p);
        let mut sink = rng.random_range(0..p - 1);
        if sink >= source {
            sink += 1;
        }
        let utility = rng.sample(uniform(0.5, 1.5));
        agents.push(BuiltinAgent::Flow(FlowAgent::new(
            incidence.clone(),
            source,
            sink,
            utility,
            capacity.clone(),
        )?));
    }

    let m = cfg.commodities;
    let upper: Vec<f64> = (0..m).flat_map(|_| capacity.iter().copied()).collect();
    let mut set = Polyhedron::boxed(vec![0.0; m * q], upper);
    for e in 0..q {
        set.add_equality((0..m).map(|i| (i * q + e, 1.0)), capacity[e]);
    }
    Ok(Instance::new("mcf", PolyhedralFunction::indicator(set), agents))
}

#[derive(Clone, Debug, PartialEq)]
pub struct FederatedConfig {
    pub features: usize,
    pub locations: usize,
    pub samples: usize,
    pub lambda: f64,
}

impl FederatedConfig {
    pub fn paper() -> Self {
        Self {
            features: 500,
            locations: 10,
            samples: 1000,
            lambda: 5.0,
        }
    }

    pub fn desk() -> Self {
        Self {
            features: 60,
            locations: 10,
            samples: 200,
            lambda: 5.0,
        }
    }
}

/// Sparse parameter used to label the federated data, drawn from stream 0.
pub fn federated_truth(seed: u64, features: usize) -> Vec<f64> {
    let mut rng = stream(seed, 0);
    let normal = Normal::new(0.0, 1.0).expect("valid");
    (0..features)
        .map(|_| {
            let keep = rng.random::<f64>() < 0.1;
            let v = normal.sample(&mut rng);
            if keep {
                v
            } else {
                0.0
            }
        })
        .collect()
}

/// l1-regularized logistic regression with data split across locations.
///
/// `g` enforces consensus `x_i = x_1` and adds `lambda ||x_1||_1` through
/// auxiliary variables `w >= |x_1|`.
pub fn gen_federated(seed: u64, cfg: &FederatedConfig) -> Result<Instance> {
    let d = cfg.features;
    let theta = federated_truth(seed, d);
    let normal = Normal::new(0.0, 1.0).expect("valid");
    let noise = Normal::new(0.0, 0.1).expect("valid");
    let mut agents = Vec::with_capacity(cfg.locations);
    for i in 0..cfg.locations {
        let mut rng = stream(seed, i as u64 + 1);
        let features = matrix(&mut rng, &normal, cfg.samples, d);
        let labels = features
            .iter()
            .map(|u| {
                let s: f64 = u.iter().zip(&theta).map(|(a, b)| a * b).sum::<f64>() + noise.sample(&mut rng);
                if s >= 0.0 {
                    1.0
                } else {
                    -1.0
                }
            })
            .collect();
        agents.push(BuiltinAgent::Logistic(LogisticAgent::new(features, labels)?));
    }

    let m = cfg.locations;
    let n = m * d;
    let mut lower = vec![f64::NEG_INFINITY; n + d];
    lower[n..].iter_mut().for_each(|v| *v = 0.0);
    let mut set = Polyhedron::boxed(lower, vec![f64::INFINITY; n + d]);
    for i in 1..m {
        for j in 0..d {
            set.add_equality([(i * d + j, 1.0), (j, -1.0)], 0.0);
        }
    }
    for j in 0..d {
        set.add_inequality([(j, 1.0), (n + j, -1.0)], 0.0);
        set.add_inequality([(j, -1.0), (n + j, -1.0)], 0.0);
    }
    let mut c = vec![0.0; n + d];
    c[n..].iter_mut().for_each(|v| *v = cfg.lambda);
    let g = PolyhedralFunction {
        n_public: n,
        c,
        d: 0.0,
        set,
    };
    Ok(Instance::new("federated", g, agents))
}
