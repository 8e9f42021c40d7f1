//! `osbundle`: generate example instances and run the bundle solver on them.

use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use osbundle::agents::generators::{
    gen_federated, gen_mcf, gen_resource, gen_supply_chain, FederatedConfig, McfConfig, ResourceConfig,
    SupplyChainConfig,
};
use osbundle::bundle::{IterationRecord, Phase, SolveResult, SolveStatus, SolverParams};
use osbundle::instance::{load_instance, reference_solve, save_instance, Instance};
use osbundle::model::relative_gap;
use osbundle::Error;

const TRACE_HEADER: &str = "k,h_xk,h_tilde,L_best,omega,omega_true,delta,accepted,rho,phase,wall_ms";

#[derive(Parser)]
#[command(name = "osbundle", version, about = "Disaggregate bundle method for oracle-structured problems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve an example or an instance file.
    Run(RunArgs),
    /// Write a generated example to an instance file.
    Generate(GenerateArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Example {
    SupplyChain,
    Resource,
    Mcf,
    Federated,
}

/// `inf` or a cut count.
#[derive(Clone, Copy, Debug)]
struct Memory(Option<usize>);

impl FromStr for Memory {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "inf" | "∞" => Ok(Memory(None)),
            _ => s.parse().map(|m| Memory(Some(m))).map_err(|_| format!("expected a cut count or `inf`, got `{s}`")),
        }
    }
}

#[derive(Args)]
#[group(required = true, multiple = false)]
struct Source {
    /// Built-in example to generate.
    #[arg(long, value_enum)]
    example: Option<Example>,
    /// Instance file to load.
    #[arg(long)]
    instance: Option<PathBuf>,
}

#[derive(Args, Default)]
struct Sizes {
    /// Use the problem sizes of the paper instead of the desk-scale defaults.
    #[arg(long)]
    paper_scale: bool,
    /// Resources (resource example).
    #[arg(long)]
    resources: Option<usize>,
    /// Agents (resource example).
    #[arg(long)]
    agents: Option<usize>,
    /// Participants per agent (resource example).
    #[arg(long)]
    participants: Option<usize>,
    /// Affine pieces per utility (resource example).
    #[arg(long)]
    pieces: Option<usize>,
    /// Commodities (MCF example).
    #[arg(long)]
    commodities: Option<usize>,
    /// Nodes (MCF example).
    #[arg(long)]
    nodes: Option<usize>,
    /// Edges (MCF example).
    #[arg(long)]
    edges: Option<usize>,
    /// Features (federated example).
    #[arg(long)]
    features: Option<usize>,
    /// Locations (federated example).
    #[arg(long)]
    locations: Option<usize>,
    /// Samples per location (federated example).
    #[arg(long)]
    samples: Option<usize>,
    /// l1 weight (federated example).
    #[arg(long)]
    lambda: Option<f64>,
    /// Slack penalty (supply-chain example).
    #[arg(long)]
    slack_penalty: Option<f64>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    source: Source,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    sizes: Sizes,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long)]
    eps_abs: Option<f64>,
    #[arg(long)]
    eps_rel: Option<f64>,
    /// Descent-test fraction.
    #[arg(long)]
    eta: Option<f64>,
    /// Fixed proximal parameter; skips the discovery phase.
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long)]
    discovery_iters: Option<usize>,
    /// Cuts kept per agent, or `inf`.
    #[arg(long)]
    memory: Option<Memory>,
    #[arg(long)]
    lb_period: Option<usize>,
    #[arg(long)]
    no_precondition: bool,
    /// Query agents on this many threads.
    #[arg(long, value_name = "N")]
    parallel_agents: Option<usize>,
    /// Trace CSV output.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Summary output; printed to standard output as well.
    #[arg(long)]
    summary: Option<PathBuf>,
    /// Solve the whole problem as one QP to report the true gap.
    #[arg(long)]
    reference: bool,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long, value_enum)]
    example: Example,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    sizes: Sizes,
    /// Instance file to write.
    #[arg(long)]
    out: PathBuf,
}

fn generate(example: Example, seed: u64, s: &Sizes) -> osbundle::Result<Instance> {
    match example {
        Example::SupplyChain => {
            let mut cfg = if s.paper_scale { SupplyChainConfig::paper() } else { SupplyChainConfig::desk() };
            if let Some(v) = s.slack_penalty {
                cfg.slack_penalty = v;
            }
            gen_supply_chain(seed, &cfg)
        }
        Example::Resource => {
            let base = if s.paper_scale { ResourceConfig::paper() } else { ResourceConfig::desk() };
            let cfg = ResourceConfig {
                resources: s.resources.unwrap_or(base.resources),
                agents: s.agents.unwrap_or(base.agents),
                participants: s.participants.unwrap_or(base.participants),
                pieces: s.pieces.unwrap_or(base.pieces),
            };
            gen_resource(seed, &cfg)
        }
        Example::Mcf => {
            let base = if s.paper_scale { McfConfig::paper() } else { McfConfig::desk() };
            let cfg = McfConfig {
                commodities: s.commodities.unwrap_or(base.commodities),
                nodes: s.nodes.unwrap_or(base.nodes),
                edges: s.edges.unwrap_or(base.edges),
            };
            gen_mcf(seed, &cfg)
        }
        Example::Federated => {
            let base = if s.paper_scale { FederatedConfig::paper() } else { FederatedConfig::desk() };
            let cfg = FederatedConfig {
                features: s.features.unwrap_or(base.features),
                locations: s.locations.unwrap_or(base.locations),
                samples: s.samples.unwrap_or(base.samples),
                lambda: s.lambda.unwrap_or(base.lambda),
            };
            gen_federated(seed, &cfg)
        }
    }
}

fn solver_params(a: &RunArgs) -> SolverParams {
    let mut p = SolverParams::default();
    macro_rules! set {
        ($field:ident, $value:expr) => {
            if let Some(v) = $value {
                p.$field = v;
            }
        };
    }
    set!(max_iters, a.max_iters);
    set!(eps_abs, a.eps_abs);
    set!(eps_rel, a.eps_rel);
    set!(eta, a.eta);
    set!(discovery_iters, a.discovery_iters);
    set!(lb_period, a.lb_period);
    set!(memory, a.memory.map(|m| m.0));
    p.rho_override = a.rho;
    p.precondition = !a.no_precondition;
    p.parallel_agents = a.parallel_agents.is_some_and(|n| n > 1);
    p
}

/// Known optimal value, or the best lower bound when the instance has no
/// monolithic form.
enum Reference {
    Value(f64),
    Bound(f64),
}

fn fmt_num(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        v.to_string()
    }
}

fn write_trace(path: &Path, trace: &[IterationRecord], reference: Option<&Reference>) -> Result<()> {
    let file = fs::File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
    let mut w = BufWriter::new(file);
    writeln!(w, "{TRACE_HEADER}")?;
    for r in trace {
        let omega_true = match reference {
            Some(Reference::Value(h) | Reference::Bound(h)) => relative_gap(r.h_xk, *h).to_string(),
            None => String::new(),
        };
        let phase = match r.phase {
            Phase::Discovery => "discovery",
            Phase::Prox => "prox",
        };
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{}",
            r.k,
            r.h_xk,
            fmt_num(r.h_tilde),
            r.l_best,
            r.omega,
            omega_true,
            fmt_num(r.delta),
            u8::from(r.accepted),
            fmt_num(r.rho),
            phase,
            r.wall_ms
        )?;
    }
    w.flush()?;
    Ok(())
}

fn summary(name: &str, res: &SolveResult, wall_ms: f64, reference: Option<&Reference>) -> String {
    let status = match res.status {
        SolveStatus::GapAbs => "gap_abs",
        SolveStatus::GapRel => "gap_rel",
        SolveStatus::MaxIters => "max_iters",
    };
    let mut lines = vec![
        format!("instance={name}"),
        format!("status={status}"),
        format!("iterations={}", res.trace.len()),
        format!("h_best={}", res.h_best),
        format!("L_best={}", res.l_best),
        format!("omega_final={}", res.omega_final),
        format!("agent_queries={}", res.agent_queries),
        format!("wall_ms={wall_ms:.1}"),
    ];
    match reference {
        Some(Reference::Value(h)) => {
            lines.push(format!("h_star={h}"));
            lines.push(format!("omega_true={}", relative_gap(res.h_best, *h)));
        }
        Some(Reference::Bound(l)) => {
            lines.push(format!("h_star_lower_bound={l}"));
            lines.push(format!("omega_true_bound={}", relative_gap(res.h_best, *l)));
        }
        None => {}
    }
    lines.join("\n") + "\n"
}

fn run(a: &RunArgs) -> Result<SolveStatus> {
    let inst = match (&a.source.example, &a.source.instance) {
        (Some(ex), None) => generate(*ex, a.seed, &a.sizes)?,
        (None, Some(path)) => load_instance(path)?,
        _ => bail!("give exactly one of --example and --instance"),
    };
    let params = solver_params(a);
    params.validate()?;
    if let Some(n) = a.parallel_agents {
        if n == 0 {
            bail!("--parallel-agents needs at least one thread");
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    log::info!("solving {} with {} agents and {} public variables", inst.name, inst.agents.len(), inst.structured.n_public);

    let start = Instant::now();
    let res = inst.solve(&params)?;
    let wall_ms = start.elapsed().as_secs_f64() * 1e3;

    let reference = if a.reference {
        match reference_solve(&inst) {
            Ok(h) => Some(Reference::Value(h)),
            Err(Error::Unsupported(msg)) => {
                log::warn!("no monolithic reference ({msg}); reporting the gap to the best lower bound");
                Some(Reference::Bound(res.l_best))
            }
            Err(e) => return Err(e.into()),
        }
    } else {
        None
    };
    if let Some(path) = &a.trace {
        write_trace(path, &res.trace, reference.as_ref())?;
    }
    let text = summary(&inst.name, &res, wall_ms, reference.as_ref());
    io::stdout().write_all(text.as_bytes())?;
    if let Some(path) = &a.summary {
        fs::write(path, &text).with_context(|| format!("cannot write {}", path.display()))?;
    }
    Ok(res.status)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            // exit code 2 is reserved for runs that hit the iteration limit
            return if e.use_stderr() { ExitCode::FAILURE } else { ExitCode::SUCCESS };
        }
    };
    let outcome = match &cli.command {
        Command::Run(a) => run(a).map(|s| match s {
            SolveStatus::MaxIters => ExitCode::from(2),
            _ => ExitCode::SUCCESS,
        }),
        Command::Generate(g) => generate(g.example, g.seed, &g.sizes)
            .and_then(|inst| save_instance(&inst, &g.out))
            .map(|_| ExitCode::SUCCESS)
            .map_err(Into::into),
    };
    outcome.unwrap_or_else(|e| {
        eprintln!("error: {e:#}");
        ExitCode::FAILURE
    })
}
