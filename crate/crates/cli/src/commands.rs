use std::fmt;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use anyhow::{Context, Result};
use homrf_core::compare::{compare, parse_solver_list, Comparison, ComparisonEntry};
use homrf_core::model::generators::{
    gen_clique_path, gen_grid_curvature, gen_point_matching, gen_random_model, gen_random_tree, grid_chains,
    GridOptions, MatchingOptions, MatchingUnaries, RandomModelOptions, TreeOptions,
};
use homrf_core::model::io::{format_labeling, load_model, parse_chains, parse_labeling, save_model};
use homrf_core::model::DEFAULT_ENUMERATION_CAP;
use homrf_core::trace::TRACE_VERSION;
use homrf_core::{
    brute_force_map, build_chain_decomposition, build_clique_decomposition, Decomposition, MrfModel, SolveResult,
    Solver, TraceEvent, TrnConfig,
};
use serde_json::json;

use crate::args::{
    CompareArgs, ConfigArgs, DecompositionArg, EvaluateArgs, GenerateArgs, GenerateKind, SolveArgs, SolverArg,
    UnariesArg,
};

/// Bad flags or flag combinations; exits with status 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn config(args: &ConfigArgs) -> Result<TrnConfig> {
    let c = args.to_config();
    c.validate().map_err(|e| usage(e.to_string()))?;
    Ok(c)
}

fn read_model(path: &Path) -> Result<MrfModel> {
    load_model(path).with_context(|| format!("reading model {}", path.display()))
}

fn read_chains(model: &MrfModel, path: &Path) -> Result<Decomposition> {
    let text = fs::read_to_string(path).with_context(|| format!("reading chains {}", path.display()))?;
    let chains = parse_chains(&text).with_context(|| format!("parsing chains {}", path.display()))?;
    Ok(build_chain_decomposition(model, &chains)?)
}

fn write(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn emit_json(path: Option<&Path>, value: &serde_json::Value) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    match path {
        Some(p) => write(p, &text),
        None => {
            std::io::stdout().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

fn solver(arg: SolverArg) -> Solver {
    match arg {
        SolverArg::Trn => Solver::Trn,
        SolverArg::Qn => Solver::Qn,
        SolverArg::Fista => Solver::Fista,
    }
}

fn counters(r: &SolveResult) -> serde_json::Value {
    let steps = &r.trace.steps;
    let events = |e: TraceEvent| r.trace.rows.iter().filter(|row| row.event == e).count();
    json!({
        "oracle_calls": r.report.oracle_calls,
        "outer_iterations": r.report.outer_iterations,
        "trace_rows": r.trace.rows.len(),
        "anneals": events(TraceEvent::Anneal),
        "backtracks": events(TraceEvent::Backtrack),
        "cg_iterations": steps.iter().map(|s| s.cg_iterations).sum::<usize>(),
        "line_search_failures": steps.iter().filter(|s| s.line_search_failed).count(),
        "noise_floor_steps": steps.iter().filter(|s| s.noise_floor).count(),
    })
}

pub fn solve(args: &SolveArgs) -> Result<()> {
    let cfg = config(&args.config)?;
    let model = read_model(&args.model)?;
    let solver = solver(args.solver);
    let (dec, dec_name) = match (args.decomposition, &args.chains) {
        (DecompositionArg::Cliques, None) => (build_clique_decomposition(&model), "cliques"),
        (DecompositionArg::Cliques, Some(_)) => return Err(usage("--chains requires --decomposition chains")),
        (DecompositionArg::Chains, None) => return Err(usage("--decomposition chains requires --chains")),
        (DecompositionArg::Chains, Some(_)) if !solver.supports_chains() => {
            return Err(usage(format!("solver {solver} needs the clique decomposition")))
        }
        (DecompositionArg::Chains, Some(p)) => (read_chains(&model, p)?, "chains"),
    };
    let result = solver.run(&model, &dec, &cfg)?;

    if let Some(p) = &args.trace {
        write(p, &result.trace.to_csv())?;
    }
    if let Some(p) = &args.labeling {
        write(p, &format_labeling(&result.labeling))?;
    }
    if let Some(p) = &args.duals {
        write(p, &result.delta.iter().map(|v| format!("{v}\n")).collect::<String>())?;
    }
    let report = json!({
        "trace_version": TRACE_VERSION,
        "command": "solve",
        "model": args.model.display().to_string(),
        "solver": solver,
        "decomposition": dec_name,
        "threads": rayon::current_num_threads(),
        "config": cfg,
        "result": result.report,
        "labeling": result.labeling,
        "counters": counters(&result),
    });
    emit_json(args.report.as_deref(), &report)?;

    let table = Comparison {
        entries: vec![ComparisonEntry { solver, decomposition: dec_name, report: result.report.clone() }],
    };
    eprint!("{}", table.to_table());
    Ok(())
}

pub fn compare_cmd(args: &CompareArgs) -> Result<()> {
    let solvers = parse_solver_list(&args.solvers).map_err(|e| usage(e.to_string()))?;
    let cfg = config(&args.config)?;
    let model = read_model(&args.model)?;
    let chains = args.chains.as_deref().map(|p| read_chains(&model, p)).transpose()?;
    let cmp = compare(&model, chains.as_ref(), &solvers, &cfg)?;
    print!("{}", cmp.to_table());
    if let Some(p) = &args.report {
        let report = json!({
            "trace_version": TRACE_VERSION,
            "command": "compare",
            "model": args.model.display().to_string(),
            "threads": rayon::current_num_threads(),
            "config": cfg,
            "entries": cmp.entries,
        });
        emit_json(Some(p), &report)?;
    }
    Ok(())
}

pub fn evaluate(args: &EvaluateArgs) -> Result<()> {
    let model = read_model(&args.model)?;
    let text = fs::read_to_string(&args.labeling).with_context(|| format!("reading {}", args.labeling.display()))?;
    let x = parse_labeling(&text)?;
    let energy = model.energy(&x)?;
    let mut out = json!({ "energy": energy });
    if args.brute_force {
        let (best, map) = brute_force_map(&model, DEFAULT_ENUMERATION_CAP)?;
        out["map_energy"] = json!(map);
        out["map_labeling"] = json!(best);
    }
    emit_json(None, &out)
}

pub fn generate(args: &GenerateArgs) -> Result<()> {
    let seed = args.seed;
    let (model, chains) = match &args.kind {
        GenerateKind::Matching { n, sigma, k_neighbors, unaries } => {
            let unaries = match unaries {
                UnariesArg::Index => MatchingUnaries::IndexDistance,
                UnariesArg::Zero => MatchingUnaries::Zero,
            };
            let opts = MatchingOptions { n: *n, sigma: *sigma, k_neighbors: *k_neighbors, seed, unaries };
            (gen_point_matching(&opts).map_err(|e| usage(e.to_string()))?, None)
        }
        GenerateKind::Grid { width, height, labels, trunc, unary_scale } => {
            let opts = GridOptions {
                width: *width,
                height: *height,
                labels: *labels,
                trunc: *trunc,
                unary_scale: *unary_scale,
                seed,
            };
            (gen_grid_curvature(&opts).map_err(|e| usage(e.to_string()))?, Some(grid_chains(*width, *height)))
        }
        GenerateKind::Tree { nodes, max_labels, max_order, scale } => {
            let opts =
                TreeOptions { nodes: *nodes, max_labels: *max_labels, max_order: *max_order, scale: *scale, seed };
            (gen_random_tree(&opts).map_err(|e| usage(e.to_string()))?, None)
        }
        GenerateKind::Path { cliques, order, labels, scale } => {
            let (m, chain) =
                gen_clique_path(*cliques, *order, *labels, *scale, seed).map_err(|e| usage(e.to_string()))?;
            (m, Some(vec![chain]))
        }
        GenerateKind::Random { nodes, cliques, max_order, max_labels, pattern_probability, scale } => {
            let opts = RandomModelOptions {
                nodes: *nodes,
                cliques: *cliques,
                max_order: *max_order,
                max_labels: *max_labels,
                pattern_probability: *pattern_probability,
                scale: *scale,
                seed,
            };
            (gen_random_model(&opts).map_err(|e| usage(e.to_string()))?, None)
        }
    };
    match (&args.chains_out, chains) {
        (Some(p), Some(c)) => write(p, &homrf_core::model::io::format_chains(&c))?,
        (Some(_), None) => return Err(usage("this generator defines no chains")),
        (None, _) => {}
    }
    save_model(&model, &args.out).with_context(|| format!("writing {}", args.out.display()))
}
