//! Command-line driver: compile, run, bench and gen subcommands.
//!
//! Exit codes: 1 for usage problems and rejected option combinations,
//! 2 for parse or semantic errors, 3 for an inapplicable mode
//! transform, 4 for lowering failures, 5 for runtime errors and failed
//! oracle checks. Diagnostics go to stderr; results to stdout.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::ast::{IterKind, Program, StmtKind};
use crate::cfg::HostCfg;
use crate::gen;
use crate::lower::{
    emit_text, lower, verify_plan, CostModel, ExecutionPlan, Target, TargetKind,
};
use crate::oracle;
use crate::parser;
use crate::pretty;
use crate::runtime::{self, checksum, ExecOptions, ExecResult, WlSched};
use crate::sema;
use crate::transform;

#[derive(Parser)]
#[command(
    name = "falc",
    version,
    about = "Compiler and parallel runtime for a small graph-analytics DSL"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Compile a program and print its execution plan.
    Compile(CompileArgs),
    /// Compile a program and execute it on graph files.
    Run(RunArgs),
    /// Execute a matrix of variants and print one CSV row per cell.
    Bench(BenchArgs),
    /// Generate a graph file.
    Gen(GenArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Mode {
    /// Parallel loop over points, each visiting its neighbours.
    Vertex,
    /// Parallel loop over the edge list.
    Edge,
    /// Drain a worklist of pending points.
    Worklist,
}

impl Mode {
    fn name(self) -> &'static str {
        match self {
            Mode::Vertex => "vertex",
            Mode::Edge => "edge",
            Mode::Worklist => "worklist",
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum TargetOpt {
    Cpu,
    SimGpu,
    SimMultiGpu,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SchedOpt {
    Fifo,
    Delta,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum OracleKind {
    Bfs,
    Sssp,
    Cc,
    Mst,
}

/// Options shared by every command that compiles a program.
#[derive(Args, Clone)]
struct BuildOpts {
    /// Iteration form to compile to.
    #[arg(long, value_enum, default_value_t = Mode::Vertex)]
    mode: Mode,

    /// Barrier after every launch (the default).
    #[arg(long)]
    sync: bool,

    /// Let independent launches run without a barrier between them.
    #[arg(long = "async", conflicts_with = "sync")]
    async_: bool,

    #[arg(long, value_enum, default_value_t = TargetOpt::Cpu)]
    target: TargetOpt,

    /// Worker threads for parallel loops.
    #[arg(long, default_value_t = 1)]
    threads: usize,

    /// Simulated device count for sim-multi-gpu.
    #[arg(long, default_value_t = 2)]
    devices: usize,

    /// Keep the program untransformed when the requested mode does not
    /// apply, instead of failing.
    #[arg(long)]
    allow_fallback: bool,

    /// Accept option combinations the compiler would otherwise reject.
    #[arg(long)]
    force: bool,

    /// Cost charged per point visited by a parallel loop.
    #[arg(long, default_value_t = 1.0)]
    per_vertex_work: f64,

    /// Cost charged per edge relaxed.
    #[arg(long, default_value_t = 1.0)]
    per_edge_work: f64,

    /// Fixed cost of every host/device transfer.
    #[arg(long, default_value_t = 100.0)]
    transfer_latency: f64,

    /// Per-byte cost of transfers (8 bytes per value).
    #[arg(long, default_value_t = 0.01)]
    transfer_per_byte: f64,
}

#[derive(Args)]
struct CompileArgs {
    /// Program source file.
    source: PathBuf,

    #[command(flatten)]
    build: BuildOpts,

    /// Print the program after mode transforms, before lowering.
    #[arg(long)]
    dump_ast: bool,

    /// Print the host control-flow analysis (barriers, groups).
    #[arg(long)]
    dump_cfg: bool,

    /// Also write the plan text to a file.
    #[arg(long, value_name = "FILE")]
    emit_plan: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    /// Program source file.
    source: PathBuf,

    /// Graph files, bound to argv[1], argv[2], ... in order.
    graphs: Vec<String>,

    #[command(flatten)]
    build: BuildOpts,

    /// Worklist drain order.
    #[arg(long, value_enum, default_value_t = SchedOpt::Fifo)]
    sched: SchedOpt,

    /// Bucket width for --sched delta; default is the mean edge weight.
    #[arg(long)]
    delta: Option<i64>,

    /// Abort fixpoint loops after this many iterations; default is ten
    /// times the vertex count.
    #[arg(long)]
    iter_cap: Option<usize>,

    /// Collapse duplicate edges to their minimum weight at load time.
    #[arg(long)]
    dedup: bool,

    /// Check the result against a reference algorithm and print
    /// PASS or FAIL.
    #[arg(long, value_enum, value_name = "ALG")]
    verify_oracle: Option<OracleKind>,
}

#[derive(Args)]
struct BenchArgs {
    /// Program source files (repeatable).
    #[arg(long = "program", required = true, value_name = "FILE")]
    programs: Vec<PathBuf>,

    /// Graph files (repeatable); each cell runs on one graph.
    #[arg(long = "graph", required = true, value_name = "FILE")]
    graphs: Vec<String>,

    #[arg(long, value_enum, value_delimiter = ',', default_values_t = [Mode::Vertex])]
    modes: Vec<Mode>,

    /// Barrier schedules to try: sync, async or both.
    #[arg(long, value_delimiter = ',', default_values_t = [String::from("sync")])]
    schedules: Vec<String>,

    #[arg(long, value_enum, value_delimiter = ',', default_values_t = [TargetOpt::Cpu])]
    targets: Vec<TargetOpt>,

    #[arg(long, value_delimiter = ',', default_values_t = [1usize])]
    threads: Vec<usize>,

    /// Simulated device count for sim-multi-gpu cells.
    #[arg(long, default_value_t = 2)]
    devices: usize,

    #[arg(long, value_enum, default_value_t = SchedOpt::Fifo)]
    sched: SchedOpt,

    #[arg(long)]
    delta: Option<i64>,

    #[arg(long)]
    iter_cap: Option<usize>,

    #[arg(long)]
    dedup: bool,

    /// Accept cells the compiler would otherwise reject.
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct GenArgs {
    #[command(subcommand)]
    family: GenFamily,
}

#[derive(Subcommand)]
enum GenFamily {
    /// Uniform random graph: m arcs with independent endpoints.
    Er(ErArgs),
    /// Recursive-matrix graph with a skewed degree profile.
    Rmat(RmatArgs),
}

#[derive(Args)]
struct CommonGenArgs {
    /// Number of points.
    #[arg(long)]
    n: usize,

    /// Number of arcs (doubled by --symmetric).
    #[arg(long)]
    m: usize,

    #[arg(long, default_value_t = 1)]
    seed: u64,

    /// Write each arc in both directions.
    #[arg(long)]
    symmetric: bool,

    #[arg(long, default_value_t = 1)]
    wmin: i64,

    #[arg(long, default_value_t = 100)]
    wmax: i64,

    /// Output graph file.
    #[arg(short, long, value_name = "FILE")]
    out: PathBuf,

    /// Print degree statistics of the generated graph as CSV.
    #[arg(long)]
    stats: bool,
}

#[derive(Args)]
struct ErArgs {
    #[command(flatten)]
    common: CommonGenArgs,
}

#[derive(Args)]
struct RmatArgs {
    #[command(flatten)]
    common: CommonGenArgs,

    #[arg(long, default_value_t = 0.57)]
    a: f64,
    #[arg(long, default_value_t = 0.19)]
    b: f64,
    #[arg(long, default_value_t = 0.19)]
    c: f64,
    #[arg(long, default_value_t = 0.05)]
    d: f64,
}

// ---------------------------------------------------------------------------
// Entry point
// ---------------------------------------------------------------------------

struct CliError {
    code: i32,
    message: String,
}

fn fail(code: i32, message: impl Into<String>) -> CliError {
    CliError { code, message: message.into() }
}

pub fn run_cli() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            // Help and version requests arrive as errors too; only
            // real usage mistakes exit nonzero.
            let ok = e.use_stderr();
            let _ = e.print();
            return if ok { 1 } else { 0 };
        }
    };
    let result = match cli.cmd {
        Cmd::Compile(a) => cmd_compile(a),
        Cmd::Run(a) => cmd_run(a),
        Cmd::Bench(a) => cmd_bench(a),
        Cmd::Gen(a) => cmd_gen(a),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            if !e.message.is_empty() {
                eprintln!("falc: {}", e.message);
            }
            e.code
        }
    }
}

// ---------------------------------------------------------------------------
// Shared build pipeline
// ---------------------------------------------------------------------------

struct Built {
    /// Program after mode transforms, as lowered.
    program: Program,
    plan: ExecutionPlan,
}

impl BuildOpts {
    fn target_kind(&self) -> TargetKind {
        match self.target {
            TargetOpt::Cpu => TargetKind::HostThreads,
            TargetOpt::SimGpu => TargetKind::SimDevice,
            TargetOpt::SimMultiGpu => TargetKind::SimMultiDevice { devices: self.devices },
        }
    }

    fn cost(&self) -> CostModel {
        CostModel {
            per_vertex_work: self.per_vertex_work,
            per_edge_work: self.per_edge_work,
            transfer_latency: self.transfer_latency,
            transfer_per_byte: self.transfer_per_byte,
        }
    }

    fn check(&self) -> Result<(), CliError> {
        if self.threads == 0 {
            return Err(fail(1, "--threads must be at least 1"));
        }
        if self.target == TargetOpt::SimMultiGpu && self.devices == 0 {
            return Err(fail(1, "--devices must be at least 1"));
        }
        if self.mode == Mode::Worklist && self.target == TargetOpt::SimGpu && !self.force {
            return Err(fail(
                1,
                "worklist mode is not supported on sim-gpu: the simulated device \
                 cannot grow a worklist between kernel rounds (pass --force to \
                 run it anyway)",
            ));
        }
        Ok(())
    }
}

/// Iteration kinds of the kernel launches in main, for deciding which
/// transform realises a requested mode.
fn launch_iters(p: &Program) -> Vec<IterKind> {
    let mut iters = Vec::new();
    let Some(main) = p.main() else { return iters };
    crate::ast::visit_stmts(&main.body, &mut |s| {
        if let StmtKind::Foreach(fe) = &s.kind {
            if sema::launch_call(fe).is_some() {
                iters.push(fe.iter);
            }
        }
    });
    iters
}

fn apply_mode(p: Program, mode: Mode, allow_fallback: bool) -> Result<Program, CliError> {
    type Xf = fn(&Program) -> Result<Program, transform::TransformError>;
    let iters = launch_iters(&p);
    let has = |k: IterKind| iters.contains(&k);
    // A worklist launch has no reverse transform; other combinations
    // either already match or convert through the vertex form.
    let steps: Result<Vec<Xf>, &str> = match mode {
        Mode::Vertex | Mode::Edge if has(IterKind::Items) => {
            Err("a worklist program has no plain vertex or edge form")
        }
        Mode::Vertex if has(IterKind::Edges) => Ok(vec![transform::edge_to_vertex]),
        Mode::Edge if !has(IterKind::Edges) => Ok(vec![transform::vertex_to_edge]),
        Mode::Worklist if has(IterKind::Edges) => {
            Ok(vec![transform::edge_to_vertex, transform::to_worklist])
        }
        Mode::Worklist if !has(IterKind::Items) => Ok(vec![transform::to_worklist]),
        // Already in the requested form.
        _ => Ok(vec![]),
    };
    let steps = match steps {
        Ok(s) => s,
        Err(why) if allow_fallback => {
            eprintln!("falc: {why}; continuing with the untransformed program");
            return Ok(p);
        }
        Err(why) => return Err(fail(3, why)),
    };
    let mut out = p;
    for step in steps {
        match step(&out) {
            Ok(next) => out = next,
            Err(e) if allow_fallback => {
                eprintln!("falc: {e}; continuing with the untransformed program");
                return Ok(out);
            }
            Err(e) => return Err(fail(3, e.to_string())),
        }
    }
    Ok(out)
}

fn build(source: &Path, opts: &BuildOpts) -> Result<Built, CliError> {
    opts.check()?;
    let src = std::fs::read_to_string(source)
        .map_err(|e| fail(1, format!("cannot read {}: {e}", source.display())))?;
    let name = source.display();
    let parsed = parser::parse(&src).map_err(|e| fail(2, format!("{name}: {e}")))?;
    let program = apply_mode(parsed, opts.mode, opts.allow_fallback)?;
    let table = match sema::resolve(&program) {
        Ok(t) => t,
        Err(errs) => {
            let lines: Vec<String> = errs.iter().map(|e| format!("{name}: {e}")).collect();
            return Err(fail(2, lines.join("\n")));
        }
    };
    let cfg = HostCfg::analyze(&program, &table);
    let target = Target { kind: opts.target_kind(), threads: opts.threads, cost: opts.cost() };
    let sync = !opts.async_;
    let plan = lower(&program, &table, &cfg, target, sync)
        .map_err(|e| fail(4, format!("{name}: {e}")))?;
    verify_plan(&plan).map_err(|e| fail(4, format!("{name}: inconsistent plan: {e}")))?;
    Ok(Built { program, plan })
}

fn exec_options(
    threads: usize,
    sched: SchedOpt,
    delta: Option<i64>,
    iter_cap: Option<usize>,
    dedup: bool,
) -> ExecOptions {
    ExecOptions {
        threads,
        iter_cap,
        sched: match sched {
            SchedOpt::Fifo => WlSched::Fifo,
            SchedOpt::Delta => WlSched::DeltaStepping,
        },
        delta,
        dedup_edges: dedup,
        trace_access: false,
    }
}

// ---------------------------------------------------------------------------
// compile
// ---------------------------------------------------------------------------

fn cmd_compile(args: CompileArgs) -> Result<(), CliError> {
    let built = build(&args.source, &args.build)?;
    if args.dump_ast {
        println!("# ast after transforms");
        print!("{}", pretty::pretty_print(&built.program));
        println!();
    }
    if args.dump_cfg {
        let table = sema::resolve(&built.program).expect("program already resolved");
        let cfg = HostCfg::analyze(&built.program, &table);
        println!("# host control flow");
        print!("{}", cfg.dump());
        println!();
    }
    let text = emit_text(&built.plan);
    if let Some(path) = &args.emit_plan {
        std::fs::write(path, &text)
            .map_err(|e| fail(1, format!("cannot write {}: {e}", path.display())))?;
    }
    print!("{text}");
    Ok(())
}

// ---------------------------------------------------------------------------
// run
// ---------------------------------------------------------------------------

fn cmd_run(args: RunArgs) -> Result<(), CliError> {
    let built = build(&args.source, &args.build)?;
    let opts = exec_options(
        args.build.threads,
        args.sched,
        args.delta,
        args.iter_cap,
        args.dedup,
    );
    let result = runtime::execute(&built.plan, &args.graphs, &opts)
        .map_err(|e| fail(5, e.to_string()))?;
    print!("{}", summarize(&built.plan, &result));
    if let Some(kind) = args.verify_oracle {
        let verdict = verify_against_oracle(&built.plan, &args.graphs, &opts, &result, kind)?;
        let alg = match kind {
            OracleKind::Bfs => "bfs",
            OracleKind::Sssp => "sssp",
            OracleKind::Cc => "cc",
            OracleKind::Mst => "mst",
        };
        println!("oracle {alg}: {}", if verdict { "PASS" } else { "FAIL" });
        if !verdict {
            return Err(fail(5, String::new()));
        }
    }
    Ok(())
}

/// Cost totals are sums of 0.01-granularity pieces; four decimals keep the
/// exact value while hiding float round-off like `1447.7199999999996`.
fn fmt_cost(c: f64) -> String {
    if c.fract().abs() < 1e-9 {
        format!("{c:.0}")
    } else {
        let s = format!("{c:.4}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

fn summarize(plan: &ExecutionPlan, r: &ExecResult) -> String {
    let mut out = String::new();
    for (graph, prop) in &plan.symbols.props {
        if let Some(vals) = r.props.get(&(graph.clone(), prop.clone())) {
            let _ = writeln!(out, "{graph}.{prop} checksum = {}", checksum(vals));
        }
    }
    for (name, _) in &plan.symbols.globals {
        let _ = writeln!(out, "{name} = {}", r.globals[name]);
    }
    let _ = writeln!(out, "simCost = {}", fmt_cost(r.sim_cost));
    let _ = writeln!(out, "transferCount = {}", r.transfer_count);
    out
}

/// Reload the first input graph and compare the run's result with the
/// matching reference algorithm.
fn verify_against_oracle(
    plan: &ExecutionPlan,
    graphs: &[String],
    opts: &ExecOptions,
    r: &ExecResult,
    kind: OracleKind,
) -> Result<bool, CliError> {
    let path = graphs
        .first()
        .ok_or_else(|| fail(1, "--verify-oracle needs a graph argument"))?;
    let (n, edges) = gen::read_graph(Path::new(path)).map_err(|e| fail(5, e.to_string()))?;
    let edges = if opts.dedup_edges { gen::dedup_min_weight(&edges) } else { edges };
    let store = crate::graph::GraphStore::new(n, edges).map_err(|e| fail(5, e.to_string()))?;
    let graph = plan
        .symbols
        .graphs
        .first()
        .ok_or_else(|| fail(5, "program declares no graph to verify"))?;
    let prop = |name: &str| r.props.get(&(graph.clone(), name.to_string()));
    Ok(match kind {
        OracleKind::Bfs => {
            prop("dist").map(|d| d == &oracle::bfs_levels(&store, 0, 1234567890)) == Some(true)
        }
        OracleKind::Sssp => {
            let want = oracle::dijkstra(&store, 0, runtime::MAX_INT);
            prop("dist").map(|d| d == &want) == Some(true)
        }
        OracleKind::Cc => {
            prop("comp").map(|c| c == &oracle::min_label_components(&store)) == Some(true)
        }
        OracleKind::Mst => {
            r.globals.get("mstwt").copied() == Some(oracle::spanning_forest_weight(&store))
        }
    })
}

// ---------------------------------------------------------------------------
// bench
// ---------------------------------------------------------------------------

fn cmd_bench(args: BenchArgs) -> Result<(), CliError> {
    let mut schedules = Vec::new();
    for s in &args.schedules {
        match s.as_str() {
            "sync" => schedules.push(true),
            "async" => schedules.push(false),
            other => return Err(fail(1, format!("unknown schedule {other:?}"))),
        }
    }
    println!(
        "program,graph,mode,sync,target,threads,wallMillis,simCost,\
         transferCount,loadImbalanceCV,kernelInvocations"
    );
    for program in &args.programs {
        for graph in &args.graphs {
            for &mode in &args.modes {
                for &sync in &schedules {
                    for &target in &args.targets {
                        for &threads in &args.threads {
                            let row = bench_cell(
                                &args, program, graph, mode, sync, target, threads,
                            );
                            println!("{row}");
                        }
                    }
                }
            }
        }
    }
    Ok(())
}

fn stem(p: &Path) -> String {
    p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

#[allow(clippy::too_many_arguments)]
fn bench_cell(
    args: &BenchArgs,
    program: &Path,
    graph: &str,
    mode: Mode,
    sync: bool,
    target: TargetOpt,
    threads: usize,
) -> String {
    let id = format!(
        "{},{},{},{},{},{}",
        stem(program),
        stem(Path::new(graph)),
        mode.name(),
        if sync { "sync" } else { "async" },
        match target {
            TargetOpt::Cpu => "cpu",
            TargetOpt::SimGpu => "sim-gpu",
            TargetOpt::SimMultiGpu => "sim-multi-gpu",
        },
        threads
    );
    let cell_opts = BuildOpts {
        mode,
        sync,
        async_: !sync,
        target,
        threads,
        devices: args.devices,
        allow_fallback: false,
        force: args.force,
        per_vertex_work: 1.0,
        per_edge_work: 1.0,
        transfer_latency: 100.0,
        transfer_per_byte: 0.01,
    };
    let cell = (|| -> Result<String, CliError> {
        let built = build(program, &cell_opts)?;
        let opts =
            exec_options(threads, args.sched, args.delta, args.iter_cap, args.dedup);
        let start = Instant::now();
        let r = runtime::execute(&built.plan, &[graph.to_string()], &opts)
            .map_err(|e| fail(5, e.to_string()))?;
        let wall = start.elapsed().as_secs_f64() * 1e3;
        Ok(format!(
            "{wall:.3},{},{},{:.4},{}",
            fmt_cost(r.sim_cost),
            r.transfer_count,
            r.load_imbalance(),
            r.kernel_invocations
        ))
    })();
    match cell {
        Ok(tail) => format!("{id},{tail}"),
        Err(e) => {
            if !e.message.is_empty() {
                eprintln!("falc: {}: {}", stem(program), e.message);
            }
            format!("{id},FAILED")
        }
    }
}

// ---------------------------------------------------------------------------
// gen
// ---------------------------------------------------------------------------

fn cmd_gen(args: GenArgs) -> Result<(), CliError> {
    let common = match &args.family {
        GenFamily::Er(er) => &er.common,
        GenFamily::Rmat(rm) => &rm.common,
    };
    if common.wmin > common.wmax {
        return Err(fail(1, "--wmin exceeds --wmax"));
    }
    let (common, n, edges) = match args.family {
        GenFamily::Er(er) => {
            let c = er.common;
            if c.n < 2 {
                return Err(fail(1, "--n must be at least 2"));
            }
            let edges = gen::gen_er(c.n, c.m, c.seed, c.symmetric, c.wmin, c.wmax);
            let n = c.n;
            (c, n, edges)
        }
        GenFamily::Rmat(rm) => {
            let c = rm.common;
            if !c.n.is_power_of_two() {
                return Err(fail(1, format!("--n {} is not a power of two", c.n)));
            }
            let total = rm.a + rm.b + rm.c + rm.d;
            if (total - 1.0).abs() > 1e-9 {
                return Err(fail(
                    1,
                    format!("quadrant probabilities sum to {total}, expected 1"),
                ));
            }
            let (n, edges) =
                gen::gen_rmat(c.n, c.m, c.seed, c.symmetric, (rm.a, rm.b, rm.c, rm.d), c.wmin, c.wmax);
            (c, n, edges)
        }
    };
    gen::write_graph(&common.out, n, &edges)
        .map_err(|e| fail(1, format!("cannot write {}: {e}", common.out.display())))?;
    if common.stats {
        let s = gen::stats(n, &edges);
        println!("points,edges,minDegree,maxDegree,avgDegree,isolated");
        println!(
            "{},{},{},{},{:.4},{}",
            s.points, s.edges, s.min_degree, s.max_degree, s.avg_degree, s.isolated
        );
    }
    Ok(())
}
