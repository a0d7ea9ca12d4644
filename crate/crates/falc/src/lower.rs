//! Lowering to an execution plan.
//!
//! A plan is a structured step list mirroring main's control flow:
//! launches (grouped when the barrier analysis allows it), host
//! statements, and for simulated-device targets the device allocations
//! and host/device transfers that keep every access coherent. Three
//! targets exist: host threads (no devices, no transfers), one
//! simulated device (all kernels on device 0), and multiple simulated
//! devices (each parallel section mapped to its own device).
//!
//! Transfer insertion walks the step tree with a residency map. Every
//! object starts host-dirty; a device access of a host-dirty object
//! copies it down immediately before the launch, a host read of a
//! device-dirty object copies it up immediately before the statement,
//! and a trailing sweep copies device-dirty objects back so final state
//! is always host-visible. Loops get two refinements: objects the
//! device touches but the host never writes inside the loop are copied
//! once before the loop instead of every iteration, and the body is
//! entered with device-written objects assumed device-dirty so the
//! second and later iterations see correct placements. Copying an
//! object down even when the kernel only writes it keeps a skipped loop
//! or branch from ever leaving a stale device copy behind.

use crate::ast::*;
use crate::cfg::HostCfg;
use crate::pretty::{print_expr, print_function, print_stmt_inline};
use crate::sema::{self, Access, SymbolTable};
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use thiserror::Error;

#[derive(Debug, Error)]
#[error("{message}")]
pub struct LoweringError {
    pub message: String,
}

fn err(message: impl Into<String>) -> LoweringError {
    LoweringError { message: message.into() }
}

/// Abstract cost units charged by the simulator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostModel {
    pub per_vertex_work: f64,
    pub per_edge_work: f64,
    pub transfer_latency: f64,
    pub transfer_per_byte: f64,
}

impl Default for CostModel {
    fn default() -> Self {
        CostModel {
            per_vertex_work: 1.0,
            per_edge_work: 1.0,
            transfer_latency: 100.0,
            transfer_per_byte: 0.01,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TargetKind {
    HostThreads,
    SimDevice,
    SimMultiDevice { devices: usize },
}

impl TargetKind {
    pub fn name(self) -> &'static str {
        match self {
            TargetKind::HostThreads => "cpu",
            TargetKind::SimDevice => "sim-gpu",
            TargetKind::SimMultiDevice { .. } => "sim-multi-gpu",
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Target {
    pub kind: TargetKind,
    pub threads: usize,
    pub cost: CostModel,
}

/// A data object that can live on a device: the topology of one graph
/// (CSR, edge list and weights together), one property array, one
/// scalar global, a union-find set or a worklist collection.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum ObjId {
    Topology(String),
    Prop { graph: String, prop: String },
    Global(String),
    SetObj(String),
    Coll(String),
}

impl fmt::Display for ObjId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ObjId::Topology(g) => write!(f, "{g}.topology"),
            ObjId::Prop { graph, prop } => write!(f, "{graph}.{prop}"),
            ObjId::Global(n) | ObjId::SetObj(n) | ObjId::Coll(n) => write!(f, "{n}"),
        }
    }
}

impl ObjId {
    /// Topology never changes after the graph is read, so it can sit on
    /// several devices at once; everything else must stay single-homed.
    fn mutable(&self) -> bool {
        !matches!(self, ObjId::Topology(_))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DeviceSlot {
    Host,
    Dev(usize),
}

impl fmt::Display for DeviceSlot {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DeviceSlot::Host => write!(f, "host"),
            DeviceSlot::Dev(d) => write!(f, "{d}"),
        }
    }
}

/// One kernel inside a launch group, with everything the executor
/// needs: the iteration space, the call arguments and the object sets.
#[derive(Debug, Clone)]
pub struct KernelLaunch {
    pub sid: StmtId,
    pub kernel: String,
    pub var: String,
    pub subject: Expr,
    pub iter: IterKind,
    pub filter: Option<Expr>,
    pub args: Vec<Expr>,
    pub graph_var: Option<String>,
    pub coll_var: Option<String>,
    /// Property the kernel lowers with MIN, when draining a worklist;
    /// delta-stepping buckets by it.
    pub key_prop: Option<(String, String)>,
    pub reads: BTreeSet<ObjId>,
    pub writes: BTreeSet<ObjId>,
}

#[derive(Debug, Clone)]
pub struct LaunchStep {
    pub dev: DeviceSlot,
    pub group: Vec<KernelLaunch>,
    /// True when execution must join before the next step. Groups of
    /// several kernels always run their members concurrently; the flag
    /// covers only the trailing edge.
    pub barrier: bool,
}

#[derive(Debug, Clone)]
pub enum Step {
    Alloc { dev: usize, obj: ObjId },
    Transfer { dev: usize, obj: ObjId, to_device: bool },
    Launch(LaunchStep),
    Host { stmt: Stmt, reads: BTreeSet<ObjId>, writes: BTreeSet<ObjId> },
    While { cond: Expr, cond_reads: BTreeSet<ObjId>, body: Vec<Step> },
    If { cond: Expr, cond_reads: BTreeSet<ObjId>, then_steps: Vec<Step>, else_steps: Vec<Step> },
    Sections { sections: Vec<Vec<Step>> },
    Break,
    Return,
}

/// Symbol inventory the executor needs to build its state: every name
/// in declaration order, plus global initial values. Makes a plan
/// self-contained.
#[derive(Debug, Clone, Default)]
pub struct PlanSymbols {
    pub graphs: Vec<String>,
    pub props: Vec<(String, String)>,
    pub globals: Vec<(String, i64)>,
    /// (set name, graph it partitions)
    pub sets: Vec<(String, String)>,
    pub colls: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct ExecutionPlan {
    pub target: Target,
    pub sync: bool,
    /// Kernel definitions in program order.
    pub kernels: Vec<FunctionDecl>,
    pub symbols: PlanSymbols,
    /// All device-relevant objects in declaration order; fixes alloc
    /// and sweep ordering.
    pub obj_order: Vec<ObjId>,
    pub steps: Vec<Step>,
}

// ---------------------------------------------------------------------------
// Lowering proper
// ---------------------------------------------------------------------------

pub fn lower(
    program: &Program,
    table: &SymbolTable,
    cfg: &HostCfg,
    target: Target,
    sync: bool,
) -> Result<ExecutionPlan, LoweringError> {
    let main = program.main().ok_or_else(|| err("program has no main"))?;
    let flags = cfg.launch_flags();
    let infos: HashMap<StmtId, sema::TargetFunctionInfo> = sema::find_target_functions(program, table)
        .into_iter()
        .map(|i| (i.launch_sid, i))
        .collect();

    if let TargetKind::SimMultiDevice { devices } = target.kind {
        let sections = main
            .body
            .stmts
            .iter()
            .find_map(|s| match &s.kind {
                StmtKind::ParallelSections { sections } => Some(sections.len()),
                _ => None,
            })
            .ok_or_else(|| {
                err("multi-device target needs a parallel sections statement in main")
            })?;
        if sections > devices {
            return Err(err(format!(
                "{sections} parallel sections but only {devices} devices"
            )));
        }
    }

    let mut lw = Lowerer { program, table, flags: &flags, infos: &infos, sync, target, main };
    let steps = lw.build_block(&main.body, None)?;

    let launched: BTreeSet<&str> = infos.values().map(|i| i.name.as_str()).collect();
    let kernels = program
        .functions
        .iter()
        .filter(|f| launched.contains(f.name.as_str()))
        .cloned()
        .collect();

    let mut plan = ExecutionPlan {
        target,
        sync,
        kernels,
        symbols: plan_symbols(table),
        obj_order: object_order(table),
        steps,
    };

    if !matches!(target.kind, TargetKind::HostThreads) {
        check_single_home(&plan)?;
        plan = insert_transfers(plan)?;
    }
    Ok(plan)
}

fn plan_symbols(table: &SymbolTable) -> PlanSymbols {
    let mut sym = PlanSymbols::default();
    sym.graphs = table.graph_vars.clone();
    for g in &table.graph_vars {
        if let Some(props) = table.props.get(g) {
            for p in props {
                sym.props.push((g.clone(), p.name.clone()));
            }
        }
    }
    for g in &table.globals {
        sym.globals.push((g.name.clone(), const_int(&g.init)));
    }
    for (s, g) in &table.set_vars {
        sym.sets.push((s.clone(), g.clone()));
    }
    sym.colls = table.coll_vars.clone();
    sym
}

/// Global initializers are literals; anything else defaults to zero
/// (the semantic pass has already rejected genuinely bad ones).
fn const_int(e: &Expr) -> i64 {
    match &e.kind {
        ExprKind::Int(v) => *v,
        ExprKind::MaxInt => 2147483647,
        ExprKind::Unary { op: UnOp::Neg, expr } => -const_int(expr),
        _ => 0,
    }
}

/// Deterministic ordering over every object a device could hold.
fn object_order(table: &SymbolTable) -> Vec<ObjId> {
    let mut order = Vec::new();
    for g in &table.graph_vars {
        order.push(ObjId::Topology(g.clone()));
        if let Some(props) = table.props.get(g) {
            for p in props {
                order.push(ObjId::Prop { graph: g.clone(), prop: p.name.clone() });
            }
        }
    }
    for g in &table.globals {
        order.push(ObjId::Global(g.name.clone()));
    }
    for s in table.set_vars.keys() {
        order.push(ObjId::SetObj(s.clone()));
    }
    for c in &table.coll_vars {
        order.push(ObjId::Coll(c.clone()));
    }
    order
}

struct Lowerer<'a> {
    program: &'a Program,
    table: &'a SymbolTable,
    flags: &'a BTreeMap<StmtId, bool>,
    infos: &'a HashMap<StmtId, sema::TargetFunctionInfo>,
    sync: bool,
    target: Target,
    main: &'a FunctionDecl,
}

impl<'a> Lowerer<'a> {
    /// `section`: index of the enclosing parallel section, if any.
    fn build_block(
        &mut self,
        block: &Block,
        section: Option<usize>,
    ) -> Result<Vec<Step>, LoweringError> {
        let mut out: Vec<Step> = Vec::new();
        for stmt in &block.stmts {
            match &stmt.kind {
                StmtKind::Break => out.push(Step::Break),
                StmtKind::Return { .. } => out.push(Step::Return),
                StmtKind::While { cond, body } => {
                    let cond_reads = self.cond_objs(stmt);
                    let body = self.build_block(body, section)?;
                    out.push(Step::While { cond: cond.clone(), cond_reads, body });
                }
                StmtKind::If { cond, then_blk, else_blk } => {
                    let cond_reads = self.cond_objs(stmt);
                    let then_steps = self.build_block(then_blk, section)?;
                    let else_steps = match else_blk {
                        Some(b) => self.build_block(b, section)?,
                        None => Vec::new(),
                    };
                    out.push(Step::If { cond: cond.clone(), cond_reads, then_steps, else_steps });
                }
                StmtKind::ParallelSections { sections } => {
                    let mut lowered = Vec::new();
                    for (i, sec) in sections.iter().enumerate() {
                        if section.is_some() {
                            return Err(err("nested parallel sections are not supported"));
                        }
                        lowered.push(self.build_block(sec, Some(i))?);
                    }
                    out.push(Step::Sections { sections: lowered });
                }
                StmtKind::Foreach(fe) if self.infos.contains_key(&stmt.sid) => {
                    let kl = self.make_launch(stmt, fe)?;
                    let dev = self.launch_device(section);
                    // A worklist drain always joins: the host re-reads the
                    // collection's size to decide whether to go around again.
                    let barrier = if fe.iter == IterKind::Items || self.sync {
                        true
                    } else {
                        self.flags.get(&stmt.sid).copied().unwrap_or(true)
                    };
                    match out.last_mut() {
                        Some(Step::Launch(prev)) if !prev.barrier && prev.dev == dev => {
                            prev.group.push(kl);
                            prev.barrier = barrier;
                        }
                        _ => out.push(Step::Launch(LaunchStep { dev, group: vec![kl], barrier })),
                    }
                }
                _ => {
                    let (reads, writes) = self.host_objs(stmt);
                    out.push(Step::Host { stmt: stmt.clone(), reads, writes });
                }
            }
        }
        Ok(out)
    }

    fn launch_device(&self, section: Option<usize>) -> DeviceSlot {
        match self.target.kind {
            TargetKind::HostThreads => DeviceSlot::Host,
            TargetKind::SimDevice => DeviceSlot::Dev(0),
            TargetKind::SimMultiDevice { .. } => DeviceSlot::Dev(section.unwrap_or(0)),
        }
    }

    fn make_launch(&self, stmt: &Stmt, fe: &ForeachStmt) -> Result<KernelLaunch, LoweringError> {
        let info = &self.infos[&stmt.sid];
        let (_, args) = sema::launch_call(fe)
            .ok_or_else(|| err(format!("launch at {} has no callee", stmt.pos)))?;
        let mut reads = access_objs(&info.access.reads);
        let writes = access_objs(&info.access.writes);
        // The iteration space itself: points and edges come from the
        // graph, worklist items from the collection (already in the
        // sets via the drain's read of the collection).
        if let Some(g) = &info.graph_var {
            reads.insert(ObjId::Topology(g.clone()));
        }
        if let Some(g) = find_graph_arg(self.program, &info.name, args) {
            reads.insert(ObjId::Topology(g.clone()));
        }
        let key_prop = if fe.iter == IterKind::Items {
            find_key_prop(self.program, &info.name, args)
        } else {
            None
        };
        Ok(KernelLaunch {
            sid: stmt.sid,
            kernel: info.name.clone(),
            var: fe.var.clone(),
            subject: fe.subject.clone(),
            iter: fe.iter,
            filter: fe.filter.clone(),
            args: args.to_vec(),
            graph_var: info.graph_var.clone(),
            coll_var: info.coll_var.clone(),
            key_prop,
            reads,
            writes,
        })
    }

    fn host_objs(&self, stmt: &Stmt) -> (BTreeSet<ObjId>, BTreeSet<ObjId>) {
        let acc = sema::compute_stmt_rw_sets(self.program, self.table, self.main, stmt);
        let mut reads = access_objs(&acc.reads);
        let mut writes = access_objs(&acc.writes);
        // Graph loading and property creation write objects the access
        // sets do not model as such.
        match &stmt.kind {
            StmtKind::Expr { expr } => match &expr.kind {
                ExprKind::Method { base, name, .. } if name == "read" => {
                    if let ExprKind::Var(g) = &base.kind {
                        writes.insert(ObjId::Topology(g.clone()));
                    }
                }
                ExprKind::AddProperty { graph, prop, .. } => {
                    if let ExprKind::Var(g) = &graph.kind {
                        writes.insert(ObjId::Prop { graph: g.clone(), prop: prop.clone() });
                    }
                }
                _ => {}
            },
            StmtKind::VarDecl { decls } => {
                for d in decls {
                    if d.ty == DslType::Set {
                        writes.insert(ObjId::SetObj(d.name.clone()));
                    }
                    if d.ty == DslType::Collection {
                        writes.insert(ObjId::Coll(d.name.clone()));
                    }
                }
            }
            _ => {}
        }
        reads.remove(&ObjId::Global("argv".into()));
        (reads, writes)
    }

    fn cond_objs(&self, stmt: &Stmt) -> BTreeSet<ObjId> {
        let acc = sema::compute_cond_rw_sets(self.program, self.table, self.main, stmt);
        access_objs(&acc.reads)
    }
}

/// Convert a semantic access set into device objects. The builtin edge
/// weight travels with the topology.
fn access_objs(a: &Access) -> BTreeSet<ObjId> {
    let mut out = BTreeSet::new();
    for g in &a.globals {
        out.insert(ObjId::Global(g.clone()));
    }
    for (graph, prop) in &a.props {
        if prop == "weight" {
            out.insert(ObjId::Topology(graph.clone()));
        } else {
            out.insert(ObjId::Prop { graph: graph.clone(), prop: prop.clone() });
        }
    }
    for c in &a.colls {
        out.insert(ObjId::Coll(c.clone()));
    }
    for s in &a.sets {
        out.insert(ObjId::SetObj(s.clone()));
    }
    out
}

/// Actual graph argument of a call to `kernel`, for the first Graph
/// formal, if the call passes a plain variable there.
fn find_graph_arg<'p>(program: &'p Program, kernel: &str, args: &'p [Expr]) -> Option<&'p String> {
    let f = program.function(kernel)?;
    let idx = f.params.iter().position(|p| p.ty == DslType::Graph)?;
    match &args.get(idx)?.kind {
        ExprKind::Var(g) => Some(g),
        _ => None,
    }
}

/// Property the kernel's MIN reduction targets, mapped to the actual
/// graph at this call site. Used as the delta-stepping key.
fn find_key_prop(program: &Program, kernel: &str, args: &[Expr]) -> Option<(String, String)> {
    let f = program.function(kernel)?;
    let graph = find_graph_arg(program, kernel, args)?.clone();
    let mut found = None;
    visit_stmts(&f.body, &mut |s| {
        if found.is_some() {
            return;
        }
        if let StmtKind::Expr { expr } = &s.kind {
            if let ExprKind::Call { name, args: cargs } = &expr.kind {
                if name == "MIN" && !cargs.is_empty() {
                    if let ExprKind::Field { name: prop, .. } = &cargs[0].kind {
                        found = Some((graph.clone(), prop.clone()));
                    }
                }
            }
        }
    });
    found
}

/// Every mutable object must be touched by kernels of at most one
/// device; parallel sections are promised independent.
fn check_single_home(plan: &ExecutionPlan) -> Result<(), LoweringError> {
    let mut homes: BTreeMap<ObjId, BTreeSet<usize>> = BTreeMap::new();
    let mut visit = |steps: &[Step]| {
        fn rec(steps: &[Step], homes: &mut BTreeMap<ObjId, BTreeSet<usize>>) {
            for s in steps {
                match s {
                    Step::Launch(l) => {
                        if let DeviceSlot::Dev(d) = l.dev {
                            for k in &l.group {
                                for o in k.reads.iter().chain(&k.writes) {
                                    if o.mutable() {
                                        homes.entry(o.clone()).or_default().insert(d);
                                    }
                                }
                            }
                        }
                    }
                    Step::While { body, .. } => rec(body, homes),
                    Step::If { then_steps, else_steps, .. } => {
                        rec(then_steps, homes);
                        rec(else_steps, homes);
                    }
                    Step::Sections { sections } => sections.iter().for_each(|s| rec(s, homes)),
                    _ => {}
                }
            }
        }
        rec(steps, &mut homes);
    };
    visit(&plan.steps);
    for (obj, devs) in homes {
        if devs.len() > 1 {
            let list: Vec<String> = devs.iter().map(|d| d.to_string()).collect();
            return Err(err(format!(
                "{obj} is accessed by kernels on devices {}; \
                 parallel sections must work on independent data",
                list.join(" and ")
            )));
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Transfer insertion
// ---------------------------------------------------------------------------

/// Residency of one object.
#[derive(Debug, Clone, PartialEq, Eq)]
enum Res {
    /// Host copy is the only current one (also the never-copied state).
    HostDirty,
    /// Host copy current; the listed devices hold current copies too.
    Synced(BTreeSet<usize>),
    /// The device copy is the only current one.
    DevDirty(usize),
}

type ResMap = BTreeMap<ObjId, Res>;

fn res_of(map: &ResMap, obj: &ObjId) -> Res {
    map.get(obj).cloned().unwrap_or(Res::HostDirty)
}

pub fn insert_transfers(plan: ExecutionPlan) -> Result<ExecutionPlan, LoweringError> {
    // Existing placement is discarded and recomputed, so running the
    // pass over an already-placed plan changes nothing.
    let plan = ExecutionPlan { steps: strip_placement(plan.steps), ..plan };
    let mut state: ResMap = BTreeMap::new();
    let mut ins = Inserter { transfers: 0 };
    let mut steps = alloc_steps(&plan);
    let mut body = ins.walk(&plan.steps, &mut state)?;
    steps.append(&mut body);
    // Final sweep: whatever ended device-dirty comes home, in object
    // order, so results are host-visible on every target.
    for obj in &plan.obj_order {
        if let Res::DevDirty(d) = res_of(&state, obj) {
            steps.push(Step::Transfer { dev: d, obj: obj.clone(), to_device: false });
        }
    }
    Ok(ExecutionPlan { steps, ..plan })
}

fn strip_placement(steps: Vec<Step>) -> Vec<Step> {
    steps
        .into_iter()
        .filter_map(|s| match s {
            Step::Alloc { .. } | Step::Transfer { .. } => None,
            Step::While { cond, cond_reads, body } => {
                Some(Step::While { cond, cond_reads, body: strip_placement(body) })
            }
            Step::If { cond, cond_reads, then_steps, else_steps } => Some(Step::If {
                cond,
                cond_reads,
                then_steps: strip_placement(then_steps),
                else_steps: strip_placement(else_steps),
            }),
            Step::Sections { sections } => Some(Step::Sections {
                sections: sections.into_iter().map(strip_placement).collect(),
            }),
            other => Some(other),
        })
        .collect()
}

/// One alloc per (device, object) pair any kernel on that device
/// touches, before the first step.
fn alloc_steps(plan: &ExecutionPlan) -> Vec<Step> {
    let mut used: BTreeSet<(usize, ObjId)> = BTreeSet::new();
    fn rec(steps: &[Step], used: &mut BTreeSet<(usize, ObjId)>) {
        for s in steps {
            match s {
                Step::Launch(l) => {
                    if let DeviceSlot::Dev(d) = l.dev {
                        for k in &l.group {
                            for o in k.reads.iter().chain(&k.writes) {
                                used.insert((d, o.clone()));
                            }
                        }
                    }
                }
                Step::While { body, .. } => rec(body, used),
                Step::If { then_steps, else_steps, .. } => {
                    rec(then_steps, used);
                    rec(else_steps, used);
                }
                Step::Sections { sections } => sections.iter().for_each(|s| rec(s, used)),
                _ => {}
            }
        }
    }
    rec(&plan.steps, &mut used);
    let devices: BTreeSet<usize> = used.iter().map(|(d, _)| *d).collect();
    let mut out = Vec::new();
    for d in devices {
        for obj in &plan.obj_order {
            if used.contains(&(d, obj.clone())) {
                out.push(Step::Alloc { dev: d, obj: obj.clone() });
            }
        }
    }
    out
}

struct Inserter {
    transfers: usize,
}

impl Inserter {
    fn walk(&mut self, steps: &[Step], st: &mut ResMap) -> Result<Vec<Step>, LoweringError> {
        let mut out = Vec::new();
        for step in steps {
            match step {
                Step::Host { stmt, reads, writes } => {
                    for o in reads {
                        self.host_read(o, st, &mut out);
                    }
                    out.push(Step::Host {
                        stmt: stmt.clone(),
                        reads: reads.clone(),
                        writes: writes.clone(),
                    });
                    for o in writes {
                        st.insert(o.clone(), Res::HostDirty);
                    }
                }
                Step::Launch(l) => {
                    if let DeviceSlot::Dev(d) = l.dev {
                        for k in &l.group {
                            for o in k.reads.iter().chain(&k.writes) {
                                self.device_use(o, d, st, &mut out);
                            }
                        }
                    }
                    out.push(step.clone());
                    if let DeviceSlot::Dev(d) = l.dev {
                        for k in &l.group {
                            for o in &k.writes {
                                st.insert(o.clone(), Res::DevDirty(d));
                            }
                        }
                    }
                }
                Step::While { cond, cond_reads, body } => {
                    let step = self.walk_while(cond, cond_reads, body, st, &mut out)?;
                    out.push(step);
                }
                Step::If { cond, cond_reads, then_steps, else_steps } => {
                    for o in cond_reads {
                        self.host_read(o, st, &mut out);
                    }
                    let mut st_then = st.clone();
                    let mut st_else = st.clone();
                    let mut then_steps = self.walk(then_steps, &mut st_then)?;
                    let mut else_steps = self.walk(else_steps, &mut st_else)?;
                    *st = merge_arms(
                        &mut st_then,
                        &mut then_steps,
                        &mut st_else,
                        &mut else_steps,
                    );
                    out.push(Step::If {
                        cond: cond.clone(),
                        cond_reads: cond_reads.clone(),
                        then_steps,
                        else_steps,
                    });
                }
                Step::Sections { sections } => {
                    let entry = st.clone();
                    let mut lowered = Vec::new();
                    let mut exits = Vec::new();
                    for sec in sections {
                        let mut sec_st = entry.clone();
                        lowered.push(self.walk(sec, &mut sec_st)?);
                        exits.push(sec_st);
                    }
                    // Sections touch disjoint mutable data, so each
                    // object's final state comes from the one section
                    // that moved it; synced device lists just union.
                    for exit in exits {
                        for (obj, res) in exit {
                            if res == res_of(&entry, &obj) {
                                continue;
                            }
                            match (res_of(st, &obj), res) {
                                (Res::Synced(a), Res::Synced(b)) => {
                                    let both: BTreeSet<usize> = a.union(&b).copied().collect();
                                    st.insert(obj, Res::Synced(both));
                                }
                                (_, r) => {
                                    st.insert(obj, r);
                                }
                            }
                        }
                    }
                    out.push(Step::Sections { sections: lowered });
                }
                Step::Alloc { .. } | Step::Transfer { .. } => out.push(step.clone()),
                Step::Break | Step::Return => out.push(step.clone()),
            }
        }
        Ok(out)
    }

    fn walk_while(
        &mut self,
        cond: &Expr,
        cond_reads: &BTreeSet<ObjId>,
        body: &[Step],
        st: &mut ResMap,
        out: &mut Vec<Step>,
    ) -> Result<Step, LoweringError> {
        let mut device_uses: BTreeSet<(ObjId, usize)> = BTreeSet::new();
        let mut device_writes: BTreeSet<(ObjId, usize)> = BTreeSet::new();
        let mut host_writes: BTreeSet<ObjId> = BTreeSet::new();
        body_effects(body, &mut device_uses, &mut device_writes, &mut host_writes);

        // Objects the host leaves alone all loop: copy down once, here,
        // not per iteration.
        for (obj, dev) in &device_uses {
            if !host_writes.contains(obj) {
                self.device_use(obj, *dev, st, out);
            }
        }
        for o in cond_reads {
            self.host_read(o, st, out);
        }
        // From the second iteration on, device-written objects arrive
        // device-dirty at the loop head. Entering the first iteration
        // with that assumption is safe: the hoists above made every
        // device copy current, so an extra copy up is redundant, never
        // stale.
        let entry = st.clone();
        for (obj, dev) in &device_writes {
            if !host_writes.contains(obj) {
                st.insert(obj.clone(), Res::DevDirty(*dev));
            }
        }
        let mut new_body = self.walk(body, st)?;
        // The condition is re-evaluated after each iteration; bring its
        // operands home at the bottom of the body.
        for o in cond_reads {
            self.host_read_at_end(o, st, &mut new_body);
        }
        // The loop may run zero times; reconcile with the entry state.
        for obj in entry.keys().chain(st.clone().keys()) {
            let before = res_of(&entry, obj);
            let after = res_of(st, obj);
            if before == after {
                continue;
            }
            let merged = match (before, after) {
                (Res::HostDirty, Res::HostDirty) => Res::HostDirty,
                (Res::HostDirty, Res::DevDirty(_)) => {
                    // Zero iterations would leave the device copy the
                    // only current one while the host still thinks it
                    // owns the data; one copy up at the bottom of the
                    // body makes the host copy usable on both paths.
                    self.host_read_at_end(obj, st, &mut new_body);
                    Res::HostDirty
                }
                (Res::HostDirty, Res::Synced(_)) | (Res::Synced(_), Res::HostDirty) => {
                    Res::HostDirty
                }
                (Res::Synced(a), Res::Synced(b)) => {
                    Res::Synced(a.intersection(&b).copied().collect())
                }
                (Res::Synced(_), Res::DevDirty(d)) | (Res::DevDirty(d), Res::Synced(_)) => {
                    Res::DevDirty(d)
                }
                (Res::DevDirty(_), Res::DevDirty(d)) => Res::DevDirty(d),
                // Entered device-dirty, host overwrote it inside:
                // either way the host copy decides from here.
                (Res::DevDirty(_), Res::HostDirty) => Res::HostDirty,
            };
            st.insert(obj.clone(), merged);
        }
        Ok(Step::While { cond: cond.clone(), cond_reads: cond_reads.clone(), body: new_body })
    }

    fn host_read(&mut self, obj: &ObjId, st: &mut ResMap, out: &mut Vec<Step>) {
        if let Res::DevDirty(d) = res_of(st, obj) {
            out.push(Step::Transfer { dev: d, obj: obj.clone(), to_device: false });
            self.transfers += 1;
            st.insert(obj.clone(), Res::Synced(BTreeSet::from([d])));
        }
    }

    fn host_read_at_end(&mut self, obj: &ObjId, st: &mut ResMap, body: &mut Vec<Step>) {
        if let Res::DevDirty(d) = res_of(st, obj) {
            body.push(Step::Transfer { dev: d, obj: obj.clone(), to_device: false });
            self.transfers += 1;
            st.insert(obj.clone(), Res::Synced(BTreeSet::from([d])));
        }
    }

    fn device_use(&mut self, obj: &ObjId, dev: usize, st: &mut ResMap, out: &mut Vec<Step>) {
        match res_of(st, obj) {
            Res::HostDirty => {
                out.push(Step::Transfer { dev, obj: obj.clone(), to_device: true });
                self.transfers += 1;
                st.insert(obj.clone(), Res::Synced(BTreeSet::from([dev])));
            }
            Res::Synced(mut devs) => {
                if !devs.contains(&dev) {
                    out.push(Step::Transfer { dev, obj: obj.clone(), to_device: true });
                    self.transfers += 1;
                    devs.insert(dev);
                    st.insert(obj.clone(), Res::Synced(devs));
                }
            }
            Res::DevDirty(owner) => {
                if owner != dev {
                    out.push(Step::Transfer { dev: owner, obj: obj.clone(), to_device: false });
                    out.push(Step::Transfer { dev, obj: obj.clone(), to_device: true });
                    self.transfers += 2;
                    st.insert(obj.clone(), Res::Synced(BTreeSet::from([owner, dev])));
                }
            }
        }
    }
}

/// When both arms of a branch exist, reconcile their exit states; an
/// arm that leaves an object device-dirty while the other keeps the
/// host copy current gets a trailing copy up so either path ends
/// host-usable.
fn merge_arms(
    st_then: &mut ResMap,
    then_steps: &mut Vec<Step>,
    st_else: &mut ResMap,
    else_steps: &mut Vec<Step>,
) -> ResMap {
    let keys: BTreeSet<ObjId> = st_then.keys().chain(st_else.keys()).cloned().collect();
    let mut merged = ResMap::new();
    for obj in keys {
        let a = res_of(st_then, &obj);
        let b = res_of(st_else, &obj);
        let m = match (a, b) {
            (x, y) if x == y => x,
            (Res::HostDirty, Res::HostDirty) => Res::HostDirty,
            (Res::HostDirty, Res::DevDirty(d)) => {
                else_steps.push(Step::Transfer { dev: d, obj: obj.clone(), to_device: false });
                Res::HostDirty
            }
            (Res::DevDirty(d), Res::HostDirty) => {
                then_steps.push(Step::Transfer { dev: d, obj: obj.clone(), to_device: false });
                Res::HostDirty
            }
            (Res::HostDirty, Res::Synced(_)) | (Res::Synced(_), Res::HostDirty) => Res::HostDirty,
            (Res::Synced(x), Res::Synced(y)) => {
                Res::Synced(x.intersection(&y).copied().collect())
            }
            (Res::Synced(_), Res::DevDirty(d)) | (Res::DevDirty(d), Res::Synced(_)) => {
                Res::DevDirty(d)
            }
            (Res::DevDirty(x), Res::DevDirty(_)) => Res::DevDirty(x),
        };
        merged.insert(obj, m);
    }
    merged
}

fn body_effects(
    steps: &[Step],
    device_uses: &mut BTreeSet<(ObjId, usize)>,
    device_writes: &mut BTreeSet<(ObjId, usize)>,
    host_writes: &mut BTreeSet<ObjId>,
) {
    for s in steps {
        match s {
            Step::Launch(l) => {
                if let DeviceSlot::Dev(d) = l.dev {
                    for k in &l.group {
                        for o in k.reads.iter().chain(&k.writes) {
                            device_uses.insert((o.clone(), d));
                        }
                        for o in &k.writes {
                            device_writes.insert((o.clone(), d));
                        }
                    }
                }
            }
            Step::Host { writes, .. } => host_writes.extend(writes.iter().cloned()),
            Step::While { body, .. } => body_effects(body, device_uses, device_writes, host_writes),
            Step::If { then_steps, else_steps, .. } => {
                body_effects(then_steps, device_uses, device_writes, host_writes);
                body_effects(else_steps, device_uses, device_writes, host_writes);
            }
            Step::Sections { sections } => {
                for sec in sections {
                    body_effects(sec, device_uses, device_writes, host_writes);
                }
            }
            _ => {}
        }
    }
}

// ---------------------------------------------------------------------------
// Plan text
// ---------------------------------------------------------------------------

pub fn emit_text(plan: &ExecutionPlan) -> String {
    if plan.steps.is_empty() && plan.kernels.is_empty() {
        return String::new();
    }
    let mut out = String::new();
    out.push_str(&format!(
        "# plan target={} sched={} threads={}\n",
        plan.target.kind.name(),
        if plan.sync { "sync" } else { "async" },
        plan.target.threads
    ));
    for k in &plan.kernels {
        out.push_str("KERNEL ");
        print_function(&mut out, k);
    }
    emit_steps(&mut out, &plan.steps, 0);
    out
}

fn emit_steps(out: &mut String, steps: &[Step], level: usize) {
    let pad = "  ".repeat(level);
    for s in steps {
        match s {
            Step::Alloc { dev, obj } => {
                out.push_str(&format!("{pad}ALLOC dev={dev} obj={obj}\n"));
            }
            Step::Transfer { dev, obj, to_device } => {
                let dir = if *to_device { "toDevice" } else { "toHost" };
                out.push_str(&format!("{pad}TRANSFER dev={dev} dir={dir} obj={obj}\n"));
            }
            Step::Launch(l) => {
                for k in &l.group {
                    out.push_str(&format!("{pad}# {}\n", launch_source(k)));
                }
                let names: Vec<&str> = l.group.iter().map(|k| k.kernel.as_str()).collect();
                out.push_str(&format!(
                    "{pad}LAUNCH dev={} group=[{}] barrier={}\n",
                    l.dev,
                    names.join(","),
                    if l.barrier { 1 } else { 0 }
                ));
            }
            Step::Host { stmt, .. } => {
                out.push_str(&format!("{pad}HOST {}\n", print_stmt_inline(stmt)));
            }
            Step::While { cond, body, .. } => {
                out.push_str(&format!("{pad}WHILE ({}) {{\n", print_expr(cond)));
                emit_steps(out, body, level + 1);
                out.push_str(&format!("{pad}}}\n"));
            }
            Step::If { cond, then_steps, else_steps, .. } => {
                out.push_str(&format!("{pad}IF ({}) {{\n", print_expr(cond)));
                emit_steps(out, then_steps, level + 1);
                if else_steps.is_empty() {
                    out.push_str(&format!("{pad}}}\n"));
                } else {
                    out.push_str(&format!("{pad}}} ELSE {{\n"));
                    emit_steps(out, else_steps, level + 1);
                    out.push_str(&format!("{pad}}}\n"));
                }
            }
            Step::Sections { sections } => {
                out.push_str(&format!("{pad}SECTIONS {{\n"));
                for (i, sec) in sections.iter().enumerate() {
                    out.push_str(&format!("{pad}  SECTION {i} {{\n"));
                    emit_steps(out, sec, level + 2);
                    out.push_str(&format!("{pad}  }}\n"));
                }
                out.push_str(&format!("{pad}}}\n"));
            }
            Step::Break => out.push_str(&format!("{pad}BREAK\n")),
            Step::Return => out.push_str(&format!("{pad}RETURN\n")),
        }
    }
}

/// Source form of one launch, shown as a comment above its LAUNCH line.
fn launch_source(k: &KernelLaunch) -> String {
    let mut s = format!("foreach ({} In {}", k.var, print_expr(&k.subject));
    if let Some(kw) = k.iter.keyword() {
        s.push('.');
        s.push_str(kw);
    }
    s.push_str(") ");
    if let Some(f) = &k.filter {
        s.push_str(&format!("({}) ", print_expr(f)));
    }
    let args: Vec<String> = k.args.iter().map(print_expr).collect();
    s.push_str(&format!("{}({});", k.kernel, args.join(", ")));
    s
}

// ---------------------------------------------------------------------------
// Plan replay check
// ---------------------------------------------------------------------------

/// Where the current copy of an object lives during replay.
#[derive(Debug, Clone, PartialEq, Eq)]
enum Loc {
    Host,
    Both(BTreeSet<usize>),
    Dev(usize),
}

/// Independent coherence check: replay the plan and flag any access to
/// a stale copy, any transfer from a stale source, and any kernel
/// touching an unallocated object. Written against the plan alone, not
/// the insertion machinery, so it can catch its mistakes.
pub fn verify_plan(plan: &ExecutionPlan) -> Result<(), String> {
    let mut allocs: BTreeSet<(usize, ObjId)> = BTreeSet::new();
    let mut locs: BTreeMap<ObjId, Loc> = BTreeMap::new();
    verify_steps(&plan.steps, &mut allocs, &mut locs)
}

fn loc_of(locs: &BTreeMap<ObjId, Loc>, obj: &ObjId) -> Loc {
    locs.get(obj).cloned().unwrap_or(Loc::Host)
}

fn verify_steps(
    steps: &[Step],
    allocs: &mut BTreeSet<(usize, ObjId)>,
    locs: &mut BTreeMap<ObjId, Loc>,
) -> Result<(), String> {
    for s in steps {
        match s {
            Step::Alloc { dev, obj } => {
                allocs.insert((*dev, obj.clone()));
            }
            Step::Transfer { dev, obj, to_device } => {
                let cur = loc_of(locs, obj);
                if *to_device {
                    match cur {
                        Loc::Host => {
                            locs.insert(obj.clone(), Loc::Both(BTreeSet::from([*dev])));
                        }
                        Loc::Both(mut devs) => {
                            devs.insert(*dev);
                            locs.insert(obj.clone(), Loc::Both(devs));
                        }
                        Loc::Dev(d) => {
                            return Err(format!(
                                "copy of {obj} to device {dev} from a host copy \
                                 that device {d} has already outrun"
                            ));
                        }
                    }
                } else {
                    match cur {
                        Loc::Dev(d) if d == *dev => {
                            locs.insert(obj.clone(), Loc::Both(BTreeSet::from([*dev])));
                        }
                        Loc::Both(devs) if devs.contains(dev) => {}
                        other => {
                            return Err(format!(
                                "copy of {obj} from device {dev} which holds no \
                                 current copy (state {other:?})"
                            ));
                        }
                    }
                }
            }
            Step::Launch(l) => {
                if let DeviceSlot::Dev(d) = l.dev {
                    for k in &l.group {
                        for o in k.reads.iter().chain(&k.writes) {
                            if !allocs.contains(&(d, o.clone())) {
                                return Err(format!(
                                    "kernel {} touches {o} on device {d} without an alloc",
                                    k.kernel
                                ));
                            }
                            match loc_of(locs, o) {
                                Loc::Dev(owner) if owner == d => {}
                                Loc::Both(devs) if devs.contains(&d) => {}
                                other => {
                                    return Err(format!(
                                        "kernel {} uses {o} on device {d} but the current \
                                         copy is {other:?}",
                                        k.kernel
                                    ));
                                }
                            }
                        }
                    }
                    for k in &l.group {
                        for o in &k.writes {
                            locs.insert(o.clone(), Loc::Dev(d));
                        }
                    }
                }
            }
            Step::Host { stmt, reads, writes } => {
                for o in reads {
                    if let Loc::Dev(d) = loc_of(locs, o) {
                        return Err(format!(
                            "host statement `{}` reads {o} while the current copy \
                             is on device {d}",
                            print_stmt_inline(stmt)
                        ));
                    }
                }
                for o in writes {
                    locs.insert(o.clone(), Loc::Host);
                }
            }
            Step::While { cond_reads, body, .. } => {
                for o in cond_reads {
                    if let Loc::Dev(d) = loc_of(locs, o) {
                        return Err(format!(
                            "loop condition reads {o} while the current copy is on device {d}"
                        ));
                    }
                }
                let entry = locs.clone();
                // Two passes: the second starts from the first's exit,
                // which is the steady state of later iterations.
                verify_steps(body, allocs, locs)?;
                for o in cond_reads {
                    if let Loc::Dev(d) = loc_of(locs, o) {
                        return Err(format!(
                            "loop condition re-reads {o} while the current copy is on \
                             device {d}"
                        ));
                    }
                }
                verify_steps(body, allocs, locs)?;
                // Zero-iteration path: both entry and exit placements
                // must agree on who holds a current copy.
                let keys: BTreeSet<ObjId> =
                    entry.keys().chain(locs.clone().keys()).cloned().collect();
                for obj in keys {
                    let merged = meet(&loc_of(&entry, &obj), &loc_of(locs, &obj))
                        .ok_or_else(|| {
                            format!("{obj} may be stale on every side after a skipped loop")
                        })?;
                    locs.insert(obj, merged);
                }
            }
            Step::If { cond_reads, then_steps, else_steps, .. } => {
                for o in cond_reads {
                    if let Loc::Dev(d) = loc_of(locs, o) {
                        return Err(format!(
                            "branch condition reads {o} while the current copy is on \
                             device {d}"
                        ));
                    }
                }
                let mut then_locs = locs.clone();
                let mut else_locs = locs.clone();
                verify_steps(then_steps, allocs, &mut then_locs)?;
                verify_steps(else_steps, allocs, &mut else_locs)?;
                let keys: BTreeSet<ObjId> =
                    then_locs.keys().chain(else_locs.keys()).cloned().collect();
                for obj in keys {
                    let merged = meet(&loc_of(&then_locs, &obj), &loc_of(&else_locs, &obj))
                        .ok_or_else(|| {
                            format!("{obj} may be stale on every side after a branch")
                        })?;
                    locs.insert(obj, merged);
                }
            }
            Step::Sections { sections } => {
                let entry = locs.clone();
                let mut exits = Vec::new();
                for sec in sections {
                    let mut sec_locs = entry.clone();
                    verify_steps(sec, allocs, &mut sec_locs)?;
                    exits.push(sec_locs);
                }
                for exit in exits {
                    for (obj, loc) in exit {
                        if loc != loc_of(&entry, &obj) {
                            match (loc_of(locs, &obj), loc) {
                                (Loc::Both(a), Loc::Both(b)) => {
                                    let both: BTreeSet<usize> = a.union(&b).copied().collect();
                                    locs.insert(obj, Loc::Both(both));
                                }
                                (_, l) => {
                                    locs.insert(obj, l);
                                }
                            }
                        }
                    }
                }
            }
            Step::Break | Step::Return => {}
        }
    }
    Ok(())
}

/// Placements valid on both control-flow paths; None when no copy is
/// guaranteed current anywhere.
fn meet(a: &Loc, b: &Loc) -> Option<Loc> {
    match (a, b) {
        (x, y) if x == y => Some(x.clone()),
        (Loc::Host, Loc::Host) => Some(Loc::Host),
        (Loc::Host, Loc::Both(_)) | (Loc::Both(_), Loc::Host) => Some(Loc::Host),
        (Loc::Both(x), Loc::Both(y)) => {
            let common: BTreeSet<usize> = x.intersection(y).copied().collect();
            if common.is_empty() {
                Some(Loc::Host)
            } else {
                Some(Loc::Both(common))
            }
        }
        (Loc::Dev(d), Loc::Both(devs)) | (Loc::Both(devs), Loc::Dev(d)) => {
            if devs.contains(d) {
                Some(Loc::Dev(*d))
            } else {
                None
            }
        }
        (Loc::Host, Loc::Dev(_)) | (Loc::Dev(_), Loc::Host) => None,
        (Loc::Dev(_), Loc::Dev(_)) => None,
    }
}

// ---------------------------------------------------------------------------
// Name normalization
// ---------------------------------------------------------------------------

/// Rename every local and loop variable to a positional name, so plans
/// built from transformed and hand-written sources compare equal even
/// when the transforms picked different fresh names. Parameters keep
/// their names: they are part of the kernel signature.
pub fn normalize_locals(p: &Program) -> Program {
    let mut out = p.clone();
    for f in &mut out.functions {
        let mut ren = ScopedRename { scopes: Vec::new(), counter: 0 };
        ren.push();
        for param in &f.params {
            ren.keep(&param.name);
        }
        ren.rename_block(&mut f.body);
        ren.pop();
    }
    out
}

struct ScopedRename {
    scopes: Vec<HashMap<String, String>>,
    counter: usize,
}

impl ScopedRename {
    fn push(&mut self) {
        self.scopes.push(HashMap::new());
    }

    fn pop(&mut self) {
        self.scopes.pop();
    }

    fn keep(&mut self, name: &str) {
        if let Some(s) = self.scopes.last_mut() {
            s.insert(name.to_string(), name.to_string());
        }
    }

    fn fresh(&mut self, name: &str) -> String {
        let new = format!("__v{}", self.counter);
        self.counter += 1;
        if let Some(s) = self.scopes.last_mut() {
            s.insert(name.to_string(), new.clone());
        }
        new
    }

    fn lookup(&self, name: &str) -> Option<&String> {
        self.scopes.iter().rev().find_map(|s| s.get(name))
    }

    fn rename_block(&mut self, b: &mut Block) {
        self.push();
        for s in &mut b.stmts {
            self.rename_stmt(s);
        }
        self.pop();
    }

    fn rename_stmt(&mut self, s: &mut Stmt) {
        match &mut s.kind {
            StmtKind::VarDecl { decls } => {
                for d in decls {
                    if let Some(g) = &mut d.graph {
                        if let Some(new) = self.lookup(g) {
                            *g = new.clone();
                        }
                    }
                    if let Some(init) = &mut d.init {
                        self.rename_expr(init);
                    }
                    d.name = self.fresh(&d.name);
                }
            }
            StmtKind::Assign { target, value } => {
                self.rename_expr(target);
                self.rename_expr(value);
            }
            StmtKind::If { cond, then_blk, else_blk } => {
                self.rename_expr(cond);
                self.rename_block(then_blk);
                if let Some(e) = else_blk {
                    self.rename_block(e);
                }
            }
            StmtKind::While { cond, body } => {
                self.rename_expr(cond);
                self.rename_block(body);
            }
            StmtKind::Break => {}
            StmtKind::Return { value } => {
                if let Some(v) = value {
                    self.rename_expr(v);
                }
            }
            StmtKind::Expr { expr } => self.rename_expr(expr),
            StmtKind::Foreach(fe) => {
                self.rename_expr(&mut fe.subject);
                self.push();
                fe.var = self.fresh(&fe.var.clone());
                if let Some(f) = &mut fe.filter {
                    self.rename_expr(f);
                }
                for stmt in &mut fe.body.stmts {
                    self.rename_stmt(stmt);
                }
                self.pop();
            }
            StmtKind::Single { targets, then_blk, else_blk } => {
                for t in targets {
                    self.rename_expr(t);
                }
                self.rename_block(then_blk);
                if let Some(e) = else_blk {
                    self.rename_block(e);
                }
            }
            StmtKind::ParallelSections { sections } => {
                for sec in sections {
                    self.rename_block(sec);
                }
            }
        }
    }

    fn rename_expr(&mut self, e: &mut Expr) {
        match &mut e.kind {
            ExprKind::Var(n) => {
                if let Some(new) = self.lookup(n) {
                    *n = new.clone();
                }
            }
            ExprKind::Field { base, .. } => self.rename_expr(base),
            ExprKind::Index { base, idx } => {
                self.rename_expr(base);
                self.rename_expr(idx);
            }
            ExprKind::Call { args, .. } => args.iter_mut().for_each(|a| self.rename_expr(a)),
            ExprKind::Method { base, args, .. } => {
                self.rename_expr(base);
                args.iter_mut().for_each(|a| self.rename_expr(a));
            }
            ExprKind::AddProperty { graph, .. } => self.rename_expr(graph),
            ExprKind::Unary { expr, .. } => self.rename_expr(expr),
            ExprKind::Binary { lhs, rhs, .. } => {
                self.rename_expr(lhs);
                self.rename_expr(rhs);
            }
            _ => {}
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parser::parse;
    use crate::sema::resolve;

    fn corpus(name: &str) -> String {
        std::fs::read_to_string(format!("{}/corpus/{}", env!("CARGO_MANIFEST_DIR"), name))
            .unwrap()
    }

    fn plan_src(src: &str, kind: TargetKind, sync: bool) -> Result<ExecutionPlan, LoweringError> {
        let p = parse(src).unwrap();
        let table = resolve(&p).unwrap();
        let cfg = HostCfg::analyze(&p, &table);
        lower(
            &p,
            &table,
            &cfg,
            Target { kind, threads: 4, cost: CostModel::default() },
            sync,
        )
    }

    fn plan(file: &str, kind: TargetKind, sync: bool) -> ExecutionPlan {
        plan_src(&corpus(file), kind, sync).unwrap()
    }

    #[test]
    fn host_target_emits_no_transfers_and_the_documented_launch_line() {
        let text = emit_text(&plan("sssp.fal", TargetKind::HostThreads, true));
        assert!(text.contains("LAUNCH dev=host group=[relaxgraph] barrier=1"), "{text}");
        assert!(!text.contains("TRANSFER"), "{text}");
        assert!(!text.contains("ALLOC"), "{text}");
    }

    #[test]
    fn empty_program_emits_empty_text() {
        let plan = plan_src("int main() { }", TargetKind::HostThreads, true).unwrap();
        assert_eq!(emit_text(&plan), "");
    }

    #[test]
    fn device_plan_copies_dist_down_once_before_the_loop() {
        let text = emit_text(&plan("bfs.fal", TargetKind::SimDevice, true));
        let down: Vec<usize> = text
            .lines()
            .enumerate()
            .filter(|(_, l)| l.trim() == "TRANSFER dev=0 dir=toDevice obj=graph.dist")
            .map(|(i, _)| i)
            .collect();
        let loop_line = text.lines().position(|l| l.starts_with("WHILE")).unwrap();
        assert_eq!(down.len(), 1, "{text}");
        assert!(down[0] < loop_line, "dist copy must be hoisted above the loop\n{text}");
    }

    #[test]
    fn device_plan_brings_changed_home_once_per_iteration() {
        let text = emit_text(&plan("bfs.fal", TargetKind::SimDevice, true));
        let up: Vec<&str> = text
            .lines()
            .filter(|l| l.trim() == "TRANSFER dev=0 dir=toHost obj=changed")
            .collect();
        // The loop body is emitted once; a single line inside it means
        // one copy per iteration.
        assert_eq!(up.len(), 1, "{text}");
        let loop_line = text.lines().position(|l| l.starts_with("WHILE")).unwrap();
        let up_line = text
            .lines()
            .position(|l| l.trim() == "TRANSFER dev=0 dir=toHost obj=changed")
            .unwrap();
        assert!(up_line > loop_line, "{text}");
    }

    #[test]
    fn device_plan_copies_topology_exactly_once() {
        let text = emit_text(&plan("sssp.fal", TargetKind::SimDevice, true));
        let topo: Vec<&str> = text
            .lines()
            .filter(|l| l.contains("dir=toDevice obj=graph.topology"))
            .collect();
        assert_eq!(topo.len(), 1, "{text}");
    }

    #[test]
    fn final_results_come_home_after_the_loop() {
        let text = emit_text(&plan("sssp.fal", TargetKind::SimDevice, true));
        let last_loop_close = text.rfind("\n}").unwrap();
        let sweep = text.rfind("TRANSFER dev=0 dir=toHost obj=graph.dist").unwrap();
        assert!(sweep > last_loop_close, "{text}");
    }

    #[test]
    fn async_groups_the_independent_pair_into_one_launch() {
        let text = emit_text(&plan("bfs_sssp.fal", TargetKind::HostThreads, false));
        assert!(text.contains("group=[BFS,relaxgraph] barrier=1"), "{text}");
    }

    #[test]
    fn sync_keeps_the_pair_in_separate_groups() {
        let text = emit_text(&plan("bfs_sssp.fal", TargetKind::HostThreads, true));
        assert!(text.contains("group=[BFS] barrier=1"), "{text}");
        assert!(text.contains("group=[relaxgraph] barrier=1"), "{text}");
    }

    #[test]
    fn sections_land_on_their_own_devices() {
        let text = emit_text(&plan(
            "cc_two_graphs.fal",
            TargetKind::SimMultiDevice { devices: 2 },
            true,
        ));
        assert!(text.contains("ALLOC dev=0 obj=g1.topology"), "{text}");
        assert!(text.contains("ALLOC dev=1 obj=g2.topology"), "{text}");
        assert!(text.contains("LAUNCH dev=0 group=[cc1]"), "{text}");
        assert!(text.contains("LAUNCH dev=1 group=[cc2]"), "{text}");
        // Nothing of graph one may appear on device one and vice versa.
        assert!(!text.contains("dev=1 obj=g1"), "{text}");
        assert!(!text.contains("dev=0 obj=g2"), "{text}");
    }

    #[test]
    fn multi_device_without_sections_is_rejected() {
        let e = plan_src(
            &corpus("sssp.fal"),
            TargetKind::SimMultiDevice { devices: 2 },
            true,
        )
        .unwrap_err();
        assert!(e.to_string().contains("parallel sections"), "{e}");
    }

    #[test]
    fn shared_flag_across_sections_is_rejected() {
        let src = r#"
            int flag = 0;
            void k1(Point p, Graph g) { foreach (t In p.outnbrs) MIN(t.a, p.a, flag); }
            void k2(Point p, Graph g) { foreach (t In p.outnbrs) MIN(t.a, p.a, flag); }
            int main() {
                Graph g1;
                Graph g2;
                g1.addPointProperty(a, int);
                g2.addPointProperty(a, int);
                g1.read(argv[1]);
                g2.read(argv[2]);
                parallel sections {
                    section { foreach (p In g1.points) k1(p, g1); }
                    section { foreach (p In g2.points) k2(p, g2); }
                }
            }
        "#;
        let e = plan_src(src, TargetKind::SimMultiDevice { devices: 2 }, true).unwrap_err();
        assert!(e.to_string().contains("flag"), "{e}");
        assert!(e.to_string().contains("devices 0 and 1"), "{e}");
    }

    #[test]
    fn replay_accepts_every_corpus_plan() {
        for file in
            ["bfs.fal", "bfs_edge.fal", "sssp.fal", "sssp_edge.fal", "cc.fal", "mst.fal",
             "bfs_sssp.fal"]
        {
            for kind in [TargetKind::HostThreads, TargetKind::SimDevice] {
                for sync in [true, false] {
                    let plan = plan(file, kind, sync);
                    verify_plan(&plan).unwrap_or_else(|v| {
                        panic!("{file} {kind:?} sync={sync}: {v}\n{}", emit_text(&plan))
                    });
                }
            }
        }
        let multi = plan("cc_two_graphs.fal", TargetKind::SimMultiDevice { devices: 2 }, true);
        verify_plan(&multi).unwrap();
    }

    #[test]
    fn replay_flags_a_stale_host_read() {
        // Hand-build a broken plan: device writes, host reads, no copy.
        let obj = ObjId::Global("x".into());
        let kl = KernelLaunch {
            sid: 0,
            kernel: "k".into(),
            var: "p".into(),
            subject: Expr::var("g"),
            iter: IterKind::Points,
            filter: None,
            args: vec![],
            graph_var: Some("g".into()),
            coll_var: None,
            key_prop: None,
            reads: BTreeSet::new(),
            writes: BTreeSet::from([obj.clone()]),
        };
        let broken = ExecutionPlan {
            target: Target {
                kind: TargetKind::SimDevice,
                threads: 1,
                cost: CostModel::default(),
            },
            sync: true,
            kernels: vec![],
            symbols: PlanSymbols::default(),
            obj_order: vec![obj.clone()],
            steps: vec![
                Step::Alloc { dev: 0, obj: obj.clone() },
                Step::Transfer { dev: 0, obj: obj.clone(), to_device: true },
                Step::Launch(LaunchStep {
                    dev: DeviceSlot::Dev(0),
                    group: vec![kl],
                    barrier: true,
                }),
                Step::Host {
                    stmt: Stmt {
                        sid: 1,
                        pos: Pos::default(),
                        kind: StmtKind::Assign {
                            target: Expr::var("y"),
                            value: Expr::var("x"),
                        },
                    },
                    reads: BTreeSet::from([obj.clone()]),
                    writes: BTreeSet::new(),
                },
            ],
        };
        let e = verify_plan(&broken).unwrap_err();
        assert!(e.contains("reads x"), "{e}");
    }

    #[test]
    fn normalized_names_are_positional_and_alpha_equivalent() {
        let src = corpus("mst.fal");
        let p = parse(&src).unwrap();
        let n = normalize_locals(&p);
        assert!(alpha_eq(&p, &n));
        let printed = crate::pretty::pretty_print(&n);
        assert!(printed.contains("__v0"), "{printed}");
        assert!(!printed.contains(" r = s.find(p);"), "locals should be renamed: {printed}");
        // Globals and properties keep their names.
        assert!(printed.contains("mstwt"), "{printed}");
        assert!(printed.contains(".minpack"), "{printed}");
    }

    #[test]
    fn worklist_drains_always_barrier() {
        let p = parse(&corpus("sssp.fal")).unwrap();
        let wl = crate::transform::to_worklist(&p).unwrap();
        let table = resolve(&wl).unwrap();
        let cfg = HostCfg::analyze(&wl, &table);
        let plan = lower(
            &wl,
            &table,
            &cfg,
            Target { kind: TargetKind::HostThreads, threads: 4, cost: CostModel::default() },
            false,
        )
        .unwrap();
        let text = emit_text(&plan);
        for line in text.lines().filter(|l| l.contains("LAUNCH")) {
            assert!(line.contains("barrier=1"), "{text}");
        }
    }

    #[test]
    fn worklist_kernel_records_its_reduction_key() {
        let p = parse(&corpus("sssp.fal")).unwrap();
        let wl = crate::transform::to_worklist(&p).unwrap();
        let table = resolve(&wl).unwrap();
        let cfg = HostCfg::analyze(&wl, &table);
        let plan = lower(
            &wl,
            &table,
            &cfg,
            Target { kind: TargetKind::HostThreads, threads: 4, cost: CostModel::default() },
            true,
        )
        .unwrap();
        let mut key = None;
        fn find(steps: &[Step], key: &mut Option<(String, String)>) {
            for s in steps {
                match s {
                    Step::Launch(l) => {
                        for k in &l.group {
                            if k.key_prop.is_some() {
                                *key = k.key_prop.clone();
                            }
                        }
                    }
                    Step::While { body, .. } => find(body, key),
                    Step::If { then_steps, else_steps, .. } => {
                        find(then_steps, key);
                        find(else_steps, key);
                    }
                    _ => {}
                }
            }
        }
        find(&plan.steps, &mut key);
        assert_eq!(key, Some(("graph".into(), "dist".into())));
    }
}
