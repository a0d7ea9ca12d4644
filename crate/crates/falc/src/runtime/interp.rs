//! Tree-walking evaluator for host statements and kernel bodies.
//!
//! One evaluator serves both sides; a view selects where data lives.
//! The host view resolves properties and globals through `HostState`
//! directly. A launch view carries the arrays the launch may touch,
//! pre-resolved by the executor: host arrays for host-target launches,
//! a device's private copies for device launches. Device views never
//! fall back to host storage, so a plan that forgot a transfer or an
//! allocation surfaces as an error or a wrong value instead of being
//! quietly papered over.
//!
//! Shared writes follow the concurrency contract: MIN and MAX are
//! sequentially consistent compare-and-swap loops, RADD and plain
//! global assignments accumulate per worker and merge when the launch
//! round ends, property stores are plain atomic stores. Host-context
//! evaluation applies global writes immediately since host statements
//! run single-threaded.

use super::state::{HostState, Value};
use super::{everr, RuntimeError, TracedAccess};
use crate::ast::*;
use crate::graph::GraphStore;
use std::collections::HashMap;
use std::sync::atomic::{AtomicI64, Ordering};
use std::sync::Arc;

/// Infinity sentinel, 2^31 - 1.
pub const MAX_INT: i64 = i64::pow(2, 31) - 1;

/// Where a context reads and writes arrays.
pub struct View<'a> {
    /// Pre-resolved (graph, property) arrays for a launch; empty for
    /// the host context, which resolves through `HostState` instead.
    pub props: Vec<(usize, String, Arc<Vec<AtomicI64>>)>,
    pub globals: &'a [AtomicI64],
    /// Device id when the arrays are a device's private copies. Such a
    /// view is closed: anything absent from `props` is an error.
    pub dev: Option<usize>,
}

impl<'a> View<'a> {
    pub fn host(state: &'a HostState) -> View<'a> {
        View { props: Vec::new(), globals: &state.globals, dev: None }
    }
}

/// Per-worker accumulation during one launch round. The executor
/// merges it into the launch's globals when the round ends.
#[derive(Default)]
pub struct Scratch {
    /// True inside a kernel launch; false for host statements.
    pub worker: bool,
    /// Lock owner word for `single` and set unions.
    pub owner: i64,
    /// Plain global writes, OR-combined by global index.
    pub flag_or: HashMap<usize, i64>,
    /// RADD contributions by global index.
    pub radd: HashMap<usize, i64>,
    /// RMUL contributions by global index.
    pub rmul: HashMap<usize, i64>,
    /// Collection pushes as (collection, graph, point).
    pub pushes: Vec<(usize, usize, i64)>,
    /// Edges scanned; feeds cost and load-imbalance accounting.
    pub edge_work: u64,
    /// Kernel bodies entered.
    pub invocations: u64,
    /// Observed accesses, when tracing is on.
    pub trace: Option<TracedAccess>,
}

impl Scratch {
    pub fn host() -> Scratch {
        Scratch { worker: false, owner: i64::MAX, ..Scratch::default() }
    }

    pub fn worker(owner: i64, trace: bool) -> Scratch {
        Scratch {
            worker: true,
            owner,
            trace: trace.then(TracedAccess::default),
            ..Scratch::default()
        }
    }
}

/// How a statement finished.
#[derive(Debug, PartialEq)]
pub enum Flow {
    Normal,
    Break,
    Return(Option<Value>),
}

/// Edge being iterated by an enclosing neighbour loop; lets getweight
/// answer from the loop instead of searching the CSR row.
struct EdgeCtx {
    graph: usize,
    src: i64,
    dst: i64,
    weight: i64,
}

/// The lvalue targets an assignment or reduction can hit.
enum LvRef {
    Local(String),
    Global(usize),
    PropElem(Arc<Vec<AtomicI64>>, usize),
}

pub struct Interp<'a> {
    pub host: &'a HostState,
    pub view: &'a View<'a>,
    /// Callable function definitions (every non-main function).
    pub kernels: &'a [FunctionDecl],
    pub scratch: &'a mut Scratch,
    /// Cap on sequential `while` iterations inside interpreted code.
    pub iter_cap: usize,
    env: Vec<HashMap<String, Value>>,
    edges: Vec<EdgeCtx>,
    depth: usize,
}

/// Does the expression mention `name` as a variable? Decides which
/// launch arguments must be evaluated per element.
pub fn expr_uses_var(e: &Expr, name: &str) -> bool {
    match &e.kind {
        ExprKind::Int(_) | ExprKind::Float(_) | ExprKind::Bool(_) | ExprKind::MaxInt => false,
        ExprKind::Var(v) => v == name,
        ExprKind::Field { base, .. } => expr_uses_var(base, name),
        ExprKind::Index { base, idx } => expr_uses_var(base, name) || expr_uses_var(idx, name),
        ExprKind::Call { args, .. } => args.iter().any(|a| expr_uses_var(a, name)),
        ExprKind::Method { base, args, .. } => {
            expr_uses_var(base, name) || args.iter().any(|a| expr_uses_var(a, name))
        }
        ExprKind::AddProperty { graph, .. } => expr_uses_var(graph, name),
        ExprKind::Unary { expr, .. } => expr_uses_var(expr, name),
        ExprKind::Binary { lhs, rhs, .. } => {
            expr_uses_var(lhs, name) || expr_uses_var(rhs, name)
        }
    }
}

impl<'a> Interp<'a> {
    pub fn new(
        host: &'a HostState,
        view: &'a View<'a>,
        kernels: &'a [FunctionDecl],
        scratch: &'a mut Scratch,
        iter_cap: usize,
    ) -> Interp<'a> {
        Interp {
            host,
            view,
            kernels,
            scratch,
            iter_cap,
            env: vec![HashMap::new()],
            edges: Vec::new(),
            depth: 0,
        }
    }

    /// Continue with an environment saved from an earlier statement;
    /// the executor threads main's locals through host steps this way.
    pub fn with_env(
        host: &'a HostState,
        view: &'a View<'a>,
        kernels: &'a [FunctionDecl],
        scratch: &'a mut Scratch,
        iter_cap: usize,
        env: Vec<HashMap<String, Value>>,
    ) -> Interp<'a> {
        let mut it = Interp::new(host, view, kernels, scratch, iter_cap);
        it.env = if env.is_empty() { vec![HashMap::new()] } else { env };
        it
    }

    pub fn into_env(self) -> Vec<HashMap<String, Value>> {
        self.env
    }

    /// Open a scope holding one binding; the executor uses this for
    /// the launch loop variable around filter and argument evaluation.
    pub fn push_binding(&mut self, name: &str, v: Value) {
        let mut frame = HashMap::new();
        frame.insert(name.to_string(), v);
        self.env.push(frame);
    }

    pub fn pop_binding(&mut self) {
        self.env.pop();
    }

    /// Run one kernel body for one subject. Arguments are already
    /// evaluated; a Return inside the body just ends the invocation.
    pub fn call_kernel(&mut self, f: &FunctionDecl, args: &[Value]) -> Result<(), RuntimeError> {
        if args.len() != f.params.len() {
            return Err(everr(format!(
                "{} takes {} argument(s), got {}",
                f.name,
                f.params.len(),
                args.len()
            )));
        }
        self.scratch.invocations += 1;
        let mut frame = HashMap::new();
        for (p, v) in f.params.iter().zip(args) {
            frame.insert(p.name.clone(), *v);
        }
        self.env.push(frame);
        let r = self.run_block(&f.body);
        self.env.pop();
        r.map(|_| ())
    }

    // -- statements ---------------------------------------------------------

    pub fn run_stmt(&mut self, s: &Stmt) -> Result<Flow, RuntimeError> {
        match &s.kind {
            StmtKind::VarDecl { decls } => {
                for d in decls {
                    self.declare(d)?;
                }
                Ok(Flow::Normal)
            }
            StmtKind::Assign { target, value } => {
                let v = self.eval(value)?;
                let lv = self.resolve_lvalue(target)?;
                self.write_lvalue(lv, v)?;
                Ok(Flow::Normal)
            }
            StmtKind::If { cond, then_blk, else_blk } => {
                if self.eval(cond)?.truthy()? {
                    self.run_block(then_blk)
                } else if let Some(e) = else_blk {
                    self.run_block(e)
                } else {
                    Ok(Flow::Normal)
                }
            }
            StmtKind::While { cond, body } => {
                let mut iters = 0usize;
                loop {
                    if !self.eval(cond)?.truthy()? {
                        return Ok(Flow::Normal);
                    }
                    iters += 1;
                    if iters > self.iter_cap {
                        return Err(RuntimeError::Divergence { cap: self.iter_cap });
                    }
                    match self.run_block(body)? {
                        Flow::Normal => {}
                        Flow::Break => return Ok(Flow::Normal),
                        r @ Flow::Return(_) => return Ok(r),
                    }
                }
            }
            StmtKind::Break => Ok(Flow::Break),
            StmtKind::Return { value } => {
                let v = match value {
                    Some(e) => Some(self.eval(e)?),
                    None => None,
                };
                Ok(Flow::Return(v))
            }
            StmtKind::Expr { expr } => {
                self.eval(expr)?;
                Ok(Flow::Normal)
            }
            StmtKind::Foreach(fs) => self.run_foreach(fs),
            StmtKind::Single { targets, then_blk, else_blk } => {
                self.run_single(targets, then_blk, else_blk.as_ref())
            }
            StmtKind::ParallelSections { .. } => {
                Err(everr("parallel sections are only allowed directly in main"))
            }
        }
    }

    pub fn run_block(&mut self, b: &Block) -> Result<Flow, RuntimeError> {
        self.env.push(HashMap::new());
        let mut out = Ok(Flow::Normal);
        for s in &b.stmts {
            match self.run_stmt(s) {
                Ok(Flow::Normal) => {}
                other => {
                    out = other;
                    break;
                }
            }
        }
        self.env.pop();
        out
    }

    fn declare(&mut self, d: &LocalDecl) -> Result<(), RuntimeError> {
        let v = match d.ty {
            DslType::Int | DslType::Bool => match &d.init {
                Some(e) => Value::Int(self.eval(e)?.as_int()?),
                None => Value::Int(0),
            },
            DslType::Float => match &d.init {
                Some(e) => Value::Float(as_f64(self.eval(e)?)?),
                None => Value::Float(0.0),
            },
            DslType::Point => match &d.init {
                Some(e) => self.eval(e)?,
                None => {
                    let g = self.graph_binding(d)?;
                    Value::Point { idx: 0, graph: g }
                }
            },
            DslType::Edge => match &d.init {
                Some(e) => self.eval(e)?,
                None => {
                    let g = self.graph_binding(d)?;
                    Value::Edge { idx: 0, graph: g }
                }
            },
            // The slot already exists in host state; the statement
            // itself carries nothing to store.
            DslType::Graph | DslType::Collection => return Ok(()),
            DslType::Set => return self.declare_set(d),
            DslType::Void | DslType::PropertyHandle => {
                return Err(everr(format!("cannot declare a variable of type {:?}", d.ty)))
            }
        };
        self.env.last_mut().unwrap().insert(d.name.clone(), v);
        Ok(())
    }

    fn graph_binding(&mut self, d: &LocalDecl) -> Result<usize, RuntimeError> {
        let gname = d
            .graph
            .as_ref()
            .ok_or_else(|| everr(format!("declaration of {} needs a graph binding", d.name)))?;
        match self.eval(&Expr::var(gname))? {
            Value::Graph(g) => Ok(g),
            other => Err(everr(format!("{gname} is not a graph, found {other:?}"))),
        }
    }

    fn declare_set(&mut self, d: &LocalDecl) -> Result<(), RuntimeError> {
        if self.scratch.worker {
            return Err(everr("sets must be declared in host code"));
        }
        let g = self.graph_binding(d)?;
        let n = self.host.store(g)?.num_points();
        let idx = *self
            .host
            .set_index
            .get(&d.name)
            .ok_or_else(|| everr(format!("unknown set {}", d.name)))?;
        // Re-running the declaration (e.g. inside a loop) keeps the
        // first instance; sets are static partitions.
        let _ = self.host.sets[idx].set(super::state::SetSim::new(g, n));
        Ok(())
    }

    fn run_foreach(&mut self, fs: &ForeachStmt) -> Result<Flow, RuntimeError> {
        let subject = self.eval(&fs.subject)?;
        match fs.iter {
            IterKind::Points => {
                let g = as_graph(subject)?;
                let n = self.host.store(g)?.num_points();
                for i in 0..n {
                    let v = Value::Point { idx: i as i64, graph: g };
                    match self.iterate_once(fs, v)? {
                        Flow::Normal => {}
                        Flow::Break => return Ok(Flow::Normal),
                        r @ Flow::Return(_) => return Ok(r),
                    }
                }
            }
            IterKind::Edges => {
                let g = as_graph(subject)?;
                let m = self.host.store(g)?.num_edges();
                for i in 0..m {
                    self.scratch.edge_work += 1;
                    let v = Value::Edge { idx: i, graph: g };
                    match self.iterate_once(fs, v)? {
                        Flow::Normal => {}
                        Flow::Break => return Ok(Flow::Normal),
                        r @ Flow::Return(_) => return Ok(r),
                    }
                }
            }
            IterKind::Nbrs | IterKind::OutNbrs | IterKind::InNbrs => {
                let (g, p) = subject.as_point()?;
                let store = self.host.store(g)?.clone();
                let n = store.num_points();
                if p < 0 || p >= n as i64 {
                    return Err(everr(format!("point {p} outside 0..{n}")));
                }
                let outward = fs.iter != IterKind::InNbrs;
                let (others, weights) = if outward {
                    store.out_nbrs(p as usize)
                } else {
                    store.in_nbrs(p as usize)
                };
                for (&t, &w) in others.iter().zip(weights) {
                    self.scratch.edge_work += 1;
                    let (src, dst) = if outward { (p, t as i64) } else { (t as i64, p) };
                    self.edges.push(EdgeCtx { graph: g, src, dst, weight: w });
                    let r = self.iterate_once(fs, Value::Point { idx: t as i64, graph: g });
                    self.edges.pop();
                    match r? {
                        Flow::Normal => {}
                        Flow::Break => return Ok(Flow::Normal),
                        r @ Flow::Return(_) => return Ok(r),
                    }
                }
            }
            IterKind::Items => {
                let items: Vec<Value> = match subject {
                    Value::SetRef(s) => {
                        // A set partitions all points of its graph, so
                        // its items are exactly those points.
                        let sim = self.host.sets[s]
                            .get()
                            .ok_or_else(|| everr("set iterated before its declaration"))?;
                        let n = self.host.store(sim.graph)?.num_points();
                        (0..n).map(|i| Value::Point { idx: i as i64, graph: sim.graph }).collect()
                    }
                    Value::CollRef(c) => {
                        if self.scratch.worker {
                            return Err(everr(
                                "collections can only be iterated from host code",
                            ));
                        }
                        let items = self.host.colls[c].lock().unwrap();
                        items.iter().map(|&(g, i)| Value::Point { idx: i, graph: g }).collect()
                    }
                    other => {
                        return Err(everr(format!(
                            "cannot iterate items of {other:?}; expected a set or collection"
                        )))
                    }
                };
                for v in items {
                    match self.iterate_once(fs, v)? {
                        Flow::Normal => {}
                        Flow::Break => return Ok(Flow::Normal),
                        r @ Flow::Return(_) => return Ok(r),
                    }
                }
            }
        }
        Ok(Flow::Normal)
    }

    /// One iteration: bind the loop variable in a fresh scope, apply
    /// the filter, run the body.
    fn iterate_once(&mut self, fs: &ForeachStmt, item: Value) -> Result<Flow, RuntimeError> {
        let mut frame = HashMap::new();
        frame.insert(fs.var.clone(), item);
        self.env.push(frame);
        let r = (|| {
            if let Some(f) = &fs.filter {
                if !self.eval(f)?.truthy()? {
                    return Ok(Flow::Normal);
                }
            }
            self.run_block(&fs.body)
        })();
        self.env.pop();
        r
    }

    fn run_single(
        &mut self,
        targets: &[Expr],
        then_blk: &Block,
        else_blk: Option<&Block>,
    ) -> Result<Flow, RuntimeError> {
        // Gather (graph, point) pairs; a collection target contributes
        // all its current items.
        let mut elems: Vec<(usize, i64)> = Vec::new();
        for t in targets {
            match self.eval(t)? {
                Value::Point { idx, graph } => elems.push((graph, idx)),
                Value::CollRef(c) => {
                    let items = self.host.colls[c].lock().unwrap();
                    elems.extend(items.iter().copied());
                }
                other => {
                    return Err(everr(format!(
                        "single expects points or a collection, found {other:?}"
                    )))
                }
            }
        }
        if elems.is_empty() {
            return Err(everr("single needs at least one element to lock"));
        }
        // Global acquisition order (graph, then point) keeps competing
        // singles deadlock-free; all-or-nothing keeps them non-blocking.
        elems.sort_unstable();
        elems.dedup();
        let mut arcs = Vec::with_capacity(elems.len());
        for &(g, i) in &elems {
            let locks = self.host.locks(g)?.clone();
            if i < 0 || i as usize >= locks.len() {
                return Err(everr(format!("single target {i} is not a vertex")));
            }
            arcs.push((locks, i as usize));
        }
        let slots: Vec<super::state::LockSlot> =
            arcs.iter().map(|(a, i)| (a.as_slice(), *i)).collect();
        if !super::state::single_try(&slots, self.scratch.owner) {
            return match else_blk {
                Some(b) => self.run_block(b),
                None => Ok(Flow::Normal),
            };
        }
        let r = self.run_block(then_blk);
        super::state::single_release(&slots);
        r
    }

    // -- expressions --------------------------------------------------------

    pub fn eval(&mut self, e: &Expr) -> Result<Value, RuntimeError> {
        match &e.kind {
            ExprKind::Int(v) => Ok(Value::Int(*v)),
            ExprKind::Float(v) => Ok(Value::Float(*v)),
            ExprKind::Bool(b) => Ok(Value::Int(*b as i64)),
            ExprKind::MaxInt => Ok(Value::Int(MAX_INT)),
            ExprKind::Var(name) => self.read_var(name),
            ExprKind::Field { base, name } => self.eval_field(base, name),
            ExprKind::Index { base, idx } => self.eval_index(base, idx),
            ExprKind::Call { name, args } => self.eval_call(name, args),
            ExprKind::Method { base, name, args } => self.eval_method(base, name, args),
            ExprKind::AddProperty { graph, elem, prop, .. } => {
                if self.scratch.worker {
                    return Err(everr("properties must be declared in host code"));
                }
                let g = as_graph(self.eval(graph)?)?;
                self.host.declare_prop(g, prop, *elem);
                Ok(Value::Int(0))
            }
            ExprKind::Unary { op, expr } => {
                let v = self.eval(expr)?;
                match op {
                    UnOp::Neg => match v {
                        Value::Float(f) => Ok(Value::Float(-f)),
                        other => Ok(Value::Int(other.as_int()?.wrapping_neg())),
                    },
                    UnOp::Not => Ok(Value::Int(!v.truthy()? as i64)),
                }
            }
            ExprKind::Binary { op, lhs, rhs } => self.eval_binary(*op, lhs, rhs),
        }
    }

    fn read_var(&mut self, name: &str) -> Result<Value, RuntimeError> {
        for frame in self.env.iter().rev() {
            if let Some(v) = frame.get(name) {
                return Ok(*v);
            }
        }
        if let Some(&g) = self.host.global_index.get(name) {
            self.trace_global(g, false);
            return Ok(Value::Int(self.view.globals[g].load(Ordering::SeqCst)));
        }
        if let Some(&g) = self.host.graph_index.get(name) {
            return Ok(Value::Graph(g));
        }
        if let Some(&s) = self.host.set_index.get(name) {
            return Ok(Value::SetRef(s));
        }
        if let Some(&c) = self.host.coll_index.get(name) {
            return Ok(Value::CollRef(c));
        }
        if name == "argv" {
            return Err(everr("argv can only be indexed inside graph.read"));
        }
        Err(everr(format!("unknown variable {name}")))
    }

    fn eval_field(&mut self, base: &Expr, name: &str) -> Result<Value, RuntimeError> {
        let b = self.eval(base)?;
        match b {
            Value::Edge { idx, graph } => match name {
                "src" | "dst" | "weight" => {
                    let store = self.host.store(graph)?;
                    if idx >= store.num_edges() {
                        return Err(everr(format!("edge {idx} out of range")));
                    }
                    let e = store.edge(idx);
                    Ok(match name {
                        "src" => Value::Point { idx: e.src as i64, graph },
                        "dst" => Value::Point { idx: e.dst as i64, graph },
                        _ => Value::Int(e.weight),
                    })
                }
                _ => {
                    let arr = self.prop_array(graph, name, false)?;
                    let v = load_elem(&arr, idx as i64, graph, name, self.host)?;
                    Ok(Value::Int(v))
                }
            },
            Value::Point { idx, graph } => {
                let arr = self.prop_array(graph, name, false)?;
                let v = load_elem(&arr, idx, graph, name, self.host)?;
                Ok(Value::Int(v))
            }
            Value::Graph(_) => Err(everr(format!(
                "graph member {name} cannot be read as a value"
            ))),
            other => Err(everr(format!("{other:?} has no member {name}"))),
        }
    }

    fn eval_index(&mut self, base: &Expr, idx: &Expr) -> Result<Value, RuntimeError> {
        // The only indexable things are graph.points and argv; argv is
        // consumed by graph.read before evaluation gets here.
        if let ExprKind::Field { base: gexpr, name } = &base.kind {
            if name == "points" {
                let g = as_graph(self.eval(gexpr)?)?;
                let i = self.eval(idx)?.as_int()?;
                let n = self.host.store(g)?.num_points();
                if i < 0 || i >= n as i64 {
                    return Err(everr(format!("point index {i} outside 0..{n}")));
                }
                return Ok(Value::Point { idx: i, graph: g });
            }
        }
        if matches!(&base.kind, ExprKind::Var(v) if v == "argv") {
            return Err(everr("argv can only be indexed inside graph.read"));
        }
        Err(everr("only graph.points[...] can be indexed"))
    }

    fn eval_binary(&mut self, op: BinOp, lhs: &Expr, rhs: &Expr) -> Result<Value, RuntimeError> {
        // Short-circuit forms first.
        match op {
            BinOp::And => {
                let l = self.eval(lhs)?.truthy()?;
                return Ok(Value::Int((l && self.eval(rhs)?.truthy()?) as i64));
            }
            BinOp::Or => {
                let l = self.eval(lhs)?.truthy()?;
                return Ok(Value::Int((l || self.eval(rhs)?.truthy()?) as i64));
            }
            _ => {}
        }
        let l = self.eval(lhs)?;
        let r = self.eval(rhs)?;
        if matches!(l, Value::Float(_)) || matches!(r, Value::Float(_)) {
            let (a, b) = (as_f64(l)?, as_f64(r)?);
            return Ok(match op {
                BinOp::Add => Value::Float(a + b),
                BinOp::Sub => Value::Float(a - b),
                BinOp::Mul => Value::Float(a * b),
                BinOp::Div => Value::Float(a / b),
                BinOp::Rem => return Err(everr("% is not defined on floats")),
                BinOp::Eq => Value::Int((a == b) as i64),
                BinOp::Ne => Value::Int((a != b) as i64),
                BinOp::Lt => Value::Int((a < b) as i64),
                BinOp::Le => Value::Int((a <= b) as i64),
                BinOp::Gt => Value::Int((a > b) as i64),
                BinOp::Ge => Value::Int((a >= b) as i64),
                BinOp::And | BinOp::Or => unreachable!(),
            });
        }
        let (a, b) = (l.as_int()?, r.as_int()?);
        Ok(Value::Int(match op {
            BinOp::Add => a.wrapping_add(b),
            BinOp::Sub => a.wrapping_sub(b),
            BinOp::Mul => a.wrapping_mul(b),
            BinOp::Div => {
                if b == 0 {
                    return Err(everr("division by zero"));
                }
                a.wrapping_div(b)
            }
            BinOp::Rem => {
                if b == 0 {
                    return Err(everr("remainder by zero"));
                }
                a.wrapping_rem(b)
            }
            BinOp::Eq => (a == b) as i64,
            BinOp::Ne => (a != b) as i64,
            BinOp::Lt => (a < b) as i64,
            BinOp::Le => (a <= b) as i64,
            BinOp::Gt => (a > b) as i64,
            BinOp::Ge => (a >= b) as i64,
            BinOp::And | BinOp::Or => unreachable!(),
        }))
    }

    fn eval_call(&mut self, name: &str, args: &[Expr]) -> Result<Value, RuntimeError> {
        match name {
            "MIN" | "MAX" => {
                self.reduce_minmax(name == "MIN", args)?;
                Ok(Value::Int(0))
            }
            "RADD" | "RMUL" => {
                self.reduce_arith(name == "RADD", args)?;
                Ok(Value::Int(0))
            }
            _ => {
                let f = self
                    .kernels
                    .iter()
                    .find(|f| f.name == name)
                    .ok_or_else(|| everr(format!("unknown function {name}")))?;
                if args.len() != f.params.len() {
                    return Err(everr(format!(
                        "{name} takes {} argument(s), got {}",
                        f.params.len(),
                        args.len()
                    )));
                }
                if self.depth >= 128 {
                    return Err(everr(format!("call depth exceeded calling {name}")));
                }
                let mut vals = Vec::with_capacity(args.len());
                for a in args {
                    vals.push(self.eval(a)?);
                }
                let mut frame = HashMap::new();
                for (p, v) in f.params.iter().zip(&vals) {
                    frame.insert(p.name.clone(), *v);
                }
                self.env.push(frame);
                self.depth += 1;
                let r = self.run_block(&f.body);
                self.depth -= 1;
                self.env.pop();
                match r? {
                    Flow::Return(Some(v)) => Ok(v),
                    _ => Ok(Value::Int(0)),
                }
            }
        }
    }

    /// MIN/MAX(target, candidate, flag): improve target atomically and
    /// set the flag to 1 when this call changed it.
    fn reduce_minmax(&mut self, is_min: bool, args: &[Expr]) -> Result<(), RuntimeError> {
        let op = if is_min { "MIN" } else { "MAX" };
        if args.len() != 3 {
            return Err(everr(format!("{op} takes (target, candidate, flag)")));
        }
        let cand = self.eval(&args[1])?.as_int()?;
        let target = self.resolve_lvalue(&args[0])?;
        let improved = match &target {
            LvRef::Local(name) => {
                let cur = self.read_var(name)?.as_int()?;
                let better = if is_min { cand < cur } else { cand > cur };
                if better {
                    self.set_local(name, Value::Int(cand))?;
                }
                better
            }
            LvRef::Global(g) => {
                self.trace_global(*g, true);
                cas_improve(&self.view.globals[*g], cand, is_min)
            }
            LvRef::PropElem(arr, i) => cas_improve(&arr[*i], cand, is_min),
        };
        if improved {
            let flag = self.resolve_lvalue(&args[2])?;
            self.write_lvalue(flag, Value::Int(1))?;
        }
        Ok(())
    }

    /// RADD/RMUL(target, value): commutative reduction. Worker writes
    /// to globals accumulate in scratch and merge at round end; every
    /// other target is applied atomically in place.
    fn reduce_arith(&mut self, is_add: bool, args: &[Expr]) -> Result<(), RuntimeError> {
        let op = if is_add { "RADD" } else { "RMUL" };
        if args.len() != 2 {
            return Err(everr(format!("{op} takes (target, value)")));
        }
        let v = self.eval(&args[1])?.as_int()?;
        let target = self.resolve_lvalue(&args[0])?;
        match target {
            LvRef::Local(name) => {
                let cur = self.read_var(&name)?.as_int()?;
                let next = if is_add { cur.wrapping_add(v) } else { cur.wrapping_mul(v) };
                self.set_local(&name, Value::Int(next))?;
            }
            LvRef::Global(g) => {
                self.trace_global(g, true);
                if self.scratch.worker {
                    if is_add {
                        *self.scratch.radd.entry(g).or_insert(0) += v;
                    } else {
                        *self.scratch.rmul.entry(g).or_insert(1) =
                            self.scratch.rmul.get(&g).copied().unwrap_or(1).wrapping_mul(v);
                    }
                } else if is_add {
                    self.view.globals[g].fetch_add(v, Ordering::SeqCst);
                } else {
                    atomic_mul(&self.view.globals[g], v);
                }
            }
            LvRef::PropElem(arr, i) => {
                if is_add {
                    arr[i].fetch_add(v, Ordering::SeqCst);
                } else {
                    atomic_mul(&arr[i], v);
                }
            }
        }
        Ok(())
    }

    fn eval_method(
        &mut self,
        base: &Expr,
        name: &str,
        args: &[Expr],
    ) -> Result<Value, RuntimeError> {
        // graph.read consumes its argv argument unevaluated.
        if name == "read" {
            return self.graph_read(base, args);
        }
        let b = self.eval(base)?;
        match b {
            Value::Graph(g) => match name {
                "getweight" => {
                    if args.len() != 2 {
                        return Err(everr("getweight takes two points"));
                    }
                    let (ga, a) = self.eval(&args[0])?.as_point()?;
                    let (gb, bpt) = self.eval(&args[1])?.as_point()?;
                    if ga != g || gb != g {
                        return Err(everr("getweight arguments must belong to the graph"));
                    }
                    self.edge_weight(g, a, bpt).map(Value::Int)
                }
                _ => Err(everr(format!("unknown graph method {name}"))),
            },
            Value::SetRef(s) => {
                let sim = self.host.sets[s]
                    .get()
                    .ok_or_else(|| everr("set used before its declaration"))?;
                match name {
                    "find" => {
                        if args.len() != 1 {
                            return Err(everr("find takes one point"));
                        }
                        let x = self.eval(&args[0])?.as_int()?;
                        let root = sim.find(x)?;
                        Ok(Value::Point { idx: root, graph: sim.graph })
                    }
                    "union" => {
                        if args.len() != 2 {
                            return Err(everr("union takes two points"));
                        }
                        let a = self.eval(&args[0])?.as_int()?;
                        let b = self.eval(&args[1])?.as_int()?;
                        Ok(Value::Int(sim.union(a, b, self.scratch.owner)?))
                    }
                    _ => Err(everr(format!("unknown set method {name}"))),
                }
            }
            Value::CollRef(c) => match name {
                "add" => {
                    if args.len() != 1 {
                        return Err(everr("add takes one point"));
                    }
                    let (g, i) = self.eval(&args[0])?.as_point()?;
                    if self.scratch.worker {
                        self.scratch.pushes.push((c, g, i));
                    } else {
                        self.host.colls[c].lock().unwrap().push((g, i));
                    }
                    Ok(Value::Int(0))
                }
                "size" => {
                    if self.scratch.worker {
                        return Err(everr("collection size is only readable from host code"));
                    }
                    Ok(Value::Int(self.host.colls[c].lock().unwrap().len() as i64))
                }
                _ => Err(everr(format!("unknown collection method {name}"))),
            },
            other => Err(everr(format!("{other:?} has no method {name}"))),
        }
    }

    fn graph_read(&mut self, base: &Expr, args: &[Expr]) -> Result<Value, RuntimeError> {
        if self.scratch.worker {
            return Err(everr("graphs must be read from host code"));
        }
        let g = as_graph(self.eval(base)?)?;
        let path = match args {
            [Expr { kind: ExprKind::Index { base, idx }, .. }]
                if matches!(&base.kind, ExprKind::Var(v) if v == "argv") =>
            {
                let k = self.eval(idx)?.as_int()?;
                if k < 1 {
                    return Err(everr(format!("argv index must be at least 1, got {k}")));
                }
                self.host.argv.get(k as usize - 1).cloned().ok_or(
                    RuntimeError::MissingInput {
                        index: k as usize,
                        provided: self.host.argv.len(),
                    },
                )?
            }
            _ => return Err(everr("graph.read takes a single argv[...] argument")),
        };
        let (n, mut edges) = crate::gen::read_graph(std::path::Path::new(&path))
            .map_err(|e| RuntimeError::GraphLoad(e.to_string()))?;
        if self.host.dedup_edges {
            edges = crate::gen::dedup_min_weight(&edges);
        }
        let store = GraphStore::new(n, edges).map_err(RuntimeError::GraphLoad)?;
        self.host.attach_store(g, store)?;
        Ok(Value::Int(0))
    }

    /// Weight of the edge a→b. Inside a neighbour loop over exactly
    /// this edge the answer comes from the loop, which distinguishes
    /// parallel edges; otherwise fall back to the cheapest parallel
    /// edge in the CSR row.
    fn edge_weight(&mut self, g: usize, a: i64, b: i64) -> Result<i64, RuntimeError> {
        for ctx in self.edges.iter().rev() {
            if ctx.graph == g && ctx.src == a && ctx.dst == b {
                return Ok(ctx.weight);
            }
        }
        let store = self.host.store(g)?;
        let n = store.num_points();
        if a < 0 || a >= n as i64 || b < 0 || b >= n as i64 {
            return Err(everr(format!("getweight points outside 0..{n}")));
        }
        store
            .min_weight(a as usize, b as u32)
            .ok_or_else(|| everr(format!("no edge from {a} to {b}")))
    }

    // -- lvalues ------------------------------------------------------------

    fn resolve_lvalue(&mut self, e: &Expr) -> Result<LvRef, RuntimeError> {
        match &e.kind {
            ExprKind::Var(name) => {
                if self.env.iter().any(|f| f.contains_key(name.as_str())) {
                    Ok(LvRef::Local(name.clone()))
                } else if let Some(&g) = self.host.global_index.get(name) {
                    Ok(LvRef::Global(g))
                } else {
                    Err(everr(format!("cannot assign to unknown variable {name}")))
                }
            }
            ExprKind::Field { base, name } => {
                let b = self.eval(base)?;
                let (graph, idx) = match b {
                    Value::Point { idx, graph } => (graph, idx),
                    Value::Edge { idx, graph } => {
                        if matches!(name.as_str(), "src" | "dst" | "weight") {
                            return Err(everr(format!("edge {name} is read-only")));
                        }
                        (graph, idx as i64)
                    }
                    other => {
                        return Err(everr(format!("{other:?} has no assignable member {name}")))
                    }
                };
                let arr = self.prop_array(graph, name, true)?;
                let i = check_elem(&arr, idx, graph, name, self.host)?;
                Ok(LvRef::PropElem(arr, i))
            }
            _ => Err(everr("expression is not assignable")),
        }
    }

    fn write_lvalue(&mut self, lv: LvRef, v: Value) -> Result<(), RuntimeError> {
        match lv {
            LvRef::Local(name) => self.set_local(&name, v),
            LvRef::Global(g) => {
                self.trace_global(g, true);
                let val = v.as_int()?;
                if self.scratch.worker {
                    // Plain worker writes OR-combine at round end; the
                    // convergence-flag pattern this exists for only
                    // ever writes ones.
                    *self.scratch.flag_or.entry(g).or_insert(0) |= val;
                } else {
                    self.view.globals[g].store(val, Ordering::SeqCst);
                }
                Ok(())
            }
            LvRef::PropElem(arr, i) => {
                arr[i].store(v.as_int()?, Ordering::Relaxed);
                Ok(())
            }
        }
    }

    fn set_local(&mut self, name: &str, v: Value) -> Result<(), RuntimeError> {
        for frame in self.env.iter_mut().rev() {
            if let Some(slot) = frame.get_mut(name) {
                *slot = v;
                return Ok(());
            }
        }
        Err(everr(format!("cannot assign to unknown variable {name}")))
    }

    // -- storage resolution -------------------------------------------------

    /// Array behind (graph, prop) for this context. Launch views are
    /// authoritative; the host context resolves through host state.
    fn prop_array(
        &mut self,
        graph: usize,
        name: &str,
        write: bool,
    ) -> Result<Arc<Vec<AtomicI64>>, RuntimeError> {
        self.trace_prop(graph, name, write);
        for (g, p, arr) in &self.view.props {
            if *g == graph && p == name {
                return Ok(arr.clone());
            }
        }
        match self.view.dev {
            None => self.host.host_prop(graph, name),
            Some(d) => Err(everr(format!(
                "property {}.{name} is not resident on device {d}",
                self.host.graphs[graph].name
            ))),
        }
    }

    fn trace_global(&mut self, g: usize, write: bool) {
        if let Some(t) = self.scratch.trace.as_mut() {
            let name = self.host.global_names[g].clone();
            if write {
                t.wrote_globals.insert(name);
            } else {
                t.read_globals.insert(name);
            }
        }
    }

    fn trace_prop(&mut self, graph: usize, name: &str, write: bool) {
        if let Some(t) = self.scratch.trace.as_mut() {
            let key = (self.host.graphs[graph].name.clone(), name.to_string());
            if write {
                t.wrote_props.insert(key);
            } else {
                t.read_props.insert(key);
            }
        }
    }
}

fn as_graph(v: Value) -> Result<usize, RuntimeError> {
    match v {
        Value::Graph(g) => Ok(g),
        other => Err(everr(format!("expected a graph, found {other:?}"))),
    }
}

fn as_f64(v: Value) -> Result<f64, RuntimeError> {
    match v {
        Value::Float(f) => Ok(f),
        other => Ok(other.as_int()? as f64),
    }
}

fn check_elem(
    arr: &[AtomicI64],
    idx: i64,
    graph: usize,
    name: &str,
    host: &HostState,
) -> Result<usize, RuntimeError> {
    if idx < 0 || idx as usize >= arr.len() {
        return Err(everr(format!(
            "index {idx} outside property {}.{name} of length {}",
            host.graphs[graph].name,
            arr.len()
        )));
    }
    Ok(idx as usize)
}

fn load_elem(
    arr: &[AtomicI64],
    idx: i64,
    graph: usize,
    name: &str,
    host: &HostState,
) -> Result<i64, RuntimeError> {
    let i = check_elem(arr, idx, graph, name, host)?;
    Ok(arr[i].load(Ordering::Relaxed))
}

/// Lower (or raise) the cell to `cand` with a sequentially consistent
/// compare-and-swap loop; true when this call changed it.
fn cas_improve(cell: &AtomicI64, cand: i64, is_min: bool) -> bool {
    let mut cur = cell.load(Ordering::SeqCst);
    loop {
        let better = if is_min { cand < cur } else { cand > cur };
        if !better {
            return false;
        }
        match cell.compare_exchange(cur, cand, Ordering::SeqCst, Ordering::SeqCst) {
            Ok(_) => return true,
            Err(seen) => cur = seen,
        }
    }
}

pub(crate) fn atomic_mul(cell: &AtomicI64, v: i64) {
    let mut cur = cell.load(Ordering::SeqCst);
    loop {
        match cell.compare_exchange(
            cur,
            cur.wrapping_mul(v),
            Ordering::SeqCst,
            Ordering::SeqCst,
        ) {
            Ok(_) => return,
            Err(seen) => cur = seen,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::EdgeRec;
    use crate::lower::PlanSymbols;

    fn triangle_state() -> HostState {
        let symbols = PlanSymbols {
            graphs: vec!["graph".into()],
            props: vec![("graph".into(), "dist".into())],
            globals: vec![("changed".into(), 0)],
            sets: vec![],
            colls: vec![],
        };
        let st = HostState::init(&symbols, &[], false);
        let edges = vec![
            EdgeRec { src: 0, dst: 1, weight: 5 },
            EdgeRec { src: 0, dst: 2, weight: 3 },
            EdgeRec { src: 2, dst: 1, weight: 1 },
        ];
        st.attach_store(0, GraphStore::new(3, edges).unwrap()).unwrap();
        st.declare_prop(0, "dist", ElemKind::Point);
        st
    }

    fn eval_in(state: &HostState, e: &Expr) -> Result<Value, RuntimeError> {
        let view = View::host(state);
        let mut scratch = Scratch::host();
        let mut it = Interp::new(state, &view, &[], &mut scratch, 1000);
        it.eval(e)
    }

    #[test]
    fn arithmetic_and_comparison() {
        let st = triangle_state();
        let e = Expr::synth(ExprKind::Binary {
            op: BinOp::Add,
            lhs: Box::new(Expr::int(40)),
            rhs: Box::new(Expr::synth(ExprKind::Binary {
                op: BinOp::Mul,
                lhs: Box::new(Expr::int(2)),
                rhs: Box::new(Expr::int(1)),
            })),
        });
        assert_eq!(eval_in(&st, &e).unwrap(), Value::Int(42));
        let cmp = Expr::synth(ExprKind::Binary {
            op: BinOp::Lt,
            lhs: Box::new(Expr::int(1)),
            rhs: Box::new(Expr::int(2)),
        });
        assert_eq!(eval_in(&st, &cmp).unwrap(), Value::Int(1));
    }

    #[test]
    fn max_int_value() {
        let st = triangle_state();
        assert_eq!(
            eval_in(&st, &Expr::synth(ExprKind::MaxInt)).unwrap(),
            Value::Int(2147483647)
        );
    }

    #[test]
    fn division_by_zero_is_reported() {
        let st = triangle_state();
        let e = Expr::synth(ExprKind::Binary {
            op: BinOp::Div,
            lhs: Box::new(Expr::int(1)),
            rhs: Box::new(Expr::int(0)),
        });
        assert!(eval_in(&st, &e).is_err());
    }

    #[test]
    fn point_index_and_property_roundtrip() {
        let st = triangle_state();
        let view = View::host(&st);
        let mut scratch = Scratch::host();
        let mut it = Interp::new(&st, &view, &[], &mut scratch, 1000);
        // graph.points[1].dist = 7; then read it back.
        let pt = Expr::synth(ExprKind::Index {
            base: Box::new(Expr::field(Expr::var("graph"), "points")),
            idx: Box::new(Expr::int(1)),
        });
        let target = Expr::field(pt.clone(), "dist");
        let lv = it.resolve_lvalue(&target).unwrap();
        it.write_lvalue(lv, Value::Int(7)).unwrap();
        assert_eq!(it.eval(&target).unwrap(), Value::Int(7));
        // Out-of-range index is an error, not a wrap.
        let bad = Expr::synth(ExprKind::Index {
            base: Box::new(Expr::field(Expr::var("graph"), "points")),
            idx: Box::new(Expr::int(9)),
        });
        assert!(it.eval(&bad).is_err());
    }

    #[test]
    fn min_improves_once_and_sets_flag() {
        let st = triangle_state();
        st.host_prop(0, "dist").unwrap()[1].store(10, Ordering::Relaxed);
        let view = View::host(&st);
        let mut scratch = Scratch::host();
        let mut it = Interp::new(&st, &view, &[], &mut scratch, 1000);
        let target = Expr::field(
            Expr::synth(ExprKind::Index {
                base: Box::new(Expr::field(Expr::var("graph"), "points")),
                idx: Box::new(Expr::int(1)),
            }),
            "dist",
        );
        let call = |cand: i64| {
            Expr::synth(ExprKind::Call {
                name: "MIN".into(),
                args: vec![target.clone(), Expr::int(cand), Expr::var("changed")],
            })
        };
        it.eval(&call(4)).unwrap();
        assert_eq!(st.host_prop(0, "dist").unwrap()[1].load(Ordering::Relaxed), 4);
        assert_eq!(st.globals[0].load(Ordering::SeqCst), 1);
        // A worse candidate leaves both the cell and the flag alone.
        st.globals[0].store(0, Ordering::SeqCst);
        it.eval(&call(9)).unwrap();
        assert_eq!(st.host_prop(0, "dist").unwrap()[1].load(Ordering::Relaxed), 4);
        assert_eq!(st.globals[0].load(Ordering::SeqCst), 0);
    }

    #[test]
    fn worker_global_writes_stay_in_scratch() {
        let st = triangle_state();
        let view = View::host(&st);
        let mut scratch = Scratch::worker(3, false);
        let mut it = Interp::new(&st, &view, &[], &mut scratch, 1000);
        let assign = Stmt {
            sid: 0,
            pos: Pos::default(),
            kind: StmtKind::Assign { target: Expr::var("changed"), value: Expr::int(1) },
        };
        it.run_stmt(&assign).unwrap();
        // Not yet visible; parked in the accumulator.
        assert_eq!(st.globals[0].load(Ordering::SeqCst), 0);
        assert_eq!(scratch.flag_or.get(&0), Some(&1));
    }

    #[test]
    fn getweight_prefers_the_iterated_edge() {
        // Parallel edges 0→1 with weights 5 and 2; outside any loop
        // getweight returns the minimum, inside the loop the iterated
        // edge's own weight.
        let symbols = PlanSymbols {
            graphs: vec!["g".into()],
            props: vec![],
            globals: vec![("acc".into(), 0)],
            sets: vec![],
            colls: vec![],
        };
        let st = HostState::init(&symbols, &[], false);
        let edges = vec![
            EdgeRec { src: 0, dst: 1, weight: 5 },
            EdgeRec { src: 0, dst: 1, weight: 2 },
        ];
        st.attach_store(0, GraphStore::new(2, edges).unwrap()).unwrap();
        let view = View::host(&st);
        let mut scratch = Scratch::host();
        let mut it = Interp::new(&st, &view, &[], &mut scratch, 1000);

        let gw = Expr::synth(ExprKind::Method {
            base: Box::new(Expr::var("g")),
            name: "getweight".into(),
            args: vec![
                Expr::synth(ExprKind::Index {
                    base: Box::new(Expr::field(Expr::var("g"), "points")),
                    idx: Box::new(Expr::int(0)),
                }),
                Expr::var("t"),
            ],
        });
        // Outside a loop: t bound by hand, min weight wins.
        it.env.last_mut().unwrap().insert("t".into(), Value::Point { idx: 1, graph: 0 });
        assert_eq!(it.eval(&gw).unwrap(), Value::Int(2));

        // Inside the loop each parallel edge reports itself: RADD the
        // weights, expecting 5 + 2 rather than 2 + 2.
        let body = Stmt {
            sid: 1,
            pos: Pos::default(),
            kind: StmtKind::Expr {
                expr: Expr::synth(ExprKind::Call {
                    name: "RADD".into(),
                    args: vec![Expr::var("acc"), gw.clone()],
                }),
            },
        };
        let fe = Stmt {
            sid: 2,
            pos: Pos::default(),
            kind: StmtKind::Foreach(ForeachStmt {
                var: "t".into(),
                subject: Expr::synth(ExprKind::Index {
                    base: Box::new(Expr::field(Expr::var("g"), "points")),
                    idx: Box::new(Expr::int(0)),
                }),
                iter: IterKind::OutNbrs,
                filter: None,
                body: Block { stmts: vec![body] },
            }),
        };
        it.run_stmt(&fe).unwrap();
        assert_eq!(st.globals[0].load(Ordering::SeqCst), 7);
        assert_eq!(it.scratch.edge_work, 2);
    }

    #[test]
    fn foreach_filter_skips_elements() {
        let st = triangle_state();
        for i in 0..3 {
            st.host_prop(0, "dist").unwrap()[i].store(i as i64, Ordering::Relaxed);
        }
        let view = View::host(&st);
        let mut scratch = Scratch::host();
        let mut it = Interp::new(&st, &view, &[], &mut scratch, 1000);
        // foreach (p In graph.points) (p.dist >= 1) RADD(changed, 1);
        let fe = Stmt {
            sid: 0,
            pos: Pos::default(),
            kind: StmtKind::Foreach(ForeachStmt {
                var: "p".into(),
                subject: Expr::var("graph"),
                iter: IterKind::Points,
                filter: Some(Expr::synth(ExprKind::Binary {
                    op: BinOp::Ge,
                    lhs: Box::new(Expr::field(Expr::var("p"), "dist")),
                    rhs: Box::new(Expr::int(1)),
                })),
                body: Block {
                    stmts: vec![Stmt {
                        sid: 1,
                        pos: Pos::default(),
                        kind: StmtKind::Expr {
                            expr: Expr::synth(ExprKind::Call {
                                name: "RADD".into(),
                                args: vec![Expr::var("changed"), Expr::int(1)],
                            }),
                        },
                    }],
                },
            }),
        };
        it.run_stmt(&fe).unwrap();
        assert_eq!(st.globals[0].load(Ordering::SeqCst), 2);
    }

    #[test]
    fn single_releases_after_the_block() {
        let st = triangle_state();
        let view = View::host(&st);
        let mut scratch = Scratch::host();
        let mut it = Interp::new(&st, &view, &[], &mut scratch, 1000);
        it.env.last_mut().unwrap().insert("r".into(), Value::Point { idx: 1, graph: 0 });
        let stmt = Stmt {
            sid: 0,
            pos: Pos::default(),
            kind: StmtKind::Single {
                targets: vec![Expr::var("r")],
                then_blk: Block {
                    stmts: vec![Stmt {
                        sid: 1,
                        pos: Pos::default(),
                        kind: StmtKind::Assign {
                            target: Expr::var("changed"),
                            value: Expr::int(1),
                        },
                    }],
                },
                else_blk: None,
            },
        };
        it.run_stmt(&stmt).unwrap();
        assert_eq!(st.globals[0].load(Ordering::SeqCst), 1);
        assert_eq!(st.locks(0).unwrap()[1].load(Ordering::SeqCst), -1);
    }

    #[test]
    fn single_takes_else_branch_when_held() {
        let st = triangle_state();
        st.locks(0).unwrap()[1].store(42, Ordering::SeqCst);
        let view = View::host(&st);
        let mut scratch = Scratch::host();
        let mut it = Interp::new(&st, &view, &[], &mut scratch, 1000);
        it.env.last_mut().unwrap().insert("r".into(), Value::Point { idx: 1, graph: 0 });
        let stmt = Stmt {
            sid: 0,
            pos: Pos::default(),
            kind: StmtKind::Single {
                targets: vec![Expr::var("r")],
                then_blk: Block {
                    stmts: vec![Stmt {
                        sid: 1,
                        pos: Pos::default(),
                        kind: StmtKind::Assign {
                            target: Expr::var("changed"),
                            value: Expr::int(1),
                        },
                    }],
                },
                else_blk: Some(Block {
                    stmts: vec![Stmt {
                        sid: 2,
                        pos: Pos::default(),
                        kind: StmtKind::Assign {
                            target: Expr::var("changed"),
                            value: Expr::int(9),
                        },
                    }],
                }),
            },
        };
        it.run_stmt(&stmt).unwrap();
        assert_eq!(st.globals[0].load(Ordering::SeqCst), 9);
        // The foreign owner keeps its lock.
        assert_eq!(st.locks(0).unwrap()[1].load(Ordering::SeqCst), 42);
    }

    #[test]
    fn device_view_refuses_unlisted_properties() {
        let st = triangle_state();
        let globals: Vec<AtomicI64> = vec![AtomicI64::new(0)];
        let view = View { props: Vec::new(), globals: &globals, dev: Some(0) };
        let mut scratch = Scratch::worker(0, false);
        let mut it = Interp::new(&st, &view, &[], &mut scratch, 1000);
        it.env.last_mut().unwrap().insert("p".into(), Value::Point { idx: 0, graph: 0 });
        let e = Expr::field(Expr::var("p"), "dist");
        let msg = it.eval(&e).unwrap_err().to_string();
        assert!(msg.contains("not resident"), "unexpected error: {msg}");
    }

    #[test]
    fn argv_outside_read_is_rejected() {
        let st = triangle_state();
        let e = Expr::synth(ExprKind::Index {
            base: Box::new(Expr::var("argv")),
            idx: Box::new(Expr::int(1)),
        });
        assert!(eval_in(&st, &e).is_err());
    }

    #[test]
    fn missing_argv_entry_reports_counts() {
        let symbols = PlanSymbols {
            graphs: vec!["g".into()],
            props: vec![],
            globals: vec![],
            sets: vec![],
            colls: vec![],
        };
        let st = HostState::init(&symbols, &["one.txt".into()], false);
        let view = View::host(&st);
        let mut scratch = Scratch::host();
        let mut it = Interp::new(&st, &view, &[], &mut scratch, 1000);
        let read = Expr::synth(ExprKind::Method {
            base: Box::new(Expr::var("g")),
            name: "read".into(),
            args: vec![Expr::synth(ExprKind::Index {
                base: Box::new(Expr::var("argv")),
                idx: Box::new(Expr::int(2)),
            })],
        });
        match it.eval(&read) {
            Err(RuntimeError::MissingInput { index: 2, provided: 1 }) => {}
            other => panic!("expected MissingInput, got {other:?}"),
        }
    }
}
