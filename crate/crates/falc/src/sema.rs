//! Name resolution, type checking and read/write-set computation.
//!
//! Property identity is a pair (graph variable in main, property name):
//! two graphs may both declare `comp` without the accesses ever being
//! confused. Inside a function the graph is known through bindings: a
//! Point parameter, Edge parameter or Set parameter is bound to the
//! function's unique Graph parameter; locals carry an explicit binding
//! (`Point (g) p;`), and loop variables inherit the binding of the
//! iterated subject. At a call site formal bindings are substituted by
//! the actual argument names, so access sets always speak in the
//! caller's vocabulary.

use crate::ast::*;
use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use thiserror::Error;

#[derive(Debug, Error, Clone)]
#[error("semantic error at {pos}: {message}")]
pub struct SemanticError {
    pub pos: Pos,
    pub message: String,
}

/// One side (reads or writes) of an access set.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Access {
    pub globals: BTreeSet<String>,
    /// (graph variable, property name); `weight` stands for the builtin
    /// edge weight.
    pub props: BTreeSet<(String, String)>,
    pub colls: BTreeSet<String>,
    pub sets: BTreeSet<String>,
}

impl Access {
    pub fn is_empty(&self) -> bool {
        self.globals.is_empty()
            && self.props.is_empty()
            && self.colls.is_empty()
            && self.sets.is_empty()
    }

    pub fn union_with(&mut self, other: &Access) {
        self.globals.extend(other.globals.iter().cloned());
        self.props.extend(other.props.iter().cloned());
        self.colls.extend(other.colls.iter().cloned());
        self.sets.extend(other.sets.iter().cloned());
    }

    pub fn intersects(&self, other: &Access) -> bool {
        self.globals.iter().any(|g| other.globals.contains(g))
            || self.props.iter().any(|p| other.props.contains(p))
            || self.colls.iter().any(|c| other.colls.contains(c))
            || self.sets.iter().any(|s| other.sets.contains(s))
    }

    /// Rewrite names through a formal-to-actual substitution.
    fn substitute(&self, map: &HashMap<String, String>) -> Access {
        let sub = |n: &String| map.get(n).cloned().unwrap_or_else(|| n.clone());
        Access {
            globals: self.globals.clone(),
            props: self.props.iter().map(|(g, p)| (sub(g), p.clone())).collect(),
            colls: self.colls.iter().map(sub).collect(),
            sets: self.sets.iter().map(sub).collect(),
        }
    }
}

impl fmt::Display for Access {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut items: Vec<String> = Vec::new();
        items.extend(self.globals.iter().cloned());
        items.extend(self.props.iter().map(|(g, p)| format!("{g}.{p}")));
        items.extend(self.colls.iter().cloned());
        items.extend(self.sets.iter().cloned());
        write!(f, "{{{}}}", items.join(","))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AccessSet {
    pub reads: Access,
    pub writes: Access,
}

impl AccessSet {
    pub fn union_with(&mut self, other: &AccessSet) {
        self.reads.union_with(&other.reads);
        self.writes.union_with(&other.writes);
    }

    pub fn substitute(&self, map: &HashMap<String, String>) -> AccessSet {
        AccessSet { reads: self.reads.substitute(map), writes: self.writes.substitute(map) }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PropDecl {
    pub name: String,
    pub elem: ElemKind,
    pub ty: DslType,
}

#[derive(Debug, Clone)]
pub struct SymbolTable {
    /// Scalar globals in declaration order.
    pub globals: Vec<GlobalDecl>,
    /// Graph variables declared in main, in declaration order.
    pub graph_vars: Vec<String>,
    /// Declared properties per graph variable, in declaration order.
    pub props: BTreeMap<String, Vec<PropDecl>>,
    /// Set variables in main with their bound graph.
    pub set_vars: BTreeMap<String, String>,
    /// Collection variables in main.
    pub coll_vars: Vec<String>,
    /// Access sets per function (body-level, transitively through calls,
    /// in the function's own vocabulary).
    pub fn_access: HashMap<String, AccessSet>,
}

impl SymbolTable {
    pub fn global_id(&self, name: &str) -> Option<usize> {
        self.globals.iter().position(|g| g.name == name)
    }

    pub fn prop_decl(&self, graph: &str, prop: &str) -> Option<&PropDecl> {
        self.props.get(graph).and_then(|v| v.iter().find(|p| p.name == prop))
    }
}

/// A parallel foreach whose body is a single call to a user function.
#[derive(Debug, Clone)]
pub struct TargetFunctionInfo {
    pub name: String,
    pub launch_sid: StmtId,
    /// True when the launch iterates `graph.points`.
    pub outer: bool,
    pub iter: IterKind,
    /// Graph variable for points/edges launches.
    pub graph_var: Option<String>,
    /// Collection variable for worklist launches.
    pub coll_var: Option<String>,
    /// At-call-site sets: callee access substituted to main's names,
    /// plus filter reads and argument reads.
    pub access: AccessSet,
}

// ---------------------------------------------------------------------------
// Resolution entry point
// ---------------------------------------------------------------------------

pub fn resolve(p: &Program) -> Result<SymbolTable, Vec<SemanticError>> {
    let mut ck = Checker::new(p);
    ck.collect_main_decls();
    ck.check_program();
    if !ck.errors.is_empty() {
        return Err(ck.errors);
    }
    let mut table = SymbolTable {
        globals: p.globals.clone(),
        graph_vars: ck.graph_vars.clone(),
        props: ck.props.clone(),
        set_vars: ck.set_vars.clone(),
        coll_vars: ck.coll_vars.clone(),
        fn_access: HashMap::new(),
    };
    // Access sets, computed bottom-up over the (acyclic) call graph.
    let mut rw = RwComputer { program: p, table: &table, cache: HashMap::new(), stack: Vec::new() };
    let mut fn_access = HashMap::new();
    for f in &p.functions {
        match rw.function_access(&f.name) {
            Ok(a) => {
                fn_access.insert(f.name.clone(), a);
            }
            Err(e) => return Err(vec![e]),
        }
    }
    table.fn_access = fn_access;
    Ok(table)
}

// ---------------------------------------------------------------------------
// Type checking
// ---------------------------------------------------------------------------

/// Checked type of an expression. Beyond the value types, the checker
/// tracks a few shapes that only exist in specific positions.
#[derive(Debug, Clone, PartialEq)]
enum Ty {
    Val(DslType, Option<String>), // value, with graph binding for Point/Edge
    PointsArray(String),          // graph.points, awaiting an index
    Argv,                         // the argv array
    ArgvRef,                      // argv[k]
}

impl Ty {
    fn int() -> Ty {
        Ty::Val(DslType::Int, None)
    }

    fn describe(&self) -> String {
        match self {
            Ty::Val(t, _) => t.keyword().to_string(),
            Ty::PointsArray(_) => "points array".to_string(),
            Ty::Argv => "argv".to_string(),
            Ty::ArgvRef => "input path".to_string(),
        }
    }

    fn is_scalar(&self) -> bool {
        matches!(self, Ty::Val(DslType::Int | DslType::Float | DslType::Bool, _))
    }

    /// Usable where an int is expected: ints, bools and points (a point
    /// evaluates to its index in arithmetic positions).
    fn int_like(&self) -> bool {
        matches!(self, Ty::Val(DslType::Int | DslType::Bool | DslType::Point, _))
    }

    fn numeric_like(&self) -> bool {
        self.int_like() || matches!(self, Ty::Val(DslType::Float, _))
    }
}

#[derive(Clone)]
struct VarInfo {
    ty: DslType,
    graph: Option<String>,
}

struct Checker<'a> {
    program: &'a Program,
    errors: Vec<SemanticError>,
    fns: HashMap<String, (DslType, Vec<Param>)>,
    graph_vars: Vec<String>,
    props: BTreeMap<String, Vec<PropDecl>>,
    set_vars: BTreeMap<String, String>,
    coll_vars: Vec<String>,
    scopes: Vec<HashMap<String, VarInfo>>,
    loop_depth: usize,
    in_main: bool,
}

impl<'a> Checker<'a> {
    fn new(program: &'a Program) -> Self {
        Checker {
            program,
            errors: Vec::new(),
            fns: HashMap::new(),
            graph_vars: Vec::new(),
            props: BTreeMap::new(),
            set_vars: BTreeMap::new(),
            coll_vars: Vec::new(),
            scopes: Vec::new(),
            loop_depth: 0,
            in_main: false,
        }
    }

    fn err(&mut self, pos: Pos, message: impl Into<String>) {
        self.errors.push(SemanticError { pos, message: message.into() });
    }

    /// First pass over main: graph variables, property declarations, Set
    /// and Collection declarations. Functions may mention properties, so
    /// this runs before any body is checked.
    fn collect_main_decls(&mut self) {
        let main = match self.program.main() {
            Some(m) => m,
            None => {
                self.err(Pos::default(), "program has no main function");
                return;
            }
        };
        if main.ret != DslType::Int {
            self.err(main.pos, "main must return int");
        }
        if !main.params.is_empty() {
            self.err(main.pos, "main takes no parameters; graph inputs arrive through argv");
        }
        let mut graph_seen = HashSet::new();
        visit_stmts(&main.body, &mut |s| {
            match &s.kind {
                StmtKind::VarDecl { decls } => {
                    for d in decls {
                        match d.ty {
                            DslType::Graph => {
                                if graph_seen.insert(d.name.clone()) {
                                    self.graph_vars.push(d.name.clone());
                                    self.props.entry(d.name.clone()).or_default();
                                }
                            }
                            DslType::Set => {
                                let Some(g) = &d.graph else {
                                    self.errors.push(SemanticError {
                                        pos: s.pos,
                                        message: format!(
                                            "Set {} needs a graph binding: Set {}(g);",
                                            d.name, d.name
                                        ),
                                    });
                                    continue;
                                };
                                self.set_vars.insert(d.name.clone(), g.clone());
                            }
                            DslType::Collection => self.coll_vars.push(d.name.clone()),
                            _ => {}
                        }
                    }
                }
                StmtKind::Expr { expr } => {
                    if let ExprKind::AddProperty { graph, elem, prop, ty } = &expr.kind {
                        let gname = match &graph.kind {
                            ExprKind::Var(n) => n.clone(),
                            _ => {
                                self.errors.push(SemanticError {
                                    pos: expr.pos,
                                    message: "property declared on a non-variable graph"
                                        .to_string(),
                                });
                                return;
                            }
                        };
                        if *ty != DslType::Int {
                            self.errors.push(SemanticError {
                                pos: expr.pos,
                                message: format!(
                                    "property {prop}: only int properties are supported"
                                ),
                            });
                        }
                        let list = self.props.entry(gname.clone()).or_default();
                        if list.iter().any(|p| p.name == *prop) {
                            self.errors.push(SemanticError {
                                pos: expr.pos,
                                message: format!("property {prop} redeclared on {gname}"),
                            });
                        } else {
                            list.push(PropDecl { name: prop.clone(), elem: *elem, ty: *ty });
                        }
                    }
                }
                _ => {}
            };
        });
    }

    fn check_program(&mut self) {
        // Globals: unique names, scalar initialisers.
        let mut seen = HashSet::new();
        for g in &self.program.globals.clone() {
            if !seen.insert(g.name.clone()) {
                self.err(g.pos, format!("global {} redeclared", g.name));
            }
            if !matches!(
                g.init.kind,
                ExprKind::Int(_) | ExprKind::Float(_) | ExprKind::Bool(_) | ExprKind::MaxInt
            ) {
                self.err(g.pos, format!("global {} initialiser must be a literal", g.name));
            }
        }
        let mut fn_seen = HashSet::new();
        for f in &self.program.functions {
            if !fn_seen.insert(f.name.clone()) {
                self.err(f.pos, format!("function {} redeclared", f.name));
            }
            self.fns.insert(f.name.clone(), (f.ret, f.params.clone()));
        }
        if self.program.main().is_none() {
            return;
        }
        self.check_recursion();
        for f in &self.program.functions {
            self.check_function(f);
        }
    }

    /// The call graph must be acyclic; access-set computation and the
    /// interpreter both rely on it.
    fn check_recursion(&mut self) {
        let mut calls: HashMap<&str, Vec<String>> = HashMap::new();
        for f in &self.program.functions {
            let mut callees = Vec::new();
            visit_stmts(&f.body, &mut |s| {
                collect_calls_stmt(s, &mut callees);
            });
            calls.insert(&f.name, callees);
        }
        // DFS with colouring.
        let mut state: HashMap<&str, u8> = HashMap::new();
        fn dfs<'x>(
            name: &'x str,
            calls: &HashMap<&'x str, Vec<String>>,
            state: &mut HashMap<&'x str, u8>,
        ) -> bool {
            match state.get(name) {
                Some(1) => return false, // on stack: cycle
                Some(2) => return true,
                _ => {}
            }
            state.insert(name, 1);
            if let Some(cs) = calls.get(name) {
                for c in cs {
                    if let Some((k, _)) = calls.get_key_value(c.as_str()) {
                        if !dfs(k, calls, state) {
                            return false;
                        }
                    }
                }
            }
            state.insert(name, 2);
            true
        }
        for f in &self.program.functions {
            if !dfs(&f.name, &calls, &mut state) {
                self.err(f.pos, format!("recursion involving {} is not supported", f.name));
                return;
            }
        }
    }

    fn push_scope(&mut self) {
        self.scopes.push(HashMap::new());
    }

    fn pop_scope(&mut self) {
        self.scopes.pop();
    }

    fn declare(&mut self, pos: Pos, name: &str, info: VarInfo) {
        let dup = match self.scopes.last_mut() {
            Some(scope) => scope.insert(name.to_string(), info).is_some(),
            None => false,
        };
        if dup {
            self.err(pos, format!("{name} redeclared in the same scope"));
        }
    }

    fn lookup(&self, name: &str) -> Option<VarInfo> {
        for s in self.scopes.iter().rev() {
            if let Some(v) = s.get(name) {
                return Some(v.clone());
            }
        }
        None
    }

    /// The unique Graph parameter of the current function, used as the
    /// implicit binding of Point/Edge/Set parameters.
    fn graph_param(&self, f: &FunctionDecl) -> Option<String> {
        let mut graphs = f.params.iter().filter(|p| p.ty == DslType::Graph);
        let first = graphs.next()?;
        if graphs.next().is_some() {
            return None;
        }
        Some(first.name.clone())
    }

    fn check_function(&mut self, f: &FunctionDecl) {
        self.in_main = f.name == "main";
        self.push_scope();
        let implicit_graph = self.graph_param(f);
        let mut param_seen = HashSet::new();
        for p in &f.params.clone() {
            if !param_seen.insert(p.name.clone()) {
                self.err(f.pos, format!("parameter {} duplicated in {}", p.name, f.name));
            }
            let graph = match p.ty {
                DslType::Point | DslType::Edge | DslType::Set => {
                    if implicit_graph.is_none() {
                        self.err(
                            f.pos,
                            format!(
                                "{}: parameter {} needs exactly one Graph parameter to bind to",
                                f.name, p.name
                            ),
                        );
                    }
                    implicit_graph.clone()
                }
                _ => None,
            };
            if p.ty == DslType::Void {
                self.err(f.pos, format!("parameter {} cannot be void", p.name));
            }
            self.declare(f.pos, &p.name, VarInfo { ty: p.ty, graph });
        }
        self.check_block(&f.body.clone(), f);
        self.pop_scope();
        self.in_main = false;
    }

    fn check_block(&mut self, b: &Block, f: &FunctionDecl) {
        self.push_scope();
        for s in &b.stmts {
            self.check_stmt(s, f);
        }
        self.pop_scope();
    }

    fn check_stmt(&mut self, s: &Stmt, f: &FunctionDecl) {
        match &s.kind {
            StmtKind::VarDecl { decls } => {
                for d in decls {
                    match d.ty {
                        DslType::Void => self.err(s.pos, "variables cannot be void"),
                        DslType::Graph | DslType::Set | DslType::Collection => {
                            if !self.in_main {
                                self.err(
                                    s.pos,
                                    format!(
                                        "{} variables may only be declared in main",
                                        d.ty.keyword()
                                    ),
                                );
                            }
                        }
                        _ => {}
                    }
                    let mut graph = d.graph.clone();
                    if let Some(g) = &graph {
                        match self.lookup(g) {
                            Some(v) if v.ty == DslType::Graph => {}
                            Some(_) => self.err(s.pos, format!("{g} is not a Graph")),
                            None => self.err(s.pos, format!("unknown graph {g}")),
                        }
                    } else if matches!(d.ty, DslType::Point | DslType::Edge) {
                        // Allow `Point p;` when the scope has an unambiguous
                        // graph: functions with one Graph parameter.
                        graph = if self.in_main {
                            None
                        } else {
                            self.graph_param(f)
                        };
                        if graph.is_none() {
                            self.err(
                                s.pos,
                                format!(
                                    "{} {} needs an explicit graph binding: {} (g) {};",
                                    d.ty.keyword(),
                                    d.name,
                                    d.ty.keyword(),
                                    d.name
                                ),
                            );
                        }
                    }
                    if let Some(init) = &d.init {
                        let ty = self.check_expr(init);
                        self.require_assignable(init.pos, d.ty, &ty);
                    }
                    self.declare(s.pos, &d.name, VarInfo { ty: d.ty, graph });
                }
            }
            StmtKind::Assign { target, value } => {
                let tty = self.check_lvalue(target);
                let vty = self.check_expr(value);
                if let Some(Ty::Val(t, _)) = tty {
                    self.require_assignable(value.pos, t, &vty);
                }
            }
            StmtKind::If { cond, then_blk, else_blk } => {
                self.require_condition(cond);
                self.check_block(then_blk, f);
                if let Some(e) = else_blk {
                    self.check_block(e, f);
                }
            }
            StmtKind::While { cond, body } => {
                self.require_condition(cond);
                self.loop_depth += 1;
                self.check_block(body, f);
                self.loop_depth -= 1;
            }
            StmtKind::Break => {
                if self.loop_depth == 0 {
                    self.err(s.pos, "break outside of a while loop");
                }
            }
            StmtKind::Return { value } => match (value, f.ret) {
                (None, DslType::Void) => {}
                (None, _) => self.err(s.pos, format!("{} must return a value", f.name)),
                (Some(v), ret) => {
                    let ty = self.check_expr(v);
                    if ret == DslType::Void {
                        self.err(s.pos, format!("{} returns void", f.name));
                    } else {
                        self.require_assignable(v.pos, ret, &ty);
                    }
                }
            },
            StmtKind::Expr { expr } => {
                self.check_expr_stmt(expr);
            }
            StmtKind::Foreach(fe) => {
                let subj = self.check_expr(&fe.subject);
                let (var_ty, var_graph) = match (fe.iter, &subj) {
                    (IterKind::Points, Ty::Val(DslType::Graph, _)) => {
                        (DslType::Point, subject_name(&fe.subject))
                    }
                    (IterKind::Edges, Ty::Val(DslType::Graph, _)) => {
                        (DslType::Edge, subject_name(&fe.subject))
                    }
                    (IterKind::Nbrs | IterKind::InNbrs | IterKind::OutNbrs, Ty::Val(DslType::Point, g)) => {
                        (DslType::Point, g.clone())
                    }
                    (IterKind::Items, Ty::Val(DslType::Set, g)) => (DslType::Point, g.clone()),
                    (IterKind::Items, Ty::Val(DslType::Collection, _)) => (DslType::Point, None),
                    _ => {
                        self.err(
                            fe.subject.pos,
                            format!(
                                "cannot iterate {} with {}",
                                subj.describe(),
                                fe.iter.keyword().unwrap_or("items")
                            ),
                        );
                        (DslType::Point, None)
                    }
                };
                self.push_scope();
                self.declare(s.pos, &fe.var, VarInfo { ty: var_ty, graph: var_graph });
                if let Some(filter) = &fe.filter {
                    self.require_condition(filter);
                }
                self.check_block(&fe.body, f);
                self.pop_scope();
            }
            StmtKind::Single { targets, then_blk, else_blk } => {
                for t in targets {
                    let ty = self.check_expr(t);
                    let lockable = matches!(
                        ty,
                        Ty::Val(DslType::Point, _) | Ty::Val(DslType::Collection, _)
                    );
                    if !lockable {
                        self.err(
                            t.pos,
                            format!(
                                "single locks points or point collections, found {}",
                                ty.describe()
                            ),
                        );
                    }
                }
                self.check_block(then_blk, f);
                if let Some(e) = else_blk {
                    self.check_block(e, f);
                }
            }
            StmtKind::ParallelSections { sections } => {
                if !self.in_main {
                    self.err(s.pos, "parallel sections are only allowed in main");
                }
                for sec in sections {
                    self.check_block(sec, f);
                }
            }
        }
    }

    /// Statement-position expressions: calls, methods, property
    /// declarations. Anything value-producing without effect is refused.
    fn check_expr_stmt(&mut self, e: &Expr) {
        match &e.kind {
            ExprKind::Call { .. } | ExprKind::Method { .. } | ExprKind::AddProperty { .. } => {
                self.check_expr(e);
            }
            _ => self.err(e.pos, "expression statement has no effect"),
        }
    }

    fn require_condition(&mut self, e: &Expr) {
        let ty = self.check_expr(e);
        if !ty.is_scalar() && !matches!(ty, Ty::Val(DslType::Point, _)) {
            self.err(e.pos, format!("condition must be scalar, found {}", ty.describe()));
        }
    }

    fn require_assignable(&mut self, pos: Pos, target: DslType, value: &Ty) {
        let ok = match target {
            DslType::Int | DslType::Bool => value.int_like(),
            DslType::Float => value.numeric_like(),
            DslType::Point => matches!(value, Ty::Val(DslType::Point, _)),
            DslType::Edge => matches!(value, Ty::Val(DslType::Edge, _)),
            _ => false,
        };
        if !ok {
            self.err(
                pos,
                format!("cannot assign {} to {}", value.describe(), target.keyword()),
            );
        }
    }

    fn check_lvalue(&mut self, e: &Expr) -> Option<Ty> {
        match &e.kind {
            ExprKind::Var(name) => match self.lookup(name) {
                Some(v) => Some(Ty::Val(v.ty, v.graph)),
                None => {
                    if let Some(g) = self.program.globals.iter().find(|g| g.name == *name) {
                        Some(Ty::Val(g.ty, None))
                    } else {
                        self.err(e.pos, format!("unknown variable {name}"));
                        None
                    }
                }
            },
            ExprKind::Field { .. } => {
                let ty = self.check_expr(e);
                match ty {
                    Ty::Val(DslType::Int | DslType::Float | DslType::Bool, _) => Some(ty),
                    _ => {
                        self.err(e.pos, "assignment target is not a property or scalar");
                        None
                    }
                }
            }
            _ => {
                self.err(e.pos, "invalid assignment target");
                None
            }
        }
    }

    fn check_expr(&mut self, e: &Expr) -> Ty {
        match &e.kind {
            ExprKind::Int(_) => Ty::int(),
            ExprKind::MaxInt => Ty::int(),
            ExprKind::Float(_) => Ty::Val(DslType::Float, None),
            ExprKind::Bool(_) => Ty::Val(DslType::Bool, None),
            ExprKind::Var(name) => {
                if name == "argv" {
                    return Ty::Argv;
                }
                if let Some(v) = self.lookup(name) {
                    return Ty::Val(v.ty, v.graph);
                }
                if let Some(g) = self.program.globals.iter().find(|g| g.name == *name) {
                    return Ty::Val(g.ty, None);
                }
                self.err(e.pos, format!("unknown variable {name}"));
                Ty::int()
            }
            ExprKind::Field { base, name } => self.check_field(e.pos, base, name),
            ExprKind::Index { base, idx } => {
                let bty = self.check_expr(base);
                match bty {
                    Ty::PointsArray(g) => {
                        let ity = self.check_expr(idx);
                        if !ity.int_like() {
                            self.err(idx.pos, "point index must be an int");
                        }
                        Ty::Val(DslType::Point, Some(g))
                    }
                    Ty::Argv => {
                        if !matches!(idx.kind, ExprKind::Int(_)) {
                            self.err(idx.pos, "argv index must be an integer literal");
                        }
                        Ty::ArgvRef
                    }
                    other => {
                        self.err(e.pos, format!("cannot index {}", other.describe()));
                        Ty::int()
                    }
                }
            }
            ExprKind::Call { name, args } => self.check_call(e.pos, name, args),
            ExprKind::Method { base, name, args } => self.check_method(e.pos, base, name, args),
            ExprKind::AddProperty { graph, .. } => {
                if !self.in_main {
                    self.err(e.pos, "properties may only be declared in main");
                }
                let g = self.check_expr(graph);
                if !matches!(g, Ty::Val(DslType::Graph, _)) {
                    self.err(e.pos, "properties are declared on a graph");
                }
                Ty::Val(DslType::Void, None)
            }
            ExprKind::Unary { op, expr } => {
                let ty = self.check_expr(expr);
                match op {
                    UnOp::Neg => {
                        if !ty.numeric_like() {
                            self.err(expr.pos, format!("cannot negate {}", ty.describe()));
                        }
                        ty
                    }
                    UnOp::Not => {
                        if !ty.is_scalar() {
                            self.err(expr.pos, format!("cannot apply ! to {}", ty.describe()));
                        }
                        Ty::Val(DslType::Bool, None)
                    }
                }
            }
            ExprKind::Binary { op, lhs, rhs } => {
                let lt = self.check_expr(lhs);
                let rt = self.check_expr(rhs);
                use BinOp::*;
                match op {
                    Add | Sub | Mul | Div | Rem => {
                        if !lt.numeric_like() || !rt.numeric_like() {
                            self.err(
                                e.pos,
                                format!(
                                    "arithmetic needs numbers, found {} and {}",
                                    lt.describe(),
                                    rt.describe()
                                ),
                            );
                        }
                        if matches!(lt, Ty::Val(DslType::Float, _))
                            || matches!(rt, Ty::Val(DslType::Float, _))
                        {
                            Ty::Val(DslType::Float, None)
                        } else {
                            Ty::int()
                        }
                    }
                    Eq | Ne | Lt | Le | Gt | Ge => {
                        let comparable = (lt.numeric_like() && rt.numeric_like())
                            || matches!(
                                (&lt, &rt),
                                (Ty::Val(DslType::Point, _), Ty::Val(DslType::Point, _))
                            );
                        if !comparable {
                            self.err(
                                e.pos,
                                format!(
                                    "cannot compare {} with {}",
                                    lt.describe(),
                                    rt.describe()
                                ),
                            );
                        }
                        Ty::Val(DslType::Bool, None)
                    }
                    And | Or => {
                        if !lt.is_scalar() || !rt.is_scalar() {
                            self.err(e.pos, "logical operators need scalar operands");
                        }
                        Ty::Val(DslType::Bool, None)
                    }
                }
            }
        }
    }

    fn check_field(&mut self, pos: Pos, base: &Expr, name: &str) -> Ty {
        let bty = self.check_expr(base);
        match &bty {
            Ty::Val(DslType::Graph, _) => match name {
                "points" => {
                    let g = subject_name(base).unwrap_or_default();
                    Ty::PointsArray(g)
                }
                other => {
                    self.err(pos, format!("graphs have no field {other}"));
                    Ty::int()
                }
            },
            Ty::Val(DslType::Edge, g) => match name {
                "src" | "dst" => Ty::Val(DslType::Point, g.clone()),
                "weight" => Ty::int(),
                prop => self.prop_type(pos, g, prop, ElemKind::Edge),
            },
            Ty::Val(DslType::Point, g) => self.prop_type(pos, &g.clone(), name, ElemKind::Point),
            other => {
                self.err(pos, format!("{} has no fields", other.describe()));
                Ty::int()
            }
        }
    }

    fn prop_type(&mut self, pos: Pos, graph: &Option<String>, prop: &str, elem: ElemKind) -> Ty {
        let Some(g) = graph else {
            self.err(pos, format!("cannot resolve the graph of property {prop}"));
            return Ty::int();
        };
        // Bindings inside functions use parameter names; property tables
        // use main's names. Parameter-bound lookups accept any graph that
        // declares the property, which is checked exactly at call sites
        // through argument substitution during access-set computation.
        let decl = self
            .props
            .get(g)
            .and_then(|v| v.iter().find(|p| p.name == prop))
            .cloned()
            .or_else(|| {
                self.props
                    .values()
                    .flat_map(|v| v.iter())
                    .find(|p| p.name == prop)
                    .cloned()
            });
        match decl {
            Some(p) if p.elem == elem => Ty::Val(p.ty, None),
            Some(p) => {
                let kind = match p.elem {
                    ElemKind::Point => "a point",
                    ElemKind::Edge => "an edge",
                };
                self.err(pos, format!("{prop} is {kind} property"));
                Ty::int()
            }
            None => {
                self.err(pos, format!("property {prop} is not declared"));
                Ty::int()
            }
        }
    }

    fn check_call(&mut self, pos: Pos, name: &str, args: &[Expr]) -> Ty {
        match name {
            "MIN" | "MAX" => {
                if args.len() != 3 {
                    self.err(pos, format!("{name} takes (target, value, changed-flag)"));
                    return Ty::Val(DslType::Void, None);
                }
                self.require_reduction_target(&args[0]);
                let v = self.check_expr(&args[1]);
                if !v.numeric_like() {
                    self.err(args[1].pos, format!("{name} value must be numeric"));
                }
                self.require_reduction_target(&args[2]);
                Ty::Val(DslType::Void, None)
            }
            "RADD" | "RMUL" => {
                if args.len() != 2 {
                    self.err(pos, format!("{name} takes (target, value)"));
                    return Ty::Val(DslType::Void, None);
                }
                self.require_reduction_target(&args[0]);
                let v = self.check_expr(&args[1]);
                if !v.numeric_like() {
                    self.err(args[1].pos, format!("{name} value must be numeric"));
                }
                Ty::Val(DslType::Void, None)
            }
            _ => {
                let Some((ret, params)) = self.fns.get(name).cloned() else {
                    self.err(pos, format!("unknown function {name}"));
                    return Ty::int();
                };
                if name == "main" {
                    self.err(pos, "main cannot be called");
                }
                if args.len() != params.len() {
                    self.err(
                        pos,
                        format!("{name} takes {} arguments, got {}", params.len(), args.len()),
                    );
                }
                for (a, p) in args.iter().zip(&params) {
                    let ty = self.check_expr(a);
                    let ok = match p.ty {
                        DslType::Int | DslType::Bool => ty.int_like(),
                        DslType::Float => ty.numeric_like(),
                        DslType::Point => matches!(ty, Ty::Val(DslType::Point, _)),
                        DslType::Edge => matches!(ty, Ty::Val(DslType::Edge, _)),
                        DslType::Graph => matches!(ty, Ty::Val(DslType::Graph, _)),
                        DslType::Set => matches!(ty, Ty::Val(DslType::Set, _)),
                        DslType::Collection => matches!(ty, Ty::Val(DslType::Collection, _)),
                        _ => false,
                    };
                    if !ok {
                        self.err(
                            a.pos,
                            format!(
                                "argument {} of {name}: expected {}, found {}",
                                p.name,
                                p.ty.keyword(),
                                ty.describe()
                            ),
                        );
                    }
                    // Handle arguments must be plain variables so that
                    // access sets can be substituted exactly.
                    if matches!(p.ty, DslType::Graph | DslType::Set | DslType::Collection)
                        && !matches!(a.kind, ExprKind::Var(_))
                    {
                        self.err(a.pos, format!("argument {} must be a variable", p.name));
                    }
                }
                Ty::Val(ret, None)
            }
        }
    }

    /// MIN/MAX/RADD targets and changed-flags: an int property access or
    /// an int variable.
    fn require_reduction_target(&mut self, e: &Expr) {
        match &e.kind {
            ExprKind::Field { .. } => {
                let ty = self.check_expr(e);
                if !matches!(ty, Ty::Val(DslType::Int, _)) {
                    self.err(e.pos, "reduction target must be an int property");
                }
            }
            ExprKind::Var(_) => {
                let ty = self.check_expr(e);
                if !matches!(ty, Ty::Val(DslType::Int, _)) {
                    self.err(e.pos, "reduction target must be an int variable");
                }
            }
            _ => self.err(e.pos, "reduction target must be a property or variable"),
        }
    }

    fn check_method(&mut self, pos: Pos, base: &Expr, name: &str, args: &[Expr]) -> Ty {
        let bty = self.check_expr(base);
        match (&bty, name) {
            (Ty::Val(DslType::Graph, _), "read") => {
                if !self.in_main {
                    self.err(pos, "graphs are read in main");
                }
                let ok = args.len() == 1 && {
                    let t = self.check_expr(&args[0]);
                    matches!(t, Ty::ArgvRef)
                };
                if !ok {
                    self.err(pos, "read takes one argv[k] argument");
                }
                Ty::Val(DslType::Void, None)
            }
            (Ty::Val(DslType::Graph, _), "getweight") => {
                if args.len() != 2 {
                    self.err(pos, "getweight takes two points");
                } else {
                    for a in args {
                        let t = self.check_expr(a);
                        if !matches!(t, Ty::Val(DslType::Point, _)) {
                            self.err(a.pos, "getweight arguments are points");
                        }
                    }
                }
                Ty::int()
            }
            (Ty::Val(DslType::Set, g), "find") => {
                if args.len() != 1 {
                    self.err(pos, "find takes one point");
                } else {
                    let t = self.check_expr(&args[0]);
                    if !matches!(t, Ty::Val(DslType::Point, _)) {
                        self.err(args[0].pos, "find takes a point");
                    }
                }
                Ty::Val(DslType::Point, g.clone())
            }
            (Ty::Val(DslType::Set, _), "union") => {
                if args.len() != 2 {
                    self.err(pos, "union takes two points");
                } else {
                    for a in args {
                        let t = self.check_expr(a);
                        if !matches!(t, Ty::Val(DslType::Point, _)) {
                            self.err(a.pos, "union arguments are points");
                        }
                    }
                }
                // Returns 1 when two components were merged.
                Ty::int()
            }
            (Ty::Val(DslType::Collection, _), "add") => {
                if args.len() != 1 {
                    self.err(pos, "add takes one point");
                } else {
                    let t = self.check_expr(&args[0]);
                    if !matches!(t, Ty::Val(DslType::Point, _)) {
                        self.err(args[0].pos, "collections hold points");
                    }
                }
                Ty::Val(DslType::Void, None)
            }
            (Ty::Val(DslType::Collection, _), "size") => {
                if !args.is_empty() {
                    self.err(pos, "size takes no arguments");
                }
                Ty::int()
            }
            (other, m) => {
                self.err(pos, format!("{} has no method {m}", other.describe()));
                Ty::int()
            }
        }
    }
}

fn subject_name(e: &Expr) -> Option<String> {
    match &e.kind {
        ExprKind::Var(n) => Some(n.clone()),
        _ => None,
    }
}

fn collect_calls_stmt(s: &Stmt, out: &mut Vec<String>) {
    let mut on_expr = |e: &Expr| collect_calls_expr(e, out);
    match &s.kind {
        StmtKind::VarDecl { decls } => {
            for d in decls {
                if let Some(i) = &d.init {
                    on_expr(i);
                }
            }
        }
        StmtKind::Assign { target, value } => {
            on_expr(target);
            on_expr(value);
        }
        StmtKind::If { cond, .. } => on_expr(cond),
        StmtKind::While { cond, .. } => on_expr(cond),
        StmtKind::Expr { expr } => on_expr(expr),
        StmtKind::Foreach(fe) => {
            on_expr(&fe.subject);
            if let Some(f) = &fe.filter {
                on_expr(f);
            }
        }
        StmtKind::Single { targets, .. } => {
            for t in targets {
                on_expr(t);
            }
        }
        _ => {}
    }
}

fn collect_calls_expr(e: &Expr, out: &mut Vec<String>) {
    match &e.kind {
        ExprKind::Call { name, args } => {
            if !matches!(name.as_str(), "MIN" | "MAX" | "RADD" | "RMUL") {
                out.push(name.clone());
            }
            for a in args {
                collect_calls_expr(a, out);
            }
        }
        ExprKind::Method { base, args, .. } => {
            collect_calls_expr(base, out);
            for a in args {
                collect_calls_expr(a, out);
            }
        }
        ExprKind::Field { base, .. } => collect_calls_expr(base, out),
        ExprKind::Index { base, idx } => {
            collect_calls_expr(base, out);
            collect_calls_expr(idx, out);
        }
        ExprKind::Unary { expr, .. } => collect_calls_expr(expr, out),
        ExprKind::Binary { lhs, rhs, .. } => {
            collect_calls_expr(lhs, out);
            collect_calls_expr(rhs, out);
        }
        ExprKind::AddProperty { graph, .. } => collect_calls_expr(graph, out),
        _ => {}
    }
}

// ---------------------------------------------------------------------------
// Access sets
// ---------------------------------------------------------------------------

/// Graph bindings for point/edge/set variables during a read/write walk.
/// Scalars and unknown names resolve to locals (excluded from the sets)
/// unless they are globals.
struct BindScopes {
    scopes: Vec<HashMap<String, BindInfo>>,
    /// Graph parameter of the enclosing function, the default binding
    /// for Point/Edge declarations without an explicit one.
    implicit_graph: Option<String>,
}

#[derive(Clone)]
enum BindInfo {
    /// A local scalar/point/edge; `graph` names the graph variable it is
    /// bound to, in the current function's vocabulary.
    Local { ty: DslType, graph: Option<String> },
}

impl BindScopes {
    fn new() -> Self {
        BindScopes { scopes: vec![HashMap::new()], implicit_graph: None }
    }

    fn push(&mut self) {
        self.scopes.push(HashMap::new());
    }

    fn pop(&mut self) {
        self.scopes.pop();
    }

    fn bind(&mut self, name: &str, ty: DslType, graph: Option<String>) {
        self.scopes
            .last_mut()
            .unwrap()
            .insert(name.to_string(), BindInfo::Local { ty, graph });
    }

    fn get(&self, name: &str) -> Option<&BindInfo> {
        self.scopes.iter().rev().find_map(|s| s.get(name))
    }

    fn graph_of(&self, name: &str) -> Option<String> {
        match self.get(name) {
            Some(BindInfo::Local { ty: DslType::Graph, .. }) => Some(name.to_string()),
            Some(BindInfo::Local { graph, .. }) => graph.clone(),
            None => None,
        }
    }
}

struct RwComputer<'a> {
    program: &'a Program,
    table: &'a SymbolTable,
    cache: HashMap<String, AccessSet>,
    stack: Vec<String>,
}

impl<'a> RwComputer<'a> {
    fn function_access(&mut self, name: &str) -> Result<AccessSet, SemanticError> {
        if let Some(a) = self.cache.get(name) {
            return Ok(a.clone());
        }
        let f = self.program.function(name).expect("function exists");
        if self.stack.contains(&name.to_string()) {
            return Err(SemanticError {
                pos: f.pos,
                message: format!("recursion involving {name}"),
            });
        }
        self.stack.push(name.to_string());
        let mut scopes = BindScopes::new();
        bind_function_scope(&mut scopes, f);
        let mut acc = AccessSet::default();
        let mut err = None;
        self.block_access(&f.body, &mut scopes, &mut acc, &mut err);
        self.stack.pop();
        if let Some(e) = err {
            return Err(e);
        }
        self.cache.insert(name.to_string(), acc.clone());
        Ok(acc)
    }

    fn block_access(
        &mut self,
        b: &Block,
        scopes: &mut BindScopes,
        acc: &mut AccessSet,
        err: &mut Option<SemanticError>,
    ) {
        scopes.push();
        for s in &b.stmts {
            self.stmt_access_inner(s, scopes, acc, err, false);
        }
        scopes.pop();
    }

    /// Access set of one statement. `launch_aware` distinguishes the
    /// treatment of a foreach whose body is a single user-function call:
    /// the callee's sets are substituted into the caller's names either
    /// way, so the flag only matters for who owns filter reads (they are
    /// always charged here, at the statement).
    fn stmt_access_inner(
        &mut self,
        s: &Stmt,
        scopes: &mut BindScopes,
        acc: &mut AccessSet,
        err: &mut Option<SemanticError>,
        _launch_aware: bool,
    ) {
        match &s.kind {
            StmtKind::VarDecl { decls } => {
                for d in decls {
                    if let Some(i) = &d.init {
                        self.expr_access(i, scopes, acc, false, err);
                    }
                    let graph = d.graph.clone().or_else(|| {
                        if matches!(d.ty, DslType::Point | DslType::Edge) {
                            scopes.implicit_graph.clone()
                        } else {
                            None
                        }
                    });
                    scopes.bind(&d.name, d.ty, graph);
                    if d.ty == DslType::Set {
                        // Creating the union-find structure writes it.
                        acc.writes.sets.insert(d.name.clone());
                    }
                }
            }
            StmtKind::Assign { target, value } => {
                self.expr_access(target, scopes, acc, true, err);
                self.expr_access(value, scopes, acc, false, err);
            }
            StmtKind::If { cond, then_blk, else_blk } => {
                self.expr_access(cond, scopes, acc, false, err);
                self.block_access(then_blk, scopes, acc, err);
                if let Some(e) = else_blk {
                    self.block_access(e, scopes, acc, err);
                }
            }
            StmtKind::While { cond, body } => {
                self.expr_access(cond, scopes, acc, false, err);
                self.block_access(body, scopes, acc, err);
            }
            StmtKind::Break => {}
            StmtKind::Return { value } => {
                if let Some(v) = value {
                    self.expr_access(v, scopes, acc, false, err);
                }
            }
            StmtKind::Expr { expr } => self.expr_access(expr, scopes, acc, false, err),
            StmtKind::Foreach(fe) => {
                let subj_graph = match &fe.subject.kind {
                    ExprKind::Var(n) => scopes.graph_of(n),
                    _ => None,
                };
                if let ExprKind::Var(n) = &fe.subject.kind {
                    match scopes.get(n) {
                        Some(BindInfo::Local { ty: DslType::Collection, .. }) => {
                            // Draining reads and consumes the collection.
                            acc.reads.colls.insert(n.clone());
                            acc.writes.colls.insert(n.clone());
                        }
                        Some(BindInfo::Local { ty: DslType::Set, .. }) => {
                            acc.reads.sets.insert(n.clone());
                        }
                        _ => {}
                    }
                }
                scopes.push();
                scopes.bind(&fe.var, iter_var_type(fe.iter), subj_graph);
                if let Some(f) = &fe.filter {
                    self.expr_access(f, scopes, acc, false, err);
                }
                self.block_access(&fe.body, scopes, acc, err);
                scopes.pop();
            }
            StmtKind::Single { targets, then_blk, else_blk } => {
                for t in targets {
                    self.expr_access(t, scopes, acc, false, err);
                }
                self.block_access(then_blk, scopes, acc, err);
                if let Some(e) = else_blk {
                    self.block_access(e, scopes, acc, err);
                }
            }
            StmtKind::ParallelSections { sections } => {
                for sec in sections {
                    self.block_access(sec, scopes, acc, err);
                }
            }
        }
    }

    fn expr_access(
        &mut self,
        e: &Expr,
        scopes: &mut BindScopes,
        acc: &mut AccessSet,
        is_write: bool,
        err: &mut Option<SemanticError>,
    ) {
        match &e.kind {
            ExprKind::Int(_) | ExprKind::Float(_) | ExprKind::Bool(_) | ExprKind::MaxInt => {}
            ExprKind::Var(name) => {
                if name == "argv" || scopes.get(name).is_some() {
                    return; // locals and argv never appear in access sets
                }
                if self.table.global_id(name).is_some() {
                    if is_write {
                        acc.writes.globals.insert(name.clone());
                    } else {
                        acc.reads.globals.insert(name.clone());
                    }
                }
            }
            ExprKind::Field { base, name } => {
                // Edge topology fields are immutable and untracked except
                // for the builtin weight, which shows up as a read.
                let base_graph = self.graph_of_expr(base, scopes);
                match name.as_str() {
                    "src" | "dst" | "points" => {
                        self.expr_access(base, scopes, acc, false, err);
                    }
                    "weight" if self.is_edge_expr(base, scopes) => {
                        self.expr_access(base, scopes, acc, false, err);
                        if let Some(g) = base_graph {
                            acc.reads.props.insert((g, "weight".to_string()));
                        }
                    }
                    prop => {
                        self.expr_access(base, scopes, acc, false, err);
                        let g = base_graph.unwrap_or_else(|| "?".to_string());
                        if is_write {
                            acc.writes.props.insert((g, prop.to_string()));
                        } else {
                            acc.reads.props.insert((g, prop.to_string()));
                        }
                    }
                }
            }
            ExprKind::Index { base, idx } => {
                self.expr_access(base, scopes, acc, false, err);
                self.expr_access(idx, scopes, acc, false, err);
            }
            ExprKind::Call { name, args } => match name.as_str() {
                "MIN" | "MAX" => {
                    // The target is read and written; the flag is written.
                    self.expr_access(&args[0], scopes, acc, false, err);
                    self.expr_access(&args[0], scopes, acc, true, err);
                    self.expr_access(&args[1], scopes, acc, false, err);
                    self.expr_access(&args[2], scopes, acc, true, err);
                }
                "RADD" | "RMUL" => {
                    self.expr_access(&args[0], scopes, acc, false, err);
                    self.expr_access(&args[0], scopes, acc, true, err);
                    self.expr_access(&args[1], scopes, acc, false, err);
                }
                _ => {
                    for a in args {
                        self.expr_access(a, scopes, acc, false, err);
                    }
                    if self.program.function(name).is_some() {
                        match self.function_access(name) {
                            Ok(callee) => {
                                let map = self.formal_actual_map(name, args, scopes);
                                acc.union_with(&callee.substitute(&map));
                            }
                            Err(e) => {
                                if err.is_none() {
                                    *err = Some(e);
                                }
                            }
                        }
                    }
                }
            },
            ExprKind::Method { base, name, args } => {
                for a in args {
                    self.expr_access(a, scopes, acc, false, err);
                }
                if let ExprKind::Var(b) = &base.kind {
                    match scopes.get(b).map(|i| match i {
                        BindInfo::Local { ty, .. } => *ty,
                    }) {
                        Some(DslType::Set) => match name.as_str() {
                            "find" => {
                                acc.reads.sets.insert(b.clone());
                            }
                            "union" => {
                                acc.reads.sets.insert(b.clone());
                                acc.writes.sets.insert(b.clone());
                            }
                            _ => {}
                        },
                        Some(DslType::Collection) => match name.as_str() {
                            "add" => {
                                acc.writes.colls.insert(b.clone());
                            }
                            "size" => {
                                acc.reads.colls.insert(b.clone());
                            }
                            _ => {}
                        },
                        Some(DslType::Graph) => match name.as_str() {
                            "getweight" => {
                                acc.reads.props.insert((b.clone(), "weight".to_string()));
                            }
                            "read" => {
                                acc.writes.props.insert((b.clone(), "weight".to_string()));
                            }
                            _ => {}
                        },
                        _ => {}
                    }
                }
            }
            ExprKind::AddProperty { graph, prop, .. } => {
                if let ExprKind::Var(g) = &graph.kind {
                    acc.writes.props.insert((g.clone(), prop.clone()));
                }
            }
            ExprKind::Unary { expr, .. } => self.expr_access(expr, scopes, acc, false, err),
            ExprKind::Binary { lhs, rhs, .. } => {
                self.expr_access(lhs, scopes, acc, false, err);
                self.expr_access(rhs, scopes, acc, false, err);
            }
        }
    }

    /// Map a callee's handle parameters (Graph/Set/Collection and the
    /// graph bindings of Point/Edge) to the actual argument names.
    fn formal_actual_map(
        &self,
        callee: &str,
        args: &[Expr],
        scopes: &mut BindScopes,
    ) -> HashMap<String, String> {
        let mut map = HashMap::new();
        if let Some(f) = self.program.function(callee) {
            for (p, a) in f.params.iter().zip(args) {
                if matches!(p.ty, DslType::Graph | DslType::Set | DslType::Collection) {
                    if let ExprKind::Var(actual) = &a.kind {
                        let resolved = match p.ty {
                            DslType::Graph => scopes.graph_of(actual).unwrap_or(actual.clone()),
                            _ => actual.clone(),
                        };
                        map.insert(p.name.clone(), resolved);
                    }
                }
            }
        }
        map
    }

    fn graph_of_expr(&self, e: &Expr, scopes: &mut BindScopes) -> Option<String> {
        match &e.kind {
            ExprKind::Var(n) => scopes.graph_of(n),
            ExprKind::Field { base, name } if name == "src" || name == "dst" => {
                self.graph_of_expr(base, scopes)
            }
            ExprKind::Index { base, .. } => match &base.kind {
                ExprKind::Field { base: g, name } if name == "points" => {
                    self.graph_of_expr(g, scopes)
                }
                _ => None,
            },
            ExprKind::Method { base, name, .. } if name == "find" => {
                // find(p) returns a point of the set's graph.
                match &base.kind {
                    ExprKind::Var(s) => scopes.graph_of(s),
                    _ => None,
                }
            }
            _ => None,
        }
    }

    fn is_edge_expr(&self, e: &Expr, scopes: &mut BindScopes) -> bool {
        match &e.kind {
            ExprKind::Var(n) => {
                matches!(scopes.get(n), Some(BindInfo::Local { ty: DslType::Edge, .. }))
            }
            _ => false,
        }
    }
}

fn iter_var_type(iter: IterKind) -> DslType {
    match iter {
        IterKind::Edges => DslType::Edge,
        _ => DslType::Point,
    }
}

// ---------------------------------------------------------------------------
// Statement-level sets and target functions
// ---------------------------------------------------------------------------

/// Access set of a single statement in a given function, with loop
/// variables bound. Used per CFG node; for a launch this includes the
/// callee (substituted), the filter and the arguments.
pub fn compute_stmt_rw_sets(
    program: &Program,
    table: &SymbolTable,
    func: &FunctionDecl,
    stmt: &Stmt,
) -> AccessSet {
    let mut rw =
        RwComputer { program, table, cache: HashMap::new(), stack: Vec::new() };
    let mut scopes = BindScopes::new();
    bind_function_scope(&mut scopes, func);
    // Rebuild lexical context: walk to the statement, binding every
    // declaration and loop variable in scope at its position.
    bind_context(&func.body, stmt.sid, &mut scopes);
    let mut acc = AccessSet::default();
    let mut err = None;
    rw.stmt_access_inner(stmt, &mut scopes, &mut acc, &mut err, true);
    acc
}

/// Access set of only the condition of a branch or loop statement.
/// Their bodies become separate CFG nodes, so the header contributes
/// just the reads needed to evaluate the condition.
pub fn compute_cond_rw_sets(
    program: &Program,
    table: &SymbolTable,
    func: &FunctionDecl,
    stmt: &Stmt,
) -> AccessSet {
    let cond = match &stmt.kind {
        StmtKind::If { cond, .. } | StmtKind::While { cond, .. } => cond,
        _ => return AccessSet::default(),
    };
    let mut rw = RwComputer { program, table, cache: HashMap::new(), stack: Vec::new() };
    let mut scopes = BindScopes::new();
    bind_function_scope(&mut scopes, func);
    bind_context(&func.body, stmt.sid, &mut scopes);
    let mut acc = AccessSet::default();
    let mut err = None;
    rw.expr_access(cond, &mut scopes, &mut acc, false, &mut err);
    acc
}

fn bind_function_scope(scopes: &mut BindScopes, f: &FunctionDecl) {
    let mut gs = f.params.iter().filter(|p| p.ty == DslType::Graph);
    let graph_param = gs.next().map(|p| p.name.clone());
    let graph_param = if gs.next().is_some() { None } else { graph_param };
    scopes.implicit_graph = graph_param.clone();
    for p in &f.params {
        let graph = match p.ty {
            DslType::Point | DslType::Edge | DslType::Set => graph_param.clone(),
            _ => None,
        };
        scopes.bind(&p.name, p.ty, graph);
    }
}

/// Bind every declaration that dominates the statement `sid` in `block`.
/// Returns true when the statement was found in this subtree.
fn bind_context(block: &Block, sid: StmtId, scopes: &mut BindScopes) -> bool {
    for s in &block.stmts {
        if s.sid == sid {
            return true;
        }
        match &s.kind {
            StmtKind::VarDecl { decls } => {
                for d in decls {
                    scopes.bind(&d.name, d.ty, d.graph.clone());
                }
            }
            StmtKind::If { then_blk, else_blk, .. } => {
                if bind_context(then_blk, sid, scopes) {
                    return true;
                }
                if let Some(e) = else_blk {
                    if bind_context(e, sid, scopes) {
                        return true;
                    }
                }
            }
            StmtKind::While { body, .. } => {
                if bind_context(body, sid, scopes) {
                    return true;
                }
            }
            StmtKind::Foreach(fe) => {
                let subj_graph = match &fe.subject.kind {
                    ExprKind::Var(n) => scopes.graph_of(n),
                    _ => None,
                };
                scopes.push();
                scopes.bind(&fe.var, iter_var_type(fe.iter), subj_graph);
                if bind_context(&fe.body, sid, scopes) {
                    return true;
                }
                scopes.pop();
            }
            StmtKind::Single { then_blk, else_blk, .. } => {
                if bind_context(then_blk, sid, scopes) {
                    return true;
                }
                if let Some(e) = else_blk {
                    if bind_context(e, sid, scopes) {
                        return true;
                    }
                }
            }
            StmtKind::ParallelSections { sections } => {
                for sec in sections {
                    if bind_context(sec, sid, scopes) {
                        return true;
                    }
                }
            }
            _ => {}
        }
    }
    false
}

/// When a foreach body is exactly one call to a user function, return
/// the callee name and arguments.
pub fn launch_call(fe: &ForeachStmt) -> Option<(&str, &[Expr])> {
    if fe.body.stmts.len() != 1 {
        return None;
    }
    match &fe.body.stmts[0].kind {
        StmtKind::Expr { expr } => match &expr.kind {
            ExprKind::Call { name, args }
                if !matches!(name.as_str(), "MIN" | "MAX" | "RADD" | "RMUL") =>
            {
                Some((name, args))
            }
            _ => None,
        },
        _ => None,
    }
}

pub fn find_target_functions(program: &Program, table: &SymbolTable) -> Vec<TargetFunctionInfo> {
    let Some(main) = program.main() else { return Vec::new() };
    let mut out = Vec::new();
    visit_stmts(&main.body, &mut |s| {
        let StmtKind::Foreach(fe) = &s.kind else { return };
        if !matches!(fe.iter, IterKind::Points | IterKind::Edges | IterKind::Items) {
            return;
        }
        let Some((callee, _)) = launch_call(fe) else { return };
        if program.function(callee).is_none() {
            return;
        }
        if fe.iter == IterKind::Items {
            // Only worklist collections are drained as launches.
            match subject_name(&fe.subject) {
                Some(n) if table.coll_vars.contains(&n) => {}
                _ => return,
            }
        }
        let access = compute_stmt_rw_sets(program, table, main, s);
        let subj = subject_name(&fe.subject);
        let (graph_var, coll_var) = match fe.iter {
            IterKind::Items => (None, subj),
            _ => (subj, None),
        };
        out.push(TargetFunctionInfo {
            name: callee.to_string(),
            launch_sid: s.sid,
            outer: fe.iter == IterKind::Points,
            iter: fe.iter,
            graph_var,
            coll_var,
            access,
        });
    });
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parser::parse;

    fn corpus(name: &str) -> Program {
        let src =
            std::fs::read_to_string(format!("{}/corpus/{}", env!("CARGO_MANIFEST_DIR"), name))
                .unwrap();
        parse(&src).unwrap()
    }

    fn props(set: &BTreeSet<(String, String)>) -> Vec<String> {
        set.iter().map(|(g, p)| format!("{g}.{p}")).collect()
    }

    #[test]
    fn corpus_programs_resolve() {
        for file in [
            "bfs.fal",
            "bfs_edge.fal",
            "sssp.fal",
            "sssp_edge.fal",
            "cc.fal",
            "cc_pull.fal",
            "mst.fal",
            "bfs_sssp.fal",
            "cc_two_graphs.fal",
        ] {
            let p = corpus(file);
            if let Err(errs) = resolve(&p) {
                panic!("{file}: {}", errs[0]);
            }
        }
    }

    #[test]
    fn relaxgraph_access_set() {
        let p = corpus("sssp.fal");
        let table = resolve(&p).unwrap();
        let acc = &table.fn_access["relaxgraph"];
        assert_eq!(props(&acc.reads.props), vec!["graph.dist", "graph.weight"]);
        assert_eq!(props(&acc.writes.props), vec!["graph.dist"]);
        assert_eq!(
            acc.writes.globals.iter().cloned().collect::<Vec<_>>(),
            vec!["changed".to_string()]
        );
        assert!(acc.reads.globals.is_empty());
    }

    #[test]
    fn bfs_kernel_access_set_excludes_filter() {
        let p = corpus("bfs.fal");
        let table = resolve(&p).unwrap();
        let acc = &table.fn_access["BFS"];
        // The filter (t.dist == lev) belongs to the launch site, not here;
        // lev arrives as a parameter so it is local to the kernel.
        assert_eq!(props(&acc.reads.props), vec!["graph.dist"]);
        assert!(acc.reads.globals.is_empty());
        assert_eq!(props(&acc.writes.props), vec!["graph.dist"]);
        assert!(acc.writes.globals.contains("changed"));
    }

    #[test]
    fn launch_site_includes_filter_and_arguments() {
        let p = corpus("bfs.fal");
        let table = resolve(&p).unwrap();
        let targets = find_target_functions(&p, &table);
        assert_eq!(targets.len(), 1);
        let t = &targets[0];
        assert_eq!(t.name, "BFS");
        assert!(t.outer);
        // Filter reads dist and lev; the lev argument is also a read.
        assert!(t.access.reads.props.contains(&("graph".into(), "dist".into())));
        assert!(t.access.reads.globals.contains("lev"));
        assert!(t.access.writes.globals.contains("changed"));
    }

    #[test]
    fn two_graph_launches_keep_graphs_apart() {
        let p = corpus("cc_two_graphs.fal");
        let table = resolve(&p).unwrap();
        let targets = find_target_functions(&p, &table);
        assert_eq!(targets.len(), 2);
        let a = &targets[0].access;
        let b = &targets[1].access;
        assert!(a.writes.props.contains(&("g1".into(), "comp".into())));
        assert!(b.writes.props.contains(&("g2".into(), "comp".into())));
        assert!(!a.writes.intersects(&b.writes));
        assert!(!a.reads.intersects(&b.writes));
        assert!(!a.writes.intersects(&b.reads));
    }

    #[test]
    fn mst_kernels_touch_the_set() {
        let p = corpus("mst.fal");
        let table = resolve(&p).unwrap();
        let fm = &table.fn_access["findmin"];
        assert!(fm.reads.sets.contains("s"));
        assert!(fm.reads.props.contains(&("graph".into(), "minpack".into())));
        assert!(fm.writes.props.contains(&("graph".into(), "minpack".into())));
        let mg = &table.fn_access["mergemin"];
        assert!(mg.writes.sets.contains("s"));
        assert!(mg.writes.globals.contains("mstwt"));
        assert!(mg.writes.globals.contains("changed"));
    }

    #[test]
    fn rejects_unknown_variable() {
        let p = parse("int main() { x = 1; }").unwrap();
        let errs = resolve(&p).unwrap_err();
        assert!(errs.iter().any(|e| e.message.contains("unknown variable x")), "{errs:?}");
    }

    #[test]
    fn rejects_undeclared_property() {
        let p = parse(
            "int main() { Graph g; g.read(argv[1]); foreach (t In g.points) t.dist = 0; }",
        )
        .unwrap();
        let errs = resolve(&p).unwrap_err();
        assert!(errs.iter().any(|e| e.message.contains("property dist")), "{errs:?}");
    }

    #[test]
    fn rejects_property_redeclaration() {
        let p = parse(
            "int main() { Graph g; g.addPointProperty(d, int); g.addPointProperty(d, int); }",
        )
        .unwrap();
        let errs = resolve(&p).unwrap_err();
        assert!(errs.iter().any(|e| e.message.contains("redeclared")), "{errs:?}");
    }

    #[test]
    fn rejects_min_arity() {
        let p = parse(
            "int c = 0;\nvoid k(Point p, Graph g) { MIN(p.d, 1); }\nint main() { Graph g; g.addPointProperty(d, int); }",
        )
        .unwrap();
        let errs = resolve(&p).unwrap_err();
        assert!(errs.iter().any(|e| e.message.contains("MIN takes")), "{errs:?}");
    }

    #[test]
    fn rejects_recursion() {
        let p = parse("void f(int x) { f(x); }\nint main() { }").unwrap();
        let errs = resolve(&p).unwrap_err();
        assert!(errs.iter().any(|e| e.message.contains("recursion")), "{errs:?}");
    }

    #[test]
    fn rejects_break_outside_loop() {
        let p = parse("int main() { break; }").unwrap();
        let errs = resolve(&p).unwrap_err();
        assert!(errs.iter().any(|e| e.message.contains("break")), "{errs:?}");
    }

    #[test]
    fn rejects_missing_main() {
        let p = parse("int x = 0;").unwrap();
        let errs = resolve(&p).unwrap_err();
        assert!(errs.iter().any(|e| e.message.contains("no main")), "{errs:?}");
    }

    #[test]
    fn rejects_float_property() {
        let p = parse("int main() { Graph g; g.addPointProperty(d, float); }").unwrap();
        let errs = resolve(&p).unwrap_err();
        assert!(errs.iter().any(|e| e.message.contains("only int properties")), "{errs:?}");
    }

    #[test]
    fn drain_loop_reads_and_writes_collection() {
        let src = "
void k(Point p, Graph g, Collection<Point> wl) { wl.add(p); }
int main() {
    Graph g;
    g.read(argv[1]);
    Collection<Point> wl;
    while (wl.size() != 0) {
        foreach (p In wl) k(p, g, wl);
    }
}";
        let p = parse(src).unwrap();
        let table = resolve(&p).unwrap();
        let targets = find_target_functions(&p, &table);
        assert_eq!(targets.len(), 1);
        assert_eq!(targets[0].iter, IterKind::Items);
        assert_eq!(targets[0].coll_var.as_deref(), Some("wl"));
        assert!(targets[0].access.reads.colls.contains("wl"));
        assert!(targets[0].access.writes.colls.contains("wl"));
    }
}
