//! Source-to-source rewrites between iteration styles.
//!
//! All three transforms rewrite a parallel launch in main together with
//! the kernel it calls:
//!
//! * [`vertex_to_edge`] turns a points loop whose kernel walks its
//!   neighbours into an edges loop; the kernel receives one edge and
//!   recovers both endpoints from it.
//! * [`edge_to_vertex`] is the inverse: it recognises the endpoint
//!   prologue and folds the kernel back into a neighbour loop.
//! * [`to_worklist`] replaces a convergence loop (run all points until a
//!   changed flag stays zero) with a collection of pending points that
//!   re-queues exactly the points whose property was updated.
//!
//! Each transform either applies to every launch it is responsible for
//! or fails with the collected reasons; partially converted programs
//! are never produced.

use crate::ast::*;
use crate::sema;
use std::collections::HashSet;
use thiserror::Error;

#[derive(Debug, Error)]
#[error("{transform}: {}", reasons.join("; "))]
pub struct TransformError {
    pub transform: &'static str,
    pub reasons: Vec<String>,
}

fn fail(transform: &'static str, reasons: Vec<String>) -> TransformError {
    TransformError { transform, reasons }
}

/// Direction of a neighbour loop relative to the edge that realises it:
/// for out-neighbours the loop point is the source, for in-neighbours
/// the destination.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Dir {
    Out,
    In,
}

// ---------------------------------------------------------------------------
// Shared helpers
// ---------------------------------------------------------------------------

fn fresh_name(taken: &HashSet<String>, base: &str) -> String {
    if !taken.contains(base) {
        return base.to_string();
    }
    for i in 2.. {
        let cand = format!("{base}{i}");
        if !taken.contains(&cand) {
            return cand;
        }
    }
    unreachable!()
}

/// Every identifier visible somewhere inside `f`: parameters, locals,
/// loop variables, plus globals and function names.
fn scope_names(p: &Program, f: &FunctionDecl) -> HashSet<String> {
    let mut names: HashSet<String> = p.globals.iter().map(|g| g.name.clone()).collect();
    names.extend(p.functions.iter().map(|f| f.name.clone()));
    names.extend(f.params.iter().map(|p| p.name.clone()));
    visit_stmts(&f.body, &mut |s| match &s.kind {
        StmtKind::VarDecl { decls } => names.extend(decls.iter().map(|d| d.name.clone())),
        StmtKind::Foreach(fe) => {
            names.insert(fe.var.clone());
        }
        _ => {}
    });
    names
}

fn var(pos: Pos, name: &str) -> Expr {
    Expr { pos, kind: ExprKind::Var(name.to_string()) }
}

fn field(pos: Pos, base: Expr, name: &str) -> Expr {
    Expr { pos, kind: ExprKind::Field { base: Box::new(base), name: name.to_string() } }
}

fn int(pos: Pos, v: i64) -> Expr {
    Expr { pos, kind: ExprKind::Int(v) }
}

fn assign_stmt(sid: StmtId, pos: Pos, target: Expr, value: Expr) -> Stmt {
    Stmt { sid, pos, kind: StmtKind::Assign { target, value } }
}

fn expr_stmt(sid: StmtId, pos: Pos, e: Expr) -> Stmt {
    Stmt { sid, pos, kind: StmtKind::Expr { expr: e } }
}

fn method(pos: Pos, base: Expr, name: &str, args: Vec<Expr>) -> Expr {
    Expr {
        pos,
        kind: ExprKind::Method { base: Box::new(base), name: name.to_string(), args },
    }
}

fn is_var(e: &Expr, name: &str) -> bool {
    matches!(&e.kind, ExprKind::Var(n) if n == name)
}

fn uses_var_expr(e: &Expr, name: &str) -> bool {
    let mut found = false;
    walk_expr(e, &mut |x| {
        if is_var(x, name) {
            found = true;
        }
    });
    found
}

fn uses_var_block(b: &Block, name: &str) -> bool {
    let mut found = false;
    visit_stmts(b, &mut |s| {
        for_each_expr(s, &mut |e| {
            if uses_var_expr(e, name) {
                found = true;
            }
        });
    });
    found
}

fn walk_expr(e: &Expr, f: &mut dyn FnMut(&Expr)) {
    f(e);
    match &e.kind {
        ExprKind::Field { base, .. } => walk_expr(base, f),
        ExprKind::Index { base, idx } => {
            walk_expr(base, f);
            walk_expr(idx, f);
        }
        ExprKind::Call { args, .. } => args.iter().for_each(|a| walk_expr(a, f)),
        ExprKind::Method { base, args, .. } => {
            walk_expr(base, f);
            args.iter().for_each(|a| walk_expr(a, f));
        }
        ExprKind::Unary { expr, .. } => walk_expr(expr, f),
        ExprKind::Binary { lhs, rhs, .. } => {
            walk_expr(lhs, f);
            walk_expr(rhs, f);
        }
        ExprKind::AddProperty { graph, .. } => walk_expr(graph, f),
        _ => {}
    }
}

/// Top-level expressions of one statement, not descending into nested
/// statements.
fn for_each_expr(s: &Stmt, f: &mut dyn FnMut(&Expr)) {
    match &s.kind {
        StmtKind::VarDecl { decls } => {
            for d in decls {
                if let Some(i) = &d.init {
                    f(i);
                }
            }
        }
        StmtKind::Assign { target, value } => {
            f(target);
            f(value);
        }
        StmtKind::If { cond, .. } | StmtKind::While { cond, .. } => f(cond),
        StmtKind::Return { value: Some(v) } => f(v),
        StmtKind::Expr { expr } => f(expr),
        StmtKind::Foreach(fe) => {
            f(&fe.subject);
            if let Some(flt) = &fe.filter {
                f(flt);
            }
        }
        StmtKind::Single { targets, .. } => targets.iter().for_each(&mut *f),
        _ => {}
    }
}

/// Replace every occurrence of variable `from` with `to` in an
/// expression tree.
fn subst_var(e: &mut Expr, from: &str, to: &Expr) {
    if is_var(e, from) {
        *e = Expr { pos: e.pos, kind: to.kind.clone() };
        return;
    }
    match &mut e.kind {
        ExprKind::Field { base, .. } => subst_var(base, from, to),
        ExprKind::Index { base, idx } => {
            subst_var(base, from, to);
            subst_var(idx, from, to);
        }
        ExprKind::Call { args, .. } => args.iter_mut().for_each(|a| subst_var(a, from, to)),
        ExprKind::Method { base, args, .. } => {
            subst_var(base, from, to);
            args.iter_mut().for_each(|a| subst_var(a, from, to));
        }
        ExprKind::Unary { expr, .. } => subst_var(expr, from, to),
        ExprKind::Binary { lhs, rhs, .. } => {
            subst_var(lhs, from, to);
            subst_var(rhs, from, to);
        }
        ExprKind::AddProperty { graph, .. } => subst_var(graph, from, to),
        _ => {}
    }
}

/// Rewrite a statement in place wherever the editor returns a
/// replacement sequence; used to splice multi-statement rewrites into
/// their containing block.
fn splice_stmts(b: &mut Block, edit: &mut dyn FnMut(&Stmt) -> Option<Vec<Stmt>>) {
    let mut new_stmts = Vec::with_capacity(b.stmts.len());
    for mut s in std::mem::take(&mut b.stmts) {
        if let Some(repl) = edit(&s) {
            new_stmts.extend(repl);
            continue;
        }
        match &mut s.kind {
            StmtKind::If { then_blk, else_blk, .. } => {
                splice_stmts(then_blk, edit);
                if let Some(e) = else_blk {
                    splice_stmts(e, edit);
                }
            }
            StmtKind::While { body, .. } => splice_stmts(body, edit),
            StmtKind::Foreach(fe) => splice_stmts(&mut fe.body, edit),
            StmtKind::Single { then_blk, else_blk, .. } => {
                splice_stmts(then_blk, edit);
                if let Some(e) = else_blk {
                    splice_stmts(e, edit);
                }
            }
            StmtKind::ParallelSections { sections } => {
                sections.iter_mut().for_each(|sec| splice_stmts(sec, edit));
            }
            _ => {}
        }
        new_stmts.push(s);
    }
    b.stmts = new_stmts;
}

/// Count call sites of `name` anywhere in the program.
fn call_site_count(p: &Program, name: &str) -> usize {
    let mut n = 0;
    for f in &p.functions {
        visit_stmts(&f.body, &mut |s| {
            for_each_expr(s, &mut |e| {
                walk_expr(e, &mut |x| {
                    if let ExprKind::Call { name: c, .. } = &x.kind {
                        if c == name {
                            n += 1;
                        }
                    }
                });
            });
        });
    }
    n
}

/// The unique Graph parameter name of a function, if it has exactly one.
fn graph_param(f: &FunctionDecl) -> Option<String> {
    let mut gs = f.params.iter().filter(|p| p.ty == DslType::Graph);
    let first = gs.next()?;
    if gs.next().is_some() {
        return None;
    }
    Some(first.name.clone())
}

// ---------------------------------------------------------------------------
// vertex_to_edge
// ---------------------------------------------------------------------------

struct V2ePlan {
    launch_sid: StmtId,
    kernel: String,
    dir: Dir,
    outer: String, // kernel's Point parameter
    inner: String, // neighbour loop variable
    gparam: String,
}

pub fn vertex_to_edge(p: &Program) -> Result<Program, TransformError> {
    const NAME: &str = "vertex-to-edge";
    let main = p
        .main()
        .ok_or_else(|| fail(NAME, vec!["program has no main".into()]))?;
    let mut reasons = Vec::new();
    let mut plans = Vec::new();

    let mut launch_count = 0;
    visit_stmts(&main.body, &mut |s| {
        let StmtKind::Foreach(fe) = &s.kind else { return };
        if fe.iter != IterKind::Points {
            return;
        }
        let Some((callee, args)) = sema::launch_call(fe) else { return };
        let Some(f) = p.function(callee) else { return };
        launch_count += 1;

        let mut why = |r: String| reasons.push(format!("{callee}: {r}"));
        if !matches!(f.params.first(), Some(prm) if prm.ty == DslType::Point) {
            why("first parameter is not a Point".into());
            return;
        }
        let outer = f.params[0].name.clone();
        let Some(gparam) = graph_param(f) else {
            why("kernel needs exactly one Graph parameter".into());
            return;
        };
        if !matches!(args.first(), Some(a) if is_var(a, &fe.var)) {
            why("the loop variable must be the first call argument".into());
            return;
        }
        if args.iter().skip(1).any(|a| uses_var_expr(a, &fe.var)) {
            why("the loop variable escapes through another argument".into());
            return;
        }
        if call_site_count(p, callee) != 1 {
            why("kernel is called from more than one place".into());
            return;
        }
        if f.body.stmts.len() != 1 {
            why("kernel body is not a single neighbour loop".into());
            return;
        }
        let StmtKind::Foreach(inner) = &f.body.stmts[0].kind else {
            why("kernel body is not a single neighbour loop".into());
            return;
        };
        if !is_var(&inner.subject, &outer) {
            why("the neighbour loop does not iterate the Point parameter".into());
            return;
        }
        let dir = match inner.iter {
            IterKind::Nbrs | IterKind::OutNbrs => Dir::Out,
            IterKind::InNbrs => Dir::In,
            _ => {
                why("kernel body is not a single neighbour loop".into());
                return;
            }
        };
        plans.push(V2ePlan {
            launch_sid: s.sid,
            kernel: callee.to_string(),
            dir,
            outer,
            inner: inner.var.clone(),
            gparam,
        });
    });

    if launch_count == 0 {
        return Err(fail(NAME, vec!["no parallel points loop launching a kernel".into()]));
    }
    if !reasons.is_empty() {
        return Err(fail(NAME, reasons));
    }

    let mut out = p.clone();
    for plan in &plans {
        rewrite_kernel_to_edge(&mut out, plan);
        rewrite_launch_to_edge(&mut out, plan);
    }
    Ok(out)
}

fn rewrite_kernel_to_edge(out: &mut Program, plan: &V2ePlan) {
    let sids: Vec<StmtId> = (0..4).map(|_| out.fresh_sid()).collect();
    let f = out
        .functions
        .iter_mut()
        .find(|f| f.name == plan.kernel)
        .expect("kernel exists");
    let taken = {
        // scope_names needs the whole program; kernels never reference
        // main's locals, so params + body + globals seen here suffice.
        let mut t: HashSet<String> = f.params.iter().map(|p| p.name.clone()).collect();
        visit_stmts(&f.body, &mut |s| {
            if let StmtKind::VarDecl { decls } = &s.kind {
                t.extend(decls.iter().map(|d| d.name.clone()));
            }
            if let StmtKind::Foreach(fe) = &s.kind {
                t.insert(fe.var.clone());
            }
        });
        t
    };
    let evar = fresh_name(&taken, "e");
    let pos = f.pos;

    let StmtKind::Foreach(inner) = f.body.stmts.remove(0).kind else { unreachable!() };
    let mut body_stmts = inner.body.stmts;
    if let Some(filter) = inner.filter {
        // An inner filter guards the body in edge form.
        let guarded = std::mem::take(&mut body_stmts);
        body_stmts = vec![Stmt {
            sid: sids[3],
            pos,
            kind: StmtKind::If {
                cond: filter,
                then_blk: Block { stmts: guarded },
                else_blk: None,
            },
        }];
    }

    // graph.getweight(src, dst) is exactly this edge's weight.
    let (srcvar, dstvar) = match plan.dir {
        Dir::Out => (plan.outer.clone(), plan.inner.clone()),
        Dir::In => (plan.inner.clone(), plan.outer.clone()),
    };
    let weight = field(pos, var(pos, &evar), "weight");
    for s in &mut body_stmts {
        replace_getweight_stmt(s, &plan.gparam, &srcvar, &dstvar, &weight);
    }

    let (outer_field, inner_field) = match plan.dir {
        Dir::Out => ("src", "dst"),
        Dir::In => ("dst", "src"),
    };
    let mut stmts = vec![
        Stmt {
            sid: sids[0],
            pos,
            kind: StmtKind::VarDecl {
                decls: vec![
                    LocalDecl {
                        ty: DslType::Point,
                        graph: Some(plan.gparam.clone()),
                        name: plan.outer.clone(),
                        init: None,
                    },
                    LocalDecl {
                        ty: DslType::Point,
                        graph: Some(plan.gparam.clone()),
                        name: plan.inner.clone(),
                        init: None,
                    },
                ],
            },
        },
        assign_stmt(
            sids[1],
            pos,
            var(pos, &plan.outer),
            field(pos, var(pos, &evar), outer_field),
        ),
        assign_stmt(
            sids[2],
            pos,
            var(pos, &plan.inner),
            field(pos, var(pos, &evar), inner_field),
        ),
    ];
    stmts.extend(body_stmts);
    f.body.stmts = stmts;
    f.params[0] = Param { ty: DslType::Edge, name: evar };
}

fn rewrite_launch_to_edge(out: &mut Program, plan: &V2ePlan) {
    let main = out.functions.iter().position(|f| f.name == "main").unwrap();
    let taken = scope_names(out, &out.functions[main]);
    let evar = fresh_name(&taken, "e");
    let sid = plan.launch_sid;
    let outer_field = match plan.dir {
        Dir::Out => "src",
        Dir::In => "dst",
    };
    rewrite_stmt_by_sid(&mut out.functions[main].body, sid, &mut |s| {
        let StmtKind::Foreach(fe) = &mut s.kind else { unreachable!() };
        let pos = s.pos;
        let oldvar = fe.var.clone();
        let endpoint = field(pos, var(pos, &evar), outer_field);
        if let Some(f) = &mut fe.filter {
            subst_var(f, &oldvar, &endpoint);
        }
        let StmtKind::Expr { expr } = &mut fe.body.stmts[0].kind else { unreachable!() };
        let ExprKind::Call { args, .. } = &mut expr.kind else { unreachable!() };
        args[0] = var(pos, &evar);
        fe.var = evar.clone();
        fe.iter = IterKind::Edges;
    });
}

fn rewrite_stmt_by_sid(b: &mut Block, sid: StmtId, f: &mut dyn FnMut(&mut Stmt)) -> bool {
    for s in &mut b.stmts {
        if s.sid == sid {
            f(s);
            return true;
        }
        let found = match &mut s.kind {
            StmtKind::If { then_blk, else_blk, .. } => {
                rewrite_stmt_by_sid(then_blk, sid, f)
                    || else_blk
                        .as_mut()
                        .map(|e| rewrite_stmt_by_sid(e, sid, f))
                        .unwrap_or(false)
            }
            StmtKind::While { body, .. } => rewrite_stmt_by_sid(body, sid, f),
            StmtKind::Foreach(fe) => rewrite_stmt_by_sid(&mut fe.body, sid, f),
            StmtKind::Single { then_blk, else_blk, .. } => {
                rewrite_stmt_by_sid(then_blk, sid, f)
                    || else_blk
                        .as_mut()
                        .map(|e| rewrite_stmt_by_sid(e, sid, f))
                        .unwrap_or(false)
            }
            StmtKind::ParallelSections { sections } => sections
                .iter_mut()
                .any(|sec| rewrite_stmt_by_sid(sec, sid, f)),
            _ => false,
        };
        if found {
            return true;
        }
    }
    false
}

fn replace_getweight_stmt(s: &mut Stmt, g: &str, src: &str, dst: &str, with: &Expr) {
    let mut on_expr = |e: &mut Expr| replace_getweight(e, g, src, dst, with);
    match &mut s.kind {
        StmtKind::VarDecl { decls } => {
            for d in decls {
                if let Some(i) = &mut d.init {
                    on_expr(i);
                }
            }
        }
        StmtKind::Assign { target, value } => {
            on_expr(target);
            on_expr(value);
        }
        StmtKind::If { cond, then_blk, else_blk } => {
            on_expr(cond);
            for t in &mut then_blk.stmts {
                replace_getweight_stmt(t, g, src, dst, with);
            }
            if let Some(e) = else_blk {
                for t in &mut e.stmts {
                    replace_getweight_stmt(t, g, src, dst, with);
                }
            }
        }
        StmtKind::While { cond, body } => {
            on_expr(cond);
            for t in &mut body.stmts {
                replace_getweight_stmt(t, g, src, dst, with);
            }
        }
        StmtKind::Return { value } => {
            if let Some(v) = value {
                on_expr(v);
            }
        }
        StmtKind::Expr { expr } => on_expr(expr),
        StmtKind::Foreach(fe) => {
            on_expr(&mut fe.subject);
            if let Some(f) = &mut fe.filter {
                on_expr(f);
            }
            for t in &mut fe.body.stmts {
                replace_getweight_stmt(t, g, src, dst, with);
            }
        }
        StmtKind::Single { targets, then_blk, else_blk } => {
            targets.iter_mut().for_each(&mut on_expr);
            for t in &mut then_blk.stmts {
                replace_getweight_stmt(t, g, src, dst, with);
            }
            if let Some(e) = else_blk {
                for t in &mut e.stmts {
                    replace_getweight_stmt(t, g, src, dst, with);
                }
            }
        }
        _ => {}
    }
}

fn replace_getweight(e: &mut Expr, g: &str, src: &str, dst: &str, with: &Expr) {
    let matches_call = match &e.kind {
        ExprKind::Method { base, name, args } => {
            name == "getweight"
                && is_var(base, g)
                && args.len() == 2
                && is_var(&args[0], src)
                && is_var(&args[1], dst)
        }
        _ => false,
    };
    if matches_call {
        *e = Expr { pos: e.pos, kind: with.kind.clone() };
        return;
    }
    match &mut e.kind {
        ExprKind::Field { base, .. } => replace_getweight(base, g, src, dst, with),
        ExprKind::Index { base, idx } => {
            replace_getweight(base, g, src, dst, with);
            replace_getweight(idx, g, src, dst, with);
        }
        ExprKind::Call { args, .. } => {
            args.iter_mut().for_each(|a| replace_getweight(a, g, src, dst, with))
        }
        ExprKind::Method { base, args, .. } => {
            replace_getweight(base, g, src, dst, with);
            args.iter_mut().for_each(|a| replace_getweight(a, g, src, dst, with));
        }
        ExprKind::Unary { expr, .. } => replace_getweight(expr, g, src, dst, with),
        ExprKind::Binary { lhs, rhs, .. } => {
            replace_getweight(lhs, g, src, dst, with);
            replace_getweight(rhs, g, src, dst, with);
        }
        _ => {}
    }
}

// ---------------------------------------------------------------------------
// edge_to_vertex
// ---------------------------------------------------------------------------

struct E2vPlan {
    launch_sid: StmtId,
    kernel: String,
    dir: Dir,
    outer: String,
    inner: String,
    evar: String,
    gparam: String,
}

pub fn edge_to_vertex(p: &Program) -> Result<Program, TransformError> {
    const NAME: &str = "edge-to-vertex";
    let main = p
        .main()
        .ok_or_else(|| fail(NAME, vec!["program has no main".into()]))?;
    let mut reasons = Vec::new();
    let mut plans = Vec::new();

    let mut launch_count = 0;
    visit_stmts(&main.body, &mut |s| {
        let StmtKind::Foreach(fe) = &s.kind else { return };
        if fe.iter != IterKind::Edges {
            return;
        }
        let Some((callee, args)) = sema::launch_call(fe) else { return };
        let Some(f) = p.function(callee) else { return };
        launch_count += 1;

        let mut why = |r: String| reasons.push(format!("{callee}: {r}"));
        if !matches!(f.params.first(), Some(prm) if prm.ty == DslType::Edge) {
            why("first parameter is not an Edge".into());
            return;
        }
        let evar = f.params[0].name.clone();
        let Some(gparam) = graph_param(f) else {
            why("kernel needs exactly one Graph parameter".into());
            return;
        };
        if !matches!(args.first(), Some(a) if is_var(a, &fe.var)) {
            why("the loop variable must be the first call argument".into());
            return;
        }
        if call_site_count(p, callee) != 1 {
            why("kernel is called from more than one place".into());
            return;
        }
        // The body must open with the endpoint prologue:
        //   Point (g) a, (g) b;  a = e.src|e.dst;  b = e.dst|e.src;
        let Some((a, b)) = prologue_decls(f) else {
            why("kernel does not begin with the endpoint prologue".into());
            return;
        };
        let Some(dir) = prologue_dir(f, &evar, &a, &b) else {
            why("kernel does not begin with the endpoint prologue".into());
            return;
        };
        let rest = Block { stmts: f.body.stmts[3..].to_vec() };
        // After weight substitution the edge itself must be gone.
        let mut probe = rest.clone();
        let (srcvar, dstvar) = match dir {
            Dir::Out => (a.clone(), b.clone()),
            Dir::In => (b.clone(), a.clone()),
        };
        let gw = method(
            f.pos,
            var(f.pos, &gparam),
            "getweight",
            vec![var(f.pos, &srcvar), var(f.pos, &dstvar)],
        );
        for st in &mut probe.stmts {
            replace_weight_field_stmt(st, &evar, &gw);
        }
        if uses_var_block(&probe, &evar) {
            why("kernel uses the edge beyond its endpoints and weight".into());
            return;
        }
        plans.push(E2vPlan {
            launch_sid: s.sid,
            kernel: callee.to_string(),
            dir,
            outer: a,
            inner: b,
            evar,
            gparam,
        });
    });

    if launch_count == 0 {
        return Err(fail(NAME, vec!["no parallel edges loop launching a kernel".into()]));
    }
    if !reasons.is_empty() {
        return Err(fail(NAME, reasons));
    }

    let mut out = p.clone();
    for plan in &plans {
        if let Err(r) = rewrite_launch_to_vertex(&mut out, plan) {
            return Err(fail(NAME, vec![format!("{}: {r}", plan.kernel)]));
        }
        rewrite_kernel_to_vertex(&mut out, plan);
    }
    Ok(out)
}

/// `Point (g) a, (g) b;` as the first kernel statement.
fn prologue_decls(f: &FunctionDecl) -> Option<(String, String)> {
    let StmtKind::VarDecl { decls } = &f.body.stmts.first()?.kind else { return None };
    if decls.len() != 2
        || decls.iter().any(|d| d.ty != DslType::Point || d.init.is_some())
    {
        return None;
    }
    Some((decls[0].name.clone(), decls[1].name.clone()))
}

/// The two endpoint assignments after the declarations. The variable
/// assigned first is the loop point of the vertex form; taking it from
/// `src` yields an out-neighbour loop, from `dst` an in-neighbour loop.
fn prologue_dir(f: &FunctionDecl, evar: &str, a: &str, b: &str) -> Option<Dir> {
    if f.body.stmts.len() < 3 {
        return None;
    }
    let endpoint = |s: &Stmt, target: &str| -> Option<&'static str> {
        let StmtKind::Assign { target: t, value } = &s.kind else { return None };
        if !is_var(t, target) {
            return None;
        }
        match &value.kind {
            ExprKind::Field { base, name } if is_var(base, evar) => match name.as_str() {
                "src" => Some("src"),
                "dst" => Some("dst"),
                _ => None,
            },
            _ => None,
        }
    };
    match (endpoint(&f.body.stmts[1], a), endpoint(&f.body.stmts[2], b)) {
        (Some("src"), Some("dst")) => Some(Dir::Out),
        (Some("dst"), Some("src")) => Some(Dir::In),
        _ => None,
    }
}

fn rewrite_kernel_to_vertex(out: &mut Program, plan: &E2vPlan) {
    let sid = out.fresh_sid();
    let f = out
        .functions
        .iter_mut()
        .find(|f| f.name == plan.kernel)
        .expect("kernel exists");
    let pos = f.pos;
    let mut rest: Vec<Stmt> = f.body.stmts.split_off(3);
    f.body.stmts.clear();
    let (srcvar, dstvar) = match plan.dir {
        Dir::Out => (plan.outer.clone(), plan.inner.clone()),
        Dir::In => (plan.inner.clone(), plan.outer.clone()),
    };
    let gw = method(
        pos,
        var(pos, &plan.gparam),
        "getweight",
        vec![var(pos, &srcvar), var(pos, &dstvar)],
    );
    for s in &mut rest {
        replace_weight_field_stmt(s, &plan.evar, &gw);
    }
    let iter = match plan.dir {
        Dir::Out => IterKind::OutNbrs,
        Dir::In => IterKind::InNbrs,
    };
    f.body.stmts = vec![Stmt {
        sid,
        pos,
        kind: StmtKind::Foreach(ForeachStmt {
            var: plan.inner.clone(),
            subject: var(pos, &plan.outer),
            iter,
            filter: None,
            body: Block { stmts: rest },
        }),
    }];
    f.params[0] = Param { ty: DslType::Point, name: plan.outer.clone() };
}

fn rewrite_launch_to_vertex(out: &mut Program, plan: &E2vPlan) -> Result<(), String> {
    let main = out.functions.iter().position(|f| f.name == "main").unwrap();
    let taken = scope_names(out, &out.functions[main]);
    let pvar = fresh_name(&taken, &plan.outer);
    let outer_field = match plan.dir {
        Dir::Out => "src",
        Dir::In => "dst",
    };
    let mut filter_err = None;
    rewrite_stmt_by_sid(&mut out.functions[main].body, plan.launch_sid, &mut |s| {
        let StmtKind::Foreach(fe) = &mut s.kind else { unreachable!() };
        let pos = s.pos;
        let oldvar = fe.var.clone();
        if let Some(f) = &mut fe.filter {
            replace_endpoint(f, &oldvar, outer_field, &var(pos, &pvar));
            if uses_var_expr(f, &oldvar) {
                filter_err =
                    Some("the launch filter depends on the inner endpoint".to_string());
            }
        }
        let StmtKind::Expr { expr } = &mut fe.body.stmts[0].kind else { unreachable!() };
        let ExprKind::Call { args, .. } = &mut expr.kind else { unreachable!() };
        args[0] = var(pos, &pvar);
        fe.var = pvar.clone();
        fe.iter = IterKind::Points;
    });
    match filter_err {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

/// Replace `e.<field>` (src or dst) with a plain variable.
fn replace_endpoint(e: &mut Expr, evar: &str, fieldname: &str, with: &Expr) {
    let is_match = match &e.kind {
        ExprKind::Field { base, name } => name == fieldname && is_var(base, evar),
        _ => false,
    };
    if is_match {
        *e = Expr { pos: e.pos, kind: with.kind.clone() };
        return;
    }
    match &mut e.kind {
        ExprKind::Field { base, .. } => replace_endpoint(base, evar, fieldname, with),
        ExprKind::Index { base, idx } => {
            replace_endpoint(base, evar, fieldname, with);
            replace_endpoint(idx, evar, fieldname, with);
        }
        ExprKind::Call { args, .. } => args
            .iter_mut()
            .for_each(|a| replace_endpoint(a, evar, fieldname, with)),
        ExprKind::Method { base, args, .. } => {
            replace_endpoint(base, evar, fieldname, with);
            args.iter_mut()
                .for_each(|a| replace_endpoint(a, evar, fieldname, with));
        }
        ExprKind::Unary { expr, .. } => replace_endpoint(expr, evar, fieldname, with),
        ExprKind::Binary { lhs, rhs, .. } => {
            replace_endpoint(lhs, evar, fieldname, with);
            replace_endpoint(rhs, evar, fieldname, with);
        }
        _ => {}
    }
}

/// Replace `e.weight` with a getweight call.
fn replace_weight_field_stmt(s: &mut Stmt, evar: &str, with: &Expr) {
    replace_getweight_stmt_generic(s, &mut |e| {
        let is_match = match &e.kind {
            ExprKind::Field { base, name } => name == "weight" && is_var(base, evar),
            _ => false,
        };
        if is_match {
            *e = Expr { pos: e.pos, kind: with.kind.clone() };
            true
        } else {
            false
        }
    });
}

/// Walk every expression of a statement tree, applying `try_replace`
/// top-down; children of replaced nodes are not revisited.
fn replace_getweight_stmt_generic(s: &mut Stmt, try_replace: &mut dyn FnMut(&mut Expr) -> bool) {
    fn expr(e: &mut Expr, t: &mut dyn FnMut(&mut Expr) -> bool) {
        if t(e) {
            return;
        }
        match &mut e.kind {
            ExprKind::Field { base, .. } => expr(base, t),
            ExprKind::Index { base, idx } => {
                expr(base, t);
                expr(idx, t);
            }
            ExprKind::Call { args, .. } => args.iter_mut().for_each(|a| expr(a, t)),
            ExprKind::Method { base, args, .. } => {
                expr(base, t);
                args.iter_mut().for_each(|a| expr(a, t));
            }
            ExprKind::Unary { expr: x, .. } => expr(x, t),
            ExprKind::Binary { lhs, rhs, .. } => {
                expr(lhs, t);
                expr(rhs, t);
            }
            _ => {}
        }
    }
    fn stmt(s: &mut Stmt, t: &mut dyn FnMut(&mut Expr) -> bool) {
        match &mut s.kind {
            StmtKind::VarDecl { decls } => {
                for d in decls {
                    if let Some(i) = &mut d.init {
                        expr(i, t);
                    }
                }
            }
            StmtKind::Assign { target, value } => {
                expr(target, t);
                expr(value, t);
            }
            StmtKind::If { cond, then_blk, else_blk } => {
                expr(cond, t);
                then_blk.stmts.iter_mut().for_each(|x| stmt(x, t));
                if let Some(e) = else_blk {
                    e.stmts.iter_mut().for_each(|x| stmt(x, t));
                }
            }
            StmtKind::While { cond, body } => {
                expr(cond, t);
                body.stmts.iter_mut().for_each(|x| stmt(x, t));
            }
            StmtKind::Return { value } => {
                if let Some(v) = value {
                    expr(v, t);
                }
            }
            StmtKind::Expr { expr: e } => expr(e, t),
            StmtKind::Foreach(fe) => {
                expr(&mut fe.subject, t);
                if let Some(f) = &mut fe.filter {
                    expr(f, t);
                }
                fe.body.stmts.iter_mut().for_each(|x| stmt(x, t));
            }
            StmtKind::Single { targets, then_blk, else_blk } => {
                targets.iter_mut().for_each(|x| expr(x, t));
                then_blk.stmts.iter_mut().for_each(|x| stmt(x, t));
                if let Some(e) = else_blk {
                    e.stmts.iter_mut().for_each(|x| stmt(x, t));
                }
            }
            StmtKind::ParallelSections { sections } => {
                sections
                    .iter_mut()
                    .for_each(|sec| sec.stmts.iter_mut().for_each(|x| stmt(x, t)));
            }
            _ => {}
        }
    }
    stmt(s, try_replace);
}

// ---------------------------------------------------------------------------
// to_worklist
// ---------------------------------------------------------------------------

pub fn to_worklist(p: &Program) -> Result<Program, TransformError> {
    const NAME: &str = "to-worklist";
    let table = match sema::resolve(p) {
        Ok(t) => t,
        Err(errs) => {
            return Err(fail(NAME, errs.into_iter().map(|e| e.to_string()).collect()))
        }
    };
    let main = p
        .main()
        .ok_or_else(|| fail(NAME, vec!["program has no main".into()]))?;

    // The convergence loop: a while statement containing launches.
    let mut loops: Vec<(StmtId, Vec<StmtId>)> = Vec::new();
    visit_stmts(&main.body, &mut |s| {
        let StmtKind::While { body, .. } = &s.kind else { return };
        let mut launches = Vec::new();
        visit_stmts(body, &mut |inner| {
            if let StmtKind::Foreach(fe) = &inner.kind {
                if fe.iter == IterKind::Points && sema::launch_call(fe).is_some() {
                    launches.push(inner.sid);
                }
            }
        });
        if !launches.is_empty() {
            loops.push((s.sid, launches));
        }
    });
    let (loop_sid, launch_sids) = match loops.len() {
        0 => return Err(fail(NAME, vec!["no convergence loop with a points launch".into()])),
        1 => loops.remove(0),
        _ => return Err(fail(NAME, vec!["more than one convergence loop".into()])),
    };
    if launch_sids.len() != 1 {
        return Err(fail(
            NAME,
            vec![format!(
                "the loop launches {} kernels; a worklist drives exactly one",
                launch_sids.len()
            )],
        ));
    }
    let launch_sid = launch_sids[0];

    // Collect loop, launch and kernel details from the source program.
    let mut launch_info: Option<(String, String, Option<Expr>, String)> = None;
    visit_stmts(&main.body, &mut |s| {
        if s.sid != launch_sid {
            return;
        }
        let StmtKind::Foreach(fe) = &s.kind else { return };
        let (callee, _) = sema::launch_call(fe).unwrap();
        let graphvar = match &fe.subject.kind {
            ExprKind::Var(n) => n.clone(),
            _ => String::new(),
        };
        launch_info = Some((callee.to_string(), graphvar, fe.filter.clone(), fe.var.clone()));
    });
    let (kernel, graphvar, launch_filter, launch_var) = launch_info.unwrap();
    let f = p.function(&kernel).unwrap();
    let Some(gparam) = graph_param(f) else {
        return Err(fail(NAME, vec![format!("{kernel}: needs exactly one Graph parameter")]));
    };
    if !matches!(f.params.first(), Some(prm) if prm.ty == DslType::Point) {
        return Err(fail(NAME, vec![format!("{kernel}: first parameter is not a Point")]));
    }
    let outer = f.params[0].name.clone();
    let inner = match f.body.stmts.as_slice() {
        [s] => match &s.kind {
            StmtKind::Foreach(fe)
                if is_var(&fe.subject, &outer)
                    && matches!(fe.iter, IterKind::Nbrs | IterKind::OutNbrs) =>
            {
                fe.var.clone()
            }
            StmtKind::Foreach(fe) if matches!(fe.iter, IterKind::InNbrs) => {
                return Err(fail(
                    NAME,
                    vec![format!(
                        "{kernel}: pull-style kernels read neighbours instead of updating them"
                    )],
                ));
            }
            _ => {
                return Err(fail(
                    NAME,
                    vec![format!("{kernel}: body is not a single neighbour loop")],
                ))
            }
        },
        _ => {
            return Err(fail(
                NAME,
                vec![format!("{kernel}: body is not a single neighbour loop")],
            ))
        }
    };

    // Every property write must target the neighbour; those are the
    // points worth re-queueing.
    let mut bad_write = None;
    visit_stmts(&f.body, &mut |s| {
        let mut check_target = |e: &Expr| {
            if let ExprKind::Field { base, .. } = &e.kind {
                if let ExprKind::Var(v) = &base.kind {
                    if v != &inner {
                        bad_write = Some(v.clone());
                    }
                }
            }
        };
        match &s.kind {
            StmtKind::Assign { target, .. } => {
                if matches!(target.kind, ExprKind::Field { .. }) {
                    check_target(target);
                }
            }
            StmtKind::Expr { expr } => {
                if let ExprKind::Call { name, args } = &expr.kind {
                    if matches!(name.as_str(), "MIN" | "MAX" | "RADD" | "RMUL") {
                        if matches!(args[0].kind, ExprKind::Field { .. }) {
                            check_target(&args[0]);
                        }
                    }
                }
            }
            _ => {}
        }
    });
    if let Some(v) = bad_write {
        return Err(fail(
            NAME,
            vec![format!(
                "{kernel}: writes a property of {v}; only updates to the neighbour can be re-queued"
            )],
        ));
    }

    // The changed flags: globals tested by `if (<flags> == 0) break;`.
    let mut flags: Vec<String> = Vec::new();
    let mut break_sid = None;
    let mut loop_cond_const = false;
    visit_stmts(&main.body, &mut |s| {
        if s.sid != loop_sid {
            return;
        }
        let StmtKind::While { cond, body } = &s.kind else { return };
        loop_cond_const = matches!(cond.kind, ExprKind::Int(_) | ExprKind::Bool(_));
        for st in &body.stmts {
            let StmtKind::If { cond, then_blk, else_blk } = &st.kind else { continue };
            if else_blk.is_some()
                || then_blk.stmts.len() != 1
                || !matches!(then_blk.stmts[0].kind, StmtKind::Break)
            {
                continue;
            }
            let mut fs = Vec::new();
            if collect_zero_tests(cond, table_globals(&table), &mut fs) {
                flags = fs;
                break_sid = Some(st.sid);
            }
        }
    });
    if !loop_cond_const {
        return Err(fail(NAME, vec!["loop condition is not a constant".into()]));
    }
    let Some(break_sid) = break_sid else {
        return Err(fail(NAME, vec!["no `if (flag == 0) break;` convergence test".into()]));
    };
    if flags.is_empty() {
        return Err(fail(NAME, vec!["no changed flag found".into()]));
    }
    // Flags must be pure signals: written with 1 in the kernel (or used
    // as a MIN/MAX changed argument), reset to 0 in main, tested by the
    // break. Any other use keeps the program out of worklist form.
    for flag in &flags {
        let mut misuse = None;
        for func in &p.functions {
            visit_stmts(&func.body, &mut |s| {
                if s.sid == break_sid || misuse.is_some() {
                    return;
                }
                if let StmtKind::Assign { target, value } = &s.kind {
                    if is_var(target, flag) {
                        let ok = matches!(value.kind, ExprKind::Int(0))
                            || (func.name == kernel && matches!(value.kind, ExprKind::Int(1)));
                        if !ok {
                            misuse = Some(format!("{flag} is assigned a computed value"));
                        }
                        return;
                    }
                }
                for_each_expr(s, &mut |e| {
                    let mut probe = e.clone();
                    blank_reduction_flag(&mut probe, flag);
                    if uses_var_expr(&probe, flag) {
                        misuse = Some(format!("{flag} is used outside the convergence test"));
                    }
                });
            });
        }
        if let Some(m) = misuse {
            return Err(fail(NAME, vec![m]));
        }
    }

    // Passed all checks; build the rewritten program.
    let mut out = p.clone();
    let main_idx = out.functions.iter().position(|f| f.name == "main").unwrap();
    let wl = {
        let taken = scope_names(&out, &out.functions[main_idx]);
        fresh_name(&taken, "wl")
    };

    rewrite_worklist_kernel(&mut out, &kernel, &inner, &flags, &wl);

    // Drop the flags everywhere: global declarations, resets, break test.
    out.globals.retain(|g| !flags.contains(&g.name));
    let main_f = &mut out.functions[main_idx];
    splice_stmts(&mut main_f.body, &mut |s| {
        if s.sid == break_sid {
            return Some(Vec::new());
        }
        if let StmtKind::Assign { target, value } = &s.kind {
            if let ExprKind::Var(n) = &target.kind {
                if flags.contains(n) && matches!(value.kind, ExprKind::Int(0)) {
                    return Some(Vec::new());
                }
            }
        }
        None
    });

    // Launch: drain the collection instead of sweeping all points.
    let pos = out.functions[main_idx].pos;
    rewrite_stmt_by_sid(&mut out.functions[main_idx].body, launch_sid, &mut |s| {
        let StmtKind::Foreach(fe) = &mut s.kind else { unreachable!() };
        fe.subject = var(pos, &wl);
        fe.iter = IterKind::Items;
        fe.filter = None;
        let StmtKind::Expr { expr } = &mut fe.body.stmts[0].kind else { unreachable!() };
        let ExprKind::Call { args, .. } = &mut expr.kind else { unreachable!() };
        args.push(var(pos, &wl));
    });

    // Loop condition: run until nothing is pending.
    rewrite_stmt_by_sid(&mut out.functions[main_idx].body, loop_sid, &mut |s| {
        let StmtKind::While { cond, .. } = &mut s.kind else { unreachable!() };
        *cond = Expr {
            pos,
            kind: ExprKind::Binary {
                op: BinOp::Ne,
                lhs: Box::new(method(pos, var(pos, &wl), "size", vec![])),
                rhs: Box::new(int(pos, 0)),
            },
        };
    });

    // Seeding, inserted together with the declaration just before the
    // loop. A launch filter describes the initial frontier exactly; an
    // indexed property write pinpoints seeded points; otherwise every
    // point starts pending.
    let kernel_props: HashSet<String> = {
        let acc = &table.fn_access[&kernel];
        acc.reads
            .props
            .iter()
            .chain(acc.writes.props.iter())
            .filter(|(g, p)| g == &gparam && p != "weight")
            .map(|(_, p)| p.clone())
            .collect()
    };
    let mut seeds: Vec<Stmt> = Vec::new();
    let decl_sid = out.fresh_sid();
    seeds.push(Stmt {
        sid: decl_sid,
        pos,
        kind: StmtKind::VarDecl {
            decls: vec![LocalDecl {
                ty: DslType::Collection,
                graph: None,
                name: wl.clone(),
                init: None,
            }],
        },
    });
    if let Some(filter) = launch_filter {
        let sid_f = out.fresh_sid();
        let sid_add = out.fresh_sid();
        seeds.push(Stmt {
            sid: sid_f,
            pos,
            kind: StmtKind::Foreach(ForeachStmt {
                var: launch_var.clone(),
                subject: var(pos, &graphvar),
                iter: IterKind::Points,
                filter: Some(filter),
                body: Block {
                    stmts: vec![expr_stmt(
                        sid_add,
                        pos,
                        method(pos, var(pos, &wl), "add", vec![var(pos, &launch_var)]),
                    )],
                },
            }),
        });
    } else {
        // Indexed writes to kernel properties before the loop mark seeds.
        let mut indexed: Vec<Expr> = Vec::new();
        let main_ref = out.functions.iter().find(|f| f.name == "main").unwrap();
        let mut before_loop = true;
        for s in &main_ref.body.stmts {
            if s.sid == loop_sid {
                before_loop = false;
            }
            if !before_loop {
                break;
            }
            if let StmtKind::Assign { target, .. } = &s.kind {
                if let ExprKind::Field { base, name } = &target.kind {
                    if kernel_props.contains(name) {
                        if let ExprKind::Index { base: arr, .. } = &base.kind {
                            if let ExprKind::Field { base: g, name: pn } = &arr.kind {
                                if pn == "points" && is_var(g, &graphvar) {
                                    indexed.push((**base).clone());
                                }
                            }
                        }
                    }
                }
            }
        }
        if !indexed.is_empty() {
            for point in indexed {
                let sid = out.fresh_sid();
                seeds.push(expr_stmt(
                    sid,
                    pos,
                    method(pos, var(pos, &wl), "add", vec![point]),
                ));
            }
        } else {
            let sid_f = out.fresh_sid();
            let sid_add = out.fresh_sid();
            seeds.push(Stmt {
                sid: sid_f,
                pos,
                kind: StmtKind::Foreach(ForeachStmt {
                    var: launch_var.clone(),
                    subject: var(pos, &graphvar),
                    iter: IterKind::Points,
                    filter: None,
                    body: Block {
                        stmts: vec![expr_stmt(
                            sid_add,
                            pos,
                            method(pos, var(pos, &wl), "add", vec![var(pos, &launch_var)]),
                        )],
                    },
                }),
            });
        }
    }
    insert_before_sid(
        &mut out.functions[main_idx].body,
        loop_sid,
        seeds,
    );

    Ok(out)
}

fn table_globals(table: &sema::SymbolTable) -> HashSet<String> {
    table.globals.iter().map(|g| g.name.clone()).collect()
}

/// Neutralise the changed-flag argument of MIN/MAX calls so that the
/// remaining occurrences of `flag` are genuine reads.
fn blank_reduction_flag(e: &mut Expr, flag: &str) {
    if let ExprKind::Call { name, args } = &mut e.kind {
        if matches!(name.as_str(), "MIN" | "MAX") && args.len() == 3 && is_var(&args[2], flag) {
            args[2] = int(args[2].pos, 0);
        }
    }
    match &mut e.kind {
        ExprKind::Field { base, .. } => blank_reduction_flag(base, flag),
        ExprKind::Index { base, idx } => {
            blank_reduction_flag(base, flag);
            blank_reduction_flag(idx, flag);
        }
        ExprKind::Call { args, .. } => {
            args.iter_mut().for_each(|a| blank_reduction_flag(a, flag))
        }
        ExprKind::Method { base, args, .. } => {
            blank_reduction_flag(base, flag);
            args.iter_mut().for_each(|a| blank_reduction_flag(a, flag));
        }
        ExprKind::Unary { expr, .. } => blank_reduction_flag(expr, flag),
        ExprKind::Binary { lhs, rhs, .. } => {
            blank_reduction_flag(lhs, flag);
            blank_reduction_flag(rhs, flag);
        }
        _ => {}
    }
}

/// Match `g == 0` or a conjunction of such tests; collect the globals.
fn collect_zero_tests(e: &Expr, globals: HashSet<String>, out: &mut Vec<String>) -> bool {
    fn rec(e: &Expr, globals: &HashSet<String>, out: &mut Vec<String>) -> bool {
        match &e.kind {
            ExprKind::Binary { op: BinOp::And, lhs, rhs } => {
                rec(lhs, globals, out) && rec(rhs, globals, out)
            }
            ExprKind::Binary { op: BinOp::Eq, lhs, rhs } => match (&lhs.kind, &rhs.kind) {
                (ExprKind::Var(n), ExprKind::Int(0)) if globals.contains(n) => {
                    out.push(n.clone());
                    true
                }
                _ => false,
            },
            _ => false,
        }
    }
    rec(e, &globals, out)
}

fn rewrite_worklist_kernel(
    out: &mut Program,
    kernel: &str,
    inner: &str,
    flags: &[String],
    wl: &str,
) {
    // Fresh sids are drawn up front; the borrow of the function below
    // keeps the program otherwise untouched.
    let mut sid_pool: Vec<StmtId> = (0..64).map(|_| out.fresh_sid()).collect();
    let f = out
        .functions
        .iter_mut()
        .find(|f| f.name == kernel)
        .expect("kernel exists");
    let mut taken: HashSet<String> = {
        let mut t: HashSet<String> = f.params.iter().map(|p| p.name.clone()).collect();
        visit_stmts(&f.body, &mut |s| {
            if let StmtKind::VarDecl { decls } = &s.kind {
                t.extend(decls.iter().map(|d| d.name.clone()));
            }
            if let StmtKind::Foreach(fe) = &s.kind {
                t.insert(fe.var.clone());
            }
        });
        t
    };

    splice_stmts(&mut f.body, &mut |s| match &s.kind {
        // changed = 1  =>  wl.add(t)
        StmtKind::Assign { target, value } => {
            let is_flag_set = matches!(&target.kind, ExprKind::Var(n) if flags.contains(n))
                && matches!(value.kind, ExprKind::Int(1));
            if is_flag_set {
                let sid = sid_pool.pop().unwrap();
                Some(vec![expr_stmt(
                    sid,
                    s.pos,
                    method(s.pos, var(s.pos, wl), "add", vec![var(s.pos, inner)]),
                )])
            } else {
                None
            }
        }
        // MIN(x.prop, v, changed)  =>  probe with a local flag, add on success
        StmtKind::Expr { expr } => {
            let ExprKind::Call { name, args } = &expr.kind else { return None };
            if !matches!(name.as_str(), "MIN" | "MAX") || args.len() != 3 {
                return None;
            }
            let ExprKind::Var(fname) = &args[2].kind else { return None };
            if !flags.contains(fname) {
                return None;
            }
            let pushed = fresh_name(&taken, "pushed");
            taken.insert(pushed.clone());
            let target_base = match &args[0].kind {
                ExprKind::Field { base, .. } => match &base.kind {
                    ExprKind::Var(v) => v.clone(),
                    _ => inner.to_string(),
                },
                _ => inner.to_string(),
            };
            let sid_decl = sid_pool.pop().unwrap();
            let sid_min = sid_pool.pop().unwrap();
            let sid_if = sid_pool.pop().unwrap();
            let sid_add = sid_pool.pop().unwrap();
            let mut min_args = args.clone();
            min_args[2] = var(s.pos, &pushed);
            Some(vec![
                Stmt {
                    sid: sid_decl,
                    pos: s.pos,
                    kind: StmtKind::VarDecl {
                        decls: vec![LocalDecl {
                            ty: DslType::Int,
                            graph: None,
                            name: pushed.clone(),
                            init: Some(int(s.pos, 0)),
                        }],
                    },
                },
                expr_stmt(
                    sid_min,
                    s.pos,
                    Expr {
                        pos: s.pos,
                        kind: ExprKind::Call { name: name.clone(), args: min_args },
                    },
                ),
                Stmt {
                    sid: sid_if,
                    pos: s.pos,
                    kind: StmtKind::If {
                        cond: Expr {
                            pos: s.pos,
                            kind: ExprKind::Binary {
                                op: BinOp::Ne,
                                lhs: Box::new(var(s.pos, &pushed)),
                                rhs: Box::new(int(s.pos, 0)),
                            },
                        },
                        then_blk: Block {
                            stmts: vec![expr_stmt(
                                sid_add,
                                s.pos,
                                method(
                                    s.pos,
                                    var(s.pos, wl),
                                    "add",
                                    vec![var(s.pos, &target_base)],
                                ),
                            )],
                        },
                        else_blk: None,
                    },
                },
            ])
        }
        _ => None,
    });
    f.params.push(Param { ty: DslType::Collection, name: wl.to_string() });
}

fn insert_before_sid(b: &mut Block, sid: StmtId, stmts: Vec<Stmt>) -> bool {
    if let Some(idx) = b.stmts.iter().position(|s| s.sid == sid) {
        for (k, s) in stmts.into_iter().enumerate() {
            b.stmts.insert(idx + k, s);
        }
        return true;
    }
    let mut pending = Some(stmts);
    for s in &mut b.stmts {
        let stmts = pending.take().unwrap();
        let inserted = match &mut s.kind {
            StmtKind::If { then_blk, else_blk, .. } => {
                if insert_before_sid(then_blk, sid, stmts.clone()) {
                    true
                } else if let Some(e) = else_blk {
                    insert_before_sid(e, sid, stmts.clone())
                } else {
                    false
                }
            }
            StmtKind::While { body, .. } => insert_before_sid(body, sid, stmts.clone()),
            StmtKind::Foreach(fe) => insert_before_sid(&mut fe.body, sid, stmts.clone()),
            StmtKind::Single { then_blk, else_blk, .. } => {
                if insert_before_sid(then_blk, sid, stmts.clone()) {
                    true
                } else if let Some(e) = else_blk {
                    insert_before_sid(e, sid, stmts.clone())
                } else {
                    false
                }
            }
            StmtKind::ParallelSections { sections } => sections
                .iter_mut()
                .any(|sec| insert_before_sid(sec, sid, stmts.clone())),
            _ => false,
        };
        if inserted {
            return true;
        }
        pending = Some(stmts);
    }
    false
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parser::parse;
    use crate::pretty::pretty_print;

    fn corpus(name: &str) -> Program {
        let src =
            std::fs::read_to_string(format!("{}/corpus/{}", env!("CARGO_MANIFEST_DIR"), name))
                .unwrap();
        parse(&src).unwrap()
    }

    #[test]
    fn bfs_vertex_to_edge_matches_handwritten() {
        let got = vertex_to_edge(&corpus("bfs.fal")).unwrap();
        let want = corpus("bfs_edge.fal");
        assert_eq!(pretty_print(&got), pretty_print(&want));
    }

    #[test]
    fn sssp_vertex_to_edge_matches_handwritten() {
        let got = vertex_to_edge(&corpus("sssp.fal")).unwrap();
        let want = corpus("sssp_edge.fal");
        assert_eq!(pretty_print(&got), pretty_print(&want));
    }

    #[test]
    fn edge_to_vertex_recovers_vertex_form() {
        let got = edge_to_vertex(&corpus("bfs_edge.fal")).unwrap();
        assert!(alpha_eq(&got, &corpus("bfs.fal")));
        let got = edge_to_vertex(&corpus("sssp_edge.fal")).unwrap();
        assert!(alpha_eq(&got, &corpus("sssp.fal")));
    }

    #[test]
    fn edge_vertex_edge_roundtrip_is_exact() {
        let vertex = edge_to_vertex(&corpus("sssp_edge.fal")).unwrap();
        let back = vertex_to_edge(&vertex).unwrap();
        assert_eq!(pretty_print(&back), pretty_print(&corpus("sssp_edge.fal")));
    }

    #[test]
    fn pull_kernel_roundtrips_through_edge_form() {
        let orig = corpus("cc_pull.fal");
        let edge = vertex_to_edge(&orig).unwrap();
        // The pull kernel binds the loop point to the edge destination.
        let txt = pretty_print(&edge);
        assert!(txt.contains("e.dst"), "{txt}");
        let back = edge_to_vertex(&edge).unwrap();
        assert!(alpha_eq(&back, &orig));
        let txt = pretty_print(&back);
        assert!(txt.contains("innbrs"), "{txt}");
    }

    #[test]
    fn transformed_programs_still_resolve() {
        for name in ["bfs.fal", "sssp.fal", "cc.fal", "cc_pull.fal", "bfs_sssp.fal"] {
            let p = vertex_to_edge(&corpus(name)).unwrap();
            sema::resolve(&p).unwrap_or_else(|e| panic!("{name}: {}", e[0]));
        }
        for name in ["bfs.fal", "sssp.fal", "cc.fal"] {
            let p = to_worklist(&corpus(name)).unwrap();
            sema::resolve(&p).unwrap_or_else(|e| panic!("{name}: {}", e[0]));
        }
    }

    #[test]
    fn combined_program_converts_both_kernels() {
        let p = vertex_to_edge(&corpus("bfs_sssp.fal")).unwrap();
        for f in &p.functions {
            if f.name == "BFS" || f.name == "relaxgraph" {
                assert_eq!(f.params[0].ty, DslType::Edge, "{}", f.name);
            }
        }
        let txt = pretty_print(&p);
        assert_eq!(txt.matches("graph.edges").count(), 2, "{txt}");
    }

    #[test]
    fn boruvka_is_not_edge_convertible() {
        let err = vertex_to_edge(&corpus("mst.fal")).unwrap_err();
        assert_eq!(err.reasons.len(), 3, "{err}");
        for kernel in ["resetmin", "findmin", "mergemin"] {
            assert!(err.reasons.iter().any(|r| r.starts_with(kernel)), "{err}");
        }
    }

    #[test]
    fn worklist_sssp_seeds_from_the_written_point() {
        let p = to_worklist(&corpus("sssp.fal")).unwrap();
        let txt = pretty_print(&p);
        assert!(txt.contains("Collection<Point> wl;"), "{txt}");
        assert!(txt.contains("wl.add(graph.points[0]);"), "{txt}");
        assert!(txt.contains("while (wl.size() != 0)"), "{txt}");
        assert!(txt.contains("relaxgraph(t, graph, wl);"), "{txt}");
        assert!(txt.contains("int pushed = 0;"), "{txt}");
        assert!(txt.contains("MIN(t.dist, p.dist + graph.getweight(p, t), pushed);"), "{txt}");
        assert!(txt.contains("wl.add(t);"), "{txt}");
        // The flag global is gone entirely.
        assert!(!txt.contains("changed"), "{txt}");
    }

    #[test]
    fn worklist_bfs_seeds_from_the_filter() {
        let p = to_worklist(&corpus("bfs.fal")).unwrap();
        let txt = pretty_print(&p);
        assert!(txt.contains("foreach (t In graph.points) (t.dist == lev) {"), "{txt}");
        assert!(txt.contains("wl.add(t);"), "{txt}");
        // The drain launch has no filter left.
        assert!(txt.contains("foreach (t In wl) {"), "{txt}");
        assert!(!txt.contains("changed"), "{txt}");
        assert!(txt.contains("lev++;") || txt.contains("lev = lev + 1;"), "{txt}");
    }

    #[test]
    fn worklist_cc_falls_back_to_all_points() {
        let p = to_worklist(&corpus("cc.fal")).unwrap();
        let txt = pretty_print(&p);
        // No filter and no indexed seed write: everything starts pending.
        let drains = txt.matches("wl.add(").count();
        assert!(drains >= 2, "{txt}"); // seeding add + kernel re-queue add
        assert!(txt.contains("while (wl.size() != 0)"), "{txt}");
    }

    #[test]
    fn pull_kernel_is_not_worklist_convertible() {
        let err = to_worklist(&corpus("cc_pull.fal")).unwrap_err();
        assert!(err.to_string().contains("pull-style"), "{err}");
    }

    #[test]
    fn multi_kernel_loop_is_not_worklist_convertible() {
        let err = to_worklist(&corpus("bfs_sssp.fal")).unwrap_err();
        assert!(err.to_string().contains("exactly one"), "{err}");
    }

    #[test]
    fn boruvka_is_not_worklist_convertible() {
        assert!(to_worklist(&corpus("mst.fal")).is_err());
    }
}
