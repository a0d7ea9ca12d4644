//! Canonical source renderer.
//!
//! The output is deterministic: four-space indents, every control-flow
//! body braced, minimal parentheses. Reparsing the output yields a
//! structurally identical program, and printing is idempotent on the
//! result.

use crate::ast::*;
use std::fmt::Write;

pub fn pretty_print(p: &Program) -> String {
    let mut out = String::new();
    for g in &p.globals {
        let _ = write!(out, "{} {}", g.ty.keyword(), g.name);
        if !matches!(g.init.kind, ExprKind::Int(0)) {
            let _ = write!(out, " = {}", print_expr(&g.init));
        } else {
            // Zero initialisers are printed explicitly so the round trip
            // is stable for `int changed = 0;`.
            out.push_str(" = 0");
        }
        out.push_str(";\n");
    }
    for f in &p.functions {
        if !out.is_empty() {
            out.push('\n');
        }
        print_function(&mut out, f);
    }
    out
}

pub fn print_function(out: &mut String, f: &FunctionDecl) {
    let _ = write!(out, "{} {}(", f.ret.keyword(), f.name);
    for (i, p) in f.params.iter().enumerate() {
        if i > 0 {
            out.push_str(", ");
        }
        let _ = write!(out, "{} {}", p.ty.keyword(), p.name);
    }
    out.push_str(") ");
    print_block(out, &f.body, 0);
    out.push('\n');
}

fn indent(out: &mut String, level: usize) {
    for _ in 0..level {
        out.push_str("    ");
    }
}

fn print_block(out: &mut String, b: &Block, level: usize) {
    out.push_str("{\n");
    for s in &b.stmts {
        print_stmt(out, s, level + 1);
    }
    indent(out, level);
    out.push('}');
}

fn print_stmt(out: &mut String, s: &Stmt, level: usize) {
    indent(out, level);
    match &s.kind {
        StmtKind::VarDecl { decls } => {
            let ty = decls[0].ty;
            let _ = write!(out, "{}", ty.keyword());
            for (i, d) in decls.iter().enumerate() {
                out.push(if i == 0 { ' ' } else { ',' });
                if i > 0 {
                    out.push(' ');
                }
                match (ty, &d.graph) {
                    (DslType::Set, Some(g)) => {
                        let _ = write!(out, "{}({})", d.name, g);
                    }
                    (_, Some(g)) => {
                        let _ = write!(out, "({}) {}", g, d.name);
                    }
                    (_, None) => out.push_str(&d.name),
                }
                if let Some(init) = &d.init {
                    let _ = write!(out, " = {}", print_expr(init));
                }
            }
            out.push_str(";\n");
        }
        StmtKind::Assign { target, value } => {
            let _ = writeln!(out, "{} = {};", print_expr(target), print_expr(value));
        }
        StmtKind::If { cond, then_blk, else_blk } => {
            let _ = write!(out, "if ({}) ", print_expr(cond));
            print_block(out, then_blk, level);
            if let Some(e) = else_blk {
                out.push_str(" else ");
                print_block(out, e, level);
            }
            out.push('\n');
        }
        StmtKind::While { cond, body } => {
            let _ = write!(out, "while ({}) ", print_expr(cond));
            print_block(out, body, level);
            out.push('\n');
        }
        StmtKind::Break => out.push_str("break;\n"),
        StmtKind::Return { value } => {
            match value {
                Some(v) => {
                    let _ = writeln!(out, "return {};", print_expr(v));
                }
                None => out.push_str("return;\n"),
            };
        }
        StmtKind::Expr { expr } => {
            let _ = writeln!(out, "{};", print_expr(expr));
        }
        StmtKind::Foreach(fe) => {
            let _ = write!(out, "foreach ({} In {}", fe.var, print_expr(&fe.subject));
            if let Some(kw) = fe.iter.keyword() {
                let _ = write!(out, ".{kw}");
            }
            out.push_str(") ");
            if let Some(f) = &fe.filter {
                let _ = write!(out, "({}) ", print_expr(f));
            }
            print_block(out, &fe.body, level);
            out.push('\n');
        }
        StmtKind::Single { targets, then_blk, else_blk } => {
            out.push_str("single (");
            for (i, t) in targets.iter().enumerate() {
                if i > 0 {
                    out.push_str(", ");
                }
                out.push_str(&print_expr(t));
            }
            out.push_str(") ");
            print_block(out, then_blk, level);
            if let Some(e) = else_blk {
                out.push_str(" else ");
                print_block(out, e, level);
            }
            out.push('\n');
        }
        StmtKind::ParallelSections { sections } => {
            out.push_str("parallel sections {\n");
            for sec in sections {
                indent(out, level + 1);
                out.push_str("section ");
                print_block(out, sec, level + 1);
                out.push('\n');
            }
            indent(out, level);
            out.push_str("}\n");
        }
    }
}

/// Single-line rendering of a statement, used for plan dumps. Nested
/// blocks are flattened with inline braces.
pub fn print_stmt_inline(s: &Stmt) -> String {
    let mut out = String::new();
    print_stmt(&mut out, s, 0);
    let mut line = String::with_capacity(out.len());
    let mut pending_space = false;
    for part in out.split_whitespace() {
        if pending_space {
            line.push(' ');
        }
        line.push_str(part);
        pending_space = true;
    }
    line
}

// Binding strength; larger binds tighter.
fn prec(e: &ExprKind) -> u8 {
    match e {
        ExprKind::Binary { op, .. } => match op {
            BinOp::Or => 1,
            BinOp::And => 2,
            BinOp::Eq | BinOp::Ne => 3,
            BinOp::Lt | BinOp::Le | BinOp::Gt | BinOp::Ge => 4,
            BinOp::Add | BinOp::Sub => 5,
            BinOp::Mul | BinOp::Div | BinOp::Rem => 6,
        },
        ExprKind::Unary { .. } => 7,
        _ => 8,
    }
}

pub fn print_expr(e: &Expr) -> String {
    let mut s = String::new();
    write_expr(&mut s, e);
    s
}

fn write_expr(out: &mut String, e: &Expr) {
    match &e.kind {
        ExprKind::Int(v) => {
            let _ = write!(out, "{v}");
        }
        ExprKind::Float(v) => {
            if v.fract() == 0.0 {
                let _ = write!(out, "{v:.1}");
            } else {
                let _ = write!(out, "{v}");
            }
        }
        ExprKind::Bool(v) => {
            let _ = write!(out, "{v}");
        }
        ExprKind::MaxInt => out.push_str("MAX_INT"),
        ExprKind::Var(n) => out.push_str(n),
        ExprKind::Field { base, name } => {
            write_child(out, base, prec(&e.kind));
            let _ = write!(out, ".{name}");
        }
        ExprKind::Index { base, idx } => {
            write_child(out, base, prec(&e.kind));
            out.push('[');
            write_expr(out, idx);
            out.push(']');
        }
        ExprKind::Call { name, args } => {
            out.push_str(name);
            write_args(out, args);
        }
        ExprKind::Method { base, name, args } => {
            write_child(out, base, prec(&e.kind));
            let _ = write!(out, ".{name}");
            write_args(out, args);
        }
        ExprKind::AddProperty { graph, elem, prop, ty } => {
            write_child(out, graph, prec(&e.kind));
            let method = match elem {
                ElemKind::Point => "addPointProperty",
                ElemKind::Edge => "addEdgeProperty",
            };
            let _ = write!(out, ".{method}({prop}, {})", ty.keyword());
        }
        ExprKind::Unary { op, expr } => {
            out.push(match op {
                UnOp::Neg => '-',
                UnOp::Not => '!',
            });
            write_child(out, expr, prec(&e.kind));
        }
        ExprKind::Binary { op, lhs, rhs } => {
            let p = prec(&e.kind);
            // All binary operators are left-associative: the right child
            // needs parentheses at equal precedence, the left does not.
            if prec(&lhs.kind) < p {
                out.push('(');
                write_expr(out, lhs);
                out.push(')');
            } else {
                write_expr(out, lhs);
            }
            let _ = write!(out, " {} ", op.symbol());
            if prec(&rhs.kind) <= p {
                out.push('(');
                write_expr(out, rhs);
                out.push(')');
            } else {
                write_expr(out, rhs);
            }
        }
    }
}

fn write_child(out: &mut String, child: &Expr, parent_prec: u8) {
    if prec(&child.kind) < parent_prec {
        out.push('(');
        write_expr(out, child);
        out.push(')');
    } else {
        write_expr(out, child);
    }
}

fn write_args(out: &mut String, args: &[Expr]) {
    out.push('(');
    for (i, a) in args.iter().enumerate() {
        if i > 0 {
            out.push_str(", ");
        }
        write_expr(out, a);
    }
    out.push(')');
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parser::parse;

    fn corpus(name: &str) -> String {
        std::fs::read_to_string(format!("{}/corpus/{}", env!("CARGO_MANIFEST_DIR"), name))
            .unwrap()
    }

    #[test]
    fn roundtrip_is_structural_identity_on_corpus() {
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
            let src = corpus(file);
            let p = parse(&src).unwrap();
            let printed = pretty_print(&p);
            let reparsed = parse(&printed).unwrap_or_else(|e| {
                panic!("{file}: reparse failed: {e}\n--- printed ---\n{printed}")
            });
            assert!(structural_eq(&p, &reparsed), "{file}: round trip changed the program");
            // Printing must be idempotent.
            assert_eq!(printed, pretty_print(&reparsed), "{file}: printing not idempotent");
        }
    }

    #[test]
    fn prints_minimal_parentheses() {
        let p = parse("int main() { int x = 0; x = (1 + 2) * 3; x = 1 + 2 * 3; }").unwrap();
        let out = pretty_print(&p);
        assert!(out.contains("x = (1 + 2) * 3;"), "{out}");
        assert!(out.contains("x = 1 + 2 * 3;"), "{out}");
    }

    #[test]
    fn prints_filter_between_header_and_body() {
        let src = "int main() { Graph g; foreach (t In g.points) (t.d == 0) { t.d = 1; } }";
        let out = pretty_print(&parse(src).unwrap());
        assert!(out.contains("foreach (t In g.points) (t.d == 0) {"), "{out}");
    }

    #[test]
    fn inline_statement_rendering_is_single_line() {
        let src = "int main() { Graph g; foreach (t In g.points) { t.d = 1; } }";
        let p = parse(src).unwrap();
        let line = print_stmt_inline(&p.main().unwrap().body.stmts[1]);
        assert_eq!(line, "foreach (t In g.points) { t.d = 1; }");
    }
}
