//! Recursive-descent parser producing the AST in `crate::ast`.
//!
//! The grammar is C-like. Control-flow bodies may be a brace block or a
//! single statement; the AST normalises both to a `Block`. `x++;` is
//! accepted and desugared to `x = x + 1;` during parsing.

use crate::ast::*;
use crate::lexer::{tokenize, LexError, Token, TokenKind};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ParseError {
    #[error(transparent)]
    Lex(#[from] LexError),
    #[error("parse error at {pos}: expected {expected}, found {found}")]
    Unexpected { pos: Pos, expected: String, found: String },
    #[error("parse error at {pos}: {message}")]
    Other { pos: Pos, message: String },
}

pub type ParseResult<T> = Result<T, ParseError>;

pub fn parse(src: &str) -> ParseResult<Program> {
    let tokens = tokenize(src)?;
    Parser::new(tokens).program()
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
    next_sid: StmtId,
}

impl Parser {
    fn new(tokens: Vec<Token>) -> Self {
        Parser { tokens, pos: 0, next_sid: 0 }
    }

    fn peek(&self) -> &Token {
        &self.tokens[self.pos]
    }

    fn peek_kind(&self) -> TokenKind {
        self.tokens[self.pos].kind
    }

    fn advance(&mut self) -> Token {
        let t = self.tokens[self.pos].clone();
        if self.pos + 1 < self.tokens.len() {
            self.pos += 1;
        }
        t
    }

    fn check(&mut self, kind: TokenKind) -> bool {
        if self.peek_kind() == kind {
            self.advance();
            true
        } else {
            false
        }
    }

    fn expect(&mut self, kind: TokenKind) -> ParseResult<Token> {
        if self.peek_kind() == kind {
            Ok(self.advance())
        } else {
            Err(self.unexpected(kind.describe()))
        }
    }

    fn unexpected(&self, expected: &str) -> ParseError {
        let t = self.peek();
        let found = if t.kind == TokenKind::Eof {
            "end of input".to_string()
        } else {
            format!("'{}'", t.lexeme)
        };
        ParseError::Unexpected { pos: t.pos, expected: expected.to_string(), found }
    }

    fn ident(&mut self) -> ParseResult<String> {
        Ok(self.expect(TokenKind::Ident)?.lexeme)
    }

    fn fresh_sid(&mut self) -> StmtId {
        let id = self.next_sid;
        self.next_sid += 1;
        id
    }

    fn stmt_node(&mut self, pos: Pos, kind: StmtKind) -> Stmt {
        Stmt { sid: self.fresh_sid(), pos, kind }
    }

    // -- types --------------------------------------------------------------

    fn is_type_start(&self) -> bool {
        use TokenKind::*;
        matches!(
            self.peek_kind(),
            KwInt | KwFloat | KwBool | KwVoid | KwGraph | KwPoint | KwEdge | KwSet | KwCollection
        )
    }

    fn parse_type(&mut self) -> ParseResult<DslType> {
        use TokenKind::*;
        let t = self.advance();
        Ok(match t.kind {
            KwInt => DslType::Int,
            KwFloat => DslType::Float,
            KwBool => DslType::Bool,
            KwVoid => DslType::Void,
            KwGraph => DslType::Graph,
            KwPoint => DslType::Point,
            KwEdge => DslType::Edge,
            KwSet => DslType::Set,
            KwCollection => {
                self.expect(Lt)?;
                self.expect(KwPoint)?;
                self.expect(Gt)?;
                DslType::Collection
            }
            _ => {
                return Err(ParseError::Unexpected {
                    pos: t.pos,
                    expected: "type name".to_string(),
                    found: format!("'{}'", t.lexeme),
                })
            }
        })
    }

    // -- top level ----------------------------------------------------------

    fn program(&mut self) -> ParseResult<Program> {
        let mut globals = Vec::new();
        let mut functions = Vec::new();
        while self.peek_kind() != TokenKind::Eof {
            if !self.is_type_start() {
                return Err(self.unexpected("a declaration"));
            }
            let pos = self.peek().pos;
            let ty = self.parse_type()?;
            let name = self.ident()?;
            if self.peek_kind() == TokenKind::LParen {
                functions.push(self.function_decl(pos, ty, name)?);
            } else {
                self.global_decl(pos, ty, name, &mut globals)?;
            }
        }
        Ok(Program { globals, functions, next_sid: self.next_sid })
    }

    fn global_decl(
        &mut self,
        pos: Pos,
        ty: DslType,
        first_name: String,
        out: &mut Vec<GlobalDecl>,
    ) -> ParseResult<()> {
        if !matches!(ty, DslType::Int | DslType::Float | DslType::Bool) {
            return Err(ParseError::Other {
                pos,
                message: format!("global variables must be scalar, found {}", ty.keyword()),
            });
        }
        let mut name = first_name;
        loop {
            let init = if self.check(TokenKind::Assign) {
                self.expr()?
            } else {
                // Uninitialised globals default to zero.
                Expr::new(pos, ExprKind::Int(0))
            };
            out.push(GlobalDecl { pos, ty, name, init });
            if !self.check(TokenKind::Comma) {
                break;
            }
            name = self.ident()?;
        }
        self.expect(TokenKind::Semi)?;
        Ok(())
    }

    fn function_decl(&mut self, pos: Pos, ret: DslType, name: String) -> ParseResult<FunctionDecl> {
        self.expect(TokenKind::LParen)?;
        let mut params = Vec::new();
        if self.peek_kind() != TokenKind::RParen {
            loop {
                let ty = self.parse_type()?;
                let pname = self.ident()?;
                params.push(Param { ty, name: pname });
                if !self.check(TokenKind::Comma) {
                    break;
                }
            }
        }
        self.expect(TokenKind::RParen)?;
        let body = self.block()?;
        Ok(FunctionDecl { pos, ret, name, params, body })
    }

    // -- statements ---------------------------------------------------------

    fn block(&mut self) -> ParseResult<Block> {
        self.expect(TokenKind::LBrace)?;
        let mut stmts = Vec::new();
        while self.peek_kind() != TokenKind::RBrace {
            if self.peek_kind() == TokenKind::Eof {
                return Err(self.unexpected("'}'"));
            }
            stmts.push(self.stmt()?);
        }
        self.expect(TokenKind::RBrace)?;
        Ok(Block { stmts })
    }

    /// A single statement or a brace block, normalised to a Block.
    fn stmt_or_block(&mut self) -> ParseResult<Block> {
        if self.peek_kind() == TokenKind::LBrace {
            self.block()
        } else {
            let s = self.stmt()?;
            Ok(Block { stmts: vec![s] })
        }
    }

    fn stmt(&mut self) -> ParseResult<Stmt> {
        use TokenKind::*;
        let pos = self.peek().pos;
        match self.peek_kind() {
            KwIf => {
                self.advance();
                self.expect(LParen)?;
                let cond = self.expr()?;
                self.expect(RParen)?;
                let then_blk = self.stmt_or_block()?;
                let else_blk =
                    if self.check(KwElse) { Some(self.stmt_or_block()?) } else { None };
                Ok(self.stmt_node(pos, StmtKind::If { cond, then_blk, else_blk }))
            }
            KwWhile => {
                self.advance();
                self.expect(LParen)?;
                let cond = self.expr()?;
                self.expect(RParen)?;
                let body = self.stmt_or_block()?;
                Ok(self.stmt_node(pos, StmtKind::While { cond, body }))
            }
            KwForeach => self.foreach_stmt(pos),
            KwSingle => {
                self.advance();
                self.expect(LParen)?;
                let mut targets = vec![self.expr()?];
                while self.check(Comma) {
                    targets.push(self.expr()?);
                }
                self.expect(RParen)?;
                let then_blk = self.block()?;
                let else_blk = if self.check(KwElse) { Some(self.block()?) } else { None };
                Ok(self.stmt_node(pos, StmtKind::Single { targets, then_blk, else_blk }))
            }
            KwParallel => {
                self.advance();
                self.expect(KwSections)?;
                self.expect(LBrace)?;
                let mut sections = Vec::new();
                while self.peek_kind() == KwSection {
                    self.advance();
                    sections.push(self.block()?);
                }
                self.expect(RBrace)?;
                if sections.is_empty() {
                    return Err(ParseError::Other {
                        pos,
                        message: "parallel sections requires at least one section".to_string(),
                    });
                }
                Ok(self.stmt_node(pos, StmtKind::ParallelSections { sections }))
            }
            KwBreak => {
                self.advance();
                self.expect(Semi)?;
                Ok(self.stmt_node(pos, StmtKind::Break))
            }
            KwReturn => {
                self.advance();
                let value = if self.peek_kind() == Semi { None } else { Some(self.expr()?) };
                self.expect(Semi)?;
                Ok(self.stmt_node(pos, StmtKind::Return { value }))
            }
            _ if self.is_type_start() => self.var_decl_stmt(pos),
            _ => self.expr_or_assign_stmt(pos),
        }
    }

    /// `foreach (v In subject[.iterator]) [(filter)] body`
    fn foreach_stmt(&mut self, pos: Pos) -> ParseResult<Stmt> {
        use TokenKind::*;
        self.advance(); // foreach
        self.expect(LParen)?;
        let var = self.ident()?;
        self.expect(KwIn)?;
        let subj_expr = self.postfix_expr()?;
        self.expect(RParen)?;

        // Split a trailing iterator-name field off the subject.
        let (subject, iter) = match subj_expr.kind {
            ExprKind::Field { ref base, ref name } => {
                let kind = match name.as_str() {
                    "points" => Some(IterKind::Points),
                    "edges" => Some(IterKind::Edges),
                    "nbrs" => Some(IterKind::Nbrs),
                    "innbrs" => Some(IterKind::InNbrs),
                    "outnbrs" => Some(IterKind::OutNbrs),
                    _ => None,
                };
                match kind {
                    Some(k) => ((**base).clone(), k),
                    None => (subj_expr.clone(), IterKind::Items),
                }
            }
            _ => (subj_expr, IterKind::Items),
        };

        // An immediately following parenthesis introduces the launch filter.
        let filter = if self.peek_kind() == LParen {
            self.advance();
            let f = self.expr()?;
            self.expect(RParen)?;
            Some(f)
        } else {
            None
        };
        let body = self.stmt_or_block()?;
        Ok(self.stmt_node(pos, StmtKind::Foreach(ForeachStmt { var, subject, iter, filter, body })))
    }

    fn var_decl_stmt(&mut self, pos: Pos) -> ParseResult<Stmt> {
        use TokenKind::*;
        let ty = self.parse_type()?;
        let mut decls = Vec::new();
        loop {
            // Graph binding before the name: `Point (g) p`.
            let mut graph = None;
            if matches!(ty, DslType::Point | DslType::Edge) && self.peek_kind() == LParen {
                self.advance();
                graph = Some(self.ident()?);
                self.expect(RParen)?;
            }
            let name = self.ident()?;
            // Graph binding after the name: `Set s(g)`.
            if ty == DslType::Set && self.peek_kind() == LParen {
                self.advance();
                graph = Some(self.ident()?);
                self.expect(RParen)?;
            }
            let init = if self.check(Assign) { Some(self.expr()?) } else { None };
            decls.push(LocalDecl { ty, graph, name, init });
            if !self.check(Comma) {
                break;
            }
        }
        self.expect(Semi)?;
        Ok(self.stmt_node(pos, StmtKind::VarDecl { decls }))
    }

    fn expr_or_assign_stmt(&mut self, pos: Pos) -> ParseResult<Stmt> {
        use TokenKind::*;
        let lhs = self.expr()?;
        let kind = if self.check(Assign) {
            let value = self.expr()?;
            StmtKind::Assign { target: lhs, value }
        } else if self.check(PlusPlus) {
            // x++  =>  x = x + 1
            let value = Expr::new(
                lhs.pos,
                ExprKind::Binary {
                    op: BinOp::Add,
                    lhs: Box::new(lhs.clone()),
                    rhs: Box::new(Expr::new(lhs.pos, ExprKind::Int(1))),
                },
            );
            StmtKind::Assign { target: lhs, value }
        } else {
            StmtKind::Expr { expr: lhs }
        };
        self.expect(Semi)?;
        Ok(self.stmt_node(pos, kind))
    }

    // -- expressions --------------------------------------------------------

    fn expr(&mut self) -> ParseResult<Expr> {
        self.or_expr()
    }

    fn or_expr(&mut self) -> ParseResult<Expr> {
        let mut lhs = self.and_expr()?;
        while self.peek_kind() == TokenKind::OrOr {
            let pos = self.advance().pos;
            let rhs = self.and_expr()?;
            lhs = Expr::new(
                pos,
                ExprKind::Binary { op: BinOp::Or, lhs: Box::new(lhs), rhs: Box::new(rhs) },
            );
        }
        Ok(lhs)
    }

    fn and_expr(&mut self) -> ParseResult<Expr> {
        let mut lhs = self.eq_expr()?;
        while self.peek_kind() == TokenKind::AndAnd {
            let pos = self.advance().pos;
            let rhs = self.eq_expr()?;
            lhs = Expr::new(
                pos,
                ExprKind::Binary { op: BinOp::And, lhs: Box::new(lhs), rhs: Box::new(rhs) },
            );
        }
        Ok(lhs)
    }

    fn eq_expr(&mut self) -> ParseResult<Expr> {
        let mut lhs = self.rel_expr()?;
        loop {
            let op = match self.peek_kind() {
                TokenKind::EqEq => BinOp::Eq,
                TokenKind::NotEq => BinOp::Ne,
                _ => break,
            };
            let pos = self.advance().pos;
            let rhs = self.rel_expr()?;
            lhs = Expr::new(pos, ExprKind::Binary { op, lhs: Box::new(lhs), rhs: Box::new(rhs) });
        }
        Ok(lhs)
    }

    fn rel_expr(&mut self) -> ParseResult<Expr> {
        let mut lhs = self.add_expr()?;
        loop {
            let op = match self.peek_kind() {
                TokenKind::Lt => BinOp::Lt,
                TokenKind::Le => BinOp::Le,
                TokenKind::Gt => BinOp::Gt,
                TokenKind::Ge => BinOp::Ge,
                _ => break,
            };
            let pos = self.advance().pos;
            let rhs = self.add_expr()?;
            lhs = Expr::new(pos, ExprKind::Binary { op, lhs: Box::new(lhs), rhs: Box::new(rhs) });
        }
        Ok(lhs)
    }

    fn add_expr(&mut self) -> ParseResult<Expr> {
        let mut lhs = self.mul_expr()?;
        loop {
            let op = match self.peek_kind() {
                TokenKind::Plus => BinOp::Add,
                TokenKind::Minus => BinOp::Sub,
                _ => break,
            };
            let pos = self.advance().pos;
            let rhs = self.mul_expr()?;
            lhs = Expr::new(pos, ExprKind::Binary { op, lhs: Box::new(lhs), rhs: Box::new(rhs) });
        }
        Ok(lhs)
    }

    fn mul_expr(&mut self) -> ParseResult<Expr> {
        let mut lhs = self.unary_expr()?;
        loop {
            let op = match self.peek_kind() {
                TokenKind::Star => BinOp::Mul,
                TokenKind::Slash => BinOp::Div,
                TokenKind::Percent => BinOp::Rem,
                _ => break,
            };
            let pos = self.advance().pos;
            let rhs = self.unary_expr()?;
            lhs = Expr::new(pos, ExprKind::Binary { op, lhs: Box::new(lhs), rhs: Box::new(rhs) });
        }
        Ok(lhs)
    }

    fn unary_expr(&mut self) -> ParseResult<Expr> {
        match self.peek_kind() {
            TokenKind::Minus => {
                let pos = self.advance().pos;
                let e = self.unary_expr()?;
                Ok(Expr::new(pos, ExprKind::Unary { op: UnOp::Neg, expr: Box::new(e) }))
            }
            TokenKind::Not => {
                let pos = self.advance().pos;
                let e = self.unary_expr()?;
                Ok(Expr::new(pos, ExprKind::Unary { op: UnOp::Not, expr: Box::new(e) }))
            }
            _ => self.postfix_expr(),
        }
    }

    fn postfix_expr(&mut self) -> ParseResult<Expr> {
        let mut e = self.primary_expr()?;
        loop {
            match self.peek_kind() {
                TokenKind::Dot => {
                    self.advance();
                    let pos = self.peek().pos;
                    let name = self.ident()?;
                    if self.peek_kind() == TokenKind::LParen {
                        if name == "addPointProperty" || name == "addEdgeProperty" {
                            e = self.add_property(e, pos, &name)?;
                        } else {
                            let args = self.call_args()?;
                            e = Expr::new(
                                pos,
                                ExprKind::Method { base: Box::new(e), name, args },
                            );
                        }
                    } else {
                        e = Expr::new(pos, ExprKind::Field { base: Box::new(e), name });
                    }
                }
                TokenKind::LBracket => {
                    let pos = self.advance().pos;
                    let idx = self.expr()?;
                    self.expect(TokenKind::RBracket)?;
                    e = Expr::new(pos, ExprKind::Index { base: Box::new(e), idx: Box::new(idx) });
                }
                _ => break,
            }
        }
        Ok(e)
    }

    /// `g.addPointProperty(dist, int)`: the first argument is a fresh
    /// property name, the second a type keyword, so neither is an
    /// ordinary expression.
    fn add_property(&mut self, graph: Expr, pos: Pos, method: &str) -> ParseResult<Expr> {
        let elem = if method == "addPointProperty" { ElemKind::Point } else { ElemKind::Edge };
        self.expect(TokenKind::LParen)?;
        let prop = self.ident()?;
        self.expect(TokenKind::Comma)?;
        let ty = self.parse_type()?;
        self.expect(TokenKind::RParen)?;
        Ok(Expr::new(pos, ExprKind::AddProperty { graph: Box::new(graph), elem, prop, ty }))
    }

    fn call_args(&mut self) -> ParseResult<Vec<Expr>> {
        self.expect(TokenKind::LParen)?;
        let mut args = Vec::new();
        if self.peek_kind() != TokenKind::RParen {
            loop {
                args.push(self.expr()?);
                if !self.check(TokenKind::Comma) {
                    break;
                }
            }
        }
        self.expect(TokenKind::RParen)?;
        Ok(args)
    }

    fn primary_expr(&mut self) -> ParseResult<Expr> {
        use TokenKind::*;
        let t = self.peek().clone();
        match t.kind {
            IntLit => {
                self.advance();
                let v: i64 = t.lexeme.parse().map_err(|_| ParseError::Other {
                    pos: t.pos,
                    message: format!("integer literal '{}' out of range", t.lexeme),
                })?;
                Ok(Expr::new(t.pos, ExprKind::Int(v)))
            }
            FloatLit => {
                self.advance();
                let v: f64 = t.lexeme.parse().map_err(|_| ParseError::Other {
                    pos: t.pos,
                    message: format!("bad float literal '{}'", t.lexeme),
                })?;
                Ok(Expr::new(t.pos, ExprKind::Float(v)))
            }
            KwTrue => {
                self.advance();
                Ok(Expr::new(t.pos, ExprKind::Bool(true)))
            }
            KwFalse => {
                self.advance();
                Ok(Expr::new(t.pos, ExprKind::Bool(false)))
            }
            KwMaxInt => {
                self.advance();
                Ok(Expr::new(t.pos, ExprKind::MaxInt))
            }
            Ident => {
                self.advance();
                if self.peek_kind() == LParen {
                    let args = self.call_args()?;
                    Ok(Expr::new(t.pos, ExprKind::Call { name: t.lexeme, args }))
                } else {
                    Ok(Expr::new(t.pos, ExprKind::Var(t.lexeme)))
                }
            }
            LParen => {
                self.advance();
                let e = self.expr()?;
                self.expect(RParen)?;
                Ok(e)
            }
            _ => Err(self.unexpected("an expression")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_empty_main() {
        let p = parse("int main() { }").unwrap();
        assert_eq!(p.functions.len(), 1);
        assert_eq!(p.functions[0].name, "main");
        assert!(p.functions[0].body.stmts.is_empty());
        assert!(p.globals.is_empty());
    }

    #[test]
    fn parses_global_list_with_initialisers() {
        let p = parse("int changed = 0, lev = 0;\nint main() { }").unwrap();
        assert_eq!(p.globals.len(), 2);
        assert_eq!(p.globals[0].name, "changed");
        assert_eq!(p.globals[1].name, "lev");
    }

    #[test]
    fn parses_foreach_with_filter_and_call_body() {
        let src = "int main() { Graph g; foreach (t In g.points) (t.dist == 0) f(t, g); }";
        let p = parse(src).unwrap();
        let main = p.main().unwrap();
        match &main.body.stmts[1].kind {
            StmtKind::Foreach(fe) => {
                assert_eq!(fe.var, "t");
                assert_eq!(fe.iter, IterKind::Points);
                assert!(fe.filter.is_some());
                assert_eq!(fe.body.stmts.len(), 1);
            }
            other => panic!("expected foreach, got {other:?}"),
        }
    }

    #[test]
    fn foreach_over_bare_collection_uses_items_iterator() {
        let src = "int main() { Collection<Point> wl; foreach (p In wl) p.x = 1; }";
        let p = parse(src).unwrap();
        match &p.main().unwrap().body.stmts[1].kind {
            StmtKind::Foreach(fe) => assert_eq!(fe.iter, IterKind::Items),
            other => panic!("expected foreach, got {other:?}"),
        }
    }

    #[test]
    fn desugars_increment() {
        let p = parse("int lev = 0;\nint main() { lev++; }").unwrap();
        match &p.main().unwrap().body.stmts[0].kind {
            StmtKind::Assign { value, .. } => match &value.kind {
                ExprKind::Binary { op: BinOp::Add, .. } => {}
                other => panic!("expected addition, got {other:?}"),
            },
            other => panic!("expected assignment, got {other:?}"),
        }
    }

    #[test]
    fn parses_point_decls_with_graph_binding() {
        let src = "void f(Edge e, Graph g) { Point (g) p, (g) t; p = e.src; t = e.dst; }\nint main() { }";
        let p = parse(src).unwrap();
        match &p.functions[0].body.stmts[0].kind {
            StmtKind::VarDecl { decls } => {
                assert_eq!(decls.len(), 2);
                assert_eq!(decls[0].graph.as_deref(), Some("g"));
                assert_eq!(decls[1].name, "t");
            }
            other => panic!("expected decl, got {other:?}"),
        }
    }

    #[test]
    fn parses_single_with_else() {
        let src = "int main() { Graph g; Set s(g); Point (g) a; single (a) { s.union(a, a); } else { } }";
        let p = parse(src).unwrap();
        match &p.main().unwrap().body.stmts[3].kind {
            StmtKind::Single { targets, else_blk, .. } => {
                assert_eq!(targets.len(), 1);
                assert!(else_blk.is_some());
            }
            other => panic!("expected single, got {other:?}"),
        }
    }

    #[test]
    fn parses_parallel_sections() {
        let src = "int main() { parallel sections { section { } section { } } }";
        let p = parse(src).unwrap();
        match &p.main().unwrap().body.stmts[0].kind {
            StmtKind::ParallelSections { sections } => assert_eq!(sections.len(), 2),
            other => panic!("expected sections, got {other:?}"),
        }
    }

    #[test]
    fn reports_position_on_error() {
        let err = parse("int main() {\n  if (x { }\n}").unwrap_err();
        match err {
            ParseError::Unexpected { pos, .. } => assert_eq!(pos.line, 2),
            other => panic!("expected unexpected-token error, got {other:?}"),
        }
    }

    #[test]
    fn precedence_binds_mul_tighter_than_add() {
        let p = parse("int main() { int x = 0; x = 1 + 2 * 3; }").unwrap();
        match &p.main().unwrap().body.stmts[1].kind {
            StmtKind::Assign { value, .. } => match &value.kind {
                ExprKind::Binary { op: BinOp::Add, rhs, .. } => match &rhs.kind {
                    ExprKind::Binary { op: BinOp::Mul, .. } => {}
                    other => panic!("expected mul on rhs, got {other:?}"),
                },
                other => panic!("expected add at top, got {other:?}"),
            },
            other => panic!("expected assignment, got {other:?}"),
        }
    }

    #[test]
    fn statement_ids_are_unique() {
        let src = std::fs::read_to_string(
            concat!(env!("CARGO_MANIFEST_DIR"), "/corpus/bfs.fal"),
        )
        .unwrap();
        let p = parse(&src).unwrap();
        let mut ids = Vec::new();
        for f in &p.functions {
            crate::ast::visit_stmts(&f.body, &mut |s| ids.push(s.sid));
        }
        let mut sorted = ids.clone();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted.len(), ids.len(), "duplicate statement ids");
        assert!(ids.iter().all(|&i| i < p.next_sid));
    }
}
