//! Abstract syntax for the DSL.
//!
//! Statements carry a stable id (`sid`) so that later passes (CFG
//! construction, scheduling, lowering) can refer back to them without
//! holding references into the tree. Equality helpers deliberately
//! ignore ids and source positions: `structural_eq` compares shape and
//! names, `alpha_eq` additionally allows locally-introduced names
//! (parameters, locals, loop variables) to differ.

use std::collections::HashMap;
use std::fmt;

pub type StmtId = u32;

/// Source position, 1-based line and column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Pos {
    pub line: u32,
    pub col: u32,
}

impl fmt::Display for Pos {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.line, self.col)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DslType {
    Int,
    Float,
    Bool,
    Void,
    Graph,
    Point,
    Edge,
    Set,
    /// `Collection<Point>`; the element type is always Point.
    Collection,
    /// Type given to the bare property-name argument of addPointProperty
    /// and addEdgeProperty.
    PropertyHandle,
}

impl DslType {
    pub fn keyword(self) -> &'static str {
        match self {
            DslType::Int => "int",
            DslType::Float => "float",
            DslType::Bool => "bool",
            DslType::Void => "void",
            DslType::Graph => "Graph",
            DslType::Point => "Point",
            DslType::Edge => "Edge",
            DslType::Set => "Set",
            DslType::Collection => "Collection<Point>",
            DslType::PropertyHandle => "property",
        }
    }
}

#[derive(Debug, Clone)]
pub struct Program {
    pub globals: Vec<GlobalDecl>,
    pub functions: Vec<FunctionDecl>,
    /// Next unused statement id; transforms allocate fresh ids from here.
    pub next_sid: StmtId,
}

impl Program {
    pub fn main(&self) -> Option<&FunctionDecl> {
        self.functions.iter().find(|f| f.name == "main")
    }

    pub fn function(&self, name: &str) -> Option<&FunctionDecl> {
        self.functions.iter().find(|f| f.name == name)
    }

    pub fn fresh_sid(&mut self) -> StmtId {
        let id = self.next_sid;
        self.next_sid += 1;
        id
    }
}

#[derive(Debug, Clone)]
pub struct GlobalDecl {
    pub pos: Pos,
    pub ty: DslType,
    pub name: String,
    pub init: Expr,
}

#[derive(Debug, Clone)]
pub struct FunctionDecl {
    pub pos: Pos,
    pub ret: DslType,
    pub name: String,
    pub params: Vec<Param>,
    pub body: Block,
}

#[derive(Debug, Clone)]
pub struct Param {
    pub ty: DslType,
    pub name: String,
}

#[derive(Debug, Clone, Default)]
pub struct Block {
    pub stmts: Vec<Stmt>,
}

#[derive(Debug, Clone)]
pub struct Stmt {
    pub sid: StmtId,
    pub pos: Pos,
    pub kind: StmtKind,
}

#[derive(Debug, Clone)]
pub enum StmtKind {
    /// One declaration statement, possibly with several declarators:
    /// `Point (g) p, (g) t;` or `int x = 0;`.
    VarDecl { decls: Vec<LocalDecl> },
    Assign { target: Expr, value: Expr },
    If { cond: Expr, then_blk: Block, else_blk: Option<Block> },
    While { cond: Expr, body: Block },
    Break,
    Return { value: Option<Expr> },
    /// Expression in statement position: calls such as `f(x);`,
    /// `MIN(...);`, `graph.read(argv[1]);`.
    Expr { expr: Expr },
    Foreach(ForeachStmt),
    /// Non-blocking lock: `single (t) { ... } else { ... }`.
    Single { targets: Vec<Expr>, then_blk: Block, else_blk: Option<Block> },
    ParallelSections { sections: Vec<Block> },
}

#[derive(Debug, Clone)]
pub struct LocalDecl {
    pub ty: DslType,
    /// Graph binding for Point/Edge/Set declarations: the parenthesised
    /// variable in `Point (g) p;` and `Set s(g);`.
    pub graph: Option<String>,
    pub name: String,
    pub init: Option<Expr>,
}

#[derive(Debug, Clone)]
pub struct ForeachStmt {
    pub var: String,
    /// What is being iterated: a graph variable for `.points`/`.edges`,
    /// a point-valued expression for neighbour iterators, or a bare
    /// Set/Collection variable.
    pub subject: Expr,
    pub iter: IterKind,
    pub filter: Option<Expr>,
    pub body: Block,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IterKind {
    Points,
    Edges,
    Nbrs,
    InNbrs,
    OutNbrs,
    /// Bare subject: items of a Set or Collection.
    Items,
}

impl IterKind {
    pub fn keyword(self) -> Option<&'static str> {
        match self {
            IterKind::Points => Some("points"),
            IterKind::Edges => Some("edges"),
            IterKind::Nbrs => Some("nbrs"),
            IterKind::InNbrs => Some("innbrs"),
            IterKind::OutNbrs => Some("outnbrs"),
            IterKind::Items => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Expr {
    pub pos: Pos,
    pub kind: ExprKind,
}

impl Expr {
    pub fn new(pos: Pos, kind: ExprKind) -> Self {
        Expr { pos, kind }
    }

    /// Convenience for synthesised expressions with no useful position.
    pub fn synth(kind: ExprKind) -> Self {
        Expr { pos: Pos::default(), kind }
    }

    pub fn var(name: &str) -> Self {
        Expr::synth(ExprKind::Var(name.to_string()))
    }

    pub fn field(base: Expr, name: &str) -> Self {
        Expr::synth(ExprKind::Field { base: Box::new(base), name: name.to_string() })
    }

    pub fn int(v: i64) -> Self {
        Expr::synth(ExprKind::Int(v))
    }
}

#[derive(Debug, Clone)]
pub enum ExprKind {
    Int(i64),
    Float(f64),
    Bool(bool),
    /// Builtin infinity sentinel, 2^31 - 1.
    MaxInt,
    Var(String),
    /// `base.name`: edge endpoints, edge weight, point/edge properties.
    Field { base: Box<Expr>, name: String },
    /// `base[idx]`: `graph.points[i]` and `argv[k]`.
    Index { base: Box<Expr>, idx: Box<Expr> },
    /// Plain call: user functions and the builtins MIN, MAX, RADD, RMUL.
    Call { name: String, args: Vec<Expr> },
    /// `base.name(args)`: graph, set and collection operations.
    Method { base: Box<Expr>, name: String, args: Vec<Expr> },
    /// `g.addPointProperty(name, type)` / `g.addEdgeProperty(name, type)`.
    AddProperty { graph: Box<Expr>, elem: ElemKind, prop: String, ty: DslType },
    Unary { op: UnOp, expr: Box<Expr> },
    Binary { op: BinOp, lhs: Box<Expr>, rhs: Box<Expr> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElemKind {
    Point,
    Edge,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnOp {
    Neg,
    Not,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Rem,
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
    And,
    Or,
}

impl BinOp {
    pub fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
            BinOp::Rem => "%",
            BinOp::Eq => "==",
            BinOp::Ne => "!=",
            BinOp::Lt => "<",
            BinOp::Le => "<=",
            BinOp::Gt => ">",
            BinOp::Ge => ">=",
            BinOp::And => "&&",
            BinOp::Or => "||",
        }
    }
}

// ---------------------------------------------------------------------------
// Structural and alpha equality
// ---------------------------------------------------------------------------

/// Scoped name bijection used by `alpha_eq`. Bound names map through the
/// scope stack; free names must match exactly.
struct Renaming {
    scopes: Vec<HashMap<String, String>>,
    reverse: Vec<HashMap<String, String>>,
    /// When false, behave as pure structural equality.
    alpha: bool,
}

impl Renaming {
    fn new(alpha: bool) -> Self {
        Renaming { scopes: vec![], reverse: vec![], alpha }
    }

    fn push(&mut self) {
        self.scopes.push(HashMap::new());
        self.reverse.push(HashMap::new());
    }

    fn pop(&mut self) {
        self.scopes.pop();
        self.reverse.pop();
    }

    fn bind(&mut self, a: &str, b: &str) {
        if let (Some(s), Some(r)) = (self.scopes.last_mut(), self.reverse.last_mut()) {
            s.insert(a.to_string(), b.to_string());
            r.insert(b.to_string(), a.to_string());
        }
    }

    fn names_match(&self, a: &str, b: &str) -> bool {
        if !self.alpha {
            return a == b;
        }
        for (s, r) in self.scopes.iter().rev().zip(self.reverse.iter().rev()) {
            match (s.get(a), r.get(b)) {
                (Some(mapped), _) => return mapped == b,
                (None, Some(_)) => return false, // b is bound, a is not
                (None, None) => continue,
            }
        }
        a == b
    }
}

pub fn structural_eq(a: &Program, b: &Program) -> bool {
    program_eq(a, b, false)
}

/// Equality modulo renaming of parameters, locals and loop variables.
pub fn alpha_eq(a: &Program, b: &Program) -> bool {
    program_eq(a, b, true)
}

fn program_eq(a: &Program, b: &Program, alpha: bool) -> bool {
    if a.globals.len() != b.globals.len() || a.functions.len() != b.functions.len() {
        return false;
    }
    let mut ren = Renaming::new(alpha);
    for (ga, gb) in a.globals.iter().zip(&b.globals) {
        if ga.ty != gb.ty || ga.name != gb.name || !expr_eq(&ga.init, &gb.init, &mut ren) {
            return false;
        }
    }
    a.functions.iter().zip(&b.functions).all(|(fa, fb)| fn_eq(fa, fb, &mut ren))
}

fn fn_eq(a: &FunctionDecl, b: &FunctionDecl, ren: &mut Renaming) -> bool {
    if a.ret != b.ret || a.name != b.name || a.params.len() != b.params.len() {
        return false;
    }
    ren.push();
    for (pa, pb) in a.params.iter().zip(&b.params) {
        if pa.ty != pb.ty {
            ren.pop();
            return false;
        }
        ren.bind(&pa.name, &pb.name);
    }
    let ok = block_eq(&a.body, &b.body, ren);
    ren.pop();
    ok
}

fn block_eq(a: &Block, b: &Block, ren: &mut Renaming) -> bool {
    if a.stmts.len() != b.stmts.len() {
        return false;
    }
    ren.push();
    let ok = a.stmts.iter().zip(&b.stmts).all(|(sa, sb)| stmt_eq(sa, sb, ren));
    ren.pop();
    ok
}

fn stmt_eq(a: &Stmt, b: &Stmt, ren: &mut Renaming) -> bool {
    use StmtKind::*;
    match (&a.kind, &b.kind) {
        (VarDecl { decls: da }, VarDecl { decls: db }) => {
            if da.len() != db.len() {
                return false;
            }
            for (la, lb) in da.iter().zip(db) {
                if la.ty != lb.ty {
                    return false;
                }
                match (&la.graph, &lb.graph) {
                    (Some(ga), Some(gb)) if ren.names_match(ga, gb) => {}
                    (None, None) => {}
                    _ => return false,
                }
                match (&la.init, &lb.init) {
                    (Some(ia), Some(ib)) if expr_eq(ia, ib, ren) => {}
                    (None, None) => {}
                    _ => return false,
                }
                // The declared name binds in the current (block) scope.
                ren.bind(&la.name, &lb.name);
            }
            true
        }
        (Assign { target: ta, value: va }, Assign { target: tb, value: vb }) => {
            expr_eq(ta, tb, ren) && expr_eq(va, vb, ren)
        }
        (
            If { cond: ca, then_blk: ta, else_blk: ea },
            If { cond: cb, then_blk: tb, else_blk: eb },
        ) => {
            expr_eq(ca, cb, ren)
                && block_eq(ta, tb, ren)
                && match (ea, eb) {
                    (Some(x), Some(y)) => block_eq(x, y, ren),
                    (None, None) => true,
                    _ => false,
                }
        }
        (While { cond: ca, body: ba }, While { cond: cb, body: bb }) => {
            expr_eq(ca, cb, ren) && block_eq(ba, bb, ren)
        }
        (Break, Break) => true,
        (Return { value: va }, Return { value: vb }) => match (va, vb) {
            (Some(x), Some(y)) => expr_eq(x, y, ren),
            (None, None) => true,
            _ => false,
        },
        (Expr { expr: ea }, Expr { expr: eb }) => expr_eq(ea, eb, ren),
        (Foreach(fa), Foreach(fb)) => {
            if fa.iter != fb.iter || !expr_eq(&fa.subject, &fb.subject, ren) {
                return false;
            }
            ren.push();
            ren.bind(&fa.var, &fb.var);
            let ok = match (&fa.filter, &fb.filter) {
                (Some(x), Some(y)) => expr_eq(x, y, ren),
                (None, None) => true,
                _ => false,
            } && block_eq(&fa.body, &fb.body, ren);
            ren.pop();
            ok
        }
        (
            Single { targets: ta, then_blk: tha, else_blk: ea },
            Single { targets: tb, then_blk: thb, else_blk: eb },
        ) => {
            ta.len() == tb.len()
                && ta.iter().zip(tb).all(|(x, y)| expr_eq(x, y, ren))
                && block_eq(tha, thb, ren)
                && match (ea, eb) {
                    (Some(x), Some(y)) => block_eq(x, y, ren),
                    (None, None) => true,
                    _ => false,
                }
        }
        (ParallelSections { sections: sa }, ParallelSections { sections: sb }) => {
            sa.len() == sb.len() && sa.iter().zip(sb).all(|(x, y)| block_eq(x, y, ren))
        }
        _ => false,
    }
}

fn expr_eq(a: &Expr, b: &Expr, ren: &mut Renaming) -> bool {
    use ExprKind::*;
    match (&a.kind, &b.kind) {
        (Int(x), Int(y)) => x == y,
        (Float(x), Float(y)) => x.to_bits() == y.to_bits(),
        (Bool(x), Bool(y)) => x == y,
        (MaxInt, MaxInt) => true,
        (Var(x), Var(y)) => ren.names_match(x, y),
        (Field { base: ba, name: na }, Field { base: bb, name: nb }) => {
            na == nb && expr_eq(ba, bb, ren)
        }
        (Index { base: ba, idx: ia }, Index { base: bb, idx: ib }) => {
            expr_eq(ba, bb, ren) && expr_eq(ia, ib, ren)
        }
        (Call { name: na, args: aa }, Call { name: nb, args: ab }) => {
            na == nb && aa.len() == ab.len() && aa.iter().zip(ab).all(|(x, y)| expr_eq(x, y, ren))
        }
        (Method { base: ba, name: na, args: aa }, Method { base: bb, name: nb, args: ab }) => {
            na == nb
                && expr_eq(ba, bb, ren)
                && aa.len() == ab.len()
                && aa.iter().zip(ab).all(|(x, y)| expr_eq(x, y, ren))
        }
        (
            AddProperty { graph: ga, elem: ea, prop: pa, ty: ta },
            AddProperty { graph: gb, elem: eb, prop: pb, ty: tb },
        ) => ea == eb && pa == pb && ta == tb && expr_eq(ga, gb, ren),
        (Unary { op: oa, expr: ea }, Unary { op: ob, expr: eb }) => {
            oa == ob && expr_eq(ea, eb, ren)
        }
        (Binary { op: oa, lhs: la, rhs: ra }, Binary { op: ob, lhs: lb, rhs: rb }) => {
            oa == ob && expr_eq(la, lb, ren) && expr_eq(ra, rb, ren)
        }
        _ => false,
    }
}

/// Walk all statements of a block in source order, including nested ones.
pub fn visit_stmts<'a>(block: &'a Block, f: &mut dyn FnMut(&'a Stmt)) {
    for s in &block.stmts {
        f(s);
        match &s.kind {
            StmtKind::If { then_blk, else_blk, .. } => {
                visit_stmts(then_blk, f);
                if let Some(e) = else_blk {
                    visit_stmts(e, f);
                }
            }
            StmtKind::While { body, .. } => visit_stmts(body, f),
            StmtKind::Foreach(fe) => visit_stmts(&fe.body, f),
            StmtKind::Single { then_blk, else_blk, .. } => {
                visit_stmts(then_blk, f);
                if let Some(e) = else_blk {
                    visit_stmts(e, f);
                }
            }
            StmtKind::ParallelSections { sections } => {
                for sec in sections {
                    visit_stmts(sec, f);
                }
            }
            _ => {}
        }
    }
}
