//! Host control-flow graph and barrier elimination.
//!
//! The CFG covers main, where kernels are launched. Every simple host
//! statement is one node; branch and loop statements contribute a
//! header node holding only the condition reads, with their bodies as
//! separate chains; structured joins are synthetic nodes with empty
//! access sets. Launch nodes carry the callee's access set substituted
//! to main's names plus the filter and argument reads.
//!
//! Barrier marking walks the graph from the root carrying the most
//! recent unsynchronised launch. A statement that conflicts with that
//! launch (reads its writes, writes its reads, or writes its writes)
//! forces a barrier after it. A second launch without a conflict stays
//! concurrent with the first and inherits its sets, so later conflicts
//! are still attributed correctly. Nodes with several forward
//! predecessors wait until every one of them has been processed;
//! loop back edges neither count nor re-enter.

use crate::ast::*;
use crate::sema::{self, Access, AccessSet, SymbolTable};
use std::collections::BTreeMap;
use std::fmt::Write as _;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum NodeKind {
    Entry,
    Exit,
    /// A straight-line host statement.
    Stmt(StmtId),
    /// A parallel loop whose body is one user-function call.
    Launch { sid: StmtId, kernel: String },
    IfHeader(StmtId),
    WhileHeader(StmtId),
    SectionsHeader(StmtId),
    Join,
}

impl NodeKind {
    fn label(&self) -> String {
        match self {
            NodeKind::Entry => "entry".into(),
            NodeKind::Exit => "exit".into(),
            NodeKind::Stmt(_) => "stmt".into(),
            NodeKind::Launch { kernel, .. } => format!("launch({kernel})"),
            NodeKind::IfHeader(_) => "if".into(),
            NodeKind::WhileHeader(_) => "while".into(),
            NodeKind::SectionsHeader(_) => "sections".into(),
            NodeKind::Join => "join".into(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Node {
    pub kind: NodeKind,
    pub succs: Vec<usize>,
    pub preds: Vec<usize>,
    /// Predecessors that are not loop back edges; the marking pass
    /// waits for exactly this many arrivals before moving on.
    pub pred_count: usize,
    pub rset: Access,
    pub wset: Access,
    pub barrier: bool,
    visited: usize,
}

#[derive(Debug)]
pub struct HostCfg {
    pub nodes: Vec<Node>,
    pub root: usize,
}

impl HostCfg {
    /// Build the CFG of main and run barrier marking.
    pub fn analyze(program: &Program, table: &SymbolTable) -> HostCfg {
        let main = program.main().expect("resolved program has a main");
        let mut b = Builder { program, table, main, nodes: Vec::new() };
        let root = b.node(NodeKind::Entry);
        let exit = b.node(NodeKind::Exit);
        let tail = b.chain(&main.body, root, &mut Ctx { breaks: Vec::new(), exit });
        if let Some(t) = tail {
            b.connect(t, exit);
        }
        let mut cfg = HostCfg { nodes: b.nodes, root };
        cfg.count_forward_preds();
        cfg.parallelize(root, None);
        cfg
    }

    /// Barrier flag for each launch, keyed by the foreach statement id.
    pub fn launch_flags(&self) -> BTreeMap<StmtId, bool> {
        self.nodes
            .iter()
            .filter_map(|n| match &n.kind {
                NodeKind::Launch { sid, .. } => Some((*sid, n.barrier)),
                _ => None,
            })
            .collect()
    }

    /// Launches grouped for concurrent execution: a run of barrier-free
    /// launches merges with the launch that finally carries the barrier.
    pub fn groups(&self) -> Vec<Vec<StmtId>> {
        let mut groups = Vec::new();
        let mut current = Vec::new();
        for n in &self.nodes {
            if let NodeKind::Launch { sid, .. } = &n.kind {
                current.push(*sid);
                if n.barrier {
                    groups.push(std::mem::take(&mut current));
                }
            }
        }
        if !current.is_empty() {
            groups.push(current);
        }
        groups
    }

    /// One line per node: id, kind, barrier, forward predecessor count,
    /// successors, then the read and write sets.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for (i, n) in self.nodes.iter().enumerate() {
            let succs = n
                .succs
                .iter()
                .map(|s| s.to_string())
                .collect::<Vec<_>>()
                .join(",");
            let _ = writeln!(
                out,
                "{i} {} barrier={} preds={} -> {} R{} W{}",
                n.kind.label(),
                if n.barrier { 1 } else { 0 },
                n.pred_count,
                if succs.is_empty() { "-".to_string() } else { succs },
                n.rset,
                n.wset,
            );
        }
        out
    }

    /// Forward predecessor counts: a DFS marks edges into a node still
    /// on the stack as back edges, which the gate must not wait for.
    fn count_forward_preds(&mut self) {
        let n = self.nodes.len();
        let mut state = vec![0u8; n]; // 0 unvisited, 1 on stack, 2 done
        let mut back = vec![Vec::new(); n]; // back[v] = preds via back edges
        // Iterative DFS keeping an explicit stack of (node, next succ).
        let mut stack = vec![(self.root, 0usize)];
        state[self.root] = 1;
        while let Some((u, i)) = stack.pop() {
            if i < self.nodes[u].succs.len() {
                stack.push((u, i + 1));
                let v = self.nodes[u].succs[i];
                match state[v] {
                    0 => {
                        state[v] = 1;
                        stack.push((v, 0));
                    }
                    1 => back[v].push(u),
                    _ => {}
                }
            } else {
                state[u] = 2;
            }
        }
        for v in 0..n {
            let backcount = self.nodes[v]
                .preds
                .iter()
                .filter(|p| back[v].contains(p))
                .count();
            self.nodes[v].pred_count = self.nodes[v].preds.len() - backcount;
        }
    }

    fn parallelize(&mut self, node: usize, mut knode: Option<usize>) {
        let is_launch = matches!(self.nodes[node].kind, NodeKind::Launch { .. });
        if is_launch {
            if let Some(k) = knode {
                if self.conflicts(node, k) {
                    self.nodes[k].barrier = true;
                } else {
                    let krset = self.nodes[k].rset.clone();
                    let kwset = self.nodes[k].wset.clone();
                    self.nodes[node].rset.union_with(&krset);
                    self.nodes[node].wset.union_with(&kwset);
                }
            }
            knode = Some(node);
        } else if let Some(k) = knode {
            if self.conflicts(node, k) {
                self.nodes[k].barrier = true;
                knode = None;
            }
        }
        self.nodes[node].visited += 1;
        let gate = {
            let n = &self.nodes[node];
            n.pred_count == 0 || n.visited == n.pred_count
        };
        if gate {
            for s in self.nodes[node].succs.clone() {
                self.parallelize(s, knode);
            }
        }
    }

    fn conflicts(&self, node: usize, k: usize) -> bool {
        let n = &self.nodes[node];
        let kn = &self.nodes[k];
        n.rset.intersects(&kn.wset)
            || n.wset.intersects(&kn.rset)
            || n.wset.intersects(&kn.wset)
    }
}

struct Ctx {
    /// Break targets of enclosing loops, innermost last.
    breaks: Vec<usize>,
    exit: usize,
}

struct Builder<'a> {
    program: &'a Program,
    table: &'a SymbolTable,
    main: &'a FunctionDecl,
    nodes: Vec<Node>,
}

impl<'a> Builder<'a> {
    fn node(&mut self, kind: NodeKind) -> usize {
        self.nodes.push(Node {
            kind,
            succs: Vec::new(),
            preds: Vec::new(),
            pred_count: 0,
            rset: Access::default(),
            wset: Access::default(),
            barrier: false,
            visited: 0,
        });
        self.nodes.len() - 1
    }

    fn node_with_sets(&mut self, kind: NodeKind, acc: AccessSet) -> usize {
        let id = self.node(kind);
        self.nodes[id].rset = acc.reads;
        self.nodes[id].wset = acc.writes;
        id
    }

    fn connect(&mut self, from: usize, to: usize) {
        self.nodes[from].succs.push(to);
        self.nodes[to].preds.push(from);
    }

    /// Append the chain for a block after `entry`; returns the last open
    /// node, or None when every path left through break or return.
    fn chain(&mut self, b: &Block, entry: usize, ctx: &mut Ctx) -> Option<usize> {
        let mut cur = Some(entry);
        for s in &b.stmts {
            let Some(prev) = cur else { break };
            cur = self.stmt(s, prev, ctx);
        }
        cur
    }

    fn stmt(&mut self, s: &Stmt, prev: usize, ctx: &mut Ctx) -> Option<usize> {
        match &s.kind {
            StmtKind::Break => {
                let target = *ctx.breaks.last().expect("break inside a loop");
                self.connect(prev, target);
                None
            }
            StmtKind::Return { .. } => {
                let acc = sema::compute_stmt_rw_sets(self.program, self.table, self.main, s);
                let id = self.node_with_sets(NodeKind::Stmt(s.sid), acc);
                self.connect(prev, id);
                self.connect(id, ctx.exit);
                None
            }
            StmtKind::If { then_blk, else_blk, .. } => {
                let acc = sema::compute_cond_rw_sets(self.program, self.table, self.main, s);
                let header = self.node_with_sets(NodeKind::IfHeader(s.sid), acc);
                self.connect(prev, header);
                let join = self.node(NodeKind::Join);
                if let Some(t) = self.chain(then_blk, header, ctx) {
                    self.connect(t, join);
                }
                match else_blk {
                    Some(e) => {
                        if let Some(t) = self.chain(e, header, ctx) {
                            self.connect(t, join);
                        }
                    }
                    None => self.connect(header, join),
                }
                if self.nodes[join].preds.is_empty() {
                    // Both branches broke out; nothing continues here.
                    return None;
                }
                Some(join)
            }
            StmtKind::While { body, .. } => {
                let acc = sema::compute_cond_rw_sets(self.program, self.table, self.main, s);
                let header = self.node_with_sets(NodeKind::WhileHeader(s.sid), acc);
                self.connect(prev, header);
                let after = self.node(NodeKind::Join);
                self.connect(header, after);
                ctx.breaks.push(after);
                if let Some(t) = self.chain(body, header, ctx) {
                    self.connect(t, header); // back edge
                }
                ctx.breaks.pop();
                Some(after)
            }
            StmtKind::ParallelSections { sections } => {
                let header = self.node(NodeKind::SectionsHeader(s.sid));
                self.connect(prev, header);
                let join = self.node(NodeKind::Join);
                for sec in sections {
                    match self.chain(sec, header, ctx) {
                        Some(t) => self.connect(t, join),
                        None => {}
                    }
                }
                if self.nodes[join].preds.is_empty() {
                    return None;
                }
                Some(join)
            }
            StmtKind::Foreach(fe) => {
                let acc = sema::compute_stmt_rw_sets(self.program, self.table, self.main, s);
                let kind = match sema::launch_call(fe) {
                    Some((callee, _)) if self.program.function(callee).is_some() => {
                        NodeKind::Launch { sid: s.sid, kernel: callee.to_string() }
                    }
                    _ => NodeKind::Stmt(s.sid),
                };
                let id = self.node_with_sets(kind, acc);
                self.connect(prev, id);
                Some(id)
            }
            _ => {
                let acc = sema::compute_stmt_rw_sets(self.program, self.table, self.main, s);
                let id = self.node_with_sets(NodeKind::Stmt(s.sid), acc);
                self.connect(prev, id);
                Some(id)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parser::parse;

    fn analyzed(name: &str) -> (Program, HostCfg) {
        let src =
            std::fs::read_to_string(format!("{}/corpus/{}", env!("CARGO_MANIFEST_DIR"), name))
                .unwrap();
        let p = parse(&src).unwrap();
        let table = sema::resolve(&p).unwrap();
        let cfg = HostCfg::analyze(&p, &table);
        (p, cfg)
    }

    fn flag_of(cfg: &HostCfg, kernel: &str) -> bool {
        cfg.nodes
            .iter()
            .find_map(|n| match &n.kind {
                NodeKind::Launch { kernel: k, .. } if k == kernel => Some(n.barrier),
                _ => None,
            })
            .unwrap_or_else(|| panic!("no launch of {kernel}"))
    }

    #[test]
    fn sssp_launch_needs_a_barrier() {
        // The convergence test reads the flag the kernel writes, so the
        // launch cannot run past it.
        let (_, cfg) = analyzed("sssp.fal");
        assert!(flag_of(&cfg, "relaxgraph"));
        assert_eq!(cfg.groups().len(), 1);
    }

    #[test]
    fn bfs_launch_needs_a_barrier() {
        let (_, cfg) = analyzed("bfs.fal");
        assert!(flag_of(&cfg, "BFS"));
    }

    #[test]
    fn independent_kernels_share_one_group() {
        // The two kernels touch disjoint properties and flags; the first
        // runs without a barrier and both join before the convergence
        // test, which reads both flags.
        let (_, cfg) = analyzed("bfs_sssp.fal");
        assert!(!flag_of(&cfg, "BFS"));
        assert!(flag_of(&cfg, "relaxgraph"));
        let groups = cfg.groups();
        assert_eq!(groups.len(), 1, "{}", cfg.dump());
        assert_eq!(groups[0].len(), 2);
    }

    #[test]
    fn dependent_kernels_split_groups() {
        // Same two kernels, but the second reads the property the first
        // writes; the first must finish before the second starts.
        let src = "
int c1 = 0, c2 = 0;
void k1(Point p, Graph graph) {
    foreach (t In p.outnbrs) MIN(t.a, p.a + 1, c1);
}
void k2(Point p, Graph graph) {
    foreach (t In p.outnbrs) MIN(t.b, p.a + 1, c2);
}
int main() {
    Graph graph;
    graph.addPointProperty(a, int);
    graph.addPointProperty(b, int);
    graph.read(argv[1]);
    while (1) {
        c1 = 0;
        c2 = 0;
        foreach (p In graph.points) k1(p, graph);
        foreach (p In graph.points) k2(p, graph);
        if (c1 == 0 && c2 == 0) break;
    }
}";
        let p = parse(src).unwrap();
        let table = sema::resolve(&p).unwrap();
        let cfg = HostCfg::analyze(&p, &table);
        assert!(flag_of(&cfg, "k1"), "{}", cfg.dump());
        assert_eq!(cfg.groups().len(), 2, "{}", cfg.dump());
    }

    #[test]
    fn host_write_between_launches_forces_barrier() {
        // lev++ writes a global the launch read as an argument.
        let src = "
int c = 0, lev = 0;
void k(Point p, Graph graph, int lev) {
    foreach (t In p.outnbrs) MIN(t.a, lev, c);
}
int main() {
    Graph graph;
    graph.addPointProperty(a, int);
    graph.read(argv[1]);
    while (1) {
        c = 0;
        foreach (p In graph.points) k(p, graph, lev);
        lev = lev + 1;
        if (c == 0) break;
    }
}";
        let p = parse(src).unwrap();
        let table = sema::resolve(&p).unwrap();
        let cfg = HostCfg::analyze(&p, &table);
        assert!(flag_of(&cfg, "k"), "{}", cfg.dump());
    }

    #[test]
    fn loop_back_edges_do_not_block_the_walk() {
        let (_, cfg) = analyzed("sssp.fal");
        // The while header has one forward predecessor even though the
        // loop tail also reaches it.
        let header = cfg
            .nodes
            .iter()
            .find(|n| matches!(n.kind, NodeKind::WhileHeader(_)))
            .unwrap();
        assert!(header.preds.len() >= 2);
        assert_eq!(header.pred_count, 1);
        // Every launch was actually visited by the marking pass.
        for n in &cfg.nodes {
            if matches!(n.kind, NodeKind::Launch { .. }) {
                assert!(n.visited > 0);
            }
        }
    }

    #[test]
    fn two_graph_sections_launch_independently() {
        let (_, cfg) = analyzed("cc_two_graphs.fal");
        // Each section has its own convergence loop; both kernels carry
        // their own barrier and end up in separate groups.
        assert!(flag_of(&cfg, "cc1"));
        assert!(flag_of(&cfg, "cc2"));
        assert_eq!(cfg.groups().len(), 2);
    }

    #[test]
    fn dump_is_deterministic_and_labelled() {
        let (_, cfg) = analyzed("bfs_sssp.fal");
        let d1 = cfg.dump();
        assert!(d1.contains("launch(BFS) barrier=0"), "{d1}");
        assert!(d1.contains("launch(relaxgraph) barrier=1"), "{d1}");
        assert!(d1.contains("while"), "{d1}");
        let (_, cfg2) = analyzed("bfs_sssp.fal");
        assert_eq!(d1, cfg2.dump());
    }
}
