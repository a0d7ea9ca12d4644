//! Runtime state: host storage, simulated-device copies, union-find
//! sets and per-element locks.
//!
//! Everything workers can touch during a launch sits behind atomics or
//! locks, so `HostState` is shared by plain reference across the worker
//! pool. Host-side mutations between launches (loading a graph,
//! declaring a property, seeding a collection) go through `OnceLock`
//! and `Mutex` cells rather than `&mut`, keeping one type for both
//! phases.

use super::{everr, RuntimeError};
use crate::ast::ElemKind;
use crate::graph::GraphStore;
use crate::lower::{ObjId, PlanSymbols};
use std::collections::BTreeMap;
use std::sync::atomic::{AtomicI64, Ordering};
use std::sync::{Arc, Mutex, OnceLock};

/// A runtime value. Points and edges remember which graph they belong
/// to so property lookups resolve against the right arrays.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Value {
    Int(i64),
    Float(f64),
    Point { idx: i64, graph: usize },
    Edge { idx: usize, graph: usize },
    Graph(usize),
    SetRef(usize),
    CollRef(usize),
}

impl Value {
    /// Integer view; a point coerces to its index.
    pub fn as_int(&self) -> Result<i64, RuntimeError> {
        match self {
            Value::Int(v) => Ok(*v),
            Value::Point { idx, .. } => Ok(*idx),
            Value::Edge { idx, .. } => Ok(*idx as i64),
            other => Err(everr(format!("expected an integer, found {other:?}"))),
        }
    }

    pub fn truthy(&self) -> Result<bool, RuntimeError> {
        Ok(self.as_int()? != 0)
    }

    pub fn as_point(&self) -> Result<(usize, i64), RuntimeError> {
        match self {
            Value::Point { idx, graph } => Ok((*graph, *idx)),
            other => Err(everr(format!("expected a point, found {other:?}"))),
        }
    }
}

/// One declared property: present as a name immediately, backed by an
/// array once the owning graph has been read (declaration may precede
/// the read). The element kind decides the array length, one slot per
/// point or per edge.
pub enum PropState {
    Declared(ElemKind),
    Ready(Arc<Vec<AtomicI64>>),
}

pub struct GraphSlot {
    pub name: String,
    pub store: OnceLock<Arc<GraphStore>>,
    pub props: Mutex<BTreeMap<String, PropState>>,
    /// Per-point lock words for `single`; -1 means free.
    pub locks: OnceLock<Arc<Vec<AtomicI64>>>,
}

pub struct HostState {
    pub graphs: Vec<GraphSlot>,
    pub graph_index: BTreeMap<String, usize>,
    pub globals: Vec<AtomicI64>,
    pub global_names: Vec<String>,
    pub global_index: BTreeMap<String, usize>,
    pub sets: Vec<OnceLock<SetSim>>,
    pub set_index: BTreeMap<String, usize>,
    /// Worklist bags as (graph, point) pairs. Host-side access only;
    /// kernels push through their worker scratch.
    pub colls: Vec<Mutex<Vec<(usize, i64)>>>,
    pub coll_index: BTreeMap<String, usize>,
    /// Graph paths supplied on the command line; argv[k] in the
    /// program selects the k-th.
    pub argv: Vec<String>,
    /// Collapse duplicate (src, dst) pairs to their minimum weight
    /// when a graph file is read.
    pub dedup_edges: bool,
}

impl HostState {
    pub fn init(symbols: &PlanSymbols, argv: &[String], dedup_edges: bool) -> HostState {
        let mut st = HostState {
            graphs: Vec::new(),
            graph_index: BTreeMap::new(),
            globals: Vec::new(),
            global_names: Vec::new(),
            global_index: BTreeMap::new(),
            sets: Vec::new(),
            set_index: BTreeMap::new(),
            colls: Vec::new(),
            coll_index: BTreeMap::new(),
            argv: argv.to_vec(),
            dedup_edges,
        };
        for g in &symbols.graphs {
            st.graph_index.insert(g.clone(), st.graphs.len());
            st.graphs.push(GraphSlot {
                name: g.clone(),
                store: OnceLock::new(),
                props: Mutex::new(BTreeMap::new()),
                locks: OnceLock::new(),
            });
        }
        for (name, init) in &symbols.globals {
            st.global_index.insert(name.clone(), st.globals.len());
            st.global_names.push(name.clone());
            st.globals.push(AtomicI64::new(*init));
        }
        for (name, _) in &symbols.sets {
            st.set_index.insert(name.clone(), st.sets.len());
            st.sets.push(OnceLock::new());
        }
        for name in &symbols.colls {
            st.coll_index.insert(name.clone(), st.colls.len());
            st.colls.push(Mutex::new(Vec::new()));
        }
        st
    }

    pub fn store(&self, graph: usize) -> Result<&Arc<GraphStore>, RuntimeError> {
        self.graphs[graph]
            .store
            .get()
            .ok_or_else(|| everr(format!("graph {} has not been read", self.graphs[graph].name)))
    }

    /// Install a loaded graph: topology, lock words, and arrays for
    /// every property declared so far.
    pub fn attach_store(&self, graph: usize, store: GraphStore) -> Result<(), RuntimeError> {
        let slot = &self.graphs[graph];
        let n = store.num_points();
        let m = store.num_edges();
        if slot.store.set(Arc::new(store)).is_err() {
            return Err(everr(format!("graph {} read twice", slot.name)));
        }
        let locks: Vec<AtomicI64> = (0..n).map(|_| AtomicI64::new(-1)).collect();
        let _ = slot.locks.set(Arc::new(locks));
        let mut props = slot.props.lock().unwrap();
        for state in props.values_mut() {
            if let PropState::Declared(kind) = state {
                let len = if *kind == ElemKind::Point { n } else { m };
                *state = PropState::Ready(new_array(len));
            }
        }
        Ok(())
    }

    pub fn declare_prop(&self, graph: usize, name: &str, kind: ElemKind) {
        let slot = &self.graphs[graph];
        let mut props = slot.props.lock().unwrap();
        let state = match slot.store.get() {
            Some(store) => {
                let len =
                    if kind == ElemKind::Point { store.num_points() } else { store.num_edges() };
                PropState::Ready(new_array(len))
            }
            None => PropState::Declared(kind),
        };
        props.entry(name.to_string()).or_insert(state);
    }

    pub fn host_prop(&self, graph: usize, name: &str) -> Result<Arc<Vec<AtomicI64>>, RuntimeError> {
        let slot = &self.graphs[graph];
        let props = slot.props.lock().unwrap();
        match props.get(name) {
            Some(PropState::Ready(arr)) => Ok(arr.clone()),
            Some(PropState::Declared(_)) => Err(everr(format!(
                "property {}.{name} used before {} was read",
                slot.name, slot.name
            ))),
            None => Err(everr(format!("property {}.{name} was never declared", slot.name))),
        }
    }

    pub fn locks(&self, graph: usize) -> Result<&Arc<Vec<AtomicI64>>, RuntimeError> {
        self.graphs[graph]
            .locks
            .get()
            .ok_or_else(|| everr(format!("graph {} has not been read", self.graphs[graph].name)))
    }

    /// Largest loaded vertex count; sizes the default iteration cap.
    pub fn max_n(&self) -> usize {
        self.graphs
            .iter()
            .filter_map(|g| g.store.get())
            .map(|s| s.num_points())
            .max()
            .unwrap_or(0)
    }
}

fn new_array(n: usize) -> Arc<Vec<AtomicI64>> {
    Arc::new((0..n).map(|_| AtomicI64::new(0)).collect())
}

/// Private storage of one simulated device. Transfers copy real data
/// in and out, so a plan that forgets one produces wrong numbers.
pub struct DeviceSim {
    pub props: BTreeMap<(usize, String), Arc<Vec<AtomicI64>>>,
    pub globals: Vec<AtomicI64>,
    /// Graphs whose topology has arrived.
    pub topo: std::collections::BTreeSet<usize>,
    /// Objects an Alloc step has reserved; touching anything else on
    /// this device is a plan bug.
    pub allocated: std::collections::BTreeSet<ObjId>,
    pub clock: f64,
}

impl DeviceSim {
    pub fn new(globals: usize) -> DeviceSim {
        DeviceSim {
            props: BTreeMap::new(),
            globals: (0..globals).map(|_| AtomicI64::new(0)).collect(),
            topo: std::collections::BTreeSet::new(),
            allocated: std::collections::BTreeSet::new(),
            clock: 0.0,
        }
    }

    /// Array for a property copy, created on first touch. Allocation
    /// happens up front but the length is only known once the graph
    /// has been read, so the backing store appears lazily.
    pub fn ensure_prop(&mut self, graph: usize, name: &str, n: usize) -> Arc<Vec<AtomicI64>> {
        self.props
            .entry((graph, name.to_string()))
            .or_insert_with(|| new_array(n))
            .clone()
    }
}

/// Concurrent union-find over the points of one graph: lock-free finds
/// with path halving, unions serialized per root pair through internal
/// try-locks, union by rank.
pub struct SetSim {
    pub graph: usize,
    parent: Vec<AtomicI64>,
    rank: Vec<AtomicI64>,
    lock: Vec<AtomicI64>,
}

impl SetSim {
    pub fn new(graph: usize, n: usize) -> SetSim {
        SetSim {
            graph,
            parent: (0..n).map(|i| AtomicI64::new(i as i64)).collect(),
            rank: (0..n).map(|_| AtomicI64::new(0)).collect(),
            lock: (0..n).map(|_| AtomicI64::new(-1)).collect(),
        }
    }

    pub fn find(&self, x: i64) -> Result<i64, RuntimeError> {
        let n = self.parent.len() as i64;
        if x < 0 || x >= n {
            return Err(everr(format!("set element {x} outside 0..{n}")));
        }
        let mut x = x;
        loop {
            let p = self.parent[x as usize].load(Ordering::SeqCst);
            if p == x {
                return Ok(x);
            }
            let gp = self.parent[p as usize].load(Ordering::SeqCst);
            if gp != p {
                // Path halving: hop over the parent. A failed exchange
                // means someone else already shortened it.
                let _ = self.parent[x as usize].compare_exchange(
                    p,
                    gp,
                    Ordering::SeqCst,
                    Ordering::SeqCst,
                );
            }
            x = p;
        }
    }

    /// Union by rank; returns 1 when two components merged, 0 when the
    /// elements were already together.
    pub fn union(&self, a: i64, b: i64, owner: i64) -> Result<i64, RuntimeError> {
        loop {
            let ra = self.find(a)?;
            let rb = self.find(b)?;
            if ra == rb {
                return Ok(0);
            }
            let (lo, hi) = (ra.min(rb), ra.max(rb));
            if !self.try_lock(lo, owner) {
                std::hint::spin_loop();
                continue;
            }
            if !self.try_lock(hi, owner) {
                self.unlock(lo);
                std::hint::spin_loop();
                continue;
            }
            // Re-check under the locks; the roots may have moved.
            let still = self.parent[ra as usize].load(Ordering::SeqCst) == ra
                && self.parent[rb as usize].load(Ordering::SeqCst) == rb;
            if !still {
                self.unlock(hi);
                self.unlock(lo);
                continue;
            }
            let ka = self.rank[ra as usize].load(Ordering::SeqCst);
            let kb = self.rank[rb as usize].load(Ordering::SeqCst);
            let (child, root) = if ka < kb { (ra, rb) } else { (rb, ra) };
            self.parent[child as usize].store(root, Ordering::SeqCst);
            if ka == kb {
                self.rank[root as usize].fetch_add(1, Ordering::SeqCst);
            }
            self.unlock(hi);
            self.unlock(lo);
            return Ok(1);
        }
    }

    fn try_lock(&self, x: i64, owner: i64) -> bool {
        self.lock[x as usize]
            .compare_exchange(-1, owner, Ordering::SeqCst, Ordering::SeqCst)
            .is_ok()
    }

    fn unlock(&self, x: i64) {
        self.lock[x as usize].store(-1, Ordering::SeqCst);
    }
}

/// One lock to take: a graph's lock array plus the point index in it.
pub type LockSlot<'a> = (&'a [AtomicI64], usize);

/// Try to take every slot (caller deduplicates and orders them by
/// (graph, point) so competing singles cannot deadlock); on any failure
/// release what was taken and report false.
pub fn single_try(slots: &[LockSlot], owner: i64) -> bool {
    for (i, &(locks, e)) in slots.iter().enumerate() {
        let ok = locks[e]
            .compare_exchange(-1, owner, Ordering::SeqCst, Ordering::SeqCst)
            .is_ok();
        if !ok {
            single_release(&slots[..i]);
            return false;
        }
    }
    true
}

pub fn single_release(slots: &[LockSlot]) {
    for &(locks, e) in slots {
        locks[e].store(-1, Ordering::SeqCst);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::Ordering;

    #[test]
    fn fresh_union_merges_and_repeat_does_not() {
        let s = SetSim::new(0, 4);
        assert_eq!(s.union(0, 1, 7).unwrap(), 1);
        assert_eq!(s.find(0).unwrap(), s.find(1).unwrap());
        assert_eq!(s.union(0, 1, 7).unwrap(), 0);
        assert_eq!(s.union(1, 0, 7).unwrap(), 0);
    }

    #[test]
    fn union_count_equals_components_merged() {
        let s = SetSim::new(0, 6);
        let mut merges = 0;
        for (a, b) in [(0, 1), (1, 2), (3, 4), (4, 5), (0, 5)] {
            merges += s.union(a, b, 1).unwrap();
        }
        // 6 singletons, one component at the end: exactly 5 merges.
        assert_eq!(merges, 5);
        let root = s.find(0).unwrap();
        for x in 1..6 {
            assert_eq!(s.find(x).unwrap(), root);
        }
    }

    #[test]
    fn concurrent_unions_settle_to_one_component() {
        let n = 2000;
        let s = SetSim::new(0, n);
        let merged: i64 = std::thread::scope(|scope| {
            let mut handles = Vec::new();
            for w in 0..4 {
                let s = &s;
                handles.push(scope.spawn(move || {
                    let mut local = 0;
                    // Interleaved chains; all workers fight over the
                    // same components.
                    for i in (w..n - 1).step_by(4) {
                        local += s.union(i as i64, (i + 1) as i64, w as i64).unwrap();
                    }
                    local
                }));
            }
            handles.into_iter().map(|h| h.join().unwrap()).sum()
        });
        // Exactly n-1 successful merges, no matter the interleaving.
        assert_eq!(merged, (n - 1) as i64);
        let root = s.find(0).unwrap();
        for x in 0..n {
            assert_eq!(s.find(x as i64).unwrap(), root);
        }
    }

    #[test]
    fn single_try_is_all_or_nothing() {
        let locks: Vec<AtomicI64> = (0..10).map(|_| AtomicI64::new(-1)).collect();
        locks[7].store(99, Ordering::SeqCst);
        assert!(!single_try(&[(&locks, 3), (&locks, 7)], 1));
        // 3 must not be held after the failed attempt.
        assert_eq!(locks[3].load(Ordering::SeqCst), -1);
        let just3 = [(locks.as_slice(), 3)];
        assert!(single_try(&just3, 1));
        assert_eq!(locks[3].load(Ordering::SeqCst), 1);
        single_release(&just3);
        assert_eq!(locks[3].load(Ordering::SeqCst), -1);
    }

    #[test]
    fn contended_single_admits_exactly_one() {
        let locks: Vec<AtomicI64> = (0..8).map(|_| AtomicI64::new(-1)).collect();
        let wins: usize = std::thread::scope(|scope| {
            let mut handles = Vec::new();
            for w in 0..4 {
                let locks = &locks;
                handles.push(scope.spawn(move || {
                    usize::from(single_try(&[(locks.as_slice(), 5)], w as i64))
                }));
            }
            handles.into_iter().map(|h| h.join().unwrap()).sum()
        });
        assert_eq!(wins, 1);
    }

    #[test]
    fn point_coerces_to_its_index() {
        let v = Value::Point { idx: 42, graph: 0 };
        assert_eq!(v.as_int().unwrap(), 42);
        assert!(v.truthy().unwrap());
        assert_eq!(v.as_point().unwrap(), (0, 42));
        assert!(Value::Int(3).as_point().is_err());
    }
}
