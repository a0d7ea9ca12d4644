//! Plan execution: step walk, parallel launches, worklist scheduling,
//! transfers and cost clocks.
//!
//! Launches partition their iteration space into contiguous chunks,
//! one per worker. Each worker owns a scratch that accumulates global
//! writes, reductions, worklist pushes and work counters; scratches
//! merge in worker order when the round ends, so merged results are
//! independent of thread interleaving.
//!
//! Worklist launches drain differently per schedule. FIFO processes
//! the current bag once and leaves the pushes for the next execution,
//! which matches programs that adjust host state (such as a level
//! counter) between drains. Delta-stepping picks the lowest occupied
//! bucket by the key property, processes eligible items to fixpoint
//! with keys re-read every pass, and leaves later buckets in the bag.
//!
//! Clocks: the host clock advances over host statements and barriers;
//! each device has its own clock. A device launch starts at the later
//! of the two clocks; with a barrier the host waits for the device,
//! without one the host runs ahead. Transfers synchronize both sides.
//! Parallel sections fork the host clock per section and join on the
//! maximum, so independent device work overlaps.

use super::interp::{expr_uses_var, Flow, Interp, Scratch, View};
use super::state::{DeviceSim, HostState, Value};
use super::{everr, ExecOptions, ExecResult, RuntimeError, TracedAccess, TransferRec, WlSched};
use crate::ast::{Expr, FunctionDecl, IterKind, StmtKind};
use crate::lower::{
    DeviceSlot, ExecutionPlan, KernelLaunch, LaunchStep, ObjId, Step, TargetKind,
};
use std::collections::{BTreeMap, HashMap};
use std::sync::atomic::{AtomicI64, Ordering};
use std::sync::Arc;

pub fn execute(
    plan: &ExecutionPlan,
    graph_paths: &[String],
    opts: &ExecOptions,
) -> Result<ExecResult, RuntimeError> {
    if opts.threads == 0 {
        return Err(everr("at least one thread is required"));
    }
    if let Some(d) = opts.delta {
        if d <= 0 {
            return Err(RuntimeError::Delta(d));
        }
    }
    let devices = match plan.target.kind {
        TargetKind::HostThreads => 0,
        TargetKind::SimDevice => 1,
        TargetKind::SimMultiDevice { devices } => devices,
    };
    let nglobals = plan.symbols.globals.len();
    let mut ex = Executor {
        plan,
        opts,
        state: HostState::init(&plan.symbols, graph_paths, opts.dedup_edges),
        devices: (0..devices).map(|_| DeviceSim::new(nglobals)).collect(),
        host_clock: 0.0,
        host_env: Vec::new(),
        transfer_log: Vec::new(),
        invocations: 0,
        per_worker_work: BTreeMap::new(),
        bucket_trace: Vec::new(),
        traced: BTreeMap::new(),
    };
    ex.run_steps(&plan.steps)?;
    Ok(ex.finish())
}

struct Executor<'a> {
    plan: &'a ExecutionPlan,
    opts: &'a ExecOptions,
    state: HostState,
    devices: Vec<DeviceSim>,
    host_clock: f64,
    /// main's local variables, threaded through host statements.
    host_env: Vec<HashMap<String, Value>>,
    transfer_log: Vec<TransferRec>,
    invocations: u64,
    per_worker_work: BTreeMap<String, Vec<u64>>,
    bucket_trace: Vec<i64>,
    traced: BTreeMap<String, TracedAccess>,
}

/// Launch argument: evaluated once per launch, or per element when it
/// mentions the loop variable.
enum ArgSlot {
    Pre(Value),
    PerElement(Expr),
}

/// Iteration space of one launch round.
enum Space<'s> {
    Points { graph: usize, n: usize },
    Edges { graph: usize, m: usize },
    List(&'s [(usize, i64)]),
}

impl Space<'_> {
    fn len(&self) -> usize {
        match self {
            Space::Points { n, .. } => *n,
            Space::Edges { m, .. } => *m,
            Space::List(items) => items.len(),
        }
    }
}

/// What a parallel round reports back.
struct RoundOut {
    invocations: u64,
    /// Edges scanned, per worker.
    edge_work: Vec<u64>,
    pushes: Vec<(usize, usize, i64)>,
    trace: Option<TracedAccess>,
}

impl<'a> Executor<'a> {
    /// Fixpoint iteration cap: configured, or ten times the largest
    /// loaded vertex count. Evaluated lazily because graphs load
    /// mid-plan.
    fn cap(&self) -> usize {
        self.opts.iter_cap.unwrap_or_else(|| 10 * self.state.max_n().max(1))
    }

    fn cost(&self) -> crate::lower::CostModel {
        self.plan.target.cost
    }

    fn run_steps(&mut self, steps: &[Step]) -> Result<Flow, RuntimeError> {
        for step in steps {
            match self.run_step(step)? {
                Flow::Normal => {}
                other => return Ok(other),
            }
        }
        Ok(Flow::Normal)
    }

    fn run_step(&mut self, step: &Step) -> Result<Flow, RuntimeError> {
        match step {
            Step::Alloc { dev, obj } => {
                self.devices[*dev].allocated.insert(obj.clone());
                Ok(Flow::Normal)
            }
            Step::Transfer { dev, obj, to_device } => {
                self.run_transfer(*dev, obj, *to_device)?;
                Ok(Flow::Normal)
            }
            Step::Launch(ls) => {
                self.run_launch(ls)?;
                Ok(Flow::Normal)
            }
            Step::Host { stmt, .. } => {
                self.host_clock += self.host_stmt_cost(&stmt.kind);
                let view = View::host(&self.state);
                let mut scratch = Scratch::host();
                let env = std::mem::take(&mut self.host_env);
                let mut it = Interp::with_env(
                    &self.state,
                    &view,
                    &self.plan.kernels,
                    &mut scratch,
                    self.opts.iter_cap.unwrap_or(usize::MAX),
                    env,
                );
                let flow = it.run_stmt(stmt);
                self.host_env = it.into_env();
                flow
            }
            Step::While { cond, body, .. } => {
                let mut iters = 0usize;
                loop {
                    if !self.eval_host(cond)?.truthy()? {
                        return Ok(Flow::Normal);
                    }
                    iters += 1;
                    let cap = self.cap();
                    if iters > cap {
                        return Err(RuntimeError::Divergence { cap });
                    }
                    match self.run_steps(body)? {
                        Flow::Normal => {}
                        Flow::Break => return Ok(Flow::Normal),
                        r @ Flow::Return(_) => return Ok(r),
                    }
                }
            }
            Step::If { cond, then_steps, else_steps, .. } => {
                if self.eval_host(cond)?.truthy()? {
                    self.run_steps(then_steps)
                } else {
                    self.run_steps(else_steps)
                }
            }
            Step::Sections { sections } => {
                // Each section forks from the same host clock; the join
                // waits for the slowest one.
                let start = self.host_clock;
                let mut end = start;
                for sec in sections {
                    self.host_clock = start;
                    match self.run_steps(sec)? {
                        Flow::Normal => {}
                        _ => return Err(everr("break/return cannot cross a parallel section")),
                    }
                    end = end.max(self.host_clock);
                }
                self.host_clock = end;
                Ok(Flow::Normal)
            }
            Step::Break => Ok(Flow::Break),
            Step::Return => Ok(Flow::Return(None)),
        }
    }

    fn eval_host(&mut self, e: &Expr) -> Result<Value, RuntimeError> {
        let view = View::host(&self.state);
        let mut scratch = Scratch::host();
        let env = std::mem::take(&mut self.host_env);
        let mut it = Interp::with_env(
            &self.state,
            &view,
            &self.plan.kernels,
            &mut scratch,
            self.opts.iter_cap.unwrap_or(usize::MAX),
            env,
        );
        let v = it.eval(e);
        self.host_env = it.into_env();
        v
    }

    /// Flat charge for a host statement: one vertex-work unit, or one
    /// per element for an inline foreach.
    fn host_stmt_cost(&mut self, kind: &StmtKind) -> f64 {
        let pvw = self.cost().per_vertex_work;
        let StmtKind::Foreach(fs) = kind else { return pvw };
        let space = match (fs.iter, self.eval_host(&fs.subject)) {
            (IterKind::Points, Ok(Value::Graph(g))) => {
                self.state.store(g).map(|s| s.num_points()).unwrap_or(0)
            }
            (IterKind::Edges, Ok(Value::Graph(g))) => {
                self.state.store(g).map(|s| s.num_edges()).unwrap_or(0)
            }
            (IterKind::Items, Ok(Value::CollRef(c))) => self.state.colls[c].lock().unwrap().len(),
            (IterKind::Items, Ok(Value::SetRef(s))) => self.state.sets[s]
                .get()
                .and_then(|sim| self.state.store(sim.graph).ok().map(|st| st.num_points()))
                .unwrap_or(0),
            (_, Ok(Value::Point { idx, graph })) => self
                .state
                .store(graph)
                .map(|s| {
                    if fs.iter == IterKind::InNbrs {
                        s.in_degree(idx.max(0) as usize)
                    } else {
                        s.out_degree(idx.max(0) as usize)
                    }
                })
                .unwrap_or(0),
            _ => 0,
        };
        space.max(1) as f64 * pvw
    }

    // -- transfers ----------------------------------------------------------

    fn run_transfer(&mut self, dev: usize, obj: &ObjId, to_device: bool) -> Result<(), RuntimeError> {
        if !self.devices[dev].allocated.contains(obj) {
            return Err(everr(format!(
                "transfer of {obj} touches device {dev} without an allocation"
            )));
        }
        let words = self.obj_words(obj)?;
        match obj {
            ObjId::Topology(gname) => {
                if !to_device {
                    return Err(everr("topology never copies back; it is immutable"));
                }
                let g = self.graph_idx(gname)?;
                self.devices[dev].topo.insert(g);
            }
            ObjId::Prop { graph, prop } => {
                let g = self.graph_idx(graph)?;
                let host_arr = self.state.host_prop(g, prop)?;
                if to_device {
                    let dev_arr = self.devices[dev].ensure_prop(g, prop, host_arr.len());
                    copy_array(&host_arr, &dev_arr)?;
                } else {
                    let dev_arr = self.devices[dev]
                        .props
                        .get(&(g, prop.clone()))
                        .cloned()
                        .ok_or_else(|| {
                            everr(format!("{graph}.{prop} copied up but never lived on device {dev}"))
                        })?;
                    copy_array(&dev_arr, &host_arr)?;
                }
            }
            ObjId::Global(name) => {
                let gi = *self
                    .state
                    .global_index
                    .get(name)
                    .ok_or_else(|| everr(format!("unknown global {name}")))?;
                let (src, dst) = if to_device {
                    (&self.state.globals[gi], &self.devices[dev].globals[gi])
                } else {
                    (&self.devices[dev].globals[gi], &self.state.globals[gi])
                };
                dst.store(src.load(Ordering::SeqCst), Ordering::SeqCst);
            }
            // Sets and collections are unified memory: the step costs
            // time but moves nothing.
            ObjId::SetObj(_) | ObjId::Coll(_) => {}
        }
        let c = self.cost();
        let cost = c.transfer_latency + 8.0 * words as f64 * c.transfer_per_byte;
        let start = self.host_clock.max(self.devices[dev].clock);
        self.host_clock = start + cost;
        self.devices[dev].clock = start + cost;
        self.transfer_log.push(TransferRec {
            dev,
            obj: obj.to_string(),
            to_device,
            cost,
        });
        Ok(())
    }

    /// 64-bit words an object occupies on the wire.
    fn obj_words(&self, obj: &ObjId) -> Result<usize, RuntimeError> {
        Ok(match obj {
            ObjId::Topology(g) => {
                let store = self.state.store(self.graph_idx(g)?)?;
                store.num_points() + 1 + 2 * store.num_edges()
            }
            ObjId::Prop { graph, prop } => {
                self.state.host_prop(self.graph_idx(graph)?, prop)?.len()
            }
            ObjId::Global(_) => 1,
            ObjId::SetObj(name) => {
                let idx = *self
                    .state
                    .set_index
                    .get(name)
                    .ok_or_else(|| everr(format!("unknown set {name}")))?;
                let sim = self.state.sets[idx]
                    .get()
                    .ok_or_else(|| everr(format!("set {name} transferred before declaration")))?;
                2 * self.state.store(sim.graph)?.num_points()
            }
            ObjId::Coll(_) => self.state.max_n(),
        })
    }

    fn graph_idx(&self, name: &str) -> Result<usize, RuntimeError> {
        self.state
            .graph_index
            .get(name)
            .copied()
            .ok_or_else(|| everr(format!("unknown graph {name}")))
    }

    // -- launches -----------------------------------------------------------

    fn run_launch(&mut self, ls: &LaunchStep) -> Result<(), RuntimeError> {
        let mut group_cost = 0.0f64;
        for member in &ls.group {
            let cost = self.run_member(ls.dev, member)?;
            group_cost = group_cost.max(cost);
        }
        match ls.dev {
            DeviceSlot::Host => self.host_clock += group_cost,
            DeviceSlot::Dev(d) => {
                let start = self.host_clock.max(self.devices[d].clock);
                self.devices[d].clock = start + group_cost;
                if ls.barrier {
                    self.host_clock = self.devices[d].clock;
                } else {
                    self.host_clock = start;
                }
            }
        }
        Ok(())
    }

    /// Run one kernel of a group over its whole iteration space;
    /// returns the cost units it consumed.
    fn run_member(&mut self, dev: DeviceSlot, member: &KernelLaunch) -> Result<f64, RuntimeError> {
        let kernel = self
            .plan
            .kernels
            .iter()
            .find(|f| f.name == member.kernel)
            .ok_or_else(|| everr(format!("plan launches unknown kernel {}", member.kernel)))?;

        // Resolve the storage this launch works against.
        let (props, dev_id) = self.launch_table(dev, member)?;

        // Evaluate loop-invariant arguments once, against the launch's
        // own storage so device-resident globals read the device copy.
        let cap = self.cap();
        let mut slots = Vec::with_capacity(member.args.len());
        {
            let globals: &[AtomicI64] = match dev {
                DeviceSlot::Host => &self.state.globals,
                DeviceSlot::Dev(d) => &self.devices[d].globals,
            };
            let view = View { props: props.clone(), globals, dev: dev_id };
            let mut scratch = Scratch::host();
            let env = std::mem::take(&mut self.host_env);
            let mut it =
                Interp::with_env(&self.state, &view, &self.plan.kernels, &mut scratch, cap, env);
            let mut fail = None;
            for a in &member.args {
                if expr_uses_var(a, &member.var) {
                    slots.push(ArgSlot::PerElement(a.clone()));
                } else {
                    match it.eval(a) {
                        Ok(v) => slots.push(ArgSlot::Pre(v)),
                        Err(e) => {
                            fail = Some(e);
                            break;
                        }
                    }
                }
            }
            self.host_env = it.into_env();
            if let Some(e) = fail {
                return Err(e);
            }
        }

        match member.iter {
            IterKind::Points | IterKind::Edges => {
                let g = match self.eval_host(&member.subject)? {
                    Value::Graph(g) => g,
                    other => return Err(everr(format!("launch subject {other:?} is not a graph"))),
                };
                let store = self.state.store(g)?.clone();
                let space = if member.iter == IterKind::Points {
                    Space::Points { graph: g, n: store.num_points() }
                } else {
                    Space::Edges { graph: g, m: store.num_edges() }
                };
                let elems = space.len();
                let out = self.round(dev, dev_id, &props, member, kernel, &slots, space)?;
                let cost = match member.iter {
                    IterKind::Points => {
                        elems as f64 * self.cost().per_vertex_work
                            + total(&out.edge_work) as f64 * self.cost().per_edge_work
                    }
                    _ => total(&out.edge_work) as f64 * self.cost().per_edge_work,
                };
                self.absorb(member, kernel, out);
                Ok(cost)
            }
            IterKind::Items => self.run_worklist(dev, dev_id, &props, member, kernel, &slots),
            other => Err(everr(format!(
                "launch iterator {:?} must be driven from inside a kernel",
                other
            ))),
        }
    }

    /// Pre-resolve every property array the launch may touch, checking
    /// device honesty: a device launch may only see transferred or
    /// allocated objects.
    fn launch_table(
        &mut self,
        dev: DeviceSlot,
        member: &KernelLaunch,
    ) -> Result<(Vec<(usize, String, Arc<Vec<AtomicI64>>)>, Option<usize>), RuntimeError> {
        let mut props: Vec<(usize, String, Arc<Vec<AtomicI64>>)> = Vec::new();
        match dev {
            DeviceSlot::Host => {
                for obj in member.reads.iter().chain(&member.writes) {
                    if let ObjId::Prop { graph, prop } = obj {
                        let g = self.graph_idx(graph)?;
                        let arr = self.state.host_prop(g, prop)?;
                        if !props.iter().any(|e| e.0 == g && &e.1 == prop) {
                            props.push((g, prop.clone(), arr));
                        }
                    }
                }
                Ok((props, None))
            }
            DeviceSlot::Dev(d) => {
                for obj in member.reads.iter().chain(&member.writes) {
                    if !self.devices[d].allocated.contains(obj) {
                        return Err(everr(format!(
                            "kernel {} touches {obj} on device {d} without an allocation",
                            member.kernel
                        )));
                    }
                    match obj {
                        ObjId::Topology(gname) => {
                            let g = self.graph_idx(gname)?;
                            if !self.devices[d].topo.contains(&g) {
                                return Err(everr(format!(
                                    "kernel {} needs the topology of {gname} on device {d} \
                                     but it was never copied",
                                    member.kernel
                                )));
                            }
                        }
                        ObjId::Prop { graph, prop } => {
                            let g = self.graph_idx(graph)?;
                            let len = self.state.host_prop(g, prop)?.len();
                            let arr = self.devices[d].ensure_prop(g, prop, len);
                            if !props.iter().any(|e| e.0 == g && &e.1 == prop) {
                                props.push((g, prop.clone(), arr));
                            }
                        }
                        _ => {}
                    }
                }
                Ok((props, Some(d)))
            }
        }
    }

    fn launch_globals(&self, dev: DeviceSlot) -> &[AtomicI64] {
        match dev {
            DeviceSlot::Host => &self.state.globals,
            DeviceSlot::Dev(d) => &self.devices[d].globals,
        }
    }

    /// One parallel pass over a space; merges worker scratches into
    /// the launch's globals and returns the leftovers.
    fn round(
        &mut self,
        dev: DeviceSlot,
        dev_id: Option<usize>,
        props: &[(usize, String, Arc<Vec<AtomicI64>>)],
        member: &KernelLaunch,
        kernel: &FunctionDecl,
        slots: &[ArgSlot],
        space: Space<'_>,
    ) -> Result<RoundOut, RuntimeError> {
        let threads = self.opts.threads.max(1);
        let view = View {
            props: props.to_vec(),
            globals: self.launch_globals(dev),
            dev: dev_id,
        };
        let state = &self.state;
        let kernels: &[FunctionDecl] = &self.plan.kernels;
        let cap = self.cap();
        let trace = self.opts.trace_access;
        let elems = space.len();
        let chunk = elems.div_ceil(threads.max(1)).max(1);
        let filter = member.filter.as_ref();
        let var = member.var.as_str();

        let scratches: Vec<Result<Scratch, RuntimeError>> = std::thread::scope(|scope| {
            let mut handles = Vec::new();
            for w in 0..threads {
                let lo = (w * chunk).min(elems);
                let hi = (lo + chunk).min(elems);
                let space = &space;
                let view = &view;
                handles.push(scope.spawn(move || {
                    let mut scratch = Scratch::worker(w as i64, trace);
                    let mut it = Interp::new(state, view, kernels, &mut scratch, cap);
                    for i in lo..hi {
                        let subject = match *space {
                            Space::Points { graph, .. } => {
                                Value::Point { idx: i as i64, graph }
                            }
                            Space::Edges { graph, .. } => {
                                it.scratch.edge_work += 1;
                                Value::Edge { idx: i, graph }
                            }
                            Space::List(items) => {
                                let (g, p) = items[i];
                                Value::Point { idx: p, graph: g }
                            }
                        };
                        it.push_binding(var, subject);
                        let keep = match filter {
                            Some(f) => it.eval(f).and_then(|v| v.truthy()),
                            None => Ok(true),
                        };
                        let r = keep.and_then(|keep| {
                            if !keep {
                                return Ok(());
                            }
                            let mut vals = Vec::with_capacity(slots.len());
                            for s in slots {
                                vals.push(match s {
                                    ArgSlot::Pre(v) => *v,
                                    ArgSlot::PerElement(e) => it.eval(e)?,
                                });
                            }
                            it.call_kernel(kernel, &vals)
                        });
                        it.pop_binding();
                        r?;
                    }
                    drop(it);
                    Ok(scratch)
                }));
            }
            handles.into_iter().map(|h| h.join().unwrap()).collect()
        });

        // Merge in worker order; OR/add/mul all commute, so the merged
        // state does not depend on scheduling.
        let mut out = RoundOut {
            invocations: 0,
            edge_work: vec![0; threads],
            pushes: Vec::new(),
            trace: trace.then(TracedAccess::default),
        };
        for (w, res) in scratches.into_iter().enumerate() {
            let s = res?;
            out.invocations += s.invocations;
            out.edge_work[w] = s.edge_work;
            out.pushes.extend(s.pushes);
            for (g, v) in s.radd {
                view.globals[g].fetch_add(v, Ordering::SeqCst);
            }
            for (g, v) in s.rmul {
                super::interp::atomic_mul(&view.globals[g], v);
            }
            for (g, v) in s.flag_or {
                view.globals[g].fetch_or(v, Ordering::SeqCst);
            }
            if let (Some(acc), Some(t)) = (out.trace.as_mut(), s.trace) {
                acc.read_globals.extend(t.read_globals);
                acc.wrote_globals.extend(t.wrote_globals);
                acc.read_props.extend(t.read_props);
                acc.wrote_props.extend(t.wrote_props);
            }
        }
        Ok(out)
    }

    /// Fold a finished round into run-wide accounting and hand its
    /// pushes to the collections.
    fn absorb(&mut self, member: &KernelLaunch, kernel: &FunctionDecl, out: RoundOut) {
        self.invocations += out.invocations;
        let threads = out.edge_work.len();
        let per = self
            .per_worker_work
            .entry(kernel.name.clone())
            .or_insert_with(|| vec![0; threads]);
        if per.len() < threads {
            per.resize(threads, 0);
        }
        for (w, e) in out.edge_work.iter().enumerate() {
            per[w] += e;
        }
        for (c, g, p) in out.pushes {
            self.state.colls[c].lock().unwrap().push((g, p));
        }
        if let Some(t) = out.trace {
            let acc = self.traced.entry(member.kernel.clone()).or_default();
            acc.read_globals.extend(t.read_globals);
            acc.wrote_globals.extend(t.wrote_globals);
            acc.read_props.extend(t.read_props);
            acc.wrote_props.extend(t.wrote_props);
        }
    }

    // -- worklist drains ----------------------------------------------------

    fn run_worklist(
        &mut self,
        dev: DeviceSlot,
        dev_id: Option<usize>,
        props: &[(usize, String, Arc<Vec<AtomicI64>>)],
        member: &KernelLaunch,
        kernel: &FunctionDecl,
        slots: &[ArgSlot],
    ) -> Result<f64, RuntimeError> {
        let coll_name = member
            .coll_var
            .as_ref()
            .ok_or_else(|| everr("worklist launch without a collection"))?;
        let c = *self
            .state
            .coll_index
            .get(coll_name)
            .ok_or_else(|| everr(format!("unknown collection {coll_name}")))?;
        let bag: Vec<(usize, i64)> = std::mem::take(&mut *self.state.colls[c].lock().unwrap());
        if bag.is_empty() {
            return Ok(0.0);
        }
        let use_delta = self.opts.sched == WlSched::DeltaStepping && member.key_prop.is_some();
        if !use_delta {
            // FIFO: one pass over the current bag; pushes become the
            // next bag and wait for the next drain, so host statements
            // between drains (level counters) see one frontier at a
            // time.
            let processed = bag.len();
            let out = self.round(dev, dev_id, props, member, kernel, slots, Space::List(&bag))?;
            let cost = processed as f64 * self.cost().per_vertex_work
                + total(&out.edge_work) as f64 * self.cost().per_edge_work;
            let mut coll = self.state.colls[c].lock().unwrap();
            for &(cc, g, p) in &out.pushes {
                debug_assert_eq!(cc, c);
                coll.push((g, p));
            }
            drop(coll);
            let mut out = out;
            out.pushes.clear();
            self.absorb(member, kernel, out);
            return Ok(cost);
        }

        // Delta-stepping: drain the lowest occupied bucket to fixpoint.
        let (kg_name, kp) = member.key_prop.clone().unwrap();
        let kg = self.graph_idx(&kg_name)?;
        let key_arr = props
            .iter()
            .find(|(g, p, _)| *g == kg && p == &kp)
            .map(|(_, _, a)| a.clone())
            .map(Ok)
            .unwrap_or_else(|| self.state.host_prop(kg, &kp))?;
        let delta = match self.opts.delta {
            Some(d) => d,
            None => default_delta(self.state.store(kg)?.edges()),
        };
        let key_of = |(g, p): (usize, i64)| -> Result<i64, RuntimeError> {
            if g != kg || p < 0 || p as usize >= key_arr.len() {
                return Err(everr(format!(
                    "worklist item ({g}, {p}) has no {kg_name}.{kp} key"
                )));
            }
            Ok(key_arr[p as usize].load(Ordering::SeqCst))
        };

        let bucket = bag
            .iter()
            .map(|&it| key_of(it).map(|k| k / delta))
            .try_fold(i64::MAX, |acc, k| k.map(|k| acc.min(k)))?;
        self.bucket_trace.push(bucket);

        let mut rest = bag;
        let mut cost = 0.0;
        let mut rounds = 0usize;
        loop {
            let mut eligible = Vec::new();
            let mut next = Vec::new();
            for it in rest {
                if key_of(it)? / delta <= bucket {
                    eligible.push(it);
                } else {
                    next.push(it);
                }
            }
            if eligible.is_empty() {
                rest = next;
                break;
            }
            rounds += 1;
            let cap = self.cap();
            if rounds > cap {
                return Err(RuntimeError::Divergence { cap });
            }
            let out =
                self.round(dev, dev_id, props, member, kernel, slots, Space::List(&eligible))?;
            cost += eligible.len() as f64 * self.cost().per_vertex_work
                + total(&out.edge_work) as f64 * self.cost().per_edge_work;
            for &(cc, g, p) in &out.pushes {
                debug_assert_eq!(cc, c);
                next.push((g, p));
            }
            let mut out = out;
            out.pushes.clear();
            self.absorb(member, kernel, out);
            rest = next;
        }
        // Later buckets stay queued for the next drain.
        self.state.colls[c].lock().unwrap().extend(rest);
        Ok(cost)
    }

    fn finish(self) -> ExecResult {
        let mut globals = BTreeMap::new();
        for (i, (name, _)) in self.plan.symbols.globals.iter().enumerate() {
            globals.insert(name.clone(), self.state.globals[i].load(Ordering::SeqCst));
        }
        let mut props = BTreeMap::new();
        for (gname, pname) in &self.plan.symbols.props {
            let Some(&g) = self.state.graph_index.get(gname) else { continue };
            let Ok(arr) = self.state.host_prop(g, pname) else { continue };
            let vals: Vec<i64> = arr.iter().map(|a| a.load(Ordering::SeqCst)).collect();
            props.insert((gname.clone(), pname.clone()), vals);
        }
        ExecResult {
            globals,
            props,
            sim_cost: self.host_clock,
            transfer_count: self.transfer_log.len(),
            transfer_log: self.transfer_log,
            kernel_invocations: self.invocations,
            per_worker_work: self.per_worker_work,
            bucket_trace: self.bucket_trace,
            traced: self.traced,
        }
    }
}

fn total(v: &[u64]) -> u64 {
    v.iter().sum()
}

fn copy_array(src: &[AtomicI64], dst: &[AtomicI64]) -> Result<(), RuntimeError> {
    if src.len() != dst.len() {
        return Err(everr(format!(
            "transfer size mismatch: {} vs {} elements",
            src.len(),
            dst.len()
        )));
    }
    for (s, d) in src.iter().zip(dst) {
        d.store(s.load(Ordering::Relaxed), Ordering::Relaxed);
    }
    Ok(())
}

/// Bucket width when none is given: the mean edge weight, at least 1.
fn default_delta(edges: &[crate::graph::EdgeRec]) -> i64 {
    if edges.is_empty() {
        return 1;
    }
    let sum: i64 = edges.iter().map(|e| e.weight).sum();
    (sum / edges.len() as i64).max(1)
}

#[cfg(test)]
mod tests {
    use super::execute;
    use crate::ast::Program;
    use crate::cfg::HostCfg;
    use crate::gen;
    use crate::graph::EdgeRec;
    use crate::lower::{
        insert_transfers, lower, CostModel, ExecutionPlan, Step, Target, TargetKind,
    };
    use crate::parser::parse;
    use crate::runtime::{ExecOptions, ExecResult, RuntimeError, WlSched};
    use crate::sema;
    use crate::transform;

    const BFS: &str = include_str!("../../corpus/bfs.fal");
    const BFS_EDGE: &str = include_str!("../../corpus/bfs_edge.fal");
    const BFS_SSSP: &str = include_str!("../../corpus/bfs_sssp.fal");
    const SSSP: &str = include_str!("../../corpus/sssp.fal");
    const SSSP_EDGE: &str = include_str!("../../corpus/sssp_edge.fal");
    const CC: &str = include_str!("../../corpus/cc.fal");
    const CC_TWO: &str = include_str!("../../corpus/cc_two_graphs.fal");
    const MST: &str = include_str!("../../corpus/mst.fal");

    fn compile_ast(p: &Program, kind: TargetKind, sync: bool) -> ExecutionPlan {
        let table = sema::resolve(p).unwrap();
        let cfg = HostCfg::analyze(p, &table);
        let target = Target { kind, threads: 1, cost: CostModel::default() };
        insert_transfers(lower(p, &table, &cfg, target, sync).unwrap()).unwrap()
    }

    fn compile(src: &str, kind: TargetKind, sync: bool) -> ExecutionPlan {
        compile_ast(&parse(src).unwrap(), kind, sync)
    }

    fn e(src: u32, dst: u32, w: i64) -> EdgeRec {
        EdgeRec { src, dst, weight: w }
    }

    /// Directed weighted triangle: the indirect route 0->2->1 (cost 4)
    /// beats the direct edge 0->1 (cost 5).
    fn triangle() -> Vec<EdgeRec> {
        vec![e(0, 1, 5), e(0, 2, 3), e(2, 1, 1)]
    }

    fn path_edges(n: u32) -> Vec<EdgeRec> {
        (0..n - 1).map(|i| e(i, i + 1, 1)).collect()
    }

    fn tmp_graph(name: &str, n: usize, edges: &[EdgeRec]) -> Vec<String> {
        let path = std::env::temp_dir()
            .join(format!("falc-exec-{}-{name}.txt", std::process::id()));
        gen::write_graph(&path, n, edges).unwrap();
        vec![path.to_string_lossy().into_owned()]
    }

    fn run(plan: &ExecutionPlan, paths: &[String], opts: &ExecOptions) -> ExecResult {
        execute(plan, paths, opts).unwrap()
    }

    fn dist<'a>(r: &'a ExecResult, graph: &str, prop: &str) -> &'a [i64] {
        &r.props[&(graph.to_string(), prop.to_string())]
    }

    #[test]
    fn bfs_levels_on_a_path() {
        let plan = compile(BFS, TargetKind::HostThreads, true);
        let paths = tmp_graph("bfs-path", 10, &path_edges(10));
        let r = run(&plan, &paths, &ExecOptions::default());
        let want: Vec<i64> = (0..10).collect();
        assert_eq!(dist(&r, "graph", "dist"), want);
        assert_eq!(r.globals["lev"], 9);
        assert_eq!(r.globals["changed"], 0);
    }

    #[test]
    fn sssp_takes_the_cheaper_indirect_route() {
        let plan = compile(SSSP, TargetKind::HostThreads, true);
        let paths = tmp_graph("sssp-tri", 3, &triangle());
        let r = run(&plan, &paths, &ExecOptions::default());
        assert_eq!(dist(&r, "graph", "dist"), [0, 4, 3]);
    }

    #[test]
    fn edge_variants_match_the_vertex_results() {
        let paths = tmp_graph("edge-var", 10, &path_edges(10));
        let bfs = run(
            &compile(BFS_EDGE, TargetKind::HostThreads, true),
            &paths,
            &ExecOptions::default(),
        );
        let want: Vec<i64> = (0..10).collect();
        assert_eq!(dist(&bfs, "graph", "dist"), want);

        let tri = tmp_graph("edge-var-tri", 3, &triangle());
        let sssp = run(
            &compile(SSSP_EDGE, TargetKind::HostThreads, true),
            &tri,
            &ExecOptions::default(),
        );
        assert_eq!(dist(&sssp, "graph", "dist"), [0, 4, 3]);
    }

    #[test]
    fn cc_labels_each_pair_by_its_minimum() {
        let plan = compile(CC, TargetKind::HostThreads, true);
        let paths = tmp_graph("cc-pairs", 4, &[e(0, 1, 1), e(2, 3, 1)]);
        let r = run(&plan, &paths, &ExecOptions::default());
        assert_eq!(dist(&r, "graph", "comp"), [0, 0, 2, 2]);
    }

    #[test]
    fn mst_weight_on_the_triangle() {
        let plan = compile(MST, TargetKind::HostThreads, true);
        let paths = tmp_graph("mst-tri", 3, &triangle());
        for threads in [1, 4] {
            let opts = ExecOptions { threads, ..ExecOptions::default() };
            let r = run(&plan, &paths, &opts);
            // Spanning edges 0->2 (3) and 2->1 (1); the direct 0->1 (5)
            // loses to them in every Boruvka round.
            assert_eq!(r.globals["mstwt"], 4, "threads={threads}");
        }
    }

    #[test]
    fn fifo_worklist_processes_only_pending_points() {
        let p = transform::to_worklist(&parse(SSSP).unwrap()).unwrap();
        let plan = compile_ast(&p, TargetKind::HostThreads, true);
        let paths = tmp_graph("wl-sssp-tri", 3, &triangle());
        let r = run(&plan, &paths, &ExecOptions::default());
        assert_eq!(dist(&r, "graph", "dist"), [0, 4, 3]);
        // Drains: {0}, {1,2}, {1 again after 2 improved it}. The
        // topology-driven run does 2 sweeps x 3 points = 6, plus the
        // spec bound of rounds x |V| = 9.
        assert_eq!(r.kernel_invocations, 4);
        assert!(r.kernel_invocations <= 9);
        assert!(r.bucket_trace.is_empty());
    }

    #[test]
    fn worklist_without_a_key_falls_back_to_fifo() {
        // The worklist BFS kernel guards with an if, not a MIN, so
        // delta-stepping has no key to bucket by.
        let p = transform::to_worklist(&parse(BFS).unwrap()).unwrap();
        let plan = compile_ast(&p, TargetKind::HostThreads, true);
        let paths = tmp_graph("wl-bfs", 10, &path_edges(10));
        let opts = ExecOptions { sched: WlSched::DeltaStepping, ..ExecOptions::default() };
        let r = run(&plan, &paths, &opts);
        let want: Vec<i64> = (0..10).collect();
        assert_eq!(dist(&r, "graph", "dist"), want);
        assert!(r.bucket_trace.is_empty());
    }

    #[test]
    fn delta_buckets_on_a_unit_path_are_bfs_levels() {
        let p = transform::to_worklist(&parse(SSSP).unwrap()).unwrap();
        let plan = compile_ast(&p, TargetKind::HostThreads, true);
        let paths = tmp_graph("delta-path", 10, &path_edges(10));
        let opts = ExecOptions {
            sched: WlSched::DeltaStepping,
            delta: Some(1),
            ..ExecOptions::default()
        };
        let r = run(&plan, &paths, &opts);
        let want: Vec<i64> = (0..10).collect();
        assert_eq!(dist(&r, "graph", "dist"), want);
        assert_eq!(r.bucket_trace, want);
    }

    #[test]
    fn delta_two_drains_buckets_in_order() {
        let p = transform::to_worklist(&parse(SSSP).unwrap()).unwrap();
        let plan = compile_ast(&p, TargetKind::HostThreads, true);
        let paths = tmp_graph("delta-tri", 3, &triangle());
        let opts = ExecOptions {
            sched: WlSched::DeltaStepping,
            delta: Some(2),
            ..ExecOptions::default()
        };
        let r = run(&plan, &paths, &opts);
        assert_eq!(dist(&r, "graph", "dist"), [0, 4, 3]);
        // Keys 0, 3, 4..5 fall into buckets 0, 1 and 2.
        assert_eq!(r.bucket_trace, [0, 1, 2]);
        assert!(r.bucket_trace.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn nonpositive_delta_is_rejected() {
        let p = transform::to_worklist(&parse(SSSP).unwrap()).unwrap();
        let plan = compile_ast(&p, TargetKind::HostThreads, true);
        let paths = tmp_graph("delta-zero", 3, &triangle());
        let opts = ExecOptions {
            sched: WlSched::DeltaStepping,
            delta: Some(0),
            ..ExecOptions::default()
        };
        match execute(&plan, &paths, &opts) {
            Err(RuntimeError::Delta(0)) => {}
            other => panic!("expected a delta error, got {other:?}"),
        }
    }

    #[test]
    fn hub_graph_overloads_one_worker_in_vertex_mode() {
        // K1,999: all edges hang off vertex 0, which lands in worker
        // 0's chunk. Work vector (999k, 0, 0, 0) has CV = sqrt(3).
        let star: Vec<EdgeRec> = (1..1000).map(|i| e(0, i, 1)).collect();
        let paths = tmp_graph("star", 1000, &star);
        let opts = ExecOptions { threads: 4, ..ExecOptions::default() };

        let vertex = compile(SSSP, TargetKind::HostThreads, true);
        let rv = run(&vertex, &paths, &opts);
        let cv_vertex = rv.load_imbalance();
        assert!(cv_vertex > 1.0, "vertex-mode CV {cv_vertex}");
        assert!((cv_vertex - 3f64.sqrt()).abs() < 1e-9);

        // One work item per edge splits 999 edges almost evenly.
        let edge_p = transform::vertex_to_edge(&parse(SSSP).unwrap()).unwrap();
        let edge = compile_ast(&edge_p, TargetKind::HostThreads, true);
        let re = run(&edge, &paths, &opts);
        let cv_edge = re.load_imbalance();
        assert!(cv_edge < 0.1, "edge-mode CV {cv_edge}");
        assert!(cv_edge < cv_vertex);
        assert_eq!(dist(&rv, "graph", "dist"), dist(&re, "graph", "dist"));
    }

    #[test]
    fn ring_balances_perfectly() {
        let n = 1000u32;
        let ring: Vec<EdgeRec> = (0..n).map(|i| e(i, (i + 1) % n, 1)).collect();
        let paths = tmp_graph("ring", n as usize, &ring);
        let opts = ExecOptions { threads: 4, ..ExecOptions::default() };
        let r = run(&compile(SSSP, TargetKind::HostThreads, true), &paths, &opts);
        assert!(r.load_imbalance() < 1e-12);
    }

    #[test]
    fn runaway_fixpoint_hits_the_iteration_cap() {
        // Any relaxation needs one working round plus one quiet round,
        // so a cap of one always trips.
        let plan = compile(SSSP, TargetKind::HostThreads, true);
        let paths = tmp_graph("cap", 10, &path_edges(10));
        let opts = ExecOptions { iter_cap: Some(1), ..ExecOptions::default() };
        match execute(&plan, &paths, &opts) {
            Err(RuntimeError::Divergence { cap: 1 }) => {}
            other => panic!("expected divergence at cap 1, got {other:?}"),
        }
    }

    #[test]
    fn missing_and_unreadable_inputs_are_reported() {
        let plan = compile(SSSP, TargetKind::HostThreads, true);
        match execute(&plan, &[], &ExecOptions::default()) {
            Err(RuntimeError::MissingInput { index: 1, provided: 0 }) => {}
            other => panic!("expected a missing-input error, got {other:?}"),
        }
        let bogus = vec!["/nonexistent/falc-no-such-graph.txt".to_string()];
        match execute(&plan, &bogus, &ExecOptions::default()) {
            Err(RuntimeError::GraphLoad(_)) => {}
            other => panic!("expected a graph-load error, got {other:?}"),
        }
    }

    fn plan_transfers(steps: &[Step], out: &mut Vec<(usize, String, bool)>) {
        for s in steps {
            match s {
                Step::Transfer { dev, obj, to_device } => {
                    out.push((*dev, obj.to_string(), *to_device));
                }
                Step::While { body, .. } => plan_transfers(body, out),
                Step::If { then_steps, else_steps, .. } => {
                    plan_transfers(then_steps, out);
                    plan_transfers(else_steps, out);
                }
                Step::Sections { sections } => {
                    sections.iter().for_each(|s| plan_transfers(s, out));
                }
                _ => {}
            }
        }
    }

    #[test]
    fn device_run_performs_exactly_the_planned_transfers() {
        let plan = compile(BFS, TargetKind::SimDevice, true);
        let paths = tmp_graph("dev-bfs", 10, &path_edges(10));
        let r = run(&plan, &paths, &ExecOptions::default());

        // Results cross through real device copies, so a missing or
        // misplaced transfer would corrupt them.
        let want: Vec<i64> = (0..10).collect();
        assert_eq!(dist(&r, "graph", "dist"), want);
        assert_eq!(r.transfer_count, r.transfer_log.len());

        let mut planned = Vec::new();
        plan_transfers(&plan.steps, &mut planned);
        let logged: Vec<(usize, String, bool)> = r
            .transfer_log
            .iter()
            .map(|t| (t.dev, t.obj.clone(), t.to_device))
            .collect();
        // Every executed transfer is an instance of a plan step, and
        // every planned transfer ran at least once.
        for t in &logged {
            assert!(planned.contains(t), "unplanned transfer {t:?}");
        }
        for t in &planned {
            assert!(logged.contains(t), "planned transfer never ran: {t:?}");
        }

        // The topology and dist arrays go down once, before the loop;
        // the flag crosses per iteration (10 rounds on this path).
        let count = |obj: &str, to_dev: bool| {
            logged.iter().filter(|t| t.1 == obj && t.2 == to_dev).count()
        };
        assert_eq!(count("graph.topology", true), 1);
        assert_eq!(count("graph.dist", true), 1);
        assert_eq!(count("graph.dist", false), 1);
        assert_eq!(count("changed", false), 10);
    }

    #[test]
    fn thread_count_never_changes_fixpoint_results() {
        let er = gen::gen_er(200, 600, 42, false, 1, 9);
        let paths = tmp_graph("threads-er", 200, &er);
        for src in [SSSP, CC] {
            let plan = compile(src, TargetKind::HostThreads, true);
            let base = run(&plan, &paths, &ExecOptions::default());
            for threads in [2, 4, 8] {
                let opts = ExecOptions { threads, ..ExecOptions::default() };
                let r = run(&plan, &paths, &opts);
                assert_eq!(base.props, r.props, "threads={threads}");
            }
        }
    }

    #[test]
    fn sections_run_one_graph_per_device() {
        let plan = compile(CC_TWO, TargetKind::SimMultiDevice { devices: 2 }, true);
        let a = tmp_graph("two-a", 4, &[e(0, 1, 1), e(2, 3, 1)]);
        let b = tmp_graph("two-b", 5, &path_edges(5));
        let paths = vec![a[0].clone(), b[0].clone()];
        let r = run(&plan, &paths, &ExecOptions::default());
        assert_eq!(dist(&r, "g1", "comp"), [0, 0, 2, 2]);
        assert_eq!(dist(&r, "g2", "comp"), [0, 0, 0, 0, 0]);
        let devs: std::collections::BTreeSet<usize> =
            r.transfer_log.iter().map(|t| t.dev).collect();
        assert_eq!(devs.into_iter().collect::<Vec<_>>(), [0, 1]);
    }

    #[test]
    fn async_schedule_overlaps_independent_kernels() {
        let paths = tmp_graph("async", 10, &path_edges(10));
        let sync = run(
            &compile(BFS_SSSP, TargetKind::HostThreads, true),
            &paths,
            &ExecOptions::default(),
        );
        let async_ = run(
            &compile(BFS_SSSP, TargetKind::HostThreads, false),
            &paths,
            &ExecOptions::default(),
        );
        assert_eq!(sync.props, async_.props);
        assert!(
            async_.sim_cost < sync.sim_cost,
            "async {} !< sync {}",
            async_.sim_cost,
            sync.sim_cost
        );
    }

    #[test]
    fn host_statements_cost_one_unit_each() {
        let plan = compile("int main() { int x = 0; x = x + 1; }", TargetKind::HostThreads, true);
        let hosts = plan.steps.iter().filter(|s| matches!(s, Step::Host { .. })).count();
        assert_eq!(hosts, 2);
        let r = run(&plan, &[], &ExecOptions::default());
        assert_eq!(r.sim_cost, 2.0);
        assert_eq!(r.transfer_count, 0);
    }

    #[test]
    fn device_clock_chains_transfers_and_launches() {
        let src = "
            int total = 0;
            void bump(Point p, Graph g) { RADD(total, 1); }
            int main() {
                Graph g;
                g.read(argv[1]);
                foreach (p In g.points) bump(p, g);
            }
        ";
        let plan = compile(src, TargetKind::SimDevice, true);
        let paths = tmp_graph("dev-cost", 10, &path_edges(10));
        let r = run(&plan, &paths, &ExecOptions::default());
        assert_eq!(r.globals["total"], 10);

        // Every step here serializes host and device: transfers sync
        // both clocks and the lone launch carries a barrier control,
        // so the final clock is host statements + transfers + launch.
        let hosts = plan.steps.iter().filter(|s| matches!(s, Step::Host { .. })).count();
        let transfers: f64 = r.transfer_log.iter().map(|t| t.cost).sum();
        let launch = 10.0; // 10 points, no neighbour work
        let want = hosts as f64 + transfers + launch;
        assert!((r.sim_cost - want).abs() < 1e-9, "{} vs {want}", r.sim_cost);

        // Transfer pricing: latency + 8 bytes per word at 0.01/byte.
        for t in &r.transfer_log {
            let words: f64 = match t.obj.as_str() {
                "g.topology" => (10 + 1 + 2 * 9) as f64,
                "total" => 1.0,
                other => panic!("unexpected transfer of {other}"),
            };
            assert!((t.cost - (100.0 + 8.0 * words * 0.01)).abs() < 1e-9);
        }
    }

    #[test]
    fn single_locks_a_whole_collection() {
        let src = "
            int got = 0, other = 0;
            int main() {
                Graph g;
                g.read(argv[1]);
                Point (g) a;
                a = g.points[1];
                Collection<Point> c;
                c.add(g.points[1]);
                c.add(g.points[2]);
                single (c) { got = 1; } else { got = 2; }
                single (a) { other = 1; } else { other = 2; }
            }
        ";
        let plan = compile(src, TargetKind::HostThreads, true);
        let paths = tmp_graph("single-coll", 4, &[e(0, 1, 1), e(1, 2, 1), e(2, 3, 1)]);
        let r = run(&plan, &paths, &ExecOptions::default());
        // Both singles succeed: the collection lock releases its
        // members when its block ends.
        assert_eq!(r.globals["got"], 1);
        assert_eq!(r.globals["other"], 1);
    }

    #[test]
    fn product_reduction_merges_across_workers() {
        let src = "
            int prod = 1;
            void twice(Point p, Graph g) { RMUL(prod, 2); }
            int main() {
                Graph g;
                g.read(argv[1]);
                foreach (p In g.points) twice(p, g);
            }
        ";
        let plan = compile(src, TargetKind::HostThreads, true);
        let paths = tmp_graph("rmul", 10, &path_edges(10));
        for threads in [1, 4] {
            let opts = ExecOptions { threads, ..ExecOptions::default() };
            let r = run(&plan, &paths, &opts);
            assert_eq!(r.globals["prod"], 1 << 10, "threads={threads}");
        }
    }
}
