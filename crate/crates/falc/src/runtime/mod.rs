//! Plan executor: parallel kernels, atomic reductions, worklists,
//! union-find sets, non-blocking element locks, and simulated-device
//! cost accounting.
//!
//! The executor walks a plan's step tree. Host statements are
//! interpreted single-threaded; a launch partitions its iteration space
//! into contiguous chunks, one per worker, and runs the kernel body in
//! parallel over shared property arrays. Shared updates go through
//! atomics: MIN/MAX are compare-and-swap loops, RADD is a fetch-add,
//! and convergence flags accumulate per worker and are OR-merged when
//! the launch ends, so the observable flag semantics match a single
//! global flag without the contention.
//!
//! Simulated devices hold real private copies of the property arrays
//! and globals they were allocated. A transfer step physically copies
//! between host and device storage, which means a plan with a missing
//! or misplaced transfer produces wrong answers, not just a wrong
//! count; the oracle tests lean on that. Sets and collections are
//! unified memory: their transfer steps advance the cost clocks but
//! move no data.
//!
//! Cost is charged in abstract units: every kernel element costs
//! per-vertex work, every edge it scans costs per-edge work, and a
//! transfer costs a fixed latency plus a per-byte rate. Devices keep
//! their own clocks; a barrier joins the host clock to the device
//! clock, an asynchronous launch lets the host run ahead, and parallel
//! sections fork the host clock and join on the maximum.

mod exec;
mod interp;
mod state;

pub use exec::execute;
pub use interp::MAX_INT;
pub use state::Value;

use std::collections::{BTreeMap, BTreeSet};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RuntimeError {
    /// Fixpoint loop ran longer than the iteration cap.
    #[error("loop exceeded {cap} iterations without converging")]
    Divergence { cap: usize },
    /// Delta-stepping configured with a nonpositive bucket width.
    #[error("delta must be positive, got {0}")]
    Delta(i64),
    /// Graph file missing or malformed.
    #[error("{0}")]
    GraphLoad(String),
    /// The program asked for argv[k] but fewer graphs were supplied.
    #[error("program reads argv[{index}] but only {provided} graph path(s) were provided")]
    MissingInput { index: usize, provided: usize },
    /// Anything the interpreter cannot evaluate: undeclared property,
    /// out-of-range point, type mismatch, object missing on a device.
    #[error("{0}")]
    Eval(String),
}

pub(crate) fn everr(msg: impl Into<String>) -> RuntimeError {
    RuntimeError::Eval(msg.into())
}

/// How a worklist drain schedules its items.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WlSched {
    /// Alternate current/next bags; one bag per drain.
    Fifo,
    /// Bucket items by floor(key / delta); drain the lowest bucket to
    /// fixpoint per drain, buckets in ascending order.
    DeltaStepping,
}

#[derive(Debug, Clone)]
pub struct ExecOptions {
    pub threads: usize,
    /// Absolute fixpoint-loop cap; None means 10 times the largest
    /// loaded vertex count.
    pub iter_cap: Option<usize>,
    pub sched: WlSched,
    /// Bucket width; None means max(1, average edge weight).
    pub delta: Option<i64>,
    /// Collapse duplicate (src, dst) edges to their minimum weight at
    /// load time.
    pub dedup_edges: bool,
    /// Record which globals and properties each kernel actually
    /// touched, for comparison against the analysis sets.
    pub trace_access: bool,
}

impl Default for ExecOptions {
    fn default() -> Self {
        ExecOptions {
            threads: 1,
            iter_cap: None,
            sched: WlSched::Fifo,
            delta: None,
            dedup_edges: false,
            trace_access: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TransferRec {
    pub dev: usize,
    pub obj: String,
    pub to_device: bool,
    pub cost: f64,
}

/// Accesses one kernel was observed to make, by object name.
#[derive(Debug, Clone, Default)]
pub struct TracedAccess {
    pub read_globals: BTreeSet<String>,
    pub wrote_globals: BTreeSet<String>,
    pub read_props: BTreeSet<(String, String)>,
    pub wrote_props: BTreeSet<(String, String)>,
}

#[derive(Debug, Clone)]
pub struct ExecResult {
    /// Final global values, by name.
    pub globals: BTreeMap<String, i64>,
    /// Final property arrays, keyed (graph, property), in host memory.
    pub props: BTreeMap<(String, String), Vec<i64>>,
    /// Host clock at program end, in cost units.
    pub sim_cost: f64,
    pub transfer_count: usize,
    pub transfer_log: Vec<TransferRec>,
    /// Kernel body executions (elements that passed their filter).
    pub kernel_invocations: u64,
    /// Edges scanned per worker, per kernel, summed over all launches.
    pub per_worker_work: BTreeMap<String, Vec<u64>>,
    /// Bucket indices in the order delta-stepping drained them.
    pub bucket_trace: Vec<i64>,
    /// Per-kernel observed accesses; empty unless tracing was on.
    pub traced: BTreeMap<String, TracedAccess>,
}

impl ExecResult {
    /// Coefficient of variation (stddev/mean) of per-worker edge work
    /// for the kernel that scanned the most edges overall.
    pub fn load_imbalance(&self) -> f64 {
        let largest = self
            .per_worker_work
            .iter()
            .max_by_key(|(_, w)| w.iter().sum::<u64>());
        let Some((_, work)) = largest else { return 0.0 };
        let mean = work.iter().sum::<u64>() as f64 / work.len() as f64;
        if mean == 0.0 {
            return 0.0;
        }
        let var = work
            .iter()
            .map(|&w| {
                let d = w as f64 - mean;
                d * d
            })
            .sum::<f64>()
            / work.len() as f64;
        var.sqrt() / mean
    }

    pub fn prop_checksum(&self, graph: &str, prop: &str) -> Option<u64> {
        self.props
            .get(&(graph.to_string(), prop.to_string()))
            .map(|v| checksum(v))
    }
}

/// Position-weighted 64-bit fold of an array: sum of (index + 1) *
/// value mod 2^64. Summation commutes, so the fold can be computed in
/// any order; the position weight makes element swaps visible.
pub fn checksum(values: &[i64]) -> u64 {
    let mut acc: u64 = 0;
    for (i, &v) in values.iter().enumerate() {
        acc = acc.wrapping_add((i as u64 + 1).wrapping_mul(v as u64));
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checksum_weights_positions() {
        assert_eq!(checksum(&[]), 0);
        assert_eq!(checksum(&[7]), 7);
        assert_eq!(checksum(&[1, 1]), 1 + 2);
        // Swapping distinct values moves the sum.
        assert_ne!(checksum(&[3, 5]), checksum(&[5, 3]));
    }

    #[test]
    fn checksum_handles_negative_values() {
        // Two's-complement wrap, not saturation.
        assert_eq!(checksum(&[-1]), (-1i64) as u64);
    }

    #[test]
    fn imbalance_of_even_work_is_zero() {
        let mut r = empty_result();
        r.per_worker_work.insert("k".into(), vec![10, 10, 10, 10]);
        assert_eq!(r.load_imbalance(), 0.0);
    }

    #[test]
    fn imbalance_picks_the_heaviest_kernel() {
        let mut r = empty_result();
        r.per_worker_work.insert("light".into(), vec![1, 1]);
        r.per_worker_work.insert("heavy".into(), vec![100, 0]);
        // heavy dominates: mean 50, stddev 50, CV 1.
        assert!((r.load_imbalance() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn imbalance_of_no_work_is_zero() {
        let mut r = empty_result();
        r.per_worker_work.insert("k".into(), vec![0, 0]);
        assert_eq!(r.load_imbalance(), 0.0);
    }

    fn empty_result() -> ExecResult {
        ExecResult {
            globals: BTreeMap::new(),
            props: BTreeMap::new(),
            sim_cost: 0.0,
            transfer_count: 0,
            transfer_log: Vec::new(),
            kernel_invocations: 0,
            per_worker_work: BTreeMap::new(),
            bucket_trace: Vec::new(),
            traced: BTreeMap::new(),
        }
    }
}
