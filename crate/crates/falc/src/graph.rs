//! In-memory graph topology.
//!
//! The store keeps the original edge list (edge iteration follows input
//! order) next to a CSR index for neighbour iteration. Within one
//! source the CSR slots preserve input order, so iterating a point's
//! out-neighbours visits the same parallel edges, in the same order,
//! that an edge loop would. The reverse index for in-neighbours is
//! built on first use; programs that never iterate innbrs never pay
//! for it.

use std::sync::OnceLock;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EdgeRec {
    pub src: u32,
    pub dst: u32,
    pub weight: i64,
}

#[derive(Debug)]
struct Csr {
    offsets: Vec<usize>, // n + 1
    targets: Vec<u32>,
    weights: Vec<i64>,
}

impl Csr {
    /// Counting sort of the edges by `key`, stable in input order.
    fn build(n: usize, edges: &[EdgeRec], key: impl Fn(&EdgeRec) -> u32) -> Csr {
        let mut counts = vec![0usize; n + 1];
        for e in edges {
            counts[key(e) as usize + 1] += 1;
        }
        for i in 0..n {
            counts[i + 1] += counts[i];
        }
        let offsets = counts.clone();
        let mut targets = vec![0u32; edges.len()];
        let mut weights = vec![0i64; edges.len()];
        let mut cursor = counts;
        for e in edges {
            let k = key(e) as usize;
            let slot = cursor[k];
            cursor[k] += 1;
            // The non-key endpoint is what a neighbour loop sees.
            targets[slot] = if key(e) == e.src { e.dst } else { e.src };
            weights[slot] = e.weight;
        }
        Csr { offsets, targets, weights }
    }

    fn slice(&self, v: usize) -> (&[u32], &[i64]) {
        let (a, b) = (self.offsets[v], self.offsets[v + 1]);
        (&self.targets[a..b], &self.weights[a..b])
    }
}

#[derive(Debug)]
pub struct GraphStore {
    n: usize,
    edges: Vec<EdgeRec>,
    out: Csr,
    rin: OnceLock<Csr>,
}

impl GraphStore {
    pub fn new(n: usize, edges: Vec<EdgeRec>) -> Result<GraphStore, String> {
        for (i, e) in edges.iter().enumerate() {
            if e.src as usize >= n || e.dst as usize >= n {
                return Err(format!(
                    "edge {} ({} -> {}) references a point outside 0..{}",
                    i, e.src, e.dst, n
                ));
            }
            // Relaxation fixpoints and delta-stepping both assume
            // nonnegative weights; refuse early rather than diverge.
            if e.weight < 0 {
                return Err(format!(
                    "edge {} ({} -> {}) has negative weight {}",
                    i, e.src, e.dst, e.weight
                ));
            }
        }
        let out = Csr::build(n, &edges, |e| e.src);
        Ok(GraphStore { n, edges, out, rin: OnceLock::new() })
    }

    pub fn num_points(&self) -> usize {
        self.n
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edge(&self, i: usize) -> EdgeRec {
        self.edges[i]
    }

    pub fn edges(&self) -> &[EdgeRec] {
        &self.edges
    }

    pub fn out_degree(&self, v: usize) -> usize {
        self.out.offsets[v + 1] - self.out.offsets[v]
    }

    /// Out-neighbours of `v` with weights, in input edge order.
    pub fn out_nbrs(&self, v: usize) -> (&[u32], &[i64]) {
        self.out.slice(v)
    }

    /// In-neighbours of `v` with weights; the reverse index is built on
    /// the first call and shared afterwards.
    pub fn in_nbrs(&self, v: usize) -> (&[u32], &[i64]) {
        self.rin().slice(v)
    }

    pub fn in_degree(&self, v: usize) -> usize {
        let r = self.rin();
        r.offsets[v + 1] - r.offsets[v]
    }

    fn rin(&self) -> &Csr {
        self.rin.get_or_init(|| Csr::build(self.n, &self.edges, |e| e.dst))
    }

    /// Lightest weight among the parallel edges u -> v, if any. Kernel
    /// code that asks for the weight of the neighbour currently being
    /// iterated takes a faster exact path in the runtime; this is the
    /// general lookup.
    pub fn min_weight(&self, u: usize, v: u32) -> Option<i64> {
        let (ts, ws) = self.out.slice(u);
        ts.iter()
            .zip(ws)
            .filter(|(t, _)| **t == v)
            .map(|(_, w)| *w)
            .min()
    }

    pub fn max_out_degree(&self) -> usize {
        (0..self.n).map(|v| self.out_degree(v)).max().unwrap_or(0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn e(src: u32, dst: u32, weight: i64) -> EdgeRec {
        EdgeRec { src, dst, weight }
    }

    #[test]
    fn csr_matches_naive_adjacency() {
        let edges = vec![e(0, 1, 5), e(2, 0, 1), e(0, 2, 7), e(1, 2, 3), e(2, 1, 9)];
        let g = GraphStore::new(3, edges.clone()).unwrap();
        for v in 0..3 {
            let naive: Vec<(u32, i64)> = edges
                .iter()
                .filter(|x| x.src == v)
                .map(|x| (x.dst, x.weight))
                .collect();
            let (ts, ws) = g.out_nbrs(v as usize);
            let got: Vec<(u32, i64)> = ts.iter().cloned().zip(ws.iter().cloned()).collect();
            assert_eq!(got, naive, "point {v}");
        }
    }

    #[test]
    fn slots_preserve_input_order_for_parallel_edges() {
        let edges = vec![e(0, 1, 9), e(0, 1, 2), e(0, 1, 5)];
        let g = GraphStore::new(2, edges).unwrap();
        let (_, ws) = g.out_nbrs(0);
        assert_eq!(ws, &[9, 2, 5]);
        assert_eq!(g.min_weight(0, 1), Some(2));
    }

    #[test]
    fn reverse_index_mirrors_forward() {
        let edges = vec![e(0, 1, 5), e(2, 1, 1), e(1, 0, 7)];
        let g = GraphStore::new(3, edges).unwrap();
        let (ts, ws) = g.in_nbrs(1);
        assert_eq!(ts, &[0, 2]);
        assert_eq!(ws, &[5, 1]);
        assert_eq!(g.in_degree(0), 1);
        assert_eq!(g.in_degree(2), 0);
    }

    #[test]
    fn rejects_out_of_range_endpoints() {
        let err = GraphStore::new(2, vec![e(0, 2, 1)]).unwrap_err();
        assert!(err.contains("outside"), "{err}");
    }

    #[test]
    fn min_weight_absent_for_non_neighbours() {
        let g = GraphStore::new(3, vec![e(0, 1, 4)]).unwrap();
        assert_eq!(g.min_weight(0, 2), None);
        assert_eq!(g.min_weight(1, 0), None);
    }

    #[test]
    fn rejects_negative_weights() {
        let err = GraphStore::new(2, vec![e(0, 1, -3)]).unwrap_err();
        assert!(err.contains("negative weight"), "{err}");
    }
}
