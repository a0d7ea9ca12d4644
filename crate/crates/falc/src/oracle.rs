//! Reference implementations the runtime is checked against.
//!
//! Everything here is a deliberately boring textbook algorithm, written
//! without reference to the interpreter or the plan machinery: BFS with
//! an explicit queue, Dijkstra with a binary heap, components and
//! spanning forests with a sequential union-find. When a runtime result
//! and an oracle result disagree, the oracle wins.

use crate::graph::GraphStore;
use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::collections::VecDeque;

/// Hop distance from `source` along out-edges; unreached points keep
/// `unreached`.
pub fn bfs_levels(g: &GraphStore, source: usize, unreached: i64) -> Vec<i64> {
    let mut dist = vec![unreached; g.num_points()];
    if source >= g.num_points() {
        return dist;
    }
    dist[source] = 0;
    let mut queue = VecDeque::from([source]);
    while let Some(u) = queue.pop_front() {
        let (targets, _) = g.out_nbrs(u);
        for &t in targets {
            let t = t as usize;
            if dist[t] == unreached {
                dist[t] = dist[u] + 1;
                queue.push_back(t);
            }
        }
    }
    dist
}

/// Weighted distance from `source` along out-edges; unreached points
/// keep `unreached`. Weights must be nonnegative.
pub fn dijkstra(g: &GraphStore, source: usize, unreached: i64) -> Vec<i64> {
    let mut dist = vec![unreached; g.num_points()];
    if source >= g.num_points() {
        return dist;
    }
    dist[source] = 0;
    let mut heap = BinaryHeap::from([Reverse((0i64, source))]);
    while let Some(Reverse((d, u))) = heap.pop() {
        if d > dist[u] {
            continue; // stale entry, a shorter path already settled u
        }
        let (targets, weights) = g.out_nbrs(u);
        for (&t, &w) in targets.iter().zip(weights) {
            let t = t as usize;
            let nd = d + w;
            if dist[t] == unreached || nd < dist[t] {
                dist[t] = nd;
                heap.push(Reverse((nd, t)));
            }
        }
    }
    dist
}

/// Smallest point index in each point's component, edges taken as
/// undirected. Matches the fixpoint of min-label propagation when the
/// input graph is symmetric.
pub fn min_label_components(g: &GraphStore) -> Vec<i64> {
    let mut uf = UnionFind::new(g.num_points());
    for e in g.edges() {
        uf.union(e.src as usize, e.dst as usize);
    }
    let mut label = vec![i64::MAX; g.num_points()];
    for v in 0..g.num_points() {
        let r = uf.find(v);
        label[r] = label[r].min(v as i64);
    }
    (0..g.num_points()).map(|v| label[uf.find(v)]).collect()
}

/// Total weight of a minimum spanning forest (Kruskal), edges taken as
/// undirected. Parallel edges and mirrored arcs are harmless: once two
/// endpoints share a component every further edge between them is
/// skipped.
pub fn spanning_forest_weight(g: &GraphStore) -> i64 {
    let mut order: Vec<usize> = (0..g.num_edges()).collect();
    order.sort_by_key(|&i| {
        let e = g.edge(i);
        (e.weight, e.src, e.dst)
    });
    let mut uf = UnionFind::new(g.num_points());
    let mut total = 0i64;
    for i in order {
        let e = g.edge(i);
        if uf.union(e.src as usize, e.dst as usize) {
            total += e.weight;
        }
    }
    total
}

/// Sequential union-find with path halving and union by size.
struct UnionFind {
    parent: Vec<usize>,
    size: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> UnionFind {
        UnionFind { parent: (0..n).collect(), size: vec![1; n] }
    }

    fn find(&mut self, mut v: usize) -> usize {
        while self.parent[v] != v {
            self.parent[v] = self.parent[self.parent[v]];
            v = self.parent[v];
        }
        v
    }

    /// True iff the two ends were in different components.
    fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        let (big, small) = if self.size[ra] >= self.size[rb] { (ra, rb) } else { (rb, ra) };
        self.parent[small] = big;
        self.size[big] += self.size[small];
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::EdgeRec;
    use crate::rng::Rng;

    fn store(n: usize, edges: &[(u32, u32, i64)]) -> GraphStore {
        let recs = edges
            .iter()
            .map(|&(src, dst, weight)| EdgeRec { src, dst, weight })
            .collect();
        GraphStore::new(n, recs).unwrap()
    }

    fn random_store(rng: &mut Rng, n: usize, m: usize) -> GraphStore {
        let mut edges = Vec::with_capacity(m);
        for _ in 0..m {
            let src = rng.below(n as u64) as u32;
            let dst = rng.below(n as u64) as u32;
            edges.push((src, dst, rng.range(1, 100)));
        }
        store(n, &edges)
    }

    /// Bellman-Ford, the slower second route for checking dijkstra.
    fn relax_to_fixpoint(g: &GraphStore, source: usize, unreached: i64) -> Vec<i64> {
        let mut dist = vec![unreached; g.num_points()];
        dist[source] = 0;
        loop {
            let mut changed = false;
            for e in g.edges() {
                let (s, d) = (e.src as usize, e.dst as usize);
                if dist[s] != unreached {
                    let nd = dist[s] + e.weight;
                    if dist[d] == unreached || nd < dist[d] {
                        dist[d] = nd;
                        changed = true;
                    }
                }
            }
            if !changed {
                return dist;
            }
        }
    }

    #[test]
    fn bfs_counts_hops_on_a_path() {
        let g = store(5, &[(0, 1, 9), (1, 2, 9), (2, 3, 9), (3, 4, 9)]);
        assert_eq!(bfs_levels(&g, 0, -1), vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn bfs_leaves_unreached_points_alone() {
        let g = store(4, &[(0, 1, 1), (3, 2, 1)]);
        assert_eq!(bfs_levels(&g, 0, 77), vec![0, 1, 77, 77]);
    }

    #[test]
    fn dijkstra_prefers_the_cheap_detour() {
        let g = store(3, &[(0, 1, 5), (0, 2, 3), (2, 1, 1)]);
        assert_eq!(dijkstra(&g, 0, i64::MAX), vec![0, 4, 3]);
    }

    #[test]
    fn dijkstra_agrees_with_relaxation_on_random_graphs() {
        let mut rng = Rng::new(1905);
        for _ in 0..20 {
            let g = random_store(&mut rng, 60, 200);
            let fast = dijkstra(&g, 0, i64::MAX);
            let slow = relax_to_fixpoint(&g, 0, i64::MAX);
            assert_eq!(fast, slow);
        }
    }

    #[test]
    fn bfs_matches_dijkstra_with_unit_weights() {
        let mut rng = Rng::new(8);
        for _ in 0..10 {
            let mut g = random_store(&mut rng, 40, 120);
            let unit = g
                .edges()
                .iter()
                .map(|e| (e.src, e.dst, 1i64))
                .collect::<Vec<_>>();
            g = store(40, &unit);
            assert_eq!(bfs_levels(&g, 0, i64::MAX), dijkstra(&g, 0, i64::MAX));
        }
    }

    #[test]
    fn components_take_the_smallest_member_label() {
        let g = store(4, &[(0, 1, 1), (1, 0, 1), (2, 3, 1), (3, 2, 1)]);
        assert_eq!(min_label_components(&g), vec![0, 0, 2, 2]);
    }

    #[test]
    fn isolated_points_label_themselves() {
        let g = store(3, &[]);
        assert_eq!(min_label_components(&g), vec![0, 1, 2]);
    }

    #[test]
    fn forest_weight_on_a_triangle() {
        // Undirected triangle written as both arcs per edge.
        let g = store(
            3,
            &[(0, 1, 5), (1, 0, 5), (0, 2, 3), (2, 0, 3), (2, 1, 1), (1, 2, 1)],
        );
        assert_eq!(spanning_forest_weight(&g), 4);
    }

    #[test]
    fn forest_weight_spans_each_component_separately() {
        let g = store(5, &[(0, 1, 2), (1, 0, 2), (2, 3, 7), (3, 2, 7), (3, 4, 1), (4, 3, 1)]);
        assert_eq!(spanning_forest_weight(&g), 10);
    }
}
