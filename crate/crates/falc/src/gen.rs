//! Graph files and synthetic graph generation.
//!
//! File format, one record per line:
//!
//! ```text
//! p <points> <edges>
//! <src> <dst> <weight>
//! ```
//!
//! Blank lines and lines starting with `#` are skipped. The weight may
//! be omitted and defaults to 1.

use crate::graph::EdgeRec;
use crate::rng::Rng;
use std::fmt::Write as _;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GraphFileError {
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("{path}:{line}: {message}")]
    Format { path: String, line: usize, message: String },
}

pub fn read_graph(path: &Path) -> Result<(usize, Vec<EdgeRec>), GraphFileError> {
    let text = std::fs::read_to_string(path)?;
    let bad = |line: usize, message: String| GraphFileError::Format {
        path: path.display().to_string(),
        line,
        message,
    };
    let mut header: Option<(usize, usize)> = None;
    let mut edges = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let s = raw.trim();
        if s.is_empty() || s.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = s.split_whitespace().collect();
        if header.is_none() {
            if fields.len() != 3 || fields[0] != "p" {
                return Err(bad(line, "expected header: p <points> <edges>".into()));
            }
            let n = fields[1]
                .parse::<usize>()
                .map_err(|_| bad(line, format!("bad point count {}", fields[1])))?;
            let m = fields[2]
                .parse::<usize>()
                .map_err(|_| bad(line, format!("bad edge count {}", fields[2])))?;
            header = Some((n, m));
            edges.reserve(m);
            continue;
        }
        if fields.len() != 2 && fields.len() != 3 {
            return Err(bad(line, format!("expected src dst [weight], got {s:?}")));
        }
        let src = fields[0]
            .parse::<u32>()
            .map_err(|_| bad(line, format!("bad source {}", fields[0])))?;
        let dst = fields[1]
            .parse::<u32>()
            .map_err(|_| bad(line, format!("bad destination {}", fields[1])))?;
        let weight = match fields.get(2) {
            Some(w) => w
                .parse::<i64>()
                .map_err(|_| bad(line, format!("bad weight {w}")))?,
            None => 1,
        };
        edges.push(EdgeRec { src, dst, weight });
    }
    let (n, m) = header.ok_or_else(|| bad(1, "empty graph file".into()))?;
    if edges.len() != m {
        return Err(bad(
            text.lines().count(),
            format!("header promises {m} edges, file has {}", edges.len()),
        ));
    }
    Ok((n, edges))
}

pub fn write_graph(path: &Path, n: usize, edges: &[EdgeRec]) -> Result<(), GraphFileError> {
    let mut out = String::with_capacity(edges.len() * 12 + 32);
    let _ = writeln!(out, "p {} {}", n, edges.len());
    for e in edges {
        let _ = writeln!(out, "{} {} {}", e.src, e.dst, e.weight);
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Uniform random multigraph: `m` arcs with independently chosen
/// endpoints, self loops rejected, parallel edges allowed. With
/// `symmetric` every arc also appears reversed with the same weight,
/// doubling the edge count.
pub fn gen_er(
    n: usize,
    m: usize,
    seed: u64,
    symmetric: bool,
    wmin: i64,
    wmax: i64,
) -> Vec<EdgeRec> {
    assert!(n >= 2, "need at least two points");
    let mut rng = Rng::new(seed);
    let mut edges = Vec::with_capacity(if symmetric { 2 * m } else { m });
    for _ in 0..m {
        let src = rng.below(n as u64) as u32;
        let dst = loop {
            let d = rng.below(n as u64) as u32;
            if d != src {
                break d;
            }
        };
        let weight = rng.range(wmin, wmax);
        edges.push(EdgeRec { src, dst, weight });
        if symmetric {
            edges.push(EdgeRec { src: dst, dst: src, weight });
        }
    }
    edges
}

/// Recursive-matrix graph with a power-law degree profile. `n` is
/// rounded up to a power of two; each arc picks a quadrant per level
/// with probabilities (a, b, c, d).
pub fn gen_rmat(
    n: usize,
    m: usize,
    seed: u64,
    symmetric: bool,
    probs: (f64, f64, f64, f64),
    wmin: i64,
    wmax: i64,
) -> (usize, Vec<EdgeRec>) {
    let n = n.max(2).next_power_of_two();
    let levels = n.trailing_zeros();
    let (a, b, c, _) = probs;
    let mut rng = Rng::new(seed);
    let mut edges = Vec::with_capacity(if symmetric { 2 * m } else { m });
    for _ in 0..m {
        let (src, dst) = loop {
            let (mut src, mut dst) = (0usize, 0usize);
            for _ in 0..levels {
                let r = rng.unit();
                let (sbit, dbit) = if r < a {
                    (0, 0)
                } else if r < a + b {
                    (0, 1)
                } else if r < a + b + c {
                    (1, 0)
                } else {
                    (1, 1)
                };
                src = (src << 1) | sbit;
                dst = (dst << 1) | dbit;
            }
            if src != dst {
                break (src, dst);
            }
        };
        let weight = rng.range(wmin, wmax);
        edges.push(EdgeRec { src: src as u32, dst: dst as u32, weight });
        if symmetric {
            edges.push(EdgeRec { src: dst as u32, dst: src as u32, weight });
        }
    }
    (n, edges)
}

pub const RMAT_DEFAULT_PROBS: (f64, f64, f64, f64) = (0.57, 0.19, 0.19, 0.05);

/// Collapse parallel edges, keeping the lightest weight per ordered
/// pair. The result is sorted by (src, dst).
pub fn dedup_min_weight(edges: &[EdgeRec]) -> Vec<EdgeRec> {
    let mut sorted: Vec<EdgeRec> = edges.to_vec();
    sorted.sort_by_key(|e| (e.src, e.dst, e.weight));
    sorted.dedup_by_key(|e| (e.src, e.dst));
    sorted
}

#[derive(Debug)]
pub struct GraphStats {
    pub points: usize,
    pub edges: usize,
    pub min_degree: usize,
    pub max_degree: usize,
    pub avg_degree: f64,
    pub isolated: usize,
}

pub fn stats(n: usize, edges: &[EdgeRec]) -> GraphStats {
    let mut deg = vec![0usize; n];
    for e in edges {
        deg[e.src as usize] += 1;
    }
    GraphStats {
        points: n,
        edges: edges.len(),
        min_degree: deg.iter().copied().min().unwrap_or(0),
        max_degree: deg.iter().copied().max().unwrap_or(0),
        avg_degree: if n == 0 { 0.0 } else { edges.len() as f64 / n as f64 },
        isolated: deg.iter().filter(|&&d| d == 0).count(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn write_then_read_roundtrips() {
        let dir = std::env::temp_dir().join("falc-gen-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("roundtrip.txt");
        let edges = vec![
            EdgeRec { src: 0, dst: 1, weight: 5 },
            EdgeRec { src: 1, dst: 2, weight: 3 },
        ];
        write_graph(&path, 3, &edges).unwrap();
        let (n, got) = read_graph(&path).unwrap();
        assert_eq!(n, 3);
        assert_eq!(got, edges);
    }

    #[test]
    fn read_reports_line_numbers() {
        let dir = std::env::temp_dir().join("falc-gen-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("bad.txt");
        std::fs::write(&path, "p 3 1\n0 x 1\n").unwrap();
        let err = read_graph(&path).unwrap_err();
        assert!(err.to_string().contains(":2:"), "{err}");

        std::fs::write(&path, "p 3 2\n0 1 1\n").unwrap();
        let err = read_graph(&path).unwrap_err();
        assert!(err.to_string().contains("promises 2"), "{err}");
    }

    #[test]
    fn er_is_deterministic_and_loop_free() {
        let a = gen_er(100, 500, 42, false, 1, 100);
        let b = gen_er(100, 500, 42, false, 1, 100);
        assert_eq!(a, b);
        assert_eq!(a.len(), 500);
        assert!(a.iter().all(|e| e.src != e.dst));
        assert!(a.iter().all(|e| (1..=100).contains(&e.weight)));
        let c = gen_er(100, 500, 43, false, 1, 100);
        assert_ne!(a, c);
    }

    #[test]
    fn symmetric_er_mirrors_every_arc() {
        let edges = gen_er(50, 200, 7, true, 1, 10);
        assert_eq!(edges.len(), 400);
        for pair in edges.chunks(2) {
            assert_eq!(pair[0].src, pair[1].dst);
            assert_eq!(pair[0].dst, pair[1].src);
            assert_eq!(pair[0].weight, pair[1].weight);
        }
    }

    #[test]
    fn rmat_is_skewed() {
        let (n, edges) = gen_rmat(1 << 12, 4 << 12, 42, false, RMAT_DEFAULT_PROBS, 1, 100);
        assert_eq!(n, 1 << 12);
        let s = stats(n, &edges);
        // A power-law profile concentrates edges: the busiest point
        // collects far more than the average degree of 4.
        assert!(
            s.max_degree as f64 > 20.0 * s.avg_degree,
            "max {} avg {}",
            s.max_degree,
            s.avg_degree
        );
    }

    #[test]
    fn dedup_keeps_lightest_parallel_edge() {
        let edges = vec![
            EdgeRec { src: 0, dst: 1, weight: 9 },
            EdgeRec { src: 0, dst: 1, weight: 2 },
            EdgeRec { src: 1, dst: 0, weight: 4 },
        ];
        let d = dedup_min_weight(&edges);
        assert_eq!(
            d,
            vec![
                EdgeRec { src: 0, dst: 1, weight: 2 },
                EdgeRec { src: 1, dst: 0, weight: 4 },
            ]
        );
    }
}
